//! NT-Xent contrastive loss, L1 scale loss and their sum, each with an
//! analytic gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How per-anchor contrastive terms are combined for the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum over every item of the batch.
    #[default]
    Sum,
    /// Sum divided by the batch size.
    Mean,
}

fn norm<S: Scalar>(v: &[S]) -> S {
    v.iter().map(|&x| x * x).sum::<S>().sqrt()
}

pub fn cosine_sim<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == S::zero() || nb == S::zero() {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    let dot = a.iter().zip(b).map(|(&x, &y)| x * y).sum::<S>();
    Ok((dot / (na * nb)).max(-S::one()).min(S::one()))
}

/// `pair_index` must be an involution without fixed points over `0..n`.
pub fn check_pair_index(pair_index: &[usize], n: usize) -> Result<()> {
    if pair_index.len() != n {
        return Err(Error::InvalidArgument(format!(
            "pair index has {} entries for {n} items",
            pair_index.len()
        )));
    }
    for (i, &p) in pair_index.iter().enumerate() {
        if p >= n || p == i || pair_index[p] != i {
            return Err(Error::InvalidArgument(format!(
                "pair index is not a fixed-point-free involution at item {i}"
            )));
        }
    }
    Ok(())
}

/// NT-Xent value with per-anchor terms and the gradient of the reduced
/// loss with respect to each projected vector.
#[derive(Debug, Clone)]
pub struct NtXent<S> {
    /// Strict sum over all anchors.
    pub sum: S,
    /// The reduced loss the gradient belongs to.
    pub value: S,
    pub per_anchor: Vec<S>,
    pub grad: Vec<Vec<S>>,
}

fn normalized<S: Scalar>(z: &[Vec<S>]) -> Result<(Vec<Vec<S>>, Vec<S>)> {
    let mut units = Vec::with_capacity(z.len());
    let mut norms = Vec::with_capacity(z.len());
    for v in z {
        let n = norm(v);
        if n == S::zero() || !n.is_finite() {
            return Err(Error::Numeric("projected vector is zero or non-finite".into()));
        }
        units.push(v.iter().map(|&x| x / n).collect());
        norms.push(n);
    }
    Ok((units, norms))
}

pub fn nt_xent_with_grad<S: Scalar>(
    z: &[Vec<S>],
    pair_index: &[usize],
    tau: S,
    reduction: Reduction,
) -> Result<NtXent<S>> {
    if !(tau > S::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    let n = z.len();
    if n < 2 {
        return Err(Error::InvalidArgument("NT-Xent needs at least 2 items".into()));
    }
    check_pair_index(pair_index, n)?;
    let d = z[0].len();
    if z.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("projected vectors differ in length".into()));
    }
    let (u, norms) = normalized(z)?;
    let mut sim = vec![S::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let s = u[i].iter().zip(&u[j]).map(|(&a, &b)| a * b).sum::<S>();
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let weight = match reduction {
        Reduction::Sum => S::one(),
        Reduction::Mean => S::one() / S::from_usize_lossy(n),
    };
    let inv_tau = S::one() / tau;
    let mut per_anchor = Vec::with_capacity(n);
    let mut du = vec![vec![S::zero(); d]; n];
    let mut probs = vec![S::zero(); n];
    for a in 0..n {
        let row = &sim[a * n..(a + 1) * n];
        let max = (0..n)
            .filter(|&m| m != a)
            .map(|m| row[m] * inv_tau)
            .fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for m in 0..n {
            probs[m] = if m == a {
                S::zero()
            } else {
                (row[m] * inv_tau - max).exp()
            };
            total += probs[m];
        }
        let p = pair_index[a];
        per_anchor.push(max + total.ln() - row[p] * inv_tau);
        for m in 0..n {
            if m == a {
                continue;
            }
            let mut g = probs[m] / total;
            if m == p {
                g -= S::one();
            }
            let g = g * inv_tau * weight;
            for k in 0..d {
                let (ua, um) = (u[a][k], u[m][k]);
                du[a][k] += g * um;
                du[m][k] += g * ua;
            }
        }
    }
    let grad = du
        .iter()
        .zip(&u)
        .zip(&norms)
        .map(|((g, ui), &nz)| {
            let proj = g.iter().zip(ui).map(|(&a, &b)| a * b).sum::<S>();
            g.iter().zip(ui).map(|(&gk, &uk)| (gk - uk * proj) / nz).collect()
        })
        .collect();
    let sum = per_anchor.iter().copied().sum::<S>();
    if !sum.is_finite() {
        return Err(Error::Numeric(format!("non-finite contrastive loss {sum}")));
    }
    let value = match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / S::from_usize_lossy(per_anchor.len()),
    };
    Ok(NtXent {
        sum,
        value,
        per_anchor,
        grad,
    })
}

/// Strict-sum NT-Xent: for each item, `-log` of the softmax weight its
/// partner receives among all other items, summed over items. The
/// denominator includes the partner.
pub fn nt_xent<S: Scalar>(z: &[Vec<S>], pair_index: &[usize], tau: S) -> Result<S> {
    Ok(nt_xent_with_grad(z, pair_index, tau, Reduction::Sum)?.sum)
}

fn check_scale_lengths<S>(predicted: &[S], target: &[S]) -> Result<()> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(Error::Shape(format!(
            "scale predictions ({}) and targets ({}) must be equal and non-empty",
            predicted.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean absolute error between predicted and true scales.
pub fn aux_l1<S: Scalar>(predicted: &[S], target: &[S]) -> Result<S> {
    check_scale_lengths(predicted, target)?;
    let n = S::from_usize_lossy(predicted.len());
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t).abs())
        .sum::<S>()
        / n)
}

/// Subgradient `sign(p - t) / n` (zero at exact predictions).
pub fn aux_l1_grad<S: Scalar>(predicted: &[S], target: &[S]) -> Result<Vec<S>> {
    check_scale_lengths(predicted, target)?;
    let n = S::from_usize_lossy(predicted.len());
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p > t {
                S::one() / n
            } else if p < t {
                -S::one() / n
            } else {
                S::zero()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<S> {
    pub contrastive: S,
    pub auxiliary: S,
    pub total: S,
    pub per_anchor: Vec<S>,
    pub per_item_abs_error: Vec<S>,
}

pub fn total_loss<S: Scalar>(
    z: &[Vec<S>],
    pair_index: &[usize],
    tau: S,
    predicted_scales: &[S],
    target_scales: &[S],
) -> Result<LossBreakdown<S>> {
    let contr = nt_xent_with_grad(z, pair_index, tau, Reduction::Sum)?;
    let auxiliary = aux_l1(predicted_scales, target_scales)?;
    Ok(LossBreakdown {
        contrastive: contr.sum,
        auxiliary,
        total: contr.sum + auxiliary,
        per_anchor: contr.per_anchor,
        per_item_abs_error: predicted_scales
            .iter()
            .zip(target_scales)
            .map(|(&p, &t)| (p - t).abs())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::adjacent_pairs;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0f64);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8f64).abs() < 1e-15);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0f64, 0.0]).is_err());
    }

    #[test]
    fn single_pair_is_zero() {
        let z = vec![vec![0.3, -1.0, 2.0], vec![5.0, 0.1, -0.2]];
        assert_eq!(nt_xent(&z, &[1, 0], 0.1f64).unwrap(), 0.0);
    }

    #[test]
    fn four_item_hand_value() {
        let z = vec![
            vec![1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let out = nt_xent_with_grad(&z, &[1, 0, 3, 2], 0.1f64, Reduction::Sum).unwrap();
        let anchor0 = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((out.per_anchor[0] - anchor0).abs() < 1e-15);
        assert!((anchor0 - 9.0799e-5).abs() < 1e-8);
        // items 2,3: partner sim 0, negatives sims {0, 0} -> log 3
        assert!((out.per_anchor[2] - 3.0f64.ln()).abs() < 1e-12);
        let expect = 2.0 * anchor0 + 2.0 * 3.0f64.ln();
        assert!((out.sum - expect).abs() < 1e-12);
    }

    #[test]
    fn invalid_arguments() {
        let z = vec![vec![1.0f64, 0.0]; 4];
        assert!(nt_xent(&z, &[1, 0, 3, 2], 0.0).is_err());
        assert!(nt_xent(&z, &[1, 0, 2, 3], 0.1).is_err());
        assert!(nt_xent(&z, &[1, 2, 3, 0], 0.1).is_err());
        assert!(aux_l1(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aux_examples() {
        assert_eq!(aux_l1(&[2.0f64, 3.0], &[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(aux_l1(&[2.5f64, 3.0], &[2.0, 4.0]).unwrap(), 0.75);
        assert_eq!(aux_l1(&[1.25f64], &[4.0]).unwrap(), 2.75);
    }

    #[test]
    fn total_is_exact_sum() {
        let z = vec![vec![0.2, 1.0], vec![1.0, -0.3], vec![-0.5, 0.5], vec![0.9, 0.1]];
        let pred = [2.1, 2.9, 4.4, 1.0];
        let tgt = [2.0, 3.0, 4.0, 2.0];
        let b = total_loss(&z, &adjacent_pairs(2), 0.1f64, &pred, &tgt).unwrap();
        let c = nt_xent(&z, &adjacent_pairs(2), 0.1).unwrap();
        let a = aux_l1(&pred, &tgt).unwrap();
        assert_eq!(b.total.to_bits(), (c + a).to_bits());
        let zero = total_loss(&z[..2], &[1, 0], 0.1, &[2.0, 3.0], &[2.0, 3.0]).unwrap();
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let z = vec![
            vec![0.2, 1.0, -0.4],
            vec![1.0, -0.3, 0.2],
            vec![-0.5, 0.5, 0.9],
            vec![0.9, 0.1, -0.7],
            vec![0.3, 0.3, 0.3],
            vec![-1.2, 0.4, 0.0],
        ];
        let pairs = adjacent_pairs(3);
        for red in [Reduction::Sum, Reduction::Mean] {
            let g = nt_xent_with_grad(&z, &pairs, 0.3f64, red).unwrap().grad;
            let f = |zz: &[Vec<f64>]| {
                let s = nt_xent(zz, &pairs, 0.3).unwrap();
                if red == Reduction::Mean { s / 6.0 } else { s }
            };
            for i in 0..z.len() {
                for k in 0..3 {
                    let eps = 1e-6;
                    let mut p = z.clone();
                    p[i][k] += eps;
                    let mut m = z.clone();
                    m[i][k] -= eps;
                    let fd = (f(&p) - f(&m)) / (2.0 * eps);
                    assert!((fd - g[i][k]).abs() < 1e-7, "{red:?} {i} {k}: {fd} vs {}", g[i][k]);
                }
            }
        }
    }

    fn batch_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, f64)> {
        (1usize..6, 2usize..5).prop_flat_map(|(pairs, d)| {
            (
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), 2 * pairs),
                0.05f64..1.0,
            )
        })
    }

    proptest! {
        #[test]
        fn invariant_to_positive_rescaling((z, tau) in batch_strategy(), c in 0.01f64..50.0, which in 0usize..12) {
            prop_assume!(z.iter().all(|v| norm(v) > 1e-3));
            let pairs = adjacent_pairs(z.len() / 2);
            let base = nt_xent(&z, &pairs, tau).unwrap();
            let mut scaled = z.clone();
            let i = which % z.len();
            scaled[i] = scaled[i].iter().map(|v| v * c).collect();
            prop_assert!((nt_xent(&scaled, &pairs, tau).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn invariant_to_batch_permutation((z, tau) in batch_strategy(), seed in any::<u64>()) {
            prop_assume!(z.iter().all(|v| norm(v) > 1e-3));
            use rand::seq::SliceRandom;
            let pairs = adjacent_pairs(z.len() / 2);
            let mut perm: Vec<usize> = (0..z.len()).collect();
            perm.shuffle(&mut crate::seed::rng(seed));
            // new position of old item i is pos[i]
            let mut pos = vec![0; z.len()];
            for (new, &old) in perm.iter().enumerate() { pos[old] = new; }
            let zp: Vec<Vec<f64>> = perm.iter().map(|&o| z[o].clone()).collect();
            let pp: Vec<usize> = perm.iter().map(|&o| pos[pairs[o]]).collect();
            let a = nt_xent(&z, &pairs, tau).unwrap();
            let b = nt_xent(&zp, &pp, tau).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn anchor_term_decreases_with_positive_similarity(t1 in 0.0f64..1.4, dt in 0.01f64..0.15, tau in 0.05f64..1.0) {
            // Anchor on the x-axis; negatives fixed on y and z axes; partner rotates toward the anchor.
            let t2 = t1 + dt;
            let z = |t: f64| vec![vec![1.0, 0.0, 0.0], vec![t.cos(), 0.0, t.sin()], vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]];
            let far = nt_xent_with_grad(&z(t2), &[1, 0, 3, 2], tau, Reduction::Sum).unwrap().per_anchor[0];
            let near = nt_xent_with_grad(&z(t1), &[1, 0, 3, 2], tau, Reduction::Sum).unwrap().per_anchor[0];
            prop_assert!(near < far);
        }

        #[test]
        fn aux_l1_is_symmetric_and_nonnegative(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10)) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let a = aux_l1(&p, &t).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, aux_l1(&t, &p).unwrap());
        }
    }
}
