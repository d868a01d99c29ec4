//! Repeated random-split evaluation of a frozen encoder with a ridge probe.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, plcc, srcc};
use super::ridge::ridge_fit;
use super::{mean_prediction, scored_features, CropPolicy, FeatureCache};
use crate::data::ScoredRecord;
use crate::error::{Error, Result};
use crate::forge::resample::CropPosition;
use crate::net::Model;
use crate::scalar::Scalar;
use crate::seed;

/// Unit of the train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Every image of one scene lands on the same side.
    #[default]
    Content,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iterations: usize,
    pub train_frac: f64,
    pub alpha: f64,
    pub split: SplitMode,
    pub per_scale: bool,
    pub crops: CropPolicy,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            train_frac: 0.8,
            alpha: 1.0,
            split: SplitMode::Content,
            per_scale: false,
            crops: CropPolicy::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::InvalidArgument(format!("train_frac must be in (0, 1), got {}", self.train_frac)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.crops.crop_size == 0 {
            return Err(Error::InvalidArgument("crop_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub iteration: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    /// Why no correlation could be computed, if so.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub plcc_mean: Option<f64>,
    pub plcc_std: Option<f64>,
    pub srcc_mean: Option<f64>,
    pub srcc_std: Option<f64>,
    /// Iterations that produced correlations.
    pub scored_iterations: usize,
}

impl Aggregate {
    fn of(rows: &[IterationResult]) -> Self {
        let p: Vec<f64> = rows.iter().filter_map(|r| r.plcc).collect();
        let s: Vec<f64> = rows.iter().filter_map(|r| r.srcc).collect();
        let some = |v: f64| v.is_finite().then_some(v);
        let (pm, ps) = mean_std(&p);
        let (sm, ss) = mean_std(&s);
        Self {
            plcc_mean: some(pm),
            plcc_std: some(ps),
            srcc_mean: some(sm),
            srcc_std: some(ss),
            scored_iterations: p.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scale: f64,
    pub iterations: Vec<IterationResult>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub n_images: usize,
    pub iterations: Vec<IterationResult>,
    pub aggregate: Aggregate,
    #[serde(default)]
    pub per_scale: Vec<ScaleReport>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("not an evaluation report: {e}")))
    }

    /// Plain-text summary table.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let a = &self.aggregate;
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8} {:>6}", "subset", "PLCC", "+-", "SRCC", "+-", "iters");
        let mut row = |name: &str, a: &Aggregate| {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>8} {:>8} {:>8} {:>6}",
                name,
                fmt_opt(a.plcc_mean),
                fmt_opt(a.plcc_std),
                fmt_opt(a.srcc_mean),
                fmt_opt(a.srcc_std),
                a.scored_iterations
            );
        };
        row("all", a);
        for s in &self.per_scale {
            row(&format!("x{}", s.scale), &s.aggregate);
        }
        out
    }
}

fn split(items: &[ScoredRecord], cfg: &EvalConfig, iter_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let unit = |it: &ScoredRecord| match cfg.split {
        SplitMode::Content => it.record.content_id.clone(),
        SplitMode::Image => it.record.path.clone(),
    };
    let mut groups: Vec<String> = items.iter().map(unit).collect::<BTreeSet<_>>().into_iter().collect();
    if groups.len() < 2 {
        return Err(Error::Data(format!("need at least two split groups, found {}", groups.len())));
    }
    groups.shuffle(&mut seed::rng(iter_seed));
    let n_train = ((cfg.train_frac * groups.len() as f64).round() as usize).clamp(1, groups.len() - 1);
    let train: BTreeSet<&String> = groups[..n_train].iter().collect();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, it) in items.iter().enumerate() {
        if train.contains(&unit(it)) {
            tr.push(i);
        } else {
            te.push(i);
        }
    }
    Ok((tr, te))
}

fn correlate(iteration: usize, seed: u64, n_train: usize, pred: &[f64], truth: &[f64]) -> IterationResult {
    let mut r = IterationResult {
        iteration,
        seed,
        n_train,
        n_test: pred.len(),
        plcc: None,
        srcc: None,
        skipped: None,
    };
    match (plcc(pred, truth), srcc(pred, truth)) {
        (Ok(p), Ok(s)) => {
            r.plcc = Some(p);
            r.srcc = Some(s);
        }
        (Err(e), _) | (_, Err(e)) => {
            log::warn!("iteration {iteration}: correlation skipped ({e})");
            r.skipped = Some(e.to_string());
        }
    }
    r
}

/// Protocol on precomputed features. `features[i]` holds the rows of
/// image `i`: the five fixed crops first, then any extra training crops.
pub fn evaluate_features(features: &[Vec<Vec<f64>>], items: &[ScoredRecord], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if features.len() != items.len() {
        return Err(Error::Shape(format!("{} feature sets for {} images", features.len(), items.len())));
    }
    let n_fixed = CropPosition::FIVE.len();
    if features.iter().any(|f| f.len() < n_fixed) {
        return Err(Error::Shape("every image needs at least the five fixed crops".into()));
    }
    let scales: Vec<f64> = {
        let set: BTreeSet<u64> = items.iter().map(|i| i.record.scale.to_bits()).collect();
        let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let per_iter = (0..cfg.iterations)
        .into_par_iter()
        .map(|it| {
            let iter_seed = seed::derive(cfg.seed, &["eval-split", &it.to_string()]);
            let (train, test) = split(items, cfg, iter_seed)?;
            let mut x = Vec::new();
            let mut y = Vec::new();
            for &i in &train {
                for row in &features[i] {
                    x.push(row.clone());
                    y.push(items[i].quality);
                }
            }
            let ridge = ridge_fit(&x, &y, cfg.alpha)?;
            let pred = test
                .iter()
                .map(|&i| mean_prediction(&ridge, &features[i][..n_fixed]))
                .collect::<Result<Vec<f64>>>()?;
            let truth: Vec<f64> = test.iter().map(|&i| items[i].quality).collect();
            let overall = correlate(it, iter_seed, train.len(), &pred, &truth);
            let by_scale: Vec<IterationResult> = if cfg.per_scale {
                scales
                    .iter()
                    .map(|&s| {
                        let keep: Vec<usize> = (0..test.len()).filter(|&k| items[test[k]].record.scale == s).collect();
                        let p: Vec<f64> = keep.iter().map(|&k| pred[k]).collect();
                        let t: Vec<f64> = keep.iter().map(|&k| truth[k]).collect();
                        correlate(it, iter_seed, train.len(), &p, &t)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok((overall, by_scale))
        })
        .collect::<Result<Vec<_>>>()?;
    let iterations: Vec<IterationResult> = per_iter.iter().map(|(o, _)| o.clone()).collect();
    let per_scale = if cfg.per_scale {
        scales
            .iter()
            .enumerate()
            .map(|(k, &scale)| {
                let rows: Vec<IterationResult> = per_iter.iter().map(|(_, s)| s[k].clone()).collect();
                ScaleReport {
                    scale,
                    aggregate: Aggregate::of(&rows),
                    iterations: rows,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        config: cfg.clone(),
        n_images: items.len(),
        aggregate: Aggregate::of(&iterations),
        iterations,
        per_scale,
    })
}

/// Extract features with the frozen encoder, then run the protocol.
pub fn eval_protocol<S: Scalar>(
    items: &[ScoredRecord],
    base: &Path,
    model: &Model<S>,
    cfg: &EvalConfig,
    cache: Option<&FeatureCache>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let feats = scored_features(items, base, model, &cfg.crops, cache)?;
    evaluate_features(&feats, items, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageRecord, Role};

    fn items(n_content: usize, per: usize) -> Vec<ScoredRecord> {
        let mut out = Vec::new();
        for c in 0..n_content {
            for m in 0..per {
                out.push(ScoredRecord {
                    record: ImageRecord {
                        path: format!("c{c}_m{m}.png"),
                        content_id: format!("c{c}"),
                        method_id: format!("m{m}"),
                        scale: if m % 2 == 0 { 2.0 } else { 4.0 },
                        role: Role::Sr,
                        height: 8,
                        width: 8,
                        channels: 3,
                    },
                    quality: 0.0,
                });
            }
        }
        out
    }

    fn linear_features(items: &mut [ScoredRecord]) -> Vec<Vec<Vec<f64>>> {
        items
            .iter_mut()
            .enumerate()
            .map(|(i, it)| {
                let f = vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos(), i as f64 / 10.0];
                it.quality = 1.0 + 2.0 * f[0] - f[1] + 0.5 * f[2];
                vec![f; 5]
            })
            .collect()
    }

    #[test]
    fn realizable_target_is_perfect() {
        let mut it = items(10, 4);
        let f = linear_features(&mut it);
        let cfg = EvalConfig {
            alpha: 0.0,
            per_scale: true,
            ..EvalConfig::default()
        };
        let r = evaluate_features(&f, &it, &cfg).unwrap();
        assert_eq!(r.iterations.len(), 20);
        for row in &r.iterations {
            assert!((row.plcc.unwrap() - 1.0).abs() < 1e-9);
            assert!((row.srcc.unwrap() - 1.0).abs() < 1e-9);
        }
        assert_eq!(r.per_scale.len(), 2);
        assert_eq!(evaluate_features(&f, &it, &cfg).unwrap(), r);
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.summary_table().contains("x4"));
    }

    #[test]
    fn content_groups_never_straddle() {
        let it = items(7, 3);
        let cfg = EvalConfig::default();
        for k in 0..20 {
            let (tr, te) = split(&it, &cfg, k).unwrap();
            assert_eq!(tr.len() + te.len(), it.len());
            let a: BTreeSet<_> = tr.iter().map(|&i| &it[i].record.content_id).collect();
            assert!(te.iter().all(|&i| !a.contains(&it[i].record.content_id)));
        }
    }

    #[test]
    fn degenerate_test_sets_are_skipped() {
        let mut it = items(3, 1);
        it.iter_mut().for_each(|r| r.quality = 1.0);
        let f = vec![vec![vec![0.5]; 5]; 3];
        let r = evaluate_features(&f, &it, &EvalConfig { iterations: 3, ..EvalConfig::default() }).unwrap();
        assert!(r.iterations.iter().all(|x| x.skipped.is_some()));
        assert_eq!(r.aggregate.scored_iterations, 0);
        assert!(evaluate_features(&f, &it, &EvalConfig { iterations: 0, ..EvalConfig::default() }).is_err());
    }
}
