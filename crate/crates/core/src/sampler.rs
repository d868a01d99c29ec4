//! Pretext mini-batches built from the same-method, same-scale,
//! different-content relation. Every non-partner item in a batch acts as a
//! negative; batches may hold several pairs of one method.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_view, view_plan, AugmentConfig};
use crate::data::{ImageRecord, Manifest, Role, SplitTag};
use crate::error::{Error, Result};
use crate::forge::resample::{crop, CropSpec};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Let SR and DS records of one `(method, scale)` pair with each other.
    pub mix_roles: bool,
    /// Give the positive the same colour-space/flip draw as its anchor.
    pub tied_views: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mix_roles: false,
            tied_views: false,
        }
    }
}

/// Positive-pair equivalence class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub method_id: String,
    scale_bits: u64,
    /// `None` when roles are mixed.
    pub role: Option<Role>,
}

impl GroupKey {
    fn of(r: &ImageRecord, mix_roles: bool) -> Self {
        Self {
            method_id: r.method_id.clone(),
            scale_bits: r.scale.to_bits(),
            role: if mix_roles { None } else { Some(r.role) },
        }
    }

    pub fn scale(&self) -> f64 {
        f64::from_bits(self.scale_bits)
    }

    fn starvation(&self) -> Error {
        Error::SamplerStarvation {
            method_id: self.method_id.clone(),
            scale: self.scale(),
            role: self.role.map_or("SR|DS".into(), |r| r.to_string()),
        }
    }
}

fn eligible(r: &ImageRecord, split: SplitTag) -> bool {
    r.role.is_degraded() && matches!(split, SplitTag::Pretext | SplitTag::Unassigned)
}

/// Uniformly drawn record sharing `(method_id, scale)` with `anchor` (and its
/// role unless `mix_roles`) but showing different content.
pub fn sample_positive(
    anchor: &ImageRecord,
    manifest: &Manifest,
    seed: u64,
    mix_roles: bool,
) -> Result<ImageRecord> {
    let key = GroupKey::of(anchor, mix_roles);
    let candidates: Vec<&ImageRecord> = manifest
        .entries()
        .iter()
        .filter(|e| eligible(&e.record, e.split))
        .map(|e| &e.record)
        .filter(|r| GroupKey::of(r, mix_roles) == key && r.content_id != anchor.content_id)
        .collect();
    let mut rng = seed::rng(seed);
    candidates
        .choose(&mut rng)
        .map(|r| (*r).clone())
        .ok_or_else(|| key.starvation())
}

/// Eligible pretext records grouped for fast partner lookup.
#[derive(Debug, Clone)]
pub struct PretextIndex {
    records: Vec<ImageRecord>,
    group_of: Vec<usize>,
    groups: Vec<(GroupKey, Vec<usize>)>,
    mix_roles: bool,
}

impl PretextIndex {
    pub fn new(manifest: &Manifest, mix_roles: bool) -> Self {
        let records: Vec<ImageRecord> = manifest
            .entries()
            .iter()
            .filter(|e| eligible(&e.record, e.split))
            .map(|e| e.record.clone())
            .collect();
        let mut by_key: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_key.entry(GroupKey::of(r, mix_roles)).or_default().push(i);
        }
        let groups: Vec<(GroupKey, Vec<usize>)> = by_key.into_iter().collect();
        let mut group_of = vec![0; records.len()];
        for (g, (_, members)) in groups.iter().enumerate() {
            for &m in members {
                group_of[m] = g;
            }
        }
        Self {
            records,
            group_of,
            groups,
            mix_roles,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn groups(&self) -> impl Iterator<Item = (&GroupKey, usize)> {
        self.groups.iter().map(|(k, m)| (k, m.len()))
    }

    /// Groups whose records cannot find a different-content partner.
    pub fn starved_groups(&self) -> Vec<GroupKey> {
        self.groups
            .iter()
            .filter(|(_, members)| {
                let first = &self.records[members[0]].content_id;
                members.iter().all(|&m| &self.records[m].content_id == first)
            })
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn partner(&self, anchor: usize, seed: u64) -> Result<usize> {
        let (key, members) = &self.groups[self.group_of[anchor]];
        let content = &self.records[anchor].content_id;
        let candidates: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&m| &self.records[m].content_id != content)
            .collect();
        let mut rng = seed::rng(seed);
        candidates
            .choose(&mut rng)
            .copied()
            .ok_or_else(|| key.starvation())
    }

    pub fn mix_roles(&self) -> bool {
        self.mix_roles
    }
}

/// Index pairs `(anchor, positive)` into a [`PretextIndex`].
pub type PairPlan = Vec<(usize, usize)>;

/// Draw `pairs` anchors without replacement and complete each one.
pub fn plan_pairs(index: &PretextIndex, pairs: usize, seed: u64) -> Result<PairPlan> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("pairs must be >= 1".into()));
    }
    if index.len() < pairs {
        return Err(Error::Data(format!(
            "{} eligible pretext records cannot supply {pairs} anchors",
            index.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, &["anchors"]));
    let anchors = rand::seq::index::sample(&mut rng, index.len(), pairs).into_vec();
    complete_pairs(index, &anchors, seed)
}

fn complete_pairs(index: &PretextIndex, anchors: &[usize], seed: u64) -> Result<PairPlan> {
    anchors
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let p = index.partner(a, seed::derive(seed, &["partner", &i.to_string()]))?;
            Ok((a, p))
        })
        .collect()
}

/// Labels carried by every batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemLabel {
    pub method_id: String,
    pub scale: f64,
    pub content_id: String,
    pub role: Role,
}

impl From<&ImageRecord> for ItemLabel {
    fn from(r: &ImageRecord) -> Self {
        Self {
            method_id: r.method_id.clone(),
            scale: r.scale,
            content_id: r.content_id.clone(),
            role: r.role,
        }
    }
}

/// `2P` views where items `2i` and `2i+1` form the i-th positive pair.
#[derive(Debug, Clone)]
pub struct PairBatch<S> {
    pub items: Vec<Image<S>>,
    pub pair_index: Vec<usize>,
    pub labels: Vec<ItemLabel>,
}

impl<S> PairBatch<S> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.scale).collect()
    }

    /// Compact description for diagnostics.
    pub fn describe(&self) -> String {
        self.labels
            .iter()
            .map(|l| format!("{}@x{}/{}/{}", l.method_id, l.scale, l.role, l.content_id))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Adjacent-pair involution `0<->1, 2<->3, ...`.
pub fn adjacent_pairs(n_pairs: usize) -> Vec<usize> {
    (0..2 * n_pairs).map(|i| i ^ 1).collect()
}

/// Pixel provider for sampled records.
pub trait ImageSource: Sync {
    fn load(&self, index: usize) -> Result<Arc<Image<f32>>>;
}

/// Every eligible image decoded once and kept in memory.
pub struct InMemoryImages {
    images: Vec<Arc<Image<f32>>>,
}

impl InMemoryImages {
    pub fn load(index: &PretextIndex, base: &Path) -> Result<Self> {
        let images = index
            .records()
            .par_iter()
            .map(|r| Image::<f32>::load(&r.resolve(base)).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images })
    }
}

impl ImageSource for InMemoryImages {
    fn load(&self, index: usize) -> Result<Arc<Image<f32>>> {
        Ok(self.images[index].clone())
    }
}

/// Lazily decoded images, for manifests too large to hold in memory.
pub struct DiskImages {
    paths: Vec<PathBuf>,
}

impl DiskImages {
    pub fn new(index: &PretextIndex, base: &Path) -> Self {
        Self {
            paths: index.records().iter().map(|r| r.resolve(base)).collect(),
        }
    }
}

impl ImageSource for DiskImages {
    fn load(&self, index: usize) -> Result<Arc<Image<f32>>> {
        Image::load(&self.paths[index]).map(Arc::new)
    }
}

#[derive(Debug, Clone)]
pub struct ViewSettings<'a> {
    pub crop_size: usize,
    pub augment: &'a AugmentConfig,
    pub tied_views: bool,
}

/// Random crop plus sampled view for every member of every pair.
pub fn materialize<S: Scalar>(
    index: &PretextIndex,
    source: &dyn ImageSource,
    plan: &PairPlan,
    settings: &ViewSettings<'_>,
    seed: u64,
) -> Result<PairBatch<S>> {
    let members: Vec<(usize, usize, usize)> = plan
        .iter()
        .enumerate()
        .flat_map(|(p, &(a, b))| [(2 * p, p, a), (2 * p + 1, p, b)])
        .collect();
    let items = members
        .par_iter()
        .map(|&(slot, pair, rec)| {
            let img = source.load(rec)?;
            let crop_seed = seed::derive(seed, &["crop", &slot.to_string()]);
            let patch = crop(&*img, &CropSpec::random(settings.crop_size, crop_seed))?;
            let view_key = if settings.tied_views {
                format!("pair{pair}")
            } else {
                format!("item{slot}")
            };
            let plan = view_plan(seed::derive(seed, &["view", &view_key]), settings.augment);
            Ok(apply_view(&patch, plan, settings.augment)?.cast::<S>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairBatch {
        items,
        pair_index: adjacent_pairs(plan.len()),
        labels: members
            .iter()
            .map(|&(_, _, r)| ItemLabel::from(&index.records()[r]))
            .collect(),
    })
}

/// One-shot batch: anchors drawn without replacement, partners completed,
/// crops and views applied.
pub fn assemble_batch<S: Scalar>(
    index: &PretextIndex,
    source: &dyn ImageSource,
    pairs: usize,
    settings: &ViewSettings<'_>,
    seed: u64,
) -> Result<PairBatch<S>> {
    let plan = plan_pairs(index, pairs, seed)?;
    materialize(index, source, &plan, settings, seed)
}

/// Per-epoch anchor schedule: each epoch is a seeded permutation of the
/// eligible records consumed `pairs` at a time, so no record anchors twice
/// within an epoch.
#[derive(Debug, Clone)]
pub struct EpochSchedule {
    len: usize,
    pairs: usize,
    seed: u64,
}

impl EpochSchedule {
    pub fn new(index: &PretextIndex, pairs: usize, seed: u64) -> Result<Self> {
        if pairs == 0 {
            return Err(Error::InvalidArgument("pairs must be >= 1".into()));
        }
        if index.is_empty() {
            return Err(Error::Data("no eligible pretext records".into()));
        }
        if let Some(k) = index.starved_groups().into_iter().next() {
            return Err(k.starvation());
        }
        Ok(Self {
            len: index.len(),
            pairs,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        (self.len / self.pairs).max(1)
    }

    fn order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut seed::rng_for(self.seed, &["epoch", &epoch.to_string()]));
        order
    }

    pub fn batch_seed(&self, epoch: usize, batch: usize) -> u64 {
        seed::derive(self.seed, &["batch", &epoch.to_string(), &batch.to_string()])
    }

    pub fn plan(&self, index: &PretextIndex, epoch: usize, batch: usize) -> Result<PairPlan> {
        let order = self.order(epoch);
        let start = (batch * self.pairs).min(order.len());
        let end = (start + self.pairs).min(order.len());
        complete_pairs(index, &order[start..end], self.batch_seed(epoch, batch))
    }
}

/// Count records per `(method, scale)` group for reporting.
pub fn group_sizes(index: &PretextIndex) -> HashMap<(String, u64), usize> {
    let mut out = HashMap::new();
    for r in index.records() {
        *out.entry((r.method_id.clone(), r.scale.to_bits())).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ManifestEntry, Metadata, NO_METHOD};

    fn rec(content: &str, method: &str, scale: f64, role: Role) -> ImageRecord {
        let (h, w) = if role == Role::Ds { (8, 8) } else { (16, 16) };
        ImageRecord {
            path: format!("{content}/{method}/{scale}/{role}.png"),
            content_id: content.into(),
            method_id: method.into(),
            scale,
            role,
            height: h,
            width: w,
            channels: 3,
        }
    }

    /// `contents` scenes, each processed by every `(method, scales)` entry.
    pub(crate) fn toy_manifest(contents: usize, methods: &[(&str, &[f64])]) -> Manifest {
        let mut entries = Vec::new();
        for c in 0..contents {
            let cid = format!("c{c:02}");
            entries.push(ManifestEntry {
                record: rec(&cid, NO_METHOD, 1.0, Role::Lr),
                split: SplitTag::Unassigned,
            });
            for (m, scales) in methods {
                for &s in *scales {
                    for role in [Role::Sr, Role::Ds] {
                        entries.push(ManifestEntry {
                            record: rec(&cid, m, s, role),
                            split: SplitTag::Pretext,
                        });
                    }
                }
            }
        }
        Manifest::new(Metadata::new(), entries).unwrap()
    }

    #[test]
    fn two_content_group_forces_the_other() {
        let m = toy_manifest(2, &[("a", &[2.0])]);
        let anchor = m.records().find(|r| r.role == Role::Sr).unwrap().clone();
        for s in 0..20 {
            let p = sample_positive(&anchor, &m, s, false).unwrap();
            assert_eq!(p.content_id, "c01");
            assert_eq!(p.role, Role::Sr);
        }
    }

    #[test]
    fn singleton_group_starves() {
        let m = toy_manifest(1, &[("a", &[2.0])]);
        let anchor = m.records().find(|r| r.role == Role::Sr).unwrap().clone();
        assert!(matches!(
            sample_positive(&anchor, &m, 0, false),
            Err(Error::SamplerStarvation { .. })
        ));
        let idx = PretextIndex::new(&m, false);
        assert!(matches!(EpochSchedule::new(&idx, 1, 0), Err(Error::SamplerStarvation { .. })));
    }

    #[test]
    fn partner_frequencies_are_uniform() {
        let m = toy_manifest(11, &[("a", &[2.0])]);
        let anchor = m.records().find(|r| r.role == Role::Sr).unwrap().clone();
        let n = 10_000;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in 0..n {
            *counts
                .entry(sample_positive(&anchor, &m, s, false).unwrap().content_id)
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        let p = 0.1;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (_, c) in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 5.0 * sigma);
        }
    }

    #[test]
    fn mixed_roles_pair_sr_with_ds() {
        let m = toy_manifest(2, &[("a", &[2.0])]);
        let idx = PretextIndex::new(&m, true);
        assert_eq!(idx.groups().count(), 1);
        let anchor = idx.records().iter().position(|r| r.role == Role::Sr).unwrap();
        let roles: std::collections::HashSet<Role> = (0..50)
            .map(|s| idx.records()[idx.partner(anchor, s).unwrap()].role)
            .collect();
        assert_eq!(roles.len(), 2);
    }

    #[test]
    fn pair_plans_satisfy_relation() {
        let m = toy_manifest(5, &[("a", &[2.0, 4.0]), ("b", &[3.0])]);
        let idx = PretextIndex::new(&m, false);
        for s in 0..200 {
            let plan = plan_pairs(&idx, 8, s).unwrap();
            let anchors: std::collections::HashSet<usize> = plan.iter().map(|p| p.0).collect();
            assert_eq!(anchors.len(), 8);
            for &(a, b) in &plan {
                let (ra, rb) = (&idx.records()[a], &idx.records()[b]);
                assert_eq!((ra.method_id.as_str(), ra.scale, ra.role), (rb.method_id.as_str(), rb.scale, rb.role));
                assert_ne!(ra.content_id, rb.content_id);
            }
        }
        assert_eq!(adjacent_pairs(1), vec![1, 0]);
    }

    #[test]
    fn epoch_schedule_uses_each_anchor_once() {
        let m = toy_manifest(6, &[("a", &[2.0, 3.0]), ("b", &[2.0])]);
        let idx = PretextIndex::new(&m, false);
        let sched = EpochSchedule::new(&idx, 4, 9).unwrap();
        assert_eq!(sched.batches_per_epoch(), 36 / 4);
        let mut seen = std::collections::HashSet::new();
        for b in 0..sched.batches_per_epoch() {
            for (a, _) in sched.plan(&idx, 0, b).unwrap() {
                assert!(seen.insert(a));
            }
        }
        assert_eq!(seen.len(), 36);
        assert_eq!(sched.plan(&idx, 3, 2).unwrap(), sched.plan(&idx, 3, 2).unwrap());
        assert_ne!(sched.plan(&idx, 0, 0).unwrap(), sched.plan(&idx, 1, 0).unwrap());
    }
}
