//! Pretext optimisation loop: batches of positive pairs, NT-Xent plus the
//! L1 scale loss, SGD with momentum under a warm-restart cosine schedule.

mod schedule;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugmentConfig, MsMode};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::net::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::net::layers::ParamKind;
use crate::net::{HeadNorm, Model, ModelConfig};
use crate::objectives::{aux_l1, aux_l1_grad, nt_xent_with_grad, Reduction};
use crate::sampler::{materialize, EpochSchedule, ImageSource, InMemoryImages, PairBatch, PretextIndex, ViewSettings};
use crate::scalar::Scalar;
use crate::seed;

pub use schedule::{lr_at, LrSchedule};

pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// Projection/auxiliary head normalisation as requested by the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadNormMode {
    /// LayerNorm when the colour transform is on, none otherwise.
    #[default]
    Auto,
    On,
    Off,
}

impl HeadNormMode {
    pub fn resolve(self, color_transform: bool) -> HeadNorm {
        match (self, color_transform) {
            (HeadNormMode::On, _) | (HeadNormMode::Auto, true) => HeadNorm::LayerNorm,
            _ => HeadNorm::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Images per batch (pairs x 2).
    pub batch_items: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    /// First restart period in epochs.
    pub restart_period: usize,
    pub restart_mult: usize,
    pub tau: f64,
    pub crop_size: usize,
    pub color_transform: bool,
    pub auxiliary: bool,
    pub head_norm: HeadNormMode,
    pub ms_mode: MsMode,
    pub flips: bool,
    pub reduction: Reduction,
    pub mix_roles: bool,
    pub tied_views: bool,
    pub fine_tune_encoder: bool,
    /// Encoder weights to start from when the encoder is marked pretrained.
    pub init_checkpoint: Option<PathBuf>,
    /// Save `latest.ckpt` every this many steps; 0 disables periodic saves.
    pub checkpoint_every: u64,
    /// Stop (resumably) once this many steps have been taken in total.
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_items: 16,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_max: 1e-3,
            lr_min: 0.0,
            restart_period: 10,
            restart_mult: 2,
            tau: 0.1,
            crop_size: 256,
            color_transform: true,
            auxiliary: true,
            head_norm: HeadNormMode::Auto,
            ms_mode: MsMode::LocalMean,
            flips: true,
            reduction: Reduction::Sum,
            mix_roles: false,
            tied_views: false,
            fine_tune_encoder: true,
            init_checkpoint: None,
            checkpoint_every: 0,
            max_steps: None,
            seed: 0,
        }
    }
}

/// Named ablation presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Base,
    /// RGB only, head normalisation off.
    NoColor,
    /// Contrastive loss only.
    NoAux,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Base, Ablation::NoColor, Ablation::NoAux];

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Ablation::Base => {}
            Ablation::NoColor => {
                cfg.color_transform = false;
                cfg.head_norm = HeadNormMode::Off;
            }
            Ablation::NoAux => cfg.auxiliary = false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Base => "base",
            Ablation::NoColor => "no-color",
            Ablation::NoAux => "no-aux",
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.crop_size == 0 || self.restart_period == 0 || self.restart_mult == 0 {
            return bad("epochs, crop_size, restart_period and restart_mult must be >= 1".into());
        }
        if self.batch_items < 2 || self.batch_items % 2 != 0 {
            return bad(format!("batch_items must be an even number >= 2, got {}", self.batch_items));
        }
        if !(self.lr_max > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr_max {
            return bad(format!("need 0 <= lr_min <= lr_max and lr_max > 0, got {} / {}", self.lr_min, self.lr_max));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        Ok(())
    }

    pub fn augment(&self) -> AugmentConfig {
        let mut cfg = if self.color_transform {
            AugmentConfig::default()
        } else {
            AugmentConfig::rgb_only()
        };
        cfg.ms_mode = self.ms_mode;
        cfg.flips = self.flips;
        cfg
    }

    /// Model configuration with the head normalisation this run resolves to.
    pub fn resolve_model(&self, model: &ModelConfig) -> ModelConfig {
        let mut m = model.clone();
        m.head.normalization = self.head_norm.resolve(self.color_transform);
        m
    }

    /// Hash of everything that shapes the trajectory. Run length and
    /// checkpointing cadence are excluded so a run can be extended.
    fn trajectory_hash(&self, model: &ModelConfig, steps_per_epoch: usize) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        c.checkpoint_every = 0;
        c.max_steps = None;
        let blob = serde_json::json!({ "train": c, "model": model, "steps_per_epoch": steps_per_epoch });
        hex(&Sha256::digest(blob.to_string().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One row of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub l_contr: f64,
    pub l_aux: f64,
    pub l_total: f64,
    pub wall_time: f64,
}

pub fn read_run_log(path: &Path) -> Result<Vec<LogRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_contr: f64,
    pub l_aux: f64,
    pub l_total: f64,
}

/// Per-epoch means of a run log.
pub fn epoch_means(rows: &[LogRow]) -> Vec<EpochStats> {
    let mut out: Vec<(EpochStats, usize)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((s, n)) if s.epoch == r.epoch => {
                s.l_contr += r.l_contr;
                s.l_aux += r.l_aux;
                s.l_total += r.l_total;
                *n += 1;
            }
            _ => out.push((
                EpochStats {
                    epoch: r.epoch,
                    l_contr: r.l_contr,
                    l_aux: r.l_aux,
                    l_total: r.l_total,
                },
                1,
            )),
        }
    }
    out.into_iter()
        .map(|(s, n)| {
            let n = n as f64;
            EpochStats {
                l_contr: s.l_contr / n,
                l_aux: s.l_aux / n,
                l_total: s.l_total / n,
                ..s
            }
        })
        .collect()
}

/// Trainer state persisted inside checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    config_hash: String,
    config: TrainConfig,
    steps_per_epoch: usize,
    total_steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub model: Model<S>,
    /// Optimizer steps taken in total (including any resumed prefix).
    pub steps: u64,
    pub total_steps: u64,
    pub finished: bool,
    /// Final checkpoint when finished, otherwise the latest one.
    pub checkpoint: PathBuf,
    pub run_log: PathBuf,
}

/// Where a training run keeps its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn run_log(&self) -> PathBuf {
        self.dir.join(RUN_LOG_FILE)
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join(FINAL_CHECKPOINT)
    }
    pub fn latest_checkpoint(&self) -> PathBuf {
        self.dir.join(LATEST_CHECKPOINT)
    }
}

/// Per-step loss values (strict-sum contrastive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub contrastive: f64,
    pub auxiliary: f64,
    pub total: f64,
}

/// Loss of a batch and the gradient of the training objective with respect
/// to every parameter. Per-item gradients are computed in parallel and
/// summed in item order so the result does not depend on scheduling.
pub fn batch_gradient<S: Scalar>(
    model: &Model<S>,
    batch: &PairBatch<S>,
    cfg: &TrainConfig,
) -> Result<(StepLoss, Model<S>)> {
    let traces = batch
        .items
        .par_iter()
        .map(|img| model.forward_item(img))
        .collect::<Result<Vec<_>>>()?;
    let z: Vec<Vec<S>> = traces.iter().map(|t| t.z.clone()).collect();
    let contr = nt_xent_with_grad(&z, &batch.pair_index, S::lit(cfg.tau), cfg.reduction)
        .map_err(|e| diagnose(e, batch))?;
    let (aux, dscale) = if cfg.auxiliary {
        let pred: Vec<S> = traces.iter().map(|t| t.scale).collect();
        let target: Vec<S> = batch.scales().into_iter().map(S::lit).collect();
        (aux_l1(&pred, &target)?, aux_l1_grad(&pred, &target)?)
    } else {
        (S::zero(), vec![S::zero(); traces.len()])
    };
    let loss = StepLoss {
        contrastive: contr.sum.to_f64_exact(),
        auxiliary: aux.to_f64_exact(),
        total: (contr.sum + aux).to_f64_exact(),
    };
    if !loss.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}; batch: {}", loss.total, batch.describe())));
    }
    let grads: Vec<Model<S>> = traces
        .par_iter()
        .zip(contr.grad.par_iter())
        .zip(dscale.par_iter())
        .map(|((t, dz), &ds)| {
            let mut g = model.zeros_like();
            model.backward_item(t, dz, ds, &mut g, cfg.fine_tune_encoder, false);
            g
        })
        .collect();
    let mut total = model.zeros_like();
    for g in &grads {
        total.accumulate(g);
    }
    if total.params().iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("non-finite gradient; batch: {}", batch.describe())));
    }
    Ok((loss, total))
}

fn diagnose(e: Error, batch: &PairBatch<impl Scalar>) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m}; batch: {}", batch.describe())),
        other => other,
    }
}

/// SGD with momentum; weight decay on affine weights only. Encoder
/// parameters are left untouched when the encoder is frozen.
pub fn sgd_step<S: Scalar>(model: &mut Model<S>, grad: &Model<S>, momentum: &mut [S], lr: f64, cfg: &TrainConfig) {
    let (lr, mu, wd) = (S::lit(lr), S::lit(cfg.momentum), S::lit(cfg.weight_decay));
    let mut off = 0;
    for (p, g) in model.params_mut().into_iter().zip(grad.params()) {
        let n = p.values.len();
        let frozen = !cfg.fine_tune_encoder && p.name.starts_with("encoder.");
        if !frozen {
            let decay = p.kind == ParamKind::Weight;
            for ((w, &gv), v) in p.values.iter_mut().zip(g.values).zip(&mut momentum[off..off + n]) {
                let mut d = gv;
                if decay {
                    d += wd * *w;
                }
                *v = mu * *v + d;
                *w -= lr * *v;
            }
        }
        off += n;
    }
}

struct Prepared {
    index: PretextIndex,
    source: InMemoryImages,
    schedule: EpochSchedule,
    lr: LrSchedule,
    augment: AugmentConfig,
    model_cfg: ModelConfig,
    hash: String,
    total_steps: u64,
}

fn prepare(manifest: &Manifest, base: &Path, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    let model_cfg = cfg.resolve_model(model_cfg);
    model_cfg.validate()?;
    let index = PretextIndex::new(manifest, cfg.mix_roles);
    let schedule = EpochSchedule::new(&index, cfg.batch_items / 2, seed::derive(cfg.seed, &["schedule"]))?;
    let spe = schedule.batches_per_epoch();
    let source = InMemoryImages::load(&index, base)?;
    Ok(Prepared {
        hash: cfg.trajectory_hash(&model_cfg, spe),
        lr: LrSchedule::from_config(cfg, spe),
        total_steps: (cfg.epochs * spe) as u64,
        augment: cfg.augment(),
        index,
        source,
        schedule,
        model_cfg,
    })
}

fn initial_model<S: Scalar>(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Model<S>> {
    let mut model = Model::new(model_cfg.clone(), seed::derive(cfg.seed, &["init"]))?;
    if model_cfg.encoder.pretrained {
        let path = cfg.init_checkpoint.as_ref().ok_or_else(|| {
            Error::InvalidArgument("encoder marked pretrained but no init_checkpoint given".into())
        })?;
        let init: Checkpoint<S> = load_checkpoint(path)?;
        if init.model.config().encoder != model_cfg.encoder {
            return Err(Error::Checkpoint(format!(
                "{}: encoder architecture differs from the configured one",
                path.display()
            )));
        }
        model.encoder = init.model.encoder;
    }
    Ok(model)
}

/// Train from scratch, writing the run log and checkpoints into `run`.
pub fn train<S: Scalar>(
    manifest: &Manifest,
    base: &Path,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<TrainOutcome<S>> {
    let prep = prepare(manifest, base, model_cfg, cfg)?;
    let model = initial_model(&prep.model_cfg, cfg)?;
    fs::create_dir_all(&run.dir).map_err(|e| Error::io(&run.dir, e))?;
    File::create(run.run_log()).map_err(|e| Error::io(run.run_log(), e))?;
    let momentum = vec![S::zero(); model.param_count()];
    run_loop(prep, cfg, run, model, momentum, 0)
}

/// Continue a run from `checkpoint`. The trajectory configuration must
/// match the one the checkpoint was written with; only the epoch count and
/// checkpointing cadence may change.
pub fn resume<S: Scalar>(
    checkpoint: &Path,
    manifest: &Manifest,
    base: &Path,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<TrainOutcome<S>> {
    let ck: Checkpoint<S> = load_checkpoint(checkpoint)?;
    let state: TrainerState = serde_json::from_value(ck.trainer.clone()).map_err(|e| {
        Error::Checkpoint(format!("{}: no trainer state ({e})", checkpoint.display()))
    })?;
    let prep = prepare(manifest, base, model_cfg, cfg)?;
    if state.config_hash != prep.hash {
        return Err(Error::InvalidArgument(format!(
            "{}: configuration differs from the one the checkpoint was trained with",
            checkpoint.display()
        )));
    }
    let momentum = ck.momentum.unwrap_or_else(|| vec![S::zero(); ck.model.param_count()]);
    if ck.step >= prep.total_steps {
        log::info!("run already finished at step {}; nothing to do", ck.step);
        return Ok(TrainOutcome {
            model: ck.model,
            steps: ck.step,
            total_steps: prep.total_steps,
            finished: true,
            checkpoint: checkpoint.to_path_buf(),
            run_log: run.run_log(),
        });
    }
    fs::create_dir_all(&run.dir).map_err(|e| Error::io(&run.dir, e))?;
    // Drop log rows written after the checkpoint so the log stays in step.
    let rows = match read_run_log(&run.run_log()) {
        Ok(r) => r,
        Err(Error::Io { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut f = File::create(run.run_log()).map_err(|e| Error::io(run.run_log(), e))?;
    for r in rows.iter().filter(|r| r.step < ck.step) {
        writeln!(f, "{}", serde_json::to_string(r).expect("log row serialises")).map_err(|e| Error::io(run.run_log(), e))?;
    }
    run_loop(prep, cfg, run, ck.model, momentum, ck.step)
}

fn save<S: Scalar>(
    path: &Path,
    model: &Model<S>,
    momentum: &[S],
    step: u64,
    prep: &Prepared,
    cfg: &TrainConfig,
) -> Result<()> {
    let state = TrainerState {
        config_hash: prep.hash.clone(),
        config: cfg.clone(),
        steps_per_epoch: prep.schedule.batches_per_epoch(),
        total_steps: prep.total_steps,
    };
    let ck = Checkpoint {
        model: model.clone(),
        step,
        momentum: Some(momentum.to_vec()),
        trainer: serde_json::to_value(state).expect("trainer state serialises"),
    };
    save_checkpoint(&ck, path)
}

fn run_loop<S: Scalar>(
    prep: Prepared,
    cfg: &TrainConfig,
    run: &RunDir,
    mut model: Model<S>,
    mut momentum: Vec<S>,
    start: u64,
) -> Result<TrainOutcome<S>> {
    let spe = prep.schedule.batches_per_epoch() as u64;
    let stop = cfg.max_steps.map_or(prep.total_steps, |m| m.min(prep.total_steps));
    let settings = ViewSettings {
        crop_size: cfg.crop_size,
        augment: &prep.augment,
        tied_views: cfg.tied_views,
    };
    let mut log = OpenOptions::new()
        .append(true)
        .create(true)
        .open(run.run_log())
        .map_err(|e| Error::io(run.run_log(), e))?;
    let clock = Instant::now();
    let mut step = start;
    while step < stop {
        let (epoch, b) = ((step / spe) as usize, (step % spe) as usize);
        let plan = prep.schedule.plan(&prep.index, epoch, b)?;
        let batch: PairBatch<S> = materialize(
            &prep.index,
            &prep.source as &dyn ImageSource,
            &plan,
            &settings,
            prep.schedule.batch_seed(epoch, b),
        )?;
        let (loss, grad) = batch_gradient(&model, &batch, cfg)?;
        let lr = prep.lr.at(step);
        sgd_step(&mut model, &grad, &mut momentum, lr, cfg);
        let row = LogRow {
            step,
            epoch,
            lr,
            l_contr: loss.contrastive,
            l_aux: loss.auxiliary,
            l_total: loss.total,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", serde_json::to_string(&row).expect("log row serialises"))
            .map_err(|e| Error::io(run.run_log(), e))?;
        step += 1;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < prep.total_steps {
            save(&run.latest_checkpoint(), &model, &momentum, step, &prep, cfg)?;
        }
        if step % spe == 0 {
            log::info!("epoch {} done (step {step}, lr {lr:.3e}, loss {:.4})", epoch + 1, loss.total);
        }
    }
    let finished = step >= prep.total_steps;
    let checkpoint = if finished {
        run.final_checkpoint()
    } else {
        run.latest_checkpoint()
    };
    save(&checkpoint, &model, &momentum, step, &prep, cfg)?;
    Ok(TrainOutcome {
        model,
        steps: step,
        total_steps: prep.total_steps,
        finished,
        checkpoint,
        run_log: run.run_log(),
    })
}
