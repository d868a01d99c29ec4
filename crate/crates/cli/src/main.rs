//! `sriqa`: forge SR-proxy datasets, pretrain the encoder, evaluate the
//! linear probe, export embeddings and render reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod config;
mod lock;
mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sriqa_core::data::{read_manifest, read_scored_manifest, write_scored_manifest, Role};
use sriqa_core::downstream::protocol::{eval_protocol, EvalReport};
use sriqa_core::downstream::{mean_latent, synthetic_scores, FeatureCache};
use sriqa_core::forge::scenes::write_synthetic_scenes;
use sriqa_core::forge::{self, MANIFEST_FILE};
use sriqa_core::image::Image;
use sriqa_core::net::checkpoint::{checkpoint_digest, load_checkpoint, Checkpoint};
use sriqa_core::trainer::{self, epoch_means, read_run_log, Ablation, RunDir};

use crate::config::RunConfig;
use crate::lock::DirLock;

/// File name of the scored manifest written by `forge --scored`.
const SCORED_FILE: &str = "scored.tsv";
/// Resolved configuration saved next to a training run.
const RUN_CONFIG_FILE: &str = "config.toml";

/// Bad invocation or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "sriqa", version, about = "Self-supervised SR quality features and linear-probe evaluation")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// TOML configuration file.
    #[arg(long, global = true, env = "SRIQA_CONFIG")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write procedurally generated LR scenes (for smoke tests and demos).
    SynthScenes {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Forge SR/DS records from a directory of LR images.
    Forge {
        #[arg(long)]
        lr_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Print planned record counts and write nothing.
        #[arg(long)]
        dry_run: bool,
        /// Also write a scored manifest with severity-derived quality.
        #[arg(long)]
        scored: bool,
    },
    /// Pretrain the encoder on a forged manifest.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Ablation preset: base, no-color or no-aux.
        #[arg(long, value_parser = parse_ablation, default_value = "base")]
        ablate: Ablation,
        /// Resume from a checkpoint (default: the run's latest checkpoint).
        #[arg(long, value_name = "CKPT", num_args = 0..=1)]
        resume: Option<Option<PathBuf>>,
    },
    /// Run the linear-probe protocol on a scored manifest.
    Eval {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report JSON; a plain-text table is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Add per-scale breakdowns.
        #[arg(long)]
        per_scale: bool,
        /// Directory for cached crop features.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Write mean five-crop latents with their labels as TSV.
    ExportEmbeddings {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only records with this method id.
        #[arg(long)]
        method: Option<String>,
        /// Keep only records at this scale.
        #[arg(long)]
        scale: Option<f64>,
        /// Keep only records with this role (LR, HR, SR, DS).
        #[arg(long)]
        role: Option<String>,
    },
    /// Render loss curves and summary/comparison tables.
    Report {
        #[arg(long)]
        run_log: Option<PathBuf>,
        /// Evaluation report JSON. Repeatable.
        #[arg(long = "eval")]
        evals: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::ALL
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| {
            let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
            format!("unknown ablation '{s}' (expected one of {})", names.join(", "))
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Cause chain joined with `: `, skipping causes already quoted by the
/// message before them.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<sriqa_core::Error>() {
            return match core {
                sriqa_core::Error::InvalidArgument(_) => 1,
                c if c.is_numeric() => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = config::resolve(g.config.as_deref(), std::env::vars(), &g.sets, g.seed)?;
    if g.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!(usage("no command given (try --help)"));
    };
    match command {
        Command::SynthScenes { out_dir, count, height, width } => {
            let _lock = DirLock::acquire(&out_dir)?;
            let paths = write_synthetic_scenes(&out_dir, count, height, width, cfg.seed)?;
            println!("wrote {} scenes to {}", paths.len(), out_dir.display());
            Ok(())
        }
        Command::Forge { lr_dir, out_dir, dry_run, scored } => cmd_forge(&cfg, &lr_dir, &out_dir, dry_run, scored),
        Command::Pretrain { manifest, out_dir, ablate, resume } => cmd_pretrain(cfg, &manifest, &out_dir, ablate, resume),
        Command::Eval { scored, checkpoint, out, per_scale, cache } => {
            cmd_eval(cfg, &scored, &checkpoint, &out, per_scale, cache.as_deref())
        }
        Command::ExportEmbeddings { manifest, checkpoint, out, method, scale, role } => {
            let role = role
                .map(|r| r.parse::<Role>().map_err(usage))
                .transpose()?;
            cmd_export(&cfg, &manifest, &checkpoint, &out, method.as_deref(), scale, role)
        }
        Command::Report { run_log, evals, out_dir } => cmd_report(run_log.as_deref(), &evals, &out_dir),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn cmd_forge(cfg: &RunConfig, lr_dir: &Path, out_dir: &Path, dry_run: bool, scored: bool) -> Result<()> {
    let f = &cfg.forge;
    if !lr_dir.is_dir() {
        return Err(sriqa_core::Error::Data(format!("LR directory {} does not exist", lr_dir.display())).into());
    }
    if dry_run {
        let p = forge::plan(lr_dir, &f.operators, &f.scales)?;
        println!(
            "planned: {} LR images, {} SR records, {} DS records ({} total with HR/LR)",
            p.lr_images,
            p.sr_records,
            p.ds_records,
            p.sr_records + p.ds_records + 2 * p.lr_images
        );
        return Ok(());
    }
    let _lock = DirLock::acquire(out_dir)?;
    let manifest = forge::forge(lr_dir, &f.operators, &f.scales, out_dir, cfg.seed)?;
    let c = manifest.summary();
    println!(
        "wrote {}: {} records (HR {}, LR {}, SR {}, DS {})",
        out_dir.join(MANIFEST_FILE).display(),
        c.total(),
        c.hr,
        c.lr,
        c.sr,
        c.ds
    );
    if scored || f.scored {
        let s = synthetic_scores(&manifest, &f.operators)?;
        let path = out_dir.join(SCORED_FILE);
        write_scored_manifest(&s, &path)?;
        println!("wrote {}: {} scored images", path.display(), s.len());
    }
    Ok(())
}

fn cmd_pretrain(
    cfg: RunConfig,
    manifest_path: &Path,
    out_dir: &Path,
    ablate: Ablation,
    resume: Option<Option<PathBuf>>,
) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    let base = parent_dir(manifest_path);
    let mut train_cfg = cfg.train.clone();
    ablate.apply(&mut train_cfg);
    let _lock = DirLock::acquire(out_dir)?;
    let mut saved = cfg.clone();
    saved.train = train_cfg.clone();
    let config_path = out_dir.join(RUN_CONFIG_FILE);
    let save_config = || fs::write(&config_path, saved.to_toml()).with_context(|| format!("writing {}", config_path.display()));
    let run = RunDir::new(out_dir);
    let outcome = match resume {
        None => {
            save_config()?;
            trainer::train::<f32>(&manifest, &base, &cfg.model, &train_cfg, &run)?
        }
        Some(ckpt) => {
            let ckpt = ckpt.unwrap_or_else(|| {
                let done = run.final_checkpoint();
                if done.is_file() { done } else { run.latest_checkpoint() }
            });
            let outcome = trainer::resume::<f32>(&ckpt, &manifest, &base, &cfg.model, &train_cfg, &run)?;
            save_config()?;
            outcome
        }
    };
    println!(
        "{} after {}/{} steps ({}); checkpoint {}, run log {}",
        if outcome.finished { "finished" } else { "stopped" },
        outcome.steps,
        outcome.total_steps,
        ablate.name(),
        outcome.checkpoint.display(),
        outcome.run_log.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint<f32>> {
    load_checkpoint::<f32>(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_eval(
    mut cfg: RunConfig,
    scored: &Path,
    checkpoint: &Path,
    out: &Path,
    per_scale: bool,
    cache_dir: Option<&Path>,
) -> Result<()> {
    cfg.eval.per_scale |= per_scale;
    let manifest = read_scored_manifest(scored)?;
    let ck = load_model(checkpoint)?;
    let cache = match cache_dir {
        Some(dir) => Some(FeatureCache::new(dir, checkpoint_digest(checkpoint)?)),
        None => None,
    };
    let report = eval_protocol(manifest.items(), &parent_dir(scored), &ck.model, &cfg.eval, cache.as_ref())?;
    let out_dir = parent_dir(out);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    let table = report.summary_table();
    fs::write(out.with_extension("txt"), &table)
        .with_context(|| format!("writing {}", out.with_extension("txt").display()))?;
    print!("{table}");
    Ok(())
}

fn cmd_export(
    cfg: &RunConfig,
    manifest_path: &Path,
    checkpoint: &Path,
    out: &Path,
    method: Option<&str>,
    scale: Option<f64>,
    role: Option<Role>,
) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    let base = parent_dir(manifest_path);
    let selected: Vec<_> = manifest
        .records()
        .filter(|r| method.is_none_or(|m| r.method_id == m))
        .filter(|r| scale.is_none_or(|s| r.scale == s))
        .filter(|r| role.is_none_or(|x| r.role == x))
        .collect();
    if selected.is_empty() {
        bail!(usage(format!("no records in {} match the selection", manifest_path.display())));
    }
    let ck = load_model(checkpoint)?;
    let crop = cfg.eval.crops.crop_size;
    let mut text = String::from("path\tcontent_id\tmethod_id\tscale\trole");
    for i in 0..ck.model.d_enc() {
        let _ = write!(text, "\th{i}");
    }
    text.push('\n');
    for r in &selected {
        let img = Image::<f32>::load(&r.resolve(&base))?;
        let h = mean_latent(&img, &ck.model, crop)?;
        let _ = write!(text, "{}\t{}\t{}\t{}\t{}", r.path, r.content_id, r.method_id, r.scale, r.role);
        for v in h {
            let _ = write!(text, "\t{v}");
        }
        text.push('\n');
    }
    let out_dir = parent_dir(out);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} embeddings to {}", selected.len(), out.display());
    Ok(())
}

fn cmd_report(run_log: Option<&Path>, evals: &[PathBuf], out_dir: &Path) -> Result<()> {
    if run_log.is_none() && evals.is_empty() {
        bail!(usage("report needs --run-log and/or at least one --eval"));
    }
    for p in run_log.into_iter().chain(evals.iter().map(PathBuf::as_path)) {
        if !p.is_file() {
            return Err(sriqa_core::Error::Data(format!("input {} does not exist", p.display())).into());
        }
    }
    let _lock = DirLock::acquire(out_dir)?;
    if let Some(path) = run_log {
        let rows = read_run_log(path)?;
        if rows.is_empty() {
            return Err(sriqa_core::Error::Data(format!("run log {} is empty", path.display())).into());
        }
        let total: Vec<(f64, f64)> = rows.iter().map(|r| (r.step as f64, r.l_total)).collect();
        let contr: Vec<(f64, f64)> = rows.iter().map(|r| (r.step as f64, r.l_contr)).collect();
        let aux: Vec<(f64, f64)> = rows.iter().map(|r| (r.step as f64, r.l_aux)).collect();
        plot::line_chart(
            &[
                plot::Series { color: [20, 20, 20], points: &total },
                plot::Series { color: [200, 40, 40], points: &contr },
                plot::Series { color: [40, 90, 200], points: &aux },
            ],
            &out_dir.join("loss_curve.png"),
        )?;
        let mut table = format!("{:>6} {:>10} {:>10} {:>10}\n", "epoch", "l_contr", "l_aux", "l_total");
        for e in epoch_means(&rows) {
            let _ = writeln!(table, "{:>6} {:>10.4} {:>10.4} {:>10.4}", e.epoch, e.l_contr, e.l_aux, e.l_total);
        }
        fs::write(out_dir.join("summary.txt"), &table)?;
        print!("{table}");
    }
    if !evals.is_empty() {
        let mut table = format!("{:<24} {:>8} {:>8} {:>8} {:>8} {:>6}\n", "report", "PLCC", "+-", "SRCC", "+-", "iters");
        for path in evals {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let r = EvalReport::from_json(&text).with_context(|| path.display().to_string())?;
            let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            let a = &r.aggregate;
            let _ = writeln!(
                table,
                "{:<24} {:>8} {:>8} {:>8} {:>8} {:>6}",
                name,
                f(a.plcc_mean),
                f(a.plcc_std),
                f(a.srcc_mean),
                f(a.srcc_std),
                a.scored_iterations
            );
        }
        fs::write(out_dir.join("comparison.txt"), &table)?;
        print!("{table}");
    }
    Ok(())
}
