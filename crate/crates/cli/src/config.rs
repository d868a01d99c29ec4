//! Run configuration: defaults, then a TOML file, then `SRIQA__*`
//! environment variables, then `--set` flags.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sriqa_core::downstream::EvalConfig;
use sriqa_core::forge::{default_bank, DegradationOperator};
use sriqa_core::net::ModelConfig;
use sriqa_core::trainer::TrainConfig;
use toml::{Table, Value};

use crate::UsageError;

pub const ENV_PREFIX: &str = "SRIQA__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeSection {
    pub scales: Vec<f64>,
    /// Also write `scored.tsv` with severity-derived quality scores.
    pub scored: bool,
    pub operators: Vec<DegradationOperator>,
}

impl Default for ForgeSection {
    fn default() -> Self {
        Self {
            scales: vec![2.0, 3.0, 4.0],
            scored: false,
            operators: default_bank(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; fills `train.seed`, `eval.seed` and `eval.crops.seed`
    /// unless those are set explicitly.
    pub seed: u64,
    pub forge: ForgeSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialises")
    }
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| anyhow!(UsageError("empty key".into())))?;
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!(UsageError(format!("'{p}' is not a section"))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn has_path(table: &Table, path: &[&str]) -> bool {
    let mut cur = table;
    for (i, p) in path.iter().enumerate() {
        match cur.get(*p) {
            Some(Value::Table(t)) if i + 1 < path.len() => cur = t,
            Some(_) if i + 1 == path.len() => return true,
            _ => return false,
        }
    }
    false
}

/// Resolve the configuration. `env` yields `(name, value)` pairs; only
/// names starting with [`ENV_PREFIX`] are used, with `__` separating
/// sections (`SRIQA__TRAIN__LR_MAX=0.01`).
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut user = Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))
            .map_err(|e| anyhow!(UsageError(format!("{e:#}"))))?;
        let t: Table = toml::from_str(&text)
            .map_err(|e| anyhow!(UsageError(format!("{}: {e}", path.display()))))?;
        merge(&mut user, t);
    }
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    env.sort();
    for (k, v) in env {
        let path: Vec<String> = k[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        set_path(&mut user, &path, parse_value(&v))?;
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!(UsageError(format!("--set expects key=value, got '{s}'"))))?;
        let path: Vec<String> = k.trim().split('.').map(str::to_string).collect();
        set_path(&mut user, &path, parse_value(v.trim()))?;
    }
    if let Some(s) = seed {
        user.insert("seed".into(), Value::Integer(s as i64));
    }
    let mut cfg: RunConfig = Value::Table(user.clone())
        .try_into()
        .map_err(|e| anyhow!(UsageError(format!("invalid configuration: {e}"))))?;
    if !has_path(&user, &["train", "seed"]) {
        cfg.train.seed = cfg.seed;
    }
    if !has_path(&user, &["eval", "seed"]) {
        cfg.eval.seed = cfg.seed;
    }
    if !has_path(&user, &["eval", "crops", "seed"]) {
        cfg.eval.crops.seed = cfg.seed;
    }
    cfg.train
        .validate()
        .and_then(|_| cfg.eval.validate())
        .and_then(|_| cfg.model.validate())
        .map_err(|e| anyhow!(UsageError(e.to_string())))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn defaults_match_reference_settings() {
        let c = resolve(None, none(), &[], None).unwrap();
        assert_eq!(c.train.batch_items, 16);
        assert_eq!(c.train.epochs, 60);
        assert_eq!(c.train.tau, 0.1);
        assert_eq!(c.train.lr_max, 1e-3);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.train.weight_decay, 1e-4);
        assert_eq!(c.train.crop_size, 256);
        assert_eq!(c.eval.iterations, 20);
        assert_eq!(c.eval.train_frac, 0.8);
        assert_eq!(c.eval.alpha, 1.0);
    }

    #[test]
    fn precedence_flags_over_env_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "seed = 5\n[train]\nepochs = 3\nlr_max = 0.5\ntau = 0.3\n").unwrap();
        let env = vec![
            ("SRIQA__TRAIN__LR_MAX".to_string(), "0.25".to_string()),
            ("SRIQA__TRAIN__TAU".to_string(), "0.2".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = resolve(Some(&f), env, &["train.tau=0.15".into()], None).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.lr_max, 0.25);
        assert_eq!(c.train.tau, 0.15);
        assert_eq!((c.seed, c.train.seed, c.eval.seed), (5, 5, 5));
        let c = resolve(Some(&f), none(), &["train.seed=9".into()], Some(7)).unwrap();
        assert_eq!((c.seed, c.train.seed, c.eval.seed), (7, 9, 7));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(resolve(None, none(), &["train.nonsense=1".into()], None).is_err());
        assert!(resolve(None, none(), &["bogus=1".into()], None).is_err());
        assert!(resolve(None, none(), &["train.tau=-1".into()], None).is_err());
    }

    #[test]
    fn printed_config_round_trips() {
        let c = resolve(None, none(), &["train.epochs=7".into()], Some(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, c.to_toml()).unwrap();
        assert_eq!(resolve(Some(&f), none(), &[], None).unwrap(), c);
    }
}
