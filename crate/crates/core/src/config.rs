//! Flat TOML run configuration with `key=value` overrides.
//!
//! Recognised keys: `setting`, `n`, `m`, `method`, `lr`, `iterations`,
//! `batch_size`, `n_r`, `sigma`, `runs`, `seed`, `eval_size`, `output_dir`,
//! plus the optional `name` and `wall_clock`. Unknown keys are errors.
//! Omitted hyperparameters fall back to the tabulated per-setting defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::baselines::BBBVVCA_ITERATIONS;
use crate::domain::{AuctionSize, SettingId};
use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, Method};
use crate::optimizer::{table_defaults, TrainConfig, TrainMethod, DEFAULT_EVAL_SIZE};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    setting: Option<String>,
    n: Option<usize>,
    m: Option<usize>,
    method: Option<String>,
    lr: Option<f64>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    n_r: Option<usize>,
    sigma: Option<f64>,
    runs: Option<usize>,
    seed: Option<u64>,
    eval_size: Option<u64>,
    output_dir: Option<PathBuf>,
    name: Option<String>,
    wall_clock: Option<bool>,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub setting: SettingId,
    pub size: AuctionSize,
    pub method: Method,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub n_r: usize,
    pub sigma: f64,
    pub runs: usize,
    pub seed: u64,
    pub eval_size: u64,
    pub output_dir: PathBuf,
    pub name: String,
    pub wall_clock: bool,
}

pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_OUTPUT_DIR: &str = "runs";

/// Parses one `key=value` override. Values that are not valid TOML
/// literals are taken as bare strings.
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{text}` has an empty key")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl RunConfig {
    /// Parses TOML text and applies `overrides` on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    /// Configuration from overrides alone.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_toml("", overrides)
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let missing = |k: &str| Error::Config(format!("missing required key `{k}`"));
        let setting: SettingId = raw.setting.ok_or_else(|| missing("setting"))?.parse()?;
        let size = AuctionSize::new(raw.n.ok_or_else(|| missing("n"))?, raw.m.ok_or_else(|| missing("m"))?)?;
        let method: Method = raw.method.as_deref().unwrap_or("od_vvca").parse()?;
        if !method.supports(setting) {
            return Err(Error::UnsupportedSetting {
                setting: setting.to_string(),
                what: method.name(),
            });
        }
        let d = table_defaults(setting, size);
        let default_iterations = if method == Method::Bbbvvca {
            BBBVVCA_ITERATIONS
        } else {
            d.iterations
        };
        let c = Self {
            setting,
            size,
            method,
            lr: raw.lr.unwrap_or(d.learning_rate),
            iterations: raw.iterations.unwrap_or(default_iterations),
            batch_size: raw.batch_size.unwrap_or(d.batch_size),
            n_r: raw.n_r.unwrap_or(d.n_r),
            sigma: raw.sigma.unwrap_or(d.sigma),
            runs: raw.runs.unwrap_or(DEFAULT_RUNS),
            seed: raw.seed.unwrap_or(0),
            eval_size: raw.eval_size.unwrap_or(DEFAULT_EVAL_SIZE),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            name: raw.name.unwrap_or_else(|| format!("{method}_{setting}_{size}")),
            wall_clock: raw.wall_clock.unwrap_or(false),
        };
        c.experiment().validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        let method = if self.method == Method::OdVvca {
            TrainMethod::OdVvca
        } else {
            TrainMethod::FoVvca
        };
        let mut t = TrainConfig::defaults_for(self.setting, self.size, method, self.seed);
        t.learning_rate = self.lr;
        t.iterations = self.iterations;
        t.batch_size = self.batch_size;
        t.smoothing.n_r = self.n_r;
        t.smoothing.sigma = self.sigma;
        t.eval_size = self.eval_size;
        t.record_wall_time = self.wall_clock;
        t
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            name: self.name.clone(),
            setting: self.setting,
            size: self.size,
            method: self.method,
            train: self.train_config(),
            runs: self.runs,
            output_dir: Some(self.output_dir.clone()),
        }
    }

    /// TOML text that parses back to this configuration.
    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::new();
        t.insert("setting".into(), self.setting.to_string().into());
        t.insert("n".into(), (self.size.n_bidders as i64).into());
        t.insert("m".into(), (self.size.n_items as i64).into());
        t.insert("method".into(), self.method.name().into());
        t.insert("lr".into(), self.lr.into());
        t.insert("iterations".into(), (self.iterations as i64).into());
        t.insert("batch_size".into(), (self.batch_size as i64).into());
        t.insert("n_r".into(), (self.n_r as i64).into());
        t.insert("sigma".into(), self.sigma.into());
        t.insert("runs".into(), (self.runs as i64).into());
        t.insert("seed".into(), (self.seed as i64).into());
        t.insert("eval_size".into(), (self.eval_size as i64).into());
        t.insert("output_dir".into(), self.output_dir.display().to_string().into());
        t.insert("name".into(), self.name.clone().into());
        t.insert("wall_clock".into(), self.wall_clock.into());
        // Key order follows insertion only with toml's preserve_order; emit
        // the normative order explicitly instead.
        const ORDER: [&str; 15] = [
            "setting",
            "n",
            "m",
            "method",
            "lr",
            "iterations",
            "batch_size",
            "n_r",
            "sigma",
            "runs",
            "seed",
            "eval_size",
            "output_dir",
            "name",
            "wall_clock",
        ];
        ORDER.iter().map(|k| format!("{k} = {}\n", t[*k])).collect()
    }
}

/// Tabulated defaults for `(setting, size)` rendered as a loadable config.
/// Untabulated sizes get the global fallback and a comment saying so.
pub fn print_config_defaults(setting: SettingId, size: AuctionSize) -> Result<String> {
    let listed = table_defaults(setting, size).listed;
    let cfg = RunConfig::from_overrides(&[
        format!("setting={setting}"),
        format!("n={}", size.n_bidders),
        format!("m={}", size.n_items),
    ])?;
    let mut out = format!("# defaults for setting {setting}, {size}\n");
    if !listed {
        out.push_str("# fallback: size not tabulated, global defaults (lr 0.001, sigma 0.01)\n");
    }
    out.push_str(&cfg.to_toml());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size(n: usize, m: usize) -> AuctionSize {
        AuctionSize::new(n, m).unwrap()
    }

    #[test]
    fn defaults_match_table() {
        let c = RunConfig::from_toml("setting = \"A\"\nn = 2\nm = 2\n", &[]).unwrap();
        assert_eq!(
            (c.lr, c.sigma, c.batch_size, c.n_r, c.iterations),
            (0.01, 0.01, 1024, 8, 2000)
        );
        let text = print_config_defaults(SettingId::A, size(5, 10)).unwrap();
        assert!(text.contains("lr = 0.0003") && text.contains("sigma = 0.001") && text.contains("batch_size = 1024"));
        assert!(!text.contains("fallback"));
        let text = print_config_defaults(SettingId::B, size(4, 4)).unwrap();
        assert!(text.contains("fallback") && text.contains("lr = 0.001") && text.contains("sigma = 0.01"));
    }

    #[test]
    fn rendered_defaults_round_trip() {
        for s in SettingId::ALL {
            for (n, m) in [(2, 2), (2, 5), (5, 10), (3, 7)] {
                let text = print_config_defaults(s, size(n, m)).unwrap();
                let parsed = RunConfig::from_toml(&text, &[]).unwrap();
                let direct =
                    RunConfig::from_overrides(&[format!("setting={s}"), format!("n={n}"), format!("m={m}")]).unwrap();
                assert_eq!(parsed, direct);
            }
        }
    }

    #[test]
    fn overrides_and_errors() {
        let base = "setting = \"B\"\nn = 5\nm = 3\n";
        let c = RunConfig::from_toml(
            base,
            &["lr=0.5".into(), "method=vcg".into(), "output_dir=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!((c.lr, c.method), (0.5, Method::Vcg));
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        let c = RunConfig::from_toml(base, &["lr=1".into()]).unwrap();
        assert_eq!(c.lr, 1.0);
        assert!(RunConfig::from_toml(base, &["learning_rate=0.1".into()]).is_err());
        assert!(RunConfig::from_toml("setting = \"A\"\nn = 2\nm = 2\nbogus = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml(base, &["noequals".into()]).is_err());
        assert!(RunConfig::from_toml("n = 2\nm = 2\n", &[]).is_err());
        assert!(RunConfig::from_toml("setting = \"D\"\nn = 2\nm = 2\nmethod = \"item_myerson\"\n", &[]).is_err());
        assert!(RunConfig::from_toml(base, &["runs=0".into()]).is_err());
        let c = RunConfig::from_toml(base, &["method=bbbvvca".into()]).unwrap();
        assert_eq!(c.iterations, BBBVVCA_ITERATIONS);
    }

    #[test]
    fn experiment_echoes_config() {
        let c = RunConfig::from_toml("setting = \"A\"\nn = 2\nm = 2\nseed = 9\nsigma = 0.02\n", &[]).unwrap();
        let e = c.experiment();
        assert_eq!(e.train.seed, 9);
        assert_eq!(e.train.smoothing.sigma, 0.02);
        assert_eq!(e.output_dir, Some(PathBuf::from("runs")));
    }
}
