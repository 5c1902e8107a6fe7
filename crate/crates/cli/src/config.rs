//! Experiment configuration: flat `key = value` files with `[section]`
//! headers. Every key is known in advance; anything else is rejected.
//!
//! ```text
//! [data]
//! dataset = data/citeseer        # bundle directory, or use [sbm]
//! [model]
//! mode = vpn
//! r = 3
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphpow::nn::{HyperParams, OperatorMode};
use graphpow::powering::Aloofness;
use graphpow::synthetic::SyntheticConfig;
use graphpow::SbmParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Syntax {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every accepted key with its default (empty = unset).
const KEYS: &[(&str, &str)] = &[
    ("data.dataset", ""),
    ("data.name", ""),
    ("sbm.n", ""),
    ("sbm.k", "2"),
    ("sbm.a_intra", ""),
    ("sbm.a_inter", ""),
    ("sbm.seed", "0"),
    ("sbm.feature_dim", "200"),
    ("sbm.words_per_node", "10"),
    ("sbm.signal", "0.3"),
    ("sbm.train_per_class", "20"),
    ("sbm.val_size", "100"),
    ("model.mode", "vanilla"),
    ("model.r", "1"),
    ("model.hidden", "16"),
    ("model.dropout", "0.5"),
    ("model.weight_decay", "5e-4"),
    ("model.lr", "0.01"),
    ("model.theta_lr", "1e-5"),
    ("model.epochs", "200"),
    ("model.alpha", ""),
    ("model.budget_factor", "1.0"),
    ("model.aloofness", "cosine"),
    ("model.dropout_first_layer_only", "false"),
    ("model.decay_all_layers", "false"),
    ("model.normalize_features", "true"),
    ("run.seeds", "0"),
    ("run.keep_top", "0"),
    ("run.out", "out"),
    ("power.bin_cap", "50"),
    ("attack.rates", "0.05,0.10,0.15,0.20,0.25,0.30"),
    ("attack.attack_seeds", "0,1,2"),
    ("attack.modes", "vanilla,vpn,rgcn"),
    ("attack.vpn_r", "3"),
    ("attack.rgcn_r", "4"),
    ("attack.layers", "2"),
    ("attack.train_inline", "true"),
    ("attack.weights_dir", ""),
    ("bench.r_values", "1,2,3"),
    ("bench.tol", "1e-8"),
    ("bench.max_iter", "5000"),
];

/// Raw key/value settings after merging defaults, file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            values: KEYS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RawConfig {
    pub fn parse(text: &str, path: &Path) -> Result<RawConfig> {
        let mut cfg = RawConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
                msg: msg.to_string(),
            };
            if let Some(rest) = line.strip_prefix('[') {
                section = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax("unterminated section header"))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected `key = value`"))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        RawConfig::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Round-trippable `key = value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (k, v) in &self.values {
            let (section, key) = k.split_once('.').expect("dotted key");
            if section != current {
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e: T::Err| ConfigError::Value {
                key: key.to_string(),
                msg: e.to_string(),
            })
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_string(),
                    msg: format!("`{s}`: {e}"),
                })
            })
            .collect()
    }
}

/// `N`, `N..M` (half-open), `N..=M`, or a comma list of those.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
        if let Some((a, b)) = part.split_once("..=") {
            out.extend(num(a)?..=num(b)?);
        } else if let Some((a, b)) = part.split_once("..") {
            out.extend(num(a)?..num(b)?);
        } else {
            out.push(num(part)?);
        }
    }
    if out.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(out)
}

fn parse_budget(s: &str) -> std::result::Result<Option<f64>, String> {
    match s {
        "inf" | "keep-all" | "keepall" => Ok(None),
        _ => {
            let f: f64 = s.parse().map_err(|e| format!("`{s}`: {e}"))?;
            if f.is_infinite() && f > 0.0 {
                Ok(None)
            } else if f.is_finite() && f >= 0.0 {
                Ok(Some(f))
            } else {
                Err(format!("budget factor {f} must be non-negative"))
            }
        }
    }
}

/// Where nodes, features and labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Bundle { path: PathBuf, name: Option<String> },
    Sbm(SyntheticConfig),
}

#[derive(Debug, Clone)]
pub struct AttackSettings {
    pub rates: Vec<f64>,
    pub attack_seeds: Vec<u64>,
    pub modes: Vec<OperatorMode>,
    pub vpn_r: usize,
    pub rgcn_r: usize,
    pub layers: usize,
    pub train_inline: bool,
    pub weights_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub r_values: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

/// Fully validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub data: Option<DataSource>,
    pub sbm: Option<SbmParams>,
    pub mode: OperatorMode,
    /// Power order as configured (the vanilla mode itself always uses 1).
    pub r: usize,
    pub hyper: HyperParams,
    pub seeds: Vec<u64>,
    pub keep_top: usize,
    pub out: PathBuf,
    pub bin_cap: usize,
    pub attack: AttackSettings,
    pub bench: BenchSettings,
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    pub fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
        let sbm = if raw.get("sbm.n").is_empty() {
            None
        } else {
            let p = SbmParams::new(
                raw.parsed("sbm.n")?,
                raw.parsed("sbm.k")?,
                raw.parsed("sbm.a_intra")?,
                raw.parsed("sbm.a_inter")?,
                raw.parsed("sbm.seed")?,
            )
            .map_err(|e| invalid("sbm", e.to_string()))?;
            Some(p)
        };
        let data = match (raw.get("data.dataset"), &sbm) {
            ("", None) => None,
            ("", Some(p)) => {
                let mut s = SyntheticConfig::new(*p);
                s.feature_dim = raw.parsed("sbm.feature_dim")?;
                s.words_per_node = raw.parsed("sbm.words_per_node")?;
                s.signal = raw.parsed("sbm.signal")?;
                s.train_per_class = raw.parsed("sbm.train_per_class")?;
                s.val_size = raw.parsed("sbm.val_size")?;
                Some(DataSource::Sbm(s))
            }
            (path, _) => Some(DataSource::Bundle {
                path: PathBuf::from(path),
                name: Some(raw.get("data.name"))
                    .filter(|s| !s.is_empty())
                    .map(String::from),
            }),
        };

        let mode: OperatorMode = raw
            .get("model.mode")
            .parse()
            .map_err(|e: graphpow::Error| invalid("model.mode", e.to_string()))?;
        let r: usize = raw.parsed("model.r")?;
        if r == 0 {
            return Err(invalid("model.r", "power order must be at least 1"));
        }
        let alpha: Vec<f64> = if raw.get("model.alpha").is_empty() {
            if mode == OperatorMode::Rgcn {
                graphpow::nn::default_alpha(r)
            } else {
                Vec::new()
            }
        } else {
            raw.list("model.alpha")?
        };
        if mode == OperatorMode::Rgcn && alpha.len() + 1 != r {
            return Err(invalid(
                "model.alpha",
                format!(
                    "{} weights given; order {r} needs {} (k = 2..r)",
                    alpha.len(),
                    r - 1
                ),
            ));
        }
        let hyper = HyperParams {
            hidden: raw.parsed("model.hidden")?,
            dropout: raw.parsed("model.dropout")?,
            weight_decay: raw.parsed("model.weight_decay")?,
            lr: raw.parsed("model.lr")?,
            theta_lr: raw.parsed("model.theta_lr")?,
            epochs: raw.parsed("model.epochs")?,
            r: if mode == OperatorMode::Vanilla { 1 } else { r },
            alpha,
            seed: 0,
            dropout_first_layer_only: raw.parsed("model.dropout_first_layer_only")?,
            decay_all_layers: raw.parsed("model.decay_all_layers")?,
            normalize_features: raw.parsed("model.normalize_features")?,
            budget_factor: parse_budget(raw.get("model.budget_factor"))
                .map_err(|m| invalid("model.budget_factor", m))?,
            aloofness: raw
                .get("model.aloofness")
                .parse::<Aloofness>()
                .map_err(|e| invalid("model.aloofness", e.to_string()))?,
        };
        hyper
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let seeds = parse_seeds(raw.get("run.seeds")).map_err(|m| invalid("run.seeds", m))?;
        let keep_top: usize = raw.parsed("run.keep_top")?;
        let bin_cap: usize = raw.parsed("power.bin_cap")?;
        if bin_cap == 0 {
            return Err(invalid("power.bin_cap", "must be at least 1"));
        }

        let rates: Vec<f64> = raw.list("attack.rates")?;
        if let Some(x) = rates.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(invalid("attack.rates", format!("rate {x} outside [0, 1]")));
        }
        let modes = raw
            .get("attack.modes")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<OperatorMode>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| invalid("attack.modes", e.to_string()))?;
        let attack = AttackSettings {
            rates,
            attack_seeds: parse_seeds(raw.get("attack.attack_seeds"))
                .map_err(|m| invalid("attack.attack_seeds", m))?,
            modes,
            vpn_r: raw.parsed("attack.vpn_r")?,
            rgcn_r: raw.parsed("attack.rgcn_r")?,
            layers: raw.parsed("attack.layers")?,
            train_inline: raw.parsed("attack.train_inline")?,
            weights_dir: Some(raw.get("attack.weights_dir"))
                .filter(|s| !s.is_empty())
                .map(PathBuf::from),
        };
        if attack.vpn_r == 0 || attack.rgcn_r == 0 || attack.layers == 0 {
            return Err(ConfigError::Invalid(
                "attack orders and layer count must be at least 1".into(),
            ));
        }
        let bench = BenchSettings {
            r_values: raw.list("bench.r_values")?,
            tol: raw.parsed("bench.tol")?,
            max_iter: raw.parsed("bench.max_iter")?,
        };
        if bench.r_values.contains(&0) || !(bench.tol > 0.0) {
            return Err(ConfigError::Invalid(
                "bench orders must be ≥ 1 and tolerance positive".into(),
            ));
        }

        Ok(ExperimentConfig {
            out: PathBuf::from(raw.get("run.out")),
            data,
            sbm,
            mode,
            r,
            hyper,
            seeds,
            keep_top,
            bin_cap,
            attack,
            bench,
            raw,
        })
    }

    /// Hyperparameters for `mode` under the attack settings' orders.
    pub fn attack_hyper(&self, mode: OperatorMode) -> HyperParams {
        let mut h = self.hyper.clone();
        match mode {
            OperatorMode::Vanilla => {
                h.r = 1;
                h.alpha.clear();
            }
            OperatorMode::Vpn => {
                h.r = self.attack.vpn_r;
                h.alpha.clear();
            }
            OperatorMode::Rgcn => {
                h.r = self.attack.rgcn_r;
                h.alpha = graphpow::nn::default_alpha(self.attack.rgcn_r);
            }
        }
        h
    }
}
