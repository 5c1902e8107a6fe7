//! Two-layer GCN with manual backprop, in three propagation modes:
//! the renormalized baseline, VPN (learnable `θ`), and r-GCN (powered-graph
//! regularized objective).

mod adam;
mod model;
mod train;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model::{
    accuracy, backward, cross_entropy, embed, forward, glorot_init, loss_and_grads, predict,
    rgcn_loss, softmax, DropoutMasks, ForwardCache, GcnModel, Grads, LossInputs, ModelGrads,
    Propagation,
};
pub use train::{build_propagation, prepare_features, train, train_prepared, TrainResult};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::powering::{Aloofness, Budget, ThetaVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorMode {
    Vanilla,
    Vpn,
    Rgcn,
}

impl OperatorMode {
    pub const ALL: [OperatorMode; 3] =
        [OperatorMode::Vanilla, OperatorMode::Vpn, OperatorMode::Rgcn];
}

impl fmt::Display for OperatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorMode::Vanilla => "vanilla",
            OperatorMode::Vpn => "vpn",
            OperatorMode::Rgcn => "rgcn",
        })
    }
}

impl std::str::FromStr for OperatorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "gcn" => Ok(OperatorMode::Vanilla),
            "vpn" => Ok(OperatorMode::Vpn),
            "rgcn" | "r-gcn" => Ok(OperatorMode::Rgcn),
            _ => Err(Error::InvalidParameter(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub hidden: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub theta_lr: f64,
    pub epochs: usize,
    /// Power order (VPN operator order, or largest powered graph for r-GCN).
    pub r: usize,
    /// r-GCN weights; `alpha[k-2]` multiplies the loss on `G^(k)`, `k = 2..=r`.
    pub alpha: Vec<f64>,
    pub seed: u64,
    pub dropout_first_layer_only: bool,
    pub decay_all_layers: bool,
    /// Row-normalize features before training.
    pub normalize_features: bool,
    /// VPN sparsification budget factor; `None` keeps every far edge.
    pub budget_factor: Option<f64>,
    pub aloofness: Aloofness,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            hidden: 16,
            dropout: 0.5,
            weight_decay: 5e-4,
            lr: 0.01,
            theta_lr: 1e-5,
            epochs: 200,
            r: 1,
            alpha: Vec::new(),
            seed: 0,
            dropout_first_layer_only: false,
            decay_all_layers: false,
            normalize_features: true,
            budget_factor: Some(1.0),
            aloofness: Aloofness::Cosine,
        }
    }
}

impl HyperParams {
    /// Defaults for a mode at order `r`; r-GCN puts `α = 0.5` on `G^(r)` only.
    pub fn for_mode(mode: OperatorMode, r: usize) -> Self {
        let mut h = HyperParams {
            r,
            ..Default::default()
        };
        match mode {
            OperatorMode::Vanilla => h.r = 1,
            OperatorMode::Vpn => {}
            OperatorMode::Rgcn => h.alpha = default_alpha(r),
        }
        h
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn budget(&self) -> Result<Budget> {
        match self.budget_factor {
            None => Ok(Budget::KeepAll),
            Some(f) => Budget::from_factor(f),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {}", self.weight_decay));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {}", self.lr));
        }
        if !(self.theta_lr >= 0.0 && self.theta_lr.is_finite()) {
            return bad(format!("theta_lr {}", self.theta_lr));
        }
        if self.r == 0 {
            return bad("r must be at least 1".into());
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return bad(format!("alpha entry {a}"));
        }
        self.budget()?;
        Ok(())
    }
}

/// `α = (0, …, 0, 0.5)` over `k = 2..=r`.
pub fn default_alpha(r: usize) -> Vec<f64> {
    let mut a = vec![0.0; r.saturating_sub(1)];
    if let Some(last) = a.last_mut() {
        *last = 0.5;
    }
    a
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    out.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

/// Text dump: a `name rows cols` header per tensor followed by its rows.
/// Values use shortest round-trip formatting, so a reload is exact.
pub fn weights_to_text(model: &GcnModel) -> String {
    let mut s = String::new();
    write_matrix(&mut s, "w1", &model.w1);
    write_matrix(&mut s, "w2", &model.w2);
    if let Some(t) = &model.theta {
        let m = Matrix::from_vec(1, t.as_slice().len(), t.as_slice().to_vec()).expect("row");
        write_matrix(&mut s, "theta", &m);
    }
    s
}

pub fn save_weights(model: &GcnModel, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(weights_to_text(model).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Weights read back from a text dump.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredWeights {
    pub w1: Matrix,
    pub w2: Matrix,
    pub theta: Option<ThetaVector>,
}

pub fn parse_weights(text: &str, path: &Path) -> Result<StoredWeights> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut pos = 0;
    let mut tensors = std::collections::BTreeMap::new();
    while pos < lines.len() {
        let header: Vec<&str> = lines[pos].split_whitespace().collect();
        if header.is_empty() {
            pos += 1;
            continue;
        }
        if header.len() != 3 {
            return Err(perr(pos + 1, "expected `name rows cols`".into()));
        }
        let dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| perr(pos + 1, format!("`{s}`: {e}")))
        };
        let (rows, cols) = (dim(header[1])?, dim(header[2])?);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let ln = pos + 1 + r;
            let line = lines
                .get(ln)
                .ok_or_else(|| perr(ln + 1, "unexpected end of file".into()))?;
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| perr(ln + 1, format!("`{tok}`: {e}")))?,
                );
            }
        }
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| perr(pos + 1, e.to_string()))?;
        tensors.insert(header[0].to_string(), m);
        pos += rows + 1;
    }
    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| perr(0, format!("missing tensor `{name}`")))
    };
    let w1 = take("w1")?;
    let w2 = take("w2")?;
    let theta = match take("theta") {
        Ok(t) => Some(ThetaVector::new(t.as_slice().to_vec())?),
        Err(_) => None,
    };
    if w1.cols() != w2.rows() {
        return Err(perr(
            0,
            format!("W1 {:?} incompatible with W2 {:?}", w1.shape(), w2.shape()),
        ));
    }
    Ok(StoredWeights { w1, w2, theta })
}

pub fn load_weights(path: &Path) -> Result<StoredWeights> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weights(&text, path)
}
