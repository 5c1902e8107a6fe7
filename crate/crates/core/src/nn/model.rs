//! Two-layer GCN: forward pass, cross-entropy loss and exact backprop.

use rand::Rng;

use super::{HyperParams, OperatorMode};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Label;
use crate::powering::{NormalizedFamily, ThetaVector};
use crate::rng::{SeedStream, DROPOUT, INIT};
use crate::sparse::CsrMatrix;

/// Uniform on `±√(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter(format!(
            "glorot shape {rows}x{cols}"
        )));
    }
    let b = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-b..=b)).collect();
    Matrix::from_vec(rows, cols, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub w1: Matrix,
    pub w2: Matrix,
    /// Present only for the VPN mode.
    pub theta: Option<ThetaVector>,
    pub mode: OperatorMode,
    pub hyper: HyperParams,
}

impl GcnModel {
    /// Glorot weights from the run's `init` stream; VPN also gets the default
    /// `θ` of order `hyper.r`.
    pub fn new(d: usize, c: usize, mode: OperatorMode, hyper: HyperParams) -> Result<Self> {
        hyper.validate()?;
        let mut rng = SeedStream::root(hyper.seed).stream(INIT).rng();
        let w1 = glorot_init(d, hyper.hidden, &mut rng)?;
        let w2 = glorot_init(hyper.hidden, c, &mut rng)?;
        let theta = (mode == OperatorMode::Vpn).then(|| ThetaVector::vpn_init(hyper.r));
        Ok(GcnModel {
            w1,
            w2,
            theta,
            mode,
            hyper,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.rows(), self.w1.cols(), self.w2.cols())
    }
}

/// Propagation matrix (or matrices) a model runs on.
#[derive(Debug, Clone)]
pub enum Propagation {
    /// One fixed operator.
    Fixed(CsrMatrix),
    /// `A(θ)` re-assembled from precomputed normalized layers.
    Variable(NormalizedFamily),
    /// Weighted sum of per-graph losses, `(weight, operator)`; the first term
    /// is the base graph with weight 1.
    Multi(Vec<(f64, CsrMatrix)>),
}

impl Propagation {
    /// The operator used for prediction.
    pub fn operator(&self, theta: Option<&ThetaVector>) -> Result<CsrMatrix> {
        match self {
            Propagation::Fixed(a) => Ok(a.clone()),
            Propagation::Variable(f) => {
                let th = theta.ok_or_else(|| {
                    Error::InvalidParameter("variable operator needs theta".into())
                })?;
                f.assemble(th)
            }
            Propagation::Multi(terms) => terms
                .first()
                .map(|(_, a)| a.clone())
                .ok_or_else(|| Error::InvalidParameter("empty operator family".into())),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Propagation::Fixed(a) => a.nrows(),
            Propagation::Variable(f) => f.support().nrows(),
            Propagation::Multi(t) => t.first().map_or(0, |(_, a)| a.nrows()),
        }
    }
}

/// Inverted-dropout scale factors (`0` or `1/(1−p)`) for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// One factor per stored entry of the feature matrix.
    pub x: Option<Vec<f64>>,
    /// `n × hidden`.
    pub h: Option<Matrix>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        DropoutMasks { x: None, h: None }
    }

    /// Masks for `epoch` and loss term `term`, drawn from the run's dropout
    /// stream.
    pub fn sample(
        hyper: &HyperParams,
        features: &CsrMatrix,
        hidden_rows: usize,
        epoch: usize,
        term: usize,
    ) -> Self {
        let p = hyper.dropout;
        if p <= 0.0 {
            return DropoutMasks::none();
        }
        let mut rng = SeedStream::root(hyper.seed)
            .stream(DROPOUT)
            .index(epoch as u64)
            .index(term as u64)
            .rng();
        let keep = 1.0 / (1.0 - p);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        let x = draw(features.nnz());
        let h = (!hyper.dropout_first_layer_only).then(|| {
            Matrix::from_vec(hidden_rows, hyper.hidden, draw(hidden_rows * hyper.hidden))
                .expect("mask shape")
        });
        DropoutMasks { x: Some(x), h }
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x_drop: CsrMatrix,
    /// `X̃ W1`.
    pub xw: Matrix,
    /// `A X̃ W1` (pre-activation).
    pub pre1: Matrix,
    /// `ReLU(pre1)`.
    pub h1: Matrix,
    /// Dropped-out `h1`.
    pub h_drop: Matrix,
    /// `H̃1 W2`.
    pub hw: Matrix,
}

fn check_shapes(a: &CsrMatrix, x: &CsrMatrix, w1: &Matrix, w2: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "operator {}x{} with {} feature rows",
            a.nrows(),
            a.ncols(),
            x.nrows()
        )));
    }
    if x.ncols() != w1.rows() || w1.cols() != w2.rows() {
        return Err(Error::Shape(format!(
            "features d={} with W1 {:?} and W2 {:?}",
            x.ncols(),
            w1.shape(),
            w2.shape()
        )));
    }
    Ok(())
}

/// `logits = A · drop(ReLU(A · drop(X) · W1)) · W2`.
pub fn forward(
    w1: &Matrix,
    w2: &Matrix,
    a: &CsrMatrix,
    x: &CsrMatrix,
    masks: &DropoutMasks,
) -> Result<(Matrix, ForwardCache)> {
    check_shapes(a, x, w1, w2)?;
    let x_drop = match &masks.x {
        Some(m) => {
            let mut xd = x.clone();
            for (v, f) in xd.values_mut().iter_mut().zip(m) {
                *v *= f;
            }
            xd
        }
        None => x.clone(),
    };
    let xw = x_drop.mul_dense(w1)?;
    let pre1 = a.mul_dense(&xw)?;
    let h1 = pre1.map(|v| v.max(0.0));
    let h_drop = match &masks.h {
        Some(m) => {
            let mut hd = h1.clone();
            for (v, f) in hd.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *v *= f;
            }
            hd
        }
        None => h1.clone(),
    };
    let hw = h_drop.matmul(w2)?;
    let logits = a.mul_dense(&hw)?;
    Ok((
        logits,
        ForwardCache {
            x_drop,
            xw,
            pre1,
            h1,
            h_drop,
            hw,
        },
    ))
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Mean cross-entropy over `idx` and `∂/∂logits` (zero outside `idx`).
pub fn cross_entropy(logits: &Matrix, labels: &[Label], idx: &[usize]) -> Result<(f64, Matrix)> {
    if idx.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let c = logits.cols();
    let mut grad = Matrix::zeros(logits.rows(), c);
    let scale = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let y = labels[i]
            .get()
            .ok_or_else(|| Error::InvalidDataset(format!("node {i} in loss set is unlabeled")))?;
        let row = logits.row(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        loss += mx + s.ln() - row[y];
        let g = grad.row_mut(i);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += scale * (row[k] - mx).exp() / s;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Gradients of one loss term with respect to the weights, and optionally
/// with respect to the stored entries of `A`.
#[derive(Debug, Clone)]
pub struct Grads {
    pub w1: Matrix,
    pub w2: Matrix,
    /// Same entry order as the operator; only filled when requested.
    pub a: Option<Vec<f64>>,
}

/// Backprop of `loss(logits)` given `dz = ∂loss/∂logits`.
pub fn backward(
    w2: &Matrix,
    a: &CsrMatrix,
    cache: &ForwardCache,
    masks: &DropoutMasks,
    dz: &Matrix,
    want_a: bool,
) -> Result<Grads> {
    // logits = A · HW
    let d_hw = a.t_mul_dense(dz)?;
    let dw2 = cache.h_drop.t_matmul(&d_hw)?;
    let mut dh = d_hw.matmul_t(w2)?;
    if let Some(m) = &masks.h {
        for (g, f) in dh.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *g *= f;
        }
    }
    // h1 = ReLU(pre1)
    for (g, &p) in dh.as_mut_slice().iter_mut().zip(cache.pre1.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let d_pre1 = dh;
    // pre1 = A · XW
    let d_xw = a.t_mul_dense(&d_pre1)?;
    let dw1 = cache.x_drop.t_mul_dense(&d_xw)?;

    let da = want_a.then(|| {
        let mut out = Vec::with_capacity(a.nnz());
        for i in 0..a.nrows() {
            let (cols, _) = a.row(i);
            for &j in cols {
                let j = j as usize;
                let v = crate::dense::dot(dz.row(i), cache.hw.row(j))
                    + crate::dense::dot(d_pre1.row(i), cache.xw.row(j));
                out.push(v);
            }
        }
        out
    });
    Ok(Grads {
        w1: dw1,
        w2: dw2,
        a: da,
    })
}

/// Data needed to evaluate the training loss.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub features: &'a CsrMatrix,
    pub labels: &'a [Label],
    pub train: &'a [usize],
}

/// Total loss and gradients for all parameters of `model`.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub loss: f64,
    pub w1: Matrix,
    pub w2: Matrix,
    pub theta: Option<Vec<f64>>,
}

fn add_decay(model: &GcnModel, g: &mut ModelGrads) -> Result<()> {
    let wd = model.hyper.weight_decay;
    g.loss += 0.5 * wd * model.w1.frobenius_sq();
    g.w1.add_scaled(&model.w1, wd)?;
    if model.hyper.decay_all_layers {
        g.loss += 0.5 * wd * model.w2.frobenius_sq();
        g.w2.add_scaled(&model.w2, wd)?;
    }
    Ok(())
}

/// Mean cross-entropy on `inputs.train` plus weight decay, with exact
/// gradients; in VPN mode includes `∂loss/∂θ`. `masks` holds one entry per
/// loss term (a single entry except for r-GCN).
pub fn loss_and_grads(
    model: &GcnModel,
    prop: &Propagation,
    inputs: LossInputs<'_>,
    masks: &[DropoutMasks],
) -> Result<ModelGrads> {
    let terms: Vec<(f64, CsrMatrix, Option<&NormalizedFamily>)> = match prop {
        Propagation::Fixed(a) => vec![(1.0, a.clone(), None)],
        Propagation::Variable(f) => {
            let th = model
                .theta
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("variable operator needs theta".into()))?;
            vec![(1.0, f.assemble(th)?, Some(f))]
        }
        Propagation::Multi(t) => t.iter().map(|(w, a)| (*w, a.clone(), None)).collect(),
    };
    if masks.len() < terms.len() {
        return Err(Error::InvalidParameter(format!(
            "{} dropout masks for {} loss terms",
            masks.len(),
            terms.len()
        )));
    }
    let (d, h, c) = model.dims();
    let mut total = ModelGrads {
        loss: 0.0,
        w1: Matrix::zeros(d, h),
        w2: Matrix::zeros(h, c),
        theta: None,
    };
    for ((weight, a, fam), mask) in terms.iter().zip(masks) {
        if *weight == 0.0 {
            continue;
        }
        let (logits, cache) = forward(&model.w1, &model.w2, a, inputs.features, mask)?;
        let (loss, mut dz) = cross_entropy(&logits, inputs.labels, inputs.train)?;
        if *weight != 1.0 {
            dz.scale(*weight);
        }
        let g = backward(&model.w2, a, &cache, mask, &dz, fam.is_some())?;
        total.loss += weight * loss;
        total.w1.add_scaled(&g.w1, 1.0)?;
        total.w2.add_scaled(&g.w2, 1.0)?;
        if let (Some(f), Some(ga)) = (fam, &g.a) {
            total.theta = Some(f.theta_gradient(ga));
        }
    }
    add_decay(model, &mut total)?;
    Ok(total)
}

/// `ℓ(G) + Σ_k α_k ℓ(G^(k))` over prebuilt operators `[A(G), A(G^(2)), …]`;
/// `alpha[k-2]` weighs `G^(k)`. Terms with `α_k = 0` are skipped.
pub fn rgcn_loss(
    model: &GcnModel,
    operators: &[CsrMatrix],
    alpha: &[f64],
    inputs: LossInputs<'_>,
    masks: &[DropoutMasks],
) -> Result<ModelGrads> {
    if operators.is_empty() || alpha.len() + 1 != operators.len() {
        return Err(Error::Shape(format!(
            "{} operators for {} regularization weights",
            operators.len(),
            alpha.len()
        )));
    }
    let terms = std::iter::once(1.0)
        .chain(alpha.iter().copied())
        .zip(operators.iter().cloned())
        .collect();
    loss_and_grads(model, &Propagation::Multi(terms), inputs, masks)
}

/// Logits with dropout disabled.
pub fn predict(model: &GcnModel, prop: &Propagation, features: &CsrMatrix) -> Result<Matrix> {
    let a = prop.operator(model.theta.as_ref())?;
    Ok(forward(&model.w1, &model.w2, &a, features, &DropoutMasks::none())?.0)
}

/// Hidden-layer embeddings `ReLU(A X W1)` with dropout disabled.
pub fn embed(model: &GcnModel, prop: &Propagation, features: &CsrMatrix) -> Result<Matrix> {
    let a = prop.operator(model.theta.as_ref())?;
    Ok(
        forward(&model.w1, &model.w2, &a, features, &DropoutMasks::none())?
            .1
            .h1,
    )
}

/// Fraction of `idx` whose row-argmax matches the label; 0 for empty `idx`.
pub fn accuracy(logits: &Matrix, labels: &[Label], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let pred = logits.row_argmax();
    let hits = idx
        .iter()
        .filter(|&&i| labels[i].get() == Some(pred[i]))
        .count();
    hits as f64 / idx.len() as f64
}
