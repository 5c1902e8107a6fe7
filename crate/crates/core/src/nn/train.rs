//! Full-batch training loop.

use serde::Serialize;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{
    accuracy, loss_and_grads, predict, DropoutMasks, GcnModel, LossInputs, Propagation,
};
use super::{HyperParams, OperatorMode};
use crate::error::Result;
use crate::graph::{Graph, NodeData};
use crate::io::Dataset;
use crate::powering::{
    distance_adjacency_family, powered_graph, sparsify, vanilla_gcn_convolution, NormalizedFamily,
};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub mode: OperatorMode,
    pub dataset: String,
    pub seed: u64,
    /// Test accuracy at the final epoch.
    pub test_acc: f64,
    /// Validation accuracy at the final epoch.
    pub val_acc: f64,
    pub val_curve: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    #[serde(skip)]
    pub model: GcnModel,
}

/// Features as seen by the network: row-normalized unless disabled.
pub fn prepare_features(data: &NodeData, hyper: &HyperParams) -> CsrMatrix {
    if hyper.normalize_features {
        data.features.row_normalized()
    } else {
        data.features.clone()
    }
}

/// Operators for `mode` on `graph`. VPN sparsifies by aloofness of the raw
/// `features`; r-GCN builds the renormalized operator of each powered graph
/// with a non-zero weight.
pub fn build_propagation(
    graph: &Graph,
    features: &CsrMatrix,
    mode: OperatorMode,
    hyper: &HyperParams,
) -> Result<Propagation> {
    hyper.validate()?;
    match mode {
        OperatorMode::Vanilla => Ok(Propagation::Fixed(vanilla_gcn_convolution(graph))),
        OperatorMode::Vpn => {
            let family = distance_adjacency_family(graph, hyper.r)?;
            let (family, _) = sparsify(family, features, hyper.aloofness, hyper.budget()?)?;
            Ok(Propagation::Variable(NormalizedFamily::new(
                &family, graph,
            )?))
        }
        OperatorMode::Rgcn => {
            if hyper.alpha.len() + 1 != hyper.r {
                return Err(crate::Error::Shape(format!(
                    "{} regularization weights for order {}",
                    hyper.alpha.len(),
                    hyper.r
                )));
            }
            let mut terms = vec![(1.0, vanilla_gcn_convolution(graph))];
            for (k, &a) in (2..=hyper.r).zip(&hyper.alpha) {
                if a != 0.0 {
                    terms.push((a, vanilla_gcn_convolution(&powered_graph(graph, k)?)));
                }
            }
            Ok(Propagation::Multi(terms))
        }
    }
}

fn term_count(prop: &Propagation) -> usize {
    match prop {
        Propagation::Multi(t) => t.len(),
        _ => 1,
    }
}

/// Train with prebuilt operators and prepared features.
pub fn train_prepared(
    prop: &Propagation,
    features: &CsrMatrix,
    data: &NodeData,
    mode: OperatorMode,
    hyper: &HyperParams,
    dataset: &str,
) -> Result<TrainResult> {
    let n = data.n();
    let mut model = GcnModel::new(features.ncols(), data.num_classes, mode, hyper.clone())?;
    let cfg = AdamConfig::default();
    let mut s1 = AdamState::new(model.w1.as_slice().len());
    let mut s2 = AdamState::new(model.w2.as_slice().len());
    let mut st = model
        .theta
        .as_ref()
        .map(|t| AdamState::new(t.as_slice().len()));
    let inputs = LossInputs {
        features,
        labels: &data.labels,
        train: &data.splits.train,
    };
    let mut val_curve = Vec::with_capacity(hyper.epochs);
    let mut train_loss = Vec::with_capacity(hyper.epochs);
    let terms = term_count(prop);
    for epoch in 0..hyper.epochs {
        let masks: Vec<DropoutMasks> = (0..terms)
            .map(|t| DropoutMasks::sample(hyper, features, n, epoch, t))
            .collect();
        let g = loss_and_grads(&model, prop, inputs, &masks)?;
        adam_step(
            model.w1.as_mut_slice(),
            g.w1.as_slice(),
            &mut s1,
            hyper.lr,
            &cfg,
        );
        adam_step(
            model.w2.as_mut_slice(),
            g.w2.as_slice(),
            &mut s2,
            hyper.lr,
            &cfg,
        );
        if let (Some(theta), Some(gt), Some(state)) = (model.theta.as_mut(), &g.theta, st.as_mut())
        {
            adam_step(theta.as_mut_slice(), gt, state, hyper.theta_lr, &cfg);
        }
        let logits = predict(&model, prop, features)?;
        val_curve.push(accuracy(&logits, &data.labels, &data.splits.val));
        train_loss.push(g.loss);
        log::debug!(
            "epoch {epoch}: loss {:.4} val {:.4}",
            g.loss,
            val_curve.last().unwrap()
        );
    }
    let logits = predict(&model, prop, features)?;
    Ok(TrainResult {
        mode,
        dataset: dataset.to_string(),
        seed: hyper.seed,
        test_acc: accuracy(&logits, &data.labels, &data.splits.test),
        val_acc: accuracy(&logits, &data.labels, &data.splits.val),
        val_curve,
        train_loss,
        theta: model.theta.as_ref().map(|t| t.as_slice().to_vec()),
        model,
    })
}

/// Build operators for `mode` and train one model.
pub fn train(dataset: &Dataset, mode: OperatorMode, hyper: &HyperParams) -> Result<TrainResult> {
    let prop = build_propagation(&dataset.graph, &dataset.data.features, mode, hyper)?;
    let x = prepare_features(&dataset.data, hyper);
    train_prepared(&prop, &x, &dataset.data, mode, hyper, &dataset.name)
}
