//! Labeled SBM datasets with class-correlated bag-of-words features, for
//! end-to-end runs without external data.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sbm_generate, Label, NodeData, SbmParams, Splits};
use crate::io::Dataset;
use crate::rng::{SeedStream, SBM};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sbm: SbmParams,
    pub feature_dim: usize,
    /// Words drawn per node (duplicates collapse).
    pub words_per_node: usize,
    /// Probability that a word comes from the node's class vocabulary rather
    /// than the whole vocabulary.
    pub signal: f64,
    pub train_per_class: usize,
    pub val_size: usize,
}

impl SyntheticConfig {
    pub fn new(sbm: SbmParams) -> Self {
        SyntheticConfig {
            sbm,
            feature_dim: 200,
            words_per_node: 10,
            signal: 0.3,
            train_per_class: 20,
            val_size: 100,
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.sbm.k();
        if self.feature_dim < k {
            return Err(Error::InvalidParameter(format!(
                "feature_dim {} smaller than {k} classes",
                self.feature_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::InvalidParameter(format!("signal {}", self.signal)));
        }
        if self.train_per_class * k + self.val_size >= self.sbm.n() {
            return Err(Error::InvalidParameter(
                "train and validation sets leave no test nodes".into(),
            ));
        }
        Ok(())
    }
}

/// Sample graph, features, labels (the planted communities) and splits.
pub fn sbm_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (graph, community) = sbm_generate(&cfg.sbm);
    let n = cfg.sbm.n();
    let k = cfg.sbm.k();
    let root = SeedStream::root(cfg.sbm.seed()).stream(SBM);
    let mut rng = root.index(1).rng();
    let block = cfg.feature_dim / k;
    let mut rows = Vec::with_capacity(n);
    for &c in &community {
        let mut words: Vec<u32> = (0..cfg.words_per_node)
            .map(|_| {
                if rng.gen::<f64>() < cfg.signal {
                    (c * block + rng.gen_range(0..block)) as u32
                } else {
                    rng.gen_range(0..cfg.feature_dim) as u32
                }
            })
            .collect();
        words.sort_unstable();
        words.dedup();
        rows.push(words.into_iter().map(|w| (w, 1.0)).collect());
    }
    let features = CsrMatrix::from_row_entries(n, cfg.feature_dim, rows);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut root.index(2).rng());
    let mut per_class = vec![0; k];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for i in order {
        if per_class[community[i]] < cfg.train_per_class {
            per_class[community[i]] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    let test = rest.split_off(cfg.val_size);
    let val = rest;
    let labels = community.iter().map(|&c| Label::class(c)).collect();
    let data = NodeData::new(features, labels, k, Splits { train, val, test })?;
    Ok(Dataset {
        name: format!("sbm-{}-{}", n, k),
        graph,
        data,
    })
}
