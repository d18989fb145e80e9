use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::error::{Error, Result};
use crate::neural::{closed_form_counts, count_params, BlockCounts, Flatten, Lstm, Mlp, Srnn};
use crate::seed;

pub const PARAMS_FORMAT: &str = "trmnet-params/1";

/// All trainable weights. The flat vector `theta` concatenates the blocks
/// in the order mlp1, extractor, mlp2, predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub format: String,
    pub seed: u64,
    pub n_interfaces: usize,
    pub n_observed: usize,
    /// `n_o -> 2 n_i -> 2 n_i`, output split into the extractor's `(c, h)`.
    pub mlp1: Mlp,
    /// Input `n_o`, hidden `n_i`.
    pub extractor: Lstm,
    /// `n_o -> n_i - 1 -> n_i - 1`, the initial density.
    pub mlp2: Mlp,
    /// Input, state and output all `n_i`.
    pub predictor: Srnn,
}

impl PipelineParams {
    /// Random initialization from `seed` (the caller passes the "init" sub-seed).
    pub fn init(n_interfaces: usize, n_observed: usize, seed: u64) -> Self {
        let (n_i, n_o) = (n_interfaces, n_observed);
        let mut rng = seed::rng(seed);
        Self {
            format: PARAMS_FORMAT.into(),
            seed,
            n_interfaces,
            n_observed,
            mlp1: Mlp::two_layer(n_o, 2 * n_i, 2 * n_i, &mut rng),
            extractor: Lstm::random(n_o, n_i, &mut rng),
            mlp2: Mlp::two_layer(n_o, n_i - 1, n_i - 1, &mut rng),
            predictor: Srnn::random(n_i, n_i, n_i, &mut rng),
        }
    }

    pub fn for_config(config: &PipelineConfig, seed: u64) -> Self {
        Self::init(config.n_interfaces(), config.n_observed(), seed)
    }

    pub fn zeros(n_interfaces: usize, n_observed: usize) -> Self {
        let (n_i, n_o) = (n_interfaces, n_observed);
        Self {
            format: PARAMS_FORMAT.into(),
            seed: 0,
            n_interfaces,
            n_observed,
            mlp1: Mlp::two_layer_zeros(n_o, 2 * n_i, 2 * n_i),
            extractor: Lstm::zeros(n_o, n_i),
            mlp2: Mlp::two_layer_zeros(n_o, n_i - 1, n_i - 1),
            predictor: Srnn::zeros(n_i, n_i, n_i),
        }
    }

    pub fn n_interfaces(&self) -> usize {
        self.n_interfaces
    }

    pub fn n_params(&self) -> usize {
        self.mlp1.n_params() + self.extractor.n_params() + self.mlp2.n_params() + self.predictor.n_params()
    }

    /// Counts obtained by enumerating every stored weight.
    pub fn block_counts(&self) -> BlockCounts {
        BlockCounts {
            mlp1: count_params(&self.mlp1),
            extractor: count_params(&self.extractor),
            mlp2: count_params(&self.mlp2),
            predictor: count_params(&self.predictor),
            predictor_table: closed_form_counts(self.n_interfaces, self.n_observed).predictor_table,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.n_params());
        Flatten::write_flat(&self.mlp1, &mut theta);
        Flatten::write_flat(&self.extractor, &mut theta);
        Flatten::write_flat(&self.mlp2, &mut theta);
        Flatten::write_flat(&self.predictor, &mut theta);
        theta
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: self.n_params(),
                actual: theta.len(),
            });
        }
        let mut used = Flatten::read_flat(&mut self.mlp1, theta);
        used += Flatten::read_flat(&mut self.extractor, &theta[used..]);
        used += Flatten::read_flat(&mut self.mlp2, &theta[used..]);
        Flatten::read_flat(&mut self.predictor, &theta[used..]);
        Ok(())
    }

    pub fn with_flat(&self, theta: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(theta)?;
        Ok(p)
    }

    pub fn check_shape(&self, config: &PipelineConfig) -> Result<()> {
        if self.n_interfaces != config.n_interfaces() {
            return Err(Error::Dimension {
                context: "parameters vs geometry (interfaces)",
                expected: config.n_interfaces(),
                actual: self.n_interfaces,
            });
        }
        if self.n_observed != config.n_observed() {
            return Err(Error::Dimension {
                context: "parameters vs geometry (observed interfaces)",
                expected: config.n_observed(),
                actual: self.n_observed,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Data(format!("parameter file: {e}")))?;
        if p.format != PARAMS_FORMAT {
            return Err(Error::Data(format!(
                "unsupported parameter format {:?}, expected {PARAMS_FORMAT:?}",
                p.format
            )));
        }
        if p.n_interfaces < 2 || p.n_params() != p.to_flat().len() {
            return Err(Error::Data("parameter file has inconsistent block sizes".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataio::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
