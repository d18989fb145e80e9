//! The full prediction network: MLP1-initialized LSTM extractor, SRNN
//! predictor, piecewise-constant rate upsampling and the TRM rollout.
//!
//! Given `n_past` rows of dimensionless flux at the observed interfaces, the
//! extractor estimates reaction rates for those rows at every interface, the
//! predictor extends them `n_future` rows ahead, and the TRM turns the rates
//! into fluxes. The first `n_past` sampled flux rows are the smoothed
//! re-estimate of the input, the last `n_future` the prediction.

mod evaluate;
mod params;
mod record;
mod train;

use serde::{Deserialize, Serialize};

pub use evaluate::{baseline_outputs, evaluate, predict_all};
pub use params::{PipelineParams, PARAMS_FORMAT};
pub use record::{record_example, ExampleNodes};
pub use train::{
    load_checkpoint, save_checkpoint, train, validation_metrics, AdamState, Checkpoint, EpochRecord, History,
    TrainConfig, Trainer,
};

use crate::error::{Error, Result};
use crate::trm::{trm_rollout, DensityState, RateVector, RoadGeometry, TrmConfig, RATE_BOUND};

/// Factor mapping a sigmoid output in `[0, 1]` to a rate strictly below 1/2.
///
/// `0.5 * (1 - 2^-52)` is the largest product that stays below 1/2 even
/// when the sigmoid saturates to exactly 1.0 in floating point.
pub const RATE_SCALE: f64 = RATE_BOUND * (1.0 - f64::EPSILON);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub geometry: RoadGeometry,
    pub trm: TrmConfig,
    pub n_past: usize,
    pub n_future: usize,
    /// Weight of the spatial rate-variation regularizer.
    pub reg_weight: f64,
}

impl PipelineConfig {
    pub fn new(
        geometry: RoadGeometry,
        trm: TrmConfig,
        n_past: usize,
        n_future: usize,
        reg_weight: f64,
    ) -> Result<Self> {
        if n_past < 1 || n_future < 1 {
            return Err(Error::Config(format!(
                "n_past and n_future must be at least 1 (got {n_past}, {n_future})"
            )));
        }
        if !(reg_weight >= 0.0 && reg_weight.is_finite()) {
            return Err(Error::Config(format!("reg_weight must be >= 0, got {reg_weight}")));
        }
        if (geometry.dx() - trm.dx).abs() > 1e-12 * trm.dx {
            return Err(Error::Config(format!(
                "geometry dx {} differs from TRM dx {}",
                geometry.dx(),
                trm.dx
            )));
        }
        Ok(Self {
            geometry,
            trm,
            n_past,
            n_future,
            reg_weight,
        })
    }

    pub fn n_interfaces(&self) -> usize {
        self.geometry.n_interfaces()
    }

    pub fn n_observed(&self) -> usize {
        self.geometry.n_observed()
    }

    /// Rows of the window, `n_past + n_future`.
    pub fn n_rows(&self) -> usize {
        self.n_past + self.n_future
    }

    /// TRM steps in one rollout, `(n_past + n_future - 1) p_t + 1`.
    pub fn n_substeps(&self) -> usize {
        (self.n_rows() - 1) * self.trm.p_t + 1
    }
}

/// One training example: `past` (n_past x n_obs) and `target`
/// ((n_past + n_future) x n_obs) whose first `n_past` rows equal `past`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowExample {
    pub past: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

impl WindowExample {
    /// Build from the full window; `past` is its first `n_past` rows.
    pub fn from_window(window: Vec<Vec<f64>>, n_past: usize) -> Result<Self> {
        if n_past == 0 || n_past > window.len() {
            return Err(Error::Dimension {
                context: "window length vs n_past",
                expected: n_past,
                actual: window.len(),
            });
        }
        let ex = Self {
            past: window[..n_past].to_vec(),
            target: window,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.len() < self.past.len() || self.target[..self.past.len()] != self.past[..] {
            return Err(Error::Data("window target does not start with the past rows".into()));
        }
        let width = self.past.first().map_or(0, Vec::len);
        for row in &self.target {
            if row.len() != width {
                return Err(Error::Dimension {
                    context: "window row width",
                    expected: width,
                    actual: row.len(),
                });
            }
            for &v in row {
                if !(0.0..RATE_BOUND).contains(&v) {
                    return Err(Error::Data(format!("window flux {v} outside [0, 1/2)")));
                }
            }
        }
        Ok(())
    }

    pub fn future(&self) -> &[Vec<f64>] {
        &self.target[self.past.len()..]
    }
}

/// Everything the network produces for one input window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    /// `(n_past + n_future) x n_i` reaction rates, one row per measurement period.
    pub rates: Vec<Vec<f64>>,
    /// Density on which each substep flux row is evaluated; row 0 is the initial state.
    pub densities: Vec<Vec<f64>>,
    /// `n_substeps x n_i` dimensionless fluxes.
    pub fluxes_sub: Vec<Vec<f64>>,
    /// Flux rows sampled at `k p_t`, `k < n_past`.
    pub smoothed: Vec<Vec<f64>>,
    /// Flux rows sampled at `k p_t`, `n_past <= k < n_past + n_future`.
    pub predicted: Vec<Vec<f64>>,
}

/// LSTM state `(c, h)` after the last observed row.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn check_past(config: &PipelineConfig, past: &[Vec<f64>]) -> Result<()> {
    if past.len() != config.n_past {
        return Err(Error::Dimension {
            context: "past rows",
            expected: config.n_past,
            actual: past.len(),
        });
    }
    let n_o = config.n_observed();
    for row in past {
        if row.len() != n_o {
            return Err(Error::Dimension {
                context: "past row width",
                expected: n_o,
                actual: row.len(),
            });
        }
        for &v in row {
            if !(0.0..RATE_BOUND).contains(&v) {
                return Err(Error::Domain {
                    what: "observed flux (must be in [0, 1/2))",
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Extractor: rates for the observed rows plus the final LSTM state.
pub fn extract_rates(params: &PipelineParams, past: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, LstmState)> {
    let first = past.first().ok_or(Error::Dimension {
        context: "past rows",
        expected: 1,
        actual: 0,
    })?;
    let n_i = params.n_interfaces();
    let init = params.mlp1.forward(first)?;
    let mut c = init[..n_i].to_vec();
    let mut h = init[n_i..].to_vec();
    let mut rates = Vec::with_capacity(past.len());
    for row in past {
        let (c2, h2) = params.extractor.step(&c, &h, row)?;
        rates.push(h2.iter().map(|v| v * RATE_SCALE).collect());
        c = c2;
        h = h2;
    }
    Ok((rates, LstmState { c, h }))
}

/// Predictor: `n_future` rate rows from the SRNN fed with zeros, seeded by `h`.
pub fn predict_rates(params: &PipelineParams, state: &LstmState, n_future: usize) -> Result<Vec<Vec<f64>>> {
    let zeros = vec![0.0; params.predictor.input_size()];
    let mut s = state.h.clone();
    let mut rates = Vec::with_capacity(n_future);
    for _ in 0..n_future {
        let (s2, y) = params.predictor.step(&s, &zeros)?;
        rates.push(y.iter().map(|v| v * RATE_SCALE).collect());
        s = s2;
    }
    Ok(rates)
}

/// Initial TRM density from the first observation row.
pub fn init_density(params: &PipelineParams, first_obs: &[f64]) -> Result<DensityState> {
    DensityState::new(params.mlp2.forward(first_obs)?)
}

/// Hold each rate row for `p_t` substeps; the last substep takes the last row.
pub fn upsample_rates(rates: &[Vec<f64>], p_t: usize) -> Vec<Vec<f64>> {
    if rates.is_empty() {
        return Vec::new();
    }
    let n_sub = (rates.len() - 1) * p_t + 1;
    (0..n_sub).map(|k| rates[k / p_t].clone()).collect()
}

/// Run the whole network on one window of past observations.
pub fn forward(config: &PipelineConfig, params: &PipelineParams, past: &[Vec<f64>]) -> Result<PredictionOutput> {
    check_past(config, past)?;
    params.check_shape(config)?;
    let (mut rates, state) = extract_rates(params, past)?;
    rates.extend(predict_rates(params, &state, config.n_future)?);
    let u0 = init_density(params, &past[0])?;

    let sub = upsample_rates(&rates, config.trm.p_t);
    let rate_vectors = sub.into_iter().map(RateVector::new).collect::<Result<Vec<_>>>()?;
    let (states, fluxes) = trm_rollout(&u0, &rate_vectors)?;

    let mut densities = Vec::with_capacity(fluxes.len());
    densities.push(u0.into_inner());
    densities.extend(states.into_iter().take(fluxes.len() - 1).map(DensityState::into_inner));
    let fluxes_sub: Vec<Vec<f64>> = fluxes.into_iter().map(|f| f.into_inner()).collect();
    let sampled: Vec<Vec<f64>> = (0..config.n_rows())
        .map(|k| fluxes_sub[k * config.trm.p_t].clone())
        .collect();
    let predicted = sampled[config.n_past..].to_vec();
    let mut smoothed = sampled;
    smoothed.truncate(config.n_past);
    Ok(PredictionOutput {
        rates,
        densities,
        fluxes_sub,
        smoothed,
        predicted,
    })
}

/// Mean cost over a batch: smoothing error, prediction error (observed
/// interfaces only) and the weighted rate-variation regularizer.
pub fn loss(config: &PipelineConfig, params: &PipelineParams, examples: &[WindowExample]) -> Result<f64> {
    record::batch_loss(config, params, examples, false).map(|(l, _)| l)
}

/// Batch loss and its gradient with respect to the flat parameter vector.
pub fn loss_and_grad(
    config: &PipelineConfig,
    params: &PipelineParams,
    examples: &[WindowExample],
) -> Result<(f64, Vec<f64>)> {
    record::batch_loss(config, params, examples, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Repeat the last observed row `n_future` times.
pub fn baseline_last_value(past: &[Vec<f64>], n_future: usize) -> Result<Vec<Vec<f64>>> {
    let last = past.last().ok_or(Error::Dimension {
        context: "past rows",
        expected: 1,
        actual: 0,
    })?;
    Ok(vec![last.clone(); n_future])
}
