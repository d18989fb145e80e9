//! Evaluation of a trained network on a set of windows.

use rayon::prelude::*;

use super::{baseline_last_value, forward, PipelineConfig, PipelineParams, PredictionOutput, WindowExample};
use crate::error::{Error, Result};
use crate::metrics::{
    horizon_mape, per_interface_mape, rmse, smoothing_stats, tagged_mean, EvalReport, InterfaceTag, MapeAccumulator,
    TruthRows,
};

/// Run the network on every window.
pub fn predict_all(
    config: &PipelineConfig,
    params: &PipelineParams,
    examples: &[WindowExample],
) -> Result<Vec<PredictionOutput>> {
    examples
        .par_iter()
        .map(|ex| forward(config, params, &ex.past))
        .collect()
}

/// Last-known-measurement predictions laid out like [`PredictionOutput::predicted`];
/// interfaces without a measurement hold NaN.
pub fn baseline_outputs(config: &PipelineConfig, examples: &[WindowExample]) -> Result<Vec<PredictionOutput>> {
    let observed = config.geometry.observed();
    examples
        .iter()
        .map(|ex| {
            let rows = baseline_last_value(&ex.past, config.n_future)?;
            let predicted = rows
                .iter()
                .map(|r| {
                    let mut full = vec![f64::NAN; config.n_interfaces()];
                    for (&i, &v) in observed.iter().zip(r) {
                        full[i] = v;
                    }
                    full
                })
                .collect();
            Ok(PredictionOutput {
                rates: Vec::new(),
                densities: Vec::new(),
                fluxes_sub: Vec::new(),
                smoothed: Vec::new(),
                predicted,
            })
        })
        .collect()
}

/// Evaluate `params` on `examples`.
///
/// `truths[w]` holds the `n_future` truth rows of window `w` over all
/// interfaces (`None` where unknown); MAPE figures use it, while RMSE and
/// the smoothing statistics compare against the windows' own measurements
/// at the observed interfaces.
pub fn evaluate(
    config: &PipelineConfig,
    params: &PipelineParams,
    examples: &[WindowExample],
    truths: &[TruthRows],
    clipped_values: usize,
    epsilon: f64,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Data("evaluation needs at least one window".into()));
    }
    if truths.len() != examples.len() {
        return Err(Error::Dimension {
            context: "truth windows",
            expected: examples.len(),
            actual: truths.len(),
        });
    }
    let outputs = predict_all(config, params, examples)?;
    let observed = config.geometry.observed();
    let n_i = config.n_interfaces();

    let mut pred_rows = Vec::new();
    let mut meas_rows = Vec::new();
    let mut smoothed = Vec::new();
    let mut measured = Vec::new();
    for (o, ex) in outputs.iter().zip(examples) {
        for (p, m) in o.predicted.iter().zip(ex.future()) {
            pred_rows.push(observed.iter().map(|&i| p[i]).collect::<Vec<_>>());
            meas_rows.push(m.clone());
        }
        for (s, m) in o.smoothed.iter().zip(&ex.past) {
            for (&i, &v) in observed.iter().zip(m) {
                smoothed.push(s[i]);
                measured.push(v);
            }
        }
    }

    let horizons: Vec<usize> = (1..=config.n_future).collect();
    let baseline = baseline_outputs(config, examples)?;
    let mut overall = MapeAccumulator::default();
    let mut base_overall = MapeAccumulator::default();
    for ((o, b), t) in outputs.iter().zip(&baseline).zip(truths) {
        for ((p, bp), tr) in o.predicted.iter().zip(&b.predicted).zip(t) {
            for &i in &observed {
                if let Some(y) = tr.get(i).copied().flatten() {
                    overall.push(p[i], y, epsilon);
                    base_overall.push(bp[i], y, epsilon);
                }
            }
        }
    }
    let with_truth: Vec<usize> = (0..n_i)
        .filter(|&i| truths.iter().flatten().any(|r| r.get(i).copied().flatten().is_some()))
        .collect();
    let per_interface = per_interface_mape(&outputs, truths, &config.geometry, &with_truth, epsilon)?;

    Ok(EvalReport {
        n_windows: examples.len(),
        rmse: rmse(&pred_rows, &meas_rows)?,
        mape: overall.finish()?,
        horizon_mape: horizon_mape(&outputs, truths, &horizons, &observed, epsilon)?,
        baseline_horizon_mape: horizon_mape(&baseline, truths, &horizons, &observed, epsilon)?,
        baseline_mape: base_overall.finish()?,
        observed_mape: tagged_mean(&per_interface, InterfaceTag::Observed),
        hidden_mape: tagged_mean(&per_interface, InterfaceTag::Hidden),
        per_interface,
        smoothing: smoothing_stats(&smoothed, &measured)?,
        clipped_values,
        mape_epsilon: epsilon,
    })
}
