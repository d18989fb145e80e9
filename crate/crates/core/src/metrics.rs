//! Prediction and smoothing error metrics.
//!
//! MAPE is reported in percent. Truth values with `|y| <= epsilon` are
//! excluded from MAPE and counted rather than divided by.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PredictionOutput;
use crate::trm::RoadGeometry;

/// Near-zero truth threshold for MAPE on the dimensionless scale.
pub const DEFAULT_MAPE_EPSILON: f64 = 1e-9;

fn check_shapes(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            context: "metric rows",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::Dimension {
                context: "metric row width",
                expected: t.len(),
                actual: p.len(),
            });
        }
    }
    Ok(())
}

/// Root mean squared difference over all entries.
pub fn rmse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let (sum, n) = pred
        .iter()
        .flatten()
        .zip(truth.iter().flatten())
        .fold((0.0, 0usize), |(s, n), (p, t)| (s + (p - t) * (p - t), n + 1));
    if n == 0 {
        return Err(Error::Data("rmse over zero entries".into()));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeResult {
    pub percent: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Accumulates `|p - t| / |t|` over entries with `|t| > epsilon`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MapeAccumulator {
    sum: f64,
    used: usize,
    excluded: usize,
}

impl MapeAccumulator {
    pub fn push(&mut self, pred: f64, truth: f64, epsilon: f64) {
        if truth.abs() > epsilon {
            self.sum += (pred - truth).abs() / truth.abs();
            self.used += 1;
        } else {
            self.excluded += 1;
        }
    }

    pub fn finish(&self) -> Result<MapeResult> {
        if self.used == 0 {
            return Err(Error::Data(format!(
                "MAPE undefined: all {} entries excluded as near-zero",
                self.excluded
            )));
        }
        Ok(MapeResult {
            percent: 100.0 * self.sum / self.used as f64,
            used: self.used,
            excluded: self.excluded,
        })
    }
}

pub fn mape(pred: &[Vec<f64>], truth: &[Vec<f64>], epsilon: f64) -> Result<MapeResult> {
    check_shapes(pred, truth)?;
    let mut acc = MapeAccumulator::default();
    for (p, t) in pred.iter().flatten().zip(truth.iter().flatten()) {
        acc.push(*p, *t, epsilon);
    }
    acc.finish()
}

/// Truth rows aligned with `PredictionOutput::predicted`; `None` where no
/// measurement exists.
pub type TruthRows = Vec<Vec<Option<f64>>>;

/// MAPE of predicted row `h` (1-based horizon) across all windows, over `interfaces`.
pub fn horizon_mape(
    outputs: &[PredictionOutput],
    truths: &[TruthRows],
    horizons: &[usize],
    interfaces: &[usize],
    epsilon: f64,
) -> Result<BTreeMap<usize, MapeResult>> {
    if outputs.len() != truths.len() {
        return Err(Error::Dimension {
            context: "outputs vs truths",
            expected: truths.len(),
            actual: outputs.len(),
        });
    }
    let mut out = BTreeMap::new();
    for &h in horizons {
        let mut acc = MapeAccumulator::default();
        for (o, t) in outputs.iter().zip(truths) {
            if h == 0 || h > o.predicted.len() || h > t.len() {
                return Err(Error::Config(format!(
                    "horizon {h} outside 1..={}",
                    o.predicted.len().min(t.len())
                )));
            }
            for &i in interfaces {
                if let Some(y) = t[h - 1].get(i).copied().flatten() {
                    acc.push(o.predicted[h - 1][i], y, epsilon);
                }
            }
        }
        out.insert(h, acc.finish()?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceTag {
    Observed,
    Hidden,
    Unobserved,
}

impl InterfaceTag {
    pub fn of(geometry: &RoadGeometry, interface: usize) -> Self {
        if geometry.is_observed(interface) {
            InterfaceTag::Observed
        } else if geometry.is_hidden(interface) {
            InterfaceTag::Hidden
        } else {
            InterfaceTag::Unobserved
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InterfaceTag::Observed => "observed",
            InterfaceTag::Hidden => "hidden",
            InterfaceTag::Unobserved => "unobserved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceMape {
    pub interface: usize,
    pub tag: InterfaceTag,
    pub mape: MapeResult,
}

/// One MAPE per requested interface over every predicted row of every window.
pub fn per_interface_mape(
    outputs: &[PredictionOutput],
    truths: &[TruthRows],
    geometry: &RoadGeometry,
    interfaces: &[usize],
    epsilon: f64,
) -> Result<Vec<InterfaceMape>> {
    if outputs.len() != truths.len() {
        return Err(Error::Dimension {
            context: "outputs vs truths",
            expected: truths.len(),
            actual: outputs.len(),
        });
    }
    interfaces
        .iter()
        .map(|&i| {
            let mut acc = MapeAccumulator::default();
            let mut seen = false;
            for (o, t) in outputs.iter().zip(truths) {
                for (p, tr) in o.predicted.iter().zip(t) {
                    if let Some(y) = tr.get(i).copied().flatten() {
                        seen = true;
                        acc.push(p[i], y, epsilon);
                    }
                }
            }
            if !seen {
                return Err(Error::Data(format!("no truth available at interface {i}")));
            }
            Ok(InterfaceMape {
                interface: i,
                tag: InterfaceTag::of(geometry, i),
                mape: acc.finish()?,
            })
        })
        .collect()
}

/// Inverse standard normal CDF, rational approximation with absolute
/// error below 4.5e-4 on (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must lie in (0, 1)");
    const C0: f64 = 2.515517;
    const C1: f64 = 0.802853;
    const C2: f64 = 0.010328;
    const D1: f64 = 1.432788;
    const D2: f64 = 0.189269;
    const D3: f64 = 0.001308;
    let tail = |q: f64| {
        let t = (-2.0 * q.ln()).sqrt();
        t - (C0 + C1 * t + C2 * t * t) / (1.0 + D1 * t + D2 * t * t + D3 * t * t * t)
    };
    if p < 0.5 {
        -tail(p)
    } else {
        tail(1.0 - p)
    }
}

/// Linear-interpolated sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean and population standard deviation.
fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub fn histogram(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|k| HistogramBin {
            lo: lo + k as f64 * width,
            hi: lo + (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    if width > 0.0 {
        for &v in values {
            let k = (((v - lo) / width).floor() as isize).clamp(0, n_bins as isize - 1) as usize;
            bins[k].count += 1;
        }
    } else if let Some(b) = bins.first_mut() {
        b.count = values.len();
    }
    bins
}

/// Differences between smoothed fluxes and raw measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingStats {
    pub n: usize,
    /// Mean of `smoothed - measured`.
    pub bias: f64,
    pub sd: f64,
    /// `(probability, quantile)` of the differences.
    pub quantiles: Vec<(f64, f64)>,
    /// `(normal quantile at (i - 0.5)/n, i-th smallest standardized difference)`.
    pub qq: Vec<(f64, f64)>,
    pub measurement_mean: f64,
    pub measurement_sd: f64,
    pub smoothed_mean: f64,
    pub smoothed_sd: f64,
    pub measurement_hist: Vec<HistogramBin>,
    pub smoothed_hist: Vec<HistogramBin>,
    pub difference_hist: Vec<HistogramBin>,
}

pub const SMOOTHING_QUANTILES: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];
const HIST_BINS: usize = 40;

pub fn smoothing_stats(smoothed: &[f64], measurements: &[f64]) -> Result<SmoothingStats> {
    if smoothed.len() != measurements.len() {
        return Err(Error::Dimension {
            context: "smoothed vs measurements",
            expected: measurements.len(),
            actual: smoothed.len(),
        });
    }
    let n = smoothed.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "smoothing statistics need at least 2 samples, got {n}"
        )));
    }
    let diffs: Vec<f64> = smoothed.iter().zip(measurements).map(|(s, m)| s - m).collect();
    let (bias, sd) = mean_sd(&diffs);
    let mut sorted = diffs.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = SMOOTHING_QUANTILES
        .iter()
        .map(|&q| (q, quantile_sorted(&sorted, q)))
        .collect();
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let z = inverse_normal_cdf((i as f64 + 0.5) / n as f64);
            let s = if sd > 0.0 { (d - bias) / sd } else { 0.0 };
            (z, s)
        })
        .collect();
    let (measurement_mean, measurement_sd) = mean_sd(measurements);
    let (smoothed_mean, smoothed_sd) = mean_sd(smoothed);
    let (lo, hi) = measurements
        .iter()
        .chain(smoothed)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let dmax = sorted
        .first()
        .map_or(0.0, |v| v.abs())
        .max(sorted.last().map_or(0.0, |v| v.abs()));
    Ok(SmoothingStats {
        n,
        bias,
        sd,
        quantiles,
        qq,
        measurement_mean,
        measurement_sd,
        smoothed_mean,
        smoothed_sd,
        measurement_hist: histogram(measurements, lo, hi, HIST_BINS),
        smoothed_hist: histogram(smoothed, lo, hi, HIST_BINS),
        difference_hist: histogram(&diffs, -dmax, dmax, HIST_BINS),
    })
}

/// Full evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_windows: usize,
    pub rmse: f64,
    pub mape: MapeResult,
    pub horizon_mape: BTreeMap<usize, MapeResult>,
    pub baseline_horizon_mape: BTreeMap<usize, MapeResult>,
    pub baseline_mape: MapeResult,
    pub per_interface: Vec<InterfaceMape>,
    pub observed_mape: Option<f64>,
    pub hidden_mape: Option<f64>,
    pub smoothing: SmoothingStats,
    pub clipped_values: usize,
    pub mape_epsilon: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report: {e}")))
    }

    pub fn per_interface_csv(&self) -> String {
        let mut s = String::from("interface,tag,mape_percent,used,excluded\n");
        for r in &self.per_interface {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.interface,
                r.tag.as_str(),
                r.mape.percent,
                r.mape.used,
                r.mape.excluded
            ));
        }
        s
    }

    pub fn per_horizon_csv(&self) -> String {
        let mut s = String::from("horizon,mape_percent,baseline_mape_percent,used\n");
        for (h, m) in &self.horizon_mape {
            let b = self.baseline_horizon_mape.get(h).map_or(f64::NAN, |b| b.percent);
            s.push_str(&format!("{h},{},{b},{}\n", m.percent, m.used));
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("series,bin_lo,bin_hi,count\n");
        let st = &self.smoothing;
        for (name, bins) in [
            ("measured", &st.measurement_hist),
            ("smoothed", &st.smoothed_hist),
            ("difference", &st.difference_hist),
        ] {
            for b in bins {
                s.push_str(&format!("{name},{},{},{}\n", b.lo, b.hi, b.count));
            }
        }
        s
    }

    pub fn qq_csv(&self) -> String {
        let mut s = String::from("normal_quantile,standardized_difference\n");
        for (z, d) in &self.smoothing.qq {
            s.push_str(&format!("{z},{d}\n"));
        }
        s
    }
}

/// Mean of per-interface MAPE values with the given tag.
pub fn tagged_mean(per_interface: &[InterfaceMape], tag: InterfaceTag) -> Option<f64> {
    let vals: Vec<f64> = per_interface
        .iter()
        .filter(|r| r.tag == tag)
        .map(|r| r.mape.percent)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
