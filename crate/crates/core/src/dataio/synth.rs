//! Synthetic measurements with known ground truth.
//!
//! Each day draws a smooth reaction-rate field (low-order sinusoids in time
//! modulated by smoothed random profiles in space) and a smooth initial
//! density, rolls the TRM forward and samples the flux once per measurement
//! period. Observations add Gaussian noise scaled by the mean noiseless flux
//! at the measured interfaces.

use std::f64::consts::TAU;
use std::path::Path;

use chrono::{NaiveDateTime, NaiveTime, TimeDelta};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    flux_to_count, parse_err, write_atomic, Day, MeasurementSeries, NormalizedSeries, CLIP_LEVEL, TIMESTAMP_FORMAT,
};
use crate::error::{Error, Result};
use crate::metrics::TruthRows;
use crate::seed;
use crate::trm::{trm_rollout, DensityState, RateVector, RoadGeometry, TrmConfig, RATE_BOUND};

/// Margin kept between generated values and the open bounds they must respect.
pub const SYNTH_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub geometry: RoadGeometry,
    pub trm: TrmConfig,
    pub n_days: usize,
    /// Measurement periods per day.
    pub steps_per_day: usize,
    /// Rates stay inside `[rate_min, rate_max]`.
    pub rate_min: f64,
    pub rate_max: f64,
    /// Half-width, in interfaces, of the moving average smoothing the spatial profiles.
    pub spatial_smoothness: usize,
    /// Period of the slowest temporal oscillation, in measurement periods.
    pub period_steps: f64,
    /// Initial densities are drawn inside `[density_min, density_max]`.
    pub density_min: f64,
    pub density_max: f64,
    /// Noise standard deviation as a fraction of the mean noiseless flux.
    pub noise_std: f64,
    pub seed: u64,
    /// Date and time of the first row of day 0.
    pub start: NaiveDateTime,
}

impl SynthConfig {
    /// Defaults on a given geometry and TRM discretization.
    pub fn with_geometry(geometry: RoadGeometry, trm: TrmConfig) -> Self {
        Self {
            geometry,
            trm,
            n_days: 10,
            steps_per_day: 120,
            rate_min: 0.05,
            rate_max: 0.45,
            spatial_smoothness: 2,
            period_steps: 180.0,
            density_min: 0.05,
            density_max: 0.6,
            noise_std: 0.05,
            seed: 0,
            start: super::default_start_date().and_time(NaiveTime::from_hms_opt(7, 0, 0).expect("valid time")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_min >= SYNTH_MARGIN
            && self.rate_min <= self.rate_max
            && self.rate_max <= RATE_BOUND - SYNTH_MARGIN)
        {
            return Err(Error::Config(format!(
                "rate bounds must satisfy {SYNTH_MARGIN} <= rate_min <= rate_max <= {}, got [{}, {}]",
                RATE_BOUND - SYNTH_MARGIN,
                self.rate_min,
                self.rate_max
            )));
        }
        if !(0.0 <= self.density_min && self.density_min <= self.density_max && self.density_max <= 1.0) {
            return Err(Error::Config(format!(
                "density bounds must satisfy 0 <= min <= max <= 1, got [{}, {}]",
                self.density_min, self.density_max
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.period_steps > 0.0 && self.period_steps.is_finite()) {
            return Err(Error::Config(format!(
                "period_steps must be positive, got {}",
                self.period_steps
            )));
        }
        if self.n_days == 0 || self.steps_per_day == 0 {
            return Err(Error::Config("n_days and steps_per_day must be at least 1".into()));
        }
        if (self.geometry.dx() - self.trm.dx).abs() > 1e-12 * self.trm.dx {
            return Err(Error::Config("geometry and TRM disagree on dx".into()));
        }
        Ok(())
    }

    /// Interfaces with a detector column: observed and hidden, sorted.
    pub fn measured_interfaces(&self) -> Vec<usize> {
        let mut v = self.geometry.observed();
        v.extend_from_slice(self.geometry.hidden());
        v.sort_unstable();
        v
    }
}

/// Noiseless state of one synthetic day, one row per measurement period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDay {
    pub id: String,
    pub start: NaiveDateTime,
    /// `T x n_interfaces`, held constant over each period.
    pub rates: Vec<Vec<f64>>,
    /// `T x n_cells`; row `k` is the density the `k`-th flux row is computed on.
    pub densities: Vec<Vec<f64>>,
    /// `T x n_interfaces` dimensionless fluxes.
    pub fluxes: Vec<Vec<f64>>,
}

impl GroundTruthDay {
    pub fn initial_density(&self) -> &[f64] {
        &self.densities[0]
    }

    /// Re-run the TRM from the stored initial density and rates and sample
    /// the flux every `p_t` substeps.
    pub fn replay(&self, p_t: usize) -> Result<Vec<Vec<f64>>> {
        let (fluxes, _) = simulate_periods(self.initial_density(), &self.rates, p_t)?;
        Ok(fluxes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n_interfaces: usize,
    pub p_t: usize,
    pub dt_seconds: f64,
    pub days: Vec<GroundTruthDay>,
}

impl GroundTruth {
    /// Noiseless fluxes per day as truth matrices over every interface.
    pub fn flux_truth(&self) -> Vec<TruthRows> {
        self.days
            .iter()
            .map(|d| d.fluxes.iter().map(|r| r.iter().copied().map(Some).collect()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Vehicle counts at the observed and hidden interfaces.
    pub series: MeasurementSeries,
    /// The same noisy observations as dimensionless flux.
    pub observations: NormalizedSeries,
    pub truth: GroundTruth,
    /// Mean noiseless flux over the measured interfaces.
    pub mean_flux: f64,
    /// Standard deviation of the additive noise, dimensionless.
    pub noise_sigma: f64,
}

/// Moving average of standard normals, rescaled so the largest magnitude is 1.
fn smooth_profile<R: Rng>(n: usize, radius: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let peak = smooth.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        smooth.iter().map(|v| v / peak).collect()
    } else {
        smooth
    }
}

fn day_rates_and_density(cfg: &SynthConfig, day_seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = seed::rng(day_seed);
    let n_i = cfg.geometry.n_interfaces();
    let s1 = smooth_profile(n_i, cfg.spatial_smoothness, &mut rng);
    let s2 = smooth_profile(n_i, cfg.spatial_smoothness, &mut rng);
    let phi1 = rng.random::<f64>() * TAU;
    let phi2 = rng.random::<f64>() * TAU;
    let omega = TAU / cfg.period_steps;
    let mid = 0.5 * (cfg.rate_min + cfg.rate_max);
    let half = 0.5 * (cfg.rate_max - cfg.rate_min);
    let rates = (0..cfg.steps_per_day)
        .map(|t| {
            let t = t as f64;
            let a = (omega * t + phi1).sin();
            let b = (2.0 * omega * t + phi2).sin();
            (0..n_i)
                .map(|i| {
                    let c = mid + half * (0.4 * a + 0.3 * s1[i] * b + 0.3 * s2[i]);
                    c.clamp(cfg.rate_min, cfg.rate_max)
                })
                .collect()
        })
        .collect();
    let u = smooth_profile(n_i - 1, cfg.spatial_smoothness, &mut rng);
    let d_mid = 0.5 * (cfg.density_min + cfg.density_max);
    let d_half = 0.5 * (cfg.density_max - cfg.density_min);
    let density = u
        .iter()
        .map(|v| (d_mid + d_half * v).clamp(cfg.density_min, cfg.density_max))
        .collect();
    (rates, density)
}

/// Flux rows and density rows, one per measurement period.
pub type PeriodSamples = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Roll the TRM over `rates.len()` measurement periods, holding each rate row
/// for `p_t` substeps; returns the flux and density sampled at every period start.
pub fn simulate_periods(initial: &[f64], rates: &[Vec<f64>], p_t: usize) -> Result<PeriodSamples> {
    if rates.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let schedule: Vec<RateVector> = rates
        .iter()
        .map(|r| RateVector::new(r.clone()))
        .collect::<Result<Vec<_>>>()?;
    let n_sub = (rates.len() - 1) * p_t + 1;
    let seq: Vec<RateVector> = (0..n_sub).map(|k| schedule[k / p_t].clone()).collect();
    let init = DensityState::new(initial.to_vec())?;
    let (states, fluxes) = trm_rollout(&init, &seq)?;
    let sampled_fluxes = (0..rates.len()).map(|m| fluxes[m * p_t].values().to_vec()).collect();
    let sampled_densities = (0..rates.len())
        .map(|m| {
            if m == 0 {
                initial.to_vec()
            } else {
                states[m * p_t - 1].values().to_vec()
            }
        })
        .collect();
    Ok((sampled_fluxes, sampled_densities))
}

/// Generate a synthetic dataset; fully determined by `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let p_t = cfg.trm.p_t;
    let rate_root = seed::sub_seed(cfg.seed, "synth");
    let noise_root = seed::sub_seed(cfg.seed, "noise");

    let days: Vec<GroundTruthDay> = (0..cfg.n_days)
        .into_par_iter()
        .map(|d| {
            let (rates, initial) = day_rates_and_density(cfg, seed::indexed_seed(rate_root, d as u64));
            let (fluxes, densities) = simulate_periods(&initial, &rates, p_t)?;
            let start = cfg.start + TimeDelta::days(d as i64);
            Ok(GroundTruthDay {
                id: start.date().to_string(),
                start,
                rates,
                densities,
                fluxes,
            })
        })
        .collect::<Result<_>>()?;

    let columns = cfg.measured_interfaces();
    let mut total = 0.0;
    let mut count = 0usize;
    for day in &days {
        for row in &day.fluxes {
            for &i in &columns {
                total += row[i];
                count += 1;
            }
        }
    }
    let mean_flux = total / count as f64;
    let sigma = cfg.noise_std * mean_flux;

    let obs_days: Vec<Day> = days
        .par_iter()
        .enumerate()
        .map(|(d, day)| {
            let mut rng = seed::rng(seed::indexed_seed(noise_root, d as u64));
            let values = day
                .fluxes
                .iter()
                .map(|row| {
                    columns
                        .iter()
                        .map(|&i| {
                            let f = if sigma > 0.0 {
                                let z: f64 = rng.sample(StandardNormal);
                                (row[i] + sigma * z).clamp(0.0, CLIP_LEVEL)
                            } else {
                                row[i]
                            };
                            Some(f)
                        })
                        .collect()
                })
                .collect();
            Day {
                id: day.id.clone(),
                start: day.start,
                values,
            }
        })
        .collect();

    let count_days = obs_days
        .iter()
        .map(|d| Day {
            id: d.id.clone(),
            start: d.start,
            values: d
                .values
                .iter()
                .map(|row| row.iter().map(|v| v.map(|f| flux_to_count(f, &cfg.trm))).collect())
                .collect(),
        })
        .collect();

    Ok(SynthOutput {
        series: MeasurementSeries {
            dx: cfg.trm.dx,
            dt_seconds: cfg.trm.dt_measure,
            rho_max: cfg.trm.rho_max,
            interfaces: columns.clone(),
            days: count_days,
        },
        observations: NormalizedSeries {
            interfaces: columns,
            days: obs_days,
            clipped: 0,
        },
        truth: GroundTruth {
            n_interfaces: cfg.geometry.n_interfaces(),
            p_t,
            dt_seconds: cfg.trm.dt_measure,
            days,
        },
        mean_flux,
        noise_sigma: sigma,
    })
}

/// Ground-truth sidecar CSV: a `n_interfaces=..,p_t=..,dt_seconds=..` line,
/// then `timestamp,rate_0..,density_0..,flux_0..` rows.
pub fn ground_truth_csv(truth: &GroundTruth) -> String {
    let n_i = truth.n_interfaces;
    let mut s = format!(
        "n_interfaces={},p_t={},dt_seconds={}\ntimestamp",
        n_i, truth.p_t, truth.dt_seconds
    );
    for i in 0..n_i {
        s.push_str(&format!(",rate_{i}"));
    }
    for j in 0..n_i - 1 {
        s.push_str(&format!(",density_{j}"));
    }
    for i in 0..n_i {
        s.push_str(&format!(",flux_{i}"));
    }
    s.push('\n');
    let step = TimeDelta::milliseconds((truth.dt_seconds * 1000.0).round() as i64);
    for day in &truth.days {
        for (r, ((rates, dens), flux)) in day.rates.iter().zip(&day.densities).zip(&day.fluxes).enumerate() {
            s.push_str(&(day.start + step * r as i32).format(TIMESTAMP_FORMAT).to_string());
            for v in rates.iter().chain(dens).chain(flux) {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
    }
    s
}

pub fn save_ground_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    write_atomic(path, ground_truth_csv(truth).as_bytes())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    parse_ground_truth(&std::fs::read_to_string(path)?)
}

pub fn parse_ground_truth(text: &str) -> Result<GroundTruth> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, meta) = lines.next().ok_or_else(|| parse_err(1, "missing metadata line"))?;
    let mut n_i = None;
    let mut p_t = None;
    let mut dt = None;
    for field in meta.trim().split(',') {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("expected key=value, got {field:?}")))?;
        let bad = |_| parse_err(1, format!("bad value for {k}: {v:?}"));
        match k.trim() {
            "n_interfaces" => n_i = Some(v.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "p_t" => p_t = Some(v.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "dt_seconds" => dt = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
            other => return Err(parse_err(1, format!("unknown key {other:?}"))),
        }
    }
    let (n_i, p_t, dt) = match (n_i, p_t, dt) {
        (Some(a), Some(b), Some(c)) if a >= 2 && b >= 1 && c > 0.0 => (a, b, c),
        _ => return Err(parse_err(1, "need n_interfaces >= 2, p_t >= 1, dt_seconds > 0")),
    };
    let width = 1 + n_i + (n_i - 1) + n_i;
    let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing column header"))?;
    if header.trim().split(',').count() != width {
        return Err(parse_err(2, format!("expected {width} columns")));
    }
    let step = TimeDelta::milliseconds((dt * 1000.0).round() as i64);
    let mut days: Vec<GroundTruthDay> = Vec::new();
    let mut last: Option<NaiveDateTime> = None;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_err(
                line_no,
                format!("expected {width} fields, got {}", fields.len()),
            ));
        }
        let ts = NaiveDateTime::parse_from_str(fields[0].trim(), TIMESTAMP_FORMAT)
            .map_err(|e| parse_err(line_no, format!("bad timestamp: {e}")))?;
        let vals: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("not a number: {f:?}")))
            })
            .collect::<Result<_>>()?;
        let same_day = last.is_some_and(|p| p.date() == ts.date());
        if same_day && ts - last.expect("checked") != step {
            return Err(parse_err(line_no, "rows of one day must be one period apart"));
        }
        if !same_day {
            days.push(GroundTruthDay {
                id: ts.date().to_string(),
                start: ts,
                rates: Vec::new(),
                densities: Vec::new(),
                fluxes: Vec::new(),
            });
        }
        let day = days.last_mut().expect("day exists");
        day.rates.push(vals[..n_i].to_vec());
        day.densities.push(vals[n_i..2 * n_i - 1].to_vec());
        day.fluxes.push(vals[2 * n_i - 1..].to_vec());
        last = Some(ts);
    }
    Ok(GroundTruth {
        n_interfaces: n_i,
        p_t,
        dt_seconds: dt,
        days,
    })
}
