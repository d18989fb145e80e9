//! Loop-detector measurements: CSV ingestion, gap filling, normalization to
//! dimensionless flux, day-bounded windowing and day-level splits.
//!
//! CSV layout:
//!
//! ```text
//! dx_meters=150,dt_seconds=60,rho_max_veh_per_m=0.2
//! timestamp,0,4,6,10
//! 2024-01-01T07:00:00,12.5,,13,9
//! ...
//! ```
//!
//! Line 2 lists the interface index of every column (strictly increasing).
//! Data rows hold vehicle counts per measurement period; an empty field is a
//! missing value. Rows of one calendar day must be spaced by exactly
//! `dt_seconds`; a new date starts a new day.

mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

pub use synth::{
    ground_truth_csv, load_ground_truth, parse_ground_truth, save_ground_truth, simulate_periods, synth_generate,
    GroundTruth, GroundTruthDay, SynthConfig, SynthOutput, SYNTH_MARGIN,
};

use crate::error::{Error, Result};
use crate::metrics::TruthRows;
use crate::pipeline::WindowExample;
use crate::trm::{flux_scale, RoadGeometry, TrmConfig, RATE_BOUND};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Largest dimensionless flux kept after normalization.
pub const CLIP_LEVEL: f64 = RATE_BOUND - 1e-6;

/// Write `bytes` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One day of measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Day {
    pub id: String,
    pub start: NaiveDateTime,
    /// `T x n_columns`, `None` where the detector reported nothing.
    pub values: Vec<Vec<Option<f64>>>,
}

impl Day {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn timestamp(&self, row: usize, dt_seconds: f64) -> NaiveDateTime {
        self.start + TimeDelta::milliseconds((row as f64 * dt_seconds * 1000.0).round() as i64)
    }
}

/// Vehicle counts per measurement period at a set of interfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries {
    pub dx: f64,
    pub dt_seconds: f64,
    pub rho_max: f64,
    /// Interface index of each column, strictly increasing.
    pub interfaces: Vec<usize>,
    pub days: Vec<Day>,
}

fn format_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MeasurementSeries {
    pub fn n_rows(&self) -> usize {
        self.days.iter().map(Day::n_rows).sum()
    }

    pub fn column_of(&self, interface: usize) -> Option<usize> {
        self.interfaces.iter().position(|&i| i == interface)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "dx_meters={},dt_seconds={},rho_max_veh_per_m={}\ntimestamp",
            self.dx, self.dt_seconds, self.rho_max
        );
        for i in &self.interfaces {
            s.push_str(&format!(",{i}"));
        }
        s.push('\n');
        for day in &self.days {
            for (r, row) in day.values.iter().enumerate() {
                s.push_str(&day.timestamp(r, self.dt_seconds).format(TIMESTAMP_FORMAT).to_string());
                for v in row {
                    s.push(',');
                    s.push_str(&format_value(*v));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

pub fn load_csv(path: &Path) -> Result<MeasurementSeries> {
    parse_csv(&fs::read_to_string(path)?)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_meta(line: &str) -> Result<(f64, f64, f64)> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    let keys = ["dx_meters", "dt_seconds", "rho_max_veh_per_m"];
    if fields.len() != 3 {
        return Err(parse_err(
            1,
            format!("expected {}", keys.map(|k| format!("{k}=<value>")).join(",")),
        ));
    }
    let mut vals = [0.0; 3];
    for (k, (field, key)) in fields.iter().zip(keys).enumerate() {
        let (name, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("expected {key}=<value>, got {field:?}")))?;
        if name.trim() != key {
            return Err(parse_err(1, format!("expected key {key}, got {:?}", name.trim())));
        }
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(1, format!("{key}: not a number: {value:?}")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(parse_err(1, format!("{key} must be positive, got {v}")));
        }
        vals[k] = v;
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Parse the CSV text described in the module docs.
pub fn parse_csv(text: &str) -> Result<MeasurementSeries> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, meta) = lines.next().ok_or_else(|| parse_err(1, "missing metadata header"))?;
    let (dx, dt_seconds, rho_max) = parse_meta(meta)?;

    let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing column header"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("timestamp") {
        return Err(parse_err(2, "first column must be 'timestamp'"));
    }
    let mut interfaces = Vec::with_capacity(cols.len() - 1);
    for c in &cols[1..] {
        let i: usize = c
            .trim()
            .parse()
            .map_err(|_| parse_err(2, format!("interface index is not an integer: {c:?}")))?;
        if interfaces.last().is_some_and(|&last| i <= last) {
            return Err(parse_err(2, "interface indices must be strictly increasing"));
        }
        interfaces.push(i);
    }
    if interfaces.is_empty() {
        return Err(parse_err(2, "no interface columns"));
    }

    let step = TimeDelta::milliseconds((dt_seconds * 1000.0).round() as i64);
    let mut days: Vec<Day> = Vec::new();
    let mut last_ts: Option<NaiveDateTime> = None;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != interfaces.len() + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, got {}", interfaces.len() + 1, fields.len()),
            ));
        }
        let ts = NaiveDateTime::parse_from_str(fields[0].trim(), TIMESTAMP_FORMAT)
            .map_err(|e| parse_err(line_no, format!("bad timestamp {:?}: {e}", fields[0])))?;
        let mut row = Vec::with_capacity(interfaces.len());
        for f in &fields[1..] {
            let f = f.trim();
            if f.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line_no, format!("not a number: {f:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(line_no, format!("counts must be finite and >= 0, got {v}")));
            }
            row.push(Some(v));
        }
        let same_day = last_ts.is_some_and(|prev| prev.date() == ts.date());
        if same_day {
            let prev = last_ts.expect("checked");
            if ts - prev != step {
                return Err(parse_err(
                    line_no,
                    format!("rows of one day must be {dt_seconds} s apart ({prev} -> {ts})"),
                ));
            }
            days.last_mut().expect("day exists").values.push(row);
        } else {
            if last_ts.is_some_and(|prev| ts <= prev) {
                return Err(parse_err(line_no, "timestamps must increase"));
            }
            days.push(Day {
                id: ts.date().to_string(),
                start: ts,
                values: vec![row],
            });
        }
        last_ts = Some(ts);
    }
    Ok(MeasurementSeries {
        dx,
        dt_seconds,
        rho_max,
        interfaces,
        days,
    })
}

/// Fill gaps by linear interpolation in interface position; gaps outside
/// the outermost reporting detectors copy the nearest one.
pub fn interpolate_missing(series: &MeasurementSeries) -> Result<MeasurementSeries> {
    let pos: Vec<f64> = series.interfaces.iter().map(|&i| i as f64).collect();
    let mut out = series.clone();
    for day in &mut out.days {
        for (r, row) in day.values.iter_mut().enumerate() {
            if row.iter().all(Option::is_some) {
                continue;
            }
            let known: Vec<(f64, f64)> = row.iter().zip(&pos).filter_map(|(v, &x)| v.map(|v| (x, v))).collect();
            if known.len() < 2 {
                return Err(Error::Data(format!(
                    "day {} row {r}: only {} detector(s) reporting, need 2 to interpolate",
                    day.id,
                    known.len()
                )));
            }
            for (v, &x) in row.iter_mut().zip(&pos) {
                if v.is_some() {
                    continue;
                }
                let right = known.iter().position(|&(kx, _)| kx > x);
                *v = Some(match right {
                    None => known[known.len() - 1].1,
                    Some(0) => known[0].1,
                    Some(j) => {
                        let (x0, y0) = known[j - 1];
                        let (x1, y1) = known[j];
                        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
                    }
                });
            }
        }
    }
    Ok(out)
}

/// Dimensionless flux per day, same column layout as the source series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub interfaces: Vec<usize>,
    pub days: Vec<Day>,
    /// Values clipped down to [`CLIP_LEVEL`].
    pub clipped: usize,
}

impl NormalizedSeries {
    /// Per-day `T x n_interfaces` matrices with `None` where no column exists.
    pub fn full_width(&self, n_interfaces: usize) -> Vec<TruthRows> {
        self.days
            .iter()
            .map(|d| {
                d.values
                    .iter()
                    .map(|row| {
                        let mut full = vec![None; n_interfaces];
                        for (v, &i) in row.iter().zip(&self.interfaces) {
                            if i < n_interfaces {
                                full[i] = *v;
                            }
                        }
                        full
                    })
                    .collect()
            })
            .collect()
    }
}

/// Count per period -> dimensionless flux: `(count / dT) / flux_scale`.
pub fn count_to_flux(count: f64, trm: &TrmConfig) -> f64 {
    (count / trm.dt_measure) / flux_scale(trm)
}

/// Inverse of [`count_to_flux`].
pub fn flux_to_count(flux: f64, trm: &TrmConfig) -> f64 {
    flux * flux_scale(trm) * trm.dt_measure
}

/// Convert counts to dimensionless flux, clipping at [`CLIP_LEVEL`].
pub fn normalize(series: &MeasurementSeries, trm: &TrmConfig) -> Result<NormalizedSeries> {
    if (series.dt_seconds - trm.dt_measure).abs() > 1e-9 * trm.dt_measure {
        return Err(Error::Config(format!(
            "series period {} s differs from configured dT {} s",
            series.dt_seconds, trm.dt_measure
        )));
    }
    let mut clipped = 0;
    let days = series
        .days
        .iter()
        .map(|d| Day {
            id: d.id.clone(),
            start: d.start,
            values: d
                .values
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| {
                            v.map(|c| {
                                let f = count_to_flux(c, trm);
                                if f > CLIP_LEVEL {
                                    clipped += 1;
                                    CLIP_LEVEL
                                } else {
                                    f
                                }
                            })
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(NormalizedSeries {
        interfaces: series.interfaces.clone(),
        days,
        clipped,
    })
}

/// Window start rows of a day with `n_rows` rows.
pub fn window_starts(n_rows: usize, window: usize, stride: usize) -> impl Iterator<Item = usize> {
    let last = n_rows.checked_sub(window);
    (0..=last.unwrap_or(0))
        .step_by(stride.max(1))
        .take_while(move |_| last.is_some())
}

/// Examples over the observed interfaces; windows stay inside a day.
pub fn window_examples(
    series: &NormalizedSeries,
    geometry: &RoadGeometry,
    n_past: usize,
    n_future: usize,
    stride: usize,
) -> Result<Vec<WindowExample>> {
    if stride == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    let observed = geometry.observed();
    let cols: Vec<usize> = observed
        .iter()
        .map(|&i| {
            series
                .interfaces
                .iter()
                .position(|&c| c == i)
                .ok_or_else(|| Error::Data(format!("no data column for observed interface {i}")))
        })
        .collect::<Result<_>>()?;
    let window = n_past + n_future;
    let mut out = Vec::new();
    for day in &series.days {
        for start in window_starts(day.n_rows(), window, stride) {
            let rows = day.values[start..start + window]
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    cols.iter()
                        .map(|&c| {
                            row[c].ok_or_else(|| {
                                Error::Data(format!(
                                    "day {} row {}: missing value at interface {} (interpolate first)",
                                    day.id,
                                    start + r,
                                    series.interfaces[c]
                                ))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(WindowExample::from_window(rows, n_past)?);
        }
    }
    Ok(out)
}

/// Future truth rows for every window, in the same order as [`window_examples`].
pub fn window_truths(days: &[TruthRows], n_past: usize, n_future: usize, stride: usize) -> Vec<TruthRows> {
    let window = n_past + n_future;
    let mut out = Vec::new();
    for day in days {
        for start in window_starts(day.len(), window, stride) {
            out.push(day[start + n_past..start + window].to_vec());
        }
    }
    out
}

/// Contiguous day-level split with day counts rounded from `fractions`.
pub fn split_by_days<T: Clone>(days: &[T], fractions: (f64, f64, f64)) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0,1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = days.len();
    let n_train = (a * n as f64).round() as usize;
    let n_valid = ((b * n as f64).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_valid);
    for (frac, count, name) in [
        (a, n_train, "training"),
        (b, n_valid, "validation"),
        (c, n_test, "test"),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::Data(format!("too few days ({n}) for a non-empty {name} split")));
        }
    }
    Ok((
        days[..n_train].to_vec(),
        days[n_train..n_train + n_valid].to_vec(),
        days[n_train + n_valid..].to_vec(),
    ))
}

/// Split a measurement series by days.
pub fn split_series(
    series: &MeasurementSeries,
    fractions: (f64, f64, f64),
) -> Result<(MeasurementSeries, MeasurementSeries, MeasurementSeries)> {
    let (tr, va, te) = split_by_days(&series.days, fractions)?;
    let with = |days| MeasurementSeries { days, ..series.clone() };
    Ok((with(tr), with(va), with(te)))
}

/// First day of a calendar-consecutive synthetic dataset.
pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date")
}

#[cfg(test)]
mod tests;
