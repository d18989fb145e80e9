//! TOML experiment description.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use trmnet::dataio::{SynthConfig, TIMESTAMP_FORMAT};
use trmnet::pipeline::{PipelineConfig, TrainConfig};
use trmnet::trm::{RoadGeometry, TrmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_interfaces: usize,
    /// Cell length, meters.
    pub dx: f64,
    pub observed: Vec<usize>,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrmSection {
    /// Jam density, vehicles per meter.
    pub rho_max: f64,
    /// Measurement period, seconds.
    pub dt_seconds: f64,
    /// Speed bound, km/h.
    pub v_max_kmh: f64,
    /// Substeps per measurement period; the smallest admissible value when absent.
    pub p_t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub n_past: usize,
    pub n_future: usize,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
}

fn default_reg_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Root seed for initialization, shuffling and synthetic data.
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_days: usize,
    pub steps_per_day: usize,
    pub rate_min: f64,
    pub rate_max: f64,
    pub spatial_smoothness: usize,
    pub period_steps: f64,
    pub density_min: f64,
    pub density_max: f64,
    pub noise_std: f64,
    /// First timestamp, `YYYY-MM-DDTHH:MM:SS`.
    pub start: String,
}

impl Default for SynthSection {
    fn default() -> Self {
        let geometry = RoadGeometry::new(2, 1.0, &[0], &[]).expect("valid placeholder geometry");
        let trm = TrmConfig::new(1.0, 1.0, 1.0, 1.0, None).expect("valid placeholder trm");
        let d = SynthConfig::with_geometry(geometry, trm);
        Self {
            n_days: d.n_days,
            steps_per_day: d.steps_per_day,
            rate_min: d.rate_min,
            rate_max: d.rate_max,
            spatial_smoothness: d.spatial_smoothness,
            period_steps: d.period_steps,
            density_min: d.density_min,
            density_max: d.density_max,
            noise_std: d.noise_std,
            start: d.start.format(TIMESTAMP_FORMAT).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Measurement CSV; synthetic data is generated in memory when absent.
    pub measurements: Option<PathBuf>,
    /// Ground-truth sidecar used for evaluation when present.
    pub ground_truth: Option<PathBuf>,
    /// Train, validation and test fractions of the days.
    pub split: [f64; 3],
    /// Window stride for the training set.
    pub stride: usize,
    pub synth: SynthSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            measurements: None,
            ground_truth: None,
            split: [0.8, 0.1, 0.1],
            stride: 1,
            synth: SynthSection::default(),
        }
    }
}

/// Bare TRM run for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Normalized density of each cell.
    pub initial_density: Vec<f64>,
    /// One rate row per measurement period.
    pub rates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchSection {
    pub n_past: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub geometry: GeometrySection,
    pub trm: TrmSection,
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub data: DataSection,
    pub simulate: Option<SimulateSection>,
    pub gridsearch: Option<GridSearchSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Marks errors in the configuration itself (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")).into())
    }

    /// Load from a file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.data.measurements.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.data.ground_truth.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn geometry(&self) -> Result<RoadGeometry> {
        let g = &self.geometry;
        Ok(RoadGeometry::new(g.n_interfaces, g.dx, &g.observed, &g.hidden)?)
    }

    pub fn trm(&self) -> Result<TrmConfig> {
        let t = &self.trm;
        Ok(TrmConfig::new(
            t.rho_max,
            self.geometry.dx,
            t.dt_seconds,
            t.v_max_kmh / 3.6,
            t.p_t,
        )?)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        self.pipeline_with_past(self.pipeline.n_past)
    }

    pub fn pipeline_with_past(&self, n_past: usize) -> Result<PipelineConfig> {
        let p = &self.pipeline;
        Ok(PipelineConfig::new(
            self.geometry()?,
            self.trm()?,
            n_past,
            p.n_future,
            p.reg_weight,
        )?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            ..TrainConfig::default()
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.data.synth;
        let start = NaiveDateTime::parse_from_str(&s.start, TIMESTAMP_FORMAT)
            .map_err(|e| ConfigError(format!("data.synth.start {:?}: {e}", s.start)))?;
        Ok(SynthConfig {
            n_days: s.n_days,
            steps_per_day: s.steps_per_day,
            rate_min: s.rate_min,
            rate_max: s.rate_max,
            spatial_smoothness: s.spatial_smoothness,
            period_steps: s.period_steps,
            density_min: s.density_min,
            density_max: s.density_max,
            noise_std: s.noise_std,
            seed: self.training.seed,
            start,
            ..SynthConfig::with_geometry(self.geometry()?, self.trm()?)
        })
    }

    pub fn split(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.data.split;
        (a, b, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry]
n_interfaces = 11
dx = 150.0
observed = [0, 2, 5, 10]
hidden = [3, 7]

[trm]
rho_max = 0.2
dt_seconds = 60.0
v_max_kmh = 130.0

[pipeline]
n_past = 10
n_future = 5
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        assert_eq!(cfg.pipeline.reg_weight, 1.0);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.trm().unwrap().p_t, 29);
        assert_eq!(cfg.pipeline().unwrap().n_substeps(), 14 * 29 + 1);
        let s = cfg.synth_config().unwrap();
        assert_eq!(s.noise_std, 0.05);
        assert_eq!(s.measured_interfaces(), vec![0, 2, 3, 5, 7, 10]);
    }

    #[test]
    fn explicit_p_t_below_bound_is_rejected() {
        let text = MINIMAL.replace("v_max_kmh = 130.0", "v_max_kmh = 130.0\np_t = 28");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert!(cfg.trm().is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::parse(&format!("{MINIMAL}\n[training]\nlr = 1.0\n")).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            format!("output_dir = \"res\"\n{MINIMAL}\n[data]\nmeasurements = \"m.csv\"\n"),
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("res"));
        assert_eq!(cfg.data.measurements.unwrap(), dir.path().join("m.csv"));
    }
}
