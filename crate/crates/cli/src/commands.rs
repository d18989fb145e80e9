//! One function per subcommand. Every file is written through a
//! temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use trmnet::dataio::{
    interpolate_missing, load_csv, load_ground_truth, normalize, save_ground_truth, simulate_periods, split_by_days,
    synth_generate, window_examples, window_truths, write_atomic, GroundTruth, NormalizedSeries, TIMESTAMP_FORMAT,
};
use trmnet::metrics::{EvalReport, TruthRows, DEFAULT_MAPE_EPSILON};
use trmnet::neural::{closed_form_counts, BlockCounts};
use trmnet::pipeline::{
    evaluate, load_checkpoint, predict_all, save_checkpoint, validation_metrics, History, PipelineConfig,
    PipelineParams, Trainer, WindowExample,
};
use trmnet::seed;

use crate::config::{ConfigError, ExperimentConfig};

pub const CHECKPOINT_FILE: &str = "checkpoints/checkpoint.json";
pub const BEST_PARAMS_FILE: &str = "checkpoints/best_params.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MEASUREMENTS_FILE: &str = "data/measurements.csv";
pub const GROUND_TRUTH_FILE: &str = "data/ground_truth.csv";
pub const SIMULATION_FILE: &str = "simulation.csv";

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// Windows of every split plus the truth rows of the test windows.
pub struct Prepared {
    pub config: PipelineConfig,
    pub train: Vec<WindowExample>,
    pub valid: Vec<WindowExample>,
    pub test: Vec<WindowExample>,
    pub test_truths: Vec<TruthRows>,
    pub clipped: usize,
}

/// Normalized observations and, when known, the noiseless ground truth.
pub fn load_observations(cfg: &ExperimentConfig) -> Result<(NormalizedSeries, Option<GroundTruth>)> {
    let trm = cfg.trm()?;
    match &cfg.data.measurements {
        Some(path) => {
            let series = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
            if (series.dx - trm.dx).abs() > 1e-9 * trm.dx || (series.rho_max - trm.rho_max).abs() > 1e-12 {
                return Err(ConfigError(format!(
                    "{} was recorded with dx={} m, rho_max={}; config has dx={}, rho_max={}",
                    path.display(),
                    series.dx,
                    series.rho_max,
                    trm.dx,
                    trm.rho_max
                ))
                .into());
            }
            let filled = interpolate_missing(&series)?;
            let normalized = normalize(&filled, &trm)?;
            let truth = match &cfg.data.ground_truth {
                Some(p) => Some(load_ground_truth(p).with_context(|| format!("loading {}", p.display()))?),
                None => None,
            };
            Ok((normalized, truth))
        }
        None => {
            let out = synth_generate(&cfg.synth_config()?)?;
            Ok((out.observations, Some(out.truth)))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig, n_past: usize) -> Result<Prepared> {
    let config = cfg.pipeline_with_past(n_past)?;
    let (obs, truth) = load_observations(cfg)?;
    let split = cfg.split();
    let (tr, va, te) = split_by_days(&obs.days, split)?;
    let with_days = |days| NormalizedSeries {
        interfaces: obs.interfaces.clone(),
        days,
        clipped: 0,
    };
    let (n_p, n_f) = (config.n_past, config.n_future);
    let train = window_examples(&with_days(tr), &config.geometry, n_p, n_f, cfg.data.stride)?;
    let valid = window_examples(&with_days(va), &config.geometry, n_p, n_f, 1)?;
    let test_series = with_days(te);
    let test = window_examples(&test_series, &config.geometry, n_p, n_f, 1)?;
    let test_truth_days = match &truth {
        Some(gt) => {
            if gt.n_interfaces != config.n_interfaces() {
                bail!(ConfigError("ground truth and geometry disagree on n_interfaces".into()));
            }
            let ids: Vec<&str> = gt.days.iter().map(|d| d.id.as_str()).collect();
            let obs_ids: Vec<&str> = obs.days.iter().map(|d| d.id.as_str()).collect();
            if ids != obs_ids {
                return Err(trmnet::Error::Data("ground-truth days do not match the measurement days".into()).into());
            }
            split_by_days(&gt.flux_truth(), split)?.2
        }
        None => test_series.full_width(config.n_interfaces()),
    };
    let test_truths = window_truths(&test_truth_days, n_p, n_f, 1);
    Ok(Prepared {
        config,
        train,
        valid,
        test,
        test_truths,
        clipped: obs.clipped,
    })
}

pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = synth_generate(&cfg.synth_config()?)?;
    data.series.save_csv(&out.join(MEASUREMENTS_FILE))?;
    save_ground_truth(&data.truth, &out.join(GROUND_TRUTH_FILE))?;
    eprintln!(
        "synth: {} days x {} rows, mean flux {:.6}, noise sd {:.6}",
        data.truth.days.len(),
        cfg.data.synth.steps_per_day,
        data.mean_flux,
        data.noise_sigma
    );
    Ok(())
}

fn row_csv(prefix: &str, values: &[f64]) -> String {
    let mut s = prefix.to_string();
    for v in values {
        write!(s, ",{v}").expect("writing to a String");
    }
    s.push('\n');
    s
}

fn indexed_header(first: &str, groups: &[(&str, usize)]) -> String {
    let mut s = first.to_string();
    for (name, n) in groups {
        for i in 0..*n {
            write!(s, ",{name}_{i}").expect("writing to a String");
        }
    }
    s.push('\n');
    s
}

/// Replay a stored ground truth, or the `[simulate]` section when `ground_truth` is `None`.
pub fn simulate(cfg: &ExperimentConfig, ground_truth: Option<&Path>, out: &Path) -> Result<()> {
    let trm = cfg.trm()?;
    let text = match ground_truth {
        Some(path) => {
            let gt = load_ground_truth(path).with_context(|| format!("loading {}", path.display()))?;
            let mut s = indexed_header("timestamp", &[("flux", gt.n_interfaces)]);
            let step = chrono::TimeDelta::milliseconds((gt.dt_seconds * 1000.0).round() as i64);
            for day in &gt.days {
                for (r, row) in day.replay(gt.p_t)?.iter().enumerate() {
                    let ts = (day.start + step * r as i32).format(TIMESTAMP_FORMAT).to_string();
                    s.push_str(&row_csv(&ts, row));
                }
            }
            s
        }
        None => {
            let sim = cfg
                .simulate
                .as_ref()
                .ok_or_else(|| ConfigError("simulate needs a [simulate] section or --ground-truth".into()))?;
            let n_i = cfg.geometry.n_interfaces;
            if sim.initial_density.len() + 1 != n_i || sim.rates.iter().any(|r| r.len() != n_i) {
                bail!(ConfigError(format!(
                    "[simulate] needs {} densities and rate rows of length {n_i}",
                    n_i - 1
                )));
            }
            if sim.rates.is_empty() {
                bail!(ConfigError("[simulate] needs at least one rate row".into()));
            }
            let (fluxes, densities) = simulate_periods(&sim.initial_density, &sim.rates, trm.p_t)?;
            let mut s = indexed_header("period", &[("flux", n_i), ("density", n_i - 1)]);
            for (m, (f, d)) in fluxes.iter().zip(&densities).enumerate() {
                let vals: Vec<f64> = f.iter().chain(d).copied().collect();
                s.push_str(&row_csv(&m.to_string(), &vals));
            }
            s
        }
    };
    write_text(&out.join(SIMULATION_FILE), &text)
}

/// Train and write the checkpoint, best parameters and history under `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<(PipelineParams, History)> {
    train_with_past(cfg, cfg.pipeline.n_past, out, resume)
}

fn train_with_past(
    cfg: &ExperimentConfig,
    n_past: usize,
    out: &Path,
    resume: bool,
) -> Result<(PipelineParams, History)> {
    let data = prepare(cfg, n_past)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut trainer = if resume && ckpt_path.exists() {
        let mut ckpt = load_checkpoint(&ckpt_path)?;
        let wanted = cfg.train_config();
        ckpt.train_config.max_epochs = wanted.max_epochs;
        if ckpt.train_config != wanted {
            bail!(ConfigError(
                "checkpoint was written with a different [training] section".into()
            ));
        }
        Trainer::resume(&data.config, ckpt, &data.train, &data.valid)?
    } else {
        let params = PipelineParams::for_config(&data.config, seed::sub_seed(cfg.training.seed, "init"));
        Trainer::new(&data.config, params, &data.train, &data.valid, cfg.train_config())?
    };
    eprintln!(
        "train: {} train / {} validation windows, {} parameters",
        data.train.len(),
        data.valid.len(),
        trainer.checkpoint().params.n_params()
    );
    while !trainer.is_finished() {
        let r = trainer.run_epoch()?.clone();
        eprintln!(
            "epoch {:>4}  train {:.4e}  valid {:.4e}  rmse {:.4e}  mape {:.2}%",
            r.epoch, r.train_loss, r.valid_loss, r.valid_rmse, r.valid_mape
        );
        save_checkpoint(trainer.checkpoint(), &ckpt_path)?;
    }
    let (best, history) = trainer.finish();
    best.save(&out.join(BEST_PARAMS_FILE))?;
    write_text(&out.join(HISTORY_FILE), &history.to_csv())?;
    Ok((best, history))
}

fn load_params(out: &Path, params: Option<&Path>) -> Result<PipelineParams> {
    let path = params
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(BEST_PARAMS_FILE));
    PipelineParams::load(&path).with_context(|| format!("loading parameters from {}", path.display()))
}

fn matrix_csv<'a>(n_cols: usize, name: &str, blocks: impl Iterator<Item = &'a [Vec<f64>]>) -> String {
    let mut s = indexed_header("window,row", &[(name, n_cols)]);
    for (w, rows) in blocks.enumerate() {
        for (r, row) in rows.iter().enumerate() {
            s.push_str(&row_csv(&format!("{w},{r}"), row));
        }
    }
    s
}

/// Run the network on the test windows and write its outputs as CSV.
pub fn predict(cfg: &ExperimentConfig, params: Option<&Path>, out: &Path) -> Result<()> {
    let data = prepare(cfg, cfg.pipeline.n_past)?;
    let params = load_params(out, params)?;
    let outputs = predict_all(&data.config, &params, &data.test)?;
    let n_i = data.config.n_interfaces();
    let p_t = data.config.trm.p_t;
    let sampled: Vec<Vec<Vec<f64>>> = outputs
        .iter()
        .map(|o| o.densities.iter().step_by(p_t).cloned().collect())
        .collect();
    let dir = out.join("predictions");
    write_text(
        &dir.join("smoothed.csv"),
        &matrix_csv(n_i, "flux", outputs.iter().map(|o| &o.smoothed[..])),
    )?;
    write_text(
        &dir.join("predicted.csv"),
        &matrix_csv(n_i, "flux", outputs.iter().map(|o| &o.predicted[..])),
    )?;
    write_text(
        &dir.join("rates.csv"),
        &matrix_csv(n_i, "rate", outputs.iter().map(|o| &o.rates[..])),
    )?;
    write_text(
        &dir.join("densities.csv"),
        &matrix_csv(n_i - 1, "density", sampled.iter().map(|d| &d[..])),
    )?;
    eprintln!("predict: {} test windows", outputs.len());
    Ok(())
}

/// Evaluate on the test windows and write the report and its tables.
pub fn evaluate_cmd(cfg: &ExperimentConfig, params: Option<&Path>, out: &Path) -> Result<EvalReport> {
    let data = prepare(cfg, cfg.pipeline.n_past)?;
    let params = load_params(out, params)?;
    let report = write_evaluation(&data, &params, out)?;
    eprintln!(
        "evaluate: rmse {:.4e}, mape {:.2}% (last-value baseline {:.2}%)",
        report.rmse, report.mape.percent, report.baseline_mape.percent
    );
    Ok(report)
}

fn write_evaluation(data: &Prepared, params: &PipelineParams, out: &Path) -> Result<EvalReport> {
    let report = evaluate(
        &data.config,
        params,
        &data.test,
        &data.test_truths,
        data.clipped,
        DEFAULT_MAPE_EPSILON,
    )?;
    write_text(&out.join(REPORT_FILE), &report.to_json()?)?;
    let tables = out.join("tables");
    write_text(&tables.join("per_interface.csv"), &report.per_interface_csv())?;
    write_text(&tables.join("per_horizon.csv"), &report.per_horizon_csv())?;
    write_text(&tables.join("histograms.csv"), &report.histogram_csv())?;
    write_text(&tables.join("qq.csv"), &report.qq_csv())?;
    Ok(report)
}

/// One row of the N_p search summary.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub n_past: usize,
    pub epochs: usize,
    pub valid_rmse: f64,
    pub valid_mape: f64,
    pub test_rmse: f64,
    pub test_mape: f64,
}

pub fn gridsearch_np(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<GridRow>> {
    let values = cfg
        .gridsearch
        .as_ref()
        .map(|g| g.n_past.clone())
        .ok_or_else(|| ConfigError("gridsearch-np needs a [gridsearch] section with n_past = [...]".into()))?;
    if values.is_empty() {
        bail!(ConfigError("[gridsearch] n_past is empty".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &n_past in &values {
        let dir = out.join("gridsearch").join(format!("np_{n_past}"));
        eprintln!("gridsearch-np: n_past = {n_past}");
        let (best, history) = train_with_past(cfg, n_past, &dir, false)?;
        let data = prepare(cfg, n_past)?;
        let (_, valid_rmse, valid_mape) = validation_metrics(&data.config, &best, &data.valid)?;
        let report = write_evaluation(&data, &best, &dir)?;
        rows.push(GridRow {
            n_past,
            epochs: history.epochs.len(),
            valid_rmse,
            valid_mape,
            test_rmse: report.rmse,
            test_mape: report.mape.percent,
        });
    }
    let mut s = String::from("n_past,epochs,valid_rmse,valid_mape_percent,test_rmse,test_mape_percent\n");
    for r in &rows {
        writeln!(
            s,
            "{},{},{:e},{},{:e},{}",
            r.n_past, r.epochs, r.valid_rmse, r.valid_mape, r.test_rmse, r.test_mape
        )
        .expect("writing to a String");
    }
    write_text(&out.join("tables").join("gridsearch_np.csv"), &s)?;
    print!("{s}");
    Ok(rows)
}

/// Enumerated parameter counts next to their closed forms.
pub fn inspect_params(cfg: &ExperimentConfig) -> Result<(BlockCounts, String)> {
    let n_i = cfg.geometry.n_interfaces;
    let n_o = cfg.geometry()?.n_observed();
    let counts = PipelineParams::zeros(n_i, n_o).block_counts();
    let closed = closed_form_counts(n_i, n_o);
    let mut s = format!("n_interfaces = {n_i}, n_observed = {n_o}\n");
    writeln!(s, "{:<10} {:>12} {:>12}", "block", "enumerated", "closed_form").expect("writing to a String");
    for (name, e, c) in [
        ("mlp1", counts.mlp1, closed.mlp1),
        ("extractor", counts.extractor, closed.extractor),
        ("mlp2", counts.mlp2, closed.mlp2),
        ("predictor", counts.predictor, closed.predictor),
    ] {
        writeln!(s, "{name:<10} {e:>12} {c:>12}").expect("writing to a String");
    }
    writeln!(s, "{:<10} {:>12}", "total", counts.total()).expect("writing to a String");
    writeln!(
        s,
        "predictor reference count 3 n_i (n_i + 1) = {}, delta = {} (= n_i)",
        counts.predictor_table,
        counts.predictor_delta()
    )
    .expect("writing to a String");
    Ok((counts, s))
}

/// Output directory: the `--out` flag wins over the config.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone())
}
