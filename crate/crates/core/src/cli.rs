//! Command-line driver.
//!
//! ```text
//! emission-cpd ingest    --raw raw_samples.csv --met met.csv --out DIR
//! emission-cpd calibrate --passes passes.csv --met met.csv --q-true 0.083 --out DIR
//! emission-cpd detect    --passes passes.csv --met met.csv --config config.json --out DIR
//! emission-cpd synth     --passes passes.csv --lrr 2,4 --instances 10 --seed 1 --out DIR
//! emission-cpd sweep     --surrogate-cv 0.3,0.5 --lrr 1.5,3 --seed 1 --out DIR
//! ```
//!
//! Exit status is 0 on success, 1 for estimation and evaluation failures
//! and 2 for bad input or configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bocd::{HazardConfig, PredictiveMethod};
use crate::detector::{run_detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::inference::estimate_sigma_e;
use crate::io::{
    read_met, read_passes, read_raw_samples, read_rows, write_atomic, write_events, write_instances,
    write_pass_reports, write_passes, write_report, ConfigFile, EventRecord, MetRow, PassReportRow, PassSeries,
    ReportRow,
};
use crate::metrics::{evaluate_cell_thresholds, CellSize, DEFAULT_N_BOOT};
use crate::synthesis::{
    derive_seed, lrr_for_jnr, signal_stats, synthesize_batch, ExperimentRecord, Surrogate, SURROGATE_Q_TRUE,
};
use crate::transport::{ambient_baseline, integrate_pass, ForwardModel, PassMeasurement, ReflectedGaussian};

#[derive(Debug, Parser)]
#[command(name = "emission-cpd", version, about = "Emission-rate estimation and changepoint detection from mobile plume transects")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate raw analyzer samples into per-pass c_y.
    Ingest(IngestArgs),
    /// Estimate the likelihood scale sigma_e from constant-rate experiments.
    Calibrate(CalibrateArgs),
    /// Run the detector over measured pass series.
    Detect(DetectArgs),
    /// Write synthetic changepoint instances.
    Synth(SynthArgs),
    /// Evaluate detection performance over a grid of cells.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub met: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub passes: PathBuf,
    #[arg(long)]
    pub met: PathBuf,
    /// Known release rate, g/s.
    #[arg(long)]
    pub q_true: f64,
    #[arg(long)]
    pub experiment: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides shared by `detect` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct DetectorOverrides {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub predictive: Option<PredictiveMethod>,
    /// Likelihood scale, g/m^2.
    #[arg(long)]
    pub sigma_e: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub passes: PathBuf,
    #[arg(long)]
    pub met: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub detector: DetectorOverrides,
    #[arg(long)]
    pub experiment: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where experiments come from: measured passes or lognormal surrogates.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentSource {
    #[arg(long)]
    pub passes: Option<PathBuf>,
    /// Needed with `--passes` for forward models.
    #[arg(long)]
    pub met: Option<PathBuf>,
    /// Use 14-pass lognormal surrogates with these CVs instead of files.
    #[arg(long, value_delimiter = ',', conflicts_with = "passes")]
    pub surrogate_cv: Vec<f64>,
    /// Release rate for sigma_e calibration, g/s.
    #[arg(long, default_value_t = SURROGATE_Q_TRUE)]
    pub q_true: f64,
    #[arg(long)]
    pub experiment: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub source: ExperimentSource,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lrr: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ExperimentSource,
    #[arg(long, value_delimiter = ',', conflicts_with = "jnr")]
    pub lrr: Vec<f64>,
    /// Jump-to-noise ratios; each maps to an LRR through the experiment's CV.
    #[arg(long, value_delimiter = ',')]
    pub jnr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    pub threshold: Vec<f64>,
    #[command(flatten)]
    pub detector: DetectorOverrides,
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 100)]
    pub repetitions: usize,
    #[arg(long, default_value_t = DEFAULT_N_BOOT)]
    pub n_boot: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("threads", "must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    })
}

fn met_for<'a>(met: &'a BTreeMap<u32, MetRow>, id: u32) -> Result<&'a MetRow> {
    met.get(&id)
        .ok_or_else(|| Error::MissingInput(format!("no met row for experiment {id}")))
}

fn forward_model(met: &BTreeMap<u32, MetRow>, id: u32) -> Result<ForwardModel> {
    met_for(met, id)?
        .forward_model(&ReflectedGaussian::default())
        .map_err(|e| e.context(format!("experiment {id}")))
}

fn select(series: PassSeries, experiment: Option<u32>) -> Result<PassSeries> {
    match experiment {
        None => Ok(series),
        Some(id) => {
            let mut series = series;
            let s = series
                .remove(&id)
                .ok_or_else(|| Error::MissingInput(format!("experiment {id} not found")))?;
            Ok(BTreeMap::from([(id, s)]))
        }
    }
}

/// Writes `passes.csv` with one `c_y` per (experiment, pass).
pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let raw = read_raw_samples(&a.raw)?;
    let met = read_met(&a.met)?;
    let mut series = PassSeries::new();
    for (&id, passes) in &raw {
        let row = met_for(&met, id)?;
        let out = series.entry(id).or_default();
        for (&pass_index, samples) in passes {
            let ppm: Vec<f64> = samples.iter().map(|s| s.mixing_ratio).collect();
            let cy = ambient_baseline(&ppm)
                .and_then(|b| integrate_pass(samples, b, row.temperature_k, row.pressure()))
                .map_err(|e| e.at_pass(pass_index).context(format!("experiment {id}")))?;
            out.push(PassMeasurement::new(pass_index, cy)?);
        }
    }
    let path = a.out.join("passes.csv");
    write_passes(&path, &series)?;
    println!("wrote {} ({} experiments)", path.display(), series.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub experiment_id: u32,
    pub n_passes: usize,
    pub q_true: f64,
    pub sigma_e: f64,
}

/// Writes `calibration.json` with one `sigma_e` per experiment.
pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let series = select(read_passes(&a.passes)?, a.experiment)?;
    let met = read_met(&a.met)?;
    let mut out = Vec::new();
    for (&id, passes) in &series {
        let fm = forward_model(&met, id)?;
        let cy: Vec<f64> = passes.iter().map(|p| p.cy).collect();
        let sigma_e = estimate_sigma_e(&cy, a.q_true, &[fm]).map_err(|e| e.context(format!("experiment {id}")))?;
        out.push(Calibration {
            experiment_id: id,
            n_passes: cy.len(),
            q_true: a.q_true,
            sigma_e,
        });
    }
    let path = a.out.join("calibration.json");
    let mut bytes = serde_json::to_vec_pretty(&out)?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    for c in &out {
        println!("experiment {}: sigma_e = {:.6e} g/m^2 over {} passes", c.experiment_id, c.sigma_e, c.n_passes);
    }
    Ok(())
}

fn apply_overrides(cfg: &mut DetectorConfig, o: &DetectorOverrides) -> Result<()> {
    if let Some(l) = o.lambda {
        cfg.hazard = HazardConfig::new(l)?;
    }
    if let Some(m) = o.predictive {
        cfg.predictive_method = m;
    }
    if let Some(s) = o.sigma_e {
        cfg.sigma_e_initial = s;
    }
    Ok(())
}

/// Writes `events.json` and `passes_report.csv`.
pub fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let mut file = match &a.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    if a.detector.sigma_e.is_some() {
        file.sigma_e = a.detector.sigma_e;
    }
    let mut cfg = file.detector_config()?;
    apply_overrides(&mut cfg, &a.detector)?;
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    cfg.validate()?;

    let series = select(read_passes(&a.passes)?, a.experiment)?;
    let met = read_met(&a.met)?;
    let mut events = Vec::new();
    let mut reports = Vec::new();
    for (&id, passes) in &series {
        let fm = forward_model(&met, id)?;
        let run = run_detector(passes, &[fm], &cfg).map_err(|e| e.context(format!("experiment {id}")))?;
        events.extend(run.events.iter().map(|e| EventRecord::from_event(id, e)));
        reports.extend(run.reports.iter().map(|r| PassReportRow::from_report(id, r)));
    }
    write_events(&a.out.join("events.json"), &events)?;
    write_pass_reports(&a.out.join("passes_report.csv"), &reports)?;
    for e in &events {
        println!(
            "experiment {}: change at pass {} (p = {:.3}), previous rate {:.4} +/- {:.4} g/s",
            e.experiment_id, e.pass_index, e.changepoint_probability, e.retained_mode, e.retained_std
        );
    }
    println!("{} events over {} experiments", events.len(), series.len());
    Ok(())
}

/// An experiment ready for synthesis and evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub experiment: ExperimentRecord,
    pub forward_model: ForwardModel,
    pub sigma_e: f64,
}

/// Loads experiments from files or builds surrogates. Measured
/// experiments get `sigma_e` from `q_true` unless `sigma_override` is set.
pub fn prepare_experiments(src: &ExperimentSource, seed: u64, sigma_override: Option<f64>) -> Result<Vec<Prepared>> {
    let mut out = Vec::new();
    if !src.surrogate_cv.is_empty() {
        for (i, &cv) in src.surrogate_cv.iter().enumerate() {
            let id = i as u32 + 1;
            if src.experiment.is_some_and(|e| e != id) {
                continue;
            }
            let s = Surrogate::new(id, 14, cv, src.q_true, crate::synthesis::SURROGATE_MEAN_CY, seed)?;
            out.push(Prepared {
                experiment: s.experiment,
                forward_model: s.forward_model,
                sigma_e: sigma_override.unwrap_or(s.sigma_e),
            });
        }
        return Ok(out);
    }
    let (Some(passes), Some(met_path)) = (&src.passes, &src.met) else {
        return Err(Error::MissingInput("give --passes and --met, or --surrogate-cv".into()));
    };
    let series = select(read_passes(passes)?, src.experiment)?;
    let met = read_met(met_path)?;
    for (id, passes) in series {
        let fm = forward_model(&met, id)?;
        let cy: Vec<f64> = passes.iter().map(|p| p.cy).collect();
        let sigma_e = match sigma_override {
            Some(s) => s,
            None => estimate_sigma_e(&cy, src.q_true, &[fm]).map_err(|e| e.context(format!("experiment {id}")))?,
        };
        let mut experiment = ExperimentRecord::new(id, met_for(&met, id)?.x_m, cy)?;
        experiment.met = Some(met_for(&met, id)?.met());
        out.push(Prepared {
            experiment,
            forward_model: fm,
            sigma_e,
        });
    }
    Ok(out)
}

/// Writes `instances.csv`.
pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let experiments = prepare_experiments(&a.source, a.seed, None)?;
    let mut instances = Vec::new();
    for p in &experiments {
        for &lrr in &a.lrr {
            instances.extend(synthesize_batch(&p.experiment, lrr, a.instances, a.seed)?);
        }
    }
    let path = a.out.join("instances.csv");
    write_instances(&path, &instances)?;
    println!("wrote {} ({} instances)", path.display(), instances.len());
    Ok(())
}

/// Evaluates every (experiment, LRR or JNR) cell at every threshold and
/// writes `report.csv`. Finished cells are cached under `cells/` and
/// reused when the sweep is rerun with the same settings.
pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let by_jnr = !a.jnr.is_empty();
    let axis = if by_jnr { &a.jnr } else { &a.lrr };
    if axis.is_empty() {
        return Err(Error::config("lrr", "give --lrr or --jnr"));
    }
    if a.threshold.is_empty() {
        return Err(Error::config("threshold", "give at least one threshold"));
    }
    let size = CellSize {
        instances: a.instances,
        repetitions: a.repetitions,
        n_boot: a.n_boot,
    };
    let experiments = prepare_experiments(&a.source, a.seed, a.detector.sigma_e)?;
    let cells_dir = a.out.join("cells");
    let mut rows = Vec::new();
    for p in &experiments {
        let mut cfg = DetectorConfig::new(p.sigma_e);
        apply_overrides(&mut cfg, &DetectorOverrides { sigma_e: None, ..a.detector.clone() })?;
        let cv = if by_jnr { signal_stats(&p.experiment.cy_series, 1.0)?.cv } else { 0.0 };
        for &value in axis {
            let lrr = if by_jnr { lrr_for_jnr(value, cv) } else { value };
            let key = cell_key(a, &cfg, &p.experiment, by_jnr, value);
            let cell_path = cells_dir.join(format!("exp{}_{:016x}.csv", p.experiment.id, key));
            let cell: Vec<ReportRow> = match read_cached(&cell_path) {
                Some(rows) => rows,
                None => {
                    let reports = evaluate_cell_thresholds(
                        &p.experiment,
                        &p.forward_model,
                        lrr,
                        &cfg,
                        &a.threshold,
                        size,
                        a.seed,
                    )?;
                    let rows: Vec<ReportRow> = a
                        .threshold
                        .iter()
                        .zip(&reports)
                        .map(|(&t, r)| ReportRow::new(p.experiment.id, p.experiment.x_m, value, t, r))
                        .collect();
                    write_report(&cell_path, &rows)?;
                    rows
                }
            };
            eprintln!(
                "experiment {} {} {value}: done",
                p.experiment.id,
                if by_jnr { "jnr" } else { "lrr" }
            );
            rows.extend(cell);
        }
    }
    let path = a.out.join("report.csv");
    write_report(&path, &rows)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

fn cell_key(a: &SweepArgs, cfg: &DetectorConfig, exp: &ExperimentRecord, by_jnr: bool, value: f64) -> u64 {
    let mut words = vec![
        u64::from(exp.id),
        u64::from(by_jnr),
        value.to_bits(),
        a.instances as u64,
        a.repetitions as u64,
        a.n_boot as u64,
        cfg.sigma_e_initial.to_bits(),
        cfg.hazard.lambda.to_bits(),
        cfg.predictive_method as u64,
        cfg.grid.dq().to_bits(),
    ];
    words.extend(a.threshold.iter().map(|t| t.to_bits()));
    words.extend(exp.cy_series.iter().map(|c| c.to_bits()));
    derive_seed(a.seed, &words)
}

fn read_cached(path: &Path) -> Option<Vec<ReportRow>> {
    if !path.exists() {
        return None;
    }
    read_rows::<ReportRow>(path).ok().map(|rows| rows.into_iter().map(|(_, r)| r).collect())
}
