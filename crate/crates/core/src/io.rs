//! CSV and JSON file formats.
//!
//! Readers report the offending file and line. Writers go through a
//! temporary file and a rename so a reader never sees a partial file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bocd::{HazardConfig, PredictiveMethod};
use crate::detector::{DetectionEvent, DetectorConfig, PassReport};
use crate::error::{Error, Result};
use crate::inference::QGrid;
use crate::metrics::PerformanceReport;
use crate::synthesis::SynthesizedInstance;
use crate::transport::{
    forward_model_for, DispersionModel, ForwardModel, Geometry, MetSummary, PassMeasurement, RawSample,
    DEFAULT_PRESSURE_PA,
};

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: display(path),
        source,
    }
}

fn input_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Input {
        file: display(path),
        line,
        message: message.into(),
    }
}

/// Replaces `path` with `bytes` via a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(io_err(tmp))?;
    fs::rename(tmp, path).map_err(io_err(path))
}

/// Rows of a headed CSV file with their 1-based line numbers.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>> {
    if !path.exists() {
        return Err(Error::MissingInput(format!("{} does not exist", display(path))));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| input_err(path, 1, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| input_err(path, 1, e.to_string()))?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            input_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .deserialize(Some(&headers))
            .map_err(|e| input_err(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Domain(format!("csv encoding: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Domain(format!("csv encoding: {e}")))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSampleRow {
    pub experiment_id: u32,
    pub pass_index: usize,
    pub time_s: f64,
    pub mixing_ratio_ppm: f64,
    pub vehicle_speed_mps: f64,
    pub road_angle_deg: f64,
}

/// Raw samples grouped by experiment and pass, in file order.
pub type RawPasses = BTreeMap<u32, BTreeMap<usize, Vec<RawSample>>>;

pub fn read_raw_samples(path: &Path) -> Result<RawPasses> {
    let mut out = RawPasses::new();
    for (line, r) in read_rows::<RawSampleRow>(path)? {
        let s = RawSample {
            time: r.time_s,
            mixing_ratio: r.mixing_ratio_ppm,
            position_angle: r.road_angle_deg,
            vehicle_speed: r.vehicle_speed_mps,
        };
        s.validate().map_err(|e| input_err(path, line, e.to_string()))?;
        let pass = out.entry(r.experiment_id).or_default().entry(r.pass_index).or_default();
        if pass.last().is_some_and(|p: &RawSample| p.time >= s.time) {
            return Err(input_err(path, line, "sample times must increase within a pass"));
        }
        pass.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRow {
    pub experiment_id: u32,
    pub pass_index: usize,
    pub cy_g_per_m2: f64,
}

/// Pass series per experiment, ordered by pass index.
pub type PassSeries = BTreeMap<u32, Vec<PassMeasurement>>;

pub fn read_passes(path: &Path) -> Result<PassSeries> {
    let mut by_exp: BTreeMap<u32, BTreeMap<usize, f64>> = BTreeMap::new();
    for (line, r) in read_rows::<PassRow>(path)? {
        PassMeasurement::new(r.pass_index, r.cy_g_per_m2).map_err(|e| input_err(path, line, e.to_string()))?;
        if by_exp.entry(r.experiment_id).or_default().insert(r.pass_index, r.cy_g_per_m2).is_some() {
            return Err(input_err(
                path,
                line,
                format!("duplicate pass {} for experiment {}", r.pass_index, r.experiment_id),
            ));
        }
    }
    Ok(by_exp
        .into_iter()
        .map(|(id, passes)| (id, passes.into_iter().map(|(pass_index, cy)| PassMeasurement { pass_index, cy }).collect()))
        .collect())
}

pub fn write_passes(path: &Path, series: &PassSeries) -> Result<()> {
    write_csv(
        path,
        series.iter().flat_map(|(&experiment_id, passes)| {
            passes.iter().map(move |p| PassRow {
                experiment_id,
                pass_index: p.pass_index,
                cy_g_per_m2: p.cy,
            })
        }),
    )
}

/// One experiment's meteorology and geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetRow {
    pub experiment_id: u32,
    pub x_m: f64,
    #[serde(default)]
    pub n_passes: Option<usize>,
    #[serde(default)]
    pub doy: Option<u32>,
    pub u_mean_mps: f64,
    pub sigma_u_mps: f64,
    #[serde(default)]
    pub turbulent_intensity: Option<f64>,
    pub friction_velocity_mps: f64,
    pub wind_direction_deg: f64,
    pub sensible_heat_flux_wm2: f64,
    pub z_over_l: f64,
    pub sigma_w_mps: f64,
    pub z0_m: f64,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    #[serde(default)]
    pub obukhov_length_m: Option<f64>,
    #[serde(default)]
    pub pressure_pa: Option<f64>,
    #[serde(default)]
    pub z_sensor_m: Option<f64>,
    #[serde(default)]
    pub z_source_m: Option<f64>,
    #[serde(default)]
    pub u_e_multiplier: Option<f64>,
}

impl MetRow {
    pub const DEFAULT_Z_SENSOR: f64 = 1.3;
    pub const DEFAULT_Z_SOURCE: f64 = 0.05;

    pub fn met(&self) -> MetSummary {
        MetSummary {
            mean_streamwise_velocity: self.u_mean_mps,
            sigma_u: self.sigma_u_mps,
            sigma_w: self.sigma_w_mps,
            turbulent_intensity: self.turbulent_intensity,
            friction_velocity: self.friction_velocity_mps,
            wind_direction: self.wind_direction_deg,
            sensible_heat_flux: self.sensible_heat_flux_wm2,
            z_over_l: self.z_over_l,
            obukhov_length: self.obukhov_length_m,
            surface_roughness: self.z0_m,
            temperature: self.temperature_k,
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            x_m: self.x_m,
            z_sensor: self.z_sensor_m.unwrap_or(Self::DEFAULT_Z_SENSOR),
            z_source: self.z_source_m.unwrap_or(Self::DEFAULT_Z_SOURCE),
        }
    }

    pub fn pressure(&self) -> f64 {
        self.pressure_pa.unwrap_or(DEFAULT_PRESSURE_PA)
    }

    pub fn forward_model(&self, model: &dyn DispersionModel) -> Result<ForwardModel> {
        forward_model_for(model, &self.met(), &self.geometry(), self.u_e_multiplier.unwrap_or(1.0))
    }
}

pub fn read_met(path: &Path) -> Result<BTreeMap<u32, MetRow>> {
    let mut out = BTreeMap::new();
    for (line, r) in read_rows::<MetRow>(path)? {
        r.met().validate().map_err(|e| input_err(path, line, e.to_string()))?;
        r.geometry().validate().map_err(|e| input_err(path, line, e.to_string()))?;
        let id = r.experiment_id;
        if out.insert(id, r).is_some() {
            return Err(input_err(path, line, format!("duplicate experiment {id}")));
        }
    }
    Ok(out)
}

pub fn write_met(path: &Path, rows: &BTreeMap<u32, MetRow>) -> Result<()> {
    write_csv(path, rows.values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub experiment_id: u32,
    pub pass_index: usize,
    pub changepoint_probability: f64,
    pub regime_index: usize,
    pub retained_mode: f64,
    pub retained_std: f64,
}

impl EventRecord {
    pub fn from_event(experiment_id: u32, e: &DetectionEvent) -> Self {
        EventRecord {
            experiment_id,
            pass_index: e.pass_index,
            changepoint_probability: e.changepoint_probability,
            regime_index: e.regime_index,
            retained_mode: e.retained_mode(),
            retained_std: e.retained_std(),
        }
    }
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(events)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, e.line() as u64, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassReportRow {
    pub experiment_id: u32,
    pub pass_index: usize,
    pub cy: f64,
    pub changepoint_probability: Option<f64>,
    pub mode: f64,
    pub mean: f64,
    pub std: f64,
}

impl PassReportRow {
    pub fn from_report(experiment_id: u32, r: &PassReport) -> Self {
        PassReportRow {
            experiment_id,
            pass_index: r.pass_index,
            cy: r.cy,
            changepoint_probability: r.changepoint_probability,
            mode: r.mode,
            mean: r.mean,
            std: r.std,
        }
    }
}

pub fn write_pass_reports(path: &Path, rows: &[PassReportRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_pass_reports(path: &Path) -> Result<Vec<PassReportRow>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub experiment_id: u32,
    pub lrr: f64,
    pub instance_index: usize,
    pub pass_index: usize,
    pub cy_g_per_m2: f64,
    pub is_post_change: bool,
}

pub fn instance_rows(inst: &SynthesizedInstance) -> impl Iterator<Item = InstanceRow> + '_ {
    inst.series.iter().enumerate().map(move |(k, &cy)| InstanceRow {
        experiment_id: inst.experiment_id,
        lrr: inst.lrr,
        instance_index: inst.instance_index,
        pass_index: k + 1,
        cy_g_per_m2: cy,
        is_post_change: k >= inst.true_cp_index,
    })
}

pub fn write_instances(path: &Path, instances: &[SynthesizedInstance]) -> Result<()> {
    write_csv(path, instances.iter().flat_map(instance_rows))
}

pub fn read_instances(path: &Path) -> Result<Vec<InstanceRow>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: u32,
    pub x_m: f64,
    pub lrr_or_jnr: f64,
    pub threshold: f64,
    pub recall: Option<f64>,
    pub recall_lo: Option<f64>,
    pub recall_hi: Option<f64>,
    pub det_recall: Option<f64>,
    pub det_recall_lo: Option<f64>,
    pub det_recall_hi: Option<f64>,
    pub det_delay: Option<f64>,
    pub fpr: f64,
    pub fpr_lo: f64,
    pub fpr_hi: f64,
}

impl ReportRow {
    pub fn new(experiment_id: u32, x_m: f64, lrr_or_jnr: f64, threshold: f64, r: &PerformanceReport) -> Self {
        ReportRow {
            experiment_id,
            x_m,
            lrr_or_jnr,
            threshold,
            recall: r.recall.map(|m| m.value),
            recall_lo: r.recall.map(|m| m.ci_low),
            recall_hi: r.recall.map(|m| m.ci_high),
            det_recall: r.detection_recall.map(|m| m.value),
            det_recall_lo: r.detection_recall.map(|m| m.ci_low),
            det_recall_hi: r.detection_recall.map(|m| m.ci_high),
            det_delay: r.detection_delay,
            fpr: r.false_positive_rate.value,
            fpr_lo: r.false_positive_rate.ci_low,
            fpr_hi: r.false_positive_rate.ci_high,
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Detector settings read from a JSON object. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub dq: Option<f64>,
    pub sigma_e: Option<f64>,
    pub threshold: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma_e_post_factor: Option<f64>,
    pub predictive: Option<PredictiveMethod>,
    pub prune_below: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(Error::config("<root>", "config must be a JSON object"));
        };
        let mut cfg = ConfigFile::default();
        for (key, v) in &map {
            let num = || v.as_f64().ok_or_else(|| Error::config(key.as_str(), format!("expected a number, got {v}")));
            match key.as_str() {
                "q_min" => cfg.q_min = Some(num()?),
                "q_max" => cfg.q_max = Some(num()?),
                "dq" => cfg.dq = Some(num()?),
                "sigma_e" => cfg.sigma_e = Some(num()?),
                "threshold" => cfg.threshold = Some(num()?),
                "lambda" => cfg.lambda = Some(num()?),
                "sigma_e_post_factor" => cfg.sigma_e_post_factor = Some(num()?),
                "prune_below" => cfg.prune_below = Some(num()?),
                "predictive" => {
                    let s = v
                        .as_str()
                        .ok_or_else(|| Error::config("predictive", format!("expected a string, got {v}")))?;
                    cfg.predictive = Some(s.parse()?);
                }
                other => return Err(Error::config(other, "unknown key")),
            }
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Json(j) => input_err(path, j.line() as u64, j.to_string()),
            other => other,
        })
    }

    /// Detector configuration with defaults for absent keys. `sigma_e`
    /// has no default.
    pub fn detector_config(&self) -> Result<DetectorConfig> {
        let sigma_e = self.sigma_e.ok_or_else(|| Error::config("sigma_e", "missing"))?;
        let default_grid = QGrid::default();
        let grid = QGrid::new(
            self.q_min.unwrap_or(default_grid.q_min()),
            self.q_max.unwrap_or(default_grid.q_max()),
            self.dq.unwrap_or(default_grid.dq()),
        )
        .map_err(|e| Error::config("dq", e.to_string()))?;
        let mut cfg = DetectorConfig::new(sigma_e);
        cfg.grid = Arc::new(grid);
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        if let Some(l) = self.lambda {
            cfg.hazard = HazardConfig::new(l)?;
        }
        if let Some(f) = self.sigma_e_post_factor {
            cfg.sigma_e_post_factor = f;
        }
        if let Some(m) = self.predictive {
            cfg.predictive_method = m;
        }
        if let Some(p) = self.prune_below {
            cfg.prune_below = p;
        }
        cfg.validate().map_err(|e| match e {
            Error::Domain(msg) => Error::config("sigma_e", msg),
            other => other,
        })?;
        Ok(cfg)
    }
}
