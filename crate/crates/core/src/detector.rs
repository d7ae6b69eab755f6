//! Simultaneous emission estimation and changepoint detection over a
//! stream of passes.
//!
//! A [`Detector`] owns one run-length state and one running emission
//! posterior. When the changepoint probability reaches the threshold it
//! keeps the posterior from the previous pass, resets both the estimate and
//! the run-length state, and widens the likelihood scale for the new regime.

use std::sync::Arc;

use crate::bocd::{BocdConfig, HazardConfig, PredictiveMethod, RunLengthState};
use crate::error::{Error, Result};
use crate::inference::{
    model_for_pass, posterior_mean_std, posterior_mode, uniform_prior, EmissionPosterior,
    LikelihoodConfig, QGrid, ScaledLikelihood,
};
use crate::transport::{ForwardModel, PassMeasurement};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Changepoint probability at or above which a change is declared.
    pub threshold: f64,
    pub hazard: HazardConfig,
    /// Likelihood scale before any detection, g/m^2.
    pub sigma_e_initial: f64,
    /// Multiplier on `sigma_e_initial` once a change has been declared.
    pub sigma_e_post_factor: f64,
    pub grid: Arc<QGrid>,
    pub predictive_method: PredictiveMethod,
    pub prune_below: f64,
}

impl DetectorConfig {
    pub const DEFAULT_THRESHOLD: f64 = 0.8;
    pub const DEFAULT_POST_FACTOR: f64 = 10.0;

    /// Defaults: threshold 0.8, lambda 15, post-change factor 10, the
    /// default rate grid and the marginal predictive.
    pub fn new(sigma_e_initial: f64) -> Self {
        DetectorConfig {
            threshold: Self::DEFAULT_THRESHOLD,
            hazard: HazardConfig::default(),
            sigma_e_initial,
            sigma_e_post_factor: Self::DEFAULT_POST_FACTOR,
            grid: Arc::new(QGrid::default()),
            predictive_method: PredictiveMethod::default(),
            prune_below: BocdConfig::DEFAULT_PRUNE_BELOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", format!("must lie in (0, 1), got {}", self.threshold)));
        }
        if !(self.sigma_e_post_factor >= 1.0) || !self.sigma_e_post_factor.is_finite() {
            return Err(Error::config(
                "sigma_e_post_factor",
                format!("must be >= 1, got {}", self.sigma_e_post_factor),
            ));
        }
        if !(self.prune_below >= 0.0 && self.prune_below < 1e-3) {
            return Err(Error::config("prune_below", format!("must lie in [0, 1e-3), got {}", self.prune_below)));
        }
        self.hazard.validate()?;
        LikelihoodConfig::new(self.sigma_e_initial).map(|_| ())
    }

    pub fn bocd(&self) -> BocdConfig {
        BocdConfig {
            hazard: self.hazard,
            method: self.predictive_method,
            prune_below: self.prune_below,
        }
    }

    fn post_change_sigma(&self) -> f64 {
        self.sigma_e_initial * self.sigma_e_post_factor
    }
}

/// Estimate after one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassReport {
    pub pass_index: usize,
    pub cy: f64,
    /// Absent when the series was estimated without detection.
    pub changepoint_probability: Option<f64>,
    /// Posterior mode, g/s.
    pub mode: f64,
    pub mean: f64,
    pub std: f64,
}

impl PassReport {
    fn from_posterior(pass: &PassMeasurement, cp: Option<f64>, p: &EmissionPosterior) -> Self {
        let (mean, std) = posterior_mean_std(p);
        PassReport {
            pass_index: pass.pass_index,
            cy: pass.cy,
            changepoint_probability: cp,
            mode: posterior_mode(p),
            mean,
            std,
        }
    }
}

/// A declared change in emission rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    pub pass_index: usize,
    pub changepoint_probability: f64,
    /// Running posterior as it stood after the previous pass.
    pub pre_change_posterior: EmissionPosterior,
    /// 1 for the first change in the stream, 2 for the second, ...
    pub regime_index: usize,
}

impl DetectionEvent {
    pub fn retained_mode(&self) -> f64 {
        posterior_mode(&self.pre_change_posterior)
    }

    pub fn retained_std(&self) -> f64 {
        posterior_mean_std(&self.pre_change_posterior).1
    }
}

/// Streaming detector for a single measurement series. Not meant to be
/// stepped from more than one thread.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    bocd: RunLengthState,
    running: EmissionPosterior,
    sigma_e: f64,
    regimes: usize,
    likelihood_evaluations: u64,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Detector {
            bocd: RunLengthState::fresh(Arc::clone(&cfg.grid)),
            running: uniform_prior(Arc::clone(&cfg.grid)),
            sigma_e: cfg.sigma_e_initial,
            regimes: 0,
            likelihood_evaluations: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Current likelihood scale.
    pub fn sigma_e(&self) -> f64 {
        self.sigma_e
    }

    pub fn run_length_state(&self) -> &RunLengthState {
        &self.bocd
    }

    pub fn running_posterior(&self) -> &EmissionPosterior {
        &self.running
    }

    pub fn likelihood_evaluations(&self) -> u64 {
        self.likelihood_evaluations
    }

    /// Processes one pass; the error carries the pass index.
    pub fn step(&mut self, pass: &PassMeasurement, fm: &ForwardModel) -> Result<(PassReport, Option<DetectionEvent>)> {
        self.step_inner(pass, fm).map_err(|e| e.at_pass(pass.pass_index))
    }

    fn step_inner(&mut self, pass: &PassMeasurement, fm: &ForwardModel) -> Result<(PassReport, Option<DetectionEvent>)> {
        let lik_cfg = LikelihoodConfig::new(self.sigma_e)?;
        let lik = ScaledLikelihood::evaluate(pass.cy, &self.cfg.grid, fm, &lik_cfg)?;
        self.likelihood_evaluations += 1;

        let (updated, _) = self.running.update(&lik)?;
        self.bocd.step_with(pass.cy, fm, &lik, &self.cfg.bocd())?;
        let cp = self.bocd.changepoint_probability();
        let report = PassReport::from_posterior(pass, Some(cp), &updated);

        if cp >= self.cfg.threshold {
            self.regimes += 1;
            let retained = std::mem::replace(&mut self.running, uniform_prior(Arc::clone(&self.cfg.grid)));
            self.bocd = RunLengthState::fresh(Arc::clone(&self.cfg.grid));
            self.sigma_e = self.cfg.post_change_sigma();
            let event = DetectionEvent {
                pass_index: pass.pass_index,
                changepoint_probability: cp,
                pre_change_posterior: retained,
                regime_index: self.regimes,
            };
            Ok((report, Some(event)))
        } else {
            self.running = updated;
            Ok((report, None))
        }
    }
}

/// Everything a detector produced over a stream.
#[derive(Debug, Clone, Default)]
pub struct DetectionRun {
    pub reports: Vec<PassReport>,
    pub events: Vec<DetectionEvent>,
}

fn require_stream(stream: &[PassMeasurement]) -> Result<()> {
    if stream.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

/// Runs a detector over a whole stream. `models` holds one forward model
/// per pass, or a single model shared by every pass.
pub fn run_detector(stream: &[PassMeasurement], models: &[ForwardModel], cfg: &DetectorConfig) -> Result<DetectionRun> {
    require_stream(stream)?;
    let mut det = Detector::new(cfg.clone())?;
    let mut run = DetectionRun::default();
    for (k, pass) in stream.iter().enumerate() {
        let fm = model_for_pass(models, k).map_err(|e| e.at_pass(pass.pass_index))?;
        let (report, event) = det.step(pass, fm)?;
        run.reports.push(report);
        run.events.extend(event);
    }
    Ok(run)
}

/// Pass indices (1-based) at which changes are declared, without building
/// per-pass estimates. With `first_only`, stops at the first event.
pub fn detect_events(cy: &[f64], fm: &ForwardModel, cfg: &DetectorConfig, first_only: bool) -> Result<Vec<usize>> {
    cfg.validate()?;
    let bocd_cfg = cfg.bocd();
    let mut state = RunLengthState::fresh(Arc::clone(&cfg.grid));
    let mut lik_cfg = LikelihoodConfig::new(cfg.sigma_e_initial)?;
    let mut events = Vec::new();
    for (k, &c) in cy.iter().enumerate() {
        let pass = k + 1;
        state
            .step(c, fm, &lik_cfg, &bocd_cfg)
            .map_err(|e| e.at_pass(pass))?;
        if state.changepoint_probability() >= cfg.threshold {
            events.push(pass);
            if first_only {
                break;
            }
            state = RunLengthState::fresh(Arc::clone(&cfg.grid));
            lik_cfg = LikelihoodConfig::new(cfg.post_change_sigma())?;
        }
    }
    Ok(events)
}

/// First pass (1-based) at which the changepoint probability reaches each
/// threshold, `None` if it never does. Before its first event the detector
/// does not depend on the threshold, so one run serves them all and each
/// entry equals `detect_events(.., first_only = true)` at that threshold.
pub fn first_crossings(cy: &[f64], fm: &ForwardModel, cfg: &DetectorConfig, thresholds: &[f64]) -> Result<Vec<Option<usize>>> {
    cfg.validate()?;
    for &t in thresholds {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::config("threshold", format!("must lie in (0, 1), got {t}")));
        }
    }
    let bocd_cfg = cfg.bocd();
    let lik_cfg = LikelihoodConfig::new(cfg.sigma_e_initial)?;
    let mut state = RunLengthState::fresh(Arc::clone(&cfg.grid));
    let mut out = vec![None; thresholds.len()];
    let mut pending = thresholds.len();
    for (k, &c) in cy.iter().enumerate() {
        if pending == 0 {
            break;
        }
        let pass = k + 1;
        state
            .step(c, fm, &lik_cfg, &bocd_cfg)
            .map_err(|e| e.at_pass(pass))?;
        let p = state.changepoint_probability();
        for (slot, &t) in out.iter_mut().zip(thresholds) {
            if slot.is_none() && p >= t {
                *slot = Some(pass);
                pending -= 1;
            }
        }
    }
    Ok(out)
}

/// Plain recursive estimation from a uniform prior, no resets.
pub fn estimate_series(
    stream: &[PassMeasurement],
    models: &[ForwardModel],
    grid: Arc<QGrid>,
    sigma_e: f64,
) -> Result<Vec<PassReport>> {
    require_stream(stream)?;
    let cfg = LikelihoodConfig::new(sigma_e)?;
    let mut posterior = uniform_prior(Arc::clone(&grid));
    let mut out = Vec::with_capacity(stream.len());
    for (k, pass) in stream.iter().enumerate() {
        let step = || -> Result<EmissionPosterior> {
            let fm = model_for_pass(models, k)?;
            let lik = ScaledLikelihood::evaluate(pass.cy, &grid, fm, &cfg)?;
            Ok(posterior.update(&lik)?.0)
        };
        posterior = step().map_err(|e| e.at_pass(pass.pass_index))?;
        out.push(PassReport::from_posterior(pass, None, &posterior));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::bayes_update;

    fn cfg(sigma: f64) -> DetectorConfig {
        DetectorConfig::new(sigma)
    }

    fn stepped(levels: &[(f64, usize)]) -> Vec<PassMeasurement> {
        let cy: Vec<f64> = levels
            .iter()
            .flat_map(|&(v, n)| std::iter::repeat(v).take(n))
            .collect();
        PassMeasurement::series(&cy).unwrap()
    }

    #[test]
    fn constant_stream_never_triggers() {
        let fm = [ForwardModel::new(2.72, 0.5).unwrap()];
        let stream = stepped(&[(0.0153, 30)]);
        let run = run_detector(&stream, &fm, &cfg(0.005)).unwrap();
        assert!(run.events.is_empty());
        assert_eq!(run.reports.len(), 30);
    }

    #[test]
    fn near_one_threshold_never_triggers() {
        let fm = [ForwardModel::with_gain(1.0).unwrap()];
        let cy: Vec<f64> = (0..30).map(|i| 0.5 + 0.1 * (i % 3) as f64).collect();
        let stream = PassMeasurement::series(&cy).unwrap();
        let mut c = cfg(0.1);
        c.threshold = 1.0 - 1e-15;
        assert!(run_detector(&stream, &fm, &c).unwrap().events.is_empty());
    }

    #[test]
    fn step_change_is_detected_with_reset() {
        let fm = [ForwardModel::with_gain(1.0).unwrap()];
        let stream = stepped(&[(0.5, 12), (2.0, 12)]);
        let c = cfg(0.1);
        let run = run_detector(&stream, &fm, &c).unwrap();
        assert_eq!(run.events.len(), 1);
        let ev = &run.events[0];
        assert_eq!(ev.pass_index, 13);
        assert_eq!(ev.regime_index, 1);
        assert!(ev.changepoint_probability >= 0.8);
        assert!((ev.retained_mode() - 0.5).abs() <= 0.005);

        // The pass after the event starts from a uniform prior and one
        // measurement, at the widened scale.
        let fresh = bayes_update(
            &uniform_prior(c.grid.clone()),
            2.0,
            &fm[0],
            &LikelihoodConfig::new(0.1 * 10.0).unwrap(),
        )
        .unwrap();
        let (mean, std) = posterior_mean_std(&fresh);
        let r = &run.reports[13];
        assert_eq!(r.pass_index, 14);
        assert_eq!(r.mode, posterior_mode(&fresh));
        assert!((r.mean - mean).abs() < 1e-12 && (r.std - std).abs() < 1e-12);
    }

    #[test]
    fn retained_posterior_is_previous_running_posterior() {
        let fm = [ForwardModel::with_gain(1.0).unwrap()];
        let stream = stepped(&[(0.5, 12), (2.0, 4)]);
        let c = cfg(0.1);
        let mut det = Detector::new(c).unwrap();
        let mut before = None;
        for p in &stream {
            let snapshot = det.running_posterior().clone();
            let (_, ev) = det.step(p, &fm[0]).unwrap();
            if let Some(ev) = ev {
                assert_eq!(ev.pre_change_posterior.density(), snapshot.density());
                before = Some(ev);
            }
        }
        assert!(before.is_some());
        assert_eq!(det.likelihood_evaluations(), stream.len() as u64);
    }

    #[test]
    fn detector_matches_estimation_without_crossings() {
        let fm = [ForwardModel::new(3.1, 0.9).unwrap()];
        let stream = PassMeasurement::series(&[0.02, 0.025, 0.018, 0.022, 0.027, 0.019]).unwrap();
        let mut c = cfg(0.004);
        c.sigma_e_post_factor = 1.0;
        let run = run_detector(&stream, &fm, &c).unwrap();
        assert!(run.events.is_empty());
        let est = estimate_series(&stream, &fm, c.grid.clone(), 0.004).unwrap();
        for (a, b) in run.reports.iter().zip(&est) {
            assert_eq!((a.mode, a.mean, a.std), (b.mode, b.mean, b.std));
        }
    }

    #[test]
    fn estimate_series_behaviour() {
        let grid = Arc::new(QGrid::default());
        let fm = [ForwardModel::new(2.0, 1.0).unwrap()];
        let one = estimate_series(&PassMeasurement::series(&[0.4]).unwrap(), &fm, grid.clone(), 0.05).unwrap();
        assert!((one[0].mode - 0.8).abs() <= 0.005);

        let same = estimate_series(&PassMeasurement::series(&[0.4; 8]).unwrap(), &fm, grid.clone(), 0.05).unwrap();
        for w in same.windows(2) {
            assert!(w[1].std < w[0].std);
        }

        let err = estimate_series(&PassMeasurement::series(&[0.05, 2.0]).unwrap(), &fm, grid, 1e-4).unwrap_err();
        assert!(matches!(err, Error::AtPass { pass: 2, .. }), "{err}");
        assert!(matches!(err.root(), Error::IncompatibleMeasurement));
    }

    #[test]
    fn fast_path_matches_full_detector() {
        let fm = ForwardModel::with_gain(1.0).unwrap();
        let cy = [0.5, 0.55, 0.45, 0.5, 2.0, 2.1, 1.9, 0.4, 0.5, 0.45, 2.2, 2.0];
        let c = cfg(0.08);
        let full = run_detector(&PassMeasurement::series(&cy).unwrap(), &[fm], &c).unwrap();
        let fast = detect_events(&cy, &fm, &c, false).unwrap();
        let want: Vec<usize> = full.events.iter().map(|e| e.pass_index).collect();
        assert_eq!(fast, want);
        assert!(!want.is_empty());
        assert_eq!(detect_events(&cy, &fm, &c, true).unwrap(), want[..1].to_vec());
    }

    #[test]
    fn crossings_agree_with_single_threshold_runs() {
        let fm = ForwardModel::with_gain(1.0).unwrap();
        let cy = [0.5, 0.55, 0.45, 0.5, 0.9, 1.1, 1.0, 1.3, 1.2, 1.1];
        let ts = [0.3, 0.5, 0.8, 0.95, 1.0 - 1e-9];
        let mut c = cfg(0.08);
        let got = first_crossings(&cy, &fm, &c, &ts).unwrap();
        for (t, g) in ts.iter().zip(&got) {
            c.threshold = *t;
            assert_eq!(*g, detect_events(&cy, &fm, &c, true).unwrap().first().copied());
        }
        assert!(first_crossings(&cy, &fm, &c, &[1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(0.1);
        c.threshold = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "threshold"));
        let mut c = cfg(0.1);
        c.sigma_e_post_factor = 0.5;
        assert!(c.validate().is_err());
        assert!(cfg(0.0).validate().is_err());
        assert!(run_detector(&[], &[ForwardModel::with_gain(1.0).unwrap()], &cfg(0.1)).is_err());
    }
}
