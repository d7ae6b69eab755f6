//! Bayesian online changepoint detection over the run length, with one
//! emission-rate posterior per run-length hypothesis.
//!
//! Run length `r_k = i` means the current regime began at pass `k - i`.
//! A regime that begins at pass `k` owns the measurement taken at pass
//! `k`, so the changepoint branch is scored by the prior predictive of a
//! fresh regime while each growth branch is scored by the predictive of
//! its own posterior. The state before any data is a single "fresh start"
//! hypothesis carrying the uniform prior; it grows like any other run.
//!
//! ```text
//! alpha_k(0) = H * p0(c_k) * sum_j alpha_{k-1}(j)
//! alpha_k(i) = (1 - H) * p(c_k | run i-1) * alpha_{k-1}(i-1),   i >= 1
//! ```
//!
//! The likelihood vector over the rate grid is evaluated once per step and
//! shared by every hypothesis.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::inference::{uniform_prior, EmissionPosterior, LikelihoodConfig, QGrid, ScaledLikelihood};
use crate::transport::ForwardModel;

/// Constant hazard `1 / lambda` (geometric prior on regime length).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardConfig {
    /// Expected regime length, in passes.
    pub lambda: f64,
}

impl HazardConfig {
    pub const DEFAULT_LAMBDA: f64 = 15.0;

    pub fn new(lambda: f64) -> Result<Self> {
        let h = HazardConfig { lambda };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) || !self.lambda.is_finite() {
            return Err(Error::config("lambda", format!("must be > 1, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Memoryless: independent of the run length.
    #[inline]
    pub fn hazard(&self, _run_length: usize) -> f64 {
        1.0 / self.lambda
    }
}

impl Default for HazardConfig {
    fn default() -> Self {
        HazardConfig {
            lambda: Self::DEFAULT_LAMBDA,
        }
    }
}

/// How a run's emission posterior is turned into a predictive density for
/// the next `c_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictiveMethod {
    /// Change of variables through `c_y = gain * Q`; ignores the
    /// measurement scatter.
    Scaling,
    /// Posterior predictive `sum_j p(c_y | q_j) p(q_j) dQ`.
    #[default]
    Marginal,
}

impl fmt::Display for PredictiveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictiveMethod::Scaling => "scaling",
            PredictiveMethod::Marginal => "marginal",
        })
    }
}

impl FromStr for PredictiveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scaling" => Ok(PredictiveMethod::Scaling),
            "marginal" => Ok(PredictiveMethod::Marginal),
            other => Err(Error::config(
                "predictive",
                format!("expected `scaling` or `marginal`, got `{other}`"),
            )),
        }
    }
}

/// Predictive density of `cy` under a run's emission posterior.
pub fn predictive_probability(
    run_posterior: &EmissionPosterior,
    cy: f64,
    fm: &ForwardModel,
    cfg: &LikelihoodConfig,
    method: PredictiveMethod,
) -> Result<f64> {
    match method {
        PredictiveMethod::Scaling => {
            fm.validate()?;
            if fm.dispersion_factor == 0.0 {
                return Err(Error::DegenerateTransport);
            }
            let inv_gain = 1.0 / fm.gain();
            Ok(run_posterior.density_at(cy * inv_gain) * inv_gain)
        }
        PredictiveMethod::Marginal => {
            let lik = ScaledLikelihood::evaluate(cy, run_posterior.grid(), fm, cfg)?;
            let z = run_posterior
                .grid()
                .integrate_product(run_posterior.density(), lik.values());
            Ok(z * lik.log_scale().exp())
        }
    }
}

/// Engine settings for the run-length recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BocdConfig {
    pub hazard: HazardConfig,
    pub method: PredictiveMethod,
    /// Hypotheses whose normalized weight falls below this are dropped.
    /// Zero keeps every hypothesis.
    pub prune_below: f64,
}

impl BocdConfig {
    pub const DEFAULT_PRUNE_BELOW: f64 = 1e-12;

    pub fn new(hazard: HazardConfig, method: PredictiveMethod) -> Self {
        BocdConfig {
            hazard,
            method,
            prune_below: Self::DEFAULT_PRUNE_BELOW,
        }
    }

    pub fn without_pruning(mut self) -> Self {
        self.prune_below = 0.0;
        self
    }
}

impl Default for BocdConfig {
    fn default() -> Self {
        BocdConfig::new(HazardConfig::default(), PredictiveMethod::default())
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    run_length: usize,
    weight: f64,
    posterior: EmissionPosterior,
}

/// Joint state of the detector after `k` passes.
///
/// Weights are kept normalized; the running log of the normalizers is
/// `log_evidence`, so the joint weights `alpha_k(i)` are
/// `weight_i * exp(log_evidence)`.
#[derive(Debug, Clone)]
pub struct RunLengthState {
    grid: Arc<QGrid>,
    k: usize,
    hypotheses: Vec<Hypothesis>,
    log_evidence: f64,
    likelihood_evaluations: u64,
}

impl RunLengthState {
    /// Fresh start: run length 0 with probability one, uniform prior.
    pub fn fresh(grid: Arc<QGrid>) -> Self {
        let posterior = uniform_prior(Arc::clone(&grid));
        RunLengthState {
            grid,
            k: 0,
            hypotheses: vec![Hypothesis {
                run_length: 0,
                weight: 1.0,
                posterior,
            }],
            log_evidence: 0.0,
            likelihood_evaluations: 0,
        }
    }

    pub fn grid(&self) -> &Arc<QGrid> {
        &self.grid
    }

    /// Passes processed so far.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn evidence(&self) -> f64 {
        self.log_evidence.exp()
    }

    /// Number of likelihood vectors evaluated by [`RunLengthState::step`].
    pub fn likelihood_evaluations(&self) -> u64 {
        self.likelihood_evaluations
    }

    /// Active (unpruned) hypotheses.
    pub fn active_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }

    /// `p(r_k = 0 | c_1:k)`.
    pub fn changepoint_probability(&self) -> f64 {
        self.hypotheses
            .iter()
            .find(|h| h.run_length == 0)
            .map_or(0.0, |h| h.weight)
    }

    /// Normalized run-length distribution, indexed `0..=k`; pruned
    /// hypotheses read as zero.
    pub fn run_length_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k + 1];
        for h in &self.hypotheses {
            out[h.run_length] = h.weight;
        }
        out
    }

    /// Joint weights `alpha_k(i) = p(r_k = i, c_1:k)`.
    pub fn joint_weights(&self) -> Vec<f64> {
        let scale = self.log_evidence.exp();
        self.run_length_distribution().into_iter().map(|w| w * scale).collect()
    }

    /// Emission posterior of the run with the given length, if active.
    pub fn run_posterior(&self, run_length: usize) -> Option<&EmissionPosterior> {
        self.hypotheses
            .iter()
            .find(|h| h.run_length == run_length)
            .map(|h| &h.posterior)
    }

    /// `(run_length, weight, posterior)` for every active hypothesis.
    pub fn hypotheses(&self) -> impl Iterator<Item = (usize, f64, &EmissionPosterior)> {
        self.hypotheses.iter().map(|h| (h.run_length, h.weight, &h.posterior))
    }

    /// Advances the recursion by one measurement.
    pub fn step(&mut self, cy: f64, fm: &ForwardModel, lik_cfg: &LikelihoodConfig, cfg: &BocdConfig) -> Result<()> {
        let lik = ScaledLikelihood::evaluate(cy, &self.grid, fm, lik_cfg)?;
        self.likelihood_evaluations += 1;
        self.step_with(cy, fm, &lik, cfg)
    }

    /// Advances the recursion with a likelihood vector computed by the
    /// caller for this `cy` and forward model.
    pub fn step_with(&mut self, cy: f64, fm: &ForwardModel, lik: &ScaledLikelihood, cfg: &BocdConfig) -> Result<()> {
        cfg.hazard.validate()?;
        let hazard = cfg.hazard.hazard(self.k);

        // Regime beginning at this pass: uniform prior updated with `cy`.
        let mut newborn = uniform_prior(Arc::clone(&self.grid));
        let prior_predictive_shifted = newborn.update_in_place(lik);

        let (prior_predictive, log_unit) = match cfg.method {
            PredictiveMethod::Marginal => (prior_predictive_shifted, lik.log_scale()),
            PredictiveMethod::Scaling => {
                if fm.dispersion_factor == 0.0 {
                    return Err(Error::DegenerateTransport);
                }
                let inv_gain = 1.0 / fm.gain();
                let q = cy * inv_gain;
                let inside = q >= self.grid.q_min() && q <= self.grid.q_max();
                (if inside { inv_gain / self.grid.width() } else { 0.0 }, 0.0)
            }
        };

        let mut total_prev = 0.0;
        let mut grown = Vec::with_capacity(self.hypotheses.len() + 1);
        for mut h in std::mem::take(&mut self.hypotheses) {
            total_prev += h.weight;
            let scaled_pred = match cfg.method {
                PredictiveMethod::Scaling => {
                    let inv_gain = 1.0 / fm.gain();
                    h.posterior.density_at(cy * inv_gain) * inv_gain
                }
                PredictiveMethod::Marginal => 0.0,
            };
            let z = h.posterior.update_in_place(lik);
            let pred = match cfg.method {
                PredictiveMethod::Marginal => z,
                PredictiveMethod::Scaling => scaled_pred,
            };
            if z <= 0.0 {
                continue;
            }
            grown.push(Hypothesis {
                run_length: h.run_length + 1,
                weight: h.weight * (1.0 - hazard) * pred,
                posterior: h.posterior,
            });
        }

        let changepoint_weight = hazard * prior_predictive * total_prev;
        let total = changepoint_weight + grown.iter().map(|h| h.weight).sum::<f64>();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ObservationImpossible);
        }

        let mut next = Vec::with_capacity(grown.len() + 1);
        next.push(Hypothesis {
            run_length: 0,
            weight: changepoint_weight,
            posterior: newborn,
        });
        next.extend(grown);
        let inv = 1.0 / total;
        next.iter_mut().for_each(|h| h.weight *= inv);

        if cfg.prune_below > 0.0 {
            next.retain(|h| h.weight >= cfg.prune_below);
            let kept: f64 = next.iter().map(|h| h.weight).sum();
            next.iter_mut().for_each(|h| h.weight /= kept);
        }

        self.hypotheses = next;
        self.log_evidence += total.ln() + log_unit;
        self.k += 1;
        Ok(())
    }
}

/// Functional form of [`RunLengthState::step`].
pub fn bocd_step(
    state: &RunLengthState,
    cy: f64,
    fm: &ForwardModel,
    lik_cfg: &LikelihoodConfig,
    cfg: &BocdConfig,
) -> Result<RunLengthState> {
    let mut next = state.clone();
    next.step(cy, fm, lik_cfg, cfg)?;
    Ok(next)
}

/// `alpha_k(0) / sum_i alpha_k(i)`.
pub fn changepoint_probability(state: &RunLengthState) -> f64 {
    state.changepoint_probability()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::bayes_update;

    fn setup() -> (Arc<QGrid>, ForwardModel, LikelihoodConfig) {
        (
            Arc::new(QGrid::new(0.0, 5.0, 0.005).unwrap()),
            ForwardModel::with_gain(1.0).unwrap(),
            LikelihoodConfig::new(0.2).unwrap(),
        )
    }

    #[test]
    fn hazard_is_constant() {
        let h = HazardConfig::new(15.0).unwrap();
        assert!((h.hazard(3) - 1.0 / 15.0).abs() < 1e-15);
        assert!((h.hazard(3) - 0.0667).abs() < 1e-4);
        assert_eq!(HazardConfig::new(2.0).unwrap().hazard(0), 0.5);
        assert_eq!(h.hazard(0), h.hazard(1_000_000));
        assert!(HazardConfig::new(1.0).is_err());
    }

    #[test]
    fn scaling_predictive() {
        let (g, fm, cfg) = setup();
        let flat = uniform_prior(g);
        let p = predictive_probability(&flat, 2.5, &fm, &cfg, PredictiveMethod::Scaling).unwrap();
        assert!((p - 0.2).abs() < 1e-12);
        let out = predictive_probability(&flat, 5.5, &fm, &cfg, PredictiveMethod::Scaling).unwrap();
        assert_eq!(out, 0.0);
        let degenerate = ForwardModel::new(2.0, 0.0).unwrap();
        assert!(matches!(
            predictive_probability(&flat, 1.0, &degenerate, &cfg, PredictiveMethod::Scaling),
            Err(Error::DegenerateTransport)
        ));
    }

    #[test]
    fn marginal_predictive_collapses_on_spike() {
        let (g, fm, cfg) = setup();
        let mut d = vec![0.0; g.len()];
        d[400] = 1.0;
        let spike = EmissionPosterior::from_unnormalized(g.clone(), d).unwrap();
        let q_star = g.values()[400];
        let cy = 2.13;
        let p = predictive_probability(&spike, cy, &fm, &cfg, PredictiveMethod::Marginal).unwrap();
        let z = (cy - q_star) / cfg.sigma_e;
        let want = (-0.5 * z * z).exp() / (cfg.sigma_e * (2.0 * std::f64::consts::PI).sqrt());
        assert!((p - want).abs() < 1e-12, "{p} vs {want}");
    }

    #[test]
    fn first_step_from_fresh_state() {
        let (g, fm, cfg) = setup();
        for method in [PredictiveMethod::Scaling, PredictiveMethod::Marginal] {
            let mut s = RunLengthState::fresh(g.clone());
            s.step(1.7, &fm, &cfg, &BocdConfig::new(HazardConfig::default(), method)).unwrap();
            let d = s.run_length_distribution();
            assert_eq!(d.len(), 2);
            assert!((d[0] - 1.0 / 15.0).abs() < 1e-12, "{method}: {d:?}");
            assert!((d[1] - 14.0 / 15.0).abs() < 1e-12);
            assert!((changepoint_probability(&s) - 0.0667).abs() < 1e-4);
        }
    }

    #[test]
    fn weights_stay_normalized_and_sized() {
        let (g, fm, cfg) = setup();
        let bocd = BocdConfig::default().without_pruning();
        let mut s = RunLengthState::fresh(g);
        for (k, cy) in [0.8, 1.1, 0.9, 3.2, 3.0, 2.9, 3.1, 0.7].iter().enumerate() {
            s.step(*cy, &fm, &cfg, &bocd).unwrap();
            let d = s.run_length_distribution();
            assert_eq!(d.len(), k + 2);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for (_, _, p) in s.hypotheses() {
                assert!((p.mass() - 1.0).abs() < 1e-10);
            }
        }
        assert_eq!(s.likelihood_evaluations(), 8);
    }

    #[test]
    fn noiseless_constant_stream_keeps_changepoint_probability_low() {
        let (g, fm, cfg) = setup();
        let mut s = RunLengthState::fresh(g);
        let bocd = BocdConfig::default();
        let mut last = 1.0;
        for k in 1..=5 {
            s.step(1.3, &fm, &cfg, &bocd).unwrap();
            let p = s.changepoint_probability();
            if k >= 2 {
                assert!(p < 0.2 / 15.0, "k={k}: {p}");
                assert!(p < last);
            }
            last = p;
        }
    }

    #[test]
    fn growth_posteriors_follow_their_data() {
        let (g, fm, cfg) = setup();
        let mut s = RunLengthState::fresh(g.clone());
        let bocd = BocdConfig::default().without_pruning();
        let data = [1.0, 1.4, 0.6];
        for cy in data {
            s.step(cy, &fm, &cfg, &bocd).unwrap();
        }
        // run length 1 began at pass 2 and has seen passes 2 and 3
        let mut want = uniform_prior(g);
        for cy in &data[1..] {
            want = bayes_update(&want, *cy, &fm, &cfg).unwrap();
        }
        let got = s.run_posterior(1).unwrap();
        for (a, b) in got.density().iter().zip(want.density()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn impossible_observation() {
        let g = Arc::new(QGrid::new(0.0, 1.0, 0.01).unwrap());
        let fm = ForwardModel::with_gain(1.0).unwrap();
        let cfg = LikelihoodConfig::new(0.1).unwrap();
        let mut s = RunLengthState::fresh(g);
        let scaling = BocdConfig::new(HazardConfig::default(), PredictiveMethod::Scaling);
        assert!(matches!(s.step(3.0, &fm, &cfg, &scaling), Err(Error::ObservationImpossible)));
    }

    #[test]
    fn parse_method() {
        assert_eq!("Scaling".parse::<PredictiveMethod>().unwrap(), PredictiveMethod::Scaling);
        assert_eq!("marginal".parse::<PredictiveMethod>().unwrap(), PredictiveMethod::Marginal);
        assert!("median".parse::<PredictiveMethod>().is_err());
    }
}
