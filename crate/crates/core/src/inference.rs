//! Grid-discretized recursive Bayesian estimation of the emission rate.
//!
//! The rate `Q` lives on a uniform grid. Densities are integrated with the
//! trapezoid rule, which is the exact integral of the piecewise-linear
//! interpolant used elsewhere in the crate, so a posterior normalized here
//! is also a proper density under interpolation.
//!
//! Likelihood vectors are stored shifted by their maximum log value. The
//! shift cancels in every normalized quantity and is carried separately as a
//! log scale, which keeps long runs and very narrow likelihoods away from
//! underflow without moving the densities themselves into log space.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::transport::ForwardModel;

/// Uniform grid of candidate emission rates, g/s.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    q_min: f64,
    q_max: f64,
    dq: f64,
    values: Vec<f64>,
}

impl QGrid {
    pub const DEFAULT_Q_MIN: f64 = 0.0;
    pub const DEFAULT_Q_MAX: f64 = 5.0;
    pub const DEFAULT_DQ: f64 = 0.005;

    pub fn new(q_min: f64, q_max: f64, dq: f64) -> Result<Self> {
        if !(q_min.is_finite() && q_max.is_finite() && q_min < q_max) {
            return Err(Error::config("q_max", format!("need q_min < q_max, got [{q_min}, {q_max}]")));
        }
        if !(dq > 0.0) {
            return Err(Error::config("dq", format!("must be > 0, got {dq}")));
        }
        let span = (q_max - q_min) / dq;
        let intervals = span.round();
        if (span - intervals).abs() > 1e-6 * span.max(1.0) {
            return Err(Error::config(
                "dq",
                format!("{dq} does not divide [{q_min}, {q_max}] into whole steps"),
            ));
        }
        let intervals = intervals as usize;
        if intervals < 2 {
            return Err(Error::config("dq", "grid needs at least 3 points"));
        }
        let mut values: Vec<f64> = (0..intervals).map(|j| q_min + j as f64 * dq).collect();
        values.push(q_max);
        Ok(QGrid {
            q_min,
            q_max,
            dq,
            values,
        })
    }

    pub fn q_min(&self) -> f64 {
        self.q_min
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn dq(&self) -> f64 {
        self.dq
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> f64 {
        self.q_max - self.q_min
    }

    /// Trapezoid-rule integral of grid-sampled values.
    #[inline]
    pub fn integrate(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.values.len());
        let n = v.len();
        let interior: f64 = v.iter().sum();
        (interior - 0.5 * (v[0] + v[n - 1])) * self.dq
    }

    /// Trapezoid-rule integral of an elementwise product.
    #[inline]
    pub fn integrate_product(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let n = a.len();
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        (dot - 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1])) * self.dq
    }

    /// Piecewise-linear interpolation of grid values at `q`; zero outside
    /// the grid.
    pub fn interpolate(&self, v: &[f64], q: f64) -> f64 {
        if !(q >= self.q_min && q <= self.q_max) {
            return 0.0;
        }
        let pos = (q - self.q_min) / self.dq;
        let last = self.values.len() - 1;
        let j = (pos.floor() as usize).min(last - 1);
        let frac = (pos - j as f64).clamp(0.0, 1.0);
        v[j] * (1.0 - frac) + v[j + 1] * frac
    }
}

impl Default for QGrid {
    fn default() -> Self {
        QGrid::new(Self::DEFAULT_Q_MIN, Self::DEFAULT_Q_MAX, Self::DEFAULT_DQ)
            .expect("default grid is valid")
    }
}

/// Probability density over the emission-rate grid, 1/(g/s).
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionPosterior {
    grid: Arc<QGrid>,
    density: Vec<f64>,
}

impl EmissionPosterior {
    /// Normalizes a nonnegative vector into a density on `grid`.
    pub fn from_unnormalized(grid: Arc<QGrid>, mut density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::Domain(format!(
                "density has {} entries, grid has {}",
                density.len(),
                grid.len()
            )));
        }
        if density.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::Domain("density values must be finite and >= 0".into()));
        }
        let mass = grid.integrate(&density);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::IncompatibleMeasurement);
        }
        density.iter_mut().for_each(|d| *d /= mass);
        Ok(EmissionPosterior { grid, density })
    }

    pub fn grid(&self) -> &Arc<QGrid> {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Integral of the density over the grid (1 for any emitted posterior).
    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    /// Density at an arbitrary rate, linearly interpolated.
    pub fn density_at(&self, q: f64) -> f64 {
        self.grid.interpolate(&self.density, q)
    }

    /// Multiplies by a scaled likelihood and renormalizes. Returns the
    /// updated posterior and the log of the evidence.
    pub fn update(&self, lik: &ScaledLikelihood) -> Result<(EmissionPosterior, f64)> {
        let mut next = Vec::with_capacity(self.density.len());
        next.extend(self.density.iter().zip(&lik.values).map(|(p, l)| p * l));
        let z = self.grid.integrate(&next);
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::IncompatibleMeasurement);
        }
        let inv = 1.0 / z;
        next.iter_mut().for_each(|d| *d *= inv);
        Ok((
            EmissionPosterior {
                grid: Arc::clone(&self.grid),
                density: next,
            },
            z.ln() + lik.log_scale,
        ))
    }

    /// In-place form of [`EmissionPosterior::update`] that reports the
    /// evidence in the likelihood's shifted units. Returns zero when the
    /// evidence vanishes, in which case the density is left unnormalized
    /// and must be discarded.
    pub(crate) fn update_in_place(&mut self, lik: &ScaledLikelihood) -> f64 {
        let mut z = 0.0;
        for (p, l) in self.density.iter_mut().zip(&lik.values) {
            *p *= l;
            z += *p;
        }
        let n = self.density.len();
        z = (z - 0.5 * (self.density[0] + self.density[n - 1])) * self.grid.dq;
        if z > 0.0 && z.is_finite() {
            let inv = 1.0 / z;
            self.density.iter_mut().for_each(|d| *d *= inv);
            z
        } else {
            0.0
        }
    }
}

/// Uniform prior `1 / (q_max - q_min)` over the grid.
pub fn uniform_prior(grid: Arc<QGrid>) -> EmissionPosterior {
    let density = vec![1.0 / grid.width(); grid.len()];
    EmissionPosterior { grid, density }
}

/// Gaussian likelihood scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    /// g/m^2.
    pub sigma_e: f64,
}

impl LikelihoodConfig {
    pub fn new(sigma_e: f64) -> Result<Self> {
        let cfg = LikelihoodConfig { sigma_e };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_e > 0.0) || !self.sigma_e.is_finite() {
            return Err(Error::config("sigma_e", format!("must be > 0, got {}", self.sigma_e)));
        }
        Ok(())
    }
}

/// Likelihood over the grid, stored as `exp(log L - max log L)` together
/// with `max log L`.
#[derive(Debug, Clone)]
pub struct ScaledLikelihood {
    pub(crate) values: Vec<f64>,
    pub(crate) log_scale: f64,
}

impl ScaledLikelihood {
    pub fn evaluate(cy: f64, grid: &QGrid, fm: &ForwardModel, cfg: &LikelihoodConfig) -> Result<Self> {
        cfg.validate()?;
        fm.validate()?;
        if !(cy >= 0.0) || !cy.is_finite() {
            return Err(Error::Domain(format!("c_y must be finite and >= 0, got {cy}")));
        }
        let gain = fm.gain();
        let inv_sigma = 1.0 / cfg.sigma_e;
        let norm = -(cfg.sigma_e * (2.0 * PI).sqrt()).ln();
        let min_sq = grid
            .values()
            .iter()
            .map(|q| ((cy - gain * q) * inv_sigma).powi(2))
            .fold(f64::INFINITY, f64::min);
        let values = grid
            .values()
            .iter()
            .map(|q| {
                let z = (cy - gain * q) * inv_sigma;
                (-0.5 * (z * z - min_sq)).exp()
            })
            .collect();
        Ok(ScaledLikelihood {
            values,
            log_scale: norm - 0.5 * min_sq,
        })
    }

    /// Shifted values; the true likelihood is `values * exp(log_scale)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn unscaled(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.values.iter().map(|v| v * s).collect()
    }
}

/// `p(c_y | q_j)` at every grid point.
pub fn likelihood_vector(cy: f64, grid: &QGrid, fm: &ForwardModel, cfg: &LikelihoodConfig) -> Result<Vec<f64>> {
    Ok(ScaledLikelihood::evaluate(cy, grid, fm, cfg)?.unscaled())
}

/// One recursive Bayes step: prior times likelihood, renormalized.
pub fn bayes_update(
    prior: &EmissionPosterior,
    cy: f64,
    fm: &ForwardModel,
    cfg: &LikelihoodConfig,
) -> Result<EmissionPosterior> {
    let lik = ScaledLikelihood::evaluate(cy, prior.grid(), fm, cfg)?;
    Ok(prior.update(&lik)?.0)
}

/// Sample standard deviation of the residuals `c_y,k - c_y,M(q_true)`
/// (N - 1 denominator). `models` holds one forward model per pass, or a
/// single model shared by every pass.
pub fn estimate_sigma_e(cy: &[f64], q_true: f64, models: &[ForwardModel]) -> Result<f64> {
    if cy.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: cy.len(),
        });
    }
    let ss: f64 = cy
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let fm = model_for_pass(models, k)?;
            fm.validate()?;
            Ok((c - fm.predict(q_true)).powi(2))
        })
        .sum::<Result<f64>>()?;
    Ok((ss / (cy.len() - 1) as f64).sqrt())
}

pub(crate) fn model_for_pass(models: &[ForwardModel], k: usize) -> Result<&ForwardModel> {
    match models.len() {
        0 => Err(Error::Domain("no forward model supplied".into())),
        1 => Ok(&models[0]),
        _ => models.get(k).ok_or_else(|| {
            Error::Domain(format!("no forward model for pass {}", k + 1))
        }),
    }
}

/// Grid rate with maximal density; ties resolve to the smallest rate.
pub fn posterior_mode(p: &EmissionPosterior) -> f64 {
    let mut best = 0;
    for (j, d) in p.density.iter().enumerate() {
        if *d > p.density[best] {
            best = j;
        }
    }
    p.grid.values()[best]
}

/// Posterior mean and standard deviation, g/s.
pub fn posterior_mean_std(p: &EmissionPosterior) -> (f64, f64) {
    let q = p.grid.values();
    let mean = p.grid.integrate_product(q, &p.density);
    let centered: Vec<f64> = q.iter().map(|v| (v - mean).powi(2)).collect();
    let var = p.grid.integrate_product(&centered, &p.density);
    (mean, var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_pdf(x: f64, mu: f64, s: f64) -> f64 {
        (-(x - mu).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
    }

    fn unit_gain() -> ForwardModel {
        ForwardModel::with_gain(1.0).unwrap()
    }

    #[test]
    fn grid_construction() {
        let g = QGrid::default();
        assert_eq!(g.len(), 1001);
        assert_eq!(g.values()[1000], 5.0);
        for w in g.values().windows(2) {
            assert!(((w[1] - w[0]) - 0.005).abs() <= 1e-12 * 5.0);
        }
        assert!(QGrid::new(1.0, 1.0, 0.1).is_err());
        assert!(QGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(QGrid::new(0.0, 1.0, 1.0).is_err());
        assert_eq!(QGrid::new(0.0, 1.0, 0.5).unwrap().len(), 3);
        assert!(QGrid::new(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn uniform_prior_values() {
        let p = uniform_prior(Arc::new(QGrid::new(0.0, 5.0, 0.005).unwrap()));
        assert!(p.density().iter().all(|d| (*d - 0.2).abs() < 1e-15));
        assert!((p.mass() - 1.0).abs() <= 0.005 * 0.2 * 0.5);
        assert!((p.mass() - 1.0).abs() < 1e-12);
        let q = uniform_prior(Arc::new(QGrid::new(0.0, 1.0, 0.01).unwrap()));
        assert!(q.density().iter().all(|d| (*d - 1.0).abs() < 1e-15));
    }

    #[test]
    fn likelihood_three_point_grid() {
        let g = QGrid::new(0.0, 2.0, 1.0).unwrap();
        let cfg = LikelihoodConfig::new(1.0).unwrap();
        let l = likelihood_vector(1.0, &g, &unit_gain(), &cfg).unwrap();
        let want = [gauss_pdf(0.0, 1.0, 1.0), gauss_pdf(1.0, 1.0, 1.0), gauss_pdf(2.0, 1.0, 1.0)];
        for (a, b) in l.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((l[0] - 0.2420).abs() < 1e-4 && (l[1] - 0.3989).abs() < 1e-4);
    }

    #[test]
    fn likelihood_peak_and_flat_limit() {
        let g = QGrid::new(0.0, 1.0, 0.01).unwrap();
        let fm = ForwardModel::new(2.0, 0.5).unwrap();
        let cfg = LikelihoodConfig::new(0.03).unwrap();
        let cy = fm.predict(g.values()[37]);
        let l = likelihood_vector(cy, &g, &fm, &cfg).unwrap();
        let peak = 1.0 / (0.03 * (2.0 * PI).sqrt());
        assert!((l[37] - peak).abs() < 1e-12 * peak);
        assert!(l.iter().all(|v| *v <= l[37]));

        let flat = likelihood_vector(cy, &g, &fm, &LikelihoodConfig::new(1e3 * cy).unwrap()).unwrap();
        let spread = flat.iter().cloned().fold(f64::MIN, f64::max) / flat.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1.0 + 1e-5);
        assert!(LikelihoodConfig::new(0.0).is_err());
    }

    #[test]
    fn flat_prior_update_is_normalized_likelihood() {
        let g = Arc::new(QGrid::new(0.0, 2.0, 0.01).unwrap());
        let cfg = LikelihoodConfig::new(0.2).unwrap();
        let post = bayes_update(&uniform_prior(g.clone()), 0.7, &unit_gain(), &cfg).unwrap();
        let l = likelihood_vector(0.7, &g, &unit_gain(), &cfg).unwrap();
        let z = g.integrate(&l);
        for (p, v) in post.density().iter().zip(&l) {
            assert!((p - v / z).abs() < 1e-12);
        }
        assert!((post.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_identical_updates_shrink_std_by_sqrt2() {
        let g = Arc::new(QGrid::new(0.0, 4.0, 0.0005).unwrap());
        let cfg = LikelihoodConfig::new(0.1).unwrap();
        let once = bayes_update(&uniform_prior(g), 2.0, &unit_gain(), &cfg).unwrap();
        let twice = bayes_update(&once, 2.0, &unit_gain(), &cfg).unwrap();
        let (_, s1) = posterior_mean_std(&once);
        let (_, s2) = posterior_mean_std(&twice);
        // conjugate Gaussian: 0.1 -> 0.1 / sqrt(2)
        assert!((s1 - 0.1).abs() < 1e-6, "{s1}");
        assert!((s2 / s1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn flat_likelihood_is_identity() {
        let g = Arc::new(QGrid::new(0.0, 1.0, 0.01).unwrap());
        let cfg = LikelihoodConfig::new(0.05).unwrap();
        let prior = bayes_update(&uniform_prior(g), 0.3, &unit_gain(), &cfg).unwrap();
        let post = bayes_update(&prior, 0.3, &unit_gain(), &LikelihoodConfig::new(1e9).unwrap()).unwrap();
        for (a, b) in prior.density().iter().zip(post.density()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn incompatible_measurement() {
        let g = Arc::new(QGrid::new(0.0, 5.0, 0.005).unwrap());
        let cfg = LikelihoodConfig::new(1e-4).unwrap();
        let narrow = bayes_update(&uniform_prior(g), 0.1, &unit_gain(), &cfg).unwrap();
        let err = bayes_update(&narrow, 4.0, &unit_gain(), &cfg).unwrap_err();
        assert!(matches!(err, Error::IncompatibleMeasurement));
    }

    #[test]
    fn sigma_e_estimates() {
        let fm = [unit_gain()];
        assert_eq!(estimate_sigma_e(&[0.5, 0.5, 0.5], 0.5, &fm).unwrap(), 0.0);
        assert!((estimate_sigma_e(&[1.5, -0.5], 0.5, &fm).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let got = estimate_sigma_e(&[1.01, 0.98, 1.03], 1.0, &fm).unwrap();
        assert!((got - (0.0014f64 / 2.0).sqrt()).abs() < 1e-12);
        assert!((got - 0.02646).abs() < 1e-5);
        assert!(matches!(
            estimate_sigma_e(&[1.0], 1.0, &fm),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn mode_conventions() {
        let g = Arc::new(QGrid::new(0.5, 1.5, 0.05).unwrap());
        assert_eq!(posterior_mode(&uniform_prior(g.clone())), 0.5);
        let mut d = vec![1.0; g.len()];
        d[7] = 5.0;
        let p = EmissionPosterior::from_unnormalized(g.clone(), d).unwrap();
        assert_eq!(posterior_mode(&p), g.values()[7]);
    }

    #[test]
    fn mode_matches_analytic_maximizer() {
        let g = Arc::new(QGrid::new(0.0, 5.0, 0.005).unwrap());
        let fm = ForwardModel::new(2.72, 0.8).unwrap();
        let cfg = LikelihoodConfig::new(0.02).unwrap();
        let cy = 0.0611;
        let p = bayes_update(&uniform_prior(g), cy, &fm, &cfg).unwrap();
        let analytic = cy * fm.advection_velocity / fm.dispersion_factor;
        assert!((posterior_mode(&p) - analytic).abs() <= 0.005);
    }

    #[test]
    fn moments() {
        let g = Arc::new(QGrid::new(0.0, 5.0, 0.005).unwrap());
        let (m, s) = posterior_mean_std(&uniform_prior(g.clone()));
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - 5.0 / 12f64.sqrt()).abs() < 1e-4);

        let mut spike = vec![0.0; g.len()];
        spike[300] = 1.0;
        let p = EmissionPosterior::from_unnormalized(g.clone(), spike).unwrap();
        let (m, s) = posterior_mean_std(&p);
        assert!((m - g.values()[300]).abs() < 1e-12 && s <= 0.005);

        let mut two = vec![0.0; g.len()];
        two[200] = 1.0;
        two[600] = 1.0;
        let p = EmissionPosterior::from_unnormalized(g, two).unwrap();
        let (m, s) = posterior_mean_std(&p);
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_integrates_like_trapezoid() {
        let g = QGrid::new(0.0, 1.0, 0.25).unwrap();
        let v = [0.0, 1.0, 3.0, 1.0, 0.0];
        assert_eq!(g.interpolate(&v, 0.375), 2.0);
        assert_eq!(g.interpolate(&v, 1.0), 0.0);
        assert_eq!(g.interpolate(&v, 1.01), 0.0);
        assert_eq!(g.interpolate(&v, -0.01), 0.0);
        assert_eq!(g.integrate(&v), 1.25);
    }
}
