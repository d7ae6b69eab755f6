//! Plume transport: raw analyzer samples to cross-plume integrated
//! concentrations, and the forward model `c_y(Q) = Q * D_z / u_e`.
//!
//! The vertical dispersion factor sits behind [`DispersionModel`]. The
//! default [`ReflectedGaussian`] is a closed-form surrogate for a full
//! Lagrangian stochastic model; [`ConstantDispersion`] pins the factor
//! directly, which is what synthetic studies and most tests want.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Molar mass of methane, g/mol.
pub const METHANE_MOLAR_MASS: f64 = 16.04;
/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314_462_618;
/// Used when an input does not carry a pressure.
pub const DEFAULT_PRESSURE_PA: f64 = 101_325.0;

/// One analyzer reading taken while traversing the plume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    /// Seconds since the start of the pass.
    pub time: f64,
    /// Raw methane mixing ratio, ppm.
    pub mixing_ratio: f64,
    /// Acute angle between the road segment and the wind direction, degrees.
    pub position_angle: f64,
    /// Vehicle speed, m/s.
    pub vehicle_speed: f64,
}

impl RawSample {
    pub fn validate(&self) -> Result<()> {
        if !(self.mixing_ratio >= 0.0) {
            return Err(Error::Domain(format!(
                "mixing ratio must be >= 0, got {}",
                self.mixing_ratio
            )));
        }
        check_road_angle(self.position_angle)?;
        if !(self.vehicle_speed >= 0.0) {
            return Err(Error::Domain(format!(
                "vehicle speed must be >= 0, got {}",
                self.vehicle_speed
            )));
        }
        Ok(())
    }
}

/// Half-hour meteorological summary from the tower next to the release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetSummary {
    /// Mean streamwise velocity, m/s.
    pub mean_streamwise_velocity: f64,
    pub sigma_u: f64,
    pub sigma_w: f64,
    /// `sigma_u / u`, if the source reported it.
    pub turbulent_intensity: Option<f64>,
    pub friction_velocity: f64,
    /// Degrees clockwise from north.
    pub wind_direction: f64,
    /// W/m^2.
    pub sensible_heat_flux: f64,
    pub z_over_l: f64,
    pub obukhov_length: Option<f64>,
    pub surface_roughness: f64,
    /// Kelvin.
    pub temperature: f64,
}

impl MetSummary {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mean_streamwise_velocity", self.mean_streamwise_velocity),
            ("sigma_u", self.sigma_u),
            ("sigma_w", self.sigma_w),
            ("friction_velocity", self.friction_velocity),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if let Some(iu) = self.turbulent_intensity {
            let derived = self.sigma_u / self.mean_streamwise_velocity;
            if ((iu - derived) / derived).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "turbulent intensity {iu} disagrees with sigma_u/u = {derived}"
                )));
            }
        }
        Ok(())
    }
}

/// Source/sensor placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Downwind source-to-sensor distance, m.
    pub x_m: f64,
    pub z_sensor: f64,
    pub z_source: f64,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_m > 0.0) {
            return Err(Error::Geometry(format!("x_m must be > 0, got {}", self.x_m)));
        }
        if !(self.z_sensor >= 0.0) || !(self.z_source >= 0.0) {
            return Err(Error::Geometry(format!(
                "heights must be >= 0 (sensor {}, source {})",
                self.z_sensor, self.z_source
            )));
        }
        Ok(())
    }
}

/// A single plume traverse reduced to its cross-plume integral.
///
/// Geometry and meteorology are folded into the [`ForwardModel`] that
/// accompanies each pass, so the measurement itself only carries `c_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassMeasurement {
    /// 1-based.
    pub pass_index: usize,
    /// g/m^2.
    pub cy: f64,
}

impl PassMeasurement {
    pub fn new(pass_index: usize, cy: f64) -> Result<Self> {
        if pass_index == 0 {
            return Err(Error::Domain("pass index is 1-based".into()));
        }
        if !(cy >= 0.0) {
            return Err(Error::Domain(format!("c_y must be >= 0, got {cy}")));
        }
        Ok(PassMeasurement { pass_index, cy })
    }

    /// Numbers a series of `c_y` values from pass 1.
    pub fn series(cy: &[f64]) -> Result<Vec<PassMeasurement>> {
        cy.iter()
            .enumerate()
            .map(|(i, &c)| PassMeasurement::new(i + 1, c))
            .collect()
    }
}

/// Modeled transport for one pass: advection velocity and vertical
/// dispersion factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    /// m/s.
    pub advection_velocity: f64,
    /// 1/m.
    pub dispersion_factor: f64,
}

impl ForwardModel {
    pub fn new(advection_velocity: f64, dispersion_factor: f64) -> Result<Self> {
        let fm = ForwardModel {
            advection_velocity,
            dispersion_factor,
        };
        fm.validate()?;
        Ok(fm)
    }

    /// A model whose transfer coefficient `D_z / u_e` equals `gain`.
    pub fn with_gain(gain: f64) -> Result<Self> {
        ForwardModel::new(1.0, gain)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.advection_velocity > 0.0) {
            return Err(Error::Domain(format!(
                "advection velocity must be > 0, got {}",
                self.advection_velocity
            )));
        }
        if !(self.dispersion_factor >= 0.0) {
            return Err(Error::Domain(format!(
                "dispersion factor must be >= 0, got {}",
                self.dispersion_factor
            )));
        }
        Ok(())
    }

    /// `D_z / u_e`, in s/m^2.
    #[inline]
    pub fn gain(&self) -> f64 {
        self.dispersion_factor / self.advection_velocity
    }

    /// Modeled `c_y` for emission rate `q`. No validation; see
    /// [`forward_concentration`] for the checked form.
    #[inline]
    pub fn predict(&self, q: f64) -> f64 {
        q * self.dispersion_factor / self.advection_velocity
    }
}

/// Nearest-rank 5th percentile of a raw mixing-ratio series.
pub fn ambient_baseline(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.05 * sorted.len() as f64).ceil() as usize).max(1);
    Ok(sorted[rank - 1])
}

/// Converts an above-ambient mixing ratio (ppm) to a methane mass
/// concentration (g/m^3) with the ideal gas law.
pub fn ppm_to_mass_concentration(above_ambient_ppm: f64, temperature: f64, pressure: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0 K, got {temperature}")));
    }
    if !(pressure > 0.0) {
        return Err(Error::Domain(format!("pressure must be > 0 Pa, got {pressure}")));
    }
    Ok(above_ambient_ppm * 1e-6 * METHANE_MOLAR_MASS * pressure / (GAS_CONSTANT * temperature))
}

/// One term of the cross-plume path integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrandSample {
    /// g/m^3.
    pub concentration: f64,
    /// s.
    pub dt: f64,
    /// m/s.
    pub speed: f64,
    /// degrees.
    pub road_angle: f64,
}

fn check_road_angle(deg: f64) -> Result<()> {
    if !(deg > 0.0 && deg <= 90.0) {
        return Err(Error::Geometry(format!(
            "road angle must lie in (0, 90] degrees, got {deg}"
        )));
    }
    Ok(())
}

/// `c_y = sum(c * dt * V * sin(theta_r))`, in g/m^2.
pub fn cross_plume_integrate(samples: &[IntegrandSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        check_road_angle(s.road_angle)?;
        if !(s.dt > 0.0) {
            return Err(Error::Domain(format!("sample spacing must be > 0, got {}", s.dt)));
        }
        total += s.concentration * s.dt * s.speed * s.road_angle.to_radians().sin();
    }
    Ok(total)
}

/// Reduces one pass of raw samples to `c_y`.
///
/// Concentrations below the ambient baseline are clamped to zero. Each
/// sample is weighted by the spacing to the next sample; the last sample
/// reuses the preceding spacing.
pub fn integrate_pass(samples: &[RawSample], baseline_ppm: f64, temperature: f64, pressure: f64) -> Result<f64> {
    match samples.len() {
        0 => return Ok(0.0),
        1 => return Err(Error::InsufficientData { needed: 2, got: 1 }),
        _ => {}
    }
    let mut terms = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        let dt = if i + 1 < samples.len() {
            samples[i + 1].time - s.time
        } else {
            s.time - samples[i - 1].time
        };
        let above = (s.mixing_ratio - baseline_ppm).max(0.0);
        terms.push(IntegrandSample {
            concentration: ppm_to_mass_concentration(above, temperature, pressure)?,
            dt,
            speed: s.vehicle_speed,
            road_angle: s.position_angle,
        });
    }
    cross_plume_integrate(&terms)
}

/// Source of the modeled vertical dispersion factor `D_z` (1/m).
pub trait DispersionModel: Send + Sync {
    fn dispersion_factor(&self, met: &MetSummary, geom: &Geometry) -> Result<f64>;
}

/// Ground-reflected Gaussian vertical profile with
/// `sigma_z = a * sigma_w * x_m / u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectedGaussian {
    pub spread_coefficient: f64,
}

impl Default for ReflectedGaussian {
    fn default() -> Self {
        ReflectedGaussian {
            spread_coefficient: 1.0,
        }
    }
}

impl ReflectedGaussian {
    pub fn sigma_z(&self, met: &MetSummary, geom: &Geometry) -> f64 {
        self.spread_coefficient * met.sigma_w * geom.x_m / met.mean_streamwise_velocity
    }

    /// Profile value at height `z` for a given vertical spread.
    pub fn profile(z: f64, source_height: f64, sigma_z: f64) -> f64 {
        let two_var = 2.0 * sigma_z * sigma_z;
        let direct = (-(z - source_height).powi(2) / two_var).exp();
        let image = (-(z + source_height).powi(2) / two_var).exp();
        (direct + image) / ((2.0 * PI).sqrt() * sigma_z)
    }
}

impl DispersionModel for ReflectedGaussian {
    fn dispersion_factor(&self, met: &MetSummary, geom: &Geometry) -> Result<f64> {
        geom.validate()?;
        let sigma_z = self.sigma_z(met, geom);
        if !(sigma_z > 0.0) || !sigma_z.is_finite() {
            return Err(Error::DegenerateDispersion { sigma_z });
        }
        Ok(Self::profile(geom.z_sensor, geom.z_source, sigma_z))
    }
}

/// Fixed `D_z` regardless of conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDispersion(pub f64);

impl DispersionModel for ConstantDispersion {
    fn dispersion_factor(&self, _met: &MetSummary, _geom: &Geometry) -> Result<f64> {
        if !(self.0 >= 0.0) {
            return Err(Error::Domain(format!("dispersion factor must be >= 0, got {}", self.0)));
        }
        Ok(self.0)
    }
}

/// Default surrogate: [`ReflectedGaussian`] with `a = 1`.
pub fn dispersion_factor(met: &MetSummary, geom: &Geometry) -> Result<f64> {
    ReflectedGaussian::default().dispersion_factor(met, geom)
}

/// Builds the per-pass forward model. The advection velocity is the mean
/// streamwise velocity times `velocity_multiplier`.
pub fn forward_model_for(
    model: &dyn DispersionModel,
    met: &MetSummary,
    geom: &Geometry,
    velocity_multiplier: f64,
) -> Result<ForwardModel> {
    met.validate()?;
    let d = model.dispersion_factor(met, geom)?;
    ForwardModel::new(met.mean_streamwise_velocity * velocity_multiplier, d)
}

/// `c_y,M(Q) = Q * D_z / u_e`, in g/m^2.
pub fn forward_concentration(q: f64, fm: &ForwardModel) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::Domain(format!("emission rate must be >= 0, got {q}")));
    }
    fm.validate()?;
    Ok(fm.predict(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn met() -> MetSummary {
        MetSummary {
            mean_streamwise_velocity: 2.72,
            sigma_u: 1.15,
            sigma_w: 0.4,
            turbulent_intensity: None,
            friction_velocity: 0.24,
            wind_direction: 152.0,
            sensible_heat_flux: 161.21,
            z_over_l: -0.30,
            obukhov_length: None,
            surface_roughness: 0.02,
            temperature: 298.15,
        }
    }

    /// Geometry whose sigma_z equals 1 m under `met()`.
    fn unit_spread_geometry(z_sensor: f64, z_source: f64) -> Geometry {
        let m = met();
        Geometry {
            x_m: m.mean_streamwise_velocity / m.sigma_w,
            z_sensor,
            z_source,
        }
    }

    #[test]
    fn baseline_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(ambient_baseline(&v).unwrap(), 5.0);
        assert_eq!(ambient_baseline(&[1.9; 37]).unwrap(), 1.9);
        let twenty: Vec<f64> = (0..20).rev().map(|i| 2.0 + 0.1 * i as f64).collect();
        assert_eq!(ambient_baseline(&twenty).unwrap(), 2.0);
        assert!(matches!(ambient_baseline(&[]), Err(Error::NoSamples)));
    }

    #[test]
    fn ppm_conversion() {
        assert_eq!(ppm_to_mass_concentration(0.0, 250.0, 90_000.0).unwrap(), 0.0);
        // Ideal-gas molar volume: 24.465 L/mol at 25 C, 22.414 L/mol at 0 C.
        let at25 = ppm_to_mass_concentration(1.0, 298.15, DEFAULT_PRESSURE_PA).unwrap();
        assert!((at25 / (1e-6 * 16.04 / 0.024465) - 1.0).abs() < 1e-4, "{at25}");
        assert!((at25 - 6.56e-4).abs() < 5e-6);
        let at0 = ppm_to_mass_concentration(1.0, 273.15, DEFAULT_PRESSURE_PA).unwrap();
        assert!((at0 / (1e-6 * 16.04 / 0.022414) - 1.0).abs() < 1e-4, "{at0}");
        assert!((at0 - 7.16e-4).abs() < 5e-6);
        assert!(ppm_to_mass_concentration(1.0, 0.0, 1.0).is_err());
        assert!(ppm_to_mass_concentration(1.0, 300.0, -1.0).is_err());
    }

    #[test]
    fn integrate_constant_integrand() {
        let s = |deg| IntegrandSample {
            concentration: 1.0,
            dt: 0.1,
            speed: 2.0,
            road_angle: deg,
        };
        let perpendicular = vec![s(90.0); 10];
        assert!((cross_plume_integrate(&perpendicular).unwrap() - 2.0).abs() < 1e-12);
        let oblique = vec![s(30.0); 10];
        assert!((cross_plume_integrate(&oblique).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cross_plume_integrate(&[]).unwrap(), 0.0);
        assert!(matches!(cross_plume_integrate(&[s(0.0)]), Err(Error::Geometry(_))));
        assert!(matches!(cross_plume_integrate(&[s(90.5)]), Err(Error::Geometry(_))));
    }

    #[test]
    fn integrate_pass_by_hand() {
        let samples = [
            RawSample { time: 0.0, mixing_ratio: 2.0, position_angle: 90.0, vehicle_speed: 2.0 },
            RawSample { time: 0.1, mixing_ratio: 3.0, position_angle: 90.0, vehicle_speed: 2.0 },
            RawSample { time: 0.3, mixing_ratio: 1.5, position_angle: 30.0, vehicle_speed: 1.0 },
        ];
        let k = 1e-6 * METHANE_MOLAR_MASS * DEFAULT_PRESSURE_PA / (GAS_CONSTANT * 300.0);
        // above-ambient ppm: 0.5, 1.5, clamped 0; spacings 0.1, 0.2, 0.2
        let hand = k * (0.5 * 0.1 * 2.0 + 1.5 * 0.2 * 2.0 + 0.0);
        let got = integrate_pass(&samples, 1.5, 300.0, DEFAULT_PRESSURE_PA).unwrap();
        assert!((got - hand).abs() < 1e-15, "{got} vs {hand}");
    }

    #[test]
    fn reflected_gaussian_ground_peak() {
        let d = dispersion_factor(&met(), &unit_spread_geometry(0.0, 0.0)).unwrap();
        assert!((d - 2.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((d - 0.7979).abs() < 1e-4);
    }

    #[test]
    fn reflected_gaussian_doubling_distance_halves_peak() {
        let g = unit_spread_geometry(0.0, 0.0);
        let near = dispersion_factor(&met(), &g).unwrap();
        let far = dispersion_factor(&met(), &Geometry { x_m: 2.0 * g.x_m, ..g }).unwrap();
        assert!((far - near / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reflected_gaussian_conserves_mass() {
        // Composite Simpson over [0, 10 (h + 5 sigma_z)].
        for &(h, sigma) in &[(0.0, 1.0), (0.05, 0.3), (2.0, 0.7), (1.0, 4.0)] {
            let upper = 10.0 * (h + 5.0 * sigma);
            let n = 200_000;
            let step = upper / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * ReflectedGaussian::profile(i as f64 * step, h, sigma);
            }
            let integral = acc * step / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "h={h} sigma={sigma}: {integral}");
        }
    }

    #[test]
    fn degenerate_dispersion() {
        let mut m = met();
        m.sigma_w = 0.0;
        let err = ReflectedGaussian::default()
            .dispersion_factor(&m, &unit_spread_geometry(1.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateDispersion { .. }));
    }

    #[test]
    fn forward_model_values() {
        let fm = ForwardModel::new(2.72, 1.0).unwrap();
        assert_eq!(forward_concentration(0.0, &fm).unwrap(), 0.0);
        let c = forward_concentration(0.083, &fm).unwrap();
        assert!((c - 0.030_514_7).abs() < 1e-6, "{c}");
        assert!(ForwardModel::new(0.0, 1.0).is_err());
        assert!(forward_concentration(-1.0, &fm).is_err());
    }

    #[test]
    fn met_validation() {
        let mut m = met();
        m.turbulent_intensity = Some(1.15 / 2.72);
        assert!(m.validate().is_ok());
        m.turbulent_intensity = Some(0.31);
        assert!(m.validate().is_err());
        m.turbulent_intensity = None;
        m.mean_streamwise_velocity = 0.0;
        assert!(m.validate().is_err());
    }
}
