//! Changepoint-bearing series built from a constant-rate experiment by
//! shuffling, scaling and concatenating its passes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::estimate_sigma_e;
use crate::transport::{ForwardModel, MetSummary};

/// PRNG used everywhere randomness is needed.
pub type SimRng = ChaCha8Rng;

/// Leak-rate ratios swept by default.
pub const DEFAULT_LRR_GRID: [f64; 7] = [1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5];

/// Jump-to-noise ratios 1.5, 2.5, ..., 15.5.
pub fn default_jnr_grid() -> Vec<f64> {
    (0..15).map(|i| 1.5 + i as f64).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a unit of work identified by `path` under `master`.
/// Independent of scheduling, so parallel and serial runs agree.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// A constant-rate field experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: u32,
    /// Source-to-sensor distance, m.
    pub x_m: f64,
    /// `c_y` per pass (the original signal), g/m^2.
    pub cy_series: Vec<f64>,
    pub met: Option<MetSummary>,
}

impl ExperimentRecord {
    pub fn new(id: u32, x_m: f64, cy_series: Vec<f64>) -> Result<Self> {
        let exp = ExperimentRecord {
            id,
            x_m,
            cy_series,
            met: None,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cy_series.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: self.cy_series.len(),
            });
        }
        if self.cy_series.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::Domain(format!("experiment {}: c_y values must be >= 0", self.id)));
        }
        Ok(())
    }

    /// N.
    pub fn n_passes(&self) -> usize {
        self.cy_series.len()
    }

    pub fn mean_cy(&self) -> f64 {
        self.cy_series.iter().sum::<f64>() / self.cy_series.len() as f64
    }
}

/// One synthetic series: a shuffled original followed by a shuffled,
/// scaled copy.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedInstance {
    pub experiment_id: u32,
    pub instance_index: usize,
    /// 2N values, g/m^2.
    pub series: Vec<f64>,
    /// Last pre-change pass (1-based); the change takes effect at the
    /// following pass.
    pub true_cp_index: usize,
    pub lrr: f64,
}

impl SynthesizedInstance {
    pub fn pre_change(&self) -> &[f64] {
        &self.series[..self.true_cp_index]
    }

    pub fn post_change(&self) -> &[f64] {
        &self.series[self.true_cp_index..]
    }

    /// `(mean after - mean before) / std before`.
    pub fn jnr(&self) -> Result<f64> {
        let before = sample_moments(self.pre_change());
        let after = sample_moments(self.post_change());
        if before.1 == 0.0 {
            return Err(Error::UndefinedMetric("JNR of a constant pre-change signal".into()));
        }
        Ok((after.0 - before.0) / before.1)
    }
}

fn check_lrr(lrr: f64) -> Result<()> {
    if !(lrr > 0.0) || !lrr.is_finite() {
        return Err(Error::Domain(format!("leak rate ratio must be > 0, got {lrr}")));
    }
    Ok(())
}

/// Shuffles the original and an `lrr`-scaled copy independently and
/// concatenates them original-first.
pub fn synthesize_instance<R: Rng + ?Sized>(exp: &ExperimentRecord, lrr: f64, rng: &mut R) -> Result<SynthesizedInstance> {
    exp.validate()?;
    check_lrr(lrr)?;
    let n = exp.n_passes();
    let mut series = Vec::with_capacity(2 * n);
    let mut original = exp.cy_series.clone();
    original.shuffle(rng);
    series.extend(original);
    let mut scaled: Vec<f64> = exp.cy_series.iter().map(|c| c * lrr).collect();
    scaled.shuffle(rng);
    series.extend(scaled);
    Ok(SynthesizedInstance {
        experiment_id: exp.id,
        instance_index: 0,
        series,
        true_cp_index: n,
        lrr,
    })
}

/// `n_instances` independent instances. Instance `i` draws from a child
/// seed of `(seed, experiment id, lrr, i)`.
pub fn synthesize_batch(exp: &ExperimentRecord, lrr: f64, n_instances: usize, seed: u64) -> Result<Vec<SynthesizedInstance>> {
    exp.validate()?;
    check_lrr(lrr)?;
    if n_instances == 0 {
        return Err(Error::Domain("need at least one instance".into()));
    }
    (0..n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(instance_seed(seed, exp.id, lrr, i));
            let mut inst = synthesize_instance(exp, lrr, &mut rng)?;
            inst.instance_index = i;
            Ok(inst)
        })
        .collect()
}

pub fn instance_seed(seed: u64, experiment_id: u32, lrr: f64, index: usize) -> u64 {
    derive_seed(seed, &[u64::from(experiment_id), lrr.to_bits(), index as u64])
}

/// Summary statistics of a `c_y` series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub mean: f64,
    /// Sample standard deviation (N - 1).
    pub std: f64,
    pub cv: f64,
    pub range: f64,
    /// `(lrr - 1) / cv`.
    pub jnr: f64,
}

fn sample_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn signal_stats(series: &[f64], lrr: f64) -> Result<SignalStats> {
    if series.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: series.len(),
        });
    }
    let (mean, std) = sample_moments(series);
    if !(mean > 0.0) {
        return Err(Error::UndefinedMetric(format!("CV of a series with mean {mean}")));
    }
    let cv = std / mean;
    if cv == 0.0 {
        return Err(Error::UndefinedMetric("JNR of a constant series (CV = 0)".into()));
    }
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SignalStats {
        mean,
        std,
        cv,
        range: max - min,
        jnr: (lrr - 1.0) / cv,
    })
}

/// Leak-rate ratio that produces a given JNR for a signal with this CV.
pub fn lrr_for_jnr(jnr: f64, cv: f64) -> f64 {
    1.0 + jnr * cv
}

/// Lognormal stand-in for a field experiment: `n` passes with mean close
/// to `mean_cy` and sample CV within 5% of `cv`.
pub fn lognormal_experiment(id: u32, x_m: f64, n: usize, mean_cy: f64, cv: f64, seed: u64) -> Result<ExperimentRecord> {
    if n < 2 || !(cv > 0.0) || !(mean_cy > 0.0) {
        return Err(Error::Domain(format!("bad surrogate parameters n={n} cv={cv} mean={mean_cy}")));
    }
    let sigma = (1.0 + cv * cv).ln().sqrt();
    let dist = LogNormal::new(mean_cy.ln() - 0.5 * sigma * sigma, sigma)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = rng_from_seed(derive_seed(seed, &[u64::from(id), cv.to_bits()]));
    for _ in 0..100_000 {
        let cy: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let (m, s) = sample_moments(&cy);
        if ((s / m) - cv).abs() <= 0.05 * cv {
            return ExperimentRecord::new(id, x_m, cy);
        }
    }
    Err(Error::Domain(format!("could not draw a surrogate with CV {cv}")))
}

/// Rate assumed for surrogate experiments, g/s.
pub const SURROGATE_Q_TRUE: f64 = 0.083;
/// Mean `c_y` of surrogate experiments, g/m^2.
pub const SURROGATE_MEAN_CY: f64 = 0.02;

/// A lognormal surrogate experiment together with the forward model and
/// likelihood scale calibrated to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub experiment: ExperimentRecord,
    pub forward_model: ForwardModel,
    pub sigma_e: f64,
    pub q_true: f64,
}

impl Surrogate {
    /// The forward model maps `q_true` onto `mean_cy` exactly; `sigma_e`
    /// is the residual spread of the drawn passes about that prediction.
    pub fn new(id: u32, n: usize, cv: f64, q_true: f64, mean_cy: f64, seed: u64) -> Result<Self> {
        if !(q_true > 0.0) {
            return Err(Error::Domain(format!("surrogate rate must be > 0, got {q_true}")));
        }
        let experiment = lognormal_experiment(id, 20.0, n, mean_cy, cv, seed)?;
        let forward_model = ForwardModel::with_gain(mean_cy / q_true)?;
        let sigma_e = estimate_sigma_e(&experiment.cy_series, q_true, &[forward_model])?;
        Ok(Surrogate {
            experiment,
            forward_model,
            sigma_e,
            q_true,
        })
    }

    /// Defaults used throughout the evaluation: 14 passes, rate 0.083 g/s,
    /// mean `c_y` 0.02 g/m^2.
    pub fn standard(id: u32, cv: f64, seed: u64) -> Result<Self> {
        Self::new(id, 14, cv, SURROGATE_Q_TRUE, SURROGATE_MEAN_CY, seed)
    }
}
