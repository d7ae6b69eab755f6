//! Scoring detections against known changepoints.
//!
//! Delays are counted in passes after the last pre-change pass, so a
//! detection on the first post-change pass has delay 1.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{first_crossings, DetectorConfig};
use crate::error::{Error, Result};
use crate::synthesis::{derive_seed, instance_seed, rng_from_seed, synthesize_instance, ExperimentRecord};
use crate::transport::ForwardModel;

pub const DEFAULT_N_BOOT: usize = 10_000;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeLabel {
    /// Detected on the first post-change pass.
    Tp,
    /// Detected on a later post-change pass.
    Dtp,
    /// Never detected.
    Fn,
    /// A detection at or before the last pre-change pass.
    Fp,
}

/// Labels one instance from its detection passes (1-based). Any detection
/// up to `true_cp` makes the instance a false positive.
pub fn classify_outcome(event_passes: &[usize], true_cp: usize) -> OutcomeLabel {
    if event_passes.iter().any(|&p| p <= true_cp) {
        return OutcomeLabel::Fp;
    }
    match event_passes.iter().min() {
        None => OutcomeLabel::Fn,
        Some(&p) if p == true_cp + 1 => OutcomeLabel::Tp,
        Some(_) => OutcomeLabel::Dtp,
    }
}

/// Delay in passes of the first detection, for TP and DTP instances.
pub fn detection_delay(event_passes: &[usize], true_cp: usize) -> Option<usize> {
    match classify_outcome(event_passes, true_cp) {
        OutcomeLabel::Tp | OutcomeLabel::Dtp => event_passes.iter().min().map(|p| p - true_cp),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: u64,
    pub dtp: u64,
    pub fn_: u64,
    pub fp: u64,
}

impl OutcomeCounts {
    pub fn from_labels(labels: &[OutcomeLabel]) -> Self {
        let mut c = OutcomeCounts::default();
        for l in labels {
            c.add(*l);
        }
        c
    }

    pub fn add(&mut self, label: OutcomeLabel) {
        match label {
            OutcomeLabel::Tp => self.tp += 1,
            OutcomeLabel::Dtp => self.dtp += 1,
            OutcomeLabel::Fn => self.fn_ += 1,
            OutcomeLabel::Fp => self.fp += 1,
        }
    }

    pub fn merge(&mut self, other: &OutcomeCounts) {
        self.tp += other.tp;
        self.dtp += other.dtp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.dtp + self.fn_ + self.fp
    }

    fn scored(&self) -> Result<f64> {
        let n = self.tp + self.dtp + self.fn_;
        if n == 0 {
            return Err(Error::UndefinedMetric("recall with no TP, DTP or FN instances".into()));
        }
        Ok(n as f64)
    }

    /// TP / (TP + DTP + FN).
    pub fn recall(&self) -> Result<f64> {
        Ok(self.tp as f64 / self.scored()?)
    }

    /// (TP + DTP) / (TP + DTP + FN).
    pub fn detection_recall(&self) -> Result<f64> {
        Ok((self.tp + self.dtp) as f64 / self.scored()?)
    }

    /// FP / all instances.
    pub fn false_positive_rate(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::UndefinedMetric("false positive rate of no instances".into()));
        }
        Ok(self.fp as f64 / self.total() as f64)
    }
}

/// A metric value with its confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricEstimate {
    pub fn point(value: f64) -> Self {
        MetricEstimate {
            value,
            ci_low: value,
            ci_high: value,
        }
    }

    pub fn overlaps(&self, other: &MetricEstimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub counts: OutcomeCounts,
    /// Absent when every instance was a false positive.
    pub recall: Option<MetricEstimate>,
    pub detection_recall: Option<MetricEstimate>,
    /// Mean delay in passes; present only when every scored instance was
    /// detected.
    pub detection_delay: Option<f64>,
    pub false_positive_rate: MetricEstimate,
}

/// Metrics of a single instance set. `delays` are the TP and DTP delays.
pub fn compute_metrics(labels: &[OutcomeLabel], delays: &[f64]) -> Result<PerformanceReport> {
    if labels.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let counts = OutcomeCounts::from_labels(labels);
    let recall = counts.recall()?;
    let detection_recall = counts.detection_recall()?;
    Ok(PerformanceReport {
        counts,
        recall: Some(MetricEstimate::point(recall)),
        detection_recall: Some(MetricEstimate::point(detection_recall)),
        detection_delay: full_detection_delay(&counts, delays),
        false_positive_rate: MetricEstimate::point(counts.false_positive_rate()?),
    })
}

fn full_detection_delay(counts: &OutcomeCounts, delays: &[f64]) -> Option<f64> {
    (counts.fn_ == 0 && !delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci<R: Rng + ?Sized>(values: &[f64], level: f64, n_boot: usize, rng: &mut R) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config("level", format!("must lie in (0, 1), got {level}")));
    }
    if n_boot == 0 {
        return Err(Error::config("n_boot", "must be positive"));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}

/// Sizes of one evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSize {
    pub instances: usize,
    pub repetitions: usize,
    pub n_boot: usize,
}

impl Default for CellSize {
    fn default() -> Self {
        CellSize {
            instances: 1000,
            repetitions: 100,
            n_boot: DEFAULT_N_BOOT,
        }
    }
}

/// Per-repetition mean of the defined values and a bootstrap interval over
/// repetitions.
fn summarize<R: Rng + ?Sized>(values: &[f64], n_boot: usize, rng: &mut R) -> Result<Option<MetricEstimate>> {
    let value = match values.len() {
        0 => return Ok(None),
        1 => return Ok(Some(MetricEstimate::point(values[0]))),
        n => values.iter().sum::<f64>() / n as f64,
    };
    let (ci_low, ci_high) = bootstrap_ci(values, DEFAULT_CI_LEVEL, n_boot, rng)?;
    Ok(Some(MetricEstimate { value, ci_low, ci_high }))
}

const REPETITION_TAG: u64 = 0x7265_7065_7469_7469;
const BOOTSTRAP_TAG: u64 = 0x626f_6f74_7374_7270;

/// Evaluates the detector on freshly synthesized instances at one leak
/// rate ratio, for each threshold in `thresholds` (which override
/// `cfg.threshold`). All thresholds see the same instances. Results are
/// independent of the rayon pool size.
pub fn evaluate_cell_thresholds(
    exp: &ExperimentRecord,
    fm: &ForwardModel,
    lrr: f64,
    cfg: &DetectorConfig,
    thresholds: &[f64],
    size: CellSize,
    seed: u64,
) -> Result<Vec<PerformanceReport>> {
    exp.validate()?;
    cfg.validate()?;
    if size.instances == 0 || size.repetitions == 0 {
        return Err(Error::config("instances", "instances and repetitions must be positive"));
    }
    let true_cp = exp.n_passes();
    let n = size.instances;
    let crossings: Vec<Vec<Option<usize>>> = (0..size.repetitions * n)
        .into_par_iter()
        .map(|unit| {
            let (rep, i) = (unit / n, unit % n);
            let rep_seed = derive_seed(seed, &[REPETITION_TAG, rep as u64]);
            let mut rng = rng_from_seed(instance_seed(rep_seed, exp.id, lrr, i));
            let inst = synthesize_instance(exp, lrr, &mut rng)?;
            first_crossings(&inst.series, fm, cfg, thresholds).map_err(|e| {
                e.context(format!("experiment {} lrr {lrr} repetition {rep} instance {i}", exp.id))
            })
        })
        .collect::<Result<_>>()?;

    thresholds
        .iter()
        .enumerate()
        .map(|(t_idx, &threshold)| {
            let mut pooled = OutcomeCounts::default();
            let mut all_delays = Vec::new();
            let (mut recalls, mut det_recalls, mut fprs) = (Vec::new(), Vec::new(), Vec::new());
            for rep in crossings.chunks(n) {
                let mut counts = OutcomeCounts::default();
                for c in rep {
                    let passes: Vec<usize> = c[t_idx].into_iter().collect();
                    counts.add(classify_outcome(&passes, true_cp));
                    all_delays.extend(detection_delay(&passes, true_cp).map(|d| d as f64));
                }
                if let (Ok(r), Ok(d)) = (counts.recall(), counts.detection_recall()) {
                    recalls.push(r);
                    det_recalls.push(d);
                }
                fprs.push(counts.false_positive_rate()?);
                pooled.merge(&counts);
            }
            let boot_seed = |metric: u64| derive_seed(seed, &[BOOTSTRAP_TAG, u64::from(exp.id), lrr.to_bits(), threshold.to_bits(), metric]);
            Ok(PerformanceReport {
                counts: pooled,
                recall: summarize(&recalls, size.n_boot, &mut rng_from_seed(boot_seed(0)))?,
                detection_recall: summarize(&det_recalls, size.n_boot, &mut rng_from_seed(boot_seed(1)))?,
                detection_delay: full_detection_delay(&pooled, &all_delays),
                false_positive_rate: summarize(&fprs, size.n_boot, &mut rng_from_seed(boot_seed(2)))?
                    .expect("at least one repetition"),
            })
        })
        .collect()
}

/// [`evaluate_cell_thresholds`] at `cfg.threshold` alone.
pub fn evaluate_cell(
    exp: &ExperimentRecord,
    fm: &ForwardModel,
    lrr: f64,
    cfg: &DetectorConfig,
    size: CellSize,
    seed: u64,
) -> Result<PerformanceReport> {
    let mut reports = evaluate_cell_thresholds(exp, fm, lrr, cfg, &[cfg.threshold], size, seed)?;
    Ok(reports.remove(0))
}
