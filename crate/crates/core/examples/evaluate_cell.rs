// Recall, detection recall, delay and false-positive rate for one
// surrogate at a few leak-rate ratios.

use emission_cpd::detector::DetectorConfig;
use emission_cpd::metrics::{evaluate_cell_thresholds, CellSize, PerformanceReport};
use emission_cpd::synthesis::Surrogate;

pub fn run_example() -> Result<Vec<PerformanceReport>, Box<dyn std::error::Error>> {
    let s = Surrogate::standard(1, 0.5, 17)?;
    let cfg = DetectorConfig::new(s.sigma_e);
    let size = CellSize {
        instances: 100,
        repetitions: 5,
        n_boot: 1000,
    };
    let thresholds = [0.5, 0.8];

    let mut out = Vec::new();
    for lrr in [1.0, 2.0, 4.0] {
        let reports = evaluate_cell_thresholds(&s.experiment, &s.forward_model, lrr, &cfg, &thresholds, size, 1)?;
        for (t, r) in thresholds.iter().zip(&reports) {
            let fmt = |m: Option<emission_cpd::metrics::MetricEstimate>| {
                m.map_or("-".to_string(), |m| format!("{:.3} [{:.3}, {:.3}]", m.value, m.ci_low, m.ci_high))
            };
            println!(
                "LRR {lrr} threshold {t}: recall {}  detection recall {}  delay {}  FPR {:.3}",
                fmt(r.recall),
                fmt(r.detection_recall),
                r.detection_delay.map_or("-".to_string(), |d| format!("{d:.2}")),
                r.false_positive_rate.value
            );
        }
        out.extend(reports);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
