// Streams passes through a detector, one at a time, across a tripling of
// the release rate.

use emission_cpd::detector::{Detector, DetectorConfig};
use emission_cpd::synthesis::{rng_from_seed, synthesize_instance, Surrogate};
use emission_cpd::transport::PassMeasurement;

pub fn run_example() -> Result<Vec<usize>, Box<dyn std::error::Error>> {
    let s = Surrogate::new(5, 12, 0.3, 0.083, 0.02, 3)?;
    let inst = synthesize_instance(&s.experiment, 3.0, &mut rng_from_seed(8))?;
    let mut detector = Detector::new(DetectorConfig::new(s.sigma_e))?;

    let mut detected = Vec::new();
    for pass in PassMeasurement::series(&inst.series)? {
        let (report, event) = detector.step(&pass, &s.forward_model)?;
        println!(
            "pass {:2}  c_y {:.4}  P(change) {:.3}  Q {:.3} +/- {:.3}",
            report.pass_index,
            report.cy,
            report.changepoint_probability.unwrap_or(0.0),
            report.mode,
            report.std
        );
        if let Some(e) = event {
            println!(
                "  change declared; previous regime {:.3} +/- {:.3} g/s",
                e.retained_mode(),
                e.retained_std()
            );
            detected.push(e.pass_index);
        }
    }
    println!("true change after pass {}", inst.true_cp_index);
    Ok(detected)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
