// Recursive grid posterior for a constant release, with the scale
// calibrated from the passes themselves.

use std::sync::Arc;

use emission_cpd::detector::estimate_series;
use emission_cpd::inference::{estimate_sigma_e, QGrid};
use emission_cpd::synthesis::Surrogate;
use emission_cpd::transport::PassMeasurement;

pub fn run_example() -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let s = Surrogate::standard(1, 0.4, 11)?;
    let sigma_e = estimate_sigma_e(&s.experiment.cy_series, s.q_true, &[s.forward_model])?;
    let stream = PassMeasurement::series(&s.experiment.cy_series)?;

    let reports = estimate_series(&stream, &[s.forward_model], Arc::new(QGrid::default()), sigma_e)?;
    for r in &reports {
        println!("pass {:2}: mode {:.3} g/s, mean {:.3} +/- {:.3}", r.pass_index, r.mode, r.mean, r.std);
    }
    let last = reports.last().expect("non-empty");
    println!("true rate {} g/s", s.q_true);
    Ok((last.mean, last.std))
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
