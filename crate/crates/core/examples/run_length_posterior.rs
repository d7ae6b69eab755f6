// Steps the run-length recursion by hand and prints how the mass over
// regime ages moves after a jump.

use std::sync::Arc;

use emission_cpd::bocd::{BocdConfig, RunLengthState};
use emission_cpd::inference::{LikelihoodConfig, QGrid};
use emission_cpd::transport::ForwardModel;

pub fn run_example() -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    let grid = Arc::new(QGrid::new(0.0, 5.0, 0.01)?);
    let fm = ForwardModel::with_gain(1.0)?;
    let lik = LikelihoodConfig::new(0.15)?;
    let cfg = BocdConfig::default();

    let mut state = RunLengthState::fresh(grid);
    let mut probs = Vec::new();
    for cy in [1.0, 1.1, 0.9, 1.05, 0.95, 2.6, 2.5] {
        state.step(cy, &fm, &lik, &cfg)?;
        let dist = state.run_length_distribution();
        let (map_r, _) = dist
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (r, &p)| if p > best.1 { (r, p) } else { best });
        println!(
            "k={} c_y={cy:.2}  P(change)={:.4}  most likely age {map_r}  log evidence {:.2}",
            state.k(),
            state.changepoint_probability(),
            state.log_evidence()
        );
        probs.push(state.changepoint_probability());
    }
    Ok(probs)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
