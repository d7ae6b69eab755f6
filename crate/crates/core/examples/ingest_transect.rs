// Turns one simulated drive through a plume into a crosswind-integrated
// concentration.

use emission_cpd::transport::{ambient_baseline, integrate_pass, RawSample, DEFAULT_PRESSURE_PA};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    // 1 Hz readings at 10 m/s across a road 60 degrees off the wind.
    let samples: Vec<RawSample> = (0..60)
        .map(|i| {
            let t = i as f64;
            let plume = 2.5 * (-(t - 30.0).powi(2) / (2.0 * 4.0f64.powi(2))).exp();
            RawSample {
                time: t,
                mixing_ratio: 1.95 + plume + 0.01 * ((i * 7 % 5) as f64 - 2.0),
                position_angle: 60.0,
                vehicle_speed: 10.0,
            }
        })
        .collect();

    let ppm: Vec<f64> = samples.iter().map(|s| s.mixing_ratio).collect();
    let baseline = ambient_baseline(&ppm)?;
    let cy = integrate_pass(&samples, baseline, 288.15, DEFAULT_PRESSURE_PA)?;
    println!("baseline {baseline:.3} ppm, c_y = {cy:.5} g/m^2");
    Ok(cy)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
