// The command-line workflow on files: synthesize instances, calibrate,
// detect, then sweep.

use std::path::PathBuf;
use std::process::ExitCode;

use emission_cpd::cli::main_with_args;
use emission_cpd::io::{read_events, read_instances, read_report, write_met, write_passes, MetRow, PassSeries};
use emission_cpd::synthesis::SURROGATE_Q_TRUE;
use emission_cpd::transport::PassMeasurement;

fn run(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["emission-cpd"];
    argv.extend_from_slice(args);
    match main_with_args(argv) {
        c if c == ExitCode::SUCCESS => Ok(()),
        c => Err(format!("{args:?} failed with {c:?}")),
    }
}

pub fn run_example() -> Result<PathBuf, Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("emission-cpd-example-{}", std::process::id()));
    let out = dir.to_str().ok_or("non-utf8 temp dir")?.to_string();

    run(&["synth", "--surrogate-cv", "0.3", "--lrr", "3", "--instances", "1", "--seed", "7", "--out", &out])?;
    let rows = read_instances(&dir.join("instances.csv"))?;

    // Re-shape the instance as a measured pass series with matching met.
    let passes: Vec<PassMeasurement> = rows
        .iter()
        .map(|r| PassMeasurement::new(r.pass_index, r.cy_g_per_m2))
        .collect::<Result<_, _>>()?;
    write_passes(&dir.join("passes.csv"), &PassSeries::from([(1, passes)]))?;
    let met = MetRow {
        experiment_id: 1,
        x_m: 30.0,
        n_passes: Some(rows.len()),
        doy: Some(180),
        u_mean_mps: 2.5,
        sigma_u_mps: 0.9,
        turbulent_intensity: None,
        friction_velocity_mps: 0.3,
        wind_direction_deg: 270.0,
        sensible_heat_flux_wm2: 80.0,
        z_over_l: -0.2,
        sigma_w_mps: 0.4,
        z0_m: 0.02,
        temperature_k: 293.0,
        obukhov_length_m: None,
        pressure_pa: None,
        z_sensor_m: None,
        z_source_m: None,
        u_e_multiplier: None,
    };
    write_met(&dir.join("met.csv"), &[(1, met)].into())?;

    let passes = dir.join("passes.csv");
    let met = dir.join("met.csv");
    let (passes, met) = (passes.to_str().unwrap(), met.to_str().unwrap());
    run(&["calibrate", "--passes", passes, "--met", met, "--q-true", "0.1", "--out", &out])?;
    run(&["detect", "--passes", passes, "--met", met, "--sigma-e", "0.004", "--out", &out])?;
    println!("{} events", read_events(&dir.join("events.json"))?.len());

    let q = SURROGATE_Q_TRUE.to_string();
    run(&[
        "sweep", "--surrogate-cv", "0.5", "--q-true", &q, "--lrr", "1.5,4.5", "--threshold", "0.5,0.8",
        "--instances", "20", "--repetitions", "3", "--n-boot", "200", "--seed", "1", "--out", &out,
    ])?;
    println!("{} report rows", read_report(&dir.join("report.csv"))?.len());
    Ok(dir)
}

#[allow(dead_code)]
fn main() {
    let dir = run_example().unwrap();
    println!("outputs in {}", dir.display());
}
