// Predicted crosswind-integrated concentration for a candidate release
// rate, from a row of meteorology.

use emission_cpd::transport::{forward_model_for, Geometry, MetSummary, ReflectedGaussian};

pub fn run_example() -> Result<f64, Box<dyn std::error::Error>> {
    let met = MetSummary {
        mean_streamwise_velocity: 3.2,
        sigma_u: 1.1,
        sigma_w: 0.45,
        turbulent_intensity: None,
        friction_velocity: 0.35,
        wind_direction: 250.0,
        sensible_heat_flux: 120.0,
        z_over_l: -0.4,
        obukhov_length: None,
        surface_roughness: 0.03,
        temperature: 295.0,
    };
    let geom = Geometry {
        x_m: 40.0,
        z_sensor: 1.3,
        z_source: 0.05,
    };

    let fm = forward_model_for(&ReflectedGaussian::default(), &met, &geom, 1.0)?;
    println!("D_z = {:.4} 1/m, u_e = {} m/s", fm.dispersion_factor, fm.advection_velocity);
    for q in [0.05, 0.083, 0.25] {
        println!("Q = {q:.3} g/s -> c_y = {:.5} g/m^2", fm.predict(q));
    }
    Ok(fm.predict(0.083))
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
