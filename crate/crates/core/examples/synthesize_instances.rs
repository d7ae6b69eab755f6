// Builds changepoint instances from a constant-rate experiment and
// checks their jump-to-noise ratio.

use emission_cpd::synthesis::{signal_stats, synthesize_batch, ExperimentRecord};

pub fn run_example() -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    let exp = ExperimentRecord::new(3, 25.0, vec![0.012, 0.019, 0.031, 0.015, 0.022, 0.027, 0.009, 0.018])?;
    let stats = signal_stats(&exp.cy_series, 4.0)?;
    println!("mean {:.4}, CV {:.3}, range {:.4}", stats.mean, stats.cv, stats.range);

    let batch = synthesize_batch(&exp, 4.0, 5, 2024)?;
    let mut jnrs = Vec::new();
    for inst in &batch {
        let jnr = inst.jnr()?;
        println!("instance {}: first post-change c_y {:.4}, JNR {jnr:.4}", inst.instance_index, inst.post_change()[0]);
        jnrs.push(jnr);
    }
    println!("(LRR - 1) / CV = {:.4}", stats.jnr);
    Ok(jnrs)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
