//! Train on the source domain, test on a target whose environment features
//! have scale σ_t. DAC ignores the environment block, so its target risk does
//! not grow with σ_t.

use daclab::experiments::{run, ExperimentConfig};

fn main() -> daclab::Result<()> {
    let cfg = ExperimentConfig::new("example_C1", 200, 5).with_sweep("sigma_t", &[1.0, 3.0, 10.0]);
    let res = run(&cfg)?;
    println!("{:>8} {:>18} {:>18} {:>10}", "sigma_t", "DAC", "DA-ERM", "gap");
    for cell in &res.cells {
        let dac = cell.methods["dac_hard"];
        let erm = cell.methods["da_erm"];
        println!(
            "{:>8} {:>9.4} ± {:.4} {:>9.4} ± {:.4} {:>10.4}",
            cell.params["sigma_t"],
            dac.mean,
            dac.std_error,
            erm.mean,
            erm.std_error,
            erm.mean - dac.mean
        );
    }
    Ok(())
}
