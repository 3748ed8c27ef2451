//! Fixed-design linear regression: hard DAC against DA-ERM as the augmentation
//! leaks into the label-dependent block, with the closed-form risks alongside.
//!
//!     cargo run --release --example linear_dac_vs_erm

use daclab::experiments::{run, ExperimentConfig};

fn main() -> daclab::Result<()> {
    let cfg = ExperimentConfig::new("example_4_1", 1000, 7).with_sweep("d_aug", &[25.0]);
    let res = run(&cfg)?;
    println!("{:>5} {:>7} {:>17} {:>9} {:>17} {:>9}", "d_e1", "d'", "DAC (MC)", "theory", "DA-ERM (MC)", "theory");
    for cell in &res.cells {
        let t = cell.theory.as_ref().expect("fixed design carries theory");
        let dac = cell.methods["dac_hard"];
        let erm = cell.methods["da_erm"];
        println!(
            "{:>5} {:>7.2} {:>9.4} ±{:.4} {:>9.4} {:>9.4} ±{:.4} {:>9.4}",
            cell.params["d_e1"],
            t.d_prime,
            dac.mean,
            dac.std_error,
            t.dac_risk_pred,
            erm.mean,
            erm.std_error,
            t.da_erm_risk_pred
        );
    }
    Ok(())
}
