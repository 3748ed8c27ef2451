//! Logistic regression with augmented copies. DAC test error should not move
//! with the number of copies; DA-ERM is shown at one copy for reference.

use daclab::experiments::{mean_se, run, ExperimentConfig, SweepResult};

fn report(res: &SweepResult, method: &str) {
    for cell in &res.cells {
        let errs: Vec<f64> = res
            .records
            .iter()
            .filter(|r| r.method == method && r.params == cell.params)
            .map(|r| r.aux["test_error"])
            .collect();
        let (m, se) = mean_se(&errs);
        let excess = cell.methods[method];
        println!(
            "{method:<8} alpha={:<3} test error {m:.4} ± {se:.4}   0-1 excess {:.4} ± {:.4}",
            cell.params["alpha"], excess.mean, excess.std_error
        );
    }
}

fn main() -> daclab::Result<()> {
    let base = || ExperimentConfig::new("example_4_2", 60, 3).with_sweep("d_aug", &[25.0]);
    let dac = run(&base().with_methods(&["dac_hard"]).with_sweep("alpha", &[1.0, 3.0, 7.0]))?;
    let erm = run(&base().with_methods(&["da_erm"]).with_sweep("alpha", &[1.0]))?;
    report(&dac, "dac_hard");
    report(&erm, "da_erm");
    Ok(())
}
