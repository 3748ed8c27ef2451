//! Two-layer ReLU student fit to a noiseless teacher whose hidden units avoid
//! the augmented coordinates. In DAC mode the student's predictions cannot
//! change along the augmentation directions.

use daclab::augment::{build_augmented, AugmentationKind, AugmentationSpec};
use daclab::datagen::gen_relu;
use daclab::estimators::{relu_fit, OptimizerConfig, ReluMode};
use daclab::matkit::{self, Matrix, Subspace};
use daclab::rng::substream;
use rand_distr::{Distribution, StandardNormal};

fn main() -> daclab::Result<()> {
    let teacher = daclab::verify::relu_teacher();
    let (x, y) = gen_relu(&teacher, 200, &mut substream(4, &[1]))?;
    let spec = AugmentationSpec::new(AugmentationKind::CoordinateResample { d_pert: 3 }, 1);
    let aug = build_augmented(&x, &y, &spec, &mut substream(4, &[2]))?;
    let opt = OptimizerConfig {
        max_iters: 20_000,
        step_size: 0.5,
        grad_tol: 1e-9,
        seed: 4,
        decay: 0.0,
    };
    for mode in [ReluMode::Dac, ReluMode::DaErm] {
        let est = relu_fit(&aug, mode, 4, teacher.c_w, &opt)?;
        println!(
            "{mode:?}: train MSE {:.2e} after {} iterations (converged: {})",
            2.0 * est.train_loss,
            est.iterations,
            est.converged
        );
        let row = matkit::proj(aug.delta(), Subspace::RowSpace, aug.tol)?;
        let mut r = substream(4, &[3]);
        let mut g = |n, d| Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
        let xs = g(20, teacher.d);
        let shift = g(20, teacher.d) * row.p.transpose() * 5.0;
        let moved = (est.predict(&(&xs + &shift)) - est.predict(&xs)).amax();
        println!("  largest prediction change along Row(Δ): {moved:.2e}");
    }
    Ok(())
}
