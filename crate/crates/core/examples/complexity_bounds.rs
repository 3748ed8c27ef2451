//! Rademacher complexity of the DAC-constrained linear class, Monte Carlo
//! against its closed-form bound, and the two-layer ReLU constant.

use daclab::augment::{build_augmented, AugmentationKind, AugmentationSpec};
use daclab::matkit::{Matrix, Vector};
use daclab::rng::substream;
use daclab::theory::{prop51_bound, rademacher_linear_dac, two_layer_bound};
use rand_distr::{Distribution, StandardNormal};

fn main() -> daclab::Result<()> {
    let (n, d) = (1000, 30);
    let mut r = substream(9, &[0]);
    let x = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
    for d_aug in [0, 10, 20, 29] {
        let spec = if d_aug == 0 {
            AugmentationSpec::identity(1)
        } else {
            AugmentationSpec::new(AugmentationKind::CoordinateResample { d_pert: d_aug }, 1)
        };
        let aug = build_augmented(&x, &Vector::zeros(n), &spec, &mut substream(9, &[1, d_aug as u64]))?;
        let rad = rademacher_linear_dac(aug.x(), aug.delta(), 1.0, 400, 9)?;
        let tl = two_layer_bound(aug.x(), aug.delta(), 1.0, 1.0)?;
        println!(
            "d_aug {d_aug:>2}: Rademacher {:.5} ± {:.5} (bound {:.5}), generalization bound {:.4}, c_n² {:.2} (d − d_aug = {})",
            rad.estimate,
            rad.std_error,
            rad.closed_form_bound,
            prop51_bound(rad.closed_form_bound, 1.0, 1.0, 0.05, n)?,
            tl.c_n * tl.c_n,
            d - d_aug
        );
    }
    Ok(())
}
