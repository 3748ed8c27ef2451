//! Closed-form quantities for one augmented design built by hand: d′, the
//! predicted risks, soft DAC bias/variance and the DA-ERM lower bound.

use daclab::augment::{build_augmented, d_prime, AugmentationKind, AugmentationSpec};
use daclab::matkit::{Matrix, Vector};
use daclab::rng::substream;
use daclab::theory::{soft_bias_variance, TheoryReport};
use rand_distr::{Distribution, StandardNormal};

fn main() -> daclab::Result<()> {
    let (n, d) = (60, 10);
    let mut r = substream(21, &[0]);
    let x = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
    let theta = Vector::from_fn(d, |i, _| if i < 4 { 1.0 } else { 0.2 });
    let spec = AugmentationSpec::new(
        AugmentationKind::GaussianJitter {
            d_pert: 6,
            noise_std: 0.7,
        },
        2,
    );
    let aug = build_augmented(&x, &(&x * &theta), &spec, &mut substream(21, &[1]))?;
    let dp = d_prime(&aug)?;
    println!("d_aug = {}, d' = {:.4}", dp.d_aug, dp.value);
    let report = TheoryReport::compute(&aug, &theta, 1.0, None)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for lam in [0.01, 0.1, 1.0, 10.0] {
        let s = soft_bias_variance(&aug, &theta, 1.0, lam)?;
        println!("lambda {lam:>5}: bias {:.5} var {:.5} total {:.5}", s.bias, s.var, s.bias + s.var);
    }
    Ok(())
}
