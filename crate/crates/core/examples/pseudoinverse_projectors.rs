//! The linear-algebra kernels on a rank-deficient matrix.

use daclab::matkit::{from_row_major, min_dominating_scalar, pinv, proj, rank_tol, Subspace, DEFAULT_TOL};

fn main() -> daclab::Result<()> {
    // Rank 2: the third row is the sum of the first two.
    let a = from_row_major(3, 4, &[1., 2., 0., 1., 0., 1., 1., 0., 1., 3., 1., 1.])?;
    println!("rank = {}", rank_tol(&a, DEFAULT_TOL)?);
    let p = pinv(&a, DEFAULT_TOL)?;
    println!("‖A A⁺ A − A‖ = {:.2e}", (&a * &p * &a - &a).norm());
    println!("‖A⁺ A A⁺ − A⁺‖ = {:.2e}", (&p * &a * &p - &p).norm());
    for which in [Subspace::ColumnSpace, Subspace::RowSpace, Subspace::NullSpace] {
        let pr = proj(&a, which, DEFAULT_TOL)?;
        println!(
            "{which:?}: rank {}, ‖P² − P‖ = {:.1e}, ‖P − Pᵀ‖ = {:.1e}",
            pr.rank,
            (&pr.p * &pr.p - &pr.p).norm(),
            (&pr.p - pr.p.transpose()).norm()
        );
    }
    let s = a.transpose() * &a;
    let t = &s * 0.5;
    println!("smallest c with AᵀA/2 ⪯ c·AᵀA: {:.6}", min_dominating_scalar(&t, &s, DEFAULT_TOL)?);
    Ok(())
}
