//! Expansion properties on a hand-built finite space, the minority-set bound
//! for a few classifiers, and a short randomized sweep.

use daclab::expansion::{
    check_constant_expansion, check_multiplicative_expansion, max_multiplicative_c, minority_set, mu_of,
    verify_lemma_c3, ClassifierTable, ExpansionMeasure, FiniteSpace,
};
use daclab::experiments::{run_expansion_fuzz, FuzzConfig};

fn main() -> daclab::Result<()> {
    // Two chains of four points; each point's augmentations are its chain neighbours.
    let chain = |i: usize, lo: usize, hi: usize| {
        let mut v = vec![i];
        if i > lo {
            v.push(i - 1);
        }
        if i < hi {
            v.push(i + 1);
        }
        v
    };
    let aug_sets: Vec<Vec<usize>> = (0..8).map(|i| if i < 4 { chain(i, 0, 3) } else { chain(i, 4, 7) }).collect();
    let space = FiniteSpace::new((0..8).collect(), vec![0.125; 8], vec![0, 0, 0, 0, 1, 1, 1, 1], aug_sets)?;

    let cst = check_constant_expansion(&space, 0.1, 0.1)?;
    println!("constant expansion (q=0.1, xi=0.1): {} after {} subsets", cst.holds, cst.subsets_checked);
    let c = max_multiplicative_c(&space, 0.5, ExpansionMeasure::ClassConditional)?;
    println!("largest multiplicative c at a=0.5: {c}");
    let mul = check_multiplicative_expansion(&space, 0.5, c)?;
    println!("multiplicative expansion at that c: {}", mul.holds);

    for h in [vec![0, 0, 0, 0, 1, 1, 1, 1], vec![0, 0, 0, 1, 1, 1, 1, 1], vec![1, 0, 0, 0, 1, 1, 1, 0]] {
        let h = ClassifierTable { h };
        let m = minority_set(&space, &h)?;
        let report = verify_lemma_c3(&space, &h, 0.2, c.min(8.0))?;
        println!(
            "h={:?}: mu={:.3} P(M)={:.3} constant={:?} multiplicative={:?}",
            h.h,
            mu_of(&space, &h)?,
            m.p_m,
            report.constant_branch,
            report.multiplicative_branch
        );
    }

    // A light inconsistent point whose augmentation set reaches the heavy points:
    // μ stays at 0.01 while the minority mass exceeds q.
    let tight = FiniteSpace::new(
        (0..5).collect(),
        vec![0.01, 0.40, 0.49, 0.05, 0.05],
        vec![0; 5],
        vec![vec![0, 1], vec![1, 2], vec![2, 1], vec![3, 4], vec![4, 3]],
    )?;
    let h = ClassifierTable { h: vec![1, 0, 0, 1, 1] };
    let rep = verify_lemma_c3(&tight, &h, 0.105, 1.0)?;
    println!(
        "counterexample: mu={:.3} P(M)={:.3} q=0.105 constant={:?}",
        rep.mu, rep.p_m, rep.constant_branch
    );

    let fuzz = run_expansion_fuzz(&FuzzConfig::new(100, 2))?;
    println!(
        "fuzz: {} checked / {} violated (constant), {} / {} (multiplicative), {} skipped",
        fuzz.constant_checked,
        fuzz.constant_violations,
        fuzz.multiplicative_checked,
        fuzz.multiplicative_violations,
        fuzz.skipped
    );
    Ok(())
}
