//! Fixed-time marginal comparison between the rescaled chain and its
//! limit: the path-level closeness surrogate, probed on the standard time
//! grid together with the absorption law tested elsewhere.
//!
//! Both marginals here are lattice-valued (dyadic atoms), so the CDFs are
//! compared on a grid of inter-atom midpoints rather than with the plain
//! two-sample sup-distance, which would read one-ulp atom misalignment as
//! real mass displacement.

use maplim_core::chain::{rescale_path, run_chain, DEFAULT_STEP_BUDGET};
use maplim_core::diagnostics::{
    cdf_grid_distance, marginal_sample, EmpiricalSample, MARGINAL_TIME_GRID,
};
use maplim_core::fixtures::{HalvingKernel, SwitchMode};
use maplim_core::map::{
    lamperti_transform_map, simulate_with_plan, MapCharacteristics, SimPlan, StopRule,
};
use maplim_core::measures::{laplace_exponent_from_measure, FiniteMeasure};
use maplim_core::rng::StreamFamily;

#[test]
fn halving_marginals_match_limit_on_the_grid() {
    let n = 1u64 << 12;
    let gamma = 1.0;
    let reps = 3_000u64;
    let kernel = HalvingKernel::new(1, gamma, SwitchMode::None).unwrap();
    let fam = StreamFamily::new(1234);

    let mut chain_paths = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let mut rng = fam.replicate(rep);
        let run = run_chain(&kernel, (n, 1), &mut rng, DEFAULT_STEP_BUDGET).unwrap();
        chain_paths.push(rescale_path(&run, n, gamma).unwrap());
    }

    let psi = laplace_exponent_from_measure(&FiniteMeasure::atom(0.5, 0.5)).unwrap();
    let chars = MapCharacteristics::from_laplace_exponent(&psi).unwrap();
    let plan = SimPlan::new(&chars, None, Some(gamma)).unwrap();
    let mut limit_values: Vec<Vec<f64>> = vec![Vec::new(); MARGINAL_TIME_GRID.len()];
    for rep in 0..reps {
        let mut rng = fam.stream(1, rep);
        let sim = simulate_with_plan(
            &plan,
            1,
            StopRule::FunctionalConverged {
                gamma,
                tol: 1e-10,
            },
            &mut rng,
        )
        .unwrap();
        let x = lamperti_transform_map(&sim, gamma).unwrap();
        for (i, &t) in MARGINAL_TIME_GRID.iter().enumerate() {
            limit_values[i].push(x.eval(t).unwrap().0);
        }
    }

    // Midpoints between the dyadic atoms, plus one probe below the lattice.
    let mut value_grid: Vec<f64> = (0..20).map(|k| 0.75 * 0.5f64.powi(k)).collect();
    value_grid.push(0.5f64.powi(24));

    for (i, &t) in MARGINAL_TIME_GRID.iter().enumerate() {
        let chain = EmpiricalSample::new(marginal_sample(&chain_paths, t), 1234, 0).unwrap();
        let limit = EmpiricalSample::new(limit_values[i].clone(), 1234, 1).unwrap();
        let d = cdf_grid_distance(&chain, &limit, &value_grid);
        assert!(d < 0.05, "t = {t}: grid CDF distance = {d}");
    }
}
