//! Path-level properties of the additive-process simulator.

use maplim_core::map::{
    check_not_constant, expected_functional, exponential_functional, lamperti_transform_map,
    simulate_with_plan, MapCharacteristics, SimPlan, StopRule, SwitchJump, TypeDynamics,
};
use maplim_core::measures::{pushforward_neglog, FiniteMeasure, JumpMeasure};
use maplim_core::rng::StreamFamily;

fn two_type_chars() -> MapCharacteristics {
    // Type 1 drifts, type 2 jumps; switches carry a log(2) jump one way.
    let jumps = JumpMeasure {
        atoms: vec![(std::f64::consts::LN_2, 1.0)],
        densities: vec![],
    };
    MapCharacteristics::new(
        vec![
            TypeDynamics {
                killing: 0.0,
                drift: 0.5,
                jumps: JumpMeasure::default(),
            },
            TypeDynamics {
                killing: 0.0,
                drift: 0.0,
                jumps,
            },
        ],
        vec![vec![0.0, 0.8], vec![1.2, 0.0]],
        vec![
            vec![
                SwitchJump::Zero,
                SwitchJump::Atoms {
                    atoms: vec![(std::f64::consts::LN_2, 1.0)],
                },
            ],
            vec![SwitchJump::Zero, SwitchJump::Zero],
        ],
    )
    .unwrap()
}

#[test]
fn xi_is_nondecreasing_and_types_constant_between_switches() {
    let chars = two_type_chars();
    assert!(check_not_constant(&chars).holds);
    let fam = StreamFamily::new(21);
    for rep in 0..200 {
        let mut rng = fam.replicate(rep);
        let sim = simulate_with_plan(
            &SimPlan::new(&chars, None, None).unwrap(),
            1,
            StopRule::Horizon(20.0),
            &mut rng,
        )
        .unwrap();
        let segs = &sim.path.segments;
        for w in segs.windows(2) {
            assert!(w[1].xi0 >= w[0].xi0 + w[0].slope * (w[1].t0 - w[0].t0) - 1e-12);
            assert!(w[0].slope >= 0.0);
        }
        // The type only changes at recorded switch events.
        let mut switch_times: Vec<f64> = sim.path.switches.iter().map(|s| s.time).collect();
        switch_times.dedup();
        let mut changes = 0;
        for w in segs.windows(2) {
            if w[1].ty != w[0].ty {
                changes += 1;
                assert!(switch_times.contains(&w[1].t0));
            }
        }
        assert_eq!(changes, sim.path.switches.len());
    }
}

#[test]
fn multi_type_functional_matches_first_transition_system() {
    let chars = two_type_chars();
    let gamma = 1.0;
    let expected = expected_functional(&chars, gamma).unwrap();
    let plan = SimPlan::new(&chars, None, Some(gamma)).unwrap();
    let fam = StreamFamily::new(22);
    for start in [1u32, 2] {
        let n = 40_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for rep in 0..n {
            let mut rng = fam.stream(start as u64, rep);
            let v = exponential_functional(&plan, start, gamma, 1e-9, &mut rng)
                .unwrap()
                .value;
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - expected[(start - 1) as usize]).abs() < 3.0 * se + 1e-6,
            "start {start}: {mean} vs {}",
            expected[(start - 1) as usize]
        );
    }
}

/// With no killing the transform is absorbed continuously: as the
/// small-jump cutoff (and the tied stopping resolution) refine, the last
/// positive value before absorption vanishes. A killed process keeps a
/// macroscopic last value.
#[test]
fn absorption_continuity_in_the_cutoff() {
    // Infinite-activity jump part: the reweighted uniform measure.
    let (jumps, mass) = pushforward_neglog(&FiniteMeasure::lebesgue(1.0), true).unwrap();
    assert!(mass.is_infinite());
    let unkilled = MapCharacteristics::monotype(0.0, 0.0, jumps.clone()).unwrap();
    let fam = StreamFamily::new(23);
    let gamma = 1.0;
    let mut last_values = Vec::new();
    for (tag, eps) in [(1u64, 1e-1f64), (2, 1e-2), (3, 1e-3)] {
        let tol = (eps * eps * eps).max(1e-12);
        let plan = SimPlan::new(&unkilled, Some(eps), Some(gamma)).unwrap();
        let mut worst: f64 = 0.0;
        for rep in 0..300 {
            let mut rng = fam.stream(tag, rep);
            let sim = simulate_with_plan(
                &plan,
                1,
                StopRule::FunctionalConverged { gamma, tol },
                &mut rng,
            )
            .unwrap();
            let x = lamperti_transform_map(&sim, gamma).unwrap();
            let i = x.absorption_time().unwrap();
            // Value just before the certified absorption point.
            let (v, _) = x.eval(i * (1.0 - 1e-9)).unwrap();
            worst = worst.max(v);
        }
        last_values.push(worst);
    }
    assert!(
        last_values[0] > last_values[1] && last_values[1] > last_values[2],
        "{last_values:?}"
    );
    assert!(last_values[2] < 1e-3, "{last_values:?}");

    // Killed control: the last positive value stays macroscopic.
    let killed = MapCharacteristics::monotype(0.5, 0.0, jumps).unwrap();
    let plan = SimPlan::new(&killed, Some(1e-3), Some(gamma)).unwrap();
    let mut worst: f64 = 0.0;
    for rep in 0..300 {
        let mut rng = fam.stream(9, rep);
        let sim = simulate_with_plan(
            &plan,
            1,
            StopRule::FunctionalConverged { gamma, tol: 1e-12 },
            &mut rng,
        )
        .unwrap();
        let x = lamperti_transform_map(&sim, gamma).unwrap();
        let i = x.absorption_time().unwrap();
        let (v, _) = x.eval(i * (1.0 - 1e-9)).unwrap();
        worst = worst.max(v);
    }
    assert!(worst > 0.1, "killed last value {worst}");
}
