//! Lamperti time-changes of step paths, their inverses, the discrete
//! time-change, and path gluing.
//!
//! For a non-increasing step path `f` with `f(0) = 1` and an exponent
//! `alpha`, the time-change is
//!
//! ```text
//! tau(t) = inf { u : ∫_0^u f(r)^alpha dr > t },     g(t) = f(tau(t)).
//! ```
//!
//! Paths here have finitely many segments, so every integral is a finite
//! sum and every inversion is exact arithmetic: no discretization grid
//! exists anywhere in this module.

use crate::chain::{ChainRunResult, SteppedPath};
use crate::error::{Error, Result};

/// The time-change `tau`, stored as matched knot sequences with per-segment
/// slopes `f(tau(t))^{-alpha}`.
#[derive(Clone, Debug)]
pub struct TimeChange {
    g_knots: Vec<f64>,
    f_knots: Vec<f64>,
    slopes: Vec<f64>,
    t0_g: Option<f64>,
    t0_f: Option<f64>,
    alpha: f64,
}

impl TimeChange {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Absorption time of the transformed path, `T_0(g)`; `None` when the
    /// underlying path never reaches zero.
    pub fn t0_transformed(&self) -> Option<f64> {
        self.t0_g
    }

    pub fn t0_source(&self) -> Option<f64> {
        self.t0_f
    }

    /// Per-segment local clock rates.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Evaluates `tau(t)`. Nondecreasing, `tau(0) = 0`, and constant equal
    /// to `T_0(f)` past `T_0(g)`.
    pub fn eval(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        if let (Some(t0g), Some(t0f)) = (self.t0_g, self.t0_f) {
            if t >= t0g {
                return t0f;
            }
        }
        let idx = match self.g_knots.partition_point(|&s| s <= t) {
            0 => 0,
            p => p - 1,
        };
        self.f_knots[idx] + (t - self.g_knots[idx]) * self.slopes[idx]
    }
}

/// Applies the Lamperti time-change with exponent `alpha` to a
/// non-increasing step path with `f(0) = 1`. Returns the time-change and
/// the transformed path `g = f ∘ tau`.
pub fn lamperti_time_change(f: &SteppedPath, alpha: f64) -> Result<(TimeChange, SteppedPath)> {
    if f.values()[0].0 != 1.0 {
        return Err(Error::InvalidPath(format!(
            "lamperti input must start at 1, found {}",
            f.values()[0].0
        )));
    }
    if !f.is_nonincreasing() {
        return Err(Error::InvalidPath(
            "lamperti input must be non-increasing".into(),
        ));
    }
    // Zeros must be terminal: a zero followed by a positive value would make
    // the clock ill-defined.
    let n = f.len();
    for (i, (v, _)) in f.values().iter().enumerate() {
        if *v == 0.0 && i + 1 < n {
            return Err(Error::InvalidPath(
                "interior zero value before the final segment".into(),
            ));
        }
        if *v < 0.0 {
            return Err(Error::InvalidPath("negative path value".into()));
        }
    }

    let times = f.times();
    let values = f.values();
    let mut g_times: Vec<f64> = Vec::with_capacity(n);
    let mut g_values: Vec<(f64, crate::TypeIdx)> = Vec::with_capacity(n);
    let mut g_knots: Vec<f64> = Vec::with_capacity(n);
    let mut f_knots = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    let mut t0_g = None;
    let mut t0_f = None;

    let mut acc = 0.0;
    for i in 0..n {
        let (v, ty) = values[i];
        // A segment whose transformed duration underflows below one ulp of
        // the running clock has zero width in the new time scale: the
        // transform passes through it instantaneously, so the previous
        // breakpoint is overwritten rather than duplicated.
        if g_times.last() == Some(&acc) {
            *g_values.last_mut().unwrap() = (v, ty);
        } else {
            g_times.push(acc);
            g_values.push((v, ty));
        }
        if v == 0.0 {
            t0_g = Some(acc);
            t0_f = Some(times[i]);
            break;
        }
        if g_knots.last() == Some(&acc) {
            *f_knots.last_mut().unwrap() = times[i];
            *slopes.last_mut().unwrap() = v.powf(-alpha);
        } else {
            g_knots.push(acc);
            f_knots.push(times[i]);
            slopes.push(v.powf(-alpha));
        }
        if i + 1 < n {
            let d = times[i + 1] - times[i];
            acc += d * v.powf(alpha);
        }
    }

    let tau = TimeChange {
        g_knots,
        f_knots,
        slopes,
        t0_g,
        t0_f,
        alpha,
    };
    let g = SteppedPath::new(g_times, g_values)?;
    Ok((tau, g))
}

/// The discrete time-change: rescales a chain run by `(n, gamma)` and
/// applies the Lamperti transform with exponent `-gamma`, producing the
/// slowed-down process whose log is the additive-process approximation.
pub fn discrete_lamperti(
    result: &ChainRunResult,
    n: u64,
    gamma: f64,
) -> Result<(TimeChange, SteppedPath)> {
    let rescaled = crate::chain::rescale_path(result, n, gamma)?;
    lamperti_time_change(&rescaled, -gamma)
}

/// `glue(f, g, t)`: the path equal to `f` before `t` and to the shifted
/// `g(· - t)` from `t` onwards.
pub fn glue(f: &SteppedPath, g: &SteppedPath, t: f64) -> Result<SteppedPath> {
    if t < 0.0 {
        return Err(Error::InvalidPath("glue time must be >= 0".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (s, v) in f.times().iter().zip(f.values().iter()) {
        if *s < t {
            times.push(*s);
            values.push(*v);
        } else {
            break;
        }
    }
    times.push(t);
    values.push(g.values()[0]);
    for (s, v) in g.times().iter().zip(g.values().iter()).skip(1) {
        times.push(s + t);
        values.push(*v);
    }
    SteppedPath::new(times, values)
}

/// Integral `∫_0^{T_0(f)} f(r)^p dr`, `None` when the path never reaches 0.
pub fn integrate_power_to_zero(f: &SteppedPath, p: f64) -> Option<f64> {
    let times = f.times();
    let values = f.values();
    let mut acc = 0.0;
    for i in 0..f.len() {
        let v = values[i].0;
        if v == 0.0 {
            return Some(acc);
        }
        match times.get(i + 1) {
            Some(next) => acc += (next - times[i]) * v.powf(p),
            None => return None,
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::SteppedPath;

    fn path(times: Vec<f64>, vals: Vec<f64>) -> SteppedPath {
        SteppedPath::new(times, vals.into_iter().map(|v| (v, 1)).collect()).unwrap()
    }

    #[test]
    fn identity_on_constant_one() {
        let f = SteppedPath::constant(1.0, 1);
        let (tau, g) = lamperti_time_change(&f, -2.0).unwrap();
        assert_eq!(g.values()[0].0, 1.0);
        for t in [0.0, 0.3, 2.0, 55.0] {
            assert_eq!(tau.eval(t), t);
        }
        assert!(tau.t0_transformed().is_none());
    }

    #[test]
    fn worked_two_segment_example() {
        // f = 1 on [0,1), 1/2 on [1,2), 0 after; alpha = -1.
        let f = path(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0]);
        let (tau, g) = lamperti_time_change(&f, -1.0).unwrap();
        // g = 1 on [0,1), 1/2 on [1,3), 0 after.
        assert_eq!(g.times(), &[0.0, 1.0, 3.0]);
        assert_eq!(
            g.values().iter().map(|(v, _)| *v).collect::<Vec<_>>(),
            vec![1.0, 0.5, 0.0]
        );
        // tau(t) = t on [0,1], 1 + (t-1)/2 on [1,3], then 2.
        assert_eq!(tau.eval(0.5), 0.5);
        assert_eq!(tau.eval(1.0), 1.0);
        assert_eq!(tau.eval(2.0), 1.5);
        assert_eq!(tau.eval(3.0), 2.0);
        assert_eq!(tau.eval(10.0), 2.0);
        assert_eq!(tau.t0_transformed(), Some(3.0));
    }

    #[test]
    fn transformed_absorption_equals_segment_sum() {
        let f = path(vec![0.0, 0.5, 0.75, 2.0], vec![1.0, 0.5, 0.25, 0.0]);
        for alpha in [-2.0, -1.0, -0.5, 0.5, 1.0] {
            let (tau, _) = lamperti_time_change(&f, alpha).unwrap();
            let direct = 0.5 * 1f64.powf(alpha)
                + 0.25 * 0.5f64.powf(alpha)
                + 1.25 * 0.25f64.powf(alpha);
            assert!(
                (tau.t0_transformed().unwrap() - direct).abs() < 1e-15,
                "alpha {alpha}"
            );
        }
    }

    #[test]
    fn round_trip_recovers_path() {
        let f = path(
            vec![0.0, 0.3, 1.1, 1.6, 4.0],
            vec![1.0, 0.7, 0.35, 0.2, 0.0],
        );
        for alpha in [-2.0, -1.0, -0.5] {
            let (_, g) = lamperti_time_change(&f, alpha).unwrap();
            let (_, back) = lamperti_time_change(&g, -alpha).unwrap();
            assert_eq!(back.len(), f.len());
            for (bt, ft) in back.times().iter().zip(f.times().iter()) {
                assert!((bt - ft).abs() < 1e-12, "alpha {alpha}: {bt} vs {ft}");
            }
            for (bv, fv) in back.values().iter().zip(f.values().iter()) {
                assert_eq!(bv, fv);
            }
        }
    }

    #[test]
    fn tau_is_contraction_for_nonpositive_alpha() {
        let f = path(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.6, 0.2, 0.0]);
        let (tau, _) = lamperti_time_change(&f, -1.5).unwrap();
        for s in tau.slopes() {
            assert!(*s <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn interior_zero_is_rejected() {
        let bad = SteppedPath::new(
            vec![0.0, 1.0, 2.0],
            vec![(1.0, 1), (0.0, 1), (0.5, 1)],
        )
        .unwrap();
        assert!(lamperti_time_change(&bad, -1.0).is_err());
    }

    #[test]
    fn glue_basics() {
        let one = SteppedPath::constant(1.0, 1);
        let zero = SteppedPath::constant(0.0, 0);
        let glued = glue(&one, &zero, 1.0).unwrap();
        assert_eq!(glued.value_at(0.5), 1.0);
        assert_eq!(glued.value_at(1.0), 0.0);
        assert_eq!(glued.value_at(7.0), 0.0);

        // glue(f, f, 0) shifts f onto itself from the origin.
        let f = path(vec![0.0, 1.0], vec![1.0, 0.5]);
        let same = glue(&f, &f, 0.0).unwrap();
        assert_eq!(same.times(), f.times());
        assert_eq!(same.values(), f.values());
    }

    #[test]
    fn glue_then_split_recovers_operands() {
        let f = path(vec![0.0, 1.0, 2.0], vec![1.0, 0.8, 0.3]);
        let g = path(vec![0.0, 0.5], vec![0.25, 0.0]);
        let t = 1.5;
        let glued = glue(&f, &g, t).unwrap();
        for s in [0.0, 0.7, 1.2, 1.4999] {
            assert_eq!(glued.value_at(s), f.value_at(s));
        }
        for s in [0.0, 0.3, 0.5, 2.0] {
            assert_eq!(glued.value_at(t + s), g.value_at(s));
        }
    }

    #[test]
    fn discrete_time_change_telescopes_to_rescaled_absorption() {
        // Deterministic halving from 8 with gamma = 1.
        use crate::chain::{run_chain, RowEntry, TableKernel};
        use crate::rng::StreamFamily;
        let mut k = TableKernel::new(1);
        k.declare_absorbing(0);
        for n in 1..=8u64 {
            k.set_row(
                n,
                1,
                vec![RowEntry {
                    pos: n / 2,
                    ty: 1,
                    p: 1.0,
                }],
            );
        }
        let fam = StreamFamily::new(5);
        let r = run_chain(&k, (8, 1), &mut fam.replicate(0), 100).unwrap();
        let (tau, z) = discrete_lamperti(&r, 8, 1.0).unwrap();
        // Each value 2^{-k} is held in the slowed clock for (1/8) * 2^k.
        let durations: Vec<f64> = z.times().windows(2).map(|w| w[1] - w[0]).collect();
        assert_eq!(durations, vec![0.125, 0.25, 0.5, 1.0]);
        // Forward integral of z^gamma over [0, T_0(z)] telescopes back to
        // the rescaled absorption time A / n^gamma.
        let forward = integrate_power_to_zero(&z, 1.0).unwrap();
        let a_rescaled = r.absorption_step as f64 / 8.0;
        assert!((forward - a_rescaled).abs() < 1e-15);
        assert_eq!(tau.t0_source(), Some(a_rescaled));
    }

    #[test]
    fn constant_chain_is_fixed_by_discrete_time_change() {
        use crate::chain::{run_chain, TableKernel};
        use crate::rng::StreamFamily;
        let mut k = TableKernel::new(1);
        k.declare_absorbing(6);
        let fam = StreamFamily::new(5);
        let r = run_chain(&k, (6, 1), &mut fam.replicate(0), 10).unwrap();
        let (_, z) = discrete_lamperti(&r, 6, 2.0).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z.values()[0].0, 1.0);
    }
}
