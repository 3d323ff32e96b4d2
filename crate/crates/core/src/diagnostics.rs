//! Statistical machinery for comparing simulations against their limit
//! objects: empirical distributions, occupation measures, moment estimates
//! with jackknife errors, self-similarity checks and convergence reports.

use serde::Serialize;

use crate::chain::SteppedPath;
use crate::error::{Error, Result};
use crate::map::{
    lamperti_transform_map, simulate_with_plan, MapCharacteristics, SimPlan, StopRule,
};
use crate::rng::StreamFamily;
use crate::TypeIdx;

/// A sorted sample with its seed provenance.
#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalSample {
    values: Vec<f64>,
    pub seed: u64,
    pub stream_tag: u64,
}

impl EmpiricalSample {
    pub fn new(mut values: Vec<f64>, seed: u64, stream_tag: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("sample contains non-finite values".into()));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            values,
            seed,
            stream_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sorted values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let n = self.len() as f64;
        (self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }
}

/// Sup-distance between the empirical CDF and a reference CDF.
pub fn ks_distance_to_cdf<F: Fn(f64) -> f64>(sample: &EmpiricalSample, cdf: F) -> f64 {
    let n = sample.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sample.values().iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max((f - (i as f64 + 1.0) / n).abs());
    }
    sup
}

/// Two-sample Kolmogorov–Smirnov distance, with ties handled by comparing
/// the CDFs only after consuming all equal values.
pub fn ks_distance_two_sample(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (xs, ys) = (a.values(), b.values());
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut sup: f64 = 0.0;
    while i < xs.len() || j < ys.len() {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / n - j as f64 / m).abs());
    }
    sup
}

/// Plug-in estimate of `E|X|^a` with a jackknife standard error (exact
/// leave-one-out formula for the mean).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    /// `None` when the sample has fewer than two points.
    pub stderr: Option<f64>,
}

pub fn moment_estimate(sample: &EmpiricalSample, a: f64) -> Result<MomentEstimate> {
    if a < 0.0 {
        return Err(Error::InvalidConfig("moment order must be >= 0".into()));
    }
    let n = sample.len();
    let powered: Vec<f64> = sample.values().iter().map(|v| v.abs().powf(a)).collect();
    let mean = powered.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok(MomentEstimate {
            value: mean,
            stderr: None,
        });
    }
    // Jackknife variance of the mean: (n-1)/n * Σ (m_{-i} - m)^2 with
    // m_{-i} = (n m - y_i)/(n-1).
    let nf = n as f64;
    let mut acc = 0.0;
    for y in &powered {
        let loo = (nf * mean - y) / (nf - 1.0);
        acc += (loo - mean) * (loo - mean);
    }
    let var = acc * (nf - 1.0) / nf;
    Ok(MomentEstimate {
        value: mean,
        stderr: Some(var.sqrt()),
    })
}

/// The grid of rescaled times used for fixed-time marginal comparisons;
/// path-level closeness is probed through these marginals plus the
/// absorption-time law.
pub const MARGINAL_TIME_GRID: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];

/// Values of a family of paths at one fixed time.
pub fn marginal_sample(paths: &[SteppedPath], t: f64) -> Vec<f64> {
    paths.iter().map(|p| p.value_at(t)).collect()
}

/// Sup-distance between two empirical CDFs evaluated on a fixed value
/// grid. When both laws are lattice-valued, machine rounding can place
/// nominally equal atoms one ulp apart, which the plain two-sample
/// sup-distance reads as the whole atom mass being displaced; probing the
/// CDFs between the lattice points is immune to that.
pub fn cdf_grid_distance(a: &EmpiricalSample, b: &EmpiricalSample, grid: &[f64]) -> f64 {
    let fa = |x: f64| a.values().partition_point(|&v| v <= x) as f64 / a.len() as f64;
    let fb = |x: f64| b.values().partition_point(|&v| v <= x) as f64 / b.len() as f64;
    grid.iter()
        .map(|&x| (fa(x) - fb(x)).abs())
        .fold(0.0, f64::max)
}

/// Normalized time each type occupies before the path first reaches the
/// level `eps`.
pub fn occupation_measure(path: &SteppedPath, kappa: usize, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidConfig("eps must lie in (0,1)".into()));
    }
    let t_eps = path
        .first_at_or_below(eps)
        .ok_or_else(|| Error::InvalidPath("path never reaches the stopping level".into()))?;
    if t_eps <= 0.0 {
        return Err(Error::DegenerateWindow { eps });
    }
    let mut occ = vec![0.0; kappa];
    for (start, end, _value, ty) in path.segments() {
        if start >= t_eps {
            break;
        }
        let end = end.unwrap_or(t_eps).min(t_eps);
        if ty >= 1 && (ty as usize) <= kappa {
            occ[(ty - 1) as usize] += end - start;
        }
    }
    for v in occ.iter_mut() {
        *v /= t_eps;
    }
    Ok(occ)
}

/// Checks the scaling identity of the Lamperti transform: the law of `X`
/// started from `x` at time `t` against `x` times the law started from 1
/// at time `x^{-gamma_scale} t`. Returns the two-sample KS distance.
/// Passing a deliberately wrong `gamma_scale` is the negative control.
pub fn self_similarity_check(
    chars: &MapCharacteristics,
    gamma: f64,
    gamma_scale: f64,
    start_ty: TypeIdx,
    x: f64,
    t: f64,
    replicates: u64,
    streams: &StreamFamily,
    stream_tag: u64,
) -> Result<f64> {
    if !(x > 0.0) || !(t > 0.0) {
        return Err(Error::InvalidConfig("need x > 0 and t > 0".into()));
    }
    let plan = SimPlan::new(chars, None, Some(gamma))?;
    let certainty = 1e-9;

    let mut native = Vec::with_capacity(replicates as usize);
    let target_native = t / x.powf(gamma);
    for rep in 0..replicates {
        let mut rng = streams.stream(stream_tag, rep);
        let sim = simulate_with_plan(
            &plan,
            start_ty,
            StopRule::XTimeReached {
                gamma,
                t: target_native,
                certainty,
            },
            &mut rng,
        )?;
        let path = lamperti_transform_map_from(&sim, gamma, x)?;
        let (v, _) = path.eval(t)?;
        native.push(v);
    }

    let mut scaled = Vec::with_capacity(replicates as usize);
    let target_scaled = x.powf(-gamma_scale) * t;
    for rep in 0..replicates {
        let mut rng = streams.stream(stream_tag + 1, rep);
        let sim = simulate_with_plan(
            &plan,
            start_ty,
            StopRule::XTimeReached {
                gamma,
                t: target_scaled,
                certainty,
            },
            &mut rng,
        )?;
        let path = lamperti_transform_map(&sim, gamma)?;
        let (v, _) = path.eval(target_scaled)?;
        scaled.push(x * v);
    }

    let a = EmpiricalSample::new(native, streams.seed(), stream_tag)?;
    let b = EmpiricalSample::new(scaled, streams.seed(), stream_tag + 1)?;
    Ok(ks_distance_two_sample(&a, &b))
}

/// Lamperti transform started from value `x0` instead of 1: the engine
/// clock `∫ e^{-gamma xi}` relates to the transform clock by the factor
/// `x0^gamma`.
pub fn lamperti_transform_map_from(
    sim: &crate::map::MapSim,
    gamma: f64,
    x0: f64,
) -> Result<crate::map::SsmpPath> {
    crate::map::lamperti_transform_scaled(sim, gamma, x0)
}

/// Whether a gate passes: structural gates compare against a fixed bound,
/// statistical gates against a multiple of the standard error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TolKind {
    Structural,
    Statistical,
}

/// One line of a convergence report.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub fixture: String,
    pub n: u64,
    pub statistic: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub tol_kind: TolKind,
    /// `None` when the gate was skipped (e.g. undefined standard error).
    pub pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub note: String,
}

impl ReportRow {
    pub fn structural(
        fixture: &str,
        n: u64,
        statistic: &str,
        value: f64,
        target: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            fixture: fixture.to_string(),
            n,
            statistic: statistic.to_string(),
            value,
            target,
            tolerance,
            tol_kind: TolKind::Structural,
            pass: Some((value - target).abs() <= tolerance),
            stderr: None,
            note: String::new(),
        }
    }

    pub fn statistical(
        fixture: &str,
        n: u64,
        statistic: &str,
        value: f64,
        target: f64,
        stderr: Option<f64>,
        sigmas: f64,
    ) -> Self {
        let (pass, tolerance, note) = match stderr {
            Some(se) => (
                Some((value - target).abs() <= sigmas * se),
                sigmas * se,
                String::new(),
            ),
            None => (
                None,
                f64::NAN,
                "standard error undefined with fewer than two replicates; gate skipped"
                    .to_string(),
            ),
        };
        Self {
            fixture: fixture.to_string(),
            n,
            statistic: statistic.to_string(),
            value,
            target,
            tolerance,
            tol_kind: TolKind::Statistical,
            pass,
            stderr,
            note,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// A full convergence report: the gate lines plus enough metadata to rerun
/// them bit-exactly.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub fixture: String,
    pub seed: u64,
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    pub rows: Vec<ReportRow>,
}

/// Runs a named fixture experiment and returns its convergence report:
/// replicated simulations on the n-grid, the per-gate statistics against
/// their targets, and the seeds needed to reproduce everything bit-exactly.
pub fn convergence_report(
    fixture: crate::fixtures::Fixture,
    params: &crate::fixtures::RunParams,
) -> Result<ConvergenceReport> {
    Ok(fixture.run(params)?.report)
}

impl ConvergenceReport {
    /// True when no structural gate failed (skipped gates do not fail).
    pub fn passed(&self) -> bool {
        !self.rows.iter().any(|r| r.pass == Some(false))
    }

    pub fn to_json(&self, config_hash: &str) -> String {
        #[derive(Serialize)]
        struct Envelope<'a> {
            config_hash: &'a str,
            #[serde(flatten)]
            report: &'a ConvergenceReport,
        }
        serde_json::to_string_pretty(&Envelope {
            config_hash,
            report: self,
        })
        .expect("serializable")
    }

    /// Flat CSV: `fixture,n,statistic,value,target,tolerance,pass` with the
    /// config hash on a leading comment line.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash}\n");
        out.push_str("fixture,n,statistic,value,target,tolerance,pass\n");
        for r in &self.rows {
            let pass = match r.pass {
                Some(true) => "true",
                Some(false) => "false",
                None => "skipped",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.fixture, r.n, r.statistic, r.value, r.target, r.tolerance, pass
            ));
        }
        out
    }
}
