//! Concrete kernel families with closed-form limit objects: coalescents
//! with multiple collisions in a varying environment, and Markov random
//! walks with a barrier.
//!
//! Coalescent rows follow the multiple-collision rates
//!
//! ```text
//! r_n(k) = C(n, k-1) ∫ x^{n-k-1} (1-x)^{k-1} Lambda(dx),   1 <= k <= n-1,
//! ```
//!
//! normalized per block count, with the environment selecting which Lambda
//! applies and a stochastic matrix moving the environment at each
//! collision. For a beta-family Lambda the integrals are exact beta
//! functions and whole rows are built in O(n) by a multiplicative
//! recurrence; rows for small block counts are cached as CDFs.

use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{gamma as gamma_fn, ln_gamma};

use crate::chain::{run_chain, ChainRunResult, RowEntry, TransitionKernel};
use crate::error::{Error, Result};
use crate::measures::{laplace_exponent_from_measure, Density, FiniteMeasure, LaplaceExponent};
use crate::quad::{tanh_sinh, QuadBudget};
use crate::rng::{open01, RngStream};
use crate::TypeIdx;

/// Block counts at or below this bound get their position CDF cached.
const CDF_CACHE_MAX: u64 = 2048;

/// Type transition matrices `P_n`, constant or a perturbation of the
/// identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TypeMatrixFamily {
    Constant { p: Vec<Vec<f64>> },
    PerturbedIdentity { beta: f64, q: crate::measures::QMatrix },
}

impl TypeMatrixFamily {
    pub fn kappa(&self) -> usize {
        match self {
            TypeMatrixFamily::Constant { p } => p.len(),
            TypeMatrixFamily::PerturbedIdentity { q, .. } => q.kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TypeMatrixFamily::Constant { p } => validate_stochastic(p),
            TypeMatrixFamily::PerturbedIdentity { beta, q } => {
                if *beta < 0.0 {
                    return Err(Error::InvalidSpec("beta must be >= 0".into()));
                }
                q.validate()
            }
        }
    }

    /// Row `i` (0-based) of `P_n`. Perturbed rows are clamped to be
    /// non-negative and renormalized; for admissible specs this only
    /// matters at small `n` and leaves the asymptotics untouched.
    pub fn row_at(&self, n: u64, i: usize) -> Vec<f64> {
        match self {
            TypeMatrixFamily::Constant { p } => p[i].clone(),
            TypeMatrixFamily::PerturbedIdentity { beta, q } => {
                let scale = (n as f64).powf(-beta);
                let kappa = q.kappa;
                let mut row = vec![0.0; kappa];
                let mut sum = 0.0;
                for (j, v) in row.iter_mut().enumerate() {
                    let base = if i == j { 1.0 } else { 0.0 };
                    *v = (base + scale * q.rows[i][j]).max(0.0);
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
                row
            }
        }
    }
}

fn validate_stochastic(p: &[Vec<f64>]) -> Result<()> {
    let kappa = p.len();
    if kappa == 0 {
        return Err(Error::InvalidSpec("empty matrix".into()));
    }
    for (i, row) in p.iter().enumerate() {
        if row.len() != kappa {
            return Err(Error::InvalidSpec(format!("row {i} has the wrong length")));
        }
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidSpec(format!("row {i} has a negative entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Coalescent with `kappa` environments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoalescentEnvSpec {
    /// Collision measures `Lambda^{(i)}` on `[0,1]` with no mass at 0.
    pub lambdas: Vec<FiniteMeasure>,
    pub gamma: f64,
    pub type_matrix: TypeMatrixFamily,
}

impl CoalescentEnvSpec {
    pub fn kappa(&self) -> usize {
        self.lambdas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::InvalidSpec("need at least one environment".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidSpec("gamma must lie in (0,1)".into()));
        }
        for (i, l) in self.lambdas.iter().enumerate() {
            l.validate()?;
            if l.mass_at(0.0) > 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "Lambda^{}({{0}}) must be 0",
                    i + 1
                )));
            }
            if !l.is_nontrivial() {
                return Err(Error::InvalidSpec(format!(
                    "Lambda^{} must be nontrivial",
                    i + 1
                )));
            }
        }
        self.type_matrix.validate()?;
        if self.type_matrix.kappa() != self.kappa() {
            return Err(Error::InvalidSpec(
                "type matrix dimension must match the number of environments".into(),
            ));
        }
        Ok(())
    }
}

/// Unnormalized collision weights `r_n(k)`, `k = 1..n-1`, for one
/// environment measure.
fn collision_weights(lambda: &FiniteMeasure, n: u64, budget: &QuadBudget) -> Result<Vec<f64>> {
    debug_assert!(n >= 2);
    let m = n as usize;
    let mut w = vec![0.0f64; m - 1];

    match (&lambda.density, lambda.atoms.is_empty()) {
        (Some(Density::Beta { a, b, scale }), true) => {
            // r(k) ∝ C(n, k-1) B(n-k+a-1, k+b-1); consecutive ratios are
            // rational, so the whole row costs O(n) multiplications.
            let mut v = 1.0f64;
            w[0] = v;
            let nf = n as f64;
            for k in 1..(m - 1) {
                let kf = k as f64;
                let ratio = ((nf - kf + 1.0) / kf) * ((kf + b - 1.0) / (nf - kf + a - 2.0));
                v *= ratio;
                w[k] = v;
            }
            // Absolute scale so different components could combine.
            let ln0 = ln_beta(nf + a - 2.0, *b) - ln_beta(*a, *b) + scale.ln();
            let s = ln0.exp();
            if s.is_finite() && s > 0.0 {
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
        }
        _ => {
            // Generic path: per-entry log-space evaluation of every
            // component (atoms, beta densities, tabulated densities).
            let nf = n as f64;
            let ln_choose =
                |k: f64| ln_gamma(nf + 1.0) - ln_gamma(k + 1.0) - ln_gamma(nf - k + 1.0);
            for k in 1..m {
                let kf = k as f64;
                let lnc = ln_choose(kf - 1.0);
                let mut acc = 0.0f64;
                for &(x0, mass) in &lambda.atoms {
                    if x0 == 1.0 {
                        if k == 1 {
                            acc += mass;
                        }
                        continue;
                    }
                    let ln_term = lnc + (nf - kf - 1.0) * x0.ln() + (kf - 1.0) * (-x0).ln_1p();
                    acc += mass * ln_term.exp();
                }
                if let Some(d) = &lambda.density {
                    match d {
                        Density::Beta { a, b, scale } => {
                            let ln_term = lnc + ln_beta(nf - kf + a - 1.0, kf + b - 1.0)
                                - ln_beta(*a, *b)
                                + scale.ln();
                            acc += ln_term.exp();
                        }
                        _ => {
                            let q = tanh_sinh(
                                |x, omx| {
                                    let ln_term = lnc
                                        + (nf - kf - 1.0) * x.ln()
                                        + (kf - 1.0) * omx.ln();
                                    ln_term.exp() * d.eval_at(x, omx)
                                },
                                0.0,
                                1.0,
                                budget,
                            )?;
                            acc += q.value;
                        }
                    }
                }
                w[k - 1] = acc;
            }
        }
    }

    if w.iter().all(|&v| v <= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "all collision rates vanish at n = {n} (degenerate Lambda)"
        )));
    }
    Ok(w)
}

/// Transition kernel of the block-counting chain in varying environment.
/// Position rows live on `{1, .., n-1}`; state 1 (a single block) is the
/// absorbing position, so the collision count equals the absorption step
/// count exactly.
pub struct CoalescentKernel {
    spec: CoalescentEnvSpec,
    absorbing: Vec<u64>,
    cdf_cache: DashMap<(u32, u64), Arc<Vec<f64>>>,
    budget: QuadBudget,
}

impl CoalescentKernel {
    pub fn new(spec: CoalescentEnvSpec) -> Result<Self> {
        spec.validate()?;
        let k = Self {
            spec,
            absorbing: vec![1],
            cdf_cache: DashMap::new(),
            budget: QuadBudget::default(),
        };
        // Probe a few rows so degenerate measures fail at construction.
        for n in [2u64, 3, 5] {
            for i in 0..k.spec.kappa() {
                collision_weights(&k.spec.lambdas[i], n, &k.budget)?;
            }
        }
        Ok(k)
    }

    pub fn spec(&self) -> &CoalescentEnvSpec {
        &self.spec
    }

    fn position_cdf(&self, env: usize, n: u64) -> Result<Arc<Vec<f64>>> {
        let key = (env as u32, n);
        if let Some(hit) = self.cdf_cache.get(&key) {
            return Ok(hit.clone());
        }
        let mut w = collision_weights(&self.spec.lambdas[env], n, &self.budget)?;
        let mut acc = 0.0;
        for v in w.iter_mut() {
            acc += *v;
            *v = acc;
        }
        let arc = Arc::new(w);
        self.cdf_cache.insert(key, arc.clone());
        Ok(arc)
    }

    fn sample_position(&self, env: usize, n: u64, rng: &mut RngStream) -> Result<u64> {
        if n <= CDF_CACHE_MAX {
            let cdf = self.position_cdf(env, n)?;
            let total = *cdf.last().unwrap();
            let u = open01(rng) * total;
            let idx = cdf.partition_point(|&c| c < u);
            return Ok((idx + 1).min(n as usize - 1) as u64);
        }
        let w = collision_weights(&self.spec.lambdas[env], n, &self.budget)?;
        let total: f64 = w.iter().sum();
        let mut target = open01(rng) * total;
        // Scan from k = n-1 downwards: small collisions carry most mass.
        for (idx, v) in w.iter().enumerate().rev() {
            target -= v;
            if target <= 0.0 {
                return Ok(idx as u64 + 1);
            }
        }
        Ok(1)
    }

    fn sample_type(&self, n: u64, i: usize, rng: &mut RngStream) -> TypeIdx {
        let type_row = self.spec.type_matrix.row_at(n, i);
        let u = open01(rng);
        let mut acc = 0.0;
        for (idx, tj) in type_row.iter().enumerate() {
            acc += tj;
            if u <= acc {
                return (idx + 1) as TypeIdx;
            }
        }
        type_row.len() as TypeIdx
    }
}

impl TransitionKernel for CoalescentKernel {
    fn kappa(&self) -> usize {
        self.spec.kappa()
    }

    fn absorbing_positions(&self) -> &[u64] {
        &self.absorbing
    }

    fn row(&self, pos: u64, ty: TypeIdx) -> Result<Vec<RowEntry>> {
        let kappa = self.kappa();
        if ty == 0 || ty as usize > kappa {
            return Err(Error::InvalidKernel(format!("type {ty} out of range")));
        }
        if pos <= 1 {
            return Ok(vec![RowEntry { pos, ty, p: 1.0 }]);
        }
        let w = collision_weights(&self.spec.lambdas[(ty - 1) as usize], pos, &self.budget)?;
        let total: f64 = w.iter().sum();
        let type_row = self.spec.type_matrix.row_at(pos, (ty - 1) as usize);
        let mut out = Vec::with_capacity(w.len() * kappa);
        for (idx, v) in w.iter().enumerate() {
            if *v <= 0.0 {
                continue;
            }
            let pp = v / total;
            for (j, tj) in type_row.iter().enumerate() {
                if *tj > 0.0 {
                    out.push(RowEntry {
                        pos: idx as u64 + 1,
                        ty: (j + 1) as TypeIdx,
                        p: pp * tj,
                    });
                }
            }
        }
        Ok(out)
    }

    fn sample_step(&self, pos: u64, ty: TypeIdx, rng: &mut RngStream) -> Result<(u64, TypeIdx)> {
        if pos <= 1 {
            return Ok((pos, ty));
        }
        let k = self.sample_position((ty - 1) as usize, pos, rng)?;
        let j = self.sample_type(pos, (ty - 1) as usize, rng);
        Ok((k, j))
    }
}

/// Builds the block-counting kernel for a coalescent spec.
pub fn coalescent_kernel(spec: CoalescentEnvSpec) -> Result<CoalescentKernel> {
    CoalescentKernel::new(spec)
}

/// Runs one collision-count experiment from `n` blocks in environment
/// `env`; the number of collisions is the absorption step count.
pub fn count_collisions(
    kernel: &CoalescentKernel,
    n: u64,
    env: TypeIdx,
    rng: &mut RngStream,
) -> Result<(u64, ChainRunResult)> {
    if n < 2 {
        return Err(Error::InvalidConfig("need at least two blocks".into()));
    }
    let run = run_chain(kernel, (n, env), rng, crate::chain::DEFAULT_STEP_BUDGET)?;
    Ok((run.absorption_step, run))
}

/// Exact expected collision counts `E[K | n blocks, environment]` for all
/// starting block counts up to `nmax`, by the first-step recursion over the
/// true rows. This enumerates every transition exactly and is independent
/// of the sampler, so it doubles as an oracle for it. Cost is O(kappa^2
/// nmax^2).
pub fn exact_mean_collisions(kernel: &CoalescentKernel, nmax: u64) -> Result<Vec<Vec<f64>>> {
    let kappa = kernel.kappa();
    let mut e = vec![vec![0.0f64; kappa]; nmax as usize + 1];
    for n in 2..=nmax {
        for ty in 1..=kappa as TypeIdx {
            let row = kernel.row(n, ty)?;
            let mut acc = 1.0;
            for entry in &row {
                acc += entry.p * e[entry.pos as usize][(entry.ty - 1) as usize];
            }
            e[n as usize][(ty - 1) as usize] = acc;
        }
    }
    Ok(e)
}

/// CSV export of collision counts: `n,replicate,K,K_rescaled`.
pub fn collisions_csv(rows: &[(u64, u64, u64, f64)]) -> String {
    let mut out = String::from("n,replicate,K,K_rescaled\n");
    for (n, rep, k, r) in rows {
        out.push_str(&format!("{n},{rep},{k},{r}\n"));
    }
    out
}

/// Result of probing the regular-variation tail of a collision measure.
#[derive(Clone, Debug, Serialize)]
pub struct TailConstant {
    pub constant: f64,
    /// Max relative oscillation of `u^gamma ∫_[u,1] x^{-2} Lambda(dx)` over
    /// the last probed decade.
    pub oscillation: f64,
    pub regularly_varying: bool,
}

/// Estimates `c` in `∫_[u,1] x^{-2} Lambda(dx) ~ c u^{-gamma}` on a
/// geometric grid of `u` down to 1e-6. Oscillation above 10% over the last
/// decade flags a hypothesis violation.
pub fn tail_constant(lambda: &FiniteMeasure, gamma: f64) -> Result<TailConstant> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig("gamma must lie in (0,1)".into()));
    }
    lambda.validate()?;
    let budget = QuadBudget::default();
    let tail_integral = |u: f64| -> Result<f64> {
        let mut acc: f64 = lambda
            .atoms
            .iter()
            .filter(|(x, _)| *x >= u)
            .map(|&(x, m)| m / (x * x))
            .sum();
        if let Some(d) = &lambda.density {
            acc += tanh_sinh(|x, omx| d.eval_at(x, omx) / (x * x), u, 1.0, &budget)?.value;
        }
        Ok(acc)
    };
    // Geometric grid over four decades ending at 1e-6.
    let per_decade = 8usize;
    let mut values = Vec::new();
    for j in (2 * per_decade)..=(6 * per_decade) {
        let u = 10f64.powf(-(j as f64) / per_decade as f64);
        values.push(u.powf(gamma) * tail_integral(u)?);
    }
    let last_decade = &values[values.len() - per_decade - 1..];
    let mean = last_decade.iter().sum::<f64>() / last_decade.len() as f64;
    let max = last_decade.iter().cloned().fold(f64::MIN, f64::max);
    let min = last_decade.iter().cloned().fold(f64::MAX, f64::min);
    let oscillation = if mean > 0.0 {
        (max - min) / mean
    } else {
        f64::INFINITY
    };
    Ok(TailConstant {
        constant: mean,
        oscillation,
        regularly_varying: oscillation <= 0.10,
    })
}

/// Laplace exponent of the coalescent limit,
/// `psi(q) = (Gamma(2-gamma) c)^{-1} ∫ (1-(1-x)^q) x^{-2} Lambda(dx)`,
/// expressed through the measure `nu(du) = C x^{-1} Lambda(dx)` under
/// `u = 1 - x`, which plugs into the standard `(1-u^q)/(1-u)` form.
pub fn coalescent_limit_psi(
    lambda: &FiniteMeasure,
    gamma: f64,
    c: f64,
) -> Result<LaplaceExponent> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig("tail constant must be > 0".into()));
    }
    lambda.validate()?;
    let norm = 1.0 / (gamma_fn(2.0 - gamma) * c);
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &(x0, m) in &lambda.atoms {
        // u = 1 - x0, mass C m / x0; x0 = 1 lands on u = 0 (killing).
        atoms.push((1.0 - x0, norm * m / x0));
    }
    let density = match &lambda.density {
        None => None,
        Some(Density::Beta { a, b, scale }) => {
            if *a <= 1.0 {
                return Err(Error::HypothesisViolated(format!(
                    "Lambda density ~ x^{{{}}} near 0 is too heavy for the x^-2 tail",
                    a - 1.0
                )));
            }
            // nu density ∝ u^{b-1} (1-u)^{a-2}: a Beta(b, a-1) profile.
            let total = norm * scale * (ln_beta(*b, a - 1.0) - ln_beta(*a, *b)).exp();
            Some(Density::Beta {
                a: *b,
                b: *a - 1.0,
                scale: total,
            })
        }
        Some(_) => {
            return Err(Error::InvalidSpec(
                "coalescent limits support atom and beta-family collision measures".into(),
            ))
        }
    };
    let nu = FiniteMeasure::new(atoms, density)?;
    laplace_exponent_from_measure(&nu)
}

// ---------------------------------------------------------------------------
// Markov random walks with a barrier
// ---------------------------------------------------------------------------

/// Increment laws on `{1, 2, ...}` with analytically known tails.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncrementLaw {
    /// `P(k) = (1-p)^{k-1} p`; mean `1/p`.
    Geometric { p: f64 },
    /// `P(k) ∝ k^{-s}`, `s > 1`.
    Zeta { s: f64 },
    /// `P(k) = probs[k-1]` on `1..=probs.len()`.
    Finite { probs: Vec<f64> },
}

impl IncrementLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            IncrementLaw::Geometric { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::InvalidSpec("geometric p must be in (0,1]".into()));
                }
            }
            IncrementLaw::Zeta { s } => {
                if !(*s > 1.0) {
                    return Err(Error::InvalidSpec("zeta exponent must be > 1".into()));
                }
            }
            IncrementLaw::Finite { probs } => {
                if probs.is_empty() || probs.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidSpec("invalid finite increment law".into()));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "finite increment law sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            IncrementLaw::Geometric { p } => Some(1.0 / p),
            IncrementLaw::Zeta { s } => {
                if *s > 2.0 {
                    Some(zeta(*s - 1.0) / zeta(*s))
                } else {
                    None
                }
            }
            IncrementLaw::Finite { probs } => Some(
                probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i + 1) as f64 * p)
                    .sum(),
            ),
        }
    }

    /// `P(increment = k)` for `k >= 1`.
    fn pmf(&self, k: u64) -> f64 {
        match self {
            IncrementLaw::Geometric { p } => (1.0 - p).powi((k - 1) as i32) * p,
            IncrementLaw::Zeta { s } => (k as f64).powf(-s) / zeta(*s),
            IncrementLaw::Finite { probs } => probs.get((k - 1) as usize).copied().unwrap_or(0.0),
        }
    }
}

/// Riemann zeta via direct summation with an Euler–Maclaurin tail.
fn zeta(s: f64) -> f64 {
    let cut = 1_000u64;
    let mut acc = 0.0;
    for k in 1..=cut {
        acc += (k as f64).powf(-s);
    }
    let c = cut as f64;
    acc + c.powf(1.0 - s) / (s - 1.0) - 0.5 * c.powf(-s) + s / 12.0 * c.powf(-s - 1.0)
}

/// Markov random walk with a barrier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierWalkSpec {
    /// `increments[i][j]` drives the step size when the type moves
    /// `i+1 -> j+1`.
    pub increments: Vec<Vec<IncrementLaw>>,
    /// Driving chain transition matrix (irreducible).
    pub p: Vec<Vec<f64>>,
}

impl BarrierWalkSpec {
    pub fn kappa(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_stochastic(&self.p)?;
        let kappa = self.kappa();
        if self.increments.len() != kappa || self.increments.iter().any(|row| row.len() != kappa)
        {
            return Err(Error::InvalidSpec(
                "increment laws must form a kappa x kappa matrix".into(),
            ));
        }
        for row in &self.increments {
            for law in row {
                law.validate()?;
            }
        }
        // Irreducibility of the driving chain, via its embedded generator.
        let rows: Vec<Vec<f64>> = self
            .p
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| if i == j { v - 1.0 } else { v })
                    .collect()
            })
            .collect();
        let q = crate::measures::QMatrix { kappa, rows };
        if let Err((a, b)) = q.irreducibility() {
            return Err(Error::ReducibleQMatrix { a: a + 1, b: b + 1 });
        }
        Ok(())
    }

    /// Weighted increment means `m_i = Σ_j Σ_k k P(i,j) q_k^{(i,j)}`.
    pub fn means(&self) -> Result<Vec<f64>> {
        let kappa = self.kappa();
        let mut out = Vec::with_capacity(kappa);
        for i in 0..kappa {
            let mut m = 0.0;
            for j in 0..kappa {
                if self.p[i][j] == 0.0 {
                    continue;
                }
                let mean = self.increments[i][j].mean().ok_or_else(|| {
                    Error::InvalidSpec(format!(
                        "increment law ({}, {}) has infinite mean",
                        i + 1,
                        j + 1
                    ))
                })?;
                m += self.p[i][j] * mean;
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Stationary distribution of the driving chain.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let kappa = self.kappa();
        let rows: Vec<Vec<f64>> = self
            .p
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| if i == j { v - 1.0 } else { v })
                    .collect()
            })
            .collect();
        crate::measures::stationary_distribution(&crate::measures::QMatrix { kappa, rows })
    }
}

/// Kernel of the barrier walk in gap coordinates `X = n - S`: from `(s,i)`
/// the chain moves to `(s-k, j)` with probability
/// `P(i,j) q_k^{(i,j)} / (1 - qbar_s^{(i)})` for `1 <= k <= s`, and when no
/// increment fits the position stays while the type moves by `P`.
pub struct BarrierWalkKernel {
    spec: BarrierWalkSpec,
    /// `cdf[i][j][k] = P(increment <= k)`, `k = 0..=n_max`.
    cdf: Vec<Vec<Vec<f64>>>,
    n_max: u64,
    absorbing: Vec<u64>,
}

impl BarrierWalkKernel {
    pub fn new(spec: BarrierWalkSpec, n_max: u64) -> Result<Self> {
        spec.validate()?;
        let kappa = spec.kappa();
        let mut cdf = vec![vec![Vec::new(); kappa]; kappa];
        for i in 0..kappa {
            for j in 0..kappa {
                let mut v = Vec::with_capacity(n_max as usize + 1);
                v.push(0.0);
                let mut acc = 0.0;
                for k in 1..=n_max {
                    acc += spec.increments[i][j].pmf(k);
                    v.push(acc.min(1.0));
                }
                cdf[i][j] = v;
            }
        }
        let kernel = Self {
            spec,
            cdf,
            n_max,
            absorbing: vec![0],
        };
        // A gap state s >= 1 where no type can move at all would freeze the
        // position while types churn forever; reject such specs.
        for s in 1..=n_max.min(64) {
            if kernel.trapped(s) {
                return Err(Error::InvalidSpec(format!(
                    "gap state {s} admits no increment for any type; absorption above 0 \
                     is not representable"
                )));
            }
        }
        Ok(kernel)
    }

    pub fn spec(&self) -> &BarrierWalkSpec {
        &self.spec
    }

    fn trapped(&self, s: u64) -> bool {
        let kappa = self.spec.kappa();
        (0..kappa).all(|i| {
            (0..kappa).all(|j| self.spec.p[i][j] == 0.0 || self.cdf[i][j][s as usize] == 0.0)
        })
    }

    /// `qbar_s^{(i)} = Σ_j P(i,j) (1 - cdf^{(i,j)}(s))`.
    pub fn tail_at(&self, s: u64, i: usize) -> f64 {
        let kappa = self.spec.kappa();
        (0..kappa)
            .map(|j| self.spec.p[i][j] * (1.0 - self.cdf[i][j][s as usize]))
            .sum()
    }

    /// Estimates the heavy-tail constant `a_i` in
    /// `n^gamma qbar_n^{(i)} -> a_i` on a geometric grid up to the compiled
    /// barrier, with the same stabilization report as the coalescent tail
    /// probe.
    pub fn tail_constant_estimate(&self, i: usize, gamma: f64) -> TailConstant {
        let mut values = Vec::new();
        let mut n = self.n_max;
        while n >= 16 {
            values.push((n as f64).powf(gamma) * self.tail_at(n, i));
            n /= 2;
        }
        values.reverse();
        let window = values.len().min(4);
        let last = &values[values.len() - window..];
        let mean = last.iter().sum::<f64>() / window as f64;
        let max = last.iter().cloned().fold(f64::MIN, f64::max);
        let min = last.iter().cloned().fold(f64::MAX, f64::min);
        let oscillation = if mean > 0.0 {
            (max - min) / mean
        } else {
            f64::INFINITY
        };
        TailConstant {
            constant: mean,
            oscillation,
            regularly_varying: oscillation <= 0.10,
        }
    }
}

/// Exact expected absorption steps `E[A | gap, type]` up to `nmax` by the
/// first-step recursion. Requires every in-range row to strictly decrease
/// the position (no degenerate stay branch), which holds whenever unit
/// increments have positive mass.
pub fn exact_mean_absorption(kernel: &BarrierWalkKernel, nmax: u64) -> Result<Vec<Vec<f64>>> {
    let kappa = kernel.kappa();
    let mut e = vec![vec![0.0f64; kappa]; nmax as usize + 1];
    for s in 1..=nmax {
        for ty in 1..=kappa as TypeIdx {
            let row = kernel.row(s, ty)?;
            let mut acc = 1.0;
            for entry in &row {
                if entry.pos >= s {
                    return Err(Error::InvalidSpec(format!(
                        "enumeration needs strictly decreasing rows; gap {s} can stay put"
                    )));
                }
                acc += entry.p * e[entry.pos as usize][(entry.ty - 1) as usize];
            }
            e[s as usize][(ty - 1) as usize] = acc;
        }
    }
    Ok(e)
}

impl TransitionKernel for BarrierWalkKernel {
    fn kappa(&self) -> usize {
        self.spec.kappa()
    }

    fn absorbing_positions(&self) -> &[u64] {
        &self.absorbing
    }

    fn row(&self, pos: u64, ty: TypeIdx) -> Result<Vec<RowEntry>> {
        let kappa = self.kappa();
        if ty == 0 || ty as usize > kappa {
            return Err(Error::InvalidKernel(format!("type {ty} out of range")));
        }
        if pos == 0 {
            return Ok(vec![RowEntry { pos, ty, p: 1.0 }]);
        }
        if pos > self.n_max {
            return Err(Error::InvalidKernel(format!(
                "gap {pos} above the compiled barrier {}",
                self.n_max
            )));
        }
        let i = (ty - 1) as usize;
        let total_reach: f64 = (0..kappa)
            .map(|j| self.spec.p[i][j] * self.cdf[i][j][pos as usize])
            .sum();
        if total_reach <= 0.0 {
            // No admissible increment: the position stays, the type moves.
            return Ok((0..kappa)
                .filter(|&j| self.spec.p[i][j] > 0.0)
                .map(|j| RowEntry {
                    pos,
                    ty: (j + 1) as TypeIdx,
                    p: self.spec.p[i][j],
                })
                .collect());
        }
        let mut out = Vec::new();
        for j in 0..kappa {
            let pij = self.spec.p[i][j];
            if pij == 0.0 {
                continue;
            }
            let cdf = &self.cdf[i][j];
            for k in 1..=pos {
                let q = cdf[k as usize] - cdf[k as usize - 1];
                if q > 0.0 {
                    out.push(RowEntry {
                        pos: pos - k,
                        ty: (j + 1) as TypeIdx,
                        p: pij * q / total_reach,
                    });
                }
            }
        }
        Ok(out)
    }

    fn sample_step(&self, pos: u64, ty: TypeIdx, rng: &mut RngStream) -> Result<(u64, TypeIdx)> {
        if pos == 0 {
            return Ok((pos, ty));
        }
        if pos > self.n_max {
            return Err(Error::InvalidKernel(format!(
                "gap {pos} above the compiled barrier {}",
                self.n_max
            )));
        }
        let i = (ty - 1) as usize;
        let kappa = self.kappa();
        let s = pos as usize;
        let mut weights = Vec::with_capacity(kappa);
        let mut total = 0.0;
        for j in 0..kappa {
            let w = self.spec.p[i][j] * self.cdf[i][j][s];
            weights.push(w);
            total += w;
        }
        if total <= 0.0 {
            // Degenerate branch: the type moves alone.
            let u = open01(rng);
            let mut acc = 0.0;
            for j in 0..kappa {
                acc += self.spec.p[i][j];
                if u <= acc {
                    return Ok((pos, (j + 1) as TypeIdx));
                }
            }
            return Ok((pos, ty));
        }
        let mut target = open01(rng) * total;
        let mut j = kappa - 1;
        for (idx, w) in weights.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                j = idx;
                break;
            }
        }
        let cdf = &self.cdf[i][j];
        let u = open01(rng) * cdf[s];
        // Smallest k with cdf[k] >= u.
        let k = cdf[..=s].partition_point(|&c| c < u).max(1) as u64;
        Ok((pos - k, (j + 1) as TypeIdx))
    }
}

/// Builds the barrier-walk kernel compiled up to `n_max`.
pub fn barrier_walk_kernel(spec: BarrierWalkSpec, n_max: u64) -> Result<BarrierWalkKernel> {
    BarrierWalkKernel::new(spec, n_max)
}

/// Heavy-tail barrier limit: the Laplace exponent
/// `psi(q) = A gamma ∫_0^∞ (1 - e^{-qx}) e^{-x} (1-e^{-x})^{-gamma-1} dx`
/// with `A = Σ pi_i a_i`, expressed through the measure
/// `A gamma/(1-gamma) Beta(1, 1-gamma)` on `[0,1]`.
pub fn barrier_limit_heavy(
    spec: &BarrierWalkSpec,
    gamma: f64,
    tail_constants: &[f64],
) -> Result<LaplaceExponent> {
    spec.validate()?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig("gamma must lie in (0,1)".into()));
    }
    if tail_constants.len() != spec.kappa() || tail_constants.iter().any(|&a| a <= 0.0) {
        return Err(Error::InvalidConfig(
            "need one positive tail constant per type".into(),
        ));
    }
    let pi = spec.stationary()?;
    let a_mix: f64 = pi
        .iter()
        .zip(tail_constants.iter())
        .map(|(p, a)| p * a)
        .sum();
    let scale = a_mix * gamma / (1.0 - gamma);
    let mu = FiniteMeasure::beta(1.0, 1.0 - gamma, scale);
    laplace_exponent_from_measure(&mu)
}

/// Finite-mean barrier limit: the deterministic slope and absorption
/// constant. Both the plain sum of the per-type means and the
/// stationary-weighted mix are reported; simulation adjudicates which one
/// the absorption time concentrates on.
#[derive(Clone, Debug, Serialize)]
pub struct BarrierMeanLimit {
    pub means: Vec<f64>,
    pub pi: Vec<f64>,
    /// `Σ_i m_i`.
    pub m_sum: f64,
    /// `Σ_i pi_i m_i`.
    pub m_mix: f64,
}

impl BarrierMeanLimit {
    pub fn absorption_constant_sum(&self) -> f64 {
        1.0 / self.m_sum
    }

    pub fn absorption_constant_mix(&self) -> f64 {
        1.0 / self.m_mix
    }
}

pub fn barrier_limit_finite_mean(spec: &BarrierWalkSpec) -> Result<BarrierMeanLimit> {
    spec.validate()?;
    let means = spec.means()?;
    let pi = spec.stationary()?;
    let m_sum: f64 = means.iter().sum();
    let m_mix: f64 = means.iter().zip(pi.iter()).map(|(m, p)| m * p).sum();
    Ok(BarrierMeanLimit {
        means,
        pi,
        m_sum,
        m_mix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFamily;

    fn beta_lambda() -> FiniteMeasure {
        FiniteMeasure::beta(1.5, 0.5, 1.0)
    }

    #[test]
    fn total_coalescence_row() {
        let spec = CoalescentEnvSpec {
            lambdas: vec![FiniteMeasure::atom(1.0, 1.0)],
            gamma: 0.5,
            type_matrix: TypeMatrixFamily::Constant {
                p: vec![vec![1.0]],
            },
        };
        let k = coalescent_kernel(spec).unwrap();
        for n in [2u64, 5, 33] {
            let row = k.row(n, 1).unwrap();
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].pos, 1);
            assert!((row[0].p - 1.0).abs() < 1e-14);
        }
        let fam = StreamFamily::new(1);
        let (kn, _) = count_collisions(&k, 50, 1, &mut fam.replicate(0)).unwrap();
        assert_eq!(kn, 1);
    }

    #[test]
    fn lebesgue_lambda_three_blocks() {
        // r_3(1) = 1/2, r_3(2) = 3/2 -> probabilities (1/4, 3/4).
        let spec = CoalescentEnvSpec {
            lambdas: vec![FiniteMeasure::lebesgue(1.0)],
            gamma: 0.5,
            type_matrix: TypeMatrixFamily::Constant {
                p: vec![vec![1.0]],
            },
        };
        let k = coalescent_kernel(spec).unwrap();
        let row = k.row(3, 1).unwrap();
        assert_eq!(row.len(), 2);
        assert!((row[0].p - 0.25).abs() < 1e-10, "{}", row[0].p);
        assert!((row[1].p - 0.75).abs() < 1e-10, "{}", row[1].p);
    }

    #[test]
    fn beta_fast_path_matches_direct_formula() {
        let budget = QuadBudget::default();
        let lam = beta_lambda();
        for n in [4u64, 17, 100] {
            let fast = collision_weights(&lam, n, &budget).unwrap();
            let nf = n as f64;
            for (k, wk) in fast.iter().enumerate() {
                let kf = (k + 1) as f64;
                let direct = (ln_gamma(nf + 1.0) - ln_gamma(kf) - ln_gamma(nf - kf + 2.0)
                    + ln_beta(nf - kf + 0.5, kf - 0.5)
                    - ln_beta(1.5, 0.5))
                .exp();
                assert!(
                    (wk - direct).abs() <= 1e-11 * direct.max(1e-300),
                    "n={n} k={} {} vs {direct}",
                    k + 1,
                    wk
                );
            }
        }
    }

    #[test]
    fn rows_normalize_for_mixed_specs() {
        let spec = CoalescentEnvSpec {
            lambdas: vec![
                FiniteMeasure::new(
                    vec![(0.4, 0.3)],
                    Some(Density::Beta {
                        a: 1.7,
                        b: 0.8,
                        scale: 0.5,
                    }),
                )
                .unwrap(),
                beta_lambda(),
            ],
            gamma: 0.5,
            type_matrix: TypeMatrixFamily::Constant {
                p: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            },
        };
        let k = coalescent_kernel(spec).unwrap();
        for n in [2u64, 7, 64, 513] {
            for ty in [1, 2] {
                let row = k.row(n, ty).unwrap();
                let sum: f64 = row.iter().map(|e| e.p).sum();
                assert!((sum - 1.0).abs() < 1e-10, "n={n} ty={ty}: {sum}");
                assert!(row.iter().all(|e| e.pos < n));
            }
        }
    }

    #[test]
    fn block_count_strictly_decreases() {
        let spec = CoalescentEnvSpec {
            lambdas: vec![beta_lambda()],
            gamma: 0.5,
            type_matrix: TypeMatrixFamily::Constant {
                p: vec![vec![1.0]],
            },
        };
        let k = coalescent_kernel(spec).unwrap();
        let fam = StreamFamily::new(7);
        let (kn, run) = count_collisions(&k, 300, 1, &mut fam.replicate(1)).unwrap();
        assert!(kn >= 1);
        let vals: Vec<f64> = run.path.values().iter().map(|(v, _)| *v).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*vals.last().unwrap(), 1.0);
        // Every collision moves, so steps equal breakpoints minus one.
        assert_eq!(kn as usize, vals.len() - 1);
    }

    #[test]
    fn same_seed_same_collision_count() {
        let spec = CoalescentEnvSpec {
            lambdas: vec![beta_lambda()],
            gamma: 0.5,
            type_matrix: TypeMatrixFamily::Constant {
                p: vec![vec![1.0]],
            },
        };
        let k = coalescent_kernel(spec).unwrap();
        let fam = StreamFamily::new(21);
        let (a, _) = count_collisions(&k, 777, 1, &mut fam.replicate(4)).unwrap();
        let (b, _) = count_collisions(&k, 777, 1, &mut fam.replicate(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tail_constant_beta_family() {
        // Lambda = Beta(2-gamma, gamma) with gamma = 1/2: c = 4/pi.
        let tc = tail_constant(&beta_lambda(), 0.5).unwrap();
        assert!(tc.regularly_varying, "oscillation {}", tc.oscillation);
        let expected = 4.0 / std::f64::consts::PI;
        assert!(
            (tc.constant - expected).abs() / expected < 0.01,
            "c = {} vs {expected}",
            tc.constant
        );
    }

    #[test]
    fn tail_constant_flags_atom_and_lebesgue() {
        let atom = tail_constant(&FiniteMeasure::atom(0.5, 1.0), 0.5).unwrap();
        assert!(!atom.regularly_varying);
        let leb = tail_constant(&FiniteMeasure::lebesgue(1.0), 0.5).unwrap();
        assert!(!leb.regularly_varying);
    }

    #[test]
    fn coalescent_psi_closed_form_value() {
        let c = 4.0 / std::f64::consts::PI;
        let psi = coalescent_limit_psi(&beta_lambda(), 0.5, c).unwrap();
        let v = psi.eval(1.0).unwrap();
        let expected = std::f64::consts::PI.sqrt();
        assert!((v - expected).abs() / expected < 1e-8, "{v} vs {expected}");
        assert!(psi.eval(0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn coalescent_psi_matches_direct_quadrature() {
        let c = 4.0 / std::f64::consts::PI;
        let lam = beta_lambda();
        let psi = coalescent_limit_psi(&lam, 0.5, c).unwrap();
        let budget = QuadBudget::default();
        let norm = 1.0 / (gamma_fn(1.5) * c);
        for q in [0.5, 1.0, 2.0, 3.5] {
            let direct = norm
                * tanh_sinh(
                    |x, omx| {
                        let d = lam.density.as_ref().unwrap().eval_at(x, omx);
                        (-(q * omx.ln()).exp_m1()) * d / (x * x)
                    },
                    0.0,
                    1.0,
                    &budget,
                )
                .unwrap()
                .value;
            let via_measure = psi.eval(q).unwrap();
            assert!(
                (direct - via_measure).abs() < 1e-7 * via_measure.max(1.0),
                "q={q}: {direct} vs {via_measure}"
            );
        }
    }

    #[test]
    fn barrier_single_type_geometric_gap_one() {
        let spec = BarrierWalkSpec {
            increments: vec![vec![IncrementLaw::Geometric { p: 0.5 }]],
            p: vec![vec![1.0]],
        };
        let k = barrier_walk_kernel(spec, 64).unwrap();
        let row = k.row(1, 1).unwrap();
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].pos, 0);
        assert!((row[0].p - 1.0).abs() < 1e-14);
    }

    #[test]
    fn barrier_degenerate_branch_moves_type_only() {
        // Increments of size exactly 2 for type 1: at gap 1 nothing fits;
        // the degenerate branch keeps the position while the type moves.
        let spec = BarrierWalkSpec {
            increments: vec![
                vec![
                    IncrementLaw::Finite {
                        probs: vec![0.0, 1.0],
                    },
                    IncrementLaw::Finite {
                        probs: vec![0.0, 1.0],
                    },
                ],
                vec![
                    IncrementLaw::Geometric { p: 0.5 },
                    IncrementLaw::Geometric { p: 0.5 },
                ],
            ],
            p: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        let k = barrier_walk_kernel(spec, 64).unwrap();
        let row = k.row(1, 1).unwrap();
        assert_eq!(row.len(), 2);
        assert!(row.iter().all(|e| e.pos == 1));
        let sum: f64 = row.iter().map(|e| e.p).sum();
        assert!((sum - 1.0).abs() < 1e-14);
    }

    #[test]
    fn barrier_rejects_full_trap() {
        let spec = BarrierWalkSpec {
            increments: vec![vec![IncrementLaw::Finite {
                probs: vec![0.0, 1.0],
            }]],
            p: vec![vec![1.0]],
        };
        assert!(barrier_walk_kernel(spec, 16).is_err());
    }

    #[test]
    fn barrier_path_monotone_to_zero() {
        let spec = BarrierWalkSpec {
            increments: vec![
                vec![
                    IncrementLaw::Geometric { p: 0.5 },
                    IncrementLaw::Geometric { p: 0.5 },
                ],
                vec![
                    IncrementLaw::Geometric { p: 0.25 },
                    IncrementLaw::Geometric { p: 0.25 },
                ],
            ],
            p: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        let k = barrier_walk_kernel(spec, 4096).unwrap();
        let fam = StreamFamily::new(9);
        let run = run_chain(&k, (4096, 1), &mut fam.replicate(0), 1 << 24).unwrap();
        assert!(run.path.is_nonincreasing());
        assert_eq!(run.final_state.0, 0);
    }

    #[test]
    fn barrier_row_sums() {
        let spec = BarrierWalkSpec {
            increments: vec![
                vec![
                    IncrementLaw::Geometric { p: 0.5 },
                    IncrementLaw::Zeta { s: 2.5 },
                ],
                vec![
                    IncrementLaw::Finite {
                        probs: vec![0.25, 0.5, 0.25],
                    },
                    IncrementLaw::Geometric { p: 0.125 },
                ],
            ],
            p: vec![vec![0.6, 0.4], vec![0.2, 0.8]],
        };
        let k = barrier_walk_kernel(spec, 512).unwrap();
        for s in [1u64, 2, 17, 512] {
            for ty in [1, 2] {
                let row = k.row(s, ty).unwrap();
                let sum: f64 = row.iter().map(|e| e.p).sum();
                assert!((sum - 1.0).abs() < 1e-10, "s={s} ty={ty}: {sum}");
            }
        }
    }

    #[test]
    fn barrier_heavy_limit_value() {
        // kappa = 1, a = 1, gamma = 1/2: psi(1) = 1 in closed form.
        let spec = BarrierWalkSpec {
            increments: vec![vec![IncrementLaw::Zeta { s: 1.5 }]],
            p: vec![vec![1.0]],
        };
        let psi = barrier_limit_heavy(&spec, 0.5, &[1.0]).unwrap();
        assert!((psi.eval(1.0).unwrap() - 1.0).abs() < 1e-9);
        assert!(psi.eval(0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn barrier_finite_mean_limit() {
        let spec = BarrierWalkSpec {
            increments: vec![vec![IncrementLaw::Geometric { p: 0.5 }]],
            p: vec![vec![1.0]],
        };
        let lim = barrier_limit_finite_mean(&spec).unwrap();
        assert!((lim.m_sum - 2.0).abs() < 1e-12);
        assert!((lim.m_mix - 2.0).abs() < 1e-12);
        assert!((lim.absorption_constant_mix() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zeta_sanity() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-9);
    }

    #[test]
    fn barrier_tail_constant_estimate_matches_zeta_tail() {
        // For increments ∝ k^{-3/2}, n^{1/2} qbar_n -> 2/zeta(3/2).
        let spec = BarrierWalkSpec {
            increments: vec![vec![IncrementLaw::Zeta { s: 1.5 }]],
            p: vec![vec![1.0]],
        };
        let k = barrier_walk_kernel(spec, 1 << 15).unwrap();
        let est = k.tail_constant_estimate(0, 0.5);
        let expected = 2.0 / zeta(1.5);
        assert!(est.regularly_varying, "oscillation {}", est.oscillation);
        assert!(
            (est.constant - expected).abs() / expected < 0.02,
            "{} vs {expected}",
            est.constant
        );
    }

    #[test]
    fn barrier_enumeration_matches_monte_carlo_and_limit() {
        let spec = BarrierWalkSpec {
            increments: vec![
                vec![
                    IncrementLaw::Geometric { p: 0.5 },
                    IncrementLaw::Geometric { p: 0.5 },
                ],
                vec![
                    IncrementLaw::Geometric { p: 0.25 },
                    IncrementLaw::Geometric { p: 0.25 },
                ],
            ],
            p: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        let n = 1u64 << 12;
        let kernel = barrier_walk_kernel(spec.clone(), n).unwrap();
        let exact = exact_mean_absorption(&kernel, n).unwrap();
        let target = exact[n as usize][0];

        let fam = StreamFamily::new(31);
        let reps = 3_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for rep in 0..reps {
            let mut rng = fam.replicate(rep);
            let a = run_chain(&kernel, (n, 1), &mut rng, 1 << 24)
                .unwrap()
                .absorption_step as f64;
            sum += a;
            sumsq += a * a;
        }
        let mean = sum / reps as f64;
        let se = ((sumsq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!(
            (mean - target).abs() <= 3.0 * se,
            "MC {mean} vs enumeration {target} (se {se})"
        );

        // The rescaled enumeration approaches 1/(sum pi_i m_i) = 1/3 as the
        // barrier grows.
        let lim = barrier_limit_finite_mean(&spec).unwrap();
        let c = lim.absorption_constant_mix();
        let at = |m: u64| exact[m as usize][0] / m as f64;
        let d_small = (at(1 << 10) - c).abs();
        let d_large = (at(1 << 12) - c).abs();
        assert!(d_large < d_small, "{d_small} -> {d_large}");
        assert!(d_large / c < 0.01, "relative gap {}", d_large / c);
    }

    #[test]
    fn collisions_csv_format() {
        let csv = collisions_csv(&[(8, 0, 3, 3.0 / 8f64.sqrt())]);
        assert!(csv.starts_with("n,replicate,K,K_rescaled\n8,0,3,"));
    }
}
