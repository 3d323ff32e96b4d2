//! Monotone Markov additive processes: simulation from characteristics,
//! Lamperti transforms, exponential functionals and moment oracles.
//!
//! A MAP `(xi, K)` on `R x {1..kappa}` is parameterized by, per type `i`, a
//! subordinator triplet `(k_i, c_i, Pi_i)` governing `xi` while `K = i`,
//! switch rates `lambda_{i,j}` and switch-jump distributions `B_{i,j}`
//! added to `xi` when `K` jumps from `i` to `j`. Killing sends `xi` to
//! `+infinity` and the type to the sentinel `0`.
//!
//! Simulation uses competing exponential clocks for killing, switching and
//! the finite-activity part of each `Pi_i`; jumps below the cutoff `eps`
//! are replaced by their compensating drift `∫_0^eps y Pi(dy)` (no Gaussian
//! correction is needed for subordinators). The exponential functional
//! `I = ∫_0^∞ exp(-gamma xi_r) dr` is accumulated in closed form on drift
//! segments and the run stops once the certified residual bound
//! `exp(-gamma xi_t) E_j[I]` falls below the requested tolerance, where the
//! vector `E_j[I]` solves a small linear system over the types.

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::measures::{Density, FiniteMeasure, JumpMeasure, LaplaceExponent, Mass};
use crate::quad::{tanh_sinh, QuadBudget};
use crate::rng::{open01, sample_categorical, sample_exp, RngStream};
use crate::{TypeIdx, SENTINEL_TYPE};

pub const DEFAULT_EVENT_BUDGET: u64 = 100_000_000;

/// Distribution of the jump added to `xi` at a type switch.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchJump {
    /// Degenerate at zero.
    Zero,
    /// Finite support in `y`-coordinates: `(y, probability)`.
    Atoms { atoms: Vec<(f64, f64)> },
    /// `-log` of a draw from a normalized finite measure on `(0,1]`.
    NegLogMeasure { measure: FiniteMeasure },
}

impl SwitchJump {
    pub fn validate(&self) -> Result<()> {
        match self {
            SwitchJump::Zero => Ok(()),
            SwitchJump::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidCharacteristics(
                        "switch jump needs at least one atom".into(),
                    ));
                }
                let total: f64 = atoms.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-12 || atoms.iter().any(|&(y, p)| y < 0.0 || p < 0.0) {
                    return Err(Error::InvalidCharacteristics(
                        "switch jump atoms must be a probability distribution on [0,∞)".into(),
                    ));
                }
                Ok(())
            }
            SwitchJump::NegLogMeasure { measure } => {
                measure.validate()?;
                if measure.mass_at(0.0) > 0.0 {
                    return Err(Error::InvalidCharacteristics(
                        "switch jump measure must not charge 0 (infinite jump)".into(),
                    ));
                }
                if !(measure.total_mass() > 0.0) {
                    return Err(Error::InvalidCharacteristics(
                        "switch jump measure must be nontrivial".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Whether the distribution is exactly the Dirac mass at 0.
    pub fn is_zero(&self) -> bool {
        match self {
            SwitchJump::Zero => true,
            SwitchJump::Atoms { atoms } => atoms.iter().all(|&(y, p)| y == 0.0 || p == 0.0),
            SwitchJump::NegLogMeasure { measure } => {
                measure.density.is_none() && measure.atoms.iter().all(|&(x, _)| x == 1.0)
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            SwitchJump::Zero => 0.0,
            SwitchJump::Atoms { atoms } => {
                let weights: Vec<f64> = atoms.iter().map(|(_, p)| *p).collect();
                atoms[sample_categorical(rng, &weights)].0
            }
            SwitchJump::NegLogMeasure { measure } => {
                let atom_mass: f64 = measure.atoms.iter().map(|(_, m)| m).sum();
                let dens_mass = measure.density.as_ref().map_or(0.0, |d| d.mass());
                let u = open01(rng) * (atom_mass + dens_mass);
                if u <= atom_mass {
                    let weights: Vec<f64> = measure.atoms.iter().map(|(_, m)| *m).collect();
                    -measure.atoms[sample_categorical(rng, &weights)].0.ln()
                } else {
                    -measure
                        .density
                        .as_ref()
                        .expect("density mass positive")
                        .sample_normalized(rng)
                        .ln()
                }
            }
        }
    }

    /// `E[e^{-q B}]`.
    pub fn laplace(&self, q: f64, budget: &QuadBudget) -> Result<f64> {
        match self {
            SwitchJump::Zero => Ok(1.0),
            SwitchJump::Atoms { atoms } => {
                Ok(atoms.iter().map(|&(y, p)| p * (-q * y).exp()).sum())
            }
            SwitchJump::NegLogMeasure { measure } => {
                let total = measure.total_mass();
                let mut mu = measure.clone();
                mu.quad = *budget;
                Ok(mu.integrate(|x| x.powf(q))? / total)
            }
        }
    }
}

/// Subordinator triplet of one type.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypeDynamics {
    pub killing: f64,
    pub drift: f64,
    pub jumps: JumpMeasure,
}

impl TypeDynamics {
    pub fn trivial() -> Self {
        Self {
            killing: 0.0,
            drift: 0.0,
            jumps: JumpMeasure::default(),
        }
    }

    fn is_trivial(&self) -> bool {
        self.killing == 0.0 && self.drift == 0.0 && self.jumps.is_empty()
    }

    /// Laplace exponent `psi_i(q) = k + c q + ∫ (1 - e^{-qy}) Pi(dy)`.
    pub fn laplace_exponent(&self) -> Result<LaplaceExponent> {
        LaplaceExponent::new(self.killing, self.drift, self.jumps.clone())
    }
}

/// Full parameterization of a monotone MAP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapCharacteristics {
    pub kappa: usize,
    pub types: Vec<TypeDynamics>,
    /// `switch_rates[i][j]` is the rate of switching from type `i+1` to
    /// `j+1`; diagonal entries must be zero.
    pub switch_rates: Vec<Vec<f64>>,
    pub switch_jumps: Vec<Vec<SwitchJump>>,
    #[serde(default, skip)]
    pub quad: QuadBudget,
}

impl MapCharacteristics {
    pub fn new(
        types: Vec<TypeDynamics>,
        switch_rates: Vec<Vec<f64>>,
        switch_jumps: Vec<Vec<SwitchJump>>,
    ) -> Result<Self> {
        let kappa = types.len();
        let chars = Self {
            kappa,
            types,
            switch_rates,
            switch_jumps,
            quad: QuadBudget::default(),
        };
        chars.validate()?;
        Ok(chars)
    }

    pub fn monotype(killing: f64, drift: f64, jumps: JumpMeasure) -> Result<Self> {
        Self::new(
            vec![TypeDynamics {
                killing,
                drift,
                jumps,
            }],
            vec![vec![0.0]],
            vec![vec![SwitchJump::Zero]],
        )
    }

    pub fn from_laplace_exponent(le: &LaplaceExponent) -> Result<Self> {
        Self::monotype(le.killing, le.drift, le.jumps.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 {
            return Err(Error::InvalidCharacteristics("kappa must be >= 1".into()));
        }
        if self.types.len() != self.kappa
            || self.switch_rates.len() != self.kappa
            || self.switch_jumps.len() != self.kappa
        {
            return Err(Error::InvalidCharacteristics(
                "per-type arrays must all have length kappa".into(),
            ));
        }
        for (i, t) in self.types.iter().enumerate() {
            if t.killing < 0.0 || t.drift < 0.0 {
                return Err(Error::InvalidCharacteristics(format!(
                    "type {}: killing and drift must be >= 0",
                    i + 1
                )));
            }
            t.jumps.integrability(&self.quad)?;
        }
        for i in 0..self.kappa {
            if self.switch_rates[i].len() != self.kappa || self.switch_jumps[i].len() != self.kappa
            {
                return Err(Error::InvalidCharacteristics(format!(
                    "switch arrays of type {} must have length kappa",
                    i + 1
                )));
            }
            if self.switch_rates[i][i] != 0.0 {
                return Err(Error::InvalidCharacteristics(format!(
                    "diagonal switch rate of type {} must be zero",
                    i + 1
                )));
            }
            for j in 0..self.kappa {
                if self.switch_rates[i][j] < 0.0 {
                    return Err(Error::InvalidCharacteristics(format!(
                        "switch rate ({}, {}) is negative",
                        i + 1,
                        j + 1
                    )));
                }
                if i != j && self.switch_rates[i][j] > 0.0 {
                    self.switch_jumps[i][j].validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn psi(&self, ty: TypeIdx) -> Result<LaplaceExponent> {
        self.types[(ty - 1) as usize].laplace_exponent()
    }

    fn total_switch_rate(&self, i: usize) -> f64 {
        self.switch_rates[i].iter().sum()
    }

    /// Whether type `i+1` can move `xi` by itself: nontrivial triplet or a
    /// positive-rate switch whose jump is not degenerate at zero.
    fn type_induces_jump(&self, i: usize) -> bool {
        if !self.types[i].is_trivial() {
            return true;
        }
        (0..self.kappa).any(|j| {
            j != i && self.switch_rates[i][j] > 0.0 && !self.switch_jumps[i][j].is_zero()
        })
    }
}

/// Outcome of the non-constancy check: either every type can (possibly via
/// a chain of positive-rate switches) induce a jump, or a failing type is
/// named.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotConstant {
    pub holds: bool,
    pub failing_type: Option<TypeIdx>,
}

/// Verifies that no type can trap the process in a constant state.
pub fn check_not_constant(chars: &MapCharacteristics) -> NotConstant {
    let kappa = chars.kappa;
    let direct: Vec<bool> = (0..kappa).map(|i| chars.type_induces_jump(i)).collect();
    for start in 0..kappa {
        if direct[start] {
            continue;
        }
        // Breadth-first search along positive switch rates.
        let mut seen = vec![false; kappa];
        let mut queue = vec![start];
        seen[start] = true;
        let mut ok = false;
        while let Some(i) = queue.pop() {
            if direct[i] {
                ok = true;
                break;
            }
            for j in 0..kappa {
                if !seen[j] && chars.switch_rates[i][j] > 0.0 {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        if !ok {
            return NotConstant {
                holds: false,
                failing_type: Some((start + 1) as TypeIdx),
            };
        }
    }
    NotConstant {
        holds: true,
        failing_type: None,
    }
}

/// Moment oracle for the exponential functional of a subordinator:
/// `E[I^k] = k! / prod_{j=1..k} psi(j gamma)`.
pub fn moment_oracle(psi: &LaplaceExponent, gamma: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return Ok(1.0);
    }
    let mut denom = 1.0;
    let mut numer = 1.0;
    for j in 1..=k {
        let q = j as f64 * gamma;
        let v = psi.eval(q)?;
        if v <= 0.0 {
            return Err(Error::DegenerateExponent { q });
        }
        denom *= v;
        numer *= j as f64;
    }
    Ok(numer / denom)
}

/// Expected exponential functional `E_i[∫_0^∞ e^{-gamma xi_r} dr]` per
/// starting type, via first-transition analysis: with
/// `D_i = k_i + Lambda_i + psi0_i(gamma)`,
///
/// ```text
/// E_i = 1/D_i + Σ_j lambda_{i,j} E[e^{-gamma B_{i,j}}] E_j / D_i .
/// ```
pub fn expected_functional(chars: &MapCharacteristics, gamma: f64) -> Result<Vec<f64>> {
    let nc = check_not_constant(chars);
    if !nc.holds {
        return Err(Error::InvalidCharacteristics(format!(
            "type {} can never move: exponential functional diverges",
            nc.failing_type.unwrap()
        )));
    }
    let kappa = chars.kappa;
    let mut a = vec![0.0; kappa * kappa];
    let mut b = vec![0.0; kappa];
    for i in 0..kappa {
        let t = &chars.types[i];
        let psi0 = LaplaceExponent::new(0.0, t.drift, t.jumps.clone())?.eval(gamma)?;
        let lambda = chars.total_switch_rate(i);
        let d = t.killing + lambda + psi0;
        if d <= 0.0 {
            return Err(Error::InvalidCharacteristics(format!(
                "type {} has no dynamics at all",
                i + 1
            )));
        }
        b[i] = 1.0 / d;
        a[i * kappa + i] = 1.0;
        for j in 0..kappa {
            if j != i && chars.switch_rates[i][j] > 0.0 {
                let blap = chars.switch_jumps[i][j].laplace(gamma, &chars.quad)?;
                a[i * kappa + j] -= chars.switch_rates[i][j] * blap / d;
            }
        }
    }
    let e = solve_dense(&mut a, &mut b, kappa)?;
    if e.iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(Error::InvalidCharacteristics(
            "expected exponential functional is not finite and positive".into(),
        ));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Simulation plan: per-type clocks and truncated jump samplers.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum CompSampler {
    /// Atoms at `y >= eps`, with their masses as weights.
    Atoms(Vec<(f64, f64)>),
    /// Un-reweighted base density truncated to `x <= x_cut`.
    BaseTruncated {
        density: Density,
        cdf_cut: f64,
    },
    /// `scale/(1-x)` on `(0, x_cut]`: exact inverse CDF.
    ReweightLog {
        x_cut: f64,
    },
    /// Reweighted beta with `b > 1`: a Beta(a, b-1) truncated to `x_cut`.
    ReweightBetaShift {
        a: f64,
        bm1: f64,
        cdf_cut: f64,
    },
    /// Reweighted beta with `b <= 1`: two-piece rejection sampler on
    /// `(0, x0]` and `(x0, x_cut]` with piece masses `m1`, `m2`.
    ReweightBetaReject {
        a: f64,
        b: f64,
        x0: f64,
        x_cut: f64,
        m1: f64,
        m2: f64,
    },
    /// Grid inverse CDF (tabulated kinds).
    GridInverse {
        xs: Vec<f64>,
        cdf: Vec<f64>,
    },
}

impl CompSampler {
    /// Draws a jump size `y`.
    fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            CompSampler::Atoms(atoms) => {
                let weights: Vec<f64> = atoms.iter().map(|(_, m)| *m).collect();
                atoms[sample_categorical(rng, &weights)].0
            }
            CompSampler::BaseTruncated { density, cdf_cut } => {
                let u = open01(rng) * cdf_cut;
                -density.inverse_cdf_normalized(u).ln()
            }
            CompSampler::ReweightLog { x_cut } => {
                let u = open01(rng);
                let x = 1.0 - (1.0 - x_cut).powf(u);
                -x.ln()
            }
            CompSampler::ReweightBetaShift { a, bm1, cdf_cut } => {
                let d = statrs::distribution::Beta::new(*a, *bm1).expect("validated");
                let u = open01(rng) * cdf_cut;
                -d.inverse_cdf(u).ln()
            }
            CompSampler::ReweightBetaReject {
                a,
                b,
                x0,
                x_cut,
                m1,
                m2,
            } => loop {
                let pick = open01(rng) * (m1 + m2);
                let x = if pick <= *m1 {
                    // Piece (0, x0]: propose density ∝ x^{a-1}, accept with
                    // ((1-x)/(1-x0))^{b-2} <= 1.
                    let x = x0 * open01(rng).powf(1.0 / a);
                    let acc = ((1.0 - x) / (1.0 - x0)).powf(b - 2.0);
                    if open01(rng) > acc {
                        continue;
                    }
                    x
                } else {
                    // Piece (x0, x_cut]: propose density ∝ (1-x)^{b-2},
                    // accept with (x / bound)^{a-1} <= 1.
                    let u = open01(rng);
                    let x = if (*b - 1.0).abs() < 1e-12 {
                        1.0 - (1.0 - x0) * ((1.0 - x_cut) / (1.0 - x0)).powf(u)
                    } else {
                        let p = b - 1.0;
                        let lo = (1.0 - x0).powf(p);
                        let hi = (1.0 - x_cut).powf(p);
                        1.0 - (lo + u * (hi - lo)).powf(1.0 / p)
                    };
                    let bound = if *a >= 1.0 { *x_cut } else { *x0 };
                    let acc = (x / bound).powf(a - 1.0).min(1.0);
                    if open01(rng) > acc {
                        continue;
                    }
                    x
                };
                return -x.ln();
            },
            CompSampler::GridInverse { xs, cdf } => {
                let total = *cdf.last().unwrap();
                let u = open01(rng) * total;
                let idx = cdf.partition_point(|&c| c < u).min(xs.len() - 1);
                let (lo, hi) = if idx == 0 {
                    (0.0, cdf[0])
                } else {
                    (cdf[idx - 1], cdf[idx])
                };
                let xlo = if idx == 0 { 0.0 } else { xs[idx - 1] };
                let xhi = xs[idx];
                let w = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
                let x = xlo + w * (xhi - xlo);
                -x.max(1e-300).ln()
            }
        }
    }
}

#[derive(Clone, Debug)]
struct TruncatedJumps {
    comps: Vec<(f64, CompSampler)>,
    total_rate: f64,
}

impl TruncatedJumps {
    fn sample(&self, rng: &mut RngStream) -> f64 {
        let weights: Vec<f64> = self.comps.iter().map(|(m, _)| *m).collect();
        let idx = sample_categorical(rng, &weights);
        self.comps[idx].1.sample(rng)
    }
}

#[derive(Clone, Debug)]
struct TypePlan {
    kill: f64,
    drift_eff: f64,
    switch_rates: Vec<f64>,
    switch_total: f64,
    jumps: TruncatedJumps,
}

/// Compiled, reusable simulation plan for one characteristics object.
#[derive(Clone, Debug)]
pub struct SimPlan {
    chars: MapCharacteristics,
    pub eps: f64,
    per_type: Vec<TypePlan>,
    /// Expected residual functional per type, present when a functional
    /// stop rule will be used.
    e_vec: Option<Vec<f64>>,
    gamma: Option<f64>,
}

fn build_truncated(
    jumps: &JumpMeasure,
    eps: f64,
    budget: &QuadBudget,
) -> Result<TruncatedJumps> {
    let x_cut = (-eps).exp();
    let mut comps: Vec<(f64, CompSampler)> = Vec::new();
    let atoms: Vec<(f64, f64)> = jumps
        .atoms
        .iter()
        .copied()
        .filter(|(y, _)| *y >= eps)
        .collect();
    if !atoms.is_empty() {
        let mass: f64 = atoms.iter().map(|(_, m)| m).sum();
        comps.push((mass, CompSampler::Atoms(atoms)));
    }
    for c in &jumps.densities {
        if c.weight * c.base.mass() == 0.0 {
            continue;
        }
        if !c.reweight {
            let cdf_cut = c.base.cdf_normalized(x_cut);
            let mass = c.weight * c.base.mass() * cdf_cut;
            if mass > 0.0 {
                comps.push((
                    mass,
                    CompSampler::BaseTruncated {
                        density: c.base.clone(),
                        cdf_cut,
                    },
                ));
            }
            continue;
        }
        match &c.base {
            Density::Constant { scale } => {
                let mass = c.weight * scale * (-(1.0 - x_cut).ln());
                comps.push((mass, CompSampler::ReweightLog { x_cut }));
            }
            Density::Beta { a, b, scale } => {
                if *b > 1.0 {
                    let shifted = statrs::distribution::Beta::new(*a, *b - 1.0)
                        .map_err(|e| Error::InvalidCharacteristics(e.to_string()))?;
                    let cdf_cut = shifted.cdf(x_cut);
                    let total = c.weight * scale * (a + b - 1.0) / (b - 1.0);
                    comps.push((
                        total * cdf_cut,
                        CompSampler::ReweightBetaShift {
                            a: *a,
                            bm1: *b - 1.0,
                            cdf_cut,
                        },
                    ));
                } else {
                    let x0 = (0.5f64).min(x_cut * 0.5);
                    let ln_b = statrs::function::beta::ln_beta(*a, *b);
                    let unnorm = |x: f64, _: f64| {
                        ((a - 1.0) * x.ln() + (b - 2.0) * (-x).ln_1p() - ln_b).exp()
                    };
                    let m1 = c.weight
                        * scale
                        * tanh_sinh(unnorm, 0.0, x0, budget)?.value;
                    let m2 = c.weight
                        * scale
                        * tanh_sinh(unnorm, x0, x_cut, budget)?.value;
                    comps.push((
                        m1 + m2,
                        CompSampler::ReweightBetaReject {
                            a: *a,
                            b: *b,
                            x0,
                            x_cut,
                            m1,
                            m2,
                        },
                    ));
                }
            }
            Density::Table { ys, .. } => {
                if *ys.last().unwrap() > 0.0 {
                    return Err(Error::InvalidCharacteristics(
                        "table-backed reweighted jump density has infinite activity; \
                         use the beta family instead"
                            .into(),
                    ));
                }
                // Smooth finite-activity integrand: tabulate the CDF.
                let n = 4096;
                let mut xs = Vec::with_capacity(n);
                let mut cdf = Vec::with_capacity(n);
                let mut acc = 0.0;
                let mut prev_x = 0.0;
                let mut prev_f = 0.0;
                for k in 1..=n {
                    let x = x_cut * k as f64 / n as f64;
                    let f = c.weight * c.base.eval(x) / (1.0 - x).max(1e-12);
                    acc += 0.5 * (x - prev_x) * (prev_f + f);
                    xs.push(x);
                    cdf.push(acc);
                    prev_x = x;
                    prev_f = f;
                }
                comps.push((acc, CompSampler::GridInverse { xs, cdf }));
            }
        }
    }
    let total_rate = comps.iter().map(|(m, _)| m).sum();
    Ok(TruncatedJumps { comps, total_rate })
}

impl SimPlan {
    pub fn new(
        chars: &MapCharacteristics,
        eps: Option<f64>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        chars.validate()?;
        let budget = chars.quad;
        let infinite = chars
            .types
            .iter()
            .any(|t| t.jumps.mass() == Mass::Infinite);
        let eps = match eps {
            Some(e) if e > 0.0 => e,
            Some(_) if infinite => {
                return Err(Error::InvalidConfig(
                    "eps = 0 requested but a jump measure has infinite activity".into(),
                ))
            }
            Some(_) => 0.0,
            None => {
                if infinite {
                    default_cutoff(chars)?
                } else {
                    0.0
                }
            }
        };
        let mut per_type = Vec::with_capacity(chars.kappa);
        for (i, t) in chars.types.iter().enumerate() {
            let jumps = build_truncated(&t.jumps, eps, &budget)?;
            let compensator = if eps > 0.0 {
                t.jumps.drift_below(eps, &budget)?
            } else {
                0.0
            };
            per_type.push(TypePlan {
                kill: t.killing,
                drift_eff: t.drift + compensator,
                switch_rates: chars.switch_rates[i].clone(),
                switch_total: chars.total_switch_rate(i),
                jumps,
            });
        }
        let e_vec = match gamma {
            Some(g) => Some(expected_functional(chars, g)?),
            None => None,
        };
        Ok(Self {
            chars: chars.clone(),
            eps,
            per_type,
            e_vec,
            gamma,
        })
    }

    pub fn characteristics(&self) -> &MapCharacteristics {
        &self.chars
    }
}

/// Largest cutoff whose neglected small-jump variance stays below 1e-8.
pub fn default_cutoff(chars: &MapCharacteristics) -> Result<f64> {
    let budget = chars.quad;
    let variance_at = |eps: f64| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in &chars.types {
            worst = worst.max(t.jumps.variance_below(eps, &budget)?);
        }
        Ok(worst)
    };
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    if variance_at(hi)? < 1e-8 {
        return Ok(hi);
    }
    for _ in 0..48 {
        let mid = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
        if variance_at(mid)? < 1e-8 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// When to stop a MAP simulation.
#[derive(Clone, Copy, Debug)]
pub enum StopRule {
    /// Run until MAP time `T`.
    Horizon(f64),
    /// Run until `xi` reaches the level.
    XiLevel(f64),
    /// Run until the residual bound on `∫ e^{-gamma xi}` falls below `tol`.
    FunctionalConverged { gamma: f64, tol: f64 },
    /// Run until the Lamperti clock `∫_0^u e^{-gamma xi}` reaches `t`, or
    /// until the residual clock mass is below `certainty * (t - clock)`.
    XTimeReached {
        gamma: f64,
        t: f64,
        certainty: f64,
    },
}

impl StopRule {
    fn gamma(&self) -> Option<f64> {
        match self {
            StopRule::FunctionalConverged { gamma, .. } => Some(*gamma),
            StopRule::XTimeReached { gamma, .. } => Some(*gamma),
            _ => None,
        }
    }
}

/// One linear piece of the MAP position marginal.
#[derive(Clone, Copy, Debug)]
pub struct MapSegment {
    pub t0: f64,
    pub xi0: f64,
    pub slope: f64,
    pub ty: TypeIdx,
}

#[derive(Clone, Copy, Debug)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: TypeIdx,
    pub to: TypeIdx,
    pub jump: f64,
}

/// Piecewise-linear record of `(xi, K)` up to `end_time`.
#[derive(Clone, Debug)]
pub struct MapPath {
    pub segments: Vec<MapSegment>,
    pub end_time: f64,
    pub killed_at: Option<f64>,
    pub switches: Vec<SwitchEvent>,
}

impl MapPath {
    pub fn xi_at(&self, t: f64) -> f64 {
        if let Some(tk) = self.killed_at {
            if t >= tk {
                return f64::INFINITY;
            }
        }
        let idx = match self.segments.partition_point(|s| s.t0 <= t) {
            0 => 0,
            p => p - 1,
        };
        let s = &self.segments[idx];
        s.xi0 + s.slope * (t - s.t0)
    }

    pub fn type_at(&self, t: f64) -> TypeIdx {
        if let Some(tk) = self.killed_at {
            if t >= tk {
                return SENTINEL_TYPE;
            }
        }
        let idx = match self.segments.partition_point(|s| s.t0 <= t) {
            0 => 0,
            p => p - 1,
        };
        self.segments[idx].ty
    }

    pub fn first_switch(&self) -> Option<&SwitchEvent> {
        self.switches.first()
    }

    /// CSV export with columns `time,xi,type,killed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,xi,type,killed\n");
        for s in &self.segments {
            out.push_str(&format!("{},{},{},0\n", s.t0, s.xi0, s.ty));
        }
        match self.killed_at {
            Some(tk) => out.push_str(&format!("{tk},inf,0,1\n")),
            None => {
                let t = self.end_time;
                out.push_str(&format!("{},{},{},0\n", t, self.xi_at(t), self.type_at(t)));
            }
        }
        out
    }
}

/// Exponential-functional estimate attached to a simulation.
#[derive(Clone, Copy, Debug)]
pub struct ExpFunctional {
    pub gamma: f64,
    pub value: f64,
    /// Certified bound on the neglected tail `∫_stop^∞ e^{-gamma xi}`.
    pub residual: f64,
}

/// Why a simulation ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopOutcome {
    HorizonReached,
    XiLevelReached,
    FunctionalConverged,
    /// `XTimeReached` hit its target clock value.
    TargetReached,
    /// `XTimeReached` stopped because the remaining clock mass was
    /// certified negligible; the transform is absorbed before the target.
    TargetUnreachable,
    Killed,
}

/// Result of one MAP simulation.
#[derive(Clone, Debug)]
pub struct MapSim {
    pub path: MapPath,
    pub functional: Option<ExpFunctional>,
    pub outcome: StopOutcome,
}

/// Closed-form increment of `∫ e^{-gamma(xi0 + c r)} dr` over `[0, dt]`.
#[inline]
fn clock_increment(z0_pow: f64, gamma: f64, c: f64, dt: f64) -> f64 {
    if c == 0.0 {
        z0_pow * dt
    } else {
        z0_pow * (-(-gamma * c * dt).exp_m1()) / (gamma * c)
    }
}

/// Simulates a MAP from `(0, start_ty)` under the stop rule. `eps` is the
/// small-jump cutoff for infinite-activity types (`None` picks the default
/// variance-controlled cutoff).
pub fn simulate_map(
    chars: &MapCharacteristics,
    start_ty: TypeIdx,
    stop: StopRule,
    eps: Option<f64>,
    rng: &mut RngStream,
) -> Result<MapSim> {
    let plan = SimPlan::new(chars, eps, stop.gamma())?;
    simulate_with_plan(&plan, start_ty, stop, rng)
}

pub fn simulate_with_plan(
    plan: &SimPlan,
    start_ty: TypeIdx,
    stop: StopRule,
    rng: &mut RngStream,
) -> Result<MapSim> {
    if start_ty == 0 || start_ty as usize > plan.chars.kappa {
        return Err(Error::InvalidConfig(format!(
            "start type {start_ty} out of range"
        )));
    }
    if let Some(g) = stop.gamma() {
        match plan.gamma {
            Some(pg) if pg == g => (),
            _ => {
                return Err(Error::InvalidConfig(
                    "plan was not compiled for this stop rule's gamma".into(),
                ))
            }
        }
    }

    let mut t = 0.0f64;
    let mut xi = 0.0f64;
    let mut ty = start_ty;
    let mut clock = 0.0f64; // ∫ e^{-gamma xi}
    let mut segments = Vec::new();
    let mut switches = Vec::new();
    let mut killed_at = None;
    let mut outcome = StopOutcome::HorizonReached;

    let gamma = stop.gamma().unwrap_or(0.0);
    let e_vec = plan.e_vec.as_deref();

    let mut events: u64 = 0;
    'outer: loop {
        let tp = &plan.per_type[(ty - 1) as usize];
        segments.push(MapSegment {
            t0: t,
            xi0: xi,
            slope: tp.drift_eff,
            ty,
        });

        let total_rate = tp.kill + tp.switch_total + tp.jumps.total_rate;
        let dwell = if total_rate > 0.0 {
            sample_exp(rng, total_rate)
        } else {
            f64::INFINITY
        };

        // Does the stop rule trigger strictly inside this segment?
        let mut cut: Option<f64> = None;
        match stop {
            StopRule::Horizon(h) => {
                if t + dwell >= h {
                    cut = Some(h - t);
                    outcome = StopOutcome::HorizonReached;
                }
            }
            StopRule::XiLevel(level) => {
                if xi >= level {
                    cut = Some(0.0);
                    outcome = StopOutcome::XiLevelReached;
                } else if tp.drift_eff > 0.0 {
                    let u = (level - xi) / tp.drift_eff;
                    if u <= dwell {
                        cut = Some(u);
                        outcome = StopOutcome::XiLevelReached;
                    }
                }
            }
            StopRule::FunctionalConverged { tol, .. } => {
                let e_here = e_vec.expect("plan has E vector")[(ty - 1) as usize];
                let residual_now = (-gamma * xi).exp() * e_here;
                if residual_now <= tol {
                    cut = Some(0.0);
                    outcome = StopOutcome::FunctionalConverged;
                } else if tp.drift_eff > 0.0 {
                    let u = ((e_here / tol).ln() / gamma - xi) / tp.drift_eff;
                    if u <= dwell {
                        cut = Some(u.max(0.0));
                        outcome = StopOutcome::FunctionalConverged;
                    }
                }
            }
            StopRule::XTimeReached {
                t: target,
                certainty,
                ..
            } => {
                let z0_pow = (-gamma * xi).exp();
                let e_here = e_vec.expect("plan has E vector")[(ty - 1) as usize];
                let gap = target - clock;
                if gap <= 0.0 {
                    cut = Some(0.0);
                    outcome = StopOutcome::TargetReached;
                } else if z0_pow * e_here <= certainty * gap {
                    cut = Some(0.0);
                    outcome = StopOutcome::TargetUnreachable;
                } else {
                    // Clock crossing within the segment?
                    let c = tp.drift_eff;
                    let u = if c == 0.0 {
                        gap / z0_pow
                    } else {
                        let arg = 1.0 - gamma * c * gap / z0_pow;
                        if arg <= 0.0 {
                            f64::INFINITY
                        } else {
                            -arg.ln() / (gamma * c)
                        }
                    };
                    if u <= dwell {
                        cut = Some(u);
                        outcome = StopOutcome::TargetReached;
                    } else if dwell.is_infinite() && c > 0.0 {
                        // Event-free drift forever: the remaining clock mass
                        // is exactly z0_pow/(gamma c) <= gap, so the target
                        // is not reachable. Flush the path far enough that
                        // the neglected mass is certified negligible.
                        let flush =
                            ((z0_pow * e_here) / (certainty * gap)).ln().max(0.0) / (gamma * c);
                        cut = Some(flush);
                        outcome = StopOutcome::TargetUnreachable;
                    }
                }
            }
        }

        if cut.is_none() && dwell.is_infinite() {
            return Err(Error::InvalidCharacteristics(
                "no events can occur and the stop rule never triggers; \
                 the simulation would run forever"
                    .into(),
            ));
        }

        if let Some(u) = cut {
            let z0_pow = (-gamma * xi).exp();
            if gamma > 0.0 {
                clock += clock_increment(z0_pow, gamma, tp.drift_eff, u);
            }
            t += u;
            xi += tp.drift_eff * u;
            break 'outer;
        }

        // Advance to the event.
        if gamma > 0.0 {
            let z0_pow = (-gamma * xi).exp();
            clock += clock_increment(z0_pow, gamma, tp.drift_eff, dwell);
        }
        t += dwell;
        xi += tp.drift_eff * dwell;

        events += 1;
        if events > DEFAULT_EVENT_BUDGET {
            return Err(Error::RunawayMap(DEFAULT_EVENT_BUDGET));
        }

        let pick = open01(rng) * total_rate;
        if pick < tp.kill {
            killed_at = Some(t);
            outcome = StopOutcome::Killed;
            break 'outer;
        } else if pick < tp.kill + tp.jumps.total_rate {
            xi += tp.jumps.sample(rng);
        } else {
            // Type switch.
            let to_idx = sample_categorical(rng, &tp.switch_rates) as TypeIdx + 1;
            let jump =
                plan.chars.switch_jumps[(ty - 1) as usize][(to_idx - 1) as usize].sample(rng);
            xi += jump;
            switches.push(SwitchEvent {
                time: t,
                from: ty,
                to: to_idx,
                jump,
            });
            ty = to_idx;
            continue;
        }
    }

    let functional = stop.gamma().map(|g| {
        let residual = match killed_at {
            Some(_) => 0.0,
            None => {
                let e_here = e_vec.expect("plan has E vector")[(ty - 1) as usize];
                (-g * xi).exp() * e_here
            }
        };
        ExpFunctional {
            gamma: g,
            value: clock,
            residual,
        }
    });

    Ok(MapSim {
        path: MapPath {
            segments,
            end_time: t,
            killed_at,
            switches,
        },
        functional,
        outcome,
    })
}

/// Monte Carlo draw of the exponential functional `∫_0^∞ e^{-gamma xi} dr`
/// with a certified residual bound below `tol`.
pub fn exponential_functional(
    plan: &SimPlan,
    start_ty: TypeIdx,
    gamma: f64,
    tol: f64,
    rng: &mut RngStream,
) -> Result<ExpFunctional> {
    let sim = simulate_with_plan(
        plan,
        start_ty,
        StopRule::FunctionalConverged { gamma, tol },
        rng,
    )?;
    Ok(sim.functional.expect("functional tracked"))
}

/// Exponential functional of an already-recorded path, segment by segment
/// in closed form over its horizon. The residual is zero for killed paths
/// and `e^{-gamma xi(end)} E[..]` is not certifiable from the path alone,
/// so it is reported as the plain cut value `e^{-gamma xi(end)}` scale.
pub fn exponential_functional_of_path(path: &MapPath, gamma: f64) -> Result<ExpFunctional> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be > 0".into()));
    }
    let mut value = 0.0;
    for (i, seg) in path.segments.iter().enumerate() {
        let t_end = path
            .segments
            .get(i + 1)
            .map(|n| n.t0)
            .unwrap_or(path.end_time);
        let z0_pow = (-gamma * seg.xi0).exp();
        value += clock_increment(z0_pow, gamma, seg.slope, t_end - seg.t0);
    }
    let residual = match path.killed_at {
        Some(_) => 0.0,
        None => (-gamma * path.xi_at(path.end_time)).exp(),
    };
    Ok(ExpFunctional {
        gamma,
        value,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Lamperti transform of a simulated MAP path
// ---------------------------------------------------------------------------

/// One piece of the transformed path: on `[s0, s0 + dur)` the value is
/// `z0 (1 - gamma c (s - s0) / z0^gamma)^{1/gamma}` (constant when `c = 0`).
#[derive(Clone, Copy, Debug)]
pub struct XSegment {
    pub s0: f64,
    pub z0: f64,
    pub c: f64,
    pub ty: TypeIdx,
    pub dur: f64,
}

/// Lamperti transform `X = e^{-xi_rho}`, `J = K_rho` of a simulated MAP
/// path, exactly represented by piecewise-analytic segments.
#[derive(Clone, Debug)]
pub struct SsmpPath {
    pub gamma: f64,
    segs: Vec<XSegment>,
    covered: f64,
    /// Whether the value is exactly 0 past `covered` (killing, or a
    /// negligible certified tail).
    absorbed: bool,
    switches_xtime: Vec<(f64, TypeIdx, TypeIdx)>,
}

impl SsmpPath {
    /// Time at which the transform reaches 0, when the path covers it.
    pub fn absorption_time(&self) -> Option<f64> {
        if self.absorbed {
            Some(self.covered)
        } else {
            None
        }
    }

    pub fn covered_until(&self) -> f64 {
        self.covered
    }

    pub fn switch_times(&self) -> &[(f64, TypeIdx, TypeIdx)] {
        &self.switches_xtime
    }

    pub fn first_switch_time(&self) -> Option<f64> {
        self.switches_xtime.first().map(|(s, _, _)| *s)
    }

    /// Value and type at Lamperti time `s`.
    pub fn eval(&self, s: f64) -> Result<(f64, TypeIdx)> {
        if s >= self.covered {
            if self.absorbed {
                return Ok((0.0, SENTINEL_TYPE));
            }
            if s <= self.covered * (1.0 + 1e-12) {
                // Boundary evaluation at the covered end.
            } else {
                return Err(Error::InvalidPath(format!(
                    "Lamperti path covers [0, {}] but {s} was requested",
                    self.covered
                )));
            }
        }
        let idx = match self.segs.partition_point(|seg| seg.s0 <= s) {
            0 => 0,
            p => p - 1,
        };
        let seg = &self.segs[idx];
        Ok((segment_value(seg, s.min(self.covered), self.gamma), seg.ty))
    }

    /// Samples onto a step path over the given strictly-increasing grid.
    pub fn to_stepped(&self, grid: &[f64]) -> Result<crate::chain::SteppedPath> {
        let mut times = Vec::with_capacity(grid.len());
        let mut values = Vec::with_capacity(grid.len());
        for &s in grid {
            let (v, ty) = self.eval(s)?;
            times.push(s);
            values.push((v, ty));
        }
        crate::chain::SteppedPath::new(times, values)
    }
}

#[inline]
fn segment_value(seg: &XSegment, s: f64, gamma: f64) -> f64 {
    if seg.c == 0.0 {
        return seg.z0;
    }
    let z0g = if gamma == 1.0 {
        seg.z0
    } else {
        seg.z0.powf(gamma)
    };
    let arg = (1.0 - gamma * seg.c * (s - seg.s0) / z0g).max(0.0);
    if gamma == 1.0 {
        seg.z0 * arg
    } else {
        seg.z0 * arg.powf(1.0 / gamma)
    }
}

/// Lamperti transform of a simulated MAP path with index `gamma`.
pub fn lamperti_transform_map(sim: &MapSim, gamma: f64) -> Result<SsmpPath> {
    lamperti_transform_scaled(sim, gamma, 1.0)
}

/// Lamperti transform started from the value `x0`: `Z = x0 e^{-xi}`, with
/// the clock scaled accordingly.
pub fn lamperti_transform_scaled(sim: &MapSim, gamma: f64, x0: f64) -> Result<SsmpPath> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be > 0".into()));
    }
    if !(x0 > 0.0) {
        return Err(Error::InvalidConfig("start value must be > 0".into()));
    }
    let path = &sim.path;
    let mut segs = Vec::with_capacity(path.segments.len());
    let mut s = 0.0f64;
    let mut map_times = Vec::with_capacity(path.segments.len());
    for (i, seg) in path.segments.iter().enumerate() {
        let t_end = path
            .segments
            .get(i + 1)
            .map(|n| n.t0)
            .unwrap_or(path.end_time);
        let du = t_end - seg.t0;
        let z0 = x0 * (-seg.xi0).exp();
        let z0g = if gamma == 1.0 { z0 } else { z0.powf(gamma) };
        let ds = clock_increment(z0g, gamma, seg.slope, du);
        map_times.push((seg.t0, s));
        segs.push(XSegment {
            s0: s,
            z0,
            c: seg.slope,
            ty: seg.ty,
            dur: ds,
        });
        s += ds;
    }
    // Map switch events (which sit at segment starts) into the new clock.
    let mut switches_xtime = Vec::with_capacity(path.switches.len());
    for sw in &path.switches {
        let idx = map_times.partition_point(|(t0, _)| *t0 <= sw.time) - 1;
        // Switch times coincide with a segment start.
        let (_, s_at) = map_times[idx.min(map_times.len() - 1)];
        switches_xtime.push((s_at, sw.from, sw.to));
    }
    // Functional-converged runs have a tail below the requested tolerance:
    // the transform is treated as absorbed at `covered`, with the size of
    // the cut recorded in the functional residual.
    let absorbed = matches!(
        sim.outcome,
        StopOutcome::Killed | StopOutcome::FunctionalConverged | StopOutcome::TargetUnreachable
    );
    Ok(SsmpPath {
        gamma,
        segs,
        covered: s,
        absorbed,
        switches_xtime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFamily;

    fn cp_log2() -> MapCharacteristics {
        MapCharacteristics::monotype(
            0.0,
            0.0,
            JumpMeasure {
                atoms: vec![(std::f64::consts::LN_2, 1.0)],
                densities: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn drift_only_is_exact() {
        let chars = MapCharacteristics::monotype(0.0, 2.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(1);
        let sim = simulate_map(&chars, 1, StopRule::Horizon(5.0), None, &mut fam.replicate(0))
            .unwrap();
        assert_eq!(sim.path.xi_at(5.0), 10.0);
        assert_eq!(sim.path.xi_at(2.5), 5.0);
        assert!(sim.path.switches.is_empty());
    }

    #[test]
    fn compound_poisson_mean_at_unit_time() {
        let chars = cp_log2();
        let fam = StreamFamily::new(2);
        let plan = SimPlan::new(&chars, None, None).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        for r in 0..n {
            let sim = simulate_with_plan(
                &plan,
                1,
                StopRule::Horizon(1.0),
                &mut fam.replicate(r),
            )
            .unwrap();
            sum += sim.path.xi_at(1.0);
        }
        let mean = sum / n as f64;
        // E xi_1 = log 2; sd of the mean = log2 * sqrt(2)/sqrt(n).
        let se = std::f64::consts::LN_2 * (2.0f64).sqrt() / (n as f64).sqrt();
        assert!(
            (mean - std::f64::consts::LN_2).abs() < 3.0 * se,
            "mean {mean}"
        );
    }

    #[test]
    fn symmetric_flip_occupation() {
        let chars = MapCharacteristics::new(
            vec![TypeDynamics::trivial(), TypeDynamics::trivial()],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![
                vec![SwitchJump::Zero, SwitchJump::Zero],
                vec![SwitchJump::Zero, SwitchJump::Zero],
            ],
        )
        .unwrap();
        let fam = StreamFamily::new(3);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::Horizon(1000.0),
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        let mut in_one = 0.0;
        for (i, seg) in sim.path.segments.iter().enumerate() {
            let end = sim
                .path
                .segments
                .get(i + 1)
                .map(|n| n.t0)
                .unwrap_or(sim.path.end_time);
            if seg.ty == 1 {
                in_one += end - seg.t0;
            }
        }
        let frac = in_one / sim.path.end_time;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn check_not_constant_cases() {
        // Single type with drift: clause a).
        let drift = MapCharacteristics::monotype(0.0, 1.0, JumpMeasure::default()).unwrap();
        assert!(check_not_constant(&drift).holds);

        // Trivial type 1 switching (with zero jumps) into a drifting type 2:
        // clause b).
        let via_path = MapCharacteristics::new(
            vec![
                TypeDynamics::trivial(),
                TypeDynamics {
                    killing: 0.0,
                    drift: 1.0,
                    jumps: JumpMeasure::default(),
                },
            ],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![
                vec![SwitchJump::Zero, SwitchJump::Zero],
                vec![SwitchJump::Zero, SwitchJump::Zero],
            ],
        )
        .unwrap();
        assert!(check_not_constant(&via_path).holds);

        // Completely trivial single type fails with itself as witness.
        let trivial = MapCharacteristics::monotype(0.0, 0.0, JumpMeasure::default()).unwrap();
        let res = check_not_constant(&trivial);
        assert!(!res.holds);
        assert_eq!(res.failing_type, Some(1));
    }

    #[test]
    fn functional_drift_closed_form() {
        let chars = MapCharacteristics::monotype(0.0, 2.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(4);
        let plan = SimPlan::new(&chars, None, Some(1.0)).unwrap();
        let f = exponential_functional(&plan, 1, 1.0, 1e-12, &mut fam.replicate(0)).unwrap();
        // I = 1/(gamma c) deterministically.
        assert!((f.value - 0.5).abs() < 1e-9, "value {}", f.value);
        assert!(f.residual <= 1e-12);
    }

    #[test]
    fn functional_of_recorded_path() {
        // Drift c over [0, T]: ∫ e^{-gamma c r} dr = (1 - e^{-gamma c T})/(gamma c).
        let chars = MapCharacteristics::monotype(0.0, 2.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(44);
        let sim = simulate_map(&chars, 1, StopRule::Horizon(3.0), None, &mut fam.replicate(0))
            .unwrap();
        let f = exponential_functional_of_path(&sim.path, 1.0).unwrap();
        let expected = (1.0 - (-6.0f64).exp()) / 2.0;
        assert!((f.value - expected).abs() < 1e-12, "{}", f.value);
        assert!((f.residual - (-6.0f64).exp()).abs() < 1e-12);

        // Consistency with the engine's own accumulator on a jumpy path.
        let cp = cp_log2();
        let plan = SimPlan::new(&cp, None, Some(1.0)).unwrap();
        let sim = simulate_with_plan(
            &plan,
            1,
            StopRule::FunctionalConverged {
                gamma: 1.0,
                tol: 1e-9,
            },
            &mut fam.replicate(1),
        )
        .unwrap();
        let on_path = exponential_functional_of_path(&sim.path, 1.0).unwrap();
        let engine = sim.functional.unwrap();
        assert!(
            (on_path.value - engine.value).abs() < 1e-12,
            "{} vs {}",
            on_path.value,
            engine.value
        );
    }

    #[test]
    fn functional_compound_poisson_mean() {
        let chars = cp_log2();
        let plan = SimPlan::new(&chars, None, Some(1.0)).unwrap();
        let fam = StreamFamily::new(5);
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..n {
            let f = exponential_functional(&plan, 1, 1.0, 1e-10, &mut fam.replicate(r)).unwrap();
            sum += f.value;
            sumsq += f.value * f.value;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        // E I = 1/psi(1) = 2 for psi(q) = 1 - 2^{-q}.
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn pure_killing_functional_is_exponential_time() {
        let chars = MapCharacteristics::monotype(2.0, 0.0, JumpMeasure::default()).unwrap();
        let plan = SimPlan::new(&chars, None, Some(1.0)).unwrap();
        let fam = StreamFamily::new(6);
        let n = 50_000u64;
        let mut sum = 0.0;
        for r in 0..n {
            let f = exponential_functional(&plan, 1, 1.0, 1e-10, &mut fam.replicate(r)).unwrap();
            sum += f.value;
        }
        let mean = sum / n as f64;
        // I = killing time, E I = 1/k = 0.5.
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn moment_oracle_examples() {
        let drift = LaplaceExponent::pure_drift(1.0);
        for k in 1..=4 {
            assert!((moment_oracle(&drift, 1.0, k).unwrap() - 1.0).abs() < 1e-12);
        }
        let mu = FiniteMeasure::atom(0.5, 0.5);
        let psi = crate::measures::laplace_exponent_from_measure(&mu).unwrap();
        assert!((moment_oracle(&psi, 1.0, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!((moment_oracle(&psi, 1.0, 2).unwrap() - 16.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn moment_oracle_rejects_degenerate() {
        let dead = LaplaceExponent::new(0.0, 0.0, JumpMeasure::default()).unwrap();
        assert!(matches!(
            moment_oracle(&dead, 1.0, 1),
            Err(Error::DegenerateExponent { .. })
        ));
    }

    #[test]
    fn expected_functional_monotype_matches_oracle() {
        let chars = cp_log2();
        let e = expected_functional(&chars, 1.0).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-9, "E = {}", e[0]);
    }

    #[test]
    fn lamperti_drift_is_linear_decay() {
        let chars = MapCharacteristics::monotype(0.0, 1.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(7);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::FunctionalConverged {
                gamma: 1.0,
                tol: 1e-12,
            },
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        let x = lamperti_transform_map(&sim, 1.0).unwrap();
        // X(t) = 1 - t on [0, 1).
        for t in [0.0, 0.25, 0.5, 0.9] {
            let (v, ty) = x.eval(t).unwrap();
            assert!((v - (1.0 - t)).abs() < 1e-9, "t={t} v={v}");
            assert_eq!(ty, 1);
        }
        let i = x.absorption_time().unwrap();
        assert!((i - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lamperti_drift_gamma_two() {
        let chars = MapCharacteristics::monotype(0.0, 1.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(8);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::FunctionalConverged {
                gamma: 2.0,
                tol: 1e-12,
            },
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        let x = lamperti_transform_map(&sim, 2.0).unwrap();
        // X(t) = (1 - 2t)^{1/2} on [0, 1/2).
        for t in [0.0, 0.1, 0.3, 0.49] {
            let (v, _) = x.eval(t).unwrap();
            assert!((v - (1.0 - 2.0 * t).sqrt()).abs() < 1e-9, "t={t} v={v}");
        }
        let i = x.absorption_time().unwrap();
        assert!((i - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pure_killing_lamperti_jumps_to_zero() {
        let chars = MapCharacteristics::monotype(3.0, 0.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(9);
        let n = 20_000u64;
        let mut sum = 0.0;
        for r in 0..n {
            let sim = simulate_map(
                &chars,
                1,
                StopRule::FunctionalConverged {
                    gamma: 1.0,
                    tol: 1e-12,
                },
                None,
                &mut fam.replicate(r),
            )
            .unwrap();
            let x = lamperti_transform_map(&sim, 1.0).unwrap();
            let i = x.absorption_time().unwrap();
            // X = 1 until the killing time.
            let (v, _) = x.eval(0.5 * i).unwrap();
            assert_eq!(v, 1.0);
            let (v, ty) = x.eval(i).unwrap();
            assert_eq!((v, ty), (0.0, 0));
            sum += i;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn asymptotic_slope_stabilizes() {
        let mut chars = cp_log2();
        chars.types[0].drift = 0.25;
        let fam = StreamFamily::new(10);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::Horizon(10_000.0),
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        let slope_small = sim.path.xi_at(1_000.0) / 1_000.0;
        let slope_large = sim.path.xi_at(10_000.0) / 10_000.0;
        let expected = 0.25 + std::f64::consts::LN_2;
        assert!(slope_large > 0.0);
        assert!(
            (slope_small - slope_large).abs() / slope_large < 0.1,
            "{slope_small} vs {slope_large}"
        );
        assert!((slope_large - expected).abs() / expected < 0.1);
    }

    #[test]
    fn eps_zero_with_infinite_activity_is_rejected() {
        let mu = FiniteMeasure::lebesgue(1.0);
        let (jumps, mass) = crate::measures::pushforward_neglog(&mu, true).unwrap();
        assert!(mass.is_infinite());
        let chars = MapCharacteristics::monotype(0.0, 0.0, jumps).unwrap();
        let fam = StreamFamily::new(11);
        let r = simulate_map(
            &chars,
            1,
            StopRule::Horizon(1.0),
            Some(0.0),
            &mut fam.replicate(0),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn infinite_activity_functional_matches_oracle() {
        // mu = Lebesgue gives psi(q) = H_q (harmonic numbers at integers).
        let mu = FiniteMeasure::lebesgue(1.0);
        let (jumps, _) = crate::measures::pushforward_neglog(&mu, true).unwrap();
        let chars = MapCharacteristics::monotype(0.0, 0.0, jumps).unwrap();
        let plan = SimPlan::new(&chars, Some(1e-4), Some(1.0)).unwrap();
        let fam = StreamFamily::new(12);
        let n = 30_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..n {
            let f = exponential_functional(&plan, 1, 1.0, 1e-8, &mut fam.replicate(r)).unwrap();
            sum += f.value;
            sumsq += f.value * f.value;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        // E I = 1/psi(1) = 1.
        assert!((mean - 1.0).abs() < 3.0 * se + 1e-3, "mean {mean} se {se}");
    }

    #[test]
    fn xi_level_stop_rule() {
        // Pure drift crosses the level inside a segment.
        let chars = MapCharacteristics::monotype(0.0, 2.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(41);
        let sim = simulate_map(&chars, 1, StopRule::XiLevel(3.0), None, &mut fam.replicate(0))
            .unwrap();
        assert_eq!(sim.outcome, StopOutcome::XiLevelReached);
        assert!((sim.path.end_time - 1.5).abs() < 1e-12);
        assert!((sim.path.xi_at(sim.path.end_time) - 3.0).abs() < 1e-12);

        // A compound-Poisson path overshoots the level at a jump.
        let cp = cp_log2();
        let sim = simulate_map(&cp, 1, StopRule::XiLevel(3.0), None, &mut fam.replicate(1))
            .unwrap();
        assert_eq!(sim.outcome, StopOutcome::XiLevelReached);
        assert!(sim.path.xi_at(sim.path.end_time) >= 3.0);
    }

    #[test]
    fn default_cutoff_controls_small_jump_variance() {
        let (jumps, _) =
            crate::measures::pushforward_neglog(&FiniteMeasure::lebesgue(1.0), true).unwrap();
        let chars = MapCharacteristics::monotype(0.0, 0.0, jumps).unwrap();
        let plan = SimPlan::new(&chars, None, None).unwrap();
        assert!(plan.eps > 0.0 && plan.eps < 1.0);
        let var = chars.types[0]
            .jumps
            .variance_below(plan.eps, &chars.quad)
            .unwrap();
        assert!(var < 1e-8, "neglected variance {var} at eps {}", plan.eps);
    }

    #[test]
    fn lamperti_export_to_grid() {
        let chars = MapCharacteristics::monotype(0.0, 1.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(42);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::FunctionalConverged {
                gamma: 1.0,
                tol: 1e-12,
            },
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        let x = lamperti_transform_map(&sim, 1.0).unwrap();
        let stepped = x.to_stepped(&[0.0, 0.25, 0.5, 2.0]).unwrap();
        assert_eq!(stepped.value_at(0.25), x.eval(0.25).unwrap().0);
        assert_eq!(stepped.value_at(2.0), 0.0);
        assert_eq!(stepped.eval(2.0).1, 0);
    }

    #[test]
    fn characteristics_serialize_round_trip() {
        let chars = cp_log2();
        let s = serde_json::to_string(&chars).unwrap();
        assert!(s.contains("\"switch_rates\""));
        let back: MapCharacteristics = serde_json::from_str(&s).unwrap();
        back.validate().unwrap();
        assert_eq!(back.kappa, 1);
        assert_eq!(back.types[0].jumps.atoms, chars.types[0].jumps.atoms);
    }

    #[test]
    fn map_path_csv_has_killed_flag() {
        let chars = MapCharacteristics::monotype(5.0, 1.0, JumpMeasure::default()).unwrap();
        let fam = StreamFamily::new(40);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::Horizon(1e9),
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        assert!(sim.path.killed_at.is_some());
        let csv = sim.path.to_csv();
        assert!(csv.starts_with("time,xi,type,killed\n"));
        assert!(csv.trim_end().ends_with(",inf,0,1"));
    }

    #[test]
    fn switch_events_are_recorded_with_jumps() {
        let mu12 = FiniteMeasure::atom(0.5, 1.0);
        let chars = MapCharacteristics::new(
            vec![TypeDynamics::trivial(), TypeDynamics {
                killing: 0.0,
                drift: 1.0,
                jumps: JumpMeasure::default(),
            }],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![
                vec![
                    SwitchJump::Zero,
                    SwitchJump::NegLogMeasure { measure: mu12 },
                ],
                vec![SwitchJump::Zero, SwitchJump::Zero],
            ],
        )
        .unwrap();
        let fam = StreamFamily::new(13);
        let sim = simulate_map(
            &chars,
            1,
            StopRule::Horizon(50.0),
            None,
            &mut fam.replicate(0),
        )
        .unwrap();
        let sw = sim.path.first_switch().expect("switch happens");
        assert_eq!(sw.from, 1);
        assert_eq!(sw.to, 2);
        assert!((sw.jump - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
