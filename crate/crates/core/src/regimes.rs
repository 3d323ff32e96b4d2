//! The three scaling regimes and their limit objects, together with
//! numerical checkers that a kernel family satisfies the corresponding
//! hypothesis.
//!
//! The regime is decided by the type-change rate exponent `beta` against
//! the macroscopic-jump exponent `gamma`: equal rates give a multi-type
//! additive limit, faster type changes mix the types through the
//! stationary distribution of their generator, slower ones never change
//! type on the macroscopic scale.

use serde::{Deserialize, Serialize};

use crate::chain::TransitionKernel;
use crate::error::{Error, Result};
use crate::map::{check_not_constant, MapCharacteristics, SwitchJump, TypeDynamics};
use crate::measures::{
    laplace_exponent_from_measure, pushforward_neglog, stationary_distribution, FiniteMeasure,
    LaplaceExponent, QMatrix,
};
use crate::TypeIdx;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Critical,
    Mixing,
    Solo,
}

/// `beta = gamma` is critical, `beta < gamma` mixing, `beta > gamma` solo.
pub fn classify_regime(beta: f64, gamma: f64) -> Regime {
    assert!(beta >= 0.0 && gamma > 0.0);
    if beta == gamma {
        Regime::Critical
    } else if beta < gamma {
        Regime::Mixing
    } else {
        Regime::Solo
    }
}

/// Inputs of the critical regime: one finite measure on `(0,1]` per
/// ordered type pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalSpec {
    pub gamma: f64,
    /// `mu[i][j]` drives moves while the type is `i+1` (diagonal) and
    /// switches `i+1 -> j+1` (off-diagonal).
    pub mu: Vec<Vec<FiniteMeasure>>,
}

impl CriticalSpec {
    pub fn kappa(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidSpec("gamma must be > 0".into()));
        }
        let kappa = self.mu.len();
        if kappa == 0 || self.mu.iter().any(|row| row.len() != kappa) {
            return Err(Error::InvalidSpec("mu must be a square matrix".into()));
        }
        for (i, row) in self.mu.iter().enumerate() {
            for (j, m) in row.iter().enumerate() {
                m.validate()?;
                if m.mass_at(0.0) > 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "mu[{},{}] charges 0; killed limits are out of scope",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        // Non-triviality: every type moves, directly or through a chain of
        // positive-mass switches. Interior mass produces jumps; a diagonal
        // atom at 1 produces drift. Off-diagonal atoms at 1 are pure type
        // switches and do not move the position, so they do not count.
        let direct: Vec<bool> = (0..kappa)
            .map(|i| {
                self.mu[i][i].mass_at(1.0) > 0.0
                    || (0..kappa).any(|j| self.mu[i][j].interior_mass() > 0.0)
            })
            .collect();
        for start in 0..kappa {
            if direct[start] {
                continue;
            }
            let mut seen = vec![false; kappa];
            seen[start] = true;
            let mut queue = vec![start];
            let mut ok = false;
            while let Some(i) = queue.pop() {
                if direct[i] {
                    ok = true;
                    break;
                }
                for j in 0..kappa {
                    if !seen[j] && j != i && self.mu[i][j].total_mass() > 0.0 {
                        seen[j] = true;
                        queue.push(j);
                    }
                }
            }
            if !ok {
                return Err(Error::InvalidSpec(format!(
                    "type {} never induces a macroscopic move",
                    start + 1
                )));
            }
        }
        Ok(())
    }
}

/// Inputs of the mixing regime.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingSpec {
    pub gamma: f64,
    pub beta: f64,
    /// Position-marginal measure per type, on `[0,1]`.
    pub mus: Vec<FiniteMeasure>,
    pub q: QMatrix,
}

impl MixingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || self.beta < 0.0 || self.beta >= self.gamma {
            return Err(Error::InvalidSpec(
                "mixing regime needs 0 <= beta < gamma".into(),
            ));
        }
        if self.mus.len() != self.q.kappa {
            return Err(Error::InvalidSpec(
                "one position measure per type is required".into(),
            ));
        }
        for m in &self.mus {
            m.validate()?;
        }
        if !self.mus.iter().any(|m| m.is_nontrivial()) {
            return Err(Error::InvalidSpec(
                "at least one position measure must be nontrivial".into(),
            ));
        }
        self.q.validate()?;
        if let Err((a, b)) = self.q.irreducibility() {
            return Err(Error::ReducibleQMatrix { a: a + 1, b: b + 1 });
        }
        Ok(())
    }
}

/// Inputs of the solo regime: a single distinguished type.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SoloSpec {
    pub gamma: f64,
    pub ty: TypeIdx,
    pub mu: FiniteMeasure,
}

impl SoloSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidSpec("gamma must be > 0".into()));
        }
        if self.ty == 0 {
            return Err(Error::InvalidSpec("type index must be >= 1".into()));
        }
        self.mu.validate()?;
        if !self.mu.is_nontrivial() {
            return Err(Error::InvalidSpec("mu must be nontrivial".into()));
        }
        Ok(())
    }
}

/// Builds the limiting MAP characteristics of the critical regime: per-type
/// subordinators from the diagonal measures (drift from the atom at 1,
/// jumps from the `1/(1-x)`-reweighted interior pushed through `-log`), and
/// switch rates with jump distributions from the off-diagonal measures.
pub fn limit_map_critical(spec: &CriticalSpec) -> Result<MapCharacteristics> {
    spec.validate()?;
    let kappa = spec.kappa();
    let mut types = Vec::with_capacity(kappa);
    let mut rates = vec![vec![0.0; kappa]; kappa];
    let mut jumps = vec![vec![SwitchJump::Zero; kappa]; kappa];
    for i in 0..kappa {
        let diag = &spec.mu[i][i];
        let interior = FiniteMeasure {
            atoms: diag
                .atoms
                .iter()
                .copied()
                .filter(|(x, _)| *x > 0.0 && *x < 1.0)
                .collect(),
            density: diag.density.clone(),
            quad: diag.quad,
        };
        let (levy, _) = pushforward_neglog(&interior, true)?;
        types.push(TypeDynamics {
            killing: 0.0,
            drift: diag.mass_at(1.0),
            jumps: levy,
        });
        for j in 0..kappa {
            if j == i {
                continue;
            }
            let mass = spec.mu[i][j].total_mass();
            if mass > 0.0 {
                rates[i][j] = mass;
                jumps[i][j] = SwitchJump::NegLogMeasure {
                    measure: spec.mu[i][j].clone(),
                };
            }
        }
    }
    let chars = MapCharacteristics::new(types, rates, jumps)?;
    let nc = check_not_constant(&chars);
    if !nc.holds {
        return Err(Error::InvalidSpec(format!(
            "limit characteristics are constant from type {}",
            nc.failing_type.unwrap()
        )));
    }
    Ok(chars)
}

/// Mixed Laplace exponent of the mixing regime: `psi = Σ pi_i psi_i` with
/// `pi` the stationary distribution of `Q`.
pub fn limit_subordinator_mixing(spec: &MixingSpec) -> Result<LaplaceExponent> {
    spec.validate()?;
    let pi = stationary_distribution(&spec.q)?;
    let psis: Vec<LaplaceExponent> = spec
        .mus
        .iter()
        .map(laplace_exponent_from_measure)
        .collect::<Result<_>>()?;
    let terms: Vec<(f64, &LaplaceExponent)> = pi.iter().copied().zip(psis.iter()).collect();
    LaplaceExponent::weighted_sum(&terms)
}

/// Laplace exponent of the solo regime, i.e. the one encoded by the
/// distinguished type's own measure.
pub fn limit_subordinator_solo(spec: &SoloSpec) -> Result<LaplaceExponent> {
    spec.validate()?;
    laplace_exponent_from_measure(&spec.mu)
}

/// Which part of a row a hypothesis functional examines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HypTarget {
    /// The `(i -> j)` part, with the critical weight `1 - (m/n) 1_{j=i}`.
    Pair(TypeIdx),
    /// The position marginal `p_n^{(i)}(m) = Σ_j p_{n,i}(m,j)` with weight
    /// `1 - m/n`.
    Marginal,
}

/// Evaluates `n^gamma Σ_m f(m/n) w(m, j) p_{n,i}(m, j)` for the requested
/// target; the convergence of these sums over a test-function basis is the
/// hypothesis the regimes formalize.
pub fn hypothesis_functional(
    kernel: &dyn TransitionKernel,
    n: u64,
    ty: TypeIdx,
    target: HypTarget,
    f: &dyn Fn(f64) -> f64,
    gamma: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    let row = kernel.row(n, ty)?;
    if row.len() as u64 > kernel.row_budget() {
        return Err(Error::RowBudget {
            pos: n,
            size: row.len() as u64,
            budget: kernel.row_budget(),
        });
    }
    let nf = n as f64;
    let mut acc = 0.0;
    for e in &row {
        let x = e.pos as f64 / nf;
        let term = match target {
            HypTarget::Pair(j) => {
                if e.ty != j {
                    continue;
                }
                let w = if j == ty { 1.0 - x } else { 1.0 };
                f(x) * w * e.p
            }
            HypTarget::Marginal => f(x) * (1.0 - x) * e.p,
        };
        acc += term;
    }
    Ok(nf.powf(gamma) * acc)
}

/// Exact row expectation `G_n^{(i)}(lambda) = E[(X(1)/n)^lambda]`.
pub fn kernel_moment_gen(
    kernel: &dyn TransitionKernel,
    n: u64,
    ty: TypeIdx,
    lambda: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    let row = kernel.row(n, ty)?;
    if row.len() as u64 > kernel.row_budget() {
        return Err(Error::RowBudget {
            pos: n,
            size: row.len() as u64,
            budget: kernel.row_budget(),
        });
    }
    let nf = n as f64;
    Ok(row
        .iter()
        .map(|e| {
            if e.pos == 0 {
                0.0
            } else {
                (e.pos as f64 / nf).powf(lambda) * e.p
            }
        })
        .sum())
}

/// `n^gamma (1 - G_n^{(i)}(lambda))`, the quantity that converges to
/// `psi_i(lambda)`.
pub fn moment_gen_diagnostic(
    kernel: &dyn TransitionKernel,
    n: u64,
    ty: TypeIdx,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let g = kernel_moment_gen(kernel, n, ty, lambda)?;
    Ok((n as f64).powf(gamma) * (1.0 - g))
}
