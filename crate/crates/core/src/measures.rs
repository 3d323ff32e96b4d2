//! Finite measures on `[0,1]`, Laplace exponents of subordinators, and
//! Q-matrices with their stationary distributions.
//!
//! A measure `mu` on `[0,1]` encodes a subordinator through
//!
//! ```text
//! psi(q) = mu({0}) + mu({1}) q + ∫_(0,1) (1 - x^q) / (1 - x) mu(dx),
//! ```
//!
//! i.e. killing from the atom at 0, drift from the atom at 1, and a Levy
//! measure obtained by reweighting the interior part by `1/(1-x)` and
//! pushing it through `y = -log x`. The interior reweighted mass may be
//! infinite; that case is flagged rather than truncated here, and the
//! simulation layer applies its small-jump cutoff.

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::quad::{tanh_sinh, QuadBudget};
use crate::rng::{open01, RngStream};

/// `log x` evaluated stably from `x` and `1 - x`, whichever is the more
/// precise description of the point.
#[inline]
fn ln_stable(x: f64, omx: f64) -> f64 {
    if omx < 0.5 {
        (-omx).ln_1p()
    } else {
        x.ln()
    }
}

/// The integrand kernel `(1 - x^q)/(1 - x)`, evaluated through `expm1` so
/// that it passes smoothly into its analytic limit `q` at `x = 1`.
#[inline]
fn one_minus_pow_over_omx(q: f64, x: f64, omx: f64) -> f64 {
    if omx == 0.0 {
        return q;
    }
    -(q * ln_stable(x, omx)).exp_m1() / omx
}

/// Closed-form density families on `(0,1)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Density {
    /// `scale * 1_(0,1)(x)`.
    Constant { scale: f64 },
    /// `scale * x^{a-1} (1-x)^{b-1} / B(a,b)`; total mass `scale`.
    Beta { a: f64, b: f64, scale: f64 },
    /// Piecewise-linear interpolation through `(xs, ys)`; knots must span
    /// `[0, 1]`.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl Density {
    pub fn validate(&self) -> Result<()> {
        match self {
            Density::Constant { scale } => {
                if !scale.is_finite() || *scale < 0.0 {
                    return Err(Error::InvalidMeasure(format!(
                        "constant density scale {scale} must be finite and >= 0"
                    )));
                }
            }
            Density::Beta { a, b, scale } => {
                if !(a.is_finite() && b.is_finite() && scale.is_finite())
                    || *a <= 0.0
                    || *b <= 0.0
                    || *scale < 0.0
                {
                    return Err(Error::InvalidMeasure(format!(
                        "beta density parameters (a={a}, b={b}, scale={scale}) out of range"
                    )));
                }
            }
            Density::Table { xs, ys } => {
                if xs.len() != ys.len() || xs.len() < 2 {
                    return Err(Error::InvalidMeasure(
                        "table density needs matching xs/ys with at least two knots".into(),
                    ));
                }
                if (xs[0] - 0.0).abs() > 1e-12 || (xs[xs.len() - 1] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidMeasure(
                        "table density knots must span [0, 1]".into(),
                    ));
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidMeasure(
                        "table density knots must be strictly increasing".into(),
                    ));
                }
                if ys.iter().any(|y| !y.is_finite() || *y < 0.0) {
                    return Err(Error::InvalidMeasure(
                        "table density values must be finite and >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Pointwise value for `x` in `(0,1)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_at(x, 1.0 - x)
    }

    /// Pointwise value with `1 - x` supplied separately, keeping full
    /// precision near the right endpoint.
    pub fn eval_at(&self, x: f64, omx: f64) -> f64 {
        match self {
            Density::Constant { scale } => *scale,
            Density::Beta { a, b, scale } => {
                if *scale == 0.0 {
                    return 0.0;
                }
                let ln = (a - 1.0) * x.ln() + (b - 1.0) * omx.ln() - ln_beta(*a, *b);
                scale * ln.exp()
            }
            Density::Table { xs, ys } => {
                let i = match xs.partition_point(|&t| t <= x) {
                    0 => 0,
                    p => p - 1,
                };
                let i = i.min(xs.len() - 2);
                let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ys[i] + w * (ys[i + 1] - ys[i])
            }
        }
    }

    /// Total mass, in closed form.
    pub fn mass(&self) -> f64 {
        match self {
            Density::Constant { scale } => *scale,
            Density::Beta { scale, .. } => *scale,
            Density::Table { xs, ys } => xs
                .windows(2)
                .zip(ys.windows(2))
                .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
                .sum(),
        }
    }

    /// CDF of the normalized density at `x` in `[0,1]`.
    pub fn cdf_normalized(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            Density::Constant { .. } => x,
            Density::Beta { a, b, .. } => {
                let d = statrs::distribution::Beta::new(*a, *b).expect("validated");
                d.cdf(x)
            }
            Density::Table { xs, ys } => {
                let total = self.mass();
                if total == 0.0 {
                    return 0.0;
                }
                let mut acc = 0.0;
                for (xw, yw) in xs.windows(2).zip(ys.windows(2)) {
                    if x >= xw[1] {
                        acc += 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]);
                    } else if x > xw[0] {
                        let w = (x - xw[0]) / (xw[1] - xw[0]);
                        let ymid = yw[0] + w * (yw[1] - yw[0]);
                        acc += 0.5 * (x - xw[0]) * (yw[0] + ymid);
                        break;
                    } else {
                        break;
                    }
                }
                acc / total
            }
        }
    }

    /// Inverse of [`Density::cdf_normalized`].
    pub fn inverse_cdf_normalized(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Density::Constant { .. } => u,
            Density::Beta { a, b, .. } => {
                let d = statrs::distribution::Beta::new(*a, *b).expect("validated");
                d.inverse_cdf(u)
            }
            Density::Table { xs, ys } => {
                let total = self.mass();
                if total == 0.0 {
                    return 0.0;
                }
                let mut target = u * total;
                for (xw, yw) in xs.windows(2).zip(ys.windows(2)) {
                    let seg = 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]);
                    if target > seg {
                        target -= seg;
                        continue;
                    }
                    // Solve 0.5*(y0 + y(x)) * (x - x0) = target on the segment.
                    let dx = xw[1] - xw[0];
                    let slope = (yw[1] - yw[0]) / dx;
                    if slope.abs() < 1e-14 {
                        let y = yw[0];
                        return if y <= 0.0 { xw[0] } else { xw[0] + target / y };
                    }
                    let disc = (yw[0] * yw[0] + 2.0 * slope * target).max(0.0);
                    return xw[0] + (disc.sqrt() - yw[0]) / slope;
                }
                1.0
            }
        }
    }

    /// Draw from the normalized density.
    pub fn sample_normalized(&self, rng: &mut RngStream) -> f64 {
        self.inverse_cdf_normalized(open01(rng))
    }
}

/// A finite non-negative measure on `[0,1]`: atoms plus an optional density.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FiniteMeasure {
    /// `(location, mass)` pairs; locations in `[0,1]`, distinct, masses > 0.
    pub atoms: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
    #[serde(default, skip)]
    pub quad: QuadBudget,
}

impl FiniteMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, density: Option<Density>) -> Result<Self> {
        let m = Self {
            atoms,
            density,
            quad: QuadBudget::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empty() -> Self {
        Self {
            atoms: Vec::new(),
            density: None,
            quad: QuadBudget::default(),
        }
    }

    pub fn atom(x: f64, mass: f64) -> Self {
        Self::new(vec![(x, mass)], None).expect("valid atom")
    }

    pub fn lebesgue(scale: f64) -> Self {
        Self::new(vec![], Some(Density::Constant { scale })).expect("valid density")
    }

    pub fn beta(a: f64, b: f64, scale: f64) -> Self {
        Self::new(vec![], Some(Density::Beta { a, b, scale })).expect("valid density")
    }

    pub fn validate(&self) -> Result<()> {
        for &(x, m) in &self.atoms {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidMeasure(format!(
                    "atom location {x} outside [0,1]"
                )));
            }
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "atom mass {m} must be finite and > 0"
                )));
            }
        }
        for (i, &(xi, _)) in self.atoms.iter().enumerate() {
            for &(xj, _) in &self.atoms[i + 1..] {
                if xi == xj {
                    return Err(Error::InvalidMeasure(format!(
                        "duplicate atom location {xi}"
                    )));
                }
            }
        }
        if let Some(d) = &self.density {
            d.validate()?;
        }
        Ok(())
    }

    /// Atom mass exactly at `x`.
    pub fn mass_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(loc, _)| *loc == x)
            .map(|(_, m)| m)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|(_, m)| m).sum();
        atoms + self.density.as_ref().map_or(0.0, |d| d.mass())
    }

    /// Mass of the open interval `(0,1)`.
    pub fn interior_mass(&self) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|(x, _)| *x > 0.0 && *x < 1.0)
            .map(|(_, m)| m)
            .sum();
        atoms + self.density.as_ref().map_or(0.0, |d| d.mass())
    }

    pub fn is_nontrivial(&self) -> bool {
        self.total_mass() > 0.0
    }

    /// `∫ f dmu` with the density part integrated by quadrature.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc: f64 = self.atoms.iter().map(|&(x, m)| m * f(x)).sum();
        if let Some(d) = &self.density {
            acc += tanh_sinh(|x, omx| f(x) * d.eval_at(x, omx), 0.0, 1.0, &self.quad)?.value;
        }
        Ok(acc)
    }
}

/// Total mass of a jump measure, which may be infinite (infinite-activity
/// subordinator).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mass {
    Finite(f64),
    Infinite,
}

impl Mass {
    pub fn finite(self) -> Option<f64> {
        match self {
            Mass::Finite(v) => Some(v),
            Mass::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Mass::Infinite)
    }
}

/// One pushed-forward density component of a jump measure, kept in the
/// source `x`-coordinates: the measure on `(0,∞)` is the image under
/// `y = -log x` of `weight * base(x) dx`, optionally reweighted by
/// `1/(1-x)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XJumpDensity {
    pub base: Density,
    pub reweight: bool,
    pub weight: f64,
}

impl XJumpDensity {
    /// Density in `x`-space, including reweighting and weight; `omx` is
    /// `1 - x` to full precision.
    fn xdensity(&self, x: f64, omx: f64) -> f64 {
        let mut v = self.weight * self.base.eval_at(x, omx);
        if self.reweight {
            v /= omx;
        }
        v
    }

    fn mass(&self) -> Mass {
        if !self.reweight {
            return Mass::Finite(self.weight * self.base.mass());
        }
        match &self.base {
            Density::Constant { scale } => {
                if *scale == 0.0 {
                    Mass::Finite(0.0)
                } else {
                    Mass::Infinite
                }
            }
            Density::Beta { a, b, scale } => {
                if *scale == 0.0 {
                    Mass::Finite(0.0)
                } else if *b > 1.0 {
                    Mass::Finite(self.weight * scale * (a + b - 1.0) / (b - 1.0))
                } else {
                    Mass::Infinite
                }
            }
            Density::Table { xs, ys } => {
                let _ = xs;
                if *ys.last().unwrap() > 0.0 {
                    Mass::Infinite
                } else {
                    let budget = QuadBudget::default();
                    match tanh_sinh(|x, omx| self.xdensity(x, omx), 0.0, 1.0, &budget) {
                        Ok(q) => Mass::Finite(q.value),
                        Err(_) => Mass::Infinite,
                    }
                }
            }
        }
    }
}

/// A jump (Levy) measure on `(0,∞)`: explicit atoms in `y`-coordinates plus
/// pushed-forward density components.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct JumpMeasure {
    /// `(y, mass)` with `y > 0`.
    pub atoms: Vec<(f64, f64)>,
    pub densities: Vec<XJumpDensity>,
}

impl JumpMeasure {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.densities.iter().all(|c| c.weight * c.base.mass() == 0.0)
    }

    pub fn mass(&self) -> Mass {
        let mut total: f64 = self.atoms.iter().map(|(_, m)| m).sum();
        for c in &self.densities {
            match c.mass() {
                Mass::Finite(v) => total += v,
                Mass::Infinite => return Mass::Infinite,
            }
        }
        Mass::Finite(total)
    }

    /// `∫ g(y) Π(dy)` where `g` is given in `y`-coordinates and assumed to
    /// keep the integral convergent; density components are integrated in
    /// `x`-space.
    pub fn integrate_y<F: Fn(f64) -> f64>(&self, g: F, budget: &QuadBudget) -> Result<f64> {
        let mut acc: f64 = self.atoms.iter().map(|&(y, m)| m * g(y)).sum();
        for c in &self.densities {
            acc += tanh_sinh(
                |x, omx| g(-ln_stable(x, omx)) * c.xdensity(x, omx),
                0.0,
                1.0,
                budget,
            )?
            .value;
        }
        Ok(acc)
    }

    /// `∫ (1 ∧ y) Π(dy)`, finite for every admissible jump measure. The
    /// kink of `1 ∧ y` at `y = 1` sits at `x = e^{-1}`; the integral is
    /// split there so each piece stays smooth for the quadrature.
    pub fn integrability(&self, budget: &QuadBudget) -> Result<f64> {
        let mut acc: f64 = self.atoms.iter().map(|&(y, m)| m * y.min(1.0)).sum();
        let split = (-1.0f64).exp();
        for c in &self.densities {
            // y >= 1 on (0, e^{-1}]: the integrand is just the density.
            acc += tanh_sinh(|x, _| c.xdensity(x, 1.0 - x), 0.0, split, budget)?.value;
            acc += tanh_sinh(
                |x, omx| {
                    let y = -ln_stable(x, omx);
                    let base = c.weight * c.base.eval_at(x, omx);
                    if c.reweight {
                        // y/(1-x) tends to 1 at x = 1; keep the ratio stable.
                        base * (y / omx)
                    } else {
                        base * y
                    }
                },
                split,
                1.0,
                budget,
            )?
            .value;
        }
        Ok(acc)
    }

    /// Mass of `{y >= eps}`; finite even for infinite-activity measures.
    pub fn mass_above(&self, eps: f64, budget: &QuadBudget) -> Result<f64> {
        let x_cut = (-eps).exp();
        let mut acc: f64 = self
            .atoms
            .iter()
            .filter(|(y, _)| *y >= eps)
            .map(|(_, m)| m)
            .sum();
        for c in &self.densities {
            // The right endpoint x_cut is bounded away from 1, so 1 - x is
            // recomputed directly.
            acc += tanh_sinh(|x, _| c.xdensity(x, 1.0 - x), 0.0, x_cut, budget)?.value;
        }
        Ok(acc)
    }

    /// Compensating drift of the cut small jumps: `∫_0^eps y Π(dy)`.
    pub fn drift_below(&self, eps: f64, budget: &QuadBudget) -> Result<f64> {
        let x_cut = (-eps).exp();
        let mut acc: f64 = self
            .atoms
            .iter()
            .filter(|(y, _)| *y < eps)
            .map(|&(y, m)| m * y)
            .sum();
        for c in &self.densities {
            acc += tanh_sinh(
                |x, omx| {
                    let y = -ln_stable(x, omx);
                    let base = c.weight * c.base.eval_at(x, omx);
                    if c.reweight {
                        base * (y / omx)
                    } else {
                        base * y
                    }
                },
                x_cut,
                1.0,
                budget,
            )?
            .value;
        }
        Ok(acc)
    }

    /// Neglected variance of the cut small jumps: `∫_0^eps y^2 Π(dy)`.
    pub fn variance_below(&self, eps: f64, budget: &QuadBudget) -> Result<f64> {
        let x_cut = (-eps).exp();
        let mut acc: f64 = self
            .atoms
            .iter()
            .filter(|(y, _)| *y < eps)
            .map(|&(y, m)| m * y * y)
            .sum();
        for c in &self.densities {
            acc += tanh_sinh(
                |x, omx| {
                    let y = -ln_stable(x, omx);
                    let base = c.weight * c.base.eval_at(x, omx);
                    if c.reweight {
                        base * y * (y / omx)
                    } else {
                        base * y * y
                    }
                },
                x_cut,
                1.0,
                budget,
            )?
            .value;
        }
        Ok(acc)
    }

    /// `∫ (1 - e^{-q y}) Π(dy)`, the jump part of the Laplace exponent.
    /// In source coordinates the reweighted integrand is
    /// `(1 - x^q)/(1 - x)`, evaluated through `expm1` so it passes into its
    /// analytic limit `q` at `x = 1`.
    pub fn laplace_term(&self, q: f64, budget: &QuadBudget) -> Result<f64> {
        if q == 0.0 {
            return Ok(0.0);
        }
        let mut acc: f64 = self
            .atoms
            .iter()
            .map(|&(y, m)| m * (-(-q * y).exp_m1()))
            .sum();
        for c in &self.densities {
            acc += tanh_sinh(
                |x, omx| {
                    let base = c.weight * c.base.eval_at(x, omx);
                    if c.reweight {
                        one_minus_pow_over_omx(q, x, omx) * base
                    } else {
                        -(q * ln_stable(x, omx)).exp_m1() * base
                    }
                },
                0.0,
                1.0,
                budget,
            )?
            .value;
        }
        Ok(acc)
    }

    fn scaled(&self, w: f64) -> JumpMeasure {
        JumpMeasure {
            atoms: self.atoms.iter().map(|&(y, m)| (y, m * w)).collect(),
            densities: self
                .densities
                .iter()
                .map(|c| XJumpDensity {
                    base: c.base.clone(),
                    reweight: c.reweight,
                    weight: c.weight * w,
                })
                .collect(),
        }
    }
}

/// Killing, drift and jump measure of a subordinator, with evaluation of
/// `psi(q) = k + c q + ∫ (1 - e^{-qy}) Π(dy)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaplaceExponent {
    pub killing: f64,
    pub drift: f64,
    pub jumps: JumpMeasure,
    #[serde(default, skip)]
    pub quad: QuadBudget,
}

impl LaplaceExponent {
    pub fn new(killing: f64, drift: f64, jumps: JumpMeasure) -> Result<Self> {
        if killing < 0.0 || drift < 0.0 {
            return Err(Error::InvalidMeasure(
                "killing and drift must be >= 0".into(),
            ));
        }
        let le = Self {
            killing,
            drift,
            jumps,
            quad: QuadBudget::default(),
        };
        // Admissibility of the jump measure.
        le.jumps.integrability(&le.quad)?;
        Ok(le)
    }

    pub fn pure_drift(c: f64) -> Self {
        Self::new(0.0, c, JumpMeasure::default()).expect("valid")
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        if q < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "Laplace exponent evaluated at negative q = {q}"
            )));
        }
        Ok(self.killing + self.drift * q + self.jumps.laplace_term(q, &self.quad)?)
    }

    /// Weighted sum `Σ w_i psi_i`, itself a Laplace exponent.
    pub fn weighted_sum(terms: &[(f64, &LaplaceExponent)]) -> Result<Self> {
        let mut killing = 0.0;
        let mut drift = 0.0;
        let mut jumps = JumpMeasure::default();
        for &(w, le) in terms {
            if w < 0.0 {
                return Err(Error::InvalidConfig("negative mixture weight".into()));
            }
            killing += w * le.killing;
            drift += w * le.drift;
            let scaled = le.jumps.scaled(w);
            jumps.atoms.extend(scaled.atoms);
            jumps.densities.extend(scaled.densities);
        }
        Self::new(killing, drift, jumps)
    }

    /// Checks `psi(0) = killing`, monotonicity and concavity on a grid.
    pub fn check_shape(&self, qs: &[f64]) -> Result<()> {
        let at_zero = self.eval(0.0)?;
        if (at_zero - self.killing).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!(
                "psi(0) = {at_zero} differs from killing {}",
                self.killing
            )));
        }
        let mut vals = Vec::with_capacity(qs.len());
        for &q in qs {
            vals.push(self.eval(q)?);
        }
        for w in vals.windows(2) {
            if w[1] < w[0] - 1e-9 {
                return Err(Error::InvalidMeasure(format!(
                    "psi not nondecreasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for i in 1..qs.len().saturating_sub(1) {
            // Concavity via divided differences on a possibly uneven grid.
            let s1 = (vals[i] - vals[i - 1]) / (qs[i] - qs[i - 1]);
            let s2 = (vals[i + 1] - vals[i]) / (qs[i + 1] - qs[i]);
            if s2 > s1 + 1e-9 {
                return Err(Error::InvalidMeasure(format!(
                    "psi not concave near q = {}",
                    qs[i]
                )));
            }
        }
        Ok(())
    }
}

/// Builds the Laplace exponent encoded by a finite measure on `[0,1]`.
pub fn laplace_exponent_from_measure(mu: &FiniteMeasure) -> Result<LaplaceExponent> {
    mu.validate()?;
    let killing = mu.mass_at(0.0);
    let drift = mu.mass_at(1.0);
    let (jumps, _) = pushforward_neglog(&interior_of(mu), true)?;
    let mut le = LaplaceExponent::new(killing, drift, jumps)?;
    le.quad = mu.quad;
    Ok(le)
}

fn interior_of(mu: &FiniteMeasure) -> FiniteMeasure {
    FiniteMeasure {
        atoms: mu
            .atoms
            .iter()
            .copied()
            .filter(|(x, _)| *x > 0.0 && *x < 1.0)
            .collect(),
        density: mu.density.clone(),
        quad: mu.quad,
    }
}

/// Pushes a measure supported on `(0,1)` through `y = -log x`, optionally
/// reweighting by `1/(1-x)` first (the diagonal recipe). Returns the jump
/// measure together with its total mass, flagged infinite when the
/// reweighted mass diverges.
pub fn pushforward_neglog(mu: &FiniteMeasure, reweight: bool) -> Result<(JumpMeasure, Mass)> {
    mu.validate()?;
    if mu.mass_at(0.0) > 0.0 || mu.mass_at(1.0) > 0.0 {
        return Err(Error::InvalidMeasure(
            "pushforward input must not charge {0} or {1}: those belong to killing/drift".into(),
        ));
    }
    let mut atoms = Vec::with_capacity(mu.atoms.len());
    for &(x, m) in &mu.atoms {
        let mass = if reweight { m / (1.0 - x) } else { m };
        atoms.push((-x.ln(), mass));
    }
    let mut densities = Vec::new();
    if let Some(d) = &mu.density {
        densities.push(XJumpDensity {
            base: d.clone(),
            reweight,
            weight: 1.0,
        });
    }
    let jm = JumpMeasure { atoms, densities };
    let mass = jm.mass();
    Ok((jm, mass))
}

/// Generator of a continuous-time Markov chain on `{1..kappa}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct QMatrix {
    pub kappa: usize,
    pub rows: Vec<Vec<f64>>,
}

impl QMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let kappa = rows.len();
        let q = Self { kappa, rows };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 || self.rows.len() != self.kappa {
            return Err(Error::InvalidQMatrix(format!(
                "expected {} rows, found {}",
                self.kappa,
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.kappa {
                return Err(Error::InvalidQMatrix(format!(
                    "row {i} has length {}, expected {}",
                    row.len(),
                    self.kappa
                )));
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if i != j && v < 0.0 {
                    return Err(Error::InvalidQMatrix(format!(
                        "off-diagonal entry ({i},{j}) = {v} is negative"
                    )));
                }
                sum += v;
            }
            if sum.abs() > 1e-12 {
                return Err(Error::InvalidQMatrix(format!(
                    "row {i} sums to {sum}, expected 0"
                )));
            }
        }
        Ok(())
    }

    /// Strong connectivity of the positive-rate graph. Returns a pair of
    /// non-communicating states on failure (0-based).
    pub fn irreducibility(&self) -> std::result::Result<(), (usize, usize)> {
        let n = self.kappa;
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
            for j in 0..n {
                if i != j && self.rows[i][j] > 0.0 {
                    reach[i][j] = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !(reach[i][j] && reach[j][i]) {
                    return Err((i, j));
                }
            }
        }
        Ok(())
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducibility().is_ok()
    }
}

/// Unique invariant probability vector of an irreducible Q-matrix: solves
/// `pi Q = 0` with one balance equation replaced by normalization.
pub fn stationary_distribution(q: &QMatrix) -> Result<Vec<f64>> {
    q.validate()?;
    if let Err((a, b)) = q.irreducibility() {
        return Err(Error::ReducibleQMatrix { a: a + 1, b: b + 1 });
    }
    let n = q.kappa;
    // System rows: columns of Q (pi Q = 0), last one replaced by Σ pi = 1.
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for col in 0..n.saturating_sub(1) {
        for row in 0..n {
            a[col * n + row] = q.rows[row][col];
        }
    }
    for row in 0..n {
        a[(n - 1) * n + row] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = solve_dense(&mut a, &mut b, n)?;
    // Verify the full balance residual, including the replaced equation.
    let mut worst: f64 = 0.0;
    for col in 0..n {
        let r: f64 = (0..n).map(|row| pi[row] * q.rows[row][col]).sum();
        worst = worst.max(r.abs());
    }
    if worst > 1e-10 {
        return Err(Error::InvalidQMatrix(format!(
            "stationary residual {worst:.3e} above 1e-10"
        )));
    }
    if pi.iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidQMatrix(
            "stationary distribution has a non-positive entry".into(),
        ));
    }
    Ok(pi)
}
