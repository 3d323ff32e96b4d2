//! Generic simulation of the non-increasing bivariate chain `(X, J)`.
//!
//! Kernels expose both a row evaluator (needed by the hypothesis
//! functionals) and a sampler. Absorption is detected through the declared
//! absorbing position set; a validation pass confirms that declared
//! absorbing rows really are identities, and once absorbed the chain keeps
//! its type.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{open01, RngStream};
use crate::TypeIdx;

/// One entry of a transition row: probability of moving to `(pos, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowEntry {
    pub pos: u64,
    pub ty: TypeIdx,
    pub p: f64,
}

/// Next state together with the number of steps spent sitting at the
/// current state beforehand. Kernels whose rows are dominated by the
/// self-transition override the sojourn sampler with a geometric shortcut;
/// the default emits one step at a time.
#[derive(Clone, Copy, Debug)]
pub struct Sojourn {
    pub holds: u64,
    pub pos: u64,
    pub ty: TypeIdx,
}

/// The law of one step of the chain.
pub trait TransitionKernel: Send + Sync {
    fn kappa(&self) -> usize;

    /// Declared absorbing positions, sorted ascending.
    fn absorbing_positions(&self) -> &[u64];

    /// Full transition row at `(pos, ty)`.
    fn row(&self, pos: u64, ty: TypeIdx) -> Result<Vec<RowEntry>>;

    /// Upper bound on row support sizes this kernel will enumerate.
    fn row_budget(&self) -> u64 {
        100_000_000
    }

    /// Draws one step. The default samples from the evaluated row.
    fn sample_step(&self, pos: u64, ty: TypeIdx, rng: &mut RngStream) -> Result<(u64, TypeIdx)> {
        let row = self.row(pos, ty)?;
        let u = open01(rng);
        let mut acc = 0.0;
        for e in &row {
            acc += e.p;
            if u <= acc {
                return Ok((e.pos, e.ty));
            }
        }
        let last = row.last().expect("validated row");
        Ok((last.pos, last.ty))
    }

    /// Draws the next state together with the count of preceding
    /// self-transitions.
    fn sample_sojourn(&self, pos: u64, ty: TypeIdx, rng: &mut RngStream) -> Result<Sojourn> {
        let (p, t) = self.sample_step(pos, ty, rng)?;
        Ok(Sojourn {
            holds: 0,
            pos: p,
            ty: t,
        })
    }

    fn is_absorbing(&self, pos: u64) -> bool {
        self.absorbing_positions().binary_search(&pos).is_ok()
    }

    /// Row-level sanity pass: rows sum to one, never increase the position,
    /// and declared absorbing rows are identities for at least one type
    /// (by the absorbed-type convention we demand it for every type).
    fn validate_rows(&self, probe: &[(u64, TypeIdx)]) -> Result<()> {
        for &(pos, ty) in probe {
            let row = self.row(pos, ty)?;
            if row.is_empty() {
                return Err(Error::InvalidKernel(format!("empty row at ({pos}, {ty})")));
            }
            let sum: f64 = row.iter().map(|e| e.p).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidKernel(format!(
                    "row at ({pos}, {ty}) sums to {sum}"
                )));
            }
            if row.iter().any(|e| e.p < 0.0) {
                return Err(Error::InvalidKernel(format!(
                    "row at ({pos}, {ty}) has a negative probability"
                )));
            }
            if row.iter().any(|e| e.pos > pos) {
                return Err(Error::InvalidKernel(format!(
                    "row at ({pos}, {ty}) increases the position"
                )));
            }
        }
        for &a in self.absorbing_positions() {
            for ty in 1..=self.kappa() as TypeIdx {
                let row = self.row(a, ty)?;
                let ok = row.len() == 1 && row[0].pos == a && row[0].ty == ty && row[0].p == 1.0;
                if !ok {
                    return Err(Error::InvalidKernel(format!(
                        "declared absorbing position {a} is not frozen for type {ty}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Explicit row-table kernel for small state spaces.
#[derive(Clone, Debug, Default)]
pub struct TableKernel {
    pub kappa: usize,
    rows: std::collections::HashMap<(u64, TypeIdx), Vec<RowEntry>>,
    absorbing: Vec<u64>,
}

impl TableKernel {
    pub fn new(kappa: usize) -> Self {
        Self {
            kappa,
            rows: Default::default(),
            absorbing: Vec::new(),
        }
    }

    pub fn set_row(&mut self, pos: u64, ty: TypeIdx, entries: Vec<RowEntry>) {
        self.rows.insert((pos, ty), entries);
    }

    pub fn declare_absorbing(&mut self, pos: u64) {
        if let Err(i) = self.absorbing.binary_search(&pos) {
            self.absorbing.insert(i, pos);
        }
        for ty in 1..=self.kappa as TypeIdx {
            self.rows
                .insert((pos, ty), vec![RowEntry { pos, ty, p: 1.0 }]);
        }
    }
}

impl TransitionKernel for TableKernel {
    fn kappa(&self) -> usize {
        self.kappa
    }

    fn absorbing_positions(&self) -> &[u64] {
        &self.absorbing
    }

    fn row(&self, pos: u64, ty: TypeIdx) -> Result<Vec<RowEntry>> {
        self.rows
            .get(&(pos, ty))
            .cloned()
            .ok_or_else(|| Error::InvalidKernel(format!("no row declared at ({pos}, {ty})")))
    }
}

/// Right-continuous piecewise-constant path of `(position, type)` over
/// continuous time. Only breakpoints are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SteppedPath {
    times: Vec<f64>,
    values: Vec<(f64, TypeIdx)>,
}

impl SteppedPath {
    pub fn new(times: Vec<f64>, values: Vec<(f64, TypeIdx)>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidPath(
                "need matching, non-empty times and values".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidPath("first breakpoint must be t = 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPath(
                "breakpoint times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn constant(value: f64, ty: TypeIdx) -> Self {
        Self {
            times: vec![0.0],
            values: vec![(value, ty)],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[(f64, TypeIdx)] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Right-continuous evaluation at `t >= 0`.
    pub fn eval(&self, t: f64) -> (f64, TypeIdx) {
        debug_assert!(t >= 0.0);
        let idx = match self.times.partition_point(|&s| s <= t) {
            0 => 0,
            p => p - 1,
        };
        self.values[idx]
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn final_value(&self) -> (f64, TypeIdx) {
        *self.values.last().unwrap()
    }

    /// First time the value component hits exactly zero, if it does.
    pub fn first_zero(&self) -> Option<f64> {
        self.values
            .iter()
            .position(|(v, _)| *v == 0.0)
            .map(|i| self.times[i])
    }

    /// First time the value component is `<= level`, if ever.
    pub fn first_at_or_below(&self, level: f64) -> Option<f64> {
        self.values
            .iter()
            .position(|(v, _)| *v <= level)
            .map(|i| self.times[i])
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1].0 <= w[0].0)
    }

    /// Piecewise-constant segments as `(start, end, value, type)`; the last
    /// segment has `end = None`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, Option<f64>, f64, TypeIdx)> + '_ {
        (0..self.len()).map(move |i| {
            let end = self.times.get(i + 1).copied();
            (self.times[i], end, self.values[i].0, self.values[i].1)
        })
    }

    /// CSV export with columns `time,position,type`, one row per breakpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,position,type\n");
        for (t, (v, ty)) in self.times.iter().zip(self.values.iter()) {
            out.push_str(&format!("{t},{v},{ty}\n"));
        }
        out
    }
}

/// Result of running a chain to absorption.
#[derive(Clone, Debug)]
pub struct ChainRunResult {
    /// Path over discrete step indices (stored as breakpoint times).
    pub path: SteppedPath,
    /// First step index after which the position never changes.
    pub absorption_step: u64,
    /// Steps at which the type actually changed, in increasing order.
    pub type_changes: Vec<u64>,
    /// Total steps simulated (equals `absorption_step`).
    pub steps: u64,
    /// State the chain was absorbed in.
    pub final_state: (u64, TypeIdx),
}

/// JSON summary per the chain run schema `{A, T: [...], steps}`.
#[derive(Serialize)]
struct RunSummary<'a> {
    #[serde(rename = "A")]
    a: u64,
    #[serde(rename = "T")]
    t: &'a [u64],
    steps: u64,
}

impl ChainRunResult {
    /// `T(p)` for `p >= 1`: the p-th type-change step, equal to the
    /// absorption step once type changes are exhausted.
    pub fn type_change_time(&self, p: usize) -> u64 {
        assert!(p >= 1);
        self.type_changes
            .get(p - 1)
            .copied()
            .unwrap_or(self.absorption_step)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string(&RunSummary {
            a: self.absorption_step,
            t: &self.type_changes,
            steps: self.steps,
        })
        .expect("serializable")
    }
}

/// Default cap on the number of simulated steps per run.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000_000;

/// Draws one step of the kernel; thin wrapper kept for symmetry with the
/// module's operation set.
pub fn step(
    kernel: &dyn TransitionKernel,
    state: (u64, TypeIdx),
    rng: &mut RngStream,
) -> Result<(u64, TypeIdx)> {
    kernel.sample_step(state.0, state.1, rng)
}

/// Runs the chain from `start` until it enters a declared absorbing
/// position, recording every change of state and all type-change times.
pub fn run_chain(
    kernel: &dyn TransitionKernel,
    start: (u64, TypeIdx),
    rng: &mut RngStream,
    step_budget: u64,
) -> Result<ChainRunResult> {
    let (mut pos, mut ty) = start;
    let mut times = vec![0.0];
    let mut values = vec![(pos as f64, ty)];
    let mut type_changes = Vec::new();
    let mut step_idx: u64 = 0;

    while !kernel.is_absorbing(pos) {
        if step_idx >= step_budget {
            return Err(Error::RunawayChain {
                budget: step_budget,
                pos,
                ty,
            });
        }
        let s = kernel.sample_sojourn(pos, ty, rng)?;
        step_idx += s.holds + 1;
        if s.pos == pos && s.ty == ty {
            continue;
        }
        if s.ty != ty {
            type_changes.push(step_idx);
        }
        pos = s.pos;
        ty = s.ty;
        times.push(step_idx as f64);
        values.push((pos as f64, ty));
    }

    Ok(ChainRunResult {
        path: SteppedPath::new(times, values)?,
        absorption_step: step_idx,
        type_changes,
        steps: step_idx,
        final_state: (pos, ty),
    })
}

/// Rescales a chain run: time divided by `n^gamma`, position by `n`.
pub fn rescale_path(result: &ChainRunResult, n: u64, gamma: f64) -> Result<SteppedPath> {
    if n == 0 {
        return Err(Error::InvalidConfig("rescale needs n >= 1".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("rescale needs gamma > 0".into()));
    }
    let tn = (n as f64).powf(gamma);
    let xn = n as f64;
    let times: Vec<f64> = result.path.times().iter().map(|t| t / tn).collect();
    let values: Vec<(f64, TypeIdx)> = result
        .path
        .values()
        .iter()
        .map(|(v, ty)| (v / xn, *ty))
        .collect();
    SteppedPath::new(times, values)
}
