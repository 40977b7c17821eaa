//! Rate functionals and the overflow optimization.
//!
//! The decay rate of `P(bᵀZ_n(T) ≥ y)` is the value of
//!
//! ```text
//! minimize   Σ_{i∈𝒥} c_i x_i^α
//! subject to bᵀ φ(ξ)(T) ≥ y,   ξ_i(t) = (μ − 𝒬r)_i t + x_i 𝟙{t ≥ u_i},
//!            x_i ≥ 0 (i ∈ 𝒥),  x_i = 0 (i ∉ 𝒥),  u_i ∈ [0, T],
//! ```
//!
//! i.e. at most one jump per exogenous node. The objective is concave and
//! the feasibility check requires the reflection map, so the general solver
//! is a heuristic: extreme-point candidates, a coarse grid, and a local
//! search along the constraint boundary, with every reported witness
//! re-verified through [`reflect_terminal`]. The two-node tandem is solved
//! exactly in [`tandem`].

pub mod tandem;

use std::cmp::Ordering;

use thiserror::Error;

use crate::network::{FluidNetwork, NetworkError, ReflectionMatrix};
use crate::paths::{StepDriftPath, VectorPath};
use crate::reflection::{reflect_terminal, ReflectionError};

pub use tandem::{tandem_rate, TandemCase, TandemRegime, TandemSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
}

pub type Result<T> = std::result::Result<T, RateError>;

/// Relative tolerance on `𝔅 ≥ y` when accepting a candidate.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// `I(ξ) = Σ_j c_j Σ (jump sizes)^α` on the effective domain, `∞` outside it.
///
/// The domain: coordinates `j ∈ 𝒥` have drift `(μ − 𝒬r)_j`, coordinates off
/// `𝒥` have drift `−(𝒬r)_j` and no jumps, and every origin is 0.
pub fn rate_of_path(net: &FluidNetwork, x: &VectorPath) -> f64 {
    if x.dim() != net.dim() {
        return f64::INFINITY;
    }
    let drift = net.fluid_drift();
    let alpha = net.alpha();
    let mut total = 0.0;
    for (j, coord) in x.coords().iter().enumerate() {
        let tol = 1e-9 * (1.0 + drift[j].abs());
        if (coord.drift() - drift[j]).abs() > tol || coord.origin() != 0.0 {
            return f64::INFINITY;
        }
        if net.is_exogenous(j) {
            total += net.c()[j] * coord.jumps().iter().map(|jp| jp.size.powf(alpha)).sum::<f64>();
        } else if !coord.jumps().is_empty() {
            return f64::INFINITY;
        }
    }
    total
}

/// `𝔅(ξ) = bᵀφ(ξ)(T) ≥ y` on a network over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverflowProblem {
    net: FluidNetwork,
    b: Vec<f64>,
    y: f64,
    horizon: f64,
}

impl OverflowProblem {
    pub fn new(net: FluidNetwork, b: Vec<f64>, y: f64, horizon: f64) -> Result<Self> {
        if b.len() != net.dim() {
            return Err(RateError::Invalid(format!(
                "b has {} entries, network has {} nodes",
                b.len(),
                net.dim()
            )));
        }
        if b.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(RateError::Invalid("b must be nonnegative".into()));
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(RateError::Invalid(format!("threshold y = {y} must be positive")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(RateError::Invalid(format!("horizon T = {horizon} must be positive")));
        }
        net.ensure_valid()?;
        Ok(Self { net, b, y, horizon })
    }

    pub fn network(&self) -> &FluidNetwork {
        &self.net
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn with_threshold(&self, y: f64) -> Result<Self> {
        Self::new(self.net.clone(), self.b.clone(), y, self.horizon)
    }

    /// `I⁺ = {j : b_j > 0}`.
    pub fn positive_weights(&self) -> Vec<usize> {
        (0..self.b.len()).filter(|&j| self.b[j] > 0.0).collect()
    }

    /// `𝒥 ∩ I⁺ ≠ ∅`: some weighted node receives exogenous input. Without it the
    /// problem can be infeasible and the Hölder bound does not apply.
    pub fn has_exogenous_overlap(&self) -> bool {
        self.positive_weights().iter().any(|&j| self.net.is_exogenous(j))
    }
}

/// `max_{i ∈ I⁺ ∩ 𝒥} c_i / b_i^α · |y1 − y2|^α`.
pub fn holder_bound(p: &OverflowProblem, y1: f64, y2: f64) -> f64 {
    let alpha = p.net.alpha();
    let constant = p
        .positive_weights()
        .into_iter()
        .filter(|&i| p.net.is_exogenous(i))
        .map(|i| p.net.c()[i] / p.b[i].powf(alpha))
        .fold(0.0, f64::max);
    if y1 == y2 {
        0.0
    } else {
        constant * (y1 - y2).abs().powf(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Trivial,
    Grid,
    ExtremePoint,
    Refine,
    TandemAnalytic,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Trivial => "trivial",
            Method::Grid => "grid",
            Method::ExtremePoint => "extreme-point",
            Method::Refine => "refine",
            Method::TandemAnalytic => "tandem-analytic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSolution {
    /// `V*≥(y)`; `∞` when infeasible.
    pub value: f64,
    pub x_star: Vec<f64>,
    pub u_star: Vec<f64>,
    pub feasible: bool,
    pub method: Method,
    /// `𝔅` at the witness, recomputed through the reflection map.
    pub achieved: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Grid points per axis (reduced automatically to respect `grid_budget`).
    pub grid: usize,
    pub grid_budget: usize,
    /// Number of grid points the local search starts from.
    pub starts: usize,
    /// Local search stops once the step falls below this fraction of the range.
    pub step_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grid: 41,
            grid_budget: 200_000,
            starts: 16,
            step_tol: 1e-8,
        }
    }
}

impl SolverOptions {
    pub fn with_grid(grid: usize) -> Self {
        Self {
            grid,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    x: Vec<f64>,
    u: Vec<f64>,
    cost: f64,
    achieved: f64,
}

impl Candidate {
    fn support(&self) -> usize {
        self.x.iter().filter(|&&v| v > 0.0).count()
    }

    /// Cost, then fewer active jumps, then lexicographically smaller `x`.
    fn better_than(&self, other: &Candidate) -> bool {
        let tie = 1e-12 * (1.0 + self.cost.abs().max(other.cost.abs()));
        if self.cost < other.cost - tie {
            return true;
        }
        if self.cost > other.cost + tie {
            return false;
        }
        match self.support().cmp(&other.support()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self
                .x
                .iter()
                .zip(&other.x)
                .find(|(a, b)| a != b)
                .is_some_and(|(a, b)| a < b),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Timing {
    Keep,
    Terminal,
    /// `u = T − x / drain`, the latest start that keeps the node busy until `T`.
    Late,
}

/// Feasibility oracle for one problem.
struct Evaluator<'a> {
    p: &'a OverflowProblem,
    refl: ReflectionMatrix,
    drift: Vec<f64>,
    drain: Vec<f64>,
    active: Vec<usize>,
    caps: Vec<f64>,
    tol: f64,
}

impl<'a> Evaluator<'a> {
    fn new(p: &'a OverflowProblem) -> Result<Self> {
        let net = &p.net;
        let refl = net.reflection_matrix()?;
        let drift = net.fluid_drift();
        let drain: Vec<f64> = drift.iter().map(|a| -a).collect();
        let active = net.exogenous_nodes();
        let caps = size_caps(p);
        Ok(Self {
            p,
            refl,
            drift,
            drain,
            active,
            caps,
            tol: FEASIBILITY_TOL * (1.0 + p.y),
        })
    }

    fn cost(&self, x: &[f64]) -> f64 {
        let alpha = self.p.net.alpha();
        self.active
            .iter()
            .filter(|&&i| x[i] > 0.0)
            .map(|&i| self.p.net.c()[i] * x[i].powf(alpha))
            .sum()
    }

    fn path(&self, x: &[f64], u: &[f64]) -> VectorPath {
        let horizon = self.p.horizon;
        let coords = (0..x.len())
            .map(|i| {
                StepDriftPath::new(horizon, self.drift[i], 0.0, [(u[i], x[i])])
                    .expect("candidate jumps are nonnegative and inside [0, T]")
            })
            .collect();
        VectorPath::new(coords).expect("common horizon")
    }

    fn functional(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let z = reflect_terminal(&self.refl, &self.path(x, u))?;
        Ok(self.p.b.iter().zip(&z).map(|(b, z)| b * z).sum())
    }

    fn candidate(&self, x: Vec<f64>, u: Vec<f64>) -> Result<Candidate> {
        let achieved = self.functional(&x, &u)?;
        let cost = self.cost(&x);
        Ok(Candidate { x, u, cost, achieved })
    }

    fn feasible(&self, c: &Candidate) -> bool {
        c.achieved >= self.p.y - self.tol
    }

    fn late_time(&self, k: usize, size: f64) -> f64 {
        let horizon = self.p.horizon;
        if self.drain[k] > 0.0 {
            (horizon - size / self.drain[k]).clamp(0.0, horizon)
        } else {
            0.0
        }
    }

    /// Smallest `x_k` (others fixed) with `𝔅 ≥ y`, assuming `𝔅` is
    /// nondecreasing in `x_k`. Bracketed false position with bisection
    /// safeguard; the returned candidate is on the feasible side.
    fn tighten(&self, base: &Candidate, k: usize, timing: Timing) -> Result<Option<Candidate>> {
        let horizon = self.p.horizon;
        let at = |size: f64| -> Result<Candidate> {
            let mut x = base.x.clone();
            let mut u = base.u.clone();
            x[k] = size;
            match timing {
                Timing::Keep => {}
                Timing::Terminal => u[k] = horizon,
                Timing::Late => u[k] = self.late_time(k, size),
            }
            self.candidate(x, u)
        };
        let zero = at(0.0)?;
        if self.feasible(&zero) {
            return Ok(Some(zero));
        }
        let cap = self.caps[k];
        let top = at(cap)?;
        if !self.feasible(&top) {
            return Ok(None);
        }
        let y = self.p.y;
        let (mut lo, mut flo) = (0.0, zero.achieved - y);
        let (mut hi, mut fhi) = (cap, top.achieved - y);
        let mut best = top;
        let mut side = 0i8;
        for _ in 0..200 {
            if hi - lo <= 1e-13 * (1.0 + hi) {
                break;
            }
            let mut mid = if fhi > flo {
                hi - fhi * (hi - lo) / (fhi - flo)
            } else {
                0.5 * (lo + hi)
            };
            if !(mid > lo && mid < hi) {
                mid = 0.5 * (lo + hi);
            }
            let c = at(mid)?;
            let f = c.achieved - y;
            if f >= 0.0 {
                hi = mid;
                fhi = f;
                best = c;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            } else {
                lo = mid;
                flo = f;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            }
            // Pure bisection once false position stalls on one side.
            if (hi - lo) > 0.25 * cap && side != 0 {
                let m = 0.5 * (lo + hi);
                let c = at(m)?;
                if c.achieved - y >= 0.0 {
                    hi = m;
                    fhi = c.achieved - y;
                    best = c;
                } else {
                    lo = m;
                    flo = c.achieved - y;
                }
            }
        }
        Ok(Some(best))
    }
}

/// Per-node upper bounds on useful jump sizes.
///
/// For `i ∈ I⁺` a jump larger than `y / b_i` is dominated by that jump alone
/// placed at `T`; for other nodes a jump larger than `r_i T` cannot change the
/// node's output over the horizon. Both are further capped by the cost of the
/// cheapest single terminal jump.
pub fn size_caps(p: &OverflowProblem) -> Vec<f64> {
    let net = &p.net;
    let alpha = net.alpha();
    let single = p
        .positive_weights()
        .into_iter()
        .filter(|&i| net.is_exogenous(i))
        .map(|i| net.c()[i] * (p.y / p.b[i]).powf(alpha))
        .fold(f64::INFINITY, f64::min);
    (0..net.dim())
        .map(|i| {
            if !net.is_exogenous(i) {
                return 0.0;
            }
            let structural = if p.b[i] > 0.0 {
                p.y / p.b[i]
            } else {
                net.rates()[i] * p.horizon
            };
            // Slightly inflated so rounding never cuts off the optimum.
            let by_cost = (single / net.c()[i]).powf(1.0 / alpha) * (1.0 + 1e-12);
            structural.min(by_cost)
        })
        .collect()
}

fn subsets(items: &[usize]) -> Vec<Vec<usize>> {
    (1u32..(1 << items.len()))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &i)| i)
                .collect()
        })
        .collect()
}

/// Candidates at the extreme points suggested by the concavity of the
/// objective: every upstream node in a support set either carries a full
/// horizon's worth of drain at time 0, and one free node is sized to make
/// the constraint tight with a terminal or a latest-start timing.
fn extreme_candidates(ev: &Evaluator<'_>) -> Result<Vec<Candidate>> {
    let d = ev.p.net.dim();
    let horizon = ev.p.horizon;
    let mut out = Vec::new();
    let sets: Vec<Vec<usize>> = if ev.active.len() <= 8 {
        subsets(&ev.active)
    } else {
        ev.active.iter().map(|&i| vec![i]).collect()
    };
    for set in sets {
        for &free in &set {
            let mut x = vec![0.0; d];
            let mut u = vec![horizon; d];
            let mut ok = true;
            for &i in set.iter().filter(|&&i| i != free) {
                if ev.drain[i] <= 0.0 {
                    ok = false;
                    break;
                }
                x[i] = (ev.drain[i] * horizon).min(ev.caps[i]);
                u[i] = 0.0;
            }
            if !ok {
                continue;
            }
            let base = ev.candidate(x, u)?;
            for timing in [Timing::Terminal, Timing::Late] {
                if timing == Timing::Late && ev.drain[free] <= 0.0 {
                    continue;
                }
                if let Some(c) = ev.tighten(&base, free, timing)? {
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

fn axis(points: usize, hi: f64) -> Vec<f64> {
    (0..points)
        .map(|k| hi * k as f64 / (points - 1) as f64)
        .collect()
}

/// Plain grid over `(x_i, u_i)_{i∈𝒥}`; keeps the `keep` cheapest feasible points.
fn grid_candidates(ev: &Evaluator<'_>, opts: &SolverOptions) -> Result<Vec<Candidate>> {
    let m = ev.active.len();
    if m == 0 {
        return Ok(vec![]);
    }
    let d = ev.p.net.dim();
    let horizon = ev.p.horizon;
    let max_per_axis = (opts.grid_budget as f64).powf(1.0 / (2 * m) as f64).floor() as usize;
    let per_axis = opts.grid.min(max_per_axis).max(3);
    let sizes: Vec<Vec<f64>> = ev.active.iter().map(|&i| axis(per_axis, ev.caps[i])).collect();
    let times = axis(per_axis, horizon);

    let total = per_axis.pow(2 * m as u32);
    let mut kept: Vec<Candidate> = Vec::new();
    let mut x = vec![0.0; d];
    let mut u = vec![horizon; d];
    for code in 0..total {
        let mut rest = code;
        for (k, &i) in ev.active.iter().enumerate() {
            x[i] = sizes[k][rest % per_axis];
            rest /= per_axis;
            u[i] = times[rest % per_axis];
            rest /= per_axis;
        }
        // Skip points that cannot beat the current worst kept candidate.
        let cost = ev.cost(&x);
        if kept.len() >= opts.starts && cost >= kept[kept.len() - 1].cost {
            continue;
        }
        let c = ev.candidate(x.clone(), u.clone())?;
        if !ev.feasible(&c) {
            continue;
        }
        let pos = kept.partition_point(|k| !c.better_than(k));
        kept.insert(pos, c);
        kept.truncate(opts.starts);
    }
    Ok(kept)
}

/// Local search along the constraint boundary from one start.
fn refine(ev: &Evaluator<'_>, start: Candidate, opts: &SolverOptions) -> Result<Candidate> {
    let horizon = ev.p.horizon;
    let active = &ev.active;
    let mut best = start;
    // Bring the start onto the boundary.
    for &k in active {
        if best.x[k] > 0.0 {
            if let Some(c) = ev.tighten(&best, k, Timing::Keep)? {
                if c.better_than(&best) {
                    best = c;
                }
            }
        }
    }
    let mut h = 0.25;
    while h > opts.step_tol {
        let mut improved = false;
        // Time moves, each followed by re-tightening the active sizes.
        for &k in active {
            if best.x[k] <= 0.0 {
                continue;
            }
            for dir in [-1.0, 1.0] {
                let mut trial = best.clone();
                trial.u[k] = (trial.u[k] + dir * h * horizon).clamp(0.0, horizon);
                if trial.u[k] == best.u[k] {
                    continue;
                }
                let mut trial = ev.candidate(trial.x, trial.u)?;
                if !ev.feasible(&trial) {
                    continue;
                }
                for &j in active {
                    if trial.x[j] > 0.0 {
                        if let Some(c) = ev.tighten(&trial, j, Timing::Keep)? {
                            trial = c;
                        }
                    }
                }
                if trial.better_than(&best) {
                    best = trial;
                    improved = true;
                }
            }
        }
        // Exchanges: shrink or drop one size, restore feasibility with another.
        for &i in active {
            if best.x[i] <= 0.0 {
                continue;
            }
            for shrink in [(best.x[i] - h * ev.caps[i]).max(0.0), 0.0] {
                for &j in active {
                    if j == i {
                        continue;
                    }
                    let mut x = best.x.clone();
                    x[i] = shrink;
                    let base = ev.candidate(x, best.u.clone())?;
                    for timing in [Timing::Keep, Timing::Terminal, Timing::Late] {
                        if let Some(c) = ev.tighten(&base, j, timing)? {
                            if c.better_than(&best) {
                                best = c;
                                improved = true;
                            }
                        }
                    }
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    Ok(best)
}

/// Heuristic solver for `V*≥(y)` on general networks.
pub fn solve_overflow(p: &OverflowProblem, opts: &SolverOptions) -> Result<RateSolution> {
    let ev = Evaluator::new(p)?;
    let d = p.net.dim();
    let horizon = p.horizon;

    let zero = ev.candidate(vec![0.0; d], vec![horizon; d])?;
    if ev.feasible(&zero) {
        return Ok(RateSolution {
            value: 0.0,
            x_star: zero.x,
            u_star: zero.u,
            feasible: true,
            method: Method::Trivial,
            achieved: zero.achieved,
        });
    }

    let mut pool: Vec<(Candidate, Method)> = Vec::new();
    for c in extreme_candidates(&ev)? {
        pool.push((c, Method::ExtremePoint));
    }
    for c in grid_candidates(&ev, opts)? {
        pool.push((c, Method::Grid));
    }
    if pool.is_empty() {
        return Ok(RateSolution {
            value: f64::INFINITY,
            x_star: vec![0.0; d],
            u_star: vec![horizon; d],
            feasible: false,
            method: Method::Grid,
            achieved: zero.achieved,
        });
    }
    pool.sort_by(|a, b| {
        if a.0.better_than(&b.0) {
            Ordering::Less
        } else if b.0.better_than(&a.0) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    pool.dedup_by(|a, b| a.0.x == b.0.x && a.0.u == b.0.u);

    let (mut best, mut method) = pool[0].clone();
    for (start, _) in pool.into_iter().take(opts.starts) {
        let refined = refine(&ev, start, opts)?;
        if refined.better_than(&best) {
            best = refined;
            method = Method::Refine;
        }
    }

    // Independent re-check of the witness.
    let achieved = ev.functional(&best.x, &best.u)?;
    if achieved < p.y - 1e-6 {
        return Err(RateError::Invalid(format!(
            "witness re-check failed: 𝔅 = {achieved} < y = {}",
            p.y
        )));
    }
    Ok(RateSolution {
        value: best.cost,
        x_star: best.x,
        u_star: best.u,
        feasible: true,
        method,
        achieved,
    })
}

/// `V*≥` over a list of thresholds.
pub fn rate_sweep(p: &OverflowProblem, ys: &[f64], opts: &SolverOptions) -> Result<Vec<(f64, RateSolution)>> {
    ys.iter()
        .map(|&y| Ok((y, solve_overflow(&p.with_threshold(y)?, opts)?)))
        .collect()
}
