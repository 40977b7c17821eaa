//! Multidimensional Skorokhod reflection `ξ ↦ (ψ(ξ), φ(ξ))` on the orthant
//! with reflection matrix `𝒬 = I − Qᵀ`.
//!
//! [`reflect`] is event driven and exact on breakpoints: between input jumps
//! the potential content is linear, so the regulator grows linearly with
//! slopes given by a small linear complementarity problem on the set of empty
//! buffers. The only events are input jumps and buffers hitting zero.
//! [`reflect_fixedpoint_oracle`] computes the same map by Picard iteration of
//! `η ↦ 0 ∨ sup_{s ≤ t}(Qᵀη(s) − ξ(s))` on a grid and is used purely as an
//! independent check.
//!
//! Inputs only carry nonnegative jumps (enforced by [`StepDriftPath`]), which
//! is the domain on which the regulator is continuous.

use thiserror::Error;

use crate::linalg::solve_in_place;
use crate::network::ReflectionMatrix;
use crate::paths::{Knot, PiecewiseLinear, StepDriftPath, VectorPath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReflectionError {
    #[error("path has {got} coordinates but the network has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("complementarity iteration did not converge in {0} iterations")]
    NonConvergent(usize),
    #[error("event limit of {0} exceeded")]
    EventLimit(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ReflectionError>;

const LCP_MAX_ITER: usize = 1_000_000;
const MAX_EVENTS: usize = 10_000_000;
const ORACLE_MAX_ITER: usize = 1_000_000;

/// A linear piece of the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Buffers that are empty throughout the segment.
    pub empty: Vec<usize>,
    pub regulator_slope: Vec<f64>,
    pub content_slope: Vec<f64>,
}

/// Exact reflection of a [`VectorPath`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSolution {
    horizon: f64,
    times: Vec<f64>,
    y: Vec<Vec<f64>>,
    z_left: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    segments: Vec<Segment>,
}

impl ReflectionSolution {
    pub fn dim(&self) -> usize {
        self.z[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Breakpoint times (including 0 and the horizon).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `Y` at breakpoint `k`.
    pub fn regulator_at(&self, k: usize) -> &[f64] {
        &self.y[k]
    }

    /// `Z` at breakpoint `k`.
    pub fn content_at(&self, k: usize) -> &[f64] {
        &self.z[k]
    }

    /// `Z(t−)` at breakpoint `k`.
    pub fn content_left_at(&self, k: usize) -> &[f64] {
        &self.z_left[k]
    }

    pub fn terminal_content(&self) -> &[f64] {
        &self.z[self.z.len() - 1]
    }

    pub fn terminal_regulator(&self) -> &[f64] {
        &self.y[self.y.len() - 1]
    }

    fn coordinate(&self, i: usize, values: &[Vec<f64>], left: &[Vec<f64>], origin: f64) -> PiecewiseLinear {
        let knots = self
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| Knot {
                t,
                left: if k == 0 { origin } else { left[k][i] },
                right: values[k][i],
            })
            .collect();
        PiecewiseLinear::from_knots(self.horizon, knots).expect("breakpoints are strictly increasing")
    }

    /// Regulator coordinates; `Y(0−) = 0`.
    pub fn regulator(&self) -> Vec<PiecewiseLinear> {
        (0..self.dim())
            .map(|i| self.coordinate(i, &self.y, &self.y, 0.0))
            .collect()
    }

    /// Content coordinates; the left value at 0 is the input's origin.
    pub fn content(&self) -> Vec<PiecewiseLinear> {
        (0..self.dim())
            .map(|i| self.coordinate(i, &self.z, &self.z_left, self.z_left[0][i]))
            .collect()
    }

    pub fn content_at_time(&self, t: f64) -> Vec<f64> {
        self.content().iter().map(|p| p.eval(t)).collect()
    }

    pub fn regulator_at_time(&self, t: f64) -> Vec<f64> {
        self.regulator().iter().map(|p| p.eval(t)).collect()
    }
}

/// Receives the trajectory as the engine produces it.
trait Recorder {
    fn knot(&mut self, t: f64, y: &[f64], z_left: &[f64], z: &[f64]);
    fn segment(&mut self, seg: impl FnOnce() -> Segment);
}

struct Discard;

impl Recorder for Discard {
    fn knot(&mut self, _: f64, _: &[f64], _: &[f64], _: &[f64]) {}
    fn segment(&mut self, _: impl FnOnce() -> Segment) {}
}

#[derive(Default)]
struct Trajectory {
    times: Vec<f64>,
    y: Vec<Vec<f64>>,
    z_left: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    segments: Vec<Segment>,
}

impl Recorder for Trajectory {
    fn knot(&mut self, t: f64, y: &[f64], z_left: &[f64], z: &[f64]) {
        if self.times.last() == Some(&t) {
            // Coalesce: keep the earliest left limit, overwrite the value.
            let k = self.times.len() - 1;
            self.y[k] = y.to_vec();
            self.z[k] = z.to_vec();
            return;
        }
        self.times.push(t);
        self.y.push(y.to_vec());
        self.z_left.push(z_left.to_vec());
        self.z.push(z.to_vec());
    }

    fn segment(&mut self, seg: impl FnOnce() -> Segment) {
        self.segments.push(seg());
    }
}

/// Scratch space for the segment complementarity problem.
struct Engine<'a> {
    refl: &'a ReflectionMatrix,
    d: usize,
    tol: f64,
    empty: Vec<bool>,
    y_slope: Vec<f64>,
    z_slope: Vec<f64>,
    next: Vec<f64>,
    active: Vec<usize>,
    mat: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(refl: &'a ReflectionMatrix, tol: f64) -> Self {
        let d = refl.dim();
        Self {
            refl,
            d,
            tol,
            empty: vec![false; d],
            y_slope: vec![0.0; d],
            z_slope: vec![0.0; d],
            next: vec![0.0; d],
            active: Vec::with_capacity(d),
            mat: Vec::with_capacity(d * d),
            rhs: Vec::with_capacity(d),
        }
    }

    /// `q_{ji}`: fraction of node `j`'s output routed to `i`.
    #[inline]
    fn q(&self, j: usize, i: usize) -> f64 {
        self.refl.routing()[(j, i)]
    }

    /// Least `w ≥ 0` supported on `mask` with `w_i ≥ (Qᵀw)_i − b_i` for
    /// `i ∈ mask`, written into `out`. Monotone Picard iteration from 0,
    /// followed by an exact solve on the detected support.
    fn least_regulator(&mut self, b: &[f64], mask: &[bool], scale: f64) -> Result<Vec<f64>> {
        let d = self.d;
        let mut w = vec![0.0; d];
        if !mask.iter().any(|&m| m) {
            return Ok(w);
        }
        let stop = 1e-15 * scale.max(1.0);
        let mut converged = false;
        for _ in 0..LCP_MAX_ITER {
            let mut change = 0.0_f64;
            for i in 0..d {
                if !mask[i] {
                    continue;
                }
                let mut s = -b[i];
                for j in 0..d {
                    if mask[j] && w[j] != 0.0 {
                        s += self.q(j, i) * w[j];
                    }
                }
                let v = s.max(0.0);
                change = change.max((v - w[i]).abs());
                self.next[i] = v;
            }
            for i in 0..d {
                if mask[i] {
                    w[i] = self.next[i];
                }
            }
            if change <= stop {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(ReflectionError::NonConvergent(LCP_MAX_ITER));
        }
        // Exact refinement on the support; iterates approach from below, so
        // every positive iterate is truly active.
        self.active.clear();
        self.active.extend((0..d).filter(|&i| mask[i] && w[i] > 0.0));
        for _ in 0..=d {
            if self.active.is_empty() {
                break;
            }
            let k = self.active.len();
            self.mat.clear();
            self.rhs.clear();
            for &i in &self.active {
                for &j in &self.active {
                    self.mat.push(if i == j { 1.0 } else { 0.0 } - self.q(j, i));
                }
                self.rhs.push(-b[i]);
            }
            if !solve_in_place(&self.mat, &mut self.rhs, k) {
                return Ok(w);
            }
            if self.rhs.iter().any(|&v| v < -self.tol) {
                return Ok(w);
            }
            let mut exact = vec![0.0; d];
            for (r, &i) in self.active.iter().enumerate() {
                exact[i] = self.rhs[r].max(0.0);
            }
            let mut grew = false;
            for i in 0..d {
                if !mask[i] || exact[i] > 0.0 || self.active.contains(&i) {
                    continue;
                }
                let mut s = -b[i];
                for j in 0..d {
                    s += self.q(j, i) * exact[j];
                }
                if s > self.tol {
                    self.active.push(i);
                    grew = true;
                }
            }
            if !grew {
                return Ok(exact);
            }
            self.active.sort_unstable();
        }
        Ok(w)
    }

    /// Regulator and content slopes on a segment starting from content `z`.
    fn slopes(&mut self, drift: &[f64], z: &[f64], scale: f64) -> Result<()> {
        for i in 0..self.d {
            self.empty[i] = z[i] <= self.tol;
        }
        let mask = self.empty.clone();
        let w = self.least_regulator(drift, &mask, scale)?;
        self.y_slope.copy_from_slice(&w);
        for i in 0..self.d {
            let mut s = drift[i] + w[i];
            for j in 0..self.d {
                s -= self.q(j, i) * w[j];
            }
            self.z_slope[i] = if self.empty[i] && w[i] > 0.0 { 0.0 } else { s };
        }
        Ok(())
    }
}

/// Per-epoch jump vectors, sorted by time.
fn jump_epochs(x: &VectorPath) -> Vec<(f64, Vec<f64>)> {
    let d = x.dim();
    let mut events: Vec<(f64, usize, f64)> = x
        .coords()
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.jumps().iter().map(move |j| (j.time, i, j.size)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for (t, i, s) in events {
        match out.last_mut() {
            Some((last, v)) if *last == t => v[i] += s,
            _ => {
                let mut v = vec![0.0; d];
                v[i] = s;
                out.push((t, v));
            }
        }
    }
    out
}

fn path_scale(x: &VectorPath) -> f64 {
    let t = x.horizon();
    1.0 + x
        .coords()
        .iter()
        .map(|c| c.origin().abs() + c.drift().abs() * t + c.jump_mass())
        .fold(0.0, f64::max)
}

fn run(refl: &ReflectionMatrix, x: &VectorPath, rec: &mut impl Recorder) -> Result<Vec<f64>> {
    let d = refl.dim();
    if x.dim() != d {
        return Err(ReflectionError::DimensionMismatch {
            expected: d,
            got: x.dim(),
        });
    }
    let horizon = x.horizon();
    let scale = path_scale(x);
    let tol = 1e-12 * scale;
    let drift = x.drifts();
    let epochs = jump_epochs(x);
    let mut engine = Engine::new(refl, tol);

    // Initial instant: origin plus any jump at 0, then the least regulator
    // pushing the content into the orthant.
    let origin: Vec<f64> = x.coords().iter().map(StepDriftPath::origin).collect();
    let mut z = origin.clone();
    let mut next_epoch = 0;
    if let Some((t0, v)) = epochs.first() {
        if *t0 == 0.0 {
            for i in 0..d {
                z[i] += v[i];
            }
            next_epoch = 1;
        }
    }
    let all = vec![true; d];
    let y0 = engine.least_regulator(&z, &all, scale)?;
    let mut y = y0.clone();
    for i in 0..d {
        let mut s = z[i] + y0[i];
        for j in 0..d {
            s -= engine.q(j, i) * y0[j];
        }
        z[i] = if s.abs() <= tol { 0.0 } else { s };
    }
    rec.knot(0.0, &y, &origin, &z);

    let mut t = 0.0;
    let mut events = 0usize;
    while t < horizon {
        events += 1;
        if events > MAX_EVENTS {
            return Err(ReflectionError::EventLimit(MAX_EVENTS));
        }
        let jump_time = epochs.get(next_epoch).map_or(horizon, |e| e.0);
        for zi in z.iter_mut() {
            if *zi <= tol {
                *zi = 0.0;
            }
        }
        engine.slopes(&drift, &z, scale)?;
        let mut t_next = jump_time;
        for i in 0..d {
            let dz = engine.z_slope[i];
            if z[i] > 0.0 && dz < 0.0 {
                let hit = t + z[i] / -dz;
                if hit < t_next {
                    t_next = hit;
                }
            }
        }
        let dt = t_next - t;
        let z_start = z.clone();
        for i in 0..d {
            y[i] += engine.y_slope[i] * dt;
            let zi = z[i] + engine.z_slope[i] * dt;
            z[i] = if zi <= tol { 0.0 } else { zi };
        }
        // Coordinates whose hitting time equals t_next land exactly on 0.
        for i in 0..d {
            let dz = engine.z_slope[i];
            if z_start[i] > 0.0 && dz < 0.0 && t + z_start[i] / -dz <= t_next {
                z[i] = 0.0;
            }
        }
        rec.segment(|| Segment {
            start: t,
            end: t_next,
            empty: (0..d).filter(|&i| engine.empty[i]).collect(),
            regulator_slope: engine.y_slope.clone(),
            content_slope: engine.z_slope.clone(),
        });
        t = t_next;
        let z_left = z.clone();
        if next_epoch < epochs.len() && epochs[next_epoch].0 == t {
            for i in 0..d {
                z[i] += epochs[next_epoch].1[i];
            }
            next_epoch += 1;
        }
        rec.knot(t, &y, &z_left, &z);
    }
    Ok(z)
}

/// Exact reflection with full trajectory.
pub fn reflect(refl: &ReflectionMatrix, x: &VectorPath) -> Result<ReflectionSolution> {
    let mut traj = Trajectory::default();
    run(refl, x, &mut traj)?;
    Ok(ReflectionSolution {
        horizon: x.horizon(),
        times: traj.times,
        y: traj.y,
        z_left: traj.z_left,
        z: traj.z,
        segments: traj.segments,
    })
}

/// Only `φ(ξ)(T)`; same algorithm as [`reflect`] without recording.
pub fn reflect_terminal(refl: &ReflectionMatrix, x: &VectorPath) -> Result<Vec<f64>> {
    run(refl, x, &mut Discard)
}

// ---------------------------------------------------------------------------
// Fixed-point oracle
// ---------------------------------------------------------------------------

/// Regulator and content sampled at the oracle's instants. A jump epoch
/// contributes two consecutive instants: the left limit and the value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSolution {
    pub times: Vec<f64>,
    pub is_left_limit: Vec<bool>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl SampledSolution {
    pub fn terminal_regulator(&self) -> &[f64] {
        &self.y[self.y.len() - 1]
    }

    pub fn terminal_content(&self) -> &[f64] {
        &self.z[self.z.len() - 1]
    }

    /// Largest difference to an exact solution at the sampled instants.
    pub fn sup_difference(&self, exact: &ReflectionSolution) -> f64 {
        let ys = exact.regulator();
        let zs = exact.content();
        let mut worst = 0.0_f64;
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..ys.len() {
                let (ye, ze) = if self.is_left_limit[k] {
                    (ys[i].eval_left(t), zs[i].eval_left(t))
                } else {
                    (ys[i].eval(t), zs[i].eval(t))
                };
                worst = worst.max((ye - self.y[k][i]).abs()).max((ze - self.z[k][i]).abs());
            }
        }
        worst
    }
}

/// Picard iteration `η ← 0 ∨ sup_{s≤t}(Qᵀη(s) − ξ(s))` from `η = 0` on a grid of
/// `grid_n + 1` uniform points merged with the jump epochs.
pub fn reflect_fixedpoint_oracle(
    refl: &ReflectionMatrix,
    x: &VectorPath,
    grid_n: usize,
) -> Result<SampledSolution> {
    let d = refl.dim();
    if x.dim() != d {
        return Err(ReflectionError::DimensionMismatch {
            expected: d,
            got: x.dim(),
        });
    }
    if grid_n < 2 {
        return Err(ReflectionError::Invalid("grid_n must be at least 2".into()));
    }
    let horizon = x.horizon();
    let jumps = x.jump_times();
    let mut grid: Vec<f64> = (0..=grid_n)
        .map(|k| horizon * k as f64 / grid_n as f64)
        .chain(jumps.iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut times = Vec::with_capacity(grid.len() + jumps.len());
    let mut is_left = Vec::with_capacity(times.capacity());
    for &t in &grid {
        if t > 0.0 && jumps.binary_search_by(|u| u.total_cmp(&t)).is_ok() {
            times.push(t);
            is_left.push(true);
        }
        times.push(t);
        is_left.push(false);
    }
    let xi: Vec<Vec<f64>> = times
        .iter()
        .zip(&is_left)
        .map(|(&t, &l)| if l { x.eval_left(t) } else { x.eval(t) }.expect("grid lies in [0, T]"))
        .collect();

    let q = refl.routing();
    let m = times.len();
    let mut eta = vec![vec![0.0; d]; m];
    let mut iterations = 0;
    let mut running = vec![0.0_f64; d];
    loop {
        iterations += 1;
        if iterations > ORACLE_MAX_ITER {
            return Err(ReflectionError::NonConvergent(ORACLE_MAX_ITER));
        }
        let mut change = 0.0_f64;
        running.iter_mut().for_each(|v| *v = 0.0);
        let mut next = vec![vec![0.0; d]; m];
        for k in 0..m {
            for i in 0..d {
                let mut s = -xi[k][i];
                for j in 0..d {
                    s += q[(j, i)] * eta[k][j];
                }
                running[i] = running[i].max(s);
                next[k][i] = running[i];
                change = change.max((next[k][i] - eta[k][i]).abs());
            }
        }
        eta = next;
        if change < 1e-10 {
            break;
        }
    }
    let z = xi
        .iter()
        .zip(&eta)
        .map(|(xk, yk)| {
            (0..d)
                .map(|i| {
                    let mut s = xk[i] + yk[i];
                    for j in 0..d {
                        s -= q[(j, i)] * yk[j];
                    }
                    s
                })
                .collect()
        })
        .collect();
    Ok(SampledSolution {
        times,
        is_left_limit: is_left,
        y: eta,
        z,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Two-node tandem closed form
// ---------------------------------------------------------------------------

/// Parameters of a one-jump-per-node tandem input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TandemInput {
    pub rates: [f64; 2],
    pub mu: [f64; 2],
    pub jump_sizes: [f64; 2],
    pub jump_times: [f64; 2],
    pub horizon: f64,
}

/// `z₂(T)` for the tandem from the nested-infimum formula
/// `z₂(T) = ξ₂(T) + m(T) − inf_{u≤T}(ξ₂(u) + m(u))`, `m(u) = inf_{s≤u} ξ₁(s)`,
/// where `ξ₁(t) = (μ₁ − r₁)t + x₁𝟙{t ≥ u₁}` and `ξ₂(t) = (μ₂ − r₂ + r₁)t +
/// x₂𝟙{t ≥ u₂}` are the potential contents. All functions involved are
/// piecewise linear, so infima are evaluated on the breakpoints.
pub fn tandem_z2_terminal(p: &TandemInput) -> Result<f64> {
    let [r1, r2] = p.rates;
    let [mu1, mu2] = p.mu;
    let [x1, x2] = p.jump_sizes;
    let [u1, u2] = p.jump_times;
    let horizon = p.horizon;
    if x1 < 0.0 || x2 < 0.0 {
        return Err(ReflectionError::Invalid("jump sizes must be nonnegative".into()));
    }
    if !(0.0..=horizon).contains(&u1) || !(0.0..=horizon).contains(&u2) {
        return Err(ReflectionError::Invalid("jump times must lie in [0, T]".into()));
    }
    let a1 = mu1 - r1;
    let a2 = mu2 - r2 + r1;
    let xi1 = |t: f64, left: bool| a1 * t + if (left && u1 < t) || (!left && u1 <= t) { x1 } else { 0.0 };
    let xi2 = |t: f64, left: bool| a2 * t + if (left && u2 < t) || (!left && u2 <= t) { x2 } else { 0.0 };

    // Breakpoints of ξ₁, its running minimum and ξ₂.
    let mut knots = vec![0.0, u1, u2, horizon];
    if a1 < 0.0 {
        let recovery = u1 + x1 / -a1;
        if recovery < horizon {
            knots.push(recovery);
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    // Running infimum of ξ₁ (with ξ₁(0−) = 0) at left limits and values.
    let running_min = |t: f64, left: bool| -> f64 {
        let mut m = 0.0_f64;
        for &s in knots.iter().filter(|&&s| s < t || (!left && s == t)) {
            m = m.min(xi1(s, true)).min(xi1(s, false));
        }
        m.min(xi1(t, left))
    };
    let g = |t: f64, left: bool| xi2(t, left) + running_min(t, left);
    let mut inf = 0.0_f64;
    for &s in &knots {
        inf = inf.min(g(s, true)).min(g(s, false));
    }
    Ok(g(horizon, false) - inf)
}

// ---------------------------------------------------------------------------
// Path surgery used by the optimization
// ---------------------------------------------------------------------------

/// Moves each coordinate's total jump mass to its last jump epoch.
pub fn consolidate_jumps(x: &VectorPath) -> VectorPath {
    let coords = x
        .coords()
        .iter()
        .map(|c| match c.jumps().last() {
            Some(last) if c.jumps().len() > 1 => StepDriftPath::new(
                c.horizon(),
                c.drift(),
                c.origin(),
                [(last.time, c.jump_mass())],
            )
            .expect("consolidation preserves validity"),
            _ => c.clone(),
        })
        .collect();
    VectorPath::new(coords).expect("consolidation preserves the horizon")
}

/// `ζ = ξ + a𝟙_{T}`: adds a jump `a_i` at the horizon to each coordinate.
pub fn append_terminal_jump(x: &VectorPath, a: &[f64]) -> Result<VectorPath> {
    if a.len() != x.dim() {
        return Err(ReflectionError::DimensionMismatch {
            expected: x.dim(),
            got: a.len(),
        });
    }
    if a.iter().any(|&v| !(v >= 0.0)) {
        return Err(ReflectionError::Invalid("terminal jumps must be nonnegative".into()));
    }
    let horizon = x.horizon();
    let coords = x
        .coords()
        .iter()
        .zip(a)
        .map(|(c, &ai)| {
            let jumps = c
                .jumps()
                .iter()
                .map(|j| (j.time, j.size))
                .chain(std::iter::once((horizon, ai)));
            StepDriftPath::new(horizon, c.drift(), c.origin(), jumps).expect("valid terminal jump")
        })
        .collect();
    Ok(VectorPath::new(coords).expect("same horizon"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim() -> ReflectionMatrix {
        ReflectionMatrix::from_rows(&[vec![0.0]]).unwrap()
    }

    fn tandem() -> ReflectionMatrix {
        ReflectionMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap()
    }

    fn path(t: f64, coords: &[(f64, &[(f64, f64)])]) -> VectorPath {
        VectorPath::new(
            coords
                .iter()
                .map(|(a, j)| StepDriftPath::new(t, *a, 0.0, j.iter().copied()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pure_negative_drift_is_absorbed() {
        let sol = reflect(&one_dim(), &path(1.0, &[(-1.0, &[])])).unwrap();
        assert_eq!(sol.terminal_content(), &[0.0]);
        assert!((sol.terminal_regulator()[0] - 1.0).abs() < 1e-15);
        assert!((sol.regulator_at_time(0.4)[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn one_dim_jump_matches_closed_form() {
        let x = path(1.0, &[(-1.0, &[(0.5, 2.0)])]);
        let sol = reflect(&one_dim(), &x).unwrap();
        assert!((sol.terminal_content()[0] - 1.5).abs() < 1e-14);
        assert!((sol.terminal_regulator()[0] - 0.5).abs() < 1e-14);
        // z(t) = ξ(t) − inf_{s≤t} min(ξ(s), 0) at a few times
        for &t in &[0.25, 0.5, 0.75] {
            let xi = x.coord(0).eval(t).unwrap();
            let inf = (-0.5_f64).max(-t).min(0.0);
            assert!((sol.content_at_time(t)[0] - (xi - inf)).abs() < 1e-14);
        }
    }

    #[test]
    fn tandem_node_one_feeds_node_two() {
        // r = (3, 3), μ = (1, 1): drift of X is μ − 𝒬r = (−2, 1).
        let x = path(1.0, &[(-2.0, &[(0.0, 2.0)]), (1.0, &[])]);
        let sol = reflect(&tandem(), &x).unwrap();
        assert!((sol.terminal_content()[1] - 1.0).abs() < 1e-14);
        assert!(sol.terminal_content()[0].abs() < 1e-14);
    }

    #[test]
    fn negative_origin_is_pushed_to_zero() {
        let x = VectorPath::new(vec![StepDriftPath::new(1.0, 1.0, -2.0, []).unwrap()]).unwrap();
        let sol = reflect(&one_dim(), &x).unwrap();
        assert_eq!(sol.content_at(0), &[0.0]);
        assert_eq!(sol.regulator_at(0), &[2.0]);
        assert!((sol.terminal_content()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = path(1.0, &[(-1.0, &[])]);
        assert!(matches!(
            reflect(&tandem(), &x),
            Err(ReflectionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn oracle_trivial_case() {
        let x = path(1.0, &[(-1.0, &[])]);
        let o = reflect_fixedpoint_oracle(&one_dim(), &x, 1000).unwrap();
        let y1 = o.terminal_regulator()[0];
        assert!((1.0 - 2e-3..=1.0).contains(&y1), "{y1}");
        assert!(reflect_fixedpoint_oracle(&one_dim(), &x, 1).is_err());
    }

    #[test]
    fn oracle_nonnegative_input_needs_no_regulation() {
        let x = path(1.0, &[(0.5, &[(0.3, 1.0)]), (0.0, &[])]);
        let o = reflect_fixedpoint_oracle(&tandem(), &x, 250).unwrap();
        assert!(o.y.iter().flatten().all(|&v| v == 0.0));
        let exact = reflect(&tandem(), &x).unwrap();
        assert!(exact.regulator().iter().all(|p| p.knots().iter().all(|k| k.right == 0.0)));
    }

    #[test]
    fn oracle_matches_tandem() {
        let x = path(1.0, &[(-2.0, &[(0.2, 1.5)]), (1.0, &[(0.7, 0.4)])]);
        let exact = reflect(&tandem(), &x).unwrap();
        let o = reflect_fixedpoint_oracle(&tandem(), &x, 1000).unwrap();
        assert!(o.sup_difference(&exact) <= 4.0 * 3.0 / 1000.0);
    }

    #[test]
    fn tandem_formula_examples() {
        let base = TandemInput {
            rates: [3.0, 3.0],
            mu: [1.0, 1.0],
            jump_sizes: [0.0, 0.0],
            jump_times: [0.0, 1.0],
            horizon: 1.0,
        };
        let stable = TandemInput {
            rates: [3.0, 5.0],
            ..base
        };
        assert_eq!(tandem_z2_terminal(&stable).unwrap(), 0.0);

        let p = TandemInput {
            jump_sizes: [2.0, 1.0],
            jump_times: [0.0, 1.0],
            ..base
        };
        assert!((tandem_z2_terminal(&p).unwrap() - 2.0).abs() < 1e-14);

        // Optimal node-1 timing u₁ = T − x₁/(r₁ − μ₁).
        for &(x1, x2) in &[(0.5, 0.0), (1.0, 0.3), (2.0, 0.0)] {
            let p = TandemInput {
                jump_sizes: [x1, x2],
                jump_times: [1.0 - x1 / 2.0, 1.0],
                ..base
            };
            let expected = x2 + (3.0 + 1.0 - 3.0_f64).max(0.0) * x1 / 2.0;
            assert!((tandem_z2_terminal(&p).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn tandem_formula_agrees_with_reflect() {
        let cases = [
            ([3.0, 3.0], [1.0, 1.0], [2.0, 1.0], [0.0, 1.0]),
            ([3.0, 3.0], [1.0, 1.0], [1.0, 0.5], [0.3, 0.6]),
            ([2.0, 2.5], [0.5, 1.0], [3.0, 0.2], [0.1, 0.05]),
            ([1.0, 4.0], [0.5, 1.0], [0.7, 0.0], [0.9, 0.0]),
        ];
        for (rates, mu, sizes, times) in cases {
            let p = TandemInput {
                rates,
                mu,
                jump_sizes: sizes,
                jump_times: times,
                horizon: 1.0,
            };
            let drift = [mu[0] - rates[0], mu[1] - rates[1] + rates[0]];
            let x = path(
                1.0,
                &[(drift[0], &[(times[0], sizes[0])]), (drift[1], &[(times[1], sizes[1])])],
            );
            let z = reflect_terminal(&tandem(), &x).unwrap();
            assert!((z[1] - tandem_z2_terminal(&p).unwrap()).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn consolidation_examples() {
        let x = path(1.0, &[(0.0, &[(0.2, 1.0), (0.6, 1.0)])]);
        let c = consolidate_jumps(&x);
        assert_eq!(c.coord(0).jumps().len(), 1);
        assert_eq!(c.coord(0).jumps()[0].time, 0.6);
        assert_eq!(c.coord(0).jumps()[0].size, 2.0);
        let one = path(1.0, &[(-1.0, &[(0.3, 1.0)])]);
        assert_eq!(consolidate_jumps(&one), one);
        let none = path(1.0, &[(-1.0, &[])]);
        assert_eq!(consolidate_jumps(&none), none);
    }

    #[test]
    fn terminal_jump_examples() {
        let x = path(1.0, &[(-2.0, &[]), (1.0, &[])]);
        assert_eq!(append_terminal_jump(&x, &[0.0, 0.0]).unwrap(), x);
        let z = append_terminal_jump(&x, &[0.0, 1.0]).unwrap();
        let (a, b) = (reflect(&tandem(), &x).unwrap(), reflect(&tandem(), &z).unwrap());
        assert_eq!(a.terminal_regulator(), b.terminal_regulator());
        assert!((b.terminal_content()[1] - a.terminal_content()[1] - 1.0).abs() < 1e-14);
        assert!(append_terminal_jump(&x, &[-1.0, 0.0]).is_err());
    }

    #[test]
    fn segments_respect_complementarity() {
        let x = path(2.0, &[(-2.0, &[(0.2, 1.5), (1.1, 0.5)]), (1.0, &[(0.7, 0.4)])]);
        let sol = reflect(&tandem(), &x).unwrap();
        for seg in sol.segments() {
            for i in 0..2 {
                if seg.regulator_slope[i] > 0.0 {
                    assert!(seg.empty.contains(&i));
                    assert_eq!(seg.content_slope[i], 0.0);
                }
            }
        }
    }
}
