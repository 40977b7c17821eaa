//! Drift-plus-jump càdlàg paths and the metrics used to compare them.
//!
//! A [`StepDriftPath`] is `origin + drift·t + Σ_{u_j ≤ t} x_j` on `[0, T]` with
//! nonnegative jumps. Everything is evaluated in closed form on breakpoints;
//! there is no time grid anywhere in this module.
//!
//! Reflected contents are no longer of that form (their drift changes at
//! regime switches), so the metrics are implemented on the more general
//! [`PiecewiseLinear`] representation and the step paths convert into it.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Jumps smaller than this are dropped at construction.
pub const MIN_JUMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("horizon mismatch: {0} vs {1}")]
    HorizonMismatch(f64, f64),
    #[error("line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, PathError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// One coordinate: linear drift plus finitely many nonnegative jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDriftPath {
    horizon: f64,
    drift: f64,
    origin: f64,
    jumps: Vec<Jump>,
}

impl StepDriftPath {
    /// Builds a path, sorting jumps, merging coincident epochs and dropping
    /// jumps below [`MIN_JUMP`].
    pub fn new(
        horizon: f64,
        drift: f64,
        origin: f64,
        jumps: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(PathError::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if !drift.is_finite() || !origin.is_finite() {
            return Err(PathError::Domain("drift and origin must be finite".into()));
        }
        let mut raw: Vec<Jump> = Vec::new();
        for (time, size) in jumps {
            if !time.is_finite() || !(0.0..=horizon).contains(&time) {
                return Err(PathError::Domain(format!(
                    "jump time {time} outside [0, {horizon}]"
                )));
            }
            if !size.is_finite() || size < 0.0 {
                return Err(PathError::Domain(format!("jump size {size} must be nonnegative")));
            }
            raw.push(Jump { time, size });
        }
        raw.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut merged: Vec<Jump> = Vec::with_capacity(raw.len());
        for j in raw {
            match merged.last_mut() {
                Some(last) if last.time == j.time => last.size += j.size,
                _ => merged.push(j),
            }
        }
        merged.retain(|j| j.size >= MIN_JUMP);
        Ok(Self {
            horizon,
            drift,
            origin,
            jumps: merged,
        })
    }

    pub fn drift_only(horizon: f64, drift: f64) -> Result<Self> {
        Self::new(horizon, drift, 0.0, std::iter::empty())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn jump_mass(&self) -> f64 {
        self.jumps.iter().map(|j| j.size).sum()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(PathError::Domain(format!("t = {t} outside [0, {}]", self.horizon)))
        }
    }

    /// Right-continuous value at `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let mass: f64 = self.jumps.iter().take_while(|j| j.time <= t).map(|j| j.size).sum();
        Ok(self.origin + self.drift * t + mass)
    }

    /// Left limit at `t`; at `t = 0` this is the origin.
    pub fn eval_left(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let mass: f64 = self.jumps.iter().take_while(|j| j.time < t).map(|j| j.size).sum();
        Ok(self.origin + self.drift * t + mass)
    }

    pub fn terminal(&self) -> f64 {
        self.origin + self.drift * self.horizon + self.jump_mass()
    }

    /// The same path with drift reduced by `kappa`.
    pub fn shifted(&self, kappa: f64) -> Self {
        Self {
            drift: self.drift - kappa,
            ..self.clone()
        }
    }

    pub fn to_piecewise(&self) -> PiecewiseLinear {
        let mut knots = Vec::with_capacity(self.jumps.len() + 2);
        let at = |t: f64, mass: f64| self.origin + self.drift * t + mass;
        let first_at_zero = self.jumps.first().filter(|j| j.time == 0.0).map(|j| j.size);
        let zero_jump = first_at_zero.unwrap_or(0.0);
        knots.push(Knot {
            t: 0.0,
            left: self.origin,
            right: self.origin + zero_jump,
        });
        let mut mass = zero_jump;
        for j in self.jumps.iter().filter(|j| j.time > 0.0) {
            let left = at(j.time, mass);
            mass += j.size;
            knots.push(Knot {
                t: j.time,
                left,
                right: left + j.size,
            });
        }
        if knots.last().map(|k| k.t) != Some(self.horizon) {
            let v = at(self.horizon, mass);
            knots.push(Knot {
                t: self.horizon,
                left: v,
                right: v,
            });
        }
        PiecewiseLinear {
            horizon: self.horizon,
            knots,
        }
    }
}

/// `d` coordinates sharing one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPath {
    coords: Vec<StepDriftPath>,
}

impl VectorPath {
    pub fn new(coords: Vec<StepDriftPath>) -> Result<Self> {
        let first = coords
            .first()
            .ok_or_else(|| PathError::Domain("a vector path needs at least one coordinate".into()))?;
        let horizon = first.horizon;
        if let Some(bad) = coords.iter().find(|c| c.horizon != horizon) {
            return Err(PathError::HorizonMismatch(horizon, bad.horizon));
        }
        Ok(Self { coords })
    }

    /// Pure drift path with the given per-coordinate drifts.
    pub fn from_drifts(horizon: f64, drifts: &[f64]) -> Result<Self> {
        Self::new(
            drifts
                .iter()
                .map(|&a| StepDriftPath::drift_only(horizon, a))
                .collect::<Result<_>>()?,
        )
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn horizon(&self) -> f64 {
        self.coords[0].horizon
    }

    pub fn coords(&self) -> &[StepDriftPath] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &StepDriftPath {
        &self.coords[i]
    }

    pub fn into_coords(self) -> Vec<StepDriftPath> {
        self.coords
    }

    pub fn drifts(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.drift).collect()
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.coords.iter().map(|c| c.eval(t)).collect()
    }

    pub fn eval_left(&self, t: f64) -> Result<Vec<f64>> {
        self.coords.iter().map(|c| c.eval_left(t)).collect()
    }

    /// Sorted, deduplicated jump epochs across all coordinates.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .coords
            .iter()
            .flat_map(|c| c.jumps.iter().map(|j| j.time))
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    pub fn to_piecewise(&self) -> Vec<PiecewiseLinear> {
        self.coords.iter().map(StepDriftPath::to_piecewise).collect()
    }
}

/// `Υ_κ(ξ)(t) = ξ(t) − κ t`: jumps untouched, drifts reduced by `kappa`.
pub fn drift_shift(path: &VectorPath, kappa: &[f64]) -> Result<VectorPath> {
    if kappa.len() != path.dim() {
        return Err(PathError::DimensionMismatch {
            expected: path.dim(),
            got: kappa.len(),
        });
    }
    Ok(VectorPath {
        coords: path
            .coords
            .iter()
            .zip(kappa)
            .map(|(c, &k)| c.shifted(k))
            .collect(),
    })
}

/// Coordinate-wise value at the horizon (a jump at `T` is included).
pub fn terminal(path: &VectorPath) -> Vec<f64> {
    path.coords.iter().map(StepDriftPath::terminal).collect()
}

fn check_pair(a: &VectorPath, b: &VectorPath) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(PathError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.horizon() != b.horizon() {
        return Err(PathError::HorizonMismatch(a.horizon(), b.horizon()));
    }
    Ok(())
}

/// Max over coordinates of the sup-norm difference, exact on the merged breakpoints.
pub fn uniform_distance(a: &VectorPath, b: &VectorPath) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| sup_distance(&x.to_piecewise(), &y.to_piecewise()))
        .fold(0.0, f64::max))
}

/// Certified upper bound on the J1 distance between two coordinates.
pub fn j1_distance_upper(a: &StepDriftPath, b: &StepDriftPath) -> f64 {
    j1_upper(&a.to_piecewise(), &b.to_piecewise())
}

/// Sum of per-coordinate J1 upper bounds.
pub fn product_j1_upper(a: &VectorPath, b: &VectorPath) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| j1_distance_upper(x, y))
        .sum())
}

/// Sum of per-coordinate J1 upper bounds for general piecewise-linear paths.
pub fn product_j1_upper_piecewise(a: &[PiecewiseLinear], b: &[PiecewiseLinear]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PathError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| j1_upper(x, y)).sum())
}

// ---------------------------------------------------------------------------
// Piecewise-linear càdlàg paths
// ---------------------------------------------------------------------------

/// A breakpoint: left limit and value at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub left: f64,
    pub right: f64,
}

/// Càdlàg path that is linear between knots. The first knot sits at 0 and
/// the last at the horizon; on `(t_k, t_{k+1})` the path runs linearly from
/// `knots[k].right` to `knots[k+1].left`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    horizon: f64,
    knots: Vec<Knot>,
}

impl PiecewiseLinear {
    pub fn from_knots(horizon: f64, knots: Vec<Knot>) -> Result<Self> {
        if knots.len() < 2 && !(knots.len() == 1 && horizon == 0.0) {
            return Err(PathError::Domain("need knots at 0 and at the horizon".into()));
        }
        if knots[0].t != 0.0 || knots[knots.len() - 1].t != horizon {
            return Err(PathError::Domain("knots must start at 0 and end at the horizon".into()));
        }
        if knots.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(PathError::Domain("knot times must be strictly increasing".into()));
        }
        Ok(Self { horizon, knots })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Index `k` of the segment `[t_k, t_{k+1})` containing `t`.
    fn segment(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.t.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn interp(&self, k: usize, t: f64) -> f64 {
        let (a, b) = (self.knots[k], self.knots[k + 1]);
        let w = (t - a.t) / (b.t - a.t);
        a.right + (b.left - a.right) * w
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        if let Ok(i) = self.knots.binary_search_by(|k| k.t.total_cmp(&t)) {
            return self.knots[i].right;
        }
        self.interp(self.segment(t), t)
    }

    pub fn eval_left(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        if let Ok(i) = self.knots.binary_search_by(|k| k.t.total_cmp(&t)) {
            return self.knots[i].left;
        }
        self.interp(self.segment(t), t)
    }

    pub fn terminal(&self) -> f64 {
        self.knots[self.knots.len() - 1].right
    }

    /// Jump epochs with sizes `(t, right − left)`, zero-size ones omitted.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        self.knots
            .iter()
            .filter(|k| k.right != k.left)
            .map(|k| (k.t, k.right - k.left))
            .collect()
    }

    /// `self ∘ λ`: knots at the deformation's own breakpoints and at the
    /// preimages of this path's knots.
    pub fn compose(&self, lambda: &TimeDeformation) -> PiecewiseLinear {
        let mut times: Vec<f64> = lambda.points.iter().map(|p| p.0).collect();
        times.extend(self.knots.iter().map(|k| lambda.inverse(k.t)));
        times.sort_by(f64::total_cmp);
        times.dedup();
        let knots = times
            .into_iter()
            .map(|s| {
                let t = lambda.apply(s);
                Knot {
                    t: s,
                    left: if s == 0.0 { self.knots[0].left } else { self.eval_left(t) },
                    right: self.eval(t),
                }
            })
            .collect();
        PiecewiseLinear {
            horizon: self.horizon,
            knots,
        }
    }
}

/// Sup-norm of `a − b` over `[0, T]`, attained at a merged breakpoint or a
/// one-sided limit there.
pub fn sup_distance(a: &PiecewiseLinear, b: &PiecewiseLinear) -> f64 {
    let mut times: Vec<f64> = a.knots.iter().chain(&b.knots).map(|k| k.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.iter().fold(0.0_f64, |acc, &t| {
        let right = (a.eval(t) - b.eval(t)).abs();
        let left = if t > 0.0 {
            (a.eval_left(t) - b.eval_left(t)).abs()
        } else {
            0.0
        };
        acc.max(right).max(left)
    })
}

// ---------------------------------------------------------------------------
// Time deformations and the J1 surrogate
// ---------------------------------------------------------------------------

/// Strictly increasing piecewise-linear homeomorphism of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDeformation {
    points: Vec<(f64, f64)>,
}

impl TimeDeformation {
    pub fn identity(horizon: f64) -> Self {
        Self {
            points: vec![(0.0, 0.0), (horizon, horizon)],
        }
    }

    /// Interior matches `(s, λ(s))`; the endpoints are added.
    pub fn through(horizon: f64, interior: &[(f64, f64)]) -> Result<Self> {
        let mut points = Vec::with_capacity(interior.len() + 2);
        points.push((0.0, 0.0));
        points.extend_from_slice(interior);
        points.push((horizon, horizon));
        points.dedup();
        if points
            .windows(2)
            .any(|w| !(w[0].0 < w[1].0 && w[0].1 < w[1].1))
        {
            return Err(PathError::Domain("time deformation must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn apply(&self, s: f64) -> f64 {
        interpolate(&self.points, s, |p| p.0, |p| p.1)
    }

    pub fn inverse(&self, t: f64) -> f64 {
        interpolate(&self.points, t, |p| p.1, |p| p.0)
    }

    /// `‖λ − e‖∞`, attained at a breakpoint.
    pub fn sup_deviation(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max((p.1 - p.0).abs()))
    }
}

fn interpolate(
    points: &[(f64, f64)],
    x: f64,
    key: impl Fn(&(f64, f64)) -> f64,
    val: impl Fn(&(f64, f64)) -> f64,
) -> f64 {
    let last = points.len() - 1;
    if x <= key(&points[0]) {
        return val(&points[0]);
    }
    if x >= key(&points[last]) {
        return val(&points[last]);
    }
    let i = points.partition_point(|p| key(p) <= x) - 1;
    let (p, q) = (&points[i], &points[i + 1]);
    if key(p) == x {
        return val(p);
    }
    let w = (x - key(p)) / (key(q) - key(p));
    val(p) + (val(q) - val(p)) * w
}

/// Deformations `λ` mapping jumps of `b` onto jumps of `a`, so that `a ∘ λ`
/// jumps where `b` does.
fn candidate_deformations(a: &PiecewiseLinear, b: &PiecewiseLinear) -> Vec<TimeDeformation> {
    let horizon = a.horizon;
    let ta: Vec<f64> = a.jumps().iter().map(|j| j.0).collect();
    let tb: Vec<f64> = b.jumps().iter().map(|j| j.0).collect();
    let movable = |s: f64, t: f64| {
        let interior = |x: f64| x > 0.0 && x < horizon;
        s == t || (interior(s) && interior(t))
    };
    let mut out = vec![TimeDeformation::identity(horizon)];
    let mut push = |pairs: Vec<(f64, f64)>| {
        if pairs.iter().all(|&(s, t)| movable(s, t)) {
            let interior: Vec<(f64, f64)> = pairs
                .into_iter()
                .filter(|&(s, _)| s > 0.0 && s < horizon)
                .collect();
            if let Ok(lambda) = TimeDeformation::through(horizon, &interior) {
                out.push(lambda);
            }
        }
    };
    for &t in &ta {
        for &s in &tb {
            push(vec![(s, t)]);
        }
    }
    let k = ta.len().min(tb.len());
    if k > 0 {
        // Rank matching from the front and from the back.
        push(tb.iter().zip(&ta).map(|(&s, &t)| (s, t)).collect());
        push(
            tb.iter()
                .rev()
                .zip(ta.iter().rev())
                .map(|(&s, &t)| (s, t))
                .rev()
                .collect(),
        );
    }
    out
}

fn one_sided_upper(a: &PiecewiseLinear, b: &PiecewiseLinear) -> f64 {
    candidate_deformations(a, b)
        .iter()
        .map(|lambda| sup_distance(&a.compose(lambda), b).max(lambda.sup_deviation()))
        .fold(f64::INFINITY, f64::min)
}

/// Certified J1 upper bound: the best of a finite family of deformations,
/// tried in both directions.
pub fn j1_upper(a: &PiecewiseLinear, b: &PiecewiseLinear) -> f64 {
    one_sided_upper(a, b).min(one_sided_upper(b, a))
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

impl fmt::Display for VectorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "T={}", self.horizon())?;
        for c in &self.coords {
            let jumps: Vec<String> = c
                .jumps
                .iter()
                .map(|j| format!("({},{})", j.time, j.size))
                .collect();
            writeln!(f, "drift={}; origin={}; jumps={}", c.drift, c.origin, jumps.join(","))?;
        }
        Ok(())
    }
}

fn parse_err(line: usize, column: usize, msg: impl Into<String>) -> PathError {
    PathError::Parse {
        line,
        column,
        msg: msg.into(),
    }
}

fn parse_num(s: &str, line: usize, column: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, column, format!("expected a number, found `{}`", s.trim())))
}

fn parse_jumps(spec: &str, line: usize, column: usize) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut rest = spec;
    let mut offset = column;
    loop {
        let trimmed = rest.trim_start();
        offset += rest.len() - trimmed.len();
        rest = trimmed;
        if rest.is_empty() {
            return Ok(out);
        }
        if !rest.starts_with('(') {
            return Err(parse_err(line, offset, "expected `(` to open a jump"));
        }
        let close = rest
            .find(')')
            .ok_or_else(|| parse_err(line, offset, "unterminated jump, missing `)`"))?;
        let inner = &rest[1..close];
        let (u, x) = inner
            .split_once(',')
            .ok_or_else(|| parse_err(line, offset + 1, "jump must be `(time,size)`"))?;
        out.push((
            parse_num(u, line, offset + 1)?,
            parse_num(x, line, offset + 2 + u.len())?,
        ));
        offset += close + 1;
        rest = &rest[close + 1..];
        let trimmed = rest.trim_start();
        offset += rest.len() - trimmed.len();
        rest = trimmed;
        if let Some(r) = rest.strip_prefix(',') {
            rest = r;
            offset += 1;
        }
    }
}

impl FromStr for VectorPath {
    type Err = PathError;

    fn from_str(text: &str) -> Result<Self> {
        let mut horizon: Option<f64> = None;
        let mut coords = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let lead = content.len() - content.trim_start().len();
            let content = content.trim();
            if horizon.is_none() {
                let value = content
                    .strip_prefix("T=")
                    .or_else(|| content.strip_prefix("T ="))
                    .ok_or_else(|| parse_err(line, lead + 1, "expected header `T=<horizon>`"))?;
                horizon = Some(parse_num(value, line, lead + 3)?);
                continue;
            }
            let (mut drift, mut origin, mut jumps) = (None, 0.0, Vec::new());
            let mut col = lead + 1;
            for field in content.split(';') {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| parse_err(line, col, "expected `key=value`"))?;
                let vcol = col + key.len() + 1;
                match key.trim() {
                    "drift" => drift = Some(parse_num(value, line, vcol)?),
                    "origin" => origin = parse_num(value, line, vcol)?,
                    "jumps" => jumps = parse_jumps(value, line, vcol)?,
                    other => return Err(parse_err(line, col, format!("unknown key `{other}`"))),
                }
                col += field.len() + 1;
            }
            let drift = drift.ok_or_else(|| parse_err(line, lead + 1, "missing `drift=`"))?;
            let t = horizon.unwrap_or_default();
            coords.push(
                StepDriftPath::new(t, drift, origin, jumps)
                    .map_err(|e| parse_err(line, lead + 1, e.to_string()))?,
            );
        }
        if horizon.is_none() {
            return Err(parse_err(1, 1, "empty path file"));
        }
        VectorPath::new(coords)
    }
}
