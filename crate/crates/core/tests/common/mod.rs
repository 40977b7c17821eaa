//! Generators and property suites shared by `properties` (small case counts)
//! and `acceptance` (1000 cases each).

#![allow(dead_code)]

use fluidnet::network::{FluidNetwork, ReflectionMatrix, TailMultiplier};
use fluidnet::paths::{
    drift_shift, product_j1_upper, terminal, uniform_distance, StepDriftPath, VectorPath,
};
use fluidnet::ratefn::{holder_bound, rate_of_path, solve_overflow, OverflowProblem, SolverOptions};
use fluidnet::reflection::{append_terminal_jump, consolidate_jumps, reflect, ReflectionSolution};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRng, TestRunner};

pub const HORIZON: f64 = 1.0;

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Zero-diagonal routing with row sums at most 0.9.
pub fn routing(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (
        prop::collection::vec(0.0..1.0f64, d * d),
        prop::collection::vec(0.0..0.9f64, d),
        prop::collection::vec(any::<bool>(), d * d),
    )
        .prop_map(move |(w, mass, keep)| {
            (0..d)
                .map(|i| {
                    let mut row: Vec<f64> = (0..d)
                        .map(|j| if i == j || !keep[i * d + j] { 0.0 } else { w[i * d + j] })
                        .collect();
                    let s: f64 = row.iter().sum();
                    if s > 0.0 {
                        for v in &mut row {
                            *v *= mass[i] / s;
                        }
                    }
                    row
                })
                .collect()
        })
}

/// Validated network on `1..=max_d` nodes; the input rates are scaled so that
/// every node runs at most at 80% of its service rate.
pub fn network(max_d: usize) -> impl Strategy<Value = FluidNetwork> {
    (1..=max_d)
        .prop_flat_map(|d| {
            (
                routing(d),
                prop::collection::vec(0.5..4.0f64, d),
                prop::collection::vec(0.05..1.0f64, d),
                prop::collection::vec(any::<bool>(), d),
                prop::collection::vec(0.2..2.0f64, d),
                0.2..0.9f64,
            )
        })
        .prop_map(|(q, r, load, exo, c, alpha)| build_network(q, r, load, exo, c, alpha))
        .prop_filter("validated", |n| n.validate().passed())
}

pub fn build_network(
    q: Vec<Vec<f64>>,
    r: Vec<f64>,
    load: Vec<f64>,
    mut exo: Vec<bool>,
    c: Vec<f64>,
    alpha: f64,
) -> FluidNetwork {
    let d = r.len();
    if !exo.iter().any(|&e| e) {
        exo[0] = true;
    }
    let mut mu: Vec<f64> = (0..d).map(|i| if exo[i] { load[i] * r[i] } else { 0.0 }).collect();
    let c: Vec<f64> = (0..d).map(|i| if exo[i] { c[i] } else { 0.0 }).collect();
    let probe = FluidNetwork::new(q.clone(), r.clone(), mu.clone(), exo.clone(), c.clone(), alpha, TailMultiplier::Constant)
        .expect("shapes");
    let refl = probe.reflection_matrix().expect("substochastic");
    let lambda = refl.inverse().mul_vec(&mu);
    let worst = (0..d).map(|i| lambda[i] / (0.8 * r[i])).fold(0.0, f64::max);
    if worst > 1.0 {
        for m in &mut mu {
            *m /= worst;
        }
    }
    FluidNetwork::new(q, r, mu, exo, c, alpha, TailMultiplier::Constant).expect("shapes")
}

fn jump_time() -> impl Strategy<Value = f64> {
    // Lattice times make coincident epochs across coordinates likely.
    prop_oneof![0.0..=HORIZON, (0..=8u32).prop_map(|k| HORIZON * k as f64 / 8.0)]
}

pub fn jumps(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((jump_time(), 0.0..2.0f64), 0..=max)
}

/// A coordinate with the given drift and up to `max` jumps.
pub fn coord(drift: f64, js: Vec<(f64, f64)>) -> StepDriftPath {
    StepDriftPath::new(HORIZON, drift, 0.0, js).expect("valid coordinate")
}

/// Random path of dimension `d` with drifts in `[-3, 3]`.
pub fn path(d: usize, max_jumps: usize) -> impl Strategy<Value = VectorPath> {
    prop::collection::vec((-3.0..3.0f64, jumps(max_jumps)), d).prop_map(|cs| {
        VectorPath::new(cs.into_iter().map(|(a, j)| coord(a, j)).collect()).expect("common horizon")
    })
}

pub fn network_and_path(max_d: usize, max_jumps: usize) -> impl Strategy<Value = (FluidNetwork, VectorPath)> {
    network(max_d).prop_flat_map(move |net| {
        let d = net.dim();
        (Just(net), path(d, max_jumps))
    })
}

/// Path in the effective domain of the rate function: drifts `μ − 𝒬r`, jumps
/// only on exogenous nodes.
pub fn domain_path(net: &FluidNetwork, js: &[Vec<(f64, f64)>]) -> VectorPath {
    let drift = net.fluid_drift();
    VectorPath::new(
        (0..net.dim())
            .map(|i| coord(drift[i], if net.is_exogenous(i) { js[i].clone() } else { vec![] }))
            .collect(),
    )
    .expect("common horizon")
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: u32,
    pub failure: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs `cases` deterministic proptest cases; a failure is shrunk and reported.
pub fn run_suite<S, F>(name: &'static str, cases: u32, strategy: S, test: F) -> SuiteResult
where
    S: Strategy,
    S::Value: std::fmt::Debug,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    let config = Config {
        cases,
        failure_persistence: None,
        max_shrink_iters: 2_000,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    let mut runner = TestRunner::new_with_rng(config, rng);
    let failure = match runner.run(&strategy, test) {
        Ok(()) => None,
        Err(TestError::Fail(reason, value)) => Some(format!("{reason}; minimal input: {value:?}")),
        Err(TestError::Abort(reason)) => Some(format!("aborted: {reason}")),
    };
    SuiteResult { name, cases, failure }
}

fn regulator_at(sol: &ReflectionSolution, t: f64) -> Vec<f64> {
    sol.regulator_at_time(t)
}

/// Breakpoints of both solutions plus midpoints.
fn probe_times(a: &ReflectionSolution, b: &ReflectionSolution) -> Vec<f64> {
    let mut ts: Vec<f64> = a.times().iter().chain(b.times()).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mids: Vec<f64> = ts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    ts.extend(mids);
    ts
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// `ξ ≤ ζ` pointwise implies `ψ(ξ) ≥ ψ(ζ)`.
pub fn psi_monotone(cases: u32) -> SuiteResult {
    let strategy = network_and_path(4, 5).prop_flat_map(|(net, x)| {
        let d = net.dim();
        (
            Just(net),
            Just(x),
            prop::collection::vec((-1.0..1.0f64, 0.0..1.0f64, jumps(3)), d),
        )
    });
    run_suite("psi monotonicity", cases, strategy, |(net, x, extra)| {
        let refl = net.reflection_matrix().unwrap();
        // ζ − ξ = Δorigin + Δdrift·t + added jumps ≥ 0 on [0, T].
        let zeta = VectorPath::new(
            x.coords()
                .iter()
                .zip(&extra)
                .map(|(c, (dd, slack, js))| {
                    let origin = (-dd * HORIZON).max(0.0) + slack;
                    let mut all: Vec<(f64, f64)> = c.jumps().iter().map(|j| (j.time, j.size)).collect();
                    all.extend(js.iter().copied());
                    StepDriftPath::new(HORIZON, c.drift() + dd, c.origin() + origin, all).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let a = reflect(&refl, &x).unwrap();
        let b = reflect(&refl, &zeta).unwrap();
        for t in probe_times(&a, &b) {
            let (ya, yb) = (regulator_at(&a, t), regulator_at(&b, t));
            for i in 0..net.dim() {
                prop_assert!(ya[i] >= yb[i] - 1e-9, "t = {t}, node {i}: ψ(ξ) = {} < ψ(ζ) = {}", ya[i], yb[i]);
            }
        }
        Ok(())
    })
}

/// `ψ` is continuous and `φ` jumps exactly where and as much as the input.
pub fn jump_propagation(cases: u32) -> SuiteResult {
    run_suite("jump propagation", cases, network_and_path(4, 5), |(net, x)| {
        let refl = net.reflection_matrix().unwrap();
        let sol = reflect(&refl, &x).unwrap();
        for (i, y) in sol.regulator().iter().enumerate() {
            prop_assert!(y.jumps().is_empty(), "regulator {i} jumps: {:?}", y.jumps());
        }
        for (i, z) in sol.content().iter().enumerate() {
            let got = z.jumps();
            let want = x.coord(i).jumps();
            prop_assert_eq!(got.len(), want.len(), "node {}: {:?} vs {:?}", i, got, want);
            for ((t, s), j) in got.iter().zip(want) {
                prop_assert!(*t == j.time, "node {i}: jump at {t}, input at {}", j.time);
                prop_assert!((s - j.size).abs() <= 1e-12 * (1.0 + j.size), "node {i}: size {s} vs {}", j.size);
            }
        }
        Ok(())
    })
}

/// `φ(consolidate(ξ))(T) ≥ φ(ξ)(T)` coordinatewise.
pub fn consolidation_dominance(cases: u32) -> SuiteResult {
    run_suite("consolidation dominance of φ(T)", cases, network_and_path(4, 5), |(net, x)| {
        let refl = net.reflection_matrix().unwrap();
        let before = reflect(&refl, &x).unwrap();
        let after = reflect(&refl, &consolidate_jumps(&x)).unwrap();
        for i in 0..net.dim() {
            let (a, b) = (after.terminal_content()[i], before.terminal_content()[i]);
            prop_assert!(a >= b - 1e-9, "node {i}: φ(consolidated)(T) = {a} < φ(ξ)(T) = {b}");
        }
        Ok(())
    })
}

/// `ψ(T)` and `𝒬⁻¹φ(T)` can only grow under consolidation, since the
/// consolidated path lies below the original with the same terminal value.
pub fn consolidation_regulator(cases: u32) -> SuiteResult {
    run_suite("consolidation dominance of ψ(T) and 𝒬⁻¹φ(T)", cases, network_and_path(4, 5), |(net, x)| {
        let refl = net.reflection_matrix().unwrap();
        let before = reflect(&refl, &x).unwrap();
        let after = reflect(&refl, &consolidate_jumps(&x)).unwrap();
        let inv = refl.inverse();
        let (wa, wb) = (inv.mul_vec(after.terminal_content()), inv.mul_vec(before.terminal_content()));
        for i in 0..net.dim() {
            let (ya, yb) = (after.terminal_regulator()[i], before.terminal_regulator()[i]);
            prop_assert!(ya >= yb - 1e-9, "node {i}: ψ {ya} < {yb}");
            prop_assert!(wa[i] >= wb[i] - 1e-9, "node {i}: 𝒬⁻¹φ {} < {}", wa[i], wb[i]);
        }
        Ok(())
    })
}

/// `I(consolidate(ξ)) ≤ I(ξ)` on the effective domain.
pub fn consolidation_rate(cases: u32) -> SuiteResult {
    let strategy = network(4).prop_flat_map(|net| {
        let d = net.dim();
        (Just(net), prop::collection::vec(jumps(5), d))
    });
    run_suite("consolidation rate decrease", cases, strategy, |(net, js)| {
        let x = domain_path(&net, &js);
        let (a, b) = (rate_of_path(&net, &consolidate_jumps(&x)), rate_of_path(&net, &x));
        prop_assert!(a.is_finite() && b.is_finite());
        prop_assert!(a <= b + 1e-12 * (1.0 + b), "rate {a} > {b}");
        Ok(())
    })
}

/// Appending `a 𝟙_{T}` to a one-jump path: `ψ` unchanged, `φ(T)` gains `a`,
/// the rate grows by at most `Σ c_i a_i^α`.
pub fn append_terminal(cases: u32) -> SuiteResult {
    let strategy = network(4).prop_flat_map(|net| {
        let d = net.dim();
        (
            Just(net),
            prop::collection::vec(jumps(1), d),
            prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64], d),
        )
    });
    run_suite("append-terminal-jump identities", cases, strategy, |(net, js, a)| {
        let x = domain_path(&net, &js);
        let a: Vec<f64> = (0..net.dim()).map(|i| if net.is_exogenous(i) { a[i] } else { 0.0 }).collect();
        let z = append_terminal_jump(&x, &a).unwrap();
        let refl = net.reflection_matrix().unwrap();
        let (sx, sz) = (reflect(&refl, &x).unwrap(), reflect(&refl, &z).unwrap());
        for t in probe_times(&sx, &sz) {
            let (p, q) = (sx.regulator_at_time(t), sz.regulator_at_time(t));
            for i in 0..net.dim() {
                prop_assert!((p[i] - q[i]).abs() <= 1e-9, "(i) t = {t}, node {i}: ψ {} vs {}", p[i], q[i]);
            }
        }
        for i in 0..net.dim() {
            let want = sx.terminal_content()[i] + a[i];
            let got = sz.terminal_content()[i];
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "(ii) node {i}: {got} vs {want}");
        }
        let extra: f64 = (0..net.dim()).map(|i| net.c()[i] * a[i].powf(net.alpha())).sum();
        let (rz, rx) = (rate_of_path(&net, &z), rate_of_path(&net, &x));
        prop_assert!(rz <= rx + extra + 1e-12, "(iii) {rz} > {rx} + {extra}");
        Ok(())
    })
}

pub fn holder_options() -> SolverOptions {
    SolverOptions {
        grid: 7,
        grid_budget: 2_500,
        starts: 4,
        step_tol: 1e-8,
    }
}

/// `|V̂(y1) − V̂(y2)| ≤ max c_i / b_i^α |y1 − y2|^α` up to solver tolerance.
pub fn holder(cases: u32) -> SuiteResult {
    let strategy = (
        network(2),
        prop::collection::vec(prop_oneof![Just(0.0), 0.1..2.0f64], 2),
        0.05..3.0f64,
        0.05..3.0f64,
    );
    run_suite("Hölder bound", cases, strategy, |(net, b, y1, y2)| {
        let mut b = b[..net.dim()].to_vec();
        // Put weight on an exogenous node so the bound is finite.
        let e = net.exogenous_nodes()[0];
        if b[e] == 0.0 {
            b[e] = 1.0;
        }
        let p1 = OverflowProblem::new(net.clone(), b.clone(), y1, HORIZON).unwrap();
        let p2 = p1.with_threshold(y2).unwrap();
        let v1 = solve_overflow(&p1, &holder_options()).unwrap();
        let v2 = solve_overflow(&p2, &holder_options()).unwrap();
        prop_assert!(v1.feasible && v2.feasible);
        let bound = holder_bound(&p1, y1, y2);
        let tol = 1e-6 * (1.0 + v1.value.max(v2.value));
        prop_assert!(
            (v1.value - v2.value).abs() <= bound + 2.0 * tol,
            "|{} − {}| > {bound}",
            v1.value,
            v2.value
        );
        Ok(())
    })
}

/// `Υ_{−κ} ∘ Υ_κ` is the identity (exact on dyadic data, to rounding otherwise).
pub fn drift_shift_round_trip(cases: u32) -> SuiteResult {
    let strategy = (1..=4usize).prop_flat_map(|d| {
        (
            path(d, 5),
            prop::collection::vec(-5.0..5.0f64, d),
            prop::collection::vec(-512..512i32, d),
            prop::collection::vec(-512..512i32, d),
        )
    });
    run_suite("drift-shift round trip", cases, strategy, |(x, kappa, dd, dk)| {
        let back = drift_shift(&drift_shift(&x, &kappa).unwrap(), &kappa.iter().map(|k| -k).collect::<Vec<_>>()).unwrap();
        for (a, b) in x.coords().iter().zip(back.coords()) {
            prop_assert_eq!(a.jumps(), b.jumps());
            prop_assert_eq!(a.origin(), b.origin());
            prop_assert!((a.drift() - b.drift()).abs() <= 1e-14 * (1.0 + a.drift().abs()));
        }
        // Dyadic drifts and shifts: the round trip is bit-exact.
        let dy = VectorPath::new(
            x.coords()
                .iter()
                .zip(&dd)
                .map(|(c, &k)| {
                    StepDriftPath::new(HORIZON, k as f64 / 64.0, 0.0, c.jumps().iter().map(|j| (j.time, j.size))).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let kd: Vec<f64> = dk.iter().map(|&k| k as f64 / 64.0).collect();
        let back = drift_shift(&drift_shift(&dy, &kd).unwrap(), &kd.iter().map(|k| -k).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(back, dy);
        Ok(())
    })
}

/// `|ξ(T) − ζ(T)|∞` is bounded by the uniform distance and by any certified
/// J1 upper bound.
pub fn terminal_lipschitz(cases: u32) -> SuiteResult {
    let strategy = (1..=4usize).prop_flat_map(|d| {
        (
            path(d, 5),
            prop::collection::vec((-0.2..0.2f64, -0.3..0.3f64, -0.05..0.05f64), d),
            path(d, 5),
            any::<bool>(),
        )
    });
    run_suite("terminal map 1-Lipschitz", cases, strategy, |(x, perturb, other, independent)| {
        // Either an independent pair or a perturbed copy (shifted epochs,
        // resized jumps, tilted drift).
        let y = if independent {
            other
        } else {
            VectorPath::new(
                x.coords()
                    .iter()
                    .zip(&perturb)
                    .map(|(c, (dd, ds, dt))| {
                        let js = c
                            .jumps()
                            .iter()
                            .map(|j| ((j.time + dt).clamp(0.0, HORIZON), (j.size + ds).max(0.0)));
                        StepDriftPath::new(HORIZON, c.drift() + dd, c.origin(), js).unwrap()
                    })
                    .collect(),
            )
            .unwrap()
        };
        let (tx, ty) = (terminal(&x), terminal(&y));
        let gap = tx.iter().zip(&ty).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let u = uniform_distance(&x, &y).unwrap();
        let j1 = product_j1_upper(&x, &y).unwrap();
        prop_assert!(gap <= u + 1e-12, "terminal gap {gap} > uniform {u}");
        prop_assert!(gap <= j1 + 1e-12, "terminal gap {gap} > J1 bound {j1}");
        Ok(())
    })
}

/// The criterion-4 suites in reporting order.
pub fn criterion_four_suites() -> Vec<fn(u32) -> SuiteResult> {
    vec![
        psi_monotone,
        jump_propagation,
        consolidation_dominance,
        consolidation_rate,
        append_terminal,
        holder,
        drift_shift_round_trip,
        terminal_lipschitz,
    ]
}

pub fn reflection_matrix(net: &FluidNetwork) -> ReflectionMatrix {
    net.reflection_matrix().unwrap()
}
