//! Crude Monte Carlo for the scaled content `Z_n = φ(X_n)`.
//!
//! Every exogenous node receives a compound Poisson input whose jumps satisfy
//! `P(J ≥ x) = exp(−c L(x) x^α)`. Arrivals occur at rate `μ_i / E[J_i]`, so
//! the mean input rate is `μ_i` whatever the tail parameters.
//!
//! Replication `k` at scale `n` draws from its own ChaCha stream keyed by
//! `(seed, n, k)`, so results do not depend on how replications are spread
//! over threads.

use std::fmt::Write as _;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::{parse_number, sig9};
use crate::network::{FluidNetwork, NetworkError, ReflectionMatrix, TailMultiplier};
use crate::paths::{PathError, StepDriftPath, VectorPath};
use crate::reflection::{reflect_terminal, ReflectionError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Inverse transform for `P(J ≥ x) = exp(−c L(x) x^α)` at `u ∈ (0, 1)`.
pub fn sample_jump(c: f64, alpha: f64, tail: TailMultiplier, u: f64) -> f64 {
    let target = -u.ln();
    match tail {
        TailMultiplier::Constant => (target / c).powf(1.0 / alpha),
        TailMultiplier::LogPower(_) => {
            let g = |x: f64| c * tail.value(x) * x.powf(alpha);
            let mut hi = 1.0;
            while g(hi) < target {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// `P(J ≥ x)`.
pub fn survival(c: f64, alpha: f64, tail: TailMultiplier, x: f64) -> f64 {
    (-c * tail.value(x) * x.powf(alpha)).exp()
}

/// `E[J]`: `Γ(1 + 1/α) c^{−1/α}` for `L ≡ 1`, quadrature otherwise.
pub fn mean_jump(c: f64, alpha: f64, tail: TailMultiplier) -> f64 {
    match tail {
        TailMultiplier::Constant => libm::tgamma(1.0 + 1.0 / alpha) * c.powf(-1.0 / alpha),
        TailMultiplier::LogPower(_) => {
            // E[J] = ∫ P(J ≥ x) dx with c x^α = s^4, which leaves a smooth
            // integrand; L ≥ 1 so s^4 ≤ 80 suffices.
            let f = |s: f64| {
                let v = s.powi(4);
                let x = (v / c).powf(1.0 / alpha);
                (-v * tail.value(x)).exp() * 4.0 * x / (alpha * s)
            };
            let (a, b, m) = (0.0, 80f64.powf(0.25), 20_000usize);
            let h = (b - a) / m as f64;
            // The integrand vanishes at s = 0.
            let mut s = f(b);
            for k in 1..m {
                s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
    }
}

/// Poisson arrival rate per exogenous node, `μ_i / E[J_i]`; 0 elsewhere.
pub fn arrival_rates(net: &FluidNetwork) -> Vec<f64> {
    (0..net.dim())
        .map(|i| {
            if net.is_exogenous(i) && net.mu()[i] > 0.0 {
                net.mu()[i] / mean_jump(net.c()[i], net.alpha(), net.tail())
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-node `(epoch, size)` lists of a compound Poisson input on `[0, horizon]`.
pub fn sample_arrivals<R: Rng + ?Sized>(
    net: &FluidNetwork,
    rates: &[f64],
    horizon: f64,
    rng: &mut R,
) -> Vec<Vec<(f64, f64)>> {
    (0..net.dim())
        .map(|i| {
            let mut out = Vec::new();
            if rates[i] <= 0.0 || horizon <= 0.0 {
                return out;
            }
            let mut t = 0.0;
            loop {
                let e: f64 = rng.sample(Open01);
                t += -e.ln() / rates[i];
                if t > horizon {
                    break;
                }
                let u: f64 = rng.sample(Open01);
                out.push((t, sample_jump(net.c()[i], net.alpha(), net.tail(), u)));
            }
            out
        })
        .collect()
}

/// Potential content `X(t) = J(t) − 𝒬r t` on `[0, horizon]`.
pub fn sample_input_path<R: Rng + ?Sized>(
    net: &FluidNetwork,
    horizon: f64,
    rng: &mut R,
) -> Result<VectorPath> {
    let rates = arrival_rates(net);
    let arrivals = sample_arrivals(net, &rates, horizon, rng);
    potential_path(net, horizon, arrivals)
}

fn potential_path(net: &FluidNetwork, horizon: f64, arrivals: Vec<Vec<(f64, f64)>>) -> Result<VectorPath> {
    let drift = net.potential_drift();
    let coords = arrivals
        .into_iter()
        .enumerate()
        .map(|(i, jumps)| StepDriftPath::new(horizon, drift[i], 0.0, jumps))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(VectorPath::new(coords)?)
}

/// Reusable per-network state for repeated replications.
pub struct Simulator {
    net: FluidNetwork,
    refl: ReflectionMatrix,
    rates: Vec<f64>,
}

impl Simulator {
    pub fn new(net: &FluidNetwork) -> Result<Self> {
        net.ensure_valid()?;
        Ok(Self {
            net: net.clone(),
            refl: net.reflection_matrix()?,
            rates: arrival_rates(net),
        })
    }

    pub fn network(&self) -> &FluidNetwork {
        &self.net
    }

    /// `Z(nT)` of the unscaled network started empty.
    pub fn unscaled_terminal<R: Rng + ?Sized>(&self, n: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
        let long = n * horizon;
        let arrivals = sample_arrivals(&self.net, &self.rates, long, rng);
        let x = potential_path(&self.net, long, arrivals)?;
        Ok(reflect_terminal(&self.refl, &x)?)
    }

    /// `Z_n(T) = Z(nT) / n`.
    pub fn scaled_terminal<R: Rng + ?Sized>(&self, n: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut z = self.unscaled_terminal(n, horizon, rng)?;
        for v in &mut z {
            *v /= n;
        }
        Ok(z)
    }
}

/// One-shot `Z_n(T)`.
pub fn simulate_content<R: Rng + ?Sized>(net: &FluidNetwork, n: u64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    Simulator::new(net)?.scaled_terminal(n as f64, horizon, rng)
}

/// Independent stream for replication `rep` at scale `n`.
pub fn replication_rng(seed: u64, n: u64, rep: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&n.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_values: Vec<u64>,
    pub reps: u64,
    pub seed: u64,
    pub b: Vec<f64>,
    pub y: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub n: u64,
    pub reps: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub ci95: (f64, f64),
    /// `−log p̂ / (L(n) n^α)`, or with zero hits the bound implied by the upper
    /// Wilson limit (`decay_is_bound`).
    pub decay: f64,
    pub decay_is_bound: bool,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95%.
pub fn wilson(hits: u64, reps: u64) -> (f64, f64) {
    let n = reps as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

fn speed(net: &FluidNetwork, n: u64) -> f64 {
    net.tail().value(n as f64) * (n as f64).powf(net.alpha())
}

fn estimate(net: &FluidNetwork, n: u64, reps: u64, hits: u64) -> McEstimate {
    let p_hat = hits as f64 / reps as f64;
    let ci95 = wilson(hits, reps);
    let (decay, decay_is_bound) = if hits == 0 {
        (-ci95.1.ln() / speed(net, n), true)
    } else {
        (-p_hat.ln() / speed(net, n) + 0.0, false)
    };
    McEstimate {
        n,
        reps,
        hits,
        p_hat,
        ci95,
        decay,
        decay_is_bound,
    }
}

/// `FLUIDNET_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("FLUIDNET_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Runs `reps` replications per `n` and counts `bᵀZ_n(T) ≥ y`.
pub fn estimate_overflow(net: &FluidNetwork, mc: &McConfig, threads: Option<usize>) -> Result<Vec<McEstimate>> {
    if mc.reps == 0 {
        return Err(SimError::Invalid("reps must be at least 1".into()));
    }
    if mc.n_values.contains(&0) {
        return Err(SimError::Invalid("n must be at least 1".into()));
    }
    if mc.b.len() != net.dim() {
        return Err(SimError::Invalid(format!("b has {} entries, network has {}", mc.b.len(), net.dim())));
    }
    if !(mc.horizon > 0.0) || !(mc.y >= 0.0) {
        return Err(SimError::Invalid("need T > 0 and y ≥ 0".into()));
    }
    let sim = Simulator::new(net)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| SimError::Pool(e.to_string()))?;

    let mut out = Vec::with_capacity(mc.n_values.len());
    for &n in &mc.n_values {
        let hits = pool.install(|| {
            (0..mc.reps)
                .into_par_iter()
                .map(|rep| -> Result<u64> {
                    let mut rng = replication_rng(mc.seed, n, rep);
                    let z = sim.scaled_terminal(n as f64, mc.horizon, &mut rng)?;
                    let value: f64 = mc.b.iter().zip(&z).map(|(b, z)| b * z).sum();
                    Ok(u64::from(value >= mc.y))
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))
        })?;
        out.push(estimate(net, n, mc.reps, hits));
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "n,reps,hits,p_hat,ci_lo,ci_hi,decay";

/// Decay column: a number, or `>=x` when only a lower bound is known.
pub fn decay_field(e: &McEstimate) -> String {
    if e.decay_is_bound {
        format!(">={}", sig9(e.decay))
    } else {
        sig9(e.decay)
    }
}

pub fn write_csv(estimates: &[McEstimate]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for e in estimates {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.n,
            e.reps,
            e.hits,
            sig9(e.p_hat),
            sig9(e.ci95.0),
            sig9(e.ci95.1),
            decay_field(e)
        );
    }
    s
}

pub fn read_csv(text: &str) -> Result<Vec<McEstimate>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let csv_err = |line: usize, msg: String| SimError::Csv { line, msg };
    let header = reader.headers().map_err(|e| csv_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(csv_err(1, format!("expected header `{CSV_HEADER}`")));
    }
    reader
        .records()
        .enumerate()
        .map(|(k, rec)| {
            let line = k + 2;
            let f = rec.map_err(|e| csv_err(line, e.to_string()))?;
            let int = |i: usize| f[i].parse::<u64>().map_err(|_| csv_err(line, format!("bad integer `{}`", &f[i])));
            let num = |s: &str| parse_number(s).ok_or_else(|| csv_err(line, format!("bad number `{s}`")));
            let (decay, decay_is_bound) = match f[6].strip_prefix(">=") {
                Some(rest) => (num(rest)?, true),
                None => (num(&f[6])?, false),
            };
            Ok(McEstimate {
                n: int(0)?,
                reps: int(1)?,
                hits: int(2)?,
                p_hat: num(&f[3])?,
                ci95: (num(&f[4])?, num(&f[5])?),
                decay,
                decay_is_bound,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_examples() {
        let c = TailMultiplier::Constant;
        assert!((sample_jump(1.0, 0.5, c, (-1f64).exp()) - 1.0).abs() < 1e-15);
        assert!((sample_jump(1.0, 0.5, c, 0.5) - 2f64.ln().powi(2)).abs() < 1e-15);
        assert!((sample_jump(2.0, 0.5, c, (-2f64).exp()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_tail_inversion() {
        let tail = TailMultiplier::LogPower(1.5);
        for u in [0.9, 0.5, 0.1, 1e-6] {
            let x = sample_jump(0.7, 0.4, tail, u);
            assert!((survival(0.7, 0.4, tail, x) - u).abs() < 1e-12 * (1.0 + u), "u = {u}");
        }
    }

    #[test]
    fn mean_jump_matches_quadrature_for_constant_tail() {
        // Gamma closed form against the quadrature branch with γ = 0.
        for (c, alpha) in [(1.0, 0.5), (0.2, 0.5), (2.0, 0.75), (1.0, 0.25)] {
            let exact = mean_jump(c, alpha, TailMultiplier::Constant);
            let quad = mean_jump(c, alpha, TailMultiplier::LogPower(0.0));
            assert!((exact - quad).abs() < 1e-8 * exact, "{c} {alpha}: {exact} vs {quad}");
        }
        assert!((mean_jump(0.2, 0.5, TailMultiplier::Constant) - 50.0).abs() < 1e-10);
    }

    #[test]
    fn empty_horizon_has_no_arrivals() {
        let net = FluidNetwork::tandem([3.0, 3.0], [1.0, 1.0], [1.0, 1.0], 0.5);
        let mut rng = replication_rng(1, 1, 0);
        let a = sample_arrivals(&net, &arrival_rates(&net), 0.0, &mut rng);
        assert!(a.iter().all(Vec::is_empty));
    }

    #[test]
    fn wilson_contains_estimate() {
        for (h, n) in [(0, 10), (3, 10), (10, 10), (500, 1_000_000)] {
            let (lo, hi) = wilson(h, n);
            let p = h as f64 / n as f64;
            assert!(lo <= p && p <= hi);
        }
        let (lo, hi) = wilson(5, 10);
        assert!((lo - 0.236593).abs() < 1e-6 && (hi - 0.763407).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let net = FluidNetwork::tandem([3.0, 3.0], [1.0, 1.0], [0.2, 1.0], 0.5);
        let rows = vec![estimate(&net, 5, 100, 17), estimate(&net, 10, 100, 0), estimate(&net, 20, 7, 7)];
        let text = write_csv(&rows);
        let back = read_csv(&text).unwrap();
        assert_eq!(write_csv(&back), text);
        assert!(back[1].decay_is_bound);
        assert_eq!(back[2].decay, 0.0);
        assert!(read_csv("n,reps\n").is_err());
    }

    #[test]
    fn threshold_zero_always_hits() {
        let net = FluidNetwork::tandem([3.0, 3.0], [1.0, 1.0], [0.2, 1.0], 0.5);
        let mc = McConfig {
            n_values: vec![2],
            reps: 50,
            seed: 3,
            b: vec![0.0, 1.0],
            y: 0.0,
            horizon: 1.0,
        };
        let e = &estimate_overflow(&net, &mc, Some(2)).unwrap()[0];
        assert_eq!((e.hits, e.p_hat, e.decay), (50, 1.0, 0.0));
    }
}
