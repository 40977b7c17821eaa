//! Network topology `(J, r, Q)`, tail parameters and stability checks.

use std::fmt;

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network: {0}")]
    Invalid(String),
}

/// Slowly varying multiplier `L` in the tail `P(J ≥ x) = exp(−c L(x) x^α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailMultiplier {
    /// `L ≡ 1`.
    Constant,
    /// `L(x) = (log(e + x))^γ`, `γ ≥ 0`.
    LogPower(f64),
}

impl TailMultiplier {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            TailMultiplier::Constant => 1.0,
            TailMultiplier::LogPower(gamma) => (std::f64::consts::E + x.max(0.0)).ln().powf(gamma),
        }
    }
}

impl fmt::Display for TailMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailMultiplier::Constant => write!(f, "const"),
            TailMultiplier::LogPower(g) => write!(f, "loggamma:{g}"),
        }
    }
}

/// A single-class open fluid network.
///
/// `routing[i][j]` is the fraction of node `i`'s output sent to node `j`;
/// `mu[i]` is the mean exogenous input rate (0 off the exogenous set) and
/// `c[i]` the tail coefficient (ignored off the exogenous set).
#[derive(Debug, Clone, PartialEq)]
pub struct FluidNetwork {
    routing: Matrix,
    rates: Vec<f64>,
    mu: Vec<f64>,
    exogenous: Vec<bool>,
    c: Vec<f64>,
    alpha: f64,
    tail: TailMultiplier,
}

impl FluidNetwork {
    /// Checks only shapes; use [`FluidNetwork::validate`] for the model constraints.
    pub fn new(
        routing: Vec<Vec<f64>>,
        rates: Vec<f64>,
        mu: Vec<f64>,
        exogenous: Vec<bool>,
        c: Vec<f64>,
        alpha: f64,
        tail: TailMultiplier,
    ) -> Result<Self, NetworkError> {
        let d = rates.len();
        if d == 0 {
            return Err(NetworkError::Invalid("network needs at least one node".into()));
        }
        let dims = [
            ("Q", routing.len()),
            ("mu", mu.len()),
            ("exogenous", exogenous.len()),
            ("c", c.len()),
        ];
        for (field, got) in dims {
            if got != d {
                return Err(NetworkError::Dimension {
                    field,
                    expected: d,
                    got,
                });
            }
        }
        if let Some(row) = routing.iter().find(|row| row.len() != d) {
            return Err(NetworkError::Dimension {
                field: "Q",
                expected: d,
                got: row.len(),
            });
        }
        Ok(Self {
            routing: Matrix::from_rows(&routing),
            rates,
            mu,
            exogenous,
            c,
            alpha,
            tail,
        })
    }

    /// Two-node tandem: node 1 feeds node 2, which feeds the outside.
    pub fn tandem(rates: [f64; 2], mu: [f64; 2], c: [f64; 2], alpha: f64) -> Self {
        Self::new(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            rates.to_vec(),
            mu.to_vec(),
            vec![true, true],
            c.to_vec(),
            alpha,
            TailMultiplier::Constant,
        )
        .expect("tandem shapes are consistent")
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    pub fn routing(&self) -> &Matrix {
        &self.routing
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn exogenous(&self) -> &[bool] {
        &self.exogenous
    }

    pub fn is_exogenous(&self, i: usize) -> bool {
        self.exogenous[i]
    }

    pub fn exogenous_nodes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.exogenous[i]).collect()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tail(&self) -> TailMultiplier {
        self.tail
    }

    pub fn with_tail(mut self, tail: TailMultiplier) -> Self {
        self.tail = tail;
        self
    }

    /// True when `Q` is exactly the two-node tandem routing.
    pub fn is_tandem(&self) -> bool {
        self.dim() == 2 && self.routing.rows() == vec![vec![0.0, 1.0], vec![0.0, 0.0]]
    }

    /// `𝒬 r`, the vector of net service drains when every node is busy.
    pub fn net_service(&self) -> Vec<f64> {
        qcal(&self.routing).mul_vec(&self.rates)
    }

    /// Fluid-limit drift of the potential content, `μ − 𝒬 r`.
    pub fn fluid_drift(&self) -> Vec<f64> {
        self.net_service()
            .iter()
            .zip(&self.mu)
            .map(|(s, m)| m - s)
            .collect()
    }

    /// Drift of the raw potential content `X(t) = J(t) − 𝒬 r t`, i.e. `−𝒬 r`.
    pub fn potential_drift(&self) -> Vec<f64> {
        self.net_service().iter().map(|s| -s).collect()
    }

    pub fn reflection_matrix(&self) -> Result<ReflectionMatrix, NetworkError> {
        ReflectionMatrix::new(&self.routing)
    }

    /// Margins `(I − Qᵀ) r − μ`; Kella-stable iff all are positive.
    pub fn stability_kella(&self) -> Vec<f64> {
        self.net_service()
            .iter()
            .zip(&self.mu)
            .map(|(s, m)| s - m)
            .collect()
    }

    /// Margins `r − (I − Qᵀ)⁻¹ μ` against the effective arrival rates.
    pub fn stability_throughput(&self) -> Result<Vec<f64>, NetworkError> {
        let refl = self.reflection_matrix()?;
        let lambda = refl.inverse().mul_vec(&self.mu);
        Ok(self.rates.iter().zip(&lambda).map(|(r, l)| r - l).collect())
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let d = self.dim();
        let q = &self.routing;

        let diag: Vec<String> = (0..d)
            .filter(|&i| q[(i, i)] != 0.0)
            .map(|i| format!("q[{0}][{0}] = {1}", i + 1, q[(i, i)]))
            .collect();
        report.check("zero diagonal", diag);

        let mut negative = Vec::new();
        for i in 0..d {
            for j in 0..d {
                if !(q[(i, j)] >= 0.0) || !q[(i, j)].is_finite() {
                    negative.push(format!("q[{}][{}] = {}", i + 1, j + 1, q[(i, j)]));
                }
            }
        }
        report.check("nonnegative routing", negative);

        let rows: Vec<String> = (0..d)
            .filter_map(|i| {
                let s: f64 = q.row(i).iter().sum();
                (s > 1.0 + 1e-12).then(|| format!("row {} sums to {s}", i + 1))
            })
            .collect();
        report.check("substochastic rows", rows);

        let rho = spectral_radius(q);
        report.check(
            "spectral radius < 1",
            if rho < 1.0 {
                vec![]
            } else {
                vec![format!("spectral radius of Q is {rho}")]
            },
        );

        let bad_rates: Vec<String> = self
            .rates
            .iter()
            .enumerate()
            .filter(|(_, &r)| !(r >= 0.0 && r.is_finite()))
            .map(|(i, r)| format!("r[{}] = {r}", i + 1))
            .collect();
        report.check("nonnegative service rates", bad_rates);

        let mut inputs = Vec::new();
        for i in 0..d {
            if self.exogenous[i] {
                if !(self.mu[i] >= 0.0 && self.mu[i].is_finite()) {
                    inputs.push(format!("mu[{}] = {}", i + 1, self.mu[i]));
                }
                if !(self.c[i] > 0.0 && self.c[i].is_finite()) {
                    inputs.push(format!("c[{}] = {} must be positive", i + 1, self.c[i]));
                }
            } else if self.mu[i] != 0.0 {
                inputs.push(format!("mu[{}] = {} on a node without exogenous input", i + 1, self.mu[i]));
            }
        }
        report.check("exogenous input parameters", inputs);

        report.check(
            "alpha in (0,1)",
            if self.alpha > 0.0 && self.alpha < 1.0 {
                vec![]
            } else {
                vec![format!("alpha = {}", self.alpha)]
            },
        );
        if let TailMultiplier::LogPower(g) = self.tail {
            report.check(
                "tail multiplier exponent",
                if g >= 0.0 && g.is_finite() {
                    vec![]
                } else {
                    vec![format!("gamma = {g}")]
                },
            );
        }

        if rho < 1.0 {
            let kella = self.stability_kella();
            let kella_ok = kella.iter().all(|&m| m > 0.0);
            match self.stability_throughput() {
                Ok(margins) => {
                    let offenders: Vec<String> = margins
                        .iter()
                        .enumerate()
                        .filter(|(_, &m)| !(m > 0.0))
                        .map(|(i, m)| format!("node {}: r − λ = {m}", i + 1))
                        .collect();
                    let throughput_ok = offenders.is_empty();
                    report.check("throughput stability", offenders);
                    if throughput_ok && !kella_ok {
                        report.warnings.push(format!(
                            "(I − Qᵀ)r − μ = {kella:?} is not positive; only the effective-arrival condition holds"
                        ));
                    }
                }
                Err(e) => report.check("throughput stability", vec![e.to_string()]),
            }
        }
        report
    }

    pub fn ensure_valid(&self) -> Result<(), NetworkError> {
        let report = self.validate();
        if report.passed() {
            Ok(())
        } else {
            Err(NetworkError::Invalid(report.failures().join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub offenders: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    fn check(&mut self, name: &'static str, offenders: Vec<String>) {
        self.checks.push(Check {
            name,
            passed: offenders.is_empty(),
            offenders,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.offenders.join(", ")))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            if c.passed {
                writeln!(f, "PASS  {}", c.name)?;
            } else {
                writeln!(f, "FAIL  {}: {}", c.name, c.offenders.join(", "))?;
            }
        }
        for w in &self.warnings {
            writeln!(f, "WARN  {w}")?;
        }
        Ok(())
    }
}

/// `𝒬 = I − Qᵀ`.
pub fn qcal(routing: &Matrix) -> Matrix {
    Matrix::identity(routing.dim()).sub(&routing.transpose())
}

/// Spectral radius of a nonnegative matrix. Nilpotent matrices report 0;
/// otherwise a Collatz–Wielandt upper bound from power iteration on `I + Q`
/// (tolerance 1e-12, at most 10k iterations).
pub fn spectral_radius(q: &Matrix) -> f64 {
    let n = q.dim();
    let mut power = q.clone();
    for _ in 1..n {
        if power.is_zero() {
            return 0.0;
        }
        power = power.mul(q);
    }
    if power.is_zero() {
        return 0.0;
    }
    let shifted = Matrix::identity(n).add(q);
    let mut v = vec![1.0; n];
    let mut upper = f64::INFINITY;
    for _ in 0..10_000 {
        let w = shifted.mul_vec(&v);
        let ratios = w.iter().zip(&v).map(|(a, b)| a / b);
        let (lo, hi) = ratios.fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        upper = upper.min(hi);
        let norm = w.iter().fold(0.0_f64, |m, x| m.max(*x));
        v = w.iter().map(|x| x / norm).collect();
        if hi - lo < 1e-12 {
            break;
        }
    }
    upper - 1.0
}

/// `𝒬 = I − Qᵀ` together with `𝒬⁻¹ = I + Qᵀ + (Qᵀ)² + …`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionMatrix {
    routing: Matrix,
    qcal: Matrix,
    qcal_inv: Matrix,
}

impl ReflectionMatrix {
    pub fn new(routing: &Matrix) -> Result<Self, NetworkError> {
        let rho = spectral_radius(routing);
        if !(rho < 1.0) {
            return Err(NetworkError::Invalid(format!(
                "spectral radius of Q is {rho}; the reflection matrix is not an M-matrix"
            )));
        }
        let qcal = qcal(routing);
        let qcal_inv = qcal
            .inverse()
            .ok_or_else(|| NetworkError::Invalid("I − Qᵀ is singular".into()))?;
        Ok(Self {
            routing: routing.clone(),
            qcal,
            qcal_inv,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NetworkError> {
        Self::new(&Matrix::from_rows(rows))
    }

    pub fn dim(&self) -> usize {
        self.qcal.dim()
    }

    pub fn routing(&self) -> &Matrix {
        &self.routing
    }

    pub fn matrix(&self) -> &Matrix {
        &self.qcal
    }

    pub fn inverse(&self) -> &Matrix {
        &self.qcal_inv
    }

    /// `Σ_{k ≤ terms} (Qᵀ)^k`, the truncated Neumann series for `𝒬⁻¹`.
    pub fn neumann_inverse(&self, terms: usize) -> Matrix {
        let qt = self.routing.transpose();
        let mut sum = Matrix::identity(self.dim());
        let mut power = Matrix::identity(self.dim());
        for _ in 0..terms {
            power = power.mul(&qt);
            if power.is_zero() {
                break;
            }
            sum = sum.add(&power);
        }
        sum
    }

    /// Number of Neumann terms so that the tail is below `tol`, from
    /// `‖(Qᵀ)^k‖ ≲ C ρ^k` with the spectral-radius bound.
    pub fn neumann_terms(&self, tol: f64) -> usize {
        let rho = spectral_radius(&self.routing);
        if rho <= 0.0 {
            return self.dim();
        }
        let k = (tol * (1.0 - rho)).ln() / rho.ln();
        // Non-normal matrices overshoot ρ^k; pad generously.
        (2.0 * k.max(1.0)).ceil() as usize + 4 * self.dim() + 50
    }
}
