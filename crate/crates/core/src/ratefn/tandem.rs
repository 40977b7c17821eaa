//! Closed-form `V*≥(y)` for the two-node tandem with `b = (0, 1)`.
//!
//! With `k = r1 + μ2 − r2` (the rate at which node 2 fills while node 1
//! drains at full speed) the optimum is one of three witnesses:
//!
//! * (i)   a single terminal jump `y` at node 2;
//! * (ii)  a single jump at node 1, sized `y (r1 − μ1) / k` and timed so that
//!   node 1 is still draining at `T`;
//! * (iii) a jump `(r1 − μ1) T` at node 1 at time 0 plus a terminal jump
//!   `y − k T` at node 2.
//!
//! Regime 1 (`k ≤ 0`): node 1 cannot fill node 2, only (i) applies.
//! Regime 2 (`y ≤ k T`): the better of (i) and (ii).
//! Regime 3 (`y > k T`): the better of (i) and (iii).

use super::{Method, OverflowProblem, RateError, RateSolution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TandemRegime {
    One,
    Two,
    Three,
}

impl TandemRegime {
    pub fn number(self) -> u8 {
        match self {
            TandemRegime::One => 1,
            TandemRegime::Two => 2,
            TandemRegime::Three => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TandemCase {
    I,
    II,
    III,
}

impl std::fmt::Display for TandemCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TandemCase::I => "i",
            TandemCase::II => "ii",
            TandemCase::III => "iii",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TandemSolution {
    pub regime: TandemRegime,
    pub case: TandemCase,
    pub solution: RateSolution,
}

pub fn tandem_rate(p: &OverflowProblem) -> Result<TandemSolution> {
    let net = p.network();
    if !net.is_tandem() {
        return Err(RateError::Invalid("network is not a two-node tandem".into()));
    }
    if p.b() != [0.0, 1.0] {
        return Err(RateError::Invalid("closed form needs b = (0, 1)".into()));
    }
    if !net.is_exogenous(1) {
        return Err(RateError::Invalid("node 2 must receive exogenous input".into()));
    }
    let (r1, r2) = (net.rates()[0], net.rates()[1]);
    let (mu1, mu2) = (net.mu()[0], net.mu()[1]);
    if !(r1 > mu1 && mu1 + mu2 < r2) {
        return Err(RateError::Invalid(format!(
            "need r1 > μ1 and μ1 + μ2 < r2, got r = ({r1}, {r2}), μ = ({mu1}, {mu2})"
        )));
    }
    let alpha = net.alpha();
    let (c1, c2) = (net.c()[0], net.c()[1]);
    let (y, horizon) = (p.y(), p.horizon());
    let k = r1 + mu2 - r2;
    let drain1 = r1 - mu1;

    let only_node2 = (TandemCase::I, [0.0, y], [horizon, horizon], c2 * y.powf(alpha));
    let upstream = net.is_exogenous(0);
    let (regime, (case, x, u, value)) = if k <= 0.0 {
        (TandemRegime::One, only_node2)
    } else if y <= k * horizon {
        let x1 = y * drain1 / k;
        let alt = (TandemCase::II, [x1, 0.0], [horizon - x1 / drain1, horizon], c1 * x1.powf(alpha));
        // Ties go to (i): lexicographically smaller witness.
        let pick = if upstream && alt.3 < only_node2.3 { alt } else { only_node2 };
        (TandemRegime::Two, pick)
    } else {
        let x1 = drain1 * horizon;
        let x2 = y - k * horizon;
        let alt = (
            TandemCase::III,
            [x1, x2],
            [0.0, horizon],
            c1 * x1.powf(alpha) + c2 * x2.powf(alpha),
        );
        // Ties go to (i): fewer active jumps.
        let pick = if upstream && alt.3 < only_node2.3 { alt } else { only_node2 };
        (TandemRegime::Three, pick)
    };
    Ok(TandemSolution {
        regime,
        case,
        solution: RateSolution {
            value,
            x_star: x.to_vec(),
            u_star: u.to_vec(),
            feasible: true,
            method: Method::TandemAnalytic,
            achieved: y,
        },
    })
}
