//! Plain-text network configuration files.
//!
//! ```text
//! # two-node tandem
//! d = 2
//! alpha = 0.5
//! T = 1
//! L = const
//! exogenous = 1 2
//! r = 3 3
//! mu = 1 1
//! c = 0.2 1
//! Q =
//!   0 1
//!   0 0
//! ```
//!
//! Vectors are whitespace- or comma-separated. `exogenous` lists 1-based node
//! indices. Entries of `c` for nodes without exogenous input may be written
//! as `-`. `Q` is followed by `d` row lines. `#` starts a comment.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::network::{FluidNetwork, NetworkError, TailMultiplier};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {msg}")]
    Syntax {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub network: FluidNetwork,
    pub horizon: f64,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(s: &str, base_column: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        let sep = ch.is_whitespace() || ch == ',';
        match (sep, start) {
            (true, Some(b)) => {
                out.push(Token {
                    text: &s[b..i],
                    column: base_column + b,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push(Token {
            text: &s[b..],
            column: base_column + b,
        });
    }
    out
}

fn syntax(line: usize, column: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line,
        column,
        msg: msg.into(),
    }
}

fn number(tok: &Token<'_>, line: usize) -> Result<f64, ConfigError> {
    tok.text
        .parse::<f64>()
        .map_err(|_| syntax(line, tok.column, format!("expected a number, found `{}`", tok.text)))
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
    value_column: usize,
}

fn strip_comment(raw: &str) -> &str {
    raw.split('#').next().unwrap_or("")
}

/// Canonical form for hashing: comments and blank lines dropped, runs of
/// whitespace collapsed, `=` spacing normalized.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::new();
    for raw in text.lines() {
        let content = strip_comment(raw).replace('=', " = ");
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    out
}

/// SHA-256 of the canonical form, hex encoded.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(canonicalize(text).as_bytes()))
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, raw)| (i + 1, strip_comment(raw)))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();

    let mut entries: Vec<Entry<'_>> = Vec::new();
    let mut q_rows: Option<Vec<(usize, &str)>> = None;
    let mut q_line = 0;
    let mut k = 0;
    while k < lines.len() {
        let (line, content) = lines[k];
        let lead = content.len() - content.trim_start().len();
        let eq = content
            .find('=')
            .ok_or_else(|| syntax(line, lead + 1, "expected `key = value`"))?;
        let key = content[..eq].trim();
        let value = &content[eq + 1..];
        if key.is_empty() {
            return Err(syntax(line, lead + 1, "empty key"));
        }
        if entries.iter().any(|e| e.key == key) || (key == "Q" && q_rows.is_some()) {
            return Err(syntax(line, lead + 1, format!("duplicate key `{key}`")));
        }
        if key == "Q" {
            // Rows follow on subsequent lines (or inline, separated by `;`).
            q_line = line;
            let inline = value.trim();
            let mut rows = Vec::new();
            if !inline.is_empty() {
                rows.extend(value.split(';').map(|r| (line, r)));
                k += 1;
            } else {
                k += 1;
                while k < lines.len() && !lines[k].1.contains('=') {
                    rows.push(lines[k]);
                    k += 1;
                }
            }
            q_rows = Some(rows);
            continue;
        }
        entries.push(Entry {
            line,
            key,
            value,
            value_column: eq + 2,
        });
        k += 1;
    }

    let get = |key: &'static str| -> Result<&Entry<'_>, ConfigError> {
        entries
            .iter()
            .find(|e| e.key == key)
            .ok_or(ConfigError::Missing(key))
    };
    if let Some(e) = entries
        .iter()
        .find(|e| !["d", "alpha", "T", "r", "mu", "c", "exogenous", "L"].contains(&e.key))
    {
        return Err(syntax(e.line, 1, format!("unknown key `{}`", e.key)));
    }
    let scalar = |key: &'static str| -> Result<f64, ConfigError> {
        let e = get(key)?;
        let toks = tokens(e.value, e.value_column);
        match toks.as_slice() {
            [t] => number(t, e.line),
            [] => Err(syntax(e.line, e.value_column, format!("`{key}` needs a value"))),
            [_, extra, ..] => Err(syntax(e.line, extra.column, format!("`{key}` takes one value"))),
        }
    };

    let d_entry = get("d")?;
    let d_raw = scalar("d")?;
    if !(d_raw >= 1.0 && d_raw.fract() == 0.0) {
        return Err(syntax(d_entry.line, d_entry.value_column, "`d` must be a positive integer"));
    }
    let d = d_raw as usize;
    let alpha = scalar("alpha")?;
    let horizon = scalar("T")?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        let e = get("T")?;
        return Err(syntax(e.line, e.value_column, "`T` must be positive"));
    }

    let vector = |key: &'static str, allow_dash: bool| -> Result<Vec<f64>, ConfigError> {
        let e = get(key)?;
        let toks = tokens(e.value, e.value_column);
        if toks.len() != d {
            return Err(syntax(
                e.line,
                e.value_column,
                format!("`{key}` needs {d} values, found {}", toks.len()),
            ));
        }
        toks.iter()
            .map(|t| {
                if allow_dash && t.text == "-" {
                    Ok(f64::NAN)
                } else {
                    number(t, e.line)
                }
            })
            .collect()
    };
    let rates = vector("r", false)?;
    let mu = vector("mu", false)?;
    let c = vector("c", true)?;

    let ex = get("exogenous")?;
    let mut exogenous = vec![false; d];
    for t in tokens(ex.value, ex.value_column) {
        let idx: usize = t
            .text
            .parse()
            .map_err(|_| syntax(ex.line, t.column, format!("expected a node index, found `{}`", t.text)))?;
        if idx == 0 || idx > d {
            return Err(syntax(ex.line, t.column, format!("node index {idx} outside 1..={d}")));
        }
        exogenous[idx - 1] = true;
    }
    for i in 0..d {
        if exogenous[i] && c[i].is_nan() {
            return Err(syntax(get("c")?.line, get("c")?.value_column, format!("c[{}] is required for an exogenous node", i + 1)));
        }
    }

    let tail = match entries.iter().find(|e| e.key == "L") {
        None => TailMultiplier::Constant,
        Some(e) => {
            let v = e.value.trim();
            if v == "const" {
                TailMultiplier::Constant
            } else if let Some(g) = v.strip_prefix("loggamma:") {
                let gamma = g.trim().parse::<f64>().map_err(|_| {
                    syntax(e.line, e.value_column, format!("bad exponent in `{v}`"))
                })?;
                TailMultiplier::LogPower(gamma)
            } else {
                return Err(syntax(
                    e.line,
                    e.value_column,
                    format!("`L` must be `const` or `loggamma:<γ>`, found `{v}`"),
                ));
            }
        }
    };

    let rows = q_rows.ok_or(ConfigError::Missing("Q"))?;
    if rows.len() != d {
        return Err(syntax(q_line, 1, format!("`Q` needs {d} rows, found {}", rows.len())));
    }
    let mut routing = Vec::with_capacity(d);
    for (line, row) in rows {
        let lead_col = 1;
        let toks = tokens(row, lead_col);
        if toks.len() != d {
            return Err(syntax(line, lead_col, format!("`Q` row needs {d} entries, found {}", toks.len())));
        }
        routing.push(toks.iter().map(|t| number(t, line)).collect::<Result<Vec<_>, _>>()?);
    }

    let c = c.into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect();
    let network = FluidNetwork::new(routing, rates, mu, exogenous, c, alpha, tail)?;
    Ok(Config { network, horizon })
}

/// Writes a configuration in the same format [`parse`] reads.
pub fn render(cfg: &Config) -> String {
    let net = &cfg.network;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let exo: Vec<String> = net.exogenous_nodes().iter().map(|i| (i + 1).to_string()).collect();
    let c: Vec<String> = (0..net.dim())
        .map(|i| {
            if net.is_exogenous(i) {
                net.c()[i].to_string()
            } else {
                "-".to_string()
            }
        })
        .collect();
    let mut out = format!(
        "d = {}\nalpha = {}\nT = {}\nL = {}\nexogenous = {}\nr = {}\nmu = {}\nc = {}\nQ =\n",
        net.dim(),
        net.alpha(),
        cfg.horizon,
        net.tail(),
        exo.join(" "),
        join(net.rates()),
        join(net.mu()),
        c.join(" ")
    );
    for row in net.routing().rows() {
        out.push_str("  ");
        out.push_str(&join(&row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TANDEM: &str = "# tandem\nd = 2\nalpha = 0.5\nT = 1\nL = const\nexogenous = 1 2\nr = 3 3\nmu = 1 1\nc = 0.2 1\nQ =\n  0 1\n  0 0\n";

    #[test]
    fn parses_tandem() {
        let cfg = parse(TANDEM).unwrap();
        assert!(cfg.network.is_tandem());
        assert_eq!(cfg.horizon, 1.0);
        assert_eq!(cfg.network.c(), &[0.2, 1.0]);
        assert_eq!(parse(&render(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn inline_q_and_dash() {
        let text = "d=2\nalpha=0.3\nT=2\nexogenous=1\nr=1,2\nmu=0.5,0\nc=1,-\nL=loggamma:1.5\nQ=0 0.5; 0 0\n";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.network.exogenous(), &[true, false]);
        assert_eq!(cfg.network.tail(), TailMultiplier::LogPower(1.5));
        assert_eq!(cfg.network.routing().row(0), &[0.0, 0.5]);
    }

    #[test]
    fn diagnostics_carry_positions() {
        let bad = TANDEM.replace("r = 3 3", "r = 3 x");
        match parse(&bad).unwrap_err() {
            ConfigError::Syntax { line, column, .. } => assert_eq!((line, column), (7, 7)),
            e => panic!("{e:?}"),
        }
        let short = TANDEM.replace("  0 0\n", "");
        assert!(matches!(parse(&short), Err(ConfigError::Syntax { .. })));
        let missing = TANDEM.replace("alpha = 0.5\n", "");
        assert_eq!(parse(&missing).unwrap_err(), ConfigError::Missing("alpha"));
        let unknown = format!("{TANDEM}foo = 1\n");
        assert!(parse(&unknown).is_err());
    }

    #[test]
    fn hash_ignores_whitespace() {
        let spaced = TANDEM.replace(" = ", "   =\t").replace("\n", "\n\n");
        assert_eq!(config_hash(TANDEM), config_hash(&spaced));
        assert_ne!(config_hash(TANDEM), config_hash(&TANDEM.replace("0.2", "0.3")));
    }
}
