//! Text and binary formats: path CSV, length-prefixed float blocks, the MDP
//! corpus format and the parameterized-kernel table format.
//!
//! Both text formats are line oriented. Blank lines and `#` comments are
//! ignored; a section header is followed by the rows it announces.
//!
//! MDP file:
//! ```text
//! states 2
//! actions 1
//! gamma 0.9
//! reward        # n_states rows of n_actions values
//! 1.0
//! 0.0
//! transition    # n_states * n_actions rows of n_states values, (s, a) order
//! 0.5 0.5
//! 0.1 0.9
//! initial       # one row of n_states values
//! 1 0
//! features 2    # n_states * n_actions rows of dim values
//! 1 0
//! 0 1
//! ```
//!
//! Kernel file (`P_w = base + sum_k squash(w_k) tilt_k`):
//! ```text
//! states 2 dim 1
//! base
//! 0.9 0.1
//! 0.5 0.5
//! tilt 0
//! 0.05 -0.05
//! -0.1 0.1
//! update_a 0    # optional: dim rows of dim values, H(w, y) = A_y w + b_y
//! -1
//! update_b 0
//! 0.5
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::markov::{AffineUpdate, StochasticMatrix, TiltedKernel};
use crate::rl::{FeatureMap, Mdp};

/// CSV with header `n,z` and 17 significant digits.
pub fn path_csv(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 28 + 4);
    out.push_str("n,z\n");
    for (n, z) in values.iter().enumerate() {
        out.push_str(&format!("{n},{z:.16e}\n"));
    }
    out
}

pub fn parse_path_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let z = line.split(',').nth(1).ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "missing z column".into(),
        })?;
        out.push(z.trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("bad number {z:?}: {e}"),
        })?);
    }
    Ok(out)
}

/// `u64` little-endian length followed by little-endian `f64`s.
pub fn write_block(w: &mut impl Write, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_block(r: &mut impl Read) -> Result<Vec<f64>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

struct Lines<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Lines { items, pos: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let it = self.items.get(self.pos).copied();
        self.pos += 1;
        it
    }

    fn last_line(&self) -> usize {
        self.items.last().map(|x| x.0).unwrap_or(0)
    }

    fn row(&mut self, expect: usize, what: &str) -> Result<Vec<f64>> {
        let (line, text) = self.next().ok_or_else(|| Error::Parse {
            line: self.last_line(),
            msg: format!("unexpected end of file in {what}"),
        })?;
        let vals = numbers(line, text)?;
        if vals.len() != expect {
            return Err(Error::Parse {
                line,
                msg: format!("{what}: expected {expect} values, got {}", vals.len()),
            });
        }
        Ok(vals)
    }

    fn rows(&mut self, count: usize, width: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count * width);
        for _ in 0..count {
            out.extend(self.row(width, what)?);
        }
        Ok(out)
    }
}

fn numbers(line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad number {t:?}: {e}"),
            })
        })
        .collect()
}

fn count(line: usize, tok: Option<&str>, what: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .filter(|&n: &usize| n > 0)
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("{what} needs a positive integer"),
        })
}

fn need<T>(v: Option<T>, line: usize, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Parse {
        line,
        msg: format!("`{what}` must be declared before this section"),
    })
}

pub fn parse_mdp(text: &str) -> Result<(Mdp, FeatureMap)> {
    let mut lines = Lines::new(text);
    let (mut ns, mut na, mut gamma) = (None, None, None);
    let (mut reward, mut transition, mut initial, mut features) = (None, None, None, None);
    while let Some((line, head)) = lines.next() {
        let mut toks = head.split_whitespace();
        match toks.next() {
            Some("states") => ns = Some(count(line, toks.next(), "states")?),
            Some("actions") => na = Some(count(line, toks.next(), "actions")?),
            Some("gamma") => {
                gamma = Some(
                    toks.next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| Error::Parse {
                            line,
                            msg: "gamma needs a number".into(),
                        })?,
                )
            }
            Some("reward") => {
                let (s, a) = (need(ns, line, "states")?, need(na, line, "actions")?);
                reward = Some(lines.rows(s, a, "reward")?);
            }
            Some("transition") => {
                let (s, a) = (need(ns, line, "states")?, need(na, line, "actions")?);
                transition = Some(lines.rows(s * a, s, "transition")?);
            }
            Some("initial") => {
                let s = need(ns, line, "states")?;
                initial = Some(lines.row(s, "initial")?);
            }
            Some("features") => {
                let d = count(line, toks.next(), "features")?;
                let (s, a) = (need(ns, line, "states")?, need(na, line, "actions")?);
                features = Some((d, lines.rows(s * a, d, "features")?));
            }
            Some(other) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown section `{other}`"),
                });
            }
            None => {}
        }
    }
    let end = lines.last_line();
    let missing = |what: &str| Error::Parse {
        line: end,
        msg: format!("missing section `{what}`"),
    };
    let (ns, na) = (
        ns.ok_or_else(|| missing("states"))?,
        na.ok_or_else(|| missing("actions"))?,
    );
    let mdp = Mdp {
        n_states: ns,
        n_actions: na,
        reward: reward.ok_or_else(|| missing("reward"))?,
        transition: transition.ok_or_else(|| missing("transition"))?,
        gamma: gamma.ok_or_else(|| missing("gamma"))?,
        initial: initial.unwrap_or_else(|| vec![1.0 / ns as f64; ns]),
    };
    mdp.validate()?;
    let (d, data) = features.ok_or_else(|| missing("features"))?;
    Ok((mdp, FeatureMap::new(ns, na, d, data)?))
}

fn push_rows(out: &mut String, data: &[f64], width: usize) {
    for row in data.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

/// Renders an MDP in the format read by [`parse_mdp`]; values round-trip exactly.
pub fn write_mdp(mdp: &Mdp, features: &FeatureMap) -> String {
    let mut out = format!(
        "states {}\nactions {}\ngamma {:?}\nreward\n",
        mdp.n_states, mdp.n_actions, mdp.gamma
    );
    push_rows(&mut out, &mdp.reward, mdp.n_actions);
    out.push_str("transition\n");
    push_rows(&mut out, &mdp.transition, mdp.n_states);
    out.push_str("initial\n");
    push_rows(&mut out, &mdp.initial, mdp.n_states);
    out.push_str(&format!("features {}\n", features.dim));
    push_rows(&mut out, &features.data, features.dim);
    out
}

/// A kernel table and its optional affine update.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFile {
    pub kernel: TiltedKernel,
    pub update: Option<AffineUpdate>,
}

pub fn parse_kernel(text: &str) -> Result<KernelFile> {
    let mut lines = Lines::new(text);
    let (line, head) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "empty kernel file".into(),
    })?;
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "states" || toks[2] != "dim" {
        return Err(Error::Parse {
            line,
            msg: "header must read `states N dim D`".into(),
        });
    }
    let n = count(line, Some(toks[1]), "states")?;
    let d = count(line, Some(toks[3]), "dim")?;
    let mut base = None;
    let mut tilts: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut a = vec![None; n];
    let mut b = vec![None; n];
    while let Some((line, head)) = lines.next() {
        let mut toks = head.split_whitespace();
        let section = toks.next().unwrap_or("");
        let index = |toks: &mut std::str::SplitWhitespace, limit: usize| -> Result<usize> {
            toks.next()
                .and_then(|t| t.parse::<usize>().ok())
                .filter(|&k| k < limit)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("`{section}` needs an index below {limit}"),
                })
        };
        match section {
            "base" => base = Some(lines.rows(n, n, "base")?),
            "tilt" => {
                let k = index(&mut toks, d)?;
                tilts.push((k, lines.rows(n, n, "tilt")?));
            }
            "update_a" => {
                let y = index(&mut toks, n)?;
                a[y] = Some(lines.rows(d, d, "update_a")?);
            }
            "update_b" => {
                let y = index(&mut toks, n)?;
                b[y] = Some(lines.row(d, "update_b")?);
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown section `{other}`"),
                })
            }
        }
    }
    let base = base.ok_or(Error::Parse {
        line: lines.last_line(),
        msg: "missing `base` section".into(),
    })?;
    let mut dense = vec![vec![0.0; n * n]; tilts.iter().map(|t| t.0 + 1).max().unwrap_or(0)];
    for (k, g) in tilts {
        dense[k] = g;
    }
    let kernel = TiltedKernel::new(StochasticMatrix::new(n, base)?, dense, d)?;
    let any_update = a.iter().chain(b.iter()).any(Option::is_some);
    let update = if any_update {
        let a: Vec<Vec<f64>> = a.into_iter().map(|m| m.unwrap_or_else(|| vec![0.0; d * d])).collect();
        let b: Vec<Vec<f64>> = b.into_iter().map(|v| v.unwrap_or_else(|| vec![0.0; d])).collect();
        Some(AffineUpdate::new(d, a, b)?)
    } else {
        None
    };
    Ok(KernelFile { kernel, update })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::ParamKernel;
    use crate::rl::random_mdp;

    #[test]
    fn path_csv_round_trip() {
        let v = vec![0.0, 1.0 / 3.0, 2.5e-300, 1e300];
        assert_eq!(parse_path_csv(&path_csv(&v)).unwrap(), v);
    }

    #[test]
    fn block_round_trip() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sqrt()).collect();
        let mut buf = Vec::new();
        write_block(&mut buf, &v).unwrap();
        write_block(&mut buf, &[7.0]).unwrap();
        let mut r = &buf[..];
        assert_eq!(read_block(&mut r).unwrap(), v);
        assert_eq!(read_block(&mut r).unwrap(), vec![7.0]);
    }

    #[test]
    fn mdp_round_trip() {
        let (mdp, f) = random_mdp(4, 3, 2, 0.8, 0.7, 9).unwrap();
        let (m2, f2) = parse_mdp(&write_mdp(&mdp, &f)).unwrap();
        assert_eq!(mdp, m2);
        assert_eq!(f, f2);
    }

    #[test]
    fn mdp_parse_errors_carry_lines() {
        let text = "states 2\nactions 1\ngamma 0.9\nreward\n1.0\n0.0 3.0\n";
        match parse_mdp(text) {
            Err(Error::Parse { line: 6, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_mdp("bogus 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn kernel_file() {
        let text = "# demo\nstates 2 dim 1\nbase\n0.9 0.1\n0.5 0.5\ntilt 0\n0.05 -0.05\n-0.1 0.1\nupdate_a 0\n-1\nupdate_b 1\n0.5\n";
        let kf = parse_kernel(text).unwrap();
        let p = kf.kernel.matrix(&[1.0]).unwrap();
        assert!((p.get(0, 0) - 0.925).abs() < 1e-15);
        let u = kf.update.unwrap();
        assert_eq!(u.a[1], vec![0.0]);
        assert_eq!(u.b[1], vec![0.5]);
        assert!(parse_kernel("states 2 dim 1\nbase\n0.9 0.1\n").is_err());
    }
}
