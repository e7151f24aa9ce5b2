//! Plain-text exchange format for cone programs.
//!
//! ```text
//! conic-program v1
//! n <vars> m <rows>
//! cones <count>
//! <kind> <size>          one line per cone: zero | nonneg | soc | psd (psd size = side)
//! P <nnz>                (0 when absent) followed by "i j v" lines, upper triangle
//! c                      followed by n values, one per line
//! A <nnz>                followed by "i j v" lines
//! b                      followed by m values, one per line
//! ```
//!
//! Indices are zero-based; values are written with 17 significant digits.

use crate::{Cone, ConeProgram, CscMatrix};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_program(prog: &ConeProgram<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "conic-program v1");
    let _ = writeln!(out, "n {} m {}", prog.n(), prog.m());
    let _ = writeln!(out, "cones {}", prog.cones.len());
    for c in &prog.cones {
        let (kind, size) = match *c {
            Cone::Zero(d) => ("zero", d),
            Cone::Nonneg(d) => ("nonneg", d),
            Cone::Soc(d) => ("soc", d),
            Cone::Psd(k) => ("psd", k),
        };
        let _ = writeln!(out, "{kind} {size}");
    }
    let p_trip = prog.p.as_ref().map(|p| p.triplets()).unwrap_or_default();
    let _ = writeln!(out, "P {}", p_trip.len());
    for (i, j, v) in p_trip {
        let _ = writeln!(out, "{i} {j} {}", fmt_f64(v));
    }
    let _ = writeln!(out, "c");
    for v in &prog.c {
        let _ = writeln!(out, "{}", fmt_f64(*v));
    }
    let a_trip = prog.a.triplets();
    let _ = writeln!(out, "A {}", a_trip.len());
    for (i, j, v) in a_trip {
        let _ = writeln!(out, "{i} {j} {}", fmt_f64(v));
    }
    let _ = writeln!(out, "b");
    for v in &prog.b {
        let _ = writeln!(out, "{}", fmt_f64(*v));
    }
    out
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<Vec<&'a str>, DumpError> {
        loop {
            match self.it.next() {
                Some((k, l)) => {
                    self.line = k + 1;
                    let t = l.trim();
                    if !t.is_empty() {
                        return Ok(t.split_whitespace().collect());
                    }
                }
                None => return Err(self.err("unexpected end of input")),
            }
        }
    }

    fn err(&self, msg: &str) -> DumpError {
        DumpError::Parse {
            line: self.line,
            msg: msg.to_string(),
        }
    }

    fn num<V: std::str::FromStr>(&self, s: &str) -> Result<V, DumpError> {
        s.parse().map_err(|_| self.err(&format!("bad number '{s}'")))
    }

    fn header(&mut self, key: &str) -> Result<usize, DumpError> {
        let t = self.next()?;
        if t.len() != 2 || t[0] != key {
            return Err(self.err(&format!("expected '{key} <count>'")));
        }
        self.num(t[1])
    }

    fn triplets(&mut self, count: usize) -> Result<Vec<(usize, usize, f64)>, DumpError> {
        (0..count)
            .map(|_| {
                let t = self.next()?;
                if t.len() != 3 {
                    return Err(self.err("expected 'i j v'"));
                }
                Ok((self.num(t[0])?, self.num(t[1])?, self.num(t[2])?))
            })
            .collect()
    }

    fn values(&mut self, key: &str, count: usize) -> Result<Vec<f64>, DumpError> {
        let t = self.next()?;
        if t != [key] {
            return Err(self.err(&format!("expected '{key}'")));
        }
        (0..count)
            .map(|_| {
                let t = self.next()?;
                self.num(t[0])
            })
            .collect()
    }
}

pub fn read_program(text: &str) -> Result<ConeProgram<f64>, DumpError> {
    let mut l = Lines {
        it: text.lines().enumerate(),
        line: 0,
    };
    if l.next()? != ["conic-program", "v1"] {
        return Err(l.err("missing 'conic-program v1' header"));
    }
    let t = l.next()?;
    if t.len() != 4 || t[0] != "n" || t[2] != "m" {
        return Err(l.err("expected 'n <vars> m <rows>'"));
    }
    let n: usize = l.num(t[1])?;
    let m: usize = l.num(t[3])?;
    let ncones = l.header("cones")?;
    let mut cones = Vec::with_capacity(ncones);
    for _ in 0..ncones {
        let t = l.next()?;
        if t.len() != 2 {
            return Err(l.err("expected '<kind> <size>'"));
        }
        let d: usize = l.num(t[1])?;
        cones.push(match t[0] {
            "zero" => Cone::Zero(d),
            "nonneg" => Cone::Nonneg(d),
            "soc" => Cone::Soc(d),
            "psd" => Cone::Psd(d),
            other => return Err(l.err(&format!("unknown cone '{other}'"))),
        });
    }
    let pn = l.header("P")?;
    let p_trip = l.triplets(pn)?;
    let c = l.values("c", n)?;
    let an = l.header("A")?;
    let a_trip = l.triplets(an)?;
    let b = l.values("b", m)?;
    Ok(ConeProgram {
        p: (pn > 0).then(|| CscMatrix::from_triplets(n, n, &p_trip)),
        c,
        a: CscMatrix::from_triplets(m, n, &a_trip),
        b,
        cones,
    })
}
