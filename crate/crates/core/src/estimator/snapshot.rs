//! Checkpoint records of the two-step estimator.
//!
//! Binary layout, all little-endian:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `CRSNAP01`                          |
//! | 4                | `m` as `u32`                              |
//! | 8                | `k` as `u64` (observations consumed)      |
//! | 8 m              | `theta_bar`                               |
//! | 8 m              | `theta_hat`                               |
//! | 8 m(m+1)/2       | `P_bar` lower triangle, row-major         |
//! | 8 m(m+1)/2       | `P` lower triangle, row-major             |
//!
//! The text form carries the same fields as `key = values` lines with
//! shortest round-trip float formatting, so both forms restore bit-exact.

use std::io::{BufRead, Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CRSNAP01";

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: u64,
    pub theta_bar: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub p_bar: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

fn lower_triangle(p: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..p.nrows()).flat_map(move |i| (0..=i).map(move |j| p[(i, j)]))
}

fn from_lower_triangle(m: usize, values: &[f64]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(m, m);
    let mut it = values.iter();
    for i in 0..m {
        for j in 0..=i {
            let v = *it.next().expect("triangle length checked by caller");
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    p
}

impl Snapshot {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.dim();
        w.write_all(MAGIC)?;
        w.write_all(&(m as u32).to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        let values = self
            .theta_bar
            .iter()
            .copied()
            .chain(self.theta_hat.iter().copied())
            .chain(lower_triangle(&self.p_bar))
            .chain(lower_triangle(&self.p));
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
        };
        writeln!(w, "# cenreg snapshot v1")?;
        writeln!(w, "m = {}", self.dim())?;
        writeln!(w, "k = {}", self.k)?;
        writeln!(w, "theta_bar = {}", join(&mut self.theta_bar.iter().copied()))?;
        writeln!(w, "theta_hat = {}", join(&mut self.theta_hat.iter().copied()))?;
        writeln!(w, "p_bar = {}", join(&mut lower_triangle(&self.p_bar)))?;
        writeln!(w, "p = {}", join(&mut lower_triangle(&self.p)))?;
        Ok(())
    }
}

pub fn read_snapshot_binary<R: Read>(mut r: R) -> Result<Snapshot> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let m = u32::from_le_bytes(b4) as usize;
    if m == 0 {
        return Err(Error::Format("dimension 0".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let k = u64::from_le_bytes(b8);
    let tri = m * (m + 1) / 2;
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                r.read_exact(&mut b8)?;
                Ok(f64::from_le_bytes(b8))
            })
            .collect()
    };
    let theta_bar = DVector::from_vec(read_vec(m)?);
    let theta_hat = DVector::from_vec(read_vec(m)?);
    let p_bar = from_lower_triangle(m, &read_vec(tri)?);
    let p = from_lower_triangle(m, &read_vec(tri)?);
    Ok(Snapshot {
        k,
        theta_bar,
        theta_hat,
        p_bar,
        p,
    })
}

pub fn read_snapshot_text<R: BufRead>(r: R) -> Result<Snapshot> {
    let mut m = None;
    let mut k = None;
    let mut fields: [Option<Vec<f64>>; 4] = Default::default();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let parse_floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("{key}: {e}"))))
                .collect()
        };
        match key {
            "m" => m = Some(value.parse::<usize>().map_err(|e| Error::Format(format!("m: {e}")))?),
            "k" => k = Some(value.parse::<u64>().map_err(|e| Error::Format(format!("k: {e}")))?),
            "theta_bar" => fields[0] = Some(parse_floats(value)?),
            "theta_hat" => fields[1] = Some(parse_floats(value)?),
            "p_bar" => fields[2] = Some(parse_floats(value)?),
            "p" => fields[3] = Some(parse_floats(value)?),
            other => return Err(Error::Format(format!("unknown key `{other}`"))),
        }
    }
    let m = m.ok_or_else(|| Error::Format("missing m".into()))?;
    let k = k.ok_or_else(|| Error::Format("missing k".into()))?;
    let [tb, th, pb, p] = fields;
    let missing = |name: &str| Error::Format(format!("missing {name}"));
    let (tb, th, pb, p) = (
        tb.ok_or_else(|| missing("theta_bar"))?,
        th.ok_or_else(|| missing("theta_hat"))?,
        pb.ok_or_else(|| missing("p_bar"))?,
        p.ok_or_else(|| missing("p"))?,
    );
    let tri = m * (m + 1) / 2;
    if tb.len() != m || th.len() != m || pb.len() != tri || p.len() != tri {
        return Err(Error::Format(format!("field lengths do not match m = {m}")));
    }
    Ok(Snapshot {
        k,
        theta_bar: DVector::from_vec(tb),
        theta_hat: DVector::from_vec(th),
        p_bar: from_lower_triangle(m, &pb),
        p: from_lower_triangle(m, &p),
    })
}
