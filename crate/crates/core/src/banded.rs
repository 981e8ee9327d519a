//! Banded LU factorization with partial pivoting, plus a bordered solve.
//!
//! Storage follows the LAPACK `gbtrf` layout: row `i`, column `j` lives at
//! `ab[(kl + ku + i - j) * n + j]` with `kl` extra rows reserved for the
//! fill-in produced by row interchanges.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BandedError {
    #[error("matrix is singular at pivot {0}")]
    Singular(usize),
}

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            ab: vec![0.0; (2 * kl + ku + 1) * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) * self.n + j
    }

    /// Adds `v` at `(i, j)`; the entry must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i <= j + self.kl && j <= i + self.ku,
            "entry ({i}, {j}) outside band"
        );
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i > j + self.kl || j > i + self.ku + self.kl {
            return 0.0;
        }
        self.ab[self.idx(i, j)]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandedLu, BandedError> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let kv = ku + kl;
        let mut piv = vec![0usize; n];
        let scale = self.ab.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.get(j, j).abs();
            for i in j + 1..=last {
                let v = self.ab[self.idx(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[j] = p;
            if best <= 1e-15 * scale {
                return Err(BandedError::Singular(j));
            }
            let jend = (j + kv).min(n - 1);
            if p != j {
                for c in j..=jend {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.ab.swap(a, b);
                }
            }
            let d = self.ab[self.idx(j, j)];
            for i in j + 1..=last {
                let k = self.idx(i, j);
                let l = self.ab[k] / d;
                self.ab[k] = l;
                if l != 0.0 {
                    for c in j + 1..=jend {
                        let u = self.ab[self.idx(j, c)];
                        if u != 0.0 {
                            let t = self.idx(i, c);
                            self.ab[t] -= l * u;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let kv = m.kl + m.ku;
        let mut x = rhs.to_vec();
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                x.swap(j, p);
            }
            let last = (j + m.kl).min(n - 1);
            let xj = x[j];
            for i in j + 1..=last {
                x[i] -= m.ab[m.idx(i, j)] * xj;
            }
        }
        for j in (0..n).rev() {
            let jend = (j + kv).min(n - 1);
            let mut s = x[j];
            for c in j + 1..=jend {
                s -= m.ab[m.idx(j, c)] * x[c];
            }
            x[j] = s / m.ab[m.idx(j, j)];
        }
        x
    }
}

/// Solves `[M b; cᵀ 0] [x; y] = [f; g]` by block elimination.
pub fn solve_bordered(
    lu: &BandedLu,
    b: &[f64],
    c: &[f64],
    f: &[f64],
    g: f64,
) -> Result<(Vec<f64>, f64), BandedError> {
    let mf = lu.solve(f);
    let mb = lu.solve(b);
    let cmb: f64 = c.iter().zip(&mb).map(|(a, b)| a * b).sum();
    let cmf: f64 = c.iter().zip(&mf).map(|(a, b)| a * b).sum();
    let scale = c.iter().zip(b).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1e-300);
    if cmb.abs() <= 1e-14 * scale {
        return Err(BandedError::Singular(lu.m.n));
    }
    let y = (cmf - g) / cmb;
    let x = mf.iter().zip(&mb).map(|(a, b)| a - b * y).collect();
    Ok((x, y))
}
