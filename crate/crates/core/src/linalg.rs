//! Symmetric banded storage with an in-place Cholesky factorization.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix, column-major: entry `(i, j)` with
/// `j <= i <= j + bw` lives at `j * (bw + 1) + (i - j)`.
#[derive(Clone, Debug)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSym {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.bw).then(|| j * (self.bw + 1) + (i - j))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` to the symmetric pair `(i, j)`; call once per unordered pair
    /// from the lower triangle, or for every ordered pair with `i >= j`.
    ///
    /// # Panics
    /// If `(i, j)` falls outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .idx(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside bandwidth {}", self.bw));
        self.data[k] += v;
    }

    /// Replaces row and column `k` by the identity.
    pub fn pin(&mut self, k: usize) {
        let lo = k.saturating_sub(self.bw);
        let hi = (k + self.bw).min(self.n - 1);
        for j in lo..=hi {
            if let Some(p) = self.idx(k, j) {
                self.data[p] = 0.0;
            }
        }
        let p = self.idx(k, k).unwrap();
        self.data[p] = 1.0;
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for j in 0..self.n {
            let d = self.data[j * (self.bw + 1)];
            y[j] += d * x[j];
            for off in 1..=self.bw.min(self.n - 1 - j) {
                let v = self.data[j * (self.bw + 1) + off];
                y[j + off] += v * x[j];
                y[j] += v * x[j + off];
            }
        }
        y
    }

    /// Cholesky factor `L Lᵀ`, stored in the same band layout.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let s = bw + 1;
        for j in 0..n {
            let k0 = j.saturating_sub(bw);
            let mut d = self.data[j * s];
            for k in k0..j {
                let l = self.data[k * s + (j - k)];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            self.data[j * s] = d;
            for i in j + 1..(j + bw + 1).min(n) {
                let mut v = self.data[j * s + (i - j)];
                for k in i.saturating_sub(bw).max(k0)..j {
                    v -= self.data[k * s + (i - k)] * self.data[k * s + (j - k)];
                }
                self.data[j * s + (i - j)] = v / d;
            }
        }
        Ok(BandedCholesky { l: self })
    }
}

#[derive(Clone, Debug)]
pub struct BandedCholesky {
    l: BandedSym,
}

impl BandedCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw) = (self.l.n, self.l.bw);
        let s = bw + 1;
        let d = &self.l.data;
        let mut y = b.clone();
        for j in 0..n {
            y[j] /= d[j * s];
            let yj = y[j];
            for i in j + 1..(j + bw + 1).min(n) {
                y[i] -= d[j * s + (i - j)] * yj;
            }
        }
        for j in (0..n).rev() {
            let mut v = y[j];
            for i in j + 1..(j + bw + 1).min(n) {
                v -= d[j * s + (i - j)] * y[i];
            }
            y[j] = v / d[j * s];
        }
        y
    }
}
