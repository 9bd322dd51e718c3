//! Block structure of the Newton Jacobian of one macro step.
//!
//! With unknowns ordered `[q_{k+1}; q^{f,1}; …; q^{f,p}]` and residual rows
//! `[slow; fast node 0; …; fast node p-1]`, the matrix has a dense slow block,
//! dense slow borders and a fast part in which row block `r` only touches
//! column blocks `r-2`, `r-1` and `r`. The fast part is therefore block
//! lower-triangular with bandwidth two and can be eliminated by forward
//! substitution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ArrowheadJacobian {
    pub n_slow: usize,
    pub n_fast: usize,
    pub p: usize,
    pub ss: DMatrix<f64>,
    /// `n_slow × (p·n_fast)`.
    pub sf: DMatrix<f64>,
    /// `(p·n_fast) × n_slow`.
    pub fs: DMatrix<f64>,
    /// `bands[r][k]` couples fast row block `r` to column block `r - 2 + k`.
    pub bands: Vec<[DMatrix<f64>; 3]>,
}

impl ArrowheadJacobian {
    pub fn zeros(n_slow: usize, n_fast: usize, p: usize) -> Self {
        let z = DMatrix::zeros(n_fast, n_fast);
        ArrowheadJacobian {
            n_slow,
            n_fast,
            p,
            ss: DMatrix::zeros(n_slow, n_slow),
            sf: DMatrix::zeros(n_slow, p * n_fast),
            fs: DMatrix::zeros(p * n_fast, n_slow),
            bands: (0..p).map(|_| [z.clone(), z.clone(), z.clone()]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_slow + self.p * self.n_fast
    }

    /// Mutable block for fast row block `r` and column block `c`, if inside the band.
    pub fn fast_block_mut(&mut self, r: usize, c: usize) -> Option<&mut DMatrix<f64>> {
        if c > r || r - c > 2 {
            return None;
        }
        Some(&mut self.bands[r][2 - (r - c)])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (ns, nf) = (self.n_slow, self.n_fast);
        let mut d = DMatrix::zeros(self.dim(), self.dim());
        d.view_mut((0, 0), (ns, ns)).copy_from(&self.ss);
        d.view_mut((0, ns), (ns, self.p * nf)).copy_from(&self.sf);
        d.view_mut((ns, 0), (self.p * nf, ns)).copy_from(&self.fs);
        for r in 0..self.p {
            for k in 0..3 {
                if r + k < 2 {
                    continue;
                }
                let c = r + k - 2;
                d.view_mut((ns + r * nf, ns + c * nf), (nf, nf))
                    .copy_from(&self.bands[r][k]);
            }
        }
        d
    }

    /// Extracts the band structure from a dense matrix; entries outside the
    /// structure are discarded.
    pub fn from_dense(d: &DMatrix<f64>, n_slow: usize, n_fast: usize, p: usize) -> Self {
        let (ns, nf) = (n_slow, n_fast);
        let mut j = ArrowheadJacobian::zeros(ns, nf, p);
        j.ss.copy_from(&d.view((0, 0), (ns, ns)));
        j.sf.copy_from(&d.view((0, ns), (ns, p * nf)));
        j.fs.copy_from(&d.view((ns, 0), (p * nf, ns)));
        for r in 0..p {
            for k in 0..3 {
                if r + k < 2 {
                    continue;
                }
                let c = r + k - 2;
                j.bands[r][k].copy_from(&d.view((ns + r * nf, ns + c * nf), (nf, nf)));
            }
        }
        j
    }

    /// Solves `J x = rhs` with a dense LU factorisation.
    pub fn solve_dense(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        solve_lu(self.to_dense(), rhs)
    }

    /// Solves `J x = rhs` by block forward substitution through the fast
    /// chain followed by a dense solve of the slow Schur complement.
    pub fn solve_banded(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let (ns, nf, p) = (self.n_slow, self.n_fast, self.p);
        // fast block r: y_r = u_r + z_r x_s
        let mut u: Vec<DVector<f64>> = Vec::with_capacity(p);
        let mut z: Vec<DMatrix<f64>> = Vec::with_capacity(p);
        for r in 0..p {
            let lu = self.bands[r][2].clone().lu();
            let mut ur = rhs.rows(ns + r * nf, nf).into_owned();
            let mut zr = -self.fs.rows(r * nf, nf).into_owned();
            for (k, back) in [(1usize, 1usize), (0, 2)] {
                if r >= back {
                    let blk = &self.bands[r][k];
                    ur -= blk * &u[r - back];
                    zr -= blk * &z[r - back];
                }
            }
            let ur = lu.solve(&ur).ok_or(Error::SingularJacobian)?;
            let zr = lu.solve(&zr).ok_or(Error::SingularJacobian)?;
            u.push(ur);
            z.push(zr);
        }
        let mut schur = self.ss.clone();
        let mut rs = rhs.rows(0, ns).into_owned();
        for r in 0..p {
            let border = self.sf.columns(r * nf, nf);
            schur += border * &z[r];
            rs -= border * &u[r];
        }
        let xs = solve_lu(schur, &rs)?;
        let mut x = DVector::zeros(self.dim());
        x.rows_mut(0, ns).copy_from(&xs);
        for r in 0..p {
            x.rows_mut(ns + r * nf, nf).copy_from(&(&u[r] + &z[r] * &xs));
        }
        Ok(x)
    }
}

pub(crate) fn solve_lu(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = m.lu().solve(rhs).ok_or(Error::SingularJacobian)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    Ok(x)
}
