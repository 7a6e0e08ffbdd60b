//! Dense complex linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// i.i.d. circularly-symmetric complex Gaussian entries with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    })
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn is_zero(m: &CMat) -> bool {
    m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Products with fewer multiply-adds than this use the generic complex
/// kernel; larger ones go through four real GEMMs.
const SPLIT_GEMM_MIN_WORK: usize = 4096;

/// `a * b`.
pub fn cmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "cmul: inner dimensions differ");
    if a.nrows() * a.ncols() * b.ncols() < SPLIT_GEMM_MIN_WORK {
        return a * b;
    }
    SplitMat::from_complex(a).mul(&SplitMat::from_complex(b)).to_complex()
}

/// `a * b^H`.
pub fn cmul_adj(a: &CMat, b: &CMat) -> CMat {
    cmul(a, &b.adjoint())
}

/// `sigma2 * I + Σ (A_i A_i^H)` for the given factors, all with equal row count.
pub fn gram_plus_identity(factors: &[&CMat], sigma2: f64, n: usize) -> CMat {
    let mut out = CMat::identity(n, n) * C64::new(sigma2, 0.0);
    for a in factors {
        out += cmul_adj(a, a);
    }
    out
}

/// Cholesky factorization of a Hermitian positive definite matrix.
pub struct Hpd {
    chol: Cholesky<C64, Dyn>,
}

impl Hpd {
    pub fn new(m: &CMat, context: &'static str) -> Result<Self> {
        // The complex factorization takes complex square roots of the
        // pivots, so a negative pivot does not fail by itself.
        let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { context })?;
        let l = chol.l_dirty();
        let pivots_ok = (0..l.nrows()).all(|i| {
            let d = l[(i, i)];
            d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-8 * d.re
        });
        if pivots_ok {
            Ok(Hpd { chol })
        } else {
            Err(Error::NotPositiveDefinite { context })
        }
    }

    /// Natural log-determinant from the factor diagonal.
    pub fn ln_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>()
    }

    pub fn solve(&self, rhs: &CMat) -> CMat {
        self.chol.solve(rhs)
    }

    /// `L^{-1} rhs` with `L` the lower Cholesky factor.
    pub fn whiten(&self, rhs: &CMat) -> CMat {
        let mut out = rhs.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn inverse(&self) -> CMat {
        hermitian_part(&self.chol.inverse())
    }
}

/// Complex matrix stored as separate real and imaginary parts so products
/// run through the optimized real GEMM kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMat {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl SplitMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SplitMat {
            re: DMatrix::zeros(rows, cols),
            im: DMatrix::zeros(rows, cols),
        }
    }

    pub fn from_complex(m: &CMat) -> Self {
        SplitMat {
            re: m.map(|z| z.re),
            im: m.map(|z| z.im),
        }
    }

    pub fn to_complex(&self) -> CMat {
        self.re.zip_map(&self.im, C64::new)
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.re.ncols()
    }

    pub fn adjoint(&self) -> Self {
        SplitMat {
            re: self.re.transpose(),
            im: -self.im.transpose(),
        }
    }

    /// `out = self * rhs`.
    pub fn mul_to(&self, rhs: &SplitMat, out: &mut SplitMat) {
        out.re.gemm(1.0, &self.re, &rhs.re, 0.0);
        out.re.gemm(-1.0, &self.im, &rhs.im, 1.0);
        out.im.gemm(1.0, &self.re, &rhs.im, 0.0);
        out.im.gemm(1.0, &self.im, &rhs.re, 1.0);
    }

    pub fn mul(&self, rhs: &SplitMat) -> SplitMat {
        let mut out = SplitMat::zeros(self.nrows(), rhs.ncols());
        self.mul_to(rhs, &mut out);
        out
    }
}
