//! Dense complex linear algebra helpers shared by every module.
//!
//! nalgebra's generic complex GEMM is an order of magnitude slower than its
//! real kernel, so [`matmul`] splits operands into real and imaginary parts
//! once matrices are large enough for it to pay off.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

const SPLIT_GEMM_MIN_DIM: usize = 24;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn split(m: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

/// Complex matrix product `a * b`.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul dimension mismatch");
    let small = a.nrows().max(a.ncols()).max(b.ncols()) < SPLIT_GEMM_MIN_DIM;
    if small {
        return a * b;
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let rr = &ar * &br;
    let ii = &ai * &bi;
    let ri = &ar * &bi;
    let ir = &ai * &br;
    CMatrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        c(rr[(i, j)] - ii[(i, j)], ri[(i, j)] + ir[(i, j)])
    })
}

/// `a * b * c`
pub fn matmul3(a: &CMatrix, b: &CMatrix, c: &CMatrix) -> CMatrix {
    matmul(&matmul(a, b), c)
}

/// Unitary similarity `u^† a u` (to the eigenbasis when `u` holds eigenvectors as columns).
pub fn to_basis(u: &CMatrix, a: &CMatrix) -> CMatrix {
    matmul3(&u.adjoint(), a, u)
}

/// Inverse of [`to_basis`]: `u a u^†`.
pub fn from_basis(u: &CMatrix, a: &CMatrix) -> CMatrix {
    matmul3(u, a, &u.adjoint())
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max |A - A^†|`
pub fn hermiticity_error(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
///
/// The input is symmetrized as `(A + A^†)/2` first so that rounding noise
/// in the stored matrix cannot produce complex eigenvalues.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_phase(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Rotate a vector so that its largest-magnitude component is real positive.
/// Makes eigenvector output reproducible across platforms.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_norm = -1.0;
    for (i, z) in v.iter().enumerate() {
        // prefer the first index among near-ties
        if z.norm() > best_norm + 1e-12 {
            best_norm = z.norm();
            best = i;
        }
    }
    if best_norm > 0.0 {
        let phase = v[best].conj() / v[best].norm();
        v.iter_mut().for_each(|z| *z *= phase);
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = matmul(&a.adjoint(), a);
    let (vals, _) = hermitian_eigen(&gram);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    a.clone().exp()
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
/// Uses [`matmul`] throughout, so it is much faster than [`expm`] for large
/// complex matrices.
pub fn expm_taylor(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    // infinity norm bounds the spectral radius
    let norm = (0..n)
        .map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * c(0.5f64.powi(squarings), 0.0);
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = matmul(&term, &scaled) / c(k as f64, 0.0);
        result += &term;
        if max_abs(&term) < 1e-18 * max_abs(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

/// `exp(-i * tau * m) v` by a truncated Taylor series, for short times only.
pub fn expmv_taylor(m: &CMatrix, v: &CVector, tau: f64) -> CVector {
    let mut result = v.clone();
    let mut term = v.clone();
    let scale = c(0.0, -tau);
    for k in 1..200 {
        term = (m * &term) * (scale / k as f64);
        result += &term;
        if term.norm() <= 1e-17 * result.norm().max(1e-300) {
            break;
        }
    }
    result
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// `<u|A|v>`
pub fn braket(u: &CVector, a: &CMatrix, v: &CVector) -> C64 {
    u.dotc(&(a * v))
}

/// `<v|A|v>` for Hermitian `A`, real part only.
pub fn expectation(a: &CMatrix, v: &CVector) -> f64 {
    braket(v, a, v).re
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().sum()
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}
