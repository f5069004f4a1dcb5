//! Exact diagonalization and the spectral transforms built on it.

use log::warn;

use crate::error::{Error, Result};
use crate::fock::OperatorMatrix;
use crate::linalg::{c, hermitian_eigen, matmul, CMatrix, CVector};

/// Largest Hamiltonian dimension diagonalized densely by default.
pub const DEFAULT_DENSE_LIMIT: usize = 5000;

/// Input Hermiticity tolerance, relative to `max(1, max|H_ij|)`.
const HERMITIAN_TOL: f64 = 1e-10;

/// A cluster of eigenvalues that count as one level: indices `start..end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub energy: f64,
    pub start: usize,
    pub end: usize,
}

impl Level {
    pub fn degeneracy(&self) -> usize {
        self.end - self.start
    }
}

/// Sorted eigenpairs of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, in eigenvalue order.
    pub eigenvectors: CMatrix,
    pub degeneracy_tol: f64,
    pub levels: Vec<Level>,
    /// Spacing between the two lowest distinct levels; `None` when there is
    /// only one level.
    pub gap: Option<f64>,
    /// `max |λ_i|`
    pub radius: f64,
}

impl Spectrum {
    /// Diagonal spectrum with the given (unsorted) eigenvalues and eigenvectors.
    pub fn from_parts(mut pairs: Vec<(f64, CVector)>, degeneracy_tol: Option<f64>) -> Spectrum {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let dim = pairs.first().map_or(0, |p| p.1.len());
        let mut vectors = CMatrix::zeros(dim, n);
        for (k, (_, v)) in pairs.iter().enumerate() {
            vectors.set_column(k, v);
        }
        let values = pairs.into_iter().map(|p| p.0).collect();
        Spectrum::new(values, vectors, degeneracy_tol)
    }

    fn new(eigenvalues: Vec<f64>, eigenvectors: CMatrix, degeneracy_tol: Option<f64>) -> Spectrum {
        let radius = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = degeneracy_tol.unwrap_or(1e-8 * radius.max(1.0));
        let mut levels: Vec<Level> = Vec::new();
        for (i, &x) in eigenvalues.iter().enumerate() {
            match levels.last_mut() {
                // single-linkage against the previous eigenvalue
                Some(level) if x - eigenvalues[i - 1] <= tol => {
                    level.end = i + 1;
                    level.energy = eigenvalues[level.start..level.end].iter().sum::<f64>()
                        / level.degeneracy() as f64;
                }
                _ => levels.push(Level {
                    energy: x,
                    start: i,
                    end: i + 1,
                }),
            }
        }
        let gap = (levels.len() > 1).then(|| levels[1].energy - levels[0].energy);
        Spectrum {
            eigenvalues,
            eigenvectors,
            degeneracy_tol: tol,
            levels,
            gap,
            radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Column `i` of the eigenvector matrix.
    pub fn vector(&self, i: usize) -> CVector {
        self.eigenvectors.column(i).into_owned()
    }

    /// Orthonormal vectors spanning distinct level `level`.
    pub fn level_vectors(&self, level: usize) -> Vec<CVector> {
        let lv = self.levels[level];
        (lv.start..lv.end).map(|i| self.vector(i)).collect()
    }

    /// Distinct-level index of eigenvalue `i`.
    pub fn level_of(&self, i: usize) -> usize {
        self.levels
            .iter()
            .position(|lv| (lv.start..lv.end).contains(&i))
            .expect("eigen index in range")
    }

    /// Gap or a parameter error explaining that the spectrum is degenerate.
    pub fn require_gap(&self) -> Result<f64> {
        self.gap.ok_or_else(|| {
            Error::parameter(
                "spectrum has a single distinct level, so no gap is defined; supply the filter cutoff b explicitly",
            )
        })
    }

    /// Spectral radius divided by gap, the cost proxy of filtered jumps.
    pub fn condition_ratio(&self) -> Option<f64> {
        self.gap.map(|g| self.radius / g)
    }
}

/// Full eigendecomposition of a Hermitian operator.
pub fn eigendecompose(
    h: &OperatorMatrix,
    degeneracy_tol: Option<f64>,
    dense_limit: usize,
) -> Result<Spectrum> {
    if h.dim() > dense_limit {
        return Err(Error::Capacity(format!(
            "dimension {} exceeds the dense diagonalization limit {dense_limit}",
            h.dim()
        )));
    }
    let dense = h.to_dense();
    eigendecompose_dense(&dense, degeneracy_tol)
}

pub fn eigendecompose_dense(h: &CMatrix, degeneracy_tol: Option<f64>) -> Result<Spectrum> {
    let scale = crate::linalg::max_abs(h).max(1.0);
    let err = crate::linalg::hermiticity_error(h);
    if err > HERMITIAN_TOL * scale {
        return Err(Error::parameter(format!(
            "operator is not Hermitian (max |A - A†| = {err:e})"
        )));
    }
    let (values, vectors) = hermitian_eigen(h);
    Ok(Spectrum::new(values, vectors, degeneracy_tol))
}

/// `(H − μI)²`
pub fn folded_operator(h: &OperatorMatrix, mu: f64) -> OperatorMatrix {
    let mut shifted = h.to_dense();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] -= c(mu, 0.0);
    }
    let sq = matmul(&shifted, &shifted);
    OperatorMatrix::from_dense((&sq + sq.adjoint()).scale(0.5))
}

/// Admissible reference-energy window around one distinct level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MuWindow {
    pub target_level: usize,
    pub target_energy: f64,
    /// Midpoint to the next lower level, `-inf` for the lowest level.
    pub lower: f64,
    /// Midpoint to the next higher level, `+inf` for the highest level.
    pub upper: f64,
    pub mu: f64,
    pub valid: bool,
}

impl MuWindow {
    /// Center of the window when both sides are finite, else the target energy.
    pub fn center(&self) -> f64 {
        if self.lower.is_finite() && self.upper.is_finite() {
            0.5 * (self.lower + self.upper)
        } else {
            self.target_energy
        }
    }
}

/// Check the strict placement `(λ_t+λ_<)/2 < μ < (λ_>+λ_t)/2`.
pub fn validate_mu(spec: &Spectrum, target_level: usize, mu: f64) -> Result<MuWindow> {
    let n = spec.levels.len();
    if target_level >= n {
        return Err(Error::parameter(format!(
            "target level {target_level} out of range (spectrum has {n} distinct levels)"
        )));
    }
    let e = spec.levels[target_level].energy;
    let lower = if target_level == 0 {
        f64::NEG_INFINITY
    } else {
        0.5 * (e + spec.levels[target_level - 1].energy)
    };
    let upper = if target_level + 1 == n {
        f64::INFINITY
    } else {
        0.5 * (e + spec.levels[target_level + 1].energy)
    };
    Ok(MuWindow {
        target_level,
        target_energy: e,
        lower,
        upper,
        mu,
        valid: lower < mu && mu < upper,
    })
}

/// Placement window for the spectral projector: the target is the lowest
/// level kept by `P_μ` iff `λ_< < μ ≤ λ_t`. `lower` is the next lower level
/// (`-inf` for the ground level) and `upper` the target energy.
pub fn validate_projected_mu(spec: &Spectrum, target_level: usize, mu: f64) -> Result<MuWindow> {
    let n = spec.levels.len();
    if target_level >= n {
        return Err(Error::parameter(format!(
            "target level {target_level} out of range (spectrum has {n} distinct levels)"
        )));
    }
    let e = spec.levels[target_level].energy;
    let lower = if target_level == 0 {
        f64::NEG_INFINITY
    } else {
        spec.levels[target_level - 1].energy
    };
    Ok(MuWindow {
        target_level,
        target_energy: e,
        lower,
        upper: e,
        mu,
        valid: lower < mu && mu <= e,
    })
}

/// Indices of eigenvalues at or above `mu`.
pub fn support_at_or_above(spec: &Spectrum, mu: f64) -> Vec<usize> {
    (0..spec.dim())
        .filter(|&i| spec.eigenvalues[i] >= mu)
        .collect()
}

/// `P_μ = Σ_{λ_i ≥ μ} |ψ_i⟩⟨ψ_i|`
pub fn spectral_projector(spec: &Spectrum, mu: f64) -> CMatrix {
    if spec
        .eigenvalues
        .iter()
        .any(|&x| (x - mu).abs() <= spec.degeneracy_tol)
    {
        warn!("μ = {mu} coincides with an eigenvalue; the projector includes that level");
    }
    let support = support_at_or_above(spec, mu);
    let mut v = CMatrix::zeros(spec.dim(), support.len());
    for (k, &i) in support.iter().enumerate() {
        v.set_column(k, &spec.eigenvectors.column(i));
    }
    matmul(&v, &v.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::enumerate_sector;
    use crate::hamiltonian::assemble_hamiltonian;
    use crate::integrals::hubbard_integrals;
    use crate::linalg::{identity, max_abs_diff};
    use proptest::prelude::*;

    fn dimer() -> (OperatorMatrix, Spectrum) {
        let ints = hubbard_integrals(2, 1.0, 4.0).unwrap();
        let basis = enumerate_sector(2, 1, 1).unwrap();
        let h = assemble_hamiltonian(&ints, &basis).unwrap();
        let spec = eigendecompose(&h, None, DEFAULT_DENSE_LIMIT).unwrap();
        (h, spec)
    }

    const R8: f64 = 2.828_427_124_746_190_1;

    #[test]
    fn dimer_gap_and_radius() {
        let (_, s) = dimer();
        assert!((s.gap.unwrap() - (R8 - 2.0)).abs() < 1e-12);
        assert!((s.radius - (2.0 + R8)).abs() < 1e-12);
        assert_eq!(s.levels.len(), 4);
    }

    #[test]
    fn degenerate_and_trivial_spectra() {
        let h = OperatorMatrix::from_dense(identity(3) * c(2.5, 0.0));
        let s = eigendecompose(&h, None, DEFAULT_DENSE_LIMIT).unwrap();
        assert_eq!(s.levels.len(), 1);
        assert!(s.gap.is_none());
        assert!(s.require_gap().is_err());
        let one = OperatorMatrix::from_dense(identity(1));
        assert!(eigendecompose(&one, None, DEFAULT_DENSE_LIMIT)
            .unwrap()
            .gap
            .is_none());
    }

    #[test]
    fn limits_and_hermiticity() {
        let (h, _) = dimer();
        assert!(matches!(
            eigendecompose(&h, None, 3),
            Err(Error::Capacity(_))
        ));
        let mut m = identity(2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(
            eigendecompose(&OperatorMatrix::from_dense(m), None, 10),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn folded_dimer() {
        let (h, s) = dimer();
        let f = eigendecompose(&folded_operator(&h, -0.2), None, 10).unwrap();
        let mut expected: Vec<f64> = s.eigenvalues.iter().map(|x| (x + 0.2).powi(2)).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in f.eigenvalues.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((f.eigenvalues[0] - 0.04).abs() < 1e-12);
        // folded ground state is the triplet (λ = 0)
        let overlap = f.vector(0).dotc(&s.vector(1)).norm();
        assert!((overlap - 1.0).abs() < 1e-10);
        let at_target = eigendecompose(&folded_operator(&h, 0.0), None, 10).unwrap();
        assert!(at_target.eigenvalues[0].abs() < 1e-12);
    }

    #[test]
    fn mu_window() {
        let (_, s) = dimer();
        let w = validate_mu(&s, 1, -0.2).unwrap();
        assert!((w.lower - (1.0 - R8 / 2.0)).abs() < 1e-12);
        assert!((w.upper - 2.0).abs() < 1e-12);
        assert!(w.valid);
        assert!(validate_mu(&s, 1, 0.0).unwrap().valid);
        assert!(!validate_mu(&s, 1, w.lower).unwrap().valid);
        let ground = validate_mu(&s, 0, -100.0).unwrap();
        assert!(ground.valid && ground.lower == f64::NEG_INFINITY);
        assert_eq!(ground.center(), s.levels[0].energy);
        assert!(validate_mu(&s, 4, 0.0).is_err());
    }

    #[test]
    fn dimer_projector() {
        let (_, s) = dimer();
        let p = spectral_projector(&s, -0.4);
        let rank = crate::linalg::trace(&p).re;
        assert!((rank - 3.0).abs() < 1e-12);
        assert!(max_abs_diff(&spectral_projector(&s, -10.0), &identity(4)) < 1e-12);
        assert!(crate::linalg::max_abs(&spectral_projector(&s, 10.0)) == 0.0);
    }

    #[test]
    fn clustering_is_stable_under_small_perturbation() {
        let tol = 1e-6;
        let pairs = |eps: f64| {
            [0.0, 1.0, 1.0 + eps, 3.0]
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let mut v = CVector::zeros(4);
                    v[i] = c(1.0, 0.0);
                    (x, v)
                })
                .collect::<Vec<_>>()
        };
        let exact = Spectrum::from_parts(pairs(0.0), Some(tol));
        let perturbed = Spectrum::from_parts(pairs(0.49 * tol), Some(tol));
        assert_eq!(exact.levels.len(), 3);
        assert_eq!(perturbed.levels.len(), 3);
        assert_eq!(perturbed.levels[1].degeneracy(), 2);
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMatrix::from_fn(n, n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        (&a + a.adjoint()).scale(0.5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn projector_is_idempotent_and_commutes(n in 1usize..24, seed in any::<u64>(), mu in -3.0f64..3.0) {
            let h = random_hermitian(n, seed);
            let s = eigendecompose_dense(&h, None).unwrap();
            let p = spectral_projector(&s, mu);
            prop_assert!(max_abs_diff(&matmul(&p, &p), &p) < 1e-10);
            prop_assert!(max_abs_diff(&matmul(&p, &h), &matmul(&h, &p)) < 1e-10);
        }

        #[test]
        fn folded_eigenvalues_are_squared_shifts(n in 1usize..20, seed in any::<u64>(), mu in -3.0f64..3.0) {
            let h = random_hermitian(n, seed);
            let s = eigendecompose_dense(&h, None).unwrap();
            let f = eigendecompose(&folded_operator(&OperatorMatrix::from_dense(h), mu), None, 100).unwrap();
            let mut expected: Vec<f64> = s.eigenvalues.iter().map(|x| (x - mu).powi(2)).collect();
            expected.sort_by(f64::total_cmp);
            for (a, b) in f.eigenvalues.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
