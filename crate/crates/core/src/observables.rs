//! Energy, fidelity, spin, 1-RDM, stopping-time detection and cost estimates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{operator_from_terms, Ladder, OperatorTerm, SectorBasis, SpinOrbital};
use crate::jumps::{effective_spectrum, JumpSet, ProtocolMode};
use crate::linalg::{
    c, hermitian_eigen, hermiticity_error, trace, trace_product, CMatrix, CVector,
};
use crate::spectral::Spectrum;

/// Chemical accuracy in Hartree.
pub const CHEMICAL_ACCURACY: f64 = 1.6e-3;

/// Number of further samples that must stay within chemical accuracy.
pub const PERSISTENCE_SAMPLES: usize = 20;

/// Tolerated negative radicand in the multiplicity estimator.
const RADICAND_TOL: f64 = 1e-8;

/// Observables recorded along a run, one entry per sample time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub infidelity: Vec<f64>,
    pub s2: Vec<f64>,
    pub multiplicity: Vec<f64>,
    pub trace_err: Vec<f64>,
    /// `max(0, −λ_min(ρ))`
    pub pos_err: Vec<f64>,
    /// `max |ρ − ρ†|`
    pub herm_err: Vec<f64>,
}

impl ObservableSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, s: &Sample) {
        self.times.push(t);
        self.energy.push(s.energy);
        self.infidelity.push(s.infidelity);
        self.s2.push(s.s2);
        self.multiplicity.push(s.multiplicity);
        self.trace_err.push(s.trace_err);
        self.pos_err.push(s.pos_err);
        self.herm_err.push(s.herm_err);
    }

    pub fn last(&self) -> Option<Sample> {
        let i = self.len().checked_sub(1)?;
        Some(Sample {
            energy: self.energy[i],
            infidelity: self.infidelity[i],
            s2: self.s2[i],
            multiplicity: self.multiplicity[i],
            trace_err: self.trace_err[i],
            pos_err: self.pos_err[i],
            herm_err: self.herm_err[i],
        })
    }
}

/// Observables at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Sample {
    pub energy: f64,
    pub infidelity: f64,
    pub s2: f64,
    pub multiplicity: f64,
    pub trace_err: f64,
    pub pos_err: f64,
    pub herm_err: f64,
}

/// Operators and target vectors that every sample evaluates.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    pub hamiltonian: CMatrix,
    pub spin_square: Option<CMatrix>,
    /// Orthonormal basis of the target subspace.
    pub targets: Vec<CVector>,
}

impl ObservableSet {
    pub fn new(
        hamiltonian: CMatrix,
        spin_square: Option<CMatrix>,
        targets: Vec<CVector>,
    ) -> Result<Self> {
        check_orthonormal(&targets)?;
        Ok(ObservableSet {
            hamiltonian,
            spin_square,
            targets,
        })
    }

    /// Sample a density matrix, including positivity and trace diagnostics.
    pub fn measure_density(&self, rho: &CMatrix) -> Result<Sample> {
        let s2 = self
            .spin_square
            .as_ref()
            .map_or(0.0, |op| trace_product(op, rho).re);
        let (eigs, _) = hermitian_eigen(rho);
        Ok(Sample {
            energy: trace_product(&self.hamiltonian, rho).re,
            infidelity: 1.0 - subspace_weight(rho, &self.targets),
            s2,
            multiplicity: multiplicity_from_s2(s2)?,
            trace_err: (trace(rho) - c(1.0, 0.0)).norm(),
            pos_err: eigs.first().map_or(0.0, |&m| (-m).max(0.0)),
            herm_err: hermiticity_error(rho),
        })
    }

    /// Sample a pure state; `psi` need not be normalized.
    pub fn measure_state(&self, psi: &CVector) -> Result<Sample> {
        let norm2 = psi.norm_squared();
        if norm2 <= 0.0 {
            return Err(Error::Numerical("zero state vector".into()));
        }
        let expect = |op: &CMatrix| psi.dotc(&(op * psi)).re / norm2;
        let s2 = self.spin_square.as_ref().map_or(0.0, expect);
        let weight: f64 = self
            .targets
            .iter()
            .map(|v| v.dotc(psi).norm_sqr())
            .sum::<f64>()
            / norm2;
        Ok(Sample {
            energy: expect(&self.hamiltonian),
            infidelity: 1.0 - weight,
            s2,
            multiplicity: multiplicity_from_s2(s2)?,
            ..Sample::default()
        })
    }
}

fn check_orthonormal(states: &[CVector]) -> Result<()> {
    for (i, u) in states.iter().enumerate() {
        for (j, v) in states.iter().enumerate().skip(i) {
            let expected = if i == j { 1.0 } else { 0.0 };
            if (u.dotc(v) - c(expected, 0.0)).norm() > 1e-8 {
                return Err(Error::parameter(format!(
                    "target states {i} and {j} are not orthonormal"
                )));
            }
        }
    }
    Ok(())
}

fn subspace_weight(rho: &CMatrix, states: &[CVector]) -> f64 {
    states.iter().map(|v| v.dotc(&(rho * v)).re).sum()
}

/// `Σ_i ⟨v_i|ρ|v_i⟩` for orthonormal `v_i`.
pub fn fidelity_subspace(rho: &CMatrix, states: &[CVector]) -> Result<f64> {
    check_orthonormal(states)?;
    Ok(subspace_weight(rho, states))
}

/// `√(1 + 4⟨Ŝ²⟩)`, equal to `2S+1` on spin eigenstates.
pub fn multiplicity_from_s2(s2: f64) -> Result<f64> {
    let radicand = 1.0 + 4.0 * s2;
    if radicand < -RADICAND_TOL {
        return Err(Error::Numerical(format!(
            "⟨S²⟩ = {s2} gives a negative multiplicity radicand"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

pub fn multiplicity(rho: &CMatrix, s2op: &CMatrix) -> Result<f64> {
    multiplicity_from_s2(trace_product(s2op, rho).re)
}

/// One-body reduced density matrices.
#[derive(Debug, Clone)]
pub struct OneRdm {
    /// `D_ij = Tr(ρ c†_j c_i)` over interleaved spin-orbitals.
    pub spin_orbital: CMatrix,
    /// Spin-summed spatial block.
    pub spatial: CMatrix,
}

pub fn one_rdm(rho: &CMatrix, basis: &SectorBasis) -> Result<OneRdm> {
    if rho.nrows() != basis.dim() {
        return Err(Error::parameter("density matrix does not match the basis"));
    }
    let l = basis.n_orbitals();
    let n = 2 * l;
    let mut d = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (si, sj) = (
                SpinOrbital::from_flat_index(i),
                SpinOrbital::from_flat_index(j),
            );
            if si.spin != sj.spin {
                continue;
            }
            let term = OperatorTerm::new(
                c(1.0, 0.0),
                vec![Ladder::create(sj), Ladder::annihilate(si)],
            );
            let op = operator_from_terms(basis, &[term])?;
            d[(i, j)] = trace_product(&op.to_dense(), rho);
        }
    }
    let spatial = CMatrix::from_fn(l, l, |p, q| d[(2 * p, 2 * q)] + d[(2 * p + 1, 2 * q + 1)]);
    Ok(OneRdm {
        spin_orbital: d,
        spatial,
    })
}

/// `Φ D Φ†` for a coefficient matrix with orbitals as columns.
pub fn rotate_rdm(d: &CMatrix, phi: &CMatrix) -> CMatrix {
    crate::linalg::from_basis(phi, d)
}

/// Earliest sample time whose energy error, and that of the following
/// [`PERSISTENCE_SAMPLES`] samples, is below [`CHEMICAL_ACCURACY`].
pub fn time_to_chemical_accuracy(series: &ObservableSeries, e_ref: f64) -> Option<f64> {
    let ok: Vec<bool> = series
        .energy
        .iter()
        .map(|e| (e - e_ref).abs() < CHEMICAL_ACCURACY)
        .collect();
    let window = PERSISTENCE_SAMPLES + 1;
    if ok.len() < window {
        return None;
    }
    (0..=ok.len() - window)
        .find(|&i| ok[i..i + window].iter().all(|&b| b))
        .map(|i| series.times[i])
}

/// Cost proxies for one protocol run.
#[derive(Debug, Clone, Serialize)]
pub struct ResourceEstimate {
    pub available: bool,
    pub note: Option<String>,
    /// Lindblad time to chemical accuracy.
    pub time: Option<f64>,
    /// Per-jump Hamiltonian simulation cost proxy.
    pub c_k: Option<f64>,
    /// Radius over gap of the spectrum the jumps are filtered against.
    pub effective_ratio: Option<f64>,
    /// `Σ_k ‖K_k‖²`
    pub k_norms: f64,
    /// `‖H‖ + ½ Σ_k ‖K_k‖²`
    pub l_be_norm: f64,
    /// `T · C_K · Σ_k ‖K_k‖²`
    pub total: Option<f64>,
}

/// `C_K` is `‖H‖/Δ_H` in plain mode, its square in folded mode, and the
/// ratio over the levels at or above `μ` in projected mode.
pub fn resource_estimate(
    spec: &Spectrum,
    mode: ProtocolMode,
    jumps: &JumpSet,
    time: Option<f64>,
) -> Result<ResourceEstimate> {
    let k_norms = jumps.norm_sum();
    let l_be_norm = spec.radius + 0.5 * k_norms;
    let effective = effective_spectrum(spec, mode)?;
    let effective_ratio = effective.condition_ratio();
    let c_k = match mode {
        ProtocolMode::Plain => spec.condition_ratio(),
        ProtocolMode::Folded { .. } => spec.condition_ratio().map(|r| r * r),
        ProtocolMode::Projected { .. } => effective_ratio,
    };
    let note = match (c_k, time) {
        (None, _) => Some("trivial spectrum: the gap is undefined".to_string()),
        (_, None) => Some("chemical accuracy not reached".to_string()),
        _ => None,
    };
    let total = match (c_k, time) {
        (Some(ck), Some(t)) => Some(t * ck * k_norms),
        _ => None,
    };
    Ok(ResourceEstimate {
        available: total.is_some(),
        note,
        time,
        c_k,
        effective_ratio,
        k_norms,
        l_be_norm,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::enumerate_sector;
    use crate::hamiltonian::{assemble_hamiltonian, build_reference_state, ReferenceSpec};
    use crate::integrals::hubbard_integrals;
    use crate::linalg::{identity, matmul, max_abs_diff};
    use crate::spectral::{eigendecompose, DEFAULT_DENSE_LIMIT};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn projector(v: &CVector) -> CMatrix {
        v * v.adjoint()
    }

    #[test]
    fn fidelity_basics() {
        let mut v = CVector::zeros(4);
        v[1] = c(1.0, 0.0);
        assert!((fidelity_subspace(&projector(&v), &[v.clone()]).unwrap() - 1.0).abs() < 1e-15);
        let mixed = identity(4) / c(4.0, 0.0);
        let mut w = CVector::zeros(4);
        w[2] = c(1.0, 0.0);
        assert!((fidelity_subspace(&mixed, &[v.clone(), w]).unwrap() - 0.5).abs() < 1e-15);
        assert!(fidelity_subspace(&mixed, &[v.clone(), v]).is_err());
    }

    #[test]
    fn multiplicity_values() {
        for (s2, m) in [(2.0, 3.0), (0.0, 1.0), (6.0, 5.0), (0.75, 2.0)] {
            assert!((multiplicity_from_s2(s2).unwrap() - m).abs() < 1e-15);
        }
        assert!(multiplicity_from_s2(-0.26 - 1e-6).is_err());
        assert!(multiplicity_from_s2(-0.25 - 1e-9).unwrap() < 1e-3);
    }

    #[test]
    fn rdm_of_aufbau_and_trace() {
        let basis = enumerate_sector(3, 2, 1).unwrap();
        let hf = build_reference_state(&basis, &ReferenceSpec::HfAufbau).unwrap();
        let rdm = one_rdm(&projector(&hf.amplitudes), &basis).unwrap();
        let expected_diag = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        for (k, e) in expected_diag.iter().enumerate() {
            assert!((rdm.spin_orbital[(k, k)].re - e).abs() < 1e-15);
        }
        assert!((trace(&rdm.spatial).re - 3.0).abs() < 1e-14);
        let mixed = identity(basis.dim()) / c(basis.dim() as f64, 0.0);
        assert!((trace(&one_rdm(&mixed, &basis).unwrap().spatial).re - 3.0).abs() < 1e-12);
    }

    /// Ground state of the dimer is `cosθ (|covalent⟩) + sinθ (|ionic⟩)`
    /// with `tan 2θ = 4t/U`; the double occupancy per site is `sin²θ / 2`.
    #[test]
    fn dimer_double_occupancy_from_rdm_and_ci() {
        let ints = hubbard_integrals(2, 1.0, 4.0).unwrap();
        let basis = enumerate_sector(2, 1, 1).unwrap();
        let h = assemble_hamiltonian(&ints, &basis).unwrap();
        let spec = eigendecompose(&h, None, DEFAULT_DENSE_LIMIT).unwrap();
        let g = spec.vector(0);
        let rho = projector(&g);
        let theta = 0.5 * (4.0f64 / 4.0).atan();
        let ionic = theta.sin().powi(2);
        // double occupancy of site 1 from the density directly
        let n1a_n1b = operator_from_terms(
            &basis,
            &crate::fock::parse_operator("c+1a c+1b c1b c1a").unwrap(),
        )
        .unwrap()
        .to_dense();
        let d_occ = trace_product(&n1a_n1b, &rho).re;
        assert!((d_occ - ionic / 2.0).abs() < 1e-12);
        // site occupations are one each; the hopping coherence is sin 2θ
        let rdm = one_rdm(&rho, &basis).unwrap();
        assert!((rdm.spatial[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((rdm.spatial[(0, 1)].re.abs() - (2.0 * theta).sin()).abs() < 1e-12);
    }

    #[test]
    fn chemical_accuracy_detector() {
        let mk = |e: Vec<f64>| ObservableSeries {
            times: (0..e.len()).map(|i| i as f64 * 0.1).collect(),
            energy: e,
            ..ObservableSeries::default()
        };
        let flat = mk(vec![1.0; 30]);
        assert_eq!(time_to_chemical_accuracy(&flat, 1.0), Some(0.0));
        let mut e = vec![2.0; 5];
        e.extend(vec![1.0; 10]);
        e.extend(vec![2.0; 5]);
        e.extend(vec![1.0; 25]);
        let t = time_to_chemical_accuracy(&mk(e), 1.0).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert_eq!(time_to_chemical_accuracy(&mk(vec![1.0; 20]), 1.0), None);
    }

    #[test]
    fn dimer_resource_ratio() {
        let ints = hubbard_integrals(2, 1.0, 4.0).unwrap();
        let basis = enumerate_sector(2, 1, 1).unwrap();
        let spec = eigendecompose(
            &assemble_hamiltonian(&ints, &basis).unwrap(),
            None,
            DEFAULT_DENSE_LIMIT,
        )
        .unwrap();
        let jumps = JumpSet::empty();
        let plain = resource_estimate(&spec, ProtocolMode::Plain, &jumps, Some(1.0)).unwrap();
        assert!((plain.c_k.unwrap() - 5.828_427_124_746_19).abs() < 1e-10);
        let folded =
            resource_estimate(&spec, ProtocolMode::Folded { mu: -0.2 }, &jumps, None).unwrap();
        assert!(!folded.available);
        assert!((folded.c_k.unwrap() - plain.c_k.unwrap().powi(2)).abs() < 1e-10);

        let basis20 = enumerate_sector(2, 2, 0).unwrap();
        let trivial =
            eigendecompose(&assemble_hamiltonian(&ints, &basis20).unwrap(), None, 10).unwrap();
        let est = resource_estimate(&trivial, ProtocolMode::Plain, &jumps, Some(1.0)).unwrap();
        assert!(!est.available && est.c_k.is_none());
    }

    fn random_state(n: usize, rng: &mut impl Rng) -> CVector {
        let v = CVector::from_fn(n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let norm = v.norm();
        v / c(norm, 0.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fidelity_is_basis_independent(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let psi = random_state(n, &mut rng);
            let rho = projector(&psi);
            // orthonormal pair from a random unitary
            let g = CMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let (_, u) = hermitian_eigen(&(&g + g.adjoint()));
            let v0 = u.column(0).into_owned();
            let v1 = u.column(1).into_owned();
            let (a, b) = (0.6, 0.8);
            let phase = c(0.3f64.cos(), 0.3f64.sin());
            let w0 = &v0 * c(a, 0.0) + &v1 * (phase * b);
            let w1 = &v0 * c(-b, 0.0) + &v1 * (phase * a);
            let f1 = fidelity_subspace(&rho, &[v0, v1]).unwrap();
            let f2 = fidelity_subspace(&rho, &[w0, w1]).unwrap();
            prop_assert!((f1 - f2).abs() < 1e-10);
        }

        #[test]
        fn rdm_is_linear_in_the_state(seed in any::<u64>(), p in 0.0f64..1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let basis = enumerate_sector(3, 2, 1).unwrap();
            let r1 = projector(&random_state(basis.dim(), &mut rng));
            let r2 = projector(&random_state(basis.dim(), &mut rng));
            let mix = &r1 * c(p, 0.0) + &r2 * c(1.0 - p, 0.0);
            let d1 = one_rdm(&r1, &basis).unwrap().spin_orbital;
            let d2 = one_rdm(&r2, &basis).unwrap().spin_orbital;
            let dm = one_rdm(&mix, &basis).unwrap().spin_orbital;
            let expected = d1 * c(p, 0.0) + d2 * c(1.0 - p, 0.0);
            prop_assert!(max_abs_diff(&dm, &expected) < 1e-12);
            prop_assert!(hermiticity_error(&dm) < 1e-12);
            prop_assert!((trace(&dm).re - 3.0).abs() < 1e-12);
        }

        #[test]
        fn detector_is_monotone_under_truncation(seed in any::<u64>(), cut in 0usize..80) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 80;
            let energy: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.9) { 0.0 } else { 1.0 }).collect();
            let full = ObservableSeries { times: (0..n).map(|i| i as f64).collect(), energy, ..Default::default() };
            let mut short = full.clone();
            short.times.truncate(cut);
            short.energy.truncate(cut);
            if let Some(t_short) = time_to_chemical_accuracy(&short, 0.0) {
                prop_assert_eq!(time_to_chemical_accuracy(&full, 0.0), Some(t_short));
            }
        }
    }

    #[test]
    fn measure_state_matches_density() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = {
            let g = CMatrix::from_fn(5, 5, |_, _| {
                c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            &g + g.adjoint()
        };
        let psi = random_state(5, &mut rng);
        let (_, u) = hermitian_eigen(&h);
        let set = ObservableSet::new(
            h.clone(),
            Some(matmul(&h, &h)),
            vec![u.column(0).into_owned()],
        )
        .unwrap();
        let a = set.measure_state(&(&psi * c(2.0, 0.0))).unwrap();
        let b = set.measure_density(&projector(&psi)).unwrap();
        assert!((a.energy - b.energy).abs() < 1e-12);
        assert!((a.infidelity - b.infidelity).abs() < 1e-12);
        assert!((a.s2 - b.s2).abs() < 1e-12);
    }
}
