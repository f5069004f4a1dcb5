//! Second-quantized Hamiltonian, total-spin operator and reference states.

use crate::error::{Error, Result};
use crate::fock::{
    operator_from_action, Determinant, Ladder, OperatorMatrix, SectorBasis, Spin, SpinOrbital,
};
use crate::integrals::IntegralSet;
use crate::linalg::{c, identity, max_abs_diff, CMatrix, CVector, C64};

/// Integral magnitudes at or below this are skipped during assembly.
const INTEGRAL_CUTOFF: f64 = 1e-14;

/// `H = Σ h_pq Σ_σ c†_pσ c_qσ + ½ Σ V_pqrs Σ_στ c†_pσ c†_qτ c_sτ c_rσ + E_core`
/// restricted to `basis`.
pub fn assemble_hamiltonian(ints: &IntegralSet, basis: &SectorBasis) -> Result<OperatorMatrix> {
    let l = ints.n_orbitals;
    if l != basis.n_orbitals() {
        return Err(Error::parameter(format!(
            "integrals cover {l} orbitals but the basis has {}",
            basis.n_orbitals()
        )));
    }
    let spins = [Spin::Alpha, Spin::Beta];
    let so = |p: usize, s: Spin| SpinOrbital::new(p + 1, s);

    // nonzero (p,q,r,s) quadruples, collected once
    let mut two_body = Vec::new();
    for p in 0..l {
        for q in 0..l {
            for r in 0..l {
                for s in 0..l {
                    let v = ints.v(p, q, r, s);
                    if v.abs() > INTEGRAL_CUTOFF {
                        two_body.push((p, q, r, s, 0.5 * v));
                    }
                }
            }
        }
    }

    let matrix = operator_from_action(basis, |det, out| {
        out.push((det, c(ints.core_energy, 0.0)));
        for &sigma in &spins {
            for q in 0..l {
                if !det.is_occupied(so(q, sigma)) {
                    continue;
                }
                for p in 0..l {
                    let h = ints.one_body[(p, q)];
                    if h.abs() <= INTEGRAL_CUTOFF {
                        continue;
                    }
                    let string = [
                        Ladder::create(so(p, sigma)),
                        Ladder::annihilate(so(q, sigma)),
                    ];
                    if let Some((sign, next)) = det.apply_string(&string) {
                        out.push((next, c(sign * h, 0.0)));
                    }
                }
            }
        }
        for &(p, q, r, s, half_v) in &two_body {
            for &sigma in &spins {
                if !det.is_occupied(so(r, sigma)) {
                    continue;
                }
                for &tau in &spins {
                    let string = [
                        Ladder::create(so(p, sigma)),
                        Ladder::create(so(q, tau)),
                        Ladder::annihilate(so(s, tau)),
                        Ladder::annihilate(so(r, sigma)),
                    ];
                    if let Some((sign, next)) = det.apply_string(&string) {
                        out.push((next, c(sign * half_v, 0.0)));
                    }
                }
            }
        }
    });
    Ok(matrix)
}

/// Inputs for the total-spin operator. `overlap` is `Φα†Φβ`, the overlap
/// between α and β spatial orbitals; the identity for restricted orbitals.
#[derive(Debug, Clone)]
pub struct SpinOpsInput {
    pub overlap: CMatrix,
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl SpinOpsInput {
    pub fn restricted(n_orbitals: usize, n_alpha: usize, n_beta: usize) -> Self {
        SpinOpsInput {
            overlap: identity(n_orbitals),
            n_alpha,
            n_beta,
        }
    }
}

/// `Ŝ² = −Σ M_ij (M†)_kl c†_iα c_lα c†_kβ c_jβ + (Nα+Nβ)/2 + (Nα−Nβ)²/4`
pub fn spin_square_operator(basis: &SectorBasis, input: &SpinOpsInput) -> Result<OperatorMatrix> {
    let l = basis.n_orbitals();
    let (na, nb) = basis
        .sector()
        .ok_or_else(|| Error::parameter("total spin needs a fixed (Nα,Nβ) sector"))?;
    if (na, nb) != (input.n_alpha, input.n_beta) {
        return Err(Error::parameter(format!(
            "spin input is for ({},{}) but the basis sector is ({na},{nb})",
            input.n_alpha, input.n_beta
        )));
    }
    let m = &input.overlap;
    if m.nrows() != l || m.ncols() != l {
        return Err(Error::parameter("orbital overlap matrix has wrong shape"));
    }
    let defect = max_abs_diff(&(m.adjoint() * m), &identity(l));
    if defect > 1e-8 {
        return Err(Error::parameter(format!(
            "orbital overlap matrix is not unitary (defect {defect:e})"
        )));
    }
    let m_dag = m.adjoint();
    let constant = (na + nb) as f64 / 2.0 + ((na as f64 - nb as f64).powi(2)) / 4.0;

    let mut quads = Vec::new();
    for i in 0..l {
        for j in 0..l {
            if m[(i, j)].norm() <= INTEGRAL_CUTOFF {
                continue;
            }
            for k in 0..l {
                for q in 0..l {
                    let coeff = -m[(i, j)] * m_dag[(k, q)];
                    if coeff.norm() > INTEGRAL_CUTOFF {
                        quads.push((i, j, k, q, coeff));
                    }
                }
            }
        }
    }
    Ok(operator_from_action(basis, |det, out| {
        out.push((det, c(constant, 0.0)));
        for &(i, j, k, q, coeff) in &quads {
            let string = [
                Ladder::create(SpinOrbital::alpha(i + 1)),
                Ladder::annihilate(SpinOrbital::alpha(q + 1)),
                Ladder::create(SpinOrbital::beta(k + 1)),
                Ladder::annihilate(SpinOrbital::beta(j + 1)),
            ];
            if let Some((sign, next)) = det.apply_string(&string) {
                out.push((next, coeff * sign));
            }
        }
    }))
}

/// A normalized state vector over a sector basis.
#[derive(Debug, Clone)]
pub struct ReferenceState {
    pub amplitudes: CVector,
}

impl ReferenceState {
    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }
}

/// How to build an initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    /// Lowest `Nα` α and lowest `Nβ` β orbitals filled.
    HfAufbau,
    /// Equal-weight combination of four doubly excited determinants built on
    /// the aufbau state of a 5-orbital, (3,3) system.
    HighSpinD,
    /// Weighted determinants; weights are normalized.
    Determinants(Vec<(C64, Vec<SpinOrbital>)>),
}

/// The aufbau determinant of a sector.
pub fn aufbau_determinant(n_alpha: usize, n_beta: usize) -> Result<Determinant> {
    let mut occ = Vec::new();
    occ.extend((1..=n_alpha).map(SpinOrbital::alpha));
    occ.extend((1..=n_beta).map(SpinOrbital::beta));
    Determinant::from_orbitals(&occ)
}

/// Excitations `(holes i,j ; particles a,b)` of the high-spin preset, read as
/// `c†_a c†_b c_i c_j |HF⟩`. The last one promotes `2α3α → 4α5α`: moving an α
/// electron into a β orbital would leave the sector.
fn high_spin_excitations() -> [[SpinOrbital; 4]; 4] {
    use SpinOrbital as S;
    [
        [S::beta(4), S::alpha(5), S::beta(2), S::alpha(3)],
        [S::alpha(4), S::beta(5), S::alpha(2), S::beta(3)],
        [S::beta(4), S::beta(5), S::beta(2), S::beta(3)],
        [S::alpha(4), S::alpha(5), S::alpha(2), S::alpha(3)],
    ]
}

pub fn build_reference_state(basis: &SectorBasis, spec: &ReferenceSpec) -> Result<ReferenceState> {
    let (na, nb) = basis
        .sector()
        .ok_or_else(|| Error::parameter("reference states need a fixed (Nα,Nβ) sector"))?;
    let place = |det: Determinant| {
        basis.index_of(det).ok_or_else(|| {
            Error::parameter(format!(
                "determinant {:?} is not in the ({na},{nb}) sector over {} orbitals",
                det.occupied()
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>(),
                basis.n_orbitals()
            ))
        })
    };
    let mut amps = CVector::zeros(basis.dim());
    match spec {
        ReferenceSpec::HfAufbau => {
            amps[place(aufbau_determinant(na, nb)?)?] = c(1.0, 0.0);
        }
        ReferenceSpec::HighSpinD => {
            if basis.n_orbitals() < 5 || na < 3 || nb < 3 {
                return Err(Error::parameter(
                    "the high-spin preset needs at least 5 orbitals and Nα, Nβ ≥ 3",
                ));
            }
            let hf = aufbau_determinant(na, nb)?;
            for [a, b, i, j] in high_spin_excitations() {
                let string = [
                    Ladder::create(a),
                    Ladder::create(b),
                    Ladder::annihilate(i),
                    Ladder::annihilate(j),
                ];
                let (sign, det) = hf.apply_string(&string).ok_or_else(|| {
                    Error::parameter("high-spin excitation annihilates the aufbau state")
                })?;
                if (det.n_alpha(), det.n_beta()) != (na, nb) {
                    return Err(Error::parameter("high-spin determinant leaves the sector"));
                }
                amps[place(det)?] += c(0.5 * sign, 0.0);
            }
        }
        ReferenceSpec::Determinants(list) => {
            if list.is_empty() {
                return Err(Error::parameter("empty determinant list"));
            }
            for (weight, occ) in list {
                let det = Determinant::from_orbitals(occ)?;
                amps[place(det)?] += *weight;
            }
        }
    }
    let norm = amps.norm();
    if norm < 1e-12 {
        return Err(Error::parameter("reference state has zero norm"));
    }
    amps.unscale_mut(norm);
    Ok(ReferenceState { amplitudes: amps })
}
