//! Coupling operators, filtered jump operators and the connectivity diagnostic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter_freq, filter_time, FilterSpec, QuadratureRule};
use crate::fock::{
    describe, operator_from_terms, parse_operator, OperatorMatrix, SectorBasis, Spin, SpinOrbital,
};
use crate::linalg::{c, from_basis, matmul, spectral_norm, to_basis, CMatrix, CVector, C64};
use crate::spectral::Spectrum;

/// Which family of coupling operators to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// `c†_iσ c_jσ + h.c.` for every `i < j` and both spins.
    #[serde(rename = "s_ii", alias = "sii")]
    SII,
    /// As [`CouplingKind::SII`] restricted to `j − i ≤ 2`.
    #[serde(rename = "s_ii_reduced", alias = "sii_reduced")]
    SIIReduced,
    /// Only the supplied expressions.
    Custom,
    /// The reduced set followed by the supplied expressions.
    Augmented,
}

/// Hermitian, number-conserving coupling operators `A_k`.
#[derive(Debug, Clone)]
pub struct CouplingSet {
    pub kind: CouplingKind,
    pub ops: Vec<(String, OperatorMatrix)>,
}

impl CouplingSet {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Named quartic coupling presets over active-space orbitals.
pub fn quartic_preset(name: &str) -> Option<Vec<&'static str>> {
    let list: &[&'static str] = match name {
        "carbon" => &[
            "c+2a c+3a c4a c5a + h.c.",
            "c+2a c3a c4a c+5a + h.c.",
            "c+2b c+3b c4b c5b + h.c.",
            "c+2b c3b c4b c+5b + h.c.",
            "c+2a c3a c+4b c5b + h.c.",
            "c+2a c3a c4b c+5b + h.c.",
        ],
        "h2o" => &[
            "c+4a c+5a c6a c7a + h.c.",
            "c+4a c5a c6a c+7a + h.c.",
            "c+4b c+5b c6b c7b + h.c.",
            "c+4b c5b c6b c+7b + h.c.",
            "c+4a c5a c+6b c7b + h.c.",
            "c+4a c5a c6b c+7b + h.c.",
        ],
        "benzene" => &[
            "c+2a c+4a c4a c5a + h.c.",
            "c+2a c4a c4a c+5a + h.c.",
            "c+2b c+2b c4b c4b + h.c.",
            "c+2b c2b c4b c+4b + h.c.",
            "c+2a c4a c+4b c5b + h.c.",
            "c+1a c3a c5b c+5b + h.c.",
        ],
        "ferrocene" => &[
            "c+3a c+6a c7a c7a + h.c.",
            "c+3a c6a c7a c+7a + h.c.",
            "c+3b c+6b c7b c7b + h.c.",
            "c+3b c6b c7b c+7b + h.c.",
            "c+3a c6a c+7b c7b + h.c.",
            "c+3a c6a c7b c+7b + h.c.",
        ],
        _ => return None,
    };
    Some(list.to_vec())
}

fn one_body_couplings(
    basis: &SectorBasis,
    max_distance: Option<usize>,
) -> Result<Vec<(String, OperatorMatrix)>> {
    let l = basis.n_orbitals();
    let mut ops = Vec::new();
    for spin in [Spin::Alpha, Spin::Beta] {
        for i in 1..=l {
            for j in i + 1..=l {
                if max_distance.is_some_and(|d| j - i > d) {
                    continue;
                }
                let expr = format!(
                    "c+{} c{} + h.c.",
                    SpinOrbital::new(i, spin),
                    SpinOrbital::new(j, spin)
                );
                let op = operator_from_terms(basis, &parse_operator(&expr)?)?;
                ops.push((expr, op));
            }
        }
    }
    Ok(ops)
}

/// Build a coupling set. `extra` holds operator expressions (see
/// [`parse_operator`]); each must be Hermitian and conserve `(Nα, Nβ)`.
pub fn coupling_set(
    basis: &SectorBasis,
    kind: CouplingKind,
    extra: &[String],
) -> Result<CouplingSet> {
    let mut ops = match kind {
        CouplingKind::SII => one_body_couplings(basis, None)?,
        CouplingKind::SIIReduced | CouplingKind::Augmented => one_body_couplings(basis, Some(2))?,
        CouplingKind::Custom => Vec::new(),
    };
    if matches!(kind, CouplingKind::SII | CouplingKind::SIIReduced) && !extra.is_empty() {
        return Err(Error::parameter(
            "extra coupling terms need the custom or augmented kind",
        ));
    }
    for expr in extra {
        let terms = parse_operator(expr)?;
        if let Some(t) = terms.iter().find(|t| !t.conserves_sector()) {
            return Err(Error::parameter(format!(
                "coupling `{expr}` changes (Nα,Nβ) by {:?} in term {}",
                t.particle_change(),
                describe(t)
            )));
        }
        let op = operator_from_terms(basis, &terms)?;
        let err = op.hermiticity_error();
        if err >= 1e-12 {
            return Err(Error::parameter(format!(
                "coupling `{expr}` is not Hermitian (max |A - A†| = {err:e}); append `+ h.c.`"
            )));
        }
        ops.push((expr.clone(), op));
    }
    if ops.is_empty() {
        return Err(Error::parameter("coupling set is empty"));
    }
    Ok(CouplingSet { kind, ops })
}

/// Which level the dissipation drives toward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProtocolMode {
    /// Ground level of `H`.
    Plain,
    /// Level nearest `μ`, via the spectrum of `(H − μ)²`.
    Folded { mu: f64 },
    /// Lowest level at or above `μ`, with transitions confined to `P_μ`.
    Projected { mu: f64 },
}

impl ProtocolMode {
    pub fn mu(&self) -> Option<f64> {
        match *self {
            ProtocolMode::Plain => None,
            ProtocolMode::Folded { mu } | ProtocolMode::Projected { mu } => Some(mu),
        }
    }

    fn check(&self) -> Result<()> {
        match self.mu() {
            Some(mu) if !mu.is_finite() => Err(Error::parameter("μ must be finite")),
            _ => Ok(()),
        }
    }
}

/// Per-eigenvector effective energies; `None` marks states outside the
/// projected support.
fn effective_energies(spec: &Spectrum, mode: ProtocolMode) -> Vec<Option<f64>> {
    spec.eigenvalues
        .iter()
        .map(|&x| match mode {
            ProtocolMode::Plain => Some(x),
            ProtocolMode::Folded { mu } => Some((x - mu).powi(2)),
            ProtocolMode::Projected { mu } => (x >= mu).then_some(x),
        })
        .collect()
}

/// The spectrum that the filtered dynamics sees: `(λ − μ)²` in folded mode,
/// the levels at or above `μ` in projected mode.
pub fn effective_spectrum(spec: &Spectrum, mode: ProtocolMode) -> Result<Spectrum> {
    mode.check()?;
    if mode == ProtocolMode::Plain {
        return Ok(spec.clone());
    }
    let pairs: Vec<(f64, CVector)> = effective_energies(spec, mode)
        .into_iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (e, spec.vector(i))))
        .collect();
    if pairs.is_empty() {
        return Err(Error::parameter(
            "μ lies above the whole spectrum; the projected support is empty",
        ));
    }
    let tol = match mode {
        ProtocolMode::Folded { .. } => None,
        _ => Some(spec.degeneracy_tol),
    };
    Ok(Spectrum::from_parts(pairs, tol))
}

/// Eigen-indices of `H` spanning the level the mode prepares.
pub fn target_indices(spec: &Spectrum, mode: ProtocolMode) -> Result<Vec<usize>> {
    let eff = effective_spectrum(spec, mode)?;
    let energies = effective_energies(spec, mode);
    let top = eff.eigenvalues[eff.levels[0].end - 1];
    Ok((0..spec.dim())
        .filter(|&i| energies[i].is_some_and(|e| e <= top))
        .collect())
}

/// How jump operators are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Construction {
    /// Exact filter weights on eigenbasis matrix elements.
    Eigenbasis,
    /// Trapezoidal time integral with `2M+1` nodes.
    Quadrature { m: usize },
}

/// Filtered jump operators, dense, in the sector determinant basis.
#[derive(Debug, Clone)]
pub struct JumpSet {
    pub labels: Vec<String>,
    pub ks: Vec<CMatrix>,
    pub mode: ProtocolMode,
    pub construction: Construction,
    pub hard_threshold: bool,
    /// `None` for a set that was never filtered.
    pub filter: Option<FilterSpec>,
}

impl JumpSet {
    pub fn empty() -> JumpSet {
        JumpSet {
            labels: Vec::new(),
            ks: Vec::new(),
            mode: ProtocolMode::Plain,
            construction: Construction::Eigenbasis,
            hard_threshold: true,
            filter: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    /// `Σ_k ‖K_k‖²` with spectral norms.
    pub fn norm_sum(&self) -> f64 {
        self.ks.iter().map(|k| spectral_norm(k).powi(2)).sum()
    }
}

fn check_dims(spec: &Spectrum, a: &CMatrix) -> Result<()> {
    if a.nrows() != spec.dim() || a.ncols() != spec.dim() {
        return Err(Error::parameter(format!(
            "coupling operator is {}×{} but the spectrum has dimension {}",
            a.nrows(),
            a.ncols(),
            spec.dim()
        )));
    }
    Ok(())
}

/// Filter weight matrix `F_ij` applied entrywise to eigenbasis elements.
fn eigenbasis_weights(
    spec: &Spectrum,
    filter: &FilterSpec,
    mode: ProtocolMode,
    hard: bool,
) -> Result<CMatrix> {
    let eps = effective_energies(spec, mode);
    let tol = effective_spectrum(spec, mode)?.degeneracy_tol;
    let n = spec.dim();
    Ok(CMatrix::from_fn(n, n, |i, j| match (eps[i], eps[j]) {
        (Some(ei), Some(ej)) => {
            if hard && ej - ei <= tol {
                c(0.0, 0.0)
            } else {
                c(filter_freq(filter, ei - ej), 0.0)
            }
        }
        _ => c(0.0, 0.0),
    }))
}

/// `K = Σ_ij f̂(ε_i − ε_j) ⟨ψ_i|A|ψ_j⟩ |ψ_i⟩⟨ψ_j|` with `ε` per mode. In
/// projected mode rows and columns below `μ` vanish. `hard` drops every
/// entry whose target level is not strictly below its source level.
pub fn jump_eigenbasis(
    spec: &Spectrum,
    a: &CMatrix,
    filter: &FilterSpec,
    mode: ProtocolMode,
    hard: bool,
) -> Result<CMatrix> {
    check_dims(spec, a)?;
    let w = eigenbasis_weights(spec, filter, mode, hard)?;
    let ab = to_basis(&spec.eigenvectors, a).component_mul(&w);
    Ok(from_basis(&spec.eigenvectors, &ab))
}

/// `K ≈ Σ_j w_j f(s_j) e^{iH̃s_j} A e^{−iH̃s_j}` evaluated in the eigenbasis
/// of `H̃` (`H`, or `(H−μ)²` in folded mode); projected mode sandwiches the
/// result between `P_μ`.
pub fn jump_quadrature(
    spec: &Spectrum,
    a: &CMatrix,
    filter: &FilterSpec,
    rule: &QuadratureRule,
    mode: ProtocolMode,
) -> Result<CMatrix> {
    check_dims(spec, a)?;
    let n = spec.dim();
    let eps: Vec<f64> = match mode {
        ProtocolMode::Folded { mu } => spec.eigenvalues.iter().map(|x| (x - mu).powi(2)).collect(),
        _ => spec.eigenvalues.clone(),
    };
    // G_ab = Σ_j w_j f(s_j) e^{iε_a s_j} e^{−iε_b s_j} as Φ·diag·Φ†
    let nodes = rule.nodes.len();
    let phase = CMatrix::from_fn(n, nodes, |i, j| {
        C64::from_polar(1.0, eps[i] * rule.nodes[j])
    });
    let mut scaled = phase.clone();
    for (j, (&s, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let factor = filter_time(filter, s) * w;
        for i in 0..n {
            scaled[(i, j)] *= factor;
        }
    }
    let mut g = matmul(&scaled, &phase.adjoint());
    if let ProtocolMode::Projected { mu } = mode {
        for i in 0..n {
            for j in 0..n {
                if spec.eigenvalues[i] < mu || spec.eigenvalues[j] < mu {
                    g[(i, j)] = c(0.0, 0.0);
                }
            }
        }
    }
    let ab = to_basis(&spec.eigenvectors, a).component_mul(&g);
    Ok(from_basis(&spec.eigenvectors, &ab))
}

/// Build one jump operator per coupling, in parallel.
pub fn build_jump_set(
    spec: &Spectrum,
    couplings: &CouplingSet,
    filter: &FilterSpec,
    mode: ProtocolMode,
    construction: Construction,
    hard_threshold: bool,
    rule: Option<&QuadratureRule>,
) -> Result<JumpSet> {
    mode.check()?;
    filter.validate()?;
    let ks: Vec<CMatrix> = couplings
        .ops
        .par_iter()
        .map(|(_, op)| {
            let a = op.to_dense();
            match construction {
                Construction::Eigenbasis => jump_eigenbasis(spec, &a, filter, mode, hard_threshold),
                Construction::Quadrature { m } => {
                    let owned;
                    let rule = match rule {
                        Some(r) => r,
                        None => {
                            owned = crate::filter::build_quadrature(filter, m);
                            &owned
                        }
                    };
                    jump_quadrature(spec, &a, filter, rule, mode)
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(JumpSet {
        labels: couplings.ops.iter().map(|(l, _)| l.clone()).collect(),
        ks,
        mode,
        construction,
        hard_threshold,
        filter: Some(*filter),
    })
}

/// Output of [`connectivity_rates`].
#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityReport {
    pub labels: Vec<String>,
    pub rates: Vec<f64>,
    pub dark: Vec<bool>,
    pub max_path: usize,
    pub threshold: f64,
}

/// `Γ_i = Σ_k Σ_{l=1..ℓ} |⟨target|K_k^l|ψ_i⟩|²`; states below
/// `1e-12 · Σ_k ‖K_k‖²` are flagged dark.
pub fn connectivity_rates(
    jumps: &JumpSet,
    target: &CVector,
    tests: &[(String, CVector)],
    max_path: usize,
) -> Result<ConnectivityReport> {
    if max_path == 0 {
        return Err(Error::parameter("path length must be at least 1"));
    }
    let threshold = 1e-12 * jumps.norm_sum();
    let mut rates = Vec::with_capacity(tests.len());
    for (_, psi) in tests {
        let mut gamma = 0.0;
        for k in &jumps.ks {
            let mut v = psi.clone();
            for _ in 0..max_path {
                v = k * &v;
                gamma += target.dotc(&v).norm_sqr();
            }
        }
        rates.push(gamma);
    }
    Ok(ConnectivityReport {
        labels: tests.iter().map(|t| t.0.clone()).collect(),
        dark: rates.iter().map(|&g| g < threshold).collect(),
        rates,
        max_path,
        threshold,
    })
}

/// `max_ij |(U†KU)_ij|` over entries that an energy-lowering operator must
/// not have (`i ≥ j` in ascending eigen-order).
pub fn upper_triangle_leak(spec: &Spectrum, k: &CMatrix) -> f64 {
    let kb = to_basis(&spec.eigenvectors, k);
    let n = spec.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max(kb[(i, j)].norm());
        }
    }
    worst
}
