//! End-to-end runs driven by a TOML configuration: integrals to report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    asp_propagate, lindbladian_gap, mc_trajectories, propagate_density, AspPath, GapReport,
    Lindbladian, NoiseSpec, PropagationMethod, TrajectorySettings, GAP_LIMIT,
};
use crate::error::{Error, Result};
use crate::filter::{build_quadrature, default_filter_params, FilterSpec, DEFAULT_NODES};
use crate::fock::{enumerate_sector, SectorBasis, SpinOrbital};
use crate::hamiltonian::{
    assemble_hamiltonian, build_reference_state, spin_square_operator, ReferenceSpec, SpinOpsInput,
};
use crate::integrals::{hubbard_integrals, parse_fcidump_bytes, IntegralSet};
use crate::jumps::{
    build_jump_set, connectivity_rates, coupling_set, effective_spectrum, quartic_preset,
    target_indices, ConnectivityReport, Construction, CouplingKind, JumpSet, ProtocolMode,
};
use crate::linalg::{c, frobenius, hermitian_eigen, identity, CMatrix, CVector, C64};
use crate::observables::{
    resource_estimate, time_to_chemical_accuracy, ObservableSeries, ObservableSet, ResourceEstimate,
};
use crate::spectral::{
    eigendecompose, spectral_projector, validate_mu, validate_projected_mu, MuWindow, Spectrum,
    DEFAULT_DENSE_LIMIT,
};

/// Header of every series file.
pub const SERIES_HEADER: &str = "time,energy,infidelity,s2,multiplicity,trace_err";

/// Sectors above this dimension cannot use the trajectory engine with noise,
/// which needs `D²` extra jump channels.
const NOISY_TRAJECTORY_LIMIT: usize = 64;

/// Dark-state diagnostics are evaluated for at most this many test states.
const DARK_STATE_TESTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub sector: SectorConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub couplings: CouplingConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Defaults to the maximally mixed state for the density engine and the
    /// aufbau determinant for trajectories.
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub asp: Option<AspConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Relative paths resolve against the config file's directory.
    pub fcidump: Option<PathBuf>,
    pub hubbard: Option<HubbardConfig>,
    /// Defaults to `molecular` for Hubbard chains and `given` for FCIDUMP input.
    pub orbitals: Option<OrbitalBasis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubbardConfig {
    pub sites: usize,
    pub t: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitalBasis {
    /// Orbitals as supplied (lattice sites for Hubbard chains).
    #[serde(alias = "site")]
    Given,
    /// Eigenvectors of the one-body matrix.
    #[serde(alias = "one_body_eigen")]
    Molecular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorConfig {
    pub n_alpha: usize,
    pub n_beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    #[default]
    Plain,
    /// Ground state of the chosen sector; identical dynamics to `plain`.
    Symmetry,
    Folded {
        mu: Option<f64>,
        target_level: Option<usize>,
    },
    Projected {
        mu: Option<f64>,
        target_level: Option<usize>,
    },
}

impl ProtocolConfig {
    fn name(&self) -> &'static str {
        match self {
            ProtocolConfig::Plain => "plain",
            ProtocolConfig::Symmetry => "symmetry",
            ProtocolConfig::Folded { .. } => "folded",
            ProtocolConfig::Projected { .. } => "projected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default = "default_coupling_kind")]
    pub kind: CouplingKind,
    /// Operator expressions such as `"c+1a c2a + h.c."`.
    #[serde(default)]
    pub terms: Vec<String>,
    /// Named quartic term list appended to `terms`.
    pub preset: Option<String>,
}

fn default_coupling_kind() -> CouplingKind {
    CouplingKind::SII
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            kind: CouplingKind::SII,
            terms: Vec::new(),
            preset: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineConfig {
    #[default]
    Density,
    Trajectories {
        #[serde(default = "default_n_traj")]
        n_traj: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        improved_sampling: bool,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
}

fn default_n_traj() -> usize {
    800
}

fn default_substeps() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionKind {
    #[default]
    Eigenbasis,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta_a: Option<f64>,
    pub delta_b: Option<f64>,
    pub s_max: Option<f64>,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default)]
    pub construction: ConstructionKind,
    /// Quadrature half-count `M`.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_true")]
    pub hard_threshold: bool,
}

fn default_safety() -> f64 {
    1.0
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

fn default_true() -> bool {
    true
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            a: None,
            b: None,
            delta_a: None,
            delta_b: None,
            s_max: None,
            safety: default_safety(),
            construction: ConstructionKind::Eigenbasis,
            nodes: DEFAULT_NODES,
            hard_threshold: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_t_total")]
    pub t_total: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_t_total() -> f64 {
    30.0
}

fn default_dt() -> f64 {
    0.1
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t_total: default_t_total(),
            dt: default_dt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    MaximallyMixed,
    HfAufbau,
    HighSpinD,
    Determinants {
        terms: Vec<DeterminantEntry>,
    },
    /// Eigenvector `index` of `H` in ascending order.
    Eigenstate {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminantEntry {
    #[serde(default = "default_coefficient")]
    pub coefficient: Coefficient,
    /// Spin-orbitals such as `"1a"`, `"2b"`.
    pub occupied: Vec<String>,
}

fn default_coefficient() -> Coefficient {
    Coefficient::Real(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Real(f64),
    Complex([f64; 2]),
}

impl Coefficient {
    fn value(self) -> C64 {
        match self {
            Coefficient::Real(x) => c(x, 0.0),
            Coefficient::Complex([re, im]) => c(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Reference energy for the chemical-accuracy detector; defaults to the
    /// target level energy.
    pub e_ref: Option<f64>,
    /// Distinct level of `H` used for infidelity in place of the protocol target.
    pub level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspConfig {
    pub t_total: f64,
    pub steps: usize,
    /// Start Hamiltonian; the diagonal of `H` in the determinant basis when absent.
    pub h0_fcidump: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Compute the Lindbladian gap; automatic when `D² ≤ 1024`.
    pub gap: Option<bool>,
    #[serde(default = "default_true")]
    pub dark_states: bool,
    #[serde(default = "default_max_path")]
    pub max_path: usize,
}

fn default_max_path() -> usize {
    2
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            gap: None,
            dark_states: true,
            max_path: default_max_path(),
        }
    }
}

impl RunConfig {
    /// Check the structural invariants that deserialization cannot express.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        match (&self.system.fcidump, &self.system.hubbard) {
            (Some(_), Some(_)) | (None, None) => {
                return cfg("exactly one of system.fcidump and system.hubbard must be given")
            }
            _ => {}
        }
        match self.protocol {
            ProtocolConfig::Folded { mu, target_level }
            | ProtocolConfig::Projected { mu, target_level } => {
                if mu.is_some() == target_level.is_some() {
                    return cfg(
                        "folded and projected protocols need exactly one of mu and target_level",
                    );
                }
                if mu.is_some_and(|m| !m.is_finite()) {
                    return cfg("mu must be finite");
                }
            }
            _ => {}
        }
        let s = self.schedule;
        if !(s.t_total > 0.0 && s.t_total.is_finite() && s.dt > 0.0 && s.dt.is_finite()) {
            return cfg("schedule.t_total and schedule.dt must be positive");
        }
        if let Some(asp) = &self.asp {
            if !(asp.t_total > 0.0 && asp.t_total.is_finite()) || asp.steps == 0 {
                return cfg("asp.t_total must be positive and asp.steps at least 1");
            }
        }
        if let EngineConfig::Trajectories {
            n_traj, substeps, ..
        } = self.engine
        {
            if n_traj == 0 || substeps == 0 {
                return cfg("trajectory engine needs n_traj ≥ 1 and substeps ≥ 1");
            }
            if matches!(self.initial, Some(InitialConfig::MaximallyMixed)) {
                return cfg("the trajectory engine needs a pure initial state");
            }
        }
        if !(self.noise.gamma >= 0.0 && self.noise.gamma.is_finite()) {
            return cfg("noise.gamma must be ≥ 0");
        }
        if !(self.filter.safety >= 1.0) {
            return cfg("filter.safety must be ≥ 1");
        }
        if self.diagnostics.max_path == 0 {
            return cfg("diagnostics.max_path must be at least 1");
        }
        Ok(())
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// A configuration together with what is needed to reproduce it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Hex SHA-256 of the document bytes.
    pub sha256: String,
    /// Directory against which relative paths resolve.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_text(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        Ok(LoadedConfig {
            config: parse_config(text)?,
            sha256: sha256_hex(text.as_bytes()),
            base_dir: base_dir.into(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_stage("config"))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, base)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub version: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemReport {
    pub source: String,
    pub orbitals: OrbitalBasis,
    pub n_orbitals: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub dimension: usize,
    pub sparse_storage: bool,
    pub core_energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub energy: f64,
    pub degeneracy: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub levels: Vec<LevelReport>,
    pub gap: Option<f64>,
    pub radius: f64,
    pub degeneracy_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterReport {
    /// Parameters the jumps were built with.
    pub spec: FilterSpec,
    /// Defaults for the unfolded spectrum, echoed in folded and projected runs.
    pub plain_defaults: Option<FilterSpec>,
    pub construction: Construction,
    pub nodes: usize,
    pub hard_threshold: bool,
    pub safety: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub name: String,
    pub mode: ProtocolMode,
    pub mu_window: Option<MuWindow>,
    pub target_indices: Vec<usize>,
    pub target_energies: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub kind: CouplingKind,
    pub labels: Vec<String>,
    pub zero_operators: usize,
    pub jump_count: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EngineReport {
    Density {
        method: PropagationMethod,
        /// `‖ℒ[ρ(T)]‖_F`
        steady_state_residual: f64,
    },
    Trajectories {
        n_traj: usize,
        seed: u64,
        improved_sampling: bool,
        substeps: usize,
        no_jump_probability: Option<f64>,
        mean_jumps: f64,
        resampled: usize,
        final_energy_stderr: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialReport {
    pub description: String,
    /// Norm retained by `P_μ` in projected runs.
    pub projected_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalReport {
    pub time: f64,
    pub energy: f64,
    pub energy_error: f64,
    pub infidelity: f64,
    pub s2: f64,
    pub multiplicity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SanityReport {
    pub max_trace_err: f64,
    pub max_pos_err: f64,
    pub max_herm_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AspReport {
    pub t_total: f64,
    pub steps: usize,
    pub start: String,
    pub final_energy: f64,
    pub final_infidelity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub system: SystemReport,
    pub spectrum: SpectrumReport,
    pub protocol: ProtocolReport,
    pub filter: Option<FilterReport>,
    pub couplings: CouplingReport,
    pub engine: EngineReport,
    pub schedule: ScheduleConfig,
    pub noise: NoiseSpec,
    pub initial: InitialReport,
    pub e_ref: f64,
    pub time_to_chemical_accuracy: Option<f64>,
    pub final_state: FinalReport,
    pub sanity: SanityReport,
    pub resources: ResourceEstimate,
    pub gap: Option<GapReport>,
    pub dark_states: Option<ConnectivityReport>,
    pub asp: Option<AspReport>,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub series: ObservableSeries,
    pub asp_series: Option<ObservableSeries>,
}

enum InitialState {
    Pure(CVector),
    Mixed(CMatrix),
}

fn load_integrals(
    system: &SystemConfig,
    base: &Path,
) -> Result<(IntegralSet, String, OrbitalBasis)> {
    let (ints, source, default_basis) = match (&system.fcidump, &system.hubbard) {
        (Some(path), None) => {
            let full = base.join(path);
            let bytes = std::fs::read(&full).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", full.display()),
                ))
            })?;
            (
                parse_fcidump_bytes(&bytes)?,
                format!("fcidump:{}", path.display()),
                OrbitalBasis::Given,
            )
        }
        (None, Some(h)) => (
            hubbard_integrals(h.sites, h.t, h.u)?,
            format!("hubbard:L={},t={},U={}", h.sites, h.t, h.u),
            OrbitalBasis::Molecular,
        ),
        _ => {
            return Err(Error::Config(
                "exactly one system source is required".into(),
            ))
        }
    };
    let basis = system.orbitals.unwrap_or(default_basis);
    let ints = match basis {
        OrbitalBasis::Given => ints,
        OrbitalBasis::Molecular => ints.to_one_body_eigenbasis()?,
    };
    Ok((ints, source, basis))
}

fn resolve_mode(
    protocol: &ProtocolConfig,
    spec: &Spectrum,
) -> Result<(ProtocolMode, Option<MuWindow>)> {
    let nearest_level = |mu: f64| {
        (0..spec.levels.len())
            .min_by(|&a, &b| {
                let da = (spec.levels[a].energy - mu).abs();
                let db = (spec.levels[b].energy - mu).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    };
    let lowest_above = |mu: f64| spec.levels.iter().position(|l| l.energy >= mu);
    match *protocol {
        ProtocolConfig::Plain | ProtocolConfig::Symmetry => Ok((ProtocolMode::Plain, None)),
        ProtocolConfig::Folded { mu, target_level } => {
            let window = match (mu, target_level) {
                (Some(mu), _) => validate_mu(spec, nearest_level(mu), mu)?,
                (None, Some(level)) => {
                    let w = validate_mu(spec, level, f64::NAN)?;
                    validate_mu(spec, level, w.center())?
                }
                _ => {
                    return Err(Error::Config(
                        "folded protocol needs mu or target_level".into(),
                    ))
                }
            };
            if !window.valid {
                warn!(
                    "μ = {} lies outside ({}, {}) around the target level",
                    window.mu, window.lower, window.upper
                );
            }
            Ok((ProtocolMode::Folded { mu: window.mu }, Some(window)))
        }
        ProtocolConfig::Projected { mu, target_level } => {
            let window = match (mu, target_level) {
                (Some(mu), _) => {
                    let level = lowest_above(mu).ok_or_else(|| {
                        Error::parameter(format!("μ = {mu} lies above the whole spectrum"))
                    })?;
                    validate_projected_mu(spec, level, mu)?
                }
                (None, Some(level)) => {
                    let w = validate_projected_mu(spec, level, f64::NAN)?;
                    let mu = if w.lower.is_finite() {
                        w.center()
                    } else {
                        w.target_energy - spec.gap.unwrap_or(1.0)
                    };
                    validate_projected_mu(spec, level, mu)?
                }
                _ => {
                    return Err(Error::Config(
                        "projected protocol needs mu or target_level".into(),
                    ))
                }
            };
            if !window.valid {
                warn!(
                    "μ = {} lies outside ({}, {}) around the target level",
                    window.mu, window.lower, window.upper
                );
            }
            Ok((ProtocolMode::Projected { mu: window.mu }, Some(window)))
        }
    }
}

fn resolve_filter(
    config: &FilterConfig,
    spec: &Spectrum,
    eff: &Spectrum,
) -> Result<(FilterSpec, Option<FilterSpec>)> {
    let base = default_filter_params(eff, config.safety)?;
    let f = FilterSpec::new(
        config.a.unwrap_or(base.a),
        config.b.unwrap_or(base.b),
        config.delta_a.unwrap_or(base.delta_a),
        config.delta_b.unwrap_or(base.delta_b),
        config.s_max.unwrap_or(base.s_max),
    )?;
    let plain = if std::ptr::eq(spec, eff) {
        None
    } else {
        default_filter_params(spec, config.safety).ok()
    };
    Ok((f, plain))
}

fn build_initial(
    initial: &InitialConfig,
    basis: &SectorBasis,
    spec: &Spectrum,
) -> Result<(InitialState, String)> {
    let pure = |spec_ref: ReferenceSpec| -> Result<InitialState> {
        Ok(InitialState::Pure(
            build_reference_state(basis, &spec_ref)?.amplitudes,
        ))
    };
    Ok(match initial {
        InitialConfig::MaximallyMixed => {
            let d = basis.dim();
            (
                InitialState::Mixed(identity(d) / c(d as f64, 0.0)),
                "maximally mixed".to_string(),
            )
        }
        InitialConfig::HfAufbau => (
            pure(ReferenceSpec::HfAufbau)?,
            "aufbau determinant".to_string(),
        ),
        InitialConfig::HighSpinD => (
            pure(ReferenceSpec::HighSpinD)?,
            "high-spin four-determinant state".to_string(),
        ),
        InitialConfig::Determinants { terms } => {
            let mut list = Vec::with_capacity(terms.len());
            for t in terms {
                let occ = t
                    .occupied
                    .iter()
                    .map(|s| s.parse::<SpinOrbital>())
                    .collect::<Result<Vec<_>>>()?;
                list.push((t.coefficient.value(), occ));
            }
            (
                pure(ReferenceSpec::Determinants(list))?,
                format!("{} determinant(s)", terms.len()),
            )
        }
        InitialConfig::Eigenstate { index } => {
            if *index >= spec.dim() {
                return Err(Error::parameter(format!(
                    "eigenstate index {index} out of range (dimension {})",
                    spec.dim()
                )));
            }
            (
                InitialState::Pure(spec.vector(*index)),
                format!("eigenstate {index}"),
            )
        }
    })
}

/// Apply `P_μ` and renormalize.
fn project_initial(state: InitialState, p: &CMatrix) -> Result<(InitialState, f64)> {
    match state {
        InitialState::Pure(psi) => {
            let v = p * psi;
            let n = v.norm();
            if n < 1e-8 {
                return Err(Error::parameter(format!(
                    "initial state has norm {n:e} inside the projected subspace"
                )));
            }
            Ok((InitialState::Pure(v / c(n, 0.0)), n))
        }
        InitialState::Mixed(rho) => {
            let prho = crate::linalg::matmul3(p, &rho, p);
            let tr = crate::linalg::trace(&prho).re;
            let n = tr.max(0.0).sqrt();
            if n < 1e-8 {
                return Err(Error::parameter(format!(
                    "initial state has norm {n:e} inside the projected subspace"
                )));
            }
            Ok((InitialState::Mixed(prho / c(tr, 0.0)), n))
        }
    }
}

/// `√(γ/d)|i⟩⟨j|` for all `i, j`: the depolarizing channel as jump operators.
fn depolarizing_jumps(d: usize, gamma: f64) -> Vec<CMatrix> {
    let amp = (gamma / d as f64).sqrt();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let mut k = CMatrix::zeros(d, d);
            k[(i, j)] = c(amp, 0.0);
            out.push(k);
        }
    }
    out
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

/// Execute one configured run.
pub fn run(loaded: &LoadedConfig) -> Result<RunOutput> {
    let config = &loaded.config;
    config.validate()?;

    let (ints, source, orbitals) =
        load_integrals(&config.system, &loaded.base_dir).map_err(|e| e.in_stage("integrals"))?;
    let SectorConfig { n_alpha, n_beta } = config.sector;
    if let Some(ne) = (ints.n_electrons > 0).then_some(ints.n_electrons) {
        if ne != n_alpha + n_beta {
            warn!("integral header lists {ne} electrons; running the ({n_alpha},{n_beta}) sector");
        }
    }
    let basis =
        enumerate_sector(ints.n_orbitals, n_alpha, n_beta).map_err(|e| e.in_stage("sector"))?;
    let d = basis.dim();
    info!(
        "sector ({n_alpha},{n_beta}) over {} orbitals: dimension {d}",
        ints.n_orbitals
    );

    let h_op = assemble_hamiltonian(&ints, &basis).map_err(|e| e.in_stage("hamiltonian"))?;
    let s2 = spin_square_operator(
        &basis,
        &SpinOpsInput::restricted(ints.n_orbitals, n_alpha, n_beta),
    )
    .map_err(|e| e.in_stage("spin operator"))?
    .to_dense();
    let spec =
        eigendecompose(&h_op, None, DEFAULT_DENSE_LIMIT).map_err(|e| e.in_stage("spectrum"))?;
    let h = h_op.to_dense();

    let (mode, mu_window) =
        resolve_mode(&config.protocol, &spec).map_err(|e| e.in_stage("protocol"))?;
    let mut targets = target_indices(&spec, mode).map_err(|e| e.in_stage("protocol"))?;
    if let Some(level) = config.target.level {
        let l = spec.levels.get(level).ok_or_else(|| {
            Error::parameter(format!("target level {level} out of range")).in_stage("target")
        })?;
        targets = (l.start..l.end).collect();
    }
    let target_vectors: Vec<CVector> = targets.iter().map(|&i| spec.vector(i)).collect();
    let e_ref = config.target.e_ref.unwrap_or(spec.eigenvalues[targets[0]]);

    // couplings and jumps
    let mut extra = config.couplings.terms.clone();
    if let Some(name) = &config.couplings.preset {
        let preset = quartic_preset(name)
            .ok_or_else(|| Error::Config(format!("unknown quartic preset `{name}`")))?;
        extra.extend(preset.iter().map(|s| s.to_string()));
    }
    let couplings =
        coupling_set(&basis, config.couplings.kind, &extra).map_err(|e| e.in_stage("couplings"))?;
    let zero_operators = couplings.ops.iter().filter(|(_, op)| op.is_zero()).count();
    let construction = match config.filter.construction {
        ConstructionKind::Eigenbasis => Construction::Eigenbasis,
        ConstructionKind::Quadrature => Construction::Quadrature {
            m: config.filter.nodes,
        },
    };
    let eff = effective_spectrum(&spec, mode).map_err(|e| e.in_stage("jumps"))?;
    let (jumps, filter_report) = if eff.gap.is_none() {
        info!("the effective spectrum has a single level; no dissipation is needed");
        (JumpSet::empty(), None)
    } else {
        let eff_ref = if mode == ProtocolMode::Plain {
            &spec
        } else {
            &eff
        };
        let (filter, plain_defaults) =
            resolve_filter(&config.filter, &spec, eff_ref).map_err(|e| e.in_stage("filter"))?;
        let rule = match construction {
            Construction::Quadrature { m } => Some(build_quadrature(&filter, m)),
            Construction::Eigenbasis => None,
        };
        let jumps = build_jump_set(
            &spec,
            &couplings,
            &filter,
            mode,
            construction,
            config.filter.hard_threshold,
            rule.as_ref(),
        )
        .map_err(|e| e.in_stage("jumps"))?;
        (
            jumps,
            Some(FilterReport {
                spec: filter,
                plain_defaults,
                construction,
                nodes: config.filter.nodes,
                hard_threshold: config.filter.hard_threshold,
                safety: config.filter.safety,
            }),
        )
    };

    // initial state
    let initial_cfg = config.initial.clone().unwrap_or(match config.engine {
        EngineConfig::Density => InitialConfig::MaximallyMixed,
        EngineConfig::Trajectories { .. } => InitialConfig::HfAufbau,
    });
    let (mut initial, description) =
        build_initial(&initial_cfg, &basis, &spec).map_err(|e| e.in_stage("initial state"))?;
    let mut projected_norm = None;
    if let ProtocolMode::Projected { mu } = mode {
        let p = spectral_projector(&spec, mu);
        let (state, n) = project_initial(initial, &p).map_err(|e| e.in_stage("initial state"))?;
        initial = state;
        projected_norm = Some(n);
    }

    let observables = ObservableSet::new(h.clone(), Some(s2.clone()), target_vectors.clone())?;
    let schedule = config.schedule;
    let lind = Lindbladian::new(&h, &jumps.ks, config.noise).map_err(|e| e.in_stage("dynamics"))?;

    let (series, engine_report, seed) = match config.engine {
        EngineConfig::Density => {
            let rho0 = match &initial {
                InitialState::Pure(psi) => psi * psi.adjoint(),
                InitialState::Mixed(rho) => rho.clone(),
            };
            let out = propagate_density(&lind, &rho0, schedule.t_total, schedule.dt, &observables)
                .map_err(|e| e.in_stage("dynamics"))?;
            let residual = frobenius(&lind.apply(&out.final_state));
            (
                out.series,
                EngineReport::Density {
                    method: out.method,
                    steady_state_residual: residual,
                },
                None,
            )
        }
        EngineConfig::Trajectories {
            n_traj,
            seed,
            improved_sampling,
            substeps,
        } => {
            let psi0 = match &initial {
                InitialState::Pure(psi) => psi.clone(),
                InitialState::Mixed(_) => {
                    return Err(Error::Config(
                        "the trajectory engine needs a pure initial state".into(),
                    ))
                }
            };
            let mut ks = jumps.ks.clone();
            if config.noise.gamma > 0.0 {
                if d > NOISY_TRAJECTORY_LIMIT {
                    return Err(Error::Capacity(format!(
                        "depolarizing trajectories need {} jump channels; limit is dimension {NOISY_TRAJECTORY_LIMIT}",
                        d * d
                    )));
                }
                ks.extend(depolarizing_jumps(d, config.noise.gamma));
            }
            let settings = TrajectorySettings {
                t_total: schedule.t_total,
                dt: schedule.dt,
                substeps,
                n_traj,
                seed,
                improved_sampling,
            };
            let ens = mc_trajectories(&h, &ks, &psi0, settings, &observables)
                .map_err(|e| e.in_stage("dynamics"))?;
            let series = ens.mean_series()?;
            let (_, err) = ens.mean_and_stderr(|s| s.energy);
            let total_w: f64 = ens.trajectories.iter().map(|t| t.weight).sum();
            let mean_jumps = ens
                .trajectories
                .iter()
                .map(|t| t.weight * t.jumps as f64)
                .sum::<f64>()
                / total_w;
            (
                series,
                EngineReport::Trajectories {
                    n_traj,
                    seed,
                    improved_sampling,
                    substeps,
                    no_jump_probability: ens.no_jump_probability,
                    mean_jumps,
                    resampled: ens.resampled,
                    final_energy_stderr: err.last().copied().unwrap_or(0.0),
                },
                Some(seed),
            )
        }
    };

    let t_chem = time_to_chemical_accuracy(&series, e_ref);
    let resources =
        resource_estimate(&spec, mode, &jumps, t_chem).map_err(|e| e.in_stage("resources"))?;
    let want_gap = config.diagnostics.gap.unwrap_or(d * d <= GAP_LIMIT);
    let gap = if want_gap {
        Some(lindbladian_gap(&lind).map_err(|e| e.in_stage("gap"))?)
    } else {
        None
    };
    let dark_states = if config.diagnostics.dark_states && !jumps.is_empty() {
        let tests: Vec<(String, CVector)> = (0..d)
            .filter(|i| !targets.contains(i))
            .take(DARK_STATE_TESTS)
            .map(|i| {
                (
                    format!("eigenstate {i} (E = {:.6})", spec.eigenvalues[i]),
                    spec.vector(i),
                )
            })
            .collect();
        Some(connectivity_rates(
            &jumps,
            &target_vectors[0],
            &tests,
            config.diagnostics.max_path,
        )?)
    } else {
        None
    };

    let (asp_series, asp_report) = match &config.asp {
        None => (None, None),
        Some(asp) => {
            let (out, report) = run_asp(
                asp,
                &loaded.base_dir,
                orbitals,
                &basis,
                &h,
                &spec,
                config.noise,
            )
            .map_err(|e| e.in_stage("asp"))?;
            (Some(out), Some(report))
        }
    };

    let last = series
        .last()
        .ok_or_else(|| Error::Numerical("empty observable series".into()))?;
    let report = RunReport {
        provenance: Provenance {
            config_sha256: loaded.sha256.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
        },
        system: SystemReport {
            source,
            orbitals,
            n_orbitals: ints.n_orbitals,
            n_alpha,
            n_beta,
            dimension: d,
            sparse_storage: h_op.is_sparse(),
            core_energy: ints.core_energy,
        },
        spectrum: SpectrumReport {
            levels: spec
                .levels
                .iter()
                .map(|l| LevelReport {
                    energy: l.energy,
                    degeneracy: l.degeneracy(),
                })
                .collect(),
            gap: spec.gap,
            radius: spec.radius,
            degeneracy_tol: spec.degeneracy_tol,
        },
        protocol: ProtocolReport {
            name: config.protocol.name().to_string(),
            mode,
            mu_window,
            target_energies: targets.iter().map(|&i| spec.eigenvalues[i]).collect(),
            target_indices: targets,
        },
        filter: filter_report,
        couplings: CouplingReport {
            kind: couplings.kind,
            labels: jumps.labels.clone(),
            zero_operators,
            jump_count: jumps.len(),
        },
        engine: engine_report,
        schedule,
        noise: config.noise,
        initial: InitialReport {
            description,
            projected_norm,
        },
        e_ref,
        time_to_chemical_accuracy: t_chem,
        final_state: FinalReport {
            time: *series.times.last().unwrap_or(&0.0),
            energy: last.energy,
            energy_error: (last.energy - e_ref).abs(),
            infidelity: last.infidelity,
            s2: last.s2,
            multiplicity: last.multiplicity,
        },
        sanity: SanityReport {
            max_trace_err: max_of(&series.trace_err),
            max_pos_err: max_of(&series.pos_err),
            max_herm_err: max_of(&series.herm_err),
        },
        resources,
        gap,
        dark_states,
        asp: asp_report,
    };
    Ok(RunOutput {
        report,
        series,
        asp_series,
    })
}

fn run_asp(
    asp: &AspConfig,
    base: &Path,
    orbitals: OrbitalBasis,
    basis: &SectorBasis,
    h: &CMatrix,
    spec: &Spectrum,
    noise: NoiseSpec,
) -> Result<(ObservableSeries, AspReport)> {
    let (h0, start) = match &asp.h0_fcidump {
        None => (
            CMatrix::from_diagonal(&h.diagonal()),
            "diagonal of H".to_string(),
        ),
        Some(path) => {
            let full = base.join(path);
            let bytes = std::fs::read(&full)?;
            let ints = parse_fcidump_bytes(&bytes)?;
            let ints = match orbitals {
                OrbitalBasis::Given => ints,
                OrbitalBasis::Molecular => ints.to_one_body_eigenbasis()?,
            };
            (
                assemble_hamiltonian(&ints, basis)?.to_dense(),
                format!("fcidump:{}", path.display()),
            )
        }
    };
    let (vals, vecs) = hermitian_eigen(&h0);
    if vals.len() > 1 && vals[1] - vals[0] < 1e-10 {
        warn!("start Hamiltonian has a degenerate ground level; the path start is ambiguous");
    }
    let psi0 = vecs.column(0).into_owned();
    let ground = spec.level_vectors(0);
    let observables = ObservableSet::new(h.clone(), None, ground)?;
    let path = AspPath {
        h0,
        h1: h.clone(),
        t_total: asp.t_total,
        steps: asp.steps,
    };
    let out = asp_propagate(&path, &psi0, noise, &observables)?;
    let last = out
        .series
        .last()
        .ok_or_else(|| Error::Numerical("empty path series".into()))?;
    Ok((
        out.series,
        AspReport {
            t_total: asp.t_total,
            steps: asp.steps,
            start,
            final_energy: last.energy,
            final_infidelity: last.infidelity,
        },
    ))
}

/// Write a series as CSV with 17 significant digits.
pub fn emit_series(series: &ObservableSeries, path: &Path) -> Result<()> {
    std::fs::write(path, series_csv(series))?;
    Ok(())
}

pub fn series_csv(series: &ObservableSeries) -> String {
    let mut out = String::with_capacity(128 * (series.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for i in 0..series.len() {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            series.times[i],
            series.energy[i],
            series.infidelity[i],
            series.s2[i],
            series.multiplicity[i],
            series.trace_err[i]
        );
    }
    out
}

/// Inverse of [`series_csv`]; positivity and hermiticity columns read as zero.
pub fn parse_series(text: &str) -> Result<ObservableSeries> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SERIES_HEADER => {}
        _ => {
            return Err(Error::parse(
                1,
                format!("expected header `{SERIES_HEADER}`"),
            ))
        }
    }
    let mut s = ObservableSeries::default();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if v.len() != 6 {
            return Err(Error::parse(
                i + 1,
                format!("expected 6 columns, found {}", v.len()),
            ));
        }
        s.times.push(v[0]);
        s.energy.push(v[1]);
        s.infidelity.push(v[2]);
        s.s2.push(v[3]);
        s.multiplicity.push(v[4]);
        s.trace_err.push(v[5]);
        s.pos_err.push(0.0);
        s.herm_err.push(0.0);
    }
    Ok(s)
}

/// Write `series.csv`, `report.json` and, when present, `asp_series.csv`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    emit_series(&output.series, &dir.join("series.csv"))?;
    if let Some(asp) = &output.asp_series {
        emit_series(asp, &dir.join("asp_series.csv"))?;
    }
    let json = serde_json::to_string_pretty(&output.report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMER: &str = r#"
[system]
hubbard = { sites = 2, t = 1.0, u = 4.0 }

[sector]
n_alpha = 1
n_beta = 1
"#;

    fn load(text: &str) -> LoadedConfig {
        LoadedConfig::from_text(text, ".").unwrap()
    }

    #[test]
    fn defaults_are_filled_in() {
        let cfg = parse_config(DIMER).unwrap();
        assert_eq!(cfg.protocol, ProtocolConfig::Plain);
        assert_eq!(cfg.engine, EngineConfig::Density);
        assert_eq!(cfg.schedule.dt, 0.1);
        assert_eq!(cfg.filter.nodes, 200);
        assert!(cfg.filter.hard_threshold);
        assert_eq!(cfg.couplings.kind, CouplingKind::SII);
    }

    #[test]
    fn config_errors() {
        let both = format!("{DIMER}\n[system.extra]\n");
        assert!(matches!(parse_config(&both), Err(Error::Config(_))));
        let none = "[system]\n[sector]\nn_alpha = 1\nn_beta = 1\n";
        assert!(matches!(parse_config(none), Err(Error::Config(_))));
        let folded = format!("{DIMER}\n[protocol]\nkind = \"folded\"\n");
        assert!(matches!(parse_config(&folded), Err(Error::Config(_))));
        let two = format!("{DIMER}\n[protocol]\nkind = \"folded\"\nmu = 0.1\ntarget_level = 1\n");
        assert!(matches!(parse_config(&two), Err(Error::Config(_))));
        let neg = format!("{DIMER}\n[schedule]\nt_total = -1.0\n");
        assert!(matches!(parse_config(&neg), Err(Error::Config(_))));
        let mixed_traj = format!(
            "{DIMER}\n[engine]\nkind = \"trajectories\"\n[initial]\nkind = \"maximally_mixed\"\n"
        );
        assert!(matches!(parse_config(&mixed_traj), Err(Error::Config(_))));
        assert!(matches!(parse_config("not toml ["), Err(Error::Config(_))));
    }

    #[test]
    fn folded_target_level_resolves_to_window_center() {
        let cfg = format!(
            "{DIMER}\n[protocol]\nkind = \"folded\"\ntarget_level = 1\n[schedule]\nt_total = 2.0\n"
        );
        let out = run(&load(&cfg)).unwrap();
        let w = out.report.protocol.mu_window.unwrap();
        let s8 = 8f64.sqrt();
        assert!((w.lower - (2.0 - s8) / 2.0).abs() < 1e-12);
        assert!((w.upper - 2.0).abs() < 1e-12);
        assert!((w.mu - 0.5 * (w.lower + w.upper)).abs() < 1e-12);
        assert!(w.valid);
        let f = out.report.filter.unwrap();
        assert!(f.plain_defaults.is_some());
    }

    #[test]
    fn projected_target_level_keeps_target_in_support() {
        let cfg = format!("{DIMER}\n[protocol]\nkind = \"projected\"\ntarget_level = 1\n[initial]\nkind = \"hf_aufbau\"\n[schedule]\nt_total = 1.0\n");
        let out = run(&load(&cfg)).unwrap();
        let w = out.report.protocol.mu_window.unwrap();
        assert!(w.valid && w.mu <= w.target_energy);
        assert!((w.mu - (2.0 - 8f64.sqrt()) / 2.0).abs() < 1e-12);
        assert_eq!(out.report.protocol.target_energies.len(), 1);
        assert!(out.report.protocol.target_energies[0].abs() < 1e-12);
        assert!(
            (out.report.initial.projected_norm.unwrap() - (std::f64::consts::PI / 8.0).sin()).abs()
                < 1e-10
        );
    }

    #[test]
    fn single_level_sector_needs_no_jumps() {
        let cfg = DIMER.replace("n_alpha = 1\nn_beta = 1", "n_alpha = 2\nn_beta = 0")
            + "\n[protocol]\nkind = \"symmetry\"\n[schedule]\nt_total = 1.0\n";
        let out = run(&load(&cfg)).unwrap();
        assert_eq!(out.report.final_state.energy, 0.0);
        assert!((out.report.final_state.multiplicity - 3.0).abs() < 1e-12);
        assert_eq!(out.report.couplings.jump_count, 0);
        assert!(out.report.filter.is_none());
        assert!(!out.report.gap.unwrap().dissipative);
    }

    #[test]
    fn series_csv_round_trip() {
        let cfg = format!("{DIMER}\n[schedule]\nt_total = 0.3\n");
        let out = run(&load(&cfg)).unwrap();
        let csv = series_csv(&out.series);
        assert_eq!(csv.lines().count(), 5);
        let back = parse_series(&csv).unwrap();
        for (a, b) in [
            (&back.times, &out.series.times),
            (&back.energy, &out.series.energy),
            (&back.infidelity, &out.series.infidelity),
            (&back.s2, &out.series.s2),
            (&back.multiplicity, &out.series.multiplicity),
            (&back.trace_err, &out.series.trace_err),
        ] {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(parse_series("a,b\n1,2\n").is_err());
    }

    #[test]
    fn stage_labels_and_exit_codes() {
        let cfg = DIMER.replace("n_alpha = 1", "n_alpha = 3");
        let err = run(&load(&cfg)).unwrap_err();
        assert!(err.to_string().contains("sector"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let missing =
            "[system]\nfcidump = \"/nonexistent/FCIDUMP\"\n[sector]\nn_alpha = 1\nn_beta = 1\n";
        let err = run(&load(missing)).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn report_is_deterministic_and_echoes_filter() {
        let cfg = format!(
            "{DIMER}\n[engine]\nkind = \"trajectories\"\nn_traj = 20\nseed = 9\nimproved_sampling = true\n[schedule]\nt_total = 1.0\n"
        );
        let a = run(&load(&cfg)).unwrap();
        let b = run(&load(&cfg)).unwrap();
        let ja = serde_json::to_string(&a.report).unwrap();
        assert_eq!(ja, serde_json::to_string(&b.report).unwrap());
        assert_eq!(series_csv(&a.series), series_csv(&b.series));
        for key in [
            "\"a\"",
            "\"b\"",
            "\"delta_a\"",
            "\"delta_b\"",
            "\"s_max\"",
            "\"nodes\"",
            "config_sha256",
        ] {
            assert!(ja.contains(key), "{key}");
        }
        assert_eq!(a.report.provenance.seed, Some(9));
    }

    #[test]
    fn noisy_trajectories_match_density() {
        let base = format!("{DIMER}\n[noise]\ngamma = 0.2\n[initial]\nkind = \"eigenstate\"\nindex = 3\n[schedule]\nt_total = 2.0\ndt = 0.2\n[diagnostics]\ndark_states = false\n");
        let exact = run(&load(&base)).unwrap();
        let traj = run(&load(&format!(
            "{base}[engine]\nkind = \"trajectories\"\nn_traj = 400\nseed = 3\n"
        )))
        .unwrap();
        let EngineReport::Trajectories {
            final_energy_stderr,
            ..
        } = traj.report.engine
        else {
            panic!("wrong engine")
        };
        let diff = (traj.report.final_state.energy - exact.report.final_state.energy).abs();
        assert!(
            diff < 4.0 * final_energy_stderr + 1e-9,
            "{diff} vs {final_energy_stderr}"
        );
    }

    #[test]
    fn asp_block_runs() {
        let cfg = format!("{DIMER}\n[schedule]\nt_total = 1.0\n[asp]\nt_total = 5.0\nsteps = 50\n");
        let out = run(&load(&cfg)).unwrap();
        assert_eq!(out.asp_series.as_ref().unwrap().len(), 51);
        assert!(out.report.asp.is_some());
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&load(&format!("{DIMER}\n[schedule]\nt_total = 0.5\n"))).unwrap();
        write_outputs(&out, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
        assert!(csv.starts_with(SERIES_HEADER));
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report["system"]["dimension"], 4);
    }
}
