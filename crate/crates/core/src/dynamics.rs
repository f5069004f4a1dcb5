//! Lindblad propagation: exact density evolution, quantum-jump trajectories,
//! the Lindbladian gap and the adiabatic comparison path.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c, expm_taylor, expmv_taylor, hermitian_eigen, identity, matmul, max_abs, spectral_norm, trace,
    CMatrix, CVector, C64,
};
use crate::observables::{multiplicity_from_s2, ObservableSeries, ObservableSet, Sample};

/// Largest `D²` for which `exp(dt·ℒ)` is materialized and reused.
pub const EXP_MATERIALIZE_LIMIT: usize = 1024;

/// Largest `D²` accepted by [`lindbladian_gap`].
pub const GAP_LIMIT: usize = 1024;

/// Trace drift that aborts a density propagation.
const TRACE_DRIFT_LIMIT: f64 = 1e-6;

/// Depolarizing channel rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub gamma: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { gamma: 0.0 }
    }

    fn check(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::parameter(format!(
                "depolarizing rate {} must be ≥ 0",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `ℒ[ρ] = −i[H,ρ] + Σ_k (K_k ρ K_k† − ½{K_k†K_k, ρ}) + γ(Tr(ρ) I/d − ρ)`
#[derive(Debug, Clone)]
pub struct Lindbladian {
    h: CMatrix,
    ks: Vec<CMatrix>,
    gamma: f64,
    /// `H − (i/2) Σ K†K`
    h_eff: CMatrix,
}

impl Lindbladian {
    pub fn new(h: &CMatrix, ks: &[CMatrix], noise: NoiseSpec) -> Result<Self> {
        noise.check()?;
        let d = h.nrows();
        if h.ncols() != d || ks.iter().any(|k| k.nrows() != d || k.ncols() != d) {
            return Err(Error::parameter(
                "Hamiltonian and jump operators differ in dimension",
            ));
        }
        let mut g = CMatrix::zeros(d, d);
        for k in ks {
            g += matmul(&k.adjoint(), k);
        }
        Ok(Lindbladian {
            h: h.clone(),
            ks: ks.to_vec(),
            gamma: noise.gamma,
            h_eff: h - g * c(0.0, 0.5),
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.h
    }

    pub fn jumps(&self) -> &[CMatrix] {
        &self.ks
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Non-Hermitian generator of the no-jump evolution.
    pub fn effective_hamiltonian(&self) -> &CMatrix {
        &self.h_eff
    }

    pub fn is_dissipative(&self) -> bool {
        !self.ks.is_empty() || self.gamma > 0.0
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let drift = matmul(&self.h_eff, rho);
        let right = matmul(rho, &self.h_eff.adjoint());
        let mut out = (drift - right) * c(0.0, -1.0);
        // summed in a fixed order so results do not depend on the worker count
        let terms: Vec<CMatrix> = self
            .ks
            .par_iter()
            .map(|k| matmul(&matmul(k, rho), &k.adjoint()))
            .collect();
        for t in terms {
            out += t;
        }
        if self.gamma > 0.0 {
            let d = self.dim();
            let tr = trace(rho) / c(d as f64, 0.0);
            out -= rho * c(self.gamma, 0.0);
            for i in 0..d {
                out[(i, i)] += tr * self.gamma;
            }
        }
        out
    }

    /// Dense `D²×D²` matrix acting on column-major `vec(ρ)`.
    pub fn materialize(&self, limit: usize) -> Result<CMatrix> {
        let d = self.dim();
        let n = d * d;
        if n > limit {
            return Err(Error::Capacity(format!(
                "superoperator of size {n}×{n} exceeds the materialization limit {limit}"
            )));
        }
        let eye = identity(d);
        // vec(AρB) = (Bᵀ ⊗ A) vec(ρ)
        let mut l = eye.kronecker(&self.h_eff) * c(0.0, -1.0)
            + self.h_eff.map(|z| z.conj()).kronecker(&eye) * c(0.0, 1.0);
        for k in &self.ks {
            l += k.map(|z| z.conj()).kronecker(k);
        }
        if self.gamma > 0.0 {
            let g = self.gamma;
            for i in 0..n {
                l[(i, i)] -= c(g, 0.0);
            }
            for a in 0..d {
                for b in 0..d {
                    l[(a * d + a, b * d + b)] += c(g / d as f64, 0.0);
                }
            }
        }
        Ok(l)
    }

    /// Cheap upper bound on `‖ℒ‖` used for initial step sizes.
    fn norm_bound(&self) -> f64 {
        let inf = |m: &CMatrix| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        2.0 * inf(&self.h_eff)
            + self.ks.iter().map(|k| inf(k).powi(2)).sum::<f64>()
            + 2.0 * self.gamma
    }
}

fn vec_of(rho: &CMatrix) -> CVector {
    CVector::from_column_slice(rho.as_slice())
}

fn unvec(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// How [`propagate_density`] advanced the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMethod {
    /// Reused dense `exp(dt·ℒ)`.
    Exponential,
    /// Adaptive Dormand–Prince 5(4).
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct DensityRun {
    pub series: ObservableSeries,
    pub final_state: CMatrix,
    pub method: PropagationMethod,
}

/// Sample times `0, dt, 2dt, …, T` (the last interval may be shorter).
pub fn sample_times(t_total: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_total >= 0.0 && t_total.is_finite()) {
        return Err(Error::parameter(format!(
            "need T ≥ 0 and dt > 0 (T = {t_total}, dt = {dt})"
        )));
    }
    let n = ((t_total / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| (k as f64 * dt).min(t_total)).collect();
    if let Some(last) = times.last_mut() {
        *last = t_total;
    }
    Ok(times)
}

/// Check a density matrix: unit trace, Hermitian, positive.
pub fn validate_density(rho: &CMatrix) -> Result<()> {
    let d = rho.nrows();
    if rho.ncols() != d || d == 0 {
        return Err(Error::parameter(
            "density matrix must be square and non-empty",
        ));
    }
    if (trace(rho) - c(1.0, 0.0)).norm() > 1e-8 {
        return Err(Error::parameter("density matrix trace differs from 1"));
    }
    if crate::linalg::hermiticity_error(rho) > 1e-10 {
        return Err(Error::parameter("density matrix is not Hermitian"));
    }
    let (eigs, _) = hermitian_eigen(rho);
    if eigs[0] < -1e-8 {
        return Err(Error::parameter("density matrix has a negative eigenvalue"));
    }
    Ok(())
}

/// Integrate the master equation from `rho0`, sampling every `dt`.
pub fn propagate_density(
    lind: &Lindbladian,
    rho0: &CMatrix,
    t_total: f64,
    dt: f64,
    observables: &ObservableSet,
) -> Result<DensityRun> {
    validate_density(rho0)?;
    if rho0.nrows() != lind.dim() {
        return Err(Error::parameter(
            "initial state dimension differs from the generator",
        ));
    }
    let times = sample_times(t_total, dt)?;
    let d = lind.dim();
    let method = if d * d <= EXP_MATERIALIZE_LIMIT {
        PropagationMethod::Exponential
    } else {
        debug!("superoperator too large to exponentiate (D = {d}); using adaptive integration");
        PropagationMethod::Adaptive
    };
    let mut series = ObservableSeries::default();
    let mut rho = rho0.clone();
    series.push(0.0, &observables.measure_density(&rho)?);

    let mut cached: Option<(f64, CMatrix)> = None;
    let mut integrator = Dopri::new(lind);
    for w in times.windows(2) {
        let step = w[1] - w[0];
        rho = match method {
            PropagationMethod::Exponential => {
                let reuse =
                    matches!(&cached, Some((h, _)) if (h - step).abs() <= 1e-14 * step.max(1.0));
                if !reuse {
                    let gen = lind.materialize(EXP_MATERIALIZE_LIMIT)? * c(step, 0.0);
                    cached = Some((step, expm_taylor(&gen)));
                }
                let prop = &cached.as_ref().expect("propagator cached").1;
                unvec(&(prop * vec_of(&rho)), d)
            }
            PropagationMethod::Adaptive => integrator.advance(&rho, step)?,
        };
        let sample = observables.measure_density(&rho)?;
        if sample.trace_err > TRACE_DRIFT_LIMIT {
            return Err(Error::Numerical(format!(
                "trace drifted by {:e} at t = {}",
                sample.trace_err, w[1]
            )));
        }
        series.push(w[1], &sample);
    }
    Ok(DensityRun {
        series,
        final_state: rho,
        method,
    })
}

/// Dormand–Prince 5(4) with step control on the density matrix.
struct Dopri<'a> {
    lind: &'a Lindbladian,
    h: f64,
    rtol: f64,
    atol: f64,
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl<'a> Dopri<'a> {
    fn new(lind: &'a Lindbladian) -> Self {
        let bound = lind.norm_bound().max(1e-12);
        Dopri {
            lind,
            h: 0.1 / bound,
            rtol: 1e-10,
            atol: 1e-12,
        }
    }

    fn advance(&mut self, rho0: &CMatrix, span: f64) -> Result<CMatrix> {
        let _ = DP_C;
        let mut rho = rho0.clone();
        let mut t = 0.0;
        let mut rejections = 0usize;
        while t < span {
            let h = self.h.min(span - t);
            let mut k: Vec<CMatrix> = Vec::with_capacity(7);
            for stage in 0..7 {
                let mut arg = rho.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = DP_A[stage][j];
                    if a != 0.0 {
                        arg += kj * c(h * a, 0.0);
                    }
                }
                k.push(self.lind.apply(&arg));
            }
            let mut next = rho.clone();
            let mut err = CMatrix::zeros(rho.nrows(), rho.ncols());
            for (i, ki) in k.iter().enumerate() {
                next += ki * c(h * DP_B[i], 0.0);
                err += ki * c(h * (DP_B[i] - DP_B4[i]), 0.0);
            }
            let scale = self.atol + self.rtol * max_abs(&next).max(max_abs(&rho));
            let ratio = max_abs(&err) / scale;
            if ratio <= 1.0 {
                t += h;
                rho = next;
            } else {
                rejections += 1;
                if rejections > 100_000 {
                    return Err(Error::Numerical(
                        "adaptive integrator failed to converge".into(),
                    ));
                }
            }
            let factor = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            // keep the accepted step size when only the span end clipped it
            if !(ratio <= 1.0 && h < self.h) {
                self.h = h * factor;
            }
        }
        Ok(rho)
    }
}

/// Lindbladian spectral gap `−max{Re λ : λ ≠ 0}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapReport {
    pub gap: f64,
    /// Eigenvalues treated as zero.
    pub zero_modes: usize,
    pub zero_tol: f64,
    /// False for a closed system, whose spectrum is purely imaginary.
    pub dissipative: bool,
}

pub fn lindbladian_gap(lind: &Lindbladian) -> Result<GapReport> {
    let l = lind.materialize(GAP_LIMIT)?;
    let zero_tol = 1e-10 * max_abs(&l).max(1e-300);
    let (_, t) = l.schur().unpack();
    let mut zero_modes = 0;
    let mut max_re = f64::NEG_INFINITY;
    for i in 0..t.nrows() {
        let z = t[(i, i)];
        if z.norm() < zero_tol {
            zero_modes += 1;
        } else {
            max_re = max_re.max(z.re);
        }
    }
    let gap = if max_re.is_finite() {
        (-max_re).max(0.0)
    } else {
        0.0
    };
    Ok(GapReport {
        gap,
        zero_modes,
        zero_tol,
        dissipative: lind.is_dissipative(),
    })
}

/// Settings for [`mc_trajectories`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySettings {
    pub t_total: f64,
    /// Sample interval.
    pub dt: f64,
    /// Propagator sub-steps per sample interval.
    pub substeps: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub improved_sampling: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub weight: f64,
    pub jumps: usize,
    pub samples: Vec<Sample>,
}

/// Weighted pure-state trajectories recorded at common sample times.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub settings: TrajectorySettings,
    pub times: Vec<f64>,
    /// With improved sampling, entry 0 is the no-jump trajectory.
    pub trajectories: Vec<Trajectory>,
    /// Survival probability of the no-jump path over `[0, T]`.
    pub no_jump_probability: Option<f64>,
    pub resampled: usize,
}

impl TrajectoryEnsemble {
    /// Weighted mean and standard error of one observable at every sample.
    pub fn mean_and_stderr(&self, field: impl Fn(&Sample) -> f64) -> (Vec<f64>, Vec<f64>) {
        let n_times = self.times.len();
        let (exact, sampled): (Option<&Trajectory>, &[Trajectory]) = match (
            self.settings.improved_sampling,
            self.trajectories.split_first(),
        ) {
            (true, Some((first, rest))) => (Some(first), rest),
            _ => (None, &self.trajectories[..]),
        };
        let sampled_mass: f64 = sampled.iter().map(|t| t.weight).sum();
        let n = sampled.len() as f64;
        let mut means = Vec::with_capacity(n_times);
        let mut errs = Vec::with_capacity(n_times);
        for ti in 0..n_times {
            let xs: Vec<f64> = sampled.iter().map(|t| field(&t.samples[ti])).collect();
            let avg = if n > 0.0 {
                xs.iter().sum::<f64>() / n
            } else {
                0.0
            };
            let var = if n > 1.0 {
                xs.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let exact_part = exact.map_or(0.0, |t| t.weight * field(&t.samples[ti]));
            means.push(exact_part + sampled_mass * avg);
            errs.push(if n > 0.0 {
                sampled_mass * (var / n).sqrt()
            } else {
                0.0
            });
        }
        (means, errs)
    }

    /// Ensemble-averaged observables; multiplicity from the mean `⟨Ŝ²⟩`.
    pub fn mean_series(&self) -> Result<ObservableSeries> {
        let (energy, _) = self.mean_and_stderr(|s| s.energy);
        let (infidelity, _) = self.mean_and_stderr(|s| s.infidelity);
        let (s2, _) = self.mean_and_stderr(|s| s.s2);
        let total_weight: f64 = self.trajectories.iter().map(|t| t.weight).sum();
        let mut series = ObservableSeries::default();
        for i in 0..self.times.len() {
            series.push(
                self.times[i],
                &Sample {
                    energy: energy[i],
                    infidelity: infidelity[i],
                    s2: s2[i],
                    multiplicity: multiplicity_from_s2(s2[i])?,
                    trace_err: (total_weight - 1.0).abs(),
                    pos_err: 0.0,
                    herm_err: 0.0,
                },
            );
        }
        Ok(series)
    }
}

/// Shared, read-only data for all trajectories of one ensemble.
struct Unraveling<'a> {
    ks: &'a [CMatrix],
    /// `H_eff − c·I` with `c` the mean diagonal of `H`.
    generator: CMatrix,
    /// `exp(−i·generator·dt_sub)`
    step: CMatrix,
    dt_sub: f64,
    substeps: usize,
    n_intervals: usize,
    interval_lengths: Vec<f64>,
    observables: &'a ObservableSet,
}

/// Below this squared norm the unnormalized state is rescaled.
const RESCALE_BELOW: f64 = 1e-150;

impl Unraveling<'_> {
    fn evolve(&self, psi: &CVector, tau: f64) -> CVector {
        expmv_taylor(&self.generator, psi, tau)
    }

    /// Run one trajectory. `threshold` draws the jump thresholds; `None`
    /// disables jumps. Returns the trajectory and `ln ‖ψ(T)‖²` of the
    /// no-jump segment still in progress at the end.
    fn run(
        &self,
        psi0: &CVector,
        rng: &mut ChaCha8Rng,
        first_floor: Option<f64>,
        jumps_enabled: bool,
        resampled: &mut usize,
    ) -> Result<(Vec<Sample>, usize, f64)> {
        let mut psi = psi0.clone();
        let mut log_scale = 0.0f64;
        let draw = |rng: &mut ChaCha8Rng, floor: Option<f64>| -> f64 {
            let u: f64 = rng.random();
            match floor {
                Some(p) => p + (1.0 - p) * u,
                None => u,
            }
        };
        // compare ln‖ψ‖² + log_scale against ln r1
        let mut log_r1 = if jumps_enabled {
            draw(rng, first_floor).ln()
        } else {
            f64::NEG_INFINITY
        };
        let mut jumps = 0usize;
        let mut samples = vec![self.observables.measure_state(&psi)?];
        for interval in 0..self.n_intervals {
            let length = self.interval_lengths[interval];
            let full_steps = if (length - self.dt_sub * self.substeps as f64).abs() < 1e-12 {
                vec![self.dt_sub; self.substeps]
            } else {
                let k = ((length / self.dt_sub) - 1e-9).ceil().max(1.0) as usize;
                vec![length / k as f64; k]
            };
            for sub in full_steps {
                let mut remaining = sub;
                while remaining > 0.0 {
                    let next = if (remaining - self.dt_sub).abs() < 1e-15 {
                        &self.step * &psi
                    } else {
                        self.evolve(&psi, remaining)
                    };
                    let log_norm = |v: &CVector, scale: f64| v.norm_squared().ln() + scale;
                    if log_norm(&next, log_scale) > log_r1 {
                        psi = next;
                        break;
                    }
                    // crossing inside (0, remaining]: bisect on the survival norm
                    let (mut lo, mut hi) = (0.0, remaining);
                    while hi - lo > 1e-3 * self.dt_sub {
                        let mid = 0.5 * (lo + hi);
                        if log_norm(&self.evolve(&psi, mid), log_scale) > log_r1 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let at = self.evolve(&psi, hi);
                    remaining -= hi;
                    let candidates: Vec<CVector> = self.ks.iter().map(|k| k * &at).collect();
                    let rates: Vec<f64> = candidates.iter().map(|v| v.norm_squared()).collect();
                    let total: f64 = rates.iter().sum();
                    if !(total > 0.0) {
                        warn!("jump threshold crossed with vanishing jump rates; redrawing the threshold");
                        *resampled += 1;
                        psi = at;
                        log_r1 = draw(rng, None).ln() + psi.norm_squared().ln() + log_scale;
                        continue;
                    }
                    let pick = draw(rng, None) * total;
                    let mut acc = 0.0;
                    let mut chosen = rates.len() - 1;
                    for (k, r) in rates.iter().enumerate() {
                        acc += r;
                        if pick < acc {
                            chosen = k;
                            break;
                        }
                    }
                    let v = &candidates[chosen];
                    psi = v / c(v.norm(), 0.0);
                    log_scale = 0.0;
                    jumps += 1;
                    log_r1 = draw(rng, None).ln();
                }
                let n2 = psi.norm_squared();
                if n2 < RESCALE_BELOW && n2 > 0.0 {
                    psi /= c(n2.sqrt(), 0.0);
                    log_scale += n2.ln();
                }
            }
            samples.push(self.observables.measure_state(&psi)?);
        }
        let final_log_survival = psi.norm_squared().ln() + log_scale;
        Ok((samples, jumps, final_log_survival))
    }
}

/// Quantum-jump unraveling of the master equation.
pub fn mc_trajectories(
    h: &CMatrix,
    ks: &[CMatrix],
    psi0: &CVector,
    settings: TrajectorySettings,
    observables: &ObservableSet,
) -> Result<TrajectoryEnsemble> {
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::parameter("initial state must be normalized"));
    }
    if settings.substeps == 0 {
        return Err(Error::parameter("trajectory sub-steps must be at least 1"));
    }
    let times = sample_times(settings.t_total, settings.dt)?;
    let lind = Lindbladian::new(h, ks, NoiseSpec::none())?;
    let d = h.nrows();
    let shift = trace(h).re / d as f64;
    let generator = lind.effective_hamiltonian() - identity(d) * c(shift, 0.0);
    let dt_sub = settings.dt / settings.substeps as f64;
    let rate_bound =
        spectral_norm(&(lind.effective_hamiltonian().map(|z| c(-z.im, 0.0)) * c(2.0, 0.0)));
    if rate_bound * dt_sub > 0.1 {
        warn!(
            "jump probability per sub-step may reach {:.3}; consider a smaller dt",
            rate_bound * dt_sub
        );
    }
    let ctx = Unraveling {
        ks,
        step: expm_taylor(&(&generator * c(0.0, -dt_sub))),
        generator,
        dt_sub,
        substeps: settings.substeps,
        n_intervals: times.len() - 1,
        interval_lengths: times.windows(2).map(|w| w[1] - w[0]).collect(),
        observables,
    };
    let jumps_enabled = !ks.is_empty();

    let mut trajectories = Vec::new();
    let mut resampled = 0usize;
    let mut no_jump_probability = None;
    let mut floor = None;
    let mut jump_weight = 1.0 / settings.n_traj.max(1) as f64;
    if settings.improved_sampling {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let (samples, _, log_p) = ctx.run(psi0, &mut rng, None, false, &mut resampled)?;
        let p = log_p.exp().clamp(0.0, 1.0);
        no_jump_probability = Some(p);
        trajectories.push(Trajectory {
            weight: p,
            jumps: 0,
            samples,
        });
        floor = Some(p);
        jump_weight = (1.0 - p) / settings.n_traj.max(1) as f64;
        if 1.0 - p < 1e-14 {
            debug!("no-jump path carries all probability; skipping sampled trajectories");
            trajectories[0].weight = 1.0;
            return Ok(TrajectoryEnsemble {
                settings,
                times,
                trajectories,
                no_jump_probability,
                resampled,
            });
        }
    }
    let sampled: Vec<(Trajectory, usize)> = (0..settings.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(i as u64 + 1);
            let mut local = 0usize;
            let (samples, jumps, _) = ctx.run(psi0, &mut rng, floor, jumps_enabled, &mut local)?;
            Ok((
                Trajectory {
                    weight: jump_weight,
                    jumps,
                    samples,
                },
                local,
            ))
        })
        .collect::<Result<_>>()?;
    for (t, r) in sampled {
        resampled += r;
        trajectories.push(t);
    }
    Ok(TrajectoryEnsemble {
        settings,
        times,
        trajectories,
        no_jump_probability,
        resampled,
    })
}

/// Endpoints of `H(s) = (1 − s/T) H0 + (s/T) H1`.
#[derive(Debug, Clone)]
pub struct AspPath {
    pub h0: CMatrix,
    pub h1: CMatrix,
    pub t_total: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct AspRun {
    pub series: ObservableSeries,
    pub final_state: CMatrix,
}

/// Piecewise-constant propagation along the interpolation path, with the
/// schedule evaluated at each step midpoint. Depolarizing noise commutes
/// with unitary conjugation, so each step is `e^{−γδ} UρU† + (1 − e^{−γδ}) I/d`.
pub fn asp_propagate(
    path: &AspPath,
    psi0: &CVector,
    noise: NoiseSpec,
    observables: &ObservableSet,
) -> Result<AspRun> {
    noise.check()?;
    let d = path.h0.nrows();
    if path.h1.nrows() != d || psi0.len() != d {
        return Err(Error::parameter(
            "adiabatic path endpoints and state differ in dimension",
        ));
    }
    if path.steps == 0 || !(path.t_total > 0.0) {
        return Err(Error::parameter(
            "adiabatic path needs T > 0 and at least one step",
        ));
    }
    let delta = path.t_total / path.steps as f64;
    let mut rho = psi0 * psi0.adjoint();
    let mut series = ObservableSeries::default();
    series.push(0.0, &observables.measure_density(&rho)?);
    let decay = (-noise.gamma * delta).exp();
    for step in 0..path.steps {
        let s = (step as f64 + 0.5) / path.steps as f64;
        let h = &path.h0 * c(1.0 - s, 0.0) + &path.h1 * c(s, 0.0);
        let (vals, vecs) = hermitian_eigen(&h);
        let phases = CMatrix::from_diagonal(&CVector::from_iterator(
            d,
            vals.iter().map(|&x| C64::from_polar(1.0, -x * delta)),
        ));
        let u = matmul(&matmul(&vecs, &phases), &vecs.adjoint());
        rho = matmul(&matmul(&u, &rho), &u.adjoint());
        if noise.gamma > 0.0 {
            rho *= c(decay, 0.0);
            for i in 0..d {
                rho[(i, i)] += c((1.0 - decay) / d as f64, 0.0);
            }
        }
        series.push(
            (step + 1) as f64 * delta,
            &observables.measure_density(&rho)?,
        );
    }
    Ok(AspRun {
        series,
        final_state: rho,
    })
}
