//! The erf-window filter in frequency and time, and its trapezoidal quadrature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, C64};
use crate::spectral::Spectrum;

/// Time cutoff in units of `1/Δ_H`.
pub const DEFAULT_KAPPA: f64 = 12.0;

/// Default half-count of quadrature nodes.
pub const DEFAULT_NODES: usize = 200;

/// Parameters of `f̂(ω) = ½[erf((ω+a)/δa) − erf((ω+b)/δb)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub a: f64,
    pub b: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    /// Half-width of the time window used by the quadrature.
    pub s_max: f64,
}

impl FilterSpec {
    pub fn new(a: f64, b: f64, delta_a: f64, delta_b: f64, s_max: f64) -> Result<Self> {
        let spec = FilterSpec {
            a,
            b,
            delta_a,
            delta_b,
            s_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.delta_a, self.delta_b, self.s_max]
            .iter()
            .all(|x| x.is_finite());
        if !finite || !(self.a > self.b && self.b > 0.0) {
            return Err(Error::parameter(format!(
                "filter cutoffs need a > b > 0 (a = {}, b = {})",
                self.a, self.b
            )));
        }
        if !(self.delta_a > 0.0 && self.delta_b > 0.0 && self.s_max > 0.0) {
            return Err(Error::parameter(
                "filter widths and time window must be positive",
            ));
        }
        Ok(())
    }
}

/// `f̂(ω)`
pub fn filter_freq(spec: &FilterSpec, omega: f64) -> f64 {
    0.5 * (libm::erf((omega + spec.a) / spec.delta_a) - libm::erf((omega + spec.b) / spec.delta_b))
}

/// `f(s) = (e^{ias − δa²s²/4} − e^{ibs − δb²s²/4}) / (2πis)`, the inverse
/// transform of [`filter_freq`] under `f̂(ω) = ∫ f(s) e^{iωs} ds`.
pub fn filter_time(spec: &FilterSpec, s: f64) -> C64 {
    let FilterSpec {
        a,
        b,
        delta_a: da,
        delta_b: db,
        ..
    } = *spec;
    if s.abs() < 1e-6 / a {
        let c0 = (a - b) / (2.0 * PI);
        let c1 = (-(a * a - b * b) / 2.0 - (da * da - db * db) / 4.0) / (2.0 * PI);
        let c2 = (-(a.powi(3) - b.powi(3)) / 6.0 - (a * da * da - b * db * db) / 4.0) / (2.0 * PI);
        // c1 multiplies 1/i = -i
        return c(c0 + c2 * s * s, -c1 * s);
    }
    let g = |freq: f64, width: f64| C64::from_polar((-width * width * s * s / 4.0).exp(), freq * s);
    (g(a, da) - g(b, db)) / c(0.0, 2.0 * PI * s)
}

/// Defaults derived from a spectrum: `b = Δ_H`, `a = 2·radius·safety + b`,
/// `δa = a/2`, `δb = b/2`, `S = κ/Δ_H`.
pub fn default_filter_params(spec: &Spectrum, safety: f64) -> Result<FilterSpec> {
    if !(safety >= 1.0) {
        return Err(Error::parameter(format!(
            "filter safety factor {safety} must be ≥ 1"
        )));
    }
    let b = spec.require_gap()?;
    let a = 2.0 * spec.radius * safety + b;
    FilterSpec::new(a, b, a / 2.0, b / 2.0, DEFAULT_KAPPA / b)
}

/// Symmetric trapezoidal rule on `[-S, S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub m: usize,
}

/// Nodes `s_j = j·S/M` for `j = −M..M`, weights `S/M` halved at the ends.
/// `M = 0` is the one-point rule at `s = 0` with weight `2S`.
pub fn build_quadrature(spec: &FilterSpec, m: usize) -> QuadratureRule {
    let s = spec.s_max;
    if m == 0 {
        return QuadratureRule {
            nodes: vec![0.0],
            weights: vec![2.0 * s],
            m,
        };
    }
    let h = s / m as f64;
    let mi = m as i64;
    let nodes = (-mi..=mi).map(|j| j as f64 * h).collect();
    let weights = (-mi..=mi)
        .map(|j| if j.abs() == mi { h / 2.0 } else { h })
        .collect();
    QuadratureRule { nodes, weights, m }
}
