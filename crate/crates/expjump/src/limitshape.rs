//! Macroscopic (deterministic) quantities of the model: the edge of the
//! growing region, the critical point of the steep-descent analysis, the
//! limit shape itself, phase classification with dispersion constants, the
//! action function `G` with its derivatives, the hydrodynamic PDE residual,
//! and environment surgery for creating traffic jams.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{self, Roadblock, Roadblocks, SpeedField};
use crate::qspecial::{self, QParam};
use crate::{Error, Result};

/// Half-width of the band `|omega_circ - W_x| <= EPS_PHASE` classified as
/// the transition phase. Exact equality is measure-zero in floats, so the
/// boundary gets a small tolerance; configurable via
/// [`classify_with_tolerance`] when transition points are constructed
/// intentionally.
pub const EPS_PHASE: f64 = 1e-9;

/// Integral of `phi_n(w / xi(y))` over `y` in `(0, x)`, evaluated as the
/// exact finite sum over the piecewise-constant segments of the field.
pub fn phi_integral(
    n: u8,
    w: Complex64,
    x: f64,
    field: &SpeedField,
    q: QParam,
) -> Result<Complex64> {
    assert!(x > 0.0, "phi_integral requires x > 0");
    let mut acc = Complex64::new(0.0, 0.0);
    for (start, end, v) in field.segments_until(x) {
        acc += (end - start) * qspecial::phi(n, w / v, q)?;
    }
    Ok(acc)
}

/// Real-argument variant of [`phi_integral`].
pub fn phi_integral_re(n: u8, w: f64, x: f64, field: &SpeedField, q: QParam) -> Result<f64> {
    assert!(x > 0.0, "phi_integral_re requires x > 0");
    let mut acc = 0.0;
    for (start, end, v) in field.segments_until(x) {
        acc += (end - start) * qspecial::phi_re(n, w / v, q)?;
    }
    Ok(acc)
}

/// Integral of `phi_3 - phi_2` over `(0, x)`, computed termwise so the
/// difference stays accurate when both integrals are large. Requires
/// `0 < w < W_circ_x` so every segment argument lies in (0, 1).
pub fn phi3_minus_phi2_integral(w: f64, x: f64, field: &SpeedField, q: QParam) -> f64 {
    assert!(x > 0.0, "phi3_minus_phi2_integral requires x > 0");
    let mut acc = 0.0;
    for (start, end, v) in field.segments_until(x) {
        acc += (end - start) * qspecial::phi3_minus_phi2(w / v, q);
    }
    acc
}

/// Time at which the growing region first reaches `x`:
/// the integral of `1 / ((1-q) xi(y))` over `(0, x)`.
pub fn tau_edge(x: f64, field: &SpeedField, q: QParam) -> f64 {
    assert!(x > 0.0, "tau_edge requires x > 0");
    let c = 1.0 - q.get();
    field
        .segments_until(x)
        .iter()
        .map(|&(start, end, v)| (end - start) / (c * v))
        .sum()
}

/// Rightmost point reached by time `tau`: the exact segment-by-segment
/// inverse of [`tau_edge`]. Returns 0 when `tau = 0`.
pub fn edge_x(tau: f64, field: &SpeedField, q: QParam) -> f64 {
    assert!(tau >= 0.0, "edge_x requires tau >= 0");
    let c = 1.0 - q.get();
    let bps = field.breakpoints();
    let vals = field.segment_values();
    let mut remaining = tau;
    for (k, &start) in bps.iter().enumerate() {
        let rate = c * vals[k];
        if let Some(&next) = bps.get(k + 1) {
            let cost = (next - start) / rate;
            if remaining <= cost {
                return start + remaining * rate;
            }
            remaining -= cost;
        } else {
            return start + remaining * rate;
        }
    }
    unreachable!("the final segment is unbounded")
}

fn w_circ_of(field: &SpeedField, x: f64) -> f64 {
    field
        .segments_until(x)
        .iter()
        .map(|&(_, _, v)| v)
        .fold(f64::INFINITY, f64::min)
}

fn speed_left_limit(field: &SpeedField, x: f64) -> f64 {
    field
        .segments_until(x)
        .last()
        .map(|&(_, _, v)| v)
        .expect("x > 0 guarantees at least one segment")
}

/// Unique root of `tau * w = Phi_2(w | x)` on `(0, W_circ_x)`.
///
/// The map `w -> Phi_2(w | x) / w` increases strictly from `tau_edge(x)` at
/// `0+` to infinity at `W_circ_x`, so for `x` strictly inside the growing
/// region the root exists, is unique, and is found by bisection. A pole
/// guard triggering during bisection means `Phi_2` dwarfs `tau * w` there,
/// i.e. the midpoint is above the root.
pub fn omega_circ(tau: f64, x: f64, field: &SpeedField, q: QParam) -> Result<f64> {
    if !(tau > 0.0 && x > 0.0) {
        return Err(Error::Domain(format!(
            "omega_circ requires tau > 0 and x > 0, got tau = {tau}, x = {x}"
        )));
    }
    let xe = edge_x(tau, field, q);
    if x >= xe {
        return Err(Error::Domain(format!(
            "x = {x} is at or beyond the edge x_e = {xe}; the critical point degenerates"
        )));
    }
    let w_circ = w_circ_of(field, x);
    let delta = 1e-12 * w_circ;
    let mut lo = delta;
    let mut hi = w_circ - delta;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let above_root = match phi_integral_re(2, mid, x, field, q) {
            Ok(p2) => tau * mid - p2 < 0.0,
            Err(Error::Pole { .. }) => true,
            Err(e) => return Err(e),
        };
        if above_root {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * w_circ {
            break;
        }
    }
    let w = 0.5 * (lo + hi);
    let p2 = phi_integral_re(2, w, x, field, q)?;
    let residual = (tau * w - p2).abs();
    if residual > 1e-10 * (1.0 + tau * w) {
        return Err(Error::Convergence(format!(
            "critical-point bisection stalled at w = {w} with residual {residual}"
        )));
    }
    Ok(w)
}

/// The limit shape `H(tau, x)`: `+inf` at `x = 0`, `0` at and beyond the
/// edge, and `tau * w - Phi_1(w | x)` at `w = min(omega_circ, W_x)`
/// otherwise.
pub fn height(tau: f64, x: f64, field: &SpeedField, rb: &Roadblocks, q: QParam) -> Result<f64> {
    assert!(tau >= 0.0 && x >= 0.0, "height requires tau >= 0 and x >= 0");
    if x == 0.0 {
        return Ok(f64::INFINITY);
    }
    if tau == 0.0 || x >= edge_x(tau, field, q) {
        return Ok(0.0);
    }
    let omega = omega_circ(tau, x, field, q)?;
    let (w_x, _) = model::min_speed(field, rb, x);
    let w_cr = omega.min(w_x);
    Ok(tau * w_cr - phi_integral_re(1, w_cr, x, field, q)?)
}

/// Fluctuation phase at a point strictly inside the growing region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    TracyWidom,
    Transition,
    Gaussian,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::TracyWidom => write!(f, "TracyWidom"),
            Phase::Transition => write!(f, "Transition"),
            Phase::Gaussian => write!(f, "Gaussian"),
        }
    }
}

/// Everything the macroscopic theory predicts at one space-time point:
/// the critical point, the environment minima, the phase, the multiplicity
/// of the minimum, the limit shape value, the particle density, and the
/// dispersion constant with its fluctuation exponent.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    pub tau: f64,
    pub x: f64,
    pub omega_circ: f64,
    pub w_x: f64,
    pub w_circ_x: f64,
    pub phase: Phase,
    pub m_x: u32,
    pub h: f64,
    pub density: f64,
    pub dispersion: f64,
    pub fluctuation_exponent: f64,
}

/// [`classify_with_tolerance`] with the default [`EPS_PHASE`] band.
pub fn classify(
    tau: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    q: QParam,
) -> Result<PhaseReport> {
    classify_with_tolerance(tau, x, field, rb, q, EPS_PHASE)
}

pub fn classify_with_tolerance(
    tau: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    q: QParam,
    eps_phase: f64,
) -> Result<PhaseReport> {
    let omega = omega_circ(tau, x, field, q)?;
    let (w_x, w_circ_x) = model::min_speed(field, rb, x);
    let phase = if omega < w_x - eps_phase {
        Phase::TracyWidom
    } else if omega <= w_x + eps_phase {
        Phase::Transition
    } else {
        Phase::Gaussian
    };
    let w_cr = omega.min(w_x);
    let h = tau * w_cr - phi_integral_re(1, w_cr, x, field, q)?;

    // Multiplicity of the minimum: exact stored-value coincidences among the
    // boundary value and the roadblock values strictly inside (0, x).
    let mut m_x = 0u32;
    if field.xi0() == w_x {
        m_x += 1;
    }
    for e in rb.before(x) {
        if e.xi_override.unwrap_or_else(|| field.eval_speed(e.b)) == w_x {
            m_x += 1;
        }
    }

    let dispersion = match phase {
        Phase::Gaussian => {
            let p2 = phi_integral_re(2, w_x, x, field, q)?;
            (tau * w_x - p2).sqrt() / w_x
        }
        _ => {
            let gap = phi3_minus_phi2_integral(omega, x, field, q);
            (gap / 2.0).cbrt() / omega
        }
    };
    let density = qspecial::phi_re(1, w_cr / speed_left_limit(field, x), q)?;
    let fluctuation_exponent = match phase {
        Phase::Gaussian => 0.5,
        _ => 1.0 / 3.0,
    };

    Ok(PhaseReport {
        tau,
        x,
        omega_circ: omega,
        w_x,
        w_circ_x,
        phase,
        m_x,
        h,
        density,
        dispersion,
        fluctuation_exponent,
    })
}

/// The action function at `w` together with its first three derivatives,
/// all in closed form through the segment integrals.
#[derive(Debug, Clone, Copy)]
pub struct GValue {
    pub w: Complex64,
    pub g: Complex64,
    pub g1: Complex64,
    pub g2: Complex64,
    pub g3: Complex64,
}

/// Evaluates `G(w) = -tau * w + h * log w + Phi_0(w | x)` and its first
/// three derivatives. `h` is passed explicitly so the caller controls
/// which height enters the logarithmic term.
pub fn g_eval(
    w: Complex64,
    tau: f64,
    x: f64,
    h: f64,
    field: &SpeedField,
    q: QParam,
) -> Result<GValue> {
    let p0 = phi_integral(0, w, x, field, q)?;
    let p1 = phi_integral(1, w, x, field, q)?;
    let p2 = phi_integral(2, w, x, field, q)?;
    let p3 = phi_integral(3, w, x, field, q)?;
    let g = -tau * w + h * w.ln() + p0;
    let g1 = (h - tau * w + p1) / w;
    let g2 = (-h + p2 - p1) / (w * w);
    let g3 = (2.0 * h + p3 - 3.0 * p2 + 2.0 * p1) / (w * w * w);
    Ok(GValue { w, g, g1, g2, g3 })
}

/// Centered finite-difference estimates `(dH/dtau, dH/dx)` of the limit
/// shape at `(tau, x)`.
pub fn height_partials(
    tau: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    q: QParam,
    h_tau: f64,
    h_x: f64,
) -> Result<(f64, f64)> {
    assert!(h_tau > 0.0 && h_x > 0.0, "step sizes must be positive");
    if x - h_x <= 0.0 || tau - h_tau <= 0.0 {
        return Err(Error::Domain(format!(
            "stencil around (tau, x) = ({tau}, {x}) leaves the domain"
        )));
    }
    let hxp = height(tau, x + h_x, field, rb, q)?;
    let hxm = height(tau, x - h_x, field, rb, q)?;
    let htp = height(tau + h_tau, x, field, rb, q)?;
    let htm = height(tau - h_tau, x, field, rb, q)?;
    Ok(((htp - htm) / (2.0 * h_tau), (hxp - hxm) / (2.0 * h_x)))
}

/// Residual `dH/dx + phi_1(xi(x)^{-1} dH/dtau)` of the hydrodynamic
/// equation, with the partials estimated by centered differences. The
/// stencil must stay clear of breakpoints and roadblocks: the limit shape
/// is not smooth across them and the finite differences would be
/// meaningless.
pub fn pde_residual(
    tau: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    q: QParam,
    h_tau: f64,
    h_x: f64,
) -> Result<f64> {
    for &b in field.breakpoints() {
        if b > 0.0 && (b - x).abs() <= h_x {
            return Err(Error::Domain(format!(
                "breakpoint at {b} lies inside the stencil around x = {x}"
            )));
        }
    }
    if !rb.in_range(x - h_x, x + h_x).is_empty() {
        return Err(Error::Domain(format!(
            "a roadblock lies inside the stencil around x = {x}"
        )));
    }
    let (dh_dtau, dh_dx) = height_partials(tau, x, field, rb, q, h_tau, h_x)?;
    let v = dh_dtau / field.eval_speed(x);
    Ok(dh_dx + qspecial::phi_re(1, v, q)?)
}

/// Environment surgery that can create a traffic jam at `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JamScenario {
    /// Add a roadblock at `sigma` with pass probability `p` and point speed
    /// value `alpha` there. Creates a jam iff `alpha` is below the critical
    /// point at `sigma`; otherwise the limit shape is unchanged.
    Roadblock { sigma: f64, alpha: f64, p: f64 },
    /// Overwrite the speed with `kappa` on the interval `(sigma, sigma1)`.
    /// Creates a jam at `sigma` iff `kappa` is below the critical point
    /// there.
    Slowdown { sigma: f64, sigma1: f64, kappa: f64 },
}

/// Applies a [`JamScenario`] to an environment, returning the modified
/// field and roadblock set.
pub fn traffic_jam_modify(
    field: &SpeedField,
    rb: &Roadblocks,
    scenario: JamScenario,
) -> Result<(SpeedField, Roadblocks)> {
    match scenario {
        JamScenario::Roadblock { sigma, alpha, p } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Domain(format!(
                    "roadblock insertion point must be strictly positive, got {sigma}"
                )));
            }
            let mut entries = rb.entries().to_vec();
            entries.push(Roadblock {
                b: sigma,
                p,
                xi_override: Some(alpha),
            });
            Ok((field.clone(), Roadblocks::new(entries)?))
        }
        JamScenario::Slowdown {
            sigma,
            sigma1,
            kappa,
        } => {
            if !(sigma > 0.0 && sigma1 > sigma && sigma1.is_finite()) {
                return Err(Error::Domain(format!(
                    "slowdown interval ({sigma}, {sigma1}) is not a positive interval"
                )));
            }
            let mut bps = Vec::new();
            let mut vals = Vec::new();
            for (k, &b) in field.breakpoints().iter().enumerate() {
                if b < sigma {
                    bps.push(b);
                    vals.push(field.segment_values()[k]);
                }
            }
            bps.push(sigma);
            vals.push(kappa);
            bps.push(sigma1);
            vals.push(field.eval_speed(sigma1));
            for (k, &b) in field.breakpoints().iter().enumerate() {
                if b > sigma1 {
                    bps.push(b);
                    vals.push(field.segment_values()[k]);
                }
            }
            let modified = SpeedField::new(field.xi0(), bps, vals)?;
            Ok((modified, rb.clone()))
        }
    }
}
