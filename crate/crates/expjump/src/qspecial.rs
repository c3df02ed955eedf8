//! q-series special functions.
//!
//! Provides the q-Pochhammer symbol `(z; q)_m` and the family of functions
//!
//! ```text
//! phi_0(w) = sum_{k>=0} q^k w / (1 - q^k w)
//! phi_1(w) = sum_{k>=0} q^k w / (1 - q^k w)^2
//! phi_2(w) = sum_{k>=0} q^k w (1 + q^k w) / (1 - q^k w)^3
//! phi_3(w) = sum_{k>=0} q^k w (1 + 4 q^k w + q^{2k} w^2) / (1 - q^k w)^4
//! ```
//!
//! valid for all complex w off the pole set {q^{-k}, k >= 0}, together with
//! the inverse of phi_1 on [0, 1). Truncation points are chosen from
//! certified geometric tail bounds, never heuristics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tail tolerance for the infinite q-Pochhammer product.
pub const POCHHAMMER_TOL: f64 = 1e-14;
/// Relative tail tolerance for the phi_n series.
pub const PHI_TOL: f64 = 1e-15;
/// Evaluation rejects w with |1 - q^k w| below this guard distance,
/// i.e. within relative distance 1e-8 of the pole q^{-k}.
pub const POLE_GUARD: f64 = 1e-8;

const MAX_TERMS: usize = 20_000;

/// Quantization parameter, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QParam(f64);

impl QParam {
    pub fn new(q: f64) -> Result<Self> {
        if q.is_finite() && q > 0.0 && q < 1.0 {
            Ok(QParam(q))
        } else {
            Err(Error::Domain(format!(
                "q must lie strictly in (0, 1), got {q}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QParam {
    type Error = Error;
    fn try_from(q: f64) -> Result<Self> {
        QParam::new(q)
    }
}

impl From<QParam> for f64 {
    fn from(q: QParam) -> f64 {
        q.0
    }
}

/// Number of factors in a q-Pochhammer symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PochOrder {
    Finite(u32),
    Infinite,
}

/// One evaluated point of phi_n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValue {
    pub n: u8,
    pub w: Complex64,
    pub value: Complex64,
}

/// q-Pochhammer symbol `(z; q)_m = prod_{i=0}^{m-1} (1 - z q^i)`.
///
/// For `PochOrder::Infinite` the product is truncated once the
/// multiplicative tail bound `exp(2 |z| q^k / (1-q)) - 1` (valid from the
/// first index with |z| q^k <= 1/2, via log(1-x) >= -2x) drops below
/// [`POCHHAMMER_TOL`]. Entire in z, so no error conditions.
pub fn q_pochhammer(z: Complex64, q: QParam, m: PochOrder) -> Complex64 {
    let q = q.get();
    match m {
        PochOrder::Finite(m) => {
            let mut prod = Complex64::new(1.0, 0.0);
            let mut zq = z;
            for _ in 0..m {
                prod *= 1.0 - zq;
                zq *= q;
            }
            prod
        }
        PochOrder::Infinite => {
            let mut prod = Complex64::new(1.0, 0.0);
            let mut zq = z;
            for _ in 0..MAX_TERMS {
                prod *= 1.0 - zq;
                zq *= q;
                let bound = 2.0 * zq.norm() / (1.0 - q);
                if zq.norm() <= 0.5 && bound.exp_m1() < POCHHAMMER_TOL {
                    break;
                }
            }
            prod
        }
    }
}

/// Real-argument convenience wrapper around [`q_pochhammer`].
pub fn q_pochhammer_re(z: f64, q: QParam, m: PochOrder) -> f64 {
    q_pochhammer(Complex64::new(z, 0.0), q, m).re
}

fn phi_term(n: u8, v: Complex64) -> Complex64 {
    let d = 1.0 - v;
    match n {
        0 => v / d,
        1 => v / (d * d),
        2 => v * (1.0 + v) / (d * d * d),
        3 => v * (1.0 + 4.0 * v + v * v) / (d * d * d * d),
        _ => unreachable!("phi_n defined for n in 0..=3"),
    }
}

// Bounds on |term| / (|w| q^k) once |q^k w| <= 1/2, by maximizing the
// rational factor over the disk |v| <= 1/2.
const PHI_TERM_BOUND: [f64; 4] = [2.0, 4.0, 12.0, 52.0];

/// phi_n(w) for n in 0..=3 and complex w off the pole set {q^{-k}}.
pub fn phi(n: u8, w: Complex64, q: QParam) -> Result<Complex64> {
    assert!(n <= 3, "phi_n defined for n in 0..=3");
    let qv = q.get();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut qk = 1.0f64;
    for _ in 0..MAX_TERMS {
        let v = w * qk;
        if (1.0 - v).norm() < POLE_GUARD {
            return Err(Error::Pole { w, pole: 1.0 / qk });
        }
        acc += phi_term(n, v);
        qk *= qv;
        if v.norm() <= 0.5 {
            let tail = PHI_TERM_BOUND[n as usize] * w.norm() * qk / (1.0 - qv);
            if tail <= PHI_TOL * (1.0 + acc.norm()) {
                return Ok(acc);
            }
        }
    }
    Err(Error::Convergence(format!(
        "phi_{n} series did not meet its tail bound within {MAX_TERMS} terms"
    )))
}

/// Real-argument convenience wrapper around [`phi`].
pub fn phi_re(n: u8, w: f64, q: QParam) -> Result<f64> {
    phi(n, Complex64::new(w, 0.0), q).map(|v| v.re)
}

/// [`phi`] packaged with its inputs.
pub fn phi_value(n: u8, w: Complex64, q: QParam) -> Result<PhiValue> {
    phi(n, w, q).map(|value| PhiValue { n, w, value })
}

/// phi_3(w) - phi_2(w) evaluated by its own positive-term series
/// `sum_k 2 q^{2k} w^2 (2 + q^k w) / (1 - q^k w)^4`, strictly positive for
/// w in (0, 1).
pub fn phi3_minus_phi2(w: f64, q: QParam) -> f64 {
    assert!(
        w > 0.0 && w < 1.0,
        "phi3_minus_phi2 requires w in (0, 1), got {w}"
    );
    let qv = q.get();
    let mut acc = 0.0f64;
    let mut qk = 1.0f64;
    for _ in 0..MAX_TERMS {
        let v = qk * w;
        let d = 1.0 - v;
        acc += 2.0 * v * v * (2.0 + v) / (d * d * d * d);
        qk *= qv;
        // terms <= 80 (q^k w)^2 once q^k w <= 1/2; geometric tail in q^{2k}
        let tail = 80.0 * (qk * w) * (qk * w) / (1.0 - qv * qv);
        if v <= 0.5 && tail <= PHI_TOL * (1.0 + acc) {
            break;
        }
    }
    acc
}

/// Unique w in [0, 1) with phi_1(w) = rho, by bisection on the strictly
/// increasing phi_1. Residual |phi_1(w) - rho| <= 1e-10 (1 + rho).
pub fn phi1_inverse(rho: f64, q: QParam) -> f64 {
    assert!(rho >= 0.0 && rho.is_finite(), "rho must be >= 0, got {rho}");
    if rho == 0.0 {
        return 0.0;
    }
    let eval = |w: f64| phi_re(1, w, q).expect("phi_1 is pole-free on [0, 1)");
    // expand the upper bracket toward 1 until phi_1 exceeds rho
    let mut hi = 0.5;
    while eval(hi) < rho {
        hi = 0.5 * (1.0 + hi);
        if 1.0 - hi < 2.0 * POLE_GUARD {
            break;
        }
    }
    let mut lo = 0.0;
    let tol = 1e-10 * (1.0 + rho);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = eval(mid);
        if (v - rho).abs() <= tol {
            return mid;
        }
        if v < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
