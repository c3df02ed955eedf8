//! Exact finite-time formulas for the height function, evaluated
//! numerically: the q-Laplace transform of `h` at a single point as a
//! Fredholm determinant over an infinite wedge contour, and the first few
//! q-moments of the half-continuous model as low-dimensional contour
//! integrals. Both are desk-scale evaluators (small lambda, moderate t)
//! meant to be cross-checked against direct simulation; the asymptotic
//! regime belongs to the experiments layer.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::distributions::gauss_legendre;
use crate::limitshape::phi_integral;
use crate::model::{self, ModelParams, Roadblocks, SpeedField};
use crate::qspecial::{self, PochOrder, QParam};
use crate::simulator::SiteRule;
use crate::{Error, Result};

/// Iteration cap for the termwise-log Pochhammer sum.
const LOG_POCH_MAX_TERMS: usize = 4096;

/// A Pochhammer factor closer to zero than this is treated as a pole hit.
const POCH_POLE_GUARD: f64 = 1e-12;

/// Angular clearance, in radians, required of every shifted point `q^u w`
/// relative to the outer contour during geometry validation.
const LEFT_CLEARANCE: f64 = 1e-9;

/// The outer integration contour: two rays leaving the vertex `a > 0` at
/// angles `±phi` to the real axis, each truncated at
/// `ray_truncation_length`, traversed with decreasing imaginary part (in
/// from the upper ray, through the vertex, out along the lower). All
/// integrands here are analytic across the vertex, so the rays meet there
/// without special treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSpec {
    pub a: f64,
    pub phi: f64,
    pub ray_truncation_length: f64,
    pub nodes_per_ray: usize,
}

impl ContourSpec {
    pub fn new(a: f64, phi: f64, ray_truncation_length: f64, nodes_per_ray: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Contour(format!(
                "contour vertex must be strictly positive, got {a}"
            )));
        }
        if !(phi > 0.0 && phi < PI / 2.0) {
            return Err(Error::Contour(format!(
                "ray angle must lie strictly between 0 and pi/2, got {phi}"
            )));
        }
        if !(ray_truncation_length > 0.0 && ray_truncation_length.is_finite()) {
            return Err(Error::Contour(format!(
                "ray truncation length must be positive, got {ray_truncation_length}"
            )));
        }
        if nodes_per_ray < 8 {
            return Err(Error::Contour(format!(
                "at least 8 nodes per ray are required, got {nodes_per_ray}"
            )));
        }
        Ok(ContourSpec {
            a,
            phi,
            ray_truncation_length,
            nodes_per_ray,
        })
    }

    /// The vertex must sit strictly below `w_min`, the smallest speed value
    /// the integrand can see: every pole of the integrands lives on the real
    /// axis at or above that minimum, hence strictly inside the wedge.
    fn require_below(&self, w_min: f64) -> Result<()> {
        if self.a < w_min {
            Ok(())
        } else {
            Err(Error::Contour(format!(
                "contour vertex a = {} must lie strictly below the minimal speed {}",
                self.a, w_min
            )))
        }
    }

    /// Panel edges sized to the integrand at hand: the first panels are
    /// comparable to `feature` (the absolute scale of the nearest structure
    /// the kernel can develop, e.g. the clearance of the shifted-point
    /// cloud), widths then double up to a cap set by the oscillation
    /// `phase_rate` (radians per unit of ray length) and `max_width`.
    fn adaptive_edges(&self, phase_rate: f64, feature: f64, max_width: f64) -> Vec<f64> {
        let l = self.ray_truncation_length;
        let mut cap = max_width;
        if phase_rate > 0.0 {
            cap = cap.min(8.0 / phase_rate);
        }
        cap = cap.max(0.05);
        let mut width = (4.0 * feature).clamp(0.05, 0.5).min(cap);
        let mut edges = vec![0.0_f64];
        while *edges.last().unwrap() < l {
            let next = (edges.last().unwrap() + width).min(l);
            edges.push(next);
            width = (width * 2.0).min(cap);
        }
        edges
    }

    /// Quadrature nodes and weights for the whole contour over the given
    /// panel edges. Weights carry the complex line element `dw / (2 pi i)`,
    /// orientation included, so a plain weighted sum of kernel values is the
    /// Fredholm-expansion integral. `scale` multiplies the per-panel node
    /// count (node-doubling checks pass 2). Nodes come as the lower-ray
    /// block followed by the upper-ray block with matching order, so entry
    /// `i + len/2` is the conjugate of entry `i`.
    fn nodes_weights_on(&self, edges: &[f64], scale: usize) -> (Vec<Complex64>, Vec<Complex64>) {
        let panels = edges.len() - 1;
        let per_panel = self.nodes_per_ray.div_ceil(panels).max(8) * scale;
        let (gx, gw) = gauss_legendre(per_panel);
        let two_pi_i = Complex64::new(0.0, 2.0 * PI);
        let mut nodes = Vec::with_capacity(2 * panels * per_panel);
        let mut weights = Vec::with_capacity(2 * panels * per_panel);
        // Upper ray runs from far in toward the vertex, lower ray back out.
        for &dir in &[-1.0_f64, 1.0] {
            let ray = Complex64::from_polar(1.0, dir * self.phi);
            for p in 0..panels {
                let (lo, hi) = (edges[p], edges[p + 1]);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for (&x, &w) in gx.iter().zip(&gw) {
                    let s = mid + half * x;
                    nodes.push(self.a + s * ray);
                    weights.push(-dir * ray * (half * w) / two_pi_i);
                }
            }
        }
        (nodes, weights)
    }

    /// True when `v` sits strictly left of the contour with at least
    /// `margin` radians of angular clearance: the wedge interior is
    /// `|arg(v - a)| < phi`, so "left" means the complementary sector.
    fn clearly_left(&self, v: Complex64, margin: f64) -> bool {
        (v - self.a).arg().abs() > self.phi + margin
    }
}

/// Construction policy for the inner contours. For an outer node `w` the
/// inner path is five straight pieces: an upward vertical tail at real part
/// `R`, a leftward run at height `-d`, a short upward crossing of the real
/// axis at real part 1/2, a rightward run at height `+d`, and an upward
/// vertical tail back out — imaginary part never decreasing. `R` grows
/// logarithmically and `d` shrinks inversely with `|w|` within the caps, so
/// the two geometric admissibility conditions keep holding as the outer
/// node moves out along its ray.
#[derive(Debug, Clone, PartialEq)]
pub struct DPolicy {
    /// Coefficient of `log|w|` in the right edge `R(w)`.
    pub b_r: f64,
    /// Additive part of `R(w)`, chosen so that `q^R |w|` stays well inside
    /// the disc around the origin that lies strictly left of the outer
    /// contour; the vertical tails then swing the shifted points around
    /// that disc without ever crossing out of it.
    pub r_offset: f64,
    /// Coefficient of `1/|w|` in the half-gap `d(w)`: the crossing at real
    /// part 1/2 shrinks an outer node by only `sqrt(q)` while rotating it
    /// by up to `d log(1/q)`, and the rotation arc `sqrt(q) |w| d log(1/q)`
    /// must stay under the fixed clearance `(1 - sqrt(q)) a sin(phi)` that
    /// the shrink buys.
    pub b_d: f64,
    /// Floor for `R(w)`; the realized value is rounded to a half-integer so
    /// the corners stay away from the integer poles of the gamma pair.
    pub r_min: f64,
    /// Cap for `d(w)`.
    pub d_max: f64,
    /// Vertical tails are cut at this height above and below the axis; the
    /// determinant evaluator raises the cut on its own when the Laplace
    /// variable sits far from the negative real axis and the integrand
    /// decays more slowly.
    pub vertical_truncation: f64,
    /// Nodes per horizontal panel; panels shrink with `d` to resolve the
    /// near-pole passes, and vertical pieces size themselves from the
    /// oscillation frequency `log|w|` instead.
    pub nodes_per_unit: usize,
    /// Node-doubling acceptance threshold for the final value.
    pub doubling_tolerance: f64,
}

impl DPolicy {
    /// Defaults tuned for the given quantization and outer contour. The
    /// caps keep the worst-case angular spread of the shifted points `q^u w`
    /// safely inside the admissible cone of half-width `pi/4 - phi/2`
    /// around the negative real direction, and the `1/|w|` decay of the
    /// half-gap keeps the crossing at real part 1/2 from rotating far outer
    /// nodes across the contour.
    pub fn for_contour(q: QParam, cspec: &ContourSpec) -> Self {
        let qv = q.get();
        let lq = qv.ln().abs();
        let b = PI / 4.0 - cspec.phi / 2.0;
        let root = qv.sqrt();
        // atan(root * d * |ln q| / (1 - root)) < b caps d independently of w.
        let d_cap = 0.8 * b.tan() * (1.0 - root) / (root * lq);
        // Tail points land within radius q^R |w| of the origin; keep that
        // under 0.3 a. Near the vertex the same bound also keeps the tail
        // swing inside the admissible cone.
        let r_offset = (cspec.a * 0.3).recip().ln() / lq;
        let r_floor = (1.2_f64).max((0.8 * b.sin()).recip().ln() / lq);
        DPolicy {
            b_r: 1.0 / lq,
            r_offset,
            b_d: 0.5 * (1.0 - root) * cspec.a * cspec.phi.sin() / (root * lq),
            r_min: r_floor,
            d_max: d_cap.min(0.2),
            vertical_truncation: 9.0,
            nodes_per_unit: 12,
            doubling_tolerance: 1e-6,
        }
    }

    /// The realized inner contour for outer node `w`, with vertical tails
    /// cut at height `y`.
    fn build(&self, w: Complex64, y: f64, scale: usize) -> DContourSpec {
        let wa = w.norm();
        let r_raw = self.r_min.max(self.b_r * wa.ln() + self.r_offset);
        // Smallest admissible half-integer.
        let r = (r_raw + 0.5).ceil() - 0.5;
        let d = (self.b_d / wa).min(self.d_max);
        let y = y.max(d + 1.0);

        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let two_pi_i = Complex64::new(0.0, 2.0 * PI);

        // Vertical pieces decay like exp(-pi |Im u|) but oscillate with
        // frequency log|w|; panels double in length away from the corner and
        // their node counts track the phase swept.
        let osc = wa.ln().max(1.0);
        let mut v_edges = vec![0.0_f64];
        let mut step = 1.0;
        while v_edges.last().unwrap() + step < y - d {
            let next = v_edges.last().unwrap() + step;
            v_edges.push(next);
            step *= 2.0;
        }
        v_edges.push(y - d);
        let add_vertical = |nodes: &mut Vec<Complex64>, weights: &mut Vec<Complex64>, lower: bool| {
            for p in 0..v_edges.len() - 1 {
                let (e0, e1) = (v_edges[p], v_edges[p + 1]);
                let per_panel = scale * (6 + (0.75 * (e1 - e0) * osc).ceil() as usize);
                let (gx, gw) = gauss_legendre(per_panel);
                // Offsets measure distance from the corner at |Im u| = d.
                let half = 0.5 * (e1 - e0);
                let mid = 0.5 * (e1 + e0);
                for (&x, &wt) in gx.iter().zip(&gw) {
                    let off = mid + half * x;
                    let im = if lower { -d - off } else { d + off };
                    nodes.push(Complex64::new(r, im));
                    weights.push(Complex64::new(0.0, half * wt) / two_pi_i);
                }
            }
        };
        add_vertical(&mut nodes, &mut weights, true);
        let nodes_tail = nodes.len();

        // Horizontal pieces pass the integer poles of the gamma pair at
        // distance d. The mesh is graded: panel edges halve their distance
        // to each integer until panels are comparable to d, so a fixed node
        // count per panel resolves the near-singular spikes at any d.
        let mut h_edges = vec![0.5_f64];
        let kmax = (r - 0.5) as usize;
        for k in 1..=kmax {
            let kf = k as f64;
            let mut offs = vec![];
            let mut off = 0.25;
            while off > 2.0 * d {
                offs.push(off);
                off *= 0.5;
            }
            for &o in &offs {
                h_edges.push(kf - o);
            }
            h_edges.push(kf);
            for &o in offs.iter().rev() {
                h_edges.push(kf + o);
            }
            h_edges.push(kf + 0.5);
        }
        let h_per_panel = self.nodes_per_unit.max(8) * scale;
        let (hgx, hgw) = gauss_legendre(h_per_panel);
        let add_horizontal =
            |nodes: &mut Vec<Complex64>, weights: &mut Vec<Complex64>, y0: f64, leftward: bool| {
                for p in 0..h_edges.len() - 1 {
                    let (lo, hi) = (h_edges[p], h_edges[p + 1]);
                    let half = 0.5 * (hi - lo);
                    let mid = 0.5 * (hi + lo);
                    let sign = if leftward { -1.0 } else { 1.0 };
                    for (&x, &wt) in hgx.iter().zip(&hgw) {
                        nodes.push(Complex64::new(mid + half * x, y0));
                        weights.push(Complex64::new(sign * half * wt, 0.0) / two_pi_i);
                    }
                }
            };
        add_horizontal(&mut nodes, &mut weights, -d, true);
        let nodes_horizontal = nodes.len() - nodes_tail;

        // Center crossing at real part 1/2.
        let c_count = 8 * scale;
        let (cgx, cgw) = gauss_legendre(c_count);
        for (&x, &wt) in cgx.iter().zip(&cgw) {
            nodes.push(Complex64::new(0.5, d * x));
            weights.push(Complex64::new(0.0, d * wt) / two_pi_i);
        }
        let nodes_center = c_count;

        add_horizontal(&mut nodes, &mut weights, d, false);
        add_vertical(&mut nodes, &mut weights, false);

        DContourSpec {
            r,
            d,
            vertical_truncation: y,
            nodes_tail,
            nodes_horizontal,
            nodes_center,
            nodes,
            weights,
        }
    }
}

/// A realized inner contour for one outer node: the geometry parameters
/// together with quadrature nodes and weights (weights carry
/// `du / (2 pi i)`, orientation included).
#[derive(Debug, Clone)]
pub struct DContourSpec {
    pub r: f64,
    pub d: f64,
    pub vertical_truncation: f64,
    pub nodes_tail: usize,
    pub nodes_horizontal: usize,
    pub nodes_center: usize,
    nodes: Vec<Complex64>,
    weights: Vec<Complex64>,
}

impl DContourSpec {
    pub fn nodes(&self) -> &[Complex64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    /// Checks the two geometric admissibility conditions at every node `u`:
    /// the shifted point `q^u w` must stay strictly left of the outer
    /// contour, and `arg(w (q^u - 1))` must lie in the cone
    /// `(pi/2 + b, 3pi/2 - b)` with `b = pi/4 - phi/2`.
    pub fn validate_for(&self, w: Complex64, cspec: &ContourSpec, q: QParam) -> Result<()> {
        let ln_q = q.get().ln();
        let b = PI / 4.0 - cspec.phi / 2.0;
        for &u in &self.nodes {
            let qu = (u * ln_q).exp();
            let shifted = qu * w;
            if !cspec.clearly_left(shifted, LEFT_CLEARANCE) {
                return Err(Error::Contour(format!(
                    "inner node u = {u} sends q^u w = {shifted} onto or right of the outer contour"
                )));
            }
            let angle = (w * (qu - 1.0)).arg().abs();
            if angle < PI / 2.0 + b + LEFT_CLEARANCE {
                return Err(Error::Contour(format!(
                    "inner node u = {u} leaves the admissible cone: |arg(w(q^u-1))| = {angle}"
                )));
            }
        }
        Ok(())
    }
}

/// A point at which the q-Laplace transform is evaluated. The closed
/// positive real axis is excluded so `(-zeta)^u` has a well-defined
/// principal branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaPoint(Complex64);

impl ZetaPoint {
    pub fn new(zeta: Complex64) -> Result<Self> {
        if !zeta.re.is_finite() || !zeta.im.is_finite() {
            return Err(Error::Domain(format!("zeta must be finite, got {zeta}")));
        }
        if zeta.im == 0.0 && zeta.re >= 0.0 {
            return Err(Error::Domain(format!(
                "zeta must avoid the closed positive real axis, got {zeta}"
            )));
        }
        Ok(ZetaPoint(zeta))
    }

    /// The point `-s` for `s > 0`, the slice on which the transform is real
    /// and monotone.
    pub fn negative(s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "negative-axis constructor needs s > 0, got {s}"
            )));
        }
        Self::new(Complex64::new(-s, 0.0))
    }

    pub fn get(self) -> Complex64 {
        self.0
    }
}

/// Termwise principal logarithm of the infinite Pochhammer product
/// `(z; q)_inf`. Only exponentials of differences of these sums are used
/// downstream, so per-factor branch choices are immaterial.
fn log_q_pochhammer(z: Complex64, q: QParam) -> Result<Complex64> {
    let qv = q.get();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut zq = z;
    for _ in 0..LOG_POCH_MAX_TERMS {
        let f = 1.0 - zq;
        if f.norm() < POCH_POLE_GUARD {
            return Err(Error::Pole {
                w: z,
                pole: z.norm() / zq.norm(),
            });
        }
        acc += f.ln();
        zq *= qv;
        if zq.norm() <= 0.5 && 2.0 * zq.norm() / (1.0 - qv) < 1e-16 {
            return Ok(acc);
        }
    }
    Err(Error::Convergence(format!(
        "log-Pochhammer sum did not converge within {LOG_POCH_MAX_TERMS} terms at z = {z}"
    )))
}

/// Infinite Pochhammer with a zero guard: a vanishing product means the
/// evaluation point hit a pole of the reciprocal.
fn poch_nonzero(z: Complex64, q: QParam) -> Result<Complex64> {
    let v = qspecial::q_pochhammer(z, q, PochOrder::Infinite);
    if v.norm() < 1e-280 {
        let k = (z.norm().ln() / q.get().ln().abs()).round().max(0.0);
        return Err(Error::Pole {
            w: z,
            pole: q.get().powf(-k),
        });
    }
    Ok(v)
}

/// The weight function of the q-Laplace kernel: the reciprocal entry
/// Pochhammer, one Pochhammer ratio per roadblock strictly before `x`, and
/// the exponential of `-t w` plus `lambda` times the exact segment sum of
/// `phi_0(w / xi(y))` over `(0, x)`. Direct product form.
pub fn g_of_w(
    w: Complex64,
    t: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    params: &ModelParams,
) -> Result<Complex64> {
    let q = params.q;
    let expo = -t * w + params.lambda * phi_integral(0, w, x, field, q)?;
    let mut val = expo.exp() / poch_nonzero(w / field.xi0(), q)?;
    for e in rb.before(x) {
        let xi_b = model::effective_speed(field, rb, e.b);
        val *= qspecial::q_pochhammer(w * e.p / xi_b, q, PochOrder::Infinite);
        val /= poch_nonzero(w / xi_b, q)?;
    }
    Ok(val)
}

/// Logarithm of [`g_of_w`] assembled as a sum of factor logarithms. The
/// determinant kernel uses differences of these, so ratios of two `g`
/// values stay representable even when both underflow as plain products.
pub fn log_g_of_w(
    w: Complex64,
    t: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    params: &ModelParams,
) -> Result<Complex64> {
    let q = params.q;
    let mut acc = -t * w + params.lambda * phi_integral(0, w, x, field, q)?;
    acc -= log_q_pochhammer(w / field.xi0(), q)?;
    for e in rb.before(x) {
        let xi_b = model::effective_speed(field, rb, e.b);
        acc += log_q_pochhammer(w * e.p / xi_b, q)?;
        acc -= log_q_pochhammer(w / xi_b, q)?;
    }
    Ok(acc)
}

/// Expected reciprocal Pochhammer `E[ 1 / (zeta q^{h(x)}; q)_inf ]` at time
/// `t`, evaluated as a Fredholm determinant over the wedge contour. The
/// value is real and positive for `zeta` on the negative real axis; the
/// full complex determinant is returned so callers can check the residual
/// imaginary part.
///
/// The kernel at a pair `(w, w')` is an integral over the inner contour of
/// `gamma(-u) gamma(1+u) (-zeta)^u  g(w)/g(q^u w) / (q^u w - w')`, with the
/// gamma pair folded to `-pi / sin(pi u)`. The inner integrand factors into
/// a `w'`-independent part, so each outer node computes its inner profile
/// once and every kernel entry is a weighted sum over that profile.
///
/// Fails with a contour error if the vertex is not strictly below the
/// minimal speed on `(0, x)` or if any inner node violates the geometric
/// admissibility conditions, and with a convergence error if doubling all
/// node counts moves the determinant by more than the policy tolerance.
#[allow(clippy::too_many_arguments)]
pub fn qlaplace_det(
    zeta: ZetaPoint,
    t: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    params: &ModelParams,
    cspec: &ContourSpec,
    dpolicy: &DPolicy,
) -> Result<Complex64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "time must be nonnegative and finite, got {t}"
        )));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!(
            "position must be strictly positive, got {x}"
        )));
    }
    cspec.require_below(model::min_speed(field, rb, x).0)?;

    let coarse = qlaplace_det_once(zeta, t, x, field, rb, params, cspec, dpolicy, 1)?;
    let fine = qlaplace_det_once(zeta, t, x, field, rb, params, cspec, dpolicy, 2)?;
    if (fine - coarse).norm() > dpolicy.doubling_tolerance {
        return Err(Error::Convergence(format!(
            "determinant moved by {:.3e} under node doubling (tolerance {:.1e})",
            (fine - coarse).norm(),
            dpolicy.doubling_tolerance
        )));
    }
    Ok(fine)
}

#[allow(clippy::too_many_arguments)]
fn qlaplace_det_once(
    zeta: ZetaPoint,
    t: f64,
    x: f64,
    field: &SpeedField,
    rb: &Roadblocks,
    params: &ModelParams,
    cspec: &ContourSpec,
    dpolicy: &DPolicy,
    scale: usize,
) -> Result<Complex64> {
    let q = params.q;
    let ln_q = q.get().ln();
    let log_minus_zeta = (-zeta.get()).ln();
    // The outer integrand oscillates like exp(-i t Im w) along the rays;
    // the kernel's finest structure in w' sits at the clearance the shifted
    // points keep from the contour.
    let clearance = (1.0 - q.get().sqrt()) * cspec.a * cspec.phi.sin();
    let edges = cspec.adaptive_edges(t * cspec.phi.sin(), clearance, f64::INFINITY);
    let (wn, wv) = cspec.nodes_weights_on(&edges, scale);
    let n = wn.len();

    // The gamma pair decays like exp(-pi |Im u|) only relative to the phase
    // of (-zeta)^u; push the vertical truncation out when zeta leaves the
    // negative real axis.
    let y_eff = dpolicy
        .vertical_truncation
        .max(28.0 / (PI - (-zeta.get()).arg().abs()).max(0.3));

    let log_gw: Vec<Complex64> = wn
        .iter()
        .map(|&w| log_g_of_w(w, t, x, field, rb, params))
        .collect::<Result<_>>()?;

    // For real zeta the integrand has real coefficients, so rows at
    // conjugate outer nodes are conjugates of each other: compute the lower
    // ray only and mirror. Ray blocks are laid out back to back.
    let mirror_rows = zeta.get().im == 0.0 && n % 2 == 0;
    let rows = if mirror_rows { n / 2 } else { n };

    let mut kernel = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..rows {
        let w = wn[i];
        let dspec = dpolicy.build(w, y_eff, scale);
        dspec.validate_for(w, cspec, q)?;
        let m = dspec.nodes().len();
        let mut shifted = Vec::with_capacity(m);
        let mut profile = Vec::with_capacity(m);
        for (&u, &du) in dspec.nodes().iter().zip(dspec.weights()) {
            let qu_w = (u * ln_q).exp() * w;
            let log_ratio = log_gw[i] - log_g_of_w(qu_w, t, x, field, rb, params)?;
            let gamma_pair = -PI / (PI * u).sin();
            shifted.push(qu_w);
            profile.push(du * gamma_pair * (u * log_minus_zeta + log_ratio).exp());
        }
        // Inner nodes whose profile weight is negligible cannot move any
        // kernel entry past the doubling tolerance; drop them before the
        // quadratic assembly loop.
        let fmax = profile.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let cut = 1e-13 * fmax;
        let mut live = 0;
        for k in 0..m {
            if profile[k].norm() >= cut {
                shifted[live] = shifted[k];
                profile[live] = profile[k];
                live += 1;
            }
        }
        shifted.truncate(live);
        profile.truncate(live);
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&s, &p) in shifted.iter().zip(&profile) {
                acc += p / (s - wn[j]);
            }
            kernel[(i, j)] = acc * wv[j];
        }
    }
    if mirror_rows {
        let b = n / 2;
        for i in 0..b {
            for j in 0..n {
                kernel[(i + b, j)] = kernel[(i, (j + b) % n)].conj();
            }
        }
    }

    let det = (DMatrix::identity(n, n) + kernel).determinant();
    Ok(det)
}

/// q-moments `E[q^{ell h(k)}]` of the half-continuous model, for
/// `ell <= 3`, by the partition-indexed sums of `ell`-fold contour
/// integrals. Each summand integrates a Cauchy-type determinant against
/// products of the site weight function along geometric q-orbits. `tol` is
/// the node-doubling acceptance threshold; the call fails with a
/// convergence error when doubling moves the value (or leaves an imaginary
/// residue) past it.
#[allow(clippy::too_many_arguments)]
pub fn q_moment(
    ell: u32,
    k: usize,
    t: f64,
    xi0: f64,
    rule: &SiteRule,
    q: QParam,
    cspec: &ContourSpec,
    tol: f64,
) -> Result<f64> {
    if !(1..=3).contains(&ell) {
        return Err(Error::Domain(format!(
            "moment order must lie in 1..=3, got {ell}"
        )));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Domain(format!(
            "doubling tolerance must be positive, got {tol}"
        )));
    }
    if k < 1 {
        return Err(Error::Domain("site index must be at least 1".to_string()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "time must be nonnegative and finite, got {t}"
        )));
    }
    if !(xi0 > 0.0 && xi0.is_finite()) {
        return Err(Error::Domain(format!(
            "entry rate must be positive, got {xi0}"
        )));
    }
    let mut w_min = xi0;
    for j in 1..k {
        let (xi, s) = rule.site(j);
        w_min = w_min.min(-xi * s);
    }
    cspec.require_below(w_min)?;

    let coarse = q_moment_once(ell, k, t, xi0, rule, q, cspec, 1);
    let fine = q_moment_once(ell, k, t, xi0, rule, q, cspec, 2);
    if (fine - coarse).norm() > tol {
        return Err(Error::Convergence(format!(
            "moment moved by {:.3e} under node doubling (tolerance {:.1e})",
            (fine - coarse).norm(),
            tol
        )));
    }
    if fine.im.abs() > tol {
        return Err(Error::Convergence(format!(
            "moment has imaginary residue {:.3e}",
            fine.im
        )));
    }
    Ok(fine.re)
}

#[allow(clippy::too_many_arguments)]
fn q_moment_once(
    ell: u32,
    k: usize,
    t: f64,
    xi0: f64,
    rule: &SiteRule,
    q: QParam,
    cspec: &ContourSpec,
    scale: usize,
) -> Complex64 {
    let qv = q.get();
    // The site factor decays like exp((q-1) t Re w) and oscillates at the
    // matching rate. The finest structure near the contour is either a site
    // factor pole (clearance grows with the pole-to-vertex gap) or the
    // Cauchy pairs over the q-shifted rays (clearance shrinks with the
    // vertex). Triple integrals cap the panel width higher to keep the node
    // count cubable.
    let phase = (1.0 - qv) * t * cspec.phi.sin();
    let mut pole_min = xi0;
    for j in 1..k {
        let (xi, s) = rule.site(j);
        pole_min = pole_min.min(-xi * s);
    }
    let feature = ((pole_min - cspec.a).min((1.0 - qv) * cspec.a) * cspec.phi.sin()).max(0.0);
    let max_width = if ell <= 2 { 1.0 } else { 4.0 };
    let edges = cspec.adaptive_edges(phase, feature, max_width);
    let (wn, wv) = cspec.nodes_weights_on(&edges, scale);
    let n = wn.len();

    let f_hc = |w: Complex64| -> Complex64 {
        let mut v = ((qv - 1.0) * t * w).exp() / (1.0 - w / xi0);
        for j in 1..k {
            let (xi, s) = rule.site(j);
            v *= (xi * s + s * s * w) / (xi * s + w);
        }
        v
    };

    // orbit[m-1][i] = f(w_i) f(q w_i) ... f(q^{m-1} w_i), weighted.
    let mut orbit = vec![vec![Complex64::new(0.0, 0.0); n]; ell as usize];
    for i in 0..n {
        let mut prod = Complex64::new(1.0, 0.0);
        let mut point = wn[i];
        for row in orbit.iter_mut() {
            prod *= f_hc(point);
            point *= qv;
            row[i] = prod * wv[i];
        }
    }

    let qp = [qv, qv * qv, qv * qv * qv];
    let pair = |wi: Complex64, mu_i: u32, wj: Complex64| 1.0 / (wi * qp[mu_i as usize - 1] - wj);

    // Partitions of ell with their multiplicity factors 1/(m_1! m_2! ...).
    let partitions: Vec<(Vec<u32>, f64)> = match ell {
        1 => vec![(vec![1], 1.0)],
        2 => vec![(vec![2], 1.0), (vec![1, 1], 0.5)],
        _ => vec![
            (vec![3], 1.0),
            (vec![2, 1], 1.0),
            (vec![1, 1, 1], 1.0 / 6.0),
        ],
    };

    let mut total = Complex64::new(0.0, 0.0);
    for (parts, coeff) in &partitions {
        let mut sum = Complex64::new(0.0, 0.0);
        match parts.as_slice() {
            [m1] => {
                for i in 0..n {
                    sum += pair(wn[i], *m1, wn[i]) * orbit[*m1 as usize - 1][i];
                }
            }
            [m1, m2] => {
                for i in 0..n {
                    let pi = orbit[*m1 as usize - 1][i];
                    for j in 0..n {
                        let det = pair(wn[i], *m1, wn[i]) * pair(wn[j], *m2, wn[j])
                            - pair(wn[i], *m1, wn[j]) * pair(wn[j], *m2, wn[i]);
                        sum += det * pi * orbit[*m2 as usize - 1][j];
                    }
                }
            }
            [m1, m2, m3] => {
                for i in 0..n {
                    let pi = orbit[*m1 as usize - 1][i];
                    for j in 0..n {
                        let pij = pi * orbit[*m2 as usize - 1][j];
                        for l in 0..n {
                            let a11 = pair(wn[i], *m1, wn[i]);
                            let a12 = pair(wn[i], *m1, wn[j]);
                            let a13 = pair(wn[i], *m1, wn[l]);
                            let a21 = pair(wn[j], *m2, wn[i]);
                            let a22 = pair(wn[j], *m2, wn[j]);
                            let a23 = pair(wn[j], *m2, wn[l]);
                            let a31 = pair(wn[l], *m3, wn[i]);
                            let a32 = pair(wn[l], *m3, wn[j]);
                            let a33 = pair(wn[l], *m3, wn[l]);
                            let det = a11 * (a22 * a33 - a23 * a32)
                                - a12 * (a21 * a33 - a23 * a31)
                                + a13 * (a21 * a32 - a22 * a31);
                            sum += det * pij * orbit[*m3 as usize - 1][l];
                        }
                    }
                }
            }
            _ => unreachable!("partitions of ell <= 3 have at most 3 parts"),
        }
        total += *coeff * sum;
    }

    total * qspecial::q_pochhammer_re(qv, q, PochOrder::Finite(ell))
}
