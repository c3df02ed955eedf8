// Reference constants keep every digit the oracle produced.
#![allow(clippy::excessive_precision)]

use expjump::limitshape::{
    classify, edge_x, g_eval, height, height_partials, omega_circ, pde_residual, phi_integral,
    phi_integral_re, phi3_minus_phi2_integral, tau_edge, traffic_jam_modify, JamScenario, Phase,
};
use expjump::model::{min_speed, Roadblock, Roadblocks, SpeedField};
use expjump::qspecial::{phi_re, QParam};
use expjump::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn q_half() -> QParam {
    QParam::new(0.5).unwrap()
}

/// Stepped environment with a slow entry point: 0.7 at the origin, speed 1
/// until 0.2, speed 0.4 beyond.
fn stepped_field() -> SpeedField {
    SpeedField::new(0.7, vec![0.0, 0.2], vec![1.0, 0.4]).unwrap()
}

/// Transition point of the stepped environment at tau = 3: the unique x
/// with omega_circ = 0.7, i.e. 2.1 / phi_2(0.7). Value from a 50-digit
/// evaluation of the series.
const SIGMA: f64 = 0.045273574819540647;

// Reference values computed with 50-digit arithmetic.
const PHI1_07: f64 = 9.061289927112240417;
const PHI2_07: f64 = 46.384673805206419641;
const OMEGA_HOM_T4_X1: f64 = 0.22421242364630037142;
const H_HOM_T4_X1: f64 = 0.26097234584151215541;
const DTW_HOM_T4_X1: f64 = 3.1782899283494971183;
const OMEGA_STEP_X01: f64 = 0.61057015978823931291;
const H_STEP_X01: f64 = 1.3276078299265182641;
const OMEGA_STEP_X03: f64 = 0.16947778548794631541;
const H_STEP_X03: f64 = 0.23478221410657247931;
const PHI2_INT_02_03: f64 = 0.85680372266207592005;
const H_STEP_X003: f64 = 1.8281613021866327875;
const DG_STEP_X003: f64 = 1.202429331661708628;

/// Quadrature oracle for the integral of phi_n(w / xi(y)) over (0, x): the
/// integrand is probed pointwise on a fine uniform grid, its jump points are
/// localized by bisection on function values, and each constant piece is
/// integrated exactly. Uses no knowledge of the segment decomposition.
fn phi_integral_quadrature(n: u8, w: f64, x: f64, field: &SpeedField, q: QParam) -> f64 {
    let f = |y: f64| phi_re(n, w / field.eval_speed(y), q).unwrap();
    let panels = 4096;
    let dx = x / panels as f64;
    let mut cuts = vec![0.0];
    for i in 0..panels - 1 {
        let (mut lo, mut hi) = ((i as f64 + 0.5) * dx, (i as f64 + 1.5) * dx);
        let flo = f(lo);
        if flo == f(hi) {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) == flo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        cuts.push(0.5 * (lo + hi));
    }
    cuts.push(x);
    cuts.windows(2)
        .map(|c| (c[1] - c[0]) * f(0.5 * (c[0] + c[1])))
        .sum()
}

#[test]
fn phi_integral_examples() {
    let q = q_half();
    let field = stepped_field();

    // Homogeneous field: the integral collapses to x * phi_n(w / xi).
    let hom = SpeedField::homogeneous(0.8).unwrap();
    for n in 0..4u8 {
        let direct = phi_integral_re(n, 0.3, 1.7, &hom, q).unwrap();
        let expected = 1.7 * phi_re(n, 0.3 / 0.8, q).unwrap();
        assert!((direct - expected).abs() <= 1e-15 * expected.abs());
    }

    // Additivity across a split point, up to one rounding of the closing sum.
    let a = phi_integral_re(2, 0.2, 0.15, &field, q).unwrap();
    let b = phi_integral_re(2, 0.2, 0.3, &field, q).unwrap();
    assert!((a + (b - a) - b).abs() <= f64::EPSILON * b.abs());
    // Splitting exactly at the breakpoint makes the prefix sums identical,
    // so additivity there is bitwise.
    let head = phi_integral_re(2, 0.2, 0.2, &field, q).unwrap();
    let tail = (0.3 - 0.2) * phi_re(2, 0.2 / 0.4, q).unwrap();
    assert_eq!(head + tail, b);

    // Two-segment value against the frozen reference and an independent
    // quadrature oracle.
    assert!((b - PHI2_INT_02_03).abs() < 1e-12);
    let quad = phi_integral_quadrature(2, 0.2, 0.3, &field, q);
    assert!((b - quad).abs() < 1e-10, "segment sum {b} vs quadrature {quad}");

    // Complex arguments agree with the real path on the real axis.
    let c = phi_integral(2, Complex64::new(0.2, 0.0), 0.3, &field, q).unwrap();
    assert!((c.re - b).abs() < 1e-14 && c.im.abs() < 1e-14);
}

#[test]
fn edge_examples() {
    let q = q_half();
    let field = stepped_field();

    // Stepped field at tau = 3: 0.2 takes time 0.4, the remaining 2.6 is
    // covered at edge speed 0.2, landing exactly at 0.72.
    assert!((edge_x(3.0, &field, q) - 0.72).abs() <= 1e-9);

    // Homogeneous closed form.
    for &(xi, tau, qv) in &[(1.0, 2.0, 0.5), (0.7, 5.0, 0.3), (2.5, 0.3, 0.8)] {
        let f = SpeedField::homogeneous(xi).unwrap();
        let qq = QParam::new(qv).unwrap();
        let expect = (1.0 - qv) * tau * xi;
        assert!((edge_x(tau, &f, qq) - expect).abs() < 1e-12 * (1.0 + expect));
    }

    assert_eq!(edge_x(0.0, &field, q), 0.0);

    // Round trip through the inverse on a grid straddling the breakpoint.
    for k in 1..40 {
        let x = 0.72 * k as f64 / 40.0;
        let back = edge_x(tau_edge(x, &field, q), &field, q);
        assert!((back - x).abs() < 1e-12, "round trip {x} -> {back}");
    }
}

#[test]
fn omega_circ_examples() {
    let q = q_half();
    let hom = SpeedField::homogeneous(1.0).unwrap();

    let w = omega_circ(4.0, 1.0, &hom, q).unwrap();
    assert!((w - OMEGA_HOM_T4_X1).abs() < 1e-10);
    let resid = (4.0 * w - phi_integral_re(2, w, 1.0, &hom, q).unwrap()).abs();
    assert!(resid <= 1e-10 * (1.0 + 4.0 * w));

    // Independent dense-grid scan: the sign of tau*w - Phi_2 flips exactly
    // once, inside the grid cell containing the reported root.
    let mut flips = Vec::new();
    let n = 20_000;
    let mut prev_sign = true;
    for i in 1..n {
        let wg = i as f64 / n as f64;
        let sign = 4.0 * wg - phi_integral_re(2, wg, 1.0, &hom, q).unwrap() > 0.0;
        if i > 1 && sign != prev_sign {
            flips.push(wg);
        }
        prev_sign = sign;
    }
    assert_eq!(flips.len(), 1);
    assert!((flips[0] - w).abs() <= 1.0 / n as f64);

    // Strictly increasing in tau, strictly decreasing in x.
    let w_more_time = omega_circ(4.5, 1.0, &hom, q).unwrap();
    assert!(w_more_time > w);
    let w_further = omega_circ(4.0, 1.3, &hom, q).unwrap();
    assert!(w_further < w);

    // Approaching the edge the root collapses to zero.
    let near_edge = omega_circ(4.0, 1.999, &hom, q).unwrap();
    assert!(near_edge < 2e-3, "omega near the edge was {near_edge}");

    // At or beyond the edge the root degenerates.
    assert!(matches!(
        omega_circ(4.0, 2.0, &hom, q),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        omega_circ(4.0, 2.4, &hom, q),
        Err(Error::Domain(_))
    ));
}

#[test]
fn stepped_environment_phase_structure() {
    let q = q_half();
    let field = stepped_field();
    let rb = Roadblocks::none();

    // The transition point solves 3 * 0.7 = sigma * phi_2(0.7).
    let sigma = 2.1 / phi_re(2, 0.7, q).unwrap();
    assert!((sigma - SIGMA).abs() < 1e-13);
    assert!((sigma - 0.045).abs() <= 0.005);
    assert!((phi_re(2, 0.7, q).unwrap() - PHI2_07).abs() < 1e-12 * PHI2_07);

    // Left of sigma: Gaussian phase, minimum realized only at the origin.
    for &x in &[0.01, 0.02, 0.03, 0.04] {
        let report = classify(3.0, x, &field, &rb, q).unwrap();
        assert_eq!(report.phase, Phase::Gaussian, "x = {x}");
        assert_eq!(report.m_x, 1);
        assert_eq!(report.w_x, 0.7);
        assert_eq!(report.w_circ_x, 1.0);
        assert!(report.omega_circ > 0.7);
        assert!((report.fluctuation_exponent - 0.5).abs() < 1e-15);
        assert!(report.dispersion > 0.0);
        // Linear height profile: tau * 0.7 - x * phi_1(0.7).
        let expect = 2.1 - x * PHI1_07;
        assert!((report.h - expect).abs() < 1e-12);
    }

    // At sigma itself (within the classification band): transition.
    let at_sigma = classify(3.0, SIGMA, &field, &rb, q).unwrap();
    assert_eq!(at_sigma.phase, Phase::Transition);
    assert!((at_sigma.omega_circ - 0.7).abs() <= 1e-9);

    // Between sigma and the speed drop: Tracy-Widom.
    let tw = classify(3.0, 0.1, &field, &rb, q).unwrap();
    assert_eq!(tw.phase, Phase::TracyWidom);
    assert!((tw.omega_circ - OMEGA_STEP_X01).abs() < 1e-10);
    assert!((tw.h - H_STEP_X01).abs() < 1e-10);
    assert!(tw.dispersion > 0.0);
    assert!((tw.fluctuation_exponent - 1.0 / 3.0).abs() < 1e-15);
    // The environment minimum 0.7 is still realized at the origin even
    // though the phase is Tracy-Widom.
    assert_eq!(tw.m_x, 1);

    // Beyond the speed drop: still Tracy-Widom, two segments contribute,
    // and the minimum comes from a segment so no point carries it.
    let tw2 = classify(3.0, 0.3, &field, &rb, q).unwrap();
    assert_eq!(tw2.phase, Phase::TracyWidom);
    assert!((tw2.omega_circ - OMEGA_STEP_X03).abs() < 1e-10);
    assert!((tw2.h - H_STEP_X03).abs() < 1e-10);
    assert_eq!(tw2.m_x, 0);

    // Frozen Gaussian-phase point.
    let g = classify(3.0, 0.03, &field, &rb, q).unwrap();
    assert!((g.h - H_STEP_X003).abs() < 1e-12);
    assert!((g.dispersion - DG_STEP_X003).abs() < 1e-10);

    // Height is linear on (0, sigma): vanishing second differences.
    let step = sigma / 8.0;
    let heights: Vec<f64> = (1..8)
        .map(|k| height(3.0, k as f64 * step, &field, &rb, q).unwrap())
        .collect();
    for w in heights.windows(3) {
        let second = w[2] - 2.0 * w[1] + w[0];
        assert!(second.abs() < 1e-8, "second difference {second}");
    }

    // Jump at the speed drop: macroscopic loss of height across 0.2.
    let left = height(3.0, 0.2, &field, &rb, q).unwrap();
    let right = height(3.0, 0.2 + 1e-6, &field, &rb, q).unwrap();
    assert!(left > right + 0.01, "left {left} right {right}");
}

#[test]
fn height_examples() {
    let q = q_half();
    let field = stepped_field();
    let rb = Roadblocks::none();

    assert_eq!(height(3.0, 0.0, &field, &rb, q).unwrap(), f64::INFINITY);
    assert_eq!(height(3.0, 0.72, &field, &rb, q).unwrap(), 0.0);
    assert_eq!(height(3.0, 5.0, &field, &rb, q).unwrap(), 0.0);
    assert_eq!(height(0.0, 0.5, &field, &rb, q).unwrap(), 0.0);

    // Monotone in x: strictly decreasing inside the growing region.
    let mut prev = f64::INFINITY;
    for k in 1..=80 {
        let x = 0.75 * k as f64 / 80.0;
        let h = height(3.0, x, &field, &rb, q).unwrap();
        assert!(h <= prev, "height rose at x = {x}");
        if x < 0.72 {
            assert!(h < prev, "height not strictly decreasing at x = {x}");
        }
        prev = h;
    }

    // Monotone nondecreasing in tau.
    for k in 1..=20 {
        let tau = 1.0 + 0.3 * k as f64;
        let lo = height(tau, 0.3, &field, &rb, q).unwrap();
        let hi = height(tau + 0.1, 0.3, &field, &rb, q).unwrap();
        assert!(hi >= lo);
    }

    // Left continuity straight across the breakpoint, where the right limit
    // genuinely differs.
    let at = height(3.0, 0.2, &field, &rb, q).unwrap();
    let just_left = height(3.0, 0.2 - 1e-12, &field, &rb, q).unwrap();
    assert!((at - just_left).abs() < 1e-9);
}

#[test]
fn g_eval_critical_points() {
    let q = q_half();

    // Tracy-Widom phase: double critical point at omega_circ.
    let hom = SpeedField::homogeneous(1.0).unwrap();
    let rb = Roadblocks::none();
    let w = omega_circ(4.0, 1.0, &hom, q).unwrap();
    let h = height(4.0, 1.0, &hom, &rb, q).unwrap();
    assert!((h - H_HOM_T4_X1).abs() < 1e-10);
    let gv = g_eval(Complex64::new(w, 0.0), 4.0, 1.0, h, &hom, q).unwrap();
    assert!(gv.g1.norm() < 1e-8, "g1 at the critical point: {}", gv.g1);
    assert!(gv.g2.norm() < 1e-8, "g2 at the critical point: {}", gv.g2);
    assert!(gv.g3.re > 0.0);

    // The third derivative reproduces the dispersion constant.
    let report = classify(4.0, 1.0, &hom, &rb, q).unwrap();
    assert_eq!(report.phase, Phase::TracyWidom);
    let from_g3 = (gv.g3.re / 2.0).cbrt();
    assert!((report.dispersion - from_g3).abs() < 1e-7 * from_g3);
    assert!((report.dispersion - DTW_HOM_T4_X1).abs() < 1e-9);

    // Gaussian phase: simple critical point at the environment minimum,
    // with negative curvature matching the dispersion constant.
    let field = stepped_field();
    let h_g = height(3.0, 0.03, &field, &rb, q).unwrap();
    let gv_g = g_eval(Complex64::new(0.7, 0.0), 3.0, 0.03, h_g, &field, q).unwrap();
    assert!(gv_g.g1.norm() < 1e-8);
    assert!(gv_g.g2.re < 0.0);
    let report_g = classify(3.0, 0.03, &field, &rb, q).unwrap();
    assert!(((-gv_g.g2.re).sqrt() - report_g.dispersion).abs() < 1e-8);

    // Derivatives agree with centered finite differences at a generic point.
    let probe = Complex64::new(0.11, 0.0);
    let step = 1e-5;
    let gv0 = g_eval(probe, 4.0, 1.0, h, &hom, q).unwrap();
    let gp = g_eval(probe + step, 4.0, 1.0, h, &hom, q).unwrap();
    let gm = g_eval(probe - step, 4.0, 1.0, h, &hom, q).unwrap();
    let fd1 = (gp.g - gm.g) / (2.0 * step);
    assert!((fd1 - gv0.g1).norm() <= 1e-6 * gv0.g1.norm());
    let fd2 = (gp.g1 - gm.g1) / (2.0 * step);
    assert!((fd2 - gv0.g2).norm() <= 1e-6 * gv0.g2.norm());
    let fd3 = (gp.g2 - gm.g2) / (2.0 * step);
    assert!((fd3 - gv0.g3).norm() <= 1e-6 * gv0.g3.norm());

    // Off the real axis the evaluation stays finite and conjugates cleanly.
    let zc = Complex64::new(0.2, 0.15);
    let gc = g_eval(zc, 4.0, 1.0, h, &hom, q).unwrap();
    let gcc = g_eval(zc.conj(), 4.0, 1.0, h, &hom, q).unwrap();
    assert!((gc.g.conj() - gcc.g).norm() < 1e-12);
}

#[test]
fn pde_residual_examples() {
    let q = q_half();
    let hom = SpeedField::homogeneous(1.0).unwrap();
    let rb = Roadblocks::none();

    let r = pde_residual(4.0, 1.0, &hom, &rb, q, 1e-4, 1e-4).unwrap();
    assert!(r.abs() <= 1e-5, "residual {r}");

    // Refining the stencil shrinks the residual.
    let coarse = pde_residual(4.0, 1.0, &hom, &rb, q, 1e-3, 1e-3)
        .unwrap()
        .abs();
    let fine = pde_residual(4.0, 1.0, &hom, &rb, q, 1e-5, 1e-5)
        .unwrap()
        .abs();
    assert!(fine <= coarse.max(1e-9));

    // Stencil violations are rejected.
    let field = stepped_field();
    assert!(matches!(
        pde_residual(3.0, 0.2 + 5e-5, &field, &rb, q, 1e-4, 1e-4),
        Err(Error::Domain(_))
    ));
    let blocked = Roadblocks::new(vec![Roadblock {
        b: 1.0,
        p: 0.5,
        xi_override: None,
    }])
    .unwrap();
    assert!(matches!(
        pde_residual(4.0, 1.0, &hom, &blocked, q, 1e-4, 1e-4),
        Err(Error::Domain(_))
    ));

    // Gaussian phase: the height grows at exactly the minimum speed and
    // drops in x at rate phi_1 of that speed.
    let (dh_dtau, dh_dx) = height_partials(3.0, 0.03, &field, &rb, q, 1e-4, 1e-4).unwrap();
    assert!((dh_dtau - 0.7).abs() < 1e-6);
    let expected_slope = -phi_re(1, 0.7, q).unwrap();
    assert!((dh_dx - expected_slope).abs() < 1e-5);
}

#[test]
fn phase_persistence_in_time() {
    let q = q_half();
    let field = stepped_field();
    let rb = Roadblocks::none();
    let report = classify(3.0, 0.03, &field, &rb, q).unwrap();
    assert_eq!(report.phase, Phase::Gaussian);
    for &tau in &[3.5, 4.0, 6.0, 10.0, 30.0] {
        let later = classify(tau, 0.03, &field, &rb, q).unwrap();
        assert_eq!(later.phase, Phase::Gaussian, "tau = {tau}");
        assert!(later.omega_circ >= report.omega_circ);
    }
}

#[test]
fn traffic_jam_roadblock() {
    let q = q_half();
    let hom = SpeedField::homogeneous(1.0).unwrap();
    let none = Roadblocks::none();
    let sigma = 0.5;
    let omega_at_sigma = omega_circ(4.0, sigma, &hom, q).unwrap();

    // A roadblock the flow can absorb: limit shape untouched everywhere.
    let tame = traffic_jam_modify(
        &hom,
        &none,
        JamScenario::Roadblock {
            sigma,
            alpha: omega_at_sigma + 0.05,
            p: 0.3,
        },
    )
    .unwrap();
    for &x in &[0.2, 0.5, 0.6, 1.0, 1.5] {
        let before = height(4.0, x, &hom, &none, q).unwrap();
        let after = height(4.0, x, &tame.0, &tame.1, q).unwrap();
        assert!(
            (before - after).abs() < 1e-12,
            "x = {x}: {before} vs {after}"
        );
    }

    // A roadblock below the critical value: jam at sigma, Gaussian phase
    // just to the right, heights strictly lower downstream.
    let alpha = 0.2;
    assert!(alpha < omega_at_sigma);
    let jam = traffic_jam_modify(
        &hom,
        &none,
        JamScenario::Roadblock {
            sigma,
            alpha,
            p: 0.3,
        },
    )
    .unwrap();
    let left = height(4.0, sigma, &jam.0, &jam.1, q).unwrap();
    let right = height(4.0, sigma + 1e-6, &jam.0, &jam.1, q).unwrap();
    assert!(left > right + 0.1, "no jam: {left} vs {right}");
    let phase_right = classify(4.0, sigma + 0.01, &jam.0, &jam.1, q).unwrap();
    assert_eq!(phase_right.phase, Phase::Gaussian);
    assert_eq!(phase_right.w_x, alpha);
    assert_eq!(phase_right.m_x, 1);

    // Upstream of the insertion nothing changes.
    for &x in &[0.1, 0.3, 0.5] {
        let before = height(4.0, x, &hom, &none, q).unwrap();
        let after = height(4.0, x, &jam.0, &jam.1, q).unwrap();
        assert_eq!(before, after, "upstream changed at x = {x}");
    }
}

#[test]
fn traffic_jam_slowdown() {
    let q = q_half();
    let hom = SpeedField::homogeneous(1.0).unwrap();
    let none = Roadblocks::none();
    let sigma = 0.5;
    let omega_at_sigma = omega_circ(4.0, sigma, &hom, q).unwrap();

    let kappa = 0.2;
    assert!(kappa < omega_at_sigma);
    let (field, rb) = traffic_jam_modify(
        &hom,
        &none,
        JamScenario::Slowdown {
            sigma,
            sigma1: 0.7,
            kappa,
        },
    )
    .unwrap();

    let left = height(4.0, sigma, &field, &rb, q).unwrap();
    let right = height(4.0, sigma + 1e-6, &field, &rb, q).unwrap();
    assert!(left > right + 0.1, "no jam: {left} vs {right}");

    // Tracy-Widom phase to the right of the jam.
    let inside = classify(4.0, 0.6, &field, &rb, q).unwrap();
    assert_eq!(inside.phase, Phase::TracyWidom);

    // Upstream identical.
    for &x in &[0.1, 0.3, 0.5] {
        let before = height(4.0, x, &hom, &none, q).unwrap();
        let after = height(4.0, x, &field, &rb, q).unwrap();
        assert_eq!(before, after);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_monotone_in_x(
        tau in 0.5f64..6.0,
        q in 0.1f64..0.9,
        xi in 0.3f64..2.0,
        split in 0.1f64..0.9,
    ) {
        let q = QParam::new(q).unwrap();
        let field = SpeedField::homogeneous(xi).unwrap();
        let xe = edge_x(tau, &field, q);
        let x1 = split * xe * 0.9;
        let x2 = (split * 0.5) * xe * 0.9;
        prop_assume!(x2 > 1e-6 && x1 > x2 + 1e-9);
        let w1 = omega_circ(tau, x1, &field, q).unwrap();
        let w2 = omega_circ(tau, x2, &field, q).unwrap();
        prop_assert!(w1 < w2);
    }

    #[test]
    fn height_nonincreasing_in_x(
        tau in 0.5f64..5.0,
        qv in 0.2f64..0.8,
        xi0 in 0.2f64..1.5,
        v1 in 0.3f64..2.0,
        v2 in 0.3f64..2.0,
        bp in 0.05f64..0.5,
    ) {
        let q = QParam::new(qv).unwrap();
        let field = SpeedField::new(xi0, vec![0.0, bp], vec![v1, v2]).unwrap();
        let rb = Roadblocks::none();
        let xe = edge_x(tau, &field, q);
        let mut prev = f64::INFINITY;
        for k in 1..=24 {
            let x = 1.1 * xe * k as f64 / 24.0;
            let h = height(tau, x, &field, &rb, q).unwrap();
            prop_assert!(h <= prev + 1e-12, "height rose at x = {}: {} -> {}", x, prev, h);
            prop_assert!(h >= 0.0);
            prev = h;
        }
    }

    #[test]
    fn dispersion_positive_and_w_ordering(
        tau in 1.0f64..5.0,
        qv in 0.2f64..0.8,
        frac in 0.05f64..0.95,
    ) {
        let q = QParam::new(qv).unwrap();
        let field = SpeedField::new(0.6, vec![0.0, 0.3], vec![1.0, 0.5]).unwrap();
        let rb = Roadblocks::none();
        let xe = edge_x(tau, &field, q);
        let x = frac * xe;
        prop_assume!(x > 1e-4);
        let report = classify(tau, x, &field, &rb, q).unwrap();
        prop_assert!(report.dispersion > 0.0);
        prop_assert!(report.w_x <= report.w_circ_x);
        prop_assert!(report.omega_circ > 0.0 && report.omega_circ < report.w_circ_x);
        prop_assert!(report.density >= 0.0);
        prop_assert!(report.h >= 0.0);
        if report.phase == Phase::Gaussian || report.phase == Phase::Transition {
            prop_assert!(report.m_x >= 1);
        }
    }

    #[test]
    fn phi3_gap_consistent(
        w in 0.01f64..0.35,
        qv in 0.2f64..0.8,
    ) {
        let q = QParam::new(qv).unwrap();
        let field = stepped_field();
        let gap = phi3_minus_phi2_integral(w, 0.3, &field, q);
        let direct = phi_integral_re(3, w, 0.3, &field, q).unwrap()
            - phi_integral_re(2, w, 0.3, &field, q).unwrap();
        prop_assert!((gap - direct).abs() <= 1e-9 * (1.0 + gap.abs()));
        prop_assert!(gap > 0.0);
    }

    #[test]
    fn min_speed_consistent_with_report(
        tau in 1.0f64..4.0,
        frac in 0.1f64..0.9,
    ) {
        let q = q_half();
        let field = stepped_field();
        let rb = Roadblocks::new(vec![Roadblock { b: 0.15, p: 0.4, xi_override: Some(0.55) }]).unwrap();
        let xe = edge_x(tau, &field, q);
        let x = frac * xe;
        prop_assume!(x > 1e-3);
        let report = classify(tau, x, &field, &rb, q).unwrap();
        let (w_x, w_circ) = min_speed(&field, &rb, x);
        prop_assert_eq!(report.w_x, w_x);
        prop_assert_eq!(report.w_circ_x, w_circ);
    }
}
