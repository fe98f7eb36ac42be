use siegel_forge::chains::{generate_crooked_curve, JordanPolyline};
use siegel_forge::conformal::riemann_map_upper;
use siegel_forge::runge::*;
use siegel_forge::{eval_e, PeriodicEntireMap, C64};
use std::f64::consts::TAU;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

// Ψ(ζ) = ζ e^{λζ} has u = log(1 + λζ), so w = log(1 + λζ)/ζ with
// coefficients (-1)^k λ^{k+1}/(k+1).
fn synthetic_w(lambda: f64, zeta: C64) -> C64 {
    (1.0 + lambda * zeta).ln() / zeta
}

#[test]
fn synthetic_series_is_recovered() {
    let lambda: f64 = 1.5;
    let ring = |n: usize, r: f64| -> Vec<C64> { (0..n).map(|k| C64::from_polar(r, TAU * k as f64 / n as f64)).collect() };
    let zt = ring(256, 0.3);
    let zv = ring(513, 0.3);
    let wt: Vec<C64> = zt.iter().map(|z| synthetic_w(lambda, *z)).collect();
    let wv: Vec<C64> = zv.iter().map(|z| synthetic_w(lambda, *z)).collect();
    let mut last = f64::INFINITY;
    for d in [4, 8, 16, 32] {
        let fit = fit_samples(&zt, &wt, (&zv, &wv), d).unwrap();
        assert!(fit.validation_error < last, "degree {d}");
        last = fit.validation_error;
    }
    assert!(last < 1e-9);
    let fit = fit_samples(&zt, &wt, (&zv, &wv), 32).unwrap();
    for k in 0..8 {
        let want = (-1f64).powi(k as i32) * lambda.powi(k as i32 + 1) / (k as f64 + 1.0);
        assert!((fit.coeffs[k] - want).norm() < 1e-8, "coefficient {k}");
    }
}

#[test]
fn normal_form_derivative_matches_exp_zeta_w() {
    let lambda: f64 = 1.5;
    let w: Vec<C64> = (0..40).map(|k| c((-1f64).powi(k) * lambda.powi(k + 1) / (k as f64 + 1.0), 0.0)).collect();
    let psi = PeriodicEntireMap::new(w, c(0.0, 0.0), c(0.0, -0.25), 1.0 / (1.2 * lambda)).unwrap();
    for z in [c(0.1, 0.3), c(0.6, 0.5), c(-1.7, 1.2)] {
        let zeta = eval_e(z);
        let want = 1.0 + lambda * zeta;
        let d = psi.eval_derivative(z).unwrap();
        assert!((d - want).norm() < 1e-9, "{z}: {d} vs {want}");
        let h = 1e-4;
        let fd = (psi.eval_map(z + h).unwrap() - psi.eval_map(z - h).unwrap()) / (2.0 * h);
        assert!((fd - d).norm() < 1e-7);
        assert!((psi.eval_map(z + 1.0).unwrap() - psi.eval_map(z).unwrap() - 1.0).norm() < 1e-12);
    }
}

#[test]
fn straight_target_gives_vanishing_w() {
    let j = JordanPolyline::horizontal(1, 0.4, 40);
    let phi = riemann_map_upper(&j).unwrap();
    let s = extract_w(&phi, 0.5, 256).unwrap();
    assert!(s.w.iter().all(|w| w.norm() < 1e-8));
    assert!((s.v0 - c(TAU * 0.4, 0.0)).norm() < 1e-8);
    let (psi, rep) = build_psi(&[], s.v0, 0.5, default_radius(1.0)).unwrap();
    assert!(rep.max_residual <= 1e-10);
    let b = InverseBranch { psi: &psi, eps: 0.5 };
    // ψ + iε = φ⁻¹ is translation by -0.4i
    let z = c(0.2, 0.7);
    assert!((b.eval(z).unwrap() - (z + c(0.0, 0.9))).norm() < 1e-9);
    assert!(inverse_defect(b, &s).unwrap().max < 1e-8);
}

#[test]
fn crooked_target_degree_ladder_converges() {
    let j = generate_crooked_curve(5).unwrap();
    let phi = riemann_map_upper(&j).unwrap();
    let h = phi.accuracy.certified_height;
    let eps = 4.0 * h;
    assert!(extract_w(&phi, 0.5 * h, 64).is_err());
    let train = extract_w(&phi, h, 1024).unwrap();
    let val = extract_w(&phi, h, 2049).unwrap();
    let mut last = f64::INFINITY;
    for d in [4, 8, 12, 16] {
        let fit = fit_polynomial(&train, &val, d).unwrap();
        assert!(fit.validation_error < 0.5 * last, "degree {d}: {:.2e}", fit.validation_error);
        last = fit.validation_error;
        // w(0) from the Cauchy integral agrees with the constant term
        assert!((fit.coeffs[0] - train.w0).norm() < 1e-6 * train.w0.norm());
    }
    let fit = fit_polynomial(&train, &val, 16).unwrap();
    let (psi, rep) = build_psi(&fit.coeffs, train.v0, eps, default_radius(1.0)).unwrap();
    assert!(rep.max_residual <= 1e-10);
    let b = InverseBranch { psi: &psi, eps };
    let defect = inverse_defect(b, &val).unwrap();
    assert_eq!(defect.skipped, 0);
    assert!(defect.max < 1e-8);
    // ψ(z) - z → v0/(2πi) - iε = -c - iε
    assert!((psi.asymptotic_constant() + phi.asymptotic_constant + c(0.0, eps)).norm() < 1e-12);
    let z = c(0.3, 3.0);
    assert!((b.eval(z).unwrap() - z + psi.asymptotic_constant()).norm() < 1e-6);
}

#[test]
fn wildly_wrong_w_fails_the_probe() {
    match build_psi(&[c(200.0, 0.0)], c(0.0, 0.0), 0.25, default_radius(1.0)) {
        Ok((_, rep)) => assert!(rep.max_residual > 1e-10, "{rep:?}"),
        Err(e) => assert!(matches!(e, RungeError::InverseBranchProbeFailed { .. } | RungeError::Cyl(_)), "{e}"),
    }
}
