mod common;

use common::{custom, trajectory};
use num_complex::Complex64 as C64;
use pseudomode::ode;
use pseudomode::pipeline::RunConfig;
use pseudomode::poly::basis;
use pseudomode::symbols::{mizohata, ModelProblem};
use pseudomode::synth::{build_grid, synthesize, GridSpec};
use pseudomode::transport::*;
use serde_json::json;

fn time_only(f0: Option<serde_json::Value>) -> ModelProblem {
    let mut v = json!({"name": "time", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0], "f_poly": [[0.0, -1.0, 1, [0], [0]]]});
    if let Some(f0) = f0 {
        v["F0_poly"] = f0;
    }
    custom(v)
}

fn default_cut(tr: &pseudomode::eikonal::PhaseTrajectory) -> CutoffParams {
    let c = RunConfig::default().cutoff;
    CutoffParams::new(tr, c.r_t, c.r_x, c.r_y)
}

#[test]
fn mizohata_constant_coefficient_starts_flat() {
    let m = mizohata();
    let tr = trajectory(&m, 256.0);
    let tm = TransportModel::new(&m);
    let small = basis(2, 4);
    let work = basis(2, 4 + tm.m_max.max(2));
    let ctx = OpCtx::new(&tm, &tr, 0.0, &work).unwrap();
    let mut phi = vec![C64::default(); small.len()];
    phi[0] = C64::new(1.0, 0.0);
    let d = transport_rhs(&ctx, &phi, None, &small);
    assert!(d[0].norm() < 1e-12, "{}", d[0]);
}

#[test]
fn spatially_constant_zeroth_order_term() {
    // F0 = g(t) = 0.5 + 0.2i + 0.3t: φ' = −i g φ
    let m = time_only(Some(json!([[0.5, 0.2, 0, [0], [0]], [0.3, 0.0, 1, [0], [0]]])));
    let tr = trajectory(&m, 256.0);
    let amp = solve_transport(&tr, &m, &TransportOptions { levels: 0, m_a: 4, kappa: None }, default_cut(&tr)).unwrap();
    let t0 = amp.t0_anchor;
    let s = &amp.levels[0];
    for (t, v) in s.t.iter().zip(&s.y) {
        let int = C64::new(0.5, 0.2) * (t - t0) + 0.15 * (t * t - t0 * t0);
        let exact = (C64::new(0.0, -1.0) * int).exp();
        assert!((v[0] - exact).norm() < 1e-8, "t = {t}: {} vs {exact}", v[0]);
        assert!(v[1..].iter().all(|z| z.norm() < 1e-12));
    }
}

#[test]
fn trivial_model_amplitude_is_one() {
    let m = time_only(None);
    let tr = trajectory(&m, 256.0);
    let amp = solve_transport(&tr, &m, &TransportOptions { levels: 0, m_a: 4, kappa: None }, default_cut(&tr)).unwrap();
    for v in &amp.levels[0].y {
        assert_eq!(v[0], C64::new(1.0, 0.0));
        assert!(v[1..].iter().all(|z| *z == C64::default()));
    }
    for d in &amp.levels[0].dy {
        assert!(d.iter().all(|z| *z == C64::default()));
    }
}

#[test]
fn anchor_normalization() {
    let m = mizohata();
    for lam in [64.0, 256.0] {
        let tr = trajectory(&m, lam);
        let amp = solve_transport(&tr, &m, &TransportOptions { levels: 2, m_a: 4, kappa: None }, default_cut(&tr)).unwrap();
        let (p0, _) = amp.level_at(0, amp.t0_anchor).unwrap();
        assert_eq!(p0.c[0], C64::new(1.0, 0.0));
        for l in 1..=2 {
            let (p, _) = amp.level_at(l, amp.t0_anchor).unwrap();
            assert!(p.c.iter().all(|z| *z == C64::default()));
        }
        assert_eq!(amp.kappa_exp, 0.1);
    }
}

#[test]
fn mizohata_level_zero_against_fine_integrator() {
    let m = mizohata();
    let lam = 256.0;
    let tr = trajectory(&m, lam);
    let amp = solve_transport(&tr, &m, &TransportOptions { levels: 1, m_a: 2, kappa: None }, default_cut(&tr)).unwrap();
    let sup0 = amp.levels[0].y.iter().flat_map(|v| v.iter().map(|z| z.norm())).fold(0.0, f64::max);
    assert!(sup0 <= 2.0, "sup |φ₀| = {sup0}");

    let tm = TransportModel::new(&m);
    let small = basis(2, 2);
    let work = basis(2, 2 + tm.m_max.max(2));
    let rhs = |t: f64, phi: &[C64]| -> Result<Vec<C64>, TransportError> {
        Ok(transport_rhs(&OpCtx::new(&tm, &tr, t, &work)?, phi, None, &small))
    };
    let mut init = vec![C64::default(); small.len()];
    init[0] = C64::new(1.0, 0.0);
    let ts = &tr.samples.t;
    let i0 = ts.iter().position(|&t| t == tr.t0_anchor).unwrap();
    for end in [0, ts.len() - 1] {
        let steps = 10 * i0.abs_diff(end);
        let (s, _) = ode::rk4(rhs, |_, _| true, tr.t0_anchor, init.clone(), ts[end], steps).unwrap();
        let fine = s.y.last().unwrap();
        let coarse = &amp.levels[0].y[end];
        let err = fine.iter().zip(coarse).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "end {end}: {err:e}");
    }
}

#[test]
fn coefficients_bounded_uniformly_in_lambda() {
    let m = mizohata();
    for lam in [64.0, 128.0, 256.0, 512.0, 1024.0] {
        let tr = trajectory(&m, lam);
        let amp = solve_transport(&tr, &m, &TransportOptions::default(), default_cut(&tr)).unwrap();
        assert!(amp.max_coeff() <= 1e3, "λ = {lam}: {}", amp.max_coeff());
    }
}

#[test]
fn budget_and_polynomial_requirements() {
    let m = mizohata();
    let tr = trajectory(&m, 64.0);
    let mut thin = m.clone();
    thin.f.d_max = 3;
    assert!(matches!(
        solve_transport(&tr, &thin, &TransportOptions::default(), default_cut(&tr)),
        Err(TransportError::BudgetExceeded { need: 6, budget: 3 })
    ));
}

#[test]
fn cutoff_examples() {
    let m = mizohata();
    let tr = trajectory(&m, 256.0);
    let cut = CutoffParams::unit(&tr);
    let amp = solve_transport(&tr, &m, &TransportOptions { levels: 0, m_a: 2, kappa: None }, cut.clone()).unwrap();
    let t0 = tr.t0_anchor;
    let (v, _) = tr.state_at(t0).unwrap();
    let l = &tr.layout;
    let (x0, y0) = (v[l.x0()].re, v[l.y0()].re);
    assert_eq!(apply_cutoffs(&amp, &tr, t0, &[x0], &[y0]), 1.0);
    let dx = 3.0 * 256f64.powf(-cut.x_exp);
    assert_eq!(apply_cutoffs(&amp, &tr, t0, &[x0 + dx], &[y0]), 0.0);
    assert!((cut.x_exp - 0.4).abs() < 1e-15);
    let scale = 256f64.powf(0.9);
    let mut prev = 1.0;
    for i in 0..=60 {
        let arg = 1.0 + i as f64 / 60.0;
        let c = cut.chi(arg / scale);
        assert!(c <= prev);
        prev = c;
    }
    let mid = cut.chi(1.5 / scale);
    assert!(mid > 0.0 && mid < 1.0);
    assert!((mid - (1.0f64 - 1.0 / 0.75).exp()).abs() < 1e-12);
    assert_eq!(apply_cutoffs(&amp, &tr, 10.0, &[x0], &[y0]), 0.0);
}

#[test]
fn bump_profile() {
    assert_eq!(bump(0.0), 1.0);
    assert_eq!(bump(1.0), 1.0);
    assert_eq!(bump(2.0), 0.0);
    assert_eq!(bump(-0.5), 1.0);
    for i in 1..100 {
        let r = 1.0 + i as f64 / 100.0;
        assert!(bump(r) < bump(r - 0.01) || bump(r) == 0.0);
    }
}

/// ‖u_χ − u_1‖ / ‖u_1‖ where u_1 drops the χ-cutoff.
fn cutoff_error(lam: f64) -> f64 {
    let m = mizohata();
    let tr = trajectory(&m, lam);
    let cut = default_cut(&tr);
    let amp = solve_transport(&tr, &m, &TransportOptions::default(), cut.clone()).unwrap();
    let grid = build_grid(&tr, &amp, &GridSpec { h_over_sigma: 0.09, ..GridSpec::default() }).unwrap();
    let with = synthesize(&tr, &amp, &grid).unwrap();
    let mut open = amp.clone();
    open.cutoff = CutoffParams { r_t: 1e12, ..cut };
    let without = synthesize(&tr, &open, &grid).unwrap();
    with.sub(&without).l2() / without.l2()
}

#[test]
fn cutoff_error_shrinks_with_lambda() {
    let e: Vec<f64> = [64.0, 128.0, 256.0].iter().map(|&l| cutoff_error(l)).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    assert!(e.iter().all(|v| *v < 1e-9));
}

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bump_is_even_monotone_and_bounded(r in 0.0f64..3.0, dr in 0.0f64..0.5) {
        prop_assert_eq!(bump(r), bump(-r));
        prop_assert!((0.0..=1.0).contains(&bump(r)));
        prop_assert!(bump(r + dr) <= bump(r));
    }

    #[test]
    fn cutoff_psi_separates(dx in -1.0f64..1.0, dy in -1.0f64..1.0, lam in 64.0f64..1024.0) {
        let c = CutoffParams { lambda: lam, rho: 0.1, x_exp: 0.4, r_t: 12.0, r_x: 1.0, r_y: 6.0 };
        let p = c.psi(&[dx], &[dy]);
        prop_assert!((p - c.psi(&[dx], &[0.0]) * c.psi(&[0.0], &[dy])).abs() < 1e-15);
        let (hx, hy) = c.support();
        if dx.abs() >= hx || dy.abs() >= hy {
            prop_assert_eq!(p, 0.0);
        }
        if dx.abs() <= hx / 2.0 && dy.abs() <= hy / 2.0 {
            prop_assert_eq!(p, 1.0);
        }
    }
}
