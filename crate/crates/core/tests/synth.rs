mod common;

use common::{custom, trajectory_with};
use num_complex::Complex64 as C64;
use pseudomode::conditions::slope_fit;
use pseudomode::eikonal::PhaseTrajectory;
use pseudomode::pipeline::{grid_spec, RunConfig};
use pseudomode::symbols::{mizohata, ModelProblem};
use pseudomode::synth::*;
use pseudomode::transport::{solve_transport, AmplitudeSet, CutoffParams, TransportOptions};
use serde_json::json;
use std::f64::consts::PI;
use std::sync::OnceLock;

struct Bundle {
    traj: PhaseTrajectory,
    amp: AmplitudeSet,
    grid: FieldGrid,
    u: FieldGrid,
    report: NormReport,
}

fn build(m: &ModelProblem, lam: f64, cfg: &RunConfig) -> Bundle {
    let traj = trajectory_with(m, cfg, lam);
    let c = &cfg.cutoff;
    let cut = CutoffParams::new(&traj, c.r_t, c.r_x, c.r_y);
    let amp = solve_transport(&traj, m, &TransportOptions { levels: cfg.levels, m_a: cfg.m_a, kappa: None }, cut).unwrap();
    let grid = build_grid(&traj, &amp, &grid_spec(cfg)).unwrap();
    let (report, u) = norm_report(m, &traj, &amp, &grid, cfg.n_sob, cfg.nu, cfg.aperture, cfg.levels).unwrap();
    Bundle { traj, amp, grid, u, report }
}

fn mizohata_at(lam: f64) -> &'static Bundle {
    static B: [OnceLock<Bundle>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let i = match lam as u32 {
        64 => 0,
        128 => 1,
        256 => 2,
        _ => unreachable!(),
    };
    B[i].get_or_init(|| build(&mizohata(), lam, &RunConfig::default()))
}

fn point(lam: f64, t: f64, x: f64, y: f64) -> FieldGrid {
    FieldGrid { t: vec![t], x: vec![vec![x]], y: vec![vec![y]], values: vec![C64::default()], lambda: lam }
}

fn centre(tr: &PhaseTrajectory, t: f64) -> (Vec<C64>, f64, f64) {
    let (v, _) = tr.state_at(t).unwrap();
    let l = &tr.layout;
    let (x, y) = (v[l.x0()].re, v[l.y0()].re);
    (v, x, y)
}

#[test]
fn unit_modulus_at_anchor() {
    let b = mizohata_at(128.0);
    let t0 = b.traj.t0_anchor;
    let (v, x0, y0) = centre(&b.traj, t0);
    let u = synthesize(&b.traj, &b.amp, &point(128.0, t0, x0, y0)).unwrap();
    assert!((u.values[0].norm() - 1.0).abs() < 1e-14);
    let phase = C64::new(0.0, 128.0 * v[0].re).exp();
    assert!((u.values[0] - phase).norm() < 1e-12);
}

#[test]
fn spine_decay_is_gaussian() {
    let lam = 256.0;
    let b = mizohata_at(lam);
    for &t in &[-0.2, -0.1, -0.05, 0.03, 0.08, 0.15] {
        let (_, x0, y0) = centre(&b.traj, t);
        let u = synthesize(&b.traj, &b.amp, &point(lam, t, x0, y0)).unwrap().values[0].norm();
        let (a, _) = b.amp.sum_at(t).unwrap();
        let expect = (-lam * t * t / 2.0).exp() * a.c[0].norm();
        assert!((u - expect).abs() <= 1e-7 * expect.max(1e-300), "t = {t}: {u:e} vs {expect:e}");
    }
}

#[test]
fn peak_at_anchor() {
    let b = mizohata_at(128.0);
    let (imax, _) = b.u.values.iter().enumerate().max_by(|p, q| p.1.norm().total_cmp(&q.1.norm())).unwrap();
    let m = b.grid.slice_len();
    let (it, j) = (imax / m, imax % m);
    let (mut x, mut y) = ([0.0], [0.0]);
    b.grid.coords(j, &mut x, &mut y);
    let h = b.grid.spacing();
    let (_, x0, y0) = centre(&b.traj, b.traj.t0_anchor);
    assert!((b.grid.t[it] - b.traj.t0_anchor).abs() <= h[0]);
    assert!((x[0] - x0).abs() <= h[1]);
    assert!((y[0] - y0).abs() <= h[2]);
}

#[test]
fn slice_through_anchor_carries_peak() {
    let b = mizohata_at(128.0);
    let (_, x0, y0) = centre(&b.traj, b.traj.t0_anchor);
    let s = tx_slice(&b.u, &[x0], &[y0]);
    assert_eq!(s.abs.len(), b.grid.t.len() * b.grid.x[0].len());
    let h = b.grid.spacing();
    assert!((s.y[0] - y0).abs() <= h[2] / 2.0 + 1e-12);
    let top = s.abs.iter().cloned().fold(0.0, f64::max);
    assert_eq!(top, b.u.sup());
}

#[test]
fn grid_invariants() {
    for lam in [64.0, 256.0] {
        let b = mizohata_at(lam);
        let h = b.grid.spacing();
        let xi0 = b.traj.samples.y.iter().map(|v| v[b.traj.layout.xi0()].re.abs()).fold(0.0, f64::max);
        assert!(h[1] * lam * xi0 <= PI / 3.0 * (1.0 + 1e-12));
        // nothing near the box walls
        let peak = b.u.sup();
        let shape = b.grid.shape();
        let m = b.grid.slice_len();
        for (i, z) in b.u.values.iter().enumerate() {
            let j = i % m;
            let (ix, iy) = (j / shape[2], j % shape[2]);
            let edge = |k: usize, n: usize| k < n / 10 || k >= n - n / 10;
            if edge(ix, shape[1]) || edge(iy, shape[2]) {
                assert!(z.norm() <= 1e-10 * peak);
            }
        }
    }
}

#[test]
fn grid_errors() {
    let b = mizohata_at(64.0);
    assert!(matches!(
        build_grid(&b.traj, &b.amp, &GridSpec { n_gx: Some(8), ..GridSpec::default() }),
        Err(SynthError::GridTooCoarse(_))
    ));
    assert!(matches!(build_grid(&b.traj, &b.amp, &GridSpec { budget: 1000, ..GridSpec::default() }), Err(SynthError::MemoryBudget { .. })));
    assert!(matches!(
        build_grid(&b.traj, &b.amp, &GridSpec { n_t: Some(8), ..GridSpec::default() }),
        Err(SynthError::GridTooCoarse(_))
    ));
}

fn time_only() -> ModelProblem {
    custom(json!({"name": "time", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0],
        "f_poly": [[0.0, -1.0, 1, [0], [0]]],
        "diff_op": [{"re": 1.0, "dt": 1}, {"im": -1.0, "t": 1}]}))
}

#[test]
fn exact_phase_has_no_expansion_residual() {
    let m = time_only();
    let cfg = RunConfig { levels: 0, ..RunConfig::default() };
    let b = build(&m, 128.0, &cfg);
    assert!(b.report.residual_expansion < 1e-12, "{}", b.report.residual_expansion);
}

#[test]
fn missing_operator_realization() {
    let m = custom(json!({"name": "bare", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0], "f_poly": [[0.0, -1.0, 1, [0], [2]]]}));
    let g = point(64.0, 0.0, 0.0, 0.0);
    assert!(matches!(apply_direct(&m, &g), Err(SynthError::MissingDiffOp)));
}

fn axis(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| a + (b - a) * j as f64 / n as f64).collect()
}

fn fill(g: &mut FieldGrid, f: impl Fn(f64, f64, f64) -> C64) {
    let m = g.slice_len();
    let (mut x, mut y) = ([0.0], [0.0]);
    for it in 0..g.t.len() {
        for j in 0..m {
            g.coords(j, &mut x, &mut y);
            g.values[it * m + j] = f(g.t[it], x[0], y[0]);
        }
    }
}

fn grid(nt: usize, nx: usize, ny: usize) -> FieldGrid {
    boxed(nt, nx, ny, 1.0, PI)
}

fn boxed(nt: usize, nx: usize, ny: usize, half_t: f64, half_xy: f64) -> FieldGrid {
    let (t, x, y) = (axis(-half_t, half_t, nt), axis(-half_xy, half_xy, nx), axis(-half_xy, half_xy, ny));
    let n = t.len() * x.len() * y.len();
    FieldGrid { t, x: vec![x], y: vec![y], values: vec![C64::default(); n], lambda: 1.0 }
}

#[test]
fn plane_wave_reproduces_symbol() {
    // mizohata realization D_t − i t D_y² on e^{i(ξx + ηy)}g(t)
    let m = mizohata();
    let (xi, eta) = (3.0, 5.0);
    let g = |t: f64| if t.abs() < 0.8 { (-1.0 / (1.0 - t * t / 0.64)).exp() } else { 0.0 };
    let dg = |t: f64| if t.abs() < 0.8 { g(t) * (-2.0 * t / 0.64) / (1.0 - t * t / 0.64).powi(2) } else { 0.0 };
    let mut f = grid(800, 16, 16);
    fill(&mut f, |t, x, y| C64::new(0.0, xi * x + eta * y).exp() * g(t));
    let out = apply_direct(&m, &f).unwrap();
    let mut expect = f.clone();
    fill(&mut expect, |t, x, y| C64::new(0.0, xi * x + eta * y).exp() * C64::new(0.0, -1.0) * (dg(t) + t * eta * eta * g(t)));
    let m_ = f.slice_len();
    let scale = expect.sup();
    for (i, (a, b)) in out.values.iter().zip(&expect.values).enumerate() {
        if f.t[i / m_].abs() < 0.6 {
            assert!((a - b).norm() < 1e-6 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn constant_field_time_derivative_vanishes() {
    let m = custom(json!({"name": "dt", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0],
        "f_poly": [[0.0, -1.0, 1, [0], [2]]], "diff_op": [{"re": 1.0, "dt": 1}]}));
    let mut f = grid(40, 8, 8);
    fill(&mut f, |_, _, _| C64::new(2.0, -1.0));
    let out = apply_direct(&m, &f).unwrap();
    assert!(out.values.iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn parseval() {
    let b = mizohata_at(64.0);
    let (a, l2) = (sobolev_norm(&b.u, 0.0), b.u.l2());
    assert!((a - l2).abs() < 1e-10 * l2);
}

#[test]
fn single_mode_sobolev_weight() {
    let zeta = [12.0, 8.0, -6.0];
    let mut f = boxed(64, 64, 64, 2.0 * PI, 2.0 * PI);
    // Gaussian window keeps the spectrum concentrated near ζ and periodic to round-off
    fill(&mut f, |t, x, y| {
        let w = (-(t * t + x * x + y * y) / 2.0).exp();
        C64::new(0.0, zeta[0] * t + zeta[1] * x + zeta[2] * y).exp() * w
    });
    let z2: f64 = zeta.iter().map(|v| v * v).sum();
    let l2 = f.l2();
    for s in [-1.0, -0.5, 1.0] {
        let expect = (1.0 + z2).powf(s / 2.0) * l2;
        let got = sobolev_norm(&f, s);
        assert!((got / expect - 1.0).abs() < 0.02, "s = {s}: {got} vs {expect}");
    }
}

#[test]
fn cone_multiplier_limits() {
    // wide window: spectrum far from both the cone edge and the Nyquist limit
    let mut f = boxed(128, 128, 128, 4.0 * PI, 4.0 * PI);
    let window = |t: f64, x: f64, y: f64| (-(t * t + x * x + y * y) / 8.0).exp();
    fill(&mut f, |t, x, y| C64::new(0.0, 8.0 * x).exp() * window(t, x, y));
    let inside = cone_cutoff_apply(&f, &[0.0, 1.0, 0.0], PI / 6.0);
    assert!(inside.l2() < 1e-8 * f.l2(), "{}", inside.l2() / f.l2());

    fill(&mut f, |t, x, y| C64::new(0.0, 8.0 * y).exp() * window(t, x, y));
    let outside = cone_cutoff_apply(&f, &[0.0, 1.0, 0.0], PI / 6.0);
    assert!(outside.sub(&f).l2() < 1e-6 * f.l2());
}

#[test]
fn smoothstep_profile() {
    assert_eq!(smoothstep(0.0), 0.0);
    assert_eq!(smoothstep(1.0), 1.0);
    assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
    for i in 1..=100 {
        let s = i as f64 / 100.0;
        assert!(smoothstep(s) >= smoothstep(s - 0.01));
        if (0.05..0.95).contains(&s) {
            assert!(smoothstep(s) > smoothstep(s - 0.01));
        }
    }
}

#[test]
fn pseudomode_outside_cone_is_negligible() {
    let r: Vec<f64> = [64.0, 128.0, 256.0].iter().map(|&l| mizohata_at(l).report.norms.au_zero / mizohata_at(l).report.norms.u_minus_n).collect();
    assert!(r[2] <= 1e-4, "{r:?}");
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
}

#[test]
fn direct_residual_small_and_decreasing() {
    let r: Vec<f64> = [64.0, 128.0, 256.0].iter().map(|&l| mizohata_at(l).report.residual_direct).collect();
    assert!(r[2] <= 0.1, "{r:?}");
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
}

#[test]
fn expansion_residual_sup_small_and_decreasing() {
    let r: Vec<f64> = [64.0, 128.0, 256.0]
        .iter()
        .map(|&l| {
            let b = mizohata_at(l);
            apply_via_expansion(&b.traj, &b.amp, &mizohata(), &b.grid).unwrap().sup() / b.u.sup()
        })
        .collect();
    assert!(r[2] <= 1e-2, "{r:?}");
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
}

#[test]
fn expansion_agrees_with_direct() {
    for lam in [128.0, 256.0] {
        let g = mizohata_at(lam).report.residual_gap;
        assert!(g < 0.05, "λ = {lam}: gap {g}");
    }
}

#[test]
fn expansion_residual_drops_with_levels() {
    let m = mizohata();
    let b = mizohata_at(256.0);
    let res = |levels: usize| {
        let amp = solve_transport(&b.traj, &m, &TransportOptions { levels, m_a: 4, kappa: None }, b.amp.cutoff.clone()).unwrap();
        apply_via_expansion(&b.traj, &amp, &m, &b.grid).unwrap().l2()
    };
    let (r0, r2) = (res(0), res(2));
    assert!(r2 < r0, "L=0 {r0:e}, L=2 {r2:e}");
}

#[test]
fn ratio_recomputable_exactly() {
    for lam in [64.0, 128.0, 256.0] {
        let r = &mizohata_at(lam).report;
        assert_eq!(r.ratio, r.recompute_ratio());
    }
}

#[test]
fn norm_scaling_bracket() {
    // ‖u‖_{(−N)} slope within [−N − n/2 − 0.15, −N + 0.15] for N = 0 and N = 1
    let lams = [64.0f64, 128.0, 256.0];
    let ln: Vec<f64> = lams.iter().map(|l| l.ln()).collect();
    let n = 3.0;
    for big_n in [0.0, 1.0] {
        let v: Vec<f64> = lams.iter().map(|&l| sobolev_norm(&mizohata_at(l).u, -big_n).ln()).collect();
        let (s, _) = slope_fit(&ln, &v);
        assert!(s >= -big_n - n / 2.0 - 0.15 && s <= -big_n + 0.15, "N = {big_n}: slope {s}");
    }
}

#[test]
fn ratio_decreases_in_lambda() {
    let r: Vec<f64> = [64.0, 128.0, 256.0].iter().map(|&l| mizohata_at(l).report.ratio).collect();
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
}

#[test]
fn grid_refinement_is_stable() {
    let cfg = RunConfig::default();
    let coarse = &mizohata_at(128.0).report;
    let fine_cfg = RunConfig { grid: pseudomode::pipeline::GridConfig { h_over_sigma: 0.06, n_t_max: 385, ..cfg.grid.clone() }, ..cfg };
    let fine = build(&mizohata(), 128.0, &fine_cfg).report;
    assert!((fine.ratio / coarse.ratio - 1.0).abs() < 0.01, "{} vs {}", fine.ratio, coarse.ratio);
}

use proptest::prelude::*;

fn random_field(vals: &[(f64, f64)]) -> FieldGrid {
    let mut f = grid(4, 4, 4);
    for (z, &(a, b)) in f.values.iter_mut().zip(vals) {
        *z = C64::new(a, b);
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_for_random_fields(vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64)) {
        let f = random_field(&vals);
        let l2 = f.l2();
        prop_assert!((sobolev_norm(&f, 0.0) - l2).abs() <= 1e-12 * l2.max(1e-300));
    }

    #[test]
    fn sobolev_norm_monotone_in_order(vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64), s in -2.0f64..2.0, ds in 0.0f64..1.0) {
        let f = random_field(&vals);
        prop_assert!(sobolev_norm(&f, s) <= sobolev_norm(&f, s + ds) * (1.0 + 1e-12));
    }

    #[test]
    fn cone_multiplier_never_amplifies(vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64), a in 0.1f64..1.4) {
        let f = random_field(&vals);
        let g = cone_cutoff_apply(&f, &[0.3, 1.0, -0.2], a);
        prop_assert!(g.l2() <= f.l2() * (1.0 + 1e-12));
    }
}
