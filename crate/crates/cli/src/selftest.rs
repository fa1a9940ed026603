//! Property checks over every primary module. Each check measures an error and
//! compares it against a tolerance multiplied by `PSEUDOMODE_TOL_SCALE`.

use crate::artifacts::{phase_csv, report_csv};
use num_complex::Complex64 as C64;
use pseudomode::conditions::{
    audit_conditions, detect_sign_change, intlem_check, AuditOptions, IntlemTable, LinePoint, Region,
};
use nalgebra::DMatrix;
use pseudomode::eikonal::{
    eval_phase, initial_state, integrate_phase, min_eig, PhaseState, PhaseTrajectory, Rhs, Scales, W2Branch, W2Choice,
};
use pseudomode::ode::dopri5;
use pseudomode::pipeline::{
    initial_w2, phase_options, run_audit, run_pipeline, Exec, RunConfig,
};
use pseudomode::symbols::{
    blowup_pullback, cpt, cpt_gen, extended_subprincipal, mizohata, reduced_subprincipal, JetCenter, ModelProblem,
    Orders, Point, PolyTerm, SymbolFunction, TTag,
};
use pseudomode::synth::{build_grid, sobolev_norm, synthesize};
use pseudomode::transport::{bump, solve_transport, CutoffParams, TransportOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

pub fn tol_scale() -> f64 {
    std::env::var("PSEUDOMODE_TOL_SCALE").ok().and_then(|v| v.parse().ok()).filter(|v: &f64| *v >= 0.0).unwrap_or(1.0)
}

struct Ctx {
    scale: f64,
    seed: u64,
}

impl Ctx {
    /// err ≤ tol·scale
    fn within(&self, err: f64, tol: f64) -> Result<(), String> {
        if err <= tol * self.scale {
            Ok(())
        } else {
            Err(format!("error {err:.3e} exceeds tolerance {:.3e}", tol * self.scale))
        }
    }
}

type Check = fn(&Ctx) -> Result<(), String>;

const CHECKS: &[(&str, Check)] = &[
    ("symbols.partial_zero_order_is_eval", partial_zero_is_eval),
    ("symbols.finite_difference_matches_exact", fd_matches_exact),
    ("symbols.mixed_partials_commute", mixed_partials_commute),
    ("symbols.blowup_homogeneity", blowup_homogeneity),
    ("symbols.extended_equals_reduced_for_quadratic", extended_reduced_quadratic),
    ("conditions.conjugation_swaps_direction", direction_swap),
    ("conditions.audit_exit_contract", audit_contract),
    ("conditions.audit_scale_invariant", audit_scale_invariant),
    ("conditions.intlem_closed_forms", intlem_cases),
    ("conditions.gate_nonincreasing_in_lambda", gate_monotone),
    ("eikonal.decoupled_closed_form", decoupled_closed_form),
    ("eikonal.anchored_positivity", anchored_positivity),
    ("eikonal.gradient_matches_finite_differences", gradient_fd),
    ("eikonal.tensor_symmetry", tensor_symmetry),
    ("eikonal.rk4_agrees_with_adaptive", rk4_vs_adaptive),
    ("transport.anchor_normalization", anchor_normalization),
    ("transport.cutoff_profile", cutoff_profile),
    ("synth.parseval", parseval),
    ("synth.ratio_recomputable", ratio_recomputable),
    ("cli.deterministic_artifacts", determinism),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    let ctx = Ctx { scale: tol_scale(), seed };
    CHECKS
        .iter()
        .map(|(name, f)| {
            let r = std::panic::catch_unwind(|| f(&ctx)).unwrap_or_else(|_| Err("panicked".into()));
            CheckResult { name, pass: r.is_ok(), detail: r.err().unwrap_or_default() }
        })
        .collect()
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn random_poly(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> SymbolFunction {
    let n = rng.gen_range(1..5);
    let terms = (0..n)
        .map(|_| {
            let mut v = |m: usize| (0..m).map(|_| rng.gen_range(0..3u32)).collect::<Vec<_>>();
            let (x, y, xi, eta) = (v(nx), v(ny), v(nx), v(ny));
            PolyTerm {
                coeff: C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                t: TTag::Pow(rng.gen_range(0..3)),
                x,
                y,
                xi,
                eta,
            }
        })
        .collect();
    SymbolFunction::poly(nx, ny, terms)
}

fn random_point(rng: &mut ChaCha8Rng, nx: usize, ny: usize, r: f64) -> Point {
    let t = rng.gen_range(-r..r);
    let mut v = |m: usize| (0..m).map(|_| rng.gen_range(-r..r)).collect::<Vec<f64>>();
    let (x, y, xi, eta) = (v(nx), v(ny), v(nx), v(ny));
    Point::new(t, &x, &y, &xi, &eta)
}

fn as_closure(s: &SymbolFunction) -> SymbolFunction {
    let inner = s.clone();
    SymbolFunction::closure(s.nx, s.ny, 4, Arc::new(move |p: &Point| inner.eval(p).unwrap()))
}

fn partial_zero_is_eval(c: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = random_poly(&mut rng, 1, 2);
        let p = random_point(&mut rng, 1, 2, 3.0);
        let a = s.partial(&Orders::zero(1, 2), &p).map_err(e)?;
        let b = s.eval(&p).map_err(e)?;
        worst = worst.max((a - b).norm() / b.norm().max(1e-300));
    }
    c.within(worst, 1e-14)
}

fn single_orders(nx: usize, ny: usize, slot: usize, n: u32) -> Orders {
    let mut o = Orders::zero(nx, ny);
    match slot {
        0 => o.t = n,
        1 => o.x[0] = n,
        2 => o.xi[0] = n,
        3 => o.y[0] = n,
        _ => o.eta[0] = n,
    }
    o
}

fn fd_matches_exact(c: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed + 1);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let s = random_poly(&mut rng, 1, 1);
        let fd = as_closure(&s);
        let p = random_point(&mut rng, 1, 1, 10.0 / 3f64.sqrt());
        for slot in 0..5 {
            for n in 1..=2 {
                let o = single_orders(1, 1, slot, n);
                let a = s.partial(&o, &p).map_err(e)?;
                let b = fd.partial(&o, &p).map_err(e)?;
                // scale by the size of the symbol near p so cancellation does not dominate
                let scale = a.norm().max(s.eval(&p).map_err(e)?.norm()).max(1.0);
                worst = worst.max((a - b).norm() / scale);
            }
        }
    }
    c.within(worst, 1e-6)
}

fn mixed_partials_commute(c: &Ctx) -> Result<(), String> {
    // finite differences applied in both nesting orders of ∂_x∂_η
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed + 2);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let s = random_poly(&mut rng, 1, 1);
        let p = random_point(&mut rng, 1, 1, 2.0);
        let h = 1e-5;
        let d = |o1: &Orders, dir: usize| -> Result<C64, String> {
            let mut q1 = p.clone();
            let mut q2 = p.clone();
            if dir == 0 {
                q1.x[0] += h;
                q2.x[0] -= h;
            } else {
                q1.eta[0] += h;
                q2.eta[0] -= h;
            }
            Ok((s.partial(o1, &q1).map_err(e)? - s.partial(o1, &q2).map_err(e)?) / (2.0 * h))
        };
        let ab = d(&single_orders(1, 1, 4, 1), 0)?;
        let ba = d(&single_orders(1, 1, 1, 1), 1)?;
        let mut o = Orders::zero(1, 1);
        o.x[0] = 1;
        o.eta[0] = 1;
        let exact = s.partial(&o, &p).map_err(e)?;
        let scale = exact.norm().max(1.0);
        worst = worst.max((ab - ba).norm() / scale).max((ab - exact).norm() / scale);
    }
    c.within(worst, 1e-6)
}

fn builtins() -> Vec<ModelProblem> {
    vec![mizohata(), cpt(), cpt_gen(1).unwrap()]
}

fn blowup_homogeneity(c: &Ctx) -> Result<(), String> {
    let mut worst = 0.0f64;
    for m in builtins() {
        let k = m.k.inv();
        let base = m.base_point();
        let mut vals = Vec::new();
        let mut ray = Vec::new();
        for lam in [10.0, 100.0, 1000.0] {
            let mut p = base.clone();
            p.t = 0.3;
            p.xi = p.xi.iter().map(|v| v * lam).collect();
            let mut q = p.clone();
            p.eta = vec![0.7; m.ny].iter().map(|v| v * lam).collect();
            vals.push(blowup_pullback(&m.f, m.k, &p).map_err(e)? / lam);
            q.eta = m.eta0.iter().map(|v| v * lam.powf(1.0 - k)).collect();
            ray.push(m.f.eval(&q).map_err(e)? / lam);
        }
        for v in [&vals, &ray] {
            let s = v[0].norm().max(1e-300);
            worst = worst.max((v[1] - v[0]).norm() / s).max((v[2] - v[0]).norm() / s);
        }
    }
    c.within(worst, 1e-10)
}

fn extended_reduced_quadratic(c: &Ctx) -> Result<(), String> {
    let m = mizohata();
    let mut worst = 0.0f64;
    for t in [-0.5, 0.0, 0.7] {
        let w = JetCenter { t, tau: 0.2, x: vec![0.0], y: vec![0.0], xi: vec![1.0] };
        let ps = reduced_subprincipal(&m.f, None, m.k, &w).map_err(e)?;
        for lam in [1e2, 1e3, 1e4] {
            let q = extended_subprincipal(&m.f, None, m.k, &w, &[1.3], lam).map_err(e)?;
            worst = worst.max((q - ps.eval(&[1.3])).norm());
        }
    }
    c.within(worst, 1e-12)
}

fn direction_swap(c: &Ctx) -> Result<(), String> {
    for m in builtins() {
        let mut flip = m.clone();
        flip.f = m.f.conjugate();
        let at = LinePoint::base(&m);
        let a = detect_sign_change(&m, &at, m.interval, 512).map_err(e)?;
        let b = detect_sign_change(&flip, &at, m.interval, 512).map_err(e)?;
        if b.direction != a.direction.swap() {
            return Err(format!("{}: {:?} vs {:?}", m.label, a.direction, b.direction));
        }
        c.within((a.t_cross - b.t_cross).abs(), 1e-9)?;
    }
    Ok(())
}

fn audit_contract(c: &Ctx) -> Result<(), String> {
    let expect = [("mizohata", 0), ("cpt", 2), ("cpt_gen(1)", 2)];
    for (m, (label, code)) in builtins().iter().zip(expect) {
        let a = run_audit(m, c.seed).map_err(e)?;
        if a.exit_code() != code {
            return Err(format!("{label}: exit {} (expected {code})", a.exit_code()));
        }
    }
    Ok(())
}

fn audit_scale_invariant(c: &Ctx) -> Result<(), String> {
    for m in builtins() {
        let opt = AuditOptions { seed: c.seed, ..AuditOptions::default() };
        let a = audit_conditions(&m, &Region::around(&m), &opt).map_err(e)?;
        for s in [0.5, 3.0] {
            let mut ms = m.clone();
            ms.f = m.f.scaled(s);
            let b = audit_conditions(&ms, &Region::around(&ms), &opt).map_err(e)?;
            if a.all_hold() != b.all_hold() || a.cond_kcond.holds != b.cond_kcond.holds {
                return Err(format!("{} verdict changed under scaling by {s}", m.label));
            }
        }
    }
    Ok(())
}

fn intlem_cases(c: &Ctx) -> Result<(), String> {
    let tab = IntlemTable::default();
    let grid = |a: f64, b: f64, n: usize| (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect::<Vec<_>>();
    let kappa = 0.1;
    let ts = grid(-kappa, 0.0, 201);
    let fs: Vec<f64> = ts.iter().map(|t| t * t / 2.0).collect();
    let r = intlem_check(&ts, &fs, -kappa, 1.0, 1.0, &tab).map_err(e)?;
    if !r.pass {
        return Err("t^2/2 case failed".into());
    }
    c.within((r.lhs - kappa * kappa / 2.0).abs(), 1e-12)?;
    let fs0 = vec![0.0; ts.len()];
    if !intlem_check(&ts, &fs0, -kappa, 1.0, 1.0, &tab).map_err(e)?.pass {
        return Err("zero case failed".into());
    }
    let ts = grid(-0.5, 0.0, 401);
    let fs: Vec<f64> = ts.iter().map(|t| t.powi(4)).collect();
    let r = intlem_check(&ts, &fs, -0.5, 1.0 / 3.0, 0.5, &tab).map_err(e)?;
    if !r.pass {
        return Err("t^4 case failed".into());
    }
    Ok(())
}

fn trajectory(m: &ModelProblem, lambda: f64, seed: u64) -> Result<PhaseTrajectory, String> {
    let cfg = RunConfig::default();
    let a = run_audit(m, seed).map_err(e)?;
    let sign = a.sign_change.ok_or("no sign change")?;
    let w2 = initial_w2(m, &sign).map_err(e)?;
    let st = initial_state(m, &w2, cfg.k_trunc, cfg.im_w02_init);
    integrate_phase(m, &st, &phase_options(&cfg, lambda)).map_err(e)
}

fn gate_monotone(c: &Ctx) -> Result<(), String> {
    let m = mizohata();
    let widths: Vec<f64> = [64.0, 256.0, 1024.0]
        .iter()
        .map(|&l| trajectory(&m, l, c.seed).map(|t| t.gate.usable.1 - t.gate.usable.0))
        .collect::<Result<_, _>>()?;
    if widths.iter().any(|w| *w <= 0.0) || widths.windows(2).any(|w| w[1] > w[0]) {
        return Err(format!("gate widths {widths:?}"));
    }
    Ok(())
}

fn decoupled_closed_form(c: &Ctx) -> Result<(), String> {
    let m = mizohata();
    let tr = trajectory(&m, 256.0, c.seed)?;
    let l = &tr.layout;
    let (mut dw, mut dxx) = (0.0f64, 0.0f64);
    for (t, v) in tr.pass1.t.iter().zip(&tr.pass1.y) {
        // η frozen at η₀ = 1: w₀ = i t²/2 after anchoring at t = 0
        dw = dw.max((v[0] - C64::new(0.0, t * t / 2.0)).norm());
        dxx = dxx.max((v[l.x0()].re - 0.0).abs()).max((v[l.xi0()].re - 1.0).abs());
    }
    c.within(dw, 1e-8)?;
    c.within(dxx, 1e-12)
}

fn anchored_positivity(c: &Ctx) -> Result<(), String> {
    for lam in [64.0, 256.0] {
        let tr = trajectory(&mizohata(), lam, c.seed)?;
        let min_im = tr.samples.y.iter().map(|v| v[0].im).fold(f64::INFINITY, f64::min);
        c.within((-min_im).max(0.0), 1e-10)?;
        let (lo, hi) = tr.usable;
        let a = tr.im_w0(lo).ok_or("usable end outside trajectory")?;
        let b = tr.im_w0(hi).ok_or("usable end outside trajectory")?;
        if !(a > 0.0 && b > 0.0) {
            return Err(format!("Im w0 at usable ends: {a:e}, {b:e}"));
        }
        for i in 0..tr.samples.t.len() {
            let s = tr.state(i);
            let e20 = min_eig(&s.w20().map(|z| z.im));
            let e02 = min_eig(&s.w02().map(|z| z.im));
            if !(e20 > 0.0 && e02 > 0.0) {
                return Err(format!("Hessian loses positivity at t = {}", tr.samples.t[i]));
            }
        }
    }
    Ok(())
}

fn gradient_fd(c: &Ctx) -> Result<(), String> {
    let tr = trajectory(&mizohata(), 256.0, c.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed + 3);
    let (lo, hi) = (tr.samples.t[2], tr.samples.t[tr.samples.t.len() - 3]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = rng.gen_range(lo..hi);
        let x = [rng.gen_range(-0.2..0.2)];
        let y = [rng.gen_range(-0.5..0.5)];
        let pe = eval_phase(&tr, t, &x, &y).map_err(e)?;
        let h = 1e-5;
        let dx = (eval_phase(&tr, t, &[x[0] + h], &y).map_err(e)?.omega - eval_phase(&tr, t, &[x[0] - h], &y).map_err(e)?.omega)
            / (2.0 * h);
        let dy = (eval_phase(&tr, t, &x, &[y[0] + h]).map_err(e)?.omega - eval_phase(&tr, t, &x, &[y[0] - h]).map_err(e)?.omega)
            / (2.0 * h);
        let scale = pe.dx[0].norm().max(pe.dy[0].norm()).max(1.0);
        worst = worst.max((dx - pe.dx[0]).norm() / scale).max((dy - pe.dy[0]).norm() / scale);
    }
    c.within(worst, 1e-7)
}

fn encode(xs: &[usize], ys: &[usize], nx: usize, ny: usize) -> usize {
    let mut g = 0;
    for &v in xs.iter().rev() {
        g = g * nx + v;
    }
    for &v in ys.iter().rev() {
        g = g * ny + v;
    }
    g
}

fn tensor_symmetry(c: &Ctx) -> Result<(), String> {
    let m = cpt_gen(1).map_err(e)?;
    let cfg = RunConfig::default();
    let w2 = W2Choice { re: DMatrix::zeros(1, 1), im: DMatrix::identity(1, 1), branch: W2Branch::Fallback };
    let st = initial_state(&m, &w2, cfg.k_trunc, 1.0);
    let rhs = Rhs { model: &m, layout: &st.layout, scales: Scales::new(64.0, cfg.rho, m.k), pass1: false };
    let dv = rhs.eval(0.0, &st.v).map_err(e)?;
    let next = PhaseState { layout: st.layout.clone(), v: st.v.iter().zip(&dv).map(|(a, b)| a + b * 1e-3).collect() };
    let (nx, ny) = (m.nx, m.ny);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed + 4);
    let mut worst = 0.0f64;
    for (i, j) in [(0usize, 2usize), (1, 2), (0, 3), (2, 2), (1, 3), (0, 4)] {
        let w = next.w_tensor(i, j);
        for _ in 0..20 {
            let flat = rng.gen_range(0..w.len());
            let mut r = flat;
            let mut ys = Vec::new();
            for _ in 0..j {
                ys.push(r % ny);
                r /= ny;
            }
            let mut xs = Vec::new();
            for _ in 0..i {
                xs.push(r % nx);
                r /= nx;
            }
            if encode(&xs, &ys, nx, ny) != flat {
                return Err("tensor index decoding is inconsistent".into());
            }
            ys.shuffle(&mut rng);
            xs.shuffle(&mut rng);
            worst = worst.max((w[flat] - w[encode(&xs, &ys, nx, ny)]).norm());
        }
    }
    c.within(worst, 0.0)
}

fn rk4_vs_adaptive(c: &Ctx) -> Result<(), String> {
    let m = mizohata();
    let tr = trajectory(&m, 256.0, c.seed)?;
    let rhs = Rhs { model: &m, layout: &tr.layout, scales: tr.scales, pass1: false };
    let i0 = tr.samples.t.iter().position(|&t| t == m.base.t_start).ok_or("start not sampled")?;
    let y0 = tr.samples.y[i0].clone();
    let mut worst = 0.0f64;
    for te in [tr.usable.0, tr.usable.1] {
        let ya = dopri5(|t, v| rhs.eval(t, v), m.base.t_start, y0.clone(), te, 1e-10, 1e-12).map_err(e)?;
        let (yr, _) = tr.state_at(te).map_err(e)?;
        worst = worst.max((ya[0] - yr[0]).norm() / ya[0].norm().max(1e-300));
    }
    c.within(worst, 1e-6)
}

fn anchor_normalization(c: &Ctx) -> Result<(), String> {
    let m = mizohata();
    let tr = trajectory(&m, 128.0, c.seed)?;
    let cut = CutoffParams::new(&tr, 12.0, 1.0, 6.0);
    let amp = solve_transport(&tr, &m, &TransportOptions { levels: 2, m_a: 4, kappa: None }, cut).map_err(e)?;
    let (p0, _) = amp.level_at(0, amp.t0_anchor).ok_or("anchor outside")?;
    let mut err = (p0.c[0] - C64::new(1.0, 0.0)).norm();
    for l in 1..amp.levels.len() {
        let (p, _) = amp.level_at(l, amp.t0_anchor).ok_or("anchor outside")?;
        err = err.max(p.c[0].norm());
    }
    c.within(err, 0.0)?;
    if amp.max_coeff() > 1e3 {
        return Err(format!("amplitude coefficient {:.3e} above 1e3", amp.max_coeff()));
    }
    Ok(())
}

fn cutoff_profile(c: &Ctx) -> Result<(), String> {
    let mut prev = 1.0;
    for i in 0..=400 {
        let r = i as f64 * 0.01;
        let v = bump(r);
        if !(0.0..=1.0).contains(&v) || v > prev {
            return Err(format!("bump not monotone in [0,1] at r = {r}"));
        }
        prev = v;
    }
    c.within((bump(0.5) - 1.0).abs() + bump(3.0), 0.0)?;
    let v = bump(1.5);
    if !(v > 0.0 && v < 1.0) {
        return Err("bump(1.5) outside (0,1)".into());
    }
    Ok(())
}

fn small_field(seed: u64) -> Result<(ModelProblem, pseudomode::synth::FieldGrid), String> {
    let m = mizohata();
    let tr = trajectory(&m, 64.0, seed)?;
    let cut = CutoffParams::new(&tr, 12.0, 1.0, 6.0);
    let amp = solve_transport(&tr, &m, &TransportOptions::default(), cut).map_err(e)?;
    let g = build_grid(&tr, &amp, &Default::default()).map_err(e)?;
    Ok((m, synthesize(&tr, &amp, &g).map_err(e)?))
}

fn parseval(c: &Ctx) -> Result<(), String> {
    let (_, u) = small_field(c.seed)?;
    let a = sobolev_norm(&u, 0.0);
    let b = u.l2();
    c.within((a - b).abs() / b, 1e-10)
}

fn ratio_recomputable(c: &Ctx) -> Result<(), String> {
    let cfg = RunConfig { lambdas: vec![64.0], ..RunConfig::default() };
    let out = run_pipeline(&cfg, None, Exec::Sequential).map_err(e)?;
    let p = out.points[0].1.as_ref().map_err(e)?;
    c.within((p.report.ratio - p.report.recompute_ratio()).abs(), 0.0)
}

fn determinism(c: &Ctx) -> Result<(), String> {
    let cfg = RunConfig { lambdas: vec![64.0, 96.0], seed: c.seed, ..RunConfig::default() };
    let bytes = |exec| -> Result<Vec<u8>, String> {
        let out = run_pipeline(&cfg, None, exec).map_err(e)?;
        let ok: Vec<_> = out.points.into_iter().filter_map(|(l, r)| r.ok().map(|p| (l, p))).collect();
        let mut b = report_csv(&ok).map_err(e)?;
        for (_, p) in &ok {
            b.extend(phase_csv(&p.phase, "zeta0").map_err(e)?);
        }
        Ok(b)
    };
    let a = bytes(Exec::Parallel)?;
    let b = bytes(Exec::Sequential)?;
    if a != b {
        return Err("artifacts differ between repeated runs".into());
    }
    Ok(())
}
