//! Acceptance criteria A1–A7, one PASS/FAIL line each.
//!
//! Exit status is nonzero when a criterion fails, except for failures listed
//! in `KNOWN_UNATTAINABLE` (documented in the README); those still print FAIL.

use num_complex::Complex64 as C64;
use pseudomode::conditions::{intlem_check, IntlemTable};
use pseudomode::eikonal::{eikonal_residual, eval_phase, initial_state, integrate_phase, min_eig, tube_probes, PhaseTrajectory};
use pseudomode::pipeline::{initial_w2, phase_options, run_audit, run_pipeline, run_point, Exec, RunConfig, RunOutput, Verdict};
use pseudomode::symbols::{mizohata, model_from_json, ModelProblem};
use pseudomode::synth::NormReport;
use pseudomode_cli::commands::{cmd_audit, cmd_run, load, Overrides};
use pseudomode_cli::selftest::run_selftest;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Sub-checks that cannot pass for the specified model; see README.
const KNOWN_UNATTAINABLE: &[&str] = &["A5.K"];

struct Part {
    tag: &'static str,
    pass: bool,
    detail: String,
}

fn part(tag: &'static str, pass: bool, detail: impl Into<String>) -> Part {
    Part { tag, pass, detail: detail.into() }
}

struct Outcome {
    id: &'static str,
    parts: Vec<Part>,
    info: Vec<String>,
}

impl Outcome {
    fn pass(&self) -> bool {
        self.parts.iter().all(|p| p.pass)
    }

    fn only_known_failures(&self) -> bool {
        self.parts.iter().filter(|p| !p.pass).all(|p| KNOWN_UNATTAINABLE.contains(&p.tag))
    }
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pseudomode-acceptance-{}", std::process::id())).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn trajectory(m: &ModelProblem, cfg: &RunConfig, lam: f64) -> PhaseTrajectory {
    let a = run_audit(m, cfg.seed).unwrap();
    let w2 = initial_w2(m, a.sign_change.as_ref().unwrap()).unwrap();
    let st = initial_state(m, &w2, cfg.k_trunc, cfg.im_w02_init);
    integrate_phase(m, &st, &phase_options(cfg, lam)).unwrap()
}

fn custom(f: serde_json::Value) -> ModelProblem {
    model_from_json(&json!({"name": "custom", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0], "f_poly": f})).unwrap()
}

fn reports(out: &RunOutput) -> Vec<&NormReport> {
    out.points.iter().filter_map(|(_, r)| r.as_ref().ok().map(|p| &p.report)).collect()
}

fn a1(out: &RunOutput) -> Outcome {
    let s = &out.summary;
    let (slope, r2) = (s.slope.unwrap_or(f64::NAN), s.r2.unwrap_or(f64::NAN));
    Outcome {
        id: "A1",
        parts: vec![
            part("A1.verdict", s.verdict == Verdict::Violation, format!("verdict {:?}", s.verdict)),
            part("A1.slope", slope <= -0.25, format!("ratio slope {slope:.4}")),
            part("A1.r2", r2 >= 0.9, format!("R^2 {r2:.4}")),
        ],
        info: vec![],
    }
}

fn a2(out: &RunOutput) -> Outcome {
    let rs = reports(out);
    let n = pseudomode::synth::dim(&out.model) as f64;
    let s = &out.summary;
    let su = s.slope_u0.unwrap_or(f64::NAN);
    let sp = s.slope_pu.unwrap_or(f64::NAN);
    // lower and upper constants fixed at the first λ, factor 3 slack afterwards
    let (l0, u0) = (rs[0].lambda, rs[0].norms.u_minus_n);
    let (c_lo, c_hi) = (u0 * l0.powf(n / 2.0), u0);
    let bracket = rs.iter().all(|r| {
        let u = r.norms.u_minus_n;
        u >= c_lo * r.lambda.powf(-n / 2.0) / 3.0 && u <= 3.0 * c_hi
    });
    Outcome {
        id: "A2",
        parts: vec![
            part("A2.slope_u", su >= -n / 2.0 - 0.15 && su <= 0.15, format!("||u|| slope {su:.4} in [{:.2}, 0.15]", -n / 2.0 - 0.15)),
            part("A2.bracket", bracket, "constants fitted at the first lambda hold within factor 3"),
            part("A2.slope_pu", sp <= -0.8, format!("||P*u|| slope {sp:.4}")),
        ],
        info: vec![],
    }
}

fn a3(dir: &Path) -> Outcome {
    let audit = |model: &str| {
        let ov = Overrides { model: Some(model.into()), out: Some(dir.join(model)), ..Overrides::default() };
        let mut l = load(None, &ov).unwrap();
        l.cfg.verbosity = 0;
        let code = cmd_audit(&l).unwrap();
        let m = l.cfg.resolve_model(None).unwrap();
        (code, run_audit(&m, l.cfg.seed).unwrap())
    };
    let (cpt_code, cpt) = audit("cpt");
    let (miz_code, miz) = audit("mizohata");
    let bound = cpt.audit.bound;
    let every = !cpt.audit.cond_kcond.per_epsilon.is_empty() && cpt.audit.cond_kcond.per_epsilon.iter().all(|(_, r)| *r > bound);
    let quarter = miz.audit.cond_kcond.per_epsilon.iter().find(|(e, _)| (*e - 0.25).abs() < 1e-12).map(|(_, r)| *r);
    Outcome {
        id: "A3",
        parts: vec![
            part("A3.cpt_exit", cpt_code == 2 && !cpt.licensed, format!("cpt audit exit {cpt_code}")),
            part("A3.cpt_every_eps", every, format!("cpt kcond ratios above bound {bound:.3} at all {} epsilons", cpt.audit.cond_kcond.per_epsilon.len())),
            part(
                "A3.mizohata",
                miz_code == 0 && quarter.is_some_and(|r| r <= miz.audit.bound),
                format!("mizohata exit {miz_code}, ratio at eps 0.25 {:?}", quarter),
            ),
        ],
        info: vec![],
    }
}

fn a4() -> Outcome {
    let models: Vec<(ModelProblem, Box<dyn Fn(f64) -> C64>)> = vec![
        (mizohata(), Box::new(|t: f64| C64::new(0.0, t * t / 2.0))),
        (custom(json!([[0.0, -1.0, 1, [0], [0]]])), Box::new(|t: f64| C64::new(0.0, t * t / 2.0))),
        (custom(json!([[0.0, -1.0, 1, [0], [2]], [0.0, -1.0, 3, [0], [2]]])), Box::new(|t: f64| C64::new(0.0, t * t / 2.0 + t.powi(4) / 4.0))),
        (
            custom(json!([[0.0, -0.5, 1, [0], [0]], [0.0, -0.5, 1, [0], [1]], [0.2, 0.0, 2, [0], [0]]])),
            Box::new(|t: f64| C64::new(-0.2 * t.powi(3) / 3.0, t * t / 2.0)),
        ),
    ];
    let cfg = RunConfig::default();
    let (mut dw, mut dx, mut min_ok, mut pd) = (0.0f64, 0.0f64, true, true);
    for (m, w0) in &models {
        for lam in [64.0, 256.0] {
            let tr = trajectory(m, &cfg, lam);
            let l = &tr.layout;
            for (t, v) in tr.pass1.t.iter().zip(&tr.pass1.y) {
                dw = dw.max((v[0] - w0(*t)).norm());
                dx = dx.max((v[l.x0()].re - m.base.x0[0]).abs()).max((v[l.xi0()].re - m.base.xi0[0]).abs());
            }
            let min = tr.samples.y.iter().map(|v| v[0].im).fold(f64::INFINITY, f64::min);
            min_ok &= min == 0.0;
            for i in 0..tr.samples.t.len() {
                let s = tr.state(i);
                pd &= min_eig(&s.w20().map(|z| z.im)) > 0.0 && min_eig(&s.w02().map(|z| z.im)) > 0.0;
            }
        }
    }
    Outcome {
        id: "A4",
        parts: vec![
            part("A4.w0", dw < 1e-8, format!("max |w0 + int f dt| {dw:.2e}")),
            part("A4.centre", dx < 1e-12, format!("max centre drift {dx:.2e}")),
            part("A4.anchor", min_ok, "min Im w0 exactly 0"),
            part("A4.hessians", pd, "Im w20, Im w02 positive definite"),
        ],
        info: vec![format!("{} decoupled models at lambda 64 and 256", models.len())],
    }
}

fn sup_residual(m: &ModelProblem, k: usize, lam: f64) -> f64 {
    let cfg = RunConfig { k_trunc: k, ..RunConfig::default() };
    let tr = trajectory(m, &cfg, lam);
    let pr = tube_probes(&tr, 200, cfg.seed, cfg.cutoff.r_t, 0.5);
    eikonal_residual(&tr, m, &pr).unwrap().sup_residual
}

fn a5(out: &RunOutput) -> Outcome {
    let m = mizohata();
    let (k4, k6) = (sup_residual(&m, 4, 256.0), sup_residual(&m, 6, 256.0));
    let cubic = custom(json!([[0.0, -1.0, 1, [0], [2]], [0.1, 0.0, 0, [0], [3]]]));
    let (c4, c6) = (sup_residual(&cubic, 4, 256.0), sup_residual(&cubic, 6, 256.0));

    let a = run_audit(&m, 7).unwrap();
    let w2 = initial_w2(&m, a.sign_change.as_ref().unwrap()).unwrap();
    let expansion = |levels: usize| {
        let cfg = RunConfig { levels, ..RunConfig::default() };
        run_point(&m, &w2, 256.0, &cfg).unwrap().report.residual_expansion
    };
    let (l0, l2) = (expansion(0), expansion(2));

    let gaps: Vec<(f64, f64)> =
        reports(out).iter().filter(|r| r.lambda == 128.0 || r.lambda == 256.0).map(|r| (r.lambda, r.residual_gap)).collect();
    Outcome {
        id: "A5",
        parts: vec![
            part("A5.K", k6 < k4, format!("mizohata sup eikonal residual K=4 {k4:.10e}, K=6 {k6:.10e}")),
            part("A5.L", l2 < l0, format!("expansion residual L=0 {l0:.4e}, L=2 {l2:.4e}")),
            part("A5.gap", gaps.len() == 2 && gaps.iter().all(|g| g.1 < 0.05), format!("direct vs expansion gap {gaps:?}")),
        ],
        info: vec![
            "mizohata's phase stays quadratic, so K adds only zero coefficients and cannot change the residual".into(),
            format!("supplementary f = -it eta^2 + 0.1 eta^3: K=4 {c4:.6e}, K=6 {c6:.6e} ({})", if c6 < c4 { "decreases" } else { "does not decrease" }),
        ],
    }
}

fn a6() -> Outcome {
    let m = mizohata();
    let cfg = RunConfig::default();
    let lams = [64.0, 256.0, 1024.0];
    let trs: Vec<PhaseTrajectory> = lams.iter().map(|&l| trajectory(&m, &cfg, l)).collect();
    let widths: Vec<f64> = trs.iter().map(|t| t.usable.1 - t.usable.0).collect();
    let gate = trs.iter().all(|t| t.usable.0 < t.t0_anchor && t.t0_anchor < t.usable.1) && widths.windows(2).all(|w| w[1] < w[0]);

    let grid = |a: f64, b: f64, n: usize| -> Vec<f64> { (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect() };
    let tab = IntlemTable::default();
    let ts = grid(-0.1, 0.0, 101);
    let quad = intlem_check(&ts, &ts.iter().map(|t| t * t / 2.0).collect::<Vec<_>>(), -0.1, 1.0, 1.0, &tab);
    let zero = intlem_check(&ts, &vec![0.0; ts.len()], -0.1, 1.0, 1.0, &tab);
    let ts4 = grid(-0.5, 0.0, 2001);
    let quart = intlem_check(&ts4, &ts4.iter().map(|t| t.powi(4)).collect::<Vec<_>>(), -0.5, 1.0 / 3.0, 0.5, &tab);
    let intlem = [quad, zero, quart].iter().all(|r| r.as_ref().is_ok_and(|r| r.pass));

    let tr = &trs[1];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (lo, hi) = (tr.samples.t[2], tr.samples.t[tr.samples.t.len() - 3]);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for _ in 0..100 {
        let (t, x, y) = (rng.gen_range(lo..hi), rng.gen_range(-0.2..0.2), rng.gen_range(-0.5..0.5));
        let pe = eval_phase(tr, t, &[x], &[y]).unwrap();
        let om = |x: f64, y: f64| eval_phase(tr, t, &[x], &[y]).unwrap().omega;
        let dx = (om(x + h, y) - om(x - h, y)) / (2.0 * h);
        let dy = (om(x, y + h) - om(x, y - h)) / (2.0 * h);
        let s = pe.dx[0].norm().max(pe.dy[0].norm()).max(1.0);
        worst = worst.max((dx - pe.dx[0]).norm() / s).max((dy - pe.dy[0]).norm() / s);
    }
    Outcome {
        id: "A6",
        parts: vec![
            part("A6.gate", gate, format!("usable widths {widths:.4?} at lambda {lams:?}")),
            part("A6.intlem", intlem, "quadratic, zero and quartic cases"),
            part("A6.gradient", worst < 1e-7, format!("worst relative gradient error {worst:.2e} over 100 probes")),
        ],
        info: vec![],
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn a7(dir: &Path) -> Outcome {
    let checks = run_selftest(7);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let run = |name: &str, exec: Exec| {
        let ov = Overrides { out: Some(dir.join(name)), ..Overrides::default() };
        let mut l = load(None, &ov).unwrap();
        l.cfg.verbosity = 0;
        cmd_run(&l, exec).unwrap();
        files(&dir.join(name))
    };
    let (first, second) = (run("first", Exec::Parallel), run("second", Exec::Sequential));
    let same = !first.is_empty() && first == second;
    Outcome {
        id: "A7",
        parts: vec![
            part("A7.selftest", failed.is_empty(), format!("{} checks, failing {failed:?}", checks.len())),
            part("A7.determinism", same, format!("{} artifacts compared byte for byte (parallel vs sequential run)", first.len())),
        ],
        info: vec![],
    }
}

fn main() -> ExitCode {
    let dir = scratch_dir("runs");
    let sweep = run_pipeline(&RunConfig::default(), None, Exec::Parallel).expect("default mizohata sweep");
    let outcomes = [a1(&sweep), a2(&sweep), a3(&dir), a4(), a5(&sweep), a6(), a7(&dir)];
    let mut blocking = 0;
    for o in &outcomes {
        let failing: Vec<&Part> = o.parts.iter().filter(|p| !p.pass).collect();
        if o.pass() {
            println!("{} PASS", o.id);
        } else if o.only_known_failures() {
            let tags: Vec<&str> = failing.iter().map(|p| p.tag).collect();
            println!("{} FAIL (known unattainable: {})", o.id, tags.join(", "));
        } else {
            blocking += 1;
            println!("{} FAIL", o.id);
        }
        for p in &o.parts {
            println!("    {} {}: {}", if p.pass { "ok  " } else { "FAIL" }, p.tag, p.detail);
        }
        for i in &o.info {
            println!("    note: {i}");
        }
    }
    let _ = std::fs::remove_dir_all(dir.parent().unwrap());
    if blocking == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
