//! Run configuration, the per-λ pipeline (phase → amplitudes → field → norms)
//! and the λ-sweep with its verdict.

use crate::conditions::{
    audit_conditions, detect_sign_change, Direction, slope_fit, AuditOptions, ConditionAudit, ConditionError, LinePoint, Region,
    SignChangeReport,
};
use crate::eikonal::{choose_initial_w2, initial_state, integrate_phase, min_eig, EikonalError, PhaseOptions, PhaseTrajectory, W2Choice};
use crate::symbols::{builtin_model, model_from_json, ModelProblem, SymbolError};
use crate::synth::{build_grid, norm_report, tx_slice, FieldSlice, GridSpec, NormReport, SynthError};
use crate::transport::{solve_transport, CutoffParams, TransportError, TransportOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    /// Refusals are the construction declining to proceed, not failures.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            PipelineError::Eikonal(EikonalError::GateEmpty(_))
                | PipelineError::Transport(TransportError::Eikonal(EikonalError::GateEmpty(_)))
                | PipelineError::Condition(ConditionError::NoSignChange)
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl Default for ModelRef {
    fn default() -> Self {
        ModelRef { builtin: Some("mizohata".into()), params: Value::Null, file: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_t: Option<usize>,
    pub n_gx: Option<usize>,
    pub n_gy: Option<usize>,
    pub n_t_max: usize,
    pub margin: f64,
    pub h_over_sigma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_t: None, n_gx: None, n_gy: None, n_t_max: 257, margin: 0.8, h_over_sigma: 0.09 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffConfig {
    pub r_t: f64,
    pub r_x: f64,
    pub r_y: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        CutoffConfig { r_t: 12.0, r_x: 1.0, r_y: 6.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    pub pass1: usize,
    pub pass2: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig { pass1: 2000, pass2: 1200 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelRef,
    pub lambdas: Vec<f64>,
    #[serde(rename = "K")]
    pub k_trunc: usize,
    #[serde(rename = "M_a")]
    pub m_a: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub rho: f64,
    pub kappa_exp: Option<f64>,
    #[serde(rename = "N")]
    pub n_sob: f64,
    pub nu: f64,
    pub grid: GridConfig,
    pub cutoff: CutoffConfig,
    pub seed: u64,
    pub output_dir: String,
    pub verbosity: u8,
    pub timings: bool,
    pub force: bool,
    pub aperture: f64,
    pub im_w02_init: f64,
    pub steps: StepConfig,
    pub slope_threshold: f64,
    pub r2_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelRef::default(),
            lambdas: vec![64.0, 128.0, 256.0, 512.0],
            k_trunc: 4,
            m_a: 4,
            levels: 2,
            rho: 0.1,
            kappa_exp: None,
            n_sob: 0.0,
            nu: 0.0,
            grid: GridConfig::default(),
            cutoff: CutoffConfig::default(),
            seed: 7,
            output_dir: "out".into(),
            verbosity: 1,
            timings: false,
            force: false,
            aperture: std::f64::consts::PI / 6.0,
            im_w02_init: 1.0,
            steps: StepConfig::default(),
            slope_threshold: -0.25,
            r2_threshold: 0.9,
        }
    }
}

impl RunConfig {
    /// Parse JSON text; serde reports line and column of schema errors.
    pub fn from_json(text: &str) -> Result<RunConfig, PipelineError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.lambdas.is_empty() {
            return bad("lambdas must not be empty".into());
        }
        if self.lambdas.iter().any(|&l| !(l >= 16.0)) {
            return bad("every lambda must be >= 16".into());
        }
        if self.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return bad("lambdas must be strictly increasing".into());
        }
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return bad(format!("rho = {} outside (0, 1/2)", self.rho));
        }
        if !(2..=8).contains(&self.k_trunc) {
            return bad(format!("K = {} outside [2, 8]", self.k_trunc));
        }
        if self.m_a == 0 {
            return bad("M_a must be positive".into());
        }
        if !(self.aperture > 0.0 && self.aperture < std::f64::consts::FRAC_PI_2) {
            return bad("aperture must lie in (0, pi/2)".into());
        }
        if !(self.im_w02_init > 0.0) {
            return bad("im_w02_init must be positive".into());
        }
        match (&self.model.builtin, &self.model.file) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => bad("model needs exactly one of `builtin` or `file`".into()),
        }
    }

    /// Resolve the model; file paths are relative to `base_dir`.
    pub fn resolve_model(&self, base_dir: Option<&Path>) -> Result<ModelProblem, PipelineError> {
        let m = if let Some(name) = &self.model.builtin {
            builtin_model(name, &self.model.params)?
        } else {
            let f = self.model.file.as_ref().expect("validated");
            let p = match base_dir {
                Some(d) => d.join(f),
                None => Path::new(f).to_path_buf(),
            };
            let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            let m = model_from_json(&v)?;
            m.validate()?;
            m
        };
        if let crate::symbols::Order::Finite(k) = m.k {
            if self.rho > 1.0 / k as f64 {
                return Err(PipelineError::Config(format!("rho = {} exceeds 1/k = {}", self.rho, 1.0 / k as f64)));
            }
        }
        Ok(m)
    }

    /// ρ above 1/(2k) is allowed but outside the regime the cutoffs are designed for.
    pub fn warnings(&self, m: &ModelProblem) -> Vec<String> {
        let mut w = Vec::new();
        if let crate::symbols::Order::Finite(k) = m.k {
            if self.rho > 0.5 / k as f64 {
                w.push(format!("rho = {} above 1/(2k) = {}", self.rho, 0.5 / k as f64));
            }
        }
        w
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditOutcome {
    pub sign_change: Option<SignChangeReport>,
    pub sign_change_error: Option<String>,
    pub audit: ConditionAudit,
    /// A +→− crossing was found; the opposite orientation does not violate the condition.
    pub sign_change_usable: bool,
    pub licensed: bool,
}

impl AuditOutcome {
    /// 0 = construction licensed, 2 = refused.
    pub fn exit_code(&self) -> i32 {
        if self.licensed {
            0
        } else {
            2
        }
    }
}

pub fn run_audit(model: &ModelProblem, seed: u64) -> Result<AuditOutcome, PipelineError> {
    let opt = AuditOptions { seed, ..AuditOptions::default() };
    let audit = audit_conditions(model, &Region::around(model), &opt)?;
    let (sign_change, sign_change_error) = match detect_sign_change(model, &LinePoint::base(model), model.interval, 4096) {
        Ok(r) => (Some(r), None),
        Err(e @ ConditionError::NoSignChange) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let sign_change_usable = sign_change.as_ref().map(|r| r.direction == Direction::PlusToMinus).unwrap_or(false);
    let licensed = audit.all_hold() && sign_change_usable;
    Ok(AuditOutcome { sign_change, sign_change_error, audit, sign_change_usable, licensed })
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseRow {
    pub t: f64,
    pub w0_re: f64,
    pub w0_im: f64,
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub y0: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eigmin_im_w20: f64,
    pub eigmin_im_w02: f64,
}

pub fn phase_rows(traj: &PhaseTrajectory) -> Vec<PhaseRow> {
    (0..traj.samples.t.len())
        .map(|i| {
            let s = traj.state(i);
            PhaseRow {
                t: traj.samples.t[i],
                w0_re: s.w0().re,
                w0_im: s.w0().im,
                x0: s.x0(),
                xi0: s.xi0(),
                y0: s.y0(),
                zeta: s.zeta(),
                eigmin_im_w20: min_eig(&s.w20().map(|z| z.im)),
                eigmin_im_w02: min_eig(&s.w02().map(|z| z.im)),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PointOutcome {
    pub report: NormReport,
    pub phase: Vec<PhaseRow>,
    pub grid_shape: Vec<usize>,
    /// |u| through the anchor centre, for plotting.
    pub slice: FieldSlice,
}

pub fn phase_options(cfg: &RunConfig, lambda: f64) -> PhaseOptions {
    PhaseOptions {
        k_trunc: cfg.k_trunc,
        rho: cfg.rho,
        steps_pass1: cfg.steps.pass1,
        steps_pass2: cfg.steps.pass2,
        im_w02_init: cfg.im_w02_init,
        r_t: cfg.cutoff.r_t,
        ..PhaseOptions::new(lambda)
    }
}

pub fn grid_spec(cfg: &RunConfig) -> GridSpec {
    GridSpec {
        n_t: cfg.grid.n_t,
        n_gx: cfg.grid.n_gx,
        n_gy: cfg.grid.n_gy,
        n_t_max: cfg.grid.n_t_max,
        margin: cfg.grid.margin,
        h_over_sigma: cfg.grid.h_over_sigma,
        ..GridSpec::default()
    }
}

/// Initial W[2,0]; a crossing that is not simple uses the documented fallback.
pub fn initial_w2(model: &ModelProblem, sign: &SignChangeReport) -> Result<W2Choice, PipelineError> {
    match choose_initial_w2(model, sign.t_cross, sign.order_estimate) {
        Ok(w) => Ok(w),
        Err(EikonalError::HigherOrderCrossing { fallback, .. }) => Ok(fallback),
        Err(e) => Err(e.into()),
    }
}

pub fn run_point(model: &ModelProblem, w2: &W2Choice, lambda: f64, cfg: &RunConfig) -> Result<PointOutcome, PipelineError> {
    let start = Instant::now();
    let opt = phase_options(cfg, lambda);
    let st = initial_state(model, w2, cfg.k_trunc, cfg.im_w02_init);
    let traj = integrate_phase(model, &st, &opt)?;
    let cut = CutoffParams::new(&traj, cfg.cutoff.r_t, cfg.cutoff.r_x, cfg.cutoff.r_y);
    let topt = TransportOptions { levels: cfg.levels, m_a: cfg.m_a, kappa: cfg.kappa_exp };
    let amp = solve_transport(&traj, model, &topt, cut)?;
    let grid = build_grid(&traj, &amp, &grid_spec(cfg))?;
    let (mut report, u) = norm_report(model, &traj, &amp, &grid, cfg.n_sob, cfg.nu, cfg.aperture, cfg.levels)?;
    let (v, _) = traj.state_at(traj.t0_anchor)?;
    let l = &traj.layout;
    let x0: Vec<f64> = (0..model.nx).map(|i| v[l.x0() + i].re).collect();
    let y0: Vec<f64> = (0..model.ny).map(|i| v[l.y0() + i].re).collect();
    let slice = tx_slice(&u, &x0, &y0);
    if cfg.timings {
        report.wall_ms = start.elapsed().as_millis() as u64;
    }
    Ok(PointOutcome { report, phase: phase_rows(&traj), grid_shape: grid.shape(), slice })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

/// Independent jobs over λ; results keep the input order.
pub fn map_lambdas<R: Send>(lambdas: &[f64], exec: Exec, f: impl Fn(f64) -> R + Sync + Send) -> Vec<R> {
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            lambdas.par_iter().map(|&l| f(l)).collect()
        }
        _ => lambdas.iter().map(|&l| f(l)).collect(),
    }
}

pub fn default_exec() -> Exec {
    if cfg!(feature = "parallel") {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

pub fn violation_report(
    model: &ModelProblem,
    w2: &W2Choice,
    lambdas: &[f64],
    cfg: &RunConfig,
    exec: Exec,
) -> Vec<(f64, Result<PointOutcome, PipelineError>)> {
    let out = map_lambdas(lambdas, exec, |l| run_point(model, w2, l, cfg));
    let mut v: Vec<_> = lambdas.iter().cloned().zip(out).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Violation,
    RefusedConditions,
    RefusedNoSignChange,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct Refusal {
    pub lambda: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub model: String,
    pub verdict: Verdict,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub slope_u0: Option<f64>,
    pub slope_pu: Option<f64>,
    pub n_points: usize,
    pub refused: Vec<Refusal>,
    pub errors: Vec<Refusal>,
    pub audit_licensed: bool,
    pub forced: bool,
    pub message: String,
    pub params: Value,
}

pub fn fit(reports: &[&NormReport], key: impl Fn(&NormReport) -> f64) -> Option<(f64, f64)> {
    if reports.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = reports.iter().map(|r| r.lambda.ln()).collect();
    let ys: Vec<f64> = reports.iter().map(|r| key(r).ln()).collect();
    Some(slope_fit(&xs, &ys))
}

pub fn summarize(
    model: &ModelProblem,
    cfg: &RunConfig,
    audit: &AuditOutcome,
    points: &[(f64, Result<PointOutcome, PipelineError>)],
) -> Summary {
    let ok: Vec<&NormReport> = points.iter().filter_map(|(_, r)| r.as_ref().ok().map(|p| &p.report)).collect();
    let refused: Vec<Refusal> = points
        .iter()
        .filter_map(|(l, r)| r.as_ref().err().filter(|e| e.is_refusal()).map(|e| Refusal { lambda: *l, reason: e.to_string() }))
        .collect();
    let errors: Vec<Refusal> = points
        .iter()
        .filter_map(|(l, r)| r.as_ref().err().filter(|e| !e.is_refusal()).map(|e| Refusal { lambda: *l, reason: e.to_string() }))
        .collect();
    let f = fit(&ok, |r| r.ratio);
    let (verdict, message) = if !audit.sign_change_usable {
        (Verdict::RefusedNoSignChange, "construction refused: no sign change of Im f".to_string())
    } else if !audit.licensed && !cfg.force {
        (Verdict::RefusedConditions, "construction refused: conditions not met".to_string())
    } else if ok.is_empty() && !refused.is_empty() {
        (Verdict::RefusedConditions, "construction refused: gate leaves no usable interval".to_string())
    } else {
        match f {
            Some((s, r2)) if s <= cfg.slope_threshold && r2 >= cfg.r2_threshold => {
                (Verdict::Violation, format!("ratio slope {s:.4} with R^2 {r2:.4}"))
            }
            Some((s, r2)) => (Verdict::Inconclusive, format!("ratio slope {s:.4} with R^2 {r2:.4}")),
            None => (Verdict::Inconclusive, "fewer than two completed lambda values".to_string()),
        }
    };
    Summary {
        model: model.label.clone(),
        verdict,
        slope: f.map(|v| v.0),
        r2: f.map(|v| v.1),
        slope_u0: fit(&ok, |r| r.norms.u_minus_n).map(|v| v.0),
        slope_pu: fit(&ok, |r| r.norms.pu_nu).map(|v| v.0),
        n_points: ok.len(),
        refused,
        errors,
        audit_licensed: audit.licensed,
        forced: cfg.force,
        message,
        params: serde_json::json!({
            "K": cfg.k_trunc, "M_a": cfg.m_a, "L": cfg.levels, "rho": cfg.rho, "N": cfg.n_sob, "nu": cfg.nu,
            "n": crate::synth::dim(model), "lambdas": cfg.lambdas,
        }),
    }
}

pub struct RunOutput {
    pub model: ModelProblem,
    pub audit: AuditOutcome,
    pub points: Vec<(f64, Result<PointOutcome, PipelineError>)>,
    pub summary: Summary,
}

/// Audit, then (if licensed or forced) the λ-sweep and its summary.
pub fn run_pipeline(cfg: &RunConfig, base_dir: Option<&Path>, exec: Exec) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let model = cfg.resolve_model(base_dir)?;
    let audit = run_audit(&model, cfg.seed)?;
    let points = match (&audit.sign_change, audit.sign_change_usable && (audit.licensed || cfg.force)) {
        (Some(sign), true) => {
            let w2 = initial_w2(&model, sign)?;
            violation_report(&model, &w2, &cfg.lambdas, cfg, exec)
        }
        _ => Vec::new(),
    };
    let summary = summarize(&model, cfg, &audit, &points);
    Ok(RunOutput { model, audit, points, summary })
}
