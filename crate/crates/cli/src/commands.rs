//! Command implementations shared by the binary and the tests.

use crate::artifacts::{field_csv, lambda_tag, phase_csv, report_csv, write_audit, write_summary};
use pseudomode::pipeline::{default_exec, run_audit, run_pipeline, Exec, PipelineError, RunConfig, Summary, Verdict};
use pseudomode::symbols::BUILTINS;
use std::fmt;
use std::path::{Path, PathBuf};

pub const OUT_ENV: &str = "PSEUDOMODE_OUT";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Pipeline(PipelineError),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Pipeline(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => CliError::Config(m),
            e => CliError::Pipeline(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Scalar overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub lambdas: Option<Vec<f64>>,
    pub k_trunc: Option<usize>,
    pub rho: Option<f64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub timings: bool,
}

pub struct Loaded {
    pub cfg: RunConfig,
    pub base_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Config file (or defaults), then flags; the output directory is
/// `--out`, else `$PSEUDOMODE_OUT`, else the config's `output_dir`.
pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Loaded, CliError> {
    let (mut cfg, base_dir) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let cfg: RunConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (cfg, p.parent().map(Path::to_path_buf))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(m) = &ov.model {
        cfg.model.builtin = Some(m.clone());
        cfg.model.file = None;
    }
    if let Some(l) = &ov.lambdas {
        cfg.lambdas = l.clone();
    }
    if let Some(k) = ov.k_trunc {
        cfg.k_trunc = k;
    }
    if let Some(r) = ov.rho {
        cfg.rho = r;
    }
    cfg.force |= ov.force;
    cfg.timings |= ov.timings;
    cfg.validate()?;
    let out_dir = match (&ov.out, std::env::var_os(OUT_ENV)) {
        (Some(o), _) => o.clone(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => PathBuf::from(&cfg.output_dir),
    };
    Ok(Loaded { cfg, base_dir, out_dir })
}

/// Exit code: 0 licensed, 2 refused.
pub fn cmd_audit(l: &Loaded) -> Result<i32, CliError> {
    let model = l.cfg.resolve_model(l.base_dir.as_deref())?;
    let a = run_audit(&model, l.cfg.seed)?;
    std::fs::create_dir_all(&l.out_dir)?;
    write_audit(&l.out_dir, &a)?;
    if l.cfg.verbosity > 0 {
        eprintln!(
            "{}: {} (kcond {}, hessian {}, leaf {}, dq {}, sign change {})",
            model.label,
            if a.licensed { "licensed" } else { "refused" },
            a.audit.cond_kcond.holds,
            a.audit.cond_hessian.as_ref().map(|h| h.holds.to_string()).unwrap_or_else(|| "n/a".into()),
            a.audit.cond_leaf.holds,
            a.audit.cond_dq.holds,
            a.sign_change_usable,
        );
    }
    Ok(a.exit_code())
}

pub fn run_exit_code(s: &Summary) -> i32 {
    match s.verdict {
        Verdict::Violation | Verdict::Inconclusive => 0,
        Verdict::RefusedConditions | Verdict::RefusedNoSignChange => 2,
    }
}

/// Writes audit.json, summary.json, report.csv, phase_{λ}.csv and field_{λ}.csv.
pub fn cmd_run(l: &Loaded, exec: Exec) -> Result<(i32, Summary), CliError> {
    let out = run_pipeline(&l.cfg, l.base_dir.as_deref(), exec)?;
    std::fs::create_dir_all(&l.out_dir)?;
    write_audit(&l.out_dir, &out.audit)?;
    let fiber = if out.model.eta0.iter().all(|&v| v == 0.0) { "eta0" } else { "zeta0" };
    let mut ok = Vec::new();
    for (lam, r) in out.points {
        match r {
            Ok(p) => {
                std::fs::write(l.out_dir.join(format!("phase_{}.csv", lambda_tag(lam))), phase_csv(&p.phase, fiber)?)?;
                std::fs::write(l.out_dir.join(format!("field_{}.csv", lambda_tag(lam))), field_csv(&p.slice)?)?;
                ok.push((lam, p));
            }
            Err(e) if l.cfg.verbosity > 0 => eprintln!("lambda = {lam}: {e}"),
            Err(_) => {}
        }
    }
    std::fs::write(l.out_dir.join("report.csv"), report_csv(&ok)?)?;
    write_summary(&l.out_dir, &out.summary)?;
    if l.cfg.verbosity > 0 {
        for w in l.cfg.warnings(&out.model) {
            eprintln!("warning: {w}");
        }
        eprintln!("{}: {:?} ({})", out.summary.model, out.summary.verdict, out.summary.message);
    }
    Ok((run_exit_code(&out.summary), out.summary))
}

pub fn cmd_models() -> String {
    BUILTINS.iter().map(|(n, d)| format!("{n:10} {d}\n")).collect()
}

pub fn default_execution() -> Exec {
    default_exec()
}
