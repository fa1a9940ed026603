//! Amplitude hierarchy: Taylor-coefficient ODEs along the phase trajectory,
//! the exact conjugated operator on polynomial amplitudes, and the cutoffs.

use crate::eikonal::{derived, Composer, EikonalError, PhaseSlice, PhaseTrajectory};
use crate::ode::{self, Samples};
use crate::poly::{basis, Basis, Poly};
use crate::symbols::{Backend, ModelProblem, Orders, SymbolError, SymbolFunction, TTag};
use num_complex::Complex64 as C64;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum TransportError {
    #[error("derivative budget {budget} below required {need}")]
    BudgetExceeded { need: usize, budget: usize },
    #[error("operator form needs polynomial symbols")]
    NotPolynomial,
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

/// One monomial c·T(t)·x^a·y^b·ξ^α·η^β of the full symbol, with its λ-power
/// in the conjugated operator c·λ^p·(λ∂_xω + D_x)^α(λ∂_yω + D_y)^β.
#[derive(Clone, Debug)]
pub struct OpTerm {
    pub coeff: C64,
    pub t: TTag,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub p: f64,
}

pub fn op_terms(model: &ModelProblem) -> Result<Vec<OpTerm>, TransportError> {
    let kinv = model.k.inv();
    let mut out = Vec::new();
    let mut push = |s: &SymbolFunction, base: f64| -> Result<(), TransportError> {
        let Backend::Poly(terms) = &s.backend else {
            return Err(TransportError::NotPolynomial);
        };
        for t in terms {
            let a: u32 = t.xi.iter().sum();
            let b: u32 = t.eta.iter().sum();
            out.push(OpTerm {
                coeff: t.coeff,
                t: t.t,
                x: t.x.clone(),
                y: t.y.clone(),
                alpha: t.xi.clone(),
                beta: t.eta.clone(),
                p: base - a as f64 - b as f64 * (1.0 - kinv),
            });
        }
        Ok(())
    };
    push(&model.f, 1.0)?;
    if let Some(r) = &model.r {
        push(r, 1.0 - kinv)?;
    }
    if let Some(f0) = &model.f0 {
        push(f0, 0.0)?;
    }
    Ok(out)
}

fn max_order(terms: &[OpTerm]) -> usize {
    terms.iter().map(|t| (t.alpha.iter().sum::<u32>() + t.beta.iter().sum::<u32>()) as usize).max().unwrap_or(0)
}

fn max_coeff_degree(terms: &[OpTerm]) -> usize {
    terms.iter().map(|t| (t.x.iter().sum::<u32>() + t.y.iter().sum::<u32>()) as usize).max().unwrap_or(0)
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Transport symbols of the principal part, precomputed once per model.
pub struct TransportModel<'a> {
    pub model: &'a ModelProblem,
    pub terms: Option<Vec<OpTerm>>,
    dxi: Vec<SymbolFunction>,
    deta: Vec<SymbolFunction>,
    deta2: Vec<(usize, usize, SymbolFunction)>,
    pub m_max: usize,
    pub a_max: usize,
}

impl<'a> TransportModel<'a> {
    pub fn new(model: &'a ModelProblem) -> TransportModel<'a> {
        let (nx, ny) = (model.nx, model.ny);
        let one = |f: &dyn Fn(&mut Orders)| {
            let mut o = Orders::zero(nx, ny);
            f(&mut o);
            derived(&model.f, &o)
        };
        let dxi = (0..nx).map(|i| one(&|o| o.xi[i] = 1)).collect();
        let deta = (0..ny).map(|a| one(&|o| o.eta[a] = 1)).collect();
        let mut deta2 = Vec::new();
        for a in 0..ny {
            for b in 0..ny {
                let s = one(&|o| {
                    o.eta[a] += 1;
                    o.eta[b] += 1
                });
                if !s.is_identically_zero() {
                    deta2.push((a, b, s));
                }
            }
        }
        let terms = op_terms(model).ok();
        let (m_max, a_max) = terms.as_ref().map(|t| (max_order(t), max_coeff_degree(t))).unwrap_or((2, 0));
        TransportModel { model, terms, dxi, deta, deta2, m_max, a_max }
    }
}

/// Everything at one instant: the phase polynomials and the operator coefficients.
pub struct OpCtx<'a> {
    tm: &'a TransportModel<'a>,
    pub basis: Arc<Basis>,
    pub t: f64,
    pub lambda: f64,
    pub slice: PhaseSlice,
    lam_dx: Vec<Poly>,
    lam_dy: Vec<Poly>,
    lam_c: Vec<Poly>,
    v: Vec<Poly>,
    w: Vec<Poly>,
    q: Vec<(usize, usize, Poly)>,
    g: Poly,
}

impl<'a> OpCtx<'a> {
    pub fn new(tm: &'a TransportModel<'a>, traj: &PhaseTrajectory, t: f64, b: &Arc<Basis>) -> Result<OpCtx<'a>, TransportError> {
        let m = tm.model;
        let (nx, ny) = (m.nx, m.ny);
        let sc = traj.scales;
        let lam = sc.lambda;
        let slice = traj.slice(t, b)?;
        let lc = C64::new(lam, 0.0);
        let lam_dx = (0..nx).map(|i| slice.omega.deriv(i).scale(lc)).collect();
        let lam_dy = (0..ny).map(|a| slice.omega.deriv(nx + a).scale(lc)).collect();
        let comp = Composer { model: m, scales: sc, pass1: false };
        let args = comp.arguments(t, &slice.x0, &slice.y0, &slice.omega, &traj.eta_base)?;
        let mut lam_c = Vec::new();
        if let Some(cs) = &m.c_coupling {
            let z: Vec<Poly> = (0..nx).map(|_| Poly::zero(b)).collect();
            let zy: Vec<Poly> = (0..ny).map(|_| Poly::zero(b)).collect();
            let cp = crate::symbols::Point::new(t, &slice.x0, &slice.y0, &vec![0.0; nx], &vec![0.0; ny]);
            for c in cs {
                lam_c.push(c.compose(&cp, &args.dx, &args.dy, &z, &zy)?.scale(C64::new(lam.powf(1.0 - sc.kinv), 0.0)));
            }
        }
        let v = tm.dxi.iter().map(|s| comp.compose(s, &args)).collect::<Result<Vec<_>, _>>()?;
        let lk = C64::new(lam.powf(sc.kinv), 0.0);
        let w = tm
            .deta
            .iter()
            .map(|s| comp.compose(s, &args).map(|p| p.scale(lk)))
            .collect::<Result<Vec<_>, _>>()?;
        let lq = C64::new(lam.powf(2.0 * sc.kinv - 1.0), 0.0);
        let q = tm
            .deta2
            .iter()
            .map(|(a, c, s)| comp.compose(s, &args).map(|p| (*a, *c, p.scale(lq))))
            .collect::<Result<Vec<_>, _>>()?;
        let g = match &m.f0 {
            Some(f0) => comp.compose(f0, &args)?,
            None => Poly::zero(b),
        };
        Ok(OpCtx { tm, basis: b.clone(), t, lambda: lam, slice, lam_dx, lam_dy, lam_c, v, w, q, g })
    }

    fn nx(&self) -> usize {
        self.tm.model.nx
    }

    /// D_v φ = −i ∂_v φ.
    fn d(&self, phi: &Poly, v: usize) -> Poly {
        phi.deriv(v).scale(C64::new(0.0, -1.0))
    }

    /// Principal transport part without D_t: V·D_X + W·D_Y + ½Q:D²_Y + G.
    pub fn rest(&self, phi: &Poly) -> Poly {
        let nx = self.nx();
        let mut out = self.g.mul(phi);
        for (i, v) in self.v.iter().enumerate() {
            out.add_assign(&v.mul(&self.d(phi, i)));
        }
        for (a, w) in self.w.iter().enumerate() {
            out.add_assign(&w.mul(&self.d(phi, nx + a)));
        }
        for (a, b, q) in &self.q {
            let dd = self.d(&self.d(phi, nx + b), nx + a);
            out.add_scaled(&q.mul(&dd), C64::new(0.5, 0.0));
        }
        out
    }

    /// Conjugated operator minus its D_t part: λ∂_tω·φ + Σ c λ^p (λ∂ω + D)^α…
    pub fn full(&self, phi: &Poly) -> Result<Poly, TransportError> {
        let terms = self.tm.terms.as_ref().ok_or(TransportError::NotPolynomial)?;
        let nx = self.nx();
        let ny = self.tm.model.ny;
        let b = &self.basis;
        let mut out = self.slice.omega_t.mul(phi).scale(C64::new(self.lambda, 0.0));
        let xs: Vec<Poly> = (0..nx)
            .map(|i| {
                let mut p = Poly::var(b, i);
                p.c[0] = C64::new(self.slice.x0[i], 0.0);
                p
            })
            .collect();
        let ys: Vec<Poly> = (0..ny)
            .map(|a| {
                let mut p = Poly::var(b, nx + a);
                p.c[0] = C64::new(self.slice.y0[a], 0.0);
                p
            })
            .collect();
        for term in terms {
            let mut psi = phi.clone();
            for i in 0..nx {
                for _ in 0..term.alpha[i] {
                    let mut n = self.lam_dx[i].mul(&psi);
                    n.add_assign(&self.d(&psi, i));
                    psi = n;
                }
            }
            let psi = if self.lam_c.is_empty() {
                let mut psi = psi;
                for a in 0..ny {
                    for _ in 0..term.beta[a] {
                        let mut n = self.lam_dy[a].mul(&psi);
                        n.add_assign(&self.d(&psi, nx + a));
                        psi = n;
                    }
                }
                psi
            } else {
                self.coupled_y(&psi, &term.beta)
            };
            let mut coef = Poly::constant(b, term.coeff * term.t.eval(self.t) * self.lambda.powf(term.p));
            for i in 0..nx {
                if term.x[i] > 0 {
                    coef = coef.mul(&xs[i].pow(term.x[i]));
                }
            }
            for a in 0..ny {
                if term.y[a] > 0 {
                    coef = coef.mul(&ys[a].pow(term.y[a]));
                }
            }
            out.add_assign(&coef.mul(&psi));
        }
        Ok(out)
    }

    /// Left-ordered Π_a Σ_j C(β_a, j) (λ^{1−1/k}c_a)^{β_a−j} (λ∂_yω + D_y)^j.
    fn coupled_y(&self, psi: &Poly, beta: &[u32]) -> Poly {
        let nx = self.nx();
        let mut acc = psi.clone();
        for (a, &ba) in beta.iter().enumerate() {
            if ba == 0 {
                continue;
            }
            let mut powers = vec![acc.clone()];
            for j in 1..=ba as usize {
                let prev = &powers[j - 1];
                let mut n = self.lam_dy[a].mul(prev);
                n.add_assign(&self.d(prev, nx + a));
                powers.push(n);
            }
            let mut s = Poly::zero(&self.basis);
            for j in 0..=ba {
                let cpow = self.lam_c[a].pow(ba - j);
                s.add_scaled(&cpow.mul(&powers[j as usize]), C64::new(binom(ba, j), 0.0));
            }
            acc = s;
        }
        acc
    }

    /// Moving-frame drift (x₀′·∂_X + y₀′·∂_Y)φ.
    pub fn drift(&self, phi: &Poly) -> Poly {
        let nx = self.nx();
        let mut out = Poly::zero(&self.basis);
        for (i, v) in self.slice.x0_dot.iter().enumerate() {
            out.add_scaled(&phi.deriv(i), C64::new(*v, 0.0));
        }
        for (a, v) in self.slice.y0_dot.iter().enumerate() {
            out.add_scaled(&phi.deriv(nx + a), C64::new(*v, 0.0));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TransportOptions {
    pub levels: usize,
    pub m_a: usize,
    pub kappa: Option<f64>,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { levels: 1, m_a: 4, kappa: None }
    }
}

#[derive(Clone, Debug)]
pub struct CutoffParams {
    pub lambda: f64,
    pub rho: f64,
    /// exponent of the x-scale: 1/k − ρ, or 1/2 − ρ when η₀ = 0
    pub x_exp: f64,
    pub r_t: f64,
    pub r_x: f64,
    pub r_y: f64,
}

impl CutoffParams {
    pub fn new(traj: &PhaseTrajectory, r_t: f64, r_x: f64, r_y: f64) -> CutoffParams {
        let sc = traj.scales;
        let x_exp = if traj.eta_zero { 0.5 - sc.rho } else { sc.kinv - sc.rho };
        CutoffParams { lambda: sc.lambda, rho: sc.rho, x_exp, r_t, r_x, r_y }
    }

    pub fn unit(traj: &PhaseTrajectory) -> CutoffParams {
        CutoffParams::new(traj, 1.0, 1.0, 1.0)
    }

    /// Half-widths of the support: |Δx| ≤ 2R_x λ^{−x_exp}, |Δy| ≤ 2R_y λ^{−ρ/4}.
    pub fn support(&self) -> (f64, f64) {
        (2.0 * self.r_x * self.lambda.powf(-self.x_exp), 2.0 * self.r_y * self.lambda.powf(-self.rho / 4.0))
    }

    pub fn chi(&self, im_w0: f64) -> f64 {
        bump(im_w0.max(0.0) * self.lambda.powf(1.0 - self.rho) / self.r_t)
    }

    pub fn psi(&self, dx: &[f64], dy: &[f64]) -> f64 {
        let sx = self.lambda.powf(self.x_exp) / self.r_x;
        let sy = self.lambda.powf(self.rho / 4.0) / self.r_y;
        let rx = dx.iter().map(|v| (v * sx).powi(2)).sum::<f64>().sqrt();
        let ry = dy.iter().map(|v| (v * sy).powi(2)).sum::<f64>().sqrt();
        bump(rx) * bump(ry)
    }
}

/// 1 on [0,1], exp(1 − 1/(1 − s²)) with s = r − 1 on (1,2), 0 beyond.
pub fn bump(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let s = r - 1.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

#[derive(Clone)]
pub struct AmplitudeSet {
    pub levels: Vec<Samples>,
    pub basis: Arc<Basis>,
    pub m_a: usize,
    pub kappa_exp: f64,
    pub cutoff: CutoffParams,
    pub t0_anchor: f64,
}

impl std::fmt::Debug for AmplitudeSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AmplitudeSet(L = {}, M_a = {}, kappa = {})", self.levels.len() - 1, self.m_a, self.kappa_exp)
    }
}

impl AmplitudeSet {
    /// Level-ℓ amplitude polynomial and its coefficient t-derivative.
    pub fn level_at(&self, l: usize, t: f64) -> Option<(Poly, Poly)> {
        let (v, d) = ode::hermite(&self.levels[l], t)?;
        Some((Poly { basis: self.basis.clone(), c: v }, Poly { basis: self.basis.clone(), c: d }))
    }

    /// Σ_ℓ λ^{−ℓκ}φ_ℓ.
    pub fn sum_at(&self, t: f64) -> Option<(Poly, Poly)> {
        let mut a = Poly::zero(&self.basis);
        let mut da = Poly::zero(&self.basis);
        for l in 0..self.levels.len() {
            let (p, d) = self.level_at(l, t)?;
            let w = C64::new(self.cutoff.lambda.powf(-(l as f64) * self.kappa_exp), 0.0);
            a.add_scaled(&p, w);
            da.add_scaled(&d, w);
        }
        Some((a, da))
    }

    pub fn max_coeff(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|s| s.y.iter().flat_map(|v| v.iter().map(|z| z.norm())))
            .fold(0.0, f64::max)
    }
}

pub fn kappa_exp(traj: &PhaseTrajectory) -> f64 {
    traj.scales.rho.min(0.5 * traj.scales.kinv)
}

/// Right-hand side of the level-ℓ coefficient ODE:
/// φ̇ = (x₀′∂_X + y₀′∂_Y)φ + i(S − Rest φ), truncated to degree M_a.
pub fn transport_rhs(ctx: &OpCtx, phi: &[C64], source: Option<&Poly>, small: &Arc<Basis>) -> Vec<C64> {
    let p = Poly { basis: small.clone(), c: phi.to_vec() }.rebase(&ctx.basis);
    let mut out = ctx.drift(&p);
    let mut s = ctx.rest(&p).scale(C64::new(-1.0, 0.0));
    if let Some(src) = source {
        s.add_assign(src);
    }
    out.add_scaled(&s, C64::new(0.0, 1.0));
    out.rebase(small).c
}

pub fn solve_transport(
    traj: &PhaseTrajectory,
    model: &ModelProblem,
    opt: &TransportOptions,
    cutoff: CutoffParams,
) -> Result<AmplitudeSet, TransportError> {
    let tm = TransportModel::new(model);
    let need = opt.m_a + 2;
    if model.f.d_max < need {
        return Err(TransportError::BudgetExceeded { need, budget: model.f.d_max });
    }
    if opt.levels > 0 && tm.terms.is_none() {
        return Err(TransportError::NotPolynomial);
    }
    let nv = model.nx + model.ny;
    let small = basis(nv, opt.m_a);
    let work = basis(nv, opt.m_a + tm.m_max.max(2));
    let kappa = opt.kappa.unwrap_or_else(|| kappa_exp(traj));
    let lam_k = C64::new(traj.scales.lambda.powf(kappa), 0.0);

    let ts = &traj.samples.t;
    let i0 = ts.iter().position(|&t| t == traj.t0_anchor).unwrap_or_else(|| {
        ts.iter()
            .enumerate()
            .min_by(|a, b| (a.1 - traj.t0_anchor).abs().total_cmp(&(b.1 - traj.t0_anchor).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    });
    let t0 = ts[i0];
    let (lo, hi) = (ts[0], *ts.last().unwrap());
    let n_left = i0;
    let n_right = ts.len() - 1 - i0;

    let mut levels: Vec<Samples> = Vec::new();
    for l in 0..=opt.levels {
        let mut init = vec![C64::default(); small.len()];
        if l == 0 {
            init[0] = C64::new(1.0, 0.0);
        }
        let prev = levels.last().cloned();
        let rhs = |t: f64, phi: &[C64]| -> Result<Vec<C64>, TransportError> {
            let ctx = OpCtx::new(&tm, traj, t, &work)?;
            let src = match &prev {
                None => None,
                Some(s) => {
                    let (v, _) = ode::hermite(s, t).ok_or(EikonalError::OutOfInterval(t))?;
                    let p = Poly { basis: small.clone(), c: v }.rebase(&work);
                    let t1 = ctx.full(&p)?.sub(&ctx.rest(&p));
                    Some(t1.scale(-lam_k))
                }
            };
            Ok(transport_rhs(&ctx, phi, src.as_ref(), &small))
        };
        let one = |t: f64| -> Result<Samples, TransportError> {
            Ok(Samples { t: vec![t], y: vec![init.clone()], dy: vec![rhs(t, &init)?] })
        };
        let right = if n_right > 0 { ode::rk4(rhs, |_, _| true, t0, init.clone(), hi, n_right)?.0 } else { one(t0)? };
        let left = if n_left > 0 { ode::rk4(rhs, |_, _| true, t0, init.clone(), lo, n_left)?.0 } else { one(t0)? };
        let mut t: Vec<f64> = left.t.iter().rev().cloned().collect();
        let mut y: Vec<Vec<C64>> = left.y.into_iter().rev().collect();
        let mut dy: Vec<Vec<C64>> = left.dy.into_iter().rev().collect();
        t.extend(right.t.iter().skip(1));
        y.extend(right.y.into_iter().skip(1));
        dy.extend(right.dy.into_iter().skip(1));
        levels.push(Samples { t, y, dy });
    }
    Ok(AmplitudeSet { levels, basis: small, m_a: opt.m_a, kappa_exp: kappa, cutoff, t0_anchor: t0 })
}

/// Degree needed to hold e^{−iλω}P*(e^{iλω}A) without truncation.
pub fn residual_degree(tm: &TransportModel, k_trunc: usize, m_a: usize) -> usize {
    m_a + tm.m_max * k_trunc.saturating_sub(1) + tm.a_max
}

/// e^{−iλω}P*(e^{iλω}A) at time t as a polynomial in (X, Y), A = Σλ^{−ℓκ}φ_ℓ.
pub fn expansion_residual_poly(
    tm: &TransportModel,
    traj: &PhaseTrajectory,
    amp: &AmplitudeSet,
    t: f64,
    b: &Arc<Basis>,
) -> Result<Poly, TransportError> {
    let ctx = OpCtx::new(tm, traj, t, b)?;
    let (a, da) = amp.sum_at(t).ok_or(EikonalError::OutOfInterval(t))?;
    let a = a.rebase(b);
    let da = da.rebase(b);
    let mut out = ctx.full(&a)?;
    // D_t at fixed (x, y): −i(∂_t coefficients − drift)
    let mut dt = da.sub(&ctx.drift(&a));
    dt = dt.scale(C64::new(0.0, -1.0));
    out.add_assign(&dt);
    Ok(out)
}

/// Product weight χ·ψ at (t, x, y); zero outside the trajectory.
pub fn apply_cutoffs(amp: &AmplitudeSet, traj: &PhaseTrajectory, t: f64, x: &[f64], y: &[f64]) -> f64 {
    let Ok((v, _)) = traj.state_at(t) else {
        return 0.0;
    };
    let l = &traj.layout;
    let dx: Vec<f64> = (0..l.nx).map(|i| x[i] - v[l.x0() + i].re).collect();
    let dy: Vec<f64> = (0..l.ny).map(|a| y[a] - v[l.y0() + a].re).collect();
    amp.cutoff.chi(v[0].im) * amp.cutoff.psi(&dx, &dy)
}
