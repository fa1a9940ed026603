//! Complex phase ω_λ as a truncated Taylor expansion along a moving centre,
//! integrated by RK4 in two passes (λ-free spine, then the full system).

use crate::conditions::{lemclaim_gate, ConditionError, GateInput, GateOptions, GateResult, VanishingOrder};
use crate::ode::{self, Samples};
use crate::poly::{basis, factorial, Basis, Poly};
use crate::symbols::{ModelProblem, Order, Orders, Point, SymbolError, SymbolFunction};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum EikonalError {
    #[error("Hessian block is singular at t = {t}: smallest eigenvalue {eig:e}")]
    SingularHessian { t: f64, eig: f64 },
    #[error("derivative budget {budget} below required {need}")]
    BudgetExceeded { need: usize, budget: usize },
    #[error("Im w20 or Im w02 lost positivity at t = {t}")]
    HessianLoss { t: f64 },
    #[error("gate leaves no usable interval: {0}")]
    GateEmpty(String),
    #[error("crossing of order {order:?} is not simple")]
    HigherOrderCrossing { order: VanishingOrder, fallback: W2Choice },
    #[error("t = {0} lies outside the trajectory")]
    OutOfInterval(f64),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

pub const EIG_FLOOR: f64 = 1e-8;
/// Relative field size below which truncation at the interval edge is ignored.
pub const LEAKAGE_FLOOR: f64 = 1e-10;

/// Flat state layout: w0, x0, ξ0, y0, ζ (or η0(t)), then one coefficient per
/// monomial of degree 2..=K in Z = (X, Y).
#[derive(Clone, Debug)]
pub struct Layout {
    pub nx: usize,
    pub ny: usize,
    pub k_trunc: usize,
    pub basis: Arc<Basis>,
    pub mons: Vec<usize>,
}

impl Layout {
    pub fn new(nx: usize, ny: usize, k_trunc: usize) -> Layout {
        let b = basis(nx + ny, k_trunc);
        let mons = (2..=k_trunc).flat_map(|d| b.degree_range(d)).collect();
        Layout { nx, ny, k_trunc, basis: b, mons }
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.nx + 2 * self.ny + self.mons.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x0(&self) -> usize {
        1
    }
    pub fn xi0(&self) -> usize {
        1 + self.nx
    }
    pub fn y0(&self) -> usize {
        1 + 2 * self.nx
    }
    pub fn zeta(&self) -> usize {
        1 + 2 * self.nx + self.ny
    }
    pub fn d0(&self) -> usize {
        1 + 2 * self.nx + 2 * self.ny
    }

    pub fn has_y(&self, m: usize) -> bool {
        self.basis.exp(m)[self.nx..].iter().any(|&k| k > 0)
    }

    /// Slot of the monomial with exponent e, if stored.
    pub fn slot(&self, e: &[u8]) -> Option<usize> {
        let m = self.basis.index(e)?;
        self.mons.iter().position(|&q| q == m).map(|p| self.d0() + p)
    }

    fn unit(&self, v: usize, w: usize) -> Vec<u8> {
        let mut e = vec![0u8; self.nx + self.ny];
        e[v] += 1;
        e[w] += 1;
        e
    }
}

/// View of one state vector.
#[derive(Clone, Debug)]
pub struct PhaseState {
    pub layout: Layout,
    pub v: Vec<C64>,
}

impl PhaseState {
    pub fn w0(&self) -> C64 {
        self.v[0]
    }
    pub fn x0(&self) -> Vec<f64> {
        self.v[self.layout.x0()..self.layout.x0() + self.layout.nx].iter().map(|z| z.re).collect()
    }
    pub fn xi0(&self) -> Vec<f64> {
        self.v[self.layout.xi0()..self.layout.xi0() + self.layout.nx].iter().map(|z| z.re).collect()
    }
    pub fn y0(&self) -> Vec<f64> {
        self.v[self.layout.y0()..self.layout.y0() + self.layout.ny].iter().map(|z| z.re).collect()
    }
    pub fn zeta(&self) -> Vec<f64> {
        self.v[self.layout.zeta()..self.layout.zeta() + self.layout.ny].iter().map(|z| z.re).collect()
    }

    /// Dense tensor W[i,j] of shape nx^i × ny^j, row-major over slots.
    pub fn w_tensor(&self, i: usize, j: usize) -> Vec<C64> {
        let (nx, ny) = (self.layout.nx, self.layout.ny);
        let n = nx.pow(i as u32) * ny.pow(j as u32);
        let mut out = vec![C64::default(); n];
        for (flat, o) in out.iter_mut().enumerate() {
            let mut e = vec![0u8; nx + ny];
            let mut r = flat;
            for _ in 0..j {
                e[nx + r % ny] += 1;
                r /= ny;
            }
            for _ in 0..i {
                e[r % nx] += 1;
                r /= nx;
            }
            if let Some(s) = self.layout.slot(&e) {
                *o = self.v[s];
            }
        }
        out
    }

    pub fn block(&self, a: usize, b: usize, na: usize, nb: usize) -> DMatrix<C64> {
        DMatrix::from_fn(na, nb, |i, j| {
            let e = self.layout.unit(a + i, b + j);
            self.layout.slot(&e).map(|s| self.v[s]).unwrap_or_default()
        })
    }

    pub fn w20(&self) -> DMatrix<C64> {
        self.block(0, 0, self.layout.nx, self.layout.nx)
    }
    pub fn w11(&self) -> DMatrix<C64> {
        self.block(0, self.layout.nx, self.layout.nx, self.layout.ny)
    }
    pub fn w02(&self) -> DMatrix<C64> {
        let nx = self.layout.nx;
        self.block(nx, nx, self.layout.ny, self.layout.ny)
    }
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn im(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|z| z.im)
}

fn re(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|z| z.re)
}

/// λ-dependent scale factors of the expansion.
#[derive(Clone, Copy, Debug)]
pub struct Scales {
    pub lambda: f64,
    pub rho: f64,
    pub kinv: f64,
    /// λ^{ρ−1}: weight of every Y-containing monomial.
    pub s_y: f64,
    /// λ^{1/k+ρ−1}: fiber weight of ζ and of ∂_Y of the Y-part.
    pub mu: f64,
}

impl Scales {
    pub fn new(lambda: f64, rho: f64, k: Order) -> Scales {
        let kinv = k.inv();
        Scales { lambda, rho, kinv, s_y: lambda.powf(rho - 1.0), mu: lambda.powf(kinv + rho - 1.0) }
    }
}

/// Everything needed to evaluate the phase polynomial at one instant.
pub struct PhaseAtT<'a> {
    pub layout: &'a Layout,
    pub scales: Scales,
    pub eta_base: &'a [f64],
    pub pass1: bool,
}

impl PhaseAtT<'_> {
    pub fn weight(&self, m: usize) -> f64 {
        if self.layout.has_y(m) {
            self.scales.s_y
        } else {
            1.0
        }
    }

    /// Y-linear coefficient λ^{−1/k}η_base + λ^{ρ−1}ζ.
    pub fn ell(&self, v: &[C64]) -> Vec<f64> {
        let l = self.layout;
        (0..l.ny)
            .map(|a| self.scales.lambda.powf(-self.scales.kinv) * self.eta_base[a] + self.scales.s_y * v[l.zeta() + a].re)
            .collect()
    }

    /// ω − w0 − ... as a polynomial in (X, Y) of degree K; constant term is w0.
    pub fn omega(&self, v: &[C64], b: &Arc<Basis>) -> Poly {
        let l = self.layout;
        let mut om = Poly::zero(b);
        om.c[0] = v[0];
        let mut e = vec![0u8; l.nx + l.ny];
        for i in 0..l.nx {
            e[i] = 1;
            om.set(&e, v[l.xi0() + i]);
            e[i] = 0;
        }
        if !self.pass1 {
            let ell = self.ell(v);
            for a in 0..l.ny {
                e[l.nx + a] = 1;
                om.set(&e, C64::new(ell[a], 0.0));
                e[l.nx + a] = 0;
            }
        }
        for (p, &m) in l.mons.iter().enumerate() {
            if self.pass1 && l.has_y(m) {
                continue;
            }
            let ex = l.basis.exp(m);
            om.set(ex, v[l.d0() + p] * (self.weight(m) / factorial(ex)));
        }
        om
    }

    /// Time derivative of the coefficients (x, y held as moving coordinates).
    pub fn omega_dot(&self, dv: &[C64], b: &Arc<Basis>) -> Poly {
        let l = self.layout;
        let mut om = Poly::zero(b);
        om.c[0] = dv[0];
        let mut e = vec![0u8; l.nx + l.ny];
        for i in 0..l.nx {
            e[i] = 1;
            om.set(&e, dv[l.xi0() + i]);
            e[i] = 0;
        }
        if !self.pass1 {
            for a in 0..l.ny {
                e[l.nx + a] = 1;
                om.set(&e, dv[l.zeta() + a] * self.scales.s_y);
                e[l.nx + a] = 0;
            }
        }
        for (p, &m) in l.mons.iter().enumerate() {
            if self.pass1 && l.has_y(m) {
                continue;
            }
            let ex = l.basis.exp(m);
            om.set(ex, dv[l.d0() + p] * (self.weight(m) / factorial(ex)));
        }
        om
    }
}

/// Normalized symbol of the conjugated operator, composed at the moving centre:
/// f(t, x0+X, y0+Y, ∂_xω, λ^{1/k}∂_yω + c) plus the subleading pieces.
pub struct Composer<'a> {
    pub model: &'a ModelProblem,
    pub scales: Scales,
    pub pass1: bool,
}

pub struct Composed {
    pub center: Point,
    pub dx: Vec<Poly>,
    pub dy: Vec<Poly>,
    pub dxi: Vec<Poly>,
    pub deta: Vec<Poly>,
}

impl Composer<'_> {
    /// Fiber arguments as (centre, deltas) for a given ω polynomial.
    pub fn arguments(&self, t: f64, x0: &[f64], y0: &[f64], om: &Poly, eta_base: &[f64]) -> Result<Composed, SymbolError> {
        let m = self.model;
        let (nx, ny) = (m.nx, m.ny);
        let b = om.basis.clone();
        let lam_k = self.scales.lambda.powf(self.scales.kinv);
        let dx: Vec<Poly> = (0..nx).map(|i| Poly::var(&b, i)).collect();
        let dy: Vec<Poly> = (0..ny).map(|a| Poly::var(&b, nx + a)).collect();
        let mut xi_c = vec![0.0; nx];
        let mut dxi = Vec::with_capacity(nx);
        for i in 0..nx {
            let mut p = om.deriv(i);
            xi_c[i] = p.c[0].re;
            p.c[0] = C64::default();
            dxi.push(p);
        }
        let mut eta_c = eta_base.to_vec();
        let mut deta = Vec::with_capacity(ny);
        for a in 0..ny {
            if self.pass1 {
                deta.push(Poly::zero(&b));
                continue;
            }
            let mut p = om.deriv(nx + a).scale(C64::new(lam_k, 0.0));
            eta_c[a] = p.c[0].re;
            p.c[0] = C64::default();
            deta.push(p);
        }
        if let (Some(cs), false) = (&m.c_coupling, self.pass1) {
            let cpt = Point::new(t, x0, y0, &xi_c, &eta_c);
            let zero: Vec<Poly> = (0..nx).map(|_| Poly::zero(&b)).collect();
            let zeroy: Vec<Poly> = (0..ny).map(|_| Poly::zero(&b)).collect();
            for a in 0..ny {
                let mut c = cs[a].compose(&cpt, &dx, &dy, &zero, &zeroy)?;
                eta_c[a] += c.c[0].re;
                // an imaginary constant shift is not representable at a real centre
                let imc = c.c[0].im;
                c.c[0] = C64::new(0.0, imc);
                deta[a].add_assign(&c);
            }
        }
        Ok(Composed { center: Point::new(t, x0, y0, &xi_c, &eta_c), dx, dy, dxi, deta })
    }

    pub fn compose(&self, s: &SymbolFunction, a: &Composed) -> Result<Poly, SymbolError> {
        s.compose(&a.center, &a.dx, &a.dy, &a.dxi, &a.deta)
    }

    /// Φ: normalized leading symbol, subleading r and the η-Hessian term.
    pub fn phi(&self, a: &Composed, om: &Poly) -> Result<Poly, SymbolError> {
        let m = self.model;
        let mut phi = self.compose(&m.f, a)?;
        if self.pass1 || m.k.is_infinite() {
            return Ok(phi);
        }
        let sc = self.scales;
        if let Some(r) = &m.r {
            phi.add_scaled(&self.compose(r, a)?, C64::new(sc.lambda.powf(-sc.kinv), 0.0));
        }
        let fac = C64::new(0.0, -0.5 * sc.lambda.powf(2.0 * sc.kinv - 1.0));
        for i in 0..m.ny {
            let dyi = om.deriv(m.nx + i);
            for j in 0..m.ny {
                let mut o = Orders::zero(m.nx, m.ny);
                o.eta[i] += 1;
                o.eta[j] += 1;
                let d2 = derived(&m.f, &o);
                if d2.is_identically_zero() {
                    continue;
                }
                let h = dyi.deriv(m.nx + j);
                phi.add_assign(&self.compose(&d2, a)?.mul(&h).scale(fac));
            }
        }
        Ok(phi)
    }
}

/// Symbol of a partial derivative: exact for polynomial symbols.
pub fn derived(s: &SymbolFunction, o: &Orders) -> SymbolFunction {
    use crate::symbols::{Backend, PolyTerm, TTag};
    match &s.backend {
        Backend::Poly(terms) => {
            let mut out = Vec::new();
            for t in terms {
                let mut c = t.coeff;
                let mut nt = t.clone();
                let groups: [(&Vec<u32>, &mut Vec<u32>); 4] =
                    [(&o.x, &mut nt.x), (&o.y, &mut nt.y), (&o.xi, &mut nt.xi), (&o.eta, &mut nt.eta)];
                let mut dead = false;
                for (d, e) in groups {
                    for i in 0..d.len() {
                        if d[i] > e[i] {
                            dead = true;
                            break;
                        }
                        let f: f64 = ((e[i] - d[i] + 1)..=e[i]).map(|j| j as f64).product();
                        c *= f;
                        e[i] -= d[i];
                    }
                }
                if dead {
                    continue;
                }
                if o.t > 0 {
                    // only polynomial t-factors are differentiated symbolically
                    match t.t {
                        TTag::Pow(m) if o.t <= m => {
                            let f: f64 = ((m - o.t + 1)..=m).map(|j| j as f64).product();
                            c *= f;
                            nt.t = TTag::Pow(m - o.t);
                        }
                        TTag::Pow(_) => continue,
                        _ => return closure_derived(s, o),
                    }
                }
                out.push(PolyTerm { coeff: c, ..nt });
            }
            SymbolFunction { d_max: s.d_max.saturating_sub(o.total()), ..SymbolFunction::poly(s.nx, s.ny, out) }
        }
        Backend::Closure(_) => closure_derived(s, o),
    }
}

fn closure_derived(s: &SymbolFunction, o: &Orders) -> SymbolFunction {
    let base = s.clone();
    let o = o.clone();
    let d_max = s.d_max.saturating_sub(o.total());
    SymbolFunction::closure(s.nx, s.ny, d_max, Arc::new(move |p| base.partial(&o, p).unwrap_or(C64::new(f64::NAN, 0.0))))
}

pub struct Rhs<'a> {
    pub model: &'a ModelProblem,
    pub layout: &'a Layout,
    pub scales: Scales,
    pub pass1: bool,
}

impl Rhs<'_> {
    fn at(&self) -> PhaseAtT<'_> {
        PhaseAtT { layout: self.layout, scales: self.scales, eta_base: &self.model.eta0, pass1: self.pass1 }
    }

    pub fn eval(&self, t: f64, v: &[C64]) -> Result<Vec<C64>, EikonalError> {
        let l = self.layout;
        let (nx, ny) = (l.nx, l.ny);
        let m = self.model;
        let sc = self.scales;
        let b = l.basis.clone();
        let pt = self.at();
        let om = pt.omega(v, &b);
        let x0: Vec<f64> = (0..nx).map(|i| v[l.x0() + i].re).collect();
        let y0: Vec<f64> = (0..ny).map(|a| v[l.y0() + a].re).collect();
        let xi0: Vec<f64> = (0..nx).map(|i| v[l.xi0() + i].re).collect();
        let comp = Composer { model: m, scales: sc, pass1: self.pass1 };
        let args = comp.arguments(t, &x0, &y0, &om, &m.eta0)?;
        let phi = comp.phi(&args, &om)?;
        let dxs: Vec<Poly> = (0..nx).map(|i| om.deriv(i)).collect();
        let dys: Vec<Poly> = (0..ny).map(|a| om.deriv(nx + a)).collect();

        let lin = |v: usize| -> C64 {
            let mut e = vec![0u8; nx + ny];
            e[v] = 1;
            phi.coeff(&e)
        };
        let st = PhaseState { layout: l.clone(), v: v.to_vec() };
        let w20 = st.w20();
        let w20i = im(&w20);
        let e20 = min_eig(&w20i);
        if e20 < EIG_FLOOR {
            return Err(EikonalError::SingularHessian { t, eig: e20 });
        }
        let mut out = vec![C64::default(); l.len()];
        let (xdot, ydot);
        if self.pass1 {
            let rhs = DVector::from_fn(nx, |i, _| lin(i).im);
            let sol = w20i.clone().lu().solve(&rhs).ok_or(EikonalError::SingularHessian { t, eig: e20 })?;
            xdot = sol.iter().cloned().collect::<Vec<f64>>();
            ydot = vec![0.0; ny];
        } else {
            let w11 = st.w11();
            let w02 = st.w02();
            let w02i = im(&w02);
            let e02 = min_eig(&w02i);
            if e02 < EIG_FLOOR {
                return Err(EikonalError::SingularHessian { t, eig: e02 });
            }
            let n = nx + ny;
            let mut a = DMatrix::<f64>::zeros(n, n);
            let w11i = im(&w11);
            for i in 0..nx {
                for j in 0..nx {
                    a[(i, j)] = w20i[(i, j)];
                }
                for q in 0..ny {
                    a[(i, nx + q)] = sc.s_y * w11i[(i, q)];
                    a[(nx + q, i)] = w11i[(i, q)];
                }
            }
            for p in 0..ny {
                for q in 0..ny {
                    a[(nx + p, nx + q)] = w02i[(p, q)];
                }
            }
            let rhs = DVector::from_fn(n, |i, _| if i < nx { lin(i).im } else { lin(i).im / sc.s_y });
            let sol = a.lu().solve(&rhs).ok_or(EikonalError::SingularHessian { t, eig: e02.min(e20) })?;
            xdot = sol.iter().take(nx).cloned().collect();
            ydot = sol.iter().skip(nx).cloned().collect();
            let w11r = re(&w11);
            let w02r = re(&w02);
            for p in 0..ny {
                let mut z = -lin(nx + p).re / sc.s_y;
                for j in 0..nx {
                    z += w11r[(j, p)] * xdot[j];
                }
                for q in 0..ny {
                    z += w02r[(p, q)] * ydot[q];
                }
                out[l.zeta() + p] = C64::new(z, 0.0);
                out[l.y0() + p] = C64::new(ydot[p], 0.0);
            }
        }
        let w20r = re(&w20);
        let w11r = re(&st.w11());
        for i in 0..nx {
            let mut z = -lin(i).re;
            for j in 0..nx {
                z += w20r[(i, j)] * xdot[j];
            }
            for q in 0..ny {
                z += sc.s_y * w11r[(i, q)] * ydot[q];
            }
            out[l.xi0() + i] = C64::new(z, 0.0);
            out[l.x0() + i] = C64::new(xdot[i], 0.0);
        }
        let frozen = m.f.eval(&Point::new(t, &x0, &y0, &xi0, &m.eta0))?;
        let mut w0dot = -frozen;
        for i in 0..nx {
            w0dot += xi0[i] * xdot[i];
        }
        out[0] = w0dot;
        for (p, &mi) in l.mons.iter().enumerate() {
            if self.pass1 && l.has_y(mi) {
                continue;
            }
            let mut z = -phi.c[mi];
            for i in 0..nx {
                z += dxs[i].c[mi] * xdot[i];
            }
            for a in 0..ny {
                z += dys[a].c[mi] * ydot[a];
            }
            out[l.d0() + p] = z * (factorial(l.basis.exp(mi)) / pt.weight(mi));
        }
        Ok(out)
    }
}

pub fn rhs_eta_nonzero(state: &PhaseState, t: f64, model: &ModelProblem, scales: Scales) -> Result<Vec<C64>, EikonalError> {
    check_budget(model, state.layout.k_trunc)?;
    Rhs { model, layout: &state.layout, scales, pass1: false }.eval(t, &state.v)
}

/// Same assembly; with η0 = 0 the ζ slot carries η0(t) at fiber scale λ^{ρ−1}.
pub fn rhs_eta_zero(state: &PhaseState, t: f64, model: &ModelProblem, scales: Scales) -> Result<Vec<C64>, EikonalError> {
    check_budget(model, state.layout.k_trunc)?;
    Rhs { model, layout: &state.layout, scales, pass1: false }.eval(t, &state.v)
}

fn check_budget(model: &ModelProblem, k: usize) -> Result<(), EikonalError> {
    if model.f.d_max < k + 2 {
        return Err(EikonalError::BudgetExceeded { need: k + 2, budget: model.f.d_max });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum W2Branch {
    SolveReal,
    LargeImaginary,
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct W2Choice {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
    pub branch: W2Branch,
}

pub fn choose_initial_w2(model: &ModelProblem, t_cross: f64, order: VanishingOrder) -> Result<W2Choice, EikonalError> {
    let nx = model.nx;
    if order != VanishingOrder::Finite(1) {
        return Err(EikonalError::HigherOrderCrossing {
            order,
            fallback: W2Choice { re: DMatrix::zeros(nx, nx), im: DMatrix::identity(nx, nx), branch: W2Branch::Fallback },
        });
    }
    let p = Point::new(t_cross, &model.base.x0, &model.base.y0, &model.base.xi0, &model.eta0);
    let mut a = DVector::zeros(nx);
    let mut bv = DVector::zeros(nx);
    for i in 0..nx {
        let mut o = Orders::zero(nx, model.ny);
        o.x[i] = 1;
        a[i] = model.f.partial(&o, &p)?.im;
        let mut o = Orders::zero(nx, model.ny);
        o.xi[i] = 1;
        bv[i] = model.f.partial(&o, &p)?.im;
    }
    let nb = bv.norm_squared();
    if nb.sqrt() > 1e-12 {
        // symmetric W with W·b = −a
        let ab = a.dot(&bv);
        let re = -(&a * bv.transpose() + &bv * a.transpose()) / nb + (&bv * bv.transpose()) * (ab / (nb * nb));
        Ok(W2Choice { re, im: DMatrix::identity(nx, nx) * 0.1, branch: W2Branch::SolveReal })
    } else {
        Ok(W2Choice { re: DMatrix::zeros(nx, nx), im: DMatrix::identity(nx, nx) * 10.0, branch: W2Branch::LargeImaginary })
    }
}

#[derive(Clone, Debug)]
pub struct PhaseOptions {
    pub k_trunc: usize,
    pub rho: f64,
    pub lambda: f64,
    /// RK4 steps over the whole interval in pass 1, and over the usable interval in pass 2.
    pub steps_pass1: usize,
    pub steps_pass2: usize,
    pub two_pass: bool,
    pub im_w02_init: f64,
    pub gate: GateOptions,
    /// χ outer radius in units of Im w0·λ^{1−ρ}; ends of the usable interval must lie beyond 2·R_t.
    pub r_t: f64,
}

impl PhaseOptions {
    pub fn new(lambda: f64) -> PhaseOptions {
        PhaseOptions {
            k_trunc: 4,
            rho: 0.1,
            lambda,
            steps_pass1: 2000,
            steps_pass2: 1200,
            two_pass: true,
            im_w02_init: 1.0,
            gate: GateOptions::default(),
            r_t: 12.0,
        }
    }
}

pub fn initial_state(model: &ModelProblem, w2: &W2Choice, k_trunc: usize, im_w02: f64) -> PhaseState {
    let l = Layout::new(model.nx, model.ny, k_trunc);
    let mut v = vec![C64::default(); l.len()];
    for i in 0..model.nx {
        v[l.x0() + i] = C64::new(model.base.x0[i], 0.0);
        v[l.xi0() + i] = C64::new(model.base.xi0[i], 0.0);
    }
    for a in 0..model.ny {
        v[l.y0() + a] = C64::new(model.base.y0[a], 0.0);
    }
    for i in 0..model.nx {
        for j in 0..model.nx {
            if let Some(s) = l.slot(&l.unit(i, j)) {
                v[s] = C64::new(w2.re[(i, j)], w2.im[(i, j)]);
            }
        }
    }
    for a in 0..model.ny {
        if let Some(s) = l.slot(&l.unit(model.nx + a, model.nx + a)) {
            v[s] = C64::new(0.0, im_w02);
        }
    }
    PhaseState { layout: l, v }
}

#[derive(Clone)]
pub struct PhaseTrajectory {
    pub layout: Layout,
    pub scales: Scales,
    pub eta_base: Vec<f64>,
    pub eta_zero: bool,
    pub samples: Samples,
    pub pass1: Samples,
    pub t0_anchor: f64,
    pub im_w0_min: f64,
    pub usable: (f64, f64),
    pub gate: GateResult,
}

impl std::fmt::Debug for PhaseTrajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PhaseTrajectory(n = {}, usable = {:?})", self.samples.t.len(), self.usable)
    }
}

fn merge(left: Samples, right: Samples) -> Samples {
    // left runs backwards from the shared start point
    let mut t: Vec<f64> = left.t.iter().rev().cloned().collect();
    let mut y: Vec<Vec<C64>> = left.y.iter().rev().cloned().collect();
    let mut dy: Vec<Vec<C64>> = left.dy.iter().rev().cloned().collect();
    t.extend(right.t.iter().skip(1));
    y.extend(right.y.iter().skip(1).cloned());
    dy.extend(right.dy.iter().skip(1).cloned());
    Samples { t, y, dy }
}

fn hess_ok(l: &Layout, v: &[C64], pass1: bool) -> bool {
    let st = PhaseState { layout: l.clone(), v: v.to_vec() };
    let ok20 = min_eig(&im(&st.w20())) >= EIG_FLOOR;
    ok20 && (pass1 || min_eig(&im(&st.w02())) >= EIG_FLOOR)
}

fn sweep(
    rhs: &Rhs,
    t_start: f64,
    v0: Vec<C64>,
    lo: f64,
    hi: f64,
    h: f64,
) -> Result<(Samples, bool), EikonalError> {
    let l = rhs.layout;
    let pass1 = rhs.pass1;
    let n_r = (((hi - t_start) / h).ceil() as usize).max(1);
    let n_l = (((t_start - lo) / h).ceil() as usize).max(1);
    let f = |t: f64, v: &[C64]| rhs.eval(t, v);
    let (right, ok_r) = if hi > t_start {
        ode::rk4(f, |_, v| hess_ok(l, v, pass1), t_start, v0.clone(), hi, n_r)?
    } else {
        (Samples { t: vec![t_start], y: vec![v0.clone()], dy: vec![rhs.eval(t_start, &v0)?] }, true)
    };
    let f = |t: f64, v: &[C64]| rhs.eval(t, v);
    let (left, ok_l) = if lo < t_start {
        ode::rk4(f, |_, v| hess_ok(l, v, pass1), t_start, v0.clone(), lo, n_l)?
    } else {
        (Samples { t: vec![t_start], y: vec![v0.clone()], dy: vec![rhs.eval(t_start, &v0)?] }, true)
    };
    Ok((merge(left, right), ok_l && ok_r))
}

fn anchor_index(s: &Samples) -> usize {
    let mut best = 0;
    for i in 1..s.t.len() {
        if s.y[i][0].im < s.y[best][0].im {
            best = i;
        }
    }
    best
}

fn shift_im_w0(s: &mut Samples, by: f64) {
    for y in s.y.iter_mut() {
        y[0].im -= by;
    }
}

pub fn integrate_phase(model: &ModelProblem, initial: &PhaseState, opt: &PhaseOptions) -> Result<PhaseTrajectory, EikonalError> {
    check_budget(model, opt.k_trunc)?;
    let l = initial.layout.clone();
    let scales = Scales::new(opt.lambda, opt.rho, model.k);
    let (a, b) = model.interval;
    let t_start = model.base.t_start;

    let rhs1 = Rhs { model, layout: &l, scales, pass1: true };
    let mut v1 = initial.v.clone();
    for (p, &m) in l.mons.iter().enumerate() {
        if l.has_y(m) {
            v1[l.d0() + p] = C64::default();
        }
    }
    let h1 = (b - a) / opt.steps_pass1 as f64;
    let (mut p1, _) = sweep(&rhs1, t_start, v1, a, b, h1)?;
    let i0 = anchor_index(&p1);
    let shift = p1.y[i0][0].im;
    shift_im_w0(&mut p1, shift);
    let t0 = p1.t[i0];

    let x0s: Vec<Vec<f64>> = p1.y.iter().map(|v| (0..l.nx).map(|i| v[l.x0() + i].re).collect()).collect();
    let xi0s: Vec<Vec<f64>> = p1.y.iter().map(|v| (0..l.nx).map(|i| v[l.xi0() + i].re).collect()).collect();
    let imw: Vec<f64> = p1.y.iter().map(|v| v[0].im).collect();
    let gate = lemclaim_gate(
        &GateInput { t: &p1.t, x0: &x0s, xi0: &xi0s, im_w0: &imw, anchor_index: i0 },
        model,
        opt.lambda,
        &opt.gate,
    )?;
    let usable = gate.usable;
    if usable.1 - usable.0 <= 0.0 {
        return Err(EikonalError::GateEmpty("degenerate interval".into()));
    }
    let im_at = |t: f64| ode::hermite(&p1, t).map(|(v, _)| v[0].im).unwrap_or(0.0);
    for te in [usable.0, usable.1] {
        let s = im_at(te) * opt.lambda.powf(1.0 - opt.rho) / opt.r_t;
        // a truncated cutoff is harmless once |u| there is below the leakage floor
        let negligible = (-opt.lambda * im_at(te)).exp() < LEAKAGE_FLOOR;
        if s < 2.0 && !negligible {
            return Err(EikonalError::GateEmpty(format!(
                "cutoff still active at t = {te:.6} (Im w0 lambda^(1-rho) / R_t = {s:.4})"
            )));
        }
    }

    let mut samples = if opt.two_pass {
        let rhs2 = Rhs { model, layout: &l, scales, pass1: false };
        let mut v2 = p1.y[i0].clone();
        for a_ in 0..l.ny {
            v2[l.y0() + a_] = C64::new(model.base.y0[a_], 0.0);
            v2[l.zeta() + a_] = C64::default();
        }
        for (p, &m) in l.mons.iter().enumerate() {
            if l.has_y(m) {
                v2[l.d0() + p] = initial.v[l.d0() + p];
            }
        }
        let h2 = (usable.1 - usable.0) / opt.steps_pass2 as f64;
        let (s2, ok) = sweep(&rhs2, t0, v2, usable.0, usable.1, h2)?;
        if !ok {
            let tl = if s2.t.first().copied().unwrap_or(t0) > usable.0 + h2 { s2.t[0] } else { *s2.t.last().unwrap() };
            return Err(EikonalError::HessianLoss { t: tl });
        }
        s2
    } else {
        let lo = p1.t.partition_point(|&t| t < usable.0);
        let hi = p1.t.partition_point(|&t| t <= usable.1);
        Samples { t: p1.t[lo..hi].to_vec(), y: p1.y[lo..hi].to_vec(), dy: p1.dy[lo..hi].to_vec() }
    };
    let j0 = anchor_index(&samples);
    let m2 = samples.y[j0][0].im;
    shift_im_w0(&mut samples, m2);
    let im_w0_min = samples.y.iter().map(|v| v[0].im).fold(f64::INFINITY, f64::min);
    Ok(PhaseTrajectory {
        layout: l,
        scales,
        eta_base: model.eta0.clone(),
        eta_zero: model.eta0.iter().all(|&e| e == 0.0),
        samples,
        pass1: p1,
        t0_anchor: t0,
        im_w0_min,
        usable,
        gate,
    })
}

#[derive(Clone, Debug)]
pub struct PhaseEval {
    pub omega: C64,
    pub dt: C64,
    pub dx: Vec<C64>,
    pub dy: Vec<C64>,
    pub dyy: Vec<C64>,
}

/// Polynomial data of the phase at one time: ω(Z), d/dt at fixed (x, y), and the centre.
pub struct PhaseSlice {
    pub omega: Poly,
    pub omega_t: Poly,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub x0_dot: Vec<f64>,
    pub y0_dot: Vec<f64>,
    pub state: Vec<C64>,
    pub dstate: Vec<C64>,
}

impl PhaseTrajectory {
    pub fn state_at(&self, t: f64) -> Result<(Vec<C64>, Vec<C64>), EikonalError> {
        ode::hermite(&self.samples, t).ok_or(EikonalError::OutOfInterval(t))
    }

    pub fn state(&self, i: usize) -> PhaseState {
        PhaseState { layout: self.layout.clone(), v: self.samples.y[i].clone() }
    }

    /// ω and ∂_tω|_{x,y} as polynomials in (X, Y) over basis `b` (degree ≥ K).
    pub fn slice(&self, t: f64, b: &Arc<Basis>) -> Result<PhaseSlice, EikonalError> {
        let (v, dv) = self.state_at(t)?;
        let l = &self.layout;
        let pt = PhaseAtT { layout: l, scales: self.scales, eta_base: &self.eta_base, pass1: false };
        let om = pt.omega(&v, b);
        let omd = pt.omega_dot(&dv, b);
        let x0: Vec<f64> = (0..l.nx).map(|i| v[l.x0() + i].re).collect();
        let y0: Vec<f64> = (0..l.ny).map(|a| v[l.y0() + a].re).collect();
        let x0_dot: Vec<f64> = (0..l.nx).map(|i| dv[l.x0() + i].re).collect();
        let y0_dot: Vec<f64> = (0..l.ny).map(|a| dv[l.y0() + a].re).collect();
        let mut omega_t = omd;
        for i in 0..l.nx {
            omega_t.add_scaled(&om.deriv(i), C64::new(-x0_dot[i], 0.0));
        }
        for a in 0..l.ny {
            omega_t.add_scaled(&om.deriv(l.nx + a), C64::new(-y0_dot[a], 0.0));
        }
        Ok(PhaseSlice { omega: om, omega_t, x0, y0, x0_dot, y0_dot, state: v, dstate: dv })
    }

    pub fn im_w0(&self, t: f64) -> Option<f64> {
        ode::hermite(&self.samples, t).map(|(v, _)| v[0].im)
    }
}

pub fn eval_phase(traj: &PhaseTrajectory, t: f64, x: &[f64], y: &[f64]) -> Result<PhaseEval, EikonalError> {
    let l = &traj.layout;
    let s = traj.slice(t, &l.basis)?;
    let mut z: Vec<f64> = x.iter().zip(&s.x0).map(|(a, b)| a - b).collect();
    z.extend(y.iter().zip(&s.y0).map(|(a, b)| a - b));
    let omega = s.omega.eval(&z);
    let dt = s.omega_t.eval(&z);
    let dx = (0..l.nx).map(|i| s.omega.deriv(i).eval(&z)).collect();
    let dy = (0..l.ny).map(|a| s.omega.deriv(l.nx + a).eval(&z)).collect();
    let dyy = (0..l.ny * l.ny)
        .map(|q| s.omega.deriv(l.nx + q / l.ny).deriv(l.nx + q % l.ny).eval(&z))
        .collect();
    Ok(PhaseEval { omega, dt, dx, dy, dyy })
}

/// Evaluate a symbol at complex fiber arguments: exact for polynomials,
/// fourth-order Taylor at the real parts otherwise.
pub fn eval_complex(s: &SymbolFunction, t: f64, x: &[f64], y: &[f64], xi: &[C64], eta: &[C64]) -> Result<C64, SymbolError> {
    use crate::symbols::Backend;
    match &s.backend {
        Backend::Poly(terms) => {
            let mut acc = C64::default();
            for term in terms {
                let mut v = term.coeff * term.t.eval(t);
                for i in 0..x.len() {
                    v *= x[i].powi(term.x[i] as i32);
                    v *= xi[i].powu(term.xi[i]);
                }
                for a in 0..y.len() {
                    v *= y[a].powi(term.y[a] as i32);
                    v *= eta[a].powu(term.eta[a]);
                }
                acc += v;
            }
            Ok(acc)
        }
        Backend::Closure(_) => {
            let nv = xi.len() + eta.len();
            let b = basis(nv, 4);
            let mut dz: Vec<f64> = Vec::new();
            let im_parts: Vec<f64> = xi.iter().chain(eta).map(|z| z.im).collect();
            dz.extend(im_parts.iter());
            let c = Point::new(t, x, y, &xi.iter().map(|z| z.re).collect::<Vec<_>>(), &eta.iter().map(|z| z.re).collect::<Vec<_>>());
            let mut acc = C64::default();
            for i in 0..b.len() {
                let e = b.exp(i);
                let mut o = Orders::zero(x.len(), y.len());
                for (k, &p) in e.iter().enumerate() {
                    if k < xi.len() {
                        o.xi[k] = p as u32;
                    } else {
                        o.eta[k - xi.len()] = p as u32;
                    }
                }
                let d = s.partial(&o, &c)?;
                let mut m = C64::new(1.0, 0.0);
                for (k, &p) in e.iter().enumerate() {
                    m *= C64::new(0.0, dz[k]).powu(p as u32);
                }
                acc += d * m / factorial(e);
            }
            Ok(acc)
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub sup_residual: f64,
    pub table: Vec<(f64, Vec<f64>, Vec<f64>, f64)>,
}

/// λ·(∂_tω + f(∂_xω, λ^{1/k}∂_yω) + λ^{−1/k} r − (i/2)λ^{2/k−1}∂²_η f·∂²_yω) at each probe.
pub fn eikonal_residual(
    traj: &PhaseTrajectory,
    model: &ModelProblem,
    probes: &[(f64, Vec<f64>, Vec<f64>)],
) -> Result<ResidualReport, EikonalError> {
    let sc = traj.scales;
    let lam_k = sc.lambda.powf(sc.kinv);
    let mut table = Vec::with_capacity(probes.len());
    let mut sup = 0.0f64;
    let mut second = Vec::new();
    if !model.k.is_infinite() {
        for i in 0..model.ny {
            for j in 0..model.ny {
                let mut o = Orders::zero(model.nx, model.ny);
                o.eta[i] += 1;
                o.eta[j] += 1;
                second.push((i, j, derived(&model.f, &o)));
            }
        }
    }
    for (t, x, y) in probes {
        let pe = eval_phase(traj, *t, x, y)?;
        let mut eta: Vec<C64> = pe.dy.iter().map(|z| z * lam_k).collect();
        if let Some(cs) = &model.c_coupling {
            for a in 0..model.ny {
                eta[a] += cs[a].eval(&Point::new(*t, x, y, &vec![0.0; model.nx], &vec![0.0; model.ny]))?;
            }
        }
        let mut e = pe.dt + eval_complex(&model.f, *t, x, y, &pe.dx, &eta)?;
        if !model.k.is_infinite() {
            if let Some(r) = &model.r {
                e += eval_complex(r, *t, x, y, &pe.dx, &eta)? * sc.lambda.powf(-sc.kinv);
            }
            let fac = C64::new(0.0, -0.5 * sc.lambda.powf(2.0 * sc.kinv - 1.0));
            for (i, j, d2) in &second {
                e += eval_complex(d2, *t, x, y, &pe.dx, &eta)? * pe.dyy[i * model.ny + j] * fac;
            }
        }
        let r = (e * sc.lambda).norm();
        sup = sup.max(r);
        table.push((*t, x.clone(), y.clone(), r));
    }
    Ok(ResidualReport { sup_residual: sup, table })
}

/// Random probes in the cutoff tube: t where the χ-cutoff is active,
/// |Δx| ≤ λ^{ρ−e_x}, |Δy| ≤ λ^{−ρ/4}.
pub fn tube_probes(traj: &PhaseTrajectory, n: usize, seed: u64, r_t: f64, x_exp: f64) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let sc = traj.scales;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = &traj.samples.t;
    let lim = 2.0 * r_t * sc.lambda.powf(sc.rho - 1.0);
    let inside: Vec<f64> = ts.iter().cloned().filter(|&t| traj.im_w0(t).map(|v| v <= lim).unwrap_or(false)).collect();
    let (lo, hi) = (inside.first().copied().unwrap_or(ts[0]), inside.last().copied().unwrap_or(*ts.last().unwrap()));
    let rx = sc.lambda.powf(sc.rho - x_exp);
    let ry = sc.lambda.powf(-sc.rho / 4.0);
    (0..n)
        .map(|_| {
            let t = rng.gen_range(lo..=hi);
            let (v, _) = traj.state_at(t).expect("probe inside trajectory");
            let l = &traj.layout;
            let x = (0..l.nx).map(|i| v[l.x0() + i].re + rng.gen_range(-rx..=rx)).collect();
            let y = (0..l.ny).map(|a| v[l.y0() + a].re + rng.gen_range(-ry..=ry)).collect();
            (t, x, y)
        })
        .collect()
}
