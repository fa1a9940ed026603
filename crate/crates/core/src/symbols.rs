//! Prepared symbols f(t,x,y,ξ,η), model operators and the jet constructions.

use crate::poly::{Basis, Poly};
use num_complex::Complex64 as C64;
use serde_json::Value;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("derivative order {order} exceeds budget {budget}")]
    OrderBudgetExceeded { order: usize, budget: usize },
    #[error("symbol evaluation produced a non-finite value")]
    NonFinite,
    #[error("jet of order < k does not vanish: |d^{gamma:?} p| = {value:e}")]
    OrderMismatch { gamma: Vec<u32>, value: f64 },
    #[error("blowup requires xi != 0")]
    ZeroXi,
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("bad model parameters: {0}")]
    BadParams(String),
}

/// Vanishing order at Σ₂; `Infinite` makes every λ^{1/k} equal to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    Finite(u32),
    Infinite,
}

impl Order {
    pub fn inv(&self) -> f64 {
        match self {
            Order::Finite(k) => 1.0 / *k as f64,
            Order::Infinite => 0.0,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Order::Infinite)
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Order::Finite(k) => write!(f, "{k}"),
            Order::Infinite => write!(f, "inf"),
        }
    }
}

/// Closed-form t-factor of a polynomial term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TTag {
    Pow(u32),
    Sin(f64),
    Cos(f64),
    Exp(f64),
}

impl TTag {
    pub fn eval(&self, t: f64) -> f64 {
        self.deriv(t, 0)
    }

    /// n-th derivative in t.
    pub fn deriv(&self, t: f64, n: u32) -> f64 {
        match *self {
            TTag::Pow(m) => {
                if n > m {
                    return 0.0;
                }
                let f: f64 = ((m - n + 1)..=m).map(|j| j as f64).product();
                f * t.powi((m - n) as i32)
            }
            TTag::Sin(s) => {
                let a = s * t;
                let v = match n % 4 {
                    0 => a.sin(),
                    1 => a.cos(),
                    2 => -a.sin(),
                    _ => -a.cos(),
                };
                s.powi(n as i32) * v
            }
            TTag::Cos(s) => {
                let a = s * t;
                let v = match n % 4 {
                    0 => a.cos(),
                    1 => -a.sin(),
                    2 => -a.cos(),
                    _ => a.sin(),
                };
                s.powi(n as i32) * v
            }
            TTag::Exp(s) => s.powi(n as i32) * (s * t).exp(),
        }
    }

    fn parse(v: &Value) -> Result<TTag, SymbolError> {
        let bad = || SymbolError::BadParams(format!("bad t tag {v}"));
        if let Some(m) = v.as_u64() {
            return Ok(TTag::Pow(m as u32));
        }
        let s = v.as_str().ok_or_else(bad)?;
        let (head, arg) = s.split_once(':').ok_or_else(bad)?;
        match head {
            "poly" | "t^" | "pow" => Ok(TTag::Pow(arg.trim().parse().map_err(|_| bad())?)),
            "sin" | "cos" | "exp" => {
                let a: f64 = arg.trim().parse().map_err(|_| bad())?;
                Ok(match head {
                    "sin" => TTag::Sin(a),
                    "cos" => TTag::Cos(a),
                    _ => TTag::Exp(a),
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Point {
    pub fn new(t: f64, x: &[f64], y: &[f64], xi: &[f64], eta: &[f64]) -> Point {
        Point { t, x: x.to_vec(), y: y.to_vec(), xi: xi.to_vec(), eta: eta.to_vec() }
    }
}

/// Derivative orders (t, x, y, ξ, η).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Orders {
    pub t: u32,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub xi: Vec<u32>,
    pub eta: Vec<u32>,
}

impl Orders {
    pub fn zero(nx: usize, ny: usize) -> Orders {
        Orders { t: 0, x: vec![0; nx], y: vec![0; ny], xi: vec![0; nx], eta: vec![0; ny] }
    }

    pub fn eta(nx: usize, gamma: &[u32]) -> Orders {
        let mut o = Orders::zero(nx, gamma.len());
        o.eta = gamma.to_vec();
        o
    }

    pub fn total(&self) -> usize {
        let s = |v: &[u32]| v.iter().map(|&k| k as usize).sum::<usize>();
        self.t as usize + s(&self.x) + s(&self.y) + s(&self.xi) + s(&self.eta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyTerm {
    pub coeff: C64,
    pub t: TTag,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub xi: Vec<u32>,
    pub eta: Vec<u32>,
}

fn mono(v: &[f64], e: &[u32]) -> f64 {
    v.iter().zip(e).map(|(&a, &k)| a.powi(k as i32)).product()
}

fn mono_deriv(v: &[f64], e: &[u32], d: &[u32]) -> f64 {
    let mut r = 1.0;
    for i in 0..e.len() {
        if d[i] > e[i] {
            return 0.0;
        }
        let f: f64 = ((e[i] - d[i] + 1)..=e[i]).map(|j| j as f64).product();
        r *= f * v[i].powi((e[i] - d[i]) as i32);
    }
    r
}

impl PolyTerm {
    fn eval(&self, p: &Point) -> C64 {
        self.coeff
            * (self.t.eval(p.t)
                * mono(&p.x, &self.x)
                * mono(&p.y, &self.y)
                * mono(&p.xi, &self.xi)
                * mono(&p.eta, &self.eta))
    }

    fn partial(&self, o: &Orders, p: &Point) -> C64 {
        self.coeff
            * (self.t.deriv(p.t, o.t)
                * mono_deriv(&p.x, &self.x, &o.x)
                * mono_deriv(&p.y, &self.y, &o.y)
                * mono_deriv(&p.xi, &self.xi, &o.xi)
                * mono_deriv(&p.eta, &self.eta, &o.eta))
    }
}

pub type SymbolClosure = Arc<dyn Fn(&Point) -> C64 + Send + Sync>;

#[derive(Clone)]
pub enum Backend {
    Poly(Vec<PolyTerm>),
    Closure(SymbolClosure),
}

#[derive(Clone)]
pub struct SymbolFunction {
    pub nx: usize,
    pub ny: usize,
    pub d_max: usize,
    pub backend: Backend,
}

impl fmt::Debug for SymbolFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.backend {
            Backend::Poly(t) => write!(f, "PolySymbol({}x{}, {} terms)", self.nx, self.ny, t.len()),
            Backend::Closure(_) => write!(f, "ClosureSymbol({}x{})", self.nx, self.ny),
        }
    }
}

/// Base step for finite differences; scaled by max(1, |coordinate|).
pub const FD_STEP: f64 = 6e-6;
pub const DEFAULT_D_MAX: usize = 16;

impl SymbolFunction {
    pub fn poly(nx: usize, ny: usize, terms: Vec<PolyTerm>) -> SymbolFunction {
        SymbolFunction { nx, ny, d_max: DEFAULT_D_MAX, backend: Backend::Poly(terms) }
    }

    pub fn closure(nx: usize, ny: usize, d_max: usize, f: SymbolClosure) -> SymbolFunction {
        SymbolFunction { nx, ny, d_max, backend: Backend::Closure(f) }
    }

    pub fn zero(nx: usize, ny: usize) -> SymbolFunction {
        SymbolFunction::poly(nx, ny, Vec::new())
    }

    /// Term c·T(t)·ξ^xi·η^eta with no x or y dependence.
    pub fn term(coeff: C64, t: TTag, xi: &[u32], eta: &[u32]) -> PolyTerm {
        PolyTerm {
            coeff,
            t,
            x: vec![0; xi.len()],
            y: vec![0; eta.len()],
            xi: xi.to_vec(),
            eta: eta.to_vec(),
        }
    }

    pub fn terms(&self) -> Option<&[PolyTerm]> {
        match &self.backend {
            Backend::Poly(t) => Some(t),
            Backend::Closure(_) => None,
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(&self.backend, Backend::Poly(t) if t.iter().all(|x| x.coeff == C64::default()))
    }

    pub fn eval(&self, p: &Point) -> Result<C64, SymbolError> {
        let v = match &self.backend {
            Backend::Poly(terms) => terms.iter().map(|t| t.eval(p)).sum(),
            Backend::Closure(f) => f(p),
        };
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(SymbolError::NonFinite)
        }
    }

    pub fn partial(&self, o: &Orders, p: &Point) -> Result<C64, SymbolError> {
        let order = o.total();
        if order > self.d_max {
            return Err(SymbolError::OrderBudgetExceeded { order, budget: self.d_max });
        }
        let v = match &self.backend {
            Backend::Poly(terms) => terms.iter().map(|t| t.partial(o, p)).sum(),
            Backend::Closure(f) => fd_partial(f.as_ref(), o, p),
        };
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(SymbolError::NonFinite)
        }
    }

    /// Coefficient-wise conjugate; flips the sign of Im f for real t-factors.
    pub fn conjugate(&self) -> SymbolFunction {
        match &self.backend {
            Backend::Poly(terms) => SymbolFunction {
                backend: Backend::Poly(
                    terms.iter().map(|t| PolyTerm { coeff: t.coeff.conj(), ..t.clone() }).collect(),
                ),
                ..self.clone()
            },
            Backend::Closure(f) => {
                let f = f.clone();
                SymbolFunction { backend: Backend::Closure(Arc::new(move |p| f(p).conj())), ..self.clone() }
            }
        }
    }

    pub fn scaled(&self, a: f64) -> SymbolFunction {
        match &self.backend {
            Backend::Poly(terms) => SymbolFunction {
                backend: Backend::Poly(
                    terms.iter().map(|t| PolyTerm { coeff: t.coeff * a, ..t.clone() }).collect(),
                ),
                ..self.clone()
            },
            Backend::Closure(f) => {
                let f = f.clone();
                SymbolFunction { backend: Backend::Closure(Arc::new(move |p| f(p) * a)), ..self.clone() }
            }
        }
    }

    /// Largest total (ξ,η) degree; closures report the derivative budget.
    pub fn fiber_degree(&self) -> usize {
        match &self.backend {
            Backend::Poly(terms) => terms
                .iter()
                .map(|t| t.xi.iter().chain(&t.eta).map(|&k| k as usize).sum::<usize>())
                .max()
                .unwrap_or(0),
            Backend::Closure(_) => self.d_max,
        }
    }

    /// Taylor composition f(t, x₀+dx, y₀+dy, ξ₀+dξ, η₀+dη) truncated to the
    /// basis of the deltas. Exact for polynomial symbols.
    pub fn compose(
        &self,
        center: &Point,
        dx: &[Poly],
        dy: &[Poly],
        dxi: &[Poly],
        deta: &[Poly],
    ) -> Result<Poly, SymbolError> {
        let b = dx.first().or(dy.first()).or(dxi.first()).or(deta.first()).map(|p| p.basis.clone());
        let b = b.expect("compose needs at least one delta");
        match &self.backend {
            Backend::Poly(terms) => {
                let mut cache = PowerCache::new(&b);
                let mut out = Poly::zero(&b);
                for term in terms {
                    let mut acc = Poly::constant(&b, term.coeff * term.t.eval(center.t));
                    let groups: [(&[f64], &[Poly], &[u32], usize); 4] = [
                        (&center.x, dx, &term.x, 0),
                        (&center.y, dy, &term.y, 1),
                        (&center.xi, dxi, &term.xi, 2),
                        (&center.eta, deta, &term.eta, 3),
                    ];
                    for (c0, d, e, g) in groups {
                        for (i, &k) in e.iter().enumerate() {
                            if k > 0 {
                                acc = acc.mul(cache.get(g, i, c0[i], &d[i], k));
                            }
                        }
                    }
                    out.add_assign(&acc);
                }
                if out.c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(SymbolError::NonFinite);
                }
                Ok(out)
            }
            Backend::Closure(_) => self.compose_taylor(center, dx, dy, dxi, deta, &b),
        }
    }

    fn compose_taylor(
        &self,
        center: &Point,
        dx: &[Poly],
        dy: &[Poly],
        dxi: &[Poly],
        deta: &[Poly],
        b: &Arc<Basis>,
    ) -> Result<Poly, SymbolError> {
        // deltas are assumed to have no constant term
        let deltas: Vec<&Poly> = dx.iter().chain(dy).chain(dxi).chain(deta).collect();
        let nv = deltas.len();
        let tb = crate::poly::basis(nv, b.degree);
        let mut out = Poly::zero(b);
        let mut pows: Vec<Vec<Poly>> = deltas
            .iter()
            .map(|d| vec![Poly::constant(b, C64::new(1.0, 0.0)), (*d).clone()])
            .collect();
        for i in 0..tb.len() {
            let e = tb.exp(i);
            if e.iter().zip(&deltas).any(|(&k, d)| k > 0 && d.is_zero()) {
                continue;
            }
            let nx = self.nx;
            let ny = self.ny;
            let take = |lo: usize, n: usize| e[lo..lo + n].iter().map(|&k| k as u32).collect::<Vec<_>>();
            let o = Orders { t: 0, x: take(0, nx), y: take(nx, ny), xi: take(nx + ny, nx), eta: take(2 * nx + ny, ny) };
            let d = self.partial(&o, center)?;
            if d == C64::default() {
                continue;
            }
            let mut term = Poly::constant(b, d / crate::poly::factorial(e));
            for (v, &k) in e.iter().enumerate() {
                while pows[v].len() <= k as usize {
                    let next = pows[v].last().unwrap().mul(deltas[v]);
                    pows[v].push(next);
                }
                if k > 0 {
                    term = term.mul(&pows[v][k as usize]);
                }
            }
            out.add_assign(&term);
        }
        Ok(out)
    }
}

struct PowerCache {
    b: Arc<Basis>,
    table: std::collections::HashMap<(usize, usize), Vec<Poly>>,
}

impl PowerCache {
    fn new(b: &Arc<Basis>) -> Self {
        PowerCache { b: b.clone(), table: Default::default() }
    }

    fn get(&mut self, g: usize, i: usize, c0: f64, d: &Poly, k: u32) -> &Poly {
        let b = self.b.clone();
        let v = self.table.entry((g, i)).or_insert_with(|| {
            let mut base = d.clone();
            base.c[0] += c0;
            vec![Poly::constant(&b, C64::new(1.0, 0.0)), base]
        });
        while v.len() <= k as usize {
            let next = v.last().unwrap().mul(&v[1]);
            v.push(next);
        }
        &v[k as usize]
    }
}

/// Central difference of order n with one Richardson level, applied one
/// variable at a time.
fn fd_partial(f: &(dyn Fn(&Point) -> C64 + Send + Sync), o: &Orders, p: &Point) -> C64 {
    fn slot(p: &mut Point, g: usize, i: usize) -> &mut f64 {
        match g {
            0 => &mut p.t,
            1 => &mut p.x[i],
            2 => &mut p.y[i],
            3 => &mut p.xi[i],
            _ => &mut p.eta[i],
        }
    }
    let mut first = None;
    if o.t > 0 {
        first = Some((0, 0, o.t));
    }
    let groups = [(1, &o.x), (2, &o.y), (3, &o.xi), (4, &o.eta)];
    for (g, v) in groups {
        if first.is_some() {
            break;
        }
        if let Some((i, &k)) = v.iter().enumerate().find(|(_, &k)| k > 0) {
            first = Some((g, i, k));
        }
    }
    let Some((g, i, n)) = first else { return f(p) };
    let mut rest = o.clone();
    match g {
        0 => rest.t = 0,
        1 => rest.x[i] = 0,
        2 => rest.y[i] = 0,
        3 => rest.xi[i] = 0,
        _ => rest.eta[i] = 0,
    }
    let mut q = p.clone();
    let c = *slot(&mut q, g, i);
    let h = c.abs().max(1.0) * FD_STEP.powf(3.0 / (n as f64 + 2.0));
    let mut diff = |h: f64| {
        let mut acc = C64::default();
        let mut binom = 1.0;
        for j in 0..=n {
            let s = (n as f64 / 2.0 - j as f64) * h;
            *slot(&mut q, g, i) = c + s;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += fd_partial(f, &rest, &q) * (sign * binom);
            binom = binom * (n - j) as f64 / (j + 1) as f64;
        }
        acc / h.powi(n as i32)
    };
    let d1 = diff(h);
    let d2 = diff(2.0 * h);
    (d1 * 4.0 - d2) / 3.0
}

/// Jet in η of a symbol at a point of Σ₂, plus the τ-part.
#[derive(Clone, Debug)]
pub struct JetCenter {
    pub t: f64,
    pub tau: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct JetPolynomial {
    pub center: JetCenter,
    pub degree: usize,
    /// Polynomial in η (ny variables); the degree-j part is the symmetric j-tensor.
    pub poly: Poly,
}

impl JetPolynomial {
    pub fn eval(&self, eta: &[f64]) -> C64 {
        self.poly.eval(eta)
    }

    pub fn degree_part(&self, j: usize) -> Poly {
        self.poly.degree_slice(j, j)
    }
}

fn eta_multi_indices(ny: usize, deg: usize) -> Vec<Vec<u32>> {
    let b = crate::poly::basis(ny, deg);
    b.degree_range(deg).map(|i| b.exp(i).iter().map(|&k| k as u32).collect()).collect()
}

fn jet_point(w: &JetCenter, ny: usize) -> Point {
    Point { t: w.t, x: w.x.clone(), y: w.y.clone(), xi: w.xi.clone(), eta: vec![0.0; ny] }
}

fn eta_taylor(
    p: &SymbolFunction,
    w: &JetCenter,
    lo: usize,
    hi: usize,
    b: &Arc<Basis>,
) -> Result<Poly, SymbolError> {
    let pt = jet_point(w, p.ny);
    let mut out = Poly::zero(b);
    for d in lo..=hi {
        for g in eta_multi_indices(p.ny, d) {
            let v = p.partial(&Orders::eta(p.nx, &g), &pt)?;
            let e: Vec<u8> = g.iter().map(|&k| k as u8).collect();
            out.set(&e, v / crate::poly::factorial(&e));
        }
    }
    Ok(out)
}

/// τ + p_s(w) + (k-homogeneous η-jet of p at w).
pub fn reduced_subprincipal(
    p: &SymbolFunction,
    p_s: Option<&SymbolFunction>,
    k: Order,
    w: &JetCenter,
) -> Result<JetPolynomial, SymbolError> {
    let ny = p.ny;
    let pt = jet_point(w, ny);
    let ps = match p_s {
        Some(s) => s.eval(&pt)?,
        None => C64::default(),
    };
    let Order::Finite(k) = k else {
        let b = crate::poly::basis(ny, 0);
        return Ok(JetPolynomial {
            center: w.clone(),
            degree: 0,
            poly: Poly::constant(&b, C64::new(w.tau, 0.0) + ps),
        });
    };
    let k = k as usize;
    let b = crate::poly::basis(ny, k);
    let top = eta_taylor(p, w, k, k, &b)?;
    let scale = top.max_abs().max(1.0);
    for d in 0..k {
        for g in eta_multi_indices(ny, d) {
            let v = p.partial(&Orders::eta(p.nx, &g), &pt)?;
            if v.norm() > 1e-8 * scale {
                return Err(SymbolError::OrderMismatch { gamma: g, value: v.norm() });
            }
        }
    }
    let mut poly = top;
    poly.c[0] = C64::new(w.tau, 0.0) + ps;
    Ok(JetPolynomial { center: w.clone(), degree: k, poly })
}

/// λ·J^{2k−1}(p)(η/λ^{1/k}) + τ + J^{k−1}(p_s)(η/λ^{1/k}).
pub fn extended_subprincipal(
    p: &SymbolFunction,
    p_s: Option<&SymbolFunction>,
    k: Order,
    w: &JetCenter,
    eta: &[f64],
    lambda: f64,
) -> Result<C64, SymbolError> {
    let Order::Finite(k) = k else {
        return Err(SymbolError::OrderBudgetExceeded { order: usize::MAX, budget: p.d_max });
    };
    let k = k as usize;
    if 2 * k - 1 > p.d_max {
        return Err(SymbolError::OrderBudgetExceeded { order: 2 * k - 1, budget: p.d_max });
    }
    let s = lambda.powf(-1.0 / k as f64);
    let scaled: Vec<f64> = eta.iter().map(|e| e * s).collect();
    let jp = eta_taylor(p, w, 0, 2 * k - 1, &crate::poly::basis(p.ny, 2 * k - 1))?;
    let mut q = jp.eval(&scaled) * lambda + w.tau;
    if let Some(ps) = p_s {
        if k - 1 > ps.d_max {
            return Err(SymbolError::OrderBudgetExceeded { order: k - 1, budget: ps.d_max });
        }
        let js = eta_taylor(ps, w, 0, k - 1, &crate::poly::basis(ps.ny, k - 1))?;
        q += js.eval(&scaled);
    }
    Ok(q)
}

/// Evaluate sym at (x, y, ξ, η/|ξ|^{1/k}).
pub fn blowup_pullback(sym: &SymbolFunction, k: Order, p: &Point) -> Result<C64, SymbolError> {
    let n = p.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(SymbolError::ZeroXi);
    }
    let s = n.powf(-k.inv());
    let mut q = p.clone();
    for e in q.eta.iter_mut() {
        *e *= s;
    }
    sym.eval(&q)
}

/// One term c(t,x,y)·D_t^a D_x^α D_y^β of the operator realization.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffTerm {
    pub coeff: C64,
    pub t: TTag,
    pub x_pow: Vec<u32>,
    pub y_pow: Vec<u32>,
    pub dt: u32,
    pub dx: Vec<u32>,
    pub dy: Vec<u32>,
}

impl DiffTerm {
    pub fn coefficient(&self, t: f64, x: &[f64], y: &[f64]) -> C64 {
        self.coeff * (self.t.eval(t) * mono(x, &self.x_pow) * mono(y, &self.y_pow))
    }
}

#[derive(Clone, Debug)]
pub struct BasePoint {
    pub t_start: f64,
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub y0: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ModelProblem {
    pub label: String,
    pub k: Order,
    pub nx: usize,
    pub ny: usize,
    pub eta0: Vec<f64>,
    pub f: SymbolFunction,
    pub r: Option<SymbolFunction>,
    pub f0: Option<SymbolFunction>,
    /// y-dependent shift of the fiber variable, one component per y-dimension.
    pub c_coupling: Option<Vec<SymbolFunction>>,
    pub diff_op: Vec<DiffTerm>,
    pub base: BasePoint,
    pub interval: (f64, f64),
}

impl ModelProblem {
    pub fn validate(&self) -> Result<(), SymbolError> {
        let bad = |m: &str| Err(SymbolError::BadParams(m.to_string()));
        if self.base.xi0.iter().all(|&v| v == 0.0) {
            return bad("xi0 must be nonzero");
        }
        if self.k.is_infinite() && self.eta0.iter().any(|&v| v != 0.0) {
            return bad("k = inf requires eta0 = 0");
        }
        if let Order::Finite(k) = self.k {
            if k < 2 {
                return bad("k must be at least 2");
            }
        }
        if self.eta0.len() != self.ny
            || self.base.x0.len() != self.nx
            || self.base.xi0.len() != self.nx
            || self.base.y0.len() != self.ny
        {
            return bad("dimension mismatch in base point");
        }
        if !(self.interval.0 < self.interval.1)
            || self.base.t_start < self.interval.0
            || self.base.t_start > self.interval.1
        {
            return bad("interval must be increasing and contain t_start");
        }
        for s in [Some(&self.f), self.r.as_ref(), self.f0.as_ref()].into_iter().flatten() {
            if s.nx != self.nx || s.ny != self.ny {
                return bad("symbol dimensions disagree with model");
            }
        }
        Ok(())
    }

    pub fn base_point(&self) -> Point {
        Point::new(self.base.t_start, &self.base.x0, &self.base.y0, &self.base.xi0, &self.eta0)
    }

    /// Spatial symbol of diff_op (D_t dropped) at frequencies (Ξ, H).
    pub fn diff_op_symbol(&self, t: f64, x: &[f64], y: &[f64], xi: &[f64], eta: &[f64]) -> C64 {
        self.diff_op
            .iter()
            .filter(|d| d.dt == 0)
            .map(|d| d.coefficient(t, x, y) * (mono(xi, &d.dx) * mono(eta, &d.dy)))
            .sum()
    }
}

fn cplx(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn dterm(coeff: C64, t: TTag, nx: usize, ny: usize) -> DiffTerm {
    DiffTerm { coeff, t, x_pow: vec![0; nx], y_pow: vec![0; ny], dt: 0, dx: vec![0; nx], dy: vec![0; ny] }
}

fn d_t(nx: usize, ny: usize) -> DiffTerm {
    DiffTerm { dt: 1, ..dterm(cplx(1.0, 0.0), TTag::Pow(0), nx, ny) }
}

pub const BUILTINS: [(&str, &str); 3] = [
    ("mizohata", "D_t - i t D_y^2 on R^3, k = 2, eta0 = 1"),
    ("cpt", "D_t - i(D_y1 D_y2 + t D_y2^2), k = 2, eta0 = (0,1); conditions fail"),
    ("cpt_gen", "D_t - i(D_y1 D_y2 + t^(2j+1) D_y2^2) - i(2j^2+j) t^(2j-1) y1^2, param j >= 1"),
];

pub fn mizohata() -> ModelProblem {
    let f = SymbolFunction::poly(1, 1, vec![SymbolFunction::term(cplx(0.0, -1.0), TTag::Pow(1), &[0], &[2])]);
    ModelProblem {
        label: "mizohata".into(),
        k: Order::Finite(2),
        nx: 1,
        ny: 1,
        eta0: vec![1.0],
        f,
        r: None,
        f0: None,
        c_coupling: None,
        diff_op: vec![d_t(1, 1), DiffTerm { dy: vec![2], ..dterm(cplx(0.0, -1.0), TTag::Pow(1), 1, 1) }],
        base: BasePoint { t_start: 0.0, x0: vec![0.0], xi0: vec![1.0], y0: vec![0.0] },
        interval: (-1.0, 1.0),
    }
}

fn cpt_family(label: &str, t_pow: u32, zeroth: Option<f64>) -> ModelProblem {
    let i = cplx(0.0, -1.0);
    let f = SymbolFunction::poly(
        1,
        2,
        vec![
            SymbolFunction::term(i, TTag::Pow(0), &[0], &[1, 1]),
            SymbolFunction::term(i, TTag::Pow(t_pow), &[0], &[0, 2]),
        ],
    );
    let mut diff_op = vec![
        d_t(1, 2),
        DiffTerm { dy: vec![1, 1], ..dterm(i, TTag::Pow(0), 1, 2) },
        DiffTerm { dy: vec![0, 2], ..dterm(i, TTag::Pow(t_pow), 1, 2) },
    ];
    let f0 = zeroth.map(|a| {
        let tp = t_pow - 2;
        diff_op.push(DiffTerm { y_pow: vec![2, 0], ..dterm(i * a, TTag::Pow(tp), 1, 2) });
        SymbolFunction::poly(
            1,
            2,
            vec![PolyTerm { coeff: i * a, t: TTag::Pow(tp), x: vec![0], y: vec![2, 0], xi: vec![0], eta: vec![0, 0] }],
        )
    });
    ModelProblem {
        label: label.into(),
        k: Order::Finite(2),
        nx: 1,
        ny: 2,
        eta0: vec![0.0, 1.0],
        f,
        r: None,
        f0,
        c_coupling: None,
        diff_op,
        base: BasePoint { t_start: 0.0, x0: vec![0.0], xi0: vec![1.0], y0: vec![0.0, 0.0] },
        interval: (-1.0, 1.0),
    }
}

pub fn cpt() -> ModelProblem {
    cpt_family("cpt", 1, None)
}

pub fn cpt_gen(j: u32) -> Result<ModelProblem, SymbolError> {
    if j == 0 {
        return Err(SymbolError::BadParams("cpt_gen needs j >= 1".into()));
    }
    let a = (2 * j * j + j) as f64;
    Ok(cpt_family(&format!("cpt_gen({j})"), 2 * j + 1, Some(a)))
}

pub fn builtin_model(name: &str, params: &Value) -> Result<ModelProblem, SymbolError> {
    let m = match name {
        "mizohata" => mizohata(),
        "cpt" => cpt(),
        "cpt_gen" => {
            // j defaults to 1 when no parameters are given
            let j = match params.get("j") {
                None if params.is_null() || params.as_object().is_some_and(|o| o.is_empty()) => 1,
                v => v.and_then(Value::as_u64).ok_or_else(|| SymbolError::BadParams("cpt_gen needs integer j".into()))?,
            };
            cpt_gen(j as u32)?
        }
        "custom" => model_from_json(params)?,
        other => return Err(SymbolError::UnknownModel(other.to_string())),
    };
    m.validate()?;
    Ok(m)
}

fn f64_vec(v: &Value, key: &str, n: usize, default: f64) -> Result<Vec<f64>, SymbolError> {
    match v.get(key) {
        None => Ok(vec![default; n]),
        Some(Value::Number(x)) if n == 1 => Ok(vec![x.as_f64().unwrap()]),
        Some(Value::Array(a)) => {
            let out: Option<Vec<f64>> = a.iter().map(Value::as_f64).collect();
            let out = out.ok_or_else(|| SymbolError::BadParams(format!("`{key}` must hold numbers")))?;
            if out.len() != n {
                return Err(SymbolError::BadParams(format!("`{key}` needs {n} entries")));
            }
            Ok(out)
        }
        _ => Err(SymbolError::BadParams(format!("`{key}` malformed"))),
    }
}

fn mi(v: Option<&Value>, n: usize) -> Result<Vec<u32>, SymbolError> {
    match v {
        None => Ok(vec![0; n]),
        Some(Value::Array(a)) if a.len() == n => a
            .iter()
            .map(|x| x.as_u64().map(|k| k as u32).ok_or_else(|| SymbolError::BadParams("bad multi-index".into())))
            .collect(),
        Some(other) => Err(SymbolError::BadParams(format!("multi-index {other} needs {n} entries"))),
    }
}

/// Entries `[re, im, tag, xi_mi, eta_mi, x_mi?, y_mi?]`.
fn poly_table(v: &Value, nx: usize, ny: usize) -> Result<SymbolFunction, SymbolError> {
    let rows = v.as_array().ok_or_else(|| SymbolError::BadParams("polynomial table must be an array".into()))?;
    let mut terms = Vec::new();
    for row in rows {
        let r = row.as_array().ok_or_else(|| SymbolError::BadParams("table row must be an array".into()))?;
        if r.len() < 5 {
            return Err(SymbolError::BadParams("table row needs at least 5 entries".into()));
        }
        let num = |x: &Value| x.as_f64().ok_or_else(|| SymbolError::BadParams("coefficient must be numeric".into()));
        terms.push(PolyTerm {
            coeff: cplx(num(&r[0])?, num(&r[1])?),
            t: TTag::parse(&r[2])?,
            xi: mi(Some(&r[3]), nx)?,
            eta: mi(Some(&r[4]), ny)?,
            x: mi(r.get(5), nx)?,
            y: mi(r.get(6), ny)?,
        });
    }
    Ok(SymbolFunction::poly(nx, ny, terms))
}

pub fn model_from_json(v: &Value) -> Result<ModelProblem, SymbolError> {
    let bad = |m: &str| SymbolError::BadParams(m.to_string());
    let dims = v.get("dims").ok_or_else(|| bad("missing `dims`"))?;
    let nx = dims.get("nx").and_then(Value::as_u64).ok_or_else(|| bad("missing dims.nx"))? as usize;
    let ny = dims.get("ny").and_then(Value::as_u64).ok_or_else(|| bad("missing dims.ny"))? as usize;
    let k = match v.get("k") {
        Some(Value::String(s)) if s == "inf" => Order::Infinite,
        Some(x) => Order::Finite(x.as_u64().ok_or_else(|| bad("`k` must be an integer or \"inf\""))? as u32),
        None => return Err(bad("missing `k`")),
    };
    let f = poly_table(v.get("f_poly").ok_or_else(|| bad("missing `f_poly`"))?, nx, ny)?;
    let opt = |key: &str| v.get(key).map(|t| poly_table(t, nx, ny)).transpose();
    let c_coupling = match v.get("c_poly") {
        None => None,
        Some(Value::Array(comps)) if comps.len() == ny => {
            Some(comps.iter().map(|c| poly_table(c, nx, ny)).collect::<Result<Vec<_>, _>>()?)
        }
        Some(_) => return Err(bad("`c_poly` needs one table per y-dimension")),
    };
    let mut diff_op = Vec::new();
    if let Some(ops) = v.get("diff_op") {
        let ops = ops.as_array().ok_or_else(|| bad("`diff_op` must be an array"))?;
        for o in ops {
            let num = |key: &str| o.get(key).and_then(Value::as_f64).unwrap_or(0.0);
            diff_op.push(DiffTerm {
                coeff: cplx(num("re"), num("im")),
                t: o.get("t").map(TTag::parse).transpose()?.unwrap_or(TTag::Pow(0)),
                x_pow: mi(o.get("x_pow"), nx)?,
                y_pow: mi(o.get("y_pow"), ny)?,
                dt: o.get("dt").and_then(Value::as_u64).unwrap_or(0) as u32,
                dx: mi(o.get("dx"), nx)?,
                dy: mi(o.get("dy"), ny)?,
            });
        }
    }
    let interval = f64_vec(v, "interval", 2, 0.0)?;
    let interval = if v.get("interval").is_none() { (-1.0, 1.0) } else { (interval[0], interval[1]) };
    let xi0 = f64_vec(v, "xi0", nx, 1.0)?;
    let m = ModelProblem {
        label: v.get("name").and_then(Value::as_str).unwrap_or("custom").to_string(),
        k,
        nx,
        ny,
        eta0: f64_vec(v, "eta0", ny, 0.0)?,
        f,
        r: opt("r_poly")?,
        f0: opt("F0_poly")?,
        c_coupling,
        diff_op,
        base: BasePoint {
            t_start: v.get("t_start").and_then(Value::as_f64).unwrap_or(0.0),
            x0: f64_vec(v, "x0", nx, 0.0)?,
            xi0,
            y0: f64_vec(v, "y0", ny, 0.0)?,
        },
        interval,
    };
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ttag_derivatives() {
        assert_eq!(TTag::Pow(3).deriv(2.0, 2), 12.0);
        assert_eq!(TTag::Pow(1).deriv(2.0, 2), 0.0);
        assert!((TTag::Sin(2.0).deriv(0.3, 3) + 8.0 * (0.6f64).cos()).abs() < 1e-14);
        assert!((TTag::Exp(-1.5).deriv(0.2, 2) - 2.25 * (-0.3f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn tag_parsing() {
        assert_eq!(TTag::parse(&serde_json::json!(3)).unwrap(), TTag::Pow(3));
        assert_eq!(TTag::parse(&serde_json::json!("sin:2.5")).unwrap(), TTag::Sin(2.5));
        assert!(TTag::parse(&serde_json::json!("tan:1")).is_err());
    }

    #[test]
    fn cpt_gen_zeroth_term() {
        let m = cpt_gen(1).unwrap();
        let f0 = m.f0.unwrap();
        let t = &f0.terms().unwrap()[0];
        assert_eq!(t.t, TTag::Pow(1));
        assert_eq!(t.y, vec![2, 0]);
        assert_eq!(t.coeff, cplx(0.0, -3.0));
        assert_eq!(m.f.terms().unwrap()[1].t, TTag::Pow(3));
    }
}
