//! Sign-change detection, minimal bicharacteristic search, condition audit
//! and the integral gate that licenses the λ-dependent phase equations.

use crate::symbols::{extended_subprincipal, JetCenter, ModelProblem, Order, Orders, Point, SymbolError, SymbolFunction};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionError {
    #[error("Im f does not change sign on the scanned line")]
    NoSignChange,
    #[error("anchor is degenerate: Im w0 = {0:e} at the anchor")]
    DegenerateAnchor(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    PlusToMinus,
    MinusToPlus,
}

impl Direction {
    pub fn swap(self) -> Direction {
        match self {
            Direction::PlusToMinus => Direction::MinusToPlus,
            Direction::MinusToPlus => Direction::PlusToMinus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum VanishingOrder {
    Finite(u32),
    #[serde(serialize_with = "ser_inf")]
    Infinite,
}

fn ser_inf<S: serde::Serializer>(s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str("inf")
}

#[derive(Clone, Debug, Serialize)]
pub struct SignChangeReport {
    pub found: bool,
    pub t_cross: f64,
    pub direction: Direction,
    pub order_estimate: VanishingOrder,
    pub i_prime: (f64, f64),
}

/// Line in (x, ξ, η) along which Im f is scanned; y is the model's base y.
#[derive(Clone, Debug)]
pub struct LinePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl LinePoint {
    pub fn base(m: &ModelProblem) -> LinePoint {
        LinePoint { x: m.base.x0.clone(), xi: m.base.xi0.clone(), eta: m.eta0.clone() }
    }
}

fn im_f(m: &ModelProblem, at: &LinePoint, t: f64) -> Result<f64, SymbolError> {
    Ok(m.f.eval(&Point::new(t, &at.x, &m.base.y0, &at.xi, &at.eta))?.im)
}

fn bisect(mut g: impl FnMut(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

pub fn detect_sign_change(
    model: &ModelProblem,
    at: &LinePoint,
    interval: (f64, f64),
    n_samples: usize,
) -> Result<SignChangeReport, ConditionError> {
    if n_samples < 64 {
        return Err(ConditionError::PreconditionViolated("need at least 64 samples".into()));
    }
    if at.xi.iter().all(|&v| v == 0.0) {
        return Err(SymbolError::ZeroXi.into());
    }
    let (a, b) = interval;
    let h = (b - a) / (n_samples - 1) as f64;
    let ts: Vec<f64> = (0..n_samples).map(|i| a + h * i as f64).collect();
    let g: Vec<f64> = ts.iter().map(|&t| im_f(model, at, t)).collect::<Result<_, _>>()?;
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return Err(ConditionError::NoSignChange);
    }
    let tol = 1e-10 * gmax;
    let sign = |v: f64| if v > tol { 1 } else if v < -tol { -1 } else { 0 };

    // (last nonzero index, next nonzero index) for each sign flip
    let mut flips = Vec::new();
    let mut last: Option<usize> = None;
    for (i, &v) in g.iter().enumerate() {
        let s = sign(v);
        if s == 0 {
            continue;
        }
        if let Some(l) = last {
            if sign(g[l]) != s {
                flips.push((l, i));
            }
        }
        last = Some(i);
    }
    let pick = flips
        .iter()
        .find(|(l, _)| sign(g[*l]) > 0)
        .or_else(|| flips.first())
        .copied()
        .ok_or(ConditionError::NoSignChange)?;
    let (l, r) = pick;
    let direction = if sign(g[l]) > 0 { Direction::PlusToMinus } else { Direction::MinusToPlus };
    let (i_prime, t_cross) = if r == l + 1 {
        let t = bisect(|t| im_f(model, at, t).unwrap_or(0.0), ts[l], ts[r]);
        ((t, t), t)
    } else {
        let lo = bisect(|t| if im_f(model, at, t).unwrap_or(0.0).abs() > tol { 1.0 } else { -1.0 }, ts[l], ts[l + 1]);
        let hi = bisect(|t| if im_f(model, at, t).unwrap_or(0.0).abs() > tol { -1.0 } else { 1.0 }, ts[r - 1], ts[r]);
        ((lo, hi), 0.5 * (lo + hi))
    };
    let order_estimate = estimate_order(model, at, i_prime, interval)?;
    Ok(SignChangeReport { found: true, t_cross, direction, order_estimate, i_prime })
}

fn estimate_order(
    model: &ModelProblem,
    at: &LinePoint,
    i_prime: (f64, f64),
    interval: (f64, f64),
) -> Result<VanishingOrder, ConditionError> {
    let room = (i_prime.0 - interval.0).min(interval.1 - i_prime.1);
    let d0 = (0.05 * (interval.1 - interval.0)).min(0.9 * room);
    if d0 <= 0.0 {
        return Ok(VanishingOrder::Finite(1));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in 0..16 {
        let d = d0 * 10f64.powf(-(j as f64) / 15.0);
        for t in [i_prime.1 + d, i_prime.0 - d] {
            let v = im_f(model, at, t)?.abs();
            if v > 0.0 {
                xs.push(d.ln());
                ys.push(v.ln());
            }
        }
    }
    if xs.len() < 4 {
        return Ok(VanishingOrder::Infinite);
    }
    let (slope, _) = ls_slope(&xs, &ys);
    if slope > 12.0 {
        Ok(VanishingOrder::Infinite)
    } else {
        Ok(VanishingOrder::Finite(slope.round().max(1.0) as u32))
    }
}

/// Grid gap between the last positive sample and the next negative one.
fn crossing_gap(g: &[f64], ts: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    let mut last_pos: Option<usize> = None;
    for (i, &v) in g.iter().enumerate() {
        if v > 0.0 {
            last_pos = Some(i);
        } else if v < 0.0 {
            if let Some(p) = last_pos {
                best = best.min(ts[i] - ts[p]);
            }
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct BicharSearch {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub gap: f64,
    pub center_gap: f64,
    pub report: SignChangeReport,
}

/// Brute-force minimization of the crossing gap over a tensor grid in (x, ξ).
#[allow(clippy::too_many_arguments)]
pub fn minimal_bichar_search(
    model: &ModelProblem,
    center: &LinePoint,
    half_width: f64,
    grid: usize,
    a: f64,
    b: f64,
    n_t: usize,
) -> Result<BicharSearch, ConditionError> {
    let nx = model.nx;
    let dims = 2 * nx;
    let m = grid.max(1);
    let h = (b - a) / (n_t - 1) as f64;
    let ts: Vec<f64> = (0..n_t).map(|i| a + h * i as f64).collect();
    let axis = |c: f64, j: usize| if m == 1 { c } else { c - half_width + 2.0 * half_width * j as f64 / (m - 1) as f64 };
    let gap_at = |p: &LinePoint| -> Result<f64, ConditionError> {
        let g: Vec<f64> = ts.iter().map(|&t| im_f(model, p, t)).collect::<Result<_, _>>()?;
        Ok(crossing_gap(&g, &ts))
    };
    let center_gap = gap_at(center)?;
    let mut best = (center_gap, 0.0, center.clone());
    let total = m.pow(dims as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = center.clone();
        let mut dist = 0.0;
        for d in 0..dims {
            let j = rem % m;
            rem /= m;
            let (c, slot) = if d < nx { (center.x[d], &mut p.x[d]) } else { (center.xi[d - nx], &mut p.xi[d - nx]) };
            *slot = axis(c, j);
            dist += (*slot - c) * (*slot - c);
        }
        let gap = gap_at(&p)?;
        if gap < best.0 || (gap == best.0 && dist < best.1) {
            best = (gap, dist, p);
        }
    }
    if !best.0.is_finite() {
        return Err(ConditionError::NoSignChange);
    }
    let report = detect_sign_change(model, &best.2, (a, b), n_t.max(64))?;
    Ok(BicharSearch { x: best.2.x, xi: best.2.xi, gap: best.0, center_gap, report })
}

#[derive(Clone, Debug, Serialize)]
pub struct Region {
    pub t: (f64, f64),
    pub x_half: f64,
    pub xi_half: f64,
    pub eta_half: f64,
    pub y_half: f64,
}

impl Region {
    pub fn around(m: &ModelProblem) -> Region {
        Region { t: m.interval, x_half: 0.5, xi_half: 0.5, eta_half: 0.5, y_half: 0.5 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsVerdict {
    pub holds: bool,
    pub worst_ratio: f64,
    pub epsilon_used: f64,
    pub per_epsilon: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimpleVerdict {
    pub holds: bool,
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionAudit {
    pub cond_kcond: EpsVerdict,
    pub cond_hessian: Option<EpsVerdict>,
    pub cond_leaf: SimpleVerdict,
    pub cond_dq: SimpleVerdict,
    pub samples: usize,
    pub bound: f64,
    pub region: Region,
}

impl ConditionAudit {
    pub fn all_hold(&self) -> bool {
        self.cond_kcond.holds
            && self.cond_hessian.as_ref().map(|h| h.holds).unwrap_or(true)
            && self.cond_leaf.holds
            && self.cond_dq.holds
    }
}

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub eps_grid: Vec<f64>,
    pub n_samples: usize,
    pub bound: f64,
    pub seed: u64,
    pub max_x_order: u32,
    pub dq_lambdas: Vec<f64>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            eps_grid: vec![0.05, 0.1, 0.25, 0.5],
            n_samples: 4096,
            bound: 10.0,
            seed: 7,
            max_x_order: 2,
            dq_lambdas: vec![1e2, 1e3, 1e4],
        }
    }
}

/// (x, ξ) derivative multi-indices with total order ≤ max.
fn xxi_orders(nx: usize, max: u32) -> Vec<(Vec<u32>, Vec<u32>)> {
    let b = crate::poly::basis(2 * nx, max as usize);
    b.exps()
        .iter()
        .map(|e| (e[..nx].iter().map(|&k| k as u32).collect(), e[nx..].iter().map(|&k| k as u32).collect()))
        .collect()
}

fn eta_grad_norm(f: &SymbolFunction, p: &Point, ax: &[u32], axi: &[u32]) -> Result<f64, SymbolError> {
    let mut s = 0.0;
    for j in 0..f.ny {
        let mut o = Orders::zero(f.nx, f.ny);
        o.x = ax.to_vec();
        o.xi = axi.to_vec();
        o.eta[j] = 1;
        s += f.partial(&o, p)?.norm_sqr();
    }
    Ok(s.sqrt())
}

fn eta_hess_norm(f: &SymbolFunction, p: &Point, ax: &[u32], axi: &[u32]) -> Result<f64, SymbolError> {
    let mut s = 0.0;
    for i in 0..f.ny {
        for j in 0..f.ny {
            let mut o = Orders::zero(f.nx, f.ny);
            o.x = ax.to_vec();
            o.xi = axi.to_vec();
            o.eta[i] += 1;
            o.eta[j] += 1;
            s += f.partial(&o, p)?.norm_sqr();
        }
    }
    Ok(s.sqrt())
}

/// Move along t toward the zero set of Im f, keeping the sign.
fn approach_zero_set(f: &SymbolFunction, p: &Point, target: f64) -> Option<Point> {
    let mut q = p.clone();
    let mut dt = Orders::zero(f.nx, f.ny);
    dt.t = 1;
    for _ in 0..40 {
        let v = f.eval(&q).ok()?.im;
        let d = f.partial(&dt, &q).ok()?.im;
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let step = (v - target) / d;
        q.t -= step;
        if (v - target).abs() <= 1e-3 * target.abs() {
            break;
        }
    }
    let v = f.eval(&q).ok()?.im;
    if v.is_finite() && (v - target).abs() <= 0.1 * target.abs() {
        Some(q)
    } else {
        None
    }
}

pub fn audit_conditions(model: &ModelProblem, region: &Region, opt: &AuditOptions) -> Result<ConditionAudit, ConditionError> {
    let f = &model.f;
    let (nx, ny) = (model.nx, model.ny);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut pts = Vec::with_capacity(opt.n_samples);
    for _ in 0..opt.n_samples {
        let t = rng.gen_range(region.t.0..=region.t.1);
        let x: Vec<f64> = model.base.x0.iter().map(|c| c + rng.gen_range(-region.x_half..=region.x_half)).collect();
        let y: Vec<f64> = model.base.y0.iter().map(|c| c + rng.gen_range(-region.y_half..=region.y_half)).collect();
        let xi: Vec<f64> = model
            .base
            .xi0
            .iter()
            .map(|c| c + rng.gen_range(-region.xi_half..=region.xi_half) * c.abs().max(1.0))
            .collect();
        let eta: Vec<f64> = model.eta0.iter().map(|c| c + rng.gen_range(-region.eta_half..=region.eta_half)).collect();
        pts.push(Point { t, x, y, xi, eta });
    }
    // τ = −Re f on the characteristic set, so |p_{s,k}| = |Im f|
    let absp: Vec<f64> = pts.iter().map(|p| f.eval(p).map(|v| v.im.abs())).collect::<Result<_, _>>()?;
    let mut sorted = absp.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q10 = sorted[(sorted.len() / 10).min(sorted.len() - 1)];
    let mut near: Vec<(Point, f64)> = pts.iter().zip(&absp).filter(|(_, &a)| a < q10).map(|(p, &a)| (p.clone(), a)).collect();
    let seeds: Vec<(Point, f64)> = near.iter().take(64).cloned().collect();
    for (p, _) in &seeds {
        let v = f.eval(p)?.im;
        for s in [1e-2, 1e-4, 1e-6, 1e-8] {
            if let Some(q) = approach_zero_set(f, p, v * s) {
                if q.t >= region.t.0 && q.t <= region.t.1 {
                    let a = f.eval(&q)?.im.abs();
                    if a > 0.0 {
                        near.push((q, a));
                    }
                }
            }
        }
    }
    let near: Vec<(Point, f64)> = near.into_iter().filter(|(_, a)| *a > 0.0).collect();

    let kinv = model.k.inv();
    let orders = xxi_orders(nx, opt.max_x_order);
    let mut num1 = Vec::with_capacity(near.len());
    let mut num2 = Vec::with_capacity(near.len());
    for (p, _) in &near {
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        for (ax, axi) in &orders {
            m1 = m1.max(eta_grad_norm(f, p, ax, axi)?);
            if model.k == Order::Finite(2) {
                m2 = m2.max(eta_hess_norm(f, p, ax, axi)?);
            }
        }
        num1.push(m1);
        num2.push(m2);
    }
    let verdict = |num: &[f64], power: &dyn Fn(f64) -> f64| -> EpsVerdict {
        let per: Vec<(f64, f64)> = opt
            .eps_grid
            .iter()
            .map(|&e| {
                let w = near.iter().zip(num).map(|((_, a), n)| n / a.powf(power(e))).fold(0.0, f64::max);
                (e, w)
            })
            .collect();
        let ok = per.iter().find(|(_, w)| *w <= opt.bound);
        let best = per.iter().cloned().fold((f64::NAN, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        let (e, w) = ok.copied().unwrap_or(best);
        EpsVerdict { holds: ok.is_some(), worst_ratio: w, epsilon_used: e, per_epsilon: per }
    };
    let cond_kcond = verdict(&num1, &|e| kinv + e);
    let cond_hessian = (model.k == Order::Finite(2)).then(|| verdict(&num2, &|e| e));

    let mut leaf = 0.0f64;
    for (p, a) in pts.iter().zip(&absp).chain(near.iter().map(|(p, a)| (p, a))) {
        let mut s = 0.0;
        for j in 0..ny {
            let mut o = Orders::zero(nx, ny);
            o.y[j] = 1;
            s += f.partial(&o, p)?.norm_sqr();
        }
        let s = s.sqrt();
        if s > 0.0 {
            leaf = leaf.max(if *a > 0.0 { s / a } else { f64::INFINITY });
        }
    }
    let cond_leaf = SimpleVerdict { holds: leaf <= opt.bound, worst_ratio: leaf };

    let cond_dq = dq_check(model, region, &pts[..pts.len().min(256)], opt)?;
    Ok(ConditionAudit {
        cond_kcond,
        cond_hessian,
        cond_leaf,
        cond_dq,
        samples: pts.len(),
        bound: opt.bound,
        region: region.clone(),
    })
}

/// λ^{2/k}|∂_η q| at zeros (in t) of the extended symbol with τ = 0.
fn dq_check(model: &ModelProblem, region: &Region, pts: &[Point], opt: &AuditOptions) -> Result<SimpleVerdict, ConditionError> {
    let Order::Finite(k) = model.k else {
        return Ok(SimpleVerdict { holds: true, worst_ratio: 0.0 });
    };
    let kf = k as f64;
    let mut worst = 0.0f64;
    for &lam in &opt.dq_lambdas {
        for p in pts {
            let q = |t: f64, eta: &[f64]| -> Result<C64, SymbolError> {
                let w = JetCenter { t, tau: 0.0, x: p.x.clone(), y: p.y.clone(), xi: p.xi.clone() };
                extended_subprincipal(&model.f, None, model.k, &w, eta, lam)
            };
            let n = 64;
            let h = (region.t.1 - region.t.0) / n as f64;
            let mut prev = q(region.t.0, &p.eta)?.im;
            let mut root = None;
            for i in 1..=n {
                let t = region.t.0 + h * i as f64;
                let v = q(t, &p.eta)?.im;
                if prev == 0.0 || prev * v < 0.0 {
                    let a = t - h;
                    root = Some(if prev == 0.0 { a } else { bisect(|s| q(s, &p.eta).map(|z| z.im).unwrap_or(0.0), a, t) });
                    break;
                }
                prev = v;
            }
            let Some(t) = root else { continue };
            let mut g = 0.0;
            for j in 0..model.ny {
                let hj = p.eta[j].abs().max(1.0) * 1e-5;
                let mut e1 = p.eta.clone();
                let mut e2 = p.eta.clone();
                e1[j] += hj;
                e2[j] -= hj;
                let d = (q(t, &e1)? - q(t, &e2)?) / (2.0 * hj);
                g += d.norm_sqr();
            }
            let val = lam.powf(2.0 / kf) * g.sqrt();
            worst = worst.max(val);
        }
    }
    Ok(SimpleVerdict { holds: worst <= opt.bound, worst_ratio: worst })
}

#[derive(Clone, Debug, Serialize)]
pub struct GateResult {
    pub usable: (f64, f64),
    pub anchor: f64,
    /// (t, first integral, second integral) from the anchor outward, sorted by t.
    pub integrals: Vec<(f64, f64, f64)>,
    pub bound: f64,
    /// λ·Im w0 ≥ λ^κ at (lower, upper) end.
    pub localized: (bool, bool),
}

/// Samples of the pass-1 trajectory the gate needs.
pub struct GateInput<'a> {
    pub t: &'a [f64],
    pub x0: &'a [Vec<f64>],
    pub xi0: &'a [Vec<f64>],
    pub im_w0: &'a [f64],
    pub anchor_index: usize,
}

#[derive(Clone, Debug)]
pub struct GateOptions {
    pub delta: f64,
    pub c: f64,
    pub max_order: u32,
    pub kappa: f64,
}

impl Default for GateOptions {
    fn default() -> Self {
        GateOptions { delta: 0.1, c: 10.0, max_order: 1, kappa: 0.1 }
    }
}

pub fn lemclaim_gate(
    input: &GateInput,
    model: &ModelProblem,
    lambda: f64,
    opt: &GateOptions,
) -> Result<GateResult, ConditionError> {
    let i0 = input.anchor_index;
    let scale = input.im_w0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if input.im_w0[i0].abs() > 1e-10 * scale {
        return Err(ConditionError::DegenerateAnchor(input.im_w0[i0]));
    }
    let kinv = model.k.inv();
    let second = model.k == Order::Finite(2);
    let orders = xxi_orders(model.nx, opt.max_order);
    let f = &model.f;
    let integrand = |i: usize| -> Result<(f64, f64), SymbolError> {
        let p = Point::new(input.t[i], &input.x0[i], &model.base.y0, &input.xi0[i], &model.eta0);
        let mut a = 0.0f64;
        let mut b = 0.0f64;
        for (ax, axi) in &orders {
            a = a.max(eta_grad_norm(f, &p, ax, axi)?);
            if second {
                b = b.max(eta_hess_norm(f, &p, ax, axi)?);
            }
        }
        Ok((lambda.powf(kinv) * a, lambda.powf(2.0 * kinv - 1.0) * b))
    };
    let bound = opt.c * lambda.powf(-opt.delta);
    let n = input.t.len();
    let vals: Vec<(f64, f64)> = (0..n).map(integrand).collect::<Result<_, _>>()?;
    let mut table = vec![(input.t[i0], 0.0, 0.0)];
    let mut ends = [input.t[0], input.t[n - 1]];
    for (side, dir) in [(0usize, -1isize), (1, 1)] {
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut i = i0 as isize;
        loop {
            let j = i + dir;
            if j < 0 || j >= n as isize {
                break;
            }
            let (iu, ju) = (i as usize, j as usize);
            let h = (input.t[ju] - input.t[iu]).abs();
            let d1 = 0.5 * h * (vals[iu].0 + vals[ju].0);
            let d2 = 0.5 * h * (vals[iu].1 + vals[ju].1);
            if s1 + d1 >= bound || s2 + d2 >= bound {
                // linear interpolation of the exit inside this step
                let f1 = if d1 > 0.0 { (bound - s1) / d1 } else { 1.0 };
                let f2 = if d2 > 0.0 { (bound - s2) / d2 } else { 1.0 };
                let frac = f1.min(f2).clamp(0.0, 1.0);
                ends[side] = input.t[iu] + frac * (input.t[ju] - input.t[iu]);
                break;
            }
            s1 += d1;
            s2 += d2;
            table.push((input.t[ju], s1, s2));
            i = j;
        }
    }
    table.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let usable = (ends[0], ends[1]);
    let im_at = |t: f64| -> f64 {
        let k = input.t.partition_point(|&s| s < t).clamp(1, n - 1);
        let (ta, tb) = (input.t[k - 1], input.t[k]);
        let w = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        input.im_w0[k - 1] * (1.0 - w) + input.im_w0[k] * w
    };
    let thr = lambda.powf(opt.kappa);
    let localized = (lambda * im_at(usable.0) >= thr, lambda * im_at(usable.1) >= thr);
    Ok(GateResult { usable, anchor: input.t[i0], integrals: table, bound, localized })
}

#[derive(Clone, Debug, Serialize)]
pub struct IntlemResult {
    pub kappa: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub pass: bool,
}

/// Lower-bound constants C(ρ, c); unmatched pairs use 0.1·c^{1+ρ}.
#[derive(Clone, Debug)]
pub struct IntlemTable {
    pub entries: Vec<(f64, f64, f64)>,
}

impl Default for IntlemTable {
    fn default() -> Self {
        IntlemTable { entries: vec![(1.0, 1.0, 0.5), (1.0 / 3.0, 0.5, 0.1)] }
    }
}

impl IntlemTable {
    pub fn constant(&self, rho: f64, c: f64) -> f64 {
        self.entries
            .iter()
            .find(|(r, cc, _)| (r - rho).abs() < 1e-12 && (cc - c).abs() < 1e-12)
            .map(|e| e.2)
            .unwrap_or(0.1 * c.powf(1.0 + rho))
    }
}

fn gradient(ts: &[f64], fs: &[f64]) -> Vec<f64> {
    let n = ts.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (fs[i + 1] - fs[i - 1]) / (ts[i + 1] - ts[i - 1]);
    }
    let h0 = ts[1] - ts[0];
    d[0] = (-3.0 * fs[0] + 4.0 * fs[1] - fs[2]) / (2.0 * h0);
    let h1 = ts[n - 1] - ts[n - 2];
    d[n - 1] = (3.0 * fs[n - 1] - 4.0 * fs[n - 2] + fs[n - 3]) / (2.0 * h1);
    d
}

/// Samples `ts` (uniform, increasing) span the segment between 0 and t0.
pub fn intlem_check(
    ts: &[f64],
    fs: &[f64],
    t0: f64,
    rho: f64,
    c: f64,
    table: &IntlemTable,
) -> Result<IntlemResult, ConditionError> {
    if ts.len() < 3 || ts.len() != fs.len() {
        return Err(ConditionError::PreconditionViolated("need at least 3 matching samples".into()));
    }
    let scale = fs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fs.iter().any(|&v| v < -1e-12 * scale.max(1.0)) {
        return Err(ConditionError::PreconditionViolated("F must be nonnegative".into()));
    }
    let d = gradient(ts, fs);
    let i0 = ts
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t0).abs().partial_cmp(&(b.1 - t0).abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let kappa = d[i0].abs();
    let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if dmax > kappa * (1.0 + 1e-6) + 1e-12 {
        return Err(ConditionError::PreconditionViolated(format!("max |F'| = {dmax:e} exceeds |F'(t0)| = {kappa:e}")));
    }
    if t0.abs() < c * kappa.powf(rho) * (1.0 - 1e-9) {
        return Err(ConditionError::PreconditionViolated(format!("|t0| = {} below c*kappa^rho", t0.abs())));
    }
    let lhs = fs.iter().cloned().fold(0.0, f64::max);
    let constant = table.constant(rho, c);
    let rhs = constant * kappa.powf(1.0 + rho);
    Ok(IntlemResult { kappa, lhs, rhs, constant, pass: lhs >= rhs * (1.0 - 1e-9) })
}

pub fn slope_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    ls_slope(xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_of_plateau() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g = [1.0, 1.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(crossing_gap(&g, &ts), 3.0);
    }

    #[test]
    fn table_lookup() {
        let t = IntlemTable::default();
        assert_eq!(t.constant(1.0, 1.0), 0.5);
        assert!((t.constant(0.5, 1.0) - 0.1).abs() < 1e-15);
    }
}
