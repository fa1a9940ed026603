//! Field synthesis on a tensor grid, the two realizations of P*, discrete
//! Sobolev norms and the conic Fourier multiplier.

use crate::eikonal::{min_eig, PhaseTrajectory};
use crate::poly::{power_table, Basis, FlatPoly, Poly};
use crate::symbols::ModelProblem;
use crate::transport::{expansion_residual_poly, residual_degree, AmplitudeSet, TransportError, TransportModel};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum SynthError {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("grid needs {points} points per field, budget is {budget}")]
    MemoryBudget { points: usize, budget: usize },
    #[error("model has no differential-operator realization")]
    MissingDiffOp,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Complex field on a uniform tensor grid, axes ordered (t, x…, y…), row-major.
#[derive(Clone, Debug)]
pub struct FieldGrid {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub values: Vec<C64>,
    pub lambda: f64,
}

impl FieldGrid {
    pub fn zeros_like(&self) -> FieldGrid {
        FieldGrid { values: vec![C64::default(); self.values.len()], ..self.clone() }
    }

    pub fn axes(&self) -> Vec<&Vec<f64>> {
        std::iter::once(&self.t).chain(self.x.iter()).chain(self.y.iter()).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes().iter().map(|a| a.len()).collect()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes().iter().map(|a| if a.len() > 1 { a[1] - a[0] } else { 1.0 }).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Points per (t-slice).
    pub fn slice_len(&self) -> usize {
        self.x.iter().chain(self.y.iter()).map(|a| a.len()).product()
    }

    /// Spatial coordinates of the flat index inside a t-slice.
    pub fn coords(&self, mut j: usize, x: &mut [f64], y: &mut [f64]) {
        for a in (0..self.y.len()).rev() {
            let n = self.y[a].len();
            y[a] = self.y[a][j % n];
            j /= n;
        }
        for i in (0..self.x.len()).rev() {
            let n = self.x[i].len();
            x[i] = self.x[i][j % n];
            j /= n;
        }
    }

    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell_volume()).sqrt()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn sub(&self, o: &FieldGrid) -> FieldGrid {
        FieldGrid { values: self.values.iter().zip(&o.values).map(|(a, b)| a - b).collect(), ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub n_t: Option<usize>,
    pub n_gx: Option<usize>,
    pub n_gy: Option<usize>,
    pub n_t_max: usize,
    /// support fraction of each spatial box side (0.8 leaves a 10% margin per side)
    pub margin: f64,
    pub h_over_sigma: f64,
    pub budget: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_t: None, n_gx: None, n_gy: None, n_t_max: 257, margin: 0.8, h_over_sigma: 0.09, budget: 1 << 24 }
    }
}

/// Smallest 2^a 3^b 5^c ≥ n.
pub fn smooth_up(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn smooth_down(n: usize) -> usize {
    (1..=n).rev().find(|&m| smooth_up(m) == m).unwrap_or(1)
}

fn axis(center: f64, side: f64, n: usize) -> Vec<f64> {
    let h = side / n as f64;
    (0..n).map(|j| center - side / 2.0 + j as f64 * h).collect()
}

/// t-width where λ·Im w₀ first exceeds 1/2 on either side of the anchor.
pub fn t_width(traj: &PhaseTrajectory) -> f64 {
    let s = &traj.samples;
    let lam = traj.scales.lambda;
    let i0 = (0..s.t.len()).min_by(|&a, &b| s.y[a][0].im.total_cmp(&s.y[b][0].im)).unwrap_or(0);
    let right = (i0..s.t.len()).find(|&i| lam * s.y[i][0].im > 0.5).map(|i| s.t[i] - s.t[i0]);
    let left = (0..=i0).rev().find(|&i| lam * s.y[i][0].im > 0.5).map(|i| s.t[i0] - s.t[i]);
    let full = s.t[s.t.len() - 1] - s.t[0];
    match (left, right) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => full,
    }
}

pub fn build_grid(traj: &PhaseTrajectory, amp: &AmplitudeSet, spec: &GridSpec) -> Result<FieldGrid, SynthError> {
    let l = &traj.layout;
    let lam = traj.scales.lambda;
    let (lo, hi) = (traj.samples.t[0], *traj.samples.t.last().unwrap());
    let len = hi - lo;
    let sigma = t_width(traj);
    let n_t = match spec.n_t {
        Some(n) => n,
        None => {
            let want = ((1.2 * len) / (spec.h_over_sigma * sigma)).ceil() as usize + 1;
            let n = smooth_up(want);
            if n > spec.n_t_max {
                smooth_down(spec.n_t_max)
            } else {
                n
            }
        }
    };
    let side_t = 1.2 * len;
    let h_t = side_t / n_t as f64;
    if h_t / sigma > 0.25 {
        return Err(SynthError::GridTooCoarse(format!("h_t / sigma_t = {:.3} > 0.25", h_t / sigma)));
    }
    let t: Vec<f64> = (0..n_t).map(|j| lo - 0.1 * len + (j as f64 + 0.5) * h_t).collect();

    // spatial extents and frequency content over the χ-support
    let (sx, sy) = amp.cutoff.support();
    let mut xr = vec![(f64::INFINITY, f64::NEG_INFINITY); l.nx];
    let mut yr = vec![(f64::INFINITY, f64::NEG_INFINITY); l.ny];
    let mut kx = vec![0.0f64; l.nx];
    let mut ky = vec![0.0f64; l.ny];
    let (mut im20, mut im02, mut re20, mut re02) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, v) in traj.samples.y.iter().enumerate() {
        if amp.cutoff.chi(v[0].im) == 0.0 && i != 0 && i + 1 != traj.samples.y.len() {
            continue;
        }
        let st = traj.state(i);
        for d in 0..l.nx {
            let x0 = v[l.x0() + d].re;
            xr[d] = (xr[d].0.min(x0), xr[d].1.max(x0));
            kx[d] = kx[d].max(lam * v[l.xi0() + d].re.abs());
        }
        let ell = crate::eikonal::PhaseAtT { layout: l, scales: traj.scales, eta_base: &traj.eta_base, pass1: false }.ell(v);
        for a in 0..l.ny {
            let y0 = v[l.y0() + a].re;
            yr[a] = (yr[a].0.min(y0), yr[a].1.max(y0));
            ky[a] = ky[a].max(lam * ell[a].abs());
        }
        let w20 = st.w20();
        let w02 = st.w02();
        im20 = im20.max(-min_eig(&(-w20.map(|z| z.im))));
        im02 = im02.max(-min_eig(&(-w02.map(|z| z.im))));
        re20 = re20.max(w20.map(|z| z.re.abs()).max());
        re02 = re02.max(w02.map(|z| z.re.abs()).max());
    }
    let s_y = traj.scales.s_y;
    let mut xs = Vec::new();
    for d in 0..l.nx {
        let side = ((xr[d].1 - xr[d].0) + 2.0 * sx) / spec.margin;
        let k = kx[d] + 7.0 * (lam * im20).sqrt() + lam * re20 * side / 2.0;
        let h = (PI / (3.0 * kx[d].max(1e-300))).min(PI / k);
        let n = spec.n_gx.unwrap_or_else(|| smooth_up((side / h).ceil() as usize));
        if spec.n_gx.is_some() && (side / n as f64) * kx[d] > PI / 3.0 * 1.000001 {
            return Err(SynthError::GridTooCoarse(format!("x spacing misses Nyquist with n_gx = {n}")));
        }
        xs.push(axis(0.5 * (xr[d].0 + xr[d].1), side, n));
    }
    let mut ys = Vec::new();
    for a in 0..l.ny {
        let side = ((yr[a].1 - yr[a].0) + 2.0 * sy) / spec.margin;
        let k = ky[a] + 7.0 * (lam * s_y * im02).sqrt() + lam * s_y * re02 * side / 2.0;
        let n = spec.n_gy.unwrap_or_else(|| smooth_up((side * k / PI).ceil().max(8.0) as usize));
        ys.push(axis(0.5 * (yr[a].0 + yr[a].1), side, n));
    }
    let points = n_t * xs.iter().chain(ys.iter()).map(|a| a.len()).product::<usize>();
    if points > spec.budget {
        return Err(SynthError::MemoryBudget { points, budget: spec.budget });
    }
    Ok(FieldGrid { t, x: xs, y: ys, values: vec![C64::default(); points], lambda: lam })
}

/// Shared per-slice evaluation: e^{iλω}·p(Z)·χ·ψ for the polynomial p given by `amp_poly`.
fn fill<F>(traj: &PhaseTrajectory, amp: &AmplitudeSet, grid: &FieldGrid, mut amp_poly: F) -> Result<FieldGrid, SynthError>
where
    F: FnMut(f64) -> Result<Option<Poly>, SynthError>,
{
    let l = &traj.layout;
    let (nx, ny) = (l.nx, l.ny);
    let lam = traj.scales.lambda;
    let m = grid.slice_len();
    let mut out = grid.zeros_like();
    let mut xb = vec![0.0; nx];
    let mut yb = vec![0.0; ny];
    let mut pw = Vec::new();
    let mut pw2 = Vec::new();
    let mut z = vec![0.0; nx + ny];
    for (it, &t) in grid.t.iter().enumerate() {
        let Ok((v, _)) = traj.state_at(t) else { continue };
        let chi = amp.cutoff.chi(v[0].im);
        if chi == 0.0 {
            continue;
        }
        let Some(p) = amp_poly(t)? else { continue };
        let slice = traj.slice(t, &l.basis).map_err(TransportError::from)?;
        let om = FlatPoly::new(&slice.omega);
        let fp = FlatPoly::new(&p);
        for j in 0..m {
            grid.coords(j, &mut xb, &mut yb);
            for i in 0..nx {
                z[i] = xb[i] - slice.x0[i];
            }
            for a in 0..ny {
                z[nx + a] = yb[a] - slice.y0[a];
            }
            let psi = amp.cutoff.psi(&z[..nx], &z[nx..]);
            if psi == 0.0 {
                continue;
            }
            power_table(&z, om.degree(), &mut pw);
            power_table(&z, fp.degree(), &mut pw2);
            let w = om.eval_pw(&pw);
            let e = (C64::new(0.0, lam) * w).exp();
            out.values[it * m + j] = e * fp.eval_pw(&pw2) * (chi * psi);
        }
    }
    Ok(out)
}

pub fn synthesize(traj: &PhaseTrajectory, amp: &AmplitudeSet, grid: &FieldGrid) -> Result<FieldGrid, SynthError> {
    fill(traj, amp, grid, |t| Ok(amp.sum_at(t).map(|(a, _)| a)))
}

/// e^{iλω}·[e^{−iλω}P*(e^{iλω}A)]·χψ; cutoff derivatives are not included.
pub fn apply_via_expansion(
    traj: &PhaseTrajectory,
    amp: &AmplitudeSet,
    model: &ModelProblem,
    grid: &FieldGrid,
) -> Result<FieldGrid, SynthError> {
    let tm = TransportModel::new(model);
    let d = residual_degree(&tm, traj.layout.k_trunc, amp.m_a);
    let b: Arc<Basis> = crate::poly::basis(model.nx + model.ny, d);
    fill(traj, amp, grid, |t| Ok(Some(expansion_residual_poly(&tm, traj, amp, t, &b)?)))
}

/// Strides of a row-major shape.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Apply `f` to every 1-D line along `axis` (gathered into a buffer, scattered back).
fn for_lines(data: &mut [C64], shape: &[usize], axis: usize, mut f: impl FnMut(&mut [C64])) {
    let st = strides(shape);
    let n = shape[axis];
    let stride = st[axis];
    let total: usize = shape.iter().product();
    let mut buf = vec![C64::default(); n];
    for base in 0..total {
        if (base / stride) % n != 0 {
            continue;
        }
        for (j, b) in buf.iter_mut().enumerate() {
            *b = data[base + j * stride];
        }
        f(&mut buf);
        for (j, b) in buf.iter().enumerate() {
            data[base + j * stride] = *b;
        }
    }
}

fn fft_axis(data: &mut [C64], shape: &[usize], axis: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let n = shape[axis];
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    for_lines(data, shape, axis, |line| {
        fft.process(line);
        if inverse {
            for z in line.iter_mut() {
                *z *= scale;
            }
        }
    });
}

/// Physical angular wavenumbers of a periodic axis of length n·h.
pub fn wavenumbers(n: usize, h: f64) -> Vec<f64> {
    let l = n as f64 * h;
    (0..n).map(|j| 2.0 * PI / l * if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 }).collect()
}

/// D^p = (−i∂)^p along one spatial axis, spectrally.
fn spectral_d(data: &mut [C64], shape: &[usize], axis: usize, h: f64, p: u32, planner: &mut FftPlanner<f64>) {
    if p == 0 {
        return;
    }
    let n = shape[axis];
    let k = wavenumbers(n, h);
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    for_lines(data, shape, axis, |line| {
        fwd.process(line);
        for (j, z) in line.iter_mut().enumerate() {
            let nyq = n % 2 == 0 && j == n / 2 && p % 2 == 1;
            *z *= if nyq { 0.0 } else { k[j].powi(p as i32) / n as f64 };
        }
        inv.process(line);
    });
}

/// D_t by fourth-order differences, one-sided at the two ends.
fn fd_dt(data: &mut [C64], shape: &[usize], h: f64) {
    let n = shape[0];
    let ih = C64::new(0.0, -1.0) / (12.0 * h);
    for_lines(data, shape, 0, |f| {
        if n < 5 {
            let g: Vec<C64> = (0..n)
                .map(|i| {
                    let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                    (f[b] - f[a]) * C64::new(0.0, -1.0) / (h * (b - a).max(1) as f64)
                })
                .collect();
            f.copy_from_slice(&g);
            return;
        }
        let mut g = vec![C64::default(); n];
        g[0] = (f[0] * -25.0 + f[1] * 48.0 - f[2] * 36.0 + f[3] * 16.0 - f[4] * 3.0) * ih;
        g[1] = (f[0] * -3.0 - f[1] * 10.0 + f[2] * 18.0 - f[3] * 6.0 + f[4]) * ih;
        for i in 2..n - 2 {
            g[i] = if i >= 4 && i + 4 < n {
                // eighth-order central stencil in the interior
                ((f[i + 1] - f[i - 1]) * (4.0 / 5.0) - (f[i + 2] - f[i - 2]) * (1.0 / 5.0) + (f[i + 3] - f[i - 3]) * (4.0 / 105.0)
                    - (f[i + 4] - f[i - 4]) * (1.0 / 280.0))
                    * (ih * 12.0)
            } else {
                (-f[i + 2] + f[i + 1] * 8.0 - f[i - 1] * 8.0 + f[i - 2]) * ih
            };
        }
        g[n - 2] = (f[n - 1] * 3.0 + f[n - 2] * 10.0 - f[n - 3] * 18.0 + f[n - 4] * 6.0 - f[n - 5]) * ih;
        g[n - 1] = (f[n - 1] * 25.0 - f[n - 2] * 48.0 + f[n - 3] * 36.0 - f[n - 4] * 16.0 + f[n - 5] * 3.0) * ih;
        f.copy_from_slice(&g);
    });
}

/// Σ c(t,x,y)·D_t^a D_x^α D_y^β u with spectral x/y and finite-difference t derivatives
/// (eighth order inside, fourth order within four cells of either end).
pub fn apply_direct(model: &ModelProblem, field: &FieldGrid) -> Result<FieldGrid, SynthError> {
    if model.diff_op.is_empty() {
        return Err(SynthError::MissingDiffOp);
    }
    let shape = field.shape();
    let h = field.spacing();
    let (nx, ny) = (field.x.len(), field.y.len());
    let mut planner = FftPlanner::new();
    let mut out = field.zeros_like();
    let m = field.slice_len();
    let mut xb = vec![0.0; nx];
    let mut yb = vec![0.0; ny];
    for term in &model.diff_op {
        let mut d = field.values.clone();
        for i in 0..nx {
            spectral_d(&mut d, &shape, 1 + i, h[1 + i], term.dx[i], &mut planner);
        }
        for a in 0..ny {
            spectral_d(&mut d, &shape, 1 + nx + a, h[1 + nx + a], term.dy[a], &mut planner);
        }
        for _ in 0..term.dt {
            fd_dt(&mut d, &shape, h[0]);
        }
        for (it, &t) in field.t.iter().enumerate() {
            for j in 0..m {
                field.coords(j, &mut xb, &mut yb);
                let c = term.coefficient(t, &xb, &yb);
                out.values[it * m + j] += c * d[it * m + j];
            }
        }
    }
    Ok(out)
}

/// |u| on the (t, first x) plane; the remaining axes sit at the grid points nearest `x_fix`/`y_fix`.
#[derive(Clone, Debug)]
pub struct FieldSlice {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major n_t × n_x.
    pub abs: Vec<f64>,
}

pub fn tx_slice(u: &FieldGrid, x_fix: &[f64], y_fix: &[f64]) -> FieldSlice {
    let nearest = |axis: &[f64], v: f64| {
        (0..axis.len()).min_by(|&a, &b| (axis[a] - v).abs().total_cmp(&(axis[b] - v).abs())).unwrap_or(0)
    };
    let mut idx: Vec<usize> = u.x.iter().zip(x_fix).map(|(a, &v)| nearest(a, v)).collect();
    idx.extend(u.y.iter().zip(y_fix).map(|(a, &v)| nearest(a, v)));
    let dims: Vec<usize> = u.x.iter().chain(u.y.iter()).map(|a| a.len()).collect();
    let m = u.slice_len();
    let nx = dims[0];
    let mut abs = Vec::with_capacity(u.t.len() * nx);
    for it in 0..u.t.len() {
        for ix in 0..nx {
            idx[0] = ix;
            let j = idx.iter().zip(&dims).fold(0, |acc, (&i, &n)| acc * n + i);
            abs.push(u.values[it * m + j].norm());
        }
    }
    let y = u.y.iter().enumerate().map(|(a, ax)| ax[idx[u.x.len() + a]]).collect();
    FieldSlice { t: u.t.clone(), x: u.x[0].clone(), y, abs }
}

/// Full forward DFT over every axis (unnormalized).
pub fn dft(field: &FieldGrid) -> Vec<C64> {
    let shape = field.shape();
    let mut d = field.values.clone();
    let mut planner = FftPlanner::new();
    for a in 0..shape.len() {
        fft_axis(&mut d, &shape, a, false, &mut planner);
    }
    d
}

fn freq_norm2(shape: &[usize], ks: &[Vec<f64>], mut idx: usize) -> f64 {
    let mut s = 0.0;
    for a in (0..shape.len()).rev() {
        let j = idx % shape[a];
        idx /= shape[a];
        s += ks[a][j] * ks[a][j];
    }
    s
}

/// (Σ|û|²(1+|ζ|²)^s · Πh/Πn)^{1/2} with physical frequencies ζ.
pub fn sobolev_norm(field: &FieldGrid, s: f64) -> f64 {
    let shape = field.shape();
    let h = field.spacing();
    let ks: Vec<Vec<f64>> = shape.iter().zip(&h).map(|(&n, &hh)| wavenumbers(n, hh)).collect();
    let u = dft(field);
    let total: f64 = u
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let w = if s == 0.0 { 1.0 } else { (1.0 + freq_norm2(&shape, &ks, i)).powf(s) };
            z.norm_sqr() * w
        })
        .sum();
    let n: f64 = shape.iter().map(|&n| n as f64).product();
    (total * field.cell_volume() / n).sqrt()
}

/// C^∞ step: 0 for s ≤ 0, 1 for s ≥ 1.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

/// Fourier multiplier vanishing on the cone of half-angle `aperture` around
/// `direction` (in (τ, ξ, η) order) and equal to 1 outside twice that angle.
pub fn cone_cutoff_apply(field: &FieldGrid, direction: &[f64], aperture: f64) -> FieldGrid {
    let shape = field.shape();
    let h = field.spacing();
    let ks: Vec<Vec<f64>> = shape.iter().zip(&h).map(|(&n, &hh)| wavenumbers(n, hh)).collect();
    let dn = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut u = dft(field);
    let mut zeta = vec![0.0; shape.len()];
    for (i, z) in u.iter_mut().enumerate() {
        let mut idx = i;
        for a in (0..shape.len()).rev() {
            zeta[a] = ks[a][idx % shape[a]];
            idx /= shape[a];
        }
        let zn = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let m = if zn == 0.0 || dn == 0.0 {
            1.0
        } else {
            let c = zeta.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>() / (zn * dn);
            let theta = c.clamp(-1.0, 1.0).acos();
            smoothstep((theta - aperture) / aperture)
        };
        *z *= m;
    }
    let mut planner = FftPlanner::new();
    for a in 0..shape.len() {
        fft_axis(&mut u, &shape, a, true, &mut planner);
    }
    FieldGrid { values: u, ..field.clone() }
}

#[derive(Clone, Debug, Serialize)]
pub struct Norms {
    pub u_minus_n: f64,
    pub pu_nu: f64,
    pub u_minus_n_minus_n: f64,
    pub au_zero: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormParams {
    pub n_sob: f64,
    pub nu: f64,
    pub n_dim: usize,
    pub k_trunc: usize,
    pub m_a: usize,
    pub levels: usize,
    pub rho: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub lambda: f64,
    pub norms: Norms,
    pub ratio: f64,
    pub residual_expansion: f64,
    pub residual_direct: f64,
    /// ‖R_exp − R_direct‖ / ‖R_direct‖
    pub residual_gap: f64,
    pub params: NormParams,
    pub min_im_w0: f64,
    pub t0_anchor: f64,
    pub usable: (f64, f64),
    pub wall_ms: u64,
}

impl NormReport {
    pub fn recompute_ratio(&self) -> f64 {
        (self.norms.pu_nu + self.norms.u_minus_n_minus_n + self.norms.au_zero) / self.norms.u_minus_n
    }
}

/// Field dimension n = 1 + n_x + n_y.
pub fn dim(model: &ModelProblem) -> usize {
    1 + model.nx + model.ny
}

/// Frequency direction of the pseudomode at the anchor: (0, ξ₀, 0).
pub fn cone_direction(traj: &PhaseTrajectory) -> Vec<f64> {
    let l = &traj.layout;
    let v = &traj.samples.y[0];
    let mut d = vec![0.0; 1 + l.nx + l.ny];
    for i in 0..l.nx {
        d[1 + i] = v[l.xi0() + i].re;
    }
    d
}

#[allow(clippy::too_many_arguments)]
pub fn norm_report(
    model: &ModelProblem,
    traj: &PhaseTrajectory,
    amp: &AmplitudeSet,
    grid: &FieldGrid,
    n_sob: f64,
    nu: f64,
    aperture: f64,
    levels: usize,
) -> Result<(NormReport, FieldGrid), SynthError> {
    let u = synthesize(traj, amp, grid)?;
    let pu = apply_direct(model, &u)?;
    let rexp = apply_via_expansion(traj, amp, model, grid)?;
    let n = dim(model);
    let u0 = sobolev_norm(&u, 0.0);
    let au = cone_cutoff_apply(&u, &cone_direction(traj), aperture);
    let norms = Norms {
        u_minus_n: if n_sob == 0.0 { u0 } else { sobolev_norm(&u, -n_sob) },
        pu_nu: sobolev_norm(&pu, nu),
        u_minus_n_minus_n: sobolev_norm(&u, -n_sob - n as f64),
        au_zero: au.l2(),
    };
    let pd = pu.l2();
    let report = NormReport {
        lambda: traj.scales.lambda,
        ratio: (norms.pu_nu + norms.u_minus_n_minus_n + norms.au_zero) / norms.u_minus_n,
        norms,
        residual_expansion: rexp.l2() / u0,
        residual_direct: pd / u0,
        residual_gap: rexp.sub(&pu).l2() / pd,
        params: NormParams {
            n_sob,
            nu,
            n_dim: n,
            k_trunc: traj.layout.k_trunc,
            m_a: amp.m_a,
            levels,
            rho: traj.scales.rho,
        },
        min_im_w0: traj.im_w0_min,
        t0_anchor: traj.t0_anchor,
        usable: traj.usable,
        wall_ms: 0,
    };
    Ok((report, u))
}
