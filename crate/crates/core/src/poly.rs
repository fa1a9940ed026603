//! Truncated multivariate polynomials with complex coefficients.
//!
//! Monomials are indexed in graded order up to a fixed total degree; products
//! drop every term above that degree, which is exactly the Taylor truncation
//! the phase and amplitude hierarchies need.

use num_complex::Complex64 as C64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Debug)]
pub struct Basis {
    pub nvars: usize,
    pub degree: usize,
    exps: Vec<Vec<u8>>,
    degs: Vec<usize>,
    lookup: HashMap<Vec<u8>, usize>,
    mul: Vec<Vec<(u32, u32)>>,
    deriv: Vec<Vec<Option<(usize, f64)>>>,
    shift: Vec<Vec<Option<usize>>>,
}

fn enumerate(nvars: usize, deg: usize, out: &mut Vec<Vec<u8>>) {
    // all exponent vectors of total degree exactly `deg`, lexicographically descending
    fn rec(v: usize, nvars: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if v + 1 == nvars {
            cur.push(left as u8);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e as u8);
            rec(v + 1, nvars, left - e, cur, out);
            cur.pop();
        }
    }
    if nvars == 0 {
        if deg == 0 {
            out.push(Vec::new());
        }
        return;
    }
    rec(0, nvars, deg, &mut Vec::with_capacity(nvars), out);
}

impl Basis {
    fn build(nvars: usize, degree: usize) -> Basis {
        let mut exps = Vec::new();
        for d in 0..=degree {
            enumerate(nvars, d, &mut exps);
        }
        let degs: Vec<usize> = exps.iter().map(|e| e.iter().map(|&x| x as usize).sum()).collect();
        let lookup: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let n = exps.len();
        let mut mul = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if degs[i] + degs[j] > degree {
                    continue;
                }
                let e: Vec<u8> = exps[i].iter().zip(&exps[j]).map(|(a, b)| a + b).collect();
                mul[i].push((j as u32, lookup[&e] as u32));
            }
        }
        let mut deriv = vec![vec![None; n]; nvars];
        let mut shift = vec![vec![None; n]; nvars];
        for v in 0..nvars {
            for i in 0..n {
                let e = &exps[i];
                if e[v] > 0 {
                    let mut d = e.clone();
                    d[v] -= 1;
                    deriv[v][i] = Some((lookup[&d], e[v] as f64));
                }
                if degs[i] < degree {
                    let mut s = e.clone();
                    s[v] += 1;
                    shift[v][i] = Some(lookup[&s]);
                }
            }
        }
        Basis { nvars, degree, exps, degs, lookup, mul, deriv, shift }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exps(&self) -> &[Vec<u8>] {
        &self.exps
    }

    pub fn exp(&self, i: usize) -> &[u8] {
        &self.exps[i]
    }

    pub fn deg(&self, i: usize) -> usize {
        self.degs[i]
    }

    pub fn index(&self, e: &[u8]) -> Option<usize> {
        self.lookup.get(e).copied()
    }

    /// Index range of the monomials of total degree exactly `d`.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        let lo = self.degs.partition_point(|&x| x < d);
        let hi = self.degs.partition_point(|&x| x <= d);
        lo..hi
    }
}

/// Shared basis for a given variable count and degree.
pub fn basis(nvars: usize, degree: usize) -> Arc<Basis> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Basis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut g = cache.lock().expect("basis cache poisoned");
    g.entry((nvars, degree))
        .or_insert_with(|| Arc::new(Basis::build(nvars, degree)))
        .clone()
}

pub fn factorial(e: &[u8]) -> f64 {
    e.iter().map(|&k| (1..=k as u64).product::<u64>() as f64).product()
}

#[derive(Clone, Debug)]
pub struct Poly {
    pub basis: Arc<Basis>,
    pub c: Vec<C64>,
}

impl Poly {
    pub fn zero(b: &Arc<Basis>) -> Poly {
        Poly { basis: b.clone(), c: vec![C64::new(0.0, 0.0); b.len()] }
    }

    pub fn constant(b: &Arc<Basis>, v: C64) -> Poly {
        let mut p = Poly::zero(b);
        p.c[0] = v;
        p
    }

    pub fn var(b: &Arc<Basis>, v: usize) -> Poly {
        let mut p = Poly::zero(b);
        if b.degree >= 1 {
            let mut e = vec![0u8; b.nvars];
            e[v] = 1;
            p.c[b.index(&e).unwrap()] = C64::new(1.0, 0.0);
        }
        p
    }

    pub fn coeff(&self, e: &[u8]) -> C64 {
        self.basis.index(e).map(|i| self.c[i]).unwrap_or_default()
    }

    pub fn set(&mut self, e: &[u8], v: C64) {
        if let Some(i) = self.basis.index(e) {
            self.c[i] = v;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn add_assign(&mut self, o: &Poly) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, o: &Poly, s: C64) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b * s;
        }
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (a, b) in r.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        r
    }

    pub fn scale(&self, s: C64) -> Poly {
        Poly { basis: self.basis.clone(), c: self.c.iter().map(|z| z * s).collect() }
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::zero(&self.basis);
        for (i, a) in self.c.iter().enumerate() {
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            for &(j, k) in &self.basis.mul[i] {
                let b = o.c[j as usize];
                if b.re != 0.0 || b.im != 0.0 {
                    r.c[k as usize] += a * b;
                }
            }
        }
        r
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut r = Poly::constant(&self.basis, C64::new(1.0, 0.0));
        for _ in 0..n {
            r = r.mul(self);
        }
        r
    }

    /// Partial derivative in variable `v`; the top degree becomes zero.
    pub fn deriv(&self, v: usize) -> Poly {
        let mut r = Poly::zero(&self.basis);
        for (i, a) in self.c.iter().enumerate() {
            if let Some((j, f)) = self.basis.deriv[v][i] {
                r.c[j] += a * f;
            }
        }
        r
    }

    /// Multiplication by the variable `v` (truncating).
    pub fn times_var(&self, v: usize) -> Poly {
        let mut r = Poly::zero(&self.basis);
        for (i, a) in self.c.iter().enumerate() {
            if let Some(j) = self.basis.shift[v][i] {
                r.c[j] += a;
            }
        }
        r
    }

    /// Copy into another basis with the same variable count; extra terms are dropped.
    pub fn rebase(&self, b: &Arc<Basis>) -> Poly {
        assert_eq!(self.basis.nvars, b.nvars);
        let mut r = Poly::zero(b);
        for (i, a) in self.c.iter().enumerate() {
            if let Some(j) = b.index(self.basis.exp(i)) {
                r.c[j] = *a;
            }
        }
        r
    }

    /// Keep only monomials of total degree in `lo..=hi`.
    pub fn degree_slice(&self, lo: usize, hi: usize) -> Poly {
        let mut r = self.clone();
        for (i, z) in r.c.iter_mut().enumerate() {
            let d = self.basis.deg(i);
            if d < lo || d > hi {
                *z = C64::default();
            }
        }
        r
    }

    pub fn eval(&self, z: &[f64]) -> C64 {
        let b = &self.basis;
        let mut pw = vec![vec![1.0; b.degree + 1]; b.nvars];
        for v in 0..b.nvars {
            for p in 1..=b.degree {
                pw[v][p] = pw[v][p - 1] * z[v];
            }
        }
        let mut s = C64::default();
        for (i, a) in self.c.iter().enumerate() {
            let mut m = 1.0;
            for (v, &e) in b.exp(i).iter().enumerate() {
                m *= pw[v][e as usize];
            }
            s += a * m;
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Evaluator for many points of one polynomial: stores exponents flat.
pub struct FlatPoly {
    nvars: usize,
    degree: usize,
    terms: Vec<(C64, Vec<u8>)>,
}

impl FlatPoly {
    pub fn new(p: &Poly) -> FlatPoly {
        let terms = p
            .c
            .iter()
            .enumerate()
            .filter(|(_, z)| z.re != 0.0 || z.im != 0.0)
            .map(|(i, z)| (*z, p.basis.exp(i).to_vec()))
            .collect();
        FlatPoly { nvars: p.basis.nvars, degree: p.basis.degree, terms }
    }

    /// Evaluate with caller-provided power tables `pw[v][e]`.
    #[inline]
    pub fn eval_pw(&self, pw: &[Vec<f64>]) -> C64 {
        let mut s = C64::default();
        for (a, e) in &self.terms {
            let mut m = 1.0;
            for (v, &k) in e.iter().enumerate() {
                if k > 0 {
                    m *= pw[v][k as usize];
                }
            }
            s += a * m;
        }
        s
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
}

pub fn power_table(z: &[f64], degree: usize, pw: &mut Vec<Vec<f64>>) {
    pw.resize(z.len(), Vec::new());
    for (v, &x) in z.iter().enumerate() {
        let row = &mut pw[v];
        row.resize(degree + 1, 1.0);
        row[0] = 1.0;
        for p in 1..=degree {
            row[p] = row[p - 1] * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn basis_sizes_are_binomial() {
        assert_eq!(basis(2, 4).len(), 15);
        assert_eq!(basis(3, 2).len(), 10);
        assert_eq!(basis(1, 6).len(), 7);
        let b = basis(2, 4);
        assert_eq!(b.degree_range(2), 3..6);
    }

    #[test]
    fn product_truncates() {
        let b = basis(2, 3);
        let x = Poly::var(&b, 0);
        let y = Poly::var(&b, 1);
        let p = x.mul(&x).mul(&y);
        assert_eq!(p.coeff(&[2, 1]), c(1.0));
        assert!(p.mul(&x).is_zero());
    }

    #[test]
    fn binomial_expansion() {
        let b = basis(1, 5);
        let one = Poly::constant(&b, c(1.0));
        let mut s = Poly::var(&b, 0);
        s.add_assign(&one);
        let p = s.pow(5);
        let expected = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0];
        for (k, e) in expected.iter().enumerate() {
            assert_eq!(p.coeff(&[k as u8]), c(*e));
        }
    }

    #[test]
    fn derivative_and_shift() {
        let b = basis(2, 4);
        let mut p = Poly::zero(&b);
        p.set(&[3, 1], c(2.0));
        let d = p.deriv(0);
        assert_eq!(d.coeff(&[2, 1]), c(6.0));
        let s = d.times_var(1);
        assert_eq!(s.coeff(&[2, 2]), c(6.0));
    }
}
