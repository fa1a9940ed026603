//! Fixed-step RK4 with stored derivatives (for Hermite interpolation) and an
//! adaptive Dormand–Prince 5(4) used as an independent cross-check.

use num_complex::Complex64 as C64;

#[derive(Clone, Debug)]
pub struct Samples {
    pub t: Vec<f64>,
    pub y: Vec<Vec<C64>>,
    pub dy: Vec<Vec<C64>>,
}

fn axpy(y: &[C64], a: f64, k: &[C64]) -> Vec<C64> {
    y.iter().zip(k).map(|(u, v)| u + v * a).collect()
}

/// Integrates from t0 to t1 (either direction) in `n` equal steps. Stops early
/// when `accept` rejects a state; the returned samples end at the last good node.
pub fn rk4<E>(
    mut f: impl FnMut(f64, &[C64]) -> Result<Vec<C64>, E>,
    mut accept: impl FnMut(f64, &[C64]) -> bool,
    t0: f64,
    y0: Vec<C64>,
    t1: f64,
    n: usize,
) -> Result<(Samples, bool), E> {
    let h = (t1 - t0) / n as f64;
    let mut out = Samples { t: Vec::with_capacity(n + 1), y: Vec::with_capacity(n + 1), dy: Vec::with_capacity(n + 1) };
    let mut y = y0;
    let mut t = t0;
    let mut k1 = f(t, &y)?;
    out.t.push(t);
    out.y.push(y.clone());
    out.dy.push(k1.clone());
    for i in 0..n {
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1))?;
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2))?;
        let k4 = f(t + h, &axpy(&y, h, &k3))?;
        let yn: Vec<C64> = (0..y.len()).map(|j| y[j] + (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0)).collect();
        let tn = t0 + h * (i + 1) as f64;
        if !accept(tn, &yn) {
            return Ok((out, false));
        }
        y = yn;
        t = tn;
        k1 = f(t, &y)?;
        out.t.push(t);
        out.y.push(y.clone());
        out.dy.push(k1.clone());
    }
    Ok((out, true))
}

/// Adaptive Dormand–Prince 5(4); returns the state at t1.
pub fn dopri5<E>(
    mut f: impl FnMut(f64, &[C64]) -> Result<Vec<C64>, E>,
    t0: f64,
    y0: Vec<C64>,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> Result<Vec<C64>, E> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut h = (t1 - t0).abs() * 1e-3;
    let n = y.len();
    while (t1 - t) * dir > 0.0 {
        h = h.min((t1 - t).abs());
        let mut k: Vec<Vec<C64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..n {
                        ys[i] += kj[i] * (a * h * dir);
                    }
                }
            }
            k.push(f(t + C[s] * h * dir, &ys)?);
        }
        let mut err = 0.0f64;
        let mut yn = y.clone();
        for i in 0..n {
            let mut d5 = C64::default();
            let mut d4 = C64::default();
            for s in 0..7 {
                d5 += k[s][i] * B5[s];
                d4 += k[s][i] * B4[s];
            }
            yn[i] += d5 * (h * dir);
            let sc = atol + rtol * y[i].norm().max(yn[i].norm());
            err = err.max(((d5 - d4) * h).norm() / sc);
        }
        if err <= 1.0 {
            t += h * dir;
            y = yn;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    Ok(y)
}

/// Cubic Hermite interpolation of value and t-derivative on a sorted grid.
pub fn hermite(s: &Samples, t: f64) -> Option<(Vec<C64>, Vec<C64>)> {
    let n = s.t.len();
    if n == 0 || t < s.t[0] - 1e-13 || t > s.t[n - 1] + 1e-13 {
        return None;
    }
    if n == 1 {
        return Some((s.y[0].clone(), s.dy[0].clone()));
    }
    let k = s.t.partition_point(|&v| v <= t).clamp(1, n - 1);
    let (ta, tb) = (s.t[k - 1], s.t[k]);
    let h = tb - ta;
    let u = ((t - ta) / h).clamp(0.0, 1.0);
    let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
    let h10 = u * u * u - 2.0 * u * u + u;
    let h01 = -2.0 * u * u * u + 3.0 * u * u;
    let h11 = u * u * u - u * u;
    let d00 = (6.0 * u * u - 6.0 * u) / h;
    let d10 = 3.0 * u * u - 4.0 * u + 1.0;
    let d01 = (-6.0 * u * u + 6.0 * u) / h;
    let d11 = 3.0 * u * u - 2.0 * u;
    let (ya, yb, da, db) = (&s.y[k - 1], &s.y[k], &s.dy[k - 1], &s.dy[k]);
    let m = ya.len();
    let mut v = Vec::with_capacity(m);
    let mut d = Vec::with_capacity(m);
    for i in 0..m {
        v.push(ya[i] * h00 + da[i] * (h10 * h) + yb[i] * h01 + db[i] * (h11 * h));
        d.push(ya[i] * d00 + da[i] * d10 + yb[i] * d01 + db[i] * d11);
    }
    Some((v, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[C64]) -> Result<Vec<C64>, ()> {
        Ok(vec![y[0] * C64::new(-1.0, 2.0)])
    }

    #[test]
    fn rk4_matches_exponential() {
        let (s, done) = rk4(decay, |_, _| true, 0.0, vec![C64::new(1.0, 0.0)], 1.0, 200).unwrap();
        assert!(done);
        let exact = C64::new(-1.0, 2.0).exp();
        assert!((s.y[200][0] - exact).norm() < 1e-9);
    }

    #[test]
    fn dopri_matches_exponential_backwards() {
        let y = dopri5(decay, 0.0, vec![C64::new(1.0, 0.0)], -1.0, 1e-11, 1e-13).unwrap();
        let exact = C64::new(1.0, -2.0).exp();
        assert!((y[0] - exact).norm() < 1e-9);
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let ts: Vec<f64> = (0..5).map(|i| i as f64 * 0.5).collect();
        let f = |t: f64| t * t * t - t;
        let df = |t: f64| 3.0 * t * t - 1.0;
        let s = Samples {
            t: ts.clone(),
            y: ts.iter().map(|&t| vec![C64::new(f(t), 0.0)]).collect(),
            dy: ts.iter().map(|&t| vec![C64::new(df(t), 0.0)]).collect(),
        };
        let (v, d) = hermite(&s, 1.3).unwrap();
        assert!((v[0].re - f(1.3)).abs() < 1e-12);
        assert!((d[0].re - df(1.3)).abs() < 1e-12);
    }
}
