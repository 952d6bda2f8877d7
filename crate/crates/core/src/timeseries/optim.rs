//! Quasi-Newton minimisation with finite-difference gradients.

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Option<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1e-2);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = match (up.is_finite(), down.is_finite()) {
            (true, true) => (up - down) / (2.0 * h),
            (true, false) => (up - fx) / h,
            (false, true) => (fx - down) / h,
            (false, false) => return None,
        };
    }
    Some(g)
}

/// BFGS with Armijo backtracking. `f` may return non-finite values to mark
/// infeasible points.
pub(crate) fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], max_iter: usize) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 || !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            converged: n == 0 && fx.is_finite(),
        };
    }
    let mut g = match gradient(&f, &x, fx) {
        Some(g) => g,
        None => {
            return Minimum {
                x,
                value: fx,
                converged: false,
            }
        }
    };
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut converged = false;
    for _ in 0..max_iter {
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < 1e-7 {
            converged = true;
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            h = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            converged = gnorm < 1e-4;
            break;
        };
        let Some(gn) = gradient(&f, &xn, fnew) else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let df = fx - fnew;
        x = xn;
        g = gn;
        fx = fnew;
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        if df.abs() < 1e-14 * (fx.abs() + 1e-10) {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Central-difference Hessian.
pub(crate) fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    let steps: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1e-1)).collect();
    let mut p = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                p[i] = x[i] + steps[i];
                let up = f(&p);
                p[i] = x[i] - steps[i];
                let down = f(&p);
                p[i] = x[i];
                (up - 2.0 * f0 + down) / (steps[i] * steps[i])
            } else {
                let mut eval = |di: f64, dj: f64| {
                    p[i] = x[i] + di * steps[i];
                    p[j] = x[j] + dj * steps[j];
                    let v = f(&p);
                    p[i] = x[i];
                    p[j] = x[j];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * steps[i] * steps[j])
            };
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}
