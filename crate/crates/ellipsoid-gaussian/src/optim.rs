//! Dense BFGS with Armijo backtracking, for the small unconstrained problems
//! behind the ellipsoid initializer (a dozen variables or so).

use nalgebra::{DMatrix, DVector};

#[allow(dead_code)] // grad_norm and trace are read by tests and diagnostics
pub(crate) struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Objective value after every accepted step (non-increasing).
    pub trace: Vec<f64>,
}

/// Minimize `f` from `x0`. `func` returns the value and gradient.
pub(crate) fn bfgs<F>(func: F, x0: DVector<f64>, max_iter: usize, grad_tol: f64) -> BfgsResult
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = func(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![f];
    let mut converged = g.norm() <= grad_tol;

    for _ in 0..max_iter {
        if g.norm() <= grad_tol {
            converged = true;
            break;
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            // safeguard against a broken curvature model
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }

        // Armijo backtracking
        let slope = g.dot(&dir);
        let mut step = 1.0f64;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = f;
        let mut g_new = g.clone();
        for _ in 0..50 {
            x_new = &x + step * &dir;
            let (fv, gv) = func(&x_new);
            if fv.is_finite() && fv <= f + 1e-4 * step * slope {
                f_new = fv;
                g_new = gv;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // standard BFGS inverse-Hessian update
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h = &h - rho * (&hy * s.transpose() + &s * hy.transpose())
                + rho * rho * (sy + yhy) * (&s * s.transpose());
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    let grad_norm = g.norm();
    BfgsResult { x, f, grad_norm, converged: converged || grad_norm <= grad_tol, trace }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let func = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_column_slice(&[
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            (f, g)
        };
        let res = bfgs(func, DVector::from_column_slice(&[-1.2, 1.0]), 500, 1e-10);
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-6);
        assert!((res.x[1] - 1.0).abs() < 1e-6);
        // trace is non-increasing by construction
        for w in res.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
