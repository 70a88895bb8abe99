//! BFGS minimization with Armijo backtracking.

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective change falls below this.
    pub rel_tol: f64,
    /// Largest step (∞-norm) taken in one iteration.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-5,
            rel_tol: 1e-9,
            max_step: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterate after each accepted step, starting with the initial point.
    pub trace: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the value and gradient. Evaluation errors
/// during the line search count as `+∞`; an error at `x0` is returned.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = vec![vec![0.0; n]; n];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut trace = vec![x.clone()];
    let mut converged = inf_norm(&g) <= opts.grad_tol;
    let mut iterations = 0;
    let mut first = true;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        if dot(&d, &g) >= 0.0 {
            // lost descent; restart from steepest descent
            for (i, row) in hinv.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
            d = g.iter().map(|v| -v).collect();
        }
        let dn = inf_norm(&d);
        if dn > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / dn);
        }
        let slope = dot(&d, &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Ok((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            log::debug!("event=bfgs_line_search_failed iter={iterations}");
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                // initial scaling of the inverse Hessian
                let scale = sy / dot(&y, &y);
                hinv.iter_mut().flatten().for_each(|v| *v *= scale);
                first = false;
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        let rel = (fx - fnew).abs() / fx.abs().max(1e-300);
        x = xn;
        fx = fnew;
        g = gnew;
        trace.push(x.clone());
        log::trace!("event=bfgs_iter iter={iterations} f={fx} gmax={}", inf_norm(&g));
        converged = inf_norm(&g) <= opts.grad_tol || rel <= opts.rel_tol;
    }
    Ok(BfgsOutcome {
        x,
        f: fx,
        grad: g,
        iterations,
        converged,
        trace,
    })
}
