//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

const HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;

/// Minimise a smooth function given as `f(x) -> (value, gradient)`.
/// Accepted steps do not increase the value beyond its rounding resolution; stops when the gradient
/// infinity norm is at most `tol` or after `max_iter` iterations.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, max_iter: usize, tol: f64) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    let mut iterations = 0;
    while iterations < max_iter {
        if inf_norm(&grad) <= tol {
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&grad, &d);
        if slope >= 0.0 {
            // not a descent direction: restart from steepest descent
            history.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let mut step = if history.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        let grad_norm = dot(&grad, &grad).sqrt();
        for _ in 0..60 {
            let candidate: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (v, g) = f(&candidate);
            if v.is_finite() && v <= value + ARMIJO * step * slope {
                accepted = Some((candidate, v, g));
                break;
            }
            // the sufficient decrease is below the resolution of `value`:
            // accept a step that shrinks the gradient without a resolvable increase
            let resolution = 8.0 * f64::EPSILON * value.abs().max(1.0);
            if v.is_finite()
                && v <= value + resolution
                && -ARMIJO * step * slope < resolution
                && dot(&g, &g).sqrt() < grad_norm
            {
                accepted = Some((candidate, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value, next_grad)) = accepted else {
            break;
        };
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = next;
        value = next_value;
        grad = next_grad;
    }
    let grad_inf_norm = inf_norm(&grad);
    Minimum {
        x,
        value,
        grad_inf_norm,
        iterations,
        converged: grad_inf_norm <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |p| {
                let (a, b) = (p[0], p[1]);
                let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ];
                (v, g)
            },
            vec![-1.2, 1.0],
            500,
            1e-8,
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_in_one_step_direction() {
        let m = minimize(
            |p| {
                (
                    p[0] * p[0] + 3.0 * p[1] * p[1],
                    vec![2.0 * p[0], 6.0 * p[1]],
                )
            },
            vec![4.0, -2.0],
            100,
            1e-10,
        );
        assert!(m.converged);
        assert!(m.value < 1e-18);
    }
}
