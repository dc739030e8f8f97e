//! Structured quasi-Newton minimization for small dense problems.
//!
//! The Hessian model is an exactly known part supplied by the objective plus
//! a symmetric rank-one secant approximation of one designated term.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::DenseSpd;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqnSettings {
    pub max_iterations: usize,
    /// Stop when `‖∇f‖∞ ≤ gtol · max(1, |f|)`.
    pub gtol: f64,
    /// Stop when an accepted step lowers `f` by less than `ftol · max(1, |f|)`
    /// and moves no variable by more than `xtol`.
    pub ftol: f64,
    pub xtol: f64,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub c1: f64,
    /// Initial bound on the step's largest component.
    pub initial_radius: f64,
    pub max_radius: f64,
}

impl Default for SqnSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gtol: 1e-7,
            ftol: 1e-13,
            xtol: 1e-9,
            max_backtracks: 50,
            c1: 1e-4,
            initial_radius: 0.5,
            max_radius: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqnStatus {
    GradientConverged,
    Stalled,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqnReport {
    pub status: SqnStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub value: f64,
    pub grad_inf: f64,
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Gradient of the term approximated by secant updates; part of `grad`.
    pub secant_grad: Vec<f64>,
    /// Exactly known Hessian part, row-major `n × n`.
    pub hessian: Vec<f64>,
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factor `h + τI` with the smallest `τ` from a geometric ladder that makes
/// it positive definite.
fn factor_shifted(h: &[f64], n: usize) -> DenseSpd {
    if let Some(f) = DenseSpd::factor(h, n) {
        return f;
    }
    let scale = (0..n).map(|i| libm::fabs(h[i * n + i])).fold(0.0, f64::max).max(1.0);
    let mut tau = 1e-10 * scale;
    let mut shifted = h.to_vec();
    loop {
        for i in 0..n {
            shifted[i * n + i] = h[i * n + i] + tau;
        }
        if let Some(f) = DenseSpd::factor(&shifted, n) {
            return f;
        }
        tau *= 10.0;
    }
}

/// Minimizes from `x`, which is overwritten with the best point. Errors from
/// the objective abort the run and are returned.
pub fn minimize<E, F>(x: &mut [f64], mut f: F, st: &SqnSettings) -> Result<SqnReport, E>
where
    F: FnMut(&[f64]) -> Result<Evaluation, E>,
{
    let n = x.len();
    let mut cur = f(x)?;
    let mut evaluations = 1;
    let mut secant = vec![0.0; n * n];
    let mut radius = st.initial_radius;
    let mut status = SqnStatus::MaxIterations;
    let mut iterations = 0;
    let finite = |e: &Evaluation| e.value.is_finite() && e.grad.iter().all(|g| g.is_finite());
    if !finite(&cur) {
        return Ok(SqnReport {
            status: SqnStatus::LineSearchFailed,
            iterations,
            evaluations,
            value: cur.value,
            grad_inf: f64::NAN,
        });
    }
    while iterations < st.max_iterations {
        if inf_norm(&cur.grad) <= st.gtol * cur.value.abs().max(1.0) {
            status = SqnStatus::GradientConverged;
            break;
        }
        iterations += 1;
        let h: Vec<f64> = cur.hessian.iter().zip(&secant).map(|(a, b)| a + b).collect();
        let fac = factor_shifted(&h, n);
        let mut d: Vec<f64> = fac.solve(&cur.grad).into_iter().map(|v| -v).collect();
        let mut slope = dot(&cur.grad, &d);
        if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            d = cur.grad.iter().map(|g| -g).collect();
            slope = dot(&cur.grad, &d);
        }
        let big = inf_norm(&d);
        if big > radius {
            let s = radius / big;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..st.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let e = f(&trial)?;
            evaluations += 1;
            if finite(&e) && e.value <= cur.value + st.c1 * alpha * slope {
                accepted = Some((trial, e));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next_x, next)) = accepted else {
            status = SqnStatus::LineSearchFailed;
            break;
        };
        let step_inf = alpha * inf_norm(&d);
        radius = if alpha == 1.0 { (2.0 * radius).min(st.max_radius) } else { step_inf.max(1e-12) };
        let s: Vec<f64> = next_x.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.secant_grad.iter().zip(&cur.secant_grad).map(|(a, b)| a - b).collect();
        let bs: Vec<f64> = (0..n).map(|i| dot(&secant[i * n..(i + 1) * n], &s)).collect();
        let r: Vec<f64> = y.iter().zip(&bs).map(|(a, b)| a - b).collect();
        let sr = dot(&s, &r);
        if libm::fabs(sr) > 1e-8 * libm::sqrt(dot(&s, &s) * dot(&r, &r)) && sr != 0.0 {
            for i in 0..n {
                for j in 0..n {
                    secant[i * n + j] += r[i] * r[j] / sr;
                }
            }
        }
        let decrease = cur.value - next.value;
        x.copy_from_slice(&next_x);
        cur = next;
        if decrease <= st.ftol * cur.value.abs().max(1.0) && step_inf <= st.xtol {
            status = SqnStatus::Stalled;
            break;
        }
    }
    Ok(SqnReport { status, iterations, evaluations, value: cur.value, grad_inf: inf_norm(&cur.grad) })
}
