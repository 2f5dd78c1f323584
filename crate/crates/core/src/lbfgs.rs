//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The search direction comes from the two-loop recursion over the last
//! `history` curvature pairs. Step lengths follow the bracketing / zoom scheme
//! with safeguarded cubic interpolation.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Number of stored `(s, y)` pairs.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_iterations: usize,
    /// Stop once `(f_prev - f) / max(|f_prev|, |f|, 1e-300)` drops below this.
    pub tolerance: f64,
    /// Stop once the largest gradient entry is at or below this.
    pub gradient_tolerance: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            max_iterations: 400,
            tolerance: 1e-7,
            gradient_tolerance: 1e-10,
            max_line_search: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative decrease fell below the tolerance.
    Converged,
    /// Gradient vanished (to within `gradient_tolerance`).
    Stationary,
    MaxIterations,
    /// No step with sufficient decrease was found; the best point seen so far
    /// is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub cost: f64,
    /// `(iteration, cost)` at the start point and after every accepted step.
    pub curve: Vec<(usize, f64)>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    /// True when the result came from a failed line search.
    pub fn warning(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
    g: Vec<f64>,
}

struct Evaluator<F> {
    objective: F,
    evaluations: usize,
    iteration: usize,
}

impl<F> Evaluator<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (f, g) = (self.objective)(x)?;
        if g.len() != x.len() {
            return Err(Error::DimensionMismatch {
                context: "objective gradient",
                expected: x.len(),
                actual: g.len(),
            });
        }
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: self.iteration,
            });
        }
        Ok((f, g))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `objective` starting from `x0`. The objective returns the cost
/// and its gradient.
pub fn minimize<F>(objective: F, x0: Vec<f64>, options: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut ev = Evaluator {
        objective,
        evaluations: 0,
        iteration: 0,
    };
    let mut x = x0;
    let (mut f, mut g) = ev.eval(&x)?;
    let mut curve = vec![(0, f)];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.history);

    let finish = |x, cost, curve, iterations, evaluations, termination| Minimum {
        x,
        cost,
        curve,
        iterations,
        evaluations,
        termination,
    };

    if max_abs(&g) <= options.gradient_tolerance {
        return Ok(finish(
            x,
            f,
            curve,
            1,
            ev.evaluations,
            Termination::Stationary,
        ));
    }

    for iteration in 1..=options.max_iterations {
        ev.iteration = iteration;
        let mut direction = two_loop(&g, &pairs);
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            pairs.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / dot(&direction, &direction).sqrt()).min(1.0)
        } else {
            1.0
        };

        let step = match line_search(&mut ev, &x, f, slope, &direction, alpha0, options)? {
            Some(step) => step,
            None => {
                return Ok(finish(
                    x,
                    f,
                    curve,
                    iteration,
                    ev.evaluations,
                    Termination::LineSearchFailed,
                ))
            }
        };

        let x_new = axpy(&x, step.alpha, &direction);
        let s: Vec<f64> = direction.iter().map(|d| step.alpha * d).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == options.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let f_prev = f;
        x = x_new;
        f = step.f;
        g = step.g;
        curve.push((iteration, f));

        if max_abs(&g) <= options.gradient_tolerance {
            return Ok(finish(
                x,
                f,
                curve,
                iteration,
                ev.evaluations,
                Termination::Stationary,
            ));
        }
        let scale = f_prev.abs().max(f.abs()).max(1e-300);
        if (f_prev - f) / scale < options.tolerance {
            return Ok(finish(
                x,
                f,
                curve,
                iteration,
                ev.evaluations,
                Termination::Converged,
            ));
        }
    }
    let iterations = options.max_iterations;
    Ok(finish(
        x,
        f,
        curve,
        iterations,
        ev.evaluations,
        Termination::MaxIterations,
    ))
}

/// `-H g` from the stored curvature pairs, with the usual `sᵀy / yᵀy`
/// initial scaling.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn line_search<F>(
    ev: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    direction: &[f64],
    alpha0: f64,
    options: &LbfgsOptions,
) -> Result<Option<Probe>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let probe = |ev: &mut Evaluator<F>, alpha: f64| -> Result<Probe> {
        let (f, g) = ev.eval(&axpy(x, alpha, direction))?;
        let slope = dot(&g, direction);
        Ok(Probe { alpha, f, slope, g })
    };
    let armijo = |p: &Probe| p.f <= f0 + options.c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -options.c2 * slope0;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        g: Vec::new(),
    };
    let mut alpha = alpha0;
    let mut budget = options.max_line_search;

    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return Ok(fallback(prev, f0));
        }
        budget -= 1;
        let cur = probe(ev, alpha)?;
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        alpha = cur.alpha * 2.0;
        prev = cur;
    };

    // zoom: `lo` always satisfies sufficient decrease and has the lowest cost
    // seen inside the bracket
    while budget > 0 {
        budget -= 1;
        let width = hi.alpha - lo.alpha;
        if width.abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
            break;
        }
        let trial = interpolate(&lo, &hi).unwrap_or(lo.alpha + 0.5 * width);
        let cur = probe(ev, trial)?;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    Ok(fallback(lo, f0))
}

/// Accepts the best sufficient-decrease point when the curvature condition
/// could not be met (the objective may be only piecewise smooth).
fn fallback(best: Probe, f0: f64) -> Option<Probe> {
    (best.alpha > 0.0 && best.f < f0).then_some(best)
}

/// Minimizer of the cubic through both bracket ends, kept at least 10% of the
/// bracket width away from either end.
fn interpolate(lo: &Probe, hi: &Probe) -> Option<f64> {
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (lo.alpha - hi.alpha);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (hi.alpha - lo.alpha).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let alpha = hi.alpha - (hi.alpha - lo.alpha) * (hi.slope + d2 - d1) / denom;
    let (a, b) = if lo.alpha < hi.alpha {
        (lo.alpha, hi.alpha)
    } else {
        (hi.alpha, lo.alpha)
    };
    let margin = 0.1 * (b - a);
    alpha
        .is_finite()
        .then(|| alpha.clamp(a + margin, b - margin))
}
