//! Limited-memory BFGS with a strong-Wolfe line search and frozen coordinates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    /// Returns the loss at `x` and its gradient (same length as `x`).
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    /// Number of stored `(s, y)` pairs.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop once `|g| <= grad_tolerance * max(1, |f|)`.
    pub grad_tolerance: f64,
    /// Trial evaluations allowed per line search.
    pub max_line_search: usize,
    /// `true` entries are never modified.
    #[serde(skip)]
    pub freeze_mask: Option<Vec<bool>>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            grad_tolerance: 1e-9,
            max_line_search: 20,
            freeze_mask: None,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "wolfe constants must satisfy 0 < c1 < c2 < 1, got {} and {}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::Config("l-bfgs memory must be at least 1".into()));
        }
        if self.max_line_search == 0 {
            return Err(Error::Config("line search needs at least one trial".into()));
        }
        if let Some(m) = &self.freeze_mask {
            if m.len() != dim {
                return Err(Error::Shape(format!(
                    "freeze mask has {} entries, parameter vector has {dim}",
                    m.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    MaxIterations,
    GradientTolerance,
    LineSearchFailed,
    NoProgress,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    /// Loss at the start point followed by the loss after every accepted step.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl LbfgsResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Correction pairs and the two-loop recursion.
#[derive(Debug, Clone, Default)]
pub struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl History {
    pub fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` if the curvature `y.s` is positive enough; drops the oldest pair when full.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let ys = dot(&y, &s);
        if ys <= 1e-10 {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / ys));
        true
    }

    /// `H g` for the implicit inverse-Hessian approximation, with initial
    /// scaling `gamma = s.y / y.y` from the newest pair.
    pub fn apply_inverse_hessian(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }
}

/// Outcome of [`strong_wolfe`].
#[derive(Debug, Clone)]
pub struct LineSearch {
    pub step: f64,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub evaluations: usize,
    /// Whether the returned step satisfies both strong-Wolfe conditions.
    pub converged: bool,
}

/// Evaluates `obj` along `x + t d`; frozen entries are copied verbatim.
struct Ray<'a, O: Objective> {
    obj: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    frozen: Option<&'a [bool]>,
    evaluations: usize,
}

impl<O: Objective> Ray<'_, O> {
    fn eval(&mut self, t: f64) -> Result<(f64, Vec<f64>, f64)> {
        let trial = step_point(self.x, self.d, t, self.frozen);
        let (mut f, mut g) = self.obj.evaluate(&trial)?;
        self.evaluations += 1;
        mask(&mut g, self.frozen);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            f = f64::INFINITY;
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let gtd = dot(&g, self.d);
        Ok((f, g, gtd))
    }
}

fn step_point(x: &[f64], d: &[f64], t: f64, frozen: Option<&[bool]>) -> Vec<f64> {
    match frozen {
        Some(m) => x
            .iter()
            .zip(d)
            .zip(m)
            .map(|((xi, di), f)| if *f { *xi } else { xi + t * di })
            .collect(),
        None => x.iter().zip(d).map(|(xi, di)| xi + t * di).collect(),
    }
}

fn mask(g: &mut [f64], frozen: Option<&[bool]>) {
    if let Some(m) = frozen {
        for (gi, f) in g.iter_mut().zip(m) {
            if *f {
                *gi = 0.0;
            }
        }
    }
}

/// Minimizer of the cubic interpolating `(x1, f1, g1)` and `(x2, f2, g2)`, clamped to `bounds`.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

/// Strong-Wolfe line search along `d` from `x` (bracketing followed by cubic zoom).
///
/// `loss`, `grad` and `gtd` describe the start point; `step` is the first trial.
#[allow(clippy::too_many_arguments)]
pub fn strong_wolfe<O: Objective>(
    obj: &mut O,
    x: &[f64],
    d: &[f64],
    step: f64,
    loss: f64,
    grad: &[f64],
    gtd: f64,
    opts: &LbfgsOptions,
) -> Result<LineSearch> {
    const TOLERANCE_CHANGE: f64 = 1e-12;
    let (c1, c2, max_ls) = (opts.c1, opts.c2, opts.max_line_search);
    let d_norm = d.iter().fold(0.0, |m, v| f64::max(m, v.abs()));
    let mut ray = Ray {
        obj,
        x,
        d,
        frozen: opts.freeze_mask.as_deref(),
        evaluations: 0,
    };

    let mut t = step;
    let (mut f_new, mut g_new, mut gtd_new) = ray.eval(t)?;
    let (mut t_prev, mut f_prev, mut g_prev, mut gtd_prev) = (0.0, loss, grad.to_vec(), gtd);
    let mut done = false;
    let mut ls_iter = 0;

    // bracket entries: (step, loss, grad, directional derivative)
    let mut bracket: [(f64, f64, Vec<f64>, f64); 2];
    loop {
        if ls_iter >= max_ls {
            bracket = [(0.0, loss, grad.to_vec(), gtd), (t, f_new, g_new, gtd_new)];
            break;
        }
        if f_new > loss + c1 * t * gtd || (ls_iter > 1 && f_new >= f_prev) {
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)];
            break;
        }
        if gtd_new.abs() <= -c2 * gtd {
            bracket = [(t, f_new, g_new.clone(), gtd_new), (t, f_new, g_new, gtd_new)];
            done = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)];
            break;
        }
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let next = cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, Some((min_step, max_step)));
        t_prev = t;
        f_prev = f_new;
        g_prev = g_new;
        gtd_prev = gtd_new;
        t = next;
        (f_new, g_new, gtd_new) = ray.eval(t)?;
        ls_iter += 1;
    }

    let order = |b: &[(f64, f64, Vec<f64>, f64); 2]| if b[0].1 <= b[1].1 { (0, 1) } else { (1, 0) };
    let (mut low, mut high) = order(&bracket);
    let mut insufficient_progress = false;
    while !done && ls_iter < max_ls {
        let (b0, b1) = (bracket[0].0, bracket[1].0);
        if (b1 - b0).abs() * d_norm < TOLERANCE_CHANGE {
            break;
        }
        let mut t = cubic_interpolate(
            b0, bracket[0].1, bracket[0].3, b1, bracket[1].1, bracket[1].3, None,
        );
        let (bmin, bmax) = (b0.min(b1), b0.max(b1));
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient_progress || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insufficient_progress = false;
            } else {
                insufficient_progress = true;
            }
        } else {
            insufficient_progress = false;
        }
        let (f_t, g_t, gtd_t) = ray.eval(t)?;
        ls_iter += 1;
        if f_t > loss + c1 * t * gtd || f_t >= bracket[low].1 {
            bracket[high] = (t, f_t, g_t, gtd_t);
            (low, high) = order(&bracket);
        } else {
            if gtd_t.abs() <= -c2 * gtd {
                done = true;
            } else if gtd_t * (bracket[high].0 - bracket[low].0) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = (t, f_t, g_t, gtd_t);
        }
    }
    let evaluations = ray.evaluations;
    let (step, loss, grad, _) = bracket[low].clone();
    Ok(LineSearch {
        step,
        loss,
        grad,
        evaluations,
        converged: done,
    })
}

/// Minimizes `obj` from `x0`.
///
/// Terminates after `max_iterations` accepted steps, once the gradient norm
/// falls below tolerance, or when a steepest-descent line search makes no
/// progress, in which case the best iterate so far is returned. A failed
/// search along a quasi-Newton direction discards the curvature history and
/// retries along the negative gradient. Frozen coordinates keep their
/// exact starting bits.
// The negated comparisons also route NaN losses and slopes to the fallback.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn lbfgs_minimize<O: Objective>(obj: &mut O, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult> {
    opts.validate(x0.len())?;
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("start point entry {i} is {}", x0[i])));
    }
    let frozen = opts.freeze_mask.as_deref();
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.evaluate(&x)?;
    if g.len() != x.len() {
        return Err(Error::Shape(format!(
            "objective returned {} gradient entries for {} parameters",
            g.len(),
            x.len()
        )));
    }
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("objective at the start point is {f}")));
    }
    mask(&mut g, frozen);
    let mut evaluations = 1;
    let mut trace = vec![f];
    let mut history = History::new(opts.memory);
    let converged = |f: f64, g: &[f64]| norm(g) <= opts.grad_tolerance * f.abs().max(1.0);

    if converged(f, &g) {
        return Ok(LbfgsResult {
            x,
            loss_trace: trace,
            iterations: 0,
            evaluations,
            termination: Termination::GradientTolerance,
        });
    }

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let mut d: Vec<f64> = history.apply_inverse_hessian(&g).iter().map(|v| -v).collect();
        mask(&mut d, frozen);
        let mut gtd = dot(&g, &d);
        if !(gtd < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            gtd = -dot(&g, &g);
        }
        let t0 = if history.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let ls = strong_wolfe(obj, &x, &d, t0, f, &g, gtd, opts)?;
        evaluations += ls.evaluations;
        if !(ls.loss < f) {
            if !history.is_empty() {
                history.clear();
                continue;
            }
            termination = if ls.converged {
                Termination::NoProgress
            } else {
                Termination::LineSearchFailed
            };
            break;
        }
        let x_new = step_point(&x, &d, ls.step, frozen);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ls.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        history.push(s, y);
        x = x_new;
        f = ls.loss;
        g = ls.grad;
        trace.push(f);
        iterations += 1;
        if converged(f, &g) {
            termination = Termination::GradientTolerance;
            break;
        }
    }
    Ok(LbfgsResult {
        x,
        loss_trace: trace,
        iterations,
        evaluations,
        termination,
    })
}
