//! Box-constrained augmented-Lagrangian solver for small dense programs
//!
//! ```text
//! min f(z)   s.t.   c_j(z) ≤ 0,   lo ≤ z ≤ hi
//! ```
//!
//! Inequalities enter through the Powell–Hestenes–Rockafellar term
//! `(max(0, λ + ρc)² − λ²) / 2ρ`; bounds are handled by projection inside a
//! BFGS inner loop. Gradients are central finite differences.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// A smooth program with simple bounds and inequality constraints.
pub trait Program {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    /// Returns the objective and writes `c(z)` into `cons`. Non-finite
    /// results mark `z` as unusable.
    fn evaluate(&self, z: &[f64], cons: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Projected-gradient tolerance of the Lagrangian.
    pub kkt_tol: f64,
    /// Allowed constraint violation at convergence.
    pub feasibility_tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Weight of the exact-penalty merit used to accept outer iterates.
    pub merit_penalty: f64,
    /// Largest ∞-norm step the inner loop may take.
    pub max_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 50,
            max_inner: 200,
            kkt_tol: 1e-4,
            feasibility_tol: 1e-4,
            fd_step: 1e-6,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_penalty: 1e8,
            merit_penalty: 100.0,
            max_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
}

/// Multiplier state carried between solves for warm starting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveReport {
    pub z: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    /// Projected Lagrangian gradient at the returned point.
    pub kkt_residual: f64,
    /// Exact-penalty merit of every accepted outer iterate, in order.
    pub merit_history: Vec<f64>,
    pub multipliers: Multipliers,
}

struct Counter<'a, P: Program> {
    program: &'a P,
    evaluations: usize,
    cons: Vec<f64>,
}

impl<'a, P: Program> Counter<'a, P> {
    fn eval(&mut self, z: &[f64]) -> f64 {
        self.evaluations += 1;
        self.program.evaluate(z, &mut self.cons)
    }

    /// Augmented Lagrangian at `z`.
    fn lagrangian(&mut self, z: &[f64], lambda: &[f64], rho: f64) -> f64 {
        let f = self.eval(z);
        let mut value = f;
        for (c, l) in self.cons.iter().zip(lambda) {
            let shifted = (l + rho * c).max(0.0);
            value += (shifted * shifted - l * l) / (2.0 * rho);
        }
        if value.is_finite() {
            value
        } else {
            f64::INFINITY
        }
    }
}

/// Exact-penalty merit; violation inside the feasibility tolerance is free.
fn merit(f: f64, cons: &[f64], opts: &SolverOptions) -> f64 {
    f + opts.merit_penalty
        * cons
            .iter()
            .map(|c| (c - opts.feasibility_tol).max(0.0))
            .sum::<f64>()
}

fn max_violation(cons: &[f64]) -> f64 {
    cons.iter().fold(0.0f64, |m, &c| m.max(c))
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((zi, l), h) in z.iter_mut().zip(lo).zip(hi) {
        *zi = zi.clamp(*l, *h);
    }
}

/// ∞-norm of `P(z − g) − z`.
pub fn projected_gradient_norm(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((zi, gi), (l, h))| ((zi - gi).clamp(*l, *h) - zi).abs())
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` at `z`, one coordinate at a time in
/// index order.
pub fn central_gradient(mut f: impl FnMut(&[f64]) -> f64, z: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = z.to_vec();
    let mut g = vec![0.0; z.len()];
    for i in 0..z.len() {
        let h = rel_step * z[i].abs().max(1.0);
        probe[i] = z[i] + h;
        let fp = f(&probe);
        probe[i] = z[i] - h;
        let fm = f(&probe);
        probe[i] = z[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

struct InnerResult {
    z: Vec<f64>,
    iterations: usize,
    pg_norm: f64,
}

/// Projected BFGS on the augmented Lagrangian.
fn minimize_inner<P: Program>(
    ctx: &mut Counter<'_, P>,
    z0: &[f64],
    lambda: &[f64],
    rho: f64,
    opts: &SolverOptions,
) -> InnerResult {
    let n = z0.len();
    let lo = ctx.program.lower().to_vec();
    let hi = ctx.program.upper().to_vec();
    let mut z = z0.to_vec();
    project(&mut z, &lo, &hi);

    let mut value = ctx.lagrangian(&z, lambda, rho);
    let mut g = central_gradient(|p| ctx.lagrangian(p, lambda, rho), &z, opts.fd_step);
    let mut h_inv = identity(n);
    let mut scaled = false;
    let mut stalled = false;
    let mut pg_norm = projected_gradient_norm(&z, &g, &lo, &hi);
    let mut iterations = 0;

    while iterations < opts.max_inner {
        if !value.is_finite() || !g.iter().all(|x| x.is_finite()) {
            break;
        }
        if pg_norm < opts.kkt_tol {
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| {
                let width = (hi[i] - lo[i]) * 1e-9;
                !((z[i] <= lo[i] + width && g[i] > 0.0) || (z[i] >= hi[i] - width && g[i] < 0.0))
            })
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                h_inv = identity(n);
                scaled = false;
            }
            let mut d = vec![0.0; n];
            for i in 0..n {
                if free[i] {
                    let row = &h_inv[i * n..(i + 1) * n];
                    d[i] = -(0..n).filter(|&j| free[j]).map(|j| row[j] * g[j]).sum::<f64>();
                }
            }
            let dg: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(dg < 0.0) {
                continue;
            }
            let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if dmax > opts.max_step {
                let s = opts.max_step / dmax;
                d.iter_mut().for_each(|x| *x *= s);
            }
            if let Some(found) = line_search(ctx, &z, value, &g, &d, &lo, &hi, lambda, rho) {
                accepted = Some(found);
                break;
            }
        }
        let Some((z_new, v_new)) = accepted else {
            break;
        };

        let g_new = central_gradient(|p| ctx.lagrangian(p, lambda, rho), &z_new, opts.fd_step);
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy > 1e-12 * libm::sqrt(yy * s.iter().map(|a| a * a).sum::<f64>()) {
            if !scaled {
                let gamma = sy / yy;
                h_inv.iter_mut().for_each(|h| *h = 0.0);
                for i in 0..n {
                    h_inv[i * n + i] = gamma;
                }
                scaled = true;
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }

        let progress = value - v_new;
        z = z_new;
        value = v_new;
        g = g_new;
        pg_norm = projected_gradient_norm(&z, &g, &lo, &hi);
        if progress.abs() <= 1e-15 * (1.0 + value.abs()) {
            // a fresh scaled-gradient step also stalled
            if stalled {
                break;
            }
            stalled = true;
            h_inv = identity(n);
            scaled = false;
        } else {
            stalled = false;
        }
    }

    InnerResult {
        z,
        iterations,
        pg_norm,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let coef = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search<P: Program>(
    ctx: &mut Counter<'_, P>,
    z: &[f64],
    value: f64,
    g: &[f64],
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
    lambda: &[f64],
    rho: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut alpha = 1.0;
    let mut trial = vec![0.0; z.len()];
    for _ in 0..40 {
        for i in 0..z.len() {
            trial[i] = (z[i] + alpha * d[i]).clamp(lo[i], hi[i]);
        }
        let decrease: f64 = trial
            .iter()
            .zip(z)
            .zip(g)
            .map(|((t, zi), gi)| gi * (t - zi))
            .sum();
        if decrease < 0.0 {
            let v = ctx.lagrangian(&trial, lambda, rho);
            if v <= value + 1e-4 * decrease {
                return Some((trial, v));
            }
        }
        alpha *= 0.5;
    }
    None
}

/// First-order optimality residual at `z`: the projected Lagrangian gradient
/// with least-squares multipliers for the near-active constraints, measured
/// independently of the penalty parameter.
fn stationarity<P: Program>(
    ctx: &mut Counter<'_, P>,
    z: &[f64],
    opts: &SolverOptions,
) -> (f64, Vec<f64>) {
    let n = z.len();
    let m = ctx.program.num_constraints();
    let lo = ctx.program.lower();
    let hi = ctx.program.upper();

    ctx.eval(z);
    let active: Vec<usize> = (0..m).filter(|&j| ctx.cons[j] >= -opts.feasibility_tol).collect();
    let mut grad_f = vec![0.0; n];
    let mut jac = vec![0.0; active.len() * n];
    let mut probe = z.to_vec();
    let mut cons_plus = vec![0.0; m];
    for i in 0..n {
        let h = opts.fd_step * z[i].abs().max(1.0);
        probe[i] = z[i] + h;
        let fp = ctx.eval(&probe);
        cons_plus.copy_from_slice(&ctx.cons);
        probe[i] = z[i] - h;
        let fm = ctx.eval(&probe);
        probe[i] = z[i];
        grad_f[i] = (fp - fm) / (2.0 * h);
        for (a, &j) in active.iter().enumerate() {
            jac[a * n + i] = (cons_plus[j] - ctx.cons[j]) / (2.0 * h);
        }
    }

    let interior: Vec<usize> = (0..n)
        .filter(|&i| {
            let width = (hi[i] - lo[i]) * 1e-9;
            z[i] > lo[i] + width && z[i] < hi[i] - width
        })
        .collect();
    let k = active.len();
    let mut lambda = vec![0.0; k];
    if k > 0 && !interior.is_empty() {
        let gram = DMatrix::from_fn(k, k, |a, b| {
            interior.iter().map(|&i| jac[a * n + i] * jac[b * n + i]).sum::<f64>()
        });
        let rhs = DVector::from_fn(k, |a, _| {
            -interior.iter().map(|&i| jac[a * n + i] * grad_f[i]).sum::<f64>()
        });
        if let Some(sol) = gram.lu().solve(&rhs) {
            for (l, v) in lambda.iter_mut().zip(sol.iter()) {
                *l = v.max(0.0);
            }
        }
    }
    let g: Vec<f64> = (0..n)
        .map(|i| grad_f[i] + (0..k).map(|a| lambda[a] * jac[a * n + i]).sum::<f64>())
        .collect();
    let r = projected_gradient_norm(z, &g, lo, hi);
    let mut full = vec![0.0; m];
    for (a, &j) in active.iter().enumerate() {
        full[j] = lambda[a];
    }
    (if r.is_finite() { r } else { f64::INFINITY }, full)
}

/// Solves `program` from `z0`, optionally warm-starting the multipliers.
pub fn solve<P: Program>(
    program: &P,
    z0: &[f64],
    warm: Option<&Multipliers>,
    opts: &SolverOptions,
) -> SolveReport {
    let m = program.num_constraints();
    let mut ctx = Counter {
        program,
        evaluations: 0,
        cons: vec![0.0; m],
    };
    let (mut lambda, mut rho) = match warm {
        Some(w) if w.lambda.len() == m => (w.lambda.clone(), w.penalty.max(opts.initial_penalty)),
        _ => (vec![0.0; m], opts.initial_penalty),
    };

    let mut z_acc = z0.to_vec();
    project(&mut z_acc, program.lower(), program.upper());
    let mut f_acc = ctx.eval(&z_acc);
    let mut c_acc = ctx.cons.clone();
    let mut merit_acc = if f_acc.is_finite() {
        merit(f_acc, &c_acc, opts)
    } else {
        f64::INFINITY
    };
    let mut merit_history = vec![merit_acc];
    let mut kkt = f64::INFINITY;
    let mut inner_total = 0;
    let mut outer = 0;
    let mut status = SolveStatus::MaxIters;
    let mut lambda_estimate: Option<Vec<f64>> = None;

    while outer < opts.max_outer {
        outer += 1;
        let inner = minimize_inner(&mut ctx, &z_acc, &lambda, rho, opts);
        inner_total += inner.iterations;
        let f_new = ctx.eval(&inner.z);
        let c_new = ctx.cons.clone();
        let merit_new = merit(f_new, &c_new, opts);
        let viol_prev = max_violation(&c_acc);
        let viol_new = max_violation(&c_new);

        if merit_new.is_finite() && merit_new <= merit_acc {
            let lambda_new: Vec<f64> = lambda
                .iter()
                .zip(&c_new)
                .map(|(l, c)| (l + rho * c).max(0.0))
                .collect();
            z_acc = inner.z;
            f_acc = f_new;
            c_acc = c_new;
            merit_acc = merit_new;
            merit_history.push(merit_acc);
            lambda = lambda_new;
            kkt = if viol_new <= opts.feasibility_tol {
                let (r, estimate) = stationarity(&mut ctx, &z_acc, opts);
                lambda_estimate = Some(estimate);
                r
            } else {
                lambda_estimate = None;
                inner.pg_norm
            };
            if viol_new <= opts.feasibility_tol && kkt < opts.kkt_tol {
                status = SolveStatus::Converged;
                break;
            }
            if viol_new > opts.feasibility_tol && viol_new > 0.25 * viol_prev {
                rho = (rho * opts.penalty_growth).min(opts.max_penalty);
            }
        } else {
            if viol_new <= opts.feasibility_tol {
                // feasible but worse: retry once with least-squares multipliers
                match lambda_estimate.take() {
                    Some(estimate) => {
                        lambda = estimate;
                        continue;
                    }
                    None => break,
                }
            }
            if rho >= opts.max_penalty {
                break;
            }
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }

        // stationary for the capped penalty while still violating: locally infeasible
        if rho >= opts.max_penalty
            && max_violation(&c_acc) > opts.feasibility_tol
            && inner.pg_norm < opts.kkt_tol
        {
            status = SolveStatus::Infeasible;
            break;
        }
    }

    SolveReport {
        objective: f_acc,
        constraints: c_acc,
        z: z_acc,
        status,
        outer_iterations: outer,
        inner_iterations: inner_total,
        evaluations: ctx.evaluations,
        kkt_residual: kkt,
        merit_history,
        multipliers: Multipliers {
            lambda,
            penalty: rho,
        },
    }
}
