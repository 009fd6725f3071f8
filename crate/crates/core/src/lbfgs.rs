//! Limited-memory BFGS with an Armijo backtracking line search.
//!
//! The search direction comes from the standard two-loop recursion over the
//! last `history` curvature pairs `(s, y)`, with the initial inverse Hessian
//! scaled by `sᵀy / yᵀy`. Pairs failing the curvature condition are skipped.
//! Iteration stops when the infinity norm of the gradient drops below the
//! tolerance, when the iteration budget is spent, or when the line search
//! cannot make progress even along the steepest-descent direction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    /// Stop once `‖∇f‖∞` falls below this.
    pub gradient_tolerance: f64,
    /// Number of stored curvature pairs.
    pub history: usize,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    /// Maximum halvings of the step per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-4,
            history: 10,
            armijo: 1e-4,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// No step satisfying the Armijo condition was found; the best state is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// Infinity norm of `gradient`.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    /// Loss after every accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `-H g`.
fn search_direction(g: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let a = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = 1.0 / (last.rho * dot(&last.y, &last.y));
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (pair, a) in history.iter().zip(alphas.iter().rev()) {
        let b = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimise `f`, which writes the gradient into its second argument and
/// returns the objective value.
pub fn minimise<F>(x0: Vec<f64>, f: F, settings: &LbfgsSettings) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    minimise_projected(x0, f, settings, |_: &mut [f64], _: &mut f64, _: &mut [f64]| {})
}

/// Like [`minimise`], but `project` is applied to the initial state and to
/// every accepted iterate. The hook receives the state, its loss and its
/// gradient, and must leave all three consistent with the objective (for
/// example a rescaling the objective is invariant to, with the gradient
/// transformed accordingly).
pub fn minimise_projected<F, P>(
    x0: Vec<f64>,
    mut f: F,
    settings: &LbfgsSettings,
    mut project: P,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: FnMut(&mut [f64], &mut f64, &mut [f64]),
{
    if settings.history == 0 {
        return Err(Error::InvalidParameter("L-BFGS history must be >= 1".into()));
    }
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() || !all_finite(&g) {
        return Err(Error::NonFinite("initial objective or gradient".into()));
    }
    project(&mut x, &mut fx, &mut g);

    let mut history: VecDeque<Pair> = VecDeque::with_capacity(settings.history);
    let mut losses = vec![fx];
    let mut iterations = 0;
    let mut status = LbfgsStatus::MaxIterations;
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];

    while iterations < settings.max_iterations {
        if inf_norm(&g) < settings.gradient_tolerance {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut direction = search_direction(&g, &history);
        let mut slope = dot(&direction, &g);
        if !(slope < 0.0) || !slope.is_finite() {
            history.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..settings.max_line_search {
            for i in 0..dim {
                x_new[i] = x[i] + step * direction[i];
            }
            let f_trial = f(&x_new, &mut g_new);
            evaluations += 1;
            if f_trial.is_finite()
                && all_finite(&g_new)
                && f_trial <= fx + settings.armijo * step * slope
            {
                accepted = Some(f_trial);
                break;
            }
            step *= 0.5;
        }

        iterations += 1;
        let Some(mut f_next) = accepted else {
            if history.is_empty() {
                status = LbfgsStatus::LineSearchFailed;
                break;
            }
            history.clear();
            continue;
        };

        project(&mut x_new, &mut f_next, &mut g_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy.is_finite() {
            if history.len() == settings.history {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_next;
        losses.push(fx);
    }
    if status == LbfgsStatus::MaxIterations && inf_norm(&g) < settings.gradient_tolerance {
        status = LbfgsStatus::Converged;
    }

    let gradient_norm = inf_norm(&g);
    Ok(LbfgsResult {
        x,
        loss: fx,
        gradient: g,
        gradient_norm,
        iterations,
        evaluations,
        status,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quadratic_reaches_centre() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let centre: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x0: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let settings = LbfgsSettings {
            gradient_tolerance: 1e-9,
            ..Default::default()
        };
        let res = minimise(
            x0,
            |x, g| {
                let mut f = 0.0;
                for i in 0..x.len() {
                    let r = x[i] - centre[i];
                    g[i] = r;
                    f += 0.5 * r * r;
                }
                f
            },
            &settings,
        )
        .unwrap();
        assert_eq!(res.status, LbfgsStatus::Converged);
        for (a, c) in res.x.iter().zip(&centre) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let settings = LbfgsSettings {
            gradient_tolerance: 1e-10,
            max_iterations: 1000,
            ..Default::default()
        };
        let res = minimise(vec![-1.2, 1.0], rosenbrock, &settings).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-4 && (res.x[1] - 1.0).abs() < 1e-4, "{:?}", res.x);
    }

    #[test]
    fn accepted_losses_never_increase() {
        let res = minimise(vec![-1.2, 1.0], rosenbrock, &LbfgsSettings::default()).unwrap();
        assert!(res.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.loss <= res.losses[0]);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let res = minimise(vec![1.0], |_, g| {
            g[0] = 0.0;
            f64::NAN
        }, &LbfgsSettings::default());
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn projection_hook_is_applied_to_iterates() {
        // f(x) = (x0/|x| - 1)^2 + (x1/|x|)^2 is scale invariant; keep |x| = 2.
        let f = |x: &[f64], g: &mut [f64]| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let (u, v) = (x[0] / r, x[1] / r);
            let (du, dv) = (2.0 * (u - 1.0), 2.0 * v);
            // chain rule through normalisation
            let dot = du * u + dv * v;
            g[0] = (du - dot * u) / r;
            g[1] = (dv - dot * v) / r;
            (u - 1.0).powi(2) + v * v
        };
        let res = minimise_projected(
            vec![-1.0, 3.0],
            f,
            &LbfgsSettings {
                gradient_tolerance: 1e-10,
                ..Default::default()
            },
            |x: &mut [f64], _loss: &mut f64, g: &mut [f64]| {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let scale = 2.0 / r;
                x.iter_mut().for_each(|v| *v *= scale);
                g.iter_mut().for_each(|v| *v /= scale);
            },
        )
        .unwrap();
        assert!((res.x[0] - 2.0).abs() < 1e-6 && res.x[1].abs() < 1e-6, "{:?}", res.x);
    }
}
