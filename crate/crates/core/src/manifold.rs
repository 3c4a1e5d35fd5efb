//! Grassmann-manifold primitives for the orthonormal metric factor, and a
//! line-searched Riemannian descent loop.
//!
//! Points are represented by d×l matrices with orthonormal columns; the
//! objective is invariant to right rotations, so the geometry is that of
//! l-dimensional subspaces. Tangent vectors live in the horizontal space
//! `{xi : L^T xi = 0}`, Euclidean gradients are mapped there by
//! `G - L (L^T G)`, and steps return to the manifold through a thin QR
//! retraction with the R diagonal sign-fixed positive.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::MetricFactor;
use crate::rng::rng_from_seed;

/// Orthonormality slack accepted at the base point of tangent operations.
const ORTHONORMAL_TOL: f64 = 1e-8;

/// A horizontal tangent vector at some base factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub xi: DMatrix<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.xi.norm()
    }
}

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoParams {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        ArmijoParams {
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 30,
        }
    }
}

/// Descent direction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiemannianMethod {
    /// Projected gradient descent; the reference path.
    #[default]
    Gd,
    /// Fletcher–Reeves conjugate gradient with re-projection transport,
    /// restarted every l(d-l) iterations or on a non-descent direction.
    Cg,
}

/// Configuration of [`optimize_factor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiemannianOptConfig {
    pub max_iter: usize,
    pub method: RiemannianMethod,
    pub line_search: ArmijoParams,
    pub grad_tol: f64,
}

impl Default for RiemannianOptConfig {
    fn default() -> Self {
        RiemannianOptConfig {
            max_iter: 10,
            method: RiemannianMethod::Gd,
            line_search: ArmijoParams::default(),
            grad_tol: 1e-8,
        }
    }
}

/// Outcome of a descent run.
#[derive(Debug, Clone)]
pub struct OptReport {
    pub factor: MetricFactor,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Gradient norm fell below `grad_tol`.
    pub converged: bool,
    /// The last line search exhausted its backtracks; the current iterate
    /// was returned unchanged.
    pub line_search_failed: bool,
}

/// Thin QR factor with positive diagonal convention; errors on rank
/// deficiency.
fn thin_qr_positive(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let tol = f64::EPSILON * m.nrows().max(m.ncols()) as f64 * m.amax().max(1e-300);
    for j in 0..q.ncols() {
        let diag = r[(j, j)];
        if !diag.is_finite() || diag.abs() <= tol {
            return Err(Error::numerical(format!(
                "rank-deficient matrix in QR retraction (column {j})"
            )));
        }
        if diag < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// A uniformly random n×n orthogonal matrix (QR of a Gaussian sample with
/// the sign convention above).
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    thin_qr_positive(&g).expect("Gaussian matrix is almost surely full rank")
}

impl MetricFactor {
    /// A random point with orthonormal columns: sign-fixed thin QR of a
    /// d×l Gaussian sample.
    pub fn random_orthonormal(d: usize, l: usize, seed: u64) -> Result<Self> {
        if l > d {
            return Err(Error::invalid("need l <= d"));
        }
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rng_from_seed(seed);
        let g = DMatrix::from_fn(d, l, |_, _| StandardNormal.sample(&mut rng));
        MetricFactor::new(thin_qr_positive(&g)?)
    }
}

/// Projects an ambient gradient onto the horizontal space at `factor`:
/// `xi = G - L (L^T G)`.
pub fn project_tangent(factor: &MetricFactor, ambient: &DMatrix<f64>) -> Result<TangentVector> {
    let err = factor.orthonormality_error();
    if err > ORTHONORMAL_TOL {
        return Err(Error::invalid(format!(
            "base point is not orthonormal (||L^T L - I|| = {err:.3e})"
        )));
    }
    let lmat = factor.as_matrix();
    let xi = ambient - lmat * (lmat.transpose() * ambient);
    Ok(TangentVector { xi })
}

/// Retracts `factor + step * xi` back onto the manifold through the
/// sign-fixed thin QR. A zero displacement returns the base point as is.
pub fn retract(factor: &MetricFactor, tangent: &TangentVector, step: f64) -> Result<MetricFactor> {
    if step == 0.0 || tangent.xi.iter().all(|&v| v == 0.0) {
        return Ok(factor.clone());
    }
    let moved = factor.as_matrix() + step * &tangent.xi;
    MetricFactor::new(thin_qr_positive(&moved)?)
}

/// Minimizes `cost` over factors with orthonormal columns, starting from
/// `start`, by Riemannian descent with Armijo backtracking.
///
/// `cost` returns the objective value and its Euclidean (ambient) gradient.
/// Accepted steps never increase the objective; the loop stops at
/// `max_iter`, at `grad_tol`, or when a line search fails (reported in the
/// outcome, not an error).
pub fn optimize_factor<F>(
    start: &MetricFactor,
    mut cost: F,
    cfg: &RiemannianOptConfig,
) -> Result<OptReport>
where
    F: FnMut(&MetricFactor) -> Result<(f64, DMatrix<f64>)>,
{
    let mut current = start.clone();
    let (mut value, start_ambient) = cost(&current)?;
    let mut grad = project_tangent(&current, &start_ambient)?;
    let mut grad_norm = grad.norm();
    let mut direction = TangentVector { xi: -&grad.xi };
    let mut prev_grad_sq = grad_norm * grad_norm;
    let restart_period = (current.rank() * (current.dim() - current.rank())).max(1);
    let mut since_restart = 0usize;

    let mut iterations = 0;
    let mut converged = grad_norm <= cfg.grad_tol;
    let mut line_search_failed = false;

    while iterations < cfg.max_iter && !converged {
        // directional derivative along the current direction
        let mut slope = grad.xi.dot(&direction.xi);
        if slope >= 0.0 {
            // non-descent CG direction; restart with steepest descent
            direction = TangentVector { xi: -&grad.xi };
            slope = -prev_grad_sq;
            since_restart = 0;
        }

        let mut step = cfg.line_search.initial_step;
        let mut accepted = None;
        for _ in 0..cfg.line_search.max_backtracks {
            match retract(&current, &direction, step) {
                Ok(candidate) => {
                    let (cand_value, cand_ambient) = cost(&candidate)?;
                    if cand_value <= value + cfg.line_search.sufficient_decrease * step * slope {
                        accepted = Some((candidate, cand_value, cand_ambient));
                        break;
                    }
                }
                // rank-deficient trial point: shrink the step and retry
                Err(Error::Numerical(_)) => {}
                Err(e) => return Err(e),
            }
            step *= cfg.line_search.contraction;
        }

        let Some((next, next_value, next_ambient)) = accepted else {
            line_search_failed = true;
            break;
        };

        let next_grad = project_tangent(&next, &next_ambient)?;
        let next_grad_sq = next_grad.xi.norm_squared();
        since_restart += 1;
        direction = match cfg.method {
            RiemannianMethod::Gd => TangentVector { xi: -&next_grad.xi },
            RiemannianMethod::Cg => {
                if since_restart >= restart_period || prev_grad_sq == 0.0 {
                    since_restart = 0;
                    TangentVector { xi: -&next_grad.xi }
                } else {
                    let beta = next_grad_sq / prev_grad_sq;
                    // transport the previous direction by re-projection
                    let transported = project_tangent(&next, &direction.xi)?;
                    TangentVector {
                        xi: -&next_grad.xi + beta * transported.xi,
                    }
                }
            }
        };
        current = next;
        value = next_value;
        grad = next_grad;
        prev_grad_sq = next_grad_sq;
        grad_norm = next_grad_sq.sqrt();
        iterations += 1;
        converged = grad_norm <= cfg.grad_tol;
    }

    Ok(OptReport {
        factor: current,
        cost: value,
        grad_norm,
        iterations,
        converged,
        line_search_failed,
    })
}
