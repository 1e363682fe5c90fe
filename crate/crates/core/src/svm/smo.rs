//! Binary SMO solver for the soft-margin SVM dual.
//!
//! Minimises `½ αᵀQα − Σα` with `Q_ij = y_i y_j K_ij`, `0 ≤ α ≤ C`,
//! `Σ y_i α_i = 0`, using the maximal violating pair as working set.

use crate::error::{Result, ShdlError};

use super::kernel::KernelRows;

const TAU: f64 = 1e-12;

/// Solved dual of one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ α_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    pub iterations: usize,
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Solves one binary problem with labels `y ∈ {−1, +1}`.
pub fn solve_binary<K: KernelRows>(
    kernel: &mut K,
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BinarySolution> {
    let n = y.len();
    if kernel.len() != n {
        return Err(ShdlError::Dimension(format!(
            "kernel has {} rows for {n} labels",
            kernel.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) || !(tol > 0.0) {
        return Err(ShdlError::Parameter(format!("invalid SVM parameters C={c}, tol={tol}")));
    }
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;

    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let s = -y[t] * grad[t];
            if in_up(y[t], alpha[t], c) && s > gmax {
                gmax = s;
                i = t;
            }
            if in_low(y[t], alpha[t], c) && s < gmin {
                gmin = s;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        if iterations >= max_iter {
            return Err(ShdlError::Training(format!(
                "SMO did not converge in {max_iter} iterations (gap {:.3e})",
                gmax - gmin
            )));
        }
        iterations += 1;

        let ki = kernel.row(i);
        let kj = kernel.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kii = kernel.diagonal(i);
        let kjj = kernel.diagonal(j);
        let kij = ki[j];

        if y[i] != y[j] {
            let mut quad = kii + kjj - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = kii + kjj - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (ki[t] * di + kj[t] * dj);
        }
    }

    Ok(BinarySolution {
        bias: -threshold(y, &alpha, &grad, c),
        alpha,
        iterations,
    })
}

fn threshold(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// `Σα − ½ αᵀQα` for a dense Gram matrix.
pub fn dual_objective(gram: &ndarray::Array2<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[[i, j]];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Worst KKT violation of a solution, with decision values recomputed
/// from kernel rows: margin `y f(x)` must be ≥ 1 at `α = 0`, = 1 for
/// free vectors and ≤ 1 at `α = C`.
pub fn kkt_violation<K: KernelRows>(kernel: &mut K, y: &[f64], sol: &BinarySolution, c: f64) -> f64 {
    let n = y.len();
    let mut f = vec![sol.bias; n];
    for j in 0..n {
        let a = sol.alpha[j];
        if a == 0.0 {
            continue;
        }
        let row = kernel.row(j);
        for i in 0..n {
            f[i] += a * y[j] * row[i];
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let m = y[i] * f[i] - 1.0;
        let a = sol.alpha[i];
        let v = if a <= 0.0 {
            (-m).max(0.0)
        } else if a >= c {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}
