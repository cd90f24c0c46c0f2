use nalgebra::DVector;

use super::{MultiLevelProblem, ProblemError};
use crate::linalg::solve_spd;
use crate::scalar::Scalar;

/// `∇F(x) = ∇₁f + (−1)^M ∏_m [∇₁₂²g_m (∇₂₂²g_m)⁻¹] ∇₂f`, all derivatives taken
/// at the exact best responses. The chain is applied right to left as
/// matrix-vector products with one linear solve per level.
pub fn exact_hypergradient<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    x: &DVector<T>,
) -> Result<DVector<T>, ProblemError> {
    let ys = problem.best_response(x)?;
    let levels = ys.len();
    let outer = problem.exact_outer(x, &ys[levels - 1]);
    let mut w = outer.grad_y;
    for m in (0..levels).rev() {
        let y_prev = if m == 0 { x } else { &ys[m - 1] };
        let hess = problem.exact_hessian(m, y_prev, &ys[m]);
        w = solve_spd(&hess, &w).ok_or(ProblemError::NotStronglyConvex)?;
        w = problem.exact_level(m, y_prev, &ys[m]).cross * w;
    }
    if levels % 2 == 1 {
        w.neg_mut();
    }
    Ok(outer.grad_x + w)
}

/// `F(x) = f(x, y_M*(x))` through exact best responses.
pub fn objective<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    x: &DVector<T>,
) -> Result<T, ProblemError> {
    let ys = problem.best_response(x)?;
    Ok(problem.outer_value(x, ys.last().expect("at least one level")))
}

/// Central finite differences of [`objective`] with step `h`.
pub fn finite_difference_gradient<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    x: &DVector<T>,
    h: T,
) -> Result<DVector<T>, ProblemError> {
    let two_h = h + h;
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = objective(problem, &probe)?;
        probe[i] = x[i] - h;
        let down = objective(problem, &probe)?;
        probe[i] = x[i];
        g[i] = (up - down) / two_h;
    }
    Ok(g)
}

/// Outcome of comparing [`exact_hypergradient`] with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub points: usize,
    /// `max ‖∇F − ∇F_fd‖ / max(‖∇F‖, ‖∇F_fd‖, 1e-12)` over the points.
    pub max_rel_err: f64,
    pub worst_point: usize,
}

pub fn gradient_check<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    points: &[DVector<T>],
    h: T,
) -> Result<GradientCheck, ProblemError> {
    let mut out = GradientCheck { points: points.len(), max_rel_err: 0.0, worst_point: 0 };
    for (i, x) in points.iter().enumerate() {
        let exact = exact_hypergradient(problem, x)?;
        let fd = finite_difference_gradient(problem, x, h)?;
        let scale = exact.norm().as_f64().max(fd.norm().as_f64()).max(1e-12);
        let err = (exact - fd).norm().as_f64() / scale;
        if err > out.max_rel_err || i == 0 {
            out.max_rel_err = err;
            out.worst_point = i;
        }
    }
    Ok(out)
}
