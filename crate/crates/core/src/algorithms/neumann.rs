use nalgebra::{DMatrix, DVector};

use super::AlgoError;
use crate::scalar::Scalar;

/// `(1/L) Q_b w` with `Q_0 = I`, `Q_i = I + (I − v_i/L) Q_{i−1}`, evaluated by
/// the vector recursion `w_i = w + (I − v_i/L) w_{i−1}`.
pub fn neumann_apply<T: Scalar>(v: &[DMatrix<T>], l_g: T, w: &DVector<T>) -> Result<DVector<T>, AlgoError> {
    if !(l_g > T::zero()) {
        return Err(AlgoError::InvalidParam(format!("L_g must be positive, got {l_g}")));
    }
    let d = w.len();
    if let Some(bad) = v.iter().position(|m| m.shape() != (d, d)) {
        return Err(AlgoError::DimensionMismatch(format!(
            "sample {bad} has shape {:?}, expected {d}x{d}",
            v[bad].shape()
        )));
    }
    Ok(apply_unchecked(v, l_g, w))
}

pub(crate) fn apply_unchecked<T: Scalar>(v: &[DMatrix<T>], l_g: T, w: &DVector<T>) -> DVector<T> {
    let inv_l = T::one() / l_g;
    let mut acc = w.clone();
    let mut tmp = DVector::zeros(w.len());
    for vi in v {
        vi.mul_to(&acc, &mut tmp);
        acc += w;
        acc.axpy(-inv_l, &tmp, T::one());
    }
    acc * inv_l
}

/// Materialized `(1/L) Q_b`, for checks and debugging.
pub fn neumann_matrix<T: Scalar>(v: &[DMatrix<T>], l_g: T, dim: usize) -> DMatrix<T> {
    let eye = DMatrix::<T>::identity(dim, dim);
    let mut q = eye.clone();
    for vi in v {
        q = &eye + (&eye - vi / l_g) * q;
    }
    q / l_g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::with_spectrum;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scaled_identity_is_exact() {
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        for b in [0, 1, 7] {
            let v = vec![DMatrix::identity(3, 3) * 2.0; b];
            let out = neumann_apply(&v, 2.0, &w).unwrap();
            assert!((out - &w / 2.0).norm() < 1e-15);
        }
    }

    #[test]
    fn vector_recursion_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=8 {
            let v: Vec<DMatrix<f64>> = (0..6)
                .map(|_| with_spectrum(&(0..d).map(|i| 0.3 + 0.1 * i as f64).collect::<Vec<_>>(), &mut rng))
                .collect();
            let w = DVector::from_fn(d, |i, _| (i as f64).sin());
            let fast = neumann_apply(&v, 1.2, &w).unwrap();
            let slow = neumann_matrix(&v, 1.2, d) * &w;
            assert!((fast - slow).norm() < 1e-10);
        }
    }

    #[test]
    fn shape_errors() {
        let w = DVector::from_vec(vec![1.0, 2.0]);
        let v = vec![DMatrix::identity(3, 3)];
        assert!(matches!(neumann_apply(&v, 1.0, &w), Err(AlgoError::DimensionMismatch(_))));
        assert!(matches!(neumann_apply(&[], 0.0, &w), Err(AlgoError::InvalidParam(_))));
    }
}
