//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// Values that can be combined linearly: vectors and matrices of a fixed shape.
pub trait Mixable<T: Scalar>: Clone + Send + Sync {
    fn zeros_like(&self) -> Self;
    /// `self += a * other`
    fn add_scaled(&mut self, a: T, other: &Self);
    fn scale_mut(&mut self, a: T);
    fn shape(&self) -> (usize, usize);
    fn sq_norm(&self) -> T;
}

impl<T: Scalar> Mixable<T> for DVector<T> {
    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn add_scaled(&mut self, a: T, other: &Self) {
        self.axpy(a, other, T::one());
    }
    fn scale_mut(&mut self, a: T) {
        *self *= a;
    }
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), 1)
    }
    fn sq_norm(&self) -> T {
        self.norm_squared()
    }
}

impl<T: Scalar> Mixable<T> for DMatrix<T> {
    fn zeros_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, a: T, other: &Self) {
        self.zip_apply(other, |s, o| *s += a * o);
    }
    fn scale_mut(&mut self, a: T) {
        *self *= a;
    }
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }
    fn sq_norm(&self) -> T {
        self.norm_squared()
    }
}

/// Arithmetic mean of a non-empty slice of same-shaped values.
pub fn mean_of<T: Scalar, V: Mixable<T>>(values: &[V]) -> V {
    let mut acc = values[0].zeros_like();
    let w = T::one() / T::of_usize(values.len());
    for v in values {
        acc.add_scaled(w, v);
    }
    acc
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    let eig = m.clone().symmetric_eigen();
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalue"));
    vals
}

/// Spectral norm (largest singular value).
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b))
}

/// Solve `a * x = b` for a symmetric positive definite `a`, falling back to LU.
pub fn solve_spd<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

pub fn gaussian_vector<T: Scalar>(n: usize, rng: &mut dyn RngCore) -> DVector<T> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z)
    })
}

pub fn gaussian_matrix<T: Scalar>(r: usize, c: usize, rng: &mut dyn RngCore) -> DMatrix<T> {
    DMatrix::from_fn(r, c, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z)
    })
}

/// Haar-ish random orthogonal matrix from the QR factorisation of a Gaussian matrix.
pub fn random_orthogonal<T: Scalar>(n: usize, rng: &mut dyn RngCore) -> DMatrix<T> {
    let g: DMatrix<T> = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < T::zero() {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// Symmetric matrix with the given spectrum in a random orthonormal basis.
pub fn with_spectrum<T: Scalar>(eigs: &[T], rng: &mut dyn RngCore) -> DMatrix<T> {
    let n = eigs.len();
    let q = random_orthogonal::<T>(n, rng);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(eigs));
    let m = &q * d * q.transpose();
    symmetrize(&m)
}

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::of(0.5)
}
