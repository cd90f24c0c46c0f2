//! Heterogeneous quadratic multi-level problem with closed-form ground truth.
//!
//! Level `m` of agent `k`:
//! `g_m^k(y_{m-1}, y_m) = ½ y_mᵀ A_m^k y_m − y_mᵀ B_m^k y_{m-1}` (plus zero-mean
//! linear noise in sampled gradients); the outer objective is
//! `f^k(x, y_M) = ½‖y_M − c^k‖² + (λ/2)‖x‖²`. Best responses are linear maps
//! `y_m*(x) = P_m x` with `P_m = Ā_m⁻¹ B̄_m P_{m-1}`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    LevelSample, LevelSmoothness, MultiLevelProblem, Optimum, OuterSample, ProblemDims, ProblemError,
    SmoothnessMeta,
};
use crate::linalg::{gaussian_matrix, gaussian_vector, mean_of, solve_spd, spectral_norm, sym_eigenvalues, with_spectrum};
use crate::scalar::Scalar;

const MAX_SPECTRUM_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// `[d_x, d_1, …, d_M]`.
    pub dims: Vec<usize>,
    pub agents: usize,
    /// Scale of per-agent deviations around the shared means; 0 gives identical agents.
    pub heterogeneity: f64,
    /// Standard deviation of additive Gaussian noise on sampled gradients.
    pub noise: f64,
    /// Entry standard deviation of additive Gaussian noise on sampled cross derivatives.
    pub cross_noise: f64,
    /// Amplitude of the isotropic uniform shift `ζ I`, `ζ ∈ [−a, a]`, on sampled Hessians.
    pub hessian_noise: f64,
    pub lambda: f64,
    /// Eigenvalue range of the mean inner Hessians.
    pub spectrum: (f64, f64),
    /// Spectral norm of the mean coupling matrices `B̄_m`.
    pub coupling: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dims: vec![4, 3, 2],
            agents: 5,
            heterogeneity: 0.05,
            noise: 1.0,
            cross_noise: 0.2,
            hessian_noise: 0.01,
            lambda: 1.0,
            spectrum: (0.35, 0.5),
            coupling: 0.45,
            seed: 0,
        }
    }
}

/// Explicit per-agent coefficients: `a[level][agent]`, `b[level][agent]`, `c[agent]`.
#[derive(Debug, Clone)]
pub struct SyntheticParts<T: Scalar> {
    pub a: Vec<Vec<DMatrix<T>>>,
    pub b: Vec<Vec<DMatrix<T>>>,
    pub c: Vec<DVector<T>>,
    pub lambda: T,
    pub noise: T,
    pub cross_noise: T,
    pub hessian_noise: T,
}

#[derive(Debug, Clone)]
struct QuadLevel<T: Scalar> {
    a: Vec<DMatrix<T>>,
    b: Vec<DMatrix<T>>,
    a_mean: DMatrix<T>,
    b_mean: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct SyntheticQuadratic<T: Scalar> {
    dims: ProblemDims,
    meta: SmoothnessMeta<T>,
    levels: Vec<QuadLevel<T>>,
    c: Vec<DVector<T>>,
    c_mean: DVector<T>,
    c_spread: T,
    lambda: T,
    noise: T,
    cross_noise: T,
    hessian_noise: T,
    maps: Vec<DMatrix<T>>,
    optimum: Optimum<T>,
    pl: T,
}

impl<T: Scalar> SyntheticQuadratic<T> {
    /// Random instance; regenerates with seed `seed + attempt` until every
    /// sampled inner Hessian is guaranteed positive definite.
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self, ProblemError> {
        let (lo, hi) = cfg.spectrum;
        if !(lo > 0.0 && hi >= lo) {
            return Err(ProblemError::InvalidParam(format!("spectrum ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if cfg.lambda < 0.0 || cfg.noise < 0.0 || cfg.cross_noise < 0.0 || cfg.hessian_noise < 0.0 || cfg.heterogeneity < 0.0 {
            return Err(ProblemError::InvalidParam("lambda, noise and heterogeneity must be nonnegative".into()));
        }
        ProblemDims::new(cfg.dims.clone(), cfg.agents)?;
        let mut last = None;
        for attempt in 0..MAX_SPECTRUM_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt));
            let parts = random_parts::<T>(cfg, &mut rng);
            match Self::from_parts(parts) {
                Ok(p) => return Ok(p),
                Err(e @ ProblemError::SpectrumViolation { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn from_parts(parts: SyntheticParts<T>) -> Result<Self, ProblemError> {
        let SyntheticParts { a, b, c, lambda, noise, cross_noise, hessian_noise } = parts;
        let agents = c.len();
        if a.is_empty() || a.len() != b.len() || agents == 0 {
            return Err(ProblemError::InvalidParam("need matching per-level A and B and at least one agent".into()));
        }
        let d_m = c[0].len();
        let dx = b[0][0].ncols();
        let mut dims = vec![dx];
        for (m, (al, bl)) in a.iter().zip(&b).enumerate() {
            if al.len() != agents || bl.len() != agents {
                return Err(ProblemError::DimensionMismatch(format!("level {m}: expected {agents} agents")));
            }
            let d = al[0].nrows();
            let prev = *dims.last().expect("nonempty");
            for (ak, bk) in al.iter().zip(bl) {
                if ak.shape() != (d, d) || bk.shape() != (d, prev) {
                    return Err(ProblemError::DimensionMismatch(format!(
                        "level {m}: A is {:?}, B is {:?}, expected ({d},{d}) and ({d},{prev})",
                        ak.shape(),
                        bk.shape()
                    )));
                }
            }
            dims.push(d);
        }
        if *dims.last().expect("nonempty") != d_m || c.iter().any(|ck| ck.len() != d_m) {
            return Err(ProblemError::DimensionMismatch("outer target length must equal d_M".into()));
        }
        let dims = ProblemDims::new(dims, agents)?;

        let mut levels = Vec::with_capacity(a.len());
        let mut meta_levels = Vec::with_capacity(a.len());
        for (m, (al, bl)) in a.into_iter().zip(b).enumerate() {
            let d = al[0].nrows();
            let slack = hessian_noise;
            let mut lo = T::of(f64::INFINITY);
            let mut hi = T::zero();
            for ak in &al {
                let eig = sym_eigenvalues(ak);
                lo = lo.min(eig[0]);
                hi = hi.max(eig[d - 1]);
            }
            let b_norm = bl.iter().map(spectral_norm).fold(T::zero(), |x, y| x.max(y));
            let mu_g = lo - slack;
            let l_g = (hi + slack).max(b_norm);
            if !(mu_g > T::zero()) {
                return Err(ProblemError::SpectrumViolation {
                    level: m,
                    detail: format!("smallest sampled eigenvalue bound {mu_g} is not positive"),
                });
            }
            let mut lv = LevelSmoothness::from_spectrum(mu_g, l_g);
            lv.sigma_g = noise * T::of_usize(d).sqrt();
            lv.c_g = T::of(f64::INFINITY);
            meta_levels.push(lv);
            let a_mean = mean_of(&al);
            let b_mean = mean_of(&bl);
            levels.push(QuadLevel { a: al, b: bl, a_mean, b_mean });
        }
        let meta = SmoothnessMeta {
            levels: meta_levels,
            c_f: T::of(f64::INFINITY),
            sigma_f: noise * T::of_usize(dims.dx() + d_m).sqrt(),
        };
        meta.validate()?;

        let c_mean = mean_of(&c);
        let c_spread = c.iter().map(|ck| (ck - &c_mean).norm_squared()).fold(T::zero(), |x, y| x + y)
            * T::of(0.5)
            / T::of_usize(agents);

        let mut maps = Vec::with_capacity(levels.len());
        let mut p = DMatrix::<T>::identity(dx, dx);
        for lv in &levels {
            let rhs = &lv.b_mean * &p;
            let chol = lv.a_mean.clone().cholesky().ok_or(ProblemError::NotStronglyConvex)?;
            p = chol.solve(&rhs);
            maps.push(p.clone());
        }
        let pm = maps.last().expect("at least one level");
        let normal = pm.transpose() * pm + DMatrix::identity(dx, dx) * lambda;
        let x_star = solve_spd(&normal, &(pm.transpose() * &c_mean)).ok_or(ProblemError::NotStronglyConvex)?;
        let pl = sym_eigenvalues(&normal)[0];

        let mut problem = SyntheticQuadratic {
            dims,
            meta,
            levels,
            c,
            c_mean,
            c_spread,
            lambda,
            noise,
            cross_noise,
            hessian_noise,
            maps,
            optimum: Optimum { x: x_star.clone(), value: T::zero() },
            pl,
        };
        problem.optimum.value = problem.closed_form_value(&x_star);
        Ok(problem)
    }

    /// `P_m` with `y_m*(x) = P_m x` (zero-based level).
    pub fn best_response_map(&self, level: usize) -> &DMatrix<T> {
        &self.maps[level]
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// `F(x)` through the composed linear map.
    pub fn closed_form_value(&self, x: &DVector<T>) -> T {
        let r = self.maps.last().expect("levels") * x - &self.c_mean;
        T::of(0.5) * r.norm_squared() + self.c_spread + T::of(0.5) * self.lambda * x.norm_squared()
    }

    /// `∇F(x) = Pᵀ(P x − c̄) + λ x`.
    pub fn closed_form_gradient(&self, x: &DVector<T>) -> DVector<T> {
        let p = self.maps.last().expect("levels");
        p.transpose() * (p * x - &self.c_mean) + x * self.lambda
    }
}

fn random_parts<T: Scalar>(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> SyntheticParts<T> {
    let k = cfg.agents;
    let het = cfg.heterogeneity;
    let (lo, hi) = cfg.spectrum;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for w in cfg.dims.windows(2) {
        let (prev, d) = (w[0], w[1]);
        let eigs: Vec<T> = (0..d)
            .map(|i| match (i, d) {
                (0, _) => T::of(lo),
                (i, d) if i == d - 1 => T::of(hi),
                _ => T::of(lo + (hi - lo) * rng.random::<f64>()),
            })
            .collect();
        let a_bar: DMatrix<T> = with_spectrum(&eigs, rng);
        let mut b_bar: DMatrix<T> = gaussian_matrix(d, prev, rng);
        let bn = spectral_norm(&b_bar);
        if bn > T::zero() {
            b_bar *= T::of(cfg.coupling) / bn;
        }
        let dev_a: Vec<DMatrix<T>> = (0..k)
            .map(|_| {
                let g: DMatrix<T> = gaussian_matrix(d, d, rng);
                (&g + g.transpose()) * T::of(0.5 / (d as f64).sqrt())
            })
            .collect();
        let dev_b: Vec<DMatrix<T>> = (0..k)
            .map(|_| gaussian_matrix::<T>(d, prev, rng) * T::of(1.0 / (prev as f64).sqrt()))
            .collect();
        let mean_a = mean_of(&dev_a);
        let mean_b = mean_of(&dev_b);
        a.push(dev_a.iter().map(|e| &a_bar + (e - &mean_a) * T::of(het)).collect());
        b.push(dev_b.iter().map(|e| &b_bar + (e - &mean_b) * T::of(het)).collect());
    }
    let d_m = *cfg.dims.last().expect("dims");
    let c_bar: DVector<T> = gaussian_vector(d_m, rng);
    let dev_c: Vec<DVector<T>> = (0..k).map(|_| gaussian_vector(d_m, rng)).collect();
    let mean_c = mean_of(&dev_c);
    let c = dev_c.iter().map(|e| &c_bar + (e - &mean_c) * T::of(het)).collect();
    SyntheticParts {
        a,
        b,
        c,
        lambda: T::of(cfg.lambda),
        noise: T::of(cfg.noise),
        cross_noise: T::of(cfg.cross_noise),
        hessian_noise: T::of(cfg.hessian_noise),
    }
}


impl<T: Scalar> MultiLevelProblem<T> for SyntheticQuadratic<T> {
    fn tag(&self) -> &str {
        "synthetic"
    }

    fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    fn meta(&self) -> &SmoothnessMeta<T> {
        &self.meta
    }

    fn sample_outer(&self, agent: usize, x: &DVector<T>, y: &DVector<T>, rng: &mut dyn RngCore) -> OuterSample<T> {
        let mut grad_x = x * self.lambda;
        let mut grad_y = y - &self.c[agent];
        if self.noise > T::zero() {
            grad_x += gaussian_vector::<T>(x.len(), rng) * self.noise;
            grad_y += gaussian_vector::<T>(y.len(), rng) * self.noise;
        }
        OuterSample { grad_x, grad_y }
    }

    fn sample_level(
        &self,
        agent: usize,
        level: usize,
        y_prev: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> LevelSample<T> {
        let lv = &self.levels[level];
        let mut grad_y = &lv.a[agent] * y - &lv.b[agent] * y_prev;
        let mut cross = -lv.b[agent].transpose();
        if self.noise > T::zero() {
            grad_y += gaussian_vector::<T>(y.len(), rng) * self.noise;
        }
        if self.cross_noise > T::zero() {
            cross += gaussian_matrix::<T>(cross.nrows(), cross.ncols(), rng) * self.cross_noise;
        }
        LevelSample { grad_y, cross }
    }

    fn sample_hessian(
        &self,
        agent: usize,
        level: usize,
        _y_prev: &DVector<T>,
        _y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> DMatrix<T> {
        let a = &self.levels[level].a[agent];
        if self.hessian_noise > T::zero() {
            let shift = self.hessian_noise * T::of(2.0 * rng.random::<f64>() - 1.0);
            a.clone() + DMatrix::identity(a.nrows(), a.nrows()) * shift
        } else {
            a.clone()
        }
    }

    fn exact_outer(&self, x: &DVector<T>, y: &DVector<T>) -> OuterSample<T> {
        OuterSample { grad_x: x * self.lambda, grad_y: y - &self.c_mean }
    }

    fn exact_level(&self, level: usize, y_prev: &DVector<T>, y: &DVector<T>) -> LevelSample<T> {
        let lv = &self.levels[level];
        LevelSample { grad_y: &lv.a_mean * y - &lv.b_mean * y_prev, cross: -lv.b_mean.transpose() }
    }

    fn exact_hessian(&self, level: usize, _y_prev: &DVector<T>, _y: &DVector<T>) -> DMatrix<T> {
        self.levels[level].a_mean.clone()
    }

    fn outer_value(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        T::of(0.5) * (y - &self.c_mean).norm_squared() + self.c_spread + T::of(0.5) * self.lambda * x.norm_squared()
    }

    fn best_response(&self, x: &DVector<T>) -> Result<Vec<DVector<T>>, ProblemError> {
        let mut out = Vec::with_capacity(self.levels.len());
        let mut prev = x.clone();
        for lv in &self.levels {
            let y = solve_spd(&lv.a_mean, &(&lv.b_mean * &prev)).ok_or(ProblemError::NotStronglyConvex)?;
            out.push(y.clone());
            prev = y;
        }
        Ok(out)
    }

    fn optimum(&self) -> Option<&Optimum<T>> {
        Some(&self.optimum)
    }

    fn pl_constant(&self) -> Option<T> {
        Some(self.pl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::exact_hypergradient;

    fn identity_problem(levels: usize, a_scale: f64) -> SyntheticQuadratic<f64> {
        let d = 3;
        let eye = DMatrix::<f64>::identity(d, d);
        SyntheticQuadratic::from_parts(SyntheticParts {
            a: vec![vec![&eye * a_scale]; levels],
            b: vec![vec![eye.clone()]; levels],
            c: vec![DVector::zeros(d)],
            lambda: 1.0,
            noise: 0.0,
            cross_noise: 0.0,
            hessian_noise: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn identity_bilevel_has_closed_form() {
        let p = identity_problem(1, 1.0);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(p.best_response(&x).unwrap()[0], x);
        assert!((p.closed_form_value(&x) - x.norm_squared()).abs() < 1e-14);
        assert!(p.optimum().unwrap().x.norm() < 1e-15);
        assert!(p.optimum().unwrap().value.abs() < 1e-15);
        let g = exact_hypergradient(&p, &x).unwrap();
        assert!((g - &x * 2.0).norm() < 1e-14);
    }

    #[test]
    fn two_level_scaled_identity_maps_to_quarter() {
        let p = identity_problem(2, 2.0);
        let map = p.best_response_map(1);
        assert!((map - DMatrix::identity(3, 3) * 0.25).norm() < 1e-15);
        let bound: f64 = p.meta().levels.iter().map(|l| l.l_g / l.mu_g).product();
        assert!(spectral_norm(map) <= bound);
    }

    #[test]
    fn generated_meta_is_valid() {
        let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig::default()).unwrap();
        p.meta().validate().unwrap();
        assert_eq!(p.dims().all(), &[4, 3, 2]);
        assert!(p.pl_constant().unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn impossible_spectrum_is_rejected() {
        let cfg = SyntheticConfig { hessian_noise: 10.0, ..Default::default() };
        assert!(matches!(
            SyntheticQuadratic::<f64>::generate(&cfg),
            Err(ProblemError::SpectrumViolation { .. })
        ));
    }

    #[test]
    fn single_precision_instance() {
        let p = SyntheticQuadratic::<f32>::generate(&SyntheticConfig::default()).unwrap();
        let x = DVector::from_element(4, 0.3f32);
        let g = exact_hypergradient(&p, &x).unwrap();
        let g_ref = p.closed_form_gradient(&x);
        assert!((g - g_ref).norm() < 1e-4);
    }
}
