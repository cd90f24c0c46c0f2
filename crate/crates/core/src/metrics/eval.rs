use std::time::Instant;

use nalgebra::DVector;

use super::RunRecord;
use crate::problems::{exact_hypergradient, objective, MultiLevelProblem};
use crate::scalar::Scalar;

/// Identifying columns shared by every record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub run_id: String,
    pub algo: String,
    pub problem: String,
    pub k: usize,
    pub rho: f64,
}

/// `Σ_k ‖v_k − v̄‖² / K`.
pub fn consensus_error<T: Scalar>(values: &[&DVector<T>]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mut mean = DVector::<f64>::zeros(values[0].len());
    for v in values {
        mean += v.map(|e| e.as_f64());
    }
    mean /= n;
    values.iter().map(|v| (v.map(|e| e.as_f64()) - &mean).norm_squared()).sum::<f64>() / n
}

/// Turns iterate snapshots into [`RunRecord`]s using the problem's exact
/// oracles. Quantities a problem cannot provide are stored as NaN.
pub struct Recorder<'a, T: Scalar, P: MultiLevelProblem<T> + ?Sized> {
    problem: &'a P,
    label: RunLabel,
    x_star: Option<DVector<f64>>,
    f_star: f64,
    start: Instant,
    wall: bool,
    records: Vec<RunRecord>,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar, P: MultiLevelProblem<T> + ?Sized> Recorder<'a, T, P> {
    pub fn new(problem: &'a P, label: RunLabel, record_wall_ms: bool, start: Instant) -> Self {
        let opt = problem.optimum();
        Recorder {
            problem,
            label,
            x_star: opt.map(|o| o.x.map(|e| e.as_f64())),
            f_star: opt.map_or(f64::NAN, |o| o.value.as_f64()),
            start,
            wall: record_wall_ms,
            records: Vec::new(),
            _scalar: std::marker::PhantomData,
        }
    }

    /// `xs[k]` is agent `k`'s outer iterate, `ys[m][k]` its level-`m` iterate.
    pub fn record(&mut self, t: usize, samples_total: u64, xs: &[&DVector<T>], ys: &[Vec<&DVector<T>>]) {
        let k = xs.len() as f64;
        let mut x_bar = DVector::<T>::zeros(xs[0].len());
        for x in xs {
            x_bar += *x;
        }
        x_bar /= T::of(k);
        let xb64 = x_bar.map(|e| e.as_f64());
        let grad_norm_sq = exact_hypergradient(self.problem, &x_bar).map_or(f64::NAN, |g| g.norm_squared().as_f64());
        let mse_to_opt = self.x_star.as_ref().map_or(f64::NAN, |xs| (&xb64 - xs).norm_squared());
        let obj_gap = objective(self.problem, &x_bar).map_or(f64::NAN, |f| f.as_f64() - self.f_star);
        self.records.push(RunRecord {
            run_id: self.label.run_id.clone(),
            algo: self.label.algo.clone(),
            problem: self.label.problem.clone(),
            k: self.label.k,
            rho: self.label.rho,
            t: t as u64,
            samples_total,
            grad_norm_sq,
            mse_to_opt,
            obj_gap,
            consensus_x: consensus_error(xs),
            consensus_y: ys.iter().map(|level| consensus_error(level)).collect(),
            wall_ms: if self.wall { self.start.elapsed().as_millis() as u64 } else { 0 },
        });
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn finish(self) -> Vec<RunRecord> {
        self.records
    }
}
