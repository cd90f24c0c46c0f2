//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --test acceptance` (add `--release` for speed).

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use dsmo_cli::commands::cmd_run;
use dsmo_cli::config::{AlgoName, ExperimentConfig, PolicyEvalParams, ProblemConfig, RegimeName};
use dsmo_core::algorithms::{
    neumann_matrix, run_dbsa, run_dsgd, run_dsmo, BRule, DbsaOptions, DsgdOptions, RunOptions, StepSchedule,
};
use dsmo_core::metrics::{loglog_slope, samples_to_epsilon, speedup_table, window_mean, Field, RunRecord};
use dsmo_core::network::{build_topology, GossipMatrix, MixingScheme, TopologyKind};
use dsmo_core::problems::{
    gradient_check, parse_libsvm, synthetic_dataset, write_libsvm, Dataset, HyperparamConfig, HyperparamProblem,
    LibsvmError, MultiLevelProblem, OraclePoint, OracleRequest, PolicyEvalConfig, PolicyEvalProblem,
    RiskAverseConfig, RiskAverseProblem, SyntheticConfig, SyntheticQuadratic,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn ring(k: usize) -> GossipMatrix<f64> {
    let topo = build_topology(TopologyKind::Ring, k, 0.0, 0).unwrap();
    GossipMatrix::new(&topo, MixingScheme::UniformRing).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn hypergradient_vs_fd() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, dims) in [vec![6, 4], vec![6, 4, 3], vec![6, 4, 3, 2]].into_iter().enumerate() {
        for problem_seed in 0..4u64 {
            let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig {
                dims: dims.clone(),
                seed: 100 * m as u64 + problem_seed,
                ..Default::default()
            })
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(problem_seed);
            let pts: Vec<DVector<f64>> = (0..5).map(|_| gaussian(dims[0], &mut rng) * 2.0).collect();
            worst = worst.max(gradient_check(&p, &pts, 1e-5).unwrap().max_rel_err);
        }
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e} over M=1,2,3 x 20 points"))
}

/// `Q diag(1/λ) Qᵀ` and the matrix itself, from a Gram–Schmidt basis.
fn spd_with_inverse(eigs: &[f64], rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = eigs.len();
    let mut q = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut v = gaussian(d, rng);
        for i in 0..j {
            let qi = q.column(i).clone_owned();
            v -= &qi * qi.dot(&v);
        }
        q.set_column(j, &(v.normalize()));
    }
    let a = &q * DMatrix::from_diagonal(&DVector::from_column_slice(eigs)) * q.transpose();
    let inv_eigs: Vec<f64> = eigs.iter().map(|e| 1.0 / e).collect();
    let a_inv = &q * DMatrix::from_diagonal(&DVector::from_vec(inv_eigs)) * q.transpose();
    (a, a_inv)
}

fn neumann_tail() -> Outcome {
    let (mu, l, d) = (0.5, 1.0, 6);
    let kappa = mu / l;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, a_inv) = spd_with_inverse(&[0.5, 0.6, 0.7, 0.8, 0.9, 1.0], &mut rng);
    let err = |b: usize| {
        let q = neumann_matrix(&vec![a.clone(); b], l, d);
        let e = &q - &a_inv;
        e.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let bs = [5usize, 10, 20, 40];
    let errs: Vec<f64> = bs.iter().map(|&b| err(b)).collect();
    // Rounding in the summed series is ~1e-16 against tails down to ~1e-12.
    let slack = 1.0 + 1e-3;
    let mut ok = true;
    for (i, (&b, &e)) in bs.iter().zip(&errs).enumerate() {
        ok &= e <= (1.0 - kappa).powi(b as i32 + 1) / (kappa * l) / kappa * slack;
        if i > 0 {
            ok &= e / errs[i - 1] <= (1.0 - kappa).powi((b - bs[i - 1]) as i32) * slack;
        }
    }
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    outcome(ok, format!("errors at b=5,10,20,40: {}", shown.join(", ")))
}

fn gossip_invariants() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0;
    for k in 2..=50 {
        for kind in [TopologyKind::Ring, TopologyKind::Complete, TopologyKind::Star, TopologyKind::Random] {
            let topo = build_topology(kind, k, 0.3, k as u64).unwrap();
            let mut schemes = vec![MixingScheme::Metropolis];
            match kind {
                TopologyKind::Ring => schemes.push(MixingScheme::UniformRing),
                TopologyKind::Complete => schemes.push(MixingScheme::MeanMatrix),
                _ => {}
            }
            for s in schemes {
                let w = GossipMatrix::<f64>::new(&topo, s).unwrap();
                checked += 1;
                if !w.report(Some(&topo)).passes(1e-12) {
                    failures.push(format!("{kind} K={k} {s}"));
                }
            }
        }
    }
    // Circulant oracle: the uniform ring has eigenvalues (1 + 2cos(2πj/K)) / 3.
    let k = 5;
    let oracle = (1..k)
        .map(|j| (1.0 + 2.0 * (2.0 * std::f64::consts::PI * j as f64 / k as f64).cos()) / 3.0)
        .fold(0.0f64, |m, e| m.max(e.abs()))
        .powi(2);
    let rho = ring(k).rho();
    let ok = failures.is_empty() && (rho - oracle).abs() <= 1e-10;
    outcome(ok, format!("{checked} matrices, {} failures; ring K=5 rho {rho:.12} vs {oracle:.12}", failures.len()))
}

/// Synthetic M=2 problem shared by the rate, speedup and consensus checks.
fn rate_problem(k: usize) -> SyntheticQuadratic<f64> {
    SyntheticQuadratic::generate(&SyntheticConfig { dims: vec![40, 5, 3], agents: k, seed: 1, ..Default::default() })
        .unwrap()
}

const RATE_HORIZON: usize = 20_000;
const RATE_REPS: u64 = 5;

fn rate_runs(k: usize) -> Vec<Vec<RunRecord>> {
    let p = rate_problem(k);
    let w = ring(k);
    let sched = StepSchedule::diminishing(50.0, p.pl_constant().unwrap(), BRule::Theory);
    (0..RATE_REPS)
        .into_par_iter()
        .map(|seed| {
            let opts = RunOptions { horizon: RATE_HORIZON, seed, run_id: format!("run_{seed}"), ..Default::default() };
            run_dsmo(&p, &w, &sched, &opts).unwrap()
        })
        .collect()
}

fn pl_rate(runs: &[Vec<RunRecord>]) -> Outcome {
    let slopes: Vec<f64> = runs
        .iter()
        .map(|r| loglog_slope(r, 2_000, RATE_HORIZON as u64, Field::MseToOpt).unwrap().slope)
        .collect();
    let m = median(slopes.clone());
    let shown: Vec<String> = slopes.iter().map(|s| format!("{s:.2}")).collect();
    outcome((-1.3..=-0.7).contains(&m), format!("median slope {m:.3} (runs: {})", shown.join(", ")))
}

fn linear_speedup(k5: &[Vec<RunRecord>]) -> Outcome {
    let eps = 4.0 * median(k5.iter().map(|r| r.last().unwrap().mse_to_opt).collect());
    let mut all = k5.to_vec();
    for k in [10, 20] {
        all.extend(rate_runs(k));
    }
    let rows = speedup_table(&all, eps, Field::MseToOpt).unwrap();
    let med: Vec<f64> = rows.iter().map(|r| r.median_samples()).collect();
    let hi = med.iter().cloned().fold(f64::MIN, f64::max);
    let lo = med.iter().cloned().fold(f64::MAX, f64::min);
    let shown: Vec<String> = rows.iter().map(|r| format!("K={}: {:.3e}", r.k, r.median_samples())).collect();
    let ok = rows.len() == 3 && lo.is_finite() && hi / lo <= 1.5;
    outcome(ok, format!("eps {eps:.3e}; {}; max/min {:.3}", shown.join(", "), hi / lo))
}

fn consensus_scaling() -> Outcome {
    let k = 5;
    let p = rate_problem(k);
    let w = ring(k);
    let horizon = 10_000;
    let late = |c0: f64| -> f64 {
        let sched = StepSchedule::constant(c0, horizon, BRule::Theory);
        let per_seed: Vec<f64> = (0..3u64)
            .into_par_iter()
            .map(|seed| {
                let r = run_dsmo(&p, &w, &sched, &RunOptions { horizon, seed, ..Default::default() }).unwrap();
                window_mean(&r, horizon as u64 / 2, horizon as u64, Field::ConsensusX).unwrap()
            })
            .collect();
        per_seed.iter().sum::<f64>() / per_seed.len() as f64
    };
    let ratio = late(0.1) / late(0.05);
    outcome((3.0..=5.33).contains(&ratio), format!("late-window consensus ratio {ratio:.3}"))
}

fn baseline_ordering() -> Outcome {
    let k = 5;
    let p = PolicyEvalProblem::<f64>::new(&PolicyEvalConfig { num_states: 20, agents: k, seed: 1, ..Default::default() })
        .unwrap();
    let w = ring(k);
    let sched = StepSchedule::diminishing(50.0, p.pl_constant().unwrap(), BRule::Theory);
    let wins: Vec<bool> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let dsmo = run_dsmo(&p, &w, &sched, &RunOptions { horizon: 20_000, seed, ..Default::default() }).unwrap();
            let short = RunOptions { horizon: 300, seed, ..Default::default() };
            let dbsa = run_dbsa(&p, &w, &sched, &DbsaOptions::default(), &short).unwrap();
            let dsgd = run_dsgd(&p, &w, &sched, &DsgdOptions::default(), &short).unwrap();
            [dbsa, dsgd].iter().all(|base| {
                let last = base.last().unwrap();
                samples_to_epsilon(&dsmo, last.mse_to_opt, Field::MseToOpt)
                    .samples()
                    .is_some_and(|s| s < last.samples_total)
            })
        })
        .collect();
    let n = wins.iter().filter(|&&w| w).count();
    outcome(n >= 4, format!("DSMO ahead of both baselines on {n}/5 seeds"))
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    let synth = ExperimentConfig { horizon: 400, reps: 3, ..Default::default() };
    configs.push(synth.clone());
    let mut pe = synth.clone();
    pe.problem = ProblemConfig::PolicyEval(PolicyEvalParams { num_states: 20, ..Default::default() });
    pe.schedule.regime = RegimeName::Constant;
    configs.push(pe.clone());
    let mut dbsa = pe;
    dbsa.algo = AlgoName::Dbsa;
    dbsa.horizon = 60;
    configs.push(dbsa);
    let mut mismatches = 0;
    for (i, cfg) in configs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (label, threads) in [("a", 1), ("b", 8), ("c", 8)] {
            let dir = tmp.path().join(format!("{i}_{label}"));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| cmd_run(cfg, &dir)).unwrap();
            outputs.push(dir_bytes(&dir));
        }
        if outputs[0].is_empty() || outputs.iter().any(|o| o != &outputs[0]) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{} configs at 1 and 8 threads, {mismatches} mismatches", configs.len()))
}

fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.random_range(1..40);
    let d = rng.random_range(1..25);
    let features = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| match rng.random_range(0..5) {
                    0 | 1 => 0.0,
                    2 => f64::from_bits(rng.random::<u64>() & !(0x7ff << 52) | (rng.random_range(1..2046u64) << 52)),
                    3 => rng.random_range(-1e6..1e6),
                    _ => rng.random_range(-3..4) as f64,
                })
                .collect()
        })
        .collect();
    Dataset { labels: (0..n).map(|_| rng.random_range(0..2u8)).collect(), features, n_features: d }
}

fn libsvm_parser() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut lossless = 0;
    for _ in 0..100 {
        let data = random_dataset(&mut rng);
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        if parse_libsvm(buf.as_slice()).map(|d| d == data).unwrap_or(false) {
            lossless += 1;
        }
    }
    let fixtures: [(&str, usize); 7] = [
        ("+1 1:0.5\n-1 2:x\n", 2),
        ("+1 1:1\n\n+1 3:2\nfoo 1:1\n", 4),
        ("2 1:1\n", 1),
        ("+1 1:1 1:2\n", 1),
        ("-1 0:1\n", 1),
        ("+1 1:1\n-1 1:1\n+1 1:1\n0 4\n", 4),
        ("+1 1:1\n-1 a:1\n", 2),
    ];
    let mut right_lines = 0;
    for (text, line) in fixtures {
        if matches!(parse_libsvm(text.as_bytes()), Err(LibsvmError::Parse { line: l, .. }) if l == line) {
            right_lines += 1;
        }
    }
    outcome(
        lossless == 100 && right_lines == fixtures.len(),
        format!("{lossless}/100 round trips, {right_lines}/{} fixtures at the right line", fixtures.len()),
    )
}

/// Largest `|mean − exact|` in standard errors over every oracle tag at `points` random points.
fn worst_z(problem: &dyn MultiLevelProblem<f64>, draws: usize, points: usize, seed: u64, nonneg_x: bool) -> f64 {
    let dims = problem.dims().clone();
    let levels = dims.num_levels();
    let mut tags = vec![OracleRequest::Grad1F, OracleRequest::Grad2F];
    for m in 0..levels {
        tags.extend([OracleRequest::Grad2G(m), OracleRequest::Grad12G(m), OracleRequest::Grad22G(m)]);
    }
    (0..points)
        .into_par_iter()
        .map(|pt| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + pt as u64);
            let mut x = gaussian(dims.dx(), &mut rng);
            if nonneg_x {
                x = x.abs();
            }
            let ys: Vec<DVector<f64>> = (0..levels).map(|m| gaussian(dims.level_dim(m), &mut rng)).collect();
            let mut worst: f64 = 0.0;
            for &tag in &tags {
                let at = match tag {
                    OracleRequest::Grad1F | OracleRequest::Grad2F => OraclePoint { upstream: &x, own: &ys[levels - 1] },
                    OracleRequest::Grad2G(m) | OracleRequest::Grad12G(m) | OracleRequest::Grad22G(m) => {
                        OraclePoint { upstream: if m == 0 { &x } else { &ys[m - 1] }, own: &ys[m] }
                    }
                };
                let exact = problem.query_exact(tag, at);
                let exact = exact.as_slice();
                let mut sum = vec![0.0; exact.len()];
                let mut sq = vec![0.0; exact.len()];
                for i in 0..draws {
                    let s = problem.query(i % dims.agents(), tag, at, &mut rng);
                    for (j, v) in s.payload.as_slice().iter().enumerate() {
                        sum[j] += v;
                        sq[j] += v * v;
                    }
                }
                let n = draws as f64;
                for j in 0..exact.len() {
                    let mean = sum[j] / n;
                    let var = (sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
                    let se = (var / n).sqrt();
                    let diff = (mean - exact[j]).abs();
                    // Deterministic entries only carry rounding from the running sums.
                    let floor = 1e-9 * (1.0 + exact[j].abs());
                    let z = if diff <= floor { 0.0 } else if se == 0.0 { f64::INFINITY } else { diff / se };
                    worst = worst.max(z);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

fn unbiasedness() -> Outcome {
    const DRAWS: usize = 100_000;
    let synth = SyntheticQuadratic::<f64>::generate(&SyntheticConfig::default()).unwrap();
    let pe = PolicyEvalProblem::<f64>::new(&PolicyEvalConfig { num_states: 20, ..Default::default() }).unwrap();
    let all = synthetic_dataset(300, 6, 4);
    let idx: Vec<usize> = (0..300).collect();
    let hp = HyperparamProblem::<f64>::new(&all.subset(&idx[..200]), &all.subset(&idx[200..]), &HyperparamConfig::default())
        .unwrap();
    let ra = RiskAverseProblem::<f64>::new(&RiskAverseConfig { n_data: 1000, ..Default::default() }).unwrap();
    let cases: [(&str, &dyn MultiLevelProblem<f64>, bool); 4] =
        [("synthetic", &synth, false), ("policy_eval", &pe, false), ("hyperparam", &hp, true), ("risk_averse", &ra, false)];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (name, p, nonneg)) in cases.into_iter().enumerate() {
        let z = worst_z(p, DRAWS, 5, i as u64, nonneg);
        ok &= z <= 5.0;
        parts.push(format!("{name} {z:.2}"));
    }
    outcome(ok, format!("worst |z| per problem: {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("{} criterion {id:>2} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };
    timed(1, "hypergradient vs finite differences", &mut hypergradient_vs_fd);
    timed(2, "Neumann inverse-Hessian tail", &mut neumann_tail);
    timed(3, "gossip matrix invariants", &mut gossip_invariants);
    let mut k5 = Vec::new();
    timed(4, "PL rate slope", &mut || {
        k5 = rate_runs(5);
        pl_rate(&k5)
    });
    timed(5, "linear speedup", &mut || linear_speedup(&k5));
    timed(6, "consensus scaling", &mut consensus_scaling);
    timed(7, "baseline ordering", &mut baseline_ordering);
    timed(8, "determinism across thread counts", &mut determinism);
    timed(9, "LIBSVM parser", &mut libsvm_parser);
    timed(10, "oracle unbiasedness", &mut unbiasedness);
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
