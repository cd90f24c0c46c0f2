use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dsmo_core::algorithms::{run_dbsa, run_dsgd, run_dsmo, DbsaOptions, DsgdOptions, RunOptions};
use dsmo_core::metrics::{
    loglog_slope, read_csv, speedup_table, window_mean, write_csv, Field, RunRecord, SpeedupRow,
};
use dsmo_core::network::{build_topology, GossipMatrix, MatrixReport, Topology};
use dsmo_core::problems::{
    gradient_check, read_libsvm, synthetic_dataset, Dataset, HyperparamConfig, HyperparamProblem,
    MultiLevelProblem, PolicyEvalProblem, RiskAverseProblem, SyntheticQuadratic,
};
use dsmo_core::Scalar;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{
    check_k_list, AlgoName, ExperimentConfig, HyperparamParams, Precision, ProblemConfig,
};
use crate::error::CliError;

/// Slope window accepted as the `-1` rate of a PL run.
pub const SLOPE_WINDOW: (f64, f64) = (-1.3, -0.7);
/// Largest gradient-check error still reported as a pass.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const INVARIANT_TOLERANCE: f64 = 1e-12;

type DynProblem<T> = Box<dyn MultiLevelProblem<T>>;

fn problem_error(e: impl std::fmt::Display) -> CliError {
    CliError::config("/problem", e.to_string())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    use dsmo_core::problems::LibsvmError;
    read_libsvm(path).map_err(|e| match e {
        LibsvmError::Io(source) => CliError::io(path, source),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

fn pad_features(d: &mut Dataset, n: usize) {
    for row in &mut d.features {
        row.resize(n, 0.0);
    }
    d.n_features = n;
}

fn hyperparam_data(p: &HyperparamParams) -> Result<(Dataset, Dataset), CliError> {
    match (&p.train_path, &p.val_path) {
        (Some(tr), Some(va)) => {
            let mut train = load_dataset(tr)?;
            let mut val = load_dataset(va)?;
            let n = train.n_features.max(val.n_features);
            pad_features(&mut train, n);
            pad_features(&mut val, n);
            Ok((train, val))
        }
        (None, None) => {
            let all = synthetic_dataset(p.n_train + p.n_val, p.n_features, p.data_seed);
            let idx: Vec<usize> = (0..all.len()).collect();
            Ok((all.subset(&idx[..p.n_train]), all.subset(&idx[p.n_train..])))
        }
        (Some(_), None) => Err(CliError::config("/problem/val_path", "train_path needs a matching val_path")),
        (None, Some(_)) => Err(CliError::config("/problem/train_path", "val_path needs a matching train_path")),
    }
}

pub fn build_problem<T: Scalar>(cfg: &ProblemConfig, agents: usize) -> Result<DynProblem<T>, CliError> {
    Ok(match cfg {
        ProblemConfig::Synthetic(p) => Box::new(SyntheticQuadratic::<T>::generate(&p.to_core(agents)).map_err(problem_error)?),
        ProblemConfig::PolicyEval(p) => Box::new(PolicyEvalProblem::<T>::new(&p.to_core(agents)).map_err(problem_error)?),
        ProblemConfig::RiskAverse(p) => Box::new(RiskAverseProblem::<T>::new(&p.to_core(agents)).map_err(problem_error)?),
        ProblemConfig::Hyperparam(p) => {
            let (train, val) = hyperparam_data(p)?;
            let hc = HyperparamConfig { agents, seed: p.seed, base_ridge: p.base_ridge, x_cap: p.x_cap };
            Box::new(HyperparamProblem::<T>::new(&train, &val, &hc).map_err(problem_error)?)
        }
    })
}

pub fn build_network<T: Scalar>(cfg: &ExperimentConfig) -> Result<(Topology, GossipMatrix<T>), CliError> {
    let net = &cfg.network;
    let topo = build_topology(net.kind.into(), net.k, net.edge_prob, net.seed)
        .map_err(|e| CliError::config("/network", e.to_string()))?;
    let w = GossipMatrix::new(&topo, cfg.scheme()).map_err(|e| CliError::config("/network/scheme", e.to_string()))?;
    Ok((topo, w))
}

/// Fills every optional knob so the manifest describes the run completely.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    cfg.validate_static()?;
    let mut out = cfg.clone();
    out.network.scheme = Some(cfg.scheme().into());
    out.eval_every = Some(run_options(cfg, 0).cadence());
    if out.schedule.mu.is_none() && matches!(cfg.schedule.regime, crate::config::RegimeName::Diminishing) {
        let problem = build_problem::<f64>(&cfg.problem, cfg.network.k)?;
        out.schedule.mu = problem.pl_constant();
    }
    Ok(out)
}

fn run_options(cfg: &ExperimentConfig, rep: usize) -> RunOptions {
    RunOptions {
        horizon: cfg.horizon,
        seed: cfg.base_seed + rep as u64,
        eval_every: cfg.eval_every,
        run_id: format!("run_{rep}"),
        independent_outer_draws: cfg.independent_outer_draws,
        record_wall_ms: cfg.record_wall_ms,
    }
}

fn execute<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<Vec<RunRecord>>, CliError> {
    let problem = build_problem::<T>(&cfg.problem, cfg.network.k)?;
    let (_, w) = build_network::<T>(cfg)?;
    let schedule = cfg.step_schedule(problem.pl_constant().map(Scalar::as_f64))?;
    let dims = problem.dims();
    match cfg.algo {
        AlgoName::Dbsa if dims.num_levels() != 1 => {
            return Err(CliError::config("/algo", format!("dbsa needs a bilevel problem, got {} levels", dims.num_levels())))
        }
        AlgoName::Dsgd if problem.compositional().is_none() => {
            return Err(CliError::config("/algo", format!("dsgd needs a compositional problem, `{}` is not", problem.tag())))
        }
        _ => {}
    }
    let dbsa = DbsaOptions { inner_scale: cfg.baseline.inner_scale };
    let dsgd = DsgdOptions { weights: cfg.baseline.weights.into() };
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let opts = run_options(cfg, rep);
            let p = problem.as_ref();
            match cfg.algo {
                AlgoName::Dsmo => run_dsmo(p, &w, &schedule, &opts),
                AlgoName::Dbsa => run_dbsa(p, &w, &schedule, &dbsa, &opts),
                AlgoName::Dsgd => run_dsgd(p, &w, &schedule, &dsgd, &opts),
            }
            .map_err(|e| CliError::Failed(format!("run {rep}: {e}")))
        })
        .collect()
}

/// Runs every repetition of `cfg` without touching the file system.
pub fn run_records(cfg: &ExperimentConfig) -> Result<Vec<Vec<RunRecord>>, CliError> {
    match cfg.precision {
        Precision::F64 => execute::<f64>(cfg),
        Precision::F32 => execute::<f32>(cfg),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_records(records: &[RunRecord], path: &Path) -> Result<(), CliError> {
    write_csv(records, path).map_err(|e| match e {
        dsmo_core::metrics::MetricsError::Io(source) => CliError::io(path, source),
        other => other.into(),
    })
}

/// Paths written by [`cmd_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub manifest: PathBuf,
    pub csvs: Vec<PathBuf>,
}

/// Writes `manifest.json` and `run_<r>.csv` for `r < reps` into `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput, CliError> {
    let resolved = resolve(cfg)?;
    let runs = run_records(&resolved)?;
    create_dir(out)?;
    let manifest = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&resolved).expect("config serializes");
    write_file(&manifest, &(text + "\n"))?;
    let mut csvs = Vec::with_capacity(runs.len());
    for (rep, records) in runs.iter().enumerate() {
        let path = out.join(format!("run_{rep}.csv"));
        write_records(records, &path)?;
        csvs.push(path);
    }
    Ok(RunOutput { manifest, csvs })
}

pub fn format_speedup(rows: &[SpeedupRow]) -> String {
    let mut s = String::from("K,reps,reached,median_samples,median_log10,q_lo_log10,q_hi_log10\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6e},{:.6},{:.6},{:.6}",
            r.k,
            r.reps,
            r.reached,
            r.median_samples(),
            r.median_log10,
            r.q_lo,
            r.q_hi
        );
    }
    s
}

/// Runs `cfg` once per `K`, each into `out/K_<k>/`, and writes `speedup.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, k_list: &[usize], epsilon: f64, field: Field, out: &Path) -> Result<Vec<SpeedupRow>, CliError> {
    check_k_list(k_list, "/K_list")?;
    if !(epsilon > 0.0) {
        return Err(CliError::config("/epsilon", "must be positive"));
    }
    let cells: Vec<ExperimentConfig> = k_list
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.network.k = k;
            c.k_list = Some(k_list.to_vec());
            c.epsilon = Some(epsilon);
            resolve(&c)
        })
        .collect::<Result<_, _>>()?;
    let mut all = Vec::new();
    for c in &cells {
        let dir = out.join(format!("K_{}", c.network.k));
        cmd_run(c, &dir)?;
        for rep in 0..c.reps {
            all.push(read_csv(&dir.join(format!("run_{rep}.csv")))?);
        }
    }
    let rows = speedup_table(&all, epsilon, field)?;
    write_file(&out.join("speedup.csv"), &format_speedup(&rows))?;
    Ok(rows)
}

pub fn format_network_report(cfg: &ExperimentConfig, r: &MatrixReport) -> String {
    let verdict = if r.passes(INVARIANT_TOLERANCE) { "PASS" } else { "FAIL" };
    format!(
        "K = {}\nkind = {:?}\nscheme = {}\nrho = {:.12}\nmax row-sum deviation = {:.3e}\nmax col-sum deviation = {:.3e}\nmax asymmetry = {:.3e}\nmin entry = {:.3e}\nsupport respects graph = {}\nconnected = {}\nverdict = {verdict}\n",
        r.k,
        cfg.network.kind,
        cfg.scheme(),
        r.rho,
        r.max_row_dev,
        r.max_col_dev,
        r.max_asymmetry,
        r.min_entry,
        r.support_ok,
        r.connected
    )
}

pub fn cmd_validate_network(cfg: &ExperimentConfig) -> Result<(MatrixReport, String), CliError> {
    cfg.validate_static()?;
    let (topo, w) = build_network::<f64>(cfg)?;
    let report = w.report(Some(&topo));
    let text = format_network_report(cfg, &report);
    Ok((report, text))
}

fn check_points<T: Scalar>(dx: usize, n: usize, seed: u64, nonnegative: bool) -> Vec<DVector<T>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            DVector::from_fn(dx, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(if nonnegative { z.abs() } else { z })
            })
        })
        .collect()
}

fn gradient_check_typed<T: Scalar>(cfg: &ExperimentConfig, points: usize, h: f64) -> Result<f64, CliError> {
    let problem = build_problem::<T>(&cfg.problem, cfg.network.k)?;
    let nonnegative = matches!(cfg.problem, ProblemConfig::Hyperparam(_));
    let xs = check_points::<T>(problem.dims().dx(), points, cfg.base_seed, nonnegative);
    let check = gradient_check(problem.as_ref(), &xs, T::of(h)).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(check.max_rel_err)
}

/// Largest relative error between the exact hypergradient and central
/// differences over `points` Gaussian points seeded by `base_seed`.
pub fn cmd_gradient_check(cfg: &ExperimentConfig, points: usize, h: f64) -> Result<f64, CliError> {
    cfg.validate_static()?;
    if points == 0 {
        return Err(CliError::config("/points", "need at least one point"));
    }
    if !(h > 0.0) {
        return Err(CliError::config("/fd_step", "must be positive"));
    }
    match cfg.precision {
        Precision::F64 => gradient_check_typed::<f64>(cfg, points, h),
        Precision::F32 => gradient_check_typed::<f32>(cfg, points, h),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Slope,
    Speedup,
    Consensus,
}

impl std::str::FromStr for ReportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "slope" => Ok(ReportKind::Slope),
            "speedup" => Ok(ReportKind::Speedup),
            "consensus" => Ok(ReportKind::Consensus),
            other => Err(format!("unknown report kind `{other}` (slope, speedup, consensus)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub kind: ReportKind,
    pub field: Field,
    pub epsilon: Option<f64>,
    /// Slope window; defaults to the last 90% of each run.
    pub t_min: Option<u64>,
    pub t_max: Option<u64>,
}

impl ReportOptions {
    pub fn new(kind: ReportKind) -> Self {
        ReportOptions { kind, field: Field::MseToOpt, epsilon: None, t_min: None, t_max: None }
    }
}

/// Reads every CSV matching `pattern`, sorted by path.
pub fn load_runs(pattern: &str) -> Result<Vec<(PathBuf, Vec<RunRecord>)>, CliError> {
    let paths = glob::glob(pattern).map_err(|e| CliError::config("/glob", e.to_string()))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for p in paths {
        let p = p.map_err(|e| CliError::Io { path: e.path().to_path_buf(), source: e.into() })?;
        files.push(p);
    }
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let recs = read_csv(&p).map_err(|e| match e {
                dsmo_core::metrics::MetricsError::Io(source) => CliError::io(&p, source),
                other => CliError::Data(format!("{}: {other}", p.display())),
            })?;
            Ok((p, recs))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    dsmo_core::metrics::quantile(&v, 0.5)
}

fn slope_report(runs: &[(PathBuf, Vec<RunRecord>)], o: &ReportOptions) -> Result<String, CliError> {
    let mut s = String::from("file,run_id,K,t_min,t_max,slope,points,verdict\n");
    let mut slopes = Vec::new();
    for (path, recs) in runs {
        let Some(last) = recs.last() else { continue };
        let t_max = o.t_max.unwrap_or(last.t);
        let t_min = o.t_min.unwrap_or(t_max / 10);
        let fit = loglog_slope(recs, t_min, t_max, o.field)?;
        let ok = (SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&fit.slope);
        slopes.push(fit.slope);
        let _ = writeln!(
            s,
            "{},{},{},{t_min},{t_max},{:.4},{},{}",
            path.display(),
            last.run_id,
            last.k,
            fit.slope,
            fit.points,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if slopes.is_empty() {
        return Err(CliError::Failed("insufficient data: every matched file is empty".into()));
    }
    let m = median(slopes);
    let ok = (SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&m);
    let _ = writeln!(s, "median slope {m:.4}: {}", if ok { "PASS" } else { "FAIL" });
    Ok(s)
}

fn consensus_report(runs: &[(PathBuf, Vec<RunRecord>)]) -> Result<String, CliError> {
    let mut s = String::from("file,run_id,K,rho,first,late_mean,late_over_first\n");
    let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (path, recs) in runs {
        let Some(last) = recs.last() else { continue };
        let first = recs.iter().find(|r| r.t > 0).map_or(f64::NAN, |r| r.consensus_x);
        let late = window_mean(recs, last.t / 2, last.t, Field::ConsensusX)?;
        by_k.entry(last.k).or_default().push(late);
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{first:.6e},{late:.6e},{:.6e}",
            path.display(),
            last.run_id,
            last.k,
            last.rho,
            late / first
        );
    }
    if by_k.is_empty() {
        return Err(CliError::Failed("insufficient data: every matched file is empty".into()));
    }
    for (k, v) in by_k {
        let _ = writeln!(s, "K={k}: median late-window consensus_x {:.6e} over {} runs", median(v.clone()), v.len());
    }
    Ok(s)
}

/// Builds a text report over the CSVs matching `pattern`.
pub fn cmd_report(pattern: &str, o: &ReportOptions) -> Result<String, CliError> {
    let runs = load_runs(pattern)?;
    if runs.is_empty() {
        return Err(CliError::Failed(format!("insufficient data: no files match `{pattern}`")));
    }
    match o.kind {
        ReportKind::Slope => slope_report(&runs, o),
        ReportKind::Consensus => consensus_report(&runs),
        ReportKind::Speedup => {
            let eps = o.epsilon.ok_or_else(|| CliError::config("/epsilon", "speedup reports need --epsilon"))?;
            let recs: Vec<Vec<RunRecord>> = runs.into_iter().map(|(_, r)| r).collect();
            Ok(format_speedup(&speedup_table(&recs, eps, o.field)?))
        }
    }
}

