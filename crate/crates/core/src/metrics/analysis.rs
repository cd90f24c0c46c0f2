use std::collections::BTreeMap;

use super::{Field, MetricsError, RunRecord};

/// Least-squares fit of `ln(field)` against `ln(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 10;

/// Fits over records with `t_min <= t <= t_max`, skipping NaN values.
pub fn loglog_slope(records: &[RunRecord], t_min: u64, t_max: u64, field: Field) -> Result<SlopeFit, MetricsError> {
    let mut pts = Vec::new();
    for r in records.iter().filter(|r| r.t >= t_min && r.t <= t_max && r.t > 0) {
        let v = field.get(r);
        if v.is_nan() {
            continue;
        }
        if v <= 0.0 {
            return Err(MetricsError::NonPositiveValue { t: r.t, value: v });
        }
        pts.push(((r.t as f64).ln(), v.ln()));
    }
    if pts.len() < MIN_FIT_POINTS {
        return Err(MetricsError::InsufficientData(format!(
            "{} usable records of {field} in t in [{t_min}, {t_max}], need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::InsufficientData("all records share one t".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(SlopeFit { slope, intercept, residual: (sse / n).sqrt(), points: pts.len() })
}

/// First crossing of a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Reached { t: u64, samples: u64 },
    NotReached,
}

impl Crossing {
    pub fn samples(self) -> Option<u64> {
        match self {
            Crossing::Reached { samples, .. } => Some(samples),
            Crossing::NotReached => None,
        }
    }
}

pub fn samples_to_epsilon(records: &[RunRecord], epsilon: f64, field: Field) -> Crossing {
    records
        .iter()
        .find(|r| field.get(r) <= epsilon)
        .map_or(Crossing::NotReached, |r| Crossing::Reached { t: r.t, samples: r.samples_total })
}

/// Mean of `field` over records with `t_min <= t <= t_max`, NaN skipped.
pub fn window_mean(records: &[RunRecord], t_min: u64, t_max: u64, field: Field) -> Result<f64, MetricsError> {
    let vals: Vec<f64> =
        records.iter().filter(|r| r.t >= t_min && r.t <= t_max).map(|r| field.get(r)).filter(|v| !v.is_nan()).collect();
    if vals.is_empty() {
        return Err(MetricsError::InsufficientData(format!("no {field} values in t in [{t_min}, {t_max}]")));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty; `+inf` entries are allowed.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || frac == 0.0 {
        sorted[lo]
    } else if sorted[hi].is_infinite() {
        f64::INFINITY
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// One row of a speedup table. Unreached runs count as `+inf` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub k: usize,
    pub reps: usize,
    pub reached: usize,
    /// Median of `log10(samples_to_epsilon)`.
    pub median_log10: f64,
    pub q_lo: f64,
    pub q_hi: f64,
}

impl SpeedupRow {
    pub fn median_samples(&self) -> f64 {
        10f64.powf(self.median_log10)
    }
}

pub const MIN_REPS: usize = 3;

/// Groups runs by their `K` column and summarizes `log10` samples to reach
/// `epsilon` with the median and the 12.5% / 87.5% quantiles.
pub fn speedup_table(runs: &[Vec<RunRecord>], epsilon: f64, field: Field) -> Result<Vec<SpeedupRow>, MetricsError> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for run in runs {
        let Some(first) = run.first() else { continue };
        let v = samples_to_epsilon(run, epsilon, field).samples().map_or(f64::INFINITY, |s| (s.max(1) as f64).log10());
        groups.entry(first.k).or_default().push(v);
    }
    if groups.is_empty() {
        return Err(MetricsError::InsufficientData("no runs".into()));
    }
    groups
        .into_iter()
        .map(|(k, mut vals)| {
            if vals.len() < MIN_REPS {
                return Err(MetricsError::InsufficientData(format!(
                    "K={k} has {} runs, need {MIN_REPS}",
                    vals.len()
                )));
            }
            vals.sort_by(f64::total_cmp);
            Ok(SpeedupRow {
                k,
                reps: vals.len(),
                reached: vals.iter().filter(|v| v.is_finite()).count(),
                median_log10: quantile(&vals, 0.5),
                q_lo: quantile(&vals, 0.125),
                q_hi: quantile(&vals, 0.875),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(k: usize, t: u64, samples: u64, mse: f64) -> RunRecord {
        RunRecord {
            run_id: "r".into(),
            algo: "dsmo".into(),
            problem: "p".into(),
            k,
            rho: 0.0,
            t,
            samples_total: samples,
            grad_norm_sq: f64::NAN,
            mse_to_opt: mse,
            obj_gap: f64::NAN,
            consensus_x: 0.0,
            consensus_y: vec![],
            wall_ms: 0,
        }
    }

    #[test]
    fn power_laws() {
        for a in [-2.0, -1.0, -0.5, 0.0] {
            let rs: Vec<_> = (1..=200).map(|t| rec(1, t, t, 3.0 * (t as f64).powf(a))).collect();
            let fit = loglog_slope(&rs, 1, 200, Field::MseToOpt).unwrap();
            assert!((fit.slope - a).abs() < 1e-9, "{a}: {fit:?}");
            assert!(fit.residual < 1e-9);
        }
    }

    #[test]
    fn slope_errors() {
        let rs: Vec<_> = (1..=5).map(|t| rec(1, t, t, 1.0)).collect();
        assert!(matches!(loglog_slope(&rs, 1, 5, Field::MseToOpt), Err(MetricsError::InsufficientData(_))));
        let mut rs: Vec<_> = (1..=20).map(|t| rec(1, t, t, 1.0)).collect();
        rs[7].mse_to_opt = 0.0;
        assert!(matches!(loglog_slope(&rs, 1, 20, Field::MseToOpt), Err(MetricsError::NonPositiveValue { t: 8, .. })));
        // NaN values are skipped rather than rejected.
        assert!(matches!(loglog_slope(&rs, 1, 20, Field::GradNormSq), Err(MetricsError::InsufficientData(_))));
    }

    #[test]
    fn crossing() {
        let rs: Vec<_> = (0..10).map(|t| rec(1, t, 10 * t, 1.0 / (t as f64 + 1.0))).collect();
        assert_eq!(samples_to_epsilon(&rs, 2.0, Field::MseToOpt), Crossing::Reached { t: 0, samples: 0 });
        assert_eq!(samples_to_epsilon(&rs, 0.25, Field::MseToOpt), Crossing::Reached { t: 3, samples: 30 });
        assert_eq!(samples_to_epsilon(&rs, 0.01, Field::MseToOpt), Crossing::NotReached);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.125), 1.5);
        assert_eq!(quantile(&v, 0.875), 4.5);
        assert_eq!(quantile(&[1.0, f64::INFINITY], 0.5), f64::INFINITY);
    }

    #[test]
    fn speedup_groups_by_k() {
        let mut runs = Vec::new();
        for k in [5, 10, 20] {
            for _ in 0..3 {
                runs.push((0..5).map(|t| rec(k, t, 100 * t, 1.0 / (t as f64 + 1.0))).collect::<Vec<_>>());
            }
        }
        let table = speedup_table(&runs, 0.3, Field::MseToOpt).unwrap();
        assert_eq!(table.iter().map(|r| r.k).collect::<Vec<_>>(), vec![5, 10, 20]);
        for row in &table {
            assert_eq!(row.q_lo, row.q_hi);
            assert!((row.median_samples() - 300.0).abs() < 1e-9);
        }
        assert!(speedup_table(&runs[..2], 0.3, Field::MseToOpt).is_err());
        assert!(speedup_table(&[], 0.3, Field::MseToOpt).is_err());
    }
}
