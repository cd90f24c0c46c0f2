use super::AlgoError;

/// Step-size regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `α = C0 √(K/T)`, `β = γ = √(K/T)`.
    Constant { c0: f64, horizon: usize },
    /// `α = 2 / (μ (C1 + t))`, `β = γ = C1 / (C1 + t)`.
    Diminishing { c1: f64, mu: f64 },
}

/// Neumann depth rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BRule {
    /// `b_m = 3 ⌈log_{1/(1−κ_m)} T⌉`, per level.
    Theory,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub regime: Regime,
    pub b_rule: BRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl StepSchedule {
    pub fn constant(c0: f64, horizon: usize, b_rule: BRule) -> Self {
        StepSchedule { regime: Regime::Constant { c0, horizon }, b_rule }
    }

    pub fn diminishing(c1: f64, mu: f64, b_rule: BRule) -> Self {
        StepSchedule { regime: Regime::Diminishing { c1, mu }, b_rule }
    }

    pub fn validate(&self, k: usize) -> Result<(), AlgoError> {
        match self.regime {
            Regime::Constant { c0, horizon } => {
                if horizon == 0 {
                    return Err(AlgoError::InvalidParam("constant regime needs T > 0".into()));
                }
                if !(c0 >= 0.0) || !c0.is_finite() {
                    return Err(AlgoError::InvalidParam(format!("C0 must be finite and nonnegative, got {c0}")));
                }
                let r = (k as f64 / horizon as f64).sqrt();
                if r > 1.0 {
                    return Err(AlgoError::InvalidParam(format!(
                        "beta = gamma = sqrt(K/T) = {r} exceeds 1 (K={k}, T={horizon})"
                    )));
                }
            }
            Regime::Diminishing { c1, mu } => {
                if !(c1 > 0.0 && mu > 0.0) || !c1.is_finite() || !mu.is_finite() {
                    return Err(AlgoError::InvalidParam(format!("need C1 > 0 and mu > 0, got C1={c1}, mu={mu}")));
                }
            }
        }
        Ok(())
    }

    /// Step sizes for round `t` with `K` agents.
    pub fn at(&self, t: usize, k: usize) -> Result<Steps, AlgoError> {
        schedule_at(self, t, k)
    }
}

pub fn schedule_at(schedule: &StepSchedule, t: usize, k: usize) -> Result<Steps, AlgoError> {
    schedule.validate(k)?;
    Ok(match schedule.regime {
        Regime::Constant { c0, horizon } => {
            if t >= horizon {
                return Err(AlgoError::InvalidParam(format!("round {t} is past the horizon T={horizon}")));
            }
            let r = (k as f64 / horizon as f64).sqrt();
            Steps { alpha: c0 * r, beta: r, gamma: r }
        }
        Regime::Diminishing { c1, mu } => {
            let denom = c1 + t as f64;
            Steps { alpha: 2.0 / (mu * denom), beta: c1 / denom, gamma: c1 / denom }
        }
    })
}

/// Number of Hessian samples for a level with condition ratio `kappa`.
pub fn neumann_depth(rule: BRule, kappa: f64, horizon: usize) -> Result<usize, AlgoError> {
    match rule {
        BRule::Fixed(b) => Ok(b),
        BRule::Theory => {
            if !(kappa > 0.0 && kappa <= 1.0) {
                return Err(AlgoError::InvalidParam(format!("kappa must lie in (0, 1], got {kappa}")));
            }
            if kappa == 1.0 || horizon <= 1 {
                return Ok(0);
            }
            let logs = (horizon as f64).ln() / (1.0 / (1.0 - kappa)).ln();
            // Guard exact powers against round-off pushing the ceiling up.
            let c = (logs - 1e-9).ceil().max(0.0);
            Ok(3 * c as usize)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values() {
        let s = StepSchedule::constant(0.1, 20_000, BRule::Fixed(200));
        let st = s.at(0, 5).unwrap();
        assert!((st.alpha - 1.5811388300841897e-3).abs() < 1e-15);
        assert_eq!(st.beta, st.gamma);
        assert!(s.at(20_000, 5).is_err());
        assert!(StepSchedule::constant(0.1, 4, BRule::Theory).at(0, 5).is_err());
    }

    #[test]
    fn diminishing_values() {
        let s = StepSchedule::diminishing(50.0, 1.0, BRule::Theory);
        let st = s.at(0, 5).unwrap();
        assert_eq!((st.alpha, st.beta, st.gamma), (0.04, 1.0, 1.0));
        let st = s.at(50, 5).unwrap();
        assert_eq!((st.alpha, st.beta), (0.02, 0.5));
        assert!(StepSchedule::diminishing(0.0, 1.0, BRule::Theory).at(0, 1).is_err());
    }

    #[test]
    fn theory_depth() {
        assert_eq!(neumann_depth(BRule::Theory, 0.5, 1024).unwrap(), 30);
        assert_eq!(neumann_depth(BRule::Theory, 0.5, 1025).unwrap(), 33);
        assert_eq!(neumann_depth(BRule::Theory, 1.0, 1024).unwrap(), 0);
        assert_eq!(neumann_depth(BRule::Fixed(7), 0.1, 10).unwrap(), 7);
        assert!(neumann_depth(BRule::Theory, 0.0, 10).is_err());
    }
}
