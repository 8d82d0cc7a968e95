//! Traversal-time statistics: Welch t-tests and pairwise significance
//! reports across navigation methods.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EvalRun, Outcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("each sample needs at least 2 values, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("both samples are constant and equal")]
    DegenerateSamples,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("methods cover different environments: {0}")]
    EnvMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Both variances are zero and the means differ: `t` is infinite and
    /// `p` is 0.
    pub separated: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Err(EvalError::DegenerateSamples);
        }
        return Ok(TTest {
            t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
            p: 0.0,
            dof: na + nb - 2.0,
            separated: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest {
        t,
        p: student_t_two_sided(t, dof),
        dof,
        separated: false,
    })
}

/// P(|T| ≥ |t|) for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = dof / (dof + t * t);
    regularized_beta(x, 0.5 * dof, 0.5).clamp(0.0, 1.0)
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast for x below the mean.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-15.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Traversal times of one method, `times[env][run]`. Failed runs carry the
/// timeout and are flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRuns {
    pub name: String,
    pub times: Vec<Vec<f64>>,
    pub failed: Vec<Vec<bool>>,
}

impl MethodRuns {
    pub fn new(name: impl Into<String>, times: Vec<Vec<f64>>) -> Self {
        let failed = times.iter().map(|r| vec![false; r.len()]).collect();
        Self {
            name: name.into(),
            times,
            failed,
        }
    }

    pub fn from_eval(name: impl Into<String>, run: &EvalRun) -> Self {
        Self {
            name: name.into(),
            times: run.times.clone(),
            failed: run
                .outcomes
                .iter()
                .map(|r| r.iter().map(|o| *o != Outcome::Success).collect())
                .collect(),
        }
    }

    pub fn env_means(&self) -> Vec<f64> {
        self.times.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }

    /// Mean over all runs in all environments.
    pub fn overall_mean(&self) -> f64 {
        let n: usize = self.times.iter().map(Vec::len).sum();
        self.times.iter().flatten().sum::<f64>() / n as f64
    }

    pub fn failures(&self) -> usize {
        self.failed.iter().flatten().filter(|f| **f).count()
    }
}

/// One ordered method pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub method: String,
    pub versus: String,
    /// Percent of environments where `method` is significantly slower.
    pub worse_pct: f64,
    /// Percent of environments where `method` is significantly faster.
    pub better_pct: f64,
    pub worse_envs: Vec<usize>,
    pub better_envs: Vec<usize>,
    /// Per-environment p values.
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub mean_time: f64,
    pub env_means: Vec<f64>,
    pub failures: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub alpha: f64,
    pub environments: usize,
    pub methods: Vec<MethodSummary>,
    pub pairs: Vec<PairStats>,
}

/// Compares every ordered pair of methods environment by environment.
/// Constant, equal samples count as not significant.
pub fn pairwise_report(methods: &[MethodRuns], alpha: f64) -> Result<PairwiseReport, EvalError> {
    let envs = methods.first().map_or(0, |m| m.times.len());
    for m in methods {
        if m.times.len() != envs || m.failed.len() != envs {
            return Err(EvalError::EnvMismatch(format!(
                "{} has {} environments, expected {envs}",
                m.name,
                m.times.len()
            )));
        }
        if m.times.iter().flatten().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(EvalError::NonFinite);
        }
    }
    let summaries = methods
        .iter()
        .map(|m| MethodSummary {
            name: m.name.clone(),
            mean_time: m.overall_mean(),
            env_means: m.env_means(),
            failures: m.failures(),
            runs: m.times.iter().map(Vec::len).sum(),
        })
        .collect();
    let mut pairs = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for (j, b) in methods.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut p = Vec::with_capacity(envs);
            let (mut worse, mut better) = (Vec::new(), Vec::new());
            for e in 0..envs {
                let test = match welch_ttest(&a.times[e], &b.times[e]) {
                    Ok(t) => t,
                    Err(EvalError::DegenerateSamples) => {
                        p.push(1.0);
                        continue;
                    }
                    Err(err) => return Err(err),
                };
                p.push(test.p);
                if test.p < alpha {
                    if test.t > 0.0 {
                        worse.push(e);
                    } else {
                        better.push(e);
                    }
                }
            }
            let pct = |n: usize| if envs == 0 { 0.0 } else { 100.0 * n as f64 / envs as f64 };
            pairs.push(PairStats {
                method: a.name.clone(),
                versus: b.name.clone(),
                worse_pct: pct(worse.len()),
                better_pct: pct(better.len()),
                worse_envs: worse,
                better_envs: better,
                p,
            });
        }
    }
    Ok(PairwiseReport {
        alpha,
        environments: envs,
        methods: summaries,
        pairs,
    })
}

impl PairwiseReport {
    pub fn pair(&self, method: &str, versus: &str) -> Option<&PairStats> {
        self.pairs.iter().find(|p| p.method == method && p.versus == versus)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# Traversal time\n\n{} environments, Welch t-test, p < {}.\n\n",
            self.environments, self.alpha
        );
        s.push_str("| method | mean time (s) | failed runs |\n|---|---|---|\n");
        for m in &self.methods {
            s.push_str(&format!("| {} | {:.2} | {}/{} |\n", m.name, m.mean_time, m.failures, m.runs));
        }
        s.push_str("\nFailed runs (collision or timeout) are scored at the timeout.\n");
        s.push_str("\n## Pairwise\n\nPercent of environments where the row method is significantly worse / better than the column method.\n\n|  |");
        for m in &self.methods {
            s.push_str(&format!(" {} |", m.name));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.methods.len()));
        s.push('\n');
        for a in &self.methods {
            s.push_str(&format!("| {} |", a.name));
            for b in &self.methods {
                match self.pair(&a.name, &b.name) {
                    Some(p) => s.push_str(&format!(" {:.0}% / {:.0}% |", p.worse_pct, p.better_pct)),
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = welch_ttest(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn constant_samples() {
        assert_eq!(welch_ttest(&[1.0; 5], &[1.0; 5]), Err(EvalError::DegenerateSamples));
        let r = welch_ttest(&[1.0; 5], &[2.0; 5]).unwrap();
        assert!(r.separated);
        assert_eq!(r.p, 0.0);
        assert_eq!(r.t, f64::NEG_INFINITY);
        assert!(matches!(welch_ttest(&[1.0], &[1.0, 2.0]), Err(EvalError::TooFewSamples(1, 2))));
        assert_eq!(welch_ttest(&[1.0, f64::NAN], &[1.0, 2.0]), Err(EvalError::NonFinite));
    }

    #[test]
    fn shifted_example() {
        // t = -1 with 8 dof.
        let r = welch_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.dof - 8.0).abs() < 1e-12);
        // Student t CDF, even dof: 1/2 + x/2 * sum_{k<4} c_k (1-x^2)^k
        // with x = t / sqrt(t^2 + 8).
        let x: f64 = 1.0 / 3.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..4 {
            term *= (2.0 * k as f64 - 1.0) / (2.0 * k as f64) * (1.0 - x * x);
            sum += term;
        }
        let cdf = 0.5 + 0.5 * x * sum;
        assert!((r.p - 2.0 * (1.0 - cdf)).abs() < 1e-12, "{}", r.p);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_symmetry() {
        for &(x, a, b) in &[(0.3, 2.0, 5.0), (0.9, 0.5, 4.0), (0.01, 10.0, 0.5)] {
            let l = regularized_beta(x, a, b);
            let r = 1.0 - regularized_beta(1.0 - x, b, a);
            assert!((l - r).abs() < 1e-13);
        }
        // I_x(1, 1) = x
        assert!((regularized_beta(0.37, 1.0, 1.0) - 0.37).abs() < 1e-14);
    }

    fn runs(name: &str, envs: &[(f64, f64)]) -> MethodRuns {
        let times = envs
            .iter()
            .map(|&(m, s)| (0..20).map(|i| m + s * ((i as f64 * 0.37).sin())).collect())
            .collect();
        MethodRuns::new(name, times)
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = runs("a", &[(10.0, 1.0); 10]);
        let rep = pairwise_report(&[a.clone(), MethodRuns { name: "b".into(), ..a }], 0.05).unwrap();
        for p in &rep.pairs {
            assert_eq!(p.worse_pct, 0.0);
            assert_eq!(p.better_pct, 0.0);
        }
    }

    #[test]
    fn twice_as_slow_is_always_worse() {
        let a = runs("slow", &[(20.0, 0.01); 10]);
        let b = runs("fast", &[(10.0, 0.01); 10]);
        let rep = pairwise_report(&[a, b], 0.05).unwrap();
        assert_eq!(rep.pair("slow", "fast").unwrap().worse_pct, 100.0);
        assert_eq!(rep.pair("fast", "slow").unwrap().better_pct, 100.0);
        assert!(rep.to_markdown().contains("| slow | 20.00 | 0/200 |"));
    }

    #[test]
    fn mismatched_environments() {
        let a = runs("a", &[(10.0, 1.0); 3]);
        let b = runs("b", &[(10.0, 1.0); 4]);
        assert!(matches!(pairwise_report(&[a, b], 0.05), Err(EvalError::EnvMismatch(_))));
    }
}
