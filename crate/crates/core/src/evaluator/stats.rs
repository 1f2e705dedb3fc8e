//! Paired replicate statistics: t-test, Cohen's d and the Student t tail via
//! the regularised incomplete beta function.

use serde::{Deserialize, Serialize};

use crate::error::MetricError;

/// Outcome of a paired comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Tested,
    /// Every difference is zero; no test is run.
    ZeroDelta,
    /// Differences are all equal and nonzero; t and d are infinite.
    ZeroVariance,
    /// Fewer than two replicates.
    InsufficientN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub metric: String,
    pub mean_iter1: f64,
    pub mean_best: f64,
    pub delta: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub cohens_d: Option<f64>,
    pub n: usize,
    pub status: TestStatus,
}

impl StatRow {
    pub fn df(&self) -> usize {
        self.n.saturating_sub(1)
    }

    /// `***` for p < 0.01, `**` for p < 0.05, `---` when the test was
    /// skipped, otherwise empty.
    pub fn significance(&self) -> &'static str {
        match self.p {
            Some(p) if p < 0.01 => "***",
            Some(p) if p < 0.05 => "**",
            Some(_) => "",
            None => "---",
        }
    }

    pub fn effect(&self) -> Option<EffectSize> {
        self.cohens_d.map(EffectSize::of)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectSize {
    S,
    M,
    L,
}

impl EffectSize {
    /// S below 0.5, M below 0.8, L otherwise, on |d|.
    pub fn of(d: f64) -> Self {
        let a = d.abs();
        if a < 0.5 {
            EffectSize::S
        } else if a < 0.8 {
            EffectSize::M
        } else {
            EffectSize::L
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EffectSize::S => "S",
            EffectSize::M => "M",
            EffectSize::L => "L",
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-tailed paired t-test of `b` against `a` with differences `b - a`.
pub fn paired_stats(metric: &str, a: &[f64], b: &[f64]) -> Result<StatRow, MetricError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricError::BadSample(a.len(), b.len()));
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let md = mean(&diffs);
    let mut row = StatRow {
        metric: metric.to_string(),
        mean_iter1: mean(a),
        mean_best: mean(b),
        delta: md,
        t: None,
        p: None,
        cohens_d: None,
        n,
        status: TestStatus::Tested,
    };
    if n < 2 {
        row.status = TestStatus::InsufficientN;
        return Ok(row);
    }
    if diffs.iter().all(|d| *d == 0.0) {
        row.status = TestStatus::ZeroDelta;
        row.delta = 0.0;
        return Ok(row);
    }
    let var = diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * md.abs().max(1.0) * 16.0 {
        row.status = TestStatus::ZeroVariance;
        row.t = Some(f64::INFINITY.copysign(md));
        row.cohens_d = Some(f64::INFINITY.copysign(md));
        row.p = Some(0.0);
        return Ok(row);
    }
    let t = md / (sd / (n as f64).sqrt());
    row.t = Some(t);
    row.cohens_d = Some(md / sd);
    row.p = Some(student_t_two_tailed(t, (n - 1) as f64));
    Ok(row)
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularised incomplete beta `I_x(a, b)`, evaluated with the continued
/// fraction (modified Lentz) on whichever side converges fastest.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Two-tailed tail area by Simpson integration of the t density after the
    /// substitution x = tan(theta), which maps [|t|, inf) onto a finite range.
    /// Normalising constants are the closed forms for each df.
    fn tail_by_integration(t: f64, df: u32) -> f64 {
        let k = match df {
            2 => 1.0 / (2.0 * 2f64.sqrt()),
            4 => 3.0 / 8.0,
            9 => 384.0 / (315.0 * PI),
            _ => unreachable!(),
        };
        let nu = f64::from(df);
        let density = |x: f64| k * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
        let (lo, hi) = (t.abs().atan(), PI / 2.0);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let g = |th: f64| {
            if th >= hi {
                0.0
            } else {
                let c = th.cos();
                density(th.tan()) / (c * c)
            }
        };
        let mut s = g(lo) + g(hi);
        for i in 1..n {
            s += g(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * s * h / 3.0
    }

    #[test]
    fn hand_computed_fixture() {
        let r = paired_stats("m", &[1.0, 2.0, 3.0], &[2.0, 4.0, 3.0]).unwrap();
        assert_eq!(r.status, TestStatus::Tested);
        assert!((r.t.unwrap() - 3f64.sqrt()).abs() < 1e-12);
        assert!((r.t.unwrap() - 1.732).abs() < 1e-3);
        assert!((r.cohens_d.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.df(), 2);
        // df = 2 closed form: p = 1 - |t| / sqrt(t^2 + 2)
        let t = r.t.unwrap();
        assert!((r.p.unwrap() - (1.0 - t / (t * t + 2.0).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn zero_delta_is_skipped() {
        let a = [0.362, 0.362, 0.362, 0.362, 0.362];
        let r = paired_stats("consistency", &a, &a).unwrap();
        assert_eq!(r.status, TestStatus::ZeroDelta);
        assert_eq!((r.delta, r.t, r.p, r.cohens_d), (0.0, None, None, None));
        assert_eq!(r.significance(), "---");
    }

    #[test]
    fn constant_nonzero_diffs_are_infinite() {
        let r = paired_stats("m", &[0.0, 1.0, 2.0], &[0.5, 1.5, 2.5]).unwrap();
        assert_eq!(r.status, TestStatus::ZeroVariance);
        assert_eq!(r.t, Some(f64::INFINITY));
        assert_eq!(r.p, Some(0.0));
    }

    #[test]
    fn bad_samples() {
        assert_eq!(paired_stats("m", &[1.0], &[1.0, 2.0]), Err(MetricError::BadSample(1, 2)));
        assert_eq!(paired_stats("m", &[], &[]), Err(MetricError::BadSample(0, 0)));
        assert_eq!(paired_stats("m", &[1.0], &[2.0]).unwrap().status, TestStatus::InsufficientN);
    }

    #[test]
    fn five_replicate_fixture() {
        let a = [0.0; 5];
        let b = [1.0, 1.0, 1.0, 1.0, 1.1];
        let r = paired_stats("m", &a, &b).unwrap();
        let m = 5.1 / 5.0;
        let sd = ((4.0 * (1.0f64 - m).powi(2) + (1.1f64 - m).powi(2)) / 4.0).sqrt();
        assert!((r.cohens_d.unwrap() - m / sd).abs() < 1e-9);
        assert!((r.t.unwrap() - m / (sd / 5f64.sqrt())).abs() < 1e-9);
        assert!(r.p.unwrap() < 0.001);
        assert_eq!(r.significance(), "***");
        assert_eq!(r.effect(), Some(EffectSize::L));
    }

    #[test]
    fn p_values_match_numerical_integration() {
        for df in [2u32, 4, 9] {
            for t in [0.1, 0.5, 1.0, 1.732, 2.5, 4.0, 6.23, 10.0] {
                let got = student_t_two_tailed(t, f64::from(df));
                let want = tail_by_integration(t, df);
                assert!((got - want).abs() < 1e-6, "df {df} t {t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn gamma_reference_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn effect_thresholds() {
        assert_eq!(EffectSize::of(0.49), EffectSize::S);
        assert_eq!(EffectSize::of(-0.5), EffectSize::M);
        assert_eq!(EffectSize::of(0.79), EffectSize::M);
        assert_eq!(EffectSize::of(0.8), EffectSize::L);
    }

    fn direct(a: &[f64], b: &[f64]) -> (f64, f64) {
        let n = a.len() as f64;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let m = d.iter().sum::<f64>() / n;
        let s = (d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
        (m / (s / n.sqrt()), m / s)
    }

    proptest! {
        #[test]
        fn t_and_d_match_direct_formula(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = paired_stats("m", &a, &b).unwrap();
            prop_assume!(r.status == TestStatus::Tested);
            let (t, d) = direct(&a, &b);
            prop_assert!((r.t.unwrap() - t).abs() < 1e-6 * t.abs().max(1.0));
            prop_assert!((r.cohens_d.unwrap() - d).abs() < 1e-6 * d.abs().max(1.0));
            prop_assert!((r.delta - (r.mean_best - r.mean_iter1)).abs() < 1e-12);
            let p = r.p.unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
