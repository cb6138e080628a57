//! Evaluation of detections against ground truth: per-electrode position
//! error, FN/FP counts with the 1 cm detection criterion, and the paired
//! t-test used for method comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::WorldPoint;

pub const DEFAULT_PE_THRESHOLD_MM: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub per_label_pe_mm: BTreeMap<String, f64>,
    pub fn_count: usize,
    pub fp_count: usize,
    pub accuracy_pct: f64,
    pub mean_pe_mm: f64,
    pub median_pe_mm: f64,
    pub max_pe_mm: f64,
    pub n_channels: usize,
    pub threshold_mm: f64,
}

/// Euclidean distance in mm per label; label sets must match exactly.
pub fn position_errors(
    detected: &[(String, WorldPoint)],
    truth: &[(String, WorldPoint)],
) -> Result<BTreeMap<String, f64>> {
    let det: BTreeMap<&str, WorldPoint> =
        detected.iter().map(|(l, p)| (l.as_str(), *p)).collect();
    let tru: BTreeMap<&str, WorldPoint> = truth.iter().map(|(l, p)| (l.as_str(), *p)).collect();
    if det.len() != detected.len() {
        return Err(Error::LabelMismatch("duplicate labels in detections".to_string()));
    }
    if tru.len() != truth.len() {
        return Err(Error::LabelMismatch("duplicate labels in ground truth".to_string()));
    }
    if det.keys().ne(tru.keys()) {
        let only_det: Vec<&&str> = det.keys().filter(|k| !tru.contains_key(**k)).collect();
        let only_tru: Vec<&&str> = tru.keys().filter(|k| !det.contains_key(**k)).collect();
        return Err(Error::LabelMismatch(format!(
            "only in detections: {only_det:?}; only in truth: {only_tru:?}"
        )));
    }
    Ok(det
        .iter()
        .map(|(l, p)| (l.to_string(), p.distance(tru[l])))
        .collect())
}

/// FN = FP = number of channels with PE >= threshold (one fixed-size output
/// set against one ground-truth set: a wrong channel is simultaneously a
/// missed electrode and a spurious report).
pub fn detection_stats(pe: &BTreeMap<String, f64>, threshold_mm: f64) -> Result<DetectionReport> {
    if pe.is_empty() {
        return Err(Error::EmptyInput("no position errors".to_string()));
    }
    if threshold_mm <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "threshold_mm = {threshold_mm} (must be > 0)"
        )));
    }
    let n = pe.len();
    let fn_count = pe.values().filter(|&&v| v >= threshold_mm).count();
    let mut sorted: Vec<f64> = pe.values().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(DetectionReport {
        per_label_pe_mm: pe.clone(),
        fn_count,
        fp_count: fn_count,
        accuracy_pct: 100.0 * (n - fn_count) as f64 / n as f64,
        mean_pe_mm: sorted.iter().sum::<f64>() / n as f64,
        median_pe_mm: median,
        max_pe_mm: *sorted.last().unwrap(),
        n_channels: n,
        threshold_mm,
    })
}

// ---------------------------------------------------------------------------
// Paired t-test

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
}

/// Paired two-sided t-test on matched samples.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "paired t-test needs >= 2 pairs, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = a.len() - 1;
    Ok(TTestResult {
        t,
        df,
        p_two_sided: t_two_sided_p(t, df as f64),
    })
}

/// Two-sided p from the t CDF: p = I_{df/(df+t^2)}(df/2, 1/2).
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    incomplete_beta(0.5 * df, 0.5, x)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) via Lentz continued fraction.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp()) * beta_cf(a, b, x) / a
    } else {
        1.0 - (ln_front.exp()) * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
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
    for m in 1..=MAX_ITER {
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

// ---------------------------------------------------------------------------
// Method comparison

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodComparison {
    pub mean_a_mm: f64,
    pub mean_b_mm: f64,
    pub per_label_delta_mm: BTreeMap<String, f64>,
    pub t_test: Option<TTestResult>,
    pub verdict: String,
}

/// Compare two per-label PE maps (a = UTE pipeline, b = fiducial baseline).
pub fn compare_methods(
    pe_a: &BTreeMap<String, f64>,
    pe_b: &BTreeMap<String, f64>,
) -> Result<MethodComparison> {
    if pe_a.keys().ne(pe_b.keys()) {
        return Err(Error::LabelMismatch(
            "method comparison requires identical label sets".to_string(),
        ));
    }
    if pe_a.is_empty() {
        return Err(Error::EmptyInput("no labels to compare".to_string()));
    }
    let a: Vec<f64> = pe_a.values().copied().collect();
    let b: Vec<f64> = pe_b.values().copied().collect();
    let mean_a = a.iter().sum::<f64>() / a.len() as f64;
    let mean_b = b.iter().sum::<f64>() / b.len() as f64;
    let deltas: BTreeMap<String, f64> = pe_a
        .iter()
        .map(|(l, &va)| (l.clone(), va - pe_b[l]))
        .collect();
    let (t_test, verdict) = match paired_t_test(&a, &b) {
        Ok(tt) => {
            let v = if tt.p_two_sided < 0.05 {
                if mean_a < mean_b {
                    "a significantly lower".to_string()
                } else {
                    "b significantly lower".to_string()
                }
            } else {
                "no significant difference".to_string()
            };
            (Some(tt), v)
        }
        Err(Error::ZeroVariance) => (None, "no difference".to_string()),
        Err(e) => return Err(e),
    };
    Ok(MethodComparison {
        mean_a_mm: mean_a,
        mean_b_mm: mean_b,
        per_label_delta_mm: deltas,
        t_test,
        verdict,
    })
}
