use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier applied to the interquartile range.
pub const IQR_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `q3 + 1.5 IQR`, the upper Tukey fence.
    #[default]
    TukeyFence,
    /// `1.5 IQR` on its own.
    LiteralIqr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyThreshold {
    pub phi_max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub rule: ThresholdRule,
    /// Both candidates, whichever rule was selected.
    pub tukey_fence: f64,
    pub literal_iqr: f64,
    pub n: usize,
    pub dataset_hash: String,
}

impl AnomalyThreshold {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    pub fn exceeds(&self, d2: f64) -> bool {
        d2 > self.phi_max
    }
}

/// Quantile by linear interpolation between order statistics: `h = (n - 1) p`.
pub fn quantile_r7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn threshold_from_distances(
    distances: &[f64],
    rule: ThresholdRule,
    dataset_hash: impl Into<String>,
) -> Result<AnomalyThreshold> {
    if distances.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: distances.len(),
        });
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Domain("distances must be finite and nonnegative".into()));
    }
    let mut s = distances.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_r7(&s, 0.25);
    let median = quantile_r7(&s, 0.5);
    let q3 = quantile_r7(&s, 0.75);
    let iqr = q3 - q1;
    let tukey_fence = q3 + IQR_FACTOR * iqr;
    let literal_iqr = IQR_FACTOR * iqr;
    let phi_max = match rule {
        ThresholdRule::TukeyFence => tukey_fence,
        ThresholdRule::LiteralIqr => literal_iqr,
    };
    Ok(AnomalyThreshold {
        phi_max,
        q1,
        median,
        q3,
        rule,
        tukey_fence,
        literal_iqr,
        n: distances.len(),
        dataset_hash: dataset_hash.into(),
    })
}

/// Fraction of `distances` strictly above `phi_max`.
pub fn exceedance(distances: &[f64], phi_max: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().filter(|&&d| d > phi_max).count() as f64 / distances.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, upper]`; values above `upper` land in the last bin.
pub fn histogram(values: &[f64], bins: usize, upper: f64) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let upper = if upper > 0.0 { upper } else { 1.0 };
    let width = upper / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: i as f64 * width,
            right: (i + 1) as f64 * width,
            count,
        })
        .collect()
}
