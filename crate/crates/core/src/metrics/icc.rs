use serde::{Deserialize, Serialize};

use super::special::f_quantile;
use super::MetricsError;

/// `n` rows (data points) by `k` columns (raters), row-major.
///
/// For prediction agreement `k = 2`: column 0 is the reference, column 1 the
/// prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSamples {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl PairedSamples {
    pub fn new(n: usize, k: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if n < 3 || k < 2 {
            return Err(MetricsError::TooFewSamples { n, k });
        }
        if data.len() != n * k {
            return Err(MetricsError::Shape(format!("{n}x{k} samples need {} values, got {}", n * k, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(Self { n, k, data })
    }

    pub fn from_pairs(reference: &[f64], prediction: &[f64]) -> Result<Self, MetricsError> {
        if reference.len() != prediction.len() {
            return Err(MetricsError::Shape(format!(
                "reference has {} values, prediction {}",
                reference.len(),
                prediction.len()
            )));
        }
        let data = reference.iter().zip(prediction).flat_map(|(&r, &p)| [r, p]).collect();
        Self::new(reference.len(), 2, data)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }
}

/// Two-way ANOVA decomposition without replication.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaComponents {
    pub ss_rows: f64,
    pub ss_cols: f64,
    pub ss_err: f64,
    pub ss_total: f64,
    /// Between-rows mean square.
    pub msr: f64,
    /// Between-columns mean square.
    pub msc: f64,
    /// Residual mean square.
    pub mse: f64,
    pub n: usize,
    pub k: usize,
}

impl AnovaComponents {
    pub fn compute(s: &PairedSamples) -> Self {
        let (n, k) = (s.n, s.k);
        let total = (n * k) as f64;
        let grand = s.data.iter().sum::<f64>() / total;
        let row_means: Vec<f64> = (0..n)
            .map(|i| (0..k).map(|j| s.get(i, j)).sum::<f64>() / k as f64)
            .collect();
        let col_means: Vec<f64> = (0..k)
            .map(|j| (0..n).map(|i| s.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        let ss_rows = k as f64 * row_means.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
        let ss_cols = n as f64 * col_means.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
        let ss_total = s.data.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
        // Clamp tiny negative round-off; the decomposition is exact in real arithmetic.
        let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
        Self {
            ss_rows,
            ss_cols,
            ss_err,
            ss_total,
            msr: ss_rows / (n - 1) as f64,
            msc: ss_cols / (k - 1) as f64,
            mse: ss_err / ((n - 1) * (k - 1)) as f64,
            n,
            k,
        }
    }
}

/// Cicchetti interpretation bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Poor,
    Fair,
    Good,
    Excellent,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Poor, Band::Fair, Band::Good, Band::Excellent];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Poor => "poor",
            Band::Fair => "fair",
            Band::Good => "good",
            Band::Excellent => "excellent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// poor < 0.40 ≤ fair < 0.60 ≤ good < 0.75 ≤ excellent
pub fn band(icc: f64) -> Band {
    if icc < 0.40 {
        Band::Poor
    } else if icc < 0.60 {
        Band::Fair
    } else if icc < 0.75 {
        Band::Good
    } else {
        Band::Excellent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub icc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub band: Band,
    pub components: AnovaComponents,
    /// Set when the rows carry no variance (MSR = 0), so the point estimate
    /// has no meaningful interval.
    pub degenerate: bool,
}

impl IccResult {
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// ICC(2,1): two-way model, absolute agreement, single rater, with a
/// two-sided confidence interval at level `confidence`.
pub fn icc_2_1(samples: &PairedSamples, confidence: f64) -> Result<IccResult, MetricsError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::Confidence(confidence));
    }
    let c = AnovaComponents::compute(samples);
    let (n, k) = (c.n as f64, c.k as f64);
    let (msr, msc, mse) = (c.msr, c.msc, c.mse);

    let denom = msr + (k - 1.0) * mse + k / n * (msc - mse);
    let degenerate = msr <= 0.0 || denom <= 0.0;
    if degenerate {
        let icc = if denom > 0.0 { ((msr - mse) / denom).clamp(-1.0, 1.0) } else { 0.0 };
        return Ok(IccResult {
            icc,
            ci_low: -1.0,
            ci_high: 1.0,
            band: band(icc),
            components: c,
            degenerate: true,
        });
    }
    let icc = ((msr - mse) / denom).clamp(-1.0, 1.0);
    if icc >= 1.0 - 1e-12 {
        return Ok(IccResult {
            icc,
            ci_low: icc,
            ci_high: icc,
            band: band(icc),
            components: c,
            degenerate: false,
        });
    }

    let a = k * icc / (n * (1.0 - icc));
    let b = 1.0 + k * icc * (n - 1.0) / (n * (1.0 - icc));
    let v = (a * msc + b * mse).powi(2)
        / ((a * msc).powi(2) / (k - 1.0) + (b * mse).powi(2) / ((n - 1.0) * (k - 1.0)));
    let q = 1.0 - (1.0 - confidence) / 2.0;
    let f_low = f_quantile(q, n - 1.0, v);
    let f_high = f_quantile(q, v, n - 1.0);
    let spread = k * msc + (k * n - k - n) * mse;
    let low = n * (msr - f_low * mse) / (f_low * spread + n * msr);
    let high = n * (f_high * msr - mse) / (spread + n * f_high * msr);
    Ok(IccResult {
        icc,
        ci_low: low.clamp(-1.0, 1.0),
        ci_high: high.clamp(-1.0, 1.0),
        band: band(icc),
        components: c,
        degenerate: false,
    })
}
