//! Gradient conditioning of the per-bin MSE loss for grid encodings.
//!
//! At the all-zero estimate the spatial L1 norm of the loss gradient is
//! `(2 / Theta) * sum_g L_tkg`. For MW-SBC that equals `(2 / Theta) * sum_i M_i`
//! and vanishes as the grid is refined. For MW-SLC the cell sum is a Riemann
//! sum of a Gaussian, and the norm tends to `sqrt(pi) * 2 sigma / Omega *
//! sum_i M_i` instead.

use serde::{Deserialize, Serialize};

use crate::coding::{encode_mwsbc, encode_mwslc, encode_mwslc_sum, CodingTensor, DoaSet, MaskSet, SpatialGrid};
use crate::{par, Error, Result};

fn check_dims(est: &CodingTensor, target: &CodingTensor) -> Result<()> {
    if !est.same_shape(target) {
        return Err(Error::Shape(format!(
            "estimate {}x{}x{} vs target {}x{}x{}",
            est.frames(),
            est.bins(),
            est.theta_count(),
            target.frames(),
            target.bins(),
            target.theta_count()
        )));
    }
    Ok(())
}

/// Per-bin loss `(1 / Theta) * sum_g (L - L_hat)^2`, row-major `(t, k)`.
pub fn mse_loss(est: &CodingTensor, target: &CodingTensor) -> Result<Vec<f64>> {
    check_dims(est, target)?;
    let n = est.theta_count();
    Ok(est
        .values()
        .chunks_exact(n)
        .zip(target.values().chunks_exact(n))
        .map(|(e, l)| e.iter().zip(l).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / n as f64)
        .collect())
}

/// Gradient of [`mse_loss`] with respect to the estimate:
/// `(2 / Theta) * (L_hat - L)`, same layout as the coding.
pub fn mse_gradient(est: &CodingTensor, target: &CodingTensor) -> Result<Vec<f64>> {
    check_dims(est, target)?;
    let scale = 2.0 / est.theta_count() as f64;
    Ok(est
        .values()
        .iter()
        .zip(target.values())
        .map(|(e, l)| scale * (e - l))
        .collect())
}

/// Spatial L1 norm of the MSE gradient at `L_hat = 0`, per `(t, k)`.
pub fn grad_norm_at_zero(target: &CodingTensor) -> Vec<f64> {
    let n = target.theta_count();
    let scale = 2.0 / n as f64;
    target
        .values()
        .chunks_exact(n)
        .map(|row| scale * row.iter().map(|v| v.abs()).sum::<f64>())
        .collect()
}

/// Large-grid limit of the MW-SLC gradient norm at zero,
/// `sqrt(pi) * (2 sigma / Omega) * sum_i M_i`, per `(t, k)`.
pub fn mwslc_norm_limit(masks: &MaskSet, sigma_deg: f64, span_deg: f64) -> Result<Vec<f64>> {
    if !(sigma_deg > 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma_deg}")));
    }
    let c = std::f64::consts::PI.sqrt() * 2.0 * sigma_deg / span_deg;
    Ok((0..masks.frames())
        .flat_map(|t| (0..masks.bins()).map(move |k| (t, k)))
        .map(|(t, k)| c * masks.total(t, k))
        .collect())
}

/// Bins where any speaker has non-zero mask.
pub fn speech_active_bins(masks: &MaskSet) -> Vec<usize> {
    (0..masks.frames() * masks.bins())
        .filter(|&j| masks.total(j / masks.bins(), j % masks.bins()) > 0.0)
        .collect()
}

fn mean_over(values: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().map(|&j| values[j]).sum::<f64>() / idx.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta_count: usize,
    pub mean_mwsbc: f64,
    pub mean_mwslc_max: f64,
    pub mean_mwslc_sum: f64,
    pub limit: f64,
    pub rel_gap: f64,
    /// Mean over active bins of the per-bin sum-form / MW-SBC norm ratio.
    pub mean_ratio: f64,
    /// Largest relative deviation of that per-bin ratio from
    /// `sqrt(pi) * sigma * Theta / Omega`.
    pub max_ratio_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub theta_count: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub sigma_deg: f64,
    pub span_deg: f64,
    pub active_bins: usize,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedRow>,
}

impl ConditioningReport {
    pub const CSV_HEADER: &'static str = "theta_count,mean_mwsbc,mean_mwslc_max,mean_mwslc_sum,limit,rel_gap";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.theta_count, r.mean_mwsbc, r.mean_mwslc_max, r.mean_mwslc_sum, r.limit, r.rel_gap
            ));
        }
        s
    }

    pub fn row(&self, theta_count: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.theta_count == theta_count)
    }
}

/// Per-bin gradient norms at zero for every encoding at one grid size.
#[derive(Debug, Clone)]
pub struct GridNorms {
    pub mwsbc: Vec<f64>,
    pub mwslc_max: Vec<f64>,
    pub mwslc_sum: Vec<f64>,
}

pub fn grid_norms(masks: &MaskSet, truth: &DoaSet, grid: &SpatialGrid, sigma_deg: f64) -> Result<GridNorms> {
    Ok(GridNorms {
        mwsbc: grad_norm_at_zero(&encode_mwsbc(masks, truth, grid)?),
        mwslc_max: grad_norm_at_zero(&encode_mwslc(masks, truth, grid, sigma_deg)?),
        mwslc_sum: grad_norm_at_zero(&encode_mwslc_sum(masks, truth, grid, sigma_deg)?),
    })
}

/// Builds every encoding for each grid size and summarises the gradient
/// norms at zero over speech-active bins. Rows whose grid is too coarse to
/// separate the speakers are skipped and listed.
pub fn theta_sweep(
    masks: &MaskSet,
    truth: &DoaSet,
    sigma_deg: f64,
    span_deg: f64,
    theta_counts: &[usize],
) -> Result<ConditioningReport> {
    if theta_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("theta counts must be strictly ascending".into()));
    }
    if let Some(&n) = theta_counts.iter().find(|&&n| n < 2 * truth.len().max(1)) {
        return Err(Error::Argument(format!(
            "theta count {n} below twice the speaker count"
        )));
    }
    let active = speech_active_bins(masks);
    let limit_per_bin = mwslc_norm_limit(masks, sigma_deg, span_deg)?;
    let limit = mean_over(&limit_per_bin, &active);

    let rows = par::map_slice(
        theta_counts,
        |&n| -> Result<std::result::Result<SweepRow, SkippedRow>> {
            let grid = SpatialGrid::new(n, span_deg)?;
            let norms = match grid_norms(masks, truth, &grid, sigma_deg) {
                Ok(v) => v,
                Err(e @ Error::Collision { .. }) => {
                    return Ok(Err(SkippedRow {
                        theta_count: n,
                        reason: e.to_string(),
                    }))
                }
                Err(e) => return Err(e),
            };
            let expected_ratio = std::f64::consts::PI.sqrt() * sigma_deg * n as f64 / span_deg;
            let ratios: Vec<f64> = active.iter().map(|&j| norms.mwslc_sum[j] / norms.mwsbc[j]).collect();
            let mean_ratio = if ratios.is_empty() {
                0.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            };
            let max_ratio_dev = ratios
                .iter()
                .map(|r| (r - expected_ratio).abs() / expected_ratio)
                .fold(0.0, f64::max);
            let mean_mwslc_sum = mean_over(&norms.mwslc_sum, &active);
            Ok(Ok(SweepRow {
                theta_count: n,
                mean_mwsbc: mean_over(&norms.mwsbc, &active),
                mean_mwslc_max: mean_over(&norms.mwslc_max, &active),
                mean_mwslc_sum,
                limit,
                rel_gap: if limit > 0.0 {
                    (mean_mwslc_sum - limit).abs() / limit
                } else {
                    0.0
                },
                mean_ratio,
                max_ratio_dev,
            }))
        },
    );

    let mut report = ConditioningReport {
        sigma_deg,
        span_deg,
        active_bins: active.len(),
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for r in rows {
        match r? {
            Ok(row) => report.rows.push(row),
            Err(skip) => report.skipped.push(skip),
        }
    }
    Ok(report)
}
