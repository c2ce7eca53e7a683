//! Ideal ratio masks and spatial grid encodings.
//!
//! Four target encodings are provided over a uniform angular grid:
//!
//! * SBC: one-hot activity of each active speaker's nearest cell per frame.
//! * SLC: Gaussian bumps `exp(-d^2 / sigma^2)` around each active DoA, merged
//!   with a maximum.
//! * MW-SBC: the speaker's mask placed in its nearest cell per bin.
//! * MW-SLC: the speaker's mask weighting its Gaussian bump per bin, merged
//!   with a maximum. A sum-merged variant exists for gradient analysis.
//!
//! Spatial-only encodings (SBC, SLC) have a single bin.

use serde::{Deserialize, Serialize};

use crate::stft::Spectrogram;
use crate::{par, Error, Result};

pub const DEFAULT_SIGMA_DEG: f64 = 6.0;
pub const DEFAULT_EPS_M_DB: f64 = -35.0;

/// Circular distance between two angles on a domain of size `span`.
pub fn wrapped_distance(a: f64, b: f64, span: f64) -> f64 {
    let d = (a - b).abs() % span;
    d.min(span - d)
}

/// Uniform angular partition with cell centres `g * span / theta_count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    theta_count: usize,
    span_deg: f64,
}

impl SpatialGrid {
    pub fn new(theta_count: usize, span_deg: f64) -> Result<Self> {
        if theta_count < 2 {
            return Err(Error::Argument(format!(
                "grid needs at least 2 cells, got {theta_count}"
            )));
        }
        if !(span_deg > 0.0 && span_deg <= 360.0) {
            return Err(Error::Argument(format!("span {span_deg} outside (0, 360]")));
        }
        Ok(Self { theta_count, span_deg })
    }

    pub fn theta_count(&self) -> usize {
        self.theta_count
    }

    pub fn span_deg(&self) -> f64 {
        self.span_deg
    }

    pub fn resolution_deg(&self) -> f64 {
        self.span_deg / self.theta_count as f64
    }

    pub fn angle_of(&self, g: usize) -> f64 {
        g as f64 * self.span_deg / self.theta_count as f64
    }

    /// Nearest cell by wrapped distance; exact ties go to the lower index.
    pub fn index_of(&self, angle_deg: f64) -> usize {
        let n = self.theta_count;
        let pos = angle_deg.rem_euclid(self.span_deg) / self.resolution_deg();
        let lo = (pos.floor() as usize) % n;
        let hi = (lo + 1) % n;
        let d_lo = wrapped_distance(self.angle_of(lo), angle_deg, self.span_deg);
        let d_hi = wrapped_distance(self.angle_of(hi), angle_deg, self.span_deg);
        if d_hi < d_lo || (d_hi == d_lo && hi < lo) {
            hi
        } else {
            lo
        }
    }

    pub fn distance(&self, a: f64, b: f64) -> f64 {
        wrapped_distance(a, b, self.span_deg)
    }
}

/// Per-speaker directions of arrival in degrees on `[0, span)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaSet {
    azimuths_deg: Vec<f64>,
    span_deg: f64,
}

impl DoaSet {
    pub fn new(azimuths_deg: Vec<f64>, span_deg: f64) -> Result<Self> {
        for (i, &a) in azimuths_deg.iter().enumerate() {
            if !(0.0..span_deg).contains(&a) {
                return Err(Error::Argument(format!("DoA {a} outside [0, {span_deg})")));
            }
            for &b in &azimuths_deg[i + 1..] {
                if wrapped_distance(a, b, span_deg) <= 0.0 {
                    return Err(Error::Argument(format!("duplicate DoA {a}")));
                }
            }
        }
        Ok(Self { azimuths_deg, span_deg })
    }

    pub fn len(&self) -> usize {
        self.azimuths_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuths_deg.is_empty()
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths_deg
    }

    pub fn span_deg(&self) -> f64 {
        self.span_deg
    }

    pub fn permuted(&self, order: &[usize]) -> DoaSet {
        DoaSet {
            azimuths_deg: order.iter().map(|&i| self.azimuths_deg[i]).collect(),
            span_deg: self.span_deg,
        }
    }
}

/// Per-speaker time-frequency masks, indexed `(i, t, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    speakers: usize,
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl MaskSet {
    pub fn new(speakers: usize, frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != speakers * frames * bins {
            return Err(Error::Shape(format!(
                "{} mask values for {speakers}x{frames}x{bins}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self {
            speakers,
            frames,
            bins,
            values,
        })
    }

    pub fn zeros(speakers: usize, frames: usize, bins: usize) -> Self {
        Self {
            speakers,
            frames,
            bins,
            values: vec![0.0; speakers * frames * bins],
        }
    }

    pub fn speakers(&self) -> usize {
        self.speakers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, k: usize) -> f64 {
        self.values[(i * self.frames + t) * self.bins + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mask of speaker `i` as a `frames x bins` row-major slice.
    pub fn speaker(&self, i: usize) -> &[f64] {
        let n = self.frames * self.bins;
        &self.values[i * n..(i + 1) * n]
    }

    /// Sum over speakers at `(t, k)`.
    pub fn total(&self, t: usize, k: usize) -> f64 {
        (0..self.speakers).map(|i| self.get(i, t, k)).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Result<MaskSet> {
        MaskSet::new(
            self.speakers,
            self.frames,
            self.bins,
            self.values.iter().map(|v| v * alpha).collect(),
        )
    }

    pub fn permuted(&self, order: &[usize]) -> MaskSet {
        let values = order.iter().flat_map(|&i| self.speaker(i).to_vec()).collect();
        MaskSet {
            speakers: order.len(),
            frames: self.frames,
            bins: self.bins,
            values,
        }
    }

    /// Frame-level activity: speaker `i` is active in frame `t` when any bin
    /// of its mask is non-zero.
    pub fn activity(&self) -> Vec<Vec<bool>> {
        (0..self.speakers)
            .map(|i| {
                (0..self.frames)
                    .map(|t| (0..self.bins).any(|k| self.get(i, t, k) > 0.0))
                    .collect()
            })
            .collect()
    }
}

/// Thresholded ideal ratio masks from reference-channel source spectrograms.
///
/// `M_i = |S_i|^2 / sum_j |S_j|^2` where `|S_i|` exceeds its threshold and 0
/// elsewhere. A source's threshold is its own largest STFT magnitude scaled
/// by `10^(eps_m_db / 20)`.
pub fn compute_irm(sources: &[Spectrogram], eps_m_db: f64) -> Result<MaskSet> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Argument("no source spectrograms".into()))?;
    let (frames, bins) = (first.frames(), first.bins());
    for (i, s) in sources.iter().enumerate() {
        if s.channels() != 1 || s.frames() != frames || s.bins() != bins {
            return Err(Error::Shape(format!(
                "source {i} is {}x{}x{}, expected 1x{frames}x{bins}",
                s.channels(),
                s.frames(),
                s.bins()
            )));
        }
    }
    let rel = 10f64.powf(eps_m_db / 20.0);
    let thresholds: Vec<f64> = sources
        .iter()
        .map(|s| s.data().iter().map(|z| z.norm()).fold(0.0, f64::max) * rel)
        .collect();
    let n = frames * bins;
    let mut values = vec![0.0; sources.len() * n];
    for j in 0..n {
        let powers: Vec<f64> = sources.iter().map(|s| s.data()[j].norm_sqr()).collect();
        let total: f64 = powers.iter().sum();
        for (i, s) in sources.iter().enumerate() {
            if s.data()[j].norm() > thresholds[i] && total > 0.0 {
                values[i * n + j] = (powers[i] / total).min(1.0);
            }
        }
    }
    MaskSet::new(sources.len(), frames, bins, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodingKind {
    Sbc,
    Slc,
    MwSbc,
    MwSlc,
    MwSlcSum,
    Estimated,
}

impl CodingKind {
    pub fn code(self) -> u16 {
        match self {
            CodingKind::Sbc => 0,
            CodingKind::Slc => 1,
            CodingKind::MwSbc => 2,
            CodingKind::MwSlc => 3,
            CodingKind::MwSlcSum => 4,
            CodingKind::Estimated => 5,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            0 => CodingKind::Sbc,
            1 => CodingKind::Slc,
            2 => CodingKind::MwSbc,
            3 => CodingKind::MwSlc,
            4 => CodingKind::MwSlcSum,
            5 => CodingKind::Estimated,
            _ => return None,
        })
    }
}

/// Values `L_tkg` over frames, bins and grid cells, row-major `(t, k, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingTensor {
    frames: usize,
    bins: usize,
    grid: SpatialGrid,
    kind: CodingKind,
    values: Vec<f64>,
}

impl CodingTensor {
    pub fn new(frames: usize, bins: usize, grid: SpatialGrid, kind: CodingKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins * grid.theta_count() {
            return Err(Error::Shape(format!(
                "{} values for {frames}x{bins}x{} coding",
                values.len(),
                grid.theta_count()
            )));
        }
        if kind != CodingKind::MwSlcSum {
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Argument(format!("coding value {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            frames,
            bins,
            grid,
            kind,
            values,
        })
    }

    pub fn zeros(frames: usize, bins: usize, grid: SpatialGrid, kind: CodingKind) -> Self {
        Self {
            frames,
            bins,
            grid,
            kind,
            values: vec![0.0; frames * bins * grid.theta_count()],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn kind(&self) -> CodingKind {
        self.kind
    }

    pub fn theta_count(&self) -> usize {
        self.grid.theta_count()
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize, g: usize) -> f64 {
        self.values[(t * self.bins + k) * self.grid.theta_count() + g]
    }

    /// The spatial vector at `(t, k)`.
    pub fn cell_row(&self, t: usize, k: usize) -> &[f64] {
        let n = self.grid.theta_count();
        let i = (t * self.bins + k) * n;
        &self.values[i..i + n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &CodingTensor) -> bool {
        self.frames == other.frames && self.bins == other.bins && self.grid.theta_count() == other.grid.theta_count()
    }

    pub fn with_kind(mut self, kind: CodingKind) -> Self {
        self.kind = kind;
        self
    }
}

fn check_pair(masks: &MaskSet, truth: &DoaSet) -> Result<()> {
    if masks.speakers() != truth.len() {
        return Err(Error::Shape(format!(
            "{} masks for {} DoAs",
            masks.speakers(),
            truth.len()
        )));
    }
    Ok(())
}

fn check_span(truth: &DoaSet, grid: &SpatialGrid) -> Result<()> {
    if let Some(a) = truth.azimuths().iter().find(|&&a| a >= grid.span_deg()) {
        return Err(Error::Argument(format!(
            "DoA {a} outside grid span {}",
            grid.span_deg()
        )));
    }
    Ok(())
}

fn check_sigma(sigma_deg: f64) -> Result<()> {
    if !(sigma_deg > 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma_deg}")));
    }
    Ok(())
}

/// Grid cell of every DoA; two speakers on one cell is an error.
pub fn snap_doas(truth: &DoaSet, grid: &SpatialGrid) -> Result<Vec<usize>> {
    let cells: Vec<usize> = truth.azimuths().iter().map(|&a| grid.index_of(a)).collect();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            if cells[i] == cells[j] {
                return Err(Error::Collision {
                    first: i,
                    second: j,
                    cell: cells[i],
                });
            }
        }
    }
    Ok(cells)
}

/// `exp(-d(theta_g, doa)^2 / sigma^2)` for every cell.
pub fn gaussian_profile(doa_deg: f64, grid: &SpatialGrid, sigma_deg: f64) -> Vec<f64> {
    (0..grid.theta_count())
        .map(|g| {
            let d = grid.distance(grid.angle_of(g), doa_deg);
            (-(d * d) / (sigma_deg * sigma_deg)).exp()
        })
        .collect()
}

fn check_activity(activity: &[Vec<bool>], truth: &DoaSet) -> Result<usize> {
    if activity.len() != truth.len() {
        return Err(Error::Shape(format!(
            "activity for {} speakers, {} DoAs",
            activity.len(),
            truth.len()
        )));
    }
    let frames = activity.first().map_or(0, Vec::len);
    if activity.iter().any(|a| a.len() != frames) {
        return Err(Error::Shape("activity rows differ in length".into()));
    }
    Ok(frames)
}

/// Frame-wise one-hot encoding of active speakers' nearest cells.
pub fn encode_sbc(truth: &DoaSet, activity: &[Vec<bool>], grid: &SpatialGrid) -> Result<CodingTensor> {
    check_span(truth, grid)?;
    let frames = check_activity(activity, truth)?;
    let n = grid.theta_count();
    let cells: Vec<usize> = truth.azimuths().iter().map(|&a| grid.index_of(a)).collect();
    let mut values = vec![0.0; frames * n];
    for (i, act) in activity.iter().enumerate() {
        for (t, &on) in act.iter().enumerate() {
            if on {
                values[t * n + cells[i]] = 1.0;
            }
        }
    }
    CodingTensor::new(frames, 1, *grid, CodingKind::Sbc, values)
}

/// Frame-wise Gaussian likelihood of active speakers, merged with a maximum.
pub fn encode_slc(truth: &DoaSet, activity: &[Vec<bool>], grid: &SpatialGrid, sigma_deg: f64) -> Result<CodingTensor> {
    check_sigma(sigma_deg)?;
    check_span(truth, grid)?;
    let frames = check_activity(activity, truth)?;
    let n = grid.theta_count();
    let profiles: Vec<Vec<f64>> = truth
        .azimuths()
        .iter()
        .map(|&a| gaussian_profile(a, grid, sigma_deg))
        .collect();
    let mut values = vec![0.0; frames * n];
    for t in 0..frames {
        let row = &mut values[t * n..(t + 1) * n];
        for (i, prof) in profiles.iter().enumerate() {
            if activity[i][t] {
                for (v, p) in row.iter_mut().zip(prof) {
                    *v = f64::max(*v, *p);
                }
            }
        }
    }
    CodingTensor::new(frames, 1, *grid, CodingKind::Slc, values)
}

/// Each speaker's mask placed into its snapped cell.
pub fn encode_mwsbc(masks: &MaskSet, truth: &DoaSet, grid: &SpatialGrid) -> Result<CodingTensor> {
    check_pair(masks, truth)?;
    check_span(truth, grid)?;
    let cells = snap_doas(truth, grid)?;
    let n = grid.theta_count();
    let (frames, bins) = (masks.frames(), masks.bins());
    let mut values = vec![0.0; frames * bins * n];
    par::for_each_chunk_mut(&mut values, bins * n, |t, chunk| {
        for k in 0..bins {
            for (i, &g) in cells.iter().enumerate() {
                chunk[k * n + g] += masks.get(i, t, k);
            }
        }
    });
    CodingTensor::new(frames, bins, *grid, CodingKind::MwSbc, values)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Merge {
    Max,
    Sum,
}

fn mask_weighted_gaussians(
    masks: &MaskSet,
    truth: &DoaSet,
    grid: &SpatialGrid,
    sigma_deg: f64,
    merge: Merge,
) -> Result<CodingTensor> {
    check_pair(masks, truth)?;
    check_sigma(sigma_deg)?;
    check_span(truth, grid)?;
    let profiles: Vec<Vec<f64>> = truth
        .azimuths()
        .iter()
        .map(|&a| gaussian_profile(a, grid, sigma_deg))
        .collect();
    let n = grid.theta_count();
    let (frames, bins) = (masks.frames(), masks.bins());
    let mut values = vec![0.0; frames * bins * n];
    par::for_each_chunk_mut(&mut values, bins * n, |t, chunk| {
        for k in 0..bins {
            let row = &mut chunk[k * n..(k + 1) * n];
            for (i, prof) in profiles.iter().enumerate() {
                let m = masks.get(i, t, k);
                if m == 0.0 {
                    continue;
                }
                match merge {
                    Merge::Max => {
                        for (v, p) in row.iter_mut().zip(prof) {
                            *v = f64::max(*v, m * p);
                        }
                    }
                    Merge::Sum => {
                        for (v, p) in row.iter_mut().zip(prof) {
                            *v += m * p;
                        }
                    }
                }
            }
        }
    });
    let kind = match merge {
        Merge::Max => CodingKind::MwSlc,
        Merge::Sum => CodingKind::MwSlcSum,
    };
    CodingTensor::new(frames, bins, *grid, kind, values)
}

/// Mask-weighted Gaussians merged with a maximum over speakers.
pub fn encode_mwslc(masks: &MaskSet, truth: &DoaSet, grid: &SpatialGrid, sigma_deg: f64) -> Result<CodingTensor> {
    mask_weighted_gaussians(masks, truth, grid, sigma_deg, Merge::Max)
}

/// Mask-weighted Gaussians summed over speakers. Values can exceed 1 where
/// speakers are close.
pub fn encode_mwslc_sum(masks: &MaskSet, truth: &DoaSet, grid: &SpatialGrid, sigma_deg: f64) -> Result<CodingTensor> {
    mask_weighted_gaussians(masks, truth, grid, sigma_deg, Merge::Sum)
}

/// Pairs of speakers whose DoAs share a grid cell. Max-merged MW-SLC silently
/// keeps the larger weighted value for those; reports list them.
pub fn shared_cells(truth: &DoaSet, grid: &SpatialGrid) -> Vec<(usize, usize, usize)> {
    let cells: Vec<usize> = truth.azimuths().iter().map(|&a| grid.index_of(a)).collect();
    let mut out = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            if cells[i] == cells[j] {
                out.push((i, j, cells[i]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn spec_of(vals: &[f64]) -> Spectrogram {
        let cfg = StftConfig::new(4, 2, 16_000).unwrap();
        let bins = cfg.bins();
        let frames = vals.len() / bins;
        Spectrogram::from_data(
            1,
            frames,
            cfg,
            0,
            vals.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
        .unwrap()
    }

    fn masks(values: Vec<Vec<f64>>, frames: usize, bins: usize) -> MaskSet {
        let i = values.len();
        MaskSet::new(i, frames, bins, values.into_iter().flatten().collect()).unwrap()
    }

    #[test]
    fn wrapped_distance_cases() {
        assert_eq!(wrapped_distance(350.0, 10.0, 360.0), 20.0);
        assert_eq!(wrapped_distance(90.0, 90.0, 360.0), 0.0);
        assert_eq!(wrapped_distance(0.0, 180.0, 360.0), 180.0);
        assert_eq!(wrapped_distance(10.0, 170.0, 180.0), 20.0);
    }

    #[test]
    fn grid_round_trip_and_ties() {
        for (n, span) in [(12, 360.0), (360, 360.0), (720, 360.0), (37, 180.0)] {
            let g = SpatialGrid::new(n, span).unwrap();
            for c in 0..n {
                assert_eq!(g.index_of(g.angle_of(c)), c);
            }
        }
        let g = SpatialGrid::new(12, 360.0).unwrap();
        assert_eq!(g.index_of(15.0), 0);
        assert_eq!(g.index_of(45.0), 1);
        assert_eq!(g.index_of(359.0), 0);
        // Midway between the last and the first cell ties toward 0.
        assert_eq!(g.index_of(345.0), 0);
        assert!(SpatialGrid::new(1, 360.0).is_err());
    }

    #[test]
    fn irm_cases() {
        // Single speaker above threshold.
        let m = compute_irm(&[spec_of(&[1.0, 0.5, 0.2])], -35.0).unwrap();
        assert_eq!(m.values(), &[1.0, 1.0, 1.0]);
        // |S1|^2 = 3 |S2|^2.
        let a = spec_of(&[3f64.sqrt(), 1e-9, 1.0]);
        let b = spec_of(&[1.0, 1e-9, 1.0]);
        let m = compute_irm(&[a, b], -35.0).unwrap();
        assert!((m.get(0, 0, 0) - 0.75).abs() < 1e-12);
        assert!((m.get(1, 0, 0) - 0.25).abs() < 1e-12);
        // Both below their thresholds.
        assert_eq!(m.get(0, 0, 1), 0.0);
        assert_eq!(m.get(1, 0, 1), 0.0);
        assert!(compute_irm(&[spec_of(&[1.0; 3]), spec_of(&[1.0; 6])], -35.0).is_err());
    }

    #[test]
    fn sbc_cases() {
        let grid = SpatialGrid::new(12, 360.0).unwrap();
        let truth = DoaSet::new(vec![60.0], 360.0).unwrap();
        let c = encode_sbc(&truth, &[vec![true, false]], &grid).unwrap();
        assert_eq!(c.bins(), 1);
        assert_eq!(c.cell_row(0, 0).iter().sum::<f64>(), 1.0);
        assert_eq!(c.get(0, 0, 2), 1.0);
        assert!(c.cell_row(1, 0).iter().all(|&v| v == 0.0));
        // 45 deg is midway between cells 1 and 2.
        let mid = DoaSet::new(vec![45.0], 360.0).unwrap();
        let c = encode_sbc(&mid, &[vec![true]], &grid).unwrap();
        assert_eq!(c.get(0, 0, 1), 1.0);
    }

    #[test]
    fn slc_cases() {
        let grid = SpatialGrid::new(360, 360.0).unwrap();
        let truth = DoaSet::new(vec![100.0], 360.0).unwrap();
        let c = encode_slc(&truth, &[vec![true, false]], &grid, 6.0).unwrap();
        assert_eq!(c.get(0, 0, 100), 1.0);
        assert!((c.get(0, 0, 106) - (-1f64).exp()).abs() < 1e-15);
        assert!((c.get(0, 0, 94) - 0.36787944117144233).abs() < 1e-15);
        assert!(c.cell_row(1, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mwsbc_cases() {
        let grid = SpatialGrid::new(360, 360.0).unwrap();
        let truth = DoaSet::new(vec![50.0], 360.0).unwrap();
        let c = encode_mwsbc(&masks(vec![vec![0.8]], 1, 1), &truth, &grid).unwrap();
        assert_eq!(c.get(0, 0, 50), 0.8);
        assert_eq!(c.values().iter().filter(|v| **v != 0.0).count(), 1);
        let z = encode_mwsbc(&MaskSet::zeros(1, 3, 4), &truth, &grid).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mwsbc_collision_on_coarse_grid() {
        // 30 deg cells: 50 -> cell 2 (60), 55 -> cell 2 (60).
        let grid = SpatialGrid::new(12, 360.0).unwrap();
        assert_eq!(grid.index_of(50.0), 2);
        assert_eq!(grid.index_of(55.0), 2);
        let truth = DoaSet::new(vec![50.0, 55.0], 360.0).unwrap();
        let r = encode_mwsbc(&masks(vec![vec![0.5], vec![0.5]], 1, 1), &truth, &grid);
        assert!(matches!(
            r,
            Err(Error::Collision {
                first: 0,
                second: 1,
                cell: 2
            })
        ));
        assert_eq!(shared_cells(&truth, &grid), vec![(0, 1, 2)]);
    }

    #[test]
    fn mwslc_cases() {
        let grid = SpatialGrid::new(360, 360.0).unwrap();
        let lone = DoaSet::new(vec![200.0], 360.0).unwrap();
        let c = encode_mwslc(&masks(vec![vec![0.6]], 1, 1), &lone, &grid, 6.0).unwrap();
        assert_eq!(c.get(0, 0, 200), 0.6);
        let c = encode_mwslc(&masks(vec![vec![1.0]], 1, 1), &lone, &grid, 6.0).unwrap();
        assert!((c.get(0, 0, 206) - (-1f64).exp()).abs() < 1e-15);

        // 12 deg apart, masks 1.0 and 0.1: the first tail at the second DoA
        // is e^-4 ~ 0.0183 < 0.1.
        let two = DoaSet::new(vec![100.0, 112.0], 360.0).unwrap();
        let c = encode_mwslc(&masks(vec![vec![1.0], vec![0.1]], 1, 1), &two, &grid, 6.0).unwrap();
        assert!((c.get(0, 0, 112) - 0.1).abs() < 1e-15);
        let s = encode_mwslc_sum(&masks(vec![vec![1.0], vec![0.1]], 1, 1), &two, &grid, 6.0).unwrap();
        assert!((s.get(0, 0, 112) - (0.1 + (-4f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn sum_form_cases() {
        let grid = SpatialGrid::new(360, 360.0).unwrap();
        let lone = DoaSet::new(vec![30.0], 360.0).unwrap();
        let m = masks(vec![vec![0.3, 0.9]], 1, 2);
        let a = encode_mwslc(&m, &lone, &grid, 6.0).unwrap();
        let b = encode_mwslc_sum(&m, &lone, &grid, 6.0).unwrap();
        assert_eq!(a.values(), b.values());

        // Two unit masks at the same direction, built by hand since DoaSet
        // refuses duplicates.
        let prof = gaussian_profile(30.0, &grid, 6.0);
        let doubled: Vec<f64> = prof.iter().map(|p| p + p).collect();
        assert_eq!(doubled[30], 2.0);
        assert!(CodingTensor::new(1, 1, grid, CodingKind::MwSlcSum, doubled.clone()).is_ok());
        assert!(CodingTensor::new(1, 1, grid, CodingKind::MwSlc, doubled).is_err());
    }

    #[test]
    fn far_speakers_max_and_sum_agree() {
        let grid = SpatialGrid::new(360, 360.0).unwrap();
        let truth = DoaSet::new(vec![10.0, 46.0, 300.0], 360.0).unwrap();
        let m = masks(vec![vec![1.0, 0.4], vec![1.0, 0.7], vec![0.2, 1.0]], 1, 2);
        let a = encode_mwslc(&m, &truth, &grid, 6.0).unwrap();
        let b = encode_mwslc_sum(&m, &truth, &grid, 6.0).unwrap();
        let max_diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= (-9f64).exp());
    }

    fn arb_masks(speakers: usize) -> impl Strategy<Value = MaskSet> {
        proptest::collection::vec(0.0f64..1.0, speakers * 6).prop_map(move |v| {
            // Normalise so the per-bin sum stays within one.
            let mut v = v;
            for j in 0..6 {
                let s: f64 = (0..speakers).map(|i| v[i * 6 + j]).sum();
                if s > 1.0 {
                    for i in 0..speakers {
                        v[i * 6 + j] /= s;
                    }
                }
            }
            MaskSet::new(speakers, 2, 3, v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn encodings_scale_with_masks(m in arb_masks(3), alpha in 0.0f64..1.0) {
            let grid = SpatialGrid::new(72, 360.0).unwrap();
            let truth = DoaSet::new(vec![20.0, 140.0, 250.0], 360.0).unwrap();
            let scaled = m.scaled(alpha).unwrap();
            let a = encode_mwsbc(&m, &truth, &grid).unwrap();
            let b = encode_mwsbc(&scaled, &truth, &grid).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x * alpha - y).abs() <= 1e-15);
            }
            let a = encode_mwslc(&m, &truth, &grid, 6.0).unwrap();
            let b = encode_mwslc(&scaled, &truth, &grid, 6.0).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x * alpha - y).abs() <= 1e-15);
            }
        }

        #[test]
        fn encodings_are_permutation_invariant(m in arb_masks(3)) {
            let grid = SpatialGrid::new(72, 360.0).unwrap();
            let truth = DoaSet::new(vec![20.0, 140.0, 250.0], 360.0).unwrap();
            let order = [2, 0, 1];
            let (pm, pt) = (m.permuted(&order), truth.permuted(&order));
            prop_assert_eq!(
                encode_mwslc(&m, &truth, &grid, 6.0).unwrap().into_values(),
                encode_mwslc(&pm, &pt, &grid, 6.0).unwrap().into_values()
            );
            let a = encode_mwsbc(&m, &truth, &grid).unwrap();
            let b = encode_mwsbc(&pm, &pt, &grid).unwrap();
            prop_assert_eq!(a.values(), b.values());
            let act = m.activity();
            let pact: Vec<_> = order.iter().map(|&i| act[i].clone()).collect();
            prop_assert_eq!(
                encode_slc(&truth, &act, &grid, 6.0).unwrap().into_values(),
                encode_slc(&pt, &pact, &grid, 6.0).unwrap().into_values()
            );
        }

        #[test]
        fn mwsbc_sparsity_and_mask_recovery(m in arb_masks(3)) {
            let grid = SpatialGrid::new(360, 360.0).unwrap();
            let truth = DoaSet::new(vec![20.0, 140.0, 250.0], 360.0).unwrap();
            let sbc = encode_mwsbc(&m, &truth, &grid).unwrap();
            let slc = encode_mwslc(&m, &truth, &grid, 6.0).unwrap();
            for t in 0..2 {
                for k in 0..3 {
                    let nz = sbc.cell_row(t, k).iter().filter(|v| **v != 0.0).count();
                    prop_assert!(nz <= 3);
                    for (i, &a) in truth.azimuths().iter().enumerate() {
                        let g = grid.index_of(a);
                        // Gap is >= 110 deg, so the bound is far below f64 eps.
                        prop_assert!((slc.get(t, k, g) - m.get(i, t, k)).abs() <= (-(110.0f64 / 6.0).powi(2)).exp() + 1e-300);
                    }
                }
            }
        }
    }
}
