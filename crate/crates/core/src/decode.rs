//! Joint DoA and mask extraction from a coding tensor: frequency averaging,
//! frame-wise peak search, clustering of detections into utterance-level
//! directions, and mask sampling at the estimated directions.

use serde::{Deserialize, Serialize};

use crate::coding::{wrapped_distance, CodingTensor, DoaSet, MaskSet, SpatialGrid};
use crate::metrics::{match_counts, MatchCounts};
use crate::{par, Error, Result};

const ANGLE_TOL: f64 = 1e-9;

/// Frame-level likelihood `l[t][g]`, the frequency average of a coding.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLikelihood {
    frames: usize,
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl FrameLikelihood {
    pub fn new(frames: usize, grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * grid.theta_count() {
            return Err(Error::Shape(format!(
                "{} likelihood values for {frames} frames x {} cells",
                values.len(),
                grid.theta_count()
            )));
        }
        Ok(Self { frames, grid, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.grid.theta_count();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, g: usize) -> f64 {
        self.values[t * self.grid.theta_count() + g]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Uniform mean over frequency bins.
pub fn freq_average(coding: &CodingTensor) -> FrameLikelihood {
    let (frames, bins, n) = (coding.frames(), coding.bins(), coding.theta_count());
    let mut values = vec![0.0; frames * n];
    if bins > 0 {
        for (t, row) in values.chunks_exact_mut(n).enumerate() {
            for k in 0..bins {
                for (acc, v) in row.iter_mut().zip(coding.cell_row(t, k)) {
                    *acc += v;
                }
            }
            row.iter_mut().for_each(|v| *v /= bins as f64);
        }
    }
    FrameLikelihood {
        frames,
        grid: *coding.grid(),
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub cell: usize,
    pub angle_deg: f64,
    pub value: f64,
}

/// Offsets `1..=w` with every offset inside the closed neighbourhood.
fn neighbourhood_half_width(grid: &SpatialGrid, delta_theta_deg: f64) -> usize {
    let n = grid.theta_count();
    let mut w = 0;
    while w < n / 2 && grid.distance(0.0, grid.angle_of(w + 1)) <= delta_theta_deg + ANGLE_TOL {
        w += 1;
    }
    w
}

/// Cells at or above `eps_theta` that dominate their closed `+-delta_theta`
/// neighbourhood. On plateaus only the lowest-index cell survives.
pub fn peak_search(fl: &FrameLikelihood, eps_theta: f64, delta_theta_deg: f64) -> Result<Vec<Detection>> {
    if !(eps_theta > 0.0 && eps_theta < 1.0) {
        return Err(Error::Argument(format!("threshold {eps_theta} outside (0, 1)")));
    }
    if !(delta_theta_deg > 0.0) {
        return Err(Error::Argument("peak neighbourhood must be positive".into()));
    }
    let n = fl.grid.theta_count();
    let w = neighbourhood_half_width(&fl.grid, delta_theta_deg);
    let per_frame = par::map_range(fl.frames, |t| {
        let row = fl.row(t);
        let mut found = Vec::new();
        'cells: for g in 0..n {
            let v = row[g];
            if v < eps_theta {
                continue;
            }
            for o in 1..=w {
                for h in [(g + o) % n, (g + n - o) % n] {
                    if h == g {
                        continue;
                    }
                    if row[h] > v || (row[h] == v && h < g) {
                        continue 'cells;
                    }
                }
            }
            found.push(Detection {
                frame: t,
                cell: g,
                angle_deg: fl.grid.angle_of(g),
                value: v,
            });
        }
        found
    });
    Ok(per_frame.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaCluster {
    pub center_deg: f64,
    pub support: usize,
    pub members: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimates {
    /// Sorted by support, descending.
    pub clusters: Vec<DoaCluster>,
    pub span_deg: f64,
    /// Frames holding at least one detection.
    pub active_frames: usize,
    /// Clusters removed by the minimum-support rule.
    pub dropped: usize,
}

impl DoaEstimates {
    pub fn empty(span_deg: f64) -> Self {
        Self {
            clusters: Vec::new(),
            span_deg,
            active_frames: 0,
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.center_deg).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cluster,center_deg,support\n");
        for (i, c) in self.clusters.iter().enumerate() {
            s.push_str(&format!("{i},{:.6},{}\n", c.center_deg, c.support));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub sigma_deg: f64,
    /// Clusters supported by fewer than this fraction of active frames are
    /// dropped. Zero disables the rule.
    pub min_support_frac: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            sigma_deg: 6.0,
            min_support_frac: 0.05,
        }
    }
}

pub fn circular_mean(angles: &[f64], span: f64) -> f64 {
    let scale = std::f64::consts::TAU / span;
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + (a * scale).sin(), c + (a * scale).cos()));
    let m = s.atan2(c) / scale;
    let m = m.rem_euclid(span);
    if m >= span - ANGLE_TOL {
        0.0
    } else {
        m
    }
}

/// Average-linkage dendrogram via the nearest-neighbour chain. Returns
/// `(a, b, height)` merges; merged clusters keep the slot of `a`.
fn average_linkage(weights: &[usize], mut dist: Vec<f64>) -> Vec<(usize, usize, f64)> {
    let n = weights.len();
    let mut size: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap_or(0));
        }
        let a = *chain.last().unwrap_or(&0);
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        let mut best = prev;
        let mut best_d = prev.map_or(f64::INFINITY, |p| dist[a * n + p]);
        for b in 0..n {
            if b != a && active[b] && dist[a * n + b] < best_d {
                best = Some(b);
                best_d = dist[a * n + b];
            }
        }
        let Some(b) = best else { break };
        if Some(b) == prev {
            chain.truncate(chain.len() - 2);
            let (x, y) = (a.min(b), a.max(b));
            merges.push((x, y, best_d));
            let (sx, sy) = (size[x], size[y]);
            for c in 0..n {
                if active[c] && c != x && c != y {
                    let d = (sx * dist[x * n + c] + sy * dist[y * n + c]) / (sx + sy);
                    dist[x * n + c] = d;
                    dist[c * n + x] = d;
                }
            }
            size[x] = sx + sy;
            active[y] = false;
            remaining -= 1;
        } else {
            chain.push(b);
        }
    }
    merges
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn build_cluster(members: Vec<Detection>, span: f64) -> DoaCluster {
    let angles: Vec<f64> = members.iter().map(|d| d.angle_deg).collect();
    DoaCluster {
        center_deg: circular_mean(&angles, span),
        support: members.len(),
        members,
    }
}

/// Hierarchical agglomerative clustering of detection angles with average
/// linkage on the circle, merging while the linkage is at most `2 sigma`.
pub fn cluster_doas(detections: &[Detection], cfg: &ClusterConfig, span_deg: f64) -> DoaEstimates {
    let threshold = 2.0 * cfg.sigma_deg;
    let mut active_frames: Vec<usize> = detections.iter().map(|d| d.frame).collect();
    active_frames.sort_unstable();
    active_frames.dedup();
    let active_frames = active_frames.len();
    if detections.is_empty() {
        return DoaEstimates::empty(span_deg);
    }

    // Detections sharing an angle start as one weighted cluster.
    let mut sorted: Vec<Detection> = detections.to_vec();
    sorted.sort_by(|a, b| a.angle_deg.total_cmp(&b.angle_deg).then(a.frame.cmp(&b.frame)));
    let mut groups: Vec<Vec<Detection>> = Vec::new();
    for d in sorted {
        match groups.last_mut() {
            Some(g) if g[0].angle_deg == d.angle_deg => g.push(d),
            _ => groups.push(vec![d]),
        }
    }
    let n = groups.len();
    let angle: Vec<f64> = groups.iter().map(|g| g[0].angle_deg).collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = wrapped_distance(angle[i], angle[j], span_deg);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let weights: Vec<usize> = groups.iter().map(Vec::len).collect();
    let merges = average_linkage(&weights, dist);

    // Average linkage is monotone, so cutting the dendrogram is the union
    // of all merges at or below the threshold.
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b, h) in &merges {
        if h <= threshold + ANGLE_TOL {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut by_root: Vec<Vec<Detection>> = vec![Vec::new(); n];
    for (i, g) in groups.into_iter().enumerate() {
        let r = find(&mut parent, i);
        by_root[r].extend(g);
    }
    let mut clusters: Vec<DoaCluster> = by_root
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| build_cluster(m, span_deg))
        .collect();

    // Centres of linkage-separated clusters can still fall within 2 sigma;
    // fold those together so centres stay pairwise separated.
    loop {
        let mut closest: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = wrapped_distance(clusters[i].center_deg, clusters[j].center_deg, span_deg);
                if d <= threshold && closest.is_none_or(|c| d < c.2) {
                    closest = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = closest else { break };
        let absorbed = clusters.remove(j);
        let mut members = std::mem::take(&mut clusters[i].members);
        members.extend(absorbed.members);
        clusters[i] = build_cluster(members, span_deg);
    }

    let min_support = cfg.min_support_frac * active_frames as f64;
    let before = clusters.len();
    clusters.retain(|c| c.support as f64 >= min_support);
    let dropped = before - clusters.len();
    for c in &mut clusters {
        c.members
            .sort_by(|a, b| a.frame.cmp(&b.frame).then(a.cell.cmp(&b.cell)));
    }
    clusters.sort_by(|a, b| b.support.cmp(&a.support).then(a.center_deg.total_cmp(&b.center_deg)));
    DoaEstimates {
        clusters,
        span_deg,
        active_frames,
        dropped,
    }
}

/// Slices the coding at the cell nearest to each cluster centre.
pub fn sample_masks(coding: &CodingTensor, doas: &DoaEstimates) -> Result<MaskSet> {
    let grid = coding.grid();
    let (frames, bins) = (coding.frames(), coding.bins());
    let mut values = Vec::with_capacity(doas.len() * frames * bins);
    for c in &doas.clusters {
        if !(0.0..grid.span_deg()).contains(&c.center_deg) {
            return Err(Error::Argument(format!(
                "direction {} outside [0, {})",
                c.center_deg,
                grid.span_deg()
            )));
        }
        let g = grid.index_of(c.center_deg);
        for t in 0..frames {
            for k in 0..bins {
                values.push(coding.get(t, k, g).clamp(0.0, 1.0));
            }
        }
    }
    MaskSet::new(doas.len(), frames, bins, values)
}

/// Full decode path for a single threshold.
pub fn decode_doas(
    coding: &CodingTensor,
    eps_theta: f64,
    delta_theta_deg: f64,
    cluster: &ClusterConfig,
) -> Result<DoaEstimates> {
    let fl = freq_average(coding);
    let det = peak_search(&fl, eps_theta, delta_theta_deg)?;
    Ok(cluster_doas(&det, cluster, coding.grid().span_deg()))
}

/// A validation scene reduced to its frame likelihood, which is all the
/// threshold sweep needs.
#[derive(Debug, Clone)]
pub struct ValidationScene {
    pub likelihood: FrameLikelihood,
    pub truth: DoaSet,
}

impl ValidationScene {
    pub fn from_coding(coding: &CodingTensor, truth: DoaSet) -> Self {
        Self {
            likelihood: freq_average(coding),
            truth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub eps_theta: f64,
    pub matches: usize,
    pub estimates: usize,
    pub truths: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub best_eps_theta: f64,
    pub best_f1: f64,
    pub rows: Vec<CalibrationRow>,
}

impl Calibration {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps_theta,matches,estimates,truths,precision,recall,f1\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:.6},{},{},{},{:.6},{:.6},{:.6}\n",
                r.eps_theta, r.matches, r.estimates, r.truths, r.precision, r.recall, r.f1
            ));
        }
        s
    }
}

/// Exhaustive threshold sweep scored by pooled precision, recall and F1
/// over the validation scenes. Ties go to the lower threshold.
pub fn calibrate_threshold(
    scenes: &[ValidationScene],
    candidates: &[f64],
    delta_theta_deg: f64,
    cluster: &ClusterConfig,
    tolerance_deg: f64,
) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::Argument("no threshold candidates".into()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &eps in candidates {
        let per_scene = par::map_range(scenes.len(), |i| -> Result<MatchCounts> {
            let fl = &scenes[i].likelihood;
            let det = peak_search(fl, eps, delta_theta_deg)?;
            let est = cluster_doas(&det, cluster, fl.grid().span_deg());
            Ok(match_counts(&est.centers(), &scenes[i].truth, tolerance_deg))
        });
        let mut pooled = MatchCounts::default();
        for c in per_scene {
            pooled += c?;
        }
        let pr = pooled.score();
        rows.push(CalibrationRow {
            eps_theta: eps,
            matches: pooled.matches,
            estimates: pooled.estimates,
            truths: pooled.truths,
            precision: pr.precision,
            recall: pr.recall,
            f1: pr.f1,
        });
    }
    let mut best = rows[0];
    for r in &rows[1..] {
        if r.f1 > best.f1 || (r.f1 == best.f1 && r.eps_theta < best.eps_theta) {
            best = *r;
        }
    }
    Ok(Calibration {
        best_eps_theta: best.eps_theta,
        best_f1: best.f1,
        rows,
    })
}
