//! Localisation and separation scores: wrapped MAE with a known speaker
//! count, precision/recall/F1 with an unknown count, SI-SDR and its
//! improvement under permutation alignment.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::coding::{wrapped_distance, DoaSet};
use crate::decode::DoaEstimates;
use crate::signal::TimeSignal;
use crate::{Error, Result};

pub const SI_SDR_CAP_DB: f64 = 100.0;
/// Largest number of injective assignments the exhaustive search visits
/// (8 references against 8 estimates).
pub const MAX_ASSIGNMENTS: u64 = 40_320;

/// Injective maps between the smaller and the larger side.
fn assignment_count(a: usize, b: usize) -> u64 {
    let (hi, lo) = (a.max(b) as u64, a.min(b) as u64);
    (0..lo)
        .try_fold(1u64, |acc, i| acc.checked_mul(hi - i))
        .unwrap_or(u64::MAX)
}

/// Scale-invariant SDR in dB, clamped to `+-100`.
pub fn si_sdr_samples(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(ref_energy > 0.0) {
        return Err(Error::DegenerateInput("silent reference".into()));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(a, b)| a * b).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let s = alpha * r;
        target += s * s;
        noise += (s - e) * (s - e);
    }
    let db = if target == 0.0 {
        -SI_SDR_CAP_DB
    } else if noise == 0.0 {
        SI_SDR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

fn mono(s: &TimeSignal) -> Result<&[f64]> {
    if s.channel_count() != 1 {
        return Err(Error::Shape(format!(
            "expected mono, got {} channels",
            s.channel_count()
        )));
    }
    Ok(s.channel(0))
}

pub fn si_sdr(estimate: &TimeSignal, reference: &TimeSignal) -> Result<f64> {
    si_sdr_samples(mono(estimate)?, mono(reference)?)
}

/// Exhaustive injective assignment of rows to columns that matches
/// `min(rows, cols)` pairs and maximises the summed score. Earlier
/// assignments in lexicographic order win ties.
pub fn best_assignment(rows: usize, cols: usize, score: impl Fn(usize, usize) -> f64) -> (Vec<Option<usize>>, f64) {
    #[allow(clippy::too_many_arguments)]
    fn go(
        r: usize,
        rows: usize,
        cols: usize,
        need: usize,
        used: &mut [bool],
        cur: &mut Vec<Option<usize>>,
        sum: f64,
        score: &dyn Fn(usize, usize) -> f64,
        best: &mut (Vec<Option<usize>>, f64),
    ) {
        if r == rows {
            if need == 0 && sum > best.1 {
                *best = (cur.clone(), sum);
            }
            return;
        }
        if need > 0 {
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    cur.push(Some(c));
                    go(r + 1, rows, cols, need - 1, used, cur, sum + score(r, c), score, best);
                    cur.pop();
                    used[c] = false;
                }
            }
        }
        if rows - r > need {
            cur.push(None);
            go(r + 1, rows, cols, need, used, cur, sum, score, best);
            cur.pop();
        }
    }
    let mut best = (vec![None; rows], f64::NEG_INFINITY);
    let mut used = vec![false; cols];
    go(
        0,
        rows,
        cols,
        rows.min(cols),
        &mut used,
        &mut Vec::with_capacity(rows),
        0.0,
        &score,
        &mut best,
    );
    if best.1 == f64::NEG_INFINITY {
        best.1 = 0.0;
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// For each reference, the index of its assigned estimate.
    pub assignment: Vec<Option<usize>>,
    /// Per-reference SI-SDR; unmatched references take the lower cap.
    pub si_sdr_db: Vec<f64>,
    pub mean_db: f64,
}

pub fn permute_align(estimates: &[TimeSignal], references: &[TimeSignal]) -> Result<Alignment> {
    if references.is_empty() {
        return Err(Error::Argument("no reference signals".into()));
    }
    let count = assignment_count(estimates.len(), references.len());
    if count > MAX_ASSIGNMENTS {
        return Err(Error::Argument(format!(
            "aligning {} estimates to {} references needs {count} assignments, limit is {MAX_ASSIGNMENTS}",
            estimates.len(),
            references.len()
        )));
    }
    let mut table = vec![0.0; references.len() * estimates.len()];
    for (j, r) in references.iter().enumerate() {
        for (e, s) in estimates.iter().enumerate() {
            table[j * estimates.len() + e] = si_sdr(s, r)?;
        }
    }
    Ok(align_scores(references.len(), estimates.len(), &table))
}

/// Alignment from a precomputed `references x estimates` SI-SDR table.
pub fn align_scores(references: usize, estimates: usize, table: &[f64]) -> Alignment {
    let (assignment, _) = best_assignment(references, estimates, |j, e| table[j * estimates + e]);
    let si_sdr_db: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(j, a)| a.map_or(-SI_SDR_CAP_DB, |e| table[j * estimates + e]))
        .collect();
    let mean_db = si_sdr_db.iter().sum::<f64>() / si_sdr_db.len().max(1) as f64;
    Alignment {
        assignment,
        si_sdr_db,
        mean_db,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeResult {
    /// `None` when no cluster is available.
    pub mae_deg: Option<f64>,
    pub pairs: usize,
    /// Fewer clusters than speakers.
    pub insufficient: bool,
}

/// Minimum mean wrapped error between the true directions and the
/// `|truth|` best-supported clusters.
pub fn doa_mae_known_count(estimates: &DoaEstimates, truth: &DoaSet) -> MaeResult {
    let centers: Vec<f64> = estimates
        .clusters
        .iter()
        .take(truth.len())
        .map(|c| c.center_deg)
        .collect();
    doa_mae(&centers, truth)
}

pub fn doa_mae(centers: &[f64], truth: &DoaSet) -> MaeResult {
    let span = truth.span_deg();
    let az = truth.azimuths();
    let pairs = az.len().min(centers.len());
    let insufficient = centers.len() < az.len();
    if pairs == 0 {
        return MaeResult {
            mae_deg: if az.is_empty() { Some(0.0) } else { None },
            pairs,
            insufficient,
        };
    }
    let (_, neg) = best_assignment(az.len(), centers.len(), |t, e| {
        -wrapped_distance(az[t], centers[e], span)
    });
    MaeResult {
        mae_deg: Some(-neg / pairs as f64),
        pairs,
        insufficient,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matches: usize,
    pub estimates: usize,
    pub truths: usize,
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.matches += o.matches;
        self.estimates += o.estimates;
        self.truths += o.truths;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No estimates although speakers were present.
    pub empty_estimates: bool,
}

impl MatchCounts {
    pub fn score(&self) -> PrecisionRecall {
        let (m, e, t) = (self.matches as f64, self.estimates, self.truths);
        let precision = match (e, t) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => m / e as f64,
        };
        let recall = if t == 0 { 1.0 } else { m / t as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrecisionRecall {
            precision,
            recall,
            f1,
            empty_estimates: e == 0 && t > 0,
        }
    }
}

/// Greedy one-to-one matching by ascending wrapped distance, accepting
/// pairs within `tolerance_deg`.
pub fn match_counts(estimates: &[f64], truth: &DoaSet, tolerance_deg: f64) -> MatchCounts {
    let span = truth.span_deg();
    let az = truth.azimuths();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (e, &a) in estimates.iter().enumerate() {
        for (t, &b) in az.iter().enumerate() {
            let d = wrapped_distance(a, b, span);
            if d <= tolerance_deg {
                pairs.push((d, e, t));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_e = vec![false; estimates.len()];
    let mut used_t = vec![false; az.len()];
    let mut matches = 0;
    for (_, e, t) in pairs {
        if !used_e[e] && !used_t[t] {
            used_e[e] = true;
            used_t[t] = true;
            matches += 1;
        }
    }
    MatchCounts {
        matches,
        estimates: estimates.len(),
        truths: az.len(),
    }
}

pub fn doa_precision_recall(estimates: &DoaEstimates, truth: &DoaSet, tolerance_deg: f64) -> PrecisionRecall {
    match_counts(&estimates.centers(), truth, tolerance_deg).score()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSiSdr {
    pub delta_db: f64,
    pub per_speaker_delta_db: Vec<f64>,
    pub input_db: Vec<f64>,
    pub alignment: Alignment,
}

/// Mean over speakers of aligned output SI-SDR minus the SI-SDR of the
/// mixture reference channel against that speaker.
pub fn delta_si_sdr(
    separated: &[TimeSignal],
    mixture_ref: &TimeSignal,
    references: &[TimeSignal],
) -> Result<DeltaSiSdr> {
    let alignment = permute_align(separated, references)?;
    let input_db = references
        .iter()
        .map(|r| si_sdr(mixture_ref, r))
        .collect::<Result<Vec<_>>>()?;
    let per: Vec<f64> = alignment.si_sdr_db.iter().zip(&input_db).map(|(o, i)| o - i).collect();
    Ok(DeltaSiSdr {
        delta_db: per.iter().sum::<f64>() / per.len() as f64,
        per_speaker_delta_db: per,
        input_db,
        alignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_id: String,
    pub doa_mae_deg: Option<f64>,
    pub mae_insufficient: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub empty_estimates: bool,
    pub si_sdr_db: Vec<f64>,
    pub input_si_sdr_db: Vec<f64>,
    pub delta_si_sdr_db: Option<f64>,
    pub permutation: Vec<Option<usize>>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "scene_id,doa_mae_deg,mae_insufficient,precision,recall,f1,empty_estimates,delta_si_sdr_db,si_sdr_db,input_si_sdr_db,permutation";

    pub fn csv_row(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(";");
        let perm = self
            .permutation
            .iter()
            .map(|p| p.map_or("-".to_string(), |e| e.to_string()))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{},{},{},{},{}",
            self.scene_id,
            self.doa_mae_deg.map_or(String::new(), |v| format!("{v:.6}")),
            self.mae_insufficient,
            self.precision,
            self.recall,
            self.f1,
            self.empty_estimates,
            self.delta_si_sdr_db.map_or(String::new(), |v| format!("{v:.4}")),
            list(&self.si_sdr_db),
            list(&self.input_si_sdr_db),
            perm
        )
    }

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::DoaCluster;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(v: Vec<f64>) -> TimeSignal {
        TimeSignal::mono(v, 16_000).unwrap()
    }

    fn est(centers: &[f64]) -> DoaEstimates {
        DoaEstimates {
            clusters: centers
                .iter()
                .enumerate()
                .map(|(i, &c)| DoaCluster {
                    center_deg: c,
                    support: 100 - i,
                    members: vec![],
                })
                .collect(),
            span_deg: 360.0,
            active_frames: 100,
            dropped: 0,
        }
    }

    fn truth(v: &[f64]) -> DoaSet {
        DoaSet::new(v.to_vec(), 360.0).unwrap()
    }

    #[test]
    fn si_sdr_cases() {
        let s: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        assert!(si_sdr_samples(&s.iter().map(|v| 3.7 * v).collect::<Vec<_>>(), &s).unwrap() >= 100.0);
        let o: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r: Vec<f64> = (0..64).map(|i| if i < 32 { 1.0 } else { 0.0 }).collect();
        let orth: Vec<f64> = (0..64).map(|i| if i < 32 { 0.0 } else { o[i] }).collect();
        assert!(si_sdr_samples(&orth, &r).unwrap() <= -100.0);
        // Residual orthogonal to the reference with a tenth of its energy.
        let e_s: f64 = r.iter().map(|v| v * v).sum();
        let n: Vec<f64> = (0..64).map(|i| if i < 32 { 0.0 } else { o[i] }).collect();
        let e_n: f64 = n.iter().map(|v| v * v).sum();
        let g = (e_s / (10.0 * e_n)).sqrt();
        let mix: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        assert!((si_sdr_samples(&mix, &r).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(
            si_sdr_samples(&s, &vec![0.0; 64]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(si_sdr_samples(&s[..10], &s).is_err());
    }

    #[test]
    fn si_sdr_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = r.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let base = si_sdr_samples(&e, &r).unwrap();
        for a in [0.25, 2.0, 4.0, 1024.0] {
            assert_eq!(
                si_sdr_samples(&e.iter().map(|v| a * v).collect::<Vec<_>>(), &r).unwrap(),
                base
            );
        }
    }

    #[test]
    fn alignment_cases() {
        let a = sig((0..50).map(|i| (i as f64 * 0.2).sin()).collect());
        let b = sig((0..50).map(|i| (i as f64 * 0.7).cos()).collect());
        let al = permute_align(&[b.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap();
        assert_eq!(al.assignment, vec![Some(1), Some(0)]);
        assert!(al.si_sdr_db.iter().all(|&v| v == 100.0));
        let one = permute_align(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.assignment, vec![Some(0)]);
        let short = permute_align(std::slice::from_ref(&b), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(short.assignment, vec![None, Some(0)]);
        assert_eq!(short.si_sdr_db[0], -100.0);
        assert!(permute_align(&[a], &[]).is_err());
    }

    #[test]
    fn assignment_matches_factorial_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [3, 4] {
            for _ in 0..20 {
                let table: Vec<f64> = (0..n * n).map(|_| rng.random_range(-20.0..30.0)).collect();
                let al = align_scores(n, n, &table);
                // Heap's algorithm over all permutations.
                let mut p: Vec<usize> = (0..n).collect();
                let mut c = vec![0; n];
                let eval = |p: &[usize]| (0..n).map(|j| table[j * n + p[j]]).sum::<f64>() / n as f64;
                let mut best = eval(&p);
                let mut i = 0;
                while i < n {
                    if c[i] < i {
                        if i % 2 == 0 {
                            p.swap(0, i);
                        } else {
                            p.swap(c[i], i);
                        }
                        best = best.max(eval(&p));
                        c[i] += 1;
                        i = 0;
                    } else {
                        c[i] = 0;
                        i += 1;
                    }
                }
                assert!((al.mean_db - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_limit_counts_assignments() {
        assert_eq!(assignment_count(8, 8), MAX_ASSIGNMENTS);
        assert_eq!(assignment_count(2, 12), 132);
        assert_eq!(assignment_count(12, 2), 132);
        assert_eq!(assignment_count(40, 40), u64::MAX);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut noise = |n: usize| sig((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let refs = vec![noise(400), noise(400)];
        let mut ests: Vec<TimeSignal> = (0..10).map(|_| noise(400)).collect();
        ests[7] = refs[0].clone();
        let al = permute_align(&ests, &refs).unwrap();
        assert_eq!(al.assignment[0], Some(7));
        let nine: Vec<TimeSignal> = (0..9).map(|_| noise(64)).collect();
        assert!(permute_align(&nine, &nine).is_err());
    }

    #[test]
    fn mae_cases() {
        assert_eq!(
            doa_mae_known_count(&est(&[50.0, 120.0]), &truth(&[50.0, 120.0])).mae_deg,
            Some(0.0)
        );
        let m = doa_mae_known_count(&est(&[121.0, 49.0]), &truth(&[50.0, 120.0]));
        assert!((m.mae_deg.unwrap() - 1.0).abs() < 1e-12);
        assert!((doa_mae_known_count(&est(&[1.0]), &truth(&[359.0])).mae_deg.unwrap() - 2.0).abs() < 1e-12);
        let few = doa_mae_known_count(&est(&[52.0]), &truth(&[50.0, 120.0]));
        assert!(few.insufficient);
        assert_eq!(few.pairs, 1);
        assert!((few.mae_deg.unwrap() - 2.0).abs() < 1e-12);
        // Only the best-supported |truth| clusters count.
        let extra = doa_mae_known_count(&est(&[50.0, 300.0]), &truth(&[50.0]));
        assert_eq!(extra.mae_deg, Some(0.0));
        assert_eq!(doa_mae_known_count(&est(&[]), &truth(&[50.0])).mae_deg, None);
    }

    #[test]
    fn mae_symmetric_under_permutation() {
        let t = truth(&[10.0, 95.0, 200.0]);
        let e = [205.0, 8.0, 90.0];
        let base = doa_mae(&e, &t).mae_deg.unwrap();
        assert!((doa_mae(&[e[2], e[0], e[1]], &t).mae_deg.unwrap() - base).abs() < 1e-12);
        assert!((doa_mae(&e, &t.permuted(&[2, 0, 1])).mae_deg.unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn precision_recall_cases() {
        let perfect = doa_precision_recall(&est(&[50.0, 120.0]), &truth(&[50.0, 120.0]), 10.0);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let none = doa_precision_recall(&est(&[]), &truth(&[50.0]), 10.0);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(none.empty_estimates);
        let half = doa_precision_recall(&est(&[52.0, 200.0]), &truth(&[50.0, 120.0]), 10.0);
        assert_eq!((half.precision, half.recall), (0.5, 0.5));
        let both_empty = doa_precision_recall(&est(&[]), &truth(&[]), 10.0);
        assert_eq!((both_empty.precision, both_empty.recall), (1.0, 1.0));
        // A far spurious estimate lowers precision but not recall.
        let more = doa_precision_recall(&est(&[50.0, 120.0, 300.0]), &truth(&[50.0, 120.0]), 10.0);
        assert!(more.precision < 1.0 && more.recall == 1.0);
    }

    #[test]
    fn greedy_matching_takes_closest_first() {
        let c = match_counts(&[55.0, 46.0], &truth(&[50.0]), 10.0);
        assert_eq!(c.matches, 1);
        let c = match_counts(&[0.5], &truth(&[359.0]), 2.0);
        assert_eq!(c.matches, 1);
    }

    #[test]
    fn delta_cases() {
        let a = sig((0..80).map(|i| (i as f64 * 0.2).sin()).collect());
        let b = sig((0..80).map(|i| (i as f64 * 0.9).cos()).collect());
        let mix = sig(a.channel(0).iter().zip(b.channel(0)).map(|(x, y)| x + y).collect());
        let perfect = delta_si_sdr(&[a.clone(), b.clone()], &mix, &[a.clone(), b.clone()]).unwrap();
        assert!(perfect.delta_db > 90.0);
        let noop = delta_si_sdr(&[mix.clone(), mix.clone()], &mix, &[a, b]).unwrap();
        assert!(noop.delta_db.abs() < 1e-12);
    }

    #[test]
    fn report_csv_columns() {
        let r = EvalReport {
            scene_id: "s0".into(),
            doa_mae_deg: Some(0.25),
            mae_insufficient: false,
            precision: 1.0,
            recall: 0.5,
            f1: 2.0 / 3.0,
            empty_estimates: false,
            si_sdr_db: vec![10.0, 12.0],
            input_si_sdr_db: vec![0.0, 0.0],
            delta_si_sdr_db: Some(11.0),
            permutation: vec![Some(1), None],
        };
        let csv = EvalReport::to_csv(&[r]);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), row.len());
        assert_eq!(row[10], "1;-");
    }
}
