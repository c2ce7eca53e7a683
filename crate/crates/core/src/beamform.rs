//! MVDR separation with mask-weighted interference covariances.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coding::MaskSet;
use crate::stft::Spectrogram;
use crate::{par, Error, Result};

const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformConfig {
    /// Relative diagonal loading: `loading * trace(R) / C` is added to the
    /// diagonal, or `loading` itself when the trace vanishes.
    pub loading: f64,
    /// Estimate covariances and filter per block of this many frames.
    /// `None` uses the whole utterance.
    pub block_frames: Option<usize>,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            loading: 1e-6,
            block_frames: None,
        }
    }
}

/// Per-speaker, per-bin `C x C` Hermitian matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    speakers: usize,
    bins: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl CovarianceSet {
    pub fn speakers(&self) -> usize {
        self.speakers
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Row-major `C x C` matrix for speaker `i`, bin `k`.
    pub fn matrix(&self, i: usize, k: usize) -> &[Complex64] {
        let n = self.channels * self.channels;
        let o = (i * self.bins + k) * n;
        &self.data[o..o + n]
    }

    pub fn scaled(&self, s: f64) -> CovarianceSet {
        CovarianceSet {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

fn load_diagonal(m: &mut [Complex64], c: usize, loading: f64) {
    let trace: f64 = (0..c).map(|r| m[r * c + r].re).sum();
    let eps = if trace > 0.0 {
        loading * trace / c as f64
    } else {
        loading
    };
    for r in 0..c {
        m[r * c + r] += eps;
    }
}

/// Interference covariance `R_k = (1/T) sum_t (1 - M_tk) Y_tk Y_tk^H` over
/// `frames`, plus diagonal loading.
fn covariance_over(
    mixture: &Spectrogram,
    masks: &MaskSet,
    frames: std::ops::Range<usize>,
    loading: f64,
) -> CovarianceSet {
    let (c, bins, speakers) = (mixture.channels(), mixture.bins(), masks.speakers());
    let n_frames = frames.len().max(1) as f64;
    let blocks = par::map_range(speakers * bins, |ik| {
        let (i, k) = (ik / bins, ik % bins);
        let mut m = vec![Complex64::new(0.0, 0.0); c * c];
        for t in frames.clone() {
            let w = 1.0 - masks.get(i, t, k);
            if w == 0.0 {
                continue;
            }
            let y = mixture.channel_vector(t, k);
            for r in 0..c {
                for s in 0..c {
                    m[r * c + s] += w * y[r] * y[s].conj();
                }
            }
        }
        for v in &mut m {
            *v /= n_frames;
        }
        load_diagonal(&mut m, c, loading);
        m
    });
    CovarianceSet {
        speakers,
        bins,
        channels: c,
        data: blocks.concat(),
    }
}

fn check_masks(mixture: &Spectrogram, masks: &MaskSet) -> Result<()> {
    if masks.frames() != mixture.frames() || masks.bins() != mixture.bins() {
        return Err(Error::Shape(format!(
            "masks {}x{} vs mixture {}x{}",
            masks.frames(),
            masks.bins(),
            mixture.frames(),
            mixture.bins()
        )));
    }
    if mixture.frames() == 0 {
        return Err(Error::Shape("mixture has no frames".into()));
    }
    Ok(())
}

pub fn interference_covariance(mixture: &Spectrogram, masks: &MaskSet, loading: f64) -> Result<CovarianceSet> {
    check_masks(mixture, masks)?;
    Ok(covariance_over(mixture, masks, 0..mixture.frames(), loading))
}

/// Solves `R x = b` for Hermitian positive definite `R` by Cholesky
/// factorisation, then checks the relative residual.
pub fn hermitian_solve(r: &[Complex64], b: &[Complex64]) -> Result<Vec<Complex64>> {
    let c = b.len();
    if r.len() != c * c {
        return Err(Error::Shape(format!("{} matrix entries for dimension {c}", r.len())));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut l = vec![zero; c * c];
    for j in 0..c {
        let mut d = r[j * c + j].re;
        for p in 0..j {
            d -= l[j * c + p].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numeric("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[j * c + j] = Complex64::new(d, 0.0);
        for i in j + 1..c {
            let mut s = r[i * c + j];
            for p in 0..j {
                s -= l[i * c + p] * l[j * c + p].conj();
            }
            l[i * c + j] = s / d;
        }
    }
    let mut y = vec![zero; c];
    for i in 0..c {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * c + p] * y[p];
        }
        y[i] = s / l[i * c + i];
    }
    let mut x = vec![zero; c];
    for i in (0..c).rev() {
        let mut s = y[i];
        for p in i + 1..c {
            s -= l[p * c + i].conj() * x[p];
        }
        x[i] = s / l[i * c + i];
    }
    let b_norm: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let res: f64 = (0..c)
        .map(|i| {
            let rx: Complex64 = (0..c).map(|j| r[i * c + j] * x[j]).sum();
            (rx - b[i]).norm_sqr()
        })
        .sum::<f64>()
        .sqrt();
    if !(res <= RESIDUAL_TOL * b_norm.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numeric(format!("solve residual {res:e} too large")));
    }
    Ok(x)
}

/// MVDR weights `w = R^-1 d / (d^H R^-1 d)`.
pub fn mvdr_weights(r: &[Complex64], d: &[Complex64]) -> Result<Vec<Complex64>> {
    let x = hermitian_solve(r, d)?;
    let denom: Complex64 = d.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
    if !(denom.re > 0.0) || !denom.re.is_finite() {
        return Err(Error::Numeric("degenerate MVDR normalisation".into()));
    }
    Ok(x.iter().map(|v| v / denom.re).collect())
}

/// `w^H y`.
pub fn apply_weights(w: &[Complex64], y: &[Complex64]) -> Complex64 {
    w.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn check_steering(mixture: &Spectrogram, steering: &[Vec<Vec<Complex64>>], speakers: usize) -> Result<()> {
    if steering.len() != speakers {
        return Err(Error::Shape(format!(
            "{} steering sets for {speakers} speakers",
            steering.len()
        )));
    }
    for s in steering {
        if s.len() != mixture.bins() || s.iter().any(|d| d.len() != mixture.channels()) {
            return Err(Error::Shape("steering vectors do not match the mixture".into()));
        }
    }
    Ok(())
}

fn filter_frames(
    mixture: &Spectrogram,
    steering: &[Vec<Vec<Complex64>>],
    cov: &CovarianceSet,
    frames: std::ops::Range<usize>,
    out: &mut [Spectrogram],
) -> Result<()> {
    let bins = mixture.bins();
    let weights = par::map_range(cov.speakers * bins, |ik| {
        let (i, k) = (ik / bins, ik % bins);
        mvdr_weights(cov.matrix(i, k), &steering[i][k])
            .map_err(|e| Error::Numeric(format!("speaker {i}, bin {k}: {e}")))
    });
    let weights = weights.into_iter().collect::<Result<Vec<_>>>()?;
    for (i, spec) in out.iter_mut().enumerate() {
        for t in frames.clone() {
            for k in 0..bins {
                let y = mixture.channel_vector(t, k);
                spec.set(0, t, k, apply_weights(&weights[i * bins + k], &y));
            }
        }
    }
    Ok(())
}

/// Per-speaker MVDR outputs `d^H R^-1 Y / (d^H R^-1 d)`.
pub fn mvdr(mixture: &Spectrogram, steering: &[Vec<Vec<Complex64>>], cov: &CovarianceSet) -> Result<Vec<Spectrogram>> {
    check_steering(mixture, steering, cov.speakers)?;
    if cov.bins != mixture.bins() || cov.channels != mixture.channels() {
        return Err(Error::Shape("covariances do not match the mixture".into()));
    }
    let mut out = vec![Spectrogram::zeros(1, mixture.frames(), *mixture.config(), mixture.signal_len()); cov.speakers];
    filter_frames(mixture, steering, cov, 0..mixture.frames(), &mut out)?;
    Ok(out)
}

/// Covariance estimation and MVDR filtering in one pass, optionally per
/// block of frames.
pub fn separate(
    mixture: &Spectrogram,
    steering: &[Vec<Vec<Complex64>>],
    masks: &MaskSet,
    cfg: &BeamformConfig,
) -> Result<Vec<Spectrogram>> {
    check_masks(mixture, masks)?;
    check_steering(mixture, steering, masks.speakers())?;
    let frames = mixture.frames();
    let block = match cfg.block_frames {
        Some(0) => return Err(Error::Argument("block length must be positive".into())),
        Some(b) => b,
        None => frames,
    };
    let mut out = vec![Spectrogram::zeros(1, frames, *mixture.config(), mixture.signal_len()); masks.speakers()];
    let mut start = 0;
    while start < frames {
        let end = (start + block).min(frames);
        let cov = covariance_over(mixture, masks, start..end, cfg.loading);
        filter_frames(mixture, steering, &cov, start..end, &mut out)?;
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    /// `A A^H + loading`, Hermitian positive definite.
    pub(crate) fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        let a = random_vec(rng, n * n);
        let mut m = vec![c(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = (0..n).map(|p| a[i * n + p] * a[j * n + p].conj()).sum();
            }
        }
        load_diagonal(&mut m, n, 1e-6);
        m
    }

    fn single_bin_mixture(frames: &[Vec<Complex64>]) -> Spectrogram {
        let cfg = StftConfig::new(2, 1, 16_000).unwrap();
        let ch = frames[0].len();
        let mut s = Spectrogram::zeros(ch, frames.len(), cfg, 0);
        for (t, y) in frames.iter().enumerate() {
            for (ci, v) in y.iter().enumerate() {
                s.set(ci, t, 0, *v);
                s.set(ci, t, 1, *v);
            }
        }
        s
    }

    #[test]
    fn covariance_cases() {
        let mix = single_bin_mixture(&[vec![c(1.0, 0.0), c(0.0, 1.0)]]);
        let zero = MaskSet::zeros(1, 1, 2);
        let r = interference_covariance(&mix, &zero, 0.0).unwrap();
        assert_eq!(r.matrix(0, 0), &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let loaded = interference_covariance(&mix, &zero, 1e-6).unwrap();
        assert!((loaded.matrix(0, 0)[0] - c(1.0 + 1e-6, 0.0)).norm() < 1e-15);
        let ones = MaskSet::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let r = interference_covariance(&mix, &ones, 1e-6).unwrap();
        assert_eq!(r.matrix(0, 0), &[c(1e-6, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1e-6, 0.0)]);
        assert!(interference_covariance(&mix, &MaskSet::zeros(1, 2, 2), 1e-6).is_err());
    }

    #[test]
    fn covariance_is_hermitian_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<Vec<Complex64>> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
        let mix = single_bin_mixture(&frames);
        let masks = MaskSet::new(1, 3, 2, (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let r = interference_covariance(&mix, &masks, 1e-6).unwrap();
        let m = r.matrix(0, 0);
        for i in 0..4 {
            for j in 0..4 {
                assert!((m[i * 4 + j] - m[j * 4 + i].conj()).norm() <= 1e-10);
            }
        }
        for _ in 0..50 {
            let v = random_vec(&mut rng, 4);
            let q: Complex64 = (0..4)
                .map(|i| v[i].conj() * (0..4).map(|j| m[i * 4 + j] * v[j]).sum::<Complex64>())
                .sum();
            assert!(q.re >= -1e-10 && q.im.abs() < 1e-10);
        }
        assert!(hermitian_solve(m, &random_vec(&mut rng, 4)).is_ok());
    }

    #[test]
    fn solve_residual_and_failures() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let r = random_hpd(&mut rng, 4);
            let b = random_vec(&mut rng, 4);
            let x = hermitian_solve(&r, &b).unwrap();
            for i in 0..4 {
                let rx: Complex64 = (0..4).map(|j| r[i * 4 + j] * x[j]).sum();
                assert!((rx - b[i]).norm() < 1e-9);
            }
        }
        let singular = vec![c(0.0, 0.0); 4];
        assert!(matches!(
            hermitian_solve(&singular, &[c(1.0, 0.0); 2]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn identity_reduces_to_matched_filter() {
        let id = vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        let d = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let w = mvdr_weights(&id, &d).unwrap();
        assert_eq!(w, vec![c(0.5, 0.0), c(0.0, 0.5)]);
        assert_eq!(apply_weights(&w, &d), c(1.0, 0.0));
    }

    #[test]
    fn distortionless_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let r = random_hpd(&mut rng, 4);
            let d = random_vec(&mut rng, 4);
            let w = mvdr_weights(&r, &d).unwrap();
            assert!((apply_weights(&w, &d) - c(1.0, 0.0)).norm() <= 1e-8);
            let r10: Vec<Complex64> = r.iter().map(|v| v * 10.0).collect();
            let w10 = mvdr_weights(&r10, &d).unwrap();
            for (a, b) in w.iter().zip(&w10) {
                assert!((a - b).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn singular_bin_is_named() {
        let mix = single_bin_mixture(&[vec![c(1.0, 0.0), c(0.0, 1.0)]]);
        let ones = MaskSet::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let r = interference_covariance(&mix, &ones, 0.0).unwrap();
        let steer = vec![vec![vec![c(1.0, 0.0); 2]; 2]];
        let err = mvdr(&mix, &steer, &r).unwrap_err().to_string();
        assert!(err.contains("speaker 0, bin 0"), "{err}");
    }

    #[test]
    fn blockwise_equals_full_for_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<Vec<Complex64>> = (0..6).map(|_| random_vec(&mut rng, 3)).collect();
        let mix = single_bin_mixture(&frames);
        let masks = MaskSet::new(2, 6, 2, (0..24).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let steer: Vec<Vec<Vec<Complex64>>> = (0..2)
            .map(|_| (0..2).map(|_| random_vec(&mut rng, 3)).collect())
            .collect();
        let full = separate(&mix, &steer, &masks, &BeamformConfig::default()).unwrap();
        let cov = interference_covariance(&mix, &masks, 1e-6).unwrap();
        assert_eq!(full, mvdr(&mix, &steer, &cov).unwrap());
        let one_block = BeamformConfig {
            block_frames: Some(6),
            ..BeamformConfig::default()
        };
        assert_eq!(separate(&mix, &steer, &masks, &one_block).unwrap(), full);
        let blocks = BeamformConfig {
            block_frames: Some(2),
            ..BeamformConfig::default()
        };
        assert_ne!(separate(&mix, &steer, &masks, &blocks).unwrap(), full);
        assert!(separate(
            &mix,
            &steer,
            &masks,
            &BeamformConfig {
                block_frames: Some(0),
                ..blocks
            }
        )
        .is_err());
    }
}
