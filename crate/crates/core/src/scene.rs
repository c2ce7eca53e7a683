//! Synthetic multichannel scenes: array geometry, far-field steering vectors,
//! free-field and shoebox (image-source) rendering, and speech-like test
//! sources.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coding::{wrapped_distance, DoaSet};
use crate::signal::{peak_normalize, TimeSignal};
use crate::stft::StftConfig;
use crate::{par, Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_MIN_GAP_DEG: f64 = 15.0;
/// Half-width of the windowed-sinc fractional delay; the kernel has
/// `2 * FD_HALF` taps.
const FD_HALF: i64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mic_positions: Vec<[f64; 3]>,
    reference_mic: usize,
    speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, reference_mic: usize, speed_of_sound: f64) -> Result<Self> {
        if mic_positions.len() < 2 {
            return Err(Error::Spec("an array needs at least two microphones".into()));
        }
        if reference_mic >= mic_positions.len() {
            return Err(Error::Index {
                index: reference_mic,
                limit: mic_positions.len(),
            });
        }
        if !(speed_of_sound > 0.0) {
            return Err(Error::Spec("speed of sound must be positive".into()));
        }
        for (i, a) in mic_positions.iter().enumerate() {
            for b in &mic_positions[i + 1..] {
                if dist(a, b) < 1e-9 {
                    return Err(Error::Spec("microphone positions must be distinct".into()));
                }
            }
        }
        Ok(Self {
            mic_positions,
            reference_mic,
            speed_of_sound,
        })
    }

    /// `count` microphones on the x axis, centred on the origin.
    pub fn linear(count: usize, spacing_m: f64) -> Result<Self> {
        let mid = (count as f64 - 1.0) / 2.0;
        let pos = (0..count).map(|c| [(c as f64 - mid) * spacing_m, 0.0, 0.0]).collect();
        Self::new(pos, 0, DEFAULT_SPEED_OF_SOUND)
    }

    pub fn mic_count(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn mic_positions(&self) -> &[[f64; 3]] {
        &self.mic_positions
    }

    pub fn reference_mic(&self) -> usize {
        self.reference_mic
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }
}

impl Default for ArrayGeometry {
    /// Four microphones, 5 cm apart.
    fn default() -> Self {
        Self::linear(4, 0.05).expect("default geometry is valid")
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit_vector(doa_deg: f64) -> [f64; 3] {
    let th = doa_deg.to_radians();
    [th.cos(), th.sin(), 0.0]
}

/// Far-field plane-wave array response for bin `k`.
pub fn steering_vector(geometry: &ArrayGeometry, doa_deg: f64, k: usize, cfg: &StftConfig) -> Result<Vec<Complex64>> {
    if k >= cfg.bins() {
        return Err(Error::Index {
            index: k,
            limit: cfg.bins(),
        });
    }
    let u = unit_vector(doa_deg);
    let f = cfg.bin_frequency(k);
    let p_ref = geometry.mic_positions[geometry.reference_mic];
    Ok(geometry
        .mic_positions
        .iter()
        .map(|p| {
            let proj = (p[0] - p_ref[0]) * u[0] + (p[1] - p_ref[1]) * u[1] + (p[2] - p_ref[2]) * u[2];
            let tau = -proj / geometry.speed_of_sound;
            Complex64::from_polar(1.0, -2.0 * PI * f * tau)
        })
        .collect())
}

/// Steering vectors for every bin, indexed `[k][c]`.
pub fn steering_matrix(geometry: &ArrayGeometry, doa_deg: f64, cfg: &StftConfig) -> Vec<Vec<Complex64>> {
    (0..cfg.bins())
        .map(|k| steering_vector(geometry, doa_deg, k, cfg).expect("bin in range"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims_m: [f64; 3],
    /// Energy absorption coefficient of every wall, in [0, 1].
    pub absorption: f64,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub doa_deg: f64,
    pub distance_m: f64,
    pub signal: TimeSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub sources: Vec<SourceSpec>,
    pub room: Option<Room>,
    /// Array centre in room coordinates; sources are placed relative to it.
    pub array_center_m: [f64; 3],
    pub span_deg: f64,
    pub min_gap_deg: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(sources: Vec<SourceSpec>) -> Self {
        Self {
            sources,
            room: None,
            array_center_m: [0.0, 0.0, 0.0],
            span_deg: 360.0,
            min_gap_deg: DEFAULT_MIN_GAP_DEG,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Spec("a scene needs at least one source".into()));
        }
        if !(self.span_deg > 0.0 && self.span_deg <= 360.0) {
            return Err(Error::Spec(format!("span {} outside (0, 360]", self.span_deg)));
        }
        let rate = self.sources[0].signal.sample_rate_hz();
        for (i, s) in self.sources.iter().enumerate() {
            if !(0.0..self.span_deg).contains(&s.doa_deg) {
                return Err(Error::Spec(format!(
                    "source {i} DoA {} outside [0, {})",
                    s.doa_deg, self.span_deg
                )));
            }
            if !(s.distance_m > 0.0) {
                return Err(Error::Spec(format!("source {i} distance must be positive")));
            }
            if s.signal.channel_count() != 1 || s.signal.sample_rate_hz() != rate {
                return Err(Error::Spec(format!(
                    "source {i} must be mono at the common sample rate"
                )));
            }
            for (j, o) in self.sources.iter().enumerate().skip(i + 1) {
                let gap = wrapped_distance(s.doa_deg, o.doa_deg, self.span_deg);
                if gap < self.min_gap_deg {
                    return Err(Error::Spec(format!(
                        "sources {i} and {j} are {gap:.2} deg apart, minimum is {}",
                        self.min_gap_deg
                    )));
                }
            }
        }
        if let Some(room) = &self.room {
            if !(0.0..=1.0).contains(&room.absorption) {
                return Err(Error::Spec("absorption must lie in [0, 1]".into()));
            }
            let inside = |p: &[f64; 3]| (0..3).all(|a| p[a] > 0.0 && p[a] < room.dims_m[a]);
            if !inside(&self.array_center_m) {
                return Err(Error::Spec("array centre lies outside the room".into()));
            }
            for (i, _) in self.sources.iter().enumerate() {
                if !inside(&self.source_position(i)) {
                    return Err(Error::Spec(format!("source {i} lies outside the room")));
                }
            }
        }
        Ok(())
    }

    pub fn source_position(&self, i: usize) -> [f64; 3] {
        let s = &self.sources[i];
        let u = unit_vector(s.doa_deg);
        let c = self.array_center_m;
        [
            c[0] + s.distance_m * u[0],
            c[1] + s.distance_m * u[1],
            c[2] + s.distance_m * u[2],
        ]
    }

    pub fn truth(&self) -> Result<DoaSet> {
        DoaSet::new(self.sources.iter().map(|s| s.doa_deg).collect(), self.span_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub mixture: TimeSignal,
    /// Per-source reverberant image at every microphone.
    pub source_images: Vec<TimeSignal>,
    /// Per-source dry (peak-normalised) signal, padded to the mixture length.
    pub dry_sources: Vec<TimeSignal>,
    /// Per-source impulse responses, indexed `[source][mic]`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    pub truth: DoaSet,
}

/// A propagation path: delay in samples and linear gain.
#[derive(Debug, Clone, Copy)]
struct Path {
    delay: f64,
    gain: f64,
}

fn fractional_delay_taps(delay: f64) -> (i64, [f64; 2 * FD_HALF as usize]) {
    let base = delay.floor();
    let frac = delay - base;
    let mut taps = [0.0; 2 * FD_HALF as usize];
    for (n, tap) in taps.iter_mut().enumerate() {
        let j = n as i64 - FD_HALF + 1;
        let u = j as f64 - frac;
        let sinc = if u.abs() < 1e-12 {
            1.0
        } else {
            (PI * u).sin() / (PI * u)
        };
        let win = 0.5 * (1.0 + (PI * u / FD_HALF as f64).cos());
        *tap = sinc * win;
    }
    (base as i64 - FD_HALF + 1, taps)
}

fn paths_to_rir(paths: &[Path]) -> Vec<f64> {
    let max_delay = paths.iter().map(|p| p.delay).fold(0.0, f64::max);
    let len = max_delay.floor() as usize + FD_HALF as usize + 1;
    let mut rir = vec![0.0; len];
    for p in paths {
        let (start, taps) = fractional_delay_taps(p.delay);
        for (n, t) in taps.iter().enumerate() {
            let idx = start + n as i64;
            if idx >= 0 && (idx as usize) < len {
                rir[idx as usize] += p.gain * t;
            }
        }
    }
    rir
}

fn convolve_sparse(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (m, &hm) in h.iter().enumerate() {
        if hm == 0.0 {
            continue;
        }
        for (n, &xn) in x.iter().enumerate() {
            y[n + m] += hm * xn;
        }
    }
    y
}

fn direct_paths(src: &[f64; 3], mic: &[f64; 3], fs: f64, v: f64) -> Vec<Path> {
    let r = dist(src, mic);
    vec![Path {
        delay: r / v * fs,
        gain: 1.0 / r,
    }]
}

fn image_paths(src: &[f64; 3], mic: &[f64; 3], room: &Room, fs: f64, v: f64) -> Vec<Path> {
    if room.order == 0 {
        return direct_paths(src, mic, fs, v);
    }
    let beta = (1.0 - room.absorption).sqrt();
    let order = room.order as i64;
    // Per axis: (image coordinate, reflection count).
    let axis_images = |a: usize| -> Vec<(f64, i64)> {
        let l = room.dims_m[a];
        let mut out = Vec::new();
        for n in -order..=order + 1 {
            for q in 0..2i64 {
                let refl = (2 * n - q).abs();
                if refl <= order {
                    let coord = 2.0 * n as f64 * l + if q == 0 { src[a] } else { -src[a] };
                    out.push((coord, refl));
                }
            }
        }
        out
    };
    let (ix, iy, iz) = (axis_images(0), axis_images(1), axis_images(2));
    let mut paths = Vec::new();
    for &(x, rx) in &ix {
        for &(y, ry) in &iy {
            for &(z, rz) in &iz {
                let refl = rx + ry + rz;
                if refl > order {
                    continue;
                }
                let gain_refl = if refl == 0 { 1.0 } else { beta.powi(refl as i32) };
                if gain_refl == 0.0 {
                    continue;
                }
                let r = dist(&[x, y, z], mic);
                paths.push(Path {
                    delay: r / v * fs,
                    gain: gain_refl / r,
                });
            }
        }
    }
    // Direct path first, then by delay, so the RIR sum order is fixed.
    paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    paths
}

fn render(spec: &SceneSpec, geometry: &ArrayGeometry, room: Option<&Room>) -> Result<RenderedScene> {
    spec.validate()?;
    let fs = f64::from(spec.sources[0].signal.sample_rate_hz());
    let v = geometry.speed_of_sound;
    let mics: Vec<[f64; 3]> = geometry
        .mic_positions
        .iter()
        .map(|p| {
            let c = spec.array_center_m;
            [c[0] + p[0], c[1] + p[1], c[2] + p[2]]
        })
        .collect();

    let dry: Vec<TimeSignal> = spec
        .sources
        .iter()
        .map(|s| peak_normalize(&s.signal))
        .collect::<Result<_>>()?;

    let rirs: Vec<Vec<Vec<f64>>> = par::map_range(spec.sources.len(), |i| {
        let src = spec.source_position(i);
        mics.iter()
            .map(|m| {
                let paths = match room {
                    Some(r) => image_paths(&src, m, r, fs, v),
                    None => direct_paths(&src, m, fs, v),
                };
                paths_to_rir(&paths)
            })
            .collect()
    });

    let images: Vec<Vec<Vec<f64>>> = par::map_range(spec.sources.len(), |i| {
        rirs[i].iter().map(|h| convolve_sparse(dry[i].channel(0), h)).collect()
    });
    let total_len = images
        .iter()
        .flat_map(|per_mic| per_mic.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let rate = spec.sources[0].signal.sample_rate_hz();

    let source_images: Vec<TimeSignal> = images
        .into_iter()
        .map(|per_mic| {
            let chans = per_mic
                .into_iter()
                .map(|mut ch| {
                    ch.resize(total_len, 0.0);
                    ch
                })
                .collect();
            TimeSignal::new(chans, rate)
        })
        .collect::<Result<_>>()?;
    let mixture = crate::signal::mix(&source_images)?;
    let dry_sources = dry.iter().map(|d| d.resized(total_len)).collect();
    Ok(RenderedScene {
        mixture,
        source_images,
        dry_sources,
        rirs,
        truth: spec.truth()?,
    })
}

/// Free-field rendering: each source reaches each microphone through a
/// single fractionally delayed path attenuated by `1 / distance`.
pub fn simulate_anechoic(spec: &SceneSpec, geometry: &ArrayGeometry) -> Result<RenderedScene> {
    render(spec, geometry, None)
}

/// Shoebox rendering with the image-source method up to `room.order`
/// reflections. Walls share one absorption coefficient; the pressure
/// reflection coefficient is `sqrt(1 - absorption)`.
pub fn simulate_shoebox(spec: &SceneSpec, geometry: &ArrayGeometry) -> Result<RenderedScene> {
    let room = spec
        .room
        .as_ref()
        .ok_or_else(|| Error::Spec("shoebox rendering needs a room".into()))?;
    render(spec, geometry, Some(room))
}

/// Renders with the room when one is configured, free-field otherwise.
pub fn simulate(spec: &SceneSpec, geometry: &ArrayGeometry) -> Result<RenderedScene> {
    match &spec.room {
        Some(room) => render(spec, geometry, Some(room)),
        None => render(spec, geometry, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    HarmonicComplex,
    ModulatedNoise,
}

/// Syllable-like on/off envelope with raised-cosine ramps.
fn syllable_envelope(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut env = vec![0.0; len];
    let ramp = (0.02 * fs) as usize;
    let mut pos = 0usize;
    let mut first = true;
    while pos < len {
        let seg = (rng.random_range(0.12..0.32) * fs) as usize;
        let on = first || rng.random_bool(0.8);
        let level = rng.random_range(0.5..1.0);
        first = false;
        if on {
            for n in 0..seg.min(len - pos) {
                let edge = n.min(seg - 1 - n);
                let g = if edge < ramp {
                    0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
                } else {
                    1.0
                };
                env[pos + n] = level * g;
            }
        }
        pos += seg.max(1);
    }
    env
}

/// Speech-like test source. Deterministic in `seed`; peak-normalised.
pub fn synth_source(
    kind: SourceKind,
    duration_s: f64,
    pitch_hz: f64,
    seed: u64,
    sample_rate_hz: u32,
) -> Result<TimeSignal> {
    if !(duration_s > 0.0) {
        return Err(Error::Argument("duration must be positive".into()));
    }
    if kind == SourceKind::HarmonicComplex && !(pitch_hz > 0.0) {
        return Err(Error::Argument("pitch must be positive".into()));
    }
    let fs = f64::from(sample_rate_hz);
    let len = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env = syllable_envelope(len, fs, &mut rng);
    let samples: Vec<f64> = match kind {
        SourceKind::HarmonicComplex => {
            let top = (0.45 * fs).min(6000.0);
            let partials: Vec<(f64, f64, f64, f64, f64)> = (1..)
                .map(|h| h as f64)
                .take_while(|h| h * pitch_hz < top)
                .map(|h| {
                    let amp = rng.random_range(0.5..1.0) / h;
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let am_rate = rng.random_range(1.5..6.0);
                    let am_phase = rng.random_range(0.0..2.0 * PI);
                    (h * pitch_hz, amp, phase, am_rate, am_phase)
                })
                .collect();
            (0..len)
                .map(|n| {
                    let t = n as f64 / fs;
                    let s: f64 = partials
                        .iter()
                        .map(|&(f, a, ph, r, rp)| {
                            let am = 1.0 + 0.6 * (2.0 * PI * r * t + rp).sin();
                            a * am * (2.0 * PI * f * t + ph).sin()
                        })
                        .sum();
                    s * env[n]
                })
                .collect()
        }
        SourceKind::ModulatedNoise => (0..len)
            .map(|n| {
                let z: f64 = rng.sample(StandardNormal);
                z * env[n]
            })
            .collect(),
    };
    peak_normalize(&TimeSignal::mono(samples, sample_rate_hz)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::analyze;

    fn src(doa: f64, seed: u64, pitch: f64) -> SourceSpec {
        SourceSpec {
            doa_deg: doa,
            distance_m: 1.5,
            signal: synth_source(SourceKind::HarmonicComplex, 0.5, pitch, seed, 16_000).unwrap(),
        }
    }

    #[test]
    fn steering_unit_modulus_and_reference() {
        let g = ArrayGeometry::default();
        let cfg = StftConfig::default();
        for doa in [0.0, 33.0, 90.0, 271.5] {
            for k in [0, 1, 100, 256] {
                let d = steering_vector(&g, doa, k, &cfg).unwrap();
                assert_eq!(d[0], Complex64::new(1.0, 0.0));
                for z in &d {
                    assert!((z.norm() - 1.0).abs() <= 1e-12);
                }
                if k == 0 {
                    assert!(d.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
                }
            }
        }
        assert!(matches!(steering_vector(&g, 0.0, 257, &cfg), Err(Error::Index { .. })));
    }

    #[test]
    fn broadside_is_all_ones() {
        let g = ArrayGeometry::default();
        let cfg = StftConfig::default();
        for k in 0..cfg.bins() {
            for z in steering_vector(&g, 90.0, k, &cfg).unwrap() {
                assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn endfire_phase_matches_delay() {
        let g = ArrayGeometry::new(vec![[0.0; 3], [0.05, 0.0, 0.0]], 0, 343.0).unwrap();
        let cfg = StftConfig::default();
        let k = 32;
        assert_eq!(cfg.bin_frequency(k), 1000.0);
        let d = steering_vector(&g, 0.0, k, &cfg).unwrap();
        // Mic 2 sits closer to an endfire source at 0 deg, so it leads the
        // reference by 0.05 / 343 s.
        let expected = 2.0 * PI * 1000.0 * 0.05 / 343.0;
        assert!((d[1].arg() - expected).abs() < 1e-12);
    }

    #[test]
    fn min_gap_violation_is_spec_error() {
        let spec = SceneSpec::new(vec![src(50.0, 1, 150.0), src(60.0, 2, 200.0)]);
        assert!(matches!(
            simulate_anechoic(&spec, &ArrayGeometry::default()),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn broadside_source_identical_channels() {
        let spec = SceneSpec::new(vec![src(90.0, 1, 150.0)]);
        let r = simulate_anechoic(&spec, &ArrayGeometry::default()).unwrap();
        // Mics are symmetric about the centre, so the outer and inner pairs
        // match exactly and the inner mics lead the outer ones only slightly.
        let m = &r.mixture;
        for n in 0..m.len() {
            assert!((m.channel(0)[n] - m.channel(3)[n]).abs() < 1e-12);
            assert!((m.channel(1)[n] - m.channel(2)[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_is_sum_of_single_renders() {
        let g = ArrayGeometry::default();
        let (a, b) = (src(30.0, 1, 150.0), src(120.0, 2, 210.0));
        let both = simulate_anechoic(&SceneSpec::new(vec![a.clone(), b.clone()]), &g).unwrap();
        let ra = simulate_anechoic(&SceneSpec::new(vec![a]), &g).unwrap();
        let rb = simulate_anechoic(&SceneSpec::new(vec![b]), &g).unwrap();
        for c in 0..4 {
            for n in 0..both.mixture.len() {
                let sum = ra.mixture.channel(c).get(n).unwrap_or(&0.0) + rb.mixture.channel(c).get(n).unwrap_or(&0.0);
                assert!((both.mixture.channel(c)[n] - sum).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn stft_of_mixture_is_sum_of_image_stfts() {
        let g = ArrayGeometry::default();
        let r = simulate_anechoic(&SceneSpec::new(vec![src(30.0, 1, 150.0), src(120.0, 2, 210.0)]), &g).unwrap();
        let cfg = StftConfig::default();
        let y = analyze(&r.mixture, &cfg).unwrap();
        let parts: Vec<_> = r.source_images.iter().map(|s| analyze(s, &cfg).unwrap()).collect();
        let scale = y.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for i in 0..y.data().len() {
            let s: Complex64 = parts.iter().map(|p| p.data()[i]).sum();
            assert!((y.data()[i] - s).norm() <= 1e-6 * scale);
        }
    }

    #[test]
    fn cross_correlation_lag_matches_geometry() {
        let g = ArrayGeometry::linear(2, 0.2).unwrap();
        let mut s = src(0.0, 3, 130.0);
        s.distance_m = 3.0;
        s.signal = synth_source(SourceKind::ModulatedNoise, 0.3, 0.0, 9, 16_000).unwrap();
        let r = simulate_anechoic(&SceneSpec::new(vec![s]), &g).unwrap();
        let (a, b) = (r.mixture.channel(0), r.mixture.channel(1));
        let best = (-20i64..=20)
            .max_by(|&l1, &l2| {
                let xc = |l: i64| -> f64 {
                    (0..a.len() as i64)
                        .filter(|n| n + l >= 0 && ((n + l) as usize) < b.len())
                        .map(|n| a[n as usize] * b[(n + l) as usize])
                        .sum()
                };
                xc(l1).total_cmp(&xc(l2))
            })
            .unwrap();
        // Mic 1 is 0.2 m closer to the endfire source, so it leads mic 0.
        let expected = -0.2 / 343.0 * 16_000.0;
        assert!((best as f64 - expected).abs() <= 1.0, "lag {best}, expected {expected}");
    }

    fn room_spec(order: usize, absorption: f64) -> SceneSpec {
        let mut spec = SceneSpec::new(vec![src(40.0, 1, 150.0), src(130.0, 2, 220.0)]);
        spec.room = Some(Room {
            dims_m: [6.0, 5.0, 3.0],
            absorption,
            order,
        });
        spec.array_center_m = [3.0, 2.0, 1.4];
        spec
    }

    #[test]
    fn shoebox_order_zero_is_anechoic() {
        let g = ArrayGeometry::default();
        let spec = room_spec(0, 0.3);
        let a = simulate_anechoic(&spec, &g).unwrap();
        let b = simulate_shoebox(&spec, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fully_absorbing_walls_are_anechoic() {
        let g = ArrayGeometry::default();
        let a = simulate_shoebox(&room_spec(0, 1.0), &g).unwrap();
        let b = simulate_shoebox(&room_spec(3, 1.0), &g).unwrap();
        assert_eq!(a.mixture.len(), b.mixture.len());
        for c in 0..4 {
            for (x, y) in a.mixture.channel(c).iter().zip(b.mixture.channel(c)) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn source_outside_room_is_rejected() {
        let mut spec = room_spec(2, 0.5);
        spec.sources[0].distance_m = 10.0;
        assert!(matches!(
            simulate_shoebox(&spec, &ArrayGeometry::default()),
            Err(Error::Spec(_))
        ));
    }

    /// Schroeder backward integration, linear fit of the decay between -5 dB
    /// and the lowest available level down to -25 dB.
    fn schroeder_t60(h: &[f64], fs: f64) -> f64 {
        let mut edc: Vec<f64> = h.iter().map(|x| x * x).collect();
        for n in (0..edc.len() - 1).rev() {
            edc[n] += edc[n + 1];
        }
        let e0 = edc[0];
        let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / e0).log10()).collect();
        let pts: Vec<(f64, f64)> = db
            .iter()
            .enumerate()
            .filter(|(_, &d)| (-25.0..=-5.0).contains(&d))
            .map(|(n, &d)| (n as f64 / fs, d))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
        let (mx, my) = (sx / n, sy / n);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        -60.0 / slope
    }

    #[test]
    fn reverberant_rir_properties() {
        let g = ArrayGeometry::default();
        let r = simulate_shoebox(&room_spec(2, 0.5), &g).unwrap();
        let fs = 16_000.0;
        let win = (0.05 * fs) as usize;
        for per_mic in &r.rirs {
            let nonzero: usize = per_mic
                .iter()
                .map(|h| h.iter().filter(|v| v.abs() > 1e-12).count())
                .sum();
            assert!(nonzero > g.mic_count());
            for h in per_mic {
                let energies: Vec<f64> = h.chunks(win).map(|c| c.iter().map(|x| x * x).sum()).collect();
                for w in energies.windows(2) {
                    assert!(w[1] <= w[0], "energy rises: {energies:?}");
                }
                let t60 = schroeder_t60(h, fs);
                assert!(t60 > 0.0 && t60 < 5.0, "t60 {t60}");
            }
        }
    }

    #[test]
    fn synth_source_determinism_and_length() {
        let a = synth_source(SourceKind::HarmonicComplex, 1.0, 200.0, 5, 16_000).unwrap();
        let b = synth_source(SourceKind::HarmonicComplex, 1.0, 200.0, 5, 16_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        assert_eq!(a.peak(), 1.0);
        let n = synth_source(SourceKind::ModulatedNoise, 0.25, 0.0, 5, 16_000).unwrap();
        assert_eq!(n.len(), 4000);
        assert!(synth_source(SourceKind::HarmonicComplex, 0.0, 200.0, 5, 16_000).is_err());
    }

    #[test]
    fn harmonic_peaks_at_pitch_multiples() {
        let cfg = StftConfig::default();
        let x = synth_source(SourceKind::HarmonicComplex, 1.0, 200.0, 7, 16_000).unwrap();
        let s = analyze(&x, &cfg).unwrap();
        let mag: Vec<f64> = (0..s.bins())
            .map(|k| (0..s.frames()).map(|t| s.get(0, t, k).norm()).sum())
            .collect();
        // Local maxima of the time-averaged magnitude that stand out from
        // their surroundings.
        let floor = mag.iter().cloned().fold(0.0, f64::max) * 0.05;
        let bin_hz = cfg.bin_frequency(1);
        let mut found = 0;
        for k in 2..s.bins() - 2 {
            if mag[k] > floor && mag[k] >= mag[k - 1] && mag[k] >= mag[k + 1] {
                let f = k as f64 * bin_hz;
                let nearest = (f / 200.0).round() * 200.0;
                assert!((f - nearest).abs() <= bin_hz, "peak at {f} Hz");
                found += 1;
            }
        }
        assert!(found >= 5);
    }
}
