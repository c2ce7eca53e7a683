//! Short-time Fourier analysis and overlap-add synthesis with a square-root
//! Hann window.
//!
//! Analysis and synthesis both apply the sqrt-Hann window, so the effective
//! window per frame is a periodic Hann. At 50% overlap the summed squared
//! window is exactly 1 on the interior of the signal. Synthesis divides by
//! the accumulated squared-window envelope wherever it is non-zero, which also
//! reconstructs the partially covered edges.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::signal::TimeSignal;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
}

impl Default for StftConfig {
    /// 32 ms window, 16 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            win_len: 512,
            hop: 256,
            sample_rate_hz: 16_000,
        }
    }
}

impl StftConfig {
    pub fn new(win_len: usize, hop: usize, sample_rate_hz: u32) -> Result<Self> {
        let cfg = Self {
            win_len,
            hop,
            sample_rate_hz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len < 2 || self.hop == 0 || self.sample_rate_hz == 0 {
            return Err(Error::Config(format!(
                "window {} / hop {} / rate {} must be positive",
                self.win_len, self.hop, self.sample_rate_hz
            )));
        }
        if !self.win_len.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} does not divide window length {}",
                self.hop, self.win_len
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    /// Centre frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * f64::from(self.sample_rate_hz) / self.win_len as f64
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.win_len).then(|| (len - self.win_len) / self.hop + 1)
    }

    /// Periodic square-root Hann window, `sin(pi n / N)`.
    pub fn window(&self) -> Vec<f64> {
        sqrt_hann(self.win_len)
    }
}

pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| (PI * n as f64 / len as f64).sin()).collect()
}

/// Complex one-sided STFT of a multichannel signal, indexed `(c, t, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    channels: usize,
    frames: usize,
    bins: usize,
    signal_len: usize,
    config: StftConfig,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn from_data(
        channels: usize,
        frames: usize,
        config: StftConfig,
        signal_len: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        let bins = config.bins();
        if data.len() != channels * frames * bins {
            return Err(Error::Shape(format!(
                "{} values for {channels}x{frames}x{bins} spectrogram",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram value".into()));
        }
        Ok(Self {
            channels,
            frames,
            bins,
            signal_len,
            config,
            data,
        })
    }

    pub fn zeros(channels: usize, frames: usize, config: StftConfig, signal_len: usize) -> Self {
        let bins = config.bins();
        Self {
            channels,
            frames,
            bins,
            signal_len,
            config,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Length of the time signal this spectrogram was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    #[inline]
    fn idx(&self, c: usize, t: usize, k: usize) -> usize {
        (c * self.frames + t) * self.bins + k
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, k: usize) -> Complex64 {
        self.data[self.idx(c, t, k)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, k: usize, v: Complex64) {
        let i = self.idx(c, t, k);
        self.data[i] = v;
    }

    /// All bins of one frame of one channel.
    pub fn frame(&self, c: usize, t: usize) -> &[Complex64] {
        let i = self.idx(c, t, 0);
        &self.data[i..i + self.bins]
    }

    /// The channel vector `Y_tk`.
    pub fn channel_vector(&self, t: usize, k: usize) -> Vec<Complex64> {
        (0..self.channels).map(|c| self.get(c, t, k)).collect()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn extract_channel(&self, c: usize) -> Result<Spectrogram> {
        if c >= self.channels {
            return Err(Error::Index {
                index: c,
                limit: self.channels,
            });
        }
        let n = self.frames * self.bins;
        Ok(Spectrogram {
            channels: 1,
            frames: self.frames,
            bins: self.bins,
            signal_len: self.signal_len,
            config: self.config,
            data: self.data[c * n..(c + 1) * n].to_vec(),
        })
    }

    /// Stacks mono spectrograms of identical shape into one multichannel one.
    pub fn stack(parts: &[Spectrogram]) -> Result<Spectrogram> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("nothing to stack".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        let mut channels = 0;
        for p in parts {
            if p.frames != first.frames || p.bins != first.bins || p.config != first.config {
                return Err(Error::Shape("stacked spectrograms differ in shape".into()));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(Spectrogram {
            channels,
            frames: first.frames,
            bins: first.bins,
            signal_len: first.signal_len,
            config: first.config,
            data,
        })
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// Frames the signal with hop `cfg.hop` and returns the one-sided spectrum of
/// each windowed frame. The frame count is `floor((len - win) / hop) + 1`.
pub fn analyze(signal: &TimeSignal, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = signal.len();
    let frames = cfg.frame_count(len).ok_or_else(|| {
        Error::Size(format!(
            "signal of {len} samples is shorter than one {}-sample window",
            cfg.win_len
        ))
    })?;
    let n = cfg.win_len;
    let bins = cfg.bins();
    let window = cfg.window();
    let fft = plans(n).forward;
    let channels = signal.channel_count();

    let rows = par::map_range(channels * frames, |row| {
        let (c, t) = (row / frames, row % frames);
        let x = signal.channel(c);
        let start = t * cfg.hop;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| {
                let s = x.get(start + i).copied().unwrap_or(0.0);
                Complex64::new(s * window[i], 0.0)
            })
            .collect();
        fft.process(&mut buf);
        buf.truncate(bins);
        buf
    });
    let data = rows.into_iter().flatten().collect();
    Spectrogram::from_data(channels, frames, *cfg, len, data)
}

/// Inverse of [`analyze`]: windowed overlap-add normalised by the squared
/// window envelope. Output length is the original signal length.
pub fn synthesize(spec: &Spectrogram, cfg: &StftConfig) -> Result<TimeSignal> {
    cfg.validate()?;
    if spec.bins != cfg.bins() || spec.config != *cfg {
        return Err(Error::Config(format!(
            "spectrogram has {} bins / {:?}, config expects {} bins / {:?}",
            spec.bins,
            spec.config,
            cfg.bins(),
            cfg
        )));
    }
    let n = cfg.win_len;
    let window = cfg.window();
    let ifft = plans(n).inverse;
    let out_len = spec.signal_len.max((spec.frames.saturating_sub(1)) * cfg.hop + n);

    let mut envelope = vec![0.0; out_len];
    for t in 0..spec.frames {
        for (i, w) in window.iter().enumerate() {
            envelope[t * cfg.hop + i] += w * w;
        }
    }

    let channels = par::map_range(spec.channels, |c| {
        let frames = par::map_range(spec.frames, |t| {
            let half = spec.frame(c, t);
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            buf[..half.len()].copy_from_slice(half);
            // Hermitian extension of the one-sided spectrum.
            for k in 1..n - half.len() + 1 {
                buf[n - k] = half[k].conj();
            }
            ifft.process(&mut buf);
            buf.iter()
                .zip(&window)
                .map(|(z, w)| z.re / n as f64 * w)
                .collect::<Vec<f64>>()
        });
        let mut acc = vec![0.0; out_len];
        for (t, frame) in frames.iter().enumerate() {
            for (i, v) in frame.iter().enumerate() {
                acc[t * cfg.hop + i] += v;
            }
        }
        for (a, e) in acc.iter_mut().zip(&envelope) {
            if *e > 1e-10 {
                *a /= e;
            }
        }
        acc.truncate(spec.signal_len);
        acc
    });
    TimeSignal::new(channels, cfg.sample_rate_hz)
}
