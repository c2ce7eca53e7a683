//! Multichannel waveforms, WAV I/O and simple level utilities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;

/// A multichannel waveform. All channels share one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSignal {
    channels: Vec<Vec<f64>>,
    sample_rate_hz: u32,
}

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

impl TimeSignal {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Shape("a signal needs at least one channel".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if let Some((c, ch)) = channels.iter().enumerate().find(|(_, ch)| ch.len() != len) {
            return Err(Error::Shape(format!(
                "channel {c} has {} samples, channel 0 has {len}",
                ch.len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate_hz,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate_hz)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels.max(1)], sample_rate_hz)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Copies one channel out as a mono signal.
    pub fn extract_channel(&self, c: usize) -> Result<TimeSignal> {
        let ch = self.channels.get(c).ok_or(Error::Index {
            index: c,
            limit: self.channels.len(),
        })?;
        TimeSignal::mono(ch.clone(), self.sample_rate_hz)
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|ch| ch.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> TimeSignal {
        TimeSignal {
            channels: self
                .channels
                .iter()
                .map(|ch| ch.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Zero-pads (or truncates) every channel to `len` samples.
    pub fn resized(&self, len: usize) -> TimeSignal {
        TimeSignal {
            channels: self
                .channels
                .iter()
                .map(|ch| {
                    let mut v = ch.clone();
                    v.resize(len, 0.0);
                    v
                })
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Scales the signal so its largest absolute sample is 1. Relative channel
/// gains are untouched.
pub fn peak_normalize(signal: &TimeSignal) -> Result<TimeSignal> {
    let peak = signal.peak();
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::DegenerateInput("cannot peak-normalize a silent signal".into()));
    }
    if peak == 1.0 {
        return Ok(signal.clone());
    }
    Ok(TimeSignal {
        channels: signal
            .channels
            .iter()
            .map(|ch| ch.iter().map(|x| x / peak).collect())
            .collect(),
        sample_rate_hz: signal.sample_rate_hz,
    })
}

/// Sample-wise sum of signals with equal channel count and rate. Shorter
/// inputs are zero-padded to the longest one.
pub fn mix(signals: &[TimeSignal]) -> Result<TimeSignal> {
    let first = signals
        .first()
        .ok_or_else(|| Error::Argument("nothing to mix".into()))?;
    let len = signals.iter().map(TimeSignal::len).max().unwrap_or(0);
    let mut out = vec![vec![0.0; len]; first.channel_count()];
    for s in signals {
        if s.channel_count() != first.channel_count() || s.sample_rate_hz != first.sample_rate_hz {
            return Err(Error::Shape(
                "mixed signals must share channel count and sample rate".into(),
            ));
        }
        for (acc, ch) in out.iter_mut().zip(&s.channels) {
            for (a, x) in acc.iter_mut().zip(ch) {
                *a += x;
            }
        }
    }
    TimeSignal::new(out, first.sample_rate_hz)
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports short reads either as UnexpectedEof or as a custom
        // "Failed to read enough bytes" error.
        hound::Error::IoError(e)
            if e.kind() == std::io::ErrorKind::UnexpectedEof || e.to_string().contains("enough bytes") =>
        {
            Error::Format(format!("{}: truncated data", path.display()))
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => Error::Unsupported(format!("{}: unsupported WAV layout", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file. Integer samples are scaled
/// by 2^-15 into [-1, 1).
pub fn load_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    if !interleaved.len().is_multiple_of(n_ch) {
        return Err(Error::Format(format!(
            "{}: sample count not a multiple of channel count",
            path.display()
        )));
    }
    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (ch, &x) in channels.iter_mut().zip(frame) {
            ch.push(x);
        }
    }
    TimeSignal::new(channels, spec.sample_rate)
}

/// Writes the signal as an interleaved WAV file.
///
/// Float output stores samples as f32, so the round trip is exact for values
/// representable in single precision. PCM16 output clamps to the i16 range,
/// giving at most 2^-15 error per sample for inputs in [-1, 1].
pub fn save_wav(signal: &TimeSignal, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: signal.channel_count() as u16,
        sample_rate: signal.sample_rate_hz,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for n in 0..signal.len() {
        for ch in &signal.channels {
            let res = match encoding {
                WavEncoding::Pcm16 => {
                    let q = (ch[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
                WavEncoding::Float32 => writer.write_sample(ch[n] as f32),
            };
            res.map_err(|e| map_hound(path, e))?;
        }
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
