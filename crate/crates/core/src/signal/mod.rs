//! Everything upstream of the decomposition: synthetic sources, spectral
//! analysis and ground-truth piano rolls.

mod roll;
mod stft;
mod synth;

pub use roll::{discard_silent_frames, frame_center_seconds, quantize_ground_truth};
pub use stft::{fft_in_place, hann_window, stft_log_magnitude};
pub use synth::{render_events, synth_mixture, synth_note};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio("non-finite sample"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-magnitude spectrogram, `d` frequency rows by `t` frame columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix<f64>,
    pub hop: usize,
    pub window: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn d(&self) -> usize {
        self.values.rows()
    }

    pub fn t(&self) -> usize {
        self.values.cols()
    }

    /// Frame `f` as a `d`-vector.
    pub fn frame(&self, f: usize) -> Vec<f64> {
        self.values.column(f)
    }

    /// Frames as rows (`t × d`), the layout the flow models consume.
    pub fn frames(&self) -> Matrix<f64> {
        self.values.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteEvent {
    pub source_id: usize,
    pub onset: f64,
    pub duration: f64,
    pub intensity: f64,
}

impl NoteEvent {
    pub fn new(source_id: usize, onset: f64, duration: f64, intensity: f64) -> Result<Self> {
        if !(onset >= 0.0) {
            return Err(Error::InvalidArgument("onset must be >= 0"));
        }
        if !(duration > 0.0) {
            return Err(Error::InvalidArgument("duration must be > 0"));
        }
        if !(intensity > 0.0 && intensity <= 1.0) {
            return Err(Error::InvalidArgument("intensity must lie in (0, 1]"));
        }
        Ok(Self { source_id, onset, duration, intensity })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Binary `k × t` source activity.
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRoll {
    pub active: Matrix<f64>,
}

impl PianoRoll {
    pub fn k(&self) -> usize {
        self.active.rows()
    }

    pub fn t(&self) -> usize {
        self.active.cols()
    }

    pub fn is_active(&self, source: usize, frame: usize) -> bool {
        self.active[(source, frame)] > 0.5
    }

    pub fn active_count(&self, frame: usize) -> usize {
        (0..self.k()).filter(|&s| self.is_active(s, frame)).count()
    }
}

/// Harmonic source bank used in place of recorded instrument notes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub fundamentals: Vec<f64>,
    pub partials: usize,
    /// Amplitude ratio between consecutive partials.
    pub partial_decay: f64,
    /// Exponential envelope rate in 1/s.
    pub envelope_decay: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// `k` sources on a semitone-spaced series starting at `base_hz`.
    pub fn semitone_series(k: usize, base_hz: f64, seed: u64) -> Self {
        let fundamentals = (0..k).map(|i| base_hz * libm::pow(2.0, i as f64 / 12.0)).collect();
        Self {
            fundamentals,
            partials: 8,
            partial_decay: 0.7,
            envelope_decay: 2.0,
            noise_level: 0.01,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.fundamentals.len()
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.fundamentals.is_empty() {
            return Err(Error::InvalidArgument("at least one source required"));
        }
        if self.partials == 0 {
            return Err(Error::InvalidArgument("partials must be >= 1"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        for &f in &self.fundamentals {
            if !(f > 0.0) || f * self.partials as f64 >= nyquist {
                return Err(Error::InvalidArgument("highest partial must stay below Nyquist"));
            }
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::InvalidArgument("noise level must lie in [0, 1)"));
        }
        if !(self.partial_decay > 0.0) || !(self.envelope_decay >= 0.0) {
            return Err(Error::InvalidArgument("decay parameters must be positive"));
        }
        Ok(())
    }
}
