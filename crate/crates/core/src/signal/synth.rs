use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use super::{AudioBuffer, NoteEvent, SynthConfig};
use crate::error::{Error, Result};
use crate::rng;

const ATTACK_SECONDS: f64 = 0.005;

// Stream ids keep phase and noise draws independent of each other.
const PHASE_STREAM: u64 = 0x5048_4153;
const NOISE_STREAM: u64 = 0x4e4f_4953;

fn noise_seed(cfg_seed: u64, source_id: usize, duration: f64, sample_rate: u32) -> u64 {
    // FNV-1a over the arguments that shape the noise sequence.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for word in [cfg_seed, source_id as u64, duration.to_bits(), sample_rate as u64] {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Renders one harmonic note: partials of `fundamentals[source_id]` with
/// geometric amplitude decay, a short attack followed by exponential decay,
/// and additive uniform noise. The peak never exceeds `intensity`.
pub fn synth_note(
    source_id: usize,
    duration: f64,
    intensity: f64,
    cfg: &SynthConfig,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    let k = cfg.k();
    if source_id >= k {
        return Err(Error::UnknownSource { id: source_id, k });
    }
    if !(intensity > 0.0 && intensity <= 1.0) {
        return Err(Error::InvalidArgument("intensity must lie in (0, 1]"));
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument("duration must be > 0"));
    }
    cfg.validate(sample_rate)?;

    let f0 = cfg.fundamentals[source_id];
    let mut phase_rng = rng::seeded(cfg.seed ^ source_id as u64, PHASE_STREAM);
    let phases: Vec<f64> = (0..cfg.partials).map(|_| TAU * phase_rng.gen::<f64>()).collect();
    let amps: Vec<f64> = (0..cfg.partials).map(|p| libm::pow(cfg.partial_decay, p as f64)).collect();
    let amp_sum: f64 = amps.iter().sum();

    let mut noise_rng = rng::seeded(noise_seed(cfg.seed, source_id, duration, sample_rate), NOISE_STREAM);
    let n = libm::round(duration * sample_rate as f64) as usize;
    let sr = sample_rate as f64;
    let tonal_gain = 1.0 - cfg.noise_level;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let env = (t / ATTACK_SECONDS).min(1.0) * libm::exp(-cfg.envelope_decay * t);
        let mut tone = 0.0;
        for (p, (&a, &ph)) in amps.iter().zip(&phases).enumerate() {
            tone += a * libm::sin(TAU * f0 * (p + 1) as f64 * t + ph);
        }
        let noise = if cfg.noise_level > 0.0 { rng::uniform(&mut noise_rng, -1.0, 1.0) } else { 0.0 };
        samples.push(intensity * (tonal_gain * env * tone / amp_sum + cfg.noise_level * noise));
    }
    AudioBuffer::new(samples, sample_rate)
}

/// Sample-wise sum of the rendered events, without normalization.
pub fn render_events(events: &[NoteEvent], cfg: &SynthConfig, sample_rate: u32) -> Result<AudioBuffer> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("no events to render"));
    }
    let sr = sample_rate as f64;
    let end = events.iter().map(|e| libm::round(e.onset * sr) as usize + libm::round(e.duration * sr) as usize).max();
    let mut out = vec![0.0; end.unwrap_or(0)];
    for e in events {
        let note = synth_note(e.source_id, e.duration, e.intensity, cfg, sample_rate)?;
        let start = libm::round(e.onset * sr) as usize;
        for (o, s) in out[start..].iter_mut().zip(&note.samples) {
            *o += s;
        }
    }
    AudioBuffer::new(out, sample_rate)
}

/// Renders a mixture, scaled down so its peak is at most 1, and echoes the
/// events back for ground-truth quantization.
pub fn synth_mixture(
    events: &[NoteEvent],
    cfg: &SynthConfig,
    sample_rate: u32,
) -> Result<(AudioBuffer, Vec<NoteEvent>)> {
    let mut audio = render_events(events, cfg, sample_rate)?;
    let peak = audio.peak();
    if peak > 1.0 {
        for s in &mut audio.samples {
            *s /= peak;
        }
    }
    Ok((audio, events.to_vec()))
}
