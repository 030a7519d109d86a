//! Synthetic corpus generation and its on-disk layout.
//!
//! A dataset directory holds `manifest.toml` plus one DDSM file per sample:
//! isolated-note spectrograms (train/validation) and test-mixture
//! spectrograms with their piano rolls.

use std::fs;
use std::path::{Path, PathBuf};

use dds_core::signal::{
    discard_silent_frames, quantize_ground_truth, stft_log_magnitude, synth_mixture, synth_note, NoteEvent, PianoRoll,
};
use dds_core::{rng, Matrix};
use serde::{Deserialize, Serialize};

use crate::config::SynthSection;
use crate::error::{CliError, CliResult};
use crate::format::ddsm;

const NOTE_STREAM: u64 = 0x6e6f_7465;
const SPLIT_STREAM: u64 = 0x7370_6c74;
const TEST_STREAM: u64 = 0x7465_7374;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Spectrogram (`D × T`) of one isolated note, silent frames removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub source: usize,
    pub split: Split,
    pub frames: Matrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub spectrogram: Matrix<f64>,
    /// Ground truth; absent when a manifest lists no roll for the snippet.
    pub roll: Option<PianoRoll>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub d: usize,
    pub notes: Vec<Note>,
    pub snippets: Vec<Snippet>,
}

fn mix(seed: u64, a: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(a).rotate_left(17) ^ a.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Rounds to `f32` precision so a saved and reloaded dataset is identical.
fn to_f32_grid(m: &Matrix<f64>) -> Matrix<f64> {
    m.map(|v| v as f32 as f64)
}

impl Dataset {
    pub fn synthesize(cfg: &SynthSection, seed: u64) -> CliResult<Self> {
        let sr = cfg.sample_rate;
        let mut r = rng::seeded(seed, NOTE_STREAM);
        let mut notes = Vec::new();
        let n_train = ((cfg.train_fraction * cfg.notes_per_source as f64).round() as usize).clamp(1, cfg.notes_per_source - 1);
        for source in 0..cfg.sources {
            // Seeded choice of which notes validate.
            let mut order: Vec<usize> = (0..cfg.notes_per_source).collect();
            let mut sr_rng = rng::seeded(mix(seed, source as u64), SPLIT_STREAM);
            for i in (1..order.len()).rev() {
                let j = (rng::uniform(&mut sr_rng, 0.0, (i + 1) as f64) as usize).min(i);
                order.swap(i, j);
            }
            for i in 0..cfg.notes_per_source {
                let intensity = rng::uniform(&mut r, cfg.intensity_min, cfg.intensity_max);
                let duration = cfg.note_seconds * rng::uniform(&mut r, 0.8, 1.2);
                let synth = cfg.synth_config(mix(seed, (source * cfg.notes_per_source + i) as u64));
                let audio = synth_note(source, duration, intensity, &synth, sr)?;
                let spec = stft_log_magnitude(&audio, cfg.window, cfg.hop)?;
                let event = NoteEvent::new(source, 0.0, duration, intensity)?;
                let roll = quantize_ground_truth(&[event], cfg.sources, spec.t(), cfg.hop, cfg.window, sr)?;
                let (spec, _) = discard_silent_frames(&spec, &roll)?;
                let split = if order[..n_train].contains(&i) { Split::Train } else { Split::Validation };
                notes.push(Note { source, split, frames: to_f32_grid(&spec.values) });
            }
        }
        let mut snippets = Vec::new();
        let mut tr = rng::seeded(seed, TEST_STREAM);
        for s in 0..cfg.test_snippets {
            let mut events = Vec::new();
            for seg in 0..cfg.segments_per_snippet {
                let mut chosen: Vec<usize> = Vec::new();
                while chosen.len() < cfg.polyphony {
                    let c = (rng::uniform(&mut tr, 0.0, cfg.sources as f64) as usize).min(cfg.sources - 1);
                    if !chosen.contains(&c) {
                        chosen.push(c);
                    }
                }
                for c in chosen {
                    let intensity = rng::uniform(&mut tr, cfg.intensity_min, cfg.intensity_max);
                    events.push(NoteEvent::new(c, seg as f64 * cfg.segment_seconds, cfg.segment_seconds, intensity)?);
                }
            }
            let synth = cfg.synth_config(mix(seed, 0x1000_0000 + s as u64));
            let (audio, events) = synth_mixture(&events, &synth, sr)?;
            let spec = stft_log_magnitude(&audio, cfg.window, cfg.hop)?;
            let roll = quantize_ground_truth(&events, cfg.sources, spec.t(), cfg.hop, cfg.window, sr)?;
            let (spec, roll) = discard_silent_frames(&spec, &roll)?;
            snippets.push(Snippet { spectrogram: to_f32_grid(&spec.values), roll: Some(roll) });
        }
        Ok(Self { k: cfg.sources, d: cfg.d(), notes, snippets })
    }

    /// Frames of the given splits, one per row, with their source labels.
    pub fn frames(&self, splits: &[Split], source: Option<usize>) -> (Matrix<f64>, Vec<usize>) {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for n in &self.notes {
            if splits.contains(&n.split) && source.is_none_or(|s| s == n.source) {
                for f in 0..n.frames.cols() {
                    rows.push(n.frames.column(f));
                    labels.push(n.source);
                }
            }
        }
        let m = if rows.is_empty() { Matrix::zeros(0, self.d) } else { Matrix::from_rows(&rows).expect("equal frame sizes") };
        (m, labels)
    }

    pub fn save(&self, dir: &Path, cfg: &SynthSection, seed: u64) -> CliResult<PathBuf> {
        for sub in ["notes", "test"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| CliError::io(&dir.join(sub), e))?;
        }
        let mut samples = Vec::new();
        let mut counters = vec![0usize; self.k];
        for n in &self.notes {
            let rel = format!("notes/source{:02}_note{:03}.ddsm", n.source, counters[n.source]);
            counters[n.source] += 1;
            ddsm::save(&dir.join(&rel), &n.frames)?;
            samples.push(SampleEntry { path: rel, split: n.split, label: Some(n.source), roll: None });
        }
        for (i, s) in self.snippets.iter().enumerate() {
            let spec = format!("test/snippet{i:03}.ddsm");
            ddsm::save(&dir.join(&spec), &s.spectrogram)?;
            let roll = match &s.roll {
                Some(r) => {
                    let path = format!("test/snippet{i:03}_roll.ddsm");
                    ddsm::save(&dir.join(&path), &r.active)?;
                    Some(path)
                }
                None => None,
            };
            samples.push(SampleEntry { path: spec, split: Split::Test, label: None, roll });
        }
        let manifest = Manifest {
            sources: self.k,
            d: self.d,
            sample_rate: cfg.sample_rate,
            window: cfg.window,
            hop: cfg.hop,
            seed,
            samples,
        };
        let path = dir.join("manifest.toml");
        let text = toml::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Loads a dataset directory (or its manifest file).
    pub fn load(path: &Path) -> CliResult<Self> {
        let manifest_path = if path.is_dir() { path.join("manifest.toml") } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
        let mut notes = Vec::new();
        let mut snippets = Vec::new();
        for s in &m.samples {
            let values: Matrix<f64> = ddsm::load(&dir.join(&s.path))?;
            if values.rows() != m.d {
                return Err(CliError::Config(format!("{}: expected {} frequency bins", s.path, m.d)));
            }
            match s.split {
                Split::Test => {
                    let roll = match &s.roll {
                        Some(roll_path) => {
                            let active: Matrix<f64> = ddsm::load(&dir.join(roll_path))?;
                            if active.shape() != (m.sources, values.cols()) {
                                return Err(CliError::Config(format!("{roll_path}: roll shape does not match its spectrogram")));
                            }
                            Some(PianoRoll { active })
                        }
                        None => None,
                    };
                    snippets.push(Snippet { spectrogram: values, roll });
                }
                split => {
                    let source = s.label.filter(|&l| l < m.sources).ok_or_else(|| CliError::Config(format!("{}: missing or invalid label", s.path)))?;
                    notes.push(Note { source, split, frames: values });
                }
            }
        }
        Ok(Self { k: m.sources, d: m.d, notes, snippets })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sources: usize,
    pub d: usize,
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub seed: u64,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub path: String,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roll: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSection {
        SynthSection { sources: 3, notes_per_source: 5, segments_per_snippet: 4, ..SynthSection::default() }
    }

    #[test]
    fn split_is_eighty_twenty_per_source() {
        let ds = Dataset::synthesize(&SynthSection::default(), 1).unwrap();
        for s in 0..ds.k {
            let count = |split| ds.notes.iter().filter(|n| n.source == s && n.split == split).count();
            assert_eq!((count(Split::Train), count(Split::Validation)), (8, 2));
        }
    }

    #[test]
    fn polyphony_is_respected() {
        let ds = Dataset::synthesize(&small(), 2).unwrap();
        for sn in &ds.snippets {
            let roll = sn.roll.as_ref().unwrap();
            for f in 0..roll.t() {
                assert!((1..=2).contains(&roll.active_count(f)));
            }
            assert_eq!(sn.spectrogram.rows(), ds.d);
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        assert_eq!(Dataset::synthesize(&small(), 3).unwrap(), Dataset::synthesize(&small(), 3).unwrap());
        assert_ne!(Dataset::synthesize(&small(), 3).unwrap(), Dataset::synthesize(&small(), 4).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::synthesize(&small(), 6).unwrap();
        ds.save(dir.path(), &small(), 6).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn frames_filter_by_split_and_source() {
        let ds = Dataset::synthesize(&small(), 5).unwrap();
        let (all, labels) = ds.frames(&[Split::Train, Split::Validation], None);
        let (one, l1) = ds.frames(&[Split::Train], Some(1));
        assert_eq!(all.rows(), labels.len());
        assert!(l1.iter().all(|&l| l == 1));
        assert!(one.rows() < all.rows());
        assert_eq!(all.cols(), ds.d);
    }
}
