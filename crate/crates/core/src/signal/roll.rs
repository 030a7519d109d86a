use alloc::vec::Vec;

use super::{NoteEvent, PianoRoll, Spectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Center time of analysis frame `f` in seconds.
pub fn frame_center_seconds(f: usize, hop: usize, window: usize, sample_rate: u32) -> f64 {
    (f as f64 * hop as f64 + window as f64 / 2.0) / sample_rate as f64
}

/// Marks `active[k, f] = 1` iff frame `f`'s center lies inside
/// `[onset, onset + duration)` of some event of source `k`.
pub fn quantize_ground_truth(
    events: &[NoteEvent],
    k: usize,
    t: usize,
    hop: usize,
    window: usize,
    sample_rate: u32,
) -> Result<PianoRoll> {
    if t == 0 {
        return Err(Error::InvalidArgument("roll needs at least one frame"));
    }
    let mut active = Matrix::zeros(k, t);
    for e in events {
        if e.source_id >= k {
            return Err(Error::UnknownSource { id: e.source_id, k });
        }
        for f in 0..t {
            let c = frame_center_seconds(f, hop, window, sample_rate);
            if c >= e.onset && c < e.end() {
                active[(e.source_id, f)] = 1.0;
            }
        }
    }
    Ok(PianoRoll { active })
}

/// Drops frames in which no source is active from both inputs.
pub fn discard_silent_frames(spec: &Spectrogram, roll: &PianoRoll) -> Result<(Spectrogram, PianoRoll)> {
    if spec.t() != roll.t() {
        return Err(Error::ShapeMismatch("spectrogram and roll frame counts differ"));
    }
    let keep: Vec<usize> = (0..roll.t()).filter(|&f| roll.active_count(f) > 0).collect();
    if keep.is_empty() {
        return Err(Error::EmptyAfterSilenceRemoval);
    }
    Ok((
        Spectrogram { values: spec.values.select_columns(&keep), ..spec.clone() },
        PianoRoll { active: roll.active.select_columns(&keep) },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HOP: usize = 512;
    const WIN: usize = 1024;
    const SR: u32 = 16000;

    fn spec_from(values: Matrix<f64>) -> Spectrogram {
        Spectrogram { values, hop: HOP, window: WIN, sample_rate: SR }
    }

    #[test]
    fn empty_events_give_zero_roll() {
        let roll = quantize_ground_truth(&[], 3, 7, HOP, WIN, SR).unwrap();
        assert_eq!(roll.active, Matrix::zeros(3, 7));
    }

    #[test]
    fn full_cover_gives_ones() {
        let e = NoteEvent::new(0, 0.0, 10.0, 1.0).unwrap();
        let roll = quantize_ground_truth(&[e], 1, 9, HOP, WIN, SR).unwrap();
        assert_eq!(roll.active, Matrix::filled(1, 9, 1.0));
    }

    #[test]
    fn partial_cover_uses_frame_centers() {
        let period = HOP as f64 / SR as f64;
        let e = NoteEvent::new(0, 0.0, 2.5 * period, 1.0).unwrap();
        let roll = quantize_ground_truth(&[e], 1, 6, HOP, WIN, SR).unwrap();
        // Centers sit at (f + 1) periods because window = 2 hops.
        let expected: Vec<f64> = (0..6)
            .map(|f| if frame_center_seconds(f, HOP, WIN, SR) < 2.5 * period { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(roll.active.row(0), &expected[..]);
        assert_eq!(expected, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_active_is_unchanged() {
        let spec = spec_from(Matrix::from_fn(4, 5, |r, c| (r * 5 + c) as f64));
        let roll = PianoRoll { active: Matrix::filled(2, 5, 1.0) };
        let (s, r) = discard_silent_frames(&spec, &roll).unwrap();
        assert_eq!((s, r), (spec, roll));
    }

    #[test]
    fn one_silent_column() {
        let spec = spec_from(Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64));
        let mut roll = PianoRoll { active: Matrix::filled(1, 4, 1.0) };
        roll.active[(0, 2)] = 0.0;
        let (s, r) = discard_silent_frames(&spec, &roll).unwrap();
        assert_eq!(s.t(), 3);
        assert_eq!(r.t(), 3);
        for (out, orig) in [(0, 0), (1, 1), (2, 3)] {
            assert_eq!(s.frame(out), spec.frame(orig));
        }
    }

    #[test]
    fn alternating_columns_keep_even_indices() {
        let spec = spec_from(Matrix::from_fn(2, 10, |r, c| (r * 10 + c) as f64));
        let roll = PianoRoll { active: Matrix::from_fn(1, 10, |_, c| if c % 2 == 0 { 1.0 } else { 0.0 }) };
        let (s, _) = discard_silent_frames(&spec, &roll).unwrap();
        assert_eq!(s.t(), 5);
        for (i, orig) in [0, 2, 4, 6, 8].into_iter().enumerate() {
            assert_eq!(s.frame(i), spec.frame(orig));
        }
    }

    #[test]
    fn all_silent_is_an_error() {
        let spec = spec_from(Matrix::zeros(2, 3));
        let roll = PianoRoll { active: Matrix::zeros(1, 3) };
        assert_eq!(discard_silent_frames(&spec, &roll), Err(Error::EmptyAfterSilenceRemoval));
        let short = PianoRoll { active: Matrix::zeros(1, 2) };
        assert!(discard_silent_frames(&spec, &short).is_err());
    }

    proptest! {
        #[test]
        fn discarding_is_idempotent(mask in proptest::collection::vec(any::<bool>(), 1..20)) {
            prop_assume!(mask.iter().any(|&b| b));
            let t = mask.len();
            let spec = spec_from(Matrix::from_fn(3, t, |r, c| (r + 3 * c) as f64));
            let roll = PianoRoll { active: Matrix::from_fn(1, t, |_, c| if mask[c] { 1.0 } else { 0.0 }) };
            let once = discard_silent_frames(&spec, &roll).unwrap();
            let twice = discard_silent_frames(&once.0, &once.1).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
