use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use super::{AudioBuffer, Spectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * libm::cos(TAU * i as f64 / n as f64)).collect()
}

/// In-place iterative radix-2 FFT; `re.len()` must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -TAU / len as f64;
        let (w_im, w_re) = libm::sincos(ang);
        for start in (0..n).step_by(len) {
            let (mut c_re, mut c_im) = (1.0, 0.0);
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * c_re - im[b] * c_im;
                let t_im = re[b] * c_im + im[b] * c_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = c_re * w_re - c_im * w_im;
                c_im = c_re * w_im + c_im * w_re;
                c_re = next_re;
            }
        }
        len <<= 1;
    }
}

fn magnitudes(segment: &[f64], bins: usize) -> Vec<f64> {
    let n = segment.len();
    if n.is_power_of_two() {
        let mut re = segment.to_vec();
        let mut im = vec![0.0; n];
        fft_in_place(&mut re, &mut im);
        (1..=bins).map(|k| libm::hypot(re[k], im[k])).collect()
    } else {
        (1..=bins)
            .map(|k| {
                let (mut sr, mut si) = (0.0, 0.0);
                for (i, &x) in segment.iter().enumerate() {
                    let (s, c) = libm::sincos(-TAU * (k * i % n) as f64 / n as f64);
                    sr += x * c;
                    si += x * s;
                }
                libm::hypot(sr, si)
            })
            .collect()
    }
}

/// `log(1 + |DFT|)` of Hann-windowed frames, keeping bins `1..=window/2`.
///
/// Frames start at multiples of `hop`; a trailing partial window is ignored.
pub fn stft_log_magnitude(audio: &AudioBuffer, window: usize, hop: usize) -> Result<Spectrogram> {
    if window == 0 || window % 2 != 0 {
        return Err(Error::InvalidArgument("window must be even and positive"));
    }
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be >= 1"));
    }
    if audio.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidAudio("non-finite sample"));
    }
    let len = audio.len();
    if len < window {
        return Err(Error::InputTooShort { len, window });
    }
    let frames = (len - window) / hop + 1;
    let bins = window / 2;
    let hann = hann_window(window);
    let mut values = Matrix::zeros(bins, frames);
    let mut segment = vec![0.0; window];
    for f in 0..frames {
        let start = f * hop;
        for (i, s) in segment.iter_mut().enumerate() {
            *s = audio.samples[start + i] * hann[i];
        }
        for (b, m) in magnitudes(&segment, bins).into_iter().enumerate() {
            values[(b, f)] = libm::log1p(m);
        }
    }
    Ok(Spectrogram { values, hop, window, sample_rate: audio.sample_rate })
}
