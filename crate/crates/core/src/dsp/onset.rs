//! Spectral-flux onset detection.
//!
//! Half-wave-rectified log-magnitude flux with an adaptive median threshold.
//! Deliberately simple: it feeds the note-density conditioning signal, not a
//! transcription system.

use crate::nn::scalar::Scalar;

use super::{frame_count, stft_kernel};

const ONSET_FFT: usize = 1024;
const ONSET_HOP: usize = 256;
const FLUX_EPS: f64 = 1e-6;
/// Half-width of the local median window (frames).
const MEDIAN_HALF: usize = 8;
/// Peaks must dominate this many frames on each side.
const PEAK_HALF: usize = 3;
/// Minimum separation between reported onsets, seconds.
const MIN_GAP_S: f64 = 0.04;

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Detect onsets in one channel; returns strictly increasing times in seconds.
/// Silence (or anything shorter than two frames) yields an empty list.
pub fn spectral_flux_onsets<S: Scalar>(x: &[S], sample_rate: f64) -> Vec<f64> {
    if frame_count(x.len(), ONSET_FFT, ONSET_HOP) < 2 {
        return Vec::new();
    }
    let bins = ONSET_FFT / 2 + 1;
    let (re, im, frames) = stft_kernel(x, ONSET_FFT, ONSET_HOP);
    let logmag: Vec<f64> = re
        .iter()
        .zip(&im)
        .map(|(&a, &b)| {
            let (a, b) = (a.as_f64(), b.as_f64());
            (a * a + b * b + FLUX_EPS).ln()
        })
        .collect();

    let mut flux = vec![0.0f64; frames];
    for t in 1..frames {
        let mut acc = 0.0;
        for f in 0..bins {
            let d = logmag[t * bins + f] - logmag[(t - 1) * bins + f];
            if d > 0.0 {
                acc += d;
            }
        }
        flux[t] = acc;
    }

    let max_flux = flux.iter().cloned().fold(0.0f64, f64::max);
    let mut sorted = flux.clone();
    let global_median = median(&mut sorted);
    let delta = 0.05 * (max_flux - global_median) + 1e-9;

    let mut onsets = Vec::new();
    let min_gap = MIN_GAP_S * sample_rate / ONSET_HOP as f64;
    let mut last_frame = f64::NEG_INFINITY;
    for t in 1..frames {
        let lo = t.saturating_sub(MEDIAN_HALF);
        let hi = (t + MEDIAN_HALF + 1).min(frames);
        let mut window: Vec<f64> = flux[lo..hi].to_vec();
        let threshold = median(&mut window) + delta;
        if flux[t] <= threshold {
            continue;
        }
        let plo = t.saturating_sub(PEAK_HALF);
        let phi = (t + PEAK_HALF + 1).min(frames);
        let is_peak = flux[plo..phi].iter().all(|&v| v <= flux[t])
            && flux[plo..t].iter().all(|&v| v < flux[t]);
        if !is_peak {
            continue;
        }
        if (t as f64 - last_frame) < min_gap {
            continue;
        }
        last_frame = t as f64;
        // The first frame whose window fully contains the attack ends just
        // after it; report the window-end time.
        onsets.push((t * ONSET_HOP + ONSET_FFT) as f64 / sample_rate);
    }
    onsets
}
