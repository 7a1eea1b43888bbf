//! Triangular mel filterbank and log-mel features (evaluation embedding).

use crate::nn::scalar::Scalar;

use super::stft_kernel;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels x bins` row-major. Filters span 0 Hz to
/// Nyquist; every bin strictly between the first and last filter edges has
/// positive total weight.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: f64) -> Vec<f64> {
    assert!(n_mels >= 1);
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // n_mels triangles need n_mels + 2 edge points.
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / fft_size as f64;

    let mut fb = vec![0.0f64; n_mels * bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            fb[m * bins + k] = w;
        }
        // A very narrow low-frequency triangle can miss every bin center;
        // give it the nearest bin so each row sums to something positive.
        if fb[m * bins..(m + 1) * bins].iter().all(|&v| v == 0.0) {
            let k = ((mid / bin_hz).round() as usize).min(bins - 1);
            fb[m * bins + k] = 1.0;
        }
    }
    fb
}

/// Log-mel features of one channel: `frames x n_mels` row-major, computed as
/// the mel-weighted power spectrogram through `log(. + eps)`.
pub fn log_mel<S: Scalar>(
    x: &[S],
    n_mels: usize,
    fft_size: usize,
    hop_size: usize,
    sample_rate: f64,
    eps: f64,
) -> Vec<f64> {
    assert!(n_mels >= 8, "n_mels must be at least 8");
    let bins = fft_size / 2 + 1;
    let fb = mel_filterbank(n_mels, fft_size, sample_rate);
    let (re, im, frames) = stft_kernel(x, fft_size, hop_size);
    let mut out = vec![0.0f64; frames * n_mels];
    for t in 0..frames {
        for m in 0..n_mels {
            let mut acc = 0.0f64;
            for k in 0..bins {
                let w = fb[m * bins + k];
                if w != 0.0 {
                    let r = re[t * bins + k].as_f64();
                    let i = im[t * bins + k].as_f64();
                    acc += w * (r * r + i * i);
                }
            }
            out[t * n_mels + m] = (acc + eps).ln();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_maps_to_log_eps() {
        let x = vec![0.0f32; 4096];
        let eps = 1e-7;
        let feats = log_mel(&x, 16, 1024, 256, 22050.0, eps);
        assert!(!feats.is_empty());
        for v in &feats {
            assert!((v - eps.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn filterbank_rows_positive_and_bins_covered() {
        let (n_mels, fft, sr) = (64usize, 1024usize, 22050.0);
        let bins = fft / 2 + 1;
        let fb = mel_filterbank(n_mels, fft, sr);
        for m in 0..n_mels {
            let s: f64 = fb[m * bins..(m + 1) * bins].iter().sum();
            assert!(s > 0.0, "row {} sums to {}", m, s);
        }
        // Every bin strictly inside (first edge, Nyquist) has coverage.
        let first_edge = mel_to_hz(hz_to_mel(sr / 2.0) / (n_mels + 1) as f64);
        let bin_hz = sr / fft as f64;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            if f > first_edge && f < sr / 2.0 {
                let total: f64 = (0..n_mels).map(|m| fb[m * bins + k]).sum();
                assert!(total > 0.0, "bin {} ({} Hz) uncovered", k, f);
            }
        }
    }

    #[test]
    fn sine_at_band_center_dominates_that_band() {
        let (n_mels, fft, sr) = (32usize, 1024usize, 22050.0);
        let mel_max = hz_to_mel(sr / 2.0);
        // Center of band 12.
        let target_band = 12usize;
        let freq = mel_to_hz(mel_max * (target_band + 1) as f64 / (n_mels + 1) as f64);
        let x: Vec<f64> = (0..8192)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect();
        let feats = log_mel(&x, n_mels, fft, 256, sr, 1e-7);
        let frames = feats.len() / n_mels;
        for t in 0..frames {
            let row = &feats[t * n_mels..(t + 1) * n_mels];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, target_band, "frame {}", t);
        }
    }
}
