//! Synthetic toy corpus: random chord progressions of decaying band-limited
//! saw/sine tones with a slowly varying note density. Makes the whole
//! pipeline runnable with zero external data.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{save_wav, WavFormat, Waveform};

const CHORD_ROOTS_HZ: [f64; 7] = [110.0, 123.47, 138.59, 146.83, 164.81, 174.61, 196.0];
const CHORD_INTERVALS: [[f64; 3]; 3] = [
    [1.0, 1.25, 1.5],    // major
    [1.0, 1.1892, 1.5],  // minor
    [1.0, 1.3348, 1.5],  // sus4-ish
];

/// One band-limited note: the first few saw partials under a decay envelope
/// with a sharp attack (so onsets are detectable).
fn add_note(out: &mut [f32], sr: f64, start: usize, freq: f64, amp: f64, dur_s: f64) {
    let n = ((dur_s * sr) as usize).min(out.len().saturating_sub(start));
    let nyq = sr / 2.0;
    let partials = ((nyq * 0.5 / freq).floor() as usize).clamp(1, 8);
    for i in 0..n {
        let t = i as f64 / sr;
        let env = (-t * 4.0).exp() * (1.0 - (-t * 600.0).exp());
        let mut v = 0.0;
        for p in 1..=partials {
            v += (2.0 * std::f64::consts::PI * freq * p as f64 * t).sin() / p as f64;
        }
        out[start + i] += (amp * env * v) as f32;
    }
}

/// Synthesize one piece with note density wandering between `density_lo` and
/// `density_hi` events per second.
pub fn synthesize_song(
    rng: &mut ChaCha8Rng,
    seconds: f64,
    sample_rate: u32,
    density_lo: f64,
    density_hi: f64,
) -> Waveform {
    let sr = sample_rate as f64;
    let n = (seconds * sr) as usize;
    let mut x = vec![0.0f32; n];

    // Random-walk density in events/second.
    let mut density = rng.random_range(density_lo..density_hi);
    let mut chord = 0usize;
    let mut kind = 0usize;
    let mut t = 0.1f64;
    while t < seconds - 0.3 {
        if rng.random_range(0.0..1.0) < 0.15 {
            chord = rng.random_range(0..CHORD_ROOTS_HZ.len());
            kind = rng.random_range(0..CHORD_INTERVALS.len());
        }
        let root = CHORD_ROOTS_HZ[chord] * if rng.random_range(0.0..1.0) < 0.3 { 2.0 } else { 1.0 };
        let interval = CHORD_INTERVALS[kind][rng.random_range(0..3)];
        let freq = root * interval;
        let amp = rng.random_range(0.25..0.5);
        add_note(&mut x, sr, (t * sr) as usize, freq, amp, 0.9);

        density = (density + rng.random_range(-0.6..0.6)).clamp(density_lo, density_hi);
        t += 1.0 / density;
    }

    // Keep peaks within [-1, 1].
    let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let s = 0.99 / peak;
        for v in x.iter_mut() {
            *v *= s;
        }
    }
    Waveform::mono(x, sample_rate)
}

/// Write a toy corpus of WAV files; returns the paths.
pub fn synthesize_corpus(
    dir: &Path,
    n_files: usize,
    seconds_each: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(n_files);
    for i in 0..n_files {
        let w = synthesize_song(&mut rng, seconds_each, sample_rate, 0.8, 8.0);
        let path = dir.join(format!("toy_{i:03}.wav"));
        save_wav(&w, &path, WavFormat::Float32)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn songs_are_in_range_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = synthesize_song(&mut rng, 3.0, 22050, 1.0, 6.0);
        assert_eq!(a.len_samples(), 3 * 22050);
        assert!(a.channels[0].iter().all(|v| v.abs() <= 1.0));
        assert!(a.channels[0].iter().any(|v| v.abs() > 0.05), "not silent");

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let b = synthesize_song(&mut rng2, 3.0, 22050, 1.0, 6.0);
        assert_eq!(a.channels[0], b.channels[0]);
    }

    #[test]
    fn synthesized_songs_have_detectable_onsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = synthesize_song(&mut rng, 6.0, 22050, 2.0, 6.0);
        let onsets = crate::dsp::onset::spectral_flux_onsets(&w.channels[0], 22050.0);
        assert!(
            onsets.len() >= 6,
            "expected a handful of onsets, got {}",
            onsets.len()
        );
    }
}
