//! Audio ingest and egress: WAV files (PCM16 / IEEE float32), band-limited
//! resampling, excerpt sampling, and dataset scanning.

pub mod synth;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Multichannel waveform; all channels equal length, samples in [-1, 1].
#[derive(Clone, Debug)]
pub struct Waveform {
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
}

/// On-disk sample encodings we read and write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// A batch of equal-length mono excerpts for autoencoder training.
/// Stereo sources are averaged to mono before slicing.
#[derive(Clone, Debug)]
pub struct ExcerptBatch {
    pub excerpts: Vec<Vec<f32>>,
    pub excerpt_samples: usize,
}

impl Waveform {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform {
            channels: vec![samples],
            sample_rate,
        }
    }

    pub fn len_samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.len_samples() as f64 / self.sample_rate as f64
    }

    /// Average all channels into one.
    pub fn to_mono(&self) -> Vec<f32> {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let n = self.len_samples();
        let scale = 1.0 / self.channels.len() as f32;
        (0..n)
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f32>() * scale)
            .collect()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.channels.is_empty() || self.len_samples() == 0 {
            return Err(Error::wav(path, "zero-length audio"));
        }
        if self.channels.iter().any(|c| c.len() != self.len_samples()) {
            return Err(Error::wav(path, "channels of unequal length"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// WAV parsing / writing
// ---------------------------------------------------------------------------

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

/// Parse a little-endian WAV file (PCM16 or IEEE float32 chunks only).
pub fn load_wav(path: &Path) -> Result<(Waveform, WavFormat)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::wav(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, sr, bits)
    let mut data: Option<(usize, usize)> = None; // (offset, len)
    let mut at = 12usize;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(&bytes, at + 4) as usize;
        let body = at + 8;
        if body + size > bytes.len() {
            return Err(Error::wav(path, "truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::wav(path, "fmt chunk too small"));
                }
                let format = read_u16(&bytes, body);
                let channels = read_u16(&bytes, body + 2);
                let sr = read_u32(&bytes, body + 4);
                let bits = read_u16(&bytes, body + 14);
                fmt = Some((format, channels, sr, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        at = body + size + (size & 1); // chunks are word-aligned
    }

    let (format, channels, sr, bits) =
        fmt.ok_or_else(|| Error::wav(path, "missing fmt chunk"))?;
    let (off, len) = data.ok_or_else(|| Error::wav(path, "missing data chunk"))?;
    if channels == 0 || sr == 0 {
        return Err(Error::wav(path, "invalid fmt fields"));
    }
    let nch = channels as usize;
    let (wav_format, samples) = match (format, bits) {
        (1, 16) => {
            let n = len / 2;
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let v = i16::from_le_bytes(bytes[off + 2 * i..off + 2 * i + 2].try_into().unwrap());
                out.push(v as f32 / 32767.0);
            }
            (WavFormat::Pcm16, out)
        }
        (3, 32) => {
            let n = len / 4;
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let v =
                    f32::from_le_bytes(bytes[off + 4 * i..off + 4 * i + 4].try_into().unwrap());
                out.push(v);
            }
            (WavFormat::Float32, out)
        }
        _ => {
            return Err(Error::wav(
                path,
                format!("unsupported encoding: format {} bits {}", format, bits),
            ))
        }
    };
    if samples.is_empty() {
        return Err(Error::wav(path, "zero-length audio"));
    }
    let frames = samples.len() / nch;
    let mut chans = vec![Vec::with_capacity(frames); nch];
    for (i, v) in samples.into_iter().enumerate().take(frames * nch) {
        chans[i % nch].push(v);
    }
    Ok((
        Waveform {
            channels: chans,
            sample_rate: sr,
        },
        wav_format,
    ))
}

/// Write a WAV file in the requested encoding.
pub fn save_wav(w: &Waveform, path: &Path, format: WavFormat) -> Result<()> {
    w.validate(path)?;
    let nch = w.channels.len();
    let frames = w.len_samples();
    let (fmt_code, bits): (u16, u16) = match format {
        WavFormat::Pcm16 => (1, 16),
        WavFormat::Float32 => (3, 32),
    };
    let bytes_per_sample = bits as usize / 8;
    let data_len = frames * nch * bytes_per_sample;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&fmt_code.to_le_bytes());
    out.extend_from_slice(&(nch as u16).to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    let block_align = (nch * bytes_per_sample) as u16;
    out.extend_from_slice(&(w.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..frames {
        for ch in &w.channels {
            match format {
                WavFormat::Pcm16 => {
                    let v = (ch[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    out.extend_from_slice(&v.to_le_bytes());
                }
                WavFormat::Float32 => out.extend_from_slice(&ch[i].to_le_bytes()),
            }
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Load, peak-normalize (divide by `max(|sample|, 1)`), and resample to the
/// target rate.
pub fn load_audio(path: &Path, target_sr: u32) -> Result<Waveform> {
    let (mut w, _) = load_wav(path)?;
    let peak = w
        .channels
        .iter()
        .flatten()
        .fold(0.0f32, |m, v| m.max(v.abs()));
    if !peak.is_finite() {
        return Err(Error::wav(path, "non-finite samples"));
    }
    if peak > 1.0 {
        for c in w.channels.iter_mut() {
            for v in c.iter_mut() {
                *v /= peak;
            }
        }
    }
    if w.sample_rate != target_sr {
        let channels = w
            .channels
            .iter()
            .map(|c| resample(c, w.sample_rate, target_sr))
            .collect();
        w = Waveform {
            channels,
            sample_rate: target_sr,
        };
    }
    Ok(w)
}

/// Band-limited (Blackman-windowed sinc) resampler.
pub fn resample(x: &[f32], sr_in: u32, sr_out: u32) -> Vec<f32> {
    if sr_in == sr_out {
        return x.to_vec();
    }
    let ratio = sr_out as f64 / sr_in as f64;
    let cutoff = 0.5 * ratio.min(1.0); // cycles per input sample
    let support = (32.0 / (2.0 * cutoff)).ceil(); // wider kernel when downsampling
    let out_len = (x.len() as f64 * ratio).floor() as usize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let lo = (t - support).ceil() as isize;
        let hi = (t + support).floor() as isize;
        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for k in lo..=hi {
            if k < 0 || k as usize >= x.len() {
                continue;
            }
            let u = t - k as f64;
            let sinc = if u == 0.0 {
                1.0
            } else {
                let a = 2.0 * std::f64::consts::PI * cutoff * u;
                a.sin() / a
            };
            let win_arg = u / support;
            let win = 0.42 + 0.5 * (std::f64::consts::PI * win_arg).cos()
                + 0.08 * (2.0 * std::f64::consts::PI * win_arg).cos();
            let h = 2.0 * cutoff * sinc * win;
            acc += x[k as usize] as f64 * h;
            norm += h;
        }
        // Per-sample kernel normalization pins the passband gain at exactly 1.
        out.push(if norm.abs() > 1e-12 {
            (acc / norm) as f32
        } else {
            0.0
        });
    }
    out
}

/// Draw `n` uniformly placed fixed-length mono excerpts; deterministic in the
/// seed. Errors if any source is shorter than the excerpt.
pub fn sample_excerpts(
    dataset: &[Waveform],
    n: usize,
    len_samples: usize,
    seed: u64,
) -> Result<ExcerptBatch> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    for (i, w) in dataset.iter().enumerate() {
        if w.len_samples() < len_samples {
            return Err(Error::InvalidArgument(format!(
                "source {} has {} samples, excerpt needs {}",
                i,
                w.len_samples(),
                len_samples
            )));
        }
    }
    let monos: Vec<Vec<f32>> = dataset.iter().map(|w| w.to_mono()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excerpts = Vec::with_capacity(n);
    for _ in 0..n {
        let src = rng.random_range(0..monos.len());
        let max_start = monos[src].len() - len_samples;
        let start = if max_start == 0 {
            0
        } else {
            rng.random_range(0..=max_start)
        };
        excerpts.push(monos[src][start..start + len_samples].to_vec());
    }
    Ok(ExcerptBatch {
        excerpts,
        excerpt_samples: len_samples,
    })
}

/// Recursively collect `.wav` files under a directory, sorted for determinism.
pub fn scan_dataset(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDependency(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}
