//! Gaussian-KDE note density and tempo conditioning signals.
//!
//! Density is estimated on normalized song position in [0, 1] (the bandwidth
//! is a fraction of the piece, not absolute seconds), sampled at a fixed
//! output rate, then log-scaled into [0, 1] against a corpus reference level.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default KDE bandwidth on normalized time.
pub const KDE_BANDWIDTH: f64 = 0.004;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DensityKind {
    NoteDensity,
    TempoScalar,
}

/// A conditioning signal in [0, 1] sampled at `rate_hz`.
#[derive(Clone, Debug)]
pub struct DensitySignal {
    pub values: Vec<f64>,
    pub rate_hz: f64,
    pub kind: DensityKind,
}

/// Raw KDE: `d(t) = sum_i N(t; o_i, bandwidth^2)` on normalized time,
/// sampled at `out_rate` over `[0, duration_s)`.
pub fn kde_density_raw(
    onsets_s: &[f64],
    duration_s: f64,
    bandwidth: f64,
    out_rate: f64,
) -> Result<Vec<f64>> {
    if duration_s <= 0.0 {
        return Err(Error::InvalidArgument("zero duration".into()));
    }
    if bandwidth <= 0.0 {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    for &o in onsets_s {
        if !(0.0..=duration_s).contains(&o) {
            return Err(Error::InvalidArgument(format!(
                "onset {} outside [0, {}]",
                o, duration_s
            )));
        }
    }
    let n_out = (duration_s * out_rate).ceil() as usize;
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut out = vec![0.0f64; n_out];
    for (j, v) in out.iter_mut().enumerate() {
        let t = (j as f64 / out_rate) / duration_s;
        let mut acc = 0.0;
        for &o in onsets_s {
            let z = (t - o / duration_s) / bandwidth;
            acc += norm * (-0.5 * z * z).exp();
        }
        *v = acc;
    }
    Ok(out)
}

/// Log-scale a raw density into [0, 1]: `clip(log(1+d) / log(1+d_ref), 0, 1)`.
pub fn log_scale_density(raw: &[f64], d_ref: f64) -> Vec<f64> {
    let denom = (1.0 + d_ref.max(1e-12)).ln();
    raw.iter()
        .map(|&d| ((1.0 + d.max(0.0)).ln() / denom).clamp(0.0, 1.0))
        .collect()
}

/// Full note-density signal: raw KDE followed by log scaling.
pub fn kde_density(
    onsets_s: &[f64],
    duration_s: f64,
    bandwidth: f64,
    out_rate: f64,
    d_ref: f64,
) -> Result<DensitySignal> {
    let raw = kde_density_raw(onsets_s, duration_s, bandwidth, out_rate)?;
    Ok(DensitySignal {
        values: log_scale_density(&raw, d_ref),
        rate_hz: out_rate,
        kind: DensityKind::NoteDensity,
    })
}

/// 99th percentile of pooled raw densities; the corpus reference level for
/// log scaling. Persisted alongside trained models.
pub fn density_reference(raw_corpus: &[Vec<f64>]) -> f64 {
    let mut pooled: Vec<f64> = raw_corpus.iter().flatten().cloned().collect();
    if pooled.is_empty() {
        return 1.0;
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((pooled.len() as f64) * 0.99).floor() as usize;
    pooled[idx.min(pooled.len() - 1)].max(1e-9)
}

impl DensitySignal {
    /// Resample by nearest neighbor to a new rate over the same duration,
    /// holding the last value if the target runs past the end.
    pub fn resample_nearest(&self, new_rate: f64, n_out: usize) -> DensitySignal {
        let values = (0..n_out)
            .map(|j| {
                let t = j as f64 / new_rate;
                let src = (t * self.rate_hz).round() as usize;
                self.values[src.min(self.values.len().saturating_sub(1))]
            })
            .collect();
        DensitySignal {
            values,
            rate_hz: new_rate,
            kind: self.kind,
        }
    }

    /// Serialize as `time_s,value` CSV rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        writeln!(f, "time_s,value").map_err(|e| Error::io(path, e))?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(f, "{},{}", j as f64 / self.rate_hz, v).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Parse a `time_s,value` CSV. The rate is inferred from the first two
    /// timestamps (a single-row file gets 1 Hz).
    pub fn read_csv(path: &Path, kind: DensityKind) -> Result<DensitySignal> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if i == 0 || line.is_empty() {
                continue; // header
            }
            let mut parts = line.split(',');
            let (t, v) = (parts.next(), parts.next());
            match (t, v) {
                (Some(t), Some(v)) => {
                    times.push(t.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("bad csv time at line {}: {}", i + 1, e))
                    })?);
                    values.push(v.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("bad csv value at line {}: {}", i + 1, e))
                    })?);
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "malformed csv row at line {}",
                        i + 1
                    )))
                }
            }
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty conditioning csv".into()));
        }
        let rate_hz = if times.len() >= 2 && times[1] > times[0] {
            1.0 / (times[1] - times[0])
        } else {
            1.0
        };
        Ok(DensitySignal {
            values,
            rate_hz,
            kind,
        })
    }
}
