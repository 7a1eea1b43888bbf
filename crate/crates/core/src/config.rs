//! Run configuration: one human-editable TOML file covering both autoencoder
//! levels, the latent GAN, and the pipeline paths. Three presets ship:
//!
//! * `piano-like`  — full-scale single-channel setup: r_time = 256 * 16 = 4096,
//!   level-2 latent dimension 32, seq_len 64, note-density conditioning.
//! * `techno-like` — stereo setup: r_time = 256 * 8 = 2048, level-2 latent
//!   dimension 64, seq_len 128, tempo conditioning.
//! * `toy`         — desk-scale preset every test and example runs on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    NoteDensity,
    Tempo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioCfg {
    /// Target sample rate, Hz.
    pub sample_rate: u32,
    /// Training excerpt length in seconds.
    pub excerpt_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeCfg {
    /// STFT analysis size; bins = fft_size/2 + 1 become conv channels.
    pub fft_size: usize,
    /// STFT hop; the level-1 time compression r_time^1 (the encoder is
    /// stride-1 over frames).
    pub hop_size: usize,
    /// Level-1 latent dimension per timestep.
    pub latent1_dim: usize,
    /// Level-2 stride product r_time^2; total r_time = hop_size * r_time2.
    pub r_time2: usize,
    /// Level-2 latent dimension per timestep.
    pub latent2_dim: usize,
    /// Hidden width of the level-1 encoder/decoder convs.
    pub width1: usize,
    /// Hidden width of the level-2 encoder/decoder convs.
    pub width2: usize,
    /// Base channel count of the spectrogram discriminator.
    pub d_width: usize,
    pub lambda_rec: f64,
    pub lambda_ms: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub r1_gamma: f64,
    pub batch: usize,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub l2_phase1_steps: usize,
    pub l2_phase2_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCfg {
    /// Latent timesteps one generator call produces.
    pub seq_len: usize,
    /// Anchor/style dimension d.
    pub coord_dim: usize,
    /// Generator trunk width.
    pub g_width: usize,
    /// Discriminator width.
    pub d_width: usize,
    /// Stereo models stack two latent vectors per timestep channelwise.
    pub stereo: bool,
    pub conditioning: Conditioning,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub r1_gamma: f64,
    pub batch: usize,
    pub steps: usize,
    /// Weight of the discriminator's self-reconstruction loss.
    pub recon_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathsCfg {
    pub dataset_dir: PathBuf,
    pub work_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub audio: AudioCfg,
    pub ae: AeCfg,
    pub gan: GanCfg,
    pub paths: PathsCfg,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig> {
        let base = RunConfig {
            preset: name.to_string(),
            seed: 7,
            audio: AudioCfg {
                sample_rate: 22050,
                excerpt_seconds: 0.76,
            },
            ae: AeCfg {
                fft_size: 1024,
                hop_size: 256,
                latent1_dim: 128,
                r_time2: 16,
                latent2_dim: 32,
                width1: 128,
                width2: 128,
                d_width: 32,
                lambda_rec: 1.0,
                lambda_ms: 4.0,
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.999,
                adam_eps: 1e-8,
                r1_gamma: 10.0,
                batch: 8,
                phase1_steps: 20_000,
                phase2_steps: 20_000,
                l2_phase1_steps: 10_000,
                l2_phase2_steps: 10_000,
            },
            gan: GanCfg {
                seq_len: 64,
                coord_dim: 64,
                g_width: 96,
                d_width: 96,
                stereo: false,
                conditioning: Conditioning::None,
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.999,
                adam_eps: 1e-8,
                r1_gamma: 10.0,
                batch: 8,
                steps: 50_000,
                recon_weight: 1.0,
            },
            paths: PathsCfg {
                dataset_dir: PathBuf::from("data"),
                work_dir: PathBuf::from("work"),
            },
        };
        let cfg = match name {
            // r_time = 256 * 16 = 4096, latent dim 32, seq_len 64, mono.
            "piano-like" => base,
            // r_time = 256 * 8 = 2048, latent dim 64, seq_len 128, stereo.
            "techno-like" => {
                let mut c = base;
                c.ae.r_time2 = 8;
                c.ae.latent2_dim = 64;
                c.gan.seq_len = 128;
                c.gan.stereo = true;
                c.gan.conditioning = Conditioning::Tempo;
                c
            }
            "toy" => {
                let mut c = base;
                c.ae.latent1_dim = 16;
                c.ae.r_time2 = 4;
                c.ae.latent2_dim = 8;
                c.ae.width1 = 32;
                c.ae.width2 = 24;
                c.ae.d_width = 12;
                c.ae.batch = 4;
                c.ae.phase1_steps = 1500;
                c.ae.phase2_steps = 1200;
                c.ae.l2_phase1_steps = 800;
                c.ae.l2_phase2_steps = 600;
                c.gan.seq_len = 16;
                c.gan.coord_dim = 16;
                c.gan.g_width = 32;
                c.gan.d_width = 32;
                c.gan.batch = 4;
                c.gan.steps = 20_000;
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (piano-like | techno-like | toy)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Total waveform-to-latent-2 compression ratio r_time.
    pub fn r_time(&self) -> usize {
        self.ae.hop_size * self.ae.r_time2
    }

    /// Level-1 latent rate, Hz.
    pub fn latent1_rate(&self) -> f64 {
        self.audio.sample_rate as f64 / self.ae.hop_size as f64
    }

    /// Level-2 latent rate, Hz.
    pub fn latent2_rate(&self) -> f64 {
        self.audio.sample_rate as f64 / self.r_time() as f64
    }

    pub fn excerpt_samples(&self) -> usize {
        (self.audio.excerpt_seconds * self.audio.sample_rate as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.ae.fft_size.is_power_of_two() || !self.ae.hop_size.is_power_of_two() {
            return fail("fft_size and hop_size must be powers of two".into());
        }
        if self.ae.fft_size % self.ae.hop_size != 0 || self.ae.fft_size / self.ae.hop_size < 2 {
            return fail("hop must divide fft with at least 2x overlap".into());
        }
        if !self.ae.r_time2.is_power_of_two() {
            return fail("r_time2 must be a power of two".into());
        }
        if self.gan.seq_len % 4 != 0 {
            return fail(format!(
                "seq_len {} must be a multiple of the generator's internal stride (4)",
                self.gan.seq_len
            ));
        }
        if self.audio.excerpt_seconds <= 0.0 {
            return fail("excerpt_seconds must be positive".into());
        }
        Ok(())
    }

    /// Canonical text embedded into checkpoints and hashed into artifacts.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    // Artifact locations under work_dir.
    pub fn ae1_checkpoint(&self) -> PathBuf {
        self.paths.work_dir.join("ae1.ckpt")
    }
    pub fn ae2_checkpoint(&self) -> PathBuf {
        self.paths.work_dir.join("ae2.ckpt")
    }
    pub fn gan_checkpoint(&self) -> PathBuf {
        self.paths.work_dir.join("gan.ckpt")
    }
    pub fn latent_cache_dir(&self) -> PathBuf {
        self.paths.work_dir.join("latents")
    }
    pub fn density_ref_path(&self) -> PathBuf {
        self.paths.work_dir.join("density_ref.json")
    }
}

/// An annotated example config (the file `preprocess` writes when asked).
pub fn example_toml(cfg: &RunConfig) -> String {
    let body = cfg.to_toml();
    let header = "\
# Pipeline configuration.
#
# Naming follows the symbols used throughout the docs:
#   hop_size    r_time^1, waveform samples per level-1 latent step
#   r_time2     r_time^2, level-1 steps per level-2 step (total r_time = hop_size * r_time2)
#   latent1_dim / latent2_dim   latent vector dimensions per level
#   seq_len     level-2 latent steps one generator call produces
#   coord_dim   d, dimension of anchor and style vectors
#   lambda_rec, lambda_ms       decoder loss weights
#   beta1       Adam first-moment decay
#   r1_gamma    gradient-penalty coefficient
";
    format!("{header}\n{body}")
}
