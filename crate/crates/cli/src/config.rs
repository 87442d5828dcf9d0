//! Flat key-value run configuration shared by every subcommand.
//!
//! The on-disk form is one `key = value` pair per line, `#` comments, and
//! nothing else. Unknown keys are rejected rather than ignored, and every
//! command writes the fully resolved configuration next to its outputs, so
//! a run can always be reproduced from what it left behind.

use trackgen_core::denoiser::{
    DenoiserConfig, EnhancerPos, InstanceFusion, Stage, TrainConfig,
};
use trackgen_core::enhancer::MotionFusion;
use trackgen_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    // data
    pub seed: u64,
    pub clips: usize,
    pub frames: usize,
    pub instances: usize,
    pub width: usize,
    pub height: usize,
    // model
    pub patch: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub roi_r: usize,
    pub n_freq: usize,
    pub k_max: usize,
    pub categories: usize,
    // training
    pub stage: String,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub momentum: f64,
    pub cond_drop: f64,
    pub log_every: usize,
    // sampling and evaluation
    pub cfg_scale: f64,
    pub sample_steps: usize,
    pub min_miou: f64,
    // ablations
    pub fusion: String,
    pub enhancer_pos: String,
    pub motion_fusion: String,
    pub no_instance_emb: bool,
    pub no_enhancer: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// The full-size desk preset: 32x32 frames, 8-frame clips.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            clips: 64,
            frames: 8,
            instances: 3,
            width: 32,
            height: 32,
            patch: 4,
            dim: 64,
            blocks: 2,
            heads: 4,
            mlp_hidden: 128,
            roi_r: 4,
            n_freq: 8,
            k_max: 8,
            categories: 8,
            stage: "image".into(),
            steps: 3000,
            batch: 8,
            lr: 1e-2,
            lr_final: 2e-4,
            momentum: 0.9,
            cond_drop: 0.1,
            log_every: 50,
            cfg_scale: 5.0,
            sample_steps: 50,
            min_miou: 0.95,
            fusion: "cross".into(),
            enhancer_pos: "decoder".into(),
            motion_fusion: "concat".into(),
            no_instance_emb: false,
            no_enhancer: false,
        }
    }

    /// A reduced preset for quick experiments and the ablation sweeps.
    pub fn mini() -> Self {
        RunConfig {
            clips: 16,
            frames: 4,
            instances: 2,
            width: 16,
            height: 16,
            dim: 24,
            mlp_hidden: 48,
            roi_r: 2,
            n_freq: 4,
            steps: 600,
            batch: 2,
            ..RunConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "mini" => Ok(RunConfig::mini()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}, expected desk or mini"
            ))),
        }
    }

    /// Apply one `key = value` pair. Unknown keys and malformed values are
    /// config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("config key {key}: cannot parse {value:?}"))
            })
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(Error::Config(format!(
                    "config key {key}: expected true/false, got {value:?}"
                ))),
            }
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "clips" => self.clips = num(key, value)?,
            "frames" => self.frames = num(key, value)?,
            "instances" => self.instances = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "blocks" => self.blocks = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "mlp_hidden" => self.mlp_hidden = num(key, value)?,
            "roi_r" => self.roi_r = num(key, value)?,
            "n_freq" => self.n_freq = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "categories" => self.categories = num(key, value)?,
            "stage" => self.stage = value.to_string(),
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_final" => self.lr_final = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "cond_drop" => self.cond_drop = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "cfg_scale" => self.cfg_scale = num(key, value)?,
            "sample_steps" => self.sample_steps = num(key, value)?,
            "min_miou" => self.min_miou = num(key, value)?,
            "fusion" => self.fusion = value.to_string(),
            "enhancer_pos" => self.enhancer_pos = value.to_string(),
            "motion_fusion" => self.motion_fusion = value.to_string(),
            "no_instance_emb" => self.no_instance_emb = flag(key, value)?,
            "no_enhancer" => self.no_enhancer = flag(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse a whole config document on top of this configuration.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The resolved configuration as a document `apply_file` accepts.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("seed", self.seed.to_string());
        push("clips", self.clips.to_string());
        push("frames", self.frames.to_string());
        push("instances", self.instances.to_string());
        push("width", self.width.to_string());
        push("height", self.height.to_string());
        push("patch", self.patch.to_string());
        push("dim", self.dim.to_string());
        push("blocks", self.blocks.to_string());
        push("heads", self.heads.to_string());
        push("mlp_hidden", self.mlp_hidden.to_string());
        push("roi_r", self.roi_r.to_string());
        push("n_freq", self.n_freq.to_string());
        push("k_max", self.k_max.to_string());
        push("categories", self.categories.to_string());
        push("stage", self.stage.clone());
        push("steps", self.steps.to_string());
        push("batch", self.batch.to_string());
        push("lr", format!("{}", self.lr));
        push("lr_final", format!("{}", self.lr_final));
        push("momentum", format!("{}", self.momentum));
        push("cond_drop", format!("{}", self.cond_drop));
        push("log_every", self.log_every.to_string());
        push("cfg_scale", format!("{}", self.cfg_scale));
        push("sample_steps", self.sample_steps.to_string());
        push("min_miou", format!("{}", self.min_miou));
        push("fusion", self.fusion.clone());
        push("enhancer_pos", self.enhancer_pos.clone());
        push("motion_fusion", self.motion_fusion.clone());
        push("no_instance_emb", self.no_instance_emb.to_string());
        push("no_enhancer", self.no_enhancer.to_string());
        s
    }

    pub fn stage(&self) -> Result<Stage> {
        match self.stage.as_str() {
            "image" => Ok(Stage::Image),
            "video" => Ok(Stage::Video),
            other => Err(Error::Config(format!(
                "stage must be image or video, got {other:?}"
            ))),
        }
    }

    pub fn instance_fusion(&self) -> Result<InstanceFusion> {
        match self.fusion.as_str() {
            "cross" => Ok(InstanceFusion::GatedCross),
            "self" => Ok(InstanceFusion::GatedSelf),
            other => Err(Error::Config(format!(
                "fusion must be cross or self, got {other:?}"
            ))),
        }
    }

    pub fn enhancer_pos(&self) -> Result<EnhancerPos> {
        match self.enhancer_pos.as_str() {
            "encoder" => Ok(EnhancerPos::Encoder),
            "decoder" => Ok(EnhancerPos::Decoder),
            other => Err(Error::Config(format!(
                "enhancer_pos must be encoder or decoder, got {other:?}"
            ))),
        }
    }

    pub fn motion_fusion(&self) -> Result<MotionFusion> {
        match self.motion_fusion.as_str() {
            "concat" => Ok(MotionFusion::Concat),
            "add" => Ok(MotionFusion::Add),
            other => Err(Error::Config(format!(
                "motion_fusion must be concat or add, got {other:?}"
            ))),
        }
    }

    /// Latent extents implied by the frame extents and patch size.
    pub fn latent_extents(&self) -> Result<(usize, usize, usize)> {
        if self.patch == 0 || self.width % self.patch != 0 || self.height % self.patch != 0 {
            return Err(Error::Config(format!(
                "frame extents {}x{} not divisible by patch {}",
                self.width, self.height, self.patch
            )));
        }
        Ok((
            self.height / self.patch,
            self.width / self.patch,
            3 * self.patch * self.patch,
        ))
    }

    pub fn denoiser(&self) -> Result<DenoiserConfig> {
        let (latent_h, latent_w, channels) = self.latent_extents()?;
        let cfg = DenoiserConfig {
            frames: self.frames,
            latent_h,
            latent_w,
            channels,
            dim: self.dim,
            n_blocks: self.blocks,
            n_heads: self.heads,
            mlp_hidden: self.mlp_hidden,
            roi_r: self.roi_r,
            n_freq: self.n_freq,
            k_max: self.k_max,
            n_categories: self.categories,
            stage: self.stage()?,
            enhancer_pos: self.enhancer_pos()?,
            instance_fusion: self.instance_fusion()?,
            motion_fusion: self.motion_fusion()?,
            no_instance_emb: self.no_instance_emb,
            no_enhancer: self.no_enhancer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn trainer(&self) -> Result<TrainConfig> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_final > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must be positive, got lr = {}, lr_final = {}",
                self.lr, self.lr_final
            )));
        }
        if self.lr_final > self.lr {
            return Err(Error::Config(format!(
                "lr_final ({}) must not exceed lr ({}); the rate only decays",
                self.lr_final, self.lr
            )));
        }
        Ok(TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            lr_final: self.lr_final,
            momentum: self.momentum,
            cond_drop: self.cond_drop,
            log_every: self.log_every,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_is_identity() {
        let mut cfg = RunConfig::mini();
        cfg.seed = 99;
        cfg.no_enhancer = true;
        cfg.fusion = "self".into();
        let text = cfg.to_kv();
        let mut back = RunConfig::desk();
        back.apply_file(&text).unwrap();
        assert_eq!(back.to_kv(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::desk();
        let err = cfg.apply_file("steps = 5\nbogus_key = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let mut cfg = RunConfig::desk();
        cfg.apply_file("# a comment\n\n  steps = 7\n").unwrap();
        assert_eq!(cfg.steps, 7);
    }

    #[test]
    fn malformed_lines_and_values_are_config_errors() {
        let mut cfg = RunConfig::desk();
        assert!(cfg.apply_file("steps 7").is_err());
        assert!(cfg.apply_file("steps = seven").is_err());
        assert!(cfg.apply_file("no_enhancer = maybe").is_err());
    }

    #[test]
    fn extent_checks_catch_bad_patch() {
        let mut cfg = RunConfig::desk();
        cfg.patch = 5;
        assert!(cfg.latent_extents().is_err());
        cfg.patch = 4;
        assert_eq!(cfg.latent_extents().unwrap(), (8, 8, 48));
    }

    #[test]
    fn enum_fields_parse_and_reject() {
        let mut cfg = RunConfig::desk();
        assert!(cfg.stage().is_ok());
        cfg.stage = "audio".into();
        assert!(cfg.stage().is_err());
        cfg.fusion = "both".into();
        assert!(cfg.instance_fusion().is_err());
        cfg.enhancer_pos = "middle".into();
        assert!(cfg.enhancer_pos().is_err());
        cfg.motion_fusion = "mul".into();
        assert!(cfg.motion_fusion().is_err());
    }
}
