//! Flat `key = value` configuration shared by the CLI, training, and the
//! synthetic world. Unknown keys are rejected so typos surface early.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Every tunable of the system with its default. Serialized as flat
/// `key = value` text; the full snapshot is embedded in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // model
    pub n: usize,
    pub l: usize,
    pub c: usize,
    pub backbone_channels: usize,
    pub heads: usize,
    pub points: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,

    // loss
    pub lambda_cls: f64,
    pub lambda_r: f64,
    pub lambda_l1: f64,
    pub lambda_iou: f64,
    pub lambda_emb: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,

    // inference
    pub alpha_select: f64,
    pub theta: f64,
    pub test_width: u32,
    pub test_height: u32,

    // training
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// `epoch:length` pairs; the active entry is the last whose epoch is
    /// `<=` the current one. Lengths count the template frame.
    pub curriculum: Vec<(usize, usize)>,
    pub train_sequences: usize,

    // synthetic world
    pub world_width: u32,
    pub world_height: u32,
    pub world_seq_len: usize,
    pub world_sequences: usize,
    pub world_target_min: u32,
    pub world_target_max: u32,
    pub world_speed_min: f64,
    pub world_speed_max: f64,
    pub world_turn_noise: f64,
    pub world_occlusion_prob: f64,
    pub world_out_of_view_prob: f64,
    pub world_absent_min: usize,
    pub world_absent_max: usize,
    pub world_reappear_min_disp: f64,
    pub world_distractors: usize,
    pub world_distractor_similarity: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n: 10,
            l: 5,
            c: 64,
            backbone_channels: 128,
            heads: 4,
            points: 4,
            encoder_layers: 2,
            decoder_layers: 2,

            lambda_cls: 1.0,
            lambda_r: 5.0,
            lambda_l1: 5.0,
            lambda_iou: 2.0,
            lambda_emb: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,

            alpha_select: 1.0,
            theta: 0.5,
            test_width: 640,
            test_height: 480,

            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 8,
            epochs: 10,
            weight_decay: 1e-4,
            clip_norm: 0.5,
            curriculum: vec![(0, 2), (2, 3), (4, 4), (6, 5), (8, 6)],
            train_sequences: 64,

            world_width: 320,
            world_height: 240,
            world_seq_len: 40,
            world_sequences: 16,
            world_target_min: 24,
            world_target_max: 56,
            world_speed_min: 2.0,
            world_speed_max: 6.0,
            world_turn_noise: 0.3,
            world_occlusion_prob: 0.25,
            world_out_of_view_prob: 0.25,
            world_absent_min: 2,
            world_absent_max: 5,
            world_reappear_min_disp: 0.2,
            world_distractors: 2,
            world_distractor_similarity: 0.5,
        }
    }
}

fn parse_curriculum(s: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (e, l) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("curriculum entry `{part}` wants epoch:length")))?;
        let epoch: usize = e
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad curriculum epoch `{e}`")))?;
        let len: usize = l
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad curriculum length `{l}`")))?;
        out.push((epoch, len));
    }
    if out.is_empty() {
        return Err(Error::Config("empty curriculum".into()));
    }
    out.sort();
    Ok(out)
}

fn curriculum_string(c: &[(usize, usize)]) -> String {
    c.iter()
        .map(|(e, l)| format!("{e}:{l}"))
        .collect::<Vec<_>>()
        .join(",")
}

macro_rules! config_keys {
    ($($key:literal => $field:ident : $kind:tt),+ $(,)?) => {
        impl Config {
            fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => config_keys!(@set self, $field, $kind, key, value),)+
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// Canonical flat text form, one key per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(config_keys!(@emit self, s, $key, $field, $kind);)+
                s
            }
        }
    };
    (@set $self:ident, $field:ident, curriculum, $key:ident, $value:ident) => {
        $self.$field = parse_curriculum($value)?
    };
    (@set $self:ident, $field:ident, $ty:tt, $key:ident, $value:ident) => {
        $self.$field = $value.trim().parse::<$ty>().map_err(|_| {
            Error::Config(format!("bad value `{}` for `{}`", $value, $key))
        })?
    };
    (@emit $self:ident, $s:ident, $key:literal, $field:ident, curriculum) => {
        let _ = writeln!($s, "{} = {}", $key, curriculum_string(&$self.$field));
    };
    (@emit $self:ident, $s:ident, $key:literal, $field:ident, $ty:tt) => {
        let _ = writeln!($s, "{} = {}", $key, $self.$field);
    };
}

config_keys! {
    "n" => n: usize,
    "l" => l: usize,
    "c" => c: usize,
    "backbone_channels" => backbone_channels: usize,
    "heads" => heads: usize,
    "points" => points: usize,
    "encoder_layers" => encoder_layers: usize,
    "decoder_layers" => decoder_layers: usize,
    "lambda_cls" => lambda_cls: f64,
    "lambda_r" => lambda_r: f64,
    "lambda_l1" => lambda_l1: f64,
    "lambda_iou" => lambda_iou: f64,
    "lambda_emb" => lambda_emb: f64,
    "focal_gamma" => focal_gamma: f64,
    "focal_alpha" => focal_alpha: f64,
    "alpha_select" => alpha_select: f64,
    "theta" => theta: f64,
    "test_width" => test_width: u32,
    "test_height" => test_height: u32,
    "lr" => lr: f64,
    "lr_decay_factor" => lr_decay_factor: f64,
    "lr_decay_epoch" => lr_decay_epoch: usize,
    "epochs" => epochs: usize,
    "weight_decay" => weight_decay: f64,
    "clip_norm" => clip_norm: f64,
    "curriculum" => curriculum: curriculum,
    "train_sequences" => train_sequences: usize,
    "world_width" => world_width: u32,
    "world_height" => world_height: u32,
    "world_seq_len" => world_seq_len: usize,
    "world_sequences" => world_sequences: usize,
    "world_target_min" => world_target_min: u32,
    "world_target_max" => world_target_max: u32,
    "world_speed_min" => world_speed_min: f64,
    "world_speed_max" => world_speed_max: f64,
    "world_turn_noise" => world_turn_noise: f64,
    "world_occlusion_prob" => world_occlusion_prob: f64,
    "world_out_of_view_prob" => world_out_of_view_prob: f64,
    "world_absent_min" => world_absent_min: usize,
    "world_absent_max" => world_absent_max: usize,
    "world_reappear_min_disp" => world_reappear_min_disp: f64,
    "world_distractors" => world_distractors: usize,
    "world_distractor_similarity" => world_distractor_similarity: f64,
}

impl Config {
    /// Parse flat `key = value` text. `#` starts a comment; blank lines are
    /// ignored. Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set_key(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("need at least one local tracker".into()));
        }
        if self.l == 0 {
            return Err(Error::Config("memory length must be positive".into()));
        }
        if self.heads == 0 || self.c % self.heads != 0 {
            return Err(Error::Config(format!(
                "c {} must be divisible by heads {}",
                self.c, self.heads
            )));
        }
        if self.points == 0 {
            return Err(Error::Config("need at least one sample point".into()));
        }
        for (label, p) in [
            ("world_occlusion_prob", self.world_occlusion_prob),
            ("world_out_of_view_prob", self.world_out_of_view_prob),
            (
                "world_distractor_similarity",
                self.world_distractor_similarity,
            ),
            ("theta", self.theta),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{label} must lie in [0,1], got {p}")));
            }
        }
        if self.world_seq_len < 2 {
            return Err(Error::Config("world_seq_len must be at least 2".into()));
        }
        if self.world_target_min == 0 || self.world_target_max < self.world_target_min {
            return Err(Error::Config("bad target size range".into()));
        }
        if self.world_target_max >= self.world_width.min(self.world_height) {
            return Err(Error::Config(
                "target size must be smaller than the frame".into(),
            ));
        }
        if self.curriculum.is_empty() || self.curriculum.iter().any(|&(_, len)| len < 2) {
            return Err(Error::Config(
                "curriculum lengths must be at least 2 (template + one frame)".into(),
            ));
        }
        if self.world_absent_min == 0 || self.world_absent_max < self.world_absent_min {
            return Err(Error::Config("bad absent interval range".into()));
        }
        Ok(())
    }

    /// Total sample length (template frame included) for an epoch.
    pub fn curriculum_length(&self, epoch: usize) -> usize {
        let mut len = self.curriculum[0].1;
        for &(from, l) in &self.curriculum {
            if epoch >= from {
                len = l;
            }
        }
        len
    }
}
