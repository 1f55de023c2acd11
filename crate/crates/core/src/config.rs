//! Model and training configuration, and the `key = value` file format.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Single person per pass, 64×64 heatmap decoder.
    Heatmap,
    /// Multi-person, direct (x, y) regression.
    Point,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Heatmap => "heatmap",
            Variant::Point => "point",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heatmap" => Ok(Variant::Heatmap),
            "point" => Ok(Variant::Point),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Scene images are `image_size × image_size × 3`.
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Person slots per forward pass.
    pub n_persons: usize,
    /// Width of the gaze backbone output.
    pub d_emb: usize,
    /// Head crops are `crop_size × crop_size × 3`; must be divisible by 16.
    pub crop_size: usize,
    /// Channels of the first three backbone blocks (the fourth emits `d_emb`).
    pub backbone: [usize; 3],
    /// Hidden width of the gaze-vector MLP.
    pub gaze_hidden: usize,
    /// Feature width inside the heatmap fusion path.
    pub fusion: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ModelConfig {
    /// ViT-Base sized model on 224×224 inputs.
    pub fn paper(variant: Variant) -> Self {
        ModelConfig {
            variant,
            image_size: 224,
            patch: 16,
            dim: 768,
            depth: 12,
            heads: 12,
            n_persons: if variant == Variant::Heatmap { 1 } else { 6 },
            d_emb: 512,
            crop_size: 224,
            backbone: [32, 64, 128],
            gaze_hidden: 128,
            fusion: 256,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    /// The toy-world model: 112×112 scenes, D=64, 4 blocks of 4 heads.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            image_size: 112,
            patch: 16,
            dim: 64,
            depth: 4,
            heads: 4,
            n_persons: if variant == Variant::Heatmap { 1 } else { 4 },
            d_emb: 64,
            crop_size: 32,
            backbone: [16, 32, 32],
            gaze_hidden: 128,
            fusion: 32,
            mean: [0.2, 0.2, 0.2],
            std: [0.3, 0.3, 0.3],
        }
    }

    /// Smallest configuration, for finite-difference checks.
    pub fn micro(variant: Variant) -> Self {
        ModelConfig {
            variant,
            image_size: 48,
            patch: 16,
            dim: 32,
            depth: 2,
            heads: 2,
            n_persons: if variant == Variant::Heatmap { 1 } else { 2 },
            d_emb: 16,
            crop_size: 16,
            backbone: [4, 8, 8],
            gaze_hidden: 16,
            fusion: 8,
            mean: [0.2, 0.2, 0.2],
            std: [0.3, 0.3, 0.3],
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn n_image_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_image_tokens() + self.n_persons + 1
    }

    /// Encoder layers (1-based) feeding the heatmap decoder: L/4, L/2, 3L/4, L rounded up.
    pub fn tap_layers(&self) -> [usize; 4] {
        let l = self.depth;
        [l.div_ceil(4).max(1), l.div_ceil(2).max(1), (3 * l).div_ceil(4).max(1), l]
    }

    /// Channel widths of the four heatmap reassembly stages.
    pub fn stage_channels(&self) -> [usize; 4] {
        let d = self.dim;
        [(d / 8).max(1), (d / 4).max(1), (d / 2).max(1), d]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.image_size == 0 || self.image_size % self.patch != 0 {
            return fail(format!(
                "image_size {} is not divisible by patch {}",
                self.image_size, self.patch
            ));
        }
        if self.dim == 0 || self.dim % 4 != 0 {
            return fail(format!("dim {} must be a positive multiple of 4", self.dim));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.n_persons == 0 {
            return fail("n_persons must be at least 1".into());
        }
        if self.variant == Variant::Heatmap && self.n_persons != 1 {
            return fail(format!(
                "heatmap variant takes exactly one person per pass, got n_persons = {}",
                self.n_persons
            ));
        }
        if self.crop_size == 0 || self.crop_size % 16 != 0 {
            return fail(format!("crop_size {} must be a multiple of 16", self.crop_size));
        }
        if self.d_emb == 0 || self.backbone.contains(&0) || self.gaze_hidden == 0 {
            return fail("backbone widths must be positive".into());
        }
        if self.fusion < 2 {
            return fail(format!("fusion width {} must be at least 2", self.fusion));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return fail("standardization std must be positive".into());
        }
        Ok(())
    }
}

/// Everything a training run needs; serialized as the `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base_lr: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    /// Length of the first cosine cycle.
    pub restart_period: u64,
    pub restart_mult: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Forward passes per optimizer step.
    pub batch_size: usize,
    pub total_steps: u64,
    pub lambda_reg: f64,
    pub lambda_ang: f64,
    pub lambda_io: f64,
    pub seed: u64,
    pub train_data: String,
    pub val_data: String,
    /// Steps between validation passes; 0 evaluates only at the end.
    pub eval_every: u64,
    /// Cap on validation samples per pass; 0 uses the whole split.
    pub eval_samples: usize,
    /// Steps between periodic checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    pub checkpoint_dir: String,
}

impl TrainConfig {
    /// Desk-scale defaults for `variant`.
    pub fn desk(variant: Variant) -> Self {
        let w = crate::losses::LossWeights::for_variant(variant);
        TrainConfig {
            model: ModelConfig::desk(variant),
            base_lr: 3e-4,
            lr_min: 1e-6,
            warmup_steps: 200,
            restart_period: 1000,
            restart_mult: 2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            batch_size: 8,
            total_steps: 3000,
            lambda_reg: w.reg,
            lambda_ang: w.ang,
            lambda_io: w.io,
            seed: 0,
            train_data: String::new(),
            val_data: String::new(),
            eval_every: 500,
            eval_samples: 0,
            checkpoint_every: 0,
            checkpoint_dir: "checkpoints".into(),
        }
    }

    pub fn loss_weights(&self) -> crate::losses::LossWeights {
        crate::losses::LossWeights {
            reg: self.lambda_reg,
            ang: self.lambda_ang,
            io: self.lambda_io,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.restart_period == 0 || self.restart_mult == 0 {
            return fail("restart_period and restart_mult must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.base_lr) {
            return fail("learning rates must satisfy 0 <= lr_min <= base_lr, base_lr > 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("betas must lie in [0, 1)");
        }
        let nonneg = [self.weight_decay, self.adam_eps, self.clip_norm, self.lambda_reg, self.lambda_ang, self.lambda_io];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return fail("weight decay, eps, clip norm and loss weights must be finite and nonnegative");
        }
        Ok(())
    }

    /// The config as `key = value` lines, one per field.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let list = |v: &[f32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pairs: Vec<(&str, String)> = vec![
            ("variant", m.variant.to_string()),
            ("image_size", m.image_size.to_string()),
            ("patch", m.patch.to_string()),
            ("dim", m.dim.to_string()),
            ("depth", m.depth.to_string()),
            ("heads", m.heads.to_string()),
            ("n_persons", m.n_persons.to_string()),
            ("d_emb", m.d_emb.to_string()),
            ("crop_size", m.crop_size.to_string()),
            ("backbone", m.backbone.map(|c| c.to_string()).join(",")),
            ("gaze_hidden", m.gaze_hidden.to_string()),
            ("fusion", m.fusion.to_string()),
            ("mean", list(&m.mean)),
            ("std", list(&m.std)),
            ("base_lr", self.base_lr.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("restart_period", self.restart_period.to_string()),
            ("restart_mult", self.restart_mult.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("lambda_reg", self.lambda_reg.to_string()),
            ("lambda_ang", self.lambda_ang.to_string()),
            ("lambda_io", self.lambda_io.to_string()),
            ("seed", self.seed.to_string()),
            ("train_data", self.train_data.clone()),
            ("val_data", self.val_data.clone()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("checkpoint_dir", self.checkpoint_dir.clone()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key = value` lines. `preset` (paper | desk | micro) and
    /// `variant` pick the defaults; any other key overrides one field.
    /// Blank lines and `#` comments are ignored, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    field: line.into(),
                    msg: "expected `key = value`".into(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(_, key, _): &(usize, &str, &str)| *key == k) {
                return Err(Error::Parse {
                    line: i + 1,
                    field: k.into(),
                    msg: "duplicate key".into(),
                });
            }
            pairs.push((i + 1, k, v));
        }
        let lookup = |key: &str| pairs.iter().find(|(_, k, _)| *k == key);
        let variant = match lookup("variant") {
            Some((line, _, v)) => v.parse().map_err(|_| Error::Parse {
                line: *line,
                field: "variant".into(),
                msg: format!("unknown variant `{v}`"),
            })?,
            None => Variant::Point,
        };
        let mut cfg = TrainConfig::desk(variant);
        match lookup("preset") {
            None | Some((_, _, "desk")) => {}
            Some((_, _, "paper")) => cfg.model = ModelConfig::paper(variant),
            Some((_, _, "micro")) => cfg.model = ModelConfig::micro(variant),
            Some((line, _, v)) => {
                return Err(Error::Parse {
                    line: *line,
                    field: "preset".into(),
                    msg: format!("unknown preset `{v}`"),
                })
            }
        }
        for &(line, key, value) in &pairs {
            cfg.set(key, value).map_err(|msg| Error::Parse {
                line,
                field: key.into(),
                msg,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<N: FromStr>(v: &str) -> std::result::Result<N, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        fn triple<N: FromStr + Copy>(v: &str) -> std::result::Result<[N; 3], String> {
            let parts = v.split(',').map(|s| num::<N>(s.trim())).collect::<std::result::Result<Vec<_>, _>>()?;
            <[N; 3]>::try_from(parts).map_err(|_| format!("expected three comma-separated values, got `{v}`"))
        }
        let m = &mut self.model;
        match key {
            "preset" | "variant" => {}
            "image_size" => m.image_size = num(v)?,
            "patch" => m.patch = num(v)?,
            "dim" => m.dim = num(v)?,
            "depth" => m.depth = num(v)?,
            "heads" => m.heads = num(v)?,
            "n_persons" => m.n_persons = num(v)?,
            "d_emb" => m.d_emb = num(v)?,
            "crop_size" => m.crop_size = num(v)?,
            "backbone" => m.backbone = triple(v)?,
            "gaze_hidden" => m.gaze_hidden = num(v)?,
            "fusion" => m.fusion = num(v)?,
            "mean" => m.mean = triple(v)?,
            "std" => m.std = triple(v)?,
            "base_lr" => self.base_lr = num(v)?,
            "lr_min" => self.lr_min = num(v)?,
            "warmup_steps" => self.warmup_steps = num(v)?,
            "restart_period" => self.restart_period = num(v)?,
            "restart_mult" => self.restart_mult = num(v)?,
            "weight_decay" => self.weight_decay = num(v)?,
            "beta1" => self.beta1 = num(v)?,
            "beta2" => self.beta2 = num(v)?,
            "adam_eps" => self.adam_eps = num(v)?,
            "clip_norm" => self.clip_norm = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "total_steps" => self.total_steps = num(v)?,
            "lambda_reg" => self.lambda_reg = num(v)?,
            "lambda_ang" => self.lambda_ang = num(v)?,
            "lambda_io" => self.lambda_io = num(v)?,
            "seed" => self.seed = num(v)?,
            "train_data" => self.train_data = v.into(),
            "val_data" => self.val_data = v.into(),
            "eval_every" => self.eval_every = num(v)?,
            "eval_samples" => self.eval_samples = num(v)?,
            "checkpoint_every" => self.checkpoint_every = num(v)?,
            "checkpoint_dir" => self.checkpoint_dir = v.into(),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_validate() {
        for v in [Variant::Heatmap, Variant::Point] {
            ModelConfig::paper(v).validate().unwrap();
            ModelConfig::desk(v).validate().unwrap();
            ModelConfig::micro(v).validate().unwrap();
            TrainConfig::desk(v).validate().unwrap();
        }
        assert_eq!(ModelConfig::paper(Variant::Point).tap_layers(), [3, 6, 9, 12]);
        assert_eq!(ModelConfig::paper(Variant::Point).n_tokens(), 203);
    }

    #[test]
    fn heatmap_with_many_persons_is_rejected() {
        let text = "variant = heatmap\nn_persons = 3\n";
        assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_is_named() {
        match TrainConfig::parse("dim = 64\nlearning_rate = 0.1\n") {
            Err(Error::Parse { line, field, .. }) => assert_eq!((line, field.as_str()), (2, "learning_rate")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_and_syntax_are_reported() {
        assert!(matches!(TrainConfig::parse("dim = sixty"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(TrainConfig::parse("# c\n\ndim 64"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(TrainConfig::parse("dim = 64\ndim = 32"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(TrainConfig::parse("mean = 1,2"), Err(Error::Parse { .. })));
    }

    #[test]
    fn presets_and_overrides() {
        let c = TrainConfig::parse("preset = micro\nvariant = heatmap\nbase_lr = 0.001\n").unwrap();
        assert_eq!(c.model, ModelConfig::micro(Variant::Heatmap));
        assert_eq!(c.base_lr, 0.001);
        assert_eq!(c.lambda_reg, 1000.0);
    }

    proptest! {
        #[test]
        fn text_round_trips(
            lr in 1e-7f64..1.0,
            wd in 0.0f64..0.5,
            seed in any::<u64>(),
            bs in 1usize..64,
            mean in proptest::array::uniform3(0.0f32..1.0),
            data in "[a-z/_.]{0,12}",
            heatmap in any::<bool>(),
        ) {
            let v = if heatmap { Variant::Heatmap } else { Variant::Point };
            let mut c = TrainConfig::desk(v);
            c.base_lr = lr;
            c.lr_min = lr / 10.0;
            c.weight_decay = wd;
            c.seed = seed;
            c.batch_size = bs;
            c.model.mean = mean;
            c.train_data = data;
            prop_assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
