use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Overall arrangement of the stacked blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Linear then nonlinear extraction with residual subtraction after each.
    LiNo,
    /// N-BEATS style: one combined extractor per level, residual refinement.
    Mu,
    /// Blocks applied in sequence, single head on the final features.
    Raw,
    /// Sequential blocks, per-block heads, no residual subtraction.
    Ln,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LiNo, Variant::Mu, Variant::Raw, Variant::Ln];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::LiNo => "lino",
            Variant::Mu => "mu",
            Variant::Raw => "raw",
            Variant::Ln => "ln",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lino" => Ok(Variant::LiNo),
            "mu" | "nbeats" | "n-beats" => Ok(Variant::Mu),
            "raw" => Ok(Variant::Raw),
            "ln" => Ok(Variant::Ln),
            other => Err(ModelError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Component removals; only meaningful for [`Variant::LiNo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Ablation {
    pub no_li: bool,
    pub no_no: bool,
    /// Drop the temporal projection inside the nonlinear block.
    pub no_te: bool,
    /// Drop the frequency projection inside the nonlinear block.
    pub no_fe: bool,
    /// Replace the channel-mixing output with zero.
    pub no_cd: bool,
}

impl Ablation {
    pub fn is_none(&self) -> bool {
        *self == Ablation::default()
    }

    /// The five single-component removals plus the full model, in report order.
    pub fn study() -> [(&'static str, Ablation); 6] {
        let none = Ablation::default();
        [
            ("full", none),
            ("no_li", Ablation { no_li: true, ..none }),
            ("no_no", Ablation { no_no: true, ..none }),
            ("no_te", Ablation { no_te: true, ..none }),
            ("no_fe", Ablation { no_fe: true, ..none }),
            ("no_cd", Ablation { no_cd: true, ..none }),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (flag, name) in [
            (self.no_li, "no_li"),
            (self.no_no, "no_no"),
            (self.no_te, "no_te"),
            (self.no_fe, "no_fe"),
            (self.no_cd, "no_cd"),
        ] {
            if flag {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let mut out = Ablation::default();
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "full" | "none" => {}
                "no_li" => out.no_li = true,
                "no_no" => out.no_no = true,
                "no_te" => out.no_te = true,
                "no_fe" => out.no_fe = true,
                "no_cd" => out.no_cd = true,
                other => return Err(ModelError::Config(format!("unknown ablation `{other}`"))),
            }
        }
        Ok(out)
    }
}

/// Activation fusing the temporal and frequency features.
///
/// `Identity` exists so tests can isolate the linear part of the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    #[default]
    Tanh,
    Identity,
}

/// Hyperparameters of the forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct LiNoConfig {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub dim: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub ablation: Ablation,
    pub mlp_hidden: usize,
    pub fusion: Fusion,
    pub revin_eps: f64,
    pub norm_eps: f64,
}

impl LiNoConfig {
    pub fn new(channels: usize, lookback: usize, horizon: usize) -> Self {
        LiNoConfig {
            channels,
            lookback,
            horizon,
            dim: 256,
            blocks: 2,
            dropout: 0.0,
            variant: Variant::LiNo,
            ablation: Ablation::default(),
            mlp_hidden: 256,
            fusion: Fusion::Tanh,
            revin_eps: 1e-5,
            norm_eps: 1e-5,
        }
    }

    /// Sets `dim` and keeps the MLP hidden width equal to it.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self.mlp_hidden = dim;
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let extents = [
            ("channels", self.channels),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("dim", self.dim),
            ("blocks", self.blocks),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.dim % 2 != 0 {
            return Err(ModelError::Config(format!(
                "dim must be even for the frequency projection, got {}",
                self.dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.revin_eps > 0.0 && self.norm_eps > 0.0) {
            return Err(ModelError::Config("eps values must be positive".into()));
        }
        if self.variant != Variant::LiNo && !self.ablation.is_none() {
            return Err(ModelError::Config(format!(
                "ablation flags require the lino variant, got {}",
                self.variant
            )));
        }
        if self.ablation.no_li && self.ablation.no_no {
            return Err(ModelError::Config("cannot remove both the linear and nonlinear blocks".into()));
        }
        Ok(())
    }

    /// Flat `key=value` pairs, stable order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let fusion = match self.fusion {
            Fusion::Tanh => "tanh",
            Fusion::Identity => "identity",
        };
        [
            ("channels", self.channels.to_string()),
            ("lookback", self.lookback.to_string()),
            ("horizon", self.horizon.to_string()),
            ("dim", self.dim.to_string()),
            ("blocks", self.blocks.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("variant", self.variant.to_string()),
            ("ablation", self.ablation.label()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("fusion", fusion.to_string()),
            ("revin_eps", format!("{:?}", self.revin_eps)),
            ("norm_eps", format!("{:?}", self.norm_eps)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, ModelError> {
        let mut cfg = LiNoConfig::new(1, 1, 1);
        let num = |k: &str, v: &str| -> Result<usize, ModelError> {
            v.parse()
                .map_err(|_| ModelError::Config(format!("{k}: expected an integer, got `{v}`")))
        };
        let float = |k: &str, v: &str| -> Result<f64, ModelError> {
            v.parse()
                .map_err(|_| ModelError::Config(format!("{k}: expected a number, got `{v}`")))
        };
        for (k, v) in pairs {
            match k {
                "channels" => cfg.channels = num(k, v)?,
                "lookback" => cfg.lookback = num(k, v)?,
                "horizon" => cfg.horizon = num(k, v)?,
                "dim" => cfg.dim = num(k, v)?,
                "blocks" => cfg.blocks = num(k, v)?,
                "dropout" => cfg.dropout = float(k, v)?,
                "variant" => cfg.variant = v.parse()?,
                "ablation" => cfg.ablation = Ablation::parse(v)?,
                "mlp_hidden" => cfg.mlp_hidden = num(k, v)?,
                "fusion" => {
                    cfg.fusion = match v {
                        "tanh" => Fusion::Tanh,
                        "identity" => Fusion::Identity,
                        other => return Err(ModelError::Config(format!("unknown fusion `{other}`"))),
                    }
                }
                "revin_eps" => cfg.revin_eps = float(k, v)?,
                "norm_eps" => cfg.norm_eps = float(k, v)?,
                other => return Err(ModelError::Config(format!("unknown model key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
