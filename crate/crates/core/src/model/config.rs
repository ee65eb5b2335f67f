use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Avg,
    Sum,
    Max,
    Last,
    Cls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mambular,
    /// Mamba and attention blocks alternating, Mamba first and last.
    MambAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Regression,
    Binary,
    LssNormal,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::LssNormal => 2,
            _ => 1,
        }
    }
}

macro_rules! parse_enum {
    ($ty:ty, $($text:literal => $val:expr),+ $(,)?) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($val),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

parse_enum!(Pooling, "avg" => Pooling::Avg, "sum" => Pooling::Sum, "max" => Pooling::Max,
    "last" => Pooling::Last, "cls" => Pooling::Cls);
parse_enum!(Architecture, "mambular" => Architecture::Mambular,
    "mambattention" => Architecture::MambAttention);
parse_enum!(Head, "regression" => Head::Regression, "binary" => Head::Binary,
    "lss" => Head::LssNormal, "lss-normal" => Head::LssNormal);

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub expand: usize,
    /// Convolution width; `None` means the sequence length.
    pub kernel: Option<usize>,
    pub state: usize,
    /// Rank of the Δ projection; `None` picks `ceil(d / 16)`.
    pub dt_rank: Option<usize>,
    pub pooling: Pooling,
    pub bidirectional: bool,
    pub interaction: bool,
    pub architecture: Architecture,
    pub head: Head,
    /// PLE width; `None` means `d`.
    pub max_bins: Option<usize>,
    pub min_leaf: usize,
    pub dropout: f64,
    pub heads: usize,
    pub ff_dim: usize,
    pub attention_dropout: f64,
    pub ff_dropout: f64,
    /// Token order after embedding: position `i` receives token `permutation[i]`.
    pub permutation: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 4,
            expand: 2,
            kernel: Some(4),
            state: 128,
            dt_rank: None,
            pooling: Pooling::Avg,
            bidirectional: false,
            interaction: false,
            architecture: Architecture::Mambular,
            head: Head::Regression,
            max_bins: None,
            min_leaf: crate::encoding::DEFAULT_MIN_LEAF,
            dropout: 0.0,
            heads: 8,
            ff_dim: 256,
            attention_dropout: 0.2,
            ff_dropout: 0.1,
            permutation: None,
        }
    }
}

impl ModelConfig {
    pub fn max_bins(&self) -> usize {
        self.max_bins.unwrap_or(self.d)
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_rank.unwrap_or_else(|| self.d.div_ceil(16))
    }

    /// Kernel width for a sequence of `len` tokens.
    pub fn kernel_for(&self, len: usize) -> usize {
        self.kernel.unwrap_or(len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.layers == 0 || self.expand == 0 || self.state == 0 {
            return bad(format!(
                "d, layers, expand and state must be positive (d={}, layers={}, expand={}, state={})",
                self.d, self.layers, self.expand, self.state
            ));
        }
        if self.kernel == Some(0) {
            return bad("kernel must be at least 1".into());
        }
        if self.dt_rank == Some(0) {
            return bad("dt_rank must be at least 1".into());
        }
        if self.max_bins() < 2 {
            return bad(format!("max_bins must be at least 2, got {}", self.max_bins()));
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive".into());
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("attention_dropout", self.attention_dropout),
            ("ff_dropout", self.ff_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if self.architecture == Architecture::MambAttention {
            if self.layers < 3 || self.layers % 2 == 0 {
                return bad(format!(
                    "mambattention needs an odd layer count of at least 3 so that the first and \
                     last blocks are Mamba blocks, got {}",
                    self.layers
                ));
            }
            if self.heads == 0 || self.d % self.heads != 0 {
                return bad(format!("d={} is not divisible by heads={}", self.d, self.heads));
            }
        }
        Ok(())
    }

    /// Block kinds in stack order: `true` for Mamba, `false` for attention.
    pub fn block_pattern(&self) -> Vec<bool> {
        match self.architecture {
            Architecture::Mambular => vec![true; self.layers],
            Architecture::MambAttention => (0..self.layers).map(|i| i % 2 == 0).collect(),
        }
    }
}
