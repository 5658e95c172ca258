use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Conformer,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    None,
    Sinusoidal,
}

/// Switches for the TCM components. With `use_tcm` off the other four are
/// ignored and attention is plain MHSA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcmToggles {
    pub use_tcm: bool,
    /// Add the learnable `H×D` embedding to the generated head tokens.
    pub ht_embedding: bool,
    /// Append head tokens to the attention input (length `T+H+1`).
    pub ht_in_mhsa: bool,
    pub add_mean_ht_to_cls: bool,
    pub add_mean_tt_to_cls: bool,
}

impl Default for TcmToggles {
    fn default() -> Self {
        TcmToggles::full()
    }
}

impl TcmToggles {
    pub fn full() -> Self {
        TcmToggles {
            use_tcm: true,
            ht_embedding: true,
            ht_in_mhsa: true,
            add_mean_ht_to_cls: true,
            add_mean_tt_to_cls: true,
        }
    }

    pub fn plain() -> Self {
        TcmToggles {
            use_tcm: false,
            ..TcmToggles::full()
        }
    }
}

/// One row of the component ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    FullTcm,
    NoHtEmbedding,
    NoHtInMhsa,
    NoMeanHt,
    NoMeanTt,
    NoMeanHtAndTt,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::Baseline,
        AblationVariant::FullTcm,
        AblationVariant::NoHtEmbedding,
        AblationVariant::NoHtInMhsa,
        AblationVariant::NoMeanHt,
        AblationVariant::NoMeanTt,
        AblationVariant::NoMeanHtAndTt,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "w/o TCM (baseline)",
            AblationVariant::FullTcm => "+ TCM",
            AblationVariant::NoHtEmbedding => "w/o HT embedding",
            AblationVariant::NoHtInMhsa => "w/o HT in MHSA",
            AblationVariant::NoMeanHt => "w/o adding mean HT to CLS",
            AblationVariant::NoMeanTt => "w/o adding mean TT to CLS",
            AblationVariant::NoMeanHtAndTt => "w/o adding mean HT & mean TT to CLS",
        }
    }

    pub fn toggles(self) -> TcmToggles {
        let full = TcmToggles::full();
        match self {
            AblationVariant::Baseline => TcmToggles::plain(),
            AblationVariant::FullTcm => full,
            AblationVariant::NoHtEmbedding => TcmToggles {
                ht_embedding: false,
                ..full
            },
            AblationVariant::NoHtInMhsa => TcmToggles {
                ht_in_mhsa: false,
                ..full
            },
            AblationVariant::NoMeanHt => TcmToggles {
                add_mean_ht_to_cls: false,
                ..full
            },
            AblationVariant::NoMeanTt => TcmToggles {
                add_mean_tt_to_cls: false,
                ..full
            },
            AblationVariant::NoMeanHtAndTt => TcmToggles {
                add_mean_ht_to_cls: false,
                add_mean_tt_to_cls: false,
                ..full
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input feature dimension `F`.
    pub feature_dim: usize,
    /// Channel dimension `D`.
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub block_kind: BlockKind,
    pub conv_kernel: usize,
    pub ffn_expansion: usize,
    /// Training-time dropout after attention and feed-forward outputs.
    pub dropout: f64,
    pub positional_encoding: PositionalEncoding,
    pub layer_norm_eps: f64,
    /// Head-token pooling averages over the CLS row as well as temporal rows.
    pub head_pool_includes_cls: bool,
    /// The mean temporal token added to CLS also averages the CLS row.
    pub mean_tt_includes_cls: bool,
    pub toggles: TcmToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk_scale()
    }
}

impl ModelConfig {
    pub fn desk_scale() -> Self {
        ModelConfig {
            feature_dim: 64,
            model_dim: 32,
            heads: 4,
            blocks: 2,
            block_kind: BlockKind::Conformer,
            conv_kernel: 15,
            ffn_expansion: 4,
            dropout: 0.1,
            positional_encoding: PositionalEncoding::Sinusoidal,
            layer_norm_eps: 1e-5,
            head_pool_includes_cls: true,
            mean_tt_includes_cls: false,
            toggles: TcmToggles::full(),
        }
    }

    /// Full-size conformer over 1024-dim features.
    pub fn full_scale() -> Self {
        ModelConfig {
            feature_dim: 1024,
            model_dim: 144,
            heads: 4,
            blocks: 4,
            conv_kernel: 31,
            ..ModelConfig::desk_scale()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if self.model_dim == 0 {
            return fail("model_dim must be positive".into());
        }
        if self.heads == 0 {
            return fail("heads must be at least 1".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.blocks == 0 {
            return fail("blocks must be at least 1".into());
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.ffn_expansion == 0 {
            return fail("ffn_expansion must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn with_toggles(&self, toggles: TcmToggles) -> Self {
        ModelConfig {
            toggles,
            ..self.clone()
        }
    }
}
