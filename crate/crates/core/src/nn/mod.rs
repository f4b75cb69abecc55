//! Transformer encoder over dataset rows, time-conditioning MLP, and the
//! adaLN cross-attention decoder that emits a vector field.

pub mod checkpoint;
pub mod model;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::autodiff::gaussian_head_width;
use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, load_tensors, read_header, save_checkpoint, save_tensors, Checkpoint, CheckpointHeader, FORMAT_VERSION,
};
pub use model::{DecoderContext, Model};
pub use params::{count_parameters, InitScheme, ParamStore};

/// What the final projection emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum HeadKind {
    /// A `d`-dimensional vector field.
    #[default]
    VectorField,
    /// Mean and packed Cholesky factor of a Gaussian over the latent.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_blocks: usize,
    pub n_head_layers: usize,
    pub n_time_layers: usize,
    pub dropout_rate: f64,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub max_context: usize,
    #[serde(default)]
    pub head: HeadKind,
}

impl ModelConfig {
    /// Small default used for tests and laptop-scale training.
    pub fn desk(latent_dim: usize, input_dim: usize) -> Self {
        Self {
            d_model: 64,
            d_ff: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_blocks: 2,
            n_head_layers: 2,
            n_time_layers: 2,
            dropout_rate: 0.0,
            latent_dim,
            input_dim,
            max_context: 1000,
            head: HeadKind::VectorField,
        }
    }

    /// The full-size configuration (about 42M parameters).
    pub fn large(latent_dim: usize, input_dim: usize) -> Self {
        Self {
            d_model: 512,
            d_ff: 1024,
            n_heads: 8,
            n_encoder_layers: 8,
            n_decoder_blocks: 5,
            n_head_layers: 3,
            n_time_layers: 3,
            dropout_rate: 0.1,
            latent_dim,
            input_dim,
            max_context: 1000,
            head: HeadKind::VectorField,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            HeadKind::VectorField => self.latent_dim,
            HeadKind::Gaussian => gaussian_head_width(self.latent_dim),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_blocks", self.n_decoder_blocks),
            ("n_head_layers", self.n_head_layers),
            ("n_time_layers", self.n_time_layers),
            ("latent_dim", self.latent_dim),
            ("input_dim", self.input_dim),
            ("max_context", self.max_context),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            problems.push(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
