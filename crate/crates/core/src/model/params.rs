//! Model hyperparameters and the learnable weight store.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::GridSpec;

/// Network hyperparameters. `history_len`, `future_len`, `d_in`, and the
/// grid must agree with the dataset the model is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Latent width of every attention stage.
    pub d_model: usize,
    /// Width of the pre-projection embedding.
    pub d_embed: usize,
    /// Hidden width of the encoder/decoder feed-forward blocks.
    pub d_ffn: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    /// History steps (T).
    pub history_len: usize,
    /// Future steps (F).
    pub future_len: usize,
    /// Per-step input features.
    pub d_in: usize,
    pub grid: GridSpec,
    pub leaky_slope: f64,
    /// Dropout probability; 0 keeps the forward pass deterministic.
    pub dropout: f64,
    /// Give the ego its own motion-encoder weights instead of sharing
    /// the neighbor encoder.
    pub separate_ego_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_embed: 32,
            d_ffn: 128,
            n_heads: 8,
            n_encoder_layers: 1,
            history_len: 16,
            future_len: 25,
            d_in: 2,
            grid: GridSpec::default(),
            leaky_slope: 0.1,
            dropout: 0.0,
            separate_ego_encoder: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_embed", self.d_embed),
            ("d_ffn", self.d_ffn),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("history_len", self.history_len),
            ("future_len", self.future_len),
            ("d_in", self.d_in),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky_slope must be in (0, 1)".into()));
        }
        self.grid.validate()
    }
}

/// Which architecture a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Full network with intention heads and mode-conditioned decoding.
    IntentAware,
    /// Same trunk, no intention heads, single unconditioned decode.
    Vanilla,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: usize,
    pub b: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionIds {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayerIds {
    pub attn: AttentionIds,
    pub ln1: LayerNormIds,
    pub ffn1: LinearIds,
    pub ffn2: LinearIds,
    pub ln2: LayerNormIds,
}

#[derive(Debug, Clone)]
pub(crate) struct MotionEncoderIds {
    pub embed: LinearIds,
    pub proj: LinearIds,
    pub layers: Vec<EncoderLayerIds>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SocialIds {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub glu: LinearIds,
    pub ln: LayerNormIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TemporalIds {
    pub attn: AttentionIds,
    pub glu: LinearIds,
    pub ln: LayerNormIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IntentionIds {
    pub wr: LinearIds,
    pub wla: LinearIds,
    pub wlo: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FusionIds {
    pub mode_embed: LinearIds,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub ln: LayerNormIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIds {
    pub h1: LinearIds,
    pub h2: LinearIds,
}

#[derive(Debug, Clone)]
pub(crate) struct NetIds {
    pub encoder: MotionEncoderIds,
    pub ego_encoder: Option<MotionEncoderIds>,
    pub social: SocialIds,
    pub temporal: TemporalIds,
    pub intention: Option<IntentionIds>,
    pub fusion: Option<FusionIds>,
    pub decoder: EncoderLayerIds,
    pub head: HeadIds,
}

/// Read-only view of one named parameter tensor.
pub struct ParamView<'a> {
    pub name: &'a str,
    pub value: &'a Array2<f64>,
}

/// The full learnable weight set plus its configuration.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub(crate) names: Vec<String>,
    pub(crate) tensors: Vec<Array2<f64>>,
    pub(crate) ids: NetIds,
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> usize {
        let bound = (1.0 / fan_in as f64).sqrt();
        let t = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-bound..bound));
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn fixed(&mut self, name: String, rows: usize, cols: usize, value: f64) -> usize {
        self.names.push(name);
        self.tensors.push(Array2::from_elem((rows, cols), value));
        self.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, bias: bool) -> LinearIds {
        let w = self.tensor(format!("{name}.w"), d_in, d_out, d_in);
        let b = bias.then(|| self.tensor(format!("{name}.b"), 1, d_out, d_in));
        LinearIds { w, b }
    }

    fn layer_norm(&mut self, name: &str, d: usize) -> LayerNormIds {
        LayerNormIds {
            gain: self.fixed(format!("{name}.gain"), 1, d, 1.0),
            bias: self.fixed(format!("{name}.bias"), 1, d, 0.0),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> AttentionIds {
        AttentionIds {
            wq: self.tensor(format!("{name}.wq"), d, d, d),
            wk: self.tensor(format!("{name}.wk"), d, d, d),
            wv: self.tensor(format!("{name}.wv"), d, d, d),
            wo: self.linear(&format!("{name}.out"), d, d, true),
        }
    }

    fn encoder_layer(&mut self, name: &str, d: usize, ffn: usize) -> EncoderLayerIds {
        EncoderLayerIds {
            attn: self.attention(&format!("{name}.attn"), d),
            ln1: self.layer_norm(&format!("{name}.ln1"), d),
            ffn1: self.linear(&format!("{name}.ffn1"), d, ffn, true),
            ffn2: self.linear(&format!("{name}.ffn2"), ffn, d, true),
            ln2: self.layer_norm(&format!("{name}.ln2"), d),
        }
    }

    fn motion_encoder(&mut self, name: &str, cfg: &ModelConfig) -> MotionEncoderIds {
        MotionEncoderIds {
            embed: self.linear(&format!("{name}.embed"), cfg.d_in, cfg.d_embed, true),
            proj: self.linear(&format!("{name}.proj"), cfg.d_embed, cfg.d_model, true),
            layers: (0..cfg.n_encoder_layers)
                .map(|i| self.encoder_layer(&format!("{name}.layer{i}"), cfg.d_model, cfg.d_ffn))
                .collect(),
        }
    }
}

impl ModelParameters {
    /// Fresh parameters: linear maps uniform in +-sqrt(1/fan_in),
    /// layer-norm gain 1 / bias 0, drawn deterministically from `seed`.
    pub fn init(kind: ModelKind, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            names: Vec::new(),
            tensors: Vec::new(),
        };

        let encoder = b.motion_encoder("encoder", &config);
        let ego_encoder = config
            .separate_ego_encoder
            .then(|| b.motion_encoder("ego_encoder", &config));
        let social = SocialIds {
            wq: b.tensor("social.wq".into(), d, d, d),
            wk: b.tensor("social.wk".into(), d, d, d),
            wv: b.tensor("social.wv".into(), d, d, d),
            glu: b.linear("social.glu", d, 2 * d, true),
            ln: b.layer_norm("social.ln", d),
        };
        let temporal = TemporalIds {
            attn: b.attention("temporal.attn", d),
            glu: b.linear("temporal.glu", d, 2 * d, true),
            ln: b.layer_norm("temporal.ln", d),
        };
        let (intention, fusion) = match kind {
            ModelKind::IntentAware => (
                Some(IntentionIds {
                    wr: b.linear("intention.wr", d, d, true),
                    wla: b.linear("intention.wla", d, 3, true),
                    wlo: b.linear("intention.wlo", d, 3, true),
                }),
                Some(FusionIds {
                    mode_embed: b.linear("fusion.mode_embed", 6, d, true),
                    wq: b.tensor("fusion.wq".into(), d, d, d),
                    wk: b.tensor("fusion.wk".into(), d, d, d),
                    wv: b.tensor("fusion.wv".into(), d, d, d),
                    ln: b.layer_norm("fusion.ln", d),
                }),
            ),
            ModelKind::Vanilla => (None, None),
        };
        let decoder = b.encoder_layer("decoder", d, config.d_ffn);
        let head = HeadIds {
            h1: b.linear("head.h1", d, d, true),
            h2: b.linear("head.h2", d, 4, true),
        };

        Ok(ModelParameters {
            kind,
            config,
            names: b.names,
            tensors: b.tensors,
            ids: NetIds {
                encoder,
                ego_encoder,
                social,
                temporal,
                intention,
                fusion,
                decoder,
                head,
            },
        })
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, idx: usize) -> &Array2<f64> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = ParamView<'_>> {
        self.names
            .iter()
            .zip(self.tensors.iter())
            .map(|(name, value)| ParamView { name, value })
    }

    /// Zeroed gradient buffers matching every tensor.
    pub fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect()
    }

    /// True if any weight is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.tensors
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
    }

    pub(crate) fn encoder_for_ego(&self) -> &MotionEncoderIds {
        self.ids.ego_encoder.as_ref().unwrap_or(&self.ids.encoder)
    }
}

/// Exact count of learnable scalar values.
pub fn count_parameters(params: &ModelParameters) -> usize {
    params.tensors.iter().map(|t| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn head_divisibility_enforced() {
        let cfg = ModelConfig {
            d_model: 30,
            n_heads: 8,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        let cfg = ModelConfig {
            d_model: 0,
            ..ModelConfig::default()
        };
        assert!(ModelParameters::init(ModelKind::IntentAware, cfg, 0).is_err());
    }

    #[test]
    fn count_is_positive_and_monotone_in_width() {
        let base = ModelParameters::init(ModelKind::IntentAware, ModelConfig::default(), 0).unwrap();
        let n_base = count_parameters(&base);
        assert!(n_base >= 1);

        let wide_cfg = ModelConfig {
            d_model: 128,
            d_embed: 64,
            d_ffn: 256,
            ..ModelConfig::default()
        };
        let wide = ModelParameters::init(ModelKind::IntentAware, wide_cfg, 0).unwrap();
        assert!(count_parameters(&wide) > n_base);
    }

    #[test]
    fn vanilla_has_strictly_fewer_parameters() {
        let cfg = ModelConfig::default();
        let full = ModelParameters::init(ModelKind::IntentAware, cfg.clone(), 0).unwrap();
        let vanilla = ModelParameters::init(ModelKind::Vanilla, cfg, 0).unwrap();
        assert!(count_parameters(&vanilla) < count_parameters(&full));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = ModelConfig::default();
        let a = ModelParameters::init(ModelKind::IntentAware, cfg.clone(), 5).unwrap();
        let b = ModelParameters::init(ModelKind::IntentAware, cfg.clone(), 5).unwrap();
        let c = ModelParameters::init(ModelKind::IntentAware, cfg, 6).unwrap();
        assert_eq!(a.tensors, b.tensors);
        assert_ne!(a.tensors, c.tensors);
    }

    #[test]
    fn names_are_unique() {
        let p = ModelParameters::init(ModelKind::IntentAware, ModelConfig::default(), 0).unwrap();
        let mut names: Vec<&str> = p.names.iter().map(String::as_str).collect();
        names.sort_unstable();
        let before = names.len();
        names.dedup();
        assert_eq!(before, names.len());
    }
}
