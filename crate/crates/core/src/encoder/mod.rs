//! Text encoders mapping a token-id sequence to a fixed-length latent vector.
//!
//! Three interchangeable architectures share one interface:
//!
//! - [`EncoderKind::Rhcnn`]: a bidirectional recurrent pass whose states are
//!   concatenated with the word embeddings, one highway layer, then two
//!   same-padded ReLU convolutions and max-over-time pooling.
//! - [`EncoderKind::GruBaseline`]: two stacked recurrent layers, mean-pooled.
//! - [`EncoderKind::EmbedBaseline`]: the mean of the word embeddings.
//!
//! Dropout is applied after the first stage, after the second stage and on
//! the pooled vector, using the three configured rates. Gradients are computed
//! by hand; [`EncoderParameters::forward`] returns a trace consumed by
//! [`EncoderParameters::backward`].

mod conv;
mod gru;
mod highway;

pub use conv::{max_over_time, relu, Conv1d};
pub use gru::{GruDirection, GruLayer, GruLayerTrace, GruTrace};
pub use highway::{Highway, HighwayTrace, GATE_BIAS_INIT};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{extend_prefixed, uniform_matrix, ParamBlocks, SparseRows};

/// Latent vector produced by an encoder.
pub type LatentVector = Array1<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Rhcnn,
    GruBaseline,
    EmbedBaseline,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Rhcnn, EncoderKind::GruBaseline, EncoderKind::EmbedBaseline];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Rhcnn => "rhcnn",
            EncoderKind::GruBaseline => "gru_baseline",
            EncoderKind::EmbedBaseline => "embed_baseline",
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Word embedding width.
    pub embed_dim: usize,
    /// Width of the recurrent context (both directions together).
    pub context_dim: usize,
    /// Width of the second recurrent layer of the GRU baseline.
    pub baseline_dim: usize,
    /// Filters of the first convolution.
    pub conv_filters: usize,
    /// Latent vector width; also the width of the user, item and tag tables.
    pub output_dim: usize,
    pub kernel_width: usize,
    /// Rates after stage one, stage two and pooling.
    pub dropout: [f64; 3],
    pub bidirectional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Rhcnn,
            embed_dim: 200,
            context_dim: 400,
            baseline_dim: 200,
            conv_filters: 500,
            output_dim: 200,
            kernel_width: 3,
            dropout: [0.3, 0.3, 0.2],
            bidirectional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if [self.embed_dim, self.context_dim, self.baseline_dim, self.conv_filters, self.output_dim]
            .contains(&0)
        {
            return bad("encoder dimensions must be positive".into());
        }
        if self.kernel_width % 2 == 0 {
            return bad(format!("kernel_width must be odd, got {}", self.kernel_width));
        }
        if self.dropout.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return bad(format!("dropout rates must lie in [0, 1), got {:?}", self.dropout));
        }
        match self.kind {
            EncoderKind::Rhcnn if self.bidirectional && self.context_dim % 2 != 0 => {
                bad(format!("context_dim {} must be even when bidirectional", self.context_dim))
            }
            EncoderKind::GruBaseline if self.bidirectional && (self.context_dim % 2 != 0 || self.baseline_dim % 2 != 0) => {
                bad("recurrent widths must be even when bidirectional".into())
            }
            EncoderKind::GruBaseline if self.baseline_dim != self.output_dim => bad(format!(
                "gru_baseline pools its second layer, so baseline_dim ({}) must equal output_dim ({})",
                self.baseline_dim, self.output_dim
            )),
            EncoderKind::EmbedBaseline if self.embed_dim != self.output_dim => bad(format!(
                "embed_baseline averages embeddings, so embed_dim ({}) must equal output_dim ({})",
                self.embed_dim, self.output_dim
            )),
            _ => Ok(()),
        }
    }

    /// Width of the stage-one output: context states plus the embeddings.
    pub fn stage1_dim(&self) -> usize {
        self.context_dim + self.embed_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhcnnBody {
    pub context: GruLayer,
    pub highway: Highway,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruBody {
    pub layer1: GruLayer,
    pub layer2: GruLayer,
}

/// Weights beyond the word embeddings.
#[derive(Clone, Debug, PartialEq)]
pub enum EncoderBody {
    Rhcnn(RhcnnBody),
    Gru(GruBody),
    Embedding,
}

impl ParamBlocks for EncoderBody {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        match self {
            EncoderBody::Rhcnn(b) => {
                extend_prefixed(&mut out, "context", b.context.blocks());
                extend_prefixed(&mut out, "highway", b.highway.blocks());
                extend_prefixed(&mut out, "conv1", b.conv1.blocks());
                extend_prefixed(&mut out, "conv2", b.conv2.blocks());
            }
            EncoderBody::Gru(b) => {
                extend_prefixed(&mut out, "gru1", b.layer1.blocks());
                extend_prefixed(&mut out, "gru2", b.layer2.blocks());
            }
            EncoderBody::Embedding => {}
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        match self {
            EncoderBody::Rhcnn(b) => {
                extend_prefixed(&mut out, "context", b.context.blocks_mut());
                extend_prefixed(&mut out, "highway", b.highway.blocks_mut());
                extend_prefixed(&mut out, "conv1", b.conv1.blocks_mut());
                extend_prefixed(&mut out, "conv2", b.conv2.blocks_mut());
            }
            EncoderBody::Gru(b) => {
                extend_prefixed(&mut out, "gru1", b.layer1.blocks_mut());
                extend_prefixed(&mut out, "gru2", b.layer2.blocks_mut());
            }
            EncoderBody::Embedding => {}
        }
        out
    }
}

/// All trainable weights of one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParameters {
    pub config: EncoderConfig,
    /// vocabulary × embed_dim
    pub embeddings: Array2<f64>,
    pub body: EncoderBody,
}

impl ParamBlocks for EncoderParameters {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        let mut out = vec![("embeddings".to_string(), self.embeddings.view().into_dyn())];
        out.extend(self.body.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut out = vec![("embeddings".to_string(), self.embeddings.view_mut().into_dyn())];
        out.extend(self.body.blocks_mut());
        out
    }
}

/// Gradient of an encoder with row-sparse embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGradients {
    pub embeddings: SparseRows,
    pub body: EncoderBody,
}

impl EncoderGradients {
    pub fn zeros_for(params: &EncoderParameters) -> Self {
        EncoderGradients {
            embeddings: SparseRows::default(),
            body: params.body.zeros_like(),
        }
    }

    pub fn merge(&mut self, other: EncoderGradients) {
        self.embeddings.merge(other.embeddings);
        for ((_, mut a), (_, b)) in self.body.blocks_mut().into_iter().zip(other.body.blocks()) {
            a += &b;
        }
    }

    pub fn to_dense(&self, like: &EncoderParameters) -> EncoderParameters {
        let mut dense = EncoderParameters {
            config: like.config.clone(),
            embeddings: Array2::zeros(like.embeddings.raw_dim()),
            body: self.body.clone(),
        };
        self.embeddings.scatter_into(&mut dense.embeddings);
        dense
    }
}

/// Scaled keep-mask for inverted dropout; `None` when the rate is zero.
fn dropout_mask<R: Rng, Sh: ndarray::ShapeBuilder>(shape: Sh, rate: f64, rng: &mut R) -> Option<ndarray::Array<f64, Sh::Dim>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Some(ndarray::Array::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    }))
}

fn apply_mask<D: ndarray::Dimension>(x: &mut ndarray::Array<f64, D>, mask: &Option<ndarray::Array<f64, D>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

#[derive(Clone, Debug)]
enum TraceBody {
    Rhcnn {
        context: GruLayerTrace,
        stage1: Array2<f64>,
        mask1: Option<Array2<f64>>,
        highway: HighwayTrace,
        mask2: Option<Array2<f64>>,
        conv_input: Array2<f64>,
        act1: Array2<f64>,
        act2: Array2<f64>,
        argmax: Vec<usize>,
    },
    Gru {
        layer1: GruLayerTrace,
        layer2_input: Array2<f64>,
        mask1: Option<Array2<f64>>,
        layer2: GruLayerTrace,
        mask2: Option<Array2<f64>>,
    },
    Embedding,
}

/// Forward activations of one sequence.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    embedded: Array2<f64>,
    body: TraceBody,
    mask3: Option<Array1<f64>>,
}

/// Concatenates recurrent states with the embeddings they were computed from.
pub fn contextualize(layer: &GruLayer, embedded: ArrayView2<f64>) -> (Array2<f64>, GruLayerTrace) {
    let (context, trace) = layer.forward(embedded);
    let out = ndarray::concatenate(Axis(1), &[context.view(), embedded]).expect("row counts match");
    (out, trace)
}

/// Two ReLU convolutions followed by max-over-time pooling.
pub fn convolve_pool(conv1: &Conv1d, conv2: &Conv1d, x: ArrayView2<f64>) -> LatentVector {
    let act1 = relu(conv1.forward(x));
    let act2 = relu(conv2.forward(act1.view()));
    max_over_time(act2.view()).0
}

impl EncoderParameters {
    pub fn init<R: Rng>(config: &EncoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embeddings = uniform_matrix(vocab_size, config.embed_dim, 0.05, rng);
        let body = match config.kind {
            EncoderKind::Rhcnn => {
                let d = config.stage1_dim();
                EncoderBody::Rhcnn(RhcnnBody {
                    context: GruLayer::init(config.embed_dim, config.context_dim, config.bidirectional, rng),
                    highway: Highway::init(d, rng),
                    conv1: Conv1d::init(config.kernel_width, d, config.conv_filters, rng),
                    conv2: Conv1d::init(config.kernel_width, config.conv_filters, config.output_dim, rng),
                })
            }
            EncoderKind::GruBaseline => EncoderBody::Gru(GruBody {
                layer1: GruLayer::init(config.embed_dim, config.context_dim, config.bidirectional, rng),
                layer2: GruLayer::init(config.context_dim, config.baseline_dim, config.bidirectional, rng),
            }),
            EncoderKind::EmbedBaseline => EncoderBody::Embedding,
        };
        Ok(EncoderParameters {
            config: config.clone(),
            embeddings,
            body,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Looks up the embedding row of every token.
    pub fn embed_tokens(&self, sequence: &[u32]) -> Result<Array2<f64>> {
        if sequence.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        let mut out = Array2::zeros((sequence.len(), self.config.embed_dim));
        for (t, &id) in sequence.iter().enumerate() {
            let id = id as usize;
            if id >= self.vocab_size() {
                return Err(Error::IndexOutOfRange {
                    kind: "token",
                    index: id,
                    len: self.vocab_size(),
                });
            }
            out.row_mut(t).assign(&self.embeddings.row(id));
        }
        Ok(out)
    }

    /// Deterministic encoding (dropout off).
    pub fn encode(&self, sequence: &[u32]) -> Result<LatentVector> {
        self.forward(sequence, None::<&mut rand_chacha::ChaCha8Rng>).map(|(g, _)| g)
    }

    /// Runs the encoder, drawing dropout masks from `dropout_rng` when given.
    pub fn forward<R: Rng>(&self, sequence: &[u32], mut dropout_rng: Option<&mut R>) -> Result<(LatentVector, EncoderTrace)> {
        let embedded = self.embed_tokens(sequence)?;
        let n = embedded.nrows();
        let rates = self.config.dropout;
        let mut mask = |shape: (usize, usize), rate: f64| dropout_rng.as_mut().and_then(|r| dropout_mask(shape, rate, *r));

        let (pooled, body) = match &self.body {
            EncoderBody::Rhcnn(b) => {
                let (mut stage1, context) = contextualize(&b.context, embedded.view());
                let mask1 = mask(stage1.dim(), rates[0]);
                apply_mask(&mut stage1, &mask1);
                let (mut conv_input, highway) = b.highway.forward(stage1.view());
                let mask2 = mask(conv_input.dim(), rates[1]);
                apply_mask(&mut conv_input, &mask2);
                let act1 = relu(b.conv1.forward(conv_input.view()));
                let act2 = relu(b.conv2.forward(act1.view()));
                let (pooled, argmax) = max_over_time(act2.view());
                (
                    pooled,
                    TraceBody::Rhcnn {
                        context,
                        stage1,
                        mask1,
                        highway,
                        mask2,
                        conv_input,
                        act1,
                        act2,
                        argmax,
                    },
                )
            }
            EncoderBody::Gru(b) => {
                let (mut layer2_input, layer1) = b.layer1.forward(embedded.view());
                let mask1 = mask(layer2_input.dim(), rates[0]);
                apply_mask(&mut layer2_input, &mask1);
                let (mut out, layer2) = b.layer2.forward(layer2_input.view());
                let mask2 = mask(out.dim(), rates[1]);
                apply_mask(&mut out, &mask2);
                let pooled = out.sum_axis(Axis(0)) / n as f64;
                (
                    pooled,
                    TraceBody::Gru {
                        layer1,
                        layer2_input,
                        mask1,
                        layer2,
                        mask2,
                    },
                )
            }
            EncoderBody::Embedding => (embedded.sum_axis(Axis(0)) / n as f64, TraceBody::Embedding),
        };

        let mut latent = pooled;
        let mask3 = dropout_rng.as_mut().and_then(|r| dropout_mask(latent.raw_dim(), rates[2], *r));
        apply_mask(&mut latent, &mask3);
        Ok((latent, EncoderTrace { embedded, body, mask3 }))
    }

    /// Backpropagates `d_latent` through the trace of `sequence`, adding into
    /// `grads`.
    pub fn backward(&self, sequence: &[u32], trace: &EncoderTrace, d_latent: &Array1<f64>, grads: &mut EncoderGradients) {
        let n = trace.embedded.nrows();
        let mut d_pooled = d_latent.clone();
        apply_mask(&mut d_pooled, &trace.mask3);

        let d_embedded = match (&self.body, &trace.body, &mut grads.body) {
            (
                EncoderBody::Rhcnn(b),
                TraceBody::Rhcnn {
                    context,
                    stage1,
                    mask1,
                    highway,
                    mask2,
                    conv_input,
                    act1,
                    act2,
                    argmax,
                },
                EncoderBody::Rhcnn(g),
            ) => {
                let mut d_pre2 = Array2::zeros(act2.raw_dim());
                for (f, &t) in argmax.iter().enumerate() {
                    if act2[[t, f]] > 0.0 {
                        d_pre2[[t, f]] = d_pooled[f];
                    }
                }
                let mut d_pre1 = b.conv2.backward(act1.view(), d_pre2.view(), &mut g.conv2);
                ndarray::Zip::from(&mut d_pre1).and(act1).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                let mut d_conv_in = b.conv1.backward(conv_input.view(), d_pre1.view(), &mut g.conv1);
                apply_mask(&mut d_conv_in, mask2);
                let mut d_stage1 = b.highway.backward(stage1.view(), highway, d_conv_in.view(), &mut g.highway);
                apply_mask(&mut d_stage1, mask1);
                let h = b.context.output_size();
                let mut d_emb = d_stage1.slice(s![.., h..]).to_owned();
                d_emb += &b.context.backward(
                    trace.embedded.view(),
                    context,
                    d_stage1.slice(s![.., ..h]),
                    &mut g.context,
                );
                d_emb
            }
            (
                EncoderBody::Gru(b),
                TraceBody::Gru {
                    layer1,
                    layer2_input,
                    mask1,
                    layer2,
                    mask2,
                },
                EncoderBody::Gru(g),
            ) => {
                let width = b.layer2.output_size();
                let mut d_out = Array2::zeros((n, width));
                d_out += &(&d_pooled / n as f64);
                apply_mask(&mut d_out, mask2);
                let mut d_mid = b.layer2.backward(layer2_input.view(), layer2, d_out.view(), &mut g.layer2);
                apply_mask(&mut d_mid, mask1);
                b.layer1.backward(trace.embedded.view(), layer1, d_mid.view(), &mut g.layer1)
            }
            (EncoderBody::Embedding, TraceBody::Embedding, EncoderBody::Embedding) => {
                let mut d_emb = Array2::zeros(trace.embedded.raw_dim());
                d_emb += &(&d_pooled / n as f64);
                d_emb
            }
            _ => unreachable!("trace and gradient kinds follow the parameters"),
        };

        for (t, &id) in sequence.iter().enumerate() {
            let row = d_embedded.row(t);
            grads.embeddings.add_row(id as usize, row.as_slice().expect("contiguous row"), 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(kind: EncoderKind) -> EncoderConfig {
        EncoderConfig {
            kind,
            embed_dim: 4,
            context_dim: 6,
            baseline_dim: 4,
            conv_filters: 5,
            output_dim: 4,
            kernel_width: 3,
            dropout: [0.3, 0.3, 0.2],
            bidirectional: true,
        }
    }

    #[test]
    fn embed_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParameters::init(&small(EncoderKind::Rhcnn), 10, &mut rng).unwrap();
        let e = params.embed_tokens(&[5]).unwrap();
        assert_eq!(e.row(0), params.embeddings.row(5));
        let e2 = params.embed_tokens(&[5, 5]).unwrap();
        assert_eq!(e2.row(0), e2.row(1));
        assert!(params.embed_tokens(&[10]).is_err());
        assert!(params.embed_tokens(&[]).is_err());
    }

    #[test]
    fn default_config_widths() {
        let cfg = EncoderConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage1_dim(), 600);
        assert_eq!(cfg.output_dim, cfg.embed_dim);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(EncoderKind::Rhcnn);
        cfg.context_dim = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = small(EncoderKind::EmbedBaseline);
        cfg.output_dim = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small(EncoderKind::Rhcnn);
        cfg.kernel_width = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = small(EncoderKind::Rhcnn);
        cfg.dropout[1] = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_context_weights_leave_embeddings_in_stage1() {
        let layer = GruLayer {
            forward: GruDirection::zeros(2, 1),
            backward: Some(GruDirection::zeros(2, 1)),
        };
        let e = ndarray::arr2(&[[0.25, -0.5]]);
        let (out, _) = contextualize(&layer, e.view());
        assert_eq!(out, ndarray::arr2(&[[0.0, 0.0, 0.25, -0.5]]));
    }

    #[test]
    fn embed_baseline_is_mean_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = EncoderParameters::init(&small(EncoderKind::EmbedBaseline), 10, &mut rng).unwrap();
        let g = params.encode(&[3, 7]).unwrap();
        let expected = (&params.embeddings.row(3) + &params.embeddings.row(7)) / 2.0;
        assert!((&g - &expected).iter().all(|d| d.abs() < 1e-15));
        assert_eq!(params.encode(&[7, 3]).unwrap(), g);
    }

    #[test]
    fn rhcnn_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParameters::init(&small(EncoderKind::Rhcnn), 10, &mut rng).unwrap();
        let a = params.encode(&[3, 4, 5, 6, 7]).unwrap();
        let b = params.encode(&[7, 3, 6, 4, 5]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn output_width_for_all_kinds_and_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in EncoderKind::ALL {
            let params = EncoderParameters::init(&small(kind), 10, &mut rng).unwrap();
            for n in [1usize, 2, 7, 40] {
                let seq: Vec<u32> = (0..n).map(|i| (i % 10) as u32).collect();
                assert_eq!(params.encode(&seq).unwrap().len(), 4);
            }
        }
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = EncoderParameters::init(&small(EncoderKind::Rhcnn), 10, &mut rng).unwrap();
        let seq = [1u32, 4, 4, 9, 2];
        assert_eq!(params.encode(&seq).unwrap(), params.encode(&seq).unwrap());
        let a = params.forward(&seq, Some(&mut ChaCha8Rng::seed_from_u64(9))).unwrap().0;
        let b = params.forward(&seq, Some(&mut ChaCha8Rng::seed_from_u64(9))).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in EncoderKind::ALL {
            let params = EncoderParameters::init(&small(kind), 10, &mut rng).unwrap();
            let seq = [1u32, 4, 2];
            let (g, trace) = params.forward(&seq, None::<&mut ChaCha8Rng>).unwrap();
            let mut grads = EncoderGradients::zeros_for(&params);
            params.backward(&seq, &trace, &Array1::zeros(g.len()), &mut grads);
            let dense = grads.to_dense(&params);
            assert!(dense.blocks().iter().all(|(_, b)| b.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn untouched_embedding_rows_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = EncoderParameters::init(&small(EncoderKind::Rhcnn), 10, &mut rng).unwrap();
        let seq = [1u32, 4, 2];
        let (g, trace) = params.forward(&seq, None::<&mut ChaCha8Rng>).unwrap();
        let mut grads = EncoderGradients::zeros_for(&params);
        params.backward(&seq, &trace, &Array1::ones(g.len()), &mut grads);
        let touched: Vec<usize> = grads.embeddings.iter().map(|(i, _)| i).collect();
        assert_eq!(touched, vec![1, 2, 4]);
    }
}
