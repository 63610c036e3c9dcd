//! Learnable pipeline: feature adapters, embedding heads and the two
//! cross-modal decoders.
//!
//! ```text
//! audio --adapter_a--> F_a --head_a--> normalize --> Z_a --decoder_a--> H_t  (text space)
//! text  --adapter_t--> F_t --head_t--> normalize --> Z_t --decoder_t--> H_a  (audio space)
//! ```
//!
//! Every block is a one-hidden-layer MLP (`relu(x W1 + b1) W2 + b2`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Scalar, Tensor2};
use crate::rng::SplitMix64;

/// Row-normalization guard for zero rows.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model dimensions must all be > 0: {0:?}")]
    ZeroDim(ModelDims),
    #[error("{modality} input has {got} features, model expects {expected}")]
    InputDim {
        modality: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("batch has {audio} audio rows but {text} text rows")]
    RowMismatch { audio: usize, text: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_a: usize,
    pub d_t: usize,
    pub hidden: usize,
    /// Shared embedding dimension.
    pub embed_dim: usize,
}

impl ModelDims {
    fn validate(&self) -> Result<(), ModelError> {
        if [self.d_a, self.d_t, self.hidden, self.embed_dim].contains(&0) {
            return Err(ModelError::ZeroDim(*self));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar = f32> {
    /// `in x out`.
    pub weight: Tensor2<T>,
    /// `1 x out`.
    pub bias: Tensor2<T>,
}

impl<T: Scalar> Linear<T> {
    /// Glorot-uniform weights, zero bias.
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Tensor2::from_fn(fan_in, fan_out, |_, _| T::narrow(rng.uniform(-s, s))),
            bias: Tensor2::zeros(1, fan_out),
        }
    }

    fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    fn new(input: usize, hidden: usize, output: usize, rng: &mut SplitMix64) -> Self {
        Self {
            hidden: Linear::glorot(input, hidden, rng),
            output: Linear::glorot(hidden, output, rng),
        }
    }

    fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            hidden: self.hidden.cast(),
            output: self.output.cast(),
        }
    }

    fn tensors(&self) -> [&Tensor2<T>; 4] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor2<T>; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}

const GROUPS: [&str; 6] = ["adapter_a", "adapter_t", "head_a", "head_t", "decoder_a", "decoder_t"];
const SLOTS: [&str; 4] = ["hidden.weight", "hidden.bias", "output.weight", "output.bias"];

/// All six parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub dims: ModelDims,
    /// `d_a -> hidden -> d_a`
    pub adapter_a: Mlp<T>,
    /// `d_t -> hidden -> d_t`
    pub adapter_t: Mlp<T>,
    /// `d_a -> hidden -> embed_dim`
    pub head_a: Mlp<T>,
    /// `d_t -> hidden -> embed_dim`
    pub head_t: Mlp<T>,
    /// `embed_dim -> hidden -> d_t`: audio embedding to text features.
    pub decoder_a: Mlp<T>,
    /// `embed_dim -> hidden -> d_a`: text embedding to audio features.
    pub decoder_t: Mlp<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization; groups are drawn in declaration order from a
    /// single stream.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let ModelDims {
            d_a,
            d_t,
            hidden,
            embed_dim,
        } = dims;
        let mut rng = SplitMix64::new(seed);
        Ok(Self {
            dims,
            adapter_a: Mlp::new(d_a, hidden, d_a, &mut rng),
            adapter_t: Mlp::new(d_t, hidden, d_t, &mut rng),
            head_a: Mlp::new(d_a, hidden, embed_dim, &mut rng),
            head_t: Mlp::new(d_t, hidden, embed_dim, &mut rng),
            decoder_a: Mlp::new(embed_dim, hidden, d_t, &mut rng),
            decoder_t: Mlp::new(embed_dim, hidden, d_a, &mut rng),
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            dims: self.dims,
            adapter_a: self.adapter_a.cast(),
            adapter_t: self.adapter_t.cast(),
            head_a: self.head_a.cast(),
            head_t: self.head_t.cast(),
            decoder_a: self.decoder_a.cast(),
            decoder_t: self.decoder_t.cast(),
        }
    }

    fn groups(&self) -> [&Mlp<T>; 6] {
        [
            &self.adapter_a,
            &self.adapter_t,
            &self.head_a,
            &self.head_t,
            &self.decoder_a,
            &self.decoder_t,
        ]
    }

    /// Tensors in canonical order (group, then hidden/output weight/bias).
    pub fn tensors(&self) -> Vec<&Tensor2<T>> {
        self.groups().into_iter().flat_map(Mlp::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        [
            &mut self.adapter_a,
            &mut self.adapter_t,
            &mut self.head_a,
            &mut self.head_t,
            &mut self.decoder_a,
            &mut self.decoder_t,
        ]
        .into_iter()
        .flat_map(Mlp::tensors_mut)
        .collect()
    }

    /// Names matching [`ModelParams::tensors`], e.g. `head_a.output.weight`.
    pub fn tensor_names() -> Vec<String> {
        GROUPS
            .iter()
            .flat_map(|g| SLOTS.iter().map(move |s| format!("{g}.{s}")))
            .collect()
    }

    /// Rebuilds parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor2<T>>) -> Result<Self, ModelError> {
        let mut params = Self::init(dims, 0)?;
        if tensors.len() != params.tensors().len() {
            return Err(AutodiffError::InvalidArgument {
                op: "from_tensors",
                reason: format!("expected {} tensors, got {}", params.tensors().len(), tensors.len()),
            }
            .into());
        }
        for (slot, t) in params.tensors_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "from_tensors",
                    left: slot.shape(),
                    right: t.shape(),
                }
                .into());
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub hidden_weight: NodeId,
    pub hidden_bias: NodeId,
    pub output_weight: NodeId,
    pub output_bias: NodeId,
}

impl BoundMlp {
    fn bind<T: Scalar>(graph: &mut Graph<T>, mlp: &Mlp<T>) -> Self {
        Self {
            hidden_weight: graph.leaf(mlp.hidden.weight.clone()),
            hidden_bias: graph.leaf(mlp.hidden.bias.clone()),
            output_weight: graph.leaf(mlp.output.weight.clone()),
            output_bias: graph.leaf(mlp.output.bias.clone()),
        }
    }

    fn ids(&self) -> [NodeId; 4] {
        [
            self.hidden_weight,
            self.hidden_bias,
            self.output_weight,
            self.output_bias,
        ]
    }

    pub fn apply<T: Scalar>(&self, graph: &mut Graph<T>, x: NodeId) -> Result<NodeId, AutodiffError> {
        let h = graph.matmul(x, self.hidden_weight)?;
        let h = graph.add_bias(h, self.hidden_bias)?;
        let h = graph.relu(h)?;
        let y = graph.matmul(h, self.output_weight)?;
        graph.add_bias(y, self.output_bias)
    }
}

/// Parameters inserted into a graph as differentiable leaves.
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub dims: ModelDims,
    pub adapter_a: BoundMlp,
    pub adapter_t: BoundMlp,
    pub head_a: BoundMlp,
    pub head_t: BoundMlp,
    pub decoder_a: BoundMlp,
    pub decoder_t: BoundMlp,
}

impl BoundParams {
    pub fn bind<T: Scalar>(graph: &mut Graph<T>, params: &ModelParams<T>) -> Self {
        Self {
            dims: params.dims,
            adapter_a: BoundMlp::bind(graph, &params.adapter_a),
            adapter_t: BoundMlp::bind(graph, &params.adapter_t),
            head_a: BoundMlp::bind(graph, &params.head_a),
            head_t: BoundMlp::bind(graph, &params.head_t),
            decoder_a: BoundMlp::bind(graph, &params.decoder_a),
            decoder_t: BoundMlp::bind(graph, &params.decoder_t),
        }
    }

    /// Leaf ids in canonical tensor order.
    pub fn ids(&self) -> Vec<NodeId> {
        [
            self.adapter_a,
            self.adapter_t,
            self.head_a,
            self.head_t,
            self.decoder_a,
            self.decoder_t,
        ]
        .iter()
        .flat_map(BoundMlp::ids)
        .collect()
    }

    /// Gradients after `backward`, in canonical order. Parameters the root
    /// does not depend on get zeros.
    pub fn gradients<T: Scalar>(&self, graph: &Graph<T>) -> Vec<Tensor2<T>> {
        self.ids()
            .into_iter()
            .map(|id| match graph.grad(id) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = graph.value(id).shape();
                    Tensor2::zeros(r, c)
                }
            })
            .collect()
    }
}

/// Node ids of the intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardState {
    pub f_a: NodeId,
    pub f_t: NodeId,
    pub z_a: NodeId,
    pub z_t: NodeId,
    /// Text-space reconstruction decoded from `z_a`.
    pub h_t: NodeId,
    /// Audio-space reconstruction decoded from `z_t`.
    pub h_a: NodeId,
}

fn check_input<T: Scalar>(
    graph: &Graph<T>,
    id: NodeId,
    modality: &'static str,
    expected: usize,
) -> Result<(), ModelError> {
    let got = graph.value(id).cols();
    if got != expected {
        return Err(ModelError::InputDim {
            modality,
            expected,
            got,
        });
    }
    Ok(())
}

/// Runs adapters, heads, normalization and decoders.
pub fn forward<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams,
    audio: NodeId,
    text: NodeId,
) -> Result<ForwardState, ModelError> {
    check_input(graph, audio, "audio", params.dims.d_a)?;
    check_input(graph, text, "text", params.dims.d_t)?;
    let (ra, rt) = (graph.value(audio).rows(), graph.value(text).rows());
    if ra != rt {
        return Err(ModelError::RowMismatch { audio: ra, text: rt });
    }
    let f_a = params.adapter_a.apply(graph, audio)?;
    let f_t = params.adapter_t.apply(graph, text)?;
    let z_a = params.head_a.apply(graph, f_a)?;
    let z_a = graph.l2_normalize_rows(z_a, NORM_EPS)?;
    let z_t = params.head_t.apply(graph, f_t)?;
    let z_t = graph.l2_normalize_rows(z_t, NORM_EPS)?;
    let h_t = params.decoder_a.apply(graph, z_a)?;
    let h_a = params.decoder_t.apply(graph, z_t)?;
    Ok(ForwardState {
        f_a,
        f_t,
        z_a,
        z_t,
        h_t,
        h_a,
    })
}

fn embed<T: Scalar>(
    adapter: &Mlp<T>,
    head: &Mlp<T>,
    features: &Tensor2<T>,
    expected: usize,
    modality: &'static str,
) -> Result<Tensor2<T>, ModelError> {
    let mut graph = Graph::new();
    let x = graph.constant(features.clone());
    check_input(&graph, x, modality, expected)?;
    let adapter = BoundMlp::bind(&mut graph, adapter);
    let head = BoundMlp::bind(&mut graph, head);
    let f = adapter.apply(&mut graph, x)?;
    let z = head.apply(&mut graph, f)?;
    let z = graph.l2_normalize_rows(z, NORM_EPS)?;
    Ok(graph.value(z).clone())
}

/// Unit-norm shared-space embeddings of raw audio features.
pub fn embed_audio<T: Scalar>(params: &ModelParams<T>, features: &Tensor2<T>) -> Result<Tensor2<T>, ModelError> {
    embed(&params.adapter_a, &params.head_a, features, params.dims.d_a, "audio")
}

/// Unit-norm shared-space embeddings of raw text features.
pub fn embed_text<T: Scalar>(params: &ModelParams<T>, features: &Tensor2<T>) -> Result<Tensor2<T>, ModelError> {
    embed(&params.adapter_t, &params.head_t, features, params.dims.d_t, "text")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            d_a: 5,
            d_t: 3,
            hidden: 4,
            embed_dim: 6,
        }
    }

    #[test]
    fn init_is_deterministic_bounded_and_zero_bias() {
        let a = ModelParams::<f32>::init(dims(), 3).unwrap();
        let b = ModelParams::<f32>::init(dims(), 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::<f32>::init(dims(), 4).unwrap());
        for mlp in a.groups() {
            for layer in [&mlp.hidden, &mlp.output] {
                let (fan_in, fan_out) = layer.weight.shape();
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                assert!(layer.weight.data().iter().all(|w| w.abs() <= s));
                assert!(layer.bias.data().iter().all(|&b| b == 0.0));
            }
        }
        assert_eq!(ModelParams::<f32>::tensor_names().len(), a.tensors().len());
    }

    #[test]
    fn zero_dims_rejected() {
        let d = ModelDims { hidden: 0, ..dims() };
        assert!(matches!(ModelParams::<f32>::init(d, 0), Err(ModelError::ZeroDim(_))));
    }

    #[test]
    fn forward_shapes_and_unit_rows() {
        let wide = ModelDims { hidden: 32, ..dims() };
        let params = ModelParams::<f32>::init(wide, 1).unwrap();
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let a = g.constant(Tensor2::from_fn(7, 5, |i, j| ((i * 5 + j) as f32 * 0.37).sin()));
        let t = g.constant(Tensor2::from_fn(7, 3, |i, j| ((i * 3 + j) as f32 * 0.71).cos()));
        let s = forward(&mut g, &bound, a, t).unwrap();
        assert_eq!(g.value(s.z_a).shape(), (7, 6));
        assert_eq!(g.value(s.z_t).shape(), (7, 6));
        assert_eq!(g.value(s.h_t).shape(), (7, 3));
        assert_eq!(g.value(s.h_a).shape(), (7, 5));
        for z in [s.z_a, s.z_t] {
            for row in g.value(z).iter_rows() {
                let n: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5, "row norm {n}");
            }
        }
    }

    #[test]
    fn input_dimension_errors() {
        let params = ModelParams::<f32>::init(dims(), 1).unwrap();
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let a = g.constant(Tensor2::zeros(2, 4));
        let t = g.constant(Tensor2::zeros(2, 3));
        assert!(matches!(
            forward(&mut g, &bound, a, t),
            Err(ModelError::InputDim { modality: "audio", .. })
        ));
        let a = g.constant(Tensor2::zeros(3, 5));
        assert!(matches!(forward(&mut g, &bound, a, t), Err(ModelError::RowMismatch { .. })));
    }

    #[test]
    fn from_tensors_roundtrip_and_shape_check() {
        let params = ModelParams::<f32>::init(dims(), 9).unwrap();
        let tensors: Vec<_> = params.tensors().into_iter().cloned().collect();
        assert_eq!(ModelParams::from_tensors(dims(), tensors.clone()).unwrap(), params);
        let mut bad = tensors;
        bad[0] = Tensor2::zeros(1, 1);
        assert!(ModelParams::from_tensors(dims(), bad).is_err());
    }
}
