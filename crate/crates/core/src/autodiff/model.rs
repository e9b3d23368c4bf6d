//! Feed-forward models over the tape: loss, gradient and Hessian-vector product.
//!
//! Parameter layout is layer-major. Within a layer the weight matrix comes
//! first, stored `[fan_in, fan_out]` row-major, followed by the `fan_out`
//! biases. Layer `l` therefore owns `(fan_in + 1) * fan_out` entries.

use std::borrow::Cow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::tensor::{ParamVector, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Mean over examples of `-log softmax(z)[y]`.
    SoftmaxCrossEntropy,
    /// Mean over examples of `sum_k (yhat_k - y_k)^2`.
    MeanSquaredError,
}

/// Architecture of a dense feed-forward model.
///
/// `widths` lists input, hidden and output widths; two entries give a plain
/// affine (linear) model. The activation sits between affine layers only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    /// Positive multiplier applied to the mean loss.
    #[serde(default = "one")]
    pub loss_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, head: Head) -> Result<Self> {
        let spec = ModelSpec {
            widths,
            activation,
            head,
            loss_scale: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_loss_scale(mut self, scale: f64) -> Result<Self> {
        self.loss_scale = scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("a model needs at least input and output widths"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !(self.loss_scale > 0.0 && self.loss_scale.is_finite()) {
            return Err(Error::invalid("loss_scale must be positive and finite"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `d = sum over layers of (fan_in + 1) * fan_out`.
    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Seeded initialization: weights `N(0, gain / fan_in)` with gain 2 for
    /// relu and 1 otherwise, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamVector {
        let gain = match self.activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        let mut out = Vec::with_capacity(self.num_params());
        for w in self.widths.windows(2) {
            let std = (gain / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                let z: f64 = rng.sample(StandardNormal);
                out.push(std * z);
            }
            out.extend(std::iter::repeat_n(0.0, w[1]));
        }
        ParamVector::from_vec(out)
    }
}

/// Weights and biases of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `[fan_in, fan_out]`.
    pub weights: Tensor,
    /// `[fan_out]`.
    pub bias: Tensor,
}

/// Structured view of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub layers: Vec<LayerParams>,
}

pub fn pack_params(state: &ModelState) -> ParamVector {
    let mut out = Vec::new();
    for layer in &state.layers {
        out.extend_from_slice(layer.weights.values());
        out.extend_from_slice(layer.bias.values());
    }
    ParamVector::from_vec(out)
}

pub fn unpack_params(model: &ModelSpec, params: &ParamVector) -> Result<ModelState> {
    check_len(model, params)?;
    let v = params.as_slice();
    let mut offset = 0;
    let mut layers = Vec::with_capacity(model.num_layers());
    for w in model.widths.windows(2) {
        let nw = w[0] * w[1];
        let weights = Tensor::raw(vec![w[0], w[1]], v[offset..offset + nw].to_vec());
        offset += nw;
        let bias = Tensor::raw(vec![w[1]], v[offset..offset + w[1]].to_vec());
        offset += w[1];
        layers.push(LayerParams { weights, bias });
    }
    Ok(ModelState { layers })
}

fn check_len(model: &ModelSpec, params: &ParamVector) -> Result<()> {
    if params.len() != model.num_params() {
        return Err(Error::ParamLength {
            expected: model.num_params(),
            found: params.len(),
        });
    }
    Ok(())
}

/// A view of selected examples of a dataset.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    dataset: &'a Dataset,
    indices: Cow<'a, [usize]>,
}

impl<'a> Batch<'a> {
    pub fn new(dataset: &'a Dataset, indices: &'a [usize]) -> Self {
        Batch {
            dataset,
            indices: Cow::Borrowed(indices),
        }
    }

    pub fn owned(dataset: &'a Dataset, indices: Vec<usize>) -> Self {
        Batch {
            dataset,
            indices: Cow::Owned(indices),
        }
    }

    pub fn full(dataset: &'a Dataset) -> Self {
        Batch::owned(dataset, (0..dataset.len()).collect())
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sub-batch over the given positions of this batch's index list.
    pub fn select(&self, indices: &'a [usize]) -> Batch<'a> {
        Batch::new(self.dataset, indices)
    }
}

struct Recorded {
    graph: Graph,
    params: Vec<NodeId>,
    loss: NodeId,
    logits: NodeId,
}

fn record(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<Recorded> {
    model.validate()?;
    check_len(model, params)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let ds = batch.dataset();
    if ds.num_features() != model.input_dim() {
        return Err(Error::LayerShape {
            layer: 0,
            expected: format!("{} input features", model.input_dim()),
            found: format!("{} features", ds.num_features()),
        });
    }
    let last = model.num_layers() - 1;
    let out_dim = model.output_dim();
    let rows = batch.len();
    match (model.head, ds.labels()) {
        (Head::SoftmaxCrossEntropy, Labels::Classes { num_classes, .. }) if *num_classes == out_dim => {}
        (Head::MeanSquaredError, Labels::Targets { width, .. }) if *width == out_dim => {}
        (head, labels) => {
            return Err(Error::LayerShape {
                layer: last,
                expected: format!("{out_dim} outputs compatible with {head:?}"),
                found: labels.describe(),
            })
        }
    }

    let mut g = Graph::new();
    let state = unpack_params(model, params)?;
    let mut param_nodes = Vec::with_capacity(2 * state.layers.len());
    let x = g.constant(ds.gather_features(batch.indices()));
    let mut h = x;
    for (l, layer) in state.layers.into_iter().enumerate() {
        let w = g.variable(layer.weights);
        let b = g.variable(layer.bias);
        param_nodes.push(w);
        param_nodes.push(b);
        let z = g.matmul(h, w);
        let z = g.add_row(z, b);
        if !g.value(z).all_finite() {
            return Err(Error::NonFinite {
                stage: format!("layer {l} pre-activation"),
            });
        }
        h = if l == last {
            z
        } else {
            match model.activation {
                Activation::Relu => g.relu(z),
                Activation::Tanh => g.tanh(z),
            }
        };
    }
    let logits = h;
    let targets = g.constant(ds.gather_targets(batch.indices()));
    let total = match model.head {
        Head::SoftmaxCrossEntropy => {
            let ls = g.log_softmax(logits);
            let picked = g.mul(ls, targets);
            let s = g.sum_all(picked);
            g.scale(s, -1.0)
        }
        Head::MeanSquaredError => {
            let diff = g.sub(logits, targets);
            let sq = g.mul(diff, diff);
            g.sum_all(sq)
        }
    };
    let loss = g.scale(total, model.loss_scale / rows as f64);
    if !g.value(loss).all_finite() {
        return Err(Error::NonFinite { stage: "loss".into() });
    }
    Ok(Recorded {
        graph: g,
        params: param_nodes,
        loss,
        logits,
    })
}

fn flatten(g: &Graph, nodes: &[NodeId], len: usize) -> ParamVector {
    let mut out = Vec::with_capacity(len);
    for &n in nodes {
        out.extend_from_slice(g.value(n).values());
    }
    ParamVector::from_vec(out)
}

/// Mean per-example loss `L_S(w)` over the batch.
pub fn forward_loss(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    let rec = record(model, params, batch)?;
    Ok(rec.graph.value(rec.loss).values()[0])
}

/// `∇L_S(w)`.
pub fn grad(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
    loss_and_grad(model, params, batch).map(|(_, g)| g)
}

pub fn loss_and_grad(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<(f64, ParamVector)> {
    let mut rec = record(model, params, batch)?;
    let grads = rec.graph.backward(rec.loss, &rec.params);
    let g = flatten(&rec.graph, &grads, params.len());
    if !g.is_finite() {
        return Err(Error::NonFinite {
            stage: "gradient".into(),
        });
    }
    Ok((rec.graph.value(rec.loss).values()[0], g))
}

/// `H_S(w) v` by differentiating `<∇L_S(w), v>` a second time.
pub fn hvp(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>, v: &ParamVector) -> Result<ParamVector> {
    check_len(model, v)?;
    let mut rec = record(model, params, batch)?;
    let g = &mut rec.graph;
    let grads = g.backward(rec.loss, &rec.params);
    let mut offset = 0;
    let mut inner: Option<NodeId> = None;
    for (&gn, &pn) in grads.iter().zip(&rec.params) {
        let shape = g.value(pn).shape().to_vec();
        let n = g.value(pn).len();
        let vn = g.constant(Tensor::raw(shape, v.as_slice()[offset..offset + n].to_vec()));
        offset += n;
        let d = g.dot(gn, vn);
        inner = Some(match inner {
            None => d,
            Some(acc) => g.add(acc, d),
        });
    }
    let inner = inner.expect("model has at least one layer");
    let hv_nodes = g.backward(inner, &rec.params);
    let hv = flatten(g, &hv_nodes, params.len());
    if !hv.is_finite() {
        return Err(Error::NonFinite {
            stage: "Hessian-vector product".into(),
        });
    }
    Ok(hv)
}

/// Model outputs `[batch, output_dim]`.
pub fn predict(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<Tensor> {
    let rec = record(model, params, batch)?;
    Ok(rec.graph.value(rec.logits).clone())
}

/// Fraction of examples whose arg-max output matches the class label.
pub fn accuracy(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    let Labels::Classes { labels, .. } = batch.dataset().labels() else {
        return Err(Error::invalid("accuracy needs class labels"));
    };
    let out = predict(model, params, batch)?;
    let k = out.cols();
    let correct = batch
        .indices()
        .iter()
        .enumerate()
        .filter(|(row, &idx)| {
            let r = &out.values()[row * k..(row + 1) * k];
            let arg = r
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > r[best] { j } else { best });
            arg == labels[idx]
        })
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_classification() -> Dataset {
        Dataset::from_classes(vec![0.5, -1.0, 0.25, 2.0, -0.75, 0.1], 2, vec![0, 1, 1], 2).unwrap()
    }

    #[test]
    fn param_count_matches_layer_formula() {
        let m = ModelSpec::new(vec![3, 5, 4, 2], Activation::Tanh, Head::SoftmaxCrossEntropy).unwrap();
        assert_eq!(m.num_params(), 4 * 5 + 6 * 4 + 5 * 2);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let m = ModelSpec::new(vec![3, 4, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let state = unpack_params(&m, &p).unwrap();
        assert_eq!(state.layers[0].weights.shape(), &[3, 4]);
        assert_eq!(state.layers[1].bias.shape(), &[2]);
        assert!(pack_params(&state).bitwise_eq(&p));
        assert!(unpack_params(&m, &ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn zero_logits_give_log_k() {
        let ds = tiny_classification();
        let m = ModelSpec::new(vec![2, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let loss = forward_loss(&m, &ParamVector::zeros(m.num_params()), &Batch::full(&ds)).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mismatch_names_layer() {
        let ds = tiny_classification();
        let m = ModelSpec::new(vec![3, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let err = forward_loss(&m, &ParamVector::zeros(m.num_params()), &Batch::full(&ds)).unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 0, .. }), "{err}");
        let m = ModelSpec::new(vec![2, 4, 3], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let err = forward_loss(&m, &ParamVector::zeros(m.num_params()), &Batch::full(&ds)).unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 1, .. }), "{err}");
    }

    #[test]
    fn empty_batch_rejected() {
        let ds = tiny_classification();
        let m = ModelSpec::new(vec![2, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let b = Batch::owned(&ds, vec![]);
        assert!(matches!(
            forward_loss(&m, &ParamVector::zeros(6), &b),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn overflow_reported() {
        let ds = tiny_classification();
        let m = ModelSpec::new(vec![2, 2], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
        let p = ParamVector::new(vec![1e308; 6]).unwrap();
        assert!(matches!(
            forward_loss(&m, &p, &Batch::full(&ds)),
            Err(Error::NonFinite { .. })
        ));
    }
}
