//! Multilayer perceptron with manual backpropagation, used as the critic
//! class for variational divergence estimation.
//!
//! The network maps d inputs to one scalar through tanh hidden layers; the
//! last layer is affine followed by a configurable output activation. All
//! passes are batched matrix products.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;

const RELU_EPS: f64 = 1e-6;

/// Activation applied to the final scalar output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// max(z, 0) + 1e-6; strictly positive so logarithms of the output stay
    /// finite.
    ReluEps,
    Sigmoid,
}

impl OutputActivation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::ReluEps => z.max(0.0) + RELU_EPS,
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::ReluEps => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            OutputActivation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer, stored as (out x in) weights plus a bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// The critic network. Hidden layers use tanh; see [`OutputActivation`] for
/// the final nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output_activation: OutputActivation,
}

/// Parameter gradients with the same shapes as the network's layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

struct ForwardCache {
    /// Post-tanh activations per hidden layer.
    hidden: Vec<Array2<f64>>,
    /// Pre-activation of the output layer, one scalar per sample.
    z_out: Array1<f64>,
    /// Post-activation outputs.
    outputs: Array1<f64>,
}

impl Mlp {
    /// Builds a network from explicit layers. Layer dimensions must chain,
    /// the output must be scalar, and all parameters must be finite.
    pub fn from_layers(layers: Vec<Layer>, output_activation: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(Error::invalid(format!(
                    "layer dimensions do not chain: {} outputs feeding {} inputs",
                    pair[0].weight.nrows(),
                    pair[1].weight.ncols()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::invalid("bias length must equal layer output size"));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters".into()));
            }
        }
        if layers.last().unwrap().weight.nrows() != 1 {
            return Err(Error::invalid("output layer must produce one scalar"));
        }
        Ok(Mlp {
            layers,
            output_activation,
        })
    }

    /// Fresh network with weights drawn uniformly from (-s, s), s =
    /// sqrt(1/in_dim) per layer, and zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        output_activation: OutputActivation,
        gen: &mut ChaCha12Rng,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for io in dims.windows(2) {
            let (fan_in, fan_out) = (io[0], io[1]);
            let s = (1.0 / fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_out, fan_in), |_| gen.gen_range(-s..s));
            layers.push(Layer {
                weight,
                bias: Array1::zeros(fan_out),
            });
        }
        Mlp::from_layers(layers, output_activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn forward_cached(&self, batch: ArrayView2<f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let n_hidden = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut act = batch.to_owned();
        for layer in &self.layers[..n_hidden] {
            let mut z = act.dot(&layer.weight.t());
            z += &layer.bias;
            z.mapv_inplace(f64::tanh);
            hidden.push(z.clone());
            act = z;
        }
        let last = &self.layers[n_hidden];
        let mut z = act.dot(&last.weight.t());
        z += &last.bias;
        let z_out = z.index_axis(Axis(1), 0).to_owned();
        let outputs = z_out.mapv(|v| self.output_activation.apply(v));
        Ok(ForwardCache {
            hidden,
            z_out,
            outputs,
        })
    }

    /// Network outputs for a whole batch (one scalar per row).
    pub fn forward_batch(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(batch)?.outputs)
    }

    /// Scalar output for a single input.
    pub fn forward_one(&self, x: ArrayView1<f64>) -> Result<f64> {
        let row = x
            .to_owned()
            .into_shape_with_order((1, x.len()))
            .expect("row reshape");
        Ok(self.forward_batch(row.view())?[0])
    }

    /// Gradients of sum_s loss_s with respect to every weight and bias,
    /// given d loss_s / d output_s for each row of the batch.
    pub fn param_grads(
        &self,
        loss_grads_at_outputs: &[f64],
        batch: ArrayView2<f64>,
    ) -> Result<MlpGrads> {
        if loss_grads_at_outputs.len() != batch.nrows() {
            return Err(Error::invalid(format!(
                "{} loss gradients for {} batch rows",
                loss_grads_at_outputs.len(),
                batch.nrows()
            )));
        }
        let cache = self.forward_cached(batch)?;
        let (grads, _) = self.backward(&cache, loss_grads_at_outputs, batch, false);
        Ok(grads)
    }

    /// Gradient of the scalar output with respect to the input, per row.
    pub fn input_grads_batch(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cache = self.forward_cached(batch)?;
        let ones = vec![1.0; batch.nrows()];
        let (_, input) = self.backward(&cache, &ones, batch, true);
        Ok(input.expect("input gradients requested"))
    }

    /// Gradient of the scalar output with respect to a single input.
    pub fn input_grad(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let row = x
            .to_owned()
            .into_shape_with_order((1, x.len()))
            .expect("row reshape");
        Ok(self.input_grads_batch(row.view())?.row(0).to_owned())
    }

    /// Output values and input gradients in one pass.
    pub fn forward_and_input_grads(
        &self,
        batch: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let cache = self.forward_cached(batch)?;
        let ones = vec![1.0; batch.nrows()];
        let outputs = cache.outputs.clone();
        let (_, input) = self.backward(&cache, &ones, batch, true);
        Ok((outputs, input.expect("input gradients requested")))
    }

    /// Reverse pass shared by parameter and input gradients. `delta` starts
    /// as dL/d(output) times the output-activation derivative and is pulled
    /// back through each layer.
    fn backward(
        &self,
        cache: &ForwardCache,
        loss_grads_at_outputs: &[f64],
        batch: ArrayView2<f64>,
        want_input_grads: bool,
    ) -> (MlpGrads, Option<Array2<f64>>) {
        let n = batch.nrows();
        let n_layers = self.layers.len();
        let mut delta = Array2::<f64>::zeros((n, 1));
        for s in 0..n {
            delta[[s, 0]] =
                loss_grads_at_outputs[s] * self.output_activation.derivative(cache.z_out[s]);
        }

        let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let input_act: ArrayView2<f64> = if l == 0 {
                batch.view()
            } else {
                cache.hidden[l - 1].view()
            };
            let grad_w = delta.t().dot(&input_act);
            let grad_b = delta.sum_axis(Axis(0));
            grads.push(Layer {
                weight: grad_w,
                bias: grad_b,
            });
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weight);
                // tanh'(z) = 1 - tanh(z)^2, and hidden[l-1] stores tanh(z)
                next.zip_mut_with(&cache.hidden[l - 1], |d, a| *d *= 1.0 - a * a);
                delta = next;
            } else if want_input_grads {
                let input = delta.dot(&self.layers[0].weight);
                grads.reverse();
                return (MlpGrads { layers: grads }, Some(input));
            }
        }
        grads.reverse();
        (MlpGrads { layers: grads }, None)
    }

    /// In-place gradient-ascent update: theta += step * grad.
    pub fn ascend(&mut self, grads: &MlpGrads, step: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weight.scaled_add(step, &g.weight);
            layer.bias.scaled_add(step, &g.bias);
        }
    }
}

/// Which variational problem the critic is trained on. Determines the
/// output activation and how the first variation is recovered from the
/// trained network.
#[derive(Debug, Clone, PartialEq)]
pub enum VariationalSpec {
    /// Relative entropy against a sampled target:
    /// maximize mean_q[h] - log mean_pi[exp(h)].
    KlSample,
    /// Relative entropy against a known unnormalized density, written over
    /// positive critics h' with base distribution p = standard normal:
    /// maximize mean_q[log(h'(x) p(x) / pi(x))] - log mean_p[h'].
    KlEnergy { target: GaussianMixture },
    /// Jensen-Shannon with a (0,1)-valued critic:
    /// maximize mean_q[log(1 - h')] + mean_pi[log h'].
    Js,
}

impl VariationalSpec {
    pub fn output_activation(&self) -> OutputActivation {
        match self {
            VariationalSpec::KlSample => OutputActivation::Identity,
            VariationalSpec::KlEnergy { .. } => OutputActivation::ReluEps,
            VariationalSpec::Js => OutputActivation::Sigmoid,
        }
    }
}

/// Current value of the variational objective for a trained critic.
pub fn variational_objective(
    params: &Mlp,
    spec: &VariationalSpec,
    q_samples: ArrayView2<f64>,
    reference_samples: ArrayView2<f64>,
) -> Result<f64> {
    let hq = params.forward_batch(q_samples)?;
    let hr = params.forward_batch(reference_samples)?;
    Ok(objective_value(spec, &hq, &hr, q_samples))
}

fn objective_value(
    spec: &VariationalSpec,
    hq: &Array1<f64>,
    hr: &Array1<f64>,
    q_samples: ArrayView2<f64>,
) -> f64 {
    let m = hq.len() as f64;
    let n = hr.len() as f64;
    match spec {
        VariationalSpec::KlSample => {
            let mean_q = hq.sum() / m;
            mean_q - (log_sum_exp(hr) - n.ln())
        }
        VariationalSpec::KlEnergy { target } => {
            let mut mean_q = 0.0;
            for (i, row) in q_samples.rows().into_iter().enumerate() {
                let log_p = standard_normal_log_density(row);
                mean_q += hq[i].ln() + log_p - target.log_density(row);
            }
            mean_q /= m;
            mean_q - (hr.sum() / n).ln()
        }
        VariationalSpec::Js => {
            let mean_q = hq.iter().map(|h| (1.0 - h).ln()).sum::<f64>() / m;
            let mean_r = hr.iter().map(|h| h.ln()).sum::<f64>() / n;
            mean_q + mean_r
        }
    }
}

/// d objective / d h'(x) for every q-sample and reference sample.
fn output_grads(
    spec: &VariationalSpec,
    hq: &Array1<f64>,
    hr: &Array1<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let m = hq.len() as f64;
    let n = hr.len() as f64;
    match spec {
        VariationalSpec::KlSample => {
            let lse = log_sum_exp(hr);
            let gq = vec![1.0 / m; hq.len()];
            let gr = hr.iter().map(|h| -((h - lse).exp())).collect();
            (gq, gr)
        }
        VariationalSpec::KlEnergy { .. } => {
            let gq = hq.iter().map(|h| 1.0 / (m * h)).collect();
            let total: f64 = hr.sum();
            let gr = vec![-1.0 / total; hr.len()];
            (gq, gr)
        }
        VariationalSpec::Js => {
            let gq = hq.iter().map(|h| -1.0 / (m * (1.0 - h))).collect();
            let gr = hr.iter().map(|h| 1.0 / (n * h)).collect();
            (gq, gr)
        }
    }
}

/// Trains the critic by `steps` full-batch gradient-ascent updates and
/// returns the final objective value. The network is updated in place, so a
/// caller holding per-objective critics gets warm starts across outer
/// iterations.
pub fn train_variational(
    params: &mut Mlp,
    spec: &VariationalSpec,
    q_samples: ArrayView2<f64>,
    reference_samples: ArrayView2<f64>,
    steps: usize,
    step_size: f64,
) -> Result<f64> {
    if steps == 0 {
        return Err(Error::invalid("training needs at least one step"));
    }
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::invalid("training step size must be positive"));
    }
    if q_samples.ncols() != reference_samples.ncols() {
        return Err(Error::invalid(
            "q samples and reference samples disagree on dimension",
        ));
    }
    if params.output_activation() != spec.output_activation() {
        return Err(Error::invalid(
            "network output activation does not match variational spec",
        ));
    }
    let m = q_samples.nrows();
    let mut batch = Array2::<f64>::zeros((m + reference_samples.nrows(), q_samples.ncols()));
    batch.slice_mut(ndarray::s![..m, ..]).assign(&q_samples);
    batch
        .slice_mut(ndarray::s![m.., ..])
        .assign(&reference_samples);

    let mut last_objective = 0.0;
    for step in 0..steps {
        let cache = params.forward_cached(batch.view())?;
        let hq = cache.outputs.slice(ndarray::s![..m]).to_owned();
        let hr = cache.outputs.slice(ndarray::s![m..]).to_owned();
        let objective = objective_value(spec, &hq, &hr, q_samples);
        if !objective.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        let (gq, gr) = output_grads(spec, &hq, &hr);
        let mut loss_grads = gq;
        loss_grads.extend(gr);
        let (grads, _) = params.backward(&cache, &loss_grads, batch.view(), false);
        params.ascend(&grads, step_size);
        last_objective = objective;
    }
    // Report the objective at the returned parameters.
    let _ = last_objective;
    variational_objective(params, spec, q_samples, reference_samples)
}

pub(crate) fn standard_normal_log_density(x: ArrayView1<f64>) -> f64 {
    let d = x.len() as f64;
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

fn log_sum_exp(v: &Array1<f64>) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}
