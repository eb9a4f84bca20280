//! The fully-connected detector network.
//!
//! Hidden layers apply an affine map followed by `tanh`; the output layer
//! is `z * tanh(affine)`, which bounds every output coordinate to the
//! amplitude range `[-z, z]` of the modulation. An inverted dropout mask
//! (survivors scaled by `1/(1-p)`) is applied after the final hidden layer
//! during training only. Gradients are computed analytically, and the
//! optimizer is a moment-based Adam update without bias correction of the
//! moment estimates (a corrected variant is available behind a flag).

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("layer dims {0:?} invalid: need at least two positive entries")]
    InvalidDims(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not match the parameters: {0}")]
    StaleCache(String),
    #[error("regularization weight {0} must be >= 0")]
    NegativeLambda(f64),
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidDropout(f64),
}

/// Rectified linear unit. Available as an alternative activation for
/// comparison; the network itself uses `tanh`, which preserves the sign
/// of negative pre-activations instead of flattening them to zero.
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Weights, biases, and the output amplitude bound of the detector MLP.
///
/// `weights[i]` has shape `dims[i+1] x dims[i]`; `biases[i]` has length
/// `dims[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output_scale: f64,
}

impl MlpParams {
    /// Assembles parameters from explicit weight/bias arrays.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        output_scale: f64,
    ) -> Result<Self, NeuralError> {
        validate_dims(&layer_dims)?;
        if weights.len() != layer_dims.len() - 1 || biases.len() != layer_dims.len() - 1 {
            return Err(NeuralError::ShapeMismatch(format!(
                "{} weight and {} bias arrays for {} transitions",
                weights.len(),
                biases.len(),
                layer_dims.len() - 1
            )));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.shape() != [layer_dims[i + 1], layer_dims[i]] || b.len() != layer_dims[i + 1] {
                return Err(NeuralError::ShapeMismatch(format!(
                    "transition {i}: weight {:?}, bias {}",
                    w.shape(),
                    b.len()
                )));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            output_scale,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn n_hidden(&self) -> usize {
        self.layer_dims.len() - 2
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Total number of trainable parameters.
    pub fn n_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

fn validate_dims(dims: &[usize]) -> Result<(), NeuralError> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(NeuralError::InvalidDims(dims.to_vec()));
    }
    Ok(())
}

/// Fresh parameters: biases at zero, weights i.i.d. symmetric uniform with
/// the fan-balanced bound `sqrt(6 / (fan_in + fan_out))`.
pub fn init_mlp(
    layer_dims: &[usize],
    output_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MlpParams, NeuralError> {
    validate_dims(layer_dims)?;
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for transition in layer_dims.windows(2) {
        let (fan_in, fan_out) = (transition[0], transition[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        output_scale,
    })
}

/// Forward-pass mode: plain inference, or training with dropout.
pub enum Mode<'r> {
    Infer,
    Train { p_drop: f64, rng: &'r mut ChaCha8Rng },
}

/// Intermediate activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    /// Post-`tanh` hidden activations, before any dropout.
    hidden: Vec<Array2<f64>>,
    /// Inverted dropout mask on the final hidden layer, entries in
    /// `{0, 1/(1-p)}`; absent in inference mode.
    dropout_mask: Option<Array2<f64>>,
    /// `tanh` values at the output layer (output = scale * these).
    output_tanh: Array2<f64>,
}

impl ForwardCache {
    pub fn dropout_mask(&self) -> Option<&Array2<f64>> {
        self.dropout_mask.as_ref()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.nrows()
    }
}

/// Runs a batch through the network. Rows of `inputs` are samples.
pub fn forward(
    params: &MlpParams,
    inputs: ArrayView2<f64>,
    mode: Mode<'_>,
) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
    match mode {
        Mode::Infer => forward_masked(params, inputs, None),
        Mode::Train { p_drop, rng } => {
            if !(0.0..1.0).contains(&p_drop) {
                return Err(NeuralError::InvalidDropout(p_drop));
            }
            if params.n_hidden() == 0 {
                return forward_masked(params, inputs, None);
            }
            let width = params.layer_dims[params.layer_dims.len() - 2];
            let keep = 1.0 - p_drop;
            let mask = Array2::from_shape_fn((inputs.nrows(), width), |_| {
                if rng.random::<f64>() < p_drop {
                    0.0
                } else {
                    1.0 / keep
                }
            });
            forward_masked(params, inputs, Some(mask))
        }
    }
}

/// Forward pass with an explicit dropout mask on the final hidden layer
/// (`None` disables dropout). Exposed so an identical loss surface can be
/// re-evaluated under a cached mask, e.g. by finite-difference checks.
pub fn forward_masked(
    params: &MlpParams,
    inputs: ArrayView2<f64>,
    mask: Option<Array2<f64>>,
) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
    if inputs.ncols() != params.input_dim() {
        return Err(NeuralError::ShapeMismatch(format!(
            "input width {} for input dim {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    if let Some(m) = &mask {
        let want = [
            inputs.nrows(),
            params.layer_dims[params.layer_dims.len() - 2],
        ];
        if m.shape() != want || params.n_hidden() == 0 {
            return Err(NeuralError::ShapeMismatch(format!(
                "dropout mask {:?}, expected {:?}",
                m.shape(),
                want
            )));
        }
    }
    let n_hidden = params.n_hidden();
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut fed = inputs.to_owned();
    for i in 0..n_hidden {
        let mut z = fed.dot(&params.weights[i].t());
        z += &params.biases[i];
        z.mapv_inplace(f64::tanh);
        hidden.push(z.clone());
        if i == n_hidden - 1 {
            if let Some(m) = &mask {
                z *= m;
            }
        }
        fed = z;
    }
    let last = params.weights.len() - 1;
    let mut u = fed.dot(&params.weights[last].t());
    u += &params.biases[last];
    u.mapv_inplace(f64::tanh);
    let outputs = u.mapv(|t| t * params.output_scale);
    Ok((
        outputs,
        ForwardCache {
            inputs: inputs.to_owned(),
            hidden,
            dropout_mask: mask,
            output_tanh: u,
        },
    ))
}

/// Squared-error objective with an L2 weight penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// `mse_part + l2_part`.
    pub total: f64,
    /// Mean over the batch of the squared error norm per sample.
    pub mse_part: f64,
    /// `lambda` times the sum of squared weights (biases excluded).
    pub l2_part: f64,
}

/// Evaluates the training objective for a batch of outputs and targets.
pub fn loss(
    outputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    params: &MlpParams,
    lambda: f64,
) -> Result<LossValue, NeuralError> {
    if lambda < 0.0 {
        return Err(NeuralError::NegativeLambda(lambda));
    }
    if outputs.shape() != targets.shape() {
        return Err(NeuralError::ShapeMismatch(format!(
            "outputs {:?} vs targets {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let batch = outputs.nrows().max(1) as f64;
    let mse_part = Zip::from(outputs)
        .and(targets)
        .fold(0.0, |acc, o, t| acc + (o - t) * (o - t))
        / batch;
    let l2_part = lambda * params.weight_norm_sq();
    Ok(LossValue {
        total: mse_part + l2_part,
        mse_part,
        l2_part,
    })
}

/// Parameter gradients, shaped exactly like [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Analytic gradients of the total loss (squared error plus L2 penalty)
/// with respect to every weight and bias, honoring the dropout mask stored
/// in the cache.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    targets: ArrayView2<f64>,
    lambda: f64,
) -> Result<MlpGradients, NeuralError> {
    if lambda < 0.0 {
        return Err(NeuralError::NegativeLambda(lambda));
    }
    let n_hidden = params.n_hidden();
    if cache.hidden.len() != n_hidden
        || cache.inputs.ncols() != params.input_dim()
        || cache.output_tanh.ncols() != params.output_dim()
    {
        return Err(NeuralError::StaleCache(format!(
            "cache for {} hidden layers / in {} / out {}, params need {} / {} / {}",
            cache.hidden.len(),
            cache.inputs.ncols(),
            cache.output_tanh.ncols(),
            n_hidden,
            params.input_dim(),
            params.output_dim()
        )));
    }
    for (i, h) in cache.hidden.iter().enumerate() {
        if h.ncols() != params.layer_dims[i + 1] || h.nrows() != cache.inputs.nrows() {
            return Err(NeuralError::StaleCache(format!(
                "hidden activation {i} has shape {:?}",
                h.shape()
            )));
        }
    }
    if targets.shape() != cache.output_tanh.shape() {
        return Err(NeuralError::ShapeMismatch(format!(
            "targets {:?} vs outputs {:?}",
            targets.shape(),
            cache.output_tanh.shape()
        )));
    }

    let batch = cache.inputs.nrows().max(1) as f64;
    let z = params.output_scale;

    // masked view of the final hidden layer as it fed the output layer
    let fed_last: Option<Array2<f64>> = match (&cache.dropout_mask, cache.hidden.last()) {
        (Some(m), Some(h)) => Some(h * m),
        _ => None,
    };

    let mut grad_w: Vec<Array2<f64>> = Vec::with_capacity(params.weights.len());
    let mut grad_b: Vec<Array1<f64>> = Vec::with_capacity(params.biases.len());

    // output layer: d total / d u = (2/B)(out - tgt) * z * (1 - tanh(u)^2)
    let mut delta = Zip::from(&cache.output_tanh)
        .and(targets)
        .map_collect(|&t, &tgt| (2.0 / batch) * (z * t - tgt) * z * (1.0 - t * t));
    grad_w.push(delta.t().dot(&layer_input(n_hidden, cache, &fed_last)));
    grad_b.push(delta.sum_axis(Axis(0)));

    for layer in (0..n_hidden).rev() {
        let mut upstream = delta.dot(&params.weights[layer + 1]);
        if layer == n_hidden - 1 {
            if let Some(m) = &cache.dropout_mask {
                upstream *= m;
            }
        }
        delta = Zip::from(&upstream)
            .and(&cache.hidden[layer])
            .map_collect(|&u, &a| u * (1.0 - a * a));
        grad_w.push(delta.t().dot(&layer_input(layer, cache, &fed_last)));
        grad_b.push(delta.sum_axis(Axis(0)));
    }
    grad_w.reverse();
    grad_b.reverse();

    if lambda > 0.0 {
        for (gw, w) in grad_w.iter_mut().zip(&params.weights) {
            Zip::from(gw).and(w).for_each(|g, &w| *g += 2.0 * lambda * w);
        }
    }
    Ok(MlpGradients {
        weights: grad_w,
        biases: grad_b,
    })
}

/// The batch that fed the affine map of `layer` (0 is the first hidden
/// layer, `n_hidden` the output layer).
fn layer_input<'a>(
    layer: usize,
    cache: &'a ForwardCache,
    fed_last: &'a Option<Array2<f64>>,
) -> ArrayView2<'a, f64> {
    if layer == 0 {
        cache.inputs.view()
    } else if layer == cache.hidden.len() {
        match fed_last {
            Some(f) => f.view(),
            None => cache.hidden[layer - 1].view(),
        }
    } else {
        cache.hidden[layer - 1].view()
    }
}

/// Moment estimates and hyperparameters of the Adam update.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_weights: Vec<Array2<f64>>,
    v_biases: Vec<Array1<f64>>,
    step: u64,
    pub learning_rate: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub epsilon: f64,
    /// When set, rescale the moment estimates by `1/(1 - delta^step)`
    /// before the update (the conventional corrected form). Off by
    /// default: the plain moment recursion is used as-is.
    pub bias_correction: bool,
}

impl AdamState {
    pub fn new(
        params: &MlpParams,
        learning_rate: f64,
        delta1: f64,
        delta2: f64,
        epsilon: f64,
        bias_correction: bool,
    ) -> Self {
        Self {
            m_weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            step: 0,
            learning_rate,
            delta1,
            delta2,
            epsilon,
            bias_correction,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update:
/// `m <- d1*m + (1-d1)*g`, `v <- d2*v + (1-d2)*g^2`,
/// `theta <- theta - eta * m / sqrt(v + eps)` (uncorrected form).
pub fn adam_step(params: &mut MlpParams, grads: &MlpGradients, state: &mut AdamState) {
    debug_assert_eq!(grads.weights.len(), params.weights.len());
    state.step += 1;
    let (d1, d2) = (state.delta1, state.delta2);
    let eta = state.learning_rate;
    let eps = state.epsilon;
    let (c1, c2) = if state.bias_correction {
        (
            1.0 - d1.powf(state.step as f64),
            1.0 - d2.powf(state.step as f64),
        )
    } else {
        (1.0, 1.0)
    };
    let corrected = state.bias_correction;

    let apply = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = d1 * *m + (1.0 - d1) * g;
        *v = d2 * *v + (1.0 - d2) * g * g;
        if corrected {
            let mh = *m / c1;
            let vh = *v / c2;
            *theta -= eta * mh / (vh.sqrt() + eps);
        } else {
            *theta -= eta * *m / (*v + eps).sqrt();
        }
    };

    for i in 0..params.weights.len() {
        Zip::from(&mut params.weights[i])
            .and(&grads.weights[i])
            .and(&mut state.m_weights[i])
            .and(&mut state.v_weights[i])
            .for_each(|t, &g, m, v| apply(t, g, m, v));
        Zip::from(&mut params.biases[i])
            .and(&grads.biases[i])
            .and(&mut state.m_biases[i])
            .and(&mut state.v_biases[i])
            .for_each(|t, &g, m, v| apply(t, g, m, v));
    }
}
