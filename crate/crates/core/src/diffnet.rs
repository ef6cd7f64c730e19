//! Small fully-connected tanh networks with a scalar input and output.
//!
//! Every evaluation carries a forward-mode tangent in the input coordinate, so
//! one pass yields both `u(x̂)` and `∂u/∂x̂`. Parameter gradients of losses that
//! depend on both quantities are obtained by a reverse sweep through that
//! dual-valued forward pass, which handles the mixed `∂²u/∂x̂∂θ` terms exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbpinnError, Result};

/// Weights and biases of a `1 → hidden… → 1` tanh network.
///
/// Parameters live in one flat buffer. Layer `l` stores its `out × in` weight
/// matrix row-major, followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every entry of an [`MlpParams`].
///
/// Shares the flat layout of the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    sizes: Vec<usize>,
    data: Vec<f64>,
}

/// Network output and its derivative with respect to the (normalized) input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub value: f64,
    pub dvalue_dx: f64,
}

/// Contribution of one evaluation point to a loss, with the partial
/// derivatives of that contribution with respect to `value` and `dvalue_dx`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointLoss {
    pub loss: f64,
    pub d_value: f64,
    pub d_dvalue: f64,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(FbpinnError::InvalidShape(format!(
            "need at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(FbpinnError::InvalidShape(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    if sizes[0] != 1 || sizes[sizes.len() - 1] != 1 {
        return Err(FbpinnError::InvalidShape(format!(
            "networks map a scalar to a scalar, got {sizes:?}"
        )));
    }
    Ok(())
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Start of each layer's block in the flat buffer.
fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut start = 0;
    for w in sizes.windows(2) {
        offsets.push(start);
        start += w[0] * w[1] + w[1];
    }
    offsets
}

/// Builds Glorot-uniform weights and zero biases for the given layer sizes.
///
/// `layer_sizes` must start and end with 1. `[1, 1]` (no hidden layer) is
/// accepted as the minimal affine network.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    validate_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(param_count(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        data.extend((0..n_in * n_out).map(|_| rng.gen_range(-limit..=limit)));
        data.extend(std::iter::repeat(0.0).take(n_out));
    }
    Ok(MlpParams {
        sizes: layer_sizes.to_vec(),
        offsets: layer_offsets(layer_sizes),
        data,
    })
}

impl MlpParams {
    /// Assembles parameters from explicit `(weights, bias)` layers.
    ///
    /// Weights are row-major `out × in`.
    pub fn from_layers(layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut sizes = vec![1usize];
        let mut data = Vec::new();
        for (l, (weights, bias)) in layers.into_iter().enumerate() {
            let n_in = sizes[l];
            let n_out = bias.len();
            if n_out == 0 || weights.len() != n_in * n_out {
                return Err(FbpinnError::InvalidShape(format!(
                    "layer {l}: expected {n_out}x{n_in} weights, got {}",
                    weights.len()
                )));
            }
            sizes.push(n_out);
            data.extend(weights);
            data.extend(bias);
        }
        validate_sizes(&sizes)?;
        let params = MlpParams {
            offsets: layer_offsets(&sizes),
            sizes,
            data,
        };
        if !params.is_finite() {
            return Err(FbpinnError::InvalidShape("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = (self.offsets[l], self.sizes[l], self.sizes[l + 1]);
        let w_end = start + n_in * n_out;
        (&self.data[start..w_end], &self.data[w_end..w_end + n_out])
    }

    /// A gradient buffer of matching shape filled with zeros.
    pub fn zero_gradient(&self) -> ParamGradient {
        ParamGradient {
            sizes: self.sizes.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<LayerJson> = (0..self.num_layers())
            .map(|l| {
                let (w, b) = self.layer(l);
                LayerJson {
                    n_in: self.sizes[l],
                    n_out: self.sizes[l + 1],
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect();
        serde_json::to_value(layers).expect("layer list serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let layers: Vec<LayerJson> = serde_json::from_value(value.clone())
            .map_err(|e| FbpinnError::Serialization(e.to_string()))?;
        let mut expected_in = 1;
        for (l, layer) in layers.iter().enumerate() {
            if layer.n_in != expected_in || layer.bias.len() != layer.n_out {
                return Err(FbpinnError::Serialization(format!(
                    "layer {l} has inconsistent dimensions"
                )));
            }
            expected_in = layer.n_out;
        }
        Self::from_layers(layers.into_iter().map(|l| (l.weights, l.bias)).collect())
    }
}

/// On-disk form of one layer: dimensions, row-major weights, biases.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn layer_span(sizes: &[usize], l: usize) -> (usize, usize, usize) {
    let start = param_count(&sizes[..=l]);
    (start, sizes[l], sizes[l + 1])
}

impl ParamGradient {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(weights, bias)` gradient blocks of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = layer_span(&self.sizes, l);
        let w_end = start + n_in * n_out;
        (&self.data[start..w_end], &self.data[w_end..w_end + n_out])
    }
}

/// Reusable per-point activations for forward/backward sweeps.
///
/// Holding one of these across calls avoids reallocating on every point.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    // Post-activation values and input tangents per layer (index 0 = input).
    act: Vec<Vec<f64>>,
    dact: Vec<Vec<f64>>,
    // Pre-activation tangents and tanh slopes of hidden layers.
    dz: Vec<Vec<f64>>,
    slope: Vec<Vec<f64>>,
    // Backward buffers.
    g_act: Vec<f64>,
    g_dact: Vec<f64>,
    g_z: Vec<f64>,
    g_dz: Vec<f64>,
    batch: BatchTape,
}

/// Number of points pushed through the network together.
const LANES: usize = 4;
type Lanes = [f64; LANES];

/// Lane-interleaved buffers: `act[l][k][lane]` is unit `k` of layer `l` for
/// point `lane` of the current batch.
#[derive(Debug, Clone, Default)]
struct BatchTape {
    act: Vec<Vec<Lanes>>,
    dact: Vec<Vec<Lanes>>,
    dz: Vec<Vec<Lanes>>,
    slope: Vec<Vec<Lanes>>,
    g_act: Vec<Lanes>,
    g_dact: Vec<Lanes>,
    g_z: Vec<Lanes>,
    g_dz: Vec<Lanes>,
    // Column-major copy of every weight matrix, laid out like the parameters.
    wt: Vec<f64>,
    // Lane-major copies of one layer's inputs for the weight adjoints.
    by_lane: Vec<f64>,
    dby_lane: Vec<f64>,
}

impl BatchTape {
    /// Sizes the buffers for `params` and caches its transposed weights.
    fn load(&mut self, params: &MlpParams) {
        let sizes = &params.sizes;
        self.prepare(sizes);
        self.wt.resize(params.data.len(), 0.0);
        for l in 0..params.num_layers() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let start = params.offsets[l];
            let (w, _) = params.layer(l);
            let wt = &mut self.wt[start..start + n_in * n_out];
            for (i, row) in w.chunks_exact(n_in).enumerate() {
                for (k, &v) in row.iter().enumerate() {
                    wt[k * n_out + i] = v;
                }
            }
        }
        let widest = sizes.iter().copied().max().unwrap_or(1);
        self.by_lane.resize(LANES * widest, 0.0);
        self.dby_lane.resize(LANES * widest, 0.0);
    }

    fn prepare(&mut self, sizes: &[usize]) {
        if self.act.len() == sizes.len() && self.act.iter().map(Vec::len).eq(sizes.iter().copied())
        {
            return;
        }
        let per_layer = || sizes.iter().map(|&n| vec![[0.0; LANES]; n]).collect::<Vec<_>>();
        self.act = per_layer();
        self.dact = per_layer();
        self.dz = per_layer();
        self.slope = per_layer();
        let widest = sizes.iter().copied().max().unwrap_or(1);
        self.g_act = vec![[0.0; LANES]; widest];
        self.g_dact = vec![[0.0; LANES]; widest];
        self.g_z = vec![[0.0; LANES]; widest];
        self.g_dz = vec![[0.0; LANES]; widest];
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, sizes: &[usize]) {
        if self.act.len() == sizes.len() && self.act.iter().map(Vec::len).eq(sizes.iter().copied())
        {
            return;
        }
        self.act = sizes.iter().map(|&n| vec![0.0; n]).collect();
        self.dact = sizes.iter().map(|&n| vec![0.0; n]).collect();
        self.dz = sizes.iter().map(|&n| vec![0.0; n]).collect();
        self.slope = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let widest = sizes.iter().copied().max().unwrap_or(1);
        self.g_act = vec![0.0; widest];
        self.g_dact = vec![0.0; widest];
        self.g_z = vec![0.0; widest];
        self.g_dz = vec![0.0; widest];
    }
}

/// `tanh` from a single `expm1` near the origin and a single `exp` elsewhere,
/// both of which keep full relative accuracy in their range.
#[inline]
fn tanh(z: f64) -> f64 {
    if z.abs() < 0.5 {
        let e = (2.0 * z).exp_m1();
        e / (e + 2.0)
    } else {
        1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
    }
}

fn forward(params: &MlpParams, x_hat: f64, tape: &mut Tape) -> EvalResult {
    let sizes = &params.sizes;
    tape.prepare(sizes);
    tape.act[0][0] = x_hat;
    tape.dact[0][0] = 1.0;
    let last = params.num_layers() - 1;
    for l in 0..=last {
        let (w, b) = params.layer(l);
        let n_in = sizes[l];
        let (before, after) = tape.act.split_at_mut(l + 1);
        let (dbefore, dafter) = tape.dact.split_at_mut(l + 1);
        let a_in = &before[l];
        let da_in = &dbefore[l];
        let a_out = &mut after[0];
        let da_out = &mut dafter[0];
        let dz_out = &mut tape.dz[l + 1];
        let slope_out = &mut tape.slope[l + 1];
        let n_out = sizes[l + 1];
        let z = &mut a_out[..n_out];
        let dz = &mut dz_out[..n_out];
        z.copy_from_slice(b);
        dz.iter_mut().for_each(|v| *v = 0.0);
        // Column sweep: each output keeps its own accumulator.
        for (k, (&a, &da)) in a_in.iter().zip(da_in).enumerate() {
            for ((zi, dzi), row) in z.iter_mut().zip(dz.iter_mut()).zip(w.chunks_exact(n_in)) {
                let wik = row[k];
                *zi += wik * a;
                *dzi += wik * da;
            }
        }
        if l == last {
            da_out[..n_out].copy_from_slice(dz);
        } else {
            for i in 0..n_out {
                let t = tanh(z[i]);
                let s = 1.0 - t * t;
                z[i] = t;
                da_out[i] = s * dz[i];
                slope_out[i] = s;
            }
        }
    }
    EvalResult {
        value: tape.act[last + 1][0],
        dvalue_dx: tape.dact[last + 1][0],
    }
}

/// Reverse sweep for one point; adds `∂L/∂θ` into `grad`.
#[cfg(test)]
fn backward(params: &MlpParams, seed: PointLoss, tape: &mut Tape, grad: &mut ParamGradient) {
    let sizes = &params.sizes;
    let last = params.num_layers() - 1;
    // Output layer is affine, so its pre-activation adjoints are the seeds.
    tape.g_z[0] = seed.d_value;
    tape.g_dz[0] = seed.d_dvalue;
    for l in (0..=last).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let start = params.offsets[l];
        let w_end = start + n_in * n_out;
        let (w, _) = params.layer(l);
        let a_in = &tape.act[l];
        let da_in = &tape.dact[l];
        {
            let (gw, gb) = grad.data[start..w_end + n_out].split_at_mut(n_in * n_out);
            for i in 0..n_out {
                let (gz, gdz) = (tape.g_z[i], tape.g_dz[i]);
                gb[i] += gz;
                let row = &mut gw[i * n_in..(i + 1) * n_in];
                for ((g, &a), &da) in row.iter_mut().zip(a_in).zip(da_in) {
                    *g += gz * a + gdz * da;
                }
            }
        }
        if l == 0 {
            break;
        }
        // Adjoints of the previous layer's outputs: Wᵀ·g_z and Wᵀ·g_dz.
        let g_act = &mut tape.g_act[..n_in];
        let g_dact = &mut tape.g_dact[..n_in];
        g_act.iter_mut().for_each(|v| *v = 0.0);
        g_dact.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in w.chunks_exact(n_in).enumerate() {
            let (gz, gdz) = (tape.g_z[i], tape.g_dz[i]);
            for ((ga, gda), &wij) in g_act.iter_mut().zip(g_dact.iter_mut()).zip(row) {
                *ga += wij * gz;
                *gda += wij * gdz;
            }
        }
        // Through the tanh of layer l: a = tanh(z), da = s·dz, s = 1 − a².
        let a = &tape.act[l];
        let s = &tape.slope[l];
        let dz = &tape.dz[l];
        for k in 0..n_in {
            let ds_dz = -2.0 * a[k] * s[k];
            tape.g_z[k] = g_act[k] * s[k] + g_dact[k] * dz[k] * ds_dz;
            tape.g_dz[k] = g_dact[k] * s[k];
        }
    }
}

/// Forward sweep for `LANES` points at once. Each lane performs exactly the
/// operations of [`forward`] in the same order, so results agree bitwise.
///
/// Requires a prior [`BatchTape::load`] with the same parameters.
fn forward_batch(params: &MlpParams, x_hat: Lanes, bt: &mut BatchTape) -> [EvalResult; LANES] {
    let sizes = &params.sizes;
    bt.act[0][0] = x_hat;
    bt.dact[0][0] = [1.0; LANES];
    let last = params.num_layers() - 1;
    for l in 0..=last {
        let (w, b) = params.layer(l);
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let (before, after) = bt.act.split_at_mut(l + 1);
        let (dbefore, dafter) = bt.dact.split_at_mut(l + 1);
        let (a_in, da_in) = (&before[l], &dbefore[l]);
        let z = &mut after[0][..n_out];
        let da_out = &mut dafter[0][..n_out];
        let dz = &mut bt.dz[l + 1][..n_out];
        for (((zi, dzi), row), &bi) in z.iter_mut().zip(dz.iter_mut()).zip(w.chunks_exact(n_in)).zip(b) {
            let mut acc = [bi; LANES];
            let mut dacc = [0.0; LANES];
            for ((&wik, a), da) in row.iter().zip(a_in).zip(da_in) {
                for lane in 0..LANES {
                    acc[lane] += wik * a[lane];
                    dacc[lane] += wik * da[lane];
                }
            }
            *zi = acc;
            *dzi = dacc;
        }
        if l == last {
            da_out.copy_from_slice(dz);
        } else {
            let slope = &mut bt.slope[l + 1][..n_out];
            for i in 0..n_out {
                for lane in 0..LANES {
                    let t = tanh(z[i][lane]);
                    let s = 1.0 - t * t;
                    z[i][lane] = t;
                    da_out[i][lane] = s * dz[i][lane];
                    slope[i][lane] = s;
                }
            }
        }
    }
    let (out, dout) = (bt.act[last + 1][0], bt.dact[last + 1][0]);
    std::array::from_fn(|lane| EvalResult {
        value: out[lane],
        dvalue_dx: dout[lane],
    })
}

/// Reverse sweep for a batch. Parameter adjoints are accumulated lane by lane,
/// matching the point order of repeated [`backward`] calls.
fn backward_batch(params: &MlpParams, seeds: [PointLoss; LANES], bt: &mut BatchTape, grad: &mut ParamGradient) {
    let sizes = &params.sizes;
    let last = params.num_layers() - 1;
    bt.g_z[0] = seeds.map(|s| s.d_value);
    bt.g_dz[0] = seeds.map(|s| s.d_dvalue);
    let active: [bool; LANES] = seeds.map(|s| s.d_value != 0.0 || s.d_dvalue != 0.0);
    for l in (0..=last).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let start = params.offsets[l];
        let w_end = start + n_in * n_out;
        for (k, (a, da)) in bt.act[l].iter().zip(&bt.dact[l]).enumerate() {
            for lane in 0..LANES {
                bt.by_lane[lane * n_in + k] = a[lane];
                bt.dby_lane[lane * n_in + k] = da[lane];
            }
        }
        {
            let (gw, gb) = grad.data[start..w_end + n_out].split_at_mut(n_in * n_out);
            for i in 0..n_out {
                let row = &mut gw[i * n_in..(i + 1) * n_in];
                for lane in (0..LANES).filter(|&lane| active[lane]) {
                    let (gz, gdz) = (bt.g_z[i][lane], bt.g_dz[i][lane]);
                    gb[i] += gz;
                    let a = &bt.by_lane[lane * n_in..(lane + 1) * n_in];
                    let da = &bt.dby_lane[lane * n_in..(lane + 1) * n_in];
                    for ((g, &a), &da) in row.iter_mut().zip(a).zip(da) {
                        *g += gz * a + gdz * da;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let wt = &bt.wt[start..w_end];
        let (g_z, g_dz) = (&bt.g_z[..n_out], &bt.g_dz[..n_out]);
        for ((ga, gda), col) in bt.g_act.iter_mut().zip(bt.g_dact.iter_mut()).zip(wt.chunks_exact(n_out)) {
            let mut acc = [0.0; LANES];
            let mut dacc = [0.0; LANES];
            for ((&wik, gz), gdz) in col.iter().zip(g_z).zip(g_dz) {
                for lane in 0..LANES {
                    acc[lane] += wik * gz[lane];
                    dacc[lane] += wik * gdz[lane];
                }
            }
            *ga = acc;
            *gda = dacc;
        }
        let (g_act, g_dact) = (&bt.g_act[..n_in], &bt.g_dact[..n_in]);
        let (a, s, dz) = (&bt.act[l], &bt.slope[l], &bt.dz[l]);
        for k in 0..n_in {
            for lane in 0..LANES {
                let ds_dz = -2.0 * a[k][lane] * s[k][lane];
                bt.g_z[k][lane] = g_act[k][lane] * s[k][lane] + g_dact[k][lane] * dz[k][lane] * ds_dz;
                bt.g_dz[k][lane] = g_dact[k][lane] * s[k][lane];
            }
        }
    }
}

/// Pads the tail of `inputs` by repeating its last element.
fn lanes_at(inputs: &[f64], start: usize) -> Lanes {
    let last = inputs.len() - 1;
    std::array::from_fn(|lane| inputs[(start + lane).min(last)])
}

/// Outputs and input derivatives at every input, batched.
pub fn eval_many(params: &MlpParams, inputs: &[f64], tape: &mut Tape) -> Vec<EvalResult> {
    let mut out = Vec::with_capacity(inputs.len());
    tape.batch.load(params);
    for start in (0..inputs.len()).step_by(LANES) {
        let evals = forward_batch(params, lanes_at(inputs, start), &mut tape.batch);
        let n = LANES.min(inputs.len() - start);
        out.extend_from_slice(&evals[..n]);
    }
    out
}

/// Output and exact input derivative of the network at `x_hat`.
pub fn eval_with_input_derivative(params: &MlpParams, x_hat: f64) -> EvalResult {
    let mut tape = Tape::new();
    forward(params, x_hat, &mut tape)
}

/// As [`eval_with_input_derivative`] but reusing a caller-owned tape.
pub fn eval_with_tape(params: &MlpParams, x_hat: f64, tape: &mut Tape) -> EvalResult {
    forward(params, x_hat, tape)
}

/// Accumulates a loss over `inputs` and its exact parameter gradient.
///
/// For each input index `i`, `term(i, eval)` returns that point's loss
/// contribution and its partials with respect to `eval.value` and
/// `eval.dvalue_dx`.
pub fn loss_gradient<F>(params: &MlpParams, inputs: &[f64], term: F) -> Result<(f64, ParamGradient)>
where
    F: FnMut(usize, EvalResult) -> PointLoss,
{
    let mut grad = params.zero_gradient();
    let mut tape = Tape::new();
    let loss = loss_gradient_into(params, inputs, term, &mut tape, &mut grad)?;
    Ok((loss, grad))
}

/// Allocation-free variant of [`loss_gradient`]; `grad` is overwritten.
pub fn loss_gradient_into<F>(
    params: &MlpParams,
    inputs: &[f64],
    mut term: F,
    tape: &mut Tape,
    grad: &mut ParamGradient,
) -> Result<f64>
where
    F: FnMut(usize, EvalResult) -> PointLoss,
{
    debug_assert_eq!(grad.sizes, params.sizes);
    grad.fill_zero();
    let mut loss = 0.0;
    tape.batch.load(params);
    for start in (0..inputs.len()).step_by(LANES) {
        let evals = forward_batch(params, lanes_at(inputs, start), &mut tape.batch);
        let mut seeds = [PointLoss::default(); LANES];
        for lane in 0..LANES.min(inputs.len() - start) {
            let i = start + lane;
            let point = term(i, evals[lane]);
            if !(point.loss.is_finite() && point.d_value.is_finite() && point.d_dvalue.is_finite()) {
                return Err(FbpinnError::numerical("non-finite loss term", inputs[i]));
            }
            loss += point.loss;
            seeds[lane] = point;
        }
        if seeds.iter().any(|p| p.d_value != 0.0 || p.d_dvalue != 0.0) {
            backward_batch(params, seeds, &mut tape.batch, grad);
        }
    }
    if !grad.is_finite() {
        let x = inputs.first().copied().unwrap_or(f64::NAN);
        return Err(FbpinnError::numerical("non-finite gradient", x));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_unit() -> MlpParams {
        MlpParams::from_layers(vec![(vec![1.0], vec![0.0]), (vec![1.0], vec![0.0])]).unwrap()
    }

    #[test]
    fn batched_gradient_matches_point_by_point_sweeps() {
        let params = init_params(&[1, 7, 5, 1], 3).unwrap();
        let inputs: Vec<f64> = (0..11).map(|i| -1.0 + 0.19 * i as f64).collect();
        let term = |i: usize, e: EvalResult| PointLoss {
            loss: e.value * e.value,
            d_value: if i == 4 { 0.0 } else { 2.0 * e.value },
            d_dvalue: 0.3 * i as f64 * e.dvalue_dx,
        };
        let (loss, grad) = loss_gradient(&params, &inputs, term).unwrap();

        let mut tape = Tape::new();
        let mut expect = params.zero_gradient();
        let mut expect_loss = 0.0;
        for (i, &x) in inputs.iter().enumerate() {
            let e = forward(&params, x, &mut tape);
            let p = term(i, e);
            expect_loss += p.loss;
            if p.d_value != 0.0 || p.d_dvalue != 0.0 {
                backward(&params, p, &mut tape, &mut expect);
            }
        }
        assert_eq!(loss, expect_loss);
        assert_eq!(grad.as_slice(), expect.as_slice());

        let many = eval_many(&params, &inputs, &mut tape);
        for (e, &x) in many.iter().zip(&inputs) {
            assert_eq!(*e, eval_with_input_derivative(&params, x));
        }
    }

    #[test]
    fn shapes_follow_layer_sizes() {
        let p = init_params(&[1, 16, 16, 1], 0).unwrap();
        assert_eq!(p.num_layers(), 3);
        let dims: Vec<(usize, usize)> = (0..3)
            .map(|l| {
                let (w, b) = p.layer(l);
                (w.len(), b.len())
            })
            .collect();
        assert_eq!(dims, vec![(16, 16), (256, 16), (16, 1)]);
        assert!((0..3).all(|l| p.layer(l).1.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn glorot_range_respected() {
        let p = init_params(&[1, 16, 16, 1], 7).unwrap();
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(p.layer(1).0.iter().all(|w| w.abs() <= limit));
        let limit0 = (6.0f64 / 17.0).sqrt();
        assert!(p.layer(0).0.iter().all(|w| w.abs() <= limit0));
    }

    #[test]
    fn minimal_network() {
        let p = init_params(&[1, 1], 3).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.layer(0).1, &[0.0]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&[1, 8, 1], 42).unwrap();
        let b = init_params(&[1, 8, 1], 42).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = init_params(&[1, 8, 1], 43).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(init_params(&[], 0).is_err());
        assert!(init_params(&[1], 0).is_err());
        assert!(init_params(&[1, 0, 1], 0).is_err());
        assert!(init_params(&[2, 4, 1], 0).is_err());
    }

    #[test]
    fn tanh_agrees_with_libm() {
        for i in -4000..=4000 {
            let z = i as f64 * 0.005 + 1e-7;
            assert!((tanh(z) - z.tanh()).abs() <= 4.0 * f64::EPSILON * z.tanh().abs().max(1e-300));
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
    }

    #[test]
    fn tanh_network_at_origin() {
        let e = eval_with_input_derivative(&tanh_unit(), 0.0);
        assert_eq!(e.value, 0.0);
        assert_eq!(e.dvalue_dx, 1.0);
    }

    #[test]
    fn constant_network() {
        let p = MlpParams::from_layers(vec![(vec![0.0; 4], vec![0.3; 4]), (vec![0.0; 4], vec![2.5])])
            .unwrap();
        for x in [-3.0, 0.0, 0.7] {
            let e = eval_with_input_derivative(&p, x);
            assert_eq!(e.value, 2.5);
            assert_eq!(e.dvalue_dx, 0.0);
        }
    }

    #[test]
    fn input_derivative_matches_central_difference() {
        let p = init_params(&[1, 16, 16, 1], 11).unwrap();
        let h = 1e-6;
        let e = eval_with_input_derivative(&p, 0.3);
        let fd = (eval_with_input_derivative(&p, 0.3 + h).value
            - eval_with_input_derivative(&p, 0.3 - h).value)
            / (2.0 * h);
        assert!((e.dvalue_dx - fd).abs() <= 1e-6 * fd.abs().max(1e-3));
    }

    #[test]
    fn quadratic_loss_on_constant_network() {
        let b = 1.75;
        let p = MlpParams::from_layers(vec![(vec![0.0; 3], vec![0.0; 3]), (vec![0.0; 3], vec![b])])
            .unwrap();
        let (loss, grad) = loss_gradient(&p, &[0.4], |_, e| PointLoss {
            loss: e.value * e.value,
            d_value: 2.0 * e.value,
            d_dvalue: 0.0,
        })
        .unwrap();
        assert_eq!(loss, b * b);
        assert_eq!(grad.layer(1).1, &[2.0 * b]);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let p = init_params(&[1, 5, 5, 1], 1).unwrap();
        let (loss, grad) = loss_gradient(&p, &[0.1, -0.4, 0.9], |_, _| PointLoss::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_loss_is_reported_with_point() {
        let p = init_params(&[1, 3, 1], 1).unwrap();
        let err = loss_gradient(&p, &[0.25], |_, _| PointLoss {
            loss: f64::NAN,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, FbpinnError::Numerical { x, .. } if x == 0.25));
    }

    #[test]
    fn json_round_trip() {
        let p = init_params(&[1, 4, 3, 1], 9).unwrap();
        let back = MlpParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn json_rejects_inconsistent_layers() {
        let v = serde_json::json!([{ "n_in": 1, "n_out": 2, "weights": [1.0], "bias": [0.0, 0.0] }]);
        assert!(MlpParams::from_json(&v).is_err());
    }
}
