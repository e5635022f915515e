//! Multi-layer perceptron with an explicit forward tape for backpropagation.
//!
//! The network is a stack of affine layers with ReLU between them and no
//! activation on the output. Inverted dropout is applied to the input row and
//! after each hidden activation, so evaluation needs no rescaling.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::matrix::DenseMatrix;
use crate::nn::rng::Rng;

/// One affine layer: `weight` is `d_in x d_out`, `bias` has length `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

/// All parameters of an MLP, with the layer widths that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Forward-pass mode. Dropout is sampled only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Domain(format!(
            "layer_dims needs at least input and output widths, got {:?}",
            layer_dims
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::Domain(format!("zero width in layer_dims {:?}", layer_dims)));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. Entries are drawn in layer order,
    /// row-major within each weight matrix, so a fixed seed fixes the init.
    pub fn glorot(layer_dims: &[usize], rng: &mut Rng) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight =
                DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit));
            layers.push(Layer { weight, bias: vec![0.0; fan_out] });
        }
        Ok(MlpParams { layer_dims: layer_dims.to_vec(), layers })
    }

    /// All-zero parameters with the given widths.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer { weight: DenseMatrix::zeros(w[0], w[1]), bias: vec![0.0; w[1]] })
            .collect();
        Ok(MlpParams { layer_dims: layer_dims.to_vec(), layers })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total parameter count for the given widths.
    pub fn param_count(layer_dims: &[usize]) -> usize {
        layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Concatenates all parameters: per layer, weight entries row-major, then
    /// the bias. `unflatten` reverses this exactly.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::param_count(&self.layer_dims));
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn unflatten(layer_dims: &[usize], flat: &[f64]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let expect = Self::param_count(layer_dims);
        if flat.len() != expect {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, dims {:?} need {}",
                flat.len(),
                layer_dims,
                expect
            )));
        }
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        let mut at = 0;
        for w in layer_dims.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            let weight =
                DenseMatrix::from_vec(d_in, d_out, flat[at..at + d_in * d_out].to_vec())?;
            at += d_in * d_out;
            let bias = flat[at..at + d_out].to_vec();
            at += d_out;
            layers.push(Layer { weight, bias });
        }
        Ok(MlpParams { layer_dims: layer_dims.to_vec(), layers })
    }

    /// FNV-1a over the parameter bit patterns; used to detect stale tapes.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: f64| {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for layer in &self.layers {
            for &x in layer.weight.data() {
                eat(x);
            }
            for &x in &layer.bias {
                eat(x);
            }
        }
        h
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    checksum: u64,
    n_rows: usize,
    /// Input to each affine layer (post-dropout).
    inputs: Vec<DenseMatrix>,
    /// Pre-activation of each hidden layer.
    pre_acts: Vec<DenseMatrix>,
    /// Dropout multipliers (0 or 1/(1-p)); `None` in eval mode or at rate 0.
    masks: Option<TapeMasks>,
}

#[derive(Debug, Clone)]
struct TapeMasks {
    hidden: Vec<DenseMatrix>,
}

impl ForwardTape {
    /// Smallest absolute hidden pre-activation, used by gradient checking to
    /// keep finite-difference probes away from the ReLU kink.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.pre_acts
            .iter()
            .flat_map(|m| m.data().iter())
            .fold(f64::INFINITY, |acc, &z| acc.min(z.abs()))
    }
}

fn sample_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> DenseMatrix {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < keep { scale } else { 0.0 })
}

fn affine(x: &DenseMatrix, layer: &Layer) -> Result<DenseMatrix> {
    let mut z = x.matmul(&layer.weight)?;
    for i in 0..z.rows() {
        let row = z.row_mut(i);
        for (v, &b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

/// Runs the MLP on `x` (one row per node). Returns logits and the tape for
/// `mlp_backward`. In `Eval` mode, or at dropout rate 0, no randomness is
/// consumed. Dropout multiplies the input row and each hidden activation by
/// 0 or 1/(1-rate).
pub fn mlp_forward(
    params: &MlpParams,
    x: &DenseMatrix,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(DenseMatrix, ForwardTape)> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Domain(format!("dropout rate {} outside [0, 1)", dropout_rate)));
    }
    if x.cols() != params.layer_dims[0] {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.cols(),
            params.layer_dims[0]
        )));
    }
    let dropping = mode == Mode::Train && dropout_rate > 0.0;
    let n_layers = params.layers.len();

    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre_acts = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut masks = if dropping { Some(TapeMasks { hidden: Vec::new() }) } else { None };

    let mut h = if dropping {
        let mask = sample_mask(x.rows(), x.cols(), dropout_rate, rng);
        let mut dropped = x.clone();
        for (v, &m) in dropped.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        dropped
    } else {
        x.clone()
    };

    for (l, layer) in params.layers.iter().enumerate() {
        inputs.push(h.clone());
        let z = affine(&h, layer)?;
        if l + 1 == n_layers {
            z.check_finite("mlp_forward logits")?;
            let tape = ForwardTape {
                checksum: params.checksum(),
                n_rows: x.rows(),
                inputs,
                pre_acts,
                masks,
            };
            return Ok((z, tape));
        }
        let mut a = z.map(|v| if v > 0.0 { v } else { 0.0 });
        if dropping {
            let mask = sample_mask(a.rows(), a.cols(), dropout_rate, rng);
            for (v, &m) in a.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
            masks.as_mut().unwrap().hidden.push(mask);
        }
        pre_acts.push(z);
        h = a;
    }
    unreachable!("networks have at least one layer");
}

/// Deterministic forward pass without a tape; equivalent to `Mode::Eval`.
pub fn mlp_eval(params: &MlpParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != params.layer_dims[0] {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.cols(),
            params.layer_dims[0]
        )));
    }
    let n_layers = params.layers.len();
    let mut h = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&h, layer)?;
        if l + 1 == n_layers {
            z.check_finite("mlp_eval logits")?;
            return Ok(z);
        }
        h = z.map(|v| if v > 0.0 { v } else { 0.0 });
    }
    unreachable!("networks have at least one layer");
}

/// Backpropagates `grad_logits` through the taped forward pass and returns
/// parameter gradients in the same shape as `params`. The tape must come from
/// a forward pass over these exact parameter values; anything else is a
/// contract error.
pub fn mlp_backward(
    params: &MlpParams,
    tape: &ForwardTape,
    grad_logits: &DenseMatrix,
) -> Result<MlpParams> {
    if tape.checksum != params.checksum() {
        return Err(Error::Contract(
            "forward tape is stale: parameters changed since the forward pass".into(),
        ));
    }
    let n_layers = params.layers.len();
    let out_dim = params.layer_dims[n_layers];
    if grad_logits.rows() != tape.n_rows || grad_logits.cols() != out_dim {
        return Err(Error::Shape(format!(
            "grad_logits is {}x{}, expected {}x{}",
            grad_logits.rows(),
            grad_logits.cols(),
            tape.n_rows,
            out_dim
        )));
    }

    let mut grads = MlpParams::zeros(&params.layer_dims)?;
    let mut g = grad_logits.clone();
    for l in (0..n_layers).rev() {
        grads.layers[l].weight = tape.inputs[l].transa_matmul(&g)?;
        let gb = &mut grads.layers[l].bias;
        for i in 0..g.rows() {
            for (b, &v) in gb.iter_mut().zip(g.row(i)) {
                *b += v;
            }
        }
        if l == 0 {
            break;
        }
        g = g.matmul_transb(&params.layers[l].weight)?;
        let gate = &tape.pre_acts[l - 1];
        for (gv, &z) in g.data_mut().iter_mut().zip(gate.data()) {
            if z <= 0.0 {
                *gv = 0.0;
            }
        }
        if let Some(masks) = &tape.masks {
            for (gv, &m) in g.data_mut().iter_mut().zip(masks.hidden[l - 1].data()) {
                *gv *= m;
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    fn relu(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            0.0
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let params = MlpParams::zeros(&[3, 4, 2]).unwrap();
        let x = DenseMatrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let logits = mlp_eval(&params, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_reproduces_input() {
        let mut params = MlpParams::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            params.layers[0].weight.set(i, i, 1.0);
        }
        let x = DenseMatrix::from_fn(4, 3, |i, j| i as f64 * 0.3 - j as f64 * 1.7);
        let logits = mlp_eval(&params, &x).unwrap();
        assert_eq!(logits.data(), x.data());
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        // Oracle: the same arithmetic written as plain nested loops, no tape,
        // no matrix helpers.
        let dims = [3, 5, 5, 5, 2];
        let mut rng = seeded(11);
        let params = MlpParams::glorot(&dims, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());

        let mut h: Vec<Vec<f64>> = (0..4).map(|i| x.row(i).to_vec()).collect();
        for (l, layer) in params.layers.iter().enumerate() {
            let d_out = layer.bias.len();
            let mut next = vec![vec![0.0; d_out]; h.len()];
            for (row_in, row_out) in h.iter().zip(next.iter_mut()) {
                for j in 0..d_out {
                    let mut acc = layer.bias[j];
                    for (k, &v) in row_in.iter().enumerate() {
                        acc += v * layer.weight.get(k, j);
                    }
                    row_out[j] = if l + 1 < params.layers.len() { relu(acc) } else { acc };
                }
            }
            h = next;
        }

        let logits = mlp_eval(&params, &x).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                assert!(
                    (logits.get(i, j) - h[i][j]).abs() < 1e-12,
                    "logit ({i},{j}): {} vs oracle {}",
                    logits.get(i, j),
                    h[i][j]
                );
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_consumes_no_randomness() {
        let dims = [4, 8, 8, 8, 3];
        let mut rng = seeded(5);
        let params = MlpParams::glorot(&dims, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(6, 4, |i, j| (i as f64 - j as f64) * 0.5);

        let before = rng.clone();
        let (a, _) = mlp_forward(&params, &x, 0.5, Mode::Eval, &mut rng).unwrap();
        let (b, _) = mlp_forward(&params, &x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data(), mlp_eval(&params, &x).unwrap().data());

        use rand::Rng as _;
        let mut untouched = before;
        assert_eq!(rng.gen::<u64>(), untouched.gen::<u64>());
    }

    #[test]
    fn dropout_mean_matches_eval_value_within_three_standard_errors() {
        // Identity net, scalar input: each train-mode logit is 0 or x/(1-p).
        let mut params = MlpParams::zeros(&[1, 1]).unwrap();
        params.layers[0].weight.set(0, 0, 1.0);
        let x = DenseMatrix::from_vec(1, 1, vec![1.7]).unwrap();
        let p = 0.4;
        let n = 10_000;

        let mut rng = seeded(99);
        let mut sum = 0.0;
        for _ in 0..n {
            let (logits, _) = mlp_forward(&params, &x, p, Mode::Train, &mut rng).unwrap();
            let v = logits.get(0, 0);
            assert!(v == 0.0 || (v - 1.7 / 0.6).abs() < 1e-12);
            sum += v;
        }
        let mean = sum / n as f64;
        let std_err = 1.7 * (p / (1.0 - p)).sqrt() / (n as f64).sqrt();
        assert!(
            (mean - 1.7).abs() < 3.0 * std_err,
            "mean {} vs eval 1.7 (3 SE = {})",
            mean,
            3.0 * std_err
        );
    }

    #[test]
    fn flatten_unflatten_round_trips_bitwise() {
        let dims = [7, 4, 4, 3];
        let mut rng = seeded(3);
        let params = MlpParams::glorot(&dims, &mut rng).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), MlpParams::param_count(&dims));
        let back = MlpParams::unflatten(&dims, &flat).unwrap();
        assert_eq!(params, back);
        assert!(MlpParams::unflatten(&dims, &flat[1..]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let dims = [3, 4, 2];
        let mut rng = seeded(8);
        let params = MlpParams::glorot(&dims, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(5, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let (logits, tape) = mlp_forward(&params, &x, 0.0, Mode::Train, &mut rng).unwrap();
        let zero = DenseMatrix::zeros(logits.rows(), logits.cols());
        let grads = mlp_backward(&params, &tape, &zero).unwrap();
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_linear_layer_has_closed_form_gradient() {
        // For logits = X W + b: dW = X^T G, db = column sums of G.
        let mut rng = seeded(21);
        let params = MlpParams::glorot(&[3, 2], &mut rng).unwrap();
        let x = DenseMatrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.0));
        let (_, tape) = mlp_forward(&params, &x, 0.0, Mode::Train, &mut rng).unwrap();
        let g = DenseMatrix::from_fn(4, 2, |i, j| ((i + j) as f64).cos());
        let grads = mlp_backward(&params, &tape, &g).unwrap();

        for a in 0..3 {
            for b in 0..2 {
                let mut want = 0.0;
                for i in 0..4 {
                    want += x.get(i, a) * g.get(i, b);
                }
                assert!((grads.layers[0].weight.get(a, b) - want).abs() < 1e-12);
            }
        }
        for b in 0..2 {
            let mut want = 0.0;
            for i in 0..4 {
                want += g.get(i, b);
            }
            assert!((grads.layers[0].bias[b] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        // Loss = 0.5 * sum(logits^2), so grad_logits = logits.
        let dims = [4, 6, 6, 6, 3];
        let mut rng = seeded(17);
        let params = MlpParams::glorot(&dims, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());

        let loss_at = |p: &MlpParams| -> f64 {
            let logits = mlp_eval(p, &x).unwrap();
            0.5 * logits.data().iter().map(|&v| v * v).sum::<f64>()
        };

        let (logits, tape) = mlp_forward(&params, &x, 0.0, Mode::Train, &mut rng).unwrap();
        assert!(tape.min_abs_pre_activation() > 1e-3, "seed lands near a ReLU kink");
        let grads = mlp_backward(&params, &tape, &logits).unwrap();

        let flat = params.flatten();
        let gflat = grads.flatten();
        let h = 1e-5;
        let mut probe_rng = seeded(4242);
        use rand::Rng as _;
        for _ in 0..40 {
            let idx = probe_rng.gen_range(0..flat.len());
            let mut plus = flat.clone();
            plus[idx] += h;
            let mut minus = flat.clone();
            minus[idx] -= h;
            let fd = (loss_at(&MlpParams::unflatten(&dims, &plus).unwrap())
                - loss_at(&MlpParams::unflatten(&dims, &minus).unwrap()))
                / (2.0 * h);
            let analytic = gflat[idx];
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {}: fd {} vs analytic {} (rel {})", idx, fd, analytic, rel);
        }
    }

    #[test]
    fn stale_tape_is_a_contract_error() {
        let dims = [3, 4, 2];
        let mut rng = seeded(13);
        let mut params = MlpParams::glorot(&dims, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let (logits, tape) = mlp_forward(&params, &x, 0.0, Mode::Train, &mut rng).unwrap();
        params.layers[0].weight.set(0, 0, 123.0);
        let err = mlp_backward(&params, &tape, &logits).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn shape_violations_are_rejected() {
        let params = MlpParams::zeros(&[3, 2]).unwrap();
        let x = DenseMatrix::zeros(2, 4);
        assert!(matches!(mlp_eval(&params, &x), Err(Error::Shape(_))));

        let x = DenseMatrix::zeros(2, 3);
        let mut rng = seeded(1);
        let (_, tape) = mlp_forward(&params, &x, 0.0, Mode::Train, &mut rng).unwrap();
        let bad_grad = DenseMatrix::zeros(2, 5);
        assert!(matches!(mlp_backward(&params, &tape, &bad_grad), Err(Error::Shape(_))));

        assert!(matches!(
            mlp_forward(&params, &x, 1.0, Mode::Train, &mut rng),
            Err(Error::Domain(_))
        ));
    }
}
