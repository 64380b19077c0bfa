//! Loss, error propagation, eligibility traces, Adam, and the training
//! loop.
//!
//! The backward pass follows the direct rule: per time step, the output
//! error is `(s - y) * g` with `g` the surrogate derivative at the
//! pre-reset potential; hidden errors propagate spatially through the
//! transposed weights (adjoint operators for conv/pool) gated by `g`;
//! no error flows backward through time. Temporal credit enters through
//! the per-weight membrane-derivative recurrence
//! `e[t] = (decay * e[t-1] + s_in[t]) / (1 + g[t] * v_th)`, and the
//! weight gradient accumulates `delta[t] * e[t]` over steps.
//!
//! The vectorized path folds that recurrence into per-step coefficients
//! `A[r] = d[r] * (delta[r] + decay * A[r+1])` with
//! `d[t] = 1 / (1 + g[t] * v_th)`, so the gradient becomes
//! `sum_r A[r] (x) s_in[r]` — one outer-product (or conv weight-grad)
//! contraction per step, with nothing weight-shaped materialized per
//! sample. That is the same sum reassociated, which is what the scalar
//! oracle checks.

use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, Dimension};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::LayerSpec;
use crate::data::{assemble_batch, Normalization, Split};
use crate::layers::{avgpool_backward, col2im, conv_out_hw, im2col};
use crate::network::{decode_argmax, ForwardTrace, Network};
use crate::neuron::NeuronConfig;
use crate::surrogate::{surrogate_grad, SurrogateSpec};
use crate::{Error, Real, Result};

/// Rows per parallel work unit inside a mini-batch. Fixed so gradient
/// reduction order (and therefore every metric) is machine-independent.
const CHUNK_ROWS: usize = 16;

/// Desired firing pattern for the true class at every output step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetEncoding {
    /// Spike count asked of the true class per step.
    pub amplitude: f64,
    /// Value asked of every other class.
    pub off_value: f64,
}

impl TargetEncoding {
    pub fn new(amplitude: f64, s_max: u32) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude <= s_max as f64) {
            return Err(Error::Config(format!(
                "target amplitude must lie in (0, s_max = {s_max}], got {amplitude}"
            )));
        }
        Ok(TargetEncoding { amplitude, off_value: 0.0 })
    }
}

/// One-hot-by-amplitude target rows for a batch of labels.
pub fn build_targets<F: Real>(
    labels: &[usize],
    classes: usize,
    enc: &TargetEncoding,
) -> Array2<F> {
    let on = F::from_f64(enc.amplitude);
    let off = F::from_f64(enc.off_value);
    let mut y = Array2::from_elem((labels.len(), classes), off);
    for (row, &label) in labels.iter().enumerate() {
        y[(row, label)] = on;
    }
    y
}

/// Per-step loss `L = 1/2 sum_i (y_i - s_i)^2` for one sample.
pub fn loss_mse_step<F: Real>(s_out: &Array1<F>, y: &Array1<F>) -> Result<F> {
    if s_out.len() != y.len() {
        return Err(Error::Shape(format!(
            "loss_mse_step: {} outputs vs {} targets",
            s_out.len(),
            y.len()
        )));
    }
    let half = F::from_f64(0.5);
    Ok(half
        * s_out
            .iter()
            .zip(y)
            .map(|(&s, &yi)| (yi - s) * (yi - s))
            .sum::<F>())
}

/// Output-layer error `delta = (s - y) * grad_s`.
pub fn output_delta<F: Real, D: Dimension>(
    s_out: &ndarray::Array<F, D>,
    y: &ndarray::Array<F, D>,
    grad_s: &ndarray::Array<F, D>,
) -> Result<ndarray::Array<F, D>> {
    if s_out.shape() != y.shape() || s_out.shape() != grad_s.shape() {
        return Err(Error::Shape("output_delta operands disagree".into()));
    }
    Ok((s_out - y) * grad_s)
}

/// Hidden-layer error for a dense successor:
/// `delta = grad_s * W_next^T delta_next`.
pub fn hidden_delta<F: Real>(
    delta_next: &Array1<F>,
    w_next: &ArrayView2<F>,
    grad_s: &Array1<F>,
) -> Result<Array1<F>> {
    if w_next.nrows() != delta_next.len() || w_next.ncols() != grad_s.len() {
        return Err(Error::Shape(format!(
            "hidden_delta: weights {}x{}, delta {}, grad {}",
            w_next.nrows(),
            w_next.ncols(),
            delta_next.len(),
            grad_s.len()
        )));
    }
    Ok(w_next.t().dot(delta_next) * grad_s)
}

/// Materialized per-weight membrane derivative of a dense layer.
pub type EligibilityTrace<F> = Array2<F>;

/// Advances the recurrence
/// `e_ij[t] = (decay * e_ij[t-1] + s_j[t]) / (1 + grad_s_i * v_th)`;
/// the first step drops the `e_prev` term. The denominator couples only
/// through the postsynaptic index (row-wise scaling).
pub fn eligibility_update<F: Real>(
    e_prev: &EligibilityTrace<F>,
    s_in: &Array1<F>,
    grad_s: &Array1<F>,
    cfg: &NeuronConfig,
    is_first_step: bool,
) -> Result<EligibilityTrace<F>> {
    let (rows, cols) = e_prev.dim();
    if cols != s_in.len() || rows != grad_s.len() {
        return Err(Error::Shape(format!(
            "eligibility_update: trace {rows}x{cols}, s_in {}, grad_s {}",
            s_in.len(),
            grad_s.len()
        )));
    }
    let decay = F::from_f64(cfg.decay());
    let v_th = F::from_f64(cfg.v_th);
    let mut e = Array2::zeros((rows, cols));
    for i in 0..rows {
        let denom = F::one() + grad_s[i] * v_th;
        for j in 0..cols {
            let numer = if is_first_step {
                s_in[j]
            } else {
                decay * e_prev[(i, j)] + s_in[j]
            };
            e[(i, j)] = numer / denom;
        }
    }
    Ok(e)
}

/// Per-step weight gradient `grad_ij = delta_i * e_ij`.
pub fn weight_grad_step<F: Real>(
    delta: &Array1<F>,
    e: &EligibilityTrace<F>,
) -> Result<Array2<F>> {
    if delta.len() != e.nrows() {
        return Err(Error::Shape(format!(
            "weight_grad_step: delta {} vs trace rows {}",
            delta.len(),
            e.nrows()
        )));
    }
    let mut grad = e.clone();
    for (i, mut row) in grad.axis_iter_mut(Axis(0)).enumerate() {
        let d = delta[i];
        row.mapv_inplace(|v| v * d);
    }
    Ok(grad)
}

/// Full backward pass over a recorded trace.
///
/// Returns one gradient tensor per parametric layer, shaped like its
/// weights, summed over every time step and every sample row in the
/// trace. Callers divide by the batch size.
pub fn backward_pass<F: Real>(
    trace: &ForwardTrace<F>,
    targets: &Array2<F>,
    net: &Network<F>,
    surrogate: &SurrogateSpec,
) -> Result<Vec<ArrayD<F>>> {
    let t_steps = trace.t_steps;
    let decay = F::from_f64(net.neuron.decay());
    let v_th = F::from_f64(net.neuron.v_th);

    // Spiking layers in network order.
    let sp_idx: Vec<usize> = trace
        .layers
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_some())
        .map(|(i, _)| i)
        .collect();
    let n_sp = sp_idx.len();
    let out_trace = trace.layers[sp_idx[n_sp - 1]].as_ref().unwrap();
    if targets.shape() != out_trace.s[0].shape() {
        return Err(Error::Shape(format!(
            "targets {:?} vs output {:?}",
            targets.shape(),
            out_trace.s[0].shape()
        )));
    }

    // Surrogate derivative g and recurrence factor d = 1/(1 + g v_th),
    // per spiking layer and step.
    let mut g: Vec<Vec<Array2<F>>> = Vec::with_capacity(n_sp);
    let mut d: Vec<Vec<Array2<F>>> = Vec::with_capacity(n_sp);
    for &li in &sp_idx {
        let tr = trace.layers[li].as_ref().unwrap();
        let gs: Vec<Array2<F>> = (0..t_steps)
            .map(|t| surrogate_grad(&tr.v[t], surrogate))
            .collect();
        let ds = gs
            .iter()
            .map(|gt| gt.mapv(|x| F::one() / (F::one() + x * v_th)))
            .collect();
        g.push(gs);
        d.push(ds);
    }

    // Spatial error propagation, independently per step.
    let mut deltas: Vec<Vec<Array2<F>>> = vec![Vec::new(); n_sp];
    for t in 0..t_steps {
        let out = output_delta(&out_trace.s[t], targets, &g[n_sp - 1][t])?;
        deltas[n_sp - 1].push(out);
    }
    for sp in (0..n_sp.saturating_sub(1)).rev() {
        let upper_li = sp_idx[sp + 1];
        for t in 0..t_steps {
            // Adjoint of the upper spiking layer's input map.
            let mut cur = weight_adjoint(
                &net.specs[upper_li],
                net.weights[upper_li].as_ref().unwrap(),
                &deltas[sp + 1][t],
            )?;
            // Then back through any pass-through layers in between.
            for li in (sp_idx[sp] + 1..upper_li).rev() {
                cur = passthrough_adjoint(&net.specs[li], &cur)?;
            }
            deltas[sp].push(&cur * &g[sp][t]);
        }
    }

    // Eligibility coefficients A[r] = d[r] * (delta[r] + decay * A[r+1]),
    // then one contraction against the recorded inputs per step.
    let mut grads: Vec<ArrayD<F>> = Vec::with_capacity(n_sp);
    for (sp, &li) in sp_idx.iter().enumerate() {
        let tr = trace.layers[li].as_ref().unwrap();
        let mut coeffs: Vec<Array2<F>> = vec![Array2::zeros((0, 0)); t_steps];
        coeffs[t_steps - 1] = &d[sp][t_steps - 1] * &deltas[sp][t_steps - 1];
        for r in (0..t_steps - 1).rev() {
            coeffs[r] = &d[sp][r] * &(&deltas[sp][r] + &coeffs[r + 1].mapv(|a| a * decay));
        }
        grads.push(weight_gradient(&net.specs[li], tr, &coeffs)?);
    }
    Ok(grads)
}

/// Maps an error in a layer's output space back to its input space.
fn weight_adjoint<F: Real>(
    spec: &LayerSpec,
    w: &ArrayD<F>,
    delta: &Array2<F>,
) -> Result<Array2<F>> {
    match *spec {
        LayerSpec::Dense { fan_in, fan_out } => {
            let w_mat = w.view().into_shape((fan_out, fan_in)).expect("dense layout");
            Ok(delta.dot(&w_mat))
        }
        LayerSpec::Conv2d { in_shape, out_channels, kernel, stride, padding } => {
            let (c, h, width) = in_shape;
            let (oh, ow) = conv_out_hw((h, width), kernel, stride, padding)?;
            let w_mat = w
                .view()
                .into_shape((out_channels, c * kernel * kernel))
                .expect("kernel layout");
            let batch = delta.nrows();
            let mut out = Array2::zeros((batch, c * h * width));
            for b in 0..batch {
                let dmat = delta
                    .row(b)
                    .into_shape((out_channels, oh * ow))
                    .expect("delta row");
                let cols_grad = w_mat.t().dot(&dmat);
                let back = col2im(&cols_grad.view(), in_shape, kernel, stride, padding, (oh, ow));
                out.row_mut(b)
                    .assign(&back.view().into_shape(c * h * width).expect("back row"));
            }
            Ok(out)
        }
        _ => Err(Error::Config("layer has no weights to transpose".into())),
    }
}

/// Adjoint of a non-spiking pass-through layer.
fn passthrough_adjoint<F: Real>(spec: &LayerSpec, delta: &Array2<F>) -> Result<Array2<F>> {
    match *spec {
        LayerSpec::AvgPool2d { in_shape, window, .. } => {
            let (c, h, w) = in_shape;
            let batch = delta.nrows();
            let (oh, ow) = (h / window, w / window);
            let mut out = Array2::zeros((batch, c * h * w));
            for b in 0..batch {
                let dmat = delta.row(b).into_shape((c, oh, ow)).expect("pool delta row");
                let back = avgpool_backward(&dmat, window, (h, w));
                out.row_mut(b)
                    .assign(&back.view().into_shape(c * h * w).expect("pool back row"));
            }
            Ok(out)
        }
        LayerSpec::Flatten { .. } => Ok(delta.clone()),
        _ => Err(Error::Config("not a pass-through layer".into())),
    }
}

/// Contracts eligibility coefficients against recorded inputs:
/// dense layers as one GEMM per step, conv layers as the standard
/// kernel-gradient correlation per sample and step.
fn weight_gradient<F: Real>(
    spec: &LayerSpec,
    tr: &crate::network::LayerTrace<F>,
    coeffs: &[Array2<F>],
) -> Result<ArrayD<F>> {
    match *spec {
        LayerSpec::Dense { fan_in, fan_out } => {
            let mut grad = Array2::<F>::zeros((fan_out, fan_in));
            for (a, x) in coeffs.iter().zip(&tr.input) {
                grad = grad + a.t().dot(x);
            }
            Ok(grad.into_dyn())
        }
        LayerSpec::Conv2d { in_shape, out_channels, kernel, stride, padding } => {
            let (c, h, w) = in_shape;
            let (oh, ow) = conv_out_hw((h, w), kernel, stride, padding)?;
            let mut grad = Array2::<F>::zeros((out_channels, c * kernel * kernel));
            for (a, x) in coeffs.iter().zip(&tr.input) {
                for b in 0..a.nrows() {
                    let dmat = a.row(b).into_shape((out_channels, oh * ow)).expect("coeff row");
                    let xr = x.row(b).into_shape(in_shape).expect("input row");
                    let cols = im2col(&xr, kernel, stride, padding, (oh, ow));
                    grad = grad + dmat.dot(&cols.t());
                }
            }
            Ok(grad
                .into_shape(ndarray::IxDyn(&[out_channels, c, kernel, kernel]))
                .expect("kernel grad layout"))
        }
        _ => Err(Error::Config("non-parametric layer has no weight gradient".into())),
    }
}

/// Adam moments for every parametric layer, in network order.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<F: Real> AdamState<F> {
    pub fn for_network(net: &Network<F>) -> Self {
        let zeros: Vec<ArrayD<F>> = net
            .weights
            .iter()
            .flatten()
            .map(|w| ArrayD::zeros(w.raw_dim()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over all parametric layers.
///
/// `grads` are batch-mean gradients in spiking-layer order. Non-finite
/// gradients abort with a diagnostic naming the layer.
pub fn adam_step<F: Real>(
    net: &mut Network<F>,
    grads: &[ArrayD<F>],
    st: &mut AdamState<F>,
    lr: f64,
) -> Result<()> {
    let param_layers: Vec<usize> = net
        .specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_spiking())
        .map(|(i, _)| i)
        .collect();
    if grads.len() != param_layers.len() {
        return Err(Error::Shape(format!(
            "{} gradient tensors for {} parametric layers",
            grads.len(),
            param_layers.len()
        )));
    }
    for (k, (&li, g)) in param_layers.iter().zip(grads).enumerate() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in layer {li} ({:?})",
                net.specs[li]
            )));
        }
        let _ = k;
    }

    st.step_count += 1;
    let t = st.step_count as i32;
    let beta1 = F::from_f64(st.beta1);
    let beta2 = F::from_f64(st.beta2);
    let one = F::one();
    // Efficient form: fold both bias corrections into the step size.
    let lr_t = F::from_f64(
        lr * (1.0 - st.beta2.powi(t)).sqrt() / (1.0 - st.beta1.powi(t)),
    );
    let eps = F::from_f64(st.epsilon);

    for (k, (&li, g)) in param_layers.iter().zip(grads).enumerate() {
        let m = &mut st.m[k];
        let v = &mut st.v[k];
        ndarray::Zip::from(m).and(v).and(g).for_each(|m, v, &g| {
            *m = beta1 * *m + (one - beta1) * g;
            *v = beta2 * *v + (one - beta2) * g * g;
        });
        let w = net.weights[li].as_mut().unwrap();
        ndarray::Zip::from(w).and(&st.m[k]).and(&st.v[k]).for_each(|w, &m, &v| {
            *w = *w - lr_t * m / (v.sqrt() + eps);
        });
    }
    Ok(())
}

/// Optimizer, schedule, and encoding knobs of one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub target_amplitude: f64,
    pub time_steps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub train_loss: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[(true, predicted)]` counts.
    pub confusion: Array2<u64>,
}

/// Owns the network, optimizer state, and the seeded RNG streams of one
/// training run.
pub struct Trainer<F: Real> {
    pub net: Network<F>,
    pub adam: AdamState<F>,
    pub cfg: TrainConfig,
    pub norm: Normalization,
    pub crop_pad: usize,
    shuffle_rng: ChaCha8Rng,
}

impl<F: Real> Trainer<F> {
    /// Builds the network described by a run config and wraps it in a
    /// fresh trainer.
    pub fn from_run_config(cfg: &crate::config::RunConfig) -> Result<Self> {
        let (c, h, w) = cfg.dataset.shape();
        let specs = crate::arch::parse_arch(
            &cfg.arch,
            crate::arch::Shape::Chw(c, h, w),
            cfg.dataset.classes(),
        )?;
        let net = Network::build(specs, cfg.neuron_config()?, cfg.surrogate_spec()?, cfg.seed)?;
        Trainer::new(net, cfg.train_config(), cfg.normalization(), cfg.crop_pad)
    }

    pub fn new(
        net: Network<F>,
        cfg: TrainConfig,
        norm: Normalization,
        crop_pad: usize,
    ) -> Result<Self> {
        TargetEncoding::new(cfg.target_amplitude, net.neuron.s_max)?;
        if cfg.batch == 0 || cfg.time_steps == 0 {
            return Err(Error::Config("batch and time_steps must be positive".into()));
        }
        let input_channels = match net.input_shape() {
            crate::arch::Shape::Chw(c, ..) => c,
            crate::arch::Shape::Flat(_) => 1,
        };
        norm.validate(input_channels)?;
        let adam = AdamState::for_network(&net);
        let shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { net, adam, cfg, norm, crop_pad, shuffle_rng })
    }

    /// One pass over the training split: mini-batch forward/backward,
    /// one Adam update per batch, streaming loss and accuracy.
    pub fn train_epoch(&mut self, data: &Split, epoch: usize) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let enc = TargetEncoding::new(self.cfg.target_amplitude, self.net.neuron.s_max)?;
        let classes = self.net.output_classes();
        let n = data.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut crop_rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );

        let mut total_loss = 0.0;
        let mut total_correct = 0usize;
        for (batch_i, batch_idx) in order.chunks(self.cfg.batch).enumerate() {
            let (input, labels) = assemble_batch::<F, _>(
                data,
                batch_idx,
                &self.norm,
                Some((self.crop_pad, &mut crop_rng)),
            );
            let (grads, loss, correct) = self
                .batch_pass(&input, &labels, classes, &enc)
                .map_err(|e| with_batch_context(e, batch_i))?;
            adam_step(&mut self.net, &grads, &mut self.adam, self.cfg.lr)?;
            total_loss += loss;
            total_correct += correct;
        }
        Ok(EpochMetrics {
            train_loss: total_loss / n as f64,
            train_acc: total_correct as f64 / n as f64,
        })
    }

    /// Forward + backward over one mini-batch in fixed-size row chunks,
    /// reduced in chunk order. Returns batch-mean gradients.
    fn batch_pass(
        &self,
        input: &Array2<F>,
        labels: &[usize],
        classes: usize,
        enc: &TargetEncoding,
    ) -> Result<(Vec<ArrayD<F>>, f64, usize)> {
        let batch_len = input.nrows();
        let chunks: Vec<(Array2<F>, &[usize])> = (0..batch_len)
            .step_by(CHUNK_ROWS)
            .map(|start| {
                let end = (start + CHUNK_ROWS).min(batch_len);
                (
                    input.slice(ndarray::s![start..end, ..]).to_owned(),
                    &labels[start..end],
                )
            })
            .collect();

        let results: Result<Vec<(Vec<ArrayD<F>>, f64, usize)>> = chunks
            .par_iter()
            .map(|(x, chunk_labels)| {
                let targets = build_targets::<F>(chunk_labels, classes, enc);
                let trace = self.net.forward(x, self.cfg.time_steps)?;
                let loss = trace_loss(&trace, &targets);
                let decoded = trace.decode();
                let correct = decoded
                    .iter()
                    .zip(chunk_labels.iter())
                    .filter(|(p, l)| p == l)
                    .count();
                let grads = backward_pass(&trace, &targets, &self.net, &self.net.surrogate)?;
                Ok((grads, loss, correct))
            })
            .collect();
        let results = results?;

        let mut iter = results.into_iter();
        let (mut grads, mut loss, mut correct) = iter.next().expect("non-empty batch");
        for (g, l, c) in iter {
            for (acc, gi) in grads.iter_mut().zip(g) {
                *acc = &*acc + &gi;
            }
            loss += l;
            correct += c;
        }
        let scale = F::from_f64(1.0 / batch_len as f64);
        for g in &mut grads {
            g.mapv_inplace(|x| x * scale);
        }
        Ok((grads, loss, correct))
    }

    pub fn evaluate(&self, data: &Split) -> Result<EvalResult> {
        evaluate(&self.net, data, &self.norm, self.cfg.time_steps)
    }
}

/// Prefixes an error message with the failing batch index, keeping the
/// error class intact.
fn with_batch_context(e: Error, batch: usize) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("batch {batch}: {m}")),
        Error::Data(m) => Error::Data(format!("batch {batch}: {m}")),
        Error::Shape(m) => Error::Shape(format!("batch {batch}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("batch {batch}: {m}")),
        Error::Io(e) => Error::Io(e),
    }
}

/// Total loss of a recorded trace: `sum_t 1/2 ||y - s[t]||^2`, summed
/// over the batch rows.
pub fn trace_loss<F: Real>(trace: &ForwardTrace<F>, targets: &Array2<F>) -> f64 {
    let mut total = 0.0;
    for t in 0..trace.t_steps {
        let s = trace.output_spikes(t);
        let diff = targets - s;
        total += 0.5 * diff.iter().map(|&d| (d * d).to_f64()).sum::<f64>();
    }
    total
}

/// Augmentation-free evaluation: accuracy plus per-class confusion
/// counts, decoded by argmax over summed spike counts.
pub fn evaluate<F: Real>(
    net: &Network<F>,
    data: &Split,
    norm: &Normalization,
    t_steps: usize,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let classes = net.output_classes();
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunk = 256;
    let parts: Result<Vec<(Array2<u64>, usize)>> = indices
        .par_chunks(chunk)
        .map(|idxs| {
            let (input, labels) =
                assemble_batch::<F, ChaCha8Rng>(data, idxs, norm, None);
            let trace = net.forward(&input, t_steps)?;
            let decoded = decode_argmax(&trace.summed_output());
            let mut confusion = Array2::<u64>::zeros((classes, classes));
            let mut correct = 0;
            for (&label, &pred) in labels.iter().zip(&decoded) {
                confusion[(label, pred)] += 1;
                if label == pred {
                    correct += 1;
                }
            }
            Ok((confusion, correct))
        })
        .collect();
    let mut confusion = Array2::<u64>::zeros((classes, classes));
    let mut correct = 0;
    for (c, k) in parts? {
        confusion = confusion + c;
        correct += k;
    }
    Ok(EvalResult {
        accuracy: correct as f64 / data.len() as f64,
        correct,
        total: data.len(),
        confusion,
    })
}
