//! Network container and the multi-timestep forward pass.
//!
//! Activations move between layers as `(batch, features)` matrices in
//! row-major order; spatial layers reinterpret each row as a CHW tensor.
//! The same static input current is injected at every simulation step
//! and the full per-step trace is recorded for the backward pass.

use ndarray::{Array2, Axis};

use crate::arch::{LayerSpec, Shape};
use crate::layers::{avgpool_forward, conv_current, init_weights, WeightTensor};
use crate::neuron::{membrane_step, MembraneState, NeuronConfig};
use crate::surrogate::SurrogateSpec;
use crate::{Error, Real, Result};

/// Per-timestep record of one spiking layer: the input it saw, the
/// pre-reset potentials, post-reset potentials, and spike counts.
#[derive(Clone, Debug)]
pub struct LayerTrace<F> {
    pub input: Vec<Array2<F>>,
    pub v: Vec<Array2<F>>,
    pub u: Vec<Array2<F>>,
    pub s: Vec<Array2<F>>,
}

impl<F> LayerTrace<F> {
    fn with_capacity(t: usize) -> Self {
        LayerTrace {
            input: Vec::with_capacity(t),
            v: Vec::with_capacity(t),
            u: Vec::with_capacity(t),
            s: Vec::with_capacity(t),
        }
    }
}

/// Full forward record over all layers and time steps.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    /// One entry per layer; `None` for non-spiking layers.
    pub layers: Vec<Option<LayerTrace<F>>>,
    pub t_steps: usize,
}

impl<F: Real> ForwardTrace<F> {
    fn output(&self) -> &LayerTrace<F> {
        self.layers
            .iter()
            .rev()
            .flatten()
            .next()
            .expect("network has at least one spiking layer")
    }

    /// Output-layer spike counts at step `t`.
    pub fn output_spikes(&self, t: usize) -> &Array2<F> {
        &self.output().s[t]
    }

    /// Per-class spike counts summed across all steps.
    pub fn summed_output(&self) -> Array2<F> {
        let out = self.output();
        let mut total = out.s[0].clone();
        for s in &out.s[1..] {
            total = total + s;
        }
        total
    }

    /// Argmax class decode over summed spike counts; ties take the
    /// lowest class index.
    pub fn decode(&self) -> Vec<usize> {
        decode_argmax(&self.summed_output())
    }
}

pub fn decode_argmax<F: Real>(summed: &Array2<F>) -> Vec<usize> {
    summed
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// A built network: layer specs plus weights for the parametric layers.
#[derive(Clone, Debug)]
pub struct Network<F> {
    pub specs: Vec<LayerSpec>,
    /// Parallel to `specs`; `None` for pool/flatten layers.
    pub weights: Vec<Option<WeightTensor<F>>>,
    pub neuron: NeuronConfig,
    pub surrogate: SurrogateSpec,
}

impl<F: Real> Network<F> {
    /// Builds a network with freshly initialized weights. Layer seeds
    /// derive deterministically from `seed`.
    pub fn build(
        specs: Vec<LayerSpec>,
        neuron: NeuronConfig,
        surrogate: SurrogateSpec,
        seed: u64,
    ) -> Result<Self> {
        let weights = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                if spec.is_spiking() {
                    init_weights(spec, &neuron, layer_seed(seed, i)).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(specs, weights, neuron, surrogate)
    }

    /// Assembles a network from existing weights (checkpoint load),
    /// validating every structural invariant.
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        weights: Vec<Option<WeightTensor<F>>>,
        neuron: NeuronConfig,
        surrogate: SurrogateSpec,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if surrogate.s_max != neuron.s_max || surrogate.v_th != neuron.v_th {
            return Err(Error::Config(format!(
                "surrogate spec (s_max {}, v_th {}) must mirror neuron config (s_max {}, v_th {})",
                surrogate.s_max, surrogate.v_th, neuron.s_max, neuron.v_th
            )));
        }
        if !matches!(specs.last(), Some(LayerSpec::Dense { .. })) {
            return Err(Error::Config("output layer must be dense".into()));
        }
        if weights.len() != specs.len() {
            return Err(Error::Config("one weight slot per layer required".into()));
        }
        for pair in specs.windows(2) {
            if pair[0].out_shape().len() != pair[1].in_shape().len() {
                return Err(Error::Config(format!(
                    "layer shapes do not chain: {} -> {}",
                    pair[0].out_shape(),
                    pair[1].in_shape()
                )));
            }
        }
        for (i, (spec, w)) in specs.iter().zip(&weights).enumerate() {
            spec.validate()?;
            match (spec.is_spiking(), w) {
                (true, Some(w)) => {
                    let expect: Vec<usize> = match *spec {
                        LayerSpec::Dense { fan_in, fan_out } => vec![fan_out, fan_in],
                        LayerSpec::Conv2d { in_shape: (c, ..), out_channels, kernel, .. } => {
                            vec![out_channels, c, kernel, kernel]
                        }
                        _ => unreachable!(),
                    };
                    if w.shape() != expect.as_slice() {
                        return Err(Error::Shape(format!(
                            "layer {i} weights {:?}, expected {:?}",
                            w.shape(),
                            expect
                        )));
                    }
                    if w.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Data(format!(
                            "layer {i} weights contain non-finite values"
                        )));
                    }
                }
                (false, None) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "layer {i}: weights present iff layer is parametric"
                    )))
                }
            }
        }
        Ok(Network { specs, weights, neuron, surrogate })
    }

    pub fn input_shape(&self) -> Shape {
        self.specs[0].in_shape()
    }

    pub fn output_classes(&self) -> usize {
        self.specs.last().unwrap().out_shape().len()
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.weights.iter().flatten().map(|w| w.len()).sum()
    }

    /// Runs `t_steps` of the simulation with the same input current
    /// injected every step, recording the full trace.
    pub fn forward(&self, input: &Array2<F>, t_steps: usize) -> Result<ForwardTrace<F>> {
        if t_steps == 0 {
            return Err(Error::Config("t_steps must be at least 1".into()));
        }
        let batch = input.nrows();
        if input.ncols() != self.input_shape().len() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_shape().len()
            )));
        }

        let mut traces: Vec<Option<LayerTrace<F>>> = self
            .specs
            .iter()
            .map(|s| s.is_spiking().then(|| LayerTrace::with_capacity(t_steps)))
            .collect();
        let mut membranes: Vec<Option<Array2<F>>> = self
            .specs
            .iter()
            .map(|s| {
                s.is_spiking()
                    .then(|| Array2::zeros((batch, s.out_shape().len())))
            })
            .collect();

        for _ in 0..t_steps {
            let mut x = input.clone();
            for (idx, spec) in self.specs.iter().enumerate() {
                match spec {
                    LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                        let w = self.weights[idx].as_ref().unwrap();
                        let current = self.layer_current(spec, w, &x)?;
                        let u_prev = membranes[idx].as_ref().unwrap();
                        let (v, MembraneState { u, s }) =
                            membrane_step(u_prev, &current, &self.neuron)?;
                        let tr = traces[idx].as_mut().unwrap();
                        tr.input.push(x);
                        tr.v.push(v);
                        tr.u.push(u.clone());
                        tr.s.push(s.clone());
                        membranes[idx] = Some(u);
                        x = s;
                    }
                    LayerSpec::AvgPool2d { in_shape, window, stride } => {
                        x = batched_pool(&x, *in_shape, *window, *stride)?;
                    }
                    LayerSpec::Flatten { .. } => {
                        // Row-major activations are already flat.
                    }
                }
            }
        }
        Ok(ForwardTrace { layers: traces, t_steps })
    }

    /// Synaptic current of one layer for a batch of inputs.
    pub(crate) fn layer_current(
        &self,
        spec: &LayerSpec,
        w: &WeightTensor<F>,
        x: &Array2<F>,
    ) -> Result<Array2<F>> {
        match *spec {
            LayerSpec::Dense { fan_in, fan_out } => {
                if x.ncols() != fan_in {
                    return Err(Error::Shape(format!(
                        "dense input {} vs fan_in {fan_in}",
                        x.ncols()
                    )));
                }
                let w_mat = w.view().into_shape((fan_out, fan_in)).expect("dense layout");
                Ok(x.dot(&w_mat.t()))
            }
            LayerSpec::Conv2d { in_shape, stride, padding, .. } => {
                let batch = x.nrows();
                let out_len = spec.out_shape().len();
                let mut current = Array2::zeros((batch, out_len));
                for b in 0..batch {
                    let row = x.row(b).into_shape(in_shape).expect("chw row");
                    let out = conv_current(w, &row, stride, padding)?;
                    current
                        .row_mut(b)
                        .assign(&out.view().into_shape(out_len).expect("conv row"));
                }
                Ok(current)
            }
            _ => Err(Error::Config("layer has no synaptic current".into())),
        }
    }
}

fn batched_pool<F: Real>(
    x: &Array2<F>,
    in_shape: (usize, usize, usize),
    window: usize,
    stride: usize,
) -> Result<Array2<F>> {
    let batch = x.nrows();
    let (c, h, w) = in_shape;
    if x.ncols() != c * h * w {
        return Err(Error::Shape(format!(
            "pool input {} vs shape {c}x{h}x{w}",
            x.ncols()
        )));
    }
    let out_len = c * (h / window) * (w / window);
    let mut out = Array2::zeros((batch, out_len));
    for b in 0..batch {
        let row = x.row(b).into_shape(in_shape).expect("chw row");
        let pooled = avgpool_forward(&row, window, stride)?;
        out.row_mut(b)
            .assign(&pooled.view().into_shape(out_len).expect("pool row"));
    }
    Ok(out)
}

fn layer_seed(seed: u64, layer_idx: usize) -> u64 {
    seed.wrapping_add((layer_idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
