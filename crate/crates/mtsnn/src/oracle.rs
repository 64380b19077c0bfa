//! Independent scalar reference implementation.
//!
//! Everything in this module is written as plain nested loops over
//! `Vec<f64>`, sharing no numerical kernels with the vectorized engine:
//! its own firing rule, its own surrogate evaluation, its own synaptic
//! sums, and the weight-derivative recurrence materialized literally as
//! one running value per (output unit, weight) pair. It exists to be
//! slow, obvious, and trustworthy; the engine must agree with it.

use crate::arch::LayerSpec;
use crate::network::Network;
use crate::neuron::NeuronConfig;
use crate::surrogate::{SurrogateKind, SurrogateSpec};
use crate::{Error, Result};

/// One layer of the scalar reference network.
#[derive(Clone, Debug)]
pub enum TinyLayer {
    /// Row-major `[out][in]` weights.
    Dense { w: Vec<Vec<f64>> },
    /// Flat `[oc][ic][ky][kx]` weights plus geometry.
    Conv {
        w: Vec<f64>,
        out_channels: usize,
        in_shape: (usize, usize, usize),
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Pool { in_shape: (usize, usize, usize), window: usize },
    Flatten,
}

/// Scalar reference network: explicit weight lists plus the same neuron
/// and surrogate constants the engine uses. Meant for tiny instances;
/// nothing here is sized for speed.
#[derive(Clone, Debug)]
pub struct TinyNet {
    pub layers: Vec<TinyLayer>,
    pub neuron: NeuronConfig,
    pub surrogate: SurrogateSpec,
}

/// Forward record indexed `[spiking_layer][t][unit]`.
#[derive(Clone, Debug, Default)]
pub struct TinyTrace {
    pub input: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<Vec<f64>>>,
    pub u: Vec<Vec<Vec<f64>>>,
    pub s: Vec<Vec<Vec<f64>>>,
}

impl TinyNet {
    /// Converts an engine network into the scalar form, losslessly.
    pub fn from_network(net: &Network<f64>) -> Self {
        let layers = net
            .specs
            .iter()
            .zip(&net.weights)
            .map(|(spec, w)| match *spec {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let w = w.as_ref().unwrap();
                    let rows = (0..fan_out)
                        .map(|i| (0..fan_in).map(|j| w[[i, j]]).collect())
                        .collect();
                    TinyLayer::Dense { w: rows }
                }
                LayerSpec::Conv2d { in_shape, out_channels, kernel, stride, padding } => {
                    TinyLayer::Conv {
                        w: w.as_ref().unwrap().iter().copied().collect(),
                        out_channels,
                        in_shape,
                        kernel,
                        stride,
                        padding,
                    }
                }
                LayerSpec::AvgPool2d { in_shape, window, .. } => {
                    TinyLayer::Pool { in_shape, window }
                }
                LayerSpec::Flatten { .. } => TinyLayer::Flatten,
            })
            .collect();
        TinyNet { layers, neuron: net.neuron, surrogate: net.surrogate }
    }

    fn out_len(&self, layer: &TinyLayer) -> usize {
        match layer {
            TinyLayer::Dense { w } => w.len(),
            TinyLayer::Conv { out_channels, in_shape, kernel, stride, padding, .. } => {
                let (oh, ow) = conv_hw(*in_shape, *kernel, *stride, *padding);
                out_channels * oh * ow
            }
            TinyLayer::Pool { in_shape: (c, h, w), window } => {
                c * (h / window) * (w / window)
            }
            TinyLayer::Flatten => 0,
        }
    }

    fn spiking_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, TinyLayer::Dense { .. } | TinyLayer::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

fn conv_hw(in_shape: (usize, usize, usize), k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let (_, h, w) = in_shape;
    ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1)
}

/// Firing rule, transcribed on its own.
fn fire(v: f64, v_th: f64, s_max: u32) -> f64 {
    let cap = s_max as f64;
    if v < v_th {
        0.0
    } else if v >= cap * v_th {
        cap
    } else {
        (v / v_th).floor()
    }
}

/// Surrogate curve, transcribed on its own.
pub fn oracle_surrogate(v: f64, spec: &SurrogateSpec) -> f64 {
    let (ah, aw, vth) = (spec.alpha_h, spec.alpha_w, spec.v_th);
    match spec.kind {
        SurrogateKind::F1 => {
            let mut sum = 0.0;
            for i in 1..=spec.s_max {
                let fi = i as f64;
                let d = v - fi * vth;
                sum += fi * ah * (-(d * d) / (aw / fi)).exp();
            }
            sum
        }
        SurrogateKind::F2 => {
            let mut sum = 0.0;
            for i in 1..=spec.s_max {
                let d = v - i as f64 * vth;
                sum += ah * (-(d * d) / aw).exp();
            }
            sum
        }
        SurrogateKind::F3 => {
            let cap = spec.s_max as f64;
            if v < 0.0 || v >= (cap + 1.0) * vth {
                0.0
            } else if v < vth {
                ah * v / vth
            } else if v < cap * vth {
                ah
            } else {
                ah * (cap + 1.0 - v / vth)
            }
        }
    }
}

/// Synaptic current of one spiking layer for one input vector.
fn layer_current(layer: &TinyLayer, x: &[f64]) -> Vec<f64> {
    match layer {
        TinyLayer::Dense { w } => w
            .iter()
            .map(|row| row.iter().zip(x).map(|(wij, xj)| wij * xj).sum())
            .collect(),
        TinyLayer::Conv { w, out_channels, in_shape, kernel, stride, padding } => {
            let (ic, h, width) = *in_shape;
            let k = *kernel;
            let (oh, ow) = conv_hw(*in_shape, k, *stride, *padding);
            let mut out = vec![0.0; out_channels * oh * ow];
            for oc in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..ic {
                            for ky in 0..k {
                                let y = (oy * stride + ky) as isize - *padding as isize;
                                if y < 0 || y as usize >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let xx = (ox * stride + kx) as isize - *padding as isize;
                                    if xx < 0 || xx as usize >= width {
                                        continue;
                                    }
                                    let wi = ((oc * ic + ci) * k + ky) * k + kx;
                                    let xi = (ci * h + y as usize) * width + xx as usize;
                                    acc += w[wi] * x[xi];
                                }
                            }
                        }
                        out[(oc * oh + oy) * ow + ox] = acc;
                    }
                }
            }
            out
        }
        _ => unreachable!("only spiking layers carry current"),
    }
}

/// Pass-through transforms: pool mean and flatten identity.
fn layer_transform(layer: &TinyLayer, x: &[f64]) -> Vec<f64> {
    match layer {
        TinyLayer::Pool { in_shape: (c, h, w), window } => {
            let (oh, ow) = (h / window, w / window);
            let mut out = vec![0.0; c * oh * ow];
            for ci in 0..*c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for dy in 0..*window {
                            for dx in 0..*window {
                                acc += x[(ci * h + oy * window + dy) * w + ox * window + dx];
                            }
                        }
                        out[(ci * oh + oy) * ow + ox] = acc / (window * window) as f64;
                    }
                }
            }
            out
        }
        TinyLayer::Flatten => x.to_vec(),
        _ => unreachable!(),
    }
}

/// Adjoint of a layer's input map, routing errors one layer down.
fn route_down(layer: &TinyLayer, delta: &[f64], in_len: usize) -> Vec<f64> {
    match layer {
        TinyLayer::Dense { w } => {
            let mut out = vec![0.0; in_len];
            for (i, row) in w.iter().enumerate() {
                for (j, wij) in row.iter().enumerate() {
                    out[j] += wij * delta[i];
                }
            }
            out
        }
        TinyLayer::Conv { w, out_channels, in_shape, kernel, stride, padding } => {
            let (ic, h, width) = *in_shape;
            let k = *kernel;
            let (oh, ow) = conv_hw(*in_shape, k, *stride, *padding);
            let mut out = vec![0.0; in_len];
            for oc in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let d = delta[(oc * oh + oy) * ow + ox];
                        for ci in 0..ic {
                            for ky in 0..k {
                                let y = (oy * stride + ky) as isize - *padding as isize;
                                if y < 0 || y as usize >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let xx = (ox * stride + kx) as isize - *padding as isize;
                                    if xx < 0 || xx as usize >= width {
                                        continue;
                                    }
                                    let wi = ((oc * ic + ci) * k + ky) * k + kx;
                                    let xi = (ci * h + y as usize) * width + xx as usize;
                                    out[xi] += w[wi] * d;
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        TinyLayer::Pool { in_shape: (c, h, w), window } => {
            let (oh, ow) = (h / window, w / window);
            let area = (window * window) as f64;
            let mut out = vec![0.0; in_len];
            for ci in 0..*c {
                for y in 0..*h {
                    for x in 0..*w {
                        let d = delta[(ci * oh + y / window) * ow + x / window];
                        out[(ci * h + y) * w + x] = d / area;
                    }
                }
            }
            out
        }
        TinyLayer::Flatten => delta.to_vec(),
    }
}

/// The input value weight `w_idx` multiplies when producing `unit`'s
/// current; zero when that weight does not feed that unit.
fn current_tap(layer: &TinyLayer, x: &[f64], unit: usize, w_idx: usize) -> f64 {
    match layer {
        TinyLayer::Dense { w } => {
            let fan_in = w[0].len();
            if w_idx / fan_in == unit {
                x[w_idx % fan_in]
            } else {
                0.0
            }
        }
        TinyLayer::Conv { in_shape, kernel, stride, padding, .. } => {
            let (ic, h, width) = *in_shape;
            let k = *kernel;
            let (oh, ow) = conv_hw(*in_shape, k, *stride, *padding);
            let oc_u = unit / (oh * ow);
            let oy = (unit / ow) % oh;
            let ox = unit % ow;
            if oc_u != w_idx / (ic * k * k) {
                return 0.0;
            }
            let rest = w_idx % (ic * k * k);
            let ci = rest / (k * k);
            let ky = (rest / k) % k;
            let kx = rest % k;
            let y = (oy * stride + ky) as isize - *padding as isize;
            let xx = (ox * stride + kx) as isize - *padding as isize;
            if y < 0 || y as usize >= h || xx < 0 || xx as usize >= width {
                return 0.0;
            }
            x[(ci * h + y as usize) * width + xx as usize]
        }
        _ => unreachable!(),
    }
}

fn weight_count(layer: &TinyLayer) -> usize {
    match layer {
        TinyLayer::Dense { w } => w.len() * w[0].len(),
        TinyLayer::Conv { w, .. } => w.len(),
        _ => 0,
    }
}

/// Scalar forward pass: same dynamics as the engine, recorded per
/// spiking layer and step.
pub fn oracle_forward(tiny: &TinyNet, input: &[f64], t_steps: usize) -> Result<TinyTrace> {
    if t_steps == 0 {
        return Err(Error::Config("t_steps must be at least 1".into()));
    }
    let decay = 1.0 - tiny.neuron.dt / tiny.neuron.tau_m;
    let v_th = tiny.neuron.v_th;
    let spiking = tiny.spiking_indices();

    let mut trace = TinyTrace::default();
    for _ in &spiking {
        trace.input.push(Vec::new());
        trace.v.push(Vec::new());
        trace.u.push(Vec::new());
        trace.s.push(Vec::new());
    }
    let mut membranes: Vec<Vec<f64>> = spiking
        .iter()
        .map(|&i| vec![0.0; tiny.out_len(&tiny.layers[i])])
        .collect();

    for _ in 0..t_steps {
        let mut x = input.to_vec();
        let mut sp = 0;
        for layer in &tiny.layers {
            match layer {
                TinyLayer::Dense { .. } | TinyLayer::Conv { .. } => {
                    let current = layer_current(layer, &x);
                    let n = current.len();
                    let mut v = vec![0.0; n];
                    let mut s = vec![0.0; n];
                    let mut u = vec![0.0; n];
                    for i in 0..n {
                        v[i] = decay * membranes[sp][i] + current[i];
                        s[i] = fire(v[i], v_th, tiny.neuron.s_max);
                        u[i] = v[i] - s[i] * v_th;
                    }
                    trace.input[sp].push(x);
                    trace.v[sp].push(v);
                    trace.u[sp].push(u.clone());
                    trace.s[sp].push(s.clone());
                    membranes[sp] = u;
                    x = s;
                    sp += 1;
                }
                _ => {
                    x = layer_transform(layer, &x);
                }
            }
        }
    }
    Ok(trace)
}

/// Literal transcription of the backward recurrences.
///
/// Per step: the output error is `(s - y) * g`; hidden errors route
/// spatially through the layer adjoints and are gated by `g`; the
/// per-weight membrane derivative is materialized for every
/// (unit, weight) pair and advanced as
/// `e = (decay * e_prev + tap) / (1 + g * v_th)`, with the `e_prev`
/// term absent on the first step; gradients accumulate as
/// `delta[unit] * e[unit][w]` over all steps. Temporal history enters
/// only through that recurrence; no error flows backward through time.
pub fn oracle_gradient(
    tiny: &TinyNet,
    input: &[f64],
    target: &[f64],
    t_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let trace = oracle_forward(tiny, input, t_steps)?;
    let decay = 1.0 - tiny.neuron.dt / tiny.neuron.tau_m;
    let v_th = tiny.neuron.v_th;
    let spiking = tiny.spiking_indices();
    let n_sp = spiking.len();

    let mut grads: Vec<Vec<f64>> = spiking
        .iter()
        .map(|&i| vec![0.0; weight_count(&tiny.layers[i])])
        .collect();
    // e[sp][unit][w]: materialized du/dW, zero at sample start.
    let mut elig: Vec<Vec<Vec<f64>>> = spiking
        .iter()
        .map(|&i| {
            vec![vec![0.0; weight_count(&tiny.layers[i])]; tiny.out_len(&tiny.layers[i])]
        })
        .collect();

    for t in 0..t_steps {
        let g: Vec<Vec<f64>> = (0..n_sp)
            .map(|sp| {
                trace.v[sp][t]
                    .iter()
                    .map(|&v| oracle_surrogate(v, &tiny.surrogate))
                    .collect()
            })
            .collect();

        // Output delta, then spatial routing down the stack.
        let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); n_sp];
        deltas[n_sp - 1] = trace.s[n_sp - 1][t]
            .iter()
            .zip(target)
            .zip(&g[n_sp - 1])
            .map(|((&s, &y), &gi)| (s - y) * gi)
            .collect();
        for sp in (1..n_sp).rev() {
            // Route from spiking layer `sp` down through any pass-through
            // layers to spiking layer `sp - 1`.
            let mut d = deltas[sp].clone();
            let mut li = spiking[sp];
            loop {
                let in_len = match &tiny.layers[li] {
                    TinyLayer::Dense { w } => w[0].len(),
                    TinyLayer::Conv { in_shape: (c, h, w), .. } => c * h * w,
                    TinyLayer::Pool { in_shape: (c, h, w), .. } => c * h * w,
                    TinyLayer::Flatten => d.len(),
                };
                d = route_down(&tiny.layers[li], &d, in_len);
                if li == spiking[sp - 1] + 1 {
                    break;
                }
                li -= 1;
            }
            deltas[sp - 1] = d.iter().zip(&g[sp - 1]).map(|(&di, &gi)| di * gi).collect();
        }

        // Advance the materialized recurrence and accumulate gradients.
        for sp in 0..n_sp {
            let layer = &tiny.layers[spiking[sp]];
            let x = &trace.input[sp][t];
            let n_units = elig[sp].len();
            let n_w = grads[sp].len();
            for unit in 0..n_units {
                let denom = 1.0 + g[sp][unit] * v_th;
                for wi in 0..n_w {
                    let tap = current_tap(layer, x, unit, wi);
                    let e = if t == 0 {
                        tap / denom
                    } else {
                        (decay * elig[sp][unit][wi] + tap) / denom
                    };
                    elig[sp][unit][wi] = e;
                    grads[sp][wi] += deltas[sp][unit] * e;
                }
            }
        }
    }
    Ok(grads)
}

/// Pseudo-random tiny engine network for gradient checking: dense
/// chains (every eighth case convolutional) holding at most 64
/// parameters, cycling through the three curves, several widths and
/// heights, s_max in {1, 3, 15}, and T in {1..4}. Returns the network
/// and the step count to simulate.
pub fn random_tiny_net<R: rand::Rng>(case: usize, rng: &mut R) -> (Network<f64>, usize) {
    use crate::arch::{parse_arch, Shape};
    let kinds = [SurrogateKind::F1, SurrogateKind::F2, SurrogateKind::F3];
    let kind = kinds[case % 3];
    let alpha_w = [1.0, 20.0, 200.0][case % 3];
    let alpha_h = [0.5, 1.0, 2.0][(case / 3) % 3];
    let s_max = [1u32, 3, 15][(case / 2) % 3];
    let t_steps = 1 + case % 4;
    let neuron = NeuronConfig::new(10.0, 10.0, s_max, 1.0).unwrap();
    let surrogate = SurrogateSpec::new(kind, alpha_h, alpha_w, s_max, 10.0).unwrap();

    let specs = if case % 8 == 7 {
        if case % 16 == 15 {
            parse_arch("2C2-P2-3C2-2", Shape::Chw(1, 5, 5), 2).unwrap()
        } else {
            parse_arch("2C2-2", Shape::Chw(1, 4, 4), 2).unwrap()
        }
    } else {
        loop {
            let depth = rng.gen_range(1..=3);
            let mut widths = vec![rng.gen_range(1..=6usize)];
            for _ in 0..depth {
                widths.push(rng.gen_range(1..=5usize));
            }
            let params: usize = widths.windows(2).map(|p| p[0] * p[1]).sum();
            if params <= 64 {
                let arch: Vec<String> = widths.iter().map(|w| w.to_string()).collect();
                break parse_arch(
                    &arch.join("-"),
                    Shape::Flat(widths[0]),
                    *widths.last().unwrap(),
                )
                .unwrap();
            }
        }
    };
    let net = Network::build(specs, neuron, surrogate, rng.gen()).unwrap();
    (net, t_steps)
}

/// Trapezoidal mass of a surrogate curve over `[lo, hi]` with `n` panels.
pub fn curve_mass(spec: &SurrogateSpec, lo: f64, hi: f64, n: usize) -> f64 {
    if n == 0 || hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / n as f64;
    let mut acc = 0.5 * (oracle_surrogate(lo, spec) + oracle_surrogate(hi, spec));
    for i in 1..n {
        acc += oracle_surrogate(lo + i as f64 * h, spec);
    }
    acc * h
}

/// Antiderivative of the surrogate curve; powers the relaxed forward of
/// the finite-difference smoke test.
pub fn surrogate_antiderivative(v: f64, spec: &SurrogateSpec) -> f64 {
    let (ah, aw, vth) = (spec.alpha_h, spec.alpha_w, spec.v_th);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    match spec.kind {
        SurrogateKind::F1 => {
            let mut sum = 0.0;
            for i in 1..=spec.s_max {
                let fi = i as f64;
                let root = (aw / fi).sqrt();
                sum += fi * ah * root * sqrt_pi / 2.0 * libm::erf((v - fi * vth) / root);
            }
            sum
        }
        SurrogateKind::F2 => {
            let root = aw.sqrt();
            let mut sum = 0.0;
            for i in 1..=spec.s_max {
                sum += ah * root * sqrt_pi / 2.0 * libm::erf((v - i as f64 * vth) / root);
            }
            sum
        }
        SurrogateKind::F3 => {
            let cap = spec.s_max as f64;
            if v < 0.0 {
                0.0
            } else if v < vth {
                ah * v * v / (2.0 * vth)
            } else if v < cap * vth {
                ah * vth / 2.0 + ah * (v - vth)
            } else if v < (cap + 1.0) * vth {
                let base = ah * vth / 2.0 + ah * (cap - 1.0) * vth;
                let d = v - cap * vth;
                // Integral of the down-ramp from cap*vth to v.
                base + ah * (d - d * d / (2.0 * vth))
            } else {
                ah * vth / 2.0 + ah * (cap - 1.0) * vth + ah * vth / 2.0
            }
        }
    }
}

/// Loss of the relaxed forward pass in which the firing rule is replaced
/// by the surrogate's antiderivative, making the network differentiable.
///
/// Exists solely so finite differences have something exact to probe in
/// the smoke test; not an authority on the training gradient.
pub fn relaxed_loss(tiny: &TinyNet, input: &[f64], target: &[f64], t_steps: usize) -> f64 {
    let decay = 1.0 - tiny.neuron.dt / tiny.neuron.tau_m;
    let v_th = tiny.neuron.v_th;
    let spiking = tiny.spiking_indices();
    let mut membranes: Vec<Vec<f64>> = spiking
        .iter()
        .map(|&i| vec![0.0; tiny.out_len(&tiny.layers[i])])
        .collect();
    let mut loss = 0.0;
    for _ in 0..t_steps {
        let mut x = input.to_vec();
        let mut sp = 0;
        for layer in &tiny.layers {
            match layer {
                TinyLayer::Dense { .. } | TinyLayer::Conv { .. } => {
                    let current = layer_current(layer, &x);
                    let n = current.len();
                    let mut s = vec![0.0; n];
                    for i in 0..n {
                        let v = decay * membranes[sp][i] + current[i];
                        s[i] = surrogate_antiderivative(v, &tiny.surrogate);
                        membranes[sp][i] = v - s[i] * v_th;
                    }
                    x = s;
                    sp += 1;
                }
                _ => x = layer_transform(layer, &x),
            }
        }
        loss += 0.5
            * x.iter()
                .zip(target)
                .map(|(&s, &y)| (y - s) * (y - s))
                .sum::<f64>();
    }
    loss
}
