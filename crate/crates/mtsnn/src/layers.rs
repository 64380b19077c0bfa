//! Layer kernels: weight initialization, synaptic currents for dense and
//! convolutional layers, average pooling, and the im2col/col2im pair the
//! conv paths are built on.
//!
//! Everything here works on single samples (1-D activations, or CHW
//! tensors for the spatial layers); the network container batches calls
//! and owns the simulation loop.

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView3, ShapeBuilder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::LayerSpec;
use crate::neuron::{membrane_step, MembraneState, NeuronConfig};
use crate::{Error, Real, Result};

/// Weight storage for a parametric layer: `fan_out x fan_in` for dense,
/// `out_ch x in_ch x k x k` for conv. No bias terms anywhere.
pub type WeightTensor<F> = ArrayD<F>;

/// Samples initial weights from a normal distribution with mean
/// `v_th / fan_in` and standard deviation 0.5. Deterministic in the
/// seed; draws happen in f64 so f32 and f64 networks share initial
/// weights up to rounding.
pub fn init_weights<F: Real>(
    spec: &LayerSpec,
    cfg: &NeuronConfig,
    rng_seed: u64,
) -> Result<WeightTensor<F>> {
    let fan_in = spec.fan_in().ok_or_else(|| {
        Error::Config("init_weights called on a non-parametric layer".into())
    })?;
    let normal = Normal::new(cfg.v_th / fan_in as f64, 0.5)
        .map_err(|e| Error::Config(format!("weight distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape: Vec<usize> = match *spec {
        LayerSpec::Dense { fan_in, fan_out } => vec![fan_out, fan_in],
        LayerSpec::Conv2d { in_shape: (c, ..), out_channels, kernel, .. } => {
            vec![out_channels, c, kernel, kernel]
        }
        _ => unreachable!(),
    };
    Ok(ArrayD::from_shape_simple_fn(shape, || {
        F::from_f64(normal.sample(&mut rng))
    }))
}

/// One dense layer step: synaptic current `I = W s_in` followed by the
/// membrane update. Returns the pre-reset potentials and the new state.
pub fn dense_forward_step<F: Real>(
    w: &ArrayView2<F>,
    s_in: &Array1<F>,
    state: &MembraneState<F, ndarray::Ix1>,
    cfg: &NeuronConfig,
) -> Result<(Array1<F>, MembraneState<F, ndarray::Ix1>)> {
    if w.ncols() != s_in.len() || w.nrows() != state.u.len() {
        return Err(Error::Shape(format!(
            "dense_forward_step: weights {}x{}, input {}, state {}",
            w.nrows(),
            w.ncols(),
            s_in.len(),
            state.u.len()
        )));
    }
    let current = w.dot(s_in);
    membrane_step(&state.u, &current, cfg)
}

/// One conv layer step: cross-correlation of the input spike tensor with
/// the kernels, then the membrane update over the CHW output.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward_step<F: Real>(
    w: &ArrayD<F>,
    s_in: &ArrayView3<F>,
    state: &MembraneState<F, ndarray::Ix3>,
    cfg: &NeuronConfig,
    stride: usize,
    padding: usize,
) -> Result<(Array3<F>, MembraneState<F, ndarray::Ix3>)> {
    let current = conv_current(w, s_in, stride, padding)?;
    if current.shape() != state.u.shape() {
        return Err(Error::Shape(format!(
            "conv_forward_step: current {:?} vs state {:?}",
            current.shape(),
            state.u.shape()
        )));
    }
    membrane_step(&state.u, &current, cfg)
}

/// Synaptic current of a conv layer via im2col + GEMM.
pub fn conv_current<F: Real>(
    w: &ArrayD<F>,
    s_in: &ArrayView3<F>,
    stride: usize,
    padding: usize,
) -> Result<Array3<F>> {
    let (oc, ic, k) = kernel_dims(w)?;
    let (c, h, width) = s_in.dim();
    if c != ic {
        return Err(Error::Shape(format!(
            "conv input has {c} channels, kernel expects {ic}"
        )));
    }
    let (oh, ow) = conv_out_hw((h, width), k, stride, padding)?;
    let cols = im2col(s_in, k, stride, padding, (oh, ow));
    let w_mat = w.view().into_shape((oc, ic * k * k)).expect("kernel layout");
    let out = w_mat.dot(&cols); // (oc, oh*ow)
    Ok(out
        .into_shape((oc, oh, ow))
        .expect("conv output layout"))
}

/// Non-overlapping average pooling over each channel plane.
pub fn avgpool_forward<F: Real>(
    x: &ArrayView3<F>,
    window: usize,
    stride: usize,
) -> Result<Array3<F>> {
    let (c, h, w) = x.dim();
    if stride != window {
        return Err(Error::Config(
            "avgpool_forward supports stride = window only".into(),
        ));
    }
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::Config(format!(
            "pool window {window} does not divide input {h}x{w}"
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let inv = F::from_f64(1.0 / (window * window) as f64);
    let mut out = Array3::zeros((c, oh, ow));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = F::zero();
                for dy in 0..window {
                    for dx in 0..window {
                        acc = acc + x[(ci, oy * window + dy, ox * window + dx)];
                    }
                }
                out[(ci, oy, ox)] = acc * inv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of average pooling: upstream values spread uniformly over
/// each window, divided by the window area.
pub fn avgpool_backward<F: Real>(
    grad_out: &ArrayView3<F>,
    window: usize,
    in_hw: (usize, usize),
) -> Array3<F> {
    let (c, oh, ow) = grad_out.dim();
    let inv = F::from_f64(1.0 / (window * window) as f64);
    let mut out = Array3::zeros((c, in_hw.0, in_hw.1));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(ci, oy, ox)] * inv;
                for dy in 0..window {
                    for dx in 0..window {
                        out[(ci, oy * window + dy, ox * window + dx)] = g;
                    }
                }
            }
        }
    }
    out
}

/// Unrolls conv input patches into a `(c*k*k, oh*ow)` matrix.
pub fn im2col<F: Real>(
    x: &ArrayView3<F>,
    k: usize,
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    let mut cols = Array2::zeros((c * k * k, oh * ow).f());
    // Column-major output keeps each patch contiguous for the GEMM packing.
    for oy in 0..oh {
        for ox in 0..ow {
            let col = oy * ow + ox;
            for ci in 0..c {
                for ky in 0..k {
                    let y = (oy * stride + ky) as isize - padding as isize;
                    for kx in 0..k {
                        let xg = (ox * stride + kx) as isize - padding as isize;
                        let row = (ci * k + ky) * k + kx;
                        if y >= 0 && (y as usize) < h && xg >= 0 && (xg as usize) < w {
                            cols[(row, col)] = x[(ci, y as usize, xg as usize)];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a `(c*k*k, oh*ow)` column-gradient matrix back onto the
/// input tensor shape. Inverse orientation of [`im2col`].
pub fn col2im<F: Real>(
    cols: &ArrayView2<F>,
    in_shape: (usize, usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
) -> Array3<F> {
    let (c, h, w) = in_shape;
    let (oh, ow) = out_hw;
    let mut out = Array3::zeros((c, h, w));
    for oy in 0..oh {
        for ox in 0..ow {
            let col = oy * ow + ox;
            for ci in 0..c {
                for ky in 0..k {
                    let y = (oy * stride + ky) as isize - padding as isize;
                    for kx in 0..k {
                        let xg = (ox * stride + kx) as isize - padding as isize;
                        if y >= 0 && (y as usize) < h && xg >= 0 && (xg as usize) < w {
                            let row = (ci * k + ky) * k + kx;
                            out[(ci, y as usize, xg as usize)] =
                                out[(ci, y as usize, xg as usize)] + cols[(row, col)];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn kernel_dims<F: Real>(w: &ArrayD<F>) -> Result<(usize, usize, usize)> {
    let sh = w.shape();
    if sh.len() != 4 || sh[2] != sh[3] {
        return Err(Error::Shape(format!("conv kernel must be (oc, ic, k, k), got {sh:?}")));
    }
    Ok((sh[0], sh[1], sh[2]))
}

pub(crate) fn conv_out_hw(
    in_hw: (usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let (h, w) = in_hw;
    let span_h = h + 2 * padding;
    let span_w = w + 2 * padding;
    if span_h < k || span_w < k || (span_h - k) % stride != 0 || (span_w - k) % stride != 0 {
        return Err(Error::Shape(format!(
            "conv geometry does not tile: input {h}x{w}, kernel {k}, stride {stride}, padding {padding}"
        )));
    }
    Ok(((span_h - k) / stride + 1, (span_w - k) / stride + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Shape;
    use ndarray::{arr1, arr2, arr3, Array1};

    fn cfg() -> NeuronConfig {
        NeuronConfig::default()
    }

    fn zero_state1(n: usize) -> MembraneState<f64, ndarray::Ix1> {
        MembraneState { u: Array1::zeros(n), s: Array1::zeros(n) }
    }

    #[test]
    fn init_weights_matches_configured_moments() {
        let spec = LayerSpec::Dense { fan_in: 784, fan_out: 1276 };
        // ~1e6 draws; sample mean within mean +/- 0.002 (4 sigma of the
        // estimator at sd 0.5).
        let w: WeightTensor<f64> = init_weights(&spec, &cfg(), 7).unwrap();
        let n = w.len() as f64;
        assert_eq!(n as usize, 784 * 1276);
        let mean = w.sum() / n;
        let expect = 10.0 / 784.0;
        assert!((mean - expect).abs() < 0.002, "sample mean {mean} vs {expect}");
        let var = w.mapv(|x| (x - mean) * (x - mean)).sum() / n;
        assert!((var.sqrt() - 0.5).abs() < 0.01, "sample sd {}", var.sqrt());
    }

    #[test]
    fn init_weights_deterministic() {
        let spec = LayerSpec::Dense { fan_in: 30, fan_out: 20 };
        let a: WeightTensor<f64> = init_weights(&spec, &cfg(), 42).unwrap();
        let b: WeightTensor<f64> = init_weights(&spec, &cfg(), 42).unwrap();
        assert_eq!(a, b);
        let c: WeightTensor<f64> = init_weights(&spec, &cfg(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_weights_rejects_pool() {
        let spec = LayerSpec::AvgPool2d { in_shape: (1, 4, 4), window: 2, stride: 2 };
        assert!(init_weights::<f64>(&spec, &cfg(), 0).is_err());
    }

    #[test]
    fn dense_step_examples() {
        let w = arr2(&[[1.0, 2.0]]);
        let (v, st) = dense_forward_step(&w.view(), &arr1(&[3.0, 0.0]), &zero_state1(1), &cfg()).unwrap();
        assert_eq!(v, arr1(&[3.0]));
        assert_eq!(st.s, arr1(&[0.0]));

        let w = arr2(&[[5.0, 5.0]]);
        let (v, st) = dense_forward_step(&w.view(), &arr1(&[2.0, 2.0]), &zero_state1(1), &cfg()).unwrap();
        assert_eq!(v, arr1(&[20.0]));
        assert_eq!(st.s, arr1(&[2.0]));
        assert_eq!(st.u, arr1(&[0.0]));
    }

    #[test]
    fn dense_step_zero_input() {
        let w = arr2(&[[0.3, -0.4], [0.1, 0.9]]);
        let (_, st) = dense_forward_step(&w.view(), &arr1(&[0.0, 0.0]), &zero_state1(2), &cfg()).unwrap();
        assert_eq!(st.s, arr1(&[0.0, 0.0]));
        assert_eq!(st.u, arr1(&[0.0, 0.0]));
    }

    #[test]
    fn dense_step_shape_mismatch() {
        let w = arr2(&[[1.0, 2.0]]);
        assert!(dense_forward_step(&w.view(), &arr1(&[1.0]), &zero_state1(1), &cfg()).is_err());
    }

    #[test]
    fn dense_current_linearity_against_scalar_loop() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (m, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let w = Array2::from_shape_simple_fn((m, n), || rng.gen_range(-1.0..1.0));
            let x = Array1::from_shape_simple_fn(n, || rng.gen_range(0.0f64..3.0));
            let y = Array1::from_shape_simple_fn(n, || rng.gen_range(0.0f64..3.0));
            let dot = |v: &Array1<f64>| -> Array1<f64> {
                Array1::from_shape_fn(m, |i| (0..n).map(|j| w[(i, j)] * v[j]).sum())
            };
            let wx = w.dot(&x);
            for i in 0..m {
                assert!((wx[i] - dot(&x)[i]).abs() < 1e-12);
            }
            // Additive in the input, homogeneous in a weight scale.
            let sum = w.dot(&(&x + &y));
            let parts = &w.dot(&x) + &w.dot(&y);
            for i in 0..m {
                assert!((sum[i] - parts[i]).abs() < 1e-12);
            }
            let scaled = (&w * 2.5).dot(&x);
            for i in 0..m {
                assert!((scaled[i] - 2.5 * wx[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_degenerate_scalar_product() {
        let w = ArrayD::from_shape_vec(vec![1, 1, 1, 1], vec![4.0]).unwrap();
        let x = arr3(&[[[3.0]]]);
        let st = MembraneState { u: Array3::zeros((1, 1, 1)), s: Array3::zeros((1, 1, 1)) };
        let (v, out) = conv_forward_step(&w, &x.view(), &st, &cfg(), 1, 0).unwrap();
        assert_eq!(v[(0, 0, 0)], 12.0);
        assert_eq!(out.s[(0, 0, 0)], 1.0);
        assert_eq!(out.u[(0, 0, 0)], 2.0);
    }

    #[test]
    fn conv_zero_kernel_no_spikes() {
        let w = ArrayD::zeros(vec![2, 1, 3, 3]);
        let x = Array3::from_elem((1, 5, 5), 3.0);
        let st = MembraneState { u: Array3::zeros((2, 3, 3)), s: Array3::zeros((2, 3, 3)) };
        let (_, out) = conv_forward_step(&w, &x.view(), &st, &cfg(), 1, 0).unwrap();
        assert!(out.s.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn conv_ones_below_threshold() {
        let w = ArrayD::from_elem(vec![1, 1, 3, 3], 1.0);
        let x = Array3::from_elem((1, 3, 3), 1.0);
        let st = MembraneState { u: Array3::zeros((1, 1, 1)), s: Array3::zeros((1, 1, 1)) };
        let (v, out) = conv_forward_step(&w, &x.view(), &st, &cfg(), 1, 0).unwrap();
        assert_eq!(v[(0, 0, 0)], 9.0);
        assert_eq!(out.s[(0, 0, 0)], 0.0);
    }

    #[test]
    fn conv_equals_dense_with_full_kernel() {
        // A conv whose kernel covers the whole input is the dense layer
        // with the flattened kernel as its weight row.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array3::from_shape_simple_fn((2, 3, 3), || rng.gen_range(0.0f64..2.0));
        let w = ArrayD::from_shape_simple_fn(vec![4, 2, 3, 3], || rng.gen_range(-0.5..0.5));
        let conv = conv_current(&w, &x.view(), 1, 0).unwrap();
        let w_mat = w.view().into_shape((4, 18)).unwrap().to_owned();
        let x_flat = x.view().into_shape(18).unwrap().to_owned();
        let dense = w_mat.dot(&x_flat);
        for i in 0..4 {
            assert!((conv[(i, 0, 0)] - dense[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_examples() {
        let x = arr3(&[[[0.0, 2.0], [1.0, 1.0]]]);
        let p = avgpool_forward(&x.view(), 2, 2).unwrap();
        assert_eq!(p, arr3(&[[[1.0]]]));

        let c = Array3::from_elem((2, 4, 4), 3.25);
        let p = avgpool_forward(&c.view(), 2, 2).unwrap();
        assert!(p.iter().all(|&v| v == 3.25));

        let mut eye = Array3::zeros((1, 4, 4));
        for i in 0..4 {
            eye[(0, i, i)] = 4.0;
        }
        let p = avgpool_forward(&eye.view(), 2, 2).unwrap();
        assert_eq!(p, arr3(&[[[2.0, 0.0], [0.0, 2.0]]]));
    }

    #[test]
    fn pool_rejects_indivisible() {
        let x = Array3::<f64>::zeros((1, 5, 4));
        assert!(avgpool_forward(&x.view(), 2, 2).is_err());
    }

    #[test]
    fn pool_backward_redistributes_uniformly() {
        let g = arr3(&[[[8.0]]]);
        let back = avgpool_backward(&g.view(), 2, (2, 2));
        assert_eq!(back, arr3(&[[[2.0, 2.0], [2.0, 2.0]]]));
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> makes col2im the exact adjoint.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for padding in [0usize, 1] {
            let x = Array3::from_shape_simple_fn((2, 4, 4), || rng.gen_range(-1.0f64..1.0));
            let out_hw = conv_out_hw((4, 4), 3, 1, padding).unwrap();
            let cols = im2col(&x.view(), 3, 1, padding, out_hw);
            let c = Array2::from_shape_simple_fn(cols.dim(), || rng.gen_range(-1.0f64..1.0));
            let lhs: f64 = (&cols * &c).sum();
            let back = col2im(&c.view(), (2, 4, 4), 3, 1, padding, out_hw);
            let rhs: f64 = (&x * &back).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn layer_spec_shapes() {
        let spec = LayerSpec::Conv2d { in_shape: (1, 28, 28), out_channels: 15, kernel: 5, stride: 1, padding: 0 };
        assert_eq!(spec.out_shape(), Shape::Chw(15, 24, 24));
        assert_eq!(spec.fan_in(), Some(25));
    }
}
