//! Discrete multi-threshold LIF neuron dynamics.
//!
//! One simulation step decays the membrane by `1 - dt/tau_m`, adds the
//! input current, converts the resulting pre-reset potential into an
//! integer spike count (0 below threshold, `floor(v / v_th)` between
//! `v_th` and `s_max * v_th`, clamped to `s_max` above), and soft-resets
//! by subtracting `count * v_th`. The pre-reset potential is what the
//! surrogate derivatives are evaluated at, so callers keep it around.

use ndarray::{Array, Dimension};

use crate::{Error, Real, Result};

/// Membrane constants shared by every neuron of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    /// Membrane time constant, milliseconds.
    pub tau_m: f64,
    /// Firing threshold, millivolts.
    pub v_th: f64,
    /// Upper limit on the per-step spike count.
    pub s_max: u32,
    /// Simulation step, milliseconds.
    pub dt: f64,
}

impl NeuronConfig {
    pub fn new(tau_m: f64, v_th: f64, s_max: u32, dt: f64) -> Result<Self> {
        if !(tau_m.is_finite() && v_th.is_finite() && dt.is_finite()) {
            return Err(Error::Config("neuron constants must be finite".into()));
        }
        if dt <= 0.0 || tau_m <= dt {
            return Err(Error::Config(format!(
                "tau_m must exceed dt so the decay factor lies in (0,1); got tau_m={tau_m}, dt={dt}"
            )));
        }
        if v_th <= 0.0 {
            return Err(Error::Config(format!("v_th must be positive, got {v_th}")));
        }
        if s_max < 1 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        Ok(NeuronConfig { tau_m, v_th, s_max, dt })
    }

    /// Membrane decay factor `1 - dt/tau_m`.
    pub fn decay(&self) -> f64 {
        1.0 - self.dt / self.tau_m
    }
}

impl Default for NeuronConfig {
    /// Paper-default constants: tau_m = 10 ms, V_th = 10 mV, S_max = 15, dt = 1 ms.
    fn default() -> Self {
        NeuronConfig { tau_m: 10.0, v_th: 10.0, s_max: 15, dt: 1.0 }
    }
}

/// Post-reset membrane potentials and the spike counts that caused the reset.
///
/// Spike counts are integer-valued but held as floats: every consumer
/// (synaptic currents, eligibility numerators) uses them as reals.
#[derive(Clone, Debug)]
pub struct MembraneState<F, D: Dimension> {
    pub u: Array<F, D>,
    pub s: Array<F, D>,
}

/// Per-element firing rule: 0 below `v_th`, `floor(v/v_th)` up to the
/// clamp, `s_max` at and above `s_max * v_th`.
#[inline]
pub fn spike_count_scalar<F: Real>(v: F, v_th: F, s_max: F) -> F {
    if v < v_th {
        F::zero()
    } else if v >= s_max * v_th {
        s_max
    } else {
        (v / v_th).floor()
    }
}

/// Elementwise spike counts for an array of pre-reset potentials.
pub fn spike_count<F: Real, D: Dimension>(v_pre: &Array<F, D>, cfg: &NeuronConfig) -> Array<F, D> {
    let v_th = F::from_f64(cfg.v_th);
    let s_max = F::from_f64(cfg.s_max as f64);
    v_pre.mapv(|v| spike_count_scalar(v, v_th, s_max))
}

/// One Euler step of the multi-threshold LIF update.
///
/// Returns the pre-reset potential `v = decay * u_prev + input` along
/// with the post-reset state `(u, s)` where `s = spike_count(v)` and
/// `u = v - s * v_th`.
pub fn membrane_step<F: Real, D: Dimension>(
    u_prev: &Array<F, D>,
    input_current: &Array<F, D>,
    cfg: &NeuronConfig,
) -> Result<(Array<F, D>, MembraneState<F, D>)> {
    if u_prev.shape() != input_current.shape() {
        return Err(Error::Shape(format!(
            "membrane_step: u_prev {:?} vs input {:?}",
            u_prev.shape(),
            input_current.shape()
        )));
    }
    let decay = F::from_f64(cfg.decay());
    let v_th = F::from_f64(cfg.v_th);
    let v = u_prev.mapv(|u| u * decay) + input_current;
    let s = spike_count(&v, cfg);
    let u = &v - &(s.mapv(|c| c * v_th));
    Ok((v, MembraneState { u, s }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};
    use proptest::prelude::*;

    fn cfg(tau_m: f64, v_th: f64, s_max: u32) -> NeuronConfig {
        NeuronConfig::new(tau_m, v_th, s_max, 1.0).unwrap()
    }

    #[test]
    fn config_rejects_bad_constants() {
        assert!(NeuronConfig::new(1.0, 10.0, 15, 1.0).is_err()); // tau_m == dt
        assert!(NeuronConfig::new(10.0, 0.0, 15, 1.0).is_err());
        assert!(NeuronConfig::new(10.0, 10.0, 0, 1.0).is_err());
        assert!(NeuronConfig::new(10.0, 10.0, 15, 0.0).is_err());
    }

    #[test]
    fn spike_count_branches() {
        let c = cfg(10.0, 10.0, 15);
        let counts = spike_count(&arr1(&[5.0, 25.0, 200.0]), &c);
        assert_eq!(counts, arr1(&[0.0, 2.0, 15.0]));
    }

    #[test]
    fn spike_count_negative_is_zero() {
        let c = cfg(10.0, 10.0, 15);
        let counts = spike_count(&arr1(&[-35.0, -0.1]), &c);
        assert_eq!(counts, arr1(&[0.0, 0.0]));
    }

    #[test]
    fn spike_count_boundaries() {
        let c = cfg(10.0, 10.0, 15);
        // Exactly at threshold fires once; exactly at the clamp fires s_max.
        let counts = spike_count(&arr1(&[10.0, 150.0, 149.999]), &c);
        assert_eq!(counts, arr1(&[1.0, 15.0, 14.0]));
    }

    #[test]
    fn membrane_step_subthreshold() {
        let c = cfg(10.0, 10.0, 15);
        let (v, st) = membrane_step(&arr1(&[5.0]), &arr1(&[3.0]), &c).unwrap();
        assert_eq!(v, arr1(&[7.5]));
        assert_eq!(st.s, arr1(&[0.0]));
        assert_eq!(st.u, arr1(&[7.5]));
    }

    #[test]
    fn membrane_step_multi_spike() {
        let c = cfg(10.0, 10.0, 15);
        let (v, st) = membrane_step(&arr1(&[0.0]), &arr1(&[25.0]), &c).unwrap();
        assert_eq!(v, arr1(&[25.0]));
        assert_eq!(st.s, arr1(&[2.0]));
        assert_eq!(st.u, arr1(&[5.0]));
    }

    #[test]
    fn membrane_step_zero_fixed_point() {
        let c = cfg(10.0, 10.0, 15);
        let (v, st) = membrane_step(&arr1(&[0.0]), &arr1(&[0.0]), &c).unwrap();
        assert_eq!(v, arr1(&[0.0]));
        assert_eq!(st.s, arr1(&[0.0]));
        assert_eq!(st.u, arr1(&[0.0]));
    }

    #[test]
    fn membrane_step_shape_mismatch() {
        let c = cfg(10.0, 10.0, 15);
        let r = membrane_step(&Array1::<f64>::zeros(3), &Array1::<f64>::zeros(4), &c);
        assert!(matches!(r, Err(crate::Error::Shape(_))));
    }

    #[test]
    fn binary_lif_equivalence_on_sparse_input() {
        // With s_max = 1 the firing rule is the ordinary binary LIF one,
        // and on sparse sub-2x-threshold input both models emit the same
        // spike train.
        let binary = cfg(10.0, 10.0, 1);
        let multi = cfg(10.0, 10.0, 15);
        let inputs = [12.0, 0.0, 0.0, 11.0, 0.0];
        let mut u_b = arr1(&[0.0]);
        let mut u_m = arr1(&[0.0]);
        for i in inputs {
            let (_, sb) = membrane_step(&u_b, &arr1(&[i]), &binary).unwrap();
            let (_, sm) = membrane_step(&u_m, &arr1(&[i]), &multi).unwrap();
            assert_eq!(sb.s, sm.s);
            u_b = sb.u;
            u_m = sm.u;
        }
    }

    #[test]
    fn multi_threshold_preserves_dense_input_information() {
        // Dense input drives the membrane past 2x threshold in one step:
        // the binary model loses the extra spikes, the multi-threshold
        // model keeps them.
        let binary = cfg(10.0, 10.0, 1);
        let multi = cfg(10.0, 10.0, 15);
        let inputs = [25.0, 25.0];
        let (mut u_b, mut u_m) = (arr1(&[0.0]), arr1(&[0.0]));
        let (mut total_b, mut total_m) = (0.0, 0.0);
        for i in inputs {
            let (_, sb) = membrane_step(&u_b, &arr1(&[i]), &binary).unwrap();
            let (_, sm) = membrane_step(&u_m, &arr1(&[i]), &multi).unwrap();
            total_b += sb.s[0];
            total_m += sm.s[0];
            u_b = sb.u;
            u_m = sm.u;
        }
        assert!(total_b < total_m, "binary {total_b} vs multi {total_m}");
    }

    proptest! {
        #[test]
        fn reset_identity_and_residual_bound(
            u_prev in proptest::collection::vec(-50.0f64..50.0, 1..20),
            input in proptest::collection::vec(-200.0f64..400.0, 20),
            s_max in 1u32..20,
        ) {
            let c = cfg(10.0, 10.0, s_max);
            let n = u_prev.len();
            let u_prev = Array1::from(u_prev);
            let input = Array1::from(input[..n].to_vec());
            let (v, st) = membrane_step(&u_prev, &input, &c).unwrap();
            for i in 0..n {
                // u_post = v_pre - s * v_th, exactly.
                prop_assert_eq!(st.u[i], v[i] - st.s[i] * c.v_th);
                prop_assert!(st.s[i] >= 0.0 && st.s[i] <= s_max as f64);
                prop_assert_eq!(st.s[i].fract(), 0.0);
                if v[i] >= 0.0 && v[i] < s_max as f64 * c.v_th {
                    prop_assert!(st.u[i] >= 0.0 && st.u[i] < c.v_th);
                } else if v[i] >= s_max as f64 * c.v_th {
                    prop_assert!(st.u[i] >= 0.0);
                }
                if v[i] < c.v_th {
                    prop_assert_eq!(st.s[i], 0.0);
                }
            }
        }

        #[test]
        fn spike_count_monotone_in_v(
            a in -100.0f64..300.0,
            b in -100.0f64..300.0,
            s_max in 1u32..20,
        ) {
            let c = cfg(10.0, 10.0, s_max);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let counts = spike_count(&arr1(&[lo, hi]), &c);
            prop_assert!(counts[0] <= counts[1]);
        }
    }
}
