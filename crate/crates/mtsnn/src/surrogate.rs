//! Approximate derivatives of the multi-step spike activation.
//!
//! The true derivative of the firing rule is a Dirac comb at the
//! threshold multiples, so the backward pass substitutes one of three
//! smooth curves: a Gaussian comb with growing peaks (`F1`), a uniform
//! Gaussian comb (`F2`, the default), or a trapezoid (`F3`). All are
//! evaluated at the pre-reset membrane potential.

use ndarray::{Array, Dimension};

use crate::{Error, Real, Result};

/// Curve selector for the approximate derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    F1,
    F2,
    F3,
}

impl SurrogateKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(SurrogateKind::F1),
            "f2" => Ok(SurrogateKind::F2),
            "f3" => Ok(SurrogateKind::F3),
            other => Err(Error::Config(format!(
                "unknown surrogate kind '{other}' (expected f1, f2 or f3)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SurrogateKind::F1 => "f1",
            SurrogateKind::F2 => "f2",
            SurrogateKind::F3 => "f3",
        }
    }
}

/// Curve choice plus its shape parameters.
///
/// `s_max` and `v_th` mirror the neuron constants; the network builder
/// checks they agree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    /// Height parameter.
    pub alpha_h: f64,
    /// Width parameter.
    pub alpha_w: f64,
    pub s_max: u32,
    pub v_th: f64,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, alpha_h: f64, alpha_w: f64, s_max: u32, v_th: f64) -> Result<Self> {
        if !(alpha_h > 0.0 && alpha_h.is_finite()) {
            return Err(Error::Config(format!("alpha_h must be positive, got {alpha_h}")));
        }
        if !(alpha_w > 0.0 && alpha_w.is_finite()) {
            return Err(Error::Config(format!("alpha_w must be positive, got {alpha_w}")));
        }
        if s_max < 1 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        if !(v_th > 0.0 && v_th.is_finite()) {
            return Err(Error::Config(format!("v_th must be positive, got {v_th}")));
        }
        Ok(SurrogateSpec { kind, alpha_h, alpha_w, s_max, v_th })
    }

    /// Paper-default spec: F2 with alpha_h = 1, alpha_w = 20.
    pub fn default_for(s_max: u32, v_th: f64) -> Self {
        SurrogateSpec { kind: SurrogateKind::F2, alpha_h: 1.0, alpha_w: 20.0, s_max, v_th }
    }
}

#[inline]
fn grad_scalar<F: Real>(v: F, spec: &SurrogateSpec) -> F {
    let alpha_h = F::from_f64(spec.alpha_h);
    let alpha_w = F::from_f64(spec.alpha_w);
    let v_th = F::from_f64(spec.v_th);
    let s_max = spec.s_max;
    match spec.kind {
        SurrogateKind::F1 => {
            // Peak i has height i*alpha_h and width alpha_w/i.
            let mut acc = F::zero();
            for i in 1..=s_max {
                let fi = F::from_f64(i as f64);
                let d = v - fi * v_th;
                acc = acc + fi * alpha_h * (-(d * d) / (alpha_w / fi)).exp();
            }
            acc
        }
        SurrogateKind::F2 => {
            let mut acc = F::zero();
            for i in 1..=s_max {
                let d = v - F::from_f64(i as f64) * v_th;
                acc = acc + alpha_h * (-(d * d) / alpha_w).exp();
            }
            acc
        }
        SurrogateKind::F3 => {
            let s = F::from_f64(s_max as f64);
            if v < F::zero() || v >= (s + F::one()) * v_th {
                F::zero()
            } else if v < v_th {
                alpha_h * v / v_th
            } else if v < s * v_th {
                alpha_h
            } else {
                alpha_h * (s + F::one() - v / v_th)
            }
        }
    }
}

/// Elementwise evaluation of the selected curve at pre-reset potentials.
pub fn surrogate_grad<F: Real, D: Dimension>(v: &Array<F, D>, spec: &SurrogateSpec) -> Array<F, D> {
    v.mapv(|x| grad_scalar(x, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;

    fn spec(kind: SurrogateKind, alpha_h: f64, alpha_w: f64, s_max: u32, v_th: f64) -> SurrogateSpec {
        SurrogateSpec::new(kind, alpha_h, alpha_w, s_max, v_th).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(SurrogateSpec::new(SurrogateKind::F2, 0.0, 20.0, 15, 10.0).is_err());
        assert!(SurrogateSpec::new(SurrogateKind::F2, 1.0, -1.0, 15, 10.0).is_err());
        assert!(SurrogateSpec::new(SurrogateKind::F2, 1.0, 20.0, 0, 10.0).is_err());
    }

    #[test]
    fn kind_parse_round_trip() {
        for k in [SurrogateKind::F1, SurrogateKind::F2, SurrogateKind::F3] {
            assert_eq!(SurrogateKind::parse(k.name()).unwrap(), k);
        }
        assert!(SurrogateKind::parse("f4").is_err());
    }

    #[test]
    fn f2_at_first_peak() {
        // 1 + e^-5 + e^-20 + ... with v_th = 10, alpha_w = 20.
        let s = spec(SurrogateKind::F2, 1.0, 20.0, 15, 10.0);
        let expected: f64 = (1..=15)
            .map(|i| (-((10.0 - i as f64 * 10.0).powi(2)) / 20.0).exp())
            .sum();
        let got = surrogate_grad(&arr1(&[10.0f64]), &s)[0];
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 1.006_737_9).abs() < 1e-7);
    }

    #[test]
    fn f3_outside_support_is_zero() {
        let s = spec(SurrogateKind::F3, 1.0, 20.0, 15, 10.0);
        assert_eq!(surrogate_grad(&arr1(&[-1.0f64]), &s)[0], 0.0);
        // Both branch readings give 0 at the upper boundary; the closed
        // upper bound maps it through the "outside" branch.
        assert_eq!(surrogate_grad(&arr1(&[160.0f64]), &s)[0], 0.0);
    }

    #[test]
    fn f3_ramp_value() {
        let s = spec(SurrogateKind::F3, 1.0, 20.0, 15, 10.0);
        assert_eq!(surrogate_grad(&arr1(&[5.0f64]), &s)[0], 0.5);
    }

    #[test]
    fn f1_second_peak_dominates() {
        let s = spec(SurrogateKind::F1, 1.0, 1.0, 3, 10.0);
        let got = surrogate_grad(&arr1(&[20.0f64]), &s)[0];
        assert!((got - 2.0).abs() < 1e-7, "got {got}");
    }

    #[test]
    fn f1_peak_heights_grow() {
        let s = spec(SurrogateKind::F1, 1.0, 1.0, 5, 10.0);
        for i in 1..=5u32 {
            let v = i as f64 * 10.0;
            let got = surrogate_grad(&arr1(&[v]), &s)[0];
            assert!(got >= i as f64, "peak {i}: {got}");
        }
    }

    #[test]
    fn f2_peak_at_least_alpha_h() {
        let s = spec(SurrogateKind::F2, 1.0, 20.0, 15, 10.0);
        for i in 1..=15u32 {
            let got = surrogate_grad(&arr1(&[i as f64 * 10.0]), &s)[0];
            assert!(got >= 1.0);
        }
    }

    #[test]
    fn f3_plateau_is_exactly_alpha_h() {
        let s = spec(SurrogateKind::F3, 1.0, 20.0, 15, 10.0);
        for v in [10.0, 42.0, 100.0, 149.999] {
            assert_eq!(surrogate_grad(&arr1(&[v]), &s)[0], 1.0);
        }
    }

    #[test]
    fn f2_single_term_symmetry() {
        // Each Gaussian term is symmetric about its own peak.
        let s = spec(SurrogateKind::F2, 1.0, 20.0, 1, 10.0);
        for d in [0.5f64, 1.0, 3.0, 7.5] {
            let lo = surrogate_grad(&arr1(&[10.0 - d]), &s)[0];
            let hi = surrogate_grad(&arr1(&[10.0 + d]), &s)[0];
            assert!((lo - hi).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn non_negative_everywhere(
            v in -100.0f64..300.0,
            kind in prop_oneof![Just(SurrogateKind::F1), Just(SurrogateKind::F2), Just(SurrogateKind::F3)],
            alpha_h in 0.1f64..5.0,
            alpha_w in 0.1f64..100.0,
            s_max in 1u32..16,
        ) {
            let s = spec(kind, alpha_h, alpha_w, s_max, 10.0);
            prop_assert!(surrogate_grad(&arr1(&[v]), &s)[0] >= 0.0);
        }
    }
}
