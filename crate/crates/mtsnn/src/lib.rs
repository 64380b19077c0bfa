//! Training and inference engine for spiking neural networks built on
//! multi-threshold Leaky Integrate-and-Fire neurons.
//!
//! The engine simulates networks in discrete time, trains them with a
//! direct backpropagation rule that substitutes smooth surrogate curves
//! for the non-differentiable firing function, and reaches usable
//! accuracy within one or two simulation steps. Everything is written
//! against plain `ndarray` tensors; there is no autograd framework
//! underneath.
//!
//! Module map:
//! - [`neuron`] — the discrete multi-threshold LIF state update
//! - [`surrogate`] — the three approximate derivative curves
//! - [`arch`] / [`layers`] / [`network`] — layer kernels and the
//!   multi-timestep forward pass
//! - [`training`] — loss, error propagation, eligibility traces, Adam
//! - [`data`] — MNIST/FashionMNIST IDX and CIFAR-10 binary ingestion
//! - [`oracle`] — independent scalar reference used to validate the
//!   engine's gradients
//! - [`config`] / [`checkpoint`] / [`metrics`] — run configs,
//!   checkpoint container, metrics CSV

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod oracle;
pub mod surrogate;
pub mod training;

pub use error::{Error, Result};
pub use neuron::{MembraneState, NeuronConfig};
pub use surrogate::{SurrogateKind, SurrogateSpec};

use ndarray::NdFloat;

/// Floating-point scalar the engine is generic over.
///
/// `f32` is the training default; `f64` is used wherever results are
/// compared against the scalar oracle at tight tolerances.
pub trait Real: NdFloat + std::iter::Sum + Send + Sync {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
