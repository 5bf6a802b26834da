//! Convolutional actor-critic network with hand-written gradients and Adam.
//!
//! Activations are kept channels-last (`[batch * rows * cols, channels]`)
//! so that every 2x2 convolution is one GEMM over im2col patches.
//! Parameter layouts:
//!
//! * conv weight `[4 * in, out]`: row `(dy * 2 + dx) * in + c` holds the
//!   kernel tap at offset `(dy, dx)` for input channel `c`;
//! * dense weight `[in, out]`;
//! * the conv trunk is flattened as `(y * cols + x) * channels + c`.

mod adam;
mod checkpoint;
mod init;
mod network;

pub use adam::AdamConfig;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{ForwardCache, Input, Output};

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { what: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub conv_channels: usize,
    pub hidden: usize,
}

impl Architecture {
    /// Three 2x2 convolutions with 64 filters and 64-unit actor and critic
    /// layers on the 9x13 board.
    pub fn standard(in_channels: usize) -> Self {
        Architecture {
            in_channels,
            rows: crate::engine::HEIGHT,
            cols: crate::engine::WIDTH,
            conv_channels: 64,
            hidden: 64,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.rows * self.cols
    }

    /// Spatial size after `layer` (1-based) convolutions.
    pub fn conv_out(&self, layer: usize) -> (usize, usize) {
        (self.rows - layer, self.cols - layer)
    }

    pub fn flat_features(&self) -> usize {
        let (r, c) = self.conv_out(3);
        r * c * self.conv_channels
    }

    /// Names and shapes of all parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (cin, cc, h) = (self.in_channels, self.conv_channels, self.hidden);
        let flat = self.flat_features();
        vec![
            ("conv1.weight", vec![4 * cin, cc]),
            ("conv1.bias", vec![cc]),
            ("conv2.weight", vec![4 * cc, cc]),
            ("conv2.bias", vec![cc]),
            ("conv3.weight", vec![4 * cc, cc]),
            ("conv3.bias", vec![cc]),
            ("fc_actor.weight", vec![flat, h]),
            ("fc_actor.bias", vec![h]),
            ("fc_critic.weight", vec![flat, h]),
            ("fc_critic.bias", vec![h]),
            ("actor_head.weight", vec![h, self.n_actions()]),
            ("actor_head.bias", vec![self.n_actions()]),
            ("critic_head.weight", vec![h, 1]),
            ("critic_head.bias", vec![1]),
        ]
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.rows < 4 || self.cols < 4 || self.in_channels == 0 || self.conv_channels == 0 || self.hidden == 0
        {
            return Err(NnError::ShapeMismatch {
                what: "architecture".into(),
                expected: vec![4, 4],
                actual: vec![self.rows, self.cols],
            });
        }
        Ok(())
    }
}

/// Indices into [`ParamSet::tensors`].
pub mod idx {
    pub const CONV_W: [usize; 3] = [0, 2, 4];
    pub const CONV_B: [usize; 3] = [1, 3, 5];
    pub const FC_ACTOR_W: usize = 6;
    pub const FC_ACTOR_B: usize = 7;
    pub const FC_CRITIC_W: usize = 8;
    pub const FC_CRITIC_B: usize = 9;
    pub const ACTOR_HEAD_W: usize = 10;
    pub const ACTOR_HEAD_B: usize = 11;
    pub const CRITIC_HEAD_W: usize = 12;
    pub const CRITIC_HEAD_B: usize = 13;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }
}

/// One tensor per parameter, in [`Architecture::param_shapes`] order. Also
/// used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        ParamSet { tensors: arch.param_shapes().iter().map(|(_, s)| Tensor::zeros(s)).collect() }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(T::zero());
        }
    }

    /// Euclidean norm over every value.
    pub fn global_norm(&self) -> T {
        self.tensors.iter().flat_map(|t| t.data.iter()).map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.tensors.iter_mut().flat_map(|t| t.data.iter_mut()) {
            *v *= factor;
        }
    }

    /// Flat view for tests and finite differences.
    pub fn get_flat(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.data.len() {
                return t.data[i];
            }
            i -= t.data.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, value: T) {
        for t in &mut self.tensors {
            if i < t.data.len() {
                t.data[i] = value;
                return;
            }
            i -= t.data.len();
        }
        panic!("flat index out of range")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
}

/// Network weights plus Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    pub arch: Architecture,
    pub params: ParamSet<T>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> PolicyParams<T> {
    /// All-zero weights and moments.
    pub fn zeros(arch: Architecture) -> Result<Self, NnError> {
        arch.validate()?;
        Ok(PolicyParams {
            arch,
            params: ParamSet::zeros(&arch),
            adam: AdamState { m: ParamSet::zeros(&arch), v: ParamSet::zeros(&arch), step: 0 },
        })
    }

    /// Orthogonal weights (gain sqrt 2 in the trunk, 0.01 on the policy head,
    /// 1 on the value head), zero biases, reproducible from `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        let mut p = Self::zeros(arch)?;
        init::orthogonal_init(&mut p.params, &arch, seed);
        Ok(p)
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        self.arch.param_shapes().into_iter().map(|(n, _)| n).collect()
    }
}
