use super::{idx, Architecture, ParamSet};
use crate::scalar::Scalar;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
pub const ACTOR_HEAD_GAIN: f64 = 0.01;
pub const CRITIC_HEAD_GAIN: f64 = 1.0;

/// `rows x cols` matrix with orthonormal columns (rows >= cols) or rows,
/// scaled by `gain`, row-major.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix so the result is Haar distributed.
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

pub(super) fn orthogonal_init<T: Scalar>(params: &mut ParamSet<T>, arch: &Architecture, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = arch.param_shapes();
    let weights = idx::CONV_W
        .iter()
        .map(|&i| (i, HIDDEN_GAIN))
        .chain([
            (idx::FC_ACTOR_W, HIDDEN_GAIN),
            (idx::FC_CRITIC_W, HIDDEN_GAIN),
            (idx::ACTOR_HEAD_W, ACTOR_HEAD_GAIN),
            (idx::CRITIC_HEAD_W, CRITIC_HEAD_GAIN),
        ]);
    for (i, gain) in weights {
        let (rows, cols) = (shapes[i].1[0], shapes[i].1[1]);
        let values = orthogonal(rows, cols, gain, &mut rng);
        for (dst, v) in params.tensors[i].data.iter_mut().zip(values) {
            *dst = T::from_f64_lossy(v);
        }
    }
    for t in params.tensors.iter_mut().filter(|t| t.shape.len() == 1) {
        t.data.fill(T::zero());
    }
}
