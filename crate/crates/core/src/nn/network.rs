use super::{idx, Architecture, NnError, ParamSet, PolicyParams, LEAKY_SLOPE};
use crate::encoder::Observation;
use crate::scalar::Scalar;

/// A batch of `channels x rows x cols` inputs, stored channels-last.
#[derive(Clone, Debug, PartialEq)]
pub struct Input<T> {
    pub batch: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    /// `[batch * rows * cols, channels]`
    pub data: Vec<T>,
}

impl<T: Scalar> Input<T> {
    /// From channel-major (`[batch, channels, rows, cols]`) values.
    pub fn from_chw(batch: usize, channels: usize, rows: usize, cols: usize, chw: &[T]) -> Self {
        assert_eq!(chw.len(), batch * channels * rows * cols, "input length");
        let plane = rows * cols;
        let mut data = vec![T::zero(); chw.len()];
        for b in 0..batch {
            let src = &chw[b * channels * plane..(b + 1) * channels * plane];
            let dst = &mut data[b * channels * plane..(b + 1) * channels * plane];
            for ch in 0..channels {
                for p in 0..plane {
                    dst[p * channels + ch] = src[ch * plane + p];
                }
            }
        }
        Input { batch, channels, rows, cols, data }
    }

    pub fn from_observations<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> Self {
        let obs: Vec<&Observation> = obs.into_iter().collect();
        let channels = obs.first().map_or(0, |o| o.channels());
        let (rows, cols) = (crate::engine::HEIGHT, crate::engine::WIDTH);
        let plane = rows * cols;
        let mut data = vec![T::zero(); obs.len() * channels * plane];
        for (b, o) in obs.iter().enumerate() {
            assert_eq!(o.channels(), channels, "mixed channel counts in batch");
            let dst = &mut data[b * channels * plane..(b + 1) * channels * plane];
            for (i, &v) in o.data().iter().enumerate() {
                if v != 0 {
                    let (ch, p) = (i / plane, i % plane);
                    dst[p * channels + ch] = T::one();
                }
            }
        }
        Input { batch: obs.len(), channels, rows, cols, data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output<T> {
    pub batch: usize,
    pub n_actions: usize,
    /// `[batch, n_actions]`
    pub logits: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> Output<T> {
    pub fn logits_row(&self, b: usize) -> &[T] {
        &self.logits[b * self.n_actions..(b + 1) * self.n_actions]
    }
}

struct ConvCache<T> {
    patches: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

/// Activations recorded by [`PolicyParams::forward_cached`].
pub struct ForwardCache<T> {
    batch: usize,
    convs: Vec<ConvCache<T>>,
    actor_pre: Vec<T>,
    actor_act: Vec<T>,
    critic_pre: Vec<T>,
    critic_act: Vec<T>,
}

fn leaky<T: Scalar>(z: &[T]) -> Vec<T> {
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    z.iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect()
}

fn leaky_backward<T: Scalar>(pre: &[T], grad: &mut [T]) {
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= T::zero() {
            *g *= slope;
        }
    }
}

/// `[rows, k] x [k, n] + bias`
fn affine<T: Scalar>(x: &[T], rows: usize, k: usize, w: &[T], bias: &[T]) -> Vec<T> {
    let n = bias.len();
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    T::gemm(rows, k, n, T::one(), x, (k, 1), w, (n, 1), T::one(), &mut out, (n, 1));
    out
}

/// Gradients of `y = x w + b` given `dy`: accumulates `dw`, `db`, and
/// optionally writes or adds `dx`.
#[allow(clippy::too_many_arguments)]
fn affine_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    k: usize,
    w: &[T],
    dy: &[T],
    n: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<(&mut [T], bool)>,
) {
    // dw += xᵀ dy
    T::gemm(k, rows, n, T::one(), x, (1, k), dy, (n, 1), T::one(), dw, (n, 1));
    for row in dy.chunks_exact(n) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    if let Some((dx, accumulate)) = dx {
        let beta = if accumulate { T::one() } else { T::zero() };
        // dx = dy wᵀ
        T::gemm(rows, n, k, T::one(), dy, (n, 1), w, (1, n), beta, dx, (k, 1));
    }
}

fn im2col<T: Scalar>(x: &[T], batch: usize, rows: usize, cols: usize, ch: usize) -> Vec<T> {
    let (ro, co) = (rows - 1, cols - 1);
    let mut out = Vec::with_capacity(batch * ro * co * 4 * ch);
    for b in 0..batch {
        for y in 0..ro {
            for xx in 0..co {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = ((b * rows + y + dy) * cols + xx + dx) * ch;
                    out.extend_from_slice(&x[src..src + ch]);
                }
            }
        }
    }
    out
}

fn col2im<T: Scalar>(dp: &[T], batch: usize, rows: usize, cols: usize, ch: usize) -> Vec<T> {
    let (ro, co) = (rows - 1, cols - 1);
    let mut dx = vec![T::zero(); batch * rows * cols * ch];
    let mut row = 0;
    for b in 0..batch {
        for y in 0..ro {
            for xx in 0..co {
                let patch = &dp[row * 4 * ch..(row + 1) * 4 * ch];
                for (tap, (dy, dxx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let dst = ((b * rows + y + dy) * cols + xx + dxx) * ch;
                    for (d, &g) in dx[dst..dst + ch].iter_mut().zip(&patch[tap * ch..(tap + 1) * ch]) {
                        *d += g;
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

impl<T: Scalar> PolicyParams<T> {
    fn check_input(&self, input: &Input<T>) -> Result<(), NnError> {
        let a = &self.arch;
        if input.channels != a.in_channels || input.rows != a.rows || input.cols != a.cols {
            return Err(NnError::ShapeMismatch {
                what: "observation batch".into(),
                expected: vec![a.in_channels, a.rows, a.cols],
                actual: vec![input.channels, input.rows, input.cols],
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Input<T>) -> Result<Output<T>, NnError> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    /// Forward pass that also keeps the activations for [`Self::backward`].
    pub fn forward_cached(&self, input: &Input<T>) -> Result<(Output<T>, ForwardCache<T>), NnError> {
        self.check_input(input)?;
        let a: &Architecture = &self.arch;
        let p = &self.params.tensors;
        let batch = input.batch;

        let mut convs = Vec::with_capacity(3);
        let (mut rows, mut cols, mut ch) = (a.rows, a.cols, a.in_channels);
        for layer in 0..3 {
            let x: &[T] = if layer == 0 { &input.data } else { &convs.last().map(|c: &ConvCache<T>| &c.act).unwrap()[..] };
            let patches = im2col(x, batch, rows, cols, ch);
            let n_out = batch * (rows - 1) * (cols - 1);
            let pre = affine(
                &patches,
                n_out,
                4 * ch,
                &p[idx::CONV_W[layer]].data,
                &p[idx::CONV_B[layer]].data,
            );
            let act = leaky(&pre);
            convs.push(ConvCache { patches, pre, act });
            rows -= 1;
            cols -= 1;
            ch = a.conv_channels;
        }

        let flat = a.flat_features();
        let trunk = &convs[2].act;
        let actor_pre = affine(trunk, batch, flat, &p[idx::FC_ACTOR_W].data, &p[idx::FC_ACTOR_B].data);
        let actor_act = leaky(&actor_pre);
        let critic_pre = affine(trunk, batch, flat, &p[idx::FC_CRITIC_W].data, &p[idx::FC_CRITIC_B].data);
        let critic_act = leaky(&critic_pre);
        let logits =
            affine(&actor_act, batch, a.hidden, &p[idx::ACTOR_HEAD_W].data, &p[idx::ACTOR_HEAD_B].data);
        let values =
            affine(&critic_act, batch, a.hidden, &p[idx::CRITIC_HEAD_W].data, &p[idx::CRITIC_HEAD_B].data);

        let out = Output { batch, n_actions: a.n_actions(), logits, values };
        let cache = ForwardCache { batch, convs, actor_pre, actor_act, critic_pre, critic_act };
        Ok((out, cache))
    }

    /// Parameter gradients for upstream gradients on the logits
    /// (`[batch, n_actions]`) and values (`[batch]`).
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_logits: &[T],
        d_values: &[T],
    ) -> Result<ParamSet<T>, NnError> {
        let a = &self.arch;
        let batch = cache.batch;
        if d_logits.len() != batch * a.n_actions() || d_values.len() != batch {
            return Err(NnError::ShapeMismatch {
                what: "upstream gradient".into(),
                expected: vec![batch * a.n_actions(), batch],
                actual: vec![d_logits.len(), d_values.len()],
            });
        }
        let p = &self.params.tensors;
        let mut grads = ParamSet::zeros(a);
        let (h, flat, na) = (a.hidden, a.flat_features(), a.n_actions());
        let g = &mut grads.tensors;

        let mut d_actor = vec![T::zero(); batch * h];
        {
            let (w, b) = two_mut(g, idx::ACTOR_HEAD_W, idx::ACTOR_HEAD_B);
            affine_backward(
                &cache.actor_act,
                batch,
                h,
                &p[idx::ACTOR_HEAD_W].data,
                d_logits,
                na,
                w,
                b,
                Some((&mut d_actor, false)),
            );
        }
        leaky_backward(&cache.actor_pre, &mut d_actor);

        let mut d_critic = vec![T::zero(); batch * h];
        {
            let (w, b) = two_mut(g, idx::CRITIC_HEAD_W, idx::CRITIC_HEAD_B);
            affine_backward(
                &cache.critic_act,
                batch,
                h,
                &p[idx::CRITIC_HEAD_W].data,
                d_values,
                1,
                w,
                b,
                Some((&mut d_critic, false)),
            );
        }
        leaky_backward(&cache.critic_pre, &mut d_critic);

        let trunk = &cache.convs[2].act;
        let mut d_trunk = vec![T::zero(); batch * flat];
        {
            let (w, b) = two_mut(g, idx::FC_ACTOR_W, idx::FC_ACTOR_B);
            affine_backward(
                trunk,
                batch,
                flat,
                &p[idx::FC_ACTOR_W].data,
                &d_actor,
                h,
                w,
                b,
                Some((&mut d_trunk, false)),
            );
        }
        {
            let (w, b) = two_mut(g, idx::FC_CRITIC_W, idx::FC_CRITIC_B);
            affine_backward(
                trunk,
                batch,
                flat,
                &p[idx::FC_CRITIC_W].data,
                &d_critic,
                h,
                w,
                b,
                Some((&mut d_trunk, true)),
            );
        }

        let mut d_act = d_trunk;
        for layer in (0..3).rev() {
            let conv = &cache.convs[layer];
            let (rows, cols) = (a.rows - layer, a.cols - layer);
            let ch = if layer == 0 { a.in_channels } else { a.conv_channels };
            let n_out = batch * (rows - 1) * (cols - 1);
            leaky_backward(&conv.pre, &mut d_act);
            let (w, b) = two_mut(g, idx::CONV_W[layer], idx::CONV_B[layer]);
            if layer == 0 {
                affine_backward(&conv.patches, n_out, 4 * ch, &p[idx::CONV_W[layer]].data, &d_act, a.conv_channels, w, b, None);
            } else {
                let mut d_patches = vec![T::zero(); n_out * 4 * ch];
                affine_backward(
                    &conv.patches,
                    n_out,
                    4 * ch,
                    &p[idx::CONV_W[layer]].data,
                    &d_act,
                    a.conv_channels,
                    w,
                    b,
                    Some((&mut d_patches, false)),
                );
                d_act = col2im(&d_patches, batch, rows, cols, ch);
            }
        }
        Ok(grads)
    }
}

fn two_mut<T>(g: &mut [super::Tensor<T>], w: usize, b: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(w < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[w].data, &mut hi[0].data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mini_arch() -> Architecture {
        Architecture { in_channels: 3, rows: 5, cols: 6, conv_channels: 4, hidden: 5 }
    }

    fn random_params(arch: Architecture, seed: u64, scale: f64) -> PolicyParams<f64> {
        let mut p = PolicyParams::<f64>::zeros(arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut p.params.tensors {
            for v in &mut t.data {
                *v = rng.gen_range(-scale..scale);
            }
        }
        p
    }

    fn random_input(arch: &Architecture, batch: usize, seed: u64) -> Input<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chw: Vec<f64> =
            (0..batch * arch.in_channels * arch.rows * arch.cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Input::from_chw(batch, arch.in_channels, arch.rows, arch.cols, &chw)
    }

    /// Direct nested-loop evaluation from channel-major input.
    fn oracle_forward(p: &PolicyParams<f64>, chw: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let a = p.arch;
        let t: &Vec<Tensor<f64>> = &p.params.tensors;
        let lrelu = |v: f64| if v > 0.0 { v } else { 0.01 * v };
        let mut logits = Vec::new();
        let mut values = Vec::new();
        for b in 0..batch {
            // x[c][y][x]
            let mut x: Vec<Vec<Vec<f64>>> = (0..a.in_channels)
                .map(|c| {
                    (0..a.rows)
                        .map(|y| {
                            (0..a.cols)
                                .map(|xx| chw[((b * a.in_channels + c) * a.rows + y) * a.cols + xx])
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let mut cin = a.in_channels;
            for layer in 0..3 {
                let (h, w) = (x[0].len(), x[0][0].len());
                let wt = &t[idx::CONV_W[layer]].data;
                let bias = &t[idx::CONV_B[layer]].data;
                let mut y = vec![vec![vec![0.0; w - 1]; h - 1]; a.conv_channels];
                for (o, yo) in y.iter_mut().enumerate() {
                    for r in 0..h - 1 {
                        for c in 0..w - 1 {
                            let mut s = bias[o];
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    for ci in 0..cin {
                                        s += x[ci][r + dy][c + dx] * wt[((dy * 2 + dx) * cin + ci) * a.conv_channels + o];
                                    }
                                }
                            }
                            yo[r][c] = lrelu(s);
                        }
                    }
                }
                x = y;
                cin = a.conv_channels;
            }
            let (h, w) = (x[0].len(), x[0][0].len());
            let mut flat = vec![0.0; a.flat_features()];
            for r in 0..h {
                for c in 0..w {
                    for ch in 0..a.conv_channels {
                        flat[(r * w + c) * a.conv_channels + ch] = x[ch][r][c];
                    }
                }
            }
            let dense = |input: &[f64], wi: usize, bi: usize, act: bool| -> Vec<f64> {
                let n = t[bi].data.len();
                (0..n)
                    .map(|j| {
                        let s = t[bi].data[j] + input.iter().enumerate().map(|(i, v)| v * t[wi].data[i * n + j]).sum::<f64>();
                        if act { lrelu(s) } else { s }
                    })
                    .collect()
            };
            let ha = dense(&flat, idx::FC_ACTOR_W, idx::FC_ACTOR_B, true);
            let hc = dense(&flat, idx::FC_CRITIC_W, idx::FC_CRITIC_B, true);
            logits.extend(dense(&ha, idx::ACTOR_HEAD_W, idx::ACTOR_HEAD_B, false));
            values.extend(dense(&hc, idx::CRITIC_HEAD_W, idx::CRITIC_HEAD_B, false));
        }
        (logits, values)
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let arch = Architecture::standard(15);
        let p = PolicyParams::<f32>::zeros(arch).unwrap();
        let chw = vec![1.0f32; 2 * 15 * 117];
        let out = p.forward(&Input::from_chw(2, 15, 9, 13, &chw)).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
        assert_eq!(out.values, vec![0.0, 0.0]);
        assert_eq!(out.logits.len(), 2 * 117);
    }

    #[test]
    fn identical_rows_for_identical_inputs() {
        let arch = Architecture::standard(16);
        let p = PolicyParams::<f32>::init(arch, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one: Vec<f32> = (0..16 * 117).map(|_| f32::from(rng.gen_bool(0.3) as u8)).collect();
        let chw: Vec<f32> = one.iter().chain(&one).chain(&one).copied().collect();
        let out = p.forward(&Input::from_chw(3, 16, 9, 13, &chw)).unwrap();
        assert_eq!(out.logits_row(0), out.logits_row(1));
        assert_eq!(out.logits_row(1), out.logits_row(2));
        assert_eq!(out.values[0], out.values[2]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let p = PolicyParams::<f32>::zeros(Architecture::standard(15)).unwrap();
        let chw = vec![0.0f32; 16 * 117];
        match p.forward(&Input::from_chw(1, 16, 9, 13, &chw)) {
            Err(NnError::ShapeMismatch { expected, actual, .. }) => {
                assert_eq!(expected, vec![15, 9, 13]);
                assert_eq!(actual, vec![16, 9, 13]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn forward_matches_nested_loop_oracle() {
        let arch = Architecture::standard(15);
        let p64 = random_params(arch, 11, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = 2;
        let chw: Vec<f64> = (0..batch * 15 * 117).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect();
        let (ol, ov) = oracle_forward(&p64, &chw, batch);
        let out = p64.forward(&Input::from_chw(batch, 15, 9, 13, &chw)).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for (x, y) in out.logits.iter().zip(&ol).chain(out.values.iter().zip(&ov)) {
            assert!(rel(*x, *y) < 1e-6, "{x} vs {y}");
        }
        // Same check in single precision.
        let p32 = PolicyParams::<f32> {
            arch,
            params: crate::nn::ParamSet {
                tensors: p64
                    .params
                    .tensors
                    .iter()
                    .map(|t| Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| v as f32).collect() })
                    .collect(),
            },
            adam: PolicyParams::<f32>::zeros(arch).unwrap().adam,
        };
        let chw32: Vec<f32> = chw.iter().map(|&v| v as f32).collect();
        let out32 = p32.forward(&Input::from_chw(batch, 15, 9, 13, &chw32)).unwrap();
        for (x, y) in out32.logits.iter().zip(&ol) {
            assert!((f64::from(*x) - y).abs() <= 1e-4 * y.abs().max(1e-2), "{x} vs {y}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let arch = mini_arch();
        let p = random_params(arch, 1, 0.5);
        let input = random_input(&arch, 3, 2);
        let (_, cache) = p.forward_cached(&input).unwrap();
        let g = p.backward(&cache, &vec![0.0; 3 * arch.n_actions()], &[0.0; 3]).unwrap();
        assert!(g.tensors.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn head_bias_gradient_of_output_sum_is_batch_size() {
        let arch = mini_arch();
        let p = random_params(arch, 4, 0.5);
        let batch = 5;
        let input = random_input(&arch, batch, 6);
        let (_, cache) = p.forward_cached(&input).unwrap();
        let g = p.backward(&cache, &vec![1.0; batch * arch.n_actions()], &vec![1.0; batch]).unwrap();
        assert!(g.tensors[idx::ACTOR_HEAD_B].data.iter().all(|&v| v == batch as f64));
        assert_eq!(g.tensors[idx::CRITIC_HEAD_B].data, vec![batch as f64]);
    }

    /// Central differences of `sum(logits * u) + sum(values * w)` for random
    /// `u`, `w`, per parameter tensor.
    #[test]
    fn gradients_match_central_differences() {
        let arch = mini_arch();
        let batch = 3;
        let mut p = random_params(arch, 21, 0.6);
        let input = random_input(&arch, batch, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u: Vec<f64> = (0..batch * arch.n_actions()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |p: &PolicyParams<f64>| {
            let out = p.forward(&input).unwrap();
            out.logits.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                + out.values.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = p.forward_cached(&input).unwrap();
        let grads = p.backward(&cache, &u, &w).unwrap();
        let h = 1e-4;
        let n = p.params.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = p.params.get_flat(i);
            p.params.set_flat(i, orig + h);
            let up = objective(&p);
            p.params.set_flat(i, orig - h);
            let down = objective(&p);
            p.params.set_flat(i, orig);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get_flat(i);
            let err = (numeric - analytic).abs();
            if err > 1e-6 {
                let rel = err / numeric.abs().max(analytic.abs());
                worst = worst.max(rel);
                assert!(rel < 1e-4, "param {i}: analytic {analytic} numeric {numeric}");
            }
        }
        assert!(worst < 1e-4);
    }
}
