//! Small fully connected networks over a flat parameter vector, with
//! hand-written batched forward and reverse passes.
//!
//! Hidden blocks are `Linear -> LayerNorm (no affine) -> LeakyReLU`, with a
//! skip connection when the block's input and output widths agree.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
    /// Layer-normalize the raw input before the first linear map.
    pub input_norm: bool,
    pub layer_norm: bool,
    pub residual: bool,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    w_off: usize,
    b_off: usize,
    fan_in: usize,
    fan_out: usize,
    hidden: bool,
    residual: bool,
}

/// Parameter layout and evaluation of one network inside a flat vector.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    offset: usize,
    blocks: Vec<Block>,
    len: usize,
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Option<Array2<f64>>,
    /// Normalized pre-activation (or raw pre-activation without layer norm).
    y: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
}

/// Activations retained for the reverse pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    blocks: Vec<BlockCache>,
    raw_input: Option<(Array2<f64>, Array1<f64>)>,
}

impl Mlp {
    /// Lays the network out starting at `offset` of a larger parameter vector.
    pub fn new(spec: MlpSpec, offset: usize) -> Self {
        assert!(
            spec.hidden >= 1 || spec.hidden_layers == 0,
            "hidden width must be positive"
        );
        let mut blocks = Vec::with_capacity(spec.hidden_layers + 1);
        let mut at = offset;
        let mut width = spec.input;
        for k in 0..=spec.hidden_layers {
            let hidden = k < spec.hidden_layers;
            let fan_out = if hidden { spec.hidden } else { spec.output };
            let residual = spec.residual && width == fan_out && (hidden || spec.hidden_layers > 0);
            blocks.push(Block {
                w_off: at,
                b_off: at + fan_in_out(width, fan_out),
                fan_in: width,
                fan_out,
                hidden,
                residual,
            });
            at += fan_in_out(width, fan_out) + fan_out;
            width = fan_out;
        }
        Mlp {
            spec,
            offset,
            blocks,
            len: at - offset,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    /// One past the last parameter index used by this network.
    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    /// Uniform `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for b in &self.blocks {
            let bound = 1.0 / (b.fan_in.max(1) as f64).sqrt();
            for v in &mut params[b.w_off..b.b_off + b.fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    fn weight<'a>(&self, params: &'a [f64], k: usize) -> ArrayView2<'a, f64> {
        let b = &self.blocks[k];
        ArrayView2::from_shape((b.fan_out, b.fan_in), &params[b.w_off..b.b_off]).expect("layout")
    }

    fn bias<'a>(&self, params: &'a [f64], k: usize) -> ArrayView1<'a, f64> {
        let b = &self.blocks[k];
        ArrayView1::from(&params[b.b_off..b.b_off + b.fan_out])
    }

    /// Weight of the first linear map, `fan_out x fan_in`.
    pub fn first_weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        self.weight(params, 0)
    }

    pub fn first_bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        self.bias(params, 0)
    }

    /// Mutable views of the first linear map's gradient slots.
    pub fn first_grads<'a>(
        &self,
        grads: &'a mut [f64],
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let b = self.blocks[0];
        let (w, rest) = grads[b.w_off..b.b_off + b.fan_out].split_at_mut(b.b_off - b.w_off);
        (
            ArrayViewMut2::from_shape((b.fan_out, b.fan_in), w).expect("layout"),
            ArrayViewMut1::from(rest),
        )
    }

    /// Batched forward pass on rows of `x`.
    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let (input, raw) = if self.spec.input_norm {
            let (y, inv) = layer_norm(x);
            (y, Some((x.to_owned(), inv)))
        } else {
            (x.to_owned(), None)
        };
        let pre = input.dot(&self.weight(params, 0).t()) + self.bias(params, 0);
        let (out, mut cache) = self.run(params, pre, Some(input));
        cache.raw_input = raw;
        (out, cache)
    }

    /// Forward pass given the first layer's pre-activation, for callers that
    /// compute the first linear map themselves. Not valid when the first
    /// block has a skip connection.
    pub fn forward_from_first(
        &self,
        params: &[f64],
        first_pre: Array2<f64>,
    ) -> (Array2<f64>, MlpCache) {
        assert!(
            !self.blocks[0].residual,
            "first block has a skip connection"
        );
        self.run(params, first_pre, None)
    }

    fn run(
        &self,
        params: &[f64],
        first_pre: Array2<f64>,
        first_input: Option<Array2<f64>>,
    ) -> (Array2<f64>, MlpCache) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut pre = first_pre;
        let mut input = first_input;
        let mut out = Array2::zeros((0, 0));
        for (k, b) in self.blocks.iter().enumerate() {
            if k > 0 {
                let a = input.as_ref().expect("block input");
                pre = a.dot(&self.weight(params, k).t()) + self.bias(params, k);
            }
            let mut bc = BlockCache {
                input: None,
                y: None,
                inv_std: None,
            };
            let mut post = if b.hidden {
                let (y, inv) = if self.spec.layer_norm {
                    let (y, inv) = layer_norm(pre.view());
                    (y, Some(inv))
                } else {
                    (std::mem::take(&mut pre), None)
                };
                let h = y.mapv(leaky_relu);
                bc.y = Some(y);
                bc.inv_std = inv;
                h
            } else {
                std::mem::take(&mut pre)
            };
            if b.residual {
                post += input.as_ref().expect("block input");
            }
            bc.input = input.take();
            caches.push(bc);
            if k + 1 < self.blocks.len() {
                input = Some(post);
            } else {
                out = post;
            }
        }
        (
            out,
            MlpCache {
                blocks: caches,
                raw_input: None,
            },
        )
    }

    /// Reverse pass down to the first pre-activation. Accumulates parameter
    /// gradients of every block after the first into `grads` when given.
    /// Returns the gradient at the first pre-activation and, when the first
    /// block has a skip connection, the gradient reaching its input through
    /// the skip.
    pub fn backward_to_first(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: Array2<f64>,
        mut grads: Option<&mut [f64]>,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        let mut d_out = grad_out;
        for k in (0..self.blocks.len()).rev() {
            let b = &self.blocks[k];
            let bc = &cache.blocks[k];
            let d_skip = if b.residual {
                Some(d_out.clone())
            } else {
                None
            };
            let d_pre = if b.hidden {
                let y = bc.y.as_ref().expect("cached activation");
                let mut d_y = d_out;
                Zip::from(&mut d_y)
                    .and(y)
                    .for_each(|g, &v| *g *= leaky_relu_grad(v));
                match &bc.inv_std {
                    Some(inv) => layer_norm_backward(d_y.view(), y.view(), inv.view()),
                    None => d_y,
                }
            } else {
                d_out
            };
            if k == 0 {
                return (d_pre, d_skip);
            }
            let a = bc.input.as_ref().expect("block input");
            if let Some(g) = grads.as_deref_mut() {
                let mut gw =
                    ArrayViewMut2::from_shape((b.fan_out, b.fan_in), &mut g[b.w_off..b.b_off])
                        .expect("layout");
                gw += &d_pre.t().dot(a);
                let mut gb = ArrayViewMut1::from(&mut g[b.b_off..b.b_off + b.fan_out]);
                gb += &d_pre.sum_axis(Axis(0));
            }
            let mut d_in = d_pre.dot(&self.weight(params, k));
            if let Some(s) = d_skip {
                d_in += &s;
            }
            d_out = d_in;
        }
        unreachable!("network has at least one block")
    }

    /// Full reverse pass; returns the gradient with respect to the input rows.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: Array2<f64>,
        mut grads: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let (d_pre, d_skip) = self.backward_to_first(params, cache, grad_out, grads.as_deref_mut());
        let input = cache.blocks[0]
            .input
            .as_ref()
            .expect("forward() caches the input");
        if let Some(g) = grads {
            let (mut gw, mut gb) = self.first_grads(g);
            gw += &d_pre.t().dot(input);
            gb += &d_pre.sum_axis(Axis(0));
        }
        let mut d_x = d_pre.dot(&self.weight(params, 0));
        if let Some(s) = d_skip {
            d_x += &s;
        }
        match &cache.raw_input {
            Some((_, inv)) => layer_norm_backward(d_x.view(), input.view(), inv.view()),
            None => d_x,
        }
    }
}

fn fan_in_out(fan_in: usize, fan_out: usize) -> usize {
    fan_in * fan_out
}

#[inline]
pub fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_relu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Row-wise layer normalization without affine parameters. Returns the
/// normalized rows and each row's `1/sqrt(var + eps)`.
pub fn layer_norm(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let cols = x.ncols() as f64;
    let mut y = x.to_owned();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, inv_r) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / cols;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
        *inv_r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let r = *inv_r;
        row.mapv_inplace(|v| (v - mean) * r);
    }
    (y, inv)
}

fn layer_norm_backward(
    d_y: ArrayView2<f64>,
    y: ArrayView2<f64>,
    inv: ArrayView1<f64>,
) -> Array2<f64> {
    let cols = y.ncols() as f64;
    let mut d_x = d_y.to_owned();
    for ((mut dx, yr), &r) in d_x.rows_mut().into_iter().zip(y.rows()).zip(inv.iter()) {
        let mean_d = dx.sum() / cols;
        let mean_dy = dx.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
        Zip::from(&mut dx)
            .and(&yr)
            .for_each(|g, &yv| *g = r * (*g - mean_d - yv * mean_dy));
    }
    d_x
}
