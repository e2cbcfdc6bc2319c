//! Stacked unidirectional LSTM with an affine head, batched over sequences
//! of equal length.
//!
//! Activations are stored time-major: row `t * batch + b` holds step `t` of
//! sequence `b`. Gate blocks within a row are ordered `i, f, g, o`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

/// One LSTM layer: `z = x W_ih + h W_hh + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `input_width x 4H`
    pub w_ih: Array2<f64>,
    /// `H x 4H`
    pub w_hh: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

/// All trainable parameters. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<LstmLayer>,
    /// `H x 4`
    pub head_w: Array2<f64>,
    /// `4`
    pub head_b: Array1<f64>,
}

impl Weights {
    /// Uniform `+-1/sqrt(H)` matrices, zero biases except the forget gate at `+1`.
    pub fn init<R: Rng + ?Sized>(layers: usize, hidden: usize, input_width: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize| Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound));
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let width = if l == 0 { input_width } else { hidden };
            let w_ih = uniform(width, 4 * hidden);
            let w_hh = uniform(hidden, 4 * hidden);
            let mut bias = Array1::zeros(4 * hidden);
            bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
            out.push(LstmLayer { w_ih, w_hh, bias });
        }
        let head_w = uniform(hidden, 4);
        Self { layers: out, head_w, head_b: Array1::zeros(4) }
    }

    /// All-zero parameters of the given architecture.
    pub fn zeros(layers: usize, hidden: usize, input_width: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|l| LstmLayer {
                    w_ih: Array2::zeros((if l == 0 { input_width } else { hidden }, 4 * hidden)),
                    w_hh: Array2::zeros((hidden, 4 * hidden)),
                    bias: Array1::zeros(4 * hidden),
                })
                .collect(),
            head_w: Array2::zeros((hidden, 4)),
            head_b: Array1::zeros(4),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_ih: Array2::zeros(l.w_ih.raw_dim()),
                    w_hh: Array2::zeros(l.w_hh.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            head_w: Array2::zeros(self.head_w.raw_dim()),
            head_b: Array1::zeros(self.head_b.raw_dim()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.head_w.nrows()
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w_ih.nrows())
    }

    /// Tensor names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm.{l}.w_ih"), layer.w_ih.shape().to_vec()));
            out.push((format!("lstm.{l}.w_hh"), layer.w_hh.shape().to_vec()));
            out.push((format!("lstm.{l}.bias"), layer.bias.shape().to_vec()));
        }
        out.push(("head.weight".into(), self.head_w.shape().to_vec()));
        out.push(("head.bias".into(), self.head_b.shape().to_vec()));
        out
    }

    /// Flat views of every tensor, in [`Weights::layout`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for layer in &self.layers {
            out.push(layer.w_ih.as_slice().expect("standard layout"));
            out.push(layer.w_hh.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(self.head_b.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for layer in &mut self.layers {
            out.push(layer.w_ih.as_slice_mut().expect("standard layout"));
            out.push(layer.w_hh.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `sum w^2` over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|w| w * w).sum()
    }
}

struct LayerCache {
    /// layer input, `TB x width`
    x: Array2<f64>,
    /// hidden outputs, `TB x H`
    h: Array2<f64>,
    /// cell states, `TB x H`
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    /// gate activations, `TB x 4H`
    gates: Array2<f64>,
    /// dropout mask applied to `h` before the next layer
    mask: Option<Array2<f64>>,
}

/// Intermediate values kept for backpropagation through time.
pub struct ForwardCache {
    batch: usize,
    steps: usize,
    layers: Vec<LayerCache>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the network over `steps` time steps of `batch` sequences.
///
/// `xs` is `steps * batch x input_width`, time-major. With `dropout` set, a
/// fresh inverted-dropout mask is drawn for every layer output except the
/// last. Returns the raw head output (`batch x 4`) and, if requested, the
/// cache for [`backward`].
pub fn forward<R: Rng + ?Sized>(
    weights: &Weights,
    xs: &Array2<f64>,
    batch: usize,
    steps: usize,
    mut dropout: Option<(f64, &mut R)>,
    keep_cache: bool,
) -> (Array2<f64>, Option<ForwardCache>) {
    let hidden = weights.hidden();
    let n_layers = weights.layers.len();
    let mut caches = Vec::with_capacity(if keep_cache { n_layers } else { 0 });
    let mut input = xs.clone();

    for (l, layer) in weights.layers.iter().enumerate() {
        let rows = steps * batch;
        let mut zx = input.dot(&layer.w_ih);
        zx += &layer.bias;
        let mut h_all = Array2::<f64>::zeros((rows, hidden));
        let mut c_all = Array2::<f64>::zeros((rows, hidden));
        let mut tanh_all = Array2::<f64>::zeros((rows, hidden));
        let mut gates = Array2::<f64>::zeros((rows, 4 * hidden));
        let mut h_prev = Array2::<f64>::zeros((batch, hidden));
        let mut c_prev = Array2::<f64>::zeros((batch, hidden));

        for t in 0..steps {
            let block = s![t * batch..(t + 1) * batch, ..];
            let mut z = zx.slice(block).to_owned();
            general_mat_mul(1.0, &h_prev, &layer.w_hh, 1.0, &mut z);
            {
                let z = z.as_slice().expect("standard layout");
                let mut g_blk = gates.slice_mut(block);
                let mut h_blk = h_all.slice_mut(block);
                let mut c_blk = c_all.slice_mut(block);
                let mut tc_blk = tanh_all.slice_mut(block);
                for b in 0..batch {
                    let zr = &z[b * 4 * hidden..(b + 1) * 4 * hidden];
                    for k in 0..hidden {
                        let i = sigmoid(zr[k]);
                        let f = sigmoid(zr[hidden + k]);
                        let g = zr[2 * hidden + k].tanh();
                        let o = sigmoid(zr[3 * hidden + k]);
                        let c = f * c_prev[[b, k]] + i * g;
                        let tc = c.tanh();
                        g_blk[[b, k]] = i;
                        g_blk[[b, hidden + k]] = f;
                        g_blk[[b, 2 * hidden + k]] = g;
                        g_blk[[b, 3 * hidden + k]] = o;
                        c_blk[[b, k]] = c;
                        tc_blk[[b, k]] = tc;
                        h_blk[[b, k]] = o * tc;
                    }
                }
            }
            h_prev.assign(&h_all.slice(block));
            c_prev.assign(&c_all.slice(block));
        }

        let mask = match dropout.as_mut() {
            Some((p, rng)) if l + 1 < n_layers && *p > 0.0 => {
                let keep = 1.0 - *p;
                let scale = 1.0 / keep;
                Some(Array2::from_shape_simple_fn((rows, hidden), || if rng.gen::<f64>() < keep { scale } else { 0.0 }))
            }
            _ => None,
        };
        let next_input = match &mask {
            Some(m) => &h_all * m,
            None => h_all.clone(),
        };
        if keep_cache {
            caches.push(LayerCache { x: input, h: h_all, c: c_all, tanh_c: tanh_all, gates, mask });
        }
        input = next_input;
    }

    let last = input.slice(s![(steps - 1) * batch..steps * batch, ..]);
    let mut raw = last.dot(&weights.head_w);
    raw += &weights.head_b;
    let cache = keep_cache.then_some(ForwardCache { batch, steps, layers: caches });
    (raw, cache)
}

/// Gradients of a loss with respect to every weight, given `d_raw`, the loss
/// gradient with respect to the raw head output (`batch x 4`).
pub fn backward(weights: &Weights, cache: &ForwardCache, d_raw: &Array2<f64>) -> Weights {
    let (batch, steps) = (cache.batch, cache.steps);
    let hidden = weights.hidden();
    let rows = batch * steps;
    let mut grads = weights.zeros_like();

    let top = cache.layers.last().expect("at least one layer");
    let last_rows = s![(steps - 1) * batch..rows, ..];
    let h_last = top.h.slice(last_rows);
    grads.head_w = h_last.t().dot(d_raw);
    grads.head_b = d_raw.sum_axis(Axis(0));

    let mut d_h = Array2::<f64>::zeros((rows, hidden));
    d_h.slice_mut(last_rows).assign(&d_raw.dot(&weights.head_w.t()));

    for l in (0..weights.layers.len()).rev() {
        let layer = &weights.layers[l];
        let lc = &cache.layers[l];
        let mut d_z = Array2::<f64>::zeros((rows, 4 * hidden));
        let mut dh_next = Array2::<f64>::zeros((batch, hidden));
        let mut dc_next = Array2::<f64>::zeros((batch, hidden));

        for t in (0..steps).rev() {
            let block = s![t * batch..(t + 1) * batch, ..];
            let g_blk = lc.gates.slice(block);
            let tc_blk = lc.tanh_c.slice(block);
            let dh_blk = d_h.slice(block);
            let c_prev = (t > 0).then(|| lc.c.slice(s![(t - 1) * batch..t * batch, ..]));
            {
                let mut dz_blk = d_z.slice_mut(block);
                for b in 0..batch {
                    for k in 0..hidden {
                        let i = g_blk[[b, k]];
                        let f = g_blk[[b, hidden + k]];
                        let g = g_blk[[b, 2 * hidden + k]];
                        let o = g_blk[[b, 3 * hidden + k]];
                        let tc = tc_blk[[b, k]];
                        let cp = c_prev.as_ref().map_or(0.0, |c| c[[b, k]]);
                        let dh = dh_blk[[b, k]] + dh_next[[b, k]];
                        let dc = dc_next[[b, k]] + dh * o * (1.0 - tc * tc);
                        dz_blk[[b, k]] = dc * g * i * (1.0 - i);
                        dz_blk[[b, hidden + k]] = dc * cp * f * (1.0 - f);
                        dz_blk[[b, 2 * hidden + k]] = dc * i * (1.0 - g * g);
                        dz_blk[[b, 3 * hidden + k]] = dh * tc * o * (1.0 - o);
                        dc_next[[b, k]] = dc * f;
                    }
                }
            }
            if t > 0 {
                general_mat_mul(1.0, &d_z.slice(block), &layer.w_hh.t(), 0.0, &mut dh_next);
            }
        }

        let g = &mut grads.layers[l];
        if steps > 1 {
            let h_prev = lc.h.slice(s![0..(steps - 1) * batch, ..]);
            let dz_next = d_z.slice(s![batch..rows, ..]);
            g.w_hh = h_prev.t().dot(&dz_next);
        }
        g.w_ih = lc.x.t().dot(&d_z);
        g.bias = d_z.sum_axis(Axis(0));

        if l > 0 {
            let mut d_x = d_z.dot(&layer.w_ih.t());
            if let Some(mask) = &cache.layers[l - 1].mask {
                d_x *= mask;
            }
            d_h = d_x;
        }
    }
    grads
}
