//! Built-in window encoder.
//!
//! Each position starts from a token embedding plus a position-within-window
//! embedding. Every mixing layer gathers the other positions of the window
//! through per-offset channel weights, projects the result, and adds it back
//! residually:
//!
//! ```text
//! z_i = sum_j R[j - i] * h_j          (elementwise, offsets -10..=10)
//! h'_i = h_i + tanh(W z_i + b)
//! out_i = U h_i + c                   (two raw reals per position)
//! ```
//!
//! Nothing outside the window is ever read, so predictions depend only on
//! the tokens inside it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MAX_WINDOW;

const OFFSETS: usize = 2 * MAX_WINDOW - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub mixing_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            mixing_layers: 2,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub dim: usize,
    pub vocab: usize,
    pub layers: usize,
    pub token_emb: usize,
    pub pos_emb: usize,
    /// (offset weights, projection, bias) per layer.
    pub mixing: Vec<(usize, usize, usize)>,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(vocab: usize, config: &ModelConfig) -> Self {
        let d = config.embed_dim;
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let token_emb = take(vocab * d);
        let pos_emb = take(MAX_WINDOW * d);
        let mixing = (0..config.mixing_layers)
            .map(|_| (take(OFFSETS * d), take(d * d), take(d)))
            .collect();
        let head_w = take(2 * d);
        let head_b = take(2);
        Layout {
            dim: d,
            vocab,
            layers: config.mixing_layers,
            token_emb,
            pos_emb,
            mixing,
            head_w,
            head_b,
            total: cursor,
        }
    }

    /// Index range of the dense (non-embedding-table) parameters.
    pub fn dense_range(&self) -> std::ops::Range<usize> {
        self.pos_emb..self.total
    }
}

pub(crate) fn init_params(layout: &Layout, head_bias: [f64; 2], rng: &mut impl Rng) -> Vec<f64> {
    let d = layout.dim;
    let mut p = vec![0.0; layout.total];
    let emb = Normal::new(0.0, 0.5).expect("valid normal");
    let proj = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid normal");
    let small = Normal::new(0.0, 0.1).expect("valid normal");
    for v in &mut p[layout.token_emb..layout.token_emb + layout.vocab * d] {
        *v = emb.sample(rng);
    }
    for v in &mut p[layout.pos_emb..layout.pos_emb + MAX_WINDOW * d] {
        *v = small.sample(rng);
    }
    for &(r, w, _) in &layout.mixing {
        for v in &mut p[r..r + OFFSETS * d] {
            *v = small.sample(rng);
        }
        for v in &mut p[w..w + d * d] {
            *v = proj.sample(rng);
        }
    }
    for v in &mut p[layout.head_w..layout.head_w + 2 * d] {
        *v = small.sample(rng) / (d as f64).sqrt();
    }
    p[layout.head_b] = head_bias[0];
    p[layout.head_b + 1] = head_bias[1];
    p
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    len: usize,
    /// Hidden state entering each layer, plus the final one (`layers + 1`).
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
}

fn offset_index(i: usize, j: usize) -> usize {
    j + MAX_WINDOW - 1 - i
}

/// `out[r] += sum_c m[r * cols + c] * x[c]`
fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[c] += sum_r m[r * cols + c] * x[r]`
fn matvec_t_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * xr;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn mix_layer(
    params: &[f64],
    layout: &Layout,
    layer: usize,
    h: &[f64],
    len: usize,
    rows: impl Iterator<Item = usize>,
    z_out: &mut [f64],
    g_out: &mut [f64],
) {
    let d = layout.dim;
    let (r_off, w_off, b_off) = layout.mixing[layer];
    let weights = &params[w_off..w_off + d * d];
    let bias = &params[b_off..b_off + d];
    for i in rows {
        let z = &mut z_out[i * d..(i + 1) * d];
        z.fill(0.0);
        for j in 0..len {
            let r = &params[r_off + offset_index(i, j) * d..][..d];
            let hj = &h[j * d..(j + 1) * d];
            for ((zc, rc), hc) in z.iter_mut().zip(r).zip(hj) {
                *zc += rc * hc;
            }
        }
        let g = &mut g_out[i * d..(i + 1) * d];
        g.copy_from_slice(bias);
        matvec_add(weights, z, g);
        for v in g.iter_mut() {
            *v = v.tanh();
        }
    }
}

fn embed(params: &[f64], layout: &Layout, ids: &[usize]) -> Vec<f64> {
    let d = layout.dim;
    let mut h = vec![0.0; ids.len() * d];
    for (i, &id) in ids.iter().enumerate() {
        let e = &params[layout.token_emb + id * d..][..d];
        let p = &params[layout.pos_emb + i * d..][..d];
        for ((o, a), b) in h[i * d..(i + 1) * d].iter_mut().zip(e).zip(p) {
            *o = a + b;
        }
    }
    h
}

fn head(params: &[f64], layout: &Layout, h: &[f64]) -> [f64; 2] {
    let d = layout.dim;
    let mut out = [params[layout.head_b], params[layout.head_b + 1]];
    matvec_add(&params[layout.head_w..layout.head_w + 2 * d], h, &mut out);
    out
}

/// Raw outputs for every position, keeping activations for [`backward`].
pub(crate) fn forward(params: &[f64], layout: &Layout, ids: &[usize]) -> (Vec<[f64; 2]>, Cache) {
    let d = layout.dim;
    let len = ids.len();
    let mut hs = vec![embed(params, layout, ids)];
    let mut zs = Vec::with_capacity(layout.layers);
    let mut gs = Vec::with_capacity(layout.layers);
    for l in 0..layout.layers {
        let mut z = vec![0.0; len * d];
        let mut g = vec![0.0; len * d];
        mix_layer(params, layout, l, &hs[l], len, 0..len, &mut z, &mut g);
        let next: Vec<f64> = hs[l].iter().zip(&g).map(|(a, b)| a + b).collect();
        hs.push(next);
        zs.push(z);
        gs.push(g);
    }
    let last = &hs[layout.layers];
    let out = (0..len)
        .map(|i| head(params, layout, &last[i * d..(i + 1) * d]))
        .collect();
    (
        out,
        Cache {
            len,
            h: hs,
            z: zs,
            g: gs,
        },
    )
}

/// Raw output at a single position; the last layer is evaluated only there.
pub(crate) fn forward_at(
    params: &[f64],
    layout: &Layout,
    ids: &[usize],
    target: usize,
) -> [f64; 2] {
    let d = layout.dim;
    let len = ids.len();
    let mut h = embed(params, layout, ids);
    let mut z = vec![0.0; len * d];
    let mut g = vec![0.0; len * d];
    for l in 0..layout.layers {
        let last = l + 1 == layout.layers;
        if last {
            mix_layer(
                params,
                layout,
                l,
                &h,
                len,
                std::iter::once(target),
                &mut z,
                &mut g,
            );
            for c in target * d..(target + 1) * d {
                h[c] += g[c];
            }
        } else {
            mix_layer(params, layout, l, &h, len, 0..len, &mut z, &mut g);
            for (a, b) in h.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    head(params, layout, &h[target * d..(target + 1) * d])
}

/// Accumulates parameter gradients into `grad` given the loss gradient with
/// respect to each position's raw outputs.
pub(crate) fn backward(
    params: &[f64],
    layout: &Layout,
    ids: &[usize],
    cache: &Cache,
    d_out: &[[f64; 2]],
    grad: &mut [f64],
) {
    let d = layout.dim;
    let len = cache.len;
    let top = &cache.h[layout.layers];
    let mut dh = vec![0.0; len * d];
    let hw = &params[layout.head_w..layout.head_w + 2 * d];
    for (i, dout) in d_out.iter().enumerate() {
        if dout[0] == 0.0 && dout[1] == 0.0 {
            continue;
        }
        let hi = &top[i * d..(i + 1) * d];
        for (k, &dk) in dout.iter().enumerate() {
            grad[layout.head_b + k] += dk;
            let gw = &mut grad[layout.head_w + k * d..layout.head_w + (k + 1) * d];
            for (gv, hv) in gw.iter_mut().zip(hi) {
                *gv += dk * hv;
            }
        }
        matvec_t_add(hw, dout, &mut dh[i * d..(i + 1) * d]);
    }

    let mut da = vec![0.0; d];
    let mut dz = vec![0.0; len * d];
    for l in (0..layout.layers).rev() {
        let (r_off, w_off, b_off) = layout.mixing[l];
        let h = &cache.h[l];
        let z = &cache.z[l];
        let g = &cache.g[l];
        let weights = &params[w_off..w_off + d * d];
        dz.fill(0.0);
        for i in 0..len {
            for c in 0..d {
                let gc = g[i * d + c];
                da[c] = dh[i * d + c] * (1.0 - gc * gc);
            }
            for (c, &dac) in da.iter().enumerate() {
                grad[b_off + c] += dac;
                if dac == 0.0 {
                    continue;
                }
                let zi = &z[i * d..(i + 1) * d];
                let gw = &mut grad[w_off + c * d..w_off + (c + 1) * d];
                for (gv, zv) in gw.iter_mut().zip(zi) {
                    *gv += dac * zv;
                }
            }
            matvec_t_add(weights, &da, &mut dz[i * d..(i + 1) * d]);
        }
        // residual: dh flows through unchanged, plus the gather term
        let mut dh_prev = dh.clone();
        for i in 0..len {
            let dzi = &dz[i * d..(i + 1) * d];
            for j in 0..len {
                let o = r_off + offset_index(i, j) * d;
                let hj = &h[j * d..(j + 1) * d];
                for c in 0..d {
                    grad[o + c] += dzi[c] * hj[c];
                    dh_prev[j * d + c] += params[o + c] * dzi[c];
                }
            }
        }
        dh = dh_prev;
    }

    for (i, &id) in ids.iter().enumerate() {
        let src = &dh[i * d..(i + 1) * d];
        let e = layout.token_emb + id * d;
        let p = layout.pos_emb + i * d;
        for c in 0..d {
            grad[e + c] += src[c];
            grad[p + c] += src[c];
        }
    }
}
