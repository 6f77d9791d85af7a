//! A small convolutional network with hand-written forward and backward
//! passes: `[conv3x3 + ReLU (+ maxpool 2)]* -> global average pool -> linear`.
//!
//! All parameters live in one flat `Vec<f32>` so gradients, SGD state and
//! the on-disk blob share a single layout.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Output channels of each conv stage; every stage but the last is
    /// followed by a 2x2 max-pool.
    pub channels: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    cin: usize,
    cout: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvSlot>,
    fc_w: usize,
    fc_b: usize,
    len: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut off = 0;
        let mut cin = 3;
        let mut convs = Vec::new();
        for &cout in &arch.channels {
            let w = off;
            off += cout * cin * 9;
            let b = off;
            off += cout;
            convs.push(ConvSlot { cin, cout, w, b });
            cin = cout;
        }
        let fc_w = off;
        off += arch.n_classes * cin;
        let fc_b = off;
        off += arch.n_classes;
        Self { convs, fc_w, fc_b, len: off }
    }
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Cache {
    /// Input of each conv stage.
    inputs: Vec<Vec<f32>>,
    /// Post-ReLU output of each conv stage.
    acts: Vec<Vec<f32>>,
    /// Spatial size of each stage.
    dims: Vec<(usize, usize)>,
    /// Argmax positions of each pool, indexed by pooled pixel.
    pool_idx: Vec<Vec<u32>>,
    feat: Vec<f32>,
    pub(crate) logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub arch: Architecture,
    pub params: Vec<f32>,
    layout_len: usize,
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| f64::from(z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

fn conv_forward(x: &[f32], cin: usize, h: usize, w: usize, wt: &[f32], bias: &[f32], cout: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0.0f32; cout * plane];
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        for ci in 0..cin {
            let inp = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    let wv = wt[((co * cin + ci) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &inp[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        let dst = &mut o[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[f32],
    cout: usize,
    dout: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
    want_dx: bool,
) -> Option<Vec<f32>> {
    let plane = h * w;
    let mut dx_buf = want_dx.then(|| vec![0.0f32; cin * plane]);
    for co in 0..cout {
        let g = &dout[co * plane..(co + 1) * plane];
        db[co] += g.iter().sum::<f32>();
        for ci in 0..cin {
            let inp = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                for kx in 0..3 {
                    let dxo = kx as isize - 1;
                    let (x0, x1) = ((-dxo).max(0) as usize, (w as isize - dxo).min(w as isize) as usize);
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0f32;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = sy * w + (x0 as isize + dxo) as usize;
                        let src = &inp[s0..s0 + (x1 - x0)];
                        let gr = &g[y * w + x0..y * w + x1];
                        acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f32>();
                        if let Some(dx) = dx_buf.as_mut() {
                            let drow = &mut dx[ci * plane + s0..ci * plane + s0 + (x1 - x0)];
                            for (d, gv) in drow.iter_mut().zip(gr) {
                                *d += wv * gv;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    dx_buf
}

fn maxpool(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * ph * pw];
    let mut idx = vec![0u32; c * ph * pw];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let mut best = (f32::NEG_INFINITY, 0usize);
                for (oy, ox) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ch * h * w + (2 * py + oy) * w + 2 * px + ox;
                    if x[i] > best.0 {
                        best = (x[i], i);
                    }
                }
                let o = ch * ph * pw + py * pw + px;
                out[o] = best.0;
                idx[o] = best.1 as u32;
            }
        }
    }
    (out, idx, ph, pw)
}

impl ConvNet {
    /// He-normal conv weights, zero biases.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Self {
        let layout = Layout::new(&arch);
        let mut params = vec![0.0f32; layout.len];
        for slot in &layout.convs {
            let std = (2.0 / (slot.cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for p in &mut params[slot.w..slot.b] {
                *p = normal.sample(rng) as f32;
            }
        }
        let c_last = arch.channels.last().copied().unwrap_or(3);
        let normal = Normal::new(0.0, (1.0 / c_last as f64).sqrt()).expect("finite std");
        for p in &mut params[layout.fc_w..layout.fc_b] {
            *p = normal.sample(rng) as f32;
        }
        Self { arch, params, layout_len: layout.len }
    }

    /// Every parameter set to `value`; all classes score alike.
    pub fn constant(arch: Architecture, value: f32) -> Self {
        let len = Layout::new(&arch).len;
        Self { arch, params: vec![value; len], layout_len: len }
    }

    pub fn from_params(arch: Architecture, params: Vec<f32>) -> Option<Self> {
        let len = Layout::new(&arch).len;
        (params.len() == len).then_some(Self { arch, params, layout_len: len })
    }

    pub fn n_params(&self) -> usize {
        self.layout_len
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.arch)
    }

    /// `input` is CHW in `[0, 1]`; it is mapped to `[-1, 1]` first.
    pub(crate) fn forward(&self, input: &[f32], h: usize, w: usize) -> Cache {
        let layout = self.layout();
        let p = &self.params;
        let mut x: Vec<f32> = input.iter().map(|v| 2.0 * v - 1.0).collect();
        let (mut ch, mut cw) = (h, w);
        let n_stages = layout.convs.len();
        let mut cache = Cache {
            inputs: Vec::with_capacity(n_stages),
            acts: Vec::with_capacity(n_stages),
            dims: Vec::with_capacity(n_stages),
            pool_idx: Vec::new(),
            feat: Vec::new(),
            logits: Vec::new(),
        };
        for (s, slot) in layout.convs.iter().enumerate() {
            let mut a = conv_forward(&x, slot.cin, ch, cw, &p[slot.w..slot.b], &p[slot.b..slot.b + slot.cout], slot.cout);
            a.iter_mut().for_each(|v| *v = v.max(0.0));
            cache.dims.push((ch, cw));
            cache.inputs.push(std::mem::take(&mut x));
            if s + 1 < n_stages {
                let (pooled, idx, ph, pw) = maxpool(&a, slot.cout, ch, cw);
                cache.pool_idx.push(idx);
                x = pooled;
                ch = ph;
                cw = pw;
            }
            cache.acts.push(a);
        }
        let c_last = layout.convs.last().map_or(3, |s| s.cout);
        let last = cache.acts.last().map_or(&x, |a| a);
        let plane = (ch * cw) as f32;
        cache.feat = (0..c_last)
            .map(|c| last[c * ch * cw..(c + 1) * ch * cw].iter().sum::<f32>() / plane)
            .collect();
        let k = self.arch.n_classes;
        cache.logits = (0..k)
            .map(|j| {
                let row = &p[layout.fc_w + j * c_last..layout.fc_w + (j + 1) * c_last];
                p[layout.fc_b + j] + row.iter().zip(&cache.feat).map(|(a, b)| a * b).sum::<f32>()
            })
            .collect();
        cache
    }

    /// Gradient of the last conv activations with respect to the logits
    /// weighted by `dlogits`.
    fn dlast(&self, cache: &Cache, dlogits: &[f32]) -> Vec<f32> {
        let layout = self.layout();
        let c_last = layout.convs.last().map_or(3, |s| s.cout);
        let (h, w) = *cache.dims.last().expect("at least one conv stage");
        let plane = h * w;
        let mut d = vec![0.0f32; c_last * plane];
        for c in 0..c_last {
            let df: f32 = (0..self.arch.n_classes)
                .map(|j| self.params[layout.fc_w + j * c_last + c] * dlogits[j])
                .sum();
            d[c * plane..(c + 1) * plane].fill(df / plane as f32);
        }
        d
    }

    /// Accumulates parameter gradients for one sample into `grad`.
    pub(crate) fn backward(&self, cache: &Cache, dlogits: &[f32], grad: &mut [f32]) {
        let layout = self.layout();
        let c_last = layout.convs.last().map_or(3, |s| s.cout);
        for j in 0..self.arch.n_classes {
            grad[layout.fc_b + j] += dlogits[j];
            for c in 0..c_last {
                grad[layout.fc_w + j * c_last + c] += dlogits[j] * cache.feat[c];
            }
        }
        let mut dact = self.dlast(cache, dlogits);
        for s in (0..layout.convs.len()).rev() {
            let slot = layout.convs[s];
            let (h, w) = cache.dims[s];
            for (g, a) in dact.iter_mut().zip(&cache.acts[s]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let (dw, rest) = grad[slot.w..].split_at_mut(slot.b - slot.w);
            let db = &mut rest[..slot.cout];
            let dx = conv_backward(
                &cache.inputs[s],
                slot.cin,
                h,
                w,
                &self.params[slot.w..slot.b],
                slot.cout,
                &dact,
                dw,
                db,
                s > 0,
            );
            if let Some(dx) = dx {
                let (ph, pw) = cache.dims[s - 1];
                let prev = layout.convs[s - 1].cout;
                let mut up = vec![0.0f32; prev * ph * pw];
                for (o, &src) in cache.pool_idx[s - 1].iter().enumerate() {
                    up[src as usize] += dx[o];
                }
                dact = up;
            }
        }
    }

    /// Last-stage activations and the gradient of one class logit with
    /// respect to them, both `C x h x w`.
    pub(crate) fn activation_and_gradient(&self, input: &[f32], h: usize, w: usize, class: usize) -> (Vec<f32>, Vec<f32>, (usize, usize)) {
        let cache = self.forward(input, h, w);
        let mut onehot = vec![0.0f32; self.arch.n_classes];
        onehot[class] = 1.0;
        let grad = self.dlast(&cache, &onehot);
        let dims = *cache.dims.last().expect("at least one conv stage");
        let act = cache.acts.last().expect("at least one conv stage").clone();
        (act, grad, dims)
    }
}
