//! Small convolutional classifier: three 3x3 conv blocks with 24, 48 and 72
//! filters, each followed by leaky ReLU and 2x2 max pooling, then one fully
//! connected layer.
//!
//! Tensors are channel-planar (CHW). Convolutions are stride 1 with zero
//! padding 1, so each block preserves spatial size and pooling halves it
//! (flooring odd sizes). Inputs must be at least 8x8 so the final feature
//! map is nonempty.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{axpy, dot, logit_gradient, vsum, Logits, Normalizer, LEAKY_SLOPE};

const FILTERS: [usize; 3] = [24, 48, 72];
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StageDims {
    in_ch: usize,
    out_ch: usize,
    // Spatial size seen by this stage's convolution.
    h: usize,
    w: usize,
    // After pooling.
    ph: usize,
    pw: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    stages: [StageDims; 3],
    fc_in: usize,
    num_classes: usize,
    // Flat-vector offsets, in order: c1w c1b c2w c2b c3w c3b fcw fcb.
    offsets: [usize; 8],
    total: usize,
}

impl Layout {
    fn new(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::InvalidArgument(format!(
                "the conv net needs inputs of at least 8x8, got {height}x{width}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(
                "a classifier needs at least two classes".into(),
            ));
        }
        let mut stages = [StageDims {
            in_ch: 0,
            out_ch: 0,
            h: 0,
            w: 0,
            ph: 0,
            pw: 0,
        }; 3];
        let (mut h, mut w, mut in_ch) = (height, width, 3usize);
        for (i, &out_ch) in FILTERS.iter().enumerate() {
            let (ph, pw) = (h / 2, w / 2);
            stages[i] = StageDims {
                in_ch,
                out_ch,
                h,
                w,
                ph,
                pw,
            };
            h = ph;
            w = pw;
            in_ch = out_ch;
        }
        let fc_in = FILTERS[2] * h * w;
        let sizes = [
            stages[0].out_ch * stages[0].in_ch * KERNEL * KERNEL,
            stages[0].out_ch,
            stages[1].out_ch * stages[1].in_ch * KERNEL * KERNEL,
            stages[1].out_ch,
            stages[2].out_ch * stages[2].in_ch * KERNEL * KERNEL,
            stages[2].out_ch,
            num_classes * fc_in,
            num_classes,
        ];
        let mut offsets = [0usize; 8];
        let mut total = 0;
        for (i, &s) in sizes.iter().enumerate() {
            offsets[i] = total;
            total += s;
        }
        Ok(Layout {
            stages,
            fc_in,
            num_classes,
            offsets,
            total,
        })
    }

    fn slice<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        let end = if i + 1 < 8 {
            self.offsets[i + 1]
        } else {
            self.total
        };
        &params[self.offsets[i]..end]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcnnModel {
    height: usize,
    width: usize,
    seed: u64,
    normalizer: Normalizer,
    layout: Layout,
    params: Vec<f64>,
}

impl BcnnModel {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
        normalizer: Normalizer,
    ) -> Result<Self> {
        let layout = Layout::new(height, width, num_classes)?;
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // He-style uniform weights, zero biases. Weight blocks are filled in
        // layer order so initialization is reproducible from the seed alone.
        for stage in 0..3 {
            let dims = layout.stages[stage];
            let fan_in = (dims.in_ch * KERNEL * KERNEL) as f64;
            let limit = (6.0 / fan_in).sqrt();
            let start = layout.offsets[stage * 2];
            let len = dims.out_ch * dims.in_ch * KERNEL * KERNEL;
            for w in params[start..start + len].iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        let limit = (6.0 / layout.fc_in as f64).sqrt();
        let start = layout.offsets[6];
        let len = num_classes * layout.fc_in;
        for w in params[start..start + len].iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        Ok(BcnnModel {
            height,
            width,
            seed,
            normalizer,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
        normalizer: Normalizer,
        params: Vec<f64>,
    ) -> Result<Self> {
        let layout = Layout::new(height, width, num_classes)?;
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "conv net expects {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(BcnnModel {
            height,
            width,
            seed,
            normalizer,
            layout,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.layout.num_classes
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn forward(&self, image: &Image) -> Vec<f64> {
        let x = self.normalizer.to_tensor(image);
        self.run_forward(&x).logits
    }

    fn run_forward(&self, x: &[f64]) -> Cache {
        let l = &self.layout;
        let mut planes = x.to_vec();
        let mut activations = Vec::with_capacity(3);
        let mut pooled = Vec::with_capacity(3);
        let mut argmax = Vec::with_capacity(3);
        for stage in 0..3 {
            let d = l.stages[stage];
            let mut a = vec![0.0; d.out_ch * d.h * d.w];
            conv3x3_forward(
                d.h,
                d.w,
                d.in_ch,
                d.out_ch,
                l.slice(&self.params, stage * 2),
                l.slice(&self.params, stage * 2 + 1),
                &planes,
                &mut a,
            );
            leaky_forward(&mut a);
            let mut p = vec![0.0; d.out_ch * d.ph * d.pw];
            let mut idx = vec![0u32; d.out_ch * d.ph * d.pw];
            maxpool2_forward(d.out_ch, d.h, d.w, &a, &mut p, &mut idx);
            planes = p.clone();
            activations.push(a);
            pooled.push(p);
            argmax.push(idx);
        }
        let fcw = l.slice(&self.params, 6);
        let fcb = l.slice(&self.params, 7);
        let features = &pooled[2];
        let logits: Vec<f64> = (0..l.num_classes)
            .map(|k| fcb[k] + dot(&fcw[k * l.fc_in..(k + 1) * l.fc_in], features))
            .collect();
        Cache {
            x: x.to_vec(),
            activations,
            pooled,
            argmax,
            logits,
        }
    }

    pub(crate) fn loss_and_gradient_into(
        &self,
        image: &Image,
        label: usize,
        grad: &mut [f64],
    ) -> Result<(f64, usize)> {
        let x = self.normalizer.to_tensor(image);
        let cache = self.run_forward(&x);
        let logits = Logits(cache.logits.clone());
        let loss = crate::model::cross_entropy(&logits, label)?;
        let g = logit_gradient(&logits, label);
        let l = &self.layout;

        // Split the flat gradient buffer into per-layer views.
        let (gc1w, rest) = grad.split_at_mut(l.offsets[1]);
        let (gc1b, rest) = rest.split_at_mut(l.offsets[2] - l.offsets[1]);
        let (gc2w, rest) = rest.split_at_mut(l.offsets[3] - l.offsets[2]);
        let (gc2b, rest) = rest.split_at_mut(l.offsets[4] - l.offsets[3]);
        let (gc3w, rest) = rest.split_at_mut(l.offsets[5] - l.offsets[4]);
        let (gc3b, rest) = rest.split_at_mut(l.offsets[6] - l.offsets[5]);
        let (gfcw, gfcb) = rest.split_at_mut(l.offsets[7] - l.offsets[6]);
        let conv_w_grads = [gc1w, gc2w, gc3w];
        let conv_b_grads = [gc1b, gc2b, gc3b];

        // Fully connected layer.
        let fcw = l.slice(&self.params, 6);
        let features = &cache.pooled[2];
        let mut d_features = vec![0.0; l.fc_in];
        for k in 0..l.num_classes {
            axpy(&mut gfcw[k * l.fc_in..(k + 1) * l.fc_in], g[k], features);
            gfcb[k] += g[k];
            axpy(&mut d_features, g[k], &fcw[k * l.fc_in..(k + 1) * l.fc_in]);
        }

        // Conv blocks in reverse. d_pool is the gradient at a stage's pooled
        // output; unpooling and the activation mask turn it into the gradient
        // at the conv output.
        let mut d_pool = d_features;
        for stage in (0..3).rev() {
            let d = l.stages[stage];
            let mut d_act = vec![0.0; d.out_ch * d.h * d.w];
            maxpool2_backward(&d_pool, &cache.argmax[stage], &mut d_act);
            leaky_backward(&cache.activations[stage], &mut d_act);

            let stage_input: &[f64] = if stage == 0 {
                &cache.x
            } else {
                &cache.pooled[stage - 1]
            };
            conv3x3_backward_params(
                d.h,
                d.w,
                d.in_ch,
                d.out_ch,
                stage_input,
                &d_act,
                conv_w_grads[stage],
                conv_b_grads[stage],
            );
            if stage > 0 {
                let mut d_in = vec![0.0; d.in_ch * d.h * d.w];
                conv3x3_backward_input(
                    d.h,
                    d.w,
                    d.in_ch,
                    d.out_ch,
                    l.slice(&self.params, stage * 2),
                    &d_act,
                    &mut d_in,
                );
                d_pool = d_in;
            }
        }
        Ok((loss, logits.argmax()))
    }
}

struct Cache {
    x: Vec<f64>,
    activations: Vec<Vec<f64>>,
    pooled: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    logits: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Kernels. All loops run over contiguous row slices so they vectorize.
// 3x3 kernel, stride 1, zero padding 1 throughout.
// ---------------------------------------------------------------------------

/// Valid output-coordinate range for a kernel tap: padding clips one row or
/// column at each border tap.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    let lo = usize::from(k == 0);
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_forward(
    h: usize,
    w: usize,
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    biases: &[f64],
    input: &[f64],
    output: &mut [f64],
) {
    let hw = h * w;
    for oc in 0..out_ch {
        let out_plane = &mut output[oc * hw..(oc + 1) * hw];
        out_plane.fill(biases[oc]);
        for ic in 0..in_ch {
            let in_plane = &input[ic * hw..(ic + 1) * hw];
            let wbase = (oc * in_ch + ic) * KERNEL * KERNEL;
            for ky in 0..KERNEL {
                let (oy_lo, oy_hi) = tap_range(ky, h);
                for kx in 0..KERNEL {
                    let (ox_lo, ox_hi) = tap_range(kx, w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let wv = weights[wbase + ky * KERNEL + kx];
                    let ix_lo = ox_lo + kx - 1;
                    let ix_hi = ox_hi + kx - 1;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - 1;
                        axpy(
                            &mut out_plane[oy * w + ox_lo..oy * w + ox_hi],
                            wv,
                            &in_plane[iy * w + ix_lo..iy * w + ix_hi],
                        );
                    }
                }
            }
        }
    }
}

/// Accumulates the gradient with respect to the convolution input.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward_input(
    h: usize,
    w: usize,
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    d_out: &[f64],
    d_in: &mut [f64],
) {
    let hw = h * w;
    for oc in 0..out_ch {
        let dout_plane = &d_out[oc * hw..(oc + 1) * hw];
        for ic in 0..in_ch {
            let din_plane = &mut d_in[ic * hw..(ic + 1) * hw];
            let wbase = (oc * in_ch + ic) * KERNEL * KERNEL;
            for ky in 0..KERNEL {
                let (oy_lo, oy_hi) = tap_range(ky, h);
                for kx in 0..KERNEL {
                    let (ox_lo, ox_hi) = tap_range(kx, w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let wv = weights[wbase + ky * KERNEL + kx];
                    let ix_lo = ox_lo + kx - 1;
                    let ix_hi = ox_hi + kx - 1;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - 1;
                        axpy(
                            &mut din_plane[iy * w + ix_lo..iy * w + ix_hi],
                            wv,
                            &dout_plane[oy * w + ox_lo..oy * w + ox_hi],
                        );
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients for one convolution.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward_params(
    h: usize,
    w: usize,
    in_ch: usize,
    out_ch: usize,
    input: &[f64],
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
) {
    let hw = h * w;
    for oc in 0..out_ch {
        let dout_plane = &d_out[oc * hw..(oc + 1) * hw];
        d_b[oc] += vsum(dout_plane);
        for ic in 0..in_ch {
            let in_plane = &input[ic * hw..(ic + 1) * hw];
            let wbase = (oc * in_ch + ic) * KERNEL * KERNEL;
            for ky in 0..KERNEL {
                let (oy_lo, oy_hi) = tap_range(ky, h);
                for kx in 0..KERNEL {
                    let (ox_lo, ox_hi) = tap_range(kx, w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let ix_lo = ox_lo + kx - 1;
                    let ix_hi = ox_hi + kx - 1;
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - 1;
                        acc += dot(
                            &dout_plane[oy * w + ox_lo..oy * w + ox_hi],
                            &in_plane[iy * w + ix_lo..iy * w + ix_hi],
                        );
                    }
                    d_w[wbase + ky * KERNEL + kx] += acc;
                }
            }
        }
    }
}

fn leaky_forward(buf: &mut [f64]) {
    for v in buf.iter_mut() {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Scales gradients by the activation slope. The mask comes from the stored
/// post-activation values, whose sign matches the pre-activation sign.
fn leaky_backward(post: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(post.iter()) {
        if a <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// `argmax` records the absolute input index chosen per cell (first maximum
/// wins, so ties are deterministic).
fn maxpool2_forward(
    channels: usize,
    h: usize,
    w: usize,
    input: &[f64],
    output: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    let hw = h * w;
    for c in 0..channels {
        let in_plane = &input[c * hw..(c + 1) * hw];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let cells = [base, base + 1, base + w, base + w + 1];
                let mut best = cells[0];
                for &cell in &cells[1..] {
                    if in_plane[cell] > in_plane[best] {
                        best = cell;
                    }
                }
                let out_idx = c * oh * ow + oy * ow + ox;
                output[out_idx] = in_plane[best];
                argmax[out_idx] = (c * hw + best) as u32;
            }
        }
    }
}

fn maxpool2_backward(d_out: &[f64], argmax: &[u32], d_in: &mut [f64]) {
    for (g, &idx) in d_out.iter().zip(argmax.iter()) {
        d_in[idx as usize] += g;
    }
}
