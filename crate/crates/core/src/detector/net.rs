//! Forward and backward passes of the grid detector network.
//!
//! Architecture: two 3x3 stride-2 convolutions (padding 1, ReLU) from 3 input
//! channels to `F` features, followed by a per-cell linear head emitting
//! `C + 1` category logits (index `C` is background) and 4 box deltas. All
//! activations are channel-last so the innermost channel loops are contiguous.

use crate::error::{Error, Result};
use crate::image::Image;

use super::{DetectorConfig, ModelParams};

pub(super) const KERNEL: usize = 3;
pub(super) const IN_CHANNELS: usize = 3;

/// Parameter-vector layout offsets for a configuration.
#[derive(Debug, Clone, Copy)]
pub(super) struct Layout {
    pub conv1_w: usize,
    pub conv1_b: usize,
    pub conv2_w: usize,
    pub conv2_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn of(cfg: &DetectorConfig) -> Layout {
        let f = cfg.features;
        let head_dim = cfg.head_dim();
        let conv1_w = 0;
        let conv1_b = conv1_w + f * KERNEL * KERNEL * IN_CHANNELS;
        let conv2_w = conv1_b + f;
        let conv2_b = conv2_w + f * KERNEL * KERNEL * f;
        let head_w = conv2_b + f;
        let head_b = head_w + head_dim * f;
        let total = head_b + head_dim;
        Layout {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            head_w,
            head_b,
            total,
        }
    }
}

/// Cached activations of one forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub(super) in_h: usize,
    pub(super) in_w: usize,
    pub(super) mid_h: usize,
    pub(super) mid_w: usize,
    pub(super) grid_h: usize,
    pub(super) grid_w: usize,
    /// Input image as channel-last f64.
    pub(super) input: Vec<f64>,
    /// Conv1 pre-activation and ReLU output, (mid_h, mid_w, F).
    pub(super) z1: Vec<f64>,
    pub(super) a1: Vec<f64>,
    /// Conv2 pre-activation and ReLU output, (grid_h, grid_w, F).
    pub(super) z2: Vec<f64>,
    pub(super) a2: Vec<f64>,
    /// Head output, (grid_h, grid_w, C + 5).
    pub(super) head: Vec<f64>,
}

impl ForwardPass {
    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn proposal_count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub(super) fn head_slice(&self, index: usize, head_dim: usize) -> &[f64] {
        &self.head[index * head_dim..(index + 1) * head_dim]
    }
}

/// Runs the network on an image of any size divisible by the downsampling
/// factor. Callers that require the configured size must check it themselves.
pub(super) fn forward_any(
    cfg: &DetectorConfig,
    params: &ModelParams,
    image: &Image,
) -> Result<ForwardPass> {
    let (in_h, in_w) = (image.height(), image.width());
    if in_h % 4 != 0 || in_w % 4 != 0 || in_h < 4 || in_w < 4 {
        return Err(Error::ShapeMismatch {
            expected: "image dims divisible by 4".into(),
            got: format!("{in_h}x{in_w}"),
        });
    }
    let f = cfg.features;
    let head_dim = cfg.head_dim();
    let layout = Layout::of(cfg);
    let p = params.values();

    let input: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let (mid_h, mid_w) = (in_h / 2, in_w / 2);
    let (grid_h, grid_w) = (mid_h / 2, mid_w / 2);

    let mut z1 = vec![0.0; mid_h * mid_w * f];
    conv_forward(
        &input,
        in_h,
        in_w,
        IN_CHANNELS,
        &p[layout.conv1_w..layout.conv1_b],
        &p[layout.conv1_b..layout.conv2_w],
        f,
        &mut z1,
    );
    let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();

    let mut z2 = vec![0.0; grid_h * grid_w * f];
    conv_forward(
        &a1,
        mid_h,
        mid_w,
        f,
        &p[layout.conv2_w..layout.conv2_b],
        &p[layout.conv2_b..layout.head_w],
        f,
        &mut z2,
    );
    let a2: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();

    let mut head = vec![0.0; grid_h * grid_w * head_dim];
    let head_w = &p[layout.head_w..layout.head_b];
    let head_b = &p[layout.head_b..layout.total];
    for cell in 0..grid_h * grid_w {
        let feat = &a2[cell * f..(cell + 1) * f];
        let out = &mut head[cell * head_dim..(cell + 1) * head_dim];
        for (o, slot) in out.iter_mut().enumerate() {
            let w = &head_w[o * f..(o + 1) * f];
            let mut acc = head_b[o];
            for (wf, xf) in w.iter().zip(feat) {
                acc += wf * xf;
            }
            *slot = acc;
        }
    }

    Ok(ForwardPass {
        in_h,
        in_w,
        mid_h,
        mid_w,
        grid_h,
        grid_w,
        input,
        z1,
        a1,
        z2,
        a2,
        head,
    })
}

/// 3x3 stride-2 pad-1 convolution, channel-last activations, weight layout
/// (out, ky, kx, in).
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_h: usize,
    in_w: usize,
    in_c: usize,
    weights: &[f64],
    bias: &[f64],
    out_c: usize,
    output: &mut [f64],
) {
    let out_h = in_h / 2;
    let out_w = in_w / 2;
    for oy in 0..out_h {
        for ox in 0..out_w {
            let out_cell = &mut output[(oy * out_w + ox) * out_c..(oy * out_w + ox + 1) * out_c];
            out_cell.copy_from_slice(bias);
            for ky in 0..KERNEL {
                let iy = (oy * 2 + ky) as isize - 1;
                if iy < 0 || iy as usize >= in_h {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = (ox * 2 + kx) as isize - 1;
                    if ix < 0 || ix as usize >= in_w {
                        continue;
                    }
                    let in_cell = &input[(iy as usize * in_w + ix as usize) * in_c..];
                    for (oc, slot) in out_cell.iter_mut().enumerate() {
                        let w = &weights[((oc * KERNEL + ky) * KERNEL + kx) * in_c..];
                        let mut acc = 0.0;
                        for ic in 0..in_c {
                            acc += w[ic] * in_cell[ic];
                        }
                        *slot += acc;
                    }
                }
            }
        }
    }
}

/// Backpropagates head gradients through the network, returning the gradient
/// of the loss with respect to every parameter.
pub(super) fn backward(
    cfg: &DetectorConfig,
    params: &ModelParams,
    pass: &ForwardPass,
    d_head: &[f64],
) -> Result<Vec<f64>> {
    let f = cfg.features;
    let head_dim = cfg.head_dim();
    let layout = Layout::of(cfg);
    let p = params.values();
    let mut grad = vec![0.0; layout.total];

    // Head (per-cell linear).
    let cells = pass.grid_h * pass.grid_w;
    let mut d_a2 = vec![0.0; pass.a2.len()];
    {
        let head_w = &p[layout.head_w..layout.head_b];
        let (g_head_w, g_after) = grad[layout.head_w..].split_at_mut(head_dim * f);
        let g_head_b = &mut g_after[..head_dim];
        for cell in 0..cells {
            let feat = &pass.a2[cell * f..(cell + 1) * f];
            let dh = &d_head[cell * head_dim..(cell + 1) * head_dim];
            let da = &mut d_a2[cell * f..(cell + 1) * f];
            for (o, &g) in dh.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                g_head_b[o] += g;
                let w = &head_w[o * f..(o + 1) * f];
                let gw = &mut g_head_w[o * f..(o + 1) * f];
                for i in 0..f {
                    gw[i] += g * feat[i];
                    da[i] += g * w[i];
                }
            }
        }
    }

    // ReLU after conv2.
    for (d, &z) in d_a2.iter_mut().zip(&pass.z2) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }

    // Conv2.
    let mut d_a1 = vec![0.0; pass.a1.len()];
    conv_backward(
        &pass.a1,
        pass.mid_h,
        pass.mid_w,
        f,
        &p[layout.conv2_w..layout.conv2_b],
        f,
        &d_a2,
        &mut grad[layout.conv2_w..layout.head_w],
        Some(&mut d_a1),
    );

    // ReLU after conv1.
    for (d, &z) in d_a1.iter_mut().zip(&pass.z1) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }

    // Conv1 (input gradients not needed).
    conv_backward(
        &pass.input,
        pass.in_h,
        pass.in_w,
        IN_CHANNELS,
        &p[layout.conv1_w..layout.conv1_b],
        f,
        &d_a1,
        &mut grad[layout.conv1_w..layout.conv2_w],
        None,
    );

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Format("non-finite gradient".into()));
    }
    Ok(grad)
}

/// Gradients of a stride-2 pad-1 conv: weight and bias grads are accumulated
/// into `g_params` (weights first, then bias), input grads into `d_input`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_h: usize,
    in_w: usize,
    in_c: usize,
    weights: &[f64],
    out_c: usize,
    d_output: &[f64],
    g_params: &mut [f64],
    mut d_input: Option<&mut Vec<f64>>,
) {
    let out_h = in_h / 2;
    let out_w = in_w / 2;
    let w_len = out_c * KERNEL * KERNEL * in_c;
    let (g_w, g_b) = g_params.split_at_mut(w_len);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let dout = &d_output[(oy * out_w + ox) * out_c..(oy * out_w + ox + 1) * out_c];
            for (oc, &g) in dout.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                g_b[oc] += g;
            }
            for ky in 0..KERNEL {
                let iy = (oy * 2 + ky) as isize - 1;
                if iy < 0 || iy as usize >= in_h {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = (ox * 2 + kx) as isize - 1;
                    if ix < 0 || ix as usize >= in_w {
                        continue;
                    }
                    let in_off = (iy as usize * in_w + ix as usize) * in_c;
                    let in_cell = &input[in_off..in_off + in_c];
                    for (oc, &g) in dout.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let w_off = ((oc * KERNEL + ky) * KERNEL + kx) * in_c;
                        let gw = &mut g_w[w_off..w_off + in_c];
                        for ic in 0..in_c {
                            gw[ic] += g * in_cell[ic];
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            let w = &weights[w_off..w_off + in_c];
                            let di_cell = &mut di[in_off..in_off + in_c];
                            for ic in 0..in_c {
                                di_cell[ic] += g * w[ic];
                            }
                        }
                    }
                }
            }
        }
    }
}
