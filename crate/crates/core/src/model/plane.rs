//! Channel-first feature maps and the convolution/upsampling primitives.

/// A `channels × h × w` tensor of activations.
#[derive(Debug, Clone)]
pub struct Plane {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }
}

/// 3×3 convolution with zero padding 1.
///
/// `weight` is laid out `[out_ch][in_ch][ky][kx]`. Stride 1 preserves the
/// spatial size; stride 2 halves it (inputs here always have even sides).
pub fn conv2d(input: &Plane, weight: &[f64], bias: &[f64], out_ch: usize, stride: usize) -> Plane {
    let in_ch = input.channels;
    debug_assert_eq!(weight.len(), out_ch * in_ch * 9);
    debug_assert_eq!(bias.len(), out_ch);
    let oh = input.h / stride;
    let ow = input.w / stride;
    let mut out = Plane::zeros(out_ch, oh, ow);
    for o in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..in_ch {
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= input.w as isize {
                                continue;
                            }
                            acc += weight[((o * in_ch + i) * 3 + ky) * 3 + kx]
                                * input.get(i, iy as usize, ix as usize);
                        }
                    }
                }
                let k = out.idx(o, oy, ox);

                out.data[k] = acc;
            }
        }
    }
    out
}

/// Reverse-mode of [`conv2d`]: gradients for the weights, biases and input.
pub fn conv2d_backward(
    d_out: &Plane,
    input: &Plane,
    weight: &[f64],
    stride: usize,
) -> (Vec<f64>, Vec<f64>, Plane) {
    let out_ch = d_out.channels;
    let in_ch = input.channels;
    let mut d_weight = vec![0.0; out_ch * in_ch * 9];
    let mut d_bias = vec![0.0; out_ch];
    let mut d_input = Plane::zeros(in_ch, input.h, input.w);
    for o in 0..out_ch {
        for oy in 0..d_out.h {
            for ox in 0..d_out.w {
                let g = d_out.get(o, oy, ox);
                if g == 0.0 {
                    continue;
                }
                d_bias[o] += g;
                for i in 0..in_ch {
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= input.w as isize {
                                continue;
                            }
                            let widx = ((o * in_ch + i) * 3 + ky) * 3 + kx;
                            d_weight[widx] += g * input.get(i, iy as usize, ix as usize);
                            let k = d_input.idx(i, iy as usize, ix as usize);

                            d_input.data[k] += g * weight[widx];
                        }
                    }
                }
            }
        }
    }
    (d_weight, d_bias, d_input)
}

pub fn relu(input: &Plane) -> Plane {
    let mut out = input.clone();
    for v in out.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// ReLU backward using the post-activation values as the mask.
pub fn relu_backward(d_out: &Plane, activated: &Plane) -> Plane {
    let mut d_in = d_out.clone();
    for (g, &a) in d_in.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    d_in
}

/// Per-axis bilinear interpolation table: for each destination index the two
/// source indices and the weight of the second one.
fn lerp_table(src: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let dst = src * factor;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (src - 1) as f64);
            let s0 = s.floor() as usize;
            let s1 = (s0 + 1).min(src - 1);
            (s0, s1, s - s0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor, channel-first output.
pub fn upsample(src: &Plane, factor: usize) -> Plane {
    let ty = lerp_table(src.h, factor);
    let tx = lerp_table(src.w, factor);
    let mut out = Plane::zeros(src.channels, src.h * factor, src.w * factor);
    for c in 0..src.channels {
        for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                let v = (1.0 - wy) * ((1.0 - wx) * src.get(c, y0, x0) + wx * src.get(c, y0, x1))
                    + wy * ((1.0 - wx) * src.get(c, y1, x0) + wx * src.get(c, y1, x1));
                let k = out.idx(c, y, x);

                out.data[k] = v;
            }
        }
    }
    out
}

/// Transpose of [`upsample`]: scatters full-resolution gradients back onto
/// the coarse grid.
pub fn upsample_backward(d_out: &Plane, src_h: usize, src_w: usize, factor: usize) -> Plane {
    let ty = lerp_table(src_h, factor);
    let tx = lerp_table(src_w, factor);
    let mut d_src = Plane::zeros(d_out.channels, src_h, src_w);
    for c in 0..d_out.channels {
        for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                let g = d_out.get(c, y, x);
                if g == 0.0 {
                    continue;
                }
                let k = d_src.idx(c, y0, x0);

                d_src.data[k] += g * (1.0 - wy) * (1.0 - wx);
                let k = d_src.idx(c, y0, x1);

                d_src.data[k] += g * (1.0 - wy) * wx;
                let k = d_src.idx(c, y1, x0);

                d_src.data[k] += g * wy * (1.0 - wx);
                let k = d_src.idx(c, y1, x1);

                d_src.data[k] += g * wy * wx;
            }
        }
    }
    d_src
}

/// Bilinear upsampling with channel-last output `(y, x, c)`, used for the
/// dense descriptor field so per-pixel descriptors are contiguous.
pub fn upsample_channel_last(src: &Plane, factor: usize) -> Vec<f64> {
    let ty = lerp_table(src.h, factor);
    let tx = lerp_table(src.w, factor);
    let (h, w, c_n) = (src.h * factor, src.w * factor, src.channels);
    let mut out = vec![0.0; h * w * c_n];
    for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
            let base = (y * w + x) * c_n;
            for c in 0..c_n {
                out[base + c] = (1.0 - wy)
                    * ((1.0 - wx) * src.get(c, y0, x0) + wx * src.get(c, y0, x1))
                    + wy * ((1.0 - wx) * src.get(c, y1, x0) + wx * src.get(c, y1, x1));
            }
        }
    }
    out
}

/// Transpose of [`upsample_channel_last`].
pub fn upsample_channel_last_backward(
    d_out: &[f64],
    channels: usize,
    src_h: usize,
    src_w: usize,
    factor: usize,
) -> Plane {
    let ty = lerp_table(src_h, factor);
    let tx = lerp_table(src_w, factor);
    let w_full = src_w * factor;
    let mut d_src = Plane::zeros(channels, src_h, src_w);
    for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
            let base = (y * w_full + x) * channels;
            for c in 0..channels {
                let g = d_out[base + c];
                if g == 0.0 {
                    continue;
                }
                let k = d_src.idx(c, y0, x0);

                d_src.data[k] += g * (1.0 - wy) * (1.0 - wx);
                let k = d_src.idx(c, y0, x1);

                d_src.data[k] += g * (1.0 - wy) * wx;
                let k = d_src.idx(c, y1, x0);

                d_src.data[k] += g * wy * (1.0 - wx);
                let k = d_src.idx(c, y1, x1);

                d_src.data[k] += g * wy * wx;
            }
        }
    }
    d_src
}
