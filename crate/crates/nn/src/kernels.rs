//! Array kernels shared by the tape ops and by frozen (no-grad) modules.
//!
//! Feature maps are `(C, H, W)`; conv weights are `(Cout, Cin, kh, kw)`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4};

/// Output spatial size of a convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

fn im2col(
    x: &ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (Array2<f64>, usize, usize) {
    let (c, h, w) = x.dim();
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut cols = Array2::zeros((c * kh * kw, ho * wo));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[(row, oy * wo + ox)] = x[(ci, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

fn col2im(
    cols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut x = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[(ci, iy as usize, ix as usize)] += cols[(row, oy * wo + ox)];
                    }
                }
            }
        }
    }
    x
}

/// Convolution forward. Bias is handled by a separate channel-bias op.
pub fn conv2d(x: &ArrayView3<f64>, w: &ArrayView4<f64>, stride: usize, pad: usize) -> Array3<f64> {
    let (cout, cin, kh, kw) = w.dim();
    assert_eq!(cin, x.dim().0, "conv2d channel mismatch");
    let (cols, ho, wo) = im2col(x, kh, kw, stride, pad);
    let w_mat = w
        .to_shape((cout, cin * kh * kw))
        .expect("conv weight reshapes");
    let out = w_mat.dot(&cols);
    out.into_shape_with_order((cout, ho, wo)).unwrap()
}

/// Gradient of conv2d w.r.t. its input.
pub fn conv2d_backward_input(
    grad_out: &ArrayView3<f64>,
    w: &ArrayView4<f64>,
    in_h: usize,
    in_w: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let (cout, cin, kh, kw) = w.dim();
    let (go_c, ho, wo) = grad_out.dim();
    assert_eq!(go_c, cout);
    let g_mat = grad_out
        .to_shape((cout, ho * wo))
        .expect("grad reshapes")
        .to_owned();
    let w_mat = w
        .to_shape((cout, cin * kh * kw))
        .expect("conv weight reshapes")
        .to_owned();
    let dcols = w_mat.t().dot(&g_mat);
    col2im(&dcols, cin, in_h, in_w, kh, kw, stride, pad)
}

/// Gradient of conv2d w.r.t. its weight.
pub fn conv2d_backward_weight(
    grad_out: &ArrayView3<f64>,
    x: &ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (cin, _, _) = x.dim();
    let (cout, ho, wo) = grad_out.dim();
    let (cols, ch, cw) = im2col(x, kh, kw, stride, pad);
    assert_eq!((ch, cw), (ho, wo), "conv grad spatial mismatch");
    let g_mat = grad_out
        .to_shape((cout, ho * wo))
        .expect("grad reshapes")
        .to_owned();
    let dw_mat = g_mat.dot(&cols.t());
    dw_mat.into_shape_with_order((cout, cin, kh, kw)).unwrap()
}

/// Per-group statistics cached at forward time.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Group normalization with per-channel affine parameters.
pub fn group_norm(
    x: &ArrayView3<f64>,
    groups: usize,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    eps: f64,
) -> (Array3<f64>, GroupNormCache) {
    let (c, h, w) = x.dim();
    assert!(c % groups == 0, "channels {c} not divisible by groups {groups}");
    let gs = c / groups;
    let n = (gs * h * w) as f64;
    let mut out = Array3::zeros((c, h, w));
    let mut cache = GroupNormCache {
        mean: Vec::with_capacity(groups),
        inv_std: Vec::with_capacity(groups),
    };
    for g in 0..groups {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for ci in g * gs..(g + 1) * gs {
            for y in 0..h {
                for xw in 0..w {
                    let v = x[(ci, y, xw)];
                    sum += v;
                    sq += v * v;
                }
            }
        }
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        let inv_std = 1.0 / (var + eps).sqrt();
        cache.mean.push(mean);
        cache.inv_std.push(inv_std);
        for ci in g * gs..(g + 1) * gs {
            let (ga, be) = (gamma[ci], beta[ci]);
            for y in 0..h {
                for xw in 0..w {
                    out[(ci, y, xw)] = ga * (x[(ci, y, xw)] - mean) * inv_std + be;
                }
            }
        }
    }
    (out, cache)
}

/// Backward pass of [`group_norm`]: returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(
    grad_out: &ArrayView3<f64>,
    x: &ArrayView3<f64>,
    groups: usize,
    gamma: &Array1<f64>,
    cache: &GroupNormCache,
) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
    let (c, h, w) = x.dim();
    let gs = c / groups;
    let n = (gs * h * w) as f64;
    let mut dx = Array3::zeros((c, h, w));
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for g in 0..groups {
        let mean = cache.mean[g];
        let inv_std = cache.inv_std[g];
        // dxhat = grad * gamma; accumulate the two reduction terms.
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for ci in g * gs..(g + 1) * gs {
            for y in 0..h {
                for xw in 0..w {
                    let go = grad_out[(ci, y, xw)];
                    let xhat = (x[(ci, y, xw)] - mean) * inv_std;
                    dgamma[ci] += go * xhat;
                    dbeta[ci] += go;
                    let dxhat = go * gamma[ci];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
        }
        for ci in g * gs..(g + 1) * gs {
            for y in 0..h {
                for xw in 0..w {
                    let go = grad_out[(ci, y, xw)];
                    let xhat = (x[(ci, y, xw)] - mean) * inv_std;
                    let dxhat = go * gamma[ci];
                    dx[(ci, y, xw)] =
                        inv_std * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x nearest-neighbor upsampling.
pub fn upsample_nearest2(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for y in 0..h {
            for xw in 0..w {
                let v = x[(ci, y, xw)];
                out[(ci, 2 * y, 2 * xw)] = v;
                out[(ci, 2 * y, 2 * xw + 1)] = v;
                out[(ci, 2 * y + 1, 2 * xw)] = v;
                out[(ci, 2 * y + 1, 2 * xw + 1)] = v;
            }
        }
    }
    out
}

/// Backward of 2x nearest upsampling: sums each 2x2 block.
pub fn upsample_nearest2_backward(grad_out: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h2, w2) = grad_out.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for xw in 0..w {
                dx[(ci, y, xw)] = grad_out[(ci, 2 * y, 2 * xw)]
                    + grad_out[(ci, 2 * y, 2 * xw + 1)]
                    + grad_out[(ci, 2 * y + 1, 2 * xw)]
                    + grad_out[(ci, 2 * y + 1, 2 * xw + 1)];
            }
        }
    }
    dx
}

// Bilinear sample positions and weights for one point, or None when the
// point falls outside the feature map entirely.
fn bilinear_coeffs(
    y: f64,
    x: f64,
    h: usize,
    w: usize,
) -> Option<([(usize, usize); 4], [f64; 4])> {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return None;
    }
    let y = y.clamp(0.0, h as f64 - 1.0);
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    let weights = [
        (1.0 - ly) * (1.0 - lx),
        (1.0 - ly) * lx,
        ly * (1.0 - lx),
        ly * lx,
    ];
    Some(([(y0, x0), (y0, x1), (y1, x0), (y1, x1)], weights))
}

/// ROI align with one bilinear sample per bin center.
///
/// `rois` are image-coordinate xyxy boxes; `spatial_scale` maps image to
/// feature coordinates. Output is `(num_rois, C * pool * pool)`.
pub fn roi_align(
    feat: &ArrayView3<f64>,
    rois: &[[f64; 4]],
    spatial_scale: f64,
    pool: usize,
) -> Array2<f64> {
    let (c, h, w) = feat.dim();
    let mut out = Array2::zeros((rois.len(), c * pool * pool));
    for (r, roi) in rois.iter().enumerate() {
        let fx1 = roi[0] * spatial_scale;
        let fy1 = roi[1] * spatial_scale;
        let fx2 = roi[2] * spatial_scale;
        let fy2 = roi[3] * spatial_scale;
        let bw = (fx2 - fx1).max(1e-6) / pool as f64;
        let bh = (fy2 - fy1).max(1e-6) / pool as f64;
        for py in 0..pool {
            for px in 0..pool {
                let sy = fy1 + (py as f64 + 0.5) * bh;
                let sx = fx1 + (px as f64 + 0.5) * bw;
                if let Some((pos, wts)) = bilinear_coeffs(sy, sx, h, w) {
                    for ci in 0..c {
                        let mut v = 0.0;
                        for k in 0..4 {
                            v += wts[k] * feat[(ci, pos[k].0, pos[k].1)];
                        }
                        out[(r, (ci * pool + py) * pool + px)] = v;
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`roi_align`] w.r.t. the feature map.
pub fn roi_align_backward(
    grad_out: &ArrayView2<f64>,
    c: usize,
    h: usize,
    w: usize,
    rois: &[[f64; 4]],
    spatial_scale: f64,
    pool: usize,
) -> Array3<f64> {
    let mut dx = Array3::zeros((c, h, w));
    for (r, roi) in rois.iter().enumerate() {
        let fx1 = roi[0] * spatial_scale;
        let fy1 = roi[1] * spatial_scale;
        let fx2 = roi[2] * spatial_scale;
        let fy2 = roi[3] * spatial_scale;
        let bw = (fx2 - fx1).max(1e-6) / pool as f64;
        let bh = (fy2 - fy1).max(1e-6) / pool as f64;
        for py in 0..pool {
            for px in 0..pool {
                let sy = fy1 + (py as f64 + 0.5) * bh;
                let sx = fx1 + (px as f64 + 0.5) * bw;
                if let Some((pos, wts)) = bilinear_coeffs(sy, sx, h, w) {
                    for ci in 0..c {
                        let g = grad_out[(r, (ci * pool + py) * pool + px)];
                        for k in 0..4 {
                            dx[(ci, pos[k].0, pos[k].1)] += wts[k] * g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn conv_identity_kernel() {
        let x = Array3::from_shape_fn((1, 4, 4), |(_, y, xw)| (y * 4 + xw) as f64);
        let mut w = Array4::zeros((1, 1, 3, 3));
        w[(0, 0, 1, 1)] = 1.0;
        let y = conv2d(&x.view(), &w.view(), 1, 1);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_stride_two_shape() {
        let x = Array3::zeros((3, 8, 8));
        let w = Array4::zeros((5, 3, 3, 3));
        let y = conv2d(&x.view(), &w.view(), 2, 1);
        assert_eq!(y.dim(), (5, 4, 4));
    }

    #[test]
    fn group_norm_normalizes() {
        let x = Array3::from_shape_fn((4, 3, 3), |(c, y, xw)| (c * 9 + y * 3 + xw) as f64);
        let gamma = arr1(&[1.0, 1.0, 1.0, 1.0]);
        let beta = arr1(&[0.0; 4]);
        let (y, _) = group_norm(&x.view(), 2, &gamma, &beta, 1e-5);
        // each group (2 channels x 9 px) should be ~zero-mean, unit-var
        let g0: Vec<f64> = y
            .slice(ndarray::s![0..2, .., ..])
            .iter()
            .cloned()
            .collect();
        let mean: f64 = g0.iter().sum::<f64>() / g0.len() as f64;
        let var: f64 = g0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / g0.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn upsample_then_backward_is_block_sum() {
        let x = Array3::from_shape_fn((1, 2, 2), |(_, y, xw)| (y * 2 + xw) as f64);
        let up = upsample_nearest2(&x.view());
        assert_eq!(up.dim(), (1, 4, 4));
        assert_eq!(up[(0, 0, 0)], up[(0, 1, 1)]);
        let back = upsample_nearest2_backward(&up.view());
        assert_eq!(back[(0, 1, 1)], 4.0 * x[(0, 1, 1)]);
    }

    #[test]
    fn roi_align_center_of_constant_map() {
        let feat = Array3::from_elem((2, 8, 8), 3.0);
        let out = roi_align(&feat.view(), &[[0.0, 0.0, 32.0, 32.0]], 0.25, 2);
        assert_eq!(out.dim(), (1, 2 * 2 * 2));
        for &v in out.iter() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = ndarray::arr2(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        let p = softmax_rows(&x.view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
