//! Forward and backward kernels on flat row-major `f64` buffers.
//!
//! Backward functions accumulate (`+=`) into parameter gradients and
//! overwrite input gradients.

use crate::NeuralError;

/// Valid 1-D convolution along the slice axis with filters spanning the full width.
///
/// `x` is `s × d`, `w` is `f × h × d`, output is `(s − h + 1) × f`.
pub fn conv1d(
    x: &[f64],
    s: usize,
    d: usize,
    w: &[f64],
    b: &[f64],
    h: usize,
    f: usize,
) -> Result<Vec<f64>, NeuralError> {
    if h == 0 || h > s {
        return Err(NeuralError::Shape(format!("filter height {h} does not fit {s} slices")));
    }
    check_len("conv1d input", x.len(), s * d)?;
    check_len("conv1d weights", w.len(), f * h * d)?;
    check_len("conv1d bias", b.len(), f)?;
    let l = s - h + 1;
    let span = h * d;
    let mut out = vec![0.0; l * f];
    for t in 0..l {
        let window = &x[t * d..t * d + span];
        for k in 0..f {
            out[t * f + k] = b[k] + dot(window, &w[k * span..(k + 1) * span]);
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d`]; zero entries of `gout` are skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    s: usize,
    d: usize,
    w: &[f64],
    h: usize,
    f: usize,
    gout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    let l = s - h + 1;
    let span = h * d;
    if let Some(gx) = gx.as_deref_mut() {
        gx.fill(0.0);
    }
    for t in 0..l {
        let window = &x[t * d..t * d + span];
        for k in 0..f {
            let g = gout[t * f + k];
            if g == 0.0 {
                continue;
            }
            gb[k] += g;
            axpy(g, window, &mut gw[k * span..(k + 1) * span]);
            if let Some(gx) = gx.as_deref_mut() {
                axpy(g, &w[k * span..(k + 1) * span], &mut gx[t * d..t * d + span]);
            }
        }
    }
}

/// Maximum of each of the `f` channels of an `l × f` map, with the first maximizing position.
pub fn global_max(map: &[f64], l: usize, f: usize) -> Result<(Vec<f64>, Vec<usize>), NeuralError> {
    if l == 0 {
        return Err(NeuralError::Shape("max pooling over an empty map".into()));
    }
    check_len("pooled map", map.len(), l * f)?;
    let mut best = map[..f].to_vec();
    let mut arg = vec![0; f];
    for t in 1..l {
        for k in 0..f {
            let v = map[t * f + k];
            if v > best[k] {
                best[k] = v;
                arg[k] = t;
            }
        }
    }
    Ok((best, arg))
}

/// Valid 2-D cross-correlation. `x` is `c_in × h × w`, weights `c_out × c_in × k × k`,
/// output `c_out × (h − k + 1) × (w − k + 1)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    k: usize,
    c_out: usize,
) -> Result<Vec<f64>, NeuralError> {
    if k == 0 || k > h || k > w {
        return Err(NeuralError::Shape(format!("kernel {k}×{k} does not fit {h}×{w}")));
    }
    check_len("conv2d input", x.len(), c_in * h * w)?;
    check_len("conv2d weights", weights.len(), c_out * c_in * k * k)?;
    check_len("conv2d bias", bias.len(), c_out)?;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        plane.fill(bias[co]);
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let wv = weights[((co * c_in + ci) * k + ki) * k + kj];
                    for r in 0..oh {
                        let row = &src[(r + ki) * w + kj..(r + ki) * w + kj + ow];
                        axpy(wv, row, &mut plane[r * ow..(r + 1) * ow]);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    k: usize,
    c_out: usize,
    gout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    if let Some(gx) = gx.as_deref_mut() {
        gx.fill(0.0);
    }
    for co in 0..c_out {
        let g = &gout[co * oh * ow..(co + 1) * oh * ow];
        gb[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let widx = ((co * c_in + ci) * k + ki) * k + kj;
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let row = &src[(r + ki) * w + kj..(r + ki) * w + kj + ow];
                        acc += dot(row, &g[r * ow..(r + 1) * ow]);
                    }
                    gw[widx] += acc;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = weights[widx];
                        let dst = &mut gx[ci * h * w..(ci + 1) * h * w];
                        for r in 0..oh {
                            axpy(
                                wv,
                                &g[r * ow..(r + 1) * ow],
                                &mut dst[(r + ki) * w + kj..(r + ki) * w + kj + ow],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping `p × p` max pooling with floor division of the spatial size.
pub fn maxpool2d(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Result<(Vec<f64>, Vec<usize>), NeuralError> {
    let (oh, ow) = (h / p, w / p);
    if p == 0 || oh == 0 || ow == 0 {
        return Err(NeuralError::Shape(format!("pool {p}×{p} does not fit {h}×{w}")));
    }
    check_len("pool input", x.len(), c * h * w)?;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for i in 0..p {
                    for j in 0..p {
                        let idx = ch * h * w + (r * p + i) * w + col * p + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((out, arg))
}

/// Routes each output gradient to its pooled argmax position.
pub fn scatter_max(gout: &[f64], argmax: &[usize], gx: &mut [f64]) {
    gx.fill(0.0);
    for (&g, &i) in gout.iter().zip(argmax) {
        gx[i] += g;
    }
}

/// `y = W x + b` with `W` stored `n_out × n_in`.
pub fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + dot(&w[o * n_in..(o + 1) * n_in], x))
        .collect()
}

pub fn dense_backward(x: &[f64], w: &[f64], gout: &[f64], gw: &mut [f64], gb: &mut [f64], gx: Option<&mut [f64]>) {
    let n_in = x.len();
    for (o, &g) in gout.iter().enumerate() {
        gb[o] += g;
        if g != 0.0 {
            axpy(g, x, &mut gw[o * n_in..(o + 1) * n_in]);
        }
    }
    if let Some(gx) = gx {
        gx.fill(0.0);
        for (o, &g) in gout.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &w[o * n_in..(o + 1) * n_in], gx);
            }
        }
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_backward(x: &[f64], gout: &[f64], gx: &mut [f64]) {
    for ((g, &v), &go) in gx.iter_mut().zip(x).zip(gout) {
        *g = if v > 0.0 { go } else { 0.0 };
    }
}

/// Softmax over two logits, computed from their difference.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let z = logits[1] - logits[0];
    let p1 = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    [1.0 - p1, p1]
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), NeuralError> {
    if got != expected {
        return Err(NeuralError::Shape(format!(
            "{what}: expected {expected} values, got {got}"
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1d_examples() {
        let x = vec![0.0; 5 * 3];
        let w = vec![0.3; 2 * 2 * 3];
        assert!(conv1d(&x, 5, 3, &w, &[0.0, 0.0], 2, 2)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let ones = vec![1.0; 3];
        let out = conv1d(&x, 4, 3, &ones, &[0.0], 1, 1).unwrap();
        assert_eq!(out, vec![3.0, 12.0, 21.0, 30.0]);
        assert!(matches!(
            conv1d(&x, 4, 3, &ones, &[0.0], 5, 1),
            Err(NeuralError::Shape(_))
        ));
    }

    #[test]
    fn conv2d_examples() {
        let x: Vec<f64> = (0..2 * 4 * 4).map(|v| v as f64).collect();
        // 1×1 kernel selecting channel 1.
        let id = conv2d(&x, 2, 4, 4, &[0.0, 1.0], &[0.0], 1, 1).unwrap();
        assert_eq!(id, x[16..].to_vec());
        let c = vec![2.5; 5 * 5];
        let out = conv2d(&c, 1, 5, 5, &[1.0; 9], &[0.0], 3, 1).unwrap();
        assert_eq!(out, vec![22.5; 9]);
        assert!(conv2d(&c, 1, 5, 5, &[1.0; 36], &[0.0], 6, 1).is_err());
    }

    #[test]
    fn global_max_examples() {
        let (m, a) = global_max(&[1.0, 5.0, 3.0], 3, 1).unwrap();
        assert_eq!((m[0], a[0]), (5.0, 1));
        let (m, a) = global_max(&[2.0, 2.0, 2.0], 3, 1).unwrap();
        assert_eq!((m[0], a[0]), (2.0, 0));
        assert!(global_max(&[], 0, 1).is_err());
        let mut gx = vec![9.0; 3];
        scatter_max(&[1.0], &[1], &mut gx);
        assert_eq!(gx, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_floor_and_ties() {
        let x: Vec<f64> = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0];
        let (out, arg) = maxpool2d(&x, 1, 3, 4, 2).unwrap();
        // The third row is dropped by floor division.
        assert_eq!(out, vec![1.0, 0.0]);
        assert_eq!(arg, vec![0, 2]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax2([0.3, 0.3]), [0.5, 0.5]);
        let p = softmax2([0.0, 3f64.ln()]);
        assert!((p[1] - 0.75).abs() < 1e-15);
        let q = softmax2([4.0, -7.5]);
        assert!((q[0] + q[1] - 1.0).abs() < 1e-12);
        let r = softmax2([-7.5, 4.0]);
        assert!((q[0] - r[1]).abs() < 1e-15);
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, at: &[f64], analytic: &[f64]) {
        let h = 1e-6;
        let mut p = at.to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            let num = (up - down) / (2.0 * h);
            let err = (num - analytic[i]).abs();
            assert!(
                err <= 1e-4 * num.abs().max(analytic[i].abs()) || err < 1e-8,
                "index {i}: {num} vs {}",
                analytic[i]
            );
        }
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed * 40503) % 1000) as f64 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn conv1d_weight_gradient_matches_finite_differences() {
        let (s, d, h, f) = (6, 4, 3, 2);
        let x = pseudo(s * d, 1);
        let w = pseudo(f * h * d, 2);
        let b = [0.1, -0.2];
        let l = s - h + 1;
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 2];
        let mut gx = vec![0.0; x.len()];
        conv1d_backward(&x, s, d, &w, h, f, &vec![1.0; l * f], &mut gw, &mut gb, Some(&mut gx));
        fd_check(|w| conv1d(&x, s, d, w, &b, h, f).unwrap().iter().sum(), &w, &gw);
        fd_check(|x| conv1d(x, s, d, &w, &b, h, f).unwrap().iter().sum(), &x, &gx);
    }

    #[test]
    fn conv2d_gradient_matches_finite_differences() {
        let (c_in, h, w, k, c_out) = (2, 5, 6, 3, 2);
        let x = pseudo(c_in * h * w, 3);
        let wt = pseudo(c_out * c_in * k * k, 4);
        let b = [0.05, 0.3];
        let n_out = c_out * (h - k + 1) * (w - k + 1);
        let coeff = pseudo(n_out, 5);
        let loss = |x: &[f64], wt: &[f64]| -> f64 {
            conv2d(x, c_in, h, w, wt, &b, k, c_out)
                .unwrap()
                .iter()
                .zip(&coeff)
                .map(|(a, c)| a * c)
                .sum()
        };
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; 2];
        let mut gx = vec![0.0; x.len()];
        conv2d_backward(&x, c_in, h, w, &wt, k, c_out, &coeff, &mut gw, &mut gb, Some(&mut gx));
        fd_check(|p| loss(&x, p), &wt, &gw);
        fd_check(|p| loss(p, &wt), &x, &gx);
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        let x = pseudo(5, 6);
        let w = pseudo(15, 7);
        let b = pseudo(3, 8);
        let coeff = [0.7, -1.1, 0.4];
        let loss = |x: &[f64], w: &[f64]| -> f64 { dense(x, w, &b).iter().zip(&coeff).map(|(a, c)| a * c).sum() };
        let mut gw = vec![0.0; 15];
        let mut gb = vec![0.0; 3];
        let mut gx = vec![0.0; 5];
        dense_backward(&x, &w, &coeff, &mut gw, &mut gb, Some(&mut gx));
        fd_check(|p| loss(&x, p), &w, &gw);
        fd_check(|p| loss(p, &w), &x, &gx);
        assert_eq!(gb, coeff.to_vec());
    }
}
