//! Zero-padded "same" 2-D convolution (cross-correlation) on planar buffers.
//!
//! Buffers are `channels × h × w`, row-major per channel. Weights are
//! `(out, in, k, k)`. Every routine here is the exact transpose or parameter
//! derivative of `forward`, with no approximation.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.k + ky) * self.k + kx
    }
}

/// Valid index ranges `[lo, hi)` of `y` such that `0 <= y + d < n`.
#[inline]
fn valid(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// `dst[y, x] += weight * src[y + dy, x + dx]` over in-bounds positions.
#[inline]
fn accumulate_shifted(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, weight: f64) {
    let (y0, y1) = valid(h, dy);
    let (x0, x1) = valid(w, dx);
    if x0 >= x1 {
        return;
    }
    let len = x1 - x0;
    for y in y0..y1 {
        let d = y * w + x0;
        let s = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
        let dst_row = &mut dst[d..d + len];
        let src_row = &src[s..s + len];
        for (a, b) in dst_row.iter_mut().zip(src_row) {
            *a += weight * b;
        }
    }
}

/// `Σ a[y, x] * b[y + dy, x + dx]` over in-bounds positions.
#[inline]
fn dot_shifted(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (y0, y1) = valid(h, dy);
    let (x0, x1) = valid(w, dx);
    if x0 >= x1 {
        return 0.0;
    }
    let len = x1 - x0;
    let mut acc = 0.0;
    for y in y0..y1 {
        let ia = y * w + x0;
        let ib = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
        acc += a[ia..ia + len]
            .iter()
            .zip(&b[ib..ib + len])
            .map(|(p, q)| p * q)
            .sum::<f64>();
    }
    acc
}

/// `out[o] = bias[o] + Σ_i W[o, i] ⋆ input[i]`.
pub(crate) fn forward(shape: ConvShape, input: &[f64], weights: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let n = shape.plane();
    let p = shape.pad();
    debug_assert_eq!(input.len(), shape.in_ch * n);
    let mut out = vec![0.0; shape.out_ch * n];
    for (o, out_plane) in out.chunks_exact_mut(n).enumerate() {
        if let Some(b) = bias {
            out_plane.iter_mut().for_each(|v| *v = b[o]);
        }
        for (i, in_plane) in input.chunks_exact(n).enumerate() {
            for ky in 0..shape.k {
                for kx in 0..shape.k {
                    let wgt = weights[shape.weight_index(o, i, ky, kx)];
                    if wgt != 0.0 {
                        accumulate_shifted(
                            out_plane,
                            in_plane,
                            shape.h,
                            shape.w,
                            ky as isize - p,
                            kx as isize - p,
                            wgt,
                        );
                    }
                }
            }
        }
    }
    out
}

/// Transpose of the (bias-free) convolution: maps output-space gradients to input space.
pub(crate) fn transpose(shape: ConvShape, grad_out: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = shape.plane();
    let p = shape.pad();
    debug_assert_eq!(grad_out.len(), shape.out_ch * n);
    let mut grad_in = vec![0.0; shape.in_ch * n];
    for (i, in_plane) in grad_in.chunks_exact_mut(n).enumerate() {
        for (o, out_plane) in grad_out.chunks_exact(n).enumerate() {
            for ky in 0..shape.k {
                for kx in 0..shape.k {
                    let wgt = weights[shape.weight_index(o, i, ky, kx)];
                    if wgt != 0.0 {
                        accumulate_shifted(
                            in_plane,
                            out_plane,
                            shape.h,
                            shape.w,
                            p - ky as isize,
                            p - kx as isize,
                            wgt,
                        );
                    }
                }
            }
        }
    }
    grad_in
}

/// Accumulates `∂⟨grad_out, conv(input)⟩/∂W` into `grad_w` and the bias derivative into `grad_b`.
pub(crate) fn param_grad(
    shape: ConvShape,
    input: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let n = shape.plane();
    let p = shape.pad();
    for (o, out_plane) in grad_out.chunks_exact(n).enumerate() {
        grad_b[o] += out_plane.iter().sum::<f64>();
        for (i, in_plane) in input.chunks_exact(n).enumerate() {
            for ky in 0..shape.k {
                for kx in 0..shape.k {
                    grad_w[shape.weight_index(o, i, ky, kx)] += dot_shifted(
                        out_plane,
                        in_plane,
                        shape.h,
                        shape.w,
                        ky as isize - p,
                        kx as isize - p,
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }

    fn naive_forward(s: ConvShape, input: &[f64], wts: &[f64]) -> Vec<f64> {
        let p = s.pad();
        let mut out = vec![0.0; s.out_ch * s.h * s.w];
        for o in 0..s.out_ch {
            for y in 0..s.h as isize {
                for x in 0..s.w as isize {
                    let mut acc = 0.0;
                    for i in 0..s.in_ch {
                        for ky in 0..s.k {
                            for kx in 0..s.k {
                                let yy = y + ky as isize - p;
                                let xx = x + kx as isize - p;
                                if yy >= 0 && xx >= 0 && yy < s.h as isize && xx < s.w as isize {
                                    acc += wts[s.weight_index(o, i, ky, kx)]
                                        * input[(i * s.h + yy as usize) * s.w + xx as usize];
                                }
                            }
                        }
                    }
                    out[(o * s.h + y as usize) * s.w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loops() {
        let s = ConvShape { in_ch: 2, out_ch: 3, k: 3, h: 5, w: 4 };
        let mut seed = 7;
        let input: Vec<f64> = (0..s.in_ch * 20).map(|_| lcg(&mut seed)).collect();
        let wts: Vec<f64> = (0..s.out_ch * s.in_ch * 9).map(|_| lcg(&mut seed)).collect();
        let fast = forward(s, &input, &wts, None);
        let slow = naive_forward(s, &input, &wts);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let s = ConvShape { in_ch: 3, out_ch: 2, k: 5, h: 6, w: 7 };
        let mut seed = 11;
        let u: Vec<f64> = (0..s.in_ch * 42).map(|_| lcg(&mut seed)).collect();
        let v: Vec<f64> = (0..s.out_ch * 42).map(|_| lcg(&mut seed)).collect();
        let wts: Vec<f64> = (0..s.out_ch * s.in_ch * 25).map(|_| lcg(&mut seed)).collect();
        let cu = forward(s, &u, &wts, None);
        let ctv = transpose(s, &v, &wts);
        let lhs: f64 = cu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&ctv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn weight_gradient_is_linear_in_weights() {
        // ⟨v, conv_W(u)⟩ is linear in W, so its gradient dotted with W reproduces it.
        let s = ConvShape { in_ch: 2, out_ch: 2, k: 3, h: 4, w: 4 };
        let mut seed = 3;
        let u: Vec<f64> = (0..32).map(|_| lcg(&mut seed)).collect();
        let v: Vec<f64> = (0..32).map(|_| lcg(&mut seed)).collect();
        let wts: Vec<f64> = (0..36).map(|_| lcg(&mut seed)).collect();
        let mut gw = vec![0.0; 36];
        let mut gb = vec![0.0; 2];
        param_grad(s, &u, &v, &mut gw, &mut gb);
        let value: f64 = forward(s, &u, &wts, None).iter().zip(&v).map(|(a, b)| a * b).sum();
        let via_grad: f64 = gw.iter().zip(&wts).map(|(a, b)| a * b).sum();
        assert!((value - via_grad).abs() < 1e-12);
        assert!((gb[0] - v[..16].iter().sum::<f64>()).abs() < 1e-14);
    }
}
