//! CPU kernels for the UNet: forward and backward passes over single-sample
//! `C×H×W` tensors. Matrix products go through `matrixmultiply::sgemm`,
//! which is single-threaded and therefore bit-reproducible.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Inverse of [`Tensor::concat`] for gradients.
    pub fn split(self, first_c: usize) -> (Tensor, Tensor) {
        let cut = first_c * self.hw();
        let mut data = self.data;
        let rest = data.split_off(cut);
        (
            Tensor {
                c: first_c,
                h: self.h,
                w: self.w,
                data,
            },
            Tensor {
                c: self.c - first_c,
                h: self.h,
                w: self.w,
                data: rest,
            },
        )
    }
}

/// `C = A·B + beta·C` with arbitrary strides on A and B; C is row-major `m×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    // SAFETY: strides describe matrices that lie within the given slices
    // (checked by the callers' shapes); `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `k×k` patches (zero padding `pad`) into a `(C·k·k) × (H·W)` matrix.
fn im2col(x: &Tensor, k: usize, pad: usize) -> Vec<f32> {
    let (h, w) = (x.h as isize, x.w as isize);
    let hw = x.hw();
    let mut col = vec![0.0; x.c * k * k * hw];
    for ci in 0..x.c {
        let plane = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x_lo = (-dx).max(0);
                    let x_hi = (w - dx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let d0 = (y * w + x_lo) as usize;
                    let s0 = (sy * w + x_lo + dx) as usize;
                    let len = (x_hi - x_lo) as usize;
                    dst[d0..d0 + len].copy_from_slice(&plane[s0..s0 + len]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Tensor {
    let hw = h * w;
    let (hi, wi) = (h as isize, w as isize);
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                for y in 0..hi {
                    let sy = y + dy;
                    if sy < 0 || sy >= hi {
                        continue;
                    }
                    let x_lo = (-dx).max(0);
                    let x_hi = (wi - dx).min(wi);
                    for x in x_lo..x_hi {
                        plane[(sy * wi + x + dx) as usize] += src[(y * wi + x) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Shape and parameter offsets of a same-padded `k×k` convolution.
/// Weights are `cout × (cin·k·k)` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv {
    pub fn n_weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn patches(&self, x: &Tensor) -> std::borrow::Cow<'_, [f32]> {
        if self.k == 1 {
            std::borrow::Cow::Owned(x.data.clone())
        } else {
            std::borrow::Cow::Owned(im2col(x, self.k, self.k / 2))
        }
    }

    pub fn forward(&self, params: &[f32], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.cin);
        let hw = x.hw();
        let ckk = self.cin * self.k * self.k;
        let weights = &params[self.w_off..self.w_off + self.n_weights()];
        let bias = &params[self.b_off..self.b_off + self.cout];
        let mut out = Tensor::zeros(self.cout, x.h, x.w);
        for (co, b) in bias.iter().enumerate() {
            out.data[co * hw..(co + 1) * hw].fill(*b);
        }
        let col = self.patches(x);
        gemm(
            self.cout,
            ckk,
            hw,
            weights,
            ckk as isize,
            1,
            &col,
            hw as isize,
            1,
            1.0,
            &mut out.data,
        );
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(&self, params: &[f32], x: &Tensor, gout: &Tensor, grads: &mut [f32]) -> Tensor {
        let hw = x.hw();
        let ckk = self.cin * self.k * self.k;
        let col = self.patches(x);
        {
            let gw = &mut grads[self.w_off..self.w_off + self.n_weights()];
            gemm(
                self.cout,
                hw,
                ckk,
                &gout.data,
                hw as isize,
                1,
                &col,
                1,
                hw as isize,
                1.0,
                gw,
            );
        }
        {
            let gb = &mut grads[self.b_off..self.b_off + self.cout];
            for (co, g) in gb.iter_mut().enumerate() {
                *g += gout.data[co * hw..(co + 1) * hw].iter().sum::<f32>();
            }
        }
        let weights = &params[self.w_off..self.w_off + self.n_weights()];
        let mut gcol = vec![0.0; ckk * hw];
        gemm(
            ckk,
            self.cout,
            hw,
            weights,
            1,
            ckk as isize,
            &gout.data,
            hw as isize,
            1,
            0.0,
            &mut gcol,
        );
        if self.k == 1 {
            Tensor {
                c: self.cin,
                h: x.h,
                w: x.w,
                data: gcol,
            }
        } else {
            col2im(&gcol, self.cin, x.h, x.w, self.k, self.k / 2)
        }
    }
}

/// 2×2 stride-2 transposed convolution. Weights are `(cout·4) × cin`
/// row-major, row index `co·4 + dy·2 + dx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpConv {
    pub cin: usize,
    pub cout: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl UpConv {
    pub fn n_weights(&self) -> usize {
        self.cout * 4 * self.cin
    }

    pub fn forward(&self, params: &[f32], x: &Tensor) -> Tensor {
        let hw = x.hw();
        let rows = self.cout * 4;
        let weights = &params[self.w_off..self.w_off + self.n_weights()];
        let bias = &params[self.b_off..self.b_off + self.cout];
        let mut y = vec![0.0; rows * hw];
        gemm(
            rows,
            self.cin,
            hw,
            weights,
            self.cin as isize,
            1,
            &x.data,
            hw as isize,
            1,
            0.0,
            &mut y,
        );
        let (oh, ow) = (2 * x.h, 2 * x.w);
        let mut out = Tensor::zeros(self.cout, oh, ow);
        for co in 0..self.cout {
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let src = &y[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for yy in 0..x.h {
                    for xx in 0..x.w {
                        out.data[co * oh * ow + (2 * yy + dy) * ow + 2 * xx + dx] =
                            src[yy * x.w + xx] + bias[co];
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, params: &[f32], x: &Tensor, gout: &Tensor, grads: &mut [f32]) -> Tensor {
        let hw = x.hw();
        let rows = self.cout * 4;
        let (oh, ow) = (gout.h, gout.w);
        let mut gy = vec![0.0; rows * hw];
        for co in 0..self.cout {
            let mut bsum = 0.0;
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let dst = &mut gy[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for yy in 0..x.h {
                    for xx in 0..x.w {
                        let g = gout.data[co * oh * ow + (2 * yy + dy) * ow + 2 * xx + dx];
                        dst[yy * x.w + xx] = g;
                        bsum += g;
                    }
                }
            }
            grads[self.b_off + co] += bsum;
        }
        {
            let gw = &mut grads[self.w_off..self.w_off + self.n_weights()];
            gemm(
                rows,
                hw,
                self.cin,
                &gy,
                hw as isize,
                1,
                &x.data,
                1,
                hw as isize,
                1.0,
                gw,
            );
        }
        let weights = &params[self.w_off..self.w_off + self.n_weights()];
        let mut gx = Tensor::zeros(self.cin, x.h, x.w);
        gemm(
            self.cin,
            rows,
            hw,
            weights,
            1,
            self.cin as isize,
            &gy,
            hw as isize,
            1,
            0.0,
            &mut gx.data,
        );
        gx
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the post-activation output was not positive.
pub fn relu_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling; returns the pooled tensor and the flat argmax index of
/// each output element. Input sides must be even.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, oh, ow);
    let mut idx = vec![0u32; x.c * oh * ow];
    for c in 0..x.c {
        let base = c * x.h * x.w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * x.w + 2 * xx + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = c * oh * ow + y * ow + xx;
                out.data[o] = x.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(input_shape: (usize, usize, usize), idx: &[u32], gout: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let mut g = Tensor::zeros(c, h, w);
    for (o, &i) in idx.iter().enumerate() {
        g.data[i as usize] += gout.data[o];
    }
    g
}

/// Mirror index for reflect padding (edge pixel not repeated).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn naive_conv(conv: &Conv, p: &[f32], x: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(conv.cout, x.h, x.w);
        let pad = (conv.k / 2) as isize;
        for co in 0..conv.cout {
            for y in 0..x.h as isize {
                for xx in 0..x.w as isize {
                    let mut acc = p[conv.b_off + co];
                    for ci in 0..conv.cin {
                        for ky in 0..conv.k as isize {
                            for kx in 0..conv.k as isize {
                                let (sy, sx) = (y + ky - pad, xx + kx - pad);
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                let wi = conv.w_off
                                    + ((co * conv.cin + ci) * conv.k + ky as usize) * conv.k
                                    + kx as usize;
                                acc += p[wi] * x.data[ci * x.hw() + (sy as usize) * x.w + sx as usize];
                            }
                        }
                    }
                    out.data[co * x.hw() + y as usize * x.w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 3] {
            let conv = Conv { cin: 3, cout: 4, k, w_off: 0, b_off: 4 * 3 * k * k };
            let p = rand_vec(&mut rng, conv.b_off + 4);
            let x = Tensor { c: 3, h: 5, w: 6, data: rand_vec(&mut rng, 90) };
            let fast = conv.forward(&p, &x);
            let slow = naive_conv(&conv, &p, &x);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    /// Checks `<backward(g), dx> == <g, forward(x+dx) - forward(x)>` for linear
    /// layers, in f64-free form via a random probe.
    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv { cin: 2, cout: 3, k: 3, w_off: 0, b_off: 54 };
        let p = rand_vec(&mut rng, 57);
        let x = Tensor { c: 2, h: 4, w: 5, data: rand_vec(&mut rng, 40) };
        let g = Tensor { c: 3, h: 4, w: 5, data: rand_vec(&mut rng, 60) };
        let mut grads = vec![0.0; 57];
        let gx = conv.backward(&p, &x, &g, &mut grads);
        // Input direction.
        let dx = rand_vec(&mut rng, 40);
        let x2 = Tensor { data: x.data.iter().zip(&dx).map(|(a, b)| a + b).collect(), ..x.clone() };
        let diff: Vec<f32> = conv.forward(&p, &x2).data.iter().zip(&conv.forward(&p, &x).data).map(|(a, b)| a - b).collect();
        assert!((dot(&gx.data, &dx) - dot(&g.data, &diff)).abs() < 1e-3);
        // Weight direction.
        let dp = rand_vec(&mut rng, 57);
        let p2: Vec<f32> = p.iter().zip(&dp).map(|(a, b)| a + b).collect();
        let diff: Vec<f32> = conv.forward(&p2, &x).data.iter().zip(&conv.forward(&p, &x).data).map(|(a, b)| a - b).collect();
        assert!((dot(&grads, &dp) - dot(&g.data, &diff)).abs() < 1e-3);
    }

    #[test]
    fn upconv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = UpConv { cin: 3, cout: 2, w_off: 0, b_off: 24 };
        let p = rand_vec(&mut rng, 26);
        let x = Tensor { c: 3, h: 3, w: 2, data: rand_vec(&mut rng, 18) };
        let out = up.forward(&p, &x);
        assert_eq!((out.c, out.h, out.w), (2, 6, 4));
        let g = Tensor { c: 2, h: 6, w: 4, data: rand_vec(&mut rng, 48) };
        let mut grads = vec![0.0; 26];
        let gx = up.backward(&p, &x, &g, &mut grads);
        let dx = rand_vec(&mut rng, 18);
        let x2 = Tensor { data: x.data.iter().zip(&dx).map(|(a, b)| a + b).collect(), ..x.clone() };
        let diff: Vec<f32> = up.forward(&p, &x2).data.iter().zip(&out.data).map(|(a, b)| a - b).collect();
        assert!((dot(&gx.data, &dx) - dot(&g.data, &diff)).abs() < 1e-3);
        let dp = rand_vec(&mut rng, 26);
        let p2: Vec<f32> = p.iter().zip(&dp).map(|(a, b)| a + b).collect();
        let diff: Vec<f32> = up.forward(&p2, &x).data.iter().zip(&out.data).map(|(a, b)| a - b).collect();
        assert!((dot(&grads, &dp) - dot(&g.data, &diff)).abs() < 1e-3);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor { c: 1, h: 2, w: 4, data: vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 9.0] };
        let (out, idx) = maxpool2(&x);
        assert_eq!(out.data, vec![5.0, 9.0]);
        let g = maxpool2_backward((1, 2, 4), &idx, &Tensor { c: 1, h: 1, w: 2, data: vec![1.0, 2.0] });
        assert_eq!(g.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(5, 1), 0);
    }
}
