//! Channel-major feature maps and im2col convolutions.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Feature map stored channel-major (`c`, then rows, then columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.c, self.h, self.w)
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            data: self.data.iter().map(|v| v.max(0.0)).collect(),
            ..*self
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

/// Gradient of ReLU given its pre-activation input.
pub fn relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &x) in grad.data.iter_mut().zip(&pre.data) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_c x (in_c * k * k)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrad {
    pub fn zeros_for(conv: &Conv2d) -> Self {
        ConvGrad {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }

    pub fn add(&mut self, other: &ConvGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Cached lowering of a convolution input, reused by the backward pass.
pub struct Columns {
    data: Vec<f64>,
    in_h: usize,
    in_w: usize,
}

#[allow(clippy::too_many_arguments)]
unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    matrixmultiply::dgemm(
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

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
            weight: (0..out_c * in_c * k * k).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn kdim(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn im2col(&self, x: &Tensor) -> Columns {
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let mut cols = vec![0.0; self.kdim() * p];
        for ci in 0..self.in_c {
            let plane = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Columns {
            data: cols,
            in_h: x.h,
            in_w: x.w,
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Tensor {
        let (oh, ow) = self.out_size(h, w);
        let p = oh * ow;
        let mut x = Tensor::zeros(self.in_c, h, w);
        for ci in 0..self.in_c {
            let plane = &mut x.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, Columns) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let cols = self.im2col(x);
        let mut y = Tensor::zeros(self.out_c, oh, ow);
        for (o, b) in self.bias.iter().enumerate() {
            y.data[o * p..(o + 1) * p].fill(*b);
        }
        let kd = self.kdim();
        unsafe {
            gemm(
                self.out_c,
                kd,
                p,
                &self.weight,
                kd as isize,
                1,
                &cols.data,
                p as isize,
                1,
                1.0,
                &mut y.data,
            );
        }
        (y, cols)
    }

    /// Returns the input gradient (when requested) and accumulates parameter
    /// gradients into `grad` (when given).
    pub fn backward(
        &self,
        dy: &Tensor,
        cols: &Columns,
        want_input: bool,
        grad: Option<&mut ConvGrad>,
    ) -> Option<Tensor> {
        let p = dy.h * dy.w;
        let kd = self.kdim();
        if let Some(g) = grad {
            for o in 0..self.out_c {
                g.bias[o] += dy.data[o * p..(o + 1) * p].iter().sum::<f64>();
            }
            unsafe {
                gemm(
                    self.out_c,
                    p,
                    kd,
                    &dy.data,
                    p as isize,
                    1,
                    &cols.data,
                    1,
                    p as isize,
                    1.0,
                    &mut g.weight,
                );
            }
        }
        if !want_input {
            return None;
        }
        let mut dcols = vec![0.0; kd * p];
        unsafe {
            gemm(
                kd,
                self.out_c,
                p,
                &self.weight,
                1,
                kd as isize,
                &dy.data,
                p as isize,
                1,
                0.0,
                &mut dcols,
            );
        }
        Some(self.col2im(&dcols, cols.in_h, cols.in_w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.out_size(x.h, x.w);
        let mut y = Tensor::zeros(conv.out_c, oh, ow);
        for o in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[o];
                    for ci in 0..conv.in_c {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let wv = conv.weight[((o * conv.in_c + ci) * conv.k + ky) * conv.k + kx];
                                acc += wv * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    y.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor {
            c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn forward_matches_direct_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let mut conv = Conv2d::new(3, 4, 3, stride, &mut rng);
            conv.bias = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_tensor(3, 9, 7, 2);
            let (y, _) = conv.forward(&x);
            let y2 = naive(&conv, &x);
            for (a, b) in y.data.iter().zip(&y2.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x), dy> must equal <x, conv^T(dy)> + bias term, and weight
        // gradients must match the same identity in the weights.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x = random_tensor(2, 8, 6, 4);
        let (y, cols) = conv.forward(&x);
        let dy = random_tensor(y.c, y.h, y.w, 5);
        let mut g = ConvGrad::zeros_for(&conv);
        let dx = conv.backward(&dy, &cols, true, Some(&mut g)).unwrap();
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let bias_term: f64 = g.bias.iter().zip(&conv.bias).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum::<f64>() + bias_term;
        assert!((lhs - rhs).abs() < 1e-10);
        let wterm: f64 = g.weight.iter().zip(&conv.weight).map(|(a, b)| a * b).sum();
        assert!((lhs - wterm - bias_term).abs() < 1e-10);
    }
}
