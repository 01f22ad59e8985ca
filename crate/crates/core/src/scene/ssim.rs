//! Windowed structural similarity with an 11x11 Gaussian window (sigma 1.5)
//! on unit dynamic range, averaged over valid window positions and channels.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering of a `w x h` plane: output is
/// `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * row[x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for x in 0..ow {
                dst[x] += kv * row[x];
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `(w-10) x (h-10)` plane back to
/// `w x h`.
fn filter_adjoint(g: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let src = &g[y * ow..(y + 1) * ow];
            let dst = &mut tmp[(y + i) * ow..(y + i + 1) * ow];
            for x in 0..ow {
                dst[x] += kv * src[x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).cloned().collect()
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::domain("ssim inputs differ in shape"));
    }
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(Error::domain(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_impl(a, b, false).map(|(v, _)| v)
}

/// SSIM and its gradient with respect to `a` (interleaved like the image).
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    ssim_impl(a, b, true).map(|(v, g)| (v, g.unwrap()))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check(a, b)?;
    let (w, h) = a.dims();
    let k = kernel();
    let n = ((w - WINDOW + 1) * (h - WINDOW + 1)) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let pa = channel(a, c);
        let pb = channel(b, c);
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let m_aa = filter_valid(&aa, w, h, &k);
        let m_bb = filter_valid(&bb, w, h, &k);
        let m_ab = filter_valid(&ab, w, h, &k);
        let len = mu_a.len();
        let mut d_mu = vec![0.0; len];
        let mut d_ab = vec![0.0; len];
        let mut d_aa = vec![0.0; len];
        let mut sum = 0.0;
        for i in 0..len {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = m_aa[i] - ma * ma;
            let var_b = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = var_a + var_b + C2;
            let s = a1 * a2 / (b1 * b2);
            sum += s;
            if want_grad {
                d_mu[i] = s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2) / n;
                d_ab[i] = s * 2.0 / a2 / n;
                d_aa[i] = -s / b2 / n;
            }
        }
        total += sum / n;
        if let Some(g) = grad.as_mut() {
            let g_mu = filter_adjoint(&d_mu, w, h, &k);
            let g_ab = filter_adjoint(&d_ab, w, h, &k);
            let g_aa = filter_adjoint(&d_aa, w, h, &k);
            for p in 0..w * h {
                g[3 * p + c] = (g_mu[p] + g_ab[p] * pb[p] + 2.0 * g_aa[p] * pa[p]) / 3.0;
            }
        }
    }
    Ok((total / 3.0, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identity_is_one() {
        let a = noise(20, 16, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_inverse_is_nonpositive() {
        let a = Image::from_vec(
            24,
            24,
            (0..24 * 24 * 3)
                .map(|i| (((i / 3) % 24 / 3 + (i / 3) / 24 / 3) % 2) as f64)
                .collect(),
        )
        .unwrap();
        let inv = Image::from_vec(24, 24, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() <= 0.0);
    }

    #[test]
    fn constant_pair_matches_closed_form() {
        let c = 0.4;
        let a = Image::filled(16, 16, [c; 3]);
        let b = Image::filled(16, 16, [c + 0.1; 3]);
        let d = c + 0.1;
        let expect = (2.0 * c * d + C1) / (c * c + d * d + C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn too_small_rejected() {
        let a = Image::new(10, 30);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = noise(14, 13, 2);
        let b = noise(14, 13, 3);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        for idx in [0usize, 17, 100, 255, 400, 545] {
            let mut ap = a.clone();
            ap.data_mut()[idx] += 1e-6;
            let mut am = a.clone();
            am.data_mut()[idx] -= 1e-6;
            let fd = (ssim(&ap, &b).unwrap() - ssim(&am, &b).unwrap()) / 2e-6;
            assert!((fd - g[idx]).abs() < 1e-7 + 1e-5 * fd.abs(), "{idx}: {fd} vs {}", g[idx]);
        }
    }
}
