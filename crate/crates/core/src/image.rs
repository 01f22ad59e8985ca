//! Floating-point RGB images and binary masks.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Interleaved RGB image with real-valued channels, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::domain(format!(
                "image buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.index(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copies the pixel rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::domain(format!(
                "crop {x0},{y0} {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::new(w, h);
        for y in 0..h {
            let src = self.index(x0, y0 + y);
            let dst = out.index(0, y);
            out.data[dst..dst + 3 * w].copy_from_slice(&self.data[src..src + 3 * w]);
        }
        Ok(out)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions); coordinates are clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let mut out = [0.0; 3];
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        for ch in 0..3 {
            out[ch] = (a[ch] * (1.0 - fx) + b[ch] * fx) * (1.0 - fy)
                + (c[ch] * (1.0 - fx) + d[ch] * fx) * fy;
        }
        out
    }

    /// Bilinear resize (align-corners=false convention).
    pub fn resize(&self, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            for x in 0..width {
                let px = (x as f64 + 0.5) * sx - 0.5;
                let py = (y as f64 + 0.5) * sy - 0.5;
                out.set(x, y, self.sample_bilinear(px, py));
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Image::from_vec(w as usize, h as usize, data)
    }

    /// 8-bit quantized copy of the pixel data.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
                .ok_or_else(|| Error::domain("image buffer size mismatch"))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Box prefilter for minified textures: each `factor x factor` block of the
/// source becomes one texel. Blocks on the right and bottom edges may be
/// partial and average only the texels they cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxFilter {
    pub factor: usize,
    pub src_width: usize,
    pub src_height: usize,
}

impl BoxFilter {
    /// Filter for a texture drawn at `scale` pixels per texel.
    pub fn for_scale(src_width: usize, src_height: usize, scale: f64) -> Self {
        let factor = if scale > 0.0 && scale < 1.0 {
            ((1.0 / scale).floor() as usize).clamp(1, src_width.max(src_height).max(1))
        } else {
            1
        };
        BoxFilter {
            factor,
            src_width,
            src_height,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.factor == 1
    }

    /// Filtered dimensions.
    pub fn dims(&self) -> (usize, usize) {
        (self.src_width.div_ceil(self.factor), self.src_height.div_ceil(self.factor))
    }

    fn block(&self, bx: usize, by: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let f = self.factor;
        (
            bx * f..((bx + 1) * f).min(self.src_width),
            by * f..((by + 1) * f).min(self.src_height),
        )
    }

    pub fn apply(&self, src: &Image) -> Image {
        debug_assert_eq!(src.dims(), (self.src_width, self.src_height));
        let (w, h) = self.dims();
        let mut out = Image::new(w, h);
        for by in 0..h {
            for bx in 0..w {
                let (xs, ys) = self.block(bx, by);
                let n = (xs.len() * ys.len()) as f64;
                let mut acc = [0.0; 3];
                for y in ys {
                    for x in xs.clone() {
                        let p = src.get(x, y);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set(bx, by, [acc[0] / n, acc[1] / n, acc[2] / n]);
            }
        }
        out
    }

    /// Adjoint of [`BoxFilter::apply`]: adds `grad_filtered` (interleaved RGB,
    /// filtered size) back onto `grad_src` (source size).
    pub fn backward(&self, grad_filtered: &[f64], grad_src: &mut [f64]) {
        let (w, h) = self.dims();
        for by in 0..h {
            for bx in 0..w {
                let (xs, ys) = self.block(bx, by);
                let n = (xs.len() * ys.len()) as f64;
                let g = &grad_filtered[(by * w + bx) * 3..(by * w + bx) * 3 + 3];
                for y in ys {
                    for x in xs.clone() {
                        let o = (y * self.src_width + x) * 3;
                        for c in 0..3 {
                            grad_src[o + c] += g[c] / n;
                        }
                    }
                }
            }
        }
    }
}

/// Binary mask, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Tight pixel bounding box `(x_min, y_min, x_max, y_max)` with exclusive
    /// max edges, or `None` when the mask is empty.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {

    #[test]
    fn box_filter_backward_is_the_adjoint() {
        let src = Image::from_vec(7, 5, (0..105).map(|i| ((i * 37) % 23) as f64 / 23.0).collect()).unwrap();
        let f = BoxFilter::for_scale(7, 5, 0.3);
        assert_eq!(f.factor, 3);
        assert_eq!(f.dims(), (3, 2));
        let out = f.apply(&src);
        // the corner block is partial: 1 column by 2 rows
        let expect = (src.get(6, 3)[0] + src.get(6, 4)[0]) / 2.0;
        assert!((out.get(2, 1)[0] - expect).abs() < 1e-12);
        let g: Vec<f64> = (0..18).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut back = vec![0.0; 105];
        f.backward(&g, &mut back);
        let lhs: f64 = out.data().iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(BoxFilter::for_scale(7, 5, 1.3).is_identity());
    }
    use super::*;

    #[test]
    fn crop_and_resize_preserve_constant() {
        let img = Image::filled(20, 10, [0.2, 0.4, 0.6]);
        let c = img.crop(3, 2, 5, 4).unwrap();
        assert_eq!(c.dims(), (5, 4));
        let r = img.resize(7, 13);
        for v in r.data().chunks(3) {
            assert!((v[0] - 0.2).abs() < 1e-12 && (v[2] - 0.6).abs() < 1e-12);
        }
        assert!(img.crop(18, 0, 5, 1).is_err());
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let mut img = Image::new(4, 3);
        img.set(1, 2, [1.0, 0.5, 0.0]);
        img.save_png(&p).unwrap();
        let back = Image::load(&p).unwrap();
        assert_eq!(back.dims(), (4, 3));
        let px = back.get(1, 2);
        assert!((px[1] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn mask_bounds() {
        let m = Mask::from_fn(10, 10, |x, y| (2..5).contains(&x) && (3..9).contains(&y));
        assert_eq!(m.bounds(), Some((2, 3, 5, 9)));
        assert_eq!(m.count(), 18);
        assert_eq!(Mask::new(3, 3).bounds(), None);
    }
}
