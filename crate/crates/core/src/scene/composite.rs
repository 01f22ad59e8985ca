use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// `mask * render + (1 - mask) * background`, per pixel.
pub fn composite(render: &Image, mask: &Mask, background: &Image) -> Result<Image> {
    if !render.same_shape(background) || mask.width() != render.width() || mask.height() != render.height() {
        return Err(Error::domain(format!(
            "composite shape mismatch: render {:?}, mask {}x{}, background {:?}",
            render.dims(),
            mask.width(),
            mask.height(),
            background.dims()
        )));
    }
    let mut out = background.clone();
    let (w, h) = render.dims();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                out.set(x, y, render.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Gradient of [`composite`] with respect to the render: the incoming
/// gradient restricted to the mask.
pub fn composite_backward(mask: &Mask, grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; grad_out.len()];
    for (i, &m) in mask.data().iter().enumerate() {
        if m != 0 {
            g[3 * i..3 * i + 3].copy_from_slice(&grad_out[3 * i..3 * i + 3]);
        }
    }
    g
}
