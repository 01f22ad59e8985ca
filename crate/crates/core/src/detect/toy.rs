//! The bundled grid-anchor toy person detector.
//!
//! Layout: 4x4 average pooling, a strided convolutional stem with ReLU,
//! residual blocks `x + c·conv(relu(conv(x)))` carrying shakedrop, and a 1x1
//! head emitting `(objectness, tx, ty, tw, th)` per grid cell.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{relu_backward, Columns, Conv2d, ConvGrad, Tensor};
use super::shakedrop::{shakedrop_backward, shakedrop_forward, ShakeState, ShakedropCfg};
use super::{nms, Detection, PERSON};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

pub const HEAD_CHANNELS: usize = 5;
const LOG_SCALE_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDetectorConfig {
    pub input_size: usize,
    pub pool: usize,
    pub stem_channels: Vec<usize>,
    pub residual_blocks: usize,
    /// Anchor `(width, height)` in input pixels.
    pub anchor: [f64; 2],
    pub nms_iou: f64,
    pub conf_floor: f64,
}

impl Default for ToyDetectorConfig {
    fn default() -> Self {
        ToyDetectorConfig {
            input_size: 416,
            pool: 4,
            stem_channels: vec![8, 16, 32],
            residual_blocks: 2,
            anchor: [100.0, 270.0],
            nms_iou: 0.45,
            conf_floor: 0.01,
        }
    }
}

impl ToyDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 || self.stem_channels.is_empty() || self.stem_channels.contains(&0) {
            return Err(Error::Config("detector layout has an empty stage".into()));
        }
        let stride = self.pool << self.stem_channels.len();
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(Error::Config(format!(
                "detector input size {} is not a multiple of the total stride {stride}",
                self.input_size
            )));
        }
        if self.anchor.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("detector anchor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) || !(0.0..1.0).contains(&self.conf_floor) {
            return Err(Error::Config("detector NMS thresholds outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.pool << self.stem_channels.len()
    }

    /// Average-pools an `input_size` square image into the network input.
    pub fn pool_image(&self, image: &Image) -> Result<Tensor> {
        let n = self.input_size;
        if image.dims() != (n, n) {
            return Err(Error::domain(format!(
                "detector expects a {n}x{n} image, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        let p = self.pool;
        let m = n / p;
        let mut t = Tensor::zeros(3, m, m);
        let data = image.data();
        for y in 0..n {
            let row = &data[y * n * 3..(y + 1) * n * 3];
            let ty = y / p;
            for x in 0..n {
                let tx = x / p;
                for c in 0..3 {
                    t.data[(c * m + ty) * m + tx] += row[x * 3 + c];
                }
            }
        }
        let inv = 1.0 / (p * p) as f64;
        for v in &mut t.data {
            *v *= inv;
        }
        Ok(t)
    }

    pub fn grid(&self) -> usize {
        self.input_size / self.stride()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    cfg: ToyDetectorConfig,
    stem: Vec<Conv2d>,
    blocks: Vec<[Conv2d; 2]>,
    head: Conv2d,
}

/// Parameter gradients laid out like [`ToyDetector::layers`].
pub type ToyGrads = Vec<ConvGrad>;

struct BlockTrace {
    a_cols: Columns,
    a_pre: Tensor,
    b_cols: Columns,
    state: ShakeState,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
pub struct Trace {
    stem: Vec<(Columns, Tensor)>,
    blocks: Vec<BlockTrace>,
    head_cols: Columns,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ToyDetector {
    /// Randomly initialized detector (He-normal weights, objectness prior 0.02).
    pub fn new(cfg: ToyDetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stem = Vec::new();
        let mut in_c = 3;
        for &c in &cfg.stem_channels {
            stem.push(Conv2d::new(in_c, c, 3, 2, &mut rng));
            in_c = c;
        }
        let blocks = (0..cfg.residual_blocks)
            .map(|_| {
                let a = Conv2d::new(in_c, in_c, 3, 1, &mut rng);
                let mut b = Conv2d::new(in_c, in_c, 3, 1, &mut rng);
                for w in &mut b.weight {
                    *w *= 0.1;
                }
                [a, b]
            })
            .collect();
        let mut head = Conv2d::new(in_c, HEAD_CHANNELS, 1, 1, &mut rng);
        for w in &mut head.weight {
            *w *= 0.1;
        }
        head.bias[0] = -4.0;
        Ok(ToyDetector {
            cfg,
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ToyDetectorConfig {
        &self.cfg
    }

    pub fn input_size(&self) -> usize {
        self.cfg.input_size
    }

    pub fn residual_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// All convolutions in a fixed order: stem, block pairs, head.
    pub fn layers(&self) -> Vec<&Conv2d> {
        let mut out: Vec<&Conv2d> = self.stem.iter().collect();
        for [a, b] in &self.blocks {
            out.push(a);
            out.push(b);
        }
        out.push(&self.head);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out: Vec<&mut Conv2d> = self.stem.iter_mut().collect();
        for [a, b] in &mut self.blocks {
            out.push(a);
            out.push(b);
        }
        out.push(&mut self.head);
        out
    }

    pub fn zero_grads(&self) -> ToyGrads {
        self.layers().into_iter().map(ConvGrad::zeros_for).collect()
    }

    /// Average-pools an input image into a channel-major tensor.
    pub fn pool(&self, image: &Image) -> Result<Tensor> {
        self.cfg.pool_image(image)
    }

    /// Adjoint of [`ToyDetector::pool`].
    pub fn pool_backward(&self, grad: &Tensor) -> Image {
        let n = self.cfg.input_size;
        let p = self.cfg.pool;
        let m = n / p;
        let inv = 1.0 / (p * p) as f64;
        let mut data = vec![0.0; n * n * 3];
        for y in 0..n {
            for x in 0..n {
                for c in 0..3 {
                    data[(y * n + x) * 3 + c] = grad.data[(c * m + y / p) * m + x / p] * inv;
                }
            }
        }
        Image::from_vec(n, n, data).expect("pool gradient shape")
    }

    /// Raw head output for a pooled input. Shakedrop draws come from `rng`.
    pub fn forward_pooled(&self, x: &Tensor, shake: &ShakedropCfg, rng: &mut dyn RngCore) -> (Tensor, Trace) {
        let mut stem_trace = Vec::with_capacity(self.stem.len());
        let mut h = x.clone();
        for conv in &self.stem {
            let (pre, cols) = conv.forward(&h);
            h = pre.relu();
            stem_trace.push((cols, pre));
        }
        let mut block_trace = Vec::with_capacity(self.blocks.len());
        for [a, b] in &self.blocks {
            let (c, hh, ww) = (h.c, h.h, h.w);
            let mut cache = None;
            let (out, state) = shakedrop_forward(
                &h.data,
                |v| {
                    let xin = Tensor { c, h: hh, w: ww, data: v.to_vec() };
                    let (a_pre, a_cols) = a.forward(&xin);
                    let (hb, b_cols) = b.forward(&a_pre.relu());
                    cache = Some((a_cols, a_pre, b_cols));
                    hb.data
                },
                shake,
                rng,
            );
            let (a_cols, a_pre, b_cols) = cache.expect("block evaluated");
            block_trace.push(BlockTrace { a_cols, a_pre, b_cols, state });
            h = Tensor { c, h: hh, w: ww, data: out };
        }
        let (out, head_cols) = self.head.forward(&h);
        (
            out,
            Trace {
                stem: stem_trace,
                blocks: block_trace,
                head_cols,
            },
        )
    }

    /// Backpropagates a head gradient. Returns the pooled-input gradient
    /// when `want_input` is set and accumulates parameter gradients into
    /// `grads` when given. Parameter gradients require shakedrop disabled.
    pub fn backward_pooled(
        &self,
        trace: Trace,
        d_head: &Tensor,
        shake: &ShakedropCfg,
        rng: &mut dyn RngCore,
        want_input: bool,
        mut grads: Option<&mut ToyGrads>,
    ) -> Result<Option<Tensor>> {
        if grads.is_some() && shake.enabled {
            return Err(Error::domain("parameter gradients are only defined with shakedrop disabled"));
        }
        let n_stem = self.stem.len();
        let n_layers = n_stem + 2 * self.blocks.len() + 1;
        let mut g = {
            let gh = grads.as_deref_mut().map(|gs| &mut gs[n_layers - 1]);
            self.head
                .backward(d_head, &trace.head_cols, true, gh)
                .expect("input gradient requested")
        };
        for (bi, (bt, [a, b])) in trace.blocks.iter().zip(&self.blocks).enumerate().rev() {
            let (c, hh, ww) = (g.c, g.h, g.w);
            let (ga, gb) = match grads.as_deref_mut() {
                Some(gs) => {
                    let (lo, hi) = gs.split_at_mut(n_stem + 2 * bi + 1);
                    (Some(&mut lo[n_stem + 2 * bi]), Some(&mut hi[0]))
                }
                None => (None, None),
            };
            let data = shakedrop_backward(
                &g.data,
                |v| {
                    let dy = Tensor { c, h: hh, w: ww, data: v.to_vec() };
                    let mut da = b.backward(&dy, &bt.b_cols, true, gb).expect("input gradient");
                    relu_backward(&bt.a_pre, &mut da);
                    a.backward(&da, &bt.a_cols, true, ga).expect("input gradient").data
                },
                &bt.state,
                shake,
                rng,
            );
            g = Tensor { c, h: hh, w: ww, data };
        }
        for (i, (conv, (cols, pre))) in self.stem.iter().zip(&trace.stem).enumerate().rev() {
            relu_backward(pre, &mut g);
            let gi = grads.as_deref_mut().map(|gs| &mut gs[i]);
            let need = want_input || i > 0;
            match conv.backward(&g, cols, need, gi) {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// Decodes every grid cell into a detection (before flooring and NMS).
    pub fn decode(&self, head: &Tensor) -> Vec<Detection> {
        let grid = head.h;
        let stride = self.cfg.stride() as f64;
        let plane = grid * grid;
        let mut out = Vec::with_capacity(plane);
        for i in 0..grid {
            for j in 0..grid {
                let cell = i * grid + j;
                let o = |ch: usize| head.data[ch * plane + cell];
                let conf = sigmoid(o(0));
                let cx = (j as f64 + sigmoid(o(1))) * stride;
                let cy = (i as f64 + sigmoid(o(2))) * stride;
                let w = self.cfg.anchor[0] * o(3).clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT).exp();
                let h = self.cfg.anchor[1] * o(4).clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT).exp();
                let bbox = BoundingBox {
                    x_min: cx - w / 2.0,
                    y_min: cy - h / 2.0,
                    x_max: cx + w / 2.0,
                    y_max: cy + h / 2.0,
                };
                out.push(Detection {
                    bbox,
                    confidence: conf,
                    label: PERSON,
                    cell,
                });
            }
        }
        out
    }

    /// Applies the confidence floor and NMS to decoded cells.
    pub fn postprocess(&self, cells: Vec<Detection>) -> Vec<Detection> {
        let kept: Vec<Detection> = cells
            .into_iter()
            .filter(|d| d.confidence >= self.cfg.conf_floor)
            .collect();
        nms(kept, self.cfg.nms_iou)
    }

    pub fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        self.detect_pooled(&self.pool(image)?)
    }

    pub fn detect_pooled(&self, x: &Tensor) -> Result<Vec<Detection>> {
        if (x.c, x.h, x.w) != (3, self.cfg.input_size / self.cfg.pool, self.cfg.input_size / self.cfg.pool) {
            return Err(Error::domain("pooled input has the wrong shape"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (head, _) = self.forward_pooled(x, &ShakedropCfg::disabled(), &mut rng);
        Ok(self.postprocess(self.decode(&head)))
    }

    /// Runs detection, evaluates `loss`, and backpropagates to the image.
    pub fn detect_with_gradient(
        &self,
        image: &Image,
        loss: &dyn Fn(&[Detection]) -> (f64, Vec<f64>),
        shake: &ShakedropCfg,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, Vec<Detection>, Image)> {
        shake.validate()?;
        let x = self.pool(image)?;
        let (head, trace) = self.forward_pooled(&x, shake, rng);
        let dets = self.postprocess(self.decode(&head));
        let (value, dconf) = loss(&dets);
        if dconf.len() != dets.len() {
            return Err(Error::domain(format!(
                "loss returned {} confidence gradients for {} detections",
                dconf.len(),
                dets.len()
            )));
        }
        let mut d_head = head.zeros_like();
        for (d, g) in dets.iter().zip(&dconf) {
            d_head.data[d.cell] += g * d.confidence * (1.0 - d.confidence);
        }
        let grad = self
            .backward_pooled(trace, &d_head, shake, rng, true, None)?
            .expect("input gradient requested");
        Ok((value, dets, self.pool_backward(&grad)))
    }

    pub(crate) fn from_parts(cfg: ToyDetectorConfig, layers: Vec<Conv2d>) -> Result<Self> {
        let mut model = ToyDetector::new(cfg, 0)?;
        let expected = model.layers().len();
        if layers.len() != expected {
            return Err(Error::Config(format!(
                "weight file holds {} layers, layout expects {expected}",
                layers.len()
            )));
        }
        for (i, (dst, src)) in model.layers_mut().into_iter().zip(layers).enumerate() {
            if (dst.in_c, dst.out_c, dst.k, dst.stride) != (src.in_c, src.out_c, src.k, src.stride) {
                return Err(Error::Config(format!("weight file layer {i} has the wrong shape")));
            }
            *dst = src;
        }
        Ok(model)
    }
}
