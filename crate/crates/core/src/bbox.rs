//! Axis-aligned pixel boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in image coordinates (origin top-left, pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::domain(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn contained_in(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= width as f64
            && self.y_max <= height as f64
    }

    /// Shifts the box the minimal amount needed to lie inside the image.
    /// Returns `None` if the box is larger than the image.
    pub fn shifted_into(&self, width: usize, height: usize) -> Option<Self> {
        let (w, h) = (width as f64, height as f64);
        if self.width() > w || self.height() > h {
            return None;
        }
        let dx = if self.x_min < 0.0 {
            -self.x_min
        } else if self.x_max > w {
            w - self.x_max
        } else {
            0.0
        };
        let dy = if self.y_min < 0.0 {
            -self.y_min
        } else if self.y_max > h {
            h - self.y_max
        } else {
            0.0
        };
        Some(BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Intersection over union, 0 for disjoint or degenerate pairs.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }
}
