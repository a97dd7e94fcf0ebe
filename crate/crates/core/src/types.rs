//! Small domain types shared across the crate.
//!
//! Class indices are zero-based throughout: foreground classes occupy
//! `0..C` and the objectness (background) channel sits at index `C` of every
//! logit vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth label of an example or feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Foreground(usize),
    Background,
}

impl Label {
    pub fn foreground(self) -> Option<usize> {
        match self {
            Label::Foreground(i) => Some(i),
            Label::Background => None,
        }
    }

    pub fn is_background(self) -> bool {
        matches!(self, Label::Background)
    }

    /// Channel index in a `(C+1)`-wide logit vector.
    pub fn channel(self, num_classes: usize) -> usize {
        match self {
            Label::Foreground(i) => i,
            Label::Background => num_classes,
        }
    }

    pub fn from_channel(channel: usize, num_classes: usize) -> Result<Self> {
        if channel < num_classes {
            Ok(Label::Foreground(channel))
        } else if channel == num_classes {
            Ok(Label::Background)
        } else {
            Err(Error::InvalidLabel(format!(
                "channel {channel} outside 0..={num_classes}"
            )))
        }
    }
}

/// Classifier output over `C` foreground channels plus the objectness channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Shape {
                context: "logits",
                expected: 2,
                actual: z.len(),
            });
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit channel {k}")));
        }
        Ok(Logits(z))
    }

    pub fn num_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Logits {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Axis-aligned box `[x1, y1, x2, y2]` with `x2 > x1` and `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x2 > self.x1
            && self.y2 > self.y1
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }
}
