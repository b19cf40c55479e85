//! Value types shared by every stage: keypoints, boxes and grouped symbols.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::taxonomy::KeypointType;

/// A typed point in image pixel coordinates (origin top-left, sub-pixel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "type_id")]
    pub kind: KeypointType,
    #[serde(default = "full_score")]
    pub score: f64,
}

fn full_score() -> f64 {
    1.0
}

impl Keypoint {
    /// A ground-truth keypoint (score 1).
    pub fn new(x: f64, y: f64, kind: KeypointType) -> Self {
        Keypoint {
            x,
            y,
            kind,
            score: 1.0,
        }
    }

    pub fn with_score(self, score: f64) -> Self {
        Keypoint { score, ..self }
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x < width as f64 && self.y < height as f64
    }
}

/// Axis-aligned box `[x0, x1] x [y0, y1]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Smallest box holding every point; `None` for an empty iterator.
    pub fn enclosing(points: impl IntoIterator<Item = (f64, f64)>) -> Option<BBox> {
        points.into_iter().fold(None, |acc, (x, y)| {
            Some(match acc {
                None => BBox::new(x, y, x, y),
                Some(b) => BBox::new(b.x0.min(x), b.y0.min(y), b.x1.max(x), b.y1.max(y)),
            })
        })
    }
}

/// A coarse region of the drawing (title bar, legend, main drawing area...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    #[serde(flatten)]
    pub bbox: BBox,
    pub class: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolClass {
    Scale,
    Block,
    Wall,
}

impl SymbolClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SymbolClass::Scale => "scale",
            SymbolClass::Block => "block",
            SymbolClass::Wall => "wall",
        }
    }
}

impl fmt::Display for SymbolClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SymbolClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scale" => Ok(SymbolClass::Scale),
            "block" => Ok(SymbolClass::Block),
            "wall" => Ok(SymbolClass::Wall),
            other => Err(format!("unknown symbol class `{other}`")),
        }
    }
}

/// A grouped symbol: indices into a keypoint list, in traversal order.
///
/// Scales run from their left (or top) end to the opposite end. Blocks and
/// walls run clockwise from their top-left vertex; the closing edge back to
/// the first vertex is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RectangleSymbol {
    pub class: SymbolClass,
    pub keypoint_indices: Vec<usize>,
}

impl RectangleSymbol {
    pub fn bbox(&self, points: &[Keypoint]) -> Option<BBox> {
        BBox::enclosing(self.keypoint_indices.iter().map(|&i| (points[i].x, points[i].y)))
    }

    pub fn vertices<'a>(&'a self, points: &'a [Keypoint]) -> impl Iterator<Item = &'a Keypoint> + 'a {
        self.keypoint_indices.iter().map(move |&i| &points[i])
    }
}
