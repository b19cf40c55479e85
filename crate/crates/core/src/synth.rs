//! Synthetic CAD-like scenes with exact ground truth.
//!
//! A scene is a set of axis-aligned strokes: blocks and walls are rectangle
//! outlines, scales are straight bars with perpendicular ticks at both ends
//! (and optionally in between). Blocks may be attached to earlier blocks so
//! that they share part of an edge, which turns coincident corners into
//! T-junctions or crosses.
//!
//! Geometry is kept on an integer grid of stroke start pixels: a stroke at
//! `p` covers pixels `p .. p + line_width`, so its centerline, and every
//! keypoint on it, sits at `p + line_width / 2`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, Annotation};
use crate::error::{Error, Result};
use crate::geom::{BBox, Keypoint, RectangleSymbol, RegionBox, SymbolClass};
use crate::raster::{Raster, BACKGROUND, INK};
use crate::rng::rng_from_seed;
use crate::taxonomy::{Arms, Direction, KeypointType};

/// Minimum Chebyshev distance between any two keypoints of a scene, in pixels.
pub const MIN_KEYPOINT_SPACING: i64 = 8;
/// Clearance between symbols that do not share an edge.
pub const SYMBOL_GAP: i64 = 8;
/// Half length of a scale tick, from the bar centerline.
pub const TICK_HALF: i64 = 3;
const BORDER: i64 = 2;
const MAX_ATTEMPTS: usize = 500;
/// Blocks keep `long / short` at or below this.
pub const BLOCK_MAX_ASPECT: f64 = 2.5;
/// Walls keep `long / short` at or above this.
pub const WALL_MIN_ASPECT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub image_width: usize,
    pub image_height: usize,
    pub n_blocks: usize,
    pub n_walls: usize,
    pub n_scales: usize,
    pub min_symbol_size: usize,
    pub max_symbol_size: usize,
    pub line_width: usize,
    /// Probability of flipping each pixel after rendering.
    pub noise_level: f64,
    pub rng_seed: u64,
    /// Probability that a block is attached to an existing block.
    pub adjacency: f64,
    /// Intermediate ticks per scale. Zero draws plain two-ended scales.
    pub scale_ticks: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_width: 512,
            image_height: 512,
            n_blocks: 4,
            n_walls: 2,
            n_scales: 2,
            min_symbol_size: 12,
            max_symbol_size: 48,
            line_width: 1,
            noise_level: 0.0,
            rng_seed: 0,
            adjacency: 0.0,
            scale_ticks: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_width < 64 || self.image_height < 64 {
            return fail(format!(
                "image must be at least 64x64, got {}x{}",
                self.image_width, self.image_height
            ));
        }
        if self.min_symbol_size < 8 {
            return fail(format!("min_symbol_size must be >= 8, got {}", self.min_symbol_size));
        }
        if self.max_symbol_size < self.min_symbol_size {
            return fail("max_symbol_size must be >= min_symbol_size".into());
        }
        if self.line_width == 0 || self.line_width as i64 > TICK_HALF {
            return fail(format!("line_width must be in 1..={TICK_HALF}, got {}", self.line_width));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return fail(format!("noise_level must be in [0, 1], got {}", self.noise_level));
        }
        if !(0.0..=1.0).contains(&self.adjacency) {
            return fail(format!("adjacency must be in [0, 1], got {}", self.adjacency));
        }
        Ok(())
    }
}

/// Rectangle on the stroke-start grid; `x1 > x0`, `y1 > y0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GridRect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl GridRect {
    fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    fn interiors_overlap(&self, o: &GridRect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    fn touches(&self, o: &GridRect) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }

    fn on_boundary(&self, x: i64, y: i64) -> bool {
        let on_h = (y == self.y0 || y == self.y1) && (self.x0..=self.x1).contains(&x);
        let on_v = (x == self.x0 || x == self.x1) && (self.y0..=self.y1).contains(&y);
        on_h || on_v
    }

    /// Position along the clockwise boundary walk from the top-left vertex.
    fn clockwise_rank(&self, x: i64, y: i64) -> i64 {
        let (w, h) = (self.width(), self.height());
        if y == self.y0 && x < self.x1 {
            x - self.x0
        } else if x == self.x1 && y < self.y1 {
            w + (y - self.y0)
        } else if y == self.y1 && x > self.x0 {
            w + h + (self.x1 - x)
        } else {
            2 * w + h + (self.y1 - y)
        }
    }
}

/// Pixel coverage `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy)]
struct Extent {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Extent {
    fn clear_of(&self, o: &Extent, gap: i64) -> bool {
        self.x1 + gap <= o.x0 || o.x1 + gap <= self.x0 || self.y1 + gap <= o.y0 || o.y1 + gap <= self.y0
    }
}

#[derive(Debug, Clone, Copy)]
enum Seg {
    H { y: i64, x0: i64, x1: i64 },
    V { x: i64, y0: i64, y1: i64 },
}

#[derive(Debug, Clone)]
enum Shape {
    Rect {
        rect: GridRect,
        class: SymbolClass,
    },
    Scale {
        x: i64,
        y: i64,
        len: i64,
        horizontal: bool,
        /// Offsets of intermediate ticks along the bar.
        ticks: Vec<i64>,
    },
}

impl Shape {
    fn extent(&self, lw: i64) -> Extent {
        match self {
            Shape::Rect { rect, .. } => Extent {
                x0: rect.x0,
                y0: rect.y0,
                x1: rect.x1 + lw,
                y1: rect.y1 + lw,
            },
            Shape::Scale {
                x,
                y,
                len,
                horizontal: true,
                ..
            } => Extent {
                x0: *x,
                y0: y - TICK_HALF,
                x1: x + len + lw,
                y1: y + TICK_HALF + lw,
            },
            Shape::Scale { x, y, len, .. } => Extent {
                x0: x - TICK_HALF,
                y0: *y,
                x1: x + TICK_HALF + lw,
                y1: y + len + lw,
            },
        }
    }

    fn segments(&self) -> Vec<Seg> {
        match self {
            Shape::Rect { rect: r, .. } => vec![
                Seg::H { y: r.y0, x0: r.x0, x1: r.x1 },
                Seg::H { y: r.y1, x0: r.x0, x1: r.x1 },
                Seg::V { x: r.x0, y0: r.y0, y1: r.y1 },
                Seg::V { x: r.x1, y0: r.y0, y1: r.y1 },
            ],
            Shape::Scale {
                x,
                y,
                len,
                horizontal,
                ticks,
            } => {
                let stops = std::iter::once(0).chain(ticks.iter().copied()).chain(std::iter::once(*len));
                if *horizontal {
                    let mut segs = vec![Seg::H { y: *y, x0: *x, x1: x + len }];
                    segs.extend(stops.map(|o| Seg::V {
                        x: x + o,
                        y0: y - TICK_HALF,
                        y1: y + TICK_HALF,
                    }));
                    segs
                } else {
                    let mut segs = vec![Seg::V { x: *x, y0: *y, y1: y + len }];
                    segs.extend(stops.map(|o| Seg::H {
                        y: y + o,
                        x0: x - TICK_HALF,
                        x1: x + TICK_HALF,
                    }));
                    segs
                }
            }
        }
    }

    fn rect(&self) -> Option<(GridRect, SymbolClass)> {
        match self {
            Shape::Rect { rect, class } => Some((*rect, *class)),
            Shape::Scale { .. } => None,
        }
    }
}

/// Grid position and type of a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct GridNode {
    y: i64,
    x: i64,
    kind: KeypointType,
}

fn arms_at(segs: &[Seg], x: i64, y: i64) -> Arms {
    let mut arms = Arms::EMPTY;
    for s in segs {
        match *s {
            Seg::H { y: sy, x0, x1 } if sy == y => {
                if x0 <= x && x < x1 {
                    arms = arms.with(Direction::Right);
                }
                if x0 < x && x <= x1 {
                    arms = arms.with(Direction::Left);
                }
            }
            Seg::V { x: sx, y0, y1 } if sx == x => {
                if y0 <= y && y < y1 {
                    arms = arms.with(Direction::Down);
                }
                if y0 < y && y <= y1 {
                    arms = arms.with(Direction::Up);
                }
            }
            _ => {}
        }
    }
    arms
}

/// Corner and junction nodes induced by the rectangle outlines.
fn corner_nodes(shapes: &[Shape]) -> Vec<GridNode> {
    let segs: Vec<Seg> = shapes
        .iter()
        .filter(|s| s.rect().is_some())
        .flat_map(Shape::segments)
        .collect();
    let mut candidates = BTreeSet::new();
    for s in &segs {
        match *s {
            Seg::H { y, x0, x1 } => {
                candidates.insert((x0, y));
                candidates.insert((x1, y));
                for t in &segs {
                    if let Seg::V { x, y0, y1 } = *t {
                        if x0 <= x && x <= x1 && y0 <= y && y <= y1 {
                            candidates.insert((x, y));
                        }
                    }
                }
            }
            Seg::V { x, y0, y1 } => {
                candidates.insert((x, y0));
                candidates.insert((x, y1));
            }
        }
    }
    candidates
        .into_iter()
        .filter_map(|(x, y)| {
            let arms = arms_at(&segs, x, y);
            arms.is_node()
                .then(|| KeypointType::corner_from_arms(arms))
                .flatten()
                .map(|kind| GridNode { y, x, kind })
        })
        .collect()
}

fn scale_nodes(shape: &Shape) -> Vec<GridNode> {
    let Shape::Scale {
        x,
        y,
        len,
        horizontal,
        ticks,
    } = shape
    else {
        return Vec::new();
    };
    let at = |o: i64| if *horizontal { (x + o, *y) } else { (*x, y + o) };
    let (start, end, tick) = if *horizontal {
        (KeypointType::ScaleLeft, KeypointType::ScaleRight, KeypointType::ScaleTickH)
    } else {
        (KeypointType::ScaleTop, KeypointType::ScaleBottom, KeypointType::ScaleTickV)
    };
    let mut nodes = Vec::with_capacity(ticks.len() + 2);
    let mut push = |o: i64, kind| {
        let (x, y) = at(o);
        nodes.push(GridNode { y, x, kind });
    };
    push(0, start);
    for &o in ticks {
        push(o, tick);
    }
    push(*len, end);
    nodes
}

fn all_nodes(shapes: &[Shape]) -> Vec<GridNode> {
    let mut nodes = corner_nodes(shapes);
    nodes.extend(shapes.iter().flat_map(scale_nodes));
    nodes.sort();
    nodes
}

fn spacing_ok(nodes: &[GridNode]) -> bool {
    nodes.iter().enumerate().all(|(i, a)| {
        nodes[i + 1..]
            .iter()
            .all(|b| (a.x - b.x).abs().max((a.y - b.y).abs()) >= MIN_KEYPOINT_SPACING)
    })
}

struct Placer<'a, R: Rng> {
    spec: &'a SceneSpec,
    rng: R,
    shapes: Vec<Shape>,
    lw: i64,
}

impl<R: Rng> Placer<'_, R> {
    fn in_bounds(&self, e: &Extent) -> bool {
        e.x0 >= BORDER
            && e.y0 >= BORDER
            && e.x1 <= self.spec.image_width as i64 - BORDER
            && e.y1 <= self.spec.image_height as i64 - BORDER
    }

    /// Accepts `shape` if it fits, keeps clear of other symbols (blocks may
    /// touch blocks) and leaves every keypoint well separated.
    fn try_accept(&mut self, shape: Shape) -> bool {
        let ext = shape.extent(self.lw);
        if !self.in_bounds(&ext) {
            return false;
        }
        for other in &self.shapes {
            let both_blocks = matches!(
                (shape.rect(), other.rect()),
                (Some((_, SymbolClass::Block)), Some((_, SymbolClass::Block)))
            );
            if both_blocks {
                let (a, _) = shape.rect().unwrap();
                let (b, _) = other.rect().unwrap();
                if a.interiors_overlap(&b) {
                    return false;
                }
                if a.touches(&b) {
                    continue;
                }
                let ea = Extent { x1: a.x1 + self.lw, y1: a.y1 + self.lw, x0: a.x0, y0: a.y0 };
                if !ea.clear_of(&other.extent(self.lw), SYMBOL_GAP) {
                    return false;
                }
            } else if !ext.clear_of(&other.extent(self.lw), SYMBOL_GAP) {
                return false;
            }
        }
        self.shapes.push(shape);
        if spacing_ok(&all_nodes(&self.shapes)) {
            true
        } else {
            self.shapes.pop();
            false
        }
    }

    fn random_origin(&mut self, w: i64, h: i64) -> Option<(i64, i64)> {
        let max_x = self.spec.image_width as i64 - BORDER - w - self.lw;
        let max_y = self.spec.image_height as i64 - BORDER - h - self.lw;
        if max_x < BORDER || max_y < BORDER {
            return None;
        }
        Some((self.rng.random_range(BORDER..=max_x), self.rng.random_range(BORDER..=max_y)))
    }

    fn propose_block(&mut self) -> Option<Shape> {
        let (lo, hi) = (self.spec.min_symbol_size as i64, self.spec.max_symbol_size as i64);
        let w = self.rng.random_range(lo..=hi);
        let h = self.rng.random_range(lo..=hi);
        if (w.max(h) as f64) / (w.min(h) as f64) > BLOCK_MAX_ASPECT {
            return None;
        }
        let blocks: Vec<GridRect> = self
            .shapes
            .iter()
            .filter_map(|s| match s.rect() {
                Some((r, SymbolClass::Block)) => Some(r),
                _ => None,
            })
            .collect();
        let rect = if !blocks.is_empty() && self.rng.random_bool(self.spec.adjacency) {
            let p = blocks[self.rng.random_range(0..blocks.len())];
            // Offset along the shared edge; half the time the two symbols are flush.
            let side = self.rng.random_range(0..4);
            let (own, parent) = if side < 2 { (h, p.height()) } else { (w, p.width()) };
            let off = if self.rng.random_bool(0.5) {
                0
            } else {
                self.rng.random_range(-(own - 1)..=parent - 1)
            };
            let slide = |_: i64, _: i64| off;
            match side {
                0 => {
                    let dy = slide(h, p.height());
                    GridRect { x0: p.x1, y0: p.y0 + dy, x1: p.x1 + w, y1: p.y0 + dy + h }
                }
                1 => {
                    let dy = slide(h, p.height());
                    GridRect { x0: p.x0 - w, y0: p.y0 + dy, x1: p.x0, y1: p.y0 + dy + h }
                }
                2 => {
                    let dx = slide(w, p.width());
                    GridRect { x0: p.x0 + dx, y0: p.y1, x1: p.x0 + dx + w, y1: p.y1 + h }
                }
                _ => {
                    let dx = slide(w, p.width());
                    GridRect { x0: p.x0 + dx, y0: p.y0 - h, x1: p.x0 + dx + w, y1: p.y0 }
                }
            }
        } else {
            let (x0, y0) = self.random_origin(w, h)?;
            GridRect { x0, y0, x1: x0 + w, y1: y0 + h }
        };
        Some(Shape::Rect {
            rect,
            class: SymbolClass::Block,
        })
    }

    fn propose_wall(&mut self) -> Option<Shape> {
        let lo = self.spec.min_symbol_size as i64;
        let t = self.rng.random_range(lo..=lo + lo / 2);
        let min_len = (t as f64 * WALL_MIN_ASPECT).ceil() as i64;
        let len = self.rng.random_range(min_len..=min_len + self.spec.max_symbol_size as i64 / 2);
        let (w, h) = if self.rng.random_bool(0.5) { (len, t) } else { (t, len) };
        let (x0, y0) = self.random_origin(w, h)?;
        Some(Shape::Rect {
            rect: GridRect { x0, y0, x1: x0 + w, y1: y0 + h },
            class: SymbolClass::Wall,
        })
    }

    fn propose_scale(&mut self) -> Option<Shape> {
        let n_ticks = self.spec.scale_ticks as i64;
        let min_len = (2 * self.spec.min_symbol_size as i64)
            .max(16)
            .max(MIN_KEYPOINT_SPACING * (n_ticks + 1));
        let max_len = min_len.max(2 * self.spec.max_symbol_size as i64);
        let len = self.rng.random_range(min_len..=max_len);
        let horizontal = self.rng.random_bool(0.5);
        let ticks = (1..=n_ticks)
            .map(|k| (len as f64 * k as f64 / (n_ticks + 1) as f64).round() as i64)
            .collect();
        let (x, y) = if horizontal {
            let (x, y) = self.random_origin(len, 2 * TICK_HALF)?;
            (x, y + TICK_HALF)
        } else {
            let (x, y) = self.random_origin(2 * TICK_HALF, len)?;
            (x + TICK_HALF, y)
        };
        Some(Shape::Scale {
            x,
            y,
            len,
            horizontal,
            ticks,
        })
    }

    fn place(&mut self, what: &str, index: usize, propose: fn(&mut Self) -> Option<Shape>) -> Result<()> {
        for _ in 0..MAX_ATTEMPTS {
            if let Some(shape) = propose(self) {
                if self.try_accept(shape) {
                    return Ok(());
                }
            }
        }
        Err(Error::Generation(format!(
            "could not place {what} #{index} in a {}x{} image after {MAX_ATTEMPTS} attempts (seed {})",
            self.spec.image_width, self.spec.image_height, self.spec.rng_seed
        )))
    }
}

/// Renders a scene and its annotation. Deterministic in `spec.rng_seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<AnnotatedImage> {
    spec.validate()?;
    let mut placer = Placer {
        spec,
        rng: rng_from_seed(spec.rng_seed),
        shapes: Vec::new(),
        lw: spec.line_width as i64,
    };
    for i in 0..spec.n_blocks {
        placer.place("block", i, Placer::propose_block)?;
    }
    for i in 0..spec.n_walls {
        placer.place("wall", i, Placer::propose_wall)?;
    }
    for i in 0..spec.n_scales {
        placer.place("scale", i, Placer::propose_scale)?;
    }

    let lw = placer.lw;
    let mut raster = Raster::blank(spec.image_width, spec.image_height);
    for shape in &placer.shapes {
        for seg in shape.segments() {
            match seg {
                Seg::H { y, x0, x1 } => raster.fill_rect(x0, y, x1 + lw, y + lw, INK),
                Seg::V { x, y0, y1 } => raster.fill_rect(x, y0, x + lw, y1 + lw, INK),
            }
        }
    }
    if spec.noise_level > 0.0 {
        for y in 0..spec.image_height {
            for x in 0..spec.image_width {
                if placer.rng.random_bool(spec.noise_level) {
                    let v = if raster.get(x, y) == INK { BACKGROUND } else { INK };
                    raster.set(x, y, v);
                }
            }
        }
    }

    let nodes = all_nodes(&placer.shapes);
    let half = lw as f64 / 2.0;
    let keypoints: Vec<Keypoint> = nodes
        .iter()
        .map(|n| Keypoint::new(n.x as f64 + half, n.y as f64 + half, n.kind))
        .collect();
    let index_of = |x: i64, y: i64| nodes.iter().position(|n| n.x == x && n.y == y);

    let mut symbols = Vec::new();
    for shape in &placer.shapes {
        match shape {
            Shape::Rect { rect, class } => {
                let mut on_edge: Vec<usize> = nodes
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| n.kind.family() == crate::taxonomy::Family::Corner && rect.on_boundary(n.x, n.y))
                    .map(|(i, _)| i)
                    .collect();
                on_edge.sort_by_key(|&i| rect.clockwise_rank(nodes[i].x, nodes[i].y));
                symbols.push(RectangleSymbol {
                    class: *class,
                    keypoint_indices: on_edge,
                });
            }
            Shape::Scale { .. } => {
                let idx = scale_nodes(shape)
                    .iter()
                    .map(|n| index_of(n.x, n.y).expect("scale node is in the node list"))
                    .collect();
                symbols.push(RectangleSymbol {
                    class: SymbolClass::Scale,
                    keypoint_indices: idx,
                });
            }
        }
    }

    let region = placer
        .shapes
        .iter()
        .map(|s| s.extent(lw))
        .reduce(|a, b| Extent {
            x0: a.x0.min(b.x0),
            y0: a.y0.min(b.y0),
            x1: a.x1.max(b.x1),
            y1: a.y1.max(b.y1),
        })
        .map(|e| {
            BBox::new(
                (e.x0 - 4).max(0) as f64,
                (e.y0 - 4).max(0) as f64,
                (e.x1 + 4).min(spec.image_width as i64) as f64,
                (e.y1 + 4).min(spec.image_height as i64) as f64,
            )
        })
        .unwrap_or(BBox::new(0.0, 0.0, spec.image_width as f64, spec.image_height as f64));

    Ok(AnnotatedImage {
        raster,
        annotation: Annotation {
            image: String::new(),
            width: spec.image_width,
            height: spec.image_height,
            keypoints,
            regions: vec![RegionBox {
                bbox: region,
                class: "main".into(),
            }],
            symbols,
        },
    })
}
