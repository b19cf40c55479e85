//! Assembling typed keypoints into scale, block and wall symbols.
//!
//! A rectangle is walked clockwise from its top-left vertex: right, down,
//! left, up. Along a leg each vertex either turns the walk (it has an arm
//! pointing back along the leg and one pointing clockwise) or is a collinear
//! junction the walk passes through. Scales are walked right from their left
//! end or down from their top end, passing intermediate ticks.

use serde::{Deserialize, Serialize};

use crate::geom::{BBox, Keypoint, RectangleSymbol, SymbolClass};
use crate::taxonomy::{Direction, Family, KeypointType, NUM_TYPES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupConfig {
    /// Largest deviation across a leg still treated as collinear (pixels).
    pub eps_perp: f64,
    /// Largest deviation accepted on the leg that returns to the start.
    pub eps_close: f64,
    /// Bounding boxes at least this elongated are walls, the rest blocks.
    pub wall_aspect: f64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            eps_perp: 3.0,
            eps_close: 3.0,
            wall_aspect: 3.25,
        }
    }
}

/// How a candidate continues a walk heading in some direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Rectangle vertex: the walk turns clockwise here.
    Turn,
    /// Collinear junction: the walk keeps its direction.
    Pass,
    /// Far end of a scale.
    End,
}

/// Which types may follow which along each direction, and in what role.
#[derive(Debug, Clone)]
pub struct CompatibilityTable {
    /// `[from][direction][to]`
    entries: [[[Option<Role>; NUM_TYPES]; 4]; NUM_TYPES],
}

impl Default for CompatibilityTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl CompatibilityTable {
    pub fn standard() -> Self {
        let mut entries = [[[None; NUM_TYPES]; 4]; NUM_TYPES];
        for from in KeypointType::ALL {
            for dir in Direction::CLOCKWISE {
                for to in KeypointType::ALL {
                    entries[from.channel()][dir.index()][to.channel()] = derive_role(from, to, dir);
                }
            }
        }
        CompatibilityTable { entries }
    }

    pub fn role(&self, from: KeypointType, to: KeypointType, dir: Direction) -> Option<Role> {
        self.entries[from.channel()][dir.index()][to.channel()]
    }

    /// Every type accepted after `from` when heading `dir`.
    pub fn accepted(&self, from: KeypointType, dir: Direction) -> Vec<(KeypointType, Role)> {
        KeypointType::ALL
            .into_iter()
            .filter_map(|to| self.role(from, to, dir).map(|r| (to, r)))
            .collect()
    }
}

fn derive_role(from: KeypointType, to: KeypointType, dir: Direction) -> Option<Role> {
    if from.family() != to.family() || !from.arms().contains(dir) {
        return None;
    }
    let arms = to.arms();
    let back = dir.opposite();
    if !arms.contains(back) {
        return None;
    }
    match to.family() {
        Family::Corner => {
            if arms.contains(dir.clockwise()) {
                Some(Role::Turn)
            } else if arms.contains(dir) {
                Some(Role::Pass)
            } else {
                None
            }
        }
        Family::Scale => match (arms.contains(dir), arms.len()) {
            (true, 2) => Some(Role::Pass),
            (false, 1) => Some(Role::End),
            _ => None,
        },
    }
}

/// Along-leg distance and absolute deviation across it.
fn leg_geometry(a: &Keypoint, b: &Keypoint, dir: Direction) -> (f64, f64) {
    let (ux, uy) = dir.unit();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (dx * ux + dy * uy, (dx * uy - dy * ux).abs())
}

/// True iff `q` lies ahead of `p` along `dir` within `eps_perp` and the
/// table admits `q`'s type after `p`'s in that direction.
pub fn consistence_with(p: &Keypoint, q: &Keypoint, dir: Direction, eps_perp: f64, table: &CompatibilityTable) -> bool {
    let (along, perp) = leg_geometry(p, q, dir);
    along > 0.0 && perp <= eps_perp && table.role(p.kind, q.kind, dir).is_some()
}

/// [`consistence_with`] at the default tolerance and table.
pub fn consistence(p: &Keypoint, q: &Keypoint, dir: Direction) -> bool {
    consistence_with(p, q, dir, GroupConfig::default().eps_perp, &CompatibilityTable::standard())
}

/// Quadrant bit spanned by one horizontal and one vertical direction.
fn quadrant(a: Direction, b: Direction) -> u8 {
    let (h, v) = if a.is_horizontal() { (a, b) } else { (b, a) };
    debug_assert!(h.is_horizontal() && !v.is_horizontal());
    match (h, v) {
        (Direction::Right, Direction::Up) => 1,
        (Direction::Right, Direction::Down) => 2,
        (Direction::Left, Direction::Down) => 4,
        _ => 8,
    }
}

const ALL_QUADRANTS: u8 = 15;

/// Quadrants a walk claims at a vertex it reaches heading `dir`.
fn claimed(role: Role, dir: Direction) -> u8 {
    let inside = dir.clockwise();
    match role {
        Role::Turn => quadrant(dir.opposite(), inside),
        Role::Pass => quadrant(dir, inside) | quadrant(dir.opposite(), inside),
        Role::End => ALL_QUADRANTS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraversalStats {
    /// Start point (index into the input).
    pub start: usize,
    /// States expanded.
    pub steps: usize,
    /// Points in the box the traversal ran in.
    pub box_points: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupResult {
    pub symbols: Vec<RectangleSymbol>,
    /// Input indices no symbol uses, ascending.
    pub unmatched: Vec<usize>,
    pub traversals: Vec<TraversalStats>,
}

/// Groups with the default configuration.
pub fn group_symbols(points: &[Keypoint], boxes: &[BBox]) -> GroupResult {
    group_symbols_with(points, boxes, &GroupConfig::default())
}

/// Each point joins the first box containing it; with no boxes all points
/// form one group. Symbols are reported box by box in start order.
pub fn group_symbols_with(points: &[Keypoint], boxes: &[BBox], cfg: &GroupConfig) -> GroupResult {
    let table = CompatibilityTable::standard();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); boxes.len().max(1)];
    for (i, p) in points.iter().enumerate() {
        if boxes.is_empty() {
            members[0].push(i);
        } else if let Some(b) = boxes.iter().position(|b| b.contains(p.x, p.y)) {
            members[b].push(i);
        }
    }
    let mut occupied = vec![0u8; points.len()];
    let mut result = GroupResult::default();
    for m in &members {
        group_box(points, m, cfg, &table, &mut occupied, &mut result);
    }
    let used: Vec<bool> = {
        let mut u = vec![false; points.len()];
        for s in &result.symbols {
            for &i in &s.keypoint_indices {
                u[i] = true;
            }
        }
        u
    };
    result.unmatched = (0..points.len()).filter(|&i| !used[i]).collect();
    result
}

fn group_box(
    points: &[Keypoint],
    members: &[usize],
    cfg: &GroupConfig,
    table: &CompatibilityTable,
    occupied: &mut [u8],
    out: &mut GroupResult,
) {
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| {
        points[a]
            .y
            .total_cmp(&points[b].y)
            .then(points[a].x.total_cmp(&points[b].x))
            .then(a.cmp(&b))
    });
    for &s in &order {
        let kind = points[s].kind;
        let start_dir = match kind {
            KeypointType::ScaleLeft => Direction::Right,
            KeypointType::ScaleTop => Direction::Down,
            k if k.family() == Family::Corner
                && k.arms().contains(Direction::Right)
                && k.arms().contains(Direction::Down) =>
            {
                Direction::Right
            }
            _ => continue,
        };
        let start_claim = match kind.family() {
            Family::Scale => ALL_QUADRANTS,
            Family::Corner => quadrant(Direction::Right, Direction::Down),
        };
        if occupied[s] & start_claim != 0 {
            continue;
        }
        let mut walk = Walk {
            points,
            members,
            cfg,
            table,
            occupied,
            start: s,
            visited: vec![false; members.len() * 4],
            steps: 0,
            path: vec![(s, start_claim)],
        };
        let closed = walk.extend(s, start_dir);
        let steps = walk.steps;
        let path = walk.path;
        out.traversals.push(TraversalStats {
            start: s,
            steps,
            box_points: members.len(),
            closed,
        });
        if !closed {
            continue;
        }
        let indices: Vec<usize> = path.iter().map(|&(i, _)| i).collect();
        let class = match kind.family() {
            Family::Scale => SymbolClass::Scale,
            Family::Corner => {
                let b = BBox::enclosing(indices.iter().map(|&i| (points[i].x, points[i].y))).expect("non-empty cycle");
                let (lo, hi) = (b.width().min(b.height()), b.width().max(b.height()));
                if hi >= cfg.wall_aspect * lo {
                    SymbolClass::Wall
                } else {
                    SymbolClass::Block
                }
            }
        };
        for &(i, q) in &path {
            occupied[i] |= q;
        }
        out.symbols.push(RectangleSymbol {
            class,
            keypoint_indices: indices,
        });
    }
}

struct Walk<'a> {
    points: &'a [Keypoint],
    members: &'a [usize],
    cfg: &'a GroupConfig,
    table: &'a CompatibilityTable,
    occupied: &'a [u8],
    start: usize,
    /// `(member slot, direction)` states already expanded.
    visited: Vec<bool>,
    steps: usize,
    /// Vertices so far with the quadrants each would claim.
    path: Vec<(usize, u8)>,
}

impl Walk<'_> {
    /// Depth-first continuation from `at` heading `dir`; nearest candidate first.
    fn extend(&mut self, at: usize, dir: Direction) -> bool {
        let slot = self.members.iter().position(|&m| m == at).expect("walk stays in its box");
        let state = slot * 4 + dir.index();
        if self.visited[state] {
            return false;
        }
        self.visited[state] = true;
        self.steps += 1;

        let p = self.points[at];
        let family = p.kind.family();
        let tol = self.cfg.eps_perp.max(self.cfg.eps_close);
        let mut ahead: Vec<(f64, f64, usize)> = self
            .members
            .iter()
            .filter(|&&j| j != at && self.points[j].kind.family() == family)
            .filter_map(|&j| {
                let (along, perp) = leg_geometry(&p, &self.points[j], dir);
                (along > 0.0 && perp <= tol).then_some((along.hypot(perp), perp, j))
            })
            .collect();
        ahead.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

        for (_, perp, j) in ahead {
            let q = self.points[j];
            let role = self.table.role(p.kind, q.kind, dir);
            if j == self.start {
                if family == Family::Corner && dir == Direction::Up && role == Some(Role::Turn) && perp <= self.cfg.eps_close {
                    return true;
                }
            } else if let Some(role) = role.filter(|_| perp <= self.cfg.eps_perp) {
                let next = match (role, family) {
                    (Role::Turn, Family::Corner) if dir != Direction::Up => Some(dir.clockwise()),
                    (Role::Pass, _) => Some(dir),
                    (Role::End, Family::Scale) => None,
                    _ => {
                        if self.blocks(&q, dir) {
                            break;
                        }
                        continue;
                    }
                };
                let claim = claimed(role, dir);
                if self.occupied[j] & claim == 0 && !self.path.iter().any(|&(i, _)| i == j) {
                    self.path.push((j, claim));
                    let done = match next {
                        None => true,
                        Some(d) => self.extend(j, d),
                    };
                    if done {
                        return true;
                    }
                    self.path.pop();
                }
            }
            if self.blocks(&q, dir) {
                break;
            }
        }
        false
    }

    /// A point with an arm into the walk's interior side closes off the leg:
    /// nothing beyond it can belong to the same rectangle.
    fn blocks(&self, q: &Keypoint, dir: Direction) -> bool {
        match q.kind.family() {
            Family::Corner => q.kind.arms().contains(dir.clockwise()),
            Family::Scale => !q.kind.arms().contains(dir.opposite()),
        }
    }
}
