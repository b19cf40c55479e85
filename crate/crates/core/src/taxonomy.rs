//! The fifteen keypoint types and the stroke directions they are built from.
//!
//! Types 1..=6 mark scale bars (two end types and one intermediate tick type
//! per axis), types 7..=15 mark the corners and junctions of blocks and walls.
//! A corner type is fully described by the set of arms (stroke directions)
//! leaving the point.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of keypoint types, which is also the number of heatmap channels.
pub const NUM_TYPES: usize = 15;

/// Axis-aligned stroke direction in image coordinates (y grows downwards).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Right,
    Down,
    Left,
    Up,
}

impl Direction {
    /// Clockwise traversal order starting at `Right`.
    pub const CLOCKWISE: [Direction; 4] = [
        Direction::Right,
        Direction::Down,
        Direction::Left,
        Direction::Up,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn clockwise(self) -> Direction {
        Self::CLOCKWISE[(self.index() + 1) % 4]
    }

    pub fn opposite(self) -> Direction {
        Self::CLOCKWISE[(self.index() + 2) % 4]
    }

    /// Unit step `(dx, dy)`.
    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::Right => (1.0, 0.0),
            Direction::Down => (0.0, 1.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Up => (0.0, -1.0),
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::Right | Direction::Left)
    }
}

/// A set of stroke directions leaving a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Arms(u8);

impl Arms {
    pub const EMPTY: Arms = Arms(0);

    pub fn of(dirs: &[Direction]) -> Arms {
        dirs.iter().fold(Arms::EMPTY, |acc, &d| acc.with(d))
    }

    pub fn with(self, d: Direction) -> Arms {
        Arms(self.0 | (1 << d.index()))
    }

    pub fn contains(self, d: Direction) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Two opposite arms and nothing else: the middle of a straight stroke.
    pub fn is_straight(self) -> bool {
        self == Arms::of(&[Direction::Left, Direction::Right])
            || self == Arms::of(&[Direction::Up, Direction::Down])
    }

    /// True for arm sets that mark a keypoint: a bend, a junction or a cross.
    /// Isolated stroke ends and straight runs are not keypoints.
    pub fn is_node(self) -> bool {
        self.len() >= 3 || (self.len() == 2 && !self.is_straight())
    }
}

impl fmt::Display for Arms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [(Direction::Right, 'R'), (Direction::Down, 'D'), (Direction::Left, 'L'), (Direction::Up, 'U')];
        f.write_str("{")?;
        for (d, c) in names {
            if self.contains(d) {
                write!(f, "{c}")?;
            }
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Scale,
    Corner,
}

/// One of the fifteen keypoint types. Serialized as its integer `type_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum KeypointType {
    /// Left end of a horizontal scale.
    ScaleLeft = 1,
    /// Right end of a horizontal scale.
    ScaleRight = 2,
    /// Top end of a vertical scale.
    ScaleTop = 3,
    /// Bottom end of a vertical scale.
    ScaleBottom = 4,
    /// Intermediate tick on a horizontal scale.
    ScaleTickH = 5,
    /// Intermediate tick on a vertical scale.
    ScaleTickV = 6,
    /// Outer corner with arms right and down.
    CornerNw = 7,
    /// Outer corner with arms left and down.
    CornerNe = 8,
    /// Outer corner with arms left and up.
    CornerSe = 9,
    /// Outer corner with arms right and up.
    CornerSw = 10,
    /// T-junction whose stem points up: arms left, right, up.
    TeeN = 11,
    /// T-junction whose stem points down: arms left, right, down.
    TeeS = 12,
    /// T-junction whose stem points right: arms up, down, right.
    TeeE = 13,
    /// T-junction whose stem points left: arms up, down, left.
    TeeW = 14,
    Cross = 15,
}

impl KeypointType {
    pub const ALL: [KeypointType; NUM_TYPES] = [
        KeypointType::ScaleLeft,
        KeypointType::ScaleRight,
        KeypointType::ScaleTop,
        KeypointType::ScaleBottom,
        KeypointType::ScaleTickH,
        KeypointType::ScaleTickV,
        KeypointType::CornerNw,
        KeypointType::CornerNe,
        KeypointType::CornerSe,
        KeypointType::CornerSw,
        KeypointType::TeeN,
        KeypointType::TeeS,
        KeypointType::TeeE,
        KeypointType::TeeW,
        KeypointType::Cross,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Heatmap channel, `id - 1`.
    pub fn channel(self) -> usize {
        self as usize - 1
    }

    pub fn from_id(id: u8) -> Option<KeypointType> {
        (1..=NUM_TYPES as u8)
            .contains(&id)
            .then(|| Self::ALL[id as usize - 1])
    }

    pub fn from_channel(c: usize) -> Option<KeypointType> {
        Self::ALL.get(c).copied()
    }

    pub fn family(self) -> Family {
        if self.id() <= 6 {
            Family::Scale
        } else {
            Family::Corner
        }
    }

    /// Directions along which grouping may leave a point of this type.
    ///
    /// For corners these are the stroke arms. For scales only the directions
    /// along the bar are listed, so a tick never leads off the scale.
    pub fn arms(self) -> Arms {
        use Direction::*;
        match self {
            KeypointType::ScaleLeft => Arms::of(&[Right]),
            KeypointType::ScaleRight => Arms::of(&[Left]),
            KeypointType::ScaleTop => Arms::of(&[Down]),
            KeypointType::ScaleBottom => Arms::of(&[Up]),
            KeypointType::ScaleTickH => Arms::of(&[Left, Right]),
            KeypointType::ScaleTickV => Arms::of(&[Up, Down]),
            _ => self.stroke_arms(),
        }
    }

    /// Arms of the drawn strokes meeting at the point, including scale ticks.
    pub fn stroke_arms(self) -> Arms {
        use Direction::*;
        match self {
            KeypointType::ScaleLeft => Arms::of(&[Right, Up, Down]),
            KeypointType::ScaleRight => Arms::of(&[Left, Up, Down]),
            KeypointType::ScaleTop => Arms::of(&[Down, Left, Right]),
            KeypointType::ScaleBottom => Arms::of(&[Up, Left, Right]),
            KeypointType::ScaleTickH | KeypointType::ScaleTickV | KeypointType::Cross => {
                Arms::of(&[Left, Right, Up, Down])
            }
            KeypointType::CornerNw => Arms::of(&[Right, Down]),
            KeypointType::CornerNe => Arms::of(&[Left, Down]),
            KeypointType::CornerSe => Arms::of(&[Left, Up]),
            KeypointType::CornerSw => Arms::of(&[Right, Up]),
            KeypointType::TeeN => Arms::of(&[Left, Right, Up]),
            KeypointType::TeeS => Arms::of(&[Left, Right, Down]),
            KeypointType::TeeE => Arms::of(&[Up, Down, Right]),
            KeypointType::TeeW => Arms::of(&[Up, Down, Left]),
        }
    }

    /// The corner type whose arms are exactly `arms`, if any.
    pub fn corner_from_arms(arms: Arms) -> Option<KeypointType> {
        Self::ALL[6..]
            .iter()
            .copied()
            .find(|t| t.stroke_arms() == arms)
    }

    pub fn name(self) -> &'static str {
        match self {
            KeypointType::ScaleLeft => "scale-left",
            KeypointType::ScaleRight => "scale-right",
            KeypointType::ScaleTop => "scale-top",
            KeypointType::ScaleBottom => "scale-bottom",
            KeypointType::ScaleTickH => "scale-tick-h",
            KeypointType::ScaleTickV => "scale-tick-v",
            KeypointType::CornerNw => "corner-nw",
            KeypointType::CornerNe => "corner-ne",
            KeypointType::CornerSe => "corner-se",
            KeypointType::CornerSw => "corner-sw",
            KeypointType::TeeN => "tee-n",
            KeypointType::TeeS => "tee-s",
            KeypointType::TeeE => "tee-e",
            KeypointType::TeeW => "tee-w",
            KeypointType::Cross => "cross",
        }
    }
}

impl From<KeypointType> for u8 {
    fn from(t: KeypointType) -> u8 {
        t.id()
    }
}

impl TryFrom<u8> for KeypointType {
    type Error = String;

    fn try_from(id: u8) -> Result<Self, Self::Error> {
        KeypointType::from_id(id).ok_or_else(|| format!("type_id out of range ({id})"))
    }
}

impl fmt::Display for KeypointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.id(), self.name())
    }
}
