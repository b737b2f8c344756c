//! Sublattice decomposition and per-sublattice adjustment order.

use thiserror::Error;

use crate::cost::CostPair;

pub const SUBLATTICE_COUNT: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("{width}x{height} is not divisible into 8x8 blocks")]
    IndivisibleDimensions { width: usize, height: usize },
    #[error("empty image")]
    Empty,
    #[error("sublattice {0} does not exist")]
    NoSuchSublattice(usize),
    #[error("cost map is {got:?}, scheme expects {want:?}")]
    DimensionMismatch { got: (usize, usize), want: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SchemeKind {
    /// Pixel parity: element (i, j) belongs to sublattice `2*(i%2) + j%2`.
    Spatial2x2,
    /// 8x8 block parity: the block at (i/8, j/8) belongs to `2*((i/8)%2) + (j/8)%2`.
    JpegBlockParity,
}

impl std::str::FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spatial2x2" => Ok(Self::Spatial2x2),
            "jpegblock" => Ok(Self::JpegBlockParity),
            other => Err(format!("unknown scheme {other:?} (expected spatial2x2 or jpegblock)")),
        }
    }
}

/// A partition of the row-major element indices of a `width`x`height` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SublatticeScheme {
    pub kind: SchemeKind,
    pub width: usize,
    pub height: usize,
    assignment: Vec<u8>,
    members: Vec<Vec<usize>>,
}

impl SublatticeScheme {
    pub fn count(&self) -> usize {
        self.members.len()
    }

    /// Sublattice id of a row-major element index.
    pub fn sublattice_of(&self, index: usize) -> usize {
        usize::from(self.assignment[index])
    }

    /// Row-major indices of one sublattice, ascending.
    pub fn members(&self, id: usize) -> &[usize] {
        &self.members[id]
    }
}

pub fn decompose(width: usize, height: usize, kind: SchemeKind) -> Result<SublatticeScheme, LatticeError> {
    if width == 0 || height == 0 {
        return Err(LatticeError::Empty);
    }
    if kind == SchemeKind::JpegBlockParity && (width % 8 != 0 || height % 8 != 0) {
        return Err(LatticeError::IndivisibleDimensions { width, height });
    }
    let cell = match kind {
        SchemeKind::Spatial2x2 => 1,
        SchemeKind::JpegBlockParity => 8,
    };
    let mut assignment = Vec::with_capacity(width * height);
    let mut members = vec![Vec::new(); SUBLATTICE_COUNT];
    for i in 0..height {
        for j in 0..width {
            let id = 2 * ((i / cell) % 2) + (j / cell) % 2;
            assignment.push(id as u8);
            members[id].push(i * width + j);
        }
    }
    Ok(SublatticeScheme { kind, width, height, assignment, members })
}

/// Order in which a sublattice's elements are assigned polarities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjustmentOrder {
    pub sublattice_id: usize,
    /// Row-major element indices, cheapest first, fully wet elements last.
    pub sequence: Vec<usize>,
    /// Number of leading entries of `sequence` that are not fully wet.
    pub adjustable: usize,
}

impl AdjustmentOrder {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

/// Sorts a sublattice by scalar cost `min(ρ⁺, ρ⁻)`, ascending, ties by index.
/// Elements wet in both directions go last.
pub fn ddo_order(cost: &CostPair, scheme: &SublatticeScheme, sublattice_id: usize) -> Result<AdjustmentOrder, LatticeError> {
    if sublattice_id >= scheme.count() {
        return Err(LatticeError::NoSuchSublattice(sublattice_id));
    }
    if (cost.width(), cost.height()) != (scheme.width, scheme.height) {
        return Err(LatticeError::DimensionMismatch {
            got: (cost.width(), cost.height()),
            want: (scheme.width, scheme.height),
        });
    }
    let mut sequence = scheme.members(sublattice_id).to_vec();
    sequence.sort_by(|&a, &b| {
        cost.is_fully_wet(a)
            .cmp(&cost.is_fully_wet(b))
            .then_with(|| cost.scalar(a).total_cmp(&cost.scalar(b)))
            .then_with(|| a.cmp(&b))
    });
    let adjustable = sequence.iter().filter(|&&i| !cost.is_fully_wet(i)).count();
    Ok(AdjustmentOrder { sublattice_id, sequence, adjustable })
}
