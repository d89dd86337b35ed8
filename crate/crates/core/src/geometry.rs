//! Kernel geometry: integer cell sets, the sensor/core regions of a kernel
//! shape, and the morphological helpers used to build them.
//!
//! Coordinates are `(row, col)` grid offsets. Every set iterates in row-major
//! order, which fixes the row and column layout of all attention matrices
//! built from a shape.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A grid offset. Ordering is row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn offset(self, d_row: i32, d_col: i32) -> Self {
        Self::new(self.row + d_row, self.col + d_col)
    }
}

impl From<[i32; 2]> for Cell {
    fn from(v: [i32; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl From<(i32, i32)> for Cell {
    fn from((row, col): (i32, i32)) -> Self {
        Self::new(row, col)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Ordered, duplicate-free set of cells.
///
/// A `CellSet` is not forced into normalized position: a kernel core lives in
/// its sensor's frame and absolute instance cells live in grid coordinates.
/// [`CellSet::normalized`] produces the canonical min-row = min-col = 0 form.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellSet {
    cells: BTreeSet<Cell>,
}

impl CellSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Full `height x width` rectangle anchored at the origin.
    pub fn rect(height: i32, width: i32) -> Self {
        (0..height).flat_map(|r| (0..width).map(move |c| Cell::new(r, c))).collect()
    }

    /// Rows of the given widths, each horizontally centred in a frame as wide
    /// as the widest row. Widths must share the parity of the widest row.
    pub fn centered_rows(widths: &[i32]) -> Self {
        let frame = widths.iter().copied().max().unwrap_or(0);
        widths
            .iter()
            .enumerate()
            .flat_map(|(r, &w)| {
                let start = (frame - w) / 2;
                (start..start + w).map(move |c| Cell::new(r as i32, c))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains(&cell)
    }

    pub fn insert(&mut self, cell: Cell) -> bool {
        self.cells.insert(cell)
    }

    pub fn remove(&mut self, cell: Cell) -> bool {
        self.cells.remove(&cell)
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells.iter().copied()
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.cells.is_subset(&other.cells)
    }

    /// Row-major position of `cell` within the set.
    pub fn position(&self, cell: Cell) -> Option<usize> {
        if !self.contains(cell) {
            return None;
        }
        Some(self.cells.range(..cell).count())
    }

    /// Inclusive bounding box `(min, max)`.
    pub fn bounds(&self) -> Option<(Cell, Cell)> {
        let mut it = self.iter();
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for c in it {
            lo.row = lo.row.min(c.row);
            lo.col = lo.col.min(c.col);
            hi.row = hi.row.max(c.row);
            hi.col = hi.col.max(c.col);
        }
        Some((lo, hi))
    }

    /// `(height, width)` of the bounding box; `(0, 0)` when empty.
    pub fn extent(&self) -> (i32, i32) {
        match self.bounds() {
            Some((lo, hi)) => (hi.row - lo.row + 1, hi.col - lo.col + 1),
            None => (0, 0),
        }
    }

    pub fn translate(&self, d_row: i32, d_col: i32) -> Self {
        self.iter().map(|c| c.offset(d_row, d_col)).collect()
    }

    /// Shifts the set so its minimum row and column are 0. Returns the
    /// normalized set and the original minimum corner.
    pub fn normalized(&self) -> (Self, Cell) {
        match self.bounds() {
            Some((lo, _)) => (self.translate(-lo.row, -lo.col), lo),
            None => (Self::new(), Cell::new(0, 0)),
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.bounds().is_none_or(|(lo, _)| lo.row == 0 && lo.col == 0)
    }

    /// Cells inside `[0, height) x [0, width)`.
    pub fn clip(&self, height: usize, width: usize) -> Self {
        self.iter()
            .filter(|c| c.row >= 0 && c.col >= 0 && (c.row as usize) < height && (c.col as usize) < width)
            .collect()
    }

    pub fn intersection(&self, other: &CellSet) -> Self {
        self.cells.intersection(&other.cells).copied().collect()
    }

    pub fn union(&self, other: &CellSet) -> Self {
        self.cells.union(&other.cells).copied().collect()
    }

    /// Quarter turn `(r, c) -> (c, -r)`, renormalized.
    pub fn rotate90(&self) -> Self {
        let rotated: CellSet = self.iter().map(|c| Cell::new(c.col, -c.row)).collect();
        rotated.normalized().0
    }

    pub fn to_pairs(&self) -> Vec<[i32; 2]> {
        self.iter().map(Into::into).collect()
    }
}

impl FromIterator<Cell> for CellSet {
    fn from_iter<I: IntoIterator<Item = Cell>>(iter: I) -> Self {
        Self { cells: iter.into_iter().collect() }
    }
}

impl<'a> IntoIterator for &'a CellSet {
    type Item = &'a Cell;
    type IntoIter = std::collections::btree_set::Iter<'a, Cell>;

    fn into_iter(self) -> Self::IntoIter {
        self.cells.iter()
    }
}

/// Cells whose four axis neighbours all belong to the set, kept in the
/// input's frame.
pub fn interior_cells(cells: &CellSet) -> CellSet {
    cells
        .iter()
        .filter(|&c| {
            [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .all(|&(dr, dc)| cells.contains(c.offset(dr, dc)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Chebyshev,
    Manhattan,
}

/// Union of norm balls of `radius` around every cell, normalized.
pub fn dilate(cells: &CellSet, radius: u32, norm: Norm) -> CellSet {
    dilate_in_place(cells, radius, norm).normalized().0
}

/// Same as [`dilate`] but kept in the input frame.
pub(crate) fn dilate_in_place(cells: &CellSet, radius: u32, norm: Norm) -> CellSet {
    let r = radius as i32;
    let mut out = CellSet::new();
    for c in cells.iter() {
        for dr in -r..=r {
            for dc in -r..=r {
                let inside = match norm {
                    Norm::Chebyshev => true,
                    Norm::Manhattan => dr.abs() + dc.abs() <= r,
                };
                if inside {
                    out.insert(c.offset(dr, dc));
                }
            }
        }
    }
    out
}

/// Sensor region plus update core of one kernel shape class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KernelShape {
    shape_id: String,
    sensor: CellSet,
    core: CellSet,
}

impl KernelShape {
    /// Builds a shape from a sensor and a core given in the same frame. Both
    /// are shifted together so the sensor is normalized.
    pub fn new(sensor: CellSet, core: CellSet) -> Result<Self> {
        if core.is_empty() {
            return Err(Error::InvalidArgument("kernel core must contain at least one cell".into()));
        }
        if !core.is_subset(&sensor) {
            return Err(Error::InvalidArgument("kernel core must lie inside its sensor".into()));
        }
        let (sensor, lo) = sensor.normalized();
        let core = core.translate(-lo.row, -lo.col);
        let shape_id = content_id(&sensor, &core);
        Ok(Self { shape_id, sensor, core })
    }

    pub fn id(&self) -> &str {
        &self.shape_id
    }

    pub fn sensor(&self) -> &CellSet {
        &self.sensor
    }

    pub fn core(&self) -> &CellSet {
        &self.core
    }

    /// Number of sensor cells, `S`.
    pub fn sensor_len(&self) -> usize {
        self.sensor.len()
    }

    /// Number of update cells, `U`.
    pub fn core_len(&self) -> usize {
        self.core.len()
    }

    /// Row index within the sensor of every core cell, in core order.
    pub fn core_rows_in_sensor(&self) -> Vec<usize> {
        let sensor: Vec<Cell> = self.sensor.iter().collect();
        self.core
            .iter()
            .map(|c| sensor.binary_search(&c).expect("core is a subset of sensor"))
            .collect()
    }
}

fn content_id(sensor: &CellSet, core: &CellSet) -> String {
    let mut hasher = Sha256::new();
    for (tag, set) in [(b'S', sensor), (b'U', core)] {
        hasher.update([tag]);
        hasher.update((set.len() as u32).to_le_bytes());
        for c in set.iter() {
            hasher.update(c.row.to_le_bytes());
            hasher.update(c.col.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("s{}u{}-{}", sensor.len(), core.len(), hex)
}

/// The canonical doughnut kernel: a 24-cell rasterized octagon with row
/// widths (2,4,6,6,4,2) and its 12-cell interior as the update core.
pub fn octagon_shape() -> KernelShape {
    let sensor = CellSet::centered_rows(&[2, 4, 6, 6, 4, 2]);
    let core = interior_cells(&sensor);
    KernelShape::new(sensor, core).expect("octagon interior is nonempty")
}

/// Square core of side `core_side` whose sensor is its Chebyshev dilation by
/// `sensor_radius`.
pub fn square_shape(core_side: u32, sensor_radius: u32) -> Result<KernelShape> {
    if core_side == 0 {
        return Err(Error::InvalidArgument("core_side must be positive".into()));
    }
    let core = CellSet::rect(core_side as i32, core_side as i32);
    let sensor = dilate_in_place(&core, sensor_radius, Norm::Chebyshev);
    KernelShape::new(sensor, core)
}

/// Update-cell position minus sensor-cell position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Displacement {
    pub d_row: i32,
    pub d_col: i32,
}

impl Displacement {
    pub fn between(update: Cell, sensor: Cell) -> Self {
        Self { d_row: update.row - sensor.row, d_col: update.col - sensor.col }
    }

    pub fn manhattan(self) -> u32 {
        self.d_row.unsigned_abs() + self.d_col.unsigned_abs()
    }

    pub fn squared_euclid(self) -> u32 {
        (self.d_row * self.d_row + self.d_col * self.d_col) as u32
    }
}

/// Distinct displacements of a shape and the (update, sensor) -> index map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisplacementTable {
    pub distinct: Vec<Displacement>,
    /// `U * S` entries; entry `u * S + s` indexes `distinct`.
    pub index: Vec<usize>,
    pub core_len: usize,
    pub sensor_len: usize,
}

impl DisplacementTable {
    pub fn get(&self, u: usize, s: usize) -> Displacement {
        self.distinct[self.index[u * self.sensor_len + s]]
    }
}

pub fn displacements(shape: &KernelShape) -> DisplacementTable {
    let pairs: Vec<Displacement> = shape
        .core()
        .iter()
        .flat_map(|u| shape.sensor().iter().map(move |s| Displacement::between(u, s)))
        .collect();
    let distinct: Vec<Displacement> =
        pairs.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let index = pairs
        .iter()
        .map(|d| distinct.binary_search(d).expect("every pair is in the distinct list"))
        .collect();
    DisplacementTable {
        distinct,
        index,
        core_len: shape.core_len(),
        sensor_len: shape.sensor_len(),
    }
}
