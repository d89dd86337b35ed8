//! Full-grid patterns: placements of kernel instances whose update cores
//! partition an `H x W` grid while their sensors overlap.
//!
//! Border kernels are produced by clipping lattice kernels to the grid, so no
//! cell outside the grid is ever referenced.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{self, Cell, CellSet, KernelShape, Norm};

pub const LAYOUT_VERSION: u32 = 1;

/// One placed kernel. `anchor` is the grid position of the shape frame
/// origin, so `sensor_cells = shape.sensor + anchor`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelInstance {
    pub shape_id: String,
    pub anchor: Cell,
    pub core_cells: CellSet,
    pub sensor_cells: CellSet,
}

impl KernelInstance {
    fn from_regions(sensor_cells: CellSet, core_cells: CellSet) -> Result<(Self, KernelShape)> {
        let shape = KernelShape::new(sensor_cells.clone(), core_cells.clone())?;
        let (_, anchor) = sensor_cells.normalized();
        let inst = Self { shape_id: shape.id().to_string(), anchor, core_cells, sensor_cells };
        Ok((inst, shape))
    }

    /// Flat `row * width + col` index of every sensor cell, row-major.
    pub fn sensor_rows(&self, width: usize) -> Vec<usize> {
        flat_indices(&self.sensor_cells, width)
    }

    pub fn core_rows(&self, width: usize) -> Vec<usize> {
        flat_indices(&self.core_cells, width)
    }
}

fn flat_indices(cells: &CellSet, width: usize) -> Vec<usize> {
    cells.iter().map(|c| c.row as usize * width + c.col as usize).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternLayout {
    pub height: usize,
    pub width: usize,
    pub phase: (i32, i32),
    pub shapes: BTreeMap<String, KernelShape>,
    pub instances: Vec<KernelInstance>,
}

impl PatternLayout {
    /// Assembles a layout from unclipped (sensor, core) regions in grid
    /// coordinates: regions are clipped, empty cores dropped, shapes
    /// collected and instances sorted by anchor.
    fn from_regions(
        height: usize,
        width: usize,
        phase: (i32, i32),
        regions: impl IntoIterator<Item = (CellSet, CellSet)>,
    ) -> Result<Self> {
        let mut shapes = BTreeMap::new();
        let mut instances = Vec::new();
        for (sensor, core) in regions {
            let core = core.clip(height, width);
            if core.is_empty() {
                continue;
            }
            let sensor = sensor.clip(height, width);
            let (inst, shape) = KernelInstance::from_regions(sensor, core)?;
            shapes.entry(inst.shape_id.clone()).or_insert(shape);
            instances.push(inst);
        }
        instances.sort_by(|a, b| (a.anchor, &a.shape_id).cmp(&(b.anchor, &b.shape_id)));
        Ok(Self { height, width, phase, shapes, instances })
    }

    /// One instance whose core and sensor are the whole grid.
    pub fn full_window(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("grid must be nonempty".into()));
        }
        let all = CellSet::rect(height as i32, width as i32);
        Self::from_regions(height, width, (0, 0), [(all.clone(), all)])
    }

    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    pub fn shape_of(&self, inst: &KernelInstance) -> Option<&KernelShape> {
        self.shapes.get(&inst.shape_id)
    }

    /// Shape id with the most instances (the interior class for planned
    /// patterns); ties break on the smaller id.
    pub fn dominant_shape(&self) -> Option<&KernelShape> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in &self.instances {
            *counts.entry(inst.shape_id.as_str()).or_default() += 1;
        }
        let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
        self.shapes.get(*best.0)
    }

    pub fn validate(&self) -> std::result::Result<(), ValidationReport> {
        validate(self)
    }
}

/// Plans the octagon pattern: canonical octagon kernels on the skew lattice
/// spanned by (2, 3) and (-2, 3), shifted by `phase` and clipped to the grid.
pub fn plan_octagon_pattern(height: usize, width: usize, phase: (i32, i32)) -> Result<PatternLayout> {
    if height < 6 || width < 6 {
        return Err(Error::GridTooSmall { height, width });
    }
    let oct = geometry::octagon_shape();
    let (h, w) = (height as i32, width as i32);
    let (pr, pc) = phase;
    // anchor = phase + a(2,3) + b(-2,3) = phase + (2n, 3m) with n = a - b,
    // m = a + b of equal parity; the 6x6 frame must reach the grid
    let n_range = (-6 - pr).div_euclid(2)..=(h - pr).div_euclid(2) + 1;
    let m_range = (-6 - pc).div_euclid(3)..=(w - pc).div_euclid(3) + 1;
    let mut regions = Vec::new();
    for n in n_range {
        for m in m_range.clone() {
            if (n - m).rem_euclid(2) != 0 {
                continue;
            }
            let (r0, c0) = (pr + 2 * n, pc + 3 * m);
            regions.push((oct.sensor().translate(r0, c0), oct.core().translate(r0, c0)));
        }
    }
    PatternLayout::from_regions(height, width, phase, regions)
}

/// Non-overlapping `core_side`-square cores whose sensors are Chebyshev
/// dilations by `sensor_radius`, clipped to the grid.
pub fn plan_square_pattern(
    height: usize,
    width: usize,
    core_side: usize,
    sensor_radius: usize,
) -> Result<PatternLayout> {
    if core_side == 0 {
        return Err(Error::InvalidArgument("core_side must be positive".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("grid must be nonempty".into()));
    }
    let shape = geometry::square_shape(core_side as u32, sensor_radius as u32)?;
    let r = sensor_radius as i32;
    let side = core_side as i32;
    let mut regions = Vec::new();
    for i in 0..height.div_ceil(core_side) as i32 {
        for j in 0..width.div_ceil(core_side) as i32 {
            // the shape frame origin sits `radius` above-left of the core
            let (r0, c0) = (i * side - r, j * side - r);
            regions.push((shape.sensor().translate(r0, c0), shape.core().translate(r0, c0)));
        }
    }
    PatternLayout::from_regions(height, width, (0, 0), regions)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    UncoveredCell { cell: [i32; 2] },
    DoubleCoveredCell { cell: [i32; 2], count: usize },
    OutOfBounds { instance: usize, cell: [i32; 2] },
    CoreNotInSensor { instance: usize, cell: [i32; 2] },
    EmptyCore { instance: usize },
    ShapeMismatch { instance: usize, shape: String, reason: String },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::UncoveredCell { .. } => "uncovered-cell",
            Violation::DoubleCoveredCell { .. } => "double-covered-cell",
            Violation::OutOfBounds { .. } => "out-of-bounds",
            Violation::CoreNotInSensor { .. } => "core-not-in-sensor",
            Violation::EmptyCore { .. } => "empty-core",
            Violation::ShapeMismatch { .. } => "shape-mismatch",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.violations.iter().filter(|v| v.kind() == kind).count()
    }

    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for v in &self.violations {
            *out.entry(v.kind()).or_default() += 1;
        }
        out
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let counts = self.counts();
        let parts: Vec<String> = counts.iter().map(|(k, n)| format!("{k} x{n}")).collect();
        write!(f, "{} violation(s): {}", self.violations.len(), parts.join(", "))
    }
}

pub fn validate(layout: &PatternLayout) -> std::result::Result<(), ValidationReport> {
    let (h, w) = (layout.height, layout.width);
    let mut violations = Vec::new();
    let mut cover = vec![0usize; h * w];
    let in_grid = |c: Cell| c.row >= 0 && c.col >= 0 && (c.row as usize) < h && (c.col as usize) < w;

    for (i, inst) in layout.instances.iter().enumerate() {
        if inst.core_cells.is_empty() {
            violations.push(Violation::EmptyCore { instance: i });
        }
        for c in inst.sensor_cells.iter() {
            if !in_grid(c) {
                violations.push(Violation::OutOfBounds { instance: i, cell: c.into() });
            }
        }
        for c in inst.core_cells.iter() {
            if !inst.sensor_cells.contains(c) {
                violations.push(Violation::CoreNotInSensor { instance: i, cell: c.into() });
            }
            if in_grid(c) {
                cover[c.row as usize * w + c.col as usize] += 1;
            } else if inst.sensor_cells.contains(c) {
                // already reported through the sensor scan
            } else {
                violations.push(Violation::OutOfBounds { instance: i, cell: c.into() });
            }
        }
        match layout.shapes.get(&inst.shape_id) {
            None => violations.push(Violation::ShapeMismatch {
                instance: i,
                shape: inst.shape_id.clone(),
                reason: "shape id not in shape table".into(),
            }),
            Some(shape) => {
                let (dr, dc) = (inst.anchor.row, inst.anchor.col);
                if shape.sensor().translate(dr, dc) != inst.sensor_cells
                    || shape.core().translate(dr, dc) != inst.core_cells
                {
                    violations.push(Violation::ShapeMismatch {
                        instance: i,
                        shape: inst.shape_id.clone(),
                        reason: "instance cells differ from the translated shape".into(),
                    });
                }
            }
        }
    }

    for (idx, &n) in cover.iter().enumerate() {
        let cell = [(idx / w) as i32, (idx % w) as i32];
        match n {
            0 => violations.push(Violation::UncoveredCell { cell }),
            1 => {}
            count => violations.push(Violation::DoubleCoveredCell { cell, count }),
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationReport { violations })
    }
}

/// Per-cell count of instances whose sensor contains the cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiplicityGrid {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl MultiplicityGrid {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.width + col]
    }

    pub fn min(&self) -> u32 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

pub fn multiplicity(layout: &PatternLayout) -> MultiplicityGrid {
    let mut counts = vec![0u32; layout.cell_count()];
    for inst in &layout.instances {
        for idx in inst.sensor_rows(layout.width) {
            counts[idx] += 1;
        }
    }
    MultiplicityGrid { height: layout.height, width: layout.width, counts }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeDoc {
    core: Vec<[i32; 2]>,
    sensor: Vec<[i32; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    anchor: [i32; 2],
    shape: String,
}

// fields are declared alphabetically so the emitted keys are sorted
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutDoc {
    height: usize,
    instances: Vec<InstanceDoc>,
    phase: [i32; 2],
    shapes: BTreeMap<String, ShapeDoc>,
    version: u32,
    width: usize,
}

pub fn serialize_layout(layout: &PatternLayout) -> Vec<u8> {
    let doc = LayoutDoc {
        height: layout.height,
        instances: layout
            .instances
            .iter()
            .map(|i| InstanceDoc { anchor: i.anchor.into(), shape: i.shape_id.clone() })
            .collect(),
        phase: [layout.phase.0, layout.phase.1],
        shapes: layout
            .shapes
            .iter()
            .map(|(id, s)| {
                (id.clone(), ShapeDoc { core: s.core().to_pairs(), sensor: s.sensor().to_pairs() })
            })
            .collect(),
        version: LAYOUT_VERSION,
        width: layout.width,
    };
    let mut out = serde_json::to_vec(&doc).expect("layout documents always serialize");
    out.push(b'\n');
    out
}

pub fn parse_layout(bytes: &[u8]) -> Result<PatternLayout> {
    let doc: LayoutDoc = serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.version != LAYOUT_VERSION {
        return Err(Error::Parse(format!(
            "version: unsupported layout version {} (expected {LAYOUT_VERSION})",
            doc.version
        )));
    }
    if doc.height == 0 || doc.width == 0 {
        return Err(Error::Parse("height/width: grid must be nonempty".into()));
    }
    let mut shapes = BTreeMap::new();
    for (id, s) in doc.shapes {
        let sensor: CellSet = s.sensor.iter().map(|&p| Cell::from(p)).collect();
        let core: CellSet = s.core.iter().map(|&p| Cell::from(p)).collect();
        if sensor.len() != s.sensor.len() || core.len() != s.core.len() {
            return Err(Error::Parse(format!("shapes.{id}: duplicate cells")));
        }
        if !sensor.is_normalized() {
            return Err(Error::Parse(format!("shapes.{id}: sensor is not normalized")));
        }
        let shape = KernelShape::new(sensor, core).map_err(|e| Error::Parse(format!("shapes.{id}: {e}")))?;
        if shape.id() != id {
            return Err(Error::Parse(format!(
                "shapes.{id}: id does not match geometry (expected {})",
                shape.id()
            )));
        }
        shapes.insert(id, shape);
    }
    let mut instances = Vec::with_capacity(doc.instances.len());
    for (i, inst) in doc.instances.into_iter().enumerate() {
        let shape = shapes
            .get(&inst.shape)
            .ok_or_else(|| Error::Parse(format!("instances[{i}].shape: unknown shape {}", inst.shape)))?;
        let anchor = Cell::from(inst.anchor);
        instances.push(KernelInstance {
            shape_id: inst.shape,
            anchor,
            core_cells: shape.core().translate(anchor.row, anchor.col),
            sensor_cells: shape.sensor().translate(anchor.row, anchor.col),
        });
    }
    let layout = PatternLayout {
        height: doc.height,
        width: doc.width,
        phase: (doc.phase[0], doc.phase[1]),
        shapes,
        instances,
    };
    layout.validate().map_err(Error::InvalidLayout)?;
    Ok(layout)
}

/// Deterministic RGB colour for a shape class.
pub fn shape_color(shape_id: &str) -> [u8; 3] {
    let digest = Sha256::digest(shape_id.as_bytes());
    // keep colours light enough that the dark outline stays visible
    [64 + digest[0] / 4 * 3, 64 + digest[1] / 4 * 3, 64 + digest[2] / 4 * 3]
}

const OUTLINE: [u8; 3] = [16, 16, 16];

/// Renders the layout as a binary PPM (P6). Core cells take their shape
/// class colour, borders between instances are drawn darker, and the middle
/// instance's sensor ring (sensor minus core) is cross-hatched.
pub fn render_layout(layout: &PatternLayout, cell_px: usize) -> Result<Vec<u8>> {
    if cell_px == 0 {
        return Err(Error::InvalidArgument("cell_px must be at least 1".into()));
    }
    let (h, w) = (layout.height, layout.width);
    let mut owner = vec![usize::MAX; h * w];
    for (i, inst) in layout.instances.iter().enumerate() {
        for idx in inst.core_rows(w) {
            owner[idx] = i;
        }
    }
    let ring: Vec<bool> = match layout.instances.get(layout.instances.len() / 2) {
        Some(inst) => {
            let mut mask = vec![false; h * w];
            for c in inst.sensor_cells.iter().filter(|&c| !inst.core_cells.contains(c)) {
                mask[c.row as usize * w + c.col as usize] = true;
            }
            mask
        }
        None => vec![false; h * w],
    };

    let (px_w, px_h) = (w * cell_px, h * cell_px);
    let header = format!("P6\n{px_w} {px_h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + px_w * px_h * 3);
    out.extend_from_slice(header.as_bytes());
    let edge = cell_px.saturating_sub(1);
    for y in 0..px_h {
        let (r, py) = (y / cell_px, y % cell_px);
        for x in 0..px_w {
            let (c, px) = (x / cell_px, x % cell_px);
            let idx = r * w + c;
            let base = match layout.instances.get(owner[idx]) {
                Some(inst) => shape_color(&inst.shape_id),
                None => [0, 0, 0],
            };
            let differs = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < h && cc < w => owner[rr * w + cc] != owner[idx],
                _ => false,
            };
            let border = cell_px >= 3
                && ((py == 0 && differs(r.checked_sub(1), Some(c)))
                    || (py == edge && differs(Some(r + 1), Some(c)))
                    || (px == 0 && differs(Some(r), c.checked_sub(1)))
                    || (px == edge && differs(Some(r), Some(c + 1))));
            let hatch = ring[idx] && (px + py) % 4 == 0;
            let rgb = if hatch {
                OUTLINE
            } else if border {
                [base[0] / 2, base[1] / 2, base[2] / 2]
            } else {
                base
            };
            out.extend_from_slice(&rgb);
        }
    }
    Ok(out)
}

/// Splits a rendered P6 image into `(width, height, pixels)`.
pub fn decode_ppm(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return None;
    }
    let (w, h) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos + 1..)?;
    (pixels.len() == w * h * 3).then_some((w, h, pixels))
}

/// Chebyshev dilation of `cells` by `radius`, clipped to the grid.
pub fn clipped_dilation(cells: &CellSet, radius: u32, height: usize, width: usize) -> CellSet {
    geometry::dilate_in_place(cells, radius, Norm::Chebyshev).clip(height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn octagon_28_partitions_grid() {
        let l = plan_octagon_pattern(28, 28, (0, 0)).unwrap();
        assert!(l.validate().is_ok());
        let total: usize = l.instances.iter().map(|i| i.core_cells.len()).sum();
        assert_eq!(total, 784);
        assert!(l.shapes.len() >= 3, "got {} classes", l.shapes.len());
        let oct = geometry::octagon_shape();
        assert!(l.shapes.contains_key(oct.id()));
        assert_eq!(l.dominant_shape().unwrap().id(), oct.id());
    }

    #[test]
    fn octagon_56_partitions_grid() {
        let l = plan_octagon_pattern(56, 56, (0, 0)).unwrap();
        assert!(l.validate().is_ok());
    }

    #[test]
    fn octagon_rejects_small_grid() {
        assert!(matches!(plan_octagon_pattern(5, 28, (0, 0)), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn square_examples() {
        let l = plan_square_pattern(8, 8, 4, 0).unwrap();
        assert_eq!(l.instances.len(), 4);
        for inst in &l.instances {
            assert_eq!(inst.sensor_cells.len(), 16);
            assert_eq!(inst.core_cells.len(), 16);
        }
        assert!(multiplicity(&l).counts.iter().all(|&m| m == 1));

        let l = plan_square_pattern(8, 8, 4, 1).unwrap();
        let first = &l.instances[0];
        assert_eq!(first.anchor, Cell::new(0, 0));
        assert_eq!(first.sensor_cells.len(), 25);
        assert_eq!(first.core_cells.len(), 16);
        assert!(l.validate().is_ok());

        let l = plan_square_pattern(4, 4, 4, 0).unwrap();
        assert_eq!(l.instances.len(), 1);
        assert_eq!(l.instances[0].core_cells.len(), 16);

        assert!(plan_square_pattern(4, 4, 0, 0).is_err());
    }

    #[test]
    fn square_with_ragged_border_validates() {
        let l = plan_square_pattern(10, 7, 4, 2).unwrap();
        assert!(l.validate().is_ok());
        assert!(l.shapes.len() > 1);
    }

    #[test]
    fn clipping_matches_dilation() {
        let l = plan_square_pattern(9, 9, 3, 2).unwrap();
        for inst in &l.instances {
            assert_eq!(inst.sensor_cells, clipped_dilation(&inst.core_cells, 2, 9, 9));
        }
    }

    #[test]
    fn multiplicity_square_junctions() {
        // brute-force membership count, independent of `multiplicity`
        let l = plan_square_pattern(8, 8, 4, 1).unwrap();
        let brute = |r: i32, c: i32| {
            l.instances.iter().filter(|i| i.sensor_cells.contains(Cell::new(r, c))).count() as u32
        };
        let m = multiplicity(&l);
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(m.get(r, c), brute(r as i32, c as i32));
            }
        }
        assert_eq!(m.get(3, 3), 4);
        assert_eq!(m.get(1, 3), 2);
        assert_eq!(m.get(1, 1), 1);
        assert!(m.min() >= 1);
    }

    #[test]
    fn validate_reports_deleted_core_cell() {
        let mut l = plan_octagon_pattern(28, 28, (0, 0)).unwrap();
        let victim = l.instances[5].core_cells.iter().next().unwrap();
        l.instances[5].core_cells.remove(victim);
        let report = l.validate().unwrap_err();
        assert_eq!(report.count("uncovered-cell"), 1);
    }

    #[test]
    fn validate_reports_duplicate_instance() {
        let mut l = plan_octagon_pattern(28, 28, (0, 0)).unwrap();
        let oct_id = geometry::octagon_shape().id().to_string();
        let dup = l.instances.iter().find(|i| i.shape_id == oct_id).unwrap().clone();
        l.instances.push(dup);
        let report = l.validate().unwrap_err();
        assert_eq!(report.count("double-covered-cell"), 12);
        assert_eq!(report.count("uncovered-cell"), 0);
    }

    #[test]
    fn validate_reports_out_of_bounds() {
        let mut l = plan_square_pattern(4, 4, 2, 0).unwrap();
        l.instances[0].sensor_cells.insert(Cell::new(-1, 0));
        let report = l.validate().unwrap_err();
        assert_eq!(report.count("out-of-bounds"), 1);
        assert_eq!(report.count("shape-mismatch"), 1);
    }

    #[test]
    fn layout_round_trip() {
        let l = plan_octagon_pattern(28, 28, (0, 0)).unwrap();
        let a = serialize_layout(&l);
        let b = serialize_layout(&l);
        assert_eq!(a, b);
        let back = parse_layout(&a).unwrap();
        assert_eq!(back, l);
        assert_eq!(serialize_layout(&back), a);
    }

    #[test]
    fn parse_rejects_overlap() {
        let l = plan_square_pattern(8, 8, 4, 0).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&serialize_layout(&l)).unwrap();
        doc["instances"][1]["anchor"] = serde_json::json!([0, 2]);
        let err = parse_layout(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
        match err {
            Error::InvalidLayout(r) => assert!(r.count("double-covered-cell") > 0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_are_positioned() {
        let err = parse_layout(b"{\"height\": 4,\n \"width\": }").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let l = plan_square_pattern(4, 4, 2, 0).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&serialize_layout(&l)).unwrap();
        doc["instances"][2]["shape"] = serde_json::json!("nope");
        let err = parse_layout(&serde_json::to_vec(&doc).unwrap()).unwrap_err().to_string();
        assert!(err.contains("instances[2]"), "{err}");
        doc["extra"] = serde_json::json!(1);
        assert!(parse_layout(&serde_json::to_vec(&doc).unwrap()).is_err());
    }

    #[test]
    fn render_examples() {
        let l = plan_square_pattern(4, 4, 4, 0).unwrap();
        let img = render_layout(&l, 4).unwrap();
        let (w, h, px) = decode_ppm(&img).unwrap();
        assert_eq!((w, h), (16, 16));
        let colors: BTreeSet<&[u8]> = px.chunks(3).collect();
        assert_eq!(colors.len(), 1);

        let l = plan_octagon_pattern(28, 28, (0, 0)).unwrap();
        let img = render_layout(&l, 8).unwrap();
        let (w, h, px) = decode_ppm(&img).unwrap();
        assert_eq!((w, h), (224, 224));
        let colors: BTreeSet<&[u8]> = px.chunks(3).collect();
        assert!(colors.len() >= 3);
        assert_eq!(img, render_layout(&l, 8).unwrap());
        assert!(render_layout(&l, 0).is_err());
    }

    #[test]
    fn phase_shift_by_lattice_period_is_invisible() {
        let key = |l: &PatternLayout| {
            let mut v: Vec<(String, Vec<[i32; 2]>)> =
                l.instances.iter().map(|i| (i.shape_id.clone(), i.core_cells.to_pairs())).collect();
            v.sort();
            v
        };
        for phase in [(0, 0), (1, 1), (2, 0)] {
            let a = plan_octagon_pattern(20, 23, phase).unwrap();
            for (dr, dc) in [(2, 3), (-2, 3), (4, 0), (0, 6)] {
                let b = plan_octagon_pattern(20, 23, (phase.0 + dr, phase.1 + dc)).unwrap();
                assert_eq!(key(&a), key(&b));
            }
        }
    }

    #[test]
    fn octagon_partition_sweep_small() {
        for h in 6..=20 {
            for w in 6..=20 {
                for phase in [(0, 0), (1, 1), (2, 0)] {
                    let l = plan_octagon_pattern(h, w, phase).unwrap();
                    assert!(l.validate().is_ok(), "{h}x{w} {phase:?}");
                    for inst in &l.instances {
                        let unclipped_anchor_ok = inst.sensor_cells.iter().all(|c| {
                            c.row >= 0 && c.col >= 0 && (c.row as usize) < h && (c.col as usize) < w
                        });
                        assert!(unclipped_anchor_ok);
                    }
                }
            }
        }
    }
}
