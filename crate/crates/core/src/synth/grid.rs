//! Part-segmentation grids, part groupings and segmentation noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{HUMANOID_PARENTS, MIRROR_PARTNER, NUM_JOINTS};

/// Supported numbers of part groups.
pub const GRANULARITIES: [usize; 5] = [1, 3, 6, 12, 24];

/// Cell value for background; part groups are `1..=P`.
pub const BACKGROUND: u8 = 0;

/// Colours for exported grids, indexed by group.
pub const PALETTE: [[u8; 3]; NUM_JOINTS] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 255, 255],
    [100, 60, 160],
    [40, 90, 20],
    [200, 120, 120],
];

// head, torso, spine, pelvis, then upper arm, lower arm + hand, upper leg,
// lower leg + foot, each as a left/right pair
const TWELVE: [u8; NUM_JOINTS] = [3, 8, 9, 2, 10, 11, 2, 10, 11, 1, 10, 11, 0, 1, 1, 0, 4, 5, 6, 7, 6, 7, 6, 7];
// head, torso, left arm, right arm, left leg, right leg
const SIX_FROM_TWELVE: [u8; 12] = [0, 1, 1, 1, 2, 3, 2, 3, 4, 5, 4, 5];
// head, torso, limbs
const THREE_FROM_SIX: [u8; 6] = [0, 1, 2, 2, 2, 2];

/// Surjective grouping of the 24 parts into `P` groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GranularityMap {
    parts: usize,
    group: [u8; NUM_JOINTS],
}

impl GranularityMap {
    pub fn new(parts: usize) -> Result<Self> {
        let group: [u8; NUM_JOINTS] = match parts {
            24 => std::array::from_fn(|p| p as u8),
            12 => TWELVE,
            6 => TWELVE.map(|g| SIX_FROM_TWELVE[g as usize]),
            3 => TWELVE.map(|g| THREE_FROM_SIX[SIX_FROM_TWELVE[g as usize] as usize]),
            1 => [0; NUM_JOINTS],
            other => {
                return Err(Error::InvalidArgument(format!("granularity must be one of {GRANULARITIES:?}, got {other}")))
            }
        };
        Ok(GranularityMap { parts, group })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    /// Zero-based group of a body part.
    pub fn group(&self, part: usize) -> usize {
        self.group[part] as usize
    }

    /// Cell id of a body part (`group + 1`).
    pub fn cell_id(&self, part: usize) -> u8 {
        self.group[part] + 1
    }

    /// Left/right counterpart of a zero-based group.
    pub fn partner(&self, group: usize) -> usize {
        let part = self.group.iter().position(|&g| g as usize == group).expect("group in range");
        self.group(MIRROR_PARTNER[part])
    }

    /// Groups joined to `group` by a bone.
    pub fn adjacent(&self, group: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for (child, parent) in HUMANOID_PARENTS.iter().enumerate() {
            let Some(parent) = parent else { continue };
            let (a, b) = (self.group(child), self.group(*parent));
            if a == b {
                continue;
            }
            let other = if a == group {
                b
            } else if b == group {
                a
            } else {
                continue;
            };
            if !out.contains(&other) {
                out.push(other);
            }
        }
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Corrupted { rate: f64 },
}

/// Row-major `G×G` cells, origin top-left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRecord", into = "GridRecord")]
pub struct PartSegGrid {
    size: usize,
    granularity: usize,
    cells: Vec<u8>,
    provenance: Provenance,
}

const CELL_SYMBOLS: &[u8; 25] = b"0123456789abcdefghijklmno";

/// On-disk form: one string per row, one symbol per cell.
#[derive(Serialize, Deserialize)]
struct GridRecord {
    size: usize,
    granularity: usize,
    provenance: Provenance,
    rows: Vec<String>,
}

impl From<PartSegGrid> for GridRecord {
    fn from(g: PartSegGrid) -> Self {
        let rows = g
            .cells
            .chunks(g.size)
            .map(|row| row.iter().map(|&c| CELL_SYMBOLS[c as usize] as char).collect())
            .collect();
        GridRecord { size: g.size, granularity: g.granularity, provenance: g.provenance, rows }
    }
}

impl TryFrom<GridRecord> for PartSegGrid {
    type Error = Error;

    fn try_from(r: GridRecord) -> Result<Self> {
        if r.rows.len() != r.size {
            return Err(Error::Format(format!("grid has {} rows, expected {}", r.rows.len(), r.size)));
        }
        let mut cells = Vec::with_capacity(r.size * r.size);
        for row in &r.rows {
            if row.len() != r.size {
                return Err(Error::Format(format!("grid row has {} cells, expected {}", row.len(), r.size)));
            }
            for b in row.bytes() {
                let id = CELL_SYMBOLS.iter().position(|&s| s == b).ok_or_else(|| Error::Format(format!("bad cell symbol {:?}", b as char)))?;
                cells.push(id as u8);
            }
        }
        PartSegGrid::new(r.size, r.granularity, cells, r.provenance)
    }
}

impl PartSegGrid {
    pub fn new(size: usize, granularity: usize, cells: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if !GRANULARITIES.contains(&granularity) {
            return Err(Error::InvalidArgument(format!("granularity {granularity} is not supported")));
        }
        if size == 0 || cells.len() != size * size {
            return Err(Error::InvalidArgument(format!("{} cells for a {size}×{size} grid", cells.len())));
        }
        if let Some(bad) = cells.iter().find(|&&c| c as usize > granularity) {
            return Err(Error::InvalidArgument(format!("cell id {bad} exceeds granularity {granularity}")));
        }
        Ok(PartSegGrid { size, granularity, cells, provenance })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.size + col]
    }

    pub fn foreground_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != BACKGROUND).count()
    }

    /// Length of the one-hot encoding, `G²·(P+1)`.
    pub fn input_dim(&self) -> usize {
        self.size * self.size * (self.granularity + 1)
    }

    /// Indices of the ones in the one-hot encoding, one per cell, ascending.
    pub fn active_inputs(&self) -> impl Iterator<Item = usize> + '_ {
        let channels = self.granularity + 1;
        self.cells.iter().enumerate().map(move |(i, &c)| i * channels + c as usize)
    }

    /// Regroups a 24-part grid.
    pub fn relabel(&self, map: &GranularityMap) -> Result<Self> {
        if self.granularity != NUM_JOINTS {
            return Err(Error::InvalidArgument("only 24-part grids can be regrouped".into()));
        }
        let cells = self.cells.iter().map(|&c| if c == BACKGROUND { c } else { map.cell_id(c as usize - 1) }).collect();
        PartSegGrid::new(self.size, map.parts(), cells, self.provenance)
    }

    /// Left/right flip with group ids swapped for their counterparts.
    pub fn mirrored(&self) -> Self {
        let map = GranularityMap::new(self.granularity).expect("validated granularity");
        let n = self.size;
        let mut cells = vec![BACKGROUND; n * n];
        for r in 0..n {
            for c in 0..n {
                let id = self.get(r, c);
                cells[r * n + (n - 1 - c)] = if id == BACKGROUND { id } else { map.partner(id as usize - 1) as u8 + 1 };
            }
        }
        PartSegGrid { cells, ..*self }
    }

    /// Colour-coded PNG, `scale` pixels per cell, background black.
    pub fn write_png<W: Write>(&self, out: W, scale: usize) -> Result<()> {
        let side = self.size * scale.max(1);
        let mut encoder = png::Encoder::new(out, side as u32, side as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::Format(e.to_string()))?;
        let mut data = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                let id = self.get(y / scale.max(1), x / scale.max(1));
                data.extend_from_slice(&if id == BACKGROUND { [0, 0, 0] } else { PALETTE[id as usize - 1] });
            }
        }
        writer.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Micro-averaged F1 of the foreground labelling of `other` against `reference`.
/// Two empty grids score 1.
pub fn f1_score(reference: &PartSegGrid, other: &PartSegGrid) -> Result<f64> {
    if reference.size != other.size || reference.granularity != other.granularity {
        return Err(Error::InvalidArgument("grids differ in size or granularity".into()));
    }
    let (mut tp, mut fp, mut fun) = (0usize, 0usize, 0usize);
    for (&a, &b) in reference.cells.iter().zip(&other.cells) {
        if a != BACKGROUND && a == b {
            tp += 1;
        } else {
            fp += usize::from(b != BACKGROUND);
            fun += usize::from(a != BACKGROUND);
        }
    }
    if tp + fp + fun == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fun) as f64)
}

/// Reassigns each foreground cell with probability `rate`: 70% of the time
/// to a different part id seen among its eight neighbours (or, failing
/// that, a part joined to it by a bone), otherwise to background. Returns
/// the noisy grid and its F1 against the input.
pub fn corrupt(grid: &PartSegGrid, rate: f64, seed: u64) -> Result<(PartSegGrid, f64)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("corruption rate {rate} outside [0, 1]")));
    }
    let map = GranularityMap::new(grid.granularity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.size as isize;
    let mut cells = grid.cells.clone();
    let mut candidates = Vec::with_capacity(8);
    for r in 0..n {
        for c in 0..n {
            let own = grid.get(r as usize, c as usize);
            if own == BACKGROUND {
                continue;
            }
            // draw order fixed per foreground cell regardless of outcome
            let flip = rng.random::<f64>() < rate;
            let to_part = rng.random::<f64>() < 0.7;
            let pick: f64 = rng.random();
            if !flip {
                continue;
            }
            candidates.clear();
            for (dr, dc) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= n || cc >= n {
                    continue;
                }
                let id = grid.get(rr as usize, cc as usize);
                if id != BACKGROUND && id != own && !candidates.contains(&id) {
                    candidates.push(id);
                }
            }
            if candidates.is_empty() {
                candidates.extend(map.adjacent(own as usize - 1).into_iter().map(|g| g as u8 + 1));
            }
            let idx = r as usize * grid.size + c as usize;
            cells[idx] = if to_part && !candidates.is_empty() {
                candidates.sort_unstable();
                candidates[((pick * candidates.len() as f64) as usize).min(candidates.len() - 1)]
            } else {
                BACKGROUND
            };
        }
    }
    let noisy = PartSegGrid { cells, provenance: Provenance::Corrupted { rate }, ..*grid };
    let f1 = f1_score(grid, &noisy)?;
    Ok((noisy, f1))
}
