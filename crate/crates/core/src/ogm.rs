//! Binary occupancy grids: PGM loading, disk inflation, exact Euclidean
//! distance transform and the obstacle / transition / safe partition.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cell, Point2};

/// Relative slack for comparing quantized distances against metric thresholds,
/// so that e.g. 15 cells at 0.01 m compare equal to 0.15 m.
const METRIC_SLACK: f64 = 1e-9;

/// Binary occupancy raster, row-major, `true` = occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    height: usize,
    width: usize,
    cells: Vec<bool>,
    cell_size: f64,
    origin: Point2,
}

impl GridMap {
    /// All-free map.
    pub fn new(height: usize, width: usize, cell_size: f64, origin: Point2) -> Result<Self> {
        Self::from_cells(height, width, vec![false; height * width], cell_size, origin)
    }

    pub fn from_cells(
        height: usize,
        width: usize,
        cells: Vec<bool>,
        cell_size: f64,
        origin: Point2,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract(format!("map dimensions must be positive, got {height}x{width}")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Contract(format!("cell_size must be positive, got {cell_size}")));
        }
        if cells.len() != height * width {
            return Err(Error::Contract(format!(
                "expected {} cells, got {}",
                height * width,
                cells.len()
            )));
        }
        if !origin.is_finite() {
            return Err(Error::Contract("origin must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            cells,
            cell_size,
            origin,
        })
    }

    /// Builds a map from rows of `'#'` (occupied) and `'.'` (free) characters.
    pub fn from_ascii(rows: &[&str], cell_size: f64, origin: Point2) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut cells = Vec::with_capacity(height * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Contract(format!("ragged ascii map at row {i}")));
            }
            cells.extend(row.bytes().map(|b| b == b'#'));
        }
        Self::from_cells(height, width, cells, cell_size, origin)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.cells[self.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, occupied: bool) {
        let idx = self.index(row, col);
        self.cells[idx] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + col as f64 * self.cell_size,
            self.origin.y + row as f64 * self.cell_size,
        )
    }

    /// Cell whose square footprint contains `p`, if any.
    pub fn cell_containing(&self, p: Point2) -> Option<Cell> {
        let col = ((p.x - self.origin.x) / self.cell_size + 0.5).floor();
        let row = ((p.y - self.origin.y) / self.cell_size + 0.5).floor();
        if row < 0.0 || col < 0.0 || row >= self.height as f64 || col >= self.width as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Row-major CSV of 0/1, one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.height * (2 * self.width + 1));
        for row in self.cells.chunks(self.width) {
            for (j, &c) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push(if c { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

/// Per-cell Euclidean distance, in meters, to the nearest occupied cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    dist: Vec<f64>,
}

impl DistanceField {
    /// Value stored everywhere when the map has no occupied cell.
    pub const SENTINEL: f64 = f64::INFINITY;

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.dist[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Obstacle,
    Transition,
    Safe,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels {
    height: usize,
    width: usize,
    label: Vec<Region>,
}

impl RegionLabels {
    pub fn from_labels(height: usize, width: usize, label: Vec<Region>) -> Result<Self> {
        if height == 0 || width == 0 || label.len() != height * width {
            return Err(Error::Contract(format!(
                "label raster has {} entries for {height}x{width}",
                label.len()
            )));
        }
        Ok(Self {
            height,
            width,
            label,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Region {
        self.label[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[Region] {
        &self.label
    }

    pub fn count(&self, region: Region) -> usize {
        self.label.iter().filter(|&&r| r == region).count()
    }

    /// 4-neighbors of a cell; `None` marks a neighbor outside the map.
    pub fn neighbors(&self, row: usize, col: usize) -> [Option<Cell>; 4] {
        [
            row.checked_sub(1).map(|r| (r, col)),
            col.checked_sub(1).map(|c| (row, c)),
            (col + 1 < self.width).then_some((row, col + 1)),
            (row + 1 < self.height).then_some((row + 1, col)),
        ]
    }
}

/// Boundary cell lists, both in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Boundaries {
    pub obstacle: Vec<Cell>,
    pub safe: Vec<Cell>,
}

/// Reads a P2 or P5 PGM file. See [`parse_pgm`].
pub fn load_pgm(
    path: impl AsRef<Path>,
    cell_size: f64,
    origin: Point2,
    occupied_threshold: Option<f64>,
) -> Result<GridMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, cell_size, origin, occupied_threshold)
}

/// Parses PGM bytes. Row `r` of the image becomes map row `r`; a pixel is
/// occupied iff its value is below the threshold (default `maxval / 2`).
pub fn parse_pgm(
    bytes: &[u8],
    cell_size: f64,
    origin: Point2,
    occupied_threshold: Option<f64>,
) -> Result<GridMap> {
    let mut rd = PgmReader { bytes, pos: 0 };
    let magic = rd.token()?;
    let binary = match magic.1.as_slice() {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::Parse {
                offset: magic.0,
                msg: format!(
                    "unsupported magic number {:?}, expected P2 or P5",
                    String::from_utf8_lossy(other)
                ),
            })
        }
    };
    let width = rd.number()?;
    let height = rd.number()?;
    let maxval_at = rd.pos;
    let maxval = rd.number()?;
    if width.1 == 0 || height.1 == 0 {
        return Err(Error::Parse {
            offset: if width.1 == 0 { width.0 } else { height.0 },
            msg: "zero image dimension".into(),
        });
    }
    if maxval.1 == 0 || maxval.1 > 65535 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("maxval {} outside 1..=65535", maxval.1),
        });
    }
    let (width, height, maxval) = (width.1 as usize, height.1 as usize, maxval.1);
    let threshold = occupied_threshold.unwrap_or(maxval as f64 / 2.0);
    let n = width * height;
    let mut cells = Vec::with_capacity(n);

    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        match rd.bytes.get(rd.pos) {
            Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
            _ => {
                return Err(Error::Parse {
                    offset: rd.pos,
                    msg: "expected whitespace after maxval".into(),
                })
            }
        }
        let bpp = if maxval > 255 { 2 } else { 1 };
        let need = n * bpp;
        let avail = rd.bytes.len() - rd.pos;
        if avail < need {
            return Err(Error::Parse {
                offset: rd.bytes.len(),
                msg: format!("truncated raster: expected {need} bytes, found {avail}"),
            });
        }
        let raster = &rd.bytes[rd.pos..rd.pos + need];
        for k in 0..n {
            let v = if bpp == 2 {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as u32
            } else {
                raster[k] as u32
            };
            cells.push((v as f64) < threshold);
        }
    } else {
        for _ in 0..n {
            let (at, v) = rd.number().map_err(|e| match e {
                Error::Parse { offset, .. } if offset >= rd.bytes.len() => Error::Parse {
                    offset,
                    msg: format!("truncated raster: expected {n} samples"),
                },
                e => e,
            })?;
            if v > maxval {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            cells.push((v as f64) < threshold);
        }
    }
    GridMap::from_cells(height, width, cells, cell_size, origin)
}

struct PgmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmReader<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<(usize, Vec<u8>)> {
        self.skip_space();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                msg: "unexpected end of file".into(),
            });
        }
        Ok((start, self.bytes[start..self.pos].to_vec()))
    }

    fn number(&mut self) -> Result<(usize, u32)> {
        let (at, tok) = self.token()?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .map(|v| (at, v))
            .ok_or_else(|| Error::Parse {
                offset: at,
                msg: format!("expected unsigned integer, found {:?}", String::from_utf8_lossy(&tok)),
            })
    }
}

/// Squared distances in cell units; `None` when nothing is occupied.
fn squared_cell_distances(map: &GridMap) -> Option<Vec<u64>> {
    if !map.cells.iter().any(|&c| c) {
        return None;
    }
    const INF: u64 = u64::MAX / 4;
    let (h, w) = (map.height, map.width);

    // Column pass: 1D distance to the nearest occupied cell in the same column.
    let mut col_d2 = vec![INF; h * w];
    for j in 0..w {
        let mut last: Option<usize> = None;
        for i in 0..h {
            if map.cells[i * w + j] {
                last = Some(i);
            }
            if let Some(k) = last {
                let d = (i - k) as u64;
                col_d2[i * w + j] = d * d;
            }
        }
        let mut next: Option<usize> = None;
        for i in (0..h).rev() {
            if map.cells[i * w + j] {
                next = Some(i);
            }
            if let Some(k) = next {
                let d = (k - i) as u64;
                col_d2[i * w + j] = col_d2[i * w + j].min(d * d);
            }
        }
    }

    // Row pass: lower envelope of parabolas f(q) + (x - q)^2.
    let mut out = vec![INF; h * w];
    let mut sites: Vec<usize> = Vec::with_capacity(w);
    let mut bounds: Vec<f64> = Vec::with_capacity(w + 1);
    for i in 0..h {
        let f = &col_d2[i * w..(i + 1) * w];
        sites.clear();
        bounds.clear();
        for q in 0..w {
            if f[q] >= INF {
                continue;
            }
            let fq = f[q] as f64 + (q * q) as f64;
            loop {
                match sites.last() {
                    None => {
                        sites.push(q);
                        bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&v) => {
                        let fv = f[v] as f64 + (v * v) as f64;
                        let s = (fq - fv) / (2.0 * (q as f64 - v as f64));
                        if s <= *bounds.last().unwrap() {
                            sites.pop();
                            bounds.pop();
                        } else {
                            sites.push(q);
                            bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if sites.is_empty() {
            continue;
        }
        let mut k = 0;
        for x in 0..w {
            while k + 1 < sites.len() && bounds[k + 1] < x as f64 {
                k += 1;
            }
            let q = sites[k];
            let dx = x.abs_diff(q) as u64;
            // Re-check the neighbouring site to stay exact at ties.
            let mut best = f[q] + dx * dx;
            if k + 1 < sites.len() {
                let q2 = sites[k + 1];
                let dx2 = x.abs_diff(q2) as u64;
                best = best.min(f[q2] + dx2 * dx2);
            }
            out[i * w + x] = best;
        }
    }
    Some(out)
}

/// Exact Euclidean distance transform over cell centers.
pub fn distance_transform(map: &GridMap) -> DistanceField {
    let dist = match squared_cell_distances(map) {
        Some(d2) => d2
            .into_iter()
            .map(|d| (d as f64).sqrt() * map.cell_size)
            .collect(),
        None => vec![DistanceField::SENTINEL; map.height * map.width],
    };
    DistanceField {
        height: map.height,
        width: map.width,
        dist,
    }
}

/// Dilates occupied cells by a Euclidean disk of `radius_m`.
pub fn inflate(map: &GridMap, radius_m: f64) -> Result<GridMap> {
    if !(radius_m >= 0.0) || !radius_m.is_finite() {
        return Err(Error::Contract(format!("inflation radius must be >= 0, got {radius_m}")));
    }
    if radius_m == 0.0 {
        return Ok(map.clone());
    }
    let Some(d2) = squared_cell_distances(map) else {
        return Ok(map.clone());
    };
    let r_cells = radius_m / map.cell_size;
    let limit = r_cells * r_cells * (1.0 + METRIC_SLACK);
    let cells = d2.into_iter().map(|d| (d as f64) <= limit).collect();
    GridMap::from_cells(map.height, map.width, cells, map.cell_size, map.origin)
}

/// Partitions cells into obstacle, transition (`0 < dist < delta`) and safe (`dist >= delta`).
pub fn classify_regions(map: &GridMap, dist: &DistanceField, delta_m: f64) -> Result<RegionLabels> {
    if !(delta_m > 0.0) || !delta_m.is_finite() {
        return Err(Error::Contract(format!("safety margin must be positive, got {delta_m}")));
    }
    if dist.height != map.height || dist.width != map.width {
        return Err(Error::Contract(format!(
            "distance field {}x{} does not match map {}x{}",
            dist.height, dist.width, map.height, map.width
        )));
    }
    let safe_from = delta_m * (1.0 - METRIC_SLACK);
    let label = map
        .cells
        .iter()
        .zip(&dist.dist)
        .map(|(&occ, &d)| {
            if occ {
                Region::Obstacle
            } else if d >= safe_from {
                Region::Safe
            } else {
                Region::Transition
            }
        })
        .collect();
    Ok(RegionLabels {
        height: map.height,
        width: map.width,
        label,
    })
}

/// Obstacle cells touching a non-obstacle 4-neighbor (or the map edge), and
/// safe cells touching a transition 4-neighbor.
pub fn extract_boundaries(labels: &RegionLabels) -> Boundaries {
    let mut out = Boundaries::default();
    for i in 0..labels.height {
        for j in 0..labels.width {
            let nbrs = labels.neighbors(i, j);
            match labels.get(i, j) {
                Region::Obstacle => {
                    let exposed = nbrs.iter().any(|n| match n {
                        None => true,
                        Some((r, c)) => labels.get(*r, *c) != Region::Obstacle,
                    });
                    if exposed {
                        out.obstacle.push((i, j));
                    }
                }
                Region::Safe => {
                    let touches = nbrs
                        .iter()
                        .flatten()
                        .any(|&(r, c)| labels.get(r, c) == Region::Transition);
                    if touches {
                        out.safe.push((i, j));
                    }
                }
                Region::Transition => {}
            }
        }
    }
    out
}

/// Debug rendering: `#` obstacle, `+` transition, `.` safe.
pub fn labels_to_ascii(labels: &RegionLabels) -> String {
    let mut s = String::new();
    for i in 0..labels.height {
        for j in 0..labels.width {
            s.push(match labels.get(i, j) {
                Region::Obstacle => '#',
                Region::Transition => '+',
                Region::Safe => '.',
            });
        }
        let _ = writeln!(s);
    }
    s
}
