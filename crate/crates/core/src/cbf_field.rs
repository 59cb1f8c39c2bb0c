//! Barrier-function synthesis and continuous sampling.
//!
//! `synthesize` runs inflate -> distance transform -> classify -> index ->
//! assemble -> solve and scatters the solution into a full raster: `-a` on
//! obstacles, `b` on safe cells, solved values on the transition band.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fmt_g, Point2};
use crate::krylov::{self, SolveStats, SolverConfig, SolverKind};
use crate::laplace_system::{assemble, index_unknowns, BoundaryValues};
use crate::ogm::{classify_regions, distance_transform, inflate, GridMap, Region, RegionLabels};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    pub a: f64,
    pub b_val: f64,
    pub delta_m: f64,
    pub robot_radius_m: f64,
    pub solver: SolverKind,
    pub solver_cfg: SolverConfig,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b_val: 1.0,
            delta_m: 0.15,
            robot_radius_m: 0.0,
            solver: SolverKind::Gmres,
            solver_cfg: SolverConfig::default(),
        }
    }
}

impl SynthesisParams {
    pub fn boundary_values(&self) -> BoundaryValues {
        BoundaryValues {
            a: self.a,
            b_val: self.b_val,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.boundary_values().validate()?;
        self.solver_cfg.validate()?;
        if !(self.delta_m > 0.0 && self.delta_m.is_finite()) {
            return Err(Error::Config(format!("delta_m must be > 0, got {}", self.delta_m)));
        }
        if !(self.robot_radius_m >= 0.0 && self.robot_radius_m.is_finite()) {
            return Err(Error::Config(format!(
                "robot_radius_m must be >= 0, got {}",
                self.robot_radius_m
            )));
        }
        Ok(())
    }
}

/// Per-stage timings (milliseconds) and sizes of one synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthesisStats {
    /// Occupied cells in the input map, before inflation.
    pub occupied_cells: usize,
    pub inflated_cells: usize,
    pub n_unknowns: usize,
    pub inflate_ms: f64,
    /// Distance transform, classification, indexing and matrix assembly.
    pub assembly_ms: f64,
    pub solve_ms: f64,
    pub total_ms: f64,
    pub solve: SolveStats,
}

/// Barrier-function raster over a map.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyField {
    height: usize,
    width: usize,
    cell_size: f64,
    origin: Point2,
    h: Vec<f64>,
    labels: RegionLabels,
    bv: BoundaryValues,
    delta_m: f64,
    stats: SynthesisStats,
}

/// How `gradient_at` differentiates the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScheme {
    /// Exact derivative of the bilinear interpolant: differences between the
    /// adjacent cell centers bracketing the point.
    #[default]
    Interpolant,
    /// Central differences per cell, bilinearly interpolated.
    CentralDifference,
}

/// Sidecar metadata written next to a field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub a: f64,
    pub b: f64,
    pub delta_m: f64,
    pub cell_size: f64,
    pub origin: Point2,
    pub height: usize,
    pub width: usize,
    pub stats: SynthesisStats,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Full pipeline; non-convergence is an error carrying the solver stats.
pub fn synthesize(map: &GridMap, params: &SynthesisParams) -> Result<SafetyField> {
    let field = synthesize_unchecked(map, params)?;
    if !field.stats.solve.converged {
        return Err(Error::NotConverged(field.stats.solve));
    }
    Ok(field)
}

/// Like [`synthesize`] but returns the best iterate even if the solver did
/// not converge; check `stats().solve.converged`.
pub fn synthesize_unchecked(map: &GridMap, params: &SynthesisParams) -> Result<SafetyField> {
    params.validate()?;
    let bv = params.boundary_values();
    let t_total = Instant::now();
    let mut stats = SynthesisStats {
        occupied_cells: map.occupied_count(),
        ..Default::default()
    };

    let t = Instant::now();
    let inflated = inflate(map, params.robot_radius_m)?;
    stats.inflate_ms = ms(t);
    stats.inflated_cells = inflated.occupied_count();

    let (h, w) = (map.height(), map.width());
    let mut raster = vec![bv.b_val; h * w];

    if stats.inflated_cells == 0 {
        let labels = RegionLabels::from_labels(h, w, vec![Region::Safe; h * w])?;
        stats.solve.converged = true;
        stats.total_ms = ms(t_total);
        return Ok(SafetyField::from_parts(map, raster, labels, bv, params.delta_m, stats));
    }

    let t = Instant::now();
    let dist = distance_transform(&inflated);
    let labels = classify_regions(&inflated, &dist, params.delta_m)?;
    let index = index_unknowns(&labels);
    let system = assemble(&labels, &index, bv)?;
    stats.assembly_ms = ms(t);
    stats.n_unknowns = system.n;

    for (v, l) in raster.iter_mut().zip(labels.as_slice()) {
        if *l == Region::Obstacle {
            *v = -bv.a;
        }
    }

    if system.n == 0 {
        stats.solve.converged = true;
    } else {
        let t = Instant::now();
        let sol = krylov::solve(params.solver, &system, &params.solver_cfg)?;
        stats.solve_ms = ms(t);
        stats.solve = sol.stats;
        for (k, &(i, j)) in index.cells().iter().enumerate() {
            raster[i * w + j] = sol.x[k];
        }
    }
    stats.total_ms = ms(t_total);
    Ok(SafetyField::from_parts(map, raster, labels, bv, params.delta_m, stats))
}

impl SafetyField {
    fn from_parts(
        map: &GridMap,
        h: Vec<f64>,
        labels: RegionLabels,
        bv: BoundaryValues,
        delta_m: f64,
        stats: SynthesisStats,
    ) -> Self {
        Self {
            height: map.height(),
            width: map.width(),
            cell_size: map.cell_size(),
            origin: map.origin(),
            h,
            labels,
            bv,
            delta_m,
            stats,
        }
    }

    /// Wraps an arbitrary raster; labels are derived from the extreme values.
    /// Intended for sampling tests and offline analysis.
    pub fn from_raster(
        height: usize,
        width: usize,
        cell_size: f64,
        origin: Point2,
        h: Vec<f64>,
        bv: BoundaryValues,
    ) -> Result<Self> {
        let map = GridMap::new(height, width, cell_size, origin)?;
        if h.len() != height * width {
            return Err(Error::Contract(format!("raster has {} values for {height}x{width}", h.len())));
        }
        let label = h
            .iter()
            .map(|&v| {
                if v <= -bv.a {
                    Region::Obstacle
                } else if v >= bv.b_val {
                    Region::Safe
                } else {
                    Region::Transition
                }
            })
            .collect();
        let labels = RegionLabels::from_labels(height, width, label)?;
        Ok(Self::from_parts(&map, h, labels, bv, 0.0, SynthesisStats::default()))
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

    pub fn raster(&self) -> &[f64] {
        &self.h
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.h[row * self.width + col]
    }

    pub fn labels(&self) -> &RegionLabels {
        &self.labels
    }

    pub fn boundary_values(&self) -> BoundaryValues {
        self.bv
    }

    pub fn delta_m(&self) -> f64 {
        self.delta_m
    }

    pub fn stats(&self) -> &SynthesisStats {
        &self.stats
    }

    /// Whether `p` lies within the footprint of the raster.
    pub fn contains(&self, p: Point2) -> bool {
        self.grid_coords(p).is_ok()
    }

    /// Fractional grid coordinates `(col, row)`, clamped to cell centers.
    fn grid_coords(&self, p: Point2) -> Result<(f64, f64)> {
        let u = (p.x - self.origin.x) / self.cell_size;
        let v = (p.y - self.origin.y) / self.cell_size;
        let inside = |c: f64, n: usize| c.is_finite() && c >= -0.5 && c <= n as f64 - 0.5;
        if !inside(u, self.width) || !inside(v, self.height) {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        Ok((
            u.clamp(0.0, (self.width - 1) as f64),
            v.clamp(0.0, (self.height - 1) as f64),
        ))
    }

    /// Lower-left bracketing node and fractional offsets.
    fn bracket(&self, u: f64, v: f64) -> (usize, usize, f64, f64) {
        let j0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let i0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let fx = if self.width > 1 { u - j0 as f64 } else { 0.0 };
        let fy = if self.height > 1 { v - i0 as f64 } else { 0.0 };
        (i0, j0, fx, fy)
    }

    fn node(&self, i: usize, j: usize) -> f64 {
        self.h[i.min(self.height - 1) * self.width + j.min(self.width - 1)]
    }

    /// Bilinear interpolation between the four surrounding cell centers.
    pub fn value_at(&self, p: Point2) -> Result<f64> {
        let (u, v) = self.grid_coords(p)?;
        let (i0, j0, fx, fy) = self.bracket(u, v);
        let (h00, h01) = (self.node(i0, j0), self.node(i0, j0 + 1));
        let (h10, h11) = (self.node(i0 + 1, j0), self.node(i0 + 1, j0 + 1));
        Ok((1.0 - fy) * ((1.0 - fx) * h00 + fx * h01) + fy * ((1.0 - fx) * h10 + fx * h11))
    }

    /// Spatial gradient `(dh/dx, dh/dy)` per meter.
    pub fn gradient_at(&self, p: Point2) -> Result<[f64; 2]> {
        self.gradient_with(p, GradientScheme::default())
    }

    pub fn gradient_with(&self, p: Point2, scheme: GradientScheme) -> Result<[f64; 2]> {
        let (u, v) = self.grid_coords(p)?;
        let (i0, j0, fx, fy) = self.bracket(u, v);
        match scheme {
            GradientScheme::Interpolant => {
                let (h00, h01) = (self.node(i0, j0), self.node(i0, j0 + 1));
                let (h10, h11) = (self.node(i0 + 1, j0), self.node(i0 + 1, j0 + 1));
                let dx = if self.width > 1 {
                    ((1.0 - fy) * (h01 - h00) + fy * (h11 - h10)) / self.cell_size
                } else {
                    0.0
                };
                let dy = if self.height > 1 {
                    ((1.0 - fx) * (h10 - h00) + fx * (h11 - h01)) / self.cell_size
                } else {
                    0.0
                };
                Ok([dx, dy])
            }
            GradientScheme::CentralDifference => {
                let g = |i: usize, j: usize| self.central_gradient(i.min(self.height - 1), j.min(self.width - 1));
                let (g00, g01, g10, g11) = (g(i0, j0), g(i0, j0 + 1), g(i0 + 1, j0), g(i0 + 1, j0 + 1));
                let lerp = |k: usize| {
                    (1.0 - fy) * ((1.0 - fx) * g00[k] + fx * g01[k]) + fy * ((1.0 - fx) * g10[k] + fx * g11[k])
                };
                Ok([lerp(0), lerp(1)])
            }
        }
    }

    /// Per-cell central difference, one-sided at the raster edges.
    pub fn central_gradient(&self, i: usize, j: usize) -> [f64; 2] {
        let diff = |lo: f64, hi: f64, span: usize| {
            if span == 0 {
                0.0
            } else {
                (hi - lo) / (span as f64 * self.cell_size)
            }
        };
        let (jl, jr) = (j.saturating_sub(1), (j + 1).min(self.width - 1));
        let (iu, id) = (i.saturating_sub(1), (i + 1).min(self.height - 1));
        [
            diff(self.get(i, jl), self.get(i, jr), jr - jl),
            diff(self.get(iu, j), self.get(id, j), id - iu),
        ]
    }

    /// Largest five-point stencil residual over the transition cells, with
    /// out-of-map neighbors taken as `b`.
    pub fn harmonic_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.height {
            for j in 0..self.width {
                if self.labels.get(i, j) != Region::Transition {
                    continue;
                }
                let sum: f64 = self
                    .labels
                    .neighbors(i, j)
                    .iter()
                    .map(|n| n.map_or(self.bv.b_val, |(r, c)| self.get(r, c)))
                    .sum();
                worst = worst.max((4.0 * self.get(i, j) - sum).abs());
            }
        }
        worst
    }

    /// `H` lines of `W` comma-separated values in `%.9g`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.h.len() * 12);
        for row in self.h.chunks(self.width) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", fmt_g(*v, 9));
            }
            out.push('\n');
        }
        out
    }

    pub fn sidecar(&self) -> FieldSidecar {
        FieldSidecar {
            a: self.bv.a,
            b: self.bv.b_val,
            delta_m: self.delta_m,
            cell_size: self.cell_size,
            origin: self.origin,
            height: self.height,
            width: self.width,
            stats: self.stats,
        }
    }
}

/// Parses a field CSV back into a raster, checking its shape.
pub fn parse_field_csv(text: &str, height: usize, width: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(height * width);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let before = out.len();
        for tok in line.split(',') {
            out.push(tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                offset: i,
                msg: format!("bad value {tok:?} on line {}", i + 1),
            })?);
        }
        if out.len() - before != width {
            return Err(Error::Contract(format!("line {} has {} values, expected {width}", i + 1, out.len() - before)));
        }
    }
    if rows != height {
        return Err(Error::Contract(format!("{rows} rows, expected {height}")));
    }
    Ok(out)
}
