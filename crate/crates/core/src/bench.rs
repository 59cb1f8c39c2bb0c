//! Synthesis timing over random local maps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cbf_field::{synthesize_unchecked, SynthesisParams};
use crate::error::{Error, Result};
use crate::geometry::fmt_g;
use crate::krylov::SolverKind;
use crate::mapgen::{shape_map, trial_rng, ShapeMapConfig};

/// Reference per-map averages (200x200 maps, 1 cm cells).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTiming {
    pub occupied_cells: f64,
    pub transition_cells: f64,
    pub assembly_ms: f64,
    pub solve_ms: f64,
    pub total_ms: f64,
}

pub const REFERENCE_TIMING: ReferenceTiming = ReferenceTiming {
    occupied_cells: 1627.95,
    transition_cells: 6962.60,
    assembly_ms: 4.98,
    solve_ms: 4.33,
    total_ms: 9.31,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub size: usize,
    pub obstacles: usize,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub delta_m: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: 200,
            obstacles: 5,
            trials: 50,
            seed: 0,
            solver: SolverKind::Gmres,
            delta_m: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub trial: usize,
    pub size: usize,
    pub solver: SolverKind,
    pub occupied_cells: usize,
    pub n_unknowns: usize,
    pub assembly_ms: f64,
    pub solve_ms: f64,
    pub total_ms: f64,
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        // Nearest-rank percentile.
        let p95 = v[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            p95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub config: BenchConfig,
    pub trials: usize,
    pub non_converged: usize,
    pub mean_occupied_cells: f64,
    pub mean_transition_cells: f64,
    pub median_transition_cells: f64,
    pub assembly_ms: Spread,
    pub solve_ms: Spread,
    pub total_ms: Spread,
    pub reference: ReferenceTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: BenchSummary,
}

impl BenchReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "trial,size,solver,occupied_cells,n_unknowns,assembly_ms,solve_ms,total_ms,iterations,final_relative_residual,converged\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.trial,
                r.size,
                r.solver.name(),
                r.occupied_cells,
                r.n_unknowns,
                fmt_g(r.assembly_ms, 6),
                fmt_g(r.solve_ms, 6),
                fmt_g(r.total_ms, 6),
                r.iterations,
                fmt_g(r.final_relative_residual, 6),
                r.converged
            );
        }
        out
    }
}

/// Times `trials` syntheses, one random map each. Timing covers the distance
/// transform, classification, assembly and the Krylov solve; map generation
/// is excluded.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.trials == 0 || cfg.size < 2 {
        return Err(Error::Config("bench needs trials >= 1 and size >= 2".into()));
    }
    let map_cfg = ShapeMapConfig::bench(cfg.size, cfg.obstacles);
    let params = SynthesisParams {
        delta_m: cfg.delta_m,
        solver: cfg.solver,
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let map = shape_map(&mut trial_rng(cfg.seed, trial as u64), &map_cfg)?;
        let field = synthesize_unchecked(&map, &params)?;
        let s = field.stats();
        if !s.solve.converged {
            log::warn!("trial {trial}: solver stopped at residual {:.3e}", s.solve.final_relative_residual);
        }
        let assembly_ms = s.inflate_ms + s.assembly_ms;
        rows.push(BenchRow {
            trial,
            size: cfg.size,
            solver: cfg.solver,
            occupied_cells: s.occupied_cells,
            n_unknowns: s.n_unknowns,
            assembly_ms,
            solve_ms: s.solve_ms,
            total_ms: assembly_ms + s.solve_ms,
            iterations: s.solve.iterations,
            final_relative_residual: s.solve.final_relative_residual,
            converged: s.solve.converged,
        });
    }
    let col = |f: fn(&BenchRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let n = rows.len() as f64;
    let summary = BenchSummary {
        config: *cfg,
        trials: rows.len(),
        non_converged: rows.iter().filter(|r| !r.converged).count(),
        mean_occupied_cells: rows.iter().map(|r| r.occupied_cells as f64).sum::<f64>() / n,
        mean_transition_cells: rows.iter().map(|r| r.n_unknowns as f64).sum::<f64>() / n,
        median_transition_cells: Spread::of(&col(|r| r.n_unknowns as f64)).median,
        assembly_ms: Spread::of(&col(|r| r.assembly_ms)),
        solve_ms: Spread::of(&col(|r| r.solve_ms)),
        total_ms: Spread::of(&col(|r| r.total_ms)),
        reference: REFERENCE_TIMING,
    };
    Ok(BenchReport { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_statistics() {
        let s = Spread::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.p95, 5.0);
        let s = Spread::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.median, 2.5);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(Spread::of(&v).p95, 95.0);
    }

    #[test]
    fn small_bench_runs_and_is_reproducible() {
        let cfg = BenchConfig {
            size: 60,
            obstacles: 2,
            trials: 3,
            seed: 9,
            ..Default::default()
        };
        let a = run_bench(&cfg).unwrap();
        let b = run_bench(&cfg).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert!(a.rows.iter().all(|r| r.converged));
        let counts = |r: &BenchReport| r.rows.iter().map(|x| (x.occupied_cells, x.n_unknowns, x.iterations)).collect::<Vec<_>>();
        assert_eq!(counts(&a), counts(&b));
        assert_eq!(a.rows_csv().lines().count(), 4);
    }

    #[test]
    fn map_generation_is_independent_of_solver() {
        let base = BenchConfig {
            size: 80,
            obstacles: 3,
            trials: 4,
            seed: 21,
            ..Default::default()
        };
        let g = run_bench(&base).unwrap();
        let b = run_bench(&BenchConfig {
            solver: SolverKind::Bicgstab,
            ..base
        })
        .unwrap();
        let cells = |r: &BenchReport| r.rows.iter().map(|x| (x.occupied_cells, x.n_unknowns)).collect::<Vec<_>>();
        assert_eq!(cells(&g), cells(&b));
        assert!(b.rows.iter().all(|r| r.solver == SolverKind::Bicgstab));
    }

    #[test]
    fn rejects_zero_trials() {
        let cfg = BenchConfig {
            trials: 0,
            ..Default::default()
        };
        assert!(matches!(run_bench(&cfg), Err(Error::Config(_))));
    }
}
