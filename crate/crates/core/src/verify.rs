//! Randomized cross-checks of the Krylov solvers against reference solutions.
//!
//! Every trial draws a small map, assembles its system with random boundary
//! values and checks:
//! - GMRES and BiCGSTAB against dense elimination
//! - Jacobi iteration against dense elimination
//! - the discrete harmonic residual, recomputed from the labels
//! - the maximum principle on every transition component

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{bicgstab, gmres, jacobi_oracle, SolverConfig};
use crate::laplace_system::{assemble, dense_oracle_solve, index_unknowns, BoundaryValues, UnknownIndex};
use crate::mapgen::{small_scene, trial_rng};
use crate::ogm::{labels_to_ascii, Region, RegionLabels};

/// Deliberate corruption for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Adds 1e-3 to the first GMRES unknown.
    PerturbGmres,
    /// Adds 0.5 to the first assembled right-hand-side entry. Every solver
    /// agrees with the dense solve of the corrupted system; only the
    /// label-driven stencil residual notices.
    AssemblyRhs,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "perturb_gmres" => Ok(Fault::PerturbGmres),
            "assembly_rhs" => Ok(Fault::AssemblyRhs),
            other => Err(format!("unknown fault {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub max_n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Allowed max-abs deviation from the dense solution.
    pub tol: f64,
    /// Relative residual target for the Krylov solvers.
    pub solver_tol: f64,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            max_n: 500,
            trials: 200,
            seed: 0,
            tol: 1e-6,
            solver_tol: 1e-10,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    GmresVsDense,
    BicgstabVsDense,
    JacobiVsDense,
    HarmonicResidual,
    MaxPrinciple,
}

pub const ALL_CHECKS: [Check; 5] = [
    Check::GmresVsDense,
    Check::BicgstabVsDense,
    Check::JacobiVsDense,
    Check::HarmonicResidual,
    Check::MaxPrinciple,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub check: Check,
    pub passed: usize,
    pub failed: usize,
    /// Largest observed error (for the max principle: smallest margin).
    pub worst: f64,
}

/// Everything needed to rebuild a failing trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayCase {
    pub seed: u64,
    pub trial: usize,
    pub max_n: usize,
    pub check: Check,
    pub value: f64,
    pub limit: f64,
    pub a: f64,
    pub b: f64,
    pub cell_size: f64,
    pub delta_m: f64,
    pub n_unknowns: usize,
    /// Region labels, one row per line (`#` obstacle, `+` transition, `.` safe).
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub trials: usize,
    pub checks: Vec<CheckSummary>,
    pub failures: Vec<ReplayCase>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest `|4 h_ij - sum of neighbours|` over transition cells, with
/// obstacle neighbours at `-a` and safe or off-map neighbours at `b`.
pub fn stencil_residual(labels: &RegionLabels, index: &UnknownIndex, x: &[f64], bv: BoundaryValues) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, &(i, j)) in index.cells().iter().enumerate() {
        let mut sum = 0.0;
        for nb in labels.neighbors(i, j) {
            sum += match nb {
                None => bv.b_val,
                Some((r, c)) => match labels.get(r, c) {
                    Region::Obstacle => -bv.a,
                    Region::Safe => bv.b_val,
                    Region::Transition => x[index.index_of(r, c).expect("transition cell indexed")],
                },
            };
        }
        worst = worst.max((4.0 * x[k] - sum).abs());
    }
    worst
}

/// Smallest margin `min(x + a, b - x)` over transition components that touch
/// both an obstacle and a safe/off-map boundary, and the smallest margin over
/// all cells (which must merely be non-negative).
pub fn max_principle_margins(labels: &RegionLabels, index: &UnknownIndex, x: &[f64], bv: BoundaryValues) -> (f64, f64) {
    let n = index.count();
    let mut component = vec![usize::MAX; n];
    let mut strict = f64::INFINITY;
    let mut loose = f64::INFINITY;
    let mut next = 0;
    for seed in 0..n {
        if component[seed] != usize::MAX {
            continue;
        }
        let (mut low, mut high) = (false, false);
        let mut members = Vec::new();
        let mut queue = VecDeque::from([seed]);
        component[seed] = next;
        while let Some(k) = queue.pop_front() {
            members.push(k);
            let (i, j) = index.cells()[k];
            for nb in labels.neighbors(i, j) {
                match nb.map(|(r, c)| (labels.get(r, c), r, c)) {
                    None | Some((Region::Safe, _, _)) => high = true,
                    Some((Region::Obstacle, _, _)) => low = true,
                    Some((Region::Transition, r, c)) => {
                        let q = index.index_of(r, c).expect("transition cell indexed");
                        if component[q] == usize::MAX {
                            component[q] = next;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        for &k in &members {
            let m = (x[k] + bv.a).min(bv.b_val - x[k]);
            loose = loose.min(m);
            if low && high {
                strict = strict.min(m);
            }
        }
        next += 1;
    }
    (strict, loose)
}

struct TrialOutcome {
    values: Vec<(Check, f64, f64, bool)>,
    replay: ReplayBase,
}

struct ReplayBase {
    a: f64,
    b: f64,
    cell_size: f64,
    delta_m: f64,
    n_unknowns: usize,
    labels: String,
}

fn run_trial(cfg: &VerifyConfig, trial: usize) -> Result<TrialOutcome> {
    let mut rng = trial_rng(cfg.seed, trial as u64);
    let scene = small_scene(&mut rng, cfg.max_n)?;
    let bv = BoundaryValues::new(rng.gen_range(0.25..4.0), rng.gen_range(0.25..4.0))?;
    let index = index_unknowns(&scene.labels);
    let mut sys = assemble(&scene.labels, &index, bv)?;
    if cfg.fault == Some(Fault::AssemblyRhs) {
        sys.rhs[0] += 0.5;
    }
    let exact = dense_oracle_solve(&sys, cfg.max_n.max(1))?;

    let solver_cfg = SolverConfig {
        tol: cfg.solver_tol,
        ..Default::default()
    };
    let mut xg = gmres(&sys, &solver_cfg)?.x;
    if cfg.fault == Some(Fault::PerturbGmres) {
        xg[0] += 1e-3;
    }
    let xb = bicgstab(&sys, &solver_cfg)?.x;
    let xj = jacobi_oracle(&sys, 1e-13, 2_000_000)?;

    let residual_limit = 1e-6 * (bv.a + bv.b_val);
    let slack = 10.0 * cfg.solver_tol;
    let (strict, loose) = max_principle_margins(&scene.labels, &index, &xg, bv);
    let mp_ok = strict >= slack && loose >= -cfg.tol;
    let mut values = Vec::new();
    for (check, x) in [(Check::GmresVsDense, &xg), (Check::BicgstabVsDense, &xb), (Check::JacobiVsDense, &xj)] {
        let d = max_abs_diff(x, &exact);
        values.push((check, d, cfg.tol, d <= cfg.tol));
    }
    let r = stencil_residual(&scene.labels, &index, &xg, bv);
    values.push((Check::HarmonicResidual, r, residual_limit, r <= residual_limit));
    values.push((Check::MaxPrinciple, if strict.is_finite() { strict } else { loose }, slack, mp_ok));

    Ok(TrialOutcome {
        values,
        replay: ReplayBase {
            a: bv.a,
            b: bv.b_val,
            cell_size: scene.map.cell_size(),
            delta_m: scene.delta_m,
            n_unknowns: index.count(),
            labels: labels_to_ascii(&scene.labels),
        },
    })
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.trials == 0 || cfg.max_n == 0 || !(cfg.tol > 0.0) || !(cfg.solver_tol > 0.0) {
        return Err(Error::Config("verify needs trials, max_n, tol and solver_tol > 0".into()));
    }
    let mut checks: Vec<CheckSummary> = ALL_CHECKS
        .iter()
        .map(|&check| CheckSummary {
            check,
            passed: 0,
            failed: 0,
            worst: if check == Check::MaxPrinciple { f64::INFINITY } else { 0.0 },
        })
        .collect();
    let mut failures = Vec::new();
    for trial in 0..cfg.trials {
        let out = run_trial(cfg, trial)?;
        for (check, value, limit, ok) in out.values {
            let s = checks.iter_mut().find(|s| s.check == check).expect("known check");
            s.worst = if check == Check::MaxPrinciple { s.worst.min(value) } else { s.worst.max(value) };
            if ok {
                s.passed += 1;
            } else {
                s.failed += 1;
                let r = &out.replay;
                failures.push(ReplayCase {
                    seed: cfg.seed,
                    trial,
                    max_n: cfg.max_n,
                    check,
                    value,
                    limit,
                    a: r.a,
                    b: r.b,
                    cell_size: r.cell_size,
                    delta_m: r.delta_m,
                    n_unknowns: r.n_unknowns,
                    labels: r.labels.clone(),
                });
            }
        }
    }
    Ok(VerifyReport {
        config: *cfg,
        trials: cfg.trials,
        checks,
        failures,
    })
}
