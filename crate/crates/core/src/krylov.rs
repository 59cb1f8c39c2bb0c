//! Krylov solvers for the assembled Laplace systems.
//!
//! - restarted GMRES with modified Gram-Schmidt and Givens rotations
//! - BiCGSTAB with a single restart on breakdown
//! - a Jacobi fixed-point oracle for tests
//!
//! All solvers start from the zero vector and measure convergence by the
//! relative 2-norm residual `||A x - b|| / ||b||`. Reported residuals are always
//! recomputed from the returned iterate, never taken from recurrences.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace_system::LinearSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Gmres,
    Bicgstab,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Gmres => "gmres",
            SolverKind::Bicgstab => "bicgstab",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gmres" => Ok(SolverKind::Gmres),
            "bicgstab" => Ok(SolverKind::Bicgstab),
            other => Err(format!("unknown solver {other:?} (expected gmres or bicgstab)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    /// `None` means `min(10 N, 20000)`.
    pub max_iters: Option<usize>,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: None,
            restart: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.restart == 0 {
            return Err(Error::Config(format!(
                "solver tol must be > 0 and restart >= 1 (tol = {}, restart = {})",
                self.tol, self.restart
            )));
        }
        Ok(())
    }

    pub fn iteration_limit(&self, n: usize) -> usize {
        self.max_iters.unwrap_or_else(|| (10 * n).min(20_000))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub stats: SolveStats,
}

/// `y = A x`.
pub fn spmv(sys: &LinearSystem, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != sys.n {
        return Err(Error::Contract(format!("spmv: x has {} entries, N = {}", x.len(), sys.n)));
    }
    let mut y = vec![0.0; sys.n];
    spmv_into(sys, x, &mut y);
    Ok(y)
}

#[inline]
fn spmv_into(sys: &LinearSystem, x: &[f64], y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        let (lo, hi) = (sys.row_ptr[i], sys.row_ptr[i + 1]);
        let mut acc = 0.0;
        for k in lo..hi {
            acc += sys.values[k] * x[sys.col_idx[k]];
        }
        *yi = acc;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `r = b - A x`, returns `||r||`.
fn residual_into(sys: &LinearSystem, x: &[f64], r: &mut [f64]) -> f64 {
    spmv_into(sys, x, r);
    for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
        *ri = bi - *ri;
    }
    norm(r)
}

/// Relative residual of `x`, recomputed from scratch.
pub fn relative_residual(sys: &LinearSystem, x: &[f64]) -> f64 {
    let mut r = vec![0.0; sys.n];
    let rn = residual_into(sys, x, &mut r);
    let bn = norm(&sys.rhs);
    if bn == 0.0 {
        rn
    } else {
        rn / bn
    }
}

fn check_inputs(sys: &LinearSystem, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if sys.n == 0 {
        return Err(Error::Contract("solver requires N >= 1".into()));
    }
    Ok(())
}

pub fn solve(kind: SolverKind, sys: &LinearSystem, cfg: &SolverConfig) -> Result<Solution> {
    match kind {
        SolverKind::Gmres => gmres(sys, cfg),
        SolverKind::Bicgstab => bicgstab(sys, cfg),
    }
}

/// Restarted GMRES(m). Non-convergence is reported through `stats.converged`.
pub fn gmres(sys: &LinearSystem, cfg: &SolverConfig) -> Result<Solution> {
    check_inputs(sys, cfg)?;
    let start = Instant::now();
    let n = sys.n;
    let max_iters = cfg.iteration_limit(n);
    let m = cfg.restart.min(n).max(1);
    let bnorm = norm(&sys.rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(Solution {
            x,
            stats: SolveStats {
                iterations: 0,
                final_relative_residual: 0.0,
                converged: true,
                wall_time: start.elapsed().as_secs_f64(),
            },
        });
    }

    let mut r = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = (0..=m).map(|_| vec![0.0; n]).collect();
    // Hessenberg stored column-wise: hess[j] has j + 2 entries.
    let mut hess = vec![vec![0.0; m + 1]; m];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];
    let mut iterations = 0;
    let mut rel = residual_into(sys, &x, &mut r) / bnorm;

    while rel > cfg.tol && iterations < max_iters {
        let beta = rel * bnorm;
        for (v0, ri) in basis[0].iter_mut().zip(&r) {
            *v0 = ri / beta;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;

        let mut k = 0;
        while k < m && iterations < max_iters {
            spmv_into(sys, &basis[k], &mut w);
            for i in 0..=k {
                let hik = dot(&w, &basis[i]);
                hess[k][i] = hik;
                axpy(-hik, &basis[i], &mut w);
            }
            let hnext = norm(&w);
            hess[k][k + 1] = hnext;
            if hnext > 0.0 {
                for (v, wi) in basis[k + 1].iter_mut().zip(&w) {
                    *v = wi / hnext;
                }
            }
            for i in 0..k {
                let (a, b) = (hess[k][i], hess[k][i + 1]);
                hess[k][i] = cs[i] * a + sn[i] * b;
                hess[k][i + 1] = -sn[i] * a + cs[i] * b;
            }
            let (a, b) = (hess[k][k], hess[k][k + 1]);
            let denom = a.hypot(b);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (a / denom, b / denom) };
            cs[k] = c;
            sn[k] = s;
            hess[k][k] = c * a + s * b;
            hess[k][k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            k += 1;
            iterations += 1;
            if g[k].abs() / bnorm <= cfg.tol || hnext == 0.0 {
                break;
            }
        }

        // Back-substitute the k x k triangular system and update x.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[j][i] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }
        let prev = rel;
        rel = residual_into(sys, &x, &mut r) / bnorm;
        if k == 0 || (rel >= prev && iterations >= max_iters) {
            break;
        }
    }

    Ok(Solution {
        x,
        stats: SolveStats {
            iterations,
            final_relative_residual: rel,
            converged: rel <= cfg.tol,
            wall_time: start.elapsed().as_secs_f64(),
        },
    })
}

/// BiCGSTAB. On breakdown (rho or omega vanishing) the method restarts from
/// the current iterate once; a second breakdown ends the solve.
pub fn bicgstab(sys: &LinearSystem, cfg: &SolverConfig) -> Result<Solution> {
    check_inputs(sys, cfg)?;
    let start = Instant::now();
    let n = sys.n;
    let max_iters = cfg.iteration_limit(n);
    let bnorm = norm(&sys.rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(Solution {
            x,
            stats: SolveStats {
                iterations: 0,
                final_relative_residual: 0.0,
                converged: true,
                wall_time: start.elapsed().as_secs_f64(),
            },
        });
    }
    const BREAKDOWN: f64 = 1e-300;

    let mut r = vec![0.0; n];
    let mut r_hat = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iterations = 0;
    let mut restarts_left = 1;
    let mut rel = residual_into(sys, &x, &mut r) / bnorm;

    'outer: while rel > cfg.tol && iterations < max_iters {
        r_hat.copy_from_slice(&r);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        let (mut rho, mut alpha, mut omega): (f64, f64, f64) = (1.0, 1.0, 1.0);

        while iterations < max_iters {
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < BREAKDOWN * bnorm * bnorm || omega.abs() < BREAKDOWN {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            spmv_into(sys, &p, &mut v);
            let rv = dot(&r_hat, &v);
            if rv.abs() < BREAKDOWN {
                break;
            }
            alpha = rho / rv;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            iterations += 1;
            if norm(&s) / bnorm <= cfg.tol {
                axpy(alpha, &p, &mut x);
                rel = residual_into(sys, &x, &mut r) / bnorm;
                if rel <= cfg.tol {
                    break 'outer;
                }
                continue 'outer;
            }
            spmv_into(sys, &s, &mut t);
            let tt = dot(&t, &t);
            if tt < BREAKDOWN {
                axpy(alpha, &p, &mut x);
                break;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) / bnorm <= cfg.tol {
                rel = residual_into(sys, &x, &mut r) / bnorm;
                if rel <= cfg.tol {
                    break 'outer;
                }
                continue 'outer;
            }
        }

        // Breakdown or budget exhausted inside the inner loop.
        rel = residual_into(sys, &x, &mut r) / bnorm;
        if rel <= cfg.tol || iterations >= max_iters {
            break;
        }
        if restarts_left == 0 {
            log::debug!("bicgstab: repeated breakdown after {iterations} iterations");
            break;
        }
        restarts_left -= 1;
    }

    let rel = relative_residual(sys, &x);
    Ok(Solution {
        x,
        stats: SolveStats {
            iterations,
            final_relative_residual: rel,
            converged: rel <= cfg.tol,
            wall_time: start.elapsed().as_secs_f64(),
        },
    })
}

/// Jacobi sweeps `x_i <- (rhs_i - sum_{j != i} A_ij x_j) / A_ii` until the
/// largest update falls below `tol`.
pub fn jacobi_oracle(sys: &LinearSystem, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    if sys.n == 0 {
        return Err(Error::Contract("jacobi oracle requires N >= 1".into()));
    }
    let n = sys.n;
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        let mut max_update: f64 = 0.0;
        for i in 0..n {
            let mut acc = sys.rhs[i];
            let mut diag = 0.0;
            for (j, v) in sys.row(i) {
                if j == i {
                    diag = v;
                } else {
                    acc -= v * x[j];
                }
            }
            next[i] = acc / diag;
            max_update = max_update.max((next[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if max_update < tol {
            return Ok(x);
        }
    }
    Err(Error::JacobiDiverged(max_iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace_system::tests::{figure_layout, random_labels};
    use crate::laplace_system::{assemble, dense_oracle_solve, index_unknowns, BoundaryValues};
    use crate::ogm::{Region, RegionLabels};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn figure_system() -> LinearSystem {
        let labels = figure_layout();
        assemble(&labels, &index_unknowns(&labels), BoundaryValues::default()).unwrap()
    }

    fn scalar_system(rhs: f64) -> LinearSystem {
        LinearSystem {
            n: 1,
            row_ptr: vec![0, 1],
            col_idx: vec![0],
            values: vec![4.0],
            rhs: vec![rhs],
        }
    }

    fn random_system(rng: &mut ChaCha8Rng, max_side: usize) -> LinearSystem {
        loop {
            let h = rng.gen_range(1..=max_side);
            let w = rng.gen_range(1..=max_side);
            let p_t: f64 = rng.gen_range(0.3..0.9);
            let cells: Vec<u8> = (0..h * w)
                .map(|_| if rng.gen_bool(p_t) { 1 } else if rng.gen_bool(0.5) { 0 } else { 2 })
                .collect();
            let labels = random_labels(h, w, &cells);
            let bv = BoundaryValues::new(rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)).unwrap();
            let sys = assemble(&labels, &index_unknowns(&labels), bv).unwrap();
            if sys.n > 0 {
                return sys;
            }
        }
    }

    #[test]
    fn spmv_examples() {
        let sys = figure_system();
        assert_eq!(spmv(&sys, &[0.0; 8]).unwrap(), vec![0.0; 8]);
        assert_eq!(spmv(&sys, &[1.0; 8]).unwrap(), vec![3.0; 8]);
        assert!(matches!(spmv(&sys, &[1.0; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn spmv_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let sys = random_system(&mut rng, 12);
            let x: Vec<f64> = (0..sys.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dense = sys.to_dense();
            let y = spmv(&sys, &x).unwrap();
            for i in 0..sys.n {
                let want: f64 = (0..sys.n).map(|j| dense[i * sys.n + j] * x[j]).sum();
                assert!((y[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn figure_system_all_solvers() {
        let sys = figure_system();
        let cfg = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        for kind in [SolverKind::Gmres, SolverKind::Bicgstab] {
            let sol = solve(kind, &sys, &cfg).unwrap();
            assert!(sol.stats.converged, "{kind:?}");
            for v in &sol.x {
                assert!((v - 1.0 / 3.0).abs() < 1e-8, "{kind:?}: {v}");
            }
        }
        let x = jacobi_oracle(&sys, 1e-12, 10_000).unwrap();
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-11);
        }
    }

    #[test]
    fn scalar_solves() {
        let sys = scalar_system(2.0);
        let sol = gmres(&sys, &SolverConfig::default()).unwrap();
        assert_eq!(sol.stats.iterations, 1);
        assert!((sol.x[0] - 0.5).abs() < 1e-15);
        let sol = bicgstab(&sys, &SolverConfig::default()).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-15);
        // Enclosed cell: one sweep lands on -a.
        let x = jacobi_oracle(&scalar_system(-4.0), 1e-12, 2).unwrap();
        assert_eq!(x, vec![-1.0]);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let mut sys = figure_system();
        sys.rhs.iter_mut().for_each(|v| *v = 0.0);
        for kind in [SolverKind::Gmres, SolverKind::Bicgstab] {
            let sol = solve(kind, &sys, &SolverConfig::default()).unwrap();
            assert_eq!(sol.stats.iterations, 0);
            assert!(sol.stats.converged);
            assert!(sol.x.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forced_non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = loop {
            let s = random_system(&mut rng, 20);
            if s.n > 40 {
                break s;
            }
        };
        let cfg = SolverConfig {
            tol: 1e-30,
            max_iters: Some(1),
            restart: 50,
        };
        for kind in [SolverKind::Gmres, SolverKind::Bicgstab] {
            let sol = solve(kind, &sys, &cfg).unwrap();
            assert!(!sol.stats.converged);
            assert_eq!(sol.stats.iterations, 1);
        }
    }

    #[test]
    fn empty_system_is_contract_violation() {
        let sys = LinearSystem {
            n: 0,
            row_ptr: vec![0],
            col_idx: vec![],
            values: vec![],
            rhs: vec![],
        };
        assert!(gmres(&sys, &SolverConfig::default()).is_err());
        assert!(bicgstab(&sys, &SolverConfig::default()).is_err());
        assert!(jacobi_oracle(&sys, 1e-8, 10).is_err());
    }

    #[test]
    fn jacobi_reports_exhaustion() {
        let sys = figure_system();
        assert!(matches!(jacobi_oracle(&sys, 1e-14, 3), Err(Error::JacobiDiverged(3))));
    }

    #[test]
    fn random_sweep_against_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let cfg = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        for _ in 0..100 {
            let sys = random_system(&mut rng, 30);
            assert!(sys.n <= 900);
            let want = dense_oracle_solve(&sys, 2000).unwrap();
            let g = gmres(&sys, &cfg).unwrap();
            let b = bicgstab(&sys, &cfg).unwrap();
            let j = jacobi_oracle(&sys, 1e-12, 200_000).unwrap();
            assert!(g.stats.converged && b.stats.converged);
            let xnorm = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..sys.n {
                assert!((g.x[i] - want[i]).abs() < 1e-6);
                assert!((b.x[i] - want[i]).abs() < 1e-6);
                assert!((j[i] - want[i]).abs() < 1e-6);
                assert!((g.x[i] - b.x[i]).abs() <= 1e-6 * xnorm.max(1.0));
            }
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sys = random_system(&mut rng, 25);
        for kind in [SolverKind::Gmres, SolverKind::Bicgstab] {
            let a = solve(kind, &sys, &SolverConfig::default()).unwrap();
            let b = solve(kind, &sys, &SolverConfig::default()).unwrap();
            assert_eq!(a.x, b.x);
            assert_eq!(a.stats.iterations, b.stats.iterations);
        }
    }

    #[test]
    fn small_restart_still_converges() {
        let labels = RegionLabels::from_labels(1, 40, vec![Region::Transition; 40]).unwrap();
        let sys = assemble(&labels, &index_unknowns(&labels), BoundaryValues::default()).unwrap();
        let cfg = SolverConfig {
            tol: 1e-10,
            max_iters: Some(5000),
            restart: 3,
        };
        let sol = gmres(&sys, &cfg).unwrap();
        assert!(sol.stats.converged);
        assert!(sol.x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residual_contract_and_linearity(seed in any::<u64>(), lambda in 0.1f64..10.0, tol_exp in 6i32..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sys = random_system(&mut rng, 20);
            let cfg = SolverConfig { tol: 10f64.powi(-tol_exp), ..Default::default() };
            for kind in [SolverKind::Gmres, SolverKind::Bicgstab] {
                let sol = solve(kind, &sys, &cfg).unwrap();
                prop_assert!(sol.stats.converged);
                prop_assert!(relative_residual(&sys, &sol.x) <= cfg.tol);
                prop_assert_eq!(sol.stats.final_relative_residual, relative_residual(&sys, &sol.x));

                let mut scaled = sys.clone();
                scaled.rhs.iter_mut().for_each(|v| *v *= lambda);
                let sol2 = solve(kind, &scaled, &cfg).unwrap();
                let xn = sol.x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
                for (a, b) in sol.x.iter().zip(&sol2.x) {
                    prop_assert!((a * lambda - b).abs() <= 1e3 * cfg.tol * lambda * xn);
                }
            }
        }
    }
}
