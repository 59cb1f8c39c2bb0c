//! Closed-loop navigation simulator.
//!
//! Each control period the robot crops a window of the ground-truth raster
//! around itself, synthesizes a barrier field on it (skipped when the window
//! is empty), samples `h` and its gradient at the controlled point, filters the
//! goal-seeking command and integrates one step.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbf_field::{synthesize, SafetyField, SynthesisParams};
use crate::error::{Error, Result};
use crate::geometry::{fmt_g, Point2};
use crate::ogm::GridMap;
use crate::robot_models::{
    integrate_single, integrate_unicycle, nominal_control, unicycle_from_velocity, DiffeoParams, NominalParams,
    RobotState,
};
use crate::safety_filter::{filter, ControlInput2D, FilterParams};

/// Mean transition-cell count reported for the 200x200, 1 cm local maps
/// of the reference simulation; printed next to our own numbers.
pub const REFERENCE_MEAN_TRANSITION_CELLS: f64 = 6962.60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Circle { center: Point2, radius: f64 },
    /// Axis-aligned; `corner` is the minimum-x, minimum-y vertex.
    Rectangle { corner: Point2, extents: [f64; 2] },
}

impl Shape {
    /// Inclusive containment test.
    pub fn contains(&self, p: Point2) -> bool {
        match *self {
            Shape::Circle { center, radius } => {
                let (dx, dy) = (p.x - center.x, p.y - center.y);
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rectangle { corner, extents } => {
                p.x >= corner.x && p.x <= corner.x + extents[0] && p.y >= corner.y && p.y <= corner.y + extents[1]
            }
        }
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bounds(&self) -> (Point2, Point2) {
        match *self {
            Shape::Circle { center, radius } => (
                Point2::new(center.x - radius, center.y - radius),
                Point2::new(center.x + radius, center.y + radius),
            ),
            Shape::Rectangle { corner, extents } => {
                (corner, Point2::new(corner.x + extents[0], corner.y + extents[1]))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Circle { center, radius } => center.is_finite() && radius > 0.0,
            Shape::Rectangle { corner, extents } => corner.is_finite() && extents[0] > 0.0 && extents[1] > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate obstacle {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SenseConfig {
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
}

impl Default for SenseConfig {
    fn default() -> Self {
        Self {
            height: 200,
            width: 200,
            cell_size: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RobotModel {
    SingleIntegrator,
    Unicycle(DiffeoParams),
}

impl Default for RobotModel {
    fn default() -> Self {
        RobotModel::SingleIntegrator
    }
}

impl RobotModel {
    /// The point whose velocity the planar command sets.
    pub fn control_point(&self, state: &RobotState) -> Point2 {
        match self {
            RobotModel::SingleIntegrator => state.position(),
            RobotModel::Unicycle(d) => state.look_ahead(d.r),
        }
    }

    pub fn step(&self, state: RobotState, u: ControlInput2D, dt: f64) -> RobotState {
        match self {
            RobotModel::SingleIntegrator => {
                let p = integrate_single(state.position(), u, dt);
                RobotState { x: p.x, y: p.y, theta: state.theta }
            }
            RobotModel::Unicycle(d) => {
                let (v, omega) = unicycle_from_velocity(state.theta, u, d);
                integrate_unicycle(state, v, omega, dt)
            }
        }
    }
}

fn default_dt() -> f64 {
    0.05
}

fn default_max_steps() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub arena: Arena,
    #[serde(default)]
    pub obstacles: Vec<Shape>,
    pub start: RobotState,
    pub goals: Vec<Point2>,
    #[serde(default)]
    pub sense: SenseConfig,
    #[serde(default)]
    pub synthesis: SynthesisParams,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub nominal: NominalParams,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub model: RobotModel,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Sequential three-goal reaching task among four disks and four squares.
    ///
    /// The waypoints reach x = 4 m, so the arena is 4.5 m square.
    pub fn paperlike() -> Self {
        let circle = |x, y| Shape::Circle {
            center: Point2::new(x, y),
            radius: 0.15,
        };
        let square = |x, y| Shape::Rectangle {
            corner: Point2::new(x, y),
            extents: [0.2, 0.2],
        };
        Self {
            arena: Arena { width: 4.5, height: 4.5 },
            obstacles: vec![
                circle(2.05, 1.95),
                circle(3.62, 2.42),
                circle(1.95, 2.75),
                circle(1.0, 2.5),
                square(2.7, 2.32),
                square(3.2, 1.55),
                square(1.45, 3.3),
                square(2.6, 3.6),
            ],
            start: RobotState::new(1.25, 1.25, 0.0),
            goals: vec![Point2::new(4.0, 3.5), Point2::new(3.0, 1.0), Point2::new(1.25, 3.75)],
            sense: SenseConfig::default(),
            synthesis: SynthesisParams {
                a: 1.0,
                b_val: 1.0,
                delta_m: 0.15,
                robot_radius_m: 0.1,
                ..Default::default()
            },
            filter: FilterParams {
                gamma: 0.15,
                v_max: 0.15,
                grad_eps: 1e-9,
            },
            nominal: NominalParams { k: 0.15, goal_eps: 0.005 },
            dt: 0.05,
            model: RobotModel::Unicycle(DiffeoParams::default()),
            max_steps: 20_000,
        }
    }

    /// Replaces the obstacles with `count` random disks and squares sized like
    /// the reference layout, keeping clear of the start and every goal.
    pub fn randomize_obstacles<R: Rng>(&mut self, rng: &mut R, count: usize) {
        let keep_out = self.synthesis.robot_radius_m + self.synthesis.delta_m + 0.25;
        let mut anchors: Vec<Point2> = self.goals.clone();
        anchors.push(self.start.position());
        self.obstacles.clear();
        let mut attempts = 0;
        while self.obstacles.len() < count && attempts < 10_000 {
            attempts += 1;
            let shape = if rng.gen_bool(0.5) {
                let radius = rng.gen_range(0.1..0.2);
                Shape::Circle {
                    center: Point2::new(
                        rng.gen_range(radius..self.arena.width - radius),
                        rng.gen_range(radius..self.arena.height - radius),
                    ),
                    radius,
                }
            } else {
                let side = rng.gen_range(0.15..0.25);
                Shape::Rectangle {
                    corner: Point2::new(
                        rng.gen_range(0.0..self.arena.width - side),
                        rng.gen_range(0.0..self.arena.height - side),
                    ),
                    extents: [side, side],
                }
            };
            let (lo, hi) = shape.bounds();
            let center = Point2::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y));
            let half = 0.5 * (hi.x - lo.x).max(hi.y - lo.y) * std::f64::consts::SQRT_2;
            if anchors.iter().any(|a| a.distance(center) < half + keep_out) {
                continue;
            }
            self.obstacles.push(shape);
        }
    }

    /// Copy of `self` with a random start, one random goal at least 1 m away
    /// and 2 to 8 random obstacles.
    pub fn randomized<R: Rng>(&self, rng: &mut R) -> Self {
        let mut scn = self.clone();
        let margin = 0.3;
        let (w, h) = (scn.arena.width, scn.arena.height);
        let point = |rng: &mut R| Point2::new(rng.gen_range(margin..w - margin), rng.gen_range(margin..h - margin));
        let start = point(rng);
        let mut goal = point(rng);
        while goal.distance(start) < 1.0 {
            goal = point(rng);
        }
        scn.start = RobotState::new(start.x, start.y, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        scn.goals = vec![goal];
        let count = rng.gen_range(2..=8);
        scn.randomize_obstacles(rng, count);
        scn
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.arena.width > 0.0 && self.arena.height > 0.0) {
            return cfg("arena dimensions must be positive".into());
        }
        if self.goals.is_empty() {
            return cfg("at least one goal is required".into());
        }
        if !(self.dt > 0.0) {
            return cfg(format!("dt must be > 0, got {}", self.dt));
        }
        let s = &self.sense;
        if s.height < 2 || s.width < 2 || s.height % 2 != 0 || s.width % 2 != 0 || !(s.cell_size > 0.0) {
            return cfg("sense window must have even dimensions >= 2 and positive cell size".into());
        }
        self.synthesis.validate()?;
        self.filter.validate()?;
        self.nominal.validate()?;
        if let RobotModel::Unicycle(d) = self.model {
            if !(d.r > 0.0) {
                return cfg(format!("look-ahead offset must be > 0, got {}", d.r));
            }
        }
        let inside = |p: Point2| p.x >= 0.0 && p.y >= 0.0 && p.x <= self.arena.width && p.y <= self.arena.height;
        for (k, o) in self.obstacles.iter().enumerate() {
            o.validate()?;
            let (lo, hi) = o.bounds();
            if !inside(lo) || !inside(hi) {
                return cfg(format!("obstacle {k} extends outside the arena"));
            }
        }
        let start = self.start.position();
        if !start.is_finite() || !self.start.theta.is_finite() || !inside(start) {
            return cfg("start must lie inside the arena".into());
        }
        if self.obstacles.iter().any(|o| o.contains(start)) {
            return cfg("start lies inside an obstacle".into());
        }
        Ok(())
    }

    pub fn collides(&self, p: Point2) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }
}

/// Ground-truth occupancy of the whole arena at the sensing resolution.
pub fn rasterize_world(scn: &Scenario) -> Result<GridMap> {
    let cs = scn.sense.cell_size;
    let w = ((scn.arena.width / cs) - 1e-9).ceil().max(1.0) as usize;
    let h = ((scn.arena.height / cs) - 1e-9).ceil().max(1.0) as usize;
    let inside = |p: Point2| p.x >= 0.0 && p.y >= 0.0 && p.x <= scn.arena.width && p.y <= scn.arena.height;
    let mut map = GridMap::new(h, w, cs, Point2::new(0.5 * cs, 0.5 * cs))?;
    for (k, shape) in scn.obstacles.iter().enumerate() {
        shape.validate()?;
        let (lo, hi) = shape.bounds();
        if !inside(lo) || !inside(hi) {
            return Err(Error::Config(format!("obstacle {k} extends outside the arena")));
        }
        let j0 = ((lo.x / cs).floor() as usize).saturating_sub(1);
        let i0 = ((lo.y / cs).floor() as usize).saturating_sub(1);
        let j1 = ((hi.x / cs).ceil() as usize + 1).min(w - 1);
        let i1 = ((hi.y / cs).ceil() as usize + 1).min(h - 1);
        for i in i0..=i1 {
            for j in j0..=j1 {
                if shape.contains(map.cell_center(i, j)) {
                    map.set(i, j, true);
                }
            }
        }
    }
    Ok(map)
}

/// Window of `global` centered on the cell containing `p`; cells beyond the
/// global extent read as free. World coordinates are preserved.
pub fn sense_local(global: &GridMap, p: Point2, cfg: &SenseConfig) -> Result<GridMap> {
    let cs = global.cell_size();
    let ci = ((p.y - global.origin().y) / cs + 0.5).floor() as isize;
    let cj = ((p.x - global.origin().x) / cs + 0.5).floor() as isize;
    let (h, w) = (cfg.height as isize, cfg.width as isize);
    let (top, left) = (ci - h / 2, cj - w / 2);
    let origin = Point2::new(global.origin().x + left as f64 * cs, global.origin().y + top as f64 * cs);
    let mut local = GridMap::new(cfg.height, cfg.width, cs, origin)?;
    let (gh, gw) = (global.height() as isize, global.width() as isize);
    for i in 0..h {
        let gi = top + i;
        if gi < 0 || gi >= gh {
            continue;
        }
        for j in 0..w {
            let gj = left + j;
            if gj >= 0 && gj < gw && global.is_occupied(gi as usize, gj as usize) {
                local.set(i as usize, j as usize, true);
            }
        }
    }
    Ok(local)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTimings {
    /// Inflation, distance transform, classification and matrix assembly.
    pub assembly_ms: f64,
    pub solve_ms: f64,
    pub sampling_ms: f64,
    pub filter_ms: f64,
}

impl StepTimings {
    pub fn total_ms(&self) -> f64 {
        self.assembly_ms + self.solve_ms + self.sampling_ms + self.filter_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// State at the start of the step.
    pub state: RobotState,
    pub control_point: Point2,
    pub goal_index: usize,
    pub h: f64,
    pub grad: [f64; 2],
    pub u_nom: ControlInput2D,
    pub u: ControlInput2D,
    pub constraint_active: bool,
    pub degenerate: bool,
    pub clamped: bool,
    /// A field was synthesized this step (false on empty windows).
    pub synthesized: bool,
    /// The solver failed and the previous field was sampled instead.
    pub reused_field: bool,
    pub n_unknowns: usize,
    pub iterations: usize,
    pub timings: StepTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AllGoalsReached,
    MaxSteps,
    SolverFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalArrival {
    pub goal_index: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub arrivals: Vec<GoalArrival>,
    pub final_state: RobotState,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    pub min_h: f64,
    pub collisions: usize,
    pub goals_reached: usize,
    pub goals_total: usize,
    pub termination: Termination,
    pub synthesized_steps: usize,
    pub mean_assembly_ms: f64,
    pub max_assembly_ms: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub mean_transition_cells: f64,
    pub reference_mean_transition_cells: f64,
    pub constraint_active_steps: usize,
    pub clamped_steps: usize,
    pub degenerate_steps: usize,
    pub reused_field_steps: usize,
}

impl Metrics {
    /// All goals reached without touching an obstacle.
    pub fn success(&self) -> bool {
        self.goals_reached == self.goals_total && self.collisions == 0
    }
}

/// Per-robot planning output for one step.
struct Plan {
    record: StepRecord,
    field: Option<SafetyField>,
    failed: bool,
}

fn plan_step(
    scn: &Scenario,
    local: &GridMap,
    state: RobotState,
    t: f64,
    goal_index: usize,
    prev: Option<&SafetyField>,
) -> Result<Plan> {
    let pc = scn.model.control_point(&state);
    let goal = scn.goals[goal_index];
    let u_nom = nominal_control(pc, goal, &scn.nominal);
    let mut record = StepRecord {
        t,
        state,
        control_point: pc,
        goal_index,
        h: scn.synthesis.b_val,
        grad: [0.0, 0.0],
        u_nom,
        u: u_nom,
        constraint_active: false,
        degenerate: false,
        clamped: false,
        synthesized: false,
        reused_field: false,
        n_unknowns: 0,
        iterations: 0,
        timings: StepTimings::default(),
    };

    if local.occupied_count() == 0 {
        return Ok(Plan {
            record,
            field: None,
            failed: false,
        });
    }

    let (field, fresh) = match synthesize(local, &scn.synthesis) {
        Ok(f) => (f, true),
        Err(Error::NotConverged(stats)) => {
            log::warn!(
                "t = {t:.2}: solver did not converge ({} iterations, residual {:.2e}); reusing previous field",
                stats.iterations,
                stats.final_relative_residual
            );
            match prev {
                Some(p) if p.contains(pc) => (p.clone(), false),
                _ => {
                    return Ok(Plan {
                        record,
                        field: None,
                        failed: true,
                    })
                }
            }
        }
        Err(e) => return Err(e),
    };
    record.synthesized = fresh;
    record.reused_field = !fresh;
    if fresh {
        let s = field.stats();
        record.n_unknowns = s.n_unknowns;
        record.iterations = s.solve.iterations;
        record.timings.assembly_ms = s.inflate_ms + s.assembly_ms;
        record.timings.solve_ms = s.solve_ms;
    }

    let t_sample = Instant::now();
    record.h = field.value_at(pc)?;
    record.grad = field.gradient_at(pc)?;
    record.timings.sampling_ms = t_sample.elapsed().as_secs_f64() * 1e3;

    let t_filter = Instant::now();
    let out = filter(u_nom, record.h, record.grad, &scn.filter)?;
    record.timings.filter_ms = t_filter.elapsed().as_secs_f64() * 1e3;
    record.u = out.u;
    record.constraint_active = out.constraint_active;
    record.degenerate = out.degenerate;
    record.clamped = out.clamped;

    Ok(Plan {
        record,
        field: Some(field),
        failed: false,
    })
}

/// Runs the closed loop until every goal is reached, `max_steps` elapse, or
/// the solver fails with no previous field to fall back on.
pub fn run_episode(scn: &Scenario) -> Result<EpisodeLog> {
    run_episode_with(scn, |_, _| Ok(()))
}

/// [`run_episode`] with a callback receiving every freshly synthesized field.
pub fn run_episode_with<F>(scn: &Scenario, mut on_field: F) -> Result<EpisodeLog>
where
    F: FnMut(usize, &SafetyField) -> Result<()>,
{
    scn.validate()?;
    let global = rasterize_world(scn)?;
    let mut state = scn.start;
    let mut goal_index = 0;
    let mut prev: Option<SafetyField> = None;
    let mut steps = Vec::new();
    let mut arrivals = Vec::new();
    let mut termination = Termination::MaxSteps;

    advance_goals(scn, &state, 0.0, &mut goal_index, &mut arrivals);
    for k in 0..scn.max_steps {
        if goal_index == scn.goals.len() {
            break;
        }
        let t = k as f64 * scn.dt;
        let local = sense_local(&global, state.position(), &scn.sense)?;
        let plan = plan_step(scn, &local, state, t, goal_index, prev.as_ref())?;
        if plan.failed {
            termination = Termination::SolverFailure;
            break;
        }
        if k == 0 && plan.record.h <= 0.0 {
            return Err(Error::Config(format!(
                "barrier value at start is {} (must be > 0)",
                plan.record.h
            )));
        }
        if let Some(field) = plan.field {
            if plan.record.synthesized {
                on_field(k, &field)?;
            }
            prev = Some(field);
        }
        state = scn.model.step(state, plan.record.u, scn.dt);
        steps.push(plan.record);
        advance_goals(scn, &state, (k + 1) as f64 * scn.dt, &mut goal_index, &mut arrivals);
    }
    if goal_index == scn.goals.len() {
        termination = Termination::AllGoalsReached;
    }
    Ok(EpisodeLog {
        steps,
        arrivals,
        final_state: state,
        termination,
    })
}

fn advance_goals(scn: &Scenario, state: &RobotState, t: f64, goal_index: &mut usize, arrivals: &mut Vec<GoalArrival>) {
    let pc = scn.model.control_point(state);
    while *goal_index < scn.goals.len() && pc.distance(scn.goals[*goal_index]) < scn.nominal.goal_eps {
        arrivals.push(GoalArrival {
            goal_index: *goal_index,
            t,
        });
        *goal_index += 1;
    }
}

/// One robot of a team episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub start: RobotState,
    pub goals: Vec<Point2>,
}

/// Multi-robot episode over the arena, obstacles and parameters of `scn`
/// (its own start and goals are ignored). Every robot sees the others as
/// disks of `body_radius_m` stamped into its sensed map. Fields are
/// synthesized in parallel from the same previous-step poses, then all
/// robots integrate together.
pub fn run_team(scn: &Scenario, agents: &[Agent], body_radius_m: f64) -> Result<Vec<EpisodeLog>> {
    if agents.is_empty() {
        return Err(Error::Config("team episode needs at least one agent".into()));
    }
    let per_agent: Vec<Scenario> = agents
        .iter()
        .map(|a| Scenario {
            start: a.start,
            goals: a.goals.clone(),
            ..scn.clone()
        })
        .collect();
    for s in &per_agent {
        s.validate()?;
    }
    let global = rasterize_world(scn)?;

    struct Robot {
        state: RobotState,
        goal_index: usize,
        prev: Option<SafetyField>,
        steps: Vec<StepRecord>,
        arrivals: Vec<GoalArrival>,
        failed: bool,
    }
    let mut robots: Vec<Robot> = per_agent
        .iter()
        .map(|s| {
            let mut r = Robot {
                state: s.start,
                goal_index: 0,
                prev: None,
                steps: Vec::new(),
                arrivals: Vec::new(),
                failed: false,
            };
            advance_goals(s, &r.state, 0.0, &mut r.goal_index, &mut r.arrivals);
            r
        })
        .collect();

    for k in 0..scn.max_steps {
        if robots.iter().all(|r| r.failed || r.goal_index == r_goals(&per_agent, &robots, r)) {
            break;
        }
        let t = k as f64 * scn.dt;
        let poses: Vec<Point2> = robots.iter().map(|r| r.state.position()).collect();
        let plans: Vec<Option<Result<Plan>>> = robots
            .par_iter()
            .enumerate()
            .map(|(idx, r)| {
                let s = &per_agent[idx];
                if r.failed || r.goal_index == s.goals.len() {
                    return None;
                }
                let result = sense_local(&global, r.state.position(), &s.sense).and_then(|mut local| {
                    for (other, p) in poses.iter().enumerate() {
                        if other != idx {
                            stamp_disk(&mut local, *p, body_radius_m);
                        }
                    }
                    plan_step(s, &local, r.state, t, r.goal_index, r.prev.as_ref())
                });
                Some(result)
            })
            .collect();
        // Barrier: every plan above used the same previous-step poses.
        for (idx, (robot, plan)) in robots.iter_mut().zip(plans).enumerate() {
            let Some(plan) = plan else { continue };
            let plan = plan?;
            if plan.failed {
                robot.failed = true;
                continue;
            }
            if let Some(f) = plan.field {
                robot.prev = Some(f);
            }
            let s = &per_agent[idx];
            robot.state = s.model.step(robot.state, plan.record.u, s.dt);
            robot.steps.push(plan.record);
            advance_goals(s, &robot.state, (k + 1) as f64 * s.dt, &mut robot.goal_index, &mut robot.arrivals);
        }
    }

    Ok(robots
        .into_iter()
        .zip(&per_agent)
        .map(|(r, s)| EpisodeLog {
            termination: if r.goal_index == s.goals.len() {
                Termination::AllGoalsReached
            } else if r.failed {
                Termination::SolverFailure
            } else {
                Termination::MaxSteps
            },
            steps: r.steps,
            arrivals: r.arrivals,
            final_state: r.state,
        })
        .collect())
}

fn r_goals<T>(per_agent: &[Scenario], robots: &[T], r: &T) -> usize {
    let idx = robots.iter().position(|x| std::ptr::eq(x, r)).expect("robot in slice");
    per_agent[idx].goals.len()
}

/// Marks cells whose centers lie within `radius` of `p`.
pub fn stamp_disk(map: &mut GridMap, p: Point2, radius: f64) {
    let cs = map.cell_size();
    let r2 = radius * radius;
    let reach = (radius / cs).ceil() as isize + 1;
    let ci = ((p.y - map.origin().y) / cs).round() as isize;
    let cj = ((p.x - map.origin().x) / cs).round() as isize;
    for i in ci - reach..=ci + reach {
        for j in cj - reach..=cj + reach {
            if i < 0 || j < 0 || i >= map.height() as isize || j >= map.width() as isize {
                continue;
            }
            let c = map.cell_center(i as usize, j as usize);
            let (dx, dy) = (c.x - p.x, c.y - p.y);
            if dx * dx + dy * dy <= r2 {
                map.set(i as usize, j as usize, true);
            }
        }
    }
}

pub fn metrics(log: &EpisodeLog, scn: &Scenario) -> Metrics {
    let synthesized: Vec<&StepRecord> = log.steps.iter().filter(|s| s.synthesized).collect();
    let mean = |f: &dyn Fn(&StepRecord) -> f64| {
        if synthesized.is_empty() {
            0.0
        } else {
            synthesized.iter().map(|s| f(s)).sum::<f64>() / synthesized.len() as f64
        }
    };
    let max = |f: &dyn Fn(&StepRecord) -> f64| synthesized.iter().map(|s| f(s)).fold(0.0, f64::max);
    let collisions = log
        .steps
        .iter()
        .map(|s| s.state.position())
        .chain(std::iter::once(log.final_state.position()))
        .filter(|&p| scn.collides(p))
        .count();
    Metrics {
        steps: log.steps.len(),
        min_h: log.steps.iter().map(|s| s.h).fold(f64::INFINITY, f64::min),
        collisions,
        goals_reached: log.arrivals.len(),
        goals_total: scn.goals.len(),
        termination: log.termination,
        synthesized_steps: synthesized.len(),
        mean_assembly_ms: mean(&|s| s.timings.assembly_ms),
        max_assembly_ms: max(&|s| s.timings.assembly_ms),
        mean_solve_ms: mean(&|s| s.timings.solve_ms),
        max_solve_ms: max(&|s| s.timings.solve_ms),
        mean_transition_cells: mean(&|s| s.n_unknowns as f64),
        reference_mean_transition_cells: REFERENCE_MEAN_TRANSITION_CELLS,
        constraint_active_steps: log.steps.iter().filter(|s| s.constraint_active).count(),
        clamped_steps: log.steps.iter().filter(|s| s.clamped).count(),
        degenerate_steps: log.steps.iter().filter(|s| s.degenerate).count(),
        reused_field_steps: log.steps.iter().filter(|s| s.reused_field).count(),
    }
}

pub fn trajectory_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("t,x,y,theta,vx,vy,h\n");
    for s in &log.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_g(s.t, 9),
            fmt_g(s.state.x, 9),
            fmt_g(s.state.y, 9),
            fmt_g(s.state.theta, 9),
            fmt_g(s.u.vx, 9),
            fmt_g(s.u.vy, 9),
            fmt_g(s.h, 9)
        );
    }
    out
}

pub fn h_log_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("t,h\n");
    for s in &log.steps {
        let _ = writeln!(out, "{},{}", fmt_g(s.t, 9), fmt_g(s.h, 9));
    }
    out
}

pub fn timings_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("t,assembly_ms,solve_ms,iterations,n_unknowns\n");
    for s in &log.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_g(s.t, 9),
            fmt_g(s.timings.assembly_ms, 6),
            fmt_g(s.timings.solve_ms, 6),
            s.iterations,
            s.n_unknowns
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes trajectory.csv, h_log.csv, timings.csv and metrics.json into `dir`.
pub fn write_episode(dir: &Path, log: &EpisodeLog, metrics: &Metrics) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("trajectory.csv"), &trajectory_csv(log))?;
    write_file(&dir.join("h_log.csv"), &h_log_csv(log))?;
    write_file(&dir.join("timings.csv"), &timings_csv(log))?;
    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    write_file(&dir.join("metrics.json"), &json)
}

/// Writes one synthesized field as `fields/step_NNNNNN.csv` plus its JSON sidecar.
pub fn write_field_dump(dir: &Path, step: usize, field: &SafetyField) -> Result<()> {
    let fields = dir.join("fields");
    std::fs::create_dir_all(&fields).map_err(|e| Error::io(&fields, e))?;
    write_file(&fields.join(format!("step_{step:06}.csv")), &field.to_csv())?;
    let json = serde_json::to_string_pretty(&field.sidecar()).expect("sidecar serialize");
    write_file(&fields.join(format!("step_{step:06}.json")), &json)
}
