//! The grading MDP: waypoint actions, leg planning, rewards, termination and
//! the Gaussian action prior.

use std::f64::consts::PI;

use crate::config::Config;
use crate::dynamics::{self, wrap_angle, Accounting, DozerState, LowLevelAction};
use crate::error::{Error, Result};
use crate::heightmap::{
    diff_map, excess_volume, max_excess_height, observe, DiffMap, DozerPose, FovSpec, Grid, HeightMap,
};
use crate::scenario::{self, ScenarioSpec, ScheduledDump};

/// High-level action: push destination `p` and next start point `s`, both
/// pixels of the down-sampled observation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WaypointAction {
    pub p: (i64, i64),
    pub s: (i64, i64),
}

impl WaypointAction {
    pub fn new(p: (i64, i64), s: (i64, i64)) -> Self {
        Self { p, s }
    }

    /// Both pixels at the anchor: a leg that does nothing.
    pub fn stay(fov: &FovSpec) -> Self {
        let (r, c) = fov.anchor_pixel();
        let a = (r as i64, c as i64);
        Self { p: a, s: a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub lambda_volume: f64,
    pub lambda_time: f64,
    pub lambda_height: f64,
    pub lambda_done: f64,
    pub lambda_fail: f64,
    pub gamma: f64,
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_volume, self.lambda_time, self.lambda_height, self.lambda_done, self.lambda_fail];
        if all.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("reward weights must be finite and >= 0".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn combine(&self, c: &RewardComponents) -> f64 {
        self.lambda_volume * c.f_v - self.lambda_time * c.f_t + self.lambda_height * c.f_h + c.done_bonus
            - c.fail_penalty
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardComponents {
    /// Excess volume removed this step (m³).
    pub f_v: f64,
    /// Leg duration (s).
    pub f_t: f64,
    /// Drop in maximum excess height this step (m).
    pub f_h: f64,
    /// `lambda_done` when the step completed the task, else 0.
    pub done_bonus: f64,
    /// `lambda_fail` when the step failed the episode, else 0.
    pub fail_penalty: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    pub duration: f64,
    pub moved_volume: f64,
    pub spilled_out: f64,
    /// Piles dumped after the leg and the grid volume / excess they added.
    pub dumped_piles: usize,
    pub dumped_volume: f64,
    pub dumped_excess: f64,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: DiffMap,
    pub reward: f64,
    pub components: RewardComponents,
    pub done: bool,
    pub failed: bool,
    pub info: StepInfo,
}

pub fn diff_reward(prev: &DiffMap, curr: &DiffMap) -> Result<f64> {
    if !prev.same_geometry(curr) {
        return Err(Error::GeometryMismatch { left: prev.describe(), right: curr.describe() });
    }
    Ok(excess_volume(prev) - excess_volume(curr))
}

/// Inclusive: a map whose maximum excess equals `epsilon` is done.
pub fn check_done(delta: &DiffMap, epsilon: f64) -> bool {
    max_excess_height(delta) <= epsilon
}

/// Multiplicative prior over the action grid, 1 at the anchor pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMask {
    pub values: Grid,
    pub sigma_factor: f64,
}

pub fn gaussian_mask(spec: &FovSpec, sigma_factor: f64, base_scale: f64) -> Result<GaussianMask> {
    if !(sigma_factor > 0.0 && base_scale > 0.0) {
        return Err(Error::InvalidParameter(format!("mask sigma factor {sigma_factor} / scale {base_scale}")));
    }
    let (rows, cols) = (spec.obs_rows(), spec.obs_cols());
    let (ar, ac) = spec.anchor_pixel();
    let sr = rows as f64 / sigma_factor * base_scale;
    let sc = cols as f64 / sigma_factor * base_scale;
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let dr = (r as f64 - ar as f64) / sr;
        for c in 0..cols {
            let dc = (c as f64 - ac as f64) / sc;
            values.push((-0.5 * (dr * dr + dc * dc)).exp());
        }
    }
    let values = Grid::from_values(rows, cols, 1.0, values)?;
    Ok(GaussianMask { values, sigma_factor })
}

/// Two categorical distributions over the action grid, one per sub-action.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    pub rows: usize,
    pub cols: usize,
    /// `heads[0]` drives `p`, `heads[1]` drives `s`.
    pub heads: [Vec<f64>; 2],
}

impl PolicyDistribution {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        let v = vec![1.0 / (rows * cols) as f64; rows * cols];
        Self { rows, cols, heads: [v.clone(), v] }
    }

    pub fn from_heads(rows: usize, cols: usize, p: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if p.len() != rows * cols || s.len() != rows * cols {
            return Err(Error::InvalidDimension("policy head size".into()));
        }
        Ok(Self { rows, cols, heads: [p, s] })
    }

    pub fn argmax(&self, head: usize) -> (usize, usize) {
        let (mut best, mut at) = (f64::MIN, 0);
        for (i, &v) in self.heads[head].iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        (at / self.cols, at % self.cols)
    }

    /// Inverse-CDF draw from one head given a uniform `u` in [0, 1).
    pub fn sample(&self, head: usize, u: f64) -> (usize, usize) {
        let probs = &self.heads[head];
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return (i / self.cols, i % self.cols);
            }
        }
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
        (last / self.cols, last % self.cols)
    }
}

/// Multiplies each head by the mask and renormalizes.
pub fn apply_mask(dist: &PolicyDistribution, mask: &GaussianMask) -> Result<PolicyDistribution> {
    if dist.rows != mask.values.rows() || dist.cols != mask.values.cols() {
        return Err(Error::GeometryMismatch {
            left: format!("{}x{} distribution", dist.rows, dist.cols),
            right: format!("{}x{} mask", mask.values.rows(), mask.values.cols()),
        });
    }
    let mut heads = dist.heads.clone();
    for head in heads.iter_mut() {
        for (p, m) in head.iter_mut().zip(mask.values.values()) {
            *p *= m;
        }
        let total: f64 = head.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateDistribution);
        }
        for p in head.iter_mut() {
            *p /= total;
        }
    }
    Ok(PolicyDistribution { rows: dist.rows, cols: dist.cols, heads })
}

/// World point of a down-sampled pixel: offsets from the anchor pixel scale
/// by `2^N` cells along the heading (rows) and the lateral axis (cols).
pub fn pixel_to_world(pixel: (f64, f64), pose: &DozerPose, spec: &FovSpec, cell_size: f64) -> (f64, f64) {
    let (ar, ac) = spec.anchor_pixel();
    let step = spec.block() as f64 * cell_size;
    let f = (pixel.0 - ar as f64) * step;
    let l = (pixel.1 - ac as f64) * step;
    let (fx, fy) = pose.forward();
    let (lx, ly) = pose.lateral();
    (pose.x + f * fx + l * lx, pose.y + f * fy + l * ly)
}

/// Nearest down-sampled pixel of a world point.
pub fn world_to_pixel(point: (f64, f64), pose: &DozerPose, spec: &FovSpec, cell_size: f64) -> (i64, i64) {
    let (ar, ac) = spec.anchor_pixel();
    let step = spec.block() as f64 * cell_size;
    let (dx, dy) = (point.0 - pose.x, point.1 - pose.y);
    let (fx, fy) = pose.forward();
    let (lx, ly) = pose.lateral();
    let f = (dx * fx + dy * fy) / step;
    let l = (dx * lx + dy * ly) / step;
    (ar as i64 + f.round() as i64, ac as i64 + l.round() as i64)
}

/// Axis-aligned world rectangle the dozer may drive in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Geometry needed to turn a waypoint action into a leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    pub fov: FovSpec,
    pub cell_size: f64,
    pub nominal_heading: f64,
    pub operable: Rect,
}

impl LegGeometry {
    pub fn pixel_in_grid(&self, px: (i64, i64)) -> bool {
        px.0 >= 0 && px.1 >= 0 && (px.0 as usize) < self.fov.obs_rows() && (px.1 as usize) < self.fov.obs_cols()
    }

    /// World point of an in-grid pixel inside the operable area.
    pub fn reachable(&self, px: (i64, i64), pose: &DozerPose) -> Result<(f64, f64)> {
        if !self.pixel_in_grid(px) {
            return Err(Error::UnreachablePixel { row: px.0, col: px.1 });
        }
        let (x, y) = pixel_to_world((px.0 as f64, px.1 as f64), pose, &self.fov, self.cell_size);
        if !self.operable.contains(x, y) {
            return Err(Error::UnreachablePixel { row: px.0, col: px.1 });
        }
        Ok((x, y))
    }
}

fn heading_to(from: (f64, f64), to: (f64, f64), current: f64) -> (f64, f64) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist < 1e-9 {
        return (0.0, 0.0);
    }
    (wrap_angle(dy.atan2(dx) - current), dist)
}

/// The six low-level actions of one leg: face `p`, push to `p`, reverse to
/// the leg start `B`, face `s`, drive to `s`, face the nominal heading.
pub fn plan_leg(current: &DozerPose, action: &WaypointAction, geo: &LegGeometry) -> Result<Vec<LowLevelAction>> {
    let p = geo.reachable(action.p, current)?;
    let s = geo.reachable(action.s, current)?;
    let b = (current.x, current.y);

    let (turn_p, dist_p) = heading_to(b, p, current.heading);
    let heading_p = if turn_p == 0.0 { current.heading } else { wrap_angle(current.heading + turn_p) };
    let (turn_s, dist_s) = heading_to(b, s, heading_p);
    let heading_s = if turn_s == 0.0 { heading_p } else { wrap_angle(heading_p + turn_s) };
    let mut turn_home = wrap_angle(geo.nominal_heading - heading_s);
    if turn_home.abs() < 1e-12 {
        turn_home = 0.0;
    }
    if (turn_home.abs() - PI).abs() < 1e-12 {
        turn_home = PI;
    }
    Ok(vec![
        LowLevelAction::Rotate(turn_p),
        LowLevelAction::Forward(dist_p),
        LowLevelAction::Reverse(dist_p),
        LowLevelAction::Rotate(turn_s),
        LowLevelAction::Forward(dist_s),
        LowLevelAction::Rotate(turn_home),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStatus {
    Running,
    Done,
    Failed,
}

/// Volume bookkeeping across an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VolumeLedger {
    pub spilled_out: f64,
    pub dumped_in: f64,
    pub dumped_excess: f64,
}

/// A running episode. Owns its world; clone it to fork the state.
#[derive(Debug, Clone)]
pub struct Env {
    config: Config,
    fov: FovSpec,
    spec: ScenarioSpec,
    seed: u64,
    world: HeightMap,
    target: HeightMap,
    dozer: DozerState,
    nominal_heading: f64,
    dumps: Vec<ScheduledDump>,
    steps: usize,
    status: EpisodeStatus,
    ledger: VolumeLedger,
    total_duration: f64,
    total_reward: f64,
    observation: DiffMap,
    geometry: LegGeometry,
}

impl Env {
    pub fn reset(config: &Config, spec: &ScenarioSpec, seed: u64) -> Result<(Env, DiffMap)> {
        config.validate()?;
        let fov = config.fov()?;
        let sc = scenario::generate(spec, seed, config.cell_size, config.dynamics())?;
        let margin = 0.5 * config.blade_width + config.cell_size;
        let operable = Rect {
            x0: margin,
            y0: margin,
            x1: sc.initial.width() - margin,
            y1: sc.initial.height() - margin,
        };
        if !operable.contains(sc.dozer.pose.x, sc.dozer.pose.y) {
            return Err(Error::InvalidScenario("dozer starts outside the operable area".into()));
        }
        let geometry = LegGeometry { fov, cell_size: config.cell_size, nominal_heading: sc.nominal_heading, operable };
        let mut env = Env {
            config: config.clone(),
            fov,
            spec: spec.clone(),
            seed,
            world: sc.initial,
            target: sc.desired,
            dozer: sc.dozer,
            nominal_heading: sc.nominal_heading,
            dumps: sc.dumps,
            steps: 0,
            status: EpisodeStatus::Running,
            ledger: VolumeLedger::default(),
            total_duration: 0.0,
            total_reward: 0.0,
            observation: DiffMap::zeros_like(&Grid::filled(1, 1, 1.0, 0.0)?),
            geometry,
        };
        env.run_dumps()?;
        if check_done(&env.delta(), config.done_epsilon) {
            env.status = EpisodeStatus::Done;
        }
        env.observation = env.render_observation()?;
        let obs = env.observation.clone();
        Ok((env, obs))
    }

    fn run_dumps(&mut self) -> Result<(usize, f64, f64)> {
        if !self.dumps.iter().any(|d| d.step == self.steps) {
            return Ok((0, 0.0, 0.0));
        }
        let before = excess_volume(&self.delta());
        let rep = scenario::apply_dumps(
            &mut self.world,
            &self.dumps,
            self.steps,
            &self.dozer.pose,
            self.nominal_heading,
            self.spec.spacing,
        )?;
        let gained = excess_volume(&self.delta()) - before;
        self.ledger.dumped_in += rep.volume;
        self.ledger.dumped_excess += gained;
        Ok((rep.count, rep.volume, gained))
    }

    fn render_observation(&self) -> Result<DiffMap> {
        observe(&self.delta(), self.dozer.pose, &self.fov)
    }

    pub fn step(&mut self, action: WaypointAction) -> Result<StepResult> {
        if self.status != EpisodeStatus::Running {
            return Err(Error::EpisodeFinished);
        }
        let weights = self.config.weights();
        let delta_before = self.delta();
        let max_before = max_excess_height(&delta_before);

        let mut acc = Accounting::default();
        let mut failed = match plan_leg(&self.dozer.pose, &action, &self.geometry) {
            Ok(leg) => {
                let mut ok = true;
                for low in leg {
                    match dynamics::apply_in_place(&mut self.dozer, &mut self.world, &self.target, low) {
                        Ok(a) => acc.absorb(a),
                        Err(Error::OutOfBounds { .. }) => {
                            ok = false;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                !ok
            }
            Err(Error::UnreachablePixel { .. }) => true,
            Err(e) => return Err(e),
        };
        self.steps += 1;
        self.ledger.spilled_out += acc.spilled_out;
        self.total_duration += acc.duration;

        let delta_after = self.delta();
        let f_v = diff_reward(&delta_before, &delta_after)?;
        let f_h = max_before - max_excess_height(&delta_after);

        let (dumped_piles, dumped_volume, dumped_excess) = if failed { (0, 0.0, 0.0) } else { self.run_dumps()? };

        let done = !failed && check_done(&self.delta(), self.config.done_epsilon);
        let mut timed_out = false;
        if !done && !failed && self.steps >= self.config.timeout_steps {
            failed = true;
            timed_out = true;
        }
        let components = RewardComponents {
            f_v,
            f_t: acc.duration,
            f_h,
            done_bonus: if done { weights.lambda_done } else { 0.0 },
            fail_penalty: if failed { weights.lambda_fail } else { 0.0 },
        };
        let reward = weights.combine(&components);
        self.total_reward += reward;
        self.status = if done {
            EpisodeStatus::Done
        } else if failed {
            EpisodeStatus::Failed
        } else {
            EpisodeStatus::Running
        };
        self.observation = self.render_observation()?;
        Ok(StepResult {
            observation: self.observation.clone(),
            reward,
            components,
            done,
            failed,
            info: StepInfo {
                duration: acc.duration,
                moved_volume: acc.moved_volume,
                spilled_out: acc.spilled_out,
                dumped_piles,
                dumped_volume,
                dumped_excess,
                timed_out,
            },
        })
    }

    /// Full-resolution ego window of the difference map (no pooling).
    pub fn ego_view(&self) -> Result<DiffMap> {
        crate::heightmap::ego_fov_diff(&self.delta(), self.dozer.pose, &self.fov.with_downsample(0))
    }

    pub fn delta(&self) -> DiffMap {
        diff_map(&self.world, &self.target).expect("world and target share geometry")
    }

    pub fn observation(&self) -> &DiffMap {
        &self.observation
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn fov(&self) -> &FovSpec {
        &self.fov
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world(&self) -> &HeightMap {
        &self.world
    }

    pub fn target(&self) -> &HeightMap {
        &self.target
    }

    pub fn dozer(&self) -> &DozerState {
        &self.dozer
    }

    pub fn nominal_heading(&self) -> f64 {
        self.nominal_heading
    }

    pub fn geometry(&self) -> &LegGeometry {
        &self.geometry
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn is_terminal(&self) -> bool {
        self.status != EpisodeStatus::Running
    }

    pub fn ledger(&self) -> VolumeLedger {
        self.ledger
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    /// Ground + blade + spilled-out − dumped-in; constant over an episode.
    pub fn conserved_volume(&self) -> f64 {
        self.world.volume() + self.dozer.blade_load + self.ledger.spilled_out - self.ledger.dumped_in
    }
}
