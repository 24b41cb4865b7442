//! Seeded scenario generation for the evaluation families and random
//! training scenes.
//!
//! Every family shares one layout, expressed in the dozer's start frame
//! (`along` the nominal push heading, `across` to its left):
//!
//! * the desired surface is the flat plane at height 0;
//! * cells with `along <= pad_ahead` form a graded pad at target height;
//! * cells beyond the pad lie `fill_depth` below target and receive the
//!   material pushed off the piles;
//! * piles sit on a lattice starting `first_row_ahead` meters in front of the
//!   dozer with `spacing` between rows and between piles in a row.
//!
//! Family presets pick `pad_ahead`, the pile counts and the start pose.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DozerState, DynamicsParams};
use crate::error::{Error, Result};
use crate::heightmap::{add_pile_in_place, DozerPose, GaussianPile, HeightMap};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Init,
    Continuous,
    Edge,
    Random,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "init" => Ok(Family::Init),
            "continuous" => Ok(Family::Continuous),
            "edge" => Ok(Family::Edge),
            "random" => Ok(Family::Random),
            other => Err(Error::InvalidScenario(format!("unknown family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Init => "init",
            Family::Continuous => "continuous",
            Family::Edge => "edge",
            Family::Random => "random",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Serializable form of a [`GaussianPile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PileSpec {
    pub center: [f64; 2],
    pub sigma: [f64; 2],
    pub peak: f64,
    #[serde(default)]
    pub rotation: f64,
}

impl PileSpec {
    pub fn to_pile(&self) -> Result<GaussianPile> {
        GaussianPile::new((self.center[0], self.center[1]), (self.sigma[0], self.sigma[1]), self.peak, self.rotation)
    }
}

impl From<GaussianPile> for PileSpec {
    fn from(p: GaussianPile) -> Self {
        Self { center: [p.center.0, p.center.1], sigma: [p.sigma.0, p.sigma.1], peak: p.peak_height, rotation: p.rotation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledDump {
    /// Applied when the episode's completed-step count reaches this value.
    pub step: usize,
    pub piles: Vec<PileSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub family: Family,
    /// Area extent along x and y (m).
    pub area: [f64; 2],
    pub pile_rows: [usize; 2],
    pub piles_per_row: [usize; 2],
    pub peak_height: [f64; 2],
    pub sigma: [f64; 2],
    pub spacing: f64,
    pub first_row_ahead: f64,
    pub pad_ahead: f64,
    pub fill_depth: f64,
    pub start: [f64; 2],
    pub heading: f64,
    /// Continuous family: a new row is dumped every `dump_every` steps ...
    #[serde(default)]
    pub dump_every: usize,
    /// ... `dump_rows` times.
    #[serde(default)]
    pub dump_rows: usize,
    /// Extra dumps applied verbatim in addition to the generated ones.
    #[serde(default)]
    pub dumps: Vec<ScheduledDump>,
}

impl ScenarioSpec {
    pub fn preset(family: Family) -> Self {
        let base = ScenarioSpec {
            family,
            area: [24.0, 24.0],
            pile_rows: [2, 4],
            piles_per_row: [3, 5],
            peak_height: [0.15, 0.35],
            sigma: [0.3, 0.6],
            spacing: 1.5,
            first_row_ahead: 3.0,
            pad_ahead: 0.0,
            fill_depth: 0.1,
            start: [3.0, 12.0],
            heading: 0.0,
            dump_every: 0,
            dump_rows: 0,
            dumps: Vec::new(),
        };
        match family {
            Family::Init => base,
            Family::Continuous => ScenarioSpec {
                // plateau extends one spacing past the deepest possible row
                pad_ahead: base.first_row_ahead + 4.0 * base.spacing,
                dump_every: 8,
                dump_rows: 3,
                ..base
            },
            Family::Edge => ScenarioSpec {
                pile_rows: [1, 1],
                fill_depth: 0.3,
                start: [0.9 * base.area[0] - base.first_row_ahead, 12.0],
                pad_ahead: base.first_row_ahead,
                ..base
            },
            Family::Random => ScenarioSpec { fill_depth: 0.0, pad_ahead: 0.0, ..base },
        }
    }

    /// Init preset with a fixed 3 x 3 lattice.
    pub fn init_3x3() -> Self {
        ScenarioSpec { pile_rows: [3, 3], piles_per_row: [3, 3], ..Self::preset(Family::Init) }
    }

    pub fn flat(family: Family) -> Self {
        ScenarioSpec { pile_rows: [0, 0], piles_per_row: [0, 0], fill_depth: 0.0, dump_rows: 0, ..Self::preset(family) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return bad(format!("area {:?} must be positive", self.area));
        }
        if self.pile_rows[0] > self.pile_rows[1] || self.piles_per_row[0] > self.piles_per_row[1] {
            return bad("count ranges must satisfy lo <= hi".into());
        }
        if !(self.peak_height[0] > 0.0 && self.peak_height[0] <= self.peak_height[1]) {
            return bad(format!("peak range {:?}", self.peak_height));
        }
        if !(self.sigma[0] > 0.0 && self.sigma[0] <= self.sigma[1]) {
            return bad(format!("sigma range {:?}", self.sigma));
        }
        if !(self.spacing > 0.0) {
            return bad(format!("spacing {}", self.spacing));
        }
        if !(self.fill_depth >= 0.0) {
            return bad(format!("fill depth {}", self.fill_depth));
        }
        let [x, y] = self.start;
        if !(x > 0.0 && y > 0.0 && x < self.area[0] && y < self.area[1]) {
            return bad(format!("start {:?} outside area", self.start));
        }
        if !self.heading.is_finite() {
            return bad("heading must be finite".into());
        }
        if self.family == Family::Continuous && self.dump_rows > 0 && self.dump_every == 0 {
            return bad("dump_every must be > 0 when dump_rows > 0".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub initial: HeightMap,
    pub desired: HeightMap,
    pub dozer: DozerState,
    pub nominal_heading: f64,
    pub piles: Vec<GaussianPile>,
    pub dumps: Vec<ScheduledDump>,
}

struct Frame {
    origin: (f64, f64),
    fwd: (f64, f64),
    left: (f64, f64),
}

impl Frame {
    fn new(origin: (f64, f64), heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        Self { origin, fwd: (c, s), left: (-s, c) }
    }

    fn to_world(&self, along: f64, across: f64) -> (f64, f64) {
        (
            self.origin.0 + along * self.fwd.0 + across * self.left.0,
            self.origin.1 + along * self.fwd.1 + across * self.left.1,
        )
    }

    fn along(&self, x: f64, y: f64) -> f64 {
        (x - self.origin.0) * self.fwd.0 + (y - self.origin.1) * self.fwd.1
    }
}

fn draw_pile(rng: &mut SplitMix64, spec: &ScenarioSpec, center: (f64, f64)) -> GaussianPile {
    let peak = rng.uniform(spec.peak_height[0], spec.peak_height[1]);
    let sx = rng.uniform(spec.sigma[0], spec.sigma[1]);
    let sy = rng.uniform(spec.sigma[0], spec.sigma[1]);
    let rot = rng.uniform(0.0, std::f64::consts::PI);
    GaussianPile { center, sigma: (sx, sy), peak_height: peak, rotation: rot }
}

fn lattice_row(frame: &Frame, along: f64, count: usize, spacing: f64) -> Vec<(f64, f64)> {
    (0..count)
        .map(|j| {
            let across = (j as f64 - (count as f64 - 1.0) / 2.0) * spacing;
            frame.to_world(along, across)
        })
        .collect()
}

/// Builds the initial and desired maps, the dozer and the dump schedule.
/// A pure function of `(spec, seed, cell_size)`.
pub fn generate(spec: &ScenarioSpec, seed: u64, cell_size: f64, params: DynamicsParams) -> Result<Scenario> {
    spec.validate()?;
    let cols = (spec.area[0] / cell_size).round() as usize;
    let rows = (spec.area[1] / cell_size).round() as usize;
    let desired = HeightMap::new_flat(rows, cols, cell_size, 0.0)?;
    let mut initial = desired.clone();

    // snap the start onto a cell center
    let sc = ((spec.start[0] / cell_size).floor() as usize).min(cols - 1);
    let sr = ((spec.start[1] / cell_size).floor() as usize).min(rows - 1);
    let (sx, sy) = initial.cell_center(sr, sc);
    let frame = Frame::new((sx, sy), spec.heading);

    if spec.fill_depth > 0.0 {
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = initial.cell_center(r, c);
                if frame.along(x, y) > spec.pad_ahead {
                    initial.set(r, c, -spec.fill_depth);
                }
            }
        }
    }

    let mut rng = SplitMix64::new(seed);
    let n_rows = rng.range_inclusive(spec.pile_rows[0] as u64, spec.pile_rows[1] as u64) as usize;
    let per_row = rng.range_inclusive(spec.piles_per_row[0] as u64, spec.piles_per_row[1] as u64) as usize;

    let mut piles = Vec::new();
    match spec.family {
        Family::Random => {
            // uniform scatter over the area ahead of the dozer
            let ahead_lo = spec.first_row_ahead;
            for _ in 0..n_rows * per_row {
                let (x, y) = loop {
                    let x = rng.uniform(0.0, spec.area[0]);
                    let y = rng.uniform(0.0, spec.area[1]);
                    if frame.along(x, y) >= ahead_lo {
                        break (x, y);
                    }
                };
                piles.push(draw_pile(&mut rng, spec, (x, y)));
            }
        }
        _ => {
            for i in 0..n_rows {
                let along = spec.first_row_ahead + i as f64 * spec.spacing;
                for center in lattice_row(&frame, along, per_row, spec.spacing) {
                    piles.push(draw_pile(&mut rng, spec, center));
                }
            }
        }
    }
    for p in &piles {
        add_pile_in_place(&mut initial, p);
    }

    let mut dumps = Vec::new();
    if spec.family == Family::Continuous && spec.dump_every > 0 && per_row > 0 {
        let lattice_rows = n_rows.max(1);
        for k in 0..spec.dump_rows {
            let along = spec.first_row_ahead + (k % lattice_rows) as f64 * spec.spacing;
            let row = lattice_row(&frame, along, per_row, spec.spacing)
                .into_iter()
                .map(|c| PileSpec::from(draw_pile(&mut rng, spec, c)))
                .collect();
            dumps.push(ScheduledDump { step: (k + 1) * spec.dump_every, piles: row });
        }
    }
    dumps.extend(spec.dumps.iter().cloned());
    dumps.sort_by_key(|d| d.step);

    let dozer = DozerState::new(DozerPose::new(sx, sy, spec.heading), params);
    Ok(Scenario { initial, desired, dozer, nominal_heading: spec.heading, piles, dumps })
}

/// Result of applying the dumps scheduled for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DumpReport {
    pub count: usize,
    /// Volume added to the grid (m³).
    pub volume: f64,
}

/// Adds every pile scheduled at `step_index`. Piles whose center would land
/// within half a spacing of the dozer move forward along the nominal heading
/// one spacing at a time until clear.
pub fn apply_dumps(
    world: &mut HeightMap,
    schedule: &[ScheduledDump],
    step_index: usize,
    dozer: &DozerPose,
    nominal_heading: f64,
    spacing: f64,
) -> Result<DumpReport> {
    let mut report = DumpReport::default();
    let (fx, fy) = (nominal_heading.cos(), nominal_heading.sin());
    for dump in schedule.iter().filter(|d| d.step == step_index) {
        for spec in &dump.piles {
            let mut pile = spec.to_pile()?;
            for _ in 0..64 {
                let (dx, dy) = (pile.center.0 - dozer.x, pile.center.1 - dozer.y);
                if (dx * dx + dy * dy).sqrt() >= 0.5 * spacing {
                    break;
                }
                pile.center = (pile.center.0 + spacing * fx, pile.center.1 + spacing * fy);
            }
            report.volume += add_pile_in_place(world, &pile);
            report.count += 1;
        }
    }
    Ok(report)
}

/// Cells counted as graded: within `1e-9` m of the target.
pub const AT_TARGET_TOL: f64 = 1e-9;

/// First-frame statistics used to check the family contracts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub at_target_fraction: f64,
    pub at_target_ahead: usize,
    pub dozer_cell_at_target: bool,
}

pub fn frame_stats(sc: &Scenario) -> FrameStats {
    let frame = Frame::new((sc.dozer.pose.x, sc.dozer.pose.y), sc.nominal_heading);
    let cs = sc.initial.cell_size();
    let mut at = 0usize;
    let mut ahead = 0usize;
    for r in 0..sc.initial.rows() {
        for c in 0..sc.initial.cols() {
            let graded = (sc.initial.get(r, c) - sc.desired.get(r, c)).abs() <= AT_TARGET_TOL;
            if graded {
                at += 1;
                let (x, y) = sc.initial.cell_center(r, c);
                if frame.along(x, y) > 0.5 * cs {
                    ahead += 1;
                }
            }
        }
    }
    let (dr, dc) = sc.initial.cell_at(sc.dozer.pose.x, sc.dozer.pose.y).expect("dozer on map");
    FrameStats {
        at_target_fraction: at as f64 / (sc.initial.rows() * sc.initial.cols()) as f64,
        at_target_ahead: ahead,
        dozer_cell_at_target: (sc.initial.get(dr, dc) - sc.desired.get(dr, dc)).abs() <= AT_TARGET_TOL,
    }
}
