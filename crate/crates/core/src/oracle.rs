//! SnP: the rule-based expert. Detects piles as connected components of the
//! excess map and pushes them forward in blade-wide lanes until the blade's
//! load fits into the ground deficit ahead.
//!
//! Detection runs on the full-resolution ego window; the emitted waypoints
//! are pixels of the pooled action grid.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::heightmap::{DiffMap, DozerPose};
use crate::mdp::{pixel_to_world, Env, LegGeometry, WaypointAction};

#[derive(Debug, Clone, PartialEq)]
pub struct PileDetection {
    /// Excess-weighted centroid, in pixels of the map it was detected on.
    pub center: (f64, f64),
    /// Inclusive bounding box `(r0, c0, r1, c1)`.
    pub bbox: (usize, usize, usize, usize),
    pub cells: usize,
    /// Excess volume above zero (m³).
    pub volume: f64,
    pub peak: f64,
    label: u32,
}

impl PileDetection {
    pub fn extent(&self) -> (usize, usize) {
        (self.bbox.2 - self.bbox.0 + 1, self.bbox.3 - self.bbox.1 + 1)
    }
}

/// Components of `{excess > threshold}` under 4-connectivity, plus the label
/// image (0 = background).
fn label_components(obs: &DiffMap, threshold: f64, anchor: (f64, f64)) -> (Vec<PileDetection>, Vec<u32>) {
    let (rows, cols) = (obs.rows(), obs.cols());
    let vals = obs.values();
    let area = obs.cell_area();
    let mut labels = vec![0u32; rows * cols];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if labels[start] != 0 || !(vals[start] > threshold) {
            continue;
        }
        let label = out.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut sw, mut sr, mut sc, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
        let mut n = 0;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            let v = vals[i];
            n += 1;
            sw += v;
            sr += v * r as f64;
            sc += v * c as f64;
            peak = peak.max(v);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            let mut visit = |j: usize| {
                if labels[j] == 0 && vals[j] > threshold {
                    labels[j] = label;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        out.push(PileDetection {
            center: (sr / sw, sc / sw),
            bbox: (r0, c0, r1, c1),
            cells: n,
            volume: sw * area,
            peak,
            label,
        });
    }
    let dist = |d: &PileDetection| (d.center.0 - anchor.0).hypot(d.center.1 - anchor.1);
    out.sort_by(|a, b| dist(a).total_cmp(&dist(b)).then(b.volume.total_cmp(&a.volume)));
    (out, labels)
}

/// Piles in `obs` sorted nearest-first from `anchor`, ties by larger volume.
pub fn detect_piles(obs: &DiffMap, threshold: f64, anchor: (usize, usize)) -> Result<Vec<PileDetection>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("detection threshold {threshold}")));
    }
    Ok(label_components(obs, threshold, (anchor.0 as f64, anchor.1 as f64)).0)
}

/// One forward push, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanePush {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub half_width: f64,
}

impl LanePush {
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (self.to.0 - self.from.0, self.to.1 - self.from.1);
        let len = dx.hypot(dy);
        if len == 0.0 {
            return false;
        }
        let (ux, uy) = (dx / len, dy / len);
        let (rx, ry) = (x - self.from.0, y - self.from.1);
        let t = rx * ux + ry * uy;
        let l = -rx * uy + ry * ux;
        (0.0..=len).contains(&t) && l.abs() <= self.half_width
    }
}

/// Memory carried between calls of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleState {
    pub legs: usize,
    pub pushes: Vec<LanePush>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Act(WaypointAction),
    Done,
    /// Piles remain but no reachable waypoint handles them.
    Stuck,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnpOracle {
    pub threshold: f64,
    pub blade_width: f64,
    pub capacity: f64,
    pub fill_fraction: f64,
}

struct View<'a> {
    obs: &'a DiffMap,
    cs: f64,
    ar: f64,
    ac: f64,
}

impl View<'_> {
    /// Forward and lateral offsets (m) of a cell from the dozer.
    fn offsets(&self, r: usize, c: usize) -> (f64, f64) {
        ((r as f64 - self.ar) * self.cs, (c as f64 - self.ac) * self.cs)
    }
}

impl SnpOracle {
    pub fn new(cfg: &Config) -> Self {
        Self {
            threshold: cfg.done_epsilon,
            blade_width: cfg.blade_width,
            capacity: cfg.blade_capacity,
            fill_fraction: cfg.fill_fraction,
        }
    }

    pub fn act_env(&self, env: &Env, state: &mut OracleState) -> Result<Decision> {
        let view = env.ego_view()?;
        self.act(&view, &env.dozer().pose, env.dozer().blade_load, env.geometry(), state)
    }

    /// `view` is the full-resolution ego window of the difference map.
    pub fn act(
        &self,
        view: &DiffMap,
        pose: &DozerPose,
        blade_load: f64,
        geo: &LegGeometry,
        state: &mut OracleState,
    ) -> Result<Decision> {
        let fov = geo.fov;
        if view.rows() != fov.rows || view.cols() != fov.cols {
            return Err(Error::GeometryMismatch {
                left: view.describe(),
                right: format!("{}x{} ego window", fov.rows, fov.cols),
            });
        }
        let v = View { obs: view, cs: view.cell_size(), ar: fov.anchor_row as f64, ac: fov.anchor_col as f64 };
        let (dets, labels) = label_components(view, self.threshold, (v.ar, v.ac));
        let Some(target) = dets.first() else {
            return Ok(Decision::Done);
        };

        let px = fov.block() as f64 * v.cs;
        let half_w = 0.5 * self.blade_width;
        let cell_area = v.cs * v.cs;
        let cols = view.cols();
        let (r0, c0, r1, c1) = target.bbox;
        let cells: Vec<(f64, f64, f64)> = (r0..=r1)
            .flat_map(|r| (c0..=c1).map(move |c| (r, c)))
            .filter(|&(r, c)| labels[r * cols + c] == target.label)
            .map(|(r, c)| {
                let (f, l) = v.offsets(r, c);
                (f, l, view.get(r, c))
            })
            .collect();
        let lmin = cells.iter().map(|c| c.1).fold(f64::MAX, f64::min) - 0.5 * v.cs;
        let lmax = cells.iter().map(|c| c.1).fold(f64::MIN, f64::max) + 0.5 * v.cs;
        let lane_volume = |lane: i64| {
            let center = lane as f64 * px;
            cells.iter().filter(|c| (c.1 - center).abs() <= half_w).map(|c| c.2.max(0.0)).sum::<f64>() * cell_area
        };

        let mut lane = if lmax - lmin <= self.blade_width {
            ((target.center.1 - v.ac) * v.cs / px).round() as i64
        } else {
            ((lmin + half_w) / px).floor() as i64
        };
        // smaller bites while the lane would overfill the blade
        while lane_volume(lane) > self.fill_fraction * self.capacity && (lane - 1) as f64 * px + half_w >= lmin + px {
            lane -= 1;
        }
        let center = lane as f64 * px;
        let band: Vec<&(f64, f64, f64)> = cells.iter().filter(|c| (c.1 - center).abs() <= half_w).collect();
        if band.is_empty() {
            lane = ((target.center.1 - v.ac) * v.cs / px).round() as i64;
        }
        let center = lane as f64 * px;
        let band: Vec<&(f64, f64, f64)> = cells.iter().filter(|c| (c.1 - center).abs() <= half_w).collect();
        let (near, far) = if band.is_empty() {
            let f = (target.center.0 - v.ar) * v.cs;
            (f, f)
        } else {
            (
                band.iter().map(|c| c.0).fold(f64::MAX, f64::min) - 0.5 * v.cs,
                band.iter().map(|c| c.0).fold(f64::MIN, f64::max) + 0.5 * v.cs,
            )
        };

        let (ar_px, ac_px) = fov.anchor_pixel();
        let (ar_px, ac_px) = (ar_px as i64, ac_px as i64);
        let here = (ar_px, ac_px);
        state.legs += 1;

        if lane == 0 && near >= v.cs {
            // aligned behind the pile: push through it
            let load = lane_volume(lane) + blade_load;
            let reach = self.deposit_reach(&v, far, center, load);
            let mut row = ((far + reach.max(self.blade_width)) / px).ceil() as i64;
            while row > 0 && geo.reachable((ar_px + row, ac_px), pose).is_err() {
                row -= 1;
            }
            if row == 0 {
                return Ok(Decision::Stuck);
            }
            let p = (ar_px + row, ac_px);
            let step = (self.blade_width / px).floor().max(1.0) as i64;
            let mut s = here;
            if lmax > center + half_w + v.cs {
                let next = (ar_px, ac_px + step);
                if geo.reachable(next, pose).is_ok() {
                    s = next;
                }
            }
            let from = (pose.x, pose.y);
            let to = pixel_to_world((p.0 as f64, p.1 as f64), pose, &fov, v.cs);
            state.pushes.push(LanePush { from, to, half_width: half_w });
            return Ok(Decision::Act(WaypointAction::new(p, s)));
        }

        // reposition to the lane start just behind the near edge
        let want = (ar_px + ((near - v.cs) / px).floor() as i64, ac_px + lane);
        match self.nearest_reachable(want, here, geo, pose) {
            Some(s) if s != here => Ok(Decision::Act(WaypointAction::new(here, s))),
            _ => Ok(Decision::Stuck),
        }
    }

    /// Distance past `far` along the lane until the observed deficit can
    /// absorb `load`; the end of the window if it never does.
    fn deposit_reach(&self, v: &View, far: f64, lane_center: f64, load: f64) -> f64 {
        let half_w = 0.5 * self.blade_width;
        let cell_area = v.cs * v.cs;
        let first = (v.ar + far / v.cs).ceil().max(0.0) as usize;
        let (c_lo, c_hi) = (
            (v.ac + (lane_center - half_w) / v.cs).ceil().max(0.0) as usize,
            ((v.ac + (lane_center + half_w) / v.cs).floor().max(0.0) as usize).min(v.obs.cols() - 1),
        );
        let mut absorbed = 0.0;
        for r in first..v.obs.rows() {
            for c in c_lo..=c_hi {
                absorbed += (-v.obs.get(r, c)).max(0.0) * cell_area;
            }
            if absorbed >= load {
                return (r as f64 - v.ar) * v.cs - far;
            }
        }
        (v.obs.rows() as f64 - v.ar) * v.cs - far
    }

    /// Reachable pixel closest to `want`, searching rings outward.
    fn nearest_reachable(
        &self,
        want: (i64, i64),
        here: (i64, i64),
        geo: &LegGeometry,
        pose: &DozerPose,
    ) -> Option<(i64, i64)> {
        if geo.reachable(want, pose).is_ok() {
            return Some(want);
        }
        let span = (geo.fov.obs_rows().max(geo.fov.obs_cols())) as i64;
        for radius in 1..span {
            let mut best: Option<((i64, i64), i64)> = None;
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    if dr.abs().max(dc.abs()) != radius {
                        continue;
                    }
                    let cand = (want.0 + dr, want.1 + dc);
                    if cand == here || geo.reachable(cand, pose).is_err() {
                        continue;
                    }
                    let d = dr * dr + dc * dc;
                    if best.is_none_or(|b| d < b.1) {
                        best = Some((cand, d));
                    }
                }
            }
            if let Some((c, _)) = best {
                return Some(c);
            }
        }
        None
    }
}
