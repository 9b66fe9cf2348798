//! RRT* through worlds of circular obstacles, and arc-length resampling of
//! the resulting polyline into a tracking reference.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    #[serde(rename = "c")]
    pub center: [f64; 2],
    #[serde(rename = "r")]
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Vec2, radius: f64) -> Self {
        Self {
            center: [center.x, center.y],
            radius,
        }
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }
}

/// Axis-aligned workspace (um) with circular obstacles.
///
/// JSON form: `{"bounds": [xmin, ymin, xmax, ymax], "obstacles": [{"c": [x, y], "r": r}], "clearance": c}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub bounds: [f64; 4],
    #[serde(default)]
    pub obstacles: Vec<Circle>,
    #[serde(default)]
    pub clearance: f64,
}

impl World {
    pub fn new(bounds: [f64; 4], obstacles: Vec<Circle>, clearance: f64) -> Result<Self> {
        let w = Self {
            bounds,
            obstacles,
            clearance,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bounds;
        if !(x0 < x1 && y0 < y1) || self.bounds.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("world bounds must be a non-degenerate rectangle"));
        }
        if let Some(c) = self.obstacles.iter().find(|c| !(c.radius > 0.0)) {
            return Err(Error::invalid(format!(
                "obstacle radius must be positive, got {}",
                c.radius
            )));
        }
        if !(self.clearance >= 0.0) {
            return Err(Error::invalid("clearance must be non-negative"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: World = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    fn contains(&self, p: Vec2) -> bool {
        let [x0, y0, x1, y1] = self.bounds;
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }

    pub fn point_free(&self, p: Vec2) -> bool {
        self.contains(p)
            && self
                .obstacles
                .iter()
                .all(|c| (p - c.center()).norm() > c.radius + self.clearance)
    }

    /// Smallest distance from the polyline to any obstacle surface.
    pub fn surface_margin(&self, waypoints: &[Vec2]) -> f64 {
        let mut margin = f64::INFINITY;
        for c in &self.obstacles {
            let d = match waypoints {
                [] => continue,
                [p] => (p - c.center()).norm(),
                _ => waypoints
                    .windows(2)
                    .map(|w| point_segment_distance(c.center(), w[0], w[1]))
                    .fold(f64::INFINITY, f64::min),
            };
            margin = margin.min(d - c.radius);
        }
        margin
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// True iff the closed segment stays inside the bounds and strictly farther
/// than `radius + clearance` from every obstacle centre.
pub fn segment_free(p1: Vec2, p2: Vec2, world: &World) -> bool {
    // the workspace is convex, so the endpoints decide containment
    world.contains(p1)
        && world.contains(p2)
        && world
            .obstacles
            .iter()
            .all(|c| point_segment_distance(c.center(), p1, p2) > c.radius + world.clearance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub max_iters: usize,
    pub steer_step: f64,
    pub goal_radius: f64,
    /// `gamma` in the neighbourhood radius `min(gamma sqrt(ln n / n), 4 steer_step)`.
    pub rewire_radius_const: f64,
    pub goal_bias: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            steer_step: 5.0,
            goal_radius: 2.0,
            rewire_radius_const: 150.0,
            goal_bias: 0.05,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0
            || !(self.steer_step > 0.0)
            || !(self.goal_radius > 0.0)
            || !(self.rewire_radius_const > 0.0)
            || !(0.0..=1.0).contains(&self.goal_bias)
        {
            return Err(Error::invalid(
                "planner needs positive iterations, step, goal radius and rewire constant",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Vec2>,
    /// Total Euclidean length.
    pub cost: f64,
}

impl Path {
    pub fn from_waypoints(waypoints: Vec<Vec2>) -> Self {
        let cost = polyline_length(&waypoints);
        Self { waypoints, cost }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y")?;
        for p in &self.waypoints {
            writeln!(w, "{},{}", p.x, p.y)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "x,y" {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `x,y`, found `{}`", header.trim()),
            });
        }
        let mut waypoints = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let [x, y] = crate::sysid::parse_row::<2>(&line, i + 2)?;
            waypoints.push(Vec2::new(x, y));
        }
        if waypoints.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(Self::from_waypoints(waypoints))
    }
}

fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Planner output with the incumbent best cost after every iteration
/// (`f64::INFINITY` until the goal is first reached).
#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub path: Path,
    pub cost_history: Vec<f64>,
    pub nodes: usize,
}

struct Node {
    pos: Vec2,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn nearest(&self, p: Vec2) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.pos - p).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn within(&self, p: Vec2, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        (0..self.nodes.len())
            .filter(|&i| (self.nodes[i].pos - p).norm_squared() <= r2)
            .collect()
    }

    fn reparent(&mut self, child: usize, new_parent: usize, new_cost: f64) {
        if let Some(old) = self.nodes[child].parent {
            self.nodes[old].children.retain(|&c| c != child);
        }
        self.nodes[child].parent = Some(new_parent);
        self.nodes[new_parent].children.push(child);
        let delta = self.nodes[child].cost - new_cost;
        let mut stack = vec![child];
        while let Some(i) = stack.pop() {
            self.nodes[i].cost -= delta;
            stack.extend(self.nodes[i].children.iter().copied());
        }
    }

    fn branch(&self, mut i: usize) -> Vec<Vec2> {
        let mut pts = vec![self.nodes[i].pos];
        while let Some(p) = self.nodes[i].parent {
            pts.push(self.nodes[p].pos);
            i = p;
        }
        pts.reverse();
        pts
    }
}

fn steer(from: Vec2, to: Vec2, step: f64) -> Vec2 {
    let d = to - from;
    let len = d.norm();
    if len <= step {
        to
    } else {
        from + d * (step / len)
    }
}

/// RRT* from `start` to `goal`, deterministic for a given seed.
///
/// A node "reaches" the goal when it lies within `goal_radius` and can see
/// the goal; the returned path always ends exactly at `goal`.
pub fn plan(start: Vec2, goal: Vec2, world: &World, cfg: &PlannerConfig) -> Result<PlanResult> {
    world.validate()?;
    cfg.validate()?;
    if !world.point_free(start) {
        return Err(Error::invalid("start is not in free space"));
    }
    if !world.point_free(goal) {
        return Err(Error::NoPathFound { iterations: 0 });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [x0, y0, x1, y1] = world.bounds;
    let mut tree = Tree {
        nodes: vec![Node {
            pos: start,
            parent: None,
            cost: 0.0,
            children: Vec::new(),
        }],
    };
    // nodes that can see the goal from within goal_radius
    let mut goal_nodes: Vec<usize> = Vec::new();
    let mut incumbent: Option<usize> = None;
    let mut best_cost = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.max_iters);

    let reach = |tree: &Tree, i: usize| tree.nodes[i].cost + (goal - tree.nodes[i].pos).norm();

    if (goal - start).norm() <= cfg.goal_radius && segment_free(start, goal, world) {
        goal_nodes.push(0);
    }

    for _ in 0..cfg.max_iters {
        let sample = if rng.random::<f64>() < cfg.goal_bias {
            goal
        } else {
            Vec2::new(rng.random_range(x0..=x1), rng.random_range(y0..=y1))
        };
        let nearest = tree.nearest(sample);
        let new_pos = steer(tree.nodes[nearest].pos, sample, cfg.steer_step);

        if new_pos != tree.nodes[nearest].pos && segment_free(tree.nodes[nearest].pos, new_pos, world) {
            let n = tree.nodes.len() as f64 + 1.0;
            let radius = (cfg.rewire_radius_const * (n.ln() / n).sqrt()).min(4.0 * cfg.steer_step);
            let neighbours = tree.within(new_pos, radius);

            let mut parent = nearest;
            let mut cost = tree.nodes[nearest].cost + (new_pos - tree.nodes[nearest].pos).norm();
            for &j in &neighbours {
                let c = tree.nodes[j].cost + (new_pos - tree.nodes[j].pos).norm();
                if c < cost && segment_free(tree.nodes[j].pos, new_pos, world) {
                    parent = j;
                    cost = c;
                }
            }

            let id = tree.nodes.len();
            tree.nodes.push(Node {
                pos: new_pos,
                parent: Some(parent),
                cost,
                children: Vec::new(),
            });
            tree.nodes[parent].children.push(id);

            for &j in &neighbours {
                if j == parent {
                    continue;
                }
                let c = cost + (tree.nodes[j].pos - new_pos).norm();
                if c < tree.nodes[j].cost && segment_free(new_pos, tree.nodes[j].pos, world) {
                    tree.reparent(j, id, c);
                }
            }

            if (goal - new_pos).norm() <= cfg.goal_radius && segment_free(new_pos, goal, world) {
                goal_nodes.push(id);
            }
        }

        // costs only ever decrease, so the minimum over a growing set is monotone
        for &g in &goal_nodes {
            let c = reach(&tree, g);
            if c < best_cost {
                best_cost = c;
                incumbent = Some(g);
            }
        }
        history.push(best_cost);
    }

    let Some(best) = incumbent else {
        return Err(Error::NoPathFound {
            iterations: cfg.max_iters,
        });
    };
    let mut waypoints = tree.branch(best);
    if *waypoints.last().unwrap() != goal {
        waypoints.push(goal);
    }
    Ok(PlanResult {
        path: Path::from_waypoints(waypoints),
        cost_history: history,
        nodes: tree.nodes.len(),
    })
}

/// Resamples the polyline at uniform arc-length `spacing`, always keeping
/// the exact final point.
pub fn resample_path(path: &Path, spacing: f64) -> Result<Vec<Vec2>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
    }
    let pts = &path.waypoints;
    let Some(&first) = pts.first() else {
        return Ok(Vec::new());
    };
    let last = *pts.last().unwrap();
    let total = polyline_length(pts);
    let mut out = vec![first];
    let count = (total / spacing).floor() as usize;

    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..=count {
        let s = k as f64 * spacing;
        if total - s < 1e-9 * spacing {
            break;
        }
        while seg + 1 < pts.len() - 1 && seg_start + (pts[seg + 1] - pts[seg]).norm() < s {
            seg_start += (pts[seg + 1] - pts[seg]).norm();
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let len = (b - a).norm();
        let frac = if len > 0.0 {
            ((s - seg_start) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(a + (b - a) * frac);
    }
    if pts.len() > 1 {
        out.push(last);
    }
    Ok(out)
}
