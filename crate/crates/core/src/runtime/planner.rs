//! Bi-directional RRT over end-effector positions among axis-aligned boxes.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    /// Closed containment: touching a face counts as collision.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i])
    }

    fn encloses(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start position is in collision or outside the workspace")]
    StartInCollision,
    #[error("goal position is in collision or outside the workspace")]
    GoalInCollision,
    #[error("no collision-free path found within {0} iterations")]
    NoPath(usize),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// Obstacles and workspace bounds for the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneWorld {
    pub bounds: Aabb,
    pub boxes: Vec<Aabb>,
}

impl SceneWorld {
    pub fn new(bounds: Aabb, boxes: Vec<Aabb>) -> Result<Self, PlanError> {
        if !bounds.is_valid() || (0..3).any(|i| bounds.max[i] <= bounds.min[i]) {
            return Err(PlanError::InvalidWorld("workspace bounds are degenerate".into()));
        }
        for (i, b) in boxes.iter().enumerate() {
            if !b.is_valid() {
                return Err(PlanError::InvalidWorld(format!("box {i} has min > max")));
            }
            if !bounds.encloses(b) {
                return Err(PlanError::InvalidWorld(format!("box {i} extends outside the bounds")));
            }
        }
        Ok(Self { bounds, boxes })
    }

    pub fn empty(bounds: Aabb) -> Result<Self, PlanError> {
        Self::new(bounds, Vec::new())
    }

    pub fn is_free(&self, p: &Vector3<f64>) -> bool {
        self.bounds.contains(p) && !self.boxes.iter().any(|b| b.contains(p))
    }

    /// `bounds x0 y0 z0 x1 y1 z1` once, then `box x0 y0 z0 x1 y1 z1` per
    /// obstacle; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut bounds = None;
        let mut boxes = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            let vals: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", n + 1))?;
            if vals.len() != 6 {
                return Err(format!("line {}: expected 6 numbers, got {}", n + 1, vals.len()));
            }
            let b = Aabb::new(Vector3::new(vals[0], vals[1], vals[2]), Vector3::new(vals[3], vals[4], vals[5]));
            match kind {
                "bounds" if bounds.is_none() => bounds = Some(b),
                "bounds" => return Err(format!("line {}: bounds given twice", n + 1)),
                "box" => boxes.push(b),
                other => return Err(format!("line {}: unknown record {other:?}", n + 1)),
            }
        }
        let bounds = bounds.ok_or("world file has no bounds line")?;
        Self::new(bounds, boxes).map_err(|e| e.to_string())
    }

    pub fn to_text(&self) -> String {
        let fmt = |kind: &str, b: &Aabb| {
            format!(
                "{kind} {} {} {} {} {} {}",
                b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
            )
        };
        let mut s = String::new();
        writeln!(s, "{}", fmt("bounds", &self.bounds)).unwrap();
        for b in &self.boxes {
            writeln!(s, "{}", fmt("box", b)).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub step: f64,
    pub max_iterations: usize,
    pub smoothing_iterations: usize,
    /// Spacing of collision checks along a segment.
    pub resolution: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            max_iterations: 20_000,
            smoothing_iterations: 200,
            resolution: 0.01,
            seed: 0,
        }
    }
}

fn segment_free(world: &SceneWorld, a: &Vector3<f64>, b: &Vector3<f64>, resolution: f64) -> bool {
    let n = ((b - a).norm() / resolution).ceil().max(1.0) as usize;
    (0..=n).all(|i| world.is_free(&a.lerp(b, i as f64 / n as f64)))
}

/// True when every segment of `path` is free at `resolution` spacing.
pub fn path_is_free(world: &SceneWorld, path: &[Vector3<f64>], resolution: f64) -> bool {
    match path {
        [] => true,
        [p] => world.is_free(p),
        _ => path.windows(2).all(|w| segment_free(world, &w[0], &w[1], resolution)),
    }
}

struct Tree {
    points: Vec<Vector3<f64>>,
    parents: Vec<usize>,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: Vector3<f64>) -> Self {
        Self {
            points: vec![root],
            parents: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &Vector3<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn extend(&mut self, q: &Vector3<f64>, world: &SceneWorld, cfg: &PlannerConfig) -> Extend {
        let near = self.nearest(q);
        let from = self.points[near];
        let delta = q - from;
        let dist = delta.norm();
        let (target, reached) = if dist <= cfg.step {
            (*q, true)
        } else {
            (from + delta * (cfg.step / dist), false)
        };
        if !segment_free(world, &from, &target, cfg.resolution) {
            return Extend::Trapped;
        }
        self.points.push(target);
        self.parents.push(near);
        let id = self.points.len() - 1;
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn connect(&mut self, q: &Vector3<f64>, world: &SceneWorld, cfg: &PlannerConfig) -> Option<usize> {
        loop {
            match self.extend(q, world, cfg) {
                Extend::Trapped => return None,
                Extend::Reached(id) => return Some(id),
                Extend::Advanced(_) => {}
            }
        }
    }

    fn path_to_root(&self, mut i: usize) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        while i != usize::MAX {
            out.push(self.points[i]);
            i = self.parents[i];
        }
        out
    }
}

fn sample_in(bounds: &Aabb, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|i, _| rng.gen_range(bounds.min[i]..=bounds.max[i]))
}

fn shortcut(path: &mut Vec<Vector3<f64>>, world: &SceneWorld, cfg: &PlannerConfig, rng: &mut ChaCha8Rng) {
    for _ in 0..cfg.smoothing_iterations {
        if path.len() < 3 {
            return;
        }
        let i = rng.gen_range(0..path.len() - 2);
        let j = rng.gen_range(i + 2..path.len());
        if segment_free(world, &path[i], &path[j], cfg.resolution) {
            path.drain(i + 1..j);
        }
    }
}

/// RRT-Connect from `start` to `goal`, followed by random shortcutting. The
/// returned path starts and ends exactly at the inputs.
pub fn birrt_plan(
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    world: &SceneWorld,
    config: &PlannerConfig,
) -> Result<Vec<Vector3<f64>>, PlanError> {
    if !(config.step > 0.0 && config.resolution > 0.0) {
        return Err(PlanError::InvalidWorld("planner step and resolution must be positive".into()));
    }
    if !world.is_free(start) {
        return Err(PlanError::StartInCollision);
    }
    if !world.is_free(goal) {
        return Err(PlanError::GoalInCollision);
    }
    if segment_free(world, start, goal, config.resolution) {
        return Ok(vec![*start, *goal]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut a = Tree::new(*start);
    let mut b = Tree::new(*goal);
    // `a_is_start` tracks which tree is rooted at the start after swaps.
    let mut a_is_start = true;
    for _ in 0..config.max_iterations {
        let q = sample_in(&world.bounds, &mut rng);
        let new = match a.extend(&q, world, config) {
            Extend::Trapped => None,
            Extend::Advanced(id) | Extend::Reached(id) => Some(id),
        };
        if let Some(id) = new {
            let target = a.points[id];
            if let Some(bid) = b.connect(&target, world, config) {
                let mut from_a = a.path_to_root(id);
                from_a.reverse();
                let from_b = b.path_to_root(bid);
                // Both trees end at `target`; keep it once.
                from_a.extend(from_b.into_iter().skip(1));
                if !a_is_start {
                    from_a.reverse();
                }
                let mut path = from_a;
                shortcut(&mut path, world, config, &mut rng);
                return Ok(path);
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(PlanError::NoPath(config.max_iterations))
}
