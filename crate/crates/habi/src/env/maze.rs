//! 2-D point-mass maze on the unit square.
//!
//! Walls are axis-aligned segments (thin rectangles after inflation by a
//! half-thickness). Dynamics are semi-implicit Euler with per-axis collision
//! resolution: the blocked axis clamps to the contact point and its velocity
//! component drops to zero, the tangential component is preserved. Reward is
//! sparse 0/1 on reaching the goal disc.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{clamp_action, Env, Expert};
use crate::error::{HabiError, Result};

pub const WALL_HALF_THICKNESS: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
pub struct Wall {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Wall {
    fn rect(&self) -> (f64, f64, f64, f64) {
        let w = WALL_HALF_THICKNESS;
        (
            self.x1.min(self.x2) - w,
            self.x1.max(self.x2) + w,
            self.y1.min(self.y2) - w,
            self.y1.max(self.y2) + w,
        )
    }

    fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        let (xmin, xmax, ymin, ymax) = self.rect();
        x > xmin + tol && x < xmax - tol && y > ymin + tol && y < ymax - tol
    }
}

#[derive(Clone, Debug)]
pub struct MazeLayout {
    pub walls: Vec<Wall>,
}

impl MazeLayout {
    /// Parses the one-segment-per-line text format: `x1 y1 x2 y2`, with `#`
    /// comments. Segments must be axis-aligned and inside the unit square.
    pub fn parse(text: &str) -> Result<Self> {
        let mut walls = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        HabiError::Config(format!("maze layout line {}: bad number '{t}'", ln + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if nums.len() != 4 {
                return Err(HabiError::Config(format!(
                    "maze layout line {}: expected 4 numbers, got {}",
                    ln + 1,
                    nums.len()
                )));
            }
            let wall = Wall { x1: nums[0], y1: nums[1], x2: nums[2], y2: nums[3] };
            if wall.x1 != wall.x2 && wall.y1 != wall.y2 {
                return Err(HabiError::Config(format!(
                    "maze layout line {}: segments must be axis-aligned",
                    ln + 1
                )));
            }
            if nums.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(HabiError::Config(format!(
                    "maze layout line {}: coordinates must lie in [0, 1]",
                    ln + 1
                )));
            }
            walls.push(wall);
        }
        Ok(MazeLayout { walls })
    }
}

#[derive(Clone, Debug)]
pub struct PointMazeEnv {
    pub layout: MazeLayout,
    pub name: String,
    pub start: (f64, f64),
    pub goal: (f64, f64),
    pub goal_radius: f64,
    pub dt: f64,
    pub vmax: f64,
    pub max_steps: usize,
    pub gamma: f64,
    pos: (f64, f64),
    vel: (f64, f64),
    steps: usize,
}

impl PointMazeEnv {
    pub fn preset(name: &str) -> Result<Self> {
        let (text, start, goal) = match name {
            "umaze" => (include_str!("../../assets/umaze.maze"), (0.25, 0.15), (0.75, 0.15)),
            "medium" => (include_str!("../../assets/medium.maze"), (0.12, 0.12), (0.88, 0.12)),
            "large" => (include_str!("../../assets/large.maze"), (0.1, 0.1), (0.9, 0.1)),
            other => return Err(HabiError::Config(format!("unknown maze preset '{other}'"))),
        };
        Ok(Self::new(MazeLayout::parse(text)?, name, start, goal))
    }

    pub fn new(layout: MazeLayout, name: &str, start: (f64, f64), goal: (f64, f64)) -> Self {
        PointMazeEnv {
            layout,
            name: name.to_string(),
            start,
            goal,
            goal_radius: 0.05,
            dt: 0.05,
            vmax: 0.5,
            max_steps: 300,
            gamma: 0.99,
            pos: start,
            vel: (0.0, 0.0),
            steps: 0,
        }
    }

    fn state(&self) -> Vec<f64> {
        vec![self.pos.0, self.pos.1, self.vel.0, self.vel.1]
    }

    fn in_goal(&self) -> bool {
        let dx = self.pos.0 - self.goal.0;
        let dy = self.pos.1 - self.goal.1;
        (dx * dx + dy * dy).sqrt() < self.goal_radius
    }

    /// True if `p` violates any wall or square constraint by more than `tol`.
    pub fn penetrates(&self, x: f64, y: f64, tol: f64) -> bool {
        if x < -tol || x > 1.0 + tol || y < -tol || y > 1.0 + tol {
            return true;
        }
        self.layout.walls.iter().any(|w| w.contains(x, y, tol))
    }

    /// Moves one axis, clamping at the first contact and zeroing the
    /// corresponding velocity component.
    fn move_axis(&mut self, axis: usize, delta: f64) {
        let (mut x, mut y) = self.pos;
        if axis == 0 {
            x += delta;
        } else {
            y += delta;
        }
        // Unit-square boundary.
        if axis == 0 && !(0.0..=1.0).contains(&x) {
            x = x.clamp(0.0, 1.0);
            self.vel.0 = 0.0;
        }
        if axis == 1 && !(0.0..=1.0).contains(&y) {
            y = y.clamp(0.0, 1.0);
            self.vel.1 = 0.0;
        }
        for wall in &self.layout.walls {
            let (xmin, xmax, ymin, ymax) = wall.rect();
            if x > xmin && x < xmax && y > ymin && y < ymax {
                if axis == 0 {
                    x = if delta > 0.0 { xmin } else { xmax };
                    self.vel.0 = 0.0;
                } else {
                    y = if delta > 0.0 { ymin } else { ymax };
                    self.vel.1 = 0.0;
                }
            }
        }
        self.pos = (x, y);
    }
}

impl Env for PointMazeEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let jitter = 0.03;
        self.pos = (
            (self.start.0 + rng.gen_range(-jitter..jitter)).clamp(0.0, 1.0),
            (self.start.1 + rng.gen_range(-jitter..jitter)).clamp(0.0, 1.0),
        );
        self.vel = (0.0, 0.0);
        self.steps = 0;
        self.state()
    }

    fn reset_random(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Uniform over free space with a small wall margin, so behavior
        // episodes cover the whole maze rather than one start corner.
        let margin = 0.04;
        loop {
            let x = rng.gen_range(0.0..1.0);
            let y = rng.gen_range(0.0..1.0);
            if !self.penetrates(x, y, -margin) {
                self.pos = (x, y);
                break;
            }
        }
        self.vel = (0.0, 0.0);
        self.steps = 0;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        let a = clamp_action(action);
        self.vel.0 = (self.vel.0 + a[0] * self.dt).clamp(-self.vmax, self.vmax);
        self.vel.1 = (self.vel.1 + a[1] * self.dt).clamp(-self.vmax, self.vmax);
        self.move_axis(0, self.vel.0 * self.dt);
        self.move_axis(1, self.vel.1 * self.dt);
        self.steps += 1;
        let reached = self.in_goal();
        let reward = if reached { 1.0 } else { 0.0 };
        let done = reached || self.steps >= self.max_steps;
        (self.state(), reward, done)
    }

    fn make_expert(&self) -> Box<dyn Expert> {
        Box::new(MazeExpert::new(self))
    }
}

// ── Scripted expert: BFS distance field + PD tracking ────────────────

const GRID: usize = 40;
/// Cells this close to a wall count as blocked for route planning, so the
/// tracked carrot keeps a margin the PD controller can actually hold.
const ROUTE_CLEARANCE: f64 = 0.06;
/// How many cells ahead along the shortest path the carrot sits.
const LOOKAHEAD_CELLS: usize = 5;

fn cell_of(x: f64, y: f64) -> (usize, usize) {
    let c = |v: f64| ((v * GRID as f64) as usize).min(GRID - 1);
    (c(x), c(y))
}

fn cell_center(i: usize, j: usize) -> (f64, f64) {
    ((i as f64 + 0.5) / GRID as f64, (j as f64 + 0.5) / GRID as f64)
}

fn cell_neighbors((i, j): (usize, usize)) -> [(usize, usize); 4] {
    [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)]
}

/// BFS distance-to-goal (in cells) over the inflated-wall grid; `u32::MAX`
/// marks blocked or unreachable cells. Lets the expert steer from any
/// position, not just the canonical start.
fn goal_distance_field(env: &PointMazeEnv) -> Vec<u32> {
    let blocked = |i: usize, j: usize| {
        let (x, y) = cell_center(i, j);
        env.layout.walls.iter().any(|w| {
            let (xmin, xmax, ymin, ymax) = w.rect();
            let c = ROUTE_CLEARANCE;
            x > xmin - c && x < xmax + c && y > ymin - c && y < ymax + c
        })
    };
    let idx = |c: (usize, usize)| c.0 * GRID + c.1;
    let mut dist = vec![u32::MAX; GRID * GRID];
    let goal = cell_of(env.goal.0, env.goal.1);
    let mut queue = std::collections::VecDeque::new();
    dist[idx(goal)] = 0;
    queue.push_back(goal);
    while let Some(c) = queue.pop_front() {
        let d = dist[idx(c)];
        for n in cell_neighbors(c) {
            if n.0 >= GRID || n.1 >= GRID || blocked(n.0, n.1) || dist[idx(n)] != u32::MAX {
                continue;
            }
            dist[idx(n)] = d + 1;
            queue.push_back(n);
        }
    }
    dist
}

pub struct MazeExpert {
    dist: Vec<u32>,
    goal: (f64, f64),
    kp: f64,
    kd: f64,
}

impl MazeExpert {
    fn new(env: &PointMazeEnv) -> Self {
        MazeExpert { dist: goal_distance_field(env), goal: env.goal, kp: 8.0, kd: 2.0 }
    }

    fn dist_at(&self, c: (usize, usize)) -> u32 {
        self.dist[c.0 * GRID + c.1]
    }

    /// Nearest routable cell to (x, y): the current cell if it carries a
    /// distance, else the closest cell that does. Positions inside the
    /// inflated wall zone must route back out, never "through" the wall.
    fn anchor_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (ci, cj) = cell_of(x, y);
        if self.dist_at((ci, cj)) != u32::MAX {
            return Some((ci, cj));
        }
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..GRID {
            for j in 0..GRID {
                if self.dist_at((i, j)) == u32::MAX {
                    continue;
                }
                let (cx, cy) = cell_center(i, j);
                let d2 = (cx - x).powi(2) + (cy - y).powi(2);
                if best.map_or(true, |(_, bd)| d2 < bd) {
                    best = Some(((i, j), d2));
                }
            }
        }
        best.map(|(c, _)| c)
    }

    /// The point the PD controller tracks: a few cells down the shortest
    /// path, or the exact goal once it is that close.
    fn carrot(&self, x: f64, y: f64) -> (f64, f64) {
        let Some(mut cur) = self.anchor_cell(x, y) else {
            return self.goal;
        };
        if self.dist_at(cur) as usize <= LOOKAHEAD_CELLS {
            return self.goal;
        }
        for _ in 0..LOOKAHEAD_CELLS {
            let here = self.dist_at(cur);
            if let Some(next) = cell_neighbors(cur)
                .into_iter()
                .filter(|&n| n.0 < GRID && n.1 < GRID)
                .find(|&n| self.dist_at(n) < here)
            {
                cur = next;
            } else {
                break;
            }
        }
        cell_center(cur.0, cur.1)
    }
}

impl Expert for MazeExpert {
    fn reset(&mut self) {}

    fn act(&mut self, state: &[f64], noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (x, y, vx, vy) = (state[0], state[1], state[2], state[3]);
        let wp = self.carrot(x, y);
        let mut ax = self.kp * (wp.0 - x) - self.kd * vx;
        let mut ay = self.kp * (wp.1 - y) - self.kd * vy;
        if noise_sigma > 0.0 {
            ax += noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            ay += noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        vec![ax.clamp(-1.0, 1.0), ay.clamp(-1.0, 1.0)]
    }
}

/// Debug rendering of the layout plus an optional trajectory, for humans
/// inspecting run artifacts.
pub fn render_ascii(env: &PointMazeEnv, trajectory: &[(f64, f64)]) -> String {
    const W: usize = 41;
    const H: usize = 21;
    let mut grid = vec![vec![' '; W]; H];
    for (r, row) in grid.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let x = c as f64 / (W - 1) as f64;
            let y = 1.0 - r as f64 / (H - 1) as f64;
            if env.layout.walls.iter().any(|w| w.contains(x, y, -0.01)) {
                *cell = '#';
            }
        }
    }
    let place = |grid: &mut Vec<Vec<char>>, x: f64, y: f64, ch: char| {
        let c = ((x * (W - 1) as f64).round() as usize).min(W - 1);
        let r = (((1.0 - y) * (H - 1) as f64).round() as usize).min(H - 1);
        grid[r][c] = ch;
    };
    for &(x, y) in trajectory {
        place(&mut grid, x, y, '.');
    }
    place(&mut grid, env.start.0, env.start.1, 'S');
    place(&mut grid, env.goal.0, env.goal.1, 'G');
    let mut out = String::new();
    out.push_str(&"-".repeat(W + 2));
    out.push('\n');
    for row in grid {
        out.push('|');
        out.extend(row);
        out.push_str("|\n");
    }
    out.push_str(&"-".repeat(W + 2));
    out.push('\n');
    out
}
