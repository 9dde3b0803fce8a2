//! Layout generation: fixed canonical maps, seeded random object placement
//! with an exclusion zone around the start, and wall segments with a
//! connectivity guarantee.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GridError;

/// Grid cell addressed by (row, col), row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: u16,
    pub col: u16,
}

impl Cell {
    pub fn new(row: u16, col: u16) -> Self {
        Self { row, col }
    }
}

/// Distance metric for proximity regions and exclusion zones.
///
/// Chebyshev is the default; regions are then axis-aligned squares, which
/// matches 8-neighbour geometry even though movement is 4-neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Chebyshev,
    Manhattan,
    Euclidean,
}

impl Metric {
    /// Distance between two cells in cell units.
    pub fn distance(self, a: Cell, b: Cell) -> f64 {
        let dr = (a.row as i32 - b.row as i32).unsigned_abs() as u64;
        let dc = (a.col as i32 - b.col as i32).unsigned_abs() as u64;
        match self {
            Metric::Chebyshev => dr.max(dc) as f64,
            Metric::Manhattan => (dr + dc) as f64,
            Metric::Euclidean => ((dr * dr + dc * dc) as f64).sqrt(),
        }
    }

    /// Exact `distance(a, b) <= radius` test (integer arithmetic for every
    /// metric; Euclidean compares squares).
    pub fn within(self, a: Cell, b: Cell, radius: u32) -> bool {
        let dr = (a.row as i32 - b.row as i32).unsigned_abs() as u64;
        let dc = (a.col as i32 - b.col as i32).unsigned_abs() as u64;
        let r = radius as u64;
        match self {
            Metric::Chebyshev => dr.max(dc) <= r,
            Metric::Manhattan => dr + dc <= r,
            Metric::Euclidean => dr * dr + dc * dc <= r * r,
        }
    }
}

/// Task difficulty level: 1 fixed layout, 2 random objects, 3 random
/// objects plus wall segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    One,
    Two,
    Three,
}

impl Level {
    pub fn tag(self) -> u8 {
        match self {
            Level::One => 1,
            Level::Two => 2,
            Level::Three => 3,
        }
    }
}

impl TryFrom<u8> for Level {
    type Error = GridError;

    fn try_from(v: u8) -> Result<Self, GridError> {
        match v {
            1 => Ok(Level::One),
            2 => Ok(Level::Two),
            3 => Ok(Level::Three),
            other => Err(GridError::BadLevel(other)),
        }
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.tag()
    }
}

/// Proximity radius in cells for an `n x n` grid: the 200-of-700 map ratio,
/// rounded.
pub fn proximity_radius(grid_size: u16) -> u32 {
    (grid_size as f64 * 200.0 / 700.0).round() as u32
}

/// Concrete navigation layout: four distinct object cells, one of them the
/// goal, optional walls, and the agent start at the grid center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutSpec {
    pub level: Level,
    pub grid_size: u16,
    pub objects: [Cell; 4],
    pub goal_index: usize,
    pub walls: BTreeSet<Cell>,
    pub seed: u64,
}

impl LayoutSpec {
    /// Agent start: the center cell of the (odd-sized) grid.
    pub fn start(&self) -> Cell {
        Cell::new(self.grid_size / 2, self.grid_size / 2)
    }

    pub fn goal(&self) -> Cell {
        self.objects[self.goal_index]
    }

    /// The three non-goal objects in object order.
    pub fn nongoals(&self) -> [Cell; 3] {
        let mut out = [Cell::new(0, 0); 3];
        let mut k = 0;
        for (i, &c) in self.objects.iter().enumerate() {
            if i != self.goal_index {
                out[k] = c;
                k += 1;
            }
        }
        out
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.grid_size && cell.col < self.grid_size
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }

    /// Index of the object occupying `cell`, if any.
    pub fn object_at(&self, cell: Cell) -> Option<usize> {
        self.objects.iter().position(|&c| c == cell)
    }

    /// The fixed layout for a level-1 task: one object at the middle of
    /// each quadrant, the first object designated as the goal, no walls.
    pub fn canonical(grid_size: u16) -> Result<Self, GridError> {
        if grid_size < 5 || grid_size % 2 == 0 {
            return Err(GridError::BadGridSize(grid_size));
        }
        let d = (grid_size / 4).max(1);
        let far = grid_size - 1 - d;
        let spec = Self {
            level: Level::One,
            grid_size,
            objects: [
                Cell::new(d, d),
                Cell::new(d, far),
                Cell::new(far, d),
                Cell::new(far, far),
            ],
            goal_index: 0,
            walls: BTreeSet::new(),
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks: odd grid of workable size, distinct in-bounds
    /// objects away from the start, walls disjoint from objects and start,
    /// and at least one object reachable from the start.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.grid_size < 5 || self.grid_size % 2 == 0 {
            return Err(GridError::BadGridSize(self.grid_size));
        }
        if self.goal_index >= 4 {
            return Err(GridError::BadLayout(format!("goal index {} out of range", self.goal_index)));
        }
        let start = self.start();
        for (i, &c) in self.objects.iter().enumerate() {
            if !self.in_bounds(c) {
                return Err(GridError::BadLayout(format!("object {i} out of bounds")));
            }
            if c == start {
                return Err(GridError::BadLayout(format!("object {i} on the start cell")));
            }
            for &d in &self.objects[i + 1..] {
                if c == d {
                    return Err(GridError::BadLayout("objects must be pairwise distinct".into()));
                }
            }
        }
        for &w in &self.walls {
            if !self.in_bounds(w) {
                return Err(GridError::BadLayout("wall out of bounds".into()));
            }
            if w == start || self.object_at(w).is_some() {
                return Err(GridError::BadLayout("wall on start or object cell".into()));
            }
        }
        if !reachable_objects(self).iter().any(|&r| r) {
            return Err(GridError::BadLayout("no object reachable from the start".into()));
        }
        Ok(())
    }

    /// Text rendering: `.` empty, `#` wall, `G` goal, `O` non-goal, `S` start.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let start = self.start();
        for row in 0..self.grid_size {
            for col in 0..self.grid_size {
                let cell = Cell::new(row, col);
                let ch = if cell == start {
                    'S'
                } else if self.is_wall(cell) {
                    '#'
                } else {
                    match self.object_at(cell) {
                        Some(i) if i == self.goal_index => 'G',
                        Some(_) => 'O',
                        None => '.',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`LayoutSpec::render`] output. Objects are recovered in
    /// row-major order; `level` and `seed` are not part of the text and
    /// must be supplied.
    pub fn parse(text: &str, level: Level, seed: u64) -> Result<Self, GridError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let n = rows.len();
        if n == 0 || n > u16::MAX as usize {
            return Err(GridError::Parse("empty grid".into()));
        }
        let grid_size = n as u16;
        let mut objects = Vec::new();
        let mut goal = None;
        let mut walls = BTreeSet::new();
        let mut start_seen = false;
        for (r, line) in rows.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != n {
                return Err(GridError::Parse(format!("row {r} has width {}, expected {n}", chars.len())));
            }
            for (c, ch) in chars.iter().enumerate() {
                let cell = Cell::new(r as u16, c as u16);
                match ch {
                    '.' => {}
                    '#' => {
                        walls.insert(cell);
                    }
                    'G' => {
                        goal = Some(objects.len());
                        objects.push(cell);
                    }
                    'O' => objects.push(cell),
                    'S' => start_seen = true,
                    other => return Err(GridError::Parse(format!("unknown cell char {other:?}"))),
                }
            }
        }
        if !start_seen {
            return Err(GridError::Parse("missing start cell".into()));
        }
        let goal_index = goal.ok_or_else(|| GridError::Parse("missing goal cell".into()))?;
        let objects: [Cell; 4] = objects
            .try_into()
            .map_err(|v: Vec<Cell>| GridError::Parse(format!("expected 4 objects, found {}", v.len())))?;
        let spec = Self { level, grid_size, objects, goal_index, walls, seed };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sampling knobs for random layout generation.
#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    pub metric: Metric,
    /// Minimum distance between start and any sampled object. `None`
    /// derives `proximity_radius + 1`, which keeps the start outside every
    /// proximity region.
    pub exclusion_radius: Option<u32>,
    pub max_attempts: u32,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self { metric: Metric::Chebyshev, exclusion_radius: None, max_attempts: 200 }
    }
}

impl SampleParams {
    pub fn exclusion(&self, grid_size: u16) -> u32 {
        self.exclusion_radius.unwrap_or(proximity_radius(grid_size) + 1)
    }
}

/// Generates a layout with default sampling parameters.
///
/// Level 1 returns the fixed canonical layout for every seed; levels 2 and
/// 3 are deterministic functions of the seed.
pub fn make_level(level: Level, grid_size: u16, seed: u64) -> Result<LayoutSpec, GridError> {
    make_level_with(level, grid_size, seed, &SampleParams::default())
}

pub fn make_level_with(
    level: Level,
    grid_size: u16,
    seed: u64,
    params: &SampleParams,
) -> Result<LayoutSpec, GridError> {
    if grid_size < 7 || grid_size % 2 == 0 {
        return Err(GridError::GridTooSmall(grid_size));
    }
    if level == Level::One {
        return LayoutSpec::canonical(grid_size);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Cell::new(grid_size / 2, grid_size / 2);
    let exclusion = params.exclusion(grid_size);
    // The exclusion zone constrains only sampled layouts; the canonical
    // level-1 map is fixed and exempt.
    let allowed: Vec<Cell> = (0..grid_size)
        .flat_map(|r| (0..grid_size).map(move |c| Cell::new(r, c)))
        .filter(|&c| c != start && !params.metric.within(start, c, exclusion.saturating_sub(1)))
        .collect();
    if allowed.len() < 4 {
        return Err(GridError::SamplingFailed { level: level.tag(), grid_size, attempts: 0 });
    }
    for _ in 0..params.max_attempts {
        let mut pool = allowed.clone();
        let mut objects = [Cell::new(0, 0); 4];
        for slot in objects.iter_mut() {
            let i = rng.gen_range(0..pool.len());
            *slot = pool.swap_remove(i);
        }
        let goal_index = rng.gen_range(0..4usize);
        let walls = if level == Level::Three {
            sample_walls(&mut rng, grid_size, start, &objects)
        } else {
            BTreeSet::new()
        };
        let spec = LayoutSpec { level, grid_size, objects, goal_index, walls, seed };
        if spec.validate().is_ok() && reachable_objects(&spec).iter().all(|&r| r) {
            return Ok(spec);
        }
    }
    Err(GridError::SamplingFailed { level: level.tag(), grid_size, attempts: params.max_attempts })
}

/// Short horizontal/vertical wall segments avoiding the start and objects.
fn sample_walls(
    rng: &mut ChaCha8Rng,
    grid_size: u16,
    start: Cell,
    objects: &[Cell; 4],
) -> BTreeSet<Cell> {
    let n_segments = (grid_size / 3 + 1) as usize;
    let mut walls = BTreeSet::new();
    for _ in 0..n_segments {
        for _ in 0..40 {
            let horizontal = rng.gen_bool(0.5);
            let len = rng.gen_range(2..=3u16);
            let (max_r, max_c) = if horizontal {
                (grid_size, grid_size - len + 1)
            } else {
                (grid_size - len + 1, grid_size)
            };
            let r0 = rng.gen_range(0..max_r);
            let c0 = rng.gen_range(0..max_c);
            let cells: Vec<Cell> = (0..len)
                .map(|k| if horizontal { Cell::new(r0, c0 + k) } else { Cell::new(r0 + k, c0) })
                .collect();
            let clash = cells
                .iter()
                .any(|c| *c == start || objects.contains(c) || walls.contains(c));
            if !clash {
                walls.extend(cells);
                break;
            }
        }
    }
    walls
}

/// Which objects are reachable from the start through empty cells
/// (4-neighbour moves; walls block, and paths may not pass through other
/// objects).
pub(crate) fn reachable_objects(spec: &LayoutSpec) -> [bool; 4] {
    let n = spec.grid_size as usize;
    let mut visited = vec![false; n * n];
    let mut reach = [false; 4];
    let start = spec.start();
    let mut queue = VecDeque::new();
    visited[start.row as usize * n + start.col as usize] = true;
    queue.push_back(start);
    while let Some(cell) = queue.pop_front() {
        for (dr, dc) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
            let r = cell.row as i32 + dr;
            let c = cell.col as i32 + dc;
            if r < 0 || c < 0 || r >= spec.grid_size as i32 || c >= spec.grid_size as i32 {
                continue;
            }
            let next = Cell::new(r as u16, c as u16);
            if spec.is_wall(next) {
                continue;
            }
            if let Some(i) = spec.object_at(next) {
                reach[i] = true;
                continue;
            }
            let idx = next.row as usize * n + next.col as usize;
            if !visited[idx] {
                visited[idx] = true;
                queue.push_back(next);
            }
        }
    }
    reach
}
