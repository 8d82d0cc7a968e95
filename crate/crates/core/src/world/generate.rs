use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Cell, OccupancyGrid};
use super::{WorldError, DEFAULT_RESOLUTION};
use crate::rng::{rng_for, stream};

/// Cellular-automaton environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaConfig {
    pub fill_prob: f64,
    pub iterations: u32,
    pub size: usize,
    pub resolution: f64,
    /// Seeds tried (seed, seed+1, ...) before giving up.
    pub max_retries: u32,
}

impl Default for CaConfig {
    fn default() -> Self {
        Self {
            fill_prob: Difficulty::Medium.fill_prob(),
            iterations: 3,
            size: 60,
            resolution: DEFAULT_RESOLUTION,
            max_retries: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn fill_prob(self) -> f64 {
        match self {
            Difficulty::Easy => 0.40,
            Difficulty::Medium => 0.44,
            Difficulty::Hard => 0.48,
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            other => Err(format!("unknown difficulty {other:?} (easy|medium|hard)")),
        }
    }
}

/// Generates a walled cave environment at the default resolution.
pub fn generate_environment(
    seed: u64,
    fill_prob: f64,
    iterations: u32,
    size: usize,
) -> Result<OccupancyGrid, WorldError> {
    generate_with(
        seed,
        &CaConfig {
            fill_prob,
            iterations,
            size,
            ..CaConfig::default()
        },
    )
}

pub fn generate_with(seed: u64, cfg: &CaConfig) -> Result<OccupancyGrid, WorldError> {
    if cfg.size < 10 {
        return Err(WorldError::InvalidGrid(format!("size {} < 10", cfg.size)));
    }
    if !(0.0..=1.0).contains(&cfg.fill_prob) {
        return Err(WorldError::InvalidGrid(format!("fill_prob {} outside [0, 1]", cfg.fill_prob)));
    }
    let attempts = cfg.max_retries.max(1);
    for attempt in 0..attempts {
        let s = seed.wrapping_add(attempt as u64);
        let cells = cave_cells(s, cfg.fill_prob, cfg.iterations, cfg.size);
        if let Some((start, goal)) = place_endpoints(&cells, cfg.size) {
            return OccupancyGrid::new(cfg.size, cfg.size, cfg.resolution, cells, start, goal);
        }
    }
    Err(WorldError::GenerationFailed { seed, attempts })
}

/// Random fill, `iterations` rounds of the "occupied iff >= 5 of 8
/// neighbors occupied" rule (out-of-bounds neighbors count as occupied), then
/// the border is walled.
fn cave_cells(seed: u64, fill_prob: f64, iterations: u32, size: usize) -> Vec<bool> {
    let mut rng = rng_for(seed, stream::ENVIRONMENT);
    let mut cells: Vec<bool> = (0..size * size).map(|_| rng.gen::<f64>() < fill_prob).collect();
    let mut next = vec![false; size * size];
    for _ in 0..iterations {
        for y in 0..size {
            for x in 0..size {
                let mut n = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        let outside = nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64;
                        if outside || cells[ny as usize * size + nx as usize] {
                            n += 1;
                        }
                    }
                }
                next[y * size + x] = n >= 5;
            }
        }
        std::mem::swap(&mut cells, &mut next);
    }
    for i in 0..size {
        cells[i] = true;
        cells[(size - 1) * size + i] = true;
        cells[i * size] = true;
        cells[i * size + size - 1] = true;
    }
    cells
}

/// Start in the bottom band, goal in the top band, both inside the largest
/// 4-connected free component and as far from obstacles as possible.
fn place_endpoints(cells: &[bool], size: usize) -> Option<(Cell, Cell)> {
    let component = largest_component(cells, size)?;
    let band = (size / 4).max(2);
    let clearance = chebyshev_clearance(cells, size);
    let pick = |in_band: &dyn Fn(usize) -> bool| -> Option<Cell> {
        let mut best: Option<(u32, usize)> = None;
        for &i in &component {
            let y = i / size;
            if !in_band(y) {
                continue;
            }
            let c = clearance[i];
            if best.is_none_or(|(bc, _)| c > bc) {
                best = Some((c, i));
            }
        }
        best.map(|(_, i)| Cell::new(i % size, i / size))
    };
    let start = pick(&|y| y < band)?;
    let goal = pick(&|y| y >= size - band)?;
    Some((start, goal))
}

/// Cell indices of the largest 4-connected free component (first found wins
/// ties).
fn largest_component(cells: &[bool], size: usize) -> Option<Vec<usize>> {
    let mut label = vec![usize::MAX; cells.len()];
    let mut best: Option<Vec<usize>> = None;
    let mut queue = std::collections::VecDeque::new();
    for seed in 0..cells.len() {
        if cells[seed] || label[seed] != usize::MAX {
            continue;
        }
        let mut members = Vec::new();
        label[seed] = seed;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = (i % size, i / size);
            let mut visit = |j: usize| {
                if !cells[j] && label[j] == usize::MAX {
                    label[j] = seed;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < size {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - size);
            }
            if y + 1 < size {
                visit(i + size);
            }
        }
        if best.as_ref().is_none_or(|b| members.len() > b.len()) {
            best = Some(members);
        }
    }
    best.map(|mut m| {
        m.sort_unstable();
        m
    })
}

/// Chessboard distance (cells) to the nearest occupied cell.
fn chebyshev_clearance(cells: &[bool], size: usize) -> Vec<u32> {
    let mut dist: Vec<u32> = cells.iter().map(|&o| if o { 0 } else { u32::MAX }).collect();
    let mut queue: std::collections::VecDeque<usize> = (0..cells.len()).filter(|&i| cells[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % size) as i64, (i / size) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64 {
                    continue;
                }
                let j = ny as usize * size + nx as usize;
                if dist[j] == u32::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist
}
