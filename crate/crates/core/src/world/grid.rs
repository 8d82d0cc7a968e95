use std::fmt::Write as _;
use std::sync::OnceLock;

use super::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Walled occupancy grid with a start and a goal cell.
///
/// Cells are stored row-major with `y` selecting the row. Cell `(x, y)` covers
/// `[x*res, (x+1)*res) × [y*res, (y+1)*res)` in world meters.
#[derive(Debug)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<bool>,
    start: Cell,
    goal: Cell,
    distance: OnceLock<DistanceField>,
}

impl Clone for OccupancyGrid {
    fn clone(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            cells: self.cells.clone(),
            start: self.start,
            goal: self.goal,
            distance: OnceLock::new(),
        }
    }
}

impl PartialEq for OccupancyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
            && self.cells == other.cells
            && self.start == other.start
            && self.goal == other.goal
    }
}

impl OccupancyGrid {
    /// Builds a grid and checks the structural invariants (size, walls, free
    /// start/goal). Connectivity is the generator's job.
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        cells: Vec<bool>,
        start: Cell,
        goal: Cell,
    ) -> Result<Self, WorldError> {
        if width < 10 || height < 10 {
            return Err(WorldError::InvalidGrid(format!(
                "grid must be at least 10x10, got {width}x{height}"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::InvalidGrid(format!("bad resolution {resolution}")));
        }
        if cells.len() != width * height {
            return Err(WorldError::InvalidGrid(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        let grid = Self {
            width,
            height,
            resolution,
            cells,
            start,
            goal,
            distance: OnceLock::new(),
        };
        for x in 0..width {
            for y in [0, height - 1] {
                if !grid.occupied(Cell::new(x, y)) {
                    return Err(WorldError::InvalidGrid(format!("border cell ({x}, {y}) is free")));
                }
            }
        }
        for y in 0..height {
            for x in [0, width - 1] {
                if !grid.occupied(Cell::new(x, y)) {
                    return Err(WorldError::InvalidGrid(format!("border cell ({x}, {y}) is free")));
                }
            }
        }
        for (name, c) in [("start", start), ("goal", goal)] {
            if !grid.in_bounds(c) || grid.occupied(c) {
                return Err(WorldError::InvalidGrid(format!(
                    "{name} cell ({}, {}) is not a free in-bounds cell",
                    c.x, c.y
                )));
            }
        }
        Ok(grid)
    }

    /// Empty walled arena, handy for tests and demos.
    pub fn empty(width: usize, height: usize, resolution: f64, start: Cell, goal: Cell) -> Result<Self, WorldError> {
        let mut cells = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    cells[y * width + x] = true;
                }
            }
        }
        Self::new(width, height, resolution, cells, start, goal)
    }

    /// Returns a copy with the given cells marked occupied.
    pub fn with_obstacles(&self, obstacles: impl IntoIterator<Item = Cell>) -> Result<Self, WorldError> {
        let mut cells = self.cells.clone();
        for c in obstacles {
            if c.x < self.width && c.y < self.height {
                cells[c.y * self.width + c.x] = true;
            }
        }
        Self::new(self.width, self.height, self.resolution, cells, self.start, self.goal)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at_index(&self, i: usize) -> Cell {
        Cell::new(i % self.width, i / self.width)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn occupied(&self, c: Cell) -> bool {
        self.cells[self.index(c)]
    }

    /// Cell containing a world point, `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let cx = (x / self.resolution).floor() as usize;
        let cy = (y / self.resolution).floor() as usize;
        (cx < self.width && cy < self.height).then_some(Cell::new(cx, cy))
    }

    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        ((c.x as f64 + 0.5) * self.resolution, (c.y as f64 + 0.5) * self.resolution)
    }

    /// Distance field, computed on first use and shared afterwards.
    pub fn distance_field(&self) -> &DistanceField {
        self.distance.get_or_init(|| DistanceField::compute(self))
    }

    /// Text form: four header lines then one `#`/`.` row per `y`, top row
    /// (`y = height-1`) first.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height + 64);
        let _ = writeln!(out, "width {}", self.width);
        let _ = writeln!(out, "height {}", self.height);
        let _ = writeln!(out, "resolution {}", self.resolution);
        let _ = writeln!(
            out,
            "start {} {} goal {} {}",
            self.start.x, self.start.y, self.goal.x, self.goal.y
        );
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(if self.occupied(Cell::new(x, y)) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, WorldError> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String, WorldError> {
            let (n, line) = lines.next().ok_or(WorldError::Parse {
                line: 0,
                detail: format!("missing `{key}` header"),
            })?;
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or(WorldError::Parse {
                    line: n + 1,
                    detail: format!("expected `{key}`"),
                })
        };
        let parse_usize = |s: &str, line: usize| {
            s.parse::<usize>().map_err(|e| WorldError::Parse {
                line,
                detail: format!("{s:?}: {e}"),
            })
        };
        let width = parse_usize(&header("width ")?, 1)?;
        let height = parse_usize(&header("height ")?, 2)?;
        let res_text = header("resolution ")?;
        let resolution = res_text.parse::<f64>().map_err(|e| WorldError::Parse {
            line: 3,
            detail: format!("{res_text:?}: {e}"),
        })?;
        let sg = header("start ")?;
        let parts: Vec<&str> = sg.split_whitespace().collect();
        if parts.len() != 5 || parts[2] != "goal" {
            return Err(WorldError::Parse {
                line: 4,
                detail: "expected `start sx sy goal gx gy`".into(),
            });
        }
        let start = Cell::new(parse_usize(parts[0], 4)?, parse_usize(parts[1], 4)?);
        let goal = Cell::new(parse_usize(parts[3], 4)?, parse_usize(parts[4], 4)?);

        let mut cells = vec![false; width * height];
        let mut rows = 0;
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            if rows >= height {
                return Err(WorldError::Parse {
                    line: n + 1,
                    detail: "too many rows".into(),
                });
            }
            let y = height - 1 - rows;
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != width {
                return Err(WorldError::Parse {
                    line: n + 1,
                    detail: format!("row has {} columns, expected {width}", chars.len()),
                });
            }
            for (x, ch) in chars.into_iter().enumerate() {
                cells[y * width + x] = match ch {
                    '#' => true,
                    '.' => false,
                    other => {
                        return Err(WorldError::Parse {
                            line: n + 1,
                            detail: format!("unexpected character {other:?}"),
                        })
                    }
                };
            }
            rows += 1;
        }
        if rows != height {
            return Err(WorldError::Parse {
                line: 4 + rows,
                detail: format!("expected {height} rows, got {rows}"),
            });
        }
        Self::new(width, height, resolution, cells, start, goal)
    }
}

/// Euclidean distance (meters) from each cell center to the nearest occupied
/// cell center; zero on occupied cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    resolution: f64,
    meters: Vec<f64>,
}

impl DistanceField {
    pub fn compute(grid: &OccupancyGrid) -> Self {
        let (w, h) = (grid.width, grid.height);
        let big = ((w * w + h * h) as f64) * 4.0;
        // squared distances in cell units, separable exact transform
        let mut sq: Vec<f64> = grid.cells.iter().map(|&o| if o { 0.0 } else { big }).collect();
        let n = w.max(h);
        let mut f = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut v = vec![0usize; n];
        let mut z = vec![0.0; n + 1];
        for x in 0..w {
            for y in 0..h {
                f[y] = sq[y * w + x];
            }
            edt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
            for y in 0..h {
                sq[y * w + x] = d[y];
            }
        }
        for y in 0..h {
            f[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
            edt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
            sq[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
        }
        let meters = sq.into_iter().map(|s| s.sqrt() * grid.resolution).collect();
        Self {
            width: w,
            height: h,
            resolution: grid.resolution,
            meters,
        }
    }

    pub fn at(&self, c: Cell) -> f64 {
        self.meters[c.y * self.width + c.x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.meters
    }

    /// Lower bound on the distance from a world point to the nearest occupied
    /// cell center. Uses the 1-Lipschitz property of the field over the four
    /// surrounding cell centers. Zero outside the grid.
    pub fn clearance_lower_bound(&self, x: f64, y: f64) -> f64 {
        let gx = x / self.resolution - 0.5;
        let gy = y / self.resolution - 0.5;
        if !(gx >= -0.5 && gy >= -0.5) {
            return 0.0;
        }
        let x0 = gx.floor();
        let y0 = gy.floor();
        let mut best: f64 = 0.0;
        let mut any = false;
        for dy in 0..2 {
            for dx in 0..2 {
                let cx = x0 + dx as f64;
                let cy = y0 + dy as f64;
                if cx < 0.0 || cy < 0.0 {
                    continue;
                }
                let (cx, cy) = (cx as usize, cy as usize);
                if cx >= self.width || cy >= self.height {
                    continue;
                }
                let px = (cx as f64 + 0.5) * self.resolution;
                let py = (cy as f64 + 0.5) * self.resolution;
                let off = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
                let lb = self.meters[cy * self.width + cx] - off;
                if !any || lb > best {
                    best = lb;
                    any = true;
                }
            }
        }
        if any {
            best.max(0.0)
        } else {
            0.0
        }
    }
}

// Felzenszwalb & Huttenlocher lower envelope of parabolas.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        // z[0] is -inf, so this stops at k = 0 at the latest
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *out = diff * diff + f[p];
    }
}
