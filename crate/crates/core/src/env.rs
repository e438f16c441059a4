//! MiniRun: a procedurally generated side-scrolling platformer.
//!
//! The agent starts on the left edge and must reach the goal column on the
//! right edge, jumping over gaps and climbing steps on the way. Levels are a
//! pure function of `(seed, config)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const VIEW_HEIGHT: usize = 12;
pub const VIEW_WIDTH: usize = 12;
pub const CHANNELS: usize = 4;
pub const OBS_LEN: usize = VIEW_HEIGHT * VIEW_WIDTH * CHANNELS;
/// Window column the agent occupies; the view looks further ahead than behind.
pub const AGENT_VIEW_COL: usize = 3;

pub const CH_TERRAIN: usize = 0;
pub const CH_HAZARD: usize = 1;
pub const CH_GOAL: usize = 2;
pub const CH_AGENT: usize = 3;

pub const GOAL_REWARD: f64 = 10.0;
pub const FALL_REWARD: f64 = -10.0;
/// Highest achievable episode score.
pub const MAX_SCORE: f64 = GOAL_REWARD;

/// Upward travel, in cells, of one jump.
pub const JUMP_HEIGHT: i32 = 3;
/// Widest gap the generator accepts; wider gaps cannot be cleared.
pub const MAX_GAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
    /// Jumps when on the ground and moves one column right.
    Jump = 2,
    Noop = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Jump, Action::Noop];
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::Index {
            index: i,
            len: Self::COUNT,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelConfig {
    pub width: usize,
    pub height: usize,
    pub gap_prob: f64,
    /// Widest gap, in columns.
    pub max_jump: usize,
    pub step_cap: usize,
    /// Probability that terrain height changes between adjacent ground columns.
    pub height_change_prob: f64,
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 12,
            gap_prob: 0.03,
            max_jump: 2,
            step_cap: 256,
            height_change_prob: 0.2,
        }
    }
}

impl LevelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.width < 8 {
            return err("width must be at least 8");
        }
        if self.height < 6 || self.height > VIEW_HEIGHT {
            return err("height must lie in [6, 12]");
        }
        if self.step_cap == 0 {
            return err("step_cap must be positive");
        }
        if !(0.0..=1.0).contains(&self.gap_prob) || !(0.0..=1.0).contains(&self.height_change_prob) {
            return err("probabilities must lie in [0, 1]");
        }
        if self.gap_prob > 0.0 && self.max_jump == 0 {
            return err("max_jump = 0 makes gaps impossible to cross");
        }
        if self.max_jump > MAX_GAP {
            return err("max_jump exceeds the widest clearable gap (4)");
        }
        Ok(())
    }

    fn max_terrain(&self) -> usize {
        (self.height - JUMP_HEIGHT as usize - 2).min(5)
    }
}

/// Terrain of one generated level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelLayout {
    pub width: usize,
    pub height: usize,
    /// Solid cells per column, counted from the bottom. Gap columns hold 0.
    pub heights: Vec<usize>,
    pub gaps: Vec<bool>,
    pub goal_col: usize,
    pub seed: u64,
}

impl LevelLayout {
    pub fn ground(&self, col: usize) -> usize {
        self.heights[col]
    }

    /// Widest run of consecutive gap columns.
    pub fn widest_gap(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &g in &self.gaps {
            run = if g { run + 1 } else { 0 };
            best = best.max(run);
        }
        best
    }
}

/// Generates the level for `seed`. Gaps never exceed `max_jump` columns, a
/// landing column is never more than one cell above its take-off column, and
/// ground steps up by at most two cells.
pub fn generate_level(seed: u64, config: &LevelConfig) -> Result<LevelLayout> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = config.width;
    let top = config.max_terrain() as i64;
    let mut heights = vec![0usize; w];
    let mut gaps = vec![false; w];
    let mut level: i64 = rng.random_range(1..=3);
    let run_in = 3;
    let run_out = 3;
    for h in heights.iter_mut().take(run_in) {
        *h = level as usize;
    }
    let mut c = run_in;
    let mut prev_gap = false;
    while c < w - run_out {
        if !prev_gap && config.gap_prob > 0.0 && rng.random::<f64>() < config.gap_prob {
            let width = rng.random_range(1..=config.max_jump).min(w - run_out - c);
            for g in &mut gaps[c..c + width] {
                *g = true;
            }
            c += width;
            level = (level + rng.random_range(-1..=1)).clamp(1, top);
            prev_gap = true;
            continue;
        }
        if !prev_gap && rng.random::<f64>() < config.height_change_prob {
            let delta = [-2, -1, 1, 2][rng.random_range(0..4)];
            level = (level + delta).clamp(1, top);
        }
        heights[c] = level as usize;
        prev_gap = false;
        c += 1;
    }
    for h in heights.iter_mut().skip(c) {
        *h = level as usize;
    }
    Ok(LevelLayout {
        width: w,
        height: config.height,
        heights,
        gaps,
        goal_col: w - 1,
        seed,
    })
}

/// One-hot egocentric view, `12 × 12 × 4`, row-major with the top row first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    cells: [u8; OBS_LEN],
}

impl core::fmt::Debug for Observation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Observation").field("active", &self.active_count()).finish()
    }
}

impl Default for Observation {
    fn default() -> Self {
        Self::empty()
    }
}

impl Observation {
    pub fn empty() -> Self {
        Self { cells: [0; OBS_LEN] }
    }

    pub fn from_cells(cells: &[u8]) -> Result<Self> {
        if cells.len() != OBS_LEN {
            return Err(Error::Dimension {
                context: "observation cells",
                expected: OBS_LEN,
                actual: cells.len(),
            });
        }
        if cells.iter().any(|v| *v > 1) {
            return Err(Error::Config("observation cells must be 0 or 1".into()));
        }
        let mut out = Self::empty();
        out.cells.copy_from_slice(cells);
        Ok(out)
    }

    fn idx(row: usize, col: usize, ch: usize) -> usize {
        (row * VIEW_WIDTH + col) * CHANNELS + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.cells[Self::idx(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, on: bool) {
        self.cells[Self::idx(row, col, ch)] = on as u8;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn channel_count(&self, ch: usize) -> usize {
        self.cells.iter().skip(ch).step_by(CHANNELS).filter(|v| **v == 1).count()
    }

    fn active_count(&self) -> usize {
        self.cells.iter().filter(|v| **v == 1).count()
    }

    /// Writes the observation as `0.0`/`1.0` network inputs.
    pub fn write_input(&self, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(self.cells.iter()) {
            *o = *c as f64;
        }
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut v = vec![0.0; OBS_LEN];
        self.write_input(&mut v);
        v
    }
}

pub const PIXEL_TERRAIN: f64 = 0.50;
pub const PIXEL_HAZARD: f64 = 0.75;
pub const PIXEL_GOAL: f64 = 1.00;
pub const PIXEL_AGENT: f64 = 0.25;
pub const IMAGE_LEN: usize = VIEW_HEIGHT * VIEW_WIDTH;

/// Collapses the channels into one grayscale `12 × 12` image, row-major.
/// Overlapping channels resolve as agent over goal over hazard over terrain.
pub fn render_pixels(obs: &Observation) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_LEN];
    for r in 0..VIEW_HEIGHT {
        for c in 0..VIEW_WIDTH {
            let v = if obs.get(r, c, CH_AGENT) == 1 {
                PIXEL_AGENT
            } else if obs.get(r, c, CH_GOAL) == 1 {
                PIXEL_GOAL
            } else if obs.get(r, c, CH_HAZARD) == 1 {
                PIXEL_HAZARD
            } else if obs.get(r, c, CH_TERRAIN) == 1 {
                PIXEL_TERRAIN
            } else {
                0.0
            };
            img[r * VIEW_WIDTH + c] = v;
        }
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// Live state of one MiniRun episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub layout: LevelLayout,
    pub col: usize,
    /// Cell row counted from the bottom (row 0 is the lowest cell).
    pub row: usize,
    /// Remaining upward cells of the current jump.
    pub rise: i32,
    pub steps: usize,
    pub done: bool,
    pub score: f64,
    step_cap: usize,
}

impl EnvState {
    /// Fresh episode on the level generated from `seed`.
    pub fn reset(seed: u64, config: &LevelConfig) -> Result<(Self, Observation)> {
        let layout = generate_level(seed, config)?;
        let state = Self::start(layout, config.step_cap);
        let obs = state.observe();
        Ok((state, obs))
    }

    /// Places the agent on the leftmost ground column of an existing layout.
    pub fn start(layout: LevelLayout, step_cap: usize) -> Self {
        let col = layout.gaps.iter().position(|g| !g).unwrap_or(0);
        let row = layout.ground(col);
        Self {
            layout,
            col,
            row,
            rise: 0,
            steps: 0,
            done: false,
            score: 0.0,
            step_cap,
        }
    }

    pub fn on_ground(&self) -> bool {
        !self.layout.gaps[self.col] && self.row == self.layout.ground(self.col)
    }

    pub fn step(&mut self, action: Action) -> Result<(Observation, StepOutcome)> {
        let outcome = self.advance(action)?;
        Ok((self.observe(), outcome))
    }

    /// Applies one action without building an observation.
    pub fn advance(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode"));
        }
        let grounded = self.on_ground();
        if action == Action::Jump && grounded {
            self.rise = JUMP_HEIGHT;
        }
        let rising = self.rise > 0;
        if rising {
            self.row = (self.row + 1).min(self.layout.height - 1);
            self.rise -= 1;
        }
        let lay = &self.layout;
        let target = match action {
            Action::Left => self.col.checked_sub(1),
            Action::Right | Action::Jump => Some(self.col + 1).filter(|c| *c < lay.width),
            Action::Noop => None,
        };
        if let Some(t) = target {
            if lay.ground(t) <= self.row {
                self.col = t;
            }
        }
        if !rising && self.row > self.layout.ground(self.col) {
            self.row -= 1;
        }
        self.steps += 1;

        let mut reward = 0.0;
        if self.col == self.layout.goal_col {
            reward = GOAL_REWARD;
            self.done = true;
        } else if self.layout.gaps[self.col] && self.row == 0 {
            reward = FALL_REWARD;
            self.done = true;
        } else if self.steps >= self.step_cap {
            self.done = true;
        }
        self.score += reward;
        Ok(StepOutcome {
            reward,
            done: self.done,
        })
    }

    pub fn observe(&self) -> Observation {
        let lay = &self.layout;
        let mut obs = Observation::empty();
        let first = self.col as i64 - AGENT_VIEW_COL as i64;
        for wc in 0..VIEW_WIDTH {
            let c = first + wc as i64;
            if c < 0 || c >= lay.width as i64 {
                continue;
            }
            let c = c as usize;
            let h = lay.ground(c);
            for row in 0..lay.height.min(VIEW_HEIGHT) {
                let wr = VIEW_HEIGHT - 1 - row;
                if row < h {
                    obs.set(wr, wc, CH_TERRAIN, true);
                }
                if lay.gaps[c] && row == 0 {
                    obs.set(wr, wc, CH_HAZARD, true);
                }
                if c == lay.goal_col && row == h {
                    obs.set(wr, wc, CH_GOAL, true);
                }
            }
        }
        obs.set(VIEW_HEIGHT - 1 - self.row, AGENT_VIEW_COL, CH_AGENT, true);
        obs
    }
}
