//! The 10-dimensional greenhouse state and the discrete ventilation action.

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five-minute control steps in one day.
pub const STEPS_PER_DAY: usize = 288;
pub const STEPS_PER_HOUR: usize = 12;
/// Minutes between two consecutive steps.
pub const STEP_MINUTES: f64 = 5.0;

pub const N_FEATURES: usize = 10;
pub const N_LEVELS: usize = 11;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "t_air",
    "t_soil",
    "t_water",
    "t_wall",
    "alpha_vent",
    "hour",
    "month",
    "day",
    "t_bar",
    "alpha_bar",
];

/// Admissible range of every feature, in feature order.
pub const FEATURE_BOUNDS: [(f64, f64); N_FEATURES] = [
    (0.0, 50.0),
    (0.0, 50.0),
    (0.0, 50.0),
    (0.0, 50.0),
    (0.0, 100.0),
    (0.0, 23.0),
    (1.0, 12.0),
    (1.0, 31.0),
    (0.0, 50.0),
    (0.0, 100.0),
];

pub const TEMP_BOUNDS: (f64, f64) = (0.0, 50.0);
pub const OPENING_BOUNDS: (f64, f64) = (0.0, 100.0);

/// Ventilation opening level, `0..=10`, mapping to `10 * level` percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Action(u8);

impl Action {
    pub const CLOSED: Action = Action(0);
    pub const FULL: Action = Action(10);

    pub fn new(level: u8) -> Result<Self> {
        if level as usize >= N_LEVELS {
            return Err(Error::InvalidArgument(format!(
                "action level {level} outside 0..=10"
            )));
        }
        Ok(Action(level))
    }

    pub fn from_index(index: usize) -> Self {
        Action(index.min(N_LEVELS - 1) as u8)
    }

    /// Nearest level to an opening percentage, clamped to the valid range.
    pub fn nearest(opening: f64) -> Self {
        let level = (opening.clamp(0.0, 100.0) / 10.0).round();
        Action(level as u8)
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn opening(self) -> f64 {
        10.0 * self.0 as f64
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..N_LEVELS as u8).map(Action)
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Action::new(v)
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.0
    }
}

/// Greenhouse state at a decision point.
///
/// Hour, month and day are derived from `date` and `step_of_day`; the running
/// means cover every observation since the start of the current day,
/// including the current one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenhouseState {
    pub t_air: f64,
    pub t_soil: f64,
    pub t_water: f64,
    pub t_wall: f64,
    pub alpha_vent: f64,
    pub t_bar: f64,
    pub alpha_bar: f64,
    pub date: NaiveDate,
    pub step_of_day: u16,
}

/// The four temperatures predicted by every dynamics model, in this order:
/// air, soil, water, wall.
pub type Temps = [f64; 4];

pub const TEMP_CHANNELS: [&str; 4] = ["t_air", "t_soil", "t_water", "t_wall"];

impl GreenhouseState {
    /// State at the first step of a day; running means equal the observation.
    pub fn day_start(temps: Temps, alpha_vent: f64, date: NaiveDate) -> Self {
        let mut s = GreenhouseState {
            t_air: temps[0],
            t_soil: temps[1],
            t_water: temps[2],
            t_wall: temps[3],
            alpha_vent,
            t_bar: temps[0],
            alpha_bar: alpha_vent,
            date,
            step_of_day: 0,
        };
        s.clamp();
        s.t_bar = s.t_air;
        s.alpha_bar = s.alpha_vent;
        s
    }

    pub fn temps(&self) -> Temps {
        [self.t_air, self.t_soil, self.t_water, self.t_wall]
    }

    pub fn hour(&self) -> u32 {
        self.step_of_day as u32 / STEPS_PER_HOUR as u32
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }

    pub fn day(&self) -> u32 {
        self.date.day()
    }

    /// Raw features in canonical order.
    pub fn features(&self) -> [f64; N_FEATURES] {
        [
            self.t_air,
            self.t_soil,
            self.t_water,
            self.t_wall,
            self.alpha_vent,
            self.hour() as f64,
            self.month() as f64,
            self.day() as f64,
            self.t_bar,
            self.alpha_bar,
        ]
    }

    /// Features min-max scaled onto `[0, 1]` by their admissible bounds.
    pub fn normalized_features(&self) -> [f64; N_FEATURES] {
        let raw = self.features();
        let mut out = [0.0; N_FEATURES];
        for (i, (v, (lo, hi))) in raw.iter().zip(FEATURE_BOUNDS).enumerate() {
            out[i] = (v - lo) / (hi - lo);
        }
        out
    }

    pub fn clamp(&mut self) {
        let (lo, hi) = TEMP_BOUNDS;
        self.t_air = self.t_air.clamp(lo, hi);
        self.t_soil = self.t_soil.clamp(lo, hi);
        self.t_water = self.t_water.clamp(lo, hi);
        self.t_wall = self.t_wall.clamp(lo, hi);
        self.t_bar = self.t_bar.clamp(lo, hi);
        let (lo, hi) = OPENING_BOUNDS;
        self.alpha_vent = self.alpha_vent.clamp(lo, hi);
        self.alpha_bar = self.alpha_bar.clamp(lo, hi);
    }

    /// True when every feature lies inside its admissible range.
    pub fn is_within_bounds(&self) -> bool {
        self.features()
            .iter()
            .zip(FEATURE_BOUNDS)
            .all(|(v, (lo, hi))| v.is_finite() && *v >= lo && *v <= hi)
    }

    /// Moves the clock forward one step, applies the new temperatures and the
    /// opening that was in effect, and updates the running means. Values are
    /// clamped to the admissible ranges.
    pub fn advance(&self, temps: Temps, opening: f64) -> GreenhouseState {
        let mut step = self.step_of_day as usize + 1;
        let mut date = self.date;
        if step == STEPS_PER_DAY {
            step = 0;
            date += Duration::days(1);
        }
        let (lo, hi) = TEMP_BOUNDS;
        let t_air = temps[0].clamp(lo, hi);
        let opening = opening.clamp(OPENING_BOUNDS.0, OPENING_BOUNDS.1);
        let k = step + 1;
        let (t_bar, alpha_bar) = if k == 1 {
            (t_air, opening)
        } else {
            (
                running_mean(self.t_bar, t_air, k),
                running_mean(self.alpha_bar, opening, k),
            )
        };
        let mut next = GreenhouseState {
            t_air,
            t_soil: temps[1],
            t_water: temps[2],
            t_wall: temps[3],
            alpha_vent: opening,
            t_bar,
            alpha_bar,
            date,
            step_of_day: step as u16,
        };
        next.clamp();
        next
    }
}

fn running_mean(prev_mean: f64, value: f64, k: usize) -> f64 {
    (prev_mean * (k as f64 - 1.0) + value) / k as f64
}

/// Updates the day-so-far means with a new observation. `step_index_in_day`
/// is the 1-based count of observations including the new one, so `k = 1`
/// restarts both means at the new values.
pub fn update_running_means(
    state: &GreenhouseState,
    new_t_air: f64,
    new_alpha: f64,
    step_index_in_day: usize,
) -> Result<(f64, f64)> {
    if step_index_in_day == 0 || step_index_in_day > STEPS_PER_DAY {
        return Err(Error::InvalidArgument(format!(
            "step index {step_index_in_day} outside 1..=288"
        )));
    }
    let k = step_index_in_day;
    Ok((
        running_mean(state.t_bar, new_t_air, k),
        running_mean(state.alpha_bar, new_alpha, k),
    ))
}
