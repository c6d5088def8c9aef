use chrono::Duration;
use rand::Rng;

use super::RawRecord;
use crate::reference::{ClimateProfile, DayWeather, ReferenceModel};
use crate::state::{Action, Temps, STEPS_PER_DAY, STEPS_PER_HOUR};
use crate::util::{rng_from, Rng as ChaRng};

/// Days simulated before the first recorded day so storage nodes settle.
const WARMUP_DAYS: i64 = 2;

/// Ventilation schedule used to label synthetic history: a daytime
/// thermostat with random excursions held for a while, so that logged data
/// covers the whole action range.
#[derive(Debug, Clone)]
pub struct LoggingPolicy {
    excursion_prob: f64,
    level: Action,
    hold: usize,
    rng: ChaRng,
}

impl LoggingPolicy {
    pub fn new(seed: u64) -> Self {
        LoggingPolicy {
            excursion_prob: 0.12,
            level: Action::CLOSED,
            hold: 0,
            rng: rng_from(seed, &[0x1099]),
        }
    }

    /// The same thermostat without random excursions.
    pub fn thermostat() -> Self {
        LoggingPolicy {
            excursion_prob: 0.0,
            ..Self::new(0)
        }
    }

    pub fn act(&mut self, t_air: f64, step_of_day: usize) -> Action {
        if self.hold > 0 {
            self.hold -= 1;
            return self.level;
        }
        let hour = step_of_day / STEPS_PER_HOUR;
        if self.excursion_prob > 0.0 && self.rng.random_bool(self.excursion_prob) {
            self.level = Action::from_index(self.rng.random_range(0..11));
            self.hold = self.rng.random_range(3..24);
        } else {
            let target = if (8..=17).contains(&hour) {
                (t_air - 25.0) * 12.0
            } else {
                (t_air - 28.0) * 10.0
            };
            self.level = Action::nearest(target);
            self.hold = 2;
        }
        self.level
    }
}

/// Simulates `n_days` of 5-minute records under the reference model with the
/// logging policy. Output is a deterministic function of the arguments.
pub fn generate_synthetic(profile: &ClimateProfile, n_days: usize, seed: u64) -> Vec<RawRecord> {
    let model = ReferenceModel::new(profile.clone());
    let mut policy = LoggingPolicy::new(seed);
    let mut temps: Temps = [12.0, 20.0, 16.0, 16.0];
    let mut out = Vec::with_capacity(n_days * STEPS_PER_DAY);
    for day in -WARMUP_DAYS..n_days as i64 {
        let date = profile.start_date + Duration::days(day);
        let weather = DayWeather::draw(profile, date, seed);
        let midnight = date.and_hms_opt(0, 0, 0).unwrap();
        for step in 0..STEPS_PER_DAY {
            let action = policy.act(temps[0], step);
            if day >= 0 {
                out.push(RawRecord::complete(
                    midnight + Duration::minutes(5 * step as i64),
                    [temps[0], temps[2], temps[1], temps[3], action.opening()],
                ));
            }
            temps = model.step(temps, action.opening(), model.forcing(&weather, step));
        }
    }
    out
}
