//! Lumped-parameter thermal network standing in for a real solar greenhouse.
//!
//! Four nodes (air, soil, water wall, north wall) exchange heat with each
//! other and with the outdoors. Sun enters during the day, the vent couples
//! indoor air to outdoor air in proportion to the opening. Integration is
//! explicit Euler at the 5-minute control step.

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::state::{Temps, STEPS_PER_DAY, STEPS_PER_HOUR};
use crate::util::rng_from;

/// Step length in hours.
pub const DT_HOURS: f64 = 1.0 / STEPS_PER_HOUR as f64;

/// Heat exchange rates, all per hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    /// Solar heating of indoor air at full sun (°C/h).
    pub k_solar: f64,
    pub k_wall: f64,
    pub k_soil: f64,
    pub k_water: f64,
    /// Air exchange through a fully open vent.
    pub k_vent: f64,
    /// Envelope loss of indoor air with the vent closed.
    pub k_cover: f64,
    pub wall_from_air: f64,
    pub wall_to_out: f64,
    pub wall_solar: f64,
    pub soil_from_air: f64,
    pub soil_to_deep: f64,
    pub soil_solar: f64,
    pub deep_soil_temp: f64,
    pub water_from_air: f64,
    pub water_solar: f64,
    pub water_loss: f64,
    /// Hour of sunrise and sunset (fractional hours).
    pub sunrise: f64,
    pub sunset: f64,
    /// Hour of the outdoor temperature maximum.
    pub outdoor_peak_hour: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams {
            k_solar: 42.0,
            k_wall: 0.6,
            k_soil: 0.5,
            k_water: 0.4,
            k_vent: 1.6,
            k_cover: 0.27,
            wall_from_air: 0.09,
            wall_to_out: 0.015,
            wall_solar: 0.9,
            soil_from_air: 0.07,
            soil_to_deep: 0.02,
            soil_solar: 0.6,
            deep_soil_temp: 16.0,
            water_from_air: 0.12,
            water_solar: 2.6,
            water_loss: 0.015,
            sunrise: 7.5,
            sunset: 17.0,
            outdoor_peak_hour: 14.0,
        }
    }
}

/// Outdoor climate of a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClimateProfile {
    pub name: String,
    /// Mean outdoor temperature (°C).
    pub outdoor_mean: f64,
    /// Half the day-night outdoor swing (°C).
    pub amplitude: f64,
    /// Multiplier on solar heating.
    pub solar_gain: f64,
    /// Scales day-to-day weather variation and within-day disturbances.
    pub noise_scale: f64,
    pub start_date: NaiveDate,
}

impl ClimateProfile {
    /// Cold inland site used for training data.
    pub fn base() -> Self {
        ClimateProfile {
            name: "base".into(),
            outdoor_mean: -6.0,
            amplitude: 6.0,
            solar_gain: 1.0,
            noise_scale: 1.0,
            start_date: NaiveDate::from_ymd_opt(2023, 12, 1).unwrap(),
        }
    }

    /// Milder, steadier site.
    pub fn beijing() -> Self {
        ClimateProfile {
            name: "beijing".into(),
            outdoor_mean: -4.0,
            amplitude: 5.5,
            solar_gain: 0.92,
            noise_scale: 0.6,
            start_date: NaiveDate::from_ymd_opt(2023, 12, 1).unwrap(),
        }
    }

    /// Humid coastal site with frequent cold waves and weaker sun.
    pub fn shandong() -> Self {
        ClimateProfile {
            name: "shandong".into(),
            outdoor_mean: -4.5,
            amplitude: 4.5,
            solar_gain: 0.8,
            noise_scale: 1.5,
            start_date: NaiveDate::from_ymd_opt(2023, 12, 10).unwrap(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "base" => Some(Self::base()),
            "beijing" => Some(Self::beijing()),
            "shandong" => Some(Self::shandong()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.amplitude >= 0.0) {
            errs.push("profile.amplitude must be >= 0".into());
        }
        if !(self.noise_scale >= 0.0) {
            errs.push("profile.noise_scale must be >= 0".into());
        }
        if !(self.solar_gain >= 0.0) {
            errs.push("profile.solar_gain must be >= 0".into());
        }
        errs
    }
}

/// Weather of one day: fixed offsets plus a per-step outdoor disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayWeather {
    pub date: NaiveDate,
    pub mean_offset: f64,
    /// Fraction of clear-sky irradiance reaching the cover.
    pub clearness: f64,
    pub disturbance: Vec<f64>,
}

impl DayWeather {
    /// Weather for `date`, drawn from a stream keyed on `seed` and the date.
    pub fn draw(profile: &ClimateProfile, date: NaiveDate, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[0x57ea_7e4, date.num_days_from_ce() as u64]);
        let s = profile.noise_scale;
        let mut disturbance = vec![0.0; STEPS_PER_DAY];
        let (mean_offset, clearness) = if s > 0.0 {
            let offset = Normal::new(0.0, 2.5 * s).unwrap().sample(&mut rng);
            let cloud: f64 = rng.random_range(0.0..1.0);
            let clearness = (1.0 - 0.45 * s * cloud * cloud).clamp(0.2, 1.0);
            let eps = Normal::new(0.0, 0.35 * s).unwrap();
            let mut ar = 0.0;
            for d in disturbance.iter_mut() {
                ar = 0.97 * ar + eps.sample(&mut rng);
                *d = ar;
            }
            (offset, clearness)
        } else {
            (0.0, 1.0)
        };
        DayWeather {
            date,
            mean_offset,
            clearness,
            disturbance,
        }
    }
}

/// Outdoor forcing at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forcing {
    pub t_out: f64,
    /// Relative solar input in `[0, 1]`.
    pub solar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub params: ThermalParams,
    pub profile: ClimateProfile,
}

impl ReferenceModel {
    pub fn new(profile: ClimateProfile) -> Self {
        ReferenceModel {
            params: ThermalParams::default(),
            profile,
        }
    }

    pub fn forcing(&self, weather: &DayWeather, step_of_day: usize) -> Forcing {
        let p = &self.params;
        let hour = step_of_day as f64 / STEPS_PER_HOUR as f64;
        let phase = 2.0 * std::f64::consts::PI * (hour - p.outdoor_peak_hour) / 24.0;
        let t_out = self.profile.outdoor_mean
            + weather.mean_offset
            + self.profile.amplitude * phase.cos()
            + weather.disturbance[step_of_day.min(STEPS_PER_DAY - 1)];
        let solar = if hour > p.sunrise && hour < p.sunset {
            let x = std::f64::consts::PI * (hour - p.sunrise) / (p.sunset - p.sunrise);
            x.sin() * weather.clearness
        } else {
            0.0
        };
        Forcing { t_out, solar }
    }

    /// Temperatures after one step with `opening` percent vent applied.
    pub fn step(&self, temps: Temps, opening: f64, forcing: Forcing) -> Temps {
        let p = &self.params;
        let [ta, ts, tr, tw] = temps;
        let sun = forcing.solar * self.profile.solar_gain;
        let to = forcing.t_out;
        let vent = p.k_vent * (opening / 100.0).clamp(0.0, 1.0);
        let d_air = p.k_solar * sun
            + p.k_wall * (tw - ta)
            + p.k_soil * (ts - ta)
            + p.k_water * (tr - ta)
            - (vent + p.k_cover) * (ta - to);
        let d_wall = p.wall_from_air * (ta - tw) + p.wall_to_out * (to - tw) + p.wall_solar * sun;
        let d_soil =
            p.soil_from_air * (ta - ts) + p.soil_to_deep * (p.deep_soil_temp - ts) + p.soil_solar * sun;
        let d_water = p.water_from_air * (ta - tr) + p.water_loss * (to - tr) + p.water_solar * sun;
        [
            ta + DT_HOURS * d_air,
            ts + DT_HOURS * d_soil,
            tr + DT_HOURS * d_water,
            tw + DT_HOURS * d_wall,
        ]
    }
}
