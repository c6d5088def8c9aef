//! Sensor data ingestion, cleaning, normalization and day-wise splitting.

mod clean;
mod normalize;
mod split;
mod synthetic;

use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{GreenhouseState, STEPS_PER_DAY};

pub use clean::{
    kalman_interpolate, median_filter, threshold_filter, KalmanConfig, MedianConfig, ThresholdSpec,
};
pub use normalize::{denormalize, minmax_normalize, ChannelRange, NormalizationSpec};
pub use split::{split_days, Split};
pub use synthetic::{generate_synthetic, LoggingPolicy};

/// Channels in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    TAir,
    TWater,
    TSoil,
    TWall,
    AlphaVent,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::TAir,
        Channel::TWater,
        Channel::TSoil,
        Channel::TWall,
        Channel::AlphaVent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::TAir => "t_air",
            Channel::TWater => "t_water",
            Channel::TSoil => "t_soil",
            Channel::TWall => "t_wall",
            Channel::AlphaVent => "alpha_vent",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }
}

pub const CSV_HEADER: [&str; 6] = ["timestamp", "t_air", "t_water", "t_soil", "t_wall", "alpha_vent"];
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One 5-minute sensor sample. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    pub values: [Option<f64>; 5],
}

impl RawRecord {
    pub fn complete(timestamp: NaiveDateTime, values: [f64; 5]) -> Self {
        RawRecord {
            timestamp,
            values: values.map(Some),
        }
    }

    pub fn get(&self, channel: Channel) -> Option<f64> {
        self.values[channel.index()]
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .ok()
}

fn on_grid(ts: &NaiveDateTime) -> bool {
    ts.minute() % 5 == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

/// Reads a sensor CSV. Empty fields become missing values; timestamps must
/// advance by exactly five minutes.
pub fn load_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut records: Vec<RawRecord> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
        }
        let timestamp = parse_timestamp(&row[0]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unparseable timestamp `{}`", &row[0]),
        })?;
        if !on_grid(&timestamp) {
            return Err(Error::Parse {
                line,
                message: format!("timestamp {timestamp} is off the 5-minute grid"),
            });
        }
        if let Some(prev) = records.last() {
            let gap = timestamp - prev.timestamp;
            if gap != Duration::minutes(5) {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "timestamp {timestamp} is {} min after the previous row (expected 5)",
                        gap.num_minutes()
                    ),
                });
            }
        }
        let mut values = [None; 5];
        for (c, slot) in values.iter_mut().enumerate() {
            let field = &row[c + 1];
            if field.is_empty() || field.eq_ignore_ascii_case("nan") || field.eq_ignore_ascii_case("na") {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("unparseable {} value `{field}`", CSV_HEADER[c + 1]),
            })?;
            *slot = Some(v);
        }
        records.push(RawRecord { timestamp, values });
    }
    Ok(records)
}

pub fn write_csv(path: &Path, records: &[RawRecord]) -> Result<()> {
    let text = to_csv_string(records);
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn to_csv_string(records: &[RawRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&r.timestamp.format(TIMESTAMP_FORMAT).to_string());
        for v in r.values {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// A complete cleaned day: 288 rows in CSV channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Day {
    pub date: NaiveDate,
    pub rows: Vec<[f64; 5]>,
}

impl Day {
    pub fn column(&self, channel: Channel) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[channel.index()])
    }

    /// Greenhouse state at row `i`. The vent feature is the opening in force
    /// before row `i` was decided (the previous row's opening, or row 0's).
    pub fn states(&self) -> Vec<GreenhouseState> {
        let first = &self.rows[0];
        let mut out = Vec::with_capacity(self.rows.len());
        let mut state = GreenhouseState::day_start(temps_of(first), first[4], self.date);
        out.push(state);
        for i in 1..self.rows.len() {
            state = state.advance(temps_of(&self.rows[i]), self.rows[i - 1][4]);
            out.push(state);
        }
        out
    }

    /// One-step transitions `(state_t, opening_t) -> temps_{t+1}` within the day.
    pub fn transitions(&self) -> Vec<(GreenhouseState, f64, [f64; 4])> {
        let states = self.states();
        (0..self.rows.len() - 1)
            .map(|i| (states[i], self.rows[i][4], temps_of(&self.rows[i + 1])))
            .collect()
    }
}

/// Temperatures of a CSV row in model order (air, soil, water, wall).
pub fn temps_of(row: &[f64; 5]) -> [f64; 4] {
    [row[0], row[2], row[1], row[3]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayDataset {
    pub days: Vec<Day>,
    pub split: Split,
}

impl DayDataset {
    pub fn transitions(&self) -> Vec<(GreenhouseState, f64, [f64; 4])> {
        self.days.iter().flat_map(Day::transitions).collect()
    }

    pub fn initial_states(&self) -> Vec<GreenhouseState> {
        self.days.iter().map(|d| d.states()[0]).collect()
    }
}

/// Groups complete records into whole days, dropping partial days.
pub fn group_days(records: &[RawRecord]) -> Result<Vec<Day>> {
    let mut days: Vec<Day> = Vec::new();
    let mut current: Option<Day> = None;
    for (i, r) in records.iter().enumerate() {
        let date = r.timestamp.date();
        let mut row = [0.0; 5];
        for (c, v) in r.values.iter().enumerate() {
            row[c] = v.ok_or_else(|| Error::InvalidArgument(format!(
                "record {i} ({}) still has a missing {} value",
                r.timestamp,
                CSV_HEADER[c + 1]
            )))?;
        }
        match current.as_mut() {
            Some(day) if day.date == date => day.rows.push(row),
            _ => {
                if let Some(day) = current.take() {
                    if day.rows.len() == STEPS_PER_DAY {
                        days.push(day);
                    }
                }
                let midnight = r.timestamp.hour() == 0 && r.timestamp.minute() == 0;
                current = midnight.then(|| Day {
                    date,
                    rows: vec![row],
                });
            }
        }
    }
    if let Some(day) = current {
        if day.rows.len() == STEPS_PER_DAY {
            days.push(day);
        }
    }
    Ok(days)
}

pub fn days_to_records(days: &[Day]) -> Vec<RawRecord> {
    days.iter()
        .flat_map(|d| {
            let start = d.date.and_hms_opt(0, 0, 0).unwrap();
            d.rows
                .iter()
                .enumerate()
                .map(move |(i, row)| RawRecord::complete(start + Duration::minutes(5 * i as i64), *row))
        })
        .collect()
}

/// Options for the full cleaning pipeline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub thresholds: ThresholdSpec,
    pub median: MedianConfig,
    pub kalman: KalmanConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub records: Vec<RawRecord>,
    pub days: Vec<Day>,
    pub out_of_range: usize,
    pub interpolated: usize,
    pub spikes: usize,
}

/// Threshold filter, Kalman gap filling and median spike removal, then
/// grouping into whole days.
pub fn preprocess(records: &[RawRecord], config: &PreprocessConfig) -> Result<Preprocessed> {
    let (mut records, out_of_range) = threshold_filter(records, &config.thresholds);
    let mut interpolated = 0;
    let mut spikes = 0;
    for channel in Channel::ALL {
        let series: Vec<Option<f64>> = records.iter().map(|r| r.get(channel)).collect();
        interpolated += series.iter().filter(|v| v.is_none()).count();
        let filled = if records.is_empty() {
            Vec::new()
        } else {
            kalman_interpolate(&series, &config.kalman)?
        };
        let smoothed = if channel == Channel::AlphaVent || filled.len() < config.median.window {
            filled
        } else {
            let out = median_filter(&filled, &config.median)?;
            spikes += out.iter().zip(&filled).filter(|(a, b)| a != b).count();
            out
        };
        let (lo, hi) = config.thresholds.bounds(channel);
        for (r, v) in records.iter_mut().zip(smoothed) {
            r.values[channel.index()] = Some(v.clamp(lo, hi));
        }
    }
    let days = group_days(&records)?;
    Ok(Preprocessed {
        records,
        days,
        out_of_range,
        interpolated,
        spikes,
    })
}
