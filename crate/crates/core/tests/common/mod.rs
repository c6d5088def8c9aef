#![allow(dead_code)]

use std::sync::OnceLock;

use chrono::NaiveDate;
use greenhouse_core::data::{generate_synthetic, preprocess, split_days, DayDataset, PreprocessConfig};
use greenhouse_core::env::{fit_polynomial, PolynomialModel, SimEnv};
use greenhouse_core::reference::{ClimateProfile, ReferenceModel};
use greenhouse_core::reward::RewardConfig;
use greenhouse_core::state::GreenhouseState;
use greenhouse_core::util::rng_from;
use rand::Rng;

pub fn sample_state(seed: u64) -> GreenhouseState {
    let mut rng = rng_from(seed, &[7]);
    let date = NaiveDate::from_ymd_opt(2023, 12, 1).unwrap() + chrono::Duration::days(rng.random_range(0..60));
    let mut s = GreenhouseState::day_start(
        [
            rng.random_range(5.0..35.0),
            rng.random_range(10.0..25.0),
            rng.random_range(10.0..30.0),
            rng.random_range(8.0..25.0),
        ],
        rng.random_range(0..11) as f64 * 10.0,
        date,
    );
    s.step_of_day = rng.random_range(0..288);
    s.t_bar = rng.random_range(5.0..30.0);
    s.alpha_bar = rng.random_range(0.0..100.0);
    s
}

pub fn reference_env() -> SimEnv {
    SimEnv::reference(ReferenceModel::new(ClimateProfile::base()), RewardConfig::default())
}

/// Train/test split of 40 preprocessed synthetic days.
pub fn base_split() -> &'static (DayDataset, DayDataset) {
    static SPLIT: OnceLock<(DayDataset, DayDataset)> = OnceLock::new();
    SPLIT.get_or_init(|| {
        let records = generate_synthetic(&ClimateProfile::base(), 40, 48);
        let pre = preprocess(&records, &PreprocessConfig::default()).unwrap();
        split_days(&pre.days, 48, 0.8).unwrap()
    })
}

pub fn fitted_poly() -> &'static PolynomialModel {
    static MODEL: OnceLock<PolynomialModel> = OnceLock::new();
    MODEL.get_or_init(|| fit_polynomial(&base_split().0, 1e-6).unwrap().0)
}

/// The fitted model with every coefficient jittered.
pub fn perturbed_poly(seed: u64, scale: f64) -> PolynomialModel {
    let mut rng = rng_from(seed, &[0x9e]);
    let mut m = fitted_poly().clone();
    for row in &mut m.coefficients {
        for c in row.iter_mut() {
            *c += rng.random_range(-scale..scale);
        }
    }
    m
}
