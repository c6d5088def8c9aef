//! Greenhouse ventilation control: system identification, receding-horizon
//! MPC, PPO with expert experience injection, and evaluation tooling, all
//! runnable against a lumped thermal simulator.

pub mod config;
pub mod coupling;
pub mod data;
pub mod env;
pub mod episode;
pub mod mpc;
pub mod error;
pub mod eval;
pub mod nn;
pub mod ppo;
pub mod reference;
pub mod reward;
pub mod state;
pub mod util;

pub use error::{Error, Result};
