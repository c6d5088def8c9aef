//! One simulated day of control and its on-disk format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::state::{Action, GreenhouseState, STEPS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: GreenhouseState,
    pub action: Action,
    pub next_state: GreenhouseState,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.transitions.len() == STEPS_PER_DAY
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.transitions.iter().map(|t| t.action)
    }
}

/// A scored episode as stored in expert pools and evaluation dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEpisode {
    pub episode: Episode,
    pub score: RewardBreakdown,
}

pub const EPISODE_FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeFile {
    version: u32,
    episodes: Vec<ScoredEpisode>,
}

/// Writes episodes as versioned JSON.
pub fn save_episodes(path: &Path, episodes: &[ScoredEpisode]) -> Result<()> {
    let file = EpisodeFile {
        version: EPISODE_FILE_VERSION,
        episodes: episodes.to_vec(),
    };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_episodes(path: &Path) -> Result<Vec<ScoredEpisode>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: EpisodeFile = serde_json::from_str(&text)?;
    if file.version != EPISODE_FILE_VERSION {
        return Err(Error::Serde(format!(
            "unsupported episode file version {}",
            file.version
        )));
    }
    Ok(file.episodes)
}
