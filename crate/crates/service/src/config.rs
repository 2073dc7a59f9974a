use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use cloudheat_core::DEFAULT_INSTANCE_TAG;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_INTERVAL_MS: u64 = 60_000;

/// Who advances time: the wall clock, or explicit tick requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    #[default]
    Wall,
    Manual,
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wall" => Ok(ClockMode::Wall),
            "manual" => Ok(ClockMode::Manual),
            other => Err(format!("unknown clock mode `{other}` (expected wall or manual)")),
        }
    }
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockMode::Wall => "wall",
            ClockMode::Manual => "manual",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen_port: u16,
    pub data_dir: PathBuf,
    pub base_interval_ms: u64,
    pub instance_tag_key: String,
    pub clock_mode: ClockMode,
    /// Directory served at `/`; `None` disables static hosting.
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            listen_port: DEFAULT_PORT,
            data_dir: data_dir.into(),
            base_interval_ms: DEFAULT_INTERVAL_MS,
            instance_tag_key: DEFAULT_INSTANCE_TAG.to_string(),
            clock_mode: ClockMode::Wall,
            ui_dir: None,
        }
    }

    pub fn manual(mut self) -> Self {
        self.clock_mode = ClockMode::Manual;
        self
    }
}
