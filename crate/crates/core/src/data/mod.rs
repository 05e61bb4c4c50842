//! Tracks, scene windows, NGSIM ingestion and synthetic traffic.

pub mod io;
pub mod ngsim;
pub mod scenes;
pub mod synth;
pub mod types;

use thiserror::Error;

pub use io::{read_scenes, SCENE_FORMAT_VERSION, read_scenes_from, write_scenes, write_scenes_to};
pub use ngsim::{feet_to_meters, meters_to_feet, parse_ngsim_csv, parse_ngsim_reader, ColumnMap, Units};
pub use scenes::{build_scenes, pairwise_distances, repulsive_forces, select_split, split_by_host, SceneBuildResult, SceneConfig, Split};
pub use synth::{synth_scenes, synth_tracks, BehaviorConfig, SynthMode};
pub use types::{AgentFrame, AgentKind, AgentTrack, SceneWindow, FRAME_DT};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    Csv { row: usize, msg: String },
    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    Parse { row: usize, column: String, value: String },
    #[error("vehicle {id}: {msg}")]
    Vehicle { id: i64, msg: String },
    #[error("scene {0}")]
    Scene(String),
    #[error("scene file line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
