//! Newline-delimited JSON scene files, one `SceneWindow` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::types::SceneWindow;
use super::DataError;

/// Version of the scene-file record layout.
pub const SCENE_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_scenes_to<W: Write>(mut w: W, scenes: &[SceneWindow]) -> std::io::Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_scenes(path: &Path, scenes: &[SceneWindow]) -> Result<(), DataError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_scenes_to(BufWriter::new(f), scenes).map_err(io_err(path))
}

/// Parses scenes, skipping blank lines. Line numbers in errors are 1-based.
pub fn read_scenes_from<R: Read>(r: R) -> Result<Vec<SceneWindow>, DataError> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| DataError::Json {
            line: k + 1,
            source: serde_json::Error::io(e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: SceneWindow = serde_json::from_str(&line).map_err(|e| DataError::Json { line: k + 1, source: e })?;
        out.push(scene);
    }
    Ok(out)
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneWindow>, DataError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_scenes_from(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_scenes, BehaviorConfig};

    #[test]
    fn round_trip_is_exact() {
        let scenes = synth_scenes(3, 2, &BehaviorConfig::default());
        let mut buf = Vec::new();
        write_scenes_to(&mut buf, &scenes).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        let back = read_scenes_from(buf.as_slice()).unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn bad_line_reports_number() {
        let text = "\n{not json}\n";
        match read_scenes_from(text.as_bytes()) {
            Err(DataError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
