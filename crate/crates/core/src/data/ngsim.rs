//! NGSIM-format CSV ingestion.
//!
//! NGSIM provides scalar speed and acceleration only. Both are projected
//! onto the heading estimated from central differences of position.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{AgentFrame, AgentKind, AgentTrack, FRAME_DT};
use super::DataError;

pub const FEET_TO_METERS: f64 = 0.3048;

pub fn feet_to_meters(ft: f64) -> f64 {
    ft * FEET_TO_METERS
}

pub fn meters_to_feet(m: f64) -> f64 {
    m / FEET_TO_METERS
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Feet,
    Meters,
}

impl std::str::FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "feet" | "ft" => Ok(Units::Feet),
            "meters" | "m" => Ok(Units::Meters),
            other => Err(format!("unknown unit {other:?} (expected feet or meters)")),
        }
    }
}

/// Header names of the required columns plus the unit system of the
/// length-valued columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub vehicle_id: String,
    pub frame_id: String,
    pub local_x: String,
    pub local_y: String,
    pub speed: String,
    pub acceleration: String,
    pub length: String,
    pub width: String,
    pub lane: String,
    pub units: Units,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            vehicle_id: "Vehicle_ID".into(),
            frame_id: "Frame_ID".into(),
            local_x: "Local_X".into(),
            local_y: "Local_Y".into(),
            speed: "v_Vel".into(),
            acceleration: "v_Acc".into(),
            length: "v_Length".into(),
            width: "v_Width".into(),
            lane: "Lane_ID".into(),
            units: Units::Feet,
        }
    }
}

struct RawRow {
    row: usize,
    frame: i64,
    x: f64,
    y: f64,
    speed: f64,
    acc: f64,
    length: f64,
    width: f64,
    lane: i32,
}

/// Reads an NGSIM-style CSV into one track per vehicle id, frames sorted,
/// SI units.
pub fn parse_ngsim_csv(path: &Path, columns: &ColumnMap) -> Result<Vec<AgentTrack>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_ngsim_reader(file, columns)
}

pub fn parse_ngsim_reader<R: std::io::Read>(reader: R, columns: &ColumnMap) -> Result<Vec<AgentTrack>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv { row: 0, msg: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let idx = [
        col(&columns.vehicle_id)?,
        col(&columns.frame_id)?,
        col(&columns.local_x)?,
        col(&columns.local_y)?,
        col(&columns.speed)?,
        col(&columns.acceleration)?,
        col(&columns.length)?,
        col(&columns.width)?,
        col(&columns.lane)?,
    ];
    let names = [
        &columns.vehicle_id,
        &columns.frame_id,
        &columns.local_x,
        &columns.local_y,
        &columns.speed,
        &columns.acceleration,
        &columns.length,
        &columns.width,
        &columns.lane,
    ];
    let scale = match columns.units {
        Units::Feet => FEET_TO_METERS,
        Units::Meters => 1.0,
    };

    let mut by_vehicle: BTreeMap<i64, Vec<RawRow>> = BTreeMap::new();
    for (r, rec) in rdr.records().enumerate() {
        // header is line 1
        let row = r + 2;
        let rec = rec.map_err(|e| DataError::Csv { row, msg: e.to_string() })?;
        let field = |k: usize| -> Result<f64, DataError> {
            let raw = rec.get(idx[k]).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    row,
                    column: names[k].clone(),
                    value: raw.to_string(),
                })
        };
        let vehicle = field(0)? as i64;
        let raw = RawRow {
            row,
            frame: field(1)? as i64,
            x: field(2)? * scale,
            y: field(3)? * scale,
            speed: field(4)? * scale,
            acc: field(5)? * scale,
            length: field(6)? * scale,
            width: field(7)? * scale,
            lane: field(8)? as i32,
        };
        by_vehicle.entry(vehicle).or_default().push(raw);
    }

    by_vehicle
        .into_iter()
        .map(|(id, rows)| build_track(id, rows))
        .collect()
}

fn build_track(id: i64, mut rows: Vec<RawRow>) -> Result<AgentTrack, DataError> {
    rows.sort_by_key(|r| r.frame);
    for w in rows.windows(2) {
        if w[1].frame == w[0].frame {
            return Err(DataError::Vehicle {
                id,
                msg: format!("duplicate frame {} (row {})", w[1].frame, w[1].row),
            });
        }
        if w[1].frame != w[0].frame + 1 {
            return Err(DataError::Vehicle {
                id,
                msg: format!("frame gap {} -> {} (row {})", w[0].frame, w[1].frame, w[1].row),
            });
        }
    }
    let headings = estimate_headings(&rows.iter().map(|r| [r.x, r.y]).collect::<Vec<_>>());
    let yaw = yaw_rates(&headings, FRAME_DT);
    let frames = rows
        .iter()
        .zip(headings.iter().zip(&yaw))
        .map(|(r, (&h, &w))| {
            let (s, c) = h.sin_cos();
            AgentFrame {
                frame: r.frame,
                t: r.frame as f64 * FRAME_DT,
                pos: [r.x, r.y],
                vel: [r.speed * c, r.speed * s],
                acc: [r.acc * c, r.acc * s],
                heading: h,
                yaw_rate: w,
                width: r.width,
                length: r.length,
                lane: r.lane,
            }
        })
        .collect();
    let track = AgentTrack {
        agent_id: id,
        kind: AgentKind::Vehicle,
        frames,
    };
    track.validate(FRAME_DT)?;
    Ok(track)
}

/// Heading of travel from central differences of position (one-sided at
/// the ends). Stationary stretches inherit the nearest valid heading;
/// a track that never moves faces +y, the NGSIM direction of travel.
pub fn estimate_headings(pos: &[[f64; 2]]) -> Vec<f64> {
    let n = pos.len();
    let raw: Vec<Option<f64>> = (0..n)
        .map(|k| {
            if n < 2 {
                return None;
            }
            let (a, b) = (pos[k.saturating_sub(1)], pos[(k + 1).min(n - 1)]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            (dx.hypot(dy) > 1e-6).then(|| dy.atan2(dx))
        })
        .collect();
    let mut out = vec![None; n];
    let mut last = None;
    for k in 0..n {
        last = raw[k].or(last);
        out[k] = last;
    }
    let mut next = None;
    for k in (0..n).rev() {
        next = raw[k].or(next);
        if out[k].is_none() {
            out[k] = next;
        }
    }
    out.into_iter().map(|h| h.unwrap_or(FRAC_PI_2)).collect()
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Yaw rate from central differences of heading, wrapped to (−π, π].
pub fn yaw_rates(headings: &[f64], dt: f64) -> Vec<f64> {
    let n = headings.len();
    (0..n)
        .map(|k| {
            if n < 2 {
                return 0.0;
            }
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            wrap_angle(headings[b] - headings[a]) / ((b - a) as f64 * dt)
        })
        .collect()
}
