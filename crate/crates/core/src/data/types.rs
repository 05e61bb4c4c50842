use serde::{Deserialize, Serialize};

use super::scenes::{pairwise_distances, repulsive_forces};
use super::DataError;

/// Sampling period of all tracks, seconds (10 Hz).
pub const FRAME_DT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    #[default]
    Vehicle,
    Pedestrian,
}

/// Kinematic record of one agent at one frame. Lengths in meters,
/// angles in radians, global frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub frame: i64,
    pub t: f64,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
    pub heading: f64,
    pub yaw_rate: f64,
    pub width: f64,
    pub length: f64,
    pub lane: i32,
}

impl AgentFrame {
    pub fn speed(&self) -> f64 {
        self.vel[0].hypot(self.vel[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: i64,
    #[serde(default)]
    pub kind: AgentKind,
    pub frames: Vec<AgentFrame>,
}

impl AgentTrack {
    pub fn first_frame(&self) -> Option<i64> {
        self.frames.first().map(|f| f.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.frames.last().map(|f| f.frame)
    }

    /// Frame record for absolute frame number `frame`, if present.
    pub fn at(&self, frame: i64) -> Option<&AgentFrame> {
        let first = self.first_frame()?;
        let idx = usize::try_from(frame - first).ok()?;
        self.frames.get(idx).filter(|f| f.frame == frame)
    }

    /// Checks constant `dt` spacing, contiguous frame numbers and positive
    /// body dimensions.
    pub fn validate(&self, dt: f64) -> Result<(), DataError> {
        let bad = |msg: String| DataError::Vehicle {
            id: self.agent_id,
            msg,
        };
        for w in self.frames.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(bad(format!("frames {} and {} are not consecutive", w[0].frame, w[1].frame)));
            }
            if ((w[1].t - w[0].t) - dt).abs() > 1e-6 {
                return Err(bad(format!("timestamp spacing {} at frame {}", w[1].t - w[0].t, w[1].frame)));
            }
        }
        if let Some(f) = self.frames.iter().find(|f| !(f.width > 0.0 && f.length > 0.0)) {
            return Err(bad(format!("non-positive size at frame {}", f.frame)));
        }
        Ok(())
    }

    pub(crate) fn slice(&self, from: usize, len: usize) -> AgentTrack {
        AgentTrack {
            agent_id: self.agent_id,
            kind: self.kind,
            frames: self.frames[from..from + len].to_vec(),
        }
    }
}

/// A host vehicle plus its nearest neighbours over one aligned window.
///
/// Agent slot 0 is the host; the remaining slots are ordered by mean
/// distance to the host over the past segment. Pairwise matrices cover
/// the past frames only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    pub id: String,
    pub host_id: i64,
    pub start_frame: i64,
    pub agent_ids: Vec<i64>,
    pub past: Vec<AgentTrack>,
    pub future: Vec<AgentTrack>,
    pub pairwise_distances: Vec<Vec<Vec<f64>>>,
    pub repulsive_forces: Vec<Vec<Vec<f64>>>,
}

impl SceneWindow {
    /// Assembles a scene from full-window tracks (host first), splitting
    /// them into `past_len` past frames and the rest as future.
    pub fn from_agents(
        id: String,
        start_frame: i64,
        agents: Vec<AgentTrack>,
        past_len: usize,
        dt: f64,
    ) -> Result<Self, DataError> {
        let total = agents
            .first()
            .map(|a| a.frames.len())
            .ok_or_else(|| DataError::Scene(format!("{id}: no agents")))?;
        if agents.iter().any(|a| a.frames.len() != total) || past_len == 0 || past_len >= total {
            return Err(DataError::Scene(format!("{id}: agents must share a window longer than the past segment")));
        }
        let mut dists = Vec::with_capacity(past_len);
        let mut forces = Vec::with_capacity(past_len);
        for k in 0..past_len {
            let frames: Vec<&AgentFrame> = agents.iter().map(|a| &a.frames[k]).collect();
            let pos: Vec<[f64; 2]> = frames.iter().map(|f| f.pos).collect();
            let d = pairwise_distances(&pos);
            let speeds: Vec<f64> = frames.iter().map(|f| f.speed()).collect();
            forces.push(repulsive_forces(&speeds, &d, dt));
            dists.push(d);
        }
        Ok(Self {
            id,
            host_id: agents[0].agent_id,
            start_frame,
            agent_ids: agents.iter().map(|a| a.agent_id).collect(),
            past: agents.iter().map(|a| a.slice(0, past_len)).collect(),
            future: agents.iter().map(|a| a.slice(past_len, total - past_len)).collect(),
            pairwise_distances: dists,
            repulsive_forces: forces,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn past_len(&self) -> usize {
        self.past.first().map_or(0, |t| t.frames.len())
    }

    pub fn future_len(&self) -> usize {
        self.future.first().map_or(0, |t| t.frames.len())
    }

    /// Frame `k` of agent `i`, counting from the first past frame.
    pub fn frame(&self, agent: usize, k: usize) -> &AgentFrame {
        let p = self.past_len();
        if k < p {
            &self.past[agent].frames[k]
        } else {
            &self.future[agent].frames[k - p]
        }
    }

    pub fn total_len(&self) -> usize {
        self.past_len() + self.future_len()
    }

    /// Structural checks: slot counts, segment lengths, matrix shapes and
    /// the symmetric zero-diagonal distance invariant.
    pub fn validate(&self, past_len: usize, future_len: usize) -> Result<(), DataError> {
        let n = self.num_agents();
        let bad = |msg: &str| Err(DataError::Scene(format!("{}: {msg}", self.id)));
        if self.past.len() != n || self.future.len() != n {
            return bad("track count differs from agent count");
        }
        if self.past.iter().any(|t| t.frames.len() != past_len)
            || self.future.iter().any(|t| t.frames.len() != future_len)
        {
            return bad("segment lengths differ from configuration");
        }
        if self.pairwise_distances.len() != past_len || self.repulsive_forces.len() != past_len {
            return bad("pairwise matrices do not cover the past segment");
        }
        for (d, e) in self.pairwise_distances.iter().zip(&self.repulsive_forces) {
            if d.len() != n || e.len() != n || d.iter().chain(e).any(|r| r.len() != n) {
                return bad("pairwise matrix is not N×N");
            }
            for i in 0..n {
                if d[i][i] != 0.0 {
                    return bad("distance diagonal must be zero");
                }
                for j in 0..n {
                    if d[i][j] < 0.0 || d[i][j] != d[j][i] || !e[i][j].is_finite() {
                        return bad("distance matrix must be symmetric and nonnegative");
                    }
                }
            }
        }
        Ok(())
    }

    /// True when any agent accelerates noticeably anywhere in the window,
    /// i.e. constant-velocity extrapolation is not exact.
    pub fn has_interaction_event(&self, threshold: f64) -> bool {
        self.past
            .iter()
            .chain(&self.future)
            .flat_map(|t| &t.frames)
            .any(|f| f.acc[0].hypot(f.acc[1]) > threshold)
    }
}
