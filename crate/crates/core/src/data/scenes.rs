//! Multi-agent scene construction: host + nearest neighbours on the same
//! or adjacent lanes over a fixed window.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::types::{AgentTrack, SceneWindow, FRAME_DT};
use super::DataError;

/// Windows built from one host, skipped windows, whether the host was skipped.
type HostWindows = (Vec<SceneWindow>, usize, bool);

/// Euclidean distance matrix between agent positions.
pub fn pairwise_distances(pos: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let n = pos.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (pos[i][0] - pos[j][0]).hypot(pos[i][1] - pos[j][1]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Pairwise repulsive interaction terms `exp((|v_i| + |v_j|)·dt − d_ij)`
/// with a zero diagonal.
pub fn repulsive_forces(speeds: &[f64], dist: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let n = speeds.len();
    let mut e = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                e[i][j] = ((speeds[i] + speeds[j]) * dt - dist[i][j]).exp();
            }
        }
    }
    e
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub window_frames: usize,
    pub past_frames: usize,
    pub stride: usize,
    pub neighbors: usize,
    pub dt: f64,
    /// Prepended to every scene id; distinguishes sources with
    /// overlapping vehicle ids.
    pub id_prefix: String,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            window_frames: 70,
            past_frames: 20,
            stride: 10,
            neighbors: 5,
            dt: FRAME_DT,
            id_prefix: String::new(),
        }
    }
}

impl SceneConfig {
    /// Window and past lengths from durations in seconds.
    pub fn from_seconds(window_s: f64, past_s: f64) -> Self {
        let dt = FRAME_DT;
        Self {
            window_frames: (window_s / dt).round() as usize,
            past_frames: (past_s / dt).round() as usize,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneBuildResult {
    pub scenes: Vec<SceneWindow>,
    /// Host windows dropped for lack of eligible neighbours.
    pub skipped_windows: usize,
    /// Hosts that had full windows but produced no scene at all.
    pub skipped_hosts: usize,
}

/// Indices of the `k` candidates with the smallest mean distance to the
/// host over frames `[from, from + len)`; ties broken by agent id.
pub fn nearest_neighbors(
    host: &AgentTrack,
    candidates: &[&AgentTrack],
    from_frame: i64,
    len: usize,
    k: usize,
) -> Vec<usize> {
    let mut ranked: Vec<(f64, i64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let total: f64 = (0..len as i64)
                .map(|o| {
                    let (a, b) = (host.at(from_frame + o), c.at(from_frame + o));
                    match (a, b) {
                        (Some(a), Some(b)) => (a.pos[0] - b.pos[0]).hypot(a.pos[1] - b.pos[1]),
                        _ => f64::INFINITY,
                    }
                })
                .sum();
            (total / len as f64, c.agent_id, idx)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|r| r.2).collect()
}

/// Slides a window over every host track and keeps the windows with
/// enough fully-present neighbours on lanes within ±1 of the host's lane
/// at the last past frame. Output is ordered by `(host_id, start_frame)`.
pub fn build_scenes(tracks: &[AgentTrack], cfg: &SceneConfig) -> Result<SceneBuildResult, DataError> {
    let mut sorted: Vec<&AgentTrack> = tracks.iter().filter(|t| !t.frames.is_empty()).collect();
    sorted.sort_by_key(|t| t.agent_id);
    let w = cfg.window_frames as i64;
    if cfg.past_frames == 0 || cfg.past_frames >= cfg.window_frames || cfg.stride == 0 {
        return Err(DataError::Scene("window must be longer than the past segment and stride positive".into()));
    }

    let longest = sorted.iter().map(|t| t.frames.len() as i64).max().unwrap_or(0);
    let mut by_first: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, t) in sorted.iter().enumerate() {
        by_first.entry(t.first_frame().expect("nonempty")).or_default().push(i);
    }

    let per_host: Vec<Result<HostWindows, DataError>> = sorted
        .par_iter()
        .map(|host| {
            let (first, last) = (host.first_frame().unwrap(), host.last_frame().unwrap());
            let mut scenes = Vec::new();
            let mut skipped = 0usize;
            let mut had_window = false;
            let mut start = first;
            while start + w - 1 <= last {
                had_window = true;
                let end = start + w - 1;
                let last_past = start + cfg.past_frames as i64 - 1;
                let host_lane = host.at(last_past).expect("contiguous").lane;
                let candidates: Vec<&AgentTrack> = by_first
                    .range(start - longest..=start)
                    .flat_map(|(_, ids)| ids.iter().map(|&i| sorted[i]))
                    .filter(|c| c.agent_id != host.agent_id && c.last_frame().unwrap() >= end)
                    .filter(|c| c.at(last_past).is_some_and(|f| (f.lane - host_lane).abs() <= 1))
                    .collect();
                if candidates.len() < cfg.neighbors {
                    skipped += 1;
                } else {
                    let chosen = nearest_neighbors(host, &candidates, start, cfg.past_frames, cfg.neighbors);
                    let offset = |t: &AgentTrack| (start - t.first_frame().unwrap()) as usize;
                    let mut agents = vec![host.slice(offset(host), cfg.window_frames)];
                    for idx in chosen {
                        let c = candidates[idx];
                        agents.push(c.slice(offset(c), cfg.window_frames));
                    }
                    let id = format!("{}h{}_f{}", cfg.id_prefix, host.agent_id, start);
                    scenes.push(SceneWindow::from_agents(id, start, agents, cfg.past_frames, cfg.dt)?);
                }
                start += cfg.stride as i64;
            }
            Ok((scenes, skipped, had_window))
        })
        .collect();

    let mut out = SceneBuildResult::default();
    for r in per_host {
        let (scenes, skipped, had_window) = r?;
        if had_window && scenes.is_empty() {
            out.skipped_hosts += 1;
        }
        out.skipped_windows += skipped;
        out.scenes.extend(scenes);
    }
    Ok(out)
}

/// Which split a scene belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

/// Partitions scenes 70/15/15 so that no host vehicle appears in more
/// than one split. Hosts are shuffled with `seed` before assignment.
pub fn split_by_host(scenes: &[SceneWindow], seed: u64) -> BTreeMap<i64, Split> {
    let hosts: BTreeSet<i64> = scenes.iter().map(|s| s.host_id).collect();
    let mut hosts: Vec<i64> = hosts.into_iter().collect();
    hosts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = hosts.len();
    let n_train = (n as f64 * 0.70).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    hosts
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (h, s)
        })
        .collect()
}

/// Scenes in `split` (all scenes for [`Split::All`]).
pub fn select_split(scenes: Vec<SceneWindow>, split: Split, seed: u64) -> Vec<SceneWindow> {
    if split == Split::All {
        return scenes;
    }
    let assignment = split_by_host(&scenes, seed);
    scenes
        .into_iter()
        .filter(|s| assignment.get(&s.host_id) == Some(&split))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::{AgentFrame, AgentKind};

    fn straight_track(id: i64, lane: i32, x0: f64, speed: f64, first: i64, n: usize) -> AgentTrack {
        let frames = (0..n)
            .map(|k| {
                let frame = first + k as i64;
                AgentFrame {
                    frame,
                    t: frame as f64 * FRAME_DT,
                    pos: [x0 + speed * FRAME_DT * k as f64, lane as f64 * 3.7],
                    vel: [speed, 0.0],
                    acc: [0.0, 0.0],
                    heading: 0.0,
                    yaw_rate: 0.0,
                    width: 1.8,
                    length: 4.5,
                    lane,
                }
            })
            .collect();
        AgentTrack {
            agent_id: id,
            kind: AgentKind::Vehicle,
            frames,
        }
    }

    #[test]
    fn repulsive_examples() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let e = repulsive_forces(&[5.0, 5.0], &d, 0.1);
        assert_eq!(e[0][1], 1.0);
        assert_eq!(e[0][0], 0.0);
        let e0 = repulsive_forces(&[0.0, 0.0], &[vec![0.0, 0.0], vec![0.0, 0.0]], 0.1);
        assert_eq!(e0[1][0], 1.0);
        let e2 = repulsive_forces(&[10.0, 10.0], &[vec![0.0, 2.0], vec![2.0, 0.0]], 0.1);
        assert_eq!(e2[0][1], 1.0);
        let e1 = repulsive_forces(&[10.0, 10.0], &d, 0.1);
        assert!((e1[0][1] - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn six_parallel_tracks_give_one_scene_per_start() {
        let tracks: Vec<AgentTrack> = (0..6)
            .map(|i| straight_track(i, (i % 2) as i32 + 1, 10.0 * i as f64, 25.0, 100, 70))
            .collect();
        let r = build_scenes(&tracks, &SceneConfig::default()).unwrap();
        // every agent is a host of exactly one window starting at frame 100
        assert_eq!(r.scenes.len(), 6);
        for s in &r.scenes {
            assert_eq!(s.num_agents(), 6);
            assert_eq!(s.start_frame, 100);
            s.validate(20, 50).unwrap();
        }
    }

    #[test]
    fn five_tracks_give_nothing() {
        let tracks: Vec<AgentTrack> = (0..5).map(|i| straight_track(i, 2, 8.0 * i as f64, 20.0, 0, 90)).collect();
        let r = build_scenes(&tracks, &SceneConfig::default()).unwrap();
        assert!(r.scenes.is_empty());
        assert_eq!(r.skipped_hosts, 5);
        assert_eq!(r.skipped_windows, 5 * 3);
    }

    #[test]
    fn far_lanes_are_ineligible() {
        let mut tracks: Vec<AgentTrack> = (0..5).map(|i| straight_track(i, 2, 8.0 * i as f64, 20.0, 0, 70)).collect();
        tracks.push(straight_track(9, 5, 0.0, 20.0, 0, 70));
        let r = build_scenes(&tracks, &SceneConfig::default()).unwrap();
        assert!(r.scenes.iter().all(|s| s.host_id != 9 && !s.agent_ids.contains(&9)));
    }

    #[test]
    fn neighbors_match_brute_force_ranking() {
        // host on lane 2, seven others at varied offsets, two with motion
        let mut tracks = vec![straight_track(100, 2, 0.0, 20.0, 0, 70)];
        let layout = [(1, 2, 35.0, 20.0), (2, 1, -6.0, 22.0), (3, 3, 14.0, 18.0), (4, 2, -40.0, 21.0),
                      (5, 1, 60.0, 20.0), (6, 3, -20.0, 20.0), (7, 2, 9.0, 19.0)];
        for (id, lane, x, v) in layout {
            tracks.push(straight_track(id, lane, x, v, 0, 70));
        }
        let r = build_scenes(&tracks, &SceneConfig::default()).unwrap();
        let scene = r.scenes.iter().find(|s| s.host_id == 100).unwrap();

        // oracle: exhaustive mean distance over the 20 past frames
        let host = &tracks[0];
        let mut scored: Vec<(f64, i64)> = tracks[1..]
            .iter()
            .map(|t| {
                let mut s = 0.0;
                for k in 0..20 {
                    let (a, b) = (&host.frames[k], &t.frames[k]);
                    s += ((a.pos[0] - b.pos[0]).powi(2) + (a.pos[1] - b.pos[1]).powi(2)).sqrt();
                }
                (s / 20.0, t.agent_id)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let expected: Vec<i64> = std::iter::once(100).chain(scored.iter().take(5).map(|s| s.1)).collect();
        assert_eq!(scene.agent_ids, expected);
    }

    #[test]
    fn order_independent() {
        let mut tracks: Vec<AgentTrack> = (0..8)
            .map(|i| straight_track(i, (i % 3) as i32, 7.0 * i as f64, 20.0 + i as f64, i, 90))
            .collect();
        let a = build_scenes(&tracks, &SceneConfig::default()).unwrap();
        tracks.reverse();
        tracks.swap(1, 5);
        let b = build_scenes(&tracks, &SceneConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_host_disjoint() {
        let tracks: Vec<AgentTrack> = (0..12)
            .map(|i| straight_track(i, (i % 3) as i32, 9.0 * i as f64, 20.0, 0, 120))
            .collect();
        let scenes = build_scenes(&tracks, &SceneConfig::default()).unwrap().scenes;
        let assign = split_by_host(&scenes, 7);
        let train = select_split(scenes.clone(), Split::Train, 7);
        let test = select_split(scenes.clone(), Split::Test, 7);
        assert!(train.iter().all(|s| assign[&s.host_id] == Split::Train));
        assert!(test.iter().all(|s| !train.iter().any(|t| t.host_id == s.host_id)));
        assert_eq!(assign.values().filter(|s| **s == Split::Train).count(), 8);
    }
}
