mod common;

use common::ngsim_proxy::proxy_csv;
use iaknn::data::{build_scenes, parse_ngsim_reader, synth_tracks, BehaviorConfig, ColumnMap, SceneConfig, FRAME_DT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn proxy_csv_yields_full_windows() {
    let text = proxy_csv(3, 12, 90);
    let tracks = parse_ngsim_reader(text.as_bytes(), &ColumnMap::default()).unwrap();
    assert_eq!(tracks.len(), 72);
    let built = build_scenes(&tracks, &SceneConfig::default()).unwrap();
    assert!(!built.scenes.is_empty());
    for s in &built.scenes {
        assert_eq!(s.past_len(), 20);
        assert_eq!(s.total_len(), 70);
        assert_eq!(s.num_agents(), 6);
        for t in s.past.iter().chain(&s.future) {
            for w in t.frames.windows(2) {
                assert!((w[1].t - w[0].t - FRAME_DT).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn ingested_positions_match_generator() {
    let text = proxy_csv(4, 1, 70);
    let tracks = parse_ngsim_reader(text.as_bytes(), &ColumnMap::default()).unwrap();
    let cfg = BehaviorConfig::default();
    let generated = synth_tracks(&mut ChaCha8Rng::seed_from_u64(4), 0, &cfg);
    assert_eq!(tracks.len(), generated.len());
    for g in &generated {
        let t = tracks.iter().find(|t| t.agent_id == g.agent_id + 1).unwrap();
        assert_eq!(t.frames.len(), g.frames.len());
        for (a, b) in t.frames.iter().zip(&g.frames) {
            assert!((a.pos[0] - b.pos[0]).abs() < 1e-9 && (a.pos[1] - b.pos[1]).abs() < 1e-9);
            assert!((a.speed() - b.speed()).abs() < 1e-9);
            assert_eq!(a.lane, b.lane);
        }
    }
}
