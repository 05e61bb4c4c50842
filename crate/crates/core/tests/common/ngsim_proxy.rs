//! NGSIM-format CSV text built from synthetic tracks, for exercising
//! ingestion when no recorded data is available.

use iaknn::data::{meters_to_feet, synth_tracks, BehaviorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NGSIM_HEADER: &str = "Vehicle_ID,Frame_ID,Total_Frames,Global_Time,Local_X,Local_Y,Global_X,Global_Y,v_Length,v_Width,v_Class,v_Vel,v_Acc,Lane_ID";

/// `groups` independent traffic groups, each simulated for `frames`
/// frames and offset in time so groups never share a frame.
pub fn proxy_csv(seed: u64, groups: usize, frames: usize) -> String {
    let cfg = BehaviorConfig {
        past_frames: 20,
        future_frames: frames - 20,
        ..BehaviorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from(NGSIM_HEADER);
    out.push('\n');
    for g in 0..groups {
        let offset = (g * (frames + 100)) as i64 + 1;
        for t in synth_tracks(&mut rng, g, &cfg) {
            for f in &t.frames {
                let (s, c) = f.heading.sin_cos();
                let along = f.acc[0] * c + f.acc[1] * s;
                out.push_str(&format!(
                    "{},{},{},{},{},{},0,0,{},{},2,{},{},{}\n",
                    t.agent_id + 1,
                    f.frame + offset,
                    t.frames.len(),
                    (f.frame + offset) * 100,
                    meters_to_feet(f.pos[0]),
                    meters_to_feet(f.pos[1]),
                    meters_to_feet(f.length),
                    meters_to_feet(f.width),
                    meters_to_feet(f.speed()),
                    meters_to_feet(along),
                    f.lane,
                ));
            }
        }
    }
    out
}
