//! Temporary diagnostics; deleted before release.

use gift_core::checkpoint::load_checkpoint;
use gift_core::env::Mdp;
use gift_core::rng::sub_rng;
use gift_core::smdp::{load_reference, make_smdp};

fn main() {
    let dir = std::env::args().nth(1).expect("usage: scratch_probe <seed_dir>");
    let dir = std::path::PathBuf::from(dir);
    let ckpt = load_checkpoint(&dir.join("checkpoint_gifted.ckpt"), None).unwrap();
    let env = ckpt.config.env_spec().unwrap();
    let (reference, _) = load_reference(&dir.join("reference.traj")).unwrap();
    let smdp = make_smdp(
        env.clone(),
        reference,
        ckpt.config.gift.clone(),
        ckpt.normalizer.clone(),
    )
    .unwrap();

    for idx in [0u64, 3, 7] {
        let mut rng = sub_rng(0, "eval-reset", idx);
        let mut state = env.reset(&mut rng);
        let mut per_phase = [0.0f64; 8]; // 50-step windows
        for t in 0..400usize {
            let obs = ckpt.normalizer.normalize(&env.observe(&state));
            let action = ckpt.policy.act_deterministic(&obs).unwrap();
            let tr = smdp.step(&state, &action).unwrap();
            per_phase[t / 50] += tr.reward;
            state = tr.next_state;
        }
        let mean: Vec<String> = per_phase.iter().map(|s| format!("{:.2}", s / 50.0)).collect();
        println!("state {idx}: mean intrinsic reward per 50-step window: {}", mean.join(" "));
    }
}
