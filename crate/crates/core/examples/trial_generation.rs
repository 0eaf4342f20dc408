//! Places two-dot trials on planted scenes and assigns them to participant
//! groups with a Latin square.

use patchgroup::synth::{make_scene, SceneConfig};
use patchgroup::trialgen::{counterbalance, generate_trials};
use patchgroup::seeds;
use patchgroup::tensorio::Condition;

fn main() -> patchgroup::Result<()> {
    let cfg = SceneConfig::default();
    let mut rng = seeds::rng(7, "example/scenes");
    let images: Vec<_> = (0..8)
        .map(|i| make_scene(&format!("scene{i}"), &cfg, &mut rng).map(|s| s.objects))
        .collect::<patchgroup::Result<_>>()?;

    let generated = generate_trials(&images, &cfg.placement, 4)?;
    let mut quads = Vec::new();
    for (id, result) in generated {
        match result {
            Ok(q) => quads.push(q),
            Err(why) => println!("{id}: skipped ({why})"),
        }
    }
    for q in quads.iter().take(2) {
        for c in Condition::ALL {
            let t = q.get(c);
            println!(
                "{:<24} center {:?} dot {:?} object {} -> {}",
                t.trial_id, t.center_px, t.peripheral_px, t.center_object_id, t.peripheral_object_id
            );
        }
    }
    let groups = counterbalance(&quads, 4, 7)?;
    for (g, seen) in groups.participants.iter().enumerate() {
        let line: Vec<String> = seen.iter().map(|(id, c)| format!("{id}={c}")).collect();
        println!("group {g}: {}", line.join(" "));
    }
    Ok(())
}
