//! Prints the center-dot affinity map of one planted scene at two noise
//! levels, next to the center object's patch mask.

use patchgroup::affinity::affinity_from_patch;
use patchgroup::synth::{planted_set, SceneConfig, CENTER_OBJECT};

fn shade(v: f64) -> char {
    const RAMP: [char; 5] = [' ', '.', ':', 'o', '@'];
    RAMP[(((v + 1.0) / 2.0 * 4.0).round() as usize).min(4)]
}

fn main() -> patchgroup::Result<()> {
    let cfg = SceneConfig::default();
    let set = planted_set(1, &cfg, "scene", 3)?;
    let id = &set.scenes[0].objects.image_id;
    let mask = &set.masks[&(id.clone(), CENTER_OBJECT)];
    let seed = (cfg.grid / 2, cfg.grid / 2);
    for sigma in [0.2, 1.0] {
        let map = set.scenes[0].features(cfg.grid, sigma, 1)?;
        let aff = affinity_from_patch(&map, seed)?;
        println!("sigma = {sigma}: affinity | center object");
        for r in 0..aff.h {
            let left: String = (0..aff.w).map(|c| shade(aff.get(r, c))).collect();
            let right: String = (0..aff.w).map(|c| if mask.bits[r * mask.w + c] { '#' } else { '.' }).collect();
            println!("  {left} | {right}");
        }
    }
    Ok(())
}
