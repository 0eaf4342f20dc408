//! Writes a feature map and an object mask, reads them back, and
//! rasterizes the mask onto the patch grid.

use patchgroup::tensorio::{
    load_feature_map, load_pgm, rasterize_mask_to_patches, save_feature_map, FeatureMap, PixelMask,
};

fn main() -> patchgroup::Result<()> {
    let dir = std::env::temp_dir().join("patchgroup-container-example");
    std::fs::create_dir_all(&dir).map_err(|e| patchgroup::Error::io(&dir, e))?;

    let (h, w, d) = (4, 6, 3);
    let data = (0..h * w * d).map(|i| (i as f32 * 0.1).sin()).collect();
    let map = FeatureMap::new("demo", h, w, d, data)?;
    let path = dir.join("demo.pbft");
    let bytes = save_feature_map(&map, &path)?;
    let back = load_feature_map(&path)?;
    println!("{}: {bytes} bytes, roundtrip equal: {}", path.display(), back == map);

    // a disk of radius 30 px in a 96x64 image
    let mask = PixelMask::from_fn(96, 64, |x, y| {
        let (dx, dy) = (x as f64 - 40.0, y as f64 - 32.0);
        dx * dx + dy * dy <= 900.0
    });
    let pgm = dir.join("demo_1.pgm");
    let file = std::fs::File::create(&pgm).map_err(|e| patchgroup::Error::io(&pgm, e))?;
    mask.write_pgm(file)?;
    let patches = rasterize_mask_to_patches(&load_pgm(&pgm)?, 16, "demo", 1)?;
    println!("patch mask {}x{} ({} object patches):", patches.h, patches.w, patches.count());
    for r in 0..patches.h {
        let row: String = (0..patches.w)
            .map(|c| if patches.bits[r * patches.w + c] { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
    Ok(())
}
