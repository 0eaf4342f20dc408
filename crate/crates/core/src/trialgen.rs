//! Two-dot trial generation from object masks.
//!
//! Per image: the center dot goes on the object covering the image center,
//! a second object touching it is chosen, and four peripheral dots are
//! placed (same/different × close/far). Dots are rejection-sampled on an
//! annulus around the center and must land inside the target object eroded
//! by a safety margin. Distances are matched between the same and different
//! dot of each separation level.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::tensorio::{load_pgm, open_text, read_object_index, Condition, PixelMask, TrialSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub px_per_degree: f64,
    pub close_deg: f64,
    pub far_deg: f64,
    pub distance_tol_px: f64,
    pub boundary_margin_px: f64,
    pub max_attempts: usize,
    pub rng_seed: u64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            px_per_degree: 34.0,
            close_deg: 3.0,
            far_deg: 6.0,
            distance_tol_px: 8.0,
            boundary_margin_px: 6.0,
            max_attempts: 2000,
            rng_seed: 0,
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.px_per_degree > 0.0
            && self.close_deg > 0.0
            && self.close_deg < self.far_deg
            && self.distance_tol_px >= 0.0
            && self.boundary_margin_px >= 0.0
            && self.max_attempts > 0;
        if !ok {
            return Err(Error::Argument(format!("invalid placement config {self:?}")));
        }
        Ok(())
    }

    pub fn radius_px(&self, condition: Condition) -> f64 {
        let deg = if condition.is_close() { self.close_deg } else { self.far_deg };
        deg * self.px_per_degree
    }
}

#[derive(Debug, Clone)]
pub struct ObjectMask {
    pub object_id: i64,
    pub mask: PixelMask,
}

/// All annotated objects of one image; masks share the image dimensions.
#[derive(Debug, Clone)]
pub struct ImageObjects {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectMask>,
}

impl ImageObjects {
    pub fn new(image_id: impl Into<String>, objects: Vec<ObjectMask>) -> Result<Self> {
        let image_id = image_id.into();
        let first = objects
            .first()
            .ok_or_else(|| Error::Argument(format!("image {image_id} has no object masks")))?;
        let (width, height) = (first.mask.width, first.mask.height);
        if let Some(bad) = objects
            .iter()
            .find(|o| o.mask.width != width || o.mask.height != height)
        {
            return Err(Error::Argument(format!(
                "image {image_id}: object {} mask is {}x{}, expected {width}x{height}",
                bad.object_id, bad.mask.width, bad.mask.height
            )));
        }
        Ok(ImageObjects {
            image_id,
            width,
            height,
            objects,
        })
    }

    pub fn center_px(&self) -> (u32, u32) {
        ((self.width / 2) as u32, (self.height / 2) as u32)
    }

    pub fn mask(&self, object_id: i64) -> Option<&PixelMask> {
        self.objects.iter().find(|o| o.object_id == object_id).map(|o| &o.mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialQuad {
    pub image_id: String,
    /// Indexed by [`Condition::index`].
    pub trials: [TrialSpec; 4],
}

impl TrialQuad {
    pub fn get(&self, condition: Condition) -> &TrialSpec {
        &self.trials[condition.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementFailure {
    NoCenterObject,
    NoOverlapObject,
    PlacementExhausted(Condition),
}

impl fmt::Display for PlacementFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacementFailure::NoCenterObject => f.write_str("no-center-object"),
            PlacementFailure::NoOverlapObject => f.write_str("no-overlap-object"),
            PlacementFailure::PlacementExhausted(c) => write!(f, "placement-exhausted({c})"),
        }
    }
}

impl std::error::Error for PlacementFailure {}

/// Object whose mask contains the center pixel; the smallest such object
/// wins, then the smallest id.
pub fn select_center_object(image: &ImageObjects) -> Option<i64> {
    let (cx, cy) = image.center_px();
    image
        .objects
        .iter()
        .filter(|o| o.mask.get(cx as i64, cy as i64))
        .min_by_key(|o| (o.mask.area(), o.object_id))
        .map(|o| o.object_id)
}

/// Largest `x` with `x² + dy² ≤ r²`, or `None` when row `dy` misses the disk.
fn disk_half_width(radius: f64, dy: i64) -> Option<i64> {
    let r2 = radius * radius;
    if (dy * dy) as f64 > r2 {
        return None;
    }
    let mut hw = (r2 - (dy * dy) as f64).sqrt().floor() as i64;
    while ((hw + 1) * (hw + 1) + dy * dy) as f64 <= r2 {
        hw += 1;
    }
    while hw > 0 && (hw * hw + dy * dy) as f64 > r2 {
        hw -= 1;
    }
    Some(hw)
}

fn row_prefix(mask: &PixelMask) -> Vec<u32> {
    let w = mask.width;
    let mut prefix = vec![0u32; (w + 1) * mask.height];
    for y in 0..mask.height {
        let row = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
        for x in 0..w {
            row[x + 1] = row[x] + mask.bits[y * w + x] as u32;
        }
    }
    prefix
}

/// Disk morphology: dilation sets a pixel when any mask pixel lies within
/// `radius`; erosion keeps it only when every pixel within `radius` is in
/// the mask. Pixels outside the image count as background.
fn morph(mask: &PixelMask, radius: f64, erode: bool) -> PixelMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let prefix = row_prefix(mask);
    let r = radius.max(0.0).floor() as i64;
    let rows: Vec<(i64, i64)> = (-r..=r)
        .filter_map(|dy| disk_half_width(radius.max(0.0), dy).map(|hw| (dy, hw)))
        .collect();
    PixelMask::from_fn(mask.width, mask.height, |x, y| {
        let (x, y) = (x as i64, y as i64);
        if erode && !mask.bits[(y * w + x) as usize] {
            return false;
        }
        for &(dy, hw) in &rows {
            let yy = y + dy;
            let (lo, hi) = (x - hw, x + hw);
            if yy < 0 || yy >= h {
                if erode {
                    return false;
                }
                continue;
            }
            let (clo, chi) = (lo.max(0), hi.min(w - 1));
            if erode && (clo != lo || chi != hi) {
                return false;
            }
            let base = (yy * (w + 1)) as usize;
            let count = prefix[base + chi as usize + 1] - prefix[base + clo as usize];
            if erode && count as i64 != hi - lo + 1 {
                return false;
            }
            if !erode && count > 0 {
                return true;
            }
        }
        erode
    })
}

pub fn dilate(mask: &PixelMask, radius: f64) -> PixelMask {
    morph(mask, radius, false)
}

pub fn erode(mask: &PixelMask, radius: f64) -> PixelMask {
    morph(mask, radius, true)
}

/// Point query equivalent to `erode(mask, radius).get(x, y)`.
pub fn eroded_contains(mask: &PixelMask, x: i64, y: i64, radius: f64) -> bool {
    let r = radius.max(0.0).floor() as i64;
    (-r..=r).all(|dy| match disk_half_width(radius.max(0.0), dy) {
        None => true,
        Some(hw) => (-hw..=hw).all(|dx| mask.get(x + dx, y + dy)),
    })
}

/// A distinct object whose mask, dilated by `dilation_radius`, overlaps the
/// center object's mask. Largest overlap wins, then the smallest id.
pub fn find_overlapping_object(image: &ImageObjects, center_id: i64, dilation_radius: f64) -> Option<i64> {
    let center = image.mask(center_id)?;
    image
        .objects
        .iter()
        .filter(|o| o.object_id != center_id)
        .filter_map(|o| {
            let grown = dilate(&o.mask, dilation_radius);
            let overlap = grown
                .bits
                .iter()
                .zip(&center.bits)
                .filter(|(a, b)| **a && **b)
                .count();
            (overlap > 0).then_some((overlap, o.object_id))
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, id)| id)
}

fn distance(a: (u32, u32), b: (u32, u32)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    dx.hypot(dy)
}

/// Places the four peripheral dots for one image.
pub fn place_dots<R: Rng>(
    image: &ImageObjects,
    center_id: i64,
    second_id: i64,
    cfg: &PlacementConfig,
    rng: &mut R,
) -> std::result::Result<TrialQuad, PlacementFailure> {
    let center_px = image.center_px();
    let center_mask = image
        .mask(center_id)
        .filter(|m| m.get(center_px.0 as i64, center_px.1 as i64))
        .ok_or(PlacementFailure::NoCenterObject)?;
    let second_mask = image
        .mask(second_id)
        .filter(|_| second_id != center_id)
        .ok_or(PlacementFailure::NoOverlapObject)?;
    let tol = cfg.distance_tol_px;
    let (cx, cy) = (center_px.0 as f64, center_px.1 as f64);

    let mut placed: [Option<((u32, u32), f64)>; 4] = [None; 4];
    for condition in Condition::ALL {
        let radius = cfg.radius_px(condition);
        let (target, matched) = if condition.label().is_same() {
            (center_mask, None)
        } else {
            let partner = if condition.is_close() { Condition::SameClose } else { Condition::SameFar };
            (second_mask, placed[partner.index()].map(|(_, d)| d))
        };
        let (mut lo, mut hi) = (radius - tol, radius + tol);
        if let Some(d) = matched {
            lo = lo.max(d - tol);
            hi = hi.min(d + tol);
        }
        lo = lo.max(0.0);
        let mut found = None;
        for _ in 0..cfg.max_attempts {
            let angle = rng.random_range(0.0..TAU);
            let u: f64 = rng.random();
            let r = (lo * lo + u * (hi * hi - lo * lo)).sqrt();
            let (x, y) = ((cx + r * angle.cos()).round(), (cy + r * angle.sin()).round());
            if x < 0.0 || y < 0.0 || x >= image.width as f64 || y >= image.height as f64 {
                continue;
            }
            let px = (x as u32, y as u32);
            let d = distance(px, center_px);
            if d == 0.0 || (d - radius).abs() > tol {
                continue;
            }
            if matches!(matched, Some(m) if (d - m).abs() > tol) {
                continue;
            }
            if eroded_contains(target, px.0 as i64, px.1 as i64, cfg.boundary_margin_px) {
                found = Some((px, d));
                break;
            }
        }
        placed[condition.index()] = Some(found.ok_or(PlacementFailure::PlacementExhausted(condition))?);
    }

    let trials = Condition::ALL.map(|condition| {
        let (peripheral_px, _) = placed[condition.index()].expect("all conditions placed");
        TrialSpec {
            trial_id: format!("{}:{}", image.image_id, condition),
            image_id: image.image_id.clone(),
            center_px,
            peripheral_px,
            condition,
            label: condition.label(),
            center_object_id: center_id,
            peripheral_object_id: if condition.label().is_same() { center_id } else { second_id },
        }
    });
    Ok(TrialQuad {
        image_id: image.image_id.clone(),
        trials,
    })
}

/// Full per-image pipeline with a generator derived from
/// `(cfg.rng_seed, image_id)`, so results do not depend on processing order.
pub fn generate_for_image(image: &ImageObjects, cfg: &PlacementConfig) -> std::result::Result<TrialQuad, PlacementFailure> {
    let center = select_center_object(image).ok_or(PlacementFailure::NoCenterObject)?;
    let second =
        find_overlapping_object(image, center, cfg.boundary_margin_px).ok_or(PlacementFailure::NoOverlapObject)?;
    let mut rng = seeds::rng(cfg.rng_seed, &format!("trialgen/{}", image.image_id));
    place_dots(image, center, second, cfg, &mut rng)
}

pub type Generated = (String, std::result::Result<TrialQuad, PlacementFailure>);

/// Generates trials for every image on a pool of `jobs` workers; output
/// order follows `images`.
pub fn generate_trials(images: &[ImageObjects], cfg: &PlacementConfig, jobs: usize) -> Result<Vec<Generated>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        images
            .par_iter()
            .map(|img| (img.image_id.clone(), generate_for_image(img, cfg)))
            .collect()
    }))
}

/// Loads an object index and its masks, grouped per image in order of first
/// appearance. Mask paths are relative to the index file's directory.
pub fn load_image_objects(index_path: impl AsRef<Path>) -> Result<Vec<ImageObjects>> {
    let index_path = index_path.as_ref();
    let base = index_path.parent().unwrap_or(Path::new("."));
    let entries = read_object_index(open_text(index_path)?)?;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<ObjectMask>> = HashMap::new();
    for e in entries {
        let mask = load_pgm(base.join(&e.mask))?;
        if !grouped.contains_key(&e.image_id) {
            order.push(e.image_id.clone());
        }
        grouped.entry(e.image_id).or_default().push(ObjectMask {
            object_id: e.object_id,
            mask,
        });
    }
    order
        .into_iter()
        .map(|id| {
            let objects = grouped.remove(&id).unwrap_or_default();
            ImageObjects::new(id, objects)
        })
        .collect()
}

/// Latin-square assignment of images to conditions for one group of
/// participants: participant `p` sees image `i` in condition
/// `(row_order[p] + i) mod 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterbalance {
    pub row_order: Vec<usize>,
    /// `participants[p]` lists `(image_id, condition)` in image order.
    pub participants: Vec<Vec<(String, Condition)>>,
}

pub fn counterbalance(quads: &[TrialQuad], n_groups: usize, rng_seed: u64) -> Result<Counterbalance> {
    if n_groups != Condition::ALL.len() {
        return Err(Error::UnsupportedDesign(format!(
            "{n_groups} participant groups for {} conditions",
            Condition::ALL.len()
        )));
    }
    let mut row_order: Vec<usize> = (0..n_groups).collect();
    row_order.shuffle(&mut seeds::rng(rng_seed, "counterbalance"));
    let participants = row_order
        .iter()
        .map(|&row| {
            quads
                .iter()
                .enumerate()
                .map(|(i, q)| (q.image_id.clone(), Condition::ALL[(row + i) % n_groups]))
                .collect()
        })
        .collect();
    Ok(Counterbalance {
        row_order,
        participants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: i64, w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> ObjectMask {
        ObjectMask {
            object_id: id,
            mask: PixelMask::from_fn(w, h, f),
        }
    }

    fn half_planes() -> ImageObjects {
        ImageObjects::new("hp", vec![obj(1, 640, 480, |x, _| x < 330), obj(2, 640, 480, |x, _| x >= 330)]).unwrap()
    }

    #[test]
    fn full_frame_mask_is_center() {
        let img = ImageObjects::new("a", vec![obj(5, 20, 10, |_, _| true)]).unwrap();
        assert_eq!(select_center_object(&img), Some(5));
    }

    #[test]
    fn nested_masks_pick_smaller() {
        let img = ImageObjects::new(
            "a",
            vec![obj(1, 40, 40, |_, _| true), obj(2, 40, 40, |x, y| (15..25).contains(&x) && (15..25).contains(&y))],
        )
        .unwrap();
        assert_eq!(select_center_object(&img), Some(2));
    }

    #[test]
    fn corner_masks_give_none() {
        let img = ImageObjects::new("a", vec![obj(1, 40, 40, |x, y| x < 5 && y < 5), obj(2, 40, 40, |x, y| x > 35 && y > 35)])
            .unwrap();
        assert_eq!(select_center_object(&img), None);
    }

    #[test]
    fn disjoint_far_masks_do_not_overlap() {
        let img = ImageObjects::new("a", vec![obj(1, 100, 100, |x, _| x < 20), obj(2, 100, 100, |x, _| x > 80)]).unwrap();
        assert_eq!(find_overlapping_object(&img, 1, 6.0), None);
    }

    #[test]
    fn shared_border_overlaps() {
        // Abutting objects along a 100-pixel border.
        let img = ImageObjects::new("a", vec![obj(1, 100, 100, |x, _| x < 50), obj(2, 100, 100, |x, _| x >= 50)]).unwrap();
        assert_eq!(find_overlapping_object(&img, 1, 6.0), Some(2));
    }

    #[test]
    fn largest_intersection_wins_against_brute_force() {
        let objects = vec![
            obj(1, 60, 60, |x, y| (10..50).contains(&x) && (10..50).contains(&y)),
            obj(2, 60, 60, |x, _| x >= 52),
            obj(3, 60, 60, |_, y| y >= 45),
            obj(4, 60, 60, |x, y| x < 8 && y < 30),
        ];
        let img = ImageObjects::new("a", objects).unwrap();
        let r = 6.0;
        let center = img.mask(1).unwrap();
        let brute = |id: i64| {
            let m = img.mask(id).unwrap();
            let mut count = 0;
            for y in 0..60i64 {
                for x in 0..60i64 {
                    if !center.get(x, y) {
                        continue;
                    }
                    let mut hit = false;
                    for dy in -6..=6i64 {
                        for dx in -6..=6i64 {
                            if ((dx * dx + dy * dy) as f64) <= r * r && m.get(x + dx, y + dy) {
                                hit = true;
                            }
                        }
                    }
                    count += hit as usize;
                }
            }
            count
        };
        let counts: Vec<(usize, i64)> = [2, 3, 4].iter().map(|&id| (brute(id), id)).collect();
        let best = counts.iter().max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1))).unwrap().1;
        assert!(counts.iter().all(|c| c.0 > 0));
        assert_eq!(find_overlapping_object(&img, 1, r), Some(best));
    }

    #[test]
    fn erosion_point_query_matches_full_erosion() {
        use rand::Rng;
        let mut rng = seeds::rng_from(3);
        let mut m = PixelMask::from_fn(50, 40, |x, y| (x as i64 - 25).pow(2) + (y as i64 - 20).pow(2) < 300);
        for _ in 0..40 {
            let (x, y) = (rng.random_range(0..50), rng.random_range(0..40));
            m.set(x, y, !m.get(x as i64, y as i64));
        }
        for r in [0.0, 1.0, 2.5, 6.0] {
            let e = erode(&m, r);
            for y in 0..40 {
                for x in 0..50 {
                    assert_eq!(e.get(x, y), eroded_contains(&m, x, y, r), "r={r} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn half_plane_quad_satisfies_invariants() {
        let img = half_planes();
        let cfg = PlacementConfig::default();
        let quad = generate_for_image(&img, &cfg).unwrap();
        let eroded = [erode(img.mask(1).unwrap(), 6.0), erode(img.mask(2).unwrap(), 6.0)];
        for t in &quad.trials {
            assert_eq!(t.center_px, (320, 240));
            assert_ne!(t.peripheral_px, t.center_px);
            let target = if t.label.is_same() { &eroded[0] } else { &eroded[1] };
            assert!(target.get(t.peripheral_px.0 as i64, t.peripheral_px.1 as i64));
            let d = distance(t.peripheral_px, t.center_px);
            assert!((d - cfg.radius_px(t.condition)).abs() <= cfg.distance_tol_px);
        }
        for (s, d) in [(Condition::SameClose, Condition::DifferentClose), (Condition::SameFar, Condition::DifferentFar)] {
            let ds = distance(quad.get(s).peripheral_px, quad.get(s).center_px);
            let dd = distance(quad.get(d).peripheral_px, quad.get(d).center_px);
            assert!((ds - dd).abs() <= cfg.distance_tol_px);
        }
    }

    #[test]
    fn second_object_gone_after_erosion() {
        // 4-pixel-wide strip disappears under a 6 px erosion.
        let img =
            ImageObjects::new("s", vec![obj(1, 640, 480, |x, _| x < 400), obj(2, 640, 480, |x, _| (400..404).contains(&x))])
                .unwrap();
        let cfg = PlacementConfig { max_attempts: 200, ..Default::default() };
        assert_eq!(
            generate_for_image(&img, &cfg),
            Err(PlacementFailure::PlacementExhausted(Condition::DifferentClose))
        );
    }

    #[test]
    fn failure_names() {
        assert_eq!(PlacementFailure::NoCenterObject.to_string(), "no-center-object");
        assert_eq!(PlacementFailure::NoOverlapObject.to_string(), "no-overlap-object");
        assert_eq!(
            PlacementFailure::PlacementExhausted(Condition::DifferentFar).to_string(),
            "placement-exhausted(different-far)"
        );
    }

    #[test]
    fn deterministic_across_jobs() {
        let images: Vec<ImageObjects> = (0..6)
            .map(|i| {
                let split = 330 + 3 * i;
                ImageObjects::new(
                    format!("img{i}"),
                    vec![obj(1, 640, 480, move |x, _| x < split), obj(2, 640, 480, move |x, _| x >= split)],
                )
                .unwrap()
            })
            .collect();
        let cfg = PlacementConfig { rng_seed: 9, ..Default::default() };
        let a = generate_trials(&images, &cfg, 1).unwrap();
        let b = generate_trials(&images, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    fn quads(n: usize) -> Vec<TrialQuad> {
        let img = half_planes();
        let q = generate_for_image(&img, &PlacementConfig::default()).unwrap();
        (0..n)
            .map(|i| TrialQuad {
                image_id: format!("img{i}"),
                ..q.clone()
            })
            .collect()
    }

    #[test]
    fn latin_square_covers_each_pair_once() {
        let cb = counterbalance(&quads(4), 4, 1).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &cb.participants {
            for pair in p {
                assert!(seen.insert(pair.clone()));
            }
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn counterbalance_256_images() {
        let cb = counterbalance(&quads(256), 4, 2).unwrap();
        assert_eq!(cb.participants.iter().map(Vec::len).sum::<usize>(), 256 * 4);
        for i in 0..256 {
            let mut conds: Vec<Condition> = cb.participants.iter().map(|p| p[i].1).collect();
            conds.sort();
            assert_eq!(conds, Condition::ALL.to_vec());
        }
        assert_eq!(cb, counterbalance(&quads(256), 4, 2).unwrap());
        assert!(matches!(counterbalance(&quads(4), 3, 2), Err(Error::UnsupportedDesign(_))));
    }
}
