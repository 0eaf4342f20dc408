//! Planted synthetic scenes with known object structure.
//!
//! Each scene is a square patch grid split into a center object and a
//! second object sharing a straight boundary one or two patches from the
//! image center, plus small rectangular distractors. Objects are patch
//! aligned, so pixel masks rasterize exactly. Every object has a latent
//! vector and each patch token is its object's latent plus isotropic noise,
//! so grouping difficulty is set by the noise level and by how similar the
//! second object's latent is to the center object's.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::pipeline::MaskIndex;
use crate::seeds;
use crate::tensorio::{
    rasterize_mask_to_patches, save_feature_map, write_object_index, BehavioralRecord, FeatureMap, ObjectIndexEntry,
    PixelMask, TrialSpec,
};
use crate::trialgen::{generate_for_image, ImageObjects, ObjectMask, PlacementConfig, TrialQuad};
use crate::{Error, Result};

pub const CENTER_OBJECT: i64 = 1;
pub const SECOND_OBJECT: i64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Patches per side; must be even so the image center is a patch corner.
    pub grid: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub n_distractors: usize,
    /// Upper bound of the center/second latent correlation.
    pub max_similarity: f64,
    pub placement: PlacementConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid: 14,
            patch_size: 16,
            dim: 16,
            n_distractors: 2,
            max_similarity: 0.9,
            placement: PlacementConfig {
                px_per_degree: 12.0,
                distance_tol_px: 6.0,
                boundary_margin_px: 4.0,
                ..PlacementConfig::default()
            },
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 6 || !self.grid.is_multiple_of(2) || self.patch_size == 0 || self.dim == 0 {
            return Err(Error::Argument(format!(
                "scene grid {} patch {} dim {}",
                self.grid, self.patch_size, self.dim
            )));
        }
        if !(0.0..1.0).contains(&self.max_similarity) {
            return Err(Error::Argument(format!("max_similarity = {}", self.max_similarity)));
        }
        self.placement.validate()
    }

    pub fn image_px(&self) -> usize {
        self.grid * self.patch_size
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub objects: ImageObjects,
    /// Object id per patch, row-major over the grid.
    pub labels: Vec<i64>,
    pub latents: BTreeMap<i64, Vec<f64>>,
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn make_scene<R: Rng>(image_id: &str, cfg: &SceneConfig, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let (g, c) = (cfg.grid, cfg.grid / 2);
    let k = rng.random_range(1..=2);
    let direction = rng.random_range(0..4);
    let mut labels: Vec<i64> = (0..g * g)
        .map(|i| {
            let (r, col) = (i / g, i % g);
            let second = match direction {
                0 => col >= c + k,
                1 => col < c - k,
                2 => r >= c + k,
                _ => r < c - k,
            };
            if second {
                SECOND_OBJECT
            } else {
                CENTER_OBJECT
            }
        })
        .collect();

    let mut next_id = SECOND_OBJECT + 1;
    for _ in 0..cfg.n_distractors {
        for _ in 0..100 {
            let (h, w) = (rng.random_range(2..=3), rng.random_range(2..=3));
            let (r0, c0) = (rng.random_range(0..=g - h), rng.random_range(0..=g - w));
            let near_center = r0 <= c + 1 && r0 + h + 1 >= c && c0 <= c + 1 && c0 + w + 1 >= c;
            if near_center {
                continue;
            }
            for r in r0..r0 + h {
                for col in c0..c0 + w {
                    labels[r * g + col] = next_id;
                }
            }
            next_id += 1;
            break;
        }
    }

    let mut latents = BTreeMap::new();
    let z1 = gaussian(rng, cfg.dim);
    let rho = rng.random_range(0.0..cfg.max_similarity);
    let fresh = gaussian(rng, cfg.dim);
    let z2 = z1.iter().zip(&fresh).map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b).collect();
    latents.insert(CENTER_OBJECT, z1);
    latents.insert(SECOND_OBJECT, z2);
    for id in SECOND_OBJECT + 1..next_id {
        latents.insert(id, gaussian(rng, cfg.dim));
    }

    let px = cfg.image_px();
    let ps = cfg.patch_size;
    let objects = latents
        .keys()
        .filter(|id| labels.contains(id))
        .map(|&id| ObjectMask {
            object_id: id,
            mask: PixelMask::from_fn(px, px, |x, y| labels[(y / ps) * g + x / ps] == id),
        })
        .collect();
    latents.retain(|id, _| labels.contains(id));
    Ok(Scene {
        objects: ImageObjects::new(image_id, objects)?,
        labels,
        latents,
    })
}

impl Scene {
    /// Tokens `latent + sigma * noise`; the noise draw depends only on
    /// `seed` and the image id, so maps at different `sigma` share it.
    pub fn features(&self, grid: usize, sigma: f64, seed: u64) -> Result<FeatureMap> {
        let dim = self.latents.values().next().map_or(0, Vec::len);
        let mut rng = seeds::rng(seed, &format!("synth/noise/{}", self.objects.image_id));
        let mut data = Vec::with_capacity(self.labels.len() * dim);
        for id in &self.labels {
            let z = &self.latents[id];
            for v in z {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push((v + sigma * e) as f32);
            }
        }
        FeatureMap::new(self.objects.image_id.clone(), grid, grid, dim, data)
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSet {
    pub config: SceneConfig,
    pub scenes: Vec<Scene>,
    pub quads: Vec<TrialQuad>,
    pub masks: MaskIndex,
}

impl PlantedSet {
    pub fn trials(&self) -> Vec<TrialSpec> {
        self.quads.iter().flat_map(|q| q.trials.iter().cloned()).collect()
    }

    pub fn feature_maps(&self, sigma: f64, seed: u64) -> Result<HashMap<String, FeatureMap>> {
        self.scenes
            .iter()
            .map(|s| Ok((s.objects.image_id.clone(), s.features(self.config.grid, sigma, seed)?)))
            .collect()
    }
}

/// Writes `masks/objects.jsonl` with one PGM per object, and one
/// `features/<image_id>.pbft` per map, under `dir`.
pub fn write_dataset(set: &PlantedSet, maps: &HashMap<String, FeatureMap>, dir: &Path) -> Result<()> {
    let masks = dir.join("masks");
    let features = dir.join("features");
    for d in [&masks, &features] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut index = Vec::new();
    for scene in &set.scenes {
        let id = &scene.objects.image_id;
        for o in &scene.objects.objects {
            let name = format!("{id}_{}.pgm", o.object_id);
            let path = masks.join(&name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut sink = std::io::BufWriter::new(file);
            o.mask.write_pgm(&mut sink)?;
            std::io::Write::flush(&mut sink).map_err(|e| Error::io(&path, e))?;
            index.push(ObjectIndexEntry {
                image_id: id.clone(),
                object_id: o.object_id,
                mask: name,
                area: Some(o.mask.area() as u64),
                category: None,
            });
        }
        if let Some(map) = maps.get(id) {
            save_feature_map(map, features.join(format!("{id}.pbft")))?;
        }
    }
    let path = masks.join("objects.jsonl");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut sink = std::io::BufWriter::new(file);
    write_object_index(&mut sink, &index)?;
    std::io::Write::flush(&mut sink).map_err(|e| Error::io(&path, e))
}

/// Builds scenes until `n_images` of them yield a full trial quad. Image
/// ids are `{prefix}{index:05}`.
pub fn planted_set(n_images: usize, cfg: &SceneConfig, prefix: &str, seed: u64) -> Result<PlantedSet> {
    cfg.validate()?;
    let placement = PlacementConfig {
        rng_seed: seed,
        ..cfg.placement.clone()
    };
    let mut set = PlantedSet {
        config: cfg.clone(),
        scenes: Vec::with_capacity(n_images),
        quads: Vec::with_capacity(n_images),
        masks: MaskIndex::new(),
    };
    let mut index = 0;
    while set.scenes.len() < n_images {
        if index > 4 * n_images + 100 {
            return Err(Error::Invariant(format!(
                "only {} of {n_images} planted scenes produced trials",
                set.scenes.len()
            )));
        }
        let id = format!("{prefix}{index:05}");
        index += 1;
        let scene = make_scene(&id, cfg, &mut seeds::rng(seed, &format!("synth/scene/{id}")))?;
        let Ok(quad) = generate_for_image(&scene.objects, &placement) else {
            continue;
        };
        for o in &scene.objects.objects {
            let m = rasterize_mask_to_patches(&o.mask, cfg.patch_size, &id, o.object_id)?;
            set.masks.insert((id.clone(), o.object_id), m);
        }
        set.quads.push(quad);
        set.scenes.push(scene);
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectConfig {
    pub n_subjects: usize,
    pub base_ms: f64,
    /// RT added at maximal difficulty.
    pub difficulty_ms: f64,
    pub far_ms: f64,
    /// Standard deviation of each subject's log-RT offset.
    pub subject_sd: f64,
    /// Standard deviation of per-response log-RT noise.
    pub response_sd: f64,
    pub error_rate: f64,
}

impl Default for SubjectConfig {
    fn default() -> Self {
        SubjectConfig {
            n_subjects: 24,
            base_ms: 550.0,
            difficulty_ms: 400.0,
            far_ms: 40.0,
            subject_sd: 0.1,
            response_sd: 0.15,
            error_rate: 0.05,
        }
    }
}

/// Difficulty in `[0, 1]` of a trial under a reference representation:
/// dissimilar tokens make "same" hard and similar tokens make "different"
/// hard.
pub fn difficulty(reference: &FeatureMap, trial: &TrialSpec, patch_size: u32) -> Result<f64> {
    let grid = (reference.h, reference.w);
    let (cr, cc) = crate::affinity::pixel_to_patch(trial.center_px, patch_size, grid)?;
    let (pr, pc) = crate::affinity::pixel_to_patch(trial.peripheral_px, patch_size, grid)?;
    let aff = crate::affinity::affinity_from_patch(reference, (cr, cc))?;
    let cos = aff.get(pr, pc);
    Ok(if trial.label.is_same() { (1.0 - cos) / 2.0 } else { (1.0 + cos) / 2.0 })
}

/// Every simulated subject responds once to every trial. RTs are lognormal
/// around a mean set by [`difficulty`] under `reference`.
pub fn simulate_subjects(
    trials: &[TrialSpec],
    reference: &HashMap<String, FeatureMap>,
    patch_size: u32,
    cfg: &SubjectConfig,
    seed: u64,
) -> Result<Vec<BehavioralRecord>> {
    let mut means = Vec::with_capacity(trials.len());
    for t in trials {
        let map = crate::pipeline::feature_for(reference, t)?;
        let far = if t.condition.is_close() { 0.0 } else { cfg.far_ms };
        means.push((cfg.base_ms + cfg.difficulty_ms * difficulty(map, t, patch_size)? + far).ln());
    }
    let mut rng = seeds::rng(seed, "synth/subjects");
    let mut out = Vec::with_capacity(trials.len() * cfg.n_subjects);
    for s in 0..cfg.n_subjects {
        let offset = cfg.subject_sd * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        for (t, m) in trials.iter().zip(&means) {
            let e: f64 = StandardNormal.sample(&mut rng);
            out.push(BehavioralRecord {
                trial_id: t.trial_id.clone(),
                subject_id: format!("s{s:03}"),
                rt_ms: (m + offset + cfg.response_sd * e).exp(),
                correct: rng.random::<f64>() >= cfg.error_rate,
            });
        }
    }
    Ok(out)
}

/// Random orthogonal `n × n` matrix (row-major) by Gram-Schmidt on a
/// Gaussian draw.
pub fn random_rotation<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v = gaussian(rng, n);
        for u in &q {
            let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= p * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q.concat()
}

fn matvec(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// How a student representation is derived from a teacher one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    /// Extra per-token nuisance dimensions.
    pub extra_dims: usize,
    pub nuisance_sd: f64,
    /// Off-diagonal strength of the invertible mixing of teacher channels.
    pub mixing: f64,
}

impl Default for Misalignment {
    fn default() -> Self {
        Misalignment {
            extra_dims: 8,
            nuisance_sd: 2.0,
            mixing: 0.5,
        }
    }
}

/// Rotates the teacher maps by a random orthogonal `Q` and builds student
/// maps `R [M t; n]`: a mixed copy of the teacher token stacked on
/// per-token Gaussian nuisance, then rotated by `R`. A linear adapter can
/// undo this exactly, so the Gram loss can be driven to zero.
pub fn misaligned_pair(
    base: &HashMap<String, FeatureMap>,
    m: &Misalignment,
    seed: u64,
) -> Result<(HashMap<String, FeatureMap>, HashMap<String, FeatureMap>)> {
    let d = base.values().next().map_or(0, |f| f.d);
    let k = m.extra_dims;
    let mut rng = seeds::rng(seed, "synth/misalign");
    let q = random_rotation(d, &mut rng);
    let r = random_rotation(d + k, &mut rng);
    let mut mix = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            mix[i * d + j] = (i == j) as u8 as f64 + m.mixing * g / (d as f64).sqrt();
        }
    }
    let mut ids: Vec<&String> = base.keys().collect();
    ids.sort();
    let (mut teacher, mut student) = (HashMap::new(), HashMap::new());
    let (mut t, mut stacked, mut s) = (vec![0.0; d], vec![0.0; d + k], vec![0.0; d + k]);
    for id in ids {
        let f = &base[id];
        if f.d != d {
            return Err(Error::Argument(format!("map {id} has d = {}, expected {d}", f.d)));
        }
        let mut noise = seeds::rng(seed, &format!("synth/nuisance/{id}"));
        let (mut td, mut sd) = (Vec::with_capacity(f.data.len()), Vec::with_capacity(f.n_tokens() * (d + k)));
        for token in f.tokens() {
            let x: Vec<f64> = token.iter().map(|&v| v as f64).collect();
            matvec(&q, d, &x, &mut t);
            td.extend(t.iter().map(|&v| v as f32));
            matvec(&mix, d, &x, &mut stacked[..d]);
            for v in &mut stacked[d..] {
                *v = m.nuisance_sd * Distribution::<f64>::sample(&StandardNormal, &mut noise);
            }
            matvec(&r, d + k, &stacked, &mut s);
            sd.extend(s.iter().map(|&v| v as f32));
        }
        teacher.insert(id.clone(), FeatureMap::new(id.clone(), f.h, f.w, d, td)?);
        student.insert(id.clone(), FeatureMap::new(id.clone(), f.h, f.w, d + k, sd)?);
    }
    Ok((teacher, student))
}
