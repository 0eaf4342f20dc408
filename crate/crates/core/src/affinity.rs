//! Cosine affinity maps from a seed patch, and cosine Gram matrices.
//!
//! Both go through [`unit_tokens`], so `gram(map)[i][j]` and
//! `affinity_from_patch(map, i)[j]` are computed by identical arithmetic.
//! Zero tokens have cosine 0 with everything, including themselves.

use crate::tensorio::FeatureMap;
use crate::{Error, Result};

/// `values` are row-major over the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap {
    pub h: usize,
    pub w: usize,
    pub seed: (usize, usize),
    pub values: Vec<f64>,
}

impl AffinityMap {
    pub fn seed_index(&self) -> usize {
        self.seed.0 * self.w + self.seed.1
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.w + col]
    }
}

/// Symmetric `n × n` matrix, `n = h·w`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub map: FeatureMap,
    /// Flat indices of tokens with zero norm; left as zero vectors.
    pub zero_tokens: Vec<usize>,
}

/// Unit-normalized tokens in `f64`, plus the indices of zero tokens.
pub fn unit_tokens(map: &FeatureMap) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(map.data.len());
    let mut zeros = Vec::new();
    for (i, token) in map.tokens().enumerate() {
        let norm = token.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            zeros.push(i);
            out.extend(std::iter::repeat_n(0.0, token.len()));
        } else {
            out.extend(token.iter().map(|&v| v as f64 / norm));
        }
    }
    (out, zeros)
}

pub fn l2_normalize_tokens(map: &FeatureMap) -> Normalized {
    let (unit, zero_tokens) = unit_tokens(map);
    Normalized {
        map: FeatureMap {
            image_id: map.image_id.clone(),
            h: map.h,
            w: map.w,
            d: map.d,
            data: unit.into_iter().map(|v| v as f32).collect(),
        },
        zero_tokens,
    }
}

#[inline]
pub(crate) fn cosine_of_units(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

pub fn affinity_from_patch(map: &FeatureMap, seed: (usize, usize)) -> Result<AffinityMap> {
    let (row, col) = seed;
    if row >= map.h || col >= map.w {
        return Err(Error::Argument(format!(
            "seed ({row}, {col}) outside {}x{} grid",
            map.h, map.w
        )));
    }
    let (unit, _) = unit_tokens(map);
    let d = map.d;
    let s = row * map.w + col;
    let seed_vec = &unit[s * d..(s + 1) * d];
    let values = unit.chunks_exact(d).map(|t| cosine_of_units(seed_vec, t)).collect();
    Ok(AffinityMap {
        h: map.h,
        w: map.w,
        seed,
        values,
    })
}

/// Patch `(row, col)` containing pixel `(x, y)` on a grid of `grid.0` rows by
/// `grid.1` columns.
pub fn pixel_to_patch(dot_px: (u32, u32), patch_size: u32, grid: (usize, usize)) -> Result<(usize, usize)> {
    if patch_size == 0 {
        return Err(Error::Argument("patch_size must be positive".into()));
    }
    let (x, y) = dot_px;
    let (row, col) = ((y / patch_size) as usize, (x / patch_size) as usize);
    if row >= grid.0 || col >= grid.1 {
        return Err(Error::Argument(format!(
            "pixel ({x}, {y}) maps to patch ({row}, {col}) outside {}x{} grid",
            grid.0, grid.1
        )));
    }
    Ok((row, col))
}

pub fn gram(map: &FeatureMap) -> GramMatrix {
    let (unit, _) = unit_tokens(map);
    gram_of_units(&unit, map.d)
}

pub(crate) fn gram_of_units(unit: &[f64], d: usize) -> GramMatrix {
    let n = unit.len() / d;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let a = &unit[i * d..(i + 1) * d];
        for j in i..n {
            let v = cosine_of_units(a, &unit[j * d..(j + 1) * d]);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    GramMatrix { n, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fm(h: usize, w: usize, d: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new("t", h, w, d, data).unwrap()
    }

    fn random_map(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap {
        let mut rng = crate::seeds::rng_from(seed);
        fm(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn normalize_three_four() {
        let n = l2_normalize_tokens(&fm(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]));
        assert!((n.map.data[0] - 0.6).abs() < 1e-7);
        assert!((n.map.data[1] - 0.8).abs() < 1e-7);
        assert_eq!(&n.map.data[2..], &[0.0, 0.0]);
        assert_eq!(n.zero_tokens, vec![1]);
    }

    #[test]
    fn normalized_random_tokens_have_unit_norm() {
        let n = l2_normalize_tokens(&random_map(8, 8, 16, 3));
        for t in n.map.tokens() {
            let norm = t.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_tokens_give_all_ones() {
        let data = [0.3f32, -1.2, 2.0].repeat(6);
        let a = affinity_from_patch(&fm(2, 3, 3, data), (1, 2)).unwrap();
        assert!(a.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_seed() {
        // seed token e0, all others e1
        let mut data = vec![0.0f32; 4 * 2];
        data[0] = 1.0;
        for t in 1..4 {
            data[t * 2 + 1] = 2.5;
        }
        let a = affinity_from_patch(&fm(2, 2, 2, data), (0, 0)).unwrap();
        assert_eq!(a.values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_dot_over_norms_oracle() {
        let m = random_map(4, 4, 8, 9);
        for s in 0..16 {
            let a = affinity_from_patch(&m, (s / 4, s % 4)).unwrap();
            let seed = m.token(s);
            for p in 0..16 {
                let t = m.token(p);
                let dot: f64 = seed.iter().zip(t).map(|(x, y)| *x as f64 * *y as f64).sum();
                let na: f64 = seed.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = t.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                assert!((a.values[p] - dot / (na * nb)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_token_has_zero_affinity() {
        let a = affinity_from_patch(&fm(1, 2, 2, vec![0.0, 0.0, 1.0, 1.0]), (0, 0)).unwrap();
        assert_eq!(a.values, vec![0.0, 0.0]);
    }

    #[test]
    fn out_of_bounds_seed() {
        assert!(matches!(
            affinity_from_patch(&random_map(2, 2, 2, 1), (2, 0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn pixel_to_patch_floor() {
        assert_eq!(pixel_to_patch((0, 0), 16, (32, 32)).unwrap(), (0, 0));
        assert_eq!(pixel_to_patch((16, 15), 16, (32, 32)).unwrap(), (0, 1));
        assert_eq!(pixel_to_patch((511, 511), 16, (32, 32)).unwrap(), (31, 31));
        assert!(pixel_to_patch((512, 0), 16, (32, 32)).is_err());
    }

    #[test]
    fn gram_closed_forms() {
        let g = gram(&fm(1, 2, 2, vec![1.0, 2.0, 1.0, 2.0]));
        assert!(g.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let g = gram(&fm(1, 2, 2, vec![3.0, 0.0, 0.0, -2.0]));
        assert_eq!(g.values, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn gram_rows_equal_affinity_maps() {
        let m = random_map(3, 3, 4, 5);
        let g = gram(&m);
        for i in 0..9 {
            let a = affinity_from_patch(&m, (i / 3, i % 3)).unwrap();
            for j in 0..9 {
                assert_eq!(g.get(i, j), a.values[j]);
            }
        }
    }

    #[test]
    fn positive_scaling_invariance() {
        let m = random_map(3, 4, 5, 21);
        let mut scaled = m.clone();
        for (i, v) in scaled.data.iter_mut().enumerate() {
            *v *= 0.5 + (i / 5) as f32;
        }
        let a = affinity_from_patch(&m, (1, 1)).unwrap();
        let b = affinity_from_patch(&scaled, (1, 1)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        for seed in 0..5 {
            let g = gram(&random_map(3, 3, 4, 100 + seed));
            let m = nalgebra::DMatrix::from_row_slice(g.n, g.n, &g.values);
            let eig = m.symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-5);
        }
    }
}
