//! Synthetic place dataset: a desk-scale stand-in for the benchmark protocol.
//!
//! Each place is a random arrangement of 5–15 surface-sampled primitives
//! (boxes, cylinders, plane patches). Variants of a place resample the same
//! surfaces, crop a random directional band (occlusion), and jitter, then get
//! normalized like benchmark submaps. Places sit on a grid with 100 m spacing
//! so the 10 m / 25 m / 50 m rules are unambiguous: every same-place pair is a
//! positive, every cross-place pair a negative.

use crate::dataio::{write_bin_cloud, write_manifest};
use crate::error::RprError;
use crate::geometry::{normalize_cloud, random_rotation_from, PointCloud, RotationMatrix, RotationMode};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::{Path, PathBuf};

/// Grid spacing between places, meters.
pub const PLACE_SPACING_M: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_places: usize,
    pub variants_per_place: usize,
    pub train_per_place: usize,
    pub points_per_cloud: usize,
    pub structure_seed: u64,
    /// Fraction of the cloud removed by the directional occlusion crop,
    /// sampled per variant from [0, this].
    pub max_crop_fraction: f64,
    /// Gaussian surface jitter in local scene units.
    pub jitter_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_places: 64,
            variants_per_place: 8,
            train_per_place: 6,
            points_per_cloud: 1024,
            structure_seed: 0,
            max_crop_fraction: 0.2,
            jitter_sigma: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_places < 2 {
            return Err(RprError::InvalidArgument(
                "need at least 2 places".into(),
            ));
        }
        if self.variants_per_place == 0 || self.train_per_place > self.variants_per_place {
            return Err(RprError::InvalidArgument(format!(
                "train_per_place {} must not exceed variants_per_place {}",
                self.train_per_place, self.variants_per_place
            )));
        }
        if self.points_per_cloud < 8 {
            return Err(RprError::InvalidArgument(
                "points_per_cloud too small".into(),
            ));
        }
        Ok(())
    }
}

/// One place with all its variant clouds (already normalized).
#[derive(Debug, Clone)]
pub struct SynthPlace {
    pub position: [f64; 2],
    pub variants: Vec<PointCloud>,
}

/// In-memory generated dataset.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub places: Vec<SynthPlace>,
}

#[derive(Debug, Clone)]
enum Primitive {
    Box {
        center: [f64; 3],
        half: [f64; 3],
        rot: RotationMatrix,
    },
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_height: f64,
        rot: RotationMatrix,
    },
    Plane {
        center: [f64; 3],
        half_u: f64,
        half_v: f64,
        rot: RotationMatrix,
    },
}

impl Primitive {
    fn area(&self) -> f64 {
        match self {
            Primitive::Box { half, .. } => {
                8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
            }
            Primitive::Cylinder {
                radius,
                half_height,
                ..
            } => {
                let lateral = std::f64::consts::TAU * radius * 2.0 * half_height;
                let caps = 2.0 * std::f64::consts::PI * radius * radius;
                lateral + caps
            }
            Primitive::Plane { half_u, half_v, .. } => 4.0 * half_u * half_v,
        }
    }

    fn sample_point(&self, rng: &mut ChaCha20Rng) -> [f64; 3] {
        let local = match self {
            Primitive::Box { half, .. } => {
                // face picked by area, uniform within
                let areas = [
                    half[1] * half[2], // ±x
                    half[0] * half[2], // ±y
                    half[0] * half[1], // ±z
                ];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [
                    rng.random_range(-half[0]..half[0]),
                    rng.random_range(-half[1]..half[1]),
                    rng.random_range(-half[2]..half[2]),
                ];
                p[axis] = side * half[axis];
                p
            }
            Primitive::Cylinder {
                radius,
                half_height,
                ..
            } => {
                let lateral = std::f64::consts::TAU * radius * 2.0 * half_height;
                let cap = std::f64::consts::PI * radius * radius;
                let pick = rng.random_range(0.0..lateral + 2.0 * cap);
                if pick < lateral {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    [
                        radius * theta.cos(),
                        radius * theta.sin(),
                        rng.random_range(-half_height..*half_height),
                    ]
                } else {
                    let z = if pick < lateral + cap {
                        *half_height
                    } else {
                        -half_height
                    };
                    // uniform on the disc
                    let r = radius * rng.random::<f64>().sqrt();
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            Primitive::Plane { half_u, half_v, .. } => [
                rng.random_range(-half_u..*half_u),
                rng.random_range(-half_v..*half_v),
                0.0,
            ],
        };
        let (rot, center) = match self {
            Primitive::Box { rot, center, .. }
            | Primitive::Cylinder { rot, center, .. }
            | Primitive::Plane { rot, center, .. } => (rot, center),
        };
        let p = rot.apply(local);
        [p[0] + center[0], p[1] + center[1], p[2] + center[2]]
    }
}

fn random_primitives(rng: &mut ChaCha20Rng) -> Vec<Primitive> {
    let count = rng.random_range(5..=15);
    (0..count)
        .map(|_| {
            let center = [
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-1.0..3.0),
            ];
            let rot = random_rotation_from(rng, RotationMode::So3);
            match rng.random_range(0..3) {
                0 => Primitive::Box {
                    center,
                    half: [
                        rng.random_range(0.3..1.5),
                        rng.random_range(0.3..1.5),
                        rng.random_range(0.3..1.5),
                    ],
                    rot,
                },
                1 => Primitive::Cylinder {
                    center,
                    radius: rng.random_range(0.2..1.0),
                    half_height: rng.random_range(0.5..2.0),
                    rot,
                },
                _ => Primitive::Plane {
                    center,
                    half_u: rng.random_range(0.8..2.5),
                    half_v: rng.random_range(0.8..2.5),
                    rot,
                },
            }
        })
        .collect()
}

fn sample_surface(
    primitives: &[Primitive],
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<[f64; 3]> {
    let areas: Vec<f64> = primitives.iter().map(|p| p.area()).collect();
    let total: f64 = areas.iter().sum();
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.random_range(0.0..total);
        let mut chosen = primitives.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                chosen = i;
                break;
            }
            pick -= a;
        }
        pts.push(primitives[chosen].sample_point(rng));
    }
    pts
}

fn make_variant(
    primitives: &[Primitive],
    cfg: &SynthConfig,
    rng: &mut ChaCha20Rng,
) -> Result<PointCloud> {
    let crop = rng.random_range(0.0..=cfg.max_crop_fraction);
    let target = cfg.points_per_cloud;
    // oversample so the crop still leaves enough points
    let oversample = ((target as f64) / (1.0 - crop).max(0.5)).ceil() as usize + 8;
    let mut pts = sample_surface(primitives, oversample, rng);
    // directional occlusion: drop the far `crop` fraction along a random axis
    let dir = {
        let r = random_rotation_from(rng, RotationMode::So3);
        r.apply([0.0, 0.0, 1.0])
    };
    let mut proj: Vec<f64> = pts
        .iter()
        .map(|p| p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2])
        .collect();
    let keep = oversample - ((oversample as f64) * crop).floor() as usize;
    let mut order: Vec<usize> = (0..oversample).collect();
    order.sort_by(|&a, &b| proj[a].partial_cmp(&proj[b]).unwrap());
    order.truncate(keep);
    order.sort_unstable();
    let mut kept: Vec<[f64; 3]> = order.iter().map(|&i| pts[i]).collect();
    // restore the exact point budget
    while kept.len() < target {
        let dup = rng.random_range(0..kept.len());
        kept.push(kept[dup]);
    }
    kept.truncate(target);
    // surface jitter
    if cfg.jitter_sigma > 0.0 {
        for p in &mut kept {
            for c in p.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *c += n * cfg.jitter_sigma;
            }
        }
    }
    pts.clear();
    proj.clear();
    normalize_cloud(&PointCloud::new(kept)?)
}

/// Generates the full dataset in memory; deterministic per structure_seed.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let side = (cfg.n_places as f64).sqrt().ceil() as usize;
    let mut master = ChaCha20Rng::seed_from_u64(cfg.structure_seed);
    let mut places = Vec::with_capacity(cfg.n_places);
    for pi in 0..cfg.n_places {
        let place_seed: u64 = master.random();
        let mut place_rng = ChaCha20Rng::seed_from_u64(place_seed);
        let primitives = random_primitives(&mut place_rng);
        let position = [
            ((pi / side) as f64) * PLACE_SPACING_M,
            ((pi % side) as f64) * PLACE_SPACING_M,
        ];
        let mut variants = Vec::with_capacity(cfg.variants_per_place);
        for _ in 0..cfg.variants_per_place {
            let variant_seed: u64 = place_rng.random();
            let mut vrng = ChaCha20Rng::seed_from_u64(variant_seed);
            variants.push(make_variant(&primitives, cfg, &mut vrng)?);
        }
        places.push(SynthPlace { position, variants });
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        places,
    })
}

/// Writes clouds and the train/test manifests under `out_dir`.
///
/// Layout: `clouds/place###_var#.bin`, `train.csv`, `test.csv`. The first
/// `train_per_place` variants of each place form the train split.
pub fn write_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let data = synth_dataset(cfg)?;
    let clouds_dir = out_dir.join("clouds");
    std::fs::create_dir_all(&clouds_dir)?;
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (pi, place) in data.places.iter().enumerate() {
        for (vi, cloud) in place.variants.iter().enumerate() {
            let rel = format!("clouds/place{pi:03}_var{vi}.bin");
            write_bin_cloud(&out_dir.join(&rel), cloud)?;
            let row = (rel, place.position[0], place.position[1]);
            if vi < cfg.train_per_place {
                train_rows.push(row);
            } else {
                test_rows.push(row);
            }
        }
    }
    let train_path = out_dir.join("train.csv");
    let test_path = out_dir.join("test.csv");
    write_manifest(&train_path, &train_rows)?;
    write_manifest(&test_path, &test_rows)?;
    Ok((train_path, test_path))
}
