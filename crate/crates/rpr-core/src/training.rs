//! Triplet metric learning with batch-hard mining, dynamic batch sizing, and
//! augmentation.
//!
//! Each step embeds a place-balanced batch with the array path, mines the
//! hardest in-batch positive/negative per anchor, differentiates the triplet
//! loss on a small tape over the descriptor leaves, then re-runs only the
//! elements with non-zero descriptor gradient through the taped forward to
//! accumulate parameter gradients (the two-phase split keeps at most a couple
//! of recorded graphs alive at once). Gradient accumulation and every RNG
//! draw happen in batch order, so a seed fixes the whole loss curve.

use crate::autodiff::optim::{RadamConfig, RadamState};
use crate::autodiff::Tape;
use crate::error::RprError;
use crate::geometry::PointCloud;
use crate::network::{Descriptor, RprNet, RprNetConfig, GEM_P_RANGE};
use crate::Result;
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// One location-tagged training cloud.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub cloud: PointCloud,
    pub position: [f64; 2],
}

/// Triplet loss and positive/negative radii (meters, map frame).
#[derive(Debug, Clone, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
    pub pos_radius: f64,
    pub neg_radius: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            pos_radius: 10.0,
            neg_radius: 50.0,
        }
    }
}

/// Dynamic batch sizing state.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub current_size: usize,
    pub max_size: usize,
    pub expansion: f64,
    pub active_ratio_threshold: f64,
}

impl Default for BatchState {
    fn default() -> Self {
        Self {
            current_size: 16,
            max_size: 96,
            expansion: 0.40,
            active_ratio_threshold: 0.70,
        }
    }
}

/// Rotation applied as the last augmentation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationAugment {
    Off,
    Z { theta_max: f64 },
    So3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub translation_range: f64,
    pub removal_fraction_max: f64,
    pub erase_fraction_max: f64,
    pub rotation_augment: RotationAugment,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.001,
            jitter_clip: 0.002,
            translation_range: 0.01,
            removal_fraction_max: 0.10,
            erase_fraction_max: 0.10,
            rotation_augment: RotationAugment::Off,
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn off() -> Self {
        Self {
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            translation_range: 0.0,
            removal_fraction_max: 0.0,
            erase_fraction_max: 0.0,
            rotation_augment: RotationAugment::Off,
        }
    }
}

/// Hinge triplet loss max(d_pos − d_neg + m, 0).
pub fn triplet_loss(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (d_pos - d_neg + margin).max(0.0)
}

/// Indices into the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

fn pos_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Per anchor: the in-batch positive with maximal descriptor distance and the
/// negative with minimal one. Anchors lacking either are skipped; samples in
/// the dead zone between the radii are neither positive nor negative. Ties
/// break toward the smaller batch index.
pub fn batch_hard_mine(
    descriptors: &[Descriptor],
    positions: &[[f64; 2]],
    cfg: &TripletConfig,
) -> Result<Vec<Triplet>> {
    if descriptors.len() != positions.len() {
        return Err(RprError::InvalidArgument(format!(
            "{} descriptors but {} positions",
            descriptors.len(),
            positions.len()
        )));
    }
    let n = descriptors.len();
    let mut triplets = Vec::new();
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let pd = pos_dist(positions[a], positions[j]);
            if pd <= cfg.pos_radius {
                let d = descriptors[a].distance(&descriptors[j]);
                if hardest_pos.map_or(true, |(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if pd >= cfg.neg_radius {
                let d = descriptors[a].distance(&descriptors[j]);
                if hardest_neg.map_or(true, |(_, best)| d < best) {
                    hardest_neg = Some((j, d));
                }
            }
        }
        if let (Some((p, _)), Some((ng, _))) = (hardest_pos, hardest_neg) {
            triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative: ng,
            });
        }
    }
    if triplets.is_empty() {
        return Err(RprError::EmptyBatch);
    }
    Ok(triplets)
}

/// Grows the batch by the expansion rate (rounded, capped) when the active
/// count falls below the threshold fraction of the current size. Evaluated
/// once per epoch on the epoch-mean active-triplet count; the total count is
/// carried for logging.
pub fn dynamic_batch_update(
    state: &BatchState,
    active_triplets: f64,
    _total_triplets: f64,
) -> BatchState {
    let mut next = state.clone();
    if active_triplets / (state.current_size as f64) < state.active_ratio_threshold {
        let grown = (state.current_size as f64 * (1.0 + state.expansion)).round() as usize;
        next.current_size = grown.min(state.max_size);
    }
    next
}

/// Applies, in order: clipped Gaussian jitter, global uniform translation,
/// random point removal (re-padded by duplicating survivors), random-cuboid
/// erasing (same re-pad), and the optional rotation. The rotation draw is
/// consumed in every mode so Off/Z/So3 share the same jitter stream.
pub fn augment(cloud: &PointCloud, cfg: &AugmentConfig, rng_seed: u64) -> PointCloud {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let n = cloud.len();
    let mut pts: Vec<[f64; 3]> = cloud.points().to_vec();

    // jitter
    for p in &mut pts {
        for c in p.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            let d = (g * cfg.jitter_sigma).clamp(-cfg.jitter_clip, cfg.jitter_clip);
            *c += d;
        }
    }

    // global translation
    let t = [
        rng.random_range(-1.0..=1.0) * cfg.translation_range,
        rng.random_range(-1.0..=1.0) * cfg.translation_range,
        rng.random_range(-1.0..=1.0) * cfg.translation_range,
    ];
    for p in &mut pts {
        for (c, tc) in p.iter_mut().zip(t) {
            *c += tc;
        }
    }

    // removal with re-pad
    let remove_frac = rng.random_range(0.0..=1.0) * cfg.removal_fraction_max;
    let remove_count = ((n as f64) * remove_frac).floor() as usize;
    if remove_count > 0 && remove_count < n {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let keep_set: Vec<usize> = {
            let mut kept = order[remove_count..].to_vec();
            kept.sort_unstable();
            kept
        };
        let mut kept_pts: Vec<[f64; 3]> = keep_set.iter().map(|&i| pts[i]).collect();
        while kept_pts.len() < n {
            let dup = rng.random_range(0..kept_pts.len());
            kept_pts.push(kept_pts[dup]);
        }
        pts = kept_pts;
    }

    // cuboid erasing with re-pad, capped at the configured fraction
    let erase_cap = ((n as f64) * cfg.erase_fraction_max).floor() as usize;
    let center = pts[rng.random_range(0..pts.len())];
    let half = [
        rng.random_range(0.05..0.3),
        rng.random_range(0.05..0.3),
        rng.random_range(0.05..0.3),
    ];
    if erase_cap > 0 {
        let mut kept_pts: Vec<[f64; 3]> = Vec::with_capacity(n);
        let mut erased = 0usize;
        for &p in &pts {
            let inside = (p[0] - center[0]).abs() <= half[0]
                && (p[1] - center[1]).abs() <= half[1]
                && (p[2] - center[2]).abs() <= half[2];
            if inside && erased < erase_cap {
                erased += 1;
            } else {
                kept_pts.push(p);
            }
        }
        while kept_pts.len() < n {
            let dup = rng.random_range(0..kept_pts.len());
            kept_pts.push(kept_pts[dup]);
        }
        pts = kept_pts;
    }

    // rotation last; the draws always happen
    let (u1, u2, u3) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
    match cfg.rotation_augment {
        RotationAugment::Off => {}
        RotationAugment::Z { theta_max } => {
            let theta = (2.0 * u1 - 1.0) * theta_max;
            let (s, c) = theta.sin_cos();
            for p in &mut pts {
                let (x, y) = (p[0], p[1]);
                p[0] = c * x - s * y;
                p[1] = s * x + c * y;
            }
        }
        RotationAugment::So3 => {
            let tau = std::f64::consts::TAU;
            let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
            let (x, y, z, w) = (
                a * (tau * u2).sin(),
                a * (tau * u2).cos(),
                b * (tau * u3).sin(),
                b * (tau * u3).cos(),
            );
            let r = crate::geometry::RotationMatrix {
                r: [
                    [
                        1.0 - 2.0 * (y * y + z * z),
                        2.0 * (x * y - z * w),
                        2.0 * (x * z + y * w),
                    ],
                    [
                        2.0 * (x * y + z * w),
                        1.0 - 2.0 * (x * x + z * z),
                        2.0 * (y * z - x * w),
                    ],
                    [
                        2.0 * (x * z - y * w),
                        2.0 * (y * z + x * w),
                        1.0 - 2.0 * (x * x + y * y),
                    ],
                ],
            };
            for p in &mut pts {
                *p = r.apply(*p);
            }
        }
    }

    PointCloud::new(pts).expect("augmentation preserves finiteness")
}

/// Full training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub net: RprNetConfig,
    pub triplet: TripletConfig,
    pub augment: AugmentConfig,
    pub batch: BatchState,
    pub optimizer: RadamConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplicative learning-rate decay per epoch (1.0 = constant).
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: RprNetConfig::desk(),
            triplet: TripletConfig::default(),
            augment: AugmentConfig::default(),
            batch: BatchState::default(),
            optimizer: RadamConfig::default(),
            epochs: 30,
            seed: 0,
            lr_decay: 1.0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub active_ratio: f64,
    pub batch_size: usize,
}

impl EpochMetrics {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} loss={} active_ratio={} batch_size={}",
            self.epoch, self.mean_loss, self.active_ratio, self.batch_size
        )
    }
}

#[derive(Debug)]
pub struct TrainResult {
    pub model: RprNet,
    pub optimizer: RadamState,
    pub metrics: Vec<EpochMetrics>,
    /// Populated when a numerical abort rolled back to the last good epoch.
    pub aborted: Option<String>,
}

fn cluster_by_position(dataset: &[TrainingSample], pos_radius: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new(); // representative, members
    for (i, s) in dataset.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|(rep, _)| pos_dist(dataset[*rep].position, s.position) <= pos_radius)
        {
            Some((_, members)) => members.push(i),
            None => clusters.push((i, vec![i])),
        }
    }
    clusters.into_iter().map(|(_, m)| m).collect()
}

/// Place-balanced batches: clusters visited in shuffled order, two samples
/// per visit, until the batch is full or the epoch pool is drained.
fn compose_batches(
    clusters: &[Vec<usize>],
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<Vec<usize>> {
    let mut queues: Vec<Vec<usize>> = clusters
        .iter()
        .map(|members| {
            let mut q = members.clone();
            q.shuffle(rng);
            q
        })
        .collect();
    let mut cluster_order: Vec<usize> = (0..clusters.len()).collect();
    cluster_order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    loop {
        let mut progressed = false;
        for &ci in &cluster_order {
            if current.len() >= batch_size {
                batches.push(std::mem::take(&mut current));
            }
            let queue = &mut queues[ci];
            let take = 2.min(queue.len()).min(batch_size - current.len());
            for _ in 0..take {
                current.push(queue.pop().unwrap());
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    if current.len() >= 4 {
        batches.push(current);
    }
    batches
}

/// Runs the full loop; `on_epoch` fires after each epoch with its metrics.
pub fn train(
    dataset: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(RprError::InvalidArgument("empty dataset".into()));
    }
    let mut model = RprNet::init(cfg.net.clone(), cfg.seed)?;
    let mut optimizer = RadamState::new(&model.params);
    let clusters = cluster_by_position(dataset, cfg.triplet.pos_radius);
    let mut batch_state = cfg.batch.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut snapshot = (model.clone(), optimizer.clone());
    let n_params = model.params.len();
    let gem_idx = model.params.id_of("gem.p").unwrap();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(epoch as u64 + 1)));
        let batches = compose_batches(&clusters, batch_state.current_size, &mut rng);
        let mut loss_sum = 0.0;
        let mut triplet_count = 0usize;
        let mut active_sum = 0.0;
        let mut batch_count = 0usize;
        let opt_cfg = RadamConfig {
            lr: cfg.optimizer.lr * cfg.lr_decay.powi(epoch as i32),
            ..cfg.optimizer.clone()
        };

        for batch in &batches {
            // all RNG consumed serially before the parallel sections
            let aug_seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let clouds: Vec<PointCloud> = batch
                .par_iter()
                .zip(aug_seeds.par_iter())
                .map(|(&si, &aseed)| augment(&dataset[si].cloud, &cfg.augment, aseed))
                .collect();
            let positions: Vec<[f64; 2]> = batch.iter().map(|&si| dataset[si].position).collect();
            let geometries: Vec<crate::network::CloudGeometry> = clouds
                .par_iter()
                .map(|c| model.prepare_geometry(c))
                .collect::<Result<Vec<_>>>()?;
            let descriptors: Vec<Descriptor> = geometries
                .par_iter()
                .map(|g| model.forward_arrays(g))
                .collect::<Result<Vec<_>>>()?;

            let triplets = match batch_hard_mine(&descriptors, &positions, &cfg.triplet) {
                Ok(t) => t,
                Err(RprError::EmptyBatch) => continue, // resample next batch
                Err(e) => return Err(e),
            };

            // differentiate the loss over descriptor leaves
            let mut lt = Tape::new();
            let leaves: Vec<_> = descriptors
                .iter()
                .map(|d| lt.leaf_1d(ndarray::Array1::from_vec(d.values.clone())))
                .collect();
            let mut per_triplet = Vec::with_capacity(triplets.len());
            for t in &triplets {
                let diff_p = lt.sub(leaves[t.anchor], leaves[t.positive])?;
                let sq_p = lt.mul(diff_p, diff_p)?;
                let ssq_p = lt.sum(sq_p, &[0]);
                let cl_p = lt.clamp_min(ssq_p, 1e-24);
                let d_pos = lt.sqrt(cl_p);
                let diff_n = lt.sub(leaves[t.anchor], leaves[t.negative])?;
                let sq_n = lt.mul(diff_n, diff_n)?;
                let ssq_n = lt.sum(sq_n, &[0]);
                let cl_n = lt.clamp_min(ssq_n, 1e-24);
                let d_neg = lt.sqrt(cl_n);
                let gap = lt.sub(d_pos, d_neg)?;
                let shifted = lt.add_scalar(gap, cfg.triplet.margin);
                per_triplet.push(lt.relu(shifted));
            }
            let active = per_triplet
                .iter()
                .filter(|&&v| lt.value(v).iter().next().copied().unwrap() > 0.0)
                .count();
            let mut total = per_triplet[0];
            for &v in &per_triplet[1..] {
                total = lt.add(total, v)?;
            }
            let loss = lt.scale(total, 1.0 / triplets.len() as f64);
            let loss_value = lt.value(loss).iter().next().copied().unwrap();
            let mut lgrads = lt.backward(loss)?;
            let desc_grads: Vec<Option<ArrayD<f64>>> =
                leaves.iter().map(|&l| lgrads.take(l)).collect();

            // per-element parameter gradients, only where the loss reaches
            let active_elems: Vec<(usize, ArrayD<f64>)> = desc_grads
                .into_iter()
                .enumerate()
                .filter_map(|(i, g)| {
                    g.and_then(|g| {
                        if g.iter().any(|v| *v != 0.0) {
                            Some((i, g))
                        } else {
                            None
                        }
                    })
                })
                .collect();
            let partials: Vec<Vec<Option<ArrayD<f64>>>> = active_elems
                .par_iter()
                .map(|(i, seed_grad)| -> Result<Vec<Option<ArrayD<f64>>>> {
                    let mut t = Tape::new();
                    let pvars = model.tape_params(&mut t);
                    let d = model.forward_tape(&mut t, &geometries[*i], &pvars)?;
                    let mut g = t.backward_seeded(d, seed_grad.clone())?;
                    Ok(pvars.iter().map(|&v| g.take(v)).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads: Vec<Option<ArrayD<f64>>> = (0..n_params).map(|_| None).collect();
            for partial in partials {
                for (slot, g) in grads.iter_mut().zip(partial) {
                    if let Some(g) = g {
                        match slot {
                            Some(acc) => *acc += &g,
                            None => *slot = Some(g),
                        }
                    }
                }
            }

            if let Err(e) = optimizer.step(&mut model.params, &grads, &opt_cfg) {
                // roll back to the last good epoch
                let (m, o) = snapshot;
                return Ok(TrainResult {
                    model: m,
                    optimizer: o,
                    metrics,
                    aborted: Some(e.to_string()),
                });
            }
            // keep the GeM exponent in its stable range
            let p = model.params.value_mut(gem_idx);
            p.mapv_inplace(|v| v.clamp(GEM_P_RANGE.0, GEM_P_RANGE.1));

            loss_sum += loss_value * triplets.len() as f64;
            triplet_count += triplets.len();
            active_sum += active as f64;
            batch_count += 1;
        }

        let em = EpochMetrics {
            epoch,
            mean_loss: if triplet_count > 0 {
                loss_sum / triplet_count as f64
            } else {
                0.0
            },
            active_ratio: if batch_count > 0 {
                (active_sum / batch_count as f64) / batch_state.current_size as f64
            } else {
                0.0
            },
            batch_size: batch_state.current_size,
        };
        on_epoch(&em);
        metrics.push(em);
        let mean_active = if batch_count > 0 {
            active_sum / batch_count as f64
        } else {
            0.0
        };
        batch_state = dynamic_batch_update(&batch_state, mean_active, triplet_count as f64);
        snapshot = (model.clone(), optimizer.clone());
    }

    Ok(TrainResult {
        model,
        optimizer,
        metrics,
        aborted: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triplet_loss_identities() {
        assert_eq!(triplet_loss(0.3, 0.9, 0.2), 0.0);
        assert!((triplet_loss(0.9, 0.3, 0.2) - 0.8).abs() < 1e-15);
        assert!((triplet_loss(0.5, 0.5, 0.2) - 0.2).abs() < 1e-15);
    }

    fn desc(vals: &[f64]) -> Descriptor {
        Descriptor {
            values: vals.to_vec(),
        }
    }

    #[test]
    fn mining_unique_triplet() {
        let descriptors = vec![desc(&[0.0]), desc(&[1.0]), desc(&[5.0])];
        let positions = vec![[0.0, 0.0], [1.0, 0.0], [100.0, 0.0]];
        let t = batch_hard_mine(&descriptors, &positions, &TripletConfig::default()).unwrap();
        assert_eq!(
            t[0],
            Triplet {
                anchor: 0,
                positive: 1,
                negative: 2
            }
        );
    }

    #[test]
    fn mining_matches_exhaustive_on_known_matrix() {
        // 5 samples: 0,1,2 same place; 3,4 far away together
        let descriptors = vec![
            desc(&[0.0, 0.0]),
            desc(&[1.0, 0.0]),
            desc(&[0.0, 2.0]),
            desc(&[0.5, 0.0]),
            desc(&[4.0, 0.0]),
        ];
        let positions = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [200.0, 0.0],
            [201.0, 0.0],
        ];
        let t = batch_hard_mine(&descriptors, &positions, &TripletConfig::default()).unwrap();
        // anchor 0: hardest pos = 2 (dist 2), hardest neg = 3 (dist 0.5)
        assert!(t.contains(&Triplet {
            anchor: 0,
            positive: 2,
            negative: 3
        }));
        // anchor 3: positive 4 (only); negatives 0 and 1 tie at 0.5 → index 0
        assert!(t.contains(&Triplet {
            anchor: 3,
            positive: 4,
            negative: 0
        }));
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn mining_all_same_place_is_empty_batch() {
        let descriptors = vec![desc(&[0.0]), desc(&[1.0]), desc(&[2.0])];
        let positions = vec![[0.0, 0.0]; 3];
        assert!(matches!(
            batch_hard_mine(&descriptors, &positions, &TripletConfig::default()),
            Err(RprError::EmptyBatch)
        ));
    }

    #[test]
    fn dynamic_batch_growth_and_cap() {
        let state = BatchState::default();
        // 8 of 16 active → grows to round(22.4) = 22
        let next = dynamic_batch_update(&state, 8.0, 16.0);
        assert_eq!(next.current_size, 22);
        // at the cap it stays
        let capped = BatchState {
            current_size: 96,
            ..BatchState::default()
        };
        assert_eq!(dynamic_batch_update(&capped, 1.0, 96.0).current_size, 96);
        // healthy ratio leaves it alone
        assert_eq!(dynamic_batch_update(&state, 12.0, 16.0).current_size, 16);
    }

    #[test]
    fn dynamic_batch_full_growth_trace() {
        let mut state = BatchState::default();
        let mut trace = vec![state.current_size];
        for _ in 0..7 {
            state = dynamic_batch_update(&state, 0.0, 0.0);
            trace.push(state.current_size);
        }
        assert_eq!(trace, vec![16, 22, 31, 43, 60, 84, 96, 96]);
    }

    fn unit_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        crate::geometry::normalize_cloud(
            &PointCloud::new(
                (0..n)
                    .map(|_| {
                        [
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                        ]
                    })
                    .collect(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn augment_zero_magnitudes_is_identity() {
        let cloud = unit_cloud(100, 1);
        let out = augment(&cloud, &AugmentConfig::off(), 99);
        assert_eq!(out, cloud);
    }

    #[test]
    fn augment_preserves_point_count() {
        let cloud = unit_cloud(4096, 2);
        let cfg = AugmentConfig::default();
        for seed in 0..5 {
            assert_eq!(augment(&cloud, &cfg, seed).len(), 4096);
        }
    }

    #[test]
    fn augment_jitter_respects_clip() {
        let cloud = unit_cloud(500, 3);
        let cfg = AugmentConfig {
            jitter_sigma: 0.001,
            jitter_clip: 0.002,
            translation_range: 0.0,
            removal_fraction_max: 0.0,
            erase_fraction_max: 0.0,
            rotation_augment: RotationAugment::Off,
        };
        for seed in 0..10 {
            let out = augment(&cloud, &cfg, seed);
            for (a, b) in cloud.points().iter().zip(out.points()) {
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() <= 0.002 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn augment_displacement_bounded_by_clip_plus_translation() {
        let cloud = unit_cloud(300, 4);
        let cfg = AugmentConfig {
            removal_fraction_max: 0.0,
            erase_fraction_max: 0.0,
            ..AugmentConfig::default()
        };
        let bound = cfg.jitter_clip + cfg.translation_range;
        for seed in 0..10 {
            let out = augment(&cloud, &cfg, seed);
            for (a, b) in cloud.points().iter().zip(out.points()) {
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() <= bound + 1e-15);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // mining equals exhaustive search on random batches up to size 32
        #[test]
        fn mining_oracle_equivalence(seed in 0u64..2000) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let b = rng.random_range(2..=32usize);
            let l = rng.random_range(1..=6usize);
            let n_places = rng.random_range(1..=6usize);
            let descriptors: Vec<Descriptor> = (0..b)
                .map(|_| desc(&(0..l).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let positions: Vec<[f64; 2]> = (0..b)
                .map(|_| {
                    let place = rng.random_range(0..n_places);
                    [place as f64 * 100.0, 0.0]
                })
                .collect();
            let cfg = TripletConfig::default();
            let got = batch_hard_mine(&descriptors, &positions, &cfg);
            // independent exhaustive scan
            let mut want = Vec::new();
            for a in 0..b {
                let mut best_pos: Option<(usize, f64)> = None;
                let mut best_neg: Option<(usize, f64)> = None;
                for j in 0..b {
                    if j == a { continue; }
                    let pd = pos_dist(positions[a], positions[j]);
                    let dd = descriptors[a].distance(&descriptors[j]);
                    if pd <= cfg.pos_radius {
                        if best_pos.is_none() || dd > best_pos.unwrap().1 {
                            best_pos = Some((j, dd));
                        }
                    }
                    if pd >= cfg.neg_radius {
                        if best_neg.is_none() || dd < best_neg.unwrap().1 {
                            best_neg = Some((j, dd));
                        }
                    }
                }
                if let (Some((p, _)), Some((n, _))) = (best_pos, best_neg) {
                    want.push(Triplet { anchor: a, positive: p, negative: n });
                }
            }
            match got {
                Ok(t) => prop_assert_eq!(t, want),
                Err(RprError::EmptyBatch) => prop_assert!(want.is_empty()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn loss_non_negative_and_inactive_gradient_zero(
            d_pos in 0.0f64..3.0, d_neg in 0.0f64..3.0
        ) {
            let m = 0.2;
            let loss = triplet_loss(d_pos, d_neg, m);
            prop_assert!(loss >= 0.0);
            if d_pos - d_neg + m < 0.0 {
                // inactive: nudging the inputs cannot change the loss
                prop_assert_eq!(triplet_loss(d_pos + 1e-9, d_neg, m), 0.0);
            }
        }
    }
}
