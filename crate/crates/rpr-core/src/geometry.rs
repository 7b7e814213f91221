//! Point-cloud sampling, grouping, rotation, and normalization primitives.
//!
//! All operations are pure: inputs are immutable and results depend only on
//! the arguments, so concurrent callers need no synchronization. Tie-breaking
//! is everywhere by smallest index, which keeps sampling reproducible.

use crate::error::RprError;
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Zero-vector guard for angle computations.
pub const EPS_VEC: f64 = 1e-9;

/// A point cloud: N×3 coordinates in the normalized scene frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    /// Builds a cloud, validating that it is non-empty and finite.
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(RprError::InvalidCloud("cloud has no points".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(RprError::InvalidCloud(format!(
                    "non-finite coordinate at point {i}"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    /// Sub-cloud at the given indices, in order.
    pub fn select(&self, ids: &[usize]) -> PointCloud {
        PointCloud {
            points: ids.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// A proper rotation: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    pub r: [[f64; 3]; 3],
}

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix {
        r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.r;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// Max deviation from RᵀR = I.
    pub fn orthogonality_defect(&self) -> f64 {
        let r = &self.r;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.r;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }
}

/// How a random rotation is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationMode {
    /// About the gravity (z) axis, angle uniform in [−θ_max, θ_max] radians.
    ZAxis { theta_max: f64 },
    /// Uniform over SO(3).
    So3,
}

/// Per-seed neighbor table shared by every convolution layer.
///
/// `seed_ids` index the source cloud; `neighbor_ids` index the *seed set*
/// (row k=0 is the seed itself).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    pub seed_ids: Vec<usize>,
    pub neighbor_ids: Vec<Vec<usize>>,
    pub k: usize,
}

impl GroupIndex {
    pub fn n_seeds(&self) -> usize {
        self.seed_ids.len()
    }

    /// Neighbor table flattened row-major (N_s·K), for feature gathering.
    pub fn flat_neighbors(&self) -> Vec<usize> {
        self.neighbor_ids.iter().flatten().copied().collect()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    dist2(a, b).sqrt()
}

/// Mean-subtracts, then scales by 1/max|coordinate| (one scalar for all axes).
///
/// A cloud of one repeated point maps to all zeros.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    let n = cloud.len() as f64;
    let mut mean = [0.0f64; 3];
    for p in cloud.points() {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let centered: Vec<[f64; 3]> = cloud.points().iter().map(|p| sub(*p, mean)).collect();
    let max_abs = centered
        .iter()
        .flat_map(|p| p.iter().map(|c| c.abs()))
        .fold(0.0f64, f64::max);
    if max_abs <= f64::EPSILON {
        return PointCloud::new(vec![[0.0; 3]; cloud.len()]);
    }
    let inv = 1.0 / max_abs;
    PointCloud::new(
        centered
            .into_iter()
            .map(|p| [p[0] * inv, p[1] * inv, p[2] * inv])
            .collect(),
    )
}

/// Greedy max-min farthest-point sampling.
///
/// The `start` point seeds the min-distance field but is not selected up
/// front; it can only be picked once its zero distance becomes maximal
/// (which happens exactly when every other point is already in). Ties break
/// toward the smallest index.
pub fn farthest_point_sample(cloud: &PointCloud, n_s: usize, start: usize) -> Result<Vec<usize>> {
    Ok(fps_with_margin(cloud, n_s, start)?.0)
}

/// As [`farthest_point_sample`], additionally reporting the smallest decision
/// margin (selected score minus runner-up score) across all greedy steps.
///
/// A margin comfortably above the coordinate noise level guarantees the same
/// selection on a rotated copy of the cloud.
pub fn fps_with_margin(
    cloud: &PointCloud,
    n_s: usize,
    start: usize,
) -> Result<(Vec<usize>, f64)> {
    let n = cloud.len();
    if n_s == 0 || n_s > n {
        return Err(RprError::InvalidArgument(format!(
            "n_s={n_s} out of range for cloud of {n} points"
        )));
    }
    if start >= n {
        return Err(RprError::InvalidArgument(format!(
            "start index {start} out of range for cloud of {n} points"
        )));
    }
    let pts = cloud.points();
    let mut min_d2: Vec<f64> = pts.iter().map(|&p| dist2(p, pts[start])).collect();
    let mut selected = Vec::with_capacity(n_s);
    let mut taken = vec![false; n];
    let mut margin = f64::INFINITY;
    for step in 0..n_s {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = usize::MAX;
        let mut runner_up = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if d > best {
                runner_up = best;
                best = d;
                best_i = i;
            } else if d > runner_up {
                runner_up = d;
            }
        }
        if runner_up.is_finite() && best.is_finite() {
            margin = margin.min(best.sqrt() - runner_up.max(0.0).sqrt());
        }
        taken[best_i] = true;
        selected.push(best_i);
        let chosen = pts[best_i];
        if step == 0 {
            // the start point only seeds the first pick; from here the field
            // tracks distance to the selected set
            for (i, d) in min_d2.iter_mut().enumerate() {
                *d = dist2(pts[i], chosen);
            }
        } else {
            for (i, d) in min_d2.iter_mut().enumerate() {
                let nd = dist2(pts[i], chosen);
                if nd < *d {
                    *d = nd;
                }
            }
        }
    }
    Ok((selected, margin))
}

/// K-nearest-neighbor grouping of a seed cloud against itself.
///
/// Slot 0 of every row is the seed; the remaining K−1 slots are its nearest
/// other seeds by Euclidean distance, ties toward the smaller index.
pub fn knn_group(seeds: &PointCloud, k: usize) -> Result<GroupIndex> {
    Ok(knn_with_margin(seeds, k)?.0)
}

/// As [`knn_group`], reporting the smallest gap between the last included
/// neighbor and the first excluded one over all seeds (infinite when K covers
/// the whole seed set).
pub fn knn_with_margin(seeds: &PointCloud, k: usize) -> Result<(GroupIndex, f64)> {
    let n_s = seeds.len();
    if k == 0 || k > n_s {
        return Err(RprError::InvalidArgument(format!(
            "K={k} out of range for {n_s} seeds"
        )));
    }
    let pts = seeds.points();
    let mut neighbor_ids = Vec::with_capacity(n_s);
    let mut margin = f64::INFINITY;
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n_s.saturating_sub(1));
    for i in 0..n_s {
        scratch.clear();
        for (j, &p) in pts.iter().enumerate() {
            if j != i {
                scratch.push((dist2(pts[i], p), j));
            }
        }
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut row = Vec::with_capacity(k);
        row.push(i);
        row.extend(scratch.iter().take(k - 1).map(|&(_, j)| j));
        if k - 1 < scratch.len() && k >= 2 {
            let last_in = scratch[k - 2].0.sqrt();
            let first_out = scratch[k - 1].0.sqrt();
            margin = margin.min(first_out - last_in);
        } else if k == 1 && !scratch.is_empty() {
            // row is just the seed; the nearest other point is the excluded one
            margin = margin.min(scratch[0].0.sqrt());
        }
        neighbor_ids.push(row);
    }
    Ok((
        GroupIndex {
            seed_ids: (0..n_s).collect(),
            neighbor_ids,
            k,
        },
        margin,
    ))
}

/// FPS then seed-to-seed KNN in one call; `group.seed_ids` holds the FPS
/// selection into the source cloud.
pub fn sample_and_group(
    cloud: &PointCloud,
    n_s: usize,
    k: usize,
    fps_start: usize,
) -> Result<(PointCloud, GroupIndex)> {
    let seed_ids = farthest_point_sample(cloud, n_s, fps_start)?;
    let seeds = cloud.select(&seed_ids);
    let mut group = knn_group(&seeds, k)?;
    group.seed_ids = seed_ids;
    Ok((seeds, group))
}

/// Draws a rotation; deterministic for a given seed.
pub fn random_rotation(rng_seed: u64, mode: RotationMode) -> RotationMatrix {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    random_rotation_from(&mut rng, mode)
}

/// Draws a rotation from an existing RNG stream.
pub fn random_rotation_from<R: Rng>(rng: &mut R, mode: RotationMode) -> RotationMatrix {
    match mode {
        RotationMode::ZAxis { theta_max } => {
            let theta = if theta_max == 0.0 {
                // keep U[-0,0] an exact identity
                let _ = rng.random::<f64>();
                0.0
            } else {
                rng.random_range(-theta_max..=theta_max)
            };
            let (s, c) = theta.sin_cos();
            RotationMatrix {
                r: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            }
        }
        RotationMode::So3 => {
            // Shoemake's uniform unit quaternion
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let u3: f64 = rng.random();
            let tau = std::f64::consts::TAU;
            let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
            let (x, y, z, w) = (
                a * (tau * u2).sin(),
                a * (tau * u2).cos(),
                b * (tau * u3).sin(),
                b * (tau * u3).cos(),
            );
            RotationMatrix {
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
            }
        }
    }
}

/// Rotates every point: x ↦ Rx.
pub fn apply_rotation(cloud: &PointCloud, r: &RotationMatrix) -> PointCloud {
    PointCloud {
        points: cloud.points().iter().map(|&p| r.apply(p)).collect(),
    }
}

/// Angle between two vectors in [0, π]; zero when either norm is ≤ 1e-9.
///
/// Computed as atan2(‖u×v‖, u·v), which is well conditioned near 0 and π
/// where the clamped-acos form loses ~8 digits.
pub fn angle_between(u: [f64; 3], v: [f64; 3]) -> f64 {
    let nu = norm(u);
    let nv = norm(v);
    if nu <= EPS_VEC || nv <= EPS_VEC {
        return 0.0;
    }
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    norm(cross).atan2(dot(u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn normalize_symmetric_pair() {
        let c = cloud(&[[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]);
        let n = normalize_cloud(&c).unwrap();
        assert_eq!(n.points(), &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_single_point_maps_to_origin() {
        let c = cloud(&[[5.0, 5.0, 5.0]]);
        let n = normalize_cloud(&c).unwrap();
        assert_eq!(n.points(), &[[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_hand_oracle() {
        // mean = (0.75, 0, 0); max |centered coordinate| = 4 (the z spread),
        // so the uniform scale is 1/4.
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 4.0],
            [0.0, 0.0, -4.0],
            [3.0, 0.0, 0.0],
        ]);
        let n = normalize_cloud(&c).unwrap();
        let expect = [
            [-0.75 / 4.0, 0.0, 0.0],
            [-0.75 / 4.0, 0.0, 1.0],
            [-0.75 / 4.0, 0.0, -1.0],
            [2.25 / 4.0, 0.0, 0.0],
        ];
        for (got, want) in n.points().iter().zip(expect.iter()) {
            for a in 0..3 {
                assert!((got[a] - want[a]).abs() < 1e-15);
            }
        }
        let max_abs = n
            .points()
            .iter()
            .flat_map(|p| p.iter().map(|c| c.abs()))
            .fold(0.0f64, f64::max);
        assert!((max_abs - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_non_finite() {
        assert!(matches!(
            PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]),
            Err(RprError::InvalidCloud(_))
        ));
    }

    #[test]
    fn normalize_zero_mean_and_bounded() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-3.0..9.0),
                    rng.random_range(0.0..4.0),
                ]
            })
            .collect();
        let n = normalize_cloud(&cloud(&pts)).unwrap();
        for a in 0..3 {
            let mean: f64 = n.points().iter().map(|p| p[a]).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-9);
        }
        assert!(n
            .points()
            .iter()
            .all(|p| p.iter().all(|c| c.abs() <= 1.0 + 1e-12)));
    }

    #[test]
    fn normalize_idempotent() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ]
            })
            .collect();
        let once = normalize_cloud(&cloud(&pts)).unwrap();
        let twice = normalize_cloud(&once).unwrap();
        for (a, b) in once.points().iter().zip(twice.points()) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fps_collinear_endpoints() {
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ]);
        let ids = farthest_point_sample(&c, 2, 0).unwrap();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 3]);
    }

    #[test]
    fn fps_full_selection_is_identity_set() {
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 4.0],
        ]);
        let ids = farthest_point_sample(&c, 4, 0).unwrap();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_square_with_center_start_selects_corners() {
        // start at the center: the four corners win the max-min race.
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.5, 0.5, 0.0],
        ]);
        let ids = farthest_point_sample(&c, 4, 4).unwrap();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            farthest_point_sample(&c, 3, 0),
            Err(RprError::InvalidArgument(_))
        ));
    }

    #[test]
    fn knn_line_oracle() {
        // brute force over all pairs on {0,1,3}: point 1's nearest other is 0
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let g = knn_group(&c, 2).unwrap();
        assert_eq!(g.neighbor_ids[1], vec![1, 0]);
        assert_eq!(g.neighbor_ids[0], vec![0, 1]);
        assert_eq!(g.neighbor_ids[2], vec![2, 1]);
    }

    #[test]
    fn knn_k1_is_self_only() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let g = knn_group(&c, 1).unwrap();
        for (i, row) in g.neighbor_ids.iter().enumerate() {
            assert_eq!(row, &vec![i]);
        }
    }

    #[test]
    fn knn_tie_prefers_lower_index() {
        // points 1 and 2 are equidistant from point 0
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let g = knn_group(&c, 2).unwrap();
        assert_eq!(g.neighbor_ids[0], vec![0, 1]);
    }

    #[test]
    fn rotation_zero_theta_is_exact_identity() {
        let r = random_rotation(42, RotationMode::ZAxis { theta_max: 0.0 });
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn rotation_is_orthonormal() {
        for seed in 0..20 {
            for mode in [RotationMode::So3, RotationMode::ZAxis { theta_max: PI }] {
                let r = random_rotation(seed, mode);
                assert!(r.orthogonality_defect() < 1e-12);
                assert!((r.determinant() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn so3_sampling_is_unbiased_monte_carlo() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mean: f64 = (0..10_000)
            .map(|_| random_rotation_from(&mut rng, RotationMode::So3).r[0][0])
            .sum::<f64>()
            / 10_000.0;
        assert!(mean.abs() < 0.05, "mean R[0][0] = {mean}");
    }

    #[test]
    fn apply_identity_leaves_cloud() {
        let c = cloud(&[[0.3, -0.2, 0.9], [1.0, 2.0, 3.0]]);
        assert_eq!(apply_rotation(&c, &RotationMatrix::IDENTITY), c);
    }

    #[test]
    fn apply_quarter_turn_about_z() {
        let r = RotationMatrix {
            r: [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        };
        let c = apply_rotation(&cloud(&[[1.0, 0.0, 0.0]]), &r);
        let p = c.point(0);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let c = cloud(&pts);
        let r = random_rotation(17, RotationMode::So3);
        let rc = apply_rotation(&c, &r);
        for i in 0..40 {
            for j in 0..40 {
                let d0 = dist(c.point(i), c.point(j));
                let d1 = dist(rc.point(i), rc.point(j));
                assert!((d0 - d1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn angle_right_angle_and_degenerate() {
        assert!((angle_between([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(angle_between([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 0.0);
        assert_eq!(angle_between([0.0; 3], [3.0, 1.0, 2.0]), 0.0);
    }

    proptest! {
        #[test]
        fn angle_is_rotation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let u = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let r = random_rotation_from(&mut rng, RotationMode::So3);
            let a0 = angle_between(u, v);
            let a1 = angle_between(r.apply(u), r.apply(v));
            prop_assert!((a0 - a1).abs() < 1e-9);
        }

        #[test]
        fn fps_and_knn_are_rotation_equivariant(seed in 0u64..100) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let pts: Vec<[f64;3]> = (0..60).map(|_| {
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            }).collect();
            let c = PointCloud::new(pts).unwrap();
            let (ids, fps_margin) = fps_with_margin(&c, 20, 0).unwrap();
            let seeds = c.select(&ids);
            let (group, knn_margin) = knn_with_margin(&seeds, 5).unwrap();
            // only assert when decisions are comfortably separated
            prop_assume!(fps_margin > 1e-6 && knn_margin > 1e-6);
            let r = random_rotation_from(&mut rng, RotationMode::So3);
            let rc = apply_rotation(&c, &r);
            let rids = farthest_point_sample(&rc, 20, 0).unwrap();
            prop_assert_eq!(&ids, &rids);
            let rgroup = knn_group(&rc.select(&rids), 5).unwrap();
            prop_assert_eq!(&group.neighbor_ids, &rgroup.neighbor_ids);
        }
    }
}
