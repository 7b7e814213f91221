//! Low-level rotation-invariant features (RIFs).
//!
//! Three families, all scalar functions of norms, distances and inter-point
//! angles, hence unchanged by any rigid rotation:
//!
//! - spherical signals `[h, f_ss]`: the radial distance of each group member
//!   to the scene origin, plus a Gaussian angular-kernel density of the peer
//!   radial distances within the group;
//! - individual-level features `[d1, d2, a1, a2, a3]`: triangle quantities of
//!   (seed, group mean, neighbor);
//! - group-level features `[d3, d4, a4, a5]`: closest/farthest-neighbor
//!   quantities shared by the whole group, repeated along the K axis.
//!
//! Channel layout of the assembled tensor: `[h, f_ss, d1, d2, a1, a2, a3, d3,
//! d4, a4, a5]`.

use crate::error::RprError;
use crate::geometry::{angle_between, dist, norm, GroupIndex, PointCloud, EPS_VEC};
use crate::Result;
use ndarray::Array3;

/// Number of RIF channels.
pub const RIF_CHANNELS: usize = 11;

/// Default angular kernel width (radians) for the spherical-signal density.
pub const DEFAULT_SS_SIGMA: f64 = 0.2;

/// N_s × K × 11 rotation-invariant feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct RifTensor {
    pub values: Array3<f64>,
}

impl RifTensor {
    pub fn n_seeds(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.values.shape()[1]
    }

    /// Writes the dump format: header (N_s, K, 11) as u64 LE, then all values
    /// as f64 LE in row-major order.
    pub fn write_dump<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        let s = self.values.shape();
        for dim in [s[0], s[1], s[2]] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn vsub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Spherical signals per group slot: channel 0 is h = ‖x_k‖, channel 1 is the
/// angular-kernel density Σ_{j≠k, ‖x_j‖>ε} h_j · exp(−θ_jk² / 2σ²), zero when
/// the slot itself sits at the origin.
pub fn spherical_signals(seeds: &PointCloud, group: &GroupIndex, sigma: f64) -> Array3<f64> {
    let n_s = group.n_seeds();
    let k = group.k;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut out = Array3::zeros((n_s, k, 2));
    for (gi, row) in group.neighbor_ids.iter().enumerate() {
        let members: Vec<[f64; 3]> = row.iter().map(|&j| seeds.point(j)).collect();
        let hs: Vec<f64> = members.iter().map(|&p| norm(p)).collect();
        for (ki, &xk) in members.iter().enumerate() {
            out[[gi, ki, 0]] = hs[ki];
            if hs[ki] <= EPS_VEC {
                continue;
            }
            let mut f_ss = 0.0;
            for (ji, &xj) in members.iter().enumerate() {
                if ji == ki || hs[ji] <= EPS_VEC {
                    continue;
                }
                let theta = angle_between(xj, xk);
                f_ss += hs[ji] * (-theta * theta * inv_two_sigma2).exp();
            }
            out[[gi, ki, 1]] = f_ss;
        }
    }
    out
}

/// Individual-level features `[d1, d2, a1, a2, a3]` of the triangle
/// (seed x_i, group mean m, neighbor x_k). Zero-norm angle legs yield 0,
/// which covers the self slot.
pub fn ilrif(seeds: &PointCloud, group: &GroupIndex) -> Array3<f64> {
    let n_s = group.n_seeds();
    let k = group.k;
    let mut out = Array3::zeros((n_s, k, 5));
    for (gi, row) in group.neighbor_ids.iter().enumerate() {
        let xi = seeds.point(row[0]);
        let m = group_mean(seeds, row);
        for (ki, &nj) in row.iter().enumerate() {
            let xk = seeds.point(nj);
            out[[gi, ki, 0]] = dist(xk, xi);
            out[[gi, ki, 1]] = dist(xk, m);
            out[[gi, ki, 2]] = angle_between(vsub(xi, xk), vsub(m, xk));
            out[[gi, ki, 3]] = angle_between(vsub(xk, xi), vsub(m, xi));
            out[[gi, ki, 4]] = angle_between(vsub(xk, m), vsub(xi, m));
        }
    }
    out
}

/// Group-level features `[d3, d4, a4, a5]` from the closest non-self and the
/// farthest neighbor, repeated along the K axis. Requires K ≥ 2.
pub fn glrif(seeds: &PointCloud, group: &GroupIndex) -> Result<Array3<f64>> {
    let n_s = group.n_seeds();
    let k = group.k;
    if k < 2 {
        return Err(RprError::InvalidArgument(
            "group-level features need K >= 2 (a non-self closest neighbor)".into(),
        ));
    }
    let mut out = Array3::zeros((n_s, k, 4));
    for (gi, row) in group.neighbor_ids.iter().enumerate() {
        let xi = seeds.point(row[0]);
        let m = group_mean(seeds, row);
        // closest excludes the self slot; farthest needs no exclusion
        let mut d3 = f64::INFINITY;
        let mut closest = seeds.point(row[1]);
        for &nj in &row[1..] {
            let d = dist(seeds.point(nj), xi);
            if d < d3 {
                d3 = d;
                closest = seeds.point(nj);
            }
        }
        let mut d4 = f64::NEG_INFINITY;
        let mut farthest = xi;
        for &nj in row.iter() {
            let d = dist(seeds.point(nj), xi);
            if d > d4 {
                d4 = d;
                farthest = seeds.point(nj);
            }
        }
        let a4 = angle_between(vsub(closest, xi), vsub(m, xi));
        let a5 = angle_between(vsub(farthest, xi), vsub(m, xi));
        for ki in 0..k {
            out[[gi, ki, 0]] = d3;
            out[[gi, ki, 1]] = d4;
            out[[gi, ki, 2]] = a4;
            out[[gi, ki, 3]] = a5;
        }
    }
    Ok(out)
}

fn group_mean(seeds: &PointCloud, row: &[usize]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for &j in row {
        let p = seeds.point(j);
        for a in 0..3 {
            m[a] += p[a];
        }
    }
    let inv = 1.0 / row.len() as f64;
    [m[0] * inv, m[1] * inv, m[2] * inv]
}

/// Concatenates [SS(2) ‖ ILRIF(5) ‖ GLRIF(4)] into the declared layout.
pub fn assemble_rifs(seeds: &PointCloud, group: &GroupIndex, sigma: f64) -> Result<RifTensor> {
    let ss = spherical_signals(seeds, group, sigma);
    let il = ilrif(seeds, group);
    let gl = glrif(seeds, group)?;
    let n_s = group.n_seeds();
    let k = group.k;
    let mut values = Array3::zeros((n_s, k, RIF_CHANNELS));
    for gi in 0..n_s {
        for ki in 0..k {
            values[[gi, ki, 0]] = ss[[gi, ki, 0]];
            values[[gi, ki, 1]] = ss[[gi, ki, 1]];
            for c in 0..5 {
                values[[gi, ki, 2 + c]] = il[[gi, ki, c]];
            }
            for c in 0..4 {
                values[[gi, ki, 7 + c]] = gl[[gi, ki, c]];
            }
        }
    }
    Ok(RifTensor { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_rotation, knn_group, random_rotation, RotationMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    fn group_of(rows: &[&[usize]], k: usize) -> GroupIndex {
        GroupIndex {
            seed_ids: (0..rows.len()).collect(),
            neighbor_ids: rows.iter().map(|r| r.to_vec()).collect(),
            k,
        }
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        PointCloud::new(
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
        .unwrap()
    }

    #[test]
    fn spherical_origin_point_is_zero() {
        let c = cloud(&[[0.0; 3]]);
        let g = group_of(&[&[0]], 1);
        let ss = spherical_signals(&c, &g, DEFAULT_SS_SIGMA);
        assert_eq!(ss[[0, 0, 0]], 0.0);
        assert_eq!(ss[[0, 0, 1]], 0.0);
    }

    #[test]
    fn spherical_lone_member_has_no_density() {
        let c = cloud(&[[1.0, 0.0, 0.0]]);
        let g = group_of(&[&[0]], 1);
        let ss = spherical_signals(&c, &g, DEFAULT_SS_SIGMA);
        assert_eq!(ss[[0, 0, 0]], 1.0);
        assert_eq!(ss[[0, 0, 1]], 0.0);
    }

    #[test]
    fn spherical_pair_matches_direct_evaluation() {
        // f_ss(first) = 1 * exp(-(pi/2)^2 / (2*0.2^2)) per direct evaluation
        let c = cloud(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let g = group_of(&[&[0, 1], &[1, 0]], 2);
        let ss = spherical_signals(&c, &g, 0.2);
        let expect = (-(FRAC_PI_2 * FRAC_PI_2) / 0.08).exp();
        assert!((ss[[0, 0, 1]] - expect).abs() < 1e-15);
        assert!((ss[[0, 1, 1]] - expect).abs() < 1e-15);
    }

    #[test]
    fn ilrif_self_slot_degenerates_to_zero() {
        let c = random_cloud(8, 2);
        let g = knn_group(&c, 4).unwrap();
        let il = ilrif(&c, &g);
        for gi in 0..8 {
            assert_eq!(il[[gi, 0, 0]], 0.0); // d1
            assert_eq!(il[[gi, 0, 2]], 0.0); // a1
            assert_eq!(il[[gi, 0, 3]], 0.0); // a2
        }
    }

    #[test]
    fn ilrif_triangle_angles_sum_to_pi() {
        let c = random_cloud(16, 11);
        let g = knn_group(&c, 5).unwrap();
        let il = ilrif(&c, &g);
        for gi in 0..16 {
            for ki in 1..5 {
                let (a1, a2, a3) = (il[[gi, ki, 2]], il[[gi, ki, 3]], il[[gi, ki, 4]]);
                // skip degenerate (collinear / coincident) triples
                if il[[gi, ki, 0]] > 1e-6 && il[[gi, ki, 1]] > 1e-6 && a3 > 1e-6 && a3 < PI - 1e-6
                {
                    assert!(
                        (a1 + a2 + a3 - PI).abs() < 1e-9,
                        "angle sum {} at ({gi},{ki})",
                        a1 + a2 + a3
                    );
                }
            }
        }
    }

    #[test]
    fn ilrif_hand_oracle() {
        // seed at origin, neighbors {self, (2,0,0)}: m = (1,0,0)
        let c = cloud(&[[0.0; 3], [2.0, 0.0, 0.0]]);
        let g = group_of(&[&[0, 1]], 2);
        let il = ilrif(&c, &g);
        assert!((il[[0, 1, 0]] - 2.0).abs() < 1e-15); // d1
        assert!((il[[0, 1, 1]] - 1.0).abs() < 1e-15); // d2
        assert_eq!(il[[0, 1, 2]], 0.0); // a1
        assert_eq!(il[[0, 1, 3]], 0.0); // a2
        assert!((il[[0, 1, 4]] - PI).abs() < 1e-15); // a3
    }

    #[test]
    fn glrif_equidistant_neighbors_collapse_d3_d4() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let g = group_of(&[&[0, 1, 2, 3]], 4);
        let gl = glrif(&c, &g).unwrap();
        assert_eq!(gl[[0, 0, 0]], gl[[0, 0, 1]]);
    }

    #[test]
    fn glrif_hand_oracle() {
        // neighbors {self,(1,0,0),(3,0,0)}: closest (1,0,0), farthest (3,0,0),
        // m = (4/3,0,0), both angles 0
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let g = group_of(&[&[0, 1, 2]], 3);
        let gl = glrif(&c, &g).unwrap();
        assert!((gl[[0, 0, 0]] - 1.0).abs() < 1e-15);
        assert!((gl[[0, 0, 1]] - 3.0).abs() < 1e-15);
        assert_eq!(gl[[0, 0, 2]], 0.0);
        assert_eq!(gl[[0, 0, 3]], 0.0);
        // broadcast along K
        for ki in 1..3 {
            for ch in 0..4 {
                assert_eq!(gl[[0, ki, ch]], gl[[0, 0, ch]]);
            }
        }
    }

    #[test]
    fn glrif_rejects_k1() {
        let c = cloud(&[[0.0; 3]]);
        let g = group_of(&[&[0]], 1);
        assert!(matches!(
            glrif(&c, &g),
            Err(RprError::InvalidArgument(_))
        ));
    }

    #[test]
    fn glrif_invariant_under_rotation() {
        let c = random_cloud(10, 4);
        let g = knn_group(&c, 4).unwrap();
        let r = random_rotation(5, RotationMode::So3);
        let rc = apply_rotation(&c, &r);
        let a = glrif(&c, &g).unwrap();
        let b = glrif(&rc, &g).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn assemble_shape_and_self_slot() {
        let c = random_cloud(64, 9);
        let g = knn_group(&c, 8).unwrap();
        let rifs = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
        assert_eq!(rifs.values.shape(), &[64, 8, 11]);
        for gi in 0..64 {
            let h = rifs.values[[gi, 0, 0]];
            assert!((h - crate::geometry::norm(c.point(gi))).abs() < 1e-15);
        }
    }

    #[test]
    fn assemble_paper_scale_shape() {
        let c = random_cloud(1024, 31);
        let g = knn_group(&c, 32).unwrap();
        let rifs = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
        assert_eq!(rifs.values.shape(), &[1024, 32, 11]);
    }

    #[test]
    fn rif_channel_ranges() {
        let c = random_cloud(50, 13);
        let g = knn_group(&c, 6).unwrap();
        let rifs = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
        for gi in 0..50 {
            for ki in 0..6 {
                for ch in [0usize, 2, 3, 7, 8] {
                    assert!(rifs.values[[gi, ki, ch]] >= 0.0);
                }
                for ch in [4usize, 5, 6, 9, 10] {
                    let a = rifs.values[[gi, ki, ch]];
                    assert!((0.0..=PI).contains(&a));
                }
                // group-level channels constant across K
                for ch in 7..11 {
                    assert_eq!(rifs.values[[gi, ki, ch]], rifs.values[[gi, 0, ch]]);
                }
            }
        }
    }

    #[test]
    fn assemble_invariant_under_rotation_shared_group() {
        let c = random_cloud(128, 21);
        let g = knn_group(&c, 8).unwrap();
        let base = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
        for seed in 0..5 {
            let r = random_rotation(seed, RotationMode::So3);
            let rotated = assemble_rifs(&apply_rotation(&c, &r), &g, DEFAULT_SS_SIGMA).unwrap();
            let max_diff = base
                .values
                .iter()
                .zip(rotated.values.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff <= 1e-9, "max diff {max_diff}");
        }
    }

    #[test]
    fn scale_covariance() {
        let c = random_cloud(32, 8);
        let g = knn_group(&c, 4).unwrap();
        let base = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
        let s = 2.5;
        let scaled_pts: Vec<[f64; 3]> = c
            .points()
            .iter()
            .map(|p| [p[0] * s, p[1] * s, p[2] * s])
            .collect();
        let scaled = assemble_rifs(&PointCloud::new(scaled_pts).unwrap(), &g, DEFAULT_SS_SIGMA)
            .unwrap();
        for gi in 0..32 {
            for ki in 0..4 {
                // distance channels scale by s (h, d1, d2, d3, d4)
                for ch in [0usize, 2, 3, 7, 8] {
                    assert!(
                        (scaled.values[[gi, ki, ch]] - s * base.values[[gi, ki, ch]]).abs() < 1e-9
                    );
                }
                // angle channels fixed
                for ch in [4usize, 5, 6, 9, 10] {
                    assert!(
                        (scaled.values[[gi, ki, ch]] - base.values[[gi, ki, ch]]).abs() < 1e-9
                    );
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn strict_invariance_property(seed in 0u64..1000) {
            let c = random_cloud(40, seed);
            let g = knn_group(&c, 6).unwrap();
            let r = random_rotation(seed.wrapping_add(1), RotationMode::So3);
            let a = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
            let b = assemble_rifs(&apply_rotation(&c, &r), &g, DEFAULT_SS_SIGMA).unwrap();
            let max_diff = a.values.iter().zip(b.values.iter())
                .map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
            prop_assert!(max_diff <= 1e-9);
        }

        #[test]
        fn permutation_covariance(seed in 0u64..200) {
            let c = random_cloud(12, seed);
            let g = knn_group(&c, 5).unwrap();
            // permute the non-self slots of group 0 (slot 0 stays the seed)
            let mut permuted = g.clone();
            permuted.neighbor_ids[0][1..].reverse();
            let perm: Vec<usize> = {
                let mut p: Vec<usize> = (0..5).collect();
                p[1..].reverse();
                p
            };
            let a = assemble_rifs(&c, &g, DEFAULT_SS_SIGMA).unwrap();
            let b = assemble_rifs(&c, &permuted, DEFAULT_SS_SIGMA).unwrap();
            for (ki, &src) in perm.iter().enumerate() {
                // SS + ILRIF channels permute along K
                for ch in 0..7 {
                    prop_assert!((b.values[[0, ki, ch]] - a.values[[0, src, ch]]).abs() < 1e-12);
                }
                // GLRIF channels unchanged
                for ch in 7..11 {
                    prop_assert!((b.values[[0, ki, ch]] - a.values[[0, 0, ch]]).abs() < 1e-12);
                }
            }
        }
    }
}
