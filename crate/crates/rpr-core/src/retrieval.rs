//! Descriptor database, nearest-neighbor retrieval, and the place-recognition
//! evaluation protocol with rotation sweeps.
//!
//! Search is brute force (exact): at desk scale the database holds at most
//! tens of thousands of rows. The database is immutable once built, so
//! concurrent queries need no locking.

use crate::error::RprError;
use crate::geometry::{apply_rotation, random_rotation_from, PointCloud, RotationMode};
use crate::network::{Descriptor, RprNet};
use crate::Result;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::io::Read;
use std::path::Path;

/// Descriptor database file magic.
pub const DATABASE_MAGIC: &[u8; 6] = b"RPRDB1";

/// Match radius used at evaluation time (meters).
pub const DEFAULT_MATCH_RADIUS_M: f64 = 25.0;

/// Location-tagged descriptor rows; ids are row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceDatabase {
    pub descriptors: Array2<f64>,
    pub positions: Array2<f64>,
    pub ids: Vec<u64>,
}

impl PlaceDatabase {
    pub fn new(descriptors: Vec<Descriptor>, positions: Vec<[f64; 2]>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(RprError::EmptyDatabase);
        }
        if descriptors.len() != positions.len() {
            return Err(RprError::InvalidArgument(format!(
                "{} descriptors but {} positions",
                descriptors.len(),
                positions.len()
            )));
        }
        let l = descriptors[0].len();
        if descriptors.iter().any(|d| d.len() != l) {
            return Err(RprError::InvalidArgument(
                "descriptor lengths differ".into(),
            ));
        }
        let m = descriptors.len();
        let mut desc = Array2::zeros((m, l));
        for (i, d) in descriptors.iter().enumerate() {
            for (j, v) in d.values.iter().enumerate() {
                desc[[i, j]] = *v;
            }
        }
        let mut pos = Array2::zeros((m, 2));
        for (i, p) in positions.iter().enumerate() {
            pos[[i, 0]] = p[0];
            pos[[i, 1]] = p[1];
        }
        Ok(Self {
            descriptors: desc,
            positions: pos,
            ids: (0..m as u64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptors.ncols()
    }

    pub fn position(&self, row: usize) -> [f64; 2] {
        [self.positions[[row, 0]], self.positions[[row, 1]]]
    }

    /// File layout: magic, m and l as u64 LE, m·l f32 LE descriptor values,
    /// then m×2 f64 LE positions.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w: Vec<u8> = Vec::new();
        w.extend_from_slice(DATABASE_MAGIC);
        w.extend_from_slice(&(self.len() as u64).to_le_bytes());
        w.extend_from_slice(&(self.descriptor_dim() as u64).to_le_bytes());
        for v in self.descriptors.iter() {
            w.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in self.positions.iter() {
            w.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut offset = 0u64;
        let mut read_exact = |buf: &mut [u8], what: &str| -> Result<()> {
            file.read_exact(buf).map_err(|_| RprError::FormatError {
                msg: format!("truncated reading {what}"),
                offset,
            })?;
            offset += buf.len() as u64;
            Ok(())
        };
        let mut magic = [0u8; 6];
        read_exact(&mut magic, "magic")?;
        if &magic != DATABASE_MAGIC {
            return Err(RprError::FormatError {
                msg: format!("bad magic {magic:?}, expected RPRDB1"),
                offset: 0,
            });
        }
        let mut b8 = [0u8; 8];
        read_exact(&mut b8, "row count")?;
        let m = u64::from_le_bytes(b8) as usize;
        read_exact(&mut b8, "descriptor dim")?;
        let l = u64::from_le_bytes(b8) as usize;
        if m == 0 || l == 0 || m.saturating_mul(l) > 1 << 30 {
            return Err(RprError::FormatError {
                msg: format!("implausible dimensions {m}×{l}"),
                offset: 6,
            });
        }
        let mut raw = vec![0u8; m * l * 4];
        read_exact(&mut raw, "descriptor block")?;
        let mut descriptors = Array2::zeros((m, l));
        for i in 0..m * l {
            let v = f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap());
            descriptors[[i / l, i % l]] = v as f64;
        }
        let mut praw = vec![0u8; m * 2 * 8];
        read_exact(&mut praw, "position block")?;
        let mut positions = Array2::zeros((m, 2));
        for i in 0..m * 2 {
            let v = f64::from_le_bytes(praw[i * 8..i * 8 + 8].try_into().unwrap());
            positions[[i / 2, i % 2]] = v;
        }
        Ok(Self {
            descriptors,
            positions,
            ids: (0..m as u64).collect(),
        })
    }
}

/// The k nearest database rows by Euclidean distance, ascending; equal
/// distances order by smaller id.
pub fn query(db: &PlaceDatabase, q: &Descriptor, k: usize) -> Result<Vec<(u64, f64)>> {
    if db.is_empty() {
        return Err(RprError::EmptyDatabase);
    }
    if k == 0 || k > db.len() {
        return Err(RprError::InvalidArgument(format!(
            "k={k} out of range for database of {} rows",
            db.len()
        )));
    }
    if q.len() != db.descriptor_dim() {
        return Err(RprError::ShapeError {
            op: "query",
            left: vec![q.len()],
            right: vec![db.descriptor_dim()],
        });
    }
    let mut scored: Vec<(u64, f64)> = db
        .descriptors
        .rows()
        .into_iter()
        .zip(&db.ids)
        .map(|(row, &id)| {
            let d2: f64 = row
                .iter()
                .zip(&q.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (id, d2.sqrt())
        })
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Recall metrics for one pass over a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall_at_1: f64,
    pub recall_at_top1pct: f64,
    pub queries_evaluated: usize,
    pub queries_excluded: usize,
    pub top1pct_window: usize,
}

impl EvalReport {
    pub fn to_record(&self, level_label: &str) -> String {
        format!(
            "level={} recall_at_1={} recall_at_top1pct={} queries={} excluded={} window={}",
            level_label,
            self.recall_at_1,
            self.recall_at_top1pct,
            self.queries_evaluated,
            self.queries_excluded,
            self.top1pct_window
        )
    }
}

/// Scores queries against the database: recall@1 and recall@top-1% (window
/// ⌈m/100⌉). Queries with no true match within the radius are excluded from
/// the denominator and counted separately.
pub fn evaluate(
    db: &PlaceDatabase,
    query_descriptors: &[Descriptor],
    query_positions: &[[f64; 2]],
    match_radius: f64,
) -> Result<EvalReport> {
    if db.is_empty() {
        return Err(RprError::EmptyDatabase);
    }
    if query_descriptors.len() != query_positions.len() {
        return Err(RprError::InvalidArgument(format!(
            "{} query descriptors but {} positions",
            query_descriptors.len(),
            query_positions.len()
        )));
    }
    let m = db.len();
    let window = m.div_ceil(100);
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    let mut hit1 = 0usize;
    let mut hitw = 0usize;
    for (qd, qp) in query_descriptors.iter().zip(query_positions) {
        let has_truth = (0..m).any(|r| {
            let p = db.position(r);
            pos_dist(p, *qp) <= match_radius
        });
        if !has_truth {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let ranked = query(db, qd, window.max(1))?;
        let correct =
            |(id, _): &(u64, f64)| pos_dist(db.position(*id as usize), *qp) <= match_radius;
        if correct(&ranked[0]) {
            hit1 += 1;
        }
        if ranked.iter().any(|r| correct(r)) {
            hitw += 1;
        }
    }
    Ok(EvalReport {
        recall_at_1: if evaluated > 0 {
            hit1 as f64 / evaluated as f64
        } else {
            0.0
        },
        recall_at_top1pct: if evaluated > 0 {
            hitw as f64 / evaluated as f64
        } else {
            0.0
        },
        queries_evaluated: evaluated,
        queries_excluded: excluded,
        top1pct_window: window,
    })
}

fn pos_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Embeds clouds in parallel, preserving order.
pub fn embed_clouds(model: &RprNet, clouds: &[PointCloud]) -> Result<Vec<Descriptor>> {
    clouds
        .par_iter()
        .map(|c| model.embed_cloud(c))
        .collect::<Result<Vec<_>>>()
}

/// One sweep entry: the rotation magnitude in radians for the z axis, or any
/// positive value for uniform SO(3). Zero always means "no rotation".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepLevel {
    pub theta_max: f64,
    pub mode: RotationMode,
}

/// Re-embeds queries (and optionally the database) under fresh random
/// rotations at each level, then evaluates. Level 0 never rotates, so its
/// report equals the plain evaluation exactly.
#[allow(clippy::too_many_arguments)]
pub fn rotation_sweep(
    model: &RprNet,
    db_clouds: &[PointCloud],
    db_positions: &[[f64; 2]],
    query_clouds: &[PointCloud],
    query_positions: &[[f64; 2]],
    levels: &[SweepLevel],
    rotate_db: bool,
    match_radius: f64,
    seed: u64,
) -> Result<Vec<(SweepLevel, EvalReport)>> {
    let base_db = PlaceDatabase::new(embed_clouds(model, db_clouds)?, db_positions.to_vec())?;
    let mut out = Vec::with_capacity(levels.len());
    for (li, level) in levels.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ ((li as u64 + 1) << 32));
        let rotate = |clouds: &[PointCloud], rng: &mut ChaCha20Rng| -> Vec<PointCloud> {
            clouds
                .iter()
                .map(|c| {
                    if level.theta_max == 0.0 {
                        c.clone()
                    } else {
                        let mode = match level.mode {
                            RotationMode::ZAxis { .. } => RotationMode::ZAxis {
                                theta_max: level.theta_max,
                            },
                            RotationMode::So3 => RotationMode::So3,
                        };
                        let r = random_rotation_from(rng, mode);
                        apply_rotation(c, &r)
                    }
                })
                .collect()
        };
        let db = if rotate_db && level.theta_max != 0.0 {
            let rotated = rotate(db_clouds, &mut rng);
            PlaceDatabase::new(embed_clouds(model, &rotated)?, db_positions.to_vec())?
        } else {
            base_db.clone()
        };
        let rotated_queries = rotate(query_clouds, &mut rng);
        let qdescs = embed_clouds(model, &rotated_queries)?;
        let report = evaluate(&db, &qdescs, query_positions, match_radius)?;
        out.push((*level, report));
    }
    Ok(out)
}

/// Plain-text table over sweep results.
pub fn render_table(results: &[(SweepLevel, EvalReport)]) -> String {
    let mut s = String::from("level      mode  recall@1  recall@top1%  queries  excluded\n");
    for (level, r) in results {
        let mode = match level.mode {
            RotationMode::ZAxis { .. } => "z",
            RotationMode::So3 => "so3",
        };
        s.push_str(&format!(
            "{:<10.4} {:<5} {:<9.4} {:<13.4} {:<8} {}\n",
            level.theta_max, mode, r.recall_at_1, r.recall_at_top1pct, r.queries_evaluated,
            r.queries_excluded
        ));
    }
    s
}
