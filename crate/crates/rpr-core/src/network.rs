//! The descriptor network: a stem block, four densely-summed blocks, a fusion
//! block over their concatenation, and generalized-mean pooling.
//!
//! All six convolution blocks share one seed cloud, one neighbor table, and
//! one RIF tensor, computed once per cloud. The stem consumes a constant
//! feature column (or the per-seed radial norm), so every feature seen by the
//! network is rotation-invariant by construction.

use crate::ariconv::{
    ariconv_forward, ariconv_forward_arrays, AriConvShape, AttentionPool, AttentionVars,
    AttentionWeights, BlockVars, BlockWeights,
};
use crate::autodiff::{ContractDims, ParamSet, Tape, Var};
use crate::error::RprError;
use crate::geometry::{norm, sample_and_group, PointCloud};
use crate::rif::{assemble_rifs, RIF_CHANNELS};
use crate::Result;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::sync::Arc;

/// Floor applied to features before GeM powering.
pub const GEM_EPS: f64 = 1e-6;

/// Learnable GeM exponent bounds during training.
pub const GEM_P_RANGE: (f64, f64) = (1.0, 64.0);

/// Number of convolution blocks (stem + 4 dense + fusion).
pub const N_BLOCKS: usize = 6;

/// What feeds the stem block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemFeature {
    /// Constant-1 column; all geometry enters through the kernels.
    Ones,
    /// Per-seed radial distance to the scene origin.
    RadialNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RprNetConfig {
    pub n_seeds: usize,
    pub k: usize,
    pub channels: usize,
    pub final_channels: usize,
    pub descriptor_dim: usize,
    pub gem_p_init: f64,
    pub ss_sigma: f64,
    pub attention_reduction: usize,
    pub kernel_hidden: usize,
    pub attention_pool: AttentionPool,
    pub stem_feature: StemFeature,
    pub fps_start: usize,
}

impl Default for RprNetConfig {
    fn default() -> Self {
        Self {
            n_seeds: 1024,
            k: 32,
            channels: 64,
            final_channels: 256,
            descriptor_dim: 256,
            gem_p_init: 3.0,
            ss_sigma: 0.2,
            attention_reduction: 16,
            kernel_hidden: 64,
            attention_pool: AttentionPool::GlobalMean,
            stem_feature: StemFeature::Ones,
            fps_start: 0,
        }
    }
}

impl RprNetConfig {
    /// Desk-scale preset: small enough to train on a CPU in minutes while
    /// keeping the full architecture. The narrower kernel hidden width and
    /// attention bottleneck keep the trainable count under 200k.
    pub fn desk() -> Self {
        Self {
            n_seeds: 256,
            k: 16,
            channels: 16,
            final_channels: 64,
            descriptor_dim: 64,
            kernel_hidden: 16,
            attention_reduction: 512,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.final_channels != 4 * self.channels {
            return Err(RprError::InvalidArgument(format!(
                "final_channels {} must be 4×channels {}",
                self.final_channels, self.channels
            )));
        }
        if self.descriptor_dim != self.final_channels {
            return Err(RprError::InvalidArgument(format!(
                "descriptor_dim {} must equal final_channels {}",
                self.descriptor_dim, self.final_channels
            )));
        }
        if self.k < 2 {
            return Err(RprError::InvalidArgument(
                "K must be at least 2 (group-level features need a non-self neighbor)".into(),
            ));
        }
        if self.n_seeds < self.k {
            return Err(RprError::InvalidArgument(format!(
                "n_seeds {} must be at least K {}",
                self.n_seeds, self.k
            )));
        }
        if self.gem_p_init < GEM_P_RANGE.0 || self.gem_p_init > GEM_P_RANGE.1 {
            return Err(RprError::InvalidArgument(format!(
                "gem_p_init {} outside [{}, {}]",
                self.gem_p_init, GEM_P_RANGE.0, GEM_P_RANGE.1
            )));
        }
        if self.ss_sigma <= 0.0 {
            return Err(RprError::InvalidArgument("ss_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Per-block (C_in, C_out, H, r) shapes: stem, four dense blocks, fusion.
    pub fn block_shapes(&self) -> [AriConvShape; N_BLOCKS] {
        let c = self.channels;
        let mk = |c_in, c_out| {
            AriConvShape::new(c_in, c_out, self.kernel_hidden, self.attention_reduction)
        };
        [
            mk(1, c),
            mk(c, c),
            mk(c, c),
            mk(c, c),
            mk(c, c),
            mk(4 * c, self.final_channels),
        ]
    }

    /// Every parameter name with its shape, in declaration order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (bi, shape) in self.block_shapes().iter().enumerate() {
            for (suffix, dims) in shape.param_shapes() {
                out.push((format!("block{bi}.{suffix}"), dims));
            }
        }
        out.push(("gem.p".to_string(), vec![1]));
        out
    }

    /// Trainable scalar count from shape arithmetic alone (no allocation).
    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// key=value serialization (exact f64 round-trip via shortest decimal).
    pub fn to_kv(&self) -> String {
        let pool = match self.attention_pool {
            AttentionPool::GlobalMean => "global",
            AttentionPool::PerSeedMean => "per_seed",
        };
        let stem = match self.stem_feature {
            StemFeature::Ones => "ones",
            StemFeature::RadialNorm => "radial",
        };
        format!(
            "n_seeds={}\nk={}\nchannels={}\nfinal_channels={}\ndescriptor_dim={}\n\
             gem_p_init={}\nss_sigma={}\nattention_reduction={}\nkernel_hidden={}\n\
             attention_pool={}\nstem_feature={}\nfps_start={}\n",
            self.n_seeds,
            self.k,
            self.channels,
            self.final_channels,
            self.descriptor_dim,
            self.gem_p_init,
            self.ss_sigma,
            self.attention_reduction,
            self.kernel_hidden,
            pool,
            stem,
            self.fps_start,
        )
    }

    /// Parses the key=value form; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Applies key=value lines onto this config. Lines may be empty or start
    /// with '#'.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RprError::InvalidArgument(format!(
                    "config line {} is not key=value: {line}",
                    ln + 1
                ))
            })?;
            self.set_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| RprError::InvalidArgument(format!("bad value for {what}: {value}"));
        match key {
            "n_seeds" => self.n_seeds = value.parse().map_err(|_| bad(key))?,
            "k" => self.k = value.parse().map_err(|_| bad(key))?,
            "channels" => self.channels = value.parse().map_err(|_| bad(key))?,
            "final_channels" => self.final_channels = value.parse().map_err(|_| bad(key))?,
            "descriptor_dim" => self.descriptor_dim = value.parse().map_err(|_| bad(key))?,
            "gem_p_init" => self.gem_p_init = value.parse().map_err(|_| bad(key))?,
            "ss_sigma" => self.ss_sigma = value.parse().map_err(|_| bad(key))?,
            "attention_reduction" => {
                self.attention_reduction = value.parse().map_err(|_| bad(key))?
            }
            "kernel_hidden" => self.kernel_hidden = value.parse().map_err(|_| bad(key))?,
            "attention_pool" => {
                self.attention_pool = match value {
                    "global" => AttentionPool::GlobalMean,
                    "per_seed" => AttentionPool::PerSeedMean,
                    _ => return Err(bad(key)),
                }
            }
            "stem_feature" => {
                self.stem_feature = match value {
                    "ones" => StemFeature::Ones,
                    "radial" => StemFeature::RadialNorm,
                    _ => return Err(bad(key)),
                }
            }
            "fps_start" => self.fps_start = value.parse().map_err(|_| bad(key))?,
            _ => {
                return Err(RprError::InvalidArgument(format!(
                    "unknown config key: {key}"
                )))
            }
        }
        Ok(())
    }
}

/// Global descriptor: finite, non-negative (relu features through GeM).
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-cloud geometry shared by every block: flattened RIFs, the flat
/// neighbor table, and the stem feature column.
pub struct CloudGeometry {
    pub rifs: Array2<f64>,
    pub neighbors: Vec<usize>,
    pub stem: Array2<f64>,
}

/// Generalized-mean pooling: g_c = (mean_n max(f_{n,c}, ε)^p)^(1/p).
pub fn gem_pool_arrays(features: &ArrayView2<f64>, p: f64) -> Array1<f64> {
    let n = features.nrows() as f64;
    let mut out = Array1::<f64>::zeros(features.ncols());
    for (c, col) in features.columns().into_iter().enumerate() {
        let s: f64 = col.iter().map(|&v| v.max(GEM_EPS).powf(p)).sum();
        out[c] = (s / n).powf(1.0 / p);
    }
    out
}

/// The trained (or freshly initialized) model.
#[derive(Debug, Clone)]
pub struct RprNet {
    pub config: RprNetConfig,
    pub params: ParamSet,
}

impl RprNet {
    /// He-uniform weight init (zero biases), deterministic per seed.
    ///
    /// Two scale corrections keep the first forward pass in range: the
    /// kernel-MLP output layer shrinks by 1/√(K·C_in) because its outputs are
    /// contracted over the K·C_in axis (without this the gain compounds
    /// through the dense wiring and overflows), and the kernel-MLP input rows
    /// for the spherical-density channel shrink by 1/(K−1) because that RIF
    /// sums over K−1 peers.
    pub fn init(config: RprNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let shapes = config.block_shapes();
        let f_ss_scale = 1.0 / (config.k.saturating_sub(1).max(1)) as f64;
        for (name, shape) in config.parameter_shapes() {
            let value = if name == "gem.p" {
                ndarray::ArrayD::from_elem(ndarray::IxDyn(&[1]), config.gem_p_init)
            } else if shape.len() == 2 {
                let mut bound = (6.0 / shape[0] as f64).sqrt();
                let block_idx = name
                    .strip_prefix("block")
                    .and_then(|rest| rest.split('.').next())
                    .and_then(|s| s.parse::<usize>().ok());
                if let Some(bi) = block_idx {
                    if name.ends_with("kernel_mlp.w2") {
                        // extra 0.5 pulls the per-block rms gain to ~1 so six
                        // stacked blocks stay O(1) at init
                        bound *= 0.5 / ((config.k * shapes[bi].c_in) as f64).sqrt();
                    }
                }
                let is_kernel_w1 = name.ends_with("kernel_mlp.w1");
                ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&shape), |idx| {
                    let v = rng.random_range(-bound..bound);
                    if is_kernel_w1 && idx[0] == 1 {
                        v * f_ss_scale
                    } else {
                        v
                    }
                })
            } else {
                ndarray::ArrayD::zeros(ndarray::IxDyn(&shape))
            };
            params.insert(&name, value, true)?;
        }
        Ok(Self { config, params })
    }

    /// Wraps an existing parameter set (checkpoint load), checking shapes.
    pub fn from_params(config: RprNetConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        for (name, shape) in config.parameter_shapes() {
            match params.by_name(&name) {
                Some(v) if v.shape() == shape.as_slice() => {}
                Some(v) => {
                    return Err(RprError::ShapeError {
                        op: "from_params",
                        left: v.shape().to_vec(),
                        right: shape,
                    })
                }
                None => {
                    return Err(RprError::InvalidArgument(format!(
                        "missing parameter {name}"
                    )))
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_trainable()
    }

    pub fn gem_p(&self) -> f64 {
        self.params.by_name("gem.p").unwrap()[[0]]
    }

    fn block_weights(&self, bi: usize) -> BlockWeights<'_> {
        let shapes = self.config.block_shapes();
        let single = shapes[bi].bottleneck == 0;
        let get2 = |suffix: &str| {
            self.params
                .by_name(&format!("block{bi}.{suffix}"))
                .unwrap()
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
        };
        let get1 = |suffix: &str| {
            self.params
                .by_name(&format!("block{bi}.{suffix}"))
                .unwrap()
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
        };
        BlockWeights {
            kernel_w1: get2("kernel_mlp.w1"),
            kernel_b1: get1("kernel_mlp.b1"),
            kernel_w2: get2("kernel_mlp.w2"),
            kernel_b2: get1("kernel_mlp.b2"),
            attention: if single {
                AttentionWeights::Single {
                    w: get2("attention_fc.w"),
                    b: get1("attention_fc.b"),
                }
            } else {
                AttentionWeights::Bottleneck {
                    w1: get2("attention_fc.w1"),
                    b1: get1("attention_fc.b1"),
                    w2: get2("attention_fc.w2"),
                    b2: get1("attention_fc.b2"),
                }
            },
            out_w: get2("output_mlp.w"),
            out_b: get1("output_mlp.b"),
        }
    }

    /// FPS + KNN + RIF extraction; the cloud must already be normalized.
    pub fn prepare_geometry(&self, cloud: &PointCloud) -> Result<CloudGeometry> {
        let cfg = &self.config;
        if cloud.len() < cfg.n_seeds {
            return Err(RprError::InvalidCloud(format!(
                "cloud has {} points, need at least n_seeds={}",
                cloud.len(),
                cfg.n_seeds
            )));
        }
        let (seeds, group) = sample_and_group(cloud, cfg.n_seeds, cfg.k, cfg.fps_start)?;
        self.geometry_from_seeds(&seeds, &group)
    }

    /// Geometry from a pre-sampled seed cloud and its group table.
    pub fn geometry_from_seeds(
        &self,
        seeds: &PointCloud,
        group: &crate::geometry::GroupIndex,
    ) -> Result<CloudGeometry> {
        let cfg = &self.config;
        let rifs = assemble_rifs(seeds, group, cfg.ss_sigma)?;
        let slots = cfg.n_seeds * cfg.k;
        let rifs = rifs
            .values
            .into_shape_with_order((slots, RIF_CHANNELS))
            .map_err(|_| RprError::InvalidArgument("RIF reshape failed".into()))?;
        let stem = match cfg.stem_feature {
            StemFeature::Ones => Array2::ones((cfg.n_seeds, 1)),
            StemFeature::RadialNorm => {
                Array2::from_shape_fn((cfg.n_seeds, 1), |(i, _)| norm(seeds.point(i)))
            }
        };
        Ok(CloudGeometry {
            rifs,
            neighbors: group.flat_neighbors(),
            stem,
        })
    }

    /// Inference forward over plain arrays.
    pub fn forward_arrays(&self, geometry: &CloudGeometry) -> Result<Descriptor> {
        let cfg = &self.config;
        let shapes = self.config.block_shapes();
        let dims = |bi: usize| ContractDims {
            n_seeds: cfg.n_seeds,
            k: cfg.k,
            c_in: shapes[bi].c_in,
            c_out: shapes[bi].c_out,
        };
        let run = |bi: usize, input: &Array2<f64>| -> Result<Array2<f64>> {
            ariconv_forward_arrays(
                &input.view(),
                &geometry.rifs.view(),
                &geometry.neighbors,
                &self.block_weights(bi),
                dims(bi),
                cfg.attention_pool,
            )
        };
        let o0 = run(0, &geometry.stem)?;
        let mut dense_sum = o0;
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(4);
        for bi in 1..=4 {
            let oi = run(bi, &dense_sum)?;
            dense_sum += &oi;
            outs.push(oi);
        }
        let views: Vec<ArrayView2<f64>> = outs.iter().map(|o| o.view()).collect();
        let fused_in = ndarray::concatenate(ndarray::Axis(1), &views).unwrap();
        let o5 = run(5, &fused_in)?;
        let g = gem_pool_arrays(&o5.view(), self.gem_p());
        Ok(Descriptor { values: g.to_vec() })
    }

    /// Embeds an already-normalized cloud.
    pub fn embed_cloud(&self, cloud: &PointCloud) -> Result<Descriptor> {
        let geometry = self.prepare_geometry(cloud)?;
        self.forward_arrays(&geometry)
    }

    /// Registers every parameter as a tape leaf, in ParamSet order.
    pub fn tape_params(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.params.len())
            .map(|i| tape.leaf(self.params.value(i).clone()))
            .collect()
    }

    /// Training forward on the tape; `param_vars` must come from
    /// [`RprNet::tape_params`]. Returns the descriptor node (1-D, length l).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        geometry: &CloudGeometry,
        param_vars: &[Var],
    ) -> Result<Var> {
        let cfg = &self.config;
        let shapes = self.config.block_shapes();
        let neighbors = Arc::new(geometry.neighbors.clone());
        let var_of = |name: &str| -> Var {
            param_vars[self
                .params
                .id_of(name)
                .unwrap_or_else(|| panic!("unknown parameter {name}"))]
        };
        let block_vars = |bi: usize| -> BlockVars {
            let single = shapes[bi].bottleneck == 0;
            BlockVars {
                kernel_w1: var_of(&format!("block{bi}.kernel_mlp.w1")),
                kernel_b1: var_of(&format!("block{bi}.kernel_mlp.b1")),
                kernel_w2: var_of(&format!("block{bi}.kernel_mlp.w2")),
                kernel_b2: var_of(&format!("block{bi}.kernel_mlp.b2")),
                attention: if single {
                    AttentionVars::Single {
                        w: var_of(&format!("block{bi}.attention_fc.w")),
                        b: var_of(&format!("block{bi}.attention_fc.b")),
                    }
                } else {
                    AttentionVars::Bottleneck {
                        w1: var_of(&format!("block{bi}.attention_fc.w1")),
                        b1: var_of(&format!("block{bi}.attention_fc.b1")),
                        w2: var_of(&format!("block{bi}.attention_fc.w2")),
                        b2: var_of(&format!("block{bi}.attention_fc.b2")),
                    }
                },
                out_w: var_of(&format!("block{bi}.output_mlp.w")),
                out_b: var_of(&format!("block{bi}.output_mlp.b")),
            }
        };
        let rifs = tape.leaf_2d(geometry.rifs.clone());
        let stem = tape.leaf_2d(geometry.stem.clone());
        let dims = |bi: usize| ContractDims {
            n_seeds: cfg.n_seeds,
            k: cfg.k,
            c_in: shapes[bi].c_in,
            c_out: shapes[bi].c_out,
        };
        let bv0 = block_vars(0);
        let o0 = ariconv_forward(
            tape,
            stem,
            rifs,
            neighbors.clone(),
            &bv0,
            dims(0),
            cfg.attention_pool,
        )?;
        let mut dense_sum = o0;
        let mut outs = Vec::with_capacity(4);
        for bi in 1..=4 {
            let bv = block_vars(bi);
            let oi = ariconv_forward(
                tape,
                dense_sum,
                rifs,
                neighbors.clone(),
                &bv,
                dims(bi),
                cfg.attention_pool,
            )?;
            dense_sum = tape.add(dense_sum, oi)?;
            outs.push(oi);
        }
        let fused_in = tape.concat(&outs, 1)?;
        let bv5 = block_vars(5);
        let o5 = ariconv_forward(
            tape,
            fused_in,
            rifs,
            neighbors,
            &bv5,
            dims(5),
            cfg.attention_pool,
        )?;
        // GeM with the learnable exponent
        let p = var_of("gem.p");
        let clamped = tape.clamp_min(o5, GEM_EPS);
        let powered = tape.pow_scalar(clamped, p)?;
        let mean = tape.mean(powered, &[0]);
        let p_inv = tape.pow_const(p, -1.0);
        tape.pow_scalar(mean, p_inv)
    }
}
