//! Attentive rotation-invariant convolution.
//!
//! Kernels are generated from the 11 RIF channels by a shared two-layer MLP,
//! gated channel-wise by a learned attention vector computed from the pooled
//! kernel tensor, then contracted against grouped neighbor features. Since
//! the kernels depend on the geometry only through rotation-invariant scalars,
//! the convolution is an SO(3)-invariant map whenever its input features are.
//!
//! Two execution paths share the same numeric kernels: a [`Tape`] path that
//! records gradients for training, and a plain-array path for inference that
//! streams over seed chunks so paper-scale kernel tensors (N_s·K × C_in·C_out)
//! never materialize at once.

use crate::autodiff::{matmul_chunked, ContractDims, Tape, Var};
use crate::error::RprError;
use crate::Result;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use std::sync::Arc;

/// Attention bottleneck width floor.
pub const ATTENTION_MIN_BOTTLENECK: usize = 8;

/// What the attention pools over before producing the per-channel gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionPool {
    /// One gate shared by every slot (mean over both the seed and neighbor axes).
    GlobalMean,
    /// One gate per seed (mean over the neighbor axis only).
    PerSeedMean,
}

/// Static shape of one block, derived from (C_in, C_out, H, r).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AriConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub hidden: usize,
    /// 0 encodes the single-layer attention (reduction r = 1).
    pub bottleneck: usize,
}

impl AriConvShape {
    pub fn new(c_in: usize, c_out: usize, hidden: usize, reduction: usize) -> Self {
        let c = c_in * c_out;
        let bottleneck = if reduction <= 1 {
            0
        } else {
            (c / reduction).max(ATTENTION_MIN_BOTTLENECK)
        };
        Self {
            c_in,
            c_out,
            hidden,
            bottleneck,
        }
    }

    pub fn latent(&self) -> usize {
        self.c_in * self.c_out
    }

    /// (name suffix, shape) of every parameter of one block, in declaration order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let c = self.latent();
        let mut v = vec![
            ("kernel_mlp.w1", vec![crate::rif::RIF_CHANNELS, self.hidden]),
            ("kernel_mlp.b1", vec![self.hidden]),
            ("kernel_mlp.w2", vec![self.hidden, c]),
            ("kernel_mlp.b2", vec![c]),
        ];
        if self.bottleneck == 0 {
            v.push(("attention_fc.w", vec![c, c]));
            v.push(("attention_fc.b", vec![c]));
        } else {
            v.push(("attention_fc.w1", vec![c, self.bottleneck]));
            v.push(("attention_fc.b1", vec![self.bottleneck]));
            v.push(("attention_fc.w2", vec![self.bottleneck, c]));
            v.push(("attention_fc.b2", vec![c]));
        }
        v.push(("output_mlp.w", vec![self.c_out, self.c_out]));
        v.push(("output_mlp.b", vec![self.c_out]));
        v
    }
}

/// Borrowed weight views for the array path.
pub struct BlockWeights<'a> {
    pub kernel_w1: ArrayView2<'a, f64>,
    pub kernel_b1: ArrayView1<'a, f64>,
    pub kernel_w2: ArrayView2<'a, f64>,
    pub kernel_b2: ArrayView1<'a, f64>,
    pub attention: AttentionWeights<'a>,
    pub out_w: ArrayView2<'a, f64>,
    pub out_b: ArrayView1<'a, f64>,
}

pub enum AttentionWeights<'a> {
    Single {
        w: ArrayView2<'a, f64>,
        b: ArrayView1<'a, f64>,
    },
    Bottleneck {
        w1: ArrayView2<'a, f64>,
        b1: ArrayView1<'a, f64>,
        w2: ArrayView2<'a, f64>,
        b2: ArrayView1<'a, f64>,
    },
}

/// Tape handles for the same weights.
pub struct BlockVars {
    pub kernel_w1: Var,
    pub kernel_b1: Var,
    pub kernel_w2: Var,
    pub kernel_b2: Var,
    pub attention: AttentionVars,
    pub out_w: Var,
    pub out_b: Var,
}

pub enum AttentionVars {
    Single { w: Var, b: Var },
    Bottleneck { w1: Var, b1: Var, w2: Var, b2: Var },
}

fn affine_rows(x: &ArrayView2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    let mut out = matmul_chunked(x, w);
    for mut row in out.rows_mut() {
        row += b;
    }
    out
}

fn sigmoid_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

// ---------------------------------------------------------------------------
// array path
// ---------------------------------------------------------------------------

/// Shared per-slot kernel MLP: (slots × 11) → (slots × C_in·C_out).
pub fn generate_kernels_arrays(rifs: &ArrayView2<f64>, w: &BlockWeights) -> Array2<f64> {
    let mut hidden = affine_rows(rifs, &w.kernel_w1, &w.kernel_b1);
    relu_inplace(&mut hidden);
    affine_rows(&hidden.view(), &w.kernel_w2, &w.kernel_b2)
}

fn attention_gate(z: &ArrayView2<f64>, w: &BlockWeights) -> Array2<f64> {
    let mut a = match &w.attention {
        AttentionWeights::Single { w: aw, b } => affine_rows(z, aw, b),
        AttentionWeights::Bottleneck { w1, b1, w2, b2 } => {
            let mut h = affine_rows(z, w1, b1);
            relu_inplace(&mut h);
            affine_rows(&h.view(), w2, b2)
        }
    };
    sigmoid_inplace(&mut a);
    a
}

/// Gates κ̂ channel-wise: κ(n,k,c) = κ̂(n,k,c)·g(c) (or g(n,c) per seed).
pub fn attend_kernels_arrays(
    kappa_hat: &Array2<f64>,
    w: &BlockWeights,
    pool: AttentionPool,
    k_group: usize,
) -> Array2<f64> {
    let slots = kappa_hat.nrows();
    let group = match pool {
        AttentionPool::GlobalMean => slots,
        AttentionPool::PerSeedMean => k_group,
    };
    let n = slots / group;
    let cols = kappa_hat.ncols();
    let mut z = Array2::<f64>::zeros((n, cols));
    for i in 0..n {
        let block = kappa_hat.slice(ndarray::s![i * group..(i + 1) * group, ..]);
        z.row_mut(i).assign(&block.mean_axis(Axis(0)).unwrap());
    }
    let gate = attention_gate(&z.view(), w);
    let mut out = kappa_hat.clone();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let g = gate.row(r / group);
        ndarray::Zip::from(&mut row).and(&g).for_each(|o, &gv| *o *= gv);
    }
    out
}

/// Eq-2 contraction, array form.
pub fn convolve_arrays(
    kappa: &ArrayView2<f64>,
    feats_grouped: &ArrayView2<f64>,
    dims: ContractDims,
) -> Result<Array2<f64>> {
    let slots = dims.n_seeds * dims.k;
    if kappa.nrows() != slots
        || kappa.ncols() != dims.c_in * dims.c_out
        || feats_grouped.nrows() != slots
        || feats_grouped.ncols() != dims.c_in
    {
        return Err(RprError::ShapeError {
            op: "convolve",
            left: kappa.shape().to_vec(),
            right: feats_grouped.shape().to_vec(),
        });
    }
    let kc = dims.k * dims.c_in;
    let mut out = Array2::<f64>::zeros((dims.n_seeds, dims.c_out));
    for n in 0..dims.n_seeds {
        let kb = kappa.slice(ndarray::s![n * dims.k..(n + 1) * dims.k, ..]);
        let kb = kb.to_shape((kc, dims.c_out)).unwrap();
        let fb = feats_grouped.slice(ndarray::s![n * dims.k..(n + 1) * dims.k, ..]);
        let fb = fb.to_shape((1, kc)).unwrap();
        out.row_mut(n).assign(&fb.dot(&kb).row(0));
    }
    Ok(out)
}

/// Seed-chunk size so a κ chunk stays around 32 MB.
fn chunk_seeds(k: usize, latent: usize) -> usize {
    ((1usize << 22) / (k * latent).max(1)).max(1)
}

/// Full block forward on plain arrays.
///
/// With the global gate, gating is folded into the kernel MLP's second
/// layer: κ = κ̂∘g = h·(W2∘g) + b2∘g and z = mean(κ̂) = mean(h)·W2 + b2 by
/// linearity, so the pre-gate kernel tensor never materializes and the gate
/// costs one tiny affine. Large latent sizes additionally stream the gated
/// GEMM + contraction over seed chunks, keeping memory at O(chunk).
pub fn ariconv_forward_arrays(
    seed_feats: &ArrayView2<f64>,
    rifs: &ArrayView2<f64>,
    neighbors: &[usize],
    w: &BlockWeights,
    dims: ContractDims,
    pool: AttentionPool,
) -> Result<Array2<f64>> {
    let slots = dims.n_seeds * dims.k;
    if seed_feats.nrows() != dims.n_seeds
        || seed_feats.ncols() != dims.c_in
        || rifs.nrows() != slots
        || neighbors.len() != slots
    {
        return Err(RprError::ShapeError {
            op: "ariconv_forward",
            left: seed_feats.shape().to_vec(),
            right: vec![slots, dims.c_in],
        });
    }
    let latent = dims.latent();
    let k = dims.k;
    let f_n = match pool {
        AttentionPool::GlobalMean => {
            let mut hidden = affine_rows(rifs, &w.kernel_w1, &w.kernel_b1);
            relu_inplace(&mut hidden);
            let mean_h = hidden.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
            let z = affine_rows(&mean_h.view(), &w.kernel_w2, &w.kernel_b2);
            let gate = attention_gate(&z.view(), w);
            let g = gate.row(0);
            let mut w2g = w.kernel_w2.to_owned();
            for mut row in w2g.rows_mut() {
                ndarray::Zip::from(&mut row).and(&g).for_each(|o, &gv| *o *= gv);
            }
            let mut b2g = w.kernel_b2.to_owned();
            ndarray::Zip::from(&mut b2g).and(&g).for_each(|o, &gv| *o *= gv);

            let chunk = chunk_seeds(k, latent);
            let mut f_n = Array2::<f64>::zeros((dims.n_seeds, dims.c_out));
            let mut n = 0;
            while n < dims.n_seeds {
                let hi = (n + chunk).min(dims.n_seeds);
                let rows = n * k..hi * k;
                let kappa = affine_rows(
                    &hidden.slice(ndarray::s![rows.clone(), ..]),
                    &w2g.view(),
                    &b2g.view(),
                );
                let mut f_sg = Array2::<f64>::zeros((rows.len(), dims.c_in));
                for (oi, &src) in neighbors[rows].iter().enumerate() {
                    f_sg.row_mut(oi).assign(&seed_feats.row(src));
                }
                let sub_dims = ContractDims {
                    n_seeds: hi - n,
                    k,
                    c_in: dims.c_in,
                    c_out: dims.c_out,
                };
                let part = convolve_arrays(&kappa.view(), &f_sg.view(), sub_dims)?;
                f_n.slice_mut(ndarray::s![n..hi, ..]).assign(&part);
                n = hi;
            }
            f_n
        }
        AttentionPool::PerSeedMean => {
            // per-seed gates vary across slots; chunk on seed boundaries
            let chunk = chunk_seeds(k, latent);
            let mut f_n = Array2::<f64>::zeros((dims.n_seeds, dims.c_out));
            let mut n = 0;
            while n < dims.n_seeds {
                let hi = (n + chunk).min(dims.n_seeds);
                let rows = n * k..hi * k;
                let rif_chunk = rifs.slice(ndarray::s![rows.clone(), ..]);
                let kappa_hat = generate_kernels_arrays(&rif_chunk, w);
                let kappa = attend_kernels_arrays(&kappa_hat, w, AttentionPool::PerSeedMean, k);
                let mut f_sg = Array2::<f64>::zeros((rows.len(), dims.c_in));
                for (oi, &src) in neighbors[rows].iter().enumerate() {
                    f_sg.row_mut(oi).assign(&seed_feats.row(src));
                }
                let sub_dims = ContractDims {
                    n_seeds: hi - n,
                    k,
                    c_in: dims.c_in,
                    c_out: dims.c_out,
                };
                let part = convolve_arrays(&kappa.view(), &f_sg.view(), sub_dims)?;
                f_n.slice_mut(ndarray::s![n..hi, ..]).assign(&part);
                n = hi;
            }
            f_n
        }
    };
    let mut out = affine_rows(&f_n.view(), &w.out_w, &w.out_b);
    relu_inplace(&mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// tape path
// ---------------------------------------------------------------------------

/// Shared per-slot kernel MLP on the tape.
pub fn generate_kernels(tape: &mut Tape, rifs: Var, bv: &BlockVars) -> Result<Var> {
    let h = tape.affine(rifs, bv.kernel_w1, bv.kernel_b1)?;
    let h = tape.relu(h);
    tape.affine(h, bv.kernel_w2, bv.kernel_b2)
}

/// Attention gating on the tape.
pub fn attend_kernels(
    tape: &mut Tape,
    kappa_hat: Var,
    bv: &BlockVars,
    pool: AttentionPool,
    k_group: usize,
) -> Result<Var> {
    let slots = tape.value(kappa_hat).shape()[0];
    let group = match pool {
        AttentionPool::GlobalMean => slots,
        AttentionPool::PerSeedMean => k_group,
    };
    let z = tape.mean_rows_grouped(kappa_hat, group)?;
    let logits = match &bv.attention {
        AttentionVars::Single { w, b } => tape.affine(z, *w, *b)?,
        AttentionVars::Bottleneck { w1, b1, w2, b2 } => {
            let h = tape.affine(z, *w1, *b1)?;
            let h = tape.relu(h);
            tape.affine(h, *w2, *b2)?
        }
    };
    let gate = tape.sigmoid(logits);
    match pool {
        AttentionPool::GlobalMean => tape.mul(kappa_hat, gate),
        AttentionPool::PerSeedMean => tape.mul_rows_grouped(kappa_hat, gate, k_group),
    }
}

/// Full block forward on the tape: gather → kernels → attention → contraction
/// → output MLP → relu. Uses the same gate folding as the array path for the
/// global pool, so only the gated kernel tensor is ever recorded.
pub fn ariconv_forward(
    tape: &mut Tape,
    seed_feats: Var,
    rifs: Var,
    neighbors: Arc<Vec<usize>>,
    bv: &BlockVars,
    dims: ContractDims,
    pool: AttentionPool,
) -> Result<Var> {
    let f_sg = tape.gather_rows(seed_feats, neighbors)?;
    let kappa = match pool {
        AttentionPool::GlobalMean => {
            let slots = dims.n_seeds * dims.k;
            let latent = dims.latent();
            let h = tape.affine(rifs, bv.kernel_w1, bv.kernel_b1)?;
            let h = tape.relu(h);
            let mean_h = tape.mean_rows_grouped(h, slots)?;
            let z = tape.affine(mean_h, bv.kernel_w2, bv.kernel_b2)?;
            let logits = match &bv.attention {
                AttentionVars::Single { w, b } => tape.affine(z, *w, *b)?,
                AttentionVars::Bottleneck { w1, b1, w2, b2 } => {
                    let a = tape.affine(z, *w1, *b1)?;
                    let a = tape.relu(a);
                    tape.affine(a, *w2, *b2)?
                }
            };
            let gate = tape.sigmoid(logits); // (1, C)
            let w2g = tape.mul(bv.kernel_w2, gate)?;
            let b2g_2d = tape.mul(bv.kernel_b2, gate)?;
            let b2g = tape.reshape(b2g_2d, &[latent])?;
            tape.affine(h, w2g, b2g)?
        }
        AttentionPool::PerSeedMean => {
            let kappa_hat = generate_kernels(tape, rifs, bv)?;
            attend_kernels(tape, kappa_hat, bv, AttentionPool::PerSeedMean, dims.k)?
        }
    };
    let f_n = tape.contract(kappa, f_sg, dims)?;
    let out = tape.affine(f_n, bv.out_w, bv.out_b)?;
    Ok(tape.relu(out))
}

impl ContractDims {
    pub fn latent(&self) -> usize {
        self.c_in * self.c_out
    }
}
