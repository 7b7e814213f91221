use ndarray::{Array2, Axis};
use rpr_core::ariconv::*;
use rpr_core::autodiff::ContractDims;
use rpr_core::network::*;
use rpr_core::synth::{synth_dataset, SynthConfig};

fn stats(name: &str, a: &Array2<f64>) {
    let mean = a.mean().unwrap();
    let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
    let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("{name:12} mean={mean:+.4e} rms={rms:.4e} max={max:.4e}");
}

fn main() {
    let scfg = SynthConfig { n_places: 2, variants_per_place: 1, train_per_place: 1, points_per_cloud: 1024, structure_seed: 7, ..Default::default() };
    let data = synth_dataset(&scfg).unwrap();
    let cloud = &data.places[0].variants[0];
    let net = RprNet::init(RprNetConfig::desk(), 1).unwrap();
    let geom = net.prepare_geometry(cloud).unwrap();
    stats("rifs", &geom.rifs);
    // per-channel rms
    for c in 0..11 {
        let col = geom.rifs.column(c);
        let rms = (col.iter().map(|v| v*v).sum::<f64>() / col.len() as f64).sqrt();
        print!("ch{c}={rms:.3} ");
    }
    println!();
    // manual block-by-block
    let cfg = &net.config;
    let shapes = cfg.block_shapes();
    let mut feats = geom.stem.clone();
    let mut dense_sum: Option<Array2<f64>> = None;
    let mut outs = vec![];
    for bi in 0..6 {
        let input = match bi {
            0 => feats.clone(),
            5 => ndarray::concatenate(Axis(1), &outs.iter().map(|o: &Array2<f64>| o.view()).collect::<Vec<_>>()).unwrap(),
            _ => dense_sum.clone().unwrap(),
        };
        stats(&format!("in[{bi}]"), &input);
        let dims = ContractDims { n_seeds: cfg.n_seeds, k: cfg.k, c_in: shapes[bi].c_in, c_out: shapes[bi].c_out };
        let w = net_block_weights(&net, bi);
        let o = ariconv_forward_arrays(&input.view(), &geom.rifs.view(), &geom.neighbors, &w, dims, cfg.attention_pool).unwrap();
        stats(&format!("out[{bi}]"), &o);
        if bi == 0 { dense_sum = Some(o.clone()); }
        else if bi <= 4 { *dense_sum.as_mut().unwrap() += &o; outs.push(o.clone()); }
        feats = o;
    }
    let d = net.forward_arrays(&geom).unwrap();
    let rms = (d.values.iter().map(|v| v*v).sum::<f64>() / d.len() as f64).sqrt();
    println!("descriptor rms={rms:.4e}");
}

// expose block weights for probing
fn net_block_weights<'a>(net: &'a RprNet, bi: usize) -> BlockWeights<'a> {
    let shapes = net.config.block_shapes();
    let single = shapes[bi].bottleneck == 0;
    let get2 = |suffix: &str| net.params.by_name(&format!("block{bi}.{suffix}")).unwrap().view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let get1 = |suffix: &str| net.params.by_name(&format!("block{bi}.{suffix}")).unwrap().view().into_dimensionality::<ndarray::Ix1>().unwrap();
    BlockWeights {
        kernel_w1: get2("kernel_mlp.w1"), kernel_b1: get1("kernel_mlp.b1"),
        kernel_w2: get2("kernel_mlp.w2"), kernel_b2: get1("kernel_mlp.b2"),
        attention: if single { AttentionWeights::Single { w: get2("attention_fc.w"), b: get1("attention_fc.b") } }
        else { AttentionWeights::Bottleneck { w1: get2("attention_fc.w1"), b1: get1("attention_fc.b1"), w2: get2("attention_fc.w2"), b2: get1("attention_fc.b2") } },
        out_w: get2("output_mlp.w"), out_b: get1("output_mlp.b"),
    }
}
