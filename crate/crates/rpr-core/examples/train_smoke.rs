use rpr_core::network::RprNetConfig;
use rpr_core::retrieval::{embed_clouds, evaluate, PlaceDatabase};
use rpr_core::synth::{synth_dataset, SynthConfig};
use rpr_core::training::{train, AugmentConfig, TrainConfig, TrainingSample};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_places: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let desk = args.get(3).map(|s| s == "desk").unwrap_or(false);

    let scfg = SynthConfig {
        n_places,
        variants_per_place: 8,
        train_per_place: 6,
        points_per_cloud: if desk { 1024 } else { 256 },
        structure_seed: 7,
        ..Default::default()
    };
    let t0 = Instant::now();
    let data = synth_dataset(&scfg).unwrap();
    println!("synth: {:?}", t0.elapsed());

    let mut train_samples = Vec::new();
    let mut db_entries = Vec::new();
    let mut queries = Vec::new();
    for place in &data.places {
        for (vi, cloud) in place.variants.iter().enumerate() {
            if vi < scfg.train_per_place {
                train_samples.push(TrainingSample { cloud: cloud.clone(), position: place.position });
                db_entries.push((cloud.clone(), place.position));
            } else {
                queries.push((cloud.clone(), place.position));
            }
        }
    }

    let net = if desk {
        RprNetConfig::desk()
    } else {
        RprNetConfig {
            n_seeds: 64, k: 8, channels: 8, final_channels: 32, descriptor_dim: 32,
            kernel_hidden: 8, attention_reduction: 64,
            ..Default::default()
        }
    };
    let tcfg = TrainConfig {
        net,
        epochs,
        seed: 1,
        augment: AugmentConfig::default(),
        ..Default::default()
    };
    let t0 = Instant::now();
    let result = train(&train_samples, &tcfg, |em| {
        println!("{} ({:?})", em.to_line(), t0.elapsed());
    }).unwrap();
    println!("train total: {:?}, aborted: {:?}", t0.elapsed(), result.aborted);

    // eval
    let t0 = Instant::now();
    let model = result.model;
    let db_clouds: Vec<_> = db_entries.iter().map(|(c, _)| c.clone()).collect();
    let db_pos: Vec<_> = db_entries.iter().map(|(_, p)| *p).collect();
    let q_clouds: Vec<_> = queries.iter().map(|(c, _)| c.clone()).collect();
    let q_pos: Vec<_> = queries.iter().map(|(_, p)| *p).collect();
    let db = PlaceDatabase::new(embed_clouds(&model, &db_clouds).unwrap(), db_pos).unwrap();
    let qd = embed_clouds(&model, &q_clouds).unwrap();
    let report = evaluate(&db, &qd, &q_pos, 25.0).unwrap();
    println!("eval: {:?} recall@1={} recall@1pct={}", t0.elapsed(), report.recall_at_1, report.recall_at_top1pct);
}
