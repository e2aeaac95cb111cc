//! Trains a model on freshly generated scans and prints the epoch log.
//!
//! `cargo run --release --example train_probe -- <set|edge|pt> <train> <val> <points> <epochs> [batch] [augment]`

use std::time::Instant;

use clothlayer::layering::Strategy;
use clothlayer::nn::train::evaluate;
use clothlayer::nn::{BackboneKind, Model, ModelConfig, Sample, TrainConfig, Trainer};
use clothlayer::scan::{resample, scan, ScanConfig};
use clothlayer::scene::{sample_scene, BodySpec, OutfitSpec};
use clothlayer::GarmentClass;

fn samples(n: usize, offset: u64, points: usize) -> clothlayer::Result<Vec<Sample>> {
    let combos: Vec<_> = GarmentClass::UPPER
        .iter()
        .flat_map(|u| GarmentClass::LOWER.iter().map(move |l| (*u, *l)))
        .collect();
    (0..n)
        .map(|i| {
            let seed = offset + i as u64;
            let (u, l) = combos[(seed as usize) % combos.len()];
            let band = -0.04 + 0.16 * ((seed * 7919) % 100) as f64 / 100.0;
            let scene = sample_scene(&OutfitSpec::new(u, l, band)?, &BodySpec::default(), seed)?;
            let s = scan(&scene, &ScanConfig { seed, ..ScanConfig::default() })?;
            let s = resample(&s, points, seed)?;
            Sample::from_scan(&s, Strategy::S2)
        })
        .collect()
}

fn main() -> clothlayer::Result<()> {
    let a: Vec<String> = std::env::args().collect();
    let kind: BackboneKind = a[1].parse()?;
    let (nt, nv, points, epochs) = (a[2].parse().unwrap(), a[3].parse().unwrap(), a[4].parse().unwrap(), a[5].parse().unwrap());
    let batch = a.get(6).map_or(8, |s| s.parse().unwrap());
    let augment = a.get(7).is_some_and(|s| s == "aug");
    let t = Instant::now();
    let train = samples(nt, 0, points)?;
    let val = samples(nv, 10_000, points)?;
    println!("data {:?}", t.elapsed());
    let mut cfg = ModelConfig::new(kind, Strategy::S2);
    cfg.augment = augment;
    let model = Model::<f32>::new(cfg, 1)?;
    println!("params {}", model.params.scalar_count());
    let tc = TrainConfig { epochs, batch_size: batch, seed: 1, ..TrainConfig::default() };
    let mut tr = Trainer::new(model, tc)?;
    let t = Instant::now();
    tr.fit(&train, if nv > 0 { Some(&val) } else { None }, |r| {
        println!("{:?} {}", t.elapsed(), r.csv_row());
    })?;
    let acc = evaluate(&tr.model, &train)?;
    println!("final train avg {:?}", acc.avg_miou());
    Ok(())
}
