//! Prints label statistics of a few scanned scenes.

use std::time::Instant;

use clothlayer::layering::{encode, Strategy};
use clothlayer::scan::{check_visibility, resample, scan, ScanConfig};
use clothlayer::scene::{sample_scene, BodySpec, OutfitSpec};
use clothlayer::GarmentClass;

fn main() -> clothlayer::Result<()> {
    let cfg = ScanConfig::default();
    for (k, (u, l)) in GarmentClass::UPPER
        .iter()
        .flat_map(|u| GarmentClass::LOWER.iter().map(move |l| (*u, *l)))
        .enumerate()
    {
        let band = -0.04 + 0.02 * k as f64;
        let scene = sample_scene(&OutfitSpec::new(u, l, band)?, &BodySpec::default(), k as u64)?;
        let t = Instant::now();
        let s = scan(&scene, &ScanConfig { seed: k as u64, ..cfg.clone() })?;
        let dt = t.elapsed();
        let viol = check_visibility(&s, &scene);
        let r = resample(&s, 2048, 0)?;
        let enc = encode(&r.labels, Strategy::S2)?;
        let frac = |l: usize| enc.layers[l].iter().filter(|&&c| c == 1).count() as f64 / r.len() as f64;
        let hidden = r.labels.iter().filter(|x| x.hidden.is_some()).count();
        let gap = s
            .cloud
            .positions
            .iter()
            .zip(&s.labels)
            .filter(|(p, x)| x.visible == Some(l) && p.z > scene.meta.hem_z + 0.01 && p.z < scene.meta.waist_z)
            .count();
        println!(
            "{u:>10}+{l:<10} band {band:+.2} raw {:6} ({:?}) viol {viol} retries {} | body {:.2} upper {:.2} lower {:.2} hidden {hidden} gap {gap}",
            s.len(),
            dt,
            scene.meta.retries,
            frac(0),
            frac(1),
            frac(2)
        );
    }
    Ok(())
}
