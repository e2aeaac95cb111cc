//! Dataset generation: sample scenes, scan them, write PLY + manifest.

use std::fs;

use clothlayer::geometry::splitmix64;
use clothlayer::parallel;
use clothlayer::scan::{resample, scan};
use clothlayer::scene::{sample_scene_seeded, scene_seeds, SceneSpec, SceneSpecOutfit};
use clothlayer::{ply, GarmentClass, Strategy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{output_dir, provenance, write_class_codes, write_ply_file};
use crate::config::{combinations, RunConfig};
use crate::error::{invalid, CliError, IoContext, Result};
use crate::manifest::{Entry, Manifest, Split};

/// Scene counts per combination: floor of each share, then the remaining
/// scenes to the largest remainders (ties to the earlier combination).
pub fn quotas(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut q: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - q.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        q[i] += 1;
    }
    q
}

/// Per-scene seed derived from the global seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64 + 1))
}

/// The `val_count` files with the lowest SHA-256 of `"<file>:<scene_seed>"`
/// form the validation split.
pub fn assign_splits(entries: &mut [Entry], val_count: usize) {
    let mut keyed: Vec<([u8; 32], usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (Sha256::digest(format!("{}:{}", e.file, e.scene_seed).as_bytes()).into(), i))
        .collect();
    keyed.sort();
    for (rank, &(_, i)) in keyed.iter().enumerate() {
        entries[i].split = if rank < val_count { Split::Val } else { Split::Train };
    }
}

struct Planned {
    spec: SceneSpec,
    seed: u64,
}

fn plan(cfg: &RunConfig) -> Result<Vec<Planned>> {
    if let Some(path) = &cfg.scene {
        let text = fs::read_to_string(path).at(path)?;
        let spec: SceneSpec = toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        spec.outfit_spec()?;
        return Ok(vec![Planned { spec, seed: scene_seed(cfg.seed, 0) }]);
    }
    if cfg.scenes == 0 {
        return invalid("scenes must be positive");
    }
    let combos = combinations();
    let q = quotas(&cfg.weights()?, cfg.scenes);
    let mut outfits: Vec<(GarmentClass, GarmentClass)> =
        combos.iter().zip(&q).flat_map(|(&c, &n)| std::iter::repeat_n(c, n)).collect();
    outfits.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x6f75_7466)));
    Ok(outfits
        .into_iter()
        .enumerate()
        .map(|(i, (upper, lower))| {
            let seed = scene_seed(cfg.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let band = if cfg.overlap_band_max_m > cfg.overlap_band_min_m {
                rng.random_range(cfg.overlap_band_min_m..cfg.overlap_band_max_m)
            } else {
                cfg.overlap_band_min_m
            };
            let (pose_seed, shape_seed) = scene_seeds(seed);
            Planned {
                spec: SceneSpec { outfit: SceneSpecOutfit { upper, lower }, overlap_band_m: band, pose_seed, shape_seed },
                seed,
            }
        })
        .collect())
}

pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = output_dir(cfg, "dataset")?;
    let scenes_dir = dir.join("scenes");
    fs::create_dir_all(&scenes_dir).at(&scenes_dir)?;
    let planned = plan(cfg)?;
    let body = cfg.body_spec();
    let comments = provenance(cfg);

    let results = parallel::map_range(planned.len(), |i| -> Result<Entry> {
        let p = &planned[i];
        let file = format!("scan_{i:04}.ply");
        let scene = sample_scene_seeded(&p.spec.outfit_spec()?, &body, p.spec.pose_seed, p.spec.shape_seed)?;
        let scan_seed = splitmix64(p.seed ^ 0x7363_616e);
        let raw = scan(&scene, &cfg.scan_config(scan_seed))?;
        let s = resample(&raw, cfg.points, scan_seed.wrapping_add(1))?;
        let mut c = comments.clone();
        c.push(format!("scene_seed {}", p.seed));
        c.push(format!("outfit {} {}", p.spec.outfit.upper, p.spec.outfit.lower));
        let data = ply::cloud_to_ply(&s.cloud, Some(&s.labels), c)?;
        write_ply_file(&dir.join(&file), &data)?;
        let spec_path = scenes_dir.join(format!("scene_{i:04}.toml"));
        let spec_text = toml::to_string(&p.spec).expect("scene spec serializes");
        fs::write(&spec_path, spec_text).at(&spec_path)?;
        Ok(Entry {
            file,
            upper: p.spec.outfit.upper,
            lower: p.spec.outfit.lower,
            overlap_band_m: p.spec.overlap_band_m,
            scene_seed: p.seed,
            points: s.len(),
            split: Split::Train,
        })
    });
    let mut entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let val_count = cfg.val_count.min(entries.len());
    assign_splits(&mut entries, val_count);
    let manifest = Manifest { version: clothlayer::VERSION.into(), config_hash: cfg.hash(), seed: cfg.seed, entries };
    manifest.write(&dir)?;
    write_class_codes(&dir, Strategy::S5)?;
    cfg.write_resolved(&dir)?;
    Ok(manifest)
}

/// Counts scenes per combination, in [`combinations`] order.
pub fn combination_counts(manifest: &Manifest) -> Vec<usize> {
    combinations()
        .iter()
        .map(|&(u, l)| manifest.entries.iter().filter(|e| e.upper == u && e.lower == l).count())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotas_are_within_one_of_uniform() {
        for total in [1, 8, 9, 10, 90, 91, 100] {
            let q = quotas(&[1.0 / 9.0; 9], total);
            assert_eq!(q.iter().sum::<usize>(), total);
            let lo = total / 9;
            assert!(q.iter().all(|&c| c == lo || c == lo + 1), "{total}: {q:?}");
        }
    }

    #[test]
    fn quotas_follow_weights_within_rounding() {
        let w = [0.5, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(quotas(&w, 8), vec![4, 2, 2, 0, 0, 0, 0, 0, 0]);
        let q = quotas(&w, 7);
        assert_eq!(q.iter().sum::<usize>(), 7);
        for (c, w) in q.iter().zip(w) {
            assert!((*c as f64 - 7.0 * w).abs() < 1.0);
        }
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let mut entries: Vec<Entry> = (0..20)
            .map(|i| Entry {
                file: format!("scan_{i:04}.ply"),
                upper: GarmentClass::Top,
                lower: GarmentClass::Skirt,
                overlap_band_m: 0.0,
                scene_seed: scene_seed(5, i),
                points: 1,
                split: Split::Train,
            })
            .collect();
        assign_splits(&mut entries, 4);
        assert_eq!(entries.iter().filter(|e| e.split == Split::Val).count(), 4);
    }
}
