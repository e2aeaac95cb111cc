pub mod eval;
pub mod export;
pub mod gen;
pub mod train;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clothlayer::geometry::PointCloud;
use clothlayer::layering::encode;
use clothlayer::nn::Sample;
use clothlayer::ply::{self, PlyData, PlyFormat};
use clothlayer::{CanonicalLabel, Strategy};

use crate::config::RunConfig;
use crate::error::{invalid, IoContext, Result};
use crate::manifest::{Manifest, Split};

/// Provenance comments embedded in every PLY artifact.
pub fn provenance(cfg: &RunConfig) -> Vec<String> {
    vec![
        format!("clothlayer {}", clothlayer::VERSION),
        format!("config_hash {}", cfg.hash()),
        format!("seed {}", cfg.seed),
    ]
}

pub fn output_dir(cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).at(&dir)?;
    Ok(dir)
}

pub fn write_ply_file(path: &Path, data: &PlyData) -> Result<()> {
    let f = fs::File::create(path).at(path)?;
    ply::write_ply(BufWriter::new(f), data, PlyFormat::BinaryLittleEndian).at(path)
}

pub fn read_scan(path: &Path) -> Result<(PointCloud, Option<Vec<CanonicalLabel>>)> {
    let f = fs::File::open(path).at(path)?;
    let data = ply::read_ply(BufReader::new(f)).at(path)?;
    ply::ply_to_cloud(&data).at(path)
}

pub fn write_class_codes(dir: &Path, strategy: Strategy) -> Result<()> {
    let path = dir.join("class_codes.tsv");
    let f = fs::File::create(&path).at(&path)?;
    clothlayer::layering::write_class_table(strategy, BufWriter::new(f)).at(&path)
}

/// Labeled samples of one manifest split, in manifest order.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Option<Split>, strategy: Strategy) -> Result<Vec<(String, Sample)>> {
    manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| {
            let path = dir.join(&e.file);
            let (cloud, labels) = read_scan(&path)?;
            let Some(labels) = labels else {
                return invalid(format!("{} has no ground-truth labels", path.display()));
            };
            let labels = encode(&labels, strategy)?;
            Ok((e.file.clone(), Sample { cloud, labels }))
        })
        .collect()
}

/// Parses the `split` option: `None` means every entry.
pub fn split_filter(cfg: &RunConfig) -> Option<Split> {
    match cfg.split.as_str() {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        _ => None,
    }
}
