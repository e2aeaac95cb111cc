//! Dataset manifest: one CSV row per generated scan.

use std::fs;
use std::io::Write;
use std::path::Path;

use clothlayer::GarmentClass;

use crate::error::{invalid, CliError, IoContext, Result};

pub const FILE_NAME: &str = "manifest.csv";
pub const COLUMNS: &str = "file,upper,lower,overlap_band_m,scene_seed,points,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub file: String,
    pub upper: GarmentClass,
    pub lower: GarmentClass,
    pub overlap_band_m: f64,
    pub scene_seed: u64,
    pub points: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# clothlayer {}\n# config_hash {}\n# seed {}\n{COLUMNS}\n",
            self.version, self.config_hash, self.seed
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{:.6},{},{},{}\n",
                e.file,
                e.upper,
                e.lower,
                e.overlap_band_m,
                e.scene_seed,
                e.points,
                e.split.name()
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        let mut f = fs::File::create(&path).at(&path)?;
        f.write_all(self.to_csv().as_bytes()).at(&path)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest { version: String::new(), config_hash: String::new(), seed: 0, entries: Vec::new() };
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let bad = |what: &str| CliError::Invalid(format!("manifest line {}: {what}", i + 1));
            if let Some(c) = line.strip_prefix("# ") {
                if let Some(v) = c.strip_prefix("clothlayer ") {
                    m.version = v.to_string();
                } else if let Some(v) = c.strip_prefix("config_hash ") {
                    m.config_hash = v.to_string();
                } else if let Some(v) = c.strip_prefix("seed ") {
                    m.seed = v.parse().map_err(|_| bad("bad seed"))?;
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line != COLUMNS {
                    return Err(bad("unexpected column header"));
                }
                saw_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let split = match f[6] {
                "train" => Split::Train,
                "val" => Split::Val,
                _ => return Err(bad("split must be train or val")),
            };
            m.entries.push(Entry {
                file: f[0].to_string(),
                upper: f[1].parse().map_err(|_| bad("bad upper garment"))?,
                lower: f[2].parse().map_err(|_| bad("bad lower garment"))?,
                overlap_band_m: f[3].parse().map_err(|_| bad("bad overlap band"))?,
                scene_seed: f[4].parse().map_err(|_| bad("bad scene seed"))?,
                points: f[5].parse().map_err(|_| bad("bad point count"))?,
                split,
            });
        }
        if !saw_header {
            return invalid("manifest has no column header");
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let text = fs::read_to_string(&path).at(&path)?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Invalid(msg) => CliError::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}
