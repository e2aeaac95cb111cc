//! Colored per-layer PLY export of predictions (and ground truth).

use std::fs;
use std::path::{Path, PathBuf};

use clothlayer::geometry::{Aabb, PointCloud};
use clothlayer::layering::encode;
use clothlayer::ply::{PlyData, ScalarType};
use clothlayer::{Strategy, StrategyLabels};

use super::train::load_checkpoint;
use super::{output_dir, provenance, read_scan, write_ply_file};
use crate::config::RunConfig;
use crate::error::{invalid, CliError, IoContext, Result};
use crate::palette;

/// Predictions as CSV: a `# strategy sN` comment, a header of layer names
/// and one row of class codes per point.
pub fn predictions_to_csv(labels: &StrategyLabels) -> String {
    let mut s = format!("# clothlayer {}\n# strategy {}\n", clothlayer::VERSION, labels.strategy);
    s.push_str(&labels.strategy.layer_names().join(","));
    s.push('\n');
    for i in 0..labels.len() {
        let row: Vec<String> = labels.point(i).iter().map(u8::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn predictions_from_csv(text: &str, fallback: Strategy) -> Result<StrategyLabels> {
    let mut strategy = fallback;
    let mut layers: Option<Vec<Vec<u8>>> = None;
    for (i, line) in text.lines().enumerate() {
        let bad = |what: &str| CliError::Invalid(format!("predictions line {}: {what}", i + 1));
        if let Some(c) = line.strip_prefix('#') {
            if let Some(s) = c.trim().strip_prefix("strategy ") {
                strategy = s.parse()?;
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match &mut layers {
            None => {
                let names: Vec<&str> = line.split(',').map(str::trim).collect();
                if names != strategy.layer_names() {
                    return Err(bad(&format!("header does not list the layers of {strategy}")));
                }
                layers = Some(vec![Vec::new(); names.len()]);
            }
            Some(ls) => {
                let codes: Vec<&str> = line.split(',').collect();
                if codes.len() != ls.len() {
                    return Err(bad("wrong number of codes"));
                }
                for (l, c) in ls.iter_mut().zip(codes) {
                    l.push(c.trim().parse().map_err(|_| bad("code is not a small integer"))?);
                }
            }
        }
    }
    let Some(layers) = layers else {
        return invalid("predictions file has no header");
    };
    Ok(StrategyLabels::new(strategy, layers)?)
}

fn colored_layer(cloud: &PointCloud, shift_x: f64, strategy: Strategy, layer: usize, codes: &[u8], comments: Vec<String>) -> Result<PlyData> {
    let mut d = PlyData { comments, ..PlyData::default() };
    let names = strategy.class_names(layer);
    for (k, axis) in ["x", "y", "z"].into_iter().enumerate() {
        let shift = if k == 0 { shift_x } else { 0.0 };
        d.push_column(axis, ScalarType::F32, cloud.positions.iter().map(|p| p[k] + shift).collect())?;
    }
    let colors: Vec<[u8; 3]> = codes.iter().map(|&c| palette::color(names[c as usize])).collect();
    for (k, ch) in ["red", "green", "blue"].into_iter().enumerate() {
        d.push_column(ch, ScalarType::U8, colors.iter().map(|c| c[k] as f64).collect())?;
    }
    d.push_column("class", ScalarType::U8, codes.iter().map(|&c| c as f64).collect())?;
    Ok(d)
}

/// Writes `<layer>_pred.ply` for every layer, plus `<layer>_gt.ply` shifted
/// along +x next to the prediction when the scan carries ground truth.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let Some(scan_path) = &cfg.scan else {
        return invalid("export needs --scan");
    };
    let (cloud, gt) = read_scan(scan_path)?;
    let dir = output_dir(cfg, "export")?;
    let mut written = Vec::new();

    let pred = match (&cfg.predictions, &cfg.checkpoint) {
        (Some(p), _) => predictions_from_csv(&fs::read_to_string(p).at(p)?, cfg.strategy()?)?,
        (None, Some(ck)) => {
            let (_, model, _) = load_checkpoint(ck)?;
            let pred = model.predict(&cloud)?;
            let path = dir.join("predictions.csv");
            fs::write(&path, predictions_to_csv(&pred)).at(&path)?;
            written.push(path);
            pred
        }
        (None, None) => return invalid("export needs --predictions or --checkpoint"),
    };
    if pred.len() != cloud.len() {
        return invalid(format!("{} predictions for a scan of {} points", pred.len(), cloud.len()));
    }
    let strategy = pred.strategy;
    let gt = gt.map(|g| encode(&g, strategy)).transpose()?;
    let shift = Aabb::of(&cloud.positions).map_or(0.0, |b| 1.2 * b.extent()[0].max(0.1));
    let mut comments = provenance(cfg);
    comments.push(format!("strategy {strategy}"));
    comments.push(format!("source {}", file_name(scan_path)));

    for (l, name) in strategy.layer_names().iter().enumerate() {
        let mut c = comments.clone();
        c.push(format!("layer {name} prediction"));
        let path = dir.join(format!("{name}_pred.ply"));
        write_ply_file(&path, &colored_layer(&cloud, 0.0, strategy, l, &pred.layers[l], c)?)?;
        written.push(path);
        if let Some(g) = &gt {
            let mut c = comments.clone();
            c.push(format!("layer {name} ground_truth x_offset {shift:.4}"));
            let path = dir.join(format!("{name}_gt.ply"));
            write_ply_file(&path, &colored_layer(&cloud, shift, strategy, l, &g.layers[l], c)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_csv_round_trip() {
        let l = StrategyLabels::new(Strategy::S3, vec![vec![0, 1], vec![2, 0], vec![1, 0]]).unwrap();
        assert_eq!(predictions_from_csv(&predictions_to_csv(&l), Strategy::S2).unwrap(), l);
        assert!(predictions_from_csv("body,upper,lower\n0,1\n", Strategy::S2).is_err());
    }
}
