//! Multi-layer point labels and the five encodings used to train and
//! evaluate the segmentation heads.
//!
//! Every point carries a [`CanonicalLabel`]: whether the body surface is
//! within reach, the garment seen from outside, and the garment hidden
//! underneath it. A [`Strategy`] turns that into one or three integer label
//! layers; [`decode`] goes back, tolerating the inconsistent combinations an
//! independent-head network can produce.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garment::GarmentClass;

/// Ground-truth layering of a single surface point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalLabel {
    pub is_body: bool,
    pub visible: Option<GarmentClass>,
    pub hidden: Option<GarmentClass>,
}

impl CanonicalLabel {
    /// Bare skin.
    pub const SKIN: CanonicalLabel = CanonicalLabel { is_body: true, visible: None, hidden: None };

    pub fn garment(is_body: bool, visible: GarmentClass, hidden: Option<GarmentClass>) -> Self {
        CanonicalLabel { is_body, visible: Some(visible), hidden }
    }

    /// Checks the two structural rules: a hidden garment is always a lower
    /// garment under an upper one, and a point with nothing visible is skin.
    pub fn check(&self) -> std::result::Result<(), &'static str> {
        match (self.visible, self.hidden) {
            (None, Some(_)) => Err("hidden garment without a visible garment"),
            (None, None) if !self.is_body => Err("no garment and no body"),
            (Some(v), Some(h)) if !(v.is_upper() && h.is_lower()) => {
                Err("hidden garment must be a lower garment under an upper garment")
            }
            _ => Ok(()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }

    /// Every label that satisfies [`CanonicalLabel::check`] (31 of them).
    pub fn all_valid() -> Vec<CanonicalLabel> {
        let mut out = vec![CanonicalLabel::SKIN];
        for is_body in [false, true] {
            for v in GarmentClass::ALL {
                out.push(CanonicalLabel::garment(is_body, v, None));
            }
            for v in GarmentClass::UPPER {
                for h in GarmentClass::LOWER {
                    out.push(CanonicalLabel::garment(is_body, v, Some(h)));
                }
            }
        }
        out
    }

    fn lower_present(&self) -> Option<GarmentClass> {
        self.hidden.or(self.visible.filter(|v| v.is_lower()))
    }
}

/// Label encoding strategies, from the single coarse layer of `S1` to the
/// fully explicit three-layer `S5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    S1,
    S2,
    S3,
    S4,
    S5,
}

const BODY_CLASSES: &[&str] = &["no-body", "body"];

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::S1, Strategy::S2, Strategy::S3, Strategy::S4, Strategy::S5];

    pub fn layer_count(self) -> usize {
        match self {
            Strategy::S1 => 1,
            _ => 3,
        }
    }

    pub fn layer_names(self) -> &'static [&'static str] {
        match self {
            Strategy::S1 => &["coarse"],
            Strategy::S2 | Strategy::S4 => &["body", "upper", "lower"],
            Strategy::S3 | Strategy::S5 => &["body", "visible", "hidden"],
        }
    }

    /// Class names of one layer, indexed by code.
    pub fn class_names(self, layer: usize) -> &'static [&'static str] {
        match (self, layer) {
            (Strategy::S1, 0) => &["other", "upper", "overlap", "lower"],
            (Strategy::S1, _) => &[],
            (_, 0) => BODY_CLASSES,
            (Strategy::S2, 1) => &["other", "upper"],
            (Strategy::S2, 2) => &["other", "lower"],
            (Strategy::S3, 1) => &["other", "upper", "lower"],
            (Strategy::S3, 2) => &["other", "hidden"],
            (Strategy::S4, 1) => &["other", "long-shirt", "t-shirt", "top"],
            (Strategy::S4, 2) => &["other", "long-pants", "shorts", "skirt"],
            (Strategy::S5, 1) => &["other", "t-shirt", "shorts", "long-pants", "long-shirt", "top", "skirt"],
            (Strategy::S5, 2) => &["other", "skirt", "shorts", "long-pants"],
            _ => &[],
        }
    }

    pub fn class_counts(self) -> Vec<usize> {
        (0..self.layer_count()).map(|l| self.class_names(l).len()).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::S1 => "s1",
            Strategy::S2 => "s2",
            Strategy::S3 => "s3",
            Strategy::S4 => "s4",
            Strategy::S5 => "s5",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("strategy").unwrap_or(&t).trim_start_matches(['-', '_', ' ']);
        Ok(match t {
            "s1" | "1" => Strategy::S1,
            "s2" | "2" => Strategy::S2,
            "s3" | "3" => Strategy::S3,
            "s4" | "4" => Strategy::S4,
            "s5" | "5" => Strategy::S5,
            _ => return Err(Error::InvalidArgument(format!("unknown strategy '{s}' (expected s1..s5)"))),
        })
    }
}

/// Per-point integer labels in a strategy's encoding, one array per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyLabels {
    pub strategy: Strategy,
    pub layers: Vec<Vec<u8>>,
    pub class_counts: Vec<usize>,
}

impl StrategyLabels {
    /// Wraps raw layer arrays, checking layer count, lengths and code ranges.
    pub fn new(strategy: Strategy, layers: Vec<Vec<u8>>) -> Result<Self> {
        let class_counts = strategy.class_counts();
        if layers.len() != class_counts.len() {
            return Err(Error::InvalidArgument(format!(
                "{strategy} expects {} layers, got {}",
                class_counts.len(),
                layers.len()
            )));
        }
        let n = layers[0].len();
        for (l, layer) in layers.iter().enumerate() {
            if layer.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} has {} points, layer 0 has {n}",
                    layer.len()
                )));
            }
            if let Some(i) = layer.iter().position(|&c| c as usize >= class_counts[l]) {
                return Err(Error::InvalidArgument(format!(
                    "code {} at point {i} of layer {l} is out of range for {strategy} (classes: {})",
                    layer[i], class_counts[l]
                )));
            }
        }
        Ok(StrategyLabels { strategy, layers, class_counts })
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Codes of point `i` across all layers.
    pub fn point(&self, i: usize) -> Vec<u8> {
        self.layers.iter().map(|l| l[i]).collect()
    }

    pub fn select(&self, idx: &[usize]) -> StrategyLabels {
        StrategyLabels {
            strategy: self.strategy,
            layers: self.layers.iter().map(|l| idx.iter().map(|&i| l[i]).collect()).collect(),
            class_counts: self.class_counts.clone(),
        }
    }

    /// Concatenates label sets of the same strategy.
    pub fn concat(parts: &[StrategyLabels]) -> Result<StrategyLabels> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut layers = vec![Vec::new(); first.layers.len()];
        for p in parts {
            if p.strategy != first.strategy {
                return Err(Error::InvalidArgument("cannot concatenate labels of different strategies".into()));
            }
            for (dst, src) in layers.iter_mut().zip(&p.layers) {
                dst.extend_from_slice(src);
            }
        }
        Ok(StrategyLabels { strategy: first.strategy, layers, class_counts: first.class_counts.clone() })
    }
}

/// Upper/lower region of the coarse segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoarseRegion {
    Other,
    Upper,
    Overlap,
    Lower,
}

/// Coarse label: region plus, where the strategy carries it, the body bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoarseLabel {
    pub region: CoarseRegion,
    pub body: Option<bool>,
}

impl CoarseLabel {
    pub fn without_body(self) -> CoarseLabel {
        CoarseLabel { body: None, ..self }
    }
}

fn region_of(x: &CanonicalLabel) -> CoarseRegion {
    match x.visible {
        Some(v) if v.is_upper() && x.hidden.is_some() => CoarseRegion::Overlap,
        Some(v) if v.is_upper() => CoarseRegion::Upper,
        Some(_) => CoarseRegion::Lower,
        None => CoarseRegion::Other,
    }
}

/// Projects canonical labels onto {other, upper, overlap, lower} × body bit.
pub fn coarse_project(labels: &[CanonicalLabel]) -> Vec<CoarseLabel> {
    labels.iter().map(|x| CoarseLabel { region: region_of(x), body: Some(x.is_body) }).collect()
}

fn s4_upper_code(c: GarmentClass) -> u8 {
    match c {
        GarmentClass::LongShirt => 1,
        GarmentClass::TShirt => 2,
        GarmentClass::Top => 3,
        _ => 0,
    }
}

fn lower_code(strategy: Strategy, c: GarmentClass) -> u8 {
    match (strategy, c) {
        (Strategy::S4, GarmentClass::LongPants) => 1,
        (Strategy::S4, GarmentClass::Shorts) => 2,
        (Strategy::S4, GarmentClass::Skirt) => 3,
        (Strategy::S5, GarmentClass::Skirt) => 1,
        (Strategy::S5, GarmentClass::Shorts) => 2,
        (Strategy::S5, GarmentClass::LongPants) => 3,
        _ => 0,
    }
}

fn s5_visible_code(c: GarmentClass) -> u8 {
    match c {
        GarmentClass::TShirt => 1,
        GarmentClass::Shorts => 2,
        GarmentClass::LongPants => 3,
        GarmentClass::LongShirt => 4,
        GarmentClass::Top => 5,
        GarmentClass::Skirt => 6,
    }
}

const S4_UPPER: [Option<GarmentClass>; 4] =
    [None, Some(GarmentClass::LongShirt), Some(GarmentClass::TShirt), Some(GarmentClass::Top)];
const S4_LOWER: [Option<GarmentClass>; 4] =
    [None, Some(GarmentClass::LongPants), Some(GarmentClass::Shorts), Some(GarmentClass::Skirt)];
const S5_VISIBLE: [Option<GarmentClass>; 7] = [
    None,
    Some(GarmentClass::TShirt),
    Some(GarmentClass::Shorts),
    Some(GarmentClass::LongPants),
    Some(GarmentClass::LongShirt),
    Some(GarmentClass::Top),
    Some(GarmentClass::Skirt),
];
const S5_HIDDEN: [Option<GarmentClass>; 4] =
    [None, Some(GarmentClass::Skirt), Some(GarmentClass::Shorts), Some(GarmentClass::LongPants)];

/// Codes of a single canonical label under `strategy`.
pub fn encode_one(x: &CanonicalLabel, strategy: Strategy) -> Vec<u8> {
    let body = x.is_body as u8;
    match strategy {
        Strategy::S1 => vec![match region_of(x) {
            CoarseRegion::Other => 0,
            CoarseRegion::Upper => 1,
            CoarseRegion::Overlap => 2,
            CoarseRegion::Lower => 3,
        }],
        Strategy::S2 => {
            let upper = x.visible.is_some_and(|v| v.is_upper()) as u8;
            vec![body, upper, x.lower_present().is_some() as u8]
        }
        Strategy::S3 => {
            let vis = match x.visible {
                Some(v) if v.is_upper() => 1,
                Some(_) => 2,
                None => 0,
            };
            vec![body, vis, x.hidden.is_some() as u8]
        }
        Strategy::S4 => {
            let up = x.visible.map_or(0, s4_upper_code);
            let low = x.lower_present().map_or(0, |c| lower_code(Strategy::S4, c));
            vec![body, up, low]
        }
        Strategy::S5 => {
            let vis = x.visible.map_or(0, s5_visible_code);
            let hid = x.hidden.map_or(0, |c| lower_code(Strategy::S5, c));
            vec![body, vis, hid]
        }
    }
}

/// Encodes ground-truth labels. Fails on the first label that breaks the
/// canonical rules, naming its index.
pub fn encode(labels: &[CanonicalLabel], strategy: Strategy) -> Result<StrategyLabels> {
    let nl = strategy.layer_count();
    let mut layers = vec![Vec::with_capacity(labels.len()); nl];
    for (i, x) in labels.iter().enumerate() {
        if let Err(why) = x.check() {
            return Err(Error::InvalidArgument(format!("label at point {i} is invalid: {why} ({x:?})")));
        }
        for (layer, code) in layers.iter_mut().zip(encode_one(x, strategy)) {
            layer.push(code);
        }
    }
    Ok(StrategyLabels { strategy, layers, class_counts: strategy.class_counts() })
}

/// Decoded labels: full canonical labels for S4/S5, coarse ones for S1–S3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Canonical(Vec<CanonicalLabel>),
    Coarse(Vec<CoarseLabel>),
}

/// Result of decoding, with the points whose code combination no ground
/// truth could produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub labels: Decoded,
    /// Indices of points whose codes contradict the layering rules; these are
    /// decoded with the hidden garment dropped.
    pub inconsistent: Vec<usize>,
    /// Points predicted as neither body nor any garment. They decode to
    /// `is_body = false` with no garment and are reported under "other".
    pub unlabeled: usize,
}

fn decode_canonical(strategy: Strategy, codes: [u8; 3]) -> (CanonicalLabel, bool) {
    let is_body = codes[0] == 1;
    let (visible, hidden, consistent) = match strategy {
        Strategy::S4 => {
            let up = S4_UPPER[codes[1] as usize];
            let low = S4_LOWER[codes[2] as usize];
            match (up, low) {
                (Some(u), l) => (Some(u), l, true),
                (None, l) => (l, None, true),
            }
        }
        _ => {
            let vis = S5_VISIBLE[codes[1] as usize];
            let hid = S5_HIDDEN[codes[2] as usize];
            match (vis, hid) {
                (_, None) => (vis, None, true),
                (Some(v), Some(h)) if v.is_upper() => (Some(v), Some(h), true),
                (v, Some(_)) => (v, None, false),
            }
        }
    };
    (CanonicalLabel { is_body, visible, hidden }, consistent)
}

fn decode_coarse(strategy: Strategy, codes: &[u8]) -> (CoarseLabel, bool) {
    use CoarseRegion::*;
    match strategy {
        Strategy::S1 => {
            let region = [Other, Upper, Overlap, Lower][codes[0] as usize];
            (CoarseLabel { region, body: None }, true)
        }
        Strategy::S2 => {
            let region = match (codes[1], codes[2]) {
                (1, 1) => Overlap,
                (1, _) => Upper,
                (_, 1) => Lower,
                _ => Other,
            };
            (CoarseLabel { region, body: Some(codes[0] == 1) }, true)
        }
        _ => {
            let (region, ok) = match (codes[1], codes[2]) {
                (1, 1) => (Overlap, true),
                (1, _) => (Upper, true),
                (2, h) => (Lower, h == 0),
                (_, h) => (Other, h == 0),
            };
            (CoarseLabel { region, body: Some(codes[0] == 1) }, ok)
        }
    }
}

/// Inverse of [`encode`]. Never fails on in-range codes: combinations that
/// violate the layering rules are decoded leniently and reported.
pub fn decode(enc: &StrategyLabels) -> Result<DecodeOutcome> {
    let checked = StrategyLabels::new(enc.strategy, enc.layers.clone())?;
    let n = checked.len();
    let mut inconsistent = Vec::new();
    let mut unlabeled = 0;
    let labels = match enc.strategy {
        Strategy::S4 | Strategy::S5 => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let codes = [enc.layers[0][i], enc.layers[1][i], enc.layers[2][i]];
                let (x, ok) = decode_canonical(enc.strategy, codes);
                if !ok {
                    inconsistent.push(i);
                }
                if !x.is_body && x.visible.is_none() {
                    unlabeled += 1;
                }
                out.push(x);
            }
            Decoded::Canonical(out)
        }
        s => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let codes: Vec<u8> = enc.layers.iter().map(|l| l[i]).collect();
                let (x, ok) = decode_coarse(s, &codes);
                if !ok {
                    inconsistent.push(i);
                }
                out.push(x);
            }
            Decoded::Coarse(out)
        }
    };
    Ok(DecodeOutcome { labels, inconsistent, unlabeled })
}

/// Membership of each point in the overlap region (upper garment over a
/// hidden lower garment) as implied by an encoding.
pub fn overlap_set(enc: &StrategyLabels) -> Vec<bool> {
    let n = enc.len();
    (0..n)
        .map(|i| match enc.strategy {
            Strategy::S1 => enc.layers[0][i] == 2,
            Strategy::S2 => enc.layers[1][i] == 1 && enc.layers[2][i] == 1,
            Strategy::S3 => enc.layers[2][i] == 1,
            Strategy::S4 => enc.layers[1][i] != 0 && enc.layers[2][i] != 0,
            Strategy::S5 => enc.layers[2][i] != 0,
        })
        .collect()
}

/// Disagreement between the overlap sets of two encodings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub first: Strategy,
    pub second: Strategy,
    pub points: usize,
    /// Points in the overlap set of exactly one of the two encodings.
    pub mismatches: usize,
    pub mismatch_indices: Vec<usize>,
}

/// Compares the overlap regions implied by two encodings of the same points.
pub fn consistency_check(e1: &StrategyLabels, e2: &StrategyLabels) -> Result<ConsistencyReport> {
    if e1.len() != e2.len() {
        return Err(Error::InvalidArgument(format!(
            "encodings cover {} and {} points",
            e1.len(),
            e2.len()
        )));
    }
    let a = overlap_set(e1);
    let b = overlap_set(e2);
    let mismatch_indices: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    Ok(ConsistencyReport {
        first: e1.strategy,
        second: e2.strategy,
        points: a.len(),
        mismatches: mismatch_indices.len(),
        mismatch_indices,
    })
}

/// Header line of the class-code sidecar format.
pub const CLASS_TABLE_HEADER: &str = "# clothlayer class codes v1";

/// Writes the class-code table of `strategy` as tab-separated text:
/// a header comment, then one `strategy layer layer_name code class` row per
/// class.
pub fn write_class_table<W: Write>(strategy: Strategy, mut w: W) -> io::Result<()> {
    writeln!(w, "{CLASS_TABLE_HEADER}")?;
    writeln!(w, "strategy\tlayer\tlayer_name\tcode\tclass")?;
    for (l, lname) in strategy.layer_names().iter().enumerate() {
        for (code, cname) in strategy.class_names(l).iter().enumerate() {
            writeln!(w, "{strategy}\t{l}\t{lname}\t{code}\t{cname}")?;
        }
    }
    Ok(())
}

/// Parses a class-code sidecar back into per-layer class names.
pub fn read_class_table<R: BufRead>(r: R) -> Result<(Strategy, Vec<Vec<String>>)> {
    let mut strategy = None;
    let mut layers: Vec<Vec<String>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("strategy\t") {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("class table line {}: '{line}'", lineno + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let s: Strategy = f[0].parse()?;
        if *strategy.get_or_insert(s) != s {
            return Err(bad());
        }
        let l: usize = f[1].parse().map_err(|_| bad())?;
        let code: usize = f[3].parse().map_err(|_| bad())?;
        if l >= layers.len() {
            layers.resize(l + 1, Vec::new());
        }
        if code != layers[l].len() {
            return Err(bad());
        }
        layers[l].push(f[4].to_string());
    }
    let strategy = strategy.ok_or_else(|| Error::Format("empty class table".into()))?;
    Ok((strategy, layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use GarmentClass::*;

    fn lab(b: bool, v: Option<GarmentClass>, h: Option<GarmentClass>) -> CanonicalLabel {
        CanonicalLabel { is_body: b, visible: v, hidden: h }
    }

    fn codes(x: CanonicalLabel, s: Strategy) -> Vec<u8> {
        encode(&[x], s).unwrap().point(0)
    }

    #[test]
    fn belt_point_encodings() {
        let x = lab(false, Some(TShirt), Some(LongPants));
        assert_eq!(codes(x, Strategy::S1), vec![2]);
        assert_eq!(codes(x, Strategy::S2), vec![0, 1, 1]);
        assert_eq!(codes(x, Strategy::S3), vec![0, 1, 1]);
        assert_eq!(codes(x, Strategy::S4), vec![0, 2, 1]);
        assert_eq!(codes(x, Strategy::S5), vec![0, 1, 3]);
    }

    #[test]
    fn skin_and_skirt_encodings() {
        assert_eq!(codes(CanonicalLabel::SKIN, Strategy::S1), vec![0]);
        for s in [Strategy::S2, Strategy::S3, Strategy::S4, Strategy::S5] {
            assert_eq!(codes(CanonicalLabel::SKIN, s), vec![1, 0, 0]);
        }
        let x = lab(false, Some(Skirt), None);
        assert_eq!(codes(x, Strategy::S1), vec![3]);
        assert_eq!(codes(x, Strategy::S2), vec![0, 0, 1]);
        assert_eq!(codes(x, Strategy::S3), vec![0, 2, 0]);
        assert_eq!(codes(x, Strategy::S4), vec![0, 0, 3]);
        assert_eq!(codes(x, Strategy::S5), vec![0, 6, 0]);
    }

    #[test]
    fn encode_rejects_invalid_with_index() {
        let bad = [CanonicalLabel::SKIN, lab(false, Some(Skirt), Some(Shorts))];
        let err = encode(&bad, Strategy::S5).unwrap_err().to_string();
        assert!(err.contains("point 1"), "{err}");
        assert!(encode(&[lab(false, None, None)], Strategy::S2).is_err());
        assert!(encode(&[lab(true, None, Some(Skirt))], Strategy::S2).is_err());
    }

    #[test]
    fn valid_space_has_31_members() {
        let all = CanonicalLabel::all_valid();
        assert_eq!(all.len(), 31);
        let uniq: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(uniq.len(), 31);
        // Brute force over every structurally possible triple.
        let opts: Vec<Option<GarmentClass>> =
            std::iter::once(None).chain(GarmentClass::ALL.into_iter().map(Some)).collect();
        let mut count = 0;
        for b in [false, true] {
            for &v in &opts {
                for &h in &opts {
                    let x = lab(b, v, h);
                    assert_eq!(x.is_valid(), all.contains(&x));
                    count += x.is_valid() as usize;
                }
            }
        }
        assert_eq!(count, 31);
    }

    #[test]
    fn round_trips_on_whole_space() {
        let all = CanonicalLabel::all_valid();
        for s in Strategy::ALL {
            let enc = encode(&all, s).unwrap();
            let out = decode(&enc).unwrap();
            assert!(out.inconsistent.is_empty());
            assert_eq!(out.unlabeled, 0);
            match (s, out.labels) {
                (Strategy::S4 | Strategy::S5, Decoded::Canonical(d)) => assert_eq!(d, all),
                (Strategy::S1, Decoded::Coarse(d)) => {
                    let want: Vec<_> = coarse_project(&all).into_iter().map(CoarseLabel::without_body).collect();
                    assert_eq!(d, want);
                }
                (_, Decoded::Coarse(d)) => assert_eq!(d, coarse_project(&all)),
                (s, other) => panic!("{s}: unexpected decode shape {other:?}"),
            }
        }
    }

    #[test]
    fn s5_is_injective() {
        let all = CanonicalLabel::all_valid();
        let codes: std::collections::HashSet<Vec<u8>> = all.iter().map(|x| encode_one(x, Strategy::S5)).collect();
        assert_eq!(codes.len(), all.len());
    }

    #[test]
    fn s4_decode_example() {
        let enc = StrategyLabels::new(Strategy::S4, vec![vec![0], vec![2], vec![1]]).unwrap();
        let out = decode(&enc).unwrap();
        assert_eq!(out.labels, Decoded::Canonical(vec![lab(false, Some(TShirt), Some(LongPants))]));
    }

    #[test]
    fn s5_skirt_over_shorts_is_flagged() {
        let enc = StrategyLabels::new(Strategy::S5, vec![vec![0, 1], vec![6, 0], vec![2, 0]]).unwrap();
        let out = decode(&enc).unwrap();
        assert_eq!(out.inconsistent, vec![0]);
        assert_eq!(out.labels, Decoded::Canonical(vec![lab(false, Some(Skirt), None), CanonicalLabel::SKIN]));
    }

    #[test]
    fn nothing_predicted_counts_as_unlabeled() {
        for s in [Strategy::S4, Strategy::S5] {
            let enc = StrategyLabels::new(s, vec![vec![0, 1], vec![0, 0], vec![0, 0]]).unwrap();
            let out = decode(&enc).unwrap();
            assert_eq!(out.unlabeled, 1);
            assert!(out.inconsistent.is_empty());
        }
    }

    #[test]
    fn s3_hidden_without_upper_is_flagged() {
        let enc = StrategyLabels::new(Strategy::S3, vec![vec![0, 0], vec![2, 0], vec![1, 1]]).unwrap();
        let out = decode(&enc).unwrap();
        assert_eq!(out.inconsistent, vec![0, 1]);
    }

    #[test]
    fn out_of_range_codes_are_rejected() {
        assert!(StrategyLabels::new(Strategy::S2, vec![vec![0], vec![2], vec![0]]).is_err());
        assert!(StrategyLabels::new(Strategy::S1, vec![vec![4]]).is_err());
        let raw = StrategyLabels { strategy: Strategy::S5, layers: vec![vec![0], vec![7], vec![0]], class_counts: vec![2, 7, 4] };
        assert!(decode(&raw).is_err());
    }

    #[test]
    fn coarse_examples() {
        let c = coarse_project(&[lab(false, Some(TShirt), Some(LongPants)), CanonicalLabel::SKIN]);
        assert_eq!(c[0].region, CoarseRegion::Overlap);
        assert_eq!(c[1], CoarseLabel { region: CoarseRegion::Other, body: Some(true) });
        let skin = coarse_project(&vec![CanonicalLabel::SKIN; 50]);
        assert!(skin.iter().all(|c| c.region == CoarseRegion::Other));
    }

    #[test]
    fn consistency_flip_detected() {
        let xs = vec![lab(false, Some(TShirt), Some(LongPants)), lab(true, Some(Top), None), CanonicalLabel::SKIN];
        let s1 = encode(&xs, Strategy::S1).unwrap();
        let mut s2 = encode(&xs, Strategy::S2).unwrap();
        for s in Strategy::ALL {
            let e = encode(&xs, s).unwrap();
            assert_eq!(consistency_check(&s1, &e).unwrap().mismatches, 0);
        }
        s2.layers[2][0] ^= 1;
        let r = consistency_check(&s1, &s2).unwrap();
        assert_eq!(r.mismatches, 1);
        assert_eq!(r.mismatch_indices, vec![0]);
        let short = encode(&xs[..2], Strategy::S3).unwrap();
        assert!(consistency_check(&s1, &short).is_err());
    }

    #[test]
    fn class_table_round_trip() {
        for s in Strategy::ALL {
            let mut buf = Vec::new();
            write_class_table(s, &mut buf).unwrap();
            let (s2, layers) = read_class_table(&buf[..]).unwrap();
            assert_eq!(s2, s);
            for (l, names) in layers.iter().enumerate() {
                let want: Vec<String> = s.class_names(l).iter().map(|x| x.to_string()).collect();
                assert_eq!(names, &want);
                assert_eq!(names[0], if l == 0 && s != Strategy::S1 { "no-body" } else { "other" });
            }
        }
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("S3".parse::<Strategy>().unwrap(), Strategy::S3);
        assert_eq!("strategy-5".parse::<Strategy>().unwrap(), Strategy::S5);
        assert!("s6".parse::<Strategy>().is_err());
    }
}
