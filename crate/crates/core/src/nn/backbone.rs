//! The three per-point feature extractors.
//!
//! All of them read the same input rows (centered xyz and normal) and
//! return one `feature_width` row per input point. Neighborhood structure
//! (sampling, grouping, interpolation tables) is computed in `f64` from the
//! positions and treated as constant by the differentiation tape.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{activate, Dense, EdgeDense, GroupedDense, Linear};
use super::matrix::Matrix;
use super::params::ParamStore;
use super::real::Real;
use crate::error::{Error, Result};
use crate::geometry::{self, Aabb, PointCloud, Vec3};

/// Ball radius of the first set-abstraction level; doubles per level.
pub const SET_BASE_RADIUS: f64 = 0.1;
/// Length scale dividing relative coordinates in the transformer blocks.
pub const PT_POSITION_SCALE: f64 = 0.1;
/// Neighbors used by the feature-propagation interpolation.
pub const INTERP_NEIGHBORS: usize = 3;
/// Each downsampling level keeps one point in this many.
pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// Set abstraction with farthest point sampling and ball grouping.
    Set,
    /// Edge convolutions over a kNN graph rebuilt in feature space.
    Edge,
    /// Vector self-attention between transition down/up layers.
    Pt,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::Set, BackboneKind::Edge, BackboneKind::Pt];

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Set => "set",
            BackboneKind::Edge => "edge",
            BackboneKind::Pt => "pt",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "set" | "pointnet++" | "pointnet2" => Ok(BackboneKind::Set),
            "edge" | "dgcnn" => Ok(BackboneKind::Edge),
            "pt" | "transformer" | "point-transformer" => Ok(BackboneKind::Pt),
            _ => Err(Error::InvalidArgument(format!("unknown backbone '{s}' (expected set, edge or pt)"))),
        }
    }
}

/// Network input derived from a cloud.
#[derive(Debug, Clone)]
pub struct Inputs<T> {
    /// Positions relative to the bounding-box center.
    pub positions: Vec<Vec3>,
    /// `N × 6` rows of centered xyz and normal.
    pub features: Matrix<T>,
}

impl<T: Real> Inputs<T> {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        let center = Aabb::of(&cloud.positions).map(|b| b.center()).unwrap_or_else(Vec3::zeros);
        let positions: Vec<Vec3> = cloud.positions.iter().map(|p| p - center).collect();
        let mut data = Vec::with_capacity(positions.len() * 6);
        for (p, n) in positions.iter().zip(&cloud.normals) {
            for v in p.iter().chain(n.iter()) {
                data.push(T::from_f64_lossy(*v));
            }
        }
        let features = Matrix { rows: positions.len(), cols: 6, data };
        Inputs { positions, features }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub const INPUT_WIDTH: usize = 6;

/// Rows `(p[nbr] − p[center]) · scale` for every (group, member) pair.
fn relative_rows<T: Real>(parent: &[Vec3], centers: &[usize], members: &[u32], width: usize, scale: f64) -> Matrix<T> {
    let mut data = Vec::with_capacity(members.len() * 3);
    for (gi, &c) in centers.iter().enumerate() {
        let pc = parent[c];
        for &j in &members[gi * width..(gi + 1) * width] {
            let d = (parent[j as usize] - pc) * scale;
            data.extend([d.x, d.y, d.z].map(T::from_f64_lossy));
        }
    }
    Matrix { rows: members.len(), cols: 3, data }
}

fn repeat_index(n: usize, width: usize) -> Arc<[u32]> {
    (0..n).flat_map(|i| std::iter::repeat_n(i as u32, width)).collect()
}

/// Farthest point sample of a level, started at the point farthest from
/// the level's bounding-box center so that the choice ignores point order.
fn downsample(points: &[Vec3]) -> Result<Vec<usize>> {
    let m = (points.len() / DOWNSAMPLE).max(1);
    geometry::farthest_point_sample_from(points, m, geometry::extremal_start(points))
}

/// Inverse-squared-distance interpolation tables from `coarse` onto `fine`.
fn interpolation_tables<T: Real>(fine: &[Vec3], coarse: &[Vec3]) -> Result<(Arc<[u32]>, Arc<[T]>, usize)> {
    let k = INTERP_NEIGHBORS.min(coarse.len());
    let nl = geometry::knn(fine, coarse, k)?;
    let mut weights = Vec::with_capacity(nl.indices.len());
    for i in 0..fine.len() {
        let raw: Vec<f64> = nl.row_distances(i).iter().map(|d| 1.0 / (d * d + 1e-8)).collect();
        let total: f64 = raw.iter().sum();
        weights.extend(raw.iter().map(|w| T::from_f64_lossy(w / total)));
    }
    Ok((nl.indices.into(), weights.into(), k))
}

#[derive(Debug, Clone)]
struct SetLevel {
    first: GroupedDense,
    second: Dense,
    up: Dense,
}

#[derive(Debug, Clone)]
pub struct SetNet {
    stem: Dense,
    levels: Vec<SetLevel>,
}

#[derive(Debug, Clone)]
struct EdgeLevel {
    first: EdgeDense,
    second: Dense,
}

#[derive(Debug, Clone)]
pub struct EdgeNet {
    levels: Vec<EdgeLevel>,
    fuse: Dense,
}

#[derive(Debug, Clone)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    theta1: Linear,
    theta2: Linear,
    gamma1: Linear,
    gamma2: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct PtLevel {
    down: GroupedDense,
    attention: Attention,
    up: Dense,
}

#[derive(Debug, Clone)]
pub struct PtNet {
    stem: Dense,
    levels: Vec<PtLevel>,
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Set(SetNet),
    Edge(EdgeNet),
    Pt(PtNet),
}

impl Backbone {
    pub fn new<T: Real>(
        kind: BackboneKind,
        width: usize,
        depth: usize,
        ps: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Backbone {
        match kind {
            BackboneKind::Set => Backbone::Set(SetNet {
                stem: Dense::new(ps, "set.stem", INPUT_WIDTH, width, rng),
                levels: (0..depth)
                    .map(|l| SetLevel {
                        first: GroupedDense::new(ps, &format!("set.sa{l}.0"), width, width, rng),
                        second: Dense::new(ps, &format!("set.sa{l}.1"), width, width, rng),
                        up: Dense::new(ps, &format!("set.fp{l}"), 2 * width, width, rng),
                    })
                    .collect(),
            }),
            BackboneKind::Edge => Backbone::Edge(EdgeNet {
                levels: (0..depth)
                    .map(|l| EdgeLevel {
                        first: EdgeDense::new(ps, &format!("edge.ec{l}.0"), if l == 0 { INPUT_WIDTH } else { width }, width, rng),
                        second: Dense::new(ps, &format!("edge.ec{l}.1"), width, width, rng),
                    })
                    .collect(),
                fuse: Dense::new(ps, "edge.fuse", depth * width, width, rng),
            }),
            BackboneKind::Pt => Backbone::Pt(PtNet {
                stem: Dense::new(ps, "pt.stem", INPUT_WIDTH, width, rng),
                levels: (0..depth)
                    .map(|l| {
                        let n = |s: &str| format!("pt.l{l}.{s}");
                        PtLevel {
                            down: GroupedDense::new(ps, &n("down"), width, width, rng),
                            attention: Attention {
                                q: Linear::new(ps, &n("attn.q"), width, width, false, rng),
                                k: Linear::new(ps, &n("attn.k"), width, width, false, rng),
                                v: Linear::new(ps, &n("attn.v"), width, width, false, rng),
                                theta1: Linear::new(ps, &n("attn.pos0"), 3, width, true, rng),
                                theta2: Linear::new(ps, &n("attn.pos1"), width, width, true, rng),
                                gamma1: Linear::new(ps, &n("attn.weight0"), width, width, true, rng),
                                gamma2: Linear::new(ps, &n("attn.weight1"), width, width, true, rng),
                                out: Linear::new(ps, &n("attn.out"), width, width, true, rng),
                            },
                            up: Dense::new(ps, &n("up"), 2 * width, width, rng),
                        }
                    })
                    .collect(),
            }),
        }
    }

    /// Per-point features, `N × width`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: &Inputs<T>, k: usize) -> Result<Var> {
        if input.len() < k {
            return Err(Error::InvalidArgument(format!(
                "{} points cannot supply {k} neighbors",
                input.len()
            )));
        }
        match self {
            Backbone::Set(net) => net.forward(g, input, k),
            Backbone::Edge(net) => net.forward(g, input, k),
            Backbone::Pt(net) => net.forward(g, input, k),
        }
    }
}

/// Feature propagation from `coarse` back to `fine` with a skip connection.
fn upsample<T: Real>(
    g: &mut Graph<'_, T>,
    layer: &Dense,
    fine: &[Vec3],
    coarse: &[Vec3],
    coarse_feat: Var,
    skip: Var,
) -> Result<Var> {
    let (idx, w, kk) = interpolation_tables::<T>(fine, coarse)?;
    let up = g.interpolate(coarse_feat, idx, w, kk)?;
    let cat = g.concat(&[up, skip])?;
    layer.forward(g, cat)
}

impl SetNet {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: &Inputs<T>, k: usize) -> Result<Var> {
        let x = g.constant(input.features.clone());
        let mut feats = vec![self.stem.forward(g, x)?];
        let mut points = vec![input.positions.clone()];
        for (l, level) in self.levels.iter().enumerate() {
            let parent = &points[l];
            let centers = downsample(parent)?;
            let radius = SET_BASE_RADIUS * (1 << l) as f64;
            let groups = geometry::ball_query(&centers, parent, radius, k)?;
            let rel = g.constant(relative_rows(parent, &centers, &groups.indices, k, 1.0 / radius));
            let h = level.first.forward(g, feats[l], rel, groups.indices.into())?;
            let h = level.second.forward(g, h)?;
            feats.push(g.max_groups(h, k)?);
            let next: Vec<Vec3> = centers.iter().map(|&c| parent[c]).collect();
            points.push(next);
        }
        let mut cur = feats[self.levels.len()];
        for (l, level) in self.levels.iter().enumerate().rev() {
            cur = upsample(g, &level.up, &points[l], &points[l + 1], cur, feats[l])?;
        }
        Ok(cur)
    }
}

impl EdgeNet {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: &Inputs<T>, k: usize) -> Result<Var> {
        let n = input.len();
        let ctr = repeat_index(n, k);
        let mut f = g.constant(input.features.clone());
        let mut outs = Vec::with_capacity(self.levels.len());
        for (l, level) in self.levels.iter().enumerate() {
            let nl = if l == 0 {
                geometry::knn(&input.positions, &input.positions, k)?
            } else {
                let v = g.value(f);
                geometry::knn_features(&v.data, &v.data, v.cols, k)?
            };
            let h = level.first.forward(g, f, ctr.clone(), nl.indices.into())?;
            let h = level.second.forward(g, h)?;
            f = g.max_groups(h, k)?;
            outs.push(f);
        }
        let cat = g.concat(&outs)?;
        self.fuse.forward(g, cat)
    }
}

impl Attention {
    /// Vector attention of every point over its `k` nearest neighbors.
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, points: &[Vec3], k: usize) -> Result<Var> {
        let n = points.len();
        let k = k.min(n);
        let nl = geometry::knn(points, points, k)?;
        let all: Vec<usize> = (0..n).collect();
        let rel = g.constant(relative_rows(points, &all, &nl.indices, k, 1.0 / PT_POSITION_SCALE));
        let nbr: Arc<[u32]> = nl.indices.into();
        let ctr = repeat_index(n, k);

        let d = self.theta1.forward(g, rel)?;
        let d = g.relu(d);
        let delta = self.theta2.forward(g, d)?;

        let q = self.q.forward(g, x)?;
        let kk = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let qi = g.gather(q, ctr)?;
        let kj = g.gather(kk, nbr.clone())?;
        let vj = g.gather(v, nbr)?;

        let a = g.sub(qi, kj)?;
        let a = g.add(a, delta)?;
        let a = self.gamma1.forward(g, a)?;
        let a = g.relu(a);
        let a = self.gamma2.forward(g, a)?;
        let w = g.softmax_groups(a, k)?;

        let val = g.add(vj, delta)?;
        let y = g.mul(w, val)?;
        let y = g.sum_groups(y, k)?;
        let y = self.out.forward(g, y)?;
        let res = g.add(x, y)?;
        Ok(activate(g, res))
    }
}

impl PtNet {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: &Inputs<T>, k: usize) -> Result<Var> {
        let x = g.constant(input.features.clone());
        let mut feats = vec![self.stem.forward(g, x)?];
        let mut points = vec![input.positions.clone()];
        for (l, level) in self.levels.iter().enumerate() {
            let parent = &points[l];
            let centers = downsample(parent)?;
            let next: Vec<Vec3> = centers.iter().map(|&c| parent[c]).collect();
            let kk = k.min(parent.len());
            let nl = geometry::knn(&next, parent, kk)?;
            let rel = g.constant(relative_rows(parent, &centers, &nl.indices, kk, 1.0 / PT_POSITION_SCALE));
            let h = level.down.forward(g, feats[l], rel, nl.indices.into())?;
            let h = g.max_groups(h, kk)?;
            let h = level.attention.forward(g, h, &next, k)?;
            feats.push(h);
            points.push(next);
        }
        let mut cur = feats[self.levels.len()];
        for (l, level) in self.levels.iter().enumerate().rev() {
            cur = upsample(g, &level.up, &points[l], &points[l + 1], cur, feats[l])?;
        }
        Ok(cur)
    }
}
