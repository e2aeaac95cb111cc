//! Point containers and spatial kernels: kNN, farthest point sampling,
//! ball query and rigid/scale transforms.
//!
//! Every kernel breaks distance ties by the lower point index, so results
//! depend only on the geometry and the index order of the input.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::parallel;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Positions and unit normals of a scanned point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Index of the viewpoint that produced each point, when known.
    pub source_view: Option<Vec<u16>>,
}

impl PointCloud {
    /// Builds a cloud, checking the container invariants.
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>, source_view: Option<Vec<u16>>) -> Result<Self> {
        let cloud = Self { positions, normals, source_view };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return invalid("point cloud must contain at least one point");
        }
        if self.normals.len() != self.positions.len() {
            return invalid(format!(
                "{} normals for {} positions",
                self.normals.len(),
                self.positions.len()
            ));
        }
        if let Some(views) = &self.source_view {
            if views.len() != self.positions.len() {
                return invalid("source_view length differs from point count");
            }
        }
        for (i, (p, n)) in self.positions.iter().zip(&self.normals).enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return invalid(format!("position {i} is not finite"));
            }
            if (n.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return invalid(format!("normal {i} is not unit length"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Copies the points at `indices` (in that order) into a new cloud.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
            source_view: self
                .source_view
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Axis-aligned bounds of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of(points: &[Vec3]) -> Option<Aabb> {
        let first = points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Aabb { min, max })
    }

    /// Midpoint of the box. Independent of point order.
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// Fixed-width neighbor table: row `i` holds the `k` nearest reference
/// points of query `i`, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn row_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn by_distance_then_index(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn keep_k_nearest(cands: &mut Vec<(f64, u32)>, k: usize) {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, by_distance_then_index);
        cands.truncate(k);
    }
    cands.sort_unstable_by(by_distance_then_index);
}

type CellKey = (i64, i64, i64);

/// Uniform hash grid over a fixed point set.
struct HashGrid {
    cell: f64,
    origin: Vec3,
    cells: HashMap<CellKey, (u32, u32)>,
    order: Vec<u32>,
    lo: CellKey,
    hi: CellKey,
}

impl HashGrid {
    fn build(points: &[Vec3], cell: f64) -> HashGrid {
        let bounds = Aabb::of(points).expect("grid over empty point set");
        let origin = bounds.min;
        let key = |p: &Vec3| -> CellKey {
            (
                ((p.x - origin.x) / cell).floor() as i64,
                ((p.y - origin.y) / cell).floor() as i64,
                ((p.z - origin.z) / cell).floor() as i64,
            )
        };
        let mut keyed: Vec<(CellKey, u32)> = points.iter().enumerate().map(|(i, p)| (key(p), i as u32)).collect();
        keyed.sort_unstable();
        let mut cells = HashMap::new();
        let mut start = 0usize;
        while start < keyed.len() {
            let k = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == k {
                end += 1;
            }
            cells.insert(k, (start as u32, end as u32));
            start = end;
        }
        let lo = keyed.iter().fold((i64::MAX, i64::MAX, i64::MAX), |a, (k, _)| (a.0.min(k.0), a.1.min(k.1), a.2.min(k.2)));
        let hi = keyed.iter().fold((i64::MIN, i64::MIN, i64::MIN), |a, (k, _)| (a.0.max(k.0), a.1.max(k.1), a.2.max(k.2)));
        HashGrid {
            cell,
            origin,
            cells,
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            lo,
            hi,
        }
    }

    fn key(&self, p: &Vec3) -> CellKey {
        (
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
            ((p.z - self.origin.z) / self.cell).floor() as i64,
        )
    }

    fn cell_points(&self, key: CellKey) -> &[u32] {
        match self.cells.get(&key) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// Visits every occupied cell at Chebyshev ring distance `r` from `c`.
    fn for_ring(&self, c: CellKey, r: i64, mut visit: impl FnMut(&[u32])) {
        let x0 = (c.0 - r).max(self.lo.0);
        let x1 = (c.0 + r).min(self.hi.0);
        let y0 = (c.1 - r).max(self.lo.1);
        let y1 = (c.1 + r).min(self.hi.1);
        let z0 = (c.2 - r).max(self.lo.2);
        let z1 = (c.2 + r).min(self.hi.2);
        for x in x0..=x1 {
            for y in y0..=y1 {
                let on_xy_shell = (x - c.0).abs() == r || (y - c.1).abs() == r;
                if on_xy_shell {
                    for z in z0..=z1 {
                        visit(self.cell_points((x, y, z)));
                    }
                } else {
                    for z in [c.2 - r, c.2 + r] {
                        if z >= z0 && z <= z1 {
                            visit(self.cell_points((x, y, z)));
                        }
                    }
                }
            }
        }
    }

    /// Whether ring `r` around `c` already encloses every occupied cell.
    fn ring_covers_all(&self, c: CellKey, r: i64) -> bool {
        c.0 - r <= self.lo.0
            && c.0 + r >= self.hi.0
            && c.1 - r <= self.lo.1
            && c.1 + r >= self.hi.1
            && c.2 - r <= self.lo.2
            && c.2 + r >= self.hi.2
    }
}

/// Cell size that puts roughly `k` points in a cell, from the point density
/// over the non-degenerate extents of the bounding box.
fn density_cell_size(points: &[Vec3], k: usize) -> f64 {
    let bounds = Aabb::of(points).expect("non-empty");
    let mut ext: Vec<f64> = bounds.extent().iter().copied().collect();
    ext.sort_by(|a, b| b.total_cmp(a));
    let largest = ext[0];
    if largest <= 0.0 {
        return 1.0;
    }
    let kept: Vec<f64> = ext.into_iter().filter(|&e| e > largest * 1e-6).collect();
    let measure: f64 = kept.iter().product();
    let per_cell = measure * k.max(1) as f64 / points.len() as f64;
    per_cell.powf(1.0 / kept.len() as f64).max(largest * 1e-9)
}

/// k nearest reference points of every query point (Euclidean), ties by
/// lower reference index.
pub fn knn(query: &[Vec3], reference: &[Vec3], k: usize) -> Result<NeighborList> {
    if k == 0 {
        return invalid("k must be positive");
    }
    if k > reference.len() {
        return invalid(format!("k = {k} exceeds the {} reference points", reference.len()));
    }
    let grid = HashGrid::build(reference, density_cell_size(reference, k));
    let rows: Vec<Vec<(f64, u32)>> = parallel::map_slice(query, |q| {
        let c = grid.key(q);
        let mut cands: Vec<(f64, u32)> = Vec::with_capacity(4 * k);
        let mut r = 0i64;
        loop {
            grid.for_ring(c, r, |pts| {
                for &j in pts {
                    cands.push((dist2(q, &reference[j as usize]), j));
                }
            });
            if cands.len() >= k {
                keep_k_nearest(&mut cands, k);
                // Anything outside the rings visited so far is at least r * cell away.
                let reach = r as f64 * grid.cell;
                if cands[k - 1].0.sqrt() < reach {
                    break;
                }
            }
            if grid.ring_covers_all(c, r) {
                break;
            }
            r += 1;
        }
        keep_k_nearest(&mut cands, k);
        cands
    });
    Ok(pack_rows(rows, k))
}

fn pack_rows(rows: Vec<Vec<(f64, u32)>>, k: usize) -> NeighborList {
    let mut indices = Vec::with_capacity(rows.len() * k);
    let mut distances = Vec::with_capacity(rows.len() * k);
    for row in rows {
        for (d2, j) in row {
            indices.push(j);
            distances.push(d2.sqrt());
        }
    }
    NeighborList { k, indices, distances }
}

/// Brute-force kNN over row-major feature matrices of width `dim`.
///
/// Used for graphs built in feature space where a spatial grid does not help.
pub fn knn_features<T: Float + Send + Sync>(query: &[T], reference: &[T], dim: usize, k: usize) -> Result<NeighborList> {
    if dim == 0 || query.len() % dim != 0 || reference.len() % dim != 0 {
        return invalid("feature matrices must be non-empty multiples of dim");
    }
    let n_ref = reference.len() / dim;
    if k == 0 {
        return invalid("k must be positive");
    }
    if k > n_ref {
        return invalid(format!("k = {k} exceeds the {n_ref} reference rows"));
    }
    let n_query = query.len() / dim;
    let rows = parallel::map_range(n_query, |i| {
        let q = &query[i * dim..(i + 1) * dim];
        let mut cands: Vec<(f64, u32)> = (0..n_ref)
            .map(|j| {
                let r = &reference[j * dim..(j + 1) * dim];
                let mut acc = 0.0f64;
                for (a, b) in q.iter().zip(r) {
                    let d = (*a - *b).to_f64().unwrap_or(f64::NAN);
                    acc += d * d;
                }
                (acc, j as u32)
            })
            .collect();
        keep_k_nearest(&mut cands, k);
        cands
    });
    Ok(pack_rows(rows, k))
}

/// Deterministic start index for farthest point sampling from a seed.
pub fn seeded_start(seed: u64, n: usize) -> usize {
    (splitmix64(seed) % n as u64) as usize
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Farthest point sampling whose first pick is derived from `seed`.
pub fn farthest_point_sample(points: &[Vec3], m: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return invalid("cannot sample from an empty point set");
    }
    farthest_point_sample_from(points, m, seeded_start(seed, points.len()))
}

/// Farthest point sampling starting at `first`. Each later pick maximizes
/// the distance to the already selected set, ties to the lower index.
pub fn farthest_point_sample_from(points: &[Vec3], m: usize, first: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 {
        return invalid("m must be positive");
    }
    if m > n {
        return invalid(format!("cannot sample {m} of {n} points"));
    }
    if first >= n {
        return invalid(format!("start index {first} out of range"));
    }
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut current = first;
    for _ in 0..m {
        picked.push(current);
        min_d2[current] = -1.0;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if min_d2[i] < 0.0 {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(picked)
}

/// Start index independent of point order: the point farthest from the
/// bounding-box center.
pub fn extremal_start(points: &[Vec3]) -> usize {
    let center = Aabb::of(points).map(|b| b.center()).unwrap_or_else(Vec3::zeros);
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &center);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fixed-width groups from a ball query, `width` indices per center.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups {
    pub width: usize,
    pub indices: Vec<u32>,
}

impl Groups {
    pub fn group(&self, g: usize) -> &[u32] {
        &self.indices[g * self.width..(g + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.indices.len() / self.width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Gathers up to `max_samples` points within `radius` of each center,
/// nearest first; short groups are padded by repeating the center.
pub fn ball_query(centers: &[usize], points: &[Vec3], radius: f64, max_samples: usize) -> Result<Groups> {
    if !(radius > 0.0) {
        return invalid("ball query radius must be positive");
    }
    if max_samples == 0 {
        return invalid("max_samples must be positive");
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= points.len()) {
        return invalid(format!("center index {bad} out of range"));
    }
    if centers.is_empty() {
        return Ok(Groups { width: max_samples, indices: Vec::new() });
    }
    let grid = HashGrid::build(points, radius);
    let r2 = radius * radius;
    let rows = parallel::map_slice(centers, |&c| {
        let q = points[c];
        let key = grid.key(&q);
        let mut cands = Vec::new();
        grid.for_ring(key, 0, |pts| collect_within(pts, points, &q, r2, &mut cands));
        grid.for_ring(key, 1, |pts| collect_within(pts, points, &q, r2, &mut cands));
        cands.sort_unstable_by(by_distance_then_index);
        cands.truncate(max_samples);
        let mut row: Vec<u32> = cands.into_iter().map(|(_, j)| j).collect();
        row.resize(max_samples, c as u32);
        row
    });
    Ok(Groups { width: max_samples, indices: rows.concat() })
}

fn collect_within(pts: &[u32], points: &[Vec3], q: &Vec3, r2: f64, out: &mut Vec<(f64, u32)>) {
    for &j in pts {
        let d = dist2(q, &points[j as usize]);
        if d <= r2 {
            out.push((d, j));
        }
    }
}

/// Applies `p -> scale * R p + t` and `n -> R n`.
pub fn transform(cloud: &PointCloud, rotation: &Mat3, scale: f64, translation: &Vec3) -> Result<PointCloud> {
    let gram = rotation.transpose() * rotation;
    let off = (gram - Mat3::identity()).abs().max();
    if !(off <= UNIT_TOLERANCE) {
        return invalid(format!("rotation is not orthonormal (|RtR - I| = {off:e})"));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return invalid("scale must be positive and finite");
    }
    let positions = cloud
        .positions
        .iter()
        .map(|p| rotation * p * scale + translation)
        .collect();
    let normals = cloud
        .normals
        .iter()
        .map(|n| {
            let r = rotation * n;
            let len = r.norm();
            // Only renormalize real drift; keeps identity transforms bit-exact.
            if (len - 1.0).abs() > 1e-12 {
                r / len
            } else {
                r
            }
        })
        .collect();
    Ok(PointCloud {
        positions,
        normals,
        source_view: cloud.source_view.clone(),
    })
}

/// Rotation by `angle` radians about the z axis.
pub fn rotation_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `angle` radians about a unit `axis` (Rodrigues).
pub fn rotation_axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let a = axis.normalize();
    let (s, c) = angle.sin_cos();
    let k = Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Mat3::identity() + k * s + k * k * (1.0 - c)
}
