//! Analytic solids whose boundaries make up the body and garment surfaces,
//! with ray intersection and point containment.

use crate::geometry::Vec3;

/// Line segment with a radius: the building block of the mannequin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Vec3, b: Vec3, radius: f64) -> Self {
        Capsule { a, b, radius }
    }

    /// Unit axis from `a` to `b` and the segment length.
    pub fn axis(&self) -> (Vec3, f64) {
        let d = self.b - self.a;
        let len = d.norm();
        (d / len, len)
    }

    /// Distance from `p` to the segment and the unclamped axial coordinate
    /// of `p` measured from `a`.
    pub fn axis_distance(&self, p: &Vec3) -> (f64, f64) {
        let (u, len) = self.axis();
        axis_distance(&self.a, &u, len, p)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.axis_distance(p).0 <= self.radius
    }

    /// Signed distance to the capsule surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.axis_distance(p).0 - self.radius
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        let (u, _) = self.axis();
        self.a + u * s
    }
}

fn axis_distance(a: &Vec3, u: &Vec3, len: f64, p: &Vec3) -> (f64, f64) {
    let w = p - a;
    let t = w.dot(u);
    let c = t.clamp(0.0, len);
    ((w - u * c).norm(), t)
}

/// Distance between two segments (sampled minimum; used for pose checks).
pub fn segment_distance(c1: &Capsule, s1: (f64, f64), c2: &Capsule, s2: (f64, f64)) -> f64 {
    const STEPS: usize = 48;
    let (_, l1) = c1.axis();
    let mut best = f64::INFINITY;
    for i in 0..=STEPS {
        let s = s1.0 + (s1.1 - s1.0) * i as f64 / STEPS as f64;
        let p = c1.point_at(s.clamp(0.0, l1));
        let (_, l2) = c2.axis();
        let (u2, _) = c2.axis();
        let t = (p - c2.a).dot(&u2).clamp(s2.0.max(0.0), s2.1.min(l2));
        best = best.min((p - (c2.a + u2 * t)).norm());
    }
    best
}

/// A capsule inflated to `radius` and clipped to an axial slab. The slab
/// faces are openings: only the curved surface counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub capsule: usize,
    pub a: Vec3,
    pub u: Vec3,
    pub len: f64,
    pub radius: f64,
    pub slab: (f64, f64),
    pub offset: f64,
}

/// Open frustum around a vertical axis: radius `r_top` at `z_top`, growing
/// by `slope` per meter downwards to `z_bottom`. Lateral surface only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    pub cx: f64,
    pub cy: f64,
    pub z_top: f64,
    pub z_bottom: f64,
    pub r_top: f64,
    pub slope: f64,
}

impl Frustum {
    pub fn radius_at(&self, z: f64) -> f64 {
        self.r_top + self.slope * (self.z_top - z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Patch(Patch),
    Frustum(Frustum),
}

/// A ray/surface root on one piece.
#[derive(Debug, Clone, Copy)]
pub struct Root {
    pub t: f64,
    pub normal: Vec3,
    /// Axial coordinate of the hit for patches, height for frusta.
    pub axial: f64,
}

fn quadratic(a: f64, b: f64, c: f64) -> [Option<f64>; 2] {
    if a.abs() < 1e-300 {
        if b.abs() < 1e-300 {
            return [None, None];
        }
        return [Some(-c / b), None];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return [None, None];
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (-b / (2.0 * a), -b / (2.0 * a)) };
    if r1 <= r2 {
        [Some(r1), Some(r2)]
    } else {
        [Some(r2), Some(r1)]
    }
}

impl Piece {
    pub fn offset(&self) -> Option<f64> {
        match self {
            Piece::Patch(p) => Some(p.offset),
            Piece::Frustum(_) => None,
        }
    }

    /// Whether `p` is strictly inside the solid (by more than `eps`).
    pub fn contains_strict(&self, p: &Vec3, eps: f64) -> bool {
        match self {
            Piece::Patch(pa) => {
                let (d, t) = axis_distance(&pa.a, &pa.u, pa.len, p);
                d < pa.radius - eps && t > pa.slab.0 + eps && t < pa.slab.1 - eps
            }
            Piece::Frustum(f) => {
                if p.z >= f.z_top - eps || p.z <= f.z_bottom + eps {
                    return false;
                }
                let r = ((p.x - f.cx).powi(2) + (p.y - f.cy).powi(2)).sqrt();
                r < f.radius_at(p.z) - eps
            }
        }
    }

    /// Unsigned distance from `p` to the curved surface, if `p` projects
    /// into the covered range.
    pub fn surface_distance(&self, p: &Vec3) -> Option<f64> {
        match self {
            Piece::Patch(pa) => {
                let (d, t) = axis_distance(&pa.a, &pa.u, pa.len, p);
                (t >= pa.slab.0 && t <= pa.slab.1).then(|| (d - pa.radius).abs())
            }
            Piece::Frustum(f) => {
                if p.z > f.z_top || p.z < f.z_bottom {
                    return None;
                }
                let r = ((p.x - f.cx).powi(2) + (p.y - f.cy).powi(2)).sqrt();
                // distance to a cone line of slope k, measured perpendicular
                Some((r - f.radius_at(p.z)).abs() / (1.0 + f.slope * f.slope).sqrt())
            }
        }
    }

    /// Pushes every intersection with `t > t_min` onto `out`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3, t_min: f64, out: &mut Vec<Root>) {
        match self {
            Piece::Patch(pa) => intersect_patch(pa, o, d, t_min, out),
            Piece::Frustum(f) => intersect_frustum(f, o, d, t_min, out),
        }
    }

    /// Conservative bounding box (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Piece::Patch(pa) => {
                let lo = pa.slab.0.max(-pa.radius);
                let hi = pa.slab.1.min(pa.len + pa.radius);
                let p0 = pa.a + pa.u * lo;
                let p1 = pa.a + pa.u * hi;
                let r = Vec3::repeat(pa.radius);
                (p0.inf(&p1) - r, p0.sup(&p1) + r)
            }
            Piece::Frustum(f) => {
                let r = f.radius_at(f.z_bottom).max(f.r_top);
                (Vec3::new(f.cx - r, f.cy - r, f.z_bottom), Vec3::new(f.cx + r, f.cy + r, f.z_top))
            }
        }
    }
}

fn intersect_patch(pa: &Patch, o: &Vec3, d: &Vec3, t_min: f64, out: &mut Vec<Root>) {
    let w = o - pa.a;
    let (wu, du) = (w.dot(&pa.u), d.dot(&pa.u));
    let in_slab = |s: f64| s >= pa.slab.0 && s <= pa.slab.1;
    // Cylinder body.
    let dp = d - pa.u * du;
    let wp = w - pa.u * wu;
    let qa = dp.dot(&dp);
    if qa > 1e-18 {
        for t in quadratic(qa, 2.0 * wp.dot(&dp), wp.dot(&wp) - pa.radius * pa.radius).into_iter().flatten() {
            let s = wu + t * du;
            if t > t_min && (0.0..=pa.len).contains(&s) && in_slab(s) {
                let x = o + d * t;
                let n = (x - (pa.a + pa.u * s)).normalize();
                out.push(Root { t, normal: n, axial: s });
            }
        }
    }
    // End caps.
    for (center, is_start) in [(pa.a, true), (pa.a + pa.u * pa.len, false)] {
        let wc = o - center;
        for t in quadratic(1.0, 2.0 * wc.dot(d), wc.dot(&wc) - pa.radius * pa.radius).into_iter().flatten() {
            let s = wu + t * du;
            let on_cap = if is_start { s < 0.0 } else { s > pa.len };
            if t > t_min && on_cap && in_slab(s) {
                let x = o + d * t;
                out.push(Root { t, normal: (x - center).normalize(), axial: s });
            }
        }
    }
}

fn intersect_frustum(f: &Frustum, o: &Vec3, d: &Vec3, t_min: f64, out: &mut Vec<Root>) {
    let (ox, oy) = (o.x - f.cx, o.y - f.cy);
    let e = f.r_top + f.slope * (f.z_top - o.z);
    let g = -f.slope * d.z;
    let a = d.x * d.x + d.y * d.y - g * g;
    let b = 2.0 * (ox * d.x + oy * d.y) - 2.0 * e * g;
    let c = ox * ox + oy * oy - e * e;
    for t in quadratic(a, b, c).into_iter().flatten() {
        if t <= t_min {
            continue;
        }
        let x = o + d * t;
        if x.z > f.z_top || x.z < f.z_bottom || e + g * t <= 0.0 {
            continue;
        }
        let (rx, ry) = (x.x - f.cx, x.y - f.cy);
        let r = (rx * rx + ry * ry).sqrt();
        if r == 0.0 {
            continue;
        }
        let n = Vec3::new(rx / r, ry / r, f.slope).normalize();
        out.push(Root { t, normal: n, axial: x.z });
    }
}

/// Axis-aligned slab test: does the ray enter the box beyond `t_min`?
pub fn ray_hits_box(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> bool {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let (a, b) = ((lo[k] - o[k]) * inv, (hi[k] - o[k]) * inv);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    t1 >= t0.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_patch(slab: (f64, f64)) -> Patch {
        Patch { capsule: 0, a: Vec3::zeros(), u: Vec3::z(), len: 1.0, radius: 0.5, slab, offset: 0.0 }
    }

    #[test]
    fn capsule_ray_roots() {
        let p = Piece::Patch(unit_patch((f64::NEG_INFINITY, f64::INFINITY)));
        let mut roots = Vec::new();
        // Horizontal ray through the cylinder middle.
        p.intersect(&Vec3::new(-3.0, 0.0, 0.5), &Vec3::x(), 0.0, &mut roots);
        let ts: Vec<f64> = roots.iter().map(|r| r.t).collect();
        assert_eq!(ts.len(), 2);
        assert!(ts.iter().any(|t| (t - 2.5).abs() < 1e-12));
        assert!(ts.iter().any(|t| (t - 3.5).abs() < 1e-12));
        // Vertical ray along the axis hits both caps.
        roots.clear();
        p.intersect(&Vec3::new(0.0, 0.0, 5.0), &(-Vec3::z()), 0.0, &mut roots);
        let mut ts: Vec<f64> = roots.iter().map(|r| r.t).collect();
        ts.sort_by(f64::total_cmp);
        assert!((ts[0] - 3.5).abs() < 1e-12 && (ts[1] - 5.5).abs() < 1e-12);
        for r in &roots {
            assert!((r.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slab_opens_the_end() {
        let p = Piece::Patch(unit_patch((f64::NEG_INFINITY, 0.8)));
        let mut roots = Vec::new();
        p.intersect(&Vec3::new(0.0, 0.0, 5.0), &(-Vec3::z()), 0.0, &mut roots);
        // Only the bottom cap remains.
        assert_eq!(roots.len(), 1);
        assert!((roots[0].t - 5.5).abs() < 1e-12);
    }

    #[test]
    fn frustum_roots_and_containment() {
        let f = Frustum { cx: 0.0, cy: 0.0, z_top: 1.0, z_bottom: 0.0, r_top: 0.2, slope: 0.3 };
        let p = Piece::Frustum(f);
        let mut roots = Vec::new();
        p.intersect(&Vec3::new(-2.0, 0.0, 0.5), &Vec3::x(), 0.0, &mut roots);
        assert_eq!(roots.len(), 2);
        let r = f.radius_at(0.5);
        assert!(roots.iter().any(|x| (x.t - (2.0 - r)).abs() < 1e-12));
        assert!(p.contains_strict(&Vec3::new(0.0, 0.0, 0.5), 1e-9));
        assert!(!p.contains_strict(&Vec3::new(0.4, 0.0, 0.5), 1e-9));
        assert!(!p.contains_strict(&Vec3::new(0.0, 0.0, 1.5), 1e-9));
    }

    #[test]
    fn box_test() {
        let (lo, hi) = (Vec3::repeat(-1.0), Vec3::repeat(1.0));
        assert!(ray_hits_box(&Vec3::new(-5.0, 0.0, 0.0), &Vec3::x(), &lo, &hi));
        assert!(!ray_hits_box(&Vec3::new(-5.0, 2.0, 0.0), &Vec3::x(), &lo, &hi));
        assert!(!ray_hits_box(&Vec3::new(5.0, 0.0, 0.0), &Vec3::x(), &lo, &hi));
    }
}
