//! Virtual multi-view scanner: casts a jittered grid of rays from each
//! viewpoint, keeps the first surface hit, adds depth noise along the ray
//! and records the exact label of the clean hit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, splitmix64, PointCloud, Vec3};
use crate::layering::CanonicalLabel;
use crate::parallel;
use crate::scene::Scene;

/// Scanner setup. View directions point from the target to the cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub view_directions: Vec<[f64; 3]>,
    pub rays_per_view: usize,
    /// Standard deviation of the depth noise, meters.
    pub noise_sigma: f64,
    pub seed: u64,
    pub camera_distance: f64,
    pub target: [f64; 3],
    /// Half the side of the square window the rays pass through at the
    /// target distance, meters.
    pub window_half: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            view_directions: default_views(),
            rays_per_view: 8192,
            noise_sigma: 0.0015,
            seed: 0,
            camera_distance: 3.0,
            target: [0.0, 0.0, 0.9],
            window_half: 1.05,
        }
    }
}

/// Thirteen views: six at +25° elevation, six at −10° rotated by 30°, and
/// one from directly above.
pub fn default_views() -> Vec<[f64; 3]> {
    let mut v = Vec::with_capacity(13);
    for (elev, az0) in [(25f64, 0f64), (-10.0, 30.0)] {
        for k in 0..6 {
            let (e, a) = (elev.to_radians(), (az0 + 60.0 * k as f64).to_radians());
            v.push([e.cos() * a.cos(), e.cos() * a.sin(), e.sin()]);
        }
    }
    v.push([0.0, 0.0, 1.0]);
    v
}

/// Views within this angle of looking straight up from below are refused.
const MIN_ANGLE_FROM_BELOW_DEG: f64 = 30.0;

/// Pinhole camera of one view.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

impl ScanConfig {
    pub fn num_views(&self) -> usize {
        self.view_directions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_directions.is_empty() {
            return Err(Error::InvalidArgument("scanner needs at least one view".into()));
        }
        if self.view_directions.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument("too many views".into()));
        }
        for (i, d) in self.view_directions.iter().enumerate() {
            let v = Vec3::from(*d);
            let n = v.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::InvalidArgument(format!("view {i} has a zero direction")));
            }
            let from_below = (-v.z / n).clamp(-1.0, 1.0).acos().to_degrees();
            if from_below < MIN_ANGLE_FROM_BELOW_DEG {
                return Err(Error::InvalidArgument(format!(
                    "view {i} is {from_below:.1}° from looking straight up (minimum {MIN_ANGLE_FROM_BELOW_DEG}°)"
                )));
            }
        }
        if self.rays_per_view == 0 {
            return Err(Error::InvalidArgument("rays_per_view must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be a non-negative number".into()));
        }
        if !(self.camera_distance > 0.0 && self.window_half > 0.0) {
            return Err(Error::InvalidArgument("camera distance and window must be positive".into()));
        }
        Ok(())
    }

    pub fn camera(&self, view: usize) -> Camera {
        let dir = Vec3::from(self.view_directions[view]).normalize();
        let target = Vec3::from(self.target);
        let origin = target + dir * self.camera_distance;
        let forward = -dir;
        let side = forward.cross(&Vec3::z());
        let right = if side.norm() > 1e-6 { side.normalize() } else { Vec3::x() };
        let up = right.cross(&forward);
        Camera { origin, forward, right, up }
    }

    /// Rays per side of the square grid of a view.
    pub fn grid_side(&self) -> usize {
        ((self.rays_per_view as f64).sqrt().ceil() as usize).max(1)
    }
}

/// Scanned points with their exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScan {
    pub cloud: PointCloud,
    pub labels: Vec<CanonicalLabel>,
    pub config: ScanConfig,
}

impl LabeledScan {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledScan {
        LabeledScan {
            cloud: self.cloud.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            config: self.config.clone(),
        }
    }
}

fn view_seed(seed: u64, view: usize) -> u64 {
    splitmix64(seed ^ splitmix64(view as u64 + 0x5ca9))
}

/// Draws from N(0, sigma²) restricted to |x| ≤ 3 sigma.
fn truncated_noise(rng: &mut ChaCha8Rng, normal: &Normal<f64>, sigma: f64) -> f64 {
    loop {
        let x = normal.sample(rng);
        if x.abs() <= 3.0 * sigma {
            return x;
        }
    }
}

struct ViewScan {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
    labels: Vec<CanonicalLabel>,
}

fn scan_view(scene: &Scene, config: &ScanConfig, view: usize) -> ViewScan {
    let cam = config.camera(view);
    let target = Vec3::from(config.target);
    let mut rng = ChaCha8Rng::seed_from_u64(view_seed(config.seed, view));
    let normal = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let n = config.grid_side();
    let cell = 2.0 * config.window_half / n as f64;
    let mut cast = scene.caster();
    let mut out = ViewScan { positions: Vec::new(), normals: Vec::new(), labels: Vec::new() };
    for row in 0..n {
        for col in 0..n {
            let (ja, jb): (f64, f64) = (rng.random(), rng.random());
            let a = -config.window_half + (col as f64 + ja) * cell;
            let b = config.window_half - (row as f64 + jb) * cell;
            let d = (target + cam.right * a + cam.up * b - cam.origin).normalize();
            let Some(hit) = cast(&cam.origin, &d) else { continue };
            let noise = if config.noise_sigma > 0.0 { truncated_noise(&mut rng, &normal, config.noise_sigma) } else { 0.0 };
            let nrm = if hit.normal.dot(&d) > 0.0 { -hit.normal } else { hit.normal };
            out.positions.push(cam.origin + d * (hit.t + noise));
            out.normals.push(nrm);
            out.labels.push(scene.label_hit(&hit));
        }
    }
    out
}

/// Scans `scene` from every configured view. Deterministic in the config.
pub fn scan(scene: &Scene, config: &ScanConfig) -> Result<LabeledScan> {
    config.validate()?;
    let views = parallel::map_range(config.num_views(), |v| scan_view(scene, config, v));
    let total: usize = views.iter().map(|v| v.labels.len()).sum();
    if total == 0 {
        return Err(Error::EmptyScan(format!("no ray of {} views hit the scene", config.num_views())));
    }
    let mut positions = Vec::with_capacity(total);
    let mut normals = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut source = Vec::with_capacity(total);
    for (v, vs) in views.into_iter().enumerate() {
        source.extend(std::iter::repeat_n(v as u16, vs.labels.len()));
        positions.extend(vs.positions);
        normals.extend(vs.normals);
        labels.extend(vs.labels);
    }
    Ok(LabeledScan { cloud: PointCloud::new(positions, normals, Some(source))?, labels, config: config.clone() })
}

/// Number of points that some scene surface occludes from their own view:
/// the first hit along the point's ray is closer than the point minus the
/// maximum noise excursion. Points without a recorded view are skipped.
pub fn check_visibility(scan: &LabeledScan, scene: &Scene) -> usize {
    let Some(views) = scan.cloud.source_view.as_ref() else { return 0 };
    let slack = 3.0 * scan.config.noise_sigma + 1e-9;
    let cams: Vec<Camera> = (0..scan.config.num_views()).map(|v| scan.config.camera(v)).collect();
    let flags = parallel::map_range(scan.len(), |i| {
        let Some(cam) = cams.get(views[i] as usize) else { return false };
        let diff = scan.cloud.positions[i] - cam.origin;
        let dist = diff.norm();
        if dist == 0.0 {
            return false;
        }
        scene.cast(&cam.origin, &(diff / dist)).is_some_and(|h| h.t < dist - slack)
    });
    flags.into_iter().filter(|&f| f).count()
}

/// Brings a scan to exactly `target` points: farthest-point subsampling when
/// shrinking, duplication with small jitter (at most the noise sigma) when
/// growing, and an unchanged copy when the size already matches.
pub fn resample(scan: &LabeledScan, target: usize, seed: u64) -> Result<LabeledScan> {
    if target == 0 {
        return Err(Error::InvalidArgument("target_points must be at least 1".into()));
    }
    let n = scan.len();
    if n == 0 {
        return Err(Error::EmptyScan("cannot resample an empty scan".into()));
    }
    if target == n {
        return Ok(scan.clone());
    }
    if target < n {
        let idx = farthest_point_sample(&scan.cloud.positions, target, seed)?;
        return Ok(scan.select(&idx));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7265_7361));
    let extra: Vec<usize> = (0..target - n).map(|_| rng.random_range(0..n)).collect();
    let idx: Vec<usize> = (0..n).chain(extra.iter().copied()).collect();
    let mut out = scan.select(&idx);
    let sigma = scan.config.noise_sigma;
    for p in &mut out.cloud.positions[n..] {
        let dir = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let len = dir.norm();
        if len > 0.0 && sigma > 0.0 {
            *p += dir / len * (sigma * rng.random::<f64>());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garment::GarmentClass::*;
    use crate::scene::{sample_scene, BodySpec, OutfitSpec};

    fn small_config(seed: u64) -> ScanConfig {
        ScanConfig { rays_per_view: 2500, seed, ..ScanConfig::default() }
    }

    fn tshirt_scene(seed: u64) -> Scene {
        sample_scene(&OutfitSpec::new(TShirt, LongPants, 0.08).unwrap(), &BodySpec::default(), seed).unwrap()
    }

    #[test]
    fn default_views_avoid_the_underside() {
        let c = ScanConfig::default();
        assert_eq!(c.num_views(), 13);
        c.validate().unwrap();
        let bad = ScanConfig { view_directions: vec![[0.1, 0.0, -1.0]], ..ScanConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scan_is_deterministic_and_sound() {
        let sc = tshirt_scene(1);
        let a = scan(&sc, &small_config(5)).unwrap();
        let b = scan(&sc, &small_config(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 1000);
        assert_eq!(check_visibility(&a, &sc), 0);
        assert!(a.labels.iter().all(CanonicalLabel::is_valid));
        assert!(a.labels.iter().any(|l| l.hidden.is_some()));
        for (p, n) in a.cloud.positions.iter().zip(&a.cloud.normals) {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn moved_point_is_a_violation() {
        let sc = tshirt_scene(2);
        let mut s = scan(&sc, &ScanConfig { noise_sigma: 0.0, ..small_config(1) }).unwrap();
        let views = s.cloud.source_view.clone().unwrap();
        let i = s.labels.iter().position(|l| l.visible == Some(TShirt)).unwrap();
        let cam = s.config.camera(views[i] as usize);
        let d = (s.cloud.positions[i] - cam.origin).normalize();
        s.cloud.positions[i] += d * 0.6;
        assert_eq!(check_visibility(&s, &sc), 1);
        let empty = s.select(&[]);
        assert_eq!(check_visibility(&empty, &sc), 0);
    }

    #[test]
    fn front_view_of_sphere_has_no_back_points() {
        // A lone head-sized capsule stands in for a sphere seen from +x.
        let sc = tshirt_scene(3);
        let cfg = ScanConfig {
            view_directions: vec![[1.0, 0.0, 0.0]],
            noise_sigma: 0.0,
            target: [0.0, 0.0, 1.55],
            window_half: 0.05,
            rays_per_view: 400,
            ..ScanConfig::default()
        };
        let s = scan(&sc, &cfg).unwrap();
        let head = sc.body.capsules[crate::scene::HEAD];
        let c = head.point_at(0.5 * head.axis().1);
        assert!(s.cloud.positions.iter().all(|p| p.x > c.x));
    }

    #[test]
    fn empty_scan_is_an_error() {
        let sc = tshirt_scene(4);
        let cfg = ScanConfig { target: [10.0, 10.0, 10.0], window_half: 0.1, ..small_config(0) };
        assert!(matches!(scan(&sc, &cfg), Err(Error::EmptyScan(_))));
    }

    #[test]
    fn resample_sizes() {
        let sc = tshirt_scene(5);
        let s = scan(&sc, &small_config(2)).unwrap();
        assert_eq!(resample(&s, s.len(), 0).unwrap(), s);
        let one = resample(&s, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        let idx = s.cloud.positions.iter().position(|p| *p == one.cloud.positions[0]).unwrap();
        assert_eq!(one.labels[0], s.labels[idx]);
        let big = resample(&s, s.len() + 100, 0).unwrap();
        assert_eq!(big.len(), s.len() + 100);
        assert!(resample(&s, 0, 0).is_err());
    }
}
