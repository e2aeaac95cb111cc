//! Parametric dressed mannequins.
//!
//! The body is a union of seven capsules. Each garment is the boundary of a
//! union of inflated body capsules clipped to the region it covers (plus an
//! open frustum for a skirt), so every surface point has an exact layering
//! label: which garment is outermost, which lies beneath it, and whether
//! the body is within the tight-fit threshold.

pub mod shapes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garment::GarmentClass;
use crate::geometry::{rotation_z, splitmix64, Vec3};
use crate::layering::CanonicalLabel;
pub use shapes::{Capsule, Frustum, Patch, Piece};

pub const HEAD: usize = 0;
pub const TORSO: usize = 1;
pub const PELVIS: usize = 2;
pub const ARM_L: usize = 3;
pub const ARM_R: usize = 4;
pub const LEG_L: usize = 5;
pub const LEG_R: usize = 6;
pub const CAPSULE_NAMES: [&str; 7] = ["head", "torso", "pelvis", "arm_l", "arm_r", "leg_l", "leg_r"];

// Reference mannequin, meters, before scaling.
const PELVIS_Z: (f64, f64) = (0.86, 0.98);
const PELVIS_R: f64 = 0.155;
const TORSO_Z: (f64, f64) = (0.98, 1.38);
const TORSO_R: f64 = 0.135;
const HEAD_Z: (f64, f64) = (1.38, 1.65);
const HEAD_R: f64 = 0.09;
const SHOULDER: (f64, f64) = (0.13, 1.36);
const ARM_LEN: f64 = 0.62;
const ARM_R0: f64 = 0.042;
const HIP: (f64, f64) = (0.08, 0.90);
const LEG_LEN: f64 = 0.80;
const LEG_R0: f64 = 0.058;
/// Lowest allowed upper-garment hem, as a multiple of body scale.
const MIN_HEM_Z: f64 = 0.90;

/// Joint angles in radians. Index 0 is the left (+x) limb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    /// Arm angle away from the body side, in the frontal plane.
    pub arm_abduction: [f64; 2],
    /// Arm angle forward (+y) or backward.
    pub arm_swing: [f64; 2],
    /// Leg angle outward in the frontal plane.
    pub leg_spread: [f64; 2],
    pub leg_swing: [f64; 2],
    /// Rotation of the whole figure about the vertical axis.
    pub yaw: f64,
}

impl PoseParams {
    pub const NEUTRAL: PoseParams = PoseParams {
        arm_abduction: [0.35, 0.35],
        arm_swing: [0.0, 0.0],
        leg_spread: [0.04, 0.04],
        leg_swing: [0.0, 0.0],
        yaw: 0.0,
    };
}

/// Global scale and per-part radius multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub scale: f64,
    pub trunk_radius: f64,
    pub arm_radius: f64,
    pub leg_radius: f64,
}

impl ShapeParams {
    pub const NEUTRAL: ShapeParams = ShapeParams { scale: 1.0, trunk_radius: 1.0, arm_radius: 1.0, leg_radius: 1.0 };
}

/// Posed capsule mannequin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    #[serde(skip)]
    pub capsules: Vec<Capsule>,
    pub pose: PoseParams,
    pub shape: ShapeParams,
}

fn limb_dir(side: f64, outward: f64, swing: f64) -> Vec3 {
    Vec3::new(side * outward.sin() * swing.cos(), swing.sin(), -outward.cos() * swing.cos())
}

impl BodyModel {
    /// Builds the capsules for a pose and shape. Limb roots sit inside the
    /// trunk capsule they attach to.
    pub fn new(pose: PoseParams, shape: ShapeParams) -> Result<Self> {
        let vals = [shape.scale, shape.trunk_radius, shape.arm_radius, shape.leg_radius];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!("shape parameters must be positive: {shape:?}")));
        }
        let s = shape.scale;
        let tr = shape.trunk_radius;
        let v = |x: f64, z: f64| Vec3::new(x * s, 0.0, z * s);
        let mut caps = vec![
            Capsule::new(v(0.0, HEAD_Z.0), v(0.0, HEAD_Z.1), HEAD_R * s),
            Capsule::new(v(0.0, TORSO_Z.0), v(0.0, TORSO_Z.1), TORSO_R * s * tr),
            Capsule::new(v(0.0, PELVIS_Z.0), v(0.0, PELVIS_Z.1), PELVIS_R * s * tr),
        ];
        for (i, side) in [1.0, -1.0].into_iter().enumerate() {
            let root = v(side * SHOULDER.0 * tr, SHOULDER.1);
            let dir = limb_dir(side, pose.arm_abduction[i], pose.arm_swing[i]);
            caps.push(Capsule::new(root, root + dir * (ARM_LEN * s), ARM_R0 * s * shape.arm_radius));
        }
        for (i, side) in [1.0, -1.0].into_iter().enumerate() {
            let root = v(side * HIP.0 * tr, HIP.1);
            let dir = limb_dir(side, pose.leg_spread[i], pose.leg_swing[i]);
            caps.push(Capsule::new(root, root + dir * (LEG_LEN * s), LEG_R0 * s * shape.leg_radius));
        }
        let rot = rotation_z(pose.yaw);
        for c in &mut caps {
            c.a = rot * c.a;
            c.b = rot * c.b;
        }
        // Trunk axes must stay exactly vertical so heights are axial offsets.
        for i in [HEAD, TORSO, PELVIS] {
            caps[i].a.x = 0.0;
            caps[i].a.y = 0.0;
            caps[i].b.x = 0.0;
            caps[i].b.y = 0.0;
        }
        Ok(BodyModel { capsules: caps, pose, shape })
    }

    pub fn neutral() -> Self {
        Self::new(PoseParams::NEUTRAL, ShapeParams::NEUTRAL).expect("neutral body")
    }

    /// Parent capsule of each limb.
    pub fn parent(i: usize) -> Option<usize> {
        match i {
            HEAD | ARM_L | ARM_R => Some(TORSO),
            LEG_L | LEG_R => Some(PELVIS),
            _ => None,
        }
    }

    /// Signed distance to the skin (negative inside the body).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.capsules.iter().map(|c| c.signed_distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Height of the pelvis bottom joint, where a skirt flares out.
    pub fn hip_plane(&self) -> f64 {
        self.capsules[PELVIS].a.z
    }
}

/// Ranges from which body shape and pose are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodySpec {
    pub scale: (f64, f64),
    pub trunk_radius: (f64, f64),
    pub arm_radius: (f64, f64),
    pub leg_radius: (f64, f64),
    pub arm_abduction_deg: (f64, f64),
    pub arm_swing_deg: f64,
    pub leg_spread_deg: (f64, f64),
    pub leg_swing_deg: f64,
    pub yaw_deg: f64,
    /// Garment points within this offset of the skin count as body.
    pub tight_threshold: f64,
    /// Pose redraws allowed before giving up on a self-intersecting figure.
    pub max_retries: u32,
}

impl Default for BodySpec {
    fn default() -> Self {
        BodySpec {
            scale: (0.92, 1.08),
            trunk_radius: (0.95, 1.08),
            arm_radius: (0.9, 1.1),
            leg_radius: (0.92, 1.05),
            arm_abduction_deg: (12.0, 32.0),
            arm_swing_deg: 10.0,
            leg_spread_deg: (0.0, 5.0),
            leg_swing_deg: 8.0,
            yaw_deg: 17.0,
            tight_threshold: 0.008,
            max_retries: 64,
        }
    }
}

impl BodySpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.scale, self.trunk_radius, self.arm_radius, self.leg_radius];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi && hi.is_finite())) {
            return Err(Error::InvalidArgument("body shape ranges must be positive and ordered".into()));
        }
        for (lo, hi) in [self.arm_abduction_deg, self.leg_spread_deg] {
            if !(lo <= hi && lo >= 0.0 && hi < 80.0) {
                return Err(Error::InvalidArgument("limb angle ranges must be ordered and within [0, 80)".into()));
            }
        }
        if self.tight_threshold < 0.0 {
            return Err(Error::InvalidArgument("tight_threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Skirt flare below the hip plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkirtShape {
    /// Radius growth per meter of drop.
    pub slope: f64,
    /// Vertical length from the hip plane to the hem, meters.
    pub length: f64,
}

/// The body region a garment covers, in world heights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Height range on the trunk; `None` bounds are open.
    pub trunk_z: (Option<f64>, Option<f64>),
    /// Fraction of each covered limb, from its root.
    pub limb_fraction: f64,
    pub skirt: Option<SkirtShape>,
}

/// One garment as worn in a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarmentShell {
    pub class: GarmentClass,
    /// Distance of the trunk part from the skin, meters.
    pub offset: f64,
    /// Distance of the sleeve or leg part from the skin, meters.
    pub limb_offset: f64,
    pub coverage: Coverage,
    /// Cloth thickness; shells are ray-cast as zero-thickness surfaces and
    /// this is informational only.
    pub thickness: f64,
}

/// Requested outfit: one upper and one lower garment and how far the upper
/// hem reaches below the lower waistband (negative leaves a gap).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutfitSpec {
    pub upper: GarmentClass,
    pub lower: GarmentClass,
    pub overlap_band: f64,
}

impl OutfitSpec {
    pub fn new(upper: GarmentClass, lower: GarmentClass, overlap_band: f64) -> Result<Self> {
        let s = OutfitSpec { upper, lower, overlap_band };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.upper.is_upper() {
            return Err(Error::InvalidArgument(format!("{} is not an upper garment", self.upper)));
        }
        if !self.lower.is_lower() {
            return Err(Error::InvalidArgument(format!("{} is not a lower garment", self.lower)));
        }
        if !(self.overlap_band.abs() <= 0.15) {
            return Err(Error::InvalidArgument(format!(
                "overlap band {} m is outside [-0.15, 0.15]",
                self.overlap_band
            )));
        }
        Ok(())
    }
}

/// Realized outfit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outfit {
    pub upper: GarmentShell,
    pub lower: GarmentShell,
    pub overlap_band: f64,
}

/// Scene file schema: the outfit plus explicit pose and shape seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub outfit: SceneSpecOutfit,
    pub overlap_band_m: f64,
    pub pose_seed: u64,
    pub shape_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpecOutfit {
    pub upper: GarmentClass,
    pub lower: GarmentClass,
}

impl SceneSpec {
    pub fn outfit_spec(&self) -> Result<OutfitSpec> {
        OutfitSpec::new(self.outfit.upper, self.outfit.lower, self.overlap_band_m)
    }
}

/// Bookkeeping of how a scene was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub pose_seed: u64,
    pub shape_seed: u64,
    /// Poses rejected for self-intersection before this one was accepted.
    pub retries: u32,
    pub waist_z: f64,
    pub hem_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurfaceId {
    Body,
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
struct Surface {
    id: SurfaceId,
    pieces: Vec<Piece>,
    lo: Vec3,
    hi: Vec3,
}

impl Surface {
    fn new(id: SurfaceId, pieces: Vec<Piece>) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &pieces {
            let (a, b) = p.bounds();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        Surface { id, pieces, lo, hi }
    }

    fn inside_other(&self, k: usize, x: &Vec3, eps: f64) -> bool {
        self.pieces.iter().enumerate().any(|(j, p)| j != k && p.contains_strict(x, eps))
    }

    fn first_hit(&self, o: &Vec3, d: &Vec3, t_min: f64, buf: &mut Vec<(f64, usize, shapes::Root)>) -> Option<Hit> {
        if !shapes::ray_hits_box(o, d, &self.lo, &self.hi) {
            return None;
        }
        buf.clear();
        let mut roots = Vec::with_capacity(6);
        for (k, p) in self.pieces.iter().enumerate() {
            roots.clear();
            p.intersect(o, d, t_min, &mut roots);
            buf.extend(roots.iter().map(|r| (r.t, k, *r)));
        }
        buf.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        buf.iter().find_map(|&(t, k, r)| {
            let x = o + d * t;
            (!self.inside_other(k, &x, 1e-12)).then_some(Hit {
                t,
                point: x,
                normal: r.normal,
                surface: self.id,
                piece: k,
                axial: r.axial,
            })
        })
    }
}

/// First intersection of a ray with a scene surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Outward surface normal.
    pub normal: Vec3,
    pub surface: SurfaceId,
    pub piece: usize,
    pub axial: f64,
}

/// A dressed mannequin ready for ray casting.
#[derive(Debug, Clone)]
pub struct Scene {
    pub body: BodyModel,
    pub outfit: Outfit,
    pub meta: SceneMeta,
    pub tight_threshold: f64,
    surfaces: [Surface; 3],
    upper_pieces_capsule: Vec<Option<usize>>,
    lower_pieces: Vec<Piece>,
}

fn trunk_slab(c: &Capsule, z: (Option<f64>, Option<f64>)) -> (f64, f64) {
    (z.0.map_or(f64::NEG_INFINITY, |lo| lo - c.a.z), z.1.map_or(f64::INFINITY, |hi| hi - c.a.z))
}

fn garment_pieces(body: &BodyModel, g: &GarmentShell) -> (Vec<Piece>, Vec<Option<usize>>) {
    let mut pieces = Vec::new();
    let mut caps = Vec::new();
    let mut patch = |ci: usize, slab: (f64, f64), off: f64, pieces: &mut Vec<Piece>| {
        let c = &body.capsules[ci];
        let (u, len) = c.axis();
        pieces.push(Piece::Patch(Patch { capsule: ci, a: c.a, u, len, radius: c.radius + off, slab, offset: off }));
        caps.push(Some(ci));
    };
    if g.coverage.trunk_z != (None, None) || g.coverage.skirt.is_some() {
        for ci in [TORSO, PELVIS] {
            patch(ci, trunk_slab(&body.capsules[ci], g.coverage.trunk_z), g.offset, &mut pieces);
        }
    }
    if g.coverage.limb_fraction > 0.0 {
        let limbs = if g.class.is_upper() { [ARM_L, ARM_R] } else { [LEG_L, LEG_R] };
        for ci in limbs {
            let (_, len) = body.capsules[ci].axis();
            patch(ci, (f64::NEG_INFINITY, g.coverage.limb_fraction * len), g.limb_offset, &mut pieces);
        }
    }
    if let Some(sk) = g.coverage.skirt {
        let pel = &body.capsules[PELVIS];
        pieces.push(Piece::Frustum(Frustum {
            cx: 0.0,
            cy: 0.0,
            z_top: pel.a.z,
            z_bottom: pel.a.z - sk.length,
            r_top: pel.radius + g.offset,
            slope: sk.slope,
        }));
        caps.push(None);
    }
    (pieces, caps)
}

impl Scene {
    /// Assembles a scene from an explicit body and outfit.
    pub fn new(body: BodyModel, outfit: Outfit, meta: SceneMeta, tight_threshold: f64) -> Result<Self> {
        if !outfit.upper.class.is_upper() || !outfit.lower.class.is_lower() {
            return Err(Error::InvalidArgument("outfit needs one upper and one lower garment".into()));
        }
        for g in [&outfit.upper, &outfit.lower] {
            if g.offset < 0.0 || g.limb_offset < 0.0 {
                return Err(Error::InvalidArgument(format!("{} has a negative offset", g.class)));
            }
        }
        let body_pieces = body
            .capsules
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (u, len) = c.axis();
                Piece::Patch(Patch {
                    capsule: i,
                    a: c.a,
                    u,
                    len,
                    radius: c.radius,
                    slab: (f64::NEG_INFINITY, f64::INFINITY),
                    offset: 0.0,
                })
            })
            .collect();
        let (upper, upper_caps) = garment_pieces(&body, &outfit.upper);
        let (lower, _) = garment_pieces(&body, &outfit.lower);
        Ok(Scene {
            surfaces: [
                Surface::new(SurfaceId::Body, body_pieces),
                Surface::new(SurfaceId::Upper, upper),
                Surface::new(SurfaceId::Lower, lower.clone()),
            ],
            upper_pieces_capsule: upper_caps,
            lower_pieces: lower,
            body,
            outfit,
            meta,
            tight_threshold,
        })
    }

    /// Bounding box of everything in the scene.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in &self.surfaces {
            lo = lo.inf(&s.lo);
            hi = hi.sup(&s.hi);
        }
        (lo, hi)
    }

    /// First surface hit along the ray `o + t d` (`d` unit), `t > 0`.
    pub fn cast(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut buf = Vec::new();
        self.cast_with(o, d, &mut buf)
    }

    fn cast_with(&self, o: &Vec3, d: &Vec3, buf: &mut Vec<(f64, usize, shapes::Root)>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for s in &self.surfaces {
            if let Some(h) = s.first_hit(o, d, 1e-9, buf) {
                if best.is_none_or(|b| h.t < b.t) {
                    best = Some(h);
                }
            }
        }
        best
    }

    pub(crate) fn caster(&self) -> impl FnMut(&Vec3, &Vec3) -> Option<Hit> + '_ {
        let mut buf = Vec::new();
        move |o, d| self.cast_with(o, d, &mut buf)
    }

    /// Whether the lower garment lies under the upper garment at the trunk
    /// location given by capsule and axial coordinate.
    fn lower_beneath(&self, capsule: usize, axial: f64) -> bool {
        self.lower_pieces.iter().any(|p| match p {
            Piece::Patch(pa) => pa.capsule == capsule && axial >= pa.slab.0 && axial < pa.slab.1,
            Piece::Frustum(_) => false,
        })
    }

    /// Ground-truth label of a point on surface `surface`, piece `piece`.
    pub fn label_on(&self, surface: SurfaceId, piece: usize, axial: f64) -> CanonicalLabel {
        match surface {
            SurfaceId::Body => CanonicalLabel::SKIN,
            SurfaceId::Upper => {
                let p = &self.surfaces[1].pieces[piece];
                let is_body = p.offset().is_some_and(|o| o <= self.tight_threshold);
                let trunk = matches!(self.upper_pieces_capsule[piece], Some(TORSO | PELVIS));
                let cap = self.upper_pieces_capsule[piece].unwrap_or(usize::MAX);
                let hidden = (trunk && self.lower_beneath(cap, axial)).then_some(self.outfit.lower.class);
                CanonicalLabel { is_body, visible: Some(self.outfit.upper.class), hidden }
            }
            SurfaceId::Lower => {
                let p = &self.surfaces[2].pieces[piece];
                let is_body = p.offset().is_some_and(|o| o <= self.tight_threshold);
                CanonicalLabel { is_body, visible: Some(self.outfit.lower.class), hidden: None }
            }
        }
    }

    pub fn label_hit(&self, hit: &Hit) -> CanonicalLabel {
        self.label_on(hit.surface, hit.piece, hit.axial)
    }

    /// Label of a point lying on (within `tolerance` of) a scene surface.
    /// When several surfaces are within reach the nearest one wins, ties
    /// going to the outer garment.
    pub fn surface_label(&self, p: &Vec3, tolerance: f64) -> Result<CanonicalLabel> {
        let mut best: Option<(f64, usize, SurfaceId, f64)> = None;
        // Outer surfaces first so that ties favor them.
        for s in [&self.surfaces[1], &self.surfaces[2], &self.surfaces[0]] {
            for (k, piece) in s.pieces.iter().enumerate() {
                let Some(dist) = piece.surface_distance(p) else { continue };
                if dist > tolerance || s.inside_other(k, p, tolerance) {
                    continue;
                }
                if best.is_none_or(|b| dist < b.0) {
                    let axial = match piece {
                        Piece::Patch(pa) => (p - pa.a).dot(&pa.u),
                        Piece::Frustum(_) => p.z,
                    };
                    best = Some((dist, k, s.id, axial));
                }
            }
        }
        let (_, k, id, axial) = best.ok_or_else(|| {
            Error::OutOfDomain(format!("point {:?} is farther than {tolerance} m from every surface", p.as_slice()))
        })?;
        Ok(self.label_on(id, k, axial))
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sym(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    uniform(rng, (-half, half))
}

/// Offsets and coverage for one garment class; lengths are in reference
/// (unscaled) meters and scaled by the caller.
fn draw_shell(rng: &mut ChaCha8Rng, class: GarmentClass) -> (f64, f64, f64, Option<(f64, f64)>) {
    use GarmentClass::*;
    // (trunk offset, limb offset, limb fraction, skirt (slope, length))
    match class {
        LongShirt => (uniform(rng, (0.016, 0.028)), uniform(rng, (0.010, 0.018)), uniform(rng, (0.87, 0.93)), None),
        TShirt => (uniform(rng, (0.011, 0.019)), uniform(rng, (0.012, 0.020)), uniform(rng, (0.25, 0.35)), None),
        Top => (uniform(rng, (0.006, 0.0075)), 0.0, 0.0, None),
        LongPants => (uniform(rng, (0.0025, 0.0035)), uniform(rng, (0.011, 0.018)), uniform(rng, (0.87, 0.93)), None),
        Shorts => (uniform(rng, (0.0025, 0.0035)), uniform(rng, (0.012, 0.020)), uniform(rng, (0.28, 0.38)), None),
        Skirt => (0.003, 0.0, 0.0, Some((uniform(rng, (0.2, 0.4)), uniform(rng, (0.25, 0.5))))),
    }
}

/// Height of the neck opening on the shoulder dome. The opening is made
/// narrower than the torso by `gap` so the space between skin and cloth
/// cannot be seen into from above.
fn neckline(body: &BodyModel, offset: f64, gap: f64) -> f64 {
    let t = &body.capsules[TORSO];
    let r_open = t.radius - gap;
    t.b.z + ((t.radius + offset).powi(2) - r_open * r_open).sqrt()
}

/// Why a pose was rejected, or `None` if it is acceptable.
fn pose_problem(body: &BodyModel, lower: &GarmentShell) -> Option<&'static str> {
    let c = &body.capsules;
    for arm in [ARM_L, ARM_R] {
        let (_, la) = c[arm].axis();
        for trunk in [TORSO, PELVIS] {
            let gap = shapes::segment_distance(&c[arm], (0.3 * la, la), &c[trunk], (0.0, f64::INFINITY));
            if gap < c[arm].radius + c[trunk].radius + 0.005 {
                return Some("arm passes through the trunk");
            }
        }
        for leg in [LEG_L, LEG_R] {
            let gap = shapes::segment_distance(&c[arm], (0.5 * la, la), &c[leg], (0.0, f64::INFINITY));
            if gap < c[arm].radius + c[leg].radius + 0.02 {
                return Some("hand touches a leg");
            }
        }
    }
    let (_, ll) = c[LEG_L].axis();
    let gap = shapes::segment_distance(&c[LEG_L], (0.15 * ll, ll), &c[LEG_R], (0.0, f64::INFINITY));
    if gap < c[LEG_L].radius + c[LEG_R].radius + 0.01 {
        return Some("legs intersect");
    }
    if let Some(sk) = lower.coverage.skirt {
        let pel = &c[PELVIS];
        let f = Frustum {
            cx: 0.0,
            cy: 0.0,
            z_top: pel.a.z,
            z_bottom: pel.a.z - sk.length,
            r_top: pel.radius + lower.offset,
            slope: sk.slope,
        };
        const STEPS: usize = 64;
        for (idx, margin_sign) in [(LEG_L, 1.0), (LEG_R, 1.0), (ARM_L, -1.0), (ARM_R, -1.0)] {
            let (_, len) = c[idx].axis();
            for i in 0..=STEPS {
                let p = c[idx].point_at(len * i as f64 / STEPS as f64);
                if p.z > f.z_top || p.z < f.z_bottom {
                    continue;
                }
                let radial = (p.x * p.x + p.y * p.y).sqrt();
                let rim = f.radius_at(p.z);
                if margin_sign > 0.0 && radial + c[idx].radius > rim - 0.004 {
                    return Some("leg pokes through the skirt");
                }
                if margin_sign < 0.0 && radial - c[idx].radius < rim + 0.01 {
                    return Some("arm inside the skirt");
                }
            }
        }
    }
    None
}

fn draw_pose(rng: &mut ChaCha8Rng, spec: &BodySpec) -> PoseParams {
    let rad = f64::to_radians;
    let ab = (rad(spec.arm_abduction_deg.0), rad(spec.arm_abduction_deg.1));
    let sp = (rad(spec.leg_spread_deg.0), rad(spec.leg_spread_deg.1));
    PoseParams {
        arm_abduction: [uniform(rng, ab), uniform(rng, ab)],
        arm_swing: [sym(rng, rad(spec.arm_swing_deg)), sym(rng, rad(spec.arm_swing_deg))],
        leg_spread: [uniform(rng, sp), uniform(rng, sp)],
        leg_swing: [sym(rng, rad(spec.leg_swing_deg)), sym(rng, rad(spec.leg_swing_deg))],
        yaw: sym(rng, rad(spec.yaw_deg)),
    }
}

/// Derives the pose and shape seeds of a scene from one seed.
pub fn scene_seeds(seed: u64) -> (u64, u64) {
    (splitmix64(seed ^ 0x706f_7365), splitmix64(seed ^ 0x7368_6170_65))
}

/// Samples a dressed figure. Deterministic in `seed`.
pub fn sample_scene(outfit: &OutfitSpec, body: &BodySpec, seed: u64) -> Result<Scene> {
    let (pose_seed, shape_seed) = scene_seeds(seed);
    sample_scene_seeded(outfit, body, pose_seed, shape_seed)
}

/// Samples a dressed figure from explicit pose and shape seeds.
pub fn sample_scene_seeded(outfit: &OutfitSpec, spec: &BodySpec, pose_seed: u64, shape_seed: u64) -> Result<Scene> {
    outfit.validate()?;
    spec.validate()?;
    let mut srng = ChaCha8Rng::seed_from_u64(shape_seed);
    let shape = ShapeParams {
        scale: uniform(&mut srng, spec.scale),
        trunk_radius: uniform(&mut srng, spec.trunk_radius),
        arm_radius: uniform(&mut srng, spec.arm_radius),
        leg_radius: uniform(&mut srng, spec.leg_radius),
    };
    let s = shape.scale;
    let (uo, ulo, ufrac, _) = draw_shell(&mut srng, outfit.upper);
    let (lo_off, llo, lfrac, skirt) = draw_shell(&mut srng, outfit.lower);
    let collar_gap = uniform(&mut srng, (0.008, 0.015)) * s;
    // Trunk geometry does not depend on the pose.
    let neck = neckline(&BodyModel::new(PoseParams::NEUTRAL, shape)?, uo, collar_gap);
    // The hem may not drop below the hips; raise the waist instead so the
    // requested band is realized exactly.
    let waist = (1.02 + sym(&mut srng, 0.02)) * s;
    let waist = waist.max(MIN_HEM_Z * s + outfit.overlap_band);
    let hem = waist - outfit.overlap_band;
    let upper = GarmentShell {
        class: outfit.upper,
        offset: uo,
        limb_offset: ulo,
        coverage: Coverage { trunk_z: (Some(hem), Some(neck)), limb_fraction: ufrac, skirt: None },
        thickness: 0.001,
    };
    let lower_trunk = if skirt.is_some() { (Some(PELVIS_Z.0 * s), Some(waist)) } else { (None, Some(waist)) };
    let lower = GarmentShell {
        class: outfit.lower,
        offset: lo_off,
        limb_offset: llo,
        coverage: Coverage {
            trunk_z: lower_trunk,
            limb_fraction: lfrac,
            skirt: skirt.map(|(slope, length)| SkirtShape { slope, length: length * s }),
        },
        thickness: 0.001,
    };

    let mut prng = ChaCha8Rng::seed_from_u64(pose_seed);
    let mut retries = 0;
    let body = loop {
        let body = BodyModel::new(draw_pose(&mut prng, spec), shape)?;
        match pose_problem(&body, &lower) {
            None => break body,
            Some(why) if retries >= spec.max_retries => {
                return Err(Error::InvalidState(format!(
                    "no valid pose after {retries} retries (last rejection: {why})"
                )))
            }
            Some(_) => retries += 1,
        }
    };
    let meta = SceneMeta { pose_seed, shape_seed, retries, waist_z: waist, hem_z: hem };
    Scene::new(body, Outfit { upper, lower, overlap_band: outfit.overlap_band }, meta, spec.tight_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use GarmentClass::*;

    fn scene(u: GarmentClass, l: GarmentClass, band: f64, seed: u64) -> Scene {
        sample_scene(&OutfitSpec::new(u, l, band).unwrap(), &BodySpec::default(), seed).unwrap()
    }

    /// Casts a horizontal ray from outside towards the trunk axis at height z.
    fn trunk_probe(sc: &Scene, z: f64, azimuth: f64) -> Hit {
        let dir = Vec3::new(azimuth.cos(), azimuth.sin(), 0.0);
        sc.cast(&(dir * 3.0 + Vec3::new(0.0, 0.0, z)), &(-dir)).expect("trunk hit")
    }

    #[test]
    fn limbs_are_connected() {
        for seed in 0..20 {
            let sc = scene(TShirt, LongPants, 0.05, seed);
            for (i, c) in sc.body.capsules.iter().enumerate() {
                assert!(c.radius > 0.0);
                if let Some(p) = BodyModel::parent(i) {
                    assert!(sc.body.capsules[p].contains(&c.a), "capsule {i} detached");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = scene(Top, Skirt, -0.05, 9);
        let b = scene(Top, Skirt, -0.05, 9);
        assert_eq!(a.body, b.body);
        assert_eq!(a.outfit, b.outfit);
        assert_eq!(a.meta, b.meta);
        let c = scene(Top, Skirt, -0.05, 10);
        assert_ne!(a.body, c.body);
    }

    #[test]
    fn overlap_band_is_layered() {
        let sc = scene(TShirt, LongPants, 0.10, 3);
        let z = sc.meta.hem_z + 0.05;
        assert!(z < sc.meta.waist_z);
        let h = trunk_probe(&sc, z, 0.3);
        assert_eq!(h.surface, SurfaceId::Upper);
        let lab = sc.label_hit(&h);
        assert_eq!(lab, CanonicalLabel { is_body: false, visible: Some(TShirt), hidden: Some(LongPants) });
        // Above the waistband nothing is hidden.
        let h = trunk_probe(&sc, sc.meta.waist_z + 0.05, 0.3);
        assert_eq!(sc.label_hit(&h).hidden, None);
    }

    #[test]
    fn negative_band_leaves_bare_midriff() {
        let sc = scene(Top, Skirt, -0.05, 4);
        assert!(sc.meta.hem_z > sc.meta.waist_z);
        let h = trunk_probe(&sc, 0.5 * (sc.meta.hem_z + sc.meta.waist_z), 1.0);
        assert_eq!(h.surface, SurfaceId::Body);
        assert_eq!(sc.label_hit(&h), CanonicalLabel::SKIN);
    }

    #[test]
    fn tight_top_counts_as_body() {
        let sc = scene(Top, LongPants, -0.03, 5);
        let h = trunk_probe(&sc, sc.meta.hem_z + 0.1, 2.0);
        assert_eq!(sc.label_hit(&h), CanonicalLabel { is_body: true, visible: Some(Top), hidden: None });
    }

    #[test]
    fn forearm_skin_with_tshirt() {
        let sc = scene(TShirt, Shorts, 0.04, 6);
        let arm = sc.body.capsules[ARM_L];
        let (u, len) = arm.axis();
        let p = arm.a + u * (0.8 * len);
        // Move outward perpendicular to the arm and cast back at it.
        let side = u.cross(&Vec3::y()).normalize();
        let side = if side.x < 0.0 { -side } else { side };
        let h = sc.cast(&(p + side * 1.0), &(-side)).unwrap();
        assert_eq!(h.surface, SurfaceId::Body);
        assert_eq!(sc.label_hit(&h), CanonicalLabel::SKIN);
        let lab = sc.surface_label(&h.point, 1e-6).unwrap();
        assert_eq!(lab, CanonicalLabel::SKIN);
    }

    #[test]
    fn surface_label_matches_hits_and_rejects_far_points() {
        let sc = scene(LongShirt, Skirt, 0.06, 7);
        for k in 0..40 {
            let az = k as f64 * 0.157;
            for z in [0.3, 0.6, 0.95, 1.2, 1.5] {
                if let Some(h) = sc.cast(&Vec3::new(3.0 * az.cos(), 3.0 * az.sin(), z), &Vec3::new(-az.cos(), -az.sin(), 0.0)) {
                    assert_eq!(sc.surface_label(&h.point, 1e-7).unwrap(), sc.label_hit(&h));
                }
            }
        }
        assert!(matches!(sc.surface_label(&Vec3::new(2.0, 0.0, 1.0), 0.01), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn skirt_hides_legs_from_the_side() {
        let sc = scene(TShirt, Skirt, 0.05, 8);
        let sk = sc.outfit.lower.coverage.skirt.unwrap();
        let z = sc.body.hip_plane() - 0.5 * sk.length;
        let h = trunk_probe(&sc, z, 0.0);
        assert_eq!(h.surface, SurfaceId::Lower);
        assert_eq!(sc.label_hit(&h), CanonicalLabel { is_body: false, visible: Some(Skirt), hidden: None });
    }

    #[test]
    fn rejects_bad_outfits() {
        assert!(OutfitSpec::new(Skirt, TShirt, 0.0).is_err());
        assert!(OutfitSpec::new(TShirt, Shorts, 0.4).is_err());
    }

    #[test]
    fn impossible_pose_reports_retries() {
        let spec = BodySpec { arm_abduction_deg: (0.0, 0.0), arm_swing_deg: 0.0, max_retries: 3, ..BodySpec::default() };
        let err = sample_scene(&OutfitSpec::new(TShirt, LongPants, 0.0).unwrap(), &spec, 1).unwrap_err();
        assert!(err.to_string().contains("3 retries"), "{err}");
    }
}
