//! Procedural part-labeled objects and an analytic reference renderer.
//!
//! Objects are unions of boxes, spheres and cylinders with per-part class
//! ids. Closed-form ray intersections give exact depth and mask oracles
//! for training data and for verifying the learned renderer.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimitiveKind {
    /// Half-extents along local x, y, z.
    Box { half: Vec3 },
    Sphere { radius: f64 },
    /// Axis along local y; `half_height` from center to each cap.
    Cylinder { radius: f64, half_height: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    /// Local-to-world rotation.
    pub rotation: Mat3,
    pub translation: Vec3,
    /// Base color in [0,1].
    pub albedo: [f64; 3],
    /// Semantic class, >= 1 (0 is reserved for background).
    pub class: u8,
}

impl Primitive {
    /// Exact radius of the smallest origin-centered sphere containing the
    /// primitive.
    pub fn bounding_radius(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Box { half } => {
                let mut max = 0.0f64;
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            let corner = self.translation
                                + self.rotation.mul_vec(Vec3::new(
                                    sx * half.x,
                                    sy * half.y,
                                    sz * half.z,
                                ));
                            max = max.max(corner.norm());
                        }
                    }
                }
                max
            }
            PrimitiveKind::Sphere { radius } => self.translation.norm() + radius,
            PrimitiveKind::Cylinder { radius, half_height } => {
                // Farthest point lies on one of the two rim circles. For a
                // circle with center q and plane normal a, the farthest
                // point from the origin is at sqrt((|q_perp| + r)^2 + q_par^2)
                // where q_par = q.a and q_perp = q - q_par*a.
                let axis = self.rotation.col(1);
                let mut max = 0.0f64;
                for s in [-1.0, 1.0] {
                    let q = self.translation + axis * (s * half_height);
                    let q_par = q.dot(axis);
                    let q_perp = (q - axis * q_par).norm();
                    max = max.max(((q_perp + radius).powi(2) + q_par * q_par).sqrt());
                }
                max
            }
        }
    }
}

/// Ray-primitive intersection record.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    /// Outward unit normal in world coordinates.
    pub normal: Vec3,
    pub class: u8,
    pub albedo: [f64; 3],
}

const T_MIN: f64 = 1e-9;

/// Nearest intersection of a world-space ray with one primitive.
pub fn intersect(p: &Primitive, origin: Vec3, dir: Vec3) -> Option<Hit> {
    let rt = p.rotation.transpose();
    let o = rt.mul_vec(origin - p.translation);
    let d = rt.mul_vec(dir);
    let local = match p.kind {
        PrimitiveKind::Box { half } => intersect_box(o, d, half),
        PrimitiveKind::Sphere { radius } => intersect_sphere(o, d, radius),
        PrimitiveKind::Cylinder { radius, half_height } => {
            intersect_cylinder(o, d, radius, half_height)
        }
    };
    local.map(|(t, n)| Hit {
        t,
        normal: p.rotation.mul_vec(n),
        class: p.class,
        albedo: p.albedo,
    })
}

/// Slab test. Returns entry distance and outward normal of the entry face.
fn intersect_box(o: Vec3, d: Vec3, half: Vec3) -> Option<(f64, Vec3)> {
    let (ov, dv, hv) = (o.to_array(), d.to_array(), half.to_array());
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0;
    for i in 0..3 {
        if dv[i].abs() < 1e-15 {
            if ov[i].abs() > hv[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dv[i];
        let mut t0 = (-hv[i] - ov[i]) * inv;
        let mut t1 = (hv[i] - ov[i]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_enter {
            t_enter = t0;
            axis = i;
        }
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_enter < T_MIN {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = -dv[axis].signum();
    Some((t_enter, Vec3::from_array(n)))
}

fn intersect_sphere(o: Vec3, d: Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let b = o.dot(d);
    let c = o.dot(o) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = if -b - sq > T_MIN {
        -b - sq
    } else if -b + sq > T_MIN {
        -b + sq
    } else {
        return None;
    };
    let n = (o + d * t) / radius;
    Some((t, n))
}

fn intersect_cylinder(o: Vec3, d: Vec3, radius: f64, half_height: f64) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, Vec3)> = None;
    let mut consider = |t: f64, n: Vec3| {
        if t > T_MIN && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    // Lateral surface: x^2 + z^2 = r^2.
    let a = d.x * d.x + d.z * d.z;
    if a > 1e-15 {
        let b = o.x * d.x + o.z * d.z;
        let c = o.x * o.x + o.z * o.z - radius * radius;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let y = o.y + t * d.y;
                if y.abs() <= half_height {
                    let p = o + d * t;
                    consider(t, Vec3::new(p.x, 0.0, p.z) / radius);
                }
            }
        }
    }
    // Caps: y = +-half_height.
    if d.y.abs() > 1e-15 {
        for s in [-1.0, 1.0] {
            let t = (s * half_height - o.y) / d.y;
            let p = o + d * t;
            if p.x * p.x + p.z * p.z <= radius * radius {
                consider(t, Vec3::new(0.0, s, 0.0));
            }
        }
    }
    best
}

// ── Part scenes ──────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Chair,
    Table,
}

impl Template {
    pub fn parse(s: &str) -> Result<Template> {
        match s {
            "chair" => Ok(Template::Chair),
            "table" => Ok(Template::Table),
            other => Err(Error::InvalidArgument(format!(
                "unknown template {other:?} (expected chair or table)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Template::Chair => "chair",
            Template::Table => "table",
        }
    }

    /// Class count including background class 0.
    pub fn class_count(&self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(&self) -> &'static [&'static str] {
        match self {
            Template::Chair => &["background", "leg", "seat", "back", "arm"],
            Template::Table => &["background", "leg", "top", "apron"],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PartScene {
    pub primitives: Vec<Primitive>,
    pub seed: u64,
    pub template: Template,
}

impl PartScene {
    pub fn validate(&self) -> Result<()> {
        let c = self.template.class_count() as u8;
        let mut classes: Vec<u8> = self.primitives.iter().map(|p| p.class).collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::InvalidArgument(
                "part scene needs at least 2 distinct foreground classes".into(),
            ));
        }
        for p in &self.primitives {
            if p.class == 0 || p.class >= c {
                return Err(Error::ClassOutOfRange { index: p.class as usize, classes: c as usize });
            }
            if p.bounding_radius() > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "primitive of class {} extends to radius {}",
                    p.class,
                    p.bounding_radius()
                )));
            }
        }
        Ok(())
    }

    pub fn max_radius(&self) -> f64 {
        self.primitives.iter().map(|p| p.bounding_radius()).fold(0.0, f64::max)
    }
}

fn random_albedo<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)]
}

/// Deterministic procedural object. Chair: 4 cylinder legs (class 1), seat
/// box (2), back box (3), arm boxes (4) present iff the seed is even.
/// Table: 4 legs (1), top (2), apron box under the top (3). Sizes, colors
/// and a yaw about +y are randomized per seed; everything stays inside the
/// unit sphere.
pub fn make_block_object(template: Template, seed: u64) -> PartScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10c);
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let rot = Mat3::rotation_y(yaw);
    let mut prims = Vec::new();
    let mut place = |kind: PrimitiveKind, center: Vec3, albedo: [f64; 3], class: u8| {
        prims.push(Primitive {
            kind,
            rotation: rot,
            translation: rot.mul_vec(center),
            albedo,
            class,
        });
    };

    match template {
        Template::Chair => {
            let seat_hx = rng.gen_range(0.28..0.36);
            let seat_hz = rng.gen_range(0.26..0.34);
            let seat_ht = rng.gen_range(0.04..0.06);
            let seat_y = rng.gen_range(-0.10..0.05);
            let leg_r = rng.gen_range(0.07..0.10);
            let ground = -0.60;
            let back_hh = rng.gen_range(0.20..0.30);
            let leg_albedo = random_albedo(&mut rng);
            let seat_albedo = random_albedo(&mut rng);
            let back_albedo = random_albedo(&mut rng);
            let arm_albedo = random_albedo(&mut rng);

            let seat_bottom = seat_y - seat_ht;
            let leg_hh = (seat_bottom - ground) / 2.0;
            let leg_cy = (ground + seat_bottom) / 2.0;
            for sx in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    place(
                        PrimitiveKind::Cylinder { radius: leg_r, half_height: leg_hh },
                        Vec3::new(
                            sx * (seat_hx - leg_r - 0.02),
                            leg_cy,
                            sz * (seat_hz - leg_r - 0.02),
                        ),
                        leg_albedo,
                        1,
                    );
                }
            }
            place(
                PrimitiveKind::Box { half: Vec3::new(seat_hx, seat_ht, seat_hz) },
                Vec3::new(0.0, seat_y, 0.0),
                seat_albedo,
                2,
            );
            place(
                PrimitiveKind::Box { half: Vec3::new(seat_hx, back_hh, 0.035) },
                Vec3::new(0.0, seat_y + seat_ht + back_hh, -(seat_hz - 0.035)),
                back_albedo,
                3,
            );
            if seed % 2 == 0 {
                let arm_hh = 0.09;
                for sx in [-1.0, 1.0] {
                    place(
                        PrimitiveKind::Box {
                            half: Vec3::new(0.035, arm_hh, seat_hz * 0.8),
                        },
                        Vec3::new(sx * (seat_hx - 0.035), seat_y + seat_ht + arm_hh, 0.0),
                        arm_albedo,
                        4,
                    );
                }
            }
        }
        Template::Table => {
            let top_hx = rng.gen_range(0.34..0.44);
            let top_hz = rng.gen_range(0.30..0.40);
            let top_ht = rng.gen_range(0.03..0.05);
            let top_y = rng.gen_range(0.10..0.25);
            let leg_r = rng.gen_range(0.06..0.09);
            let ground = -0.55;
            let leg_albedo = random_albedo(&mut rng);
            let top_albedo = random_albedo(&mut rng);
            let apron_albedo = random_albedo(&mut rng);

            let top_bottom = top_y - top_ht;
            let leg_hh = (top_bottom - ground) / 2.0;
            let leg_cy = (ground + top_bottom) / 2.0;
            for sx in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    place(
                        PrimitiveKind::Cylinder { radius: leg_r, half_height: leg_hh },
                        Vec3::new(
                            sx * (top_hx - leg_r - 0.03),
                            leg_cy,
                            sz * (top_hz - leg_r - 0.03),
                        ),
                        leg_albedo,
                        1,
                    );
                }
            }
            place(
                PrimitiveKind::Box { half: Vec3::new(top_hx, top_ht, top_hz) },
                Vec3::new(0.0, top_y, 0.0),
                top_albedo,
                2,
            );
            let apron_hh = 0.05;
            place(
                PrimitiveKind::Box {
                    half: Vec3::new(top_hx * 0.75, apron_hh, top_hz * 0.75),
                },
                Vec3::new(0.0, top_bottom - apron_hh, 0.0),
                apron_albedo,
                3,
            );
        }
    }

    let scene = PartScene { primitives: prims, seed, template };
    debug_assert!(scene.validate().is_ok(), "{:?}", scene.validate());
    scene
}

// ── Reference rendering ──────────────────────────────────────────────

/// Depth sentinel for pixels that hit nothing.
pub const DEPTH_NONE: f64 = f64::INFINITY;

/// Exact per-pixel ground truth for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceView {
    pub width: usize,
    pub height: usize,
    /// `height*width*3` in [0,1]; white where nothing is hit.
    pub rgb: Vec<f64>,
    /// `height*width` class ids; 0 where nothing is hit.
    pub mask: Vec<u8>,
    /// `height*width` distances; `DEPTH_NONE` where nothing is hit.
    pub depth: Vec<f64>,
}

/// Nearest hit over all primitives.
pub fn trace(scene: &PartScene, origin: Vec3, dir: Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for p in &scene.primitives {
        if let Some(h) = intersect(p, origin, dir) {
            if best.as_ref().map_or(true, |b| h.t < b.t) {
                best = Some(h);
            }
        }
    }
    best
}

/// Unit direction from surfaces toward the fixed scene light. One light,
/// shared by every view and instance: per-point colors must not depend on
/// the rendering camera, or no position-only color field could ever fit
/// multi-view data (the across-view shading variance is unlearnable).
pub const LIGHT_DIR: Vec3 = Vec3 { x: 3.0 / 7.0, y: 6.0 / 7.0, z: 2.0 / 7.0 };

/// Analytic render: Lambert shading under the fixed directional light
/// [`LIGHT_DIR`], white background, exact depth, per-pixel class mask.
pub fn reference_render(scene: &PartScene, view: &CameraView) -> ReferenceView {
    let npix = view.pixel_count();
    let mut rgb = Vec::with_capacity(npix * 3);
    let mut mask = Vec::with_capacity(npix);
    let mut depth = Vec::with_capacity(npix);
    for v in 0..view.height {
        for u in 0..view.width {
            let ray = view.ray_for_pixel(u, v);
            match trace(scene, ray.origin, ray.direction) {
                Some(hit) => {
                    let lambert = LIGHT_DIR.dot(hit.normal).max(0.0);
                    for ch in 0..3 {
                        rgb.push(hit.albedo[ch] * lambert);
                    }
                    mask.push(hit.class);
                    depth.push(hit.t);
                }
                None => {
                    rgb.extend_from_slice(&[1.0, 1.0, 1.0]);
                    mask.push(0);
                    depth.push(DEPTH_NONE);
                }
            }
        }
    }
    ReferenceView { width: view.width, height: view.height, rgb, mask, depth }
}
