//! Analytic scene content: static wall and floor planes plus moving bodies,
//! with exact ray casting and material-point tracking.

use nalgebra::Matrix3;

use crate::geometry::{rotation_about, Vec3};

pub const WALL_Z: f64 = 2.5;
pub const FLOOR_Y: f64 = 1.2;
/// Horizontal extent of the background over which the textureless band is laid out.
pub const BACKGROUND_SPAN: (f64, f64) = (-3.6, 3.6);

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_TEXTURELESS: u8 = 1;
pub const FIRST_OBJECT_LABEL: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Cuboid { half: [f64; 3] },
    /// Rectangle in the local xy plane displaced along local z by
    /// `amplitude * sin(wavenumber * u + omega * t + phase)`.
    Sheet {
        half_u: f64,
        half_v: f64,
        amplitude: f64,
        wavenumber: f64,
        omega: f64,
        phase: f64,
    },
}

/// A primitive following a sinusoidal drift and a constant spin.
#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub shape: Shape,
    pub center: Vec3,
    pub base_rotation: Matrix3<f64>,
    pub spin_axis: Vec3,
    /// Radians per frame.
    pub spin: f64,
    pub drift_dir: Vec3,
    pub drift_amplitude: f64,
    /// Radians per frame.
    pub drift_freq: f64,
    pub drift_phase: f64,
}

impl Body {
    pub fn frame_at(&self, t: f64) -> (Matrix3<f64>, Vec3) {
        let r = rotation_about(&self.spin_axis, self.spin * t) * self.base_rotation;
        let c = self.center + self.drift_dir * (self.drift_amplitude * (self.drift_freq * t + self.drift_phase).sin());
        (r, c)
    }

    fn sheet_height(&self, u: f64, t: f64) -> f64 {
        match self.shape {
            Shape::Sheet {
                amplitude,
                wavenumber,
                omega,
                phase,
                ..
            } => amplitude * (wavenumber * u + omega * t + phase).sin(),
            _ => 0.0,
        }
    }

    /// Body-local position of a material point at time `t`.
    pub fn local_position(&self, material: &Vec3, t: f64) -> Vec3 {
        match self.shape {
            Shape::Sheet { .. } => Vec3::new(material.x, material.y, self.sheet_height(material.x, t)),
            _ => *material,
        }
    }

    pub fn world_position(&self, material: &Vec3, t: f64) -> Vec3 {
        let (r, c) = self.frame_at(t);
        r * self.local_position(material, t) + c
    }

    /// Nearest intersection beyond `s_min` along `o + s d`; returns the ray
    /// parameter and the material coordinates of the hit.
    pub fn intersect(&self, o: &Vec3, d: &Vec3, t: f64, s_min: f64) -> Option<(f64, Vec3)> {
        let (r, c) = self.frame_at(t);
        let rt = r.transpose();
        let ol = rt * (o - c);
        let dl = rt * d;
        match self.shape {
            Shape::Sphere { radius } => {
                let a = dl.norm_squared();
                let b = ol.dot(&dl);
                let cc = ol.norm_squared() - radius * radius;
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|s| *s > s_min)
                    .map(|s| (s, ol + dl * s))
            }
            Shape::Cuboid { half } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if dl[k].abs() < 1e-300 {
                        if ol[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[k] - ol[k]) / dl[k];
                    let b = (half[k] - ol[k]) / dl[k];
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                if lo > hi {
                    return None;
                }
                [lo, hi].into_iter().find(|s| *s > s_min).map(|s| (s, ol + dl * s))
            }
            Shape::Sheet {
                half_u,
                half_v,
                amplitude,
                ..
            } => {
                if dl.z.abs() < 1e-12 {
                    return None;
                }
                let r2 = half_u * half_u + half_v * half_v + amplitude * amplitude;
                let s_close = -ol.dot(&dl) / dl.norm_squared();
                if (ol + dl * s_close).norm_squared() > r2 {
                    return None;
                }
                let g = |s: f64| {
                    let q = ol + dl * s;
                    q.z - self.sheet_height(q.x, t)
                };
                let a = (-amplitude - ol.z) / dl.z;
                let b = (amplitude - ol.z) / dl.z;
                let (s0, s1) = (a.min(b).max(s_min), a.max(b));
                if s0 >= s1 {
                    return None;
                }
                const SCAN: usize = 24;
                let mut prev_s = s0;
                let mut prev_g = g(s0);
                for k in 1..=SCAN {
                    let s = s0 + (s1 - s0) * k as f64 / SCAN as f64;
                    let gs = g(s);
                    if prev_g == 0.0 || prev_g.signum() != gs.signum() {
                        let root = bisect(&g, prev_s, s, prev_g);
                        let q = ol + dl * root;
                        if q.x.abs() <= half_u && q.y.abs() <= half_v && root > s_min {
                            return Some((root, Vec3::new(q.x, q.y, 0.0)));
                        }
                    }
                    prev_s = s;
                    prev_g = gs;
                }
                None
            }
        }
    }
}

fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut g_lo: f64) -> f64 {
    if g_lo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == g_lo.signum() {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Wall,
    Floor,
    Body(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub surface: Surface,
    /// Ray parameter; equals camera depth for unit-depth ray directions.
    pub s: f64,
    pub material: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub bodies: Vec<Body>,
    /// World x below which the background is textureless.
    pub textureless_until: f64,
}

impl World {
    pub fn cast(&self, o: &Vec3, d: &Vec3, t: f64, s_min: f64) -> Option<SurfaceHit> {
        let mut best: Option<SurfaceHit> = None;
        let mut consider = |surface, s: f64, material| {
            if s > s_min && best.map_or(true, |b| s < b.s) {
                best = Some(SurfaceHit { surface, s, material });
            }
        };
        if d.z.abs() > 0.0 {
            let s = (WALL_Z - o.z) / d.z;
            consider(Surface::Wall, s, o + d * s);
        }
        if d.y.abs() > 0.0 {
            let s = (FLOOR_Y - o.y) / d.y;
            consider(Surface::Floor, s, o + d * s);
        }
        for (k, body) in self.bodies.iter().enumerate() {
            if let Some((s, m)) = body.intersect(o, d, t, s_min) {
                consider(Surface::Body(k), s, m);
            }
        }
        best
    }

    pub fn position(&self, hit: &SurfaceHit, t: f64) -> Vec3 {
        self.material_position(hit.surface, &hit.material, t)
    }

    pub fn material_position(&self, surface: Surface, material: &Vec3, t: f64) -> Vec3 {
        match surface {
            Surface::Wall | Surface::Floor => *material,
            Surface::Body(k) => self.bodies[k].world_position(material, t),
        }
    }

    pub fn label(&self, surface: Surface, material: &Vec3) -> u8 {
        match surface {
            Surface::Wall | Surface::Floor => {
                if material.x < self.textureless_until {
                    LABEL_TEXTURELESS
                } else {
                    LABEL_BACKGROUND
                }
            }
            Surface::Body(k) => FIRST_OBJECT_LABEL + k as u8,
        }
    }

    /// Flat-shaded intensity in [0, 1] from a per-surface procedural texture.
    pub fn intensity(&self, surface: Surface, m: &Vec3) -> f64 {
        if self.label(surface, m) == LABEL_TEXTURELESS {
            return 0.5;
        }
        match surface {
            Surface::Wall => 0.5 + 0.3 * (4.0 * m.x + 1.3).sin() * (3.3 * m.y).sin() + 0.1 * (11.0 * m.x + 7.0 * m.y).sin(),
            Surface::Floor => checker(m.x, m.z, 0.4, 0.25, 0.7),
            Surface::Body(k) => match self.bodies[k].shape {
                Shape::Sphere { .. } => 0.5 + 0.4 * (7.0 * m.x).sin() * (6.0 * m.y + 2.0 * m.z).sin(),
                Shape::Cuboid { .. } => {
                    let c = ((m.x / 0.12).floor() + (m.y / 0.12).floor() + (m.z / 0.12).floor()) as i64;
                    if c.rem_euclid(2) == 0 {
                        0.15
                    } else {
                        0.85
                    }
                }
                Shape::Sheet { .. } => 0.5 + 0.35 * (9.0 * m.x).sin() * (7.0 * m.y).cos(),
            },
        }
    }
}

fn checker(a: f64, b: f64, size: f64, dark: f64, light: f64) -> f64 {
    if ((a / size).floor() + (b / size).floor()) as i64 % 2 == 0 {
        dark
    } else {
        light
    }
}
