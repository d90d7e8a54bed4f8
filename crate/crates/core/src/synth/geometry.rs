//! Object shape templates and ray intersection.

use nalgebra::{Rotation3, Vector3};

use crate::aoi::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Ellipsoid { center: Vector3<f64>, semi: Vector3<f64> },
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
}

impl Primitive {
    /// Smallest positive ray parameter of an intersection, in the
    /// primitive's frame.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Ellipsoid { center, semi } => {
                let oc = (o - center).component_div(semi);
                let dd = d.component_div(semi);
                let a = dd.norm_squared();
                let b = 2.0 * oc.dot(&dd);
                let c = oc.norm_squared() - 1.0;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / (2.0 * a);
                let t1 = (-b + sq) / (2.0 * a);
                [t0, t1].into_iter().find(|t| *t > 1e-9)
            }
            Primitive::Cuboid { min, max } => {
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far || t_far <= 1e-9 {
                    None
                } else if t_near > 1e-9 {
                    Some(t_near)
                } else {
                    Some(t_far)
                }
            }
        }
    }

    /// Points on the surface, dense enough for a silhouette bounding box.
    pub fn surface_samples(&self) -> Vec<Vector3<f64>> {
        match self {
            Primitive::Ellipsoid { center, semi } => {
                let mut out = Vec::with_capacity(24 * 13);
                for i in 0..=12 {
                    let lat = std::f64::consts::PI * (i as f64 / 12.0 - 0.5);
                    for j in 0..24 {
                        let lon = std::f64::consts::TAU * j as f64 / 24.0;
                        let u = Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin());
                        out.push(center + u.component_mul(semi));
                    }
                }
                out
            }
            Primitive::Cuboid { min, max } => (0..8)
                .map(|c| {
                    Vector3::new(
                        if c & 1 == 0 { min.x } else { max.x },
                        if c & 2 == 0 { min.y } else { max.y },
                        if c & 4 == 0 { min.z } else { max.z },
                    )
                })
                .collect(),
        }
    }
}

/// Head, torso, arms and two legs in mid-stride, standing at height `base`.
/// `width` spans the arms; the torso is narrower.
fn human(depth: f64, width: f64, height: f64, base: f64) -> Vec<Primitive> {
    let v = Vector3::new;
    let z = |f: f64| base + f * height;
    let block = |x: (f64, f64), y: (f64, f64), zr: (f64, f64)| Primitive::Cuboid {
        min: v(x.0 * depth, y.0 * width, z(zr.0)),
        max: v(x.1 * depth, y.1 * width, z(zr.1)),
    };
    vec![
        block((0.1, 0.5), (-0.3, -0.06), (0.0, 0.5)),
        block((-0.5, -0.1), (0.06, 0.3), (0.0, 0.5)),
        block((-0.15, 0.15), (-0.5, -0.36), (0.47, 0.8)),
        block((-0.15, 0.15), (0.36, 0.5), (0.47, 0.8)),
        Primitive::Ellipsoid {
            center: v(0.0, 0.0, z(0.66)),
            semi: v(depth / 2.0, 0.37 * width, 0.17 * height),
        },
        Primitive::Ellipsoid {
            center: v(0.0, 0.0, z(0.935)),
            semi: v(0.3 * depth, 0.18 * width, 0.065 * height),
        },
    ]
}

/// Primitives for a class in the object frame (x forward, y left, z up,
/// origin on the ground under the object's center).
pub fn class_template(class: ClassLabel, length: f64, width: f64, height: f64) -> Vec<Primitive> {
    let v = Vector3::new;
    match class {
        ClassLabel::Pedestrian => human(length, width, height, 0.0),
        ClassLabel::EscooterRider => {
            let deck_top = 0.18;
            let mut parts = human(0.4_f64.min(length), width, height - deck_top, deck_top);
            parts.push(Primitive::Cuboid {
                min: v(-length / 2.0, -0.08, 0.08),
                max: v(length / 2.0, 0.08, deck_top),
            });
            parts.push(Primitive::Cuboid {
                min: v(length / 2.0 - 0.08, -0.025, deck_top),
                max: v(length / 2.0 - 0.03, 0.025, 1.1_f64.min(height)),
            });
            parts
        }
        ClassLabel::Car => {
            let sill = 0.2;
            let waist = sill + 0.5 * (height - sill);
            vec![
                Primitive::Cuboid {
                    min: v(-length / 2.0, -width / 2.0, sill),
                    max: v(length / 2.0, width / 2.0, waist),
                },
                Primitive::Cuboid {
                    min: v(-0.3 * length, -0.42 * width, waist),
                    max: v(0.2 * length, 0.42 * width, height),
                },
            ]
        }
        ClassLabel::Other => vec![Primitive::Cuboid {
            min: v(-length / 2.0, -width / 2.0, 0.0),
            max: v(length / 2.0, width / 2.0, height),
        }],
    }
}

/// A shape placed in the LiDAR frame.
#[derive(Debug, Clone)]
pub struct PlacedShape {
    pub label: i64,
    primitives: Vec<Primitive>,
    origin: Vector3<f64>,
    /// LiDAR frame to object frame.
    to_local: Rotation3<f64>,
    bound_center: Vector3<f64>,
    bound_radius: f64,
}

impl PlacedShape {
    pub fn new(label: i64, primitives: Vec<Primitive>, origin: Vector3<f64>, yaw_deg: f64) -> Self {
        let to_local = Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw_deg.to_radians());
        let local: Vec<Vector3<f64>> = primitives.iter().flat_map(|p| p.surface_samples()).collect();
        let lo = local.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = local.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        let c_local = (lo + hi) / 2.0;
        let bound_radius = (hi - lo).norm() / 2.0 + 1e-6;
        let bound_center = origin + to_local.inverse() * c_local;
        Self {
            label,
            primitives,
            origin,
            to_local,
            bound_center,
            bound_radius,
        }
    }

    /// Ray parameter of the first hit of a ray from `o` along unit `d`.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let oc = self.bound_center - o;
        let along = oc.dot(d);
        if oc.norm_squared() - along * along > self.bound_radius * self.bound_radius {
            return None;
        }
        let lo = self.to_local * (o - self.origin);
        let ld = self.to_local * d;
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(&lo, &ld))
            .min_by(f64::total_cmp)
    }

    /// Surface samples in the LiDAR frame.
    pub fn surface_samples(&self) -> Vec<Vector3<f64>> {
        let back = self.to_local.inverse();
        self.primitives
            .iter()
            .flat_map(|p| p.surface_samples())
            .map(|p| self.origin + back * p)
            .collect()
    }

    /// Azimuth / elevation half-extent (radians) of the bounding sphere as
    /// seen from the origin, or `None` if the sensor is inside it.
    pub fn angular_bounds(&self) -> Option<AngularBox> {
        let c = self.bound_center;
        let dist = c.norm();
        if dist <= self.bound_radius {
            return None;
        }
        let half = (self.bound_radius / dist).asin();
        let az = c.y.atan2(c.x);
        let el = (c.z / dist).asin();
        let planar = c.x.hypot(c.y);
        let az_half = if planar <= self.bound_radius {
            std::f64::consts::PI
        } else {
            (self.bound_radius / planar).asin()
        };
        Some(AngularBox {
            az_min: az - az_half,
            az_max: az + az_half,
            el_min: el - half,
            el_max: el + half,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularBox {
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
}

impl AngularBox {
    pub fn contains(&self, az: f64, el: f64) -> bool {
        el >= self.el_min && el <= self.el_max && angle_between(az, self.az_min, self.az_max)
    }
}

fn angle_between(a: f64, lo: f64, hi: f64) -> bool {
    use std::f64::consts::TAU;
    if hi - lo >= TAU {
        return true;
    }
    let shifted = (a - lo).rem_euclid(TAU);
    shifted <= hi - lo
}

pub fn direction(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}
