//! Small 3-vector helpers. Coordinates are in Å throughout.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Point = [f64; 3];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    dist2(a, b).sqrt()
}

/// Arithmetic mean; the origin for an empty slice.
pub fn centroid(points: &[Point]) -> Point {
    if points.is_empty() {
        return [0.0; 3];
    }
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / points.len() as f64)
}

pub fn translate(points: &mut [Point], t: Point) {
    for p in points {
        *p = add(*p, t);
    }
}

/// Rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point,
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_axis_angle(axis: Point, angle: f64, translation: Point) -> Self {
        let axis = Unit::new_normalize(Vector3::new(axis[0], axis[1], axis[2]));
        let r = Rotation3::from_axis_angle(&axis, angle);
        let m = r.matrix();
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        Self {
            rotation,
            translation,
        }
    }

    /// Random axis-angle rotation plus a Gaussian translation of scale `t_scale`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, t_scale: f64) -> Self {
        let axis = random_unit(rng);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let n: Point = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let t = scale(n, t_scale);
        Self::from_axis_angle(axis, angle, t)
    }

    #[inline]
    pub fn rotate(&self, p: Point) -> Point {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        add(self.rotate(p), self.translation)
    }

    pub fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|&p| self.apply(p)).collect()
    }
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Point {
    loop {
        let v: Point = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = norm(v);
        if n > 1e-9 {
            return scale(v, 1.0 / n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_motion_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = RigidMotion::random(&mut rng, 5.0);
        let a = [1.0, 2.0, 3.0];
        let b = [-0.5, 4.0, 0.25];
        approx::assert_relative_eq!(dist(a, b), dist(m.apply(a), m.apply(b)), epsilon = 1e-12);
    }

    #[test]
    fn centroid_of_pair() {
        assert_eq!(centroid(&[[0.0; 3], [2.0, 0.0, 4.0]]), [1.0, 0.0, 2.0]);
    }
}
