//! Array geometry and spherical-wave steering vectors.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CVector;

pub type Point = [f64; 3];

pub const SPEED_OF_SOUND: f64 = 343.0;

pub(crate) fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<Point>,
    reference_index: usize,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<Point>, reference_index: usize) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidScene("array needs at least two microphones".into()));
        }
        if reference_index >= positions.len() {
            return Err(Error::InvalidScene(format!(
                "reference index {reference_index} out of range for {} microphones",
                positions.len()
            )));
        }
        for i in 0..positions.len() {
            for j in 0..i {
                if distance(&positions[i], &positions[j]) < 1e-9 {
                    return Err(Error::InvalidScene(format!(
                        "microphones {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            positions,
            reference_index,
        })
    }

    /// Uniform linear array along x centred at `center`.
    pub fn uniform_linear(num_mics: usize, spacing: f64, center: Point) -> Result<Self> {
        let half = (num_mics as f64 - 1.0) / 2.0;
        let positions = (0..num_mics)
            .map(|i| [center[0] + (i as f64 - half) * spacing, center[1], center[2]])
            .collect();
        Self::new(positions, 0)
    }

    pub fn with_reference(mut self, reference_index: usize) -> Result<Self> {
        if reference_index >= self.positions.len() {
            return Err(Error::InvalidArgument(format!(
                "reference index {reference_index} out of range"
            )));
        }
        self.reference_index = reference_index;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn center(&self) -> Point {
        let n = self.positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for d in 0..3 {
                c[d] += p[d] / n;
            }
        }
        c
    }

    /// Unit vector from the first to the last microphone, projected on the horizontal plane.
    pub fn axis(&self) -> [f64; 3] {
        let a = self.positions[0];
        let b = self.positions[self.positions.len() - 1];
        normalize([b[0] - a[0], b[1] - a[1], 0.0])
    }

    /// Horizontal unit vector perpendicular to the axis; bearing 0 points along it.
    pub fn broadside(&self) -> [f64; 3] {
        let a = self.axis();
        [-a[1], a[0], 0.0]
    }

    /// Horizontal bearing of `p` in degrees, 0 at broadside, positive towards the array axis.
    pub fn bearing_deg(&self, p: &Point) -> f64 {
        let c = self.center();
        let d = [p[0] - c[0], p[1] - c[1], 0.0];
        dot(&d, &self.axis()).atan2(dot(&d, &self.broadside())).to_degrees()
    }

    /// Point in the array's horizontal plane at `bearing_deg` and `distance` from the centre.
    pub fn point_at(&self, bearing_deg: f64, distance: f64) -> Point {
        let c = self.center();
        let (s, co) = bearing_deg.to_radians().sin_cos();
        let a = self.axis();
        let b = self.broadside();
        [
            c[0] + distance * (s * a[0] + co * b[0]),
            c[1] + distance * (s * a[1] + co * b[1]),
            c[2],
        ]
    }

    fn distances(&self, source: &Point) -> Result<Vec<f64>> {
        self.positions
            .iter()
            .enumerate()
            .map(|(m, p)| {
                let r = distance(p, source);
                if r < 1e-9 {
                    Err(Error::ZeroDistance(m))
                } else {
                    Ok(r)
                }
            })
            .collect()
    }
}

/// Near-field steering vector normalised so the reference element is exactly 1:
/// element m is `(r_ref / r_m) exp(-j 2 pi f (r_m - r_ref) / c)`.
pub fn steering_vector(
    freq_hz: f64,
    source: &Point,
    array: &ArrayGeometry,
    speed_of_sound: f64,
) -> Result<CVector> {
    let r = array.distances(source)?;
    let r_ref = r[array.reference_index];
    let k = 2.0 * std::f64::consts::PI * freq_hz / speed_of_sound;
    Ok(CVector::from_iterator(
        r.len(),
        r.iter()
            .map(|&rm| Complex64::from_polar(r_ref / rm, -k * (rm - r_ref))),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pair() -> ArrayGeometry {
        ArrayGeometry::new(vec![[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]], 0).unwrap()
    }

    #[test]
    fn equidistant_source_gives_ones() {
        let a = pair();
        let v = steering_vector(1234.0, &[0.025, 1.0, 0.3], &a, SPEED_OF_SOUND).unwrap();
        for x in v.iter() {
            assert_abs_diff_eq!(x.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(x.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dc_gives_distance_ratios() {
        let a = pair();
        let s = [1.0, 0.5, 0.0];
        let v = steering_vector(0.0, &s, &a, SPEED_OF_SOUND).unwrap();
        let r0 = distance(&a.positions()[0], &s);
        let r1 = distance(&a.positions()[1], &s);
        assert_abs_diff_eq!(v[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1].re, r0 / r1, epsilon = 1e-15);
        assert_eq!(v[1].im, 0.0);
    }

    #[test]
    fn path_difference_phase_by_hand() {
        // source 1 m in front of mic 0, perpendicular to the pair
        let a = pair();
        let s = [0.0, 1.0, 0.0];
        let v = steering_vector(1000.0, &s, &a, SPEED_OF_SOUND).unwrap();
        let r1 = (1.0f64 + 0.05 * 0.05).sqrt();
        let dr = r1 - 1.0; // 1.2492e-3 m
        let phase = -2.0 * std::f64::consts::PI * 1000.0 * dr / 343.0;
        assert_abs_diff_eq!(v[1].arg(), phase, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].norm(), 1.0 / r1, epsilon = 1e-12);
        assert_abs_diff_eq!(phase, -0.022884, epsilon = 1e-6);
    }

    #[test]
    fn coincident_source_is_an_error() {
        let a = pair();
        assert!(matches!(
            steering_vector(100.0, &[0.05, 0.0, 0.0], &a, SPEED_OF_SOUND),
            Err(Error::ZeroDistance(1))
        ));
    }

    #[test]
    fn bearing_round_trip() {
        let a = ArrayGeometry::uniform_linear(8, 0.05, [3.0, 4.0, 1.3]).unwrap();
        for b in [-80.0, -30.0, 0.0, 12.5, 60.0] {
            let p = a.point_at(b, 1.3);
            assert_abs_diff_eq!(a.bearing_deg(&p), b, epsilon = 1e-9);
        }
    }

    #[test]
    fn duplicate_mics_rejected() {
        assert!(ArrayGeometry::new(vec![[0.0; 3], [0.0; 3]], 0).is_err());
        assert!(ArrayGeometry::new(vec![[0.0; 3]], 0).is_err());
    }
}
