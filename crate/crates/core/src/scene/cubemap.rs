use crate::error::{Error, Result};
use crate::geom::{UnitVec3, Vec3};

pub const CUBEMAP_DEFAULT_RESOLUTION: usize = 64;

/// HDR sky texture. Faces are ordered +X, -X, +Y, -Y, +Z, -Z; texels are
/// `[face][row][col][rgb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeMap {
    pub face_resolution: usize,
    pub texels: Vec<f32>,
}

/// A bilinear lookup: four flat texel offsets (start of the RGB triple) and
/// their weights.
pub(crate) type TexelWeights = [(usize, f64); 4];

impl CubeMap {
    pub fn constant(face_resolution: usize, rgb: Vec3) -> Self {
        let n = 6 * face_resolution * face_resolution;
        let texels = (0..n).flat_map(|_| [rgb.x as f32, rgb.y as f32, rgb.z as f32]).collect();
        CubeMap { face_resolution, texels }
    }

    /// Fills every texel from a function of its center direction.
    pub fn from_fn(face_resolution: usize, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let r = face_resolution;
        let mut texels = Vec::with_capacity(6 * r * r * 3);
        for face in 0..6 {
            for row in 0..r {
                for col in 0..r {
                    let u = (col as f64 + 0.5) / r as f64;
                    let v = (row as f64 + 0.5) / r as f64;
                    let c = f(&face_direction(face, u, v).normalize());
                    texels.extend([c.x as f32, c.y as f32, c.z as f32]);
                }
            }
        }
        CubeMap { face_resolution, texels }
    }

    pub fn texel_offset(&self, face: usize, row: usize, col: usize) -> usize {
        ((face * self.face_resolution + row) * self.face_resolution + col) * 3
    }

    pub fn texel(&self, face: usize, row: usize, col: usize) -> Vec3 {
        let o = self.texel_offset(face, row, col);
        Vec3::new(self.texels[o] as f64, self.texels[o + 1] as f64, self.texels[o + 2] as f64)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let r = self.face_resolution;
        if r == 0 || self.texels.len() != 6 * r * r * 3 {
            return Err(Error::InvalidScene(format!(
                "cubemap with face resolution {r} needs {} texel values, found {}",
                6 * r * r * 3,
                self.texels.len()
            )));
        }
        if self.texels.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidScene("cubemap texels must be non-negative".into()));
        }
        Ok(())
    }

    pub(crate) fn bilinear(&self, dir: &Vec3) -> TexelWeights {
        let (face, u, v) = face_coords(dir);
        let r = self.face_resolution;
        let axis = |c: f64| -> (usize, usize, f64) {
            if r == 1 {
                return (0, 0, 0.0);
            }
            let p = (c * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
            let i0 = (p.floor() as usize).min(r - 2);
            (i0, i0 + 1, p - i0 as f64)
        };
        let (c0, c1, fx) = axis(u);
        let (r0, r1, fy) = axis(v);
        [
            (self.texel_offset(face, r0, c0), (1.0 - fx) * (1.0 - fy)),
            (self.texel_offset(face, r0, c1), fx * (1.0 - fy)),
            (self.texel_offset(face, r1, c0), (1.0 - fx) * fy),
            (self.texel_offset(face, r1, c1), fx * fy),
        ]
    }

    pub fn sample(&self, dir: &Vec3) -> Vec3 {
        self.bilinear(dir)
            .iter()
            .map(|&(o, w)| {
                Vec3::new(self.texels[o] as f64, self.texels[o + 1] as f64, self.texels[o + 2] as f64) * w
            })
            .sum()
    }
}

pub fn sample_cubemap(sky: &CubeMap, dir: &UnitVec3) -> Vec3 {
    sky.sample(dir.as_ref())
}

/// Face index and `(u, v)` in `[0, 1]` using the usual cube-map convention.
fn face_coords(d: &Vec3) -> (usize, f64, f64) {
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    let (face, sc, tc, ma) = if ax >= ay && ax >= az {
        if d.x >= 0.0 {
            (0, -d.z, -d.y, ax)
        } else {
            (1, d.z, -d.y, ax)
        }
    } else if ay >= az {
        if d.y >= 0.0 {
            (2, d.x, d.z, ay)
        } else {
            (3, d.x, -d.z, ay)
        }
    } else if d.z >= 0.0 {
        (4, d.x, -d.y, az)
    } else {
        (5, -d.x, -d.y, az)
    };
    (face, 0.5 * (sc / ma + 1.0), 0.5 * (tc / ma + 1.0))
}

/// Inverse of [`face_coords`] (unnormalized direction).
fn face_direction(face: usize, u: f64, v: f64) -> Vec3 {
    let sc = 2.0 * u - 1.0;
    let tc = 2.0 * v - 1.0;
    match face {
        0 => Vec3::new(1.0, -tc, -sc),
        1 => Vec3::new(-1.0, -tc, sc),
        2 => Vec3::new(sc, 1.0, tc),
        3 => Vec3::new(sc, -1.0, -tc),
        4 => Vec3::new(sc, -tc, 1.0),
        _ => Vec3::new(-sc, -tc, -1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn face_round_trip() {
        for face in 0..6 {
            for &(u, v) in &[(0.1, 0.2), (0.5, 0.5), (0.9, 0.3)] {
                let (f, u2, v2) = face_coords(&face_direction(face, u, v));
                assert_eq!(f, face);
                assert!((u - u2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plus_z_face_constant() {
        let mut sky = CubeMap::constant(4, Vec3::zeros());
        for row in 0..4 {
            for col in 0..4 {
                let o = sky.texel_offset(4, row, col);
                sky.texels[o..o + 3].copy_from_slice(&[2.0, 3.0, 4.0]);
            }
        }
        assert_eq!(sky.sample(&Vec3::z()), Vec3::new(2.0, 3.0, 4.0));
    }

    #[test]
    fn constant_map_everywhere() {
        let sky = CubeMap::constant(5, Vec3::new(0.25, 0.5, 1.5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let s = sample_cubemap(&sky, &UnitVec3::new_normalize(d));
            assert!((s - Vec3::new(0.25, 0.5, 1.5)).norm() < 1e-7);
        }
    }

    #[test]
    fn diagonal_direction_blends_four_texels() {
        // +Z face, R = 4: dir (0.3, 0.3, 1) -> u = 0.65, v = 0.35,
        // texel coords (2.1, 0.9) -> cols 2,3 rows 0,1, fx = 0.1, fy = 0.9
        let mut sky = CubeMap::constant(4, Vec3::zeros());
        let vals = [((0, 2), 1.0), ((0, 3), 2.0), ((1, 2), 3.0), ((1, 3), 4.0)];
        for ((row, col), v) in vals {
            let o = sky.texel_offset(4, row, col);
            sky.texels[o] = v;
        }
        let got = sky.sample(&Vec3::new(0.3, 0.3, 1.0).normalize()).x;
        let expected = 1.0 * 0.9 * 0.1 + 2.0 * 0.1 * 0.1 + 3.0 * 0.9 * 0.9 + 4.0 * 0.1 * 0.9;
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn seams_are_continuous_for_smooth_maps() {
        let r = 16;
        let f = |d: &Vec3| Vec3::new(1.0 + d.x, 1.0 + 0.5 * d.y, 1.0 + d.z * d.x);
        let sky = CubeMap::from_fn(r, f);
        let texel_step = 2.0 / r as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            // a point on the x = z seam, nudged to either side
            let y: f64 = rng.gen_range(-0.9..0.9);
            let a = Vec3::new(1.0, y, 1.0 - 1e-9).normalize();
            let b = Vec3::new(1.0 - 1e-9, y, 1.0).normalize();
            let diff = (sky.sample(&a) - sky.sample(&b)).norm();
            assert!(diff < 3.0 * texel_step, "{diff}");
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let sky = CubeMap::constant(7, Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let s: f64 = sky.bilinear(&d).iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
