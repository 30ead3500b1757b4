use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Random rigid and noise augmentation. Each transform fires independently
/// with its own probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub noise_prob: f64,
    pub noise_sigma: f64,
    pub translate_prob: f64,
    /// Per-axis shift bound in voxels.
    pub max_shift: u32,
    pub rotate_prob: f64,
    pub max_angle_deg: f64,
    pub interpolation: Interpolation,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_prob: 0.5,
            noise_sigma: 0.05,
            translate_prob: 0.5,
            max_shift: 3,
            rotate_prob: 0.5,
            max_angle_deg: 15.0,
            interpolation: Interpolation::Trilinear,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            noise_prob: 0.0,
            translate_prob: 0.0,
            rotate_prob: 0.0,
            ..Self::default()
        }
    }

    /// Full-resolution bounds: ±15 voxels, ±30°.
    pub fn paper() -> Self {
        Self {
            max_shift: 15,
            max_angle_deg: 30.0,
            ..Self::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.noise_prob <= 0.0 && self.translate_prob <= 0.0 && self.rotate_prob <= 0.0
    }
}

/// Rotation, then translation, then noise. Targets are never touched: the
/// caller keeps the sample's original target vector.
pub fn augment<R: Rng + ?Sized>(v: &Volume3D, cfg: &AugmentConfig, rng: &mut R) -> Volume3D {
    let mut out = v.clone();
    if cfg.rotate_prob > 0.0 && rng.random_bool(cfg.rotate_prob.min(1.0)) {
        let axis = loop {
            let a: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if n > 1e-6 {
                break a.map(|c| c / n);
            }
        };
        let angle = rng.random_range(-cfg.max_angle_deg..=cfg.max_angle_deg).to_radians();
        out = rotate(&out, axis, angle, cfg.interpolation);
    }
    if cfg.translate_prob > 0.0 && rng.random_bool(cfg.translate_prob.min(1.0)) {
        let t = cfg.max_shift as i32;
        let mut shift = [0; 3].map(|_: i32| rng.random_range(-t..=t));
        while shift != [0, 0, 0] && clips_foreground(&out, shift) {
            log::debug!("translation {shift:?} clips foreground; halving");
            shift = shift.map(|s| s / 2);
        }
        out = translate(&out, shift);
    }
    if cfg.noise_prob > 0.0 && rng.random_bool(cfg.noise_prob.min(1.0)) {
        add_noise(&mut out, cfg.noise_sigma, rng);
    }
    out
}

/// True if any nonzero voxel would leave the grid under `shift`.
pub fn clips_foreground(v: &Volume3D, shift: [i32; 3]) -> bool {
    let dims = v.dims();
    let [nd, nh, nw] = dims;
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                if v.get(d, h, w) == 0.0 {
                    continue;
                }
                let dst = [d as i64 + shift[0] as i64, h as i64 + shift[1] as i64, w as i64 + shift[2] as i64];
                if dst.iter().zip(dims).any(|(&c, n)| c < 0 || c >= n as i64) {
                    return true;
                }
            }
        }
    }
    false
}

/// Integer shift along `(D, H, W)`; vacated voxels are filled with 0.
pub fn translate(v: &Volume3D, shift: [i32; 3]) -> Volume3D {
    if shift == [0, 0, 0] {
        return v.clone();
    }
    let [nd, nh, nw] = v.dims();
    let mut out = Volume3D::zeros(v.dims(), v.voxel_size());
    for d in 0..nd {
        let sd = d as i64 - shift[0] as i64;
        if sd < 0 || sd >= nd as i64 {
            continue;
        }
        for h in 0..nh {
            let sh = h as i64 - shift[1] as i64;
            if sh < 0 || sh >= nh as i64 {
                continue;
            }
            for w in 0..nw {
                let sw = w as i64 - shift[2] as i64;
                if sw < 0 || sw >= nw as i64 {
                    continue;
                }
                let idx = out.index(d, h, w);
                out.voxels_mut()[idx] = v.get(sd as usize, sh as usize, sw as usize);
            }
        }
    }
    out
}

/// Rotation by `angle` radians about the unit `axis` (in `(D, H, W)` order)
/// through the volume centre, by inverse mapping. Samples outside the grid
/// read as 0.
pub fn rotate(v: &Volume3D, axis: [f64; 3], angle: f64, interp: Interpolation) -> Volume3D {
    let r = rotation_matrix(axis, angle);
    let dims = v.dims();
    let c = dims.map(|n| n as f64 / 2.0 - 0.5);
    let mut out = Volume3D::zeros(dims, v.voxel_size());
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                let p = [d as f64 - c[0], h as f64 - c[1], w as f64 - c[2]];
                // Inverse of a rotation is its transpose.
                let src: [f64; 3] =
                    std::array::from_fn(|i| r[0][i] * p[0] + r[1][i] * p[1] + r[2][i] * p[2] + c[i]);
                let val = match interp {
                    Interpolation::Trilinear => sample_trilinear(v, src),
                    Interpolation::Nearest => sample_nearest(v, src),
                };
                let idx = out.index(d, h, w);
                out.voxels_mut()[idx] = val;
            }
        }
    }
    out
}

pub fn add_noise<R: Rng + ?Sized>(v: &mut Volume3D, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for x in v.voxels_mut() {
        *x += normal.sample(rng) as f32;
    }
}

fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Coordinates within 1e-6 of a grid point are snapped, so exact grid
/// rotations reproduce voxels bit-for-bit.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-6 {
        r
    } else {
        x
    }
}

fn voxel_or_zero(v: &Volume3D, i: [i64; 3]) -> f32 {
    let dims = v.dims();
    if (0..3).any(|a| i[a] < 0 || i[a] >= dims[a] as i64) {
        return 0.0;
    }
    v.get(i[0] as usize, i[1] as usize, i[2] as usize)
}

fn sample_nearest(v: &Volume3D, p: [f64; 3]) -> f32 {
    voxel_or_zero(v, p.map(|x| x.round() as i64))
}

fn sample_trilinear(v: &Volume3D, p: [f64; 3]) -> f32 {
    let p = p.map(snap);
    let base = p.map(|x| x.floor());
    let f = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let b = base.map(|x| x as i64);
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let wgt: f64 = (0..3).map(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] }).product();
        if wgt == 0.0 {
            continue;
        }
        acc += wgt * voxel_or_zero(v, [b[0] + o[0] as i64, b[1] + o[1] as i64, b[2] + o[2] as i64]) as f64;
    }
    acc as f32
}
