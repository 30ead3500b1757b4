use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PhantomError, Volume3D};
use crate::measure::{MeasureKind, Measurement};

pub const N_BLOBS: usize = 4;
pub const N_QUADRANTS: usize = 4;

/// The twelve phantom measurements in manifest column order.
pub fn phantom_measurements() -> Vec<Measurement> {
    let mut out = Vec::with_capacity(N_BLOBS + 2 * N_QUADRANTS);
    out.extend((0..N_BLOBS).map(|i| Measurement::new(MeasureKind::Volume, &format!("blob{i}"))));
    out.extend((0..N_QUADRANTS).map(|q| Measurement::new(MeasureKind::Thickness, &format!("q{q}"))));
    out.extend((0..N_QUADRANTS).map(|q| Measurement::new(MeasureKind::Curvature, &format!("q{q}"))));
    out
}

pub fn sphere_volume(r: f64) -> f64 {
    4.0 / 3.0 * PI * r * r * r
}

/// Measurement values paired with their names, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetVector {
    measurements: Vec<Measurement>,
    values: Vec<f64>,
}

impl TargetVector {
    pub fn new(measurements: Vec<Measurement>, values: Vec<f64>) -> Result<Self, PhantomError> {
        if measurements.len() != values.len() {
            return Err(PhantomError::Targets(format!(
                "{} measurements but {} values",
                measurements.len(),
                values.len()
            )));
        }
        Ok(Self { measurements, values })
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.measurements
            .iter()
            .position(|m| m.name == name)
            .map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A labelled region of the phantom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Blob(usize),
    Quadrant(usize),
}

/// Quadrant index from the signs of the in-plane coordinates:
/// 0 = (+x,+y), 1 = (−x,+y), 2 = (−x,−y), 3 = (+x,−y).
pub fn quadrant_of(x: f64, y: f64) -> usize {
    match (x >= 0.0, y >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

/// Geometry and appearance of one phantom.
///
/// The shell's inner surface sits at `r_mid - thickness/2` for every
/// quadrant; quadrant `q` extends outward by `thickness * multipliers[q]`.
/// Coordinates are in mm relative to the volume centre, ordered `(z, y, x)`
/// to match the `D, H, W` axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub r_mid: f64,
    pub thickness: f64,
    pub multipliers: [f64; N_QUADRANTS],
    pub blob_centers: [[f64; 3]; N_BLOBS],
    pub blob_radii: [f64; N_BLOBS],
    pub blob_intensity: [f32; N_BLOBS],
    pub quadrant_intensity: [f32; N_QUADRANTS],
    pub supersample: usize,
}

impl PhantomParams {
    pub fn r_inner(&self) -> f64 {
        self.r_mid - self.thickness / 2.0
    }

    pub fn quadrant_thickness(&self, q: usize) -> f64 {
        self.thickness * self.multipliers[q]
    }

    /// Radius of quadrant `q`'s mid-surface.
    pub fn quadrant_mid_radius(&self, q: usize) -> f64 {
        self.r_inner() + self.quadrant_thickness(q) / 2.0
    }

    pub fn r_outer_max(&self) -> f64 {
        (0..N_QUADRANTS)
            .map(|q| self.r_inner() + self.quadrant_thickness(q))
            .fold(0.0, f64::max)
    }

    fn blob_extent(&self) -> f64 {
        (0..N_BLOBS)
            .map(|i| norm(self.blob_centers[i]) + self.blob_radii[i])
            .fold(0.0, f64::max)
    }

    /// Containment and sanity checks; run before any rendering.
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |msg: String| Err(PhantomError::Containment(msg));
        if self.dims.contains(&0) || !(self.voxel_size > 0.0) || self.supersample == 0 {
            return bad(format!(
                "dims {:?}, voxel size {} and supersampling {} must be positive",
                self.dims, self.voxel_size, self.supersample
            ));
        }
        if !(self.thickness > 0.0) || self.multipliers.iter().any(|&m| !(m > 0.0)) {
            return bad("shell thicknesses must be positive".into());
        }
        if self.blob_radii.iter().any(|&r| !(r > 0.0)) {
            return bad("blob radii must be positive".into());
        }
        let levels = self.blob_intensity.iter().chain(&self.quadrant_intensity);
        if levels.into_iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return bad("intensities must lie in [0, 1]".into());
        }
        let extent = self.blob_extent();
        if self.r_inner() <= extent {
            return bad(format!(
                "shell inner radius {:.3} mm does not clear the blobs (extent {extent:.3} mm)",
                self.r_inner()
            ));
        }
        for i in 0..N_BLOBS {
            for j in i + 1..N_BLOBS {
                let c = sub(self.blob_centers[i], self.blob_centers[j]);
                if norm(c) < self.blob_radii[i] + self.blob_radii[j] {
                    return bad(format!("blobs {i} and {j} overlap"));
                }
            }
        }
        let half = self.dims.iter().map(|&d| d as f64 * self.voxel_size / 2.0).fold(f64::INFINITY, f64::min);
        let margin = half - self.r_outer_max();
        if margin < 2.0 * self.voxel_size - 1e-9 {
            return bad(format!(
                "shell outer radius {:.3} mm leaves a {margin:.3} mm margin, need two voxels",
                self.r_outer_max()
            ));
        }
        Ok(())
    }

    /// Analytic targets in [`phantom_measurements`] order.
    pub fn targets(&self) -> TargetVector {
        let mut values = Vec::with_capacity(N_BLOBS + 2 * N_QUADRANTS);
        values.extend(self.blob_radii.iter().map(|&r| sphere_volume(r)));
        values.extend((0..N_QUADRANTS).map(|q| self.quadrant_thickness(q)));
        values.extend((0..N_QUADRANTS).map(|q| 1.0 / self.quadrant_mid_radius(q)));
        TargetVector::new(phantom_measurements(), values).expect("fixed layout")
    }

    /// Which structure contains the point `p = (z, y, x)` in mm.
    pub fn structure_at(&self, p: [f64; 3]) -> Option<Structure> {
        for i in 0..N_BLOBS {
            let d = sub(p, self.blob_centers[i]);
            if dot(d, d) <= self.blob_radii[i] * self.blob_radii[i] {
                return Some(Structure::Blob(i));
            }
        }
        let r = norm(p);
        let r_in = self.r_inner();
        if r < r_in {
            return None;
        }
        let q = quadrant_of(p[2], p[1]);
        (r <= r_in + self.quadrant_thickness(q)).then_some(Structure::Quadrant(q))
    }

    pub fn intensity(&self, s: Structure) -> f32 {
        match s {
            Structure::Blob(i) => self.blob_intensity[i],
            Structure::Quadrant(q) => self.quadrant_intensity[q],
        }
    }

    /// Supersampled rendering: each voxel averages `value` over an `s³`
    /// grid of sub-voxel points.
    pub fn render_with(&self, value: impl Fn(Structure) -> f32) -> Volume3D {
        let s = self.supersample;
        let vs = self.voxel_size;
        let mut vol = Volume3D::zeros(self.dims, vs);
        let offsets: Vec<f64> = (0..s).map(|a| ((a as f64 + 0.5) / s as f64 - 0.5) * vs).collect();
        let centre: Vec<f64> = self.dims.iter().map(|&d| d as f64 * vs / 2.0).collect();
        let half_diag = vs * 3f64.sqrt() / 2.0;
        let r_out = self.r_outer_max() + half_diag;
        let r_hollow = self.r_inner() - half_diag;
        let blob_reach: Vec<f64> = self.blob_radii.iter().map(|r| r + half_diag).collect();
        let norm_f = 1.0 / (s * s * s) as f64;

        let [nd, nh, nw] = self.dims;
        for d in 0..nd {
            let z = (d as f64 + 0.5) * vs - centre[0];
            for h in 0..nh {
                let y = (h as f64 + 0.5) * vs - centre[1];
                for w in 0..nw {
                    let x = (w as f64 + 0.5) * vs - centre[2];
                    let c = [z, y, x];
                    let r = norm(c);
                    if r > r_out {
                        continue;
                    }
                    if r < r_hollow
                        && (0..N_BLOBS).all(|i| norm(sub(c, self.blob_centers[i])) > blob_reach[i])
                    {
                        continue;
                    }
                    let mut acc = 0.0f64;
                    for &oz in &offsets {
                        for &oy in &offsets {
                            for &ox in &offsets {
                                if let Some(st) = self.structure_at([z + oz, y + oy, x + ox]) {
                                    acc += value(st) as f64;
                                }
                            }
                        }
                    }
                    let idx = vol.index(d, h, w);
                    vol.voxels_mut()[idx] = (acc * norm_f) as f32;
                }
            }
        }
        vol
    }

    pub fn render(&self) -> Volume3D {
        self.render_with(|s| self.intensity(s))
    }
}

/// Sampling ranges for phantom parameters. Lengths are in mm for a 32³
/// grid of 1 mm voxels and are scaled with the field of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomRanges {
    pub r_mid: (f64, f64),
    pub thickness: (f64, f64),
    pub multiplier: (f64, f64),
    pub blob_radius: (f64, f64),
    /// Distance of each blob centre from the volume centre.
    pub blob_offset: f64,
    /// Relative half-width of the per-scan parameter jitter.
    pub scan_jitter: f64,
    pub blob_intensity: [f32; N_BLOBS],
    pub quadrant_intensity: [f32; N_QUADRANTS],
    pub supersample: usize,
}

impl Default for PhantomRanges {
    fn default() -> Self {
        Self {
            r_mid: (8.0, 9.8),
            thickness: (1.6, 2.4),
            multiplier: (0.8, 1.25),
            blob_radius: (1.6, 2.7),
            blob_offset: 3.4,
            scan_jitter: 0.005,
            blob_intensity: [0.65, 0.75, 0.85, 0.95],
            quadrant_intensity: [0.25, 0.35, 0.45, 0.55],
            supersample: 4,
        }
    }
}

/// Blob centre directions: alternate corners of a cube, so the four blobs
/// are mutually equidistant.
const TETRAHEDRON: [[f64; 3]; N_BLOBS] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];

impl PhantomRanges {
    /// Length scale relative to the 32 mm reference field of view.
    fn scale(dims: [usize; 3], voxel_size: f64) -> f64 {
        dims.iter().copied().min().unwrap_or(0) as f64 * voxel_size / 32.0
    }

    /// Draws subject-level parameters.
    pub fn sample<R: Rng + ?Sized>(&self, dims: [usize; 3], voxel_size: f64, rng: &mut R) -> PhantomParams {
        let k = Self::scale(dims, voxel_size);
        let mut u = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        let r_mid = k * u(self.r_mid);
        let thickness = k * u(self.thickness);
        let multipliers = [u(self.multiplier), u(self.multiplier), u(self.multiplier), u(self.multiplier)];
        let blob_radii = [
            k * u(self.blob_radius),
            k * u(self.blob_radius),
            k * u(self.blob_radius),
            k * u(self.blob_radius),
        ];
        let off = k * self.blob_offset / 3f64.sqrt();
        let blob_centers = TETRAHEDRON.map(|d| d.map(|c| c * off));
        PhantomParams {
            dims,
            voxel_size,
            r_mid,
            thickness,
            multipliers,
            blob_centers,
            blob_radii,
            blob_intensity: self.blob_intensity,
            quadrant_intensity: self.quadrant_intensity,
            supersample: self.supersample,
        }
    }

    /// A re-scan of the same subject: shape parameters perturbed by at most
    /// `scan_jitter` relative.
    pub fn jitter<R: Rng + ?Sized>(&self, base: &PhantomParams, rng: &mut R) -> PhantomParams {
        let j = self.scan_jitter;
        let mut f = || if j > 0.0 { 1.0 + rng.random_range(-j..=j) } else { 1.0 };
        let mut p = base.clone();
        p.r_mid *= f();
        p.thickness *= f();
        for m in &mut p.multipliers {
            *m *= f();
        }
        for r in &mut p.blob_radii {
            *r *= f();
        }
        p
    }
}

/// Renders a validated phantom and its analytic targets.
pub fn generate_phantom(params: &PhantomParams) -> Result<(Volume3D, TargetVector), PhantomError> {
    params.validate()?;
    Ok((params.render(), params.targets()))
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
