use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PhantomError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MVOL";

/// Single-channel scalar volume, `D`-major (`W` fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    voxel_size: f64,
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], voxel_size: f64, voxels: Vec<f32>) -> Result<Self, PhantomError> {
        if dims.contains(&0) {
            return Err(PhantomError::Volume(format!("dims must be positive, got {dims:?}")));
        }
        let n = dims.iter().product::<usize>();
        if voxels.len() != n {
            return Err(PhantomError::Volume(format!(
                "dims {dims:?} need {n} voxels, got {}",
                voxels.len()
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(PhantomError::Volume("voxels must be finite".into()));
        }
        Ok(Self {
            dims,
            voxel_size,
            voxels,
        })
    }

    pub fn zeros(dims: [usize; 3], voxel_size: f64) -> Self {
        Self {
            dims,
            voxel_size,
            voxels: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.voxels[self.index(d, h, w)]
    }

    /// Voxels strictly above `threshold`.
    pub fn count_above(&self, threshold: f32) -> usize {
        self.voxels.iter().filter(|&&v| v > threshold).count()
    }

    /// `[1,1,D,H,W]` tensor view for the network.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let [d, h, w] = self.dims;
        Tensor::new(vec![1, 1, d, h, w], self.voxels.clone()).expect("dims match voxel count")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.voxels.len() * 4);
        for v in &self.voxels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    /// Reads an MVOL stream. The format carries no voxel size; callers
    /// supply it from the dataset metadata.
    pub fn read_from<R: Read>(mut r: R, voxel_size: f64) -> Result<Self, PhantomError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(PhantomError::Volume("missing MVOL magic".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let dims = [dim(0), dim(1), dim(2)];
        let n = dims.iter().product::<usize>();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let voxels = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dims, voxel_size, voxels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PhantomError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, voxel_size: f64) -> Result<Self, PhantomError> {
        Self::read_from(BufReader::new(File::open(path)?), voxel_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvol_round_trip_is_exact() {
        let v = Volume3D::new([2, 3, 4], 1.0, (0..24).map(|i| i as f32 * 0.1 - 0.7).collect()).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 24 * 4);
        assert_eq!(&buf[..4], b"MVOL");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(Volume3D::read_from(&buf[..], 1.0).unwrap(), v);
    }

    #[test]
    fn rejects_bad_streams() {
        assert!(Volume3D::read_from(&b"NOPE0000000000000000"[..], 1.0).is_err());
        let v = Volume3D::zeros([2, 2, 2], 1.0);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(Volume3D::read_from(&buf[..buf.len() - 1], 1.0).is_err());
    }

    #[test]
    fn d_major_indexing() {
        let v = Volume3D::new([2, 3, 4], 1.0, (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(v.get(1, 2, 3), 23.0);
        assert_eq!(v.get(1, 0, 0), 12.0);
        assert_eq!(v.get(0, 1, 0), 4.0);
    }
}
