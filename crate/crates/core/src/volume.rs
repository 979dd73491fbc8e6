//! Dense 3D volume and mask types plus patch extraction/stitching.
//!
//! All grids are stored z-major with x fastest: the linear index of voxel
//! `(z, y, x)` in a `(nz, ny, nx)` grid is `(z * ny + y) * nx + x`. Every
//! file format and oracle in the crate assumes this one layout.

use crate::error::{Error, Result};

/// Voxel counts as `(nz, ny, nx)`.
pub type Dims = (usize, usize, usize);

/// Dense 3D scalar grid with physical voxel spacing in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    spacing: (f64, f64, f64),
    data: Vec<f32>,
}

impl Volume3 {
    /// Validates the invariants: data length `nz*ny*nx`, strictly positive
    /// spacing, all intensities finite.
    pub fn new(dims: Dims, spacing: (f64, f64, f64), data: Vec<f32>) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "volume data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
            return Err(Error::Parameter(format!(
                "voxel spacing must be strictly positive, got {:?}",
                spacing
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("volume data".into()));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: (f64, f64, f64), value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.0 * dims.1 * dims.2])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Dense 3D binary grid aligned to a [`Volume3`], one byte per voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask3 {
    dims: Dims,
    data: Vec<u8>,
}

impl BinaryMask3 {
    /// Validates that every value is exactly 0 or 1.
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "mask data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Parameter(format!(
                "mask values must be 0 or 1, found {bad}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: u8) {
        let i = self.index(z, y, x);
        self.data[i] = value;
    }

    /// Number of foreground voxels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// A sub-grid of a source volume together with its origin there.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch3 {
    pub shape: Dims,
    pub origin: Dims,
    pub intensities: Vec<f32>,
}

impl Patch3 {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape.1 + y) * self.shape.2 + x
    }
}

/// Origins along one axis: multiples of `stride` that fit, plus the final
/// edge-aligned origin `dim - shape` when it is not already a multiple, so
/// every voxel is covered.
fn axis_origins(dim: usize, shape: usize, stride: usize) -> Vec<usize> {
    let last = dim - shape;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if *origins.last().expect("at least origin 0") != last {
        origins.push(last);
    }
    origins
}

/// All patch origins for a volume, z-major lexicographic.
pub fn patch_origins(dims: Dims, shape: Dims, stride: Dims) -> Result<Vec<Dims>> {
    if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
        return Err(Error::Parameter("patch shape components must be >= 1".into()));
    }
    if stride.0 == 0 || stride.1 == 0 || stride.2 == 0 {
        return Err(Error::Parameter("stride components must be >= 1".into()));
    }
    // A stride larger than the patch leaves voxels between consecutive
    // origins that no edge alignment can cover, violating the coverage
    // guarantee.
    if stride.0 > shape.0 || stride.1 > shape.1 || stride.2 > shape.2 {
        return Err(Error::Parameter(format!(
            "stride {:?} exceeds patch shape {:?}; full coverage impossible",
            stride, shape
        )));
    }
    if shape.0 > dims.0 || shape.1 > dims.1 || shape.2 > dims.2 {
        return Err(Error::Dimension(format!(
            "patch shape {:?} exceeds volume dims {:?}",
            shape, dims
        )));
    }
    let zs = axis_origins(dims.0, shape.0, stride.0);
    let ys = axis_origins(dims.1, shape.1, stride.1);
    let xs = axis_origins(dims.2, shape.2, stride.2);
    let mut origins = Vec::with_capacity(zs.len() * ys.len() * xs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                origins.push((z, y, x));
            }
        }
    }
    Ok(origins)
}

/// Copies the patch at `origin` out of the volume.
pub fn copy_patch(volume: &Volume3, origin: Dims, shape: Dims) -> Patch3 {
    let mut intensities = Vec::with_capacity(shape.0 * shape.1 * shape.2);
    for z in 0..shape.0 {
        for y in 0..shape.1 {
            let row = volume.index(origin.0 + z, origin.1 + y, origin.2);
            intensities.extend_from_slice(&volume.data()[row..row + shape.2]);
        }
    }
    Patch3 {
        shape,
        origin,
        intensities,
    }
}

/// Extracts all patches at the given stride, edge-aligned so that every
/// voxel is covered by at least one patch. Ordering is deterministic
/// (origin lexicographic, z-major).
pub fn extract_patches(volume: &Volume3, shape: Dims, stride: Dims) -> Result<Vec<Patch3>> {
    let origins = patch_origins(volume.dims(), shape, stride)?;
    Ok(origins
        .into_iter()
        .map(|origin| copy_patch(volume, origin, shape))
        .collect())
}

/// Combines per-patch value grids back into a volume; each voxel becomes the
/// arithmetic mean of all patch values covering it (accumulated in patch
/// list order).
pub fn stitch_patches(
    patches: &[(Patch3, Vec<f32>)],
    dims: Dims,
    spacing: (f64, f64, f64),
) -> Result<Volume3> {
    let n = dims.0 * dims.1 * dims.2;
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (patch, values) in patches {
        if values.len() != patch.len() {
            return Err(Error::Dimension(format!(
                "value grid length {} does not match patch shape {:?}",
                values.len(),
                patch.shape
            )));
        }
        let (oz, oy, ox) = patch.origin;
        let (pz, py, px) = patch.shape;
        if oz + pz > dims.0 || oy + py > dims.1 || ox + px > dims.2 {
            return Err(Error::Dimension(format!(
                "patch at {:?} with shape {:?} does not fit in dims {:?}",
                patch.origin, patch.shape, dims
            )));
        }
        for z in 0..pz {
            for y in 0..py {
                let src = patch.index(z, y, 0);
                let dst = ((oz + z) * dims.1 + (oy + y)) * dims.2 + ox;
                for x in 0..px {
                    sum[dst + x] += f64::from(values[src + x]);
                    count[dst + x] += 1;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(n);
    for (i, (&s, &c)) in sum.iter().zip(&count).enumerate() {
        if c == 0 {
            let z = i / (dims.1 * dims.2);
            let y = (i / dims.2) % dims.1;
            let x = i % dims.2;
            return Err(Error::Coverage(z, y, x));
        }
        data.push((s / f64::from(c)) as f32);
    }
    Volume3::new(dims, spacing, data)
}
