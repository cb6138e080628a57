//! 3D scalar volumes with NIfTI-1 I/O and voxel/world geometry.
//!
//! Volumes carry a 4x4 voxel-index -> world-mm affine; every coordinate
//! handed to downstream modules is in world millimeters. Only uncompressed
//! single-file NIfTI-1 (348-byte little-endian header, magic `n+1\0`) is
//! supported; data is held as f32 internally regardless of on-disk dtype.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// A position in world millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        WorldPoint { x, y, z }
    }

    pub fn from_vec(v: Vector3<f64>) -> Self {
        WorldPoint::new(v.x, v.y, v.z)
    }

    pub fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn distance(self, other: WorldPoint) -> f64 {
        (self.to_vec() - other.to_vec()).norm()
    }
}

/// On-disk scalar type; data is widened to f32 in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    I16,
    F32,
}

impl Dtype {
    pub fn nifti_code(self) -> i16 {
        match self {
            Dtype::U8 => 2,
            Dtype::I16 => 4,
            Dtype::F32 => 16,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Dtype::U8 => 8,
            Dtype::I16 => 16,
            Dtype::F32 => 32,
        }
    }

    fn from_code(code: i16) -> Option<Dtype> {
        match code {
            2 => Some(Dtype::U8),
            4 => Some(Dtype::I16),
            16 => Some(Dtype::F32),
            _ => None,
        }
    }
}

/// Scalar voxel grid in x-fastest order with world geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: (usize, usize, usize),
    affine: Matrix4<f64>,
    inv_affine: Matrix4<f64>,
    data: Vec<f32>,
    dtype: Dtype,
}

impl Volume3D {
    pub fn new(
        dims: (usize, usize, usize),
        affine: Matrix4<f64>,
        data: Vec<f32>,
        dtype: Dtype,
    ) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::InvalidParams(format!("zero dimension: {dims:?}")));
        }
        if data.len() != n {
            return Err(Error::InvalidParams(format!(
                "data length {} != nx*ny*nz = {}",
                data.len(),
                n
            )));
        }
        let block: Matrix3<f64> = affine.fixed_view::<3, 3>(0, 0).into_owned();
        if block.determinant().abs() <= 1e-12 {
            return Err(Error::InvalidParams(
                "affine 3x3 block is singular".to_string(),
            ));
        }
        let inv_affine = affine
            .try_inverse()
            .ok_or_else(|| Error::InvalidParams("affine is not invertible".to_string()))?;
        Ok(Volume3D {
            dims,
            affine,
            inv_affine,
            data,
            dtype,
        })
    }

    /// Axis-aligned volume with the given spacing and zero origin.
    pub fn from_spacing(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        data: Vec<f32>,
        dtype: Dtype,
    ) -> Result<Self> {
        let mut affine = Matrix4::identity();
        affine[(0, 0)] = spacing.0;
        affine[(1, 1)] = spacing.1;
        affine[(2, 2)] = spacing.2;
        Volume3D::new(dims, affine, data, dtype)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// mm per voxel along each axis, derived from the affine column norms.
    pub fn spacing(&self) -> (f64, f64, f64) {
        (
            self.affine.fixed_view::<3, 1>(0, 0).norm(),
            self.affine.fixed_view::<3, 1>(0, 1).norm(),
            self.affine.fixed_view::<3, 1>(0, 2).norm(),
        )
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn unlinear(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.dims.0;
        let j = (idx / self.dims.0) % self.dims.1;
        let k = idx / (self.dims.0 * self.dims.1);
        (i, j, k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.linear(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.linear(i, j, k);
        self.data[idx] = v;
    }

    pub fn in_bounds(&self, i: i64, j: i64, k: i64) -> bool {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < self.dims.0
            && (j as usize) < self.dims.1
            && (k as usize) < self.dims.2
    }

    pub fn voxel_to_world(&self, index: (f64, f64, f64)) -> WorldPoint {
        let h = self.affine * Vector4::new(index.0, index.1, index.2, 1.0);
        WorldPoint::new(h.x, h.y, h.z)
    }

    pub fn world_to_voxel(&self, p: WorldPoint) -> (f64, f64, f64) {
        let h = self.inv_affine * Vector4::new(p.x, p.y, p.z, 1.0);
        (h.x, h.y, h.z)
    }

    /// Geometry (dims + affine) equality within `tol` per affine entry.
    pub fn same_geometry_as(&self, dims: (usize, usize, usize), affine: &Matrix4<f64>, tol: f64) -> bool {
        self.dims == dims
            && self
                .affine
                .iter()
                .zip(affine.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

// ---------------------------------------------------------------------------
// NIfTI-1 I/O

const HDR_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod off {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QUATERN_C: usize = 260;
    pub const QUATERN_D: usize = 264;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

fn rd_i16(buf: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([buf[at], buf[at + 1]])
}

fn rd_i32(buf: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

fn rd_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

fn wr_i16(buf: &mut [u8], at: usize, v: i16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn wr_i32(buf: &mut [u8], at: usize, v: i32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn wr_f32(buf: &mut [u8], at: usize, v: f32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

/// Read an uncompressed single-file NIfTI-1 volume.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let bytes = fs::read(path).map_err(|e| Error::IoFailure {
        path: pstr.clone(),
        source: e,
    })?;
    if bytes.len() < HDR_SIZE {
        return Err(Error::BadHeader {
            path: pstr,
            reason: format!("file too small for a NIfTI-1 header ({} bytes)", bytes.len()),
        });
    }
    let magic = &bytes[off::MAGIC..off::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(Error::BadMagic {
            path: pstr,
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    if rd_i32(&bytes, off::SIZEOF_HDR) != 348 {
        return Err(Error::BadHeader {
            path: pstr,
            reason: format!("sizeof_hdr = {} (expected 348)", rd_i32(&bytes, off::SIZEOF_HDR)),
        });
    }
    let ndim = rd_i16(&bytes, off::DIM);
    if ndim != 3 {
        return Err(Error::BadHeader {
            path: pstr,
            reason: format!("dim[0] = {ndim} (only 3D volumes supported)"),
        });
    }
    let nx = rd_i16(&bytes, off::DIM + 2);
    let ny = rd_i16(&bytes, off::DIM + 4);
    let nz = rd_i16(&bytes, off::DIM + 6);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(Error::BadHeader {
            path: pstr,
            reason: format!("non-positive dims ({nx}, {ny}, {nz})"),
        });
    }
    let dims = (nx as usize, ny as usize, nz as usize);
    let dtype_code = rd_i16(&bytes, off::DATATYPE);
    let dtype = Dtype::from_code(dtype_code).ok_or(Error::UnsupportedDatatype {
        path: pstr.clone(),
        code: dtype_code,
    })?;

    let affine = read_affine(&bytes);

    let n = dims.0 * dims.1 * dims.2;
    let vox_offset = rd_f32(&bytes, off::VOX_OFFSET) as usize;
    let bpv = (dtype.bitpix() / 8) as usize;
    let need = n * bpv;
    let avail = bytes.len().saturating_sub(vox_offset);
    if vox_offset < HDR_SIZE || avail < need {
        return Err(Error::TruncatedData {
            path: pstr,
            expected: need,
            found: avail,
        });
    }
    let raw = &bytes[vox_offset..vox_offset + need];
    let mut data: Vec<f32> = Vec::with_capacity(n);
    match dtype {
        Dtype::U8 => data.extend(raw.iter().map(|&b| b as f32)),
        Dtype::I16 => data.extend(
            raw.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32),
        ),
        Dtype::F32 => data.extend(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        ),
    }

    let slope = rd_f32(&bytes, off::SCL_SLOPE);
    let inter = rd_f32(&bytes, off::SCL_INTER);
    if slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    Volume3D::new(dims, affine, data, dtype).map_err(|e| Error::BadHeader {
        path: pstr,
        reason: e.to_string(),
    })
}

/// sform when sform_code > 0, else qform, else diagonal pixdim.
fn read_affine(bytes: &[u8]) -> Matrix4<f64> {
    let sform_code = rd_i16(bytes, off::SFORM_CODE);
    let qform_code = rd_i16(bytes, off::QFORM_CODE);
    let mut affine = Matrix4::identity();
    if sform_code > 0 {
        for r in 0..3 {
            for c in 0..4 {
                affine[(r, c)] = rd_f32(bytes, off::SROW_X + 16 * r + 4 * c) as f64;
            }
        }
    } else if qform_code > 0 {
        let b = rd_f32(bytes, off::QUATERN_B) as f64;
        let c = rd_f32(bytes, off::QUATERN_C) as f64;
        let d = rd_f32(bytes, off::QUATERN_D) as f64;
        let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
        let qfac = if rd_f32(bytes, off::PIXDIM) < 0.0 { -1.0 } else { 1.0 };
        let px = rd_f32(bytes, off::PIXDIM + 4) as f64;
        let py = rd_f32(bytes, off::PIXDIM + 8) as f64;
        let pz = rd_f32(bytes, off::PIXDIM + 12) as f64;
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        );
        for r in 0..3 {
            affine[(r, 0)] = rot[(r, 0)] * px;
            affine[(r, 1)] = rot[(r, 1)] * py;
            affine[(r, 2)] = rot[(r, 2)] * pz * qfac;
        }
        affine[(0, 3)] = rd_f32(bytes, off::QOFFSET_X) as f64;
        affine[(1, 3)] = rd_f32(bytes, off::QOFFSET_X + 4) as f64;
        affine[(2, 3)] = rd_f32(bytes, off::QOFFSET_X + 8) as f64;
    } else {
        affine[(0, 0)] = rd_f32(bytes, off::PIXDIM + 4) as f64;
        affine[(1, 1)] = rd_f32(bytes, off::PIXDIM + 8) as f64;
        affine[(2, 2)] = rd_f32(bytes, off::PIXDIM + 12) as f64;
    }
    affine
}

/// Write an uncompressed single-file NIfTI-1 volume (sform carries the affine).
pub fn write_nifti(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let (nx, ny, nz) = vol.dims();
    let (sx, sy, sz) = vol.spacing();

    let mut hdr = vec![0u8; VOX_OFFSET];
    wr_i32(&mut hdr, off::SIZEOF_HDR, 348);
    wr_i16(&mut hdr, off::DIM, 3);
    wr_i16(&mut hdr, off::DIM + 2, nx as i16);
    wr_i16(&mut hdr, off::DIM + 4, ny as i16);
    wr_i16(&mut hdr, off::DIM + 6, nz as i16);
    for d in 4..8 {
        wr_i16(&mut hdr, off::DIM + 2 * d, 1);
    }
    wr_i16(&mut hdr, off::DATATYPE, vol.dtype().nifti_code());
    wr_i16(&mut hdr, off::BITPIX, vol.dtype().bitpix());
    wr_f32(&mut hdr, off::PIXDIM, 1.0);
    wr_f32(&mut hdr, off::PIXDIM + 4, sx as f32);
    wr_f32(&mut hdr, off::PIXDIM + 8, sy as f32);
    wr_f32(&mut hdr, off::PIXDIM + 12, sz as f32);
    wr_f32(&mut hdr, off::VOX_OFFSET, VOX_OFFSET as f32);
    wr_f32(&mut hdr, off::SCL_SLOPE, 0.0);
    wr_f32(&mut hdr, off::SCL_INTER, 0.0);
    wr_i16(&mut hdr, off::QFORM_CODE, 0);
    wr_i16(&mut hdr, off::SFORM_CODE, 1);
    for r in 0..3 {
        for c in 0..4 {
            wr_f32(
                &mut hdr,
                off::SROW_X + 16 * r + 4 * c,
                vol.affine()[(r, c)] as f32,
            );
        }
    }
    hdr[off::MAGIC..off::MAGIC + 4].copy_from_slice(b"n+1\0");

    let mut body: Vec<u8> = Vec::with_capacity(vol.len() * 4);
    match vol.dtype() {
        Dtype::U8 => body.extend(vol.data().iter().map(|&v| v as u8)),
        Dtype::I16 => {
            for &v in vol.data() {
                body.extend_from_slice(&(v as i16).to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in vol.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    let mut f = fs::File::create(path).map_err(|e| Error::IoFailure {
        path: pstr.clone(),
        source: e,
    })?;
    f.write_all(&hdr).and_then(|_| f.write_all(&body)).map_err(|e| Error::IoFailure {
        path: pstr,
        source: e,
    })
}
