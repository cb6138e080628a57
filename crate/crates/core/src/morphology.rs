//! Head-mask extraction and binary morphology on voxel grids.
//!
//! Structuring elements are spherical in world millimeters (anisotropy-aware
//! via the grid spacing); dilation and erosion are backed by an exact
//! separable squared Euclidean distance transform. Voxels outside the grid
//! count as background.

use nalgebra::Matrix4;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Dtype, Volume3D, WorldPoint};

/// Boolean voxel grid sharing geometry with the volume it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: (usize, usize, usize),
    affine: Matrix4<f64>,
    inv_affine: Matrix4<f64>,
    bits: Vec<bool>,
    count: usize,
}

impl BinaryMask {
    pub fn new(dims: (usize, usize, usize), affine: Matrix4<f64>, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::InvalidParams(format!(
                "mask bit count {} != nx*ny*nz for dims {:?}",
                bits.len(),
                dims
            )));
        }
        let inv_affine = affine
            .try_inverse()
            .ok_or_else(|| Error::InvalidParams("mask affine is not invertible".to_string()))?;
        let count = bits.iter().filter(|&&b| b).count();
        Ok(BinaryMask {
            dims,
            affine,
            inv_affine,
            bits,
            count,
        })
    }

    pub fn from_volume_geometry(vol: &Volume3D, bits: Vec<bool>) -> Result<Self> {
        BinaryMask::new(vol.dims(), *vol.affine(), bits)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        (
            self.affine.fixed_view::<3, 1>(0, 0).norm(),
            self.affine.fixed_view::<3, 1>(0, 1).norm(),
            self.affine.fixed_view::<3, 1>(0, 2).norm(),
        )
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn voxel_count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.linear(i, j, k)]
    }

    pub fn voxel_to_world(&self, index: (f64, f64, f64)) -> WorldPoint {
        let h = self.affine * nalgebra::Vector4::new(index.0, index.1, index.2, 1.0);
        WorldPoint::new(h.x, h.y, h.z)
    }

    pub fn world_to_voxel(&self, p: WorldPoint) -> (f64, f64, f64) {
        let h = self.inv_affine * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
        (h.x, h.y, h.z)
    }

    pub fn same_geometry(&self, other_dims: (usize, usize, usize), other_affine: &Matrix4<f64>) -> bool {
        self.dims == other_dims
            && self
                .affine
                .iter()
                .zip(other_affine.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-6)
    }

    /// Mask as a u8 (0/1) volume for NIfTI serialization.
    pub fn to_volume(&self) -> Volume3D {
        let data: Vec<f32> = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Volume3D::new(self.dims, self.affine, data, Dtype::U8).expect("mask geometry is valid")
    }

    pub fn from_volume(vol: &Volume3D) -> Result<Self> {
        let bits: Vec<bool> = vol.data().iter().map(|&v| v != 0.0).collect();
        BinaryMask::from_volume_geometry(vol, bits)
    }

    /// Nearest-neighbor resample onto another grid (shared world frame).
    pub fn resample_to(&self, dims: (usize, usize, usize), affine: &Matrix4<f64>) -> Result<Self> {
        let (nx, ny, nz) = dims;
        let mut bits = vec![false; nx * ny * nz];
        let target = BinaryMask::new(dims, *affine, bits.clone())?;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let w = target.voxel_to_world((i as f64, j as f64, k as f64));
                    let (vi, vj, vk) = self.world_to_voxel(w);
                    let (ri, rj, rk) = (vi.round() as i64, vj.round() as i64, vk.round() as i64);
                    if ri >= 0
                        && rj >= 0
                        && rk >= 0
                        && (ri as usize) < self.dims.0
                        && (rj as usize) < self.dims.1
                        && (rk as usize) < self.dims.2
                    {
                        bits[i + nx * (j + ny * k)] =
                            self.get(ri as usize, rj as usize, rk as usize);
                    }
                }
            }
        }
        BinaryMask::new(dims, *affine, bits)
    }
}

// ---------------------------------------------------------------------------
// Otsu threshold

/// Between-class-variance-maximizing threshold over a 256-bin histogram.
pub fn otsu_threshold(vol: &Volume3D) -> Result<f64> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in vol.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Err(Error::ConstantVolume(1));
    }
    const BINS: usize = 256;
    let scale = BINS as f64 / (hi as f64 - lo as f64);
    let mut hist = [0u64; BINS];
    for &v in vol.data() {
        let b = (((v as f64 - lo as f64) * scale) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = vol.len() as u64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| b as f64 * c as f64)
        .sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for b in 0..BINS - 1 {
        w0 += hist[b];
        sum0 += b as f64 * hist[b] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best.0 {
            best = (var, b);
        }
    }
    Ok(lo as f64 + (best.1 as f64 + 0.5) / scale)
}

// ---------------------------------------------------------------------------
// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher)

const INF: f64 = 1e30;

/// 1D squared-distance lower envelope; `w` is the sample spacing in mm.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64], w: f64) {
    let n = f.len();
    let w2 = w * w;
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64 * w2) - (f[p] + (p * p) as f64 * w2))
                / (2.0 * w2 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                let s = s.max(z[k]);
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = (q as f64 - p as f64) * w;
        d[q] = (dq * dq + f[p]).min(INF);
    }
}

/// Squared world-mm distance from every voxel to the nearest set voxel
/// (INF where the mask is empty along all axes).
pub fn edt_squared(bits: &[bool], dims: (usize, usize, usize), spacing: (f64, f64, f64)) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let mut dist: Vec<f64> = bits.iter().map(|&b| if b { 0.0 } else { INF }).collect();

    // x pass: rows are contiguous
    dist.par_chunks_mut(nx).for_each(|row| {
        let f: Vec<f64> = row.to_vec();
        let mut d = vec![0.0; nx];
        let mut v = vec![0usize; nx];
        let mut z = vec![0.0; nx + 1];
        edt_1d(&f, &mut d, &mut v, &mut z, spacing.0);
        row.copy_from_slice(&d);
    });

    // y pass
    let dist_y: Vec<f64> = {
        let src = &dist;
        let mut out = vec![0.0; nx * ny * nz];
        out.par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slab)| {
                let mut f = vec![0.0; ny];
                let mut d = vec![0.0; ny];
                let mut v = vec![0usize; ny];
                let mut z = vec![0.0; ny + 1];
                for i in 0..nx {
                    for j in 0..ny {
                        f[j] = src[i + nx * (j + ny * k)];
                    }
                    edt_1d(&f, &mut d, &mut v, &mut z, spacing.1);
                    for j in 0..ny {
                        slab[i + nx * j] = d[j];
                    }
                }
            });
        out
    };

    // z pass: per-j slabs laid out as (i fastest, then k), reordered after
    let mut slabs = vec![0.0; nx * ny * nz];
    slabs
        .par_chunks_mut(nx * nz)
        .enumerate()
        .for_each(|(j, slab)| {
            let mut f = vec![0.0; nz];
            let mut d = vec![0.0; nz];
            let mut v = vec![0usize; nz];
            let mut zb = vec![0.0; nz + 1];
            for i in 0..nx {
                for k in 0..nz {
                    f[k] = dist_y[i + nx * (j + ny * k)];
                }
                edt_1d(&f, &mut d, &mut v, &mut zb, spacing.2);
                for k in 0..nz {
                    slab[i + nx * k] = d[k];
                }
            }
        });
    let mut result = vec![0.0; nx * ny * nz];
    for j in 0..ny {
        for k in 0..nz {
            let src = &slabs[j * nx * nz + nx * k..j * nx * nz + nx * (k + 1)];
            result[nx * (j + ny * k)..nx * (j + ny * k) + nx].copy_from_slice(src);
        }
    }
    result
}

// ---------------------------------------------------------------------------
// Dilation / erosion

const RADIUS_EPS: f64 = 1e-9;

/// Voxels whose world distance to the input set is <= radius_mm.
pub fn dilate(mask: &BinaryMask, radius_mm: f64) -> Result<BinaryMask> {
    if radius_mm < 0.0 {
        return Err(Error::NegativeRadius(radius_mm));
    }
    if mask.is_empty() || radius_mm == 0.0 {
        return Ok(mask.clone());
    }
    let d2 = edt_squared(mask.bits(), mask.dims(), mask.spacing());
    let r2 = radius_mm * radius_mm * (1.0 + RADIUS_EPS) + RADIUS_EPS;
    let bits: Vec<bool> = d2.iter().map(|&d| d <= r2).collect();
    BinaryMask::new(mask.dims(), *mask.affine(), bits)
}

/// Voxels whose world distance to the background (grid exterior included)
/// exceeds radius_mm; dual of `dilate` on the complement.
pub fn erode(mask: &BinaryMask, radius_mm: f64) -> Result<BinaryMask> {
    if radius_mm < 0.0 {
        return Err(Error::NegativeRadius(radius_mm));
    }
    let (nx, ny, nz) = mask.dims();
    let (sx, sy, sz) = mask.spacing();
    let comp: Vec<bool> = mask.bits().iter().map(|&b| !b).collect();
    let d2 = edt_squared(&comp, mask.dims(), mask.spacing());
    let r2 = radius_mm * radius_mm * (1.0 + RADIUS_EPS) + RADIUS_EPS;
    let mut bits = vec![false; comp.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                if !mask.bits()[idx] {
                    continue;
                }
                // distance to virtual background just outside the grid
                let border = [
                    (i as f64 + 1.0) * sx,
                    (nx - i) as f64 * sx,
                    (j as f64 + 1.0) * sy,
                    (ny - j) as f64 * sy,
                    (k as f64 + 1.0) * sz,
                    (nz - k) as f64 * sz,
                ]
                .into_iter()
                .fold(f64::INFINITY, f64::min);
                let d = d2[idx].min(border * border);
                bits[idx] = d > r2;
            }
        }
    }
    BinaryMask::new(mask.dims(), *mask.affine(), bits)
}

// ---------------------------------------------------------------------------
// Connected components and hole filling

const NEIGHBORS_26: [(i64, i64, i64); 26] = {
    let mut arr = [(0i64, 0i64, 0i64); 26];
    let mut n = 0;
    let mut dk = -1i64;
    while dk <= 1 {
        let mut dj = -1i64;
        while dj <= 1 {
            let mut di = -1i64;
            while di <= 1 {
                if !(di == 0 && dj == 0 && dk == 0) {
                    arr[n] = (di, dj, dk);
                    n += 1;
                }
                di += 1;
            }
            dj += 1;
        }
        dk += 1;
    }
    arr
};

/// Keep only the largest 26-connected foreground component.
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    let (nx, ny, nz) = mask.dims();
    let bits = mask.bits();
    let mut label = vec![0u32; bits.len()];
    let mut next = 1u32;
    let mut sizes: Vec<usize> = vec![0];
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || label[start] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        let mut size = 0usize;
        stack.push(start);
        label[start] = id;
        while let Some(idx) = stack.pop() {
            size += 1;
            let i = (idx % nx) as i64;
            let j = ((idx / nx) % ny) as i64;
            let k = (idx / (nx * ny)) as i64;
            for (di, dj, dk) in NEIGHBORS_26 {
                let (ni, nj, nk) = (i + di, j + dj, k + dk);
                if ni < 0 || nj < 0 || nk < 0 {
                    continue;
                }
                let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                if ni >= nx || nj >= ny || nk >= nz {
                    continue;
                }
                let nidx = ni + nx * (nj + ny * nk);
                if bits[nidx] && label[nidx] == 0 {
                    label[nidx] = id;
                    stack.push(nidx);
                }
            }
        }
        sizes.push(size);
    }
    if next == 1 {
        return Err(Error::NoForeground);
    }
    let best = (1..next).max_by_key(|&id| sizes[id as usize]).unwrap();
    let out: Vec<bool> = label.iter().map(|&l| l == best).collect();
    BinaryMask::new(mask.dims(), *mask.affine(), out)
}

/// Fill background regions not reachable from the grid border (6-connectivity).
fn fill_holes_3d(bits: &mut [bool], dims: (usize, usize, usize)) {
    let (nx, ny, nz) = dims;
    let mut outside = vec![false; bits.len()];
    let mut stack: Vec<usize> = Vec::new();
    let seed = |i: usize, j: usize, k: usize, stack: &mut Vec<usize>, outside: &mut [bool]| {
        let idx = i + nx * (j + ny * k);
        if !bits[idx] && !outside[idx] {
            outside[idx] = true;
            stack.push(idx);
        }
    };
    for j in 0..ny {
        for i in 0..nx {
            seed(i, j, 0, &mut stack, &mut outside);
            seed(i, j, nz - 1, &mut stack, &mut outside);
        }
    }
    for k in 0..nz {
        for i in 0..nx {
            seed(i, 0, k, &mut stack, &mut outside);
            seed(i, ny - 1, k, &mut stack, &mut outside);
        }
        for j in 0..ny {
            seed(0, j, k, &mut stack, &mut outside);
            seed(nx - 1, j, k, &mut stack, &mut outside);
        }
    }
    while let Some(idx) = stack.pop() {
        let i = (idx % nx) as i64;
        let j = ((idx / nx) % ny) as i64;
        let k = (idx / (nx * ny)) as i64;
        for (di, dj, dk) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
            let (ni, nj, nk) = (i + di, j + dj, k + dk);
            if ni < 0 || nj < 0 || nk < 0 {
                continue;
            }
            let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
            if ni >= nx || nj >= ny || nk >= nz {
                continue;
            }
            let nidx = ni + nx * (nj + ny * nk);
            if !bits[nidx] && !outside[nidx] {
                outside[nidx] = true;
                stack.push(nidx);
            }
        }
    }
    for idx in 0..bits.len() {
        if !bits[idx] && !outside[idx] {
            bits[idx] = true;
        }
    }
}

/// Fill enclosed background per axial (z) slice, 4-connectivity.
fn fill_holes_slicewise(bits: &mut [bool], dims: (usize, usize, usize)) {
    let (nx, ny, nz) = dims;
    let slice_len = nx * ny;
    bits.par_chunks_mut(slice_len).for_each(|slice| {
        let mut outside = vec![false; slice_len];
        let mut stack: Vec<usize> = Vec::new();
        for i in 0..nx {
            for jj in [0, ny - 1] {
                let idx = i + nx * jj;
                if !slice[idx] && !outside[idx] {
                    outside[idx] = true;
                    stack.push(idx);
                }
            }
        }
        for j in 0..ny {
            for ii in [0, nx - 1] {
                let idx = ii + nx * j;
                if !slice[idx] && !outside[idx] {
                    outside[idx] = true;
                    stack.push(idx);
                }
            }
        }
        while let Some(idx) = stack.pop() {
            let i = (idx % nx) as i64;
            let j = (idx / nx) as i64;
            for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                    continue;
                }
                let nidx = ni as usize + nx * nj as usize;
                if !slice[nidx] && !outside[nidx] {
                    outside[nidx] = true;
                    stack.push(nidx);
                }
            }
        }
        for idx in 0..slice_len {
            if !slice[idx] && !outside[idx] {
                slice[idx] = true;
            }
        }
    });
    let _ = nz;
}

// ---------------------------------------------------------------------------
// Head mask and VOI shell

/// Otsu binarization, largest component, closing (2-voxel radius), hole fill.
pub fn extract_head_mask(t1: &Volume3D) -> Result<BinaryMask> {
    let thr = otsu_threshold(t1)?;
    let bits: Vec<bool> = t1.data().iter().map(|&v| v as f64 > thr).collect();
    if !bits.iter().any(|&b| b) {
        return Err(Error::NoForeground);
    }
    let mask = BinaryMask::from_volume_geometry(t1, bits)?;
    let mask = largest_component(&mask)?;
    let (sx, sy, sz) = mask.spacing();
    let close_r = 2.0 * sx.min(sy).min(sz);
    let mask = erode(&dilate(&mask, close_r)?, close_r)?;
    let mut bits = mask.bits().to_vec();
    fill_holes_slicewise(&mut bits, mask.dims());
    fill_holes_3d(&mut bits, mask.dims());
    BinaryMask::new(mask.dims(), *mask.affine(), bits)
}

/// Shell where scalp-mounted electrodes live:
/// dilate(head, outer) AND NOT erode(head, inner).
pub fn build_voi_shell(head: &BinaryMask, outer_margin_mm: f64, inner_margin_mm: f64) -> Result<BinaryMask> {
    if head.is_empty() {
        return Err(Error::EmptyHeadMask);
    }
    if outer_margin_mm < 0.0 {
        return Err(Error::NegativeRadius(outer_margin_mm));
    }
    if inner_margin_mm < 0.0 {
        return Err(Error::NegativeRadius(inner_margin_mm));
    }
    let outer = dilate(head, outer_margin_mm)?;
    let inner = erode(head, inner_margin_mm)?;
    let bits: Vec<bool> = outer
        .bits()
        .iter()
        .zip(inner.bits())
        .map(|(&o, &i)| o && !i)
        .collect();
    BinaryMask::new(head.dims(), *head.affine(), bits)
}
