//! Spherical Hough detection of electrode-sized blobs inside the VOI shell.
//!
//! Gradient-direction voting: every edge voxel casts one integer vote per
//! radius at p +- r*ghat (both polarities), binned into a center accumulator
//! at voxel resolution. Integer votes plus a fixed tie-break (lower linear
//! voxel index wins) keep the output bit-identical across runs and worker
//! counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::volume::{Volume3D, WorldPoint};

/// World-space sphere hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereCandidate {
    pub center: WorldPoint,
    pub radius_mm: f64,
    pub score: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub r_min_mm: f64,
    pub r_max_mm: f64,
    pub r_step_mm: f64,
    pub grad_threshold_frac: f64,
    pub nms_min_dist_mm: f64,
    pub max_candidates: usize,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            r_min_mm: 3.0,
            r_max_mm: 9.0,
            r_step_mm: 1.0,
            grad_threshold_frac: 0.30,
            nms_min_dist_mm: 10.0,
            max_candidates: 200,
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min_mm > 0.0 && self.r_min_mm <= self.r_max_mm) {
            return Err(Error::InvalidParams(format!(
                "radius range [{}, {}] invalid",
                self.r_min_mm, self.r_max_mm
            )));
        }
        if self.r_step_mm <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "r_step_mm = {} (must be > 0)",
                self.r_step_mm
            )));
        }
        if !(self.grad_threshold_frac > 0.0 && self.grad_threshold_frac < 1.0) {
            return Err(Error::InvalidParams(format!(
                "grad_threshold_frac = {} (must be in (0, 1))",
                self.grad_threshold_frac
            )));
        }
        if self.nms_min_dist_mm <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "nms_min_dist_mm = {} (must be > 0)",
                self.nms_min_dist_mm
            )));
        }
        if self.max_candidates == 0 {
            return Err(Error::InvalidParams("max_candidates = 0".to_string()));
        }
        Ok(())
    }

    pub fn radius_ladder(&self) -> Vec<f64> {
        let mut radii = Vec::new();
        let mut r = self.r_min_mm;
        while r <= self.r_max_mm + 1e-9 {
            radii.push(r);
            r += self.r_step_mm;
        }
        radii
    }
}

/// Voting bookkeeping for the conservation invariant.
#[derive(Debug, Clone, Copy, Default)]
pub struct VoteStats {
    pub edge_voxels: usize,
    pub radius_count: usize,
    pub votes_in_grid: u64,
    pub votes_out_of_grid: u64,
}

/// Central differences scaled by 1/(2*spacing); one-sided at borders.
/// Units: intensity per mm, in voxel-axis directions.
#[inline]
fn gradient_at(vol: &Volume3D, i: usize, j: usize, k: usize) -> [f64; 3] {
    let (nx, ny, nz) = vol.dims();
    let (sx, sy, sz) = vol.spacing();
    let axis = |lo: f32, hi: f32, span: f64| (hi as f64 - lo as f64) / span;
    let gx = if i == 0 {
        axis(vol.at(0, j, k), vol.at(1, j, k), sx)
    } else if i == nx - 1 {
        axis(vol.at(nx - 2, j, k), vol.at(nx - 1, j, k), sx)
    } else {
        axis(vol.at(i - 1, j, k), vol.at(i + 1, j, k), 2.0 * sx)
    };
    let gy = if j == 0 {
        axis(vol.at(i, 0, k), vol.at(i, 1, k), sy)
    } else if j == ny - 1 {
        axis(vol.at(i, ny - 2, k), vol.at(i, ny - 1, k), sy)
    } else {
        axis(vol.at(i, j - 1, k), vol.at(i, j + 1, k), 2.0 * sy)
    };
    let gz = if k == 0 {
        axis(vol.at(i, j, 0), vol.at(i, j, 1), sz)
    } else if k == nz - 1 {
        axis(vol.at(i, j, nz - 2), vol.at(i, j, nz - 1), sz)
    } else {
        axis(vol.at(i, j, k - 1), vol.at(i, j, k + 1), 2.0 * sz)
    };
    [gx, gy, gz]
}

/// Full gradient field in mm^-1 units (one [gx, gy, gz] per voxel).
pub fn gradient(vol: &Volume3D) -> Result<Vec<[f32; 3]>> {
    let (nx, ny, nz) = vol.dims();
    if nx < 3 || ny < 3 || nz < 3 {
        return Err(Error::VolumeTooSmall(vol.dims()));
    }
    let mut out = vec![[0.0f32; 3]; vol.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let g = gradient_at(vol, i, j, k);
                slab[i + nx * j] = [g[0] as f32, g[1] as f32, g[2] as f32];
            }
        }
    });
    Ok(out)
}

/// Greedy score-descending suppression: a candidate is kept unless a retained
/// higher-score candidate lies within `min_dist_mm`.
pub fn non_max_suppression(candidates: &[SphereCandidate], min_dist_mm: f64) -> Result<Vec<SphereCandidate>> {
    if min_dist_mm <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "nms min_dist_mm = {min_dist_mm} (must be > 0)"
        )));
    }
    let mut sorted: Vec<SphereCandidate> = candidates.to_vec();
    sorted.sort_by(|a, b| b.score.cmp(&a.score));
    let mut kept: Vec<SphereCandidate> = Vec::new();
    for c in sorted {
        if kept
            .iter()
            .all(|k| k.center.distance(c.center) >= min_dist_mm)
        {
            kept.push(c);
        }
    }
    Ok(kept)
}

/// Detect sphere candidates in the UTE volume restricted to the VOI.
pub fn detect_spheres(
    ute: &Volume3D,
    voi: &BinaryMask,
    params: &HoughParams,
) -> Result<Vec<SphereCandidate>> {
    detect_spheres_with_stats(ute, voi, params).map(|(c, _)| c)
}

pub fn detect_spheres_with_stats(
    ute: &Volume3D,
    voi: &BinaryMask,
    params: &HoughParams,
) -> Result<(Vec<SphereCandidate>, VoteStats)> {
    params.validate()?;
    if !voi.same_geometry(ute.dims(), ute.affine()) {
        return Err(Error::GeometryMismatch(
            "UTE volume and VOI mask differ in dims or affine".to_string(),
        ));
    }
    if voi.is_empty() {
        return Err(Error::EmptyVoi);
    }
    let (nx, ny, nz) = ute.dims();
    if nx < 3 || ny < 3 || nz < 3 {
        return Err(Error::VolumeTooSmall(ute.dims()));
    }

    // edge voxels: VOI voxels at >= frac of the max gradient magnitude in VOI
    let voi_indices: Vec<usize> = voi
        .bits()
        .iter()
        .enumerate()
        .filter_map(|(idx, &b)| b.then_some(idx))
        .collect();
    let grads: Vec<(usize, [f64; 3], f64)> = voi_indices
        .par_iter()
        .map(|&idx| {
            let (i, j, k) = ute.unlinear(idx);
            let g = gradient_at(ute, i, j, k);
            let mag = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            (idx, g, mag)
        })
        .collect();
    let gmax = grads.iter().fold(0.0f64, |m, &(_, _, mag)| m.max(mag));
    if gmax == 0.0 {
        return Ok((Vec::new(), VoteStats::default()));
    }
    let thr = params.grad_threshold_frac * gmax;
    let edges: Vec<(usize, [f64; 3])> = grads
        .into_iter()
        .filter(|&(_, _, mag)| mag >= thr && mag > 0.0)
        .map(|(idx, g, mag)| (idx, [g[0] / mag, g[1] / mag, g[2] / mag]))
        .collect();

    let radii = params.radius_ladder();
    let n = nx * ny * nz;

    // parallel vote with per-chunk integer accumulators merged by addition
    let chunk = (edges.len() / rayon::current_num_threads().max(1)).max(1024);
    let (acc, out_of_grid) = edges
        .par_chunks(chunk)
        .map(|part| {
            let mut local = vec![0u32; n];
            let mut oog = 0u64;
            for &(idx, ghat) in part {
                let (i, j, k) = ute.unlinear(idx);
                let p = ute.voxel_to_world((i as f64, j as f64, k as f64));
                for &r in &radii {
                    for sign in [1.0, -1.0] {
                        let c = WorldPoint::new(
                            p.x + sign * r * ghat[0],
                            p.y + sign * r * ghat[1],
                            p.z + sign * r * ghat[2],
                        );
                        let (vi, vj, vk) = ute.world_to_voxel(c);
                        let (ri, rj, rk) =
                            (vi.round() as i64, vj.round() as i64, vk.round() as i64);
                        if ute.in_bounds(ri, rj, rk) {
                            local[ute.linear(ri as usize, rj as usize, rk as usize)] += 1;
                        } else {
                            oog += 1;
                        }
                    }
                }
            }
            (local, oog)
        })
        .reduce(
            || (vec![0u32; n], 0u64),
            |(mut a, oa), (b, ob)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                (a, oa + ob)
            },
        );

    let stats = VoteStats {
        edge_voxels: edges.len(),
        radius_count: radii.len(),
        votes_in_grid: acc.iter().map(|&v| v as u64).sum(),
        votes_out_of_grid: out_of_grid,
    };

    // 3^3 box smoothing, integer-preserving sum
    let smoothed = box_sum_3(&acc, (nx, ny, nz));

    // local maxima (26-neighborhood, >= neighbors, > 0)
    let mut maxima: Vec<(usize, u32)> = (0..n)
        .into_par_iter()
        .filter_map(|idx| {
            let v = smoothed[idx];
            if v == 0 {
                return None;
            }
            let (i, j, k) = ute.unlinear(idx);
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        if di == 0 && dj == 0 && dk == 0 {
                            continue;
                        }
                        let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if ute.in_bounds(ni, nj, nk)
                            && smoothed[ute.linear(ni as usize, nj as usize, nk as usize)] > v
                        {
                            return None;
                        }
                    }
                }
            }
            Some((idx, v))
        })
        .collect();
    maxima.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    // greedy NMS in world mm, truncated to max_candidates
    let mut kept: Vec<(usize, u32)> = Vec::new();
    let mut kept_world: Vec<WorldPoint> = Vec::new();
    for (idx, score) in maxima {
        let (i, j, k) = ute.unlinear(idx);
        let w = ute.voxel_to_world((i as f64, j as f64, k as f64));
        if kept_world
            .iter()
            .all(|p| p.distance(w) >= params.nms_min_dist_mm)
        {
            kept.push((idx, score));
            kept_world.push(w);
            if kept.len() >= params.max_candidates {
                break;
            }
        }
    }

    // per-candidate radius: argmax radius over votes landing in the 3^3 box
    // around the accepted center (ties to the smaller radius)
    let mut box_owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (ci, &(idx, _)) in kept.iter().enumerate() {
        let (i, j, k) = ute.unlinear(idx);
        for dk in -1i64..=1 {
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                    if ute.in_bounds(ni, nj, nk) {
                        box_owner
                            .entry(ute.linear(ni as usize, nj as usize, nk as usize))
                            .or_insert(ci);
                    }
                }
            }
        }
    }
    let mut radius_votes = vec![vec![0u64; radii.len()]; kept.len()];
    for &(idx, ghat) in &edges {
        let (i, j, k) = ute.unlinear(idx);
        let p = ute.voxel_to_world((i as f64, j as f64, k as f64));
        for (ri_idx, &r) in radii.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let c = WorldPoint::new(
                    p.x + sign * r * ghat[0],
                    p.y + sign * r * ghat[1],
                    p.z + sign * r * ghat[2],
                );
                let (vi, vj, vk) = ute.world_to_voxel(c);
                let (ci_, cj, ck) = (vi.round() as i64, vj.round() as i64, vk.round() as i64);
                if ute.in_bounds(ci_, cj, ck) {
                    if let Some(&owner) =
                        box_owner.get(&ute.linear(ci_ as usize, cj as usize, ck as usize))
                    {
                        radius_votes[owner][ri_idx] += 1;
                    }
                }
            }
        }
    }

    let candidates: Vec<SphereCandidate> = kept
        .iter()
        .enumerate()
        .map(|(ci, &(idx, score))| {
            let (i, j, k) = ute.unlinear(idx);
            let best_r = radius_votes[ci]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(ri_idx, _)| radii[ri_idx])
                .unwrap_or(radii[0]);
            SphereCandidate {
                center: ute.voxel_to_world((i as f64, j as f64, k as f64)),
                radius_mm: best_r,
                score,
            }
        })
        .collect();

    Ok((candidates, stats))
}

/// 3x3x3 box-filter sum with zero padding outside the grid.
fn box_sum_3(acc: &[u32], dims: (usize, usize, usize)) -> Vec<u32> {
    let (nx, ny, nz) = dims;
    let mut out = vec![0u32; acc.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let mut s = 0u32;
                for dk in -1i64..=1 {
                    let kk = k as i64 + dk;
                    if kk < 0 || kk >= nz as i64 {
                        continue;
                    }
                    for dj in -1i64..=1 {
                        let jj = j as i64 + dj;
                        if jj < 0 || jj >= ny as i64 {
                            continue;
                        }
                        for di in -1i64..=1 {
                            let ii = i as i64 + di;
                            if ii < 0 || ii >= nx as i64 {
                                continue;
                            }
                            s += acc[ii as usize + nx * (jj as usize + ny * kk as usize)];
                        }
                    }
                }
                slab[i + nx * j] = s;
            }
        }
    });
    out
}

/// Serialize candidates as `x_mm,y_mm,z_mm,radius_mm,score` CSV.
pub fn candidates_to_csv(candidates: &[SphereCandidate]) -> String {
    let mut s = String::from("x_mm,y_mm,z_mm,radius_mm,score\n");
    for c in candidates {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c.center.x, c.center.y, c.center.z, c.radius_mm, c.score
        ));
    }
    s
}
