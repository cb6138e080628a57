//! Synthetic T1/UTE phantom generation with exact ground truth.
//!
//! The head is an axis-aligned ellipsoid; electrodes are solid spheres whose
//! centers sit exactly on the ellipsoid surface at the template directions.
//! T1 contains no electrode contrast (electrodes are invisible at the T1
//! echo), UTE contains head + bright electrodes. Gaussian noise is seeded.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::{ElectrodeTemplate, FIDUCIAL_NAMES};
use crate::volume::{Dtype, Volume3D, WorldPoint};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f64, f64, f64),
    pub head_center_mm: (f64, f64, f64),
    pub head_semi_axes_mm: (f64, f64, f64),
    pub electrode_radius_mm: f64,
    pub t1_background: f32,
    pub t1_head: f32,
    pub ute_background: f32,
    pub ute_head: f32,
    pub ute_electrode: f32,
    pub t1_noise_sigma: f32,
    pub ute_noise_sigma: f32,
    /// Tangential jitter (mm, Gaussian sigma) applied to each electrode
    /// before re-projection onto the surface. Models cap placement variance.
    pub cap_perturbation_mm: f64,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: (212, 252, 200),
            spacing_mm: (1.0, 1.0, 1.0),
            head_center_mm: (106.0, 126.0, 100.0),
            head_semi_axes_mm: (84.0, 88.0, 80.0),
            electrode_radius_mm: 4.0,
            t1_background: 20.0,
            t1_head: 120.0,
            ute_background: 20.0,
            ute_head: 100.0,
            ute_electrode: 1000.0,
            t1_noise_sigma: 5.0,
            ute_noise_sigma: 50.0,
            cap_perturbation_mm: 0.0,
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.head_semi_axes_mm;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidParams("non-positive head semi-axis".to_string()));
        }
        if self.electrode_radius_mm <= 0.0 {
            return Err(Error::InvalidParams("non-positive electrode radius".to_string()));
        }
        if self.t1_noise_sigma < 0.0 || self.ute_noise_sigma < 0.0 {
            return Err(Error::InvalidParams("negative noise sigma".to_string()));
        }
        let (nx, ny, nz) = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidParams("empty phantom dims".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub t1: Volume3D,
    pub ute: Volume3D,
    /// Exact electrode centers, one per template channel, template order.
    pub truth: Vec<(String, WorldPoint)>,
    /// Surface fiducial positions in [`FIDUCIAL_NAMES`] order.
    pub fiducials: Vec<(String, WorldPoint)>,
}

/// Project a direction from the head center onto the ellipsoid surface.
fn surface_point(center: Vector3<f64>, semi: Vector3<f64>, dir: Vector3<f64>) -> Vector3<f64> {
    let t = 1.0
        / ((dir.x / semi.x).powi(2) + (dir.y / semi.y).powi(2) + (dir.z / semi.z).powi(2)).sqrt();
    center + dir * t
}

pub fn generate_phantom(spec: &PhantomSpec, template: &ElectrodeTemplate) -> Result<Phantom> {
    spec.validate()?;
    let center = Vector3::new(
        spec.head_center_mm.0,
        spec.head_center_mm.1,
        spec.head_center_mm.2,
    );
    let semi = Vector3::new(
        spec.head_semi_axes_mm.0,
        spec.head_semi_axes_mm.1,
        spec.head_semi_axes_mm.2,
    );
    let mut rng = ChaCha12Rng::seed_from_u64(spec.rng_seed);

    // Electrode centers: template unit directions projected to the surface,
    // optionally jittered tangentially and re-projected.
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(template.len());
    for ch in template.channels() {
        let mut p = surface_point(center, semi, ch.unit_pos);
        if spec.cap_perturbation_mm > 0.0 {
            let n = Normal::new(0.0, spec.cap_perturbation_mm).unwrap();
            let jitter = Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
            let radial = (p - center).normalize();
            let tangential = jitter - radial * jitter.dot(&radial);
            p = surface_point(center, semi, p + tangential - center);
        }
        centers.push(p);
    }
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            let d = (centers[i] - centers[j]).norm();
            if d < 2.0 * spec.electrode_radius_mm {
                return Err(Error::ElectrodeOverlap {
                    a: template.channels()[i].label.clone(),
                    b: template.channels()[j].label.clone(),
                    dist: d,
                    min: 2.0 * spec.electrode_radius_mm,
                });
            }
        }
    }

    let (nx, ny, nz) = spec.dims;
    let (sx, sy, sz) = spec.spacing_mm;
    let n = nx * ny * nz;
    let mut t1 = vec![spec.t1_background; n];
    let mut ute = vec![spec.ute_background; n];

    // Head ellipsoid.
    for k in 0..nz {
        let dz = (k as f64 * sz - center.z) / semi.z;
        for j in 0..ny {
            let dy = (j as f64 * sy - center.y) / semi.y;
            for i in 0..nx {
                let dx = (i as f64 * sx - center.x) / semi.x;
                if dx * dx + dy * dy + dz * dz <= 1.0 {
                    let idx = i + nx * (j + ny * k);
                    t1[idx] = spec.t1_head;
                    ute[idx] = spec.ute_head;
                }
            }
        }
    }

    // Electrodes: UTE only.
    let r = spec.electrode_radius_mm;
    let r2 = r * r;
    for c in &centers {
        let i0 = ((c.x - r) / sx).floor().max(0.0) as usize;
        let i1 = (((c.x + r) / sx).ceil() as usize).min(nx - 1);
        let j0 = ((c.y - r) / sy).floor().max(0.0) as usize;
        let j1 = (((c.y + r) / sy).ceil() as usize).min(ny - 1);
        let k0 = ((c.z - r) / sz).floor().max(0.0) as usize;
        let k1 = (((c.z + r) / sz).ceil() as usize).min(nz - 1);
        for k in k0..=k1 {
            let dz = k as f64 * sz - c.z;
            for j in j0..=j1 {
                let dy = j as f64 * sy - c.y;
                for i in i0..=i1 {
                    let dx = i as f64 * sx - c.x;
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        ute[i + nx * (j + ny * k)] = spec.ute_electrode;
                    }
                }
            }
        }
    }

    if spec.t1_noise_sigma > 0.0 {
        let nrm = Normal::new(0.0f32, spec.t1_noise_sigma).unwrap();
        for v in t1.iter_mut() {
            *v += nrm.sample(&mut rng);
        }
    }
    if spec.ute_noise_sigma > 0.0 {
        let nrm = Normal::new(0.0f32, spec.ute_noise_sigma).unwrap();
        for v in ute.iter_mut() {
            *v += nrm.sample(&mut rng);
        }
    }

    let t1 = Volume3D::from_spacing(spec.dims, spec.spacing_mm, t1, Dtype::F32)?;
    let ute = Volume3D::from_spacing(spec.dims, spec.spacing_mm, ute, Dtype::F32)?;

    let truth = template
        .channels()
        .iter()
        .zip(&centers)
        .map(|(ch, c)| (ch.label.clone(), WorldPoint::from_vec(*c)))
        .collect();
    let fiducials = FIDUCIAL_NAMES
        .iter()
        .map(|name| {
            let dir = template.fiducial(name).expect("default fiducials present");
            (
                name.to_string(),
                WorldPoint::from_vec(surface_point(center, semi, dir)),
            )
        })
        .collect();

    Ok(Phantom {
        t1,
        ute,
        truth,
        fiducials,
    })
}

/// Add isotropic Gaussian noise (sigma mm per axis) to ground-truth points.
/// Models a manual/fiducial measurement with known error statistics.
pub fn perturb_points(
    points: &[(String, WorldPoint)],
    sigma_mm: f64,
    seed: u64,
) -> Vec<(String, WorldPoint)> {
    if sigma_mm <= 0.0 {
        return points.to_vec();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma_mm).unwrap();
    points
        .iter()
        .map(|(label, p)| {
            (
                label.clone(),
                WorldPoint::new(
                    p.x + n.sample(&mut rng),
                    p.y + n.sample(&mut rng),
                    p.z + n.sample(&mut rng),
                ),
            )
        })
        .collect()
}

/// Write ground-truth (or any labeled) points as `label,x_mm,y_mm,z_mm` CSV.
pub fn points_to_csv(points: &[(String, WorldPoint)]) -> String {
    let mut s = String::from("label,x_mm,y_mm,z_mm\n");
    for (label, p) in points {
        s.push_str(&format!("{},{},{},{}\n", label, p.x, p.y, p.z));
    }
    s
}
