//! Pipeline orchestration: head mask, VOI, Hough candidates, template
//! registration, one-to-one candidate assignment, local-maximum refinement,
//! and labeling.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hough::{detect_spheres, HoughParams, SphereCandidate};
use crate::morphology::{build_voi_shell, extract_head_mask, BinaryMask};
use crate::registration::{icp_register, IcpOptions, SimilarityTransform, TransformJson};
use crate::template::ElectrodeTemplate;
use crate::volume::{Volume3D, WorldPoint};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub outer_margin_mm: f64,
    pub inner_margin_mm: f64,
    pub hough: HoughParams,
    pub icp: IcpOptions,
    pub gate_dist_mm: f64,
    pub refine_radius_mm: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            outer_margin_mm: 15.0,
            inner_margin_mm: 2.0,
            hough: HoughParams::default(),
            icp: IcpOptions::default(),
            gate_dist_mm: 15.0,
            refine_radius_mm: 10.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_margin_mm < 0.0 || self.inner_margin_mm < 0.0 {
            return Err(Error::InvalidParams("negative VOI margin".to_string()));
        }
        self.hough.validate()?;
        if self.gate_dist_mm <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "gate_dist_mm = {} (must be > 0)",
                self.gate_dist_mm
            )));
        }
        if self.refine_radius_mm <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "refine_radius_mm = {} (must be > 0)",
                self.refine_radius_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectrodeSource {
    Hough,
    LocalMax,
}

impl ElectrodeSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ElectrodeSource::Hough => "hough",
            ElectrodeSource::LocalMax => "local_max",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hough" => Some(ElectrodeSource::Hough),
            "local_max" => Some(ElectrodeSource::LocalMax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledElectrode {
    pub label: String,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub source: ElectrodeSource,
    pub score: f64,
    pub assign_dist_mm: f64,
}

impl LabeledElectrode {
    pub fn position(&self) -> WorldPoint {
        WorldPoint::new(self.x_mm, self.y_mm, self.z_mm)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledElectrodeSet {
    pub electrodes: Vec<LabeledElectrode>,
    pub transform: TransformJson,
    pub config: PipelineConfig,
}

impl LabeledElectrodeSet {
    pub fn labeled_points(&self) -> Vec<(String, WorldPoint)> {
        self.electrodes
            .iter()
            .map(|e| (e.label.clone(), e.position()))
            .collect()
    }

    /// CSV: `label,x_mm,y_mm,z_mm,source,score,assign_dist_mm`, template order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,x_mm,y_mm,z_mm,source,score,assign_dist_mm\n");
        for e in &self.electrodes {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.label,
                e.x_mm,
                e.y_mm,
                e.z_mm,
                e.source.as_str(),
                e.score,
                e.assign_dist_mm
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Parse the detection CSV back into labeled points (for evaluation).
pub fn read_labeled_csv(path: impl AsRef<Path>) -> Result<Vec<(String, WorldPoint)>> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::IoFailure {
        path: pstr.clone(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::BadInput {
                path: pstr,
                reason: format!("line {}: expected >= 4 fields", lineno + 1),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::BadInput {
                path: pstr.clone(),
                reason: format!("line {}: bad number {s:?}", lineno + 1),
            })
        };
        out.push((
            fields[0].trim().to_string(),
            WorldPoint::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?),
        ));
    }
    if out.is_empty() {
        return Err(Error::BadInput {
            path: pstr,
            reason: "no data rows".to_string(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Assignment

/// One-to-one greedy matching: (label, candidate) pairs visited in ascending
/// distance; a pair is accepted when both sides are free and the distance is
/// within the gate. Exact ties go to the earlier label, then the lower
/// candidate index.
pub fn assign_candidates(
    registered_pts: &[(String, WorldPoint)],
    candidates: &[SphereCandidate],
    gate_dist_mm: f64,
) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (li, (_, p)) in registered_pts.iter().enumerate() {
        for (ci, c) in candidates.iter().enumerate() {
            let d = p.distance(c.center);
            if d <= gate_dist_mm {
                pairs.push((d, li, ci));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut label_taken = vec![false; registered_pts.len()];
    let mut cand_taken = vec![false; candidates.len()];
    let mut assignment = vec![None; registered_pts.len()];
    for (_, li, ci) in pairs {
        if !label_taken[li] && !cand_taken[ci] {
            label_taken[li] = true;
            cand_taken[ci] = true;
            assignment[li] = Some(ci);
        }
    }
    assignment
}

// ---------------------------------------------------------------------------
// Local-maximum refinement

#[derive(Debug, Clone, Copy)]
pub struct RefinedPoint {
    pub position: WorldPoint,
    pub intensity: f64,
    /// True when no VOI voxel lay within the search radius and the
    /// theoretical position was returned unchanged.
    pub fallback: bool,
}

/// Maximum-intensity VOI voxel within `radius_mm` of `center` (ties broken
/// by the lowest linear voxel index).
pub fn refine_local_max(
    ute: &Volume3D,
    voi: &BinaryMask,
    center: WorldPoint,
    radius_mm: f64,
) -> RefinedPoint {
    let (nx, ny, nz) = ute.dims();
    let (sx, sy, sz) = ute.spacing();
    let (ci, cj, ck) = ute.world_to_voxel(center);
    let ri = (radius_mm / sx).ceil() as i64 + 1;
    let rj = (radius_mm / sy).ceil() as i64 + 1;
    let rk = (radius_mm / sz).ceil() as i64 + 1;
    let mut best: Option<(f32, usize)> = None;
    for k in (ck.round() as i64 - rk).max(0)..=(ck.round() as i64 + rk).min(nz as i64 - 1) {
        for j in (cj.round() as i64 - rj).max(0)..=(cj.round() as i64 + rj).min(ny as i64 - 1) {
            for i in (ci.round() as i64 - ri).max(0)..=(ci.round() as i64 + ri).min(nx as i64 - 1)
            {
                let (i, j, k) = (i as usize, j as usize, k as usize);
                if !voi.get(i, j, k) {
                    continue;
                }
                let w = ute.voxel_to_world((i as f64, j as f64, k as f64));
                if w.distance(center) > radius_mm {
                    continue;
                }
                let v = ute.at(i, j, k);
                let idx = ute.linear(i, j, k);
                let better = match best {
                    None => true,
                    Some((bv, bidx)) => v > bv || (v == bv && idx < bidx),
                };
                if better {
                    best = Some((v, idx));
                }
            }
        }
    }
    match best {
        Some((v, idx)) => {
            let (i, j, k) = ute.unlinear(idx);
            RefinedPoint {
                position: ute.voxel_to_world((i as f64, j as f64, k as f64)),
                intensity: v as f64,
                fallback: false,
            }
        }
        None => RefinedPoint {
            position: center,
            intensity: 0.0,
            fallback: true,
        },
    }
}

// ---------------------------------------------------------------------------
// Full pipeline

/// Run the full automatic pipeline on a T1/UTE pair.
pub fn detect_electrodes(
    t1: &Volume3D,
    ute: &Volume3D,
    template: &ElectrodeTemplate,
    cfg: &PipelineConfig,
) -> Result<LabeledElectrodeSet> {
    cfg.validate()?;
    let head = extract_head_mask(t1).map_err(|e| e.at_stage("head_mask"))?;
    let voi = build_voi_shell(&head, cfg.outer_margin_mm, cfg.inner_margin_mm)
        .map_err(|e| e.at_stage("voi_shell"))?;
    let voi = if voi.same_geometry(ute.dims(), ute.affine()) {
        voi
    } else {
        voi.resample_to(ute.dims(), ute.affine())
            .map_err(|e| e.at_stage("voi_resample"))?
    };
    let candidates =
        detect_spheres(ute, &voi, &cfg.hough).map_err(|e| e.at_stage("sphere_hough"))?;

    let template_pts: Vec<Vector3<f64>> =
        template.channels().iter().map(|c| c.unit_pos).collect();
    let candidate_pts: Vec<Vector3<f64>> =
        candidates.iter().map(|c| c.center.to_vec()).collect();
    let icp = icp_register(&template_pts, &candidate_pts, &cfg.icp)
        .map_err(|e| e.at_stage("icp_registration"))?;
    let transform = icp.transform;

    let registered: Vec<(String, WorldPoint)> = template
        .channels()
        .iter()
        .map(|c| {
            (
                c.label.clone(),
                WorldPoint::from_vec(transform.apply_vec(c.unit_pos)),
            )
        })
        .collect();

    let assignment = assign_candidates(&registered, &candidates, cfg.gate_dist_mm);

    let electrodes: Vec<LabeledElectrode> = registered
        .iter()
        .zip(&assignment)
        .map(|((label, reg_pos), assigned)| match assigned {
            Some(ci) => {
                let c = &candidates[*ci];
                LabeledElectrode {
                    label: label.clone(),
                    x_mm: c.center.x,
                    y_mm: c.center.y,
                    z_mm: c.center.z,
                    source: ElectrodeSource::Hough,
                    score: c.score as f64,
                    assign_dist_mm: reg_pos.distance(c.center),
                }
            }
            None => {
                let refined = refine_local_max(ute, &voi, *reg_pos, cfg.refine_radius_mm);
                LabeledElectrode {
                    label: label.clone(),
                    x_mm: refined.position.x,
                    y_mm: refined.position.y,
                    z_mm: refined.position.z,
                    source: ElectrodeSource::LocalMax,
                    score: refined.intensity,
                    assign_dist_mm: reg_pos.distance(refined.position),
                }
            }
        })
        .collect();

    Ok(LabeledElectrodeSet {
        electrodes,
        transform: TransformJson::from(&transform),
        config: cfg.clone(),
    })
}

/// Registered template channel positions for an arbitrary transform
/// (used by the fiducial baseline).
pub fn registered_positions(
    template: &ElectrodeTemplate,
    transform: &SimilarityTransform,
) -> Vec<(String, WorldPoint)> {
    template
        .channels()
        .iter()
        .map(|c| {
            (
                c.label.clone(),
                WorldPoint::from_vec(transform.apply_vec(c.unit_pos)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dtype;

    fn cand(x: f64, y: f64, z: f64, score: u32) -> SphereCandidate {
        SphereCandidate {
            center: WorldPoint::new(x, y, z),
            radius_mm: 6.0,
            score,
        }
    }

    #[test]
    fn assign_exact_positions() {
        let labels = vec![
            ("A".to_string(), WorldPoint::new(0.0, 0.0, 0.0)),
            ("B".to_string(), WorldPoint::new(30.0, 0.0, 0.0)),
        ];
        let cands = vec![cand(30.0, 0.0, 0.0, 5), cand(0.0, 0.0, 0.0, 9)];
        let a = assign_candidates(&labels, &cands, 15.0);
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn assign_tie_goes_to_earlier_label() {
        let labels = vec![
            ("A".to_string(), WorldPoint::new(-5.0, 0.0, 0.0)),
            ("B".to_string(), WorldPoint::new(5.0, 0.0, 0.0)),
        ];
        let cands = vec![cand(0.0, 0.0, 0.0, 1)];
        let a = assign_candidates(&labels, &cands, 15.0);
        assert_eq!(a, vec![Some(0), None]);
    }

    #[test]
    fn assign_strictly_closer_label_wins() {
        let labels = vec![
            ("A".to_string(), WorldPoint::new(-6.0, 0.0, 0.0)),
            ("B".to_string(), WorldPoint::new(5.0, 0.0, 0.0)),
        ];
        let cands = vec![cand(0.0, 0.0, 0.0, 1)];
        let a = assign_candidates(&labels, &cands, 15.0);
        assert_eq!(a, vec![None, Some(0)]);
    }

    #[test]
    fn assign_no_candidates() {
        let labels = vec![("A".to_string(), WorldPoint::new(0.0, 0.0, 0.0))];
        assert_eq!(assign_candidates(&labels, &[], 15.0), vec![None]);
    }

    #[test]
    fn assign_injective_on_candidates() {
        let labels: Vec<(String, WorldPoint)> = (0..5)
            .map(|i| (format!("L{i}"), WorldPoint::new(i as f64 * 2.0, 0.0, 0.0)))
            .collect();
        let cands = vec![cand(4.0, 0.0, 0.0, 1)];
        let a = assign_candidates(&labels, &cands, 50.0);
        let assigned: Vec<usize> = a.iter().flatten().copied().collect();
        assert_eq!(assigned, vec![0]);
    }

    fn bright_voxel_volume() -> (Volume3D, BinaryMask) {
        let dims = (21, 21, 21);
        let mut data = vec![0.0f32; 21 * 21 * 21];
        data[14 + 21 * (10 + 21 * 10)] = 1000.0; // 4 mm from center (10,10,10)
        let vol = Volume3D::from_spacing(dims, (1.0, 1.0, 1.0), data, Dtype::F32).unwrap();
        let voi = BinaryMask::from_volume_geometry(&vol, vec![true; vol.len()]).unwrap();
        (vol, voi)
    }

    #[test]
    fn refine_finds_bright_voxel() {
        let (vol, voi) = bright_voxel_volume();
        let r = refine_local_max(&vol, &voi, WorldPoint::new(10.0, 10.0, 10.0), 10.0);
        assert!(!r.fallback);
        assert_eq!((r.position.x, r.position.y, r.position.z), (14.0, 10.0, 10.0));
        assert_eq!(r.intensity, 1000.0);
    }

    #[test]
    fn refine_uniform_tie_is_lowest_linear_index() {
        let dims = (9, 9, 9);
        let vol =
            Volume3D::from_spacing(dims, (1.0, 1.0, 1.0), vec![5.0; 729], Dtype::F32).unwrap();
        let voi = BinaryMask::from_volume_geometry(&vol, vec![true; 729]).unwrap();
        let r = refine_local_max(&vol, &voi, WorldPoint::new(4.0, 4.0, 4.0), 2.0);
        assert!(!r.fallback);
        // lowest linear index within the 2 mm ball around (4,4,4) is (4,4,2)
        assert_eq!((r.position.x, r.position.y, r.position.z), (4.0, 4.0, 2.0));
    }

    #[test]
    fn refine_outside_voi_falls_back() {
        let (vol, _) = bright_voxel_volume();
        let voi = BinaryMask::from_volume_geometry(&vol, vec![false; vol.len()]).unwrap();
        let center = WorldPoint::new(10.0, 10.0, 10.0);
        let r = refine_local_max(&vol, &voi, center, 5.0);
        assert!(r.fallback);
        assert_eq!(r.position, center);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.gate_dist_mm = 0.0;
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
