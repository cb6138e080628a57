//! Labeled unit-sphere cap layout with anatomical fiducials.
//!
//! The built-in asset holds 65 channels on 10-10-style spherical angles
//! (z toward the vertex, y anterior, x right) plus the five fiducials used
//! by the semi-automatic baseline. The layout is deliberately not symmetric
//! under a 180-degree rotation about the vertex axis (no AFz channel, Iz
//! present), which pins the registration to a unique global optimum.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const FIDUCIAL_NAMES: [&str; 5] = ["nasion", "inion", "lpa", "rpa", "vertex"];

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub label: String,
    pub unit_pos: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeTemplate {
    channels: Vec<Channel>,
    fiducials: Vec<(String, Vector3<f64>)>,
}

impl ElectrodeTemplate {
    pub fn new(channels: Vec<Channel>, fiducials: Vec<(String, Vector3<f64>)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for ch in &channels {
            if !seen.insert(ch.label.clone()) {
                return Err(Error::DuplicateLabel(ch.label.clone()));
            }
            let norm = ch.unit_pos.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::NonUnitVector {
                    label: ch.label.clone(),
                    norm,
                });
            }
        }
        let mut fid_seen = std::collections::HashSet::new();
        for (name, _) in &fiducials {
            if !fid_seen.insert(name.clone()) {
                return Err(Error::DuplicateLabel(name.clone()));
            }
        }
        for name in FIDUCIAL_NAMES {
            if !fiducials.iter().any(|(n, _)| n == name) {
                return Err(Error::MissingFiducial(name.to_string()));
            }
        }
        Ok(ElectrodeTemplate { channels, fiducials })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.label.as_str())
    }

    pub fn fiducial(&self, name: &str) -> Option<Vector3<f64>> {
        self.fiducials
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Fiducials in canonical order (nasion, inion, lpa, rpa, vertex).
    pub fn fiducials_ordered(&self) -> Vec<(String, Vector3<f64>)> {
        FIDUCIAL_NAMES
            .iter()
            .map(|&n| (n.to_string(), self.fiducial(n).expect("validated")))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,ux,uy,uz,is_fiducial\n");
        for ch in &self.channels {
            s.push_str(&format!(
                "{},{},{},{},\n",
                ch.label, ch.unit_pos.x, ch.unit_pos.y, ch.unit_pos.z
            ));
        }
        for (name, v) in self.fiducials_ordered() {
            s.push_str(&format!("{},{},{},{},{}\n", name, v.x, v.y, v.z, name));
        }
        s
    }
}

/// Direction on the unit sphere: `theta` is the polar angle from the vertex
/// (+z), `az` the azimuth from anterior (+y) toward the right (+x), degrees.
fn dir(theta_deg: f64, az_deg: f64) -> Vector3<f64> {
    let t = theta_deg.to_radians();
    let a = az_deg.to_radians();
    Vector3::new(t.sin() * a.sin(), t.sin() * a.cos(), t.cos())
}

fn slerp(a: Vector3<f64>, b: Vector3<f64>, t: f64) -> Vector3<f64> {
    let omega = a.dot(&b).clamp(-1.0, 1.0).acos();
    if omega.abs() < 1e-12 {
        return a;
    }
    (a * ((1.0 - t) * omega).sin() + b * (t * omega).sin()) / omega.sin()
}

fn mirror_lr(v: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, v.y, v.z)
}

/// Built-in 65-channel layout on 10-10 spherical angles.
pub fn default_template() -> ElectrodeTemplate {
    let mut chans: Vec<(String, Vector3<f64>)> = Vec::new();
    let push = |label: &str, v: Vector3<f64>, chans: &mut Vec<(String, Vector3<f64>)>| {
        chans.push((label.to_string(), v.normalize()));
    };

    // outer ring (theta = 90), azimuth steps of 18 degrees
    let outer: [(&str, f64); 20] = [
        ("Fpz", 0.0),
        ("Fp2", 18.0),
        ("AF8", 36.0),
        ("F8", 54.0),
        ("FT8", 72.0),
        ("T8", 90.0),
        ("TP8", 108.0),
        ("P8", 126.0),
        ("PO8", 144.0),
        ("O2", 162.0),
        ("Oz", 180.0),
        ("O1", -162.0),
        ("PO7", -144.0),
        ("P7", -126.0),
        ("TP7", -108.0),
        ("T7", -90.0),
        ("FT7", -72.0),
        ("F7", -54.0),
        ("AF7", -36.0),
        ("Fp1", -18.0),
    ];
    for (label, az) in outer {
        push(label, dir(90.0, az), &mut chans);
    }

    // midline (no AFz on this cap; its position only anchors the AF row)
    let afz = dir(72.0, 0.0);
    let fz = dir(54.0, 0.0);
    let fcz = dir(36.0, 0.0);
    let cz = dir(0.0, 0.0);
    let cpz = dir(36.0, 180.0);
    let pz = dir(54.0, 180.0);
    let poz = dir(72.0, 180.0);
    push("Fz", fz, &mut chans);
    push("FCz", fcz, &mut chans);
    push("Cz", cz, &mut chans);
    push("CPz", cpz, &mut chans);
    push("Pz", pz, &mut chans);
    push("POz", poz, &mut chans);
    push("Iz", dir(108.0, 180.0), &mut chans);

    // interpolated rows: left chain from the outer-ring point to the midline
    // anchor, right chain mirrored
    let row = |outer_left: Vector3<f64>,
               mid: Vector3<f64>,
               names_left: &[&str],
               names_right: &[&str],
               chans: &mut Vec<(String, Vector3<f64>)>| {
        let n = names_left.len();
        for (idx, &name) in names_left.iter().enumerate() {
            let t = (idx + 1) as f64 / (n + 1) as f64;
            chans.push((name.to_string(), slerp(outer_left, mid, t).normalize()));
        }
        for (idx, &name) in names_right.iter().enumerate() {
            let t = (idx + 1) as f64 / (n + 1) as f64;
            chans.push((
                name.to_string(),
                mirror_lr(slerp(outer_left, mid, t)).normalize(),
            ));
        }
    };
    row(dir(90.0, -36.0), afz, &["AF3"], &["AF4"], &mut chans);
    row(dir(90.0, -54.0), fz, &["F5", "F3", "F1"], &["F6", "F4", "F2"], &mut chans);
    row(dir(90.0, -72.0), fcz, &["FC5", "FC3", "FC1"], &["FC6", "FC4", "FC2"], &mut chans);
    row(dir(90.0, -90.0), cz, &["C5", "C3", "C1"], &["C6", "C4", "C2"], &mut chans);
    row(dir(90.0, -108.0), cpz, &["CP5", "CP3", "CP1"], &["CP6", "CP4", "CP2"], &mut chans);
    row(dir(90.0, -126.0), pz, &["P5", "P3", "P1"], &["P6", "P4", "P2"], &mut chans);
    row(dir(90.0, -144.0), poz, &["PO3"], &["PO4"], &mut chans);

    // inferior temporal pairs
    push("FT9", dir(108.0, -72.0), &mut chans);
    push("FT10", dir(108.0, 72.0), &mut chans);
    push("TP9", dir(108.0, -108.0), &mut chans);
    push("TP10", dir(108.0, 108.0), &mut chans);

    let channels = chans
        .into_iter()
        .map(|(label, unit_pos)| Channel { label, unit_pos })
        .collect();
    let fiducials = vec![
        ("nasion".to_string(), dir(98.0, 0.0)),
        ("inion".to_string(), dir(98.0, 180.0)),
        ("lpa".to_string(), dir(98.0, -90.0)),
        ("rpa".to_string(), dir(98.0, 90.0)),
        ("vertex".to_string(), dir(0.0, 0.0)),
    ];
    ElectrodeTemplate::new(channels, fiducials).expect("built-in layout is valid")
}

/// Load a template from `label,ux,uy,uz,is_fiducial` CSV. Rows with a
/// fiducial name in the last column define fiducials; the rest are channels.
pub fn load_template(path: impl AsRef<Path>) -> Result<ElectrodeTemplate> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::IoFailure {
        path: pstr.clone(),
        source: e,
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "label,ux,uy,uz,is_fiducial" {
        return Err(Error::BadTemplate {
            path: pstr,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut channels = Vec::new();
    let mut fiducials = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::BadTemplate {
                path: pstr,
                reason: format!("line {}: expected 5 fields, got {}", lineno + 2, fields.len()),
            });
        }
        let label = fields[0].trim().to_string();
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::BadTemplate {
                path: pstr.clone(),
                reason: format!("line {}: bad number {s:?}", lineno + 2),
            })
        };
        let v = Vector3::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        let norm = v.norm();
        if (norm - 1.0).abs() > 0.05 {
            return Err(Error::NonUnitVector { label, norm });
        }
        let fid = fields[4].trim();
        if fid.is_empty() {
            channels.push(Channel {
                label,
                unit_pos: v / norm,
            });
        } else if FIDUCIAL_NAMES.contains(&fid) {
            fiducials.push((fid.to_string(), v / norm));
        } else {
            return Err(Error::BadTemplate {
                path: pstr,
                reason: format!("line {}: unknown fiducial {fid:?}", lineno + 2),
            });
        }
    }
    ElectrodeTemplate::new(channels, fiducials)
}
