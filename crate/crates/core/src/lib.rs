//! Automatic detection and labeling of MR-compatible EEG electrodes from
//! paired T1/UTE MRI volumes.
//!
//! Pipeline: scalp mask from T1 -> dilated shell VOI -> spherical Hough
//! transform in the UTE volume -> ICP registration of a spherical 10-10
//! template -> one-to-one label assignment -> local-maximum refinement of
//! unmatched channels. Includes an evaluation harness (position error,
//! FN/FP, paired t-test), a fiducial-registration baseline, a synthetic
//! phantom generator with exact ground truth, and a pancake-view renderer.

pub mod detection;
pub mod error;
pub mod evaluation;
pub mod hough;
pub mod morphology;
pub mod pancake;
pub mod phantom;
pub mod registration;
pub mod template;
pub mod volume;

pub use detection::{
    assign_candidates, detect_electrodes, ElectrodeSource, LabeledElectrode, LabeledElectrodeSet,
    PipelineConfig,
};
pub use error::{Error, Result};
pub use evaluation::{
    compare_methods, detection_stats, paired_t_test, position_errors, DetectionReport,
    MethodComparison, TTestResult, DEFAULT_PE_THRESHOLD_MM,
};
pub use hough::{detect_spheres, HoughParams, SphereCandidate};
pub use morphology::{build_voi_shell, extract_head_mask, BinaryMask};
pub use phantom::{generate_phantom, perturb_points, Phantom, PhantomSpec};
pub use registration::{
    fiducial_register, icp_register, umeyama, IcpOptions, IcpResult, SimilarityTransform,
};
pub use template::{default_template, load_template, ElectrodeTemplate};
pub use volume::{Dtype, Volume3D, WorldPoint};
