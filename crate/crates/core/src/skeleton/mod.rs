//! Kinematic data model, synthetic motion, dataset files and error metrics.

mod io;
pub(crate) mod motion;

pub use io::{
    load_features, load_sequence, read_features, read_sequence, save_features, save_sequence,
    write_features, write_sequence,
};
pub use motion::{
    action_catalog, catalog_action, default_observation_model, generate_synthetic_action,
    make_observation, observe_sequence, ActionSpec, ObservationModel,
};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn rotation(self, angle: f64) -> Rotation3<f64> {
        let axis = match self {
            Axis::X => Vector3::x_axis(),
            Axis::Y => Vector3::y_axis(),
            Axis::Z => Vector3::z_axis(),
        };
        Rotation3::from_axis_angle(&axis, angle)
    }
}

/// One bone of the chain. The joint sits at the far end of its bone; the bone
/// starts at the parent joint (or at the origin for the root).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub bone_length: f64,
    /// Rotation axes at the bone's base, applied in X, Y, Z order.
    pub axes: Vec<Axis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Joint>", into = "Vec<Joint>")]
pub struct Skeleton {
    joints: Vec<Joint>,
    dof_offsets: Vec<usize>,
}

impl TryFrom<Vec<Joint>> for Skeleton {
    type Error = Error;

    fn try_from(joints: Vec<Joint>) -> Result<Self> {
        Skeleton::new(joints)
    }
}

impl From<Skeleton> for Vec<Joint> {
    fn from(s: Skeleton) -> Self {
        s.joints
    }
}

impl Skeleton {
    pub fn new(mut joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        let mut roots = 0;
        for (j, joint) in joints.iter_mut().enumerate() {
            match joint.parent {
                None => roots += 1,
                Some(p) if p >= j => {
                    return Err(Error::invalid(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                Some(_) => {}
            }
            if !(joint.bone_length > 0.0 && joint.bone_length.is_finite()) {
                return Err(Error::invalid(format!("joint {j} has non-positive bone length")));
            }
            if joint.axes.len() > 3 {
                return Err(Error::invalid(format!("joint {j} has more than 3 axes")));
            }
            joint.axes.sort();
            if joint.axes.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("joint {j} repeats an axis")));
            }
        }
        if roots != 1 {
            return Err(Error::invalid(format!("skeleton must have exactly one root, found {roots}")));
        }
        let mut dof_offsets = Vec::with_capacity(joints.len() + 1);
        let mut acc = 0;
        for joint in &joints {
            dof_offsets.push(acc);
            acc += joint.axes.len();
        }
        dof_offsets.push(acc);
        Ok(Skeleton { joints, dof_offsets })
    }

    /// Planar chain rotating about Z, one axis per joint.
    pub fn planar_chain(lengths: &[f64]) -> Result<Self> {
        let joints = lengths
            .iter()
            .enumerate()
            .map(|(j, &len)| Joint {
                name: format!("link{j}"),
                parent: j.checked_sub(1),
                bone_length: len,
                axes: vec![Axis::Z],
            })
            .collect();
        Skeleton::new(joints)
    }

    /// Eleven-bone stick figure with 14 rotational DOF, used by the synthetic datasets.
    pub fn stick_figure() -> Self {
        use Axis::*;
        let spec: [(&str, Option<usize>, f64, &[Axis]); 11] = [
            ("pelvis", None, 0.10, &[X, Z]),
            ("spine", Some(0), 0.50, &[Z]),
            ("head", Some(1), 0.20, &[Z]),
            ("l_thigh", Some(0), 0.45, &[X, Z]),
            ("l_shin", Some(3), 0.45, &[Z]),
            ("r_thigh", Some(0), 0.45, &[X, Z]),
            ("r_shin", Some(5), 0.45, &[Z]),
            ("l_upper_arm", Some(1), 0.30, &[Z]),
            ("l_forearm", Some(7), 0.25, &[Z]),
            ("r_upper_arm", Some(1), 0.30, &[Z]),
            ("r_forearm", Some(9), 0.25, &[Z]),
        ];
        let joints = spec
            .iter()
            .map(|&(name, parent, bone_length, axes)| Joint {
                name: name.to_string(),
                parent,
                bone_length,
                axes: axes.to_vec(),
            })
            .collect();
        Skeleton::new(joints).expect("stick figure is a valid skeleton")
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        *self.dof_offsets.last().unwrap()
    }

    /// Range of pose-vector entries driving joint `j`.
    pub fn dof_range(&self, j: usize) -> std::ops::Range<usize> {
        self.dof_offsets[j]..self.dof_offsets[j + 1]
    }

    /// True if `a` is `b` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, a: usize, b: usize) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.joints[c].parent;
        }
        false
    }
}

/// Joint-angle configuration, radians, laid out joint by joint in axis order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub angles: Vec<f64>,
}

impl Pose {
    pub fn new(angles: Vec<f64>) -> Self {
        Pose { angles }
    }

    pub fn dim(&self) -> usize {
        self.angles.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<Pose>,
    pub fps: f64,
    pub action_label: String,
    pub subject_id: String,
}

impl MotionSequence {
    pub fn new(frames: Vec<Pose>, fps: f64, action_label: &str, subject_id: &str) -> Result<Self> {
        let seq = MotionSequence {
            frames,
            fps,
            action_label: action_label.to_string(),
            subject_id: subject_id.to_string(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::invalid("a motion sequence needs at least 2 frames"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid("fps must be positive"));
        }
        let dim = self.frames[0].dim();
        for (t, f) in self.frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::invalid(format!("frame {t} has dimension {} != {dim}", f.dim())));
            }
            if f.angles.iter().any(|a| !a.is_finite()) {
                return Err(Error::invalid(format!("frame {t} has a non-finite angle")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Pose::dim)
    }

    /// Frames as an N×DOF matrix.
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.len(), self.dim(), |i, j| self.frames[i].angles[j])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub frames: Vec<FeatureVector>,
    pub fps: f64,
    pub action_label: String,
    pub subject_id: String,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, FeatureVector::dim)
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.len(), self.dim(), |i, j| self.frames[i].values[j])
    }
}

/// World positions of the chain: index 0 is the root's base at the origin,
/// index `j + 1` is the end of bone `j`.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    if pose.dim() != skeleton.dof() {
        return Err(Error::invalid(format!(
            "pose has {} angles, skeleton has {} DOF",
            pose.dim(),
            skeleton.dof()
        )));
    }
    let n = skeleton.joint_count();
    let mut rotations: Vec<Rotation3<f64>> = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n + 1);
    positions.push(Vector3::zeros());
    for (j, joint) in skeleton.joints.iter().enumerate() {
        let angles = &pose.angles[skeleton.dof_range(j)];
        let local = joint
            .axes
            .iter()
            .zip(angles)
            .fold(Rotation3::identity(), |r, (axis, &a)| r * axis.rotation(a));
        let (base_rot, base_pos) = match joint.parent {
            Some(p) => (rotations[p], positions[p + 1]),
            None => (Rotation3::identity(), Vector3::zeros()),
        };
        let rot = base_rot * local;
        positions.push(base_pos + rot * Vector3::new(joint.bone_length, 0.0, 0.0));
        rotations.push(rot);
    }
    Ok(positions)
}

/// Mean Euclidean distance between corresponding joints, over all frames and
/// all joints (the fixed base point is excluded).
pub fn joint_error(est: &MotionSequence, gt: &MotionSequence, skeleton: &Skeleton) -> Result<f64> {
    Ok(mean(&per_frame_joint_error(est, gt, skeleton)?))
}

/// Per-frame mean joint error; `joint_error` is the mean of this vector.
pub fn per_frame_joint_error(
    est: &MotionSequence,
    gt: &MotionSequence,
    skeleton: &Skeleton,
) -> Result<Vec<f64>> {
    if est.len() != gt.len() {
        return Err(Error::invalid(format!(
            "sequence lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    est.frames
        .iter()
        .zip(&gt.frames)
        .map(|(a, b)| {
            let pa = forward_kinematics(skeleton, a)?;
            let pb = forward_kinematics(skeleton, b)?;
            let total: f64 = pa[1..].iter().zip(&pb[1..]).map(|(u, v)| (u - v).norm()).sum();
            Ok(total / skeleton.joint_count() as f64)
        })
        .collect()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
