//! Seeded synthetic datasets for the experiments.

use crate::error::Result;
use crate::harness::config::DatasetSpec;
use crate::skeleton::motion::generate_segment;
use crate::skeleton::{catalog_action, observe_sequence, ActionSpec, MotionSequence, ObservationModel, Pose};
use crate::transitions::ActionTrainingSet;

/// Derives independent stream seeds from one experiment seed.
pub(crate) fn stream(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(purpose.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

pub fn observation_model(spec: &DatasetSpec, dof: usize, seed: u64) -> Result<ObservationModel> {
    ObservationModel::random(spec.feature_dim, dof, spec.feature_noise_sd, stream(seed, 1))
}

/// One training sequence per action, each with its own noise streams.
pub fn training_sets(spec: &DatasetSpec, obs: &ObservationModel, seed: u64) -> Result<Vec<ActionTrainingSet>> {
    spec.actions
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let action = catalog_action(label)?;
            let poses = generate_segment(&action, 0, spec.train_frames, spec.angle_noise_sd, stream(seed, 10 + i as u64))?;
            let features = observe_sequence(&poses, obs, stream(seed, 20 + i as u64))?;
            ActionTrainingSet::new(poses, features)
        })
        .collect()
}

/// `first` until `switch_frame`, then a linear angle blend over
/// `blend_frames` frames, then `second`. Both actions keep running on the
/// shared clock, so the blend mixes two moving poses.
pub fn switch_sequence(
    first: &ActionSpec,
    second: &ActionSpec,
    n_frames: usize,
    switch_frame: usize,
    blend_frames: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<MotionSequence> {
    let a = generate_segment(first, 0, n_frames, noise_sd, stream(seed, 30))?;
    let b = generate_segment(second, 0, n_frames, noise_sd, stream(seed, 31))?;
    let frames = (0..n_frames)
        .map(|t| {
            let s = if t < switch_frame {
                0.0
            } else if t < switch_frame + blend_frames {
                (t - switch_frame + 1) as f64 / (blend_frames + 1) as f64
            } else {
                1.0
            };
            let angles = a.frames[t].angles.iter().zip(&b.frames[t].angles).map(|(u, v)| (1.0 - s) * u + s * v).collect();
            Pose::new(angles)
        })
        .collect();
    MotionSequence::new(frames, first.fps, &format!("{}-{}", first.label, second.label), "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_sequence_segments() {
        let walk = catalog_action("walk").unwrap();
        let jog = catalog_action("jog").unwrap();
        let seq = switch_sequence(&walk, &jog, 40, 20, 4, 0.0, 3).unwrap();
        assert_eq!(seq.len(), 40);
        assert_eq!(seq.frames[19], walk.frame(19));
        assert_eq!(seq.frames[24], jog.frame(24));
        let mid = &seq.frames[21];
        let s = 2.0 / 5.0;
        for k in 0..mid.dim() {
            let want = (1.0 - s) * walk.frame(21).angles[k] + s * jog.frame(21).angles[k];
            assert!((mid.angles[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_differ() {
        assert_ne!(stream(1, 10), stream(1, 11));
        assert_ne!(stream(1, 10), stream(2, 10));
    }
}
