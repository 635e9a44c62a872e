#![allow(dead_code)]

use motionprior::harness::{observation_model, training_sets, DatasetSpec};
use motionprior::latent::FitOptions;
use motionprior::skeleton::Skeleton;
use motionprior::transitions::{ActionTrainingSet, BankOptions};

pub fn sets(actions: &[&str], frames: usize, seed: u64) -> Vec<ActionTrainingSet> {
    let spec = DatasetSpec {
        actions: actions.iter().map(|s| s.to_string()).collect(),
        train_frames: frames,
        ..DatasetSpec::default()
    };
    let obs = observation_model(&spec, Skeleton::stick_figure().dof(), seed).unwrap();
    training_sets(&spec, &obs, seed).unwrap()
}

pub fn quick_bank_options() -> BankOptions {
    let mut o = BankOptions { k_paths: 2, ..BankOptions::default() };
    o.gpdm.fit.max_iters = 150;
    o
}

pub fn fit_options() -> FitOptions {
    FitOptions { max_iters: 150, ..FitOptions::default() }
}
