//! Ensembles of 2D pose estimators.
//!
//! An [`ActionPoseBank2D`] holds one feature→pose regressor per action and a
//! softmax classifier; its estimate is the posterior-weighted combination of
//! the per-action poses, optionally refined by feeding features of the
//! estimated pose back into the classifier. A [`MergerModel`] combines the
//! outputs of several experts joint by joint with simplex weights.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::FitOptions;
use crate::mappings::{fit_mapping, GpMapping, MappingOptions};
use crate::optim::{self, LbfgsOptions};

pub const GLOBAL_FEATURE_SPACE: &str = "global_feature";
pub const POSE_2D_SPACE: &str = "pose2d";

/// 2D joint coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub joints: Vec<[f64; 2]>,
}

impl Pose2D {
    pub fn new(joints: Vec<[f64; 2]>) -> Self {
        Pose2D { joints }
    }

    /// Joints as `[x0, y0, x1, y1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j[0], j[1]]).collect()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::invalid("flat 2D pose needs an even number of values"));
        }
        Ok(Pose2D { joints: v.chunks(2).map(|c| [c[0], c[1]]).collect() })
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Pose2D { joints: self.joints.iter().map(|j| [j[0] + dx, j[1] + dy]).collect() }
    }
}

/// Root-mean-square coordinate error over all poses, joints and both axes.
pub fn pose_rmse(est: &[Pose2D], gt: &[Pose2D]) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::invalid("pose sets must be nonempty and of equal size"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in est.iter().zip(gt) {
        if a.joints.len() != b.joints.len() {
            return Err(Error::invalid("poses have different joint counts"));
        }
        for (p, q) in a.joints.iter().zip(&b.joints) {
            sum += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            count += 2;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Which joints form limbs. Angles are taken between consecutive limbs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFeatureSpec {
    pub limbs: Vec<(usize, usize)>,
}

impl PoseFeatureSpec {
    /// Limbs `(0,1), (1,2), ...` of a `joints`-long chain.
    pub fn chain(joints: usize) -> Self {
        PoseFeatureSpec { limbs: (1..joints).map(|j| (j - 1, j)).collect() }
    }

    pub fn feature_dim(&self, joints: usize) -> usize {
        2 * joints + self.limbs.len().saturating_sub(1)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI {
        w - 2.0 * std::f64::consts::PI
    } else {
        w
    }
}

/// Joint offsets from the joint centroid, then the signed angle between each
/// pair of consecutive limbs, wrapped to `(-π, π]`.
pub fn extract_pose_features(pose: &Pose2D, spec: &PoseFeatureSpec) -> Result<Vec<f64>> {
    let n = pose.joints.len();
    if n == 0 {
        return Err(Error::invalid("pose has no joints"));
    }
    if spec.limbs.iter().any(|&(a, b)| a >= n || b >= n) {
        return Err(Error::invalid("limb references a missing joint"));
    }
    let cx = pose.joints.iter().map(|j| j[0]).sum::<f64>() / n as f64;
    let cy = pose.joints.iter().map(|j| j[1]).sum::<f64>() / n as f64;
    let mut out: Vec<f64> = pose.joints.iter().flat_map(|j| [j[0] - cx, j[1] - cy]).collect();
    let heading: Vec<f64> = spec
        .limbs
        .iter()
        .map(|&(a, b)| (pose.joints[b][1] - pose.joints[a][1]).atan2(pose.joints[b][0] - pose.joints[a][0]))
        .collect();
    out.extend(heading.windows(2).map(|w| wrap_angle(w[1] - w[0])));
    Ok(out)
}

/// Multinomial logistic regression; `weights` is `actions × (dim + 1)` with
/// the bias in the last column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionClassifier {
    pub labels: Vec<String>,
    pub weights: DMatrix<f64>,
}

impl ActionClassifier {
    pub fn zeros(labels: Vec<String>, dim: usize) -> Self {
        let a = labels.len();
        ActionClassifier { labels, weights: DMatrix::zeros(a, dim + 1) }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols() - 1
    }
}

fn softmax_scores(w: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    let d = f.len();
    let scores: Vec<f64> = (0..w.nrows())
        .map(|a| (0..d).map(|k| w[(a, k)] * f[k]).sum::<f64>() + w[(a, d)])
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub fn classify_action(c: &ActionClassifier, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != c.input_dim() {
        return Err(Error::invalid(format!("classifier expects {} features, got {}", c.input_dim(), f.len())));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }
    Ok(softmax_scores(&c.weights, f))
}

pub fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

/// Fits the classifier by minimising mean cross-entropy plus
/// `l2/2·‖W‖²` (bias excluded).
pub fn train_classifier(
    inputs: &[Vec<f64>],
    labels: &[usize],
    names: Vec<String>,
    l2: f64,
) -> Result<ActionClassifier> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid("classifier needs one label per nonempty input"));
    }
    let a = names.len();
    let d = inputs[0].len();
    if inputs.iter().any(|x| x.len() != d) || labels.iter().any(|&l| l >= a) {
        return Err(Error::invalid("inconsistent classifier training data"));
    }
    let n = inputs.len() as f64;
    let cols = d + 1;
    let objective = |p: &[f64], g: &mut [f64]| -> Result<f64> {
        let w = DMatrix::from_row_slice(a, cols, p);
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            let prob = softmax_scores(&w, x);
            loss -= prob[y].max(f64::MIN_POSITIVE).ln();
            for (k, pk) in prob.iter().enumerate() {
                let r = pk - if k == y { 1.0 } else { 0.0 };
                for j in 0..d {
                    g[k * cols + j] += r * x[j] / n;
                }
                g[k * cols + d] += r / n;
            }
        }
        let mut reg = 0.0;
        for k in 0..a {
            for j in 0..d {
                let v = p[k * cols + j];
                reg += v * v;
                g[k * cols + j] += l2 * v;
            }
        }
        Ok(loss / n + 0.5 * l2 * reg)
    };
    let opts = LbfgsOptions { max_iters: 1000, grad_tol: 1e-7, ..LbfgsOptions::default() };
    let min = optim::minimize(objective, vec![0.0; a * cols], &opts)?;
    Ok(ActionClassifier { labels: names, weights: DMatrix::from_row_slice(a, cols, &min.x) })
}

/// Pose-feature cluster of one action; `radius` = mean + 2·sd of the
/// training distances to the centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseCluster {
    pub centroid: Vec<f64>,
    pub radius: f64,
}

impl PoseCluster {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("cluster needs at least one member"));
        }
        let d = features[0].len();
        let n = features.len() as f64;
        let centroid: Vec<f64> = (0..d).map(|k| features.iter().map(|f| f[k]).sum::<f64>() / n).collect();
        let dist: Vec<f64> = features.iter().map(|f| euclid(f, &centroid)).collect();
        let m = dist.iter().sum::<f64>() / n;
        let sd = (dist.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        Ok(PoseCluster { centroid, radius: m + 2.0 * sd })
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// One labelled training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub global: Vec<f64>,
    pub pose: Pose2D,
    pub action: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionPoseBank2D {
    pub estimators: Vec<GpMapping>,
    pub classifier: ActionClassifier,
    pub pose_features: PoseFeatureSpec,
    pub clusters: Vec<PoseCluster>,
    pub global_dim: usize,
}

fn stack(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub(crate) fn fit_pose_estimator(inputs: &[Vec<f64>], poses: &[Pose2D], fit: &FitOptions) -> Result<GpMapping> {
    let targets: Vec<Vec<f64>> = poses.iter().map(Pose2D::flat).collect();
    let opts = MappingOptions { fit: *fit, ..MappingOptions::default() };
    fit_mapping(&stack(inputs), &stack(&targets), &opts, GLOBAL_FEATURE_SPACE, POSE_2D_SPACE)
}

const CLASSIFIER_L2: f64 = 1e-3;
const CROSS_FOLDS: usize = 4;

/// Weighted pose of every sample with estimators fitted on the other folds.
/// Falls back to the true poses when an action is too small to split.
fn cross_fitted_poses(
    samples: &[PoseSample],
    actions: usize,
    classifier: &ActionClassifier,
    fit: &FitOptions,
    blank: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<Pose2D>> {
    let mut fold = vec![0; samples.len()];
    let mut seen = vec![0usize; actions];
    for (i, s) in samples.iter().enumerate() {
        fold[i] = seen[s.action] % CROSS_FOLDS;
        seen[s.action] += 1;
    }
    if seen.iter().any(|&n| n < 2 * CROSS_FOLDS) {
        return Ok(samples.iter().map(|s| s.pose.clone()).collect());
    }
    let mut out = vec![None; samples.len()];
    for k in 0..CROSS_FOLDS {
        let mut estimators = Vec::with_capacity(actions);
        for a in 0..actions {
            let rest: Vec<&PoseSample> =
                samples.iter().zip(&fold).filter(|(s, &f)| s.action == a && f != k).map(|(s, _)| s).collect();
            let inputs: Vec<Vec<f64>> = rest.iter().map(|s| s.global.clone()).collect();
            let poses: Vec<Pose2D> = rest.iter().map(|s| s.pose.clone()).collect();
            estimators.push(fit_pose_estimator(&inputs, &poses, fit)?);
        }
        for (i, s) in samples.iter().enumerate().filter(|(i, _)| fold[*i] == k) {
            let posterior = classify_action(classifier, &blank(&s.global))?;
            let mut acc = vec![0.0; s.pose.joints.len() * 2];
            for (est, p) in estimators.iter().zip(&posterior) {
                for (v, e) in acc.iter_mut().zip(est.mean(&s.global)?.iter()) {
                    *v += p * e;
                }
            }
            out[i] = Some(Pose2D::from_flat(&acc)?);
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every sample has a fold")).collect())
}

impl ActionPoseBank2D {
    /// Per-action estimators, pose-feature clusters, and one classifier
    /// trained on both `[global ‖ 0]` and `[global ‖ pose features]`. The
    /// pose features come from out-of-fold weighted estimates, so the
    /// classifier sees poses as noisy as the ones it gets at inference.
    pub fn train(samples: &[PoseSample], labels: Vec<String>, spec: PoseFeatureSpec, fit: &FitOptions) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no training samples"));
        }
        let global_dim = samples[0].global.len();
        let joints = samples[0].pose.joints.len();
        if samples.iter().any(|s| s.global.len() != global_dim || s.pose.joints.len() != joints) {
            return Err(Error::invalid("training samples have inconsistent dimensions"));
        }
        let pf_dim = spec.feature_dim(joints);
        let mut estimators = Vec::with_capacity(labels.len());
        let mut clusters = Vec::with_capacity(labels.len());
        for a in 0..labels.len() {
            let own: Vec<&PoseSample> = samples.iter().filter(|s| s.action == a).collect();
            if own.len() < 2 {
                return Err(Error::invalid(format!("action `{}` has fewer than 2 samples", labels[a])));
            }
            let inputs: Vec<Vec<f64>> = own.iter().map(|s| s.global.clone()).collect();
            let poses: Vec<Pose2D> = own.iter().map(|s| s.pose.clone()).collect();
            estimators.push(fit_pose_estimator(&inputs, &poses, fit)?);
            let feats = poses.iter().map(|p| extract_pose_features(p, &spec)).collect::<Result<Vec<_>>>()?;
            clusters.push(PoseCluster::fit(&feats)?);
        }
        let blank = |g: &[f64]| {
            let mut x = g.to_vec();
            x.resize(global_dim + pf_dim, 0.0);
            x
        };
        let ys: Vec<usize> = samples.iter().map(|s| s.action).collect();
        let mut inputs: Vec<Vec<f64>> = samples.iter().map(|s| blank(&s.global)).collect();
        let first = train_classifier(&inputs, &ys, labels.clone(), CLASSIFIER_L2)?;
        for (s, pose) in samples.iter().zip(cross_fitted_poses(samples, labels.len(), &first, fit, &blank)?) {
            let mut full = s.global.clone();
            full.extend(extract_pose_features(&pose, &spec)?);
            inputs.push(full);
        }
        let ys: Vec<usize> = ys.iter().chain(&ys).copied().collect();
        let classifier = train_classifier(&inputs, &ys, labels, CLASSIFIER_L2)?;
        Ok(ActionPoseBank2D { estimators, classifier, pose_features: spec, clusters, global_dim })
    }

    pub fn actions(&self) -> usize {
        self.estimators.len()
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.classifier
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownAction(label.to_string()))
    }

    fn classifier_input(&self, f: &[f64], pose: Option<&Pose2D>) -> Result<Vec<f64>> {
        if f.len() != self.global_dim {
            return Err(Error::invalid(format!("expected {} global features, got {}", self.global_dim, f.len())));
        }
        let mut x = f.to_vec();
        match pose {
            Some(p) => x.extend(extract_pose_features(p, &self.pose_features)?),
            None => x.resize(self.classifier.input_dim(), 0.0),
        }
        Ok(x)
    }

    pub fn estimate(&self, action: usize, f: &[f64]) -> Result<Pose2D> {
        Pose2D::from_flat(self.estimators[action].mean(f)?.as_slice())
    }

    /// `Σ_a p(a)·estimator_a(f)` for a given posterior.
    pub fn combine(&self, posterior: &[f64], f: &[f64]) -> Result<Pose2D> {
        if posterior.len() != self.actions() {
            return Err(Error::invalid("posterior length differs from the number of actions"));
        }
        let mut acc: Vec<f64> = Vec::new();
        for (a, &p) in posterior.iter().enumerate() {
            let est = self.estimators[a].mean(f)?;
            if acc.is_empty() {
                acc = vec![0.0; est.len()];
            }
            for (v, e) in acc.iter_mut().zip(est.iter()) {
                *v += p * e;
            }
        }
        Pose2D::from_flat(&acc)
    }
}

/// Posterior-weighted pose from global features alone.
pub fn weighted_pose(bank: &ActionPoseBank2D, f: &[f64]) -> Result<(Pose2D, Vec<f64>)> {
    let posterior = classify_action(&bank.classifier, &bank.classifier_input(f, None)?)?;
    Ok((bank.combine(&posterior, f)?, posterior))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub pose: Pose2D,
    pub posterior: Vec<f64>,
    /// Posterior of the first, global-features-only pass.
    pub initial_posterior: Vec<f64>,
    pub iterations: usize,
}

/// Alternates classification and pose estimation until the winning action
/// repeats or `max_iters` classify+pose passes have run.
pub fn iterative_refine(bank: &ActionPoseBank2D, f: &[f64], max_iters: usize) -> Result<Refinement> {
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let (mut pose, initial_posterior) = weighted_pose(bank, f)?;
    let mut posterior = initial_posterior.clone();
    let mut iterations = 1;
    while iterations < max_iters {
        let prev = argmax(&posterior);
        posterior = classify_action(&bank.classifier, &bank.classifier_input(f, Some(&pose))?)?;
        pose = bank.combine(&posterior, f)?;
        iterations += 1;
        if argmax(&posterior) == prev {
            break;
        }
    }
    Ok(Refinement { pose, posterior, initial_posterior, iterations })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakDecision {
    pub accepted: bool,
    pub action: usize,
    pub distance: f64,
    pub radius: f64,
}

/// Accepts `pose` when its features fall inside the cluster of `label`.
pub fn weak_accept(bank: &ActionPoseBank2D, label: &str, pose: &Pose2D) -> Result<WeakDecision> {
    let action = bank.label_index(label)?;
    let feats = extract_pose_features(pose, &bank.pose_features)?;
    let cluster = &bank.clusters[action];
    if feats.len() != cluster.centroid.len() {
        return Err(Error::invalid("pose has the wrong joint count for this bank"));
    }
    let distance = euclid(&feats, &cluster.centroid);
    Ok(WeakDecision { accepted: distance <= cluster.radius, action, distance, radius: cluster.radius })
}

/// Global features with only an action label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakSample {
    pub global: Vec<f64>,
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeakReport {
    pub accepted: usize,
    pub rejected: usize,
    /// Actions whose refit was discarded because it hurt the supervised fit.
    pub guarded: Vec<usize>,
}

fn training_rmse(m: &GpMapping, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..inputs.nrows() {
        let x: Vec<f64> = inputs.row(i).iter().copied().collect();
        let y = m.mean(&x)?;
        sum += y.iter().zip(targets.row(i).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((sum / targets.len() as f64).sqrt())
}

/// Self-labels each weak sample with [`weighted_pose`], keeps those passing
/// the gate (all of them when `gate` is false), and refits the affected
/// estimators on original plus accepted samples. A refit that raises the
/// supervised training RMSE by more than 5% is discarded.
pub fn weak_retrain(
    bank: &ActionPoseBank2D,
    weak: &[WeakSample],
    gate: bool,
    fit: &FitOptions,
) -> Result<(ActionPoseBank2D, WeakReport)> {
    if weak.is_empty() {
        return Err(Error::invalid("weak set is empty"));
    }
    let mut report = WeakReport::default();
    let mut extra: Vec<Vec<(Vec<f64>, Pose2D)>> = vec![Vec::new(); bank.actions()];
    for s in weak {
        let (pose, _) = weighted_pose(bank, &s.global)?;
        let decision = weak_accept(bank, &s.label, &pose)?;
        if decision.accepted || !gate {
            extra[decision.action].push((s.global.clone(), pose));
            report.accepted += 1;
        } else {
            report.rejected += 1;
        }
    }
    let mut updated = bank.clone();
    for (a, added) in extra.iter().enumerate() {
        if added.is_empty() {
            continue;
        }
        let old = &bank.estimators[a];
        let mut inputs: Vec<Vec<f64>> = (0..old.inputs().nrows()).map(|i| old.inputs().row(i).iter().copied().collect()).collect();
        let mut poses: Vec<Pose2D> = (0..old.targets().nrows())
            .map(|i| Pose2D::from_flat(&old.targets().row(i).iter().copied().collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        for (f, p) in added {
            inputs.push(f.clone());
            poses.push(p.clone());
        }
        let refit = fit_pose_estimator(&inputs, &poses, fit)?;
        let before = training_rmse(old, old.inputs(), old.targets())?;
        let after = training_rmse(&refit, old.inputs(), old.targets())?;
        if after > 1.05 * before.max(1e-12) {
            report.guarded.push(a);
        } else {
            updated.estimators[a] = refit;
        }
    }
    Ok((updated, report))
}

/// Per-joint simplex weights over `M` experts; `weights` is `joints × M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergerModel {
    pub weights: DMatrix<f64>,
}

impl MergerModel {
    pub fn uniform(joints: usize, experts: usize) -> Self {
        MergerModel { weights: DMatrix::from_element(joints, experts, 1.0 / experts as f64) }
    }

    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        for j in 0..weights.nrows() {
            let row = weights.row(j);
            if row.iter().any(|w| !(*w >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("weights of joint {j} are not on the simplex")));
            }
        }
        Ok(MergerModel { weights })
    }

    pub fn experts(&self) -> usize {
        self.weights.ncols()
    }
}

pub fn merge_poses(m: &MergerModel, experts: &[Pose2D]) -> Result<Pose2D> {
    if experts.len() != m.experts() {
        return Err(Error::invalid(format!("merger expects {} experts, got {}", m.experts(), experts.len())));
    }
    let joints = m.weights.nrows();
    if experts.iter().any(|e| e.joints.len() != joints) {
        return Err(Error::invalid(format!("every expert pose must have {joints} joints")));
    }
    let merged = (0..joints)
        .map(|j| {
            let mut p = [0.0; 2];
            for (k, e) in experts.iter().enumerate() {
                p[0] += m.weights[(j, k)] * e.joints[j][0];
                p[1] += m.weights[(j, k)] * e.joints[j][1];
            }
            p
        })
        .collect();
    Ok(Pose2D::new(merged))
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Squared merge error summed over samples and coordinates, joint by joint.
pub fn merger_loss(m: &MergerModel, outputs: &[Vec<Pose2D>], gt: &[Pose2D]) -> Result<f64> {
    let mut total = 0.0;
    for (experts, truth) in outputs.iter().zip(gt) {
        let merged = merge_poses(m, experts)?;
        for (a, b) in merged.joints.iter().zip(&truth.joints) {
            total += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        }
    }
    Ok(total)
}

/// Projected gradient descent on each joint's quadratic loss, starting from
/// uniform weights with step `1/L` (`L` the largest Hessian eigenvalue), so
/// the loss never rises above the uniform merger's.
pub fn fit_merger(outputs: &[Vec<Pose2D>], gt: &[Pose2D]) -> Result<MergerModel> {
    if outputs.is_empty() || outputs.len() != gt.len() {
        return Err(Error::invalid("merger needs one ground-truth pose per training sample"));
    }
    let m = outputs[0].len();
    if m < 2 {
        return Err(Error::invalid("merger needs at least 2 experts"));
    }
    let joints = gt[0].joints.len();
    if outputs.iter().any(|o| o.len() != m || o.iter().any(|p| p.joints.len() != joints))
        || gt.iter().any(|p| p.joints.len() != joints)
    {
        return Err(Error::invalid("expert outputs have inconsistent shapes"));
    }
    let mut weights = DMatrix::zeros(joints, m);
    for j in 0..joints {
        // loss(w) = wᵀ H w − 2 bᵀ w + c, gradient 2(H w − b)
        let mut h = DMatrix::<f64>::zeros(m, m);
        let mut b = vec![0.0; m];
        for (experts, truth) in outputs.iter().zip(gt) {
            for c in 0..2 {
                for k in 0..m {
                    b[k] += experts[k].joints[j][c] * truth.joints[j][c];
                    for l in 0..m {
                        h[(k, l)] += experts[k].joints[j][c] * experts[l].joints[j][c];
                    }
                }
            }
        }
        let lmax = SymmetricEigen::new(h.clone()).eigenvalues.max();
        if !lmax.is_finite() {
            return Err(Error::Diverged { iteration: 0 });
        }
        let mut w = vec![1.0 / m as f64; m];
        if lmax > 0.0 {
            let step = 1.0 / (2.0 * lmax);
            for iteration in 1..=20_000 {
                let grad: Vec<f64> = (0..m).map(|k| 2.0 * ((0..m).map(|l| h[(k, l)] * w[l]).sum::<f64>() - b[k])).collect();
                let next = project_to_simplex(&w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>());
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { iteration });
                }
                let moved = euclid(&next, &w);
                w = next;
                if moved < 1e-13 {
                    break;
                }
            }
        }
        for k in 0..m {
            weights[(j, k)] = w[k];
        }
    }
    MergerModel::new(weights)
}

/// Synthetic multi-action 2D data. Every action has its own chain template
/// and articulation modes. Global features are `context_dim` action-context
/// values (class mean scaled by `separation`) followed by `appearance_dim`
/// values driven by the articulation. The appearance map blends a map shared
/// by all actions with a per-action one by `appearance_mix`: at 0 the same
/// appearance means different poses under different actions, at 1 each
/// action occupies its own appearance subspace.
#[derive(Clone, Debug)]
pub struct EnsembleDataSpec {
    pub actions: usize,
    pub joints: usize,
    pub context_dim: usize,
    pub appearance_dim: usize,
    pub appearance_mix: f64,
    pub separation: f64,
    pub feature_noise_sd: f64,
    pub pose_noise_sd: f64,
}

impl EnsembleDataSpec {
    pub fn global_dim(&self) -> usize {
        self.context_dim + self.appearance_dim
    }
}

#[derive(Clone, Debug)]
pub struct ActionGenerator {
    base_angles: Vec<Vec<f64>>,
    modes: Vec<DMatrix<f64>>,
    means: Vec<Vec<f64>>,
    appearance: Vec<DMatrix<f64>>,
    spec: EnsembleDataSpec,
}

const ARTICULATION_DIM: usize = 2;

impl ActionGenerator {
    pub fn new(spec: EnsembleDataSpec, seed: u64) -> Result<Self> {
        if spec.actions < 2 || spec.joints < 2 || spec.global_dim() == 0 {
            return Err(Error::invalid("need 2+ actions, 2+ joints and a positive feature dimension"));
        }
        if !(0.0..=1.0).contains(&spec.appearance_mix) {
            return Err(Error::invalid("appearance_mix must lie in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let angle = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI).expect("angle range");
        let limbs = spec.joints - 1;
        let mut base_angles = Vec::new();
        let mut modes = Vec::new();
        let mut means = Vec::new();
        for _ in 0..spec.actions {
            base_angles.push((0..limbs).map(|_| angle.sample(&mut rng)).collect());
            modes.push(DMatrix::from_fn(limbs, ARTICULATION_DIM, |_, _| 0.4 * unit.sample(&mut rng)));
            means.push((0..spec.context_dim).map(|_| unit.sample(&mut rng)).collect());
        }
        let mut draw = || DMatrix::from_fn(spec.appearance_dim, ARTICULATION_DIM, |_, _| unit.sample(&mut rng));
        let shared = draw();
        let appearance = (0..spec.actions).map(|_| &shared * (1.0 - spec.appearance_mix) + draw() * spec.appearance_mix).collect();
        Ok(ActionGenerator { base_angles, modes, means, appearance, spec })
    }

    pub fn sample(&self, action: usize, rng: &mut ChaCha8Rng) -> PoseSample {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let z: Vec<f64> = (0..ARTICULATION_DIM).map(|_| Uniform::new(-1.0, 1.0).expect("range").sample(rng)).collect();
        let mut joints = vec![[0.0, 0.0]];
        let mut heading = 0.0;
        for (l, base) in self.base_angles[action].iter().enumerate() {
            let bend: f64 = (0..ARTICULATION_DIM).map(|k| self.modes[action][(l, k)] * z[k]).sum();
            heading += base + bend;
            let prev = joints[l];
            joints.push([prev[0] + heading.cos(), prev[1] + heading.sin()]);
        }
        for j in &mut joints {
            j[0] += self.spec.pose_noise_sd * unit.sample(rng);
            j[1] += self.spec.pose_noise_sd * unit.sample(rng);
        }
        let sd = self.spec.feature_noise_sd;
        let mut global: Vec<f64> =
            self.means[action].iter().map(|m| self.spec.separation * m + sd * unit.sample(rng)).collect();
        global.extend((0..self.spec.appearance_dim).map(|i| {
            (0..ARTICULATION_DIM).map(|k| self.appearance[action][(i, k)] * z[k]).sum::<f64>() + sd * unit.sample(rng)
        }));
        PoseSample { global, pose: Pose2D::new(joints), action }
    }

    /// `per_action` samples of every action, interleaved by action.
    pub fn samples(&self, per_action: usize, seed: u64) -> Vec<PoseSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..per_action)
            .flat_map(|_| (0..self.spec.actions).collect::<Vec<_>>())
            .map(|a| self.sample(a, &mut rng))
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.spec.actions).map(|a| format!("action{a}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn fit() -> FitOptions {
        FitOptions { max_iters: 100, ..FitOptions::default() }
    }

    fn data_spec(separation: f64) -> EnsembleDataSpec {
        EnsembleDataSpec {
            actions: 2,
            joints: 4,
            context_dim: 2,
            appearance_dim: 3,
            appearance_mix: 0.0,
            separation,
            feature_noise_sd: 0.1,
            pose_noise_sd: 0.01,
        }
    }

    fn small_bank(seed: u64) -> (ActionGenerator, ActionPoseBank2D) {
        let g = ActionGenerator::new(data_spec(3.0), seed).unwrap();
        let train = g.samples(15, seed + 100);
        let bank = ActionPoseBank2D::train(&train, g.labels(), PoseFeatureSpec::chain(4), &fit()).unwrap();
        (g, bank)
    }

    #[test]
    fn zero_weights_are_uniform() {
        let c = ActionClassifier::zeros(vec!["a".into(), "b".into(), "c".into()], 4);
        let p = classify_action(&c, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(classify_action(&c, &[1.0]).is_err());
    }

    #[test]
    fn separable_clusters_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x.push(vec![centre + noise.sample(&mut rng), noise.sample(&mut rng)]);
            y.push(c);
        }
        let clf = train_classifier(&x, &y, vec!["l".into(), "r".into()], 1e-3).unwrap();
        let correct = x.iter().zip(&y).filter(|(xi, &yi)| argmax(&classify_action(&clf, xi).unwrap()) == yi).count();
        assert_eq!(correct, 60);
    }

    #[test]
    fn pose_features_by_hand() {
        let pose = Pose2D::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        let f = extract_pose_features(&pose, &PoseFeatureSpec::chain(3)).unwrap();
        let (cx, cy) = (2.0 / 3.0, 1.0 / 3.0);
        let want = [-cx, -cy, 1.0 - cx, -cy, 1.0 - cx, 1.0 - cy, PI / 2.0];
        assert_eq!(f.len(), want.len());
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_features_ignore_translation() {
        let pose = Pose2D::new(vec![[0.3, -1.0], [1.2, 0.4], [0.1, 2.0], [-0.5, 1.0]]);
        let spec = PoseFeatureSpec::chain(4);
        let a = extract_pose_features(&pose, &spec).unwrap();
        let b = extract_pose_features(&pose.translated(5.0, -7.0), &spec).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let zero = extract_pose_features(&Pose2D::new(vec![[0.0, 0.0]; 4]), &spec).unwrap();
        assert!(zero[..8].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_hot_posterior_picks_estimator() {
        let (g, bank) = small_bank(1);
        let f = g.samples(1, 9)[0].global.clone();
        let direct = bank.estimate(1, &f).unwrap();
        assert_eq!(bank.combine(&[0.0, 1.0], &f).unwrap(), direct);
    }

    #[test]
    fn convex_combination_by_hand() {
        let (g, bank) = small_bank(2);
        let f = g.samples(1, 4)[0].global.clone();
        let (a, b) = (bank.estimate(0, &f).unwrap(), bank.estimate(1, &f).unwrap());
        let mixed = bank.combine(&[0.3, 0.7], &f).unwrap();
        for j in 0..4 {
            for c in 0..2 {
                let want = 0.3 * a.joints[j][c] + 0.7 * b.joints[j][c];
                assert!((mixed.joints[j][c] - want).abs() < 1e-12);
            }
        }
        let (pose, post) = weighted_pose(&bank, &f).unwrap();
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(pose, bank.combine(&post, &f).unwrap());
    }

    #[test]
    fn refine_budget_and_stability() {
        let (g, bank) = small_bank(3);
        let f = g.samples(1, 11)[0].global.clone();
        let one = iterative_refine(&bank, &f, 1).unwrap();
        assert_eq!(one.iterations, 1);
        assert_eq!(one.posterior, one.initial_posterior);
        let r = iterative_refine(&bank, &f, 10).unwrap();
        assert!(r.iterations >= 2 && r.iterations <= 10);
        assert!(iterative_refine(&bank, &f, 0).is_err());
    }

    #[test]
    fn gate_accepts_centroid_rejects_far() {
        let (g, mut bank) = small_bank(4);
        let pose = g.samples(1, 21)[0].pose.clone();
        bank.clusters[0].centroid = extract_pose_features(&pose, &bank.pose_features).unwrap();
        let d = weak_accept(&bank, "action0", &pose).unwrap();
        assert!(d.accepted && d.distance == 0.0);
        let far: Vec<[f64; 2]> = (0..4).map(|j| [100.0 * j as f64, 0.0]).collect();
        let d = weak_accept(&bank, "action0", &Pose2D::new(far)).unwrap();
        assert!(!d.accepted && d.distance > 10.0 * d.radius);
        assert!(matches!(weak_accept(&bank, "nope", &Pose2D::new(vec![[0.0, 0.0]; 4])), Err(Error::UnknownAction(_))));
    }

    #[test]
    fn held_out_true_poses_fall_inside_their_cluster() {
        let (mut inside, mut total) = (0, 0);
        for seed in 10..20 {
            let g = ActionGenerator::new(data_spec(3.0), seed).unwrap();
            let bank = ActionPoseBank2D::train(&g.samples(40, seed + 100), g.labels(), PoseFeatureSpec::chain(4), &fit()).unwrap();
            for s in g.samples(50, 1234) {
                total += 1;
                inside += usize::from(weak_accept(&bank, &format!("action{}", s.action), &s.pose).unwrap().accepted);
            }
        }
        let rate = inside as f64 / total as f64;
        assert!(rate >= 0.9, "acceptance {rate}");
    }

    #[test]
    fn nothing_accepted_leaves_bank_unchanged() {
        let (g, mut bank) = small_bank(13);
        for c in &mut bank.clusters {
            c.radius = -1.0;
        }
        let weak: Vec<WeakSample> =
            g.samples(5, 3).into_iter().map(|s| WeakSample { global: s.global, label: format!("action{}", s.action) }).collect();
        let (updated, report) = weak_retrain(&bank, &weak, true, &fit()).unwrap();
        assert_eq!(report.accepted, 0);
        assert_eq!(report.rejected, weak.len());
        assert_eq!(serde_json::to_string(&updated).unwrap(), serde_json::to_string(&bank).unwrap());
    }

    // Self-labelled poses carry no new information, so per seed the change
    // is small either way; the median over seeds must not be an increase.
    #[test]
    fn ungated_true_weak_data_does_not_hurt() {
        let mut deltas = Vec::new();
        for seed in 10..20 {
            let (g, bank) = small_bank(seed);
            let weak: Vec<WeakSample> = g
                .samples(20, 500)
                .into_iter()
                .map(|s| WeakSample { global: s.global, label: format!("action{}", s.action) })
                .collect();
            let (updated, report) = weak_retrain(&bank, &weak, false, &fit()).unwrap();
            assert_eq!(report.accepted, weak.len());
            let held = g.samples(40, 501);
            let gt: Vec<Pose2D> = held.iter().map(|s| s.pose.clone()).collect();
            let score = |b: &ActionPoseBank2D| {
                let est: Vec<Pose2D> = held.iter().map(|s| weighted_pose(b, &s.global).unwrap().0).collect();
                pose_rmse(&est, &gt).unwrap()
            };
            deltas.push(score(&updated) - score(&bank));
        }
        deltas.sort_by(f64::total_cmp);
        let median = 0.5 * (deltas[4] + deltas[5]);
        assert!(median <= 0.0, "{deltas:?}");
    }

    #[test]
    fn refinement_helps_when_poses_separate_actions() {
        let spec = EnsembleDataSpec { appearance_mix: 1.0, ..data_spec(0.05) };
        let mut wins = 0;
        for seed in 0..3 {
            let g = ActionGenerator::new(spec.clone(), seed).unwrap();
            let train = g.samples(30, seed + 40);
            let bank = ActionPoseBank2D::train(&train, g.labels(), PoseFeatureSpec::chain(4), &fit()).unwrap();
            let test = g.samples(40, seed + 80);
            let (mut initial, mut refined) = (0, 0);
            for s in &test {
                let r = iterative_refine(&bank, &s.global, 5).unwrap();
                initial += usize::from(argmax(&r.initial_posterior) == s.action);
                refined += usize::from(argmax(&r.posterior) == s.action);
            }
            wins += usize::from(refined >= initial);
        }
        assert!(wins >= 2);
    }

    #[test]
    fn cluster_radius_formula() {
        let feats = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]];
        let c = PoseCluster::fit(&feats).unwrap();
        assert_eq!(c.centroid, vec![1.0, 1.0]);
        // all distances equal sqrt(2): sd 0
        assert!((c.radius - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn merge_examples() {
        let p = Pose2D::new(vec![[1.0, 2.0], [3.0, -1.0]]);
        let q = Pose2D::new(vec![[0.0, 0.0], [1.0, 1.0]]);
        let r = Pose2D::new(vec![[-2.0, 4.0], [5.0, 5.0]]);
        let w = DMatrix::from_row_slice(2, 3, &[0.2, 0.3, 0.5, 0.2, 0.3, 0.5]);
        let m = MergerModel::new(w).unwrap();
        assert_eq!(merge_poses(&m, &[p.clone(), p.clone(), p.clone()]).unwrap(), p);
        let merged = merge_poses(&m, &[p.clone(), q.clone(), r.clone()]).unwrap();
        for j in 0..2 {
            for c in 0..2 {
                let want = 0.2 * p.joints[j][c] + 0.3 * q.joints[j][c] + 0.5 * r.joints[j][c];
                assert!((merged.joints[j][c] - want).abs() < 1e-12);
            }
        }
        let one_hot = MergerModel::new(DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(merge_poses(&one_hot, &[p.clone(), q.clone(), r]).unwrap(), q);
        assert!(merge_poses(&one_hot, &[p, q]).is_err());
        assert!(MergerModel::new(DMatrix::from_row_slice(1, 2, &[0.7, 0.7])).is_err());
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_to_simplex(&[5.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    fn noisy(p: &Pose2D, sd: f64, rng: &mut ChaCha8Rng) -> Pose2D {
        let n = Normal::new(0.0, sd).unwrap();
        Pose2D::new(p.joints.iter().map(|j| [j[0] + n.sample(rng), j[1] + n.sample(rng)]).collect())
    }

    fn truth(n: usize, rng: &mut ChaCha8Rng) -> Vec<Pose2D> {
        let u = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| Pose2D::new((0..3).map(|_| [u.sample(rng), u.sample(rng)]).collect())).collect()
    }

    #[test]
    fn merger_finds_the_exact_expert() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = truth(50, &mut rng);
        let zero = Pose2D::new(vec![[0.0, 0.0]; 3]);
        let mut outputs = Vec::new();
        for p in &gt {
            outputs.push(vec![noisy(p, 1.0, &mut rng), p.clone(), noisy(&zero, 2.0, &mut rng)]);
        }
        let m = fit_merger(&outputs, &gt).unwrap();
        for j in 0..3 {
            assert!(m.weights[(j, 1)] >= 0.9, "{}", m.weights);
        }
        let uniform = MergerModel::uniform(3, 3);
        assert!(merger_loss(&m, &outputs, &gt).unwrap() <= merger_loss(&uniform, &outputs, &gt).unwrap());
    }

    #[test]
    fn merger_balances_equal_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = truth(400, &mut rng);
        let outputs: Vec<Vec<Pose2D>> = gt.iter().map(|p| vec![noisy(p, 0.5, &mut rng), noisy(p, 0.5, &mut rng)]).collect();
        let m = fit_merger(&outputs, &gt).unwrap();
        for j in 0..3 {
            assert!((m.weights[(j, 0)] - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn merger_with_identical_experts() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gt = truth(10, &mut rng);
        let outputs: Vec<Vec<Pose2D>> = gt.iter().map(|p| vec![p.clone(), p.clone()]).collect();
        let m = fit_merger(&outputs, &gt).unwrap();
        for j in 0..3 {
            assert!((m.weights.row(j).sum() - 1.0).abs() < 1e-12);
        }
        assert!(fit_merger(&[], &[]).is_err());
    }

    #[test]
    fn weak_gate_rejects_wrong_labels() {
        let (g, bank) = small_bank(6);
        let weak: Vec<WeakSample> = g
            .samples(20, 77)
            .into_iter()
            .map(|s| WeakSample { global: s.global, label: format!("action{}", 1 - s.action) })
            .collect();
        let (_, report) = weak_retrain(&bank, &weak, true, &fit()).unwrap();
        let rate = report.rejected as f64 / weak.len() as f64;
        assert!(rate >= 0.8, "{report:?}");
    }
}
