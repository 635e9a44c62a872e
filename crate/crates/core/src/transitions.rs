//! Transition paths between independently recorded actions.
//!
//! Two bank layouts are supported. In *separate* mode every action gets its
//! own GPDM and directed paths connect the models; in *unified* mode one GPDM
//! covers all actions and a topological penalty pulls matched frames of
//! different actions together before paths are laid between them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::rows::{from_rows, sqdist_rows, to_rows};
use crate::latent::{gpdm_fit, project_to_latent, GpdmModel, GpdmOptions};
use crate::skeleton::{FeatureSequence, MotionSequence};

/// Index pair `(frame in a, frame in b)` with their pose-space distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionPair {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// The `k` closest cross-sequence frame pairs, ordered by distance, then by
/// index in `a`, then by index in `b`.
pub fn find_transition_pairs(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> Result<Vec<TransitionPair>> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid("transition pair search needs non-empty sequences"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::invalid("sequences have different pose dimensions"));
    }
    if k == 0 || k > a.nrows() * b.nrows() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", a.nrows() * b.nrows())));
    }
    let mut all: Vec<TransitionPair> = (0..a.nrows())
        .flat_map(|i| (0..b.nrows()).map(move |j| (i, j)))
        .map(|(i, j)| TransitionPair { a: i, b: j, distance: sqdist_rows(a, i, b, j).sqrt() })
        .collect();
    all.sort_by(|p, q| p.distance.total_cmp(&q.distance).then(p.a.cmp(&q.a)).then(p.b.cmp(&q.b)));
    all.truncate(k);
    Ok(all)
}

/// Waypoints and cost of a synthesized path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGeometry {
    pub waypoints: Vec<Vec<f64>>,
    pub cost: f64,
    /// Cost of the straight-line initialisation.
    pub initial_cost: f64,
}

/// `Σ‖w_{i+1}−w_i‖² + λ·Σ‖w_{i+1}−2w_i+w_{i−1}‖²`
pub fn path_cost(waypoints: &[Vec<f64>], smooth_weight: f64) -> f64 {
    let sq = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>();
    let length: f64 = waypoints
        .windows(2)
        .map(|w| sq(&mut w[1].iter().zip(&w[0]).map(|(a, b)| a - b)))
        .sum();
    let curvature: f64 = waypoints
        .windows(3)
        .map(|w| sq(&mut (0..w[0].len()).map(|c| w[2][c] - 2.0 * w[1][c] + w[0][c])))
        .sum();
    length + smooth_weight * curvature
}

fn path_gradient(w: &[Vec<f64>], smooth_weight: f64) -> Vec<Vec<f64>> {
    let n = w.len();
    let d = w[0].len();
    let mut g = vec![vec![0.0; d]; n];
    for i in 0..n - 1 {
        for c in 0..d {
            let diff = 2.0 * (w[i + 1][c] - w[i][c]);
            g[i + 1][c] += diff;
            g[i][c] -= diff;
        }
    }
    for i in 1..n - 1 {
        for c in 0..d {
            let s = 2.0 * smooth_weight * (w[i + 1][c] - 2.0 * w[i][c] + w[i - 1][c]);
            g[i + 1][c] += s;
            g[i][c] -= 2.0 * s;
            g[i - 1][c] += s;
        }
    }
    g
}

/// Smooth, short path from `start` to `end` with both endpoints fixed,
/// found by gradient descent from the evenly spaced straight line.
pub fn synthesize_path(
    start: &[f64],
    end: &[f64],
    model: &GpdmModel,
    n_waypoints: usize,
    smooth_weight: f64,
) -> Result<PathGeometry> {
    if n_waypoints < 2 {
        return Err(Error::invalid("a path needs at least 2 waypoints"));
    }
    if !(smooth_weight >= 0.0) {
        return Err(Error::invalid("smoothness weight must be non-negative"));
    }
    let d = model.latent_dim();
    if start.len() != d || end.len() != d {
        return Err(Error::invalid(format!("path endpoints must be {d}-vectors")));
    }
    let mut w: Vec<Vec<f64>> = (0..n_waypoints)
        .map(|i| {
            let t = i as f64 / (n_waypoints - 1) as f64;
            start.iter().zip(end).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect();
    w[n_waypoints - 1] = end.to_vec();
    let initial_cost = path_cost(&w, smooth_weight);
    if !initial_cost.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    // Step below 1/L, L bounding the Hessian's spectrum (8 + 32λ).
    let step = 1.0 / (8.0 + 32.0 * smooth_weight);
    let mut cost = initial_cost;
    for iteration in 1..=20_000 {
        let g = path_gradient(&w, smooth_weight);
        let gnorm: f64 = g[1..n_waypoints - 1].iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-13 {
            break;
        }
        let mut trial = w.clone();
        for i in 1..n_waypoints - 1 {
            for c in 0..d {
                trial[i][c] -= step * g[i][c];
            }
        }
        let next = path_cost(&trial, smooth_weight);
        if !next.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        if next > cost {
            break;
        }
        w = trial;
        cost = next;
    }
    Ok(PathGeometry { waypoints: w, cost, initial_cost })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    Unified,
    Separate,
}

/// A synthesized transition from one action to another.
///
/// In separate mode the waypoints live in the destination model's latent
/// space: the first waypoint is the exit frame's image there, and
/// `src_exit_point` keeps the exit latent in the source space so particles can
/// be gated on proximity. In unified mode both spaces coincide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionPath {
    pub src_model: usize,
    pub dst_model: usize,
    pub src_action: String,
    pub dst_action: String,
    pub src_exit_index: usize,
    pub dst_entry_index: usize,
    pub src_exit_point: Vec<f64>,
    pub waypoints: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Training data of one action: poses and the matching observations.
#[derive(Clone, Debug)]
pub struct ActionTrainingSet {
    pub poses: MotionSequence,
    pub features: FeatureSequence,
}

impl ActionTrainingSet {
    pub fn new(poses: MotionSequence, features: FeatureSequence) -> Result<Self> {
        if poses.len() != features.len() {
            return Err(Error::invalid("poses and features must have the same number of frames"));
        }
        Ok(ActionTrainingSet { poses, features })
    }

    pub fn label(&self) -> &str {
        &self.poses.action_label
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BankOptions {
    pub latent_dim: usize,
    pub k_paths: usize,
    pub n_waypoints: usize,
    pub smooth_weight: f64,
    pub gpdm: GpdmOptions,
}

impl Default for BankOptions {
    fn default() -> Self {
        BankOptions { latent_dim: 3, k_paths: 3, n_waypoints: 6, smooth_weight: 1.0, gpdm: GpdmOptions::default() }
    }
}

/// Motion models with their transition paths.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "BankDoc", into = "BankDoc")]
pub struct ModelBank {
    mode: BankMode,
    actions: Vec<String>,
    models: Vec<GpdmModel>,
    /// Training poses aligned with each model's latent rows.
    model_poses: Vec<DMatrix<f64>>,
    /// `(first row, row count)` of each action inside each model.
    action_rows: Vec<(usize, usize, usize)>,
    /// Transition frame pairs as global latent rows of the unified model.
    topo_pairs: Vec<(usize, usize)>,
    paths: Vec<TransitionPath>,
}

#[derive(Serialize, Deserialize)]
struct BankDoc {
    mode: BankMode,
    actions: Vec<String>,
    models: Vec<GpdmModel>,
    model_poses: Vec<Vec<Vec<f64>>>,
    pose_dim: usize,
    action_rows: Vec<(usize, usize, usize)>,
    topo_pairs: Vec<(usize, usize)>,
    paths: Vec<TransitionPath>,
}

impl From<ModelBank> for BankDoc {
    fn from(b: ModelBank) -> Self {
        BankDoc {
            mode: b.mode,
            pose_dim: b.model_poses.first().map_or(0, |m| m.ncols()),
            model_poses: b.model_poses.iter().map(to_rows).collect(),
            actions: b.actions,
            models: b.models,
            action_rows: b.action_rows,
            topo_pairs: b.topo_pairs,
            paths: b.paths,
        }
    }
}

impl TryFrom<BankDoc> for ModelBank {
    type Error = Error;

    fn try_from(doc: BankDoc) -> Result<Self> {
        let model_poses = doc
            .model_poses
            .iter()
            .map(|rows| from_rows(rows, doc.pose_dim))
            .collect::<Result<Vec<_>>>()?;
        let bank = ModelBank {
            mode: doc.mode,
            actions: doc.actions,
            models: doc.models,
            model_poses,
            action_rows: doc.action_rows,
            topo_pairs: doc.topo_pairs,
            paths: doc.paths,
        };
        bank.validate()?;
        Ok(bank)
    }
}

impl ModelBank {
    fn validate(&self) -> Result<()> {
        match self.mode {
            BankMode::Unified if self.models.len() != 1 => {
                return Err(Error::invalid("a unified bank holds exactly one model"))
            }
            BankMode::Separate if self.models.len() != self.actions.len() => {
                return Err(Error::invalid("a separate bank holds one model per action"))
            }
            _ => {}
        }
        if self.model_poses.len() != self.models.len() {
            return Err(Error::invalid("every model needs its training poses"));
        }
        for (m, poses) in self.models.iter().zip(&self.model_poses) {
            if poses.nrows() != m.base().len() {
                return Err(Error::invalid("training poses do not align with latent rows"));
            }
        }
        for p in &self.paths {
            if p.src_model >= self.models.len() || p.dst_model >= self.models.len() || p.waypoints.len() < 2 {
                return Err(Error::invalid("transition path references an unknown model"));
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> BankMode {
        self.mode
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn models(&self) -> &[GpdmModel] {
        &self.models
    }

    pub fn model(&self, id: usize) -> &GpdmModel {
        &self.models[id]
    }

    pub fn model_poses(&self, id: usize) -> &DMatrix<f64> {
        &self.model_poses[id]
    }

    pub fn paths(&self) -> &[TransitionPath] {
        &self.paths
    }

    pub fn topo_pairs(&self) -> &[(usize, usize)] {
        &self.topo_pairs
    }

    /// Same models with every transition path removed (the ablation arm).
    pub fn without_paths(&self) -> ModelBank {
        ModelBank { paths: Vec::new(), ..self.clone() }
    }

    /// Label of the action a model represents (unified: all actions joined by `+`).
    pub fn model_label(&self, id: usize) -> String {
        match self.mode {
            BankMode::Separate => self.actions[id].clone(),
            BankMode::Unified => self.actions.join("+"),
        }
    }

    /// Action owning latent row `row` of model `id`.
    pub fn action_of_row(&self, id: usize, row: usize) -> Option<&str> {
        self.action_rows
            .iter()
            .position(|&(m, start, len)| m == id && row >= start && row < start + len)
            .map(|i| self.actions[i].as_str())
    }

    /// Mean latent distance between the frames of each transition pair.
    pub fn mean_transition_distance(&self) -> f64 {
        if self.topo_pairs.is_empty() {
            return 0.0;
        }
        let x = self.models[0].base().latents();
        self.topo_pairs.iter().map(|&(a, b)| sqdist_rows(x, a, x, b).sqrt()).sum::<f64>()
            / self.topo_pairs.len() as f64
    }

    /// Median nearest-neighbour distance between training latents, pooled over models.
    pub fn median_latent_spacing(&self) -> f64 {
        let mut d: Vec<f64> = Vec::new();
        for m in &self.models {
            let x = m.base().latents();
            for i in 0..x.nrows() {
                let nn = (0..x.nrows())
                    .filter(|&j| j != i)
                    .map(|j| sqdist_rows(x, i, x, j).sqrt())
                    .fold(f64::INFINITY, f64::min);
                if nn.is_finite() {
                    d.push(nn);
                }
            }
        }
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_sets(sets: &[ActionTrainingSet]) -> Result<()> {
    if sets.len() < 2 {
        return Err(Error::invalid("a bank needs at least 2 actions"));
    }
    for s in sets {
        if s.poses.len() < 3 {
            return Err(Error::invalid(format!("action `{}` has fewer than 3 frames", s.label())));
        }
    }
    Ok(())
}

pub fn build_separate_bank(sets: &[ActionTrainingSet], opts: &BankOptions) -> Result<ModelBank> {
    check_sets(sets)?;
    let mut models = Vec::with_capacity(sets.len());
    for s in sets {
        models.push(gpdm_fit(&[s.features.to_matrix()], opts.latent_dim, &opts.gpdm)?);
    }
    let poses: Vec<DMatrix<f64>> = sets.iter().map(|s| s.poses.to_matrix()).collect();
    let mut paths = Vec::new();
    for (src, src_model) in models.iter().enumerate() {
        for (dst, dst_model) in models.iter().enumerate() {
            if src == dst {
                continue;
            }
            for pair in find_transition_pairs(&poses[src], &poses[dst], opts.k_paths)? {
                let entry = dst_model.base().latent_point(pair.b);
                let exit_obs = &sets[src].features.frames[pair.a].values;
                let start = project_to_latent(dst_model.base(), exit_obs, &entry)?;
                let geom = synthesize_path(&start, &entry, dst_model, opts.n_waypoints, opts.smooth_weight)?;
                paths.push(TransitionPath {
                    src_model: src,
                    dst_model: dst,
                    src_action: sets[src].label().to_string(),
                    dst_action: sets[dst].label().to_string(),
                    src_exit_index: pair.a,
                    dst_entry_index: pair.b,
                    src_exit_point: src_model.base().latent_point(pair.a),
                    waypoints: geom.waypoints,
                    cost: geom.cost,
                });
            }
        }
    }
    let bank = ModelBank {
        mode: BankMode::Separate,
        actions: sets.iter().map(|s| s.label().to_string()).collect(),
        action_rows: sets.iter().enumerate().map(|(i, s)| (i, 0, s.poses.len())).collect(),
        models,
        model_poses: poses,
        topo_pairs: Vec::new(),
        paths,
    };
    bank.validate()?;
    Ok(bank)
}

/// Global row pairs of the top `k` pose-space matches for every pair of actions.
pub(crate) fn unified_topo_pairs(sets: &[ActionTrainingSet], k: usize) -> Result<Vec<(usize, usize, usize, usize)>> {
    let offsets: Vec<usize> = sets
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.poses.len();
            Some(o)
        })
        .collect();
    let poses: Vec<DMatrix<f64>> = sets.iter().map(|s| s.poses.to_matrix()).collect();
    let mut out = Vec::new();
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            for p in find_transition_pairs(&poses[a], &poses[b], k)? {
                out.push((a, b, offsets[a] + p.a, offsets[b] + p.b));
            }
        }
    }
    Ok(out)
}

pub fn build_unified_bank(sets: &[ActionTrainingSet], opts: &BankOptions, topo_weight: f64) -> Result<ModelBank> {
    check_sets(sets)?;
    if !(topo_weight >= 0.0) {
        return Err(Error::invalid("topological weight must be non-negative"));
    }
    let matches = unified_topo_pairs(sets, opts.k_paths)?;
    let topo_pairs: Vec<(usize, usize)> = matches.iter().map(|&(_, _, ga, gb)| (ga, gb)).collect();
    let gpdm_opts = GpdmOptions { topo_pairs: topo_pairs.clone(), topo_weight, ..opts.gpdm.clone() };
    let blocks: Vec<DMatrix<f64>> = sets.iter().map(|s| s.features.to_matrix()).collect();
    let model = gpdm_fit(&blocks, opts.latent_dim, &gpdm_opts)?;

    let mut paths = Vec::new();
    for &(a, b, ga, gb) in &matches {
        for (src, dst, from, to) in [(a, b, ga, gb), (b, a, gb, ga)] {
            let start = model.base().latent_point(from);
            let end = model.base().latent_point(to);
            let geom = synthesize_path(&start, &end, &model, opts.n_waypoints, opts.smooth_weight)?;
            paths.push(TransitionPath {
                src_model: 0,
                dst_model: 0,
                src_action: sets[src].label().to_string(),
                dst_action: sets[dst].label().to_string(),
                src_exit_index: from,
                dst_entry_index: to,
                src_exit_point: start,
                waypoints: geom.waypoints,
                cost: geom.cost,
            });
        }
    }
    let pose_rows: Vec<DMatrix<f64>> = sets.iter().map(|s| s.poses.to_matrix()).collect();
    let dof = pose_rows[0].ncols();
    let total: usize = pose_rows.iter().map(|m| m.nrows()).sum();
    let mut stacked = DMatrix::zeros(total, dof);
    let mut action_rows = Vec::new();
    let mut row = 0;
    for m in &pose_rows {
        stacked.rows_mut(row, m.nrows()).copy_from(m);
        action_rows.push((0, row, m.nrows()));
        row += m.nrows();
    }
    let bank = ModelBank {
        mode: BankMode::Unified,
        actions: sets.iter().map(|s| s.label().to_string()).collect(),
        models: vec![model],
        model_poses: vec![stacked],
        action_rows,
        topo_pairs,
        paths,
    };
    bank.validate()?;
    Ok(bank)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::latent::{KernelParams, LatentModel, LatentObjective};
    use nalgebra::DVector;

    fn toy_model(d: usize) -> GpdmModel {
        let x = DMatrix::from_fn(4, d, |i, c| (i + c) as f64 * 0.3);
        let y = DMatrix::from_fn(4, d + 1, |i, c| (i * c) as f64 * 0.1);
        let base = LatentModel::new(x, y, DVector::zeros(d + 1), KernelParams::new(1.0, 1.0, 0.01).unwrap()).unwrap();
        GpdmModel::new(base, KernelParams::new(1.0, 1.0, 0.01).unwrap(), vec![4]).unwrap()
    }

    #[test]
    fn identical_pose_ranks_first() {
        let a = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 5.0, 5.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 3.0, 1.0, 1.0]);
        let p = find_transition_pairs(&a, &b, 2).unwrap();
        assert_eq!((p[0].a, p[0].b, p[0].distance), (1, 1, 0.0));
        assert!(p[1].distance >= p[0].distance);
    }

    #[test]
    fn brute_force_minimum_on_grid() {
        let a = DMatrix::from_row_slice(3, 1, &[0.0, 2.0, 7.0]);
        let b = DMatrix::from_row_slice(3, 1, &[4.5, 9.0, -3.0]);
        let p = find_transition_pairs(&a, &b, 1).unwrap();
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..3 {
            for j in 0..3 {
                let d = (a[(i, 0)] - b[(j, 0)]).abs();
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        assert_eq!((p[0].a, p[0].b), (best.1, best.2));
        assert_eq!(p[0].distance, best.0);
    }

    #[test]
    fn ties_prefer_lower_a_index() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 5.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[9.0, 1.0]);
        let p = find_transition_pairs(&a, &b, 2).unwrap();
        assert_eq!((p[0].a, p[0].b), (0, 1));
        assert_eq!((p[1].a, p[1].b), (2, 1));
        assert!(find_transition_pairs(&a, &b, 7).is_err());
        assert!(find_transition_pairs(&a, &b, 0).is_err());
    }

    #[test]
    fn degenerate_path_has_zero_cost() {
        let m = toy_model(2);
        let g = synthesize_path(&[0.4, -0.2], &[0.4, -0.2], &m, 5, 1.0).unwrap();
        assert_eq!(g.cost, 0.0);
        assert!(g.waypoints.iter().all(|w| w == &vec![0.4, -0.2]));
    }

    #[test]
    fn length_only_path_is_straight() {
        let m = toy_model(2);
        let g = synthesize_path(&[0.0, 0.0], &[1.0, 2.0], &m, 7, 0.0).unwrap();
        for w in &g.waypoints {
            // collinear with the segment: cross product with (1, 2) vanishes
            assert!((w[0] * 2.0 - w[1]).abs() < 1e-6);
        }
        assert!(g.cost <= g.initial_cost);
        assert_eq!(g.waypoints[0], vec![0.0, 0.0]);
        assert_eq!(g.waypoints[6], vec![1.0, 2.0]);
    }

    #[test]
    fn path_rejects_bad_arguments() {
        let m = toy_model(2);
        assert!(synthesize_path(&[0.0, 0.0], &[1.0, 0.0], &m, 1, 1.0).is_err());
        assert!(synthesize_path(&[0.0, 0.0], &[1.0, 0.0], &m, 4, -1.0).is_err());
        assert!(synthesize_path(&[0.0], &[1.0, 0.0], &m, 4, 1.0).is_err());
    }

    #[test]
    fn cost_formula_by_hand() {
        let w = vec![vec![0.0], vec![1.0], vec![3.0]];
        // lengths 1 + 4, curvature (3 - 2 + 0)^2 = 1
        assert_eq!(path_cost(&w, 2.0), 5.0 + 2.0);
    }

    #[test]
    fn quadratic_path_matches_dense_solve() {
        // cost = ‖D1 w‖² + λ‖D2 w‖² per coordinate; interior rows of the
        // normal equations give H_II w_I = −H_IB w_B.
        let (n, lambda) = (5, 1.0);
        let d1 = DMatrix::<f64>::from_fn(n - 1, n, |r, c| if c == r + 1 { 1.0 } else if c == r { -1.0 } else { 0.0 });
        let d2 = DMatrix::<f64>::from_fn(n - 2, n, |r, c| match c as isize - r as isize {
            0 | 2 => 1.0,
            1 => -2.0,
            _ => 0.0,
        });
        let h: DMatrix<f64> = d1.transpose() * &d1 + lambda * d2.transpose() * &d2;
        let interior: Vec<usize> = (1..n - 1).collect();
        let h_ii = DMatrix::from_fn(n - 2, n - 2, |r, c| h[(interior[r], interior[c])]);
        let m = toy_model(2);
        let (start, end) = ([0.0, 0.0], [1.0, 0.0]);
        let g = synthesize_path(&start, &end, &m, n, lambda).unwrap();
        for c in 0..2 {
            let rhs = DVector::from_fn(n - 2, |r, _| -(h[(interior[r], 0)] * start[c] + h[(interior[r], n - 1)] * end[c]));
            let sol = h_ii.clone().lu().solve(&rhs).unwrap();
            for (r, &i) in interior.iter().enumerate() {
                assert!((g.waypoints[i][c] - sol[r]).abs() < 1e-8, "waypoint {i} coord {c}");
            }
        }
    }

    #[test]
    fn curved_start_is_straightened() {
        let w = vec![vec![0.0, 0.0], vec![0.3, 0.9], vec![1.0, 0.0]];
        let straight = vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]];
        assert!(path_cost(&straight, 1.0) < path_cost(&w, 1.0));
    }

    pub(crate) fn training_set(label: &str, frames: usize, seed: u64) -> ActionTrainingSet {
        use crate::skeleton::{catalog_action, default_observation_model, generate_synthetic_action, observe_sequence};
        let spec = catalog_action(label).unwrap();
        let poses = generate_synthetic_action(&spec, frames, 0.01, seed).unwrap();
        let obs = default_observation_model(poses.dim(), 7);
        let features = observe_sequence(&poses, &obs, seed + 1).unwrap();
        ActionTrainingSet::new(poses, features).unwrap()
    }

    fn quick_options() -> BankOptions {
        let mut o = BankOptions { k_paths: 2, ..BankOptions::default() };
        o.gpdm.fit.max_iters = 150;
        o
    }

    #[test]
    fn separate_bank_connects_every_ordered_pair() {
        let sets = [training_set("walk", 24, 1), training_set("jog", 24, 2)];
        let bank = build_separate_bank(&sets, &quick_options()).unwrap();
        assert_eq!(bank.models().len(), 2);
        assert_eq!(bank.paths().len(), 4);
        for p in bank.paths() {
            let entry = bank.model(p.dst_model).base().latent_point(p.dst_entry_index);
            let exit = bank.model(p.src_model).base().latent_point(p.src_exit_index);
            let last = p.waypoints.last().unwrap();
            assert!(last.iter().zip(&entry).all(|(a, b)| (a - b).abs() < 1e-9));
            assert!(p.src_exit_point.iter().zip(&exit).all(|(a, b)| (a - b).abs() < 1e-9));
            assert!(p.cost >= 0.0);
        }
        let back = ModelBank::from_json(&bank.to_json().unwrap()).unwrap();
        assert_eq!(back.paths(), bank.paths());
        assert_eq!(back.mode(), BankMode::Separate);
        assert!(bank.without_paths().paths().is_empty());
    }

    #[test]
    fn separate_bank_needs_three_frames_per_action() {
        let mut short = training_set("walk", 24, 1);
        short.poses.frames.truncate(2);
        short.features.frames.truncate(2);
        let sets = [short, training_set("jog", 24, 2)];
        assert!(matches!(build_separate_bank(&sets, &quick_options()), Err(Error::InvalidInput(_))));
        assert!(build_separate_bank(&sets[1..], &quick_options()).is_err());
    }

    #[test]
    fn identical_actions_give_cheaper_paths() {
        let opts = quick_options();
        let twin = [training_set("walk", 24, 1), training_set("walk", 24, 1)];
        let distinct = [training_set("walk", 24, 1), training_set("kick", 24, 1)];
        let best = |bank: &ModelBank| bank.paths().iter().map(|p| p.cost).fold(f64::INFINITY, f64::min);
        let twin_best = best(&build_separate_bank(&twin, &opts).unwrap());
        let distinct_bank = build_separate_bank(&distinct, &opts).unwrap();
        let distinct_min = best(&distinct_bank);
        assert!(twin_best < distinct_min, "{twin_best} vs {distinct_min}");
    }

    #[test]
    fn unified_zero_weight_objective_is_plain_gpdm() {
        use crate::latent::gpdm::{gpdm_objective, stacked};
        let sets = [training_set("walk", 12, 1), training_set("jog", 12, 2)];
        let blocks: Vec<DMatrix<f64>> = sets.iter().map(|s| s.features.to_matrix()).collect();
        let (yc, _, lengths) = stacked(&blocks, 2).unwrap();
        let pairs: Vec<(usize, usize)> =
            unified_topo_pairs(&sets, 2).unwrap().iter().map(|&(_, _, a, b)| (a, b)).collect();
        let plain = gpdm_objective(&yc, 2, &lengths, &GpdmOptions::default());
        let zero = GpdmOptions { topo_pairs: pairs, topo_weight: 0.0, ..GpdmOptions::default() };
        let penalized = gpdm_objective(&yc, 2, &lengths, &zero);
        let x = crate::latent::gplvm::tests::random_matrix(24, 2, 3);
        let k = KernelParams::new(1.0, 1.0, 0.1).unwrap();
        let p = LatentObjective::pack(&x, &k, Some(&k));
        assert_eq!(plain.value(&p).unwrap(), penalized.value(&p).unwrap());
        assert_eq!(plain.value_and_gradient(&p).unwrap().1, penalized.value_and_gradient(&p).unwrap().1);
    }

    #[test]
    fn penalty_pulls_pairs_together() {
        let sets = [training_set("walk", 20, 1), training_set("kick", 20, 2)];
        let opts = quick_options();
        let dist: Vec<f64> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&w| build_unified_bank(&sets, &opts, w).unwrap().mean_transition_distance())
            .collect();
        assert!(dist[2] < dist[0], "{dist:?}");
        assert!(dist[1] <= dist[0] && dist[2] <= dist[1], "{dist:?}");
    }

    #[test]
    fn unified_bank_layout() {
        let sets = [training_set("walk", 16, 1), training_set("jog", 16, 2)];
        let bank = build_unified_bank(&sets, &quick_options(), 1.0).unwrap();
        assert_eq!(bank.models().len(), 1);
        assert_eq!(bank.paths().len(), 4);
        assert_eq!(bank.model_poses(0).nrows(), 32);
        assert_eq!(bank.action_of_row(0, 3), Some("walk"));
        assert_eq!(bank.action_of_row(0, 20), Some("jog"));
        let x = bank.model(0).base();
        for p in bank.paths() {
            let first = &p.waypoints[0];
            let last = p.waypoints.last().unwrap();
            assert_eq!(first, &x.latent_point(p.src_exit_index));
            assert_eq!(last, &x.latent_point(p.dst_entry_index));
        }
    }
}
