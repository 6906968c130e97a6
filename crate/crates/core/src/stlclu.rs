//! Strict-to-loose pseudo-labeling.
//!
//! DBSCAN hyperparameters are calibrated once on labeled features, then
//! loosened every epoch (larger radius, smaller density threshold). After
//! each epoch the actions stored in the [`ActionMemory`] of samples without
//! ground truth are clustered; non-noise points receive pseudo-labels that
//! never change afterwards.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalkit::hungarian_max;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid cluster parameters: {0}")]
    Params(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("action for sample {sample} has width {got}, expected {expected}")]
    Dimension {
        sample: usize,
        got: usize,
        expected: usize,
    },
    #[error("sample {0} already has an action this epoch")]
    DuplicateAction(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self, ClusterError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(ClusterError::Params(format!("eps must be positive, got {eps}")));
        }
        if min_pts == 0 {
            return Err(ClusterError::Params("min_pts must be at least 1".into()));
        }
        Ok(Self { eps, min_pts })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSchedule {
    pub eps_growth: f64,
    pub min_pts_decrement: usize,
    pub min_pts_floor: usize,
}

impl Default for RelaxationSchedule {
    fn default() -> Self {
        Self {
            eps_growth: 1.3,
            min_pts_decrement: 1,
            min_pts_floor: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Euclidean distance between L2-normalized vectors.
    Cosine,
}

/// Parameters for `epoch` (0-based): `eps·growth^epoch` and
/// `max(floor, min_pts − decrement·epoch)`, never tighter than the base.
pub fn relax(params: ClusterParams, schedule: &RelaxationSchedule, epoch: u32) -> ClusterParams {
    let eps = params.eps * schedule.eps_growth.powi(epoch as i32);
    let min_pts = params
        .min_pts
        .saturating_sub(schedule.min_pts_decrement.saturating_mul(epoch as usize))
        .max(schedule.min_pts_floor)
        .min(params.min_pts)
        .max(1);
    ClusterParams { eps, min_pts }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn prepare(points: &[Vec<f64>], metric: Metric) -> Vec<Vec<f64>> {
    match metric {
        Metric::Euclidean => points.to_vec(),
        Metric::Cosine => points
            .iter()
            .map(|p| {
                let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    p.iter().map(|v| v / n).collect()
                } else {
                    p.clone()
                }
            })
            .collect(),
    }
}

fn distance_matrix(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&points[i], &points[j]).sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// DBSCAN over Euclidean distance. Returns a cluster id per point (ids are
/// numbered in discovery order) or `None` for noise.
///
/// A point is core when at least `min_pts` points, itself included, lie
/// within `eps`. Points are scanned in index order, and a border point
/// belongs to the first cluster that reaches it.
pub fn dbscan(points: &[Vec<f64>], params: ClusterParams) -> Vec<Option<usize>> {
    dbscan_with(points, params, Metric::Euclidean)
}

pub fn dbscan_with(points: &[Vec<f64>], params: ClusterParams, metric: Metric) -> Vec<Option<usize>> {
    let points = prepare(points, metric);
    dbscan_on_distances(&distance_matrix(&points), points.len(), params)
}

fn dbscan_on_distances(dist: &[f64], n: usize, params: ClusterParams) -> Vec<Option<usize>> {
    let hoods: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= params.eps).collect())
        .collect();
    let is_core: Vec<bool> = hoods.iter().map(|h| h.len() >= params.min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = Vec::new();
    for start in 0..n {
        if labels[start].is_some() || !is_core[start] {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[start] = Some(cluster);
        queue.clear();
        queue.push(start);
        let mut head = 0;
        while head < queue.len() {
            let p = queue[head];
            head += 1;
            if !is_core[p] {
                continue;
            }
            for &q in &hoods[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    queue.push(q);
                }
            }
        }
    }
    labels
}

pub const CALIBRATION_QUANTILES: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];
pub const CALIBRATION_MIN_PTS: [usize; 5] = [3, 4, 5, 8, 10];
const MIN_EPS: f64 = 1e-12;

/// Score of one calibration grid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationScore {
    pub params: ClusterParams,
    pub accuracy: f64,
    pub noise_fraction: f64,
    pub clusters: usize,
}

/// Hungarian-matched accuracy over the non-noise points, plus the noise
/// fraction. `None` when every point is noise.
pub fn score_assignment(assignment: &[Option<usize>], labels: &[usize]) -> Option<(f64, f64)> {
    let clustered: Vec<(usize, usize)> = assignment
        .iter()
        .zip(labels)
        .filter_map(|(a, &l)| a.map(|c| (c, l)))
        .collect();
    if clustered.is_empty() {
        return None;
    }
    let rows = clustered.iter().map(|p| p.0).max().unwrap() + 1;
    let cols = clustered.iter().map(|p| p.1).max().unwrap() + 1;
    let mut table = vec![vec![0.0; cols]; rows];
    for &(c, l) in &clustered {
        table[c][l] += 1.0;
    }
    let (matched, _) = hungarian_max(&table);
    let accuracy = matched / clustered.len() as f64;
    let noise = 1.0 - clustered.len() as f64 / assignment.len() as f64;
    Some((accuracy, noise))
}

/// Each point's distances to all points (itself included), ascending.
fn sorted_rows(dist: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row.sort_unstable_by(f64::total_cmp);
            row
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Every grid cell with its score, in grid order (min_pts outer, quantile
/// inner).
pub fn calibration_grid(points: &[Vec<f64>], labels: &[usize], metric: Metric) -> Vec<CalibrationScore> {
    let prepared = prepare(points, metric);
    let n = prepared.len();
    if n == 0 {
        return Vec::new();
    }
    let dist = distance_matrix(&prepared);
    let rows = sorted_rows(&dist, n);
    let mut out = Vec::new();
    for &min_pts in &CALIBRATION_MIN_PTS {
        // distance to the min_pts-th nearest point, the point itself counted first
        let mut kd: Vec<f64> = rows.iter().map(|r| r[(min_pts - 1).min(n - 1)]).collect();
        kd.sort_unstable_by(f64::total_cmp);
        for &q in &CALIBRATION_QUANTILES {
            let params = ClusterParams {
                eps: quantile(&kd, q).max(MIN_EPS),
                min_pts,
            };
            let assignment = dbscan_on_distances(&dist, n, params);
            if let Some((accuracy, noise_fraction)) = score_assignment(&assignment, labels) {
                let clusters = assignment.iter().flatten().max().map_or(0, |m| m + 1);
                out.push(CalibrationScore {
                    params,
                    accuracy,
                    noise_fraction,
                    clusters,
                });
            }
        }
    }
    out
}

/// Picks DBSCAN parameters on labeled features: highest matched accuracy of
/// non-noise points, then lowest noise fraction, then smallest eps.
pub fn calibrate(points: &[Vec<f64>], labels: &[usize]) -> Result<ClusterParams, ClusterError> {
    calibrate_with(points, labels, Metric::Euclidean)
}

pub fn calibrate_with(points: &[Vec<f64>], labels: &[usize], metric: Metric) -> Result<ClusterParams, ClusterError> {
    if points.len() != labels.len() {
        return Err(ClusterError::Calibration(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(ClusterError::Calibration(
            "need at least two labeled classes".into(),
        ));
    }
    let grid = calibration_grid(points, labels, metric);
    let best = grid.iter().copied().reduce(|best, cand| {
        let better = cand.accuracy > best.accuracy
            || (cand.accuracy == best.accuracy
                && (cand.noise_fraction < best.noise_fraction
                    || (cand.noise_fraction == best.noise_fraction
                        && cand.params.eps < best.params.eps)));
        if better {
            cand
        } else {
            best
        }
    });
    best.map(|b| b.params).ok_or_else(|| {
        ClusterError::Calibration("every grid cell labels all points as noise".into())
    })
}

/// Actions emitted during the current epoch, keyed by sample id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionMemory {
    dim: Option<usize>,
    actions: BTreeMap<usize, Vec<f64>>,
}

impl ActionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample: usize, action: Vec<f64>) -> Result<(), ClusterError> {
        match self.dim {
            Some(d) if d != action.len() => {
                return Err(ClusterError::Dimension {
                    sample,
                    got: action.len(),
                    expected: d,
                })
            }
            _ => self.dim = Some(action.len()),
        }
        if self.actions.contains_key(&sample) {
            return Err(ClusterError::DuplicateAction(sample));
        }
        self.actions.insert(sample, action);
        Ok(())
    }

    pub fn get(&self, sample: usize) -> Option<&[f64]> {
        self.actions.get(&sample).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        self.actions.clear();
        self.dim = None;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.actions.iter().map(|(&k, v)| (k, v.as_slice()))
    }
}

/// Write-once pseudo-labels. Fresh ids start at the number of labeled
/// classes and only grow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoLabelStore {
    labels: BTreeMap<usize, usize>,
    first_id: usize,
    next_id: usize,
}

impl PseudoLabelStore {
    pub fn new(num_labeled_classes: usize) -> Self {
        Self {
            labels: BTreeMap::new(),
            first_id: num_labeled_classes,
            next_id: num_labeled_classes,
        }
    }

    /// Rebuilds a store from archived parts.
    pub fn from_parts(
        first_id: usize,
        next_id: usize,
        labels: BTreeMap<usize, usize>,
    ) -> Result<Self, ClusterError> {
        if next_id < first_id || labels.values().any(|&l| l < first_id || l >= next_id) {
            return Err(ClusterError::Params(
                "pseudo-label ids outside the allocated range".into(),
            ));
        }
        Ok(Self {
            labels,
            first_id,
            next_id,
        })
    }

    pub fn get(&self, sample: usize) -> Option<usize> {
        self.labels.get(&sample).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn first_id(&self) -> usize {
        self.first_id
    }

    pub fn next_id(&self) -> usize {
        self.next_id
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().map(|(&k, &v)| (k, v))
    }

    fn fresh(&mut self) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn freeze(&mut self, sample: usize, label: usize) {
        self.labels.entry(sample).or_insert(label);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignStats {
    pub clusters: usize,
    pub new_labels: usize,
    pub noise: usize,
    pub points: usize,
}

/// Clusters the stored actions of `candidates` (samples without ground
/// truth) and freezes labels onto their non-noise points.
///
/// A cluster that already contains frozen members hands its majority frozen
/// label (ties to the lowest id) to its unlabeled members; any other cluster
/// gets one fresh id. Frozen entries never change. The memory is cleared
/// afterwards.
pub fn assign_pseudo_labels(
    memory: &mut ActionMemory,
    store: &mut PseudoLabelStore,
    candidates: &[usize],
    params: ClusterParams,
    metric: Metric,
) -> Result<AssignStats, ClusterError> {
    let mut ids = Vec::with_capacity(candidates.len());
    let mut points = Vec::with_capacity(candidates.len());
    for &c in candidates {
        if let Some(a) = memory.get(c) {
            ids.push(c);
            points.push(a.to_vec());
        }
    }
    let assignment = dbscan_with(&points, params, metric);
    let clusters = assignment.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, a) in assignment.iter().enumerate() {
        if let Some(c) = a {
            members[*c].push(ids[i]);
        }
    }
    let mut stats = AssignStats {
        clusters,
        new_labels: 0,
        noise: assignment.iter().filter(|a| a.is_none()).count(),
        points: ids.len(),
    };
    for group in members {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &s in &group {
            if let Some(l) = store.get(s) {
                *votes.entry(l).or_default() += 1;
            }
        }
        let unlabeled: Vec<usize> = group.into_iter().filter(|&s| store.get(s).is_none()).collect();
        if unlabeled.is_empty() {
            continue;
        }
        // equal counts rank the lower label higher
        let label = match votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            Some((&l, _)) => l,
            None => store.fresh(),
        };
        for s in unlabeled {
            store.freeze(s, label);
            stats.new_labels += 1;
        }
    }
    memory.clear();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[&[f64]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn dbscan_small_example() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[10.0, 0.0]]);
        let a = dbscan(&p, ClusterParams::new(1.5, 2).unwrap());
        assert_eq!(a, vec![Some(0), Some(0), None]);
    }

    #[test]
    fn dbscan_min_pts_one_has_no_noise() {
        let p = pts(&[&[0.0], &[0.5], &[3.0], &[3.4], &[9.0]]);
        let a = dbscan(&p, ClusterParams::new(0.6, 1).unwrap());
        assert_eq!(a, vec![Some(0), Some(0), Some(1), Some(1), Some(2)]);
        assert!(dbscan(&[], ClusterParams::new(1.0, 2).unwrap()).is_empty());
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // 2.0 is within eps of both 1.0 and 3.0 but is not core itself.
        let p = pts(&[&[0.0], &[0.1], &[0.2], &[1.0], &[2.0], &[3.0], &[3.1], &[3.2]]);
        let a = dbscan(&p, ClusterParams::new(1.0, 4).unwrap());
        assert_eq!(a[4], Some(0));
        assert_eq!(a[5], Some(1));
    }

    #[test]
    fn params_validation() {
        assert!(ClusterParams::new(0.0, 2).is_err());
        assert!(ClusterParams::new(1.0, 0).is_err());
    }

    #[test]
    fn relax_examples() {
        let base = ClusterParams { eps: 1.0, min_pts: 5 };
        let s = RelaxationSchedule::default();
        assert_eq!(relax(base, &s, 0), base);
        let r = relax(base, &RelaxationSchedule { eps_growth: 1.1, ..s }, 2);
        assert!((r.eps - 1.21).abs() < 1e-12);
        assert_eq!(relax(base, &s, 10).min_pts, 2);
    }

    #[test]
    fn calibrate_duplicates_form_one_cluster() {
        let mut p = vec![vec![1.0, 1.0]; 6];
        p.extend(vec![vec![50.0, 50.0]; 6]);
        let labels: Vec<usize> = (0..12).map(|i| i / 6).collect();
        let params = calibrate(&p, &labels).unwrap();
        let a = dbscan(&p, params);
        assert!(a[..6].iter().all(|&c| c == a[0] && c.is_some()));
        assert!(calibrate(&p, &[0; 12]).is_err());
    }

    #[test]
    fn memory_is_write_once_per_epoch() {
        let mut m = ActionMemory::new();
        m.insert(3, vec![1.0, 2.0]).unwrap();
        assert_eq!(m.insert(3, vec![0.0, 0.0]), Err(ClusterError::DuplicateAction(3)));
        assert!(matches!(m.insert(4, vec![0.0]), Err(ClusterError::Dimension { .. })));
    }

    #[test]
    fn frozen_labels_survive_noise_and_majority_wins() {
        let mut store = PseudoLabelStore::new(5);
        let mut memory = ActionMemory::new();
        let loose = ClusterParams::new(1.0, 2).unwrap();
        for (s, x) in [(10, 0.0), (11, 0.5), (12, 20.0), (13, 20.4)] {
            memory.insert(s, vec![x]).unwrap();
        }
        let stats = assign_pseudo_labels(&mut memory, &mut store, &[10, 11, 12, 13], loose, Metric::Euclidean).unwrap();
        assert_eq!(stats.clusters, 2);
        assert_eq!(stats.new_labels, 4);
        assert_eq!(store.get(10), Some(5));
        assert_eq!(store.get(12), Some(6));
        assert!(memory.is_empty());

        // Sample 10 now isolated: it keeps its label. 14 joins 12/13.
        for (s, x) in [(10, 100.0), (11, 0.5), (12, 20.0), (13, 20.4), (14, 20.8)] {
            memory.insert(s, vec![x]).unwrap();
        }
        assign_pseudo_labels(&mut memory, &mut store, &[10, 11, 12, 13, 14], loose, Metric::Euclidean).unwrap();
        assert_eq!(store.get(10), Some(5));
        assert_eq!(store.get(14), Some(6));
        assert_eq!(store.next_id(), 7);
    }

    #[test]
    fn all_noise_assigns_nothing() {
        let mut store = PseudoLabelStore::new(0);
        let mut memory = ActionMemory::new();
        for s in 0..4 {
            memory.insert(s, vec![s as f64 * 10.0]).unwrap();
        }
        let stats = assign_pseudo_labels(&mut memory, &mut store, &[0, 1, 2, 3], ClusterParams::new(1.0, 2).unwrap(), Metric::Euclidean).unwrap();
        assert_eq!(stats.new_labels, 0);
        assert!(store.is_empty());
    }

    #[test]
    fn straddling_cluster_tie_goes_to_lowest_label() {
        let mut store = PseudoLabelStore::from_parts(2, 5, BTreeMap::from([(0, 4), (1, 3)])).unwrap();
        let mut memory = ActionMemory::new();
        for s in 0..3 {
            memory.insert(s, vec![s as f64 * 0.1]).unwrap();
        }
        assign_pseudo_labels(&mut memory, &mut store, &[0, 1, 2], ClusterParams::new(1.0, 2).unwrap(), Metric::Euclidean).unwrap();
        assert_eq!(store.get(2), Some(3));
        assert_eq!((store.get(0), store.get(1)), (Some(4), Some(3)));
    }
}
