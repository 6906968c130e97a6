//! The training environment: pre-training on labeled samples, the ε-greedy
//! reward loop with per-epoch pseudo-labeling, Adam updates and checkpoints.

mod checkpoint;
mod optim;

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{AgentConfig, BatchInput, Model};
use crate::datagen::{DataError, LabelState, MultiModalSample, TrainingView, BatchIterator};
use crate::evalkit::{fmt_sig6, EvalError};
use crate::numkit::{NumError, Tape, Var};
use crate::policy::{
    loss_ce, loss_ss, loss_td_batch, reward, select_class, EpsilonSchedule, LossSwitches, PolicyError,
};
use crate::rng::{stream_rng, Stream};
use crate::stlclu::{
    assign_pseudo_labels, calibrate_with, relax, ActionMemory, ClusterError, ClusterParams, Metric,
    PseudoLabelStore, RelaxationSchedule,
};

pub use optim::{learning_rate, optimizer_step, AdamState, ADAM_EPS, BETA1, BETA2, LR_FLOOR_FRACTION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: u64, what: String },
    #[error("model: {0}")]
    Model(NumError),
    #[error("pseudo-labeling: {0}")]
    Cluster(#[from] ClusterError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("checkpoint line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NumError> for TrainError {
    fn from(e: NumError) -> Self {
        Self::Model(e)
    }
}

impl From<PolicyError> for TrainError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(m) => Self::Config(m),
            PolicyError::Num(n) => Self::Model(n),
        }
    }
}

impl TrainError {
    /// True for failures caused by NaN/∞ or degenerate values during training.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NonFinite { .. } | Self::Model(NumError::NonFinite { .. } | NumError::Degenerate { .. })
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: u32,
    pub train_epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eps_min: f64,
    pub switches: LossSwitches,
    pub stlclu: bool,
    pub seed: u64,
    pub tau: f64,
    pub relaxation: RelaxationSchedule,
    pub metric: Metric,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    /// Class-head slots for pseudo-classes; `None` means twice the assumed
    /// number of novel classes.
    pub pseudo_slots: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 10,
            train_epochs: 40,
            batch_size: 8,
            lr: 0.001,
            weight_decay: 0.0001,
            eps_min: 0.1,
            switches: LossSwitches::default(),
            stlclu: true,
            seed: 0,
            tau: crate::policy::DEFAULT_TAU,
            relaxation: RelaxationSchedule::default(),
            metric: Metric::Euclidean,
            feature_dim: 64,
            hidden_dim: 64,
            heads: 4,
            pseudo_slots: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.eps_min) {
            return fail("eps_min must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        if !(self.relaxation.eps_growth >= 1.0) || self.relaxation.min_pts_floor == 0 {
            return fail("relaxation must loosen: eps_growth >= 1 and min_pts_floor >= 1");
        }
        if !(self.switches.ce || self.switches.td || self.switches.ss) {
            return fail("at least one loss term must be enabled");
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> u32 {
        self.pretrain_epochs + self.train_epochs
    }

    pub fn agent_config(&self, view: &TrainingView<'_>) -> AgentConfig {
        let slots = self.pseudo_slots.unwrap_or(2 * view.num_novel_classes).max(1);
        AgentConfig {
            modality_dims: view.modalities.iter().map(|m| m.dim).collect(),
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            num_classes: view.num_labeled_classes + slots,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Train,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Train => "train",
        }
    }
}

/// One optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub phase: Phase,
    /// Iteration index within the phase.
    pub iteration: u64,
    pub epsilon: f64,
    pub lr: f64,
    pub l_td: f64,
    pub l_ce: f64,
    pub l_ss: f64,
    pub total: f64,
    /// Mean reward over samples that had a reference label (0 when none).
    pub reward_mean: f64,
    pub updated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub eps: f64,
    pub min_pts: usize,
    pub clusters: usize,
    pub new_labels: usize,
    pub noise: usize,
}

/// Metrics that need hidden classes, supplied by an observer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub ncd_accuracy: f64,
    pub map: f64,
    pub nn: f64,
    pub ndcg: f64,
    pub anmrr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based over both phases.
    pub epoch: u32,
    pub phase: Phase,
    pub l_td: f64,
    pub l_ce: f64,
    pub l_ss: f64,
    pub total: f64,
    pub epsilon: f64,
    pub lr: f64,
    /// Fraction of samples without ground truth that hold a pseudo-label.
    pub coverage: f64,
    pub cluster: Option<ClusterRecord>,
    pub eval: Option<EpochEval>,
}

/// Called after every epoch with the current model and pseudo-labels.
pub type EpochObserver<'a> = dyn FnMut(&Model, &PseudoLabelStore) -> Result<EpochEval, EvalError> + 'a;

/// The full mutable state of a run. Everything needed to resume lives here;
/// random draws are re-derived from `(seed, epoch)`.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    adam: AdamState,
    store: PseudoLabelStore,
    calibrated: Option<ClusterParams>,
    epochs_done: u32,
    pretrain_iterations: u64,
    train_iterations: u64,
    history: Vec<EpochRecord>,
    iterations: Vec<IterationRecord>,
}

fn check_view(view: &TrainingView<'_>) -> Result<(), TrainError> {
    for (pos, s) in view.samples.iter().enumerate() {
        if s.id != pos {
            return Err(TrainError::Config(format!("sample at position {pos} has id {}", s.id)));
        }
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: TrainConfig, view: &TrainingView<'_>) -> Result<Self, TrainError> {
        config.validate()?;
        check_view(view)?;
        let agent = config.agent_config(view);
        let model = Model::new(agent, config.seed)?;
        let adam = AdamState::new(&model.params);
        let mut labels = std::collections::BTreeMap::new();
        let mut next = view.num_labeled_classes;
        for s in view.samples {
            if let LabelState::Pseudo(c) = s.label {
                labels.insert(s.id, c);
                next = next.max(c + 1);
            }
        }
        let store = PseudoLabelStore::from_parts(view.num_labeled_classes, next, labels)?;
        Ok(Self {
            config,
            model,
            adam,
            store,
            calibrated: None,
            epochs_done: 0,
            pretrain_iterations: 0,
            train_iterations: 0,
            history: Vec::new(),
            iterations: Vec::new(),
        })
    }

    pub fn pseudo_labels(&self) -> &PseudoLabelStore {
        &self.store
    }

    pub fn calibrated_params(&self) -> Option<ClusterParams> {
        self.calibrated
    }

    pub fn epochs_done(&self) -> u32 {
        self.epochs_done
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Iterations run by this process (not restored from checkpoints).
    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.total_epochs()
    }

    /// Runs every remaining pre-training epoch.
    pub fn pretrain(
        &mut self,
        view: &TrainingView<'_>,
        mut observer: Option<&mut EpochObserver<'_>>,
    ) -> Result<(), TrainError> {
        while self.epochs_done < self.config.pretrain_epochs {
            self.run_epoch(view, observer.as_deref_mut())?;
        }
        Ok(())
    }

    /// Runs every remaining epoch (pre-training first if still pending).
    pub fn train(
        &mut self,
        view: &TrainingView<'_>,
        mut observer: Option<&mut EpochObserver<'_>>,
    ) -> Result<&[EpochRecord], TrainError> {
        while !self.is_finished() {
            self.run_epoch(view, observer.as_deref_mut())?;
        }
        Ok(&self.history)
    }

    /// Runs the next epoch of whichever phase is current.
    pub fn run_epoch(
        &mut self,
        view: &TrainingView<'_>,
        observer: Option<&mut EpochObserver<'_>>,
    ) -> Result<&EpochRecord, TrainError> {
        if self.is_finished() {
            return Err(TrainError::Config("every configured epoch has already run".into()));
        }
        let mut record = if self.epochs_done < self.config.pretrain_epochs {
            self.pretrain_epoch(view)?
        } else {
            self.train_epoch(view)?
        };
        if let Some(obs) = observer {
            record.eval = Some(obs(&self.model, &self.store)?);
        }
        self.epochs_done += 1;
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    fn pretrain_epoch(&mut self, view: &TrainingView<'_>) -> Result<EpochRecord, TrainError> {
        let labeled = view.labeled_ids();
        if labeled.is_empty() {
            return Err(TrainError::Config("pre-training needs labeled samples".into()));
        }
        let epoch = self.epochs_done;
        let batches = BatchIterator::new(&labeled, self.config.batch_size, self.config.seed, epoch)?;
        let total = u64::from(self.config.pretrain_epochs) * batches.num_batches() as u64;
        let mut rng = stream_rng(self.config.seed, Stream::Exploration, epoch);
        let mut records = Vec::new();
        for batch in batches {
            let lr = learning_rate(self.config.lr, self.pretrain_iterations, total);
            let (rec, _) = self.step(view, &batch, Phase::Pretrain, 0.0, lr, &mut rng)?;
            self.pretrain_iterations += 1;
            records.push(rec);
        }
        Ok(self.summarize(epoch, Phase::Pretrain, &records, None, view))
    }

    fn train_epoch(&mut self, view: &TrainingView<'_>) -> Result<EpochRecord, TrainError> {
        let epoch = self.epochs_done;
        let train_epoch = epoch - self.config.pretrain_epochs;
        if self.config.stlclu && self.calibrated.is_none() {
            self.calibrated = Some(self.calibrate(view)?);
        }
        let ids: Vec<usize> = (0..view.samples.len()).collect();
        let batches = BatchIterator::new(&ids, self.config.batch_size, self.config.seed, epoch)?;
        let total = u64::from(self.config.train_epochs) * batches.num_batches() as u64;
        let schedule = EpsilonSchedule::new(self.config.eps_min, total)?;
        let mut rng = stream_rng(self.config.seed, Stream::Exploration, epoch);
        let mut memory = ActionMemory::new();
        let mut records = Vec::new();
        for batch in batches {
            let eps = schedule.at(self.train_iterations);
            let lr = learning_rate(self.config.lr, self.train_iterations, total);
            let (rec, actions) = self.step(view, &batch, Phase::Train, eps, lr, &mut rng)?;
            for (id, action) in batch.iter().zip(actions) {
                memory.insert(*id, action)?;
            }
            self.train_iterations += 1;
            records.push(rec);
        }

        let cluster = match (self.config.stlclu, self.calibrated) {
            (true, Some(base)) => {
                let params = relax(base, &self.config.relaxation, train_epoch);
                let candidates = view.unlabeled_ids();
                let before = self.store.clone();
                let stats = assign_pseudo_labels(
                    &mut memory,
                    &mut self.store,
                    &candidates,
                    params,
                    self.config.metric,
                )?;
                self.check_frozen(&before)?;
                Some(ClusterRecord {
                    eps: params.eps,
                    min_pts: params.min_pts,
                    clusters: stats.clusters,
                    new_labels: stats.new_labels,
                    noise: stats.noise,
                })
            }
            _ => None,
        };
        Ok(self.summarize(epoch, Phase::Train, &records, cluster, view))
    }

    /// Write-once and id-range checks on the pseudo-label store.
    fn check_frozen(&self, before: &PseudoLabelStore) -> Result<(), TrainError> {
        for (id, label) in before.iter() {
            if self.store.get(id) != Some(label) {
                return Err(TrainError::Invariant(format!(
                    "frozen label of sample {id} changed from {label} to {:?}",
                    self.store.get(id)
                )));
            }
        }
        if self.store.len() < before.len() {
            return Err(TrainError::Invariant("pseudo-label coverage shrank".into()));
        }
        if let Some((id, l)) = self.store.iter().find(|&(_, l)| l < self.store.first_id()) {
            return Err(TrainError::Invariant(format!(
                "sample {id} holds pseudo-label {l} inside the ground-truth range"
            )));
        }
        Ok(())
    }

    /// Fits DBSCAN parameters on the actions of labeled samples.
    fn calibrate(&self, view: &TrainingView<'_>) -> Result<ClusterParams, TrainError> {
        let labeled = view.labeled_ids();
        let samples: Vec<&MultiModalSample> = labeled.iter().map(|&i| &view.samples[i]).collect();
        let labels: Vec<usize> = samples
            .iter()
            .map(|s| s.label.class().expect("ground truth"))
            .collect();
        let emb = self.model.embed(&samples)?;
        Ok(calibrate_with(&emb.actions, &labels, self.config.metric)?)
    }

    fn reference(&self, sample: &MultiModalSample) -> Option<usize> {
        let label = match sample.label {
            LabelState::GroundTruth(c) => Some(c),
            _ => self.store.get(sample.id),
        };
        // pseudo-classes beyond the head width cannot be predicted
        label.filter(|&c| c < self.model.config.num_classes)
    }

    fn step(
        &mut self,
        view: &TrainingView<'_>,
        batch: &[usize],
        phase: Phase,
        eps: f64,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(IterationRecord, Vec<Vec<f64>>), TrainError> {
        let iteration = match phase {
            Phase::Pretrain => self.pretrain_iterations,
            Phase::Train => self.train_iterations,
        };
        let non_finite = |e: NumError| match e {
            NumError::NonFinite { op } => TrainError::NonFinite {
                iteration,
                what: format!("output of `{op}` in the {} forward/backward pass", phase.as_str()),
            },
            other => TrainError::Model(other),
        };
        let samples: Vec<&MultiModalSample> = batch.iter().map(|&i| &view.samples[i]).collect();
        let input = BatchInput::from_samples(&samples, &self.model.config.modality_dims)?;
        let tape = Tape::new();
        let fwd = self.model.forward(&tape, &input).map_err(non_finite)?;

        let references: Vec<Option<usize>> = samples.iter().map(|s| self.reference(s)).collect();
        let (ref_rows, rewards) = {
            let probs = fwd.probs.value();
            let mut rows = Vec::new();
            let mut rewards = Vec::new();
            for (i, r) in references.iter().enumerate() {
                // one decision per sample keeps the draw count independent of labels
                let chosen = select_class(probs.row(i), eps, rng);
                if let Some(r) = r {
                    rows.push(i);
                    rewards.push(reward(chosen, *r));
                }
            }
            (rows, rewards)
        };

        let sw = self.config.switches;
        let mut terms: Vec<Var<'_>> = Vec::new();
        let (mut l_td, mut l_ce, mut l_ss) = (0.0, 0.0, 0.0);
        if sw.td && !ref_rows.is_empty() {
            let q = fwd.q.select_rows(&ref_rows)?;
            let t = loss_td_batch(&tape, q, &rewards).map_err(non_finite)?;
            l_td = t.item();
            terms.push(t);
        }
        if sw.ce {
            if let Some(t) = loss_ce(fwd.probs, &references).map_err(non_finite)? {
                l_ce = t.item();
                terms.push(t);
            }
        }
        if sw.ss {
            let both = input.both_groups_present();
            let rows: Vec<usize> = (0..batch.len()).filter(|&i| both[i]).collect();
            if !rows.is_empty() {
                let a = fwd.alpha.select_rows(&rows)?;
                let b = fwd.beta.select_rows(&rows)?;
                let t = loss_ss(a, b, self.config.tau).map_err(non_finite)?;
                l_ss = t.item();
                terms.push(t);
            }
        }

        let updated = !terms.is_empty();
        let mut total = 0.0;
        if let Some((&first, rest)) = terms.split_first() {
            let mut loss = first;
            for &t in rest {
                loss = loss.add(t).map_err(non_finite)?;
            }
            total = loss.item();
            self.model.params.zero_grads();
            tape.backward(loss, &mut self.model.params).map_err(non_finite)?;
            if let Some(p) = self.model.params.iter().find(|p| !p.grad.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration,
                    what: format!("gradient of parameter `{}`", p.name),
                });
            }
            optimizer_step(&mut self.model.params, &mut self.adam, lr, self.config.weight_decay);
            if let Some(p) = self.model.params.iter().find(|p| !p.value.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration,
                    what: format!("value of parameter `{}` after the update", p.name),
                });
            }
        }

        let actions = {
            let a = fwd.action.value();
            (0..batch.len()).map(|i| a.row(i).to_vec()).collect()
        };
        let reward_mean = if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        };
        let record = IterationRecord {
            phase,
            iteration,
            epsilon: eps,
            lr,
            l_td,
            l_ce,
            l_ss,
            total,
            reward_mean,
            updated,
        };
        self.iterations.push(record);
        Ok((record, actions))
    }

    fn summarize(
        &self,
        epoch: u32,
        phase: Phase,
        records: &[IterationRecord],
        cluster: Option<ClusterRecord>,
        view: &TrainingView<'_>,
    ) -> EpochRecord {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&IterationRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let unlabeled = view.samples.iter().filter(|s| !s.label.is_ground_truth()).count();
        let last = records.last();
        EpochRecord {
            epoch: epoch + 1,
            phase,
            l_td: mean(|r| r.l_td),
            l_ce: mean(|r| r.l_ce),
            l_ss: mean(|r| r.l_ss),
            total: mean(|r| r.total),
            epsilon: last.map_or(0.0, |r| r.epsilon),
            lr: last.map_or(0.0, |r| r.lr),
            coverage: if unlabeled == 0 {
                0.0
            } else {
                self.store.len() as f64 / unlabeled as f64
            },
            cluster,
            eval: None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

pub const METRICS_HEADER: &str = "epoch,phase,l_td,l_ce,l_ss,total,epsilon,lr,coverage,ncd_accuracy,map";

/// Per-epoch metrics CSV.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.phase.as_str(),
            fmt_sig6(r.l_td),
            fmt_sig6(r.l_ce),
            fmt_sig6(r.l_ss),
            fmt_sig6(r.total),
            fmt_sig6(r.epsilon),
            fmt_sig6(r.lr),
            fmt_sig6(r.coverage),
            opt(r.eval.map(|e| e.ncd_accuracy)),
            opt(r.eval.map(|e| e.map)),
        )
        .unwrap();
    }
    out
}

/// Per-epoch pseudo-labeling statistics CSV (training epochs only).
pub fn cluster_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,eps,min_pts,clusters,new_labels,noise,coverage\n");
    for r in history {
        if let Some(c) = r.cluster {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                fmt_sig6(c.eps),
                c.min_pts,
                c.clusters,
                c.new_labels,
                c.noise,
                fmt_sig6(r.coverage)
            )
            .unwrap();
        }
    }
    out
}

/// Per-iteration loss log CSV.
pub fn iterations_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("phase,iteration,epsilon,lr,l_td,l_ce,l_ss,total,reward_mean\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.phase.as_str(),
            r.iteration,
            fmt_sig6(r.epsilon),
            fmt_sig6(r.lr),
            fmt_sig6(r.l_td),
            fmt_sig6(r.l_ce),
            fmt_sig6(r.l_ss),
            fmt_sig6(r.total),
            fmt_sig6(r.reward_mean)
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GeneratorConfig};

    fn small_data(kl: usize, ku: usize, spc: usize) -> crate::datagen::Dataset {
        generate_dataset(&GeneratorConfig {
            num_labeled_classes: kl,
            num_novel_classes: ku,
            samples_per_class: spc,
            modality_dims: vec![5, 6, 7],
            latent_dim: 4,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            pretrain_epochs: 2,
            train_epochs: 2,
            feature_dim: 8,
            hidden_dim: 8,
            heads: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_pretrain_epochs_leave_parameters() {
        let ds = small_data(2, 2, 10);
        let view = ds.training_view();
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            ..small_config()
        };
        let mut t = Trainer::new(cfg, &view).unwrap();
        let before = t.model.params.clone();
        t.pretrain(&view, None).unwrap();
        assert_eq!(t.model.params, before);
        assert_eq!(t.epochs_done(), 0);
    }

    #[test]
    fn config_validation() {
        let ds = small_data(2, 2, 5);
        let view = ds.training_view();
        let bad = TrainConfig {
            batch_size: 0,
            ..small_config()
        };
        assert!(matches!(Trainer::new(bad, &view), Err(TrainError::Config(_))));
        let none = TrainConfig {
            switches: LossSwitches {
                ce: false,
                td: false,
                ss: false,
            },
            ..small_config()
        };
        assert!(Trainer::new(none, &view).is_err());
    }

    #[test]
    fn ce_only_without_clustering_ignores_unlabeled_samples() {
        let ds = small_data(2, 2, 6);
        let view = ds.training_view();
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            train_epochs: 1,
            batch_size: 4,
            stlclu: false,
            switches: LossSwitches {
                ce: true,
                td: false,
                ss: false,
            },
            ..small_config()
        };
        let mut t = Trainer::new(cfg, &view).unwrap();
        let before = t.model.params.clone();
        // perturbing every unlabeled input must not change the trajectory
        let mut samples = view.samples.to_vec();
        for s in samples.iter_mut().filter(|s| !s.label.is_ground_truth()) {
            for v in s.modalities.iter_mut().flatten() {
                v.iter_mut().for_each(|x| *x *= -3.0);
            }
        }
        let other = TrainingView {
            samples: &samples,
            ..view
        };
        let mut t2 = t.clone();
        t.train(&view, None).unwrap();
        t2.train(&other, None).unwrap();
        assert_ne!(t.model.params, before);
        assert_eq!(t.model.params, t2.model.params);
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = small_data(2, 2, 12);
        let view = ds.training_view();
        let run = || {
            let mut t = Trainer::new(small_config(), &view).unwrap();
            t.train(&view, None).unwrap();
            (metrics_csv(t.history()), iterations_csv(t.iterations()), t.model.params)
        };
        let a = run();
        let b = run();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn schedules_are_monotone_over_a_run() {
        let ds = small_data(2, 2, 12);
        let view = ds.training_view();
        let mut t = Trainer::new(small_config(), &view).unwrap();
        t.train(&view, None).unwrap();
        let train: Vec<&IterationRecord> = t.iterations().iter().filter(|r| r.phase == Phase::Train).collect();
        assert!(train.windows(2).all(|w| w[1].epsilon <= w[0].epsilon && w[1].lr <= w[0].lr));
        assert!(train.iter().all(|r| r.epsilon >= 0.1));
        let pre: Vec<&IterationRecord> = t.iterations().iter().filter(|r| r.phase == Phase::Pretrain).collect();
        assert!(pre.iter().all(|r| r.epsilon == 0.0));
        assert!(pre.windows(2).all(|w| w[1].lr <= w[0].lr));
    }

    #[test]
    fn csv_headers() {
        assert!(metrics_csv(&[]).starts_with("epoch,phase,l_td"));
        assert!(cluster_csv(&[]).starts_with("epoch,eps,min_pts"));
        assert!(iterations_csv(&[]).starts_with("phase,iteration"));
    }
}
