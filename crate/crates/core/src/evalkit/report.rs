use crate::agents::Model;
use crate::datagen::{split_query_target, Dataset, QueryTargetSplit};
use crate::stlclu::PseudoLabelStore;
use crate::trainer::EpochEval;

use super::{build_run, ncd_accuracy, pr_curve, summarize, EvalError, RetrievalItem, RetrievalSummary};

pub const DEFAULT_QUERIES_PER_CLASS: usize = 30;

/// Holds the hidden classes of a dataset and scores models against them.
/// This is the only place outside data generation that reads them.
pub struct Evaluator<'d> {
    dataset: &'d Dataset,
    unlabeled: Vec<usize>,
    split: QueryTargetSplit,
}

/// Everything `cmd_eval` writes out.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub ncd_accuracy: f64,
    pub retrieval: RetrievalSummary,
    pub pr_curve: Vec<(f64, f64)>,
    /// Id, action and hidden class of every sample.
    pub ids: Vec<usize>,
    pub actions: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
}

impl<'d> Evaluator<'d> {
    /// Retrieval runs over the novel classes: `queries_per_class` queries
    /// each, the rest of those classes as targets.
    pub fn new(dataset: &'d Dataset, queries_per_class: usize, seed: u64) -> Result<Self, EvalError> {
        let split = split_query_target(dataset, &dataset.novel_classes(), queries_per_class, seed)
            .map_err(|e| EvalError::Protocol(e.to_string()))?;
        let unlabeled = dataset.training_view().unlabeled_ids();
        Ok(Self {
            dataset,
            unlabeled,
            split,
        })
    }

    pub fn split(&self) -> &QueryTargetSplit {
        &self.split
    }

    /// Hungarian accuracy of the pseudo-labels over every sample without
    /// ground truth.
    pub fn ncd_accuracy(&self, store: &PseudoLabelStore) -> Result<f64, EvalError> {
        let predicted: Vec<Option<usize>> = self.unlabeled.iter().map(|&i| store.get(i)).collect();
        let hidden = self.dataset.hidden_classes();
        let truth: Vec<usize> = self.unlabeled.iter().map(|&i| hidden[i]).collect();
        ncd_accuracy(&predicted, &truth)
    }

    fn items(&self, ids: &[usize], actions: &[Vec<f64>]) -> Vec<RetrievalItem> {
        let hidden = self.dataset.hidden_classes();
        ids.iter()
            .map(|&i| RetrievalItem {
                id: i,
                class: hidden[i],
                features: actions[i].clone(),
            })
            .collect()
    }

    fn actions(&self, model: &Model) -> Result<Vec<Vec<f64>>, EvalError> {
        let samples: Vec<_> = self.dataset.samples().iter().collect();
        let emb = model
            .embed(&samples)
            .map_err(|e| EvalError::Protocol(format!("embedding failed: {e}")))?;
        Ok(emb.actions)
    }

    pub fn evaluate(&self, model: &Model, store: &PseudoLabelStore) -> Result<EpochEval, EvalError> {
        let actions = self.actions(model)?;
        let run = build_run(
            &self.items(&self.split.queries, &actions),
            &self.items(&self.split.targets, &actions),
        )?;
        let s = summarize(&run)?;
        Ok(EpochEval {
            ncd_accuracy: self.ncd_accuracy(store)?,
            map: s.map,
            nn: s.nn,
            ndcg: s.ndcg,
            anmrr: s.anmrr,
        })
    }

    pub fn report(&self, model: &Model, store: &PseudoLabelStore) -> Result<EvalReport, EvalError> {
        let actions = self.actions(model)?;
        let run = build_run(
            &self.items(&self.split.queries, &actions),
            &self.items(&self.split.targets, &actions),
        )?;
        Ok(EvalReport {
            ncd_accuracy: self.ncd_accuracy(store)?,
            retrieval: summarize(&run)?,
            pr_curve: pr_curve(&run)?,
            ids: (0..actions.len()).collect(),
            classes: self.dataset.hidden_classes().to_vec(),
            actions,
        })
    }
}
