//! Rewards, the ε-greedy schedule, and the three training losses.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{NumError, Tape, Var};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` inside logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Contrastive temperature.
pub const DEFAULT_TAU: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// `max(eps_min, 1 - (1 - eps_min) * step / total)`.
pub fn epsilon(step: u64, total: u64, eps_min: f64) -> Result<f64, PolicyError> {
    if total == 0 {
        return Err(PolicyError::Config("iteration budget must be positive".into()));
    }
    if !(0.0..=1.0).contains(&eps_min) {
        return Err(PolicyError::Config(format!("eps_min {eps_min} outside [0, 1]")));
    }
    let linear = 1.0 - (1.0 - eps_min) * step as f64 / total as f64;
    Ok(linear.max(eps_min))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_min: f64,
    pub total: u64,
}

impl EpsilonSchedule {
    pub fn new(eps_min: f64, total: u64) -> Result<Self, PolicyError> {
        epsilon(0, total, eps_min)?;
        Ok(Self { eps_min, total })
    }

    pub fn at(&self, step: u64) -> f64 {
        epsilon(step, self.total, self.eps_min).expect("validated at construction")
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `eps` a uniformly random class, otherwise the argmax.
/// Exactly one uniform draw decides between the two, followed by one class
/// draw when exploring.
pub fn select_class(probs: &[f64], eps: f64, rng: &mut impl Rng) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..probs.len())
    } else {
        argmax(probs)
    }
}

/// 1 when the chosen class agrees with the reference label, else 0.
pub fn reward(chosen: usize, reference: usize) -> f64 {
    if chosen == reference {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardRecord {
    pub sample_id: usize,
    pub chosen: usize,
    pub reference: usize,
    pub reward: f64,
}

impl RewardRecord {
    pub fn new(sample_id: usize, chosen: usize, reference: usize) -> Self {
        Self {
            sample_id,
            chosen,
            reference,
            reward: reward(chosen, reference),
        }
    }
}

/// One-step TD error with zero discount: `½(q − r)²`.
pub fn loss_td(q: f64, r: f64) -> f64 {
    0.5 * (q - r) * (q - r)
}

/// Batch TD loss: mean of `½(q_i − r_i)²` over the rows of `q` (`[n × 1]`).
pub fn loss_td_batch<'t>(tape: &'t Tape, q: Var<'t>, rewards: &[f64]) -> Result<Var<'t>, NumError> {
    let target = tape.leaf(crate::numkit::Tensor::matrix(rewards.len(), 1, rewards.to_vec())?)?;
    let diff = q.sub(target)?;
    diff.mul(diff)?.scale(0.5)?.mean()
}

/// Cross-entropy over the samples that carry a reference label (ground
/// truth or pseudo-label, weighted alike). `None` when no sample does, in
/// which case the term is zero.
pub fn loss_ce<'t>(probs: Var<'t>, references: &[Option<usize>]) -> Result<Option<Var<'t>>, NumError> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != references.len() {
        return Err(NumError::Contract(format!(
            "{} references for probabilities of shape {shape:?}",
            references.len()
        )));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, r) in references.iter().enumerate() {
        if let Some(label) = *r {
            if label >= shape[1] {
                return Err(NumError::Contract(format!(
                    "label {label} outside {} classes",
                    shape[1]
                )));
            }
            rows.push(i);
            labels.push(label);
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let picked = probs.select_rows(&rows)?.gather(&labels)?;
    let nll = picked
        .log_clamped(PROB_FLOOR, 1.0 - PROB_FLOOR)?
        .mean()?
        .scale(-1.0)?;
    Ok(Some(nll))
}

/// Contrastive loss between paired rows of `alphas` and `betas`:
/// `−(1/n) Σ_i log softmax_j(cos(α_i, β_j) / τ)[i]`.
pub fn loss_ss<'t>(alphas: Var<'t>, betas: Var<'t>, tau: f64) -> Result<Var<'t>, NumError> {
    if !(tau > 0.0) {
        return Err(NumError::Contract(format!("temperature must be positive, got {tau}")));
    }
    let n = alphas.shape()[0];
    let logits = alphas.cosine_matrix(betas)?.scale(1.0 / tau)?;
    let diag: Vec<usize> = (0..n).collect();
    logits
        .log_softmax_rows()?
        .gather(&diag)?
        .mean()?
        .scale(-1.0)
}

/// Which loss terms are active (ablation switches).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub ce: bool,
    pub td: bool,
    pub ss: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            ce: true,
            td: true,
            ss: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_td: f64,
    pub l_ce: f64,
    pub l_ss: f64,
    pub total: f64,
}

/// Unweighted sum of the enabled terms; disabled terms are reported as 0.
pub fn total_loss(l_td: f64, l_ce: f64, l_ss: f64, switches: LossSwitches) -> LossBreakdown {
    let pick = |on: bool, v: f64| if on { v } else { 0.0 };
    let (l_td, l_ce, l_ss) = (
        pick(switches.td, l_td),
        pick(switches.ce, l_ce),
        pick(switches.ss, l_ss),
    );
    LossBreakdown {
        l_td,
        l_ce,
        l_ss,
        total: l_td + l_ce + l_ss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon(0, 100, 0.1).unwrap(), 1.0);
        assert!((epsilon(100, 100, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((epsilon(50, 100, 0.1).unwrap() - 0.55).abs() < 1e-15);
        assert_eq!(epsilon(500, 100, 0.1).unwrap(), 0.1);
        assert!(epsilon(0, 0, 0.1).is_err());
        assert!(epsilon(0, 10, 1.5).is_err());
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut rng = stream_rng(0, Stream::Exploration, 0);
        for _ in 0..100 {
            assert_eq!(select_class(&[0.1, 0.6, 0.3], 0.0, &mut rng), 1);
        }
        assert_eq!(select_class(&[0.4, 0.2, 0.4], 0.0, &mut rng), 0);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(3, 3), 1.0);
        assert_eq!(reward(3, 5), 0.0);
        let pairs = [(1, 1), (2, 0), (4, 4), (0, 0)];
        let total: f64 = pairs.iter().map(|&(a, b)| reward(a, b)).sum();
        assert_eq!(total, 3.0);
        assert_eq!(RewardRecord::new(7, 2, 2).reward, 1.0);
    }

    #[test]
    fn td_examples() {
        assert_eq!(loss_td(0.3, 0.3), 0.0);
        assert_eq!(loss_td(1.0, 0.0), 0.5);
        assert_eq!(loss_td(0.5, 1.0), 0.125);

        let tape = Tape::new();
        let q = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 0.5]).unwrap()).unwrap();
        let l = loss_td_batch(&tape, q, &[0.0, 1.0]).unwrap();
        assert!((l.item() - (0.5 + 0.125) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ce_examples() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_rows(&[[0.5, 0.5]]).unwrap()).unwrap();
        let l = loss_ce(p, &[Some(0)]).unwrap().unwrap();
        assert!((l.item() - 2f64.ln()).abs() < 1e-15);

        let p = tape.leaf(Tensor::from_rows(&[[0.0, 1.0, 0.0]]).unwrap()).unwrap();
        let l = loss_ce(p, &[Some(1)]).unwrap().unwrap();
        assert!(l.item() >= 0.0 && l.item() < 1.001e-12, "{}", l.item());

        let p = tape
            .leaf(Tensor::from_rows(&[[0.2, 0.8], [0.5, 0.5]]).unwrap())
            .unwrap();
        let both = loss_ce(p, &[Some(1), None]).unwrap().unwrap();
        assert!((both.item() + 0.8f64.ln()).abs() < 1e-15);
        assert!(loss_ce(p, &[None, None]).unwrap().is_none());
        assert!(loss_ce(p, &[Some(2), None]).is_err());
    }

    #[test]
    fn ss_examples() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[[0.3, -2.0, 1.0]]).unwrap()).unwrap();
        let b = tape.leaf(Tensor::from_rows(&[[1.0, 1.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(loss_ss(a, b, DEFAULT_TAU).unwrap().item(), 0.0);

        let e = tape
            .leaf(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap())
            .unwrap();
        let l = loss_ss(e, e, DEFAULT_TAU).unwrap().item();
        let expected = -(0.5f64.exp() / (0.5f64.exp() + 1.0)).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.474077).abs() < 1e-6);

        let swapped = tape
            .leaf(Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap())
            .unwrap();
        assert!(loss_ss(e, swapped, DEFAULT_TAU).unwrap().item() > l);

        let z = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(loss_ss(e, z, DEFAULT_TAU), Err(NumError::Degenerate { .. })));
    }

    #[test]
    fn total_and_ablation() {
        let all = LossSwitches::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, all).total, 0.0);
        assert!((total_loss(0.1, 0.2, 0.3, all).total - 0.6).abs() < 1e-15);
        let no_td = LossSwitches { td: false, ..all };
        let b = total_loss(0.1, 0.2, 0.3, no_td);
        assert_eq!(b.l_td, 0.0);
        assert_eq!((b.l_ce, b.l_ss), (0.2, 0.3));
        assert!((b.total - 0.5).abs() < 1e-15);
    }
}
