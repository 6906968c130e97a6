//! Member encoders, the attention-fusing leader, and the output heads.
//!
//! Each member agent encodes one modality into a `d`-wide feature. The
//! leader splits the member features into two token groups by modality
//! parity (padding with a zero token when the count is odd), fuses each
//! group with multi-head self-attention into `l_alpha` / `l_beta`, then
//! fuses that pair once more into the action vector `l`. The class head maps
//! `l` to a probability vector; the Q head maps it to a value in (0, 1).

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{ModalitySpec, MultiModalSample};
use crate::numkit::{attention, interleave, NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub modality_dims: Vec<usize>,
    /// Width `d` of member features and fused actions.
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    /// Width `c` of the class head.
    pub num_classes: usize,
}

impl AgentConfig {
    pub fn new(modalities: &[ModalitySpec], num_classes: usize) -> Self {
        Self {
            modality_dims: modalities.iter().map(|m| m.dim).collect(),
            feature_dim: 64,
            hidden_dim: 64,
            heads: 4,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), NumError> {
        let bad = |m: String| Err(NumError::Contract(m));
        if self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return bad(format!("invalid modality widths {:?}", self.modality_dims));
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return bad("feature, hidden and class widths must be positive".into());
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 {
            return bad(format!(
                "feature width {} is not divisible by {} heads",
                self.feature_dim, self.heads
            ));
        }
        Ok(())
    }

    /// Tokens per fusion group: the modality count rounded up to even, halved.
    pub fn tokens_per_group(&self) -> usize {
        self.modality_dims.len().div_ceil(2)
    }

    /// Stable fingerprint of the architecture.
    pub fn digest(&self) -> String {
        let canonical = format!(
            "dims={:?};d={};hidden={};heads={};classes={}",
            self.modality_dims, self.feature_dim, self.hidden_dim, self.heads, self.num_classes
        );
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Two affine layers with a relu between: `dim_j → hidden → d`.
#[derive(Clone, Debug)]
pub struct MemberAgent {
    pub modality: usize,
    pub input_dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Multi-head self-attention, mean pooling over tokens, affine output.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub heads: usize,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Debug)]
pub struct LeaderAgent {
    pub group_a: AttentionBlock,
    pub group_b: AttentionBlock,
    pub fusion: AttentionBlock,
}

#[derive(Clone, Debug)]
pub struct Heads {
    class_w: ParamId,
    class_b: ParamId,
    q_w: ParamId,
    q_b: ParamId,
}

/// All agents plus the parameters they own.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: AgentConfig,
    pub params: ParamStore,
    pub members: Vec<MemberAgent>,
    pub leader: LeaderAgent,
    pub heads: Heads,
}

/// Per-modality input matrices for a batch, with presence flags.
#[derive(Clone, Debug)]
pub struct BatchInput {
    pub len: usize,
    /// `[n × dim_j]` per modality; missing rows hold zeros.
    pub inputs: Vec<Tensor>,
    pub present: Vec<Vec<bool>>,
}

impl BatchInput {
    pub fn from_samples(
        samples: &[&MultiModalSample],
        modality_dims: &[usize],
    ) -> Result<Self, NumError> {
        if samples.is_empty() {
            return Err(NumError::Contract("empty batch".into()));
        }
        let n = samples.len();
        let mut inputs = Vec::with_capacity(modality_dims.len());
        let mut present = Vec::with_capacity(modality_dims.len());
        for (j, &dim) in modality_dims.iter().enumerate() {
            let mut data = vec![0.0; n * dim];
            let mut flags = Vec::with_capacity(n);
            for (i, s) in samples.iter().enumerate() {
                match s.modalities.get(j).and_then(|m| m.as_ref()) {
                    Some(v) => {
                        if v.len() != dim {
                            return Err(NumError::Shape {
                                op: "encode",
                                left: vec![dim],
                                right: vec![v.len()],
                            });
                        }
                        data[i * dim..(i + 1) * dim].copy_from_slice(v);
                        flags.push(true);
                    }
                    None => flags.push(false),
                }
            }
            inputs.push(Tensor::matrix(n, dim, data)?);
            present.push(flags);
        }
        Ok(Self {
            len: n,
            inputs,
            present,
        })
    }

    /// Samples whose two fusion groups each contain at least one present
    /// modality.
    pub fn both_groups_present(&self) -> Vec<bool> {
        (0..self.len)
            .map(|i| {
                let any = |parity: usize| {
                    self.present
                        .iter()
                        .enumerate()
                        .any(|(j, p)| j % 2 == parity && p[i])
                };
                any(0) && any(1)
            })
            .collect()
    }
}

/// Every intermediate of one forward pass.
pub struct Forward<'t> {
    pub members: Vec<Var<'t>>,
    pub alpha: Var<'t>,
    pub beta: Var<'t>,
    /// Fused action `l`, `[n × d]`.
    pub action: Var<'t>,
    /// Class probabilities, `[n × c]`.
    pub probs: Var<'t>,
    /// Q values, `[n × 1]`.
    pub q: Var<'t>,
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive dims")
}

impl AttentionBlock {
    fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, d: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: store.add(format!("{prefix}.wq"), xavier(rng, d, d)),
            wk: store.add(format!("{prefix}.wk"), xavier(rng, d, d)),
            wv: store.add(format!("{prefix}.wv"), xavier(rng, d, d)),
            wo: store.add(format!("{prefix}.wo"), xavier(rng, d, d)),
            bo: store.add(format!("{prefix}.bo"), Tensor::zeros(&[d])),
        }
    }

    pub fn params(&self) -> [ParamId; 5] {
        [self.wq, self.wk, self.wv, self.wo, self.bo]
    }

    /// Fuses equally shaped `[n × d]` token matrices into one `[n × d]`
    /// output: attention within each sample's tokens, mean over tokens,
    /// then the affine output layer.
    pub fn fuse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        tokens: &[Var<'t>],
    ) -> Result<Var<'t>, NumError> {
        if tokens.is_empty() {
            return Err(NumError::Contract("fusion needs at least one token".into()));
        }
        let x = interleave(tokens)?;
        let q = x.matmul(tape.param(store, self.wq))?;
        let k = x.matmul(tape.param(store, self.wk))?;
        let v = x.matmul(tape.param(store, self.wv))?;
        let mixed = attention(q, k, v, tokens.len(), self.heads)?;
        mixed
            .mean_pool(tokens.len())?
            .affine(tape.param(store, self.wo), tape.param(store, self.bo))
    }

    /// Query and key projections of the stacked tokens, for inspecting
    /// attention weights.
    pub fn project_qk(&self, store: &ParamStore, tokens: &[Tensor]) -> Result<(Tensor, Tensor), NumError> {
        let tape = Tape::new();
        let vars = tokens
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let x = interleave(&vars)?;
        let q = x.matmul(tape.param(store, self.wq))?.value().clone();
        let k = x.matmul(tape.param(store, self.wk))?.value().clone();
        Ok((q, k))
    }
}

/// Splits member features into two groups by index parity, appending one
/// zero feature first when the count is odd.
pub fn group_features<'t>(features: &[Var<'t>]) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>), NumError> {
    let first = features
        .first()
        .ok_or_else(|| NumError::Contract("no member features to group".into()))?;
    let mut padded = features.to_vec();
    if padded.len() % 2 == 1 {
        padded.push(first.tape().leaf(Tensor::zeros(&first.shape()))?);
    }
    let group_a = padded.iter().step_by(2).copied().collect();
    let group_b = padded.iter().skip(1).step_by(2).copied().collect();
    Ok((group_a, group_b))
}

impl Model {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self, NumError> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let mut store = ParamStore::new();
        let (d, hidden) = (config.feature_dim, config.hidden_dim);
        let members = config
            .modality_dims
            .iter()
            .enumerate()
            .map(|(j, &dim)| MemberAgent {
                modality: j,
                input_dim: dim,
                w1: store.add(format!("member{j}.w1"), xavier(&mut rng, dim, hidden)),
                b1: store.add(format!("member{j}.b1"), Tensor::zeros(&[hidden])),
                w2: store.add(format!("member{j}.w2"), xavier(&mut rng, hidden, d)),
                b2: store.add(format!("member{j}.b2"), Tensor::zeros(&[d])),
            })
            .collect();
        let leader = LeaderAgent {
            group_a: AttentionBlock::init(&mut store, &mut rng, "leader.group_a", d, config.heads),
            group_b: AttentionBlock::init(&mut store, &mut rng, "leader.group_b", d, config.heads),
            fusion: AttentionBlock::init(&mut store, &mut rng, "leader.fusion", d, config.heads),
        };
        let heads = Heads {
            class_w: store.add("heads.class.w", xavier(&mut rng, d, config.num_classes)),
            class_b: store.add("heads.class.b", Tensor::zeros(&[config.num_classes])),
            q_w: store.add("heads.q.w", xavier(&mut rng, d, 1)),
            q_b: store.add("heads.q.b", Tensor::zeros(&[1])),
        };
        Ok(Self {
            config,
            params: store,
            members,
            leader,
            heads,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Member features for one modality, `[n × d]`. Rows of missing
    /// modalities are exactly zero.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        modality: usize,
        x: &Tensor,
        present: &[bool],
    ) -> Result<Var<'t>, NumError> {
        let member = self
            .members
            .get(modality)
            .ok_or_else(|| NumError::Contract(format!("no member agent for modality {modality}")))?;
        if x.cols() != member.input_dim || !x.is_matrix() {
            return Err(NumError::Shape {
                op: "encode",
                left: vec![x.rows(), member.input_dim],
                right: x.shape().to_vec(),
            });
        }
        let p = &self.params;
        let h = tape
            .leaf(x.clone())?
            .affine(tape.param(p, member.w1), tape.param(p, member.b1))?
            .relu()?;
        let out = h.affine(tape.param(p, member.w2), tape.param(p, member.b2))?;
        if present.iter().all(|&f| f) {
            return Ok(out);
        }
        let d = self.config.feature_dim;
        let mask: Vec<f64> = present
            .iter()
            .flat_map(|&f| std::iter::repeat_n(if f { 1.0 } else { 0.0 }, d))
            .collect();
        out.mul(tape.leaf(Tensor::matrix(present.len(), d, mask)?)?)
    }

    /// Single-sample encoding; a missing modality maps to the zero vector.
    pub fn encode_one(&self, modality: usize, x: Option<&[f64]>) -> Result<Tensor, NumError> {
        let dim = self
            .members
            .get(modality)
            .ok_or_else(|| NumError::Contract(format!("no member agent for modality {modality}")))?
            .input_dim;
        let tape = Tape::new();
        let (input, present) = match x {
            Some(v) => (Tensor::matrix(1, v.len(), v.to_vec())?, true),
            None => (Tensor::zeros(&[1, dim]), false),
        };
        let out = self.encode(&tape, modality, &input, &[present])?;
        let v = out.value().clone().reshape(vec![self.config.feature_dim])?;
        Ok(v)
    }

    pub fn fuse_group<'t>(
        &self,
        tape: &'t Tape,
        block: &AttentionBlock,
        tokens: &[Var<'t>],
    ) -> Result<Var<'t>, NumError> {
        block.fuse(tape, &self.params, tokens)
    }

    /// Fuses `l_alpha` and `l_beta` into the action `l`.
    pub fn fuse_final<'t>(
        &self,
        tape: &'t Tape,
        alpha: Var<'t>,
        beta: Var<'t>,
    ) -> Result<Var<'t>, NumError> {
        self.leader.fusion.fuse(tape, &self.params, &[alpha, beta])
    }

    /// Class probabilities `[n × c]`.
    pub fn classify<'t>(&self, tape: &'t Tape, action: Var<'t>) -> Result<Var<'t>, NumError> {
        let p = &self.params;
        action
            .affine(tape.param(p, self.heads.class_w), tape.param(p, self.heads.class_b))?
            .softmax_rows()
    }

    /// Q values in (0, 1), `[n × 1]`.
    pub fn q_value<'t>(&self, tape: &'t Tape, action: Var<'t>) -> Result<Var<'t>, NumError> {
        let p = &self.params;
        action
            .affine(tape.param(p, self.heads.q_w), tape.param(p, self.heads.q_b))?
            .sigmoid()
    }

    pub fn forward<'t>(&self, tape: &'t Tape, batch: &BatchInput) -> Result<Forward<'t>, NumError> {
        if batch.inputs.len() != self.members.len() {
            return Err(NumError::Contract(format!(
                "batch has {} modalities, model has {}",
                batch.inputs.len(),
                self.members.len()
            )));
        }
        let members = batch
            .inputs
            .iter()
            .zip(&batch.present)
            .enumerate()
            .map(|(j, (x, present))| self.encode(tape, j, x, present))
            .collect::<Result<Vec<_>, _>>()?;
        let (group_a, group_b) = group_features(&members)?;
        let alpha = self.fuse_group(tape, &self.leader.group_a, &group_a)?;
        let beta = self.fuse_group(tape, &self.leader.group_b, &group_b)?;
        let action = self.fuse_final(tape, alpha, beta)?;
        let probs = self.classify(tape, action)?;
        let q = self.q_value(tape, action)?;
        Ok(Forward {
            members,
            alpha,
            beta,
            action,
            probs,
            q,
        })
    }

    /// Fused actions and class probabilities for the given samples, computed
    /// in chunks without keeping the graph.
    pub fn embed(&self, samples: &[&MultiModalSample]) -> Result<Embedding, NumError> {
        const CHUNK: usize = 256;
        let mut actions = Vec::with_capacity(samples.len());
        let mut probs = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(CHUNK) {
            let batch = BatchInput::from_samples(chunk, &self.config.modality_dims)?;
            let tape = Tape::new();
            let fwd = self.forward(&tape, &batch)?;
            let (a, p) = (fwd.action.value(), fwd.probs.value());
            for i in 0..chunk.len() {
                actions.push(a.row(i).to_vec());
                probs.push(p.row(i).to_vec());
            }
        }
        Ok(Embedding { actions, probs })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub actions: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}
