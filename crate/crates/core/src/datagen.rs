//! Synthetic multi-modal datasets following an open-set protocol.
//!
//! Every object has a latent vector drawn around its class mean; each
//! modality observes a fixed random linear projection of that latent plus
//! noise, so modalities are correlated views of one object. Classes below
//! `num_labeled_classes` carry ground-truth labels, the rest are unlabeled.
//!
//! The true class of every sample is kept in a separate table reachable
//! only through [`Dataset::hidden_classes`]; training code works on a
//! [`TrainingView`], which exposes label states but not that table.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

const FORMAT_TAG: &str = "mmncd-dataset v1";
const MISSING: &str = "missing";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("class {class} has {available} samples, need more than {requested} for the query split")]
    Split {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot iterate: {0}")]
    Iteration(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub id: usize,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelState {
    GroundTruth(usize),
    Pseudo(usize),
    Unlabeled,
}

impl LabelState {
    pub fn class(self) -> Option<usize> {
        match self {
            Self::GroundTruth(c) | Self::Pseudo(c) => Some(c),
            Self::Unlabeled => None,
        }
    }

    pub fn is_ground_truth(self) -> bool {
        matches!(self, Self::GroundTruth(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalSample {
    pub id: usize,
    /// One entry per modality; `None` marks a missing modality.
    pub modalities: Vec<Option<Vec<f64>>>,
    pub label: LabelState,
}

impl MultiModalSample {
    pub fn present_count(&self) -> usize {
        self.modalities.iter().filter(|m| m.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    modalities: Vec<ModalitySpec>,
    samples: Vec<MultiModalSample>,
    num_labeled_classes: usize,
    num_novel_classes: usize,
    hidden: Vec<usize>,
    seed: u64,
}

/// What the training loop may see: inputs and label states, never the
/// hidden class of an unlabeled sample.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub modalities: &'a [ModalitySpec],
    pub samples: &'a [MultiModalSample],
    pub num_labeled_classes: usize,
    pub num_novel_classes: usize,
}

impl TrainingView<'_> {
    pub fn labeled_ids(&self) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.label.is_ground_truth())
            .map(|s| s.id)
            .collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| !s.label.is_ground_truth())
            .map(|s| s.id)
            .collect()
    }
}

impl Dataset {
    pub fn new(
        modalities: Vec<ModalitySpec>,
        samples: Vec<MultiModalSample>,
        num_labeled_classes: usize,
        num_novel_classes: usize,
        hidden: Vec<usize>,
        seed: u64,
    ) -> Result<Self, DataError> {
        let ds = Self {
            modalities,
            samples,
            num_labeled_classes,
            num_novel_classes,
            hidden,
            seed,
        };
        ds.validate().map_err(DataError::Config)?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), String> {
        for (j, spec) in self.modalities.iter().enumerate() {
            if spec.id != j || spec.dim == 0 {
                return Err(format!("modality spec {spec:?} at position {j}"));
            }
        }
        if self.hidden.len() != self.samples.len() {
            return Err("hidden class table does not match sample count".into());
        }
        let total = self.num_labeled_classes + self.num_novel_classes;
        for (pos, (s, &h)) in self.samples.iter().zip(&self.hidden).enumerate() {
            if s.id != pos {
                return Err(format!("sample at position {pos} has id {}", s.id));
            }
            if h >= total {
                return Err(format!("sample {pos} has hidden class {h} >= {total}"));
            }
            if s.modalities.len() != self.modalities.len() {
                return Err(format!("sample {pos} has {} modalities", s.modalities.len()));
            }
            if s.present_count() == 0 {
                return Err(format!("sample {pos} has no modality present"));
            }
            for (spec, m) in self.modalities.iter().zip(&s.modalities) {
                if let Some(v) = m {
                    if v.len() != spec.dim {
                        return Err(format!(
                            "sample {pos} modality {} has {} values, expected {}",
                            spec.id,
                            v.len(),
                            spec.dim
                        ));
                    }
                }
            }
            match s.label {
                LabelState::GroundTruth(c) if c >= self.num_labeled_classes => {
                    return Err(format!("sample {pos} ground-truth class {c} is not a labeled class"));
                }
                LabelState::Pseudo(c) if c < self.num_labeled_classes => {
                    return Err(format!("sample {pos} pseudo class {c} collides with labeled classes"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn modalities(&self) -> &[ModalitySpec] {
        &self.modalities
    }

    pub fn samples(&self) -> &[MultiModalSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_labeled_classes(&self) -> usize {
        self.num_labeled_classes
    }

    pub fn num_novel_classes(&self) -> usize {
        self.num_novel_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True class of every sample. Evaluation only.
    pub fn hidden_classes(&self) -> &[usize] {
        &self.hidden
    }

    pub fn novel_classes(&self) -> Vec<usize> {
        (self.num_labeled_classes..self.num_labeled_classes + self.num_novel_classes).collect()
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            modalities: &self.modalities,
            samples: &self.samples,
            num_labeled_classes: self.num_labeled_classes,
            num_novel_classes: self.num_novel_classes,
        }
    }

    /// Marks modality `j` missing on every sample that has another modality
    /// left.
    pub fn without_modality(&self, j: usize) -> Result<Self, DataError> {
        if j >= self.modalities.len() {
            return Err(DataError::Config(format!("no modality {j}")));
        }
        let mut out = self.clone();
        for s in &mut out.samples {
            if s.modalities[j].is_some() && s.present_count() > 1 {
                s.modalities[j] = None;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_labeled_classes: usize,
    pub num_novel_classes: usize,
    pub samples_per_class: usize,
    pub latent_dim: usize,
    pub modality_dims: Vec<usize>,
    pub sigma_between: f64,
    pub sigma_within: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_labeled_classes: 8,
            num_novel_classes: 8,
            samples_per_class: 100,
            latent_dim: 8,
            modality_dims: vec![12, 16, 20, 24],
            sigma_between: 1.0,
            sigma_within: 0.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::Config(m.to_string()));
        if self.num_labeled_classes + self.num_novel_classes == 0 {
            return fail("at least one class is required");
        }
        if self.samples_per_class == 0 {
            return fail("samples_per_class must be positive");
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive");
        }
        if self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return fail("modality_dims must list at least one positive width");
        }
        if !(self.sigma_between > 0.0 && self.sigma_between.is_finite()) {
            return fail("sigma_between must be positive");
        }
        if !(self.sigma_within > 0.0 && self.sigma_within.is_finite()) {
            return fail("sigma_within must be positive");
        }
        Ok(())
    }
}

/// Draws a dataset from the shared-latent model. Deterministic per seed.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Data, 0);
    let between = Normal::new(0.0, config.sigma_between).expect("validated sigma");
    let within = Normal::new(0.0, config.sigma_within).expect("validated sigma");
    let latent = config.latent_dim;
    let proj_scale = 1.0 / (latent as f64).sqrt();

    let projections: Vec<Vec<f64>> = config
        .modality_dims
        .iter()
        .map(|&dim| {
            (0..dim * latent)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * proj_scale)
                .collect()
        })
        .collect();
    let num_classes = config.num_labeled_classes + config.num_novel_classes;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..latent).map(|_| between.sample(&mut rng)).collect())
        .collect();

    let mut samples = Vec::with_capacity(num_classes * config.samples_per_class);
    let mut hidden = Vec::with_capacity(samples.capacity());
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..config.samples_per_class {
            let z: Vec<f64> = mean.iter().map(|m| m + within.sample(&mut rng)).collect();
            let modalities = config
                .modality_dims
                .iter()
                .zip(&projections)
                .map(|(&dim, a)| {
                    let x = (0..dim)
                        .map(|r| {
                            let row = &a[r * latent..(r + 1) * latent];
                            row.iter().zip(&z).map(|(p, zi)| p * zi).sum::<f64>()
                                + within.sample(&mut rng)
                        })
                        .collect();
                    Some(x)
                })
                .collect();
            let label = if class < config.num_labeled_classes {
                LabelState::GroundTruth(class)
            } else {
                LabelState::Unlabeled
            };
            samples.push(MultiModalSample {
                id: samples.len(),
                modalities,
                label,
            });
            hidden.push(class);
        }
    }
    let modalities = config
        .modality_dims
        .iter()
        .enumerate()
        .map(|(id, &dim)| ModalitySpec { id, dim })
        .collect();
    Dataset::new(
        modalities,
        samples,
        config.num_labeled_classes,
        config.num_novel_classes,
        hidden,
        config.seed,
    )
}

/// Marks every (sample, modality) pair missing with probability `p`. A
/// sample that would lose every modality keeps one of its present
/// modalities, chosen uniformly.
pub fn drop_modalities(ds: &Dataset, p: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(0.0..1.0).contains(&p) {
        return Err(DataError::Config(format!(
            "drop probability must lie in [0, 1), got {p}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::ModalityDrop, 0);
    let mut out = ds.clone();
    for sample in &mut out.samples {
        let present: Vec<usize> = (0..sample.modalities.len())
            .filter(|&j| sample.modalities[j].is_some())
            .collect();
        let mut kept = Vec::with_capacity(present.len());
        for &j in &present {
            if rng.random::<f64>() >= p {
                kept.push(j);
            }
        }
        if kept.is_empty() {
            kept.push(present[rng.random_range(0..present.len())]);
        }
        for j in present {
            if !kept.contains(&j) {
                sample.modalities[j] = None;
            }
        }
    }
    Ok(out)
}

/// Query/target partition of the samples of some classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryTargetSplit {
    pub queries: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Picks `per_class_queries` queries from each listed class; the remaining
/// samples of those classes become targets. Both lists are sorted by id.
pub fn split_query_target(
    ds: &Dataset,
    classes: &[usize],
    per_class_queries: usize,
    seed: u64,
) -> Result<QueryTargetSplit, DataError> {
    let mut rng = stream_rng(seed, Stream::QuerySplit, 0);
    let mut queries = Vec::new();
    let mut targets = Vec::new();
    for &class in classes {
        let mut members: Vec<usize> = ds
            .hidden
            .iter()
            .enumerate()
            .filter(|(_, &h)| h == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() <= per_class_queries {
            return Err(DataError::Split {
                class,
                available: members.len(),
                requested: per_class_queries,
            });
        }
        members.shuffle(&mut rng);
        queries.extend_from_slice(&members[..per_class_queries]);
        targets.extend_from_slice(&members[per_class_queries..]);
    }
    queries.sort_unstable();
    targets.sort_unstable();
    Ok(QueryTargetSplit { queries, targets })
}

/// Shuffled mini-batches of sample ids for one epoch.
pub struct BatchIterator {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIterator {
    /// The permutation depends only on `(seed, epoch)` and the id list.
    pub fn new(ids: &[usize], batch_size: usize, seed: u64, epoch: u32) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::Iteration("batch size must be positive".into()));
        }
        if ids.is_empty() {
            return Err(DataError::Iteration("no samples to batch".into()));
        }
        let mut order = ids.to_vec();
        order.shuffle(&mut stream_rng(seed, Stream::Batching, epoch));
        Ok(Self {
            order,
            batch_size,
            pos: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// Batches over every sample of a dataset.
pub fn batch_iterator(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u32,
) -> Result<BatchIterator, DataError> {
    let ids: Vec<usize> = (0..ds.len()).collect();
    BatchIterator::new(&ids, batch_size, seed, epoch)
}

fn format_label(label: LabelState) -> String {
    match label {
        LabelState::GroundTruth(c) => format!("gt:{c}"),
        LabelState::Pseudo(c) => format!("pseudo:{c}"),
        LabelState::Unlabeled => "unlabeled".into(),
    }
}

/// Serializes a dataset to the text format read by [`load_dataset`].
pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    let dims: Vec<String> = ds.modalities.iter().map(|m| m.dim.to_string()).collect();
    let _ = writeln!(out, "{FORMAT_TAG}");
    let _ = writeln!(out, "modalities {} {}", ds.modalities.len(), dims.join(" "));
    let _ = writeln!(out, "classes {} {}", ds.num_labeled_classes, ds.num_novel_classes);
    let _ = writeln!(out, "seed {}", ds.seed);
    let _ = writeln!(out, "samples {}", ds.samples.len());
    for (s, h) in ds.samples.iter().zip(&ds.hidden) {
        let _ = write!(out, "{} {} {}", s.id, format_label(s.label), h);
        for (j, m) in s.modalities.iter().enumerate() {
            match m {
                None => {
                    let _ = write!(out, " {j}={MISSING}");
                }
                Some(v) => {
                    let _ = write!(out, " {j}=");
                    for (i, x) in v.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        let _ = write!(out, "{x:?}");
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes via a temporary sibling file and a rename, so readers never see
/// a half-written dataset.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    write_atomic(path, dataset_to_string(ds).as_bytes())?;
    Ok(())
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = match dir {
        Some(d) => d.join(format!(".{file_name}.tmp")),
        None => Path::new(&format!(".{file_name}.tmp")).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    parse_dataset(&fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), DataError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(DataError::Parse {
                line: self.last + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), DataError> {
        let (n, line) = self.next_line(key)?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(key) {
            return Err(DataError::Parse {
                line: n,
                message: format!("expected `{key}` record"),
            });
        }
        Ok((n, fields.collect()))
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, DataError> {
    s.parse().map_err(|_| DataError::Parse {
        line,
        message: format!("invalid {what} `{s}`"),
    })
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (n, tag) = lines.next_line("format tag")?;
    if tag.trim() != FORMAT_TAG {
        return Err(DataError::Parse {
            line: n,
            message: format!("expected `{FORMAT_TAG}`"),
        });
    }
    let (n, fields) = lines.keyed("modalities")?;
    let m: usize = parse_num(fields.first().copied().unwrap_or(""), n, "modality count")?;
    if fields.len() != m + 1 || m == 0 {
        return Err(DataError::Parse {
            line: n,
            message: format!("modality record lists {} widths for {m} modalities", fields.len().saturating_sub(1)),
        });
    }
    let modalities = fields[1..]
        .iter()
        .enumerate()
        .map(|(id, f)| Ok(ModalitySpec { id, dim: parse_num(f, n, "modality width")? }))
        .collect::<Result<Vec<_>, DataError>>()?;
    let (n, fields) = lines.keyed("classes")?;
    if fields.len() != 2 {
        return Err(DataError::Parse { line: n, message: "classes record needs two counts".into() });
    }
    let k_l: usize = parse_num(fields[0], n, "labeled class count")?;
    let k_u: usize = parse_num(fields[1], n, "novel class count")?;
    let (n, fields) = lines.keyed("seed")?;
    let seed: u64 = parse_num(fields.first().copied().unwrap_or(""), n, "seed")?;
    let (n, fields) = lines.keyed("samples")?;
    let count: usize = parse_num(fields.first().copied().unwrap_or(""), n, "sample count")?;

    let mut samples = Vec::with_capacity(count);
    let mut hidden = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = lines.next_line("sample record")?;
        let (sample, h) = parse_sample(line, n, &modalities)?;
        samples.push(sample);
        hidden.push(h);
    }
    if let Some((i, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(DataError::Parse {
            line: i + 1,
            message: format!("unexpected trailing record `{}`", extra.chars().take(32).collect::<String>()),
        });
    }
    Dataset::new(modalities, samples, k_l, k_u, hidden, seed).map_err(|e| match e {
        DataError::Config(message) => DataError::Parse { line: 0, message },
        other => other,
    })
}

fn parse_sample(
    line: &str,
    n: usize,
    specs: &[ModalitySpec],
) -> Result<(MultiModalSample, usize), DataError> {
    let err = |message: String| DataError::Parse { line: n, message };
    let mut fields = line.split_whitespace();
    let id: usize = parse_num(fields.next().unwrap_or(""), n, "sample id")?;
    let label = match fields.next().unwrap_or("") {
        "unlabeled" => LabelState::Unlabeled,
        other => match other.split_once(':') {
            Some(("gt", c)) => LabelState::GroundTruth(parse_num(c, n, "class")?),
            Some(("pseudo", c)) => LabelState::Pseudo(parse_num(c, n, "class")?),
            _ => return Err(err(format!("invalid label state `{other}`"))),
        },
    };
    let hidden: usize = parse_num(fields.next().unwrap_or(""), n, "hidden class")?;
    let mut modalities: Vec<Option<Option<Vec<f64>>>> = vec![None; specs.len()];
    for field in fields {
        let (j, body) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed modality field `{field}`")))?;
        let j: usize = parse_num(j, n, "modality id")?;
        let spec = specs
            .get(j)
            .ok_or_else(|| err(format!("unknown modality id {j}")))?;
        if modalities[j].is_some() {
            return Err(err(format!("modality {j} listed twice")));
        }
        let value = if body == MISSING {
            None
        } else {
            let v = body
                .split(',')
                .map(|x| parse_num::<f64>(x, n, "value"))
                .collect::<Result<Vec<_>, _>>()?;
            if v.len() != spec.dim {
                return Err(err(format!(
                    "modality {j} has {} values, expected {}",
                    v.len(),
                    spec.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(format!("modality {j} contains a non-finite value")));
            }
            Some(v)
        };
        modalities[j] = Some(value);
    }
    let modalities = modalities
        .into_iter()
        .enumerate()
        .map(|(j, m)| m.ok_or_else(|| err(format!("modality {j} not listed"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((MultiModalSample { id, modalities, label }, hidden))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            num_labeled_classes: 2,
            num_novel_classes: 2,
            samples_per_class: 5,
            latent_dim: 3,
            modality_dims: vec![2, 3, 4],
            seed: 11,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn counts_and_label_states() {
        let cfg = GeneratorConfig {
            num_labeled_classes: 2,
            num_novel_classes: 0,
            samples_per_class: 3,
            ..small()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 6);
        assert!(ds.samples().iter().all(|s| s.label.is_ground_truth()));

        let ds = generate_dataset(&small()).unwrap();
        for (s, &h) in ds.samples().iter().zip(ds.hidden_classes()) {
            if h < 2 {
                assert_eq!(s.label, LabelState::GroundTruth(h));
            } else {
                assert_eq!(s.label, LabelState::Unlabeled);
            }
        }
    }

    #[test]
    fn rejects_empty_configs() {
        let cfg = GeneratorConfig {
            samples_per_class: 0,
            ..small()
        };
        assert!(matches!(generate_dataset(&cfg), Err(DataError::Config(_))));
        let cfg = GeneratorConfig {
            num_labeled_classes: 0,
            num_novel_classes: 0,
            ..small()
        };
        assert!(matches!(generate_dataset(&cfg), Err(DataError::Config(_))));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = dataset_to_string(&generate_dataset(&small()).unwrap());
        let b = dataset_to_string(&generate_dataset(&small()).unwrap());
        assert_eq!(a, b);
        let c = dataset_to_string(&generate_dataset(&GeneratorConfig { seed: 12, ..small() }).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn drop_zero_is_identity_and_guard_keeps_one() {
        let ds = generate_dataset(&small()).unwrap();
        assert_eq!(drop_modalities(&ds, 0.0, 3).unwrap(), ds);
        assert!(drop_modalities(&ds, 1.0, 3).is_err());

        let single = generate_dataset(&GeneratorConfig {
            modality_dims: vec![4],
            ..small()
        })
        .unwrap();
        let dropped = drop_modalities(&single, 0.9, 5).unwrap();
        assert!(dropped.samples().iter().all(|s| s.present_count() == 1));
    }

    #[test]
    fn split_counts_and_partition() {
        let ds = generate_dataset(&small()).unwrap();
        let split = split_query_target(&ds, &[2, 3], 1, 0).unwrap();
        assert_eq!(split.queries.len(), 2);
        assert_eq!(split.targets.len(), 8);
        let mut all: Vec<usize> = split.queries.iter().chain(&split.targets).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (10..20).collect::<Vec<_>>());

        let err = split_query_target(&ds, &[2], 5, 0).unwrap_err();
        assert!(err.to_string().contains("class 2"), "{err}");
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let ids: Vec<usize> = (0..10).collect();
        let sizes: Vec<usize> = BatchIterator::new(&ids, 3, 1, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let a: Vec<_> = BatchIterator::new(&ids, 3, 1, 4).unwrap().collect();
        let b: Vec<_> = BatchIterator::new(&ids, 3, 1, 4).unwrap().collect();
        let c: Vec<_> = BatchIterator::new(&ids, 3, 1, 5).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut flat: Vec<usize> = a.concat();
        flat.sort_unstable();
        assert_eq!(flat, ids);
        assert!(BatchIterator::new(&[], 3, 1, 0).is_err());
        assert!(BatchIterator::new(&ids, 0, 1, 0).is_err());
    }

    #[test]
    fn parse_errors_are_positioned() {
        let ds = generate_dataset(&small()).unwrap();
        let text = dataset_to_string(&ds);

        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        match parse_dataset(&truncated) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("{other:?}"),
        }

        let bad = text.replacen(" 2=", " 7=", 1);
        let err = parse_dataset(&bad).unwrap_err();
        assert!(err.to_string().contains("unknown modality id 7"), "{err}");

        let cut_value = {
            let mut lines: Vec<String> = text.lines().map(String::from).collect();
            let last = lines.last_mut().unwrap();
            let cut = last.rfind(',').unwrap();
            last.truncate(cut);
            lines.join("\n")
        };
        assert!(matches!(parse_dataset(&cut_value), Err(DataError::Parse { .. })));
    }
}
