//! Archive layout: a text header (one `key value` pair per line, then one
//! line per parameter with its name and shape) terminated by `payload N`,
//! followed by `N` little-endian f64 values: every parameter value in
//! declaration order, then the Adam first moments, then the second moments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{AdamState, EpochRecord, TrainConfig, TrainError, Trainer};
use crate::agents::Model;
use crate::datagen::{write_atomic, TrainingView};
use crate::numkit::Tensor;
use crate::stlclu::{ClusterParams, PseudoLabelStore};

const MAGIC: &str = "mmncd-checkpoint v1";

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl Trainer {
    /// Serializes the complete run state.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut h = String::new();
        writeln!(h, "{MAGIC}").unwrap();
        writeln!(h, "digest {}", self.model.config.digest()).unwrap();
        writeln!(h, "config {}", self.config.to_json()).unwrap();
        writeln!(h, "epoch {}", self.epochs_done).unwrap();
        writeln!(h, "pretrain_iterations {}", self.pretrain_iterations).unwrap();
        writeln!(h, "train_iterations {}", self.train_iterations).unwrap();
        writeln!(h, "adam_step {}", self.adam.step).unwrap();
        match self.calibrated {
            // bit pattern keeps the radius exact
            Some(p) => writeln!(h, "calibration {:016x} {}", p.eps.to_bits(), p.min_pts).unwrap(),
            None => writeln!(h, "calibration none").unwrap(),
        }
        writeln!(
            h,
            "pseudo {} {} {}",
            self.store.first_id(),
            self.store.next_id(),
            self.store.len()
        )
        .unwrap();
        for (id, label) in self.store.iter() {
            writeln!(h, "{id} {label}").unwrap();
        }
        writeln!(h, "history {}", serde_json::to_string(&self.history).expect("history serializes")).unwrap();
        writeln!(h, "params {}", self.model.params.len()).unwrap();
        for p in self.model.params.iter() {
            writeln!(h, "{} {}", p.name, shape_str(p.value.shape())).unwrap();
        }
        let count = 3 * self.model.params.num_scalars();
        writeln!(h, "payload {count}").unwrap();

        let mut bytes = h.into_bytes();
        bytes.reserve(8 * count);
        let tensors = self
            .model
            .params
            .iter()
            .map(|p| &p.value)
            .chain(&self.adam.m)
            .chain(&self.adam.v);
        for t in tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        write_atomic(path, &self.checkpoint_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path, view: &TrainingView<'_>) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path)?;
        Self::from_checkpoint_bytes(&bytes, view)
    }

    /// Restores a run. Nothing is built unless the whole archive parses and
    /// matches the architecture implied by its config and `view`.
    pub fn from_checkpoint_bytes(bytes: &[u8], view: &TrainingView<'_>) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0, line: 0 };
        if r.line()? != MAGIC {
            return Err(r.err("not a checkpoint archive"));
        }
        let digest = r.field("digest")?;
        let config: TrainConfig = serde_json::from_str(&r.field("config")?)
            .map_err(|e| r.err(&format!("config: {e}")))?;
        config.validate()?;
        let epochs_done: u32 = r.parsed("epoch")?;
        let pretrain_iterations: u64 = r.parsed("pretrain_iterations")?;
        let train_iterations: u64 = r.parsed("train_iterations")?;
        let adam_step: u64 = r.parsed("adam_step")?;
        let calibration = r.field("calibration")?;
        let calibrated = if calibration == "none" {
            None
        } else {
            let (bits, min_pts) = calibration
                .split_once(' ')
                .ok_or_else(|| r.err("calibration needs a radius and a density"))?;
            let eps = u64::from_str_radix(bits, 16)
                .map(f64::from_bits)
                .map_err(|e| r.err(&format!("radius: {e}")))?;
            let min_pts = min_pts.parse().map_err(|e| r.err(&format!("density: {e}")))?;
            Some(ClusterParams::new(eps, min_pts).map_err(|e| r.err(&e.to_string()))?)
        };
        let pseudo = r.field("pseudo")?;
        let nums: Vec<usize> = pseudo
            .split(' ')
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| r.err(&format!("pseudo header: {e}")))?;
        let [first, next, count] = nums[..] else {
            return Err(r.err("pseudo header needs three numbers"));
        };
        let mut labels = BTreeMap::new();
        for _ in 0..count {
            let line = r.line()?;
            let parsed = line
                .split_once(' ')
                .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
            let (id, label) = parsed.ok_or_else(|| r.err("expected `sample label`"))?;
            if labels.insert(id, label).is_some() {
                return Err(r.err(&format!("sample {id} listed twice")));
            }
        }
        let store = PseudoLabelStore::from_parts(first, next, labels).map_err(|e| r.err(&e.to_string()))?;
        let history: Vec<EpochRecord> = serde_json::from_str(&r.field("history")?)
            .map_err(|e| r.err(&format!("history: {e}")))?;
        let param_count: usize = r.parsed("params")?;
        let mut declared = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            let line = r.line()?;
            let (name, shape) = line.rsplit_once(' ').ok_or_else(|| r.err("expected `name shape`"))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse())
                .collect::<Result<_, _>>()
                .map_err(|e| r.err(&format!("shape: {e}")))?;
            declared.push((name.to_string(), shape));
        }
        let payload: usize = r.parsed("payload")?;
        let data = &bytes[r.pos..];
        if data.len() != payload * 8 {
            return Err(TrainError::Parse {
                line: r.line + 1,
                message: format!(
                    "payload holds {} bytes, header promises {} values",
                    data.len(),
                    payload
                ),
            });
        }

        if config.total_epochs() < epochs_done || history.len() != epochs_done as usize {
            return Err(TrainError::Parse {
                line: 0,
                message: "epoch counter disagrees with the recorded history".into(),
            });
        }

        let agent = config.agent_config(view);
        if agent.digest() != digest {
            return Err(TrainError::Incompatible(format!(
                "archive was written for architecture {digest}, data implies {}",
                agent.digest()
            )));
        }
        let mut model = Model::new(agent, config.seed)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect();
        if expected != declared {
            return Err(TrainError::Incompatible("parameter names or shapes differ".into()));
        }
        let scalars = model.params.num_scalars();
        if payload != 3 * scalars {
            return Err(TrainError::Incompatible(format!(
                "payload has {payload} values, the model needs {}",
                3 * scalars
            )));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), values.by_ref().take(n).collect()).expect("declared shape")
        };
        let shapes: Vec<Vec<usize>> = declared.iter().map(|d| d.1.clone()).collect();
        for (p, shape) in model.params.iter_mut().zip(&shapes) {
            p.value = take(shape);
        }
        let m = shapes.iter().map(|s| take(s)).collect();
        let v = shapes.iter().map(|s| take(s)).collect();

        Ok(Self {
            config,
            model,
            adam: AdamState { m, v, step: adam_step },
            store,
            calibrated,
            epochs_done,
            pretrain_iterations,
            train_iterations,
            history,
            iterations: Vec::new(),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl Reader<'_> {
    fn err(&self, message: &str) -> TrainError {
        TrainError::Parse {
            line: self.line,
            message: message.to_string(),
        }
    }

    fn line(&mut self) -> Result<String, TrainError> {
        self.line += 1;
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err("archive is truncated"))?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| self.err("header is not text"))?;
        self.pos += end + 1;
        Ok(text.to_string())
    }

    fn field(&mut self, key: &str) -> Result<String, TrainError> {
        let line = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(self.err(&format!("expected `{key}`"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, TrainError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.field(key)?;
        v.parse().map_err(|e| self.err(&format!("{key}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GeneratorConfig};

    fn data() -> crate::datagen::Dataset {
        generate_dataset(&GeneratorConfig {
            num_labeled_classes: 2,
            num_novel_classes: 2,
            samples_per_class: 12,
            modality_dims: vec![4, 5],
            latent_dim: 3,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            pretrain_epochs: 1,
            train_epochs: 3,
            feature_dim: 8,
            hidden_dim: 8,
            heads: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ds = data();
        let view = ds.training_view();
        let mut t = Trainer::new(config(), &view).unwrap();
        t.run_epoch(&view, None).unwrap();
        t.run_epoch(&view, None).unwrap();
        let a = t.checkpoint_bytes();
        let back = Trainer::from_checkpoint_bytes(&a, &view).unwrap();
        assert_eq!(back.checkpoint_bytes(), a);
        let values = |t: &Trainer| t.model.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(values(&back), values(&t));
        assert_eq!(back.pseudo_labels(), t.pseudo_labels());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = data();
        let view = ds.training_view();
        let mut full = Trainer::new(config(), &view).unwrap();
        full.train(&view, None).unwrap();

        let mut first = Trainer::new(config(), &view).unwrap();
        first.run_epoch(&view, None).unwrap();
        first.run_epoch(&view, None).unwrap();
        let mut resumed = Trainer::from_checkpoint_bytes(&first.checkpoint_bytes(), &view).unwrap();
        resumed.train(&view, None).unwrap();
        assert_eq!(resumed.history(), full.history());
        assert_eq!(resumed.model.params, full.model.params);
        assert_eq!(resumed.checkpoint_bytes(), full.checkpoint_bytes());
    }

    #[test]
    fn truncation_and_mismatch_are_rejected() {
        let ds = data();
        let view = ds.training_view();
        let t = Trainer::new(config(), &view).unwrap();
        let bytes = t.checkpoint_bytes();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Trainer::from_checkpoint_bytes(cut, &view),
            Err(TrainError::Parse { .. })
        ));
        let header_cut = &bytes[..40];
        assert!(matches!(
            Trainer::from_checkpoint_bytes(header_cut, &view),
            Err(TrainError::Parse { .. })
        ));

        let other = generate_dataset(&GeneratorConfig {
            num_labeled_classes: 2,
            num_novel_classes: 2,
            samples_per_class: 12,
            modality_dims: vec![4, 6],
            latent_dim: 3,
            ..GeneratorConfig::default()
        })
        .unwrap();
        assert!(matches!(
            Trainer::from_checkpoint_bytes(&bytes, &other.training_view()),
            Err(TrainError::Incompatible(_))
        ));
    }
}
