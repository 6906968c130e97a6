use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args};
use mmncd_core::datagen::GeneratorConfig;
use mmncd_core::policy::LossSwitches;
use mmncd_core::stlclu::{Metric, RelaxationSchedule};
use mmncd_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every setting a command can read, as one flat table. The snapshot of a
/// run is this struct serialized to TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub num_labeled_classes: usize,
    pub num_novel_classes: usize,
    pub samples_per_class: usize,
    pub latent_dim: usize,
    pub modality_dims: Vec<usize>,
    pub sigma_between: f64,
    pub sigma_within: f64,
    pub drop_probability: f64,

    pub pretrain_epochs: u32,
    pub train_epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eps_min: f64,
    pub tau: f64,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_slots: Option<usize>,
    pub ce: bool,
    pub td: bool,
    pub ss: bool,
    pub stlclu: bool,
    pub eps_growth: f64,
    pub min_pts_decrement: usize,
    pub min_pts_floor: usize,
    pub metric: Metric,

    pub queries_per_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let t = TrainConfig::default();
        Self {
            seed: 0,
            num_labeled_classes: g.num_labeled_classes,
            num_novel_classes: g.num_novel_classes,
            samples_per_class: g.samples_per_class,
            latent_dim: g.latent_dim,
            modality_dims: g.modality_dims,
            sigma_between: g.sigma_between,
            sigma_within: g.sigma_within,
            drop_probability: 0.0,
            pretrain_epochs: t.pretrain_epochs,
            train_epochs: t.train_epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            eps_min: t.eps_min,
            tau: t.tau,
            feature_dim: t.feature_dim,
            hidden_dim: t.hidden_dim,
            heads: t.heads,
            pseudo_slots: t.pseudo_slots,
            ce: t.switches.ce,
            td: t.switches.td,
            ss: t.switches.ss,
            stlclu: t.stlclu,
            eps_growth: t.relaxation.eps_growth,
            min_pts_decrement: t.relaxation.min_pts_decrement,
            min_pts_floor: t.relaxation.min_pts_floor,
            metric: t.metric,
            queries_per_class: mmncd_core::evalkit::DEFAULT_QUERIES_PER_CLASS,
        }
    }
}

impl RunConfig {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            num_labeled_classes: self.num_labeled_classes,
            num_novel_classes: self.num_novel_classes,
            samples_per_class: self.samples_per_class,
            latent_dim: self.latent_dim,
            modality_dims: self.modality_dims.clone(),
            sigma_between: self.sigma_between,
            sigma_within: self.sigma_within,
            seed: self.seed,
        }
    }

    pub fn schedule(&self) -> RelaxationSchedule {
        RelaxationSchedule {
            eps_growth: self.eps_growth,
            min_pts_decrement: self.min_pts_decrement,
            min_pts_floor: self.min_pts_floor,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            pretrain_epochs: self.pretrain_epochs,
            train_epochs: self.train_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            eps_min: self.eps_min,
            switches: LossSwitches {
                ce: self.ce,
                td: self.td,
                ss: self.ss,
            },
            stlclu: self.stlclu,
            seed: self.seed,
            tau: self.tau,
            relaxation: self.schedule(),
            metric: self.metric,
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            pseudo_slots: self.pseudo_slots,
        }
    }

    /// Checks every field a command may use, naming the first bad one.
    pub fn validate(&self) -> Result<(), CliError> {
        self.generator()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.training()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        mmncd_core::agents::AgentConfig {
            modality_dims: self.modality_dims.clone(),
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            num_classes: 1,
        }
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(CliError::Usage(format!(
                "drop_probability must lie in [0, 1], got {}",
                self.drop_probability
            )));
        }
        if self.queries_per_class == 0 {
            return Err(CliError::Usage("queries_per_class must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat table of plain values")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Flags shared by every command. Each one overrides the config file, which
/// overrides the built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat TOML file with any of the keys below (underscored)
    #[arg(long, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,

    /// Root seed for every random stream
    #[arg(long, default_value_t = RunConfig::default().seed)]
    pub seed: u64,

    /// Labeled (known) classes
    #[arg(long, default_value_t = RunConfig::default().num_labeled_classes)]
    pub num_labeled_classes: usize,
    /// Novel classes whose labels are withheld
    #[arg(long, default_value_t = RunConfig::default().num_novel_classes)]
    pub num_novel_classes: usize,
    #[arg(long, default_value_t = RunConfig::default().samples_per_class)]
    pub samples_per_class: usize,
    /// Width of the shared latent vector
    #[arg(long, default_value_t = RunConfig::default().latent_dim)]
    pub latent_dim: usize,
    /// Feature width of each modality, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = RunConfig::default().modality_dims)]
    pub modality_dims: Vec<usize>,
    /// Spread of class centres in latent space
    #[arg(long, default_value_t = RunConfig::default().sigma_between)]
    pub sigma_between: f64,
    /// Spread of samples around their class centre
    #[arg(long, default_value_t = RunConfig::default().sigma_within)]
    pub sigma_within: f64,
    /// Probability of dropping each modality of a generated sample
    #[arg(long, default_value_t = RunConfig::default().drop_probability)]
    pub drop_probability: f64,

    #[arg(long, default_value_t = RunConfig::default().pretrain_epochs)]
    pub pretrain_epochs: u32,
    #[arg(long, default_value_t = RunConfig::default().train_epochs)]
    pub train_epochs: u32,
    #[arg(long, default_value_t = RunConfig::default().batch_size)]
    pub batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = RunConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = RunConfig::default().weight_decay)]
    pub weight_decay: f64,
    /// Exploration floor
    #[arg(long, default_value_t = RunConfig::default().eps_min)]
    pub eps_min: f64,
    /// Contrastive temperature
    #[arg(long, default_value_t = RunConfig::default().tau)]
    pub tau: f64,
    #[arg(long, default_value_t = RunConfig::default().feature_dim)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = RunConfig::default().hidden_dim)]
    pub hidden_dim: usize,
    /// Attention heads per fusion block
    #[arg(long, default_value_t = RunConfig::default().heads)]
    pub heads: usize,
    /// Class-head slots reserved for pseudo-labels [default: 2 x novel classes]
    #[arg(long)]
    pub pseudo_slots: Option<usize>,
    /// Drop the cross-entropy term
    #[arg(long)]
    pub no_ce: bool,
    /// Drop the TD term
    #[arg(long)]
    pub no_td: bool,
    /// Drop the contrastive term
    #[arg(long)]
    pub no_ss: bool,
    /// Skip pseudo-labeling
    #[arg(long)]
    pub no_stlclu: bool,
    /// Per-epoch growth of the clustering radius
    #[arg(long, default_value_t = RunConfig::default().eps_growth)]
    pub eps_growth: f64,
    /// Per-epoch decrement of the density threshold
    #[arg(long, default_value_t = RunConfig::default().min_pts_decrement)]
    pub min_pts_decrement: usize,
    /// Lowest density threshold the schedule reaches
    #[arg(long, default_value_t = RunConfig::default().min_pts_floor)]
    pub min_pts_floor: usize,
    /// Distance used for clustering
    #[arg(long, default_value = "euclidean", value_parser = ["euclidean", "cosine"])]
    pub metric: String,

    /// Retrieval queries drawn per novel class
    #[arg(long, default_value_t = RunConfig::default().queries_per_class)]
    pub queries_per_class: usize,
}

fn from_command_line(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags given on the command line.
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),* $(,)?) => {
                $(if from_command_line(m, stringify!($field)) {
                    c.$field = self.$field.clone();
                })*
            };
        }
        take!(
            seed,
            num_labeled_classes,
            num_novel_classes,
            samples_per_class,
            latent_dim,
            modality_dims,
            sigma_between,
            sigma_within,
            drop_probability,
            pretrain_epochs,
            train_epochs,
            batch_size,
            lr,
            weight_decay,
            eps_min,
            tau,
            feature_dim,
            hidden_dim,
            heads,
            eps_growth,
            min_pts_decrement,
            min_pts_floor,
            queries_per_class,
        );
        if self.pseudo_slots.is_some() {
            c.pseudo_slots = self.pseudo_slots;
        }
        if self.no_ce {
            c.ce = false;
        }
        if self.no_td {
            c.td = false;
        }
        if self.no_ss {
            c.ss = false;
        }
        if self.no_stlclu {
            c.stlclu = false;
        }
        if from_command_line(m, "metric") {
            c.metric = if self.metric == "cosine" { Metric::Cosine } else { Metric::Euclidean };
        }
        c.validate()?;
        Ok(c)
    }
}
