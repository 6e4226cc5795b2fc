//! TOML experiment configuration.
//!
//! Every section rejects unknown keys, and [`ExperimentConfig::validate`]
//! runs before any data is loaded or any model is built.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fedode_core::data::{load_cifar10, synth_train_test, Dataset, CIFAR_CLASSES};
use fedode_core::federated::{Algorithm, ClientSpec, FedConfig, FedDfOptions};
use fedode_core::models::{depth_to_iterations, EulerMode, Family, ModelConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated: Option<FederatedSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSection>,
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DataSource,
    /// Directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub side: usize,
    pub noise: f32,
    pub seed: u64,
    /// Training samples held back from the tail of the training split to
    /// serve as the FedDF distillation pool.
    pub server_pool: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: DataSource::Synthetic,
            path: None,
            classes: 4,
            train_per_class: 64,
            test_per_class: 32,
            side: 16,
            noise: 0.3,
            seed: 0,
            server_pool: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    /// Nominal depth `N`; mutually exclusive with `iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default = "default_widths")]
    pub widths: [usize; 3],
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default = "default_groups")]
    pub norm_groups: usize,
    #[serde(default)]
    pub euler_mode: EulerMode,
}

fn default_widths() -> [usize; 3] {
    ModelConfig::default().stage_channels
}

fn default_kernel() -> usize {
    3
}

fn default_groups() -> usize {
    ModelConfig::default().norm_groups
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Iteration counts the trained model is evaluated at.
    pub test_iterations: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            seed: 0,
            test_iterations: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    InProcess,
    /// Loopback TCP: the server and one thread per client in this process.
    Socket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedSection {
    /// Derived from the client list when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_local_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_true")]
    pub track_train_loss: bool,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_address")]
    pub address: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Explicit iteration count per client, in id order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_iterations: Option<Vec<usize>>,
    /// Shorthand such as `["10x odenet-34", "10x odenet-50"]`; ids follow list order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_mix: Option<Vec<String>>,
    #[serde(default)]
    pub feddf: FedDfOptions,
}

fn default_fraction() -> f64 {
    1.0
}
fn default_local_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f32 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_address() -> String {
    "127.0.0.1:7070".into()
}
fn default_timeout() -> u64 {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Only needed when there is no `[federated]` section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Training and test splits plus the optional distillation pool.
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
    pub server_pool: Option<Dataset>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).context("config schema")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    /// The config with every default spelled out.
    pub fn effective_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.source {
            DataSource::Synthetic => {
                ensure!(d.path.is_none(), "dataset.path: only valid for source = \"cifar10\"");
                ensure!(d.classes >= 2, "dataset.classes: need at least 2, got {}", d.classes);
                ensure!(d.train_per_class >= 1, "dataset.train_per_class: must be at least 1");
                ensure!(d.test_per_class >= 1, "dataset.test_per_class: must be at least 1");
                ensure!(d.side >= 8, "dataset.side: must be at least 8, got {}", d.side);
                ensure!(
                    d.noise.is_finite() && d.noise >= 0.0,
                    "dataset.noise: must be finite and non-negative"
                );
                ensure!(
                    d.server_pool < d.classes * d.train_per_class,
                    "dataset.server_pool: {} leaves no training samples",
                    d.server_pool
                );
            }
            DataSource::Cifar10 => {
                ensure!(d.path.is_some(), "dataset.path: required for source = \"cifar10\"");
            }
        }
        self.model_config()?;
        if let Some(t) = &self.train {
            ensure!(t.batch_size >= 1, "train.batch_size: must be at least 1");
            ensure!(t.lr.is_finite() && t.lr > 0.0, "train.lr: must be positive");
            ensure!(
                !t.test_iterations.contains(&0),
                "train.test_iterations: iteration counts must be at least 1"
            );
            let trained = self.model_config()?.iterations;
            if self.model.family == Family::Resnet {
                ensure!(
                    t.test_iterations.iter().all(|&c| c == trained),
                    "train.test_iterations: resnet weights cannot be re-iterated"
                );
            }
        }
        if let Some(f) = &self.federated {
            self.fed_config()?;
            self.client_specs()?;
            ensure!(f.batch_size >= 1, "federated.batch_size: must be at least 1");
            ensure!(f.lr.is_finite() && f.lr > 0.0, "federated.lr: must be positive");
            ensure!(f.timeout_secs >= 1, "federated.timeout_secs: must be at least 1");
            if f.algorithm == Algorithm::Feddf {
                ensure!(
                    self.dataset.server_pool > 0,
                    "dataset.server_pool: feddf needs a distillation pool"
                );
            }
            ensure!(
                self.partition.is_some(),
                "partition: a [partition] section is required for federated runs"
            );
        }
        if let Some(p) = &self.partition {
            ensure!(
                p.alpha.is_finite() && p.alpha > 0.0,
                "partition.alpha: must be positive, got {}",
                p.alpha
            );
            self.partition_clients()?;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self.dataset.source {
            DataSource::Synthetic => self.dataset.classes,
            DataSource::Cifar10 => CIFAR_CLASSES,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let iterations = match (m.depth, m.iterations) {
            (Some(_), Some(_)) => bail!("model: set either `depth` or `iterations`, not both"),
            (None, None) => bail!("model: one of `depth` or `iterations` is required"),
            (Some(depth), None) => depth_to_iterations(depth).context("model.depth")?.iterations,
            (None, Some(c)) => c,
        };
        let config = ModelConfig {
            family: m.family,
            in_channels: 3,
            stem_channels: m.widths[0],
            stage_channels: m.widths,
            iterations,
            kernel_size: m.kernel_size,
            num_classes: self.classes(),
            norm_groups: m.norm_groups,
            euler_mode: m.euler_mode,
        };
        config.validate().context("model")?;
        Ok(config)
    }

    fn federated(&self) -> Result<&FederatedSection> {
        self.federated.as_ref().context("federated: section missing")
    }

    fn client_iterations(&self) -> Result<Vec<usize>> {
        let f = self.federated()?;
        let family = self.model.family;
        let list = match (&f.client_iterations, &f.client_mix) {
            (Some(_), Some(_)) => {
                bail!("federated: set either `client_iterations` or `client_mix`, not both")
            }
            (Some(list), None) => list.clone(),
            (None, Some(mix)) => parse_client_mix(mix, family)?,
            (None, None) => {
                let k = f.clients.context(
                    "federated.clients: required when neither client_iterations nor client_mix is set",
                )?;
                vec![self.model_config()?.iterations; k]
            }
        };
        ensure!(!list.is_empty(), "federated: the client list is empty");
        ensure!(!list.contains(&0), "federated.client_iterations: counts must be at least 1");
        if let Some(k) = f.clients {
            ensure!(
                k == list.len(),
                "federated.clients: declares {k} clients but the client list has {}",
                list.len()
            );
        }
        Ok(list)
    }

    pub fn fed_config(&self) -> Result<FedConfig> {
        let f = self.federated()?;
        let clients = self.client_iterations()?.len();
        let fed = FedConfig {
            clients,
            fraction: f.fraction,
            rounds: f.rounds,
            seed: f.seed,
            algorithm: f.algorithm,
            feddf: f.feddf.clone(),
            track_train_loss: f.track_train_loss,
        };
        fed.validate().context("federated")?;
        Ok(fed)
    }

    pub fn client_specs(&self) -> Result<Vec<ClientSpec>> {
        let f = self.federated()?;
        Ok(self
            .client_iterations()?
            .into_iter()
            .enumerate()
            .map(|(id, iterations)| ClientSpec {
                id,
                iterations,
                epochs: f.epochs,
                batch_size: f.batch_size,
                lr: f.lr,
            })
            .collect())
    }

    pub fn partition_clients(&self) -> Result<usize> {
        let p = self.partition.as_ref().context("partition: section missing")?;
        match (self.federated.is_some(), p.clients) {
            (true, Some(k)) => {
                let fed = self.client_iterations()?.len();
                ensure!(
                    k == fed,
                    "partition.clients: {k} disagrees with the {fed} federated clients"
                );
                Ok(k)
            }
            (true, None) => Ok(self.client_iterations()?.len()),
            (false, Some(k)) => {
                ensure!(k >= 1, "partition.clients: must be at least 1");
                Ok(k)
            }
            (false, None) => bail!("partition.clients: required without a [federated] section"),
        }
    }

    pub fn output_dir(&self) -> &Path {
        &self.output.dir
    }

    pub fn load_data(&self) -> Result<Data> {
        let d = &self.dataset;
        let (full, test) = match d.source {
            DataSource::Synthetic => {
                synth_train_test(d.classes, d.train_per_class, d.test_per_class, d.side, d.noise, d.seed)
                    .context("synthetic dataset")?
            }
            DataSource::Cifar10 => {
                let dir = d.path.as_ref().expect("validated");
                load_cifar10(dir).with_context(|| format!("loading CIFAR-10 from {}", dir.display()))?
            }
        };
        if d.server_pool == 0 {
            return Ok(Data { train: full, test, server_pool: None });
        }
        ensure!(
            d.server_pool < full.len(),
            "dataset.server_pool: {} is not smaller than the {} training samples",
            d.server_pool,
            full.len()
        );
        let cut = full.len() - d.server_pool;
        let train = full.subset(&(0..cut).collect::<Vec<_>>())?;
        let pool = full.subset(&(cut..full.len()).collect::<Vec<_>>())?;
        Ok(Data { train, test, server_pool: Some(pool) })
    }
}

/// Parses entries like `10x odenet-34`, `5 x dsodenet-c4` or `3× resnet-50`.
/// The family must match the global model's.
pub fn parse_client_mix(mix: &[String], family: Family) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in mix {
        let normalized = entry.replace('×', "x");
        let (count, preset) = normalized
            .split_once('x')
            .with_context(|| format!("federated.client_mix: `{entry}` is not of the form `<n>x <family>-<depth>`"))?;
        let count: usize = count
            .trim()
            .parse()
            .with_context(|| format!("federated.client_mix: bad count in `{entry}`"))?;
        let (name, size) = preset
            .trim()
            .rsplit_once('-')
            .with_context(|| format!("federated.client_mix: `{entry}` lacks `-<depth>`"))?;
        let entry_family: Family = name
            .parse()
            .with_context(|| format!("federated.client_mix: `{entry}`"))?;
        ensure!(
            entry_family == family,
            "federated.client_mix: `{entry}` names {name} but the model family is {family:?}"
        );
        let iterations = match size.strip_prefix('c') {
            Some(c) => c
                .parse()
                .with_context(|| format!("federated.client_mix: bad iteration count in `{entry}`"))?,
            None => {
                let depth: usize = size
                    .parse()
                    .with_context(|| format!("federated.client_mix: bad depth in `{entry}`"))?;
                depth_to_iterations(depth)
                    .with_context(|| format!("federated.client_mix: `{entry}`"))?
                    .iterations
            }
        };
        ensure!(count >= 1, "federated.client_mix: `{entry}` has a zero count");
        out.extend(std::iter::repeat_n(iterations, count));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [dataset]
        [model]
        family = "odenet"
        iterations = 2
        widths = [8, 16, 32]
        norm_groups = 4
        [output]
        dir = "out"
    "#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let m = c.model_config().unwrap();
        assert_eq!(m.num_classes, 4);
        assert_eq!(m.stem_channels, 8);
        assert_eq!(m.euler_mode, EulerMode::IntervalStep);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let again = ExperimentConfig::parse(&c.effective_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("norm_groups = 4", "norm_groups = 4\nwidht = 3");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn depth_and_iterations_are_exclusive() {
        let text = MINIMAL.replace("iterations = 2", "iterations = 2\ndepth = 50");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(format!("{err:#}").contains("not both"));
    }

    #[test]
    fn client_mix_expands_in_order() {
        let mix = ["2x odenet-34".to_string(), "1× odenet-50".into(), "1 x odenet-c3".into()];
        assert_eq!(parse_client_mix(&mix, Family::Odenet).unwrap(), vec![5, 5, 7, 3]);
        assert!(parse_client_mix(&mix, Family::Dsodenet).is_err());
        assert!(parse_client_mix(&["odenet-34".to_string()], Family::Odenet).is_err());
    }

    #[test]
    fn federated_requires_partition() {
        let text = format!("{MINIMAL}\n[federated]\nrounds = 1\nclient_iterations = [2, 4]\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(format!("{err:#}").contains("partition"));
        let text = format!("{text}\n[partition]\nalpha = 1.0\n");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.partition_clients().unwrap(), 2);
        assert_eq!(c.client_specs().unwrap()[1].iterations, 4);
    }

    #[test]
    fn client_count_must_agree() {
        let text = format!(
            "{MINIMAL}\n[federated]\nrounds = 1\nclients = 3\nclient_iterations = [2, 4]\n[partition]\nalpha = 1.0\n"
        );
        assert!(ExperimentConfig::parse(&text).is_err());
    }
}
