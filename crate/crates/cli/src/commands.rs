//! Subcommand implementations. Each `run_*` writes its CSV and checkpoint
//! files under the configured output directory and also returns the rows.

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use fedode_core::comms::{
    communication_size, connect_client, load_checkpoint, save_checkpoint, serve, RoundTraffic,
    ServerOptions,
};
use fedode_core::data::{batches, class_histogram, chi_square, dirichlet_partition, mean_chi_square, Dataset, PartitionSpec};
use fedode_core::federated::{evaluate, run_federation, EvalResult, Federation, InProcess, RoundMetrics};
use fedode_core::models::{depth_to_iterations, Family, Model, ModelConfig};

use crate::config::{Data, ExperimentConfig, RunMode};
use crate::csv::{self, CsvWriter};

pub const COUNT_HEADER: &str = "family,depth,C,params,bytes,mib";
pub const TRAIN_HEADER: &str = "trained_c,tested_c,loss,top1,top5";
pub const EPOCH_HEADER: &str = "epoch,mean_batch_loss,train_loss,train_top1";
pub const ROUNDS_HEADER: &str = "round,selected,mean_client_loss,global_loss,top1,top5,bytes,train_loss";
pub const TRAFFIC_HEADER: &str = "round,downlink_bytes,uplink_bytes,metrics_bytes";
pub const EVAL_HEADER: &str = "tested_c,loss,top1,top5";

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const TRAIN_CSV: &str = "train.csv";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const MODEL_CHECKPOINT: &str = "model.fode";
pub const ROUNDS_CSV: &str = "rounds.csv";
pub const TRAFFIC_CSV: &str = "traffic.csv";
pub const GLOBAL_CHECKPOINT: &str = "global.fode";
pub const PARTITION_CSV: &str = "partition.csv";

fn prepare_output(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.output_dir().to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating output dir {}", dir.display()))?;
    let path = dir.join(EFFECTIVE_CONFIG);
    fs::write(&path, config.effective_toml()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(dir)
}

fn eval_fields(r: &EvalResult) -> [String; 3] {
    [format!("{:.6}", r.loss), format!("{:.6}", r.top1), format!("{:.6}", r.top5)]
}

// ---------------------------------------------------------------- count

#[derive(Clone, Debug, PartialEq)]
pub struct CountRow {
    pub family: Family,
    pub depth: usize,
    pub iterations: usize,
    pub params: u64,
    pub bytes: u64,
    pub mib: f64,
}

impl CountRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.family.to_string(),
            self.depth.to_string(),
            self.iterations.to_string(),
            self.params.to_string(),
            self.bytes.to_string(),
            format!("{:.4}", self.mib),
        ]
    }
}

/// Depth column: the requested depth, or `6C + 6` when counts were given as `C`.
#[derive(Clone, Copy, Debug)]
pub enum Size {
    Depth(usize),
    Iterations(usize),
}

pub fn count_rows(base: &ModelConfig, families: &[Family], sizes: &[Size]) -> Result<Vec<CountRow>> {
    let mut rows = Vec::new();
    for &family in families {
        for &size in sizes {
            let (depth, iterations) = match size {
                Size::Depth(d) => (d, depth_to_iterations(d)?.iterations),
                Size::Iterations(c) => (6 * c + 6, c),
            };
            let config = ModelConfig { family, iterations, ..base.clone() };
            config.validate()?;
            let size = communication_size(&config)?;
            rows.push(CountRow {
                family,
                depth,
                iterations,
                params: size.params,
                bytes: size.payload_bytes,
                mib: size.mib,
            });
        }
    }
    Ok(rows)
}

/// `(family, depth, percent saved)` against the resnet row of equal depth.
pub fn reductions(rows: &[CountRow]) -> Vec<(Family, usize, f64)> {
    let mut out = Vec::new();
    for row in rows.iter().filter(|r| r.family != Family::Resnet) {
        if let Some(base) = rows.iter().find(|r| r.family == Family::Resnet && r.depth == row.depth) {
            out.push((row.family, row.depth, 100.0 * (1.0 - row.bytes as f64 / base.bytes as f64)));
        }
    }
    out
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRow {
    pub trained: usize,
    pub tested: usize,
    pub result: EvalResult,
}

impl TrainRow {
    pub fn fields(&self) -> Vec<String> {
        let [loss, top1, top5] = eval_fields(&self.result);
        vec![self.trained.to_string(), self.tested.to_string(), loss, top1, top5]
    }
}

pub struct TrainOutcome {
    pub rows: Vec<TrainRow>,
    /// Accuracy of the final model on the training split at the trained `C`.
    pub train_top1: f64,
    pub checkpoint: PathBuf,
}

/// Evaluation at each requested iteration count. Resnet is only evaluated as built.
fn eval_grid(
    params: &fedode_core::models::ParameterSet,
    config: &ModelConfig,
    iterations: &[usize],
    dataset: &Dataset,
) -> Result<Vec<(usize, EvalResult)>> {
    let mut out = Vec::new();
    if config.family == Family::Resnet {
        ensure!(
            iterations.iter().all(|&c| c == config.iterations),
            "resnet weights cannot be evaluated at another iteration count"
        );
        out.push((config.iterations, evaluate(params, config, None, dataset)?));
        return Ok(out);
    }
    for &c in iterations {
        out.push((c, evaluate(params, config, Some(c), dataset)?));
    }
    Ok(out)
}

pub fn run_train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let train_cfg = config.train.clone().context("train: section missing")?;
    let model_cfg = config.model_config()?;
    let dir = prepare_output(config)?;
    let Data { train, test, .. } = config.load_data()?;

    let mut model = Model::build(&model_cfg, train_cfg.seed)?;
    let indices: Vec<usize> = (0..train.len()).collect();
    let mut epochs = CsvWriter::create(&dir.join(EPOCHS_CSV), EPOCH_HEADER)?;
    let mut train_top1 = 0.0;
    for epoch in 0..train_cfg.epochs {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for (x, y) in batches(&train, &indices, train_cfg.batch_size, train_cfg.seed, epoch)? {
            sum += model.train_batch(&x, &y, train_cfg.lr)? as f64;
            n += 1;
        }
        let fit = evaluate(model.params(), &model_cfg, None, &train)?;
        train_top1 = fit.top1;
        log::info!("epoch {}: batch loss {:.4} train top1 {:.4}", epoch + 1, sum / n as f64, fit.top1);
        epochs.row(&[
            (epoch + 1).to_string(),
            format!("{:.6}", sum / n.max(1) as f64),
            format!("{:.6}", fit.loss),
            format!("{:.6}", fit.top1),
        ])?;
    }
    if train_cfg.epochs == 0 {
        train_top1 = evaluate(model.params(), &model_cfg, None, &train)?.top1;
    }

    let checkpoint = dir.join(MODEL_CHECKPOINT);
    save_checkpoint(&checkpoint, model.params(), &model_cfg)?;

    let tested = if train_cfg.test_iterations.is_empty() {
        vec![model_cfg.iterations]
    } else {
        train_cfg.test_iterations.clone()
    };
    let mut out = CsvWriter::create(&dir.join(TRAIN_CSV), TRAIN_HEADER)?;
    let mut rows = Vec::new();
    for (c, result) in eval_grid(model.params(), &model_cfg, &tested, &test)? {
        let [loss, top1, top5] = eval_fields(&result);
        out.row(&[model_cfg.iterations.to_string(), c.to_string(), loss, top1, top5])?;
        rows.push(TrainRow { trained: model_cfg.iterations, tested: c, result });
    }
    Ok(TrainOutcome { rows, train_top1, checkpoint })
}

// ---------------------------------------------------------------- eval

pub fn run_eval(config: &ExperimentConfig, checkpoint: &Path, iterations: Option<&[usize]>) -> Result<Vec<(usize, EvalResult)>> {
    let model_cfg = config.model_config()?;
    if model_cfg.family == Family::Resnet && iterations.is_some() {
        bail!("--iters: resnet checkpoints hold stacked blocks and cannot be re-iterated");
    }
    let params = load_checkpoint(checkpoint, &model_cfg)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let data = config.load_data()?;
    let requested = iterations.map(<[usize]>::to_vec).unwrap_or_else(|| vec![model_cfg.iterations]);
    eval_grid(&params, &model_cfg, &requested, &data.test)
}

pub fn eval_csv(rows: &[(usize, EvalResult)]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(c, r)| {
            let [loss, top1, top5] = eval_fields(r);
            vec![c.to_string(), loss, top1, top5]
        })
        .collect();
    csv::render(EVAL_HEADER, &rows)
}

// ---------------------------------------------------------------- partition

pub struct PartitionOutcome {
    pub spec: PartitionSpec,
    pub histogram: Vec<Vec<usize>>,
    pub mean_chi_square: f64,
    pub csv: String,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PartitionOverrides {
    pub alpha: Option<f64>,
    pub clients: Option<usize>,
    pub seed: Option<u64>,
}

fn partition_of(config: &ExperimentConfig, train: &Dataset, o: PartitionOverrides) -> Result<PartitionSpec> {
    let p = config.partition.as_ref().context("partition: section missing")?;
    let clients = match o.clients {
        Some(k) => k,
        None => config.partition_clients()?,
    };
    dirichlet_partition(train.labels(), clients, o.alpha.unwrap_or(p.alpha), o.seed.unwrap_or(p.seed))
        .context("partition")
}

pub fn partition_csv(histogram: &[Vec<usize>], classes: usize) -> String {
    let mut header = String::from("client,n");
    for c in 0..classes {
        header.push_str(&format!(",class_{c}"));
    }
    header.push_str(",chi_square");
    let rows: Vec<Vec<String>> = histogram
        .iter()
        .enumerate()
        .map(|(k, counts)| {
            let mut row = vec![k.to_string(), counts.iter().sum::<usize>().to_string()];
            row.extend(counts.iter().map(usize::to_string));
            row.push(format!("{:.6}", chi_square(counts)));
            row
        })
        .collect();
    csv::render(&header, &rows)
}

pub fn run_partition(config: &ExperimentConfig, overrides: PartitionOverrides) -> Result<PartitionOutcome> {
    let dir = prepare_output(config)?;
    let data = config.load_data()?;
    let spec = partition_of(config, &data.train, overrides)?;
    let classes = data.train.class_count();
    let histogram = class_histogram(data.train.labels(), &spec, classes);
    let csv = partition_csv(&histogram, classes);
    let path = dir.join(PARTITION_CSV);
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(PartitionOutcome {
        mean_chi_square: mean_chi_square(&histogram),
        spec,
        histogram,
        csv,
    })
}

// ---------------------------------------------------------------- federate

pub fn round_row(m: &RoundMetrics) -> Vec<String> {
    let selected: Vec<String> = m.selected.iter().map(usize::to_string).collect();
    vec![
        m.round.to_string(),
        selected.join(";"),
        format!("{:.6}", m.mean_client_loss()),
        format!("{:.6}", m.global_loss),
        format!("{:.6}", m.top1),
        format!("{:.6}", m.top5),
        m.bytes.to_string(),
        m.train_loss.map(|l| format!("{l:.6}")).unwrap_or_default(),
    ]
}

pub struct FederateOutcome {
    pub metrics: Vec<RoundMetrics>,
    /// Per-round transport byte counts; socket mode only.
    pub traffic: Option<Vec<RoundTraffic>>,
    pub checkpoint: PathBuf,
}

fn write_traffic(dir: &Path, traffic: &[RoundTraffic]) -> Result<()> {
    let mut w = CsvWriter::create(&dir.join(TRAFFIC_CSV), TRAFFIC_HEADER)?;
    for t in traffic {
        w.row(&[
            t.round.to_string(),
            t.downlink_bytes.to_string(),
            t.uplink_bytes.to_string(),
            t.metrics_bytes.to_string(),
        ])?;
    }
    Ok(())
}

pub fn run_federate(config: &ExperimentConfig) -> Result<FederateOutcome> {
    let section = config.federated.as_ref().context("federated: section missing")?;
    match section.mode {
        RunMode::InProcess => federate_in_process(config),
        RunMode::Socket => federate_socket(config, true),
    }
}

fn federate_in_process(config: &ExperimentConfig) -> Result<FederateOutcome> {
    let fed = config.fed_config()?;
    let specs = config.client_specs()?;
    let model_cfg = config.model_config()?;
    let dir = prepare_output(config)?;
    let data = config.load_data()?;
    let partition = partition_of(config, &data.train, PartitionOverrides::default())?;

    let federation = Federation {
        fed: &fed,
        config: &model_cfg,
        client_iterations: specs.iter().map(|c| c.iterations).collect(),
        client_counts: partition.client_counts.clone(),
        eval: &data.test,
        train: Some(&data.train),
        server_pool: data.server_pool.as_ref(),
    };
    let initial = Model::build(&model_cfg, fed.seed)?.into_params();
    let mut executor = InProcess {
        config: &model_cfg,
        clients: &specs,
        partition: &partition,
        dataset: &data.train,
        seed: fed.seed,
    };
    let mut csv = CsvWriter::create(&dir.join(ROUNDS_CSV), ROUNDS_HEADER)?;
    let (metrics, global) = run_federation(&federation, initial, &mut executor, |m| {
        csv.row(&round_row(m))
    })?;
    let checkpoint = dir.join(GLOBAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &global, &model_cfg)?;
    Ok(FederateOutcome { metrics, traffic: None, checkpoint })
}

/// Server side of a socket federation. With `spawn_clients`, every client
/// also runs here as a thread connected over loopback.
pub fn federate_socket(config: &ExperimentConfig, spawn_clients: bool) -> Result<FederateOutcome> {
    let section = config.federated.as_ref().context("federated: section missing")?;
    let fed = config.fed_config()?;
    let specs = config.client_specs()?;
    let model_cfg = config.model_config()?;
    let dir = prepare_output(config)?;
    let data = config.load_data()?;
    let partition = partition_of(config, &data.train, PartitionOverrides::default())?;
    let timeout = Duration::from_secs(section.timeout_secs);

    let listener = TcpListener::bind(&section.address)
        .with_context(|| format!("binding federated.address {}", section.address))?;
    let addr = listener.local_addr()?;
    log::info!("serving {} clients on {addr}", fed.clients);
    let opts = ServerOptions { timeout };

    let mut csv = CsvWriter::create(&dir.join(ROUNDS_CSV), ROUNDS_HEADER)?;
    let outcome = thread::scope(|s| -> Result<_> {
        let handles: Vec<_> = if spawn_clients {
            specs
                .iter()
                .map(|spec| {
                    let shard = &partition.assignments[spec.id];
                    let (model_cfg, train) = (&model_cfg, &data.train);
                    s.spawn(move || connect_client(addr, model_cfg, spec, shard, train, timeout))
                })
                .collect()
        } else {
            Vec::new()
        };
        let served = serve(
            &listener,
            &fed,
            &model_cfg,
            &data.test,
            Some(&data.train),
            data.server_pool.as_ref(),
            &opts,
            |m| csv.row(&round_row(m)),
        );
        for (id, h) in handles.into_iter().enumerate() {
            let session = h.join().map_err(|_| anyhow::anyhow!("client {id} panicked"))?;
            if served.is_ok() {
                session.with_context(|| format!("client {id}"))?;
            }
        }
        Ok(served?)
    })?;
    write_traffic(&dir, &outcome.traffic)?;
    let checkpoint = dir.join(GLOBAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &outcome.global, &model_cfg)?;
    Ok(FederateOutcome {
        metrics: outcome.metrics,
        traffic: Some(outcome.traffic),
        checkpoint,
    })
}

/// One client process of a socket federation.
pub fn run_client(config: &ExperimentConfig, id: usize, address: Option<&str>) -> Result<Vec<usize>> {
    let section = config.federated.as_ref().context("federated: section missing")?;
    let specs = config.client_specs()?;
    let spec = specs
        .get(id)
        .with_context(|| format!("--id: {id} is not below the {} configured clients", specs.len()))?;
    let model_cfg = config.model_config()?;
    let data = config.load_data()?;
    let partition = partition_of(config, &data.train, PartitionOverrides::default())?;
    let addr = address.unwrap_or(&section.address);
    let session = connect_client(
        addr,
        &model_cfg,
        spec,
        &partition.assignments[id],
        &data.train,
        Duration::from_secs(section.timeout_secs),
    )
    .with_context(|| format!("client {id} talking to {addr}"))?;
    Ok(session.rounds_served)
}

/// Reads back a CSV file's bytes, for callers that compare runs.
pub fn read_output(config: &ExperimentConfig, name: &str) -> Result<Vec<u8>> {
    let path = config.output_dir().join(name);
    fs::read(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
