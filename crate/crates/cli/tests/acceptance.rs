//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p fedode-cli --test acceptance`; pass
//! criterion numbers (e.g. `-- 1 4 7`) to run a subset.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../core/tests/suites/gradients.rs"]
mod gradients;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, ensure, Context, Result};
use common::rand_tensor;
use fedode_cli::commands::{
    self, PartitionOverrides, Size, COUNT_HEADER, PARTITION_CSV, ROUNDS_CSV, TRAFFIC_CSV, TRAIN_CSV,
};
use fedode_cli::config::RunMode;
use fedode_cli::ExperimentConfig;
use fedode_core::comms::{communication_size_of, reduction_ratio, FRAME_OVERHEAD};
use fedode_core::data::dirichlet_partition;
use fedode_core::federated::{aggregate_weighted, Algorithm};
use fedode_core::models::{
    build_model, calibrate_widths, count_parameters, euler_integrate, ode_block_forward,
    res_block_forward, BlockVars, CalibrationGrid, ConvVars, EulerMode, Family, ModelConfig,
    ParameterSet, PostActivation, TABLE7_DSODENET_PARAMS, TABLE7_ODENET_PARAMS,
};
use fedode_core::tensor::{Tape, Tensor};
use fedode_core::Error;

type Check = fn(&Path) -> Result<String>;

const CRITERIA: [(&str, Check); 13] = [
    ("parameter-count invariance", c01_count_invariance),
    ("width calibration within 2%", c02_calibration),
    ("communication-reduction ratios", c03_reduction),
    ("MiB unit consistency", c04_units),
    ("gradient correctness", c05_gradients),
    ("aggregation oracle", c06_aggregation),
    ("Euler semantics", c07_euler),
    ("weight compatibility at desk scale", c08_weight_compatibility),
    ("heterogeneous federation", c09_heterogeneous),
    ("FedDF budget trend", c10_feddf),
    ("partition statistics", c11_partition),
    ("transport transparency", c12_transport),
    ("determinism of preset reruns", c13_determinism),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let scratch = tempfile::tempdir().expect("scratch dir");
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let dir = scratch.path().join(format!("c{n:02}"));
        std::fs::create_dir_all(&dir).expect("criterion dir");
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(|| check(&dir))) {
            Ok(r) => r,
            Err(payload) => Err(anyhow!("panicked: {}", panic_message(&payload))),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.1}s): {detail}"),
            Err(e) => {
                println!("FAIL {n:>2} {name} ({secs:.1}s): {e:#}");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn panic_message(payload: &Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "non-string panic".into())
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

/// Loads a shipped preset with its output redirected under `dir`.
fn load_preset(name: &str, dir: &Path, tag: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&preset(name))?;
    config.output.dir = dir.join(tag);
    Ok(config)
}

fn read(config: &ExperimentConfig, file: &str) -> Result<Vec<u8>> {
    commands::read_output(config, file)
}

// ---------------------------------------------------------------- 1

fn c01_count_invariance(_: &Path) -> Result<String> {
    let iterations = [1, 2, 5, 7, 16];
    let mut report = Vec::new();
    for family in [Family::Odenet, Family::Dsodenet] {
        let mut totals = Vec::new();
        for c in iterations {
            let config = ModelConfig::new(family, c);
            let total = count_parameters(&config)?.total;
            let built = build_model(&config, 0)?.params().total_elements();
            ensure!(total == built, "{family} C={c}: counted {total}, built model holds {built}");
            totals.push(total);
        }
        ensure!(
            totals.windows(2).all(|w| w[0] == w[1]),
            "{family} totals vary with C: {totals:?}"
        );
        report.push(format!("{family} {}", totals[0]));
    }
    let resnet: Vec<usize> = iterations
        .iter()
        .map(|&c| count_parameters(&ModelConfig::new(Family::Resnet, c)).map(|p| p.total))
        .collect::<fedode_core::Result<_>>()?;
    ensure!(
        resnet.windows(2).all(|w| w[0] < w[1]),
        "resnet totals not strictly increasing: {resnet:?}"
    );
    for (c, &want) in [1, 2].iter().zip(&resnet) {
        let built = build_model(&ModelConfig::new(Family::Resnet, *c), 0)?.params().total_elements();
        ensure!(built == want, "resnet C={c}: counted {want}, built {built}");
    }
    report.push(format!("resnet {resnet:?}"));
    Ok(report.join("; "))
}

// ---------------------------------------------------------------- 2

fn c02_calibration(_: &Path) -> Result<String> {
    let grid = CalibrationGrid::default();
    let best = calibrate_widths(&ModelConfig::default(), &grid, TABLE7_ODENET_PARAMS, TABLE7_DSODENET_PARAMS)?
        .context("empty calibration grid")?;
    let detail = format!(
        "best over widths {}..={} step 8, kernels {:?}: stages {:?} k={} -> odenet {} ({:.2}%), dsodenet {} ({:.2}%)",
        grid.widths[0],
        grid.widths[grid.widths.len() - 1],
        grid.kernel_sizes,
        best.config.stage_channels,
        best.config.kernel_size,
        best.odenet_params,
        100.0 * best.odenet_error,
        best.dsodenet_params,
        100.0 * best.dsodenet_error
    );
    ensure!(best.max_error() <= 0.02, "no config within 2% of both targets; {detail}");
    let shipped = ExperimentConfig::load(&preset("table-7/config.toml"))?.model_config()?;
    ensure!(
        shipped.stage_channels == best.config.stage_channels && shipped.kernel_size == best.config.kernel_size,
        "calibrated widths are not the shipped table-7 preset; {detail}"
    );
    if best.max_error() == 0.0 {
        ensure!(best.odenet_params == TABLE7_ODENET_PARAMS && best.dsodenet_params == TABLE7_DSODENET_PARAMS);
    }
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn c03_reduction(_: &Path) -> Result<String> {
    let base = ExperimentConfig::load(&preset("table-7/config.toml"))?.model_config()?;
    let at = |family| ModelConfig { family, ..base.clone() };
    ensure!(base.iterations == 7, "table-7 preset should sit at depth 50 (C = 7), has C = {}", base.iterations);
    let resnet = at(Family::Resnet);
    let ode = reduction_ratio(&at(Family::Odenet), &resnet)?;
    let ds = reduction_ratio(&at(Family::Dsodenet), &resnet)?;
    let detail = format!("odenet-50 saves {ode:.2}% (want 89.4..=95.4), dsodenet-50 saves {ds:.2}% (want 92.1..=98.1)");
    ensure!((89.4..=95.4).contains(&ode) && (92.1..=98.1).contains(&ds), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 4

fn c04_units(_: &Path) -> Result<String> {
    let ode = communication_size_of(TABLE7_ODENET_PARAMS as u64);
    let ds = communication_size_of(TABLE7_DSODENET_PARAMS as u64);
    let oracle = |p: u64| (p * 4) as f64 / 1_048_576.0;
    ensure!((ode.mib - oracle(1_937_034)).abs() < 1e-12 && (ds.mib - oracle(1_249_381)).abs() < 1e-12);
    let (a, b) = (format!("{:.2}", ode.mib), format!("{:.2}", ds.mib));
    ensure!(a == "7.39", "1,937,034 parameters -> {a} MiB");
    ensure!(b == "4.76" || b == "4.77", "1,249,381 parameters -> {b} MiB");
    Ok(format!("{a} MiB and {b} MiB ({:.4} / {:.4})", ode.mib, ds.mib))
}

// ---------------------------------------------------------------- 5

fn c05_gradients(_: &Path) -> Result<String> {
    let mut failures = Vec::new();
    for (name, check) in gradients::ALL {
        if let Err(p) = panic::catch_unwind(check) {
            failures.push(format!("{name}: {}", panic_message(&p)));
        }
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(format!("{} operators x 10 cases within norm-relative 1e-2", gradients::ALL.len()))
}

// ---------------------------------------------------------------- 6

fn random_params(seed: u64) -> Result<ParameterSet> {
    let shapes: [&[usize]; 4] = [&[3, 4], &[5], &[2, 2, 3, 1], &[7, 3]];
    let mut p = ParameterSet::new();
    for (i, s) in shapes.iter().enumerate() {
        p.push(format!("w{i}"), rand_tensor(s, 1000 + seed * 10 + i as u64, 2.0))?;
    }
    Ok(p)
}

fn c06_aggregation(_: &Path) -> Result<String> {
    let mut elements = 0;
    for case in 0..20u64 {
        let locals: Vec<ParameterSet> = (0..3).map(|k| random_params(case * 3 + k)).collect::<Result<_>>()?;
        let counts = [1 + (case as usize * 5) % 11, 2 + case as usize, 7];
        let got = aggregate_weighted(&locals, &counts)?;
        let n = counts.iter().sum::<usize>() as f64;
        for i in 0..got.len() {
            let out = got.tensor(i).data();
            for (e, &v) in out.iter().enumerate() {
                let vals: Vec<f32> = locals.iter().map(|l| l.tensor(i).data()[e]).collect();
                let mut acc = 0.0f64;
                for (k, &x) in vals.iter().enumerate() {
                    acc += counts[k] as f64 / n * x as f64;
                }
                ensure!(v == acc as f32, "case {case} entry {i} element {e}: {v} vs oracle {}", acc as f32);
                let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                ensure!(lo <= v && v <= hi, "case {case}: {v} outside [{lo}, {hi}]");
                elements += 1;
            }
        }
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let l: Vec<ParameterSet> = perm.iter().map(|&k| locals[k].clone()).collect();
            let c: Vec<usize> = perm.iter().map(|&k| counts[k]).collect();
            ensure!(aggregate_weighted(&l, &c)?.bitwise_eq(&got), "case {case}: permutation {perm:?} differs");
        }
    }
    Ok(format!("20 cases, {elements} elements exact; all 6 orderings bitwise equal"))
}

// ---------------------------------------------------------------- 7

fn linear_stub(c: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1], 1.0));
    let y = euler_integrate(&mut tape, x, c, EulerMode::IntervalStep, PostActivation::Relu, |_, s| Ok(s))?;
    Ok(tape.value(y).data()[0] as f64)
}

fn c07_euler(_: &Path) -> Result<String> {
    let e = std::f64::consts::E;
    let mut errors = Vec::new();
    for c in [4, 8, 16, 32] {
        let oracle = (1.0 + 1.0 / c as f64).powi(c as i32);
        let got = linear_stub(c)?;
        ensure!((got - oracle).abs() < 1e-5, "C={c}: {got} vs (1+1/C)^C = {oracle}");
        errors.push((e - got).abs());
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    ensure!(ratios.iter().all(|r| (r - 2.0).abs() <= 0.4), "error ratios {ratios:?}");

    for seed in 0..5u64 {
        let c = 4;
        let mut tape = Tape::new();
        let mut p = |t: Tensor| tape.param(t);
        let block = BlockVars {
            conv1: ConvVars::Standard(p(rand_tensor(&[c, c, 3, 3], seed + 10, 0.3))),
            norm1: (p(Tensor::full(&[c], 1.0)), p(Tensor::zeros(&[c]))),
            conv2: ConvVars::Standard(p(rand_tensor(&[c, c, 3, 3], seed + 20, 0.3))),
            norm2: (p(rand_tensor(&[c], seed + 30, 1.0)), p(rand_tensor(&[c], seed + 40, 0.5))),
            stride: 1,
            padding: 1,
            groups: 2,
        };
        let x = tape.constant(rand_tensor(&[2, c, 5, 5], seed, 1.0));
        let r = res_block_forward(&mut tape, x, &block)?;
        let o = ode_block_forward(&mut tape, x, &block, 1, EulerMode::UnitStep)?;
        ensure!(tape.value(r).bitwise_eq(tape.value(o)), "seed {seed}: unit_step C=1 differs from res_block");
    }
    Ok(format!(
        "errors {:?}, halving ratios {:?}; unit_step C=1 bitwise equal on 5 blocks",
        errors.iter().map(|e| format!("{e:.5}")).collect::<Vec<_>>(),
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------- 8

fn c08_weight_compatibility(dir: &Path) -> Result<String> {
    let mut report = Vec::new();
    for family in ["odenet", "dsodenet"] {
        let config = load_preset(&format!("tables-1-2/{family}.toml"), dir, family)?;
        let outcome = commands::run_train(&config)?;
        ensure!(
            outcome.train_top1 >= 0.90,
            "{family}: train accuracy {:.4} below 0.90",
            outcome.train_top1
        );
        let tested: Vec<usize> = outcome.rows.iter().map(|r| r.tested).collect();
        ensure!(tested == [2, 4, 8], "{family}: tested-as {tested:?}");
        let top1: Vec<f64> = outcome.rows.iter().map(|r| r.result.top1).collect();
        let spread = top1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - top1.iter().copied().fold(f64::INFINITY, f64::min);
        ensure!(spread < 0.05, "{family}: test top1 {top1:?} spread {:.2}pp", 100.0 * spread);

        let trained = outcome.rows[0].trained;
        let eval = commands::run_eval(&config, &outcome.checkpoint, Some(&[trained]))?;
        let row = outcome.rows.iter().find(|r| r.tested == trained).expect("trained-as row");
        ensure!(eval[0].1 == row.result, "{family}: eval on the checkpoint disagrees with the train grid");
        report.push(format!(
            "{family} train {:.3}, test top1 at C=2/4/8 {:.3}/{:.3}/{:.3} (spread {:.2}pp)",
            outcome.train_top1,
            top1[0],
            top1[1],
            top1[2],
            100.0 * spread
        ));
    }
    Ok(report.join("; "))
}

// ---------------------------------------------------------------- 9

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        sxy += (i as f64 - mx) * (y - my);
        sxx += (i as f64 - mx).powi(2);
    }
    sxy / sxx
}

fn c09_heterogeneous(dir: &Path) -> Result<String> {
    let config = load_preset("figs-7-8/config.toml", dir, "odenet")?;
    let fed = config.federated.as_ref().context("preset lacks [federated]")?;
    ensure!(fed.rounds == 20 && fed.epochs == 5, "preset must run T = 20, E = 5");
    let iterations: Vec<usize> = config.client_specs()?.iter().map(|c| c.iterations).collect();
    ensure!(iterations == [2, 4], "preset clients run C = {iterations:?}");
    let outcome = commands::run_federate(&config)?;
    let losses: Vec<f64> = outcome
        .metrics
        .iter()
        .map(|m| m.train_loss.context("train loss not tracked"))
        .collect::<Result<_>>()?;
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    let s = slope(&losses);
    ensure!(last < 0.4 * first, "round-20 loss {last:.4} is not below 40% of round-1 loss {first:.4}");
    ensure!(s < 0.0, "loss slope {s:.5} is not negative");

    let mut resnet = load_preset("figs-7-8/config.toml", dir, "resnet")?;
    resnet.model.family = Family::Resnet;
    let err = match commands::run_federate(&resnet) {
        Ok(_) => return Err(anyhow!("resnet clients with C = 2 and C = 4 federated without error")),
        Err(e) => e,
    };
    let core = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .context("resnet run failed without a library error")?;
    ensure!(
        matches!(core.root(), Error::Incongruent { .. }),
        "resnet run failed with the wrong error: {err:#}"
    );
    Ok(format!(
        "train loss {first:.4} -> {last:.4} ({:.1}%), slope {s:.5}; resnet rejected: {core}",
        100.0 * last / first
    ))
}

// ---------------------------------------------------------------- 10

fn c10_feddf(dir: &Path) -> Result<String> {
    let seeds = 0..5u64;
    let mut means = Vec::new();
    for budget in [10usize, 1000] {
        let mut top1 = Vec::new();
        for seed in seeds.clone() {
            let mut config = load_preset("table-6/config.toml", dir, &format!("b{budget}-s{seed}"))?;
            let fed = config.federated.as_mut().context("preset lacks [federated]")?;
            ensure!(fed.algorithm == Algorithm::Feddf && fed.clients.unwrap_or(6) == 6);
            fed.feddf.budget = Some(budget);
            fed.seed = seed;
            config.partition.as_mut().context("preset lacks [partition]")?.seed = seed;
            let outcome = commands::run_federate(&config)?;
            top1.push(outcome.metrics.last().context("no rounds")?.top1);
        }
        means.push((budget, top1.iter().sum::<f64>() / top1.len() as f64, top1));
    }
    let mut zero = load_preset("table-6/config.toml", dir, "steps0")?;
    zero.federated.as_mut().expect("checked").feddf.steps = 0;
    let mut avg = load_preset("table-6/config.toml", dir, "fedavg")?;
    avg.federated.as_mut().expect("checked").algorithm = Algorithm::Fedavg;
    let a = commands::run_federate(&zero)?;
    let b = commands::run_federate(&avg)?;
    ensure!(a.metrics == b.metrics, "feddf with steps = 0 differs from fedavg");
    ensure!(read(&zero, ROUNDS_CSV)? == read(&avg, ROUNDS_CSV)?, "rounds.csv differs");
    ensure!(
        std::fs::read(&a.checkpoint)? == std::fs::read(&b.checkpoint)?,
        "final checkpoints differ"
    );
    let (small, large) = (&means[0], &means[1]);
    ensure!(
        large.1 >= small.1,
        "steps=0 equals fedavg bitwise, but mean top1 at budget 1000 {:.4} < budget 10 {:.4} ({:?} vs {:?})",
        large.1,
        small.1,
        large.2,
        small.2
    );
    Ok(format!(
        "mean top1 over 5 seeds: budget 10 {:.4}, budget 1000 {:.4}; steps=0 equals fedavg bitwise",
        small.1, large.1
    ))
}

// ---------------------------------------------------------------- 11

fn mean_chi(labels: &[usize], assignments: &[Vec<usize>], classes: usize) -> f64 {
    let mut total = 0.0;
    for shard in assignments {
        let mut counts = vec![0usize; classes];
        for &i in shard {
            counts[labels[i]] += 1;
        }
        let e = shard.len() as f64 / classes as f64;
        total += counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum::<f64>();
    }
    total / assignments.len() as f64
}

fn c11_partition(_: &Path) -> Result<String> {
    let classes = 10;
    let labels: Vec<usize> = (0..5000).map(|i| (i * 7) % classes).collect();
    let clients = 30;
    let mut means = Vec::new();
    for alpha in [100.0, 10.0, 1.0] {
        let mut sum = 0.0;
        for seed in 0..50u64 {
            let spec = dirichlet_partition(&labels, clients, alpha, seed)?;
            let mut seen = vec![false; labels.len()];
            for shard in &spec.assignments {
                ensure!(!shard.is_empty(), "alpha {alpha} seed {seed}: empty client");
                for &i in shard {
                    ensure!(!seen[i], "alpha {alpha} seed {seed}: index {i} assigned twice");
                    seen[i] = true;
                }
            }
            ensure!(seen.iter().all(|&s| s), "alpha {alpha} seed {seed}: not a cover");
            let sizes: Vec<usize> = spec.assignments.iter().map(Vec::len).collect();
            ensure!(sizes == spec.client_counts, "alpha {alpha} seed {seed}: counts disagree with shards");
            ensure!(sizes.iter().sum::<usize>() == labels.len());
            sum += mean_chi(&labels, &spec.assignments, classes);
        }
        means.push(sum / 50.0);
    }
    ensure!(
        means[0] < means[1] && means[1] < means[2],
        "mean chi-square not ordered: alpha 100 {:.3}, 10 {:.3}, 1 {:.3}",
        means[0],
        means[1],
        means[2]
    );
    Ok(format!(
        "mean chi-square alpha 100 {:.3} < alpha 10 {:.3} < alpha 1 {:.3}; invariants hold on 150 draws",
        means[0], means[1], means[2]
    ))
}

// ---------------------------------------------------------------- 12

/// Checkpoint bytes from the published layout, independent of the serializer.
fn checkpoint_len_oracle(params: &ParameterSet) -> u64 {
    let mut n = 4 + 4 + 32 + 4;
    for (name, t) in params.iter() {
        n += 2 + name.len() + 1 + 4 * t.shape().len() + 8 + 4 * t.numel();
    }
    n as u64
}

const TRANSPORT_CONFIG: &str = r#"
[dataset]
classes = 4
train_per_class = 12
test_per_class = 8
side = 8
noise = 0.3
seed = 5

[model]
family = "odenet"
iterations = 2
widths = [4, 8, 8]
norm_groups = 2

[federated]
rounds = 3
seed = 9
epochs = 1
batch_size = 8
lr = 0.05
address = "127.0.0.1:0"
timeout_secs = 60
client_iterations = [1, 3]

[partition]
alpha = 1.0
seed = 2

[output]
dir = "unused"
"#;

fn c12_transport(dir: &Path) -> Result<String> {
    let mut local = ExperimentConfig::parse(TRANSPORT_CONFIG)?;
    local.output.dir = dir.join("in-process");
    let mut socket = local.clone();
    socket.output.dir = dir.join("socket");
    socket.federated.as_mut().expect("present").mode = RunMode::Socket;

    let a = commands::run_federate(&local)?;
    let b = commands::run_federate(&socket)?;
    ensure!(a.metrics == b.metrics, "socket RoundMetrics differ from in-process");
    ensure!(read(&local, ROUNDS_CSV)? == read(&socket, ROUNDS_CSV)?, "rounds.csv differs");
    ensure!(std::fs::read(&a.checkpoint)? == std::fs::read(&b.checkpoint)?, "final global models differ");

    let params = build_model(&local.model_config()?, 0)?.into_params();
    let message = checkpoint_len_oracle(&params);
    let framing = FRAME_OVERHEAD as u64;
    ensure!(framing == 4 + 1 + 4 + 4, "frame header is {framing} bytes");
    let traffic = b.traffic.context("socket run kept no traffic log")?;
    ensure!(traffic.len() == b.metrics.len());
    for (t, m) in traffic.iter().zip(&b.metrics) {
        let s = m.selected.len() as u64;
        ensure!(m.bytes == 2 * s * message, "round {}: metrics bytes {} vs 2|S|L = {}", m.round, m.bytes, 2 * s * message);
        ensure!(t.downlink_bytes == s * (message + framing), "round {}: downlink {}", t.round, t.downlink_bytes);
        ensure!(t.uplink_bytes == s * (message + framing), "round {}: uplink {}", t.round, t.uplink_bytes);
        ensure!(t.metrics_bytes == s * (framing + 8), "round {}: metrics frames {}", t.round, t.metrics_bytes);
    }
    let csv = String::from_utf8(read(&socket, TRAFFIC_CSV)?)?;
    ensure!(csv.lines().count() == traffic.len() + 1, "traffic.csv row count");
    Ok(format!(
        "{} rounds bitwise equal; {message}-byte messages, {} bytes logged per round",
        b.metrics.len(),
        traffic[0].param_bytes() + traffic[0].metrics_bytes
    ))
}

// ---------------------------------------------------------------- 13

fn same_files(a: &ExperimentConfig, b: &ExperimentConfig, files: &[&str]) -> Result<()> {
    for f in files {
        ensure!(read(a, f)? == read(b, f)?, "{} differs between reruns", f);
    }
    Ok(())
}

/// A completed run of `name`: the one an earlier criterion left under
/// `prior` when it exists, otherwise a fresh run in `dir`.
fn first_run(
    name: &str,
    prior: PathBuf,
    dir: &Path,
    marker: &str,
    run: impl Fn(&ExperimentConfig) -> Result<()>,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&preset(name))?;
    config.output.dir = prior;
    if read(&config, marker).is_ok() {
        return Ok(config);
    }
    config.output.dir = dir.join(format!("{}-a", name.replace('/', "-")));
    run(&config)?;
    Ok(config)
}

fn c13_determinism(dir: &Path) -> Result<String> {
    let scratch = dir.parent().context("scratch root")?;
    let train = |c: &ExperimentConfig| commands::run_train(c).map(drop);
    let federate = |c: &ExperimentConfig| commands::run_federate(c).map(drop);
    let mut checked = Vec::new();
    for family in ["odenet", "dsodenet"] {
        let name = format!("tables-1-2/{family}.toml");
        let a = first_run(&name, scratch.join("c08").join(family), dir, TRAIN_CSV, train)?;
        let b = load_preset(&name, dir, &format!("{family}-b"))?;
        train(&b)?;
        same_files(&a, &b, &[TRAIN_CSV, commands::EPOCHS_CSV, commands::MODEL_CHECKPOINT])?;
        checked.push(name);
    }
    let priors = [
        ("figs-7-8/config.toml", Some(scratch.join("c09").join("odenet"))),
        ("table-6/config.toml", Some(scratch.join("c10").join("b1000-s0"))),
        ("tables-3-5/alpha-1.toml", None),
        ("tables-3-5/alpha-10.toml", None),
        ("tables-3-5/alpha-100.toml", None),
    ];
    for (name, prior) in priors {
        let tag = name.replace('/', "-");
        let prior = prior.unwrap_or_else(|| dir.join(format!("{tag}-a")));
        let a = first_run(name, prior, dir, ROUNDS_CSV, federate)?;
        let b = load_preset(name, dir, &format!("{tag}-b"))?;
        federate(&b)?;
        same_files(&a, &b, &[ROUNDS_CSV, commands::GLOBAL_CHECKPOINT])?;
        let pa = commands::run_partition(&a, PartitionOverrides::default())?;
        let pb = commands::run_partition(&b, PartitionOverrides::default())?;
        ensure!(pa.csv == pb.csv, "{name}: partition CSV differs");
        same_files(&a, &b, &[PARTITION_CSV])?;
        checked.push(name.to_string());
    }
    let table7 = ExperimentConfig::load(&preset("table-7/config.toml"))?.model_config()?;
    let families = [Family::Resnet, Family::Odenet, Family::Dsodenet];
    let sizes = [34, 50, 101].map(Size::Depth);
    let render = || -> Result<String> {
        let rows = commands::count_rows(&table7, &families, &sizes)?;
        let fields: Vec<Vec<String>> = rows.iter().map(|r| r.fields()).collect();
        Ok(fedode_cli::csv::render(COUNT_HEADER, &fields))
    };
    ensure!(render()? == render()?, "table-7 count output differs");
    checked.push("table-7/config.toml".into());
    Ok(format!("{} preset configs rerun byte-identically", checked.len()))
}
