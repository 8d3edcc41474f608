use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use pricure::dp::{aggregate, aggregate_scores, AggregationMode, PrivacyParams};
use pricure::model::{
    argmax, forward_float, generate_fixture, make_blobs, nearest_mean_readout, save_model, ModelMeta, ModelParameters,
    NetworkSpec, SyntheticDataset,
};
use pricure::protocol::{substream, SessionConfig};
use pricure::runtime::{run_tcp_party, simulate, Endpoints, PartyInputs, PartyReport, PartyRole, RoundOutcome, SessionReport};
use serde::Serialize;

use crate::manifest::{ManifestFile, RunManifest};

/// Queries refused by the aggregator; maps to the budget exit code.
#[derive(Debug, thiserror::Error)]
#[error("{refused} of {rounds} queries were refused: {reason}")]
pub struct Refused {
    pub refused: usize,
    pub rounds: usize,
    pub reason: String,
}

fn check_refusals(outcomes: &[RoundOutcome]) -> Result<()> {
    let reasons: Vec<&str> = outcomes
        .iter()
        .filter_map(|o| match o {
            RoundOutcome::Refused(r) => Some(r.as_str()),
            RoundOutcome::Label(_) => None,
        })
        .collect();
    if let Some(first) = reasons.first() {
        return Err(Refused {
            refused: reasons.len(),
            rounds: outcomes.len(),
            reason: first.to_string(),
        }
        .into());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureKind {
    /// Nearest-mean readouts fitted on each owner's shard of blob data.
    Readout,
    /// Random two-decimal weights.
    Random,
}

pub struct FixtureArgs {
    pub spec: String,
    pub m: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub hidden: Option<usize>,
    pub kind: FixtureKind,
    pub queries: usize,
    pub train_per_owner: usize,
    pub epsilon: f64,
    pub mode: AggregationMode,
    pub budget_cap: Option<f64>,
    pub base_port: u16,
}

pub fn fixtures(args: &FixtureArgs) -> Result<()> {
    let mut spec = NetworkSpec::preset(&args.spec).map_err(pricure::Error::from)?;
    if let Some(h) = args.hidden {
        spec = spec.with_hidden(h);
    }
    let privacy = match args.mode {
        AggregationMode::NoNoise => PrivacyParams::no_noise(),
        mode => PrivacyParams::new(args.epsilon, mode).map_err(pricure::Error::from)?,
    };
    let classes = spec.output_dim;
    let train_per_class = args.train_per_owner * args.m as usize;
    let queries_per_class = args.queries.div_ceil(classes);
    let all = make_blobs(train_per_class + queries_per_class, classes, spec.input_dim, args.seed)
        .map_err(pricure::Error::from)?;
    let (train, rest) = all.samples.split_at(train_per_class * classes);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let m = args.m as usize;
    let mut model_paths = Vec::with_capacity(m);
    for k in 0..m {
        let params = match args.kind {
            FixtureKind::Random => generate_fixture(&spec, args.seed.wrapping_add(k as u64 + 1)),
            FixtureKind::Readout => {
                let shard = train.iter().enumerate().filter(|(i, _)| (i / classes) % m == k).map(|(_, s)| s);
                let means = all.class_means(shard);
                nearest_mean_readout(&spec, &means).map_err(pricure::Error::from)?
            }
        };
        let name = PathBuf::from(format!("owner-{}.json", k + 1));
        let meta = ModelMeta {
            owner: Some(k as u32 + 1),
            note: format!("{:?} fixture, seed {}", args.kind, args.seed).to_lowercase(),
        };
        save_model(&args.out.join(&name), &params, &meta).map_err(pricure::Error::from)?;
        model_paths.push(name);
    }
    let dataset = SyntheticDataset {
        samples: rest[..args.queries].to_vec(),
        ..all.clone()
    };
    dataset.save(&args.out.join("dataset.json")).map_err(pricure::Error::from)?;

    let mut config = SessionConfig::new(spec, args.m, privacy);
    config.budget_cap = args.budget_cap;
    config.validate()?;
    config.save(&args.out.join("session.toml"))?;

    let local = |offset: u16| format!("127.0.0.1:{}", args.base_port + offset);
    let manifest = ManifestFile {
        session: "session.toml".into(),
        seed: args.seed,
        models: model_paths,
        dataset: "dataset.json".into(),
        output: "out".into(),
        rounds: None,
        endpoints: Endpoints {
            worker_a: local(0),
            worker_b: local(1),
            aggregator: local(2),
        },
    };
    fs::write(args.out.join("manifest.toml"), toml::to_string(&manifest)?)?;
    println!(
        "wrote {m} {} models, {} queries, session and manifest to {}",
        config.spec,
        args.queries,
        args.out.display()
    );
    Ok(())
}

/// Operating system, architecture, thread count and CPU model.
pub fn hardware() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{}/{}, {threads} threads, {cpu}", std::env::consts::OS, std::env::consts::ARCH)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Serialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Distribution {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        Some(Distribution {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p50: at(0.5),
            p95: at(0.95),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub share_ms: Vec<f64>,
    pub worker_ms: Option<Distribution>,
    pub aggregate_ms: Option<Distribution>,
    pub sample_ms: Option<Distribution>,
}

fn timing(report: &SessionReport) -> Timing {
    let worker: Vec<f64> = report
        .worker_a
        .rounds
        .iter()
        .zip(&report.worker_b.rounds)
        .map(|(a, b)| ms(*a.max(b)))
        .collect();
    let agg: Vec<f64> = report.aggregator.aggregate_time.iter().map(|d| ms(*d)).collect();
    let sample: Vec<f64> = worker.iter().zip(&agg).map(|(w, a)| w + a).collect();
    Timing {
        share_ms: report.owners.iter().map(|o| ms(o.share_time)).collect(),
        worker_ms: Distribution::of(&worker),
        aggregate_ms: Distribution::of(&agg),
        sample_ms: Distribution::of(&sample),
    }
}

/// Noiseless aggregate label over plaintext float outputs.
fn reference_label(models: &[ModelParameters], x: &[f64], mode: AggregationMode) -> Result<usize> {
    let outputs = models
        .iter()
        .map(|p| forward_float(p, x))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(pricure::Error::from)?;
    let scores = aggregate_scores(&outputs, mode).map_err(pricure::Error::from)?;
    Ok(argmax(&scores))
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    format: &'static str,
    spec: String,
    owners: u32,
    mode: String,
    epsilon: Option<f64>,
    seed: u64,
    rounds: usize,
    labels: Vec<Option<usize>>,
    refusals: Vec<Option<String>>,
    reference_labels: Vec<usize>,
    agreement: f64,
    accuracy: f64,
    timing: Timing,
    hardware: String,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_simulate(manifest: &Path, rounds: Option<u64>) -> Result<()> {
    let run = RunManifest::load(manifest)?;
    let (inputs, truth) = run.queries(rounds)?;
    let cfg = &run.config;
    let report = simulate(cfg, &run.models, &inputs, run.file.seed)?;
    let mut reference = Vec::with_capacity(inputs.len());
    for x in &inputs {
        reference.push(reference_label(&run.models, x, cfg.privacy.mode)?);
    }
    let labels: Vec<Option<usize>> = report.outcomes.iter().map(RoundOutcome::label).collect();
    let n = inputs.len().max(1) as f64;
    let agreement = labels.iter().zip(&reference).filter(|(l, r)| **l == Some(**r)).count() as f64 / n;
    let accuracy = labels.iter().zip(&truth).filter(|(l, t)| **l == Some(**t)).count() as f64 / n;
    let out = SimulateReport {
        format: "pricure-simulate/1",
        spec: cfg.spec.to_string(),
        owners: cfg.owners,
        mode: cfg.privacy.mode.to_string(),
        epsilon: cfg.privacy.epsilon.is_finite().then_some(cfg.privacy.epsilon),
        seed: run.file.seed,
        rounds: inputs.len(),
        labels,
        refusals: report
            .outcomes
            .iter()
            .map(|o| match o {
                RoundOutcome::Refused(r) => Some(r.clone()),
                RoundOutcome::Label(_) => None,
            })
            .collect(),
        reference_labels: reference,
        agreement,
        accuracy,
        timing: timing(&report),
        hardware: hardware(),
    };
    let path = run.output_dir()?.join("simulate.json");
    write_json(&path, &out)?;
    println!(
        "{} rounds of {} with {} owners: agreement {:.2}%, accuracy {:.2}%",
        out.rounds,
        out.spec,
        out.owners,
        agreement * 100.0,
        accuracy * 100.0
    );
    if let Some(d) = &out.timing.sample_ms {
        println!("per-sample latency p50 {:.2} ms, p95 {:.2} ms", d.p50, d.p95);
    }
    println!("report: {}", path.display());
    check_refusals(&report.outcomes)
}

#[derive(Debug, Serialize)]
struct BenchReport {
    format: &'static str,
    spec: String,
    owners: u32,
    rounds: usize,
    timing: Timing,
    hardware: String,
}

pub fn cmd_bench(manifest: &Path, rounds: Option<u64>) -> Result<()> {
    let run = RunManifest::load(manifest)?;
    let (inputs, _) = run.queries(rounds)?;
    let mut cfg = run.config.clone();
    cfg.budget_cap = None;
    let report = simulate(&cfg, &run.models, &inputs, run.file.seed)?;
    let out = BenchReport {
        format: "pricure-bench/1",
        spec: cfg.spec.to_string(),
        owners: cfg.owners,
        rounds: inputs.len(),
        timing: timing(&report),
        hardware: hardware(),
    };
    let share = Distribution::of(&out.timing.share_ms);
    if let Some(s) = &share {
        println!("share time per model: mean {:.2} ms, max {:.2} ms", s.mean, s.max);
    }
    if let Some(d) = &out.timing.sample_ms {
        println!(
            "per-sample latency over {} rounds: min {:.2}, p50 {:.2}, p95 {:.2}, max {:.2} ms",
            out.rounds, d.min, d.p50, d.p95, d.max
        );
    }
    println!("hardware: {}", out.hardware);
    write_json(&run.output_dir()?.join("bench.json"), &out)
}

pub const EVAL_SCHEMA: &str = "pricure-eval/1";

#[derive(Debug, Serialize)]
struct EvalRow {
    epsilon: f64,
    m: u32,
    mode: String,
    accuracy: f64,
    trials: usize,
}

pub fn cmd_eval(manifest: &Path, epsilons: &[f64], owners: &[u32], trials: usize, out: Option<PathBuf>) -> Result<()> {
    let run = RunManifest::load(manifest)?;
    let (inputs, truth) = run.queries(None)?;
    if inputs.is_empty() || trials == 0 {
        bail!(pricure::Error::Config("eval needs at least one query and one trial".into()));
    }
    let mode = match run.config.privacy.mode {
        AggregationMode::NoNoise => AggregationMode::VoteHistogram,
        m => m,
    };
    let owners = if owners.is_empty() {
        vec![run.config.owners]
    } else {
        owners.to_vec()
    };
    let path = match out {
        Some(p) => p,
        None => run.output_dir()?.join("eval.csv"),
    };
    let mut text = format!("# {EVAL_SCHEMA}\n").into_bytes();
    {
        let mut csv = csv::Writer::from_writer(&mut text);
        for &m in &owners {
            if m == 0 || m > run.config.owners {
                bail!(pricure::Error::Config(format!("owner count {m} outside 1..={}", run.config.owners)));
            }
            let mut cfg = run.config.clone();
            cfg.owners = m;
            cfg.privacy = PrivacyParams::no_noise();
            cfg.budget_cap = None;
            let report = simulate(&cfg, &run.models[..m as usize], &inputs, run.file.seed)?;
            let outputs = &report.aggregator.outputs;
            for &eps in epsilons {
                let params = PrivacyParams::new(eps, mode).map_err(pricure::Error::from)?;
                let mut rng = substream(run.file.seed, &format!("eval/{m}/{eps}"));
                let mut hits = 0usize;
                for t in 0..trials {
                    let i = t % outputs.len();
                    let label = aggregate(&outputs[i], &params, &mut rng).map_err(pricure::Error::from)?.label;
                    hits += usize::from(label == truth[i]);
                }
                let row = EvalRow {
                    epsilon: eps,
                    m,
                    mode: mode.to_string(),
                    accuracy: hits as f64 / trials as f64,
                    trials,
                };
                println!("epsilon {:<8} m {:<3} accuracy {:.4}", row.epsilon, row.m, row.accuracy);
                csv.serialize(row)?;
            }
        }
        csv.flush()?;
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RoleArg {
    Owner,
    WorkerA,
    WorkerB,
    Dealer,
    Aggregator,
    Client,
}

pub fn cmd_party(role: RoleArg, manifest: &Path, index: Option<u32>) -> Result<()> {
    let run = RunManifest::load(manifest)?;
    let (inputs, _) = run.queries(None)?;
    let rounds = inputs.len() as u64;
    let models: &[ModelParameters] = match (role, index) {
        (RoleArg::Owner, Some(i)) if i >= 1 && i as usize <= run.models.len() => &run.models[i as usize - 1..i as usize],
        (RoleArg::Owner, Some(i)) => bail!(pricure::Error::Config(format!(
            "owner index {i} outside 1..={}",
            run.models.len()
        ))),
        (_, Some(_)) => bail!(pricure::Error::Config("--index applies to owners only".into())),
        _ => &run.models,
    };
    let party = match role {
        RoleArg::Owner => PartyRole::Owners(index),
        RoleArg::WorkerA => PartyRole::Worker(pricure::sharing::WorkerId::A),
        RoleArg::WorkerB => PartyRole::Worker(pricure::sharing::WorkerId::B),
        RoleArg::Dealer => PartyRole::Dealer,
        RoleArg::Aggregator => PartyRole::Aggregator,
        RoleArg::Client => PartyRole::Client,
    };
    let data = PartyInputs {
        models,
        inputs: &inputs,
        rounds,
    };
    let report = run_tcp_party(party, &run.config, &run.file.endpoints, run.file.seed, data, None)?;
    match report {
        PartyReport::Client(c) => {
            let labels: Vec<Option<usize>> = c.outcomes.iter().map(RoundOutcome::label).collect();
            let path = run.output_dir()?.join("client-labels.json");
            write_json(&path, &labels)?;
            for (i, o) in c.outcomes.iter().enumerate() {
                match o {
                    RoundOutcome::Label(l) => println!("round {i}: {l}"),
                    RoundOutcome::Refused(r) => println!("round {i}: refused ({r})"),
                }
            }
            check_refusals(&c.outcomes)?;
        }
        PartyReport::Owners(o) => {
            for r in o {
                println!("owner {}: shared in {:.2} ms", r.owner, ms(r.share_time));
            }
        }
        PartyReport::Worker(w) => println!("served {} rounds", w.rounds.len()),
        PartyReport::Dealer(d) => println!("answered {} sign queries", d.sign_queries),
        PartyReport::Aggregator(a) => println!("aggregated {} rounds", a.aggregate_time.len()),
    }
    Ok(())
}
