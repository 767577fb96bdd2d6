use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{
    export_dataset, generate_benchmark, generate_synthetic_set, import_split, make_split, DataSplit, Domain,
    DomainSample, SplitSpec, World,
};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::metrics::{
    analyze_synthetic, bidirectional_eval, write_features_jsonl, Featurizer, RetrievalReport, Summary,
    SyntheticAnalysis,
};
use crate::trainer::{history_csv, train, TrainData, TrainOutcome};

use super::config::{ExperimentConfig, Method, SweepParam};
use super::report::{metrics_csv, render_report, MetricsRow};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const HISTORY_CSV: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FEATURES_FILE: &str = "features.jsonl";

/// Benchmark world plus the unswapped split, ready to be specialized per
/// arm.
pub struct PreparedData {
    pub world: World,
    source: Prepared,
}

enum Prepared {
    Generated(Box<crate::benchmark::Dataset>, SplitSpec),
    Loaded(PathBuf),
}

impl PreparedData {
    /// Generates the benchmark, or loads it from `cfg.data` when set.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.data {
            None => {
                let ds = generate_benchmark(&cfg.benchmark)?;
                Ok(PreparedData {
                    world: ds.world.clone(),
                    source: Prepared::Generated(Box::new(ds), cfg.split.clone()),
                })
            }
            Some(dir) => {
                let manifest = crate::benchmark::import_manifest(dir)?;
                Ok(PreparedData {
                    world: World::new(&manifest.benchmark)?,
                    source: Prepared::Loaded(dir.clone()),
                })
            }
        }
    }

    pub fn split(&self, swap: bool) -> Result<DataSplit> {
        match &self.source {
            Prepared::Generated(ds, spec) => make_split(ds, &SplitSpec { swap, ..spec.clone() }),
            Prepared::Loaded(dir) => Ok(import_split(dir, swap)?.1),
        }
    }
}

/// With `cfg.data` set, replaces the benchmark and split settings by the
/// ones recorded in that directory's manifest.
pub fn resolve_data(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    if let Some(dir) = &cfg.data {
        let manifest = crate::benchmark::import_manifest(dir)?;
        out.benchmark = manifest.benchmark;
        out.split = SplitSpec {
            swap: false,
            ..manifest.split
        };
    }
    Ok(out)
}

/// Result of one training run (one seed, one category assignment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub swapped: bool,
    pub test: RetrievalReport,
    pub best_epoch: usize,
    pub initial_val_prec: f64,
    pub best_val_prec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticAnalysis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SeedOutcome {
    Ok {
        /// Arm-averaged test precision.
        test: RetrievalReport,
        arms: Vec<ArmResult>,
    },
    Failed {
        error: String,
        exit_code: i32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: SeedOutcome,
}

impl SeedRecord {
    pub fn test(&self) -> Option<&RetrievalReport> {
        match &self.outcome {
            SeedOutcome::Ok { test, .. } => Some(test),
            SeedOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub a_to_b: Summary,
    pub b_to_a: Summary,
    pub mean: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub distance_to_source: Summary,
    pub ncm_accuracy: Summary,
    pub similarity_to_real_target: Summary,
}

/// Everything a run reports, written as `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub scenario: String,
    pub ks: Vec<usize>,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: Vec<KSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSummary>,
}

impl MetricsReport {
    pub fn failed(&self) -> usize {
        self.seeds.iter().filter(|s| s.test().is_none()).count()
    }

    /// Aggregate of the direction-averaged precision at `k`.
    pub fn summary(&self, k: usize) -> Option<Summary> {
        self.aggregate.iter().find(|a| a.k == k).map(|a| a.mean)
    }

    /// Per-seed direction-averaged precision at `k` for successful seeds.
    pub fn per_seed(&self, k: usize) -> Vec<(u64, f64)> {
        self.seeds
            .iter()
            .filter_map(|s| s.test().and_then(|t| t.at(k)).map(|v| (s.seed, v)))
            .collect()
    }

    pub fn rows(&self) -> Vec<MetricsRow> {
        self.seeds
            .iter()
            .filter_map(|s| {
                s.test().map(|t| MetricsRow {
                    scenario: self.scenario.clone(),
                    method: self.method,
                    seed: s.seed,
                    ks: t.ks.clone(),
                    a_to_b: t.a_to_b.clone(),
                    b_to_a: t.b_to_a.clone(),
                    mean: t.mean.clone(),
                })
            })
            .collect()
    }
}

/// Process exit code for an error: 2 configuration, 3 data, 4 divergence.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Divergence { .. }
        | Error::Numeric(_)
        | Error::DegenerateInput { .. }
        | Error::DivergenceUndefined { .. } => 4,
        _ => 3,
    }
}

/// Exit code when some but not all seeds (or sweep cells) failed.
pub const EXIT_PARTIAL: i32 = 5;
/// Exit code when a report directory holds no results.
pub const EXIT_EMPTY_REPORT: i32 = 6;

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_text<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

/// Translations of `split`'s training pools: `(into A, into B)`.
pub fn synthetic_sets(
    cfg: &ExperimentConfig,
    world: &World,
    split: &DataSplit,
    seed: u64,
) -> Result<(Vec<DomainSample>, Vec<DomainSample>)> {
    let t = cfg.translation.resolve(seed);
    Ok((
        generate_synthetic_set(&split.train_b, Domain::A, &t, world)?,
        generate_synthetic_set(&split.train_a, Domain::B, &t, world)?,
    ))
}

fn all_real(split: &DataSplit, domain: Domain) -> Vec<DomainSample> {
    let mut v: Vec<DomainSample> = [split.train(domain), split.val(domain), split.test(domain)]
        .concat()
        .into_iter()
        .chain(split.unused.iter().filter(|s| s.domain == domain).cloned())
        .collect();
    v.sort_by_key(|s| s.instance_id);
    v
}

/// Trains and evaluates one arm, writing history and checkpoint into `dir`.
pub fn run_arm(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
    swapped: bool,
    dir: &Path,
) -> Result<(ArmResult, TrainOutcome)> {
    let split = data.split(swapped)?;
    let method = cfg.method;
    let (syn_a, syn_b) = if method.uses_synthetic() {
        let (a, b) = synthetic_sets(cfg, &data.world, &split, seed)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let encoder = Encoder::init(&cfg.encoder_config(seed))?;
    let mut train_cfg = cfg.train_config(seed);
    if !method.trains() {
        train_cfg.epochs = 0;
    }
    let train_data = TrainData {
        train_a: &split.train_a,
        train_b: &split.train_b,
        syn_a: syn_a.as_deref(),
        syn_b: syn_b.as_deref(),
        val_a: &split.val_a,
        val_b: &split.val_b,
    };
    let outcome = train(encoder, &train_data, &method.objective(&cfg.losses), &train_cfg)?;
    let test = bidirectional_eval(&split.test_a, &split.test_b, &outcome.encoder, &cfg.eval.ks)?;
    let synthetic = match (&syn_a, &syn_b) {
        (Some(a), Some(b)) => Some(analyze_synthetic(
            &all_real(&split, Domain::A),
            &all_real(&split, Domain::B),
            a,
            b,
            Featurizer::Identity,
        )?),
        _ => None,
    };
    write_file(&dir.join(HISTORY_CSV), history_csv(&outcome.history).as_bytes())?;
    write_file(&dir.join(CHECKPOINT_FILE), &outcome.encoder.to_bytes())?;
    Ok((
        ArmResult {
            swapped,
            test,
            best_epoch: outcome.best_epoch,
            initial_val_prec: outcome.initial_val_prec,
            best_val_prec: outcome.best_val_prec,
            synthetic,
        },
        outcome,
    ))
}

fn average_reports(reports: &[&RetrievalReport]) -> RetrievalReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&RetrievalReport) -> &Vec<f64>| -> Vec<f64> {
        (0..reports[0].ks.len())
            .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n)
            .collect()
    };
    RetrievalReport {
        ks: reports[0].ks.clone(),
        a_to_b: avg(|r| &r.a_to_b),
        b_to_a: avg(|r| &r.b_to_a),
        mean: avg(|r| &r.mean),
    }
}

fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<SeedOutcome> {
    let seed_dir = cfg.out.join(format!("seed-{seed}"));
    let arms: Vec<bool> = if cfg.swap_average { vec![false, true] } else { vec![false] };
    let mut results = Vec::with_capacity(arms.len());
    for swapped in arms {
        let dir = seed_dir.join(if swapped { "swapped" } else { "base" });
        results.push(run_arm(cfg, data, seed, swapped, &dir)?.0);
    }
    let tests: Vec<&RetrievalReport> = results.iter().map(|a| &a.test).collect();
    Ok(SeedOutcome::Ok {
        test: average_reports(&tests),
        arms: results,
    })
}

fn aggregate(ks: &[usize], seeds: &[SeedRecord]) -> Vec<KSummary> {
    let ok: Vec<&RetrievalReport> = seeds.iter().filter_map(SeedRecord::test).collect();
    ks.iter()
        .enumerate()
        .map(|(i, &k)| {
            let col = |f: fn(&RetrievalReport) -> &Vec<f64>| -> Summary {
                Summary::of(&ok.iter().map(|r| f(r)[i]).collect::<Vec<_>>())
            };
            KSummary {
                k,
                a_to_b: col(|r| &r.a_to_b),
                b_to_a: col(|r| &r.b_to_a),
                mean: col(|r| &r.mean),
            }
        })
        .collect()
}

fn aggregate_synthetic(seeds: &[SeedRecord]) -> Option<SyntheticSummary> {
    let mut per_seed: Vec<SyntheticAnalysis> = Vec::new();
    for s in seeds {
        if let SeedOutcome::Ok { arms, .. } = &s.outcome {
            let analyses: Vec<&SyntheticAnalysis> = arms.iter().filter_map(|a| a.synthetic.as_ref()).collect();
            if analyses.is_empty() {
                continue;
            }
            let n = analyses.len() as f64;
            per_seed.push(SyntheticAnalysis {
                distance_to_source: analyses.iter().map(|a| a.distance_to_source).sum::<f64>() / n,
                ncm_accuracy: analyses.iter().map(|a| a.ncm_accuracy).sum::<f64>() / n,
                similarity_to_real_target: analyses.iter().map(|a| a.similarity_to_real_target).sum::<f64>() / n,
            });
        }
    }
    if per_seed.is_empty() {
        return None;
    }
    let col = |f: fn(&SyntheticAnalysis) -> f64| Summary::of(&per_seed.iter().map(f).collect::<Vec<_>>());
    Some(SyntheticSummary {
        distance_to_source: col(|a| a.distance_to_source),
        ncm_accuracy: col(|a| a.ncm_accuracy),
        similarity_to_real_target: col(|a| a.similarity_to_real_target),
    })
}

/// Trains every seed, then writes `metrics.json`, `metrics.csv` and the
/// report into `cfg.out`. Seeds that fail are recorded; the run itself
/// only fails when every seed does.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let cfg = &resolve_data(cfg)?;
    let data = PreparedData::new(cfg)?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut first_error = None;
    for &seed in &cfg.seeds {
        let outcome = match run_seed(cfg, &data, seed) {
            Ok(o) => o,
            Err(e) => {
                let failed = SeedOutcome::Failed {
                    error: e.to_string(),
                    exit_code: exit_code(&e),
                };
                first_error.get_or_insert(e);
                failed
            }
        };
        seeds.push(SeedRecord { seed, outcome });
    }
    let report = MetricsReport {
        method: cfg.method,
        scenario: cfg.scenario.clone(),
        ks: cfg.eval.ks.clone(),
        aggregate: aggregate(&cfg.eval.ks, &seeds),
        synthetic: aggregate_synthetic(&seeds),
        seeds,
    };
    write_file(&cfg.out.join(METRICS_JSON), json_text(&report).as_bytes())?;
    if report.failed() == report.seeds.len() {
        return Err(first_error.expect("at least one seed ran"));
    }
    let rows = report.rows();
    write_file(&cfg.out.join(METRICS_CSV), metrics_csv(&rows).as_bytes())?;
    let (text, csv) = render_report(&rows);
    write_file(&cfg.out.join(REPORT_TXT), text.as_bytes())?;
    write_file(&cfg.out.join(REPORT_CSV), csv.as_bytes())?;
    write_file(&cfg.out.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    Ok(report)
}

/// Writes the benchmark, its split and (for methods that use them) the
/// translations for the first seed.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path, with_oracle: bool) -> Result<()> {
    cfg.validate()?;
    let ds = generate_benchmark(&cfg.benchmark)?;
    let split = make_split(&ds, &cfg.split)?;
    let seed = cfg.seeds[0];
    if cfg.method.uses_synthetic() {
        let (a, b) = synthetic_sets(cfg, &ds.world, &split, seed)?;
        let t = cfg.translation.resolve(seed);
        export_dataset(out, &cfg.benchmark, &cfg.split, &split, Some(&t), &[&a, &b], with_oracle)
    } else {
        export_dataset(out, &cfg.benchmark, &cfg.split, &split, None, &[], with_oracle)
    }
}

/// One grid value of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prec: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub parameter: SweepParam,
    pub method: Method,
    pub k: usize,
    pub cells: Vec<SweepCell>,
    /// Rank correlation between the parameter and mean precision over the
    /// successful cells; absent with fewer than two of them.
    pub spearman: Option<f64>,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.prec.is_none()).count()
    }
}

fn selection_k(ks: &[usize]) -> usize {
    if ks.contains(&1) {
        1
    } else {
        *ks.iter().min().expect("ks validated nonempty")
    }
}

/// Runs the base config once per grid value, each in its own
/// subdirectory, and summarises the trend.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let param = cfg.sweep.validate()?;
    let k = selection_k(&cfg.eval.ks);
    let mut cells = Vec::with_capacity(cfg.sweep.values.len());
    let mut first_error = None;
    for &value in &cfg.sweep.values {
        let label = format!("{}={value}", param.name());
        let mut cell_cfg = cfg.with_param(param, value);
        cell_cfg.out = cfg.out.join(&label);
        cell_cfg.scenario = format!("{} {label}", cfg.scenario);
        cell_cfg.sweep = Default::default();
        let cell = match cmd_run(&cell_cfg) {
            Ok(report) => SweepCell {
                value,
                prec: report.summary(k),
                error: None,
            },
            Err(e) => {
                let cell = SweepCell {
                    value,
                    prec: None,
                    error: Some(e.to_string()),
                };
                first_error.get_or_insert(e);
                cell
            }
        };
        cells.push(cell);
    }
    if cells.iter().all(|c| c.prec.is_none()) {
        return Err(first_error.expect("sweep grid is nonempty"));
    }
    let ok: Vec<(f64, f64)> = cells.iter().filter_map(|c| c.prec.map(|p| (c.value, p.mean))).collect();
    let spearman = (ok.len() >= 2).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = ok.iter().copied().unzip();
        spearman(&x, &y)
    });
    let outcome = SweepOutcome {
        parameter: param,
        method: cfg.method,
        k,
        cells,
        spearman,
    };
    let mut csv = format!("{},mean,std,n,error\n", param.name());
    for c in &outcome.cells {
        match (&c.prec, &c.error) {
            (Some(p), _) => csv.push_str(&format!("{},{},{},{},\n", c.value, p.mean, p.std, p.n)),
            (None, e) => csv.push_str(&format!(
                "{},,,0,{}\n",
                c.value,
                e.as_deref().unwrap_or("").replace([',', '\n'], ";")
            )),
        }
    }
    write_file(&cfg.out.join("sweep.csv"), csv.as_bytes())?;
    let trend = match outcome.spearman {
        Some(r) => format!(
            "spearman({}, prec@{k}) = {r:.4} over {} of {} values\n",
            param.name(),
            ok.len(),
            outcome.cells.len()
        ),
        None => format!("spearman({}, prec@{k}) undefined: fewer than two successful values\n", param.name()),
    };
    write_file(&cfg.out.join("sweep.txt"), trend.as_bytes())?;
    write_file(&cfg.out.join("sweep.json"), json_text(&outcome).as_bytes())?;
    Ok(outcome)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // tied values share the mean of their 1-based ranks
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPair {
    pub seed: u64,
    pub with_ppp: f64,
    pub without_ppp: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub k: usize,
    pub pairs: Vec<AblationPair>,
    pub delta: Summary,
    pub with_ppp: MetricsReport,
    pub without_ppp: MetricsReport,
}

/// Runs the full method and its pair-loss-free variant on identical seeds
/// and data and reports the per-seed difference.
pub fn cmd_ablate_ppp(cfg: &ExperimentConfig) -> Result<AblationOutcome> {
    cfg.validate()?;
    if cfg.method != Method::Syncdr {
        return Err(Error::Config(format!(
            "the pair-loss ablation needs method = \"syncdr\", not \"{}\"",
            cfg.method
        )));
    }
    let k = selection_k(&cfg.eval.ks);
    let arm = |method: Method| -> Result<MetricsReport> {
        let mut c = cfg.clone();
        c.method = method;
        c.out = cfg.out.join(method.name());
        cmd_run(&c)
    };
    let with_ppp = arm(Method::Syncdr)?;
    let without_ppp = arm(Method::SyncdrNoPpp)?;
    let others: Vec<(u64, f64)> = without_ppp.per_seed(k);
    let pairs: Vec<AblationPair> = with_ppp
        .per_seed(k)
        .into_iter()
        .filter_map(|(seed, w)| {
            others.iter().find(|(s, _)| *s == seed).map(|&(_, wo)| AblationPair {
                seed,
                with_ppp: w,
                without_ppp: wo,
                delta: w - wo,
            })
        })
        .collect();
    let delta = Summary::of(&pairs.iter().map(|p| p.delta).collect::<Vec<_>>());
    let mut csv = String::from("seed,with_ppp,without_ppp,delta\n");
    for p in &pairs {
        csv.push_str(&format!("{},{},{},{}\n", p.seed, p.with_ppp, p.without_ppp, p.delta));
    }
    write_file(&cfg.out.join("ablation.csv"), csv.as_bytes())?;
    let text = format!(
        "prec@{k} with pair loss minus without, paired over {} seeds: {:.4} ± {:.4}\n",
        pairs.len(),
        delta.mean,
        delta.std
    );
    write_file(&cfg.out.join("ablation.txt"), text.as_bytes())?;
    Ok(AblationOutcome {
        k,
        pairs,
        delta,
        with_ppp,
        without_ppp,
    })
}

/// `cmd_run` with the distillation objective.
pub fn cmd_distill(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let mut c = cfg.clone();
    c.method = Method::Distill;
    cmd_run(&c)
}

/// Writes encoder features of both test sets. Without a checkpoint the
/// freshly initialized encoder of the first seed is used.
pub fn cmd_dump_features(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<usize> {
    cfg.validate()?;
    let cfg = &resolve_data(cfg)?;
    let data = PreparedData::new(cfg)?;
    let split = data.split(false)?;
    let encoder = match checkpoint {
        Some(p) => Encoder::load(p)?,
        None => Encoder::init(&cfg.encoder_config(cfg.seeds[0]))?,
    };
    let samples: Vec<DomainSample> = [split.test_a.as_slice(), split.test_b.as_slice()].concat();
    let features = encoder.encode_samples(&samples)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_features_jsonl(out, &samples, &features)?;
    Ok(samples.len())
}
