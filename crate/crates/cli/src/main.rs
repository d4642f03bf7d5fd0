//! `adamine` command line.
//!
//! Exit codes: 0 success, 1 fatal I/O, 2 bad input path, 3 validation
//! failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adamine::ada::{prepare_job, run_job, AdaError};
use adamine::archive::{read_window, scan_archive, ArchiveError, ArchiveManifest, NamePattern, DEFAULT_PATTERN};
use adamine::classify::{self, HumanScore, MlpModel, TrainParams, MACHINE_FEATURES};
use adamine::config::{ConfigError, JobConfig};
use adamine::dsp::{stft, to_gray, StftParams};
use adamine::evalkit::{curve, match_truth, tpr_at_fpr, CurveKind};
use adamine::eventstore::{sort_canonical, store_benchmark, store_load, Backend, EventRecord, StoreError};
use adamine::pgm;
use adamine::registry::RegistryError;
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seconds of context on each side of an exported clip.
const CLIP_PAD: f64 = 1.0;

#[derive(Parser)]
#[command(name = "adamine", version, about = "Parallel detection jobs over sound archives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inventory an archive directory into a manifest.
    Scan {
        root: PathBuf,
        #[arg(long, default_value = DEFAULT_PATTERN)]
        pattern: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a job: plan, execute, gather and store the events.
    Run {
        config: PathBuf,
        /// Override the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the per-task table here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time the four storage backends on seeded dummy events.
    BenchStore {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for the benchmark stores (a temporary one by default).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Re-run a job's tasks at several worker counts and report speed-up.
    BenchScale {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
    },
    /// Score a store against ground truth.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "roc")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        fpr: Option<f64>,
        /// Minimum time-frequency IoU for a detection to count as a hit.
        #[arg(long, default_value_t = 0.25)]
        min_iou: f64,
    },
    /// Write one spectrogram image per event plus an index for analysts.
    ExportClips {
        #[arg(long)]
        store: PathBuf,
        /// Manifest written by `scan`.
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        window_len: usize,
        #[arg(long, default_value_t = 128)]
        hop: usize,
    },
    /// Validate analyst scores and attach them to a store.
    ImportScores {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Train the human-knowledge post-classifier.
    PostTrain {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Ground truth used to label the stored events.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 0.25)]
        min_iou: f64,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => Failure::io(e.to_string()),
            _ => Failure::invalid(e.to_string()),
        }
    }
}

impl From<ArchiveError> for Failure {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::UnreadableRoot { .. } => Failure::input(e.to_string()),
            ArchiveError::Io { .. } => Failure::io(e.to_string()),
            _ => Failure::invalid(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::input(e.to_string()),
            _ => Failure::invalid(e.to_string()),
        }
    }
}

impl From<AdaError> for Failure {
    fn from(e: AdaError) -> Self {
        match e {
            AdaError::Archive(e) => e.into(),
            AdaError::Store(e) => e.into(),
            AdaError::Config(e) => e.into(),
            AdaError::Spill { .. } => Failure::io(e.to_string()),
            AdaError::Synth(adamine::synthbench::SynthError::Archive(e)) => e.into(),
            AdaError::Registry(RegistryError::Template { .. } | RegistryError::Model { .. }) => Failure::input(e.to_string()),
            other => Failure::invalid(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// `#`-prefixed provenance lines placed at the top of every table.
fn metadata(seed: Option<u64>, config: Option<&[u8]>) -> Vec<String> {
    let hash = config.map(|bytes| {
        Sha256::digest(bytes)
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    });
    vec![
        format!("adamine {VERSION}"),
        format!("seed {}", seed.map_or("-".into(), |s| s.to_string())),
        format!("config_sha256 {}", hash.unwrap_or_else(|| "-".into())),
    ]
}

fn with_meta(meta: &[String], body: &str) -> String {
    let mut s: String = meta.iter().map(|m| format!("# {m}\n")).collect();
    s.push_str(body);
    s
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn store_backend(path: &Path) -> Result<Backend, Failure> {
    Backend::from_path(path).ok_or_else(|| {
        Failure::invalid(format!(
            "cannot tell the backend of {} from its extension (expected one of .tsv .bin .xml .idx)",
            path.display()
        ))
    })
}

fn load_store(path: &Path) -> Result<Vec<EventRecord>, Failure> {
    if !path.is_file() {
        return Err(Failure::input(format!("no store at {}", path.display())));
    }
    Ok(store_load(store_backend(path)?, path)?)
}

fn scan(root: &Path, pattern: &str, out: &Path) -> Outcome {
    let pattern = NamePattern::new(pattern).map_err(|e| Failure::invalid(e.to_string()))?;
    let manifest = scan_archive(root, &pattern)?;
    let text = manifest.to_text();
    let (head, body) = text.split_once('\n').unwrap_or((&text, ""));
    let meta: String = metadata(None, None).iter().map(|m| format!("# {m}\n")).collect();
    write_file(out, format!("{head}\n{meta}{body}"))?;
    println!(
        "{} entries, {} skipped, {} channels",
        manifest.entries.len(),
        manifest.skipped.len(),
        manifest.channels().len()
    );
    Ok(())
}

fn run(config: &Path, workers: Option<usize>, report: Option<&Path>) -> Outcome {
    let bytes = read_input(config)?;
    let mut cfg = JobConfig::load(config)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(Failure::invalid("--workers must be at least 1"));
        }
        cfg.job.workers = w;
    }
    let r = run_job(&cfg)?;
    print!("{}", r.summary());
    println!("wrote {} events to {}", r.events.len(), cfg.job.output.display());
    if let Some(path) = report {
        let seed = cfg.scene.as_ref().map(|s| s.seed);
        write_file(path, with_meta(&metadata(seed, Some(&bytes)), &r.task_table()))?;
    }
    Ok(())
}

fn bench_store(n: usize, seed: u64, dir: Option<&Path>) -> Outcome {
    let tmp;
    let dir = match dir {
        Some(d) => d,
        None => {
            tmp = tempfile::tempdir().map_err(|e| Failure::io(e.to_string()))?;
            tmp.path()
        }
    };
    let report = store_benchmark(dir, n, seed).map_err(|e| match e {
        adamine::eventstore::BenchError::Store(e) => Failure::from(e),
        other => Failure::invalid(other.to_string()),
    })?;
    let mut meta = metadata(Some(seed), None);
    meta.push(format!("n_events {n}"));
    print!("{}", with_meta(&meta, &report.to_table()));
    Ok(())
}

fn bench_scale(config: &Path, workers: &[usize]) -> Outcome {
    let bytes = read_input(config)?;
    let cfg = JobConfig::load(config)?;
    if workers.is_empty() || workers.contains(&0) {
        return Err(Failure::invalid("--workers needs a list of positive counts"));
    }
    let job = prepare_job(&cfg)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut meta = metadata(cfg.scene.as_ref().map(|s| s.seed), Some(&bytes));
    meta.push(format!("tasks {}", job.plan.tasks.len()));
    meta.push(format!("host_cores {cores}"));
    let mut body = String::from("workers\twall_s\tspeedup\tevents\tidentical\n");
    let mut base: Option<(f64, Vec<EventRecord>)> = None;
    for &w in workers {
        let r = job.execute(w)?;
        let (base_wall, base_events) = base.get_or_insert_with(|| (r.wall_s, r.events.clone()));
        let _ = writeln!(
            body,
            "{w}\t{:.3}\t{:.2}\t{}\t{}",
            r.wall_s,
            *base_wall / r.wall_s,
            r.events.len(),
            if r.events == *base_events { "yes" } else { "no" }
        );
    }
    print!("{}", with_meta(&meta, &body));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(store: &Path, truth: &Path, kind: &str, out: &Path, svg: Option<&Path>, fpr: Option<f64>, min_iou: f64) -> Outcome {
    let kind: CurveKind = kind.parse().map_err(|e: adamine::evalkit::EvalError| Failure::invalid(e.to_string()))?;
    let events = load_store(store)?;
    let truth_events = load_store(truth)?;
    let m = match_truth(&events, &truth_events, min_iou);
    let labels: Vec<bool> = m.event_hits.clone();
    let scores: Vec<f64> = events.iter().map(|e| e.score).collect();
    println!(
        "{} events, {} truth, recovered {}, false positives {}",
        events.len(),
        truth_events.len(),
        m.recovered(),
        m.false_positives()
    );
    let c = curve(&scores, &labels, kind).map_err(|e| Failure::invalid(e.to_string()))?;
    let mut meta = metadata(None, None);
    meta.push(format!("store {}", store.display()));
    meta.push(format!(
        "truth {} recovered {}/{} false_positives {} min_iou {min_iou}",
        truth.display(),
        m.recovered(),
        truth_events.len(),
        m.false_positives()
    ));
    if let Some(f) = fpr {
        if kind == CurveKind::Pr {
            return Err(Failure::invalid("--fpr needs a roc or det curve"));
        }
        meta.push(format!("tpr_at_fpr {f} {:.6}", tpr_at_fpr(&c, f)));
    }
    write_file(out, c.to_table(&meta))?;
    if let Some(path) = svg {
        write_file(path, c.to_svg(&format!("{} {}", kind_name(kind), store.display())))?;
    }
    if let Some(auc) = c.auc {
        println!("auc {auc:.6}");
    }
    if let Some(f) = fpr {
        println!("tpr_at_fpr({f}) {:.6}", tpr_at_fpr(&c, f));
    }
    Ok(())
}

fn kind_name(k: CurveKind) -> &'static str {
    match k {
        CurveKind::Roc => "ROC",
        CurveKind::Det => "DET",
        CurveKind::Pr => "PR",
    }
}

fn export_clips(store: &Path, archive: &Path, out: &Path, window_len: usize, hop: usize) -> Outcome {
    let events = load_store(store)?;
    if !archive.is_file() {
        return Err(Failure::input(format!("no manifest at {}", archive.display())));
    }
    let manifest = ArchiveManifest::read(archive)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::io(format!("cannot create {}: {e}", out.display())))?;
    let params = StftParams {
        window_len,
        hop,
        ..StftParams::default()
    };
    let mut index = String::from("event_id\tfile\tchannel\tbegin_iso8601\tend_iso8601\tlow_hz\thigh_hz\tscore\ttag\n");
    let mut skipped = 0;
    for e in &events {
        let file = format!("{}.pgm", e.event_id);
        let clip = read_window(
            &manifest,
            &e.channel_id,
            e.begin.epoch_secs() - CLIP_PAD,
            e.end.epoch_secs() + CLIP_PAD,
        )
        .map_err(Failure::from)
        .and_then(|block| stft(&block, params).map_err(|err| Failure::invalid(err.to_string())));
        let spec = match clip {
            Ok(s) => s,
            Err(f) => {
                log::warn!("event {}: {}", e.event_id, f.message);
                skipped += 1;
                continue;
            }
        };
        let db = spec.data.mapv(|v| 20.0 * (v + 1e-12).log10());
        let (w, h, px) = to_gray(&db);
        pgm::write(&out.join(&file), w, h, &px).map_err(|err| Failure::io(err.to_string()))?;
        let _ = writeln!(
            index,
            "{}\t{file}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            e.event_id, e.channel_id, e.begin, e.end, e.f_lo, e.f_hi, e.score, e.tag
        );
    }
    let mut meta = metadata(None, None);
    meta.push(format!("clip_pad_s {CLIP_PAD}"));
    write_file(&out.join("index.tsv"), with_meta(&meta, &index))?;
    println!("exported {} clips, {skipped} skipped", events.len() - skipped);
    Ok(())
}

fn score_sidecar(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".scores");
    PathBuf::from(s)
}

fn parse_score_file(path: &Path) -> Result<Vec<HumanScore>, Failure> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::invalid(format!("{} is not UTF-8", path.display())))?;
    classify::parse_scores(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn import_scores(file: &Path, store: &Path) -> Outcome {
    let incoming = parse_score_file(file)?;
    let events = load_store(store)?;
    let ids: Vec<String> = events.iter().map(|e| e.event_id.clone()).collect();
    let unknown = classify::unknown_score_ids(&ids, &incoming);
    if !unknown.is_empty() {
        return Err(Failure::invalid(format!("unknown event ids: {}", unknown.join(", "))));
    }
    let sidecar = score_sidecar(store);
    let mut merged: BTreeMap<(String, String), f64> = BTreeMap::new();
    if sidecar.is_file() {
        for s in parse_score_file(&sidecar)? {
            merged.insert((s.event_id, s.analyst_id), s.score);
        }
    }
    for s in &incoming {
        merged.insert((s.event_id.clone(), s.analyst_id.clone()), s.score);
    }
    let all: Vec<HumanScore> = merged
        .into_iter()
        .map(|((event_id, analyst_id), score)| HumanScore {
            event_id,
            analyst_id,
            score,
        })
        .collect();
    write_file(&sidecar, classify::format_scores(&all))?;
    println!("attached {} scores ({} total) to {}", incoming.len(), all.len(), sidecar.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn post_train(store: &Path, scores: &Path, truth: &Path, out: &Path, seed: u64, epochs: usize, min_iou: f64) -> Outcome {
    let mut events = load_store(store)?;
    sort_canonical(&mut events);
    let truth_events = load_store(truth)?;
    let scores = parse_score_file(scores)?;
    if events.is_empty() {
        return Err(Failure::invalid("the store holds no events"));
    }
    let ids: Vec<String> = events.iter().map(|e| e.event_id.clone()).collect();
    let x = classify::hk_augment(classify::machine_features(&events).view(), &ids, &scores)
        .map_err(|e| Failure::invalid(e.to_string()))?;
    let m = match_truth(&events, &truth_events, min_iou);
    let y: ndarray::Array1<f64> = m.event_hits.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    let params = TrainParams {
        layer_sizes: vec![x.ncols(), 8, 1],
        learning_rate: 0.5,
        epochs,
        batch: 50,
        seed,
        standardize: true,
    };
    let outcome = classify::mlp_train(x.view(), y.view(), &params).map_err(|e| Failure::invalid(e.to_string()))?;
    let mut model: MlpModel = outcome.model;
    model.feature_names = MACHINE_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(["human_score".to_string(), "human_missing".to_string()])
        .collect();
    model.save(out).map_err(|e| Failure::io(format!("cannot write {}: {e}", out.display())))?;
    let pred = model.predict_batch(x.view()).map_err(|e| Failure::invalid(e.to_string()))?;
    let correct = pred.iter().zip(&y).filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5)).count();
    let scored = ids.iter().filter(|id| scores.iter().any(|s| &s.event_id == *id)).count();
    let mut meta = metadata(Some(seed), None);
    meta.push(format!("model {}", out.display()));
    let body = format!(
        "events\tscored\tpositives\tepochs\tfinal_loss\ttrain_accuracy\n{}\t{scored}\t{}\t{epochs}\t{:.6}\t{:.4}\n",
        events.len(),
        y.iter().filter(|&&v| v > 0.5).count(),
        outcome.final_loss,
        correct as f64 / events.len() as f64
    );
    print!("{}", with_meta(&meta, &body));
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Scan { root, pattern, out } => scan(&root, &pattern, &out),
        Command::Run { config, workers, report } => run(&config, workers, report.as_deref()),
        Command::BenchStore { n, seed, dir } => bench_store(n, seed, dir.as_deref()),
        Command::BenchScale { config, workers } => bench_scale(&config, &workers),
        Command::Eval {
            store,
            truth,
            kind,
            out,
            svg,
            fpr,
            min_iou,
        } => eval(&store, &truth, &kind, &out, svg.as_deref(), fpr, min_iou),
        Command::ExportClips {
            store,
            archive,
            out,
            window_len,
            hop,
        } => export_clips(&store, &archive, &out, window_len, hop),
        Command::ImportScores { file, store } => import_scores(&file, &store),
        Command::PostTrain {
            store,
            scores,
            truth,
            out,
            seed,
            epochs,
            min_iou,
        } => post_train(&store, &scores, &truth, &out, seed, epochs, min_iou),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
