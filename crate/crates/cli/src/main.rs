//! `iacd`: batch front end for synthesis, signature extraction, training,
//! diagnosis and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use iacd_core::classifiers::{
    diagnose, evaluate, fault_name, train_bundle, ClassifierBundle, LinkStatus, ModuleConfig, TrainConfig,
};
use iacd_core::preprocess::fit_scaler;
use iacd_core::signature::{build_signature_with_id, ClassLabel, SignatureDatabase};
use iacd_core::svm::KernelSpec;
use iacd_core::synth::{self, ScenarioMatrix};
use iacd_core::trace::{parse_canonical, parse_pcap, serialize_canonical, CapturePoint, TraceFile};

const DEFAULT_SEED: u64 = 2024;
const PCAP_MAGIC: [[u8; 4]; 4] = [
    [0xd4, 0xc3, 0xb2, 0xa1],
    [0xa1, 0xb2, 0xc3, 0xd4],
    [0x4d, 0x3c, 0xb2, 0xa1],
    [0xa1, 0xb2, 0x3c, 0x4d],
];

#[derive(Parser)]
#[command(
    name = "iacd",
    version,
    about = "Client and access-link fault diagnosis from paired TCP traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario matrix and write traces, signature databases and a manifest.
    Synth(SynthArgs),
    /// Build one signature from a client/server trace pair and append it to a database.
    Extract(ExtractArgs),
    /// Train the link detector and the client-fault modules.
    Train(TrainArgs),
    /// Diagnose one client/server trace pair.
    Diagnose(DiagnoseArgs),
    /// Score a bundle on labelled databases.
    Evaluate(EvaluateArgs),
    /// Write a signature database as a CSV feature matrix.
    ExportMatrix(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario matrix (TOML).
    #[arg(long, conflicts_with_all = ["preset", "seed"], required_unless_present = "preset")]
    matrix: Option<PathBuf>,
    /// Built-in matrix: paper-v-b or smoke.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed for presets.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Write signature databases only.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    client: PathBuf,
    #[arg(long)]
    server: PathBuf,
    /// LINK_FAULTY, LINK_HEALTHY or CF<j>.
    #[arg(long)]
    label: ClassLabel,
    /// Database to create or append to.
    #[arg(long)]
    out: PathBuf,
    /// Source identifier (defaults to the client trace path).
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Signature database; repeat to merge several.
    #[arg(long, required = true)]
    db: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Candidate feature counts: `25,75` for the link detector, `<j>=<sizes>` for module j.
    #[arg(long)]
    features: Vec<String>,
    /// Kernel override: `poly2` for the link detector, `<j>=<kernel>` for module j.
    #[arg(long)]
    kernel: Vec<String>,
    /// Cross-validation folds (default: 5, fewer for tiny classes).
    #[arg(long)]
    folds: Option<usize>,
    /// Fault classes to train modules for.
    #[arg(long, value_delimiter = ',')]
    faults: Option<Vec<u32>>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    client: PathBuf,
    #[arg(long)]
    server: PathBuf,
    /// Run the client-fault modules even when the link looks faulty.
    #[arg(long)]
    run_both: bool,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true)]
    db: Vec<PathBuf>,
    /// Directory for metrics.json, accuracy.csv and confusion.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep only features with a nonzero range.
    #[arg(long)]
    drop_null: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportMatrix(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_trace(path: &Path, point: CapturePoint) -> Result<TraceFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = if bytes.len() >= 4 && PCAP_MAGIC.iter().any(|m| bytes[..4] == m[..]) {
        parse_pcap(&bytes, point)
    } else {
        parse_canonical(&String::from_utf8_lossy(&bytes))
    };
    trace.with_context(|| format!("parsing {}", path.display()))
}

fn read_db(path: &Path) -> Result<SignatureDatabase> {
    SignatureDatabase::from_jsonl(&read_text(path)?).with_context(|| format!("loading {}", path.display()))
}

fn read_dbs(paths: &[PathBuf]) -> Result<SignatureDatabase> {
    let parts = paths.iter().map(|p| read_db(p)).collect::<Result<Vec<_>>>()?;
    Ok(SignatureDatabase::merge(parts)?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let (matrix, source) = match (&a.matrix, &a.preset) {
        (Some(path), _) => (ScenarioMatrix::from_toml(&read_text(path)?)?, json!({ "matrix": path })),
        (None, Some(name)) => {
            let seed = a.seed.unwrap_or(DEFAULT_SEED);
            let m = synth::preset(name, seed).with_context(|| {
                format!(
                    "unknown preset {name} (available: {})",
                    synth::preset_names().join(", ")
                )
            })?;
            (m, json!({ "preset": name, "seed": seed }))
        }
        (None, None) => unreachable!("clap requires --matrix or --preset"),
    };
    matrix.validate()?;

    let databases = if a.no_traces {
        synth::generate_databases(&matrix)?
    } else {
        let corpus = synth::generate_corpus(&matrix)?;
        for s in &corpus.samples {
            let stem = a.out.join("traces").join(&s.corpus).join(&s.scenario);
            write(
                &stem.join(format!("{:04}.client.trace", s.index)),
                serialize_canonical(&s.client),
            )?;
            write(
                &stem.join(format!("{:04}.server.trace", s.index)),
                serialize_canonical(&s.server),
            )?;
        }
        corpus.databases
    };

    let mut corpora = serde_json::Map::new();
    for (name, db) in &databases {
        let file = format!("db/{name}.jsonl");
        write(&a.out.join(&file), db.to_jsonl())?;
        let classes: serde_json::Map<_, _> = db
            .class_counts()
            .iter()
            .map(|(l, n)| (l.to_string(), json!(n)))
            .collect();
        corpora.insert(
            name.clone(),
            json!({ "database": file, "signatures": db.len(), "classes": classes }),
        );
        println!("{name}: {} signatures -> {}", db.len(), a.out.join(&file).display());
    }
    write(&a.out.join("matrix.toml"), matrix.to_toml())?;
    let manifest = json!({
        "format": "iacd-synth-manifest",
        "version": 1,
        "source": source,
        "matrix": "matrix.toml",
        "traces": if a.no_traces { None } else { Some("traces") },
        "total_samples": matrix.total_samples(),
        "corpora": corpora,
    });
    write(
        &a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let client = read_trace(&a.client, CapturePoint::Client)?;
    let server = read_trace(&a.server, CapturePoint::Server)?;
    let id = a.id.unwrap_or_else(|| a.client.display().to_string());
    let sig = build_signature_with_id(&client, &server, a.label, id)?;
    let mut signatures = if a.out.exists() {
        read_db(&a.out)?.into_signatures()
    } else {
        Vec::new()
    };
    signatures.push(sig);
    let db = SignatureDatabase::new(signatures)?;
    write(&a.out, db.to_jsonl())?;
    println!("{} signatures in {}", db.len(), a.out.display());
    Ok(())
}

/// Splits `<j>=<value>` into `(Some(j), value)` and a bare value into `(None, value)`.
fn target(spec: &str) -> Result<(Option<u32>, &str)> {
    match spec.split_once('=') {
        None => Ok((None, spec)),
        Some(("lpd", v)) => Ok((None, v)),
        Some((j, v)) => {
            let j = j.trim_start_matches("CF").trim_start_matches("cf");
            Ok((Some(j.parse().with_context(|| format!("bad module in {spec:?}"))?), v))
        }
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(a.seed);
    cfg.k_folds = a.folds;
    if let Some(f) = &a.faults {
        cfg.fault_classes = f.clone();
    }
    for spec in &a.features {
        let (j, v) = target(spec)?;
        let sizes = v
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("bad feature counts in {spec:?}"))?;
        if sizes.is_empty() || sizes.contains(&0) {
            bail!("feature counts must be positive in {spec:?}");
        }
        match j {
            None => cfg.lpd.sizes = sizes,
            Some(j) => cfg.cf.entry(j).or_insert_with(|| cfg_default(j)).sizes = sizes,
        }
    }
    for spec in &a.kernel {
        let (j, v) = target(spec)?;
        let kernel: KernelSpec = v.parse().with_context(|| format!("bad kernel in {spec:?}"))?;
        match j {
            None => cfg.lpd.kernel = kernel,
            Some(j) => cfg.cf.entry(j).or_insert_with(|| cfg_default(j)).kernel = kernel,
        }
    }
    Ok(cfg)
}

fn cfg_default(j: u32) -> ModuleConfig {
    ModuleConfig::cf_default(j)
}

fn module_name(label: ClassLabel) -> String {
    match label {
        ClassLabel::Cf(j) => fault_name(j),
        other => other.to_string(),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let db = read_dbs(&a.db)?;
    let bundle = train_bundle(&db, &cfg)?;
    write(&a.out, bundle.to_json())?;
    println!(
        "LPD: {} q={} cv={:.4}",
        bundle.lpd.svm.kernel,
        bundle.lpd.q(),
        bundle.lpd.selection.cv_accuracy[&bundle.lpd.q()]
    );
    for m in &bundle.cf_modules {
        let q = m.model.q();
        println!(
            "{}: {} q={} cv={:.4}",
            module_name(m.fault_class),
            m.model.svm.kernel,
            q,
            m.model.selection.cv_accuracy[&q]
        );
    }
    println!("bundle -> {}", a.out.display());
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let bundle =
        ClassifierBundle::from_json(&read_text(&a.model)?).with_context(|| format!("loading {}", a.model.display()))?;
    let client = read_trace(&a.client, CapturePoint::Client)?;
    let server = read_trace(&a.server, CapturePoint::Server)?;
    let report = diagnose(&bundle, &client, &server, a.run_both)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("{}", report.summary());
    let status = match report.link_status {
        LinkStatus::Faulty => "FAULTY",
        LinkStatus::Healthy => "HEALTHY",
    };
    println!("{:<8} {:<8} {:+.6}", "link", status, report.link_decision);
    for m in &report.modules {
        let fired = if m.positive { "FAULT" } else { "ok" };
        println!(
            "{:<8} {:<8} {:+.6}",
            module_name(m.fault_class),
            fired,
            m.decision_value
        );
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let bundle =
        ClassifierBundle::from_json(&read_text(&a.model)?).with_context(|| format!("loading {}", a.model.display()))?;
    let db = read_dbs(&a.db)?;
    let metrics = evaluate(&bundle, &db)?;
    print!("{}", metrics.accuracy_csv());
    if let Some(dir) = &a.out {
        write(&dir.join("metrics.json"), metrics.to_json())?;
        write(&dir.join("accuracy.csv"), metrics.accuracy_csv())?;
        write(&dir.join("confusion.csv"), metrics.confusion_csv())?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let db = read_db(&a.db)?;
    let csv = if a.drop_null {
        let scaler = fit_scaler(&db)?;
        db.to_csv(Some(&scaler.retained_indices))
    } else {
        db.to_csv(None)
    };
    write(&a.out, csv)?;
    println!("{} rows -> {}", db.len(), a.out.display());
    Ok(())
}
