//! Command-line surface for the voiceprint forensics pipeline.
//!
//! Thin dispatch over the library: each subcommand runs exactly one
//! pipeline. Exit codes: 0 success (or match), 3 legitimate non-match,
//! 10 and up for errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use voiceprint::audio::read_wav;
use voiceprint::corpus::{generate_corpus, make_splits, sample_identities, GeneratorParams, Manifest};
use voiceprint::embedding::{BaseEncoder, BaseEncoderConfig, BaseSource, ExternalEmbeddings, ProjectionHead};
use voiceprint::error::Error;
use voiceprint::eval::{emit_report, run_protocol, EvalOptions, EvalReport, ProtocolOptions};
use voiceprint::forensics::{
    decide, enroll, load_profile, save_profile, score, EnrollmentPolicy, Task,
};
use voiceprint::training::{train_head, AamConfig};

#[derive(Parser)]
#[command(name = "vf", version, about = "Speaker-verification audio forensics toolkit")]
struct Cli {
    /// Seed for all randomized steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; flags override file values, file overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-parseable one-line JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Cap worker parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the simulated reenactment corpus and its splits.
    GenCorpus(GenCorpusArgs),
    /// Build an identity profile from enrollment audio.
    Enroll(EnrollArgs),
    /// Score a clip against a profile: is it real audio of the enrollee?
    Detect(VerifyArgs),
    /// Fine-tune the projection head on driver labels.
    TrainHead(TrainArgs),
    /// Score a synthetic clip against a profile: is it driven by the enrollee?
    Fingerprint(VerifyArgs),
    /// Evaluate a task over a manifest and write the report directory.
    Eval(EvalArgs),
    /// Summarize a previously written report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    clips_per_pair: Option<usize>,
    #[arg(long)]
    reals_per_identity: Option<usize>,
    /// Clip duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Clone-imperfection formant sigma (relative).
    #[arg(long)]
    formant_sigma: Option<f64>,
    /// Clone jitter attenuation factor.
    #[arg(long)]
    jitter_factor: Option<f64>,
    /// Identities held out for testing (0 skips split files).
    #[arg(long)]
    test_identities: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Output directory (defaults under the artifact root).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnrollArgs {
    #[arg(long)]
    identity: String,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<EnrollmentPolicy>,
    /// Labeled corpus manifest to draw enrollment clips from.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Raw WAV files (real-enrollment policy only).
    #[arg(long, num_args = 1..)]
    clips: Vec<PathBuf>,
    /// Enrollment audio budget in seconds.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    /// External base-embedding table replacing the built-in encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training-split manifest (synthetic clips, driver labels).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log CSV (one row per epoch).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<EnrollmentPolicy>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    include_unrelated_negatives: bool,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
}

fn parse_policy(s: &str) -> Result<EnrollmentPolicy, String> {
    match s {
        "real" | "real-enrollment" => Ok(EnrollmentPolicy::RealEnrollment),
        "mixed-driver" => Ok(EnrollmentPolicy::MixedDriver),
        "self-only" | "self-reenactment-only" => Ok(EnrollmentPolicy::SelfReenactmentOnly),
        other => Err(format!(
            "unknown policy {other} (real, mixed-driver, self-only)"
        )),
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "spoof" | "spoof-detection" => Ok(Task::SpoofDetection),
        "fingerprint" | "fingerprinting" => Ok(Task::Fingerprinting),
        other => Err(format!("unknown task {other} (spoof, fingerprint)")),
    }
}

/// Optional config-file overlay; flags beat file values, file beats
/// defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    identities: Option<usize>,
    clips_per_pair: Option<usize>,
    reals_per_identity: Option<usize>,
    duration: Option<f64>,
    formant_sigma: Option<f64>,
    jitter_factor: Option<f64>,
    test_identities: Option<usize>,
    val_fraction: Option<f64>,
    seconds: Option<f64>,
    threshold: Option<f64>,
    epochs: Option<usize>,
    scale: Option<f64>,
    margin: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    encoder_seed: Option<u64>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("config file {}: {e}", p.display())))
            }
        }
    }
}

/// Artifact root: VF_DATA_DIR or ./vf-data.
fn data_dir() -> PathBuf {
    std::env::var_os("VF_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("vf-data"))
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 11,
        Error::Format { .. }
        | Error::UnsupportedChannels { .. }
        | Error::UnsupportedCodec { .. }
        | Error::SchemaVersion { .. }
        | Error::CorruptProfile { .. }
        | Error::Manifest { .. } => 12,
        Error::MissingArtifact(_) | Error::MissingProfile { .. } | Error::MissingEmbedding { .. } => 13,
        Error::InsufficientIdentities { .. }
        | Error::InsufficientClasses { .. }
        | Error::InsufficientAudio(_)
        | Error::EnrollmentEmpty { .. }
        | Error::DegenerateTrials(_) => 14,
        _ => 10,
    }
}

struct Resolved {
    seed: u64,
    json: bool,
    file: ConfigFile,
}

impl Resolved {
    fn encoder(&self, flag: Option<u64>) -> BaseEncoder {
        let seed = flag
            .or(self.file.encoder_seed)
            .unwrap_or(BaseEncoderConfig::default().seed);
        BaseEncoder::new(BaseEncoderConfig {
            seed,
            ..Default::default()
        })
    }
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("vf: error: {e}");
            exit_code(&e)
        }
    });
}

fn run(cli: Cli) -> Result<i32, Error> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(file.threads) {
        // Ignore failure when a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let ctx = Resolved {
        seed: cli.seed.or(file.seed).unwrap_or(42),
        json: cli.json,
        file,
    };
    match cli.command {
        Command::GenCorpus(args) => cmd_gen_corpus(&ctx, args),
        Command::Enroll(args) => cmd_enroll(&ctx, args),
        Command::Detect(args) => cmd_verify(&ctx, args, Task::SpoofDetection),
        Command::Fingerprint(args) => cmd_verify(&ctx, args, Task::Fingerprinting),
        Command::TrainHead(args) => cmd_train_head(&ctx, args),
        Command::Eval(args) => cmd_eval(&ctx, args),
        Command::Report(args) => cmd_report(&ctx, args),
    }
}

fn cmd_gen_corpus(ctx: &Resolved, args: GenCorpusArgs) -> Result<i32, Error> {
    let defaults = GeneratorParams::default();
    let params = GeneratorParams {
        num_identities: args.identities.or(ctx.file.identities).unwrap_or(defaults.num_identities),
        clips_per_pair: args
            .clips_per_pair
            .or(ctx.file.clips_per_pair)
            .unwrap_or(defaults.clips_per_pair),
        reals_per_identity: args
            .reals_per_identity
            .or(ctx.file.reals_per_identity)
            .unwrap_or(defaults.reals_per_identity),
        clip_duration_s: args.duration.or(ctx.file.duration).unwrap_or(defaults.clip_duration_s),
        clone_formant_sigma: args
            .formant_sigma
            .or(ctx.file.formant_sigma)
            .unwrap_or(defaults.clone_formant_sigma),
        clone_jitter_factor: args
            .jitter_factor
            .or(ctx.file.jitter_factor)
            .unwrap_or(defaults.clone_jitter_factor),
    };
    let out = args.out.unwrap_or_else(|| data_dir().join("corpus"));
    let identities = sample_identities(params.num_identities, ctx.seed)?;
    let manifest = generate_corpus(&identities, &params, ctx.seed, &out)?;
    let counts = manifest.counts();
    let n = params.num_identities;

    let n_test = args.test_identities.or(ctx.file.test_identities).unwrap_or(4);
    let val_fraction = args.val_fraction.or(ctx.file.val_fraction).unwrap_or(0.05);
    let mut split_info = serde_json::json!(null);
    if n_test > 0 {
        let splits = make_splits(&manifest, n_test, val_fraction, ctx.seed)?;
        splits.train.save(out.join("manifest.train.ndjson"))?;
        splits.val.save(out.join("manifest.val.ndjson"))?;
        splits.test.save(out.join("manifest.test.ndjson"))?;
        split_info = serde_json::json!({
            "test_identities": splits.spec.test_identities,
            "train": splits.train.entries.len(),
            "val": splits.val.entries.len(),
            "test": splits.test.entries.len(),
        });
    }

    let manifest_bytes = std::fs::read(out.join("manifest.ndjson"))
        .map_err(|e| Error::io(out.join("manifest.ndjson"), e))?;
    let hash = {
        use sha2::Digest;
        let mut h = sha2::Sha256::new();
        h.update(&manifest_bytes);
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    };

    if ctx.json {
        println!(
            "{}",
            serde_json::json!({
                "out": out,
                "entries": manifest.entries.len(),
                "real": counts.real,
                "self_pairs": n,
                "cross_pairs": n * (n - 1),
                "self_clips": counts.self_reenactment,
                "cross_clips": counts.cross_reenactment,
                "manifest_sha256_16": hash,
                "splits": split_info,
            })
        );
    } else {
        println!(
            "corpus at {}: {} real clips, {} self pairs ({} clips), {} cross pairs ({} clips)",
            out.display(),
            counts.real,
            n,
            counts.self_reenactment,
            n * (n - 1),
            counts.cross_reenactment,
        );
        println!("manifest hash {hash}");
        if !split_info.is_null() {
            println!("splits: {split_info}");
        }
    }
    Ok(0)
}

fn load_head(path: Option<&Path>) -> Result<Option<ProjectionHead>, Error> {
    path.map(ProjectionHead::load).transpose()
}

fn load_table(path: Option<&Path>) -> Result<Option<ExternalEmbeddings>, Error> {
    path.map(ExternalEmbeddings::load).transpose()
}

fn cmd_enroll(ctx: &Resolved, args: EnrollArgs) -> Result<i32, Error> {
    let policy = args.policy.unwrap_or(EnrollmentPolicy::RealEnrollment);
    let head = load_head(args.head.as_deref())?;
    let table = load_table(args.embeddings.as_deref())?;
    let encoder = ctx.encoder(args.encoder_seed);
    let source = match &table {
        Some(t) => BaseSource::Table(t),
        None => BaseSource::Encoder(&encoder),
    };
    let seconds = args.seconds.or(ctx.file.seconds).unwrap_or(120.0);

    let profile = if let Some(manifest_path) = &args.manifest {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let table = voiceprint::eval::base_embeddings_for(&manifest, root, &source)?;
        let protocol = ProtocolOptions {
            enroll_seconds: seconds,
            reserve_fraction: 0.25,
            options: EvalOptions::default(),
            seed: ctx.seed,
        };
        let mut profiles = voiceprint::eval::enroll_all(&manifest, &table, policy, head.as_ref(), protocol)?;
        profiles
            .remove(&args.identity)
            .ok_or_else(|| Error::MissingProfile {
                identity: args.identity.clone(),
            })?
    } else {
        if args.clips.is_empty() {
            return Err(Error::EnrollmentEmpty {
                identity: args.identity.clone(),
            });
        }
        let clips = args
            .clips
            .iter()
            .map(|p| Ok((read_wav(p)?, None)))
            .collect::<Result<Vec<_>, Error>>()?;
        enroll(&args.identity, &clips, policy, &source, head.as_ref())?
    };

    let out = args
        .out
        .unwrap_or_else(|| data_dir().join(format!("profile_{}.json", args.identity)));
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_profile(&profile, &out)?;
    if ctx.json {
        println!(
            "{}",
            serde_json::json!({
                "profile": out,
                "identity": profile.identity,
                "policy": profile.policy,
                "clips": profile.clip_ids.len(),
                "seconds": profile.total_enrollment_seconds,
                "head_version": profile.head_version,
            })
        );
    } else {
        println!(
            "enrolled {} under {} from {} clips ({:.1} s) -> {}",
            profile.identity,
            profile.policy,
            profile.clip_ids.len(),
            profile.total_enrollment_seconds,
            out.display()
        );
    }
    Ok(0)
}

fn cmd_verify(ctx: &Resolved, args: VerifyArgs, task: Task) -> Result<i32, Error> {
    let profile = load_profile(&args.profile)?;
    let head = load_head(args.head.as_deref())?;
    let table = load_table(args.embeddings.as_deref())?;
    let encoder = ctx.encoder(args.encoder_seed);
    let source = match &table {
        Some(t) => BaseSource::Table(t),
        None => BaseSource::Encoder(&encoder),
    };
    let clip = read_wav(&args.clip)?;
    let threshold = args.threshold.or(ctx.file.threshold).unwrap_or(0.5);
    let s = score(&profile, &clip, &source, head.as_ref())?;
    let verdict = decide(s, threshold, task);
    if ctx.json {
        println!("{}", serde_json::to_string(&verdict).unwrap());
    } else {
        println!(
            "score {:.6} threshold {:.6} -> {}",
            verdict.score,
            verdict.threshold,
            if verdict.decision {
                "match"
            } else {
                verdict.non_match_meaning()
            }
        );
    }
    Ok(if verdict.decision { 0 } else { 3 })
}

fn cmd_train_head(ctx: &Resolved, args: TrainArgs) -> Result<i32, Error> {
    let manifest = Manifest::load(&args.manifest)?;
    let root = args.manifest.parent().unwrap_or(Path::new("."));
    let table = load_table(args.embeddings.as_deref())?;
    let encoder = ctx.encoder(args.encoder_seed);
    let source = match &table {
        Some(t) => BaseSource::Table(t),
        None => BaseSource::Encoder(&encoder),
    };
    let defaults = AamConfig::default();
    let cfg = AamConfig {
        scale_s: args.scale.or(ctx.file.scale).unwrap_or(defaults.scale_s),
        margin_m: args.margin.or(ctx.file.margin).unwrap_or(defaults.margin_m),
        num_classes: 0,
        learning_rate: args
            .learning_rate
            .or(ctx.file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        epochs: args.epochs.or(ctx.file.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(ctx.file.batch_size)
            .unwrap_or(defaults.batch_size),
        seed: ctx.seed,
    };
    let outcome = train_head(&manifest, root, &cfg, &source)?;
    let out = args.out.unwrap_or_else(|| data_dir().join("head.json"));
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    outcome.head.save(&out)?;
    if let Some(log) = &args.log {
        outcome.write_log(log)?;
    }
    if ctx.json {
        println!(
            "{}",
            serde_json::json!({
                "head": out,
                "version": outcome.head.version,
                "classes": outcome.classes.len(),
                "first_epoch_loss": outcome.epochs.first().map(|e| e.mean_loss),
                "last_epoch_loss": outcome.epochs.last().map(|e| e.mean_loss),
            })
        );
    } else {
        for e in &outcome.epochs {
            println!("epoch {:2}: mean loss {:.6} ({:.1} s)", e.epoch, e.mean_loss, e.wall_seconds);
        }
        println!("head {} -> {}", outcome.head.version, out.display());
    }
    Ok(0)
}

fn cmd_eval(ctx: &Resolved, args: EvalArgs) -> Result<i32, Error> {
    let manifest = Manifest::load(&args.manifest)?;
    let root = args.manifest.parent().unwrap_or(Path::new("."));
    let head = load_head(args.head.as_deref())?;
    let table = load_table(args.embeddings.as_deref())?;
    let encoder = ctx.encoder(args.encoder_seed);
    let source = match &table {
        Some(t) => BaseSource::Table(t),
        None => BaseSource::Encoder(&encoder),
    };
    let policy = args.policy.unwrap_or(match args.task {
        Task::SpoofDetection => EnrollmentPolicy::RealEnrollment,
        Task::Fingerprinting => EnrollmentPolicy::MixedDriver,
    });
    let protocol = ProtocolOptions {
        enroll_seconds: args.seconds.or(ctx.file.seconds).unwrap_or(120.0),
        reserve_fraction: 0.25,
        options: EvalOptions {
            include_unrelated_negatives: args.include_unrelated_negatives,
        },
        seed: ctx.seed,
    };
    let (results, profiles) = run_protocol(
        &manifest,
        root,
        args.task,
        policy,
        &source,
        head.as_ref(),
        protocol,
    )?;
    let out = args.out.unwrap_or_else(|| data_dir().join("report"));
    let echo = serde_json::json!({
        "seed": ctx.seed,
        "task": args.task,
        "policy": policy,
        "manifest": args.manifest,
        "encoder": encoder.config(),
        "external_embeddings": args.embeddings,
        "head_version": head.as_ref().map(|h| h.version.clone()),
        "protocol": protocol,
        "profiles": profiles.len(),
    });
    let report = emit_report(&results, echo, &out)?;
    if ctx.json {
        println!(
            "{}",
            serde_json::json!({
                "report": out.join("report.json"),
                "mean_auc": report.mean_auc,
                "mean_eer": report.mean_eer,
                "pooled_auc": report.pooled_auc,
                "pooled_eer_threshold": report.pooled_eer_threshold,
            })
        );
    } else {
        println!(
            "{}: mean AUC {:.4}, mean EER {:.4}, pooled AUC {:.4}",
            args.task,
            report.mean_auc,
            report.mean_eer,
            report.pooled_auc.unwrap_or(f64::NAN)
        );
        println!("report -> {}", out.join("report.json").display());
    }
    Ok(0)
}

fn cmd_report(ctx: &Resolved, args: ReportArgs) -> Result<i32, Error> {
    let report = EvalReport::load(&args.report)?;
    if ctx.json {
        println!("{}", serde_json::to_string(&report).unwrap());
    } else {
        println!("task: {}", report.task);
        println!(
            "mean AUC {:.4}  mean EER {:.4}  pooled AUC {:.4}",
            report.mean_auc,
            report.mean_eer,
            report.pooled_auc.unwrap_or(f64::NAN)
        );
        for r in &report.per_identity {
            match (r.auc, &r.skipped) {
                (Some(auc), _) => println!(
                    "  {}: AUC {:.4} EER {:.4} ({} pos / {} neg)",
                    r.identity,
                    auc,
                    r.eer.unwrap_or(f64::NAN),
                    r.n_pos,
                    r.n_neg
                ),
                (None, Some(reason)) => println!("  {}: skipped ({reason})", r.identity),
                (None, None) => {}
            }
        }
    }
    Ok(0)
}
