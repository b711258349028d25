use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polescan_client::local::{self, EvalOptions};
use polescan_client::{ServiceClient, DEFAULT_SERVER};
use polescan_core::api::{IngestRequest, PromoteRequest, RouteRequest, VerdictRequest};
use polescan_core::dataset::Provenance;
use polescan_core::experiments::QcBounds;
use polescan_core::metrics::{EvalMode, DEFAULT_CONFIDENCE, DEFAULT_MAX_PER_IMAGE};
use polescan_core::tracker::{GeoPoint, LifecycleState, Verdict, WatchOutcome};
use serde::Serialize;

/// Crossarm inspection pipeline tool.
#[derive(Debug, Parser)]
#[command(name = "polescan", version)]
struct Cli {
    /// Service base URL for tracker commands.
    #[arg(long, global = true, env = "POLESCAN_SERVER", default_value = DEFAULT_SERVER)]
    server: String,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a COCO results file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
        #[arg(long, default_value = "box")]
        mode: EvalMode,
        #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
        conf: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_PER_IMAGE)]
        max_per_image: usize,
        /// IoU threshold of the health confusion matrix.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Report file; the F1 table is written next to it as `<stem>.f1.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled synthetic batch.
    Generate {
        /// TOML file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of images, overriding the config.
        #[arg(long)]
        count: Option<u64>,
        /// Image file-name prefix, overriding the config.
        #[arg(long)]
        name: Option<String>,
    },
    /// Composition and balance report for a manifest.
    Qc {
        #[arg(long)]
        manifest: PathBuf,
        /// COCO files holding the manifest's images; repeatable.
        #[arg(long)]
        annotations: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        min_defective: f64,
        #[arg(long, default_value_t = 0.8)]
        max_defective: f64,
    },
    /// Run experiment series and compare results.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Ingest images through the service.
    Ingest(IngestArgs),
    /// Route every Incoming image to labeling or batch prediction.
    Route {
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value = "")]
        salt: String,
    },
    /// Inspect tracked images through the service.
    #[command(subcommand)]
    Track(TrackCmd),
    /// Images awaiting verification.
    Queue,
    /// Submit a verification verdict.
    Verify {
        image_id: String,
        #[arg(long)]
        verdict: VerdictArg,
        #[arg(long)]
        reviewer: String,
        #[arg(long, default_value = "")]
        notes: String,
    },
    /// Move staged images to labeling.
    Promote {
        image_ids: Vec<String>,
        /// Promote everything currently in Staging.
        #[arg(long, conflicts_with = "image_ids")]
        all: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ExperimentCmd {
    /// Run an experiment series.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this experiment.
        #[arg(long)]
        only: Option<String>,
    },
    /// Compare persisted results against a baseline.
    Compare {
        #[arg(long, default_value = "Baseline")]
        baseline: String,
        #[arg(long, default_value = "results")]
        results: PathBuf,
        /// CSV output; defaults to `<results>/comparison.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Blob-store prefix to poll.
    #[arg(long, conflicts_with = "uris")]
    watch: Option<String>,
    #[arg(long, default_value_t = 2000)]
    interval_ms: u64,
    /// Poll once and exit.
    #[arg(long)]
    once: bool,
    /// Blob keys to ingest.
    uris: Vec<String>,
    #[arg(long, default_value = "real")]
    provenance: ProvenanceArg,
    #[arg(long, requires = "lon")]
    lat: Option<f64>,
    #[arg(long, requires = "lat")]
    lon: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum TrackCmd {
    /// An image's record and transition history.
    Show { image_id: String },
    /// Images per lifecycle state and verification accuracy.
    Census,
    /// Records, optionally in one state.
    List {
        #[arg(long)]
        state: Option<LifecycleState>,
        #[arg(long, default_value_t = 1)]
        page: usize,
        #[arg(long, default_value_t = 50)]
        page_size: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerdictArg {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProvenanceArg {
    Real,
    Synthetic,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn print_outcome(o: &WatchOutcome, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(o)?);
        return Ok(());
    }
    match o {
        WatchOutcome::Ingested { uri, image_id } => println!("ingested {uri} as {image_id}"),
        WatchOutcome::Duplicate { uri, existing } => println!("duplicate {uri} of {existing}"),
        WatchOutcome::Failed { uri, error } => println!("failed {uri}: {error}"),
    }
    Ok(())
}

fn local(command: Command, json: bool) -> Result<()> {
    match command {
        Command::Eval {
            gt,
            det,
            mode,
            conf,
            max_per_image,
            iou,
            out,
        } => {
            let opts = EvalOptions {
                mode,
                confidence: conf,
                max_per_image,
                iou_threshold: iou,
            };
            let output = local::eval(&gt, &det, opts)?;
            if let Some(out) = &out {
                let csv = local::write_eval(out, &output)?;
                eprintln!("wrote {} and {}", out.display(), csv.display());
            }
            if json {
                print_json(&output)
            } else {
                print!("{}", output.to_text());
                Ok(())
            }
        }
        Command::Generate {
            config,
            out,
            seed,
            count,
            name,
        } => {
            let mut cfg = local::load_gen_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(n) = count {
                cfg.n_images = n;
            }
            if let Some(n) = name {
                cfg.name = n;
            }
            let batch = local::generate(&cfg, &out)?;
            let c = &batch.manifest.composition;
            println!(
                "generated {} images ({} healthy, {} defective, {} instances) in {}",
                batch.annotations.images.len(),
                c.healthy_count,
                c.defective_count,
                batch.annotations.annotations.len(),
                out.display()
            );
            Ok(())
        }
        Command::Qc {
            manifest,
            annotations,
            min_defective,
            max_defective,
        } => {
            let bounds = QcBounds {
                min_defective_fraction: min_defective,
                max_defective_fraction: max_defective,
            };
            let report = local::qc(&manifest, &annotations, bounds)?;
            if json {
                print_json(&report)
            } else {
                print!("{}", report.to_text());
                Ok(())
            }
        }
        Command::Experiment(ExperimentCmd::Run { config, only }) => {
            let series = local::load_series(&config)?;
            for r in local::run_series(&series, only.as_deref())? {
                let lift = r.lift_vs_baseline.map_or("N/A".to_string(), |l| format!("{l:.2}%"));
                println!(
                    "{}: real {} synthetic {} mAP {:.2} (mask {:.2}) lift {lift}",
                    r.name,
                    r.config.real_train,
                    r.config.synthetic_train,
                    100.0 * r.map_value,
                    100.0 * r.eval_mask.map_50_95
                );
            }
            Ok(())
        }
        Command::Experiment(ExperimentCmd::Compare { baseline, results, csv }) => {
            let table = local::compare(&results, &baseline)?;
            let csv = csv.unwrap_or_else(|| results.join("comparison.csv"));
            std::fs::write(&csv, table.to_csv()).with_context(|| format!("cannot write {}", csv.display()))?;
            if json {
                print_json(&table)
            } else {
                print!("{}", table.to_text());
                eprintln!("wrote {}", csv.display());
                Ok(())
            }
        }
        _ => unreachable!("service commands are dispatched separately"),
    }
}

async fn remote(command: Command, client: ServiceClient, json: bool) -> Result<()> {
    match command {
        Command::Ingest(args) => {
            if let Some(prefix) = args.watch {
                loop {
                    for o in client.scan(&prefix).await?.outcomes {
                        print_outcome(&o, json)?;
                    }
                    if args.once {
                        return Ok(());
                    }
                    tokio::select! {
                        _ = tokio::time::sleep(Duration::from_millis(args.interval_ms)) => {}
                        _ = tokio::signal::ctrl_c() => return Ok(()),
                    }
                }
            }
            let provenance = match args.provenance {
                ProvenanceArg::Real => Provenance::Real,
                ProvenanceArg::Synthetic => Provenance::Synthetic,
            };
            let geo = args.lat.zip(args.lon).map(|(lat, lon)| GeoPoint { lat, lon });
            for uri in args.uris {
                let req = IngestRequest { uri, provenance: Some(provenance), geo };
                let r = client.ingest(&req, None).await?;
                if json {
                    print_json(&r)?;
                } else {
                    println!("ingested {} as {}", r.uri, r.image_id);
                }
            }
            Ok(())
        }
        Command::Route { fraction, salt } => {
            let req = RouteRequest {
                labeling_fraction: fraction,
                salt,
                override_target: None,
                image_ids: None,
            };
            let r = client.route(&req, None).await?;
            if json {
                return print_json(&r);
            }
            let to_labeling = r.events.iter().filter(|e| e.to == LifecycleState::Labeling).count();
            println!(
                "routed {}: {} to Labeling, {} to BatchPrediction, {} skipped",
                r.events.len(),
                to_labeling,
                r.events.len() - to_labeling,
                r.skipped.len()
            );
            Ok(())
        }
        Command::Track(TrackCmd::Show { image_id }) => {
            let detail = client.image(&image_id).await?;
            let history = client.history(&image_id).await?;
            if json {
                return print_json(&serde_json::json!({"detail": detail, "history": history}));
            }
            let r = &detail.record;
            println!("{} #{} {} ({}x{}) {:?}", r.image_id, r.ordinal, r.uri, r.width, r.height, r.provenance);
            println!("state {} version {}", r.state, r.state_version);
            for e in &history {
                println!("  v{} {} -> {} at {} by {} ({})", e.version_after, e.from, e.to, e.at, e.actor, e.reason);
            }
            Ok(())
        }
        Command::Track(TrackCmd::Census) => {
            let s = client.metrics_summary().await?;
            if json {
                return print_json(&s);
            }
            for (state, n) in &s.census {
                println!("{:<16} {n:>8}", state.as_str());
            }
            println!("{:<16} {:>8}", "total", s.total_images);
            let acc = s.accuracy.map_or("n/a".to_string(), |a| format!("{:.2}%", 100.0 * a));
            println!("verification accuracy {acc} ({} of {})", s.correct, s.verdicts);
            Ok(())
        }
        Command::Track(TrackCmd::List { state, page, page_size }) => {
            let p = client.list_images(state, Some(page), Some(page_size)).await?;
            if json {
                return print_json(&p);
            }
            for r in &p.items {
                println!("{}  {:<16} v{}  {}", r.image_id, r.state.as_str(), r.state_version, r.uri);
            }
            println!("page {} of {} records", p.page, p.total);
            Ok(())
        }
        Command::Queue => {
            let q = client.queue().await?;
            if json {
                return print_json(&q);
            }
            for item in &q {
                let s = &item.detection_summary;
                let range = match (s.min_confidence, s.max_confidence) {
                    (Some(lo), Some(hi)) => format!("{lo:.2}-{hi:.2}"),
                    _ => "-".into(),
                };
                println!("{}  {} detections  {range}  {}", item.image_id, s.count, s.categories.join(","));
            }
            Ok(())
        }
        Command::Verify {
            image_id,
            verdict,
            reviewer,
            notes,
        } => {
            let req = VerdictRequest {
                verdict: match verdict {
                    VerdictArg::Correct => Verdict::Correct,
                    VerdictArg::Incorrect => Verdict::Incorrect,
                },
                reviewer,
                notes,
                expected_version: None,
            };
            let r = client.submit_verdict(&image_id, &req, None).await?;
            if json {
                return print_json(&r);
            }
            println!("{} -> {}", r.event.image_id, r.event.to);
            Ok(())
        }
        Command::Promote { image_ids, all } => {
            let ids = if all {
                client
                    .list_images(Some(LifecycleState::Staging), Some(1), Some(polescan_core::api::MAX_PAGE_SIZE))
                    .await?
                    .items
                    .into_iter()
                    .map(|r| r.image_id)
                    .collect()
            } else {
                image_ids
            };
            let r = client.promote(&PromoteRequest { image_ids: ids, actor: None }, None).await?;
            if json {
                return print_json(&r);
            }
            println!("promoted {} image(s) to Labeling", r.events.len());
            Ok(())
        }
        other => local(other, json),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        c @ (Command::Eval { .. }
        | Command::Generate { .. }
        | Command::Qc { .. }
        | Command::Experiment(_)) => local(c, cli.json),
        c => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(remote(c, ServiceClient::new(cli.server), cli.json))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
