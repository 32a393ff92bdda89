use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use asafeplace_core::biofeedback::{frame_stream, MapConfig};
use asafeplace_core::metrics::{phase_metrics, MetricsConfig, Window};
use asafeplace_core::personalize::{
    extract_profile, fill_template, parse_template, validate_snippet, FillOptions, MarkerClient,
    MockGenerationClient, PlaceholderKind, SafePlaceProfile, Snippet, DEFAULT_TEMPLATE,
};
use asafeplace_core::session::cohort::{synthetic_cohort, synthetic_physio};
use asafeplace_core::session::{
    export_dataset, run_session, NullSink, PhasePlan, RecordStore, RunConfig, SessionContext,
    SessionRecord,
};
use asafeplace_core::signal::{read_replay_file, write_replay, ReplayHeader, VecSource};
use asafeplace_core::stats::fixture::generate_study;
use asafeplace_core::stats::study::{analyze_measures, plot_csv, render_text};
use asafeplace_core::stats::{Measure, StudyConfig, StudyTable};
use asafeplace_gateway::{Server, ServiceConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "asafeplace",
    version,
    about = "Biofeedback relaxation-training engine"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic baseline/stress/relax recording as a replay file.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Summarize a replay file.
    Inspect { replay: PathBuf },
    /// SDNN and respiration rate over a window of a replay.
    Metrics {
        replay: PathBuf,
        #[arg(long)]
        start_ms: Option<u64>,
        #[arg(long)]
        end_ms: Option<u64>,
    },
    /// Biofeedback frames for a replay, one wire message per line.
    Frames {
        replay: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
    },
    /// Extract profiles and fill guidance scripts.
    #[command(subcommand)]
    Personalize(PersonalizeCmd),
    /// Run sessions and work with stored records.
    #[command(subcommand)]
    Session(SessionCmd),
    /// Run the study analysis on an exported table.
    Analyze {
        #[arg(long)]
        table: Option<PathBuf>,
        /// Analyze a generated table with this seed instead of a file.
        #[arg(long, conflicts_with = "table")]
        fixture_seed: Option<u64>,
        /// SDNN, RES, RRS or STAI; all when omitted.
        #[arg(long)]
        measure: Vec<Measure>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        json: bool,
        /// Directory for per-measure change-score summaries.
        #[arg(long)]
        emit_plots: Option<PathBuf>,
    },
    /// Start the HTTP and websocket service.
    Serve {
        /// JSON service configuration; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Static bearer token; also read from ASAFEPLACE_TOKEN.
        #[arg(long, env = "ASAFEPLACE_TOKEN")]
        token: Option<String>,
    },
}

#[derive(Args, Clone, Copy)]
struct PlanArgs {
    #[arg(long, default_value_t = 300.0)]
    baseline_s: f64,
    #[arg(long, default_value_t = 600.0)]
    stress_s: f64,
    #[arg(long, default_value_t = 600.0)]
    relax_s: f64,
}

impl PlanArgs {
    fn plan(self) -> Result<PhasePlan> {
        let p = PhasePlan {
            baseline_s: self.baseline_s,
            stress_s: self.stress_s,
            relax_s: self.relax_s,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum PersonalizeCmd {
    /// Extract a safe-place profile from a marked-up interview transcript.
    Extract { transcript: PathBuf },
    /// Fill the guidance template from a profile.
    Fill {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Mark the script approved.
        #[arg(long)]
        approve: bool,
    },
    /// Check a template and, optionally, a JSON list of snippets.
    Validate {
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        snippets: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SessionCmd {
    /// Run one session from a context file and a replay.
    Run {
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        replay: PathBuf,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Check stored records.
    Validate { records: Vec<PathBuf> },
    /// Export the analysis table from a records directory.
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded synthetic cohort and store its records.
    Cohort {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 13)]
        n_per_cell: usize,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        records: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json_line<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    emit(None, &text)
}

fn main() -> Result<()> {
    match run() {
        // output piped into `head` and the like
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            Ok(())
        }
        other => other,
    }
}

fn run() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Synth { seed, plan, out } => {
            let rec = synthetic_physio(&plan.plan()?, seed)?;
            let text = write_replay(Some(&ReplayHeader::default()), &rec.samples);
            emit(Some(&out), &text)?;
            eprintln!("wrote {} samples to {}", rec.samples.len(), out.display());
        }
        Cmd::Inspect { replay } => {
            let r = read_replay_file(&replay)?;
            let span = match (r.samples.first(), r.samples.last()) {
                (Some(a), Some(b)) => b.t - a.t,
                _ => 0,
            };
            json_line(&serde_json::json!({
                "samples": r.samples.len(),
                "span_ms": span,
                "header": r.header,
                "restamped": r.warnings.iter().map(ToString::to_string).collect::<Vec<_>>(),
            }))?;
        }
        Cmd::Metrics {
            replay,
            start_ms,
            end_ms,
        } => {
            let r = read_replay_file(&replay)?;
            let (Some(first), Some(last)) = (r.samples.first(), r.samples.last()) else {
                bail!("{} has no samples", replay.display());
            };
            let window = Window::new(start_ms.unwrap_or(first.t), end_ms.unwrap_or(last.t + 1))?;
            let rep = phase_metrics(&r.samples, window, &MetricsConfig::default())?;
            json_line(&serde_json::json!({
                "metrics": rep.metrics,
                "warnings": rep.warnings,
            }))?;
        }
        Cmd::Frames { replay, fps } => {
            let r = read_replay_file(&replay)?;
            let cfg = MapConfig {
                frame_rate_hz: fps,
                ..MapConfig::default()
            };
            let mut out = std::io::BufWriter::new(std::io::stdout().lock());
            for f in frame_stream(&r.samples, &cfg)? {
                writeln!(out, "{}", f.to_wire())?;
            }
        }
        Cmd::Personalize(cmd) => personalize(cmd)?,
        Cmd::Session(cmd) => session(cmd)?,
        Cmd::Analyze {
            table,
            fixture_seed,
            measure,
            alpha,
            json,
            emit_plots,
        } => {
            let table = match (table, fixture_seed) {
                (Some(p), _) => StudyTable::parse(&read(&p)?)?,
                (None, Some(seed)) => generate_study(seed, 13),
                (None, None) => bail!("give --table or --fixture-seed"),
            };
            let measures = if measure.is_empty() {
                Measure::ALL.to_vec()
            } else {
                measure
            };
            let report = analyze_measures(&table, &StudyConfig { alpha }, &measures)?;
            let text = if json {
                report.to_json()
            } else {
                render_text(&report)
            };
            emit(None, &text)?;
            if let Some(dir) = emit_plots {
                fs::create_dir_all(&dir)?;
                for m in &measures {
                    let path = dir.join(format!("{}_change.csv", m.name().to_lowercase()));
                    fs::write(&path, plot_csv(&table, *m))?;
                }
                eprintln!("plot tables in {}", dir.display());
            }
        }
        Cmd::Serve {
            config,
            port,
            host,
            records,
            fixtures,
            token,
        } => {
            let mut cfg: ServiceConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => ServiceConfig::default(),
            };
            if let Some(p) = port {
                cfg.http_port = p;
            }
            if let Some(h) = host {
                cfg.host = h;
            }
            if let Some(r) = records {
                cfg.records_dir = r;
            }
            if let Some(f) = fixtures {
                cfg.fixtures_dir = f;
            }
            if token.is_some() {
                cfg.auth_token = token;
            }
            serve(cfg)?;
        }
    }
    Ok(())
}

fn personalize(cmd: PersonalizeCmd) -> Result<()> {
    match cmd {
        PersonalizeCmd::Extract { transcript } => {
            let profile = extract_profile(&read(&transcript)?, &MarkerClient)?;
            json_line(&profile)?;
        }
        PersonalizeCmd::Fill {
            profile,
            template,
            approve,
        } => {
            let profile: SafePlaceProfile = serde_json::from_str(&read(&profile)?)?;
            let text = match template {
                Some(p) => read(&p)?,
                None => DEFAULT_TEMPLATE.to_string(),
            };
            let template = parse_template(&text)?;
            let snippets = MockGenerationClient::snippets_for(&profile);
            let mut script = fill_template(
                &template,
                &profile.place_name,
                &snippets,
                &FillOptions::default(),
            )?;
            script.profile_id = Some(profile.id());
            if approve {
                script.approve();
            }
            for n in &script.notes {
                eprintln!("note: {n}");
            }
            json_line(&script)?;
        }
        PersonalizeCmd::Validate { template, snippets } => {
            let text = match template {
                Some(p) => read(&p)?,
                None => DEFAULT_TEMPLATE.to_string(),
            };
            let t = parse_template(&text)?;
            println!(
                "template {}: {} placeholders",
                t.id(),
                t.placeholders().count()
            );
            println!("  name slots: {}", t.count(PlaceholderKind::Name));
            let mut bad = 0;
            if let Some(p) = snippets {
                let list: Vec<Snippet> = serde_json::from_str(&read(&p)?)?;
                for s in &list {
                    let v = validate_snippet(s);
                    if !v.is_empty() {
                        bad += 1;
                        println!("  {}: {v:?}", s.id);
                    }
                }
                println!("{} snippets, {bad} with violations", list.len());
            }
            if bad > 0 {
                bail!("{bad} snippet(s) failed validation");
            }
        }
    }
    Ok(())
}

fn session(cmd: SessionCmd) -> Result<()> {
    match cmd {
        SessionCmd::Run {
            context,
            replay,
            records,
        } => {
            let ctx: SessionContext = serde_json::from_str(&read(&context)?)
                .with_context(|| format!("parsing {}", context.display()))?;
            let samples = read_replay_file(&replay)?.samples;
            let store = records.map(RecordStore::open).transpose()?;
            let rec = run_session(
                ctx,
                &mut VecSource::new(samples),
                &RunConfig::default(),
                &mut NullSink,
                store.as_ref(),
            )?;
            if let Some(s) = &store {
                eprintln!("saved {}", s.path_of(&rec.id).display());
            }
            print_summary(&rec);
        }
        SessionCmd::Validate { records } => {
            let mut failed = 0;
            for p in &records {
                let rec = SessionRecord::from_json(&read(p)?)?;
                let v = rec.validate();
                if v.is_empty() {
                    println!("{}: valid", rec.id);
                } else {
                    failed += 1;
                    println!("{}: invalid", rec.id);
                    for line in v {
                        println!("  {line}");
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} invalid record(s)");
            }
        }
        SessionCmd::Export { records, out } => {
            let store = RecordStore::open(&records)?;
            let (recs, warnings) = store.list()?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let ex = export_dataset(&recs)?;
            if let Some(w) = ex.warning() {
                eprintln!("warning: {w}");
            }
            emit(out.as_deref(), &ex.csv)?;
        }
        SessionCmd::Cohort {
            seed,
            n_per_cell,
            plan,
            records,
        } => {
            let store = RecordStore::open(&records)?;
            let recs = synthetic_cohort(seed, n_per_cell, plan.plan()?, &RunConfig::default())?;
            for r in &recs {
                store.save(r)?;
            }
            let valid = recs.iter().filter(|r| r.is_valid()).count();
            println!(
                "{} records ({valid} valid) in {}",
                recs.len(),
                records.display()
            );
        }
    }
    Ok(())
}

fn print_summary(rec: &SessionRecord) {
    println!("{} {} {:?}", rec.id, rec.condition, rec.status);
    for (p, m) in &rec.metrics {
        println!(
            "  {p}: SDNN {:.1} ms, respiration {:.2} cpm, {} beats",
            m.sdnn_ms, m.resp_rate_cpm, m.n_beats
        );
    }
    if rec.frame_count() > 0 {
        println!("  {} biofeedback frames", rec.frame_count());
    }
    for v in rec.validate() {
        println!("  invalid: {v}");
    }
}

#[tokio::main]
async fn serve(cfg: ServiceConfig) -> Result<()> {
    let server = Server::spawn(cfg).await?;
    eprintln!("listening on http://{}", server.addr);
    server
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
