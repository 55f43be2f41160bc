use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use retarget_core::calibration::{load_profile, save_profile, CalibrationError};
use retarget_core::depth::dataset::import_dataset;
use retarget_core::pose_map::tps_eval;
use retarget_core::skeleton::LengthUnit;
use retarget_service::analysis::{analyze, load_trajectory};
use retarget_service::bridge::WsBridge;
use retarget_service::calibrator::{fit_session_dir, Calibrator, SessionDirError};
use retarget_service::config::ServiceConfig;
use retarget_service::messages::{
    standard_topics, CalibrationCommand, CalibrationEvent, MapMode, Payload, PipelineStatus, CALIBRATION_COMMAND,
    CALIBRATION_EVENT, GRIPPER_POSE, PIPELINE_STATUS,
};
use retarget_service::pipeline::Pipeline;
use retarget_service::replay::{load_replay_log, replay, Pacing};
use retarget_service::runtime::{replay_local, Service};
use retarget_service::transport::{Client, ClientError, TcpServer};
use retarget_service::ui::UiServer;
use retarget_service::Broker;

#[derive(Parser)]
#[command(name = "retarget", version, about = "Human-to-robot arm retargeting runtime")]
struct Cli {
    /// Config file (falls back to $RETARGET_CONFIG, then built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline with the TCP server and the browser bridge.
    Serve {
        #[arg(long)]
        mode: Option<MapMode>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// TCP address for framed envelopes.
        #[arg(long)]
        listen: Option<String>,
        /// WebSocket bridge address.
        #[arg(long)]
        ws: Option<String>,
        /// Serve the UI bundle from DIR (default ui/dist).
        #[arg(long, value_name = "DIR", num_args = 0..=1, default_missing_value = "ui/dist")]
        ui: Option<PathBuf>,
        #[arg(long)]
        ui_listen: Option<String>,
    },
    /// Run a calibration session on a running server and report its outcome.
    Calibrate {
        #[arg(long)]
        user: String,
        /// JSON file with 16 robot-frame targets (`[[x,y,z], ...]` or `{"targets": ...}`).
        #[arg(long)]
        keyposes: Option<PathBuf>,
        #[arg(long)]
        connect: Option<String>,
        /// Send capture commands instead of relying on the server's auto-capture.
        #[arg(long)]
        manual_capture: bool,
    },
    /// Fit a profile from a recorded calibration session directory.
    Fit {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a profile file and print its quality report.
    ValidateProfile { profile: PathBuf },
    /// Publish a skeleton log onto /skeleton.
    Replay {
        log: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        rate: f64,
        #[arg(long)]
        as_fast_as_possible: bool,
        /// Server to publish to (default: the configured listen address).
        #[arg(long, conflicts_with = "local")]
        connect: Option<String>,
        /// Run an in-process pipeline instead and write its /gripper/pose messages to --out.
        #[arg(long, requires = "out")]
        local: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input coordinates are millimeters.
        #[arg(long)]
        millimeters: bool,
    },
    /// Record topics of a running server to a log, one envelope per line.
    Record {
        #[arg(long, value_delimiter = ',', required = true)]
        topics: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        connect: Option<String>,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Stop once the pipeline reports the end of a replay.
        #[arg(long)]
        until_end_of_stream: bool,
    },
    /// Dataset tools.
    Preprocess {
        #[command(subcommand)]
        command: PreprocessCommand,
    },
    /// Count atomic movements and measure smoothness of a trajectory.
    Analyze { log: PathBuf },
}

#[derive(Subcommand)]
enum PreprocessCommand {
    /// Convert a foreign hand-image dataset into the episode layout.
    Import {
        dataset: PathBuf,
        /// Destination (default: `<dataset>-converted`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let (cfg, path) = ServiceConfig::load_or_default(cli.config.as_deref())?;
    if let Some(p) = &path {
        log::debug!("config from {}", p.display());
    }
    match cli.command {
        Command::Serve {
            mode,
            profile,
            listen,
            ws,
            ui,
            ui_listen,
        } => serve(cfg, mode, profile, listen, ws, ui, ui_listen),
        Command::Calibrate {
            user,
            keyposes,
            connect,
            manual_capture,
        } => calibrate(&cfg, user, keyposes, connect, manual_capture),
        Command::Fit { session, out } => fit(&session, &out),
        Command::ValidateProfile { profile } => validate(&profile),
        Command::Replay {
            log,
            rate,
            as_fast_as_possible,
            connect,
            local,
            out,
            millimeters,
        } => {
            let unit = if millimeters { LengthUnit::Millimeters } else { LengthUnit::Meters };
            let records = load_replay_log(&log, unit)?;
            let pacing = if as_fast_as_possible { Pacing::AsFastAsPossible } else { Pacing::Rate(rate) };
            if local {
                let pipeline = Pipeline::new(cfg.pipeline())?;
                let calibrator = Calibrator::new(cfg.calibrator(), cfg.workspace);
                let (msgs, stats) = replay_local(pipeline, calibrator, &records, pacing, &[GRIPPER_POSE])?;
                let out = out.expect("required by clap");
                let mut w = BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?);
                for m in &msgs {
                    writeln!(w, "{}", m.to_json())?;
                }
                w.flush()?;
                println!(
                    "replayed {} records, {} poses, mean step {:.3} ms, max {:.3} ms",
                    records.len(),
                    msgs.len(),
                    stats.mean().as_secs_f64() * 1e3,
                    stats.max.as_secs_f64() * 1e3
                );
            } else {
                let mut client = Client::connect(connect.as_deref().unwrap_or(&cfg.listen))?;
                let report = replay(&records, pacing, &mut client)?;
                println!("replayed {} records in {:.3} s", report.records, report.elapsed.as_secs_f64());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Record {
            topics,
            out,
            connect,
            duration,
            until_end_of_stream,
        } => record(&cfg, topics, &out, connect, duration, until_end_of_stream),
        Command::Preprocess {
            command: PreprocessCommand::Import { dataset, out },
        } => {
            let out = out.unwrap_or_else(|| {
                let mut name = dataset.file_name().unwrap_or_default().to_os_string();
                name.push("-converted");
                dataset.with_file_name(name)
            });
            let s = import_dataset(&dataset, &out)?;
            println!("imported {} episodes, {} images into {}", s.episodes, s.images, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { log } => {
            let t = load_trajectory(&log)?;
            let report = analyze(&t, cfg.segmentation.v_stop, cfg.segmentation.dwell)?;
            println!("samples: {}", report.samples);
            println!("atomic movements: {}", report.atomic_movements);
            for m in &report.movements {
                println!("  {}", serde_json::to_string(m)?);
            }
            match report.smoothness {
                Some(s) => println!("smoothness (rms jerk): {s:.6} m/s^3"),
                None => println!("smoothness: n/a (fewer than 4 samples)"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn serve(
    mut cfg: ServiceConfig,
    mode: Option<MapMode>,
    profile: Option<PathBuf>,
    listen: Option<String>,
    ws: Option<String>,
    ui: Option<PathBuf>,
    ui_listen: Option<String>,
) -> Result<ExitCode> {
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if profile.is_some() {
        cfg.profile = profile;
    }
    let listen = listen.unwrap_or_else(|| cfg.listen.clone());
    let ws = ws.unwrap_or_else(|| cfg.ws_listen.clone());
    let ui_listen = ui_listen.unwrap_or_else(|| cfg.ui_listen.clone());

    let broker = Broker::new();
    let pipeline = Pipeline::new(cfg.pipeline()).context("pipeline configuration")?;
    let calibrator = Calibrator::new(cfg.calibrator(), cfg.workspace);
    let service = Service::start(&broker, pipeline, calibrator)?;
    let tcp = TcpServer::bind(&listen, broker.clone(), cfg.queue()).with_context(|| format!("listen on {listen}"))?;
    let bridge = WsBridge::bind(&ws, broker.clone(), cfg.queue()).with_context(|| format!("listen on {ws}"))?;
    log::info!("mode {}, tcp {}, websocket {}", cfg.mode, tcp.local_addr(), bridge.local_addr());
    let _ui = match ui {
        Some(dir) => {
            let srv = UiServer::bind(&ui_listen, dir, Some(bridge.local_addr()))?;
            log::info!("UI at http://{}", srv.local_addr());
            Some(srv)
        }
        None => None,
    };
    service.join();
    Ok(ExitCode::SUCCESS)
}

fn read_keyposes(path: &Path) -> Result<Vec<[f64; 3]>> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum File {
        List(Vec<[f64; 3]>),
        Object { targets: Vec<[f64; 3]> },
    }
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(match serde_json::from_str(&text).with_context(|| path.display().to_string())? {
        File::List(v) | File::Object { targets: v } => v,
    })
}

fn calibrate(
    cfg: &ServiceConfig,
    user: String,
    keyposes: Option<PathBuf>,
    connect: Option<String>,
    manual_capture: bool,
) -> Result<ExitCode> {
    let keyposes = keyposes.as_deref().map(read_keyposes).transpose()?;
    let mut client = Client::connect(connect.as_deref().unwrap_or(&cfg.listen))?;
    client.subscribe(&[CALIBRATION_EVENT, PIPELINE_STATUS], false)?;
    client.publish(
        CALIBRATION_COMMAND,
        &Payload::CalibrationCommand(CalibrationCommand::Start { user, keyposes }),
    )?;
    loop {
        let msg = match client.recv(Duration::from_secs(600)) {
            Ok(m) => m,
            Err(ClientError::Timeout) => bail!("no calibration progress for 10 minutes"),
            Err(e) => return Err(e.into()),
        };
        match msg.payload {
            Payload::CalibrationEvent(ev) => {
                match &ev {
                    CalibrationEvent::Target { index, target } => {
                        println!("keypose {index}: move the gripper to {target:?}");
                        if manual_capture {
                            println!("  press enter when in position");
                            let mut line = String::new();
                            std::io::stdin().read_line(&mut line)?;
                            client.publish(CALIBRATION_COMMAND, &Payload::CalibrationCommand(CalibrationCommand::Capture))?;
                        }
                    }
                    CalibrationEvent::Progress { .. } => {}
                    other => println!("{}", serde_json::to_string(other)?),
                }
                match ev {
                    CalibrationEvent::Accepted { profile, .. } => {
                        println!("profile saved to {profile}");
                        return Ok(ExitCode::SUCCESS);
                    }
                    CalibrationEvent::Rejected { reasons, .. } => {
                        for r in reasons {
                            eprintln!("rejected: {r}");
                        }
                        return Ok(ExitCode::FAILURE);
                    }
                    CalibrationEvent::Aborted { reason } => {
                        eprintln!("aborted: {reason}");
                        return Ok(ExitCode::FAILURE);
                    }
                    _ => {}
                }
            }
            Payload::PipelineStatus(s) => println!("{}", serde_json::to_string(&s)?),
            _ => {}
        }
    }
}

fn fit(session: &Path, out: &Path) -> Result<ExitCode> {
    match fit_session_dir(session) {
        Ok(p) => {
            save_profile(&p, out)?;
            println!(
                "profile for {} written to {} (min distance {:.4} m)",
                p.user,
                out.display(),
                p.quality.min_distance
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(SessionDirError::Calibration(CalibrationError::QualityRejected(issues))) => {
            for i in issues {
                eprintln!("rejected: {i}");
            }
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e.into()),
    }
}

fn validate(path: &Path) -> Result<ExitCode> {
    let p = load_profile(path)?;
    println!("user: {}", p.user);
    println!("created: {}", p.created);
    println!("arm length: {:.4} m", p.arm_length);
    println!("min pairwise distance: {:.4} m", p.quality.min_distance);
    let bad_edges = p.quality.edges.iter().filter(|e| !e.consistent).count();
    println!("edges: {} checked, {} inconsistent", p.quality.edges.len(), bad_edges);
    for i in &p.quality.issues {
        println!("issue: {i}");
    }
    match &p.tps {
        Some(tps) => {
            let residual = p
                .x
                .iter()
                .zip(&p.y)
                .map(|(x, y)| (tps_eval(&x.0, tps) - y).norm())
                .fold(0.0, f64::max);
            println!("fitted: yes (max control residual {residual:.3e} m)");
        }
        None => println!("fitted: no"),
    }
    println!("passed: {}", p.quality.passed);
    Ok(if p.quality.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn record(
    cfg: &ServiceConfig,
    topics: Vec<String>,
    out: &Path,
    connect: Option<String>,
    duration: Option<f64>,
    until_end_of_stream: bool,
) -> Result<ExitCode> {
    let known: Vec<&str> = standard_topics().into_iter().map(|(t, _)| t).collect();
    if let Some(t) = topics.iter().find(|t| !known.contains(&t.as_str())) {
        bail!(ClientError::UnknownTopic(t.clone()));
    }
    let mut client = Client::connect(connect.as_deref().unwrap_or(&cfg.listen))?;
    let names: Vec<&str> = topics.iter().map(String::as_str).collect();
    client.subscribe(&names, true)?;
    if until_end_of_stream && !names.contains(&PIPELINE_STATUS) {
        client.subscribe(&[PIPELINE_STATUS], true)?;
    }
    let mut w = BufWriter::new(File::create(out).with_context(|| out.display().to_string())?);
    w.flush()?;
    let deadline = duration.map(|d| Instant::now() + Duration::from_secs_f64(d));
    let mut n = 0usize;
    loop {
        let wait = match deadline {
            Some(d) => match d.checked_duration_since(Instant::now()) {
                Some(left) if !left.is_zero() => left,
                _ => break,
            },
            None => Duration::from_secs(3600),
        };
        let msg = match client.recv(wait) {
            Ok(m) => m,
            Err(ClientError::Timeout) if deadline.is_some() => break,
            Err(ClientError::Closed) => break,
            Err(e) => return Err(e.into()),
        };
        let done = until_end_of_stream && matches!(msg.payload, Payload::PipelineStatus(PipelineStatus::Drained { .. }));
        if topics.contains(&msg.topic) {
            writeln!(w, "{}", msg.json)?;
            w.flush()?;
            n += 1;
        }
        if done {
            break;
        }
    }
    w.flush()?;
    println!("recorded {n} messages to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
