use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use pfusion_core::config::{ConfigError, PipelineConfig};
use pfusion_core::io::{read_jsonl, write_jsonl, write_text, FrameTruth, IoError, Sequence};
use pfusion_core::pipeline::{load_benchmarks, run_sequence, write_outputs, PipelineError};
use pfusion_core::report::evaluate_trajectory;
use pfusion_core::shape::BenchmarkShapeRegistry;
use pfusion_core::smoother::SmoothedTrajectory;
use pfusion_core::synth::{benchmark_clusters, overtaking_fixture, simulate, LabeledCluster, SceneSpec};

#[derive(Parser)]
#[command(name = "pfusion", version, about = "LiDAR-camera fusion for localizing detected objects")]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomised stage; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a sequence directory and write localizations, trajectories and a report.
    Fuse {
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip enlargement, clustering and shape selection.
        #[arg(long)]
        baseline_only: bool,
        /// Report raw per-frame localizations instead of smoothed trajectories.
        #[arg(long)]
        no_smoother: bool,
    },
    /// Render a synthetic scene into a sequence directory.
    Simulate {
        /// Scene description (JSON).
        #[arg(required_unless_present = "fixture", conflicts_with = "fixture")]
        scene: Option<PathBuf>,
        /// Built-in scene instead of a scene file.
        #[arg(long, value_parser = ["overtaking"])]
        fixture: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write labeled benchmark footprints to this JSONL file.
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Footprints per class written to `--clusters`.
        #[arg(long, default_value_t = 30)]
        per_class: usize,
    },
    /// Build a benchmark shape registry from labeled footprints (JSONL).
    BenchmarkShapes {
        clusters: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trajectory files against a sequence's ground truth.
    Evaluate {
        /// Directory of `object_<id>.csv` files.
        trajectories: PathBuf,
        /// Sequence directory or its `ground_truth.jsonl`.
        #[arg(long)]
        truth: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn input_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Input(IoError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    })
}

fn fuse(cfg: PipelineConfig, sequence: &Path, out: &Path) -> Result<(), PipelineError> {
    let mut seq = Sequence::load(sequence)?;
    if let Some(calib) = &cfg.calibration {
        seq.rig = pfusion_core::io::CameraRig::load(calib)?;
    }
    let benchmarks = load_benchmarks(&cfg)?;
    let output = run_sequence(&seq, &benchmarks, &cfg)?;
    write_outputs(&output, out)?;
    let r = &output.report;
    info!("{} frames, {} detections, {} localized", r.frames, r.detections, r.localized);
    if let Some(row) = &r.tpr_overall {
        match row.pfusion_pct {
            Some(p) => println!("TPR baseline {:.1}%  p-fusion {p:.1}%", row.baseline_pct),
            None => println!("TPR baseline {:.1}%", row.baseline_pct),
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn simulate_cmd(
    cfg: &PipelineConfig,
    seed: Option<u64>,
    scene: Option<&Path>,
    out: &Path,
    clusters: Option<&Path>,
    per_class: usize,
) -> Result<(), PipelineError> {
    let mut spec = match scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str::<SceneSpec>(&text).map_err(|e| input_err(path, e))?
        }
        None => overtaking_fixture(seed.unwrap_or(0)),
    };
    if let Some(seed) = seed {
        spec.rng_seed = seed;
    }
    spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let calib = spec.calibration().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let frames = simulate(&spec).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let seq = Sequence::from_simulation(frames, spec.frame_rate, calib);
    seq.save(out)?;
    println!("wrote {} frames to {}", seq.frames.len(), out.display());
    if let Some(path) = clusters {
        write_jsonl(path, &benchmark_clusters(cfg.rng_seed, per_class))?;
        println!("wrote {per_class} footprints per class to {}", path.display());
    }
    Ok(())
}

fn benchmark_shapes(cfg: &PipelineConfig, clusters: &Path, out: &Path) -> Result<(), PipelineError> {
    let labeled: Vec<LabeledCluster> = read_jsonl(clusters)?;
    let pixels: Vec<_> = labeled.iter().map(|c| (c.class, c.pixels())).collect();
    let registry = BenchmarkShapeRegistry::from_labeled(pixels.iter().map(|(c, p)| (*c, p.as_slice())), &cfg.shape)
        .map_err(|e| input_err(clusters, e))?;
    write_text(out, &registry.to_json())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn object_id_of(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.strip_prefix("object_")?.parse().ok()
}

fn evaluate(trajectories: &Path, truth: &Path, out: Option<&Path>) -> Result<(), PipelineError> {
    let gt_path = if truth.is_dir() { truth.join("ground_truth.jsonl") } else { truth.to_path_buf() };
    let frames: Vec<FrameTruth> = read_jsonl(&gt_path)?;
    let mut by_object: BTreeMap<u64, Vec<(f64, [f64; 2])>> = BTreeMap::new();
    for f in &frames {
        for o in &f.objects {
            by_object.entry(o.object_id).or_default().push((f.t, [o.x, o.y]));
        }
    }
    for rows in by_object.values_mut() {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let entries = std::fs::read_dir(trajectories).map_err(|source| IoError::Io {
        path: trajectories.to_path_buf(),
        source,
    })?;
    let mut files: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| object_id_of(&p).map(|id| (id, p)))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(input_err(trajectories, "no object_<id>.csv trajectory files"));
    }

    let mut results = Vec::with_capacity(files.len());
    for (id, path) in &files {
        let traj = SmoothedTrajectory::read_csv(path).map_err(|e| input_err(path, e))?;
        let truth_rows = by_object.get(id).map(Vec::as_slice).unwrap_or_default();
        let e = evaluate_trajectory(*id, &traj.samples, truth_rows);
        match &e.mae {
            Some(m) => info!("object {id}: MAE x {:.3} m, y {:.3} m over {} samples", m.x, m.y, m.n),
            None => info!("object {id}: no samples matched ground truth"),
        }
        results.push(e);
    }
    let text = serde_json::to_string_pretty(&results).map_err(|e| PipelineError::Internal(e.to_string()))?;
    match out {
        Some(path) => write_text(path, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Fuse {
            sequence,
            out,
            baseline_only,
            no_smoother,
        } => {
            cfg.baseline_only |= *baseline_only;
            cfg.smoothing &= !*no_smoother;
            fuse(cfg, sequence, out)
        }
        Command::Simulate {
            scene,
            out,
            clusters,
            per_class,
            ..
        } => simulate_cmd(&cfg, cli.seed, scene.as_deref(), out, clusters.as_deref(), *per_class),
        Command::BenchmarkShapes { clusters, out } => benchmark_shapes(&cfg, clusters, out),
        Command::Evaluate { trajectories, truth, out } => evaluate(trajectories, truth, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
