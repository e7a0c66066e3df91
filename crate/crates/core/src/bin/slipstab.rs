use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use rayon::prelude::*;

use slipstab::driver::{
    discover_scenes, evaluate_scene, load_patches, load_scene, run_bundle, stage_analyze, stage_estimate,
    stage_segment, synthesize, write_reports, ObjectResult, SynthConfig,
};
use slipstab::patches::segment_patches;
use slipstab::pipeline::PipelineConfig;
use slipstab::selftest::{format_battery, run_battery, BatteryRow};
use slipstab::{Error, Result};

/// Depth-only pose estimation from geometrically stable patch groups.
#[derive(Parser)]
#[command(name = "slipstab", version)]
struct Cli {
    /// Pipeline configuration (JSON); omitted fields take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for scene-level parallelism.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic scene bundles.
    Synth {
        /// Scene recipe (JSON); defaults to box, box_cluster and cylinder.
        spec: Option<PathBuf>,
        /// Number of scenes.
        #[arg(short, long, default_value_t = 10)]
        n: usize,
    },
    /// Unproject and segment each object into patches.
    Segment { bundle: PathBuf },
    /// Enumerate geometrically stable patch triplets.
    Analyze { bundle: PathBuf },
    /// Estimate object poses.
    Estimate { bundle: PathBuf },
    /// Score estimated poses against ground truth.
    Evaluate {
        bundle: PathBuf,
        /// Directory holding the estimates; defaults to --out.
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Segment, analyze, estimate and evaluate in one pass.
    Run { bundle: PathBuf },
    /// Classify the canonical slippage shapes.
    Selftest,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_synth_config(path: Option<&Path>, seed: Option<u64>) -> Result<SynthConfig> {
    let mut cfg = match path {
        None => SynthConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Applies `f` to every (scene, object) of the bundle in parallel.
fn per_object<T: Send>(
    bundle: &Path,
    f: impl Fn(&slipstab::driver::Scene, usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let scenes = discover_scenes(bundle)?;
    let nested: Vec<Vec<T>> = scenes
        .par_iter()
        .map(|(id, dir)| {
            let scene = load_scene(id, dir)?;
            (0..scene.object_count()).map(|k| f(&scene, k)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn execute(cli: &Cli) -> Result<i32> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth { spec, n } => {
            let cfg = load_synth_config(spec.as_deref(), cli.seed)?;
            let dirs = synthesize(&cfg, *n, out)?;
            println!("wrote {} scenes to {}", dirs.len(), out.display());
        }
        Command::Segment { bundle } => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            let counts = per_object(bundle, |s, k| Ok(stage_segment(s, k, &cfg, Some(out))?.1.len()))?;
            println!(
                "segmented {} objects into {} patches",
                counts.len(),
                counts.iter().sum::<usize>()
            );
        }
        Command::Analyze { bundle } => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            let counts = per_object(bundle, |s, k| {
                let cloud = s.observe(k, &cfg)?;
                let patches = load_patches(out, s, k, &cloud)
                    .or_else(|_| Ok::<_, Error>(segment_patches(&cloud, &cfg.segmentation)))?;
                Ok(stage_analyze(s, k, &patches, &cfg, Some(out))?.len())
            })?;
            println!(
                "found {} stable groups over {} objects",
                counts.iter().sum::<usize>(),
                counts.len()
            );
        }
        Command::Estimate { bundle } => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            let routes = per_object(bundle, |s, k| {
                let cloud = s.observe(k, &cfg)?;
                let patches = load_patches(out, s, k, &cloud)
                    .or_else(|_| Ok::<_, Error>(segment_patches(&cloud, &cfg.segmentation)))?;
                Ok(stage_estimate(s, k, &cloud, &patches, &cfg, Some(out))?.fallback())
            })?;
            let fallbacks = routes.iter().filter(|f| **f).count();
            println!("estimated {} poses ({fallbacks} by fallback)", routes.len());
        }
        Command::Evaluate { bundle, poses } => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            let poses = poses.as_deref().unwrap_or(out);
            let scenes = discover_scenes(bundle)?;
            let nested: Vec<Vec<ObjectResult>> = scenes
                .par_iter()
                .map(|(id, dir)| evaluate_scene(&load_scene(id, dir)?, &cfg, poses))
                .collect::<Result<_>>()?;
            let results: Vec<ObjectResult> = nested.into_iter().flatten().collect();
            print_summary(&write_reports(out, scenes.len(), &results, &cfg)?);
        }
        Command::Run { bundle } => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            let (n, results) = run_bundle(bundle, &cfg, Some(out))?;
            print_summary(&write_reports(out, n, &results, &cfg)?);
        }
        Command::Selftest => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            let rows = run_battery(cfg.stability_threshold, cfg.normalize)?;
            print!("{}", format_battery(&rows));
            if !rows.iter().all(BatteryRow::matches) {
                println!("selftest FAILED");
                return Ok(1);
            }
            println!("selftest passed");
        }
    }
    Ok(0)
}

fn print_summary(s: &slipstab::driver::Summary) {
    println!(
        "scenes {}  objects {}  failures {}  fallbacks {}",
        s.scenes, s.objects, s.failures, s.fallbacks
    );
    println!(
        "recall  ADI {:.3}  VSD {:.3}  10deg10cm {:.3}  IoU25 {:.3}",
        s.recall.adi, s.recall.vsd, s.recall.deg10cm10, s.recall.iou25
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SLIPSTAB_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("cannot size the thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
