use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use relocforest::adapt::integrate_frame;
use relocforest::bench::{
    adapt_forest, load_sequence, orbit_trajectory, read_intrinsics, run_adaptation_with_forest, run_novelty_benchmark,
    run_recovery_benchmark, save_sequence, scene_a, scene_b, synthetic_orbits, synthetic_suite, generate_synthetic_sequence,
    BenchConfig, BenchReport, RenderSettings, SceneSpec, Sequence, StageTimings, DIAGNOSTIC_TOP, STAGE_TRAINING,
};
use relocforest::forest::{strip_leaves, train_forest, RegressionForest};
use relocforest::geom::pose_error;
use relocforest::reloc::{relocalise, write_diagnostics};

/// Scene-coordinate regression forests that adapt to new scenes online.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML benchmark configuration; missing keys take the full-resolution
    /// defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the settings tuned for the 320×240 synthetic scenes
    /// instead of the full-resolution defaults.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// File holding `fx fy cx cy`, overriding the intrinsics of loaded
    /// sequences.
    #[arg(long, global = true)]
    intrinsics: Option<PathBuf>,
    /// Write the top-16 relocalisation candidates of every round to this
    /// JSON-lines file.
    #[arg(long, global = true)]
    diagnostics: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forest on a posed sequence.
    Train {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop the leaf distributions of a forest.
    Strip {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refill a forest's leaves from a posed sequence.
    Adapt {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep the forest's existing leaf state and add to it.
        #[arg(long)]
        resume: bool,
    },
    /// Estimate the pose of every frame of a sequence.
    Relocalise {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Write estimated camera-to-world poses, one row-major line per frame.
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Pre-train (or load), strip, adapt, then relocalise a test sequence.
    BenchAdapt {
        /// Sequence to pre-train on; ignored when --forest is given.
        #[arg(long, required_unless_present = "forest")]
        pretrain: Option<PathBuf>,
        #[arg(long)]
        forest: Option<PathBuf>,
        #[arg(long)]
        adapt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Relocalise every frame after integrating the ones before it.
    BenchRecovery {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Relocalise synthetic views at growing distances from the training
    /// trajectory.
    BenchNovelty {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long, value_enum, default_value = "b")]
        scene: Scene,
        /// Frames on the training trajectory.
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Number of test views.
        #[arg(long, default_value_t = 600)]
        poses: usize,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Render the synthetic scenes as sequence directories.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Depth noise standard deviation, metres.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args)]
struct ReportArgs {
    /// Write the full report (with timings) as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the timing-free report, byte-identical across re-runs.
    #[arg(long)]
    canonical: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scene {
    A,
    B,
}

impl Scene {
    fn spec(self) -> SceneSpec {
        match self {
            Scene::A => scene_a(),
            Scene::B => scene_b(),
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = load_config(&cli.common)?;
    let intrinsics = cli.common.intrinsics.as_deref().map(read_intrinsics).transpose()?;
    let load = |p: &Path| -> Result<Sequence> {
        load_sequence(p, intrinsics).with_context(|| format!("loading {}", p.display()))
    };
    let mut diagnostics = cli
        .common
        .diagnostics
        .as_deref()
        .map(|p| File::create(p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())))
        .transpose()?;

    match cli.command {
        Command::Train { sequence, out } => {
            let seq = load(&sequence)?;
            let forest = train_forest(&seq.frames, &config.training, config.training_seed())?;
            forest.save(&out)?;
            println!("trained {} trees, {} leaves -> {}", forest.tree_count(), forest.leaf_count(), out.display());
        }
        Command::Strip { forest, out } => {
            strip_leaves(&load_forest(&forest)?).save(&out)?;
            println!("stripped -> {}", out.display());
        }
        Command::Adapt { forest, sequence, out, resume } => {
            let mut forest = load_forest(&forest)?;
            let seq = load(&sequence)?;
            let state = match forest.take_leaf_state() {
                Some(mut state) if resume => {
                    for frame in &seq.frames {
                        let pose = frame.gt_pose.with_context(|| format!("frame {} has no pose", frame.index))?;
                        integrate_frame(&mut state, &forest, frame, &pose, true);
                    }
                    if config.final_refresh {
                        state.refresh_all();
                    }
                    state
                }
                _ => adapt_forest(&forest, &seq, &config, &mut StageTimings::new())?,
            };
            println!("{} modes over {} leaves", state.mode_count(), state.leaf_count());
            forest.with_leaf_state(state)?.save(&out)?;
            println!("adapted -> {}", out.display());
        }
        Command::Relocalise { forest, sequence, poses } => {
            let forest = load_forest(&forest)?;
            let state = forest.leaf_state().context("forest has no leaf state; run `adapt` first")?;
            let seq = load(&sequence)?;
            let mut settings = config.ransac;
            settings.diagnostics |= diagnostics.is_some();
            let mut pose_out = poses.as_deref().map(File::create).transpose()?.map(BufWriter::new);
            for (i, frame) in seq.frames.iter().enumerate() {
                match relocalise(frame, state, &forest, &settings, config.reloc_seed(i + 1)) {
                    Ok(r) => {
                        if let Some(d) = diagnostics.as_mut() {
                            write_diagnostics(&r, i + 1, DIAGNOSTIC_TOP, d)?;
                        }
                        let err = frame.gt_pose.map(|gt| pose_error(&r.pose, &gt));
                        match err {
                            Some(e) => println!(
                                "frame {:>6}  energy/px {:>9.4}  error {:.3} m {:.2}°",
                                frame.index,
                                r.energy_per_pixel(),
                                e.translational,
                                e.angular
                            ),
                            None => println!("frame {:>6}  energy/px {:>9.4}", frame.index, r.energy_per_pixel()),
                        }
                        if let Some(out) = pose_out.as_mut() {
                            let m = r.pose.to_matrix4();
                            let row: Vec<String> = m.transpose().iter().map(|v| format!("{v:?}")).collect();
                            writeln!(out, "{} {}", frame.index, row.join(" "))?;
                        }
                    }
                    Err(e) => println!("frame {:>6}  failed: {e}", frame.index),
                }
            }
        }
        Command::BenchAdapt { pretrain, forest, adapt, test, report } => {
            let mut timings = StageTimings::new();
            let forest = match (forest, pretrain) {
                (Some(f), _) => load_forest(&f)?,
                (None, Some(p)) => {
                    let seq = load(&p)?;
                    timings.record(STAGE_TRAINING, || train_forest(&seq.frames, &config.training, config.training_seed()))?
                }
                (None, None) => bail!("either --forest or --pretrain is required"),
            };
            let (adapt, test) = (load(&adapt)?, load(&test)?);
            let diag = diagnostics.as_mut().map(|d| d as &mut dyn Write);
            let r = run_adaptation_with_forest(&forest, &adapt, &test, &config, &mut timings, diag)?;
            emit(&r, &report)?;
        }
        Command::BenchRecovery { forest, test, report } => {
            let forest = load_forest(&forest)?;
            let test = load(&test)?;
            let diag = diagnostics.as_mut().map(|d| d as &mut dyn Write);
            emit(&run_recovery_benchmark(&test, &forest, &config, diag)?, &report)?;
        }
        Command::BenchNovelty { forest, scene, frames, poses, report } => {
            let forest = load_forest(&forest)?;
            let render = RenderSettings { intrinsics: intrinsics.unwrap_or(RenderSettings::default().intrinsics), ..RenderSettings::default() };
            let (orbit, _) = synthetic_orbits(frames);
            let training = generate_synthetic_sequence("training", &scene.spec(), &orbit_trajectory(&orbit)?, &render)?;
            emit(&run_novelty_benchmark(&forest, &scene.spec(), &training, &render, poses, &config)?, &report)?;
        }
        Command::Synth { out, frames, noise } => {
            let render = RenderSettings {
                noise_sigma: noise,
                noise_seed: config.seed,
                intrinsics: intrinsics.unwrap_or(RenderSettings::default().intrinsics),
                ..RenderSettings::default()
            };
            let suite = synthetic_suite(frames, &render)?;
            for seq in [&suite.pretrain, &suite.adapt, &suite.test] {
                let dir = out.join(&seq.name);
                save_sequence(seq, &dir)?;
                println!("{} frames -> {}", seq.len(), dir.display());
            }
        }
        Command::Config => print!("{}", config.to_toml_string()),
    }
    if let Some(mut d) = diagnostics {
        d.flush()?;
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<BenchConfig> {
    let mut config = match &common.config {
        Some(p) => BenchConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None if common.synthetic => BenchConfig::synthetic(),
        None => BenchConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_forest(path: &Path) -> Result<RegressionForest> {
    RegressionForest::load(path).with_context(|| format!("loading forest {}", path.display()))
}

fn emit(report: &BenchReport, args: &ReportArgs) -> Result<()> {
    print!("{}", report.to_table());
    if let Some(p) = &args.report {
        std::fs::write(p, report.to_json())?;
    }
    if let Some(p) = &args.canonical {
        std::fs::write(p, report.canonical_json())?;
    }
    Ok(())
}
