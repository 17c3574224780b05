use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wm_core::bevgrid::pwg::{channel, PwgData};
use wm_core::bevgrid::{split_past_full, Role, StateTensor};
use wm_core::harness::{self, ExperimentConfig, ReplayBuffer};
use wm_core::pnm::gray_from_grid;
use wm_core::register::save_trajectory;
use wm_core::sensim::{Frame, SemanticPointCloud};
use wm_core::synthworld::{generate_world, LayoutKind};
use wm_core::State32;

#[derive(Parser)]
#[command(
    name = "wm",
    version,
    about = "Predictive world model pipeline on synthetic road worlds"
)]
struct Cli {
    /// Experiment configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Straight,
    Curve,
    TIntersection,
    Crossroad,
    StochasticBranch,
}

impl From<Layout> for LayoutKind {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Straight => LayoutKind::Straight,
            Layout::Curve => LayoutKind::Curve,
            Layout::TIntersection => LayoutKind::TIntersection,
            Layout::Crossroad => LayoutKind::Crossroad,
            Layout::StochasticBranch => LayoutKind::StochasticBranch,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world archive (PWG, JSON metadata, renders).
    GenWorld {
        #[arg(long, value_enum, default_value = "stochastic-branch")]
        layout: Layout,
    },
    /// Drive through a generated world and write one SPC1 sweep per pose.
    Simulate {
        #[arg(long, value_enum, default_value = "stochastic-branch")]
        layout: Layout,
    },
    /// Register sweeps and fuse them into past and full BEV states.
    BuildBev {
        /// Directory of `sweep_*.spc` files.
        #[arg(long)]
        sweeps: PathBuf,
        /// Sweeps fused into the past state; defaults to the configured count.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Train stage one (structure and texture completion).
    TrainCompletion,
    /// Write the pseudo-complete training corpus from stage-one checkpoints.
    GenPseudo {
        /// Directory holding the stage-one checkpoints.
        #[arg(long)]
        models: PathBuf,
    },
    /// Train the world model on a pseudo-complete corpus.
    TrainWm {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Sample complete states from a past state.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Past state (PWG with road, intensity and mask channels).
        #[arg(long)]
        past: PathBuf,
        #[arg(short, long, default_value_t = 8)]
        n: usize,
    },
    /// Evaluate a world model on the held-out worlds.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Render one channel of a PWG file as a PGM image.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Channel id; defaults to the road channel.
        #[arg(long, default_value_t = channel::ROAD_MEAN)]
        channel: u8,
    },
    /// Every stage end to end.
    Run,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(wm_core::Error::from)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(wm_core::Error::from)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value).map_err(wm_core::Error::from)?).map_err(wm_core::Error::from)?;
    Ok(())
}

fn corpus_pairs(dir: &Path) -> Result<Vec<(State32, State32)>> {
    let mut pairs = Vec::new();
    for i in 0.. {
        let past = dir.join(format!("{i:05}_past.pwg"));
        if !past.exists() {
            break;
        }
        let star = dir.join(format!("{i:05}_star.pwg"));
        pairs.push((
            StateTensor::from_pwg(&PwgData::load(&past)?, Role::Past)?,
            StateTensor::from_pwg(&PwgData::load(&star)?, Role::PseudoFull)?,
        ));
    }
    if pairs.is_empty() {
        return Err(wm_core::Error::domain(format!("no corpus pairs in {}", dir.display())).into());
    }
    Ok(pairs)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    fs::create_dir_all(out).map_err(wm_core::Error::from)?;
    match &cli.command {
        Command::GenWorld { layout } => {
            let world = generate_world(&cfg.traversal.world_spec(cfg.seed, (*layout).into()))?;
            world.save_archive(out)?;
            println!(
                "world {} ({:.1}% road) -> {}",
                cfg.seed,
                100.0 * world.road_fraction(),
                out.display()
            );
        }
        Command::Simulate { layout } => {
            let t = harness::simulate_traversal(&cfg.traversal, cfg.seed, (*layout).into())?;
            t.world.save_archive(&out.join("world"))?;
            let dir = out.join("sweeps");
            fs::create_dir_all(&dir).map_err(wm_core::Error::from)?;
            for (i, s) in t.sweeps.iter().enumerate() {
                s.save_spc1(&dir.join(format!("sweep_{i:04}.spc")))?;
            }
            write_json(&out.join("poses.json"), &t.poses)?;
            println!("{} sweeps -> {}", t.sweeps.len(), dir.display());
        }
        Command::BuildBev { sweeps, split } => {
            let mut files: Vec<PathBuf> = fs::read_dir(sweeps)
                .map_err(wm_core::Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "spc"))
                .collect();
            files.sort();
            let clouds = files
                .iter()
                .map(|p| SemanticPointCloud::load_spc1(p, Frame::Sensor))
                .collect::<wm_core::Result<Vec<_>>>()?;
            let t = split.unwrap_or(cfg.traversal.past_steps);
            let pf = split_past_full::<f32>(&clouds, t, cfg.traversal.geometry, &cfg.traversal.icp)?;
            pf.past_grid.save_pwg(&out.join("past_grid.pwg"))?;
            pf.full_grid.save_pwg(&out.join("full_grid.pwg"))?;
            for (name, s) in [("past", pf.past()), ("full", pf.full())] {
                s.to_pwg().save(&out.join(format!("{name}.pwg")))?;
                s.render_road().save(&out.join(format!("{name}.pgm")))?;
            }
            save_trajectory(&pf.trajectory, &out.join("trajectory.json"))?;
            println!("fused {} sweeps, split after {t} -> {}", clouds.len(), out.display());
        }
        Command::TrainCompletion => {
            let train = harness::training_samples(&cfg)?;
            let pairs: Vec<_> = train.iter().map(|s| (s.x_past.clone(), s.x_full.clone())).collect();
            harness::train_stage_one(&cfg, &pairs, Some(out))?;
            write_json(&out.join("config.json"), &cfg)?;
            println!("stage one trained on {} worlds -> {}", pairs.len(), out.display());
        }
        Command::GenPseudo { models } => {
            let (slvm, adv) = harness::load_stage_one(&cfg, models)?;
            let train = harness::training_samples(&cfg)?;
            let pairs: Vec<_> = train.iter().map(|s| (s.x_past.clone(), s.x_full.clone())).collect();
            let keys: Vec<u64> = train.iter().map(|s| s.seed).collect();
            let corpus = harness::pseudo_corpus(&cfg, &slvm, &adv, &pairs, &keys)?;
            for (i, (past, star)) in corpus.iter().enumerate() {
                past.to_pwg().save(&out.join(format!("{i:05}_past.pwg")))?;
                star.to_pwg().save(&out.join(format!("{i:05}_star.pwg")))?;
            }
            println!("{} pseudo-complete pairs -> {}", corpus.len(), out.display());
        }
        Command::TrainWm { corpus } => {
            let pairs = corpus_pairs(corpus)?;
            let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
            for p in pairs {
                replay.push(p);
            }
            harness::train_stage_two(&cfg, &replay, Some(out))?;
            write_json(&out.join("config.json"), &cfg)?;
            println!("world model trained on {} pairs -> {}", replay.len(), out.display());
        }
        Command::Sample { model, past, n } => {
            let m = harness::load_world_model(&cfg, model)?;
            let x_past = StateTensor::from_pwg(&PwgData::load(past)?, Role::Past)?;
            for (k, s) in harness::sample_worlds(&cfg, &m, &x_past, *n, cfg.seed)?
                .iter()
                .enumerate()
            {
                s.to_pwg().save(&out.join(format!("sample_{k:03}.pwg")))?;
                s.render_road().save(&out.join(format!("sample_{k:03}.pgm")))?;
            }
            println!("{n} samples -> {}", out.display());
        }
        Command::Eval { model } => {
            let m = harness::load_world_model(&cfg, model)?;
            let (test, branch) = harness::held_out_samples(&cfg)?;
            let report = harness::evaluate(&cfg, &m, &test, &branch)?;
            fs::write(out.join("eval_report.json"), harness::report_json(&report)?).map_err(wm_core::Error::from)?;
            summarize(&report);
        }
        Command::Render { input, channel } => {
            let data = PwgData::load(input)?;
            let values: Vec<f64> = data.channel(*channel)?.iter().map(|&v| f64::from(v)).collect();
            if data.height != data.width {
                return Err(wm_core::Error::domain("only square grids render").into());
            }
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
            let path = out.join(format!("{stem}_ch{channel}.pgm"));
            gray_from_grid(data.width, &values).save(&path)?;
            println!("{}", path.display());
        }
        Command::Run => {
            let report = harness::run_experiment(&cfg, Some(out))?;
            summarize(&report);
        }
    }
    Ok(())
}

fn summarize(r: &harness::EvalReport) {
    for (name, set) in [("test", &r.test), ("branch", &r.branch)] {
        for (region, rr) in [("all", &set.all), ("unobserved", &set.unobserved)] {
            let curve: Vec<String> = rr
                .per_sample
                .iter()
                .map(|p| format!("N={} mean {:.4} best {:.4}", p.n, p.mean, p.best))
                .collect();
            println!("{name} {region}: {}", curve.join(", "));
        }
        if let Some(f) = set.both_outcomes_fraction {
            println!("{name}: both branch outcomes in {:.1}% of worlds", 100.0 * f);
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<wm_core::Error>().map_or(1, |w| w.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
