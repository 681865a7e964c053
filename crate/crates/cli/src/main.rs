use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graspopt::bench::{ChainPreset, SceneFamily, SceneSpec, TargetKind};
use graspopt::goalsel::SelectorKind;
use graspopt_cli::commands::{
    cmd_bench, cmd_generate, cmd_plan, cmd_refine_grasp, BenchOptions, GenerateOptions, PlanOptions, RefineOptions,
    EXIT_ERROR,
};

#[derive(Parser)]
#[command(name = "graspopt", version, about = "Grasp-aware trajectory optimization with online goal selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a trajectory for a scene file.
    Plan {
        scene: PathBuf,
        #[arg(long)]
        selector: Option<SelectorKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Iteration horizon.
        #[arg(long)]
        iters: Option<usize>,
        /// Refinement steps per planner iteration.
        #[arg(long)]
        refine_steps: Option<usize>,
        /// Also render plan.svg (planar chains only).
        #[arg(long)]
        svg: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a benchmark manifest.
    Bench {
        manifest: PathBuf,
        /// Overrides the manifest's planner seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Refine one goal of a scene file's goal set.
    RefineGrasp {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        goal: usize,
        #[arg(long, default_value_t = 30)]
        refine_steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a generated scene to a scene file.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "planar-3")]
        preset: ChainPreset,
        #[arg(long, value_enum, default_value = "random")]
        family: Family,
        #[arg(long, value_enum, default_value = "sphere")]
        target: Target,
        #[arg(long, default_value_t = 30)]
        goals: usize,
        #[arg(long, default_value = "scene.toml")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Family {
    Random,
    Blocked,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Target {
    Sphere,
    Box,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Plan {
            scene,
            selector,
            seed,
            iters,
            refine_steps,
            svg,
            out,
        } => cmd_plan(
            &scene,
            &PlanOptions {
                selector,
                seed,
                iters,
                refine_steps,
                svg,
                out,
            },
        ),
        Command::Bench { manifest, seed, jobs, out } => cmd_bench(&manifest, &BenchOptions { seed, jobs, out }),
        Command::RefineGrasp {
            scene,
            goal,
            refine_steps,
            out,
        } => cmd_refine_grasp(
            &scene,
            &RefineOptions {
                goal,
                steps: refine_steps,
                out,
            },
        ),
        Command::Generate {
            seed,
            preset,
            family,
            target,
            goals,
            out,
        } => {
            let spec = SceneSpec {
                seed,
                preset,
                family: match family {
                    Family::Random => SceneFamily::Random,
                    Family::Blocked => SceneFamily::Blocked,
                },
                target: match target {
                    Target::Sphere => TargetKind::Sphere,
                    Target::Box => TargetKind::Box,
                },
                goals,
                ..SceneSpec::default()
            };
            cmd_generate(&GenerateOptions { spec, out })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
