use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gsnbv::commands;
use gsnbv::config::{PolicyName, Resolution, RunConfig};
use gsnbv::eval::fmt_f64;

#[derive(Parser)]
#[command(name = "gsnbv", version, about = "Active 3D Gaussian reconstruction with uncertainty-driven view selection")]
struct Cli {
    /// Worker threads for per-view parallel work (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// random, oracle_ssim, uq, blend_only, no_depth_uq, no_depth_blending, depth_squared
    #[arg(long)]
    policy: Option<PolicyName>,
    /// Image size as WxH.
    #[arg(long)]
    resolution: Option<Resolution>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth scene and preview renders.
    SceneGen(Common),
    /// Fit a Gaussian model to views of the generated scene.
    Fit(Common),
    /// Run the active view-selection loop.
    ActiveRun(Common),
    /// Compare score variants over shared seeds.
    Ablate(Common),
    /// Recompute a run's metrics from its checkpoints.
    Eval {
        run_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render a scene file (default: the generated scene) from canonical views.
    Render {
        scene: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the ridge uncertainty predictor.
    TrainPredictor(Common),
}

fn load_config(c: &Common) -> gsnbv::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = c.policy {
        cfg.policy = p;
    }
    if let Some(r) = c.resolution {
        cfg.resolution = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> gsnbv::Result<()> {
    match cli.command {
        Command::SceneGen(c) => {
            let path = commands::cmd_scene_gen(&load_config(&c)?)?;
            println!("wrote {}", path.display());
        }
        Command::Fit(c) => {
            let s = commands::cmd_fit(&load_config(&c)?)?;
            println!("iterations {} train psnr {}", s.iterations, fmt_f64(s.train_psnr_avg));
            if let Some(t) = s.test {
                println!("test psnr avg {} worst5 {}", fmt_f64(t.psnr_avg), fmt_f64(t.psnr_worst5));
            }
        }
        Command::ActiveRun(c) => {
            let log = commands::cmd_active_run(&load_config(&c)?)?;
            let m = &log.final_metrics;
            println!("selected {:?}", log.view_sequence());
            println!(
                "psnr avg {} worst5 {} ssim avg {:.4} worst5 {:.4}",
                fmt_f64(m.psnr_avg),
                fmt_f64(m.psnr_worst5),
                m.ssim_avg,
                m.ssim_worst5
            );
        }
        Command::Ablate(c) => {
            let r = commands::cmd_ablate(&load_config(&c)?)?;
            print!("{}", r.table_csv());
        }
        Command::Eval { run_dir, common } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
            let r = commands::cmd_eval(&run_dir, &out)?;
            println!(
                "psnr avg {} worst5 {} (max deviation {:e})",
                fmt_f64(r.report.psnr_avg),
                fmt_f64(r.report.psnr_worst5),
                r.max_abs_diff
            );
        }
        Command::Render { scene, common } => {
            let files = commands::cmd_render(&load_config(&common)?, scene.as_deref())?;
            println!("wrote {} files", files.len());
        }
        Command::TrainPredictor(c) => {
            let cfg = load_config(&c)?;
            commands::cmd_train_predictor(&cfg)?;
            println!("wrote {}", cfg.out_dir.join("predictor.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
