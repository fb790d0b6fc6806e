use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoi_cli::{
    cmd_eval, cmd_flow_train, cmd_infer, cmd_latent_build, cmd_optimize, cmd_synth_gen, dump_meshes, EvalArgs,
    FlowTrainArgs, Selection, Stage, SynthGenArgs, Workspace, DATA_DIR_ENV,
};
use hoi_core::fit::OptimConfig;
use hoi_core::flow::train::TrainConfig;
use hoi_core::Error;

#[derive(Parser)]
#[command(
    name = "hoi",
    version,
    about = "Human-object spatial relation pipeline on synthetic scenes"
)]
struct Cli {
    /// Experiment directory holding all artifacts.
    #[arg(long, visible_alias = "out", global = true, env = DATA_DIR_ENV, default_value = "data")]
    dir: PathBuf,
    /// Worker threads for instance-level work; output order never depends on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the body model, anchors and train/test datasets.
    SynthGen(SynthGenFlags),
    /// Build per-category PCA latent spaces from the training set.
    LatentBuild {
        #[arg(long, default_value_t = 32)]
        k: usize,
    },
    /// Train the stacked flows and prediction heads.
    FlowTrain(FlowTrainFlags),
    /// Mode prediction plus offset-driven recovery on the test split.
    Infer {
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[command(flatten)]
        opt: OptFlags,
    },
    /// Refine inferred predictions against the 2D evidence.
    Optimize {
        #[command(flatten)]
        opt: OptFlags,
    },
    /// Procrustes-aligned Chamfer report for a prediction stage.
    Eval {
        #[arg(long, default_value = "optimize", value_parser = ["infer", "optimize"])]
        stage: String,
        #[arg(long, default_value_t = 2000)]
        body_samples: usize,
        #[arg(long, default_value_t = 2000)]
        object_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the predicted posed meshes as OBJ files here.
        #[arg(long)]
        obj_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthGenFlags {
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 200)]
    test_count: usize,
    #[arg(long, default_value_t = 12)]
    views: usize,
    #[arg(long, default_value_t = 1)]
    test_views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Human anchors m.
    #[arg(long, default_value_t = 128)]
    human_anchors: usize,
    /// Object anchors n per category.
    #[arg(long, default_value_t = 16)]
    object_anchors: usize,
    #[arg(long, default_value_t = 4)]
    categories: usize,
    /// Pixel noise of joints and correspondences.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
}

#[derive(Args)]
struct FlowTrainFlags {
    #[arg(long, default_value_t = 6)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_smpl: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_nll: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_exp: f64,
    /// Draws per datum for the sampled expectation terms.
    #[arg(long, default_value_t = 2)]
    samples: usize,
}

#[derive(Args)]
struct OptFlags {
    /// key = value file overriding the optimizer defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl OptFlags {
    fn load(&self) -> Result<OptimConfig, Error> {
        match &self.config {
            Some(p) => OptimConfig::load(p),
            None => Ok(OptimConfig::default()),
        }
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::InvalidMesh(_) => "invalid_mesh",
        Error::Degenerate(_) => "degenerate",
        Error::Dimension { .. } => "dimension",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::HashMismatch { .. } => "hash_mismatch",
        Error::Format(_) => "format",
        Error::NonFinite(_) => "non_finite",
        Error::NoValidPoints(_) => "no_valid_points",
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    let ws = Workspace::new(&cli.dir);
    let jobs = cli.jobs.max(1);
    Ok(match cli.command {
        Command::SynthGen(f) => {
            let mut noise = hoi_core::synth::NoiseConfig::default();
            noise.joint_sigma = f.sigma;
            noise.corr_sigma = f.sigma;
            let s = cmd_synth_gen(
                &ws,
                &SynthGenArgs {
                    count: f.count,
                    test_count: f.test_count,
                    views: f.views,
                    test_views: f.test_views,
                    seed: f.seed,
                    human_anchors: f.human_anchors,
                    object_anchors: f.object_anchors,
                    categories: f.categories,
                    noise,
                    jobs,
                    ..SynthGenArgs::default()
                },
            )?;
            serde_json::json!({
                "train_views": s.train_views,
                "test_views": s.test_views,
                "body_hash": format!("{:016x}", s.body_hash),
                "anchor_hash": format!("{:016x}", s.anchor_hash),
            })
        }
        Command::LatentBuild { k } => {
            let spectra = cmd_latent_build(&ws, k, jobs)?;
            for (c, s) in spectra.iter().enumerate() {
                let ratios: Vec<String> = s
                    .explained_variance_ratio
                    .iter()
                    .take(k)
                    .map(|r| format!("{r:.4}"))
                    .collect();
                eprintln!("category {c}: {}", ratios.join(" "));
            }
            serde_json::json!({
                "spaces": spectra.len(),
                "explained": spectra.iter().map(|s| s.cumulative(k)).collect::<Vec<_>>(),
            })
        }
        Command::FlowTrain(f) => {
            let args = FlowTrainArgs {
                train: TrainConfig {
                    epochs: f.epochs,
                    batch_size: f.batch,
                    learning_rate: f.lr,
                    seed: f.seed,
                    lambda_smpl: f.lambda_smpl,
                    lambda_nll: f.lambda_nll,
                    lambda_gamma: f.lambda_gamma,
                    lambda_exp: f.lambda_exp,
                    samples: f.samples,
                    ..TrainConfig::default()
                },
                hidden: f.hidden,
                blocks: f.blocks,
                holdout_fraction: f.holdout,
                jobs,
            };
            let out = cmd_flow_train(&ws, &args)?;
            serde_json::json!({
                "initial_holdout_nll": out.history.initial_holdout_nll,
                "final_holdout_nll": out.history.final_holdout_nll(),
                "shuffled_condition_nll": out.shuffled_nll,
            })
        }
        Command::Infer { limit, view, opt } => {
            let set = cmd_infer(&ws, Selection { limit, view }, &opt.load()?, jobs)?;
            serde_json::json!({ "predictions": set.predictions.len() })
        }
        Command::Optimize { opt } => {
            let set = cmd_optimize(&ws, &opt.load()?, jobs)?;
            let diverged = set.predictions.iter().filter(|p| p.diverged).count();
            serde_json::json!({ "predictions": set.predictions.len(), "diverged": diverged })
        }
        Command::Eval {
            stage,
            body_samples,
            object_samples,
            seed,
            obj_dir,
        } => {
            let stage = if stage == "infer" {
                Stage::Infer
            } else {
                Stage::Optimize
            };
            let report = cmd_eval(
                &ws,
                stage,
                &EvalArgs {
                    body_samples,
                    object_samples,
                    seed,
                    jobs,
                },
            )?;
            if let Some(dir) = obj_dir {
                dump_meshes(&ws, stage, &dir)?;
            }
            serde_json::to_value(&report.summary).expect("summary serializes")
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": kind(&e), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
