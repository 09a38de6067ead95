use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use smal::pipeline::recognition::{accuracy, pr_csv};
use smal::pipeline::{
    aliased_corpus, evaluate, load_demos, load_model, precision_recall, record_scripted, save_model, template_model,
    train, CorpusConfig, PolicyController, ScriptedOptions, TrainConfig,
};
use smal::service::{bind, serve, ServeConfig};
use smal::sim::{expert_path_len, run_episode, Heading, Pose, SimWorld};
use smal::{Error, Result};

#[derive(Parser)]
#[command(name = "smal", version, about = "Learn and run robot policies from demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn states, actions, rewards and a policy from demonstrations.
    Train(TrainArgs),
    /// Run a trained policy in a world.
    Run(RunArgs),
    /// Record a scripted expert demonstration.
    Demo(DemoArgs),
    /// Generate an aliased place-recognition corpus.
    Corpus(CorpusArgs),
    /// Build a recognition model with one state per window of labeled sequences.
    Enroll(EnrollArgs),
    /// Score a model on labeled query sequences; prints a precision/recall CSV.
    EvalRecognition(EvalArgs),
    /// Serve the teleoperation websocket protocol.
    Serve(ServeArgs),
}

#[derive(Args)]
struct MatchArgs {
    /// Observations per window and atoms per action.
    #[arg(long = "seq-len", short = 'l', alias = "l", default_value_t = 4)]
    seq_len: usize,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Group-mass threshold; defaults to 0.75 * seq-len.
    #[arg(long)]
    tau: Option<f64>,
}

impl MatchArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::for_seq_len(self.seq_len);
        if let Some(v) = self.lambda1 {
            cfg.matching.solver.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.matching.solver.lambda2 = v;
        }
        if let Some(v) = self.tau {
            cfg.matching.tau = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of demonstration files.
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    world: PathBuf,
    /// Tick budget per episode; defaults to 4x the expert path length.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Start pose `x,y,H`; may be repeated, trials cycle through them.
    #[arg(long = "start", value_parser = parse_pose)]
    starts: Vec<Pose>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Record the scripted expert. This is the only source the CLI offers;
    /// live operator demonstrations are recorded through `serve`.
    #[arg(long)]
    scripted: bool,
    /// Left turns appended after reaching the victim.
    #[arg(long, default_value_t = 0)]
    scan_turns: usize,
    /// Start pose `x,y,H` instead of the world's.
    #[arg(long, value_parser = parse_pose)]
    start: Option<Pose>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    /// Frames per place.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 2)]
    aliased: usize,
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long, default_value_t = 12)]
    noise: u8,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct EnrollArgs {
    /// Directory of labeled sequences.
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of labeled query sequences.
    #[arg(long)]
    queries: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    world: PathBuf,
    /// Model for the execute op.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "demos")]
    demo_dir: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    tick_hz: f64,
}

fn parse_pose(s: &str) -> std::result::Result<Pose, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [x, y, h] = parts.as_slice() else {
        return Err(format!("expected x,y,H, got {s:?}"));
    };
    let x = x.parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y = y.parse().map_err(|_| format!("bad y in {s:?}"))?;
    let h: Heading = h.parse().map_err(|e: Error| e.to_string())?;
    Ok(Pose::new(x, y, h))
}

fn world_name(path: &Path) -> String {
    path.display().to_string()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.matching.config()?;
    let demos = load_demos(&a.demos)?;
    log::info!("training on {} demonstrations with seq-len {}", demos.len(), cfg.seq_len);
    let model = train(&demos, &cfg)?;
    save_model(&model, &a.out)?;
    println!(
        "states={} actions={} policy_states={} reward_degenerate={} sweeps={}",
        model.num_states(),
        model.actions().len(),
        model.policy.actions.len(),
        model.reward_degenerate,
        model.policy.sweeps
    );
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let base = SimWorld::load(&a.world)?;
    let starts = if a.starts.is_empty() { vec![base.start()] } else { a.starts };
    println!("trial\tstart\tsuccess\tsteps\tticks\tcollisions");
    let mut successes = 0;
    for trial in 0..a.trials {
        let p = starts[trial % starts.len()];
        let mut world = base.clone().with_start(p)?;
        let budget = match a.budget {
            Some(b) => b,
            None => 4 * expert_path_len(&world)?,
        };
        let mut controller = PolicyController::new(&model);
        let r = run_episode(&mut world, &mut controller, budget)?;
        successes += usize::from(r.success);
        println!(
            "{trial}\t{},{},{}\t{}\t{}\t{}\t{}",
            p.x, p.y, p.heading, r.success, r.steps, r.ticks, r.collision_count
        );
    }
    println!("success_rate={:.3} ({successes}/{})", successes as f64 / a.trials.max(1) as f64, a.trials);
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> Result<()> {
    if !a.scripted {
        log::info!("recording the scripted expert; live demonstrations are recorded through `smal serve`");
    }
    let mut world = SimWorld::load(&a.world)?;
    if let Some(p) = a.start {
        world = world.with_start(p)?;
    }
    let demo = record_scripted(&mut world, world_name(&a.world), ScriptedOptions { scan_turns: a.scan_turns })?;
    demo.save(&a.out)?;
    println!("recorded {} atoms to {}", demo.k_stream.len(), a.out.display());
    Ok(())
}

fn cmd_corpus(a: CorpusArgs) -> Result<()> {
    let cfg = CorpusConfig {
        scenes: a.scenes,
        seq_len: a.frames,
        aliased_per_scene: a.aliased,
        queries_per_scene: a.queries,
        noise: a.noise,
        seed: a.seed,
    };
    let corpus = aliased_corpus(&cfg)?;
    for (dir, demos) in [("scenes", &corpus.scenes), ("queries", &corpus.queries)] {
        let dir = a.out.join(dir);
        std::fs::create_dir_all(&dir)?;
        for (i, d) in demos.iter().enumerate() {
            d.save(dir.join(format!("{i:04}.jsonl")))?;
        }
    }
    println!(
        "scenes={} queries={} aliased_fraction={:.3}",
        corpus.scenes.len(),
        corpus.queries.len(),
        corpus.aliased_fraction()
    );
    Ok(())
}

fn cmd_enroll(a: EnrollArgs) -> Result<()> {
    let cfg = a.matching.config()?;
    let sequences = load_demos(&a.sequences)?;
    let model = template_model(&sequences, &cfg)?;
    save_model(&model, &a.out)?;
    println!("enrolled {} windows", model.num_states());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let queries = load_demos(&a.queries)?;
    let outcomes = evaluate(&model, &queries)?;
    eprintln!("queries={} accuracy={:.4}", outcomes.len(), accuracy(&outcomes));
    print!("{}", pr_csv(&precision_recall(&outcomes)));
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let world = SimWorld::load(&a.world)?;
    let mut cfg = ServeConfig::new(world, world_name(&a.world));
    cfg.demo_dir = a.demo_dir;
    cfg.tick_hz = a.tick_hz;
    if let Some(m) = &a.model {
        cfg.model = Some(Arc::new(load_model(m)?));
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = bind(SocketAddr::new(a.host, a.port)).await?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        serve(listener, cfg, shutdown).await
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Run(a) => cmd_run(a),
        Command::Demo(a) => cmd_demo(a),
        Command::Corpus(a) => cmd_corpus(a),
        Command::Enroll(a) => cmd_enroll(a),
        Command::EvalRecognition(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
