use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rave_core::env::ToyEnv;
use rave_lab::harness::{self, greedy_return, start_estimates, CHECKPOINT_FILE};
use rave_lab::metrics::format_float;
use rave_lab::{Overrides, Result, RunConfig, Trainer};

#[derive(Parser)]
#[command(name = "rave", version, about = "Value-expansion experiments on the toy task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed, or continue a saved run.
    Train {
        /// TOML file of configuration keys; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue the run saved in this directory instead of starting
        /// fresh (only --total-steps is honoured).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compute (or read from the cache) the ground-truth start-state values.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate the checkpoint of a finished run.
    Eval {
        /// Run directory holding checkpoint.bin.
        run: PathBuf,
        /// Greedy episodes to average.
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
}

fn train(config: Option<PathBuf>, resume: Option<PathBuf>, overrides: Overrides) -> Result<()> {
    let summaries = match resume {
        Some(dir) => vec![harness::resume(&dir, overrides.total_steps)?],
        None => {
            let config = RunConfig::resolve(config.as_deref(), &overrides)?;
            harness::run_experiment(&config)?
        }
    };
    for s in summaries {
        let tail = match &s.last_row {
            Some(r) => format!(
                " q_s0_right={} (oracle {}) q_s0_left={} (oracle {})",
                format_float(r.q_right),
                format_float(r.oracle_right),
                format_float(r.q_left),
                format_float(r.oracle_left)
            ),
            None => String::new(),
        };
        println!(
            "seed {}: {} env steps, {} episodes -> {}{tail}",
            s.seed,
            s.counters.env_steps,
            s.counters.episodes,
            s.run_dir.display()
        );
    }
    Ok(())
}

fn oracle(config: Option<PathBuf>, overrides: Overrides) -> Result<()> {
    let config = RunConfig::resolve(config.as_deref(), &overrides)?;
    let v = harness::oracle_for(&config)?;
    println!("k={} gamma={}", config.noise, config.gamma);
    println!(
        "Q*(s0, +1) = {} +- {}",
        format_float(v.right),
        format_float(v.right_stderr)
    );
    println!(
        "Q*(s0, -1) = {} +- {}",
        format_float(v.left),
        format_float(v.left_stderr)
    );
    Ok(())
}

fn eval(run: PathBuf, episodes: usize) -> Result<()> {
    let path = run.join(CHECKPOINT_FILE);
    let bytes = rave_lab::checkpoint::read_file(&path)?;
    let probe =
        Trainer::from_bytes(&bytes, Default::default(), None).map_err(|message| rave_lab::LabError::Format {
            path: path.clone(),
            message,
        })?;
    let oracle = harness::oracle_for(probe.config())?;
    let q = start_estimates(probe.agent(), probe.config().eval_mean_critic())?;
    let mut env = ToyEnv::new(probe.config().toy(), probe.seed())?;
    let mut total = 0.0;
    for _ in 0..episodes {
        total += greedy_return(probe.agent(), &mut env)?;
    }
    let c = probe.counters();
    println!(
        "{}: {} env steps, {} learner steps",
        run.display(),
        c.env_steps,
        c.learner_steps
    );
    for (name, est, truth) in [("+1", q.right, oracle.right), ("-1", q.left, oracle.left)] {
        println!(
            "Q(s0, {name}) = {}  oracle {}  bias {}",
            format_float(est),
            format_float(truth),
            format_float(est - truth)
        );
    }
    let grid: Vec<String> = (-4..=4)
        .map(|s| {
            let a = probe
                .agent()
                .select_action(&[s as f64], false, &mut rave_core::rng::stream(0, 0));
            a.map(|a| format!("{s}:{:+.2}", a[0]))
        })
        .collect::<std::result::Result<_, _>>()?;
    println!("policy {}", grid.join(" "));
    if episodes > 0 {
        println!(
            "mean greedy return over {episodes} episodes: {}",
            format_float(total / episodes as f64)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            resume,
            overrides,
        } => train(config, resume, overrides),
        Command::Oracle { config, overrides } => oracle(config, overrides),
        Command::Eval { run, episodes } => eval(run, episodes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
