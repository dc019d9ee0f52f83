//! `iwil`: train base policies, adapt them to a held-out task, and export
//! datasets, metrics and weight traces as CSV.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_file, resolve, ConfigError, Preset, RunConfig};
use iwil::dagger::{adapt, baseline_dagger, baseline_finetune, evaluate, train_base};
use iwil::envs::{Actor, ExpertActor, TaskSpec};
use iwil::experiments::{corruption_study, score_checkpoints, MethodReport};
use iwil::io;

#[derive(Parser, Debug)]
#[command(
    name = "iwil",
    version,
    about = "Importance-weighted meta-imitation learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the base policy with DAGGER over the training tasks.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Adapt to the held-out task and run both baselines next to it.
    Adapt {
        #[command(flatten)]
        run: RunArgs,
        /// Base parameters from `train`; trained from scratch if omitted.
        #[arg(long, requires = "dataset")]
        theta: Option<PathBuf>,
        /// Aggregated training set from `train`.
        #[arg(long, requires = "theta")]
        dataset: Option<PathBuf>,
        /// Also score every method on fresh rollouts after 1, 2 and all trials.
        #[arg(long)]
        table: bool,
    },
    /// Score a parameter file, or the scripted expert, on one task.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// `params_*.bin` file, or `expert`.
        #[arg(long)]
        params: String,
        /// Score on training task `i` instead of the held-out task.
        #[arg(long)]
        train_task: Option<usize>,
    },
    /// Train on label-corrupted data, adapt, and export the weights.
    CorruptExp {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Turn a weight CSV into an iteration x sample matrix for plotting.
    DumpWeights {
        /// `weights.csv` or `weight_trace.csv`.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// File of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "K", short = 'K')]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    tau_hat: Option<usize>,
    #[arg(long)]
    n_train_tasks: Option<usize>,
    #[arg(long)]
    trajectories_per_task: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "A", short = 'A')]
    a: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
    #[arg(long)]
    override_threshold: Option<f64>,
    #[arg(long)]
    corrupt_frac: Option<f64>,
    #[arg(long)]
    test_trials: Option<usize>,
    #[arg(long)]
    eval_trials: Option<usize>,
}

impl RunArgs {
    fn flag_settings(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        let s = |v: &Option<f64>| v.map(|x| x.to_string());
        let u = |v: &Option<usize>| v.map(|x| x.to_string());
        put("seed", self.seed.map(|x| x.to_string()));
        put("alpha", s(&self.alpha));
        put("beta", s(&self.beta));
        put("gamma", s(&self.gamma));
        put("K", u(&self.k));
        put("tau", u(&self.tau));
        put("tau_hat", u(&self.tau_hat));
        put("n_train_tasks", u(&self.n_train_tasks));
        put("trajectories_per_task", u(&self.trajectories_per_task));
        put("d", u(&self.d));
        put("A", u(&self.a));
        put("episode_len", u(&self.episode_len));
        put("override_threshold", s(&self.override_threshold));
        put("corrupt_frac", s(&self.corrupt_frac));
        put("test_trials", u(&self.test_trials));
        put("eval_trials", u(&self.eval_trials));
        put("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        out
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
                parse_file(&text)?
            }
            None => Vec::new(),
        };
        Ok(resolve(self.preset, &file, &self.flag_settings())?)
    }
}

/// Error with its process exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Shape(String),
}

impl Failure {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Shape(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Shape(m) => write!(f, "shape error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<iwil::Error> for Failure {
    fn from(e: iwil::Error) -> Self {
        match e {
            iwil::Error::DimensionMismatch { .. } => Failure::Shape(e.to_string()),
            iwil::Error::Io(_) | iwil::Error::Format(_) => Failure::Io(e.to_string()),
            iwil::Error::Empty(_) | iwil::Error::InvalidArgument { .. } => Failure::Config(e.to_string()),
        }
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, f: impl FnOnce(BufWriter<File>) -> iwil::Result<()>) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Failure::io(&path, e))?;
        f(BufWriter::new(file)).map_err(|e| match e {
            iwil::Error::Io(m) => Failure::io(&path, m),
            other => other.into(),
        })?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn cmd_train(run: &RunArgs) -> Result<(), Failure> {
    let cfg = run.resolve()?;
    let scn = cfg.scenario();
    let (theta, data) = train_base(&scn.train_tasks()?, &scn.train)?;
    let out = Output::new(&cfg.out_dir)?;
    out.write("params_theta_star.bin", |w| io::write_params(w, &theta))?;
    out.write("dataset.csv", |w| io::write_dataset(w, &data))?;
    println!(
        "trained on {} samples, training accuracy {:.3}",
        data.len(),
        theta.accuracy(&data)?
    );
    Ok(())
}

fn cmd_adapt(run: &RunArgs, theta: Option<&Path>, dataset: Option<&Path>, table: bool) -> Result<(), Failure> {
    let cfg = run.resolve()?;
    let scn = cfg.scenario();
    let tasks = scn.train_tasks()?;
    let test = scn.test_task()?;
    let (theta_star, train_data) = match (theta, dataset) {
        (Some(t), Some(d)) => (io::read_params(open(t)?)?, io::read_dataset(open(d)?)?),
        _ => train_base(&tasks, &scn.train)?,
    };
    let ours = adapt(&theta_star, &train_data, &test, &scn.train)?;
    let dagger = baseline_dagger(&tasks, &test, &scn.train)?;
    let finetune = baseline_finetune(&test, &scn.train)?;

    let out = Output::new(&cfg.out_dir)?;
    out.write("metrics_ours.csv", |w| io::write_metrics(w, "ours", &ours.metrics))?;
    out.write("metrics_dagger.csv", |w| {
        io::write_metrics(w, "dagger", &dagger.metrics)
    })?;
    out.write("metrics_finetune.csv", |w| {
        io::write_metrics(w, "finetune", &finetune.metrics)
    })?;
    let last: Vec<_> = ours.weight_trace.last().cloned().into_iter().collect();
    out.write("weights.csv", |w| io::write_weights(w, &last, &train_data))?;
    out.write("weight_trace.csv", |w| {
        io::write_weights(w, &ours.weight_trace, &train_data)
    })?;
    out.write("params_theta_star.bin", |w| io::write_params(w, &theta_star))?;
    out.write("params_ours.bin", |w| io::write_params(w, &ours.final_params))?;
    out.write("params_dagger.bin", |w| io::write_params(w, &dagger.params))?;
    out.write("params_finetune.bin", |w| io::write_params(w, &finetune.params))?;

    for (name, m) in [
        ("ours", &ours.metrics),
        ("dagger", &dagger.metrics),
        ("finetune", &finetune.metrics),
    ] {
        println!(
            "{name:<9} test-trial accuracy {:.3}, overrides {}",
            m.accuracy(),
            m.overrides()
        );
    }
    if table {
        let n = scn.train.test_trials;
        let mut at: Vec<usize> = [1, 2, n].into_iter().filter(|t| *t >= 1 && *t <= n).collect();
        at.dedup();
        let report =
            |method, checkpoints: &[iwil::policy::PolicyParams], metrics: &iwil::dagger::EvalMetrics, params| {
                Ok::<_, Failure>(MethodReport {
                    method,
                    trial_metrics: metrics.clone(),
                    accuracy_after: score_checkpoints(checkpoints, &at, &test, &scn)?,
                    params,
                })
            };
        let reports = [
            report("dagger", &dagger.checkpoints, &dagger.metrics, dagger.params.clone())?,
            report(
                "finetune",
                &finetune.checkpoints,
                &finetune.metrics,
                finetune.params.clone(),
            )?,
            report("ours", &ours.checkpoints, &ours.metrics, ours.final_params.clone())?,
        ];
        out.write("table.csv", |w| {
            io::write_accuracy_table(w, &reports.iter().collect::<Vec<_>>())
        })?;
        for r in &reports {
            let cells: Vec<String> = r.accuracy_after.iter().map(|(t, a)| format!("{t}: {a:.3}")).collect();
            println!("{:<9} accuracy after trials {}", r.method, cells.join(", "));
        }
    }
    Ok(())
}

fn cmd_eval(run: &RunArgs, params: &str, train_task: Option<usize>) -> Result<(), Failure> {
    let cfg = run.resolve()?;
    let scn = cfg.scenario();
    let task: TaskSpec = match train_task {
        Some(i) => scn
            .train_tasks()?
            .into_iter()
            .nth(i)
            .ok_or_else(|| Failure::Config(format!("there are only {} training tasks", scn.train.n_train_tasks)))?,
        None => scn.test_task()?,
    };
    let loaded;
    let mut expert = ExpertActor;
    let actor: &mut dyn Actor = if params == "expert" {
        &mut expert
    } else {
        loaded = io::read_params(open(Path::new(params))?)?;
        if loaded.dim() != task.dim() || loaded.actions() != task.actions() {
            return Err(Failure::Shape(format!(
                "parameters are {}x{}, the task needs {}x{}",
                loaded.actions(),
                loaded.dim(),
                task.actions(),
                task.dim()
            )));
        }
        &mut &loaded
    };
    let m = evaluate(actor, &task, scn.train.eval_trials, scn.eval_seed())?;
    let out = Output::new(&cfg.out_dir)?;
    out.write("metrics_eval.csv", |w| io::write_metrics(w, "eval", &m))?;
    println!(
        "accuracy {:.4} overrides {} over {} trials",
        m.accuracy(),
        m.overrides(),
        m.trials.len()
    );
    Ok(())
}

fn cmd_corrupt(run: &RunArgs) -> Result<(), Failure> {
    let mut cfg = run.resolve()?;
    if run.corrupt_frac.is_none() && cfg.train.corrupt_frac == 0.0 {
        cfg.train.corrupt_frac = 0.5;
    }
    let r = corruption_study(&cfg.scenario())?;
    let out = Output::new(&cfg.out_dir)?;
    out.write("dataset.csv", |w| io::write_dataset(w, &r.train_data))?;
    let last: Vec<_> = r.adapt.weight_trace.last().cloned().into_iter().collect();
    out.write("weights.csv", |w| io::write_weights(w, &last, &r.train_data))?;
    out.write("weight_trace.csv", |w| {
        io::write_weights(w, &r.adapt.weight_trace, &r.train_data)
    })?;
    let n = r.train_data.len() as f64;
    println!(
        "mean weight x N: corrupted {:.4}, clean {:.4}",
        r.mean_weight_corrupted * n,
        r.mean_weight_clean * n
    );
    Ok(())
}

fn cmd_dump(weights: &Path, out_dir: &Path) -> Result<(), Failure> {
    let trace = io::read_weights(open(weights)?)?;
    let out = Output::new(out_dir)?;
    out.write("weight_matrix.csv", |w| io::write_weight_matrix(w, &trace))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { run } => cmd_train(&run),
        Command::Adapt {
            run,
            theta,
            dataset,
            table,
        } => cmd_adapt(&run, theta.as_deref(), dataset.as_deref(), table),
        Command::Eval {
            run,
            params,
            train_task,
        } => cmd_eval(&run, &params, train_task),
        Command::CorruptExp { run } => cmd_corrupt(&run),
        Command::DumpWeights { weights, out_dir } => cmd_dump(&weights, &out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iwil: {e}");
            ExitCode::from(e.code())
        }
    }
}
