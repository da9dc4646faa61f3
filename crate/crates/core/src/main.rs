use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use continual::fetch;
use continual::harness::config::{parse_lambda_spec, parse_method_list};
use continual::harness::emit::{self, Format};
use continual::harness::sweep::{default_grid, lambda_sweep};
use continual::harness::{run_experiment, ExperimentConfig};
use continual::methods::MethodName;
use continual::significance::FisherLabels;

#[derive(Parser)]
#[command(name = "continual", version, about = "Sequential-training experiments on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV/JSON results.
    Run(RunArgs),
    /// Run a coarse λ sweep for one method.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Method to sweep.
        #[arg(long)]
        method: String,
        /// Comma-separated λ values; a per-method decade grid by default.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Download the MNIST IDX files and verify their SHA-256.
    FetchData {
        #[arg(long, default_value = "data/mnist")]
        dir: PathBuf,
        #[arg(long, default_value = fetch::DEFAULT_BASE_URL)]
        base_url: String,
    },
    /// Aggregate records.csv / records.json files from earlier runs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    /// e.g. sgd,ewc-s,ewc-f,wva-s,wva-f
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    /// One value for every method, or method=value pairs.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the first N training examples.
    #[arg(long)]
    subsample: Option<usize>,
    /// Keep the first N test examples.
    #[arg(long)]
    subsample_test: Option<usize>,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Comma-separated layer sizes, input first.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    fisher_labels: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    persist_stores: bool,
    #[arg(long, value_enum, default_value = "both")]
    format: FormatArg,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(e) = &self.experiment {
            c.experiment = e.parse()?;
        }
        if let Some(m) = &self.methods {
            c.methods = parse_method_list(m)?;
        }
        if let Some(l) = &self.lambda {
            c.lambda.extend(parse_lambda_spec(l, &c.methods)?);
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() { c.$field = v; }
            )*};
        }
        set!(tasks => tasks, passes => passes, lr => learning_rate, batch_size => batch_size,
             epochs => epochs, seed => seed, eval_interval => eval_interval,
             data_dir => data_dir, out => out, jobs => jobs);
        if self.subsample.is_some() {
            c.subsample = self.subsample;
        }
        if self.subsample_test.is_some() {
            c.subsample_test = self.subsample_test;
        }
        if self.early_stop {
            c.early_stop.enabled = true;
        }
        if self.patience.is_some() {
            c.early_stop.patience = self.patience;
        }
        if let Some(l) = &self.layers {
            c.layer_sizes = l
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("bad --layers {l:?}"))?;
        }
        if let Some(f) = &self.fisher_labels {
            c.fisher_labels = f.parse::<FisherLabels>()?;
        }
        if self.persist_stores {
            c.persist_stores = true;
        }
        c.validate()?;
        Ok(c)
    }

    fn formats(&self) -> Vec<Format> {
        match self.format {
            FormatArg::Csv => vec![Format::Csv],
            FormatArg::Json => vec![Format::Json],
            FormatArg::Both => vec![Format::Csv, Format::Json],
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.config()?;
    let results = run_experiment(&config)?;
    for path in emit::emit_results(&results, &config.out, &args.formats())? {
        println!("wrote {}", path.display());
    }
    print!("{}", emit::summary_csv(&results.records));
    Ok(())
}

fn sweep(args: RunArgs, method: &str, grid: Option<&str>) -> Result<()> {
    let config = args.config()?;
    let method: MethodName = method.parse()?;
    let grid = match grid {
        Some(g) => g
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("bad --grid {g:?}"))?,
        None => default_grid(method),
    };
    let base = continual::harness::run::load_base(&config)?;
    let result = lambda_sweep(&config, &base, method, &grid)?;
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))?;
    let path = config.out.join(format!("sweep-{method}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("lambda,score");
    for p in &result.points {
        match p.score {
            Some(s) => println!("{},{s}", p.lambda),
            None => println!("{},failed", p.lambda),
        }
    }
    if let Some(best) = result.best() {
        println!("best lambda for {method}: {}", best.lambda);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep { run, method, grid } => sweep(run, &method, grid.as_deref()),
        Command::FetchData { dir, base_url } => fetch::fetch_mnist(&dir, &base_url)
            .map(|written| {
                for p in written {
                    println!("wrote {}", p.display());
                }
            })
            .map_err(Into::into),
        Command::Report { inputs, out } => emit::report(&inputs)
            .map_err(anyhow::Error::from)
            .and_then(|csv| match out {
                Some(path) => std::fs::write(&path, csv)
                    .with_context(|| format!("writing {}", path.display())),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
