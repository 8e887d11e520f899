use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use celu::harness::experiment::{parse_transport, parse_widths, parse_xi, prepare_data};
use celu::harness::metrics::to_csv;
use celu::harness::{
    run_experiment, theoretical_delta, variance_probe, DataSpec, DiagnosticsConfig, ExperimentConfig,
    VarianceProbeConfig,
};
use celu::protocol::{run_training, Algorithm, ModelSnapshot, Schedule, TrainConfig, Weighting};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "celu", version, about = "Two-party vertical federated learning with cached local updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its metrics CSV.
    Train(Box<TrainArgs>),
    /// Run every cell of a key = value experiment file.
    Experiment { config: PathBuf },
    /// Diagnostic calculators and probes.
    #[command(subcommand)]
    Probe(Probe),
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value = "celu")]
    algo: Algorithm,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Updates per mini-batch R, counting the exchange update.
    #[arg(long, default_value_t = 5)]
    local_steps: usize,
    /// Workset capacity W.
    #[arg(long, default_value_t = 5)]
    workset: usize,
    /// Weighting threshold in degrees, or `off`.
    #[arg(long, default_value = "60")]
    xi: String,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    dz: usize,
    /// Bottom hidden widths, e.g. `32` or `64x32`.
    #[arg(long, default_value = "32")]
    bottom_hidden: String,
    /// Top hidden widths; `none` for a single layer.
    #[arg(long, default_value = "none")]
    top_hidden: String,
    /// Link bandwidth in bits per second.
    #[arg(long, default_value_t = 300e6)]
    bandwidth: f64,
    /// One-way latency in seconds.
    #[arg(long, default_value_t = 0.0)]
    latency: f64,
    /// `inproc` or `socket`.
    #[arg(long, default_value = "inproc")]
    transport: String,
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: String,
    /// `deterministic` or `concurrent`.
    #[arg(long, default_value = "deterministic")]
    mode: Schedule,
    /// Sleep for the simulated delay as well as charging it.
    #[arg(long)]
    real_sleep: bool,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    /// Simulated seconds charged per model update.
    #[arg(long, default_value_t = 0.0)]
    compute_cost: f64,
    /// `synth:n,dA,dB[,seed]` or `csv:PATH`.
    #[arg(long, default_value = "synth:20000,12,8")]
    data: String,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    a_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    b_cols: Vec<String>,
    /// Fraction of rows held out for AUC.
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl TrainArgs {
    fn config(&self) -> celu::Result<TrainConfig> {
        let mut c = TrainConfig {
            algorithm: self.algo,
            batch_size: self.batch_size,
            local_steps: self.local_steps,
            workset: self.workset,
            xi_degrees: parse_xi(&self.xi)?,
            lr: self.lr,
            epochs: self.epochs,
            max_rounds: self.max_rounds,
            seed: self.seed,
            d_z: self.dz,
            eval_every: self.eval_every,
            schedule: self.mode,
            compute_cost_s: self.compute_cost,
            ..TrainConfig::default()
        };
        c.shape.bottom_hidden = parse_widths(&self.bottom_hidden)?;
        c.shape.top_hidden = parse_widths(&self.top_hidden)?;
        c.channel.bandwidth_bps = self.bandwidth;
        c.channel.latency_s = self.latency;
        c.channel.mode = parse_transport(&self.transport)?;
        c.channel.socket_addr = self.addr.clone();
        c.channel.real_sleep = self.real_sleep;
        c.validate()?;
        Ok(c)
    }

    fn data(&self) -> celu::Result<DataSpec> {
        Ok(DataSpec::parse(&self.data)?.with_columns(self.label_col.as_deref(), &self.a_cols, &self.b_cols))
    }
}

#[derive(Subcommand)]
enum Probe {
    /// Monte-Carlo check of the variance decomposition at initialization.
    Variance {
        #[arg(long, default_value = "synth:200,12,8")]
        data: String,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 4)]
        workset: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value = "off")]
        xi: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        dz: usize,
    },
    /// Evaluate the convergence factor Δ.
    Delta {
        #[arg(long)]
        lipschitz: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        dim: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        batch_size: usize,
        #[arg(long)]
        workset: usize,
        #[arg(long)]
        rho: f64,
    },
    /// Train with gradient-cosine diagnostics and print the ρ estimates.
    Rho(Box<TrainArgs>),
}

fn train(args: &TrainArgs) -> celu::Result<()> {
    let config = args.config()?;
    let (train, eval) = prepare_data(&args.data()?, args.holdout)?;
    let run = run_training(&config, &train, eval.as_ref())?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("metrics.csv");
    fs::write(&path, to_csv(&run.records))?;
    let last = run.records.last().expect("round 0 is always recorded");
    println!(
        "rounds {} local_steps {} bytes {} simulated_time_s {:.6} train_loss {:.6} eval_auc {:.6}",
        last.round, last.local_steps, last.bytes_sent, last.simulated_time_s, last.train_loss, last.eval_auc
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn probe(p: &Probe) -> celu::Result<()> {
    match p {
        Probe::Variance { data, batch_size, workset, trials, lr, xi, seed, dz } => {
            let data = DataSpec::parse(data)?.load()?;
            let c = TrainConfig { seed: *seed, d_z: *dz, ..TrainConfig::default() };
            c.validate()?;
            let snapshot = ModelSnapshot::initial(&c, data.d_a(), data.d_b())?;
            let cfg = VarianceProbeConfig {
                batch_size: *batch_size,
                workset: *workset,
                trials: *trials,
                lr: *lr,
                weighting: Weighting::from_xi(parse_xi(xi)?)?,
                seed: *seed,
            };
            let r = variance_probe(&data, &snapshot, &cfg)?;
            println!("lhs {}", r.lhs);
            println!("term_sampling {}", r.term_sampling);
            println!("term_staleness {}", r.term_staleness);
            println!("bound {}", r.bound());
            println!("trials_holding {}/{}", r.trials_holding, r.trials);
        }
        Probe::Delta { lipschitz, sigma, dim, delta, batch_size, workset, rho } => {
            let diag = DiagnosticsConfig { lipschitz: *lipschitz, sigma: *sigma, dim: *dim, delta: *delta };
            println!("{}", theoretical_delta(&diag, *batch_size, *workset, *rho)?);
        }
        Probe::Rho(args) => {
            let mut config = args.config()?;
            config.diagnostics = true;
            config.schedule = Schedule::Deterministic;
            let (train, eval) = prepare_data(&args.data()?, args.holdout)?;
            let run = run_training(&config, &train, eval.as_ref())?;
            println!("round,rho_estimate");
            for r in &run.records {
                println!("{},{}", r.round, r.rho_estimate.map(|v| v.to_string()).unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(args) => train(args),
        Command::Experiment { config } => ExperimentConfig::load(config).and_then(|c| {
            let report = run_experiment(&c)?;
            println!("wrote {} runs and {}", report.run_files.len(), report.summary_file.display());
            Ok(())
        }),
        Command::Probe(p) => probe(p),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
