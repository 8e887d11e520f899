use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{mean_std, rounds_to_target, to_csv, MetricsRecord, Target};
use crate::dataio::{generate_synthetic, load_csv, AlignedDataset};
use crate::error::{Error, Result};
use crate::protocol::{run_training, Algorithm, Schedule, TrainConfig};
use crate::transport::TransportMode;

/// Header of the experiment summary CSV.
pub const SUMMARY_HEADER: &str =
    "algorithm,local_steps,workset,xi,target,seeds,reached,rounds_mean,rounds_stddev,reduction_pct,status";

/// Where a run's rows come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Synthetic { n: usize, d_a: usize, d_b: usize, seed: u64 },
    Csv { path: PathBuf, label: String, a_cols: Vec<String>, b_cols: Vec<String> },
}

impl DataSpec {
    /// `synth:n,dA,dB[,seed]` or `csv:PATH`. CSV columns default to label
    /// `label`, party A `a_*` and party B `b_*`; see [`DataSpec::with_columns`].
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("synth:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if !(3..=4).contains(&parts.len()) {
                return Err(Error::Config(format!("expected synth:n,dA,dB[,seed], got {spec:?}")));
            }
            let num = |s: &str| parse_num::<usize>("synthetic size", s);
            Ok(DataSpec::Synthetic {
                n: num(parts[0])?,
                d_a: num(parts[1])?,
                d_b: num(parts[2])?,
                seed: parts.get(3).map(|s| parse_num("data seed", s)).transpose()?.unwrap_or(0),
            })
        } else if let Some(path) = spec.strip_prefix("csv:") {
            Ok(DataSpec::Csv {
                path: PathBuf::from(path),
                label: "label".into(),
                a_cols: Vec::new(),
                b_cols: Vec::new(),
            })
        } else {
            Err(Error::Config(format!("data must be synth:... or csv:..., got {spec:?}")))
        }
    }

    /// Sets explicit CSV columns; ignored for synthetic data.
    pub fn with_columns(mut self, label_col: Option<&str>, a: &[String], b: &[String]) -> Self {
        if let DataSpec::Csv { label, a_cols, b_cols, .. } = &mut self {
            if let Some(l) = label_col {
                *label = l.to_string();
            }
            if !a.is_empty() {
                *a_cols = a.to_vec();
            }
            if !b.is_empty() {
                *b_cols = b.to_vec();
            }
        }
        self
    }

    pub fn load(&self) -> Result<AlignedDataset> {
        match self {
            DataSpec::Synthetic { n, d_a, d_b, seed } => generate_synthetic(*n, *d_a, *d_b, *seed),
            DataSpec::Csv { path, label, a_cols, b_cols } => {
                let (a, b) = if a_cols.is_empty() || b_cols.is_empty() {
                    prefixed_columns(path)?
                } else {
                    (a_cols.clone(), b_cols.clone())
                };
                let a: Vec<&str> = a.iter().map(String::as_str).collect();
                let b: Vec<&str> = b.iter().map(String::as_str).collect();
                load_csv(path, label, &a, &b)
            }
        }
    }
}

fn prefixed_columns(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or_default();
    let pick = |prefix: &str| -> Vec<String> {
        header
            .split(',')
            .map(str::trim)
            .filter(|c| c.starts_with(prefix))
            .map(String::from)
            .collect()
    };
    Ok((pick("a_"), pick("b_")))
}

fn parse_num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{what}: cannot parse {s:?}")))
}

/// `off` (or `none`) disables weighting; otherwise an angle in degrees.
pub fn parse_xi(s: &str) -> Result<Option<f64>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "off" | "none" => Ok(None),
        v => parse_num("xi", v).map(Some),
    }
}

pub fn parse_transport(s: &str) -> Result<TransportMode> {
    match s.trim() {
        "inproc" => Ok(TransportMode::InProcess),
        "socket" => Ok(TransportMode::Socket),
        other => Err(Error::Config(format!("transport must be inproc or socket, got {other:?}"))),
    }
}

/// Hidden widths such as `32` or `64x32`; empty or `none` for no hidden layer.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split('x').map(|w| parse_num("layer width", w)).collect()
}

fn xi_label(xi: Option<f64>) -> String {
    xi.map_or_else(|| "off".to_string(), |x| x.to_string())
}

/// How the rounds-to-target threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetSpec {
    Fixed(Target),
    /// Train loss the vanilla run with the same seed records at this round.
    VanillaLossAt(u64),
}

/// One `(algorithm, R, W, ξ)` cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub local_steps: usize,
    pub workset: usize,
    pub xi: Option<f64>,
}

impl Cell {
    /// Collapses the knobs an algorithm ignores, so the grid holds no
    /// invalid or duplicate cells.
    fn normalized(self) -> Self {
        match self.algorithm {
            Algorithm::Vanilla => Cell { local_steps: 1, workset: 1, xi: None, ..self },
            Algorithm::FedBcd => Cell { workset: 1, xi: None, ..self },
            Algorithm::Celu => self,
        }
    }

    pub fn label(&self) -> String {
        format!("{}_R{}_W{}_xi{}", self.algorithm, self.local_steps, self.workset, xi_label(self.xi))
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm,
            local_steps: self.local_steps,
            workset: self.workset,
            xi_degrees: self.xi,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub base: TrainConfig,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    /// Fraction of rows, taken from the end, held out for AUC.
    pub holdout: f64,
    pub target: TargetSpec,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Parses flat `key = value` lines; `#` starts a comment. Keys mirror the
    /// `train` flags (`-` and `_` are interchangeable). `algo`, `local_steps`,
    /// `workset`, `xi` and `seed` take comma lists whose cartesian product
    /// forms the grid.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let key = k.trim().replace('-', "_");
            if kv.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", no + 1)));
            }
        }
        let mut take = |key: &str| kv.remove(key);
        let list = |v: Option<String>, default: &str| -> Vec<String> {
            v.unwrap_or_else(|| default.to_string())
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };

        let mut base = TrainConfig::default();
        if let Some(v) = take("batch_size") {
            base.batch_size = parse_num("batch_size", &v)?;
        }
        if let Some(v) = take("lr") {
            base.lr = parse_num("lr", &v)?;
        }
        if let Some(v) = take("epochs") {
            base.epochs = parse_num("epochs", &v)?;
        }
        if let Some(v) = take("max_rounds") {
            base.max_rounds = Some(parse_num("max_rounds", &v)?);
        }
        if let Some(v) = take("dz") {
            base.d_z = parse_num("dz", &v)?;
        }
        if let Some(v) = take("bottom_hidden") {
            base.shape.bottom_hidden = parse_widths(&v)?;
        }
        if let Some(v) = take("top_hidden") {
            base.shape.top_hidden = parse_widths(&v)?;
        }
        if let Some(v) = take("bandwidth") {
            base.channel.bandwidth_bps = parse_num("bandwidth", &v)?;
        }
        if let Some(v) = take("latency") {
            base.channel.latency_s = parse_num("latency", &v)?;
        }
        if let Some(v) = take("transport") {
            base.channel.mode = parse_transport(&v)?;
        }
        if let Some(v) = take("mode") {
            base.schedule = v.parse::<Schedule>()?;
        }
        if let Some(v) = take("eval_every") {
            base.eval_every = parse_num("eval_every", &v)?;
        }
        if let Some(v) = take("compute_cost") {
            base.compute_cost_s = parse_num("compute_cost", &v)?;
        }
        if let Some(v) = take("diagnostics") {
            base.diagnostics = parse_num("diagnostics", &v)?;
        }

        let algos = list(take("algo"), "celu")
            .iter()
            .map(|s| s.parse::<Algorithm>())
            .collect::<Result<Vec<_>>>()?;
        let rs = list(take("local_steps"), "5")
            .iter()
            .map(|s| parse_num::<usize>("local_steps", s))
            .collect::<Result<Vec<_>>>()?;
        let ws = list(take("workset"), "5")
            .iter()
            .map(|s| parse_num::<usize>("workset", s))
            .collect::<Result<Vec<_>>>()?;
        let xis = list(take("xi"), "60")
            .iter()
            .map(|s| parse_xi(s))
            .collect::<Result<Vec<_>>>()?;
        let seeds = list(take("seed"), "0")
            .iter()
            .map(|s| parse_num::<u64>("seed", s))
            .collect::<Result<Vec<_>>>()?;

        let mut cells: Vec<Cell> = Vec::new();
        for &algorithm in &algos {
            for &local_steps in &rs {
                for &workset in &ws {
                    for &xi in &xis {
                        let cell = Cell { algorithm, local_steps, workset, xi }.normalized();
                        if !cells.contains(&cell) {
                            cells.push(cell);
                        }
                    }
                }
            }
        }
        if cells.is_empty() || seeds.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        for cell in &cells {
            cell.apply(&base).validate()?;
        }

        let data = DataSpec::parse(&take("data").unwrap_or_else(|| "synth:20000,12,8".into()))?;
        let split = |v: Option<String>| v.map(|s| list(Some(s), "")).unwrap_or_default();
        let (a_cols, b_cols) = (split(take("a_cols")), split(take("b_cols")));
        let data = data.with_columns(take("label_col").as_deref(), &a_cols, &b_cols);
        let holdout = take("holdout").map(|v| parse_num::<f64>("holdout", &v)).transpose()?.unwrap_or(0.0);
        if !(0.0..1.0).contains(&holdout) {
            return Err(Error::Config(format!("holdout must lie in [0, 1), got {holdout}")));
        }

        let targets = [
            take("target_loss").map(|v| parse_num("target_loss", &v).map(|t| TargetSpec::Fixed(Target::TrainLoss(t)))),
            take("target_auc").map(|v| parse_num("target_auc", &v).map(|t| TargetSpec::Fixed(Target::EvalAuc(t)))),
            take("target_vanilla_round").map(|v| parse_num("target_vanilla_round", &v).map(TargetSpec::VanillaLossAt)),
        ];
        let mut chosen: Vec<TargetSpec> = targets.into_iter().flatten().collect::<Result<_>>()?;
        if chosen.len() > 1 {
            return Err(Error::Config("give at most one of target_loss, target_auc, target_vanilla_round".into()));
        }
        let target = chosen.pop().unwrap_or(TargetSpec::VanillaLossAt(u64::MAX));
        let out = PathBuf::from(take("out").unwrap_or_else(|| "results".into()));

        if let Some(unknown) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key {unknown}")));
        }
        Ok(ExperimentConfig { base, cells, seeds, data, holdout, target, out })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Loads the data and splits off the holdout tail, if any.
pub fn prepare_data(spec: &DataSpec, holdout: f64) -> Result<(AlignedDataset, Option<AlignedDataset>)> {
    let data = spec.load()?;
    let count = (data.n() as f64 * holdout).round() as usize;
    if count == 0 {
        return Ok((data, None));
    }
    let (train, eval) = data.split_tail(count)?;
    Ok((train, Some(eval)))
}

/// Rounds-to-target statistics of one cell over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub rounds: Vec<Option<u64>>,
}

impl CellSummary {
    pub fn reached(&self) -> Vec<f64> {
        self.rounds.iter().flatten().map(|&r| r as f64).collect()
    }

    pub fn dnf(&self) -> bool {
        self.rounds.iter().any(Option::is_none)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub summaries: Vec<CellSummary>,
    pub run_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
}

fn target_label(t: TargetSpec) -> String {
    match t {
        TargetSpec::Fixed(Target::TrainLoss(v)) => format!("loss<={v}"),
        TargetSpec::Fixed(Target::EvalAuc(v)) => format!("auc>={v}"),
        TargetSpec::VanillaLossAt(u64::MAX) => "vanilla@final".into(),
        TargetSpec::VanillaLossAt(r) => format!("vanilla@{r}"),
    }
}

fn vanilla_target(records: &[MetricsRecord], round: u64) -> Result<Target> {
    let rec = if round == u64::MAX {
        records.last()
    } else {
        records.iter().find(|r| r.round == round)
    };
    rec.map(|r| Target::TrainLoss(r.train_loss))
        .ok_or_else(|| Error::Config(format!("vanilla run has no record at round {round}")))
}

/// Runs every cell at every seed, writing `runs/<cell>_seed<s>.csv` and
/// `summary.csv` under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (train, eval) = prepare_data(&config.data, config.holdout)?;
    let runs_dir = config.out.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let vanilla_cell = Cell {
        algorithm: Algorithm::Vanilla,
        local_steps: 1,
        workset: 1,
        xi: None,
    };
    let mut run_files = Vec::new();
    let mut results: BTreeMap<(usize, u64), Vec<MetricsRecord>> = BTreeMap::new();
    let mut cells = config.cells.clone();
    if matches!(config.target, TargetSpec::VanillaLossAt(_)) && !cells.contains(&vanilla_cell) {
        cells.insert(0, vanilla_cell);
    }
    for (ci, cell) in cells.iter().enumerate() {
        for &seed in &config.seeds {
            let mut tc = cell.apply(&config.base);
            tc.seed = seed;
            let run = run_training(&tc, &train, eval.as_ref())?;
            let path = runs_dir.join(format!("{}_seed{seed}.csv", cell.label()));
            fs::write(&path, to_csv(&run.records))?;
            run_files.push(path);
            results.insert((ci, seed), run.records);
        }
    }

    let vanilla_index = cells.iter().position(|c| *c == vanilla_cell);
    let target_for = |seed: u64| -> Result<Target> {
        match config.target {
            TargetSpec::Fixed(t) => Ok(t),
            TargetSpec::VanillaLossAt(round) => {
                let vi = vanilla_index.expect("vanilla cell is scheduled");
                vanilla_target(&results[&(vi, seed)], round)
            }
        }
    };
    let mut summaries = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let rounds = config
            .seeds
            .iter()
            .map(|&s| Ok(rounds_to_target(&results[&(ci, s)], target_for(s)?)))
            .collect::<Result<Vec<_>>>()?;
        summaries.push(CellSummary { cell: *cell, rounds });
    }

    let baseline = vanilla_index
        .map(|vi| &summaries[vi])
        .filter(|s| !s.dnf())
        .and_then(|s| mean_std(&s.reached()))
        .map(|(m, _)| m);
    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for s in &summaries {
        let stats = mean_std(&s.reached());
        let (mean, std) = stats.map_or((String::new(), String::new()), |(m, sd)| (m.to_string(), sd.to_string()));
        let reduction = match (baseline, stats, s.dnf()) {
            (Some(b), Some((m, _)), false) if b > 0.0 => ((b - m) / b * 100.0).to_string(),
            _ => String::new(),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            s.cell.algorithm,
            s.cell.local_steps,
            s.cell.workset,
            xi_label(s.cell.xi),
            target_label(config.target),
            s.rounds.len(),
            s.reached().len(),
            mean,
            std,
            reduction,
            if s.dnf() { "DNF" } else { "ok" }
        ));
    }
    let summary_file = config.out.join("summary.csv");
    fs::write(&summary_file, csv)?;
    Ok(ExperimentReport {
        summaries,
        run_files,
        summary_file,
    })
}
