use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use super::party_a::local_gradients;
use super::{
    LocalWorkerA, LocalWorkerB, ModelSnapshot, PartyA, PartyB, Schedule, TrainConfig,
};
use crate::dataio::{AlignedDataset, BatchPlan};
use crate::error::{Error, Result};
use crate::harness::metrics::{self, MetricsRecord};
use crate::transport::{channel_pair, MessageLog};
use crate::workset::{SharedWorkset, WorksetTable};

/// Quantile of per-step gradient cosines reported as the ρ estimate.
pub const RHO_QUANTILE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    /// Party B's mean loss on the exchanged batch.
    pub batch_loss: f64,
    pub local_steps_a: usize,
    pub local_steps_b: usize,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub records: Vec<MetricsRecord>,
    pub snapshot: ModelSnapshot,
    pub frames_sent: u64,
}

/// Both parties wired together over one channel, stepped round by round.
pub struct Session {
    config: TrainConfig,
    a: PartyA,
    b: PartyB,
    local_a: LocalWorkerA,
    local_b: LocalWorkerB,
    train: AlignedDataset,
    eval: Option<AlignedDataset>,
    round: u64,
    total_rounds: u64,
    finished: bool,
    rho_window: Vec<f64>,
    last_weight_tally: (u64, u64),
    local_budget: usize,
}

impl Session {
    /// Validates `config`, builds both parties and performs the start handshake.
    pub fn new(
        config: &TrainConfig,
        train: &AlignedDataset,
        eval: Option<&AlignedDataset>,
        log: Option<MessageLog>,
    ) -> Result<Self> {
        config.validate()?;
        let weighting = config.weighting()?;
        let plan = BatchPlan::new(train.n(), config.batch_size, config.epochs, config.seed)?;
        let mut total_rounds = plan.total_steps() as u64;
        if let Some(cap) = config.max_rounds {
            total_rounds = total_rounds.min(cap as u64);
        }

        let ModelSnapshot {
            bottom_a,
            bottom_b,
            top,
        } = ModelSnapshot::initial(config, train.d_a(), train.d_b())?;

        let table = || WorksetTable::new(config.workset, config.local_uses()).map(SharedWorkset::new);
        let (chan_a, chan_b) = channel_pair(&config.channel, log)?;
        let a = PartyA::new(
            bottom_a,
            train.x_a.clone(),
            table()?,
            plan.clone(),
            chan_a,
            config.lr,
            weighting,
        )?;
        let b = PartyB::new(
            bottom_b,
            top,
            train.x_b.clone(),
            train.y.clone(),
            table()?,
            plan,
            chan_b,
            config.lr,
            weighting,
        )?;
        a.start()?;
        b.await_start()?;
        Ok(Session {
            local_a: a.local_worker(),
            local_b: b.local_worker(),
            config: config.clone(),
            a,
            b,
            train: train.clone(),
            eval: eval.cloned(),
            round: 0,
            total_rounds,
            finished: false,
            rho_window: Vec::new(),
            last_weight_tally: (0, 0),
            local_budget: config.local_uses() as usize,
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn total_rounds(&self) -> u64 {
        self.total_rounds
    }

    pub fn party_a(&self) -> &PartyA {
        &self.a
    }

    pub fn party_b(&self) -> &PartyB {
        &self.b
    }

    /// One communication round: activations to B, derivatives back to A, both
    /// updates and cache insertions.
    pub fn exchange_round(&mut self) -> Result<f64> {
        if self.finished || self.round >= self.total_rounds {
            return Err(Error::Logic("no rounds left".into()));
        }
        let i = self.round + 1;
        self.a.send_forward(i)?;
        let loss = self.b.handle_forward(i)?;
        self.a.finish_round()?;
        self.round = i;
        Ok(loss)
    }

    /// Exchange followed by up to `R - 1` local steps per party, each party
    /// stopping at its first bubble.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let batch_loss = self.exchange_round()?;
        let mut local_steps_a = 0;
        while local_steps_a < self.local_budget {
            let Some(entry) = self.local_a.take() else { break };
            if self.config.diagnostics {
                self.observe_rho(&entry)?;
            }
            self.local_a.apply(&entry)?;
            local_steps_a += 1;
        }
        let mut local_steps_b = 0;
        while local_steps_b < self.local_budget && self.local_b.step()? {
            local_steps_b += 1;
        }
        Ok(RoundReport {
            round: self.round,
            batch_loss,
            local_steps_a,
            local_steps_b,
        })
    }

    /// Cosine between the stale-statistics gradient party A is about to apply
    /// and the exact mini-batch gradient at the same parameters. Read-only.
    fn observe_rho(&mut self, entry: &crate::workset::CacheEntry) -> Result<()> {
        let snap = self.snapshot();
        let x = self.train.x_a.select_rows(&entry.batch_indices)?;
        let (estimated, _) = local_gradients(&snap.bottom_a, &x, entry, self.config.weighting()?)?;
        let exact = snap.party_a_gradient(&self.train, &entry.batch_indices)?;
        if let Some(c) = metrics::empirical_rho(&estimated.flatten(), &exact.flatten()) {
            self.rho_window.push(c);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        let (bottom_b, top) = self.b.models();
        ModelSnapshot {
            bottom_a: self.a.bottom(),
            bottom_b,
            top,
        }
    }

    pub fn bytes_sent(&self) -> u64 {
        self.a.channel().bytes_sent() + self.b.channel().bytes_sent()
    }

    pub fn frames_sent(&self) -> u64 {
        self.a.channel().frames_sent() + self.b.channel().frames_sent()
    }

    pub fn simulated_time(&self) -> f64 {
        let updates = self.round + self.a.counters().local_steps().max(self.b.counters().local_steps());
        self.a.channel().clock().now() + self.config.compute_cost_s * updates as f64
    }

    /// Evaluates the current models and resets the per-record windows.
    pub fn record(&mut self) -> Result<MetricsRecord> {
        let snap = self.snapshot();
        let train_loss = snap.mean_loss(&self.train)?;
        let eval = self.eval.as_ref().unwrap_or(&self.train);
        let scores = snap.logits(&eval.x_a, &eval.x_b)?;
        let eval_auc = metrics::auc(&eval.y, &scores)?;
        let rho_estimate = metrics::quantile(&self.rho_window, RHO_QUANTILE);
        self.rho_window.clear();

        let (seen_a, zero_a) = self.a.counters().weight_tally();
        let (seen_b, zero_b) = self.b.counters().weight_tally();
        let (seen, zeroed) = (seen_a + seen_b, zero_a + zero_b);
        let d_seen = seen - self.last_weight_tally.0;
        let d_zeroed = zeroed - self.last_weight_tally.1;
        self.last_weight_tally = (seen, zeroed);

        Ok(MetricsRecord {
            round: self.round,
            local_steps: self.a.counters().local_steps(),
            bytes_sent: self.bytes_sent(),
            simulated_time_s: self.simulated_time(),
            train_loss,
            eval_auc,
            rho_estimate,
            weights_zeroed_fraction: if d_seen == 0 { 0.0 } else { d_zeroed as f64 / d_seen as f64 },
        })
    }

    fn due(&self) -> bool {
        self.round.is_multiple_of(self.config.eval_every as u64) || self.round == self.total_rounds
    }

    /// Stop handshake. Idempotent.
    pub fn finish(&mut self) -> Result<()> {
        if !self.finished {
            self.a.stop()?;
            self.b.await_stop()?;
            self.finished = true;
        }
        Ok(())
    }

    /// Runs every remaining round under the configured schedule.
    pub fn run(mut self) -> Result<TrainingRun> {
        let mut records = vec![self.record()?];
        match self.config.schedule {
            Schedule::Deterministic => {
                while self.round < self.total_rounds {
                    self.run_round()?;
                    if self.due() {
                        records.push(self.record()?);
                    }
                }
            }
            Schedule::Concurrent => self.run_concurrent(&mut records)?,
        }
        self.finish()?;
        Ok(TrainingRun {
            records,
            snapshot: self.snapshot(),
            frames_sent: self.frames_sent(),
        })
    }

    fn run_concurrent(&mut self, records: &mut Vec<MetricsRecord>) -> Result<()> {
        let stop = AtomicBool::new(false);
        let local_a = self.local_a.clone();
        let local_b = self.local_b.clone();
        thread::scope(|s| {
            let ha = s.spawn(|| free_run(&stop, || local_a.step()));
            let hb = s.spawn(|| free_run(&stop, || local_b.step()));
            let mut outcome = Ok(());
            while self.round < self.total_rounds {
                if let Err(e) = self.exchange_round() {
                    outcome = Err(e);
                    break;
                }
                if self.due() {
                    match self.record() {
                        Ok(r) => records.push(r),
                        Err(e) => {
                            outcome = Err(e);
                            break;
                        }
                    }
                }
                if ha.is_finished() || hb.is_finished() {
                    break;
                }
            }
            stop.store(true, Ordering::Release);
            let ra = ha.join().expect("party A local worker panicked");
            let rb = hb.join().expect("party B local worker panicked");
            outcome.and(ra).and(rb)
        })
    }
}

/// Steps a local worker until `stop` is raised, idling briefly on bubbles.
fn free_run(stop: &AtomicBool, step: impl Fn() -> Result<bool>) -> Result<()> {
    while !stop.load(Ordering::Acquire) {
        if !step()? {
            thread::sleep(Duration::from_micros(20));
        }
    }
    Ok(())
}

/// Trains with `config` on `train`, evaluating AUC on `eval` (or on `train`
/// when absent).
pub fn run_training(
    config: &TrainConfig,
    train: &AlignedDataset,
    eval: Option<&AlignedDataset>,
) -> Result<TrainingRun> {
    Session::new(config, train, eval, None)?.run()
}
