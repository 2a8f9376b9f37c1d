//! Epoch loop: negative regeneration, minibatch BCE gradients, RSGD or Adam
//! updates, validation monitoring, early stopping and run artifacts.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{sample_negatives, DatasetBundle, Split, Task};
use crate::error::{Error, Result};
use crate::eval::{self, RankingOptions};
use crate::exec::{derive_seed, Execution};
use crate::geometry::DOMAIN_TOL;
use crate::model::{
    bce, fm_grad_unchecked, lfm_grad_unchecked, EmbeddingTable, FmParameters, Model, ModelKind,
    SparseInstance,
};
use crate::optim::{adam_kernel, effective_lr, rsgd_update_row, AdamConfig, AdamState, RsgdConfig};

const NEGATIVE_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
/// Positives per negative-sampling job.
const SAMPLING_CHUNK: usize = 512;

/// Validation metric driving early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    #[serde(alias = "MRR")]
    Mrr,
    #[serde(alias = "Logloss", alias = "LOGLOSS")]
    Logloss,
}

impl Monitor {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Ranking => Monitor::Mrr,
            Task::Ctr => Monitor::Logloss,
        }
    }

    fn improves(self, value: f64, best: f64) -> bool {
        match self {
            Monitor::Mrr => value > best,
            Monitor::Logloss => value < best,
        }
    }

    fn worst(self) -> f64 {
        match self {
            Monitor::Mrr => f64::NEG_INFINITY,
            Monitor::Logloss => f64::INFINITY,
        }
    }
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Monitor::Mrr => "mrr",
            Monitor::Logloss => "logloss",
        })
    }
}

impl FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrr" => Ok(Monitor::Mrr),
            "logloss" => Ok(Monitor::Logloss),
            other => Err(Error::Config(format!(
                "unknown monitor `{other}` (expected mrr or logloss)"
            ))),
        }
    }
}

/// Training hyper-parameters. Every key is optional in the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Must match the dataset when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub model: ModelKind,
    /// Ambient size `k` of each embedding (`k - 1` free coordinates for
    /// LorentzFM).
    pub embedding_size: usize,
    /// RSGD step size; the FM baseline uses `adam.learning_rate`.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub burn_in_epochs: usize,
    pub burn_in_factor: f64,
    /// Sampled negatives per training positive (ranking).
    pub negatives: usize,
    /// Draw fresh negatives every epoch instead of once per run.
    pub resample_negatives: bool,
    pub seed: u64,
    /// Defaults to MRR for ranking and logloss for CTR.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor: Option<Monitor>,
    /// Negatives per validation ranking list; 0 ranks the full pool.
    pub val_candidates: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let rsgd = RsgdConfig::default();
        TrainConfig {
            task: None,
            model: ModelKind::LorentzFm,
            embedding_size: 10,
            learning_rate: rsgd.learning_rate,
            batch_size: 256,
            max_epochs: 100,
            patience: 20,
            burn_in_epochs: rsgd.burn_in_epochs,
            burn_in_factor: rsgd.burn_in_factor,
            negatives: 10,
            resample_negatives: true,
            seed: 0,
            monitor: None,
            val_candidates: 500,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    pub fn rsgd(&self) -> RsgdConfig {
        RsgdConfig {
            learning_rate: self.learning_rate,
            burn_in_epochs: self.burn_in_epochs,
            burn_in_factor: self.burn_in_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        let min_dim = match self.model {
            ModelKind::LorentzFm => 2,
            ModelKind::Fm => 1,
        };
        if self.embedding_size < min_dim {
            return bad(format!(
                "embedding_size must be at least {min_dim} for {}",
                self.model
            ));
        }
        self.rsgd().validate()?;
        self.adam.validate()?;
        if let (Some(task), Some(monitor)) = (self.task, self.monitor) {
            check_monitor(task, monitor)?;
        }
        Ok(())
    }

    /// Task and monitor for a dataset of kind `task`.
    pub fn resolve(&self, task: Task) -> Result<(Task, Monitor)> {
        if let Some(t) = self.task {
            if t != task {
                return Err(Error::Config(format!(
                    "config is for a {t} task but the dataset is {task}"
                )));
            }
        }
        if task == Task::Ranking && self.negatives == 0 {
            return Err(Error::Config(
                "ranking needs at least one negative per positive".into(),
            ));
        }
        let monitor = self.monitor.unwrap_or(Monitor::for_task(task));
        check_monitor(task, monitor)?;
        Ok((task, monitor))
    }
}

fn check_monitor(task: Task, monitor: Monitor) -> Result<()> {
    if task == Task::Ctr && monitor == Monitor::Mrr {
        return Err(Error::Config(
            "MRR cannot be monitored on a CTR dataset".into(),
        ));
    }
    Ok(())
}

/// Summed binary cross-entropy.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce(p, y as f64))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-instance loss.
    pub train_loss: f64,
    pub monitor: f64,
    pub learning_rate: f64,
    /// RSGD row updates skipped for non-finite values.
    pub rejected_steps: usize,
    /// Largest hyperboloid residual after the epoch (LorentzFM).
    pub max_residual: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub monitor: Monitor,
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    /// Tab-separated history without wall times, so reruns compare
    /// byte-for-byte.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "epoch\ttrain_loss\tval_{}\tlr\trejected\tmax_residual\n",
            self.monitor
        );
        for r in &self.records {
            let res = r.max_residual.map_or("-".to_string(), |v| format!("{v:e}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.train_loss, r.monitor, r.learning_rate, r.rejected_steps, res
            );
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = String::from("epoch\tseconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{:.3}", r.epoch, r.seconds);
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.is_none_or(|b| self.monitor.improves(r.monitor, b.monitor)) {
                best = Some(r);
            }
        }
        best
    }
}

/// Patience-based stopping rule on a validation monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub monitor: Monitor,
    pub patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
}

/// Outcome of feeding one monitor value to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(monitor: Monitor, patience: usize) -> Self {
        EarlyStopping {
            monitor,
            patience,
            best: monitor.worst(),
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> Verdict {
        if self.monitor.improves(value, self.best) {
            self.best = value;
            self.bad_epochs = 0;
            Verdict::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub exec: Execution,
    /// When set, the config snapshot, history, timings and checkpoints are
    /// written here as training proceeds.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: RunHistory,
    pub stopped_early: bool,
}

/// Mutable parameters plus optimizer state.
enum Learner {
    Lorentz {
        table: EmbeddingTable,
        acc: Vec<f64>,
        touched: Vec<u32>,
        marked: Vec<bool>,
    },
    Fm {
        params: FmParameters,
        state: AdamState,
        grad: Vec<f64>,
    },
}

impl Learner {
    fn new(kind: ModelKind, count: usize, dim: usize, seed: u64) -> Result<Self> {
        Ok(match Model::init(kind, count, dim, seed)? {
            Model::Lorentz(table) => Learner::Lorentz {
                acc: vec![0.0; count * dim],
                touched: Vec::new(),
                marked: vec![false; count],
                table,
            },
            Model::Fm(params) => {
                let n = params.free_parameters();
                Learner::Fm {
                    params,
                    state: AdamState::new(n),
                    grad: vec![0.0; n],
                }
            }
        })
    }

    fn model(&self) -> Model {
        match self {
            Learner::Lorentz { table, .. } => Model::Lorentz(table.clone()),
            Learner::Fm { params, .. } => Model::Fm(params.clone()),
        }
    }

    fn adam_state(&self) -> Option<AdamState> {
        match self {
            Learner::Lorentz { .. } => None,
            Learner::Fm { state, .. } => Some(state.clone()),
        }
    }

    /// One minibatch: per-row gradients are averaged over the batch before a
    /// single update. Returns the summed loss and the number of rejected row
    /// updates.
    fn step(
        &mut self,
        batch: &[&SparseInstance],
        lr: f64,
        adam: &AdamConfig,
        exec: Execution,
    ) -> (f64, usize) {
        match self {
            Learner::Lorentz {
                table,
                acc,
                touched,
                marked,
            } => {
                let dim = table.dim();
                let grads = exec.map(batch, |inst| lfm_grad_unchecked(inst, table));
                let mut loss = 0.0;
                for (g, l) in &grads {
                    loss += l;
                    for (i, gi) in g.iter() {
                        if !marked[i as usize] {
                            marked[i as usize] = true;
                            touched.push(i);
                        }
                        let a = &mut acc[i as usize * dim..(i as usize + 1) * dim];
                        for (x, y) in a.iter_mut().zip(gi) {
                            *x += y;
                        }
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                let mut rejected = 0;
                for &i in touched.iter() {
                    let i = i as usize;
                    let g = &mut acc[i * dim..(i + 1) * dim];
                    g.iter_mut().for_each(|x| *x *= scale);
                    if !rsgd_update_row(table.row_mut(i), g, lr) {
                        rejected += 1;
                    }
                    g.iter_mut().for_each(|x| *x = 0.0);
                    marked[i] = false;
                }
                touched.clear();
                (loss, rejected)
            }
            Learner::Fm {
                params,
                state,
                grad,
            } => {
                let count = params.count();
                let dim = params.dim;
                let grads = exec.map(batch, |inst| fm_grad_unchecked(inst, params));
                grad.iter_mut().for_each(|x| *x = 0.0);
                let mut loss = 0.0;
                for (g, l) in &grads {
                    loss += l;
                    grad[0] += g.bias;
                    for (slot, &(i, lg)) in g.linear.iter().enumerate() {
                        let i = i as usize;
                        grad[1 + i] += lg;
                        let base = 1 + count + i * dim;
                        for (x, y) in grad[base..base + dim].iter_mut().zip(g.factor(slot)) {
                            *x += y;
                        }
                    }
                }
                if grad.iter().any(|g| !g.is_finite()) {
                    return (f64::NAN, 0);
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                state.step += 1;
                let step = state.step;
                let (m_b, m_rest) = state.m.split_at_mut(1);
                let (m_l, m_f) = m_rest.split_at_mut(count);
                let (v_b, v_rest) = state.v.split_at_mut(1);
                let (v_l, v_f) = v_rest.split_at_mut(count);
                adam_kernel(
                    std::slice::from_mut(&mut params.bias),
                    &grad[..1],
                    m_b,
                    v_b,
                    step,
                    adam,
                );
                adam_kernel(
                    &mut params.linear,
                    &grad[1..1 + count],
                    m_l,
                    v_l,
                    step,
                    adam,
                );
                adam_kernel(
                    &mut params.factors,
                    &grad[1 + count..],
                    m_f,
                    v_f,
                    step,
                    adam,
                );
                (loss, 0)
            }
        }
    }
}

/// Training instances for one epoch, in canonical (pre-shuffle) order.
fn epoch_instances(
    config: &TrainConfig,
    bundle: &DatasetBundle,
    epoch: usize,
    exec: Execution,
) -> Result<(Vec<SparseInstance>, usize)> {
    match bundle.task {
        Task::Ctr => Ok((bundle.train.iter().map(|e| e.instance.clone()).collect(), 0)),
        Task::Ranking => {
            let round = if config.resample_negatives {
                epoch as u64
            } else {
                0
            };
            let chunks = bundle.train.len().div_ceil(SAMPLING_CHUNK);
            let jobs = exec.map_range(chunks, |c| -> Result<(Vec<SparseInstance>, usize)> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &[NEGATIVE_STREAM, round, c as u64],
                ));
                let lo = c * SAMPLING_CHUNK;
                let hi = (lo + SAMPLING_CHUNK).min(bundle.train.len());
                let mut out = Vec::with_capacity((hi - lo) * (1 + config.negatives));
                let mut short = 0;
                for ex in &bundle.train[lo..hi] {
                    let ia = ex.interaction.ok_or_else(|| {
                        Error::Data("ranking row without a user/item pair".into())
                    })?;
                    let mut positive = ex.instance.clone();
                    positive.label = 1;
                    out.push(positive);
                    let neg = sample_negatives(ia.user, config.negatives, bundle, &mut rng)?;
                    short += neg.with_replacement as usize;
                    out.extend(neg.items.iter().map(|&i| bundle.with_item(ex, i, 0)));
                }
                Ok((out, short))
            });
            let mut all = Vec::new();
            let mut short = 0;
            for job in jobs {
                let (part, s) = job?;
                all.extend(part);
                short += s;
            }
            Ok((all, short))
        }
    }
}

fn validation_monitor(
    monitor: Monitor,
    model: &Model,
    bundle: &DatasetBundle,
    config: &TrainConfig,
    exec: Execution,
) -> Result<f64> {
    match monitor {
        Monitor::Mrr => {
            let opts = RankingOptions {
                exclude_val: true,
                subsample: (config.val_candidates > 0).then_some(config.val_candidates),
                seed: config.seed,
            };
            eval::mrr(&eval::evaluate_ranking(
                model,
                bundle,
                Split::Val,
                &opts,
                exec,
            )?)
        }
        Monitor::Logloss => {
            let probs = eval::predict(model, &bundle.val, exec)?;
            let labels: Vec<u8> = bundle.val.iter().map(|e| e.instance.label).collect();
            eval::logloss(&probs, &labels)
        }
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Trains a model and returns the best-monitor and final checkpoints.
pub fn train(
    config: &TrainConfig,
    bundle: &DatasetBundle,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (task, monitor) = config.resolve(bundle.task)?;
    if bundle.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if bundle.val.is_empty() {
        return Err(Error::Data(
            "validation split is empty; early stopping needs it".into(),
        ));
    }
    if let Some(dir) = &opts.run_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_file(dir, "config.toml", &config.to_toml())?;
    }

    let exec = opts.exec;
    let count = bundle.feature_count();
    let init_seed = derive_seed(config.seed, &[INIT_STREAM]);
    let mut learner = Learner::new(config.model, count, config.embedding_size, init_seed)?;
    let rsgd = config.rsgd();
    let snapshot = |learner: &Learner, epoch: usize| Checkpoint {
        model: learner.model(),
        task,
        seed: config.seed,
        epoch: epoch as u64,
        adam: learner.adam_state(),
    };

    let mut history = RunHistory {
        monitor,
        records: Vec::new(),
    };
    let mut best = snapshot(&learner, 0);
    let mut stopping = EarlyStopping::new(monitor, config.patience);
    let mut stopped_early = false;
    let mut fixed: Option<Vec<SparseInstance>> = None;

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let instances = match &fixed {
            Some(v) => v.clone(),
            None => {
                let (v, short) = epoch_instances(config, bundle, epoch, exec)?;
                if short > 0 {
                    log::warn!(
                        "epoch {}: {short} users had fewer unobserved items than requested negatives",
                        epoch + 1
                    );
                }
                if task == Task::Ranking && !config.resample_negatives {
                    fixed = Some(v.clone());
                }
                v
            }
        };
        let mut order: Vec<usize> = (0..instances.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut rng);

        let lr = match config.model {
            ModelKind::LorentzFm => effective_lr(epoch, &rsgd),
            ModelKind::Fm => config.adam.learning_rate,
        };
        let mut loss_sum = 0.0;
        let mut rejected = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SparseInstance> = idx.iter().map(|&i| &instances[i]).collect();
            let (loss, rej) = learner.step(&batch, lr, &config.adam, exec);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    message: format!("non-finite loss in batch {b}; try a smaller learning rate"),
                });
            }
            loss_sum += loss;
            rejected += rej;
        }
        if rejected > 0 {
            log::warn!(
                "epoch {}: rejected {rejected} non-finite row updates",
                epoch + 1
            );
        }

        let model = learner.model();
        let max_residual = model.max_residual();
        if let Some(r) = max_residual {
            if !(r <= DOMAIN_TOL) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    message: format!("embedding left the hyperboloid (residual {r:e})"),
                });
            }
        }
        let value = validation_monitor(monitor, &model, bundle, config, exec)?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                message: format!("validation {monitor} is {value}"),
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / instances.len() as f64,
            monitor: value,
            learning_rate: lr,
            rejected_steps: rejected,
            max_residual,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}  loss {:.5}  val {} {:.5}  lr {}",
            record.epoch,
            record.train_loss,
            monitor,
            record.monitor,
            lr
        );
        history.records.push(record);

        let verdict = stopping.observe(value);
        if verdict == Verdict::Improved {
            best = snapshot(&learner, epoch + 1);
            if let Some(dir) = &opts.run_dir {
                best.save(&dir.join("best.ckpt"))?;
            }
        }
        if let Some(dir) = &opts.run_dir {
            write_file(dir, "history.tsv", &history.to_tsv())?;
            write_file(dir, "timing.tsv", &history.timing_tsv())?;
        }
        if verdict == Verdict::Stop {
            stopped_early = true;
            break;
        }
    }

    let last = snapshot(&learner, history.records.len());
    if let Some(dir) = &opts.run_dir {
        last.save(&dir.join("last.ckpt"))?;
    }
    Ok(TrainOutcome {
        best,
        last,
        history,
        stopped_early,
    })
}
