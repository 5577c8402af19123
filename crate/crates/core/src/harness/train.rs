//! Minibatch training with best-validation checkpointing.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::prepare::PairedSplit;
use super::seeds::derive_seed;
use crate::diffusion::{loss_and_grad, training_loss, TrainingBatch};
use crate::error::{Error, Result};
use crate::nn::{save_checkpoint, Adam, AdamConfig, ScoreNetParams};
use crate::schedules::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Row 0 holds the losses of the initial parameters.
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

impl TrainSummary {
    pub fn initial(&self) -> &EpochLog {
        &self.log[0]
    }

    pub fn last(&self) -> &EpochLog {
        self.log.last().expect("log always holds the initial row")
    }
}

fn samples(w: &[crate::Waveform], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| w[i].samples().to_vec()).collect()
}

/// Loss over a whole split with noise levels and ε drawn from `seed`, so
/// repeated evaluations of the same parameters agree exactly.
pub fn fixed_draw_loss(
    params: &ScoreNetParams<f32>,
    data: &PairedSplit,
    sched: &NoiseSchedule,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate the loss of an empty split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut weighted = 0.0;
    let mut total = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = TrainingBatch::draw(samples(&data.clean, chunk), samples(&data.noisy, chunk), sched, &mut rng)?;
        let n: usize = batch.x0.iter().map(Vec::len).sum();
        weighted += training_loss(params, &batch)? * n as f64;
        total += n;
    }
    Ok(weighted / total as f64)
}

pub fn validation_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.optimizer.seed, "validation")
}

/// Trains from scratch on the prepared train split. The checkpoint always
/// holds the parameters with the lowest validation loss seen so far,
/// including the initial ones.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let train = PairedSplit::load(&cfg.train_dir())?;
    let val = PairedSplit::load(&cfg.val_dir())?;
    for (name, split) in [("train", &train), ("val", &val)] {
        if split.is_empty() {
            return Err(Error::Config(format!("{name} split is empty")));
        }
        if let Some(w) = split.clean.iter().find(|w| w.len() != cfg.model.segment_len) {
            return Err(Error::Config(format!(
                "{name} segment of {} samples does not fit model segment_len {}",
                w.len(),
                cfg.model.segment_len
            )));
        }
    }
    let sched = cfg.schedule()?;
    let opt = &cfg.optimizer;
    let started = Instant::now();

    let mut params = ScoreNetParams::<f32>::init(&cfg.model, derive_seed(opt.seed, "init"))?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: opt.learning_rate,
            clip_norm: (opt.clip_norm > 0.0).then_some(opt.clip_norm),
            ..AdamConfig::default()
        },
        params.param_count(),
    );
    let val_seed = validation_seed(cfg);
    let checkpoint = cfg.checkpoint();
    let report = cfg.report();
    for p in [&checkpoint, &report] {
        if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
    }
    let mut log_file = std::fs::File::create(&report).map_err(|e| Error::io(&report, e))?;
    writeln!(log_file, "epoch,train_loss,val_loss,best_val_loss").map_err(|e| Error::io(&report, e))?;
    let mut write_row = |row: &EpochLog, best: f64| -> Result<()> {
        writeln!(log_file, "{},{:.9e},{:.9e},{:.9e}", row.epoch, row.train_loss, row.val_loss, best)
            .and_then(|_| log_file.flush())
            .map_err(|e| Error::io(&report, e))
    };

    let initial = EpochLog {
        epoch: 0,
        train_loss: fixed_draw_loss(&params, &train, &sched, derive_seed(opt.seed, "train-eval"), opt.batch_size)?,
        val_loss: fixed_draw_loss(&params, &val, &sched, val_seed, opt.batch_size)?,
    };
    let mut best_val = initial.val_loss;
    let mut best_epoch = 0;
    save_checkpoint(&params, &checkpoint)?;
    write_row(&initial, best_val)?;
    log::info!("epoch 0: train {:.5} val {:.5}", initial.train_loss, initial.val_loss);
    let mut log = vec![initial];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opt.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opt.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(opt.batch_size) {
            let batch = TrainingBatch::draw(samples(&train.clean, chunk), samples(&train.noisy, chunk), &sched, &mut rng)?;
            let (loss, grads) = loss_and_grad(&params, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                log::error!("non-finite loss in epoch {epoch}; keeping checkpoint from epoch {best_epoch}");
                return Err(Error::NonFinite(format!("training loss diverged in epoch {epoch}")));
            }
            adam.step(params.values_mut(), &grads);
            loss_sum += loss;
            n_batches += 1;
        }
        let val_loss = fixed_draw_loss(&params, &val, &sched, val_seed, opt.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss diverged in epoch {epoch}")));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            save_checkpoint(&params, &checkpoint)?;
        }
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_loss,
        };
        write_row(&row, best_val)?;
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} best {:.5} ({:.0} s)",
            row.train_loss,
            row.val_loss,
            best_val,
            started.elapsed().as_secs_f64()
        );
        log.push(row);
    }
    Ok(TrainSummary {
        log,
        best_epoch,
        best_val_loss: best_val,
        checkpoint,
        seconds: started.elapsed().as_secs_f64(),
    })
}
