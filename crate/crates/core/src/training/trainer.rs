use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Checkpoint, CsvTable, Dataset};
use crate::network::{argmax_rows, Network};
use crate::tensor::{Scalar, Tensor};

use super::backward::{backward_o1, backward_stored};
use super::optim::{sgd_step, OptimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    #[default]
    None,
    /// Random horizontal flip, then zero-pad by `pad` and crop back at a
    /// random offset.
    FlipCrop { pad: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardKind {
    Stored,
    #[default]
    O1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub augment: Augment,
    #[serde(default)]
    pub backward: BackwardKind,
    /// Write a checkpoint every this many iterations (and at the end).
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

fn default_batch() -> usize {
    64
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: default_batch(),
            augment: Augment::None,
            backward: BackwardKind::O1,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub minibatch_accuracy: f64,
}

/// Per-iteration training log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: [&str; 4] = ["iteration", "lr", "loss", "minibatch_accuracy"];

impl TrainLog {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(LOG_HEADER);
        for r in &self.rows {
            t.push([
                r.iteration.to_string(),
                r.lr.to_string(),
                r.loss.to_string(),
                r.minibatch_accuracy.to_string(),
            ])
            .expect("four columns");
        }
        t
    }

    pub fn from_csv(t: &CsvTable) -> Result<Self> {
        if t.header() != LOG_HEADER {
            return Err(Error::InvalidArgument(format!(
                "unexpected training log header {:?}",
                t.header()
            )));
        }
        let bad = |v: &str| Error::InvalidArgument(format!("bad training log value '{v}'"));
        let rows = t
            .rows()
            .iter()
            .map(|r| {
                Ok(LogRow {
                    iteration: r[0].parse().map_err(|_| bad(&r[0]))?,
                    lr: r[1].parse().map_err(|_| bad(&r[1]))?,
                    loss: r[2].parse().map_err(|_| bad(&r[2]))?,
                    minibatch_accuracy: r[3].parse().map_err(|_| bad(&r[3]))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    /// Mean loss over `segments` equal consecutive chunks of the log.
    pub fn segment_means(&self, segments: usize) -> Vec<f64> {
        let n = self.rows.len();
        (0..segments)
            .map(|s| {
                let (a, b) = (s * n / segments, (s + 1) * n / segments);
                self.rows[a..b].iter().map(|r| r.loss).sum::<f64>() / (b - a).max(1) as f64
            })
            .collect()
    }
}

/// Where [`train_loop`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Training-log CSV, rewritten atomically at every checkpoint and at the end.
    pub log_path: Option<PathBuf>,
    /// Directory for `step_{n}.irev` and `latest.irev`.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Deterministic sample order for `epoch`.
fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn augment<T: Scalar>(x: &Tensor<T>, aug: Augment, seed: u64, step: u64) -> Tensor<T> {
    let Augment::FlipCrop { pad } = aug else {
        return x.clone();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a06d);
    rng.set_stream(step);
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..n {
        let flip = rng.random_bool(0.5);
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xx in 0..w {
                    let fx = if flip { w - 1 - xx } else { xx };
                    let sx = fx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let v = x.get([i, ch, sy as usize, sx as usize]);
                    let at = out.index([i, ch, y, xx]);
                    out.data_mut()[at] = v;
                }
            }
        }
    }
    out
}

/// Runs SGD for `config.epochs` epochs, continuing from `optim.step`.
///
/// Sample order and augmentation are derived from `(seed, epoch)` and
/// `(seed, step)`, so a resumed run replays exactly the iterations an
/// uninterrupted one would have. Running BN statistics are updated after
/// every step.
pub fn train_loop<T: Scalar>(
    net: &mut Network<T>,
    optim: &mut OptimState<T>,
    data: &Dataset<T>,
    config: &TrainConfig,
    seed: u64,
    outputs: &TrainOutputs,
    mut log: TrainLog,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let n = data.len();
    let per_epoch = n.div_ceil(config.batch_size) as u64;
    let total = per_epoch * config.epochs as u64;
    let start = optim.step;
    log.rows.retain(|r| r.iteration < start);
    let started = Instant::now();
    let mut order = Vec::new();
    let mut order_epoch = u64::MAX;
    while optim.step < total {
        let step = optim.step;
        let epoch = step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(seed, epoch, n);
            order_epoch = epoch;
        }
        let k = (step % per_epoch) as usize * config.batch_size;
        let (x, labels) = data.batch(&order[k..(k + config.batch_size).min(n)]);
        let x = augment(&x, config.augment, seed, step);
        let out = match config.backward {
            BackwardKind::Stored => backward_stored(net, &x, &labels)?,
            BackwardKind::O1 => backward_o1(net, &x, &labels)?,
        };
        if !out.loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "loss diverged at iteration {step}"
            )));
        }
        let pred = argmax_rows(&out.logits, net.head.out_dim);
        let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let lr = sgd_step(net.params_mut(), &out.grads, optim)?;
        net.update_running_stats(&out.replay);
        log.rows.push(LogRow {
            iteration: step,
            lr,
            loss: out.loss,
            minibatch_accuracy: correct as f64 / labels.len() as f64,
        });
        if step.is_multiple_of(100) {
            log::info!(
                "iter {step}/{total} loss {:.4} acc {:.3} lr {lr} ({:.1}s)",
                out.loss,
                correct as f64 / labels.len() as f64,
                started.elapsed().as_secs_f64()
            );
        }
        let done = optim.step == total;
        if config
            .checkpoint_every
            .is_some_and(|e| e > 0 && optim.step.is_multiple_of(e))
            || done
        {
            write_outputs(net, optim, seed, outputs, &log)?;
        }
    }
    if start >= total {
        // resumed at or past the end: nothing ran, but leave the artifacts in place
        write_outputs(net, optim, seed, outputs, &log)?;
    }
    Ok(log)
}

fn write_outputs<T: Scalar>(
    net: &Network<T>,
    optim: &OptimState<T>,
    seed: u64,
    outputs: &TrainOutputs,
    log: &TrainLog,
) -> Result<()> {
    if let Some(p) = &outputs.log_path {
        log.to_csv().write(p)?;
    }
    if let Some(dir) = &outputs.checkpoint_dir {
        let ck = Checkpoint::new(net.clone(), Some(optim.clone()), seed);
        ck.save(&dir.join(format!("step_{}.irev", optim.step)))?;
        ck.save(&dir.join("latest.irev"))?;
    }
    Ok(())
}

/// Eval-mode accuracy over a dataset, in batches of `batch`.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = data.batch(chunk);
        let pred = net.predict(&x)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetConfig, SplitKind};
    use crate::training::OptimConfig;

    fn toy_data(n: usize) -> Dataset<f32> {
        // class 0: bright top half, class 1: bright bottom half
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let images = Tensor::from_fn([n, 3, 8, 8], |[i, c, y, x]| {
            let on = (y < 4) == (labels[i] == 0);
            let noise = ((i * 31 + c * 7 + y * 5 + x * 3) % 13) as f32 / 40.0;
            if on {
                0.7 + noise
            } else {
                noise
            }
        });
        Dataset::new(images, labels, 2).unwrap()
    }

    fn small_net() -> Network<f32> {
        let cfg =
            NetConfig::with_schedule([3, 8, 8], SplitKind::Bijective { factor: 2 }, 3, &[2], 2);
        Network::build(cfg, 3).unwrap()
    }

    fn run(
        epochs: usize,
        optim: &mut OptimState<f32>,
        net: &mut Network<f32>,
        outputs: &TrainOutputs,
    ) -> TrainLog {
        let config = TrainConfig {
            epochs,
            batch_size: 8,
            augment: Augment::FlipCrop { pad: 1 },
            backward: BackwardKind::O1,
            checkpoint_every: Some(5),
        };
        train_loop(
            net,
            optim,
            &toy_data(32),
            &config,
            17,
            outputs,
            TrainLog::default(),
        )
        .unwrap()
    }

    #[test]
    fn loss_falls_and_accuracy_rises() {
        let mut net = small_net();
        let mut optim = OptimState::new(OptimConfig::default(), &net.params()).unwrap();
        let log = run(6, &mut optim, &mut net, &TrainOutputs::default());
        assert_eq!(log.rows.len(), 24);
        let m = log.segment_means(3);
        assert!(m[2] < 0.5 * m[0], "{m:?}");
        assert!(evaluate(&net, &toy_data(32), 16).unwrap() > 0.9);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let outputs = TrainOutputs {
            log_path: Some(dir.path().join("log.csv")),
            checkpoint_dir: Some(dir.path().to_path_buf()),
        };
        let mut net = small_net();
        let mut optim = OptimState::new(OptimConfig::default(), &net.params()).unwrap();
        let full = run(3, &mut optim, &mut net, &TrainOutputs::default());

        let mut net2 = small_net();
        let mut optim2 = OptimState::new(OptimConfig::default(), &net2.params()).unwrap();
        run(1, &mut optim2, &mut net2, &outputs);
        let ck = Checkpoint::<f32>::load(&dir.path().join("step_4.irev")).unwrap();
        let (mut net3, mut optim3) = (ck.net, ck.optim.unwrap());
        assert_eq!(optim3.step, 4);
        let partial = TrainLog::from_csv(
            &CsvTable::parse(&std::fs::read_to_string(dir.path().join("log.csv")).unwrap())
                .unwrap(),
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            augment: Augment::FlipCrop { pad: 1 },
            backward: BackwardKind::O1,
            checkpoint_every: None,
        };
        let resumed = train_loop(
            &mut net3,
            &mut optim3,
            &toy_data(32),
            &config,
            17,
            &TrainOutputs::default(),
            partial,
        )
        .unwrap();
        assert_eq!(resumed, full);
        assert_eq!(net3, net);
    }

    #[test]
    fn flip_crop_zero_pad_is_a_shift() {
        let x = Tensor::<f32>::from_fn([4, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f32 + 1.0);
        let y = augment(&x, Augment::FlipCrop { pad: 2 }, 1, 0);
        assert_eq!(y.shape(), x.shape());
        // every kept pixel is an original value
        assert!(y
            .data()
            .iter()
            .all(|&v| v == 0.0 || (1.0..=16.0).contains(&v)));
        assert!(augment(&x, Augment::None, 1, 0).bitwise_eq(&x));
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = small_net();
        let mut optim = OptimState::new(OptimConfig::default(), &net.params()).unwrap();
        let empty = Dataset::new(Tensor::zeros([0, 3, 8, 8]), vec![], 2).unwrap();
        let r = train_loop(
            &mut net,
            &mut optim,
            &empty,
            &TrainConfig::default(),
            0,
            &TrainOutputs::default(),
            TrainLog::default(),
        );
        assert!(r.is_err());
    }
}
