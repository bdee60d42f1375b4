//! Minibatch training with adaptive-moment gradient descent.
//!
//! A run is fully determined by (seed, config, dataset): model init,
//! minibatch order and reparameterization noise each come from a named
//! substream of the master seed (see [`crate::rng::seed_streams`]), and
//! only training-split rows ever reach a gradient step.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Matrix, MultimodalDataset};
use crate::net::{Model, ModelDims, PartitionSpec};
use crate::objective::{draw_noise, objective_loss, Batch, ObjectiveConfig};
use crate::rng::{self, seed_streams};
use crate::tensor::{backward, Tensor};
use crate::{math, Error, Result};

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            epochs: 300,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed,
            objective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::InvalidConfig(String::from("lr must be >= 0")));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(String::from(
                "epochs and batch_size must be >= 1",
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::InvalidConfig(String::from(
                "optimizer moments need 0 <= beta < 1 and eps > 0",
            )));
        }
        self.objective.validate()
    }
}

/// Run description echoed into output manifests.
#[derive(Debug, Clone)]
pub struct TrainManifest {
    pub seed: u64,
    pub objective: &'static str,
    pub supervised: bool,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub param_count: usize,
    pub dims: ModelDims,
}

/// Trained parameters plus the loss trace and run manifest.
pub struct TrainOutcome {
    pub model: Model,
    /// Mean per-sample training loss per epoch.
    pub loss_history: Vec<f64>,
    pub manifest: TrainManifest,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(model: &Model) -> Adam {
        let shapes: Vec<usize> = model
            .params()
            .entries()
            .iter()
            .map(|e| e.values.len())
            .collect();
        Adam {
            m: shapes.iter().map(|&l| alloc::vec![0.0; l]).collect(),
            v: shapes.iter().map(|&l| alloc::vec![0.0; l]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let b1t = 1.0 - libm::pow(cfg.beta1, self.t as f64);
        let b2t = 1.0 - libm::pow(cfg.beta2, self.t as f64);
        for (i, entry) in model.params_mut().entries_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), mi), vi) in entry
                .values
                .iter_mut()
                .zip(&grads[i])
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                let m_hat = *mi / b1t;
                let v_hat = *vi / b2t;
                *p -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
            }
        }
    }
}

fn gather_labels(y: &[u8], idx: &[usize]) -> Tensor {
    let vals: Vec<f64> = idx.iter().map(|&r| y[r] as f64).collect();
    Tensor::constant(idx.len(), 1, vals).expect("label length")
}

/// Train a fresh model on the training split of a prepared dataset.
pub fn train(
    ds: &MultimodalDataset,
    partition: PartitionSpec,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.standardization.is_none() {
        return Err(Error::InvalidConfig(String::from(
            "dataset must be standardized before training",
        )));
    }
    let train_idx = ds.train_indices()?;
    let test_idx = ds.test_indices()?;
    if cfg.objective.supervised && ds.y.is_none() {
        return Err(Error::MissingLabels);
    }

    let dims = ModelDims::new(ds.x1.cols(), ds.x2.cols(), hidden, partition)?;
    let mut streams = seed_streams(cfg.seed);
    let mut model = Model::init(dims, &mut streams.init);
    let mut adam = Adam::new(&model);

    // materialize the training split once; test rows never enter a step
    let x1_train: Matrix = ds.x1.select_rows(&train_idx);
    let x2_train: Matrix = ds.x2.select_rows(&train_idx);
    let y_train: Option<Vec<u8>> = ds
        .y
        .as_ref()
        .map(|y| train_idx.iter().map(|&r| y[r]).collect());

    let n_train = train_idx.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut streams.batch_order, &mut order);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::new(
                x1_train.select_rows(chunk).to_tensor(),
                x2_train.select_rows(chunk).to_tensor(),
                y_train.as_ref().map(|y| gather_labels(y, chunk)),
            )?;
            let noise = draw_noise(&cfg.objective, &dims, chunk.len(), &mut streams.noise);

            let tape = crate::tensor::Tape::new();
            let bound = model.bind(&tape)?;
            let out = objective_loss(&bound, &cfg.objective, &batch, &noise)?;
            let loss = out.loss.item()?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            let grads = backward(&out.loss)?;
            let grad_arrays = bound.gradient_arrays(&grads);
            drop(bound);
            adam.step(&mut model, &grad_arrays, cfg);
            epoch_loss += loss * chunk.len() as f64;
        }
        loss_history.push(epoch_loss / n_train as f64);
    }

    let manifest = TrainManifest {
        seed: cfg.seed,
        objective: cfg.objective.kind.name(),
        supervised: cfg.objective.supervised,
        beta: cfg.objective.beta,
        lr: cfg.lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        n_train,
        n_test: test_idx.len(),
        param_count: model.param_count(),
        dims,
    };
    Ok(TrainOutcome {
        model,
        loss_history,
        manifest,
    })
}
