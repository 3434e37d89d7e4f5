//! Classification head, loss, RMSprop and the epoch loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bptt::{backward_sequence_acc, StateGrad};
use crate::cells::{forward_sequence, CellGrads, CellParams, CellState, Variant};
use crate::error::{check_dim, Error, Result};
use crate::mnist::SequenceDataset;
use crate::numkit::{axpy, matvec_acc, matvec_t_acc, outer_acc, ActivationKind, Matrix, Vector};
use crate::params::ParamSet;

/// Linear read-out `logits = W_hy h + b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// output × hidden.
    pub weights: Matrix,
    pub bias: Vector,
}

impl DenseParams {
    pub fn zeros(output_dim: usize, hidden_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(output_dim, hidden_dim),
            bias: Vector::zeros(output_dim),
        }
    }

    /// Uniform weights in `±sqrt(6 / (hidden + output))`, zero bias.
    pub fn init(output_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // stream 0 of this seed initializes the cell
        rng.set_stream(u64::MAX);
        let bound = (6.0 / (hidden_dim + output_dim) as f64).sqrt();
        let weights = Matrix::from_fn(output_dim, hidden_dim, |_, _| {
            rng.random_range(-bound..bound)
        });
        Self {
            weights,
            bias: Vector::zeros(output_dim),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

impl ParamSet for DenseParams {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.weights.as_slice(), self.bias.as_slice()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.as_mut_slice(), self.bias.as_mut_slice()]
    }
}

pub fn dense_forward(p: &DenseParams, h: &[f64]) -> Result<Vector> {
    check_dim("dense input", p.weights.cols(), h.len())?;
    check_dim("dense bias", p.weights.rows(), p.bias.len())?;
    let mut out = p.bias.clone();
    matvec_acc(&p.weights, h, &mut out);
    Ok(out)
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient with
/// respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::Data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vector = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Recurrent cell followed by the dense classifier on the last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cell: CellParams,
    pub head: DenseParams,
    pub activation: ActivationKind,
}

/// Gradient buffer matching a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub cell: CellGrads,
    pub head: DenseParams,
}

impl Model {
    pub fn new(
        variant: Variant,
        activation: ActivationKind,
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(Self {
            cell: CellParams::init(variant, input_dim, hidden_dim, seed)?,
            head: DenseParams::init(classes, hidden_dim, seed),
            activation,
        })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            cell: self.cell.zeros_like(),
            head: DenseParams::zeros(self.head.output_dim(), self.cell.hidden_dim),
        }
    }

    pub fn logits<I>(&self, xs: I) -> Result<Vector>
    where
        I: IntoIterator,
        I::Item: AsRef<[f64]>,
    {
        let (state, _) = forward_sequence(
            &self.cell,
            self.activation,
            xs,
            &CellState::zeros(self.cell.hidden_dim),
        )?;
        dense_forward(&self.head, &state.h)
    }

    /// Loss on one sequence, adding its gradient into `grads`. Returns the loss
    /// and the predicted class.
    pub fn loss_and_grad<I>(
        &self,
        xs: I,
        label: usize,
        grads: &mut ModelGrads,
    ) -> Result<(f64, usize)>
    where
        I: IntoIterator,
        I::Item: AsRef<[f64]>,
    {
        let (state, caches) = forward_sequence(
            &self.cell,
            self.activation,
            xs,
            &CellState::zeros(self.cell.hidden_dim),
        )?;
        let logits = dense_forward(&self.head, &state.h)?;
        let (loss, dlogits) = softmax_xent(&logits, label)?;

        outer_acc(&mut grads.head.weights, &dlogits, &state.h);
        axpy(1.0, &dlogits, &mut grads.head.bias);
        let mut dh = Vector::zeros(self.cell.hidden_dim);
        matvec_t_acc(&self.head.weights, &dlogits, &mut dh);
        let upstream = StateGrad {
            dh,
            dc: Vector::zeros(self.cell.hidden_dim),
        };
        backward_sequence_acc(
            &self.cell,
            self.activation,
            &caches,
            &upstream,
            None,
            &mut grads.cell,
            false,
        )?;
        Ok((loss, argmax(&logits)))
    }
}

impl ParamSet for Model {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.cell.slices();
        s.extend(self.head.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.cell.slices_mut();
        s.extend(self.head.slices_mut());
        s
    }
}

impl ParamSet for ModelGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.cell.slices();
        s.extend(self.head.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.cell.slices_mut();
        s.extend(self.head.slices_mut());
        s
    }
}

/// Running mean of squared gradients, one accumulator per parameter scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub rho: f64,
    pub eps: f64,
    accum: Vec<Vec<f64>>,
}

impl RmspropState {
    pub fn new(params: &impl ParamSet, rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            accum: params.slices().iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accum
    }
}

/// `s ← ρ s + (1 − ρ) g²;  θ ← θ − η g / (√s + ε)`, elementwise.
pub fn rmsprop_update(
    params: &mut impl ParamSet,
    grads: &impl ParamSet,
    state: &mut RmspropState,
    learning_rate: f64,
) -> Result<()> {
    let g = grads.slices();
    let p = params.slices_mut();
    if g.len() != p.len() || g.len() != state.accum.len() {
        return Err(Error::Config(
            "optimizer state does not match parameters".into(),
        ));
    }
    let (rho, eps) = (state.rho, state.eps);
    for ((theta, grad), acc) in p.into_iter().zip(g).zip(state.accum.iter_mut()) {
        if theta.len() != grad.len() || theta.len() != acc.len() {
            return Err(Error::Config(
                "optimizer state does not match parameters".into(),
            ));
        }
        for ((t, &gi), s) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
            *s = rho * *s + (1.0 - rho) * gi * gi;
            *t -= learning_rate * gi / (s.sqrt() + eps);
        }
    }
    Ok(())
}

/// Training knobs. Defaults: 100 hidden units, 100 epochs, batch 32,
/// η = 1e-3, RMSprop with ρ = 0.9 and ε = 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub activation: ActivationKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub rho: f64,
    pub eps: f64,
    pub hidden_dim: usize,
    /// Worker threads for the per-example passes of a batch. Results do not
    /// depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Lstm,
            activation: ActivationKind::Tanh,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            rho: 0.9,
            eps: 1e-8,
            hidden_dim: 100,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate must be ≥ 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.hidden_dim == 0 {
            return bad("hidden size must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

/// An epoch whose test accuracy fell more than a threshold below the best
/// accuracy seen before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyDrop {
    pub epoch: usize,
    pub running_max: f64,
    pub test_acc: f64,
}

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc,seconds";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn best_test_accuracy(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .map(|r| (r.epoch, r.test_acc))
            .fold(None, |best, cur| match best {
                Some((_, b)) if b >= cur.1 => best,
                _ => Some(cur),
            })
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_acc)
    }

    pub fn accuracy_drops(&self, threshold: f64) -> Vec<AccuracyDrop> {
        let mut running_max = f64::NEG_INFINITY;
        let mut drops = Vec::new();
        for r in &self.records {
            if r.test_acc < running_max - threshold {
                drops.push(AccuracyDrop {
                    epoch: r.epoch,
                    running_max,
                    test_acc: r.test_acc,
                });
            }
            running_max = running_max.max(r.test_acc);
        }
        drops
    }

    /// CSV with [`CSV_HEADER`], six significant digits per value. With
    /// `with_time == false` the `seconds` column is written as `0` so that
    /// repeated runs produce identical bytes.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let secs = if with_time {
                format_sig(r.seconds, 6)
            } else {
                "0".into()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                format_sig(r.train_loss, 6),
                format_sig(r.train_acc, 6),
                format_sig(r.test_loss, 6),
                format_sig(r.test_acc, 6),
                secs
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, with_time: bool) -> Result<()> {
        fs::write(path, self.to_csv(with_time))?;
        Ok(())
    }
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Either the calling thread or a dedicated rayon pool. Work is always split
/// per item and reduced by the caller in item order, so results are identical
/// for any thread count.
pub enum Workers {
    Serial,
    Pool(rayon::ThreadPool),
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::Serial);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Self::Pool)
            .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
    }

    fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        match self {
            Self::Serial => items.iter_mut().enumerate().map(|(k, t)| f(k, t)).collect(),
            Self::Pool(pool) => pool.install(|| {
                items
                    .par_iter_mut()
                    .enumerate()
                    .map(|(k, t)| f(k, t))
                    .collect()
            }),
        }
    }

    fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Self::Serial => (0..n).map(f).collect(),
            Self::Pool(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

/// Example order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mean loss and accuracy over `data`. Does not touch the model.
pub fn evaluate(model: &Model, data: &SequenceDataset, workers: &Workers) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let per_example = workers.map_range(data.len(), |i| -> Result<(f64, bool)> {
        let logits = model.logits(data.sequence(i))?;
        let (loss, _) = softmax_xent(&logits, data.label(i))?;
        Ok((loss, argmax(&logits) == data.label(i)))
    });
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in per_example {
        let (l, ok) = r?;
        loss += l;
        correct += usize::from(ok);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Model, optimizer state and scratch buffers for one training run.
pub struct Trainer {
    pub model: Model,
    pub optimizer: RmspropState,
    pub config: TrainConfig,
    workers: Workers,
    example_grads: Vec<ModelGrads>,
    batch_grad: ModelGrads,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let model = Model::new(
            config.variant,
            config.activation,
            input_dim,
            config.hidden_dim,
            classes,
            config.seed,
        )?;
        Self::with_model(config, model)
    }

    pub fn with_model(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        let optimizer = RmspropState::new(&model, config.rho, config.eps);
        let batch_grad = model.zero_grads();
        let example_grads = vec![batch_grad.clone(); config.batch_size];
        Ok(Self {
            workers: Workers::new(config.threads)?,
            model,
            optimizer,
            config,
            example_grads,
            batch_grad,
        })
    }

    /// One pass over `data` in the shuffled order for `epoch` (1-based).
    /// Returns the mean training loss and accuracy, accumulated from the
    /// forward passes made during training.
    pub fn train_epoch(&mut self, data: &SequenceDataset, epoch: usize) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        check_dim("sequence width", self.model.cell.input_dim, data.width())?;
        let order = epoch_order(data.len(), self.config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for (batch_idx, batch) in order.chunks(self.config.batch_size).enumerate() {
            let model = &self.model;
            let bufs = &mut self.example_grads[..batch.len()];
            let results = self.workers.map_mut(bufs, |k, buf| {
                buf.fill_zero();
                let i = batch[k];
                model.loss_and_grad(data.sequence(i), data.label(i), buf)
            });

            let diverged = |msg: String| {
                Error::NumericOverflow(format!("epoch {epoch}, batch {batch_idx}: {msg}"))
            };
            for (k, r) in results.into_iter().enumerate() {
                let (loss, predicted) = r.map_err(|e| match e {
                    Error::NumericOverflow(msg) => diverged(msg),
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(diverged(format!("loss is {loss}")));
                }
                loss_sum += loss;
                correct += usize::from(predicted == data.label(batch[k]));
            }

            self.batch_grad.fill_zero();
            for g in &self.example_grads[..batch.len()] {
                self.batch_grad.add_assign_from(g);
            }
            self.batch_grad.scale(1.0 / batch.len() as f64);
            rmsprop_update(
                &mut self.model,
                &self.batch_grad,
                &mut self.optimizer,
                self.config.learning_rate,
            )?;
        }
        let n = data.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    pub fn evaluate(&self, data: &SequenceDataset) -> Result<(f64, f64)> {
        evaluate(&self.model, data, &self.workers)
    }

    /// Trains for `config.epochs` epochs, evaluating on `test` after each one.
    pub fn fit(
        &mut self,
        train: &SequenceDataset,
        test: &SequenceDataset,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<MetricsLog> {
        let mut log = MetricsLog::default();
        for epoch in 1..=self.config.epochs {
            let start = Instant::now();
            let (train_loss, train_acc) = self.train_epoch(train, epoch)?;
            let (test_loss, test_acc) = self.evaluate(test)?;
            let record = EpochRecord {
                epoch,
                train_loss,
                train_acc,
                test_loss,
                test_acc,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_epoch(&record);
            log.push(record);
        }
        Ok(log)
    }
}
