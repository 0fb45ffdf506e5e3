//! Feedforward strategy classifier: ReLU hidden layers, raw logits out,
//! softmax cross-entropy training with minibatch SGD plus momentum, top-k
//! online prediction. No tensors, no GPU; weights are plain row-major
//! slices so the forward pass stays allocation-light and vectorizable.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::dot;

/// Affine feature normalization applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(p: usize) -> Self {
        Scaler {
            shift: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    pub fn fit(data: &[Vec<f64>]) -> Self {
        let p = data.first().map_or(0, Vec::len);
        let n = data.len().max(1) as f64;
        let mut shift = vec![0.0; p];
        for row in data {
            for (s, &v) in shift.iter_mut().zip(row) {
                *s += v;
            }
        }
        for s in shift.iter_mut() {
            *s /= n;
        }
        let mut var = vec![0.0; p];
        for row in data {
            for ((v, &x), &mu) in var.iter_mut().zip(row).zip(&shift) {
                *v += (x - mu) * (x - mu);
            }
        }
        let scale = var
            .iter()
            .map(|&v| (v / n).sqrt().max(1e-12))
            .collect();
        Scaler { shift, scale }
    }

    fn apply(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            theta
                .iter()
                .zip(&self.shift)
                .zip(&self.scale)
                .map(|((&t, &mu), &s)| (t - mu) / s),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major rows x cols weight block.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Layer {
            rows,
            cols,
            w: (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            b: vec![0.0; rows],
        }
    }

    fn matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            out.push(dot(&self.w[r * self.cols..(r + 1) * self.cols], x) + self.b[r]);
        }
    }
}

/// Training hyperparameters; the tuning ranges follow the offline search
/// space (depth, width, learning rate, batch size, epochs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Hidden layer count.
    pub depth: usize,
    pub width: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Momentum coefficient; 0 disables.
    pub momentum: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            depth: 3,
            width: 64,
            lr: 0.01,
            batch: 64,
            epochs: 30,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub input_dim: usize,
    pub classes: usize,
    pub scaler: Scaler,
    pub layers: Vec<Layer>,
}

impl NetworkModel {
    /// Build a network with seeded Glorot initialization.
    pub fn init(input_dim: usize, classes: usize, hp: &HyperParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for _ in 0..hp.depth {
            layers.push(Layer::glorot(hp.width, prev, &mut rng));
            prev = hp.width;
        }
        layers.push(Layer::glorot(classes, prev, &mut rng));
        NetworkModel {
            input_dim,
            classes,
            scaler: Scaler::identity(input_dim),
            layers,
        }
    }

    /// Raw logits; ReLU on hidden layers, no softmax (unnecessary for
    /// ranking).
    pub fn forward(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.input_dim);
        let mut cur = Vec::with_capacity(self.layers[0].cols);
        self.scaler.apply(theta, &mut cur);
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.matvec(&cur, &mut next);
            if l != last {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// The k most likely labels, by descending logit; ties to the lower
    /// label index.
    pub fn predict_topk(&self, theta: &[f64], k: usize) -> Vec<usize> {
        let logits = self.forward(theta);
        top_k_indices(&logits, k)
    }

    /// Flops of one forward pass as a function of the layer sizes only.
    pub fn forward_flops(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| 2 * (l.rows as u64) * (l.cols as u64))
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"PMQNET1\0")?;
        w.write_all(&(self.input_dim as u64).to_le_bytes())?;
        w.write_all(&(self.classes as u64).to_le_bytes())?;
        w.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        for v in self.scaler.shift.iter().chain(&self.scaler.scale) {
            w.write_all(&v.to_le_bytes())?;
        }
        for layer in &self.layers {
            w.write_all(&(layer.rows as u64).to_le_bytes())?;
            w.write_all(&(layer.cols as u64).to_le_bytes())?;
            for v in layer.w.iter().chain(&layer.b) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"PMQNET1\0" {
            return Err(Error::Format("bad model magic".into()));
        }
        let input_dim = read_u64(&mut r)? as usize;
        let classes = read_u64(&mut r)? as usize;
        let n_layers = read_u64(&mut r)? as usize;
        let shift = read_f64s(&mut r, input_dim)?;
        let scale = read_f64s(&mut r, input_dim)?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let w = read_f64s(&mut r, rows * cols)?;
            let b = read_f64s(&mut r, rows)?;
            layers.push(Layer { rows, cols, w, b });
        }
        if layers.is_empty() || layers.last().unwrap().rows != classes {
            return Err(Error::Format("model layer dims inconsistent".into()));
        }
        Ok(NetworkModel {
            input_dim,
            classes,
            scaler: Scaler { shift, scale },
            layers,
        })
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean softmax cross-entropy of a labeled batch (log-sum-exp form).
pub fn batch_loss(model: &NetworkModel, thetas: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (theta, &y) in thetas.iter().zip(labels) {
        let logits = model.forward(theta);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / thetas.len().max(1) as f64
}

/// Per-layer (dW, db) of the mean batch loss, by back-propagation.
pub fn batch_gradient(
    model: &NetworkModel,
    thetas: &[Vec<f64>],
    labels: &[usize],
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = model
        .layers
        .iter()
        .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
        .collect();
    let scale = 1.0 / thetas.len().max(1) as f64;
    let n_layers = model.layers.len();
    for (theta, &y) in thetas.iter().zip(labels) {
        // forward pass keeping activations
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut a0 = Vec::new();
        model.scaler.apply(theta, &mut a0);
        acts.push(a0);
        for (l, layer) in model.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.matvec(acts.last().unwrap(), &mut z);
            if l != n_layers - 1 {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        // output delta: softmax - onehot
        let mut delta = softmax(acts.last().unwrap());
        delta[y] -= 1.0;
        for l in (0..n_layers).rev() {
            let layer = &model.layers[l];
            let input = &acts[l];
            let (gw, gb) = &mut grads[l];
            for r in 0..layer.rows {
                let d = delta[r] * scale;
                if d != 0.0 {
                    let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    gb[r] += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.cols];
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                        for (p, &w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                }
                // ReLU mask of the layer input
                for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    grads
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub hyperparams: HyperParams,
    pub loss_curve: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub final_val_acc: f64,
    /// Sample counts of the 80/20 split.
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

/// Deterministic 80/20 index split.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_val = n / 5;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn accuracy_on(model: &NetworkModel, thetas: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let hits = idx
        .iter()
        .filter(|&&i| model.predict_topk(&thetas[i], 1)[0] == labels[i])
        .count();
    hits as f64 / idx.len() as f64
}

/// Train a classifier with minibatch SGD + momentum on softmax
/// cross-entropy. Deterministic given the seed (fixed shuffle order).
/// The optional pruner gets (epoch, val_acc) after each epoch and may stop
/// the run early (median-stopping during tuning).
pub fn train_with_pruner(
    thetas: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    hp: &HyperParams,
    seed: u64,
    pruner: Option<&dyn Fn(usize, f64) -> bool>,
) -> Result<(NetworkModel, TrainReport)> {
    if thetas.is_empty() || thetas.len() != labels.len() {
        return Err(Error::Config("training set empty or inconsistent".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!("label {bad} >= classes {classes}")));
    }
    let p = thetas[0].len();
    let (train_idx, val_idx) = split_indices(thetas.len(), seed);

    // single class: nothing to learn, constant model achieves zero loss
    if classes == 1 {
        let mut model = NetworkModel {
            input_dim: p,
            classes: 1,
            scaler: Scaler::identity(p),
            layers: vec![Layer::zeros(1, p)],
        };
        model.scaler = Scaler::fit(thetas);
        let report = TrainReport {
            hyperparams: *hp,
            loss_curve: vec![0.0],
            train_acc: vec![1.0],
            val_acc: vec![1.0],
            final_val_acc: 1.0,
            n_train: train_idx.len(),
            n_val: val_idx.len(),
            seed,
        };
        return Ok((model, report));
    }

    let mut model = NetworkModel::init(p, classes, hp, seed);
    let train_thetas: Vec<Vec<f64>> = train_idx.iter().map(|&i| thetas[i].clone()).collect();
    model.scaler = Scaler::fit(&train_thetas);

    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = model
        .layers
        .iter()
        .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
        .collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c4);
    let mut order = train_idx.clone();
    let mut loss_curve = Vec::new();
    let mut train_acc = Vec::new();
    let mut val_acc = Vec::new();

    for epoch in 0..hp.epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hp.batch.max(1)) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| thetas[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = batch_loss(&model, &bx, &by);
            if !loss.is_finite() {
                return Err(Error::Diverged(epoch));
            }
            epoch_loss += loss;
            batches += 1;
            let grads = batch_gradient(&model, &bx, &by);
            for ((layer, vel), (gw, gb)) in
                model.layers.iter_mut().zip(&mut velocity).zip(&grads)
            {
                for ((w, v), &g) in layer.w.iter_mut().zip(&mut vel.0).zip(gw) {
                    *v = hp.momentum * *v + g;
                    *w -= hp.lr * *v;
                }
                for ((b, v), &g) in layer.b.iter_mut().zip(&mut vel.1).zip(gb) {
                    *v = hp.momentum * *v + g;
                    *b -= hp.lr * *v;
                }
            }
        }
        loss_curve.push(epoch_loss / batches.max(1) as f64);
        train_acc.push(accuracy_on(&model, thetas, labels, &train_idx));
        let va = accuracy_on(&model, thetas, labels, &val_idx);
        val_acc.push(va);
        if let Some(p) = pruner {
            if p(epoch, va) {
                break;
            }
        }
    }

    let final_val_acc = *val_acc.last().unwrap_or(&0.0);
    let report = TrainReport {
        hyperparams: *hp,
        loss_curve,
        train_acc,
        val_acc,
        final_val_acc,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        seed,
    };
    Ok((model, report))
}

pub fn train(
    thetas: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    hp: &HyperParams,
    seed: u64,
) -> Result<(NetworkModel, TrainReport)> {
    train_with_pruner(thetas, labels, classes, hp, seed, None)
}

/// Random search over the offline ranges (depth 3..15, width 4..128,
/// learning rate 1e-5..1e-1 log-uniform, batch 32..256, epochs 5..30) with
/// median stopping: a trial whose validation accuracy falls below the
/// median of completed trials at the same epoch is cut short.
pub fn tune(
    thetas: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    budget: usize,
    seed: u64,
) -> Result<HyperParams> {
    if budget == 0 {
        return Err(Error::Config("tune budget must be >= 1".into()));
    }
    let mut best: Option<(f64, usize, HyperParams)> = None;
    let mut histories: Vec<Vec<f64>> = Vec::new();
    for trial in 0..budget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
        rng.set_stream(trial as u64 + 1);
        let hp = HyperParams {
            depth: rng.random_range(3..=15),
            width: rng.random_range(4..=128),
            lr: 10f64.powf(rng.random_range(-5.0..=-1.0f64)),
            batch: rng.random_range(32..=256),
            epochs: rng.random_range(5..=30),
            momentum: 0.9,
        };
        let curve = std::cell::RefCell::new(Vec::<f64>::new());
        let pruner = |epoch: usize, va: f64| -> bool {
            curve.borrow_mut().push(va);
            if histories.is_empty() || epoch == 0 {
                return false;
            }
            let mut at_epoch: Vec<f64> = histories
                .iter()
                .map(|h| h[epoch.min(h.len() - 1)])
                .collect();
            at_epoch.sort_by(f64::total_cmp);
            let median = at_epoch[at_epoch.len() / 2];
            va < median
        };
        let result = train_with_pruner(thetas, labels, classes, &hp, seed, Some(&pruner));
        let final_acc = match result {
            Ok((_, report)) => report.final_val_acc,
            Err(Error::Diverged(_)) => 0.0,
            Err(e) => return Err(e),
        };
        histories.push(curve.into_inner());
        if histories.last().unwrap().is_empty() {
            histories.last_mut().unwrap().push(0.0);
        }
        let better = match &best {
            None => true,
            Some((acc, _, _)) => final_acc > *acc,
        };
        if better {
            best = Some((final_acc, trial, hp));
        }
    }
    Ok(best.unwrap().2)
}
