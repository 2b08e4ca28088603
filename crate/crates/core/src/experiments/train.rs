//! Synthetic multiview representation learning with a tiny two-layer
//! encoder and hand-written backward rules.
//!
//! Data: `clusters` Gaussian prototypes in input space; each sample is a
//! noisy copy of its prototype and each view adds fresh view noise every
//! epoch. Per batch, one view is encoded by the EMA teacher and the other
//! `k − 1` by the student; the teacher view rotates over all `k` positions
//! and the losses are averaged. Only student branches receive gradients.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use crate::baselines::{aggregate_ave_grad, aggregate_pwe_grad, ema_update, PairwiseLossKind};
use crate::costs::MultiwayCost;
use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::m3g::m3g_gradient;
use crate::solver::SolverConfig;
use crate::tensor::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainLoss {
    M3g,
    InfoncePwe,
    InfonceAve,
    ByolPwe,
    ByolAve,
}

impl TrainLoss {
    pub const ALL: [TrainLoss; 5] = [
        TrainLoss::M3g,
        TrainLoss::InfoncePwe,
        TrainLoss::InfonceAve,
        TrainLoss::ByolPwe,
        TrainLoss::ByolAve,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TrainLoss::M3g => "m3g",
            TrainLoss::InfoncePwe => "infonce_pwe",
            TrainLoss::InfonceAve => "infonce_ave",
            TrainLoss::ByolPwe => "byol_pwe",
            TrainLoss::ByolAve => "byol_ave",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.label() == label)
            .ok_or_else(|| Error::param("loss", format!("unknown loss {label:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrainConfig {
    pub clusters: usize,
    pub samples_per_cluster: usize,
    /// Held-out samples per cluster for the linear probe.
    pub test_per_cluster: usize,
    pub views: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Spread of cluster prototypes.
    pub cluster_scale: f64,
    /// Per-sample deviation from the prototype.
    pub sample_noise: f64,
    pub view_noise: f64,
    pub loss: TrainLoss,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub ema: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for SyntheticTrainConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            samples_per_cluster: 32,
            test_per_cluster: 32,
            views: 3,
            input_dim: 16,
            hidden_dim: 32,
            embed_dim: 8,
            cluster_scale: 1.0,
            sample_noise: 0.6,
            view_noise: 0.6,
            loss: TrainLoss::M3g,
            epochs: 200,
            batch: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            ema: 0.99,
            epsilon: 0.2,
            tau: 0.2,
            seed: 7,
        }
    }
}

impl SyntheticTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clusters", self.clusters),
            ("samples_per_cluster", self.samples_per_cluster),
            ("test_per_cluster", self.test_per_cluster),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("batch", self.batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.views < 2 {
            return Err(Error::param("views", "need at least two views"));
        }
        if self.batch > self.clusters * self.samples_per_cluster {
            return Err(Error::param("batch", "larger than the training set"));
        }
        TensorShape::new(self.views, self.batch)?;
        if !(0.0..=1.0).contains(&self.ema) {
            return Err(Error::param("ema", "must lie in [0, 1]"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.tau > 0.0) {
            return Err(Error::param("epsilon/tau", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainMetrics {
    /// Mean loss over the last epoch (NaN when no epoch ran).
    pub final_train_loss: f64,
    /// Mean cosine between views of the same held-out sample.
    pub view_alignment: f64,
    pub probe_accuracy: f64,
    /// Probe accuracy of the encoder before training.
    pub baseline_probe_accuracy: f64,
}

/// Two affine layers, tanh in between, rows projected onto the sphere.
#[derive(Debug, Clone, PartialEq)]
struct Encoder {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

struct ForwardCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    out: Array2<f64>,
    norms: Array1<f64>,
}

impl Encoder {
    fn new(input: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut init = |rows: usize, cols: usize| {
            let s = (1.0 / cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || s * rng.sample::<f64, _>(StandardNormal))
        };
        Self {
            w1: init(hidden, input),
            b1: Array1::zeros(hidden),
            w2: init(out, hidden),
            b2: Array1::zeros(out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.dim()),
            b2: Array1::zeros(self.b2.len()),
        }
    }

    fn forward(&self, input: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let hidden = (input.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh);
        let out = hidden.dot(&self.w2.t()) + &self.b2;
        let norms = out.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
        let z = &out / &norms.view().insert_axis(Axis(1));
        let cache = ForwardCache {
            input: input.clone(),
            hidden,
            out,
            norms,
        };
        (z, cache)
    }

    fn embed(&self, input: &Array2<f64>) -> Array2<f64> {
        self.forward(input).0
    }

    /// Accumulates parameter gradients for `dL/dz` into `grads`.
    fn backward(&self, cache: &ForwardCache, dz: &Array2<f64>, grads: &mut Encoder) {
        let z = &cache.out / &cache.norms.view().insert_axis(Axis(1));
        let mut dy = dz.clone();
        for ((mut row, zr), &nrm) in dy.outer_iter_mut().zip(z.outer_iter()).zip(&cache.norms) {
            let radial = row.dot(&zr);
            row.scaled_add(-radial, &zr);
            row /= nrm;
        }
        grads.w2 += &dy.t().dot(&cache.hidden);
        grads.b2 += &dy.sum_axis(Axis(0));
        let dh = dy.dot(&self.w2);
        let da = dh * cache.hidden.mapv(|h| 1.0 - h * h);
        grads.w1 += &da.t().dot(&cache.input);
        grads.b1 += &da.sum_axis(Axis(0));
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn params(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }
}

struct Dataset {
    train: Array2<f64>,
    train_labels: Vec<usize>,
    test: Array2<f64>,
    test_labels: Vec<usize>,
}

fn make_dataset(cfg: &SyntheticTrainConfig, rng: &mut ChaCha8Rng) -> Dataset {
    let gauss = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let prototypes = Array2::from_shape_simple_fn((cfg.clusters, cfg.input_dim), || {
        cfg.cluster_scale * gauss(rng)
    });
    let draw = |per: usize, rng: &mut ChaCha8Rng| {
        let mut x = Array2::zeros((cfg.clusters * per, cfg.input_dim));
        let mut labels = Vec::with_capacity(cfg.clusters * per);
        for c in 0..cfg.clusters {
            for s in 0..per {
                let mut row = x.row_mut(c * per + s);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = prototypes[[c, j]] + cfg.sample_noise * gauss(rng);
                }
                labels.push(c);
            }
        }
        (x, labels)
    };
    let (train, train_labels) = draw(cfg.samples_per_cluster, rng);
    let (test, test_labels) = draw(cfg.test_per_cluster, rng);
    Dataset {
        train,
        train_labels,
        test,
        test_labels,
    }
}

fn add_view_noise(x: &Array2<f64>, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    x.mapv(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
}

/// Loss value and gradient with respect to a `k × n × d` embedding array.
fn loss_and_grad(
    cfg: &SyntheticTrainConfig,
    z: Array3<f64>,
) -> Result<(f64, Array3<f64>)> {
    let infonce = PairwiseLossKind::infonce(cfg.tau);
    match cfg.loss {
        TrainLoss::M3g => {
            let x = EmbeddingBatch::new(z)?;
            let solver = SolverConfig::new(cfg.epsilon);
            let g = m3g_gradient(&x, &MultiwayCost::cv(), &solver)?;
            Ok((g.result.loss, g.gradient.0))
        }
        TrainLoss::InfoncePwe => aggregate_pwe_grad(&z, infonce),
        TrainLoss::InfonceAve => aggregate_ave_grad(&z, infonce, false),
        TrainLoss::ByolPwe => aggregate_pwe_grad(&z, PairwiseLossKind::Byol),
        TrainLoss::ByolAve => aggregate_ave_grad(&z, PairwiseLossKind::Byol, false),
    }
}

pub fn run_train(cfg: &SyntheticTrainConfig) -> Result<TrainMetrics> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let data = make_dataset(cfg, &mut rng);
    let mut student = Encoder::new(cfg.input_dim, cfg.hidden_dim, cfg.embed_dim, &mut rng);
    let mut teacher = student.clone();
    let mut velocity = student.zeros_like();

    let baseline_probe_accuracy = probe_accuracy(&student, &data);
    let k = cfg.views;
    let total = data.train.nrows();
    let mut order: Vec<usize> = (0..total).collect();
    let mut final_train_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(cfg.batch) {
            let base = data.train.select(Axis(0), chunk);
            let views: Vec<Array2<f64>> = (0..k)
                .map(|_| add_view_noise(&base, cfg.view_noise, &mut rng))
                .collect();
            let student_pass: Vec<(Array2<f64>, ForwardCache)> =
                views.iter().map(|v| student.forward(v)).collect();
            let teacher_z: Vec<Array2<f64>> = views.iter().map(|v| teacher.embed(v)).collect();

            let mut grads = student.zeros_like();
            let mut batch_loss = 0.0;
            for teacher_view in 0..k {
                let mut z = Array3::zeros((k, cfg.batch, cfg.embed_dim));
                for v in 0..k {
                    let src = if v == teacher_view {
                        &teacher_z[v]
                    } else {
                        &student_pass[v].0
                    };
                    z.index_axis_mut(Axis(0), v).assign(src);
                }
                let (loss, dz) = loss_and_grad(cfg, z)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "training loss became {loss} in epoch {epoch}"
                    )));
                }
                batch_loss += loss / k as f64;
                for v in (0..k).filter(|&v| v != teacher_view) {
                    let dzv = dz.index_axis(Axis(0), v).to_owned() / k as f64;
                    student.backward(&student_pass[v].1, &dzv, &mut grads);
                }
            }

            for ((p, vel), g) in student
                .params_mut()
                .into_iter()
                .zip(velocity.params_mut())
                .zip(grads.params())
            {
                for ((w, m), dw) in p.iter_mut().zip(vel.iter_mut()).zip(g) {
                    *m = cfg.momentum * *m + dw;
                    *w -= cfg.learning_rate * *m;
                }
            }
            let updated: Vec<Vec<f64>> = teacher
                .params()
                .into_iter()
                .zip(student.params())
                .map(|(t, s)| ema_update(t, s, cfg.ema))
                .collect::<Result<_>>()?;
            for (dst, src) in teacher.params_mut().into_iter().zip(updated) {
                dst.copy_from_slice(&src);
            }
            epoch_loss += batch_loss;
            batches += 1;
        }
        final_train_loss = epoch_loss / batches.max(1) as f64;
    }

    let view_alignment = alignment(&student, &data, cfg, &mut rng);
    Ok(TrainMetrics {
        final_train_loss,
        view_alignment,
        probe_accuracy: probe_accuracy(&student, &data),
        baseline_probe_accuracy,
    })
}

fn alignment(enc: &Encoder, data: &Dataset, cfg: &SyntheticTrainConfig, rng: &mut ChaCha8Rng) -> f64 {
    let views: Vec<Array2<f64>> = (0..cfg.views)
        .map(|_| enc.embed(&add_view_noise(&data.test, cfg.view_noise, rng)))
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..cfg.views {
        for b in a + 1..cfg.views {
            for (ra, rb) in views[a].outer_iter().zip(views[b].outer_iter()) {
                total += ra.dot(&rb);
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Multinomial logistic regression on frozen clean-sample embeddings,
/// fit on the training split and scored on the held-out split.
fn probe_accuracy(enc: &Encoder, data: &Dataset) -> f64 {
    let train = enc.embed(&data.train);
    let test = enc.embed(&data.test);
    let classes = data.train_labels.iter().max().map_or(1, |m| m + 1);
    let probe = LinearProbe::fit(&train, &data.train_labels, classes);
    probe.accuracy(&test, &data.test_labels)
}

pub struct LinearProbe {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearProbe {
    const STEPS: usize = 500;
    const RATE: f64 = 2.0;
    const L2: f64 = 1e-4;

    /// Full-batch gradient descent on the softmax cross-entropy.
    pub fn fit(features: &Array2<f64>, labels: &[usize], classes: usize) -> Self {
        let (m, d) = features.dim();
        let mut weights = Array2::zeros((classes, d));
        let mut bias = Array1::zeros(classes);
        for _ in 0..Self::STEPS {
            let mut logits = features.dot(&weights.t()) + &bias;
            for (mut row, &y) in logits.outer_iter_mut().zip(labels) {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - max).exp());
                let s = row.sum();
                row /= s;
                row[y] -= 1.0;
            }
            logits /= m as f64;
            let gw = logits.t().dot(features) + &(&weights * Self::L2);
            let gb = logits.sum_axis(Axis(0));
            weights.scaled_add(-Self::RATE, &gw);
            bias.scaled_add(-Self::RATE, &gb);
        }
        Self { weights, bias }
    }

    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        let logits = features.dot(&self.weights.t()) + &self.bias;
        logits
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }

    pub fn accuracy(&self, features: &Array2<f64>, labels: &[usize]) -> f64 {
        let hits = self
            .predict(features)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        hits as f64 / labels.len() as f64
    }
}
