//! Projected gradient flow of the M3G loss on a fixed embedding batch.
//!
//! Every step moves each row against its gradient and projects it back onto
//! the unit sphere.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::seeded_rng;
use crate::costs::MultiwayCost;
use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::m3g::m3g_gradient;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowInit {
    RandomSphere,
    /// Four points, three views, on the circle.
    PaperFig1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub epsilon: f64,
    pub cost: String,
    pub step_size: f64,
    pub steps: usize,
    pub seed: u64,
    pub init: FlowInit,
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// Seed of the committed circle configuration.
pub const FIG1_SEED: u64 = 20240214;

impl FlowConfig {
    /// `n = 4`, `k = 3`, `d = 2` on the circle.
    pub fn paper_fig1() -> Self {
        Self {
            n: 4,
            k: 3,
            d: 2,
            epsilon: 0.1,
            cost: "cv".into(),
            step_size: 0.05,
            steps: 500,
            seed: FIG1_SEED,
            init: FlowInit::PaperFig1,
            tolerance: 1e-9,
            max_iterations: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.d == 0 {
            return Err(Error::param("n/k/d", "sizes must be positive"));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::param("step_size", format!("must be ≥ 0, got {}", self.step_size)));
        }
        if self.init == FlowInit::PaperFig1 && (self.n, self.k, self.d) != (4, 3, 2) {
            return Err(Error::param("init", "paper_fig1 requires n=4, k=3, d=2"));
        }
        MultiwayCost::from_label(&self.cost)?;
        self.solver().validate()
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig::new(self.epsilon)
            .with_tolerance(self.tolerance)
            .with_max_iterations(self.max_iterations)
    }

    pub fn initial_embeddings(&self) -> Result<EmbeddingBatch> {
        let mut rng = seeded_rng(self.seed);
        match self.init {
            FlowInit::RandomSphere => EmbeddingBatch::random_sphere(self.k, self.n, self.d, &mut rng),
            FlowInit::PaperFig1 => Ok(fig1_embeddings(self.seed)),
        }
    }
}

/// Four evenly spaced cluster directions on the circle; every view places
/// its copy of point `i` at a jittered angle around a view-specific rotation
/// of center `i`, so the initial optimal polymatching differs from the
/// ground truth.
pub fn fig1_embeddings(seed: u64) -> EmbeddingBatch {
    let mut rng = seeded_rng(seed);
    let offsets = [0.0, 0.9, -0.9];
    let mut x = Array3::zeros((3, 4, 2));
    for (v, offset) in offsets.iter().enumerate() {
        for i in 0..4 {
            let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * 0.35;
            let angle = PI / 4.0 + i as f64 * PI / 2.0 + offset + jitter;
            x[[v, i, 0]] = angle.cos();
            x[[v, i, 1]] = angle.sin();
        }
    }
    EmbeddingBatch::normalized(x).expect("points on the circle")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowRecord {
    pub step: usize,
    pub loss: f64,
    pub delta: f64,
    pub iters: usize,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    /// One record per evaluated state, `steps + 1` in total.
    pub records: Vec<FlowRecord>,
    pub final_embeddings: EmbeddingBatch,
    /// Norm of the tangent gradient at the final state.
    pub final_tangent_norm: f64,
}

impl FlowTrajectory {
    pub fn initial_loss(&self) -> f64 {
        self.records[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().expect("non-empty trajectory").loss
    }

    /// CSV with header `step,loss,delta,iters`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,delta,iters\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e},{}\n", r.step, r.loss, r.delta, r.iters));
        }
        out
    }
}

pub fn run_flow(cfg: &FlowConfig) -> Result<FlowTrajectory> {
    cfg.validate()?;
    run_flow_from(cfg.initial_embeddings()?, cfg)
}

/// Runs the flow from explicit starting embeddings; sizes in `cfg` are
/// ignored.
pub fn run_flow_from(x0: EmbeddingBatch, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    let cost = MultiwayCost::from_label(&cfg.cost)?;
    let solver = cfg.solver();
    let mut x = x0;
    let mut records = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let g = match m3g_gradient(&x, &cost, &solver) {
            Ok(g) if g.result.loss.is_finite() => g,
            Ok(_) | Err(Error::Numerical(_)) | Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged {
                    step,
                    last_finite: Box::new(x.into_array()),
                })
            }
            Err(e) => return Err(e),
        };
        records.push(FlowRecord {
            step,
            loss: g.result.loss,
            delta: g.result.diagnostics.delta,
            iters: g.result.diagnostics.iterations,
        });
        if step == cfg.steps {
            let tangent = g.gradient.tangent(&x).norm();
            return Ok(FlowTrajectory {
                records,
                final_embeddings: x,
                final_tangent_norm: tangent,
            });
        }
        if cfg.step_size == 0.0 {
            continue;
        }
        let moved = x.as_array() - &(g.gradient.as_array() * cfg.step_size);
        x = EmbeddingBatch::normalized(moved).map_err(|_| Error::Diverged {
            step,
            last_finite: Box::new(x.as_array().clone()),
        })?;
    }
    unreachable!("loop returns on the last step")
}
