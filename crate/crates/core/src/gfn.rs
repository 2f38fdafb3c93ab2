//! Generative feedback network training.
//!
//! Each iteration: sample noise, generate a synthetic batch, score it two
//! ways — the forgetting loss (cross-entropy of the frozen model's logits on
//! the batch against forgotten labels) and the retention loss (cross-entropy
//! on the retained few-shot data after a one-step update of the model over
//! the combined batch). The generator descends the stabilized objective
//!
//! ```text
//! J = lambda / L_max + (1 - lambda) * L_min
//! ```
//!
//! whose reciprocal first term keeps gradients bounded as L_max grows, while
//! lambda itself climbs its own gradient (1/L_max - L_min) under a clamp to
//! [margin, 1 - margin]. The one-step update is kept inside the graph, so
//! dJ/dphi includes the second-order path through the updated weights.

use crate::autodiff::{sgd_step, Graph, NodeId, OptimStep, Tensor};
use crate::data::LabeledDataset;
use crate::models::{init_generator, ClassifierModel, DataRange, Generator};
use crate::util::{derive_seed, Rng};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfnConfig {
    /// Rate of the one-step inner update the retention loss is evaluated
    /// through.
    pub inner_rate: f64,
    /// Generator step size.
    pub generator_rate: f64,
    /// Trade-off coefficient step size.
    pub lambda_rate: f64,
    pub lambda0: f64,
    /// Iterations of the training loop.
    pub epochs: usize,
    /// Noise samples per iteration.
    pub batch_size: usize,
    /// Clamp margin keeping lambda strictly inside (0, 1).
    pub lambda_margin: f64,
    /// Floor applied to the forgetting loss before its reciprocal.
    pub loss_max_floor: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// Detach the inner update, dropping the second-order term of dJ/dphi.
    pub first_order: bool,
    pub seed: u64,
}

impl Default for GfnConfig {
    fn default() -> Self {
        GfnConfig {
            inner_rate: 4e-3,
            generator_rate: 4e-3,
            lambda_rate: 0.01,
            lambda0: 0.5,
            epochs: 20,
            batch_size: 32,
            lambda_margin: 1e-3,
            loss_max_floor: 1e-6,
            weight_decay: 1e-4,
            clip_norm: None,
            first_order: false,
            seed: 0,
        }
    }
}

impl GfnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_rate < 0.0 || self.generator_rate < 0.0 || self.lambda_rate < 0.0 {
            return Err(Error::Config("rates must be non-negative".into()));
        }
        if !(self.lambda_margin > 0.0 && self.lambda_margin < 0.5) {
            return Err(Error::Config(format!("lambda margin {} outside (0, 0.5)", self.lambda_margin)));
        }
        if !(self.lambda0 > self.lambda_margin && self.lambda0 < 1.0 - self.lambda_margin) {
            return Err(Error::Config(format!(
                "lambda0 {} outside ({}, {})",
                self.lambda0,
                self.lambda_margin,
                1.0 - self.lambda_margin
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.loss_max_floor > 0.0) {
            return Err(Error::Config("loss_max_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfnIteration {
    pub t: usize,
    pub lambda: f64,
    pub l_max: f64,
    pub l_min: f64,
    pub j: f64,
    pub grad_phi_norm: f64,
    pub grad_lambda_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GfnTrace {
    pub iterations: Vec<GfnIteration>,
}

impl GfnTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "t,lambda,l_max,l_min,j,grad_phi_norm,grad_lambda_norm")?;
        for it in &self.iterations {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                it.t, it.lambda, it.l_max, it.l_min, it.j, it.grad_phi_norm, it.grad_lambda_norm
            )?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<GfnTrace> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        lines.next().ok_or_else(|| Error::Config("empty trace csv".into()))??;
        let mut iterations = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Config(format!("trace row with {} fields", fields.len())));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .parse()
                    .map_err(|e| Error::Config(format!("bad trace value: {e}")))
            };
            iterations.push(GfnIteration {
                t: fields[0]
                    .parse()
                    .map_err(|e| Error::Config(format!("bad trace index: {e}")))?,
                lambda: num(1)?,
                l_max: num(2)?,
                l_min: num(3)?,
                j: num(4)?,
                grad_phi_norm: num(5)?,
                grad_lambda_norm: num(6)?,
            });
        }
        Ok(GfnTrace { iterations })
    }
}

/// Forgotten labels assigned round-robin over a generated batch.
pub fn round_robin_labels(forget_labels: &[usize], batch: usize) -> Vec<usize> {
    (0..batch).map(|i| forget_labels[i % forget_labels.len()]).collect()
}

/// Stabilized objective value: `lambda / max(l_max, floor) + (1-lambda) * l_min`.
pub fn gfn_objective(l_max: f64, l_min: f64, lambda: f64, floor: f64) -> f64 {
    lambda / l_max.max(floor) + (1.0 - lambda) * l_min
}

/// Projected gradient-ascent step for the trade-off coefficient:
/// `clamp(lambda + rate * (1/l_max - l_min), margin, 1 - margin)`.
pub fn lambda_step(lambda: f64, l_max: f64, l_min: f64, rate: f64, margin: f64) -> f64 {
    (lambda + rate * (1.0 / l_max - l_min)).clamp(margin, 1.0 - margin)
}

/// Forgetting loss as a plain value: cross-entropy of the frozen model on
/// generated samples against round-robin forgotten labels, floored.
pub fn loss_max_value(
    gen: &Generator,
    model: &ClassifierModel,
    forget_labels: &[usize],
    z: &Tensor,
    floor: f64,
) -> Result<f64> {
    if forget_labels.is_empty() {
        return Err(Error::EmptyInput("loss_max"));
    }
    let samples = gen.forward(z)?;
    let (_, logits) = model.forward(&samples)?;
    let labels = round_robin_labels(forget_labels, z.rows()?);
    Ok(crate::autodiff::cross_entropy_loss(&logits, &labels)?.max(floor))
}

/// One-step updated model weights, as graph nodes:
/// `theta' = theta0 - rate * grad(CE over generated ++ retained)`.
///
/// With `first_order` the gradient nodes are frozen into constants, which
/// keeps the values identical but cuts the path from the generator into
/// theta'.
pub fn inner_update(
    g: &mut Graph,
    model: &ClassifierModel,
    theta0: &[NodeId],
    generated: NodeId,
    generated_labels: &[usize],
    retained: &LabeledDataset,
    rate: f64,
    first_order: bool,
) -> Result<Vec<NodeId>> {
    if generated_labels.is_empty() && retained.is_empty() {
        return Err(Error::EmptyInput("inner_update"));
    }
    let rx = g.constant(retained.inputs.clone());
    let union_x = g.concat_rows(generated, rx)?;
    let mut union_y = generated_labels.to_vec();
    union_y.extend_from_slice(&retained.labels);
    let (_, logits) = model.forward_graph(g, theta0, union_x)?;
    let loss = g.cross_entropy(logits, union_y)?;
    let grads = g.grad_nodes(loss, theta0)?;
    theta0
        .iter()
        .zip(grads)
        .map(|(&p, grad)| {
            let grad = if first_order {
                g.constant(g.value(grad).clone())
            } else {
                grad
            };
            let step = g.scale(grad, rate)?;
            g.sub(p, step)
        })
        .collect()
}

/// Retention loss: cross-entropy of the (updated) weights on the retained
/// few-shot data.
pub fn loss_min(
    g: &mut Graph,
    model: &ClassifierModel,
    theta: &[NodeId],
    retained: &LabeledDataset,
) -> Result<NodeId> {
    if retained.is_empty() {
        return Err(Error::EmptyInput("loss_min"));
    }
    let rx = g.constant(retained.inputs.clone());
    let (_, logits) = model.forward_graph(g, theta, rx)?;
    g.cross_entropy(logits, retained.labels.clone())
}

/// One fully built iteration of the training objective.
pub struct GfnStep {
    pub graph: Graph,
    pub generator_params: Vec<NodeId>,
    pub loss_max: NodeId,
    pub loss_min: NodeId,
    pub objective: NodeId,
}

pub fn build_gfn_step(
    model: &ClassifierModel,
    gen: &Generator,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    z: &Tensor,
    lambda: f64,
    cfg: &GfnConfig,
) -> Result<GfnStep> {
    if forget_labels.is_empty() {
        return Err(Error::EmptyInput("build_gfn_step"));
    }
    let mut g = Graph::new();
    let phi = g.params(gen.params.tensors());
    let zn = g.constant(z.clone());
    let samples = gen.forward_graph(&mut g, &phi, zn)?;
    let theta0: Vec<NodeId> = model
        .params
        .iter()
        .map(|t| g.leaf_grad(t.clone()))
        .collect();

    let labels = round_robin_labels(forget_labels, z.rows()?);
    let (_, gen_logits) = model.forward_graph(&mut g, &theta0, samples)?;
    let l_max_raw = g.cross_entropy(gen_logits, labels.clone())?;
    let l_max = g.floor_at(l_max_raw, cfg.loss_max_floor)?;

    let theta_prime = inner_update(
        &mut g,
        model,
        &theta0,
        samples,
        &labels,
        retained,
        cfg.inner_rate,
        cfg.first_order,
    )?;
    let l_min = loss_min(&mut g, model, &theta_prime, retained)?;

    let recip = g.recip(l_max)?;
    let forget_term = g.scale(recip, lambda)?;
    let retain_term = g.scale(l_min, 1.0 - lambda)?;
    let objective = g.add(forget_term, retain_term)?;

    Ok(GfnStep {
        graph: g,
        generator_params: phi,
        loss_max: l_max,
        loss_min: l_min,
        objective,
    })
}

/// Train the generator against a frozen classifier. Returns the generator
/// and the per-iteration trace.
pub fn train_gfn(
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &GfnConfig,
) -> Result<(Generator, GfnTrace)> {
    cfg.validate()?;
    if retained.is_empty() {
        return Err(Error::EmptyInput("train_gfn"));
    }
    if forget_labels.is_empty() {
        return Err(Error::EmptyInput("train_gfn"));
    }
    crate::guard::record_consumption(retained);

    let mut gen_spec = model.spec.clone();
    gen_spec.range = DataRange::from_inputs(&retained.inputs)?;
    gen_spec.seed = derive_seed(cfg.seed, "gfn-generator-init");
    let mut gen = init_generator(&gen_spec)?;

    let step = OptimStep::new(
        cfg.generator_rate.max(f64::MIN_POSITIVE),
        cfg.weight_decay,
        cfg.clip_norm,
    )?;
    let frozen_generator = cfg.generator_rate == 0.0;

    let mut noise_rng = Rng::from_seed(derive_seed(cfg.seed, "gfn-noise"));
    let mut lambda = cfg.lambda0;
    let mut trace = GfnTrace::default();

    for t in 1..=cfg.epochs {
        let z = gen.sample_noise(cfg.batch_size, &mut noise_rng);
        let result = (|| -> Result<(f64, f64, f64, f64)> {
            let built = build_gfn_step(model, &gen, retained, forget_labels, &z, lambda, cfg)?;
            let l_max = built.graph.scalar(built.loss_max)?;
            let l_min = built.graph.scalar(built.loss_min)?;
            let j = built.graph.scalar(built.objective)?;
            let grads = built.graph.backward(built.objective)?;
            let grad_phi_norm = grads.global_norm();
            if !frozen_generator {
                gen = gen.with_params(sgd_step(&gen.params, &grads, &step)?);
            }
            Ok((l_max, l_min, j, grad_phi_norm))
        })();
        let (l_max, l_min, j, grad_phi_norm) = match result {
            Ok(v) => v,
            Err(Error::NonFinite { op }) => {
                return Err(Error::NumericAbort {
                    phase: "gfn".into(),
                    iteration: t,
                    detail: format!("non-finite value in {op}; {} iterations completed", trace.len()),
                })
            }
            Err(e) => return Err(e),
        };
        let grad_lambda = 1.0 / l_max - l_min;
        trace.iterations.push(GfnIteration {
            t,
            lambda,
            l_max,
            l_min,
            j,
            grad_phi_norm,
            grad_lambda_norm: grad_lambda.abs(),
        });
        lambda = lambda_step(lambda, l_max, l_min, cfg.lambda_rate, cfg.lambda_margin);
    }
    Ok((gen, trace))
}

/// Fixed snapshot of synthetic erasure samples from a trained generator:
/// fresh seed-derived noise, labels split evenly (round-robin) over the
/// forgotten set.
pub fn generate_oes(
    gen: &Generator,
    forget_labels: &[usize],
    count_per_label: usize,
    classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if forget_labels.is_empty() || count_per_label == 0 {
        return Err(Error::EmptyInput("generate_oes"));
    }
    let total = count_per_label * forget_labels.len();
    let mut rng = Rng::from_seed(seed);
    let z = gen.sample_noise(total, &mut rng);
    let samples = gen.forward(&z)?;
    LabeledDataset::new(samples, round_robin_labels(forget_labels, total), classes)
}

/// Convergence diagnostics over a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Running minimum of `grad_phi_norm^2 + grad_lambda_norm^2`;
    /// non-increasing by construction.
    pub running_min_grad_sq: Vec<f64>,
    /// Every objective value is strictly positive.
    pub objective_positive: bool,
    /// Every `J_t >= lambda_t / max_s L_max(s)`.
    pub lower_bound_ok: bool,
    /// Smallest slack `J_t - lambda_t / max_s L_max(s)` observed.
    pub lower_bound_margin: f64,
    /// Every forgetting loss sits at or above the configured floor.
    pub positivity_ok: bool,
    pub equilibrium_gap_first: f64,
    pub equilibrium_gap_last: f64,
}

pub fn convergence_report(trace: &GfnTrace, loss_max_floor: f64) -> Result<ConvergenceReport> {
    if trace.is_empty() {
        return Err(Error::EmptyInput("convergence_report"));
    }
    let mut running_min = Vec::with_capacity(trace.len());
    let mut best = f64::INFINITY;
    for it in &trace.iterations {
        let g2 = it.grad_phi_norm * it.grad_phi_norm + it.grad_lambda_norm * it.grad_lambda_norm;
        best = best.min(g2);
        running_min.push(best);
    }
    let sup_l_max = trace
        .iterations
        .iter()
        .map(|it| it.l_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut margin = f64::INFINITY;
    for it in &trace.iterations {
        margin = margin.min(it.j - it.lambda / sup_l_max);
    }
    Ok(ConvergenceReport {
        running_min_grad_sq: running_min,
        objective_positive: trace.iterations.iter().all(|it| it.j > 0.0),
        lower_bound_ok: margin >= 0.0,
        lower_bound_margin: margin,
        positivity_ok: trace.iterations.iter().all(|it| it.l_max >= loss_max_floor),
        equilibrium_gap_first: trace.iterations[0].grad_lambda_norm,
        equilibrium_gap_last: trace.iterations[trace.len() - 1].grad_lambda_norm,
    })
}
