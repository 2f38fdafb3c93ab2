//! Comparison unlearning methods, all runnable without any forgotten-class
//! data: full retraining on the few-shot retained set, gradient ascent and
//! random-label fine-tuning on noise proxies, and a noise-impair-repair
//! scheme that first optimizes an input-space noise batch to maximize the
//! forgotten-class loss.

use crate::autodiff::{sgd_step, Graph, OptimStep, Tensor};
use crate::data::{assemble_erasure_set, LabeledDataset};
use crate::models::{init_model, ClassifierModel, DataRange, ModelSpec};
use crate::training::{train_classifier, Direction, TrainProtocol};
use crate::util::{derive_seed, Rng};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Retrain,
    NegGrad,
    RandomLabel,
    NoiseImpairRepair,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] = [
        BaselineMethod::Retrain,
        BaselineMethod::NegGrad,
        BaselineMethod::RandomLabel,
        BaselineMethod::NoiseImpairRepair,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            BaselineMethod::Retrain => "retrain",
            BaselineMethod::NegGrad => "neggrad",
            BaselineMethod::RandomLabel => "random_label",
            BaselineMethod::NoiseImpairRepair => "noise_impair_repair",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown baseline method '{tag}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Proxy-noise samples per forgotten class; defaults to the per-class
    /// size of the retained few-shot set.
    pub proxy_per_class: Option<usize>,
    /// Input-space ascent steps for noise-impair-repair.
    pub noise_ascent_steps: usize,
    pub noise_ascent_rate: f64,
    /// Repair-pass rate for noise-impair-repair.
    pub repair_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl BaselineConfig {
    /// Retrain follows the original-model protocol. Noise-impair-repair
    /// mirrors the erasure phase. The raw-noise methods run gentler:
    /// unconstrained ascent at the erasure rate flattens the whole model
    /// instead of degrading the forgotten class, so NegGrad gets 1e-4 and
    /// random-label fine-tuning the original 4e-4.
    pub fn for_method(method: BaselineMethod, seed: u64) -> Self {
        let (learning_rate, epochs) = match method {
            BaselineMethod::Retrain => (4e-4, 20),
            BaselineMethod::NegGrad => (1e-4, 1),
            BaselineMethod::RandomLabel => (4e-4, 1),
            BaselineMethod::NoiseImpairRepair => (4e-3, 1),
        };
        BaselineConfig {
            method,
            learning_rate,
            epochs,
            batch_size: 32,
            proxy_per_class: None,
            noise_ascent_steps: 50,
            noise_ascent_rate: 0.1,
            repair_rate: 4e-4,
            weight_decay: 1e-4,
            clip_norm: None,
            seed,
        }
    }
}

fn proxy_count(cfg: &BaselineConfig, retained: &LabeledDataset) -> usize {
    cfg.proxy_per_class
        .unwrap_or_else(|| crate::unlearn::oes_count_per_label(retained))
        .max(1)
}

/// Uniform noise over the retained data range, labelled round-robin over the
/// forgotten set.
fn proxy_noise(
    retained: &LabeledDataset,
    forget_labels: &[usize],
    per_class: usize,
    classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let range = DataRange::from_inputs(&retained.inputs)?;
    let d = retained.dim();
    let n = per_class * forget_labels.len();
    let mut rng = Rng::from_seed(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for j in 0..d {
            data.push(rng.range(range.lo[j], range.hi[j]));
        }
    }
    let labels = crate::gfn::round_robin_labels(forget_labels, n);
    LabeledDataset::new(Tensor::matrix(n, d, data)?, labels, classes)
}

fn protocol(cfg: &BaselineConfig, tag: &str) -> TrainProtocol {
    TrainProtocol {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        weight_decay: cfg.weight_decay,
        clip_norm: cfg.clip_norm,
        seed: derive_seed(cfg.seed, tag),
    }
}

/// Fresh model trained from scratch on the retained few-shot data only.
pub fn retrain(
    spec: &ModelSpec,
    retained: &LabeledDataset,
    cfg: &BaselineConfig,
) -> Result<ClassifierModel> {
    if retained.is_empty() {
        return Err(Error::EmptyInput("retrain"));
    }
    crate::guard::record_consumption(retained);
    let mut spec = spec.clone();
    spec.seed = derive_seed(cfg.seed, "retrain-init");
    let fresh = init_model(&spec)?;
    let (model, _) = train_classifier(&fresh, retained, &protocol(cfg, "retrain"), Direction::Descend)?;
    Ok(model)
}

/// Gradient ascent on noise proxies carrying forgotten labels.
pub fn neggrad(
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &BaselineConfig,
) -> Result<ClassifierModel> {
    let per_class = proxy_count(cfg, retained);
    crate::guard::record_consumption(retained);
    let proxies = proxy_noise(
        retained,
        forget_labels,
        per_class,
        model.spec.classes,
        derive_seed(cfg.seed, "neggrad-noise"),
    )?;
    crate::guard::record_consumption(&proxies);
    let (model, _) = train_classifier(model, &proxies, &protocol(cfg, "neggrad"), Direction::Ascend)?;
    Ok(model)
}

/// Descent on noise proxies with labels drawn uniformly over all classes.
pub fn random_label(
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &BaselineConfig,
) -> Result<ClassifierModel> {
    let per_class = proxy_count(cfg, retained);
    crate::guard::record_consumption(retained);
    let mut proxies = proxy_noise(
        retained,
        forget_labels,
        per_class,
        model.spec.classes,
        derive_seed(cfg.seed, "random_label-noise"),
    )?;
    let mut rng = Rng::from_seed(derive_seed(cfg.seed, "random_label-labels"));
    for y in proxies.labels.iter_mut() {
        *y = (rng.next_u64() % model.spec.classes as u64) as usize;
    }
    crate::guard::record_consumption(&proxies);
    let (model, _) = train_classifier(model, &proxies, &protocol(cfg, "random_label"), Direction::Descend)?;
    Ok(model)
}

/// Input-space ascent: push a noise batch towards maximal loss for its
/// (forgotten) labels under the frozen model, clamped to the valid data
/// range after every step (the image-space analog keeps pixels in range).
fn optimize_noise(
    model: &ClassifierModel,
    noise: &LabeledDataset,
    range: &DataRange,
    steps: usize,
    rate: f64,
) -> Result<LabeledDataset> {
    let mut inputs = noise.inputs.clone();
    if steps == 0 || rate == 0.0 {
        return Ok(noise.clone());
    }
    let step = OptimStep::new(rate, 0.0, None)?;
    let d = noise.dim();
    for _ in 0..steps {
        let mut g = Graph::new();
        let x = g.param(inputs.clone());
        let theta: Vec<_> = model.params.iter().map(|t| g.constant(t.clone())).collect();
        let (_, logits) = model.forward_graph(&mut g, &theta, x)?;
        let loss = g.cross_entropy(logits, noise.labels.clone())?;
        let grads = g.backward(loss)?;
        // Ascent on the input batch.
        let holder = crate::autodiff::ParameterVector::new(vec![inputs]);
        inputs = sgd_step(&holder, &grads.scale(-1.0), &step)?
            .tensors()
            .first()
            .expect("single tensor")
            .clone();
        for (i, v) in inputs.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = v.clamp(range.lo[j], range.hi[j]);
        }
    }
    LabeledDataset::new(inputs, noise.labels.clone(), noise.classes)
}

/// Simplified noise-impair-repair: optimize an error-maximizing noise batch,
/// fine-tune on noise plus retained data (impair), then on retained data
/// alone (repair).
pub fn noise_impair_repair(
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &BaselineConfig,
) -> Result<ClassifierModel> {
    let per_class = proxy_count(cfg, retained);
    crate::guard::record_consumption(retained);
    let range = DataRange::from_inputs(&retained.inputs)?;
    let raw = proxy_noise(
        retained,
        forget_labels,
        per_class,
        model.spec.classes,
        derive_seed(cfg.seed, "nir-noise"),
    )?;
    let noise = optimize_noise(model, &raw, &range, cfg.noise_ascent_steps, cfg.noise_ascent_rate)?;
    let impair_set = assemble_erasure_set(
        &noise,
        retained,
        forget_labels,
        derive_seed(cfg.seed, "nir-shuffle"),
    )?;
    crate::guard::record_consumption(&impair_set);
    let (impaired, _) =
        train_classifier(model, &impair_set, &protocol(cfg, "nir-impair"), Direction::Descend)?;
    let repair_protocol = TrainProtocol {
        learning_rate: cfg.repair_rate,
        ..protocol(cfg, "nir-repair")
    };
    let (repaired, _) = train_classifier(&impaired, retained, &repair_protocol, Direction::Descend)?;
    Ok(repaired)
}

/// Dispatch by method tag. Every baseline takes the same inputs and returns
/// a model evaluable by the same metrics.
pub fn run_baseline(
    method: BaselineMethod,
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &BaselineConfig,
) -> Result<ClassifierModel> {
    match method {
        BaselineMethod::Retrain => retrain(&model.spec, retained, cfg),
        BaselineMethod::NegGrad => neggrad(model, retained, forget_labels, cfg),
        BaselineMethod::RandomLabel => random_label(model, retained, forget_labels, cfg),
        BaselineMethod::NoiseImpairRepair => noise_impair_repair(model, retained, forget_labels, cfg),
    }
}
