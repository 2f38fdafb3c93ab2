//! Two-phase fine-tuning: an aggressive erasure pass over the synthetic
//! erasure samples mixed with the retained few-shot data, then a gentle
//! recovery pass over the retained data alone.

use crate::data::{assemble_erasure_set, LabeledDataset};
use crate::gfn::{generate_oes, train_gfn, GfnConfig, GfnTrace};
use crate::models::{ClassifierModel, Generator};
use crate::training::{train_classifier, Direction, TrainProtocol};
use crate::util::derive_seed;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    /// Erasure-phase step size (the large one).
    pub erasure_rate: f64,
    /// Recovery-phase step size (the small one).
    pub recovery_rate: f64,
    pub erasure_epochs: usize,
    pub recovery_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            erasure_rate: 4e-3,
            recovery_rate: 4e-4,
            erasure_epochs: 1,
            recovery_epochs: 1,
            batch_size: 32,
            weight_decay: 1e-4,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    /// Rates must be non-negative (zero disables a phase's updates); the
    /// default protocol keeps the erasure rate above the recovery rate, but
    /// ablation schedules may set them equal.
    pub fn validate(&self) -> Result<()> {
        if self.erasure_rate < 0.0 || self.recovery_rate < 0.0 {
            return Err(Error::Config("phase rates must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// What the erasure pass trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErasureData {
    OesAndRetain,
    OesOnly,
    RetainOnly,
}

pub struct ErasureOutcome {
    pub model: ClassifierModel,
    /// The fixed synthetic snapshot, when the data mode uses one.
    pub oes: Option<LabeledDataset>,
    pub losses: Vec<f64>,
}

/// Per-forgotten-label sample count for the synthetic snapshot: the
/// per-class size of the retained few-shot set.
pub fn oes_count_per_label(retained: &LabeledDataset) -> usize {
    let retained_classes = {
        let counts = retained.per_class_counts();
        counts.iter().filter(|&&c| c > 0).count()
    };
    (retained.len() / retained_classes.max(1)).max(1)
}

/// Erasure with a configurable data composition (the ablation knob).
pub fn erasure_phase_with(
    model: &ClassifierModel,
    gen: Option<&Generator>,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &UnlearnConfig,
    mode: ErasureData,
) -> Result<ErasureOutcome> {
    cfg.validate()?;
    if retained.is_empty() {
        return Err(Error::EmptyInput("erasure_phase"));
    }
    let oes = match mode {
        ErasureData::RetainOnly => None,
        _ => {
            let gen = gen.ok_or(Error::EmptyInput("erasure_phase generator"))?;
            Some(generate_oes(
                gen,
                forget_labels,
                oes_count_per_label(retained),
                model.spec.classes,
                derive_seed(cfg.seed, "oes"),
            )?)
        }
    };
    let train_set = match (&oes, mode) {
        (Some(oes), ErasureData::OesAndRetain) => {
            assemble_erasure_set(oes, retained, forget_labels, derive_seed(cfg.seed, "erasure-shuffle"))?
        }
        (Some(oes), ErasureData::OesOnly) => oes.clone(),
        _ => retained.clone(),
    };
    crate::guard::record_consumption(&train_set);

    let protocol = TrainProtocol {
        learning_rate: cfg.erasure_rate,
        epochs: cfg.erasure_epochs,
        batch_size: cfg.batch_size,
        weight_decay: cfg.weight_decay,
        clip_norm: cfg.clip_norm,
        seed: derive_seed(cfg.seed, "erasure"),
    };
    let (model, losses) = train_classifier(model, &train_set, &protocol, Direction::Descend)?;
    Ok(ErasureOutcome { model, oes, losses })
}

/// Aggressive pass over the synthetic snapshot mixed with the retained
/// few-shot data.
pub fn erasure_phase(
    model: &ClassifierModel,
    gen: &Generator,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &UnlearnConfig,
) -> Result<ErasureOutcome> {
    erasure_phase_with(model, Some(gen), retained, forget_labels, cfg, ErasureData::OesAndRetain)
}

/// Gentle pass over the retained few-shot data only.
pub fn recovery_phase(
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    cfg: &UnlearnConfig,
) -> Result<(ClassifierModel, Vec<f64>)> {
    cfg.validate()?;
    if retained.is_empty() {
        return Err(Error::EmptyInput("recovery_phase"));
    }
    if let Some(&bad) = retained.labels.iter().find(|y| forget_labels.contains(y)) {
        return Err(Error::ZeroGlance(format!(
            "forgotten label {bad} found in the recovery data"
        )));
    }
    crate::guard::record_consumption(retained);
    let protocol = TrainProtocol {
        learning_rate: cfg.recovery_rate,
        epochs: cfg.recovery_epochs,
        batch_size: cfg.batch_size,
        weight_decay: cfg.weight_decay,
        clip_norm: cfg.clip_norm,
        seed: derive_seed(cfg.seed, "recovery"),
    };
    train_classifier(model, retained, &protocol, Direction::Descend)
}

/// Persisted account of one unlearning run: config, content hashes of the
/// model states and the synthetic snapshot, and per-phase loss curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRecord {
    pub gfn_config: GfnConfig,
    pub config: UnlearnConfig,
    pub theta0_hash: u64,
    pub theta1_hash: u64,
    pub theta_star_hash: u64,
    pub oes_hash: u64,
    pub erasure_losses: Vec<f64>,
    pub recovery_losses: Vec<f64>,
}

impl UnlearnRecord {
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// Content hash of a dataset (order-sensitive).
pub fn dataset_hash(data: &LabeledDataset) -> u64 {
    let mut bytes = Vec::new();
    for h in data.row_hashes() {
        bytes.extend_from_slice(&h.to_le_bytes());
    }
    crate::util::fnv1a(&bytes)
}

pub struct GfoesOutcome {
    pub model: ClassifierModel,
    pub theta1: ClassifierModel,
    pub generator: Generator,
    pub oes: LabeledDataset,
    pub trace: GfnTrace,
    pub record: UnlearnRecord,
}

/// The full pipeline: generator training, erasure, recovery.
pub fn gfoes_unlearn(
    model: &ClassifierModel,
    retained: &LabeledDataset,
    forget_labels: &[usize],
    gfn_cfg: &GfnConfig,
    cfg: &UnlearnConfig,
) -> Result<GfoesOutcome> {
    let (generator, trace) = train_gfn(model, retained, forget_labels, gfn_cfg)?;
    let erasure = erasure_phase(model, &generator, retained, forget_labels, cfg)?;
    let theta1 = erasure.model;
    let oes = erasure.oes.expect("erasure with OES always snapshots");
    let (theta_star, recovery_losses) = recovery_phase(&theta1, retained, forget_labels, cfg)?;
    let record = UnlearnRecord {
        gfn_config: *gfn_cfg,
        config: *cfg,
        theta0_hash: model.params.content_hash(),
        theta1_hash: theta1.params.content_hash(),
        theta_star_hash: theta_star.params.content_hash(),
        oes_hash: dataset_hash(&oes),
        erasure_losses: erasure.losses,
        recovery_losses,
    };
    Ok(GfoesOutcome {
        model: theta_star,
        theta1,
        generator,
        oes,
        trace,
        record,
    })
}
