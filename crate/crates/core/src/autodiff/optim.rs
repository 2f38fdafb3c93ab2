//! Parameter collections, gradient maps, and the SGD update rule.

use super::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Ordered collection of parameter tensors. Ordering is the identity used by
/// [`GradientMap`] and by model serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    tensors: Vec<Tensor>,
}

impl ParameterVector {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        ParameterVector { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    /// Flatten to one scalar vector in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParameterVector::flat`], reusing this vector's shapes.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ParameterVector> {
        if flat.len() != self.count() {
            return Err(Error::Shape {
                op: "with_flat",
                detail: format!("{} values for {} parameters", flat.len(), self.count()),
            });
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            let next = offset + t.len();
            tensors.push(Tensor::new(t.shape().to_vec(), flat[offset..next].to_vec())?);
            offset = next;
        }
        Ok(ParameterVector { tensors })
    }

    /// Euclidean distance to another vector over a tensor index range.
    pub fn distance_over(&self, other: &ParameterVector, range: std::ops::Range<usize>) -> Result<f64> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape {
                op: "param_distance",
                detail: format!("{} vs {} tensors", self.tensors.len(), other.tensors.len()),
            });
        }
        let mut sq = 0.0;
        for idx in range {
            let (a, b) = (&self.tensors[idx], &other.tensors[idx]);
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "param_distance",
                    detail: format!("tensor {idx}: {:?} vs {:?}", a.shape(), b.shape()),
                });
            }
            sq += a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        Ok(sq.sqrt())
    }

    /// FNV content hash over shapes and value bit patterns.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in &self.tensors {
            for &d in t.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        crate::util::fnv1a(&bytes)
    }
}

/// Gradient for every parameter slot of the differentiated expression, in
/// slot order. Unreachable parameters hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    grads: Vec<Tensor>,
}

impl GradientMap {
    pub fn new(grads: Vec<Tensor>) -> Self {
        GradientMap { grads }
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm across all entries.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, c: f64) -> GradientMap {
        GradientMap {
            grads: self.grads.iter().map(|g| g.scale(c)).collect(),
        }
    }
}

/// One SGD hyperparameter set: step size, coupled L2 weight decay, and an
/// optional global-norm clip applied to the raw gradient before the decay
/// term is added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimStep {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl OptimStep {
    pub fn new(learning_rate: f64, weight_decay: f64, clip_norm: Option<f64>) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {learning_rate}")));
        }
        if weight_decay < 0.0 {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {weight_decay}")));
        }
        if let Some(c) = clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(OptimStep {
            learning_rate,
            weight_decay,
            clip_norm,
        })
    }
}

/// `new = param - lr * (clip(grad) + wd * param)`.
///
/// Clipping rescales the whole gradient map so its global L2 norm is at most
/// `clip_norm`; the decay term is added after clipping.
pub fn sgd_step(params: &ParameterVector, grads: &GradientMap, step: &OptimStep) -> Result<ParameterVector> {
    if params.len() != grads.len() {
        return Err(Error::Shape {
            op: "sgd_step",
            detail: format!("{} params vs {} grads", params.len(), grads.len()),
        });
    }
    let scale = match step.clip_norm {
        Some(c) => {
            let norm = grads.global_norm();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let mut tensors = Vec::with_capacity(params.len());
    for (p, g) in params.iter().zip(grads.grads()) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "sgd_step",
                detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
        let data: Vec<f64> = p
            .data()
            .iter()
            .zip(g.data())
            .map(|(&pv, &gv)| pv - step.learning_rate * (gv * scale + step.weight_decay * pv))
            .collect();
        let t = Tensor::new(p.shape().to_vec(), data)?;
        if !t.all_finite() {
            return Err(Error::NonFinite { op: "sgd_step".into() });
        }
        tensors.push(t);
    }
    Ok(ParameterVector::new(tensors))
}
