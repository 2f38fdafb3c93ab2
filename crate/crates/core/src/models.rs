//! Classifier and generator architectures.
//!
//! The classifier is a dense feedforward net with an explicit split between
//! the feature extractor (affine+ReLU chain) and the classification head
//! (one affine layer), so weight-distance reports can separate the two. The
//! generator maps standard-normal noise through a dense net and a tanh
//! output scaled to the data range.

use crate::autodiff::{Graph, NodeId, ParameterVector, Tensor};
use crate::util::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Axis-aligned bounding box of the data, per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DataRange {
    pub fn unit(dim: usize) -> Self {
        DataRange {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Per-dimension min/max of a sample matrix, widened by 5% of the span
    /// on each side (10% total expansion).
    pub fn from_inputs(inputs: &Tensor) -> Result<Self> {
        let (n, d) = inputs.dims2()?;
        if n == 0 {
            return Err(Error::EmptyInput("DataRange::from_inputs"));
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..n {
            for j in 0..d {
                let v = inputs.data()[i * d + j];
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        for j in 0..d {
            let margin = 0.05 * (hi[j] - lo[j]);
            lo[j] -= margin;
            hi[j] += margin;
        }
        Ok(DataRange { lo, hi })
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| 0.5 * (l + h)).collect()
    }

    pub fn half_span(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| 0.5 * (h - l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    GlorotUniform,
}

/// Architecture plus everything needed to rebuild the parameters: hidden
/// widths (the last one is the feature dimension), class count, generator
/// noise width and trunk, output scaling range, init scheme, and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub z_dim: usize,
    #[serde(default = "default_gen_hidden")]
    pub gen_hidden: Vec<usize>,
    pub range: DataRange,
    pub init: InitScheme,
    pub seed: u64,
}

fn default_gen_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.z_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if self.hidden.is_empty() || self.gen_hidden.is_empty() || self.gen_hidden.iter().any(|&h| h == 0)
        {
            return Err(Error::Config("hidden layer lists must be non-empty and positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.range.lo.len() != self.input_dim || self.range.hi.len() != self.input_dim {
            return Err(Error::Config("data range dimension mismatch".into()));
        }
        Ok(())
    }

    /// Width of the last extractor layer.
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }
}

fn glorot_layers(dims: &[usize], rng: &mut Rng) -> Vec<Tensor> {
    let mut tensors = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.range(-a, a)).collect();
        tensors.push(Tensor::matrix(fan_in, fan_out, weights).expect("sized by construction"));
        tensors.push(Tensor::zeros(vec![fan_out]));
    }
    tensors
}

/// Forward through an affine stack held as [W0, b0, W1, b1, ...] graph
/// nodes, with ReLU after every layer except optionally the last.
fn affine_stack(
    g: &mut Graph,
    params: &[NodeId],
    mut x: NodeId,
    relu_last: bool,
) -> Result<NodeId> {
    let layers = params.len() / 2;
    for l in 0..layers {
        let pre = g.matmul(x, params[2 * l])?;
        let pre = g.add_row(pre, params[2 * l + 1])?;
        x = if l + 1 < layers || relu_last { g.relu(pre)? } else { pre };
    }
    Ok(x)
}

fn affine_stack_value(params: &[Tensor], x: &Tensor, relu_last: bool) -> Result<Tensor> {
    let layers = params.len() / 2;
    let mut cur = x.clone();
    for l in 0..layers {
        let (m, _) = cur.dims2()?;
        let pre = cur.matmul(&params[2 * l])?;
        let bias = &params[2 * l + 1];
        let n = bias.len();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(pre.data()[i * n + j] + bias.data()[j]);
            }
        }
        cur = Tensor::matrix(m, n, data)?;
        if l + 1 < layers || relu_last {
            cur = cur.map(|v| v.max(0.0));
        }
    }
    Ok(cur)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub spec: ModelSpec,
    pub params: ParameterVector,
}

impl ClassifierModel {
    /// Tensor index where the head's weight/bias pair starts.
    pub fn head_start(&self) -> usize {
        self.params.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Features and logits for a `[batch, input_dim]` matrix.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, d) = batch.dims2()?;
        if d != self.spec.input_dim {
            return Err(Error::Shape {
                op: "classifier_forward",
                detail: format!("batch width {d}, model expects {}", self.spec.input_dim),
            });
        }
        let split = self.head_start();
        let features = affine_stack_value(&self.params.tensors()[..split], batch, true)?;
        let logits = affine_stack_value(&self.params.tensors()[split..], &features, false)?;
        Ok((features, logits))
    }

    /// Graph forward over arbitrary parameter nodes (leaves or derived
    /// nodes, e.g. a one-step-updated copy of the weights).
    pub fn forward_graph(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<(NodeId, NodeId)> {
        let split = self.head_start();
        let features = affine_stack(g, &params[..split], x, true)?;
        let logits = affine_stack(g, &params[split..], features, false)?;
        Ok((features, logits))
    }
}

/// Spec-shaped alias for [`ClassifierModel::forward`].
pub fn classifier_forward(model: &ClassifierModel, batch: &Tensor) -> Result<(Tensor, Tensor)> {
    model.forward(batch)
}

/// Uniform(-a, a) Glorot weights with zero biases, deterministic in the
/// spec's seed.
pub fn init_model(spec: &ModelSpec) -> Result<ClassifierModel> {
    spec.validate()?;
    let mut rng = Rng::from_seed(spec.seed);
    let mut dims = vec![spec.input_dim];
    dims.extend_from_slice(&spec.hidden);
    dims.push(spec.classes);
    Ok(ClassifierModel {
        spec: spec.clone(),
        params: ParameterVector::new(glorot_layers(&dims, &mut rng)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: ModelSpec,
    pub params: ParameterVector,
    center: Vec<f64>,
    half_span: Vec<f64>,
}

impl Generator {
    /// Synthetic inputs for a `[batch, z_dim]` noise matrix. Outputs stay
    /// inside the spec's data range: `center + half_span * tanh(trunk(z))`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let (m, zd) = z.dims2()?;
        if zd != self.spec.z_dim {
            return Err(Error::Shape {
                op: "generator_forward",
                detail: format!("noise width {zd}, generator expects {}", self.spec.z_dim),
            });
        }
        let pre = affine_stack_value(self.params.tensors(), z, false)?;
        let d = self.spec.input_dim;
        let mut data = Vec::with_capacity(m * d);
        for i in 0..m {
            for j in 0..d {
                data.push(self.center[j] + self.half_span[j] * pre.data()[i * d + j].tanh());
            }
        }
        Tensor::matrix(m, d, data)
    }

    pub fn forward_graph(&self, g: &mut Graph, params: &[NodeId], z: NodeId) -> Result<NodeId> {
        let pre = affine_stack(g, params, z, false)?;
        let squashed = g.tanh(pre)?;
        let span = g.constant(Tensor::vector(self.half_span.clone()));
        let scaled = g.mul_row(squashed, span)?;
        let center = g.constant(Tensor::vector(self.center.clone()));
        let center = g.broadcast_rows(center, self.value_rows(g, scaled)?)?;
        g.add(scaled, center)
    }

    fn value_rows(&self, g: &Graph, id: NodeId) -> Result<usize> {
        g.value(id).rows()
    }

    /// Sample a noise batch from the given stream.
    pub fn sample_noise(&self, batch: usize, rng: &mut Rng) -> Tensor {
        let data = (0..batch * self.spec.z_dim).map(|_| rng.normal()).collect();
        Tensor::matrix(batch, self.spec.z_dim, data).expect("sized by construction")
    }
}

/// Spec-shaped alias for [`Generator::forward`].
pub fn generator_forward(gen: &Generator, z: &Tensor) -> Result<Tensor> {
    gen.forward(z)
}

/// Generator trunk `z_dim -> gen_hidden -> input_dim` (64-64 by default),
/// Glorot weights from a stream decorrelated from the classifier's.
pub fn init_generator(spec: &ModelSpec) -> Result<Generator> {
    spec.validate()?;
    let mut rng = Rng::from_seed(crate::util::derive_seed(spec.seed, "generator"));
    let mut dims = vec![spec.z_dim];
    dims.extend_from_slice(&spec.gen_hidden);
    dims.push(spec.input_dim);
    Ok(Generator {
        center: spec.range.center(),
        half_span: spec.range.half_span(),
        spec: spec.clone(),
        params: ParameterVector::new(glorot_layers(&dims, &mut rng)),
    })
}

/// Which slice of the parameters a distance is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPart {
    FeatureExtractor,
    Head,
    All,
}

/// L2 distance between two parameter vectors restricted to a part. The
/// split point comes from the classifier layout (head = last weight+bias).
pub fn param_distance(a: &ParameterVector, b: &ParameterVector, part: ModelPart) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape {
            op: "param_distance",
            detail: format!("{} vs {} tensors", a.len(), b.len()),
        });
    }
    let head = a.len() - 2;
    match part {
        ModelPart::FeatureExtractor => a.distance_over(b, 0..head),
        ModelPart::Head => a.distance_over(b, head..a.len()),
        ModelPart::All => a.distance_over(b, 0..a.len()),
    }
}

// ── model files: one-line JSON header, then raw little-endian f64 ──────────

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    kind: String,
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    seed: u64,
}

fn write_model(path: &Path, kind: &str, spec: &ModelSpec, params: &ParameterVector) -> Result<()> {
    let header = ModelHeader {
        format_version: 1,
        kind: kind.to_string(),
        spec: spec.clone(),
        shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        seed: spec.seed,
    };
    let mut file = std::fs::File::create(path)?;
    let json = serde_json::to_string(&header).map_err(|e| Error::ModelFile(e.to_string()))?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    for t in params.iter() {
        for &v in t.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_model(path: &Path, expect_kind: &str) -> Result<(ModelSpec, ParameterVector)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::ModelFile("missing header line".into()))?;
    let header: ModelHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::ModelFile(e.to_string()))?;
    if header.format_version != 1 {
        return Err(Error::ModelFile(format!("unsupported format version {}", header.format_version)));
    }
    if header.kind != expect_kind {
        return Err(Error::ModelFile(format!("expected {expect_kind} file, found {}", header.kind)));
    }
    let mut offset = newline + 1;
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for shape in &header.shapes {
        let n: usize = shape.iter().product();
        let end = offset + n * 8;
        if end > bytes.len() {
            return Err(Error::ModelFile("truncated payload".into()));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data)?);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::ModelFile("trailing bytes after payload".into()));
    }
    Ok((header.spec, ParameterVector::new(tensors)))
}

impl ClassifierModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_model(path, "classifier", &self.spec, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (spec, params) = read_model(path, "classifier")?;
        Ok(ClassifierModel { spec, params })
    }

    pub fn with_params(&self, params: ParameterVector) -> Self {
        ClassifierModel {
            spec: self.spec.clone(),
            params,
        }
    }
}

impl Generator {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_model(path, "generator", &self.spec, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (spec, params) = read_model(path, "generator")?;
        Ok(Generator {
            center: spec.range.center(),
            half_span: spec.range.half_span(),
            spec,
            params,
        })
    }

    pub fn with_params(&self, params: ParameterVector) -> Self {
        Generator {
            spec: self.spec.clone(),
            params,
            center: self.center.clone(),
            half_span: self.half_span.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>, d: usize, k: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            input_dim: d,
            hidden,
            classes: k,
            z_dim: 16,
            gen_hidden: vec![8],
            range: DataRange::unit(d),
            init: InitScheme::GlorotUniform,
            seed,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let s = spec(vec![32], 16, 5, 9);
        let a = init_model(&s).unwrap();
        let b = init_model(&s).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        // 16*32+32 extractor, 32*5+5 head.
        let m = init_model(&spec(vec![32], 16, 5, 1)).unwrap();
        assert_eq!(m.param_count(), 16 * 32 + 32 + 32 * 5 + 5);
    }

    #[test]
    fn glorot_mean_is_within_standard_error_bound() {
        let s = spec(vec![128], 128, 5, 77);
        let m = init_model(&s).unwrap();
        let w = &m.params.tensors()[0];
        let n = w.len() as f64;
        assert!(n >= 1e4);
        let a = (6.0f64 / (128.0 + 128.0)).sqrt();
        let mean = w.data().iter().sum::<f64>() / n;
        let bound = 3.0 * a / (3.0 * n).sqrt();
        assert!(mean.abs() < bound, "mean {mean} vs bound {bound}");
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let s = spec(vec![8], 4, 3, 2);
        let mut m = init_model(&s).unwrap();
        for t in m.params.tensors_mut() {
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let x = Tensor::matrix(2, 4, vec![1.0, -2.0, 3.0, 4.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let (_, logits) = m.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_extractor_relus_the_input() {
        let s = spec(vec![3], 3, 2, 4);
        let mut m = init_model(&s).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        m.params.tensors_mut()[0] = eye;
        m.params.tensors_mut()[1] = Tensor::zeros(vec![3]);
        let x = Tensor::matrix(1, 3, vec![1.5, -2.0, 0.25]).unwrap();
        let (features, _) = m.forward(&x).unwrap();
        assert_eq!(features.data(), &[1.5, 0.0, 0.25]);
    }

    #[test]
    fn forward_matches_explicit_matrix_arithmetic() {
        let s = spec(vec![6, 4], 5, 3, 13);
        let m = init_model(&s).unwrap();
        let mut rng = Rng::from_seed(5);
        let x = Tensor::matrix(7, 5, (0..35).map(|_| rng.normal()).collect()).unwrap();
        let (_, logits) = m.forward(&x).unwrap();

        // Independent recomputation, scalar loops only.
        let p = m.params.tensors();
        let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
        for i in 0..7 {
            let mut h: Vec<f64> = x.row(i).to_vec();
            for l in 0..2 {
                let (w, b) = (&p[2 * l], &p[2 * l + 1]);
                let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
                let mut next = vec![0.0; fan_out];
                for o in 0..fan_out {
                    let mut acc = 0.0;
                    for f in 0..fan_in {
                        acc += h[f] * w.data()[f * fan_out + o];
                    }
                    next[o] = relu(acc + b.data()[o]);
                }
                h = next;
            }
            let (w, b) = (&p[4], &p[5]);
            for o in 0..3 {
                let mut acc = 0.0;
                for f in 0..4 {
                    acc += h[f] * w.data()[f * 3 + o];
                }
                let expected = acc + b.data()[o];
                let got = logits.data()[i * 3 + o];
                assert!((got - expected).abs() < 1e-12, "row {i} class {o}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn generator_with_zero_weights_outputs_range_center() {
        let mut s = spec(vec![8], 4, 3, 6);
        s.range = DataRange {
            lo: vec![0.0, -2.0, 1.0, -1.0],
            hi: vec![4.0, 2.0, 3.0, 1.0],
        };
        let mut gen = init_generator(&s).unwrap();
        for t in gen.params.tensors_mut() {
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let gen = init_generator(&s).unwrap().with_params(gen.params);
        let z = Tensor::matrix(2, 16, vec![0.3; 32]).unwrap();
        let out = gen.forward(&z).unwrap();
        assert_eq!(out.row(0), &[2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn generator_outputs_stay_in_range() {
        let mut s = spec(vec![8], 4, 3, 6);
        s.range = DataRange {
            lo: vec![-1.0; 4],
            hi: vec![3.0; 4],
        };
        let gen = init_generator(&s).unwrap();
        let mut rng = Rng::from_seed(8);
        let z = gen.sample_noise(64, &mut rng);
        let out = gen.forward(&z).unwrap();
        for &v in out.data() {
            assert!((-1.0..=3.0).contains(&v));
        }
    }

    #[test]
    fn param_distance_parts_partition_the_square() {
        let s = spec(vec![8, 6], 5, 4, 20);
        let a = init_model(&s).unwrap();
        let b = init_model(&spec(vec![8, 6], 5, 4, 21)).unwrap();
        let fe = param_distance(&a.params, &b.params, ModelPart::FeatureExtractor).unwrap();
        let head = param_distance(&a.params, &b.params, ModelPart::Head).unwrap();
        let all = param_distance(&a.params, &b.params, ModelPart::All).unwrap();
        assert!((all * all - (fe * fe + head * head)).abs() < 1e-9 * all * all);
        assert_eq!(param_distance(&a.params, &a.params, ModelPart::All).unwrap(), 0.0);
    }

    #[test]
    fn single_weight_difference_lands_in_one_part() {
        let s = spec(vec![4], 3, 2, 30);
        let a = init_model(&s).unwrap();
        let mut b = a.clone();
        b.params.tensors_mut()[0].data_mut()[0] += 3.0;
        assert!((param_distance(&a.params, &b.params, ModelPart::FeatureExtractor).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(param_distance(&a.params, &b.params, ModelPart::Head).unwrap(), 0.0);
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(vec![8], 4, 3, 17);
        let m = init_model(&s).unwrap();
        let path = dir.path().join("m.model");
        m.save(&path).unwrap();
        let loaded = ClassifierModel::load(&path).unwrap();
        assert_eq!(m, loaded);

        let gen = init_generator(&s).unwrap();
        let gpath = dir.path().join("g.model");
        gen.save(&gpath).unwrap();
        assert_eq!(Generator::load(&gpath).unwrap(), gen);
        assert!(ClassifierModel::load(&gpath).is_err());
    }
}
