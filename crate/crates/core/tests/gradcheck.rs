//! Gradient oracles: every differentiable composite the lab uses is checked
//! against central finite differences, which never touch the graph.

use gfoes::autodiff::{finite_diff_grad, Graph, NodeId, ParameterVector, Tensor};
use gfoes::autodiff::fd::relative_error;
use gfoes::data::{make_blobs, split_forget, SplitSpec};
use gfoes::gfn::{build_gfn_step, GfnConfig};
use gfoes::models::{init_generator, init_model, DataRange, InitScheme, ModelSpec};
use gfoes::util::Rng;

const EPS: f64 = 1e-5;

fn tiny_classifier_spec(seed: u64) -> ModelSpec {
    ModelSpec {
        input_dim: 3,
        hidden: vec![4],
        classes: 3,
        z_dim: 2,
        gen_hidden: vec![4],
        range: DataRange::unit(3),
        init: InitScheme::GlorotUniform,
        seed,
    }
}

fn random_batch(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// Smallest |preactivation| across the extractor's relu layers. Central
/// differences are only trusted away from the kinks (a fully dead first
/// layer row parks the next layer's preactivations exactly at zero), so the
/// oracle tests resample batches that land within `clearance` of one.
fn relu_clearance(model: &gfoes::models::ClassifierModel, x: &Tensor) -> f64 {
    let params = model.params.tensors();
    let layers = model.head_start() / 2;
    let mut cur = x.clone();
    let mut min_abs = f64::INFINITY;
    for l in 0..layers {
        let pre = cur.matmul(&params[2 * l]).unwrap();
        let bias = &params[2 * l + 1];
        let (rows, cols) = pre.dims2().unwrap();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = pre.data()[i * cols + j] + bias.data()[j];
                min_abs = min_abs.min(v.abs());
                data.push(v.max(0.0));
            }
        }
        cur = Tensor::matrix(rows, cols, data).unwrap();
    }
    min_abs
}

/// Backward gradients of the classifier loss on a random batch, vs finite
/// differences over all weights.
#[test]
fn classifier_loss_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = Rng::from_seed(1000 + seed);
        let model = init_model(&ModelSpec {
            input_dim: 4,
            hidden: vec![6, 5],
            classes: 3,
            z_dim: 2,
            gen_hidden: vec![8],
            range: DataRange::unit(4),
            init: InitScheme::GlorotUniform,
            seed,
        })
        .unwrap();
        let mut x = random_batch(5, 4, &mut rng);
        while relu_clearance(&model, &x) < 1e-3 {
            x = random_batch(5, 4, &mut rng);
        }
        let labels: Vec<usize> = (0..5).map(|_| (rng.next_u64() % 3) as usize).collect();

        let mut g = Graph::new();
        let pids = g.params(model.params.tensors());
        let xn = g.constant(x.clone());
        let (_, logits) = model.forward_graph(&mut g, &pids, xn).unwrap();
        let loss = g.cross_entropy(logits, labels.clone()).unwrap();
        let analytic = g.backward(loss).unwrap();

        let objective = |p: &ParameterVector| {
            let candidate = model.with_params(p.clone());
            let (_, logits) = candidate.forward(&x)?;
            gfoes::autodiff::cross_entropy_loss(&logits, &labels)
        };
        let numeric = finite_diff_grad(objective, &model.params, EPS).unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

/// Generator output gradients w.r.t. its weights (through tanh scaling).
#[test]
fn generator_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = Rng::from_seed(2000 + seed);
        let mut spec = tiny_classifier_spec(seed);
        spec.range = DataRange {
            lo: vec![-2.0, 0.0, 1.0],
            hi: vec![2.0, 4.0, 3.0],
        };
        let gen = init_generator(&spec).unwrap();
        let z = random_batch(4, 2, &mut rng);

        // Scalar probe: mean of the generated batch.
        let mut g = Graph::new();
        let pids = g.params(gen.params.tensors());
        let zn = g.constant(z.clone());
        let out = gen.forward_graph(&mut g, &pids, zn).unwrap();
        let probe = g.mean_all(out).unwrap();
        let analytic = g.backward(probe).unwrap();

        let objective = |p: &ParameterVector| {
            let candidate = gen.with_params(p.clone());
            let out = candidate.forward(&z)?;
            Ok(out.data().iter().sum::<f64>() / out.len() as f64)
        };
        let numeric = finite_diff_grad(objective, &gen.params, EPS).unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

/// The full bilevel objective: dJ/dphi through the unrolled one-step inner
/// update, on models under 200 parameters.
#[test]
fn bilevel_objective_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let spec = tiny_classifier_spec(seed);
        let model = init_model(&spec).unwrap();
        assert!(model.param_count() <= 200, "classifier too large for the bilevel check");

        let data = make_blobs(3, 3, 12, 10.0, 1.0, 300 + seed).unwrap();
        let split = split_forget(
            &data,
            &SplitSpec {
                forget: vec![0],
                retained_fraction: 0.5,
                seed: 400 + seed,
            },
        )
        .unwrap();
        let retained = split.retain_few;

        let mut gen_spec = spec.clone();
        gen_spec.range = DataRange::from_inputs(&retained.inputs).unwrap();
        let gen = init_generator(&gen_spec).unwrap();
        assert!(gen.params.count() <= 200, "generator too large for the bilevel check");

        let cfg = GfnConfig {
            inner_rate: 0.05,
            batch_size: 4,
            seed,
            ..GfnConfig::default()
        };
        let mut rng = Rng::from_seed(500 + seed);
        let z = gen.sample_noise(4, &mut rng);
        let lambda = 0.4;

        let step = build_gfn_step(&model, &gen, &retained, &[0], &z, lambda, &cfg).unwrap();
        let analytic = step.graph.backward(step.objective).unwrap();

        let objective = |p: &ParameterVector| {
            let candidate = gen.with_params(p.clone());
            let step = build_gfn_step(&model, &candidate, &retained, &[0], &z, lambda, &cfg)?;
            step.graph.scalar(step.objective)
        };
        let numeric = finite_diff_grad(objective, &gen.params, EPS).unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

/// Reciprocal-identity route: dJ/dphi of the lambda/L_max term equals
/// -(lambda/L_max^2) dL_max/dphi when the retention term is frozen.
#[test]
fn reciprocal_gradient_identity() {
    for seed in 0..10u64 {
        let spec = tiny_classifier_spec(seed);
        let model = init_model(&spec).unwrap();
        let mut gen_spec = spec.clone();
        gen_spec.range = DataRange {
            lo: vec![-3.0; 3],
            hi: vec![3.0; 3],
        };
        let gen = init_generator(&gen_spec).unwrap();
        let mut rng = Rng::from_seed(600 + seed);
        let z = gen.sample_noise(5, &mut rng);
        let lambda = 0.7;

        // Route A: backward through lambda * recip(L_max).
        let mut ga = Graph::new();
        let pids = ga.params(gen.params.tensors());
        let zn = ga.constant(z.clone());
        let samples = gen.forward_graph(&mut ga, &pids, zn).unwrap();
        let theta: Vec<NodeId> = model.params.iter().map(|t| ga.leaf_grad(t.clone())).collect();
        let (_, logits) = model.forward_graph(&mut ga, &theta, samples).unwrap();
        let labels = gfoes::gfn::round_robin_labels(&[0], 5);
        let l_max = ga.cross_entropy(logits, labels.clone()).unwrap();
        let recip = ga.recip(l_max).unwrap();
        let term = ga.scale(recip, lambda).unwrap();
        let grad_a = ga.backward(term).unwrap();

        // Route B: -(lambda / L_max^2) * dL_max/dphi computed separately.
        let mut gb = Graph::new();
        let pids_b = gb.params(gen.params.tensors());
        let zn_b = gb.constant(z.clone());
        let samples_b = gen.forward_graph(&mut gb, &pids_b, zn_b).unwrap();
        let theta_b: Vec<NodeId> = model.params.iter().map(|t| gb.leaf_grad(t.clone())).collect();
        let (_, logits_b) = model.forward_graph(&mut gb, &theta_b, samples_b).unwrap();
        let l_max_b = gb.cross_entropy(logits_b, labels).unwrap();
        let lv = gb.scalar(l_max_b).unwrap();
        let grad_b = gb.backward(l_max_b).unwrap().scale(-lambda / (lv * lv));

        let err = relative_error(&grad_a, &grad_b);
        assert!(err < 1e-12, "seed {seed}: the two routes disagree, {err}");
    }
}

/// The inner-step mechanism on a closed-form problem: loss 0.5 (theta - c)^2
/// from theta0 = 0 with rate 0.1 lands on 0.1 c.
#[test]
fn inner_step_mechanism_closed_form() {
    let c = 3.7;
    let mut g = Graph::new();
    let theta = g.leaf_grad(Tensor::scalar(0.0));
    let cn = g.constant(Tensor::scalar(c));
    let diff = g.sub(theta, cn).unwrap();
    let sq = g.mul(diff, diff).unwrap();
    let loss = g.scale(sq, 0.5).unwrap();
    let grads = g.grad_nodes(loss, &[theta]).unwrap();
    let step = g.scale(grads[0], 0.1).unwrap();
    let updated = g.sub(theta, step).unwrap();
    let got = g.scalar(updated).unwrap();
    assert!((got - 0.1 * c).abs() < 1e-12, "{got}");
}
