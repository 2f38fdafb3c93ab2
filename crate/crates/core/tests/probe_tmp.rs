//! Throwaway empirical probe for tuning the desk-scale defaults.
use gfoes::baselines::BaselineMethod;
use gfoes::eval::accuracy;
use gfoes::exp::*;
use gfoes::models::ModelPart;
use std::time::Instant;

#[test]
#[ignore]
fn probe_default_pipeline() {
    let cfg = ExperimentConfig::default();
    let t0 = Instant::now();
    let prepared = prepare(&cfg).unwrap();
    println!("prepare (data+train theta0): {:?}", t0.elapsed());

    let split = &prepared.split;
    let theta0 = &prepared.theta0;
    let adr0 = accuracy(theta0, &split.retain_test).unwrap();
    let adf0 = accuracy(theta0, &split.forget_test).unwrap();
    println!("theta0: AD_f={adf0:.4} AD_r={adr0:.4}");

    // GFOES
    let t1 = Instant::now();
    let gfn_cfg = gfoes::gfn::GfnConfig { seed: gfoes::util::derive_seed(cfg.master_seed, "gfn"), ..cfg.gfn };
    let ucfg = gfoes::unlearn::UnlearnConfig { seed: gfoes::util::derive_seed(cfg.master_seed, "unlearn"), ..cfg.unlearn };
    let outcome = gfoes::unlearn::gfoes_unlearn(theta0, &split.retain_few, &split.forget_labels, &gfn_cfg, &ucfg).unwrap();
    println!("gfoes pipeline: {:?}", t1.elapsed());
    let adf = accuracy(&outcome.model, &split.forget_test).unwrap();
    let adr = accuracy(&outcome.model, &split.retain_test).unwrap();
    let adf1 = accuracy(&outcome.theta1, &split.forget_test).unwrap();
    let adr1 = accuracy(&outcome.theta1, &split.retain_test).unwrap();
    println!("theta1 (post-erasure): AD_f={adf1:.4} AD_r={adr1:.4}");
    println!("theta* (post-recovery): AD_f={adf:.4} AD_r={adr:.4}");

    // trace prints
    let tr = &outcome.trace.iterations;
    println!("t=1: lmax={:.4} lmin={:.4} j={:.4} gphi={:.4} glam={:.4} lam={:.4}",
        tr[0].l_max, tr[0].l_min, tr[0].j, tr[0].grad_phi_norm, tr[0].grad_lambda_norm, tr[0].lambda);
    let last = tr.last().unwrap();
    println!("t=T: lmax={:.4} lmin={:.4} j={:.4} gphi={:.4} glam={:.4} lam={:.4}",
        last.l_max, last.l_min, last.j, last.grad_phi_norm, last.grad_lambda_norm, last.lambda);
    let g2 = |it: &gfoes::gfn::GfnIteration| it.grad_phi_norm.powi(2) + it.grad_lambda_norm.powi(2);
    println!("grad2 t1={:.6} running-min@T={:.6}", g2(&tr[0]), tr.iter().map(g2).fold(f64::INFINITY, f64::min));

    // representation
    let test_all = split.test_all().unwrap();
    let rep0 = gfoes::eval::representation_report(theta0, &test_all, &split.forget_labels, None).unwrap();
    let rep1 = gfoes::eval::representation_report(&outcome.model, &test_all, &split.forget_labels, None).unwrap();
    for c in 0..cfg.data.classes {
        let a = rep0.class(c).unwrap().dispersion_ratio.unwrap();
        let b = rep1.class(c).unwrap().dispersion_ratio.unwrap();
        println!("class {c} dispersion: before={a:.4} after={b:.4} ratio={:.3} forgotten={}", b/a, split.forget_labels.contains(&c));
    }

    // baselines
    for m in BaselineMethod::ALL {
        let t = Instant::now();
        let bcfg = gfoes::baselines::BaselineConfig::for_method(m, gfoes::util::derive_seed(cfg.master_seed, m.tag()));
        let model = gfoes::baselines::run_baseline(m, theta0, &split.retain_few, &split.forget_labels, &bcfg).unwrap();
        let adf = accuracy(&model, &split.forget_test).unwrap();
        let adr = accuracy(&model, &split.retain_test).unwrap();
        let fe = gfoes::models::param_distance(&theta0.params, &model.params, ModelPart::FeatureExtractor).unwrap();
        let hd = gfoes::models::param_distance(&theta0.params, &model.params, ModelPart::Head).unwrap();
        println!("{}: AD_f={adf:.4} AD_r={adr:.4} d_fe={fe:.4} d_head={hd:.4} ({:?})", m.tag(), t.elapsed());
    }
    let fe = gfoes::models::param_distance(&theta0.params, &outcome.model.params, ModelPart::FeatureExtractor).unwrap();
    let hd = gfoes::models::param_distance(&theta0.params, &outcome.model.params, ModelPart::Head).unwrap();
    println!("gfoes: d_fe={fe:.4} d_head={hd:.4}");
    println!("total: {:?}", t0.elapsed());
}
