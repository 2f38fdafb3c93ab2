//! Multi-class pair choice and neggrad rate calibration.
use gfoes::baselines::{BaselineConfig, BaselineMethod};
use gfoes::eval::accuracy;
use gfoes::exp::*;
use gfoes::util::derive_seed;

#[test]
#[ignore]
fn probe_pairs_and_neggrad() {
    println!("--- multi-class pair choice (sigma=12) ---");
    for forget in [vec![1usize, 3], vec![0, 2], vec![2, 4]] {
        for master in 0u64..4 {
            let mut cfg = ExperimentConfig::default();
            cfg.master_seed = master;
            cfg.data.noise_sigma = 12.0;
            cfg.data.separation = 96.0;
            cfg.split.forget = forget.clone();
            let prepared = prepare(&cfg).unwrap();
            let split = &prepared.split;
            let theta0 = &prepared.theta0;
            let gfn_cfg = gfoes::gfn::GfnConfig { seed: derive_seed(cfg.master_seed, "gfn"), ..cfg.gfn };
            let ucfg = gfoes::unlearn::UnlearnConfig { seed: derive_seed(cfg.master_seed, "unlearn"), ..cfg.unlearn };
            let out = gfoes::unlearn::gfoes_unlearn(theta0, &split.retain_few, &split.forget_labels, &gfn_cfg, &ucfg).unwrap();
            println!("forget={forget:?} seed={master}: theta0={:.3}/{:.3} gfoes={:.3}/{:.3}",
                accuracy(theta0, &split.forget_test).unwrap(), accuracy(theta0, &split.retain_test).unwrap(),
                accuracy(&out.model, &split.forget_test).unwrap(), accuracy(&out.model, &split.retain_test).unwrap());
        }
    }
    println!("--- neggrad rate calibration (sigma=12, forget=[0]) ---");
    for lr in [2e-4, 1e-4, 4e-5] {
        for master in 0u64..5 {
            let mut cfg = ExperimentConfig::default();
            cfg.master_seed = master;
            cfg.data.noise_sigma = 12.0;
            cfg.data.separation = 96.0;
            let prepared = prepare(&cfg).unwrap();
            let split = &prepared.split;
            let theta0 = &prepared.theta0;
            let mut bcfg = BaselineConfig::for_method(BaselineMethod::NegGrad, derive_seed(cfg.master_seed, "neggrad"));
            bcfg.learning_rate = lr;
            let model = gfoes::baselines::run_baseline(BaselineMethod::NegGrad, theta0, &split.retain_few, &split.forget_labels, &bcfg).unwrap();
            print!(" lr={lr} seed={master}: {:.3}/{:.3} |", accuracy(&model, &split.forget_test).unwrap(), accuracy(&model, &split.retain_test).unwrap());
        }
        println!();
    }
}
