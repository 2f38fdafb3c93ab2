//! Dispersion components, clamped-NIR distances, retrain margin across scales.
use gfoes::baselines::{BaselineConfig, BaselineMethod};
use gfoes::eval::accuracy;
use gfoes::exp::*;
use gfoes::models::ModelPart;
use gfoes::util::derive_seed;

#[test]
#[ignore]
fn probe_scales() {
    for sigma in [12.0, 16.0, 20.0] {
        for master in 0u64..3 {
            let mut cfg = ExperimentConfig::default();
            cfg.master_seed = master;
            cfg.data.noise_sigma = sigma;
            cfg.data.separation = 8.0 * sigma;
            let prepared = prepare(&cfg).unwrap();
            let split = &prepared.split;
            let theta0 = &prepared.theta0;
            let gfn_cfg = gfoes::gfn::GfnConfig { seed: derive_seed(cfg.master_seed, "gfn"), ..cfg.gfn };
            let ucfg = gfoes::unlearn::UnlearnConfig { seed: derive_seed(cfg.master_seed, "unlearn"), ..cfg.unlearn };
            let out = gfoes::unlearn::gfoes_unlearn(theta0, &split.retain_few, &split.forget_labels, &gfn_cfg, &ucfg).unwrap();
            let gf = accuracy(&out.model, &split.forget_test).unwrap();
            let gr = accuracy(&out.model, &split.retain_test).unwrap();
            let r0 = accuracy(theta0, &split.retain_test).unwrap();

            let bcfg = BaselineConfig::for_method(BaselineMethod::NoiseImpairRepair, derive_seed(cfg.master_seed, "noise_impair_repair"));
            let nir = gfoes::baselines::run_baseline(BaselineMethod::NoiseImpairRepair, theta0, &split.retain_few, &split.forget_labels, &bcfg).unwrap();
            let d = |m: &gfoes::models::ClassifierModel, p| gfoes::models::param_distance(&theta0.params, &m.params, p).unwrap();

            let test_all = split.test_all().unwrap();
            let rep0 = gfoes::eval::representation_report(theta0, &test_all, &split.forget_labels, None).unwrap();
            let rep1 = gfoes::eval::representation_report(&out.model, &test_all, &split.forget_labels, None).unwrap();
            let f0 = rep0.class(0).unwrap();
            let f1 = rep1.class(0).unwrap();
            let worst_retained = (1..5).map(|c| {
                let a = rep0.class(c).unwrap().dispersion_ratio.unwrap();
                let b = rep1.class(c).unwrap().dispersion_ratio.unwrap();
                (b / a - 1.0f64).abs()
            }).fold(0.0, f64::max);
            println!("sigma={sigma} seed={master}: gfoes={gf:.3}/{gr:.3} (r0={r0:.3}) | gfoes_fe={:.3} nir_fe={:.3} nir_f={:.3} | forget ratio x{:.2} (intra {:.1}->{:.1}, nearest {:.1}->{:.1}) worst_retained_delta={:.2}",
                d(&out.model, ModelPart::FeatureExtractor), d(&nir, ModelPart::FeatureExtractor),
                accuracy(&nir, &split.forget_test).unwrap(),
                f1.dispersion_ratio.unwrap() / f0.dispersion_ratio.unwrap(),
                f0.intra_mean_dist.unwrap(), f1.intra_mean_dist.unwrap(),
                f0.nearest_other_centroid_dist, f1.nearest_other_centroid_dist,
                worst_retained);
        }
    }
}
