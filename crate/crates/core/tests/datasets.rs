use std::path::PathBuf;

use iwmm::config::RunConfig;
use iwmm::data::chain::fit_chain;
use iwmm::data::{cv_folds, generate, load_libsvm, Shape};
use iwmm::eval_bench::score_chain;
use iwmm::exec::Execution;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn iris_shape() {
    let d = load_libsvm(fixture("iris.libsvm")).unwrap();
    assert_eq!(d.len(), 150);
    assert_eq!(d.dim(), 4);
    assert_eq!(d.num_classes(), Some(3));
    assert_eq!(d.y[(0, 0)], 5.1);
}

#[test]
fn generated_shapes() {
    let d = generate(Shape::TwoCurve, 100, 0).unwrap();
    assert_eq!((d.len(), d.dim(), d.num_classes()), (100, 2, Some(2)));
    let d = generate(Shape::Pinwheel, 250, 0).unwrap();
    let labels = d.labels.as_ref().unwrap();
    for c in 0..5 {
        assert_eq!(labels.iter().filter(|&&l| l == c).count(), 50);
    }
    assert_eq!(
        generate(Shape::ThreeSemi, 30, 4).unwrap().y,
        generate(Shape::ThreeSemi, 30, 4).unwrap().y
    );
}

#[test]
fn low_dimensional_latent_fit_on_iris() {
    let d = load_libsvm(fixture("iris.libsvm")).unwrap();
    let folds = cv_folds(d.len(), 10, 0).unwrap();
    let config = RunConfig {
        latent_dim: 2,
        iterations: 40,
        burn_in: 10,
        thin: 10,
        m_inner: 50,
        ..RunConfig::default()
    };
    let chain = fit_chain(&d.subset(&folds.train_indices(0)), &config).unwrap();
    assert_eq!(chain.samples[0].x.ncols(), 2);
    let score = score_chain(&chain, &d.subset(&folds.test_indices(0)), Execution::default()).unwrap();
    assert!(score.test_log_lik.is_finite());
    assert!((0.0..=1.0).contains(&score.rand_index.unwrap()));
}
