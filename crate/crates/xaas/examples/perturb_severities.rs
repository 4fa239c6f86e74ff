//! Applies every perturbation at severities 1-3 and shows how far the data
//! moves and what that does to the reference model.
//!
//!     cargo run --example perturb_severities

use xaas::core::dataset::Dataset;
use xaas::core::metrics;
use xaas::core::perturb::{self, SeverityTable};
use xaas::core::refmodel;
use xaas::core::synthetic;
use xaas::core::types::{PerturbationKind, PerturbationSpec, PredictionRecord};

fn f1(ds: &Dataset) -> f64 {
    let preds: Vec<PredictionRecord> = ds
        .as_images()
        .unwrap()
        .iter()
        .map(|img| refmodel::vision().predict_image(img).unwrap())
        .collect();
    metrics::performance_metrics(&preds, ds.labels.as_ref().unwrap(), &[1]).unwrap().f1
}

fn main() {
    let table = SeverityTable::default();
    let clean = synthetic::image_dataset(64, 42);
    println!("clean f1 {:.3}", f1(&clean));
    for kind in [PerturbationKind::GaussianNoise, PerturbationKind::DefocusBlur, PerturbationKind::Pixelate] {
        for severity in 1..=3 {
            let seed = kind.is_stochastic().then_some(7);
            let spec = PerturbationSpec::new(kind, severity, seed).unwrap();
            let out = perturb::apply(&spec, &clean, &table).unwrap();
            let moved: Vec<f64> = clean
                .as_images()
                .unwrap()
                .iter()
                .zip(out.as_images().unwrap())
                .map(|(a, b)| metrics::mae(&a.to_f64(), &b.to_f64()).unwrap())
                .collect();
            println!(
                "{:<16} s{severity}  mean |out-in| {:.4}  f1 {:.3}  id {}",
                kind.as_str(),
                metrics::mean(&moved).unwrap(),
                f1(&out),
                out.id
            );
        }
    }

    // tabular noise scales with each numeric column's spread
    let tab = synthetic::tabular_dataset(32, 3);
    for severity in 1..=3 {
        let spec = PerturbationSpec::new(PerturbationKind::TabularNoise, severity, Some(5)).unwrap();
        let out = perturb::apply(&spec, &tab, &table).unwrap();
        let (a, b) = (tab.as_tabular().unwrap(), out.as_tabular().unwrap());
        println!("tabular_noise    s{severity}  mae {:.4}", metrics::mae(a.data(), b.data()).unwrap());
    }
}
