//! Predicts one synthetic image with the bundled reference model and prints
//! its gradient saliency map as shaded text.
//!
//!     cargo run --example explain_refmodel

use xaas::core::metrics;
use xaas::core::refmodel;
use xaas::core::synthetic;

fn main() {
    let model = refmodel::vision();
    let ds = synthetic::image_dataset_sized(4, 24, 9);
    let img = &ds.as_images().unwrap()[2];
    let label = ds.labels.as_ref().unwrap()[2];
    let pred = model.predict_image(img).unwrap();
    println!("label {label}, predicted {} with p = {:.3}", pred.top1_index, pred.top1_prob);

    let mask = metrics::normalize_mask(&model.explain_image(img, pred.top1_index).unwrap());
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for y in 0..mask.height {
        let line: String = (0..mask.width)
            .map(|x| shades[((mask.get(y, x) * 9.0).round() as usize).min(9)])
            .collect();
        println!("|{line}|");
    }

    // keeping only the salient pixels should preserve most of the score
    let kept = metrics::apply_mask(img, &mask).unwrap();
    let after = model.predict_image(&kept).unwrap().probs[pred.top1_index];
    println!("deviation {:.3}", metrics::explanation_deviation(pred.top1_prob, after));
}
