//! Every metric on small hand-made inputs.
//!
//!     cargo run --example metrics_tour

use xaas::core::metrics::{self, SsimParams};
use xaas::core::types::{CostRecord, ExplanationSummary, GrayImage, PredictionRecord};

fn main() {
    // distribution shift between clean and perturbed top-1 probabilities
    let clean = [0.91, 0.85, 0.77, 0.95, 0.66];
    let noisy = [0.62, 0.71, 0.40, 0.88, 0.35];
    println!("ks            {:.4}", metrics::ks_statistic(&clean, &noisy).unwrap());
    println!("cliffs delta  {:.4}", metrics::cliffs_delta(&clean, &noisy).unwrap());
    println!("kl/ln n       {:.4}", metrics::kl_normalized(&[0.7, 0.2, 0.1], &[0.5, 0.3, 0.2]).unwrap());
    println!("robustness    {:.4}", metrics::robustness(&[0.12, 0.31, 0.58]).unwrap());
    println!("mce           {:.4}", metrics::mce(&[0.2, 0.3, 0.5], &[0.25, 0.4, 0.6]).unwrap());

    // explanation quality: probability of the explained class before and after masking
    let dev_clean = metrics::explanation_deviation(0.90, 0.633);
    let dev_noisy = metrics::explanation_deviation(0.70, 0.540);
    println!("deviation     clean {dev_clean:.3} noisy {dev_noisy:.3}");
    println!("resilience    {:.3}", metrics::explanation_resilience(dev_clean, dev_noisy));
    let change = metrics::prediction_change(0.90, 0.633);
    println!("pred. change  {:.3} ({:.1}%)", change.delta, 100.0 * change.pct.unwrap());

    let runs = [
        ExplanationSummary::new("a", vec![0.9, 0.1, 0.4, 0.0]),
        ExplanationSummary::new("b", vec![0.8, 0.2, 0.5, 0.1]),
        ExplanationSummary::new("c", vec![0.7, 0.0, 0.6, 0.2]),
    ];
    println!("stability     {:.4}", metrics::stability(&runs, metrics::mean_abs_distance).unwrap());
    println!("consistency   {:.4}", metrics::consistency(&runs, &runs[0], metrics::kendall_tau_distance).unwrap());

    // image similarity
    let a = GrayImage::new(8, 8, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
    let b = GrayImage::new(8, 8, (0..64).map(|i| (63 - i) as f64 / 63.0).collect()).unwrap();
    let p = SsimParams::default();
    println!("ssim          self {:.4} mirrored {:.4}", metrics::ssim(&a, &a, &p).unwrap(), metrics::ssim(&a, &b, &p).unwrap());
    println!("mae           {:.4}", metrics::mae(&a.values, &b.values).unwrap());

    // classification quality
    let preds: Vec<PredictionRecord> = [[2.0, 0.1, 0.0], [0.2, 1.5, 0.3], [0.1, 0.3, 0.2], [1.0, 0.9, 0.0]]
        .iter()
        .map(|l| PredictionRecord::from_logits(l.to_vec()).unwrap())
        .collect();
    let perf = metrics::performance_metrics(&preds, &[0, 1, 2, 1], &[1, 2]).unwrap();
    println!("performance   p {:.3} r {:.3} f1 {:.3} top-n {:?}", perf.precision, perf.recall, perf.f1, perf.top_n);

    let cost = metrics::cost_overhead(&CostRecord {
        t_ml: 2.0,
        t_xai: 5.0,
        t_eval: 0.5,
        e_ml: 0.01,
        e_xai: 0.03,
    })
    .unwrap();
    println!("cost          time {:.1}% energy {:.1}%", cost.r_time, cost.r_energy);
}
