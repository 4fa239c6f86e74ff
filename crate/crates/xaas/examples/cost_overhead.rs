//! Time and energy overhead of explaining on top of inference, from measured
//! timings and a constant-power energy model.
//!
//!     cargo run --example cost_overhead

use xaas::core::energy::{ConstantPower, EnergyMeter};
use xaas::core::metrics;
use xaas::core::types::CostRecord;

fn main() {
    let meter = ConstantPower::default();
    // inference and explanation wall-clock seconds for three hypothetical models
    for (model, t_ml, t_xai) in [("vit", 13.35, 62.50), ("swin", 20.1, 58.7), ("resnet", 8.4, 12.9)] {
        let c = CostRecord {
            t_ml,
            t_xai,
            t_eval: 0.0,
            e_ml: meter.energy_wh(t_ml),
            e_xai: meter.energy_wh(t_xai),
        };
        let o = metrics::cost_overhead(&c).unwrap();
        println!(
            "{model:<7} t_ml {t_ml:>6.2}s t_xai {t_xai:>6.2}s  time overhead {:.2}%  energy overhead {:.2}%  ({:.4} Wh at {} W)",
            o.r_time,
            o.r_energy,
            c.e_ml + c.e_xai,
            meter.watts
        );
    }
}
