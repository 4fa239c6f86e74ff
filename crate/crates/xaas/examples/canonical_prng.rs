//! The canonical random stream every stochastic step draws from. Given the
//! same seed it yields the same numbers on every platform.
//!
//!     cargo run --example canonical_prng

use rand_core::Rng;
use xaas::core::rng::{derive_seed, seeded_rng, standard_normal, uniform01};

fn main() {
    let mut rng = seeded_rng(42);
    println!("seed 42, first u64      {:#018x}", rng.next_u64());
    let mut rng = seeded_rng(42);
    let u: Vec<String> = (0..4).map(|_| format!("{:.6}", uniform01(&mut rng))).collect();
    println!("uniform [0,1)           {}", u.join(" "));
    let n: Vec<String> = (0..4).map(|_| format!("{:+.6}", standard_normal(&mut rng))).collect();
    println!("standard normal         {}", n.join(" "));

    // per-item seeds make results independent of processing order
    for i in 0..3 {
        println!("derive_seed(42, {i})      {:#018x}", derive_seed(42, i));
    }
}
