//! Fixed instances shared by the criterion benchmarks.

use qbnb_core::synth::{gen_synthetic, SynthSpec, SyntheticInstance};
use qbnb_core::Mode;

/// Deterministic instance used by the benchmarks.
pub fn instance(n: usize, sigma: f64, dim: usize, mode: Mode) -> SyntheticInstance {
    let spec = SynthSpec::new(n, sigma, 0x5eed, dim, mode).expect("valid benchmark spec");
    gen_synthetic(&spec).expect("generator does not fail on valid specs")
}
