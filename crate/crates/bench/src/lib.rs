//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowcast_core::flow::{CouplingVariant, FlowModel, FlowSpec};
use flowcast_core::numerics::Array;

/// The default forecasting geometry: 24-hour horizon conditioned on a
/// 24-hour history, nine blocks.
pub fn benchmark_model(variant: CouplingVariant) -> FlowModel {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = FlowModel::new(FlowSpec::new(24, 24, variant), &mut rng).unwrap();
    // Kick the zero-initialized heads so the maps are not the identity.
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for p in model.params.params_mut() {
        for v in p.value.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    model
}

pub fn random_batch(rows: usize, cols: usize, seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Array::new(vec![rows, cols], data).unwrap()
}
