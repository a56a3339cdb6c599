//! Default constants of the method.

/// Target superpixel count for SLIC.
pub const SUPERPIXELS: usize = 400;
/// SLIC compactness.
pub const COMPACTNESS: f64 = 15.0;
pub const SLIC_MAX_ITERATIONS: usize = 10;

/// Future poses projected into each frame.
pub const HORIZON_POSES: usize = 40;
pub const WALKER_HEIGHT: f64 = 1.5;
pub const MIN_FORWARD_DEPTH: f64 = 0.1;
/// Pose/frame timestamp association tolerance, seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.05;

/// Reconstruction losses are capped here before normalizing to `[0, 1]`.
pub const LOSS_CAP: f64 = 10.0;
/// Normalized cost at or below which terrain is traversable.
pub const THRESHOLD: f64 = 0.35;
/// Cloud points nearer than this to the camera are discarded, meters.
pub const MIN_RANGE: f64 = 2.0;

/// Feature embedding dimension.
pub const FEATURE_DIM: usize = 384;
pub const GRID_HEIGHT: usize = 50;
pub const GRID_WIDTH: usize = 50;

/// Hidden layer widths of the reconstruction network.
pub const HIDDEN_LAYERS: [usize; 7] = [256, 128, 64, 32, 64, 128, 256];

pub const LEARNING_RATE: f64 = 1e-3;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const BATCH_SIZE: usize = 256;
pub const EPOCHS: usize = 100;

/// Full autoencoder layer chain `[384, 256, ..., 256, 384]`.
pub fn layer_sizes() -> Vec<usize> {
    let mut sizes = Vec::with_capacity(HIDDEN_LAYERS.len() + 2);
    sizes.push(FEATURE_DIM);
    sizes.extend_from_slice(&HIDDEN_LAYERS);
    sizes.push(FEATURE_DIM);
    sizes
}

/// Threshold sweep candidates `0.00, 0.01, ..., 1.00`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}
