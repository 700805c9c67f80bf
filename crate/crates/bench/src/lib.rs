//! Benchmark inputs shared by the criterion targets.

use contourforge::losses::GroundTruth;
use contourforge::raster::{mask_to_boundary, BinaryMask, ScalarField};
use contourforge::synthetic::{random_blob, standard_circle_task};

/// Blob region, its boundary, and a ridge prediction of size `size`.
pub fn blob_inputs(size: usize) -> (BinaryMask, BinaryMask, ScalarField) {
    let blob = random_blob(11, size);
    let boundary = mask_to_boundary(&blob.fine);
    (blob.fine, boundary, blob.pred)
}

/// Logits and GT of the standard circle task.
pub fn loss_inputs() -> (ScalarField, GroundTruth) {
    let task = standard_circle_task();
    let logits = task.pred.map(|p| 6.0 * p - 3.0);
    let gt = GroundTruth::from_regions(std::slice::from_ref(&task.noisy_region)).expect("non-empty region");
    (logits, gt)
}
