//! Raster types and the image operations every other module builds on.

mod contour;
mod distance;
mod field;
pub mod io;
mod mask;
mod morphology;
mod polygon;
mod smooth;

pub use contour::{
    connected_components, contours_to_mask, count_components, largest_component, mask_to_boundary, mask_to_contours,
    polygon_to_mask, trace_contours, Contour,
};
pub use distance::{distance_transform, squared_distance_transform};
pub use field::{bilinear_taps, sigmoid, ScalarField, Tap};
pub use mask::BinaryMask;
pub use morphology::{dilate, erode, StructuringElement};
pub use polygon::Polygon;
pub use smooth::{gaussian_kernel, gaussian_smooth};

pub(crate) use morphology::{dilate_offsets, erode_offsets};
pub(crate) use smooth::{correlate_separable, correlate_separable_adjoint};
