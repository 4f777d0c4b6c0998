//! Landslide susceptibility mapping from raster feature stacks and a point
//! inventory: raster I/O and terrain derivatives, buffered sampling, PCA and
//! VIF diagnostics, patch-based CNN/ViT classifiers, evaluation, and
//! natural-breaks susceptibility maps.

pub mod eval;
pub mod grid;
pub mod map;
pub mod nn;
pub mod pipeline;
pub mod reduce;
pub mod sampling;
pub mod synth;
pub mod util;
