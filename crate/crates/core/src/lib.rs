//! Numerical engine for Spin(7)-structure geometry on R^8 and reduced flat
//! tori.
//!
//! The crate is organized around the objects of the theory:
//!
//! - [`tensor`]: dense rank <= 5 tensor algebra over the 8-element index set
//!   (contractions, (anti)symmetrization, wedge/interior products, Hodge star);
//! - [`algebra`]: pointwise Spin(7) linear algebra — the Cayley form, the
//!   nonlinearly induced metric, form-space projectors, the diamond operator
//!   and its inverse, and the contraction-identity suite;
//! - [`fields`]: periodic grid-sampled tensor fields on a reduced flat torus
//!   (1-2 active coordinates), derivatives, curvature, torsion extraction and
//!   differential-identity residuals;
//! - [`symbol`]: exact principal-symbol linear algebra of the flow operators
//!   at the model point, kernel dimensions and strong-ellipticity bounds;
//! - [`flow`]: the torsion-energy functional, its negative gradient flow with
//!   explicit RK4 stepping, the gauge-fixed right-hand side, scaling laws and
//!   soliton residuals;
//! - [`sampling`]: the deterministic counter-based random generators used by
//!   tests and experiment drivers.
//!
//! Grid-node sweeps and sample sweeps run in parallel through rayon by
//! default; building with `--no-default-features` selects a sequential
//! fallback with bitwise-identical results.

pub mod algebra;
pub mod error;
pub mod fields;
pub mod flow;
pub mod par;
pub mod sampling;
pub mod symbol;
pub mod tensor;

pub use error::{Result, SpinError};
pub use tensor::{MetricTensor, MultiTensor, DIM};
