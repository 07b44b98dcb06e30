//! Admissible test-field families on the reduced torus.
//!
//! The perturbed family is Phi(x) = transport(Phi0, exp(eps S(x))) with S a
//! fixed rank-2 trigonometric polynomial with few Fourier modes. Orbit
//! membership guarantees pointwise admissibility by construction, and the
//! exponential keeps every transport orientation preserving.

use crate::algebra::{self, AdmissibleFourForm};
use crate::error::Result;
use crate::fields::GridField;
use crate::sampling::{self, FourierTensorField, Stream};
use crate::tensor::MultiTensor;

/// Parameters of the perturbed admissible family.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Perturbation {
    pub modes: usize,
    pub eps: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { modes: 2, eps: 1e-2 }
    }
}

/// The flat constant field of standard Cayley forms.
pub fn flat_field(active_dims: usize, n: usize) -> Result<GridField> {
    GridField::constant(
        active_dims,
        n,
        algebra::standard_cayley_form().value().clone(),
    )
}

/// A constant field transported by a fixed orientation-preserving matrix:
/// still parallel (zero torsion) but with a non-Euclidean constant metric.
pub fn transported_constant_field(
    active_dims: usize,
    n: usize,
    amp: f64,
    seed: u64,
) -> Result<GridField> {
    let mut rng = sampling::rng(seed, Stream::Transports);
    let m = sampling::random_gl_plus(amp, &mut rng);
    let phi = algebra::transport(algebra::standard_cayley_form(), &m)?;
    GridField::constant(active_dims, n, phi.into_value())
}

/// Pointwise-admissible perturbed field Phi(x) = transport(Phi0, exp(eps S(x))).
pub fn perturbed_field(
    active_dims: usize,
    n: usize,
    pert: Perturbation,
    seed: u64,
) -> Result<GridField> {
    let coeffs = {
        let mut rng = sampling::rng(seed, Stream::Perturbations);
        FourierTensorField::sample(active_dims, pert.modes, 1.0, &mut rng)
    };
    let phi0 = algebra::standard_cayley_form();
    GridField::from_fn(active_dims, n, 4, |x| {
        let m = algebra::matrix_exp(&coeffs.eval(x).scale(pert.eps));
        algebra::transport(phi0, &m)
            .expect("exponentials preserve orientation")
            .into_value()
    })
}

/// Smooth vector field with the given number of Fourier modes.
pub fn vector_field(active_dims: usize, n: usize, modes: usize, seed: u64) -> Result<GridField> {
    let coeffs = {
        let mut rng = sampling::rng(seed, Stream::Directions);
        FourierTensorField::sample(active_dims, modes, 1.0, &mut rng)
    };
    GridField::from_fn(active_dims, n, 1, |x| {
        // reuse the rank-2 trigonometric field and take its first column
        let m = coeffs.eval(x);
        let mut v = MultiTensor::zeros(1);
        for i in 0..crate::tensor::DIM {
            v.data_mut()[i] = m.at2(i, 0);
        }
        v
    })
}

/// Per-node wrapper used by consumers that need typed access.
pub fn as_form(field: &GridField, node: usize) -> AdmissibleFourForm {
    AdmissibleFourForm::from_components(field.node(node).clone())
        .expect("field nodes hold antisymmetric rank-4 tensors")
}
