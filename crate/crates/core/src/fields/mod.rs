//! Grid-sampled tensor fields on a reduced flat torus.
//!
//! Fields vary along at most two of the eight coordinates (the active
//! dimensions, always coordinates 0 and 1), sampled on a uniform periodic
//! grid of n points per active dimension with spacing 2 pi / n. Every tensor
//! operation stays fully 8-dimensional pointwise; only differentiation knows
//! about the grid.

pub mod calculus;
pub mod io;
pub mod samples;
pub mod torsion;

use crate::error::{Result, SpinError};
use crate::par;
use crate::tensor::{MultiTensor, DIM};

/// Differentiation scheme for the periodic grid.
///
/// `Spectral` is the trigonometric-interpolation derivative (exact for
/// resolved Fourier modes); `Central4` is the 4th-order central stencil used
/// for grid-refinement studies, where spectral accuracy would sit at the
/// rounding floor for every resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DiffScheme {
    Spectral,
    Central4,
}

impl Default for DiffScheme {
    fn default() -> Self {
        DiffScheme::Spectral
    }
}

/// Periodic sampled field of equal-rank tensors over a reduced torus.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    active_dims: usize,
    n: usize,
    rank: usize,
    scheme: DiffScheme,
    values: Vec<MultiTensor>,
}

impl GridField {
    pub fn constant(active_dims: usize, n: usize, value: MultiTensor) -> Result<Self> {
        check_grid(active_dims, n)?;
        let count = n.pow(active_dims as u32);
        Ok(GridField {
            active_dims,
            n,
            rank: value.rank(),
            scheme: DiffScheme::Spectral,
            values: vec![value; count],
        })
    }

    /// Samples `f` at the active coordinates of every node (in parallel).
    pub fn from_fn<F>(active_dims: usize, n: usize, rank: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> MultiTensor + Sync + Send,
    {
        check_grid(active_dims, n)?;
        let count = n.pow(active_dims as u32);
        let values = par::map_indexed(count, |node| {
            let x = node_coords(active_dims, n, node);
            let t = f(&x[..active_dims]);
            assert_eq!(t.rank(), rank, "field closure returned wrong rank");
            t
        });
        Ok(GridField {
            active_dims,
            n,
            rank,
            scheme: DiffScheme::Spectral,
            values,
        })
    }

    pub fn from_values(active_dims: usize, n: usize, values: Vec<MultiTensor>) -> Result<Self> {
        check_grid(active_dims, n)?;
        let count = n.pow(active_dims as u32);
        if values.len() != count {
            return Err(SpinError::InvalidArgument(format!(
                "expected {count} nodes, got {}",
                values.len()
            )));
        }
        let rank = values[0].rank();
        if values.iter().any(|v| v.rank() != rank) {
            return Err(SpinError::InvalidArgument(
                "all nodes must share one rank".into(),
            ));
        }
        Ok(GridField {
            active_dims,
            n,
            rank,
            scheme: DiffScheme::Spectral,
            values,
        })
    }

    pub fn with_scheme(mut self, scheme: DiffScheme) -> Self {
        self.scheme = scheme;
        self
    }

    #[inline]
    pub fn active_dims(&self) -> usize {
        self.active_dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn scheme(&self) -> DiffScheme {
        self.scheme
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn node(&self, node: usize) -> &MultiTensor {
        &self.values[node]
    }

    #[inline]
    pub fn node_mut(&mut self, node: usize) -> &mut MultiTensor {
        &mut self.values[node]
    }

    pub fn nodes(&self) -> &[MultiTensor] {
        &self.values
    }

    /// Active coordinates of a node (length = active_dims).
    pub fn coords(&self, node: usize) -> Vec<f64> {
        let x = node_coords(self.active_dims, self.n, node);
        x[..self.active_dims].to_vec()
    }

    /// Applies `f` nodewise (in parallel), producing a new field.
    pub fn map<F>(&self, rank: usize, f: F) -> GridField
    where
        F: Fn(usize, &MultiTensor) -> MultiTensor + Sync + Send,
    {
        let values = par::map_indexed(self.node_count(), |i| {
            let t = f(i, &self.values[i]);
            assert_eq!(t.rank(), rank);
            t
        });
        GridField {
            active_dims: self.active_dims,
            n: self.n,
            rank,
            scheme: self.scheme,
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .map(|t| t.max_abs())
            .fold(0.0_f64, f64::max)
    }

    pub fn add_scaled(&mut self, other: &GridField, c: f64) {
        assert_eq!(self.node_count(), other.node_count());
        assert_eq!(self.rank, other.rank);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_scaled(b, c);
        }
    }

    pub fn scale(&self, c: f64) -> GridField {
        self.map(self.rank, |_, t| t.scale(c))
    }

    /// Partial derivative along coordinate `dir` (0-based). Derivatives along
    /// inactive directions vanish identically.
    pub fn derivative(&self, dir: usize) -> Result<GridField> {
        if dir >= DIM {
            return Err(SpinError::SlotOutOfRange {
                slot: dir,
                rank: DIM,
            });
        }
        if dir >= self.active_dims {
            return Ok(GridField {
                active_dims: self.active_dims,
                n: self.n,
                rank: self.rank,
                scheme: self.scheme,
                values: vec![MultiTensor::zeros(self.rank); self.node_count()],
            });
        }
        let d = derivative_matrix(self.n, self.scheme);
        let n = self.n;
        let values = match self.active_dims {
            1 => par::map_indexed(n, |i| {
                let mut out = MultiTensor::zeros(self.rank);
                for j in 0..n {
                    let w = d[i * n + j];
                    if w != 0.0 {
                        out.add_scaled(&self.values[j], w);
                    }
                }
                out
            }),
            2 => par::map_indexed(n * n, |node| {
                let (i0, i1) = (node / n, node % n);
                let mut out = MultiTensor::zeros(self.rank);
                for j in 0..n {
                    let (w, src) = if dir == 0 {
                        (d[i0 * n + j], j * n + i1)
                    } else {
                        (d[i1 * n + j], i0 * n + j)
                    };
                    if w != 0.0 {
                        out.add_scaled(&self.values[src], w);
                    }
                }
                out
            }),
            _ => unreachable!(),
        };
        Ok(GridField {
            active_dims: self.active_dims,
            n,
            rank: self.rank,
            scheme: self.scheme,
            values,
        })
    }

    /// Stacks all coordinate derivatives into a rank+1 field with the
    /// direction in the first slot: out[m, ...] = d_m t[...].
    pub fn partial_derivative(&self) -> Result<GridField> {
        let r = self.rank;
        if r + 1 > crate::tensor::MAX_RANK {
            return Err(SpinError::RankOverflow(r + 1));
        }
        let block = self.values[0].len();
        let mut derivs = Vec::with_capacity(self.active_dims);
        for dir in 0..self.active_dims {
            derivs.push(self.derivative(dir)?);
        }
        let values = par::map_indexed(self.node_count(), |node| {
            let mut t = MultiTensor::zeros(r + 1);
            for (dir, df) in derivs.iter().enumerate() {
                t.data_mut()[dir * block..(dir + 1) * block]
                    .copy_from_slice(df.values[node].data());
            }
            t
        });
        Ok(GridField {
            active_dims: self.active_dims,
            n: self.n,
            rank: r + 1,
            scheme: self.scheme,
            values,
        })
    }

    /// Exterior derivative of an antisymmetric form field.
    pub fn exterior_derivative(&self) -> Result<GridField> {
        let partial = self.partial_derivative()?;
        let r = partial.rank();
        let values = par::map_slice(&partial.values, |t| {
            crate::algebra::alternating_extension(t).expect("rank >= 2")
        });
        Ok(GridField {
            active_dims: self.active_dims,
            n: self.n,
            rank: r,
            scheme: self.scheme,
            values,
        })
    }

    /// Volume-weighted sum over nodes: sum f(node) * (2 pi / n)^k.
    /// Terms are reduced sequentially in node order, independent of
    /// parallelism, so results are reproducible bit for bit.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(usize, &MultiTensor) -> f64 + Sync + Send,
    {
        let cell = self.spacing().powi(self.active_dims as i32);
        let terms = par::map_indexed(self.node_count(), |i| f(i, &self.values[i]));
        terms.iter().sum::<f64>() * cell
    }
}

fn check_grid(active_dims: usize, n: usize) -> Result<()> {
    if !(1..=2).contains(&active_dims) {
        return Err(SpinError::InvalidArgument(format!(
            "active_dims must be 1 or 2, got {active_dims}"
        )));
    }
    if n < 4 {
        return Err(SpinError::InvalidArgument(format!(
            "grid needs at least 4 points per active dimension, got {n}"
        )));
    }
    Ok(())
}

fn node_coords(active_dims: usize, n: usize, node: usize) -> [f64; 2] {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    match active_dims {
        1 => [node as f64 * h, 0.0],
        2 => [(node / n) as f64 * h, (node % n) as f64 * h],
        _ => unreachable!(),
    }
}

/// Dense periodic differentiation matrix (row-major n x n).
pub(crate) fn derivative_matrix(n: usize, scheme: DiffScheme) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    let h = 2.0 * std::f64::consts::PI / n as f64;
    match scheme {
        DiffScheme::Spectral => {
            // trigonometric-interpolation derivative; exact for modes < n/2
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let k = i as isize - j as isize;
                    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    d[i * n + j] = if n % 2 == 0 {
                        0.5 * sign / (0.5 * k as f64 * h).tan()
                    } else {
                        0.5 * sign / (0.5 * k as f64 * h).sin()
                    };
                }
            }
        }
        DiffScheme::Central4 => {
            let c = 1.0 / (12.0 * h);
            for i in 0..n {
                let ip1 = (i + 1) % n;
                let ip2 = (i + 2) % n;
                let im1 = (i + n - 1) % n;
                let im2 = (i + n - 2) % n;
                d[i * n + ip2] = -c;
                d[i * n + ip1] = 8.0 * c;
                d[i * n + im1] = -8.0 * c;
                d[i * n + im2] = c;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_field(
        active_dims: usize,
        n: usize,
        f: impl Fn(&[f64]) -> f64 + Sync + Send,
    ) -> GridField {
        GridField::from_fn(active_dims, n, 0, |x| MultiTensor::scalar(f(x))).unwrap()
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let mut t = MultiTensor::zeros(2);
        t.set(&[1, 3], 2.5);
        let f = GridField::constant(1, 16, t).unwrap();
        for dir in 0..DIM {
            assert!(f.derivative(dir).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn spectral_derivative_is_exact_on_resolved_modes() {
        let n = 16;
        let f = scalar_field(1, n, |x| (3.0 * x[0]).sin());
        let df = f.derivative(0).unwrap();
        for node in 0..n {
            let x = f.coords(node)[0];
            let expected = 3.0 * (3.0 * x).cos();
            assert!(
                (df.node(node).data()[0] - expected).abs() < 1e-12,
                "node {node}"
            );
        }
        // inactive direction
        assert_eq!(f.derivative(5).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn central4_derivative_converges_at_order_4() {
        let err = |n: usize| {
            let f = scalar_field(1, n, |x| (2.0 * x[0]).sin()).with_scheme(DiffScheme::Central4);
            let df = f.derivative(0).unwrap();
            (0..n)
                .map(|i| {
                    let x = f.coords(i)[0];
                    (df.node(i).data()[0] - 2.0 * (2.0 * x).cos()).abs()
                })
                .fold(0.0_f64, f64::max)
        };
        let (e1, e2) = (err(32), err(64));
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "observed order {order}");
    }

    #[test]
    fn mixed_partials_commute_on_two_active_dims() {
        let n = 16;
        let f = scalar_field(2, n, |x| {
            (2.0 * x[0]).sin() * (x[1]).cos() + (x[0] + 2.0 * x[1]).cos()
        });
        let dxy = f.derivative(0).unwrap().derivative(1).unwrap();
        let dyx = f.derivative(1).unwrap().derivative(0).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..dxy.node_count() {
            worst = worst.max((dxy.node(i).data()[0] - dyx.node(i).data()[0]).abs());
        }
        assert!(worst < 1e-10, "commutator {worst}");
    }

    #[test]
    fn exterior_derivative_squares_to_zero() {
        let n = 16;
        let f = GridField::from_fn(1, n, 1, |x| {
            let mut t = MultiTensor::zeros(1);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = ((i + 1) as f64 * 0.3) * (x[0] + i as f64).sin();
            }
            t
        })
        .unwrap();
        let df = f.exterior_derivative().unwrap();
        let ddf = df.exterior_derivative().unwrap();
        assert!(ddf.max_abs() < 1e-11, "d^2 = {}", ddf.max_abs());
    }

    #[test]
    fn integrate_uses_cell_measure() {
        let n = 32;
        let f = scalar_field(1, n, |x| (x[0]).cos().powi(2));
        // integral of cos^2 over [0, 2pi) is pi
        let v = f.integrate(|_, t| t.data()[0]);
        assert!((v - std::f64::consts::PI).abs() < 1e-12);
    }
}
