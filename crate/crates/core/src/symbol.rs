//! Principal symbols of the flow operators at the model point, and the
//! linear algebra behind weak parabolicity and the gauge-fixed ellipticity.
//!
//! Everything here is exact pointwise algebra on the 43-dimensional state
//! space S^2 + Lambda^2_7 carrying a deformation (h, X), evaluated at
//! (Phi0, delta) in the background frame; the symbols are computed in an
//! orthonormal frame, so this loses no generality.

use nalgebra::DMatrix;

use crate::algebra::{self, lambda27_basis, standard_cayley_form};
use crate::error::{Result, SpinError};
use crate::tensor::{increasing_tuples, MetricTensor, MultiTensor, DIM};

/// State dimension: 36 symmetric components plus 7 coordinates of the
/// 2-form piece.
pub const STATE_DIM: usize = 43;

/// Element of S^2 + Lambda^2_7: h symmetric, X in the 7-piece.
#[derive(Clone, Debug)]
pub struct SymbolState {
    pub h: MultiTensor,
    pub x: MultiTensor,
}

impl SymbolState {
    pub fn zero() -> Self {
        SymbolState {
            h: MultiTensor::zeros(2),
            x: MultiTensor::zeros(2),
        }
    }

    pub fn new(h: MultiTensor, x: MultiTensor) -> Result<Self> {
        let phi = standard_cayley_form();
        let g = MetricTensor::euclidean();
        let hs = h.sym2();
        if (&hs - &h).max_abs() > 1e-10 * h.max_abs().max(1.0) {
            return Err(SpinError::InvalidArgument("h must be symmetric".into()));
        }
        let mut r = algebra::phi_contraction_2form(&x, phi, &g);
        r.add_scaled(&x, 6.0);
        if r.max_abs() > 1e-8 * x.max_abs().max(1.0) {
            return Err(SpinError::InvalidArgument(
                "X must lie in the 7-piece".into(),
            ));
        }
        Ok(SymbolState { h: hs, x })
    }

    /// Isometric coordinates: 8 diagonal entries, 28 scaled off-diagonal
    /// entries, 7 coordinates in the fixed 7-piece basis. The Euclidean dot
    /// product of coordinates equals |h|^2 + |X|^2.
    pub fn to_coords(&self) -> [f64; STATE_DIM] {
        let mut c = [0.0; STATE_DIM];
        for i in 0..DIM {
            c[i] = self.h.at2(i, i);
        }
        for (k, ab) in increasing_tuples(2).iter().enumerate() {
            c[DIM + k] = std::f64::consts::SQRT_2 * self.h.at2(ab[0], ab[1]);
        }
        let xc = lambda27_basis().coords(&self.x);
        c[36..].copy_from_slice(&xc);
        c
    }

    pub fn from_coords(c: &[f64]) -> Self {
        assert_eq!(c.len(), STATE_DIM);
        let mut h = MultiTensor::zeros(2);
        for i in 0..DIM {
            h.set(&[i, i], c[i]);
        }
        for (k, ab) in increasing_tuples(2).iter().enumerate() {
            let v = c[DIM + k] / std::f64::consts::SQRT_2;
            h.set(&[ab[0], ab[1]], v);
            h.set(&[ab[1], ab[0]], v);
        }
        let mut xc = [0.0_f64; 7];
        xc.copy_from_slice(&c[36..]);
        let x = lambda27_basis().from_coords(&xc);
        SymbolState { h, x }
    }

    pub fn norm_sq(&self) -> f64 {
        self.h.dot(&self.h) + self.x.dot(&self.x)
    }

    /// Splits a raw rank-2 symbol output into (symmetric, 7-piece) parts.
    /// The 21-piece of a well-formed symbol output vanishes.
    pub fn from_rank2(t: &MultiTensor) -> Self {
        let phi = standard_cayley_form();
        let g = MetricTensor::euclidean();
        let (x7, x21) = algebra::project_2form(&t.skew2(), phi, &g).expect("skew part");
        debug_assert!(
            x21.max_abs() <= 1e-10 * t.max_abs().max(1.0),
            "symbol output leaked into the 21-piece: {}",
            x21.max_abs()
        );
        SymbolState { h: t.sym2(), x: x7 }
    }
}

/// A linear endomorphism of the state space attached to a covector.
#[derive(Clone, Debug)]
pub struct SymbolOperator {
    pub xi: MultiTensor,
    pub matrix: DMatrix<f64>,
}

fn check_xi(xi: &MultiTensor) -> Result<()> {
    if xi.rank() != 1 {
        return Err(SpinError::RankMismatch {
            expected: 1,
            got: xi.rank(),
        });
    }
    if xi.dot(xi) == 0.0 {
        return Err(SpinError::ZeroCovector);
    }
    Ok(())
}

#[inline]
fn xi_norm_sq(xi: &MultiTensor) -> f64 {
    xi.dot(xi)
}

// ---------------------------------------------------------------------------
// First- and second-order operator symbols
// ---------------------------------------------------------------------------

/// Symbol of the torsion map:
/// sigma(DT)_{m;ib} = (xi_b h_{im} - xi_i h_{mb} + xi_j h_{mq} Phi_{ibjq})/4
///                    + xi_m X_{ib}.
/// Antisymmetric and 7-piece valued in (i,b) for every m.
pub fn symbol_torsion(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let (h, x) = (&s.h, &s.x);
    let xiv = xi.data();
    let mut out = MultiTensor::zeros(3);
    for m in 0..DIM {
        for i in 0..DIM {
            for b in 0..DIM {
                let mut phi_term = 0.0;
                for j in 0..DIM {
                    for q in 0..DIM {
                        phi_term += xiv[j] * h.at2(m, q) * phi.at4(i, b, j, q);
                    }
                }
                let v = 0.25 * (xiv[b] * h.at2(i, m) - xiv[i] * h.at2(m, b) + phi_term)
                    + xiv[m] * x.at2(i, b);
                out.set(&[m, i, b], v);
            }
        }
    }
    Ok(out)
}

/// Symbol of the torsion divergence:
/// sigma_{ib} = (xi_m xi_b h_{im} - xi_m xi_i h_{mb} + xi_m xi_j h_{mq} Phi_{ibjq})/4
///              + |xi|^2 X_{ib}.
pub fn symbol_div_torsion(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let (h, x) = (&s.h, &s.x);
    let xiv = xi.data();
    let n2 = xi_norm_sq(xi);
    let mut hxi = [0.0_f64; DIM]; // xi_m h_{im}
    for (i, slot) in hxi.iter_mut().enumerate() {
        *slot = (0..DIM).map(|m| xiv[m] * h.at2(i, m)).sum();
    }
    let mut out = MultiTensor::zeros(2);
    for i in 0..DIM {
        for b in 0..DIM {
            let mut phi_term = 0.0;
            for j in 0..DIM {
                for q in 0..DIM {
                    phi_term += xiv[j] * hxi[q] * phi.at4(i, b, j, q);
                }
            }
            let v = 0.25 * (xiv[b] * hxi[i] - xiv[i] * hxi[b] + phi_term) + n2 * x.at2(i, b);
            out.set(&[i, b], v);
        }
    }
    Ok(out)
}

/// Symbol of the Lie derivative of the metric along the torsion vector:
/// sigma_{li} = (xi_l xi_m h_{im} + xi_i xi_m h_{lm} - 2 xi_i xi_l tr h)/4
///              + xi_l xi_m X_{im} + xi_i xi_m X_{lm}.
pub fn symbol_lie_t8_metric(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let (h, x) = (&s.h, &s.x);
    let xiv = xi.data();
    let tr_h = h.trace2();
    let mut hxi = [0.0_f64; DIM];
    let mut xxi = [0.0_f64; DIM]; // xi_m X_{im}
    for i in 0..DIM {
        hxi[i] = (0..DIM).map(|m| xiv[m] * h.at2(i, m)).sum();
        xxi[i] = (0..DIM).map(|m| xiv[m] * x.at2(i, m)).sum();
    }
    let mut out = MultiTensor::zeros(2);
    for l in 0..DIM {
        for i in 0..DIM {
            let v = 0.25 * (xiv[l] * hxi[i] + xiv[i] * hxi[l] - 2.0 * xiv[i] * xiv[l] * tr_h)
                + xiv[l] * xxi[i]
                + xiv[i] * xxi[l];
            out.set(&[l, i], v);
        }
    }
    Ok(out)
}

/// Symbol of the Ricci curvature:
/// sigma_{ij} = -|xi|^2 h_{ij} - xi_i xi_j tr h + xi_i xi_a h_{aj} + xi_a xi_j h_{ia}.
pub fn symbol_ricci(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let h = &s.h;
    let xiv = xi.data();
    let n2 = xi_norm_sq(xi);
    let tr_h = h.trace2();
    let mut hxi = [0.0_f64; DIM];
    for (i, slot) in hxi.iter_mut().enumerate() {
        *slot = (0..DIM).map(|a| xiv[a] * h.at2(i, a)).sum();
    }
    let mut out = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            let v = -n2 * h.at2(i, j) - xiv[i] * xiv[j] * tr_h
                + xiv[i] * hxi[j]
                + xiv[j] * hxi[i];
            out.set(&[i, j], v);
        }
    }
    Ok(out)
}

/// Symbol of the scalar curvature: -2 |xi|^2 tr h + 2 xi_j xi_a h_{ja}.
pub fn symbol_scalar(xi: &MultiTensor, s: &SymbolState) -> Result<f64> {
    check_xi(xi)?;
    let h = &s.h;
    let xiv = xi.data();
    let mut quad = 0.0;
    for j in 0..DIM {
        for a in 0..DIM {
            quad += xiv[j] * xiv[a] * h.at2(j, a);
        }
    }
    Ok(-2.0 * xi_norm_sq(xi) * h.trace2() + 2.0 * quad)
}

/// Symbol of the gauge map W |-> L_W Phi in state form:
/// h-part (xi_j W_k + xi_k W_j)/2,
/// X-part (xi_j W_k - xi_k W_j - xi_a W_b Phi_{abjk})/8.
/// Injective for every nonzero xi.
pub fn symbol_delta_star(xi: &MultiTensor, w: &MultiTensor) -> Result<SymbolState> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let xiv = xi.data();
    let wv = w.data();
    let mut h = MultiTensor::zeros(2);
    let mut x = MultiTensor::zeros(2);
    for j in 0..DIM {
        for k in 0..DIM {
            h.set(&[j, k], 0.5 * (xiv[j] * wv[k] + xiv[k] * wv[j]));
            let mut phi_term = 0.0;
            for a in 0..DIM {
                for b in 0..DIM {
                    phi_term += xiv[a] * wv[b] * phi.at4(a, b, j, k);
                }
            }
            x.set(&[j, k], 0.125 * (xiv[j] * wv[k] - xiv[k] * wv[j] - phi_term));
        }
    }
    Ok(SymbolState { h, x })
}

/// 43 x 8 matrix of the gauge symbol on the basis vectors.
pub fn delta_star_matrix(xi: &MultiTensor) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::<f64>::zeros(STATE_DIM, DIM);
    for k in 0..DIM {
        let mut w = MultiTensor::zeros(1);
        w.data_mut()[k] = 1.0;
        let s = symbol_delta_star(xi, &w)?;
        let c = s.to_coords();
        for r in 0..STATE_DIM {
            m[(r, k)] = c[r];
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Bianchi maps
// ---------------------------------------------------------------------------

/// B1(h)_k = xi_a h_{ak} - xi_k tr h / 2, the symbol of the Bianchi map.
pub fn bianchi_b1(xi: &MultiTensor, h: &MultiTensor) -> Result<MultiTensor> {
    check_xi(xi)?;
    let xiv = xi.data();
    let tr_h = h.trace2();
    let mut out = MultiTensor::zeros(1);
    for k in 0..DIM {
        let mut v = -0.5 * xiv[k] * tr_h;
        for a in 0..DIM {
            v += xiv[a] * h.at2(a, k);
        }
        out.data_mut()[k] = v;
    }
    Ok(out)
}

/// B2(W)_{ij} = (xi_i W_j - xi_j W_i - xi_a W_b Phi_{abij})/8: the 7-piece
/// valued gauge block (the X-part of the gauge symbol).
pub fn bianchi_b2(xi: &MultiTensor, w: &MultiTensor) -> Result<MultiTensor> {
    Ok(symbol_delta_star(xi, w)?.x)
}

/// The combined map Btilde(h,X)_k = xi_i h_{ik}/2 - 2 xi_m X_{km};
/// dim ker Btilde = 35.
pub fn bianchi_btilde(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let xiv = xi.data();
    let mut out = MultiTensor::zeros(1);
    for k in 0..DIM {
        let mut v = 0.0;
        for i in 0..DIM {
            v += 0.5 * xiv[i] * s.h.at2(i, k) - 2.0 * xiv[i] * s.x.at2(k, i);
        }
        out.data_mut()[k] = v;
    }
    Ok(out)
}

/// Adjoint of Btilde with respect to the state inner product:
/// Btilde*(Y) = ( (xi_i Y_j + xi_j Y_i)/4,
///                (xi_i Y_j - xi_j Y_i - xi_a Y_b Phi_{abij})/4 ).
/// Injective; satisfies <Btilde s, Y> = <s, Btilde* Y>.
pub fn bianchi_btilde_adjoint(xi: &MultiTensor, y: &MultiTensor) -> Result<SymbolState> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let xiv = xi.data();
    let yv = y.data();
    let mut h = MultiTensor::zeros(2);
    let mut x = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            h.set(&[i, j], 0.25 * (xiv[i] * yv[j] + xiv[j] * yv[i]));
            let mut phi_term = 0.0;
            for a in 0..DIM {
                for b in 0..DIM {
                    phi_term += xiv[a] * yv[b] * phi.at4(a, b, i, j);
                }
            }
            x.set(&[i, j], 0.25 * (xiv[i] * yv[j] - xiv[j] * yv[i] - phi_term));
        }
    }
    Ok(SymbolState { h, x })
}

/// 8 x 43 matrix of Btilde.
pub fn btilde_matrix(xi: &MultiTensor) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::<f64>::zeros(DIM, STATE_DIM);
    for col in 0..STATE_DIM {
        let mut c = [0.0; STATE_DIM];
        c[col] = 1.0;
        let s = SymbolState::from_coords(&c);
        let y = bianchi_btilde(xi, &s)?;
        for r in 0..DIM {
            m[(r, col)] = y.data()[r];
        }
    }
    Ok(m)
}

/// Nullity of Btilde by singular-value thresholding.
pub fn btilde_nullity(xi: &MultiTensor) -> Result<usize> {
    let m = btilde_matrix(xi)?;
    let rank = thresholded_rank(&m, 1e-8)?;
    Ok(STATE_DIM - rank)
}

// ---------------------------------------------------------------------------
// The flow operator symbols
// ---------------------------------------------------------------------------

/// Raw rank-2 symbol of the second-order part of the gradient flow,
/// sigma(-Ric + 2 L_{T8} g + 2 Div T), applied to a state.
pub fn symbol_gf_raw(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    symbol_general_raw(xi, s, 1.0, 2.0, 2.0)
}

/// Raw rank-2 symbol of the general second-order family
/// sigma(-a Ric + b L_{T8} g + c Div T). Exposed for experimental
/// coefficient sweeps; nothing is asserted about it.
pub fn symbol_general_raw(
    xi: &MultiTensor,
    s: &SymbolState,
    a: f64,
    b: f64,
    c: f64,
) -> Result<MultiTensor> {
    let mut out = symbol_ricci(xi, s)?.scale(-a);
    out.add_scaled(&symbol_lie_t8_metric(xi, s)?, b);
    out.add_scaled(&symbol_div_torsion(xi, s)?, c);
    Ok(out)
}

/// Assembles the 43 x 43 symbol of the gradient-flow operator.
pub fn assemble_symbol_l(xi: &MultiTensor) -> Result<SymbolOperator> {
    assemble(xi, |s| Ok(SymbolState::from_rank2(&symbol_gf_raw(xi, s)?)))
}

/// Assembles the symbol of the general (a, b, c) family.
pub fn assemble_symbol_general(xi: &MultiTensor, a: f64, b: f64, c: f64) -> Result<SymbolOperator> {
    assemble(xi, |s| {
        Ok(SymbolState::from_rank2(&symbol_general_raw(xi, s, a, b, c)?))
    })
}

fn assemble<F>(xi: &MultiTensor, f: F) -> Result<SymbolOperator>
where
    F: Fn(&SymbolState) -> Result<SymbolState>,
{
    check_xi(xi)?;
    let mut m = DMatrix::<f64>::zeros(STATE_DIM, STATE_DIM);
    for col in 0..STATE_DIM {
        let mut c = [0.0; STATE_DIM];
        c[col] = 1.0;
        let out = f(&SymbolState::from_coords(&c))?;
        let oc = out.to_coords();
        for r in 0..STATE_DIM {
            m[(r, col)] = oc[r];
        }
    }
    Ok(SymbolOperator {
        xi: xi.clone(),
        matrix: m,
    })
}

/// The two blocks of the flow symbol rewritten through Btilde:
/// 1+35 part:  |xi|^2 h_{ij} - xi_i Btilde_j - xi_j Btilde_i,
/// 7 part:     2 |xi|^2 X - 8 B2(Btilde) + 2 xi_j xi_m X_{im}
///             - 2 xi_i xi_m X_{jm} + 2 xi_k xi_m X_{qm} Phi_{kqij}.
/// Agrees with the direct assembly; kept as a cross-check.
pub fn symbol_l_via_btilde(xi: &MultiTensor, s: &SymbolState) -> Result<SymbolState> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let xiv = xi.data();
    let n2 = xi_norm_sq(xi);
    let bt = bianchi_btilde(xi, s)?;
    let btv = bt.data();
    let mut h = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            h.set(
                &[i, j],
                n2 * s.h.at2(i, j) - xiv[i] * btv[j] - xiv[j] * btv[i],
            );
        }
    }
    let b2bt = bianchi_b2(xi, &bt)?;
    let mut xxi = [0.0_f64; DIM]; // xi_m X_{im}
    for (i, slot) in xxi.iter_mut().enumerate() {
        *slot = (0..DIM).map(|m| xiv[m] * s.x.at2(i, m)).sum();
    }
    let mut x = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            let mut phi_term = 0.0;
            for k in 0..DIM {
                for q in 0..DIM {
                    phi_term += xiv[k] * xxi[q] * phi.at4(k, q, i, j);
                }
            }
            let v = 2.0 * n2 * s.x.at2(i, j) - 8.0 * b2bt.at2(i, j) + 2.0 * xiv[j] * xxi[i]
                - 2.0 * xiv[i] * xxi[j]
                + 2.0 * phi_term;
            x.set(&[i, j], v);
        }
    }
    Ok(SymbolState { h, x })
}

/// Symbol of the gauge-fixed operator:
/// sigma_{ij} = |xi|^2 h_{ij} + 2 |xi|^2 X_{ij}
///   - 3/8 xi_i xi_m h_{mj} + 3/8 xi_j xi_m h_{mi} + 3/8 xi_a xi_m h_{mb} Phi_{abij}
///   - 1/2 xi_i xi_m X_{jm} + 1/2 xi_j xi_m X_{im} + 1/2 xi_a xi_m X_{bm} Phi_{abij}.
pub fn symbol_gauge_fixed_raw(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let xiv = xi.data();
    let n2 = xi_norm_sq(xi);
    let (h, x) = (&s.h, &s.x);
    let mut hxi = [0.0_f64; DIM]; // xi_m h_{mi}
    let mut xxi = [0.0_f64; DIM]; // xi_m X_{im}
    for i in 0..DIM {
        hxi[i] = (0..DIM).map(|m| xiv[m] * h.at2(m, i)).sum();
        xxi[i] = (0..DIM).map(|m| xiv[m] * x.at2(i, m)).sum();
    }
    let mut out = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            let mut phi_h = 0.0;
            let mut phi_x = 0.0;
            for a in 0..DIM {
                for b in 0..DIM {
                    let p = phi.at4(a, b, i, j);
                    phi_h += xiv[a] * hxi[b] * p;
                    phi_x += xiv[a] * xxi[b] * p;
                }
            }
            let v = n2 * h.at2(i, j) + 2.0 * n2 * x.at2(i, j) - 0.375 * xiv[i] * hxi[j]
                + 0.375 * xiv[j] * hxi[i]
                + 0.375 * phi_h
                - 0.5 * xiv[i] * xxi[j]
                + 0.5 * xiv[j] * xxi[i]
                + 0.5 * phi_x;
            out.set(&[i, j], v);
        }
    }
    Ok(out)
}

/// Assembles the gauge-fixed symbol; strongly elliptic with constant 1/2.
pub fn assemble_symbol_gauge_fixed(xi: &MultiTensor) -> Result<SymbolOperator> {
    assemble(xi, |s| {
        Ok(SymbolState::from_rank2(&symbol_gauge_fixed_raw(xi, s)?))
    })
}

/// The correction added by the gauge fixing:
/// sigma(L~) - sigma(L) = sigma(L_{W~} g)/2 - 2 sigma(L_{T8} g)
///                        + sigma((nabla W~)_7) - 4 sigma((nabla T8)_7).
pub fn gauge_correction_raw(xi: &MultiTensor, s: &SymbolState) -> Result<MultiTensor> {
    check_xi(xi)?;
    let phi = standard_cayley_form().value();
    let xiv = xi.data();
    let (h, x) = (&s.h, &s.x);
    let tr_h = h.trace2();
    let mut hxi = [0.0_f64; DIM];
    let mut xxi = [0.0_f64; DIM];
    for i in 0..DIM {
        hxi[i] = (0..DIM).map(|m| xiv[m] * h.at2(m, i)).sum();
        xxi[i] = (0..DIM).map(|m| xiv[m] * x.at2(i, m)).sum();
    }
    let mut out = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            let mut phi_h = 0.0;
            let mut phi_x = 0.0;
            for a in 0..DIM {
                for b in 0..DIM {
                    let p = phi.at4(a, b, i, j);
                    phi_h += xiv[a] * hxi[b] * p;
                    phi_x += xiv[a] * xxi[b] * p;
                }
            }
            // sigma(L_{W~} g)/2
            let lw = xiv[i] * hxi[j] + xiv[j] * hxi[i] - xiv[i] * xiv[j] * tr_h;
            // sigma((nabla W~)_7)
            let nw7 = 0.25 * (xiv[i] * hxi[j] - xiv[j] * hxi[i] - phi_h);
            // -4 sigma((nabla T8)_7)
            let nt8 = -0.125 * xiv[i] * hxi[j] + 0.125 * xiv[j] * hxi[i] + 0.125 * phi_h
                - 0.5 * xiv[i] * xxi[j]
                + 0.5 * xiv[j] * xxi[i]
                + 0.5 * phi_x;
            out.set(&[i, j], lw + nw7 + nt8);
        }
    }
    out.add_scaled(&symbol_lie_t8_metric(xi, s)?, -2.0);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Kernel analysis and coercivity
// ---------------------------------------------------------------------------

fn thresholded_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    let svd = nalgebra::SVD::new(m.clone(), false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let max = sv[0].max(f64::MIN_POSITIVE);
    let tau = rel_tol * max;
    let rank = sv.iter().filter(|s| **s > tau).count();
    if rank > 0 && rank < sv.len() {
        let gap = (sv[rank - 1] - sv[rank]) / max;
        if gap < 1e-6 {
            return Err(SpinError::RankAmbiguous {
                gap,
                threshold: 1e-6,
            });
        }
    }
    Ok(rank)
}

/// Kernel of a symbol operator: nullity, an orthonormal kernel basis, and
/// the subspace distance to the image of the gauge symbol.
pub struct KernelAnalysis {
    pub nullity: usize,
    pub kernel_basis: DMatrix<f64>,
    pub delta_star_distance: f64,
    pub equals_image_of_delta_star: bool,
}

pub fn kernel_analysis(op: &SymbolOperator) -> Result<KernelAnalysis> {
    let svd = nalgebra::SVD::new(op.matrix.clone(), false, true);
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut pairs: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, sv)| (sv, i))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let max = pairs[0].0.max(f64::MIN_POSITIVE);
    let tau = 1e-8 * max;
    let rank = pairs.iter().filter(|(sv, _)| *sv > tau).count();
    if rank > 0 && rank < pairs.len() {
        let gap = (pairs[rank - 1].0 - pairs[rank].0) / max;
        if gap < 1e-6 {
            return Err(SpinError::RankAmbiguous {
                gap,
                threshold: 1e-6,
            });
        }
    }
    let nullity = STATE_DIM - rank;
    let mut kernel = DMatrix::<f64>::zeros(STATE_DIM, nullity);
    for (k, (_, row)) in pairs[rank..].iter().enumerate() {
        for c in 0..STATE_DIM {
            kernel[(c, k)] = v_t[(*row, c)];
        }
    }
    let dst = delta_star_matrix(&op.xi)?;
    let q_dst = orthonormal_columns(&dst);
    let distance = if nullity == 0 {
        1.0
    } else {
        subspace_distance(&kernel, &q_dst)
    };
    Ok(KernelAnalysis {
        nullity,
        kernel_basis: kernel,
        delta_star_distance: distance,
        equals_image_of_delta_star: nullity == q_dst.ncols() && distance < 1e-9,
    })
}

fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let q = qr.q();
    q.columns(0, m.ncols()).into_owned()
}

/// sin of the largest principal angle between equal-dimension subspaces
/// given by orthonormal-column matrices, computed as the norm of the
/// projection residual (stable for tiny angles, unlike 1 - cos^2).
fn subspace_distance(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    if q1.ncols() != q2.ncols() {
        return 1.0;
    }
    let residual = q1 - q2 * (q2.transpose() * q1);
    let svd = nalgebra::SVD::new(residual, false, false);
    svd.singular_values.iter().cloned().fold(0.0_f64, f64::max)
}

/// Minimum of <sigma(s), s> / (|xi|^2 |s|^2) over unit states: the smallest
/// eigenvalue of the symmetric part, normalized by |xi|^2.
pub fn coercivity(op: &SymbolOperator) -> f64 {
    let sym = (&op.matrix + op.matrix.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    min / xi_norm_sq(&op.xi)
}

/// True when the flow symbol meets ker Btilde only in zero, checked by a
/// joint-kernel SVD of the stacked operator.
pub fn joint_kernel_is_trivial(xi: &MultiTensor) -> Result<bool> {
    let l = assemble_symbol_l(xi)?;
    let bt = btilde_matrix(xi)?;
    let mut stacked = DMatrix::<f64>::zeros(STATE_DIM + DIM, STATE_DIM);
    stacked
        .view_mut((0, 0), (STATE_DIM, STATE_DIM))
        .copy_from(&l.matrix);
    let scale = l.matrix.norm() / bt.norm().max(1e-300);
    stacked
        .view_mut((STATE_DIM, 0), (DIM, STATE_DIM))
        .copy_from(&(bt * scale));
    Ok(thresholded_rank(&stacked, 1e-8)? == STATE_DIM)
}

/// Per-covector summary used by sweeps and reports.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SymbolSample {
    pub nullity_l: usize,
    pub nullity_btilde: usize,
    pub kernel_matches_gauge_image: bool,
    pub gauge_image_distance: f64,
    pub coercivity_gauge_fixed: f64,
    pub reformulation_residual: f64,
    pub adjointness_residual: f64,
}

/// Deterministic probe states for the per-covector cross-checks.
fn probe_states(count: usize) -> Vec<(SymbolState, MultiTensor)> {
    let mut state = 0x9e3779b97f4a7c15_u64;
    let mut next = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        ((z ^ (z >> 31)) as f64 / u64::MAX as f64) * 2.0 - 1.0
    };
    (0..count)
        .map(|_| {
            let mut c = [0.0_f64; STATE_DIM];
            for v in c.iter_mut() {
                *v = next();
            }
            let mut y = MultiTensor::zeros(1);
            for v in y.data_mut() {
                *v = next();
            }
            (SymbolState::from_coords(&c), y)
        })
        .collect()
}

/// Runs the full symbol verification at one covector.
pub fn analyze_covector(xi: &MultiTensor) -> Result<SymbolSample> {
    let l = assemble_symbol_l(xi)?;
    let kernel = kernel_analysis(&l)?;
    let nullity_btilde = btilde_nullity(xi)?;
    let lt = assemble_symbol_gauge_fixed(xi)?;
    let coercivity_gauge_fixed = coercivity(&lt);

    let mut reformulation_residual = 0.0_f64;
    let mut adjointness_residual = 0.0_f64;
    for (s, y) in probe_states(4) {
        let direct = SymbolState::from_rank2(&symbol_gf_raw(xi, &s)?);
        let via = symbol_l_via_btilde(xi, &s)?;
        let scale = direct.h.max_abs().max(direct.x.max_abs()).max(1.0);
        let d = (&direct.h - &via.h).max_abs().max((&direct.x - &via.x).max_abs());
        reformulation_residual = reformulation_residual.max(d / scale);

        let lhs = bianchi_btilde(xi, &s)?.dot(&y);
        let ad = bianchi_btilde_adjoint(xi, &y)?;
        let rhs = s.h.dot(&ad.h) + s.x.dot(&ad.x);
        adjointness_residual = adjointness_residual.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    Ok(SymbolSample {
        nullity_l: kernel.nullity,
        nullity_btilde,
        kernel_matches_gauge_image: kernel.equals_image_of_delta_star,
        gauge_image_distance: kernel.delta_star_distance,
        coercivity_gauge_fixed,
        reformulation_residual,
        adjointness_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{self, Stream};

    fn e(k: usize) -> MultiTensor {
        let mut v = MultiTensor::zeros(1);
        v.data_mut()[k] = 1.0;
        v
    }

    fn random_state(rng: &mut rand_chacha::ChaCha8Rng) -> SymbolState {
        let phi = standard_cayley_form();
        let g = MetricTensor::euclidean();
        SymbolState {
            h: sampling::random_symmetric(1.0, rng),
            x: sampling::random_lambda27(phi, &g, 1.0, rng),
        }
    }

    fn slice_m(t: &MultiTensor, m: usize) -> MultiTensor {
        let mut out = MultiTensor::zeros(2);
        let block = DIM * DIM;
        out.data_mut()
            .copy_from_slice(&t.data()[m * block..(m + 1) * block]);
        out
    }

    #[test]
    fn coordinates_are_isometric_and_invertible() {
        let mut rng = sampling::rng(41, Stream::Tensors);
        let s = random_state(&mut rng);
        let c = s.to_coords();
        let dot: f64 = c.iter().map(|v| v * v).sum();
        assert!((dot - s.norm_sq()).abs() < 1e-12);
        let back = SymbolState::from_coords(&c);
        assert!((&back.h - &s.h).max_abs() < 1e-12);
        assert!((&back.x - &s.x).max_abs() < 1e-12);
    }

    #[test]
    fn zero_state_maps_to_zero_everywhere() {
        let mut rng = sampling::rng(42, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let z = SymbolState::zero();
        assert_eq!(symbol_torsion(&xi, &z).unwrap().max_abs(), 0.0);
        assert_eq!(symbol_div_torsion(&xi, &z).unwrap().max_abs(), 0.0);
        assert_eq!(symbol_lie_t8_metric(&xi, &z).unwrap().max_abs(), 0.0);
        assert_eq!(symbol_ricci(&xi, &z).unwrap().max_abs(), 0.0);
        assert_eq!(symbol_scalar(&xi, &z).unwrap(), 0.0);
    }

    #[test]
    fn zero_covector_is_rejected() {
        let z = MultiTensor::zeros(1);
        assert!(matches!(
            symbol_ricci(&z, &SymbolState::zero()),
            Err(SpinError::ZeroCovector)
        ));
    }

    #[test]
    fn torsion_symbol_is_lambda27_valued_and_pure_x_is_tensor_product() {
        let phi = standard_cayley_form();
        let g = MetricTensor::euclidean();
        let mut rng = sampling::rng(43, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let s = random_state(&mut rng);
        let out = symbol_torsion(&xi, &s).unwrap();
        let scale = out.max_abs();
        for m in 0..DIM {
            let tm = slice_m(&out, m);
            assert!((&tm + &tm.transpose2()).max_abs() / scale < 1e-12);
            let mut c = algebra::phi_contraction_2form(&tm, phi, &g);
            c.add_scaled(&tm, 6.0);
            assert!(c.max_abs() / scale < 1e-12, "m={m}: {}", c.max_abs());
        }
        // (0, X) and xi = e1: output is xi (x) X
        let x_only = SymbolState {
            h: MultiTensor::zeros(2),
            x: s.x.clone(),
        };
        let out = symbol_torsion(&e(0), &x_only).unwrap();
        for m in 0..DIM {
            let tm = slice_m(&out, m);
            let expected = if m == 0 {
                s.x.clone()
            } else {
                MultiTensor::zeros(2)
            };
            assert!((&tm - &expected).max_abs() < 1e-14);
        }
    }

    #[test]
    fn ricci_and_scalar_symbols_on_the_metric_direction() {
        // h = delta: sigma(Ric) = -|xi|^2 delta - 6 xi (x) xi, sigma(R) = -14 |xi|^2
        let mut rng = sampling::rng(44, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let s = SymbolState {
            h: MultiTensor::identity2(),
            x: MultiTensor::zeros(2),
        };
        let ric = symbol_ricci(&xi, &s).unwrap();
        let n2 = xi.dot(&xi);
        for i in 0..DIM {
            for j in 0..DIM {
                let expected =
                    -n2 * if i == j { 1.0 } else { 0.0 } - 6.0 * xi.data()[i] * xi.data()[j];
                assert!((ric.at2(i, j) - expected).abs() < 1e-13);
            }
        }
        let r = symbol_scalar(&xi, &s).unwrap();
        assert!((r + 14.0 * n2).abs() < 1e-12);
    }

    #[test]
    fn gauge_symbol_is_injective_of_rank_8() {
        let mut rng = sampling::rng(45, Stream::Covectors);
        for _ in 0..5 {
            let xi = sampling::random_unit_covector(&mut rng);
            let m = delta_star_matrix(&xi).unwrap();
            assert_eq!(thresholded_rank(&m, 1e-8).unwrap(), 8);
        }
        let xi = sampling::random_unit_covector(&mut rng);
        let z = symbol_delta_star(&xi, &MultiTensor::zeros(1)).unwrap();
        assert_eq!(z.h.max_abs(), 0.0);
        assert_eq!(z.x.max_abs(), 0.0);
        // W = xi: pure h-part xi (x) xi, no 2-form part
        let s = symbol_delta_star(&xi, &xi).unwrap();
        assert!(s.x.max_abs() < 1e-14);
        for i in 0..DIM {
            for j in 0..DIM {
                assert!((s.h.at2(i, j) - xi.data()[i] * xi.data()[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn btilde_on_metric_direction_and_adjointness() {
        let s = SymbolState {
            h: MultiTensor::identity2(),
            x: MultiTensor::zeros(2),
        };
        let bt = bianchi_btilde(&e(0), &s).unwrap();
        let mut expected = MultiTensor::zeros(1);
        expected.data_mut()[0] = 0.5;
        assert!((&bt - &expected).max_abs() < 1e-15);

        let phi = standard_cayley_form();
        let g = MetricTensor::euclidean();
        let mut rng = sampling::rng(46, Stream::Covectors);
        for _ in 0..5 {
            let xi = sampling::random_unit_covector(&mut rng);
            let s = random_state(&mut rng);
            let y = sampling::random_tensor(1, 1.0, &mut rng);
            let lhs = bianchi_btilde(&xi, &s).unwrap().dot(&y);
            let ad = bianchi_btilde_adjoint(&xi, &y).unwrap();
            let rhs = s.h.dot(&ad.h) + s.x.dot(&ad.x);
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            // the adjoint X-part lives in the 7-piece and the map is injective
            let mut c = algebra::phi_contraction_2form(&ad.x, phi, &g);
            c.add_scaled(&ad.x, 6.0);
            assert!(c.max_abs() < 1e-12);
            assert!(ad.h.max_abs() + ad.x.max_abs() > 1e-3);
        }
    }

    #[test]
    fn btilde_nullity_is_35() {
        let mut rng = sampling::rng(47, Stream::Covectors);
        for _ in 0..10 {
            let xi = sampling::random_unit_covector(&mut rng);
            assert_eq!(btilde_nullity(&xi).unwrap(), 35);
        }
    }

    #[test]
    fn b1_matches_its_formula() {
        let mut rng = sampling::rng(48, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let h = sampling::random_symmetric(1.0, &mut rng);
        let b1 = bianchi_b1(&xi, &h).unwrap();
        for k in 0..DIM {
            let mut expected = -0.5 * xi.data()[k] * h.trace2();
            for a in 0..DIM {
                expected += xi.data()[a] * h.at2(a, k);
            }
            assert!((b1.data()[k] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn flow_symbol_on_metric_direction() {
        // sigma(L)(g, 0) = |xi|^2 g - xi (x) xi: the Phi term cancels by
        // antisymmetry
        let mut rng = sampling::rng(49, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let s = SymbolState {
            h: MultiTensor::identity2(),
            x: MultiTensor::zeros(2),
        };
        let out = symbol_gf_raw(&xi, &s).unwrap();
        let n2 = xi.dot(&xi);
        for i in 0..DIM {
            for j in 0..DIM {
                let expected = n2 * if i == j { 1.0 } else { 0.0 } - xi.data()[i] * xi.data()[j];
                assert!((out.at2(i, j) - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn flow_symbol_annihilates_gauge_directions() {
        let mut rng = sampling::rng(50, Stream::Covectors);
        for _ in 0..4 {
            let xi = sampling::random_unit_covector(&mut rng);
            let w = sampling::random_tensor(1, 1.0, &mut rng);
            let gauge = symbol_delta_star(&xi, &w).unwrap();
            let out = symbol_gf_raw(&xi, &gauge).unwrap();
            assert!(out.max_abs() < 1e-12, "L(gauge) = {}", out.max_abs());
        }
    }

    #[test]
    fn reformulation_matches_direct_assembly() {
        let mut rng = sampling::rng(51, Stream::Covectors);
        for _ in 0..4 {
            let xi = sampling::random_unit_covector(&mut rng);
            let s = random_state(&mut rng);
            let direct = SymbolState::from_rank2(&symbol_gf_raw(&xi, &s).unwrap());
            let via = symbol_l_via_btilde(&xi, &s).unwrap();
            let scale = direct.h.max_abs().max(direct.x.max_abs()).max(1.0);
            assert!((&direct.h - &via.h).max_abs() / scale < 1e-12);
            assert!((&direct.x - &via.x).max_abs() / scale < 1e-12);
        }
    }

    #[test]
    fn kernel_is_the_gauge_image_of_dimension_8() {
        let mut rng = sampling::rng(52, Stream::Covectors);
        for _ in 0..5 {
            let xi = sampling::random_unit_covector(&mut rng);
            let op = assemble_symbol_l(&xi).unwrap();
            let k = kernel_analysis(&op).unwrap();
            assert_eq!(k.nullity, 8);
            assert!(k.delta_star_distance < 1e-9, "{}", k.delta_star_distance);
            assert!(k.equals_image_of_delta_star);
        }
    }

    #[test]
    fn restricted_to_ker_btilde_the_symbol_is_injective() {
        let mut rng = sampling::rng(53, Stream::Covectors);
        for _ in 0..5 {
            let xi = sampling::random_unit_covector(&mut rng);
            assert!(joint_kernel_is_trivial(&xi).unwrap());
        }
    }

    #[test]
    fn gauge_fixed_symbol_is_coercive_with_constant_half() {
        let mut rng = sampling::rng(54, Stream::Covectors);
        let mut min_c = f64::INFINITY;
        for _ in 0..50 {
            let xi = sampling::random_unit_covector(&mut rng);
            let op = assemble_symbol_gauge_fixed(&xi).unwrap();
            min_c = min_c.min(coercivity(&op));
        }
        assert!(min_c >= 0.5 - 1e-10, "min coercivity {min_c}");
        // the metric direction at xi = e1 pairs to |xi|^2 |delta|^2 = 8
        let s = SymbolState {
            h: MultiTensor::identity2(),
            x: MultiTensor::zeros(2),
        };
        let out = symbol_gauge_fixed_raw(&e(0), &s).unwrap();
        let pairing = out.dot(&s.h);
        assert!((pairing - 8.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_fixed_reduces_to_flow_plus_correction() {
        let mut rng = sampling::rng(55, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let s = random_state(&mut rng);
        let lt = symbol_gauge_fixed_raw(&xi, &s).unwrap();
        let mut l = symbol_gf_raw(&xi, &s).unwrap();
        l.add_scaled(&gauge_correction_raw(&xi, &s).unwrap(), 1.0);
        let scale = lt.max_abs().max(1.0);
        assert!((&lt - &l).max_abs() / scale < 1e-12);
    }

    #[test]
    fn symbols_scale_with_their_order() {
        let mut rng = sampling::rng(56, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let s = random_state(&mut rng);
        let c = 1.7;
        let cxi = xi.scale(c);
        let t1 = symbol_torsion(&xi, &s).unwrap();
        let t2 = symbol_torsion(&cxi, &s).unwrap();
        let mut d = t2.clone();
        d.add_scaled(&t1, -c);
        assert!(d.max_abs() < 1e-12 * t2.max_abs());
        for f in [symbol_div_torsion, symbol_ricci, symbol_lie_t8_metric] {
            let a = f(&xi, &s).unwrap();
            let b = f(&cxi, &s).unwrap();
            let mut d = b.clone();
            d.add_scaled(&a, -c * c);
            assert!(d.max_abs() < 1e-11 * b.max_abs().max(1.0));
        }
        let l1 = assemble_symbol_gauge_fixed(&xi).unwrap();
        let l2 = assemble_symbol_gauge_fixed(&cxi).unwrap();
        let diff = (&l2.matrix - &l1.matrix * (c * c)).norm();
        assert!(diff < 1e-11 * l2.matrix.norm());
    }

    #[test]
    fn stabilizer_rotations_preserve_nullity_and_coercivity() {
        let mut rng = sampling::rng(57, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let base_n = kernel_analysis(&assemble_symbol_l(&xi).unwrap())
            .unwrap()
            .nullity;
        let base_c = coercivity(&assemble_symbol_gauge_fixed(&xi).unwrap());
        let mut rot_rng = sampling::rng(58, Stream::Transports);
        for _ in 0..3 {
            let r = sampling::random_stabilizer_rotation(0.5, &mut rot_rng);
            let mut rxi = MultiTensor::zeros(1);
            for i in 0..DIM {
                let mut acc = 0.0;
                for j in 0..DIM {
                    acc += r.at2(j, i) * xi.data()[j];
                }
                rxi.data_mut()[i] = acc;
            }
            let n = kernel_analysis(&assemble_symbol_l(&rxi).unwrap())
                .unwrap()
                .nullity;
            let c = coercivity(&assemble_symbol_gauge_fixed(&rxi).unwrap());
            assert_eq!(n, base_n);
            assert!((c - base_c).abs() < 1e-10, "{c} vs {base_c}");
        }
    }

    #[test]
    fn dimension_count_is_consistent() {
        // nullity = 36 + 7 - dim ker Btilde = 8
        let mut rng = sampling::rng(59, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let nb = btilde_nullity(&xi).unwrap();
        let nl = kernel_analysis(&assemble_symbol_l(&xi).unwrap())
            .unwrap()
            .nullity;
        assert_eq!(nb, 35);
        assert_eq!(nl, 36 + 7 - nb);
    }

    #[test]
    fn analyze_covector_summary() {
        let mut rng = sampling::rng(60, Stream::Covectors);
        let xi = sampling::random_unit_covector(&mut rng);
        let sample = analyze_covector(&xi).unwrap();
        assert_eq!(sample.nullity_l, 8);
        assert_eq!(sample.nullity_btilde, 35);
        assert!(sample.kernel_matches_gauge_image);
        assert!(sample.coercivity_gauge_fixed >= 0.5 - 1e-10);
        assert!(sample.reformulation_residual < 1e-12);
        assert!(sample.adjointness_residual < 1e-12);
    }
}
