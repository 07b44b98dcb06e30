//! Levi-Civita connection and curvature of a grid-sampled metric.
//!
//! Curvature convention:
//!   R_{ijkl} = g( nabla_i nabla_j e_k - nabla_j nabla_i e_k, e_l ),
//!   Ric_{ij} = R_{lijl},  R = g^{ij} Ric_{ij}.

use crate::error::{Result, SpinError};
use crate::fields::GridField;
use crate::par;
use crate::tensor::{MetricTensor, MultiTensor, DIM};

/// Builds the per-node positive-definite metrics from a rank-2 field.
pub fn metric_nodes(g: &GridField) -> Result<Vec<MetricTensor>> {
    if g.rank() != 2 {
        return Err(SpinError::RankMismatch {
            expected: 2,
            got: g.rank(),
        });
    }
    let metrics = par::map_indexed(g.node_count(), |i| MetricTensor::from_tensor(g.node(i).clone()));
    metrics.into_iter().collect()
}

/// Christoffel symbols of the Levi-Civita connection, stored as a rank-3
/// field with slots (k, i, j) for Gamma^k_{ij}; symmetric in (i, j) and
/// metric compatible up to the differentiation error.
pub fn christoffels(g: &GridField) -> Result<GridField> {
    let metrics = metric_nodes(g)?;
    christoffels_with(g, &metrics)
}

pub(crate) fn christoffels_with(g: &GridField, metrics: &[MetricTensor]) -> Result<GridField> {
    let dg = g.partial_derivative()?; // dg[m, i, j] = d_m g_{ij}
    Ok(g.map(3, |node, _| {
        christoffel_at_node(dg.node(node), metrics[node].inverse())
    }))
}

fn christoffel_at_node(dg: &MultiTensor, ginv: &MultiTensor) -> MultiTensor {
    let mut gamma = MultiTensor::zeros(3);
    let out = gamma.data_mut();
    for i in 0..DIM {
        for j in i..DIM {
            for l in 0..DIM {
                let half_sum = 0.5 * (dg.at3(i, j, l) + dg.at3(j, i, l) - dg.at3(l, i, j));
                if half_sum == 0.0 {
                    continue;
                }
                for k in 0..DIM {
                    let v = ginv.at2(k, l) * half_sum;
                    out[(k * DIM + i) * DIM + j] += v;
                    if i != j {
                        out[(k * DIM + j) * DIM + i] += v;
                    }
                }
            }
        }
    }
    gamma
}

/// Covariant derivative of a tensor field; the new (derivative) index comes
/// first: (nabla t)[m, ...] = d_m t[...] - Gamma corrections on every slot.
pub fn covariant_derivative(t: &GridField, g: &GridField) -> Result<GridField> {
    let gamma = christoffels(g)?;
    covariant_derivative_with(t, &gamma)
}

/// Same, with precomputed Christoffel symbols.
pub fn covariant_derivative_with(t: &GridField, gamma: &GridField) -> Result<GridField> {
    let partial = t.partial_derivative()?;
    Ok(t.map(partial.rank(), |node, tn| {
        covariant_at_node(partial.node(node), tn, gamma.node(node))
    }))
}

pub(crate) fn covariant_at_node(
    dt: &MultiTensor,
    t: &MultiTensor,
    gamma: &MultiTensor,
) -> MultiTensor {
    let r = t.rank();
    let mut out = dt.clone();
    let block = t.len();
    // strides of the original tensor slots
    let stride = |slot: usize| DIM.pow((r - 1 - slot) as u32);
    for m in 0..DIM {
        let o = &mut out.data_mut()[m * block..(m + 1) * block];
        for s in 0..r {
            let st = stride(s);
            for lin in 0..block {
                let digit = (lin / st) % DIM;
                let base = lin - digit * st;
                let mut corr = 0.0;
                for p in 0..DIM {
                    corr += gamma.at3(p, m, digit) * t.data()[base + p * st];
                }
                o[lin] -= corr;
            }
        }
    }
    out
}

/// Riemann, Ricci and scalar curvature of a metric field.
pub struct CurvatureData {
    pub rm: GridField,
    pub ric: GridField,
    pub scalar: GridField,
}

pub fn curvature(g: &GridField) -> Result<CurvatureData> {
    let metrics = metric_nodes(g)?;
    curvature_with(g, &metrics)
}

pub(crate) fn curvature_with(g: &GridField, metrics: &[MetricTensor]) -> Result<CurvatureData> {
    let gamma = christoffels_with(g, metrics)?;
    let dgamma = gamma.partial_derivative()?; // dgamma[a, k, i, j] = d_a Gamma^k_{ij}
    let rm = g.map(4, |node, gn| {
        riemann_at_node(dgamma.node(node), gamma.node(node), gn)
    });
    let ric = rm.map(2, |node, _| ricci_at_node(rm.node(node), metrics[node].inverse()));
    let scalar = ric.map(0, |node, ric_n| {
        let ginv = metrics[node].inverse();
        let mut r = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                r += ginv.at2(i, j) * ric_n.at2(i, j);
            }
        }
        MultiTensor::scalar(r)
    });
    Ok(CurvatureData { rm, ric, scalar })
}

fn riemann_at_node(dgamma: &MultiTensor, gamma: &MultiTensor, g: &MultiTensor) -> MultiTensor {
    // R^m_{kij} = d_i Gamma^m_{jk} - d_j Gamma^m_{ik}
    //           + Gamma^p_{jk} Gamma^m_{ip} - Gamma^p_{ik} Gamma^m_{jp}
    let mut rm = MultiTensor::zeros(4);
    let out = rm.data_mut();
    for i in 0..DIM {
        for j in 0..DIM {
            if i == j {
                continue;
            }
            for k in 0..DIM {
                for m in 0..DIM {
                    let mut val = dgamma.at4(i, m, j, k) - dgamma.at4(j, m, i, k);
                    for p in 0..DIM {
                        val += gamma.at3(p, j, k) * gamma.at3(m, i, p)
                            - gamma.at3(p, i, k) * gamma.at3(m, j, p);
                    }
                    // lower the first index: R_{ijkl} = g_{lm} R^m_{kij}
                    for l in 0..DIM {
                        out[((i * DIM + j) * DIM + k) * DIM + l] += g.at2(l, m) * val;
                    }
                }
            }
        }
    }
    rm
}

fn ricci_at_node(rm: &MultiTensor, ginv: &MultiTensor) -> MultiTensor {
    // Ric_{ij} = R_{lijl} with the repeated pair raised
    let mut ric = MultiTensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            let mut acc = 0.0;
            for l in 0..DIM {
                for m in 0..DIM {
                    let w = ginv.at2(l, m);
                    if w != 0.0 {
                        acc += w * rm.at4(l, i, j, m);
                    }
                }
            }
            ric.set(&[i, j], acc);
        }
    }
    ric
}

/// Max-norm residual of the first Bianchi identity
/// R_{ijkl} + R_{jkil} + R_{kijl} = 0, relative to max |Rm|.
pub fn first_bianchi_residual(rm: &GridField) -> f64 {
    let scale = rm.max_abs().max(f64::MIN_POSITIVE);
    let worst = par::map_indexed(rm.node_count(), |node| {
        let r = rm.node(node);
        let mut w = 0.0_f64;
        for i in 0..DIM {
            for j in 0..DIM {
                for k in 0..DIM {
                    for l in 0..DIM {
                        w = w.max((r.at4(i, j, k, l) + r.at4(j, k, i, l) + r.at4(k, i, j, l)).abs());
                    }
                }
            }
        }
        w
    });
    worst.into_iter().fold(0.0_f64, f64::max) / scale
}

/// Max-norm residual of the commutator identity on a rank-2 field S:
/// nabla_i nabla_j S_{kl} - nabla_j nabla_i S_{kl}
///   = -R_{ijkm} S_{ml} - R_{ijlm} S_{km},
/// relative to max |Rm| max |S|.
pub fn ricci_identity_residual(s: &GridField, g: &GridField) -> Result<f64> {
    let metrics = metric_nodes(g)?;
    let gamma = christoffels_with(g, &metrics)?;
    let curv = curvature_with(g, &metrics)?;
    let ds = covariant_derivative_with(s, &gamma)?;
    let dds = covariant_derivative_with(&ds, &gamma)?; // [i, j, k, l]
    let scale = (curv.rm.max_abs() * s.max_abs()).max(f64::MIN_POSITIVE);
    let worst = par::map_indexed(s.node_count(), |node| {
        let dd = dds.node(node);
        let rm = curv.rm.node(node);
        let sn = s.node(node);
        let ginv = metrics[node].inverse();
        let mut sr = MultiTensor::zeros(2); // S with one slot raised: S^m_l and S_k^m
        for m in 0..DIM {
            for l in 0..DIM {
                let mut acc = 0.0;
                for p in 0..DIM {
                    acc += ginv.at2(m, p) * sn.at2(p, l);
                }
                sr.set(&[m, l], acc);
            }
        }
        let mut src = MultiTensor::zeros(2);
        for k in 0..DIM {
            for m in 0..DIM {
                let mut acc = 0.0;
                for p in 0..DIM {
                    acc += ginv.at2(m, p) * sn.at2(k, p);
                }
                src.set(&[k, m], acc);
            }
        }
        let mut w = 0.0_f64;
        for i in 0..DIM {
            for j in 0..DIM {
                for k in 0..DIM {
                    for l in 0..DIM {
                        let lhs = dd.at4(i, j, k, l) - dd.at4(j, i, k, l);
                        let mut rhs = 0.0;
                        for m in 0..DIM {
                            rhs += -rm.at4(i, j, k, m) * sr.at2(m, l)
                                - rm.at4(i, j, l, m) * src.at2(k, m);
                        }
                        w = w.max((lhs - rhs).abs());
                    }
                }
            }
        }
        w
    });
    Ok(worst.into_iter().fold(0.0_f64, f64::max) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::DiffScheme;
    use crate::sampling::{self, Stream};

    fn spd_field(n: usize, eps: f64, seed: u64) -> (GridField, sampling::FourierTensorField) {
        let s = {
            let mut rng = sampling::rng(seed, Stream::Perturbations);
            sampling::FourierTensorField::sample(1, 2, 1.0, &mut rng)
        };
        let g = GridField::from_fn(1, n, 2, |x| {
            // g = (I + eps S)^T (I + eps S): positive definite, band-limited
            let mut m = MultiTensor::identity2();
            m.add_scaled(&s.eval(x), eps);
            crate::algebra::mat_mul(&m.transpose2(), &m)
        })
        .unwrap();
        (g, s)
    }

    #[test]
    fn christoffels_of_constant_metric_vanish() {
        let g = GridField::constant(1, 16, MultiTensor::identity2()).unwrap();
        let gamma = christoffels(&g).unwrap();
        assert!(gamma.max_abs() < 1e-13);
    }

    #[test]
    fn christoffels_match_closed_form_derivative_oracle() {
        let n = 32;
        let eps = 0.1;
        let (g, s) = spd_field(n, eps, 42);
        let gamma = christoffels(&g).unwrap();
        // oracle: Gamma from the exact derivative of (I+eps S)^T(I+eps S)
        let metrics = metric_nodes(&g).unwrap();
        let mut worst = 0.0_f64;
        for node in 0..n {
            let x = g.coords(node);
            let mut m = MultiTensor::identity2();
            m.add_scaled(&s.eval(&x), eps);
            let ds = s.eval_deriv(&x, 0);
            // d_0 g = eps (dS^T M + M^T dS); all other directions zero
            let mut dg0 = crate::algebra::mat_mul(&ds.transpose2(), &m);
            dg0.add_scaled(&crate::algebra::mat_mul(&m.transpose2(), &ds), 1.0);
            let dg0 = dg0.scale(eps);
            let mut dg = MultiTensor::zeros(3);
            dg.data_mut()[..64].copy_from_slice(dg0.data());
            let oracle = christoffel_at_node(&dg, metrics[node].inverse());
            worst = worst.max((&oracle - gamma.node(node)).max_abs());
        }
        assert!(worst < 1e-10, "christoffel oracle residual {worst}");
    }

    #[test]
    fn metric_compatibility() {
        let n = 32;
        let (g, _) = spd_field(n, 0.15, 7);
        let nabla_g = covariant_derivative(&g, &g).unwrap();
        assert!(nabla_g.max_abs() < 1e-9, "nabla g = {}", nabla_g.max_abs());
    }

    #[test]
    fn curvature_of_flat_metric_vanishes() {
        let g = GridField::constant(1, 16, MultiTensor::identity2()).unwrap();
        let c = curvature(&g).unwrap();
        assert!(c.rm.max_abs() < 1e-12);
        assert!(c.ric.max_abs() < 1e-12);
        assert!(c.scalar.max_abs() < 1e-12);
    }

    #[test]
    fn conformal_curvature_matches_closed_form() {
        // g = e^{2f(x0)} delta with f = a cos(x0): closed-form curvature
        // R_{ijkl} = e^{2f} [ f'' (d_{i0} d_{jl} d_{k0} - d_{i0} d_{jk} d_{l0}
        //                         - d_{j0} d_{il} d_{k0} + d_{j0} d_{ik} d_{l0})
        //   + f'^2 (d_{il} d_{j0} d_{k0} - d_{jl} d_{i0} d_{k0}
        //         - d_{ik} d_{j0} d_{l0} + d_{jk} d_{i0} d_{l0}
        //         + d_{ik} d_{jl} - d_{jk} d_{il}) ]
        let n = 32;
        let a = 0.2;
        let g = GridField::from_fn(1, n, 2, |x| {
            MultiTensor::identity2().scale((2.0 * a * x[0].cos()).exp())
        })
        .unwrap();
        let c = curvature(&g).unwrap();
        let mut worst = 0.0_f64;
        let d = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
        for node in 0..n {
            let x = g.coords(node)[0];
            let e2f = (2.0 * a * x.cos()).exp();
            let fp = -a * x.sin();
            let fpp = -a * x.cos();
            let rm = c.rm.node(node);
            for i in 0..DIM {
                for j in 0..DIM {
                    for k in 0..DIM {
                        for l in 0..DIM {
                            let f2 = fpp
                                * (d(i, 0) * d(j, l) * d(k, 0) - d(i, 0) * d(j, k) * d(l, 0)
                                    - d(j, 0) * d(i, l) * d(k, 0)
                                    + d(j, 0) * d(i, k) * d(l, 0));
                            let fq = fp
                                * fp
                                * (d(i, l) * d(j, 0) * d(k, 0) - d(j, l) * d(i, 0) * d(k, 0)
                                    - d(i, k) * d(j, 0) * d(l, 0)
                                    + d(j, k) * d(i, 0) * d(l, 0)
                                    + d(i, k) * d(j, l)
                                    - d(j, k) * d(i, l));
                            let expected = e2f * (f2 + fq);
                            worst = worst.max((rm.at4(i, j, k, l) - expected).abs());
                        }
                    }
                }
            }
        }
        assert!(worst < 1e-9, "conformal curvature residual {worst}");
    }

    #[test]
    fn first_bianchi_holds_on_random_smooth_metric() {
        let (g, _) = spd_field(32, 0.15, 3);
        let c = curvature(&g).unwrap();
        let res = first_bianchi_residual(&c.rm);
        assert!(res < 1e-8, "first Bianchi residual {res}");
    }

    #[test]
    fn ricci_identity_on_random_rank2_field() {
        let n = 48;
        let (g, _) = spd_field(n, 0.06, 9);
        let s_field = {
            let coeffs = {
                let mut rng = sampling::rng(31, Stream::Tensors);
                sampling::FourierTensorField::sample(1, 2, 1.0, &mut rng)
            };
            GridField::from_fn(1, n, 2, |x| coeffs.eval(x)).unwrap()
        };
        let res = ricci_identity_residual(&s_field, &g).unwrap();
        assert!(res < 1e-8, "commutator-vs-curvature residual {res}");
    }

    #[test]
    fn central4_curvature_converges_at_order_near_4() {
        let rm_err = |n: usize| {
            let a = 0.2;
            let g = GridField::from_fn(1, n, 2, |x| {
                MultiTensor::identity2().scale((2.0 * a * x[0].cos()).exp())
            })
            .unwrap()
            .with_scheme(DiffScheme::Central4);
            let c = curvature(&g).unwrap();
            // compare scalar curvature against the spectral route at n
            let g_sp = g.clone().with_scheme(DiffScheme::Spectral);
            let c_sp = curvature(&g_sp).unwrap();
            let mut w = 0.0_f64;
            for node in 0..n {
                w = w.max((c.scalar.node(node).data()[0] - c_sp.scalar.node(node).data()[0]).abs());
            }
            w
        };
        let (e1, e2) = (rm_err(32), rm_err(64));
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "observed order {order} (e {e1} -> {e2})");
    }
}
