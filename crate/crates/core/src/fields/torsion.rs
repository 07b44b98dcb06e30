//! Torsion of a grid-sampled Spin(7)-structure and the differential
//! identities tying it to curvature.
//!
//! The torsion is extracted from the covariant derivative of the 4-form,
//!   T_{m;ab} = (1/96) (nabla_m Phi_{ajkl}) Phi_{bjkl},
//! is antisymmetric and 7-piece valued in (a,b) for each m, and reconstructs
//! nabla_m Phi = T_m <> Phi.

use crate::algebra::{self, AdmissibleFourForm};
use crate::error::{Result, SpinError};
use crate::fields::calculus::{
    christoffels_with, covariant_derivative_with, curvature_with, CurvatureData,
};
use crate::fields::GridField;
use crate::par;
use crate::tensor::{contract, norm_sq, MetricTensor, MultiTensor, DIM};

/// Everything first-order attached to a 4-form field: induced metrics,
/// Christoffel symbols, nabla Phi and the torsion.
pub struct FieldGeometry {
    pub phi: GridField,
    pub metrics: Vec<MetricTensor>,
    pub g: GridField,
    pub gamma: GridField,
    pub nabla_phi: GridField,
    pub torsion: GridField,
}

impl FieldGeometry {
    pub fn form_at(&self, node: usize) -> AdmissibleFourForm {
        AdmissibleFourForm::from_components(self.phi.node(node).clone())
            .expect("geometry nodes are antisymmetric")
    }

    pub fn curvature(&self) -> Result<CurvatureData> {
        curvature_with(&self.g, &self.metrics)
    }

    /// Max-norm of the pointwise torsion over the grid, measured in the
    /// induced metric.
    pub fn torsion_max_norm(&self) -> f64 {
        let norms = par::map_indexed(self.torsion.node_count(), |i| {
            norm_sq(self.torsion.node(i), &self.metrics[i]).sqrt()
        });
        norms.into_iter().fold(0.0_f64, f64::max)
    }
}

/// Computes induced metrics, connection, nabla Phi and torsion of a rank-4
/// field of pointwise-admissible forms.
pub fn geometry(phi_field: &GridField) -> Result<FieldGeometry> {
    if phi_field.rank() != 4 {
        return Err(SpinError::RankMismatch {
            expected: 4,
            got: phi_field.rank(),
        });
    }
    let metrics: Vec<MetricTensor> = par::map_indexed(phi_field.node_count(), |i| {
        let form = AdmissibleFourForm::from_components(phi_field.node(i).clone())?;
        form.induced_metric()
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let g = phi_field.map(2, |node, _| metrics[node].tensor().clone());
    let gamma = christoffels_with(&g, &metrics)?;
    let nabla_phi = covariant_derivative_with(phi_field, &gamma)?;
    let torsion = phi_field.map(3, |node, phi_n| {
        torsion_at_node(nabla_phi.node(node), phi_n, &metrics[node])
    });
    Ok(FieldGeometry {
        phi: phi_field.clone(),
        metrics,
        g,
        gamma,
        nabla_phi,
        torsion,
    })
}

/// Torsion field of a 4-form field; errors when the reconstruction
/// nabla_m Phi = T_m <> Phi fails beyond `tol` (relative), signalling a
/// non-admissible or under-resolved field.
pub fn torsion(phi_field: &GridField, tol: f64) -> Result<GridField> {
    let geom = geometry(phi_field)?;
    let residual = reconstruction_residual(&geom);
    if residual > tol {
        return Err(SpinError::NotAdmissible {
            reason: "torsion reconstruction residual too large",
            residual,
        });
    }
    Ok(geom.torsion)
}

fn torsion_at_node(nabla_phi: &MultiTensor, phi: &MultiTensor, g: &MetricTensor) -> MultiTensor {
    // raise the three contracted slots of Phi once
    let mut phi_up = g.raise_slot(phi, 1);
    phi_up = g.raise_slot(&phi_up, 2);
    phi_up = g.raise_slot(&phi_up, 3);
    let mut t = MultiTensor::zeros(3);
    let out = t.data_mut();
    for m in 0..DIM {
        for a in 0..DIM {
            for b in 0..DIM {
                if a == b {
                    continue;
                }
                let mut acc = 0.0;
                for j in 0..DIM {
                    for k in 0..DIM {
                        for l in 0..DIM {
                            acc += nabla_phi.at5(m, a, j, k, l) * phi_up.at4(b, j, k, l);
                        }
                    }
                }
                out[(m * DIM + a) * DIM + b] = acc / 96.0;
            }
        }
    }
    t
}

/// Relative residual of nabla_m Phi = T_m <> Phi over the whole field,
/// normalized by |nabla Phi| (floored at 1e-6 |Phi| so parallel fields do
/// not divide by rounding noise).
pub fn reconstruction_residual(geom: &FieldGeometry) -> f64 {
    let scale = geom
        .nabla_phi
        .max_abs()
        .max(1e-6 * geom.phi.max_abs())
        .max(f64::MIN_POSITIVE);
    let worst = par::map_indexed(geom.phi.node_count(), |node| {
        let form = geom.form_at(node);
        let g = &geom.metrics[node];
        let np = geom.nabla_phi.node(node);
        let t = geom.torsion.node(node);
        let mut w = 0.0_f64;
        for m in 0..DIM {
            let tm = slice_m(t, m);
            let rec = algebra::diamond(&tm, &form, g);
            for (lin, r) in rec.data().iter().enumerate() {
                w = w.max((np.data()[m * rec.len() + lin] - r).abs());
            }
        }
        w
    });
    worst.into_iter().fold(0.0_f64, f64::max) / scale
}

/// 2-form slice T_{m; . .} of a rank-3 tensor.
pub(crate) fn slice_m(t: &MultiTensor, m: usize) -> MultiTensor {
    let mut out = MultiTensor::zeros(2);
    let block = DIM * DIM;
    out.data_mut()
        .copy_from_slice(&t.data()[m * block..(m + 1) * block]);
    out
}

/// Max relative deviation of each T_{m;..} slice from the 7-piece:
/// C(T_m) + 6 T_m must vanish.
pub fn lambda27_residual(t_field: &GridField, phi_field: &GridField) -> Result<f64> {
    let worst = par::map_indexed(t_field.node_count(), |node| {
        let form = AdmissibleFourForm::from_components(phi_field.node(node).clone())?;
        let g = form.induced_metric()?;
        let t = t_field.node(node);
        let scale = t.max_abs().max(1e-14);
        let mut w = 0.0_f64;
        for m in 0..DIM {
            let tm = slice_m(t, m);
            let mut c = algebra::phi_contraction_2form(&tm, &form, &g);
            c.add_scaled(&tm, 6.0);
            w = w.max(c.max_abs() / scale);
        }
        Ok::<f64, SpinError>(w)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0_f64, f64::max))
}

// ---------------------------------------------------------------------------
// Torsion components
// ---------------------------------------------------------------------------

/// Per-node torsion data with raised copies for the quadratic contractions.
/// Only contracted slots may be raised, so several partial raisings coexist.
pub(crate) struct NodeTorsion {
    pub t: MultiTensor,      // T_{m;ab}, all lower
    pub t_up: MultiTensor,   // all three slots raised
    pub t_up12: MultiTensor, // slots 1 and 2 raised, slot 0 lower
    pub t_up02: MultiTensor, // slots 0 and 2 raised, slot 1 lower
    pub t8: MultiTensor,     // (T8)_j = T_{i;ji}, lower
    pub t8_up: MultiTensor,
}

impl NodeTorsion {
    pub fn new(t: &MultiTensor, g: &MetricTensor) -> Self {
        let t_up12 = g.raise_slot(&g.raise_slot(t, 1), 2);
        let t_up02 = g.raise_slot(&g.raise_slot(t, 0), 2);
        let t_up = g.raise_slot(&t_up12, 0);
        // (T8)_j = g^{ii'} T_{i';ji}: raise one slot of the pair, then trace
        let one_up = g.raise_slot(t, 0);
        let mut t8 = MultiTensor::zeros(1);
        for j in 0..DIM {
            let mut acc = 0.0;
            for i in 0..DIM {
                acc += one_up.at3(i, j, i);
            }
            t8.data_mut()[j] = acc;
        }
        let t8_up = g.raise_slot(&t8, 0);
        NodeTorsion {
            t: t.clone(),
            t_up,
            t_up12,
            t_up02,
            t8,
            t8_up,
        }
    }

    /// (T*T)_{ij} = 8 T_{b;il} T_{j;lb} - 8 T_{j;il} T_{b;lb} + 2 T_{i;lb} T_{j;lb}
    pub fn t_star_t(&self) -> MultiTensor {
        let mut out = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                let mut term1 = 0.0;
                let mut term3 = 0.0;
                for b in 0..DIM {
                    for l in 0..DIM {
                        term1 += self.t.at3(b, i, l) * self.t_up12.at3(j, l, b);
                        term3 += self.t.at3(i, l, b) * self.t_up12.at3(j, l, b);
                    }
                }
                let mut term2 = 0.0;
                for l in 0..DIM {
                    term2 += self.t.at3(j, i, l) * self.t8_up.data()[l];
                }
                out.set(&[i, j], 8.0 * term1 - 8.0 * term2 + 2.0 * term3);
            }
        }
        out
    }

    /// |T|^2 in the metric used to build the raised copy.
    pub fn norm_sq(&self) -> f64 {
        self.t.dot(&self.t_up)
    }
}

/// Splits the torsion into its vector piece and the 48-dimensional
/// complement: T = T48 + iota(-T8/7), with rho(T48) = 0.
pub fn torsion_split(
    t_field: &GridField,
    phi_field: &GridField,
) -> Result<(GridField, GridField)> {
    let nodes = par::map_indexed(t_field.node_count(), |node| {
        let form = AdmissibleFourForm::from_components(phi_field.node(node).clone())?;
        let g = form.induced_metric()?;
        let nt = NodeTorsion::new(t_field.node(node), &g);
        let correction = iota(&nt.t8, &form, &g)?.scale(-1.0 / 7.0);
        let mut t48 = t_field.node(node).clone();
        t48.add_scaled(&correction, -1.0);
        Ok::<(MultiTensor, MultiTensor), SpinError>((nt.t8, t48))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (t8s, t48s): (Vec<_>, Vec<_>) = nodes.into_iter().unzip();
    let t8 = GridField::from_values(t_field.active_dims(), t_field.n(), t8s)?;
    let t48 = GridField::from_values(t_field.active_dims(), t_field.n(), t48s)?;
    Ok((t8, t48))
}

/// iota(X)_{ijk} = X_k g_{ij} - X_j g_{ik} + X_p Phi_{pijk}: embeds a vector
/// into the 7-piece-valued rank-3 tensors. rho(iota(X)) = -7 X.
pub fn iota(x: &MultiTensor, phi: &AdmissibleFourForm, g: &MetricTensor) -> Result<MultiTensor> {
    if x.rank() != 1 {
        return Err(SpinError::RankMismatch {
            expected: 1,
            got: x.rank(),
        });
    }
    let xphi = contract(x, phi.value(), &[(0, 0)], g)?;
    let gt = g.tensor();
    let mut out = MultiTensor::zeros(3);
    for i in 0..DIM {
        for j in 0..DIM {
            for k in 0..DIM {
                let v = x.data()[k] * gt.at2(i, j) - x.data()[j] * gt.at2(i, k) + xphi.at3(i, j, k);
                out.set(&[i, j, k], v);
            }
        }
    }
    Ok(out)
}

/// rho(gamma)_j = gamma_{i;ji}: the trace pairing a rank-3 tensor down to a
/// vector.
pub fn rho(gamma: &MultiTensor, g: &MetricTensor) -> Result<MultiTensor> {
    if gamma.rank() != 3 {
        return Err(SpinError::RankMismatch {
            expected: 3,
            got: gamma.rank(),
        });
    }
    let up = g.raise_slot(gamma, 0);
    let mut out = MultiTensor::zeros(1);
    for j in 0..DIM {
        let mut acc = 0.0;
        for i in 0..DIM {
            acc += up.at3(i, j, i);
        }
        out.data_mut()[j] = acc;
    }
    Ok(out)
}

/// Divergence of the torsion: (Div T)_{jk} = nabla_m T_{m;jk}; 7-piece
/// valued and antisymmetric.
pub fn div_torsion(t_field: &GridField, geom: &FieldGeometry) -> Result<GridField> {
    let nabla_t = covariant_derivative_with(t_field, &geom.gamma)?; // [m', m, j, k]
    Ok(t_field.map(2, |node, _| {
        let nt = nabla_t.node(node);
        let ginv = geom.metrics[node].inverse();
        let mut out = MultiTensor::zeros(2);
        for j in 0..DIM {
            for k in 0..DIM {
                let mut acc = 0.0;
                for m in 0..DIM {
                    for mp in 0..DIM {
                        let w = ginv.at2(m, mp);
                        if w != 0.0 {
                            acc += w * nt.at4(mp, m, j, k);
                        }
                    }
                }
                out.set(&[j, k], acc);
            }
        }
        out
    }))
}

// ---------------------------------------------------------------------------
// Differential identity reports
// ---------------------------------------------------------------------------

/// Residuals of the derivative-level contraction identities and of the
/// 7-piece membership of nabla Phi.
#[derive(Clone, Debug, serde::Serialize)]
pub struct NablaPhiReport {
    /// (nabla_m Phi_{ijkl}) Phi_{ijkl} = 0
    pub full_contraction: f64,
    /// (nabla_m Phi_{ijkl}) Phi_{ajkl} antisymmetric in (i,a)
    pub triple_contraction: f64,
    /// (nabla_m Phi_{ijkl}) Phi_{abkl} = -Phi_{ijkl} (nabla_m Phi_{abkl}) - 4 nabla_m Phi_{ijab}
    pub quad_contraction: f64,
    /// 1-, 27- and 35-pieces of nabla_m Phi vanish for every direction
    pub omega47_membership: f64,
}

impl NablaPhiReport {
    pub fn max_residual(&self) -> f64 {
        self.full_contraction
            .max(self.triple_contraction)
            .max(self.quad_contraction)
            .max(self.omega47_membership)
    }
}

pub fn nabla_phi_report(geom: &FieldGeometry) -> Result<NablaPhiReport> {
    let scale = geom.nabla_phi.max_abs().max(1e-14);
    let per_node = par::map_indexed(geom.phi.node_count(), |node| {
        let form = geom.form_at(node);
        let g = &geom.metrics[node];
        let phi = geom.phi.node(node);
        let np = geom.nabla_phi.node(node);
        let mut full = 0.0_f64;
        let mut triple = 0.0_f64;
        let mut quad = 0.0_f64;
        let mut membership = 0.0_f64;
        for m in 0..DIM {
            let npm = slice4_m(np, m);
            // full contraction
            let c0 = contract(&npm, phi, &[(0, 0), (1, 1), (2, 2), (3, 3)], g)?;
            full = full.max(c0.data()[0].abs());
            // triple contraction: antisymmetric part of the (i,a) matrix
            let c1 = contract(&npm, phi, &[(1, 1), (2, 2), (3, 3)], g)?;
            for i in 0..DIM {
                for a in 0..DIM {
                    triple = triple.max((c1.at2(i, a) + c1.at2(a, i)).abs());
                }
            }
            // quadratic identity
            let c2 = contract(&npm, phi, &[(2, 2), (3, 3)], g)?;
            let c2t = contract(phi, &npm, &[(2, 2), (3, 3)], g)?;
            for i in 0..DIM {
                for j in 0..DIM {
                    for a in 0..DIM {
                        for b in 0..DIM {
                            let lhs = c2.at4(i, j, a, b);
                            let rhs = -c2t.at4(i, j, a, b) - 4.0 * npm.at4(i, j, a, b);
                            quad = quad.max((lhs - rhs).abs());
                        }
                    }
                }
            }
            // membership in the image of the 7-piece under diamond
            if npm.max_abs() > 0.0 {
                let split = algebra::decompose_4form(&npm, &form, g)?;
                membership = membership
                    .max(split.s1.max_abs())
                    .max(split.s27.max_abs())
                    .max(split.s35.max_abs());
            }
        }
        Ok::<[f64; 4], SpinError>([full, triple, quad, membership])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let fold = |k: usize| {
        per_node
            .iter()
            .map(|r| r[k])
            .fold(0.0_f64, f64::max)
            / scale
    };
    Ok(NablaPhiReport {
        full_contraction: fold(0),
        triple_contraction: fold(1),
        quad_contraction: fold(2),
        omega47_membership: fold(3),
    })
}

fn slice4_m(t5: &MultiTensor, m: usize) -> MultiTensor {
    let block = crate::algebra::component_count(4);
    let mut out = MultiTensor::zeros(4);
    out.data_mut()
        .copy_from_slice(&t5.data()[m * block..(m + 1) * block]);
    out
}

/// Residuals of the structure Bianchi identity
///   nabla_i T_{j;ab} - nabla_j T_{i;ab}
///     = 2 T_{i;am} T_{j;mb} - 2 T_{j;am} T_{i;mb}
///       + R_{jiab}/4 - R_{jimn} Phi_{mnab}/8,
/// and of R_{ijkl} Phi_{ajkl} = 0, both relative to scale.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BianchiReport {
    pub bianchi: f64,
    pub rm_phi: f64,
}

pub fn bianchi_report(geom: &FieldGeometry, curv: &CurvatureData) -> Result<BianchiReport> {
    let nabla_t = covariant_derivative_with(&geom.torsion, &geom.gamma)?;
    let scale_b = nabla_t
        .max_abs()
        .max(curv.rm.max_abs())
        .max(f64::MIN_POSITIVE);
    let scale_rp = curv.rm.max_abs().max(f64::MIN_POSITIVE) * 42.0;
    let per_node = par::map_indexed(geom.phi.node_count(), |node| {
        let g = &geom.metrics[node];
        let nt = nabla_t.node(node);
        let rm = curv.rm.node(node);
        let phi = geom.phi.node(node);
        let tor = NodeTorsion::new(geom.torsion.node(node), g);
        let t_up1 = g.raise_slot(&tor.t, 1); // contraction slot only
        // Phi with the contracted pairs raised: slots (0,1) for the Bianchi
        // term, slots (1,2,3) for the Rm-Phi contraction
        let phi_up2 = g.raise_slot(&g.raise_slot(phi, 0), 1);
        let phi_up3 = {
            let a = g.raise_slot(phi, 1);
            let b = g.raise_slot(&a, 2);
            g.raise_slot(&b, 3)
        };
        let mut worst_b = 0.0_f64;
        for i in 0..DIM {
            for j in 0..DIM {
                for a in 0..DIM {
                    for b in 0..DIM {
                        let lhs = nt.at4(i, j, a, b) - nt.at4(j, i, a, b);
                        let mut tt = 0.0;
                        for m in 0..DIM {
                            tt += tor.t.at3(i, a, m) * t_up1.at3(j, m, b)
                                - tor.t.at3(j, a, m) * t_up1.at3(i, m, b);
                        }
                        let mut rphi = 0.0;
                        for m in 0..DIM {
                            for n in 0..DIM {
                                rphi += rm.at4(j, i, m, n) * phi_up2.at4(m, n, a, b);
                            }
                        }
                        let rhs = 2.0 * tt + 0.25 * rm.at4(j, i, a, b) - 0.125 * rphi;
                        worst_b = worst_b.max((lhs - rhs).abs());
                    }
                }
            }
        }
        let mut worst_rp = 0.0_f64;
        for i in 0..DIM {
            for a in 0..DIM {
                let mut acc = 0.0;
                for j in 0..DIM {
                    for k in 0..DIM {
                        for l in 0..DIM {
                            acc += rm.at4(i, j, k, l) * phi_up3.at4(a, j, k, l);
                        }
                    }
                }
                worst_rp = worst_rp.max(acc.abs());
            }
        }
        [worst_b, worst_rp]
    });
    let b = per_node.iter().map(|r| r[0]).fold(0.0_f64, f64::max) / scale_b;
    let rp = per_node.iter().map(|r| r[1]).fold(0.0_f64, f64::max) / scale_rp;
    Ok(BianchiReport {
        bianchi: b,
        rm_phi: rp,
    })
}

/// Ricci curvature from torsion:
/// R_{ij} = 4 nabla_i T_{a;ja} - 4 nabla_a T_{i;ja}
///          - 8 T_{i;jb} T_{a;ba} + 8 T_{a;jb} T_{i;ba}.
pub fn ricci_via_torsion(geom: &FieldGeometry) -> Result<GridField> {
    let nabla_t = covariant_derivative_with(&geom.torsion, &geom.gamma)?;
    Ok(geom.torsion.map(2, |node, t_n| {
        let g = &geom.metrics[node];
        let ginv = g.inverse();
        let nt = nabla_t.node(node);
        let tor = NodeTorsion::new(t_n, g);
        let mut out = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                let mut d1 = 0.0; // nabla_i T_{a;ja} with (a,a') raised
                let mut d2 = 0.0; // nabla_a T_{i;ja}
                for a in 0..DIM {
                    for ap in 0..DIM {
                        let w = ginv.at2(a, ap);
                        if w != 0.0 {
                            d1 += w * nt.at4(i, a, j, ap);
                            d2 += w * nt.at4(ap, i, j, a);
                        }
                    }
                }
                let mut q1 = 0.0; // T_{i;jb} (T8)^b
                for b in 0..DIM {
                    q1 += tor.t.at3(i, j, b) * tor.t8_up.data()[b];
                }
                let mut q2 = 0.0; // T_{a;jb} T_{i;ba}
                for a in 0..DIM {
                    for b in 0..DIM {
                        q2 += tor.t.at3(i, b, a) * tor.t_up02.at3(a, j, b);
                    }
                }
                out.set(&[i, j], 4.0 * d1 - 4.0 * d2 - 8.0 * q1 + 8.0 * q2);
            }
        }
        out
    }))
}

/// Scalar curvature from torsion:
/// R = 8 Div T8 + 8 |T8|^2 + 8 T_{a;jb} T_{j;ba}.
pub fn scalar_via_torsion(geom: &FieldGeometry) -> Result<GridField> {
    let (t8, _) = torsion_split(&geom.torsion, &geom.phi)?;
    let nabla_t8 = covariant_derivative_with(&t8, &geom.gamma)?;
    Ok(geom.torsion.map(0, |node, t_n| {
        let g = &geom.metrics[node];
        let ginv = g.inverse();
        let tor = NodeTorsion::new(t_n, g);
        let nt8 = nabla_t8.node(node);
        let mut div_t8 = 0.0;
        for m in 0..DIM {
            for mp in 0..DIM {
                div_t8 += ginv.at2(m, mp) * nt8.at2(mp, m);
            }
        }
        let t8_norm = tor.t8.dot(&tor.t8_up);
        let mut q = 0.0;
        for a in 0..DIM {
            for j in 0..DIM {
                for b in 0..DIM {
                    q += tor.t.at3(a, j, b) * tor.t_up.at3(j, b, a);
                }
            }
        }
        MultiTensor::scalar(8.0 * div_t8 + 8.0 * t8_norm + 8.0 * q)
    }))
}

// ---------------------------------------------------------------------------
// Lie derivatives
// ---------------------------------------------------------------------------

/// Coordinate (Cartan) Lie derivative of a form field along W:
/// (L_W a)_{i...} = W^p d_p a_{i...} + sum_s (d_{i_s} W^p) a_{..p..}.
pub fn lie_derivative_form(w: &GridField, form: &GridField) -> Result<GridField> {
    if w.rank() != 1 {
        return Err(SpinError::RankMismatch {
            expected: 1,
            got: w.rank(),
        });
    }
    let d_form = form.partial_derivative()?;
    let dw = w.partial_derivative()?; // dw[m, p] = d_m W^p
    let r = form.rank();
    Ok(form.map(r, |node, f_n| {
        let mut out = MultiTensor::zeros(r);
        let wn = w.node(node);
        let df = d_form.node(node);
        let block = f_n.len();
        // transport term W^p d_p a
        for p in 0..DIM {
            let wp = wn.data()[p];
            if wp != 0.0 {
                for lin in 0..block {
                    out.data_mut()[lin] += wp * df.data()[p * block + lin];
                }
            }
        }
        // slot terms (d W) acting like a non-raised four-slot action
        let dwn = dw.node(node);
        let stride = |slot: usize| DIM.pow((r - 1 - slot) as u32);
        for s in 0..r {
            let st = stride(s);
            for lin in 0..block {
                let digit = (lin / st) % DIM;
                let base = lin - digit * st;
                let mut acc = 0.0;
                for p in 0..DIM {
                    acc += dwn.at2(digit, p) * f_n.data()[base + p * st];
                }
                out.data_mut()[lin] += acc;
            }
        }
        out
    }))
}

/// (L_W g)_{ij} = nabla_i W_j + nabla_j W_i with the lowered vector field.
pub fn lie_derivative_metric(w: &GridField, geom: &FieldGeometry) -> Result<GridField> {
    let w_flat = w.map(1, |node, wn| {
        let gt = geom.metrics[node].tensor();
        let mut out = MultiTensor::zeros(1);
        for j in 0..DIM {
            let mut acc = 0.0;
            for p in 0..DIM {
                acc += gt.at2(j, p) * wn.data()[p];
            }
            out.data_mut()[j] = acc;
        }
        out
    });
    let nabla_w = covariant_derivative_with(&w_flat, &geom.gamma)?;
    Ok(nabla_w.map(2, |_, nw| {
        let mut out = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                out.set(&[i, j], nw.at2(i, j) + nw.at2(j, i));
            }
        }
        out
    }))
}

/// The diamond route for the Lie derivative of the structure:
/// L_W Phi = (L_W g / 2 + T(W) + (nabla W)_7) <> Phi.
pub fn lie_derivative_structure_diamond(w: &GridField, geom: &FieldGeometry) -> Result<GridField> {
    let lwg = lie_derivative_metric(w, geom)?;
    let w_flat = w.map(1, |node, wn| {
        let gt = geom.metrics[node].tensor();
        let mut out = MultiTensor::zeros(1);
        for j in 0..DIM {
            let mut acc = 0.0;
            for p in 0..DIM {
                acc += gt.at2(j, p) * wn.data()[p];
            }
            out.data_mut()[j] = acc;
        }
        out
    });
    let nabla_w = covariant_derivative_with(&w_flat, &geom.gamma)?;
    Ok(geom.phi.map(4, |node, _| {
        let form = geom.form_at(node);
        let g = &geom.metrics[node];
        // T(W)_{ab} = W^m T_{m;ab}
        let wn = w.node(node);
        let t = geom.torsion.node(node);
        let mut tw = MultiTensor::zeros(2);
        for m in 0..DIM {
            let wm = wn.data()[m];
            if wm != 0.0 {
                for a in 0..DIM {
                    for b in 0..DIM {
                        let v = wm * t.at3(m, a, b);
                        out_add(&mut tw, a, b, v);
                    }
                }
            }
        }
        let (nw7, _) = crate::algebra::project_2form(&nabla_w.node(node).skew2(), &form, g)
            .expect("skew part is antisymmetric");
        let mut a = lwg.node(node).scale(0.5);
        a.add_scaled(&tw, 1.0);
        a.add_scaled(&nw7, 1.0);
        algebra::diamond(&a, &form, g)
    }))
}

#[inline]
fn out_add(t: &mut MultiTensor, a: usize, b: usize, v: f64) {
    t.data_mut()[a * DIM + b] += v;
}

/// Fernandez criterion data: the structure is torsion free iff the 4-form is
/// closed. Reports max pointwise |T|_g and max |dPhi|.
#[derive(Clone, Debug, serde::Serialize)]
pub struct FernandezReport {
    pub torsion_max: f64,
    pub dphi_max: f64,
}

pub fn fernandez_report(phi_field: &GridField) -> Result<FernandezReport> {
    let geom = geometry(phi_field)?;
    let dphi = phi_field.exterior_derivative()?;
    Ok(FernandezReport {
        torsion_max: geom.torsion_max_norm(),
        dphi_max: dphi.max_abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::samples;
    use crate::sampling::{self, Stream};

    fn perturbed(n: usize, eps: f64) -> GridField {
        samples::perturbed_field(1, n, samples::Perturbation { modes: 2, eps }, 11).unwrap()
    }

    #[test]
    fn torsion_of_flat_field_vanishes() {
        let field = samples::flat_field(1, 8).unwrap();
        let t = torsion(&field, 1e-8).unwrap();
        assert!(t.max_abs() < 1e-14);
    }

    #[test]
    fn torsion_of_transported_constant_field_vanishes() {
        let field = samples::transported_constant_field(1, 8, 0.3, 5).unwrap();
        let t = torsion(&field, 1e-8).unwrap();
        assert!(t.max_abs() < 1e-12, "max |T| = {}", t.max_abs());
    }

    #[test]
    fn torsion_reconstruction_and_membership_on_perturbed_field() {
        let field = perturbed(32, 1e-2);
        let geom = geometry(&field).unwrap();
        assert!(geom.torsion.max_abs() > 1e-4, "perturbed field has torsion");
        let rec = reconstruction_residual(&geom);
        assert!(rec < 1e-8, "reconstruction residual {rec}");
        let mem = lambda27_residual(&geom.torsion, &field).unwrap();
        assert!(mem < 1e-9, "7-piece membership residual {mem}");
    }

    #[test]
    fn nabla_phi_identities_on_perturbed_field() {
        let field = perturbed(32, 1e-2);
        let geom = geometry(&field).unwrap();
        let report = nabla_phi_report(&geom).unwrap();
        assert!(
            report.max_residual() < 1e-9,
            "nabla Phi identities: {report:?}"
        );
    }

    #[test]
    fn split_maps_satisfy_normalization_identities() {
        let phi = algebra::standard_cayley_form();
        let g = MetricTensor::euclidean();
        let mut rng = sampling::rng(23, Stream::Tensors);
        // rho(iota(X)) = -7 X
        let x = sampling::random_tensor(1, 1.0, &mut rng);
        let ix = iota(&x, phi, &g).unwrap();
        let rix = rho(&ix, &g).unwrap();
        let mut d = rix.clone();
        d.add_scaled(&x, 7.0);
        assert!(d.max_abs() < 1e-12, "rho iota residual {}", d.max_abs());

        // <gamma, iota X> = -8 X_j gamma_{i;ji} on 7-piece-valued gamma
        let raw = sampling::random_tensor(3, 1.0, &mut rng);
        let mut gamma = MultiTensor::zeros(3);
        for m in 0..DIM {
            let slice = slice_m(&raw, m);
            let (b7, _) = algebra::project_2form(&slice.skew2(), phi, &g).unwrap();
            for a in 0..DIM {
                for b in 0..DIM {
                    gamma.set(&[m, a, b], b7.at2(a, b));
                }
            }
        }
        let lhs = gamma.dot(&ix);
        let rg = rho(&gamma, &g).unwrap();
        let rhs = -8.0 * x.dot(&rg);
        assert!(
            (lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0),
            "pairing {lhs} vs {rhs}"
        );
    }

    #[test]
    fn torsion_split_has_traceless_remainder() {
        let field = perturbed(16, 1e-2);
        let geom = geometry(&field).unwrap();
        let (t8, t48) = torsion_split(&geom.torsion, &field).unwrap();
        assert!(t8.max_abs() > 0.0);
        let scale = geom.torsion.max_abs();
        for node in 0..field.node_count() {
            let r = rho(t48.node(node), &geom.metrics[node]).unwrap();
            assert!(r.max_abs() / scale < 1e-10, "rho(T48) = {}", r.max_abs());
            // reassembly
            let mut t = t48.node(node).clone();
            let corr = iota(t8.node(node), &geom.form_at(node), &geom.metrics[node])
                .unwrap()
                .scale(-1.0 / 7.0);
            t.add_scaled(&corr, 1.0);
            assert!((&t - geom.torsion.node(node)).max_abs() / scale < 1e-12);
        }
        let (z8, z48) = torsion_split(
            &GridField::constant(1, 16, MultiTensor::zeros(3)).unwrap(),
            &samples::flat_field(1, 16).unwrap(),
        )
        .unwrap();
        assert_eq!(z8.max_abs(), 0.0);
        assert_eq!(z48.max_abs(), 0.0);
    }

    #[test]
    fn div_torsion_is_lambda27_valued() {
        let field = perturbed(32, 1e-2);
        let geom = geometry(&field).unwrap();
        let div = div_torsion(&geom.torsion, &geom).unwrap();
        assert!(div.max_abs() > 0.0);
        let scale = div.max_abs();
        let mut worst = 0.0_f64;
        for node in 0..field.node_count() {
            let form = geom.form_at(node);
            let d = div.node(node);
            // antisymmetric
            worst = worst.max((&d.sym2()).max_abs() / scale);
            let mut c = algebra::phi_contraction_2form(d, &form, &geom.metrics[node]);
            c.add_scaled(d, 6.0);
            worst = worst.max(c.max_abs() / scale);
        }
        assert!(worst < 1e-8, "7-piece residual of Div T: {worst}");

        let flat = samples::flat_field(1, 8).unwrap();
        let flat_geom = geometry(&flat).unwrap();
        let z = div_torsion(&flat_geom.torsion, &flat_geom).unwrap();
        assert!(z.max_abs() < 1e-14);
    }

    #[test]
    fn bianchi_identity_on_perturbed_field() {
        let field = perturbed(32, 1e-2);
        let geom = geometry(&field).unwrap();
        let curv = geom.curvature().unwrap();
        let report = bianchi_report(&geom, &curv).unwrap();
        assert!(report.bianchi < 1e-6, "Bianchi residual {}", report.bianchi);
        assert!(report.rm_phi < 1e-8, "Rm-Phi residual {}", report.rm_phi);

        // negative control: curvature of a different field
        let other = samples::perturbed_field(1, 32, samples::Perturbation { modes: 2, eps: 5e-2 }, 99)
            .unwrap();
        let other_geom = geometry(&other).unwrap();
        let other_curv = other_geom.curvature().unwrap();
        let bad = bianchi_report(&geom, &other_curv).unwrap();
        assert!(
            bad.bianchi > 100.0 * report.bianchi,
            "mismatched inputs must fail loudly: {} vs {}",
            bad.bianchi,
            report.bianchi
        );
    }

    #[test]
    fn bianchi_residual_vanishes_on_flat_field() {
        let flat = samples::flat_field(1, 8).unwrap();
        let geom = geometry(&flat).unwrap();
        let curv = geom.curvature().unwrap();
        let report = bianchi_report(&geom, &curv).unwrap();
        assert!(report.bianchi < 1e-12);
        assert!(report.rm_phi < 1e-12);
    }

    #[test]
    fn ricci_and_scalar_from_torsion_match_curvature() {
        let field = perturbed(32, 1e-2);
        let geom = geometry(&field).unwrap();
        let curv = geom.curvature().unwrap();
        let rvt = ricci_via_torsion(&geom).unwrap();
        let ric_scale = curv.ric.max_abs();
        assert!(ric_scale > 1e-6);
        let mut worst = 0.0_f64;
        for node in 0..field.node_count() {
            worst = worst.max((rvt.node(node) - curv.ric.node(node)).max_abs());
        }
        assert!(worst / ric_scale < 1e-4, "Ricci cross-check {}", worst / ric_scale);

        let svt = scalar_via_torsion(&geom).unwrap();
        let s_scale = curv.scalar.max_abs().max(1e-10);
        let mut worst_s = 0.0_f64;
        for node in 0..field.node_count() {
            worst_s =
                worst_s.max((svt.node(node).data()[0] - curv.scalar.node(node).data()[0]).abs());
        }
        assert!(worst_s / s_scale < 1e-4, "scalar cross-check {}", worst_s / s_scale);
    }

    #[test]
    fn torsion_free_fields_are_ricci_flat() {
        let field = samples::transported_constant_field(1, 8, 0.3, 17);
        let geom = geometry(&field.unwrap()).unwrap();
        let curv = geom.curvature().unwrap();
        assert!(curv.ric.max_abs() < 1e-10);
        let rvt = ricci_via_torsion(&geom).unwrap();
        assert!(rvt.max_abs() < 1e-10);
    }

    #[test]
    fn fernandez_equivalence_on_test_fields() {
        // torsion-free: both vanish
        let flat = samples::transported_constant_field(1, 16, 0.25, 31).unwrap();
        let r = fernandez_report(&flat).unwrap();
        assert!(r.torsion_max < 1e-8 && r.dphi_max < 1e-8, "{r:?}");
        // perturbed: both nonzero
        let r2 = fernandez_report(&perturbed(16, 1e-2)).unwrap();
        assert!(r2.torsion_max > 1e-5 && r2.dphi_max > 1e-5, "{r2:?}");
    }

    #[test]
    fn lie_derivative_two_routes_agree() {
        let n = 32;
        let field = perturbed(n, 1e-2);
        let geom = geometry(&field).unwrap();
        let w = samples::vector_field(1, n, 2, 7).unwrap();
        let direct = lie_derivative_form(&w, &field).unwrap();
        let via_diamond = lie_derivative_structure_diamond(&w, &geom).unwrap();
        let scale = direct.max_abs();
        assert!(scale > 1e-4);
        let mut worst = 0.0_f64;
        for node in 0..field.node_count() {
            worst = worst.max((direct.node(node) - via_diamond.node(node)).max_abs());
        }
        assert!(worst / scale < 1e-7, "Lie routes differ by {}", worst / scale);
    }

    #[test]
    fn lie_derivative_trivial_cases() {
        let field = samples::flat_field(1, 8).unwrap();
        let geom = geometry(&field).unwrap();
        let zero_w = GridField::constant(1, 8, MultiTensor::zeros(1)).unwrap();
        assert_eq!(lie_derivative_form(&zero_w, &field).unwrap().max_abs(), 0.0);
        let mut c = MultiTensor::zeros(1);
        c.data_mut()[3] = 1.25;
        let const_w = GridField::constant(1, 8, c).unwrap();
        assert!(lie_derivative_form(&const_w, &field).unwrap().max_abs() < 1e-14);
        assert!(
            lie_derivative_structure_diamond(&const_w, &geom)
                .unwrap()
                .max_abs()
                < 1e-12
        );
    }
}
