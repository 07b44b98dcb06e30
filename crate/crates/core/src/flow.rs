//! Time evolution of the structure: the torsion energy and its first
//! variation, the negative gradient flow with explicit RK4 stepping, the
//! gauge-fixed right-hand side, scaling laws and soliton residuals.
//!
//! The flow is d Phi/dt = A <> Phi with
//!   A = -a Ric + b L_{T8} g + [T*T - |T|^2 g] + c Div T,
//! (T*T)_{ij} = 8 T_{b;il} T_{j;lb} - 8 T_{j;il} T_{b;lb} + 2 T_{i;lb} T_{j;lb},
//! and (a, b, c) = (1, 2, 2) for the gradient flow of E = 1/2 int |T|^2 vol.
//! The metric is recomputed from Phi each evaluation; the evolved-metric
//! display is kept as a cross-check only.

use crate::algebra::{self, AdmissibleFourForm};
use crate::error::{Result, SpinError};
use crate::fields::calculus::{covariant_derivative_with, CurvatureData};
use crate::fields::torsion::{div_torsion, geometry, FieldGeometry, NodeTorsion};
use crate::fields::GridField;
use crate::par;
use crate::tensor::{contract, inner, norm_sq, MultiTensor, DIM};

/// Flow parameters. Defaults give the gradient flow with all lower-order
/// terms; `deturck` switches the right-hand side to the gauge-fixed
/// operator against a background structure.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub coeff_c: f64,
    pub dt: f64,
    pub steps: usize,
    pub deturck: bool,
    pub include_lot: bool,
    pub drift_threshold: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            coeff_a: 1.0,
            coeff_b: 2.0,
            coeff_c: 2.0,
            dt: 1e-4,
            steps: 100,
            deturck: false,
            include_lot: true,
            drift_threshold: 1e-5,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(SpinError::InvalidArgument("dt must be positive".into()));
        }
        if !(self.drift_threshold > 0.0) {
            return Err(SpinError::InvalidArgument(
                "drift_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deformation field: symmetric part and 7-piece 2-form part per node.
#[derive(Clone, Debug)]
pub struct DeformationField {
    pub h: GridField,
    pub x: GridField,
}

impl DeformationField {
    pub fn zero_like(phi_field: &GridField) -> Self {
        let z = |_: usize, _: &MultiTensor| MultiTensor::zeros(2);
        DeformationField {
            h: phi_field.map(2, z),
            x: phi_field.map(2, z),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.h.max_abs().max(self.x.max_abs())
    }

    /// (h + X) <> Phi per node.
    pub fn diamond(&self, geom: &FieldGeometry) -> GridField {
        geom.phi.map(4, |node, _| {
            let form = geom.form_at(node);
            let mut a = self.h.node(node).clone();
            a.add_scaled(self.x.node(node), 1.0);
            algebra::diamond(&a, &form, &geom.metrics[node])
        })
    }
}

// ---------------------------------------------------------------------------
// Energy
// ---------------------------------------------------------------------------

/// Energy data: E = 1/2 int |T|^2 vol, the pointwise |T|^2 and the volume.
pub struct EnergyReport {
    pub e: f64,
    pub torsion_norm_sq: GridField,
    pub volume: f64,
}

pub fn energy(phi_field: &GridField) -> Result<EnergyReport> {
    let geom = geometry(phi_field)?;
    Ok(energy_from_geometry(&geom))
}

pub fn energy_from_geometry(geom: &FieldGeometry) -> EnergyReport {
    let tn = geom.torsion.map(0, |node, t| {
        MultiTensor::scalar(norm_sq(t, &geom.metrics[node]))
    });
    let e = 0.5
        * tn.integrate(|node, t| t.data()[0] * geom.metrics[node].sqrt_det());
    let volume = tn.integrate(|node, _| geom.metrics[node].sqrt_det());
    EnergyReport {
        e,
        torsion_norm_sq: tn,
        volume,
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

/// The torsion vector as a (contravariant) field.
fn t8_vector_field(geom: &FieldGeometry) -> GridField {
    geom.torsion.map(1, |node, t| {
        let nt = NodeTorsion::new(t, &geom.metrics[node]);
        nt.t8_up
    })
}

/// Deformation A with d Phi/dt = A <> Phi for the flow family
/// (-a Ric + b L_{T8} g + [T*T - |T|^2 g] + c Div T); the symmetric part
/// carries the curvature terms, the 7-piece part the torsion divergence.
pub fn gradient_rhs(geom: &FieldGeometry, curv: &CurvatureData, cfg: &FlowConfig) -> Result<DeformationField> {
    let t8 = t8_vector_field(geom);
    let lie_t8 = crate::fields::torsion::lie_derivative_metric(&t8, geom)?;
    let div_t = div_torsion(&geom.torsion, geom)?;
    let full = geom.phi.map(2, |node, _| {
        let g = &geom.metrics[node];
        let mut a = curv.ric.node(node).scale(-cfg.coeff_a);
        a.add_scaled(lie_t8.node(node), cfg.coeff_b);
        a.add_scaled(div_t.node(node), cfg.coeff_c);
        if cfg.include_lot {
            let nt = NodeTorsion::new(geom.torsion.node(node), g);
            a.add_scaled(&nt.t_star_t(), 1.0);
            a.add_scaled(g.tensor(), -nt.norm_sq());
        }
        a
    });
    split_full(&full, geom)
}

fn split_full(full: &GridField, geom: &FieldGeometry) -> Result<DeformationField> {
    let h = full.map(2, |_, a| a.sym2());
    let x = full.map(2, |node, a| {
        let form = geom.form_at(node);
        let (x7, _) = algebra::project_2form(&a.skew2(), &form, &geom.metrics[node])
            .expect("skew part is antisymmetric");
        x7
    });
    Ok(DeformationField { h, x })
}

/// Gauge-fixed right-hand side against a background structure:
/// A = -Ric + L_{W~} g / 2 + c Div T with the 7-piece correction
/// (nabla W~ - 4 nabla T8)_7, where W~^k = g^{ij} (Gamma - Gamma~)^k_{ij}.
/// Lower-order torsion-squared terms are not included.
pub fn deturck_rhs(
    phi_field: &GridField,
    background: &GridField,
    cfg: &FlowConfig,
) -> Result<DeformationField> {
    let geom = geometry(phi_field)?;
    let curv = geom.curvature()?;
    let bg_geom = geometry(background)?;
    // W~^k = g^{ij} (Gamma^k_{ij} - Gamma~^k_{ij})
    let w_field = geom.phi.map(1, |node, _| {
        let ginv = geom.metrics[node].inverse();
        let gm = geom.gamma.node(node);
        let gb = bg_geom.gamma.node(node);
        let mut w = MultiTensor::zeros(1);
        for k in 0..DIM {
            let mut acc = 0.0;
            for i in 0..DIM {
                for j in 0..DIM {
                    acc += ginv.at2(i, j) * (gm.at3(k, i, j) - gb.at3(k, i, j));
                }
            }
            w.data_mut()[k] = acc;
        }
        w
    });
    let lie_w = crate::fields::torsion::lie_derivative_metric(&w_field, &geom)?;
    let div_t = div_torsion(&geom.torsion, &geom)?;
    // skew 7-parts of nabla(W~) and nabla(T8)
    let nw7 = skew7_of_gradient(&w_field, &geom)?;
    let t8 = t8_vector_field(&geom);
    let nt87 = skew7_of_gradient(&t8, &geom)?;

    let h = geom.phi.map(2, |node, _| {
        let mut a = curv.ric.node(node).scale(-1.0);
        a.add_scaled(lie_w.node(node), 0.5);
        a
    });
    let x = geom.phi.map(2, |node, _| {
        let mut a = div_t.node(node).scale(cfg.coeff_c);
        a.add_scaled(nw7.node(node), 1.0);
        a.add_scaled(nt87.node(node), -4.0);
        a
    });
    Ok(DeformationField { h, x })
}

/// 7-piece of the antisymmetrized covariant gradient of a vector field.
fn skew7_of_gradient(w: &GridField, geom: &FieldGeometry) -> Result<GridField> {
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
    Ok(nabla_w.map(2, |node, nw| {
        let form = geom.form_at(node);
        let (x7, _) = algebra::project_2form(&nw.skew2(), &form, &geom.metrics[node])
            .expect("skew part");
        x7
    }))
}

/// Full evolution field d Phi/dt for the configured flow.
pub fn flow_rhs_field(
    phi_field: &GridField,
    cfg: &FlowConfig,
    background: Option<&GridField>,
) -> Result<GridField> {
    if cfg.deturck {
        let bg = background.ok_or_else(|| {
            SpinError::InvalidArgument("gauge-fixed flow needs a background field".into())
        })?;
        let geom = geometry(phi_field)?;
        let a = deturck_rhs(phi_field, bg, cfg)?;
        Ok(a.diamond(&geom))
    } else {
        let geom = geometry(phi_field)?;
        let curv = geom.curvature()?;
        let a = gradient_rhs(&geom, &curv, cfg)?;
        Ok(a.diamond(&geom))
    }
}

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

/// Light admissibility monitor: max relative residual of the quadratic,
/// triple and full contraction identities against the induced metric.
pub fn admissibility_drift(phi_field: &GridField) -> Result<f64> {
    let worst = par::map_indexed(phi_field.node_count(), |node| {
        let form = AdmissibleFourForm::from_components(phi_field.node(node).clone())?;
        let g = form.induced_metric()?;
        let p = form.value();
        let quad = contract(p, p, &[(2, 2), (3, 3)], &g)?;
        let triple = contract(p, p, &[(1, 1), (2, 2), (3, 3)], &g)?;
        let gt = g.tensor();
        let mut worst = 0.0_f64;
        for i in 0..DIM {
            for a in 0..DIM {
                let t = 42.0 * gt.at2(i, a);
                worst = worst.max((triple.at2(i, a) - t).abs() / 42.0);
                for j in 0..DIM {
                    for b in 0..DIM {
                        let rhs = 6.0 * gt.at2(i, a) * gt.at2(j, b)
                            - 6.0 * gt.at2(i, b) * gt.at2(j, a)
                            - 4.0 * p.at4(i, j, a, b);
                        worst = worst.max((quad.at4(i, j, a, b) - rhs).abs() / 6.0);
                    }
                }
            }
        }
        let full = (norm_sq(p, &g) - 336.0).abs() / 336.0;
        Ok::<f64, SpinError>(worst.max(full))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(worst.into_iter().fold(0.0_f64, f64::max))
}

/// Stability heuristic for the explicit integrator:
/// dt = C h^2 / max(1, max |Ric| + max |T|^2) with C = 0.1.
pub fn suggest_dt(phi_field: &GridField) -> Result<f64> {
    let geom = geometry(phi_field)?;
    let curv = geom.curvature()?;
    let t_max = geom.torsion_max_norm();
    let scale = (curv.ric.max_abs() + t_max * t_max).max(1.0);
    let h = phi_field.spacing();
    Ok(0.1 * h * h / scale)
}

/// One RK4 step of d Phi/dt = A(Phi) <> Phi. The accepted step re-verifies
/// the contraction-identity residuals and aborts past the drift threshold;
/// there is no projection back onto the orbit.
pub fn step(
    phi_field: &GridField,
    cfg: &FlowConfig,
    background: Option<&GridField>,
) -> Result<GridField> {
    cfg.validate()?;
    let dt = cfg.dt;
    let k1 = flow_rhs_field(phi_field, cfg, background)?;
    let mut p2 = phi_field.clone();
    p2.add_scaled(&k1, 0.5 * dt);
    let k2 = flow_rhs_field(&p2, cfg, background)?;
    let mut p3 = phi_field.clone();
    p3.add_scaled(&k2, 0.5 * dt);
    let k3 = flow_rhs_field(&p3, cfg, background)?;
    let mut p4 = phi_field.clone();
    p4.add_scaled(&k3, dt);
    let k4 = flow_rhs_field(&p4, cfg, background)?;
    let mut out = phi_field.clone();
    out.add_scaled(&k1, dt / 6.0);
    out.add_scaled(&k2, dt / 3.0);
    out.add_scaled(&k3, dt / 3.0);
    out.add_scaled(&k4, dt / 6.0);
    let drift = admissibility_drift(&out)?;
    if drift > cfg.drift_threshold {
        return Err(SpinError::DriftExceeded {
            residual: drift,
            threshold: cfg.drift_threshold,
            step: 0,
        });
    }
    Ok(out)
}

/// Per-step record emitted by `run_flow`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub torsion_max: f64,
    pub ric_max: f64,
    pub drift: f64,
    pub volume: f64,
}

#[derive(Debug)]
pub struct FlowTrace {
    pub records: Vec<StepRecord>,
    pub final_field: GridField,
}

/// Runs the configured number of steps, recording energy, torsion and drift
/// after every accepted step. With `deturck` the initial structure is the
/// background.
pub fn run_flow(phi0: &GridField, cfg: &FlowConfig) -> Result<FlowTrace> {
    cfg.validate()?;
    let background = if cfg.deturck { Some(phi0.clone()) } else { None };
    let mut field = phi0.clone();
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let record = |step: usize, field: &GridField| -> Result<StepRecord> {
        let geom = geometry(field)?;
        let curv = geom.curvature()?;
        let er = energy_from_geometry(&geom);
        Ok(StepRecord {
            step,
            t: step as f64 * cfg.dt,
            energy: er.e,
            torsion_max: geom.torsion_max_norm(),
            ric_max: curv.ric.max_abs(),
            drift: admissibility_drift(field)?,
            volume: er.volume,
        })
    };
    records.push(record(0, &field)?);
    for s in 1..=cfg.steps {
        field = step(&field, cfg, background.as_ref()).map_err(|e| match e {
            SpinError::DriftExceeded {
                residual,
                threshold,
                ..
            } => SpinError::DriftExceeded {
                residual,
                threshold,
                step: s,
            },
            other => other,
        })?;
        records.push(record(s, &field)?);
    }
    Ok(FlowTrace {
        records,
        final_field: field,
    })
}

// ---------------------------------------------------------------------------
// Cross-checks
// ---------------------------------------------------------------------------

/// Residual of the metric-evolution display over one step:
/// max |g(Phi_{t+dt}) - g(Phi_t) - dt (d_t g)| with d_t g = 2 h from the
/// right-hand side. Decays at second order in dt.
pub fn metric_evolution_residual(phi_field: &GridField, cfg: &FlowConfig) -> Result<f64> {
    let geom = geometry(phi_field)?;
    let curv = geom.curvature()?;
    let rhs = gradient_rhs(&geom, &curv, cfg)?;
    let next = step(phi_field, cfg, None)?;
    let next_geom = geometry(&next)?;
    let mut worst = 0.0_f64;
    for node in 0..phi_field.node_count() {
        let mut d = next_geom.g.node(node).clone();
        d.add_scaled(geom.g.node(node), -1.0);
        d.add_scaled(rhs.h.node(node), -2.0 * cfg.dt);
        worst = worst.max(d.max_abs());
    }
    Ok(worst)
}

/// Two-route volume-evolution check: compares the finite difference of the
/// total volume across one step with -int (4 Div T8 + 6 |T|^2) vol.
pub fn volume_evolution_residual(phi_field: &GridField, cfg: &FlowConfig) -> Result<f64> {
    let geom = geometry(phi_field)?;
    let er = energy_from_geometry(&geom);
    let t8 = t8_vector_field(&geom);
    let nabla_t8_flat = {
        let t8_flat = t8.map(1, |node, wn| {
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
        covariant_derivative_with(&t8_flat, &geom.gamma)?
    };
    let predicted = geom.phi.integrate(|node, _| {
        let ginv = geom.metrics[node].inverse();
        let nt8 = nabla_t8_flat.node(node);
        let mut div_t8 = 0.0;
        for m in 0..DIM {
            for mp in 0..DIM {
                div_t8 += ginv.at2(m, mp) * nt8.at2(mp, m);
            }
        }
        let tsq = er.torsion_norm_sq.node(node).data()[0];
        -(4.0 * div_t8 + 6.0 * tsq) * geom.metrics[node].sqrt_det()
    });
    let next = step(phi_field, cfg, None)?;
    let next_er = energy(&next)?;
    let fd = (next_er.volume - er.volume) / cfg.dt;
    Ok((fd - predicted).abs())
}

// ---------------------------------------------------------------------------
// First variation
// ---------------------------------------------------------------------------

pub struct VariationCheck {
    pub fd_derivative: f64,
    pub formula_value: f64,
    pub rel_error: f64,
}

/// Central-difference derivative of the energy along Phi + s (dir <> Phi),
/// Richardson-extrapolated over s and s/2, against the first-variation
/// integral
///   int <h, Ric/2 - L_{T8} g - 4 Q1 + 4 Q2 - Q3 + |T|^2 g / 2> vol
///   - int <X, Div T> vol,
/// with Q1 = T_{b;al} T_{m;lb}, Q2 = T_{m;al} T_{b;lb}, Q3 = T_{a;lb} T_{m;lb}.
pub fn variation_check(
    phi_field: &GridField,
    direction: &DeformationField,
    s: f64,
) -> Result<VariationCheck> {
    let geom = geometry(phi_field)?;
    let dphi = direction.diamond(&geom);

    let energy_at = |eps: f64| -> Result<f64> {
        let mut f = phi_field.clone();
        f.add_scaled(&dphi, eps);
        Ok(energy(&f)?.e)
    };
    let central = |eps: f64| -> Result<f64> {
        Ok((energy_at(eps)? - energy_at(-eps)?) / (2.0 * eps))
    };
    let d1 = central(s)?;
    let d2 = central(0.5 * s)?;
    let fd_derivative = (4.0 * d2 - d1) / 3.0;

    let curv = geom.curvature()?;
    let div_t = div_torsion(&geom.torsion, &geom)?;
    let t8 = t8_vector_field(&geom);
    let lie_t8 = crate::fields::torsion::lie_derivative_metric(&t8, &geom)?;
    let formula_value = geom.phi.integrate(|node, _| {
        let g = &geom.metrics[node];
        let nt = NodeTorsion::new(geom.torsion.node(node), g);
        let mut k = curv.ric.node(node).scale(0.5);
        k.add_scaled(lie_t8.node(node), -1.0);
        // quadratic torsion terms
        let mut q = MultiTensor::zeros(2);
        for a in 0..DIM {
            for m in 0..DIM {
                let mut q1 = 0.0;
                let mut q3 = 0.0;
                for b in 0..DIM {
                    for l in 0..DIM {
                        q1 += nt.t.at3(b, a, l) * nt.t_up12.at3(m, l, b);
                        q3 += nt.t.at3(a, l, b) * nt.t_up12.at3(m, l, b);
                    }
                }
                let mut q2 = 0.0;
                for l in 0..DIM {
                    q2 += nt.t.at3(m, a, l) * nt.t8_up.data()[l];
                }
                q.set(&[a, m], -4.0 * q1 + 4.0 * q2 - q3);
            }
        }
        k.add_scaled(&q, 1.0);
        k.add_scaled(g.tensor(), 0.5 * nt.norm_sq());
        let h_pairing = inner(direction.h.node(node), &k, g).expect("rank 2");
        let x_pairing = inner(direction.x.node(node), div_t.node(node), g).expect("rank 2");
        (h_pairing - x_pairing) * g.sqrt_det()
    });
    let scale = fd_derivative.abs().max(formula_value.abs()).max(1e-14);
    Ok(VariationCheck {
        fd_derivative,
        formula_value,
        rel_error: (fd_derivative - formula_value).abs() / scale,
    })
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

/// Phi -> c^4 Phi.
pub fn rescale(phi_field: &GridField, c: f64) -> Result<GridField> {
    if !(c > 0.0) {
        return Err(SpinError::InvalidArgument(
            "scaling factor must be positive".into(),
        ));
    }
    Ok(phi_field.scale(c.powi(4)))
}

/// Verifies the scaling laws under Phi -> c^4 Phi: the metric scales by c^2,
/// the torsion by c^2 pointwise, the energy by c^6, and the scale-invariant
/// norms |nabla^j T| by c^{-(1+j)} for j = 0, 1. Returns max relative errors.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ScalingReport {
    pub metric_ratio: f64,
    pub torsion_pointwise: f64,
    pub energy_ratio: f64,
    pub torsion_norm_j0: f64,
    pub nabla_torsion_norm_j1: f64,
}

impl ScalingReport {
    pub fn max_error(&self) -> f64 {
        self.metric_ratio
            .max(self.torsion_pointwise)
            .max(self.energy_ratio)
            .max(self.torsion_norm_j0)
            .max(self.nabla_torsion_norm_j1)
    }
}

pub fn scaling_report(phi_field: &GridField, c: f64) -> Result<ScalingReport> {
    let scaled = rescale(phi_field, c)?;
    let geom = geometry(phi_field)?;
    let sgeom = geometry(&scaled)?;
    let c2 = c * c;

    let mut metric_ratio = 0.0_f64;
    let g_scale = geom.g.max_abs() * c2;
    for node in 0..phi_field.node_count() {
        let mut d = sgeom.g.node(node).clone();
        d.add_scaled(geom.g.node(node), -c2);
        metric_ratio = metric_ratio.max(d.max_abs() / g_scale);
    }

    let mut torsion_pointwise = 0.0_f64;
    let t_scale = (geom.torsion.max_abs() * c2).max(f64::MIN_POSITIVE);
    for node in 0..phi_field.node_count() {
        let mut d = sgeom.torsion.node(node).clone();
        d.add_scaled(geom.torsion.node(node), -c2);
        torsion_pointwise = torsion_pointwise.max(d.max_abs() / t_scale);
    }

    let e = energy_from_geometry(&geom).e;
    let se = energy_from_geometry(&sgeom).e;
    let energy_ratio = (se / e - c.powi(6)).abs() / c.powi(6);

    // |T~|_{g~} = c^{-1} |T|_g pointwise
    let mut j0 = 0.0_f64;
    for node in 0..phi_field.node_count() {
        let a = norm_sq(sgeom.torsion.node(node), &sgeom.metrics[node]).sqrt();
        let b = norm_sq(geom.torsion.node(node), &geom.metrics[node]).sqrt() / c;
        j0 = j0.max((a - b).abs() / b.max(1e-14));
    }

    // |nabla~ T~|_{g~} = c^{-2} |nabla T|_g pointwise
    let nt = covariant_derivative_with(&geom.torsion, &geom.gamma)?;
    let snt = covariant_derivative_with(&sgeom.torsion, &sgeom.gamma)?;
    let mut j1 = 0.0_f64;
    for node in 0..phi_field.node_count() {
        let a = norm_sq(snt.node(node), &sgeom.metrics[node]).sqrt();
        let b = norm_sq(nt.node(node), &geom.metrics[node]).sqrt() / (c * c);
        j1 = j1.max((a - b).abs() / b.max(1e-14));
    }

    Ok(ScalingReport {
        metric_ratio,
        torsion_pointwise,
        energy_ratio,
        torsion_norm_j0: j0,
        nabla_torsion_norm_j1: j1,
    })
}

// ---------------------------------------------------------------------------
// Solitons
// ---------------------------------------------------------------------------

/// Candidate self-similar solution: a structure field, a vector field and
/// the scaling rate.
pub struct SolitonData {
    pub phi_field: GridField,
    pub y: GridField,
    pub lambda: f64,
}

/// Residuals of the soliton system for the gradient flow:
/// - `full`: the 4-form equation A <> Phi = lambda Phi + L_Y Phi;
/// - `metric_eq`: its symmetric projection
///   (lambda g / 4 + L_Y g / 2 on the right);
/// - `div_eq`: its 7-piece projection
///   (Div T + skew(T*T)_7 / 2 = (T(Y) + (nabla Y)_7) / 2);
/// - `trace`: the integrated identity -3 int |T|^2 vol - lambda Vol, an
///   exact obstruction to compact expanders.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolitonReport {
    pub full: f64,
    pub metric_eq: f64,
    pub div_eq: f64,
    pub trace: f64,
    pub expander_obstructed: bool,
}

pub fn soliton_residual(data: &SolitonData) -> Result<SolitonReport> {
    let geom = geometry(&data.phi_field)?;
    let curv = geom.curvature()?;
    let cfg = FlowConfig::default();
    let rhs = gradient_rhs(&geom, &curv, &cfg)?;
    let lie_phi = crate::fields::torsion::lie_derivative_form(&data.y, &data.phi_field)?;
    let lie_g = crate::fields::torsion::lie_derivative_metric(&data.y, &geom)?;

    let mut full = 0.0_f64;
    let mut metric_eq = 0.0_f64;
    let mut div_eq = 0.0_f64;
    for node in 0..data.phi_field.node_count() {
        let g = &geom.metrics[node];
        let form = geom.form_at(node);
        // full 4-form residual
        let mut a = rhs.h.node(node).clone();
        a.add_scaled(rhs.x.node(node), 1.0);
        let mut r4 = algebra::diamond(&a, &form, g);
        r4.add_scaled(form.value(), -data.lambda);
        r4.add_scaled(lie_phi.node(node), -1.0);
        full = full.max(r4.max_abs());

        // symmetric projection
        let mut rs = rhs.h.node(node).clone();
        rs.add_scaled(g.tensor(), -0.25 * data.lambda);
        rs.add_scaled(lie_g.node(node), -0.5);
        metric_eq = metric_eq.max(rs.max_abs());

        // 7-piece projection: Div T + skew(T*T)_7/2 - (T(Y) + (nabla Y)_7)/2;
        // rhs.x already holds 2 Div T + skew(T*T)_7, halve it
        let mut r7 = rhs.x.node(node).scale(0.5);
        let wn = data.y.node(node);
        let t = geom.torsion.node(node);
        let mut ty = MultiTensor::zeros(2);
        for m in 0..DIM {
            let wm = wn.data()[m];
            if wm != 0.0 {
                for p in 0..DIM {
                    for q in 0..DIM {
                        let v = ty.at2(p, q) + wm * t.at3(m, p, q);
                        ty.set(&[p, q], v);
                    }
                }
            }
        }
        r7.add_scaled(&ty, -0.5);
        let nw7 = skew7_of_gradient(&data.y, &geom)?;
        r7.add_scaled(nw7.node(node), -0.5);
        div_eq = div_eq.max(r7.max_abs());
    }

    let er = energy_from_geometry(&geom);
    // E = 1/2 int |T|^2, so -3 int |T|^2 = -6 E
    let trace = -6.0 * er.e - data.lambda * er.volume;

    Ok(SolitonReport {
        full,
        metric_eq,
        div_eq,
        trace,
        expander_obstructed: data.lambda > 0.0,
    })
}
