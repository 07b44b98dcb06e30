//! The six experiment commands. Each produces per-sample records, a summary
//! record, and a list of named assertion failures (empty on success).

use spin7_core::algebra::{self, standard_cayley_form};
use spin7_core::fields::{samples, torsion::geometry, GridField};
use spin7_core::flow::{self, DeformationField, FlowConfig, SolitonData};
use spin7_core::par;
use spin7_core::sampling::{self, Stream};
use spin7_core::symbol;
use spin7_core::tensor::{inner, MetricTensor, MultiTensor};

use crate::report::{push_bool, push_f64, push_str, push_usize, record, Record};
use crate::spec::ExperimentSpec;

pub struct Outcome {
    pub records: Vec<Record>,
    pub failures: Vec<String>,
}

type CmdResult = Result<Outcome, spin7_core::SpinError>;

pub fn run(spec: &ExperimentSpec) -> CmdResult {
    match spec.command {
        crate::spec::Command::Identities => identities(spec),
        crate::spec::Command::Decompose => decompose(spec),
        crate::spec::Command::Symbol => symbol_sweep(spec),
        crate::spec::Command::Flow => flow_run(spec),
        crate::spec::Command::Variation => variation(spec),
        crate::spec::Command::Soliton => soliton(spec),
    }
}

fn identities(spec: &ExperimentSpec) -> CmdResult {
    let tol = spec.tol.unwrap_or(1e-10);
    let mut rng = sampling::rng(spec.seed, Stream::Transports);
    let mut forms = vec![("model".to_string(), standard_cayley_form().clone())];
    for k in 0..20 {
        let m = sampling::random_gl_plus(0.3, &mut rng);
        forms.push((
            format!("transported-{k}"),
            algebra::transport(standard_cayley_form(), &m)?,
        ));
    }
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut worst = 0.0_f64;
    for (name, form) in &forms {
        let g = form.induced_metric()?;
        let rep = algebra::verify_contraction_identities(form, &g);
        let mut r = record("form");
        push_str(&mut r, "name", name);
        push_f64(&mut r, "quad", rep.quad);
        push_f64(&mut r, "triple", rep.triple);
        push_f64(&mut r, "full", rep.full);
        push_f64(&mut r, "self_dual", rep.self_dual);
        push_f64(&mut r, "pi7_eigen", rep.pi7_eigen);
        push_f64(&mut r, "pi21_eigen", rep.pi21_eigen);
        records.push(r);
        worst = worst.max(rep.max_residual());
        if rep.max_residual() > tol {
            failures.push(format!(
                "identities: {name} residual {:.3e} exceeds {tol:.1e}",
                rep.max_residual()
            ));
        }
    }
    let mut s = record("summary");
    push_str(&mut s, "command", "identities");
    push_usize(&mut s, "forms", forms.len());
    push_f64(&mut s, "max_residual", worst);
    push_f64(&mut s, "tol", tol);
    push_bool(&mut s, "pass", failures.is_empty());
    records.push(s);
    Ok(Outcome { records, failures })
}

fn decompose(spec: &ExperimentSpec) -> CmdResult {
    let tol = spec.tol.unwrap_or(1e-10);
    let phi = standard_cayley_form();
    let g = MetricTensor::euclidean();
    let mut records = Vec::new();
    let mut failures = Vec::new();

    let ranks = algebra::diamond_rank_report(phi, &g);
    let mut r = record("ranks");
    push_usize(&mut r, "nullity", ranks.nullity);
    push_usize(&mut r, "rank_trace", ranks.rank_trace);
    push_usize(&mut r, "rank_traceless_sym", ranks.rank_traceless_sym);
    push_usize(&mut r, "rank_lambda27", ranks.rank_lambda27);
    records.push(r);
    if ranks.nullity != 21 {
        failures.push(format!("decompose: nullity {} != 21", ranks.nullity));
    }
    if (ranks.rank_trace, ranks.rank_traceless_sym, ranks.rank_lambda27) != (1, 35, 7) {
        failures.push(format!(
            "decompose: ranks ({}, {}, {}) != (1, 35, 7)",
            ranks.rank_trace, ranks.rank_traceless_sym, ranks.rank_lambda27
        ));
    }

    // pairing identity on random pairs
    let mut rng = sampling::rng(spec.seed, Stream::Tensors);
    let mut worst = 0.0_f64;
    for k in 0..spec.xi_samples {
        let a = sampling::random_tensor(2, 1.0, &mut rng);
        let b = sampling::random_tensor(2, 1.0, &mut rng);
        let da = algebra::diamond(&a, phi, &g);
        let db = algebra::diamond(&b, phi, &g);
        let lhs = inner(&da, &db, &g)?;
        let tr = |t: &MultiTensor| t.trace2();
        let traceless = |t: &MultiTensor| {
            let mut s = t.sym2();
            let tt = s.trace2() / 8.0;
            s.add_scaled(&MultiTensor::identity2(), -tt);
            s
        };
        let (a7, _) = algebra::project_2form(&a.skew2(), phi, &g)?;
        let (b7, _) = algebra::project_2form(&b.skew2(), phi, &g)?;
        let rhs =
            84.0 * tr(&a) * tr(&b) + 96.0 * traceless(&a).dot(&traceless(&b)) + 384.0 * a7.dot(&b7);
        let rel = (lhs - rhs).abs() / lhs.abs().max(1.0);
        worst = worst.max(rel);
        let mut r = record("pair");
        push_usize(&mut r, "index", k);
        push_f64(&mut r, "rel_error", rel);
        records.push(r);
        if rel > tol {
            failures.push(format!(
                "decompose: pairing identity pair {k} rel error {rel:.3e} exceeds {tol:.1e}"
            ));
        }
    }
    let mut s = record("summary");
    push_str(&mut s, "command", "decompose");
    push_f64(&mut s, "max_pairing_rel_error", worst);
    push_f64(&mut s, "tol", tol);
    push_bool(&mut s, "pass", failures.is_empty());
    records.push(s);
    Ok(Outcome { records, failures })
}

fn symbol_sweep(spec: &ExperimentSpec) -> CmdResult {
    let distance_tol = spec.tol.unwrap_or(1e-9);
    let mut rng = sampling::rng(spec.seed, Stream::Covectors);
    let covectors: Vec<MultiTensor> = (0..spec.xi_samples)
        .map(|_| sampling::random_unit_covector(&mut rng))
        .collect();
    let sample_results = par::map_slice(&covectors, symbol::analyze_covector);

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut min_coercivity = f64::INFINITY;
    let mut max_distance = 0.0_f64;
    for (k, res) in sample_results.into_iter().enumerate() {
        let sample = res?;
        let mut r = record("covector");
        push_usize(&mut r, "index", k);
        push_usize(&mut r, "nullity_l", sample.nullity_l);
        push_usize(&mut r, "nullity_btilde", sample.nullity_btilde);
        push_f64(&mut r, "gauge_image_distance", sample.gauge_image_distance);
        push_f64(&mut r, "coercivity", sample.coercivity_gauge_fixed);
        push_f64(&mut r, "reformulation_residual", sample.reformulation_residual);
        push_f64(&mut r, "adjointness_residual", sample.adjointness_residual);
        records.push(r);
        min_coercivity = min_coercivity.min(sample.coercivity_gauge_fixed);
        max_distance = max_distance.max(sample.gauge_image_distance);
        if sample.nullity_l != 8 {
            failures.push(format!("symbol: covector {k} nullity {} != 8", sample.nullity_l));
        }
        if sample.nullity_btilde != 35 {
            failures.push(format!(
                "symbol: covector {k} Btilde nullity {} != 35",
                sample.nullity_btilde
            ));
        }
        if sample.gauge_image_distance > distance_tol {
            failures.push(format!(
                "symbol: covector {k} kernel-gauge distance {:.3e} exceeds {distance_tol:.1e}",
                sample.gauge_image_distance
            ));
        }
        if sample.coercivity_gauge_fixed < 0.5 - 1e-10 {
            failures.push(format!(
                "symbol: covector {k} coercivity {:.12} below 1/2",
                sample.coercivity_gauge_fixed
            ));
        }
    }
    let mut s = record("summary");
    push_str(&mut s, "command", "symbol");
    push_usize(&mut s, "samples", spec.xi_samples);
    push_f64(&mut s, "min_coercivity", min_coercivity);
    push_f64(&mut s, "max_gauge_image_distance", max_distance);
    push_bool(&mut s, "pass", failures.is_empty());
    records.push(s);
    Ok(Outcome { records, failures })
}

fn build_initial_field(spec: &ExperimentSpec) -> Result<GridField, spin7_core::SpinError> {
    if spec.eps == 0.0 {
        samples::flat_field(spec.active_dims, spec.grid_n)
    } else {
        samples::perturbed_field(
            spec.active_dims,
            spec.grid_n,
            samples::Perturbation {
                modes: spec.modes,
                eps: spec.eps,
            },
            spec.seed,
        )
    }
}

fn flow_run(spec: &ExperimentSpec) -> CmdResult {
    let field = build_initial_field(spec)?;
    let dt = if spec.dt > 0.0 {
        spec.dt
    } else {
        flow::suggest_dt(&field)?
    };
    let cfg = FlowConfig {
        coeff_a: spec.coeff_a,
        coeff_b: spec.coeff_b,
        coeff_c: spec.coeff_c,
        dt,
        steps: spec.steps,
        deturck: spec.deturck,
        include_lot: spec.include_lot,
        drift_threshold: 1e-5,
    };
    let trace = flow::run_flow(&field, &cfg)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for rec in &trace.records {
        let mut r = record("step");
        push_usize(&mut r, "step", rec.step);
        push_f64(&mut r, "t", rec.t);
        push_f64(&mut r, "energy", rec.energy);
        push_f64(&mut r, "torsion_max", rec.torsion_max);
        push_f64(&mut r, "ric_max", rec.ric_max);
        push_f64(&mut r, "drift", rec.drift);
        push_f64(&mut r, "volume", rec.volume);
        records.push(r);
    }
    let tol = spec.tol.unwrap_or(10.0 * (dt.powi(4) + 1e-8));
    let gradient_family = (spec.coeff_a, spec.coeff_b, spec.coeff_c) == (1.0, 2.0, 2.0)
        && spec.include_lot
        && !spec.deturck;
    if gradient_family {
        for w in trace.records.windows(2) {
            if w[1].energy > w[0].energy + tol {
                failures.push(format!(
                    "flow: energy increased at step {}: {:.6e} -> {:.6e} (tol {tol:.1e})",
                    w[1].step, w[0].energy, w[1].energy
                ));
                break;
            }
        }
    }
    let mut s = record("summary");
    push_str(&mut s, "command", "flow");
    push_f64(&mut s, "dt", dt);
    push_usize(&mut s, "steps", spec.steps);
    push_f64(&mut s, "initial_energy", trace.records.first().unwrap().energy);
    push_f64(&mut s, "final_energy", trace.records.last().unwrap().energy);
    push_f64(
        &mut s,
        "max_drift",
        trace.records.iter().map(|r| r.drift).fold(0.0, f64::max),
    );
    push_bool(&mut s, "energy_monotone_checked", gradient_family);
    push_bool(&mut s, "pass", failures.is_empty());
    records.push(s);
    Ok(Outcome { records, failures })
}

fn variation(spec: &ExperimentSpec) -> CmdResult {
    let tol = spec.tol.unwrap_or(1e-3);
    let field = build_initial_field(spec)?;
    let geom = geometry(&field)?;
    let mut rng = sampling::rng(spec.seed, Stream::Directions);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut worst = 0.0_f64;
    for k in 0..spec.xi_samples {
        let coeffs_h = sampling::FourierTensorField::sample(spec.active_dims, 2, 1.0, &mut rng);
        let coeffs_x = sampling::FourierTensorField::sample(spec.active_dims, 2, 1.0, &mut rng);
        let h = field.map(2, |node, _| coeffs_h.eval(&field.coords(node)).sym2());
        let x = field.map(2, |node, _| {
            let raw = coeffs_x.eval(&field.coords(node)).skew2();
            let (x7, _) =
                algebra::project_2form(&raw, &geom.form_at(node), &geom.metrics[node]).unwrap();
            x7
        });
        let dir = DeformationField { h, x };
        let check = flow::variation_check(&field, &dir, 1e-5)?;
        let mut r = record("direction");
        push_usize(&mut r, "index", k);
        push_f64(&mut r, "fd_derivative", check.fd_derivative);
        push_f64(&mut r, "formula_value", check.formula_value);
        push_f64(&mut r, "rel_error", check.rel_error);
        records.push(r);
        worst = worst.max(check.rel_error);
        if check.rel_error > tol {
            failures.push(format!(
                "variation: direction {k} rel error {:.3e} exceeds {tol:.1e}",
                check.rel_error
            ));
        }
    }
    let mut s = record("summary");
    push_str(&mut s, "command", "variation");
    push_f64(&mut s, "max_rel_error", worst);
    push_f64(&mut s, "tol", tol);
    push_bool(&mut s, "pass", failures.is_empty());
    records.push(s);
    Ok(Outcome { records, failures })
}

fn soliton(spec: &ExperimentSpec) -> CmdResult {
    let tol = spec.tol.unwrap_or(1e-12);
    let flat = samples::flat_field(spec.active_dims, spec.grid_n)?;
    let zero_y = GridField::constant(spec.active_dims, spec.grid_n, MultiTensor::zeros(1))?;
    let volume = flow::energy(&flat)?.volume;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut eval = |name: &str, data: &SolitonData| -> Result<(), spin7_core::SpinError> {
        let rep = flow::soliton_residual(data)?;
        let mut r = record("candidate");
        push_str(&mut r, "name", name);
        push_f64(&mut r, "lambda", data.lambda);
        push_f64(&mut r, "full", rep.full);
        push_f64(&mut r, "metric_eq", rep.metric_eq);
        push_f64(&mut r, "div_eq", rep.div_eq);
        push_f64(&mut r, "trace", rep.trace);
        push_bool(&mut r, "expander_obstructed", rep.expander_obstructed);
        records.push(r);
        match name {
            "flat-steady" => {
                let worst = rep.full.max(rep.metric_eq).max(rep.div_eq).max(rep.trace.abs());
                if worst > tol {
                    failures.push(format!(
                        "soliton: flat steady residual {worst:.3e} exceeds {tol:.1e}"
                    ));
                }
            }
            "flat-expander" => {
                // with T = 0 the trace identity must be violated by exactly
                // lambda * Vol
                let err = (rep.trace + data.lambda * volume).abs();
                if err > tol * volume.max(1.0) {
                    failures.push(format!(
                        "soliton: expander trace obstruction off by {err:.3e}"
                    ));
                }
                if !rep.expander_obstructed {
                    failures.push("soliton: expander not flagged".into());
                }
            }
            _ => {}
        }
        Ok(())
    };

    eval(
        "flat-steady",
        &SolitonData {
            phi_field: flat.clone(),
            y: zero_y.clone(),
            lambda: 0.0,
        },
    )?;
    eval(
        "flat-expander",
        &SolitonData {
            phi_field: flat.clone(),
            y: zero_y.clone(),
            lambda: 1.0,
        },
    )?;
    if spec.eps > 0.0 {
        let perturbed = build_initial_field(spec)?;
        let y = samples::vector_field(spec.active_dims, spec.grid_n, spec.modes, spec.seed)?;
        eval(
            "perturbed-candidate",
            &SolitonData {
                phi_field: perturbed,
                y,
                lambda: -0.1,
            },
        )?;
    }

    let mut s = record("summary");
    push_str(&mut s, "command", "soliton");
    push_f64(&mut s, "volume", volume);
    push_f64(&mut s, "tol", tol);
    push_bool(&mut s, "pass", failures.is_empty());
    records.push(s);
    Ok(Outcome { records, failures })
}
