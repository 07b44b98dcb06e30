//! Pointwise Spin(7) linear algebra: the standard Cayley form, admissibility,
//! the nonlinearly induced metric, 2-/3-/4-form decompositions, the diamond
//! operator and its inverse.
//!
//! Conventions. The 2-form contraction operator C(beta)_{ij} = beta_{ab}
//! Phi_{abij} has eigenvalues -6 on the 7-dimensional piece and +2 on the
//! 21-dimensional piece; equivalently beta |-> star(Phi ^ beta) has
//! eigenvalues -3 and +1. The sign of the Cayley form is pinned at
//! construction by the quadratic contraction identity
//! Phi_{ijkl} Phi_{abkl} = 6 g_{ia} g_{jb} - 6 g_{ib} g_{ja} - 4 Phi_{ijab}.

use std::sync::OnceLock;

use crate::error::{Result, SpinError};
use crate::tensor::{
    advance, antisymmetrize, contract, hodge_star, increasing_tuples, inner, interior, norm_sq,
    permutation_sign, size_of_rank, MetricTensor, MultiTensor, DIM,
};

/// Antisymmetric rank-4 tensor in the orbit of the standard Cayley form.
#[derive(Clone, Debug)]
pub struct AdmissibleFourForm {
    value: MultiTensor,
}

impl AdmissibleFourForm {
    /// Wraps a rank-4 antisymmetric tensor without running the (expensive)
    /// admissibility identity suite; see [`verify_contraction_identities`].
    pub fn from_components(value: MultiTensor) -> Result<Self> {
        if value.rank() != 4 {
            return Err(SpinError::RankMismatch {
                expected: 4,
                got: value.rank(),
            });
        }
        value.ensure_antisymmetric(1e-8)?;
        Ok(AdmissibleFourForm { value })
    }

    /// Wraps and verifies admissibility: the contraction-identity residuals
    /// with the induced metric must stay below `tol` (relative).
    pub fn checked(value: MultiTensor, tol: f64) -> Result<Self> {
        let form = Self::from_components(value)?;
        let g = form.induced_metric()?;
        let report = verify_contraction_identities(&form, &g);
        let residual = report.max_residual();
        if residual > tol {
            return Err(SpinError::NotAdmissible {
                reason: "contraction-identity residual too large",
                residual,
            });
        }
        Ok(form)
    }

    #[inline]
    pub fn value(&self) -> &MultiTensor {
        &self.value
    }

    pub fn into_value(self) -> MultiTensor {
        self.value
    }

    pub fn scale(&self, c: f64) -> Self {
        AdmissibleFourForm {
            value: self.value.scale(c),
        }
    }

    /// Metric induced by the form, via the B/A frame formula and
    /// polarization. Fails if the quadratic form is degenerate or indefinite,
    /// which signals a non-admissible input.
    pub fn induced_metric(&self) -> Result<MetricTensor> {
        induced_metric(self)
    }
}

/// Deformation of a Spin(7)-structure: a symmetric part (trace included) and
/// a 2-form part constrained to the 7-dimensional piece.
#[derive(Clone, Debug)]
pub struct DeformationTensor {
    pub h: MultiTensor,
    pub x: MultiTensor,
}

impl DeformationTensor {
    pub fn zero() -> Self {
        DeformationTensor {
            h: MultiTensor::zeros(2),
            x: MultiTensor::zeros(2),
        }
    }

    /// Splits a general rank-2 tensor into its symmetric part and the
    /// 7-piece of its antisymmetric part (the 21-piece acts trivially on
    /// admissible forms and is dropped).
    pub fn from_full(a: &MultiTensor, phi: &AdmissibleFourForm, g: &MetricTensor) -> Self {
        let h = a.sym2();
        let (x7, _) = project_2form_unchecked(&a.skew2(), phi, g);
        DeformationTensor { h, x: x7 }
    }

    pub fn to_full(&self) -> MultiTensor {
        &self.h + &self.x
    }
}

// ---------------------------------------------------------------------------
// Standard Cayley form
// ---------------------------------------------------------------------------

/// Fano-plane triples defining the octonion structure constants on the seven
/// imaginary units (0-based labels within 0..7).
const FANO_TRIPLES: [[usize; 3]; 7] = [
    [0, 1, 3],
    [1, 2, 4],
    [2, 3, 5],
    [3, 4, 6],
    [4, 5, 0],
    [5, 6, 1],
    [6, 0, 2],
];

fn basis_form(indices: &[usize], coeff: f64) -> MultiTensor {
    let k = indices.len();
    let mut t = MultiTensor::zeros(k);
    for (perm, sign) in crate::tensor::signed_permutations(k) {
        let idx: Vec<usize> = perm.iter().map(|&p| indices[p]).collect();
        t.set(&idx, coeff * sign);
    }
    t
}

/// Hodge star within the 7-dimensional span of coordinates 0..7, taking the
/// associative 3-form to its coassociative 4-form.
fn star7_of_3form(phi3: &MultiTensor) -> MultiTensor {
    let mut out = MultiTensor::zeros(4);
    let all7: Vec<usize> = (0..7).collect();
    for j_tuple in increasing_subsets(&all7, 4) {
        let i_tuple: Vec<usize> = all7
            .iter()
            .copied()
            .filter(|i| !j_tuple.contains(i))
            .collect();
        let mut concat = i_tuple.clone();
        concat.extend_from_slice(&j_tuple);
        let sign = permutation_sign(&concat);
        let value = sign * phi3.get(&i_tuple);
        for (perm, psign) in crate::tensor::signed_permutations(4) {
            let idx: Vec<usize> = perm.iter().map(|&p| j_tuple[p]).collect();
            out.set(&idx, value * psign);
        }
    }
    out
}

fn increasing_subsets(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut buf = Vec::with_capacity(k);
    fn rec(pool: &[usize], start: usize, k: usize, buf: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if buf.len() == k {
            out.push(buf.clone());
            return;
        }
        for i in start..pool.len() {
            buf.push(pool[i]);
            rec(pool, i + 1, k, buf, out);
            buf.pop();
        }
    }
    rec(pool, 0, k, &mut buf, &mut out);
    out
}

/// Residual of the quadratic contraction identity
/// Phi_{ijkl} Phi_{abkl} = 6 g_{ia} g_{jb} - 6 g_{ib} g_{ja} - 4 Phi_{ijab},
/// relative to its natural scale.
fn quad_identity_residual(phi: &MultiTensor, g: &MetricTensor) -> f64 {
    let lhs = contract(phi, phi, &[(2, 2), (3, 3)], g).expect("rank 4 result");
    let gt = g.tensor();
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for i in 0..DIM {
        for j in 0..DIM {
            for a in 0..DIM {
                for b in 0..DIM {
                    let rhs = 6.0 * gt.at2(i, a) * gt.at2(j, b) - 6.0 * gt.at2(i, b) * gt.at2(j, a)
                        - 4.0 * phi.at4(i, j, a, b);
                    let l = lhs.at4(i, j, a, b);
                    worst = worst.max((l - rhs).abs());
                    scale = scale.max(l.abs()).max(rhs.abs());
                }
            }
        }
    }
    worst / scale.max(1.0)
}

fn build_cayley() -> AdmissibleFourForm {
    let mut phi3 = MultiTensor::zeros(3);
    for triple in FANO_TRIPLES {
        let term = basis_form(&triple, 1.0);
        phi3.add_scaled(&term, 1.0);
    }
    let psi = star7_of_3form(&phi3);
    let e7 = {
        let mut v = MultiTensor::zeros(1);
        v.data_mut()[7] = 1.0;
        v
    };
    let e7_wedge_phi = crate::tensor::wedge(&e7, &phi3).expect("rank 4");

    // Pin signs by the identity suite: of the four sign combinations exactly
    // one is self-dual, induces the Euclidean metric, and satisfies the -4Phi
    // quadratic identity (the -6/+2 eigenvalue convention).
    let g = MetricTensor::euclidean();
    for s1 in [1.0, -1.0] {
        for s2 in [1.0, -1.0] {
            let mut cand = e7_wedge_phi.scale(s1);
            cand.add_scaled(&psi, s2);
            let star = hodge_star(&cand, &g).expect("4-form");
            if (&star - &cand).max_abs() > 1e-12 {
                continue;
            }
            if quad_identity_residual(&cand, &g) > 1e-12 {
                continue;
            }
            let form = AdmissibleFourForm { value: cand };
            let gm = form.induced_metric().expect("model metric");
            let dev = (gm.tensor() - &MultiTensor::identity2()).max_abs();
            assert!(dev < 1e-10, "model metric deviates from identity: {dev}");
            return form;
        }
    }
    unreachable!("no sign combination satisfies the Cayley identities");
}

/// The standard Cayley 4-form, constant on the background frame. Its induced
/// metric is Euclidean, it is self-dual, and it satisfies the full
/// contraction-identity suite in the -6/+2 eigenvalue convention.
pub fn standard_cayley_form() -> &'static AdmissibleFourForm {
    static CAYLEY: OnceLock<AdmissibleFourForm> = OnceLock::new();
    CAYLEY.get_or_init(build_cayley)
}

// ---------------------------------------------------------------------------
// Induced metric
// ---------------------------------------------------------------------------

/// (2,2,3)-shuffle table over seven frame slots: increasing position blocks
/// with the sign of the concatenated permutation.
#[allow(clippy::type_complexity)]
fn shuffles_223() -> &'static Vec<([usize; 2], [usize; 2], [usize; 3], f64)> {
    static TABLE: OnceLock<Vec<([usize; 2], [usize; 2], [usize; 3], f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let positions: Vec<usize> = (0..7).collect();
        let mut out = Vec::with_capacity(210);
        for p1 in increasing_subsets(&positions, 2) {
            let rest1: Vec<usize> = positions
                .iter()
                .copied()
                .filter(|p| !p1.contains(p))
                .collect();
            for p2 in increasing_subsets(&rest1, 2) {
                let p3: Vec<usize> = rest1
                    .iter()
                    .copied()
                    .filter(|p| !p2.contains(p))
                    .collect();
                let mut concat = p1.clone();
                concat.extend_from_slice(&p2);
                concat.extend_from_slice(&p3);
                let sign = permutation_sign(&concat);
                out.push((
                    [p1[0], p1[1]],
                    [p2[0], p2[1]],
                    [p3[0], p3[1], p3[2]],
                    sign,
                ));
            }
        }
        out
    })
}

/// (3,4)-shuffle table over seven frame slots.
#[allow(clippy::type_complexity)]
fn shuffles_34() -> &'static Vec<([usize; 3], [usize; 4], f64)> {
    static TABLE: OnceLock<Vec<([usize; 3], [usize; 4], f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let positions: Vec<usize> = (0..7).collect();
        let mut out = Vec::with_capacity(35);
        for p1 in increasing_subsets(&positions, 3) {
            let p2: Vec<usize> = positions
                .iter()
                .copied()
                .filter(|p| !p1.contains(p))
                .collect();
            let mut concat = p1.clone();
            concat.extend_from_slice(&p2);
            let sign = permutation_sign(&concat);
            out.push(([p1[0], p1[1], p1[2]], [p2[0], p2[1], p2[2], p2[3]], sign));
        }
        out
    })
}

/// Value of (a ^ b ^ c)(e_{f1}, ..., e_{f7}) for 2-forms a, b and 3-form c.
fn eval7_223(a: &MultiTensor, b: &MultiTensor, c: &MultiTensor, frame: &[usize; 7]) -> f64 {
    let mut acc = 0.0;
    for (p1, p2, p3, sign) in shuffles_223() {
        let av = a.at2(frame[p1[0]], frame[p1[1]]);
        if av == 0.0 {
            continue;
        }
        let bv = b.at2(frame[p2[0]], frame[p2[1]]);
        if bv == 0.0 {
            continue;
        }
        let cv = c.at3(frame[p3[0]], frame[p3[1]], frame[p3[2]]);
        acc += sign * av * bv * cv;
    }
    acc
}

/// Value of (c ^ d)(e_{f1}, ..., e_{f7}) for a 3-form c and 4-form d.
fn eval7_34(c: &MultiTensor, d: &MultiTensor, frame: &[usize; 7]) -> f64 {
    let mut acc = 0.0;
    for (p1, p2, sign) in shuffles_34() {
        let cv = c.at3(frame[p1[0]], frame[p1[1]], frame[p1[2]]);
        if cv == 0.0 {
            continue;
        }
        let dv = d.at4(frame[p2[0]], frame[p2[1]], frame[p2[2]], frame[p2[3]]);
        acc += sign * cv * dv;
    }
    acc
}

const METRIC_CONST: f64 = 343.0; // 7^3

/// g(v,v) from the frame formula
/// (g(v,v))^2 = -7^3/6^(7/3) (det B(v))^(1/3) / A(v)^3,
/// evaluated in the frame {v, e_j : j != argmax |v_j|}.
fn metric_quadratic_form(phi: &MultiTensor, v: &MultiTensor) -> Result<f64> {
    let mut kmax = 0;
    let mut best = -1.0_f64;
    for (k, &c) in v.data().iter().enumerate() {
        if c.abs() > best {
            best = c.abs();
            kmax = k;
        }
    }
    if best == 0.0 {
        return Err(SpinError::InvalidArgument(
            "metric evaluated on the zero vector".into(),
        ));
    }
    let mut frame = [0usize; 7];
    let mut w = 0;
    for j in 0..DIM {
        if j != kmax {
            frame[w] = j;
            w += 1;
        }
    }

    let v_phi = interior(v, phi)?; // rank 3
    let mut iv = Vec::with_capacity(7);
    for &j in &frame {
        let mut e = MultiTensor::zeros(1);
        e.data_mut()[j] = 1.0;
        iv.push(interior(&e, &v_phi)?); // rank 2
    }

    let mut b = nalgebra::DMatrix::<f64>::zeros(7, 7);
    for i in 0..7 {
        for j in i..7 {
            let val = eval7_223(&iv[i], &iv[j], &v_phi, &frame);
            b[(i, j)] = val;
            b[(j, i)] = val;
        }
    }
    let a = eval7_34(&v_phi, phi, &frame);
    if a == 0.0 {
        return Err(SpinError::NotAdmissible {
            reason: "frame normalization A(v) vanishes",
            residual: 0.0,
        });
    }
    let det_b = b.determinant();
    let q2 = -METRIC_CONST / 6.0_f64.powf(7.0 / 3.0) * det_b.cbrt() / a.powi(3);
    if !(q2 > 0.0) || !q2.is_finite() {
        return Err(SpinError::NotAdmissible {
            reason: "metric quadratic form is not positive",
            residual: q2,
        });
    }
    Ok(q2.sqrt())
}

/// Metric induced by an admissible 4-form: the quadratic form is evaluated on
/// the basis vectors and their pairwise sums and polarized.
pub fn induced_metric(phi: &AdmissibleFourForm) -> Result<MetricTensor> {
    let p = phi.value();
    let mut q_diag = [0.0_f64; DIM];
    let mut e = MultiTensor::zeros(1);
    for (i, q) in q_diag.iter_mut().enumerate() {
        e.data_mut().iter_mut().for_each(|x| *x = 0.0);
        e.data_mut()[i] = 1.0;
        *q = metric_quadratic_form(p, &e)?;
    }
    let mut g = MultiTensor::zeros(2);
    for i in 0..DIM {
        g.set(&[i, i], q_diag[i]);
    }
    for i in 0..DIM {
        for j in i + 1..DIM {
            e.data_mut().iter_mut().for_each(|x| *x = 0.0);
            e.data_mut()[i] = 1.0;
            e.data_mut()[j] = 1.0;
            let q_sum = metric_quadratic_form(p, &e)?;
            let gij = 0.5 * (q_sum - q_diag[i] - q_diag[j]);
            g.set(&[i, j], gij);
            g.set(&[j, i], gij);
        }
    }
    MetricTensor::from_tensor(g)
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

/// Applies m to one slot: out_{.. i ..} = sum_p m_{ip} t_{.. p ..}.
pub fn apply_to_slot(t: &MultiTensor, m: &MultiTensor, slot: usize) -> MultiTensor {
    assert_eq!(m.rank(), 2);
    assert!(slot < t.rank());
    let r = t.rank();
    let stride = DIM.pow((r - 1 - slot) as u32);
    let block = stride * DIM;
    let mut out = MultiTensor::zeros(r);
    let data = t.data();
    let o = out.data_mut();
    for base in (0..data.len()).step_by(block) {
        for rem in 0..stride {
            for i in 0..DIM {
                let mut acc = 0.0;
                for p in 0..DIM {
                    acc += m.at2(i, p) * data[base + p * stride + rem];
                }
                o[base + i * stride + rem] = acc;
            }
        }
    }
    out
}

/// Pullback of the form under the linear map with matrix `m` (columns are
/// images of the basis vectors): (m*Phi)(u,v,w,z) = Phi(mu, mv, mw, mz).
/// Requires det m > 0; composes contravariantly.
pub fn transport(phi: &AdmissibleFourForm, m: &MultiTensor) -> Result<AdmissibleFourForm> {
    if m.rank() != 2 {
        return Err(SpinError::RankMismatch {
            expected: 2,
            got: m.rank(),
        });
    }
    let nm = nalgebra::DMatrix::from_fn(DIM, DIM, |i, j| m.at2(i, j));
    let det = nm.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(SpinError::BadTransport { det });
    }
    // contraction with m^T on every slot: out_{..i..} = sum_a m_{ai} t_{..a..}
    let mt = m.transpose2();
    let mut out = phi.value().clone();
    for slot in 0..4 {
        out = apply_to_slot(&out, &mt, slot);
    }
    AdmissibleFourForm::from_components(out)
}

/// Exponential of an 8x8 matrix (scaling and squaring with a Taylor tail).
pub fn matrix_exp(m: &MultiTensor) -> MultiTensor {
    assert_eq!(m.rank(), 2);
    let norm = m.data().iter().map(|x| x.abs()).fold(0.0_f64, f64::max) * DIM as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m.scale(0.5_f64.powi(squarings as i32));
    let mut result = MultiTensor::identity2();
    let mut term = MultiTensor::identity2();
    for k in 1..40 {
        term = mat_mul(&term, &scaled).scale(1.0 / k as f64);
        result.add_scaled(&term, 1.0);
        if term.max_abs() < 1e-300 {
            break;
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

pub fn mat_mul(a: &MultiTensor, b: &MultiTensor) -> MultiTensor {
    assert_eq!(a.rank(), 2);
    assert_eq!(b.rank(), 2);
    let mut out = MultiTensor::zeros(2);
    for i in 0..DIM {
        for k in 0..DIM {
            let aik = a.at2(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..DIM {
                out.data_mut()[i * DIM + j] += aik * b.at2(k, j);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Form-space decompositions
// ---------------------------------------------------------------------------

/// The contraction operator C(beta)_{ij} = beta_{ab} Phi_{abij} (indices
/// raised through g). Eigenvalues -6 and +2 on the 7- and 21-pieces.
pub fn phi_contraction_2form(
    beta: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> MultiTensor {
    contract(beta, phi.value(), &[(0, 0), (1, 1)], g).expect("rank-2 result")
}

fn project_2form_unchecked(
    beta: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> (MultiTensor, MultiTensor) {
    let c = phi_contraction_2form(beta, phi, g);
    let mut b7 = beta.scale(0.25);
    b7.add_scaled(&c, -0.125);
    let mut b21 = beta.scale(0.75);
    b21.add_scaled(&c, 0.125);
    (b7, b21)
}

/// Orthogonal projection of an antisymmetric 2-form onto its 7- and
/// 21-dimensional pieces:
/// pi7 = beta/4 - C(beta)/8, pi21 = 3 beta/4 + C(beta)/8.
pub fn project_2form(
    beta: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> Result<(MultiTensor, MultiTensor)> {
    if beta.rank() != 2 {
        return Err(SpinError::RankMismatch {
            expected: 2,
            got: beta.rank(),
        });
    }
    beta.ensure_antisymmetric(1e-8)?;
    Ok(project_2form_unchecked(beta, phi, g))
}

/// Splits an antisymmetric 3-form into its vector piece and the
/// 48-dimensional remainder: gamma = X . Phi + gamma48 with
/// X_l = gamma_{ijk} Phi_{lijk} / 42 (normalization forced by the
/// 42-contraction identity) and gamma48_{ijk} Phi_{lijk} = 0. The vector
/// sits in the first form slot, matching the interior product.
pub fn decompose_3form(
    gamma: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> Result<(MultiTensor, MultiTensor)> {
    if gamma.rank() != 3 {
        return Err(SpinError::RankMismatch {
            expected: 3,
            got: gamma.rank(),
        });
    }
    gamma.ensure_antisymmetric(1e-8)?;
    let x = contract(gamma, phi.value(), &[(0, 1), (1, 2), (2, 3)], g)?.scale(1.0 / 42.0);
    let g8 = contract(&x, phi.value(), &[(0, 0)], g)?;
    let gamma48 = gamma - &g8;
    Ok((x, gamma48))
}

/// The diamond action of a rank-2 tensor on the 4-form:
/// (A <> Phi)_{ijkl} = A_{ip} Phi_{pjkl} + A_{jp} Phi_{ipkl}
///                   + A_{kp} Phi_{ijpl} + A_{lp} Phi_{ijkp},
/// with the contracted index raised through g. Linear in A; kills the
/// 21-piece of A.
pub fn diamond(a: &MultiTensor, phi: &AdmissibleFourForm, g: &MetricTensor) -> MultiTensor {
    assert_eq!(a.rank(), 2);
    let a_raised = g.raise_slot(a, 1);
    let p = phi.value();
    let mut out = MultiTensor::zeros(4);
    let o = out.data_mut();
    for i in 0..DIM {
        for j in 0..DIM {
            for k in 0..DIM {
                for l in 0..DIM {
                    let mut acc = 0.0;
                    for q in 0..DIM {
                        acc += a_raised.at2(i, q) * p.at4(q, j, k, l)
                            + a_raised.at2(j, q) * p.at4(i, q, k, l)
                            + a_raised.at2(k, q) * p.at4(i, j, q, l)
                            + a_raised.at2(l, q) * p.at4(i, j, k, q);
                    }
                    o[((i * DIM + j) * DIM + k) * DIM + l] = acc;
                }
            }
        }
    }
    out
}

/// Matrix of the diamond map on increasing quadruples: 70 rows, 64 columns
/// (columns indexed by the entries of A in row-major order).
fn diamond_matrix(phi: &AdmissibleFourForm, g: &MetricTensor) -> nalgebra::DMatrix<f64> {
    let quads = increasing_tuples(4);
    let mut m = nalgebra::DMatrix::<f64>::zeros(quads.len(), DIM * DIM);
    let phi_raised = g.raise_slot(phi.value(), 0); // Phi with first slot raised
    for (row, q) in quads.iter().enumerate() {
        let (i, j, k, l) = (q[0], q[1], q[2], q[3]);
        for a in 0..DIM {
            for b in 0..DIM {
                // coefficient of A_{ab} in (A <> Phi)_{ijkl}: slot-wise
                // delta on the first index, raised Phi on the second
                let mut c = 0.0;
                if a == i {
                    c += phi_raised.at4(b, j, k, l);
                }
                if a == j {
                    c += phi_raised.at4(b, i, k, l) * -1.0; // Phi_{ibkl} = -Phi_{bikl}
                }
                if a == k {
                    c += phi_raised.at4(b, i, j, l); // Phi_{ijbl} = +Phi_{bijl}? see below
                }
                if a == l {
                    c -= phi_raised.at4(b, i, j, k);
                }
                m[(row, a * DIM + b)] = c;
            }
        }
    }
    m
}

fn least_squares_solve(
    m: &nalgebra::DMatrix<f64>,
    rhs: &nalgebra::DVector<f64>,
    rank_tol: f64,
) -> (nalgebra::DVector<f64>, f64) {
    let svd = nalgebra::SVD::new(m.clone(), true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let x = svd
        .solve(rhs, rank_tol * max_sv.max(1e-300))
        .expect("svd solve");
    let residual = (m * &x - rhs).norm();
    (x, residual)
}

/// Least-squares preimage of a 4-form under the diamond map, together with
/// the relative residual (the part of sigma outside the image, i.e. its
/// 27-component).
fn diamond_solve(
    sigma: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> (MultiTensor, f64) {
    let quads = increasing_tuples(4);
    let m = diamond_matrix(phi, g);
    let rhs = nalgebra::DVector::from_fn(quads.len(), |r, _| sigma.get(&quads[r]));
    let rhs_norm = rhs.norm();
    let (x, residual) = least_squares_solve(&m, &rhs, 1e-9);
    let mut a = MultiTensor::zeros(2);
    a.data_mut().copy_from_slice(x.as_slice());
    // remove any 21-component picked up by the coordinate least-squares
    let (x7, _x21) = project_2form_unchecked(&a.skew2(), phi, g);
    let mut clean = a.sym2();
    clean.add_scaled(&x7, 1.0);
    (clean, residual / rhs_norm.max(1e-300))
}

/// Inverts the diamond map on its image: returns the unique preimage with no
/// 21-component. Errors when sigma has a 27-component beyond tolerance.
pub fn diamond_inverse(
    sigma: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> Result<DeformationTensor> {
    if sigma.rank() != 4 {
        return Err(SpinError::RankMismatch {
            expected: 4,
            got: sigma.rank(),
        });
    }
    sigma.ensure_antisymmetric(1e-8)?;
    let (a, residual) = diamond_solve(sigma, phi, g);
    if residual > 1e-8 && sigma.max_abs() > 0.0 {
        return Err(SpinError::NotInDiamondImage { residual });
    }
    Ok(DeformationTensor {
        h: a.sym2(),
        x: a.skew2(),
    })
}

/// Rank data of the diamond map over the 64-dimensional space of rank-2
/// tensors: the kernel is the 21-piece, and the trace, traceless-symmetric
/// and 7-piece summands map onto subspaces of dimension 1, 35 and 7.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DiamondRankReport {
    pub nullity: usize,
    pub rank_trace: usize,
    pub rank_traceless_sym: usize,
    pub rank_lambda27: usize,
}

pub fn diamond_rank_report(phi: &AdmissibleFourForm, g: &MetricTensor) -> DiamondRankReport {
    let m = diamond_matrix(phi, g);
    let rank = |mm: &nalgebra::DMatrix<f64>| {
        let svd = nalgebra::SVD::new(mm.clone(), false, false);
        let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        svd.singular_values
            .iter()
            .filter(|s| **s > 1e-8 * max.max(f64::MIN_POSITIVE))
            .count()
    };
    let nullity = DIM * DIM - rank(&m);

    let image_rank = |directions: &[MultiTensor]| {
        let quads = increasing_tuples(4);
        let mut img = nalgebra::DMatrix::<f64>::zeros(quads.len(), directions.len());
        for (col, a) in directions.iter().enumerate() {
            let d = diamond(a, phi, g);
            for (row, q) in quads.iter().enumerate() {
                img[(row, col)] = d.get(q);
            }
        }
        rank(&img)
    };

    // trace direction
    let rank_trace = image_rank(&[g.tensor().clone()]);
    // traceless symmetric basis
    let mut sym_basis = Vec::new();
    for i in 0..DIM {
        for j in i..DIM {
            let mut t = MultiTensor::zeros(2);
            if i == j {
                t.set(&[i, i], 1.0);
            } else {
                t.set(&[i, j], 1.0);
                t.set(&[j, i], 1.0);
            }
            // remove the g-trace
            let tr = inner(&t, g.tensor(), g).expect("rank 2") / 8.0;
            t.add_scaled(g.tensor(), -tr);
            if t.max_abs() > 1e-12 {
                sym_basis.push(t);
            }
        }
    }
    let rank_traceless_sym = image_rank(&sym_basis);
    // the 7-piece (project the 2-form basis)
    let mut l27_basis = Vec::new();
    for ab in increasing_tuples(2) {
        let beta = basis_form(&[ab[0], ab[1]], 1.0);
        let (b7, _) = project_2form_unchecked(&beta, phi, g);
        if b7.max_abs() > 1e-12 {
            l27_basis.push(b7);
        }
    }
    let rank_lambda27 = image_rank(&l27_basis);

    DiamondRankReport {
        nullity,
        rank_trace,
        rank_traceless_sym,
        rank_lambda27,
    }
}

/// Orthogonal pieces of a 4-form: multiples of Phi, the 7- and 27-pieces of
/// the self-dual part, and the anti-self-dual 35-piece.
#[derive(Clone, Debug)]
pub struct FourFormSplit {
    pub s1: MultiTensor,
    pub s7: MultiTensor,
    pub s27: MultiTensor,
    pub s35: MultiTensor,
}

/// Splits a rank-4 antisymmetric tensor into its four irreducible pieces.
/// The anti-self-dual part is the 35-piece; the 1- and 7-pieces are recovered
/// through the diamond preimage of the self-dual part; the 27-piece is the
/// remainder.
pub fn decompose_4form(
    sigma: &MultiTensor,
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> Result<FourFormSplit> {
    if sigma.rank() != 4 {
        return Err(SpinError::RankMismatch {
            expected: 4,
            got: sigma.rank(),
        });
    }
    let star = hodge_star(sigma, g)?;
    let mut sd = sigma.clone();
    sd.add_scaled(&star, 1.0);
    let sd = sd.scale(0.5);
    let mut asd = sigma.clone();
    asd.add_scaled(&star, -1.0);
    let s35 = asd.scale(0.5);

    let (a, _residual) = diamond_solve(&sd, phi, g);
    let trace_g = inner(&a.sym2(), g.tensor(), g)?; // g^{ab} A_ab
    let pure_trace = g.tensor().scale(trace_g / 8.0);
    let s1 = diamond(&pure_trace, phi, g);
    let (x7, _) = project_2form_unchecked(&a.skew2(), phi, g);
    let s7 = diamond(&x7, phi, g);
    let mut s27 = sd;
    s27.add_scaled(&s1, -1.0);
    s27.add_scaled(&s7, -1.0);
    Ok(FourFormSplit { s1, s7, s27, s35 })
}

// ---------------------------------------------------------------------------
// Identity verification
// ---------------------------------------------------------------------------

/// Max relative residuals of the pointwise contraction identities. The
/// derivative identities live in the fields module where derivatives exist.
#[derive(Clone, Debug, serde::Serialize)]
pub struct IdentityReport {
    /// Phi_{ijkl} Phi_{abkl} - (6 g_{ia} g_{jb} - 6 g_{ib} g_{ja} - 4 Phi_{ijab})
    pub quad: f64,
    /// Phi_{ijkl} Phi_{ajkl} - 42 g_{ia}
    pub triple: f64,
    /// |Phi|^2 - 336
    pub full: f64,
    /// star(Phi) - Phi
    pub self_dual: f64,
    /// C(pi7(beta)) + 6 pi7(beta) over the 2-form basis
    pub pi7_eigen: f64,
    /// C(pi21(beta)) - 2 pi21(beta) over the 2-form basis
    pub pi21_eigen: f64,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.quad
            .max(self.triple)
            .max(self.full)
            .max(self.self_dual)
            .max(self.pi7_eigen)
            .max(self.pi21_eigen)
    }

    pub fn is_admissible(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Evaluates every pointwise contraction identity of the structure against
/// the supplied metric (normally the induced one) and reports max relative
/// residuals. Report-only: never fails.
pub fn verify_contraction_identities(
    phi: &AdmissibleFourForm,
    g: &MetricTensor,
) -> IdentityReport {
    let p = phi.value();
    let quad = quad_identity_residual(p, g);

    let triple_lhs = contract(p, p, &[(1, 1), (2, 2), (3, 3)], g).expect("rank 2");
    let mut triple = 0.0_f64;
    let mut triple_scale = 0.0_f64;
    for i in 0..DIM {
        for a in 0..DIM {
            let rhs = 42.0 * g.tensor().at2(i, a);
            triple = triple.max((triple_lhs.at2(i, a) - rhs).abs());
            triple_scale = triple_scale.max(rhs.abs());
        }
    }
    let triple = triple / triple_scale.max(1.0);

    let full = (norm_sq(p, g) - 336.0).abs() / 336.0;

    let star = hodge_star(p, g).expect("self-dual check");
    let self_dual = (&star - p).max_abs() / p.max_abs();

    let mut pi7_eigen = 0.0_f64;
    let mut pi21_eigen = 0.0_f64;
    for a in 0..DIM {
        for b in a + 1..DIM {
            let beta = basis_form(&[a, b], 1.0);
            let (b7, b21) = project_2form_unchecked(&beta, phi, g);
            let c7 = phi_contraction_2form(&b7, phi, g);
            let c21 = phi_contraction_2form(&b21, phi, g);
            let mut r7 = c7;
            r7.add_scaled(&b7, 6.0);
            let mut r21 = c21;
            r21.add_scaled(&b21, -2.0);
            pi7_eigen = pi7_eigen.max(r7.max_abs() / beta.max_abs().max(1.0));
            pi21_eigen = pi21_eigen.max(r21.max_abs() / beta.max_abs().max(1.0));
        }
    }

    IdentityReport {
        quad,
        triple,
        full,
        self_dual,
        pi7_eigen,
        pi21_eigen,
    }
}

/// star(Phi ^ beta) as a 2-form, for the Euclidean background metric. Used to
/// pin the eigenvalue convention: -3 on the 7-piece, +1 on the 21-piece.
pub fn star_phi_wedge_2form(phi: &AdmissibleFourForm, beta: &MultiTensor) -> MultiTensor {
    assert_eq!(beta.rank(), 2);
    let p = phi.value();
    let mut out = MultiTensor::zeros(2);
    let all: Vec<usize> = (0..DIM).collect();
    for i in 0..DIM {
        for j in 0..DIM {
            if i == j {
                continue;
            }
            let pool: Vec<usize> = all.iter().copied().filter(|&x| x != i && x != j).collect();
            let mut acc = 0.0;
            for p1 in increasing_subsets(&pool, 4) {
                let p2: Vec<usize> = pool.iter().copied().filter(|x| !p1.contains(x)).collect();
                let mut concat = p1.clone();
                concat.extend_from_slice(&p2);
                concat.push(i);
                concat.push(j);
                let sign = permutation_sign(&concat);
                acc += sign * p.get(&p1) * beta.at2(p2[0], p2[1]);
            }
            out.set(&[i, j], acc);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Fixed basis of the 7-piece at the model point
// ---------------------------------------------------------------------------

/// Orthonormal basis of the 7-dimensional piece of 2-forms at the model
/// point, computed once from the eigen-decomposition of the contraction
/// operator. Normalized so that the full double contraction X_{ij} X_{ij}
/// of each element is 1.
pub struct Lambda27Basis {
    forms: Vec<MultiTensor>,
}

impl Lambda27Basis {
    pub fn forms(&self) -> &[MultiTensor] {
        &self.forms
    }

    /// Coordinates of an antisymmetric 2-form in the basis (full double
    /// contraction against each element).
    pub fn coords(&self, x: &MultiTensor) -> [f64; 7] {
        let mut out = [0.0_f64; 7];
        for (k, f) in self.forms.iter().enumerate() {
            out[k] = x.dot(f);
        }
        out
    }

    pub fn from_coords(&self, c: &[f64; 7]) -> MultiTensor {
        let mut out = MultiTensor::zeros(2);
        for (k, f) in self.forms.iter().enumerate() {
            out.add_scaled(f, c[k]);
        }
        out
    }
}

fn build_lambda27() -> Lambda27Basis {
    let phi = standard_cayley_form();
    let pairs = increasing_tuples(2);
    let n = pairs.len(); // 28
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (col, ab) in pairs.iter().enumerate() {
        for (row, ij) in pairs.iter().enumerate() {
            // C on the normalized basis 2-form: sqrt2-isometric coordinates
            m[(row, col)] = 2.0 * phi.value().at4(ab[0], ab[1], ij[0], ij[1]);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut forms = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if (lambda + 6.0).abs() < 1e-6 {
            let col = eig.eigenvectors.column(k);
            let mut f = MultiTensor::zeros(2);
            for (idx, ab) in pairs.iter().enumerate() {
                let v = col[idx] / std::f64::consts::SQRT_2;
                f.set(&[ab[0], ab[1]], v);
                f.set(&[ab[1], ab[0]], -v);
            }
            // deterministic sign: first max-magnitude coordinate positive
            let lead = col.iter().cloned().fold(0.0_f64, |acc, x| {
                if x.abs() > acc.abs() {
                    x
                } else {
                    acc
                }
            });
            if lead < 0.0 {
                f = f.scale(-1.0);
            }
            forms.push(f);
        }
    }
    assert_eq!(forms.len(), 7, "the -6 eigenspace must be 7-dimensional");
    Lambda27Basis { forms }
}

/// The shared model-point basis of the 7-piece.
pub fn lambda27_basis() -> &'static Lambda27Basis {
    static BASIS: OnceLock<Lambda27Basis> = OnceLock::new();
    BASIS.get_or_init(build_lambda27)
}

/// Exterior derivative helper reused by tests and fields: full
/// antisymmetrization of a rank-(k+1) tensor whose first slot holds a partial
/// derivative, scaled to the alternating-sum convention.
pub fn alternating_extension(partial: &MultiTensor) -> Result<MultiTensor> {
    let r = partial.rank();
    Ok(antisymmetrize(partial)?.scale(r as f64))
}

/// Iterates all multi-indices of the given rank (odometer order).
pub fn for_each_index(rank: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; rank];
    if rank == 0 {
        f(&idx);
        return;
    }
    loop {
        f(&idx);
        if !advance(&mut idx) {
            break;
        }
    }
}

/// Number of components of a rank-r tensor (8^r).
pub fn component_count(rank: usize) -> usize {
    size_of_rank(rank)
}
