//! Dense tensor algebra over the fixed 8-dimensional index set.
//!
//! All tensors are stored row-major with every index treated as a lower
//! index; raising happens only through explicit contraction with the inverse
//! of a [`MetricTensor`]. This mirrors computing in an orthonormal frame:
//! with the Euclidean metric every contraction is a plain repeated-index sum.

use crate::error::{Result, SpinError};

/// Dimension of the underlying vector space.
pub const DIM: usize = 8;

/// Largest supported rank. 8^5 = 32768 entries; dense storage stays cheap.
pub const MAX_RANK: usize = 5;

/// Dense real tensor of rank 0..=5 with all indices running over 0..8.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTensor {
    rank: usize,
    data: Vec<f64>,
}

#[inline]
pub(crate) fn size_of_rank(rank: usize) -> usize {
    DIM.pow(rank as u32)
}

impl MultiTensor {
    pub fn zeros(rank: usize) -> Self {
        assert!(rank <= MAX_RANK, "rank {rank} exceeds MAX_RANK");
        MultiTensor {
            rank,
            data: vec![0.0; size_of_rank(rank)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        MultiTensor {
            rank: 0,
            data: vec![value],
        }
    }

    /// Rank-2 identity (the Euclidean metric in the background frame).
    pub fn identity2() -> Self {
        let mut t = MultiTensor::zeros(2);
        for i in 0..DIM {
            t.data[i * DIM + i] = 1.0;
        }
        t
    }

    pub fn from_data(rank: usize, data: Vec<f64>) -> Result<Self> {
        if rank > MAX_RANK {
            return Err(SpinError::RankOverflow(rank));
        }
        if data.len() != size_of_rank(rank) {
            return Err(SpinError::InvalidArgument(format!(
                "rank-{rank} tensor needs {} components, got {}",
                size_of_rank(rank),
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(SpinError::InvalidArgument(
                "tensor components must be finite".into(),
            ));
        }
        Ok(MultiTensor { rank, data })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn lin(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        let mut l = 0;
        for &i in idx {
            debug_assert!(i < DIM);
            l = l * DIM + i;
        }
        l
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.lin(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], value: f64) {
        let l = self.lin(idx);
        self.data[l] = value;
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * DIM + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * DIM + j) * DIM + k]
    }

    #[inline]
    pub fn at4(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * DIM + j) * DIM + k) * DIM + l]
    }

    #[inline]
    pub fn at5(&self, m: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[(((m * DIM + i) * DIM + j) * DIM + k) * DIM + l]
    }

    pub fn scale(&self, c: f64) -> Self {
        MultiTensor {
            rank: self.rank,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MultiTensor, c: f64) {
        assert_eq!(self.rank, other.rank);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Plain Euclidean Frobenius dot product (no metric raising).
    pub fn dot(&self, other: &MultiTensor) -> f64 {
        assert_eq!(self.rank, other.rank);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2(&self) -> Self {
        assert_eq!(self.rank, 2);
        let mut out = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                out.data[j * DIM + i] = self.data[i * DIM + j];
            }
        }
        out
    }

    /// Symmetric part of a rank-2 tensor.
    pub fn sym2(&self) -> Self {
        assert_eq!(self.rank, 2);
        let mut out = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                out.data[i * DIM + j] = 0.5 * (self.at2(i, j) + self.at2(j, i));
            }
        }
        out
    }

    /// Antisymmetric part of a rank-2 tensor.
    pub fn skew2(&self) -> Self {
        assert_eq!(self.rank, 2);
        let mut out = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                out.data[i * DIM + j] = 0.5 * (self.at2(i, j) - self.at2(j, i));
            }
        }
        out
    }

    pub fn trace2(&self) -> f64 {
        assert_eq!(self.rank, 2);
        (0..DIM).map(|i| self.at2(i, i)).sum()
    }

    /// Max relative deviation from full antisymmetry, checked on adjacent
    /// transpositions (which generate the symmetric group).
    pub fn antisymmetry_deviation(&self) -> f64 {
        if self.rank < 2 {
            return 0.0;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        let mut idx = vec![0usize; self.rank];
        for s in 0..self.rank - 1 {
            idx.iter_mut().for_each(|i| *i = 0);
            loop {
                let a = self.get(&idx);
                idx.swap(s, s + 1);
                let b = self.get(&idx);
                idx.swap(s, s + 1);
                worst = worst.max((a + b).abs());
                if !advance(&mut idx) {
                    break;
                }
            }
        }
        worst / scale
    }

    pub fn ensure_antisymmetric(&self, tol: f64) -> Result<()> {
        let dev = self.antisymmetry_deviation();
        if dev > tol {
            Err(SpinError::NotAntisymmetric { deviation: dev })
        } else {
            Ok(())
        }
    }
}

impl std::ops::Add<&MultiTensor> for &MultiTensor {
    type Output = MultiTensor;
    fn add(self, rhs: &MultiTensor) -> MultiTensor {
        assert_eq!(self.rank, rhs.rank);
        MultiTensor {
            rank: self.rank,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl std::ops::Sub<&MultiTensor> for &MultiTensor {
    type Output = MultiTensor;
    fn sub(self, rhs: &MultiTensor) -> MultiTensor {
        assert_eq!(self.rank, rhs.rank);
        MultiTensor {
            rank: self.rank,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Odometer increment over rank-many base-8 digits. Returns false on wrap.
#[inline]
pub(crate) fn advance(idx: &mut [usize]) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < DIM {
            return true;
        }
        idx[i] = 0;
    }
    false
}

/// Sign of a permutation given as a sequence of distinct values.
pub(crate) fn permutation_sign(perm: &[usize]) -> f64 {
    let mut inversions = 0usize;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// All permutations of 0..r with their signs.
pub(crate) fn signed_permutations(r: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..r).collect();
    heap_permute(&mut current, r, &mut out);
    out
}

fn heap_permute(current: &mut Vec<usize>, k: usize, out: &mut Vec<(Vec<usize>, f64)>) {
    if k == 1 {
        let sign = permutation_sign(current);
        out.push((current.clone(), sign));
        return;
    }
    for i in 0..k {
        heap_permute(current, k - 1, out);
        if k % 2 == 0 {
            current.swap(i, k - 1);
        } else {
            current.swap(0, k - 1);
        }
    }
}

/// Increasing k-subsets of 0..DIM.
pub(crate) fn increasing_tuples(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut buf = Vec::with_capacity(k);
    fn rec(start: usize, k: usize, buf: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if buf.len() == k {
            out.push(buf.clone());
            return;
        }
        for i in start..DIM {
            buf.push(i);
            rec(i + 1, k, buf, out);
            buf.pop();
        }
    }
    rec(0, k, &mut buf, &mut out);
    out
}

/// Positive-definite symmetric metric with cached inverse and determinant.
#[derive(Clone, Debug)]
pub struct MetricTensor {
    g: MultiTensor,
    inv: MultiTensor,
    det: f64,
    euclidean: bool,
}

impl MetricTensor {
    /// The background Euclidean metric.
    pub fn euclidean() -> Self {
        MetricTensor {
            g: MultiTensor::identity2(),
            inv: MultiTensor::identity2(),
            det: 1.0,
            euclidean: true,
        }
    }

    /// Builds a metric from a symmetric positive-definite rank-2 tensor.
    pub fn from_tensor(g: MultiTensor) -> Result<Self> {
        if g.rank() != 2 {
            return Err(SpinError::RankMismatch {
                expected: 2,
                got: g.rank(),
            });
        }
        let m = nalgebra::DMatrix::from_fn(DIM, DIM, |i, j| 0.5 * (g.at2(i, j) + g.at2(j, i)));
        let chol = m.clone().cholesky().ok_or(SpinError::NotPositiveDefinite)?;
        let det = chol.determinant();
        let inv_m = chol.inverse();
        let mut inv = MultiTensor::zeros(2);
        let mut gs = MultiTensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                inv.data_mut()[i * DIM + j] = inv_m[(i, j)];
                gs.data_mut()[i * DIM + j] = m[(i, j)];
            }
        }
        let euclidean = (0..DIM * DIM).all(|l| {
            let target = if l / DIM == l % DIM { 1.0 } else { 0.0 };
            (gs.data()[l] - target).abs() < 1e-15
        });
        Ok(MetricTensor {
            g: gs,
            inv,
            det,
            euclidean,
        })
    }

    #[inline]
    pub fn tensor(&self) -> &MultiTensor {
        &self.g
    }

    #[inline]
    pub fn inverse(&self) -> &MultiTensor {
        &self.inv
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.det
    }

    #[inline]
    pub fn sqrt_det(&self) -> f64 {
        self.det.sqrt()
    }

    #[inline]
    pub fn is_euclidean(&self) -> bool {
        self.euclidean
    }

    /// Raises one slot: out_{.. a ..} = g^{ab} t_{.. b ..}.
    pub fn raise_slot(&self, t: &MultiTensor, slot: usize) -> MultiTensor {
        assert!(slot < t.rank());
        if self.euclidean {
            return t.clone();
        }
        let r = t.rank();
        let stride = DIM.pow((r - 1 - slot) as u32);
        let block = stride * DIM;
        let mut out = MultiTensor::zeros(r);
        let data = t.data();
        let o = out.data_mut();
        for base in (0..data.len()).step_by(block) {
            for rem in 0..stride {
                for a in 0..DIM {
                    let mut acc = 0.0;
                    for b in 0..DIM {
                        acc += self.inv.at2(a, b) * data[base + b * stride + rem];
                    }
                    o[base + a * stride + rem] = acc;
                }
            }
        }
        out
    }

    /// Raises every slot of `t`.
    pub fn raise_all(&self, t: &MultiTensor) -> MultiTensor {
        if self.euclidean {
            return t.clone();
        }
        let mut out = t.clone();
        for s in 0..t.rank() {
            out = self.raise_slot(&out, s);
        }
        out
    }
}

/// Metric contraction of `t1` and `t2` over the given `(slot1, slot2)` pairs.
///
/// Free slots of `t1` come first in the result, then free slots of `t2`.
/// Each paired index is summed through g^{ab}; with the Euclidean metric this
/// is the plain repeated-index sum of the orthonormal-frame convention.
pub fn contract(
    t1: &MultiTensor,
    t2: &MultiTensor,
    pairs: &[(usize, usize)],
    g: &MetricTensor,
) -> Result<MultiTensor> {
    let (r1, r2, p) = (t1.rank(), t2.rank(), pairs.len());
    let mut seen1 = [false; MAX_RANK];
    let mut seen2 = [false; MAX_RANK];
    for &(s1, s2) in pairs {
        if s1 >= r1 {
            return Err(SpinError::SlotOutOfRange { slot: s1, rank: r1 });
        }
        if s2 >= r2 {
            return Err(SpinError::SlotOutOfRange { slot: s2, rank: r2 });
        }
        if seen1[s1] || seen2[s2] {
            return Err(SpinError::InvalidArgument(
                "contraction pairs reuse a slot".into(),
            ));
        }
        seen1[s1] = true;
        seen2[s2] = true;
    }
    let out_rank = r1 + r2 - 2 * p;
    if out_rank > MAX_RANK {
        return Err(SpinError::RankOverflow(out_rank));
    }

    // Raise the paired slots of t2 once; contraction is then Euclidean.
    let mut t2r = t2.clone();
    if !g.is_euclidean() {
        for &(_, s2) in pairs {
            t2r = g.raise_slot(&t2r, s2);
        }
    }

    let free1: Vec<usize> = (0..r1).filter(|s| !seen1[*s]).collect();
    let free2: Vec<usize> = (0..r2).filter(|s| !seen2[*s]).collect();
    let stride = |rank: usize, slot: usize| DIM.pow((rank - 1 - slot) as u32);

    let mut out = MultiTensor::zeros(out_rank);
    let mut out_idx = vec![0usize; out_rank];
    let mut c_idx = vec![0usize; p];
    loop {
        let mut base1 = 0usize;
        let mut base2 = 0usize;
        for (k, &s) in free1.iter().enumerate() {
            base1 += out_idx[k] * stride(r1, s);
        }
        for (k, &s) in free2.iter().enumerate() {
            base2 += out_idx[free1.len() + k] * stride(r2, s);
        }
        let mut acc = 0.0;
        c_idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let mut l1 = base1;
            let mut l2 = base2;
            for (k, &(s1, s2)) in pairs.iter().enumerate() {
                l1 += c_idx[k] * stride(r1, s1);
                l2 += c_idx[k] * stride(r2, s2);
            }
            acc += t1.data()[l1] * t2r.data()[l2];
            if p == 0 || !advance(&mut c_idx) {
                break;
            }
        }
        let pos = if out_rank == 0 { 0 } else { out.lin(&out_idx) };
        out.data_mut()[pos] = acc;
        if out_rank == 0 || !advance(&mut out_idx) {
            break;
        }
    }
    Ok(out)
}

/// Inner product t1_{i...} t2_{j...} g^{ij} ... over all slots.
pub fn inner(t1: &MultiTensor, t2: &MultiTensor, g: &MetricTensor) -> Result<f64> {
    if t1.rank() != t2.rank() {
        return Err(SpinError::RankMismatch {
            expected: t1.rank(),
            got: t2.rank(),
        });
    }
    if g.is_euclidean() {
        return Ok(t1.dot(t2));
    }
    Ok(t1.dot(&g.raise_all(t2)))
}

/// Squared norm |t|^2 with respect to `g`; nonnegative.
pub fn norm_sq(t: &MultiTensor, g: &MetricTensor) -> f64 {
    inner(t, t, g).expect("equal ranks")
}

/// Full symmetrization with 1/rank! normalization. Idempotent.
pub fn symmetrize(t: &MultiTensor) -> Result<MultiTensor> {
    alternate(t, false)
}

/// Full antisymmetrization with 1/rank! normalization. Idempotent.
pub fn antisymmetrize(t: &MultiTensor) -> Result<MultiTensor> {
    alternate(t, true)
}

fn alternate(t: &MultiTensor, signed: bool) -> Result<MultiTensor> {
    let r = t.rank();
    if r < 2 {
        return Err(SpinError::RankTooSmall {
            required: 2,
            got: r,
        });
    }
    let perms = signed_permutations(r);
    let norm = 1.0 / perms.len() as f64;
    let mut out = MultiTensor::zeros(r);
    let mut idx = vec![0usize; r];
    let mut pidx = vec![0usize; r];
    loop {
        let mut acc = 0.0;
        for (perm, sign) in &perms {
            for (k, &p) in perm.iter().enumerate() {
                pidx[k] = idx[p];
            }
            let v = t.get(&pidx);
            acc += if signed { sign * v } else { v };
        }
        let pos = out.lin(&idx);
        out.data_mut()[pos] = acc * norm;
        if !advance(&mut idx) {
            break;
        }
    }
    Ok(out)
}

/// Tensor (outer) product.
pub fn outer(a: &MultiTensor, b: &MultiTensor) -> Result<MultiTensor> {
    let r = a.rank() + b.rank();
    if r > MAX_RANK {
        return Err(SpinError::RankOverflow(r));
    }
    let mut out = MultiTensor::zeros(r);
    let nb = b.len();
    let o = out.data_mut();
    for (i, &x) in a.data().iter().enumerate() {
        for (j, &y) in b.data().iter().enumerate() {
            o[i * nb + j] = x * y;
        }
    }
    Ok(out)
}

/// Wedge product of antisymmetric forms:
/// (a ^ b) = (p+q)! / (p! q!) Alt(a (x) b).
pub fn wedge(a: &MultiTensor, b: &MultiTensor) -> Result<MultiTensor> {
    let (p, q) = (a.rank(), b.rank());
    if p + q > MAX_RANK {
        return Err(SpinError::RankOverflow(p + q));
    }
    if p == 0 {
        return Ok(b.scale(a.data()[0]));
    }
    if q == 0 {
        return Ok(a.scale(b.data()[0]));
    }
    let prod = outer(a, b)?;
    let alt = antisymmetrize(&prod)?;
    let mut coeff = 1.0;
    for k in 1..=(p + q) {
        coeff *= k as f64;
    }
    for k in 1..=p {
        coeff /= k as f64;
    }
    for k in 1..=q {
        coeff /= k as f64;
    }
    Ok(alt.scale(coeff))
}

/// Interior product (v . form): contracts the vector's components into the
/// first slot. Antiderivation of degree -1; no metric is involved because
/// `v` carries contravariant components in the background frame.
pub fn interior(v: &MultiTensor, form: &MultiTensor) -> Result<MultiTensor> {
    if v.rank() != 1 {
        return Err(SpinError::RankMismatch {
            expected: 1,
            got: v.rank(),
        });
    }
    if form.rank() == 0 {
        return Err(SpinError::RankTooSmall {
            required: 1,
            got: 0,
        });
    }
    let r = form.rank();
    let block = size_of_rank(r - 1);
    let mut out = MultiTensor::zeros(r - 1);
    let o = out.data_mut();
    for a in 0..DIM {
        let va = v.data()[a];
        if va == 0.0 {
            continue;
        }
        let chunk = &form.data()[a * block..(a + 1) * block];
        for (dst, src) in o.iter_mut().zip(chunk) {
            *dst += va * src;
        }
    }
    Ok(out)
}

/// Hodge star of an antisymmetric k-form, 3 <= k <= 5, with respect to `g`
/// and the fixed positive orientation of the background frame.
///
/// On 4-forms in 8 dimensions, star(star(s)) = s and star(Phi0) = Phi0.
pub fn hodge_star(form: &MultiTensor, g: &MetricTensor) -> Result<MultiTensor> {
    let k = form.rank();
    if k < 3 {
        // result rank 8-k would not fit in MultiTensor storage
        return Err(SpinError::RankOverflow(DIM - k));
    }
    form.ensure_antisymmetric(1e-8)?;
    let raised = g.raise_all(form);
    let sqrt_det = g.sqrt_det();
    let out_rank = DIM - k;
    let mut out = MultiTensor::zeros(out_rank);

    let in_tuples = increasing_tuples(k);
    let perms = signed_permutations(out_rank);
    let mut scatter = vec![0usize; out_rank];
    for tuple in &in_tuples {
        // complement of the input tuple, increasing
        let mut used = [false; DIM];
        tuple.iter().for_each(|&i| used[i] = true);
        let comp: Vec<usize> = (0..DIM).filter(|&i| !used[i]).collect();
        let mut concat = tuple.clone();
        concat.extend_from_slice(&comp);
        let sign = permutation_sign(&concat);
        let value = sqrt_det * sign * raised.get(tuple);
        // antisymmetric completion over the output indices
        for (perm, psign) in &perms {
            for (slot, &p) in perm.iter().enumerate() {
                scatter[slot] = comp[p];
            }
            let pos = out.lin(&scatter);
            out.data_mut()[pos] = value * psign;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    /// Independent sign oracle: the permutation symbol via explicit sorting.
    fn eps_oracle(idx: &[usize]) -> f64 {
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                if idx[i] == idx[j] {
                    return 0.0;
                }
            }
        }
        permutation_sign(idx)
    }

    fn basis_form(indices: &[usize]) -> MultiTensor {
        // e^{i1} ^ ... ^ e^{ik} as an antisymmetric component array
        let k = indices.len();
        let mut t = MultiTensor::zeros(k);
        for (perm, sign) in signed_permutations(k) {
            let idx: Vec<usize> = perm.iter().map(|&p| indices[p]).collect();
            t.set(&idx, sign);
        }
        t
    }

    #[test]
    fn contract_identity_with_identity() {
        let delta = MultiTensor::identity2();
        let g = MetricTensor::euclidean();
        let out = contract(&delta, &delta, &[(1, 0)], &g).unwrap();
        assert_eq!(out, delta);
    }

    #[test]
    fn contract_rejects_rank_overflow_and_bad_slots() {
        let g = MetricTensor::euclidean();
        let t3 = MultiTensor::zeros(3);
        assert!(matches!(
            contract(&t3, &t3, &[], &g),
            Err(SpinError::RankOverflow(6))
        ));
        let t2 = MultiTensor::zeros(2);
        assert!(matches!(
            contract(&t2, &t2, &[(2, 0)], &g),
            Err(SpinError::SlotOutOfRange { .. })
        ));
    }

    #[test]
    fn symmetrize_antisymmetrize_rank2_decomposition() {
        let mut t = MultiTensor::zeros(2);
        for (l, v) in t.data_mut().iter_mut().enumerate() {
            *v = (l as f64 * 0.7).sin();
        }
        let s = symmetrize(&t).unwrap();
        let a = antisymmetrize(&t).unwrap();
        let sum = &s + &a;
        assert!((&sum - &t).max_abs() < 1e-15);
        // idempotent and mutually annihilating
        assert!((&symmetrize(&s).unwrap() - &s).max_abs() < 1e-15);
        assert!((&antisymmetrize(&a).unwrap() - &a).max_abs() < 1e-15);
        assert!(antisymmetrize(&s).unwrap().max_abs() < 1e-15);
        assert!(symmetrize(&a).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn antisymmetrize_rejects_rank_below_two() {
        assert!(antisymmetrize(&MultiTensor::zeros(1)).is_err());
    }

    #[test]
    fn wedge_of_parallel_covectors_vanishes() {
        let mut e1 = MultiTensor::zeros(1);
        e1.data_mut()[0] = 1.0;
        let w = wedge(&e1, &e1).unwrap();
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn wedge_matches_basis_convention() {
        let mut e1 = MultiTensor::zeros(1);
        e1.data_mut()[0] = 1.0;
        let mut e2 = MultiTensor::zeros(1);
        e2.data_mut()[1] = 1.0;
        let w = wedge(&e1, &e2).unwrap();
        assert_eq!(w.at2(0, 1), 1.0);
        assert_eq!(w.at2(1, 0), -1.0);
    }

    #[test]
    fn interior_contracts_first_slot() {
        let mut e1 = MultiTensor::zeros(1);
        e1.data_mut()[0] = 1.0;
        let form = basis_form(&[0, 1]);
        let out = interior(&e1, &form).unwrap();
        // e_1 . (e^1 ^ e^2) = e^2
        assert_eq!(out.data()[1], 1.0);
        assert_eq!(out.data()[0], 0.0);
    }

    #[test]
    fn hodge_star_of_first_quadruple() {
        // star(e^1^e^2^e^3^e^4) = e^5^e^6^e^7^e^8; sign from the permutation
        // parity oracle
        let g = MetricTensor::euclidean();
        let form = basis_form(&[0, 1, 2, 3]);
        let star = hodge_star(&form, &g).unwrap();
        let expected_sign = eps_oracle(&[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(star.at4(4, 5, 6, 7), expected_sign);
        let back = hodge_star(&star, &g).unwrap();
        assert!((&back - &form).max_abs() < 1e-14);
    }

    #[test]
    fn hodge_star_mixed_quadruple_sign() {
        let g = MetricTensor::euclidean();
        let form = basis_form(&[0, 2, 4, 6]);
        let star = hodge_star(&form, &g).unwrap();
        let expected_sign = eps_oracle(&[0, 2, 4, 6, 1, 3, 5, 7]);
        assert_eq!(star.at4(1, 3, 5, 7), expected_sign);
    }

    #[test]
    fn hodge_star_rejects_non_antisymmetric() {
        let mut t = MultiTensor::zeros(4);
        t.set(&[0, 0, 1, 2], 1.0);
        assert!(matches!(
            hodge_star(&t, &MetricTensor::euclidean()),
            Err(SpinError::NotAntisymmetric { .. })
        ));
    }

    #[test]
    fn norm_scaling_is_quartic_in_component_scale() {
        let mut t = MultiTensor::zeros(3);
        for (l, v) in t.data_mut().iter_mut().enumerate() {
            *v = ((l * 37 % 101) as f64 - 50.0) / 50.0;
        }
        let g = MetricTensor::euclidean();
        let c = 1.7;
        let n0 = norm_sq(&t, &g);
        let n1 = norm_sq(&t.scale(c * c), &g);
        assert!(rel(n1, c.powi(4) * n0) < 1e-12);
    }

    #[test]
    fn metric_from_tensor_rejects_indefinite() {
        let mut g = MultiTensor::identity2();
        g.set(&[0, 0], -1.0);
        assert!(MetricTensor::from_tensor(g).is_err());
    }

    #[test]
    fn contract_with_metric_raises_paired_slots() {
        // diag(4) metric: g^{ab} = diag(1/4); contracting two vectors e_1.e_1
        let mut gt = MultiTensor::identity2();
        gt.set(&[0, 0], 4.0);
        let g = MetricTensor::from_tensor(gt).unwrap();
        let mut v = MultiTensor::zeros(1);
        v.data_mut()[0] = 2.0;
        let out = contract(&v, &v, &[(0, 0)], &g).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-14);
    }
}
