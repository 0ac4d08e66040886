//! Dense Fock-space oracle.
//!
//! Exponential-cost reference implementations of occupation-number tensors,
//! second-quantization operators and sector-restricted linear algebra. Every
//! compact format in this crate is tested against this module at desk scale
//! (K <= 10), so the code here favours obviousness over speed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Dense operators are guarded to K <= 10 (matrix side 1024).
pub const DENSE_OP_GUARD: usize = 10;
/// Dense tensors are guarded to K <= 12.
pub const DENSE_TENSOR_GUARD: usize = 12;

/// Occupation-number tensor on `n_1 x ... x n_K`, row-major with the first
/// mode slowest (matching the Kronecker-product order of the operators).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T: Scalar> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![T::zero(); len] }
    }

    /// All modes of size two (fermionic Fock space over `k` orbitals).
    pub fn zeros_fock(k: usize) -> Self {
        Self::zeros(&vec![2; k])
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Linear index of a multi-index, first mode slowest.
    pub fn linear_index(dims: &[usize], alpha: &[usize]) -> usize {
        debug_assert_eq!(dims.len(), alpha.len());
        let mut idx = 0;
        for (a, n) in alpha.iter().zip(dims) {
            debug_assert!(a < n);
            idx = idx * n + a;
        }
        idx
    }

    pub fn get(&self, alpha: &[usize]) -> T {
        self.data[Self::linear_index(&self.dims, alpha)]
    }

    pub fn set(&mut self, alpha: &[usize], value: T) {
        let idx = Self::linear_index(&self.dims, alpha);
        self.data[idx] = value;
    }

    /// Unit occupation tensor `e_D`: orbitals in `occupied` (1-based) are set.
    pub fn slater(occupied: &[usize], k: usize) -> Self {
        let mut alpha = vec![0usize; k];
        for &i in occupied {
            alpha[i - 1] = 1;
        }
        let mut t = Self::zeros_fock(k);
        t.set(&alpha, T::one());
        t
    }

    /// The all-unoccupied vacuum state.
    pub fn vacuum(k: usize) -> Self {
        Self::slater(&[], k)
    }

    pub fn as_vector(&self) -> DVector<T> {
        DVector::from_column_slice(&self.data)
    }

    pub fn norm(&self) -> T {
        self.data.iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims, "dot of incompatible tensors");
        self.data.iter().zip(&other.data).fold(T::zero(), |s, (&a, &b)| s + a * b)
    }

    pub fn axpy(&mut self, c: T, other: &Self) {
        assert_eq!(self.dims, other.dims);
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += c * y;
        }
    }

    pub fn scale(&mut self, c: T) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    /// Largest absolute difference to another tensor.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Iterate multi-indices in linear order.
    pub fn indices(dims: &[usize]) -> MultiIndexIter {
        MultiIndexIter { dims: dims.to_vec(), next: Some(vec![0; dims.len()]) }
    }
}

pub struct MultiIndexIter {
    dims: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for MultiIndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for pos in (0..self.dims.len()).rev() {
            succ[pos] += 1;
            if succ[pos] < self.dims[pos] {
                self.next = Some(succ);
                return Some(current);
            }
            succ[pos] = 0;
        }
        // Overflowed every digit: `current` was the last index.
        self.next = None;
        Some(current)
    }
}

/// Dense linear operator on a mode-factorized space, stored as a square
/// matrix over the row-major basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator<T: Scalar> {
    pub dims: Vec<usize>,
    pub data: DMatrix<T>,
}

impl<T: Scalar> DenseOperator<T> {
    pub fn identity(dims: &[usize]) -> Self {
        let side = dims.iter().product();
        Self { dims: dims.to_vec(), data: DMatrix::identity(side, side) }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let side = dims.iter().product();
        Self { dims: dims.to_vec(), data: DMatrix::zeros(side, side) }
    }

    pub fn side(&self) -> usize {
        self.data.nrows()
    }

    pub fn apply(&self, x: &DenseTensor<T>) -> DenseTensor<T> {
        assert_eq!(self.dims, x.dims, "operator/tensor dims");
        let y = &self.data * x.as_vector();
        DenseTensor { dims: x.dims.clone(), data: y.as_slice().to_vec() }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dims, other.dims, "operator dims");
        Self { dims: self.dims.clone(), data: &self.data * &other.data }
    }

    pub fn transpose(&self) -> Self {
        Self { dims: self.dims.clone(), data: self.data.transpose() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dims, other.dims);
        Self { dims: self.dims.clone(), data: &self.data + &other.data }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.scale(c) }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims);
        let mut m = T::zero();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            m = m.max((*a - *b).abs());
        }
        m
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
    }

    pub fn commutator_norm(&self, other: &Self) -> T {
        let ab = self.matmul(other);
        let ba = other.matmul(self);
        ab.max_abs_diff(&ba)
    }
}

/// Kronecker product of a list of matrices, first factor slowest.
pub fn kron_chain<T: Scalar>(mats: &[DMatrix<T>]) -> DMatrix<T> {
    let mut acc = DMatrix::identity(1, 1);
    for m in mats {
        acc = acc.kronecker(m);
    }
    acc
}

/// The elementary 2x2 components of second quantization.
pub fn elem_identity<T: Scalar>() -> DMatrix<T> {
    DMatrix::identity(2, 2)
}

/// Jordan-Wigner sign factor `S = diag(1, -1)`.
pub fn elem_sign<T: Scalar>() -> DMatrix<T> {
    DMatrix::from_row_slice(2, 2, &[T::one(), T::zero(), T::zero(), -T::one()])
}

/// Elementary annihilator `A = [[0, 1], [0, 0]]`.
pub fn elem_annihilate<T: Scalar>() -> DMatrix<T> {
    DMatrix::from_row_slice(2, 2, &[T::zero(), T::one(), T::zero(), T::zero()])
}

/// Elementary creator `A* = [[0, 0], [1, 0]]`.
pub fn elem_create<T: Scalar>() -> DMatrix<T> {
    elem_annihilate::<T>().transpose()
}

/// Occupation projector `A*A = diag(0, 1)`.
pub fn elem_count<T: Scalar>() -> DMatrix<T> {
    DMatrix::from_row_slice(2, 2, &[T::zero(), T::zero(), T::zero(), T::one()])
}

fn check_orbital(i: usize, k: usize) -> Result<()> {
    if i == 0 || i > k {
        return Err(Error::IndexOutOfRange { index: i, order: k });
    }
    Ok(())
}

fn check_guard(k: usize) -> Result<()> {
    if k > DENSE_OP_GUARD {
        return Err(Error::DenseGuard { order: k, max: DENSE_OP_GUARD });
    }
    Ok(())
}

/// Annihilation operator `a_i` on K orbitals: `S x ... x S x A x I x ... x I`
/// with the Jordan-Wigner string on modes left of `i`.
pub fn build_annihilation<T: Scalar>(i: usize, k: usize) -> Result<DenseOperator<T>> {
    check_orbital(i, k)?;
    check_guard(k)?;
    let mut factors = Vec::with_capacity(k);
    for pos in 1..=k {
        factors.push(match pos.cmp(&i) {
            std::cmp::Ordering::Less => elem_sign(),
            std::cmp::Ordering::Equal => elem_annihilate(),
            std::cmp::Ordering::Greater => elem_identity(),
        });
    }
    Ok(DenseOperator { dims: vec![2; k], data: kron_chain(&factors) })
}

/// Creation operator `a_i^*`, the transpose of `a_i`.
pub fn build_creation<T: Scalar>(i: usize, k: usize) -> Result<DenseOperator<T>> {
    Ok(build_annihilation::<T>(i, k)?.transpose())
}

/// Particle number operator `P = sum_i a_i^* a_i = sum_i diag(0,1) at i`.
pub fn build_particle_number<T: Scalar>(k: usize) -> Result<DenseOperator<T>> {
    check_guard(k)?;
    let mut op = DenseOperator::zeros(&vec![2; k]);
    for i in 1..=k {
        let mut factors = vec![elem_identity(); k];
        factors[i - 1] = elem_count();
        op.data += kron_chain(&factors);
    }
    Ok(op)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Truncated particle number operator acting only on modes `1..=k`
/// (`Side::Left`) or `k+1..=K` (`Side::Right`). The returned operator lives
/// on the corresponding sub-product of modes.
pub fn build_truncated_pn<T: Scalar>(k_total: usize, k: usize, side: Side) -> Result<DenseOperator<T>> {
    check_orbital(k, k_total)?;
    let modes = match side {
        Side::Left => k,
        Side::Right => k_total - k,
    };
    check_guard(modes.max(1))?;
    let mut op = DenseOperator::zeros(&vec![2; modes]);
    for i in 1..=modes {
        let mut factors = vec![elem_identity(); modes];
        factors[i - 1] = elem_count();
        op.data += kron_chain(&factors);
    }
    Ok(op)
}

/// Per-mode diagonals of a Laplace-like operator
/// `L = sum_k I x ... x L_k x ... x I` with `L_k = diag(lambda_{k,.})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceSpec<T: Scalar> {
    pub diags: Vec<Vec<T>>,
}

impl<T: Scalar> LaplaceSpec<T> {
    pub fn order(&self) -> usize {
        self.diags.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.diags.iter().map(|d| d.len()).collect()
    }

    /// The eigenvalue `lambda_alpha = sum_k lambda_{k, alpha_k}` of the unit
    /// tensor `e^alpha`.
    pub fn eigenvalue(&self, alpha: &[usize]) -> T {
        alpha
            .iter()
            .zip(&self.diags)
            .fold(T::zero(), |s, (&a, d)| s + d[a])
    }
}

/// Diagonal Laplace-like operator with eigenvalue `lambda_alpha` at basis
/// index `alpha`.
pub fn build_laplace_like<T: Scalar>(spec: &LaplaceSpec<T>) -> Result<DenseOperator<T>> {
    let dims = spec.dims();
    if dims.iter().product::<usize>() > 1 << DENSE_OP_GUARD {
        return Err(Error::DenseGuard { order: spec.order(), max: DENSE_OP_GUARD });
    }
    let side: usize = dims.iter().product();
    let mut data = DMatrix::zeros(side, side);
    for (idx, alpha) in DenseTensor::<T>::indices(&dims).enumerate() {
        data[(idx, idx)] = spec.eigenvalue(&alpha);
    }
    Ok(DenseOperator { dims, data })
}

/// Brute-force second-quantized Hamiltonian
/// `sum_ij t_ij a_i^* a_j + sum_ijkl v_ijkl a_i^* a_j^* a_k a_l`.
///
/// `two_body` is a flat K^4 array indexed `((i*K + j)*K + k)*K + l`
/// (0-based); pass an empty slice for a pure one-particle operator.
pub fn brute_force_hamiltonian<T: Scalar>(
    one_body: &DMatrix<T>,
    two_body: &[T],
) -> Result<DenseOperator<T>> {
    let k = one_body.nrows();
    if one_body.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "one-body coefficients must be square, got {}x{}",
            one_body.nrows(),
            one_body.ncols()
        )));
    }
    if !two_body.is_empty() && two_body.len() != k * k * k * k {
        return Err(Error::DimensionMismatch(format!(
            "two-body coefficients must have K^4 = {} entries, got {}",
            k * k * k * k,
            two_body.len()
        )));
    }
    check_guard(k)?;

    let ann: Vec<DenseOperator<T>> =
        (1..=k).map(|i| build_annihilation(i, k)).collect::<Result<_>>()?;
    let cre: Vec<DenseOperator<T>> = ann.iter().map(|a| a.transpose()).collect();

    let mut h = DenseOperator::zeros(&vec![2; k]);
    for i in 0..k {
        for j in 0..k {
            let t = one_body[(i, j)];
            if t != T::zero() {
                h.data += (cre[i].matmul(&ann[j])).data.scale(t);
            }
        }
    }
    if !two_body.is_empty() {
        for i in 0..k {
            for j in 0..k {
                let cij = cre[i].matmul(&cre[j]);
                for kk in 0..k {
                    let cijk = cij.matmul(&ann[kk]);
                    for l in 0..k {
                        let v = two_body[((i * k + j) * k + kk) * k + l];
                        if v != T::zero() {
                            h.data += (cijk.matmul(&ann[l])).data.scale(v);
                        }
                    }
                }
            }
        }
    }
    Ok(h)
}

/// All occupation multi-indices with Hamming weight `n`, in row-major order.
pub fn sector_basis(k: usize, n: usize) -> Vec<Vec<usize>> {
    DenseTensor::<f64>::indices(&vec![2; k])
        .filter(|alpha| alpha.iter().sum::<usize>() == n)
        .collect()
}

/// Check that `op` maps each particle number sector to itself, up to an
/// absolute tolerance on off-sector entries.
pub fn check_number_preserving<T: Scalar>(op: &DenseOperator<T>, tol: T) -> Result<()> {
    let k = op.dims.len();
    let weights: Vec<usize> = DenseTensor::<T>::indices(&vec![2; k])
        .map(|alpha| alpha.iter().sum())
        .collect();
    let mut worst = T::zero();
    for r in 0..op.side() {
        for c in 0..op.side() {
            if weights[r] != weights[c] {
                worst = worst.max(op.data[(r, c)].abs());
            }
        }
    }
    if worst > tol {
        return Err(Error::NotNumberPreserving {
            mass: worst.to_f64_lossy(),
            tol: tol.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Diagonalize the restriction of a particle-number-preserving symmetric
/// operator to the weight-`n` sector. Eigenvalues ascending; eigenvectors
/// are columns over the `sector_basis(k, n)` ordering.
pub fn sector_diagonalize<T: Scalar>(
    op: &DenseOperator<T>,
    k: usize,
    n: usize,
) -> Result<(DVector<T>, DMatrix<T>)> {
    assert_eq!(op.dims, vec![2; k], "operator must live on K qubits");
    check_number_preserving(op, real::<T>(1e-10))?;
    let basis = sector_basis(k, n);
    let lin: Vec<usize> = basis
        .iter()
        .map(|alpha| DenseTensor::<T>::linear_index(&vec![2; k], alpha))
        .collect();
    let m = basis.len();
    let mut restricted = DMatrix::zeros(m, m);
    for (r, &lr) in lin.iter().enumerate() {
        for (c, &lc) in lin.iter().enumerate() {
            restricted[(r, c)] = op.data[(lr, lc)];
        }
    }
    // Symmetrize roundoff before the eigensolve.
    let sym = (&restricted + restricted.transpose()).scale(real::<T>(0.5));
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).expect("finite eigenvalues")
    });
    let values = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m, m);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// A term `v * a*_{D+} a_{D-}` of a particle-number-preserving operator.
/// Creator and annihilator sets are strictly increasing 1-based orbital
/// lists of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneTerm<T: Scalar> {
    pub creators: Vec<usize>,
    pub annihilators: Vec<usize>,
    pub coeff: T,
}

/// Dense operator of the product
/// `(prod_{i in D+, ascending} a_i^*) (prod_{j in D-, ascending} a_j)`.
///
/// This fixes the sign convention used everywhere in the crate; the same
/// composition order is mirrored by the symbolic programs.
pub fn term_operator<T: Scalar>(
    creators: &[usize],
    annihilators: &[usize],
    k: usize,
) -> Result<DenseOperator<T>> {
    check_guard(k)?;
    let mut op = DenseOperator::identity(&vec![2; k]);
    for &i in creators {
        check_orbital(i, k)?;
        op = op.matmul(&build_creation(i, k)?);
    }
    for &j in annihilators {
        check_orbital(j, k)?;
        op = op.matmul(&build_annihilation(j, k)?);
    }
    Ok(op)
}

fn subsets_of_size(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, n: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if acc.len() == n {
            out.push(acc.clone());
            return;
        }
        for i in start..=k {
            acc.push(i);
            rec(i + 1, k, n, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, k, n, &mut Vec::new(), &mut out);
    out
}

/// Decompose a particle-number-preserving operator into rank-one terms
/// `sum v_{D+,D-} a*_{D+} a_{D-}` by the inductive sector-by-sector
/// construction. The sign `<e_{D+}, a*_{D+} a_{D-} e_{D-}>` is computed by
/// explicit matrix action.
pub fn decompose_pn_operator<T: Scalar>(
    op: &DenseOperator<T>,
    k: usize,
) -> Result<Vec<RankOneTerm<T>>> {
    const DECOMPOSE_GUARD: usize = 5;
    if k > DECOMPOSE_GUARD {
        return Err(Error::DenseGuard { order: k, max: DECOMPOSE_GUARD });
    }
    assert_eq!(op.dims, vec![2; k]);
    check_number_preserving(op, real::<T>(1e-10))?;

    let scale = op.data.iter().fold(T::one(), |m, &x| m.max(x.abs()));
    let drop_tol = real::<T>(1e-13) * scale;

    let mut acc = DenseOperator::zeros(&vec![2; k]);
    let mut terms = Vec::new();
    for n in 0..=k {
        let residual = DenseOperator { dims: op.dims.clone(), data: &op.data - &acc.data };
        let mut new_terms: Vec<(RankOneTerm<T>, DenseOperator<T>)> = Vec::new();
        for dplus in subsets_of_size(k, n) {
            let e_plus = DenseTensor::<T>::slater(&dplus, k);
            for dminus in subsets_of_size(k, n) {
                let e_minus = DenseTensor::<T>::slater(&dminus, k);
                let basis_op = term_operator::<T>(&dplus, &dminus, k)?;
                // <e_{D+}, a*_{D+} a_{D-} e_{D-}> is +-1 for matching sets.
                let sign = e_plus.dot(&basis_op.apply(&e_minus));
                let v = sign * e_plus.dot(&residual.apply(&e_minus));
                if v.abs() > drop_tol {
                    new_terms.push((
                        RankOneTerm { creators: dplus.clone(), annihilators: dminus, coeff: v },
                        basis_op,
                    ));
                }
            }
        }
        for (term, basis_op) in new_terms {
            acc.data += basis_op.data.scale(term.coeff);
            terms.push(term);
        }
    }
    Ok(terms)
}

/// Reassemble `sum v a*_{D+} a_{D-}` densely.
pub fn assemble_terms<T: Scalar>(terms: &[RankOneTerm<T>], k: usize) -> Result<DenseOperator<T>> {
    let mut op = DenseOperator::zeros(&vec![2; k]);
    for t in terms {
        let basis = term_operator::<T>(&t.creators, &t.annihilators, k)?;
        op.data += basis.data.scale(t.coeff);
    }
    Ok(op)
}

/// Ground energy of the quadratic Hamiltonian `sum t_ij a*_i a_j` in the
/// `N`-particle sector: the sum of the `N` smallest eigenvalues of `T`.
/// Independent single-particle oracle for solver tests.
pub fn quadratic_ground_energy<T: Scalar>(one_body: &DMatrix<T>, n: usize) -> T {
    let sym = (one_body + one_body.transpose()).scale(real::<T>(0.5));
    let mut eig: Vec<T> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eig.iter().take(n).fold(T::zero(), |s, &x| s + x)
}

/// Binomial coefficient with saturation at desk scale.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num *= (n - i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as usize
}

/// Group the entries of a sector-restricted operator by sector, used by
/// tests to build random particle-number-preserving operators.
pub fn random_pn_operator<T: Scalar, R: rand::Rng>(k: usize, rng: &mut R) -> DenseOperator<T> {
    let dims = vec![2; k];
    let weights: Vec<usize> = DenseTensor::<T>::indices(&dims)
        .map(|alpha| alpha.iter().sum())
        .collect();
    let side = 1 << k;
    let mut data = DMatrix::zeros(side, side);
    for r in 0..side {
        for c in 0..side {
            if weights[r] == weights[c] {
                data[(r, c)] = T::standard_normal(rng);
            }
        }
    }
    DenseOperator { dims, data }
}

/// Map sector-restricted coefficients back into the full space: given a
/// weight-`n` basis column vector, produce the dense tensor.
pub fn sector_vector_to_tensor<T: Scalar>(coeffs: &DVector<T>, k: usize, n: usize) -> DenseTensor<T> {
    let basis = sector_basis(k, n);
    assert_eq!(coeffs.len(), basis.len());
    let mut t = DenseTensor::zeros_fock(k);
    for (c, alpha) in coeffs.iter().zip(&basis) {
        t.set(alpha, *c);
    }
    t
}

/// Per-sector block sizes admissible at bond `k` per the sector-range rule,
/// as a map `n -> upper bound min(C(k,n), C(K-k, N-n))`.
pub fn sector_size_bounds(k_total: usize, n_total: usize, k: usize) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    let lo = n_total.saturating_sub(k_total - k);
    let hi = n_total.min(k);
    for n in lo..=hi {
        out.insert(n, binomial(k, n).min(binomial(k_total - k, n_total - n)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn annihilation_k1_is_elementary() {
        let a = build_annihilation::<f64>(1, 1).unwrap();
        assert_eq!(a.data, elem_annihilate::<f64>());
    }

    #[test]
    fn annihilation_squares_to_zero() {
        for k in 1..=4 {
            for i in 1..=k {
                let a = build_annihilation::<f64>(i, k).unwrap();
                let sq = a.matmul(&a);
                assert_eq!(sq.data, DMatrix::zeros(1 << k, 1 << k));
            }
        }
    }

    #[test]
    fn index_out_of_range_errors() {
        assert!(matches!(
            build_annihilation::<f64>(0, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            build_annihilation::<f64>(4, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn anticommutation_relations_exact() {
        // a_i a_j* + a_j* a_i = delta_ij I and a_i a_j + a_j a_i = 0,
        // entrywise exact for these integer matrices.
        for k in 1..=4 {
            let id = DenseOperator::<f64>::identity(&vec![2; k]);
            for i in 1..=k {
                for j in 1..=k {
                    let ai = build_annihilation::<f64>(i, k).unwrap();
                    let cj = build_creation::<f64>(j, k).unwrap();
                    let aj = build_annihilation::<f64>(j, k).unwrap();
                    let anti = ai.matmul(&cj).add(&cj.matmul(&ai));
                    let expected = if i == j { id.data.clone() } else { DMatrix::zeros(1 << k, 1 << k) };
                    assert_eq!(anti.data, expected, "a a* + a* a at i={i}, j={j}, K={k}");
                    let anti2 = ai.matmul(&aj).add(&aj.matmul(&ai));
                    assert_eq!(anti2.data, DMatrix::zeros(1 << k, 1 << k));
                }
            }
        }
    }

    #[test]
    fn particle_number_is_hamming_weight() {
        let p = build_particle_number::<f64>(2).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0, 2.0]));
        assert_eq!(p.data, expected);

        // P equals the explicit sum of a*_i a_i.
        for k in 1..=4 {
            let p = build_particle_number::<f64>(k).unwrap();
            let mut sum = DenseOperator::zeros(&vec![2; k]);
            for i in 1..=k {
                let a = build_annihilation::<f64>(i, k).unwrap();
                sum.data += a.transpose().matmul(&a).data;
            }
            assert_eq!(p.data, sum.data);
        }
    }

    #[test]
    fn vacuum_has_zero_particles() {
        let p = build_particle_number::<f64>(4).unwrap();
        let vac = DenseTensor::<f64>::vacuum(4);
        assert_eq!(p.apply(&vac).norm(), 0.0);
    }

    #[test]
    fn truncated_pn_splits() {
        // P<=1 (x) I^{K-1} + I (x) P>1 = P for K=3, as an 8x8 matrix sum.
        let k = 3;
        let left = build_truncated_pn::<f64>(k, 1, Side::Left).unwrap();
        let right = build_truncated_pn::<f64>(k, 1, Side::Right).unwrap();
        let lifted_left = kron_chain(&[left.data.clone(), DMatrix::identity(4, 4)]);
        let lifted_right = kron_chain(&[DMatrix::identity(2, 2), right.data.clone()]);
        let p = build_particle_number::<f64>(k).unwrap();
        assert_eq!(lifted_left + lifted_right, p.data);
    }

    #[test]
    fn laplace_like_reduces_to_particle_number() {
        let k = 3;
        let spec = LaplaceSpec { diags: vec![vec![0.0, 1.0]; k] };
        let l = build_laplace_like(&spec).unwrap();
        let p = build_particle_number::<f64>(k).unwrap();
        assert_eq!(l.data, p.data);
    }

    #[test]
    fn laplace_like_small_example() {
        let spec = LaplaceSpec { diags: vec![vec![0.0, 3.0], vec![0.0, 5.0]] };
        let l = build_laplace_like(&spec).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 5.0, 3.0, 8.0]));
        assert_eq!(l.data, expected);
    }

    #[test]
    fn laplace_like_eigenvalues_enumerate() {
        // Random spec, K=3, general mode sizes: the diagonal realizes every
        // lambda_alpha in enumeration order.
        let mut r = rng(7);
        let dims = [2usize, 3, 2];
        let spec = LaplaceSpec {
            diags: dims
                .iter()
                .map(|&n| (0..n).map(|_| f64::standard_normal(&mut r)).collect())
                .collect(),
        };
        let l = build_laplace_like(&spec).unwrap();
        for (idx, alpha) in DenseTensor::<f64>::indices(&dims).enumerate() {
            assert_eq!(l.data[(idx, idx)], spec.eigenvalue(&alpha));
        }
    }

    #[test]
    fn brute_force_identity_coefficients_give_p() {
        let k = 4;
        let t = DMatrix::<f64>::identity(k, k);
        let h = brute_force_hamiltonian(&t, &[]).unwrap();
        let p = build_particle_number::<f64>(k).unwrap();
        assert_eq!(h.data, p.data);
    }

    #[test]
    fn brute_force_diagonal_matches_laplace() {
        let mut r = rng(11);
        let k = 4;
        let lambda: Vec<f64> = (0..k).map(|_| f64::standard_normal(&mut r)).collect();
        let t = DMatrix::from_diagonal(&DVector::from_vec(lambda.clone()));
        let h = brute_force_hamiltonian(&t, &[]).unwrap();
        let spec = LaplaceSpec { diags: lambda.iter().map(|&l| vec![0.0, l]).collect() };
        let l = build_laplace_like(&spec).unwrap();
        assert!(h.max_abs_diff(&l) < 1e-14);
    }

    #[test]
    fn brute_force_commutes_with_p() {
        let mut r = rng(13);
        let k = 4;
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let x = f64::standard_normal(&mut r);
                t[(i, j)] = x;
                t[(j, i)] = x;
            }
        }
        let h = brute_force_hamiltonian(&t, &[]).unwrap();
        let p = build_particle_number::<f64>(k).unwrap();
        assert!(h.commutator_norm(&p) < 1e-12);

        // Two-body part commutes as well and stays symmetric.
        let v: Vec<f64> = (0..k * k * k * k).map(|_| f64::standard_normal(&mut r)).collect();
        let h2 = brute_force_hamiltonian(&t, &v).unwrap();
        assert!(h2.commutator_norm(&p) < 1e-12);
    }

    #[test]
    fn sector_basis_sizes() {
        assert_eq!(sector_basis(4, 2).len(), 6);
        assert_eq!(sector_basis(6, 3).len(), 20);
        assert_eq!(sector_basis(5, 0).len(), 1);
    }

    #[test]
    fn sector_diagonalize_of_p_is_constant() {
        let k = 5;
        let p = build_particle_number::<f64>(k).unwrap();
        for n in 0..=k {
            let (vals, _) = sector_diagonalize(&p, k, n).unwrap();
            for v in vals.iter() {
                assert!((v - n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sector_diagonalize_rejects_nonpreserving() {
        let k = 3;
        let a = build_annihilation::<f64>(1, k).unwrap();
        assert!(matches!(
            sector_diagonalize(&a, k, 1),
            Err(Error::NotNumberPreserving { .. })
        ));
    }

    #[test]
    fn hopping_chain_ground_energy_matches_single_particle_oracle() {
        // Quadratic Hamiltonians diagonalize in the single-particle picture:
        // the sector ground energy is the sum of the N smallest eigenvalues.
        let k = 6;
        let n = 3;
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k - 1 {
            t[(i, i + 1)] = -1.0;
            t[(i + 1, i)] = -1.0;
        }
        let h = brute_force_hamiltonian(&t, &[]).unwrap();
        let (vals, _) = sector_diagonalize(&h, k, n).unwrap();
        let oracle = quadratic_ground_energy(&t, n);
        assert!((vals[0] - oracle).abs() < 1e-12, "{} vs {}", vals[0], oracle);
    }

    #[test]
    fn decompose_identity() {
        let k = 3;
        let id = DenseOperator::<f64>::identity(&vec![2; k]);
        let terms = decompose_pn_operator(&id, k).unwrap();
        assert_eq!(terms.len(), 1);
        assert!(terms[0].creators.is_empty());
        assert!(terms[0].annihilators.is_empty());
        assert_eq!(terms[0].coeff, 1.0);
    }

    #[test]
    fn decompose_single_hop() {
        let k = 2;
        let op = term_operator::<f64>(&[1], &[2], k).unwrap();
        let terms = decompose_pn_operator(&op, k).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].creators, vec![1]);
        assert_eq!(terms[0].annihilators, vec![2]);
        assert_eq!(terms[0].coeff.abs(), 1.0);
        let re = assemble_terms(&terms, k).unwrap();
        assert_eq!(re.data, op.data);
    }

    #[test]
    fn decompose_round_trip_random() {
        let mut r = rng(17);
        for k in 2..=4 {
            let op = random_pn_operator::<f64, _>(k, &mut r);
            let terms = decompose_pn_operator(&op, k).unwrap();
            let re = assemble_terms(&terms, k).unwrap();
            assert!(re.max_abs_diff(&op) < 1e-10, "K={k}");
        }
    }

    #[test]
    fn decompose_guard() {
        assert!(matches!(
            decompose_pn_operator(&DenseOperator::<f64>::identity(&vec![2; 6]), 6),
            Err(Error::DenseGuard { .. })
        ));
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(20, 6), 38760);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn sector_bounds_match_lemma() {
        let bounds = sector_size_bounds(4, 2, 2);
        assert_eq!(bounds.get(&1), Some(&2)); // min(C(2,1), C(2,1)) = 2
        assert_eq!(bounds.get(&0), Some(&1));
        assert_eq!(bounds.get(&2), Some(&1));
    }

    #[test]
    fn works_in_f32() {
        let p = build_particle_number::<f32>(3).unwrap();
        let vac = DenseTensor::<f32>::vacuum(3);
        assert_eq!(p.apply(&vac).norm(), 0.0f32);
    }
}
