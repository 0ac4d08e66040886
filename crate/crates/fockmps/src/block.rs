//! Block-sparse MPS with exactly conserved particle number.
//!
//! A tensor in the `N`-particle sector of Fock space over `K` orbitals has
//! cores whose nonzero entries are confined to blocks indexed by the number
//! `n` of particles to the left of the bond: the unoccupied layer is
//! sector-diagonal, the occupied layer shifts `n` by one. Every operation
//! here acts sector by sector, so the particle number is conserved
//! structurally instead of numerically.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::dense::{binomial, DenseTensor};
use crate::error::{Error, Result};
use crate::full::{fold_left, svd_thin, Core, Form, FullMps};
use crate::scalar::{real, Scalar};

/// The admissible left particle counts at bond `k` of a `K`-orbital,
/// `N`-particle chain: `max(0, N-K+k) ..= min(N, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectorRange {
    pub k_total: usize,
    pub n_total: usize,
    pub k: usize,
}

impl SectorRange {
    pub fn new(k_total: usize, n_total: usize, k: usize) -> Self {
        debug_assert!(k <= k_total && n_total <= k_total);
        Self { k_total, n_total, k }
    }

    pub fn lo(&self) -> usize {
        self.n_total.saturating_sub(self.k_total - self.k)
    }

    pub fn hi(&self) -> usize {
        self.n_total.min(self.k)
    }

    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo() && n <= self.hi()
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.lo()..=self.hi()
    }

    pub fn len(&self) -> usize {
        self.hi() - self.lo() + 1
    }
}

/// One core of a block MPS. Keys follow the sector of the left bond:
/// `unocc[n]` has shape `rho_{k-1,n} x rho_{k,n}`, `occ[n]` has shape
/// `rho_{k-1,n} x rho_{k,n+1}`. Blocks with a vanishing dimension are
/// absent; missing keys are zero contributions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockCore<T: Scalar> {
    pub unocc: BTreeMap<usize, DMatrix<T>>,
    pub occ: BTreeMap<usize, DMatrix<T>>,
}

/// Per-bond, per-sector descending singular values from the block TT-SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpectrum<T: Scalar> {
    /// `bonds[k-1][n]`: singular values at bond `k`, sector `n`.
    pub bonds: Vec<BTreeMap<usize, Vec<T>>>,
}

impl<T: Scalar> BlockSpectrum<T> {
    pub fn norm(&self) -> T {
        if self.bonds.is_empty() {
            return T::zero();
        }
        self.bonds[0]
            .values()
            .flat_map(|v| v.iter())
            .fold(T::zero(), |s, &x| s + x * x)
            .sqrt()
    }

    /// All singular values at one bond merged across sectors, descending.
    pub fn merged_bond(&self, bond: usize) -> Vec<T> {
        let mut all: Vec<T> =
            self.bonds[bond - 1].values().flat_map(|v| v.iter().copied()).collect();
        all.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
        all
    }
}

/// Block-size rule for random states.
#[derive(Debug, Clone)]
pub enum SizeRule {
    /// Every admissible sector gets `min(rho_bar, admissible bound)`.
    Constant(usize),
    /// Every admissible sector at its bound `min(C(k,n), C(K-k,N-n))`.
    MaxAdmissible,
    /// Explicit tables for bonds `1..K`; violating the bound is an error.
    Explicit(Vec<BTreeMap<usize, usize>>),
}

/// Truncation mode for the block format: error threshold or per-bond total
/// rank caps.
#[derive(Debug, Clone)]
pub enum BlockTruncateMode<T: Scalar> {
    Eps(T),
    Ranks(Vec<usize>),
}

/// A matrix product state confined to the `N`-particle sector.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMps<T: Scalar> {
    order: usize,
    particles: usize,
    /// `rho[k]` for bonds `0..=K`; admissible sectors only, sizes may be 0.
    rho: Vec<BTreeMap<usize, usize>>,
    cores: Vec<BlockCore<T>>,
    pub form: Option<Form>,
}

impl<T: Scalar> BlockMps<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn sectors(&self, k: usize) -> SectorRange {
        SectorRange::new(self.order, self.particles, k)
    }

    pub fn rho(&self, k: usize, n: usize) -> usize {
        self.rho[k].get(&n).copied().unwrap_or(0)
    }

    pub fn rho_table(&self) -> &[BTreeMap<usize, usize>] {
        &self.rho
    }

    pub fn core(&self, k: usize) -> &BlockCore<T> {
        &self.cores[k - 1]
    }

    /// Total bond ranks `r_1 .. r_{K-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        (1..self.order).map(|k| self.rho[k].values().sum()).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    fn unocc_shape(&self, k: usize, n: usize) -> (usize, usize) {
        (self.rho(k - 1, n), self.rho(k, n))
    }

    fn occ_shape(&self, k: usize, n: usize) -> (usize, usize) {
        (self.rho(k - 1, n), self.rho(k, n + 1))
    }

    /// The unoccupied block of core `k` at sector `n`, materializing zeros
    /// for an absent block.
    pub fn unocc_block(&self, k: usize, n: usize) -> DMatrix<T> {
        let (r, c) = self.unocc_shape(k, n);
        match self.cores[k - 1].unocc.get(&n) {
            Some(b) => b.clone(),
            None => DMatrix::zeros(r, c),
        }
    }

    pub fn occ_block(&self, k: usize, n: usize) -> DMatrix<T> {
        let (r, c) = self.occ_shape(k, n);
        match self.cores[k - 1].occ.get(&n) {
            Some(b) => b.clone(),
            None => DMatrix::zeros(r, c),
        }
    }

    /// Construct from parts, enforcing the structural invariants.
    pub fn from_parts(
        order: usize,
        particles: usize,
        rho: Vec<BTreeMap<usize, usize>>,
        cores: Vec<BlockCore<T>>,
    ) -> Result<Self> {
        let mps = Self { order, particles, rho, cores, form: None };
        mps.validate()?;
        Ok(mps)
    }

    /// Structural validation: end sizes one, admissible keys only, shapes
    /// consistent with the size table, finite entries.
    pub fn validate(&self) -> Result<()> {
        let k_total = self.order;
        let n_total = self.particles;
        let fail = |msg: String| Err(Error::DimensionMismatch(msg));
        if n_total > k_total {
            return fail(format!("N = {n_total} exceeds K = {k_total}"));
        }
        if self.rho.len() != k_total + 1 || self.cores.len() != k_total {
            return fail("size table or core list has wrong length".into());
        }
        if self.rho(0, 0) != 1 || self.rho[0].len() != 1 {
            return fail("bond 0 must be the single sector 0 of size 1".into());
        }
        if self.rho(k_total, n_total) != 1 || self.rho[k_total].len() != 1 {
            return fail(format!("bond {k_total} must be the single sector {n_total} of size 1"));
        }
        for k in 0..=k_total {
            let range = self.sectors(k);
            for &n in self.rho[k].keys() {
                if !range.contains(n) {
                    return fail(format!("inadmissible sector {n} at bond {k}"));
                }
            }
        }
        for k in 1..=k_total {
            let left = self.sectors(k - 1);
            let right = self.sectors(k);
            let core = &self.cores[k - 1];
            for (&n, b) in &core.unocc {
                if !(left.contains(n) && right.contains(n)) {
                    return fail(format!("inadmissible unoccupied block ({k}, {n})"));
                }
                if b.shape() != self.unocc_shape(k, n) || b.nrows() == 0 || b.ncols() == 0 {
                    return fail(format!("unoccupied block ({k}, {n}) has shape {:?}", b.shape()));
                }
                if b.iter().any(|x| !x.is_finite()) {
                    return fail(format!("non-finite entry in unoccupied block ({k}, {n})"));
                }
            }
            for (&n, b) in &core.occ {
                if !(left.contains(n) && right.contains(n + 1)) {
                    return fail(format!("inadmissible occupied block ({k}, {n})"));
                }
                if b.shape() != self.occ_shape(k, n) || b.nrows() == 0 || b.ncols() == 0 {
                    return fail(format!("occupied block ({k}, {n}) has shape {:?}", b.shape()));
                }
                if b.iter().any(|x| !x.is_finite()) {
                    return fail(format!("non-finite entry in occupied block ({k}, {n})"));
                }
            }
        }
        Ok(())
    }

    /// The minimal-rank block-size bound
    /// `rho_{k,n} <= min(C(k,n), C(K-k,N-n))`; holds after rank-revealing
    /// operations (orthogonalization, TT-SVD, truncation, detection).
    pub fn check_rank_bounds(&self) -> bool {
        (0..=self.order).all(|k| {
            self.rho[k].iter().all(|(&n, &r)| {
                r <= binomial(k, n).min(binomial(self.order - k, self.particles - n))
            })
        })
    }

    fn set_block(core: &mut BlockCore<T>, occ: bool, n: usize, b: DMatrix<T>) {
        if b.nrows() == 0 || b.ncols() == 0 {
            return;
        }
        if occ {
            core.occ.insert(n, b);
        } else {
            core.unocc.insert(n, b);
        }
    }

    /// The Slater determinant `e_D` with 1-based occupied orbitals `d`.
    pub fn slater(d: &[usize], k_total: usize) -> Result<Self> {
        let n_total = d.len();
        let mut occ_flag = vec![false; k_total + 1];
        for &i in d {
            if i == 0 || i > k_total {
                return Err(Error::IndexOutOfRange { index: i, order: k_total });
            }
            if occ_flag[i] {
                return Err(Error::DimensionMismatch(format!("repeated orbital {i}")));
            }
            occ_flag[i] = true;
        }
        let mut rho: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(k_total + 1);
        let mut count = 0usize;
        rho.push(BTreeMap::from([(0, 1)]));
        for k in 1..=k_total {
            if occ_flag[k] {
                count += 1;
            }
            rho.push(BTreeMap::from([(count, 1)]));
        }
        let mut cores = Vec::with_capacity(k_total);
        let mut left = 0usize;
        for k in 1..=k_total {
            let mut core = BlockCore::default();
            let one = DMatrix::from_element(1, 1, T::one());
            if occ_flag[k] {
                Self::set_block(&mut core, true, left, one);
                left += 1;
            } else {
                Self::set_block(&mut core, false, left, one);
            }
            cores.push(core);
        }
        Self::from_parts(k_total, n_total, rho, cores)
    }

    /// Random block MPS with the given size rule and standard normal
    /// entries, deterministic per seeded generator.
    pub fn random<R: rand::Rng>(
        k_total: usize,
        n_total: usize,
        rule: SizeRule,
        rng: &mut R,
    ) -> Result<Self> {
        if n_total > k_total {
            return Err(Error::DimensionMismatch(format!("N = {n_total} > K = {k_total}")));
        }
        let mut rho: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(k_total + 1);
        for k in 0..=k_total {
            let range = SectorRange::new(k_total, n_total, k);
            let mut m = BTreeMap::new();
            for n in range.iter() {
                let cap = binomial(k, n).min(binomial(k_total - k, n_total - n));
                let size = match &rule {
                    SizeRule::Constant(r) => (*r).min(cap),
                    SizeRule::MaxAdmissible => cap,
                    SizeRule::Explicit(table) => {
                        if k == 0 || k == k_total {
                            cap.min(1)
                        } else {
                            let requested =
                                table.get(k - 1).and_then(|t| t.get(&n)).copied().unwrap_or(0);
                            if requested > cap {
                                return Err(Error::BlockSizeCap { k, n, requested, cap });
                            }
                            requested
                        }
                    }
                };
                m.insert(n, size);
            }
            rho.push(m);
        }
        let mut mps =
            Self { order: k_total, particles: n_total, rho, cores: Vec::new(), form: None };
        let mut cores = Vec::with_capacity(k_total);
        for k in 1..=k_total {
            let mut core = BlockCore::default();
            let left = mps.sectors(k - 1);
            let right = mps.sectors(k);
            for n in left.iter() {
                if right.contains(n) {
                    let (r, c) = mps.unocc_shape(k, n);
                    if r > 0 && c > 0 {
                        core.unocc
                            .insert(n, DMatrix::from_fn(r, c, |_, _| T::standard_normal(rng)));
                    }
                }
                if right.contains(n + 1) {
                    let (r, c) = mps.occ_shape(k, n);
                    if r > 0 && c > 0 {
                        core.occ.insert(n, DMatrix::from_fn(r, c, |_, _| T::standard_normal(rng)));
                    }
                }
            }
            cores.push(core);
        }
        mps.cores = cores;
        mps.validate()?;
        Ok(mps)
    }

    /// Offsets of each sector within the merged bond index, contiguous and
    /// ascending in `n`.
    pub fn bond_offsets(&self, k: usize) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        let mut off = 0;
        for (&n, &r) in &self.rho[k] {
            out.insert(n, off);
            off += r;
        }
        out
    }

    /// Embed the blocks into plain cores: the unoccupied layer is
    /// sector-diagonal, the occupied layer sits one sector column up.
    pub fn to_full(&self) -> FullMps<T> {
        let k_total = self.order;
        if (0..=k_total).any(|k| self.rho[k].values().sum::<usize>() == 0) {
            return FullMps::zero(&vec![2; k_total]);
        }
        let mut cores = Vec::with_capacity(k_total);
        for k in 1..=k_total {
            let loff = self.bond_offsets(k - 1);
            let roff = self.bond_offsets(k);
            let rl: usize = self.rho[k - 1].values().sum();
            let rr: usize = self.rho[k].values().sum();
            let mut layer0 = DMatrix::zeros(rl, rr);
            let mut layer1 = DMatrix::zeros(rl, rr);
            for (&n, b) in &self.cores[k - 1].unocc {
                layer0.view_mut((loff[&n], roff[&n]), b.shape()).copy_from(b);
            }
            for (&n, b) in &self.cores[k - 1].occ {
                layer1.view_mut((loff[&n], roff[&(n + 1)]), b.shape()).copy_from(b);
            }
            cores.push(Core::new(vec![layer0, layer1]));
        }
        let mut full = FullMps::new(cores);
        full.form = self.form;
        full
    }

    /// Dense evaluation through the full format (desk scale only).
    pub fn evaluate(&self) -> Result<DenseTensor<T>> {
        self.to_full().evaluate()
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.order != other.order || self.particles != other.particles {
            return Err(Error::SectorMismatch {
                k1: self.order,
                n1: self.particles,
                k2: other.order,
                n2: other.particles,
            });
        }
        Ok(())
    }

    /// Sectorwise concatenation: block-diagonal in the interior, plain
    /// concatenation at the chain ends.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        let k_total = self.order;
        let mut rho = Vec::with_capacity(k_total + 1);
        for k in 0..=k_total {
            let mut m = BTreeMap::new();
            for n in self.sectors(k).iter() {
                let size = if k == 0 || k == k_total {
                    1
                } else {
                    self.rho(k, n) + other.rho(k, n)
                };
                m.insert(n, size);
            }
            rho.push(m);
        }
        let mut cores = Vec::with_capacity(k_total);
        for k in 1..=k_total {
            let mut core = BlockCore::default();
            let left = self.sectors(k - 1);
            let right = self.sectors(k);
            for n in left.iter() {
                for occ in [false, true] {
                    let col_sector = if occ { n + 1 } else { n };
                    if !right.contains(col_sector) {
                        continue;
                    }
                    let (ar, ac) = if occ { self.occ_shape(k, n) } else { self.unocc_shape(k, n) };
                    let (br, bc) =
                        if occ { other.occ_shape(k, n) } else { other.unocc_shape(k, n) };
                    let a = if occ { self.occ_block(k, n) } else { self.unocc_block(k, n) };
                    let b = if occ { other.occ_block(k, n) } else { other.unocc_block(k, n) };
                    let (rows, cols) = if k == 1 {
                        (1, ac + bc)
                    } else if k == k_total {
                        (ar + br, 1)
                    } else {
                        (ar + br, ac + bc)
                    };
                    if rows == 0 || cols == 0 {
                        continue;
                    }
                    let mut m = DMatrix::zeros(rows, cols);
                    if k == 1 {
                        if ac > 0 {
                            m.view_mut((0, 0), (1, ac)).copy_from(&a);
                        }
                        if bc > 0 {
                            m.view_mut((0, ac), (1, bc)).copy_from(&b);
                        }
                    } else if k == k_total {
                        if ar > 0 {
                            m.view_mut((0, 0), (ar, 1)).copy_from(&a);
                        }
                        if br > 0 {
                            m.view_mut((ar, 0), (br, 1)).copy_from(&b);
                        }
                    } else {
                        if ar > 0 && ac > 0 {
                            m.view_mut((0, 0), (ar, ac)).copy_from(&a);
                        }
                        if br > 0 && bc > 0 {
                            m.view_mut((ar, ac), (br, bc)).copy_from(&b);
                        }
                    }
                    Self::set_block(&mut core, occ, n, m);
                }
            }
            cores.push(core);
        }
        Self::from_parts(k_total, self.particles, rho, cores)
    }

    /// Scalar multiple; scales the first core's blocks.
    pub fn scale(&self, c: T) -> Self {
        let mut out = self.clone();
        for b in out.cores[0].unocc.values_mut() {
            *b *= c;
        }
        for b in out.cores[0].occ.values_mut() {
            *b *= c;
        }
        out.form = None;
        out
    }

    /// Inner product by the right-to-left sector recursion; block sizes of
    /// the two operands may differ.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.compatible(other)?;
        let k_total = self.order;
        // Seed at bond K: the single sector N pairs with itself.
        let mut r: BTreeMap<usize, DMatrix<T>> =
            BTreeMap::from([(self.particles, DMatrix::identity(1, 1))]);
        for k in (1..=k_total).rev() {
            let mut next: BTreeMap<usize, DMatrix<T>> = BTreeMap::new();
            for n in self.sectors(k - 1).iter() {
                let rows = self.rho(k - 1, n);
                let cols = other.rho(k - 1, n);
                if rows == 0 || cols == 0 {
                    continue;
                }
                let mut l = DMatrix::zeros(rows, cols);
                if self.sectors(k).contains(n) {
                    if let Some(rn) = r.get(&n) {
                        l += self.unocc_block(k, n) * rn * other.unocc_block(k, n).transpose();
                    }
                }
                if self.sectors(k).contains(n + 1) {
                    if let Some(rn1) = r.get(&(n + 1)) {
                        l += self.occ_block(k, n) * rn1 * other.occ_block(k, n).transpose();
                    }
                }
                next.insert(n, l);
            }
            r = next;
        }
        Ok(r.get(&0).map(|m| m[(0, 0)]).unwrap_or_else(T::zero))
    }

    pub fn norm(&self) -> T {
        self.inner(self).expect("self inner product").max(T::zero()).sqrt()
    }

    /// Particle expectation `<x, P x> / <x, x>` computed blockwise by a
    /// weighted inner-product sweep; errors on the zero vector.
    pub fn particle_expectation(&self) -> Result<T> {
        let norm2 = self.inner(self)?;
        if norm2 == T::zero() {
            return Err(Error::ZeroVector);
        }
        let k_total = self.order;
        // r_n: Gram of the tails; rp_n: Gram weighted by the particle count
        // carried by the tail.
        let mut r: BTreeMap<usize, DMatrix<T>> =
            BTreeMap::from([(self.particles, DMatrix::identity(1, 1))]);
        let mut rp: BTreeMap<usize, DMatrix<T>> =
            BTreeMap::from([(self.particles, DMatrix::zeros(1, 1))]);
        for k in (1..=k_total).rev() {
            let mut next_r: BTreeMap<usize, DMatrix<T>> = BTreeMap::new();
            let mut next_rp: BTreeMap<usize, DMatrix<T>> = BTreeMap::new();
            for n in self.sectors(k - 1).iter() {
                let rows = self.rho(k - 1, n);
                if rows == 0 {
                    continue;
                }
                let mut lr = DMatrix::zeros(rows, rows);
                let mut lp = DMatrix::zeros(rows, rows);
                if self.sectors(k).contains(n) {
                    let u = self.unocc_block(k, n);
                    if let Some(rn) = r.get(&n) {
                        lr += &u * rn * u.transpose();
                    }
                    if let Some(rpn) = rp.get(&n) {
                        lp += &u * rpn * u.transpose();
                    }
                }
                if self.sectors(k).contains(n + 1) {
                    let o = self.occ_block(k, n);
                    if let Some(rn) = r.get(&(n + 1)) {
                        lr += &o * rn * o.transpose();
                        // The occupied site carries one particle.
                        lp += &o * rn * o.transpose();
                    }
                    if let Some(rpn) = rp.get(&(n + 1)) {
                        lp += &o * rpn * o.transpose();
                    }
                }
                next_r.insert(n, lr);
                next_rp.insert(n, lp);
            }
            r = next_r;
            rp = next_rp;
        }
        let p = rp.get(&0).map(|m| m[(0, 0)]).unwrap_or_else(T::zero);
        Ok(p / norm2)
    }

    /// Sectorwise QR sweep; the left variant is the literal mirror image of
    /// the right-to-left procedure. Rank-deficient sectors shrink.
    pub fn orthogonalize(&self, side: Form) -> Self {
        let mut x = self.clone();
        match side {
            Form::Right | Form::RightSvd => {
                for k in (2..=x.order).rev() {
                    x.right_orth_step(k);
                }
                x.form = Some(Form::Right);
            }
            Form::Left | Form::LeftSvd => {
                for k in 1..x.order {
                    x.left_orth_step(k);
                }
                x.form = Some(Form::Left);
            }
        }
        x
    }

    /// QR of the stacked `(unocc^T; occ^T)` families of core `k`, absorbing
    /// the transposed R factors into core `k-1`.
    fn right_orth_step(&mut self, k: usize) {
        let sectors: Vec<usize> = self.sectors(k - 1).iter().collect();
        for n in sectors {
            let rows = self.rho(k - 1, n);
            if rows == 0 {
                continue;
            }
            let cu = if self.sectors(k).contains(n) { self.rho(k, n) } else { 0 };
            let co = if self.sectors(k).contains(n + 1) { self.rho(k, n + 1) } else { 0 };
            let mut stacked = DMatrix::zeros(cu + co, rows);
            if cu > 0 {
                stacked
                    .view_mut((0, 0), (cu, rows))
                    .copy_from(&self.unocc_block(k, n).transpose());
            }
            if co > 0 {
                stacked
                    .view_mut((cu, 0), (co, rows))
                    .copy_from(&self.occ_block(k, n).transpose());
            }
            let (q, r) = thin_qr(&stacked);
            let m = q.ncols();
            self.cores[k - 1].unocc.remove(&n);
            self.cores[k - 1].occ.remove(&n);
            if cu > 0 && m > 0 {
                Self::set_block(&mut self.cores[k - 1], false, n, q.view((0, 0), (cu, m)).transpose());
            }
            if co > 0 && m > 0 {
                Self::set_block(&mut self.cores[k - 1], true, n, q.view((cu, 0), (co, m)).transpose());
            }
            // Columns in sector n of core k-1 absorb R^T.
            let rt = r.transpose();
            if self.sectors(k - 2).contains(n) {
                let b = self.unocc_block(k - 1, n) * &rt;
                self.cores[k - 2].unocc.remove(&n);
                Self::set_block(&mut self.cores[k - 2], false, n, b);
            }
            if n >= 1 && self.sectors(k - 2).contains(n - 1) {
                let b = self.occ_block(k - 1, n - 1) * &rt;
                self.cores[k - 2].occ.remove(&(n - 1));
                Self::set_block(&mut self.cores[k - 2], true, n - 1, b);
            }
            self.rho[k - 1].insert(n, m);
        }
    }

    /// Mirror image: QR of vertically stacked blocks sharing column sector
    /// `m` of core `k`, absorbing R into core `k+1`.
    fn left_orth_step(&mut self, k: usize) {
        let sectors: Vec<usize> = self.sectors(k).iter().collect();
        for m in sectors {
            let cols = self.rho(k, m);
            if cols == 0 {
                continue;
            }
            let ru = if self.sectors(k - 1).contains(m) { self.rho(k - 1, m) } else { 0 };
            let ro = if m >= 1 && self.sectors(k - 1).contains(m - 1) {
                self.rho(k - 1, m - 1)
            } else {
                0
            };
            let mut stacked = DMatrix::zeros(ru + ro, cols);
            if ru > 0 {
                stacked.view_mut((0, 0), (ru, cols)).copy_from(&self.unocc_block(k, m));
            }
            if ro > 0 {
                stacked.view_mut((ru, 0), (ro, cols)).copy_from(&self.occ_block(k, m - 1));
            }
            let (q, r) = thin_qr(&stacked);
            let q_cols = q.ncols();
            self.cores[k - 1].unocc.remove(&m);
            if m >= 1 {
                self.cores[k - 1].occ.remove(&(m - 1));
            }
            if ru > 0 && q_cols > 0 {
                Self::set_block(
                    &mut self.cores[k - 1],
                    false,
                    m,
                    q.view((0, 0), (ru, q_cols)).into_owned(),
                );
            }
            if ro > 0 && q_cols > 0 {
                Self::set_block(
                    &mut self.cores[k - 1],
                    true,
                    m - 1,
                    q.view((ru, 0), (ro, q_cols)).into_owned(),
                );
            }
            if self.sectors(k + 1).contains(m) {
                let b = &r * self.unocc_block(k + 1, m);
                self.cores[k].unocc.remove(&m);
                Self::set_block(&mut self.cores[k], false, m, b);
            }
            if self.sectors(k + 1).contains(m + 1) {
                let b = &r * self.occ_block(k + 1, m);
                self.cores[k].occ.remove(&m);
                Self::set_block(&mut self.cores[k], true, m, b);
            }
            self.rho[k].insert(m, q_cols);
        }
    }

    /// Right-orthogonal TT-SVD: per-sector SVDs of the row-concatenated
    /// block families of a left-orthogonal input, swept right to left.
    pub fn tt_svd(&self) -> Result<(Self, BlockSpectrum<T>)> {
        let mut x = if matches!(self.form, Some(Form::Left) | Some(Form::LeftSvd)) {
            self.clone()
        } else {
            self.orthogonalize(Form::Left)
        };
        let norm = x.norm();
        let k_total = x.order;
        let mut bonds: Vec<BTreeMap<usize, Vec<T>>> = vec![BTreeMap::new(); k_total - 1];
        let floor = norm * T::default_epsilon() * real::<T>(64.0);
        for k in (2..=k_total).rev() {
            let sectors: Vec<usize> = x.sectors(k - 1).iter().collect();
            for n in sectors {
                let rows = x.rho(k - 1, n);
                if rows == 0 {
                    continue;
                }
                let cu = if x.sectors(k).contains(n) { x.rho(k, n) } else { 0 };
                let co = if x.sectors(k).contains(n + 1) { x.rho(k, n + 1) } else { 0 };
                let mut wide = DMatrix::zeros(rows, cu + co);
                if cu > 0 {
                    wide.view_mut((0, 0), (rows, cu)).copy_from(&x.unocc_block(k, n));
                }
                if co > 0 {
                    wide.view_mut((0, cu), (rows, co)).copy_from(&x.occ_block(k, n));
                }
                let (u, sigma, vt) = svd_thin(&wide);
                let rank = sigma.iter().take_while(|&&s| s > floor).count();
                x.cores[k - 1].unocc.remove(&n);
                x.cores[k - 1].occ.remove(&n);
                if rank > 0 {
                    if cu > 0 {
                        Self::set_block(
                            &mut x.cores[k - 1],
                            false,
                            n,
                            vt.view((0, 0), (rank, cu)).into_owned(),
                        );
                    }
                    if co > 0 {
                        Self::set_block(
                            &mut x.cores[k - 1],
                            true,
                            n,
                            vt.view((0, cu), (rank, co)).into_owned(),
                        );
                    }
                }
                let mut us = u.columns(0, rank).into_owned();
                for (c, &s) in sigma.iter().take(rank).enumerate() {
                    us.column_mut(c).scale_mut(s);
                }
                if x.sectors(k - 2).contains(n) {
                    let b = x.unocc_block(k - 1, n) * &us;
                    x.cores[k - 2].unocc.remove(&n);
                    Self::set_block(&mut x.cores[k - 2], false, n, b);
                }
                if n >= 1 && x.sectors(k - 2).contains(n - 1) {
                    let b = x.occ_block(k - 1, n - 1) * &us;
                    x.cores[k - 2].occ.remove(&(n - 1));
                    Self::set_block(&mut x.cores[k - 2], true, n - 1, b);
                }
                x.rho[k - 1].insert(n, rank);
                if rank > 0 {
                    bonds[k - 2].insert(n, sigma[..rank].to_vec());
                }
            }
        }
        x.form = Some(Form::RightSvd);
        Ok((x, BlockSpectrum { bonds }))
    }

    /// Rank truncation of the TT-SVD form: select the smallest singular
    /// values globally over all bonds and sectors, then delete the trailing
    /// rows and columns of the four adjacent block families.
    pub fn truncate(&self, spectrum: &BlockSpectrum<T>, mode: BlockTruncateMode<T>) -> Result<Self> {
        assert_eq!(self.form, Some(Form::RightSvd), "truncate expects block TT-SVD form");
        let k_total = self.order;
        // drops[bond-1][sector] = number of trailing values removed.
        let mut drops: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); k_total - 1];
        match mode {
            BlockTruncateMode::Eps(eps) => {
                let norm = spectrum.norm();
                if eps >= norm {
                    return Err(Error::TruncateToZero {
                        eps: eps.to_f64_lossy(),
                        norm: norm.to_f64_lossy(),
                    });
                }
                let mut all: Vec<(T, usize, usize, usize)> = Vec::new();
                for (b, sectors) in spectrum.bonds.iter().enumerate() {
                    for (&n, sv) in sectors {
                        for (i, &s) in sv.iter().enumerate() {
                            all.push((s, b, n, i));
                        }
                    }
                }
                all.sort_by(|x, y| {
                    x.0.partial_cmp(&y.0)
                        .expect("finite singular values")
                        .then(x.1.cmp(&y.1))
                        .then(x.2.cmp(&y.2))
                        .then(x.3.cmp(&y.3))
                });
                let mut budget = eps * eps;
                for (s, b, n, _) in all {
                    let s2 = s * s;
                    if s2 <= budget {
                        budget -= s2;
                        *drops[b].entry(n).or_insert(0) += 1;
                    } else {
                        break;
                    }
                }
            }
            BlockTruncateMode::Ranks(ranks) => {
                assert_eq!(ranks.len(), k_total - 1, "one total rank per bond");
                for (b, sectors) in spectrum.bonds.iter().enumerate() {
                    let mut merged: Vec<(T, usize)> = sectors
                        .iter()
                        .flat_map(|(&n, sv)| sv.iter().map(move |&s| (s, n)))
                        .collect();
                    merged.sort_by(|x, y| {
                        y.0.partial_cmp(&x.0).expect("finite singular values").then(x.1.cmp(&y.1))
                    });
                    for &(_, n) in merged.iter().skip(ranks[b]) {
                        *drops[b].entry(n).or_insert(0) += 1;
                    }
                }
            }
        }

        let mut y = self.clone();
        for (b, sector_drops) in drops.iter().enumerate() {
            let k = b + 1;
            for (&n, &d) in sector_drops {
                if d == 0 {
                    continue;
                }
                let new = y.rho(k, n) - d;
                if y.sectors(k - 1).contains(n) {
                    let blk = y.unocc_block(k, n);
                    y.cores[k - 1].unocc.remove(&n);
                    if new > 0 {
                        Self::set_block(
                            &mut y.cores[k - 1],
                            false,
                            n,
                            blk.columns(0, new).into_owned(),
                        );
                    }
                }
                if n >= 1 && y.sectors(k - 1).contains(n - 1) {
                    let blk = y.occ_block(k, n - 1);
                    y.cores[k - 1].occ.remove(&(n - 1));
                    if new > 0 {
                        Self::set_block(
                            &mut y.cores[k - 1],
                            true,
                            n - 1,
                            blk.columns(0, new).into_owned(),
                        );
                    }
                }
                if y.sectors(k + 1).contains(n) {
                    let blk = y.unocc_block(k + 1, n);
                    y.cores[k].unocc.remove(&n);
                    if new > 0 {
                        Self::set_block(&mut y.cores[k], false, n, blk.rows(0, new).into_owned());
                    }
                }
                if y.sectors(k + 1).contains(n + 1) {
                    let blk = y.occ_block(k + 1, n);
                    y.cores[k].occ.remove(&n);
                    if new > 0 {
                        Self::set_block(&mut y.cores[k], true, n, blk.rows(0, new).into_owned());
                    }
                }
                y.rho[k].insert(n, new);
            }
        }
        y.form = None;
        y.validate()?;
        Ok(y)
    }

    /// Scale the bond-`k` sectors by prescribed factors by scaling the row
    /// sectors of core `k+1` (plants singular values between two
    /// orthonormal halves).
    pub fn scale_bond_sectors(&mut self, k: usize, factors: &BTreeMap<usize, T>) {
        for (&n, &f) in factors {
            if let Some(b) = self.cores[k].unocc.get_mut(&n) {
                *b *= f;
            }
            if let Some(b) = self.cores[k].occ.get_mut(&n) {
                *b *= f;
            }
        }
        self.form = None;
    }

    /// Per-core orthonormalization without absorption: cores `1..=mid`
    /// become left-orthogonal per sector, cores `mid+1..=K` right-orthogonal.
    /// This *changes* the tensor; it constructs states with prescribed
    /// bond-`mid` singular structure rather than re-gauging.
    pub fn orthonormalize_split(&mut self, mid: usize) {
        for k in 1..=mid {
            let sectors: Vec<usize> = self.sectors(k).iter().collect();
            for m in sectors {
                let cols = self.rho(k, m);
                if cols == 0 {
                    continue;
                }
                let ru = if self.sectors(k - 1).contains(m) { self.rho(k - 1, m) } else { 0 };
                let ro = if m >= 1 && self.sectors(k - 1).contains(m - 1) {
                    self.rho(k - 1, m - 1)
                } else {
                    0
                };
                let mut stacked = DMatrix::zeros(ru + ro, cols);
                if ru > 0 {
                    stacked.view_mut((0, 0), (ru, cols)).copy_from(&self.unocc_block(k, m));
                }
                if ro > 0 {
                    stacked.view_mut((ru, 0), (ro, cols)).copy_from(&self.occ_block(k, m - 1));
                }
                let (q, _) = thin_qr(&stacked);
                assert_eq!(q.ncols(), cols, "orthonormalize_split needs full-rank blocks");
                if ru > 0 {
                    self.cores[k - 1].unocc.insert(m, q.view((0, 0), (ru, cols)).into_owned());
                }
                if ro > 0 {
                    self.cores[k - 1].occ.insert(m - 1, q.view((ru, 0), (ro, cols)).into_owned());
                }
            }
        }
        for k in (mid + 1..=self.order).rev() {
            let sectors: Vec<usize> = self.sectors(k - 1).iter().collect();
            for n in sectors {
                let rows = self.rho(k - 1, n);
                if rows == 0 {
                    continue;
                }
                let cu = if self.sectors(k).contains(n) { self.rho(k, n) } else { 0 };
                let co = if self.sectors(k).contains(n + 1) { self.rho(k, n + 1) } else { 0 };
                let mut stacked = DMatrix::zeros(cu + co, rows);
                if cu > 0 {
                    stacked
                        .view_mut((0, 0), (cu, rows))
                        .copy_from(&self.unocc_block(k, n).transpose());
                }
                if co > 0 {
                    stacked
                        .view_mut((cu, 0), (co, rows))
                        .copy_from(&self.occ_block(k, n).transpose());
                }
                let (q, _) = thin_qr(&stacked);
                assert_eq!(q.ncols(), rows, "orthonormalize_split needs full-rank blocks");
                if cu > 0 {
                    self.cores[k - 1].unocc.insert(n, q.view((0, 0), (cu, rows)).transpose());
                }
                if co > 0 {
                    self.cores[k - 1].occ.insert(n, q.view((cu, 0), (co, rows)).transpose());
                }
            }
        }
        self.form = None;
    }

    /// Densely verify that each left partial tensor in sector `n` at bond
    /// `k` is an eigenvector of the left-truncated particle number operator
    /// with eigenvalue `n` (desk scale).
    pub fn verify_block_eigen(&self, k: usize, tol: T) -> Result<bool> {
        if self.order > crate::dense::DENSE_OP_GUARD {
            return Err(Error::DenseGuard { order: self.order, max: crate::dense::DENSE_OP_GUARD });
        }
        let full = self.to_full();
        let partials = fold_left(&full.cores[..k]);
        let pk = crate::dense::build_truncated_pn::<T>(self.order, k, crate::dense::Side::Left)?;
        let offsets = self.bond_offsets(k);
        let scale = self.norm().max(T::one());
        for (&n, &off) in &offsets {
            for j in 0..self.rho(k, n) {
                let col = partials.column(off + j).into_owned();
                let residual = &pk.data * &col - col.scale(real::<T>(n as f64));
                if residual.amax() > tol * scale {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Thin QR that tolerates empty shapes.
fn thin_qr<T: Scalar>(m: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (rows, cols) = m.shape();
    let rank = rows.min(cols);
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(rows, rank), DMatrix::zeros(rank, cols));
    }
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Detect the block structure of a full MPS representing a particle number
/// eigenvector with eigenvalue `n_total`.
///
/// Implements the constructive sweep behind the block-structure theorem:
/// tail Gram matrices and their symmetric square roots balance the gauge,
/// then orthogonal transforms sort each bond into contiguous ascending
/// sectors. Entries outside admissible blocks below `tol` are discarded;
/// above `tol` they raise [`Error::NotInSector`].
pub fn from_full<T: Scalar>(y: &FullMps<T>, n_total: usize, tol: T) -> Result<BlockMps<T>> {
    match detect_blocks(y, n_total, tol) {
        Ok(x) => Ok(x),
        Err(Error::NotInSector { mass, .. }) if mass.is_infinite() => {
            // Singular tail Grams indicate non-minimal ranks; one
            // rank-reduction pass restores the precondition.
            let (reduced, _) = crate::full::tt_svd(y, Form::Right)?;
            detect_blocks(&reduced, n_total, tol)
        }
        Err(e) => Err(e),
    }
}

fn detect_blocks<T: Scalar>(y: &FullMps<T>, n_total: usize, tol: T) -> Result<BlockMps<T>> {
    let k_total = y.order();
    if n_total > k_total {
        return Err(Error::DimensionMismatch(format!("N = {n_total} > K = {k_total}")));
    }
    for c in &y.cores {
        if c.mode_size() != 2 {
            return Err(Error::DimensionMismatch("block detection needs mode size 2".into()));
        }
    }
    let norm = y.norm();
    if norm == T::zero() {
        return Err(Error::ZeroVector);
    }
    let mut cores = y.cores.clone();
    // Work on the normalized tensor; the scale is restored at the end.
    for l in &mut cores[0].layers {
        *l /= norm;
    }

    // Tail Grams G_k of tau_{>k} for k = K-1 .. 1, from the input gauge.
    let mut grams: Vec<DMatrix<T>> = vec![DMatrix::identity(1, 1); k_total];
    let mut g = DMatrix::<T>::identity(1, 1);
    for k in (1..k_total).rev() {
        let mut next = DMatrix::zeros(cores[k].left_rank(), cores[k].left_rank());
        for l in &cores[k].layers {
            next += l * &g * l.transpose();
        }
        g = next;
        grams[k] = g.clone();
    }

    let gram_floor = real::<T>(1e-14);
    let mut prev_sizes: BTreeMap<usize, usize> = BTreeMap::from([(0usize, 1usize)]);
    let mut rho: Vec<BTreeMap<usize, usize>> = vec![prev_sizes.clone()];

    for k in 1..k_total {
        // Balance the gauge at bond k with the symmetric square root.
        let gk = &grams[k];
        let eig = gk.clone().symmetric_eigen();
        let lam_max = eig.eigenvalues.amax();
        if eig.eigenvalues.iter().any(|&l| l < gram_floor * lam_max) {
            // Signals non-minimal ranks to the caller.
            return Err(Error::NotInSector {
                sector: n_total,
                mass: f64::INFINITY,
                tol: tol.to_f64_lossy(),
            });
        }
        let r_k = gk.nrows();
        let mut sqrt_g = DMatrix::zeros(r_k, r_k);
        let mut inv_sqrt_g = DMatrix::zeros(r_k, r_k);
        for i in 0..r_k {
            let q = eig.eigenvectors.column(i);
            let s = eig.eigenvalues[i].max(T::zero()).sqrt();
            sqrt_g += (q * q.transpose()).scale(s);
            inv_sqrt_g += (q * q.transpose()).scale(T::one() / s);
        }
        cores[k - 1] = cores[k - 1].mul_right(&sqrt_g);
        cores[k] = cores[k].mul_left(&inv_sqrt_g);

        // Candidate sector row spaces at bond k: the unoccupied layer keeps
        // n, the occupied layer raises it by one.
        let mut row_groups: BTreeMap<usize, Vec<nalgebra::RowDVector<T>>> = BTreeMap::new();
        let mut off = 0usize;
        for (&n, &size) in &prev_sizes {
            for j in off..off + size {
                row_groups.entry(n).or_default().push(cores[k - 1].layers[0].row(j).into_owned());
                row_groups
                    .entry(n + 1)
                    .or_default()
                    .push(cores[k - 1].layers[1].row(j).into_owned());
            }
            off += size;
        }

        // Rank-reveal each candidate space; keep the r_k strongest
        // directions overall.
        let range = SectorRange::new(k_total, n_total, k);
        let mut candidates: Vec<(T, usize, nalgebra::RowDVector<T>)> = Vec::new();
        let mut inadmissible_mass = T::zero();
        for (&n, rows) in &row_groups {
            let mut w = DMatrix::zeros(rows.len(), r_k);
            for (i, row) in rows.iter().enumerate() {
                w.set_row(i, row);
            }
            if !range.contains(n) {
                inadmissible_mass = inadmissible_mass.max(w.amax());
                continue;
            }
            let (_, sigma, vt) = svd_thin(&w);
            for (i, &s) in sigma.iter().enumerate() {
                candidates.push((s, n, vt.row(i).into_owned()));
            }
        }
        if inadmissible_mass > tol {
            return Err(Error::NotInSector {
                sector: n_total,
                mass: inadmissible_mass.to_f64_lossy(),
                tol: tol.to_f64_lossy(),
            });
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).expect("finite singular values").then(a.1.cmp(&b.1))
        });
        candidates.truncate(r_k);

        // Sector-sorting orthogonal transform, sectors ascending and
        // contiguous; a final QR cleans up roundoff without reordering.
        candidates.sort_by(|a, b| {
            a.1.cmp(&b.1).then(b.0.partial_cmp(&a.0).expect("finite singular values"))
        });
        let mut new_sizes: BTreeMap<usize, usize> = BTreeMap::new();
        let mut q = DMatrix::zeros(r_k, r_k);
        for (c, (_, n, v)) in candidates.iter().enumerate() {
            *new_sizes.entry(*n).or_insert(0) += 1;
            q.set_column(c, &v.transpose());
        }
        let (q, _) = thin_qr(&q);

        cores[k - 1] = cores[k - 1].mul_right(&q);
        cores[k] = cores[k].mul_left(&q.transpose());

        rho.push(new_sizes.clone());
        prev_sizes = new_sizes;
    }
    rho.push(BTreeMap::from([(n_total, 1usize)]));

    // Extract blocks; off-block mass above tolerance is an error, below it
    // is discarded.
    let mut block_cores: Vec<BlockCore<T>> = Vec::with_capacity(k_total);
    let mut off_mass = T::zero();
    for k in 1..=k_total {
        let range_l = SectorRange::new(k_total, n_total, k - 1);
        let range_r = SectorRange::new(k_total, n_total, k);
        let offsets = |table: &BTreeMap<usize, usize>| {
            let mut out = BTreeMap::new();
            let mut o = 0;
            for (&n, &s) in table {
                out.insert(n, o);
                o += s;
            }
            out
        };
        let offsets_l = offsets(&rho[k - 1]);
        let offsets_r = offsets(&rho[k]);
        let (rl, rr) = (cores[k - 1].left_rank(), cores[k - 1].right_rank());
        let mut claimed = vec![[false; 2]; rl * rr];
        let mut core = BlockCore::default();
        for (&n, &rs) in &rho[k - 1] {
            if rs == 0 {
                continue;
            }
            for (occ, col_sector) in [(false, n), (true, n + 1)] {
                if !(range_l.contains(n) && range_r.contains(col_sector)) {
                    continue;
                }
                let cs = rho[k].get(&col_sector).copied().unwrap_or(0);
                if cs == 0 {
                    continue;
                }
                let layer = usize::from(occ);
                let b = cores[k - 1].layers[layer]
                    .view((offsets_l[&n], offsets_r[&col_sector]), (rs, cs))
                    .into_owned();
                for i in 0..rs {
                    for j in 0..cs {
                        claimed[(offsets_l[&n] + i) * rr + offsets_r[&col_sector] + j][layer] = true;
                    }
                }
                BlockMps::set_block(&mut core, occ, n, b);
            }
        }
        for i in 0..rl {
            for j in 0..rr {
                for layer in 0..2 {
                    if !claimed[i * rr + j][layer] {
                        off_mass = off_mass.max(cores[k - 1].layers[layer][(i, j)].abs());
                    }
                }
            }
        }
        block_cores.push(core);
    }
    if off_mass > tol {
        return Err(Error::NotInSector {
            sector: n_total,
            mass: off_mass.to_f64_lossy(),
            tol: tol.to_f64_lossy(),
        });
    }

    let mut result =
        BlockMps { order: k_total, particles: n_total, rho, cores: block_cores, form: None };
    // Restore the overall scale into the first core.
    for b in result.cores[0].unocc.values_mut() {
        *b *= norm;
    }
    for b in result.cores[0].occ.values_mut() {
        *b *= norm;
    }
    // Drop sectors that came out empty.
    for k in 1..k_total {
        result.rho[k].retain(|_, s| *s > 0);
    }
    result.validate()?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{build_particle_number, sector_size_bounds};
    use crate::full::tt_svd as full_tt_svd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_block(k: usize, n: usize, rho: usize, seed: u64) -> BlockMps<f64> {
        let mut r = rng(seed);
        BlockMps::random(k, n, SizeRule::Constant(rho), &mut r).unwrap()
    }

    #[test]
    fn sector_range_matches_definition() {
        let r = SectorRange::new(5, 2, 0);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![0]);
        let r = SectorRange::new(5, 2, 5);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![2]);
        let r = SectorRange::new(5, 2, 4);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![1, 2]);
        let r = SectorRange::new(5, 2, 2);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn slater_evaluates_to_unit_vector() {
        let x = BlockMps::<f64>::slater(&[1, 2], 3).unwrap();
        let t = x.evaluate().unwrap();
        for (idx, alpha) in DenseTensor::<f64>::indices(&[2, 2, 2]).enumerate() {
            let expected = if alpha == vec![1, 1, 0] { 1.0 } else { 0.0 };
            assert_eq!(t.data[idx], expected);
        }
    }

    #[test]
    fn random_sizes_follow_rules() {
        // K=5, N=2, constant 1: ranks (2, 3, 3, 2).
        let x = random_block(5, 2, 1, 1);
        assert_eq!(x.ranks(), vec![2, 3, 3, 2]);

        // K=20, N=6, constant 1: total rank at most N+1 = 7 everywhere.
        let x = random_block(20, 6, 1, 2);
        assert!(x.ranks().iter().all(|&r| r <= 7));
        assert_eq!(x.ranks()[9], 7);

        // Max admissible: rho_{2,1} = min(C(2,1), C(2,1)) = 2 for K=4, N=2.
        let mut r = rng(3);
        let x = BlockMps::<f64>::random(4, 2, SizeRule::MaxAdmissible, &mut r).unwrap();
        assert_eq!(x.rho(2, 1), 2);
        assert!(x.check_rank_bounds());
    }

    #[test]
    fn explicit_rule_rejects_cap_violation() {
        let mut r = rng(4);
        let mut table = vec![BTreeMap::new(); 3];
        table[1].insert(1usize, 5usize); // cap at bond 2 sector 1 is 2
        assert!(matches!(
            BlockMps::<f64>::random(4, 2, SizeRule::Explicit(table), &mut r),
            Err(Error::BlockSizeCap { .. })
        ));
    }

    #[test]
    fn to_full_lands_in_sector() {
        for (k, n, seed) in [(5, 2, 10), (6, 3, 11), (4, 1, 12), (5, 5, 13), (4, 0, 14)] {
            let x = random_block(k, n, 2, seed);
            let t = x.to_full().evaluate().unwrap();
            let p = build_particle_number::<f64>(k).unwrap();
            let pt = p.apply(&t);
            let norm2 = t.dot(&t);
            let quotient = t.dot(&pt) / norm2;
            assert!((quotient - n as f64).abs() < 1e-13, "K={k}, N={n}");
            // P t = N t entrywise.
            let mut diff = pt;
            diff.axpy(-(n as f64), &t);
            assert!(diff.norm() / norm2.sqrt() < 1e-13);
        }
    }

    #[test]
    fn add_and_scale_evaluate_linearly() {
        let x = random_block(5, 2, 2, 20);
        let y = random_block(5, 2, 1, 21);
        let z = x.add(&y).unwrap();
        z.validate().unwrap();
        let mut expected = x.evaluate().unwrap();
        expected.axpy(1.0, &y.evaluate().unwrap());
        assert!(z.evaluate().unwrap().max_abs_diff(&expected) < 1e-12);
        for (k, (&rz, &rx)) in z.ranks().iter().zip(x.ranks().iter()).enumerate() {
            let ry = y.ranks()[k];
            assert_eq!(rz, rx + ry);
        }

        // x + (-1) x evaluates to zero.
        let zero = x.add(&x.scale(-1.0)).unwrap();
        assert!(zero.evaluate().unwrap().norm() < 1e-12);

        // x + 0 evaluates to x.
        let zero_state = x.scale(0.0);
        let same = x.add(&zero_state).unwrap();
        assert!(same.evaluate().unwrap().max_abs_diff(&x.evaluate().unwrap()) < 1e-12);
    }

    #[test]
    fn add_rejects_sector_mismatch() {
        let x = random_block(5, 2, 1, 22);
        let y = random_block(5, 3, 1, 23);
        assert!(matches!(x.add(&y), Err(Error::SectorMismatch { .. })));
    }

    #[test]
    fn inner_matches_dense() {
        for seed in 0..5 {
            let x = random_block(6, 3, 2, 30 + seed);
            let y = random_block(6, 3, 3, 40 + seed);
            let got = x.inner(&y).unwrap();
            let expected = x.evaluate().unwrap().dot(&y.evaluate().unwrap());
            assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn inner_of_determinants_is_orthonormal() {
        let a = BlockMps::<f64>::slater(&[1, 3], 4).unwrap();
        let b = BlockMps::<f64>::slater(&[2, 3], 4).unwrap();
        assert_eq!(a.inner(&a).unwrap(), 1.0);
        assert_eq!(a.inner(&b).unwrap(), 0.0);
        assert!(a.inner(&a).unwrap() >= 0.0);
    }

    #[test]
    fn orthogonalize_preserves_evaluation_and_gram() {
        for (k, n, seed) in [(6, 2, 50), (6, 3, 51), (5, 1, 52), (5, 4, 53)] {
            let x = random_block(k, n, 2, seed);
            let t0 = x.evaluate().unwrap();
            let scale = t0.norm().max(1.0);

            let right = x.orthogonalize(Form::Right);
            right.validate().unwrap();
            assert!(right.check_rank_bounds());
            assert!(right.evaluate().unwrap().max_abs_diff(&t0) / scale < 1e-12);
            assert!(right.to_full().verify_form(1e-10));

            let left = x.orthogonalize(Form::Left);
            left.validate().unwrap();
            assert!(left.evaluate().unwrap().max_abs_diff(&t0) / scale < 1e-12);
            assert!(left.to_full().verify_form(1e-10));

            // Norm concentrates in the first core after right-orthogonalization.
            let first_core_norm = {
                let mut s = 0.0;
                for b in right.core(1).unocc.values() {
                    s += b.iter().map(|x| x * x).sum::<f64>();
                }
                for b in right.core(1).occ.values() {
                    s += b.iter().map(|x| x * x).sum::<f64>();
                }
                s.sqrt()
            };
            assert!((first_core_norm - x.norm()).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn orthogonalize_idempotent() {
        let x = random_block(6, 2, 2, 60).orthogonalize(Form::Right);
        let y = x.orthogonalize(Form::Right);
        assert!(y.evaluate().unwrap().max_abs_diff(&x.evaluate().unwrap()) < 1e-13);
    }

    #[test]
    fn tt_svd_matches_full_format_spectrum_as_multiset() {
        for (k, n, seed) in [(6, 3, 70), (6, 2, 71), (5, 1, 72)] {
            let x = random_block(k, n, 2, seed);
            let (bx, bspec) = x.tt_svd().unwrap();
            bx.validate().unwrap();
            assert!(bx.check_rank_bounds());
            let scale = x.norm();
            assert!(bx.evaluate().unwrap().max_abs_diff(&x.evaluate().unwrap()) / scale < 1e-12);

            let (_, fspec) = full_tt_svd(&x.to_full(), Form::Right).unwrap();
            for bond in 1..k {
                let merged = bspec.merged_bond(bond);
                let full_sv = &fspec.bonds[bond - 1];
                assert_eq!(merged.len(), full_sv.len(), "bond {bond} K={k} N={n}");
                for (a, b) in merged.iter().zip(full_sv) {
                    assert!((a - b).abs() < 1e-10, "bond {bond}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn tt_svd_rank_one() {
        let x = BlockMps::<f64>::slater(&[2, 3], 5).unwrap().scale(2.5);
        let (_, spec) = x.tt_svd().unwrap();
        for bond in 1..5 {
            let merged = spec.merged_bond(bond);
            assert_eq!(merged.len(), 1);
            assert!((merged[0] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn truncate_eps_zero_is_identity() {
        let x = random_block(6, 3, 2, 80);
        let (svd, spec) = x.tt_svd().unwrap();
        let y = svd.truncate(&spec, BlockTruncateMode::Eps(0.0)).unwrap();
        let scale = x.norm();
        assert!(y.evaluate().unwrap().max_abs_diff(&x.evaluate().unwrap()) / scale < 1e-12);
    }

    #[test]
    fn truncate_error_bound_and_conservation() {
        for seed in 0..5 {
            let x = random_block(6, 3, 3, 90 + seed);
            let (svd, spec) = x.tt_svd().unwrap();
            let eps = 0.4 * x.norm();
            let y = svd.truncate(&spec, BlockTruncateMode::Eps(eps)).unwrap();
            y.validate().unwrap();
            assert!(y.check_rank_bounds());
            let mut diff = y.evaluate().unwrap();
            diff.axpy(-1.0, &x.evaluate().unwrap());
            assert!(diff.norm() <= eps + 1e-12);
            // Conservation is structural.
            assert!((y.particle_expectation().unwrap() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncate_to_zero_errors() {
        let x = random_block(5, 2, 2, 100);
        let (svd, spec) = x.tt_svd().unwrap();
        assert!(matches!(
            svd.truncate(&spec, BlockTruncateMode::Eps(x.norm() * 1.5)),
            Err(Error::TruncateToZero { .. })
        ));
    }

    #[test]
    fn planted_center_spectrum() {
        // The rounding construction: blocks of size 1, orthonormal halves,
        // prescribed singular values at the middle bond.
        let k = 20;
        let n = 6;
        let mut x = random_block(k, n, 1, 110);
        x.orthonormalize_split(k / 2);
        let sigmas: Vec<f64> = vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.5];
        let factors: BTreeMap<usize, f64> =
            (0..=6).map(|s| (s, sigmas[s])).collect();
        x.scale_bond_sectors(k / 2, &factors);

        let (_, spec) = x.tt_svd().unwrap();
        let merged = spec.merged_bond(k / 2);
        assert_eq!(merged.len(), 7);
        let mut expected = sigmas.clone();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, want) in merged.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        // Norm is the Euclidean norm of the planted values.
        let norm2: f64 = sigmas.iter().map(|s| s * s).sum();
        assert!((x.norm() - norm2.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn particle_expectation_is_n() {
        for (k, n, seed) in [(6, 3, 120), (5, 2, 121), (7, 1, 122), (4, 4, 123)] {
            let x = random_block(k, n, 2, seed);
            assert!((x.particle_expectation().unwrap() - n as f64).abs() < 1e-12);
            // Dense Rayleigh quotient agrees.
            let t = x.evaluate().unwrap();
            let p = build_particle_number::<f64>(k).unwrap();
            let dense_q = t.dot(&p.apply(&t)) / t.dot(&t);
            assert!((x.particle_expectation().unwrap() - dense_q).abs() < 1e-12);
        }
    }

    #[test]
    fn particle_expectation_zero_vector_errors() {
        let x = random_block(4, 2, 1, 130).scale(0.0);
        assert!(matches!(x.particle_expectation(), Err(Error::ZeroVector)));
    }

    #[test]
    fn verify_block_eigen_on_random_states() {
        let x = random_block(6, 3, 2, 140);
        for k in 1..6 {
            assert!(x.verify_block_eigen(k, 1e-10).unwrap(), "bond {k}");
        }
    }

    #[test]
    fn from_full_round_trip() {
        for (k, n, seed) in [(5, 2, 150), (6, 3, 151), (4, 1, 152)] {
            let x = random_block(k, n, 2, seed);
            let full = x.to_full();
            let detected = from_full(&full, n, 1e-8).unwrap();
            detected.validate().unwrap();
            assert!(detected.check_rank_bounds());
            let scale = x.norm();
            assert!(
                detected.evaluate().unwrap().max_abs_diff(&x.evaluate().unwrap()) / scale < 1e-10,
                "K={k} N={n}"
            );
        }
    }

    #[test]
    fn from_full_rejects_mixed_particle_number() {
        let mut r = rng(160);
        let y = FullMps::<f64>::random(&vec![2; 5], &vec![2; 4], &mut r);
        assert!(matches!(from_full(&y, 2, 1e-8), Err(Error::NotInSector { .. })));
    }

    #[test]
    fn from_full_w_state() {
        // (e_100 + e_010 + e_001)/sqrt(3): all blocks 1x1, ranks (2, 2).
        let k = 3;
        let mut t = DenseTensor::<f64>::zeros_fock(k);
        let w = 1.0 / 3.0f64.sqrt();
        t.set(&[1, 0, 0], w);
        t.set(&[0, 1, 0], w);
        t.set(&[0, 0, 1], w);
        let full = crate::full::from_dense(&t).unwrap();
        let x = from_full(&full, 1, 1e-10).unwrap();
        assert_eq!(x.ranks(), vec![2, 2]);
        for k in 1..=3 {
            for (_, b) in &x.core(k).unocc {
                assert_eq!(b.shape(), (1, 1));
            }
            for (_, b) in &x.core(k).occ {
                assert_eq!(b.shape(), (1, 1));
            }
        }
        assert!(x.evaluate().unwrap().max_abs_diff(&t) < 1e-10);
    }

    #[test]
    fn from_full_recovers_after_rank_padding() {
        // Non-minimal input ranks trigger the internal rank-reduction pass.
        let x = random_block(5, 2, 1, 170);
        let full = x.to_full();
        let padded = {
            let mut cores = Vec::new();
            for (i, c) in full.cores.iter().enumerate() {
                let rl = if i == 0 { 1 } else { c.left_rank() + 1 };
                let rr = if i == full.cores.len() - 1 { 1 } else { c.right_rank() + 1 };
                let layers = c
                    .layers
                    .iter()
                    .map(|l| {
                        let mut m = DMatrix::zeros(rl, rr);
                        m.view_mut((0, 0), l.shape()).copy_from(l);
                        m
                    })
                    .collect();
                cores.push(Core::new(layers));
            }
            FullMps::new(cores)
        };
        let detected = from_full(&padded, 2, 1e-8).unwrap();
        let scale = x.norm();
        assert!(detected.evaluate().unwrap().max_abs_diff(&x.evaluate().unwrap()) / scale < 1e-9);
    }

    #[test]
    fn rank_bounds_match_lemma_table() {
        let x = random_block(6, 3, 8, 180); // clamped to admissible caps
        for k in 0..=6 {
            let bounds = sector_size_bounds(6, 3, k);
            for (&n, &r) in &x.rho_table()[k] {
                assert!(r <= bounds[&n]);
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let mut r = rng(190);
        let x = BlockMps::<f32>::random(5, 2, SizeRule::Constant(1), &mut r).unwrap();
        assert!((x.particle_expectation().unwrap() - 2.0f32).abs() < 1e-5);
        let (svd, spec) = x.tt_svd().unwrap();
        let y = svd.truncate(&spec, BlockTruncateMode::Eps(0.0)).unwrap();
        y.validate().unwrap();
    }
}
