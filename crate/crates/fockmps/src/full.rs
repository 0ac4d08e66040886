//! Plain (non-block) matrix product states and operators.
//!
//! Cores are stored as one slice matrix per physical index, so a core of
//! ranks `(r, r')` and mode size `n` is `n` matrices of shape `r x r'`.
//! The first mode of the represented tensor is the slowest dense index,
//! matching the Kronecker-product order of the dense oracle.

use nalgebra::DMatrix;

use crate::dense::{DenseOperator, DenseTensor, DENSE_TENSOR_GUARD};
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Order-3 MPS core: `layers[alpha]` is the `r_{k-1} x r_k` slice matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Core<T: Scalar> {
    pub layers: Vec<DMatrix<T>>,
}

impl<T: Scalar> Core<T> {
    pub fn new(layers: Vec<DMatrix<T>>) -> Self {
        assert!(!layers.is_empty());
        let (r, c) = layers[0].shape();
        for l in &layers {
            assert_eq!(l.shape(), (r, c), "all layers of a core share one shape");
        }
        Self { layers }
    }

    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self { layers: vec![DMatrix::zeros(left, right); mode] }
    }

    pub fn mode_size(&self) -> usize {
        self.layers.len()
    }

    pub fn left_rank(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn right_rank(&self) -> usize {
        self.layers[0].ncols()
    }

    /// Horizontal unfolding `r_{k-1} x (n * r_k)`, layer-major columns.
    pub fn unfold_right(&self) -> DMatrix<T> {
        let (r, c) = (self.left_rank(), self.right_rank());
        let mut m = DMatrix::zeros(r, self.mode_size() * c);
        for (a, l) in self.layers.iter().enumerate() {
            m.view_mut((0, a * c), (r, c)).copy_from(l);
        }
        m
    }

    /// Vertical unfolding `(n * r_{k-1}) x r_k`, layer-major rows.
    pub fn unfold_left(&self) -> DMatrix<T> {
        let (r, c) = (self.left_rank(), self.right_rank());
        let mut m = DMatrix::zeros(self.mode_size() * r, c);
        for (a, l) in self.layers.iter().enumerate() {
            m.view_mut((a * r, 0), (r, c)).copy_from(l);
        }
        m
    }

    pub fn refold_right(m: &DMatrix<T>, mode: usize) -> Self {
        let c = m.ncols() / mode;
        let layers = (0..mode).map(|a| m.view((0, a * c), (m.nrows(), c)).into_owned()).collect();
        Self::new(layers)
    }

    pub fn refold_left(m: &DMatrix<T>, mode: usize) -> Self {
        let r = m.nrows() / mode;
        let layers = (0..mode).map(|a| m.view((a * r, 0), (r, m.ncols())).into_owned()).collect();
        Self::new(layers)
    }

    /// Multiply a matrix into the left bond index.
    pub fn mul_left(&self, g: &DMatrix<T>) -> Self {
        Self::new(self.layers.iter().map(|l| g * l).collect())
    }

    /// Multiply a matrix into the right bond index.
    pub fn mul_right(&self, g: &DMatrix<T>) -> Self {
        Self::new(self.layers.iter().map(|l| l * g).collect())
    }
}

/// Strong Kronecker product of two cores: blockwise matrix product of slice
/// matrices, with the first core's physical index slowest.
pub fn strong_kronecker<T: Scalar>(a: &Core<T>, b: &Core<T>) -> Result<Core<T>> {
    if a.right_rank() != b.left_rank() {
        return Err(Error::DimensionMismatch(format!(
            "strong Kronecker inner ranks {} vs {}",
            a.right_rank(),
            b.left_rank()
        )));
    }
    let mut layers = Vec::with_capacity(a.mode_size() * b.mode_size());
    for la in &a.layers {
        for lb in &b.layers {
            layers.push(la * lb);
        }
    }
    Ok(Core::new(layers))
}

/// Order-4 MPO core: `layers[alpha * n_in + beta]` is the `r x r'` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MpoCore<T: Scalar> {
    pub out_mode: usize,
    pub in_mode: usize,
    pub layers: Vec<DMatrix<T>>,
}

impl<T: Scalar> MpoCore<T> {
    pub fn new(out_mode: usize, in_mode: usize, layers: Vec<DMatrix<T>>) -> Self {
        assert_eq!(layers.len(), out_mode * in_mode);
        let shape = layers[0].shape();
        for l in &layers {
            assert_eq!(l.shape(), shape);
        }
        Self { out_mode, in_mode, layers }
    }

    pub fn zeros(left: usize, out_mode: usize, in_mode: usize, right: usize) -> Self {
        Self { out_mode, in_mode, layers: vec![DMatrix::zeros(left, right); out_mode * in_mode] }
    }

    pub fn left_rank(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn right_rank(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn layer(&self, alpha: usize, beta: usize) -> &DMatrix<T> {
        &self.layers[alpha * self.in_mode + beta]
    }

    pub fn layer_mut(&mut self, alpha: usize, beta: usize) -> &mut DMatrix<T> {
        &mut self.layers[alpha * self.in_mode + beta]
    }

    /// Build a core from a lift-product pattern: each `(alpha, beta)` slice
    /// is `w * m[(alpha, beta)]` for a bond matrix `w` and a 2x2 elementary
    /// matrix `m`.
    pub fn from_lift(w: &DMatrix<T>, m: &DMatrix<T>) -> Self {
        let (om, im) = m.shape();
        let mut layers = Vec::with_capacity(om * im);
        for a in 0..om {
            for b in 0..im {
                layers.push(w.scale(m[(a, b)]));
            }
        }
        Self { out_mode: om, in_mode: im, layers }
    }

    /// Unfolding with rows `(j, alpha, beta)` and columns `j'`.
    pub fn unfold_left(&self) -> DMatrix<T> {
        let (r, c) = (self.left_rank(), self.right_rank());
        let n = self.layers.len();
        let mut m = DMatrix::zeros(n * r, c);
        for (i, l) in self.layers.iter().enumerate() {
            m.view_mut((i * r, 0), (r, c)).copy_from(l);
        }
        m
    }

    /// Unfolding with rows `j` and columns `(alpha, beta, j')`.
    pub fn unfold_right(&self) -> DMatrix<T> {
        let (r, c) = (self.left_rank(), self.right_rank());
        let n = self.layers.len();
        let mut m = DMatrix::zeros(r, n * c);
        for (i, l) in self.layers.iter().enumerate() {
            m.view_mut((0, i * c), (r, c)).copy_from(l);
        }
        m
    }

    pub fn refold_left(m: &DMatrix<T>, out_mode: usize, in_mode: usize) -> Self {
        let r = m.nrows() / (out_mode * in_mode);
        let layers = (0..out_mode * in_mode)
            .map(|i| m.view((i * r, 0), (r, m.ncols())).into_owned())
            .collect();
        Self { out_mode, in_mode, layers }
    }

    pub fn refold_right(m: &DMatrix<T>, out_mode: usize, in_mode: usize) -> Self {
        let c = m.ncols() / (out_mode * in_mode);
        let layers = (0..out_mode * in_mode)
            .map(|i| m.view((0, i * c), (m.nrows(), c)).into_owned())
            .collect();
        Self { out_mode, in_mode, layers }
    }

    pub fn mul_left(&self, g: &DMatrix<T>) -> Self {
        Self {
            out_mode: self.out_mode,
            in_mode: self.in_mode,
            layers: self.layers.iter().map(|l| g * l).collect(),
        }
    }

    pub fn mul_right(&self, g: &DMatrix<T>) -> Self {
        Self {
            out_mode: self.out_mode,
            in_mode: self.in_mode,
            layers: self.layers.iter().map(|l| l * g).collect(),
        }
    }
}

/// Mode core product `M . X`: the composite bond index is `(j, j')` with the
/// MPS index `j` slow, so each output slice is `sum_beta X^beta (x) M^{alpha beta}`.
pub fn mode_core_product<T: Scalar>(m: &MpoCore<T>, x: &Core<T>) -> Result<Core<T>> {
    if m.in_mode != x.mode_size() {
        return Err(Error::DimensionMismatch(format!(
            "mode core product: operator mode {} vs state mode {}",
            m.in_mode,
            x.mode_size()
        )));
    }
    let rl = x.left_rank() * m.left_rank();
    let rr = x.right_rank() * m.right_rank();
    let mut layers = Vec::with_capacity(m.out_mode);
    for alpha in 0..m.out_mode {
        let mut out = DMatrix::zeros(rl, rr);
        for beta in 0..m.in_mode {
            out += x.layers[beta].kronecker(m.layer(alpha, beta));
        }
        layers.push(out);
    }
    Ok(Core::new(layers))
}

/// Orthogonality bookkeeping for a full MPS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Left,
    Right,
    LeftSvd,
    RightSvd,
}

/// A matrix product state: a chain of cores with matching bond ranks and
/// outer ranks one.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMps<T: Scalar> {
    pub cores: Vec<Core<T>>,
    pub form: Option<Form>,
}

impl<T: Scalar> FullMps<T> {
    pub fn new(cores: Vec<Core<T>>) -> Self {
        assert!(!cores.is_empty());
        assert_eq!(cores[0].left_rank(), 1, "leading rank must be 1");
        assert_eq!(cores.last().unwrap().right_rank(), 1, "trailing rank must be 1");
        for w in cores.windows(2) {
            assert_eq!(w[0].right_rank(), w[1].left_rank(), "adjacent bond ranks must agree");
        }
        Self { cores, form: None }
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode_size()).collect()
    }

    /// Bond ranks `r_1 .. r_{K-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores.iter().take(self.order() - 1).map(|c| c.right_rank()).collect()
    }

    /// All-zero tensor as rank-1 cores; closed under every operation here.
    pub fn zero(mode_sizes: &[usize]) -> Self {
        Self::new(mode_sizes.iter().map(|&n| Core::zeros(1, n, 1)).collect())
    }

    /// Random MPS with the given bond ranks and standard normal entries.
    pub fn random<R: rand::Rng>(mode_sizes: &[usize], ranks: &[usize], rng: &mut R) -> Self {
        assert_eq!(ranks.len() + 1, mode_sizes.len());
        let k = mode_sizes.len();
        let mut cores = Vec::with_capacity(k);
        for i in 0..k {
            let rl = if i == 0 { 1 } else { ranks[i - 1] };
            let rr = if i == k - 1 { 1 } else { ranks[i] };
            let layers = (0..mode_sizes[i])
                .map(|_| DMatrix::from_fn(rl, rr, |_, _| T::standard_normal(rng)))
                .collect();
            cores.push(Core::new(layers));
        }
        Self::new(cores)
    }

    /// Evaluate the represented tensor, guarded at K <= 12.
    pub fn evaluate(&self) -> Result<DenseTensor<T>> {
        let k = self.order();
        if k > DENSE_TENSOR_GUARD {
            return Err(Error::DenseGuard { order: k, max: DENSE_TENSOR_GUARD });
        }
        let m = fold_left(&self.cores);
        Ok(DenseTensor { dims: self.mode_sizes(), data: m.column(0).iter().copied().collect() })
    }

    /// Inner product by a right-to-left contraction sweep.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::DimensionMismatch("inner product of incompatible chains".into()));
        }
        let mut r = DMatrix::<T>::identity(1, 1);
        for (x, y) in self.cores.iter().zip(&other.cores).rev() {
            let mut next = DMatrix::zeros(x.left_rank(), y.left_rank());
            for (lx, ly) in x.layers.iter().zip(&y.layers) {
                next += lx * &r * ly.transpose();
            }
            r = next;
        }
        Ok(r[(0, 0)])
    }

    pub fn norm(&self) -> T {
        self.inner(self).expect("self inner product").max(T::zero()).sqrt()
    }

    /// Verify the claimed orthogonality form by Gram tests.
    pub fn verify_form(&self, tol: T) -> bool {
        let k = self.order();
        match self.form {
            None => true,
            Some(Form::Left) | Some(Form::LeftSvd) => (0..k - 1).all(|i| {
                let u = self.cores[i].unfold_left();
                let g = u.transpose() * &u;
                max_abs_diff(&g, &DMatrix::identity(g.nrows(), g.ncols())) < tol
            }),
            Some(Form::Right) | Some(Form::RightSvd) => (1..k).all(|i| {
                let u = self.cores[i].unfold_right();
                let g = &u * u.transpose();
                max_abs_diff(&g, &DMatrix::identity(g.nrows(), g.ncols())) < tol
            }),
        }
    }

    /// QR orthogonalization sweep.
    pub fn orthogonalize(&self, side: Form) -> Self {
        let mut cores = self.cores.clone();
        let k = cores.len();
        match side {
            Form::Left | Form::LeftSvd => {
                for i in 0..k - 1 {
                    let m = cores[i].unfold_left();
                    let qr = m.qr();
                    let (q, r) = (qr.q(), qr.r());
                    cores[i] = Core::refold_left(&q, cores[i].mode_size());
                    cores[i + 1] = cores[i + 1].mul_left(&r);
                }
                Self { cores, form: Some(Form::Left) }
            }
            Form::Right | Form::RightSvd => {
                for i in (1..k).rev() {
                    let m = cores[i].unfold_right().transpose();
                    let qr = m.qr();
                    let (q, r) = (qr.q(), qr.r());
                    cores[i] = Core::refold_right(&q.transpose(), cores[i].mode_size());
                    cores[i - 1] = cores[i - 1].mul_right(&r.transpose());
                }
                Self { cores, form: Some(Form::Right) }
            }
        }
    }
}

/// Contract a prefix of cores into the matrix of partial tensors: rows are
/// the dense multi-index over the covered modes (first mode slowest),
/// columns the open right bond.
pub fn fold_left<T: Scalar>(cores: &[Core<T>]) -> DMatrix<T> {
    let mut m = DMatrix::<T>::identity(1, 1);
    for core in cores {
        let rows = m.nrows() * core.mode_size();
        let mut next = DMatrix::zeros(rows, core.right_rank());
        for (a, layer) in core.layers.iter().enumerate() {
            let block = &m * layer;
            for p in 0..m.nrows() {
                next.row_mut(p * core.mode_size() + a).copy_from(&block.row(p));
            }
        }
        m = next;
    }
    m
}

pub(crate) fn max_abs_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let mut m = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max((*x - *y).abs());
    }
    m
}

/// Thin SVD with deterministic conventions: singular values in descending
/// order (stable on ties by original index) and each left singular vector's
/// largest-magnitude entry made positive.
pub fn svd_thin<T: Scalar>(m: &DMatrix<T>) -> (DMatrix<T>, Vec<T>, DMatrix<T>) {
    let (rows, cols) = m.shape();
    let rank = rows.min(cols);
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(rows, rank), vec![], DMatrix::zeros(rank, cols));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd computes u");
    let vt = svd.v_t.expect("svd computes v_t");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| {
        sv[b].partial_cmp(&sv[a]).expect("finite singular values").then(a.cmp(&b))
    });

    let mut u_out = DMatrix::zeros(rows, rank);
    let mut vt_out = DMatrix::zeros(rank, cols);
    let mut sigma = Vec::with_capacity(rank);
    for (pos, &i) in order.iter().enumerate() {
        let mut ucol = u.column(i).into_owned();
        let mut vrow = vt.row(i).into_owned();
        // Sign convention for reproducible cores.
        let mut imax = 0;
        for (j, x) in ucol.iter().enumerate() {
            if x.abs() > ucol[imax].abs() {
                imax = j;
            }
        }
        if ucol[imax] < T::zero() {
            ucol.neg_mut();
            vrow.neg_mut();
        }
        u_out.set_column(pos, &ucol);
        vt_out.set_row(pos, &vrow);
        sigma.push(sv[i]);
    }
    (u_out, sigma, vt_out)
}

/// Per-bond descending singular values of the TT-SVD form.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum<T: Scalar> {
    pub bonds: Vec<Vec<T>>,
}

impl<T: Scalar> SingularSpectrum<T> {
    pub fn norm(&self) -> T {
        if self.bonds.is_empty() {
            return T::zero();
        }
        self.bonds[0].iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
    }
}

/// Rank cutoff for numerically zero singular values.
fn numeric_rank<T: Scalar>(sigma: &[T], rows: usize, cols: usize) -> usize {
    if sigma.is_empty() {
        return 0;
    }
    let floor = sigma[0] * T::default_epsilon() * real::<T>((rows.max(cols) * 8) as f64);
    sigma.iter().take_while(|&&s| s > floor).count().max(1)
}

/// Bring an MPS into TT-SVD form on the requested side and return the bond
/// spectra. A zero tensor yields the rank-1 zero representation with an
/// empty spectrum.
pub fn tt_svd<T: Scalar>(mps: &FullMps<T>, side: Form) -> Result<(FullMps<T>, SingularSpectrum<T>)> {
    let k = mps.order();
    if mps.norm() == T::zero() {
        return Ok((
            FullMps::zero(&mps.mode_sizes()),
            SingularSpectrum { bonds: vec![vec![]; k.saturating_sub(1)] },
        ));
    }
    let mut bonds = vec![Vec::new(); k - 1];
    match side {
        Form::Right | Form::RightSvd => {
            let mut m = mps.orthogonalize(Form::Left);
            for i in (1..k).rev() {
                let unf = m.cores[i].unfold_right();
                let (u, sigma, vt) = svd_thin(&unf);
                let r = numeric_rank(&sigma, unf.nrows(), unf.ncols());
                let vt = vt.rows(0, r).into_owned();
                m.cores[i] = Core::refold_right(&vt, m.cores[i].mode_size());
                let mut us = u.columns(0, r).into_owned();
                for (c, &s) in sigma.iter().take(r).enumerate() {
                    us.column_mut(c).scale_mut(s);
                }
                m.cores[i - 1] = m.cores[i - 1].mul_right(&us);
                bonds[i - 1] = sigma[..r].to_vec();
            }
            m.form = Some(Form::RightSvd);
            Ok((m, SingularSpectrum { bonds }))
        }
        Form::Left | Form::LeftSvd => {
            let mut m = mps.orthogonalize(Form::Right);
            for i in 0..k - 1 {
                let unf = m.cores[i].unfold_left();
                let (u, sigma, vt) = svd_thin(&unf);
                let r = numeric_rank(&sigma, unf.nrows(), unf.ncols());
                let u = u.columns(0, r).into_owned();
                m.cores[i] = Core::refold_left(&u, m.cores[i].mode_size());
                let mut sv = vt.rows(0, r).into_owned();
                for (row, &s) in sigma.iter().take(r).enumerate() {
                    sv.row_mut(row).scale_mut(s);
                }
                m.cores[i + 1] = m.cores[i + 1].mul_left(&sv);
                bonds[i] = sigma[..r].to_vec();
            }
            m.form = Some(Form::LeftSvd);
            Ok((m, SingularSpectrum { bonds }))
        }
    }
}

/// Truncation mode: error threshold or explicit bond ranks.
#[derive(Debug, Clone)]
pub enum TruncateMode<T: Scalar> {
    Eps(T),
    Ranks(Vec<usize>),
}

/// Truncate an MPS in right-orthogonal TT-SVD form.
///
/// In eps mode the discarded singular values satisfy
/// `sum sigma^2 <= eps^2`; `eps >= |x|` is rejected.
pub fn truncate<T: Scalar>(
    mps: &FullMps<T>,
    spectrum: &SingularSpectrum<T>,
    mode: TruncateMode<T>,
) -> Result<FullMps<T>> {
    assert_eq!(mps.form, Some(Form::RightSvd), "truncate expects right TT-SVD form");
    let k = mps.order();
    let keep: Vec<usize> = match mode {
        TruncateMode::Eps(eps) => {
            let norm = spectrum.norm();
            if eps >= norm {
                return Err(Error::TruncateToZero {
                    eps: eps.to_f64_lossy(),
                    norm: norm.to_f64_lossy(),
                });
            }
            // Smallest singular values first; ties broken by bond and index.
            let mut all: Vec<(T, usize, usize)> = Vec::new();
            for (b, sv) in spectrum.bonds.iter().enumerate() {
                for (i, &s) in sv.iter().enumerate() {
                    all.push((s, b, i));
                }
            }
            all.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("finite singular values")
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut budget = eps * eps;
            let mut drop = vec![0usize; k - 1];
            for (s, b, _) in all {
                let s2 = s * s;
                if s2 <= budget && drop[b] < spectrum.bonds[b].len() {
                    budget -= s2;
                    drop[b] += 1;
                } else {
                    break;
                }
            }
            spectrum.bonds.iter().zip(&drop).map(|(sv, d)| (sv.len() - d).max(1)).collect()
        }
        TruncateMode::Ranks(ranks) => {
            assert_eq!(ranks.len(), k - 1, "one rank per bond");
            spectrum.bonds.iter().zip(&ranks).map(|(sv, &r)| sv.len().min(r).max(1)).collect()
        }
    };

    let mut cores = mps.cores.clone();
    for b in 0..k - 1 {
        let r = keep[b];
        if r < cores[b].right_rank() {
            cores[b] = Core::new(cores[b].layers.iter().map(|l| l.columns(0, r).into_owned()).collect());
            cores[b + 1] =
                Core::new(cores[b + 1].layers.iter().map(|l| l.rows(0, r).into_owned()).collect());
        }
    }
    Ok(FullMps { cores, form: None })
}

/// Exact MPS of a dense tensor by successive thin SVDs.
pub fn from_dense<T: Scalar>(t: &DenseTensor<T>) -> Result<FullMps<T>> {
    let k = t.order();
    if k > DENSE_TENSOR_GUARD {
        return Err(Error::DenseGuard { order: k, max: DENSE_TENSOR_GUARD });
    }
    let dims = t.dims.clone();
    let mut cores = Vec::with_capacity(k);
    let mut rest = DMatrix::from_vec(1, t.len(), t.data.clone());
    let mut left = 1usize;
    for (i, &n) in dims.iter().enumerate() {
        let cols = rest.ncols() / n;
        // Rows (alpha, j) layer-major, columns the remaining modes.
        let m = DMatrix::from_fn(left * n, cols, |ra, c| rest[(ra % left, (ra / left) * cols + c)]);
        if i == k - 1 {
            cores.push(Core::refold_left(&m, n));
            break;
        }
        let (u, sigma, vt) = svd_thin(&m);
        let r = if sigma.is_empty() || sigma[0] == T::zero() {
            1
        } else {
            numeric_rank(&sigma, m.nrows(), m.ncols())
        };
        let u = u.columns(0, r).into_owned();
        cores.push(Core::refold_left(&u, n));
        let mut sv = vt.rows(0, r).into_owned();
        for (row, &s) in sigma.iter().take(r).enumerate() {
            sv.row_mut(row).scale_mut(s);
        }
        rest = sv;
        left = r;
    }
    Ok(FullMps::new(cores))
}

/// A matrix product operator: a chain of order-4 cores.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMpo<T: Scalar> {
    pub cores: Vec<MpoCore<T>>,
}

impl<T: Scalar> FullMpo<T> {
    pub fn new(cores: Vec<MpoCore<T>>) -> Self {
        assert!(!cores.is_empty());
        assert_eq!(cores[0].left_rank(), 1);
        assert_eq!(cores.last().unwrap().right_rank(), 1);
        for w in cores.windows(2) {
            assert_eq!(w[0].right_rank(), w[1].left_rank());
        }
        Self { cores }
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    /// Bond ranks `r_1 .. r_{K-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores.iter().take(self.order() - 1).map(|c| c.right_rank()).collect()
    }

    /// Rank-1 identity operator.
    pub fn identity(mode_sizes: &[usize]) -> Self {
        Self::new(
            mode_sizes
                .iter()
                .map(|&n| MpoCore::from_lift(&DMatrix::identity(1, 1), &DMatrix::identity(n, n)))
                .collect(),
        )
    }

    /// Dense matrix of the represented operator, guarded at K <= 10.
    pub fn evaluate(&self) -> Result<DenseOperator<T>> {
        let k = self.order();
        if k > crate::dense::DENSE_OP_GUARD {
            return Err(Error::DenseGuard { order: k, max: crate::dense::DENSE_OP_GUARD });
        }
        let dims: Vec<usize> = self.cores.iter().map(|c| c.out_mode).collect();
        let in_dims: Vec<usize> = self.cores.iter().map(|c| c.in_mode).collect();
        let rows: usize = dims.iter().product();
        let cols: usize = in_dims.iter().product();
        // Fold keeping the dense (row, col) pair index slowest.
        let mut m = vec![DMatrix::<T>::identity(1, 1)];
        for core in &self.cores {
            let mut next = Vec::with_capacity(m.len() * core.out_mode * core.in_mode);
            for prev in &m {
                for a in 0..core.out_mode {
                    for b in 0..core.in_mode {
                        next.push(prev * core.layer(a, b));
                    }
                }
            }
            m = next;
        }
        // m is indexed by interleaved (alpha_1, beta_1, ..., alpha_K, beta_K);
        // deinterleave into (alpha | beta).
        let mut data = DMatrix::zeros(rows, cols);
        for (lin, val) in m.iter().enumerate() {
            let mut rest = lin;
            let mut pairs = vec![(0usize, 0usize); k];
            for i in (0..k).rev() {
                let b = rest % in_dims[i];
                rest /= in_dims[i];
                let a = rest % dims[i];
                rest /= dims[i];
                pairs[i] = (a, b);
            }
            let mut r = 0;
            let mut c = 0;
            for (i, (a, b)) in pairs.iter().enumerate() {
                r = r * dims[i] + a;
                c = c * in_dims[i] + b;
            }
            data[(r, c)] = val[(0, 0)];
        }
        Ok(DenseOperator { dims, data })
    }
}

/// Apply an MPO to an MPS by core-wise mode core products; output ranks are
/// the products of the operator and state ranks.
pub fn apply_mpo<T: Scalar>(m: &FullMpo<T>, x: &FullMps<T>) -> Result<FullMps<T>> {
    if m.order() != x.order() {
        return Err(Error::DimensionMismatch(format!(
            "operator order {} vs state order {}",
            m.order(),
            x.order()
        )));
    }
    let cores = m
        .cores
        .iter()
        .zip(&x.cores)
        .map(|(mc, xc)| mode_core_product(mc, xc))
        .collect::<Result<Vec<_>>>()?;
    Ok(FullMps::new(cores))
}
