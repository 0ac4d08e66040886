//! Rank-compact MPO constructions for second-quantization operators.
//!
//! The one- and two-particle operators are assembled from a state machine
//! over partial operator products: each bond index corresponds to a partial
//! string (identity, single creator/annihilator with Jordan-Wigner tail,
//! pairs, or an accumulated sum awaiting one more index), and each core
//! entry is the exact slot factor of the four-string composition. The
//! construction telescopes to the target operator by construction, so all
//! Jordan-Wigner signs come out of the slot algebra instead of a sign
//! convention.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::full::{FullMpo, MpoCore};
use crate::scalar::{real, Scalar};

/// Symmetric one-particle coefficients `t_ij`, optionally banded.
#[derive(Debug, Clone, PartialEq)]
pub struct OneBodyCoeffs<T: Scalar> {
    pub k: usize,
    pub t: DMatrix<T>,
    pub bandwidth: Option<usize>,
}

impl<T: Scalar> OneBodyCoeffs<T> {
    pub fn new(t: DMatrix<T>, bandwidth: Option<usize>) -> Result<Self> {
        let k = t.nrows();
        if t.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "one-body coefficients must be square, got {}x{}",
                t.nrows(),
                t.ncols()
            )));
        }
        let tol = real::<T>(1e-13);
        for i in 0..k {
            for j in 0..i {
                if (t[(i, j)] - t[(j, i)]).abs() > tol {
                    return Err(Error::DimensionMismatch(format!(
                        "one-body coefficients not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(d) = bandwidth {
            for i in 0..k {
                for j in 0..k {
                    if i.abs_diff(j) > d && t[(i, j)] != T::zero() {
                        return Err(Error::DimensionMismatch(format!(
                            "entry ({i}, {j}) violates bandwidth {d}"
                        )));
                    }
                }
            }
        }
        Ok(Self { k, t, bandwidth })
    }

    /// 1-based coefficient accessor.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.t[(i - 1, j - 1)]
    }

    /// Nearest-neighbor hopping chain `t_{i,i+1} = t_{i+1,i} = -1`.
    pub fn hopping_chain(k: usize) -> Self {
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k - 1 {
            t[(i, i + 1)] = -T::one();
            t[(i + 1, i)] = -T::one();
        }
        Self { k, t, bandwidth: Some(1) }
    }

    pub fn random<R: rand::Rng>(k: usize, rng: &mut R) -> Self {
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let x = T::standard_normal(rng);
                t[(i, j)] = x;
                t[(j, i)] = x;
            }
        }
        Self { k, t, bandwidth: None }
    }

    pub fn random_banded<R: rand::Rng>(k: usize, d: usize, rng: &mut R) -> Self {
        let mut c = Self::random(k, rng);
        for i in 0..k {
            for j in 0..k {
                if i.abs_diff(j) > d {
                    c.t[(i, j)] = T::zero();
                }
            }
        }
        c.bandwidth = Some(d);
        c
    }
}

/// Two-particle coefficients: the raw `v_{i1 i2 j1 j2}` and the grouped
/// antisymmetrized form, nonzero only for `i1 < i2`, `j1 < j2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBodyCoeffs<T: Scalar> {
    pub k: usize,
    pub raw: Vec<T>,
    vtilde: Vec<T>,
    pub locality: Option<usize>,
}

impl<T: Scalar> TwoBodyCoeffs<T> {
    pub fn new(k: usize, raw: Vec<T>, locality: Option<usize>) -> Result<Self> {
        if raw.len() != k * k * k * k {
            return Err(Error::DimensionMismatch(format!(
                "two-body coefficients need K^4 = {} entries, got {}",
                k * k * k * k,
                raw.len()
            )));
        }
        let at = |i1: usize, i2: usize, j1: usize, j2: usize| {
            raw[(((i1 - 1) * k + (i2 - 1)) * k + (j1 - 1)) * k + (j2 - 1)]
        };
        if let Some(d) = locality {
            for i1 in 1..=k {
                for i2 in 1..=k {
                    for j1 in 1..=k {
                        for j2 in 1..=k {
                            let spread = [
                                i1.abs_diff(i2),
                                i1.abs_diff(j1),
                                i1.abs_diff(j2),
                                i2.abs_diff(j1),
                                i2.abs_diff(j2),
                                j1.abs_diff(j2),
                            ];
                            if spread.iter().any(|&s| s > d) && at(i1, i2, j1, j2) != T::zero() {
                                return Err(Error::DimensionMismatch(format!(
                                    "entry ({i1},{i2},{j1},{j2}) violates locality {d}"
                                )));
                            }
                        }
                    }
                }
            }
        }
        let mut vtilde = vec![T::zero(); k * k * k * k];
        for i1 in 1..=k {
            for i2 in i1 + 1..=k {
                for j1 in 1..=k {
                    for j2 in j1 + 1..=k {
                        let v = at(i1, i2, j1, j2) + at(i2, i1, j2, j1)
                            - at(i2, i1, j1, j2)
                            - at(i1, i2, j2, j1);
                        vtilde[(((i1 - 1) * k + (i2 - 1)) * k + (j1 - 1)) * k + (j2 - 1)] = v;
                    }
                }
            }
        }
        Ok(Self { k, raw, vtilde, locality })
    }

    pub fn random<R: rand::Rng>(k: usize, rng: &mut R) -> Self {
        let raw = (0..k * k * k * k).map(|_| T::standard_normal(rng)).collect();
        Self::new(k, raw, None).expect("dense random coefficients are valid")
    }

    /// Random coefficients subject to the locality pattern.
    pub fn random_local<R: rand::Rng>(k: usize, d: usize, rng: &mut R) -> Self {
        let mut raw = vec![T::zero(); k * k * k * k];
        for i1 in 1..=k {
            for i2 in 1..=k {
                for j1 in 1..=k {
                    for j2 in 1..=k {
                        let spread = [
                            i1.abs_diff(i2),
                            i1.abs_diff(j1),
                            i1.abs_diff(j2),
                            i2.abs_diff(j1),
                            i2.abs_diff(j2),
                            j1.abs_diff(j2),
                        ];
                        if spread.iter().all(|&s| s <= d) {
                            raw[(((i1 - 1) * k + (i2 - 1)) * k + (j1 - 1)) * k + (j2 - 1)] =
                                T::standard_normal(rng);
                        }
                    }
                }
            }
        }
        Self::new(k, raw, Some(d)).expect("local random coefficients are valid")
    }

    /// Random coefficients with the adjoint symmetry `v_{lkji} = v_{ijkl}`,
    /// so the assembled operator is a symmetric matrix.
    pub fn random_symmetric<R: rand::Rng>(k: usize, rng: &mut R) -> Self {
        let mut raw = vec![T::zero(); k * k * k * k];
        let mut filled = vec![false; k * k * k * k];
        let idx = |i: usize, j: usize, l: usize, m: usize| ((i * k + j) * k + l) * k + m;
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    for m in 0..k {
                        if !filled[idx(i, j, l, m)] {
                            let x = T::standard_normal(rng);
                            raw[idx(i, j, l, m)] = x;
                            filled[idx(i, j, l, m)] = true;
                            raw[idx(m, l, j, i)] = x;
                            filled[idx(m, l, j, i)] = true;
                        }
                    }
                }
            }
        }
        Self::new(k, raw, None).expect("valid")
    }

    /// Antisymmetrized coefficient, 1-based; zero unless `i1<i2` and `j1<j2`.
    pub fn vt(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> T {
        self.vtilde[(((i1 - 1) * self.k + (i2 - 1)) * self.k + (j1 - 1)) * self.k + (j2 - 1)]
    }
}

/// Bond ranks of an MPO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankProfile(pub Vec<usize>);

pub fn mpo_rank_profile<T: Scalar>(m: &FullMpo<T>) -> RankProfile {
    RankProfile(m.ranks())
}

// ---------------------------------------------------------------------------
// Slot-factor algebra on exact 2x2 integer matrices.
// ---------------------------------------------------------------------------

/// Role of one operator string at the current slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    /// Activation position lies left of the slot: factor I.
    Past,
    /// Activation position lies right of the slot: Jordan-Wigner factor S.
    Pending,
    /// Creator activating here: factor A*.
    ActCreate,
    /// Annihilator activating here: factor A.
    ActAnnihilate,
}

/// Elementary alphabet of slot factors (up to sign).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorKind {
    Identity,
    Sign,
    Annihilate,
    Create,
    Count,
}

impl FactorKind {
    pub fn matrix<T: Scalar>(self) -> DMatrix<T> {
        match self {
            FactorKind::Identity => crate::dense::elem_identity(),
            FactorKind::Sign => crate::dense::elem_sign(),
            FactorKind::Annihilate => crate::dense::elem_annihilate(),
            FactorKind::Create => crate::dense::elem_create(),
            FactorKind::Count => crate::dense::elem_count(),
        }
    }
}

fn role_matrix(r: Role) -> [[i64; 2]; 2] {
    match r {
        Role::Past => [[1, 0], [0, 1]],
        Role::Pending => [[1, 0], [0, -1]],
        Role::ActCreate => [[0, 0], [1, 0]],
        Role::ActAnnihilate => [[0, 1], [0, 0]],
    }
}

fn mat_mul(a: [[i64; 2]; 2], b: [[i64; 2]; 2]) -> [[i64; 2]; 2] {
    let mut c = [[0i64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Ordered product of the string slot factors, classified as a signed
/// elementary matrix.
pub(crate) fn slot_factor(roles: &[Role]) -> (i64, FactorKind) {
    let mut m = [[1, 0], [0, 1]];
    for &r in roles {
        m = mat_mul(m, role_matrix(r));
    }
    for kind in [
        FactorKind::Identity,
        FactorKind::Sign,
        FactorKind::Annihilate,
        FactorKind::Create,
        FactorKind::Count,
    ] {
        let base = kind.matrix::<f64>();
        for sign in [1i64, -1] {
            let same = (0..2).all(|i| (0..2).all(|j| base[(i, j)] as i64 * sign == m[i][j]));
            if same {
                return (sign, kind);
            }
        }
    }
    unreachable!("slot factors stay in the signed elementary alphabet: {m:?}")
}

// ---------------------------------------------------------------------------
// Bond states of the one- and two-particle constructions.
// ---------------------------------------------------------------------------

/// A bond index of the operator chain: the partial product it carries.
/// Orbital labels are 1-based. `Await*` entries carry accumulated
/// coefficient sums awaiting one more orbital on this side; `Open*` entries
/// (right half) await an orbital on the left side of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Entry {
    Id,
    Cr(usize),
    An(usize),
    CrAn(usize, usize),
    CrCr(usize, usize),
    AnAn(usize, usize),
    AwaitAn(usize),
    AwaitCr(usize),
    OpenCr(usize),
    OpenAn(usize),
    Done,
}

impl Entry {
    /// Net particle count carried to the left of a bond holding this entry.
    pub(crate) fn flux(self) -> i64 {
        match self {
            Entry::Id | Entry::CrAn(..) | Entry::Done => 0,
            Entry::Cr(_) | Entry::AwaitAn(_) | Entry::OpenCr(_) => 1,
            Entry::An(_) | Entry::AwaitCr(_) | Entry::OpenAn(_) => -1,
            Entry::CrCr(..) => 2,
            Entry::AnAn(..) => -2,
        }
    }
}

/// A core transition: row entry, column entry, coefficient, slot factor.
pub(crate) struct Transition<T> {
    pub row: Entry,
    pub col: Entry,
    pub coeff: T,
    pub sign: i64,
    pub kind: FactorKind,
}

/// Abstract description of a constructed operator chain. Bond `K/2` state
/// is the left state; the center couplings switch to the right state and
/// are absorbed into core `K/2`.
pub(crate) struct OperatorChain<T> {
    pub k_total: usize,
    pub left_center_state: Vec<Entry>,
    /// Bond states `0..=K` (bond `K/2` holds the right state).
    pub states: Vec<Vec<Entry>>,
    /// Per-core transition lists.
    pub cores: Vec<Vec<Transition<T>>>,
    pub center: Vec<(Entry, Entry, T)>,
}

fn push_transition<T: Scalar>(
    out: &mut Vec<Transition<T>>,
    row: Entry,
    col: Entry,
    coeff: T,
    roles: &[Role],
) {
    if coeff == T::zero() {
        return;
    }
    let (sign, kind) = slot_factor(roles);
    out.push(Transition { row, col, coeff, sign, kind });
}

// ----- one-particle chain --------------------------------------------------

fn one_body_left_state(k_bond: usize) -> Vec<Entry> {
    let mut s = vec![Entry::Id];
    s.extend((1..=k_bond).map(Entry::Cr));
    s.extend((1..=k_bond).map(Entry::An));
    if k_bond >= 1 {
        s.push(Entry::Done);
    }
    s
}

fn one_body_right_state(k_bond: usize, k_total: usize) -> Vec<Entry> {
    let mut s = vec![Entry::Id];
    s.extend((k_bond + 1..=k_total).map(Entry::An));
    s.extend((k_bond + 1..=k_total).map(Entry::Cr));
    if k_bond <= k_total - 1 {
        s.push(Entry::Done);
    }
    s
}

/// Transitions of core `k` of the one-particle operator chain.
fn one_body_core<T: Scalar>(k: usize, coeffs: &OneBodyCoeffs<T>) -> Vec<Transition<T>> {
    use Entry::*;
    use Role::*;
    let k_total = coeffs.k;
    let half = k_total / 2;
    let one = T::one();
    let mut tr = Vec::new();
    if k <= half {
        push_transition(&mut tr, Id, Id, one, &[Pending, Pending]);
        push_transition(&mut tr, Id, Cr(k), one, &[ActCreate, Pending]);
        push_transition(&mut tr, Id, An(k), one, &[Pending, ActAnnihilate]);
        push_transition(&mut tr, Id, Done, coeffs.get(k, k), &[ActCreate, ActAnnihilate]);
        for i in 1..k {
            push_transition(&mut tr, Cr(i), Cr(i), one, &[Past, Pending]);
            push_transition(&mut tr, Cr(i), Done, coeffs.get(i, k), &[Past, ActAnnihilate]);
            push_transition(&mut tr, An(i), An(i), one, &[Pending, Past]);
            push_transition(&mut tr, An(i), Done, coeffs.get(k, i), &[ActCreate, Past]);
        }
        if k >= 2 {
            push_transition(&mut tr, Done, Done, one, &[Past, Past]);
        }
    } else {
        // Rows over modes k..=K, columns over modes k+1..=K.
        push_transition(&mut tr, Id, Id, one, &[Past, Past]);
        push_transition(&mut tr, An(k), Id, one, &[Past, ActAnnihilate]);
        push_transition(&mut tr, Cr(k), Id, one, &[ActCreate, Past]);
        push_transition(&mut tr, Done, Id, coeffs.get(k, k), &[ActCreate, ActAnnihilate]);
        for j in k + 1..=k_total {
            push_transition(&mut tr, An(j), An(j), one, &[Past, Pending]);
            push_transition(&mut tr, Done, An(j), coeffs.get(k, j), &[ActCreate, Pending]);
            push_transition(&mut tr, Cr(j), Cr(j), one, &[Pending, Past]);
            push_transition(&mut tr, Done, Cr(j), coeffs.get(j, k), &[Pending, ActAnnihilate]);
        }
        if k <= k_total - 1 {
            push_transition(&mut tr, Done, Done, one, &[Pending, Pending]);
        }
    }
    tr
}

/// Center couplings between the left and right states at bond K/2.
fn one_body_center<T: Scalar>(coeffs: &OneBodyCoeffs<T>) -> Vec<(Entry, Entry, T)> {
    use Entry::*;
    let k_total = coeffs.k;
    let half = k_total / 2;
    let mut c = vec![(Done, Id, T::one()), (Id, Done, T::one())];
    for i in 1..=half {
        for j in half + 1..=k_total {
            c.push((Cr(i), An(j), coeffs.get(i, j)));
            c.push((An(i), Cr(j), coeffs.get(j, i)));
        }
    }
    c
}

// ----- two-particle chain --------------------------------------------------

fn two_body_left_state(k_bond: usize, k_total: usize) -> Vec<Entry> {
    let mut s = vec![Entry::Id];
    s.extend((1..=k_bond).map(Entry::Cr));
    s.extend((1..=k_bond).map(Entry::An));
    for i in 1..=k_bond {
        for j in 1..=k_bond {
            s.push(Entry::CrAn(i, j));
        }
    }
    for i1 in 1..=k_bond {
        for i2 in i1 + 1..=k_bond {
            s.push(Entry::CrCr(i1, i2));
        }
    }
    for j1 in 1..=k_bond {
        for j2 in j1 + 1..=k_bond {
            s.push(Entry::AnAn(j1, j2));
        }
    }
    if k_bond >= 2 {
        s.extend((k_bond + 1..=k_total).map(Entry::AwaitAn));
        s.extend((k_bond + 1..=k_total).map(Entry::AwaitCr));
        s.push(Entry::Done);
    }
    s
}

fn two_body_right_state(k_bond: usize, k_total: usize) -> Vec<Entry> {
    let mut s = vec![Entry::Id];
    s.extend((k_bond + 1..=k_total).map(Entry::An));
    s.extend((k_bond + 1..=k_total).map(Entry::Cr));
    for i in k_bond + 1..=k_total {
        for j in k_bond + 1..=k_total {
            s.push(Entry::CrAn(i, j));
        }
    }
    for i1 in k_bond + 1..=k_total {
        for i2 in i1 + 1..=k_total {
            s.push(Entry::CrCr(i1, i2));
        }
    }
    for j1 in k_bond + 1..=k_total {
        for j2 in j1 + 1..=k_total {
            s.push(Entry::AnAn(j1, j2));
        }
    }
    if k_bond <= k_total - 2 {
        s.extend((1..=k_bond).map(Entry::OpenCr));
        s.extend((1..=k_bond).map(Entry::OpenAn));
        s.push(Entry::Done);
    }
    s
}

/// Transitions of core `k` of the two-particle chain. String order in the
/// slot products is (creator 1, creator 2, annihilator 1, annihilator 2).
fn two_body_core<T: Scalar>(k: usize, coeffs: &TwoBodyCoeffs<T>) -> Vec<Transition<T>> {
    use Entry::*;
    use Role::*;
    let k_total = coeffs.k;
    let half = k_total / 2;
    let one = T::one();
    let mut tr = Vec::new();
    if k <= half {
        // Structural transitions.
        push_transition(&mut tr, Id, Id, one, &[Pending, Pending, Pending, Pending]);
        push_transition(&mut tr, Id, Cr(k), one, &[ActCreate, Pending, Pending, Pending]);
        push_transition(&mut tr, Id, An(k), one, &[Pending, Pending, ActAnnihilate, Pending]);
        push_transition(&mut tr, Id, CrAn(k, k), one, &[ActCreate, Pending, ActAnnihilate, Pending]);
        for i in 1..k {
            push_transition(&mut tr, Cr(i), Cr(i), one, &[Past, Pending, Pending, Pending]);
            push_transition(&mut tr, Cr(i), CrAn(i, k), one, &[Past, Pending, ActAnnihilate, Pending]);
            push_transition(&mut tr, Cr(i), CrCr(i, k), one, &[Past, ActCreate, Pending, Pending]);
            push_transition(&mut tr, An(i), An(i), one, &[Pending, Pending, Past, Pending]);
            push_transition(&mut tr, An(i), CrAn(k, i), one, &[ActCreate, Pending, Past, Pending]);
            push_transition(&mut tr, An(i), AnAn(i, k), one, &[Pending, Pending, Past, ActAnnihilate]);
            for j in 1..k {
                push_transition(&mut tr, CrAn(i, j), CrAn(i, j), one, &[Past, Pending, Past, Pending]);
            }
            for i2 in i + 1..k {
                push_transition(&mut tr, CrCr(i, i2), CrCr(i, i2), one, &[Past, Past, Pending, Pending]);
                push_transition(&mut tr, AnAn(i, i2), AnAn(i, i2), one, &[Pending, Pending, Past, Past]);
            }
        }
        // Coefficient-carrying transitions into the awaiting sums.
        for j2 in k + 1..=k_total {
            for i1 in 1..k {
                // i2 = j1 = k completes three of the four indices.
                push_transition(
                    &mut tr,
                    Cr(i1),
                    AwaitAn(j2),
                    coeffs.vt(i1, k, k, j2),
                    &[Past, ActCreate, ActAnnihilate, Pending],
                );
                for j1 in 1..k {
                    push_transition(
                        &mut tr,
                        CrAn(i1, j1),
                        AwaitAn(j2),
                        coeffs.vt(i1, k, j1, j2),
                        &[Past, ActCreate, Past, Pending],
                    );
                }
                for i2 in i1 + 1..k {
                    push_transition(
                        &mut tr,
                        CrCr(i1, i2),
                        AwaitAn(j2),
                        coeffs.vt(i1, i2, k, j2),
                        &[Past, Past, ActAnnihilate, Pending],
                    );
                }
            }
        }
        for i2 in k + 1..=k_total {
            for j1 in 1..k {
                push_transition(
                    &mut tr,
                    An(j1),
                    AwaitCr(i2),
                    coeffs.vt(k, i2, j1, k),
                    &[ActCreate, Pending, Past, ActAnnihilate],
                );
                for i1 in 1..k {
                    push_transition(
                        &mut tr,
                        CrAn(i1, j1),
                        AwaitCr(i2),
                        coeffs.vt(i1, i2, j1, k),
                        &[Past, Pending, Past, ActAnnihilate],
                    );
                }
                for j2 in j1 + 1..k {
                    push_transition(
                        &mut tr,
                        AnAn(j1, j2),
                        AwaitCr(i2),
                        coeffs.vt(k, i2, j1, j2),
                        &[ActCreate, Pending, Past, Past],
                    );
                }
            }
        }
        // Completions into the accumulated operator.
        for i1 in 1..k {
            for j1 in 1..k {
                push_transition(
                    &mut tr,
                    CrAn(i1, j1),
                    Done,
                    coeffs.vt(i1, k, j1, k),
                    &[Past, ActCreate, Past, ActAnnihilate],
                );
            }
        }
        if k >= 3 {
            for j2 in k + 1..=k_total {
                push_transition(&mut tr, AwaitAn(j2), AwaitAn(j2), one, &[Past, Past, Past, Pending]);
            }
            push_transition(&mut tr, AwaitAn(k), Done, one, &[Past, Past, Past, ActAnnihilate]);
            for i2 in k + 1..=k_total {
                push_transition(&mut tr, AwaitCr(i2), AwaitCr(i2), one, &[Past, Pending, Past, Past]);
            }
            push_transition(&mut tr, AwaitCr(k), Done, one, &[Past, ActCreate, Past, Past]);
            push_transition(&mut tr, Done, Done, one, &[Past, Past, Past, Past]);
        }
    } else {
        // Right half: rows over modes k..=K, columns over modes k+1..=K.
        push_transition(&mut tr, Id, Id, one, &[Past, Past, Past, Past]);
        push_transition(&mut tr, An(k), Id, one, &[Past, Past, Past, ActAnnihilate]);
        push_transition(&mut tr, Cr(k), Id, one, &[Past, ActCreate, Past, Past]);
        push_transition(&mut tr, CrAn(k, k), Id, one, &[Past, ActCreate, Past, ActAnnihilate]);
        for j in k + 1..=k_total {
            push_transition(&mut tr, An(j), An(j), one, &[Past, Past, Past, Pending]);
            push_transition(&mut tr, CrAn(k, j), An(j), one, &[Past, ActCreate, Past, Pending]);
            push_transition(&mut tr, AnAn(k, j), An(j), one, &[Past, Past, ActAnnihilate, Pending]);
            push_transition(&mut tr, Cr(j), Cr(j), one, &[Past, Pending, Past, Past]);
            push_transition(&mut tr, CrAn(j, k), Cr(j), one, &[Past, Pending, Past, ActAnnihilate]);
            push_transition(&mut tr, CrCr(k, j), Cr(j), one, &[ActCreate, Pending, Past, Past]);
            for i in k + 1..=k_total {
                push_transition(&mut tr, CrAn(i, j), CrAn(i, j), one, &[Past, Pending, Past, Pending]);
            }
            for j2 in j + 1..=k_total {
                push_transition(&mut tr, AnAn(j, j2), AnAn(j, j2), one, &[Past, Past, Pending, Pending]);
                push_transition(&mut tr, CrCr(j, j2), CrCr(j, j2), one, &[Pending, Pending, Past, Past]);
            }
        }
        // Rows holding open sums exist down to bond K-2 only.
        if k <= k_total - 1 {
            for i1 in 1..k {
                if k <= k_total - 2 {
                    push_transition(
                        &mut tr,
                        OpenCr(i1),
                        OpenCr(i1),
                        one,
                        &[Past, Pending, Pending, Pending],
                    );
                }
                for j2 in k + 1..=k_total {
                    push_transition(
                        &mut tr,
                        OpenCr(i1),
                        An(j2),
                        coeffs.vt(i1, k, k, j2),
                        &[Past, ActCreate, ActAnnihilate, Pending],
                    );
                    for i2 in k + 1..=k_total {
                        push_transition(
                            &mut tr,
                            OpenCr(i1),
                            CrAn(i2, j2),
                            coeffs.vt(i1, i2, k, j2),
                            &[Past, Pending, ActAnnihilate, Pending],
                        );
                    }
                    for j1 in k + 1..j2 {
                        push_transition(
                            &mut tr,
                            OpenCr(i1),
                            AnAn(j1, j2),
                            coeffs.vt(i1, k, j1, j2),
                            &[Past, ActCreate, Pending, Pending],
                        );
                    }
                }
            }
            for j1 in 1..k {
                if k <= k_total - 2 {
                    push_transition(
                        &mut tr,
                        OpenAn(j1),
                        OpenAn(j1),
                        one,
                        &[Pending, Pending, Past, Pending],
                    );
                }
                for i2 in k + 1..=k_total {
                    push_transition(
                        &mut tr,
                        OpenAn(j1),
                        Cr(i2),
                        coeffs.vt(k, i2, j1, k),
                        &[ActCreate, Pending, Past, ActAnnihilate],
                    );
                    for j2 in k + 1..=k_total {
                        push_transition(
                            &mut tr,
                            OpenAn(j1),
                            CrAn(i2, j2),
                            coeffs.vt(k, i2, j1, j2),
                            &[ActCreate, Pending, Past, Pending],
                        );
                    }
                    for i1 in k + 1..i2 {
                        push_transition(
                            &mut tr,
                            OpenAn(j1),
                            CrCr(i1, i2),
                            coeffs.vt(i1, i2, j1, k),
                            &[Pending, Pending, Past, ActAnnihilate],
                        );
                    }
                }
            }
            if k <= k_total - 2 {
                push_transition(&mut tr, Done, Done, one, &[Pending, Pending, Pending, Pending]);
                push_transition(&mut tr, Done, OpenCr(k), one, &[ActCreate, Pending, Pending, Pending]);
                push_transition(
                    &mut tr,
                    Done,
                    OpenAn(k),
                    one,
                    &[Pending, Pending, ActAnnihilate, Pending],
                );
            }
            for i2 in k + 1..=k_total {
                for j2 in k + 1..=k_total {
                    push_transition(
                        &mut tr,
                        Done,
                        CrAn(i2, j2),
                        coeffs.vt(k, i2, k, j2),
                        &[ActCreate, Pending, ActAnnihilate, Pending],
                    );
                }
            }
        }
    }
    tr
}

fn two_body_center<T: Scalar>(coeffs: &TwoBodyCoeffs<T>) -> Vec<(Entry, Entry, T)> {
    use Entry::*;
    let k_total = coeffs.k;
    let half = k_total / 2;
    let mut c = vec![(Done, Id, T::one()), (Id, Done, T::one())];
    for i in 1..=half {
        c.push((Cr(i), OpenCr(i), T::one()));
        c.push((An(i), OpenAn(i), T::one()));
    }
    for x in half + 1..=k_total {
        c.push((AwaitAn(x), An(x), T::one()));
        c.push((AwaitCr(x), Cr(x), T::one()));
    }
    for i1 in 1..=half {
        for j1 in 1..=half {
            for i2 in half + 1..=k_total {
                for j2 in half + 1..=k_total {
                    c.push((CrAn(i1, j1), CrAn(i2, j2), coeffs.vt(i1, i2, j1, j2)));
                }
            }
        }
    }
    for i1 in 1..=half {
        for i2 in i1 + 1..=half {
            for j1 in half + 1..=k_total {
                for j2 in j1 + 1..=k_total {
                    c.push((CrCr(i1, i2), AnAn(j1, j2), coeffs.vt(i1, i2, j1, j2)));
                }
            }
        }
    }
    for j1 in 1..=half {
        for j2 in j1 + 1..=half {
            for i1 in half + 1..=k_total {
                for i2 in i1 + 1..=k_total {
                    c.push((AnAn(j1, j2), CrCr(i1, i2), coeffs.vt(i1, i2, j1, j2)));
                }
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// Chain assembly.
// ---------------------------------------------------------------------------

pub(crate) enum ChainKind<'a, T: Scalar> {
    OneBody(&'a OneBodyCoeffs<T>),
    TwoBody(&'a TwoBodyCoeffs<T>),
}

/// Build the abstract operator chain: bond states (bond K/2 carries the
/// right state), per-core transitions, and the center couplings.
pub(crate) fn operator_chain<T: Scalar>(kind: &ChainKind<T>) -> Result<OperatorChain<T>> {
    let k_total = match kind {
        ChainKind::OneBody(c) => c.k,
        ChainKind::TwoBody(c) => c.k,
    };
    if k_total < 4 || k_total % 2 != 0 {
        return Err(Error::UnsupportedOrder { order: k_total, min: 4 });
    }
    let half = k_total / 2;
    let states: Vec<Vec<Entry>> = (0..=k_total)
        .map(|b| match kind {
            ChainKind::OneBody(_) => {
                if b < half {
                    one_body_left_state(b)
                } else {
                    one_body_right_state(b, k_total)
                }
            }
            ChainKind::TwoBody(_) => {
                if b < half {
                    two_body_left_state(b, k_total)
                } else {
                    two_body_right_state(b, k_total)
                }
            }
        })
        .collect();
    let left_center_state = match kind {
        ChainKind::OneBody(_) => one_body_left_state(half),
        ChainKind::TwoBody(_) => two_body_left_state(half, k_total),
    };
    let cores = (1..=k_total)
        .map(|k| match kind {
            ChainKind::OneBody(c) => one_body_core(k, c),
            ChainKind::TwoBody(c) => two_body_core(k, c),
        })
        .collect();
    let center = match kind {
        ChainKind::OneBody(c) => one_body_center(c),
        ChainKind::TwoBody(c) => two_body_center(c),
    };
    Ok(OperatorChain { k_total, left_center_state, states, cores, center })
}

fn index_map(state: &[Entry]) -> HashMap<Entry, usize> {
    state.iter().enumerate().map(|(i, &e)| (e, i)).collect()
}

/// Materialize the chain into dense MPO cores; the center couplings are
/// absorbed into core K/2 by right multiplication.
fn materialize<T: Scalar>(kind: &ChainKind<T>) -> Result<FullMpo<T>> {
    let chain = operator_chain(kind)?;
    let k_total = chain.k_total;
    let half = k_total / 2;
    let mut cores = Vec::with_capacity(k_total);
    for k in 1..=k_total {
        let row_state = &chain.states[k - 1];
        let col_state: &[Entry] =
            if k == half { &chain.left_center_state } else { &chain.states[k] };
        let rows = index_map(row_state);
        let cols = index_map(col_state);
        let mut core = MpoCore::zeros(rows.len(), 2, 2, cols.len());
        for t in &chain.cores[k - 1] {
            let (&r, &c) = (
                rows.get(&t.row).unwrap_or_else(|| panic!("row {:?} at core {k}", t.row)),
                cols.get(&t.col).unwrap_or_else(|| panic!("col {:?} at core {k}", t.col)),
            );
            let m = t.kind.matrix::<T>();
            let scale = t.coeff * real::<T>(t.sign as f64);
            for a in 0..2 {
                for b in 0..2 {
                    core.layer_mut(a, b)[(r, c)] += scale * m[(a, b)];
                }
            }
        }
        if k == half {
            // Switch bond K/2 from the left state to the right state.
            let rmap = index_map(&chain.states[half]);
            let mut m = DMatrix::zeros(col_state.len(), chain.states[half].len());
            for &(le, re, coeff) in &chain.center {
                m[(cols[&le], rmap[&re])] += coeff;
            }
            core = core.mul_right(&m);
        }
        cores.push(core);
    }
    Ok(FullMpo::new(cores))
}

/// Rank-2 MPO of the Laplace-like operator `sum_i lambda_i a_i^* a_i`.
pub fn build_f<T: Scalar>(lambda: &[T]) -> Result<FullMpo<T>> {
    let k_total = lambda.len();
    if k_total < 2 {
        return Err(Error::UnsupportedOrder { order: k_total, min: 2 });
    }
    let id = crate::dense::elem_identity::<T>();
    let count = crate::dense::elem_count::<T>();
    let mut cores = Vec::with_capacity(k_total);
    for (pos, &l) in lambda.iter().enumerate() {
        let core = if pos == 0 {
            let mut c = MpoCore::zeros(1, 2, 2, 2);
            add_block(&mut c, 0, 0, T::one(), &id);
            add_block(&mut c, 0, 1, l, &count);
            c
        } else if pos == k_total - 1 {
            let mut c = MpoCore::zeros(2, 2, 2, 1);
            add_block(&mut c, 0, 0, l, &count);
            add_block(&mut c, 1, 0, T::one(), &id);
            c
        } else {
            let mut c = MpoCore::zeros(2, 2, 2, 2);
            add_block(&mut c, 0, 0, T::one(), &id);
            add_block(&mut c, 0, 1, l, &count);
            add_block(&mut c, 1, 1, T::one(), &id);
            c
        };
        cores.push(core);
    }
    Ok(FullMpo::new(cores))
}

fn add_block<T: Scalar>(core: &mut MpoCore<T>, r: usize, c: usize, coeff: T, m: &DMatrix<T>) {
    for a in 0..2 {
        for b in 0..2 {
            core.layer_mut(a, b)[(r, c)] += coeff * m[(a, b)];
        }
    }
}

/// One-particle operator `sum t_ij a_i^* a_j` with bond ranks at most K+2.
pub fn build_s<T: Scalar>(coeffs: &OneBodyCoeffs<T>) -> Result<FullMpo<T>> {
    materialize(&ChainKind::OneBody(coeffs))
}

/// Two-particle operator `sum_{i1<i2, j1<j2} vt a*_{i1} a*_{i2} a_{j1} a_{j2}`
/// with center bond rank at most `K^2/2 + 3K/2 + 2`.
pub fn build_d<T: Scalar>(coeffs: &TwoBodyCoeffs<T>) -> Result<FullMpo<T>> {
    materialize(&ChainKind::TwoBody(coeffs))
}

/// Exact-rank MPO compression: a left-to-right column elimination sweep
/// followed by a right-to-left row elimination sweep, both with
/// rank-revealing pivoted QR at relative tolerance `tol`. Never increases a
/// rank; preserves the represented operator up to `tol`-sized roundoff.
pub fn mpo_compress<T: Scalar>(m: &FullMpo<T>, tol: T) -> FullMpo<T> {
    let mut cores = m.cores.clone();
    let k_total = cores.len();
    for k in 0..k_total - 1 {
        let unf = cores[k].unfold_left();
        let (basis, transfer) = column_reduce(&unf, tol);
        cores[k] = MpoCore::refold_left(&basis, cores[k].out_mode, cores[k].in_mode);
        cores[k + 1] = cores[k + 1].mul_left(&transfer);
    }
    for k in (1..k_total).rev() {
        let unf = cores[k].unfold_right().transpose();
        let (basis, transfer) = column_reduce(&unf, tol);
        cores[k] = MpoCore::refold_right(&basis.transpose(), cores[k].out_mode, cores[k].in_mode);
        cores[k - 1] = cores[k - 1].mul_right(&transfer.transpose());
    }
    FullMpo::new(cores)
}

/// Factor `m ~ basis * transfer` with `basis` of full column rank revealed
/// by pivoted QR; the relative tolerance is applied to the R diagonal.
fn column_reduce<T: Scalar>(m: &DMatrix<T>, tol: T) -> (DMatrix<T>, DMatrix<T>) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(rows, 1), DMatrix::zeros(1, cols));
    }
    let qr = m.clone().col_piv_qr();
    let (q, r, p) = qr.unpack();
    let maxdiag = (0..rows.min(cols)).fold(T::zero(), |acc, i| acc.max(r[(i, i)].abs()));
    if maxdiag == T::zero() {
        return (DMatrix::zeros(rows, 1), DMatrix::zeros(1, cols));
    }
    let rank = (0..rows.min(cols))
        .take_while(|&i| r[(i, i)].abs() > tol * maxdiag)
        .count()
        .max(1);
    let basis = q.columns(0, rank).into_owned();
    let mut transfer = r.rows(0, rank).into_owned();
    p.inv_permute_columns(&mut transfer);
    (basis, transfer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{brute_force_hamiltonian, build_particle_number, DenseOperator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn rel_err(a: &DenseOperator<f64>, b: &DenseOperator<f64>) -> f64 {
        let mut diff = 0.0;
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            diff += (x - y) * (x - y);
        }
        diff.sqrt() / b.frobenius().max(1e-300)
    }

    #[test]
    fn build_f_constant_is_particle_number() {
        let k = 4;
        let f = build_f(&vec![1.0; k]).unwrap();
        assert_eq!(f.ranks(), vec![2, 2, 2]);
        let p = build_particle_number::<f64>(k).unwrap();
        assert!(f.evaluate().unwrap().max_abs_diff(&p) < 1e-14);
    }

    #[test]
    fn build_f_unit_vector_is_local_count() {
        let k = 4;
        let mut lambda = vec![0.0; k];
        lambda[0] = 1.0;
        let f = build_f(&lambda).unwrap();
        let a1 = crate::dense::build_annihilation::<f64>(1, k).unwrap();
        let expected = a1.transpose().matmul(&a1);
        assert!(f.evaluate().unwrap().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn build_f_random_matches_dense() {
        let mut r = rng(1);
        let k = 5;
        let lambda: Vec<f64> = (0..k).map(|_| f64::standard_normal(&mut r)).collect();
        let f = build_f(&lambda).unwrap();
        let mut t = DMatrix::zeros(k, k);
        for (i, &l) in lambda.iter().enumerate() {
            t[(i, i)] = l;
        }
        let expected = brute_force_hamiltonian(&t, &[]).unwrap();
        assert!(rel_err(&f.evaluate().unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn build_s_rejects_odd_order() {
        let c = OneBodyCoeffs::<f64>::hopping_chain(5);
        assert!(matches!(build_s(&c), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn build_s_diagonal_equals_build_f() {
        let mut r = rng(2);
        let k = 6;
        let lambda: Vec<f64> = (0..k).map(|_| f64::standard_normal(&mut r)).collect();
        let mut t = DMatrix::zeros(k, k);
        for (i, &l) in lambda.iter().enumerate() {
            t[(i, i)] = l;
        }
        let s = build_s(&OneBodyCoeffs::new(t, None).unwrap()).unwrap();
        let f = build_f(&lambda).unwrap();
        assert!(s.evaluate().unwrap().max_abs_diff(&f.evaluate().unwrap()) < 1e-12);
    }

    #[test]
    fn build_s_matches_brute_force() {
        for (k, seed) in [(4, 3), (4, 4), (6, 5), (6, 6)] {
            let mut r = rng(seed);
            let c = OneBodyCoeffs::<f64>::random(k, &mut r);
            let s = build_s(&c).unwrap();
            let expected = brute_force_hamiltonian(&c.t, &[]).unwrap();
            assert!(rel_err(&s.evaluate().unwrap(), &expected) < 1e-12, "K={k} seed={seed}");
            let dense = s.evaluate().unwrap();
            assert!(dense.max_abs_diff(&dense.transpose()) < 1e-10);
            let p = build_particle_number::<f64>(k).unwrap();
            assert!(dense.commutator_norm(&p) < 1e-10);
        }
    }

    #[test]
    fn build_s_rank_profile() {
        let mut r = rng(7);
        let c = OneBodyCoeffs::<f64>::random(8, &mut r);
        let s = build_s(&c).unwrap();
        assert_eq!(s.ranks(), vec![4, 6, 8, 10, 8, 6, 4]);
        let compressed = mpo_compress(&s, 1e-12);
        assert_eq!(compressed.ranks(), vec![4, 6, 8, 10, 8, 6, 4]);
        assert!(rel_err(&compressed.evaluate().unwrap(), &s.evaluate().unwrap()) < 1e-10);
    }

    #[test]
    fn build_s_banded_compresses_to_band_bound() {
        let mut r = rng(8);
        let k = 16;
        let d = 2;
        let c = OneBodyCoeffs::<f64>::random_banded(k, d, &mut r);
        let s = build_s(&c).unwrap();
        let compressed = mpo_compress(&s, 1e-12);
        let center = compressed.ranks()[k / 2 - 1];
        assert!(center <= 2 * d + 2, "center rank {center} > 2d+2");
        assert!(compressed.ranks().iter().all(|&x| x <= 2 * d + 2));
    }

    #[test]
    fn build_d_matches_brute_force() {
        for (k, seed) in [(4, 10), (4, 11), (6, 12)] {
            let mut r = rng(seed);
            let v = TwoBodyCoeffs::<f64>::random(k, &mut r);
            let d = build_d(&v).unwrap();
            let zero_t = DMatrix::zeros(k, k);
            let expected = brute_force_hamiltonian(&zero_t, &v.raw).unwrap();
            assert!(rel_err(&d.evaluate().unwrap(), &expected) < 1e-10, "K={k} seed={seed}");
            let p = build_particle_number::<f64>(k).unwrap();
            assert!(d.evaluate().unwrap().commutator_norm(&p) < 1e-10);
        }
    }

    #[test]
    fn build_d_symmetric_coefficients_give_symmetric_operator() {
        let mut r = rng(13);
        let k = 4;
        let v = TwoBodyCoeffs::<f64>::random_symmetric(k, &mut r);
        let d = build_d(&v).unwrap().evaluate().unwrap();
        assert!(d.max_abs_diff(&d.transpose()) < 1e-10);
    }

    #[test]
    fn build_d_rank_profile_k8() {
        let mut r = rng(14);
        let v = TwoBodyCoeffs::<f64>::random(8, &mut r);
        let d = build_d(&v).unwrap();
        assert_eq!(d.ranks(), vec![4, 24, 33, 46, 33, 24, 4]);
        let compressed = mpo_compress(&d, 1e-12);
        assert_eq!(compressed.ranks(), vec![4, 16, 33, 46, 33, 16, 4]);
    }

    #[test]
    fn build_d_zero_compresses_to_rank_one() {
        let k = 4;
        let v = TwoBodyCoeffs::<f64>::new(k, vec![0.0; k * k * k * k], None).unwrap();
        let d = build_d(&v).unwrap();
        let compressed = mpo_compress(&d, 1e-12);
        assert!(compressed.ranks().iter().all(|&r| r == 1));
        assert!(compressed.evaluate().unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn build_d_local_compresses_to_locality_bound() {
        let mut r = rng(15);
        let k = 12;
        let d_loc = 3;
        let v = TwoBodyCoeffs::<f64>::random_local(k, d_loc, &mut r);
        let d = build_d(&v).unwrap();
        let compressed = mpo_compress(&d, 1e-12);
        let bound = d_loc * d_loc + 3 * d_loc - 1; // d odd
        assert!(
            compressed.ranks().iter().all(|&x| x <= bound),
            "ranks {:?} exceed {bound}",
            compressed.ranks()
        );
    }

    #[test]
    fn compress_is_idempotent_on_build_f() {
        let f = build_f(&vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let compressed = mpo_compress(&f, 1e-12);
        assert_eq!(compressed.ranks(), f.ranks());
        assert!(compressed.evaluate().unwrap().max_abs_diff(&f.evaluate().unwrap()) < 1e-12);
    }

    #[test]
    fn compress_never_increases_ranks() {
        let mut r = rng(16);
        let c = OneBodyCoeffs::<f64>::random(6, &mut r);
        let s = build_s(&c).unwrap();
        let compressed = mpo_compress(&s, 1e-12);
        for (a, b) in compressed.ranks().iter().zip(s.ranks()) {
            assert!(*a <= b);
        }
    }

    #[test]
    fn vtilde_pattern() {
        let mut r = rng(17);
        let v = TwoBodyCoeffs::<f64>::random(4, &mut r);
        for i1 in 1..=4usize {
            for i2 in 1..=4usize {
                for j1 in 1..=4usize {
                    for j2 in 1..=4usize {
                        if i1 >= i2 || j1 >= j2 {
                            assert_eq!(v.vt(i1, i2, j1, j2), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn one_body_rejects_asymmetric() {
        let mut t = DMatrix::zeros(4, 4);
        t[(0, 1)] = 1.0;
        assert!(OneBodyCoeffs::<f64>::new(t, None).is_err());
    }
}
