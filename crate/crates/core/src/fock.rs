//! Determinant bases of particle-number sectors and matrix representations of
//! products of fermionic ladder operators.
//!
//! Spin-orbitals are flattened with alpha/beta interleaved by spatial index,
//! `(1,α), (1,β), (2,α), ...`, so orbital `(p, σ)` lives on bit `2(p-1) + σ`.
//! A ladder operator acting on bit `k` picks up `(-1)^n` where `n` counts the
//! occupied spin-orbitals with a smaller flattened index.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_error, CMatrix, CVector, C64};

/// Below this sector dimension operators are stored densely.
pub const DENSE_STORAGE_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Spin {
    Alpha,
    Beta,
}

impl Spin {
    pub fn offset(self) -> usize {
        match self {
            Spin::Alpha => 0,
            Spin::Beta => 1,
        }
    }

    pub fn flip(self) -> Spin {
        match self {
            Spin::Alpha => Spin::Beta,
            Spin::Beta => Spin::Alpha,
        }
    }
}

/// Spatial orbital `p` (1-based) with spin `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinOrbital {
    pub orbital: usize,
    pub spin: Spin,
}

impl SpinOrbital {
    pub fn new(orbital: usize, spin: Spin) -> Self {
        SpinOrbital { orbital, spin }
    }

    pub fn alpha(orbital: usize) -> Self {
        Self::new(orbital, Spin::Alpha)
    }

    pub fn beta(orbital: usize) -> Self {
        Self::new(orbital, Spin::Beta)
    }

    /// Bit position in the interleaved ordering. Requires `orbital >= 1`.
    pub fn flat_index(self) -> usize {
        2 * (self.orbital - 1) + self.spin.offset()
    }

    pub fn from_flat_index(k: usize) -> Self {
        let spin = if k.is_multiple_of(2) { Spin::Alpha } else { Spin::Beta };
        SpinOrbital::new(k / 2 + 1, spin)
    }
}

impl fmt::Display for SpinOrbital {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.spin {
            Spin::Alpha => 'a',
            Spin::Beta => 'b',
        };
        write!(f, "{}{}", self.orbital, s)
    }
}

/// Occupation bit pattern over `2L` spin-orbitals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Determinant(pub u64);

const ALPHA_MASK: u64 = 0x5555_5555_5555_5555;
const BETA_MASK: u64 = 0xAAAA_AAAA_AAAA_AAAA;

impl Determinant {
    pub fn from_orbitals(occ: &[SpinOrbital]) -> Result<Self> {
        let mut bits = 0u64;
        for so in occ {
            if so.orbital == 0 || so.orbital > 32 {
                return Err(Error::parameter(format!(
                    "orbital index {} out of range",
                    so.orbital
                )));
            }
            let bit = 1u64 << so.flat_index();
            if bits & bit != 0 {
                return Err(Error::parameter(format!("spin-orbital {so} listed twice")));
            }
            bits |= bit;
        }
        Ok(Determinant(bits))
    }

    pub fn is_occupied(self, so: SpinOrbital) -> bool {
        self.0 >> so.flat_index() & 1 == 1
    }

    pub fn n_alpha(self) -> usize {
        (self.0 & ALPHA_MASK).count_ones() as usize
    }

    pub fn n_beta(self) -> usize {
        (self.0 & BETA_MASK).count_ones() as usize
    }

    pub fn occupied(self) -> Vec<SpinOrbital> {
        (0..64)
            .filter(|k| self.0 >> k & 1 == 1)
            .map(SpinOrbital::from_flat_index)
            .collect()
    }

    /// Apply one ladder operator. Returns the sign and the new determinant,
    /// or `None` when the action annihilates the state.
    #[inline]
    pub fn apply(self, op: Ladder) -> Option<(f64, Determinant)> {
        let k = op.target.flat_index();
        let bit = 1u64 << k;
        let occupied = self.0 & bit != 0;
        if occupied == op.dagger {
            return None;
        }
        let below = (self.0 & (bit - 1)).count_ones();
        let sign = if below.is_multiple_of(2) { 1.0 } else { -1.0 };
        Some((sign, Determinant(self.0 ^ bit)))
    }

    /// Apply an operator string right-to-left (the last factor acts first).
    pub fn apply_string(self, factors: &[Ladder]) -> Option<(f64, Determinant)> {
        let mut sign = 1.0;
        let mut det = self;
        for op in factors.iter().rev() {
            let (s, d) = det.apply(*op)?;
            sign *= s;
            det = d;
        }
        Some((sign, det))
    }
}

/// A single creation (`dagger = true`) or annihilation operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ladder {
    pub dagger: bool,
    pub target: SpinOrbital,
}

impl Ladder {
    pub fn create(target: SpinOrbital) -> Self {
        Ladder {
            dagger: true,
            target,
        }
    }

    pub fn annihilate(target: SpinOrbital) -> Self {
        Ladder {
            dagger: false,
            target,
        }
    }

    pub fn adjoint(self) -> Self {
        Ladder {
            dagger: !self.dagger,
            target: self.target,
        }
    }
}

impl fmt::Display for Ladder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dagger {
            write!(f, "c+{}", self.target)
        } else {
            write!(f, "c{}", self.target)
        }
    }
}

/// `coefficient * factors[0] * factors[1] * ...`
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTerm {
    pub coefficient: C64,
    pub factors: Vec<Ladder>,
}

impl OperatorTerm {
    pub fn new(coefficient: C64, factors: Vec<Ladder>) -> Self {
        OperatorTerm {
            coefficient,
            factors,
        }
    }

    pub fn adjoint(&self) -> Self {
        OperatorTerm {
            coefficient: self.coefficient.conj(),
            factors: self.factors.iter().rev().map(|f| f.adjoint()).collect(),
        }
    }

    /// Symbolic product `self * other`.
    pub fn product(&self, other: &OperatorTerm) -> Self {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        OperatorTerm {
            coefficient: self.coefficient * other.coefficient,
            factors,
        }
    }

    /// Net change of (Nα, Nβ) produced by the term.
    pub fn particle_change(&self) -> (i64, i64) {
        let mut change = (0i64, 0i64);
        for f in &self.factors {
            let d = if f.dagger { 1 } else { -1 };
            match f.target.spin {
                Spin::Alpha => change.0 += d,
                Spin::Beta => change.1 += d,
            }
        }
        change
    }

    pub fn conserves_sector(&self) -> bool {
        self.particle_change() == (0, 0)
    }

    /// True when some creation or annihilation operator appears twice in a row
    /// with nothing in between acting on the same spin-orbital, which makes
    /// the term identically zero.
    pub fn is_trivially_zero(&self) -> bool {
        self.factors.windows(2).any(|w| w[0] == w[1])
    }
}

/// Parse an operator expression such as `c+2a c+3a c4a c5a + h.c.`.
///
/// Factors are `c+<p><s>` (creation) or `c<p><s>` (annihilation) with `p` a
/// 1-based spatial index and `s` one of `a`/`b`. An optional leading real
/// coefficient is allowed (`0.5 c+1a c2a`). A trailing `+ h.c.` appends the
/// Hermitian conjugate term.
pub fn parse_operator(expr: &str) -> Result<Vec<OperatorTerm>> {
    let mut text = expr.trim();
    let mut add_hc = false;
    for suffix in ["+ h.c.", "+h.c.", "+ hc", "+hc"] {
        if let Some(stripped) = text.strip_suffix(suffix) {
            text = stripped.trim_end();
            add_hc = true;
            break;
        }
    }
    let mut coefficient = C64::new(1.0, 0.0);
    let mut factors = Vec::new();
    for (i, token) in text.split_whitespace().enumerate() {
        if i == 0 {
            if let Ok(x) = token.parse::<f64>() {
                coefficient = C64::new(x, 0.0);
                continue;
            }
        }
        factors.push(parse_ladder(token)?);
    }
    if factors.is_empty() {
        return Err(Error::parse(
            1,
            format!("operator expression `{expr}` has no factors"),
        ));
    }
    let term = OperatorTerm::new(coefficient, factors);
    let mut terms = vec![term.clone()];
    if add_hc {
        terms.push(term.adjoint());
    }
    Ok(terms)
}

fn parse_ladder(token: &str) -> Result<Ladder> {
    let bad = || {
        Error::parse(
            1,
            format!("bad ladder operator `{token}` (expected e.g. c+2a or c3b)"),
        )
    };
    let rest = token.strip_prefix('c').ok_or_else(bad)?;
    let (dagger, rest) = match rest.strip_prefix('+') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    let target = rest.parse::<SpinOrbital>().map_err(|_| bad())?;
    Ok(Ladder { dagger, target })
}

impl std::str::FromStr for SpinOrbital {
    type Err = Error;

    /// `"3a"` is orbital 3 with spin α; orbitals are 1-based.
    fn from_str(text: &str) -> Result<Self> {
        let bad = || {
            Error::parse(
                1,
                format!("bad spin-orbital `{text}` (expected e.g. 2a or 3b)"),
            )
        };
        let text = text.trim();
        if text.len() < 2 || !text.is_char_boundary(text.len() - 1) {
            return Err(bad());
        }
        let (digits, spin) = text.split_at(text.len() - 1);
        let spin = match spin {
            "a" => Spin::Alpha,
            "b" => Spin::Beta,
            _ => return Err(bad()),
        };
        match digits.parse::<usize>() {
            Ok(orbital) if orbital > 0 => Ok(SpinOrbital::new(orbital, spin)),
            _ => Err(bad()),
        }
    }
}

/// Ordered determinant basis of one `(Nα, Nβ)` sector, or of the whole Fock
/// space when built with [`SectorBasis::full_fock`].
#[derive(Debug, Clone, PartialEq)]
pub struct SectorBasis {
    n_orbitals: usize,
    sector: Option<(usize, usize)>,
    dets: Vec<Determinant>,
}

impl SectorBasis {
    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    /// `(Nα, Nβ)`, or `None` for a full Fock-space basis.
    pub fn sector(&self) -> Option<(usize, usize)> {
        self.sector
    }

    pub fn n_alpha(&self) -> Option<usize> {
        self.sector.map(|s| s.0)
    }

    pub fn n_beta(&self) -> Option<usize> {
        self.sector.map(|s| s.1)
    }

    pub fn dim(&self) -> usize {
        self.dets.len()
    }

    pub fn dets(&self) -> &[Determinant] {
        &self.dets
    }

    pub fn det(&self, i: usize) -> Determinant {
        self.dets[i]
    }

    /// Position of a determinant in the basis.
    pub fn index_of(&self, det: Determinant) -> Option<usize> {
        self.dets.binary_search(&det).ok()
    }

    /// Every determinant over `2L` spin-orbitals; used for checks that need
    /// operators which change particle number.
    pub fn full_fock(n_orbitals: usize) -> Result<Self> {
        if n_orbitals == 0 || n_orbitals > 10 {
            return Err(Error::parameter("full Fock basis supports 1..=10 orbitals"));
        }
        let dets = (0..1u64 << (2 * n_orbitals)).map(Determinant).collect();
        Ok(SectorBasis {
            n_orbitals,
            sector: None,
            dets,
        })
    }

    pub fn basis_vector(&self, det: Determinant) -> Option<CVector> {
        let i = self.index_of(det)?;
        let mut v = CVector::zeros(self.dim());
        v[i] = C64::new(1.0, 0.0);
        Some(v)
    }
}

/// Enumerate the determinants of the `(Nα, Nβ)` sector over `L` spatial
/// orbitals, sorted by bit pattern.
pub fn enumerate_sector(n_orbitals: usize, n_alpha: usize, n_beta: usize) -> Result<SectorBasis> {
    if n_orbitals == 0 || n_orbitals > 32 {
        return Err(Error::parameter(format!(
            "orbital count {n_orbitals} outside 1..=32"
        )));
    }
    if n_alpha > n_orbitals || n_beta > n_orbitals {
        return Err(Error::parameter(format!(
            "sector ({n_alpha},{n_beta}) does not fit in {n_orbitals} orbitals"
        )));
    }
    let alpha_sets = combinations(n_orbitals, n_alpha);
    let beta_sets = combinations(n_orbitals, n_beta);
    let mut dets = Vec::with_capacity(alpha_sets.len() * beta_sets.len());
    for a in &alpha_sets {
        for b in &beta_sets {
            let mut bits = 0u64;
            for &p in a {
                bits |= 1 << (2 * p);
            }
            for &p in b {
                bits |= 1 << (2 * p + 1);
            }
            dets.push(Determinant(bits));
        }
    }
    dets.sort_unstable();
    Ok(SectorBasis {
        n_orbitals,
        sector: Some((n_alpha, n_beta)),
        dets,
    })
}

/// All k-subsets of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let mut i = k;
        while i > 0 && current[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        current[i - 1] += 1;
        for j in i..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// Compressed sparse row storage for large sectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    fn from_rows(dim: usize, rows: Vec<Vec<(usize, C64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            dim,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[idx])] += self.values[idx];
            }
        }
        m
    }

    fn apply(&self, v: &CVector) -> CVector {
        CVector::from_fn(self.dim, |i, _| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(|idx| self.values[idx] * v[self.cols[idx]])
                .sum()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(CMatrix),
    Sparse(CsrMatrix),
}

/// Matrix of an operator over a determinant basis.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    storage: Storage,
    hermitian: bool,
}

impl OperatorMatrix {
    /// Wrap a dense matrix; the Hermitian flag is set when `‖A − A†‖_max < 1e-12`.
    pub fn from_dense(m: CMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator matrices are square");
        let hermitian = hermiticity_error(&m) < 1e-12;
        OperatorMatrix {
            dim: m.nrows(),
            storage: Storage::Dense(m),
            hermitian,
        }
    }

    fn from_rows(dim: usize, rows: Vec<Vec<(usize, C64)>>) -> Self {
        if dim < DENSE_STORAGE_LIMIT {
            let mut m = CMatrix::zeros(dim, dim);
            for (i, row) in rows.into_iter().enumerate() {
                for (j, v) in row {
                    m[(i, j)] += v;
                }
            }
            Self::from_dense(m)
        } else {
            let csr = CsrMatrix::from_rows(dim, rows);
            let mut op = OperatorMatrix {
                dim,
                storage: Storage::Sparse(csr),
                hermitian: false,
            };
            op.hermitian = op.sparse_hermiticity_error() < 1e-12;
            op
        }
    }

    fn sparse_hermiticity_error(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => hermiticity_error(m),
            Storage::Sparse(csr) => {
                let mut worst: f64 = 0.0;
                for i in 0..self.dim {
                    for idx in csr.row_ptr[i]..csr.row_ptr[i + 1] {
                        let j = csr.cols[idx];
                        worst = worst.max((csr.values[idx] - self.get(j, i).conj()).norm());
                    }
                }
                worst
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        match &self.storage {
            Storage::Dense(m) => m[(i, j)],
            Storage::Sparse(csr) => {
                let range = csr.row_ptr[i]..csr.row_ptr[i + 1];
                match csr.cols[range.clone()].binary_search(&j) {
                    Ok(pos) => csr.values[range.start + pos],
                    Err(_) => C64::new(0.0, 0.0),
                }
            }
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(csr) => csr.to_dense(),
        }
    }

    /// Borrow the dense matrix when stored densely.
    pub fn as_dense(&self) -> Option<&CMatrix> {
        match &self.storage {
            Storage::Dense(m) => Some(m),
            Storage::Sparse(_) => None,
        }
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        match &self.storage {
            Storage::Dense(m) => m * v,
            Storage::Sparse(csr) => csr.apply(v),
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.sparse_hermiticity_error()
    }

    pub fn is_zero(&self) -> bool {
        match &self.storage {
            Storage::Dense(m) => m.iter().all(|z| *z == C64::new(0.0, 0.0)),
            Storage::Sparse(csr) => csr.values.iter().all(|z| *z == C64::new(0.0, 0.0)),
        }
    }
}

fn check_orbitals(basis: &SectorBasis, terms: &[OperatorTerm]) -> Result<()> {
    for term in terms {
        for f in &term.factors {
            if f.target.orbital == 0 || f.target.orbital > basis.n_orbitals() {
                return Err(Error::parameter(format!(
                    "orbital index {} outside 1..={}",
                    f.target.orbital,
                    basis.n_orbitals()
                )));
            }
        }
    }
    Ok(())
}

/// Matrix of `Σ_t coefficient_t · (product of ladder operators)` over `basis`.
///
/// Factors act right-to-left. Within a fixed sector, terms that change
/// `(Nα, Nβ)` cannot be represented and contribute nothing (a warning is
/// logged).
pub fn operator_from_terms(basis: &SectorBasis, terms: &[OperatorTerm]) -> Result<OperatorMatrix> {
    check_orbitals(basis, terms)?;
    let dim = basis.dim();
    let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
    for term in terms {
        if basis.sector().is_some() && !term.conserves_sector() {
            warn!(
                "term {} changes (Nα,Nβ) by {:?}; dropped from sector operator",
                describe(term),
                term.particle_change()
            );
            continue;
        }
        if term.is_trivially_zero() {
            warn!("term {} is identically zero", describe(term));
            continue;
        }
        for (j, &det) in basis.dets().iter().enumerate() {
            if let Some((sign, out)) = det.apply_string(&term.factors) {
                if let Some(i) = basis.index_of(out) {
                    rows[i].push((j, term.coefficient * sign));
                }
            }
        }
    }
    Ok(OperatorMatrix::from_rows(dim, rows))
}

/// Build an operator column by column from a closure that lists, for one
/// input determinant, the `(output determinant, amplitude)` pairs.
pub(crate) fn operator_from_action<F>(basis: &SectorBasis, mut action: F) -> OperatorMatrix
where
    F: FnMut(Determinant, &mut Vec<(Determinant, C64)>),
{
    let dim = basis.dim();
    let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
    let mut scratch = Vec::new();
    for (j, &det) in basis.dets().iter().enumerate() {
        scratch.clear();
        action(det, &mut scratch);
        for &(out, amp) in &scratch {
            if let Some(i) = basis.index_of(out) {
                rows[i].push((j, amp));
            }
        }
    }
    OperatorMatrix::from_rows(dim, rows)
}

pub fn describe(term: &OperatorTerm) -> String {
    let factors: Vec<String> = term.factors.iter().map(|f| f.to_string()).collect();
    format!("{} {}", term.coefficient, factors.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs_diff};

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    /// Brute-force oracle: explicit ordered list of occupied flattened
    /// indices; creation inserts at the front of the list and then sorts by
    /// adjacent swaps, counting transpositions.
    fn oracle_apply(occ: &[usize], factors: &[Ladder]) -> Option<(f64, Vec<usize>)> {
        let mut list: Vec<usize> = occ.to_vec();
        let mut sign = 1.0;
        for f in factors.iter().rev() {
            let k = f.target.flat_index();
            if f.dagger {
                if list.contains(&k) {
                    return None;
                }
                list.insert(0, k);
                let mut pos = 0;
                while pos + 1 < list.len() && list[pos] > list[pos + 1] {
                    list.swap(pos, pos + 1);
                    sign = -sign;
                    pos += 1;
                }
            } else {
                let pos = list.iter().position(|&x| x == k)?;
                // move to the front, then remove
                for p in (0..pos).rev() {
                    list.swap(p, p + 1);
                    sign = -sign;
                }
                list.remove(0);
            }
        }
        Some((sign, list))
    }

    fn oracle_matrix(basis: &SectorBasis, terms: &[OperatorTerm]) -> CMatrix {
        let mut m = CMatrix::zeros(basis.dim(), basis.dim());
        for term in terms {
            for (j, det) in basis.dets().iter().enumerate() {
                let occ: Vec<usize> = det.occupied().iter().map(|s| s.flat_index()).collect();
                if let Some((sign, out)) = oracle_apply(&occ, &term.factors) {
                    let bits = out.iter().fold(0u64, |acc, &k| acc | 1 << k);
                    if let Some(i) = basis.index_of(Determinant(bits)) {
                        m[(i, j)] += term.coefficient * sign;
                    }
                }
            }
        }
        m
    }

    #[test]
    fn sector_sizes() {
        assert_eq!(enumerate_sector(2, 1, 1).unwrap().dim(), 4);
        assert_eq!(enumerate_sector(2, 2, 0).unwrap().dim(), 1);
        // enumerate independently: every 10-bit pattern with 3 alpha and 3 beta bits
        let brute = (0u64..1 << 10)
            .filter(|b| (b & ALPHA_MASK).count_ones() == 3 && (b & BETA_MASK).count_ones() == 3)
            .count();
        assert_eq!(brute, 100);
        assert_eq!(enumerate_sector(5, 3, 3).unwrap().dim(), brute);
        for (l, a, b) in [(4, 2, 1), (6, 3, 2), (7, 5, 5)] {
            assert_eq!(
                enumerate_sector(l, a, b).unwrap().dim(),
                binom(l, a) * binom(l, b)
            );
        }
    }

    #[test]
    fn sector_rejects_bad_counts() {
        assert!(matches!(
            enumerate_sector(2, 3, 0),
            Err(Error::Parameter(_))
        ));
        assert!(enumerate_sector(0, 0, 0).is_err());
    }

    #[test]
    fn ordering_is_lexicographic_and_indexed() {
        let basis = enumerate_sector(4, 2, 2).unwrap();
        assert!(basis.dets().windows(2).all(|w| w[0] < w[1]));
        for (i, d) in basis.dets().iter().enumerate() {
            assert_eq!(basis.index_of(*d), Some(i));
            assert_eq!(d.n_alpha(), 2);
            assert_eq!(d.n_beta(), 2);
        }
    }

    #[test]
    fn number_operator_is_diagonal_projector() {
        let basis = enumerate_sector(2, 1, 1).unwrap();
        let n1a = parse_operator("c+1a c1a").unwrap();
        let m = operator_from_terms(&basis, &n1a).unwrap().to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let v = m[(i, j)];
                if i != j {
                    assert_eq!(v, C64::new(0.0, 0.0));
                } else {
                    assert!(v == C64::new(0.0, 0.0) || v == C64::new(1.0, 0.0));
                }
            }
        }
        assert_eq!(m.trace().re, 2.0);
    }

    #[test]
    fn pauli_blocked_hopping_is_zero() {
        let basis = enumerate_sector(2, 2, 0).unwrap();
        let hop = parse_operator("c+1a c2a + h.c.").unwrap();
        let m = operator_from_terms(&basis, &hop).unwrap();
        assert_eq!(m.dim(), 1);
        assert!(m.is_zero());
    }

    #[test]
    fn hopping_sign_matches_oracle() {
        let basis = enumerate_sector(2, 1, 1).unwrap();
        let src =
            Determinant::from_orbitals(&[SpinOrbital::alpha(2), SpinOrbital::beta(1)]).unwrap();
        let dst =
            Determinant::from_orbitals(&[SpinOrbital::alpha(1), SpinOrbital::beta(1)]).unwrap();
        let term = parse_operator("c+1a c2a").unwrap();
        let m = operator_from_terms(&basis, &term).unwrap().to_dense();
        let amp = m[(basis.index_of(dst).unwrap(), basis.index_of(src).unwrap())];
        let occ: Vec<usize> = src.occupied().iter().map(|s| s.flat_index()).collect();
        let (sign, out) = oracle_apply(&occ, &term[0].factors).unwrap();
        assert_eq!(out, vec![0, 1]);
        assert_eq!(amp, C64::new(sign, 0.0));
        assert_eq!(amp.norm(), 1.0);
    }

    #[test]
    fn non_conserving_term_is_dropped_in_sector() {
        let basis = enumerate_sector(3, 1, 1).unwrap();
        let term = parse_operator("c+1a c2b").unwrap();
        assert!(operator_from_terms(&basis, &term).unwrap().is_zero());
    }

    #[test]
    fn out_of_range_orbital_is_rejected() {
        let basis = enumerate_sector(2, 1, 1).unwrap();
        let term = parse_operator("c+3a c1a").unwrap();
        assert!(matches!(
            operator_from_terms(&basis, &term),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn operator_parser() {
        let terms = parse_operator("c+2a c+3a c4a c5a + h.c.").unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[1].factors[0], Ladder::create(SpinOrbital::alpha(5)));
        let scaled = parse_operator("0.5 c+1b c2b").unwrap();
        assert_eq!(scaled[0].coefficient, C64::new(0.5, 0.0));
        assert!(parse_operator("c+0a").is_err());
        assert!(parse_operator("d1a").is_err());
        assert!(parse_operator("").is_err());
    }

    #[test]
    fn repeated_creation_is_trivially_zero() {
        let t = parse_operator("c+2b c+2b c4b c4b").unwrap();
        assert!(t[0].is_trivially_zero());
        let basis = enumerate_sector(5, 3, 3).unwrap();
        assert!(operator_from_terms(&basis, &t).unwrap().is_zero());
    }

    #[test]
    fn anticommutation_on_full_fock_space() {
        let l = 2;
        let basis = SectorBasis::full_fock(l).unwrap();
        let eye = identity(basis.dim());
        let all: Vec<SpinOrbital> = (0..2 * l).map(SpinOrbital::from_flat_index).collect();
        let one = C64::new(1.0, 0.0);
        for &p in &all {
            let cp = operator_from_terms(
                &basis,
                &[OperatorTerm::new(one, vec![Ladder::annihilate(p)])],
            )
            .unwrap()
            .to_dense();
            for &q in &all {
                let cq_dag =
                    operator_from_terms(&basis, &[OperatorTerm::new(one, vec![Ladder::create(q)])])
                        .unwrap()
                        .to_dense();
                let anti = &cp * &cq_dag + &cq_dag * &cp;
                let expected = if p == q {
                    eye.clone()
                } else {
                    CMatrix::zeros(basis.dim(), basis.dim())
                };
                assert!(max_abs_diff(&anti, &expected) < 1e-12, "{{c_{p}, c+_{q}}}");
            }
        }
    }

    #[test]
    fn sparse_storage_above_limit() {
        let basis = enumerate_sector(7, 5, 5).unwrap();
        assert_eq!(basis.dim(), 441);
        let basis = enumerate_sector(8, 3, 3).unwrap();
        assert!(basis.dim() >= DENSE_STORAGE_LIMIT);
        let hop = parse_operator("c+1a c2a + h.c.").unwrap();
        let m = operator_from_terms(&basis, &hop).unwrap();
        assert!(m.is_sparse());
        assert!(m.is_hermitian());
        let dense = m.to_dense();
        assert!(max_abs_diff(&dense, &oracle_matrix(&basis, &hop)) == 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ladder_strategy(l: usize) -> impl Strategy<Value = Ladder> {
            (any::<bool>(), 1..=l, any::<bool>()).prop_map(|(dagger, p, beta)| Ladder {
                dagger,
                target: SpinOrbital::new(p, if beta { Spin::Beta } else { Spin::Alpha }),
            })
        }

        fn term_strategy(l: usize) -> impl Strategy<Value = OperatorTerm> {
            (
                prop::collection::vec(ladder_strategy(l), 1..5),
                -2.0..2.0f64,
            )
                .prop_map(|(factors, x)| OperatorTerm::new(C64::new(x, 0.0), factors))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn matrix_matches_oracle_on_full_fock(t in term_strategy(3)) {
                let basis = SectorBasis::full_fock(3).unwrap();
                let m = operator_from_terms(&basis, std::slice::from_ref(&t)).unwrap().to_dense();
                prop_assert!(max_abs_diff(&m, &oracle_matrix(&basis, &[t])) < 1e-14);
            }

            #[test]
            fn product_of_matrices_is_matrix_of_product(x in term_strategy(3), y in term_strategy(3)) {
                let basis = SectorBasis::full_fock(3).unwrap();
                let mx = operator_from_terms(&basis, std::slice::from_ref(&x)).unwrap().to_dense();
                let my = operator_from_terms(&basis, std::slice::from_ref(&y)).unwrap().to_dense();
                let mxy = oracle_matrix(&basis, &[x.product(&y)]);
                prop_assert!(max_abs_diff(&(mx * my), &mxy) < 1e-12);
            }

            #[test]
            fn hermitian_pairs_give_hermitian_matrices(t in term_strategy(3)) {
                let basis = enumerate_sector(3, 1, 2).unwrap();
                let terms = vec![t.clone(), t.adjoint()];
                let m = operator_from_terms(&basis, &terms).unwrap();
                prop_assert!(m.hermiticity_error() < 1e-12);
            }
        }
    }
}
