//! Truncated Fock spaces for one optional atom and two cavity modes.
//!
//! Basis ordering is fixed: for a space `(A, N1, N2)` the flat index of
//! `|atom, n1, n2>` is `(atom * N1 + n1) * N2 + n2`, with atom levels
//! ordered `g = 0, h = 1, e = 2`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SparseRows, C64, ONE, ZERO};

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;
const EIGEN_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomLevel {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "e")]
    E,
}

impl AtomLevel {
    pub fn index(self) -> usize {
        match self {
            AtomLevel::G => 0,
            AtomLevel::H => 1,
            AtomLevel::E => 2,
        }
    }

    pub fn label(self) -> char {
        match self {
            AtomLevel::G => 'g',
            AtomLevel::H => 'h',
            AtomLevel::E => 'e',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subsystem {
    Atom,
    Mode1,
    Mode2,
}

/// Dimensions of `atom ⊗ mode1 ⊗ mode2`. An atom with one level (or a
/// mode truncated at one state) is an absent factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpaceDescriptor {
    atom_levels: usize,
    n1: usize,
    n2: usize,
}

impl SpaceDescriptor {
    pub fn new(atom_levels: usize, n1: usize, n2: usize) -> Result<Self> {
        if !(1..=3).contains(&atom_levels) {
            return Err(Error::InvalidSpace(format!(
                "atom_levels must be 1, 2 or 3, got {atom_levels}"
            )));
        }
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidSpace("Fock truncations must be >= 1".into()));
        }
        Ok(Self {
            atom_levels,
            n1,
            n2,
        })
    }

    /// Two-mode field without an atom.
    pub fn field(n1: usize, n2: usize) -> Result<Self> {
        Self::new(1, n1, n2)
    }

    pub fn atom_levels(&self) -> usize {
        self.atom_levels
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn truncation(&self, mode: usize) -> Result<usize> {
        match mode {
            1 => Ok(self.n1),
            2 => Ok(self.n2),
            m => Err(Error::InvalidMode(m)),
        }
    }

    pub fn field_dim(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn dim(&self) -> usize {
        self.atom_levels * self.n1 * self.n2
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.atom_levels, self.n1, self.n2]
    }

    pub fn is_field_only(&self) -> bool {
        self.atom_levels == 1
    }

    /// The same modes without the atom.
    pub fn field_part(&self) -> Self {
        Self {
            atom_levels: 1,
            ..*self
        }
    }

    pub fn with_atom(&self, atom_levels: usize) -> Result<Self> {
        Self::new(atom_levels, self.n1, self.n2)
    }

    pub fn index(&self, atom: usize, n1: usize, n2: usize) -> usize {
        debug_assert!(atom < self.atom_levels && n1 < self.n1 && n2 < self.n2);
        (atom * self.n1 + n1) * self.n2 + n2
    }

    pub fn decompose(&self, idx: usize) -> (usize, usize, usize) {
        let n2 = idx % self.n2;
        let rest = idx / self.n2;
        (rest / self.n1, rest % self.n1, n2)
    }

    pub fn check_level(&self, level: AtomLevel) -> Result<()> {
        if level.index() < self.atom_levels {
            Ok(())
        } else {
            Err(Error::MissingLevel {
                level: level.label(),
                levels: self.atom_levels,
            })
        }
    }

    pub fn ensure_same(&self, other: &SpaceDescriptor) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                left: self.as_array(),
                right: other.as_array(),
            })
        }
    }

    /// Whether basis state `idx` sits on the last Fock state of a mode
    /// that is actually truncated (N > 1).
    pub fn is_boundary(&self, idx: usize) -> bool {
        let (_, n1, n2) = self.decompose(idx);
        (self.n1 > 1 && n1 == self.n1 - 1) || (self.n2 > 1 && n2 == self.n2 - 1)
    }
}

impl fmt::Display for SpaceDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.atom_levels, self.n1, self.n2)
    }
}

/// Serialized form shared by operators and density matrices.
#[derive(Serialize, Deserialize)]
struct MatrixJson {
    space: [usize; 3],
    re: Vec<f64>,
    im: Vec<f64>,
}

fn matrix_to_json(space: SpaceDescriptor, m: &Array2<C64>) -> MatrixJson {
    let std = m.as_standard_layout();
    MatrixJson {
        space: space.as_array(),
        re: std.iter().map(|z| z.re).collect(),
        im: std.iter().map(|z| z.im).collect(),
    }
}

fn matrix_from_json(j: MatrixJson) -> Result<(SpaceDescriptor, Array2<C64>)> {
    let space = SpaceDescriptor::new(j.space[0], j.space[1], j.space[2])?;
    let d = space.dim();
    if j.re.len() != d * d || j.im.len() != d * d {
        return Err(Error::InvalidSpace(format!(
            "expected {} entries, got re {} / im {}",
            d * d,
            j.re.len(),
            j.im.len()
        )));
    }
    let data: Vec<C64> =
        j.re.iter()
            .zip(&j.im)
            .map(|(&r, &i)| C64::new(r, i))
            .collect();
    let m = Array2::from_shape_vec((d, d), data).expect("shape checked");
    Ok((space, m))
}

/// A dense square matrix acting on a [`SpaceDescriptor`].
///
/// Arithmetic operators panic when the spaces differ, like ndarray does on
/// shape mismatch; fallible entry points return [`Error::SpaceMismatch`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixJson", try_from = "MatrixJson")]
pub struct Operator {
    space: SpaceDescriptor,
    matrix: Array2<C64>,
}

impl From<Operator> for MatrixJson {
    fn from(op: Operator) -> Self {
        matrix_to_json(op.space, &op.matrix)
    }
}

impl TryFrom<MatrixJson> for Operator {
    type Error = Error;
    fn try_from(j: MatrixJson) -> Result<Self> {
        let (space, matrix) = matrix_from_json(j)?;
        Ok(Self { space, matrix })
    }
}

impl Operator {
    pub fn new(space: SpaceDescriptor, matrix: Array2<C64>) -> Result<Self> {
        let d = space.dim();
        if matrix.dim() != (d, d) {
            return Err(Error::InvalidSpace(format!(
                "matrix shape {:?} does not match space {space} of dimension {d}",
                matrix.dim()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub(crate) fn from_parts(space: SpaceDescriptor, matrix: Array2<C64>) -> Self {
        debug_assert_eq!(matrix.nrows(), space.dim());
        Self { space, matrix }
    }

    pub fn zeros(space: SpaceDescriptor) -> Self {
        let d = space.dim();
        Self::from_parts(space, Array2::zeros((d, d)))
    }

    pub fn identity(space: SpaceDescriptor) -> Self {
        Self::from_parts(space, linalg::identity(space.dim()))
    }

    pub fn space(&self) -> SpaceDescriptor {
        self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[[row, col]]
    }

    pub fn dagger(&self) -> Self {
        Self::from_parts(self.space, linalg::dagger(&self.matrix.view()))
    }

    pub fn scale(&self, s: impl Into<C64>) -> Self {
        let s = s.into();
        Self::from_parts(self.space, self.matrix.mapv(|z| z * s))
    }

    pub fn dot(&self, other: &Operator) -> Self {
        assert_eq!(self.space, other.space, "operator space mismatch");
        let n = self.space.dim();
        let nnz = self.matrix.iter().filter(|z| **z != linalg::ZERO).count();
        let product = if nnz * 8 < n * n {
            self.sparse().mul_dense(&other.matrix)
        } else {
            self.matrix.dot(&other.matrix)
        };
        Self::from_parts(self.space, product)
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        &self.dot(other) - &other.dot(self)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        linalg::hermitian_deviation(&self.matrix.view())
    }

    pub fn max_abs(&self) -> f64 {
        linalg::max_abs(&self.matrix.view())
    }

    /// Spectral-radius bound used for step-size control.
    pub fn norm_bound(&self) -> f64 {
        linalg::inf_norm(&self.matrix.view())
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        assert_eq!(self.space, v.space, "operator/state space mismatch");
        StateVector {
            space: self.space,
            amps: self.matrix.dot(&v.amps),
        }
    }

    pub(crate) fn sparse(&self) -> SparseRows {
        SparseRows::from_dense(&self.matrix.view())
    }

    /// Largest |A_ij - B_ij| over basis pairs (i, j) accepted by `keep`.
    pub fn max_deviation_where(&self, other: &Operator, keep: impl Fn(usize) -> bool) -> f64 {
        assert_eq!(self.space, other.space);
        let idx: Vec<usize> = (0..self.space.dim()).filter(|&i| keep(i)).collect();
        let mut worst = 0.0_f64;
        for &i in &idx {
            for &j in &idx {
                worst = worst.max((self.matrix[[i, j]] - other.matrix[[i, j]]).norm());
            }
        }
        worst
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator space mismatch");
        Operator::from_parts(self.space, &self.matrix + &rhs.matrix)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator space mismatch");
        Operator::from_parts(self.space, &self.matrix - &rhs.matrix)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.dot(rhs)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale(-1.0)
    }
}

/// `â_mode` embedded in the composite space (identity on the other factors).
pub fn annihilation_op(space: SpaceDescriptor, mode: usize) -> Result<Operator> {
    space.truncation(mode)?;
    let mut op = Operator::zeros(space);
    for idx in 0..space.dim() {
        let (a, n1, n2) = space.decompose(idx);
        let n = if mode == 1 { n1 } else { n2 };
        if n == 0 {
            continue;
        }
        let target = if mode == 1 {
            space.index(a, n1 - 1, n2)
        } else {
            space.index(a, n1, n2 - 1)
        };
        op.matrix[[target, idx]] = C64::from((n as f64).sqrt());
    }
    Ok(op)
}

pub fn creation_op(space: SpaceDescriptor, mode: usize) -> Result<Operator> {
    Ok(annihilation_op(space, mode)?.dagger())
}

pub fn number_op(space: SpaceDescriptor, mode: usize) -> Result<Operator> {
    space.truncation(mode)?;
    let mut op = Operator::zeros(space);
    for idx in 0..space.dim() {
        let (_, n1, n2) = space.decompose(idx);
        op.matrix[[idx, idx]] = C64::from(if mode == 1 { n1 } else { n2 } as f64);
    }
    Ok(op)
}

/// `|j><m|` on the atom, identity on both modes.
pub fn atom_transition_op(space: SpaceDescriptor, j: AtomLevel, m: AtomLevel) -> Result<Operator> {
    space.check_level(j)?;
    space.check_level(m)?;
    let mut op = Operator::zeros(space);
    for f in 0..space.field_dim() {
        let (n1, n2) = (f / space.n2, f % space.n2);
        op.matrix[[
            space.index(j.index(), n1, n2),
            space.index(m.index(), n1, n2),
        ]] = ONE;
    }
    Ok(op)
}

/// Lifts a field-only operator to `1_atom ⊗ op` on a space with atom.
pub fn embed_field_operator(op: &Operator, atom_levels: usize) -> Result<Operator> {
    if !op.space.is_field_only() {
        return Err(Error::InvalidSpace("expected a field-only operator".into()));
    }
    let space = op.space.with_atom(atom_levels)?;
    let f = op.space.dim();
    let mut m = Array2::zeros((space.dim(), space.dim()));
    for a in 0..atom_levels {
        m.slice_mut(ndarray::s![a * f..(a + 1) * f, a * f..(a + 1) * f])
            .assign(&op.matrix);
    }
    Ok(Operator::from_parts(space, m))
}

/// `exp(scale · op)`.
pub fn matrix_exponential(op: &Operator, scale: C64) -> Result<Operator> {
    if !scale.re.is_finite() || !scale.im.is_finite() {
        return Err(Error::NonFinite("exponential scale"));
    }
    let m = op.matrix.mapv(|z| z * scale);
    let e = linalg::expm(&m).ok_or(Error::NonFinite("matrix exponential input"))?;
    Ok(Operator::from_parts(op.space, e))
}

/// Pure state in the canonical basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    space: SpaceDescriptor,
    amps: Array1<C64>,
}

impl StateVector {
    pub fn new(space: SpaceDescriptor, amps: Array1<C64>) -> Result<Self> {
        if amps.len() != space.dim() {
            return Err(Error::InvalidSpace(format!(
                "state length {} does not match space {space}",
                amps.len()
            )));
        }
        Ok(Self { space, amps })
    }

    pub fn basis(space: SpaceDescriptor, atom: AtomLevel, n1: usize, n2: usize) -> Result<Self> {
        space.check_level(atom)?;
        if n1 >= space.n1 || n2 >= space.n2 {
            return Err(Error::InvalidSpace(format!(
                "Fock state |{n1},{n2}> outside truncation {space}"
            )));
        }
        let mut amps = Array1::zeros(space.dim());
        amps[space.index(atom.index(), n1, n2)] = ONE;
        Ok(Self { space, amps })
    }

    /// `|atom> ⊗ field` for a field-only `field`.
    pub fn with_atom(field: &StateVector, atom: AtomLevel, atom_levels: usize) -> Result<Self> {
        if !field.space.is_field_only() {
            return Err(Error::InvalidSpace("expected a field-only state".into()));
        }
        let space = field.space.with_atom(atom_levels)?;
        space.check_level(atom)?;
        let f = field.space.dim();
        let mut amps = Array1::zeros(space.dim());
        amps.slice_mut(ndarray::s![atom.index() * f..(atom.index() + 1) * f])
            .assign(&field.amps);
        Ok(Self { space, amps })
    }

    pub fn space(&self) -> SpaceDescriptor {
        self.space
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            space: self.space,
            amps: self.amps.mapv(|z| z / n),
        }
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// A normalized, Hermitian, positive semidefinite matrix on a space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixJson", try_from = "MatrixJson")]
pub struct DensityMatrix {
    space: SpaceDescriptor,
    matrix: Array2<C64>,
}

impl From<DensityMatrix> for MatrixJson {
    fn from(rho: DensityMatrix) -> Self {
        matrix_to_json(rho.space, &rho.matrix)
    }
}

impl TryFrom<MatrixJson> for DensityMatrix {
    type Error = Error;
    fn try_from(j: MatrixJson) -> Result<Self> {
        let (space, matrix) = matrix_from_json(j)?;
        DensityMatrix::new(space, matrix)
    }
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-8) and positivity
    /// (eigenvalues >= -1e-8).
    pub fn new(space: SpaceDescriptor, matrix: Array2<C64>) -> Result<Self> {
        let d = space.dim();
        if matrix.dim() != (d, d) {
            return Err(Error::InvalidSpace(format!(
                "matrix shape {:?} does not match space {space}",
                matrix.dim()
            )));
        }
        let rho = Self { space, matrix };
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_parts(space: SpaceDescriptor, matrix: Array2<C64>) -> Self {
        Self { space, matrix }
    }

    pub fn validate(&self) -> Result<()> {
        let dev = linalg::hermitian_deviation(&self.matrix.view());
        if dev > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!(
                "not Hermitian (deviation {dev:e})"
            )));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} != 1")));
        }
        if !self.is_positive() {
            return Err(Error::InvalidDensity(
                "negative eigenvalue below -1e-8".into(),
            ));
        }
        Ok(())
    }

    pub fn is_positive(&self) -> bool {
        linalg::is_positive_above(&self.matrix.view(), EIGEN_FLOOR)
    }

    pub fn pure(state: &StateVector) -> Self {
        let v = state.normalized();
        let col = v.amps.view().insert_axis(ndarray::Axis(1));
        let row = v.amps.mapv(|z| z.conj()).insert_axis(ndarray::Axis(0));
        Self::from_parts(state.space, col.dot(&row))
    }

    pub fn basis(space: SpaceDescriptor, atom: AtomLevel, n1: usize, n2: usize) -> Result<Self> {
        Ok(Self::pure(&StateVector::basis(space, atom, n1, n2)?))
    }

    /// Field vacuum on a field-only space.
    pub fn vacuum(space: SpaceDescriptor) -> Self {
        let mut m = Array2::zeros((space.dim(), space.dim()));
        m[[0, 0]] = ONE;
        Self::from_parts(space, m)
    }

    /// `|atom><atom| ⊗ field` for a field-only `field`.
    pub fn with_atom(field: &DensityMatrix, atom: AtomLevel, atom_levels: usize) -> Result<Self> {
        if !field.space.is_field_only() {
            return Err(Error::InvalidSpace("expected a field-only state".into()));
        }
        let space = field.space.with_atom(atom_levels)?;
        space.check_level(atom)?;
        let f = field.space.dim();
        let a = atom.index();
        let mut m = Array2::zeros((space.dim(), space.dim()));
        m.slice_mut(ndarray::s![a * f..(a + 1) * f, a * f..(a + 1) * f])
            .assign(&field.matrix);
        Ok(Self::from_parts(space, m))
    }

    /// Tensor product `atom_part ⊗ field_part` of an atom-only matrix
    /// (space `(A,1,1)`) and a field-only one.
    pub fn product(atom_part: &DensityMatrix, field_part: &DensityMatrix) -> Result<Self> {
        let sa = atom_part.space;
        if sa.n1 != 1 || sa.n2 != 1 || !field_part.space.is_field_only() {
            return Err(Error::InvalidSpace(
                "product expects atom-only ⊗ field-only".into(),
            ));
        }
        let space = field_part.space.with_atom(sa.atom_levels)?;
        Ok(Self::from_parts(
            space,
            kron(&atom_part.matrix, &field_part.matrix),
        ))
    }

    pub fn space(&self) -> SpaceDescriptor {
        self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.matrix.view()).re
    }

    pub fn purity(&self) -> f64 {
        linalg::trace_of_product(&self.matrix.view(), &self.matrix.view()).re
    }

    pub fn population(&self, idx: usize) -> f64 {
        self.matrix[[idx, idx]].re
    }

    /// Total population on the last Fock state of either mode.
    pub fn truncation_leak(&self) -> f64 {
        (0..self.space.dim())
            .filter(|&i| self.space.is_boundary(i))
            .map(|i| self.population(i))
            .sum()
    }

    /// `<psi|rho|psi>`
    pub fn overlap_with(&self, psi: &StateVector) -> Result<f64> {
        self.space.ensure_same(&psi.space)?;
        let rv = self.matrix.dot(&psi.amps);
        Ok(psi
            .inner(&StateVector {
                space: self.space,
                amps: rv,
            })
            .re)
    }

    /// `U rho U†`
    pub fn transformed(&self, u: &Operator) -> Result<Self> {
        self.space.ensure_same(&u.space)?;
        let m = u
            .matrix
            .dot(&self.matrix)
            .dot(&linalg::dagger(&u.matrix.view()));
        Ok(Self::from_parts(self.space, m))
    }

    /// Rescales to unit trace and restores exact Hermiticity; returns the
    /// trace drift that was removed.
    pub(crate) fn renormalize(&mut self) -> f64 {
        let tr = self.trace();
        self.matrix = linalg::hermitian_part(&self.matrix);
        self.matrix.mapv_inplace(|z| z / tr);
        tr - 1.0
    }
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x == ZERO {
                continue;
            }
            out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&b.mapv(|z| z * x));
        }
    }
    out
}

/// `<O>_rho = Tr(rho O)`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64> {
    rho.space.ensure_same(&op.space)?;
    Ok(linalg::trace_of_product(
        &rho.matrix.view(),
        &op.matrix.view(),
    ))
}

/// Reduced state on the subsystems in `keep`; traced factors get size 1.
pub fn partial_trace(rho: &DensityMatrix, keep: &[Subsystem]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::EmptyKeep);
    }
    let s = rho.space;
    let keep_atom = keep.contains(&Subsystem::Atom);
    let keep1 = keep.contains(&Subsystem::Mode1);
    let keep2 = keep.contains(&Subsystem::Mode2);
    let out_space = SpaceDescriptor::new(
        if keep_atom { s.atom_levels } else { 1 },
        if keep1 { s.n1 } else { 1 },
        if keep2 { s.n2 } else { 1 },
    )?;
    let reduce = |(a, n1, n2): (usize, usize, usize)| {
        (
            if keep_atom { a } else { 0 },
            if keep1 { n1 } else { 0 },
            if keep2 { n2 } else { 0 },
        )
    };
    let traced = |(a, n1, n2): (usize, usize, usize)| {
        (
            if keep_atom { 0 } else { a },
            if keep1 { 0 } else { n1 },
            if keep2 { 0 } else { n2 },
        )
    };
    let mut out = Array2::<C64>::zeros((out_space.dim(), out_space.dim()));
    let labels: Vec<_> = (0..s.dim()).map(|i| s.decompose(i)).collect();
    for i in 0..s.dim() {
        let ti = traced(labels[i]);
        let (ra, r1, r2) = reduce(labels[i]);
        let oi = out_space.index(ra, r1, r2);
        for j in 0..s.dim() {
            if traced(labels[j]) != ti {
                continue;
            }
            let (ca, c1, c2) = reduce(labels[j]);
            out[[oi, out_space.index(ca, c1, c2)]] += rho.matrix[[i, j]];
        }
    }
    Ok(DensityMatrix::from_parts(out_space, out))
}
