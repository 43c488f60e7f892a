//! Dense operators and states on the truncated joint space of the virtual
//! cavity mode and the three-level emitter.
//!
//! Basis conventions are fixed for the whole crate:
//!
//! * atom levels are ordered `|0⟩, |1⟩, |e⟩` (indices 0, 1, 2);
//! * the cavity holds Fock states `|0⟩ … |cavity_dim − 1⟩`;
//! * joint index = `cavity_index * 3 + atom_index`.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{linalg::kron, Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ATOM_DIM: usize = 3;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Level of the three-level scatterer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AtomLevel {
    /// Qubit state `|0⟩`, dark to the probe.
    Zero,
    /// Qubit state `|1⟩`, lower level of the closed transition.
    One,
    /// Excited state `|e⟩`.
    Excited,
}

impl AtomLevel {
    pub const ALL: [AtomLevel; 3] = [AtomLevel::Zero, AtomLevel::One, AtomLevel::Excited];

    pub fn index(self) -> usize {
        match self {
            AtomLevel::Zero => 0,
            AtomLevel::One => 1,
            AtomLevel::Excited => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AtomLevel::Zero => "0",
            AtomLevel::One => "1",
            AtomLevel::Excited => "e",
        }
    }
}

impl FromStr for AtomLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(AtomLevel::Zero),
            "1" => Ok(AtomLevel::One),
            "e" | "E" => Ok(AtomLevel::Excited),
            other => Err(Error::UnknownLevel(other.to_string())),
        }
    }
}

impl fmt::Display for AtomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Shape of the truncated cavity ⊗ atom space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HilbertLayout {
    cavity_dim: usize,
}

impl HilbertLayout {
    pub fn new(cavity_dim: usize) -> Result<Self> {
        if cavity_dim == 0 {
            return Err(Error::Dimension("cavity_dim must be at least 1".into()));
        }
        Ok(Self { cavity_dim })
    }

    pub fn cavity_dim(&self) -> usize {
        self.cavity_dim
    }

    pub fn atom_dim(&self) -> usize {
        ATOM_DIM
    }

    pub fn joint_dim(&self) -> usize {
        self.cavity_dim * ATOM_DIM
    }

    pub fn index(&self, photons: usize, level: AtomLevel) -> usize {
        debug_assert!(photons < self.cavity_dim);
        photons * ATOM_DIM + level.index()
    }

    /// Inverse of [`HilbertLayout::index`]: `(photons, atom index)`.
    pub fn split(&self, joint: usize) -> (usize, usize) {
        (joint / ATOM_DIM, joint % ATOM_DIM)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    Cavity,
    Atom,
}

/// Square complex matrix acting on the joint space or on one factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: Array2<C64>,
}

impl Operator {
    pub fn from_matrix(matrix: Array2<C64>) -> Result<Self> {
        let (rows, cols) = matrix.dim();
        if rows != cols {
            return Err(Error::Shape {
                expected: rows,
                rows,
                cols,
            });
        }
        Ok(Self { matrix })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Array2::eye(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self {
            matrix: self.matrix.t().mapv(|z| z.conj()),
        }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            matrix: &self.matrix * factor,
        }
    }

    /// max |A − A†| over all entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        max_antihermitian(&self.matrix)
    }

    pub fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        self.matrix.dot(v)
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| *z == ZERO)
    }
}

impl Mul for &Operator {
    type Output = Operator;

    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: self.matrix.dot(&rhs.matrix),
        }
    }
}

impl Add for &Operator {
    type Output = Operator;

    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;

    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

fn max_antihermitian(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Cavity lowering operator with ⟨n−1|a|n⟩ = √n.
pub fn annihilation_operator(cavity_dim: usize) -> Result<Operator> {
    if cavity_dim == 0 {
        return Err(Error::Dimension("cavity_dim must be at least 1".into()));
    }
    let mut m = Array2::zeros((cavity_dim, cavity_dim));
    for n in 1..cavity_dim {
        m[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator { matrix: m })
}

/// Cavity photon number a†a.
pub fn number_operator(cavity_dim: usize) -> Result<Operator> {
    if cavity_dim == 0 {
        return Err(Error::Dimension("cavity_dim must be at least 1".into()));
    }
    let mut m = Array2::zeros((cavity_dim, cavity_dim));
    for n in 0..cavity_dim {
        m[[n, n]] = C64::new(n as f64, 0.0);
    }
    Ok(Operator { matrix: m })
}

/// `|to⟩⟨from|` on the atom.
pub fn atomic_transition(from: AtomLevel, to: AtomLevel) -> Operator {
    let mut m = Array2::zeros((ATOM_DIM, ATOM_DIM));
    m[[to.index(), from.index()]] = ONE;
    Operator { matrix: m }
}

/// Lift a single-factor operator to the joint space.
pub fn embed(op: &Operator, which: Subsystem, layout: &HilbertLayout) -> Result<Operator> {
    let expected = match which {
        Subsystem::Cavity => layout.cavity_dim(),
        Subsystem::Atom => ATOM_DIM,
    };
    if op.dim() != expected {
        return Err(Error::Shape {
            expected,
            rows: op.dim(),
            cols: op.dim(),
        });
    }
    let matrix = match which {
        Subsystem::Cavity => kron(&op.matrix, &Array2::<C64>::eye(ATOM_DIM)),
        Subsystem::Atom => kron(&Array2::<C64>::eye(layout.cavity_dim()), &op.matrix),
    };
    Ok(Operator { matrix })
}

/// D[L]ρ = LρL† − ½(L†Lρ + ρL†L).
pub fn dissipator_apply(l: &Operator, rho: &DensityMatrix) -> Result<Array2<C64>> {
    check_shape(l.dim(), rho.matrix())?;
    let r = rho.matrix();
    let ld = l.dagger();
    let ldl = ld.matrix.dot(&l.matrix);
    let jump = l.matrix.dot(r).dot(&ld.matrix);
    let anti = ldl.dot(r) + r.dot(&ldl);
    Ok(jump - anti * C64::new(0.5, 0.0))
}

/// Tr(Aρ)/Tr(ρ), i.e. always against the normalized state.
pub fn expectation(a: &Operator, rho: &DensityMatrix) -> Result<C64> {
    check_shape(a.dim(), rho.matrix())?;
    let tr = rho.trace();
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    let m = rho.matrix();
    let n = m.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a.matrix[[i, k]] * m[[k, i]];
        }
    }
    Ok(acc / tr)
}

pub(crate) fn check_shape(dim: usize, m: &Array2<C64>) -> Result<()> {
    let (rows, cols) = m.dim();
    if rows != dim || cols != dim {
        return Err(Error::Shape {
            expected: dim,
            rows,
            cols,
        });
    }
    Ok(())
}

/// Initial state of the probe pulse, stored in the virtual cavity.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Fock(usize),
    Coherent(C64),
    /// Explicit Fock amplitudes; renormalized on use.
    Amplitudes(Vec<C64>),
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::Fock(n) => write!(f, "Fock({n})"),
            FieldSpec::Coherent(a) if a.im == 0.0 => write!(f, "Coherent({})", a.re),
            FieldSpec::Coherent(a) => write!(f, "Coherent({}{:+}i)", a.re, a.im),
            FieldSpec::Amplitudes(v) => write!(f, "Amplitudes({} levels)", v.len()),
        }
    }
}

/// Maximum allowed norm lost to truncation of a coherent state.
pub const COHERENT_TRUNCATION_TOLERANCE: f64 = 1e-6;

impl FieldSpec {
    pub fn coherent_real(alpha: f64) -> Self {
        FieldSpec::Coherent(C64::new(alpha, 0.0))
    }

    /// Truncation that holds this field: n + 1 for Fock states, and
    /// ceil(|α|² + 6|α|) + 10 for coherent states.
    pub fn default_cavity_dim(&self) -> usize {
        match self {
            FieldSpec::Fock(n) => n + 1,
            FieldSpec::Coherent(alpha) => coherent_cavity_dim(alpha.norm()),
            FieldSpec::Amplitudes(v) => v.len().max(1),
        }
    }

    pub fn mean_photons(&self) -> f64 {
        match self {
            FieldSpec::Fock(n) => *n as f64,
            FieldSpec::Coherent(alpha) => alpha.norm_sqr(),
            FieldSpec::Amplitudes(v) => {
                let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                if norm == 0.0 {
                    return 0.0;
                }
                v.iter()
                    .enumerate()
                    .map(|(n, z)| n as f64 * z.norm_sqr())
                    .sum::<f64>()
                    / norm
            }
        }
    }

    /// Normalized Fock amplitudes in a cavity of dimension `cavity_dim`.
    pub fn amplitudes(&self, cavity_dim: usize) -> Result<Array1<C64>> {
        let mut v = Array1::zeros(cavity_dim);
        match self {
            FieldSpec::Fock(n) => {
                if *n >= cavity_dim {
                    return Err(Error::Truncation {
                        cavity_dim,
                        deficit: 1.0,
                        suggested: n + 1,
                    });
                }
                v[*n] = ONE;
            }
            FieldSpec::Coherent(alpha) => {
                let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
                let mut norm = 0.0;
                for n in 0..cavity_dim {
                    if n > 0 {
                        c = c * alpha / (n as f64).sqrt();
                    }
                    v[n] = c;
                    norm += c.norm_sqr();
                }
                let deficit = 1.0 - norm;
                if deficit > COHERENT_TRUNCATION_TOLERANCE {
                    return Err(Error::Truncation {
                        cavity_dim,
                        deficit,
                        suggested: coherent_cavity_dim(alpha.norm()),
                    });
                }
                v.mapv_inplace(|z| z / norm.sqrt());
            }
            FieldSpec::Amplitudes(amps) => {
                if amps.len() > cavity_dim
                    && amps[cavity_dim..].iter().any(|z| *z != ZERO)
                {
                    return Err(Error::Truncation {
                        cavity_dim,
                        deficit: amps[cavity_dim..].iter().map(|z| z.norm_sqr()).sum(),
                        suggested: amps.len(),
                    });
                }
                for (n, z) in amps.iter().take(cavity_dim).enumerate() {
                    v[n] = *z;
                }
                let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                if norm == 0.0 {
                    return Err(Error::config("field amplitudes are all zero"));
                }
                v.mapv_inplace(|z| z / norm.sqrt());
            }
        }
        Ok(v)
    }
}

fn coherent_cavity_dim(abs_alpha: f64) -> usize {
    let n = abs_alpha * abs_alpha + 6.0 * abs_alpha;
    n.ceil() as usize + 10
}

/// Density matrix on the joint space; may carry a likelihood in its trace.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: Array2<C64>,
    normalized: bool,
}

/// Health report of a density matrix against its invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateHealth {
    pub trace: f64,
    /// max |ρ − ρ†| / Tr ρ
    pub hermiticity: f64,
    /// λ_min / Tr ρ, if positivity was checked.
    pub min_eigen_ratio: Option<f64>,
}

pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

impl DensityMatrix {
    pub fn from_matrix(matrix: Array2<C64>, normalized: bool) -> Result<Self> {
        let (rows, cols) = matrix.dim();
        if rows != cols {
            return Err(Error::Shape {
                expected: rows,
                rows,
                cols,
            });
        }
        Ok(Self { matrix, normalized })
    }

    /// |ψ⟩⟨ψ| for a normalized copy of ψ.
    pub fn pure(psi: &Array1<C64>) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(norm > 0.0) {
            return Err(Error::NonPositiveTrace(norm));
        }
        let n = psi.len();
        let scale = 1.0 / norm;
        let matrix = Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj() * scale);
        Ok(Self {
            matrix,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Real part of the trace.
    pub fn trace(&self) -> f64 {
        self.matrix.diag().iter().map(|z| z.re).sum()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let tr = self.trace();
        if !(tr > 0.0) {
            return Err(Error::NonPositiveTrace(tr));
        }
        self.matrix.mapv_inplace(|z| z / tr);
        self.normalized = true;
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        out.normalize()?;
        Ok(out)
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let tr = self.trace().abs();
        let dev = max_antihermitian(&self.matrix);
        if tr > 0.0 {
            dev / tr
        } else {
            dev
        }
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(self.matrix.as_slice(), self.dim())
    }

    pub fn health(&self, check_positivity: bool) -> StateHealth {
        let trace = self.trace();
        StateHealth {
            trace,
            hermiticity: self.hermiticity_deviation(),
            min_eigen_ratio: check_positivity.then(|| self.min_eigenvalue() / trace),
        }
    }

    /// Fails if any invariant is violated at the crate-wide tolerances.
    pub fn check_invariants(&self, check_positivity: bool) -> Result<StateHealth> {
        let h = self.health(check_positivity);
        if !(h.trace >= 0.0) {
            return Err(Error::NonPositiveTrace(h.trace));
        }
        if h.hermiticity > HERMITICITY_TOLERANCE {
            return Err(Error::config(format!(
                "density matrix not Hermitian (deviation {:e})",
                h.hermiticity
            )));
        }
        if self.normalized && (h.trace - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::config(format!(
                "normalized density matrix has trace {}",
                h.trace
            )));
        }
        if let Some(ratio) = h.min_eigen_ratio {
            if ratio < -POSITIVITY_TOLERANCE {
                return Err(Error::config(format!(
                    "density matrix not positive (min eigenvalue / trace = {ratio:e})"
                )));
            }
        }
        Ok(h)
    }
}

/// Min eigenvalue of the Hermitian part of a row-major `dim × dim` matrix.
const FLUSH_RELATIVE: f64 = 1e-30;

pub(crate) fn min_hermitian_eigenvalue(data: Option<&[C64]>, dim: usize) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let Some(d) = data else {
        return f64::NAN;
    };
    // Entries far below the largest one are flushed: the solver returns -inf
    // on some near-pure states carrying ~1e-170 coherences, and zeroing them
    // moves no eigenvalue by more than dim * FLUSH_RELATIVE * max|ρ|.
    let floor = FLUSH_RELATIVE * d.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        let z = 0.5 * (d[i * dim + j] + d[j * dim + i].conj());
        if z.norm() < floor {
            C64::new(0.0, 0.0)
        } else {
            z
        }
    });
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Pure product state |field⟩ ⊗ |atom⟩ as a joint amplitude vector.
pub fn product_amplitudes(
    field: &FieldSpec,
    atom: AtomLevel,
    layout: &HilbertLayout,
) -> Result<Array1<C64>> {
    let cav = field.amplitudes(layout.cavity_dim())?;
    let mut psi = Array1::zeros(layout.joint_dim());
    for (n, c) in cav.iter().enumerate() {
        psi[layout.index(n, atom)] = *c;
    }
    Ok(psi)
}

pub fn initial_state(
    field: &FieldSpec,
    atom: AtomLevel,
    layout: &HilbertLayout,
) -> Result<DensityMatrix> {
    DensityMatrix::pure(&product_amplitudes(field, atom, layout)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(n: usize) -> HilbertLayout {
        HilbertLayout::new(n).unwrap()
    }

    fn basis(dim: usize, k: usize) -> Array1<C64> {
        let mut v = Array1::zeros(dim);
        v[k] = ONE;
        v
    }

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn annihilation_examples() {
        let a = annihilation_operator(2).unwrap();
        assert_eq!(a.apply(&basis(2, 1)), basis(2, 0));

        let a = annihilation_operator(5).unwrap();
        let out = a.apply(&basis(5, 4));
        assert_eq!(out, basis(5, 3) * C64::new(2.0, 0.0));

        let a = annihilation_operator(3).unwrap();
        assert!(a.apply(&basis(3, 0)).iter().all(|z| *z == ZERO));

        assert!(annihilation_operator(0).is_err());
    }

    #[test]
    fn transition_examples() {
        let c = atomic_transition(AtomLevel::Excited, AtomLevel::One);
        let m = c.matrix();
        assert_eq!(m[[1, 2]], ONE);
        assert_eq!(m.iter().filter(|z| **z != ZERO).count(), 1);

        let p = atomic_transition(AtomLevel::One, AtomLevel::One);
        assert_eq!(p.matrix()[[1, 1]], ONE);

        let pe = &c.dagger() * &c;
        assert_eq!(pe, atomic_transition(AtomLevel::Excited, AtomLevel::Excited));

        assert!("x".parse::<AtomLevel>().is_err());
        assert_eq!("e".parse::<AtomLevel>().unwrap(), AtomLevel::Excited);
    }

    #[test]
    fn embed_examples() {
        let l = layout(2);
        let id = embed(&Operator::identity(2), Subsystem::Cavity, &l).unwrap();
        assert_eq!(id, Operator::identity(6));

        let a = embed(&annihilation_operator(2).unwrap(), Subsystem::Cavity, &l).unwrap();
        for s in 0..3 {
            assert_eq!(a.matrix()[[l.index(0, AtomLevel::ALL[s]), l.index(1, AtomLevel::ALL[s])]], ONE);
        }
        assert_eq!(a.matrix().iter().filter(|z| **z != ZERO).count(), 3);

        let c = embed(
            &atomic_transition(AtomLevel::Excited, AtomLevel::One),
            Subsystem::Atom,
            &l,
        )
        .unwrap();
        assert_eq!(&a * &c, &c * &a);

        assert!(embed(&Operator::identity(3), Subsystem::Cavity, &l).is_err());
    }

    #[test]
    fn embed_is_multiplicative() {
        let l = layout(4);
        let a = annihilation_operator(4).unwrap();
        let ad = a.dagger();
        let lhs = embed(&(&ad * &a), Subsystem::Cavity, &l).unwrap();
        let rhs = &embed(&ad, Subsystem::Cavity, &l).unwrap() * &embed(&a, Subsystem::Cavity, &l).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn dissipator_examples() {
        let gamma: f64 = 0.7;
        let l = atomic_transition(AtomLevel::Excited, AtomLevel::One).scaled(C64::new(gamma.sqrt(), 0.0));
        let rho = DensityMatrix::pure(&basis(3, 2)).unwrap();
        let d = dissipator_apply(&l, &rho).unwrap();
        let mut expected = Array2::zeros((3, 3));
        expected[[1, 1]] = C64::new(gamma, 0.0);
        expected[[2, 2]] = C64::new(-gamma, 0.0);
        for (x, y) in d.iter().zip(expected.iter()) {
            assert!(close(*x, *y, 1e-14));
        }

        let zero = dissipator_apply(&Operator::zeros(3), &rho).unwrap();
        assert!(zero.iter().all(|z| *z == ZERO));

        assert!(dissipator_apply(&Operator::zeros(2), &rho).is_err());
    }

    #[test]
    fn expectation_examples() {
        let l = layout(21);
        let rho = initial_state(&FieldSpec::Fock(20), AtomLevel::One, &l).unwrap();
        let n = embed(&number_operator(21).unwrap(), Subsystem::Cavity, &l).unwrap();
        assert!(close(expectation(&n, &rho).unwrap(), C64::new(20.0, 0.0), 1e-12));
        assert!(close(
            expectation(&Operator::identity(63), &rho).unwrap(),
            ONE,
            1e-12
        ));

        let empty = DensityMatrix::from_matrix(Array2::zeros((3, 3)), false).unwrap();
        assert!(matches!(
            expectation(&Operator::identity(3), &empty),
            Err(Error::NonPositiveTrace(_))
        ));
    }

    #[test]
    fn initial_state_examples() {
        let l = layout(4);
        let vac = initial_state(&FieldSpec::coherent_real(0.0), AtomLevel::Zero, &l).unwrap();
        assert!(close(vac.matrix()[[0, 0]], ONE, 1e-15));

        let alpha = 5.0_f64.sqrt();
        let field = FieldSpec::coherent_real(alpha);
        let dim = field.default_cavity_dim();
        assert!(dim >= 25);
        let l = layout(dim);
        let rho = initial_state(&field, AtomLevel::One, &l).unwrap();
        let n = embed(&number_operator(dim).unwrap(), Subsystem::Cavity, &l).unwrap();
        assert!((expectation(&n, &rho).unwrap().re - 5.0).abs() < 1e-6);

        let l = layout(11);
        let rho = initial_state(&FieldSpec::Fock(10), AtomLevel::One, &l).unwrap();
        let n = embed(&number_operator(11).unwrap(), Subsystem::Cavity, &l).unwrap();
        let n2 = &n * &n;
        let mean = expectation(&n, &rho).unwrap().re;
        let var = expectation(&n2, &rho).unwrap().re - mean * mean;
        assert_eq!(var, 0.0);

        assert!(matches!(
            initial_state(&FieldSpec::Fock(10), AtomLevel::One, &layout(10)),
            Err(Error::Truncation { .. })
        ));
        assert!(matches!(
            initial_state(&FieldSpec::coherent_real(3.0), AtomLevel::One, &layout(8)),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn default_coherent_truncation_keeps_tail_small() {
        for alpha in [0.5_f64, 1.0, 5.0_f64.sqrt(), 10.0_f64.sqrt(), 4.0] {
            let field = FieldSpec::coherent_real(alpha);
            let dim = field.default_cavity_dim();
            assert!(dim as f64 >= alpha * alpha + 6.0 * alpha + 10.0);
            // unnormalized tail
            let mut c = (-0.5 * alpha * alpha).exp();
            let mut norm = 0.0;
            for n in 0..dim {
                if n > 0 {
                    c *= alpha / (n as f64).sqrt();
                }
                norm += c * c;
            }
            assert!(1.0 - norm < 1e-6, "alpha={alpha}");
        }
    }

    #[test]
    fn projector_expectation_in_unit_interval() {
        let l = layout(16);
        let rho = initial_state(&FieldSpec::coherent_real(1.3), AtomLevel::One, &l).unwrap();
        for level in AtomLevel::ALL {
            let p = embed(&atomic_transition(level, level), Subsystem::Atom, &l).unwrap();
            let v = expectation(&p, &rho).unwrap();
            assert!(v.im.abs() < 1e-10);
            assert!((-1e-10..=1.0 + 1e-10).contains(&v.re));
        }
    }

    #[test]
    fn min_eigenvalue_of_pure_state_is_zero() {
        let rho = initial_state(&FieldSpec::coherent_real(0.4), AtomLevel::One, &layout(8)).unwrap();
        assert!(rho.min_eigenvalue().abs() < 1e-12);
        let h = rho.check_invariants(true).unwrap();
        assert!((h.trace - 1.0).abs() < 1e-12);
    }
}
