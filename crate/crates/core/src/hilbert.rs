//! State and channel algebra on the composite space
//! atom (4 levels) ⊗ photon register 1 (3 modes) ⊗ photon register 2 (3 modes).
//!
//! The full space has dimension 36. Basis vectors are ordered atom-major,
//! then register 1, then register 2:
//!
//! ```text
//! index = 9 * atom + 3 * photon1 + photon2
//! ```
//!
//! with `G=0, R1=1, R2=2, D=3` and `Vac=0, E=1, L=2`. Every module goes
//! through [`basis_index`]; nothing else hard-codes offsets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ATOM_DIM: usize = 4;
pub const PHOTON_DIM: usize = 3;
pub const DIM: usize = ATOM_DIM * PHOTON_DIM * PHOTON_DIM;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const EIGEN_FLOOR: f64 = -1e-9;
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Largest norm deviation accepted when turning a pure state into a projector.
pub const NORM_TOL: f64 = 1e-6;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Collective state of the ensemble.
///
/// `D` is an error sink for blockade violations; no retrieval ever acts on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AtomLevel {
    G,
    R1,
    R2,
    D,
}

impl AtomLevel {
    pub const ALL: [AtomLevel; 4] = [AtomLevel::G, AtomLevel::R1, AtomLevel::R2, AtomLevel::D];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Occupation of one photon register: vacuum, early or late time bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhotonMode {
    Vac,
    E,
    L,
}

impl PhotonMode {
    pub const ALL: [PhotonMode; 3] = [PhotonMode::Vac, PhotonMode::E, PhotonMode::L];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subsystem {
    Atom,
    Photon1,
    Photon2,
}

impl Subsystem {
    pub const ALL: [Subsystem; 3] = [Subsystem::Atom, Subsystem::Photon1, Subsystem::Photon2];

    pub fn dim(self) -> usize {
        match self {
            Subsystem::Atom => ATOM_DIM,
            Subsystem::Photon1 | Subsystem::Photon2 => PHOTON_DIM,
        }
    }
}

pub fn basis_index(atom: AtomLevel, p1: PhotonMode, p2: PhotonMode) -> usize {
    atom.index() * PHOTON_DIM * PHOTON_DIM + p1.index() * PHOTON_DIM + p2.index()
}

/// Inverse of [`basis_index`].
pub fn basis_label(index: usize) -> (AtomLevel, PhotonMode, PhotonMode) {
    assert!(index < DIM, "basis index {index} out of range");
    let atom = AtomLevel::ALL[index / (PHOTON_DIM * PHOTON_DIM)];
    let p1 = PhotonMode::ALL[(index / PHOTON_DIM) % PHOTON_DIM];
    let p2 = PhotonMode::ALL[index % PHOTON_DIM];
    (atom, p1, p2)
}

/// A state vector on the full 36-dimensional space.
///
/// Construction does not force normalization; [`pure_to_density`] rejects
/// vectors whose norm is off by more than [`NORM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<C64>,
}

impl PureState {
    pub fn basis(atom: AtomLevel, p1: PhotonMode, p2: PhotonMode) -> Self {
        let mut amplitudes = DVector::from_element(DIM, ZERO);
        amplitudes[basis_index(atom, p1, p2)] = ONE;
        PureState { amplitudes }
    }

    pub fn from_amplitudes(amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != DIM {
            return Err(Error::DimensionMismatch { expected: DIM, actual: amplitudes.len() });
        }
        Ok(PureState { amplitudes })
    }

    /// Superposition `Σ c_k |atom_k, p1_k, p2_k⟩`, exactly as given.
    pub fn from_terms(terms: &[(C64, (AtomLevel, PhotonMode, PhotonMode))]) -> Self {
        let mut amplitudes = DVector::from_element(DIM, ZERO);
        for &(c, (a, p1, p2)) in terms {
            amplitudes[basis_index(a, p1, p2)] += c;
        }
        PureState { amplitudes }
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, atom: AtomLevel, p1: PhotonMode, p2: PhotonMode) -> C64 {
        self.amplitudes[basis_index(atom, p1, p2)]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidState("cannot normalize the zero vector".into()));
        }
        Ok(PureState { amplitudes: self.amplitudes.unscale(n) })
    }

    pub fn with_global_phase(&self, phase: f64) -> Self {
        PureState { amplitudes: self.amplitudes.map(|a| a * C64::from_polar(1.0, phase)) }
    }
}

/// Trace-one positive operator on a tensor product of [`Subsystem`]s.
///
/// The full simulation always lives on `[Atom, Photon1, Photon2]`;
/// [`partial_trace`] produces operators on fewer factors.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    subsystems: Vec<Subsystem>,
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    /// Validates hermiticity, trace and the eigenvalue floor.
    pub fn new(subsystems: Vec<Subsystem>, matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self::from_parts(subsystems, matrix)?;
        rho.validate()?;
        Ok(rho)
    }

    fn from_parts(subsystems: Vec<Subsystem>, matrix: DMatrix<C64>) -> Result<Self> {
        let dim: usize = subsystems.iter().map(|s| s.dim()).product();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: matrix.nrows() });
        }
        Ok(DensityOperator { subsystems, matrix })
    }

    /// Skips the spectral check. Only for results of trace-preserving maps.
    pub(crate) fn from_trusted(subsystems: Vec<Subsystem>, matrix: DMatrix<C64>) -> Self {
        DensityOperator { subsystems, matrix }
    }

    pub fn full(matrix: DMatrix<C64>) -> Result<Self> {
        Self::new(Subsystem::ALL.to_vec(), matrix)
    }

    pub fn maximally_mixed(subsystems: Vec<Subsystem>) -> Self {
        let dim: usize = subsystems.iter().map(|s| s.dim()).product();
        let matrix = DMatrix::<C64>::identity(dim, dim).unscale(dim as f64);
        DensityOperator { subsystems, matrix }
    }

    /// Tensor product in the given order.
    pub fn product(factors: &[DensityOperator]) -> Result<Self> {
        let (first, rest) = factors
            .split_first()
            .ok_or_else(|| Error::InvalidState("empty tensor product".into()))?;
        let mut subsystems = first.subsystems.clone();
        let mut matrix = first.matrix.clone();
        for f in rest {
            if f.subsystems.iter().any(|s| subsystems.contains(s)) {
                return Err(Error::InvalidState("repeated subsystem in tensor product".into()));
            }
            subsystems.extend_from_slice(&f.subsystems);
            matrix = matrix.kronecker(&f.matrix);
        }
        Ok(DensityOperator { subsystems, matrix })
    }

    pub fn validate(&self) -> Result<()> {
        let herm_dev = (&self.matrix - self.matrix.adjoint()).camax();
        if herm_dev > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm_dev:.3e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < EIGEN_FLOOR {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.matrix + self.matrix.adjoint()).scale(0.5);
        SymmetricEigen::new(herm).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn population(&self, index: usize) -> f64 {
        self.matrix[(index, index)].re
    }

    /// Sum of diagonal entries whose full-space label satisfies `pred`.
    /// Only meaningful on the full space.
    pub fn population_where(&self, pred: impl Fn(AtomLevel, PhotonMode, PhotonMode) -> bool) -> f64 {
        assert_eq!(self.dim(), DIM, "population_where needs the full space");
        (0..DIM)
            .filter(|&i| {
                let (a, p1, p2) = basis_label(i);
                pred(a, p1, p2)
            })
            .map(|i| self.population(i))
            .sum()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &DensityOperator) -> f64 {
        (&self.matrix - &other.matrix).camax()
    }
}

/// Completely positive trace-preserving map given by Kraus operators.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    operators: Vec<DMatrix<C64>>,
}

impl KrausChannel {
    /// Rejects operator sets with `‖Σ K†K − I‖_max > 1e-10`.
    pub fn new(operators: Vec<DMatrix<C64>>) -> Result<Self> {
        let dim = operators
            .first()
            .map(|k| k.nrows())
            .ok_or(Error::InvalidChannel { deviation: 1.0 })?;
        for k in &operators {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: k.nrows() });
            }
        }
        let deviation = completeness_deviation(&operators);
        if deviation > COMPLETENESS_TOL {
            return Err(Error::InvalidChannel { deviation });
        }
        Ok(KrausChannel { operators })
    }

    pub fn identity(dim: usize) -> Self {
        KrausChannel { operators: vec![DMatrix::identity(dim, dim)] }
    }

    pub fn unitary(u: DMatrix<C64>) -> Result<Self> {
        Self::new(vec![u])
    }

    /// Probabilistic mixture `Σ p_i U_i ρ U_i†` of unitaries.
    pub fn mixed_unitary(terms: Vec<(f64, DMatrix<C64>)>) -> Result<Self> {
        let ops = terms
            .into_iter()
            .filter(|(p, _)| *p > 0.0)
            .map(|(p, u)| u.scale(p.sqrt()))
            .collect();
        Self::new(ops)
    }

    pub fn operators(&self) -> &[DMatrix<C64>] {
        &self.operators
    }

    pub fn dim(&self) -> usize {
        self.operators[0].nrows()
    }

    /// The channel "apply `self`, then `next`".
    pub fn then(&self, next: &KrausChannel) -> Result<KrausChannel> {
        if self.dim() != next.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: next.dim() });
        }
        let ops = next
            .operators
            .iter()
            .flat_map(|b| self.operators.iter().map(move |a| b * a))
            .collect();
        Ok(KrausChannel { operators: ops })
    }
}

fn completeness_deviation(ops: &[DMatrix<C64>]) -> f64 {
    let dim = ops[0].nrows();
    let mut sum = DMatrix::<C64>::zeros(dim, dim);
    for k in ops {
        sum += k.adjoint() * k;
    }
    (sum - DMatrix::<C64>::identity(dim, dim)).camax()
}

/// Lifts an operator on one factor of the full space to all 36 dimensions.
pub fn embed_local(op: &DMatrix<C64>, on: Subsystem) -> DMatrix<C64> {
    assert_eq!(op.nrows(), on.dim());
    let id = |s: Subsystem| DMatrix::<C64>::identity(s.dim(), s.dim());
    Subsystem::ALL
        .iter()
        .map(|&s| if s == on { op.clone() } else { id(s) })
        .reduce(|acc, m| acc.kronecker(&m))
        .expect("three factors")
}

/// Operator `|ket⟩⟨bra|` on the full space.
pub fn ket_bra(ket: usize, bra: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(DIM, DIM);
    m[(ket, bra)] = ONE;
    m
}

pub fn pure_to_density(psi: &PureState) -> Result<DensityOperator> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
    }
    let v = &psi.amplitudes;
    let matrix = v * v.adjoint();
    Ok(DensityOperator::from_trusted(Subsystem::ALL.to_vec(), matrix))
}

/// `ρ ↦ Σ_i K_i ρ K_i†`.
pub fn apply_channel(rho: &DensityOperator, ch: &KrausChannel) -> Result<DensityOperator> {
    if rho.dim() != ch.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), actual: ch.dim() });
    }
    let mut out = DMatrix::<C64>::zeros(rho.dim(), rho.dim());
    for k in &ch.operators {
        out += k * &rho.matrix * k.adjoint();
    }
    Ok(DensityOperator::from_trusted(rho.subsystems.clone(), out))
}

/// `⟨ψ|ρ|ψ⟩`, clamped to `[0, 1]`.
pub fn state_fidelity(rho: &DensityOperator, psi: &PureState) -> f64 {
    assert_eq!(rho.dim(), DIM, "state_fidelity expects a full-space operator");
    let v = &psi.amplitudes;
    let f = (v.adjoint() * &rho.matrix * v)[(0, 0)].re;
    f.clamp(0.0, 1.0)
}

/// Traces out every factor not listed in `keep`. The reduced operator keeps
/// the original factor order.
pub fn partial_trace(rho: &DensityOperator, keep: &[Subsystem]) -> Result<DensityOperator> {
    if keep.is_empty() {
        return Err(Error::InvalidState("partial trace must keep at least one subsystem".into()));
    }
    for s in keep {
        if !rho.subsystems.contains(s) {
            return Err(Error::InvalidState(format!("{s:?} is not part of this operator")));
        }
    }
    let dims: Vec<usize> = rho.subsystems.iter().map(|s| s.dim()).collect();
    let kept: Vec<bool> = rho.subsystems.iter().map(|s| keep.contains(s)).collect();
    let kept_subs: Vec<Subsystem> =
        rho.subsystems.iter().copied().filter(|s| keep.contains(s)).collect();
    let reduced_dim: usize = kept_subs.iter().map(|s| s.dim()).product();

    // (kept index, traced index) for every full index.
    let split = |mut idx: usize| -> (usize, usize) {
        let (mut k, mut kstride, mut t, mut tstride) = (0, 1, 0, 1);
        for f in (0..dims.len()).rev() {
            let digit = idx % dims[f];
            idx /= dims[f];
            if kept[f] {
                k += digit * kstride;
                kstride *= dims[f];
            } else {
                t += digit * tstride;
                tstride *= dims[f];
            }
        }
        (k, t)
    };
    let parts: Vec<(usize, usize)> = (0..rho.dim()).map(split).collect();

    let mut out = DMatrix::<C64>::zeros(reduced_dim, reduced_dim);
    for (i, &(ki, ti)) in parts.iter().enumerate() {
        for (j, &(kj, tj)) in parts.iter().enumerate() {
            if ti == tj {
                out[(ki, kj)] += rho.matrix[(i, j)];
            }
        }
    }
    Ok(DensityOperator::from_trusted(kept_subs, out))
}

/// Two-qubit depolarizing channel `ρ ↦ (1−λ)ρ + λ·I/4` on the 4-dimensional
/// subspace spanned by `basis` (ordered |00⟩, |01⟩, |10⟩, |11⟩), identity
/// outside it.
pub fn subspace_depolarizing(lambda: f64, basis: [usize; 4]) -> Result<KrausChannel> {
    crate::error::check_range("depolarizing strength", lambda, 0.0, 1.0)?;
    let i = C64::new(0.0, 1.0);
    let paulis: [[C64; 4]; 4] = [
        [ONE, ZERO, ZERO, ONE],
        [ZERO, ONE, ONE, ZERO],
        [ZERO, -i, i, ZERO],
        [ONE, ZERO, ZERO, -ONE],
    ];
    let mut outside = DMatrix::<C64>::identity(DIM, DIM);
    for &b in &basis {
        outside[(b, b)] = ZERO;
    }
    let mut terms = Vec::with_capacity(16);
    for (a, pa) in paulis.iter().enumerate() {
        for (b, pb) in paulis.iter().enumerate() {
            let mut u = outside.clone();
            for r in 0..4 {
                for c in 0..4 {
                    // (σ_a ⊗ σ_b)[r, c] with r = 2·r_a + r_b.
                    let v = pa[(r / 2) * 2 + c / 2] * pb[(r % 2) * 2 + c % 2];
                    u[(basis[r], basis[c])] = v;
                }
            }
            let weight = if a == 0 && b == 0 { 1.0 - 15.0 * lambda / 16.0 } else { lambda / 16.0 };
            terms.push((weight, u));
        }
    }
    KrausChannel::mixed_unitary(terms)
}
