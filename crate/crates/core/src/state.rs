//! Two-photon states over (spatial port, polarization, internal) modes.
//!
//! Amplitude convention: a pure state is `Σ c_mn |mn⟩` over canonical unordered
//! pairs `m ≤ n`, where `|mn⟩ = a†_m a†_n |0⟩` for `m ≠ n` and
//! `|mm⟩ = (a†_m)² |0⟩ / √2` is the normalized double-occupancy Fock ket.
//! The squared norm is therefore `Σ |c_mn|²` over stored pairs, and the
//! coefficient stored under `(m, m)` is the amplitude of that normalized ket.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Ket4, Mat4, C64};

/// Amplitudes below this magnitude are dropped after every propagation step.
pub const PRUNE_THRESHOLD: f64 = 1e-14;
const NORM_TOLERANCE: f64 = 1e-12;
const UNITARITY_TOLERANCE: f64 = 1e-10;

/// Named spatial port of the optical bench.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Port(String);

impl Port {
    pub fn new(name: impl Into<String>) -> Self {
        Port(name.into())
    }

    /// Signal output path of the source.
    pub fn signal() -> Self {
        Port::new("S")
    }

    /// Idler output path of the source.
    pub fn idler() -> Self {
        Port::new("I")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Port {
    fn from(s: &str) -> Self {
        Port::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
}

impl Pol {
    pub fn index(self) -> usize {
        match self {
            Pol::H => 0,
            Pol::V => 1,
        }
    }

    pub fn from_index(i: usize) -> Pol {
        if i == 0 {
            Pol::H
        } else {
            Pol::V
        }
    }
}

/// A single bosonic mode. Ordering is lexicographic over (port, pol, internal).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub port: Port,
    pub pol: Pol,
    pub internal: usize,
}

impl Mode {
    pub fn new(port: impl Into<Port>, pol: Pol, internal: usize) -> Self {
        Mode {
            port: port.into(),
            pol,
            internal,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{:?},{})", self.port, self.pol, self.internal)
    }
}

fn canonical(a: Mode, b: Mode) -> (Mode, Mode) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Ordered set of modes spanned by a list of ports and an internal dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpace {
    modes: Vec<Mode>,
    index: BTreeMap<Mode, usize>,
    internal_dim: usize,
}

impl ModeSpace {
    pub fn new(ports: impl IntoIterator<Item = Port>, internal_dim: usize) -> Result<Self> {
        if internal_dim == 0 {
            return Err(Error::Config("internal dimension must be at least 1".into()));
        }
        let ports: BTreeSet<Port> = ports.into_iter().collect();
        let mut modes = Vec::with_capacity(ports.len() * 2 * internal_dim);
        for port in &ports {
            for pol in [Pol::H, Pol::V] {
                for internal in 0..internal_dim {
                    modes.push(Mode::new(port.clone(), pol, internal));
                }
            }
        }
        let index = modes.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        Ok(ModeSpace {
            modes,
            index,
            internal_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn index_of(&self, mode: &Mode) -> Option<usize> {
        self.index.get(mode).copied()
    }

    pub fn internal_dim(&self) -> usize {
        self.internal_dim
    }

    pub fn has_port(&self, port: &Port) -> bool {
        self.index.contains_key(&Mode::new(port.clone(), Pol::H, 0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UnitaryKind {
    Unitary,
    /// Unitary on the full space, but some ports only collect discarded
    /// amplitude. Those amplitudes stay in the state and are never detected.
    IsometryWithLoss { loss_ports: Vec<Port> },
}

/// Linear map on creation operators: `a†_m → Σ_n U[n, m] a†_n`.
#[derive(Clone, Debug)]
pub struct ModeUnitary {
    space: Arc<ModeSpace>,
    matrix: DMatrix<C64>,
    kind: UnitaryKind,
    internal_acting: bool,
}

impl ModeUnitary {
    pub fn new(
        space: Arc<ModeSpace>,
        matrix: DMatrix<C64>,
        kind: UnitaryKind,
        internal_acting: bool,
    ) -> Result<Self> {
        let n = space.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Validation(format!(
                "mode matrix is {}x{} but the mode space has {} modes",
                matrix.nrows(),
                matrix.ncols(),
                n
            )));
        }
        let u = ModeUnitary {
            space,
            matrix,
            kind,
            internal_acting,
        };
        let defect = u.unitarity_defect();
        if defect > UNITARITY_TOLERANCE {
            return Err(Error::Validation(format!(
                "mode matrix is not unitary (max |U†U - 1| = {defect:.3e})"
            )));
        }
        Ok(u)
    }

    pub fn identity(space: Arc<ModeSpace>) -> Self {
        let n = space.len();
        ModeUnitary {
            space,
            matrix: DMatrix::identity(n, n),
            kind: UnitaryKind::Unitary,
            internal_acting: false,
        }
    }

    /// Lifts a matrix over `(port, pol)` pairs, indexed `2 * port_index + pol`
    /// with ports in `ports` order, to an internal-blind mode matrix.
    pub fn from_port_polarization(
        space: Arc<ModeSpace>,
        ports: &[Port],
        matrix: &DMatrix<C64>,
        kind: UnitaryKind,
    ) -> Result<Self> {
        let dim = 2 * ports.len();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Validation(format!(
                "port matrix is {}x{} but {} ports need {dim}x{dim}",
                matrix.nrows(),
                matrix.ncols(),
                ports.len()
            )));
        }
        let d = space.internal_dim();
        let mut full = DMatrix::zeros(space.len(), space.len());
        let mut idx = vec![vec![0usize; d]; dim];
        for (p, port) in ports.iter().enumerate() {
            for pol in [Pol::H, Pol::V] {
                for internal in 0..d {
                    let mode = Mode::new(port.clone(), pol, internal);
                    idx[2 * p + pol.index()][internal] = space.index_of(&mode).ok_or_else(|| {
                        Error::Config(format!("port {port} is not part of the mode space"))
                    })?;
                }
            }
        }
        if 2 * ports.len() * d != space.len() {
            return Err(Error::Config(
                "port list does not cover the mode space".into(),
            ));
        }
        for r in 0..dim {
            for col in 0..dim {
                let v = matrix[(r, col)];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                for internal in 0..d {
                    full[(idx[r][internal], idx[col][internal])] = v;
                }
            }
        }
        ModeUnitary::new(space, full, kind, false)
    }

    pub fn space(&self) -> &Arc<ModeSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn kind(&self) -> &UnitaryKind {
        &self.kind
    }

    pub fn is_internal_acting(&self) -> bool {
        self.internal_acting
    }

    pub fn entry(&self, output: &Mode, input: &Mode) -> Option<C64> {
        let r = self.space.index_of(output)?;
        let col = self.space.index_of(input)?;
        Some(self.matrix[(r, col)])
    }

    fn loss_mode_mask(&self) -> Vec<bool> {
        let loss: BTreeSet<&Port> = match &self.kind {
            UnitaryKind::Unitary => BTreeSet::new(),
            UnitaryKind::IsometryWithLoss { loss_ports } => loss_ports.iter().collect(),
        };
        self.space
            .modes()
            .iter()
            .map(|m| loss.contains(&m.port))
            .collect()
    }

    /// Largest deviation of `U†U` from the identity on non-loss modes.
    pub fn unitarity_defect(&self) -> f64 {
        let gram = self.matrix.adjoint() * &self.matrix;
        let mask = self.loss_mode_mask();
        let mut worst: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if mask[i] || mask[j] {
                    continue;
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    pub fn adjoint(&self) -> Self {
        ModeUnitary {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
            kind: self.kind.clone(),
            internal_acting: self.internal_acting,
        }
    }

    /// `next ∘ self`: apply `self` first.
    pub fn then(&self, next: &ModeUnitary) -> Result<Self> {
        if self.space != next.space {
            return Err(Error::Config("cannot compose maps over different mode spaces".into()));
        }
        let kind = match (&self.kind, &next.kind) {
            (UnitaryKind::Unitary, UnitaryKind::Unitary) => UnitaryKind::Unitary,
            (a, b) => {
                let mut ports = BTreeSet::new();
                for k in [a, b] {
                    if let UnitaryKind::IsometryWithLoss { loss_ports } = k {
                        ports.extend(loss_ports.iter().cloned());
                    }
                }
                UnitaryKind::IsometryWithLoss {
                    loss_ports: ports.into_iter().collect(),
                }
            }
        };
        Ok(ModeUnitary {
            space: self.space.clone(),
            matrix: &next.matrix * &self.matrix,
            kind,
            internal_acting: self.internal_acting || next.internal_acting,
        })
    }
}

/// Pure two-photon state, optionally carrying an ensemble weight.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPhotonState {
    terms: BTreeMap<(Mode, Mode), C64>,
    weight: f64,
}

impl TwoPhotonState {
    /// Builds a state from (possibly unordered, possibly repeated) pair
    /// amplitudes. The squared norm must already be one.
    pub fn new(terms: impl IntoIterator<Item = ((Mode, Mode), C64)>, weight: f64) -> Result<Self> {
        let state = Self::collect(terms, weight)?;
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Validation(format!(
                "two-photon state has squared norm {norm}, expected 1"
            )));
        }
        Ok(state)
    }

    /// Like [`TwoPhotonState::new`] but rescales the amplitudes to unit norm.
    pub fn normalized(
        terms: impl IntoIterator<Item = ((Mode, Mode), C64)>,
        weight: f64,
    ) -> Result<Self> {
        let mut state = Self::collect(terms, weight)?;
        let norm = state.norm_sqr();
        if norm <= 0.0 {
            return Err(Error::Validation("two-photon state has zero norm".into()));
        }
        let scale = 1.0 / norm.sqrt();
        for v in state.terms.values_mut() {
            *v *= scale;
        }
        Ok(state)
    }

    fn collect(terms: impl IntoIterator<Item = ((Mode, Mode), C64)>, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Validation(format!("ensemble weight {weight} outside [0, 1]")));
        }
        let mut map: BTreeMap<(Mode, Mode), C64> = BTreeMap::new();
        for ((a, b), amp) in terms {
            *map.entry(canonical(a, b)).or_insert(C64::new(0.0, 0.0)) += amp;
        }
        map.retain(|_, v| v.norm() >= PRUNE_THRESHOLD);
        Ok(TwoPhotonState { terms: map, weight })
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(Mode, Mode), &C64)> {
        self.terms.iter()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|c| c.norm_sqr()).sum()
    }

    pub fn modes(&self) -> BTreeSet<&Mode> {
        self.terms.keys().flat_map(|(a, b)| [a, b]).collect()
    }

    /// Largest internal index used plus one.
    pub fn internal_extent(&self) -> usize {
        self.modes().iter().map(|m| m.internal + 1).max().unwrap_or(1)
    }

    /// Coefficient of the normalized pair ket `|out1 out2⟩`. For
    /// `out1 == out2` this is the amplitude of the `|2⟩` Fock ket, so the
    /// probability of finding both photons in that mode is its squared norm.
    pub fn coincidence_amplitude(&self, out1: &Mode, out2: &Mode) -> C64 {
        self.terms
            .get(&canonical(out1.clone(), out2.clone()))
            .copied()
            .unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn apply(&self, u: &ModeUnitary) -> Result<Self> {
        let space = u.space();
        let sqrt2 = std::f64::consts::SQRT_2;
        // Operator-polynomial coefficients: Σ A_mn a†_m a†_n over canonical pairs.
        let mut columns: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
        let mut column = |idx: usize| -> Vec<(usize, C64)> {
            columns
                .entry(idx)
                .or_insert_with(|| {
                    u.matrix()
                        .column(idx)
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| v.norm() > 0.0)
                        .map(|(r, v)| (r, *v))
                        .collect()
                })
                .clone()
        };
        let mut out: BTreeMap<(usize, usize), C64> = BTreeMap::new();
        for ((a, b), amp) in &self.terms {
            let ia = space
                .index_of(a)
                .ok_or_else(|| Error::Config(format!("mode {a} is not in the map's mode space")))?;
            let ib = space
                .index_of(b)
                .ok_or_else(|| Error::Config(format!("mode {b} is not in the map's mode space")))?;
            let op_coeff = if ia == ib { amp / sqrt2 } else { *amp };
            let col_a = column(ia);
            let col_b = column(ib);
            for &(n, ua) in &col_a {
                for &(l, ub) in &col_b {
                    let key = if n <= l { (n, l) } else { (l, n) };
                    *out.entry(key).or_insert(C64::new(0.0, 0.0)) += op_coeff * ua * ub;
                }
            }
        }
        let modes = space.modes();
        let terms = out.into_iter().filter_map(|((n, l), op)| {
            let ket = if n == l { op * sqrt2 } else { op };
            (ket.norm() >= PRUNE_THRESHOLD).then(|| ((modes[n].clone(), modes[l].clone()), ket))
        });
        let mut state = Self::collect(terms, self.weight)?;
        state.weight = self.weight;
        Ok(state)
    }
}

/// Weighted ensemble of pure two-photon states.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<TwoPhotonState>,
}

impl Ensemble {
    pub fn new(members: Vec<TwoPhotonState>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Validation("ensemble has no members".into()));
        }
        let total: f64 = members.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Validation(format!(
                "ensemble weights sum to {total}, expected 1"
            )));
        }
        Ok(Ensemble { members })
    }

    pub fn pure(state: TwoPhotonState) -> Self {
        Ensemble {
            members: vec![state.with_weight(1.0)],
        }
    }

    pub fn members(&self) -> &[TwoPhotonState] {
        &self.members
    }

    pub fn internal_extent(&self) -> usize {
        self.members.iter().map(|m| m.internal_extent()).max().unwrap_or(1)
    }
}

pub fn apply_unitary(state: &Ensemble, u: &ModeUnitary) -> Result<Ensemble> {
    let members = state
        .members
        .iter()
        .map(|m| m.apply(u))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

/// Which degree of freedom separates (labels) the two photons. The other one
/// becomes the qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Photons labeled by path (S, I); polarization is the qubit.
    ByPath,
    /// Photons labeled by polarization (H, V); path is the qubit.
    ByPolarization,
}

impl Labeling {
    pub fn basis_labels(self) -> [String; 4] {
        let labels = match self {
            Labeling::ByPath => ["HH", "HV", "VH", "VV"],
            Labeling::ByPolarization => ["SS", "SI", "IS", "II"],
        };
        labels.map(String::from)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Labeling::ByPath => "by_path",
            Labeling::ByPolarization => "by_polarization",
        }
    }

    /// The degree of freedom carrying the qubit.
    pub fn qubit_name(self) -> &'static str {
        match self {
            Labeling::ByPath => "polarization",
            Labeling::ByPolarization => "path",
        }
    }

    /// Source modes (label, qubit value) for qubit `q` and basis state `b`.
    pub fn source_mode(self, qubit: usize, basis: usize, internal: usize) -> Mode {
        let path = |i: usize| if i == 0 { Port::signal() } else { Port::idler() };
        match self {
            Labeling::ByPath => Mode::new(path(qubit), Pol::from_index(basis), internal),
            Labeling::ByPolarization => Mode::new(path(basis), Pol::from_index(qubit), internal),
        }
    }

    /// Returns (label slot, qubit value) for a mode, or `None` if the mode is
    /// outside the two source paths.
    fn classify(self, mode: &Mode) -> Option<(usize, usize)> {
        let path = if mode.port == Port::signal() {
            0
        } else if mode.port == Port::idler() {
            1
        } else {
            return None;
        };
        Some(match self {
            Labeling::ByPath => (path, mode.pol.index()),
            Labeling::ByPolarization => (mode.pol.index(), path),
        })
    }
}

impl fmt::Display for Labeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Partitions the photons by the labeling variable, keeps the complementary
/// variable as a qubit, and traces out the internal index.
pub fn reduce_to_qubits(state: &Ensemble, labeling: Labeling) -> Result<DensityMatrix> {
    reduce(state, labeling, false).map(|(rho, _)| rho)
}

/// Like [`reduce_to_qubits`], but first projects onto the subspace with one
/// photon per label value (what a coincidence measurement post-selects).
/// Returns the state and the kept probability.
pub fn reduce_postselected(state: &Ensemble, labeling: Labeling) -> Result<(DensityMatrix, f64)> {
    reduce(state, labeling, true)
}

fn reduce(state: &Ensemble, labeling: Labeling, postselect: bool) -> Result<(DensityMatrix, f64)> {
    let not_reducible = |reason: String| Error::NotReducible {
        labeling: labeling.to_string(),
        reason,
    };
    let mut rho = Mat4::zeros();
    for member in state.members() {
        // Amplitude vectors indexed by (internal of label-0 photon, internal of label-1 photon).
        let mut blocks: BTreeMap<(usize, usize), Ket4> = BTreeMap::new();
        for ((a, b), amp) in member.terms() {
            if a == b {
                if postselect {
                    continue;
                }
                return Err(not_reducible(format!("double occupancy of mode {a}")));
            }
            let ca = labeling
                .classify(a)
                .ok_or_else(|| not_reducible(format!("mode {a} lies outside the S/I paths")))?;
            let cb = labeling
                .classify(b)
                .ok_or_else(|| not_reducible(format!("mode {b} lies outside the S/I paths")))?;
            if ca.0 == cb.0 {
                if postselect {
                    continue;
                }
                return Err(not_reducible(format!(
                    "photons in {a} and {b} share the same label value"
                )));
            }
            let (first, second, (q0, q1)) = if ca.0 == 0 {
                (a, b, (ca.1, cb.1))
            } else {
                (b, a, (cb.1, ca.1))
            };
            let v = blocks
                .entry((first.internal, second.internal))
                .or_insert_with(Ket4::zeros);
            v[2 * q0 + q1] += amp;
        }
        for v in blocks.values() {
            rho += linalg::projector(v).scale(member.weight());
        }
    }
    let tr = linalg::real_trace(&rho);
    if tr <= 0.0 {
        return Err(not_reducible("state has no weight".into()));
    }
    Ok((DensityMatrix::new(rho.unscale(tr), labeling.basis_labels())?, tr))
}

/// Two-qubit density matrix with named basis states.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: Mat4,
    basis_labels: [String; 4],
}

impl DensityMatrix {
    /// Validates Hermiticity and unit trace. Positivity is not enforced here:
    /// linear-inversion estimates may be slightly non-physical.
    pub fn new(entries: Mat4, basis_labels: [String; 4]) -> Result<Self> {
        let herm = linalg::hermiticity_defect(&entries);
        if herm > 1e-10 {
            return Err(Error::Validation(format!(
                "density matrix is not Hermitian (defect {herm:.3e})"
            )));
        }
        let tr = entries.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::Validation(format!("density matrix has trace {tr}")));
        }
        Ok(DensityMatrix {
            entries,
            basis_labels,
        })
    }

    pub fn pure(ket: &Ket4, basis_labels: [String; 4]) -> Result<Self> {
        let n = ket.norm();
        Self::new(linalg::projector(&ket.unscale(n)), basis_labels)
    }

    pub fn maximally_mixed(basis_labels: [String; 4]) -> Self {
        DensityMatrix {
            entries: Mat4::identity().scale(0.25),
            basis_labels,
        }
    }

    pub fn entries(&self) -> &Mat4 {
        &self.entries
    }

    pub fn basis_labels(&self) -> &[String; 4] {
        &self.basis_labels
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vector4<f64> {
        linalg::hermitian_eigen(&self.entries).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_psd(&self, tolerance: f64) -> bool {
        self.min_eigenvalue() >= -tolerance
    }

    /// Reorders the basis: new basis index `i` is old index `perm[i]`.
    pub fn permuted(&self, perm: [usize; 4]) -> Self {
        let entries = Mat4::from_fn(|i, j| self.entries[(perm[i], perm[j])]);
        let basis_labels = perm.map(|p| self.basis_labels[p].clone());
        DensityMatrix {
            entries,
            basis_labels,
        }
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        linalg::trace_distance(&self.entries, &other.entries)
    }
}
