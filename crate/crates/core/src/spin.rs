//! Ground-state Hamiltonian of the NV electron spin (S = 1) coupled to its
//! ¹⁴N nucleus (I = 1).
//!
//! Everything is expressed in MHz (energies, frequencies) and mT (field).
//! The 9-dimensional product basis follows the ordering used by the rate
//! model: `|0,+1⟩, |0,−1⟩, |0,0⟩, |−1,−1⟩, |−1,+1⟩, |−1,0⟩, |+1,+1⟩,
//! |+1,−1⟩, |+1,0⟩` where each ket is `|m_s, m_I⟩`.

use std::fmt;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the electron ⊗ nuclear product space.
pub const DIM: usize = 9;

pub type CMatrix9 = SMatrix<Complex64, DIM, DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("invalid register parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("matrix is not Hermitian (max deviation {deviation:e} MHz)")]
    NotHermitian { deviation: f64 },
    #[error("level {label} has maximal eigenvector overlap {overlap:.3} < 0.6; labels are ambiguous")]
    AmbiguousLabel { label: LevelLabel, overlap: f64 },
    #[error("invalid level label |{ms},{mi}⟩")]
    InvalidLabel { ms: i8, mi: i8 },
}

/// Physical constants of the spin register.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegisterParams {
    /// Zero-field splitting `D` (MHz).
    #[serde(rename = "D")]
    pub zero_field: f64,
    /// Nuclear quadrupole splitting `P` (MHz, signed).
    #[serde(rename = "P")]
    pub quadrupole: f64,
    /// Axial hyperfine coupling (MHz, signed).
    pub a_par: f64,
    /// Transverse hyperfine coupling (MHz, signed).
    pub a_perp: f64,
    /// Electron gyromagnetic ratio (MHz/mT).
    pub gamma_e: f64,
    /// ¹⁴N gyromagnetic ratio (MHz/mT).
    pub gamma_n: f64,
    /// Axial static field (mT).
    #[serde(rename = "B")]
    pub field: f64,
}

impl Default for RegisterParams {
    fn default() -> Self {
        Self {
            zero_field: 2870.0,
            quadrupole: -4.95,
            a_par: -2.3,
            a_perp: -2.6,
            gamma_e: 28.025,
            gamma_n: 3.077e-3,
            field: 2.8,
        }
    }
}

impl RegisterParams {
    pub fn validate(&self) -> Result<(), SpinError> {
        let fields = [
            ("D", self.zero_field),
            ("P", self.quadrupole),
            ("a_par", self.a_par),
            ("a_perp", self.a_perp),
            ("gamma_e", self.gamma_e),
            ("gamma_n", self.gamma_n),
            ("B", self.field),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(SpinError::InvalidParam {
                    name,
                    value,
                    reason: "must be finite",
                });
            }
        }
        if self.zero_field <= 0.0 {
            return Err(SpinError::InvalidParam {
                name: "D",
                value: self.zero_field,
                reason: "must be positive",
            });
        }
        if self.field < 0.0 {
            return Err(SpinError::InvalidParam {
                name: "B",
                value: self.field,
                reason: "must be non-negative",
            });
        }
        if self.gamma_e <= 0.0 {
            return Err(SpinError::InvalidParam {
                name: "gamma_e",
                value: self.gamma_e,
                reason: "must be positive",
            });
        }
        Ok(())
    }
}

/// A product state `|m_s, m_I⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelLabel {
    pub ms: i8,
    pub mi: i8,
}

impl LevelLabel {
    /// Basis order shared by the Hamiltonian and the population vector.
    pub const ORDER: [LevelLabel; DIM] = [
        LevelLabel::new_unchecked(0, 1),
        LevelLabel::new_unchecked(0, -1),
        LevelLabel::new_unchecked(0, 0),
        LevelLabel::new_unchecked(-1, -1),
        LevelLabel::new_unchecked(-1, 1),
        LevelLabel::new_unchecked(-1, 0),
        LevelLabel::new_unchecked(1, 1),
        LevelLabel::new_unchecked(1, -1),
        LevelLabel::new_unchecked(1, 0),
    ];

    pub fn new(ms: i8, mi: i8) -> Result<Self, SpinError> {
        if (-1..=1).contains(&ms) && (-1..=1).contains(&mi) {
            Ok(Self { ms, mi })
        } else {
            Err(SpinError::InvalidLabel { ms, mi })
        }
    }

    const fn new_unchecked(ms: i8, mi: i8) -> Self {
        Self { ms, mi }
    }

    pub fn index(self) -> usize {
        match (self.ms, self.mi) {
            (0, 1) => 0,
            (0, -1) => 1,
            (0, 0) => 2,
            (-1, -1) => 3,
            (-1, 1) => 4,
            (-1, 0) => 5,
            (1, 1) => 6,
            (1, -1) => 7,
            (1, 0) => 8,
            _ => unreachable!("LevelLabel constructed outside the spin-1 range"),
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ORDER.get(index).copied()
    }
}

fn signed(m: i8) -> String {
    match m {
        0 => "0".to_string(),
        m if m > 0 => format!("+{m}"),
        m => m.to_string(),
    }
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", signed(self.ms), signed(self.mi))
    }
}

/// 9×9 Hermitian Hamiltonian in MHz, basis in [`LevelLabel::ORDER`].
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianMatrix(pub CMatrix9);

impl HamiltonianMatrix {
    pub fn entries(&self) -> &CMatrix9 {
        &self.0
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let h = &self.0;
        let mut worst = 0.0f64;
        for i in 0..DIM {
            for j in 0..DIM {
                worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_diagonal(&self) -> bool {
        (0..DIM).all(|i| (0..DIM).all(|j| i == j || self.0[(i, j)] == Complex64::new(0.0, 0.0)))
    }

    /// `H + c·1`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.0;
        for i in 0..DIM {
            m[(i, i)] += Complex64::new(c, 0.0);
        }
        Self(m)
    }
}

/// Matrix element of S₊ (or I₊) for spin 1: ⟨m+1|S₊|m⟩ = √(2 − m(m+1)).
fn raising(m: i8) -> f64 {
    let m = f64::from(m);
    (2.0 - m * (m + 1.0)).max(0.0).sqrt()
}

pub fn build_hamiltonian(params: &RegisterParams) -> Result<HamiltonianMatrix, SpinError> {
    params.validate()?;
    let mut h = CMatrix9::zeros();
    for (i, label) in LevelLabel::ORDER.iter().enumerate() {
        let ms = f64::from(label.ms);
        let mi = f64::from(label.mi);
        let diag = params.zero_field * ms * ms
            + params.gamma_e * params.field * ms
            + params.gamma_n * params.field * mi
            + params.quadrupole * mi * mi
            + params.a_par * ms * mi;
        h[(i, i)] = Complex64::new(diag, 0.0);
    }
    // A⊥(SxIx + SyIy) = (A⊥/2)(S₊I₋ + S₋I₊)
    for (j, ket) in LevelLabel::ORDER.iter().enumerate() {
        if ket.ms < 1 && ket.mi > -1 {
            let bra = LevelLabel::new_unchecked(ket.ms + 1, ket.mi - 1);
            let amp = 0.5 * params.a_perp * raising(ket.ms) * raising(ket.mi - 1);
            let i = bra.index();
            h[(i, j)] += Complex64::new(amp, 0.0);
            h[(j, i)] += Complex64::new(amp, 0.0);
        }
    }
    Ok(HamiltonianMatrix(h))
}

/// Eigen-decomposition with eigenvalues ascending; column `k` of
/// `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: SVector<f64, DIM>,
    pub vectors: CMatrix9,
}

impl Eigensystem {
    pub fn reconstruct(&self) -> CMatrix9 {
        let lambda = CMatrix9::from_diagonal(&self.values.map(|v| Complex64::new(v, 0.0)));
        self.vectors * lambda * self.vectors.adjoint()
    }

    /// |⟨basis i | eigenvector k⟩|².
    pub fn overlap(&self, basis: usize, eigen: usize) -> f64 {
        self.vectors[(basis, eigen)].norm_sqr()
    }
}

pub fn eigensystem(h: &HamiltonianMatrix) -> Result<Eigensystem, SpinError> {
    let scale = h.0.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
    let deviation = h.hermiticity_deviation();
    if deviation > 1e-12 * scale {
        return Err(SpinError::NotHermitian { deviation });
    }
    let eig = h.0.symmetric_eigen();
    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = SVector::<f64, DIM>::zeros();
    let mut vectors = CMatrix9::zeros();
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src];
        vectors.set_column(k, &eig.eigenvectors.column(src));
    }
    Ok(Eigensystem { values, vectors })
}

/// Energy (MHz) of the eigenstate associated with each product label,
/// indexed like [`LevelLabel::ORDER`].
pub fn level_energies(params: &RegisterParams) -> Result<[f64; DIM], SpinError> {
    level_energies_of(&build_hamiltonian(params)?)
}

pub fn level_energies_of(h: &HamiltonianMatrix) -> Result<[f64; DIM], SpinError> {
    let eig = eigensystem(h)?;
    let mut energies = [0.0; DIM];
    for (basis, energy) in energies.iter_mut().enumerate() {
        let mut best = 0;
        let mut best_overlap = -1.0;
        for k in 0..DIM {
            let o = eig.overlap(basis, k);
            // strict comparison keeps the lower index on ties
            if o > best_overlap {
                best_overlap = o;
                best = k;
            }
        }
        if best_overlap < 0.6 {
            return Err(SpinError::AmbiguousLabel {
                label: LevelLabel::ORDER[basis],
                overlap: best_overlap,
            });
        }
        *energy = eig.values[best];
    }
    Ok(energies)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionKind {
    /// Electron-spin transition, Δm_s = ±1 at fixed m_I.
    Mw,
    /// Nuclear-spin transition inside one m_s manifold.
    Rf,
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionKind::Mw => f.write_str("MW"),
            TransitionKind::Rf => f.write_str("RF"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: LevelLabel,
    pub to: LevelLabel,
    pub frequency: f64,
    pub kind: TransitionKind,
}

impl Transition {
    pub fn connects(&self, a: LevelLabel, b: LevelLabel) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }
}

/// The four selective transitions driven by the polarization-transfer block.
pub const PROTOCOL_TRANSITIONS: [(LevelLabel, LevelLabel, TransitionKind); 4] = [
    (
        LevelLabel::new_unchecked(0, -1),
        LevelLabel::new_unchecked(-1, -1),
        TransitionKind::Mw,
    ),
    (
        LevelLabel::new_unchecked(0, 1),
        LevelLabel::new_unchecked(1, 1),
        TransitionKind::Mw,
    ),
    (
        LevelLabel::new_unchecked(-1, -1),
        LevelLabel::new_unchecked(-1, 0),
        TransitionKind::Rf,
    ),
    (
        LevelLabel::new_unchecked(1, 1),
        LevelLabel::new_unchecked(1, 0),
        TransitionKind::Rf,
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub entries: Vec<Transition>,
}

impl TransitionTable {
    pub fn find(&self, a: LevelLabel, b: LevelLabel) -> Option<&Transition> {
        self.entries.iter().find(|t| t.connects(a, b))
    }

    pub fn of_kind(&self, kind: TransitionKind) -> impl Iterator<Item = &Transition> {
        self.entries.iter().filter(move |t| t.kind == kind)
    }
}

pub fn transition_frequencies(params: &RegisterParams) -> Result<TransitionTable, SpinError> {
    transitions_of(&build_hamiltonian(params)?)
}

pub fn transitions_of(h: &HamiltonianMatrix) -> Result<TransitionTable, SpinError> {
    Ok(table_from_energies(&level_energies_of(h)?))
}

fn table_from_energies(energies: &[f64; DIM]) -> TransitionTable {
    let entries = PROTOCOL_TRANSITIONS
        .iter()
        .map(|&(from, to, kind)| Transition {
            from,
            to,
            frequency: (energies[to.index()] - energies[from.index()]).abs(),
            kind,
        })
        .collect();
    TransitionTable { entries }
}

/// Frequencies of the `|0,m_I⟩ ↔ |−1,m_I⟩` lines probed by the Ramsey
/// readout, ordered m_I = −1, 0, +1.
pub fn ramsey_line_frequencies(params: &RegisterParams) -> Result<[f64; 3], SpinError> {
    let e = level_energies(params)?;
    let line = |mi: i8| {
        let upper = LevelLabel::new_unchecked(-1, mi).index();
        let lower = LevelLabel::new_unchecked(0, mi).index();
        (e[upper] - e[lower]).abs()
    };
    Ok([line(-1), line(0), line(1)])
}
