//! Residue, CDR and complex state types.

use serde::{Deserialize, Serialize};

use crate::energy::EnergyReport;
use crate::error::{Error, Result};
use crate::geom::Rotation;
use crate::scalar::{add3, scale3, Vec3};

pub const NUM_TYPES: usize = 20;
pub const ALPHABET: &[u8; NUM_TYPES] = b"ACDEFGHIKLMNPQRSTVWY";

/// Side-chain proxy distance from the C-alpha, in angstrom, per type in
/// alphabet order. Glycine has none; aromatics reach furthest.
const SIDE_CHAIN_REACH: [f64; NUM_TYPES] = [
    1.0, // A
    1.4, // C
    1.8, // D
    2.2, // E
    3.0, // F
    0.0, // G
    2.4, // H
    2.0, // I
    2.6, // K
    2.0, // L
    2.3, // M
    1.8, // N
    1.6, // P
    2.2, // Q
    2.9, // R
    1.2, // S
    1.5, // T
    1.7, // V
    3.4, // W
    3.2, // Y
];

/// Amino-acid type index in `0..20`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AminoAcid(u8);

impl AminoAcid {
    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_TYPES).then_some(AminoAcid(index as u8))
    }

    pub fn from_letter(c: char) -> Option<Self> {
        ALPHABET
            .iter()
            .position(|&b| b as char == c.to_ascii_uppercase())
            .map(|i| AminoAcid(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn letter(self) -> char {
        ALPHABET[self.index()] as char
    }

    pub fn side_chain_reach(self) -> f64 {
        SIDE_CHAIN_REACH[self.index()]
    }

    /// Side-chain offset in the residue's local frame (along local z).
    pub fn side_chain_offset(self) -> Vec3 {
        [0.0, 0.0, self.side_chain_reach()]
    }

    pub fn all() -> impl Iterator<Item = AminoAcid> {
        (0..NUM_TYPES as u8).map(AminoAcid)
    }
}

impl TryFrom<u8> for AminoAcid {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        AminoAcid::new(v as usize).ok_or_else(|| format!("amino-acid index {v} out of range"))
    }
}

impl From<AminoAcid> for u8 {
    fn from(a: AminoAcid) -> u8 {
        a.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Framework,
    Antigen,
    Cdr,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidueState {
    pub aa: AminoAcid,
    /// C-alpha coordinate in angstrom.
    pub x: Vec3,
    pub orient: Rotation,
}

impl ResidueState {
    pub fn new(aa: AminoAcid, x: Vec3, orient: Rotation) -> Self {
        ResidueState { aa, x, orient }
    }

    /// Backbone interaction point (the C-alpha itself).
    pub fn bb_point(&self) -> Vec3 {
        self.x
    }

    /// Side-chain interaction point `x + orient * u(aa)`.
    pub fn sc_point(&self) -> Vec3 {
        add3(self.x, self.orient.apply(self.aa.side_chain_offset()))
    }
}

/// Applies `x -> R x + t`, `O -> R O` to every residue.
pub trait RigidMotion: Sized {
    fn apply_rigid(&self, rot: &Rotation, t: Vec3) -> Self;
}

impl RigidMotion for ResidueState {
    fn apply_rigid(&self, rot: &Rotation, t: Vec3) -> Self {
        ResidueState {
            aa: self.aa,
            x: add3(rot.apply(self.x), t),
            orient: rot.compose(&self.orient),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdrState {
    pub residues: Vec<ResidueState>,
}

impl CdrState {
    pub fn new(residues: Vec<ResidueState>) -> Self {
        CdrState { residues }
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn sequence(&self) -> String {
        self.residues.iter().map(|r| r.aa.letter()).collect()
    }

    /// Checks the physical-sanity bounds on consecutive C-alpha distances.
    pub fn check_physical(&self) -> Result<()> {
        if self.residues.is_empty() {
            return Err(Error::Data("CDR must contain at least one residue".into()));
        }
        for (i, w) in self.residues.windows(2).enumerate() {
            let d = crate::scalar::dist3(w[0].x, w[1].x);
            if !(d > 0.5 && d < 10.0) {
                return Err(Error::Data(format!(
                    "C-alpha spacing {d:.3} between CDR residues {i} and {} outside (0.5, 10)",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

impl RigidMotion for CdrState {
    fn apply_rigid(&self, rot: &Rotation, t: Vec3) -> Self {
        CdrState {
            residues: self.residues.iter().map(|r| r.apply_rigid(rot, t)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextResidue {
    pub role: Role,
    pub state: ResidueState,
}

/// Conditioning context: antibody framework, antigen epitope and the
/// designable CDR span.
///
/// Context residues are stored with the framework first, in chain order,
/// followed by the antigen. The CDR occupies chain positions `l..l+m`, i.e.
/// it is inserted after the first `l` framework residues.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexInstance {
    pub id: String,
    context: Vec<ContextResidue>,
    cdr_span: (usize, usize),
}

impl ComplexInstance {
    pub fn new(id: impl Into<String>, context: Vec<ContextResidue>, cdr_span: (usize, usize)) -> Result<Self> {
        let id = id.into();
        let (l, m) = cdr_span;
        if m == 0 {
            return Err(Error::Data(format!("{id}: CDR span must be non-empty")));
        }
        let n_fw = context.iter().filter(|c| c.role == Role::Framework).count();
        let n_ag = context.iter().filter(|c| c.role == Role::Antigen).count();
        if n_ag == 0 {
            return Err(Error::Data(format!("{id}: complex needs at least one antigen residue")));
        }
        if context.iter().any(|c| c.role == Role::Cdr) {
            return Err(Error::Data(format!("{id}: CDR residues cannot be part of the context")));
        }
        if context[..n_fw].iter().any(|c| c.role != Role::Framework) {
            return Err(Error::Data(format!("{id}: framework residues must precede antigen residues")));
        }
        if l == 0 || l >= n_fw {
            return Err(Error::Data(format!(
                "{id}: CDR span start {l} needs framework anchors on both sides ({n_fw} framework residues)"
            )));
        }
        Ok(ComplexInstance { id, context, cdr_span })
    }

    pub fn context(&self) -> &[ContextResidue] {
        &self.context
    }

    pub fn cdr_span(&self) -> (usize, usize) {
        self.cdr_span
    }

    pub fn cdr_len(&self) -> usize {
        self.cdr_span.1
    }

    pub fn framework(&self) -> impl Iterator<Item = &ResidueState> {
        self.context.iter().filter(|c| c.role == Role::Framework).map(|c| &c.state)
    }

    pub fn antigen(&self) -> impl Iterator<Item = &ResidueState> {
        self.context.iter().filter(|c| c.role == Role::Antigen).map(|c| &c.state)
    }

    pub fn framework_len(&self) -> usize {
        self.context.iter().filter(|c| c.role == Role::Framework).count()
    }

    /// Framework residues flanking the CDR: chain positions `l - 1` and `l + m`.
    pub fn anchors(&self) -> (ResidueState, ResidueState) {
        let l = self.cdr_span.0;
        (self.context[l - 1].state, self.context[l].state)
    }

    pub fn anchor_midpoint(&self) -> Vec3 {
        let (a, b) = self.anchors();
        scale3(add3(a.x, b.x), 0.5)
    }

    /// `(side-chain point, backbone point)` per antigen residue.
    pub fn antigen_sites(&self) -> Vec<(Vec3, Vec3)> {
        self.antigen().map(|r| (r.sc_point(), r.bb_point())).collect()
    }

    pub fn antigen_centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        let mut n = 0.0;
        for r in self.antigen() {
            c = add3(c, r.x);
            n += 1.0;
        }
        scale3(c, 1.0 / n)
    }

    /// Antibody chain residue types with the CDR span left as `None`.
    pub fn antibody_sequence(&self) -> Vec<Option<AminoAcid>> {
        let (l, m) = self.cdr_span;
        let fw: Vec<AminoAcid> = self.framework().map(|r| r.aa).collect();
        let mut seq: Vec<Option<AminoAcid>> = fw[..l].iter().copied().map(Some).collect();
        seq.extend(std::iter::repeat_n(None, m));
        seq.extend(fw[l..].iter().copied().map(Some));
        seq
    }

    pub fn antigen_sequence(&self) -> Vec<AminoAcid> {
        self.antigen().map(|r| r.aa).collect()
    }
}

impl RigidMotion for ComplexInstance {
    fn apply_rigid(&self, rot: &Rotation, t: Vec3) -> Self {
        ComplexInstance {
            id: self.id.clone(),
            context: self
                .context
                .iter()
                .map(|c| ContextResidue {
                    role: c.role,
                    state: c.state.apply_rigid(rot, t),
                })
                .collect(),
            cdr_span: self.cdr_span,
        }
    }
}

/// A generated (or reference) CDR for one complex.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub complex_id: String,
    pub cdr: CdrState,
    pub energies: Option<EnergyReport>,
    pub seed: u64,
}

impl Design {
    pub fn new(complex_id: impl Into<String>, cdr: CdrState, seed: u64) -> Self {
        Design {
            complex_id: complex_id.into(),
            cdr,
            energies: None,
            seed,
        }
    }

    pub fn with_energies(mut self, complex: &ComplexInstance) -> Self {
        self.energies = Some(crate::energy::cdr_ag_energies(complex, &self.cdr));
        self
    }

    /// Energies, computing them if absent.
    pub fn energies_for(&self, complex: &ComplexInstance) -> EnergyReport {
        self.energies
            .clone()
            .unwrap_or_else(|| crate::energy::cdr_ag_energies(complex, &self.cdr))
    }
}

impl RigidMotion for Design {
    fn apply_rigid(&self, rot: &Rotation, t: Vec3) -> Self {
        Design {
            complex_id: self.complex_id.clone(),
            cdr: self.cdr.apply_rigid(rot, t),
            energies: self.energies.clone(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::geom::{exp_map, AxisAngle};

    /// Small hand-built complex: 2 framework residues each side, 3 antigen
    /// residues, CDR of length `m`.
    pub fn toy_complex(m: usize) -> ComplexInstance {
        let fw = |aa: usize, x: Vec3| ContextResidue {
            role: Role::Framework,
            state: ResidueState::new(
                AminoAcid::new(aa).unwrap(),
                x,
                exp_map(AxisAngle([0.1 * aa as f64, -0.2, 0.3])),
            ),
        };
        let ag = |aa: usize, x: Vec3| ContextResidue {
            role: Role::Antigen,
            state: ResidueState::new(
                AminoAcid::new(aa).unwrap(),
                x,
                exp_map(AxisAngle([0.5, 0.1 * aa as f64, -0.4])),
            ),
        };
        ComplexInstance::new(
            "toy",
            vec![
                fw(3, [-8.0, -3.0, 0.0]),
                fw(7, [-5.0, 0.0, 0.5]),
                fw(11, [5.0, 0.0, -0.5]),
                fw(2, [8.0, -3.0, 0.0]),
                ag(18, [-3.0, 9.0, 1.0]),
                ag(5, [2.0, 10.0, -1.0]),
                ag(9, [0.0, 12.0, 2.5]),
            ],
            (2, m),
        )
        .unwrap()
    }

    pub fn toy_cdr(m: usize) -> CdrState {
        CdrState::new(
            (0..m)
                .map(|i| {
                    let f = i as f64 / (m.max(2) - 1) as f64;
                    ResidueState::new(
                        AminoAcid::new((i * 7 + 4) % NUM_TYPES).unwrap(),
                        [-3.5 + 7.0 * f, 3.0 + 2.0 * (std::f64::consts::PI * f).sin(), 0.3 * i as f64],
                        exp_map(AxisAngle([0.2 * i as f64, 0.5, -0.1 * i as f64])),
                    )
                })
                .collect(),
        )
    }
}
