//! The single-qubit Clifford group and RB sequence generation.

use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{equal_up_to_phase, rotation_xy, C2};
use crate::pulse::PrimitiveGate;

use PrimitiveGate::{Xm90, Ym90, I, X180, X90, Y180, Y90};

pub const GROUP_ORDER: usize = 24;
/// Mean number of primitives per Clifford for the shipped table.
pub const PRIMITIVES_PER_CLIFFORD: f64 = 1.875;

/// Decompositions in time order (first element applied first).
const DECOMPOSITIONS: [&[PrimitiveGate]; GROUP_ORDER] = [
    &[I],
    &[X180],
    &[Y180],
    &[Y180, X180],
    &[X90, Y90],
    &[X90, Ym90],
    &[Xm90, Y90],
    &[Xm90, Ym90],
    &[Y90, X90],
    &[Y90, Xm90],
    &[Ym90, X90],
    &[Ym90, Xm90],
    &[X90],
    &[Xm90],
    &[Y90],
    &[Ym90],
    &[Xm90, Y90, X90],
    &[Xm90, Ym90, X90],
    &[X180, Y90],
    &[X180, Ym90],
    &[Y180, X90],
    &[Y180, Xm90],
    &[X90, Y90, X90],
    &[Xm90, Y90, Xm90],
];

/// Ideal unitary of a primitive.
pub fn primitive_unitary(gate: PrimitiveGate) -> C2 {
    let (angle, phi) = gate.rotation();
    rotation_xy(angle, phi)
}

/// Product of primitive unitaries, first gate applied first.
pub fn word_unitary(word: &[PrimitiveGate]) -> C2 {
    word.iter()
        .fold(C2::identity(), |acc, &g| primitive_unitary(g) * acc)
}

/// Fixes the ± sign of an SU(2) matrix: the first entry with nonzero
/// magnitude gets a positive real part (or positive imaginary part when its
/// real part vanishes).
fn normalize(u: C2) -> C2 {
    let det = u.determinant();
    let u = u / det.sqrt();
    for k in 0..4 {
        let z = u[(k / 2, k % 2)];
        if z.norm() > 1e-9 {
            let flip = if z.re.abs() > 1e-9 {
                z.re < 0.0
            } else {
                z.im < 0.0
            };
            return if flip { -u } else { u };
        }
    }
    u
}

struct Group {
    unitaries: Vec<C2>,
    table: [[u8; GROUP_ORDER]; GROUP_ORDER],
    inverse: [u8; GROUP_ORDER],
}

fn find(unitaries: &[C2], u: &C2) -> Option<usize> {
    unitaries.iter().position(|v| equal_up_to_phase(v, u, 1e-9))
}

fn group() -> &'static Group {
    static GROUP: OnceLock<Group> = OnceLock::new();
    GROUP.get_or_init(|| {
        let unitaries: Vec<C2> = DECOMPOSITIONS
            .iter()
            .map(|w| normalize(word_unitary(w)))
            .collect();
        let mut table = [[0u8; GROUP_ORDER]; GROUP_ORDER];
        for a in 0..GROUP_ORDER {
            for b in 0..GROUP_ORDER {
                let prod = unitaries[b] * unitaries[a];
                table[a][b] = find(&unitaries, &prod).expect("Clifford table is closed") as u8;
            }
        }
        let mut inverse = [0u8; GROUP_ORDER];
        for a in 0..GROUP_ORDER {
            inverse[a] = (0..GROUP_ORDER)
                .find(|&b| table[a][b] == 0)
                .expect("every Clifford has an inverse") as u8;
        }
        Group {
            unitaries,
            table,
            inverse,
        }
    })
}

/// One of the 24 single-qubit Cliffords, identified by table index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clifford(u8);

impl Clifford {
    pub const IDENTITY: Clifford = Clifford(0);

    pub fn new(index: usize) -> Option<Self> {
        (index < GROUP_ORDER).then_some(Clifford(index as u8))
    }

    pub fn all() -> impl Iterator<Item = Clifford> {
        (0..GROUP_ORDER as u8).map(Clifford)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    /// Unit-determinant representative.
    pub fn unitary(self) -> C2 {
        group().unitaries[self.index()]
    }

    pub fn decomposition(self) -> &'static [PrimitiveGate] {
        DECOMPOSITIONS[self.index()]
    }

    /// Element equal to `other · self` (self applied first).
    pub fn then(self, other: Clifford) -> Clifford {
        compose(self, other)
    }

    pub fn inverse(self) -> Clifford {
        Clifford(group().inverse[self.index()])
    }

    /// Looks up the element matching `u` up to global phase.
    pub fn from_unitary(u: &C2) -> Option<Clifford> {
        find(&group().unitaries, u).map(|k| Clifford(k as u8))
    }
}

impl fmt::Display for Clifford {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// The element equal to `b · a` (a applied first).
pub fn compose(a: Clifford, b: Clifford) -> Clifford {
    Clifford(group().table[a.index()][b.index()])
}

pub fn decompose(g: Clifford) -> &'static [PrimitiveGate] {
    g.decomposition()
}

/// A random Clifford sequence with its recovery element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbSequence {
    pub seed: u64,
    pub m: usize,
    #[serde(rename = "indices")]
    pub clifford_indices: Vec<Clifford>,
    #[serde(rename = "recovery")]
    pub recovery_index: Clifford,
}

impl RbSequence {
    /// Net Clifford of the random part.
    pub fn product(&self) -> Clifford {
        self.clifford_indices
            .iter()
            .fold(Clifford::IDENTITY, |acc, &g| compose(acc, g))
    }

    /// All Cliffords including the recovery.
    pub fn cliffords(&self) -> impl Iterator<Item = Clifford> + '_ {
        self.clifford_indices
            .iter()
            .copied()
            .chain(std::iter::once(self.recovery_index))
    }

    /// Flattened primitive schedule including the recovery.
    pub fn primitives(&self) -> Vec<PrimitiveGate> {
        self.cliffords()
            .flat_map(|g| g.decomposition().iter().copied())
            .collect()
    }
}

/// Draws `m` uniform Cliffords from a ChaCha8 stream seeded with `seed`.
pub fn generate_sequence(m: usize, seed: u64) -> RbSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clifford_indices: Vec<Clifford> = (0..m)
        .map(|_| Clifford(rng.random_range(0..GROUP_ORDER as u8)))
        .collect();
    let net = clifford_indices
        .iter()
        .fold(Clifford::IDENTITY, |acc, &g| compose(acc, g));
    RbSequence {
        seed,
        m,
        clifford_indices,
        recovery_index: net.inverse(),
    }
}

/// Serializable view of one table row.
#[derive(Clone, Debug, Serialize)]
pub struct TableEntry {
    pub index: usize,
    pub primitives: Vec<PrimitiveGate>,
    /// Row-major `[re, im]` pairs.
    pub unitary: [[f64; 2]; 4],
}

pub fn decomposition_table() -> Vec<TableEntry> {
    Clifford::all()
        .map(|g| {
            let u = g.unitary();
            let mut entries = [[0.0; 2]; 4];
            for (k, e) in entries.iter_mut().enumerate() {
                let z = u[(k / 2, k % 2)];
                *e = [z.re, z.im];
            }
            TableEntry {
                index: g.index(),
                primitives: g.decomposition().to_vec(),
                unitary: entries,
            }
        })
        .collect()
}

/// Phase-invariant distance `1 - |tr(U†V)|/2`.
pub fn phase_invariant_distance(u: &C2, v: &C2) -> f64 {
    1.0 - (u.adjoint() * v).trace().norm() / 2.0
}
