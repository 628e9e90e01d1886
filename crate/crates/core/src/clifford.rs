//! The 24-element single-qubit Clifford group expressed in the physical gate set.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::C64;

pub type Mat2 = Matrix2<C64>;

pub const CLIFFORD_COUNT: usize = 24;

/// Physical single-qubit gates realizable by a resonant SFQ train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateLabel {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "X")]
    X,
    #[serde(rename = "-X")]
    MinusX,
    #[serde(rename = "X/2")]
    X2,
    #[serde(rename = "-X/2")]
    MinusX2,
    #[serde(rename = "Y")]
    Y,
    #[serde(rename = "-Y")]
    MinusY,
    #[serde(rename = "Y/2")]
    Y2,
    #[serde(rename = "-Y/2")]
    MinusY2,
}

impl GateLabel {
    pub const ALL: [GateLabel; 9] = [
        GateLabel::I,
        GateLabel::X,
        GateLabel::MinusX,
        GateLabel::X2,
        GateLabel::MinusX2,
        GateLabel::Y,
        GateLabel::MinusY,
        GateLabel::Y2,
        GateLabel::MinusY2,
    ];

    /// Equatorial axis angle (0 = +X, π/2 = +Y) and rotation magnitude.
    pub fn rotation(self) -> (f64, f64) {
        use GateLabel::*;
        match self {
            I => (0.0, 0.0),
            X => (0.0, PI),
            MinusX => (PI, PI),
            X2 => (0.0, FRAC_PI_2),
            MinusX2 => (PI, FRAC_PI_2),
            Y => (FRAC_PI_2, PI),
            MinusY => (3.0 * FRAC_PI_2, PI),
            Y2 => (FRAC_PI_2, FRAC_PI_2),
            MinusY2 => (3.0 * FRAC_PI_2, FRAC_PI_2),
        }
    }

    pub fn ideal_unitary(self) -> Mat2 {
        let (axis, angle) = self.rotation();
        equatorial_rotation(axis, angle)
    }

    pub fn as_str(self) -> &'static str {
        use GateLabel::*;
        match self {
            I => "I",
            X => "X",
            MinusX => "-X",
            X2 => "X/2",
            MinusX2 => "-X/2",
            Y => "Y",
            MinusY => "-Y",
            Y2 => "Y/2",
            MinusY2 => "-Y/2",
        }
    }
}

impl fmt::Display for GateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().replace('−', "-");
        GateLabel::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(&s))
            .ok_or_else(|| Error::invalid("gate", format!("unknown gate label `{s}`")))
    }
}

/// exp(−i θ/2 (cos φ σx + sin φ σy)).
pub fn equatorial_rotation(axis: f64, angle: f64) -> Mat2 {
    let c = (angle / 2.0).cos();
    let s = (angle / 2.0).sin();
    let minus_i_s = C64::new(0.0, -s);
    let e_plus = C64::from_polar(1.0, axis);
    let e_minus = C64::from_polar(1.0, -axis);
    Matrix2::new(C64::new(c, 0.0), minus_i_s * e_minus, minus_i_s * e_plus, C64::new(c, 0.0))
}

/// |Tr(U†V)|²/4: one for equality up to global phase.
pub fn unitary_overlap(u: &Mat2, v: &Mat2) -> f64 {
    (u.adjoint() * v).trace().norm_sqr() / 4.0
}

/// Decompositions in time order, at most three gates each.
const DECOMPOSITIONS: [&[GateLabel]; CLIFFORD_COUNT] = {
    use GateLabel::*;
    [
        // Paulis
        &[],
        &[X],
        &[Y],
        &[Y, X],
        // 2π/3 rotations
        &[X2, Y2],
        &[X2, MinusY2],
        &[MinusX2, Y2],
        &[MinusX2, MinusY2],
        &[Y2, X2],
        &[Y2, MinusX2],
        &[MinusY2, X2],
        &[MinusY2, MinusX2],
        // π/2 rotations
        &[X2],
        &[MinusX2],
        &[Y2],
        &[MinusY2],
        &[MinusX2, Y2, X2],
        &[MinusX2, MinusY2, X2],
        // Hadamard-like
        &[X, Y2],
        &[X, MinusY2],
        &[Y, X2],
        &[Y, MinusX2],
        &[X2, Y2, X2],
        &[MinusX2, Y2, MinusX2],
    ]
};

/// Group table built once from the decomposition list.
#[derive(Debug)]
pub struct CliffordGroup {
    unitaries: [Mat2; CLIFFORD_COUNT],
    compose: [[u8; CLIFFORD_COUNT]; CLIFFORD_COUNT],
    inverse: [u8; CLIFFORD_COUNT],
}

impl CliffordGroup {
    pub fn get() -> &'static CliffordGroup {
        static GROUP: OnceLock<CliffordGroup> = OnceLock::new();
        GROUP.get_or_init(CliffordGroup::build)
    }

    fn build() -> Self {
        let mut unitaries = [Mat2::identity(); CLIFFORD_COUNT];
        for (i, seq) in DECOMPOSITIONS.iter().enumerate() {
            unitaries[i] = sequence_unitary(seq);
        }
        let lookup = |m: &Mat2| -> u8 {
            unitaries
                .iter()
                .position(|u| unitary_overlap(u, m) > 1.0 - 1e-9)
                .expect("Clifford table is not closed") as u8
        };
        let mut compose = [[0u8; CLIFFORD_COUNT]; CLIFFORD_COUNT];
        let mut inverse = [0u8; CLIFFORD_COUNT];
        for a in 0..CLIFFORD_COUNT {
            for b in 0..CLIFFORD_COUNT {
                compose[a][b] = lookup(&(unitaries[b] * unitaries[a]));
            }
            inverse[a] = lookup(&unitaries[a].adjoint());
        }
        Self { unitaries, compose, inverse }
    }

    pub fn unitary(&self, index: usize) -> &Mat2 {
        &self.unitaries[index]
    }

    /// Index of "apply `first`, then `second`".
    pub fn compose(&self, first: usize, second: usize) -> usize {
        self.compose[first][second] as usize
    }

    pub fn inverse(&self, index: usize) -> usize {
        self.inverse[index] as usize
    }

    /// Index of the element equal to `m` up to global phase.
    pub fn find(&self, m: &Mat2) -> Option<usize> {
        self.unitaries.iter().position(|u| unitary_overlap(u, m) > 1.0 - 1e-9)
    }

    /// The Clifford index of a single physical gate.
    pub fn index_of_gate(&self, label: GateLabel) -> usize {
        self.find(&label.ideal_unitary()).expect("every gate label is a Clifford")
    }
}

/// Gate list (time order) for Clifford `index`.
pub fn decomposition(index: usize) -> Result<&'static [GateLabel]> {
    DECOMPOSITIONS
        .get(index)
        .copied()
        .ok_or(Error::IndexOutOfRange { index, len: CLIFFORD_COUNT })
}

/// Product of ideal gate unitaries applied in time order.
pub fn sequence_unitary(gates: &[GateLabel]) -> Mat2 {
    gates.iter().fold(Mat2::identity(), |acc, g| g.ideal_unitary() * acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_24_distinct_elements() {
        let g = CliffordGroup::get();
        for a in 0..CLIFFORD_COUNT {
            for b in (a + 1)..CLIFFORD_COUNT {
                assert!(unitary_overlap(g.unitary(a), g.unitary(b)) < 0.9, "{a} and {b} coincide");
            }
        }
    }

    #[test]
    fn decompositions_are_short() {
        for i in 0..CLIFFORD_COUNT {
            assert!(decomposition(i).unwrap().len() <= 3);
        }
        assert!(decomposition(24).is_err());
        assert!(decomposition(0).unwrap().is_empty());
        assert_eq!(decomposition(1).unwrap(), &[GateLabel::X]);
    }

    #[test]
    fn hadamard_has_two_gate_decomposition() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = Mat2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0));
        let g = CliffordGroup::get();
        let idx = g.find(&h).expect("H is a Clifford");
        let seq = decomposition(idx).unwrap();
        assert_eq!(seq.len(), 2);
        // independent 2×2 product, time order X then −Y/2
        let x = Mat2::new(C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, -1.0), C64::new(0.0, 0.0));
        let my2 = Mat2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0));
        assert!(unitary_overlap(&(my2 * x), &h) > 1.0 - 1e-12);
        assert_eq!(seq, &[GateLabel::X, GateLabel::MinusY2]);
    }

    #[test]
    fn group_axioms() {
        let g = CliffordGroup::get();
        for a in 0..CLIFFORD_COUNT {
            assert_eq!(g.compose(a, g.inverse(a)), 0);
            assert_eq!(g.compose(0, a), a);
            for b in 0..CLIFFORD_COUNT {
                let ab = g.compose(a, b);
                let m = g.unitary(b) * g.unitary(a);
                assert!(unitary_overlap(g.unitary(ab), &m) > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for g in GateLabel::ALL {
            assert_eq!(g.as_str().parse::<GateLabel>().unwrap(), g);
        }
        assert!("Z".parse::<GateLabel>().is_err());
    }
}
