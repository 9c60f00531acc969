//! BB84 polarization states, misalignment, tomography and fidelity.
//!
//! States are Jones vectors over the (H, V) basis. Bit convention used
//! throughout the crate: H and P encode 0, V and M encode 1.

use core::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Basis {
    pub fn from_bit(bit: u8) -> Basis {
        if bit & 1 == 0 {
            Basis::Rectilinear
        } else {
            Basis::Diagonal
        }
    }

    pub fn as_bit(self) -> u8 {
        match self {
            Basis::Rectilinear => 0,
            Basis::Diagonal => 1,
        }
    }
}

/// The four BB84 states: horizontal, vertical, +45° (P) and 135° (M).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    P,
    M,
}

impl Polarization {
    pub const ALL: [Polarization; 4] = [Polarization::H, Polarization::V, Polarization::P, Polarization::M];

    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Rectilinear,
            Polarization::P | Polarization::M => Basis::Diagonal,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarization::H | Polarization::P => 0,
            Polarization::V | Polarization::M => 1,
        }
    }

    pub fn from_basis_bit(basis: Basis, bit: u8) -> Polarization {
        match (basis, bit & 1) {
            (Basis::Rectilinear, 0) => Polarization::H,
            (Basis::Rectilinear, _) => Polarization::V,
            (Basis::Diagonal, 0) => Polarization::P,
            (Basis::Diagonal, _) => Polarization::M,
        }
    }

    pub fn orthogonal(self) -> Polarization {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
            Polarization::P => Polarization::M,
            Polarization::M => Polarization::P,
        }
    }

    /// Two-bit code (basis, bit) used by compact encodings.
    pub fn code(self) -> u8 {
        (self.basis().as_bit() << 1) | self.bit()
    }

    pub fn from_code(code: u8) -> Polarization {
        Polarization::from_basis_bit(Basis::from_bit(code >> 1), code & 1)
    }
}

/// Normalised Jones vector `(a_H, a_V)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub h: Complex64,
    pub v: Complex64,
}

impl StateVector {
    pub fn new(h: Complex64, v: Complex64) -> Result<Self> {
        let s = StateVector { h, v };
        ensure_domain((s.norm_sqr() - 1.0).abs() <= 1e-12, "state norm", s.norm_sqr())?;
        Ok(s)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    /// The pure-state density matrix `|ψ><ψ|`.
    pub fn density(&self) -> DensityMatrix {
        let m = [[self.h * self.h.conj(), self.h * self.v.conj()], [self.v * self.h.conj(), self.v * self.v.conj()]];
        DensityMatrix(m)
    }

    /// Right circular, `(|H> + i|V>)/√2`.
    pub fn right_circular() -> StateVector {
        StateVector { h: Complex64::new(FRAC_1_SQRT_2, 0.0), v: Complex64::new(0.0, FRAC_1_SQRT_2) }
    }

    pub fn left_circular() -> StateVector {
        StateVector { h: Complex64::new(FRAC_1_SQRT_2, 0.0), v: Complex64::new(0.0, -FRAC_1_SQRT_2) }
    }
}

pub fn ideal_state(p: Polarization) -> StateVector {
    let (h, v) = match p {
        Polarization::H => (1.0, 0.0),
        Polarization::V => (0.0, 1.0),
        Polarization::P => (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
        Polarization::M => (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    };
    StateVector { h: Complex64::new(h, 0.0), v: Complex64::new(v, 0.0) }
}

/// Real rotation by `theta` in the H-V plane.
pub fn rotate(s: &StateVector, theta: f64) -> StateVector {
    let (sin, cos) = libm::sincos(theta);
    StateVector { h: s.h * cos - s.v * sin, v: s.h * sin + s.v * cos }
}

/// Probability that a state prepared in some basis and rotated by `theta`
/// lands in the orthogonal detector of the same basis.
pub fn misalignment_error_prob(theta: f64) -> f64 {
    let s = libm::sin(theta);
    s * s
}

/// Inverse of [`misalignment_error_prob`] on `[0, π/2]`.
pub fn misalignment_angle(error_prob: f64) -> Result<f64> {
    ensure_domain((0.0..=1.0).contains(&error_prob), "misalignment error probability", error_prob)?;
    Ok(libm::asin(libm::sqrt(error_prob)))
}

/// 2×2 complex density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(pub [[Complex64; 2]; 2]);

impl DensityMatrix {
    /// `(I + s1 σz + s2 σx + s3 σy) / 2` for a Stokes (Bloch) vector.
    pub fn from_stokes(s: [f64; 3]) -> DensityMatrix {
        let [s1, s2, s3] = s;
        DensityMatrix([
            [Complex64::new((1.0 + s1) / 2.0, 0.0), Complex64::new(s2 / 2.0, -s3 / 2.0)],
            [Complex64::new(s2 / 2.0, s3 / 2.0), Complex64::new((1.0 - s1) / 2.0, 0.0)],
        ])
    }

    pub fn stokes(&self) -> [f64; 3] {
        let m = &self.0;
        [(m[0][0] - m[1][1]).re, 2.0 * m[1][0].re, 2.0 * m[1][0].im]
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    /// Eigenvalues in ascending order (valid for Hermitian matrices).
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = &self.0;
        let mean = (m[0][0].re + m[1][1].re) / 2.0;
        let half_diff = (m[0][0].re - m[1][1].re) / 2.0;
        let radius = libm::sqrt(half_diff * half_diff + m[0][1].norm_sqr());
        [mean - radius, mean + radius]
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        let herm = (m[0][1] - m[1][0].conj()).norm().max(m[0][0].im.abs()).max(m[1][1].im.abs());
        ensure_domain(herm <= 1e-9, "hermiticity defect", herm)?;
        let tr = self.trace();
        ensure_domain((tr.re - 1.0).abs() <= 1e-9 && tr.im.abs() <= 1e-9, "trace", tr.re)?;
        let low = self.eigenvalues()[0];
        ensure_domain(low >= -1e-9, "smallest eigenvalue", low)
    }

    /// `<ψ|ρ|ψ>`
    pub fn expectation(&self, s: &StateVector) -> f64 {
        let m = &self.0;
        let rho_psi_h = m[0][0] * s.h + m[0][1] * s.v;
        let rho_psi_v = m[1][0] * s.h + m[1][1] * s.v;
        (s.h.conj() * rho_psi_h + s.v.conj() * rho_psi_v).re
    }
}

/// Click tallies in the three measurement bases used for reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TomographyCounts {
    pub h: u64,
    pub v: u64,
    pub p: u64,
    pub m: u64,
    /// Right circular.
    pub r: u64,
    /// Left circular.
    pub l: u64,
}

/// Linear Stokes inversion followed by projection onto the physical states.
///
/// A Bloch vector longer than one has a negative eigenvalue; clipping that
/// eigenvalue and renormalising the trace leaves the pure state along the
/// same direction, which is what the projection returns.
pub fn tomography(counts: &TomographyCounts) -> Result<DensityMatrix> {
    let stokes = |plus: u64, minus: u64| -> Result<f64> {
        let total = plus + minus;
        if total == 0 {
            return Err(Error::InsufficientData("a tomography basis has no counts"));
        }
        Ok((plus as f64 - minus as f64) / total as f64)
    };
    let mut s = [stokes(counts.h, counts.v)?, stokes(counts.p, counts.m)?, stokes(counts.r, counts.l)?];
    let len = libm::sqrt(s.iter().map(|x| x * x).sum::<f64>());
    if len > 1.0 {
        s.iter_mut().for_each(|x| *x /= len);
    }
    Ok(DensityMatrix::from_stokes(s))
}

pub fn fidelity(rho: &DensityMatrix, p: Polarization) -> Result<f64> {
    rho.validate()?;
    Ok(rho.expectation(&ideal_state(p)).clamp(0.0, 1.0))
}

/// Simulated projective measurements of a pure state, `shots` per basis.
pub fn simulate_counts<R: Rng + ?Sized>(state: &StateVector, shots: u64, rng: &mut R) -> TomographyCounts {
    let p_h = state.h.norm_sqr() / state.norm_sqr();
    let p_p = state.inner(&ideal_state(Polarization::P)).norm_sqr();
    let p_r = state.inner(&StateVector::right_circular()).norm_sqr();
    let mut draw = |p: f64| -> (u64, u64) {
        let plus = (0..shots).filter(|_| rng.gen::<f64>() < p).count() as u64;
        (plus, shots - plus)
    };
    let (h, v) = draw(p_h);
    let (p, m) = draw(p_p);
    let (r, l) = draw(p_r);
    TomographyCounts { h, v, p, m, r, l }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use core::f64::consts::{FRAC_PI_4, PI};
    use proptest::prelude::*;

    const FIG3_THETA_DEG: f64 = 6.859;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn states_close(a: &StateVector, b: &StateVector) -> bool {
        (a.h - b.h).norm() < 1e-12 && (a.v - b.v).norm() < 1e-12
    }

    #[test]
    fn ideal_states() {
        let h = ideal_state(Polarization::H);
        assert_eq!((h.h.re, h.v.re), (1.0, 0.0));
        let p = ideal_state(Polarization::P);
        assert!(close(p.h.re * p.h.re, 0.5, 1e-12) && close(p.v.re * p.v.re, 0.5, 1e-12));
        assert!(p.inner(&ideal_state(Polarization::M)).norm() < 1e-15);
        for s in Polarization::ALL {
            assert!(close(ideal_state(s).norm_sqr(), 1.0, 1e-12));
            assert_eq!(Polarization::from_code(s.code()), s);
        }
    }

    #[test]
    fn rotation_examples() {
        let h = ideal_state(Polarization::H);
        assert!(states_close(&rotate(&h, 0.0), &h));
        assert!(states_close(&rotate(&h, FRAC_PI_4), &ideal_state(Polarization::P)));
        let tilted = rotate(&h, FIG3_THETA_DEG.to_radians());
        let f = fidelity(&tilted.density(), Polarization::H).unwrap();
        assert!(close(f, 0.98574, 1e-5), "{f}");
    }

    #[test]
    fn fidelity_examples() {
        let h = ideal_state(Polarization::H).density();
        assert!(close(fidelity(&h, Polarization::H).unwrap(), 1.0, 1e-15));
        let v = ideal_state(Polarization::V).density();
        assert!(close(fidelity(&v, Polarization::H).unwrap(), 0.0, 1e-15));
        let bad = DensityMatrix([
            [Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        ]);
        assert!(fidelity(&bad, Polarization::H).is_err());
    }

    #[test]
    fn misalignment_examples() {
        assert_eq!(misalignment_error_prob(0.0), 0.0);
        assert!(close(misalignment_error_prob(FRAC_PI_4), 0.5, 1e-15));
        assert!(close(misalignment_error_prob(FIG3_THETA_DEG.to_radians()), 0.01426, 1e-5));
        let theta = misalignment_angle(0.01426).unwrap();
        assert!(close(misalignment_error_prob(theta), 0.01426, 1e-15));
    }

    #[test]
    fn tomography_of_ideal_counts() {
        let h = tomography(&TomographyCounts { h: 100, v: 0, p: 50, m: 50, r: 50, l: 50 }).unwrap();
        assert!((h.0[0][0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(h.0[1][1].norm() < 1e-12 && h.0[0][1].norm() < 1e-12);
        let p = tomography(&TomographyCounts { h: 50, v: 50, p: 100, m: 0, r: 50, l: 50 }).unwrap();
        for row in p.0 {
            for x in row {
                assert!((x - Complex64::new(0.5, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn tomography_needs_every_basis() {
        let c = TomographyCounts { h: 10, v: 0, p: 5, m: 5, r: 0, l: 0 };
        assert!(matches!(tomography(&c), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn tomography_projects_nonphysical_estimates() {
        // every basis fully polarized: Bloch vector of length √3
        let rho = tomography(&TomographyCounts { h: 10, v: 0, p: 10, m: 0, r: 10, l: 0 }).unwrap();
        rho.validate().unwrap();
        assert!(close(rho.eigenvalues()[0], 0.0, 1e-12));
    }

    #[test]
    fn tomography_recovers_misaligned_state() {
        let mut rng = substream(11, 0);
        let state = rotate(&ideal_state(Polarization::H), FIG3_THETA_DEG.to_radians());
        let counts = simulate_counts(&state, 1_000_000, &mut rng);
        let rho = tomography(&counts).unwrap();
        let f = fidelity(&rho, Polarization::H).unwrap();
        assert!(close(f, 0.9857, 1e-3), "{f}");
    }

    #[test]
    fn tomography_recovers_any_pure_state() {
        let mut rng = substream(12, 0);
        for k in 0..6 {
            let theta = 0.37 * k as f64;
            let phase = Complex64::from_polar(1.0, 0.9 * k as f64);
            let (sin, cos) = libm::sincos(theta);
            let state = StateVector::new(Complex64::new(cos, 0.0), phase * sin).unwrap();
            let rho = tomography(&simulate_counts(&state, 1_000_000, &mut rng)).unwrap();
            assert!(rho.expectation(&state) >= 0.999);
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm_and_composes(a in -PI..PI, b in -PI..PI, idx in 0usize..4) {
            let s = ideal_state(Polarization::ALL[idx]);
            prop_assert!((rotate(&s, a).norm_sqr() - 1.0).abs() <= 1e-12);
            prop_assert!(states_close(&rotate(&rotate(&s, a), b), &rotate(&s, a + b)));
        }

        #[test]
        fn orthogonal_fidelities_sum_to_one(s1 in -1.0f64..1.0, s2 in -1.0f64..1.0, s3 in -1.0f64..1.0, idx in 0usize..4) {
            let len = libm::sqrt(s1 * s1 + s2 * s2 + s3 * s3).max(1.0);
            let rho = DensityMatrix::from_stokes([s1 / len, s2 / len, s3 / len]);
            let p = Polarization::ALL[idx];
            let sum = fidelity(&rho, p).unwrap() + fidelity(&rho, p.orthogonal()).unwrap();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn misalignment_is_fidelity_loss(theta in -PI..PI, idx in 0usize..4) {
            let p = Polarization::ALL[idx];
            let rotated = rotate(&ideal_state(p), theta).density();
            let f = rotated.expectation(&ideal_state(p));
            prop_assert!((misalignment_error_prob(theta) - (1.0 - f)).abs() <= 1e-12);
        }
    }
}
