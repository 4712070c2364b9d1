//! The single seeded generator behind every random draw.
//!
//! The scheme is fixed so other implementations can reproduce the same test
//! corpus: SplitMix64 (Steele, Lea, Flood 2014) produces 64-bit words,
//! a uniform double is `(w >> 11) * 2^-53`, and normals come from the basic
//! Box–Muller transform `sqrt(-2 ln(1 - u1)) cos(2π u2)`, one normal per pair of
//! uniforms.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::model::QuantumState;
use crate::{Result, C64};

#[derive(Clone, Debug)]
pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn complex_normal(&mut self) -> C64 {
        let re = self.normal();
        C64::new(re, self.normal())
    }

    /// Haar-random unit state on levels `lo..=hi`.
    pub fn unit_state(&mut self, lo: usize, hi: usize) -> Result<QuantumState> {
        let coeffs = (lo..=hi).map(|_| self.complex_normal()).collect();
        QuantumState::new(lo, coeffs)?.normalized()
    }

    /// Traceless skew-Hermitian matrix with Gaussian entries.
    pub fn traceless_skew_hermitian(&mut self, n: usize) -> DMatrix<C64> {
        let mut h = DMatrix::from_fn(n, n, |_, _| C64::new(0.0, 0.0));
        for i in 0..n {
            h[(i, i)] = C64::new(self.normal(), 0.0);
            for j in i + 1..n {
                let z = self.complex_normal();
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        let mean = h.trace() / n as f64;
        for i in 0..n {
            h[(i, i)] -= mean;
        }
        h * C64::i()
    }

    /// Haar-random unitary (QR of a complex Gaussian matrix with phase fix).
    pub fn unitary(&mut self, n: usize) -> DMatrix<C64> {
        let z = DMatrix::from_fn(n, n, |_, _| self.complex_normal());
        let qr = z.qr();
        let (q, r) = (qr.q(), qr.r());
        let mut q = q;
        for k in 0..n {
            let d = r[(k, k)];
            if d.norm() > 0.0 {
                let phase = d / d.norm();
                q.column_mut(k).iter_mut().for_each(|z| *z *= phase);
            }
        }
        q
    }
}
