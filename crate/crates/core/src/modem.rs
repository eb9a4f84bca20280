//! 4-QAM modulation and hard demodulation.
//!
//! Bits map to unit-average-energy Gray-labeled constellation points; hard
//! demapping picks the nearest point in Euclidean distance with ties broken
//! by lowest point index, so outputs are deterministic under fixed seeds.

use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

/// A single bit, stored as `0` or `1`.
pub type Bit = u8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModemError {
    #[error("bit count {count} is not divisible by {bits_per_symbol} bits per symbol")]
    LengthMismatch { count: usize, bits_per_symbol: usize },
    #[error("unsupported modulation order {0}; only 4-QAM is implemented")]
    UnsupportedOrder(usize),
}

/// A square-QAM constellation with unit average symbol energy.
///
/// The point at index `i` carries the bit label given by the binary digits
/// of `i` (most significant bit first). For 4-QAM the labeling is
/// `00 -> (+1+j)/sqrt(2)`, `01 -> (+1-j)/sqrt(2)`, `10 -> (-1+j)/sqrt(2)`,
/// `11 -> (-1-j)/sqrt(2)`, which is a Gray code: nearest neighbours differ
/// in exactly one bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    points: Vec<Complex64>,
    bits_per_symbol: usize,
    amplitude_bound: f64,
}

impl Constellation {
    /// Builds the constellation for the given modulation order.
    ///
    /// Only order 4 is supported; other orders are rejected.
    pub fn qam(order: usize) -> Result<Self, ModemError> {
        if order != 4 {
            return Err(ModemError::UnsupportedOrder(order));
        }
        let a = FRAC_1_SQRT_2;
        let points = vec![
            Complex64::new(a, a),   // 00
            Complex64::new(a, -a),  // 01
            Complex64::new(-a, a),  // 10
            Complex64::new(-a, -a), // 11
        ];
        Ok(Self {
            order,
            points,
            bits_per_symbol: 2,
            amplitude_bound: a,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Largest per-axis coordinate magnitude over all points (`1/sqrt(2)` for 4-QAM).
    pub fn amplitude_bound(&self) -> f64 {
        self.amplitude_bound
    }

    /// Maps a bit sequence to constellation symbols.
    ///
    /// Errors when the bit count is not divisible by the bits per symbol.
    pub fn modulate(&self, bits: &[Bit]) -> Result<Vec<Complex64>, ModemError> {
        if bits.len() % self.bits_per_symbol != 0 {
            return Err(ModemError::LengthMismatch {
                count: bits.len(),
                bits_per_symbol: self.bits_per_symbol,
            });
        }
        Ok(bits
            .chunks_exact(self.bits_per_symbol)
            .map(|chunk| self.points[bits_to_index(chunk)])
            .collect())
    }

    /// Index of the nearest constellation point; ties go to the lowest index.
    pub fn nearest_point(&self, sample: Complex64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (sample - p).norm_sqr();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best
    }

    /// Writes the bit label of point `index` into `out`.
    pub fn index_bits(&self, index: usize, out: &mut [Bit]) {
        debug_assert_eq!(out.len(), self.bits_per_symbol);
        for (k, bit) in out.iter_mut().enumerate() {
            *bit = ((index >> (self.bits_per_symbol - 1 - k)) & 1) as Bit;
        }
    }

    /// Hard-demaps each sample to the bit label of its nearest point.
    pub fn demodulate_hard(&self, samples: &[Complex64]) -> Vec<Bit> {
        let mut bits = vec![0; samples.len() * self.bits_per_symbol];
        for (s, chunk) in samples
            .iter()
            .zip(bits.chunks_exact_mut(self.bits_per_symbol))
        {
            self.index_bits(self.nearest_point(*s), chunk);
        }
        bits
    }
}

fn bits_to_index(bits: &[Bit]) -> usize {
    bits.iter().fold(0usize, |acc, &b| {
        debug_assert!(b <= 1);
        acc << 1 | b as usize
    })
}
