//! Smooth periodic coefficient fields: truncated Fourier interpolants of real
//! samples on the canonical [-π, π) grid, with exact structural derivatives.

use crate::error::{invalid, Result};
use crate::num::{freq_index, TAU};
use crate::symbol::expr::lookup_eps;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

/// One smooth field: value(x, z) = dc + 2 Σ Re(c · e^{i(kx wx x + kz wz z)}),
/// modes stored over the half lattice kz > 0 or (kz = 0, kx > 0).
#[derive(Debug, Clone)]
pub struct SmoothField {
    dc: f64,
    /// (kx, kz, coefficient)
    modes: Vec<(i32, i32, Complex64)>,
    period_x: f64,
    period_z: f64,
}

const PRUNE_REL: f64 = 1e-14;

impl SmoothField {
    pub fn constant(v: f64) -> Self {
        SmoothField { dc: v, modes: Vec::new(), period_x: TAU, period_z: TAU }
    }

    /// Interpolate real samples on the uniform periodic grid over
    /// [-π, π) (x fastest, nz rows). Coefficients below 1e-14 of the peak are
    /// pruned; mollified data is band limited so few modes survive.
    pub fn from_samples(nx: usize, nz: usize, samples: &[f64]) -> Result<Self> {
        if samples.len() != nx * nz || nx == 0 || nz == 0 {
            return Err(invalid("field sample count does not match nx*nz"));
        }
        // two-stage DFT with absolute-coordinate phases
        let x0 = -(TAU / 2.0);
        let z0 = -(TAU / 2.0);
        let wx = TAU / TAU; // period 2π, unit wavenumber spacing
        let _ = wx;
        // stage 1: transform rows in x
        let mut row_spec = alloc::vec![Complex64::new(0.0, 0.0); nx * nz];
        for iz in 0..nz {
            for m in 0..nx {
                let k = freq_index(m, nx) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..nx {
                    let x = x0 + TAU * j as f64 / nx as f64;
                    let ph = -k * x;
                    acc += Complex64::new(ph.cos(), ph.sin()) * samples[iz * nx + j];
                }
                row_spec[iz * nx + m] = acc / nx as f64;
            }
        }
        // stage 2: transform columns in z
        let mut coeffs = alloc::vec![Complex64::new(0.0, 0.0); nx * nz];
        for m in 0..nx {
            for l in 0..nz {
                let k = freq_index(l, nz) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..nz {
                    let z = z0 + TAU * j as f64 / nz as f64;
                    let ph = -k * z;
                    acc += Complex64::new(ph.cos(), ph.sin()) * row_spec[j * nx + m];
                }
                coeffs[l * nx + m] = acc / nz as f64;
            }
        }
        let peak = coeffs.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let dc = coeffs[0].re;
        let mut modes = Vec::new();
        for l in 0..nz {
            let kz = freq_index(l, nz) as i32;
            for m in 0..nx {
                let kx = freq_index(m, nx) as i32;
                let keep = kz > 0 || (kz == 0 && kx > 0);
                if !keep {
                    continue;
                }
                // drop the unpaired Nyquist rows: mollified data never
                // reaches them, and keeping them would break realness
                if 2 * kx.unsigned_abs() as usize == nx || 2 * kz.unsigned_abs() as usize == nz {
                    continue;
                }
                let c = coeffs[l * nx + m];
                if c.norm() > PRUNE_REL * peak.max(1e-300) {
                    modes.push((kx, kz, c));
                }
            }
        }
        modes.sort_by_key(|&(kx, kz, _)| (kz, kx));
        Ok(SmoothField { dc, modes, period_x: TAU, period_z: TAU })
    }

    pub fn is_constant(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn dc(&self) -> f64 {
        self.dc
    }

    pub fn modes(&self) -> &[(i32, i32, Complex64)] {
        &self.modes
    }

    pub fn periods(&self) -> (f64, f64) {
        (self.period_x, self.period_z)
    }

    pub(crate) fn from_parts(dc: f64, modes: Vec<(i32, i32, Complex64)>) -> Self {
        SmoothField { dc, modes, period_x: TAU, period_z: TAU }
    }

    /// Exact (∂_x^dx ∂_z^dz) evaluation.
    pub fn eval(&self, x: f64, z: f64, dx: usize, dz: usize) -> f64 {
        let wx = TAU / self.period_x;
        let wz = TAU / self.period_z;
        let mut acc = if dx == 0 && dz == 0 { self.dc } else { 0.0 };
        for &(kx, kz, c) in &self.modes {
            let fx = kx as f64 * wx;
            let fz = kz as f64 * wz;
            let mut m = c;
            for _ in 0..dx {
                m *= Complex64::new(0.0, fx);
            }
            for _ in 0..dz {
                m *= Complex64::new(0.0, fz);
            }
            let ph = fx * x + fz * z;
            let e = Complex64::new(ph.cos(), ph.sin());
            acc += 2.0 * (m * e).re;
        }
        acc
    }

    pub fn content_hash(&self) -> u64 {
        let mut h = 0x84222325_cbf29ce4u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
            h ^= h >> 31;
        };
        mix(self.dc.to_bits());
        for &(kx, kz, c) in &self.modes {
            mix(kx as u64);
            mix(kz as u64);
            mix(c.re.to_bits());
            mix(c.im.to_bits());
        }
        h
    }
}

/// ε-family of smooth fields: either one ε-independent field or one slice per
/// ε-grid point.
#[derive(Debug, Clone)]
pub enum FieldFamily {
    Fixed(SmoothField),
    PerEps { eps: Vec<f64>, slices: Vec<SmoothField> },
}

impl FieldFamily {
    pub fn fixed(f: SmoothField) -> Self {
        FieldFamily::Fixed(f)
    }

    pub fn per_eps(eps: Vec<f64>, slices: Vec<SmoothField>) -> Result<Self> {
        if eps.len() != slices.len() || eps.is_empty() {
            return Err(invalid("per-eps field needs one slice per eps value"));
        }
        Ok(FieldFamily::PerEps { eps, slices })
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            FieldFamily::Fixed(f) if f.is_constant() => Some(f.dc()),
            FieldFamily::PerEps { slices, .. } => {
                let first = slices.first()?;
                if slices.iter().all(|s| s.is_constant() && s.dc() == first.dc()) {
                    Some(first.dc())
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    pub fn has_eps(&self, eps: f64) -> bool {
        match self {
            FieldFamily::Fixed(_) => true,
            FieldFamily::PerEps { eps: grid, .. } => lookup_eps(grid, eps).is_some(),
        }
    }

    pub fn slice(&self, eps: f64) -> Option<&SmoothField> {
        match self {
            FieldFamily::Fixed(f) => Some(f),
            FieldFamily::PerEps { eps: grid, slices } => {
                lookup_eps(grid, eps).map(|i| &slices[i])
            }
        }
    }

    pub fn eval(&self, eps: f64, x: f64, z: f64, dx: usize, dz: usize) -> f64 {
        match self.slice(eps) {
            Some(f) => f.eval(x, z, dx, dz),
            None => f64::NAN,
        }
    }

    pub fn content_hash(&self) -> u64 {
        match self {
            FieldFamily::Fixed(f) => f.content_hash(),
            FieldFamily::PerEps { eps, slices } => {
                let mut h = 0x517cc1b727220a95u64;
                for (e, s) in eps.iter().zip(slices) {
                    h ^= e.to_bits().rotate_left(17);
                    h = h.wrapping_mul(0x100000001b3);
                    h ^= s.content_hash();
                }
                h
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::PI;

    #[test]
    fn interpolates_trig_samples_exactly() {
        let nx = 16;
        let samples: Vec<f64> = (0..nx)
            .map(|j| {
                let x = -PI + TAU * j as f64 / nx as f64;
                2.0 + 0.3 * x.sin() + 0.1 * (2.0 * x).cos()
            })
            .collect();
        let f = SmoothField::from_samples(nx, 1, &samples).unwrap();
        for &x in &[-2.0, -0.3, 0.0, 1.7] {
            let v = f.eval(x, 0.0, 0, 0);
            let expect = 2.0 + 0.3 * x.sin() + 0.1 * (2.0 * x).cos();
            assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
            let d = f.eval(x, 0.0, 1, 0);
            let dexpect = 0.3 * x.cos() - 0.2 * (2.0 * x).sin();
            assert!((d - dexpect).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_derivatives() {
        let n = 16;
        let mut samples = Vec::new();
        for iz in 0..n {
            let z = -PI + TAU * iz as f64 / n as f64;
            for ix in 0..n {
                let x = -PI + TAU * ix as f64 / n as f64;
                samples.push(1.0 + 0.5 * x.sin() * z.cos());
            }
        }
        let f = SmoothField::from_samples(n, n, &samples).unwrap();
        let (x, z) = (0.4, -1.1);
        let v = f.eval(x, z, 1, 1);
        let expect = -0.5 * x.cos() * z.sin();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_field_detected() {
        let f = SmoothField::from_samples(8, 1, &[3.0; 8]).unwrap();
        assert!(f.is_constant());
        assert_eq!(f.dc(), 3.0);
    }
}
