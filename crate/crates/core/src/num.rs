//! Small numerical toolbox: radix-2 FFT, least-squares fits, a deterministic
//! PRNG for probe fields, and Taylor jets for smooth cutoff profiles.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = core::f64::consts::TAU;

// ---------------------------------------------------------------------------
// FFT (power-of-two, in place)
// ---------------------------------------------------------------------------

/// Unnormalized DFT: `X_m = Σ_j x_j e^{-2πi jm/N}`. `N` must be a power of two.
pub fn fft(data: &mut [Complex64]) {
    fft_dir(data, false);
}

/// Unnormalized inverse kernel: `x_j = Σ_m X_m e^{+2πi jm/N}` (no 1/N factor).
pub fn ifft_unscaled(data: &mut [Complex64]) {
    fft_dir(data, true);
}

fn fft_dir(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            data.swap(i, j);
        }
        let mut m = n >> 1;
        while m >= 1 && j & m != 0 {
            j ^= m;
            m >>= 1;
        }
        j |= m;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * TAU / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        let half = len / 2;
        let mut i = 0;
        while i < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..half {
                let u = data[i + k];
                let v = data[i + k + half] * w;
                data[i + k] = u + v;
                data[i + k + half] = u - v;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Signed integer frequency index for storage slot `m` of an `n`-point grid
/// (`0..n/2` then `-n/2..0`).
#[inline]
pub fn freq_index(m: usize, n: usize) -> i64 {
    if n == 1 || m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

/// Result of a 1-D linear least-squares fit `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual_rms: f64,
}

/// Ordinary least squares for a line. Panics on fewer than two points.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    assert!(xs.len() == ys.len() && xs.len() >= 2, "line_fit needs >= 2 points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let mut ss = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - slope * x - intercept;
        ss += r * r;
    }
    LineFit { slope, intercept, residual_rms: (ss / n).sqrt() }
}

/// Log-log fit of `|y| ≈ C·x^slope`; entries with `|y| < floor` are skipped.
/// Returns `None` when fewer than two usable points remain.
pub fn loglog_fit(xs: &[f64], ys: &[f64], floor: f64) -> Option<LineFit> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let a = y.abs();
        if a > floor && x > 0.0 {
            lx.push(x.ln());
            ly.push(a.ln());
        }
    }
    if lx.len() < 2 {
        return None;
    }
    Some(line_fit(&lx, &ly))
}

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64)
// ---------------------------------------------------------------------------

/// Deterministic 64-bit PRNG. Every randomized probe in the crate records the
/// seed it ran with, so runs reproduce bit-identically.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        let mut u1 = self.uniform();
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Complex standard normal (independent re/im).
    pub fn gaussian_c(&mut self) -> Complex64 {
        Complex64::new(self.gaussian(), self.gaussian())
    }
}

// ---------------------------------------------------------------------------
// Taylor jets
// ---------------------------------------------------------------------------

/// Truncated Taylor series `Σ c_k x^k` used to evaluate exact higher
/// derivatives of the smooth exponential-join profiles.
#[derive(Debug, Clone)]
pub struct Jet {
    /// Taylor coefficients c_k = f^{(k)}/k! around the expansion point.
    pub c: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, len: usize) -> Self {
        let mut c = vec![0.0; len];
        c[0] = v;
        Jet { c }
    }

    /// Jet of `1/(s + shift - a)` in the local variable around `s`:
    /// coefficients `(-1)^k / (s-a)^{k+1}`.
    pub fn recip_linear(s_minus_a: f64, len: usize) -> Self {
        let mut c = vec![0.0; len];
        let inv = 1.0 / s_minus_a;
        let mut acc = inv;
        for k in 0..len {
            c[k] = acc;
            acc *= -inv;
        }
        Jet { c }
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        let c = self.c.iter().zip(&other.c).map(|(a, b)| a - b).collect();
        Jet { c }
    }

    pub fn add_scalar(&self, v: f64) -> Jet {
        let mut c = self.c.clone();
        c[0] += v;
        Jet { c }
    }

    pub fn neg(&self) -> Jet {
        Jet { c: self.c.iter().map(|a| -a).collect() }
    }

    /// Substitute `x -> -x` (flip odd coefficients).
    pub fn neg_arg(&self) -> Jet {
        let c = self
            .c
            .iter()
            .enumerate()
            .map(|(k, a)| if k % 2 == 1 { -a } else { *a })
            .collect();
        Jet { c }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        for i in 0..n {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..n - i {
                c[i + j] += self.c[i] * other.c[j];
            }
        }
        Jet { c }
    }

    /// Reciprocal jet; requires a nonzero constant term.
    pub fn recip(&self) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        let inv0 = 1.0 / self.c[0];
        c[0] = inv0;
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += self.c[j] * c[k - j];
            }
            c[k] = -acc * inv0;
        }
        Jet { c }
    }

    /// exp of the jet.
    pub fn exp(&self) -> Jet {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        c[0] = self.c[0].exp();
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.c[j] * c[k - j];
            }
            c[k] = acc / k as f64;
        }
        Jet { c }
    }

    /// k-th derivative value encoded by this jet.
    pub fn derivative(&self, k: usize) -> f64 {
        let mut fact = 1.0;
        for i in 1..=k {
            fact *= i as f64;
        }
        self.c[k] * fact
    }
}

// ---------------------------------------------------------------------------
// Smooth exponential-join steps
// ---------------------------------------------------------------------------

/// Smooth step rising from 0 (s ≤ a) to 1 (s ≥ b) through the logistic of
/// `1/(b-s) - 1/(s-a)`; all derivatives vanish at both ends.
pub fn smooth_step_up(s: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if s != s {
        // NaN inputs only arise at excised phase-space points; treat as outside.
        return 0.0;
    }
    if s <= a {
        return 0.0;
    }
    if s >= b {
        return 1.0;
    }
    let g = 1.0 / (b - s) - 1.0 / (s - a);
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

/// Smooth step falling from 1 (s ≤ a) to 0 (s ≥ b); `1 - smooth_step_up`.
pub fn smooth_step_down(s: f64, a: f64, b: f64) -> f64 {
    if s != s {
        return 0.0;
    }
    1.0 - smooth_step_up(s, a, b)
}

/// Exact k-th derivative of `smooth_step_up(·, a, b)` at `s`, via Taylor jets.
pub fn smooth_step_up_deriv(s: f64, a: f64, b: f64, k: usize) -> f64 {
    if k == 0 {
        return smooth_step_up(s, a, b);
    }
    if s != s || s <= a || s >= b {
        return 0.0;
    }
    let g0 = 1.0 / (b - s) - 1.0 / (s - a);
    if g0.abs() > 500.0 {
        // logistic saturated; derivatives below underflow threshold
        return 0.0;
    }
    let len = k + 1;
    // g(s+x) = 1/(b-s-x) - 1/(s+x-a)
    let g = Jet::recip_linear(b - s, len).neg_arg().sub(&Jet::recip_linear(s - a, len));
    // sigma(g) computed overflow-safe on either sign
    let sig = if g0 >= 0.0 {
        g.neg().exp().add_scalar(1.0).recip()
    } else {
        let e = g.exp();
        e.mul(&e.add_scalar(1.0).recip())
    };
    sig.derivative(k)
}

/// Exact k-th derivative of `smooth_step_down(·, a, b)` at `s`.
pub fn smooth_step_down_deriv(s: f64, a: f64, b: f64, k: usize) -> f64 {
    if k == 0 {
        return smooth_step_down(s, a, b);
    }
    -smooth_step_up_deriv(s, a, b, k)
}
