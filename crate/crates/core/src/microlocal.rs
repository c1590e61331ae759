//! Phase-space geometry (strict-hyperbolicity cones, the characteristic
//! set), the smooth directional cutoff χ_ε, micro-ellipticity probing, and
//! the windowed-transform wavefront detector.

use crate::calculus::GridField;
use crate::error::{invalid, Error, Result};
use crate::num::{line_fit, smooth_step_down, TAU};
use crate::scalenets::{classify_net, EpsGrid, EpsNet, HolderModel, NetClass};
use crate::symbol::{Expr, GeneralizedSymbol, PhasePoint, ProfileKind, SampleBox};
use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

/// ε-independent reference wave speed entering cone geometry.
#[derive(Debug, Clone)]
pub enum CStar {
    Const(f64),
    /// Bilinear interpolation of Hölder model samples.
    Model(Arc<HolderModel>),
}

impl CStar {
    pub fn value(&self, x: f64, z: f64) -> f64 {
        match self {
            CStar::Const(c) => *c,
            CStar::Model(m) => m.value(x, z),
        }
    }
}

/// Membership test for the strict-hyperbolicity cone
/// I'_θ = {τ ≠ 0, |c*(x,z) ξ/τ| ≤ sin θ}.
pub fn cone_membership(p: &PhasePoint, theta: f64, cstar: &CStar) -> bool {
    if p.tau == 0.0 {
        return false;
    }
    let c = cstar.value(p.x[0], p.z);
    (c * p.xi[0] / p.tau).abs() <= theta.sin()
}

/// Conic sets in (x, z, τ, ξ) with deterministic membership tests.
#[derive(Debug, Clone)]
pub enum PhaseRegion {
    ConeITheta { theta: f64, cstar: CStar },
    Complement(Box<PhaseRegion>),
    Intersection(Vec<PhaseRegion>),
    /// lo ≤ |(τ,ξ)| ≤ hi
    FreqAnnulus { lo: f64, hi: f64 },
    BoxRegion { x: (f64, f64), z: (f64, f64), tau: (f64, f64), xi: (f64, f64) },
}

impl PhaseRegion {
    pub fn cone(theta: f64, cstar: CStar) -> Result<Self> {
        if !(theta > 0.0 && theta < TAU / 4.0) {
            return Err(invalid("cone angle must lie in (0, pi/2)"));
        }
        Ok(PhaseRegion::ConeITheta { theta, cstar })
    }

    pub fn contains(&self, p: &PhasePoint) -> bool {
        match self {
            PhaseRegion::ConeITheta { theta, cstar } => cone_membership(p, *theta, cstar),
            PhaseRegion::Complement(r) => !r.contains(p),
            PhaseRegion::Intersection(rs) => rs.iter().all(|r| r.contains(p)),
            PhaseRegion::FreqAnnulus { lo, hi } => {
                let r = p.freq_norm();
                r >= *lo && r <= *hi
            }
            PhaseRegion::BoxRegion { x, z, tau, xi } => {
                p.x[0] >= x.0
                    && p.x[0] <= x.1
                    && p.z >= z.0
                    && p.z <= z.1
                    && p.tau >= tau.0
                    && p.tau <= tau.1
                    && p.xi[0] >= xi.0
                    && p.xi[0] <= xi.1
            }
        }
    }
}

/// Distance function of the characteristic set Σ:
/// f = ζ² - τ²/c*²(x,z) + |ξ|².
pub fn sigma_distance(p: &PhasePoint, zeta: f64, cstar: &CStar) -> f64 {
    let c = cstar.value(p.x[0], p.z);
    zeta * zeta - p.tau * p.tau / (c * c) + p.xi[0] * p.xi[0] + p.xi[1] * p.xi[1]
}

/// Relative tolerance below which a phase point counts as lying on Σ.
pub const SIGMA_TOL: f64 = 1e-6;

pub fn on_sigma(p: &PhasePoint, zeta: f64, cstar: &CStar) -> bool {
    let scale = p.tau * p.tau + p.xi[0] * p.xi[0] + p.xi[1] * p.xi[1] + zeta * zeta;
    sigma_distance(p, zeta, cstar).abs() <= SIGMA_TOL * scale
}

/// Angle parameters of the directional cutoff chain θ1 < γ1 < γ2 < θ2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleChain {
    pub theta1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub theta2: f64,
}

impl AngleChain {
    pub fn new(theta1: f64, gamma1: f64, gamma2: f64, theta2: f64) -> Result<Self> {
        let quarter = TAU / 4.0;
        if !(0.0 < theta1 && theta1 < gamma1 && gamma1 < gamma2 && gamma2 < theta2 && theta2 < quarter)
        {
            return Err(invalid(
                "angles must satisfy 0 < theta1 < gamma1 < gamma2 < theta2 < pi/2",
            ));
        }
        Ok(AngleChain { theta1, gamma1, gamma2, theta2 })
    }

    /// Default chain 30° < 35° < 50° < 60°.
    pub fn standard() -> Self {
        let d = TAU / 360.0;
        AngleChain::new(30.0 * d, 35.0 * d, 50.0 * d, 60.0 * d).unwrap()
    }
}

/// Build the smooth directional cutoff χ_ε: 1 where |c_ε ξ/τ| ≤ sin γ1,
/// 0 where ≥ sin γ2, exponential join between. `c_eps` is the regularized
/// speed as a symbol expression in (x, z).
pub fn build_chi(angles: &AngleChain, c_eps: Expr) -> Result<GeneralizedSymbol> {
    let f = Expr::mul(vec![c_eps, Expr::xi(), Expr::recip(Expr::tau())]);
    let abs_f = Expr::sqrt(Expr::mul2(f.clone(), f));
    let chi = Expr::profile(
        ProfileKind::StepDown(angles.gamma1.sin(), angles.gamma2.sin()),
        abs_f,
    );
    Ok(GeneralizedSymbol::new(chi, 0.0))
}

/// Largest grid ε such that χ = 1 on sampled I'_θ1 points for every grid
/// ε' ≤ ε (the plateau inclusion threshold).
pub fn chi_plateau_threshold(
    chi: &GeneralizedSymbol,
    theta1: f64,
    cstar: &CStar,
    grid: &EpsGrid,
    base_points: &[(f64, f64)],
) -> Result<Option<f64>> {
    let dirs = 16usize;
    let mut probes = Vec::new();
    for &(x, z) in base_points {
        let c = cstar.value(x, z);
        let s = theta1.sin() / c;
        for k in 0..=dirs {
            // xi/tau from -sinθ/c* to +sinθ/c*: exactly the cone slice τ=1
            let ratio = -s + 2.0 * s * k as f64 / dirs as f64;
            probes.push(PhasePoint::new(x, z, 1.0, ratio));
            probes.push(PhasePoint::new(x, z, -1.0, -ratio));
        }
    }
    let eps = grid.values();
    let mut ok = vec![true; eps.len()];
    for (i, &e) in eps.iter().enumerate() {
        chi.expr.validate_eps(e)?;
        for p in &probes {
            let v = chi.expr.eval(p, e).re;
            if (v - 1.0).abs() > 1e-12 {
                ok[i] = false;
                break;
            }
        }
    }
    for (i, &e) in eps.iter().enumerate() {
        if ok[i..].iter().all(|&b| b) {
            return Ok(Some(e));
        }
    }
    Ok(None)
}

/// Verdict of an ellipticity probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllipticityVerdict {
    Elliptic,
    NonElliptic,
}

/// Sampled micro-ellipticity report: per-ε lower bounds of |a|⟨(τ,ξ)⟩^{-m}
/// beyond a dyadic threshold radius, with net classifications.
#[derive(Debug, Clone)]
pub struct EllipticityReport {
    pub verdict: EllipticityVerdict,
    /// Per-ε lower bound (the 1/s_ε estimate) at the chosen radius.
    pub lower_bound: EpsNet,
    /// Same bound with homogeneous weight |(τ,ξ)|^{-m} instead of ⟨(τ,ξ)⟩^{-m}.
    pub homogeneous_bound: EpsNet,
    /// Per-ε dyadic threshold radius r_ε.
    pub threshold_radius: EpsNet,
    /// Class of the reciprocal net (s_ε); elliptic requires lsc.
    pub s_class: NetClass,
    pub r_class: NetClass,
    pub order: f64,
}

/// Dyadic radii used in the r_ε search.
const PROBE_RADII_LOG2: u32 = 10;

/// Probe lsc micro-ellipticity of a symbol of declared order `m` on a region:
/// for each ε the minimum of |a_ε|⟨(τ,ξ)⟩^{-m} over region directions is
/// tracked along dyadic radii; the threshold radius r_ε is the smallest
/// dyadic radius beyond which the bound stays at half its asymptotic value.
pub fn ellipticity_probe(
    sym: &GeneralizedSymbol,
    region: &PhaseRegion,
    sample_box: &SampleBox,
    m: f64,
    grid: &EpsGrid,
) -> Result<EllipticityReport> {
    sample_box.validate()?;
    // directions with their base points, restricted to the region
    let mut dirs: Vec<PhasePoint> = Vec::new();
    for p in sample_box.points() {
        let r = p.freq_norm();
        if r == 0.0 || !region.contains(&p) {
            continue;
        }
        dirs.push(PhasePoint::new(p.x[0], p.z, p.tau / r, p.xi[0] / r));
    }
    if dirs.is_empty() {
        return Err(Error::InsufficientData(
            "no sampled box point lies inside the region".into(),
        ));
    }
    let radii: Vec<f64> = (0..=PROBE_RADII_LOG2).map(|k| (1u64 << k) as f64).collect();
    let eps = grid.values();
    let mut lower = Vec::with_capacity(eps.len());
    let mut homog = Vec::with_capacity(eps.len());
    let mut radius = Vec::with_capacity(eps.len());
    let mut sup = 0.0f64;
    for &e in eps {
        sym.expr.validate_eps(e)?;
        // min over directions at each radius (skipping scaled points that
        // leave a non-conic region)
        let mut mins = Vec::with_capacity(radii.len());
        for &r in &radii {
            let mut mn = f64::INFINITY;
            for d in &dirs {
                let p = PhasePoint::new(d.x[0], d.z, r * d.tau, r * d.xi[0]);
                if !region.contains(&p) {
                    continue;
                }
                let v = sym.expr.eval(&p, e).norm();
                sup = sup.max(v * p.freq_bracket().powf(-m));
                mn = mn.min(v * p.freq_bracket().powf(-m));
            }
            mins.push(mn);
        }
        // cumulative minimum over radii >= k
        let mut tail = mins.clone();
        for k in (0..tail.len() - 1).rev() {
            tail[k] = tail[k].min(tail[k + 1]);
        }
        let target = 0.5 * tail[tail.len() - 1];
        let mut k_star = tail.len() - 1;
        for (k, &t) in tail.iter().enumerate() {
            if t >= target && t.is_finite() {
                k_star = k;
                break;
            }
        }
        let r_star = radii[k_star];
        lower.push(if tail[k_star].is_finite() { tail[k_star] } else { 0.0 });
        radius.push(r_star);
        // homogeneous-weight bound over the same tail
        let mut hmn = f64::INFINITY;
        for &r in &radii[k_star..] {
            for d in &dirs {
                let p = PhasePoint::new(d.x[0], d.z, r * d.tau, r * d.xi[0]);
                if !region.contains(&p) {
                    continue;
                }
                let v = sym.expr.eval(&p, e).norm() * r.powf(-m);
                hmn = hmn.min(v);
            }
        }
        homog.push(if hmn.is_finite() { hmn } else { 0.0 });
    }
    let vanishing = lower.iter().any(|&v| v <= 1e-12 * sup.max(1e-300));
    let lower_net = EpsNet::new(grid.clone(), lower.clone())?;
    let homog_net = EpsNet::new(grid.clone(), homog)?;
    let radius_net = EpsNet::new(grid.clone(), radius)?;
    let (s_class, r_class, verdict);
    if vanishing {
        s_class = NetClass::Unclassified;
        r_class = classify_net(&radius_net)?.class;
        verdict = EllipticityVerdict::NonElliptic;
    } else {
        let recip = EpsNet::new(
            grid.clone(),
            lower.iter().map(|&v| 1.0 / v).collect(),
        )?;
        s_class = classify_net(&recip)?.class;
        r_class = classify_net(&radius_net)?.class;
        verdict = if s_class == NetClass::Lsc && matches!(r_class, NetClass::Lsc) {
            EllipticityVerdict::Elliptic
        } else {
            EllipticityVerdict::NonElliptic
        };
    }
    Ok(EllipticityReport {
        verdict,
        lower_bound: lower_net,
        homogeneous_bound: homog_net,
        threshold_radius: radius_net,
        s_class,
        r_class,
        order: m,
    })
}

// ---------------------------------------------------------------------------
// Wavefront probe
// ---------------------------------------------------------------------------

/// Discrete frequency cone: directions within angular distance `half_angle`
/// of `dir`. The aperture is a required parameter.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteCone {
    pub dir: (f64, f64),
    pub half_angle: f64,
}

impl DiscreteCone {
    pub fn new(dir: (f64, f64), half_angle: f64) -> Result<Self> {
        let n = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
        if !(n > 0.0) || !(half_angle > 0.0) {
            return Err(invalid("cone needs a nonzero direction and a positive aperture"));
        }
        Ok(DiscreteCone { dir: (dir.0 / n, dir.1 / n), half_angle })
    }

    /// Cone along ±ξ on one-dimensional grids.
    pub fn lateral(sign: f64, half_angle: f64) -> Self {
        DiscreteCone::new((0.0, sign), half_angle).unwrap()
    }

    pub fn contains(&self, tau: f64, xi: f64) -> bool {
        let n = (tau * tau + xi * xi).sqrt();
        if n == 0.0 {
            return false;
        }
        let dot = (tau * self.dir.0 + xi * self.dir.1) / n;
        dot.min(1.0).max(-1.0).acos() <= self.half_angle
    }
}

/// Compactly supported smooth window around a point: a Gaussian core (fast
/// spectral decay, so high-l weights are not polluted by window leakage)
/// carried to exact compact support by the smooth join.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub center_t: f64,
    pub center_x: f64,
    pub sigma: f64,
    /// join start (window still ≈ e^{-inner²/2σ²} there)
    pub inner: f64,
    /// ≡ 0 for |·-center| ≥ outer
    pub outer: f64,
}

impl Window {
    pub fn lateral(x0: f64, sigma: f64, inner: f64, outer: f64) -> Result<Self> {
        if !(0.0 < sigma && sigma * 4.0 <= inner && inner < outer) {
            return Err(invalid(
                "window needs 0 < 4σ <= inner < outer for a clean spectral floor",
            ));
        }
        Ok(Window { center_t: 0.0, center_x: x0, sigma, inner, outer })
    }

    /// φ(center) = 1, supported in |·-center| < outer.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        let dt = t - self.center_t;
        let dx = x - self.center_x;
        let r2 = dt * dt + dx * dx;
        let core = (-r2 / (2.0 * self.sigma * self.sigma)).exp();
        core * smooth_step_down(r2.sqrt(), self.inner, self.outer)
    }
}

/// Regularity margin: higher-l decay slopes may exceed the l=0 slope by at
/// most this much for a "regular" verdict.
pub const WAVEFRONT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavefrontVerdict {
    Regular,
    Singular,
}

/// Wavefront probe outcome: the fitted ε-growth exponents of the windowed,
/// ⟨ζ⟩^l-weighted cone norms, per weight l.
#[derive(Debug, Clone)]
pub struct WavefrontReport {
    pub verdict: WavefrontVerdict,
    /// N_l: slope of log ‖⟨ζ⟩^l F(φ u_ε)‖_{L²(Γ)} against log(1/ε).
    pub exponents: Vec<f64>,
    pub norms: Vec<Vec<f64>>,
    pub l_max: usize,
}

pub const WAVEFRONT_L_MAX: usize = 6;

/// Probe microlocal regularity of a per-ε field family at a point/cone:
/// regular iff a single N bounds the ε-growth of every ⟨ζ⟩^l-weighted
/// windowed cone norm, l = 0..l_max.
pub fn wavefront_probe(
    family: &[GridField],
    window: &Window,
    cone: &DiscreteCone,
    l_max: usize,
) -> Result<WavefrontReport> {
    if family.len() < 4 {
        return Err(Error::InsufficientData(
            "wavefront probe needs at least 4 eps slices".into(),
        ));
    }
    let g0 = &family[0];
    if window.outer >= 0.45 * g0.period(1) {
        return Err(invalid("window must be supported in the grid interior"));
    }
    // cone membership over the grid frequencies (fixed across the family)
    let pairs = g0.freq_pairs();
    let members: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, &(t, x))| cone.contains(t, x))
        .map(|(k, _)| k)
        .collect();
    if members.is_empty() {
        return Err(Error::InsufficientData(
            "cone contains no grid frequencies".into(),
        ));
    }
    let mut norms: Vec<Vec<f64>> = vec![Vec::with_capacity(family.len()); l_max + 1];
    let mut inv_eps_log = Vec::with_capacity(family.len());
    for g in family {
        if g.n != g0.n {
            return Err(invalid("family fields must share one grid"));
        }
        inv_eps_log.push((1.0 / g.eps).ln());
        let mut wg = g.clone();
        let [nt, nx] = g.n;
        for it in 0..nt {
            for ix in 0..nx {
                let w = window.value(g.t_of(it), g.x_of(ix));
                wg.data[it * nx + ix] *= w;
            }
        }
        let spec = wg.spectrum();
        let dmeas = {
            let dxi = TAU / g.period(1) / TAU;
            let dtau = if g.axes == crate::calculus::Axes::TX {
                TAU / g.period(0) / TAU
            } else {
                1.0
            };
            dxi * dtau
        };
        for (l, slot) in norms.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &k in &members {
                let (t, x) = pairs[k];
                let br = (1.0 + t * t + x * x).sqrt();
                acc += br.powi(2 * l as i32) * spec[k].norm_sqr();
            }
            slot.push((acc * dmeas).sqrt());
        }
    }
    let mut exponents = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let vals = &norms[l];
        let peak = vals.iter().cloned().fold(0.0, f64::max);
        if peak < 1e-280 {
            exponents.push(0.0);
            continue;
        }
        let logs: Vec<f64> = vals.iter().map(|v| v.max(1e-280).ln()).collect();
        exponents.push(line_fit(&inv_eps_log, &logs).slope);
    }
    let n0 = exponents[0].max(0.0);
    let worst = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let verdict = if worst - n0 <= WAVEFRONT_MARGIN {
        WavefrontVerdict::Regular
    } else {
        WavefrontVerdict::Singular
    };
    Ok(WavefrontReport { verdict, exponents, norms, l_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::GridField;
    use crate::num::PI;
    use crate::scalenets::{build_mollifier, regularize, HolderModel};
    use num_complex::Complex64;

    #[test]
    fn cone_membership_matches_examples() {
        let c = CStar::Const(1.0);
        let th = 30.0 * TAU / 360.0;
        assert!(cone_membership(&PhasePoint::new(0.0, 0.0, 1.0, 0.4), th, &c));
        assert!(!cone_membership(&PhasePoint::new(0.0, 0.0, 1.0, 0.6), th, &c));
        assert!(!cone_membership(&PhasePoint::new(0.0, 0.0, 0.0, 1.0), th, &c));
    }

    #[test]
    fn chi_values_on_the_three_zones() {
        let angles = AngleChain::standard();
        let chi = build_chi(&angles, Expr::one()).unwrap();
        let s1 = angles.gamma1.sin();
        let s2 = angles.gamma2.sin();
        // plateau
        let p = PhasePoint::new(0.0, 0.0, 1.0, s1 / 2.0);
        assert_eq!(chi.expr.eval(&p, 1.0).re, 1.0);
        // outside
        let p = PhasePoint::new(0.0, 0.0, 1.0, s2 + 0.1);
        assert_eq!(chi.expr.eval(&p, 1.0).re, 0.0);
        // midpoint of the join is exactly 1/2
        let p = PhasePoint::new(0.0, 0.0, 1.0, (s1 + s2) / 2.0);
        assert!((chi.expr.eval(&p, 1.0).re - 0.5).abs() < 1e-12);
        // tau = 0 ray is outside the cutoff support
        let p = PhasePoint::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(chi.expr.eval(&p, 1.0).re, 0.0);
    }

    #[test]
    fn chi_is_bounded_and_homogeneous() {
        let angles = AngleChain::standard();
        let chi = build_chi(&angles, Expr::constant(1.3)).unwrap();
        let mut rng = crate::num::Rng::new(11);
        for _ in 0..200 {
            let tau = 4.0 * rng.uniform() - 2.0;
            let xi = 4.0 * rng.uniform() - 2.0;
            if tau.abs() < 1e-3 {
                continue;
            }
            let p = PhasePoint::new(0.3, -0.2, tau, xi);
            let v = chi.expr.eval(&p, 1.0).re;
            assert!((0.0..=1.0).contains(&v));
            let norm = p.freq_norm();
            if norm >= 1.0 {
                let q = PhasePoint::new(0.3, -0.2, 3.0 * tau, 3.0 * xi);
                let w = chi.expr.eval(&q, 1.0).re;
                assert!((v - w).abs() < 1e-10, "homogeneity: {v} vs {w}");
            }
        }
    }

    #[test]
    fn elliptic_wave_symbol_on_cone() {
        // a = tau^2 - xi^2 with c* = 1 on I'_30: homogeneous bound >= 0.6
        let a = Expr::sub(
            Expr::mul2(Expr::tau(), Expr::tau()),
            Expr::mul2(Expr::xi(), Expr::xi()),
        );
        let sym = GeneralizedSymbol::new(a, 2.0);
        let th = 30.0 * TAU / 360.0;
        let region = PhaseRegion::cone(th, CStar::Const(1.0)).unwrap();
        let sample_box = SampleBox::freq_only(
            crate::symbol::AxisRange::span(-1.0, 1.0, 9),
            crate::symbol::AxisRange::span(-1.0, 1.0, 33),
        );
        let grid = EpsGrid::standard();
        let report = ellipticity_probe(&sym, &region, &sample_box, 2.0, &grid).unwrap();
        assert_eq!(report.verdict, EllipticityVerdict::Elliptic);
        // independent oracle: min over the cone slice of |tau^2 - xi^2| on
        // the unit circle with |xi/tau| <= sin 30 is cos^2θ/(1+sin^2θ) = 0.6
        for &v in &report.homogeneous_bound.values {
            assert!(v >= 0.6 - 1e-9, "homogeneous bound {v}");
        }
    }

    #[test]
    fn bracket_symbol_is_elliptic_everywhere() {
        let b2 = Expr::add(vec![
            Expr::one(),
            Expr::mul2(Expr::tau(), Expr::tau()),
            Expr::mul2(Expr::xi(), Expr::xi()),
        ]);
        let sym = GeneralizedSymbol::new(b2, 2.0);
        let region = PhaseRegion::FreqAnnulus { lo: 0.0, hi: f64::INFINITY };
        let sample_box = SampleBox::freq_only(
            crate::symbol::AxisRange::span(-1.0, 1.0, 9),
            crate::symbol::AxisRange::span(-1.0, 1.0, 9),
        );
        let grid = EpsGrid::standard();
        let report = ellipticity_probe(&sym, &region, &sample_box, 2.0, &grid).unwrap();
        assert_eq!(report.verdict, EllipticityVerdict::Elliptic);
        for &v in &report.lower_bound.values {
            assert!((v - 1.0).abs() < 1e-9, "bound {v}");
        }
    }

    #[test]
    fn vanishing_symbol_is_not_elliptic() {
        // tau^2 - xi^2 sampled on the light ray xi = tau (inside Σ)
        let a = Expr::sub(
            Expr::mul2(Expr::tau(), Expr::tau()),
            Expr::mul2(Expr::xi(), Expr::xi()),
        );
        let sym = GeneralizedSymbol::new(a, 2.0);
        let region = PhaseRegion::FreqAnnulus { lo: 0.0, hi: f64::INFINITY };
        let mut sample_box = SampleBox::freq_only(
            crate::symbol::AxisRange::fixed(1.0),
            crate::symbol::AxisRange::fixed(1.0),
        );
        sample_box.x = crate::symbol::AxisRange::fixed(0.0);
        let grid = EpsGrid::standard();
        let report = ellipticity_probe(&sym, &region, &sample_box, 2.0, &grid).unwrap();
        assert_eq!(report.verdict, EllipticityVerdict::NonElliptic);
    }

    /// Heaviside (values 1/2) mollified at scale 1/ω_ε on a wide periodic
    /// domain: square-wave spectrum times the mollifier's spectral profile.
    pub(super) fn mollified_step_family(nx: usize, period: f64) -> Vec<GridField> {
        let grid = EpsGrid::standard();
        let omega = EpsNet::log_log(grid.clone());
        let phi = build_mollifier(2).unwrap();
        let raw = GridField::from_fn_1d(nx, period, |x| {
            Complex64::new(if x >= 0.0 { 2.0 } else { 1.0 }, 0.0)
        })
        .unwrap();
        let spec = raw.spectrum();
        grid.values()
            .iter()
            .zip(&omega.values)
            .map(|(&e, &w)| {
                let moll: Vec<Complex64> = spec
                    .iter()
                    .enumerate()
                    .map(|(m, s)| s * phi.spectral_profile(raw.freq(1, m) / w))
                    .collect();
                GridField::from_spectrum(moll, &raw).with_meta(0.0, e)
            })
            .collect()
    }

    const STEP_N: usize = 4096;
    const STEP_PERIOD: f64 = 16.0 * TAU;

    #[test]
    fn wavefront_detects_the_mollified_jump() {
        let fam = mollified_step_family(STEP_N, STEP_PERIOD);
        let window = Window::lateral(0.0, 0.8, 3.5, 6.0).unwrap();
        let cone = DiscreteCone::lateral(1.0, 0.5);
        let report = wavefront_probe(&fam, &window, &cone, WAVEFRONT_L_MAX).unwrap();
        assert_eq!(report.verdict, WavefrontVerdict::Singular, "{:?}", report.exponents);
    }

    #[test]
    fn wavefront_regular_away_from_jump() {
        let fam = mollified_step_family(STEP_N, STEP_PERIOD);
        let window = Window::lateral(14.0, 0.8, 3.5, 6.0).unwrap();
        let cone = DiscreteCone::lateral(1.0, 0.5);
        let report = wavefront_probe(&fam, &window, &cone, WAVEFRONT_L_MAX).unwrap();
        assert_eq!(report.verdict, WavefrontVerdict::Regular, "{:?}", report.exponents);
    }

    #[test]
    fn wavefront_regular_for_fixed_gaussian() {
        let grid = EpsGrid::standard();
        let fam: Vec<GridField> = grid
            .values()
            .iter()
            .map(|&e| {
                GridField::from_fn_1d(1024, STEP_PERIOD, |x| {
                    Complex64::new((-0.5 * x * x).exp(), 0.0)
                })
                .unwrap()
                .with_meta(0.0, e)
            })
            .collect();
        let window = Window::lateral(0.0, 0.8, 3.5, 6.0).unwrap();
        for dir in [1.0, -1.0] {
            let cone = DiscreteCone::lateral(dir, 0.5);
            let report = wavefront_probe(&fam, &window, &cone, WAVEFRONT_L_MAX).unwrap();
            assert_eq!(report.verdict, WavefrontVerdict::Regular, "{:?}", report.exponents);
            assert!(report.exponents.iter().all(|n| n.abs() < 0.05));
        }
    }

    #[test]
    fn wavefront_is_window_robust() {
        let fam = mollified_step_family(STEP_N, STEP_PERIOD);
        let cone = DiscreteCone::lateral(1.0, 0.5);
        let w1 = Window::lateral(0.0, 0.8, 3.5, 6.0).unwrap();
        let w2 = Window::lateral(0.0, 0.8, 4.5, 7.0).unwrap();
        let r1 = wavefront_probe(&fam, &w1, &cone, WAVEFRONT_L_MAX).unwrap();
        let r2 = wavefront_probe(&fam, &w2, &cone, WAVEFRONT_L_MAX).unwrap();
        assert_eq!(r1.verdict, WavefrontVerdict::Singular);
        assert_eq!(r1.verdict, r2.verdict);
    }

    #[test]
    fn wavefront_rejects_empty_cone() {
        let fam = mollified_step_family(256, TAU);
        let window = Window::lateral(0.0, 0.2, 0.9, 1.2).unwrap();
        // aperture so small that no discrete frequency direction fits
        let cone = DiscreteCone::new((1.0, 1.0), 1e-9).unwrap();
        assert!(matches!(
            wavefront_probe(&fam, &window, &cone, 2),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn sigma_distance_vanishes_on_characteristic_ray() {
        let c = CStar::Const(2.0);
        let p = PhasePoint::new(0.0, 0.0, 2.0, 0.6);
        // zeta^2 = tau^2/c^2 - xi^2 = 1 - 0.36
        let zeta = (1.0f64 - 0.36).sqrt();
        assert!(on_sigma(&p, zeta, &c));
        assert!(!on_sigma(&p, zeta + 0.1, &c));
    }

    #[test]
    fn ellipticity_monotone_under_region_growth() {
        let a = Expr::sub(
            Expr::mul2(Expr::tau(), Expr::tau()),
            Expr::mul2(Expr::xi(), Expr::xi()),
        );
        let sym = GeneralizedSymbol::new(a, 2.0);
        let grid = EpsGrid::standard();
        let sample_box = SampleBox::freq_only(
            crate::symbol::AxisRange::span(-1.0, 1.0, 9),
            crate::symbol::AxisRange::span(-1.0, 1.0, 33),
        );
        let small = PhaseRegion::cone(20.0 * TAU / 360.0, CStar::Const(1.0)).unwrap();
        let large = PhaseRegion::cone(40.0 * TAU / 360.0, CStar::Const(1.0)).unwrap();
        let rs = ellipticity_probe(&sym, &small, &sample_box, 2.0, &grid).unwrap();
        let rl = ellipticity_probe(&sym, &large, &sample_box, 2.0, &grid).unwrap();
        for (s, l) in rs.lower_bound.values.iter().zip(&rl.lower_bound.values) {
            assert!(l <= s, "bound grew: {l} > {s}");
        }
    }

    #[test]
    fn chi_plateau_threshold_on_regularized_speed() {
        // c* Hölder-rough near 1: chi must be 1 on I'_θ1 for small eps
        let grid = EpsGrid::standard();
        let omega = EpsNet::log_log(grid.clone());
        let phi = build_mollifier(2).unwrap();
        let model =
            HolderModel::from_fn(64, 1, 0.5, |x, _| 1.0 + 0.05 * x.abs().sqrt()).unwrap();
        let angles = AngleChain::standard();
        // regularized speed as a per-eps field
        let slices: Vec<crate::symbol::SmoothField> = grid
            .values()
            .iter()
            .map(|&e| {
                let f = regularize(&model, &omega, &phi, e).unwrap();
                crate::symbol::SmoothField::from_samples(64, 1, &f.data).unwrap()
            })
            .collect();
        let fam = crate::symbol::FieldFamily::per_eps(grid.values().into(), slices).unwrap();
        let c_eps = Expr::field("c", Arc::new(fam));
        let chi = build_chi(&angles, c_eps).unwrap();
        let pts: Vec<(f64, f64)> = (0..8).map(|i| (-PI + i as f64 * PI / 4.0, 0.0)).collect();
        let thr = chi_plateau_threshold(&chi, angles.theta1, &CStar::Model(Arc::new(model)), &grid, &pts)
            .unwrap();
        assert!(thr.is_some(), "no inclusion threshold found");
    }
}

