//! ε-parametrized generalized symbols: evaluation with exact structural
//! derivatives, sampled seminorms, growth-order fitting, generalized point
//! values and origin excision.

pub mod expr;
pub mod field;
pub mod table;
pub mod text;

pub use expr::{Expr, PhasePoint, ProfileKind, Var};
pub use field::{FieldFamily, SmoothField};

use crate::error::{invalid, Error, Result};
use crate::microlocal::PhaseRegion;
use crate::num::{line_fit, LineFit};
use crate::scalenets::{classify_net, EpsGrid, EpsNet, NetClass};
use alloc::format;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

/// Frequency multi-index (τ then lateral ξ components).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FreqIndex {
    pub tau: u8,
    pub xi: [u8; 2],
}

impl FreqIndex {
    pub fn tau(n: u8) -> Self {
        FreqIndex { tau: n, ..Default::default() }
    }

    pub fn xi(n: u8) -> Self {
        FreqIndex { xi: [n, 0], ..Default::default() }
    }

    pub fn total(&self) -> usize {
        self.tau as usize + self.xi[0] as usize + self.xi[1] as usize
    }

    pub fn vars(&self) -> impl Iterator<Item = (Var, u8)> {
        [(Var::Tau, self.tau), (Var::Xi(0), self.xi[0]), (Var::Xi(1), self.xi[1])]
            .into_iter()
            .filter(|(_, c)| *c > 0)
    }
}

/// Space multi-index (lateral x components then depth z).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpaceIndex {
    pub x: [u8; 2],
    pub z: u8,
}

impl SpaceIndex {
    pub fn x(n: u8) -> Self {
        SpaceIndex { x: [n, 0], ..Default::default() }
    }

    pub fn z(n: u8) -> Self {
        SpaceIndex { z: n, ..Default::default() }
    }

    pub fn total(&self) -> usize {
        self.x[0] as usize + self.x[1] as usize + self.z as usize
    }

    pub fn vars(&self) -> impl Iterator<Item = (Var, u8)> {
        [(Var::X(0), self.x[0]), (Var::X(1), self.x[1]), (Var::Z, self.z)]
            .into_iter()
            .filter(|(_, c)| *c > 0)
    }
}

/// A symbol of declared order `m` and type `(ρ, δ)` with exact derivative
/// evaluators up to `deriv_budget`.
#[derive(Debug, Clone)]
pub struct GeneralizedSymbol {
    pub expr: Expr,
    pub order: f64,
    pub rho: f64,
    pub delta: f64,
    /// Lateral space dimensions the quantization acts in.
    pub nx: u8,
    pub deriv_budget: u8,
}

pub const DEFAULT_DERIV_BUDGET: u8 = 12;

/// Result of a derivative evaluation; `exact` is false only for the
/// finite-difference oracle path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivEval {
    pub value: Complex64,
    pub exact: bool,
}

impl GeneralizedSymbol {
    pub fn new(expr: Expr, order: f64) -> Self {
        GeneralizedSymbol {
            expr,
            order,
            rho: 1.0,
            delta: 0.0,
            nx: 1,
            deriv_budget: DEFAULT_DERIV_BUDGET,
        }
    }

    pub fn with_type(mut self, rho: f64, delta: f64) -> Self {
        self.rho = rho;
        self.delta = delta;
        self
    }

    pub fn with_budget(mut self, budget: u8) -> Self {
        self.deriv_budget = budget;
        self
    }

    pub fn constant(c: f64) -> Self {
        GeneralizedSymbol::new(Expr::constant(c), 0.0)
    }

    /// Evaluate at a phase point for a given ε.
    pub fn eval(&self, p: &PhasePoint, eps: f64) -> Result<Complex64> {
        self.expr.validate_eps(eps)?;
        Ok(self.expr.eval(p, eps))
    }

    fn budget_check(&self, total: usize) -> Result<()> {
        if total > self.deriv_budget as usize {
            return Err(Error::BudgetExceeded {
                requested: total,
                budget: self.deriv_budget as usize,
            });
        }
        Ok(())
    }

    /// Structural partial derivative ∂_ξ^α ∂_x^β; derivatives commute by
    /// construction. The declared order drops by ρ|α| - δ|β|.
    pub fn deriv(&self, alpha: FreqIndex, beta: SpaceIndex) -> Result<GeneralizedSymbol> {
        self.budget_check(alpha.total() + beta.total())?;
        let mut e = self.expr.clone();
        for (v, c) in alpha.vars().chain(beta.vars()) {
            for _ in 0..c {
                e = e.deriv(v);
            }
        }
        Ok(GeneralizedSymbol {
            expr: e,
            order: self.order - self.rho * alpha.total() as f64
                + self.delta * beta.total() as f64,
            rho: self.rho,
            delta: self.delta,
            nx: self.nx,
            deriv_budget: self.deriv_budget - (alpha.total() + beta.total()) as u8,
        })
    }

    /// Evaluate ∂_ξ^α ∂_x^β s at a point (always the exact structural path
    /// for symbols of the closed expression set).
    pub fn eval_with_derivs(
        &self,
        alpha: FreqIndex,
        beta: SpaceIndex,
        p: &PhasePoint,
        eps: f64,
    ) -> Result<DerivEval> {
        let d = self.deriv(alpha, beta)?;
        Ok(DerivEval { value: d.eval(p, eps)?, exact: true })
    }

    /// Sampled symbol seminorm: max over the box of
    /// |∂_ξ^α ∂_x^β s| ⟨(τ,ξ)⟩^{-m+ρ|α|-δ|β|}.
    pub fn seminorm(
        &self,
        alpha: FreqIndex,
        beta: SpaceIndex,
        sample_box: &SampleBox,
        eps: f64,
    ) -> Result<SeminormReport> {
        sample_box.validate()?;
        let d = self.deriv(alpha, beta)?;
        d.expr.validate_eps(eps)?;
        let w = -self.order + self.rho * alpha.total() as f64 - self.delta * beta.total() as f64;
        let mut best = f64::NEG_INFINITY;
        let mut argmax = PhasePoint::default();
        let mut seen = false;
        for p in sample_box.points() {
            let v = d.expr.eval(&p, eps).norm() * p.freq_bracket().powf(w);
            if v.is_finite() && v > best {
                best = v;
                argmax = p;
                seen = true;
            } else if v.is_finite() {
                seen = true;
            }
        }
        if !seen {
            return Err(Error::InsufficientData(
                "seminorm box contains no admissible points".into(),
            ));
        }
        Ok(SeminormReport { value: best.max(0.0), sample_box: sample_box.clone(), argmax, eps })
    }

    /// Fit the ⟨ξ⟩-growth exponent of |∂_ξ^α ∂_x^β s| along rays, per ε, and
    /// classify the fitted prefactor net.
    pub fn fit_order(
        &self,
        alpha: FreqIndex,
        beta: SpaceIndex,
        rays: &[Ray],
        magnitudes: &[f64],
        eps: &[f64],
    ) -> Result<OrderFit> {
        if rays.is_empty() || eps.is_empty() {
            return Err(invalid("fit_order needs at least one ray and one eps"));
        }
        let mmin = magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
        let mmax = magnitudes.iter().cloned().fold(0.0f64, f64::max);
        if !(mmin > 0.0) || mmax / mmin < 8.0 - 1e-9 || magnitudes.len() < 4 {
            return Err(Error::InsufficientData(
                "magnitudes must span at least 3 dyadic octaves".into(),
            ));
        }
        let d = self.deriv(alpha, beta)?;
        for &e in eps {
            d.expr.validate_eps(e)?;
        }
        let mut per_eps_slope = Vec::with_capacity(eps.len());
        let mut prefactors = Vec::with_capacity(eps.len());
        let mut residual = 0.0f64;
        let mut global_max = 0.0f64;
        let mut fits = 0usize;
        for &e in eps {
            let mut vals = Vec::with_capacity(magnitudes.len());
            for &r in magnitudes {
                let mut m = 0.0f64;
                for ray in rays {
                    let p = ray.at(r);
                    let v = d.expr.eval(&p, e).norm();
                    if v.is_finite() {
                        m = m.max(v);
                    }
                }
                vals.push(m);
            }
            global_max = global_max.max(vals.iter().cloned().fold(0.0, f64::max));
            match crate::num::loglog_fit(magnitudes, &vals, 1e-280) {
                Some(f) => {
                    per_eps_slope.push(f.slope);
                    prefactors.push(f.intercept.exp());
                    residual = residual.max(f.residual_rms);
                    fits += 1;
                }
                None => {
                    per_eps_slope.push(f64::NEG_INFINITY);
                    prefactors.push(0.0);
                }
            }
        }
        if fits == 0 || global_max < 1e-250 {
            return Ok(OrderFit {
                slope: f64::NEG_INFINITY,
                slope_mean: f64::NEG_INFINITY,
                per_eps_slope,
                residual_rms: 0.0,
                prefactor: None,
                prefactor_class: NetClass::Negligible,
                identically_zero: true,
            });
        }
        let finite: Vec<f64> =
            per_eps_slope.iter().cloned().filter(|s| s.is_finite()).collect();
        let slope = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slope_mean = finite.iter().sum::<f64>() / finite.len() as f64;
        let (prefactor, prefactor_class) = match EpsGrid::new(eps.into()) {
            Ok(grid) => match EpsNet::new(grid, prefactors) {
                Ok(net) => {
                    let class = classify_net(&net).map(|c| c.class).unwrap_or(NetClass::Unclassified);
                    (Some(net), class)
                }
                Err(_) => (None, NetClass::Unclassified),
            },
            Err(_) => (None, NetClass::Unclassified),
        };
        Ok(OrderFit {
            slope,
            slope_mean,
            per_eps_slope,
            residual_rms: residual,
            prefactor,
            prefactor_class,
            identically_zero: false,
        })
    }

    /// Generalized point value: the net ε ↦ s(base, ζ_ε).
    pub fn point_value(&self, p: &GeneralizedPoint) -> Result<PointValue> {
        if p.tau.class == NetClass::Unclassified || p.xi.class == NetClass::Unclassified {
            return Err(invalid("generalized point carries unclassified frequency nets"));
        }
        let eps = p.tau.grid.values().to_vec();
        let mut values = Vec::with_capacity(eps.len());
        for (i, &e) in eps.iter().enumerate() {
            self.expr.validate_eps(e)?;
            let pt = PhasePoint::new(p.x, p.z, p.tau.values[i], p.xi.values[i]);
            values.push(self.expr.eval(&pt, e));
        }
        let grid = p.tau.grid.clone();
        let modulus = EpsNet::new(grid.clone(), values.iter().map(|v| v.norm()).collect())?;
        let class = classify_net(&modulus)?.class;
        Ok(PointValue { grid, values, class })
    }

    /// Multiply by a smooth radial cutoff vanishing near the frequency
    /// origin and ≡ 1 for |(τ,ξ)| ≥ `outer`.
    pub fn excise_origin(&self, inner: f64, outer: f64) -> Result<GeneralizedSymbol> {
        if !(0.0 < inner && inner < outer && outer <= 1.0) {
            return Err(invalid("excision radii must satisfy 0 < inner < outer <= 1"));
        }
        let cut = Expr::profile(ProfileKind::StepUp(inner, outer), Expr::freq_norm_full());
        Ok(GeneralizedSymbol {
            expr: Expr::mul2(cut, self.expr.clone()),
            ..self.clone()
        })
    }
}

/// Finite-difference derivative oracle: 4th-order central differences with
/// step h = 1e-3·(1+|coordinate|) and one Richardson extrapolation. Kept
/// independent of the structural path; results are flagged inexact.
pub fn fd_deriv(expr: &Expr, v: Var, p: &PhasePoint, eps: f64) -> DerivEval {
    let x0 = p.coord(v);
    let h = 1e-3 * (1.0 + x0.abs());
    let d = |h: f64| {
        let f = |t: f64| expr.eval(&p.with_coord(v, t), eps);
        (-f(x0 + 2.0 * h) + f(x0 + h) * 8.0 - f(x0 - h) * 8.0 + f(x0 - 2.0 * h)) / (12.0 * h)
    };
    let d1 = d(h);
    let d2 = d(h / 2.0);
    DerivEval { value: (d2 * 16.0 - d1) / 15.0, exact: false }
}

/// Seminorm sample outcome; the box is recorded so reports stay honest about
/// where the supremum was sampled.
#[derive(Debug, Clone)]
pub struct SeminormReport {
    pub value: f64,
    pub sample_box: SampleBox,
    pub argmax: PhasePoint,
    pub eps: f64,
}

/// Order-fit outcome across rays and ε.
#[derive(Debug, Clone)]
pub struct OrderFit {
    /// Largest per-ε slope (the bound that order statements must satisfy).
    pub slope: f64,
    pub slope_mean: f64,
    pub per_eps_slope: Vec<f64>,
    pub residual_rms: f64,
    pub prefactor: Option<EpsNet>,
    pub prefactor_class: NetClass,
    pub identically_zero: bool,
}

/// A probing ray in phase space: fixed base point, frequency direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub x: f64,
    pub z: f64,
    pub dir_tau: f64,
    pub dir_xi: f64,
}

impl Ray {
    pub fn xi_only(x: f64, z: f64) -> Self {
        Ray { x, z, dir_tau: 0.0, dir_xi: 1.0 }
    }

    pub fn at(&self, r: f64) -> PhasePoint {
        PhasePoint::new(self.x, self.z, r * self.dir_tau, r * self.dir_xi)
    }
}

/// One box axis: either a fixed value or a uniform range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl AxisRange {
    pub fn fixed(v: f64) -> Self {
        AxisRange { lo: v, hi: v, count: 1 }
    }

    pub fn span(lo: f64, hi: f64, count: usize) -> Self {
        AxisRange { lo, hi, count }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(invalid("axis range must be finite and ordered"));
        }
        let fixed = self.lo == self.hi && self.count == 1;
        if !fixed && self.count < 8 {
            return Err(invalid("sampled axes need at least 8 points"));
        }
        Ok(())
    }

    fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return alloc::vec![self.lo];
        }
        (0..self.count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// Sampling box in (x, z, τ, ξ) with an optional conic constraint.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub x: AxisRange,
    pub z: AxisRange,
    pub tau: AxisRange,
    pub xi: AxisRange,
    pub constraint: Option<PhaseRegion>,
}

impl SampleBox {
    pub fn freq_only(tau: AxisRange, xi: AxisRange) -> Self {
        SampleBox {
            x: AxisRange::fixed(0.0),
            z: AxisRange::fixed(0.0),
            tau,
            xi,
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, region: PhaseRegion) -> Self {
        self.constraint = Some(region);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        self.z.validate()?;
        self.tau.validate()?;
        self.xi.validate()
    }

    /// All box points passing the conic constraint.
    pub fn points(&self) -> Vec<PhasePoint> {
        let mut out = Vec::new();
        for &x in &self.x.values() {
            for &z in &self.z.values() {
                for &tau in &self.tau.values() {
                    for &xi in &self.xi.values() {
                        let p = PhasePoint::new(x, z, tau, xi);
                        if let Some(r) = &self.constraint {
                            if !r.contains(&p) {
                                continue;
                            }
                        }
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Declared membership of a generalized frequency point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// Γ_M: ε^{-N}-bounded frequency nets.
    Moderate,
    /// Γ_{M,lsc}: logarithmic-slow-scale bounded frequency nets.
    LogSlowScale,
}

/// A generalized phase-space point: classical base, net-valued frequencies.
#[derive(Debug, Clone)]
pub struct GeneralizedPoint {
    pub x: f64,
    pub z: f64,
    pub tau: EpsNet,
    pub xi: EpsNet,
    pub cone: ConeKind,
}

impl GeneralizedPoint {
    pub fn new(x: f64, z: f64, mut tau: EpsNet, mut xi: EpsNet, cone: ConeKind) -> Result<Self> {
        if tau.grid != xi.grid {
            return Err(invalid("frequency nets must share one eps grid"));
        }
        tau.classify()?;
        xi.classify()?;
        if cone == ConeKind::LogSlowScale {
            for net in [&tau, &xi] {
                let abs = EpsNet::new(
                    net.grid.clone(),
                    net.values.iter().map(|v| v.abs().max(1e-30)).collect(),
                )?;
                let c = classify_net(&abs)?;
                if !matches!(c.class, NetClass::Lsc | NetClass::Negligible) {
                    return Err(invalid(format!(
                        "frequency net grows too fast for the lsc cone (class {})",
                        c.class.as_str()
                    )));
                }
            }
        }
        Ok(GeneralizedPoint { x, z, tau, xi, cone })
    }
}

/// The net of symbol values along a generalized point, with the growth class
/// of its modulus.
#[derive(Debug, Clone)]
pub struct PointValue {
    pub grid: EpsGrid,
    pub values: Vec<Complex64>,
    pub class: NetClass,
}

impl PointValue {
    /// Classify the modulus of the difference of two point-value nets
    /// (the §-equivalence check: negligible differences stay negligible).
    pub fn difference_class(&self, other: &PointValue) -> Result<NetClass> {
        if self.grid != other.grid {
            return Err(invalid("point values live on different eps grids"));
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .collect();
        let net = EpsNet::new(self.grid.clone(), diff)?;
        Ok(classify_net(&net)?.class)
    }
}

/// Pooled fit helper: least squares of log(y) against log(x).
pub fn order_slope(mags: &[f64], vals: &[f64]) -> Option<LineFit> {
    crate::num::loglog_fit(mags, vals, 1e-280)
}

/// Convenience dyadic magnitudes 2^lo .. 2^hi.
pub fn dyadic_magnitudes(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|k| (1u64 << k) as f64).collect()
}
