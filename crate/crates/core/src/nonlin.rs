//! Concave term `f`, convex term `g`, the extension `F` and the regularized
//! reaction `lam a (s + eps)^(q-1) F(s) + b g(s)`.
//!
//! Both families are written as a power times a shape factor,
//! `f = s^q h(s)` and `g = s^p k(s)`, so that `F(s) = s h(s)` for `s >= 0`
//! never needs a fractional power.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FShape {
    /// `1 / (1 + s^r)`
    InvOnePlusSr { r: f64 },
    /// `exp(-s)`
    ExpNeg,
    /// `sin(1/s) + 2`; has no limit at 0, kept as a counterexample fixture.
    SinInvPlusTwo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FFamily {
    PurePower { q: f64 },
    PowerTimesH { q: f64, h: FShape },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GShape {
    /// `1 - exp(-s)`
    OneMinusExpNeg,
    /// `arctan(s + 1)`
    ArctanShift,
    /// `s^r / (1 + s^r)`
    RationalSr { r: f64 },
    /// `(k + s) / (1 + s)`
    KpsOver1ps { k: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GFamily {
    PurePower { p: f64 },
    PowerTimesH { p: f64, h: GShape },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinSpec {
    #[serde(default = "default_f")]
    pub f: FFamily,
    #[serde(default = "default_g")]
    pub g: GFamily,
}

fn default_f() -> FFamily {
    FFamily::PurePower { q: 0.5 }
}

fn default_g() -> GFamily {
    GFamily::PurePower { p: 2.0 }
}

impl NonlinSpec {
    pub fn new(f: FFamily, g: GFamily) -> Self {
        Self { f, g }
    }

    /// `f = s^q`, `g = s^p`.
    pub fn prototype(q: f64, p: f64) -> Self {
        Self { f: FFamily::PurePower { q }, g: GFamily::PurePower { p } }
    }

    /// Same families with the concave exponent replaced.
    pub fn with_q(&self, q: f64) -> Self {
        let f = match &self.f {
            FFamily::PurePower { .. } => FFamily::PurePower { q },
            FFamily::PowerTimesH { h, .. } => FFamily::PowerTimesH { q, h: h.clone() },
        };
        Self { f, g: self.g.clone() }
    }

    pub fn check_params(&self) -> Result<()> {
        let q = self.q();
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::config(format!("q = {q} must lie in (0, 1)")));
        }
        let p = self.p();
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::config(format!("p = {p} must exceed 1")));
        }
        if let FFamily::PowerTimesH { h: FShape::InvOnePlusSr { r }, .. } = self.f {
            if !(r >= 0.0) {
                return Err(Error::config(format!("r = {r} must be nonnegative")));
            }
        }
        match self.g {
            GFamily::PowerTimesH { h: GShape::RationalSr { r }, .. } if !(r >= 0.0) => {
                Err(Error::config(format!("r = {r} must be nonnegative")))
            }
            GFamily::PowerTimesH { h: GShape::KpsOver1ps { k }, .. } if !(k > 0.0) => {
                Err(Error::config(format!("k = {k} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn q(&self) -> f64 {
        match self.f {
            FFamily::PurePower { q } | FFamily::PowerTimesH { q, .. } => q,
        }
    }

    pub fn p(&self) -> f64 {
        match self.g {
            GFamily::PurePower { p } | GFamily::PowerTimesH { p, .. } => p,
        }
    }

    /// `h(0)`; the oscillatory shape has none and reports its mean value 2.
    fn h0(&self) -> f64 {
        match &self.f {
            FFamily::PurePower { .. } => 1.0,
            FFamily::PowerTimesH { h, .. } => match h {
                FShape::InvOnePlusSr { r } if *r == 0.0 => 0.5,
                FShape::InvOnePlusSr { .. } | FShape::ExpNeg => 1.0,
                FShape::SinInvPlusTwo => 2.0,
            },
        }
    }

    /// `lim s^(1-q) f'(s)` as declared by the family.
    pub fn f0(&self) -> f64 {
        self.q() * self.h0()
    }

    /// Decay exponent `sigma` with `g(s) ~ g0 s^sigma` at 0.
    pub fn sigma(&self) -> f64 {
        let p = self.p();
        match &self.g {
            GFamily::PurePower { .. } => p,
            GFamily::PowerTimesH { h, .. } => match h {
                GShape::OneMinusExpNeg => p + 1.0,
                GShape::ArctanShift | GShape::KpsOver1ps { .. } => p,
                GShape::RationalSr { r } => p + r,
            },
        }
    }

    pub fn g0(&self) -> f64 {
        match &self.g {
            GFamily::PurePower { .. } => 1.0,
            GFamily::PowerTimesH { h, .. } => match h {
                GShape::OneMinusExpNeg => 1.0,
                GShape::ArctanShift => std::f64::consts::FRAC_PI_4,
                GShape::RationalSr { r } if *r == 0.0 => 0.5,
                GShape::RationalSr { .. } => 1.0,
                GShape::KpsOver1ps { k } => *k,
            },
        }
    }

    /// `(h(s), s h'(s))` for `s > 0`.
    pub fn h_parts(&self, s: f64) -> (f64, f64) {
        match &self.f {
            FFamily::PurePower { .. } => (1.0, 0.0),
            FFamily::PowerTimesH { h, .. } => match h {
                FShape::InvOnePlusSr { r } => {
                    let sr = s.powf(*r);
                    let d = 1.0 + sr;
                    (1.0 / d, -r * sr / (d * d))
                }
                FShape::ExpNeg => {
                    let e = (-s).exp();
                    (e, -s * e)
                }
                FShape::SinInvPlusTwo => {
                    let t = 1.0 / s;
                    (t.sin() + 2.0, -t.cos() * t)
                }
            },
        }
    }

    /// `ln h(s)` for `s > 0`, finite wherever `h > 0` even if `h` underflows.
    pub fn ln_h(&self, s: f64) -> f64 {
        match &self.f {
            FFamily::PurePower { .. } => 0.0,
            FFamily::PowerTimesH { h, .. } => match h {
                FShape::InvOnePlusSr { r } => -s.powf(*r).ln_1p(),
                FShape::ExpNeg => -s,
                FShape::SinInvPlusTwo => ((1.0 / s).sin() + 2.0).ln(),
            },
        }
    }

    /// `(k(s), s k'(s))` for `s > 0`.
    pub fn k_parts(&self, s: f64) -> (f64, f64) {
        match &self.g {
            GFamily::PurePower { .. } => (1.0, 0.0),
            GFamily::PowerTimesH { h, .. } => match h {
                GShape::OneMinusExpNeg => (-(-s).exp_m1(), s * (-s).exp()),
                GShape::ArctanShift => {
                    let t = s + 1.0;
                    (t.atan(), s / (1.0 + t * t))
                }
                GShape::RationalSr { r } => {
                    let sr = s.powf(*r);
                    let d = 1.0 + sr;
                    (sr / d, r * sr / (d * d))
                }
                GShape::KpsOver1ps { k } => ((k + s) / (1.0 + s), s * (1.0 - k) / ((1.0 + s) * (1.0 + s))),
            },
        }
    }

    /// `f(s)` for `s >= 0`.
    pub fn f(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        s.powf(self.q()) * self.h_parts(s).0
    }

    /// `f'(s)` for `s > 0`.
    pub fn df(&self, s: f64) -> f64 {
        let (h, sdh) = self.h_parts(s);
        s.powf(self.q() - 1.0) * (self.q() * h + sdh)
    }

    /// The extension `F`: `s^(1-q) f(s)` for `s >= 0`, `(f0/q) s` below.
    pub fn big_f(&self, s: f64) -> f64 {
        if s > 0.0 {
            s * self.h_parts(s).0
        } else {
            self.h0() * s
        }
    }

    pub fn big_f_prime(&self, s: f64) -> f64 {
        if s > 0.0 {
            let (h, sdh) = self.h_parts(s);
            h + sdh
        } else {
            self.h0()
        }
    }

    /// `g'(0)`, zero for every admissible family since `sigma > 1`.
    pub fn g_prime_zero(&self) -> f64 {
        if self.sigma() > 1.0 {
            0.0
        } else {
            self.g0()
        }
    }

    /// `g`, extended linearly below 0.
    pub fn g(&self, s: f64) -> f64 {
        if s > 0.0 {
            s.powf(self.p()) * self.k_parts(s).0
        } else {
            self.g_prime_zero() * s
        }
    }

    pub fn dg(&self, s: f64) -> f64 {
        if s > 0.0 {
            let (k, sdk) = self.k_parts(s);
            s.powf(self.p() - 1.0) * (self.p() * k + sdk)
        } else {
            self.g_prime_zero()
        }
    }
}

/// The regularized concave part at a fixed `eps`.
#[derive(Clone, Copy, Debug)]
pub struct RegularizedTerm<'a> {
    pub eps: f64,
    pub spec: &'a NonlinSpec,
}

impl<'a> RegularizedTerm<'a> {
    pub fn new(spec: &'a NonlinSpec, eps: f64) -> Self {
        Self { eps, spec }
    }

    /// Lower limit of the admissible states.
    pub fn guard(&self) -> f64 {
        -0.5 * self.eps
    }

    fn check(&self, s: f64, strict_at_zero: bool) -> Result<()> {
        let ok = if self.eps > 0.0 {
            s > self.guard()
        } else if strict_at_zero {
            s > 0.0
        } else {
            s >= 0.0
        };
        if ok && s.is_finite() {
            Ok(())
        } else {
            Err(Error::Guard { s, bound: self.guard() })
        }
    }

    /// `(s + eps)^(q-1) F(s)`.
    pub fn value(&self, s: f64) -> Result<f64> {
        self.check(s, false)?;
        Ok(self.value_unchecked(s))
    }

    #[inline]
    pub fn value_unchecked(&self, s: f64) -> f64 {
        let big_f = self.spec.big_f(s);
        if big_f == 0.0 {
            return 0.0;
        }
        (s + self.eps).powf(self.spec.q() - 1.0) * big_f
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        self.check(s, true)?;
        Ok(self.derivative_unchecked(s))
    }

    #[inline]
    pub fn derivative_unchecked(&self, s: f64) -> f64 {
        let q = self.spec.q();
        let t = s + self.eps;
        let pw = t.powf(q - 1.0);
        (q - 1.0) * pw / t * self.spec.big_f(s) + pw * self.spec.big_f_prime(s)
    }

    /// Value and derivative together, without the guard check.
    #[inline]
    pub fn both_unchecked(&self, s: f64) -> (f64, f64) {
        let q = self.spec.q();
        let t = s + self.eps;
        let pw = t.powf(q - 1.0);
        let big_f = self.spec.big_f(s);
        let v = if big_f == 0.0 { 0.0 } else { pw * big_f };
        (v, (q - 1.0) * pw / t * big_f + pw * self.spec.big_f_prime(s))
    }
}

pub fn eval_f_ext(spec: &NonlinSpec, s: f64) -> f64 {
    spec.big_f(s)
}

/// `lam a (s + eps)^(q-1) F(s) + b g(s)`.
pub fn eval_reaction(term: &RegularizedTerm, s: f64, lam: f64, a_val: f64, b_val: f64) -> Result<f64> {
    Ok(lam * a_val * term.value(s)? + b_val * term.spec.g(s))
}

/// `d/ds` of [`eval_reaction`].
pub fn eval_reaction_jacobian(term: &RegularizedTerm, s: f64, lam: f64, a_val: f64, b_val: f64) -> Result<f64> {
    Ok(lam * a_val * term.derivative(s)? + b_val * term.spec.dg(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitEstimates {
    pub f0_est: f64,
    pub f0_converged: bool,
    pub sigma_est: f64,
    pub g0_est: f64,
    pub g_converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub estimates: LimitEstimates,
}

impl HypothesisReport {
    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| c.verdict == Verdict::Fail).map(|c| c.name).collect()
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.verdict)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.verdict == Verdict::Pass)
    }
}

pub const F_POSITIVE: &str = "f_positive";
pub const F_SUPERLINEAR_AT_ZERO: &str = "f_superlinear_at_zero";
pub const F_SUBLINEAR_AT_INFINITY: &str = "f_sublinear_at_infinity";
pub const F_POWER_LIMIT: &str = "f_power_limit";
pub const F_SLOPE_CONDITION: &str = "f_slope_condition";
pub const F_STRONG_CONCAVITY: &str = "f_strong_concavity";
pub const G_SUBLINEAR_AT_ZERO: &str = "g_sublinear_at_zero";
pub const G_SUPERLINEAR_AT_INFINITY: &str = "g_superlinear_at_infinity";
pub const G_STRONG_CONVEXITY: &str = "g_strong_convexity";
pub const G_POWER_GROWTH: &str = "g_power_growth";
pub const G_SMALL_POWER: &str = "g_small_power";
pub const G_SUBCRITICAL_EXPONENT: &str = "g_subcritical_exponent";
pub const G_SIGMA_EXPONENT: &str = "g_sigma_exponent";

const BAND: f64 = 1e-12;
const LIMIT_RTOL: f64 = 1e-6;

/// Dyadic ladder `2^k`, `k = -30..=30`, refined with `sub` geometric samples per octave.
fn ladder(sub: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for k in -30..=30 {
        let base = 2f64.powi(k);
        for j in 0..sub.max(1) {
            if k == 30 && j > 0 {
                break;
            }
            out.push(base * 2f64.powf(j as f64 / sub.max(1) as f64));
        }
    }
    out
}

/// Extrapolates the limit of a sequence with Aitken's delta-squared
/// acceleration; converged when the last three accelerated values agree.
pub fn extrapolate_limit(v: &[f64]) -> (f64, bool) {
    if v.len() < 3 {
        return (*v.last().unwrap_or(&f64::NAN), false);
    }
    let acc: Vec<f64> = v
        .windows(3)
        .map(|w| {
            let d1 = w[1] - w[0];
            let d2 = w[2] - w[1];
            let den = d2 - d1;
            if den == 0.0 || !den.is_finite() || (d2 * d2 / den).abs() > (w[2] - w[0]).abs().max(1e-300) * 1e3 {
                w[2]
            } else {
                w[2] - d2 * d2 / den
            }
        })
        .collect();
    let n = acc.len();
    let est = acc[n - 1];
    let scale = est.abs().max(1e-300);
    let converged = n >= 3
        && est.is_finite()
        && acc[n - 3..].windows(2).all(|w| (w[1] - w[0]).abs() <= LIMIT_RTOL * scale)
        && v[v.len() - 3..].windows(2).all(|w| (w[1] - w[0]).abs() <= 1e3 * LIMIT_RTOL * scale);
    (est, converged)
}

pub fn estimate_f0_g0(spec: &NonlinSpec) -> LimitEstimates {
    let q = spec.q();
    let ks: Vec<i32> = (10..=40).collect();
    let hv: Vec<f64> = ks.iter().map(|&k| {
        let s = 2f64.powi(-k);
        spec.f(s) / s.powf(q)
    }).collect();
    let (lim, f0_conv) = extrapolate_limit(&hv);
    let sig: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let s = 2f64.powi(-k);
            (spec.g(s) / spec.g(0.5 * s)).log2()
        })
        .collect();
    let (sigma_est, sig_conv) = extrapolate_limit(&sig);
    let gv: Vec<f64> = ks.iter().map(|&k| {
        let s = 2f64.powi(-k);
        spec.g(s) / s.powf(sigma_est)
    }).collect();
    let (g0_est, g0_conv) = extrapolate_limit(&gv);
    LimitEstimates {
        f0_est: q * lim,
        f0_converged: f0_conv && lim > 0.0,
        sigma_est,
        g0_est,
        g_converged: sig_conv && g0_conv,
    }
}

fn check(name: &'static str, verdict: Verdict, detail: impl Into<String>) -> HypothesisCheck {
    HypothesisCheck { name, verdict, detail: detail.into() }
}

fn pass_if(name: &'static str, ok: bool, detail: impl Into<String>) -> HypothesisCheck {
    check(name, if ok { Verdict::Pass } else { Verdict::Fail }, detail)
}

/// Minima of `vals` over index windows.
fn window_min(vals: &[f64], r: std::ops::RangeInclusive<usize>) -> f64 {
    vals[r].iter().copied().fold(f64::INFINITY, f64::min)
}

fn window_max(vals: &[f64], r: std::ops::RangeInclusive<usize>) -> f64 {
    vals[r].iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Samples every hypothesis on `f` and `g` on a dyadic ladder.
pub fn validate_hypotheses(spec: &NonlinSpec, n_dim: usize) -> HypothesisReport {
    let mut checks = Vec::new();
    let pure_f = matches!(spec.f, FFamily::PurePower { .. });
    let fine = ladder(16);
    let dyadic = |k: i32| 2f64.powi(k);

    // f > 0 away from 0
    let ln_f = |s: f64| spec.q() * s.ln() + spec.ln_h(s);
    let bad = fine.iter().find(|&&s| !ln_f(s).is_finite());
    checks.push(pass_if(
        F_POSITIVE,
        spec.f(0.0) == 0.0 && bad.is_none(),
        bad.map_or("f(0) = 0 and f > 0 on the ladder".into(), |s| format!("f({s:e}) <= 0")),
    ));

    // f(s)/s -> infinity at 0: windowed minima grow towards 0
    let fs_small: Vec<f64> = (0..=30).map(|k| {
        let s = dyadic(-k);
        spec.f(s) / s
    }).collect();
    let (w1, w2, w3) = (window_min(&fs_small, 10..=14), window_min(&fs_small, 20..=24), window_min(&fs_small, 26..=30));
    checks.push(pass_if(F_SUPERLINEAR_AT_ZERO, w1 < w2 && w2 < w3, format!("windowed min f/s: {w1:.3e} < {w2:.3e} < {w3:.3e}")));

    // f(s)/s -> 0 at infinity, compared in log space so fast decay cannot underflow
    let fs_large: Vec<f64> = (0..=30).map(|k| {
        let s = dyadic(k);
        ln_f(s) - s.ln()
    }).collect();
    let (m1, m2, m3) = (window_max(&fs_large, 10..=14), window_max(&fs_large, 20..=24), window_max(&fs_large, 26..=30));
    checks.push(pass_if(
        F_SUBLINEAR_AT_INFINITY,
        // decreasing windows, decaying at least like s^(-1/100) between 2^12 and 2^28
        m1 > m2 && m2 > m3 && (m1 - m3) / (16.0 * std::f64::consts::LN_2) >= 0.01,
        format!("windowed max ln(f/s): {m1:.3e} > {m2:.3e} > {m3:.3e}"),
    ));

    let est = estimate_f0_g0(spec);
    checks.push(pass_if(
        F_POWER_LIMIT,
        est.f0_converged && est.f0_est.is_finite() && est.f0_est > 0.0,
        format!("f/s^q -> f0/q with f0 ~ {:.9} (converged: {})", est.f0_est, est.f0_converged),
    ));

    // slope condition: the negative part of f' stays bounded as s -> 0
    let neg_part = |lo: i32, hi: i32| -> f64 {
        let mut worst: f64 = 0.0;
        for k in lo..=hi {
            for j in 0..64 {
                let s = dyadic(-k) * (1.0 + j as f64 / 64.0);
                worst = worst.max(-spec.df(s));
            }
        }
        worst
    };
    let (near, far) = (neg_part(20, 30), neg_part(0, 5));
    checks.push(pass_if(
        F_SLOPE_CONDITION,
        near.is_finite() && near <= 10.0 * far + 1e-9,
        format!("max negative part of f' near 0: {near:.3e}, on [1/32, 1]: {far:.3e}"),
    ));

    // (f/s^q)' <= 0, i.e. s h'/h <= 0
    let concavity = if pure_f {
        check(F_STRONG_CONCAVITY, Verdict::Pass, "f/s^q is constant")
    } else {
        let worst = fine
            .iter()
            .map(|&s| {
                let (h, sdh) = spec.h_parts(s);
                sdh / h
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let v = if worst > BAND {
            Verdict::Fail
        } else if worst > 0.0 {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        check(F_STRONG_CONCAVITY, v, format!("max of s h'/h on ladder: {worst:.3e}"))
    };
    checks.push(concavity);

    // g(s)/s -> 0 at 0
    let gs_small: Vec<f64> = (0..=30).map(|k| {
        let s = dyadic(-k);
        spec.g(s) / s
    }).collect();
    let nonincreasing = gs_small.windows(2).all(|w| w[1] <= w[0]);
    checks.push(pass_if(
        G_SUBLINEAR_AT_ZERO,
        spec.g(0.0) == 0.0 && nonincreasing && gs_small[30] < 0.5 * gs_small[10],
        format!("g(s)/s at 2^-10: {:.3e}, at 2^-30: {:.3e}", gs_small[10], gs_small[30]),
    ));

    let gs_large: Vec<f64> = (0..=30).map(|k| {
        let s = dyadic(k);
        spec.g(s) / s
    }).collect();
    checks.push(pass_if(
        G_SUPERLINEAR_AT_INFINITY,
        gs_large.windows(2).skip(10).all(|w| w[1] > w[0]) && gs_large[30] > 2.0 * gs_large[10],
        format!("g(s)/s at 2^10: {:.3e}, at 2^30: {:.3e}", gs_large[10], gs_large[30]),
    ));

    // (g/s)' > 0, i.e. (p - 1) + s k'/k > 0
    let p = spec.p();
    let worst = fine
        .iter()
        .map(|&s| {
            let (k, sdk) = spec.k_parts(s);
            (p - 1.0) + sdk / k
        })
        .fold(f64::INFINITY, f64::min);
    let v = if worst > BAND {
        Verdict::Pass
    } else if worst >= -BAND {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    checks.push(check(G_STRONG_CONVEXITY, v, format!("min of d ln(g/s)/d ln s on ladder: {worst:.6e}")));

    let gp: Vec<f64> = (10..=40).map(|k| {
        let s = dyadic(k);
        spec.g(s) / s.powf(p)
    }).collect();
    let (lim_inf, conv) = extrapolate_limit(&gp);
    checks.push(pass_if(
        G_POWER_GROWTH,
        conv && lim_inf > 0.0 && lim_inf.is_finite(),
        format!("g/s^p -> {lim_inf:.9} at infinity (converged: {conv})"),
    ));

    let sig_ok = (est.sigma_est - spec.sigma()).abs() <= 1e-6 * spec.sigma();
    let g0_ok = (est.g0_est - spec.g0()).abs() <= 1e-6 * spec.g0();
    checks.push(pass_if(
        G_SMALL_POWER,
        est.g_converged && sig_ok && g0_ok && est.sigma_est > 1.0,
        format!(
            "sigma ~ {:.9} (declared {}), g0 ~ {:.9} (declared {})",
            est.sigma_est,
            spec.sigma(),
            est.g0_est,
            spec.g0()
        ),
    ));

    if n_dim > 2 {
        let nd = n_dim as f64;
        let crit = (nd + 2.0) / (nd - 2.0);
        checks.push(pass_if(G_SUBCRITICAL_EXPONENT, p < crit, format!("p = {p} against (N+2)/(N-2) = {crit}")));
        let sc = 2.0 * nd / (nd - 2.0);
        checks.push(pass_if(G_SIGMA_EXPONENT, spec.sigma() < sc, format!("sigma = {} against 2N/(N-2) = {sc}", spec.sigma())));
    }
    HypothesisReport { checks, estimates: est }
}
