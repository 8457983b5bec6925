//! Certificate pairs `(h, β)` built from explicit KL bounds and from
//! Lyapunov functions, and the sampled local ratio operator
//! `N_F^X(W) = sup_{x ∈ X, x ≠ 0} W(F(x)) / W(x)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sequence::{BridgeFunction, CertificatePair, ScalarFn, SeqError, DEFAULT_TOL};
use crate::system::{norm_sq, DiscreteSystem, InitialSet, ScalarFieldFn, State};

/// Accuracy of the bisection fallback for class-K inverses.
pub const BISECTION_TOL: f64 = 1e-12;

const ROUNDTRIP_REL_TOL: f64 = 1e-9;
const CLASS_K_GRID: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("not a class-K function ({name}): {reason}")]
    InvalidClassK { name: String, reason: String },

    #[error("{0}")]
    InvalidParameter(String),

    #[error("certificate bridge rejected: {0}")]
    Bridge(#[from] SeqError),

    #[error("W is not positive definite on the domain: W({point:?}) = {value}")]
    NotPositiveDefinite { point: State, value: f64 },

    #[error("Lyapunov decrease condition V(T(x)) <= ratio * V(x) fails at x = {point:?}: {lhs} > {rhs}")]
    DecreaseViolated { point: State, lhs: f64, rhs: f64 },

    #[error("lower class-K bound alpha_V(|x|) <= V(x) fails at x = {point:?}: {lhs} > {rhs}")]
    LowerBoundViolated { point: State, lhs: f64, rhs: f64 },

    #[error("stable domain is not invariant: T({point:?}) = {image:?} leaves the ball of squared radius {radius_sq}")]
    NotInvariant {
        point: State,
        image: State,
        radius_sq: f64,
    },

    #[error("initial point {point:?} lies outside the stable domain (squared radius {radius_sq})")]
    InitialOutsideDomain { point: State, radius_sq: f64 },

    #[error(
        "inverse of the lower bound alpha_V requested at {requested}, beyond its validated range [0, {range_sup}); \
         the lower bound must exceed sup V over the initial set somewhere"
    )]
    InverseOutOfRange { requested: f64, range_sup: f64 },
}

/// Strictly increasing continuous `α: [0, a) → R+` with `α(0) = 0`.
#[derive(Clone)]
pub struct ClassKFunction {
    forward: ScalarFn,
    inverse: ScalarFn,
    domain_sup: f64,
    range_sup: f64,
    description: String,
}

impl fmt::Debug for ClassKFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassKFunction")
            .field("description", &self.description)
            .field("domain_sup", &self.domain_sup)
            .field("range_sup", &self.range_sup)
            .finish()
    }
}

impl ClassKFunction {
    /// A class-K function with a caller-supplied inverse. `range_sup` is the
    /// supremum of the values it takes on `[0, domain_sup)`.
    pub fn new(
        forward: ScalarFn,
        inverse: ScalarFn,
        domain_sup: f64,
        range_sup: f64,
        description: impl Into<String>,
    ) -> Result<Self, CertificateError> {
        let k = Self {
            forward,
            inverse,
            domain_sup,
            range_sup,
            description: description.into(),
        };
        k.validate()?;
        Ok(k)
    }

    /// Class-K function whose inverse is computed by bisection on
    /// `[0, domain_sup]` (bracket grown by doubling when the domain is unbounded).
    pub fn with_bisection_inverse(
        forward: ScalarFn,
        domain_sup: f64,
        description: impl Into<String>,
    ) -> Result<Self, CertificateError> {
        let range_sup = if domain_sup.is_finite() {
            forward(domain_sup)
        } else {
            f64::INFINITY
        };
        let fwd = forward.clone();
        let inverse: ScalarFn = Arc::new(move |v| bisect_inverse(&*fwd, v, domain_sup));
        Self::new(forward, inverse, domain_sup, range_sup, description)
    }

    pub fn identity() -> Self {
        Self::unchecked(Arc::new(|s| s), Arc::new(|v| v), "identity")
    }

    /// `s ↦ s^p`, `p > 0`.
    pub fn power(p: f64) -> Result<Self, CertificateError> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(CertificateError::InvalidClassK {
                name: format!("power {p}"),
                reason: "exponent must be positive and finite".into(),
            });
        }
        if p == 2.0 {
            return Ok(Self::unchecked(Arc::new(|s| s * s), Arc::new(f64::sqrt), "s^2"));
        }
        if p == 0.5 {
            return Ok(Self::sqrt());
        }
        Ok(Self::unchecked(
            Arc::new(move |s| s.powf(p)),
            Arc::new(move |v| v.powf(1.0 / p)),
            format!("s^{p}"),
        ))
    }

    pub fn sqrt() -> Self {
        Self::unchecked(Arc::new(f64::sqrt), Arc::new(|v| v * v), "sqrt(s)")
    }

    /// `s ↦ c s`, `c > 0`.
    pub fn scale(c: f64) -> Result<Self, CertificateError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CertificateError::InvalidClassK {
                name: format!("scale {c}"),
                reason: "factor must be positive and finite".into(),
            });
        }
        Ok(Self::unchecked(
            Arc::new(move |s| c * s),
            Arc::new(move |v| v / c),
            format!("{c}*s"),
        ))
    }

    /// Applies `parts` left to right: `compose([f, g])(s) = g(f(s))`.
    pub fn compose(parts: &[ClassKFunction]) -> Result<Self, CertificateError> {
        if parts.is_empty() {
            return Ok(Self::identity());
        }
        let fwd: Vec<ScalarFn> = parts.iter().map(|p| p.forward.clone()).collect();
        let inv: Vec<ScalarFn> = parts.iter().rev().map(|p| p.inverse.clone()).collect();
        let description = parts
            .iter()
            .map(|p| p.description.as_str())
            .collect::<Vec<_>>()
            .join(" then ");
        let domain_sup = parts[0].domain_sup;
        let range_sup = parts
            .iter()
            .fold(domain_sup, |acc, p| if acc.is_finite() { (p.forward)(acc) } else { p.range_sup });
        Self::new(
            Arc::new(move |s| fwd.iter().fold(s, |acc, f| f(acc))),
            Arc::new(move |v| inv.iter().fold(v, |acc, f| f(acc))),
            domain_sup,
            range_sup,
            format!("({description})"),
        )
    }

    fn unchecked(forward: ScalarFn, inverse: ScalarFn, description: impl Into<String>) -> Self {
        Self {
            forward,
            inverse,
            domain_sup: f64::INFINITY,
            range_sup: f64::INFINITY,
            description: description.into(),
        }
    }

    fn invalid(&self, reason: String) -> CertificateError {
        CertificateError::InvalidClassK {
            name: self.description.clone(),
            reason,
        }
    }

    fn validate(&self) -> Result<(), CertificateError> {
        let at_zero = self.eval(0.0);
        if at_zero.abs() > 1e-15 {
            return Err(self.invalid(format!("value at zero is {at_zero}")));
        }
        let span = if self.domain_sup.is_finite() {
            self.domain_sup
        } else {
            10.0
        };
        let mut prev = at_zero;
        for i in 1..CLASS_K_GRID {
            let s = span * i as f64 / CLASS_K_GRID as f64;
            let v = self.eval(s);
            if !(v > prev) || !v.is_finite() {
                return Err(self.invalid(format!("not strictly increasing near s = {s}")));
            }
            let back = self.inverse(v);
            if (back - s).abs() > ROUNDTRIP_REL_TOL * s.max(1.0) {
                return Err(self.invalid(format!("inverse round trip at s = {s} gives {back}")));
            }
            prev = v;
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.forward)(s)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (self.inverse)(v)
    }

    /// Inverse restricted to the range `[0, range_sup)`.
    pub fn inverse_checked(&self, v: f64) -> Result<f64, CertificateError> {
        if !(v >= 0.0 && v < self.range_sup) {
            return Err(CertificateError::InverseOutOfRange {
                requested: v,
                range_sup: self.range_sup,
            });
        }
        Ok(self.inverse(v))
    }

    pub fn domain_sup(&self) -> f64 {
        self.domain_sup
    }

    pub fn range_sup(&self) -> f64 {
        self.range_sup
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

fn bisect_inverse(f: &(dyn Fn(f64) -> f64 + Send + Sync), v: f64, domain_sup: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let mut hi = if domain_sup.is_finite() {
        domain_sup
    } else {
        let mut hi = 1.0;
        let mut grow = 0;
        while f(hi) < v && grow < 2000 {
            hi *= 2.0;
            grow += 1;
        }
        hi
    };
    let mut lo = 0.0;
    for _ in 0..400 {
        if hi - lo <= BISECTION_TOL * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Named closed forms accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassKForm {
    Identity,
    Sqrt,
    Power(f64),
    Scale(f64),
    /// Applied left to right.
    Compose(Vec<ClassKForm>),
}

impl ClassKForm {
    pub fn build(&self) -> Result<ClassKFunction, CertificateError> {
        match self {
            ClassKForm::Identity => Ok(ClassKFunction::identity()),
            ClassKForm::Sqrt => Ok(ClassKFunction::sqrt()),
            ClassKForm::Power(p) => ClassKFunction::power(*p),
            ClassKForm::Scale(c) => ClassKFunction::scale(*c),
            ClassKForm::Compose(parts) => {
                let built = parts.iter().map(|p| p.build()).collect::<Result<Vec<_>, _>>()?;
                ClassKFunction::compose(&built)
            }
        }
    }
}

/// A KL bound in explicit Sontag form,
/// `φ(T^k(x)) <= θ₁(θ₂(ψ(x)) · decay^k)` with `psi_sup = sup_{X_in} ψ`.
#[derive(Debug, Clone)]
pub struct SontagFormKL {
    pub theta1: ClassKFunction,
    pub theta2: ClassKFunction,
    pub psi_sup: f64,
    pub decay: f64,
}

impl SontagFormKL {
    pub fn new(
        theta1: ClassKFunction,
        theta2: ClassKFunction,
        psi_sup: f64,
        decay: f64,
    ) -> Result<Self, CertificateError> {
        if !(psi_sup > 0.0 && psi_sup.is_finite()) {
            return Err(CertificateError::InvalidParameter(format!(
                "the supremum of psi over the initial set must be positive and finite, got {psi_sup}"
            )));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(CertificateError::InvalidParameter(format!(
                "KL decay rate must lie in (0, 1), got {decay}"
            )));
        }
        Ok(Self {
            theta1,
            theta2,
            psi_sup,
            decay,
        })
    }

    /// Same as [`SontagFormKL::new`] with the classical rate `e⁻¹`.
    pub fn with_unit_rate(
        theta1: ClassKFunction,
        theta2: ClassKFunction,
        psi_sup: f64,
    ) -> Result<Self, CertificateError> {
        Self::new(theta1, theta2, psi_sup, (-1.0f64).exp())
    }
}

/// `h(y) = θ₁(θ₂(psi_sup) · y)`, `β = decay`.
///
/// Evaluated at `y = decay^k` this is exactly the Sontag-form bound at the
/// worst initial condition, so `(h, decay)` dominates `ν`.
pub fn build_pair_from_kl(kl: &SontagFormKL) -> Result<CertificatePair, CertificateError> {
    let c = kl.theta2.eval(kl.psi_sup);
    if !(c > 0.0 && c.is_finite()) {
        return Err(CertificateError::InvalidParameter(format!(
            "theta2(psi_sup) = {c} must be positive and finite"
        )));
    }
    let (t1, t1_inv) = (kl.theta1.forward.clone(), kl.theta1.inverse.clone());
    let h = BridgeFunction::new(
        Arc::new(move |y| t1(c * y)),
        Arc::new(move |s| t1_inv(s) / c),
        format!("h(y) = {}({c} * y)", kl.theta1.description),
    )?;
    Ok(CertificatePair::new(h, kl.decay)?)
}

/// Closed Euclidean ball `{‖x‖² <= radius_sq}` used as the stable domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableDomain {
    pub radius_sq: f64,
}

impl StableDomain {
    pub fn ball(radius_sq: f64) -> Result<Self, CertificateError> {
        if !(radius_sq > 0.0 && radius_sq.is_finite()) {
            return Err(CertificateError::InvalidParameter(format!(
                "stable domain squared radius must be positive and finite, got {radius_sq}"
            )));
        }
        Ok(Self { radius_sq })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        norm_sq(x) <= self.radius_sq * (1.0 + DEFAULT_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSource {
    ClosedForm,
    Estimate,
    Explicit,
}

/// A local Lyapunov function with everything needed to build a certificate.
#[derive(Clone)]
pub struct LyapunovCertificate {
    v: ScalarFieldFn,
    v_label: String,
    domain: StableDomain,
    alpha_lower: ClassKFunction,
    ratio: f64,
    ratio_source: RatioSource,
    sup_on_init: f64,
}

impl fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCertificate")
            .field("v", &self.v_label)
            .field("domain", &self.domain)
            .field("alpha_lower", &self.alpha_lower)
            .field("ratio", &self.ratio)
            .field("ratio_source", &self.ratio_source)
            .field("sup_on_init", &self.sup_on_init)
            .finish()
    }
}

impl LyapunovCertificate {
    pub fn new(
        v: ScalarFieldFn,
        v_label: impl Into<String>,
        domain: StableDomain,
        alpha_lower: ClassKFunction,
        ratio: f64,
        ratio_source: RatioSource,
        sup_on_init: f64,
    ) -> Result<Self, CertificateError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(CertificateError::InvalidParameter(format!(
                "the contraction ratio of a Lyapunov function must lie in (0, 1), got {ratio}"
            )));
        }
        if !sup_on_init.is_finite() {
            return Err(CertificateError::InvalidParameter(format!(
                "sup of V over the initial set must be finite, got {sup_on_init}"
            )));
        }
        Ok(Self {
            v,
            v_label: v_label.into(),
            domain,
            alpha_lower,
            ratio,
            ratio_source,
            sup_on_init,
        })
    }

    /// Builds the certificate for a finite initial set, computing
    /// `sup_{X_in} V` directly and checking `X_in` lies in the domain.
    pub fn for_initial_set(
        v: ScalarFieldFn,
        v_label: impl Into<String>,
        domain: StableDomain,
        alpha_lower: ClassKFunction,
        ratio: f64,
        ratio_source: RatioSource,
        init: &InitialSet,
    ) -> Result<Self, CertificateError> {
        for p in init.points() {
            if !domain.contains(p) {
                return Err(CertificateError::InitialOutsideDomain {
                    point: p.clone(),
                    radius_sq: domain.radius_sq,
                });
            }
        }
        let sup = init.points().iter().map(|p| v(p)).fold(f64::NEG_INFINITY, f64::max);
        Self::new(v, v_label, domain, alpha_lower, ratio, ratio_source, sup)
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    pub fn v_fn(&self) -> ScalarFieldFn {
        self.v.clone()
    }

    pub fn v_label(&self) -> &str {
        &self.v_label
    }

    pub fn domain(&self) -> StableDomain {
        self.domain
    }

    pub fn alpha_lower(&self) -> &ClassKFunction {
        &self.alpha_lower
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn ratio_source(&self) -> RatioSource {
        self.ratio_source
    }

    pub fn sup_on_init(&self) -> f64 {
        self.sup_on_init
    }

    /// Sample check of the Lyapunov hypotheses on `samples` (points outside
    /// the domain are skipped): `V(0) = 0`, positivity, the lower class-K
    /// bound, invariance of the ball, and, when `check_decrease`, the decrease
    /// `V(T(x)) <= ratio · V(x)`.
    pub fn check_hypotheses(
        &self,
        sys: &DiscreteSystem,
        samples: &[State],
        check_decrease: bool,
        tol: f64,
    ) -> Result<(), CertificateError> {
        let zero = vec![0.0; sys.dimension()];
        let at_zero = self.v(&zero);
        if at_zero.abs() > tol {
            return Err(CertificateError::NotPositiveDefinite {
                point: zero,
                value: at_zero,
            });
        }
        for x in samples.iter().filter(|x| self.domain.contains(x)) {
            let vx = self.v(x);
            if norm_sq(x) > 0.0 && !(vx > 0.0) {
                return Err(CertificateError::NotPositiveDefinite {
                    point: x.clone(),
                    value: vx,
                });
            }
            let lower = self.alpha_lower.eval(norm_sq(x).sqrt());
            if lower > vx + tol * vx.max(1.0) {
                return Err(CertificateError::LowerBoundViolated {
                    point: x.clone(),
                    lhs: lower,
                    rhs: vx,
                });
            }
            let image = sys.apply(x);
            if !self.domain.contains(&image) {
                return Err(CertificateError::NotInvariant {
                    point: x.clone(),
                    image,
                    radius_sq: self.domain.radius_sq,
                });
            }
            if check_decrease {
                let lhs = self.v(&image);
                let rhs = self.ratio * vx;
                if lhs > rhs + tol * vx.max(1.0) {
                    return Err(CertificateError::DecreaseViolated {
                        point: x.clone(),
                        lhs,
                        rhs,
                    });
                }
            }
        }
        Ok(())
    }
}

/// `h(s) = s · sup_{X_in} V`, `β = ratio`. Valid when `φ <= V` on the domain.
pub fn build_pair_direct_lyap(cert: &LyapunovCertificate) -> Result<CertificatePair, CertificateError> {
    let sup = cert.sup_on_init;
    if !(sup > 0.0) {
        return Err(CertificateError::InvalidParameter(format!(
            "sup of V over the initial set is {sup}; the initial set must not reduce to the origin"
        )));
    }
    let h = BridgeFunction::new(
        Arc::new(move |s| s * sup),
        Arc::new(move |v| v / sup),
        format!("h(s) = {sup} * s"),
    )?;
    Ok(CertificatePair::new(h, cert.ratio)?)
}

/// `h(s) = α(α_V⁻¹(s · sup_{X_in} V))`, `β = ratio`. Valid when
/// `φ(x) <= α(‖x‖)` everywhere and `α_V(‖x‖) <= V(x)` on the domain.
pub fn build_pair_continuous_lyap(
    cert: &LyapunovCertificate,
    alpha: &ClassKFunction,
) -> Result<CertificatePair, CertificateError> {
    let sup = cert.sup_on_init;
    if !(sup > 0.0) {
        return Err(CertificateError::InvalidParameter(format!(
            "sup of V over the initial set is {sup}; the initial set must not reduce to the origin"
        )));
    }
    let lower = &cert.alpha_lower;
    // validated range of α_V⁻¹ is [0, sup]
    lower.inverse_checked(sup)?;
    let (a, a_inv) = (alpha.forward.clone(), alpha.inverse.clone());
    let (l, l_inv) = (lower.forward.clone(), lower.inverse.clone());
    let h = BridgeFunction::new(
        Arc::new(move |s| a(l_inv(s * sup))),
        Arc::new(move |v| l(a_inv(v)) / sup),
        format!(
            "h(s) = {}(inverse of {}({sup} * s))",
            alpha.description, lower.description
        ),
    )?;
    Ok(CertificatePair::new(h, cert.ratio)?)
}

/// Quasi-uniform samples of the ball `{‖x‖² <= radius_sq}` in `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallSampler {
    pub dimension: usize,
    pub radius_sq: f64,
    pub count: usize,
    pub seed: u64,
}

impl BallSampler {
    pub const DEFAULT_COUNT: usize = 100_000;

    pub fn new(dimension: usize, radius_sq: f64) -> Self {
        Self {
            dimension,
            radius_sq,
            count: Self::DEFAULT_COUNT,
            seed: 0,
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        norm_sq(x) <= self.radius_sq
    }

    /// Nonzero sample points; direction from a normalized Gaussian, radius
    /// `√r · U^{1/d}`.
    pub fn samples(&self) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let radius = self.radius_sq.sqrt();
        let d = self.dimension;
        let mut out = Vec::with_capacity(self.count);
        while out.len() < self.count {
            let dir: State = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = norm_sq(&dir).sqrt();
            let u: f64 = rng.gen();
            if n == 0.0 || u == 0.0 {
                continue;
            }
            let r = radius * u.powf(1.0 / d as f64);
            let x: State = dir.iter().map(|c| c / n * r).collect();
            if self.contains(&x) {
                out.push(x);
            }
        }
        out
    }

    /// Uniform points of the box `center ± half_width` that fall in the ball.
    fn box_samples(&self, center: &[f64], half_width: f64, count: usize, seed: u64) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let x: State = center
                .iter()
                .map(|c| c + half_width * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            if self.contains(&x) && norm_sq(&x) > 0.0 {
                out.push(x);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Refinement {
    pub rounds: usize,
    pub points_per_round: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            rounds: 3,
            points_per_round: 1_000,
        }
    }
}

impl Refinement {
    pub fn none() -> Self {
        Self {
            rounds: 0,
            points_per_round: 0,
        }
    }
}

/// Sampled value of the ratio operator. It is a lower estimate of the true
/// supremum, never a certificate on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub value: f64,
    pub argmax: State,
    pub samples: usize,
    /// Incumbent after the initial sweep and after each refinement round.
    pub trail: Vec<f64>,
}

impl RatioEstimate {
    pub fn is_certificate(&self) -> bool {
        false
    }
}

/// `max W(F(x)) / W(x)` over the nonzero points, with the smallest index
/// winning ties. `None` when every point is the origin.
pub fn ratio_over_points(
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
    f: &(dyn Fn(&[f64]) -> State + Sync),
    points: &[State],
) -> Result<Option<(f64, usize)>, CertificateError> {
    let ratios: Vec<Option<f64>> = points
        .par_iter()
        .map(|x| {
            if norm_sq(x) == 0.0 {
                return Ok(None);
            }
            let wx = w(x);
            if !(wx > 0.0) {
                return Err(CertificateError::NotPositiveDefinite {
                    point: x.clone(),
                    value: wx,
                });
            }
            Ok(Some(w(&f(x)) / wx))
        })
        .collect::<Result<_, _>>()?;
    Ok(ratios
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (r, i)))
        .fold(None, |best: Option<(f64, usize)>, (r, i)| match best {
            Some((b, _)) if b >= r => best,
            _ => Some((r, i)),
        }))
}

/// Estimates `N_F^X(W)` on the ball described by `sampler`, refining with
/// shrinking boxes around the incumbent maximizer.
pub fn ratio_operator_estimate(
    w: &(dyn Fn(&[f64]) -> f64 + Sync),
    f: &(dyn Fn(&[f64]) -> State + Sync),
    sampler: &BallSampler,
    refinement: Refinement,
) -> Result<RatioEstimate, CertificateError> {
    let points = sampler.samples();
    let (mut value, idx) = ratio_over_points(w, f, &points)?.ok_or_else(|| {
        CertificateError::InvalidParameter("ratio estimate needs at least one nonzero sample".into())
    })?;
    let mut argmax = points[idx].clone();
    let mut samples = points.len();
    let mut trail = vec![value];
    let mut half_width = 0.05 * sampler.radius_sq.sqrt();
    for round in 0..refinement.rounds {
        let local = sampler.box_samples(
            &argmax,
            half_width,
            refinement.points_per_round,
            sampler.seed.wrapping_add(1 + round as u64),
        );
        samples += local.len();
        if let Some((v, i)) = ratio_over_points(w, f, &local)? {
            if v > value {
                value = v;
                argmax = local[i].clone();
            }
        }
        trail.push(value);
        half_width *= 0.5;
    }
    Ok(RatioEstimate {
        value,
        argmax,
        samples,
        trail,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCheck {
    pub holds: bool,
    pub witness: Option<State>,
}

/// Checks `f(x) <= g(x) + tol` on every sample; the first violating point is
/// returned as a witness.
pub fn verify_envelope(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    samples: &[State],
    tol: f64,
) -> EnvelopeCheck {
    let witness = samples
        .par_iter()
        .position_first(|x| f(x) > g(x) + tol)
        .map(|i| samples[i].clone());
    EnvelopeCheck {
        holds: witness.is_none(),
        witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::running_example::{lyapunov_v, map_h};

    fn h_map(x: &[f64]) -> State {
        map_h([x[0], x[1]]).to_vec()
    }

    #[test]
    fn class_k_named_forms() {
        let p = ClassKFunction::power(3.0).unwrap();
        assert!((p.inverse(p.eval(1.7)) - 1.7).abs() < 1e-12);
        assert!(ClassKFunction::power(0.0).is_err());
        assert!(ClassKFunction::scale(-1.0).is_err());
        let c = ClassKForm::Compose(vec![ClassKForm::Sqrt, ClassKForm::Scale(3.0)])
            .build()
            .unwrap();
        assert!((c.eval(4.0) - 6.0).abs() < 1e-15);
        assert!((c.inverse(6.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn class_k_rejects_non_increasing() {
        let err = ClassKFunction::with_bisection_inverse(Arc::new(|s: f64| s.sin()), 10.0, "sin")
            .unwrap_err();
        assert!(matches!(err, CertificateError::InvalidClassK { .. }));
        let err = ClassKFunction::new(
            Arc::new(|s| s + 1.0),
            Arc::new(|v| v - 1.0),
            f64::INFINITY,
            f64::INFINITY,
            "shifted",
        )
        .unwrap_err();
        assert!(matches!(err, CertificateError::InvalidClassK { .. }));
    }

    #[test]
    fn bisection_inverse_matches_closed_form() {
        let k = ClassKFunction::with_bisection_inverse(
            Arc::new(|s: f64| s * s * s + s),
            f64::INFINITY,
            "s^3 + s",
        )
        .unwrap();
        for s in [0.0, 0.3, 1.0, 4.5, 40.0] {
            assert!((k.inverse(k.eval(s)) - s).abs() <= 1e-10 * s.max(1.0));
        }
        let bounded =
            ClassKFunction::with_bisection_inverse(Arc::new(|s: f64| s / (1.0 + s)), 5.0, "s/(1+s)")
                .unwrap();
        assert!((bounded.range_sup() - 5.0 / 6.0).abs() < 1e-15);
        assert!(bounded.inverse_checked(0.9).is_err());
    }

    #[test]
    fn kl_running_example_bridge() {
        // γ(s,t) = s e^{-t/2} = sqrt(s² e^{-t}); ψ = ‖·‖, sup ψ² = 1.85
        let kl = SontagFormKL::with_unit_rate(
            ClassKFunction::sqrt(),
            ClassKFunction::power(2.0).unwrap(),
            1.85f64.sqrt(),
        )
        .unwrap();
        let pair = build_pair_from_kl(&kl).unwrap();
        for s in [0.01, 0.03463, 0.5, 1.2] {
            assert!((pair.h().inverse(s) - s * s / 1.85).abs() < 1e-12);
        }
        assert_eq!(pair.h().value_at_zero(), 0.0);
        assert!((pair.beta() - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn kl_identity_composition() {
        let kl = SontagFormKL::new(ClassKFunction::identity(), ClassKFunction::identity(), 1.0, 0.3)
            .unwrap();
        let pair = build_pair_from_kl(&kl).unwrap();
        assert_eq!(pair.h().eval(0.42), 0.42);
        assert_eq!(pair.beta(), 0.3);
    }

    #[test]
    fn kl_square_of_sqrt() {
        // θ₁(s) = s², θ₂(s) = √s, ψ̄ = 4: h(y) = (√4 · y)² = 4y²
        let kl = SontagFormKL::new(
            ClassKFunction::power(2.0).unwrap(),
            ClassKFunction::sqrt(),
            4.0,
            0.5,
        )
        .unwrap();
        let pair = build_pair_from_kl(&kl).unwrap();
        for y in [0.0, 0.1, 0.5, 1.0] {
            assert!((pair.h().eval(y) - 4.0 * y * y).abs() < 1e-14);
            let s = 4.0 * y * y;
            assert!((pair.h().inverse(s) - (s / 4.0).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_rejects_bad_parameters() {
        let id = ClassKFunction::identity;
        assert!(SontagFormKL::new(id(), id(), 0.0, 0.5).is_err());
        assert!(SontagFormKL::new(id(), id(), 1.0, 1.0).is_err());
    }

    fn running_cert(radius_sq: f64, sup: f64, ratio: f64) -> LyapunovCertificate {
        LyapunovCertificate::new(
            Arc::new(lyapunov_v),
            "V",
            StableDomain::ball(radius_sq).unwrap(),
            ClassKFunction::power(2.0).unwrap(),
            ratio,
            RatioSource::ClosedForm,
            sup,
        )
        .unwrap()
    }

    #[test]
    fn direct_pair() {
        let pair = build_pair_direct_lyap(&running_cert(8.84, 23.4535, 0.9248)).unwrap();
        assert!((pair.h().value_at_one() - 23.4535).abs() < 1e-12);
        assert_eq!(pair.h().value_at_zero(), 0.0);
        let pair = build_pair_direct_lyap(&running_cert(1.0, 1.0, 0.5)).unwrap();
        assert_eq!(pair.h().eval(0.37), 0.37);
        assert!(build_pair_direct_lyap(&running_cert(1.0, 0.0, 0.5)).is_err());
    }

    #[test]
    fn continuous_pair_square_root_bridge() {
        let cert = running_cert(5.7341, 5.7341, 0.36581);
        let pair = build_pair_continuous_lyap(&cert, &ClassKFunction::identity()).unwrap();
        for s in [0.0, 0.2, 1.0] {
            assert!((pair.h().eval(s) - (s * 5.7341f64).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn continuous_pair_rejects_short_lower_bound() {
        let lower = ClassKFunction::with_bisection_inverse(Arc::new(|s: f64| s / (1.0 + s)), 1e6, "sat")
            .unwrap();
        let cert = LyapunovCertificate::new(
            Arc::new(lyapunov_v),
            "V",
            StableDomain::ball(8.84).unwrap(),
            lower,
            0.9,
            RatioSource::Explicit,
            23.45,
        )
        .unwrap();
        let err = build_pair_continuous_lyap(&cert, &ClassKFunction::identity()).unwrap_err();
        assert!(matches!(err, CertificateError::InverseOutOfRange { .. }));
    }

    #[test]
    fn lyapunov_ratio_must_be_in_unit_interval() {
        let mk = |ratio| {
            LyapunovCertificate::new(
                Arc::new(lyapunov_v),
                "V",
                StableDomain::ball(1.0).unwrap(),
                ClassKFunction::identity(),
                ratio,
                RatioSource::Explicit,
                1.0,
            )
        };
        assert!(mk(1.0).is_err());
        assert!(mk(0.0).is_err());
        assert!(mk(0.5).is_ok());
    }

    #[test]
    fn hypotheses_hold_for_running_example() {
        let sys = DiscreteSystem::running_example();
        let cert = running_cert(8.84, 23.4535, crate::running_example::ratio_closed_form(8.84).unwrap());
        let samples = BallSampler::new(2, 8.84).with_count(5_000).samples();
        cert.check_hypotheses(&sys, &samples, true, DEFAULT_TOL).unwrap();

        let bad = running_cert(8.84, 23.4535, 0.5);
        assert!(matches!(
            bad.check_hypotheses(&sys, &samples, true, DEFAULT_TOL),
            Err(CertificateError::DecreaseViolated { .. })
        ));
    }

    #[test]
    fn hypotheses_detect_escape_from_ball() {
        let sys = DiscreteSystem::linear(vec![vec![1.5, 0.0], vec![0.0, 1.5]]).unwrap();
        let cert = LyapunovCertificate::new(
            Arc::new(|x: &[f64]| norm_sq(x)),
            "|x|^2",
            StableDomain::ball(1.0).unwrap(),
            ClassKFunction::power(2.0).unwrap(),
            0.5,
            RatioSource::Explicit,
            1.0,
        )
        .unwrap();
        let samples = BallSampler::new(2, 1.0).with_count(100).samples();
        assert!(matches!(
            cert.check_hypotheses(&sys, &samples, false, DEFAULT_TOL),
            Err(CertificateError::NotInvariant { .. })
        ));
    }

    #[test]
    fn ratio_of_identity_is_one() {
        let sampler = BallSampler::new(3, 2.0).with_count(2_000);
        let est = ratio_operator_estimate(
            &|x: &[f64]| norm_sq(x) + x[0].powi(4),
            &|x: &[f64]| x.to_vec(),
            &sampler,
            Refinement::default(),
        )
        .unwrap();
        assert_eq!(est.value, 1.0);
        assert!(!est.is_certificate());
    }

    #[test]
    fn ratio_rejects_non_positive_w() {
        let sampler = BallSampler::new(2, 1.0).with_count(100);
        let err = ratio_operator_estimate(&|x: &[f64]| x[0], &|x: &[f64]| x.to_vec(), &sampler, Refinement::none())
            .unwrap_err();
        assert!(matches!(err, CertificateError::NotPositiveDefinite { .. }));
    }

    #[test]
    fn ratio_small_ball_running_example() {
        let est = ratio_operator_estimate(
            &lyapunov_v,
            &h_map,
            &BallSampler::new(2, 1.85),
            Refinement::default(),
        )
        .unwrap();
        assert!((est.value - 1.0 / 32.0).abs() < 1e-3);
        assert!(est.value <= 1.0 / 32.0 + 1e-15);
        assert_eq!(est.trail.len(), 4);
        assert!(est.trail.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sampler_is_deterministic_and_inside() {
        let s = BallSampler::new(2, 8.84).with_count(500).with_seed(7);
        let a = s.samples();
        assert_eq!(a, s.samples());
        assert!(a.iter().all(|x| norm_sq(x) <= 8.84 && norm_sq(x) > 0.0));
        assert_ne!(a, s.with_seed(8).samples());
    }

    #[test]
    fn envelope_checks() {
        let samples = BallSampler::new(2, 1.85).with_count(2_000).samples();
        let first = |x: &[f64]| x[0];
        let norm = |x: &[f64]| norm_sq(x).sqrt();
        assert!(verify_envelope(&first, &norm, &samples, DEFAULT_TOL).holds);
        assert!(verify_envelope(&first, &first, &samples, 0.0).holds);
        let check = verify_envelope(&first, &lyapunov_v, &samples, DEFAULT_TOL);
        assert!(!check.holds);
        let w = check.witness.unwrap();
        assert!(norm_sq(&w) < 1.0 && w[0] > lyapunov_v(&w));
    }
}
