//! Turns a [`SolveConfig`] into a system, a `ν` sequence and a validated
//! certificate pair, and runs the peak search.

use std::sync::Arc;

use thiserror::Error;

use crate::certificate::{
    build_pair_continuous_lyap, build_pair_direct_lyap, build_pair_from_kl, ratio_operator_estimate,
    verify_envelope, BallSampler, ClassKForm, LyapunovCertificate, RatioSource, Refinement,
    SontagFormKL, StableDomain,
};
use crate::config::{
    BuiltinMap, CertificateSpec, ConfigError, ConstructionSpec, KlSpec, LyapunovSpec, ObjectiveSpec,
    PsiNamed, PsiSup, RadiusNamed, RadiusSpec, RatioSpec, SolveConfig, SystemSpec, VSpec,
};
use crate::report::{CertificateSummary, SolveReport};
use crate::running_example::{lyapunov_v, ratio_closed_form, rho_under, Scenario};
use crate::sequence::{solve_peak, BoundedSequence, CertificatePair, SeqError};
use crate::system::{
    norm_sq, normalize_objective, nu_sequence, DiscreteSystem, InitialSet, Objective, ObjectiveKind,
    ScalarFieldFn, State,
};

/// Offset of the hypothesis-check seed from the ratio-estimate seed, so the
/// two sample sets differ.
const CHECK_SEED_OFFSET: u64 = 0x5eed;

pub const ESTIMATE_WARNING: &str =
    "ratio is a sampling estimate (a lower bound of the true supremum), not a certificate";

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Sequence(#[from] SeqError),
}

impl SolveError {
    /// 1 invalid input, 2 guard exceeded, 3 certificate does not dominate.
    pub fn exit_code(&self) -> i32 {
        match self {
            SolveError::Config(_) => 1,
            SolveError::Sequence(e) => match e {
                SeqError::GuardExceeded { .. } => 2,
                SeqError::DominationViolation { .. } | SeqError::InverseOutOfRange { .. } => 3,
                _ => 1,
            },
        }
    }
}

/// A fully validated peak problem.
#[derive(Debug, Clone)]
pub struct Problem {
    system: DiscreteSystem,
    initial_set: InitialSet,
    objective: Objective,
    objective_offset: f64,
    pair: CertificatePair,
    summary: CertificateSummary,
    warnings: Vec<String>,
    guard: usize,
}

impl Problem {
    pub fn from_config(cfg: &SolveConfig) -> Result<Self, ConfigError> {
        let system = build_system(&cfg.system)?;
        let dim = system.dimension();
        let initial_set = match (&cfg.scenario, &cfg.initial_points) {
            (Some(name), _) => Scenario::named(name)?.points,
            (None, Some(points)) => InitialSet::new(points.clone())?,
            (None, None) => {
                return Err(ConfigError::Invalid("missing initial set".into()));
            }
        };
        if initial_set.dimension() != dim {
            return Err(ConfigError::Invalid(format!(
                "initial points have dimension {} but the system has dimension {dim}",
                initial_set.dimension()
            )));
        }
        let raw = build_objective(&cfg.objective);
        raw.check_dimension(dim)?;
        let (objective, objective_offset) = normalize_objective(&raw, dim);
        let mut warnings = Vec::new();
        if objective_offset != 0.0 {
            warnings.push(format!(
                "objective shifted by {objective_offset} so that it vanishes at the origin; the reported optimum adds it back"
            ));
        }

        let ctx = BuildContext {
            cfg,
            system: &system,
            initial_set: &initial_set,
            objective: &objective,
        };
        let (pair, summary) = match &cfg.certificate {
            CertificateSpec::Kl(kl) => ctx.kl_pair(kl, &mut warnings)?,
            CertificateSpec::Lyapunov(l) => ctx.lyapunov_pair(l, &mut warnings)?,
        };

        Ok(Self {
            system,
            initial_set,
            objective,
            objective_offset,
            pair: pair.with_tol(cfg.tolerance),
            summary,
            warnings,
            guard: cfg.guard,
        })
    }

    pub fn system(&self) -> &DiscreteSystem {
        &self.system
    }

    pub fn initial_set(&self) -> &InitialSet {
        &self.initial_set
    }

    /// Objective shifted to vanish at the origin.
    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn objective_offset(&self) -> f64 {
        self.objective_offset
    }

    pub fn pair(&self) -> &CertificatePair {
        &self.pair
    }

    pub fn certificate_summary(&self) -> &CertificateSummary {
        &self.summary
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn guard(&self) -> usize {
        self.guard
    }

    pub fn sequence(&self) -> Result<BoundedSequence, ConfigError> {
        Ok(nu_sequence(&self.system, &self.initial_set, &self.objective)?)
    }

    pub fn solve(&self) -> Result<SolveReport, SolveError> {
        let u = self.sequence()?;
        self.solve_sequence(&u)
    }

    /// Runs the search on a precomputed sequence of normalized objective values.
    ///
    /// After the search the envelope is audited up to [`audit_horizon`]; terms
    /// the sequence cannot provide (a finite table) end the audit early.
    pub fn solve_sequence(&self, u: &BoundedSequence) -> Result<SolveReport, SolveError> {
        let solution = solve_peak(u, &self.pair, self.guard)?;
        let horizon = audit_horizon(solution.stopping_integer, self.guard);
        for k in solution.trace.len()..=horizon {
            let value = match u.term(k) {
                Ok(v) => v,
                Err(SeqError::OutOfRange { .. }) => break,
                Err(e) => return Err(e.into()),
            };
            let bound = self.pair.envelope(k);
            if value > bound + self.pair.tol() {
                return Err(SeqError::DominationViolation { k, value, bound }.into());
            }
        }
        Ok(SolveReport::new(
            &solution,
            self.summary.clone(),
            self.objective_offset,
            self.warnings.clone(),
        ))
    }
}

/// Last rank checked against the envelope after a search that stopped at `stopping_integer`.
pub fn audit_horizon(stopping_integer: u64, guard: usize) -> usize {
    let k = usize::try_from(stopping_integer).unwrap_or(usize::MAX);
    k.saturating_mul(2).saturating_add(2).max(32).min(guard.max(k))
}

fn build_system(spec: &SystemSpec) -> Result<DiscreteSystem, ConfigError> {
    Ok(match spec {
        SystemSpec::Builtin(BuiltinMap::RunningExample) => DiscreteSystem::running_example(),
        SystemSpec::Affine { matrix, offset } => {
            let offset = offset.clone().unwrap_or_else(|| vec![0.0; matrix.len()]);
            DiscreteSystem::affine(matrix.clone(), offset)?
        }
        SystemSpec::Polynomial(components) => DiscreteSystem::polynomial(components.clone())?,
    })
}

fn build_objective(spec: &ObjectiveSpec) -> Objective {
    let kind = match spec {
        ObjectiveSpec::Coordinate(i) => ObjectiveKind::Coordinate(i - 1),
        ObjectiveSpec::Linear { coeffs, constant } => ObjectiveKind::Linear {
            coeffs: coeffs.clone(),
            constant: *constant,
        },
        ObjectiveSpec::Quadratic { q, b, constant } => ObjectiveKind::Quadratic {
            q: q.clone(),
            b: b.clone().unwrap_or_else(|| vec![0.0; q.len()]),
            constant: *constant,
        },
        ObjectiveSpec::Norm => ObjectiveKind::Norm,
    };
    Objective::new(kind)
}

struct BuildContext<'a> {
    cfg: &'a SolveConfig,
    system: &'a DiscreteSystem,
    initial_set: &'a InitialSet,
    objective: &'a Objective,
}

impl BuildContext<'_> {
    fn is_builtin(&self) -> bool {
        self.cfg.system == SystemSpec::Builtin(BuiltinMap::RunningExample)
    }

    fn kl_pair(
        &self,
        kl: &KlSpec,
        warnings: &mut Vec<String>,
    ) -> Result<(CertificatePair, CertificateSummary), ConfigError> {
        let psi_sup = match kl.psi_sup {
            PsiSup::Value(v) => v,
            PsiSup::Named(PsiNamed::MaxNorm) => self.initial_set.max_norm_sq().sqrt(),
            PsiSup::Named(PsiNamed::MaxNormSquared) => self.initial_set.max_norm_sq(),
        };
        let bound = SontagFormKL::new(kl.theta1.build()?, kl.theta2.build()?, psi_sup, kl.decay)?;
        let pair = build_pair_from_kl(&bound)?;
        warnings.push(
            "the KL bound is taken as given; each visited term is still checked against h(beta^k)".into(),
        );
        let r = self.initial_set.max_norm_sq();
        if self.is_builtin() && r >= rho_under() {
            warnings.push(format!(
                "initial points reach squared norm {r}, outside the ball of squared radius rho_under = {:.4} \
                 on which the builtin map contracts by e^-1; a KL bound built on that contraction does not hold here",
                rho_under()
            ));
        }
        let summary = CertificateSummary::from_pair("kl", &pair, None);
        Ok((pair, summary))
    }

    fn lyapunov_pair(
        &self,
        spec: &LyapunovSpec,
        warnings: &mut Vec<String>,
    ) -> Result<(CertificatePair, CertificateSummary), ConfigError> {
        let dim = self.system.dimension();
        let (v, v_label): (ScalarFieldFn, String) = match &spec.v {
            VSpec::RunningExample => {
                if !self.is_builtin() {
                    return Err(ConfigError::Invalid(
                        "the running-example V is only defined for the builtin running-example system".into(),
                    ));
                }
                (Arc::new(lyapunov_v), "max(|x|^2, e|H(x)|^2)".into())
            }
            VSpec::NormSquared => (Arc::new(|x: &[f64]| norm_sq(x)), "|x|^2".into()),
            VSpec::Polynomial(p) => {
                if let Some(m) = p.terms.iter().find(|m| m.exponents.len() != dim) {
                    return Err(ConfigError::Invalid(format!(
                        "V monomial has {} exponents for a {dim}-dimensional state",
                        m.exponents.len()
                    )));
                }
                let p = p.clone();
                (Arc::new(move |x: &[f64]| p.eval(x)), "polynomial V".into())
            }
        };
        let alpha_lower = match (&spec.alpha_lower, &spec.v) {
            (Some(form), _) => form.build()?,
            (None, VSpec::RunningExample | VSpec::NormSquared) => ClassKForm::Power(2.0).build()?,
            (None, VSpec::Polynomial(_)) => {
                return Err(ConfigError::Invalid(
                    "a polynomial V needs an explicit alpha_lower with alpha_lower(|x|) <= V(x)".into(),
                ))
            }
        };
        let radius_sq = match spec.radius_sq {
            RadiusSpec::Value(r) => r,
            RadiusSpec::Named(RadiusNamed::Auto) => self.initial_set.max_norm_sq(),
        };
        let domain = StableDomain::ball(radius_sq)?;

        let (ratio, source) = match spec.ratio {
            RatioSpec::ClosedForm => {
                if !(self.is_builtin() && spec.v == VSpec::RunningExample) {
                    return Err(ConfigError::Invalid(
                        "the closed-form ratio exists only for the running-example system and V".into(),
                    ));
                }
                (ratio_closed_form(radius_sq)?, RatioSource::ClosedForm)
            }
            RatioSpec::Estimate => {
                let sampler = BallSampler::new(dim, radius_sq)
                    .with_count(self.cfg.ratio_samples)
                    .with_seed(self.cfg.seed);
                let sys = self.system.clone();
                let est = ratio_operator_estimate(
                    &*v,
                    &move |x: &[f64]| sys.apply(x),
                    &sampler,
                    Refinement::default(),
                )?;
                log::info!(
                    "ratio estimate {} from {} samples, trail {:?}",
                    est.value,
                    est.samples,
                    est.trail
                );
                warnings.push(ESTIMATE_WARNING.into());
                (est.value, RatioSource::Estimate)
            }
            RatioSpec::Value(x) => (x, RatioSource::Explicit),
        };

        let cert = LyapunovCertificate::for_initial_set(
            v.clone(),
            v_label,
            domain,
            alpha_lower,
            ratio,
            source,
            self.initial_set,
        )?;

        let mut samples: Vec<State> = BallSampler::new(dim, radius_sq)
            .with_count(self.cfg.check_samples)
            .with_seed(self.cfg.seed.wrapping_add(CHECK_SEED_OFFSET))
            .samples();
        samples.extend(self.initial_set.points().iter().cloned());
        let tol = self.cfg.tolerance.max(1e-12);
        cert.check_hypotheses(self.system, &samples, source != RatioSource::Estimate, tol)
            .map_err(|e| ConfigError::Hypothesis(format!("Lyapunov function: {e}")))?;

        let obj = self.objective.clone();
        let phi = move |x: &[f64]| obj.eval(x);
        let (pair, kind) = match &spec.construction {
            ConstructionSpec::Direct => {
                let check = verify_envelope(&phi, &*v, &samples, tol);
                if let Some(w) = check.witness {
                    return Err(ConfigError::Hypothesis(format!(
                        "the direct construction needs objective <= V on the stable domain; fails at x = {w:?}"
                    )));
                }
                (build_pair_direct_lyap(&cert)?, "lyapunov-direct")
            }
            ConstructionSpec::Continuous { alpha } => {
                let alpha = alpha.build()?;
                let a = alpha.clone();
                let upper = move |x: &[f64]| a.eval(norm_sq(x).sqrt());
                let check = verify_envelope(&phi, &upper, &samples, tol);
                if let Some(w) = check.witness {
                    return Err(ConfigError::Hypothesis(format!(
                        "the continuous construction needs objective(x) <= alpha(|x|); fails at x = {w:?}"
                    )));
                }
                (build_pair_continuous_lyap(&cert, &alpha)?, "lyapunov-continuous")
            }
        };
        let source_name = match source {
            RatioSource::ClosedForm => "closed-form",
            RatioSource::Estimate => "estimate",
            RatioSource::Explicit => "explicit",
        };
        let summary = CertificateSummary::from_pair(kind, &pair, Some(source_name.into()));
        Ok((pair, summary))
    }
}
