//! f-divergences `D_f(p || q) = sum_x q(x) f(p(x) / q(x))` together with the
//! derivative machinery the training solvers need.
//!
//! Every kind is scaled by a strength `lambda > 0`: the regularizer is
//! `lambda * f` for the base generator `f`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{check_dim, Policy};
use crate::error::{GameError, Result};

/// A user supplied, strongly convex and twice differentiable generator with
/// `f(1) = 0`. The implementation must be pure.
///
/// `first_inverse` inverts `first`; for arguments below the range of `f'` it
/// may return any value `<= 0` (callers clamp at zero).
pub trait SmoothGenerator: Send + Sync + fmt::Debug {
    fn value(&self, u: f64) -> f64;
    fn first(&self, u: f64) -> f64;
    fn second(&self, u: f64) -> f64;
    fn first_inverse(&self, y: f64) -> f64;
    /// Strong-convexity constant `alpha`, spot checked against `second`.
    fn strong_convexity(&self) -> f64;
}

#[derive(Clone)]
pub enum DivergenceKind {
    /// `f(u) = u ln u`
    Kl,
    /// `f(u) = (u - 1)^2`
    ChiSquared,
    Generic(Arc<dyn SmoothGenerator>),
}

impl fmt::Debug for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceKind::Kl => f.write_str("Kl"),
            DivergenceKind::ChiSquared => f.write_str("ChiSquared"),
            DivergenceKind::Generic(g) => write!(f, "Generic({g:?})"),
        }
    }
}

impl DivergenceKind {
    pub fn name(&self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::ChiSquared => "chi_squared",
            DivergenceKind::Generic(_) => "generic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DivergenceSpec {
    kind: DivergenceKind,
    lambda: f64,
}

const SPOT_GRID_POINTS: usize = 121;

impl DivergenceSpec {
    pub fn kl(lambda: f64) -> Result<Self> {
        Self::new(DivergenceKind::Kl, lambda)
    }

    pub fn chi_squared(lambda: f64) -> Result<Self> {
        Self::new(DivergenceKind::ChiSquared, lambda)
    }

    pub fn generic(generator: Arc<dyn SmoothGenerator>, lambda: f64) -> Result<Self> {
        Self::new(DivergenceKind::Generic(generator), lambda)
    }

    pub fn new(kind: DivergenceKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(GameError::InvalidDivergence(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let spec = Self { kind, lambda };
        let at_one = spec.f_raw(1.0);
        if at_one.abs() > 1e-12 {
            return Err(GameError::InvalidDivergence(format!(
                "f(1) = {at_one}, expected 0"
            )));
        }
        if let DivergenceKind::Generic(g) = &spec.kind {
            let alpha = g.strong_convexity();
            if !(alpha > 0.0) {
                return Err(GameError::InvalidDivergence(format!(
                    "strong convexity constant must be positive, got {alpha}"
                )));
            }
            // log-spaced spot check over [1e-6, 1e6]
            for j in 0..SPOT_GRID_POINTS {
                let u = 10f64.powf(-6.0 + 12.0 * j as f64 / (SPOT_GRID_POINTS - 1) as f64);
                let second = g.second(u);
                if !(second >= alpha) {
                    return Err(GameError::InvalidDivergence(format!(
                        "f''({u:e}) = {second} is below the strong convexity constant {alpha}"
                    )));
                }
            }
        }
        Ok(spec)
    }

    pub fn kind(&self) -> &DivergenceKind {
        &self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same kind with a different strength.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.kind.clone(), lambda)
    }

    fn check_positive(u: f64) -> Result<()> {
        if u > 0.0 {
            Ok(())
        } else {
            Err(GameError::NonPositiveArgument(u))
        }
    }

    pub fn f_value(&self, u: f64) -> Result<f64> {
        Self::check_positive(u)?;
        Ok(self.f_raw(u))
    }

    pub fn f_prime(&self, u: f64) -> Result<f64> {
        Self::check_positive(u)?;
        Ok(self.f_prime_raw(u))
    }

    pub fn f_double_prime(&self, u: f64) -> Result<f64> {
        Self::check_positive(u)?;
        Ok(self.f_double_prime_raw(u))
    }

    /// `(f')^{-1}(y)`; fails when `y` is outside the range of `f'`.
    pub fn f_prime_inverse(&self, y: f64) -> Result<f64> {
        let u = self.f_prime_inverse_raw(y);
        if u > 0.0 && u.is_finite() {
            Ok(u)
        } else {
            Err(GameError::OutOfRange(y))
        }
    }

    pub(crate) fn f_raw(&self, u: f64) -> f64 {
        let base = match &self.kind {
            DivergenceKind::Kl => u * u.ln(),
            DivergenceKind::ChiSquared => (u - 1.0) * (u - 1.0),
            DivergenceKind::Generic(g) => g.value(u),
        };
        self.lambda * base
    }

    pub(crate) fn f_prime_raw(&self, u: f64) -> f64 {
        let base = match &self.kind {
            DivergenceKind::Kl => u.ln() + 1.0,
            DivergenceKind::ChiSquared => 2.0 * (u - 1.0),
            DivergenceKind::Generic(g) => g.first(u),
        };
        self.lambda * base
    }

    pub(crate) fn f_double_prime_raw(&self, u: f64) -> f64 {
        let base = match &self.kind {
            DivergenceKind::Kl => 1.0 / u,
            DivergenceKind::ChiSquared => 2.0,
            DivergenceKind::Generic(g) => g.second(u),
        };
        self.lambda * base
    }

    /// Inverse of `f'`; values `<= 0` signal an argument below the range.
    pub(crate) fn f_prime_inverse_raw(&self, y: f64) -> f64 {
        let z = y / self.lambda;
        match &self.kind {
            DivergenceKind::Kl => (z - 1.0).exp(),
            DivergenceKind::ChiSquared => 1.0 + z / 2.0,
            DivergenceKind::Generic(g) => g.first_inverse(z),
        }
    }

    /// `D_f(p || q)`.
    pub fn divergence(&self, p: &Policy, q: &Policy) -> Result<f64> {
        check_dim(q.len(), p.len())?;
        Ok(p.probs()
            .iter()
            .zip(q.probs())
            .map(|(&pi, &qi)| qi * self.f_raw(pi / qi))
            .sum())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindRepr {
    Kl,
    ChiSquared,
    Generic,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    kind: KindRepr,
    lambda: f64,
}

impl Serialize for DivergenceSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let kind = match self.kind {
            DivergenceKind::Kl => KindRepr::Kl,
            DivergenceKind::ChiSquared => KindRepr::ChiSquared,
            DivergenceKind::Generic(_) => KindRepr::Generic,
        };
        SpecRepr {
            kind,
            lambda: self.lambda,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DivergenceSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let repr = SpecRepr::deserialize(d)?;
        let kind = match repr.kind {
            KindRepr::Kl => DivergenceKind::Kl,
            KindRepr::ChiSquared => DivergenceKind::ChiSquared,
            KindRepr::Generic => {
                return Err(D::Error::custom(
                    "generic divergences cannot be loaded from a config",
                ))
            }
        };
        DivergenceSpec::new(kind, repr.lambda).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[derive(Debug)]
    struct HalfSquare;

    // f(u) = (u - 1)^2 / 2
    impl SmoothGenerator for HalfSquare {
        fn value(&self, u: f64) -> f64 {
            0.5 * (u - 1.0) * (u - 1.0)
        }
        fn first(&self, u: f64) -> f64 {
            u - 1.0
        }
        fn second(&self, _u: f64) -> f64 {
            1.0
        }
        fn first_inverse(&self, y: f64) -> f64 {
            y + 1.0
        }
        fn strong_convexity(&self) -> f64 {
            1.0
        }
    }

    #[derive(Debug)]
    struct Shifted;

    impl SmoothGenerator for Shifted {
        fn value(&self, u: f64) -> f64 {
            u * u
        }
        fn first(&self, u: f64) -> f64 {
            2.0 * u
        }
        fn second(&self, _u: f64) -> f64 {
            2.0
        }
        fn first_inverse(&self, y: f64) -> f64 {
            y / 2.0
        }
        fn strong_convexity(&self) -> f64 {
            2.0
        }
    }

    #[test]
    fn f_value_examples() {
        let kl = DivergenceSpec::kl(1.0).unwrap();
        assert_eq!(kl.f_value(1.0).unwrap(), 0.0);
        let chi = DivergenceSpec::chi_squared(2.0).unwrap();
        assert_eq!(chi.f_value(1.5).unwrap(), 0.5);
        // e ln e = e
        assert!((kl.f_value(E).unwrap() - E).abs() < 4.0 * f64::EPSILON);
        assert!(matches!(
            kl.f_value(0.0),
            Err(GameError::NonPositiveArgument(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let kl = DivergenceSpec::kl(1.0).unwrap();
        assert_eq!(kl.f_prime(1.0).unwrap(), 1.0);
        assert_eq!(kl.f_prime_inverse(1.0).unwrap(), 1.0);
        let chi = DivergenceSpec::chi_squared(1.0).unwrap();
        assert_eq!(chi.f_prime(1.25).unwrap(), 0.5);
        let kl2 = DivergenceSpec::kl(2.0).unwrap();
        assert_eq!(kl2.f_prime_inverse(2.0).unwrap(), 1.0);
        assert_eq!(kl2.f_double_prime(4.0).unwrap(), 0.5);
        // chi-squared f' is bounded below by -2 lambda
        assert!(matches!(
            chi.f_prime_inverse(-3.0),
            Err(GameError::OutOfRange(_))
        ));
    }

    #[test]
    fn divergence_examples() {
        let kl = DivergenceSpec::kl(1.0).unwrap();
        let q = Policy::uniform(2);
        assert_eq!(kl.divergence(&q, &q).unwrap(), 0.0);
        let p = Policy::new(vec![0.73106, 0.26894]).unwrap();
        let oracle = 0.5 * (0.73106f64 / 0.5) * (0.73106f64 / 0.5).ln()
            + 0.5 * (0.26894f64 / 0.5) * (0.26894f64 / 0.5).ln();
        assert!((kl.divergence(&p, &q).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.11094).abs() < 1e-5);

        let chi = DivergenceSpec::chi_squared(1.0).unwrap();
        let p = Policy::new(vec![0.625, 0.375]).unwrap();
        assert!((chi.divergence(&p, &q).unwrap() - 0.0625).abs() < 1e-15);

        let p3 = Policy::uniform(3);
        assert!(matches!(
            kl.divergence(&p3, &q),
            Err(GameError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn construction_checks() {
        assert!(DivergenceSpec::kl(0.0).is_err());
        assert!(DivergenceSpec::chi_squared(-1.0).is_err());
        assert!(DivergenceSpec::generic(Arc::new(HalfSquare), 1.0).is_ok());
        // f(1) = 1
        assert!(DivergenceSpec::generic(Arc::new(Shifted), 1.0).is_err());
    }

    #[test]
    fn generic_scales_by_lambda() {
        let g = DivergenceSpec::generic(Arc::new(HalfSquare), 4.0).unwrap();
        let chi = DivergenceSpec::chi_squared(2.0).unwrap();
        for &u in &[0.1, 0.5, 1.0, 2.0, 7.0] {
            assert!((g.f_value(u).unwrap() - chi.f_value(u).unwrap()).abs() < 1e-12);
            assert!((g.f_prime(u).unwrap() - chi.f_prime(u).unwrap()).abs() < 1e-12);
            let y = chi.f_prime(u).unwrap();
            assert!((g.f_prime_inverse(y).unwrap() - u).abs() < 1e-12);
        }
    }

    fn log_grid() -> impl Iterator<Item = f64> {
        (0..=60).map(|j| 10f64.powf(-3.0 + 6.0 * j as f64 / 60.0))
    }

    fn specs() -> Vec<DivergenceSpec> {
        vec![
            DivergenceSpec::kl(1.0).unwrap(),
            DivergenceSpec::kl(0.5).unwrap(),
            DivergenceSpec::chi_squared(1.0).unwrap(),
            DivergenceSpec::chi_squared(3.0).unwrap(),
            DivergenceSpec::generic(Arc::new(HalfSquare), 2.0).unwrap(),
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in specs() {
            for u in (0..=40).map(|j| 10f64.powf(-2.0 + 3.0 * j as f64 / 40.0)) {
                let fd1 = (spec.f_raw(u + h) - spec.f_raw(u - h)) / (2.0 * h);
                let fd2 = (spec.f_prime_raw(u + h) - spec.f_prime_raw(u - h)) / (2.0 * h);
                let (d1, d2) = (spec.f_prime(u).unwrap(), spec.f_double_prime(u).unwrap());
                assert!(
                    (d1 - fd1).abs() <= 1e-6 * d1.abs().max(1.0),
                    "{spec:?} f' at {u}"
                );
                assert!(
                    (d2 - fd2).abs() <= 1e-6 * d2.abs().max(1.0),
                    "{spec:?} f'' at {u}"
                );
            }
        }
    }

    #[test]
    fn f_prime_strictly_increasing_and_invertible() {
        for spec in specs() {
            let mut prev = f64::NEG_INFINITY;
            for u in log_grid() {
                let y = spec.f_prime(u).unwrap();
                assert!(y > prev);
                prev = y;
                let back = spec.f_prime_inverse(y).unwrap();
                assert!(
                    ((back - u) / u).abs() <= 1e-10,
                    "{spec:?} round trip at {u}"
                );
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let spec = DivergenceSpec::chi_squared(0.5).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"chi_squared","lambda":0.5}"#);
        let back: DivergenceSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.lambda(), 0.5);
        assert!(serde_json::from_str::<DivergenceSpec>(r#"{"kind":"kl","lambda":0}"#).is_err());
    }
}
