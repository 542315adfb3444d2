//! Epstein-Zin preferences in the CRRA and CARA parametrizations.
//!
//! The period utility is `u` and the time aggregator is `φ`. Recursive
//! values are combined as `φ((1-β)u(c) + β φ⁻¹(V'))`. When the risk and
//! intertemporal parameters coincide `φ` is the identity and the usual
//! time-separable expected-utility model is recovered.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Separability threshold on `|α − ρ|`.
pub const SEPARABLE_TOL: f64 = 1e-12;

/// Valuation gaps at or below this size are treated as ties.
pub const TIMING_TIE_TOL: f64 = 1e-12;

/// Exponents fed to `exp` are saturated at this magnitude.
pub const EXP_SATURATION: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `u(c) = c^{1-ρ}`, `φ(z) = z^{(1-α)/(1-ρ)}`.
    CrraEz,
    /// `u_ρ(c) = (1 - e^{-ρc})/ρ`, `φ = u_α ∘ u_ρ⁻¹`.
    CaraEz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    Early,
    Late,
    Indifferent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Period1,
    Period2,
}

/// A payoff in period 1 followed by a random payoff in period 2 whose
/// uncertainty resolves either at the start of period 1 or of period 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPeriodLottery {
    pub first_payoff: f64,
    /// `(payoff, probability)` pairs.
    pub second_payoffs: Vec<(f64, f64)>,
    pub resolution: Resolution,
}

impl TwoPeriodLottery {
    /// Consumption 5, then 10 or 0 with equal odds.
    pub fn coin_flip(resolution: Resolution) -> Self {
        Self {
            first_payoff: 5.0,
            second_payoffs: vec![(10.0, 0.5), (0.0, 0.5)],
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.second_payoffs.is_empty() {
            return Err(invalid("second_payoffs", "must be nonempty"));
        }
        let mut total = 0.0;
        for &(_, p) in &self.second_payoffs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(invalid("second_payoffs", "probabilities must be nonnegative"));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("second_payoffs", format!("probabilities sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSpec {
    pub family: Family,
    /// Risk parameter.
    pub alpha: f64,
    /// Intertemporal parameter.
    pub rho: f64,
    /// Discount factor.
    pub beta: f64,
}

#[inline]
pub(crate) fn saturated_exp(x: f64) -> f64 {
    x.clamp(-EXP_SATURATION, EXP_SATURATION).exp()
}

/// CARA utility `(1 - e^{-rc})/r`, with the linear limit at `r = 0`.
#[inline]
pub(crate) fn cara_u(r: f64, c: f64) -> f64 {
    if r == 0.0 {
        c
    } else {
        -(-r * c).clamp(-EXP_SATURATION, EXP_SATURATION).exp_m1() / r
    }
}

/// Inverse of [`cara_u`]; `+∞` at the supremum `1/r`.
#[inline]
pub(crate) fn cara_u_inv(r: f64, y: f64) -> Result<f64> {
    if r == 0.0 {
        return Ok(y);
    }
    let t = r * y;
    if t > 1.0 || t.is_nan() {
        return Err(Error::Domain {
            function: "cara utility inverse",
            value: y,
            detail: "exceeds the supremum 1/rho of the utility",
        });
    }
    Ok(-(-t).ln_1p() / r)
}

impl PreferenceSpec {
    pub fn new(family: Family, alpha: f64, rho: f64, beta: f64) -> Result<Self> {
        let spec = Self {
            family,
            alpha,
            rho,
            beta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cara(alpha: f64, rho: f64, beta: f64) -> Result<Self> {
        Self::new(Family::CaraEz, alpha, rho, beta)
    }

    pub fn crra(alpha: f64, rho: f64, beta: f64) -> Result<Self> {
        Self::new(Family::CrraEz, alpha, rho, beta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("rho", self.rho), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(invalid(format!("preferences.{name}"), "must be finite"));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("preferences.beta", "must lie strictly between 0 and 1"));
        }
        match self.family {
            Family::CrraEz => {
                if self.alpha > 1.0 {
                    return Err(invalid("preferences.alpha", "CRRA requires alpha <= 1"));
                }
                if self.rho >= 1.0 {
                    return Err(invalid("preferences.rho", "CRRA requires rho < 1"));
                }
            }
            Family::CaraEz => {
                if self.alpha < 0.0 {
                    return Err(invalid("preferences.alpha", "CARA requires alpha >= 0"));
                }
                if self.rho < 0.0 {
                    return Err(invalid("preferences.rho", "CARA requires rho >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn is_separable(&self) -> bool {
        (self.alpha - self.rho).abs() < SEPARABLE_TOL
    }

    /// CRRA aggregator exponent `(1-α)/(1-ρ)`.
    fn crra_k(&self) -> f64 {
        (1.0 - self.alpha) / (1.0 - self.rho)
    }

    /// CRRA with `α = 1` uses the logarithmic limit of `(z^k - 1)/k`,
    /// an affine transform of `z^k` and hence the same preferences.
    fn crra_log(&self) -> bool {
        self.family == Family::CrraEz && self.alpha == 1.0
    }

    pub fn utility(&self, c: f64) -> Result<f64> {
        match self.family {
            Family::CaraEz => Ok(cara_u(self.rho, c)),
            Family::CrraEz => {
                if !(c >= 0.0) {
                    return Err(Error::Domain {
                        function: "utility",
                        value: c,
                        detail: "is negative; CRRA utility needs nonnegative consumption",
                    });
                }
                Ok(c.powf(1.0 - self.rho))
            }
        }
    }

    pub fn utility_inverse(&self, y: f64) -> Result<f64> {
        match self.family {
            Family::CaraEz => cara_u_inv(self.rho, y),
            Family::CrraEz => {
                if !(y >= 0.0) {
                    return Err(Error::Domain {
                        function: "utility inverse",
                        value: y,
                        detail: "is negative; outside the range of CRRA utility",
                    });
                }
                Ok(y.powf(1.0 / (1.0 - self.rho)))
            }
        }
    }

    /// The aggregator `φ`.
    pub fn aggregator(&self, z: f64) -> Result<f64> {
        if self.is_separable() {
            return Ok(z);
        }
        match self.family {
            Family::CaraEz => Ok(cara_u(self.alpha, cara_u_inv(self.rho, z)?)),
            Family::CrraEz => {
                if !(z >= 0.0) {
                    return Err(Error::Domain {
                        function: "aggregator",
                        value: z,
                        detail: "is negative; CRRA aggregator needs z >= 0",
                    });
                }
                if self.crra_log() {
                    Ok(z.ln())
                } else {
                    Ok(z.powf(self.crra_k()))
                }
            }
        }
    }

    /// The inverse aggregator `φ⁻¹`.
    pub fn aggregator_inverse(&self, v: f64) -> Result<f64> {
        if self.is_separable() {
            return Ok(v);
        }
        match self.family {
            Family::CaraEz => {
                let x = cara_u_inv(self.alpha, v).map_err(|_| Error::Domain {
                    function: "aggregator inverse",
                    value: v,
                    detail: "exceeds the supremum 1/alpha of the aggregator",
                })?;
                Ok(cara_u(self.rho, x))
            }
            Family::CrraEz => {
                if self.crra_log() {
                    return Ok(v.exp());
                }
                if !(v >= 0.0) {
                    return Err(Error::Domain {
                        function: "aggregator inverse",
                        value: v,
                        detail: "is negative; outside the range of the CRRA aggregator",
                    });
                }
                Ok(v.powf(1.0 / self.crra_k()))
            }
        }
    }

    /// `φ'(z)`.
    pub fn aggregator_prime(&self, z: f64) -> Result<f64> {
        if self.is_separable() {
            return Ok(1.0);
        }
        match self.family {
            Family::CaraEz => {
                let x = cara_u_inv(self.rho, z)?;
                Ok(dir_exp(-(self.alpha - self.rho), x))
            }
            Family::CrraEz => {
                if !(z >= 0.0) {
                    return Err(Error::Domain {
                        function: "aggregator derivative",
                        value: z,
                        detail: "is negative",
                    });
                }
                if self.crra_log() {
                    Ok(1.0 / z)
                } else {
                    let k = self.crra_k();
                    Ok(k * z.powf(k - 1.0))
                }
            }
        }
    }

    /// `ψ_y(z) = φ((1-β)y + β φ⁻¹(z))`.
    pub fn psi(&self, y: f64, z: f64) -> Result<f64> {
        let b = self.aggregator_inverse(z)?;
        self.aggregator((1.0 - self.beta) * y + self.beta * b)
    }

    /// `∂ψ_y/∂z = β φ'(a)/φ'(b)` with `b = φ⁻¹(z)`, `a = (1-β)y + βb`.
    pub fn psi_prime(&self, y: f64, z: f64) -> Result<f64> {
        let beta = self.beta;
        if self.is_separable() {
            return Ok(beta);
        }
        let b = self.aggregator_inverse(z)?;
        let a = (1.0 - beta) * y + beta * b;
        match self.family {
            Family::CaraEz => {
                // φ'(a)/φ'(b) = exp(-(α-ρ)(u_ρ⁻¹(a) - u_ρ⁻¹(b)))
                let ca = cara_u_inv(self.rho, a)?;
                let cb = cara_u_inv(self.rho, b)?;
                let diff = ca - cb;
                if diff.is_nan() {
                    // both at the utility supremum: the ratio tends to one
                    return Ok(beta);
                }
                Ok(beta * dir_exp(-(self.alpha - self.rho), diff))
            }
            Family::CrraEz => {
                if !(a >= 0.0) {
                    return Err(Error::Domain {
                        function: "psi derivative",
                        value: a,
                        detail: "aggregator argument is negative",
                    });
                }
                let k = if self.crra_log() { 0.0 } else { self.crra_k() };
                Ok(beta * (a / b).powf(k - 1.0))
            }
        }
    }

    /// Arrow-Pratt curvature `-φ''(z)/φ'(z)`.
    pub fn arrow_pratt(&self, z: f64) -> Result<f64> {
        if self.is_separable() {
            return Ok(0.0);
        }
        match self.family {
            Family::CaraEz => {
                let s = 1.0 - self.rho * z;
                if !(s > 0.0) {
                    return Err(Error::Domain {
                        function: "arrow_pratt",
                        value: z,
                        detail: "is not below the singular point 1/rho",
                    });
                }
                Ok((self.alpha - self.rho) / s)
            }
            Family::CrraEz => {
                if !(z > 0.0) {
                    return Err(Error::Domain {
                        function: "arrow_pratt",
                        value: z,
                        detail: "is not positive",
                    });
                }
                let k = if self.crra_log() { 0.0 } else { self.crra_k() };
                Ok((1.0 - k) / z)
            }
        }
    }

    pub fn timing_preference(&self) -> Timing {
        if self.is_separable() {
            Timing::Indifferent
        } else if self.rho < self.alpha {
            Timing::Early
        } else {
            Timing::Late
        }
    }

    pub fn lottery_value(&self, lot: &TwoPeriodLottery) -> Result<f64> {
        lot.validate()?;
        let beta = self.beta;
        let today = (1.0 - beta) * self.utility(lot.first_payoff)?;
        match lot.resolution {
            Resolution::Period1 => {
                let mut v = 0.0;
                for &(c2, p) in &lot.second_payoffs {
                    let z = (1.0 - beta) * self.utility(c2)?;
                    v += p * self.aggregator(today + beta * z)?;
                }
                Ok(v)
            }
            Resolution::Period2 => {
                let mut ephi = 0.0;
                for &(c2, p) in &lot.second_payoffs {
                    let z = (1.0 - beta) * self.utility(c2)?;
                    ephi += p * self.aggregator(z)?;
                }
                self.aggregator(today + beta * self.aggregator_inverse(ephi)?)
            }
        }
    }

    /// Sign test of early-versus-late resolution on a lottery: compares the
    /// two resolution timings, treating gaps up to [`TIMING_TIE_TOL`] as ties.
    pub fn revealed_timing(&self, first_payoff: f64, second_payoffs: &[(f64, f64)]) -> Result<Timing> {
        let mk = |resolution| TwoPeriodLottery {
            first_payoff,
            second_payoffs: second_payoffs.to_vec(),
            resolution,
        };
        let early = self.lottery_value(&mk(Resolution::Period1))?;
        let late = self.lottery_value(&mk(Resolution::Period2))?;
        let gap = early - late;
        Ok(if gap.abs() <= TIMING_TIE_TOL {
            Timing::Indifferent
        } else if gap > 0.0 {
            Timing::Early
        } else {
            Timing::Late
        })
    }

    /// Stable identifier of the spec, used to tag value functions.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(match self.family {
            Family::CrraEz => b"crra",
            Family::CaraEz => b"cara",
        });
        for v in [self.alpha, self.rho, self.beta] {
            h.update(v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `exp(s·x)` where `x` may be `±∞` and `s` may be zero.
#[inline]
fn dir_exp(s: f64, x: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        (s * x).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn utility_examples() {
        let cara1 = PreferenceSpec::cara(1.0, 1.0, 0.9).unwrap();
        assert_eq!(cara1.utility(0.0).unwrap(), 0.0);
        assert!(close(cara1.utility(2f64.ln()).unwrap(), 0.5, 1e-15));
        let crra0 = PreferenceSpec::crra(0.0, 0.0, 0.9).unwrap();
        assert_eq!(crra0.utility(1.0).unwrap(), 1.0);
        assert!(crra0.utility(-1.0).is_err());
    }

    #[test]
    fn utility_inverse_examples() {
        let cara1 = PreferenceSpec::cara(1.0, 1.0, 0.9).unwrap();
        assert_eq!(cara1.utility_inverse(0.0).unwrap(), 0.0);
        assert!(close(cara1.utility_inverse(0.5).unwrap(), 2f64.ln(), 1e-15));
        assert!(cara1.utility_inverse(1.5).is_err());
        let crra = PreferenceSpec::crra(0.5, 0.5, 0.9).unwrap();
        assert!(close(crra.utility_inverse(2.0).unwrap(), 4.0, 1e-15));
        assert!(crra.utility_inverse(-0.1).is_err());
    }

    #[test]
    fn cara_output_below_supremum() {
        let s = PreferenceSpec::cara(0.3, 2.0, 0.9).unwrap();
        for c in [-3.0, 0.0, 1.0, 10.0, 1e3] {
            assert!(s.utility(c).unwrap() <= 0.5);
        }
        // saturation keeps very negative consumption finite
        assert!(s.utility(-1e6).unwrap().is_finite());
    }

    #[test]
    fn aggregator_examples() {
        for fam in [Family::CaraEz, Family::CrraEz] {
            let s = PreferenceSpec::new(fam, 0.3, 0.3, 0.9).unwrap();
            assert_eq!(s.aggregator(0.7).unwrap(), 0.7);
            assert_eq!(s.aggregator_inverse(0.7).unwrap(), 0.7);
        }
        let cara = PreferenceSpec::cara(2.0, 1.0, 0.9).unwrap();
        assert!(close(cara.aggregator(0.5).unwrap(), 0.375, 1e-14));
        assert!(close(cara.aggregator_inverse(0.375).unwrap(), 0.5, 1e-14));
        let crra = PreferenceSpec::crra(0.5, 0.75, 0.9).unwrap();
        assert!(close(crra.aggregator(4.0).unwrap(), 16.0, 1e-14));
        assert!(crra.aggregator(-1.0).is_err());
        assert!(cara.aggregator(1.5).is_err());
        assert!(cara.aggregator_inverse(0.6).is_err());
    }

    #[test]
    fn psi_prime_examples() {
        let sep = PreferenceSpec::cara(0.4, 0.4, 0.9).unwrap();
        assert_eq!(sep.psi_prime(3.0, -2.0).unwrap(), 0.9);
        let cara = PreferenceSpec::cara(0.5, 1.0, 0.9).unwrap();
        assert!(cara.psi_prime(0.0, 0.0).unwrap() <= 0.9f64.powf(0.5) + 1e-15);
        let crra = PreferenceSpec::crra(0.8, 0.5, 0.9).unwrap();
        assert!(crra.psi_prime(1.0, 1.0).unwrap() <= 0.9f64.powf(0.4) + 1e-15);
    }

    #[test]
    fn psi_prime_at_cara_supremum() {
        // Late resolution: derivative vanishes at z = 1/α.
        let late = PreferenceSpec::cara(0.2, 0.5, 0.9).unwrap();
        assert_eq!(late.psi_prime(1.0, 1.0 / 0.2).unwrap(), 0.0);
        let early = PreferenceSpec::cara(0.5, 0.2, 0.9).unwrap();
        assert!(early.psi_prime(1.0, 1.0 / 0.5).unwrap().is_infinite());
    }

    #[test]
    fn arrow_pratt_examples() {
        let sep = PreferenceSpec::cara(0.3, 0.3, 0.9).unwrap();
        assert_eq!(sep.arrow_pratt(0.3).unwrap(), 0.0);
        let cara = PreferenceSpec::cara(1.0, 0.5, 0.9).unwrap();
        assert!(close(cara.arrow_pratt(0.0).unwrap(), 0.5, 1e-15));
        assert!(cara.arrow_pratt(2.0).is_err());
        let crra = PreferenceSpec::crra(0.5, 0.5, 0.9).unwrap();
        assert_eq!(crra.arrow_pratt(2.0).unwrap(), 0.0);
        let crra2 = PreferenceSpec::crra(0.8, 0.5, 0.9).unwrap();
        assert!(crra2.arrow_pratt(0.0).is_err());
    }

    #[test]
    fn timing_examples() {
        let fitted = PreferenceSpec::cara(0.1023, 0.5555, 0.9).unwrap();
        assert_eq!(fitted.timing_preference(), Timing::Late);
        assert_eq!(
            PreferenceSpec::crra(0.3, 0.3, 0.9).unwrap().timing_preference(),
            Timing::Indifferent
        );
        assert_eq!(
            PreferenceSpec::crra(0.8, 0.2, 0.9).unwrap().timing_preference(),
            Timing::Early
        );
    }

    #[test]
    fn lottery_examples() {
        let p = TwoPeriodLottery::coin_flip(Resolution::Period1);
        let q = TwoPeriodLottery::coin_flip(Resolution::Period2);
        let sep = PreferenceSpec::cara(0.4, 0.4, 0.9).unwrap();
        assert!((sep.lottery_value(&p).unwrap() - sep.lottery_value(&q).unwrap()).abs() < 1e-14);
        let late = PreferenceSpec::cara(0.1, 0.6, 0.9).unwrap();
        assert!(late.lottery_value(&q).unwrap() > late.lottery_value(&p).unwrap());
        let early = PreferenceSpec::cara(0.6, 0.1, 0.9).unwrap();
        assert!(early.lottery_value(&p).unwrap() > early.lottery_value(&q).unwrap());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        assert!(PreferenceSpec::crra(0.2, 1.0, 0.9).is_err());
        assert!(PreferenceSpec::crra(1.2, 0.5, 0.9).is_err());
        assert!(PreferenceSpec::cara(-0.1, 0.5, 0.9).is_err());
        assert!(PreferenceSpec::cara(0.1, 0.5, 1.0).is_err());
        assert!(PreferenceSpec::cara(0.1, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn crra_log_limit_is_increasing() {
        let s = PreferenceSpec::crra(1.0, 0.5, 0.9).unwrap();
        assert!(s.aggregator(2.0).unwrap() > s.aggregator(1.0).unwrap());
        assert!(close(s.aggregator_inverse(s.aggregator(3.0).unwrap()).unwrap(), 3.0, 1e-14));
        assert!(close(s.arrow_pratt(2.0).unwrap(), 0.5, 1e-15));
    }

    #[test]
    fn fingerprint_distinguishes_specs() {
        let a = PreferenceSpec::cara(0.1, 0.5, 0.9).unwrap();
        let b = PreferenceSpec::cara(0.1, 0.5000001, 0.9).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.fingerprint());
    }
}
