use serde::{Deserialize, Serialize};

use crate::preferences::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    ThetaD,
    ThetaX,
    Sigma,
    Alpha,
    Rho,
}

impl ParamName {
    pub const ALL: [ParamName; 5] = [
        ParamName::ThetaD,
        ParamName::ThetaX,
        ParamName::Sigma,
        ParamName::Alpha,
        ParamName::Rho,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::ThetaD => "theta_d",
            ParamName::ThetaX => "theta_x",
            ParamName::Sigma => "sigma",
            ParamName::Alpha => "alpha",
            ParamName::Rho => "rho",
        }
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The estimable parameters of the bus model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralParams {
    pub theta_d: f64,
    pub theta_x: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
}

impl Default for StructuralParams {
    fn default() -> Self {
        Self {
            theta_d: 0.05,
            theta_x: 0.1,
            sigma: 1.6,
            alpha: 0.1,
            rho: 0.1,
        }
    }
}

impl StructuralParams {
    pub fn get(&self, p: ParamName) -> f64 {
        match p {
            ParamName::ThetaD => self.theta_d,
            ParamName::ThetaX => self.theta_x,
            ParamName::Sigma => self.sigma,
            ParamName::Alpha => self.alpha,
            ParamName::Rho => self.rho,
        }
    }

    pub fn set(&mut self, p: ParamName, v: f64) {
        match p {
            ParamName::ThetaD => self.theta_d = v,
            ParamName::ThetaX => self.theta_x = v,
            ParamName::Sigma => self.sigma = v,
            ParamName::Alpha => self.alpha = v,
            ParamName::Rho => self.rho = v,
        }
    }
}

/// Map from an unconstrained coordinate `η` to a parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// `θ = e^η`.
    Log,
    /// `θ = 1 - e^η`, for parameters bounded above by one.
    OneMinusExp,
}

impl Transform {
    pub fn for_param(p: ParamName, family: Family) -> Self {
        match (p, family) {
            (ParamName::ThetaD | ParamName::ThetaX, _) => Transform::Identity,
            (ParamName::Sigma, _) => Transform::Log,
            (ParamName::Alpha | ParamName::Rho, Family::CaraEz) => Transform::Log,
            (ParamName::Alpha | ParamName::Rho, Family::CrraEz) => Transform::OneMinusExp,
        }
    }

    pub fn to_natural(self, eta: f64) -> f64 {
        match self {
            Transform::Identity => eta,
            Transform::Log => eta.exp(),
            Transform::OneMinusExp => 1.0 - eta.exp(),
        }
    }

    /// `None` when `theta` lies outside the transform's image.
    pub fn to_unconstrained(self, theta: f64) -> Option<f64> {
        let eta = match self {
            Transform::Identity => theta,
            Transform::Log if theta > 0.0 => theta.ln(),
            Transform::OneMinusExp if theta < 1.0 => (1.0 - theta).ln(),
            _ => return None,
        };
        eta.is_finite().then_some(eta)
    }

    /// `|dθ/dη|`.
    pub fn jacobian(self, eta: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log | Transform::OneMinusExp => eta.exp(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_round_trip() {
        for t in [Transform::Identity, Transform::Log, Transform::OneMinusExp] {
            for theta in [0.3, 0.9, 0.01] {
                let eta = t.to_unconstrained(theta).unwrap();
                assert!((t.to_natural(eta) - theta).abs() < 1e-14);
            }
        }
        assert!(Transform::Log.to_unconstrained(0.0).is_none());
        assert!(Transform::OneMinusExp.to_unconstrained(1.0).is_none());
        assert!(Transform::OneMinusExp.to_natural(5.0) < 1.0);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        for t in [Transform::Identity, Transform::Log, Transform::OneMinusExp] {
            let eta = -0.4;
            let fd = (t.to_natural(eta + 1e-6) - t.to_natural(eta - 1e-6)) / 2e-6;
            assert!((fd.abs() - t.jacobian(eta)).abs() < 1e-8);
        }
    }
}
