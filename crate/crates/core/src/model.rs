//! Model parameters for both mean-field models and the matrix coefficients
//! of the mixed-population system.

use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::linalg::{Mat2, Vec2};

/// Mixed-individual model: one population, altruism level `lambda`.
///
/// State dynamics `dX = (b_alpha a + b_X X + b_mu (lambda Xbar + (1 - lambda) E[X])) dt + sigma dW`,
/// running cost `c_alpha/2 a^2 + c_X/2 X^2 + c_mu/2 (lambda Xbar^2 + (1 - lambda) E[X]^2)`,
/// terminal cost `c_T/2 X_T^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiParams {
    pub b_alpha: f64,
    #[serde(rename = "b_X")]
    pub b_x: f64,
    pub b_mu: f64,
    pub sigma: f64,
    pub c_alpha: f64,
    #[serde(rename = "c_X")]
    pub c_x: f64,
    pub c_mu: f64,
    #[serde(rename = "c_T")]
    pub c_t: f64,
    pub lambda: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub mu0_mean: f64,
    pub mu0_var: f64,
}

impl MiParams {
    /// Every coefficient equal to one, unit horizon, unit noise, initial
    /// law concentrated at 1.
    pub fn unit(lambda: f64) -> Self {
        Self {
            b_alpha: 1.0,
            b_x: 1.0,
            b_mu: 1.0,
            sigma: 1.0,
            c_alpha: 1.0,
            c_x: 1.0,
            c_mu: 1.0,
            c_t: 1.0,
            lambda,
            horizon: 1.0,
            mu0_mean: 1.0,
            mu0_var: 0.0,
        }
    }

    /// MI model carrying one group's coefficients.
    pub fn from_group(group: &GroupParams, lambda: f64, horizon: f64) -> Self {
        Self {
            b_alpha: group.b_alpha,
            b_x: group.b_x,
            b_mu: group.b_mu,
            sigma: group.sigma,
            c_alpha: group.c_alpha,
            c_x: group.c_x,
            c_mu: group.c_mu,
            c_t: group.c_t,
            lambda,
            horizon,
            mu0_mean: group.mu0_mean,
            mu0_var: group.mu0_var,
        }
    }

    /// Checks every standing assumption, reporting the first violation.
    pub fn validate(self) -> Result<Self, ParamError> {
        let finite = [
            ("b_alpha", self.b_alpha),
            ("b_X", self.b_x),
            ("b_mu", self.b_mu),
            ("sigma", self.sigma),
            ("c_alpha", self.c_alpha),
            ("c_X", self.c_x),
            ("c_mu", self.c_mu),
            ("c_T", self.c_t),
            ("lambda", self.lambda),
            ("T", self.horizon),
            ("mu0_mean", self.mu0_mean),
            ("mu0_var", self.mu0_var),
        ];
        check_finite(&finite)?;
        check_common(
            self.b_alpha,
            self.sigma,
            [self.c_alpha, self.c_x, self.c_mu, self.c_t],
            self.mu0_var,
        )?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ParamError::LambdaOutOfRange);
        }
        if self.horizon <= 0.0 {
            return Err(ParamError::NonPositive("T"));
        }
        Ok(self)
    }

    /// `b_alpha^2 / c_alpha`: how strongly the costate feeds back into the drift.
    pub fn control_authority(&self) -> f64 {
        self.b_alpha * self.b_alpha / self.c_alpha
    }

    /// `b_alpha / c_alpha`: the best response is `-gain_factor * Y`.
    pub fn gain_factor(&self) -> f64 {
        self.b_alpha / self.c_alpha
    }
}

/// Coefficients of one group in the mixed-population model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupParams {
    pub b_alpha: f64,
    #[serde(rename = "b_X")]
    pub b_x: f64,
    pub b_mu: f64,
    pub sigma: f64,
    pub c_alpha: f64,
    #[serde(rename = "c_X")]
    pub c_x: f64,
    pub c_mu: f64,
    #[serde(rename = "c_T")]
    pub c_t: f64,
    pub mu0_mean: f64,
    pub mu0_var: f64,
}

impl GroupParams {
    pub fn unit() -> Self {
        Self {
            b_alpha: 1.0,
            b_x: 1.0,
            b_mu: 1.0,
            sigma: 1.0,
            c_alpha: 1.0,
            c_x: 1.0,
            c_mu: 1.0,
            c_t: 1.0,
            mu0_mean: 1.0,
            mu0_var: 0.0,
        }
    }

    fn validate(&self) -> Result<(), ParamError> {
        check_finite(&[
            ("b_alpha", self.b_alpha),
            ("b_X", self.b_x),
            ("b_mu", self.b_mu),
            ("sigma", self.sigma),
            ("c_alpha", self.c_alpha),
            ("c_X", self.c_x),
            ("c_mu", self.c_mu),
            ("c_T", self.c_t),
            ("mu0_mean", self.mu0_mean),
            ("mu0_var", self.mu0_var),
        ])?;
        check_common(
            self.b_alpha,
            self.sigma,
            [self.c_alpha, self.c_x, self.c_mu, self.c_t],
            self.mu0_var,
        )
    }

    pub fn control_authority(&self) -> f64 {
        self.b_alpha * self.b_alpha / self.c_alpha
    }

    pub fn gain_factor(&self) -> f64 {
        self.b_alpha / self.c_alpha
    }
}

/// Mixed-population model: a fraction `p` of non-cooperative agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpParams {
    pub nc: GroupParams,
    pub c: GroupParams,
    pub p: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl MpParams {
    /// Both groups with unit coefficients.
    pub fn symmetric(p: f64) -> Self {
        Self {
            nc: GroupParams::unit(),
            c: GroupParams::unit(),
            p,
            horizon: 1.0,
        }
    }

    pub fn validate(self) -> Result<Self, ParamError> {
        let wrap = |group: &'static str| {
            move |e: ParamError| ParamError::Group {
                group,
                source: Box::new(e),
            }
        };
        self.nc.validate().map_err(wrap("non-cooperative"))?;
        self.c.validate().map_err(wrap("cooperative"))?;
        check_finite(&[("p", self.p), ("T", self.horizon)])?;
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ParamError::ProportionOutOfRange);
        }
        if self.horizon <= 0.0 {
            return Err(ParamError::NonPositive("T"));
        }
        Ok(self)
    }

    pub fn group(&self, g: Group) -> &GroupParams {
        match g {
            Group::NonCooperative => &self.nc,
            Group::Cooperative => &self.c,
        }
    }

    pub fn initial_means(&self) -> Vec2 {
        Vec2::new(self.nc.mu0_mean, self.c.mu0_mean)
    }

    /// Weights of the two group means in the population mean.
    pub fn mixing(&self) -> [f64; 2] {
        [self.p, 1.0 - self.p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    NonCooperative,
    Cooperative,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::NonCooperative, Group::Cooperative];

    pub fn index(self) -> usize {
        match self {
            Group::NonCooperative => 0,
            Group::Cooperative => 1,
        }
    }
}

fn check_finite(fields: &[(&'static str, f64)]) -> Result<(), ParamError> {
    match fields.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, _)) => Err(ParamError::NonFinite(name)),
        None => Ok(()),
    }
}

fn check_common(b_alpha: f64, sigma: f64, costs: [f64; 4], var: f64) -> Result<(), ParamError> {
    if b_alpha == 0.0 {
        return Err(ParamError::ZeroControlGain);
    }
    if sigma < 0.0 {
        return Err(ParamError::Negative("sigma"));
    }
    for (name, c) in ["c_alpha", "c_X", "c_mu", "c_T"].into_iter().zip(costs) {
        if c <= 0.0 {
            return Err(ParamError::NonPositive(name));
        }
    }
    if var < 0.0 {
        return Err(ParamError::Negative("mu0_var"));
    }
    Ok(())
}

/// Constant matrix coefficients of the mixed-population forward-backward
/// system, with row/column order (non-cooperative, cooperative).
///
/// `k` holds `b_alpha / c_alpha` per group; the equilibrium control is
/// `-k (A x + B xbar + C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpMatrices {
    pub m1: Mat2,
    pub m2: Mat2,
    pub m3: Mat2,
    pub m4: Mat2,
    pub m5: Mat2,
    pub m6: Mat2,
    pub k: Mat2,
}

pub fn build_mp_matrices(params: &MpParams) -> MpMatrices {
    let (nc, c, p) = (&params.nc, &params.c, params.p);
    let q = 1.0 - p;
    MpMatrices {
        m1: Mat2::diag(nc.b_x, c.b_x),
        m2: Mat2::diag(-nc.control_authority(), -c.control_authority()),
        m3: Mat2::new(p * nc.b_mu, q * nc.b_mu, p * c.b_mu, q * c.b_mu),
        m4: Mat2::diag(-nc.c_x, -c.c_x),
        m5: Mat2::new(0.0, 0.0, 2.0 * q * p * c.c_mu, 2.0 * q * q * c.c_mu),
        m6: Mat2::new(0.0, 0.0, 0.0, c.b_mu * q),
        k: Mat2::diag(nc.gain_factor(), c.gain_factor()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_model_is_valid() {
        assert!(MiParams::unit(0.5).validate().is_ok());
        assert!(MpParams::symmetric(0.5).validate().is_ok());
    }

    #[test]
    fn mi_violations_are_named() {
        let mut p = MiParams::unit(0.5);
        p.c_mu = 0.0;
        assert_eq!(p.validate().unwrap_err().to_string(), "c_mu must be > 0");

        let p = MiParams::unit(1.5);
        let err = p.validate().unwrap_err();
        assert_eq!(err.to_string(), "lambda out of [0,1]");
        assert_eq!(err.field(), "lambda");

        let mut p = MiParams::unit(0.5);
        p.b_alpha = 0.0;
        assert_eq!(p.validate().unwrap_err(), ParamError::ZeroControlGain);

        let mut p = MiParams::unit(0.5);
        p.horizon = -1.0;
        assert_eq!(p.validate().unwrap_err().field(), "T");

        let mut p = MiParams::unit(0.5);
        p.sigma = f64::NAN;
        assert_eq!(p.validate().unwrap_err(), ParamError::NonFinite("sigma"));
    }

    #[test]
    fn mp_violations_are_named() {
        let err = MpParams::symmetric(-0.1).validate().unwrap_err();
        assert_eq!(err.to_string(), "p out of [0,1]");

        let mut p = MpParams::symmetric(0.5);
        p.c.b_alpha = 0.0;
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("b_alpha must be nonzero"), "{err}");
        assert!(err.to_string().starts_with("cooperative"));
        assert_eq!(err.field(), "b_alpha");
    }

    #[test]
    fn matrices_at_full_non_cooperation_drop_coupling() {
        let m = build_mp_matrices(&MpParams::symmetric(1.0));
        assert_eq!(m.m5, Mat2::ZERO);
        assert_eq!(m.m6, Mat2::ZERO);
    }

    #[test]
    fn matrices_for_unit_groups() {
        let m = build_mp_matrices(&MpParams::symmetric(0.5));
        assert_eq!(m.m3, Mat2::new(0.5, 0.5, 0.5, 0.5));
        assert_eq!(m.m2, Mat2::diag(-1.0, -1.0));
        assert_eq!(m.m5, Mat2::new(0.0, 0.0, 0.5, 0.5));
        assert_eq!(m.k, Mat2::IDENTITY);
    }

    #[test]
    fn m6_carries_cooperative_drift_coupling() {
        let mut p = MpParams::symmetric(0.25);
        p.c.b_mu = 2.0;
        assert_eq!(build_mp_matrices(&p).m6, Mat2::new(0.0, 0.0, 0.0, 1.5));
    }

    fn group() -> impl Strategy<Value = GroupParams> {
        (
            prop_oneof![-2.0..-0.1, 0.1..2.0f64],
            -2.0..2.0f64,
            -2.0..2.0f64,
            (0.1..2.0f64, 0.1..2.0f64, 0.1..2.0f64, 0.1..2.0f64),
        )
            .prop_map(|(b_alpha, b_x, b_mu, (c_alpha, c_x, c_mu, c_t))| GroupParams {
                b_alpha,
                b_x,
                b_mu,
                sigma: 0.5,
                c_alpha,
                c_x,
                c_mu,
                c_t,
                mu0_mean: 1.0,
                mu0_var: 0.1,
            })
    }

    proptest! {
        #[test]
        fn matrix_structure(nc in group(), c in group(), p in 0.0..=1.0f64) {
            let params = MpParams { nc, c, p, horizon: 1.0 }.validate().unwrap();
            let m = build_mp_matrices(&params);
            for d in [m.m1, m.m2, m.m4, m.k] {
                prop_assert_eq!(d.max_abs_offdiag(), 0.0);
            }
            prop_assert!(m.m2.0[0][0] < 0.0 && m.m2.0[1][1] < 0.0);
            prop_assert!(m.m4.0[0][0] < 0.0 && m.m4.0[1][1] < 0.0);
            prop_assert_eq!(m.m5.0[0], [0.0, 0.0]);
            prop_assert_eq!(m.m6.0[0], [0.0, 0.0]);
            prop_assert_eq!(m.m6.0[1][0], 0.0);
            prop_assert_eq!(build_mp_matrices(&params), m);
        }

        #[test]
        fn coupling_at_pure_populations(nc in group(), c in group(), pure in prop::bool::ANY) {
            let p = if pure { 1.0 } else { 0.0 };
            let m = build_mp_matrices(&MpParams { nc, c, p, horizon: 1.0 });
            if pure {
                prop_assert_eq!(m.m5, Mat2::ZERO);
                prop_assert_eq!(m.m6, Mat2::ZERO);
            } else {
                // only the cooperative self-interaction survives
                prop_assert_eq!(m.m5.0[1][0], 0.0);
                prop_assert_eq!(m.m6.0[1][0], 0.0);
            }
        }
    }
}
