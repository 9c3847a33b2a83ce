use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{MeasurementVector, Method, ProfileEstimate};
use crate::error::{Error, Result};
use crate::geometry::SensingMatrix;

/// Unknown of the L1 problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsDomain {
    /// Real power profile constrained to `x >= 0`.
    #[default]
    NonNegative,
    /// Complex amplitudes; power read out as `|x|`.
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsConfig {
    pub domain: CsDomain,
    /// Fixed regularization weight; `None` uses [`default_lambda`].
    pub lambda: Option<f64>,
    /// Multiplier `c` of the default weight.
    pub lambda_scale: f64,
    /// Lower bound on the default weight as a fraction of the smallest
    /// weight that yields the all-zero solution.
    pub lambda_floor: f64,
    pub max_iterations: usize,
    /// Relative objective decrease treated as stalled.
    pub tolerance: f64,
    /// Consecutive stalled iterations before stopping.
    pub patience: usize,
    /// Re-solve the KKT system on the recovered support (nonnegative domain).
    pub polish: bool,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            domain: CsDomain::NonNegative,
            lambda: None,
            lambda_scale: 1.0,
            lambda_floor: 0.01,
            max_iterations: 5000,
            tolerance: 1e-8,
            patience: 10,
            polish: true,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {l}")));
            }
        }
        if !(self.lambda_scale >= 0.0 && self.lambda_scale.is_finite()) {
            return Err(Error::InvalidArgument("lambda_scale must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.lambda_floor) {
            return Err(Error::InvalidArgument("lambda_floor must be in [0, 1)".into()));
        }
        if self.max_iterations == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("max_iterations and patience must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be > 0".into()));
        }
        Ok(())
    }

    /// Weight used for `g`: the fixed value if set, else the default.
    pub fn lambda_for(&self, g: &MeasurementVector, r: &SensingMatrix) -> f64 {
        self.lambda.unwrap_or_else(|| {
            (self.lambda_scale * default_lambda(g, r)).max(self.lambda_floor * zero_threshold(g, r, self.domain))
        })
    }
}

/// Smallest weight for which `x = 0` solves the problem.
pub fn zero_threshold(g: &MeasurementVector, r: &SensingMatrix, domain: CsDomain) -> f64 {
    let c = r.adjoint_apply(&g.values);
    2.0 * match domain {
        CsDomain::NonNegative => c.iter().map(|v| v.re).fold(0.0, f64::max),
        CsDomain::Complex => c.iter().map(|v| v.norm()).fold(0.0, f64::max),
    }
}

/// `sigma * sqrt(2 ln L) * sqrt(N)`: the noise standard deviation scaled by
/// the column norm of `R` and the usual union bound over `L` grid cells.
pub fn default_lambda(g: &MeasurementVector, r: &SensingMatrix) -> f64 {
    let l = r.cols().max(2) as f64;
    g.noise_level.sqrt() * (2.0 * l.ln()).sqrt() * (r.rows() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsSolution {
    pub coefficients: Vec<Complex64>,
    pub estimate: ProfileEstimate,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every iteration (non-increasing).
    pub objective_history: Vec<f64>,
}

/// `||R x - g||^2 + lambda ||x||_1`.
pub fn objective(r: &SensingMatrix, g: &[Complex64], x: &[Complex64], lambda: f64) -> f64 {
    residual_sq(r, g, x) + lambda * x.iter().map(|v| v.norm()).sum::<f64>()
}

fn residual_sq(r: &SensingMatrix, g: &[Complex64], x: &[Complex64]) -> f64 {
    r.apply(x).iter().zip(g).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// L1-regularized profile with default solver settings.
pub fn cs_estimate(g: &MeasurementVector, r: &SensingMatrix, lambda: f64) -> Result<ProfileEstimate> {
    cs_solve(g, r, lambda, &CsConfig::default()).map(|s| s.estimate)
}

/// Monotone FISTA with adaptive restart for
/// `argmin ||R x - g||^2 + lambda ||x||_1`.
pub fn cs_solve(g: &MeasurementVector, r: &SensingMatrix, lambda: f64, config: &CsConfig) -> Result<CsSolution> {
    g.check(r)?;
    config.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let l = r.cols();
    let gv = &g.values;
    let lipschitz = 2.0 * r.spectral_norm_sq();
    let zero = Complex64::new(0.0, 0.0);
    if lipschitz == 0.0 {
        return Err(Error::InvalidArgument("sensing matrix is zero".into()));
    }
    let step = 1.0 / lipschitz;
    let threshold = lambda * step;
    let prox = |v: Complex64| -> Complex64 {
        match config.domain {
            CsDomain::NonNegative => Complex64::new((v.re - threshold).max(0.0), 0.0),
            CsDomain::Complex => {
                let m = v.norm();
                if m <= threshold {
                    zero
                } else {
                    v * ((m - threshold) / m)
                }
            }
        }
    };

    let mut x = vec![zero; l];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = objective(r, gv, &x, lambda);
    let mut history = Vec::new();
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let resid: Vec<Complex64> = r.apply(&y).iter().zip(gv).map(|(a, b)| a - b).collect();
        let grad = r.adjoint_apply(&resid);
        let z: Vec<Complex64> = y
            .iter()
            .zip(&grad)
            .map(|(yi, gi)| prox(yi - gi * (2.0 * step)))
            .collect();
        let fz = objective(r, gv, &z, lambda);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let accepted = fz <= fx;
        let previous = std::mem::take(&mut x);
        let f_prev = fx;
        if accepted {
            let momentum = (t - 1.0) / t_next;
            y = z.iter().zip(&previous).map(|(zi, pi)| zi + (zi - pi) * momentum).collect();
            x = z;
            fx = fz;
            t = t_next;
        } else {
            // Restart momentum from the last accepted iterate.
            x = previous;
            y = x.clone();
            t = 1.0;
        }
        history.push(fx);
        let decrease = (f_prev - fx) / f_prev.abs().max(f64::MIN_POSITIVE);
        if decrease < config.tolerance {
            stalled += 1;
            if stalled >= config.patience {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    if config.polish && config.domain == CsDomain::NonNegative {
        if let Some(p) = polish_nonnegative(r, gv, &x, lambda) {
            let fp = objective(r, gv, &p, lambda);
            if fp < fx {
                x = p;
                fx = fp;
                history.push(fx);
            }
        }
    }

    if history.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-300) {
        return Err(Error::Internal("proximal-gradient objective increased".into()));
    }

    let residual_norm = residual_sq(r, gv, &x).sqrt();
    let profile = match config.domain {
        CsDomain::NonNegative => x.iter().map(|v| v.re).collect(),
        CsDomain::Complex => x.iter().map(|v| v.norm()).collect(),
    };
    Ok(CsSolution {
        estimate: ProfileEstimate {
            profile,
            method: Method::Cs,
            residual_norm,
            converged,
        },
        coefficients: x,
        lambda,
        objective: fx,
        iterations,
        objective_history: history,
    })
}

/// Solves the stationarity conditions on the support of `x`, dropping
/// components that turn negative, until a feasible point remains.
fn polish_nonnegative(r: &SensingMatrix, g: &[Complex64], x: &[Complex64], lambda: f64) -> Option<Vec<Complex64>> {
    let mut support: Vec<usize> = (0..x.len()).filter(|&i| x[i].re > 0.0).collect();
    while !support.is_empty() {
        let sol = restricted_nonnegative_solution(r, g, &support, lambda)?;
        if sol.iter().all(|&v| v > 0.0) {
            let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
            for (&i, v) in support.iter().zip(sol) {
                out[i] = Complex64::new(v, 0.0);
            }
            return Some(out);
        }
        support = support
            .iter()
            .zip(&sol)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&i, _)| i)
            .collect();
    }
    None
}

/// Unconstrained minimizer of `||R_S x - g||^2 + lambda sum(x)` over real
/// `x` on support `S`: `Re(R_S^H R_S) x = Re(R_S^H g) - lambda / 2`.
pub(crate) fn restricted_nonnegative_solution(
    r: &SensingMatrix,
    g: &[Complex64],
    support: &[usize],
    lambda: f64,
) -> Option<Vec<f64>> {
    let k = support.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for n in 0..r.rows() {
        let row = r.row(n);
        for (i, &si) in support.iter().enumerate() {
            b[i] += (row[si].conj() * g[n]).re;
            for (j, &sj) in support.iter().enumerate() {
                a[(i, j)] += (row[si].conj() * row[sj]).re;
            }
        }
    }
    for i in 0..k {
        b[i] -= 0.5 * lambda;
    }
    let chol = a.cholesky()?;
    let sol = chol.solve(&b);
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}
