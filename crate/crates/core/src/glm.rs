//! Fixed-effects linear and logistic regression with optional offsets.
//!
//! Least squares goes through a Householder QR factorisation; the rank is
//! read off the diagonal of `R` and a deficient design is an error rather
//! than a silently dropped column. Logistic regression is IRLS on top of the
//! same weighted least-squares kernel, with step halving so the deviance
//! never increases between iterations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on `|R_ii|` below which a column counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Logistic fits stop once the relative deviance change drops below this.
pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const IRLS_MAX_ITERATIONS: usize = 50;
/// A coefficient larger than this in absolute value signals separation.
pub const SEPARATION_THRESHOLD: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct DesignFit {
    pub coefficients: DVector<f64>,
    pub coef_covariance: DMatrix<f64>,
    /// Fitted mean, offset included.
    pub fitted: DVector<f64>,
    /// Response residuals `y - fitted`.
    pub residuals: DVector<f64>,
    /// Residual sum of squares (Gaussian) or deviance (binomial).
    pub objective: f64,
    pub loglik: f64,
    /// Residual variance estimate for Gaussian fits, 1 for binomial.
    pub scale: f64,
    pub rank: usize,
    /// Objective after each iteration (a single entry for least squares).
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl DesignFit {
    pub fn standard_errors(&self) -> DVector<f64> {
        self.coef_covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// QR factorisation of a design with full column rank.
struct FullRankQr {
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
}

impl FullRankQr {
    fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, m) = x.shape();
        if n <= m {
            return Err(Error::TooFewRows { rows: n, cols: m });
        }
        let qr = x.qr();
        let r = qr.r();
        let diag = r.diagonal();
        let max = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(column) = diag.iter().position(|v| !(v.abs() > RANK_TOLERANCE * max)) {
            return Err(Error::RankDeficient {
                column,
                name: format!("#{column}"),
            });
        }
        Ok(Self { qr, r })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut qty = rhs.clone();
        self.qr.q_tr_mul(&mut qty);
        let m = self.r.ncols();
        let head = qty.rows(0, m).into_owned();
        self.r
            .solve_upper_triangular(&head)
            .expect("triangular factor checked non-singular")
    }

    /// `(R^T R)^{-1}`, the unscaled coefficient covariance.
    fn inverse_gram(&self) -> DMatrix<f64> {
        let m = self.r.ncols();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(m, m))
            .expect("triangular factor checked non-singular");
        &r_inv * r_inv.transpose()
    }
}

/// Least squares of `y - offset` on `x`.
pub fn fit_linear(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    offset: Option<&DVector<f64>>,
) -> Result<DesignFit> {
    let (n, m) = x.shape();
    check_lengths(n, y, offset)?;
    let target = match offset {
        Some(o) => y - o,
        None => y.clone(),
    };
    let qr = FullRankQr::new(x.clone())?;
    let coefficients = qr.solve(&target);
    let linear = x * &coefficients;
    let fitted = match offset {
        Some(o) => &linear + o,
        None => linear,
    };
    let residuals = y - &fitted;
    let rss = residuals.norm_squared();
    let scale = rss / (n - m) as f64;
    let coef_covariance = qr.inverse_gram() * scale;
    Ok(DesignFit {
        coefficients,
        coef_covariance,
        fitted,
        residuals,
        objective: rss,
        loglik: gaussian_loglik(rss, n),
        scale,
        rank: m,
        trace: vec![rss],
        converged: true,
    })
}

/// Maximised Gaussian log-likelihood for a residual sum of squares.
pub fn gaussian_loglik(rss: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0)
}

fn check_lengths(n: usize, y: &DVector<f64>, offset: Option<&DVector<f64>>) -> Result<()> {
    if y.len() != n || offset.is_some_and(|o| o.len() != n) {
        return Err(Error::InvalidData(format!(
            "design has {n} rows but response/offset lengths differ"
        )));
    }
    Ok(())
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Binomial deviance of 0/1 outcomes, computed from the linear predictor
/// so that saturated probabilities stay finite.
pub fn binomial_deviance(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    -2.0 * binomial_loglik(y, eta)
}

pub fn binomial_loglik(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    // log(1 + e^eta) evaluated stably
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &t)| yi * t - softplus(t))
        .sum()
}

/// Logistic regression of 0/1 `y` on `x` with a fixed offset in the linear
/// predictor, by iteratively reweighted least squares.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    offset: Option<&DVector<f64>>,
) -> Result<DesignFit> {
    let (n, m) = x.shape();
    check_lengths(n, y, offset)?;
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData(format!(
            "logistic outcome must be 0 or 1, found {v}"
        )));
    }
    if n <= m {
        return Err(Error::TooFewRows { rows: n, cols: m });
    }
    let zero = DVector::zeros(n);
    let offset = offset.unwrap_or(&zero);
    let predictor = |beta: &DVector<f64>| x * beta + offset;

    let mut beta = DVector::zeros(m);
    let mut eta = predictor(&beta);
    let mut deviance = binomial_deviance(y, &eta);
    let mut trace = vec![deviance];
    let mut converged = false;

    for _ in 0..IRLS_MAX_ITERATIONS {
        let (wx, wz) = working_problem(x, y, &eta, offset);
        let mut candidate = FullRankQr::new(wx)?.solve(&wz);
        let mut cand_eta = predictor(&candidate);
        let mut cand_dev = binomial_deviance(y, &cand_eta);
        let mut halvings = 0;
        while !(cand_dev <= deviance) && halvings < 30 {
            candidate = (&candidate + &beta) * 0.5;
            cand_eta = predictor(&candidate);
            cand_dev = binomial_deviance(y, &cand_eta);
            halvings += 1;
        }
        if !(cand_dev <= deviance) {
            // No descent direction left: we are at the optimum numerically.
            converged = true;
            break;
        }
        let change = (deviance - cand_dev).abs() / (cand_dev.abs() + 0.1);
        beta = candidate;
        eta = cand_eta;
        deviance = cand_dev;
        trace.push(deviance);
        if let Some(b) = beta.iter().find(|b| b.abs() > SEPARATION_THRESHOLD) {
            return Err(Error::Separation(format!(
                "coefficient magnitude {:.3e} exceeds {SEPARATION_THRESHOLD:e}",
                b.abs()
            )));
        }
        if change < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }
    if deviance < 1e-6 * n as f64 {
        return Err(Error::Separation(format!(
            "deviance {deviance:.3e} collapsed to zero with diverging coefficients"
        )));
    }

    let (wx, _) = working_problem(x, y, &eta, offset);
    let coef_covariance = FullRankQr::new(wx)?.inverse_gram();
    let fitted = eta.map(logistic);
    let residuals = y - &fitted;
    Ok(DesignFit {
        coefficients: beta,
        coef_covariance,
        fitted,
        residuals,
        objective: deviance,
        loglik: binomial_loglik(y, &eta),
        scale: 1.0,
        rank: m,
        trace,
        converged,
    })
}

/// `sqrt(W) X` and `sqrt(W) z` for the IRLS working response.
fn working_problem(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    eta: &DVector<f64>,
    offset: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut wx = x.clone();
    let mut wz = DVector::zeros(y.len());
    for i in 0..y.len() {
        let mu = logistic(eta[i]);
        let w = (mu * (1.0 - mu)).max(1e-12);
        let sw = w.sqrt();
        wx.row_mut(i).scale_mut(sw);
        wz[i] = sw * (eta[i] - offset[i] + (y[i] - mu) / w);
    }
    (wx, wz)
}

/// AIC and BIC from a log-likelihood and the true number of estimated
/// parameters.
pub fn information_criteria(loglik: f64, true_param_count: usize, n: usize) -> (f64, f64) {
    let k = true_param_count as f64;
    let aic = -2.0 * loglik + 2.0 * k;
    let bic = -2.0 * loglik + (n as f64).ln() * k;
    (aic, bic)
}
