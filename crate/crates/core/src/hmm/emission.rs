//! Conjugate matrix-normal inverse-Wishart machinery for AR state emissions.
//!
//! Each state k emits `y_t = A_k · x_t + e_t`, `e_t ~ N(0, Σ_k)`, where `x_t`
//! stacks the previous `r` observations. The MNIW prior is conjugate, so
//! per-state posteriors, posterior draws, and the collapsed marginal
//! likelihood of assigned data are all closed-form.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::Result;
use crate::mathx::{cholesky, inv_spd, ln_multigamma, logdet_spd, solve_spd};

/// MNIW prior: `A | Σ ~ MN(M, Σ, K0⁻¹)`, `Σ ~ IW(ν0, S0)`.
#[derive(Debug, Clone)]
pub struct MniwPrior {
    pub mean: Array2<f64>,      // d×p
    pub col_precision: Array2<f64>, // K0, p×p
    pub scale: Array2<f64>,     // S0, d×d
    pub dof: f64,               // ν0 > d−1
}

impl MniwPrior {
    /// Isotropic prior used by the sampler: zero mean, `K0 = I/a_scale`,
    /// `S0 = noise_scale·I`.
    pub fn isotropic(d: usize, p: usize, a_scale: f64, noise_scale: f64, dof: f64) -> Self {
        MniwPrior {
            mean: Array2::zeros((d, p)),
            col_precision: Array2::eye(p) / a_scale,
            scale: Array2::eye(d) * noise_scale,
            dof,
        }
    }
}

/// Additive sufficient statistics of regression data assigned to one state.
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub sxx: Array2<f64>, // ΣxxT, p×p
    pub syx: Array2<f64>, // ΣyxT, d×p
    pub syy: Array2<f64>, // ΣyyT, d×d
    pub n: f64,
}

impl SuffStats {
    pub fn zeros(d: usize, p: usize) -> Self {
        SuffStats {
            sxx: Array2::zeros((p, p)),
            syx: Array2::zeros((d, p)),
            syy: Array2::zeros((d, d)),
            n: 0.0,
        }
    }

    pub fn add(&mut self, y: &ArrayView1<f64>, x: &ArrayView1<f64>) {
        let d = y.len();
        let p = x.len();
        for a in 0..p {
            for b in 0..p {
                self.sxx[[a, b]] += x[a] * x[b];
            }
        }
        for a in 0..d {
            for b in 0..p {
                self.syx[[a, b]] += y[a] * x[b];
            }
        }
        for a in 0..d {
            for b in 0..d {
                self.syy[[a, b]] += y[a] * y[b];
            }
        }
        self.n += 1.0;
    }

    pub fn merge(&mut self, other: &SuffStats) {
        self.sxx += &other.sxx;
        self.syx += &other.syx;
        self.syy += &other.syy;
        self.n += other.n;
    }
}

/// Posterior MNIW parameters after conditioning on sufficient statistics.
#[derive(Debug, Clone)]
pub struct MniwPosterior {
    pub mean: Array2<f64>,          // M_n, d×p
    pub col_precision: Array2<f64>, // K_n, p×p
    pub scale: Array2<f64>,         // S_n, d×d
    pub dof: f64,                   // ν_n
}

pub fn posterior(prior: &MniwPrior, stats: &SuffStats) -> Result<MniwPosterior> {
    let kn = &prior.col_precision + &stats.sxx;
    // C = M·K0 + Syx, M_n = C·K_n⁻¹  (solve K_n·M_nᵀ = Cᵀ)
    let c = prior.mean.dot(&prior.col_precision) + &stats.syx;
    let mn_t = solve_spd(&kn.view(), &c.t().to_owned().view())?;
    let mn = mn_t.t().to_owned();
    let mkm = prior.mean.dot(&prior.col_precision).dot(&prior.mean.t());
    let mnknmn = mn.dot(&kn).dot(&mn.t());
    let mut sn = &prior.scale + &stats.syy + &mkm - &mnknmn;
    // symmetrize against round-off
    let snt = sn.t().to_owned();
    sn = (&sn + &snt) * 0.5;
    Ok(MniwPosterior { mean: mn, col_precision: kn, scale: sn, dof: prior.dof + stats.n })
}

/// Collapsed log marginal likelihood of the data summarized by `stats` under
/// the MNIW prior (A and Σ integrated out).
pub fn log_marginal(prior: &MniwPrior, stats: &SuffStats) -> Result<f64> {
    let d = prior.mean.nrows();
    let post = posterior(prior, stats)?;
    let n = stats.n;
    let ld_k0 = logdet_spd(&prior.col_precision.view())?;
    let ld_kn = logdet_spd(&post.col_precision.view())?;
    let ld_s0 = logdet_spd(&prior.scale.view())?;
    let ld_sn = logdet_spd(&post.scale.view())?;
    Ok(-0.5 * n * d as f64 * std::f64::consts::PI.ln()
        + 0.5 * d as f64 * (ld_k0 - ld_kn)
        + 0.5 * prior.dof * ld_s0
        - 0.5 * post.dof * ld_sn
        + ln_multigamma(d, 0.5 * post.dof)
        - ln_multigamma(d, 0.5 * prior.dof))
}

/// One AR state's instantiated emission parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArState {
    /// d×p lag coefficient matrix (lag blocks concatenated column-wise).
    #[serde(with = "super::array2_serde")]
    pub a: Array2<f64>,
    /// d×d noise covariance.
    #[serde(with = "super::array2_serde")]
    pub sigma: Array2<f64>,
}

impl ArState {
    pub fn channels(&self) -> usize {
        self.a.nrows()
    }
}

/// Posterior mean point estimate: `A = M_n`, `Σ = S_n / (ν_n − d − 1)`.
pub fn posterior_mean(post: &MniwPosterior) -> ArState {
    let d = post.mean.nrows();
    let denom = (post.dof - d as f64 - 1.0).max(1.0);
    ArState { a: post.mean.clone(), sigma: &post.scale / denom }
}

/// Draw (A, Σ) from the MNIW posterior.
pub fn sample_posterior<R: Rng>(post: &MniwPosterior, rng: &mut R) -> Result<ArState> {
    let d = post.mean.nrows();
    let p = post.mean.ncols();
    // Σ ~ IW(ν_n, S_n): draw W ~ Wishart(ν_n, S_n⁻¹) via Bartlett, invert.
    let psi = inv_spd(&post.scale.view())?;
    let l = cholesky(&psi.view())?;
    let mut t = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        let chi = ChiSquared::new(post.dof - i as f64).map_err(|e| {
            crate::error::Error::Degenerate(format!("wishart dof too small: {e}"))
        })?;
        t[[i, i]] = chi.sample(rng).sqrt();
        for j in 0..i {
            t[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let lt = l.dot(&t);
    let w = lt.dot(&lt.t());
    let sigma = inv_spd(&w.view())?;
    let sigma = (&sigma + &sigma.t().to_owned()) * 0.5;

    // A | Σ ~ MN(M_n, Σ, K_n⁻¹)
    let l_sigma = cholesky(&sigma.view())?;
    let kn_inv = inv_spd(&post.col_precision.view())?;
    let l_v = cholesky(&kn_inv.view())?;
    let mut z = Array2::<f64>::zeros((d, p));
    for v in z.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let a = &post.mean + &l_sigma.dot(&z).dot(&l_v.t());
    Ok(ArState { a, sigma })
}

/// Cached per-state quantities for fast Gaussian log-density evaluation.
#[derive(Debug, Clone)]
pub struct EmissionEval {
    pub a: Array2<f64>,
    sigma_inv: Array2<f64>,
    log_norm: f64, // −½(logdet Σ + d ln 2π)
}

impl EmissionEval {
    pub fn new(state: &ArState) -> Result<EmissionEval> {
        let d = state.sigma.nrows();
        let sigma_inv = inv_spd(&state.sigma.view())?;
        let logdet = logdet_spd(&state.sigma.view())?;
        Ok(EmissionEval {
            a: state.a.clone(),
            sigma_inv,
            log_norm: -0.5 * (logdet + d as f64 * (2.0 * std::f64::consts::PI).ln()),
        })
    }

    /// log N(y; A·x, Σ)
    pub fn log_density(&self, y: &ArrayView1<f64>, x: &ArrayView1<f64>) -> f64 {
        let d = y.len();
        let p = x.len();
        let mut resid = [0.0f64; 8];
        debug_assert!(d <= 8);
        for i in 0..d {
            let mut pred = 0.0;
            for j in 0..p {
                pred += self.a[[i, j]] * x[j];
            }
            resid[i] = y[i] - pred;
        }
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += resid[i] * self.sigma_inv[[i, j]] * resid[j];
            }
        }
        self.log_norm - 0.5 * q
    }
}

/// Gaussian log-density with zero mean, used by tests and degenerate paths.
pub fn gaussian_log_density(y: &ArrayView1<f64>, sigma: &ArrayView2<f64>) -> Result<f64> {
    let d = y.len();
    let inv = inv_spd(sigma)?;
    let logdet = logdet_spd(sigma)?;
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += y[i] * inv[[i, j]] * y[j];
        }
    }
    Ok(-0.5 * (q + logdet + d as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Draw y ~ N(A·x, Σ).
pub fn sample_emission<R: Rng>(
    state: &ArState,
    x: &ArrayView1<f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let d = state.sigma.nrows();
    let l = cholesky(&state.sigma.view())?;
    let mut y = Array1::<f64>::zeros(d);
    let mut z = Array1::<f64>::zeros(d);
    for v in z.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    for i in 0..d {
        let mut pred = 0.0;
        for j in 0..x.len() {
            pred += state.a[[i, j]] * x[j];
        }
        let mut noise = 0.0;
        for j in 0..=i {
            noise += l[[i, j]] * z[j];
        }
        y[i] = pred + noise;
    }
    Ok(y)
}
