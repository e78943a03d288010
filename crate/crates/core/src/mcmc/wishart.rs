//! Inverse-Wishart draws for the random-effect covariance.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hmm::RandomEffects;
use crate::mcmc::PriorSpec;

/// Draws `Σ ~ IW(dof, scale)`, i.e. `Σ⁻¹ ~ Wishart(dof, scale⁻¹)`, through
/// the Bartlett decomposition. The result is exactly symmetric.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(dof: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if scale.ncols() != p || p == 0 {
        return Err(Error::Shape("inverse-Wishart scale must be square".into()));
    }
    if !(dof > (p - 1) as f64) {
        return Err(Error::Config(format!(
            "inverse-Wishart needs dof > {}, got {dof}",
            p - 1
        )));
    }
    let scale_inv = scale
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?;
    let l = scale_inv
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).expect("positive dof");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // Σ⁻¹ = (L A)(L A)ᵀ
    let la = &l * &a;
    let la_inv = la
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Bartlett factor".into()))?;
    let sigma = la_inv.transpose() * la_inv;
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Scale matrix of the random-effect covariance's full conditional:
/// `I + Σ_i Θ_i Θ_iᵀ`.
pub fn sigma_theta_scale(all_re: &[RandomEffects]) -> Matrix2<f64> {
    all_re.iter().fold(Matrix2::identity(), |acc, re| {
        acc + Matrix2::new(re.zeta * re.zeta, re.zeta * re.eta, re.eta * re.zeta, re.eta * re.eta)
    })
}

/// Conjugate draw of the random-effect covariance given the current
/// random effects.
pub fn gibbs_sigma_theta<R: Rng + ?Sized>(
    all_re: &[RandomEffects],
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<Matrix2<f64>> {
    if all_re.iter().any(|re| !re.zeta.is_finite() || !re.eta.is_finite()) {
        return Err(Error::Numerical("non-finite random effect".into()));
    }
    let scale = sigma_theta_scale(all_re);
    let draw = sample_inverse_wishart(
        prior.sigma_theta_dof(all_re.len()),
        &DMatrix::from_column_slice(2, 2, scale.as_slice()),
        rng,
    )?;
    Ok(Matrix2::new(draw[(0, 0)], draw[(0, 1)], draw[(1, 0)], draw[(1, 1)]))
}
