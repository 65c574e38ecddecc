//! Gaussian kernel density smoothing of a pixel's discrete depth
//! distribution, with analytic derivatives for the solver's unary term.

use std::f64::consts::PI;

/// Default kernel bandwidth in metres.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Floor applied to the density before taking its logarithm.
pub const DENSITY_FLOOR: f64 = 1e-30;

/// Kernels further than this many bandwidths from the query are skipped by
/// the windowed evaluator. exp(−32) keeps the truncation below 1e-13.
pub const WINDOW_SIGMAS: f64 = 8.0;

/// Windowed densities below this are recomputed over every kernel.
pub const WINDOW_FALLBACK_DENSITY: f64 = 1e-6;

/// One pixel's distribution viewed as a mixture of Gaussians centred at the
/// bin midpoints (linear depth).
#[derive(Debug, Clone, Copy)]
pub struct SmoothedRay<'a> {
    pub weights: &'a [f64],
    pub centers: &'a [f64],
    pub sigma: f64,
}

impl<'a> SmoothedRay<'a> {
    pub fn new(weights: &'a [f64], centers: &'a [f64], sigma: f64) -> Self {
        debug_assert_eq!(weights.len(), centers.len());
        debug_assert!(sigma > 0.0);
        Self {
            weights,
            centers,
            sigma,
        }
    }

    /// f(d) = Σ_k w_k N(d; c_k, σ), summed over every kernel.
    pub fn pdf_value(&self, d: f64) -> f64 {
        self.pdf_and_derivative_in(d, 0, self.centers.len()).0
    }

    /// f'(d) = Σ_k w_k N(d; c_k, σ)(c_k − d)/σ².
    pub fn pdf_derivative(&self, d: f64) -> f64 {
        self.pdf_and_derivative_in(d, 0, self.centers.len()).1
    }

    /// (−ln f(d), −f'(d)/f(d)) with the density floored at [`DENSITY_FLOOR`].
    pub fn neg_log_pdf_and_grad(&self, d: f64) -> (f64, f64) {
        let (f, df) = self.pdf_and_derivative_in(d, 0, self.centers.len());
        neg_log(f, df)
    }

    /// Same as [`SmoothedRay::neg_log_pdf_and_grad`] but only visits
    /// kernels within [`WINDOW_SIGMAS`] of `d`. Requires sorted centres.
    /// Falls back to the full sum where the windowed density is below
    /// [`WINDOW_FALLBACK_DENSITY`], so truncation stays negligible relative
    /// to the density.
    pub fn neg_log_pdf_and_grad_windowed(&self, d: f64) -> (f64, f64) {
        let (lo, hi) = window(self.centers, d, self.sigma);
        let (f, df) = self.pdf_and_derivative_in(d, lo, hi);
        if f < WINDOW_FALLBACK_DENSITY {
            return self.neg_log_pdf_and_grad(d);
        }
        neg_log(f, df)
    }

    #[inline]
    fn pdf_and_derivative_in(&self, d: f64, lo: usize, hi: usize) -> (f64, f64) {
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let norm = 1.0 / (self.sigma * (2.0 * PI).sqrt());
        let mut f = 0.0;
        let mut df = 0.0;
        for (&w, &c) in self.weights[lo..hi].iter().zip(&self.centers[lo..hi]) {
            if w == 0.0 {
                continue;
            }
            let r = c - d;
            let g = w * (-0.5 * r * r * inv_var).exp();
            f += g;
            df += g * r;
        }
        (f * norm, df * norm * inv_var)
    }
}

#[inline]
fn neg_log(f: f64, df: f64) -> (f64, f64) {
    let floored = f.max(DENSITY_FLOOR);
    (-floored.ln(), -df / floored)
}

/// Index range of sorted `centers` within `WINDOW_SIGMAS·sigma` of `d`.
#[inline]
pub(crate) fn window(centers: &[f64], d: f64, sigma: f64) -> (usize, usize) {
    let reach = WINDOW_SIGMAS * sigma;
    let lo = centers.partition_point(|&c| c < d - reach);
    let hi = centers.partition_point(|&c| c <= d + reach);
    (lo, hi)
}

/// Density of N(μ, σ) at `x`.
pub fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}
