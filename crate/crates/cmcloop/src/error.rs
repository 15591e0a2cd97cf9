use crate::linalg::LinalgError;

/// A spectral parameter value carried in error messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda(pub f64, pub f64);

impl std::fmt::Display for Lambda {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6e}{:+.6e}i", self.0, self.1)
    }
}

impl<T: crate::Real> From<crate::scalar::C<T>> for Lambda {
    fn from(z: crate::scalar::C<T>) -> Self {
        Lambda(crate::scalar::to_f64(z.re), crate::scalar::to_f64(z.im))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("pole: loop with negative coefficients evaluated at λ = 0")]
    Pole,
    #[error("singular loop: |det| = {0:e} below tolerance")]
    SingularLoop(f64),
    #[error("bandwidth exceeded: truncation residual {0:e}")]
    Bandwidth(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("λ = {0} is too close to the singular segment of the residue")]
    NearSingular(Lambda),
    #[error("resonance at λ = {0}")]
    Resonance(Lambda),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain must shrink to radius {0:e}")]
    ShrinkDomain(f64),
    #[error("invalid residue: {0}")]
    InvalidResidue(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("extraction failed: {0}")]
    Extraction(String),
    #[error("integration failed: {0}")]
    Ode(String),
    #[error("inconsistent result: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
