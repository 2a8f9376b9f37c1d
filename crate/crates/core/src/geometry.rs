//! Primitives of the unit hyperboloid model.
//!
//! A point lives in `R^{n+1}` with the time coordinate at index 0 and
//! satisfies `<x, x>_L = -1`, `x_0 >= 1`, where
//! `<u, v>_L = -u_0 v_0 + sum_{i>=1} u_i v_i`. Curvature is fixed at -1.
//!
//! The checked API works on [`LorentzPoint`] and [`TangentVector`]; the
//! slice helpers at the bottom of the module are the unchecked kernels used
//! by the model and optimizer hot paths.

use crate::error::{Error, Result};

/// Tolerance (relative to `max(1, x_0^2)`) beyond which a vector is rejected
/// as off-manifold or non-tangent. Smaller violations are float rounding.
pub const DOMAIN_TOL: f64 = 1e-6;

/// Tangent vectors with Lorentz norm below this map to their base point.
pub const EXP_MAP_MIN_NORM: f64 = 1e-12;

/// Lorentzian inner product of two ambient vectors.
pub fn lorentz_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.len() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            actual: u.len(),
        });
    }
    Ok(inner(u, v))
}

/// `<x, x>_L + 1`; zero for a point exactly on the hyperboloid.
pub fn manifold_residual(x: &[f64]) -> f64 {
    inner(x, x) + 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint(Vec<f64>);

impl LorentzPoint {
    /// `(1, 0, ..., 0)` in `n` spatial dimensions.
    pub fn origin(spatial_dim: usize) -> Self {
        let mut v = vec![0.0; spatial_dim + 1];
        v[0] = 1.0;
        LorentzPoint(v)
    }

    /// Completes the time coordinate `x_0 = sqrt(1 + |spatial|^2)`.
    pub fn lift(spatial: &[f64]) -> Result<Self> {
        if spatial.is_empty() {
            return Err(Error::Dimension {
                expected: 1,
                actual: 0,
            });
        }
        if spatial.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("spatial coordinates"));
        }
        let mut v = Vec::with_capacity(spatial.len() + 1);
        v.push(0.0);
        v.extend_from_slice(spatial);
        relift(&mut v);
        Ok(LorentzPoint(v))
    }

    /// Wraps an ambient vector after checking it lies on the hyperboloid.
    pub fn from_ambient(ambient: Vec<f64>) -> Result<Self> {
        if ambient.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                actual: ambient.len(),
            });
        }
        if ambient.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ambient coordinates"));
        }
        check_on_manifold(&ambient)?;
        Ok(LorentzPoint(ambient))
    }

    pub fn ambient(&self) -> &[f64] {
        &self.0
    }

    pub fn time(&self) -> f64 {
        self.0[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.0[1..]
    }

    /// Ambient dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn residual(&self) -> f64 {
        manifold_residual(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    ambient: Vec<f64>,
    base: LorentzPoint,
}

impl TangentVector {
    /// Checks `<base, ambient>_L = 0` up to [`DOMAIN_TOL`].
    pub fn new(base: LorentzPoint, ambient: Vec<f64>) -> Result<Self> {
        if ambient.len() != base.dim() {
            return Err(Error::Dimension {
                expected: base.dim(),
                actual: ambient.len(),
            });
        }
        if ambient.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tangent vector"));
        }
        let residual = inner(base.ambient(), &ambient);
        let scale = base.time() * l2_norm(&ambient);
        if residual.abs() > DOMAIN_TOL * scale.max(1.0) {
            return Err(Error::NotTangent { residual });
        }
        Ok(TangentVector { ambient, base })
    }

    pub fn zero(base: LorentzPoint) -> Self {
        TangentVector {
            ambient: vec![0.0; base.dim()],
            base,
        }
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    /// `sqrt(<v, v>_L)`; the Lorentz metric is positive definite on tangent spaces.
    pub fn lorentz_norm(&self) -> f64 {
        inner(&self.ambient, &self.ambient).max(0.0).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        TangentVector {
            ambient: self.ambient.iter().map(|x| x * factor).collect(),
            base: self.base.clone(),
        }
    }
}

fn same_dim(u: &LorentzPoint, v: &LorentzPoint) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(Error::Dimension {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(())
}

/// `arccosh(-<u, v>_L)`, evaluated as `2 asinh(|u - v|_L / 2)` so that
/// nearby points keep full relative precision.
pub fn geodesic_distance(u: &LorentzPoint, v: &LorentzPoint) -> Result<f64> {
    same_dim(u, v)?;
    Ok(geodesic_distance_raw(u.ambient(), v.ambient()))
}

/// Squared Lorentz distance `-2 - 2<u, v>_L`.
pub fn lorentz_sqdist(u: &LorentzPoint, v: &LorentzPoint) -> Result<f64> {
    same_dim(u, v)?;
    Ok(-2.0 - 2.0 * inner(u.ambient(), v.ambient()))
}

/// Normalized defect of the Lorentz triangle inequality through the origin:
/// `(1 - <u, v>_L - u_0 - v_0) / (u_0 v_0)`, bounded in `[-0.5, 2]`.
///
/// Positive exactly when `d^2(u, v) > d^2(0, u) + d^2(0, v)`.
pub fn triangle_score(u: &LorentzPoint, v: &LorentzPoint) -> Result<f64> {
    same_dim(u, v)?;
    Ok(triangle_score_raw(u.ambient(), v.ambient()))
}

/// `(1 - <u, v>_L) / (u_0 v_0)`.
pub fn interaction_term(u: &LorentzPoint, v: &LorentzPoint) -> Result<f64> {
    same_dim(u, v)?;
    Ok((1.0 - inner(u.ambient(), v.ambient())) / (u.time() * v.time()))
}

/// `1/u_0 + 1/v_0`; [`triangle_score`] is `interaction_term - linear_term`.
pub fn linear_term(u: &LorentzPoint, v: &LorentzPoint) -> f64 {
    1.0 / u.time() + 1.0 / v.time()
}

/// Orthogonal projection of an ambient vector onto the tangent space at `x`:
/// `g + <x, g>_L x`.
pub fn tangent_project(x: &LorentzPoint, g: &[f64]) -> Result<TangentVector> {
    if g.len() != x.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            actual: g.len(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projected vector"));
    }
    let mut out = g.to_vec();
    project_in_place(x.ambient(), &mut out);
    Ok(TangentVector {
        ambient: out,
        base: x.clone(),
    })
}

/// Exponential map `cosh(|v|) x + sinh(|v|) v / |v|`.
pub fn exp_map(x: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    if v.ambient.len() != x.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            actual: v.ambient.len(),
        });
    }
    let residual = inner(x.ambient(), &v.ambient);
    let scale = x.time() * l2_norm(&v.ambient);
    if residual.abs() > DOMAIN_TOL * scale.max(1.0) {
        return Err(Error::NotTangent { residual });
    }
    let mut out = x.ambient().to_vec();
    exp_map_in_place(&mut out, &v.ambient);
    if out.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("exponential map"));
    }
    Ok(LorentzPoint(out))
}

fn check_on_manifold(x: &[f64]) -> Result<()> {
    let residual = manifold_residual(x);
    if x[0] <= 0.0 || residual.abs() > DOMAIN_TOL * (x[0] * x[0]).max(1.0) {
        return Err(Error::OffManifold { residual });
    }
    Ok(())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// Unchecked kernels. Callers guarantee equal lengths >= 2.

#[inline]
pub(crate) fn inner(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let spatial: f64 = u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
    spatial - u[0] * v[0]
}

#[inline]
pub(crate) fn geodesic_distance_raw(u: &[f64], v: &[f64]) -> f64 {
    let dt = u[0] - v[0];
    let chord2: f64 = u[1..]
        .iter()
        .zip(&v[1..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        - dt * dt;
    2.0 * (0.5 * chord2.max(0.0).sqrt()).asinh()
}

#[inline]
pub(crate) fn triangle_score_raw(u: &[f64], v: &[f64]) -> f64 {
    (1.0 - inner(u, v) - (u[0] + v[0])) / (u[0] * v[0])
}

/// Recomputes `x_0` from the spatial coordinates.
#[inline]
pub(crate) fn relift(x: &mut [f64]) {
    let sq: f64 = x[1..].iter().map(|c| c * c).sum();
    x[0] = (1.0 + sq).sqrt();
}

#[inline]
pub(crate) fn project_in_place(x: &[f64], g: &mut [f64]) {
    let c = inner(x, g);
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi += c * xi;
    }
}

/// Moves `x` along tangent `v`; `x` is overwritten with the image point.
#[inline]
pub(crate) fn exp_map_in_place(x: &mut [f64], v: &[f64]) {
    let norm = inner(v, v).max(0.0).sqrt();
    if norm < EXP_MAP_MIN_NORM {
        return;
    }
    let (ch, sh) = (norm.cosh(), norm.sinh() / norm);
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi = ch * *xi + sh * vi;
    }
}
