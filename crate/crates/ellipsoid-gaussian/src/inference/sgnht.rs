//! Manifold primitives for the geodesic stochastic-gradient Nosé-Hoover
//! dynamics: exact great-circle flow on the sphere, QR retraction with
//! tangent transport on the Stiefel manifold, and tangent projections.

use nalgebra::{DMatrix, DVector};

/// Project onto the tangent space of the sphere at `mu`.
pub(crate) fn sphere_tangent(mu: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    v - mu.dot(v) * mu
}

/// Exact geodesic flow on the unit sphere for time `t` from `mu` with
/// tangent velocity `v`; returns the new position and transported velocity.
pub(crate) fn sphere_geodesic(mu: &DVector<f64>, v: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>) {
    let speed = v.norm();
    if speed * t.abs() < 1e-300 {
        return (mu.clone(), v.clone());
    }
    let angle = speed * t;
    let dir = v / speed;
    let new_mu = angle.cos() * mu + angle.sin() * &dir;
    let new_v = speed * (-angle.sin() * mu + angle.cos() * &dir);
    let new_mu = &new_mu / new_mu.norm();
    (new_mu, new_v)
}

/// Project onto the tangent space of the Stiefel manifold at `u`.
pub(crate) fn stiefel_tangent(u: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let utz = u.transpose() * z;
    let sym = 0.5 * (&utz + utz.transpose());
    z - u * sym
}

/// QR retraction with the sign convention that makes the factor unique
/// (positive diagonal of R), so the flow is deterministic and continuous.
pub(crate) fn stiefel_retract(u: &DMatrix<f64>, v: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let qr = (u + t * v).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
