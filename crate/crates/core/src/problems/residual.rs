//! Differential residuals of the registered equations, built as tape ops so
//! every derivative comes from the autodiff reverse pass.
//!
//! Continuous problems take a coordinate tensor whose columns are (t, x[, y,
//! z]) and per-output columns of the network; discrete problems take the
//! spatial coordinate and the full stage block and differentiate entrywise.

use crate::error::Result;
use crate::precision::Scalar;
use crate::tape::{Tape, Tensor};

/// Viscosity shared by every Burgers variant.
pub const BURGERS_NU: f64 = 0.01 / std::f64::consts::PI;

/// Reaction-diffusion coefficients of the bistable stage residual.
pub const AC_DIFFUSION: f64 = 0.0001;
pub const AC_REACTION: f64 = 5.0;

/// Flow constants of the four-dimensional transport problem.
pub const NS3D_REYNOLDS: f64 = 100.0;
pub const NS3D_PECLET: f64 = 100.0;

/// λ [1,1] times an arbitrary tensor.
fn scale_by<S: Scalar>(tape: &Tape<S>, lambda: Tensor, a: Tensor) -> Result<Tensor> {
    let b = tape.broadcast_scalar(lambda, a.rows(), a.cols())?;
    tape.mul(b, a)
}

/// All first partials of a column y [N,1] in one reverse pass: rows never
/// mix, so ∂(Σy)/∂x is exactly the per-row gradient [N, D].
fn row_gradient<S: Scalar>(tape: &Tape<S>, y: Tensor, x: Tensor) -> Result<Tensor> {
    let s = tape.sum(y);
    Ok(tape.grad(s, &[x])?[0])
}

/// u_t + u·u_x − ν·u_xx for a single-output network over (t, x).
pub fn burgers_forward<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    u: Tensor,
    nu: f64,
) -> Result<Tensor> {
    let u_t = tape.partials(u, x, 0, 1)?;
    let u_x = tape.partials(u, x, 1, 1)?;
    let u_xx = tape.partials(u, x, 1, 2)?;
    let adv = tape.mul(u, u_x)?;
    let lhs = tape.add(u_t, adv)?;
    tape.sub(lhs, tape.mul_scalar(u_xx, nu))
}

/// u_t + λ₁·u·u_x − λ₂·u_xx with both coefficients free.
pub fn burgers_inverse<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    u: Tensor,
    l1: Tensor,
    l2: Tensor,
) -> Result<Tensor> {
    let u_t = tape.partials(u, x, 0, 1)?;
    let u_x = tape.partials(u, x, 1, 1)?;
    let u_xx = tape.partials(u, x, 1, 2)?;
    let adv = scale_by(tape, l1, tape.mul(u, u_x)?)?;
    let lhs = tape.add(u_t, adv)?;
    tape.sub(lhs, scale_by(tape, l2, u_xx)?)
}

/// Real and imaginary residuals of the cubic wave equation for h = u + iv:
/// f_u = u_t + ½·v_xx + (u² + v²)·v and f_v = v_t − ½·u_xx − (u² + v²)·u.
pub fn schrodinger<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    u: Tensor,
    v: Tensor,
) -> Result<(Tensor, Tensor)> {
    let u_t = tape.partials(u, x, 0, 1)?;
    let v_t = tape.partials(v, x, 0, 1)?;
    let u_xx = tape.partials(u, x, 1, 2)?;
    let v_xx = tape.partials(v, x, 1, 2)?;
    let m = tape.add(tape.square(u), tape.square(v))?;
    let f_u = {
        let lhs = tape.add(u_t, tape.mul_scalar(v_xx, 0.5))?;
        tape.add(lhs, tape.mul(m, v)?)?
    };
    let f_v = {
        let lhs = tape.sub(v_t, tape.mul_scalar(u_xx, 0.5))?;
        tape.sub(lhs, tape.mul(m, u)?)?
    };
    Ok((f_u, f_v))
}

/// Planar momentum residuals driven by a stream function: u = ψ_y, v = −ψ_x
/// (so continuity holds identically), with
/// f = u_t + λ₁(u·u_x + v·u_y) + p_x − λ₂(u_xx + u_yy)
/// g = v_t + λ₁(u·v_x + v·v_y) + p_y − λ₂(v_xx + v_yy).
/// Returns (f, g, u, v); the velocities are reused by the data term.
pub fn ns2d<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    psi: Tensor,
    p: Tensor,
    l1: Tensor,
    l2: Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let dpsi = row_gradient(tape, psi, x)?;
    let u = tape.slice_cols(dpsi, 2, 1)?;
    let v = tape.neg(tape.slice_cols(dpsi, 1, 1)?);

    let momentum = |vel: Tensor, pressure_col: usize| -> Result<Tensor> {
        let d = row_gradient(tape, vel, x)?;
        let vel_t = tape.slice_cols(d, 0, 1)?;
        let vel_x = tape.slice_cols(d, 1, 1)?;
        let vel_y = tape.slice_cols(d, 2, 1)?;
        let dxx = row_gradient(tape, vel_x, x)?;
        let dyy = row_gradient(tape, vel_y, x)?;
        let lap = tape.add(tape.slice_cols(dxx, 1, 1)?, tape.slice_cols(dyy, 2, 1)?)?;
        let conv = tape.add(tape.mul(u, vel_x)?, tape.mul(v, vel_y)?)?;
        let dp = row_gradient(tape, p, x)?;
        let p_grad = tape.slice_cols(dp, pressure_col, 1)?;
        let lhs = tape.add(tape.add(vel_t, scale_by(tape, l1, conv)?)?, p_grad)?;
        tape.sub(lhs, scale_by(tape, l2, lap)?)
    };
    let f = momentum(u, 1)?;
    let g = momentum(v, 2)?;
    Ok((f, g, u, v))
}

/// Residuals e1..e5 of passive transport in an incompressible flow over
/// (t, x, y, z): advection-diffusion of c, three momentum components, and the
/// divergence constraint.
pub fn ns3d<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    outs: &[Tensor],
    re: f64,
    pec: f64,
) -> Result<Vec<Tensor>> {
    let (c, u, v, w, p) = (outs[0], outs[1], outs[2], outs[3], outs[4]);
    let dc = row_gradient(tape, c, x)?;
    let du = row_gradient(tape, u, x)?;
    let dv = row_gradient(tape, v, x)?;
    let dw = row_gradient(tape, w, x)?;
    let dp = row_gradient(tape, p, x)?;

    let col = |d: Tensor, j: usize| tape.slice_cols(d, j, 1);
    let convect = |d: Tensor| -> Result<Tensor> {
        let a = tape.mul(u, col(d, 1)?)?;
        let b = tape.mul(v, col(d, 2)?)?;
        let cterm = tape.mul(w, col(d, 3)?)?;
        tape.add(tape.add(a, b)?, cterm)
    };
    let laplacian = |d: Tensor| -> Result<Tensor> {
        let xx = col(row_gradient(tape, col(d, 1)?, x)?, 1)?;
        let yy = col(row_gradient(tape, col(d, 2)?, x)?, 2)?;
        let zz = col(row_gradient(tape, col(d, 3)?, x)?, 3)?;
        tape.add(tape.add(xx, yy)?, zz)
    };
    let transport = |d: Tensor, inv_coeff: f64| -> Result<Tensor> {
        let lhs = tape.add(col(d, 0)?, convect(d)?)?;
        tape.sub(lhs, tape.mul_scalar(laplacian(d)?, inv_coeff))
    };

    let e1 = transport(dc, 1.0 / pec)?;
    let e2 = tape.add(transport(du, 1.0 / re)?, col(dp, 1)?)?;
    let e3 = tape.add(transport(dv, 1.0 / re)?, col(dp, 2)?)?;
    let e4 = tape.add(transport(dw, 1.0 / re)?, col(dp, 3)?)?;
    let e5 = tape.add(tape.add(col(du, 1)?, col(dv, 2)?)?, col(dw, 3)?)?;
    Ok(vec![e1, e2, e3, e4, e5])
}

/// Stage-block residual −u·u_x + ν·u_xx (time derivative eliminated by the
/// quadrature scheme, hence the sign flip relative to the continuous form).
pub fn burgers_stages_forward<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    stages: Tensor,
    nu: f64,
) -> Result<Tensor> {
    let ux = tape.partials_multi(stages, x, 0, 1)?;
    let uxx = tape.partials_multi(stages, x, 0, 2)?;
    let adv = tape.neg(tape.mul(stages, ux)?);
    tape.add(adv, tape.mul_scalar(uxx, nu))
}

/// Stage-block residual −λ₁·u·u_x + λ₂·u_xx.
pub fn burgers_stages_inverse<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    stages: Tensor,
    l1: Tensor,
    l2: Tensor,
) -> Result<Tensor> {
    let ux = tape.partials_multi(stages, x, 0, 1)?;
    let uxx = tape.partials_multi(stages, x, 0, 2)?;
    let adv = tape.neg(scale_by(tape, l1, tape.mul(stages, ux)?)?);
    tape.add(adv, scale_by(tape, l2, uxx)?)
}

/// Stage-block residual 5u − 5u³ + 0.0001·u_xx of the bistable equation.
pub fn allen_cahn_stages<S: Scalar>(tape: &Tape<S>, x: Tensor, stages: Tensor) -> Result<Tensor> {
    let uxx = tape.partials_multi(stages, x, 0, 2)?;
    let cubic = tape.mul_scalar(tape.powi(stages, 3), AC_REACTION);
    let linear = tape.mul_scalar(stages, AC_REACTION);
    tape.add(tape.sub(linear, cubic)?, tape.mul_scalar(uxx, AC_DIFFUSION))
}

/// Stage-block residual −λ₁·u·u_x − λ₂·u_xxx of the dispersive equation.
pub fn kdv_stages<S: Scalar>(
    tape: &Tape<S>,
    x: Tensor,
    stages: Tensor,
    l1: Tensor,
    l2: Tensor,
) -> Result<Tensor> {
    let ux = tape.partials_multi(stages, x, 0, 1)?;
    let uxxx = tape.partials_multi(stages, x, 0, 3)?;
    let adv = tape.neg(scale_by(tape, l1, tape.mul(stages, ux)?)?);
    tape.sub(adv, scale_by(tape, l2, uxxx)?)
}
