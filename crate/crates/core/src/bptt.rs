//! Backpropagation through time for [`CellParams`], and a central-difference
//! oracle to check it against.

use crate::cells::{CellGrads, CellParams, GateParams, StepCache};
use crate::error::{check_dim, Error, Result};
use crate::numkit::{axpy, matvec_t_acc, outer_acc, ActivationKind, Vector};
use crate::params::ParamSet;

/// Loss gradient with respect to a cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrad {
    pub dh: Vector,
    pub dc: Vector,
}

impl StateGrad {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            dh: Vector::zeros(hidden_dim),
            dc: Vector::zeros(hidden_dim),
        }
    }
}

/// Gradients of one step given the upstream `(∂L/∂h_t, ∂L/∂c_t)`.
///
/// Returns the parameter gradient of this step alone, the gradient flowing
/// into `(h_{t-1}, c_{t-1})`, and `∂L/∂x_t`.
pub fn backward_step(
    params: &CellParams,
    act: ActivationKind,
    cache: &StepCache,
    upstream: &StateGrad,
) -> Result<(CellGrads, StateGrad, Vector)> {
    let mut grads = params.zeros_like();
    let (prev, dx) = backward_step_acc(params, act, cache, upstream, &mut grads, true)?;
    Ok((grads, prev, dx.expect("dx requested")))
}

/// Like [`backward_step`] but adds the parameter gradient into `grads`.
/// `dx` is only computed when `want_dx` is set.
pub fn backward_step_acc(
    params: &CellParams,
    act: ActivationKind,
    cache: &StepCache,
    upstream: &StateGrad,
    grads: &mut CellGrads,
    want_dx: bool,
) -> Result<(StateGrad, Option<Vector>)> {
    check_structure(params, grads)?;
    let n = params.hidden_dim;
    for (what, len) in [
        ("cache.i", cache.i.len()),
        ("cache.f", cache.f.len()),
        ("cache.o", cache.o.len()),
        ("cache.c_tilde", cache.c_tilde.len()),
        ("cache.c_prev", cache.c_prev.len()),
        ("cache.h_prev", cache.h_prev.len()),
        ("cache.act_c", cache.act_c.len()),
        ("upstream.dh", upstream.dh.len()),
        ("upstream.dc", upstream.dc.len()),
    ] {
        check_dim(what, n, len)?;
    }
    check_dim("cache.x", params.input_dim, cache.x.len())?;

    let mut dz_i = Vector::zeros(n);
    let mut dz_f = Vector::zeros(n);
    let mut dz_o = Vector::zeros(n);
    let mut dz_c = Vector::zeros(n);
    let mut dc_prev = Vector::zeros(n);
    for k in 0..n {
        let (i, f, o) = (cache.i[k], cache.f[k], cache.o[k]);
        let dh = upstream.dh[k];
        let dc = upstream.dc[k] + dh * o * act.derivative_from_output(cache.act_c[k]);
        dz_o[k] = dh * cache.act_c[k] * o * (1.0 - o);
        dz_i[k] = dc * cache.c_tilde[k] * i * (1.0 - i);
        dz_f[k] = dc * cache.c_prev[k] * f * (1.0 - f);
        dz_c[k] = dc * i * act.derivative_from_output(cache.c_tilde[k]);
        dc_prev[k] = dc * f;
    }

    let mut dh_prev = Vector::zeros(n);
    let mut dx = want_dx.then(|| Vector::zeros(params.input_dim));

    let gates = [
        (&params.input_gate, &mut grads.input_gate, &dz_i),
        (&params.forget_gate, &mut grads.forget_gate, &dz_f),
        (&params.output_gate, &mut grads.output_gate, &dz_o),
    ];
    for (gate, grad, dz) in gates {
        gate_backward(gate, grad, dz, cache, &mut dh_prev, dx.as_deref_mut());
    }

    outer_acc(&mut grads.cand_input, &dz_c, &cache.x);
    outer_acc(&mut grads.cand_recurrent, &dz_c, &cache.h_prev);
    axpy(1.0, &dz_c, &mut grads.cand_bias);
    matvec_t_acc(&params.cand_recurrent, &dz_c, &mut dh_prev);
    if let Some(dx) = dx.as_deref_mut() {
        matvec_t_acc(&params.cand_input, &dz_c, dx);
    }

    Ok((
        StateGrad {
            dh: dh_prev,
            dc: dc_prev,
        },
        dx,
    ))
}

fn gate_backward(
    gate: &GateParams,
    grad: &mut GateParams,
    dz: &[f64],
    cache: &StepCache,
    dh_prev: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    if let (Some(w), Some(gw)) = (&gate.input_weights, &mut grad.input_weights) {
        outer_acc(gw, dz, &cache.x);
        if let Some(dx) = dx {
            matvec_t_acc(w, dz, dx);
        }
    }
    if let (Some(u), Some(gu)) = (&gate.recurrent_weights, &mut grad.recurrent_weights) {
        outer_acc(gu, dz, &cache.h_prev);
        matvec_t_acc(u, dz, dh_prev);
    }
    if let (Some(u), Some(gu)) = (&gate.recurrent_diag, &mut grad.recurrent_diag) {
        for k in 0..dz.len() {
            gu[k] += dz[k] * cache.h_prev[k];
            dh_prev[k] += u[k] * dz[k];
        }
    }
    if let Some(gb) = &mut grad.bias {
        axpy(1.0, dz, gb);
    }
}

fn check_structure(params: &CellParams, grads: &CellGrads) -> Result<()> {
    if params.variant != grads.variant
        || params.input_dim != grads.input_dim
        || params.hidden_dim != grads.hidden_dim
    {
        return Err(Error::Config(format!(
            "gradient buffer ({} {}→{}) does not mirror parameters ({} {}→{})",
            grads.variant,
            grads.input_dim,
            grads.hidden_dim,
            params.variant,
            params.input_dim,
            params.hidden_dim
        )));
    }
    Ok(())
}

/// Gradient of a loss over a whole sequence.
///
/// `final_grad` is the gradient with respect to the last state. When
/// `per_step_h_grads` is given, entry `t` is added to `∂L/∂h_t` before step
/// `t` is backpropagated. Parameter gradients are summed over steps; the
/// returned inputs gradients are in forward order.
pub fn backward_sequence(
    params: &CellParams,
    act: ActivationKind,
    caches: &[StepCache],
    final_grad: &StateGrad,
    per_step_h_grads: Option<&[Vector]>,
) -> Result<(CellGrads, Vec<Vector>)> {
    let mut grads = params.zeros_like();
    let dxs = backward_sequence_acc(
        params,
        act,
        caches,
        final_grad,
        per_step_h_grads,
        &mut grads,
        true,
    )?;
    Ok((grads, dxs))
}

/// Accumulating form of [`backward_sequence`]. Returns per-step input
/// gradients only when `want_dx` is set (otherwise an empty vector).
pub fn backward_sequence_acc(
    params: &CellParams,
    act: ActivationKind,
    caches: &[StepCache],
    final_grad: &StateGrad,
    per_step_h_grads: Option<&[Vector]>,
    grads: &mut CellGrads,
    want_dx: bool,
) -> Result<Vec<Vector>> {
    if let Some(extra) = per_step_h_grads {
        check_dim("per-step h gradients", caches.len(), extra.len())?;
    }
    let mut upstream = final_grad.clone();
    let mut dxs = Vec::with_capacity(if want_dx { caches.len() } else { 0 });
    for (t, cache) in caches.iter().enumerate().rev() {
        if let Some(extra) = per_step_h_grads {
            check_dim("per-step h gradient", params.hidden_dim, extra[t].len())?;
            axpy(1.0, &extra[t], &mut upstream.dh);
        }
        let (prev, dx) = backward_step_acc(params, act, cache, &upstream, grads, want_dx)?;
        if let Some(dx) = dx {
            dxs.push(dx);
        }
        upstream = prev;
    }
    dxs.reverse();
    Ok(dxs)
}

/// Central-difference gradient `(L(θ+ε) − L(θ−ε)) / 2ε`, one scalar at a time.
pub fn finite_diff_grads<P, F>(mut loss_fn: F, params: &P, epsilon: f64) -> P
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut work = params.clone();
    let mut out = params.clone();
    let lens: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    for (s, &len) in lens.iter().enumerate() {
        for j in 0..len {
            let orig = work.slices()[s][j];
            work.slices_mut()[s][j] = orig + epsilon;
            let plus = loss_fn(&work);
            work.slices_mut()[s][j] = orig - epsilon;
            let minus = loss_fn(&work);
            work.slices_mut()[s][j] = orig;
            out.slices_mut()[s][j] = (plus - minus) / (2.0 * epsilon);
        }
    }
    out
}
