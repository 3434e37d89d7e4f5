//! Randomized gradient sweep: analytic BPTT gradients against central
//! differences for every variant and activation.
//!
//! Each instance is a small random cell (input ≤ 6, hidden ≤ 5, at most four
//! steps) followed by a random dense head and a 3-class softmax cross-entropy.
//! Every cell and head parameter and every input scalar is checked. The
//! central differences are taken on a double-word evaluation of the loss (see
//! [`crate::wide`]) so that small gradient entries are not lost in f64
//! round-off.
//!
//! For relu, an instance is skipped when any relu argument (candidate
//! pre-activation or cell state) is nonzero but within `kink_margin` of zero,
//! since a finite-difference probe there may straddle the kink. Exact zeros are
//! kept: they arise when the candidate is switched off and stay put under
//! small perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bptt::{backward_sequence, StateGrad};
use crate::cells::{forward_sequence, CellParams, CellState, StepCache, Variant};
use crate::error::Result;
use crate::numkit::{matvec_acc, matvec_t_acc, outer_acc, ActivationKind, Vector};
use crate::params::{relative_error, ParamSet};
use crate::trainer::{dense_forward, softmax_xent, DenseParams, Model, ModelGrads};
use crate::wide::central_differences;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Instances that must be checked per (variant, activation) pair.
    pub instances: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub kink_margin: f64,
    pub seed: u64,
    pub max_input: usize,
    pub max_hidden: usize,
    pub max_steps: usize,
    pub classes: usize,
    pub activations: Vec<ActivationKind>,
    pub variants: Vec<Variant>,
    /// Test hook: perturb the analytic gradient for this pair so the sweep
    /// has something to catch.
    pub fault: Option<(Variant, ActivationKind)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            epsilon: 1e-5,
            tolerance: 1e-5,
            kink_margin: 1e-3,
            seed: 0,
            max_input: 6,
            max_hidden: 5,
            max_steps: 4,
            classes: 3,
            activations: ActivationKind::ALL.to_vec(),
            variants: Variant::ALL.to_vec(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub variant: Variant,
    pub activation: ActivationKind,
    pub checked: usize,
    /// Relu instances discarded by the kink rule.
    pub skipped: usize,
    pub worst_error: f64,
    pub worst_at: String,
    pub passed: bool,
}

pub struct Instance {
    pub model: Model,
    pub xs: Vec<Vector>,
    pub label: usize,
}

impl Instance {
    pub fn random(
        variant: Variant,
        act: ActivationKind,
        cfg: &SweepConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input = rng.random_range(1..=cfg.max_input);
        let hidden = rng.random_range(1..=cfg.max_hidden);
        let steps = rng.random_range(1..=cfg.max_steps);
        let mut cell = CellParams::zeros(variant, input, hidden);
        for s in cell.slices_mut() {
            s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let mut head = DenseParams::zeros(cfg.classes, hidden);
        for s in head.slices_mut() {
            s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let xs = (0..steps)
            .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self {
            model: Model {
                cell,
                head,
                activation: act,
            },
            xs,
            label: rng.random_range(0..cfg.classes),
        }
    }

    /// Analytic gradients of the loss: parameters and per-step inputs.
    pub fn analytic(&self) -> Result<(ModelGrads, Vec<Vector>, Vec<StepCache>)> {
        let m = &self.model;
        let (state, caches) = forward_sequence(
            &m.cell,
            m.activation,
            &self.xs,
            &CellState::zeros(m.cell.hidden_dim),
        )?;
        let logits = dense_forward(&m.head, &state.h)?;
        let (_, dlogits) = softmax_xent(&logits, self.label)?;
        let mut grads = m.zero_grads();
        outer_acc(&mut grads.head.weights, &dlogits, &state.h);
        grads.head.bias = dlogits.clone();
        let mut dh = Vector::zeros(m.cell.hidden_dim);
        matvec_t_acc(&m.head.weights, &dlogits, &mut dh);
        let upstream = StateGrad {
            dh,
            dc: Vector::zeros(m.cell.hidden_dim),
        };
        let (cell_grads, dxs) = backward_sequence(&m.cell, m.activation, &caches, &upstream, None)?;
        grads.cell = cell_grads;
        Ok((grads, dxs, caches))
    }

    /// True when some relu argument sits within `margin` of the kink.
    pub fn near_kink(&self, caches: &[StepCache], margin: f64) -> bool {
        let cell = &self.model.cell;
        caches.iter().any(|cache| {
            let mut z = cell.cand_bias.clone();
            matvec_acc(&cell.cand_input, &cache.x, &mut z);
            matvec_acc(&cell.cand_recurrent, &cache.h_prev, &mut z);
            z.iter()
                .chain(cache.c.iter())
                .any(|&v| v != 0.0 && v.abs() < margin)
        })
    }

    /// Worst relative error over all parameters and inputs, with a label for
    /// where it occurred.
    pub fn check(&self, epsilon: f64, fault: bool) -> Result<(f64, String)> {
        let (mut grads, dxs, _) = self.analytic()?;
        if fault {
            grads.cell.cand_bias[0] += 1e-3;
        }
        let xs: Vec<Vec<f64>> = self.xs.iter().map(|x| x.to_vec()).collect();
        let (numeric, numeric_dx) = central_differences(&self.model, &xs, self.label, epsilon);

        let mut worst = (0.0, String::from("-"));
        for (k, (a, b)) in grads.flatten().iter().zip(numeric).enumerate() {
            let e = relative_error(*a, b);
            if e > worst.0 {
                worst = (e, format!("param #{k}"));
            }
        }
        for (t, (dx, num)) in dxs.iter().zip(&numeric_dx).enumerate() {
            for (j, (a, b)) in dx.iter().zip(num).enumerate() {
                let e = relative_error(*a, *b);
                if e > worst.0 {
                    worst = (e, format!("x[{t}][{j}]"));
                }
            }
        }
        Ok(worst)
    }
}

/// Runs the sweep over every configured (variant, activation) pair.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<CellReport>> {
    let mut reports = Vec::new();
    for (vi, &variant) in cfg.variants.iter().enumerate() {
        for (ai, &act) in cfg.activations.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((vi * 16 + ai) as u64);
            let fault = cfg.fault == Some((variant, act));
            let mut report = CellReport {
                variant,
                activation: act,
                checked: 0,
                skipped: 0,
                worst_error: 0.0,
                worst_at: "-".into(),
                passed: true,
            };
            let max_attempts = cfg.instances * 50;
            while report.checked < cfg.instances && report.checked + report.skipped < max_attempts {
                let inst = Instance::random(variant, act, cfg, &mut rng);
                if act == ActivationKind::Relu {
                    let (_, _, caches) = inst.analytic()?;
                    if inst.near_kink(&caches, cfg.kink_margin) {
                        report.skipped += 1;
                        continue;
                    }
                }
                let (err, at) = inst.check(cfg.epsilon, fault)?;
                if err > report.worst_error {
                    report.worst_error = err;
                    report.worst_at = format!("instance {}, {at}", report.checked);
                }
                report.checked += 1;
            }
            report.passed = report.checked >= cfg.instances && report.worst_error <= cfg.tolerance;
            reports.push(report);
        }
    }
    Ok(reports)
}
