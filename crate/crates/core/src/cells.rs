//! Forward pass of the standard LSTM cell and its five gate-reduced variants.
//!
//! All six cells share the candidate path
//! `c̃ = act(W_c x + U_c h_prev + b_c)`, the cell update
//! `c = f ⊙ c_prev + i ⊙ c̃` and the output `h = o ⊙ act(c)`. They differ
//! only in which terms feed the three logistic gates:
//!
//! | variant | `W x` | `U h` | `u ⊙ h` | `b` |
//! |---------|:-----:|:-----:|:-------:|:---:|
//! | LSTM    |  yes  |  yes  |         | yes |
//! | LSTM1   |       |  yes  |         | yes |
//! | LSTM2   |       |  yes  |         |     |
//! | LSTM3   |       |       |         | yes |
//! | LSTM4   |       |       |   yes   |     |
//! | LSTM5   |       |       |   yes   | yes |
//!
//! Each gate is a [`GateParams`] whose optional fields follow this table, so a
//! single [`step`] routine drives every variant.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::numkit::{axpy, logistic, matvec_acc, ActivationKind, Matrix, Vector};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Lstm,
    Lstm1,
    Lstm2,
    Lstm3,
    Lstm4,
    Lstm5,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Self::Lstm,
        Self::Lstm1,
        Self::Lstm2,
        Self::Lstm3,
        Self::Lstm4,
        Self::Lstm5,
    ];

    pub fn has_gate_input_weights(self) -> bool {
        matches!(self, Self::Lstm)
    }

    pub fn has_gate_recurrent_matrix(self) -> bool {
        matches!(self, Self::Lstm | Self::Lstm1 | Self::Lstm2)
    }

    pub fn has_gate_recurrent_vector(self) -> bool {
        matches!(self, Self::Lstm4 | Self::Lstm5)
    }

    pub fn has_gate_bias(self) -> bool {
        matches!(self, Self::Lstm | Self::Lstm1 | Self::Lstm3 | Self::Lstm5)
    }

    /// Display name, e.g. `LSTM3`.
    pub fn name(self) -> &'static str {
        match self {
            Self::Lstm => "LSTM",
            Self::Lstm1 => "LSTM1",
            Self::Lstm2 => "LSTM2",
            Self::Lstm3 => "LSTM3",
            Self::Lstm4 => "LSTM4",
            Self::Lstm5 => "LSTM5",
        }
    }

    /// Numeric tag used by the snapshot format.
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected lstm, lstm1..lstm5)"
                ))
            })
    }
}

/// Adaptive terms of one gate. A `None` field contributes nothing to the
/// pre-activation and owns no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `W`, hidden × input.
    pub input_weights: Option<Matrix>,
    /// `U`, hidden × hidden.
    pub recurrent_weights: Option<Matrix>,
    /// `u`, applied pointwise to the previous hidden state.
    pub recurrent_diag: Option<Vector>,
    /// `b`.
    pub bias: Option<Vector>,
}

impl GateParams {
    /// Zero-valued gate with the structure dictated by `variant`.
    pub fn zeros(variant: Variant, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_weights: variant
                .has_gate_input_weights()
                .then(|| Matrix::zeros(hidden_dim, input_dim)),
            recurrent_weights: variant
                .has_gate_recurrent_matrix()
                .then(|| Matrix::zeros(hidden_dim, hidden_dim)),
            recurrent_diag: variant
                .has_gate_recurrent_vector()
                .then(|| Vector::zeros(hidden_dim)),
            bias: variant.has_gate_bias().then(|| Vector::zeros(hidden_dim)),
        }
    }

    /// `W x + U h_prev + u ⊙ h_prev + b`, skipping absent terms.
    pub fn preactivation(&self, x: &[f64], h_prev: &[f64]) -> Result<Vector> {
        let hidden = h_prev.len();
        if let Some(w) = &self.input_weights {
            check_dim("gate W rows", hidden, w.rows())?;
            check_dim("gate W cols", w.cols(), x.len())?;
        }
        if let Some(u) = &self.recurrent_weights {
            check_dim("gate U rows", hidden, u.rows())?;
            check_dim("gate U cols", hidden, u.cols())?;
        }
        if let Some(u) = &self.recurrent_diag {
            check_dim("gate u", hidden, u.len())?;
        }
        if let Some(b) = &self.bias {
            check_dim("gate b", hidden, b.len())?;
        }
        let mut out = Vector::zeros(hidden);
        self.preactivation_into(x, h_prev, &mut out);
        Ok(out)
    }

    fn preactivation_into(&self, x: &[f64], h_prev: &[f64], out: &mut [f64]) {
        if let Some(w) = &self.input_weights {
            matvec_acc(w, x, out);
        }
        if let Some(u) = &self.recurrent_weights {
            matvec_acc(u, h_prev, out);
        }
        if let Some(u) = &self.recurrent_diag {
            for ((o, ui), hi) in out.iter_mut().zip(u.iter()).zip(h_prev) {
                *o += ui * hi;
            }
        }
        if let Some(b) = &self.bias {
            axpy(1.0, b, out);
        }
    }

    fn push_slices<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        if let Some(w) = &self.input_weights {
            out.push(w.as_slice());
        }
        if let Some(u) = &self.recurrent_weights {
            out.push(u.as_slice());
        }
        if let Some(u) = &self.recurrent_diag {
            out.push(u.as_slice());
        }
        if let Some(b) = &self.bias {
            out.push(b.as_slice());
        }
    }

    fn push_slices_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        if let Some(w) = &mut self.input_weights {
            out.push(w.as_mut_slice());
        }
        if let Some(u) = &mut self.recurrent_weights {
            out.push(u.as_mut_slice());
        }
        if let Some(u) = &mut self.recurrent_diag {
            out.push(u.as_mut_slice());
        }
        if let Some(b) = &mut self.bias {
            out.push(b.as_mut_slice());
        }
    }
}

/// Every adaptive weight of one cell.
///
/// Slice order (see [`ParamSet`]): input gate, forget gate, output gate (each
/// as `W, U, u, b` with absent terms skipped), then `W_c, U_c, b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    pub cand_input: Matrix,
    pub cand_recurrent: Matrix,
    pub cand_bias: Vector,
}

/// Gradient of a scalar loss with respect to a [`CellParams`]; same structure,
/// one slot per allocated parameter.
pub type CellGrads = CellParams;

impl CellParams {
    pub fn zeros(variant: Variant, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            hidden_dim,
            input_gate: GateParams::zeros(variant, input_dim, hidden_dim),
            forget_gate: GateParams::zeros(variant, input_dim, hidden_dim),
            output_gate: GateParams::zeros(variant, input_dim, hidden_dim),
            cand_input: Matrix::zeros(hidden_dim, input_dim),
            cand_recurrent: Matrix::zeros(hidden_dim, hidden_dim),
            cand_bias: Vector::zeros(hidden_dim),
        }
    }

    /// Zeroed copy with the same structure, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.variant, self.input_dim, self.hidden_dim)
    }

    /// Seeded initialization.
    ///
    /// * `W`-type matrices: uniform in `±sqrt(6 / (input + hidden))`.
    /// * `U`-type matrices: orthogonal factor of a Gaussian matrix.
    /// * `u` vectors: uniform in `±0.5`.
    /// * biases: zero, except the forget gate bias which starts at one.
    pub fn init(variant: Variant, input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!(
                "cell dimensions must be positive (input {input_dim}, hidden {hidden_dim})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(variant, input_dim, hidden_dim);
        let bound = glorot_bound(input_dim, hidden_dim);

        for gate in [&mut p.input_gate, &mut p.forget_gate, &mut p.output_gate] {
            if let Some(w) = &mut gate.input_weights {
                fill_uniform(&mut rng, w.as_mut_slice(), bound);
            }
            if let Some(u) = &mut gate.recurrent_weights {
                *u = random_orthogonal(&mut rng, hidden_dim);
            }
            if let Some(u) = &mut gate.recurrent_diag {
                fill_uniform(&mut rng, u.as_mut_slice(), 0.5);
            }
        }
        if let Some(b) = &mut p.forget_gate.bias {
            b.fill(1.0);
        }
        fill_uniform(&mut rng, p.cand_input.as_mut_slice(), bound);
        p.cand_recurrent = random_orthogonal(&mut rng, hidden_dim);
        Ok(p)
    }

    pub fn gates(&self) -> [&GateParams; 3] {
        [&self.input_gate, &self.forget_gate, &self.output_gate]
    }

    /// Reparameterize as a full LSTM computing the same function: removed
    /// terms become zeros and pointwise recurrent vectors become diagonal
    /// matrices. A full LSTM is returned unchanged.
    pub fn embed_in_full_lstm(&self) -> CellParams {
        let embed = |g: &GateParams| {
            let mut recurrent = g
                .recurrent_weights
                .clone()
                .unwrap_or_else(|| Matrix::zeros(self.hidden_dim, self.hidden_dim));
            if let Some(u) = &g.recurrent_diag {
                // a variant never carries both a matrix and a vector
                recurrent = Matrix::from_diagonal(u);
            }
            GateParams {
                input_weights: Some(
                    g.input_weights
                        .clone()
                        .unwrap_or_else(|| Matrix::zeros(self.hidden_dim, self.input_dim)),
                ),
                recurrent_weights: Some(recurrent),
                recurrent_diag: None,
                bias: Some(
                    g.bias
                        .clone()
                        .unwrap_or_else(|| Vector::zeros(self.hidden_dim)),
                ),
            }
        };
        CellParams {
            variant: Variant::Lstm,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            input_gate: embed(&self.input_gate),
            forget_gate: embed(&self.forget_gate),
            output_gate: embed(&self.output_gate),
            cand_input: self.cand_input.clone(),
            cand_recurrent: self.cand_recurrent.clone(),
            cand_bias: self.cand_bias.clone(),
        }
    }
}

impl ParamSet for CellParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(15);
        self.input_gate.push_slices(&mut out);
        self.forget_gate.push_slices(&mut out);
        self.output_gate.push_slices(&mut out);
        out.push(self.cand_input.as_slice());
        out.push(self.cand_recurrent.as_slice());
        out.push(self.cand_bias.as_slice());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(15);
        self.input_gate.push_slices_mut(&mut out);
        self.forget_gate.push_slices_mut(&mut out);
        self.output_gate.push_slices_mut(&mut out);
        out.push(self.cand_input.as_mut_slice());
        out.push(self.cand_recurrent.as_mut_slice());
        out.push(self.cand_bias.as_mut_slice());
        out
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for v in out {
        *v = rng.random_range(-bound..bound);
    }
}

/// Orthogonal matrix from the QR factorization of a standard Gaussian matrix,
/// with column signs fixed so that `R` has a nonnegative diagonal.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut samples = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        samples.push(rng.sample::<f64, _>(StandardNormal));
    }
    let gaussian = DMatrix::from_row_slice(n, n, &samples);
    let qr = gaussian.qr();
    let (q, r) = (qr.q(), qr.r());
    Matrix::from_fn(n, n, |i, j| {
        if r[(j, j)] < 0.0 {
            -q[(i, j)]
        } else {
            q[(i, j)]
        }
    })
}

/// Closed-form number of adaptive scalars in a cell plus a dense
/// `hidden → output` head.
pub fn param_count(
    variant: Variant,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
) -> usize {
    let (n, h) = (input_dim, hidden_dim);
    let mut per_gate = 0;
    if variant.has_gate_input_weights() {
        per_gate += h * n;
    }
    if variant.has_gate_recurrent_matrix() {
        per_gate += h * h;
    }
    if variant.has_gate_recurrent_vector() {
        per_gate += h;
    }
    if variant.has_gate_bias() {
        per_gate += h;
    }
    let candidate = h * n + h * h + h;
    let head = h * output_dim + output_dim;
    3 * per_gate + candidate + head
}

/// Hidden and cell vectors at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Vector::zeros(hidden_dim),
            c: Vector::zeros(hidden_dim),
        }
    }
}

/// Intermediates of one [`step`], retained for the backward pass.
///
/// Gate and activation values are stored post-nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub i: Vector,
    pub f: Vector,
    pub o: Vector,
    pub c_tilde: Vector,
    pub c: Vector,
    /// `act(c)`.
    pub act_c: Vector,
    pub h: Vector,
}

/// One time step of the cell.
pub fn step(
    params: &CellParams,
    act: ActivationKind,
    x: &[f64],
    prev: &CellState,
) -> Result<(CellState, StepCache)> {
    let hidden = params.hidden_dim;
    check_dim("step input", params.input_dim, x.len())?;
    check_dim("step h_prev", hidden, prev.h.len())?;
    check_dim("step c_prev", hidden, prev.c.len())?;

    let gate = |g: &GateParams| {
        let mut z = Vector::zeros(hidden);
        g.preactivation_into(x, &prev.h, &mut z);
        z.iter_mut().for_each(|v| *v = logistic(*v));
        z
    };
    let i = gate(&params.input_gate);
    let f = gate(&params.forget_gate);
    let o = gate(&params.output_gate);

    let mut c_tilde = params.cand_bias.clone();
    matvec_acc(&params.cand_input, x, &mut c_tilde);
    matvec_acc(&params.cand_recurrent, &prev.h, &mut c_tilde);
    c_tilde.iter_mut().for_each(|v| *v = act.apply(*v));

    let c: Vector = (0..hidden)
        .map(|k| f[k] * prev.c[k] + i[k] * c_tilde[k])
        .collect();
    let act_c: Vector = c.iter().map(|&v| act.apply(v)).collect();
    let h: Vector = o.iter().zip(act_c.iter()).map(|(a, b)| a * b).collect();

    if !h.is_finite() || !c.is_finite() {
        return Err(Error::NumericOverflow(
            "cell produced a non-finite state".into(),
        ));
    }

    let state = CellState {
        h: h.clone(),
        c: c.clone(),
    };
    let cache = StepCache {
        x: Vector::from(x),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        o,
        c_tilde,
        c,
        act_c,
        h,
    };
    Ok((state, cache))
}

/// Runs [`step`] over `xs` from `init`, returning the final state and one cache
/// per step.
pub fn forward_sequence<I>(
    params: &CellParams,
    act: ActivationKind,
    xs: I,
    init: &CellState,
) -> Result<(CellState, Vec<StepCache>)>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let xs = xs.into_iter();
    let mut caches = Vec::with_capacity(xs.size_hint().0);
    let mut state = init.clone();
    for x in xs {
        let (next, cache) = step(params, act, x.as_ref(), &state)?;
        caches.push(cache);
        state = next;
    }
    Ok((state, caches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::matvec;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn randomize(p: &mut CellParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in p.slices_mut() {
            s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
    }

    #[test]
    fn structure_table() {
        use Variant::*;
        let expect = [
            (Lstm, [true, true, false, true]),
            (Lstm1, [false, true, false, true]),
            (Lstm2, [false, true, false, false]),
            (Lstm3, [false, false, false, true]),
            (Lstm4, [false, false, true, false]),
            (Lstm5, [false, false, true, true]),
        ];
        for (v, flags) in expect {
            let got = [
                v.has_gate_input_weights(),
                v.has_gate_recurrent_matrix(),
                v.has_gate_recurrent_vector(),
                v.has_gate_bias(),
            ];
            assert_eq!(got, flags, "{v}");
            let g = GateParams::zeros(v, 3, 2);
            assert_eq!(
                [
                    g.input_weights.is_some(),
                    g.recurrent_weights.is_some(),
                    g.recurrent_diag.is_some(),
                    g.bias.is_some()
                ],
                flags
            );
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().to_lowercase().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
        assert!("lstm6".parse::<Variant>().is_err());
    }

    #[test]
    fn param_count_matches_reference_table() {
        let expect = [
            (Variant::Lstm, 52610),
            (Variant::Lstm1, 44210),
            (Variant::Lstm2, 43910),
            (Variant::Lstm3, 14210),
            (Variant::Lstm4, 14210),
            (Variant::Lstm5, 14510),
        ];
        for (v, n) in expect {
            assert_eq!(param_count(v, 28, 100, 10), n, "{v}");
        }
    }

    #[test]
    fn param_count_matches_allocation() {
        for v in Variant::ALL {
            for (n, h) in [(1, 1), (10, 5), (28, 100), (3, 7)] {
                let p = CellParams::zeros(v, n, h);
                let head = h * 2 + 2;
                assert_eq!(p.scalar_count() + head, param_count(v, n, h, 2));
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        for v in Variant::ALL {
            let a = CellParams::init(v, 6, 4, 17).unwrap();
            let b = CellParams::init(v, 6, 4, 17).unwrap();
            let bits = |p: &CellParams| p.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
            let c = CellParams::init(v, 6, 4, 18).unwrap();
            assert_ne!(bits(&a), bits(&c));
        }
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(CellParams::init(Variant::Lstm, 0, 4, 0).is_err());
        assert!(CellParams::init(Variant::Lstm, 4, 0, 0).is_err());
    }

    #[test]
    fn lstm3_init_only_has_biases() {
        let p = CellParams::init(Variant::Lstm3, 28, 100, 3).unwrap();
        for g in p.gates() {
            assert!(g.input_weights.is_none());
            assert!(g.recurrent_weights.is_none());
            assert!(g.recurrent_diag.is_none());
            assert!(g.bias.is_some());
        }
        assert!(p
            .forget_gate
            .bias
            .as_ref()
            .unwrap()
            .iter()
            .all(|&b| b == 1.0));
        assert!(p
            .input_gate
            .bias
            .as_ref()
            .unwrap()
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn full_lstm_init_follows_scheme() {
        let p = CellParams::init(Variant::Lstm, 28, 100, 0).unwrap();
        let bound = (6.0f64 / 128.0).sqrt();
        let mut recurrent = vec![&p.cand_recurrent];
        for g in p.gates() {
            let w = g.input_weights.as_ref().unwrap();
            assert!(w.as_slice().iter().all(|v| v.abs() < bound));
            recurrent.push(g.recurrent_weights.as_ref().unwrap());
        }
        assert!(p.cand_input.as_slice().iter().all(|v| v.abs() < bound));
        for u in recurrent {
            let n = u.rows();
            for a in 0..n {
                for b in 0..n {
                    let d: f64 = (0..n).map(|k| u.get(k, a) * u.get(k, b)).sum();
                    let target = if a == b { 1.0 } else { 0.0 };
                    assert!((d - target).abs() < 1e-10, "UᵀU[{a},{b}] = {d}");
                }
            }
        }
        assert!(p.cand_bias.iter().all(|&b| b == 0.0));
        assert!(p
            .forget_gate
            .bias
            .as_ref()
            .unwrap()
            .iter()
            .all(|&b| b == 1.0));
    }

    #[test]
    fn vector_gate_init_bounds() {
        let p = CellParams::init(Variant::Lstm5, 28, 100, 0).unwrap();
        for g in p.gates() {
            assert!(g
                .recurrent_diag
                .as_ref()
                .unwrap()
                .iter()
                .all(|v| v.abs() < 0.5));
        }
    }

    #[test]
    fn gate_preactivation_cases() {
        let mut g3 = GateParams::zeros(Variant::Lstm3, 2, 2);
        g3.bias = Some(Vector::from(vec![0.25, -1.0]));
        assert_eq!(
            g3.preactivation(&[9.0, 9.0], &[3.0, 4.0])
                .unwrap()
                .as_slice(),
            &[0.25, -1.0]
        );

        let mut g2 = GateParams::zeros(Variant::Lstm2, 2, 2);
        g2.recurrent_weights = Some(Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        assert_eq!(
            g2.preactivation(&[5.0, 6.0], &[0.0, 0.0])
                .unwrap()
                .as_slice(),
            &[0.0, 0.0]
        );

        let mut g4 = GateParams::zeros(Variant::Lstm4, 2, 2);
        g4.recurrent_diag = Some(Vector::from(vec![1.0, 2.0]));
        assert_eq!(
            g4.preactivation(&[5.0, 6.0], &[3.0, 4.0])
                .unwrap()
                .as_slice(),
            &[3.0, 8.0]
        );

        let g = GateParams::zeros(Variant::Lstm, 3, 2);
        assert!(g.preactivation(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_params_step() {
        let p = CellParams::zeros(Variant::Lstm, 3, 2);
        let (s, cache) = step(
            &p,
            ActivationKind::Tanh,
            &[1.0, -2.0, 3.0],
            &CellState::zeros(2),
        )
        .unwrap();
        assert_eq!(cache.i.as_slice(), &[0.5, 0.5]);
        assert_eq!(cache.f.as_slice(), &[0.5, 0.5]);
        assert_eq!(cache.o.as_slice(), &[0.5, 0.5]);
        assert_eq!(cache.c_tilde.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.c.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.h.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm3_gates_ignore_input() {
        let mut p = CellParams::zeros(Variant::Lstm3, 3, 2);
        randomize(&mut p, 5);
        let bias = |g: &GateParams| -> Vec<f64> {
            g.bias
                .as_ref()
                .unwrap()
                .iter()
                .map(|&b| logistic(b))
                .collect()
        };
        for x in [[0.0, 0.0, 0.0], [1.0, -5.0, 2.0]] {
            let (_, c) = step(&p, ActivationKind::Relu, &x, &CellState::zeros(2)).unwrap();
            assert_eq!(c.i.as_slice(), bias(&p.input_gate).as_slice());
            assert_eq!(c.f.as_slice(), bias(&p.forget_gate).as_slice());
            assert_eq!(c.o.as_slice(), bias(&p.output_gate).as_slice());
        }
    }

    /// Straight transcription of the full LSTM equations, independent of
    /// `step` and of the gate structure machinery.
    fn reference_lstm_step(
        p: &CellParams,
        act: ActivationKind,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = p.hidden_dim;
        let gate = |g: &GateParams| -> Vec<f64> {
            let wx = matvec(g.input_weights.as_ref().unwrap(), x).unwrap();
            let uh = matvec(g.recurrent_weights.as_ref().unwrap(), h_prev).unwrap();
            let b = g.bias.as_ref().unwrap();
            (0..n)
                .map(|k| 1.0 / (1.0 + (-(wx[k] + uh[k] + b[k])).exp()))
                .collect()
        };
        let (i, f, o) = (
            gate(&p.input_gate),
            gate(&p.forget_gate),
            gate(&p.output_gate),
        );
        let wx = matvec(&p.cand_input, x).unwrap();
        let uh = matvec(&p.cand_recurrent, h_prev).unwrap();
        let ct: Vec<f64> = (0..n)
            .map(|k| act.apply(wx[k] + uh[k] + p.cand_bias[k]))
            .collect();
        let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * ct[k]).collect();
        let h: Vec<f64> = (0..n).map(|k| o[k] * act.apply(c[k])).collect();
        (h, c)
    }

    #[test]
    fn step_matches_reference_transcription() {
        let mut p = CellParams::init(Variant::Lstm, 4, 3, 0).unwrap();
        randomize(&mut p, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random_vec(&mut rng, 4, 1.0);
        let prev = CellState {
            h: random_vec(&mut rng, 3, 1.0),
            c: random_vec(&mut rng, 3, 1.0),
        };
        for act in ActivationKind::ALL {
            let (s, _) = step(&p, act, &x, &prev).unwrap();
            let (h, c) = reference_lstm_step(&p, act, &x, &prev.h, &prev.c);
            for k in 0..3 {
                assert!((s.h[k] - h[k]).abs() < 1e-14);
                assert!((s.c[k] - c[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn embedding_shapes() {
        let mut p1 = CellParams::zeros(Variant::Lstm1, 3, 2);
        randomize(&mut p1, 1);
        let e = p1.embed_in_full_lstm();
        assert_eq!(e.variant, Variant::Lstm);
        for g in e.gates() {
            assert!(g
                .input_weights
                .as_ref()
                .unwrap()
                .as_slice()
                .iter()
                .all(|&v| v == 0.0));
        }
        assert_eq!(
            e.input_gate.recurrent_weights,
            p1.input_gate.recurrent_weights
        );

        let mut p4 = CellParams::zeros(Variant::Lstm4, 3, 2);
        randomize(&mut p4, 2);
        let e = p4.embed_in_full_lstm();
        let u = p4.forget_gate.recurrent_diag.as_ref().unwrap();
        assert_eq!(
            e.forget_gate.recurrent_weights.as_ref().unwrap(),
            &Matrix::from_diagonal(u)
        );
        assert!(e
            .forget_gate
            .bias
            .as_ref()
            .unwrap()
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn embedding_equivalence_lstm5() {
        let mut p = CellParams::zeros(Variant::Lstm5, 5, 4);
        randomize(&mut p, 3);
        let e = p.embed_in_full_lstm();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = random_vec(&mut rng, 5, 2.0);
            let prev = CellState {
                h: random_vec(&mut rng, 4, 1.0),
                c: random_vec(&mut rng, 4, 2.0),
            };
            let (a, _) = step(&p, ActivationKind::Tanh, &x, &prev).unwrap();
            let (b, _) = step(&e, ActivationKind::Tanh, &x, &prev).unwrap();
            for k in 0..4 {
                assert!((a.h[k] - b.h[k]).abs() <= 1e-12);
                assert!((a.c[k] - b.c[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_sequence_edge_cases() {
        let p = CellParams::init(Variant::Lstm2, 3, 2, 1).unwrap();
        let init = CellState {
            h: Vector::from(vec![0.1, -0.2]),
            c: Vector::from(vec![0.3, 0.0]),
        };
        let empty: Vec<Vector> = Vec::new();
        let (fin, caches) = forward_sequence(&p, ActivationKind::Tanh, &empty, &init).unwrap();
        assert_eq!(fin, init);
        assert!(caches.is_empty());

        let x = Vector::from(vec![0.5, 0.5, -1.0]);
        let (fin, caches) = forward_sequence(&p, ActivationKind::Tanh, [&x], &init).unwrap();
        let (s, c) = step(&p, ActivationKind::Tanh, &x, &init).unwrap();
        assert_eq!(fin, s);
        assert_eq!(caches, vec![c]);
    }

    #[test]
    fn step_rejects_bad_input_and_overflow() {
        let mut p = CellParams::zeros(Variant::Lstm3, 2, 2);
        assert!(matches!(
            step(&p, ActivationKind::Tanh, &[1.0], &CellState::zeros(2)),
            Err(Error::Dimension { .. })
        ));
        p.cand_bias = Vector::from(vec![f64::INFINITY, 0.0]);
        assert!(matches!(
            step(&p, ActivationKind::Relu, &[1.0, 1.0], &CellState::zeros(2)),
            Err(Error::NumericOverflow(_))
        ));
    }
}
