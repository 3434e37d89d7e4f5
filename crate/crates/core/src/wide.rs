//! Double-word (≈ 106-bit) evaluation of the classification loss, used as the
//! finite-difference oracle for the gradient sweep.
//!
//! A central difference with step 1e-5 divides the round-off of two f64 loss
//! values by 2e-5, which leaves an absolute error near 1e-11. Gradient entries
//! below about 1e-6 then cannot be checked to 1e-5 relative in plain f64.
//! Evaluating the loss with double-word arithmetic pushes that floor down by
//! roughly sixteen orders of magnitude.
//!
//! The double-word type is the usual unevaluated sum `hi + lo` built on
//! error-free transformations (two-sum and an FMA two-product).

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::cells::GateParams;
use crate::numkit::ActivationKind;
use crate::trainer::Model;

/// Unevaluated sum of two non-overlapping `f64`s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Exact multiplication by a power of two.
    pub fn scale(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self::new(self.hi * f, self.lo * f)
    }

    pub fn recip(self) -> Self {
        Dd::from(1.0) / self
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Self::new(x, 0.0)
    }
}

impl From<Dd> for f64 {
    fn from(x: Dd) -> f64 {
        x.hi + x.lo
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            o => o,
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd::new(-self.hi, -self.lo)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, y: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, y: Dd) -> Dd {
        self + -y
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, y: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, y.hi);
        Dd::renorm(p, e + (self.hi * y.lo + self.lo * y.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::from(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::from(q2);
        let q3 = r.hi / y.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Dd::new(q1, q2) + Dd::from(q3)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, y: Dd) {
        *self = *self + y;
    }
}

macro_rules! with_f64 {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr<f64> for Dd {
            type Output = Dd;
            fn $f(self, y: f64) -> Dd {
                self.$f(Dd::from(y))
            }
        }
    )*};
}
with_f64!(Add add, Sub sub, Mul mul, Div div);

const LN_2: Dd = Dd::new(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17);
const HALVINGS: i32 = 10;
const TAYLOR_TERMS: usize = 12;

fn tf(x: f64) -> Dd {
    Dd::from(x)
}

/// `e^x` to double-word precision: reduce by multiples of ln 2, shrink by
/// 2^10, sum the Taylor series, then square back up.
pub fn exp(x: Dd) -> Dd {
    if x.hi > 709.0 {
        return tf(f64::INFINITY);
    }
    if x.hi < -745.0 {
        return tf(0.0);
    }
    let k = (x.hi / std::f64::consts::LN_2).round();
    let r = (x - LN_2 * k).scale(-HALVINGS);
    let mut term = tf(1.0);
    let mut sum = tf(1.0);
    for n in 1..=TAYLOR_TERMS {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum.scale(k as i32)
}

/// Natural log by two Newton steps from the f64 estimate.
pub fn ln(x: Dd) -> Dd {
    let mut y = tf(x.hi.ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

pub fn logistic(x: Dd) -> Dd {
    if x.hi >= 0.0 {
        (tf(1.0) + exp(-x)).recip()
    } else {
        let e = exp(x);
        e / (tf(1.0) + e)
    }
}

pub fn tanh(x: Dd) -> Dd {
    let e = exp(x.abs().scale(1).neg());
    let t = (tf(1.0) - e) / (tf(1.0) + e);
    if x.hi < 0.0 {
        -t
    } else {
        t
    }
}

fn activate(act: ActivationKind, x: Dd) -> Dd {
    match act {
        ActivationKind::Tanh => tanh(x),
        ActivationKind::Logistic => logistic(x),
        ActivationKind::Relu => {
            if x.hi > 0.0 {
                x
            } else {
                tf(0.0)
            }
        }
    }
}

struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<Dd>,
}

impl Dense {
    fn from_slice(rows: usize, cols: usize, s: &[f64]) -> Self {
        Self {
            rows,
            cols,
            data: s.iter().map(|&v| tf(v)).collect(),
        }
    }

    fn acc(&self, v: &[Dd], out: &mut [Dd]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (&w, &x) in row.iter().zip(v) {
                *o += w * x;
            }
        }
    }
}

struct Gate {
    w: Option<Dense>,
    u: Option<Dense>,
    d: Option<Vec<Dd>>,
    b: Option<Vec<Dd>>,
}

impl Gate {
    fn new(g: &GateParams, input: usize, hidden: usize) -> Self {
        let vec = |v: &[f64]| v.iter().map(|&x| tf(x)).collect::<Vec<_>>();
        Self {
            w: g.input_weights
                .as_ref()
                .map(|m| Dense::from_slice(hidden, input, m.as_slice())),
            u: g.recurrent_weights
                .as_ref()
                .map(|m| Dense::from_slice(hidden, hidden, m.as_slice())),
            d: g.recurrent_diag.as_deref().map(vec),
            b: g.bias.as_deref().map(vec),
        }
    }

    fn slots(&mut self) -> Vec<&mut [Dd]> {
        let mut out: Vec<&mut [Dd]> = Vec::new();
        if let Some(w) = &mut self.w {
            out.push(&mut w.data);
        }
        if let Some(u) = &mut self.u {
            out.push(&mut u.data);
        }
        if let Some(d) = &mut self.d {
            out.push(d);
        }
        if let Some(b) = &mut self.b {
            out.push(b);
        }
        out
    }

    fn eval(&self, x: &[Dd], h: &[Dd]) -> Vec<Dd> {
        let mut z = self.b.clone().unwrap_or_else(|| vec![tf(0.0); h.len()]);
        if let Some(w) = &self.w {
            w.acc(x, &mut z);
        }
        if let Some(u) = &self.u {
            u.acc(h, &mut z);
        }
        if let Some(d) = &self.d {
            for k in 0..z.len() {
                z[k] += d[k] * h[k];
            }
        }
        z.into_iter().map(logistic).collect()
    }
}

/// Double-word copy of a [`Model`] whose scalars can be addressed in the same
/// flat order as [`crate::params::ParamSet::flatten`].
pub struct WideModel {
    gates: [Gate; 3],
    wc: Dense,
    uc: Dense,
    bc: Vec<Dd>,
    hw: Dense,
    hb: Vec<Dd>,
    act: ActivationKind,
    hidden: usize,
}

impl WideModel {
    pub fn new(m: &Model) -> Self {
        let (i, h) = (m.cell.input_dim, m.cell.hidden_dim);
        let classes = m.head.bias.len();
        let vec = |v: &[f64]| v.iter().map(|&x| tf(x)).collect::<Vec<_>>();
        Self {
            gates: [
                Gate::new(&m.cell.input_gate, i, h),
                Gate::new(&m.cell.forget_gate, i, h),
                Gate::new(&m.cell.output_gate, i, h),
            ],
            wc: Dense::from_slice(h, i, m.cell.cand_input.as_slice()),
            uc: Dense::from_slice(h, h, m.cell.cand_recurrent.as_slice()),
            bc: vec(&m.cell.cand_bias),
            hw: Dense::from_slice(classes, h, m.head.weights.as_slice()),
            hb: vec(&m.head.bias),
            act: m.activation,
            hidden: h,
        }
    }

    fn slots(&mut self) -> Vec<&mut [Dd]> {
        let mut out = Vec::new();
        for g in &mut self.gates {
            out.extend(g.slots());
        }
        out.push(&mut self.wc.data);
        out.push(&mut self.uc.data);
        out.push(&mut self.bc);
        out.push(&mut self.hw.data);
        out.push(&mut self.hb);
        out
    }

    /// Mutable access to the `k`-th scalar in flat parameter order.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut Dd {
        for s in self.slots() {
            if k < s.len() {
                return &mut s[k];
            }
            k -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn scalar_count(&mut self) -> usize {
        self.slots().iter().map(|s| s.len()).sum()
    }

    /// Softmax cross-entropy of the final state after running `xs`.
    pub fn loss(&self, xs: &[Vec<Dd>], label: usize) -> Dd {
        let n = self.hidden;
        let mut h = vec![tf(0.0); n];
        let mut c = vec![tf(0.0); n];
        for x in xs {
            let [i, f, o] = [0, 1, 2].map(|g| self.gates[g].eval(x, &h));
            let mut z = self.bc.clone();
            self.wc.acc(x, &mut z);
            self.uc.acc(&h, &mut z);
            for k in 0..n {
                c[k] = f[k] * c[k] + i[k] * activate(self.act, z[k]);
            }
            h = (0..n).map(|k| o[k] * activate(self.act, c[k])).collect();
        }
        let mut logits = self.hb.clone();
        self.hw.acc(&h, &mut logits);
        let m = logits
            .iter()
            .copied()
            .fold(tf(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
        let mut s = tf(0.0);
        for &l in &logits {
            s += exp(l - m);
        }
        m + ln(s) - logits[label]
    }
}

/// Central-difference gradient of the loss with respect to every parameter
/// (flat order) and every input scalar, each with step `eps`.
pub fn central_differences(
    model: &Model,
    xs: &[Vec<f64>],
    label: usize,
    eps: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut wide = WideModel::new(model);
    let mut wxs: Vec<Vec<Dd>> = xs
        .iter()
        .map(|x| x.iter().map(|&v| tf(v)).collect())
        .collect();
    let two_eps = tf(2.0 * eps);

    let count = wide.scalar_count();
    let mut params = Vec::with_capacity(count);
    for k in 0..count {
        let orig = *wide.scalar_mut(k);
        *wide.scalar_mut(k) = orig + eps;
        let plus = wide.loss(&wxs, label);
        *wide.scalar_mut(k) = orig - eps;
        let minus = wide.loss(&wxs, label);
        *wide.scalar_mut(k) = orig;
        params.push(f64::from((plus - minus) / two_eps));
    }

    let mut inputs = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        let mut row = Vec::with_capacity(xs[t].len());
        for j in 0..xs[t].len() {
            let orig = wxs[t][j];
            wxs[t][j] = orig + eps;
            let plus = wide.loss(&wxs, label);
            wxs[t][j] = orig - eps;
            let minus = wide.loss(&wxs, label);
            wxs[t][j] = orig;
            row.push(f64::from((plus - minus) / two_eps));
        }
        inputs.push(row);
    }
    (params, inputs)
}
