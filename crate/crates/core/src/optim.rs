//! First-order solvers behind one update interface.
//!
//! | solver     | buffers        | rule                                                        |
//! |------------|----------------|-------------------------------------------------------------|
//! | `sgd`      | `v`            | `v = μv - lr·g; w += v`                                     |
//! | `nag`      | `v`            | `v' = μv - lr·g; w += (1+μ)v' - μv`                         |
//! | `adagrad`  | `a`            | `a += g²; w -= lr·g/(√a + ε)`                               |
//! | `rmsprop`  | `s`            | `s = d·s + (1-d)·g²; w -= lr·g/(√s + ε)`                    |
//! | `adam`     | `m`, `u`       | bias-corrected moments; `w -= lr·m̂/(√û + ε)`                |
//! | `adadelta` | `Eg`, `Ex`     | `Δ = -√(Ex+ε)/√(Eg+ε)·g; w += Δ` (`lr` is not used)         |
//!
//! Buffers are created lazily, zero-filled, the first time a parameter is
//! updated.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tensor::serialize::read_tensor_prefix;
use crate::tensor::{write_tensor, Tensor};

pub const DEFAULT_LR: f64 = 1e-4;

const STATE_MAGIC: &[u8; 4] = b"FCNO";
const STATE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Sgd,
    Nag,
    Adagrad,
    Rmsprop,
    Adam,
    Adadelta,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::Sgd,
        SolverKind::Nag,
        SolverKind::Adagrad,
        SolverKind::Rmsprop,
        SolverKind::Adam,
        SolverKind::Adadelta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Sgd => "sgd",
            SolverKind::Nag => "nag",
            SolverKind::Adagrad => "adagrad",
            SolverKind::Rmsprop => "rmsprop",
            SolverKind::Adam => "adam",
            SolverKind::Adadelta => "adadelta",
        }
    }

    fn buffer_count(self) -> usize {
        match self {
            SolverKind::Adam | SolverKind::Adadelta => 2,
            _ => 1,
        }
    }

    fn code(self) -> u8 {
        SolverKind::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    /// Default hyperparameters for this solver.
    pub fn defaults(self) -> Hyper {
        let eps = if self == SolverKind::Adadelta { 1e-6 } else { 1e-8 };
        Hyper { lr: DEFAULT_LR, momentum: 0.9, beta1: 0.9, beta2: 0.999, rho: 0.95, eps, rms_decay: 0.9 }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown solver `{s}` (expected sgd, nag, adagrad, rmsprop, adam or adadelta)")))
    }
}

/// Solver hyperparameters. Fields a solver does not use are carried along
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub eps: f64,
    pub rms_decay: f64,
}

impl Hyper {
    fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("rho", self.rho),
            ("rms_decay", self.rms_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Optional overrides applied on top of [`SolverKind::defaults`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HyperOverrides {
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub rho: Option<f64>,
    pub eps: Option<f64>,
    pub rms_decay: Option<f64>,
}

impl HyperOverrides {
    pub fn lr(lr: f64) -> Self {
        HyperOverrides { lr: Some(lr), ..Default::default() }
    }

    fn apply(&self, h: &mut Hyper) {
        let pairs = [
            (self.lr, &mut h.lr),
            (self.momentum, &mut h.momentum),
            (self.beta1, &mut h.beta1),
            (self.beta2, &mut h.beta2),
            (self.rho, &mut h.rho),
            (self.eps, &mut h.eps),
            (self.rms_decay, &mut h.rms_decay),
        ];
        for (v, slot) in pairs {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: SolverKind,
    hyper: Hyper,
    step: u64,
    buffers: BTreeMap<String, Vec<Tensor>>,
}

/// Creates a fresh solver state with default hyperparameters and `overrides`
/// applied.
pub fn make_state(kind: SolverKind, overrides: &HyperOverrides) -> Result<OptimizerState> {
    let mut hyper = kind.defaults();
    overrides.apply(&mut hyper);
    hyper.validate()?;
    Ok(OptimizerState { kind, hyper, step: 0, buffers: BTreeMap::new() })
}

impl OptimizerState {
    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Auxiliary buffers of one parameter, in the order listed in the module
    /// table.
    pub fn buffers(&self, param: &str) -> Option<&[Tensor]> {
        self.buffers.get(param).map(Vec::as_slice)
    }

    /// Applies one update to every parameter that has a gradient in `grads`.
    ///
    /// Nothing is modified if any gradient is non-finite, missing its
    /// parameter, or mis-shaped.
    pub fn apply_update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "apply_update",
                    format!("parameter `{name}` has shape {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if let Some(bufs) = self.buffers.get(name) {
                if bufs.iter().any(|b| b.shape() != g.shape()) {
                    return Err(Error::shape("apply_update", format!("solver buffers of `{name}` do not match its shape")));
                }
            }
        }

        self.step += 1;
        let t = self.step;
        let h = self.hyper;
        let kind = self.kind;
        for (name, g) in grads {
            let w = params.get_mut(name).expect("checked above").data_mut();
            let bufs = self
                .buffers
                .entry(name.clone())
                .or_insert_with(|| vec![Tensor::zeros(g.shape()); kind.buffer_count()]);
            let g = g.data();
            match kind {
                SolverKind::Sgd => {
                    let v = bufs[0].data_mut();
                    for i in 0..g.len() {
                        v[i] = h.momentum * v[i] - h.lr * g[i];
                        w[i] += v[i];
                    }
                }
                SolverKind::Nag => {
                    let v = bufs[0].data_mut();
                    for i in 0..g.len() {
                        let prev = v[i];
                        v[i] = h.momentum * prev - h.lr * g[i];
                        w[i] += (1.0 + h.momentum) * v[i] - h.momentum * prev;
                    }
                }
                SolverKind::Adagrad => {
                    let a = bufs[0].data_mut();
                    for i in 0..g.len() {
                        a[i] += g[i] * g[i];
                        w[i] -= h.lr * g[i] / (a[i].sqrt() + h.eps);
                    }
                }
                SolverKind::Rmsprop => {
                    let s = bufs[0].data_mut();
                    for i in 0..g.len() {
                        s[i] = h.rms_decay * s[i] + (1.0 - h.rms_decay) * g[i] * g[i];
                        w[i] -= h.lr * g[i] / (s[i].sqrt() + h.eps);
                    }
                }
                SolverKind::Adam => {
                    let c1 = 1.0 - h.beta1.powf(t as f64);
                    let c2 = 1.0 - h.beta2.powf(t as f64);
                    let (m, u) = bufs.split_at_mut(1);
                    let (m, u) = (m[0].data_mut(), u[0].data_mut());
                    for i in 0..g.len() {
                        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                        u[i] = h.beta2 * u[i] + (1.0 - h.beta2) * g[i] * g[i];
                        w[i] -= h.lr * (m[i] / c1) / ((u[i] / c2).sqrt() + h.eps);
                    }
                }
                SolverKind::Adadelta => {
                    let (eg, ex) = bufs.split_at_mut(1);
                    let (eg, ex) = (eg[0].data_mut(), ex[0].data_mut());
                    for i in 0..g.len() {
                        eg[i] = h.rho * eg[i] + (1.0 - h.rho) * g[i] * g[i];
                        let delta = -(ex[i] + h.eps).sqrt() / (eg[i] + h.eps).sqrt() * g[i];
                        ex[i] = h.rho * ex[i] + (1.0 - h.rho) * delta * delta;
                        w[i] += delta;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Writes the state as `FCNO`, version u16, solver u8, the seven
/// hyperparameters as f64, the step counter as u64, then per parameter its
/// UTF-8 name (u32 length prefix), buffer count u8 and the buffers as tensor
/// blobs. All integers and floats are little-endian.
pub fn write_state<W: Write>(state: &OptimizerState, mut out: W) -> std::io::Result<()> {
    out.write_all(STATE_MAGIC)?;
    out.write_all(&STATE_VERSION.to_le_bytes())?;
    out.write_all(&[state.kind.code()])?;
    let h = &state.hyper;
    for v in [h.lr, h.momentum, h.beta1, h.beta2, h.rho, h.eps, h.rms_decay] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&state.step.to_le_bytes())?;
    out.write_all(&(state.buffers.len() as u32).to_le_bytes())?;
    for (name, bufs) in &state.buffers {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[bufs.len() as u8])?;
        for b in bufs {
            write_tensor(b, &mut out)?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::format("optimizer state", format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read_state<R: Read>(mut input: R) -> Result<OptimizerState> {
    let bad = |d: String| Error::format("optimizer state", d);
    if &read_exact::<_, 4>(&mut input)? != STATE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_exact(&mut input)?);
    if version != STATE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let [code] = read_exact::<_, 1>(&mut input)?;
    let kind = *SolverKind::ALL.get(code as usize).ok_or_else(|| bad(format!("unknown solver code {code}")))?;
    let mut f = [0.0; 7];
    for v in &mut f {
        *v = f64::from_le_bytes(read_exact(&mut input)?);
    }
    let hyper = Hyper { lr: f[0], momentum: f[1], beta1: f[2], beta2: f[3], rho: f[4], eps: f[5], rms_decay: f[6] };
    hyper.validate()?;
    let step = u64::from_le_bytes(read_exact(&mut input)?);
    let count = u32::from_le_bytes(read_exact(&mut input)?);
    let mut buffers = BTreeMap::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(&mut input)?) as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(|e| bad(format!("truncated: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8".into()))?;
        let [n] = read_exact::<_, 1>(&mut input)?;
        if n as usize != kind.buffer_count() {
            return Err(bad(format!("`{name}` has {n} buffers, {kind} uses {}", kind.buffer_count())));
        }
        let bufs = (0..n).map(|_| read_tensor_prefix(&mut input)).collect::<Result<Vec<_>>>()?;
        buffers.insert(name, bufs);
    }
    Ok(OptimizerState { kind, hyper, step, buffers })
}
