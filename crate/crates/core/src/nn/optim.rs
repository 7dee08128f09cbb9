//! AdamW and RAdam over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
/// RAdam applies the adaptive step only once the variance length exceeds this.
pub const RADAM_RHO_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    AdamW,
    RAdam,
}

impl OptimizerKind {
    pub fn tag(self) -> u8 {
        match self {
            OptimizerKind::AdamW => 0,
            OptimizerKind::RAdam => 1,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(OptimizerKind::AdamW),
            1 => Some(OptimizerKind::RAdam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Apply one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer holds {} moments but got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::invariant("non-finite gradient"));
        }
        match self.kind {
            OptimizerKind::AdamW => adamw_step(self, params, grads, lr),
            OptimizerKind::RAdam => radam_step(self, params, grads, lr),
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Adam with decoupled weight decay: `theta *= 1 - lr * wd` before the
/// moment-based step.
pub fn adamw_step(st: &mut OptimizerState, params: &mut [f64], grads: &[f64], lr: f64) {
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        params[i] *= 1.0 - lr * st.weight_decay;
        st.m[i] = BETA1 * st.m[i] + (1.0 - BETA1) * g;
        st.v[i] = BETA2 * st.v[i] + (1.0 - BETA2) * g * g;
        let mhat = st.m[i] / bc1;
        let vhat = st.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + EPS);
    }
}

/// Rectified Adam. Weight decay is added to the gradient (L2). While the
/// variance length is at most 4 the update is bias-corrected momentum SGD.
pub fn radam_step(st: &mut OptimizerState, params: &mut [f64], grads: &[f64], lr: f64) {
    st.step += 1;
    let t = st.step as i32;
    let b2t = BETA2.powi(t);
    let bc1 = 1.0 - BETA1.powi(t);
    let rho_inf = 2.0 / (1.0 - BETA2) - 1.0;
    let rho_t = rho_inf - 2.0 * st.step as f64 * b2t / (1.0 - b2t);
    let rect = if rho_t > RADAM_RHO_THRESHOLD {
        Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
    } else {
        None
    };
    for i in 0..params.len() {
        let g = grads[i] + st.weight_decay * params[i];
        st.m[i] = BETA1 * st.m[i] + (1.0 - BETA1) * g;
        st.v[i] = BETA2 * st.v[i] + (1.0 - BETA2) * g * g;
        let mhat = st.m[i] / bc1;
        match rect {
            Some(r) => {
                let adaptive = (1.0 - b2t).sqrt() / (st.v[i].sqrt() + EPS);
                params[i] -= lr * mhat * r * adaptive;
            }
            None => params[i] -= lr * mhat,
        }
    }
}
