//! Leaky integrate-and-fire neuron with soft reset.
//!
//! One time step is three phases: charging `H[t] = V[t-1] + (C[t] - V[t-1]) / tau`,
//! firing `S[t] = 1 if H[t] >= V_thr else 0`, and the soft reset
//! `V[t] = H[t] - V_thr * S[t]`. Training replaces the step's derivative with a
//! surrogate; see [`Surrogate`].

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    /// `a / (2 (1 + (pi/2 a x)^2))`, primitive `atan(pi/2 a x)/pi + 1/2`.
    Arctan,
    /// Box of height `1/a` on `|x| < a/2`, primitive `clamp(x/a + 1/2, 0, 1)`.
    Rectangular,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::Arctan => "arctan",
            SurrogateKind::Rectangular => "rectangular",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "arctan" => Ok(SurrogateKind::Arctan),
            "rectangular" => Ok(SurrogateKind::Rectangular),
            other => Err(Error::invalid(format!("unknown surrogate `{other}`"))),
        }
    }
}

/// Smooth stand-in for the Heaviside step used by the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    pub width: f64,
}

impl Surrogate {
    /// The smooth step whose derivative is [`Surrogate::derivative`].
    pub fn primitive(&self, x: f64) -> f64 {
        let a = self.width;
        match self.kind {
            SurrogateKind::Arctan => (FRAC_PI_2 * a * x).atan() / PI + 0.5,
            SurrogateKind::Rectangular => (x / a + 0.5).clamp(0.0, 1.0),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let a = self.width;
        match self.kind {
            SurrogateKind::Arctan => {
                let u = FRAC_PI_2 * a * x;
                a / (2.0 * (1.0 + u * u))
            }
            SurrogateKind::Rectangular => {
                if x.abs() < a / 2.0 {
                    1.0 / a
                } else {
                    0.0
                }
            }
        }
    }
}

/// Neuron parameters shared by a whole layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    pub v_threshold: f64,
    pub tau: f64,
    pub surrogate: Surrogate,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            v_threshold: 1.0,
            tau: 2.0,
            surrogate: Surrogate {
                kind: SurrogateKind::Arctan,
                width: 2.0,
            },
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_threshold > 0.0) {
            return Err(Error::invalid("v_threshold must be positive"));
        }
        if !(self.tau > 1.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau must be finite and greater than 1"));
        }
        if !(self.surrogate.width > 0.0) {
            return Err(Error::invalid("surrogate width must be positive"));
        }
        Ok(())
    }
}

/// Forward behaviour of the firing phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FireMode {
    /// Exact Heaviside step; outputs are binary.
    #[default]
    Spike,
    /// The surrogate's primitive; the whole neuron becomes differentiable.
    Smooth,
}

/// Membrane potential `V[t]` of a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub membrane: Tensor,
}

impl NeuronState {
    /// Resting state for a layer of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            membrane: Tensor::zeros(shape),
        }
    }
}

/// Charging phase: the pre-spike potential `H[t]`.
pub fn charge(state: &NeuronState, input_current: &Tensor, config: &NeuronConfig) -> Result<Tensor> {
    let tau = config.tau;
    state
        .membrane
        .zip_map(input_current, |v, c| v + (c - v) / tau)
}

/// Firing phase: `1` where `h >= v_threshold`, else `0`.
pub fn fire(h: &Tensor, config: &NeuronConfig) -> Tensor {
    let thr = config.v_threshold;
    h.map(|v| if v >= thr { 1.0 } else { 0.0 })
}

/// Smooth firing used when the whole neuron must be differentiable.
pub fn fire_smooth(h: &Tensor, config: &NeuronConfig) -> Tensor {
    let thr = config.v_threshold;
    let s = config.surrogate;
    h.map(|v| s.primitive(v - thr))
}

/// Soft reset: `V[t] = H[t] - v_threshold * S[t]`.
pub fn soft_reset(h: &Tensor, s: &Tensor, config: &NeuronConfig) -> Result<Tensor> {
    let thr = config.v_threshold;
    h.zip_map(s, |h, s| h - thr * s)
}

/// One full charge/fire/reset step. Returns the spikes and the new state.
pub fn step(
    state: &NeuronState,
    input_current: &Tensor,
    config: &NeuronConfig,
) -> Result<(Tensor, NeuronState)> {
    let h = charge(state, input_current, config)?;
    let s = fire(&h, config);
    let membrane = soft_reset(&h, &s, config)?;
    Ok((s, NeuronState { membrane }))
}

/// Runs a layer of neurons over a time-major input `[T*B, ...]` on the tape,
/// starting from rest. Returns the spikes in the same layout.
pub fn run_layer(
    tape: &mut Tape,
    input: Var,
    time_steps: usize,
    config: &NeuronConfig,
    mode: FireMode,
) -> Result<Var> {
    let rows = tape.value(input).shape()[0];
    if time_steps == 0 || rows % time_steps != 0 {
        return Err(Error::dim(
            "neuron",
            format!("{rows} rows do not split into {time_steps} time steps"),
        ));
    }
    let batch = rows / time_steps;
    let mut shape = tape.value(input).shape().to_vec();
    shape[0] = batch;
    let mut v = tape.constant(Tensor::zeros(&shape));
    let mut spikes = Vec::with_capacity(time_steps);
    for t in 0..time_steps {
        let c = tape.slice_rows(input, t * batch, batch)?;
        let h = tape.charge(v, c, config.tau)?;
        let s = tape.fire(
            h,
            config.v_threshold,
            config.surrogate,
            mode == FireMode::Smooth,
        );
        v = tape.soft_reset(h, s, config.v_threshold)?;
        spikes.push(s);
    }
    tape.concat_rows(&spikes)
}
