//! Stateful spiking-neuron dynamics over discrete time steps.
//!
//! Three neuron kinds are supported: integrate-and-fire (IF), which emits a
//! binary spike and resets; membrane-potential (MP), which only charges and
//! reports its potential; and integrate-and-hybrid-fire (IHF), which emits
//! both the spike and the post-reset potential each step. The firing step is
//! a strict threshold comparison; its backward rule is the derivative of a
//! sigmoid relaxation.

use ndarray::{Array3, ArrayD};

use crate::error::{Error, Result};

/// Reset behaviour after a spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Subtract the threshold from the membrane potential.
    Soft,
    /// Jump to a fixed reset potential.
    Hard,
}

/// Binary (c, h, w) spike volume. Every element is exactly 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor(Array3<f64>);

impl SpikeTensor {
    pub fn new(bits: Array3<f64>) -> Result<Self> {
        if bits.iter().any(|&b| b != 0.0 && b != 1.0) {
            return Err(Error::InvalidArgument("spike tensor must be binary".into()));
        }
        Ok(Self(bits))
    }

    /// Build without checking. The caller guarantees binary values.
    pub(crate) fn from_binary_unchecked(bits: Array3<f64>) -> Self {
        Self(bits)
    }

    pub fn bits(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Row-major bit iterator (c, h, w order).
    pub fn iter_bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().map(|&b| b != 0.0)
    }
}

/// Sigmoid surrogate for the firing step.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateConfig {
    /// Steepness of the sigmoid. 4.0 gives a unit peak gradient at threshold.
    pub slope: f64,
    /// Replace the hard fire with its smooth sigmoid in the forward pass.
    /// Only used to make finite-difference gradient checks well-posed.
    pub relaxed_forward: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { slope: 4.0, relaxed_forward: false }
    }
}

impl SurrogateConfig {
    pub fn new(slope: f64) -> Self {
        assert!(slope > 0.0, "surrogate slope must be positive");
        Self { slope, relaxed_forward: false }
    }

    pub fn relaxed(slope: f64) -> Self {
        Self { slope, relaxed_forward: true }
    }
}

/// Per-neuron membrane state of a spiking layer.
#[derive(Debug, Clone)]
pub struct MembraneState {
    pub potentials: Array3<f64>,
    pub v_threshold: f64,
    pub reset_mode: ResetMode,
    pub v_reset: f64,
    pub time_index: u64,
}

impl MembraneState {
    pub fn new(shape: (usize, usize, usize), v_threshold: f64, reset_mode: ResetMode) -> Self {
        Self {
            potentials: Array3::zeros(shape),
            v_threshold,
            reset_mode,
            v_reset: 0.0,
            time_index: 0,
        }
    }

    pub fn with_v_reset(mut self, v_reset: f64) -> Self {
        self.v_reset = v_reset;
        self
    }

    fn check_shape(&self, input: &Array3<f64>) -> Result<()> {
        if input.shape() != self.potentials.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.potentials.shape().to_vec(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Zero the potentials and the time index between samples.
pub fn reset_state(state: &mut MembraneState) {
    state.potentials.fill(0.0);
    state.time_index = 0;
}

// Slice-level kernels, shared with the differentiable layers in `nn`.

pub(crate) fn charge(m: &mut [f64], input: &[f64]) {
    for (mi, &ii) in m.iter_mut().zip(input) {
        *mi += ii;
    }
}

/// Strict-threshold fire: spike iff m > v_th.
pub(crate) fn fire_hard(m: &[f64], v_th: f64, out: &mut [f64]) {
    for (oi, &mi) in out.iter_mut().zip(m) {
        *oi = if mi > v_th { 1.0 } else { 0.0 };
    }
}

/// Smooth fire used in relaxed-forward mode: sigmoid(k (m - v_th)).
pub(crate) fn fire_relaxed(m: &[f64], v_th: f64, slope: f64, out: &mut [f64]) {
    for (oi, &mi) in out.iter_mut().zip(m) {
        *oi = sigmoid(slope * (mi - v_th));
    }
}

pub(crate) fn soft_reset(m: &mut [f64], spikes: &[f64], v_th: f64) {
    for (mi, &si) in m.iter_mut().zip(spikes) {
        *mi -= si * v_th;
    }
}

pub(crate) fn hard_reset(m: &mut [f64], spikes: &[f64], v_reset: f64) {
    for (mi, &si) in m.iter_mut().zip(spikes) {
        *mi = (1.0 - si) * *mi + si * v_reset;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d(spike)/d(potential) of the sigmoid surrogate at pre-reset potential m.
pub(crate) fn surrogate_grad_scalar(m: f64, v_th: f64, slope: f64) -> f64 {
    let s = sigmoid(slope * (m - v_th));
    slope * s * (1.0 - s)
}

fn fire(m: &[f64], v_th: f64, cfg: &SurrogateConfig, out: &mut [f64]) {
    if cfg.relaxed_forward {
        fire_relaxed(m, v_th, cfg.slope, out);
    } else {
        fire_hard(m, v_th, out);
    }
}

/// Charge, fire, reset. Returns the spike tensor.
pub fn if_step(state: &mut MembraneState, input: &Array3<f64>, cfg: &SurrogateConfig) -> Result<SpikeTensor> {
    state.check_shape(input)?;
    let shape = state.potentials.raw_dim();
    let mut spikes = Array3::zeros(shape);
    {
        let m = state.potentials.as_slice_mut().unwrap();
        let s = spikes.as_slice_mut().unwrap();
        charge(m, input.as_slice().unwrap());
        fire(m, state.v_threshold, cfg, s);
        match state.reset_mode {
            ResetMode::Soft => soft_reset(m, s, state.v_threshold),
            ResetMode::Hard => hard_reset(m, s, state.v_reset),
        }
    }
    state.time_index += 1;
    Ok(SpikeTensor::from_binary_unchecked(spikes))
}

/// Charge only; returns a copy of the post-charge potentials.
pub fn mp_step(state: &mut MembraneState, input: &Array3<f64>) -> Result<Array3<f64>> {
    state.check_shape(input)?;
    charge(
        state.potentials.as_slice_mut().unwrap(),
        input.as_slice().unwrap(),
    );
    state.time_index += 1;
    Ok(state.potentials.clone())
}

/// Charge, fire, soft reset, then report the post-reset membrane potential.
/// Returns (spikes, membrane output).
pub fn ihf_step(
    state: &mut MembraneState,
    input: &Array3<f64>,
    cfg: &SurrogateConfig,
) -> Result<(SpikeTensor, Array3<f64>)> {
    state.check_shape(input)?;
    if state.reset_mode != ResetMode::Soft {
        return Err(Error::InvalidArgument("IHF requires soft reset".into()));
    }
    let shape = state.potentials.raw_dim();
    let mut spikes = Array3::zeros(shape);
    {
        let m = state.potentials.as_slice_mut().unwrap();
        let s = spikes.as_slice_mut().unwrap();
        charge(m, input.as_slice().unwrap());
        fire(m, state.v_threshold, cfg, s);
        soft_reset(m, s, state.v_threshold);
    }
    state.time_index += 1;
    let membrane = state.potentials.clone();
    Ok((SpikeTensor::from_binary_unchecked(spikes), membrane))
}

/// Surrogate derivative of the firing step, elementwise over potentials.
pub fn fire_surrogate_backward(potential: &ArrayD<f64>, v_th: f64, cfg: &SurrogateConfig) -> ArrayD<f64> {
    potential.mapv(|m| surrogate_grad_scalar(m, v_th, cfg.slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    fn scalar_state(m0: f64, v_th: f64, mode: ResetMode) -> MembraneState {
        let mut st = MembraneState::new((1, 1, 1), v_th, mode);
        st.potentials[[0, 0, 0]] = m0;
        st
    }

    fn cfg() -> SurrogateConfig {
        SurrogateConfig::default()
    }

    #[test]
    fn if_below_threshold_accumulates() {
        let mut st = scalar_state(0.0, 1.0, ResetMode::Soft);
        let s = if_step(&mut st, &arr3(&[[[0.6]]]), &cfg()).unwrap();
        assert_eq!(s.bits()[[0, 0, 0]], 0.0);
        assert!((st.potentials[[0, 0, 0]] - 0.6).abs() < 1e-12);
        assert_eq!(st.time_index, 1);
    }

    #[test]
    fn if_soft_reset_subtracts_threshold() {
        let mut st = scalar_state(0.6, 1.0, ResetMode::Soft);
        let s = if_step(&mut st, &arr3(&[[[0.6]]]), &cfg()).unwrap();
        assert_eq!(s.bits()[[0, 0, 0]], 1.0);
        assert!((st.potentials[[0, 0, 0]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn if_hard_reset_sets_v_reset() {
        let mut st = scalar_state(0.0, 1.0, ResetMode::Hard).with_v_reset(0.0);
        let s = if_step(&mut st, &arr3(&[[[2.5]]]), &cfg()).unwrap();
        assert_eq!(s.bits()[[0, 0, 0]], 1.0);
        assert_eq!(st.potentials[[0, 0, 0]], 0.0);
    }

    #[test]
    fn mp_accumulates_and_reports() {
        let mut st = scalar_state(0.5, 1.0, ResetMode::Soft);
        let out = mp_step(&mut st, &arr3(&[[[0.3]]])).unwrap();
        assert!((out[[0, 0, 0]] - 0.8).abs() < 1e-12);

        let mut st = scalar_state(0.0, 1.0, ResetMode::Soft);
        let out = mp_step(&mut st, &arr3(&[[[0.0]]])).unwrap();
        assert_eq!(out[[0, 0, 0]], 0.0);
    }

    #[test]
    fn mp_constant_drive() {
        let mut st = scalar_state(0.0, 1.0, ResetMode::Soft);
        let mut outs = Vec::new();
        for _ in 0..3 {
            outs.push(mp_step(&mut st, &arr3(&[[[0.4]]])).unwrap()[[0, 0, 0]]);
        }
        for (got, want) in outs.iter().zip([0.4, 0.8, 1.2]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ihf_no_fire_reports_post_charge() {
        let mut st = scalar_state(0.5, 1.0, ResetMode::Soft);
        let (s, m) = ihf_step(&mut st, &arr3(&[[[0.3]]]), &cfg()).unwrap();
        assert_eq!(s.bits()[[0, 0, 0]], 0.0);
        assert!((m[[0, 0, 0]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ihf_fires_then_resets_before_output() {
        let mut st = scalar_state(0.5, 1.0, ResetMode::Soft);
        let (s, m) = ihf_step(&mut st, &arr3(&[[[0.7]]]), &cfg()).unwrap();
        assert_eq!(s.bits()[[0, 0, 0]], 1.0);
        assert!((m[[0, 0, 0]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ihf_constant_drive_sequence() {
        // Strict threshold: m = 1.0 exactly does not fire. Drive of 0.25 is
        // exactly representable, so the potential hits 1.0 with no rounding.
        let mut st = scalar_state(0.0, 1.0, ResetMode::Soft);
        let mut ss = Vec::new();
        let mut ms = Vec::new();
        for _ in 0..6 {
            let (s, m) = ihf_step(&mut st, &arr3(&[[[0.25]]]), &cfg()).unwrap();
            ss.push(s.bits()[[0, 0, 0]]);
            ms.push(m[[0, 0, 0]]);
        }
        assert_eq!(ss, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let want = [0.25, 0.5, 0.75, 1.0, 0.25, 0.5];
        for (got, w) in ms.iter().zip(want) {
            assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        }
    }

    #[test]
    fn ihf_rejects_hard_reset() {
        let mut st = scalar_state(0.0, 1.0, ResetMode::Hard);
        assert!(ihf_step(&mut st, &arr3(&[[[0.4]]]), &cfg()).is_err());
    }

    #[test]
    fn reset_zeroes_and_is_idempotent() {
        let mut st = scalar_state(0.7, 1.0, ResetMode::Soft);
        st.time_index = 5;
        reset_state(&mut st);
        assert_eq!(st.potentials[[0, 0, 0]], 0.0);
        assert_eq!(st.time_index, 0);
        reset_state(&mut st);
        assert_eq!(st.potentials[[0, 0, 0]], 0.0);
    }

    #[test]
    fn reset_then_replay_is_deterministic() {
        let mut st = MembraneState::new((2, 1, 1), 1.0, ResetMode::Soft);
        let inputs: Vec<Array3<f64>> = (0..8)
            .map(|i| arr3(&[[[0.3 + 0.1 * i as f64]], [[0.9 - 0.1 * i as f64]]]))
            .collect();
        let run = |st: &mut MembraneState| -> Vec<SpikeTensor> {
            inputs.iter().map(|x| if_step(st, x, &cfg()).unwrap()).collect()
        };
        let first = run(&mut st);
        reset_state(&mut st);
        let second = run(&mut st);
        assert_eq!(first, second);
    }

    #[test]
    fn surrogate_peak_and_saturation() {
        let c = SurrogateConfig::new(4.0);
        let g = fire_surrogate_backward(&ndarray::arr1(&[1.0]).into_dyn(), 1.0, &c);
        assert!((g[[0]] - 1.0).abs() < 1e-12);
        let g = fire_surrogate_backward(&ndarray::arr1(&[100.0, -100.0]).into_dyn(), 1.0, &c);
        assert!(g[[0]].abs() < 1e-12);
        assert!(g[[1]].abs() < 1e-12);
    }

    #[test]
    fn surrogate_off_center_value() {
        // k=4, m - v_th = 0.5 -> 4 sigma(2)(1 - sigma(2))
        let g = surrogate_grad_scalar(1.5, 1.0, 4.0);
        let s = sigmoid(2.0);
        assert!((g - 4.0 * s * (1.0 - s)).abs() < 1e-15);
        assert!((g - 0.419974341614026).abs() < 1e-12);
    }

    #[test]
    fn boundary_input_to_exact_threshold_never_fires() {
        let mut st = scalar_state(0.0, 1.0, ResetMode::Soft);
        let s = if_step(&mut st, &arr3(&[[[1.0]]]), &cfg()).unwrap();
        assert_eq!(s.bits()[[0, 0, 0]], 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut st = MembraneState::new((2, 2, 2), 1.0, ResetMode::Soft);
        let bad = Array3::zeros((1, 2, 2));
        assert!(if_step(&mut st, &bad, &cfg()).is_err());
        assert!(mp_step(&mut st, &bad).is_err());
        assert!(ihf_step(&mut st, &bad, &cfg()).is_err());
    }

    #[test]
    fn spike_tensor_rejects_non_binary() {
        assert!(SpikeTensor::new(arr3(&[[[0.5]]])).is_err());
        assert!(SpikeTensor::new(arr3(&[[[1.0, 0.0]]])).is_ok());
    }
}
