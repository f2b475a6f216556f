//! Feature evaluation and volume compositing.
//!
//! Densities come from the three-mode sum of vector-element x matrix-element
//! products; appearance concatenates the per-rank per-mode per-channel
//! products and feeds them, together with an encoded view direction, through
//! the scene's small MLP head. Compositing accumulates transmittance-weighted
//! colors with optional early termination.

use crate::math::Vec3;
use crate::scene::{AppearanceHead, VmDecomposition};
use std::f64::consts::LN_2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeaturesError {
    #[error("grid index {index:?} outside resolution {resolution:?}")]
    IndexOutOfRange {
        index: [usize; 3],
        resolution: [usize; 3],
    },
    #[error("samples not sorted by t at position {0}")]
    UnsortedSamples(usize),
}

/// Which samples the running transmittance includes.
///
/// `Printed` folds the current sample's own optical depth into `T_k` before
/// weighting it (the rendering sum as used throughout this crate);
/// `Conventional` weights sample k by the transmittance of samples 1..k-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransmittanceConvention {
    #[default]
    Printed,
    Conventional,
}

fn check_index(decomp: &VmDecomposition, index: [usize; 3]) -> Result<(), FeaturesError> {
    let res = decomp.resolution;
    if index[0] >= res[0] || index[1] >= res[1] || index[2] >= res[2] {
        return Err(FeaturesError::IndexOutOfRange {
            index,
            resolution: res,
        });
    }
    Ok(())
}

/// Raw three-mode sum at a grid cell, accumulated rank-major with modes in
/// X, Y, Z order. The fixed order makes the result bit-reproducible against
/// a dense outer-product reconstruction.
pub fn density_raw(decomp: &VmDecomposition, index: [usize; 3]) -> Result<f64, FeaturesError> {
    check_index(decomp, index)?;
    let [x, y, z] = index;
    let mut acc = 0.0f64;
    for f in &decomp.density {
        acc += f.vx[x] as f64 * f.myz.at(y, z) as f64;
        acc += f.vy[y] as f64 * f.mxz.at(x, z) as f64;
        acc += f.vz[z] as f64 * f.mxy.at(x, y) as f64;
    }
    Ok(acc)
}

/// Density transfer: a softplus shifted to zero at the origin and clamped
/// non-negative, so all-zero factors give exactly zero density.
pub fn density_transfer(raw: f64) -> f64 {
    if raw > 30.0 {
        raw - LN_2
    } else {
        ((1.0 + raw.exp()) * 0.5).ln().max(0.0)
    }
}

pub fn density_at(decomp: &VmDecomposition, index: [usize; 3]) -> Result<f64, FeaturesError> {
    Ok(density_transfer(density_raw(decomp, index)?))
}

/// Pre-MLP appearance feature vector: scalar products concatenated rank-major,
/// then mode (X, Y, Z), then channel.
pub fn appearance_features(
    decomp: &VmDecomposition,
    index: [usize; 3],
) -> Result<Vec<f64>, FeaturesError> {
    check_index(decomp, index)?;
    let [x, y, z] = index;
    let c = decomp.channels;
    let mut out = Vec::with_capacity(decomp.appearance_feature_width());
    for r in 0..decomp.rank {
        for mode in 0..3 {
            for ch in 0..c {
                let f = &decomp.appearance[r * c + ch];
                let prod = match mode {
                    0 => f.vx[x] as f64 * f.myz.at(y, z) as f64,
                    1 => f.vy[y] as f64 * f.mxz.at(x, z) as f64,
                    _ => f.vz[z] as f64 * f.mxy.at(x, y) as f64,
                };
                out.push(prod);
            }
        }
    }
    Ok(out)
}

/// Sin/cos positional encoding of a unit direction: octave-major, axes in
/// x, y, z order, sin before cos. Width is `6 * degree`.
pub fn encode_direction(dir: Vec3, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * degree);
    for l in 0..degree {
        let freq = (1u64 << l) as f64 * std::f64::consts::PI;
        for v in [dir.x, dir.y, dir.z] {
            out.push((freq * v).sin());
            out.push((freq * v).cos());
        }
    }
    out
}

/// Forward pass of the appearance head: tanh hidden layers, sigmoid outputs.
pub fn head_forward(head: &AppearanceHead, input: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), head.input_width());
    let n_layers = head.weights.len();
    let mut cur = input.to_vec();
    for (l, (w, biases)) in head.weights.iter().zip(&head.biases).enumerate() {
        let mut next = Vec::with_capacity(w.rows());
        for (j, bias) in biases.iter().enumerate() {
            let mut acc = *bias as f64;
            for (i, x) in cur.iter().enumerate() {
                acc += w.at(j, i) as f64 * x;
            }
            next.push(if l + 1 == n_layers {
                sigmoid(acc)
            } else {
                acc.tanh()
            });
        }
        cur = next;
    }
    cur
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// View-dependent color at a cell, one value per channel in [0, 1].
pub fn appearance_at(
    decomp: &VmDecomposition,
    head: &AppearanceHead,
    index: [usize; 3],
    dir: Vec3,
) -> Result<Vec<f64>, FeaturesError> {
    let mut input = appearance_features(decomp, index)?;
    input.extend(encode_direction(dir, head.direction_degree));
    Ok(head_forward(head, &input))
}

/// Per-ray compositing state. Folding is strictly sequential in t; the
/// caller guarantees ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeState {
    optical_depth: f64,
    transmittance: f64,
    color: Vec<f64>,
    shaded: usize,
    terminated: bool,
}

impl CompositeState {
    pub fn new(channels: usize) -> Self {
        CompositeState {
            optical_depth: 0.0,
            transmittance: 1.0,
            color: vec![0.0; channels],
            shaded: 0,
            terminated: false,
        }
    }

    /// Fold one shaded sample. Once the running transmittance drops below
    /// `tau` the state is terminated and later folds are ignored.
    pub fn fold(
        &mut self,
        sigma: f64,
        delta: f64,
        color: &[f64],
        tau: f64,
        convention: TransmittanceConvention,
    ) {
        if self.terminated {
            return;
        }
        debug_assert!(sigma >= 0.0 && delta > 0.0);
        let absorb = 1.0 - (-sigma * delta).exp();
        let weight = match convention {
            TransmittanceConvention::Printed => {
                self.optical_depth += sigma * delta;
                self.transmittance = (-self.optical_depth).exp();
                self.transmittance * absorb
            }
            TransmittanceConvention::Conventional => {
                let w = self.transmittance * absorb;
                self.optical_depth += sigma * delta;
                self.transmittance = (-self.optical_depth).exp();
                w
            }
        };
        for (acc, c) in self.color.iter_mut().zip(color) {
            *acc += weight * c;
        }
        self.shaded += 1;
        if self.transmittance < tau {
            self.terminated = true;
        }
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn color(&self) -> &[f64] {
        &self.color
    }

    pub fn samples_shaded(&self) -> usize {
        self.shaded
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }
}

/// One pre-shaded sample for [`composite`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample {
    pub t: f64,
    pub delta: f64,
    pub density: f64,
    pub color: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOutcome {
    pub color: Vec<f64>,
    pub samples_shaded: usize,
    pub transmittance: f64,
}

/// Composite an ordered sample list. `tau` in [0, 1): folding stops
/// permanently once the accumulated transmittance falls below it; with
/// `tau = 0` every sample folds.
pub fn composite(
    samples: &[CompositeSample],
    channels: usize,
    tau: f64,
    convention: TransmittanceConvention,
) -> Result<CompositeOutcome, FeaturesError> {
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].t < pair[0].t {
            return Err(FeaturesError::UnsortedSamples(i + 1));
        }
    }
    let mut state = CompositeState::new(channels);
    for s in samples {
        if state.terminated() {
            break;
        }
        state.fold(s.density, s.delta, &s.color, tau, convention);
    }
    Ok(CompositeOutcome {
        color: state.color.clone(),
        samples_shaded: state.shaded,
        transmittance: state.transmittance,
    })
}
