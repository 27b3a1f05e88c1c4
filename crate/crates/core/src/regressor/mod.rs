//! Feed-forward regressor from a one-hot part-segmentation grid to the 226
//! raw model outputs, with the SVD projection and body model stacked on top.

mod chain_check;
mod checkpoint;
mod train;

pub use chain_check::*;
pub use checkpoint::*;
pub use train::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::body_model::{RotationSet, ShapeParams};
use crate::error::{Error, Result};
use crate::losses::{decode_raw, DecodedOutputs, RAW_OUTPUT_DIM};
use crate::scalar::Real;
use crate::synth::PartSegGrid;

/// Output weights start this small (relative to 1/√fan-in) so the initial
/// prediction sits near the identity-biased rest pose.
const OUTPUT_INIT_SCALE: f64 = 0.1;

/// Fully connected tanh network stored as one flat parameter vector.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Its weights
/// come first, input-major (`w[i · outputs + o]`), then its biases. The
/// first layer reads the one-hot grid, so only one weight row per cell is
/// ever touched.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorNet<T> {
    grid_size: usize,
    granularity: usize,
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub active: Vec<usize>,
    /// Post-activation values of each hidden layer.
    pub hidden: Vec<Vec<T>>,
    pub raw: Vec<T>,
}

impl<T: Real> RegressorNet<T> {
    /// Random hidden weights, small output weights, and output biases that
    /// decode to identity rotations and zero shape.
    pub fn new(grid_size: usize, granularity: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(grid_size, granularity, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net.sizes.len() - 1;
        for l in 0..layers {
            let fan_in = if l == 0 { grid_size * grid_size } else { net.sizes[l] };
            let mut std = 1.0 / (fan_in as f64).sqrt();
            if l == layers - 1 {
                std *= OUTPUT_INIT_SCALE;
            }
            let normal = Normal::new(0.0, std).expect("positive std");
            let (w, _) = net.layer_ranges(l);
            for p in &mut net.params[w] {
                *p = T::of(normal.sample(&mut rng));
            }
        }
        let (_, bias) = net.layer_ranges(layers - 1);
        let out = &mut net.params[bias];
        for block in 0..(RAW_OUTPUT_DIM - crate::body_model::NUM_BETAS) / 9 {
            for d in 0..3 {
                out[block * 9 + d * 4] = T::one();
            }
        }
        Ok(net)
    }

    /// All parameters zero. Its output cannot be decoded.
    pub fn zeros(grid_size: usize, granularity: usize, hidden: &[usize]) -> Result<Self> {
        crate::synth::GranularityMap::new(granularity)?;
        if grid_size == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("grid size and hidden widths must be positive".into()));
        }
        let mut sizes = vec![grid_size * grid_size * (granularity + 1)];
        sizes.extend_from_slice(hidden);
        sizes.push(RAW_OUTPUT_DIM);
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(RegressorNet { grid_size, granularity, sizes, params: vec![T::zero(); count] })
    }

    /// Rebuilds a net from its layout and flat parameters.
    pub fn from_parts(grid_size: usize, granularity: usize, sizes: Vec<usize>, params: Vec<T>) -> Result<Self> {
        let hidden = sizes.get(1..sizes.len().saturating_sub(1)).unwrap_or(&[]).to_vec();
        let net = Self::zeros(grid_size, granularity, &hidden)?;
        if net.sizes != sizes {
            return Err(Error::Format(format!("layer sizes {sizes:?} do not fit a {grid_size}² grid at granularity {granularity}")));
        }
        if params.len() != net.params.len() {
            return Err(Error::Format(format!("{} parameters, expected {}", params.len(), net.params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(RegressorNet { params, ..net })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    /// Input width, each hidden width, then 226.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Index ranges of layer `l`'s weights and biases in the flat vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (start..start + i * o, start + i * o..start + i * o + o)
    }

    pub fn cast<U: Real>(&self) -> RegressorNet<U> {
        RegressorNet {
            grid_size: self.grid_size,
            granularity: self.granularity,
            sizes: self.sizes.clone(),
            params: self.params.iter().map(|p| U::of(p.to_f64_lossy())).collect(),
        }
    }

    fn check_grid(&self, grid: &PartSegGrid) -> Result<()> {
        if grid.size() != self.grid_size || grid.granularity() != self.granularity {
            return Err(Error::InvalidArgument(format!(
                "net expects a {}² grid with {} parts, got {}² with {}",
                self.grid_size,
                self.granularity,
                grid.size(),
                grid.granularity()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, grid: &PartSegGrid) -> Result<Forward<T>> {
        self.check_grid(grid)?;
        let active: Vec<usize> = grid.active_inputs().collect();
        let layers = self.num_layers();
        let mut hidden = Vec::with_capacity(layers - 1);

        let (w, b) = self.layer_ranges(0);
        let width = self.sizes[1];
        let mut h = self.params[b].to_vec();
        let weights = &self.params[w];
        for &a in &active {
            for (acc, wv) in h.iter_mut().zip(&weights[a * width..(a + 1) * width]) {
                *acc += *wv;
            }
        }
        for l in 1..layers {
            h.iter_mut().for_each(|v| *v = v.tanh());
            let (w, b) = self.layer_ranges(l);
            let out = self.sizes[l + 1];
            let mut next = self.params[b].to_vec();
            let weights = &self.params[w];
            for (i, &x) in h.iter().enumerate() {
                for (acc, wv) in next.iter_mut().zip(&weights[i * out..(i + 1) * out]) {
                    *acc += x * *wv;
                }
            }
            hidden.push(std::mem::replace(&mut h, next));
        }
        Ok(Forward { active, hidden, raw: h })
    }

    /// Raw outputs decoded to rotations (through the SVD projection) and β.
    pub fn decode(&self, grid: &PartSegGrid) -> Result<(Forward<T>, DecodedOutputs<T>)> {
        let fwd = self.forward(grid)?;
        let decoded = decode_raw(&fwd.raw)?;
        Ok((fwd, decoded))
    }

    pub fn predict(&self, grid: &PartSegGrid) -> Result<(RotationSet<T>, ShapeParams<T>)> {
        let (_, d) = self.decode(grid)?;
        Ok((d.rotations, d.betas))
    }

    /// Adds the gradient of a scalar with respect to the parameters, given
    /// its gradient on the raw outputs, into `grad`.
    pub fn backward(&self, fwd: &Forward<T>, d_raw: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        assert_eq!(d_raw.len(), RAW_OUTPUT_DIM, "raw gradient size");
        let mut d_out = d_raw.to_vec();
        for l in (1..self.num_layers()).rev() {
            let (w, b) = self.layer_ranges(l);
            let out = self.sizes[l + 1];
            let input = &fwd.hidden[l - 1];
            for (g, d) in grad[b].iter_mut().zip(&d_out) {
                *g += *d;
            }
            let weights = &self.params[w.clone()];
            let mut d_in = vec![T::zero(); input.len()];
            for (i, &x) in input.iter().enumerate() {
                let row = i * out..(i + 1) * out;
                let mut acc = T::zero();
                for ((g, wv), d) in grad[w.start + row.start..w.start + row.end].iter_mut().zip(&weights[row]).zip(&d_out) {
                    *g += x * *d;
                    acc += *wv * *d;
                }
                // through tanh: 1 − a²
                d_in[i] = acc * (T::one() - x * x);
            }
            d_out = d_in;
        }
        let (w, b) = self.layer_ranges(0);
        let width = self.sizes[1];
        for (g, d) in grad[b].iter_mut().zip(&d_out) {
            *g += *d;
        }
        for &a in &fwd.active {
            let start = w.start + a * width;
            for (g, d) in grad[start..start + width].iter_mut().zip(&d_out) {
                *g += *d;
            }
        }
    }
}
