//! Binary (Rademacher) discrete Brownian filtration.
//!
//! The lattice is the full, non-recombining tree of a symmetric random walk
//! with increments `±sqrt(dt)`. A node is addressed by `(step, node)` where
//! `node` is the path index in `0..2^step`: bit `i` of the index (counted from
//! the most significant of the `step` bits) records the direction of step `i`,
//! `1` for up and `0` for down. The children of `(k, j)` are `(k + 1, 2j)`
//! (down) and `(k + 1, 2j + 1)` (up), each with probability 1/2.
//!
//! Because every node has exactly two equally likely children, every
//! martingale is a stochastic integral against the walk, with integrand given
//! by the difference quotient of its child values. Conditional expectations
//! are exact backward averages.

use std::ops::Range;

use crate::error::{Error, Result};

/// Default cap on the number of steps (2^22 leaves).
pub const DEFAULT_MAX_STEPS: usize = 22;

/// Environment variable overriding [`DEFAULT_MAX_STEPS`].
pub const MAX_STEPS_ENV: &str = "IMPACT_BSDE_MAX_STEPS";

/// Default relative tolerance of the martingale check.
pub const DEFAULT_MARTINGALE_TOL: f64 = 1e-12;

/// Step cap in effect, honouring [`MAX_STEPS_ENV`].
pub fn step_cap() -> usize {
    std::env::var(MAX_STEPS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|v| (1..63).contains(v))
        .unwrap_or(DEFAULT_MAX_STEPS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    num_steps: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
    martingale_tol: f64,
}

/// Worst violation of the martingale property and where it happens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defect {
    pub value: f64,
    pub step: usize,
    pub node: usize,
}

impl Defect {
    fn none() -> Self {
        Defect {
            value: 0.0,
            step: 0,
            node: 0,
        }
    }

    fn absorb(&mut self, value: f64, step: usize, node: usize) {
        if value > self.value || value.is_nan() {
            *self = Defect { value, step, node };
        }
    }
}

impl Lattice {
    /// Builds a lattice, enforcing the step cap from [`step_cap`].
    pub fn new(num_steps: usize, horizon: f64) -> Result<Self> {
        Self::with_cap(num_steps, horizon, step_cap())
    }

    pub fn with_cap(num_steps: usize, horizon: f64, cap: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::invalid("num_steps", "must be at least 1"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive and finite"));
        }
        if num_steps > cap {
            let nodes = (1u128 << (num_steps.min(120) + 1)) - 1;
            return Err(Error::StepCap {
                requested: num_steps,
                cap,
                bytes: nodes * 8,
            });
        }
        let dt = horizon / num_steps as f64;
        Ok(Lattice {
            num_steps,
            horizon,
            dt,
            sqrt_dt: dt.sqrt(),
            martingale_tol: DEFAULT_MARTINGALE_TOL,
        })
    }

    pub fn with_martingale_tol(mut self, tol: f64) -> Self {
        self.martingale_tol = tol;
        self
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn martingale_tol(&self) -> f64 {
        self.martingale_tol
    }

    pub fn nodes_at(&self, step: usize) -> usize {
        1usize << step
    }

    pub fn num_leaves(&self) -> usize {
        1usize << self.num_steps
    }

    /// Total number of nodes over all steps `0..=N`.
    pub fn num_nodes(&self) -> usize {
        (1usize << (self.num_steps + 1)) - 1
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Walk position in units of `sqrt(dt)`: (#ups − #downs) along the path.
    pub fn height(&self, step: usize, node: usize) -> i64 {
        2 * i64::from(node.count_ones()) - step as i64
    }

    pub fn brownian(&self, step: usize, node: usize) -> f64 {
        self.height(step, node) as f64 * self.sqrt_dt
    }

    /// Increment `B_k − B_{k−1}` realised on the way into `(step, node)`.
    pub fn increment_into(&self, node: usize) -> f64 {
        if node & 1 == 1 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// `sign(B)` with the convention `sign(0) = +1`.
    pub fn sign_brownian(&self, step: usize, node: usize) -> f64 {
        if self.height(step, node) >= 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Down and up children of `node`.
    pub fn children(node: usize) -> (usize, usize) {
        (2 * node, 2 * node + 1)
    }

    /// Leaves descending from `(step, node)`.
    pub fn leaf_range(&self, step: usize, node: usize) -> Range<usize> {
        let shift = self.num_steps - step;
        (node << shift)..((node + 1) << shift)
    }

    /// Ancestor at `step` of the node `node` sitting at `from_step`.
    pub fn ancestor(node: usize, from_step: usize, step: usize) -> usize {
        node >> (from_step - step)
    }

    /// Index of the mirror node obtained by flipping every increment.
    pub fn reflect_index(step: usize, node: usize) -> usize {
        node ^ ((1usize << step) - 1)
    }

    /// The walk `B` as an adapted scalar process.
    pub fn brownian_motion(&self) -> AdaptedProcess {
        AdaptedProcess::from_fn(self, 1, |k, j, out| out[0] = self.brownian(k, j))
    }

    /// Terminal values of the walk `B_T`.
    pub fn terminal_brownian(&self) -> Terminal {
        Terminal::from_fn(self, 1, |j, out| out[0] = self.brownian(self.num_steps, j))
    }

    fn check_steps(&self, what: &str, found: usize) -> Result<()> {
        if found != self.num_steps {
            return Err(Error::dims(format!("{what} steps"), self.num_steps, found));
        }
        Ok(())
    }

    /// Exact conditional expectation `E_k[X]` of a terminal variable.
    pub fn conditional_expectation(&self, terminal: &Terminal) -> Result<Martingale> {
        if terminal.values.len() != self.num_leaves() * terminal.dim {
            return Err(Error::dims(
                "terminal values",
                self.num_leaves() * terminal.dim,
                terminal.values.len(),
            ));
        }
        let dim = terminal.dim;
        let mut slices = vec![Vec::new(); self.num_steps + 1];
        slices[self.num_steps] = terminal.values.clone();
        for k in (0..self.num_steps).rev() {
            slices[k] = average_children(&slices[k + 1], dim);
        }
        Ok(Martingale(AdaptedProcess { dim, slices }))
    }

    /// Conditional expectation of the terminal slice of an adapted process.
    pub fn conditional_expectation_of(&self, process: &AdaptedProcess) -> Result<Martingale> {
        self.check_steps("process", process.num_steps())?;
        self.conditional_expectation(&process.terminal())
    }

    /// Averages values known at `from_step` down to `to_step` (`E_{to}[X]` for
    /// an `F_from`-measurable `X`).
    pub fn project(&self, values: &[f64], dim: usize, from_step: usize, to_step: usize) -> Result<Vec<f64>> {
        if to_step > from_step || from_step > self.num_steps {
            return Err(Error::invalid("to_step", "must not exceed from_step"));
        }
        if values.len() != self.nodes_at(from_step) * dim {
            return Err(Error::dims("projected slice", self.nodes_at(from_step) * dim, values.len()));
        }
        let mut current = values.to_vec();
        for _ in to_step..from_step {
            current = average_children(&current, dim);
        }
        Ok(current)
    }

    /// Largest relative defect of the martingale property, under `P` or, when
    /// `up_probability` is given, under the measure with those one-step
    /// probabilities of moving up.
    pub fn martingale_defect(
        &self,
        process: &AdaptedProcess,
        up_probability: Option<&PredictableProcess>,
    ) -> Result<Defect> {
        self.check_steps("process", process.num_steps())?;
        if let Some(q) = up_probability {
            self.check_steps("probabilities", q.num_steps())?;
            if q.dim() != 1 {
                return Err(Error::dims("probability dimension", 1, q.dim()));
            }
        }
        let dim = process.dim;
        let mut worst = Defect::none();
        for k in 0..self.num_steps {
            for j in 0..self.nodes_at(k) {
                let (d, u) = Self::children(j);
                let p_up = up_probability.map_or(0.5, |q| q.value(k, j));
                let v = process.at(k, j);
                let vd = process.at(k + 1, d);
                let vu = process.at(k + 1, u);
                for c in 0..dim {
                    let avg = p_up * vu[c] + (1.0 - p_up) * vd[c];
                    let scale = 1.0_f64.max(v[c].abs()).max(vu[c].abs()).max(vd[c].abs());
                    worst.absorb((avg - v[c]).abs() / scale, k, j);
                }
            }
        }
        Ok(worst)
    }

    /// Fails with [`Error::NotMartingale`] when the relative defect exceeds
    /// the lattice tolerance.
    pub fn check_martingale(&self, process: &AdaptedProcess) -> Result<()> {
        let defect = self.martingale_defect(process, None)?;
        if !(defect.value <= self.martingale_tol) {
            return Err(Error::NotMartingale {
                step: defect.step,
                node: defect.node,
                defect: defect.value,
            });
        }
        Ok(())
    }

    /// Integrand of the martingale part of any adapted process: the
    /// difference quotient `(X⁺ − X⁻) / (2 sqrt(dt))` of the child values.
    pub fn martingale_integrand(&self, process: &AdaptedProcess) -> Result<PredictableProcess> {
        self.check_steps("process", process.num_steps())?;
        let dim = process.dim;
        let denom = 2.0 * self.sqrt_dt;
        let mut slices = Vec::with_capacity(self.num_steps);
        for k in 0..self.num_steps {
            let next = &process.slices[k + 1];
            let mut out = vec![0.0; self.nodes_at(k) * dim];
            for j in 0..self.nodes_at(k) {
                let (d, u) = Self::children(j);
                for c in 0..dim {
                    out[j * dim + c] = (next[u * dim + c] - next[d * dim + c]) / denom;
                }
            }
            slices.push(out);
        }
        Ok(PredictableProcess { dim, slices })
    }

    /// Predictable integrand `ζ` with `M_{k+1} − M_k = ζ_k ΔB_k` exactly.
    pub fn martingale_representation(&self, martingale: &Martingale) -> Result<PredictableProcess> {
        self.martingale_integrand(&martingale.0)
    }

    /// Representation of an unchecked process; refuses non-martingales.
    pub fn represent(&self, process: &AdaptedProcess) -> Result<PredictableProcess> {
        self.check_martingale(process)?;
        self.martingale_integrand(process)
    }

    /// Discrete stochastic integral `(ζ·X)_k = Σ_{j<k} ζ_j · (X_{j+1} − X_j)`.
    pub fn stochastic_integral(&self, zeta: &PredictableProcess, x: &AdaptedProcess) -> Result<AdaptedProcess> {
        self.check_steps("integrand", zeta.num_steps())?;
        self.check_steps("integrator", x.num_steps())?;
        if zeta.dim != x.dim {
            return Err(Error::dims("integrand/integrator dimension", x.dim, zeta.dim));
        }
        let dim = x.dim;
        let mut slices = Vec::with_capacity(self.num_steps + 1);
        slices.push(vec![0.0]);
        for k in 0..self.num_steps {
            let prev = &slices[k];
            let mut out = vec![0.0; self.nodes_at(k + 1)];
            for (child, value) in out.iter_mut().enumerate() {
                let parent = child >> 1;
                let z = zeta.at(k, parent);
                let dx: f64 = (0..dim)
                    .map(|c| z[c] * (x.at(k + 1, child)[c] - x.at(k, parent)[c]))
                    .sum();
                *value = prev[parent] + dx;
            }
            slices.push(out);
        }
        Ok(AdaptedProcess { dim: 1, slices })
    }

    /// Componentwise integral `ζ·B` against the walk.
    pub fn integrate_brownian(&self, zeta: &PredictableProcess) -> Result<AdaptedProcess> {
        self.check_steps("integrand", zeta.num_steps())?;
        let dim = zeta.dim;
        let mut slices = Vec::with_capacity(self.num_steps + 1);
        slices.push(vec![0.0; dim]);
        for k in 0..self.num_steps {
            let prev = &slices[k];
            let mut out = vec![0.0; self.nodes_at(k + 1) * dim];
            for child in 0..self.nodes_at(k + 1) {
                let parent = child >> 1;
                let db = self.increment_into(child);
                for c in 0..dim {
                    out[child * dim + c] = prev[parent * dim + c] + zeta.at(k, parent)[c] * db;
                }
            }
            slices.push(out);
        }
        Ok(AdaptedProcess { dim, slices })
    }

    /// Multiplicative stochastic exponential `Z_{k+1} = Z_k (1 + ζ_k ΔB_k)`.
    pub fn stochastic_exponential(&self, zeta: &PredictableProcess) -> Result<AdaptedProcess> {
        self.check_steps("integrand", zeta.num_steps())?;
        if zeta.dim != 1 {
            return Err(Error::dims("stochastic exponential integrand", 1, zeta.dim));
        }
        for k in 0..self.num_steps {
            for j in 0..self.nodes_at(k) {
                let v = (zeta.value(k, j) * self.sqrt_dt).abs();
                if !(v < 1.0) {
                    return Err(Error::ExponentialGuard { step: k, node: j, value: v });
                }
            }
        }
        let mut slices = Vec::with_capacity(self.num_steps + 1);
        slices.push(vec![1.0]);
        for k in 0..self.num_steps {
            let prev = &slices[k];
            let out = (0..self.nodes_at(k + 1))
                .map(|child| {
                    let parent = child >> 1;
                    prev[parent] * (1.0 + zeta.value(k, parent) * self.increment_into(child))
                })
                .collect();
            slices.push(out);
        }
        Ok(AdaptedProcess { dim: 1, slices })
    }

    /// Mirror image of an adapted process under `B → −B`.
    pub fn reflect_adapted(&self, process: &AdaptedProcess) -> AdaptedProcess {
        AdaptedProcess {
            dim: process.dim,
            slices: reflect_slices(&process.slices, process.dim),
        }
    }

    pub fn reflect_predictable(&self, process: &PredictableProcess) -> PredictableProcess {
        PredictableProcess {
            dim: process.dim,
            slices: reflect_slices(&process.slices, process.dim),
        }
    }

    pub fn reflect_terminal(&self, terminal: &Terminal) -> Terminal {
        let n = self.num_steps;
        let dim = terminal.dim;
        let mut values = vec![0.0; terminal.values.len()];
        for j in 0..self.num_leaves() {
            let r = Self::reflect_index(n, j);
            values[r * dim..(r + 1) * dim].copy_from_slice(terminal.at(j));
        }
        Terminal { dim, values }
    }
}

fn average_children(next: &[f64], dim: usize) -> Vec<f64> {
    let nodes = next.len() / dim / 2;
    let mut out = vec![0.0; nodes * dim];
    for j in 0..nodes {
        for c in 0..dim {
            out[j * dim + c] = 0.5 * (next[2 * j * dim + c] + next[(2 * j + 1) * dim + c]);
        }
    }
    out
}

fn reflect_slices(slices: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    slices
        .iter()
        .enumerate()
        .map(|(k, slice)| {
            let mut out = vec![0.0; slice.len()];
            for j in 0..(1usize << k) {
                let r = Lattice::reflect_index(k, j);
                out[r * dim..(r + 1) * dim].copy_from_slice(&slice[j * dim..(j + 1) * dim]);
            }
            out
        })
        .collect()
}

macro_rules! node_field {
    ($name:ident, $slices:expr) => {
        impl $name {
            /// Zero field of the given dimension.
            pub fn zeros(lattice: &Lattice, dim: usize) -> Self {
                let count: usize = $slices(lattice.num_steps());
                $name {
                    dim,
                    slices: (0..count).map(|k| vec![0.0; (1usize << k) * dim]).collect(),
                }
            }

            /// Field filled node by node.
            pub fn from_fn(lattice: &Lattice, dim: usize, mut f: impl FnMut(usize, usize, &mut [f64])) -> Self {
                let mut field = Self::zeros(lattice, dim);
                for (k, slice) in field.slices.iter_mut().enumerate() {
                    for (j, chunk) in slice.chunks_mut(dim.max(1)).enumerate() {
                        f(k, j, chunk);
                    }
                }
                field
            }

            /// Builds a field from explicit per-step slices (`2^k * dim` values each).
            pub fn from_slices(dim: usize, slices: Vec<Vec<f64>>) -> Result<Self> {
                for (k, slice) in slices.iter().enumerate() {
                    if slice.len() != (1usize << k) * dim {
                        return Err(Error::dims(format!("slice {k}"), (1usize << k) * dim, slice.len()));
                    }
                }
                Ok($name { dim, slices })
            }

            pub fn dim(&self) -> usize {
                self.dim
            }

            pub fn at(&self, step: usize, node: usize) -> &[f64] {
                &self.slices[step][node * self.dim..(node + 1) * self.dim]
            }

            pub fn at_mut(&mut self, step: usize, node: usize) -> &mut [f64] {
                let dim = self.dim;
                &mut self.slices[step][node * dim..(node + 1) * dim]
            }

            /// First component at a node; the value itself for scalar fields.
            pub fn value(&self, step: usize, node: usize) -> f64 {
                self.slices[step][node * self.dim]
            }

            pub fn slice(&self, step: usize) -> &[f64] {
                &self.slices[step]
            }

            pub fn slices(&self) -> &[Vec<f64>] {
                &self.slices
            }

            /// Component `c` as a scalar field.
            pub fn component(&self, c: usize) -> Self {
                let dim = self.dim;
                $name {
                    dim: 1,
                    slices: self
                        .slices
                        .iter()
                        .map(|s| s.iter().skip(c).step_by(dim).copied().collect())
                        .collect(),
                }
            }

            pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
                $name {
                    dim: self.dim,
                    slices: self.slices.iter().map(|s| s.iter().map(|&v| f(v)).collect()).collect(),
                }
            }

            pub fn scaled(&self, factor: f64) -> Self {
                self.map(|v| v * factor)
            }

            /// Pointwise combination of two fields of equal shape.
            pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
                if self.dim != other.dim || self.slices.len() != other.slices.len() {
                    return Err(Error::dims(stringify!($name), self.dim, other.dim));
                }
                Ok($name {
                    dim: self.dim,
                    slices: self
                        .slices
                        .iter()
                        .zip(&other.slices)
                        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                        .collect(),
                })
            }

            /// Stacks the components of `other` after those of `self`.
            pub fn concat(&self, other: &Self) -> Result<Self> {
                if self.slices.len() != other.slices.len() {
                    return Err(Error::dims("stacked steps", self.slices.len(), other.slices.len()));
                }
                let dim = self.dim + other.dim;
                let slices = self
                    .slices
                    .iter()
                    .zip(&other.slices)
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let mut out = Vec::with_capacity((1usize << k) * dim);
                        for j in 0..(1usize << k) {
                            out.extend_from_slice(&a[j * self.dim..(j + 1) * self.dim]);
                            out.extend_from_slice(&b[j * other.dim..(j + 1) * other.dim]);
                        }
                        out
                    })
                    .collect();
                Ok($name { dim, slices })
            }

            /// Components `range` as a new field.
            pub fn components(&self, range: Range<usize>) -> Self {
                let dim = self.dim;
                let width = range.len();
                $name {
                    dim: width,
                    slices: self
                        .slices
                        .iter()
                        .map(|s| s.chunks(dim.max(1)).flat_map(|c| c[range.clone()].iter().copied()).collect())
                        .collect(),
                }
            }

            /// Largest absolute difference from `other` over all nodes and components.
            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.slices
                    .iter()
                    .zip(&other.slices)
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                    .fold(0.0, f64::max)
            }

            /// Largest Euclidean norm of the per-node vectors, with its node.
            pub fn max_norm(&self) -> (f64, usize, usize) {
                let mut best = (0.0, 0, 0);
                for (k, slice) in self.slices.iter().enumerate() {
                    for (j, chunk) in slice.chunks(self.dim.max(1)).enumerate() {
                        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > best.0 {
                            best = (norm, k, j);
                        }
                    }
                }
                best
            }

            /// Location of the first non-finite entry, if any.
            pub fn first_non_finite(&self) -> Option<(usize, usize)> {
                for (k, slice) in self.slices.iter().enumerate() {
                    if let Some(i) = slice.iter().position(|v| !v.is_finite()) {
                        return Some((k, i / self.dim.max(1)));
                    }
                }
                None
            }
        }
    };
}

/// One `dim`-vector per node `(k, j)`, `k = 0..=N`, measurable at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    dim: usize,
    slices: Vec<Vec<f64>>,
}

/// One `dim`-vector per node `(k, j)`, `k = 0..N`, applied on the step
/// `(k, k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableProcess {
    dim: usize,
    slices: Vec<Vec<f64>>,
}

node_field!(AdaptedProcess, |n: usize| n + 1);
node_field!(PredictableProcess, |n: usize| n);

impl AdaptedProcess {
    pub fn num_steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn initial(&self) -> &[f64] {
        self.at(0, 0)
    }

    pub fn terminal(&self) -> Terminal {
        Terminal {
            dim: self.dim,
            values: self.slices[self.num_steps()].clone(),
        }
    }
}

impl PredictableProcess {
    pub fn num_steps(&self) -> usize {
        self.slices.len()
    }

    /// A process equal to `value` at every node.
    pub fn constant(lattice: &Lattice, value: &[f64]) -> Self {
        Self::from_fn(lattice, value.len(), |_, _, out| out.copy_from_slice(value))
    }
}

/// Terminal random variable: one `dim`-vector per leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    dim: usize,
    values: Vec<f64>,
}

impl Terminal {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        Terminal { dim, values }
    }

    pub fn from_fn(lattice: &Lattice, dim: usize, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let mut values = vec![0.0; lattice.num_leaves() * dim];
        for (j, chunk) in values.chunks_mut(dim.max(1)).enumerate() {
            f(j, chunk);
        }
        Terminal { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, leaf: usize) -> &[f64] {
        &self.values[leaf * self.dim..(leaf + 1) * self.dim]
    }

    /// Exact mean under the uniform leaf distribution.
    pub fn mean(&self) -> Vec<f64> {
        let leaves = self.num_leaves() as f64;
        let mut mean = vec![0.0; self.dim];
        for chunk in self.values.chunks(self.dim.max(1)) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= leaves);
        mean
    }

    pub fn centered(&self) -> Terminal {
        let mean = self.mean();
        self.map_leaves(|_, v, out| {
            for c in 0..v.len() {
                out[c] = v[c] - mean[c];
            }
        })
    }

    pub fn scaled(&self, factor: f64) -> Terminal {
        Terminal {
            dim: self.dim,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map_leaves(&self, mut f: impl FnMut(usize, &[f64], &mut [f64])) -> Terminal {
        let mut values = vec![0.0; self.values.len()];
        for (j, (out, v)) in values
            .chunks_mut(self.dim.max(1))
            .zip(self.values.chunks(self.dim.max(1)))
            .enumerate()
        {
            f(j, v, out);
        }
        Terminal { dim: self.dim, values }
    }

    /// Largest Euclidean norm over leaves.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.dim.max(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// An adapted process verified to satisfy the martingale property.
#[derive(Debug, Clone, PartialEq)]
pub struct Martingale(AdaptedProcess);

impl Martingale {
    /// Checks the martingale property at the lattice tolerance.
    pub fn new(lattice: &Lattice, process: AdaptedProcess) -> Result<Self> {
        lattice.check_martingale(&process)?;
        Ok(Martingale(process))
    }

    pub fn process(&self) -> &AdaptedProcess {
        &self.0
    }

    pub fn into_process(self) -> AdaptedProcess {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// `M − M_0`.
    pub fn started_at_zero(&self) -> Martingale {
        let m0 = self.0.initial().to_vec();
        let dim = self.0.dim;
        Martingale(AdaptedProcess {
            dim,
            slices: self
                .0
                .slices
                .iter()
                .map(|s| s.iter().enumerate().map(|(i, v)| v - m0[i % dim]).collect())
                .collect(),
        })
    }
}
