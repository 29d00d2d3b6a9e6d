//! Yee-grid FDTD solver for Maxwell's curl equations in natural units.
//!
//! Lengths are measured in cells and time in units of one cell crossing at
//! the speed of light, so `c = 1` and `dx = 1` inside the solver. The physical
//! cell size in [`GridSpec::dx`] only converts source wavelengths to cells.
//!
//! Two-dimensional runs use the same kernel with a flat third axis, which
//! leaves only the transverse-electric family `(Ex, Ey, Bz)` active.
//! A split-field PML of [`GridSpec::pml`] cells surrounds the interior on
//! every non-flat face; only interior cells are reported in frames.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const X: usize = 0;
const Y: usize = 1;
const Z: usize = 2;

/// Target normal-incidence reflection of the PML.
const PML_REFLECTION: f64 = 1e-6;
const PML_ORDER: i32 = 3;

fn default_pml() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Interior cells per axis, `[M, N]` or `[L, M, N]`.
    pub dims: Vec<usize>,
    /// Cell size in meters.
    pub dx: f64,
    #[serde(default = "default_pml")]
    pub pml: usize,
}

impl GridSpec {
    pub fn new(dims: &[usize], dx: f64) -> Self {
        Self {
            dims: dims.to_vec(),
            dx,
            pml: default_pml(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims.len()) {
            return Err(Error::config(format!(
                "grid must be 2D or 3D, got {} axes",
                self.dims.len()
            )));
        }
        if let Some(&n) = self.dims.iter().find(|&&n| n < 8) {
            return Err(Error::config(format!("grid axes need at least 8 cells, got {n}")));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(Error::config(format!("dx must be positive, got {}", self.dx)));
        }
        Ok(())
    }

    /// Solver time step in natural units, `0.5 / sqrt(d)` cells.
    pub fn dt(&self) -> f64 {
        0.5 / (self.dim() as f64).sqrt()
    }

    /// Number of field components saved per frame.
    pub fn components(&self) -> usize {
        if self.dim() == 2 {
            3
        } else {
            6
        }
    }
}

fn default_polarization() -> usize {
    Z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Interior cell index.
    pub position: Vec<usize>,
    /// Wavelength in meters.
    pub wavelength: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Driven E component in 3D (0, 1, 2 for x, y, z). 2D sources drive Bz.
    #[serde(default = "default_polarization")]
    pub polarization: usize,
}

impl SourceSpec {
    fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.position.len() != grid.dim()
            || self.position.iter().zip(&grid.dims).any(|(&p, &n)| p >= n)
        {
            return Err(Error::config(format!(
                "source position {:?} outside grid {:?}",
                self.position, grid.dims
            )));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::config("source wavelength must be positive"));
        }
        if self.polarization > 2 {
            return Err(Error::config("source polarization must be 0, 1 or 2"));
        }
        Ok(())
    }

    pub fn wavelength_cells(&self, dx: f64) -> f64 {
        self.wavelength / dx
    }

    pub fn omega(&self, dx: f64) -> f64 {
        2.0 * PI / self.wavelength_cells(dx)
    }

    /// Time integral of the emitted signal, `-A env(t) cos(wt + phase) / w`.
    ///
    /// The envelope ramps up over the first period and, when `off` is set,
    /// back down over the last period before `off`. The integral therefore
    /// starts and ends at zero and a point current leaves no static charge.
    pub fn charge(&self, t: f64, dx: f64, off: Option<f64>) -> f64 {
        let period = self.wavelength_cells(dx);
        let ramp = |s: f64| {
            if s <= 0.0 {
                0.0
            } else if s >= period {
                1.0
            } else {
                (0.5 * PI * s / period).sin().powi(2)
            }
        };
        let env = ramp(t) * off.map_or(1.0, |off| ramp(off - t));
        let w = self.omega(dx);
        -self.amplitude * env * (w * t + self.phase).cos() / w
    }

    /// Value added over the step ending at `t`; once ramped up this is
    /// `A sin(w t + phase)` up to a half-step delay.
    pub fn increment(&self, t: f64, dt: f64, dx: f64, off: Option<f64>) -> f64 {
        (self.charge(t, dx, off) - self.charge(t - dt, dx, off)) / dt
    }
}

/// Random point sources with uniform phase and amplitude in `[0.5, 1)`.
///
/// In 3D the sources are spread cyclically over the xy, yz and xz planes
/// through the domain center, each driving the E component normal to its plane.
pub fn random_sources<R: Rng>(grid: &GridSpec, count: usize, wavelength: f64, rng: &mut R) -> Vec<SourceSpec> {
    // keep sources one cell away from the interior edge
    let coord = |n: usize, rng: &mut R| rng.gen_range(1..n - 1);
    (0..count)
        .map(|s| {
            let (position, polarization) = if grid.dim() == 2 {
                (vec![coord(grid.dims[0], rng), coord(grid.dims[1], rng)], Z)
            } else {
                let normal = [Z, X, Y][s % 3];
                let pos = (0..3)
                    .map(|a| if a == normal { grid.dims[a] / 2 } else { coord(grid.dims[a], rng) })
                    .collect();
                (pos, normal)
            };
            SourceSpec {
                position,
                wavelength,
                amplitude: rng.gen_range(0.5..1.0),
                phase: rng.gen_range(0.0..2.0 * PI),
                polarization,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    /// Inclusive lower corner in interior cells.
    pub lo: Vec<usize>,
    /// Exclusive upper corner in interior cells.
    pub hi: Vec<usize>,
    pub rel_permittivity: f64,
}

impl ObstacleSpec {
    fn validate(&self, grid: &GridSpec) -> Result<()> {
        let ok = self.lo.len() == grid.dim()
            && self.hi.len() == grid.dim()
            && self
                .lo
                .iter()
                .zip(&self.hi)
                .zip(&grid.dims)
                .all(|((&lo, &hi), &n)| lo < hi && hi <= n);
        if !ok {
            return Err(Error::config(format!(
                "obstacle box {:?}..{:?} not inside grid {:?}",
                self.lo, self.hi, grid.dims
            )));
        }
        if !(self.rel_permittivity.is_finite() && self.rel_permittivity >= 1.0) {
            return Err(Error::config("obstacle permittivity must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub frames: usize,
    /// Solver steps between saved frames.
    pub stride: usize,
    pub seed: u64,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Steps run before the first saved frame.
    #[serde(default)]
    pub warmup: usize,
    /// Sources ramp down and stop by this step.
    #[serde(default)]
    pub source_duration: Option<usize>,
}

impl TrajectoryConfig {
    pub fn new(frames: usize, stride: usize, seed: u64) -> Self {
        Self {
            frames,
            stride,
            seed,
            sources: Vec::new(),
            obstacles: Vec::new(),
            warmup: 0,
            source_duration: None,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        grid.validate()?;
        if self.frames < 3 {
            return Err(Error::config("a trajectory needs at least 3 frames"));
        }
        if self.stride < 1 {
            return Err(Error::config("stride must be at least 1"));
        }
        self.sources.iter().try_for_each(|s| s.validate(grid))?;
        self.obstacles.iter().try_for_each(|o| o.validate(grid))
    }

    pub fn total_steps(&self) -> usize {
        self.warmup + (self.frames - 1) * self.stride
    }
}

/// Cell-centered field components on the interior grid, component-planar.
///
/// 2D frames hold `(Ex, Ey, Bz)`, 3D frames `(Ex, Ey, Ez, Bx, By, Bz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFrame {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl FieldFrame {
    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; n * components_for(dims.len())],
        }
    }

    pub fn from_data(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::usage("field frames are 2D or 3D"));
        }
        let n: usize = dims.iter().product();
        if data.len() != n * components_for(dims.len()) {
            return Err(Error::usage(format!(
                "frame data has {} values, expected {}",
                data.len(),
                n * components_for(dims.len())
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn components(&self) -> usize {
        components_for(self.dims.len())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.cells();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn index(&self, pos: &[usize]) -> usize {
        pos.iter().zip(&self.dims).fold(0, |acc, (&p, &n)| acc * n + p)
    }

    pub fn get(&self, c: usize, pos: &[usize]) -> f64 {
        self.component(c)[self.index(pos)]
    }

    pub fn set(&mut self, c: usize, pos: &[usize], v: f64) {
        let i = self.index(pos);
        self.component_mut(c)[i] = v;
    }

    pub fn same_shape(&self, other: &FieldFrame) -> bool {
        self.dims == other.dims
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn components_for(dim: usize) -> usize {
    if dim == 2 {
        3
    } else {
        6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub stride: usize,
    pub frames: Vec<FieldFrame>,
}

/// Update coefficients `p <- a p + b term` along one axis.
#[derive(Debug, Clone)]
struct AxisCoeffs {
    /// At integer node positions (E components along this axis' derivative).
    a_int: Vec<f64>,
    b_int: Vec<f64>,
    /// At half-integer positions (B components).
    a_half: Vec<f64>,
    b_half: Vec<f64>,
}

impl AxisCoeffs {
    fn new(total: usize, interior: usize, pml: usize, flat: bool, dt: f64) -> Self {
        let sigma_max = if pml == 0 {
            0.0
        } else {
            -((PML_ORDER + 1) as f64) * PML_REFLECTION.ln() / (2.0 * pml as f64)
        };
        let sigma = |x: f64| {
            if flat || pml == 0 {
                return 0.0;
            }
            let lo = pml as f64;
            let hi = (pml + interior) as f64;
            let depth = (lo - x).max(x - hi).max(0.0) / pml as f64;
            sigma_max * depth.powi(PML_ORDER)
        };
        let coeffs = |s: f64| {
            if s == 0.0 {
                (1.0, dt)
            } else {
                let a = (-s * dt).exp();
                (a, (1.0 - a) / s)
            }
        };
        let (a_int, b_int) = (0..total).map(|i| coeffs(sigma(i as f64))).unzip();
        let (a_half, b_half) = (0..total).map(|i| coeffs(sigma(i as f64 + 0.5))).unzip();
        Self {
            a_int,
            b_int,
            a_half,
            b_half,
        }
    }
}

#[derive(Debug, Clone)]
struct ActiveSource {
    spec: SourceSpec,
    index: usize,
}

/// Staggered Yee fields with split PML parts, permittivity map and sources.
///
/// Component `E_c` lives at the cell's integer corner shifted by half a cell
/// along `c`; `B_c` is shifted by half a cell along the two other axes.
#[derive(Debug, Clone)]
pub struct SimState {
    grid: GridSpec,
    total: [usize; 3],
    flat: [bool; 3],
    dt: f64,
    e: [Vec<f64>; 3],
    b: [Vec<f64>; 3],
    e_parts: [[Vec<f64>; 2]; 3],
    b_parts: [[Vec<f64>; 2]; 3],
    inv_eps: Vec<f64>,
    coeffs: [AxisCoeffs; 3],
    sources: Vec<ActiveSource>,
    source_duration: Option<usize>,
    steps: usize,
}

impl SimState {
    pub fn new(grid: &GridSpec, sources: &[SourceSpec], obstacles: &[ObstacleSpec]) -> Result<Self> {
        grid.validate()?;
        sources.iter().try_for_each(|s| s.validate(grid))?;
        obstacles.iter().try_for_each(|o| o.validate(grid))?;
        let mut interior = [1usize; 3];
        interior[..grid.dim()].copy_from_slice(&grid.dims);
        let flat = [false, false, grid.dim() == 2];
        let total: [usize; 3] = std::array::from_fn(|a| if flat[a] { 1 } else { interior[a] + 2 * grid.pml });
        let dt = grid.dt();
        let n = total.iter().product();
        let zeros = || vec![0.0; n];

        let mut state = Self {
            grid: grid.clone(),
            total,
            flat,
            dt,
            e: std::array::from_fn(|_| zeros()),
            b: std::array::from_fn(|_| zeros()),
            e_parts: std::array::from_fn(|_| [zeros(), zeros()]),
            b_parts: std::array::from_fn(|_| [zeros(), zeros()]),
            inv_eps: vec![1.0; n],
            coeffs: std::array::from_fn(|a| AxisCoeffs::new(total[a], interior[a], grid.pml, flat[a], dt)),
            sources: Vec::new(),
            source_duration: None,
            steps: 0,
        };
        for o in obstacles {
            state.apply_obstacle(o);
        }
        state.sources = sources
            .iter()
            .map(|s| ActiveSource {
                index: state.interior_index(&s.position),
                spec: s.clone(),
            })
            .collect();
        Ok(state)
    }

    pub fn with_source_duration(mut self, steps: Option<usize>) -> Self {
        self.source_duration = steps;
        self
    }

    fn apply_obstacle(&mut self, o: &ObstacleSpec) {
        // boxes touching the interior edge extend through the PML
        let mut range = [(0usize, 1usize); 3];
        for a in 0..self.grid.dim() {
            let pml = self.grid.pml;
            let lo = if o.lo[a] == 0 { 0 } else { o.lo[a] + pml };
            let hi = if o.hi[a] == self.grid.dims[a] {
                self.total[a]
            } else {
                o.hi[a] + pml
            };
            range[a] = (lo, hi);
        }
        let inv = 1.0 / o.rel_permittivity;
        for i in range[0].0..range[0].1 {
            for j in range[1].0..range[1].1 {
                for k in range[2].0..range[2].1 {
                    let idx = self.linear([i, j, k]);
                    self.inv_eps[idx] = inv;
                }
            }
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Array extent per axis including the PML (flat axes have length 1).
    pub fn total_dims(&self) -> [usize; 3] {
        self.total
    }

    fn linear(&self, p: [usize; 3]) -> usize {
        (p[0] * self.total[1] + p[1]) * self.total[2] + p[2]
    }

    /// Array position of an interior cell.
    pub fn to_total(&self, pos: &[usize]) -> [usize; 3] {
        std::array::from_fn(|a| if self.flat[a] { 0 } else { pos[a] + self.grid.pml })
    }

    fn interior_index(&self, pos: &[usize]) -> usize {
        self.linear(self.to_total(pos))
    }

    pub fn e(&self, c: usize) -> &[f64] {
        &self.e[c]
    }

    pub fn b(&self, c: usize) -> &[f64] {
        &self.b[c]
    }

    /// Sets a staggered E value at an array position, clearing its split.
    pub fn set_e(&mut self, c: usize, p: [usize; 3], v: f64) {
        let i = self.linear(p);
        self.e[c][i] = v;
        self.e_parts[c][0][i] = v;
        self.e_parts[c][1][i] = 0.0;
    }

    pub fn set_b(&mut self, c: usize, p: [usize; 3], v: f64) {
        let i = self.linear(p);
        self.b[c][i] = v;
        self.b_parts[c][0][i] = v;
        self.b_parts[c][1][i] = 0.0;
    }

    /// One leapfrog step: B from curl E, then E from curl B, then sources.
    pub fn step(&mut self) -> Result<()> {
        for c in 0..3 {
            for k in 0..2 {
                self.update_part(false, c, k);
            }
            self.combine_parts(false, c);
        }
        let t_b = (self.steps as f64 + 0.5) * self.dt;
        if self.grid.dim() == 2 {
            self.inject(t_b);
        }
        for c in 0..3 {
            for k in 0..2 {
                self.update_part(true, c, k);
            }
            self.combine_parts(true, c);
        }
        let t_e = (self.steps as f64 + 1.0) * self.dt;
        if self.grid.dim() == 3 {
            self.inject(t_e);
        }
        self.steps += 1;
        if !self.is_finite() {
            return Err(Error::blowup(format!("non-finite field at solver step {}", self.steps)));
        }
        Ok(())
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        (0..steps).try_for_each(|_| self.step())
    }

    fn is_finite(&self) -> bool {
        self.e.iter().chain(&self.b).all(|f| f.iter().all(|v| v.is_finite()))
    }

    /// Adds every active source's soft value for time `t`.
    pub fn inject_sources(&mut self, t: f64) {
        self.inject(t)
    }

    fn inject(&mut self, t: f64) {
        let dx = self.grid.dx;
        let dt = self.dt;
        let off = self.source_duration.map(|d| d as f64 * dt);
        let is_2d = self.grid.dim() == 2;
        for s in &self.sources {
            let v = s.spec.increment(t, dt, dx, off);
            let (full, part) = if is_2d {
                (&mut self.b[Z], &mut self.b_parts[Z][0])
            } else {
                let c = s.spec.polarization;
                (&mut self.e[c], &mut self.e_parts[c][0])
            };
            full[s.index] += v;
            part[s.index] += v;
        }
    }

    fn update_part(&mut self, is_e: bool, c: usize, k: usize) {
        // B_c -= curl(E)_c and E_c += curl(B)_c, split by derivative axis
        let d = (c + 1 + k) % 3;
        if self.flat[d] {
            return;
        }
        let src_comp = if k == 0 { (c + 2) % 3 } else { (c + 1) % 3 };
        let sign = match (is_e, k) {
            (false, 0) | (true, 1) => -1.0,
            _ => 1.0,
        };
        let total = self.total;
        let stride = [total[1] * total[2], total[2], 1][d];
        let n_d = total[d];
        let ax = &self.coeffs[d];
        let (src, part, a, b) = if is_e {
            (&self.b[src_comp], &mut self.e_parts[c][k], &ax.a_int, &ax.b_int)
        } else {
            (&self.e[src_comp], &mut self.b_parts[c][k], &ax.a_half, &ax.b_half)
        };
        let inv_eps = &self.inv_eps;
        let mut idx = 0;
        for i in 0..total[0] {
            for j in 0..total[1] {
                for l in 0..total[2] {
                    let id = [i, j, l][d];
                    let deriv = if is_e {
                        let prev = if id > 0 { src[idx - stride] } else { 0.0 };
                        src[idx] - prev
                    } else {
                        let next = if id + 1 < n_d { src[idx + stride] } else { 0.0 };
                        next - src[idx]
                    };
                    let scale = if is_e { b[id] * inv_eps[idx] } else { b[id] };
                    part[idx] = a[id] * part[idx] + scale * sign * deriv;
                    idx += 1;
                }
            }
        }
    }

    /// Refreshes a full component from its split parts. Outside the PML the
    /// parts are merged into the first one so that they cannot drift apart.
    fn combine_parts(&mut self, is_e: bool, c: usize) {
        let total = self.total;
        let (d0, d1) = ((c + 1) % 3, (c + 2) % 3);
        let pick = |d: usize| {
            let ax = &self.coeffs[d];
            if is_e {
                &ax.a_int
            } else {
                &ax.a_half
            }
        };
        let (a0, a1) = (pick(d0), pick(d1));
        let (full, parts) = if is_e {
            (&mut self.e[c], &mut self.e_parts[c])
        } else {
            (&mut self.b[c], &mut self.b_parts[c])
        };
        let [p0, p1] = parts;
        let mut idx = 0;
        for i in 0..total[0] {
            for j in 0..total[1] {
                for l in 0..total[2] {
                    let pos = [i, j, l];
                    if a0[pos[d0]] == 1.0 && a1[pos[d1]] == 1.0 {
                        p0[idx] += p1[idx];
                        p1[idx] = 0.0;
                        full[idx] = p0[idx];
                    } else {
                        full[idx] = p0[idx] + p1[idx];
                    }
                    idx += 1;
                }
            }
        }
    }

    /// Electromagnetic energy `½ Σ (ε E² + B²)` over the whole array.
    pub fn energy(&self) -> f64 {
        let mut sum = 0.0;
        for c in 0..3 {
            for ((e, b), ie) in self.e[c].iter().zip(&self.b[c]).zip(&self.inv_eps) {
                sum += e * e / ie + b * b;
            }
        }
        0.5 * sum
    }

    /// Cell-centered interior fields.
    pub fn frame(&self) -> FieldFrame {
        let dims = self.grid.dims.clone();
        let mut frame = FieldFrame::zeros(&dims);
        let comps: &[(bool, usize)] = if self.grid.dim() == 2 {
            &[(true, X), (true, Y), (false, Z)]
        } else {
            &[(true, X), (true, Y), (true, Z), (false, X), (false, Y), (false, Z)]
        };
        let mut interior = [1usize; 3];
        interior[..dims.len()].copy_from_slice(&dims);
        for (slot, &(is_e, c)) in comps.iter().enumerate() {
            // E_c is averaged across the transverse axes, B_c along its own axis
            let axes: Vec<usize> = (0..3)
                .filter(|&a| !self.flat[a] && ((is_e && a != c) || (!is_e && a == c)))
                .collect();
            let src = if is_e { &self.e[c] } else { &self.b[c] };
            let out = frame.component_mut(slot);
            let weight = 1.0 / (1usize << axes.len()) as f64;
            let mut o = 0;
            for i in 0..interior[0] {
                for j in 0..interior[1] {
                    for l in 0..interior[2] {
                        let base = self.to_total(&[i, j, l]);
                        let mut acc = 0.0;
                        for corner in 0..(1usize << axes.len()) {
                            let mut p = base;
                            for (bit, &a) in axes.iter().enumerate() {
                                p[a] += (corner >> bit) & 1;
                            }
                            acc += src[self.linear(p)];
                        }
                        out[o] = acc * weight;
                        o += 1;
                    }
                }
            }
        }
        frame
    }

    /// Discrete divergence of B at interior cell centers (3D only).
    pub fn discrete_div_b(&self) -> Result<Vec<f64>> {
        if self.grid.dim() != 3 {
            return Err(Error::usage("divergence of B is defined for 3D states only"));
        }
        let pml = self.grid.pml;
        let d = &self.grid.dims;
        let mut out = Vec::with_capacity(self.grid.cells());
        for i in pml..pml + d[0] {
            for j in pml..pml + d[1] {
                for k in pml..pml + d[2] {
                    let at = |c: usize, p: [usize; 3]| self.b[c][self.linear(p)];
                    let div = at(X, [i + 1, j, k]) - at(X, [i, j, k]) + at(Y, [i, j + 1, k]) - at(Y, [i, j, k])
                        + at(Z, [i, j, k + 1])
                        - at(Z, [i, j, k]);
                    out.push(div);
                }
            }
        }
        Ok(out)
    }

    /// Largest |B| component over interior cells.
    pub fn max_abs_b_interior(&self) -> f64 {
        let pml = self.grid.pml;
        let mut interior = [1usize; 3];
        interior[..self.grid.dim()].copy_from_slice(&self.grid.dims);
        let mut m: f64 = 0.0;
        for i in 0..interior[0] {
            for j in 0..interior[1] {
                for k in 0..interior[2] {
                    let p = [i, j, k].map(|v| v + pml);
                    let p = std::array::from_fn(|a| if self.flat[a] { 0 } else { p[a] });
                    let idx = self.linear(p);
                    for c in 0..3 {
                        m = m.max(self.b[c][idx].abs());
                    }
                }
            }
        }
        m
    }
}


/// Runs the solver and saves `cfg.frames` cell-centered frames, `cfg.stride`
/// steps apart, after `cfg.warmup` steps.
pub fn run_trajectory(cfg: &TrajectoryConfig, grid: &GridSpec) -> Result<Trajectory> {
    cfg.validate(grid)?;
    let mut state = SimState::new(grid, &cfg.sources, &cfg.obstacles)?.with_source_duration(cfg.source_duration);
    let context = |e: Error, frame: usize| match e {
        Error::Blowup { context } => Error::blowup(format!("{context} (trajectory seed {}, frame {frame})", cfg.seed)),
        other => other,
    };
    state.run(cfg.warmup).map_err(|e| context(e, 0))?;
    let mut frames = Vec::with_capacity(cfg.frames);
    frames.push(state.frame());
    for f in 1..cfg.frames {
        state.run(cfg.stride).map_err(|e| context(e, f))?;
        frames.push(state.frame());
    }
    Ok(Trajectory {
        grid: grid.clone(),
        stride: cfg.stride,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(n: usize) -> GridSpec {
        GridSpec::new(&[n, n], 5e-7)
    }

    fn source(pos: &[usize], amplitude: f64, phase: f64) -> SourceSpec {
        SourceSpec {
            position: pos.to_vec(),
            wavelength: 1e-5,
            amplitude,
            phase,
            polarization: Z,
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        for grid in [grid2(10), GridSpec::new(&[8, 9, 10], 1.0)] {
            let mut s = SimState::new(&grid, &[], &[]).unwrap();
            s.run(20).unwrap();
            assert!(s.e.iter().chain(&s.b).all(|f| f.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn zero_amplitude_source_does_nothing() {
        let mut s = SimState::new(&grid2(12), &[source(&[5, 5], 0.0, 0.3)], &[]).unwrap();
        s.run(10).unwrap();
        assert_eq!(s.energy(), 0.0);
    }

    #[test]
    fn source_phase_and_additivity() {
        let grid = grid2(12);
        let single = |phase: f64, copies: usize| {
            let srcs = vec![source(&[6, 6], 0.7, phase); copies];
            let mut s = SimState::new(&grid, &srcs, &[]).unwrap();
            s.inject_sources(1.3);
            s.b(Z)[s.interior_index(&[6, 6])]
        };
        let base = single(0.4, 1);
        assert!(base != 0.0);
        assert!((single(0.4 + PI, 1) + base).abs() < 1e-15);
        assert_eq!(single(0.4, 2), 2.0 * base);
    }

    #[test]
    fn source_signal_shape() {
        let s = source(&[1, 1], 0.8, 0.3);
        let (dt, dx) = (0.35, 5e-7);
        let w = s.omega(dx);
        assert!((w - 2.0 * PI / 20.0).abs() < 1e-12);
        // past the ramp the increment is the sine evaluated mid-step
        for n in 100..140 {
            let t = n as f64 * dt;
            let expected = 0.8 * (w * (t - 0.5 * dt) + 0.3).sin();
            assert!((s.increment(t, dt, dx, None) - expected).abs() < 1e-3);
        }
        let off = Some(60.0);
        assert_eq!(s.charge(0.0, dx, off), 0.0);
        assert_eq!(s.charge(60.0, dx, off), 0.0);
        assert_eq!(s.increment(70.0, dt, dx, off), 0.0);
    }

    #[test]
    fn validation_errors() {
        assert!(GridSpec::new(&[4, 16], 1.0).validate().is_err());
        assert!(GridSpec::new(&[16, 16], 0.0).validate().is_err());
        assert!(GridSpec::new(&[16], 1.0).validate().is_err());
        let g = grid2(16);
        assert!(SimState::new(&g, &[source(&[16, 0], 1.0, 0.0)], &[]).is_err());
        let bad = ObstacleSpec {
            lo: vec![2, 2],
            hi: vec![4, 4],
            rel_permittivity: 0.5,
        };
        assert!(SimState::new(&g, &[], &[bad]).is_err());
        let mut cfg = TrajectoryConfig::new(2, 1, 0);
        assert!(cfg.validate(&g).is_err());
        cfg.frames = 3;
        cfg.stride = 0;
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn zero_trajectory() {
        let traj = run_trajectory(&TrajectoryConfig::new(3, 1, 0), &grid2(8)).unwrap();
        assert_eq!(traj.frames.len(), 3);
        assert!(traj.frames.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn blowup_reports_step() {
        let mut s = SimState::new(&grid2(10), &[], &[]).unwrap();
        s.run(3).unwrap();
        s.set_b(Z, [12, 12, 0], f64::NAN);
        match s.step() {
            Err(Error::Blowup { context }) => assert!(context.contains("step 4"), "{context}"),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn div_b_detector() {
        let grid = GridSpec::new(&[8, 8, 8], 1.0);
        let mut s = SimState::new(&grid, &[], &[]).unwrap();
        let t = s.total_dims();
        for i in 0..t[0] {
            for j in 0..t[1] {
                for k in 0..t[2] {
                    s.set_b(X, [i, j, k], 0.3);
                    s.set_b(Y, [i, j, k], -1.1);
                    s.set_b(Z, [i, j, k], 2.0);
                }
            }
        }
        assert!(s.discrete_div_b().unwrap().iter().all(|&d| d == 0.0));
        // extra flux out of the +x face of interior cell (3, 4, 5)
        let p = s.to_total(&[4, 4, 5]);
        s.set_b(X, p, 1.3);
        let div = s.discrete_div_b().unwrap();
        let idx = (3 * 8 + 4) * 8 + 5;
        assert!(div[idx] > 0.9);
        assert_eq!(div.iter().filter(|&&d| d != 0.0).count(), 2);
        let flat = SimState::new(&grid2(8), &[], &[]).unwrap();
        assert!(matches!(flat.discrete_div_b(), Err(Error::Usage(_))));
    }

    #[test]
    fn frame_colocation_averages() {
        let grid = grid2(8);
        let mut s = SimState::new(&grid, &[], &[]).unwrap();
        let p = s.to_total(&[2, 3]);
        s.set_e(X, p, 4.0);
        s.set_b(Z, p, 5.0);
        let f = s.frame();
        // Ex at (2.5, 3) feeds the centers (2.5, 2.5) and (2.5, 3.5)
        assert_eq!(f.get(0, &[2, 3]), 2.0);
        assert_eq!(f.get(0, &[2, 2]), 2.0);
        assert_eq!(f.get(2, &[2, 3]), 5.0);
        assert_eq!(f.data().iter().filter(|&&v| v != 0.0).count(), 3);
    }

    #[test]
    fn deterministic_trajectory() {
        let grid = grid2(12);
        let mut cfg = TrajectoryConfig::new(4, 5, 9);
        cfg.sources = vec![source(&[3, 4], 0.8, 1.0), source(&[7, 9], 0.6, 2.0)];
        let a = run_trajectory(&cfg, &grid).unwrap();
        let b = run_trajectory(&cfg, &grid).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn random_sources_respect_planes() {
        use rand::SeedableRng;
        let grid = GridSpec::new(&[10, 12, 14], 5e-7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let srcs = random_sources(&grid, 6, 1e-5, &mut rng);
        for s in &srcs {
            let n = s.polarization;
            assert_eq!(s.position[n], grid.dims[n] / 2);
            s.validate(&grid).unwrap();
        }
        let normals: Vec<usize> = srcs.iter().map(|s| s.polarization).collect();
        assert_eq!(normals, vec![Z, X, Y, Z, X, Y]);
    }
}
