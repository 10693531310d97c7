//! Uniform periodic grids, spectral transforms and interpolation.
//!
//! Everything downstream (evolution, guidance, equilibrium) works on
//! [`ComplexGrid`] values. Grids are 1D or 2D, periodic, with nodes at
//! `x_i = -L/2 + i*dx`. 2D storage is row-major with axis 0 outermost.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Geometry of a uniform periodic grid (1D or 2D).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    extents: Vec<f64>,
    points: Vec<usize>,
}

impl GridSpec {
    pub fn new_1d(extent: f64, points: usize) -> Result<Self> {
        Self::new(vec![extent], vec![points])
    }

    pub fn new_2d(extents: [f64; 2], points: [usize; 2]) -> Result<Self> {
        Self::new(extents.to_vec(), points.to_vec())
    }

    fn new(extents: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if extents.len() != points.len() || extents.is_empty() || extents.len() > 2 {
            return Err(Error::InvalidGrid("dimension must be 1 or 2".into()));
        }
        for (&l, &n) in extents.iter().zip(&points) {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidGrid(format!("extent {l} must be positive")));
            }
            if n < 8 {
                return Err(Error::InvalidGrid(format!("need >= 8 points per axis, got {n}")));
            }
        }
        Ok(Self { extents, points })
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extents[axis]
    }

    pub fn points(&self, axis: usize) -> usize {
        self.points[axis]
    }

    pub fn total_points(&self) -> usize {
        self.points.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extents[axis] / self.points[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Node coordinate along `axis` for node index `i`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -0.5 * self.extents[axis] + i as f64 * self.spacing(axis)
    }

    /// All node coordinates along `axis`.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.points[axis]).map(|i| self.coord(axis, i)).collect()
    }

    /// Angular wavenumbers along `axis` in FFT bin order.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let n = self.points[axis];
        let dk = 2.0 * PI / self.extents[axis];
        (0..n)
            .map(|j| {
                let f = if j <= n / 2 { j as isize } else { j as isize - n as isize };
                f as f64 * dk
            })
            .collect()
    }

    /// Wrap a physical point into the fundamental domain [-L/2, L/2).
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(a, &xi)| {
                let l = self.extents[a];
                let mut y = (xi + 0.5 * l).rem_euclid(l) - 0.5 * l;
                if y >= 0.5 * l {
                    y = -0.5 * l;
                }
                y
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.points[1] + idx[1],
        }
    }
}

/// Sampled complex amplitude on a [`GridSpec`]; carrier of the wave function.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub spec: GridSpec,
    pub values: Vec<C64>,
}

impl ComplexGrid {
    pub fn new(spec: GridSpec, values: Vec<C64>) -> Result<Self> {
        if values.len() != spec.total_points() {
            return Err(Error::InvalidGrid(format!(
                "value count {} != total points {}",
                values.len(),
                spec.total_points()
            )));
        }
        let g = Self { spec, values };
        g.check_finite()?;
        Ok(g)
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.total_points();
        Self { spec, values: vec![C64::new(0.0, 0.0); n] }
    }

    /// Sample a function of the node coordinates.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> C64) -> Result<Self> {
        let mut values = Vec::with_capacity(spec.total_points());
        match spec.dim() {
            1 => {
                for i in 0..spec.points(0) {
                    values.push(f(&[spec.coord(0, i)]));
                }
            }
            _ => {
                for i in 0..spec.points(0) {
                    for j in 0..spec.points(1) {
                        values.push(f(&[spec.coord(0, i), spec.coord(1, j)]));
                    }
                }
            }
        }
        Self::new(spec, values)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("grid contains non-finite values".into()));
        }
        Ok(())
    }

    /// Sum of |v|^2 over nodes times the cell volume.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.spec.cell_volume()
    }

    /// Rescale so that `norm_sq` is 1.
    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            spec: self.spec.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::InvalidGrid("grid spec mismatch".into()));
        }
        Ok(Self {
            spec: self.spec.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// Probability density |v|^2 per node.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }
}

/// Unitary FFT, 1D or 2D. Forward and inverse both carry 1/sqrt(N) so that
/// Parseval holds exactly and a round trip is the identity.
pub fn spectral_transform(g: &ComplexGrid, direction: Direction) -> Result<ComplexGrid> {
    g.check_finite()?;
    let mut out = g.clone();
    spectral_transform_mut(&mut out, direction);
    Ok(out)
}

pub(crate) fn spectral_transform_mut(g: &mut ComplexGrid, direction: Direction) {
    let mut planner = FftPlanner::new();
    match g.spec.dim() {
        1 => {
            let n = g.spec.points(0);
            let fft = plan(&mut planner, n, direction);
            fft.process(&mut g.values);
            rescale(&mut g.values, 1.0 / (n as f64).sqrt());
        }
        _ => {
            let (n0, n1) = (g.spec.points(0), g.spec.points(1));
            let fft1 = plan(&mut planner, n1, direction);
            for row in g.values.chunks_mut(n1) {
                fft1.process(row);
            }
            let fft0 = plan(&mut planner, n0, direction);
            let mut col = vec![C64::new(0.0, 0.0); n0];
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = g.values[i * n1 + j];
                }
                fft0.process(&mut col);
                for i in 0..n0 {
                    g.values[i * n1 + j] = col[i];
                }
            }
            rescale(&mut g.values, 1.0 / ((n0 * n1) as f64).sqrt());
        }
    }
}

fn plan(planner: &mut FftPlanner<f64>, n: usize, direction: Direction) -> Arc<dyn rustfft::Fft<f64>> {
    match direction {
        Direction::Forward => planner.plan_fft_forward(n),
        Direction::Inverse => planner.plan_fft_inverse(n),
    }
}

fn rescale(values: &mut [C64], s: f64) {
    for v in values {
        *v *= s;
    }
}

/// Spectral derivative along each axis: one output grid per dimension.
pub fn gradient(g: &ComplexGrid) -> Result<Vec<ComplexGrid>> {
    g.check_finite()?;
    let hat = spectral_transform(g, Direction::Forward)?;
    let mut out = Vec::with_capacity(g.spec.dim());
    for axis in 0..g.spec.dim() {
        let ks = g.spec.wavenumbers(axis);
        let mut d = hat.clone();
        match g.spec.dim() {
            1 => {
                for (j, v) in d.values.iter_mut().enumerate() {
                    *v *= C64::new(0.0, ks[j]);
                }
            }
            _ => {
                let n1 = g.spec.points(1);
                for (idx, v) in d.values.iter_mut().enumerate() {
                    let bin = if axis == 0 { idx / n1 } else { idx % n1 };
                    *v *= C64::new(0.0, ks[bin]);
                }
            }
        }
        out.push(spectral_transform(&d, Direction::Inverse)?);
    }
    Ok(out)
}

/// Catmull-Rom weights for fractional offset t in [0,1).
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Separable periodic cubic interpolation; exact at nodes.
pub fn interpolate(g: &ComplexGrid, x: &[f64]) -> C64 {
    let spec = &g.spec;
    debug_assert_eq!(x.len(), spec.dim());
    let mut base = [0isize; 2];
    let mut wts = [[0.0f64; 4]; 2];
    for axis in 0..spec.dim() {
        let dx = spec.spacing(axis);
        let u = (x[axis] + 0.5 * spec.extent(axis)) / dx;
        let i0 = u.floor();
        let t = u - i0;
        base[axis] = i0 as isize;
        wts[axis] = catmull_rom(t);
    }
    match spec.dim() {
        1 => {
            let n = spec.points(0) as isize;
            let mut acc = C64::new(0.0, 0.0);
            for (s, &w) in wts[0].iter().enumerate() {
                let i = (base[0] + s as isize - 1).rem_euclid(n) as usize;
                acc += g.values[i] * w;
            }
            acc
        }
        _ => {
            let n0 = spec.points(0) as isize;
            let n1 = spec.points(1) as isize;
            let mut acc = C64::new(0.0, 0.0);
            for (s0, &w0) in wts[0].iter().enumerate() {
                let i = (base[0] + s0 as isize - 1).rem_euclid(n0) as usize;
                let mut row = C64::new(0.0, 0.0);
                for (s1, &w1) in wts[1].iter().enumerate() {
                    let j = (base[1] + s1 as isize - 1).rem_euclid(n1) as usize;
                    row += g.values[i * n1 as usize + j] * w1;
                }
                acc += row * w0;
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn plane_wave_1d(n: usize, l: f64, mode: i32) -> ComplexGrid {
        let spec = GridSpec::new_1d(l, n).unwrap();
        let k = 2.0 * PI * mode as f64 / l;
        ComplexGrid::from_fn(spec, |x| (C64::new(0.0, k * x[0])).exp()).unwrap()
    }

    #[test]
    fn constant_grid_transforms_to_dc_bin() {
        let spec = GridSpec::new_1d(10.0, 32).unwrap();
        let g = ComplexGrid::from_fn(spec, |_| C64::new(1.0, 0.0)).unwrap();
        let hat = spectral_transform(&g, Direction::Forward).unwrap();
        assert_relative_eq!(hat.values[0].re, (32f64).sqrt(), max_relative = 1e-12);
        for v in &hat.values[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_occupies_single_bin() {
        let g = plane_wave_1d(64, 16.0, 3);
        let hat = spectral_transform(&g, Direction::Forward).unwrap();
        for (j, v) in hat.values.iter().enumerate() {
            if j == 3 {
                assert!(v.norm() > 7.9); // sqrt(64)
            } else {
                assert!(v.norm() < 1e-10, "bin {j} has |v| = {}", v.norm());
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let spec = GridSpec::new_1d(1.0, 8).unwrap();
        let mut g = ComplexGrid::zeros(spec);
        g.values[3] = C64::new(f64::NAN, 0.0);
        assert!(spectral_transform(&g, Direction::Forward).is_err());
        assert!(gradient(&g).is_err());
    }

    #[test]
    fn gradient_of_plane_wave_is_ik_times_it() {
        let l = 16.0;
        let g = plane_wave_1d(64, l, 2);
        let k = 2.0 * PI * 2.0 / l;
        let d = gradient(&g).unwrap();
        for (dv, v) in d[0].values.iter().zip(&g.values) {
            let expect = v * C64::new(0.0, k);
            assert!((dv - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let spec = GridSpec::new_1d(5.0, 16).unwrap();
        let g = ComplexGrid::from_fn(spec, |_| C64::new(2.0, -1.0)).unwrap();
        let d = gradient(&g).unwrap();
        for v in &d[0].values {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_gaussian_matches_analytic() {
        let l = 40.0;
        let spec = GridSpec::new_1d(l, 512).unwrap();
        let sigma = 1.5;
        let g = ComplexGrid::from_fn(spec.clone(), |x| {
            C64::new((-x[0] * x[0] / (2.0 * sigma * sigma)).exp(), 0.0)
        })
        .unwrap();
        let d = gradient(&g).unwrap();
        let mut max_err: f64 = 0.0;
        for (i, dv) in d[0].values.iter().enumerate() {
            let x = spec.coord(0, i);
            let analytic = -x / (sigma * sigma) * (-x * x / (2.0 * sigma * sigma)).exp();
            max_err = max_err.max((dv.re - analytic).abs());
        }
        assert!(max_err < 1e-8, "max gradient error {max_err}");
    }

    #[test]
    fn gradient_2d_plane_wave() {
        let spec = GridSpec::new_2d([8.0, 12.0], [32, 64]).unwrap();
        let kx = 2.0 * PI * 2.0 / 8.0;
        let ky = 2.0 * PI * (-3.0) / 12.0;
        let g = ComplexGrid::from_fn(spec, |x| C64::new(0.0, kx * x[0] + ky * x[1]).exp()).unwrap();
        let d = gradient(&g).unwrap();
        for ((d0, d1), v) in d[0].values.iter().zip(&d[1].values).zip(&g.values) {
            assert!((d0 - v * C64::new(0.0, kx)).norm() < 1e-10);
            assert!((d1 - v * C64::new(0.0, ky)).norm() < 1e-10);
        }
    }

    #[test]
    fn interpolate_exact_at_nodes() {
        let spec = GridSpec::new_1d(10.0, 32).unwrap();
        let g = ComplexGrid::from_fn(spec.clone(), |x| C64::new(x[0].sin(), x[0].cos())).unwrap();
        for i in 0..32 {
            let x = spec.coord(0, i);
            let v = interpolate(&g, &[x]);
            assert!((v - g.values[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn interpolate_midpoint_of_local_ramp() {
        // locally linear data: midpoint value is the arithmetic mean
        let spec = GridSpec::new_1d(8.0, 16).unwrap();
        let g = ComplexGrid::from_fn(spec.clone(), |x| C64::new(3.0 * x[0], 0.0)).unwrap();
        // stay away from the periodic seam
        let i = 7;
        let x_mid = 0.5 * (spec.coord(0, i) + spec.coord(0, i + 1));
        let v = interpolate(&g, &[x_mid]);
        let mean = 0.5 * (g.values[i].re + g.values[i + 1].re);
        assert_relative_eq!(v.re, mean, max_relative = 1e-12);
    }

    #[test]
    fn interpolate_plane_wave_off_grid() {
        let l = 16.0;
        let g = plane_wave_1d(512, l, 3);
        let k = 2.0 * PI * 3.0 / l;
        for &x in &[0.123, -5.4321, 7.77] {
            let v = interpolate(&g, &[x]);
            let exact = C64::new(0.0, k * x).exp();
            assert!((v - exact).norm() < 1e-6, "error {} at x={x}", (v - exact).norm());
        }
    }

    #[test]
    fn interpolate_is_periodic() {
        let g = plane_wave_1d(64, 16.0, 2);
        let a = interpolate(&g, &[1.2345]);
        let b = interpolate(&g, &[1.2345 + 16.0]);
        let c = interpolate(&g, &[1.2345 - 16.0]);
        assert!((a - b).norm() < 1e-12);
        assert!((a - c).norm() < 1e-12);
    }

    #[test]
    fn interpolate_2d_exact_at_nodes() {
        let spec = GridSpec::new_2d([6.0, 6.0], [16, 16]).unwrap();
        let g = ComplexGrid::from_fn(spec.clone(), |x| C64::new(x[0] * x[1], x[0] - x[1])).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let p = [spec.coord(0, i), spec.coord(1, j)];
                let v = interpolate(&g, &p);
                assert!((v - g.values[i * 16 + j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn spec_rejects_degenerate_grids() {
        assert!(GridSpec::new_1d(0.0, 32).is_err());
        assert!(GridSpec::new_1d(1.0, 4).is_err());
        assert!(GridSpec::new_2d([1.0, -1.0], [16, 16]).is_err());
    }

    proptest! {
        #[test]
        fn fft_round_trip_and_parseval(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64)) {
            let spec = GridSpec::new_1d(4.0, 64).unwrap();
            let g = ComplexGrid::new(spec, vals.iter().map(|&(a, b)| C64::new(a, b)).collect()).unwrap();
            let hat = spectral_transform(&g, Direction::Forward).unwrap();
            let back = spectral_transform(&hat, Direction::Inverse).unwrap();
            let scale: f64 = g.values.iter().map(|v| v.norm_sqr()).sum::<f64>().max(1e-30);
            let rt_err: f64 = g.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm_sqr()).sum();
            prop_assert!(rt_err / scale < 1e-24);
            let p_in: f64 = g.values.iter().map(|v| v.norm_sqr()).sum();
            let p_out: f64 = hat.values.iter().map(|v| v.norm_sqr()).sum();
            prop_assert!(((p_in - p_out) / scale).abs() < 1e-12);
        }

        #[test]
        fn gradient_is_linear(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32),
                              a_re in -2.0f64..2.0, a_im in -2.0f64..2.0) {
            let spec = GridSpec::new_1d(4.0, 32).unwrap();
            let g = ComplexGrid::new(spec.clone(), vals.iter().map(|&(x, y)| C64::new(x, y)).collect()).unwrap();
            let h = ComplexGrid::from_fn(spec, |x| C64::new((x[0] * 2.1).sin(), 0.3)).unwrap();
            let a = C64::new(a_re, a_im);
            let lhs = gradient(&g.scale(a).add(&h).unwrap()).unwrap();
            let dg = gradient(&g).unwrap();
            let dh = gradient(&h).unwrap();
            for ((l, x), y) in lhs[0].values.iter().zip(&dg[0].values).zip(&dh[0].values) {
                prop_assert!((l - (x * a + y)).norm() < 1e-9);
            }
        }
    }
}
