use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GlKernel;
use crate::error::{Error, Result};
use crate::signal::synth::rng_from_seed;
use crate::signal::{MultichannelRecord, TimeSeries};

/// State norm beyond which a simulation is declared divergent.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Discrete fractional linear model
/// `Δ^α x[k+1] = A x[k] + B u[k] + w[k]` with `y = x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalModel {
    pub alpha: Vec<f64>,
    /// `A`, n × n.
    pub coupling: DMatrix<f64>,
    /// `B`, n × p with p < n.
    pub input: DMatrix<f64>,
    /// Standard deviation of the Gaussian process noise `w`.
    pub noise_scale: f64,
}

impl FractionalModel {
    pub fn new(alpha: Vec<f64>, coupling: DMatrix<f64>, input: DMatrix<f64>, noise_scale: f64) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::invalid("model needs at least one channel"));
        }
        if coupling.shape() != (n, n) {
            return Err(Error::invalid(format!(
                "coupling matrix is {:?}, expected ({n}, {n})",
                coupling.shape()
            )));
        }
        if input.nrows() != n {
            return Err(Error::invalid(format!(
                "input matrix has {} rows, expected {n}",
                input.nrows()
            )));
        }
        if input.ncols() >= n {
            return Err(Error::invalid(format!(
                "input count {} must be strictly smaller than the state size {n}",
                input.ncols()
            )));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be finite and nonnegative"));
        }
        if alpha
            .iter()
            .chain(coupling.iter())
            .chain(input.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self {
            alpha,
            coupling,
            input,
            noise_scale,
        })
    }

    pub fn n_states(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input.ncols()
    }

    pub fn to_export(&self) -> CouplingExport {
        CouplingExport::new(&self.alpha, &self.coupling)
    }
}

/// JSON form of an estimated coupling: `{n, alpha[], A[]}` with `A` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingExport {
    pub n: usize,
    pub alpha: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
}

impl CouplingExport {
    pub fn new(alpha: &[f64], coupling: &DMatrix<f64>) -> Self {
        Self {
            n: coupling.nrows(),
            alpha: alpha.to_vec(),
            a: row_major(coupling),
        }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        if self.a.len() != self.n * self.n {
            return Err(Error::invalid(format!(
                "coupling export has {} entries, expected {}",
                self.a.len(),
                self.n * self.n
            )));
        }
        Ok(DMatrix::from_row_slice(self.n, self.n, &self.a))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Number of samples produced, including the initial state.
    pub steps: usize,
    /// Grünwald–Letnikov memory horizon `J`.
    pub horizon: usize,
    pub seed: u64,
    pub rate_hz: f64,
}

/// Forward simulation of the model:
///
/// `x[k+1] = A x[k] + B u[k] + w[k] - sum_{j=1}^{min(k+1, J)} psi(α, j) x[k+1-j]`
///
/// `inputs` holds one row per input channel with at least `steps` entries;
/// `None` means zero input. `x0` defaults to the origin.
pub fn simulate(
    model: &FractionalModel,
    opts: &SimulationOptions,
    inputs: Option<&[Vec<f64>]>,
    x0: Option<&[f64]>,
) -> Result<MultichannelRecord> {
    let n = model.n_states();
    let p = model.n_inputs();
    let t = opts.steps;
    if t == 0 {
        return Err(Error::invalid("simulation needs at least one step"));
    }
    if let Some(u) = inputs {
        if u.len() != p || u.iter().any(|r| r.len() + 1 < t) {
            return Err(Error::invalid(format!(
                "inputs must have {p} rows of at least {} steps",
                t - 1
            )));
        }
    }
    let kernels: Vec<GlKernel> = model.alpha.iter().map(|&a| GlKernel::new(a, opts.horizon)).collect();
    let mut x: Vec<Vec<f64>> = vec![vec![0.0; t]; n];
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(Error::invalid(format!(
                "initial state has {} entries, expected {n}",
                x0.len()
            )));
        }
        for i in 0..n {
            x[i][0] = x0[i];
        }
    }

    let mut rng = rng_from_seed(opts.seed);
    let mut next = vec![0.0; n];
    for k in 0..t - 1 {
        for i in 0..n {
            let mut v = 0.0;
            for l in 0..n {
                v += model.coupling[(i, l)] * x[l][k];
            }
            if let Some(u) = inputs {
                for c in 0..p {
                    v += model.input[(i, c)] * u[c][k];
                }
            }
            if model.noise_scale > 0.0 {
                let w: f64 = StandardNormal.sample(&mut rng);
                v += model.noise_scale * w;
            }
            let psi = kernels[i].coeffs();
            let taps = (k + 1).min(opts.horizon);
            let hist = &x[i];
            for j in 1..=taps {
                v -= psi[j] * hist[k + 1 - j];
            }
            next[i] = v;
        }
        let norm2: f64 = next.iter().map(|v| v * v).sum();
        if !(norm2.sqrt() <= OVERFLOW_GUARD) {
            return Err(Error::Diverged { step: k + 1 });
        }
        for i in 0..n {
            x[i][k + 1] = next[i];
        }
    }
    let channels = x
        .into_iter()
        .enumerate()
        .map(|(i, s)| TimeSeries::new(s, opts.rate_hz, format!("x{i}")))
        .collect::<Result<Vec<_>>>()?;
    MultichannelRecord::new(channels, "", "", None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(steps: usize) -> SimulationOptions {
        SimulationOptions {
            steps,
            horizon: 50,
            seed: 1,
            rate_hz: 1.0,
        }
    }

    #[test]
    fn model_validation() {
        let ok = FractionalModel::new(vec![0.5; 3], DMatrix::zeros(3, 3), DMatrix::zeros(3, 2), 1.0);
        assert!(ok.is_ok());
        assert!(FractionalModel::new(vec![0.5; 3], DMatrix::zeros(3, 3), DMatrix::zeros(3, 3), 1.0).is_err());
        assert!(FractionalModel::new(vec![0.5; 3], DMatrix::zeros(2, 3), DMatrix::zeros(3, 0), 1.0).is_err());
        assert!(FractionalModel::new(vec![0.5; 3], DMatrix::zeros(3, 3), DMatrix::zeros(3, 0), -1.0).is_err());
    }

    #[test]
    fn zero_order_null_dynamics() {
        // α = 0 leaves only psi(0, 0) = 1, so x[k+1] = A x[k] = 0 after the initial state
        let m = FractionalModel::new(vec![0.0; 2], DMatrix::zeros(2, 2), DMatrix::zeros(2, 0), 0.0).unwrap();
        let r = simulate(&m, &opts(10), None, Some(&[1.0, -2.0])).unwrap();
        assert_eq!(r.channel(0).samples()[0], 1.0);
        assert!(r.channel(0).samples()[1..].iter().all(|&v| v == 0.0));
        assert!(r.channel(1).samples()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn geometric_decay() {
        let m = FractionalModel::new(vec![1.0], DMatrix::from_element(1, 1, -0.5), DMatrix::zeros(1, 0), 0.0).unwrap();
        let r = simulate(&m, &opts(40), None, Some(&[1.0])).unwrap();
        for (k, &v) in r.channel(0).samples().iter().enumerate() {
            assert_eq!(v, 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn divergence_names_step() {
        let m = FractionalModel::new(vec![1.0], DMatrix::from_element(1, 1, 9.0), DMatrix::zeros(1, 0), 0.0).unwrap();
        // x[k] = 10^k crosses 1e12 at k = 13
        match simulate(&m, &opts(100), None, Some(&[1.0])) {
            Err(Error::Diverged { step }) => assert_eq!(step, 13),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let m = FractionalModel::new(
            vec![0.4, 0.7],
            DMatrix::from_element(2, 2, -0.2),
            DMatrix::zeros(2, 0),
            1.0,
        )
        .unwrap();
        let a = simulate(&m, &opts(200), None, None).unwrap();
        let b = simulate(&m, &opts(200), None, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inputs_enter_through_b() {
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let m = FractionalModel::new(vec![0.0, 0.0], DMatrix::zeros(2, 2), b, 0.0).unwrap();
        let u = vec![vec![3.0, 4.0, 5.0]];
        let r = simulate(&m, &opts(4), Some(&u), None).unwrap();
        assert_eq!(r.channel(0).samples(), &[0.0, 3.0, 4.0, 5.0]);
        assert_eq!(r.channel(1).samples(), &[0.0; 4]);
    }

    #[test]
    fn export_round_trip() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e = CouplingExport::new(&[0.1, 0.2], &a);
        assert_eq!(e.a, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.matrix().unwrap(), a);
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["n"], 2);
        assert!(json.get("A").is_some());
    }
}
