//! Seeded synthetic generators with known ground truth.
//!
//! Every generator is a pure function of its arguments and seed; they
//! stand in for clinical recordings in oracle tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{MultichannelRecord, TimeSeries};
use crate::error::{Error, Result};
use crate::fracdyn::{simulate, FractionalModel, SimulationOptions};

/// Relative tolerance for negative circulant eigenvalues before they are
/// treated as an embedding failure rather than rounding noise.
const EIGEN_TOLERANCE: f64 = 1e-10;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard Gaussian white noise.
pub fn synth_white(n: usize, seed: u64) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::invalid("length must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let v = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    TimeSeries::new(v, 1.0, "white")
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Fractional Gaussian noise by exact circulant embedding of the
/// autocovariance (Davies–Harte). Output has unit variance.
pub fn synth_fgn(hurst: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::invalid(format!(
            "Hurst exponent must lie in (0, 1), got {hurst}"
        )));
    }
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fGn length must be a power of two >= 64, got {n}"
        )));
    }
    let m = 2 * n;
    let mut row: Vec<Complex64> = Vec::with_capacity(m);
    for k in 0..=n {
        row.push(Complex64::new(fgn_autocovariance(hurst, k), 0.0));
    }
    for k in (1..n).rev() {
        row.push(Complex64::new(fgn_autocovariance(hurst, k), 0.0));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);

    let max_eig = row.iter().map(|c| c.re).fold(0.0, f64::max);
    let min_eig = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    if min_eig < -EIGEN_TOLERANCE * max_eig {
        return Err(Error::NegativeEigenvalue { value: min_eig });
    }

    let mut rng = rng_from_seed(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let mut coeffs: Vec<Complex64> = row
        .iter()
        .map(|lambda| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(a, b) * (lambda.re.max(0.0).sqrt() * scale)
        })
        .collect();
    fft.process(&mut coeffs);
    let samples = coeffs[..n].iter().map(|c| c.re).collect();
    TimeSeries::new(samples, 1.0, "fgn")
}

/// Analytic generalized Hurst exponent of the binomial cascade with
/// multiplier `p`: `h(q) = 1/q - log2(p^q + (1-p)^q) / q`.
pub fn cascade_hurst(p: f64, q: f64) -> f64 {
    1.0 / q - (p.powf(q) + (1.0 - p).powf(q)).log2() / q
}

/// Binomial multiplicative cascade of length `2^depth`.
///
/// At each dyadic split one half receives fraction `p` of the parent mass
/// and the other `1 - p`. Which half gets `p` is drawn once per level from
/// the seed and shared by every box of that level, so each box holds an
/// exact scaled copy of the measure below it. The output is a nonnegative
/// measure summing to one.
pub fn synth_cascade(p: f64, depth: u32, seed: u64) -> Result<TimeSeries> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::invalid(format!(
            "cascade multiplier must lie in (0.5, 1), got {p}"
        )));
    }
    if !(10..=24).contains(&depth) {
        return Err(Error::invalid(format!(
            "cascade depth must lie in [10, 24], got {depth}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut mass = vec![1.0_f64];
    for _ in 0..depth {
        let (l, r) = if rng.random::<bool>() {
            (p, 1.0 - p)
        } else {
            (1.0 - p, p)
        };
        let mut next = Vec::with_capacity(mass.len() * 2);
        for &m in &mass {
            next.push(m * l);
            next.push(m * r);
        }
        mass = next;
    }
    TimeSeries::new(mass, 1.0, "cascade")
}

/// Exogenous inputs fed through `B` in a simulated fractional system.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSchedule {
    None,
    /// Rows are input channels, columns are time steps.
    Explicit(Vec<Vec<f64>>),
    /// `count` rectangular bursts per input channel, each `duration` steps
    /// long with amplitude `±amplitude`; onsets and signs drawn from the seed.
    Bursts {
        count: usize,
        duration: usize,
        amplitude: f64,
    },
}

impl InputSchedule {
    fn realize(&self, p: usize, steps: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        match self {
            InputSchedule::None => Ok(vec![vec![0.0; steps]; p]),
            InputSchedule::Explicit(u) => {
                if u.len() != p || u.iter().any(|r| r.len() < steps) {
                    return Err(Error::invalid(format!(
                        "input schedule must have {p} rows of at least {steps} steps"
                    )));
                }
                Ok(u.iter().map(|r| r[..steps].to_vec()).collect())
            }
            &InputSchedule::Bursts {
                count,
                duration,
                amplitude,
            } => {
                if duration == 0 || duration >= steps {
                    return Err(Error::invalid("burst duration must be in 1..steps"));
                }
                let mut u = vec![vec![0.0; steps]; p];
                for row in &mut u {
                    for _ in 0..count {
                        let onset = rng.random_range(0..steps - duration);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        for v in &mut row[onset..onset + duration] {
                            *v = sign * amplitude;
                        }
                    }
                }
                Ok(u)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    WhiteNoise,
    Fgn {
        hurst: f64,
    },
    BinomialCascade {
        p: f64,
        depth: u32,
    },
    FractionalSystem {
        model: FractionalModel,
        inputs: InputSchedule,
        x0: Option<Vec<f64>>,
        /// Grünwald–Letnikov memory horizon used by the simulation.
        horizon: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub length: usize,
    pub seed: u64,
    pub rate_hz: f64,
}

/// A simulated record together with the model and inputs that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticSystem {
    pub record: MultichannelRecord,
    pub model: FractionalModel,
    pub inputs: Vec<Vec<f64>>,
}

impl SyntheticSpec {
    /// Generates the record. Scalar kinds yield a one-channel record.
    pub fn generate(&self) -> Result<MultichannelRecord> {
        let single = |ts: TimeSeries| {
            let ts = TimeSeries::new(ts.into_samples(), self.rate_hz, "x0")?;
            MultichannelRecord::new(vec![ts], "", "", None)
        };
        match &self.kind {
            SyntheticKind::WhiteNoise => single(synth_white(self.length, self.seed)?),
            &SyntheticKind::Fgn { hurst } => single(synth_fgn(hurst, self.length, self.seed)?),
            &SyntheticKind::BinomialCascade { p, depth } => {
                if self.length != 1usize << depth {
                    return Err(Error::invalid(format!(
                        "cascade length must equal 2^depth = {}",
                        1usize << depth
                    )));
                }
                single(synth_cascade(p, depth, self.seed)?)
            }
            SyntheticKind::FractionalSystem { .. } => Ok(synth_fractional_system(self)?.record),
        }
    }
}

/// Simulates a fractional linear system spec, keeping its ground truth.
pub fn synth_fractional_system(spec: &SyntheticSpec) -> Result<SyntheticSystem> {
    let SyntheticKind::FractionalSystem {
        model,
        inputs,
        x0,
        horizon,
    } = &spec.kind
    else {
        return Err(Error::invalid("spec is not a fractional-system spec"));
    };
    if model.alpha.iter().any(|&a| !(a > 0.0 && a < 2.0)) {
        return Err(Error::invalid("fractional orders must lie in (0, 2)"));
    }
    let mut rng = rng_from_seed(spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let u = inputs.realize(model.n_inputs(), spec.length, &mut rng)?;
    let opts = SimulationOptions {
        steps: spec.length,
        horizon: *horizon,
        seed: spec.seed,
        rate_hz: spec.rate_hz,
    };
    let record = simulate(model, &opts, Some(&u), x0.as_deref())?;
    Ok(SyntheticSystem {
        record,
        model: model.clone(),
        inputs: u,
    })
}

/// Random stable fractional model on `n` channels.
///
/// Orders are drawn from `[0.5, 0.9]` and the diagonal of `A` from
/// `[-1.1, -0.6]`. Off-diagonal couplings are Gaussian with standard
/// deviation `0.25 / sqrt(n)`, so their spectral radius stays near 0.5 and
/// every eigenvalue of `A` lies inside the discrete stability region of the
/// chosen orders. No inputs; unit noise.
pub fn random_stable_model(n: usize, seed: u64) -> Result<FractionalModel> {
    if n == 0 {
        return Err(Error::invalid("model needs at least one channel"));
    }
    let mut rng = rng_from_seed(seed);
    let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..0.9)).collect();
    let sd = 0.25 / (n as f64).sqrt();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j {
                -rng.random_range(0.6..1.1)
            } else {
                sd * normal(&mut rng)
            };
        }
    }
    FractionalModel::new(alpha, a, DMatrix::zeros(n, 0), 1.0)
}

/// Labeled multi-class cohort of simulated fractional systems.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub length: usize,
    pub institutions: usize,
    pub rate_hz: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 40,
            channels: 12,
            length: 8192,
            institutions: 4,
            rate_hz: 1.0,
            horizon: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CohortMember {
    pub record: MultichannelRecord,
    pub model: FractionalModel,
}

/// Coupling magnitude carried by the informative entries of class `k`.
pub fn cohort_coupling_level(k: usize) -> f64 {
    0.1 + 0.1 * k as f64
}

/// Simulates a labeled cohort whose classes differ in coupling strength.
///
/// Every entry above the diagonal carries `s e_ij (0.1 + 0.1 k) / sqrt(n - 1)`
/// for class `k`, where the sign pattern `e_ij` is shared by the cohort and
/// `s` is one random sign per subject. Each class therefore occupies two
/// clusters on opposite sides of the origin along the same direction, which
/// no linear decision rule on the raw entries can separate. The matrix stays
/// triangular, so its eigenvalues are the stable diagonal. Entries below the
/// diagonal are small background noise. Subjects are dealt round-robin to
/// `institutions` sites named `site0`, `site1`, ...; each site shifts the
/// orders slightly, like a device effect.
pub fn synth_cohort(spec: &CohortSpec) -> Result<Vec<CohortMember>> {
    if spec.classes < 2 || spec.classes > usize::from(super::MAX_STAGE) + 1 {
        return Err(Error::invalid("cohort needs between 2 and 5 classes"));
    }
    if spec.channels < 2 || spec.per_class == 0 || spec.institutions == 0 {
        return Err(Error::invalid(
            "cohort needs >= 2 channels, >= 1 subject per class and >= 1 institution",
        ));
    }
    let n = spec.channels;
    let mut rng = rng_from_seed(spec.seed);
    let pattern: Vec<f64> = (0..n * n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let spread = ((n - 1) as f64).sqrt();
    let mut members = Vec::with_capacity(spec.classes * spec.per_class);
    for k in 0..spec.classes {
        for s in 0..spec.per_class {
            let site = s % spec.institutions;
            let site_shift = 0.03 * (site as f64 - (spec.institutions as f64 - 1.0) / 2.0);
            let alpha: Vec<f64> = (0..n)
                .map(|i| {
                    let base = 0.4 + 0.4 * i as f64 / (n - 1) as f64;
                    (base + site_shift + 0.02 * normal(&mut rng)).clamp(0.05, 1.5)
                })
                .collect();
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = if i == j {
                        -0.8 + 0.05 * normal(&mut rng)
                    } else {
                        0.02 * normal(&mut rng)
                    };
                }
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for i in 0..n {
                for j in i + 1..n {
                    let level = cohort_coupling_level(k) * (1.0 + 0.05 * normal(&mut rng));
                    a[(i, j)] = sign * pattern[i * n + j] * level / spread;
                }
            }
            let model = FractionalModel::new(alpha, a, DMatrix::zeros(n, 0), 1.0)?;
            let seed = rng.random::<u64>();
            let opts = SimulationOptions {
                steps: spec.length,
                horizon: spec.horizon,
                seed,
                rate_hz: spec.rate_hz,
            };
            let mut record = simulate(&model, &opts, None, None)?.with_stage(Some(k as u8))?;
            record.subject_id = format!("c{k}s{s:03}");
            record.institution = format!("site{site}");
            members.push(CohortMember { record, model });
        }
    }
    Ok(members)
}
