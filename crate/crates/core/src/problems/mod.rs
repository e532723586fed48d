//! Test problems `y = A x0 + z` for regularization experiments.
//!
//! The eight integral-equation problems follow the standard Galerkin or
//! quadrature discretizations from Hansen's Regularization Tools; see
//! [`kernels`] for the kernel and solution used by each. Two synthetic models
//! complete the set: a random rank-deficient operator and a ray-tomography
//! operator with randomly placed rays.

pub mod kernels;
pub mod tomo;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use tomo::{tomo, tomo_rays, Ray};

/// A linear operator with its true signal.
#[derive(Debug, Clone, PartialEq)]
pub struct IllPosedProblem {
    pub name: String,
    pub a: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub seed: Option<u64>,
    pub meta: BTreeMap<String, Value>,
}

impl IllPosedProblem {
    pub(crate) fn new(name: &str, a: DMatrix<f64>, x0: DVector<f64>) -> Self {
        IllPosedProblem {
            name: name.to_string(),
            a,
            x0,
            seed: None,
            meta: BTreeMap::new(),
        }
    }

    pub(crate) fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// Noise-free data `A x0`.
    pub fn clean_data(&self) -> DVector<f64> {
        &self.a * &self.x0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProblemContainer::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ProblemContainer>(s)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form: row-major matrix, shortest round-trip float formatting.
#[derive(Debug, Serialize, Deserialize)]
struct ProblemContainer {
    name: String,
    m: usize,
    n: usize,
    seed: Option<u64>,
    a: Vec<f64>,
    x0: Vec<f64>,
    meta: BTreeMap<String, Value>,
}

impl From<&IllPosedProblem> for ProblemContainer {
    fn from(p: &IllPosedProblem) -> Self {
        let (m, n) = p.a.shape();
        let mut a = Vec::with_capacity(m * n);
        for i in 0..m {
            a.extend(p.a.row(i).iter());
        }
        ProblemContainer {
            name: p.name.clone(),
            m,
            n,
            seed: p.seed,
            a,
            x0: p.x0.iter().copied().collect(),
            meta: p.meta.clone(),
        }
    }
}

impl TryFrom<ProblemContainer> for IllPosedProblem {
    type Error = Error;

    fn try_from(c: ProblemContainer) -> Result<Self> {
        if c.a.len() != c.m * c.n || c.x0.len() != c.n {
            return Err(Error::Format(format!(
                "shape mismatch: m={} n={} |a|={} |x0|={}",
                c.m,
                c.n,
                c.a.len(),
                c.x0.len()
            )));
        }
        Ok(IllPosedProblem {
            name: c.name,
            a: DMatrix::from_row_slice(c.m, c.n, &c.a),
            x0: DVector::from_vec(c.x0),
            seed: c.seed,
            meta: c.meta,
        })
    }
}

/// The integral-equation test problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Shaw,
    Baart,
    Foxgood,
    Heat,
    Deriv2,
    Wing,
    Spikes,
    Ilaplace,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 8] = [
        ProblemKind::Shaw,
        ProblemKind::Baart,
        ProblemKind::Foxgood,
        ProblemKind::Heat,
        ProblemKind::Deriv2,
        ProblemKind::Wing,
        ProblemKind::Spikes,
        ProblemKind::Ilaplace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Shaw => "shaw",
            ProblemKind::Baart => "baart",
            ProblemKind::Foxgood => "foxgood",
            ProblemKind::Heat => "heat",
            ProblemKind::Deriv2 => "deriv2",
            ProblemKind::Wing => "wing",
            ProblemKind::Spikes => "spikes",
            ProblemKind::Ilaplace => "ilaplace",
        }
    }

    fn needs_even(self) -> bool {
        matches!(
            self,
            ProblemKind::Shaw | ProblemKind::Baart | ProblemKind::Heat
        )
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

/// Generates an `n x n` instance of a named problem with default parameters.
pub fn generate(kind: ProblemKind, n: usize) -> Result<IllPosedProblem> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("n = {n} must be >= 2")));
    }
    if kind.needs_even() && !n.is_multiple_of(2) {
        return Err(Error::InvalidDimension(format!(
            "{kind} requires even n, got {n}"
        )));
    }
    let p = match kind {
        ProblemKind::Shaw => kernels::shaw(n),
        ProblemKind::Baart => kernels::baart(n),
        ProblemKind::Foxgood => kernels::foxgood(n),
        ProblemKind::Heat => kernels::heat(n, kernels::HEAT_KAPPA),
        ProblemKind::Deriv2 => kernels::deriv2(n),
        ProblemKind::Wing => kernels::wing(n, 1.0 / 3.0, 2.0 / 3.0),
        ProblemKind::Spikes => kernels::spikes(n, kernels::SPIKES_T_MAX),
        ProblemKind::Ilaplace => kernels::ilaplace(n),
    };
    Ok(p.with_meta("n", n))
}

/// Generates a problem by name; accepts the integral-equation names only.
pub fn generate_named(name: &str, n: usize) -> Result<IllPosedProblem> {
    generate(name.parse()?, n)
}

/// Distribution of the true signal for the random models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalDist {
    /// i.i.d. standard normal.
    Gaussian,
    /// i.i.d. uniform on (0, 1).
    Uniform,
}

impl SignalDist {
    pub fn name(self) -> &'static str {
        match self {
            SignalDist::Gaussian => "gaussian",
            SignalDist::Uniform => "uniform",
        }
    }

    /// Second-moment matrix `E[x0 x0^T]` of the distribution in dimension `n`.
    pub fn second_moment(self, n: usize) -> DMatrix<f64> {
        match self {
            SignalDist::Gaussian => DMatrix::identity(n, n),
            // var 1/12 on the diagonal plus the mean outer product 1/4
            SignalDist::Uniform => {
                DMatrix::from_element(n, n, 0.25) + DMatrix::identity(n, n) / 12.0
            }
        }
    }

    fn sample(self, rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        match self {
            SignalDist::Gaussian => {
                DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
            }
            SignalDist::Uniform => {
                let u = Uniform::new(0.0, 1.0).expect("valid range");
                DVector::from_iterator(n, (0..n).map(|_| u.sample(rng)))
            }
        }
    }
}

impl FromStr for SignalDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(SignalDist::Gaussian),
            "uniform" => Ok(SignalDist::Uniform),
            other => Err(Error::InvalidConfig(format!(
                "unknown signal distribution `{other}`"
            ))),
        }
    }
}

/// Random rank-deficient operator `A = (1/m) B B^T` with `B` an `m x r`
/// standard Gaussian matrix, so `rank(A) = r`.
pub fn rank_deficient(m: usize, r: usize, seed: u64, dist: SignalDist) -> Result<IllPosedProblem> {
    if r == 0 || m <= r {
        return Err(Error::InvalidDimension(format!(
            "need m > r >= 1, got m={m} r={r}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: DMatrix<f64> = DMatrix::from_fn(m, r, |_, _| StandardNormal.sample(&mut rng));
    let a = (&b * b.transpose()) / m as f64;
    let x0 = dist.sample(&mut rng, m);
    let mut p = IllPosedProblem::new("rankdef", a, x0)
        .with_meta("m", m)
        .with_meta("r", r)
        .with_meta("x0_dist", dist.name());
    p.seed = Some(seed);
    Ok(p)
}

/// `I_n` with an all-ones signal; every singular value equals one.
pub fn identity(n: usize) -> Result<IllPosedProblem> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("n = {n} must be >= 2")));
    }
    Ok(IllPosedProblem::new(
        "identity",
        DMatrix::identity(n, n),
        DVector::from_element(n, 1.0),
    )
    .with_meta("n", n))
}

/// Noisy data for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyObservation {
    pub y: DVector<f64>,
    pub sigma_z2: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// Noise variance giving `SNR = ||A x0||^2 / (n sigma_z^2)` at `snr_db`.
pub fn noise_variance(clean_energy: f64, n: usize, snr_db: f64) -> f64 {
    clean_energy / (n as f64 * 10f64.powf(snr_db / 10.0))
}

/// Adds white Gaussian noise to `A x0` at the requested SNR.
pub fn observe(problem: &IllPosedProblem, snr_db: f64, seed: u64) -> Result<NoisyObservation> {
    observe_clean(&problem.clean_data(), problem.cols(), snr_db, seed)
}

/// As [`observe`], for precomputed clean data `A x0`.
pub fn observe_clean(
    clean: &DVector<f64>,
    n: usize,
    snr_db: f64,
    seed: u64,
) -> Result<NoisyObservation> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    let energy = clean.norm_squared();
    if energy == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let sigma_z2 = noise_variance(energy, n, snr_db);
    let sd = sigma_z2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = DVector::from_iterator(
        clean.len(),
        clean.iter().map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        }),
    );
    Ok(NoisyObservation {
        y,
        sigma_z2,
        snr_db,
        seed,
    })
}
