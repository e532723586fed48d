//! Monte-Carlo experiment engine: NMSE sweeps over SNR, tomography
//! restoration with PSNR, the perturbation-bound approximation experiment and
//! selector timing.
//!
//! Every trial draws its seeds from the master seed by counter, so a report is
//! a pure function of its spec. Trials run on the rayon pool; results are
//! collected in index order, which keeps the output independent of the number
//! of workers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, GammaGrid, MethodId};
use crate::copra::{self, CopraConfig};
use crate::diagnostics::{self, Prior};
use crate::error::{Error, Result};
use crate::problems::{self, IllPosedProblem, ProblemKind, SignalDist};
use crate::spectral::{self, SvdFactors};

/// Bumped whenever a CSV or JSON schema changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_SNR_DB: [f64; 4] = [10.0, 20.0, 30.0, 40.0];
/// A method failing on more than this fraction of trials fails the sweep.
pub const MAX_FAILURE_RATE: f64 = 0.01;

const STREAM_NOISE: u64 = 1;
const STREAM_PROBLEM: u64 = 2;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ stream) ^ index)
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// How to build the operator and true signal of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Named {
        name: ProblemKind,
        n: usize,
    },
    /// Random rays over an `n_side x n_side` phantom; rays drawn from the master seed.
    Tomo {
        n_side: usize,
        n_rays: usize,
    },
    /// Fresh operator and signal in every trial.
    RankDeficient {
        m: usize,
        r: usize,
        dist: SignalDist,
    },
    Identity {
        n: usize,
    },
}

impl ProblemSpec {
    /// Parses a problem name with a size. `tomo` takes the nearest square
    /// image with one ray per pixel; `rankdef` keeps 90% of the rank.
    pub fn parse(name: &str, n: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tomo" => {
                let side = (n as f64).sqrt().round().max(1.0) as usize;
                Ok(ProblemSpec::Tomo {
                    n_side: side,
                    n_rays: side * side,
                })
            }
            "identity" => Ok(ProblemSpec::Identity { n }),
            "rankdef" => Ok(ProblemSpec::RankDeficient {
                m: n,
                r: (n * 9 / 10).max(1),
                dist: SignalDist::Gaussian,
            }),
            other => Ok(ProblemSpec::Named {
                name: other.parse()?,
                n,
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ProblemSpec::Named { name, n } => format!("{name}-{n}"),
            ProblemSpec::Tomo { n_side, n_rays } => format!("tomo-{n_side}x{n_side}-{n_rays}"),
            ProblemSpec::RankDeficient { m, r, dist } => format!("rankdef-{m}-{r}-{}", dist.name()),
            ProblemSpec::Identity { n } => format!("identity-{n}"),
        }
    }

    fn per_trial(&self) -> bool {
        matches!(self, ProblemSpec::RankDeficient { .. })
    }

    /// The problem and the second-moment model of its signal.
    pub fn build(&self, seed: u64) -> Result<(IllPosedProblem, Prior)> {
        let p = match *self {
            ProblemSpec::Named { name, n } => problems::generate(name, n)?,
            ProblemSpec::Tomo { n_side, n_rays } => problems::tomo(n_side, n_rays, seed)?,
            ProblemSpec::RankDeficient { m, r, dist } => {
                let p = problems::rank_deficient(m, r, seed, dist)?;
                let prior = Prior::Covariance(dist.second_moment(m));
                return Ok((p, prior));
            }
            ProblemSpec::Identity { n } => problems::identity(n)?,
        };
        let prior = Prior::Deterministic(p.x0.clone());
        Ok((p, prior))
    }
}

/// The nine problems of the benchmark set at size `n` (the tomography
/// operator uses the nearest square image).
pub fn benchmark_problems(n: usize) -> Vec<ProblemSpec> {
    let mut v: Vec<ProblemSpec> = ProblemKind::ALL
        .iter()
        .map(|&name| ProblemSpec::Named { name, n })
        .collect();
    v.push(ProblemSpec::parse("tomo", n).expect("tomo spec"));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub problem: ProblemSpec,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<MethodId>,
    pub seed: u64,
    /// Partition constant for the COPRA selector.
    pub c: f64,
    /// Record wall times; off by default so reports are byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl SweepSpec {
    pub fn new(
        problem: ProblemSpec,
        snr_db: Vec<f64>,
        trials: usize,
        methods: Vec<MethodId>,
        seed: u64,
    ) -> Self {
        SweepSpec {
            problem,
            snr_db,
            trials,
            methods,
            seed,
            c: CopraConfig::default().c,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "SNR list must be non-empty and finite".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("method list must be non-empty".into()));
        }
        self.copra_config().validate()
    }

    fn copra_config(&self) -> CopraConfig {
        CopraConfig {
            c: self.c,
            ..CopraConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: MethodId,
    pub snr_db: f64,
    pub trial: usize,
    /// Noise seed of the trial.
    pub seed: u64,
    /// `||x_hat - x0||^2 / ||x0||^2`; `None` when the method failed.
    pub nmse: Option<f64>,
    pub runtime_ns: u64,
    /// COPRA branch taken.
    pub branch: Option<String>,
    pub rho: Option<f64>,
    pub error: Option<String>,
    /// Digest of the `(A, x0, y)` triple this method saw.
    pub input_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: MethodId,
    pub snr_db: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_nmse: Option<f64>,
    /// `10 log10(mean NMSE)`.
    pub nmse_db: Option<f64>,
    pub mean_runtime_ns: f64,
    /// Trials where COPRA took the Newton branch.
    pub newton_root: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub label: String,
    pub spec: SweepSpec,
    pub config_hash: String,
    pub aggregates: Vec<Aggregate>,
    pub failed_methods: Vec<MethodId>,
    pub records: Vec<TrialRecord>,
}

impl SweepReport {
    pub fn aggregate(&self, method: MethodId, snr_db: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.snr_db == snr_db)
    }

    /// Mean NMSE in dB per SNR for `method`, in SNR-list order.
    pub fn curve(&self, method: MethodId) -> Vec<Option<f64>> {
        self.spec
            .snr_db
            .iter()
            .map(|&s| self.aggregate(method, s).and_then(|a| a.nmse_db))
            .collect()
    }
}

/// Recomputes the per-(method, SNR) aggregates from trial records, in record order.
pub fn aggregate_records(
    spec: &SweepSpec,
    records: &[TrialRecord],
) -> (Vec<Aggregate>, Vec<MethodId>) {
    let mut out = Vec::new();
    let mut failed = Vec::new();
    for &method in &spec.methods {
        let (mut total, mut bad) = (0usize, 0usize);
        for &snr in &spec.snr_db {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.method == method && r.snr_db == snr)
                .collect();
            let ok: Vec<f64> = rows.iter().filter_map(|r| r.nmse).collect();
            let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
            let runtime = if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(|r| r.runtime_ns as f64).sum::<f64>() / rows.len() as f64
            };
            let newton = (method == MethodId::Copra).then(|| {
                rows.iter()
                    .filter(|r| r.branch.as_deref() == Some(copra::Branch::NewtonRoot.name()))
                    .count()
            });
            total += rows.len();
            bad += rows.len() - ok.len();
            out.push(Aggregate {
                method,
                snr_db: snr,
                trials: rows.len(),
                failures: rows.len() - ok.len(),
                mean_nmse: mean,
                nmse_db: mean.map(|m| 10.0 * m.log10()),
                mean_runtime_ns: runtime,
                newton_root: newton,
            });
        }
        if total > 0 && bad as f64 > MAX_FAILURE_RATE * total as f64 {
            failed.push(method);
        }
    }
    (out, failed)
}

/// A built problem with everything the methods share.
struct Instance {
    problem: IllPosedProblem,
    prior: Prior,
    svd: SvdFactors,
    grid: GammaGrid,
    clean: DVector<f64>,
    x0_norm2: f64,
    digest: Sha256,
}

impl Instance {
    fn new(problem: IllPosedProblem, prior: Prior) -> Result<Self> {
        let svd = spectral::compute_svd(&problem.a)?;
        let grid = GammaGrid::for_svd(&svd)?;
        let mut digest = Sha256::new();
        for v in problem.a.iter().chain(problem.x0.iter()) {
            digest.update(v.to_le_bytes());
        }
        Ok(Instance {
            clean: problem.clean_data(),
            x0_norm2: problem.x0.norm_squared(),
            problem,
            prior,
            svd,
            grid,
            digest,
        })
    }

    fn input_digest(&self, y: &DVector<f64>) -> String {
        let mut h = self.digest.clone();
        for v in y.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// One method's estimate plus what it reports about itself.
pub struct MethodOutput {
    pub x: DVector<f64>,
    pub rho: Option<f64>,
    pub branch: Option<String>,
}

fn run_method(
    method: MethodId,
    inst: &Instance,
    y: &DVector<f64>,
    sigma_z2: f64,
    cfg: &CopraConfig,
) -> Result<MethodOutput> {
    let svd = &inst.svd;
    match method {
        MethodId::Copra => {
            let r = copra::estimate(svd, y, cfg)?;
            Ok(MethodOutput {
                x: DVector::from_vec(r.x_hat),
                rho: Some(r.rho),
                branch: Some(r.branch.name().to_string()),
            })
        }
        MethodId::Ols => Ok(MethodOutput {
            x: baselines::ols_solve(svd, y)?.x,
            rho: None,
            branch: None,
        }),
        MethodId::Lmmse => {
            let r = inst.prior.to_matrix(inst.problem.cols());
            Ok(MethodOutput {
                x: baselines::lmmse_data_space(&inst.problem.a, &r, sigma_z2, y)?,
                rho: None,
                branch: None,
            })
        }
        grid_method => {
            let b = copra::projected_observation(svd, y)?;
            let sel = baselines::select_from_projection(
                grid_method,
                svd,
                &b,
                y.norm_squared(),
                &inst.grid,
            )?;
            Ok(MethodOutput {
                x: copra::rls_from_projection(svd, &b, sel.gamma)?,
                rho: Some(sel.gamma),
                branch: None,
            })
        }
    }
}

fn run_trial(
    inst: &Instance,
    spec: &SweepSpec,
    snr_db: f64,
    trial: usize,
    noise_seed: u64,
) -> Vec<TrialRecord> {
    let cfg = spec.copra_config();
    let obs = problems::observe_clean(&inst.clean, inst.problem.cols(), snr_db, noise_seed);
    let obs = match obs {
        Ok(o) => o,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&method| TrialRecord {
                    method,
                    snr_db,
                    trial,
                    seed: noise_seed,
                    nmse: None,
                    runtime_ns: 0,
                    branch: None,
                    rho: None,
                    error: Some(e.to_string()),
                    input_digest: String::new(),
                })
                .collect()
        }
    };
    let digest = inst.input_digest(&obs.y);
    spec.methods
        .iter()
        .map(|&method| {
            let start = spec.timing.then(Instant::now);
            let out = run_method(method, inst, &obs.y, obs.sigma_z2, &cfg);
            let runtime_ns = start.map_or(0, |t| t.elapsed().as_nanos().max(1) as u64);
            let (nmse, rho, branch, error) = match out {
                Ok(o) => {
                    let e = (&o.x - &inst.problem.x0).norm_squared() / inst.x0_norm2;
                    if e.is_finite() {
                        (Some(e), o.rho, o.branch, None)
                    } else {
                        (
                            None,
                            o.rho,
                            o.branch,
                            Some("non-finite estimate".to_string()),
                        )
                    }
                }
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            TrialRecord {
                method,
                snr_db,
                trial,
                seed: noise_seed,
                nmse,
                runtime_ns,
                branch,
                rho,
                error,
                input_digest: digest.clone(),
            }
        })
        .collect()
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let shared = if spec.problem.per_trial() {
        None
    } else {
        let (p, prior) = spec.problem.build(spec.seed)?;
        Some(Instance::new(p, prior)?)
    };
    let jobs: Vec<(usize, usize)> = (0..spec.snr_db.len())
        .flat_map(|s| (0..spec.trials).map(move |t| (s, t)))
        .collect();
    let chunks: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let snr = spec.snr_db[s];
            let noise_seed = derive_seed(spec.seed, STREAM_NOISE, t as u64);
            match &shared {
                Some(inst) => run_trial(inst, spec, snr, t, noise_seed),
                None => {
                    let built = spec
                        .problem
                        .build(derive_seed(spec.seed, STREAM_PROBLEM, t as u64))
                        .and_then(|(p, prior)| Instance::new(p, prior));
                    match built {
                        Ok(inst) => run_trial(&inst, spec, snr, t, noise_seed),
                        Err(e) => spec
                            .methods
                            .iter()
                            .map(|&method| TrialRecord {
                                method,
                                snr_db: snr,
                                trial: t,
                                seed: noise_seed,
                                nmse: None,
                                runtime_ns: 0,
                                branch: None,
                                rho: None,
                                error: Some(e.to_string()),
                                input_digest: String::new(),
                            })
                            .collect(),
                    }
                }
            }
        })
        .collect();
    let records: Vec<TrialRecord> = chunks.into_iter().flatten().collect();
    let (aggregates, failed_methods) = aggregate_records(spec, &records);
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        label: spec.problem.label(),
        config_hash: config_hash(spec)?,
        spec: spec.clone(),
        aggregates,
        failed_methods,
        records,
    })
}

/// Sweep over random `m x m` operators of rank `r`, a fresh draw per trial.
pub fn run_rank_deficient_sweep(
    m: usize,
    r: usize,
    dist: SignalDist,
    snr_db: &[f64],
    trials: usize,
    methods: &[MethodId],
    seed: u64,
) -> Result<SweepReport> {
    let spec = SweepSpec::new(
        ProblemSpec::RankDeficient { m, r, dist },
        snr_db.to_vec(),
        trials,
        methods.to_vec(),
        seed,
    );
    run_sweep(&spec)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub const RECORDS_CSV_HEADER: &str = "method,snr_db,seed,nmse,runtime_ns,branch";
pub const PLOT_CSV_HEADER: &str = "snr_db,method,nmse_db";

/// Per-trial CSV.
pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from(RECORDS_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method,
            r.snr_db,
            r.seed,
            fmt_opt(r.nmse),
            r.runtime_ns,
            r.branch.as_deref().unwrap_or("")
        );
    }
    s
}

/// Plot data, one row per (SNR, method). Values above `cap_db` are clipped
/// here only; the report keeps the raw values.
pub fn plot_csv(report: &SweepReport, cap_db: Option<f64>) -> String {
    let mut s = String::from(PLOT_CSV_HEADER);
    s.push('\n');
    for &snr in &report.spec.snr_db {
        for &m in &report.spec.methods {
            let v = report
                .aggregate(m, snr)
                .and_then(|a| a.nmse_db)
                .map(|v| cap_db.map_or(v, |c| v.min(c)));
            let _ = writeln!(s, "{snr},{m},{}", fmt_opt(v));
        }
    }
    s
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// `10 log10(peak^2 / mean((x_hat - x0)^2))` with `peak = max(x0)`.
pub fn psnr(x_hat: &DVector<f64>, x0: &DVector<f64>) -> f64 {
    let peak = x0.max();
    let mse = (x_hat - x0).norm_squared() / x0.len() as f64;
    10.0 * (peak * peak / mse).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomoSpec {
    pub n_side: usize,
    pub n_rays: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub methods: Vec<MethodId>,
    pub seed: u64,
    pub c: f64,
}

impl TomoSpec {
    pub fn new(
        n_side: usize,
        snr_db: f64,
        trials: usize,
        methods: Vec<MethodId>,
        seed: u64,
    ) -> Self {
        TomoSpec {
            n_side,
            n_rays: n_side * n_side,
            snr_db,
            trials,
            methods,
            seed,
            c: CopraConfig::default().c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrRecord {
    pub method: MethodId,
    pub trial: usize,
    pub seed: u64,
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrSummary {
    pub method: MethodId,
    /// Mean of the per-trial PSNR values in dB.
    pub mean_psnr: Option<f64>,
    pub trials: usize,
    pub failures: usize,
}

/// Images from the first trial, column-major as the operator orders pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomoImages {
    pub n_side: usize,
    pub original: Vec<f64>,
    /// Back-projection `A^T y` of the noisy ray sums.
    pub received: Vec<f64>,
    pub restored: BTreeMap<MethodId, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomoReport {
    pub schema_version: u32,
    pub spec: TomoSpec,
    pub config_hash: String,
    pub summaries: Vec<PsnrSummary>,
    pub records: Vec<PsnrRecord>,
    pub images: Option<TomoImages>,
}

impl TomoReport {
    pub fn mean_psnr(&self, method: MethodId) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.method == method)
            .and_then(|s| s.mean_psnr)
    }
}

/// Restores the phantom from noisy ray sums; the ray set is redrawn each trial.
pub fn run_tomo_restoration(spec: &TomoSpec) -> Result<TomoReport> {
    if spec.trials == 0 || spec.methods.is_empty() {
        return Err(Error::InvalidConfig(
            "tomography needs trials >= 1 and a method".into(),
        ));
    }
    CopraConfig {
        c: spec.c,
        ..CopraConfig::default()
    }
    .validate()?;
    let sweep = SweepSpec {
        problem: ProblemSpec::Tomo {
            n_side: spec.n_side,
            n_rays: spec.n_rays,
        },
        snr_db: vec![spec.snr_db],
        trials: 1,
        methods: spec.methods.clone(),
        seed: spec.seed,
        c: spec.c,
        timing: false,
    };
    type TrialOut = (Vec<PsnrRecord>, Option<TomoImages>);
    let per_trial: Vec<TrialOut> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let noise_seed = derive_seed(spec.seed, STREAM_NOISE, t as u64);
            let ray_seed = derive_seed(spec.seed, STREAM_PROBLEM, t as u64);
            let fail = |e: Error| {
                spec.methods
                    .iter()
                    .map(|&method| PsnrRecord {
                        method,
                        trial: t,
                        seed: noise_seed,
                        psnr: None,
                        error: Some(e.to_string()),
                    })
                    .collect::<Vec<_>>()
            };
            let inst = match sweep
                .problem
                .build(ray_seed)
                .and_then(|(p, prior)| Instance::new(p, prior))
            {
                Ok(i) => i,
                Err(e) => return (fail(e), None),
            };
            let obs = match problems::observe_clean(
                &inst.clean,
                inst.problem.cols(),
                spec.snr_db,
                noise_seed,
            ) {
                Ok(o) => o,
                Err(e) => return (fail(e), None),
            };
            let cfg = sweep.copra_config();
            let mut restored = BTreeMap::new();
            let records = spec
                .methods
                .iter()
                .map(|&method| {
                    let out = run_method(method, &inst, &obs.y, obs.sigma_z2, &cfg);
                    let (psnr_v, error) = match out {
                        Ok(o) => {
                            let v = psnr(&o.x, &inst.problem.x0);
                            if t == 0 {
                                restored.insert(method, o.x.iter().copied().collect());
                            }
                            if v.is_finite() {
                                (Some(v), None)
                            } else {
                                (None, Some("non-finite PSNR".to_string()))
                            }
                        }
                        Err(e) => (None, Some(e.to_string())),
                    };
                    PsnrRecord {
                        method,
                        trial: t,
                        seed: noise_seed,
                        psnr: psnr_v,
                        error,
                    }
                })
                .collect();
            let images = (t == 0).then(|| TomoImages {
                n_side: spec.n_side,
                original: inst.problem.x0.iter().copied().collect(),
                received: (inst.problem.a.transpose() * &obs.y)
                    .iter()
                    .copied()
                    .collect(),
                restored,
            });
            (records, images)
        })
        .collect();
    let mut records = Vec::new();
    let mut images = None;
    for (r, im) in per_trial {
        records.extend(r);
        if im.is_some() {
            images = im;
        }
    }
    let summaries = spec
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<&PsnrRecord> = records.iter().filter(|r| r.method == method).collect();
            let ok: Vec<f64> = rows.iter().filter_map(|r| r.psnr).collect();
            PsnrSummary {
                method,
                mean_psnr: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                trials: rows.len(),
                failures: rows.len() - ok.len(),
            }
        })
        .collect();
    Ok(TomoReport {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash(spec)?,
        spec: spec.clone(),
        summaries,
        records,
        images,
    })
}

pub const PSNR_CSV_HEADER: &str = "method,mean_psnr_db,trials,failures";

pub fn psnr_csv(report: &TomoReport) -> String {
    let mut s = String::from(PSNR_CSV_HEADER);
    s.push('\n');
    for r in &report.summaries {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.method,
            fmt_opt(r.mean_psnr),
            r.trials,
            r.failures
        );
    }
    s
}

/// 8-bit binary PGM of a column-major `n_side x n_side` image, written row by
/// row. Values are mapped linearly from `[lo, hi]` and clamped.
pub fn pgm_bytes(pixels: &[f64], n_side: usize, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{n_side} {n_side}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for r in 0..n_side {
        for c in 0..n_side {
            let v = pixels.get(c * n_side + r).copied().unwrap_or(0.0);
            let g = ((v - lo) / span * 255.0).round();
            out.push(if g.is_nan() {
                0
            } else {
                g.clamp(0.0, 255.0) as u8
            });
        }
    }
    out
}

/// Writes `original.pgm`, `received.pgm` and one `restored_<method>.pgm`.
pub fn write_tomo_images(dir: &Path, images: &TomoImages) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let n = images.n_side;
    let lo = images
        .original
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = images
        .original
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let mut f = std::fs::File::create(dir.join(&name))?;
        f.write_all(&bytes)?;
        written.push(name);
        Ok(())
    };
    put(
        "original.pgm".into(),
        pgm_bytes(&images.original, n, lo, hi),
    )?;
    let rlo = images
        .received
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let rhi = images
        .received
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    put(
        "received.pgm".into(),
        pgm_bytes(&images.received, n, rlo, rhi),
    )?;
    for (m, x) in &images.restored {
        put(format!("restored_{m}.pgm"), pgm_bytes(x, n, lo, hi))?;
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundApproxRow {
    pub snr_db: f64,
    pub sigma_z2: f64,
    /// `n sigma_z^2 / ||x0||^2`.
    pub rho: f64,
    pub delta_exact: f64,
    pub delta_approx: f64,
    /// `10 log10(((delta_exact - delta_approx) / delta_exact)^2)`.
    pub nmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundApproxReport {
    pub problem: String,
    pub c: f64,
    pub n1: usize,
    pub rows: Vec<BoundApproxRow>,
    /// Rank correlation between SNR and the error.
    pub spearman: f64,
}

/// Compares the prior-aware perturbation bound with its prior-free form at
/// the scalar MSE-optimal regularizer. The prior is `x0 x0^T`; nothing here
/// is random.
pub fn run_bound_approx_experiment(
    problem: &IllPosedProblem,
    snr_db: &[f64],
    c: f64,
) -> Result<BoundApproxReport> {
    if snr_db.is_empty() {
        return Err(Error::InvalidConfig("SNR list must be non-empty".into()));
    }
    let svd = spectral::compute_svd(&problem.a)?;
    let part = spectral::partition(&svd, c)?;
    let n = problem.cols();
    let prior = Prior::Deterministic(problem.x0.clone());
    let energy = problem.clean_data().norm_squared();
    let rows = snr_db
        .iter()
        .map(|&snr| {
            let sigma_z2 = problems::noise_variance(energy, n, snr);
            let rho = diagnostics::suboptimal_rho(&prior, sigma_z2, n)?;
            let e = diagnostics::delta_bound_exact(rho, &svd, &part, &prior, sigma_z2)?;
            let a = diagnostics::delta_bound_approx(rho, &svd, &part)?;
            Ok(BoundApproxRow {
                snr_db: snr,
                sigma_z2,
                rho,
                delta_exact: e,
                delta_approx: a,
                nmse_db: 10.0 * ((e - a) / e).powi(2).log10(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.nmse_db).collect();
    Ok(BoundApproxReport {
        problem: problem.name.clone(),
        c,
        n1: part.n1,
        spearman: spearman(&xs, &ys),
        rows,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 for constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: MethodId,
    pub mean_ns: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub label: String,
    pub timings: Vec<MethodTiming>,
    /// Mean time of an empty call through the same timing path.
    pub overhead_ns: f64,
}

impl RuntimeReport {
    pub fn mean_ns(&self, method: MethodId) -> Option<f64> {
        self.timings
            .iter()
            .find(|t| t.method == method)
            .map(|t| t.mean_ns)
    }
}

/// Mean wall time per method for parameter choice plus the RLS solve, on one
/// thread, after one untimed warm-up pass. The shared SVD is excluded.
pub fn measure_runtime(spec: &SweepSpec) -> Result<RuntimeReport> {
    spec.validate()?;
    let cfg = spec.copra_config();
    let (p, prior) = spec.problem.build(spec.seed)?;
    let inst = Instance::new(p, prior)?;
    let mut totals = vec![0u128; spec.methods.len()];
    let mut count = 0usize;
    let mut overhead = 0u128;
    for (s, &snr) in spec.snr_db.iter().enumerate() {
        for t in 0..spec.trials {
            let seed = derive_seed(spec.seed, STREAM_NOISE, t as u64);
            let obs = problems::observe_clean(&inst.clean, inst.problem.cols(), snr, seed)?;
            if s == 0 && t == 0 {
                for &m in &spec.methods {
                    let _ = run_method(m, &inst, &obs.y, obs.sigma_z2, &cfg);
                }
            }
            for (k, &m) in spec.methods.iter().enumerate() {
                let start = Instant::now();
                let out = run_method(m, &inst, &obs.y, obs.sigma_z2, &cfg);
                totals[k] += start.elapsed().as_nanos();
                std::hint::black_box(&out);
            }
            let start = Instant::now();
            std::hint::black_box(&obs.y);
            overhead += start.elapsed().as_nanos();
            count += 1;
        }
    }
    Ok(RuntimeReport {
        label: spec.problem.label(),
        timings: spec
            .methods
            .iter()
            .zip(&totals)
            .map(|(&method, &t)| MethodTiming {
                method,
                mean_ns: t as f64 / count as f64,
                trials: count,
            })
            .collect(),
        overhead_ns: overhead as f64 / count as f64,
    })
}

pub const RUNTIME_CSV_HEADER: &str = "method,mean_runtime_ns,trials";

pub fn runtime_csv(report: &RuntimeReport) -> String {
    let mut s = String::from(RUNTIME_CSV_HEADER);
    s.push('\n');
    for t in &report.timings {
        let _ = writeln!(s, "{},{},{}", t.method, t.mean_ns, t.trials);
    }
    let _ = writeln!(
        s,
        "noop,{},{}",
        report.overhead_ns,
        report.timings.first().map_or(0, |t| t.trials)
    );
    s
}

/// Run description written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new<T: Serialize>(
        command: &str,
        seed: u64,
        config: &T,
        outputs: Vec<String>,
    ) -> Result<Self> {
        Ok(Manifest {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            outputs,
        })
    }
}
