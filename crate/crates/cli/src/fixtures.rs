//! Shared experiment fixtures: the tuned landscapes, networks, and
//! optimizer settings the verification suite runs against. Centralized so
//! the check suite, the negative-control tests, and the acceptance gate
//! all exercise exactly the same setups.

use mona::landscape::{DoubleWellLandscape, QuadraticLandscape};
use mona::optim::{AdamConfig, GammaRule, OptimizerConfig, OptimizerKind};
use mona::rng::stream_rng;
use mona::toynet::{Activation, MlpSpec};
use mona::Mat;
use rand::Rng;

use crate::config::{ExperimentConfig, OptimizerBlock, OptimizerOverrides, TaskConfig};

/// MONA/Muon configuration for landscape experiments: no decay (the
/// convergence statement assumes λ = 0), RMS-matched γ.
pub fn landscape_cfg(lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        learning_rate: lr,
        weight_decay: 0.0,
        gamma_rule: GammaRule::MuonRmsMatch,
        ..OptimizerConfig::default()
    }
}

// ---------------------------------------------------------------- theorem

/// Convergence-bound run: ill-conditioned diagonal quadratic, long
/// transit (the path η·γ·K stays well short of ‖W₀ − W*‖ so gradients
/// stay informative at every step).
pub struct TheoremFixture {
    pub landscape: QuadraticLandscape<f64>,
    pub init: Mat,
    /// Largest Hessian eigenvalue.
    pub l: f64,
    pub eta: f64,
    pub steps: u64,
    pub noise_sigma: f64,
    pub clip_bound: f64,
    pub seed: u64,
    pub burn_in: usize,
    /// f* of the quadratic (its minimum value).
    pub f_star: f64,
}

pub fn theorem_fixture() -> TheoremFixture {
    TheoremFixture {
        landscape: QuadraticLandscape::diagonal(Mat::zeros(2, 1), vec![4.0, 1.0])
            .expect("valid eigs"),
        init: Mat::from_vec(2, 1, vec![30.0, 30.0]).expect("shape"),
        l: 4.0,
        eta: 0.004,
        steps: 10_000,
        noise_sigma: 0.1,
        clip_bound: 150.0,
        seed: 1234,
        burn_in: 100,
        f_star: 0.0,
    }
}

/// Rate-probe pair: short horizon at η, 4× horizon at η/2 (η ∝ K^(−1/2)),
/// started close enough to reach stationarity in both runs.
pub struct RateProbeFixture {
    pub landscape: QuadraticLandscape<f64>,
    pub init: Mat,
    pub eta_k: f64,
    pub steps_k: u64,
    pub eta_4k: f64,
    pub steps_4k: u64,
    pub noise_sigma: f64,
    pub clip_bound: f64,
    pub seed: u64,
}

pub fn rate_probe_fixture() -> RateProbeFixture {
    let s = std::f64::consts::SQRT_2;
    RateProbeFixture {
        landscape: QuadraticLandscape::diagonal(Mat::zeros(2, 1), vec![4.0, 1.0])
            .expect("valid eigs"),
        init: Mat::from_vec(2, 1, vec![s, s]).expect("shape"),
        eta_k: 0.01,
        steps_k: 2500,
        eta_4k: 0.005,
        steps_4k: 10_000,
        noise_sigma: 0.1,
        clip_bound: 50.0,
        seed: 77,
    }
}

// ----------------------------------------------------- acceleration stat

/// Sharp-vs-flat acceleration statistic: eigenvalues (100, 1), started
/// off-center in both directions so each transits in turn.
pub struct AccelStatFixture {
    pub landscape: QuadraticLandscape<f64>,
    pub init: Mat,
    pub lr: f64,
    pub steps: u64,
    pub noise_sigma: f64,
    pub clip_bound: f64,
    pub seeds: Vec<u64>,
}

pub fn accel_stat_fixture() -> AccelStatFixture {
    AccelStatFixture {
        landscape: QuadraticLandscape::diagonal(Mat::zeros(2, 1), vec![100.0, 1.0])
            .expect("valid eigs"),
        init: Mat::from_vec(2, 1, vec![3.0, 3.0]).expect("shape"),
        lr: 0.02,
        steps: 2000,
        noise_sigma: 0.1,
        clip_bound: 600.0,
        seeds: (0..10).collect(),
    }
}

// ----------------------------------------------------------------- escape

/// Double-well escape fixture. The wells overlap enough that the basin
/// boundary sits a short walk from the sharp center, and the curvature
/// contrast (100 vs 3.2) drives the acceleration term only inside the
/// sharp well.
pub struct EscapeFixture {
    pub well: DoubleWellLandscape<f64>,
    pub lr: f64,
    pub noise_sigma: f64,
    pub clip_bound: f64,
    pub steps: u64,
    pub seeds: Vec<u64>,
}

impl EscapeFixture {
    pub fn sharp_start(&self) -> Mat {
        self.well.sharp_center().clone()
    }

    pub fn flat_start(&self) -> Mat {
        self.well.flat_center().clone()
    }

    pub fn optimizer_cfg(&self) -> OptimizerConfig {
        landscape_cfg(self.lr)
    }
}

pub fn escape_fixture() -> EscapeFixture {
    let sharp = Mat::zeros(2, 1);
    let flat = Mat::from_vec(2, 1, vec![1.5, 0.0]).expect("shape");
    EscapeFixture {
        well: DoubleWellLandscape::new(sharp, flat, 1.0, 0.8, 0.05, 0.6).expect("valid well"),
        lr: 0.3,
        noise_sigma: 1.0,
        clip_bound: 10.0,
        steps: 1500,
        seeds: (0..50).collect(),
    }
}

// --------------------------------------------------------------- ordering

/// One optimizer entry of the 4-way ordering comparison.
pub struct OrderingEntry {
    pub name: &'static str,
    pub kind: OptimizerKind,
    pub cfg: OptimizerConfig,
}

pub struct OrderingFixture {
    pub teacher: MlpSpec,
    pub student: MlpSpec,
    pub batch_size: usize,
    pub data_seed: u64,
    pub steps: u64,
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    pub entries: Vec<OrderingEntry>,
}

pub fn ordering_fixture() -> OrderingFixture {
    let muon_family = |accel_alpha: f64| OptimizerConfig {
        learning_rate: 0.005,
        weight_decay: 0.0,
        accel_alpha,
        ..OptimizerConfig::default()
    };
    let adam_family = |accel_alpha: f64| OptimizerConfig {
        learning_rate: 0.002,
        accel_alpha,
        adam: AdamConfig { weight_decay: 0.0, ..AdamConfig::default() },
        ..OptimizerConfig::default()
    };
    OrderingFixture {
        teacher: MlpSpec {
            layer_dims: vec![4, 16, 16, 4],
            activation: Activation::Tanh,
            init_seed: 2024,
            init_scale: 0.8,
        },
        student: MlpSpec {
            layer_dims: vec![4, 16, 16, 4],
            activation: Activation::Tanh,
            init_seed: 4096,
            init_scale: 0.5,
        },
        batch_size: 16,
        data_seed: 77,
        steps: 5000,
        eval_every: 500,
        seeds: (0..10).collect(),
        entries: vec![
            OrderingEntry { name: "mona", kind: OptimizerKind::Mona, cfg: muon_family(-50.0) },
            OrderingEntry { name: "muon", kind: OptimizerKind::Muon, cfg: muon_family(0.0) },
            OrderingEntry {
                name: "adamw_acc",
                kind: OptimizerKind::AdamWAcc,
                cfg: adam_family(-50.0),
            },
            OrderingEntry { name: "adamw", kind: OptimizerKind::AdamW, cfg: adam_family(0.0) },
        ],
    }
}

// ------------------------------------------------------- spectrum sampler

/// A random test matrix with a controlled spectrum: rank r ≤ min(m, n, 6),
/// singular values drawn uniform in [1, 2] then ℓ₂-normalized, which pins
/// every normalized singular value into [1/(2√6), 1] ⊂ [0.2, 1]. Returns
/// the matrix and its rank.
pub fn spectrum_matrix<R: Rng>(rng: &mut R, max_dim: usize) -> (Mat, usize) {
    use mona::svd::svd_oracle;
    let m = rng.gen_range(1..=max_dim);
    let n = rng.gen_range(1..=max_dim);
    let r = rng.gen_range(1..=m.min(n).min(6));
    let mut sv: Vec<f64> = (0..r).map(|_| rng.gen_range(1.0..=2.0)).collect();
    let norm = sv.iter().map(|x| x * x).sum::<f64>().sqrt();
    for s in &mut sv {
        *s /= norm;
    }
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    // Orthonormal factors from the SVD of Gaussian matrices.
    let u = svd_oracle(&Mat::standard_normal(m, r, rng)).expect("svd").u;
    let v = svd_oracle(&Mat::standard_normal(n, r, rng)).expect("svd").u;
    let mut core = Mat::zeros(r, r);
    for (i, &s) in sv.iter().enumerate() {
        core.set(i, i, s);
    }
    let mat = u.matmul(&core).expect("shape").matmul(&v.transpose()).expect("shape");
    (mat, r)
}

/// Deterministic RNG for the spectrum sampler (one stream per purpose).
pub fn spectrum_rng(seed: u64) -> impl Rng {
    stream_rng(seed, 0xBA2D)
}

// ------------------------------------------------------------ determinism

/// Small end-to-end experiment used by the determinism criterion and the
/// CLI tests: two optimizers, two seeds, a few hundred steps.
pub fn determinism_config() -> ExperimentConfig {
    ExperimentConfig {
        experiment: "determinism-probe".into(),
        task: TaskConfig::TeacherStudent {
            teacher: MlpSpec {
                layer_dims: vec![4, 8, 4],
                activation: Activation::Tanh,
                init_seed: 7,
                init_scale: 0.8,
            },
            student: MlpSpec {
                layer_dims: vec![4, 8, 4],
                activation: Activation::Tanh,
                init_seed: 11,
                init_scale: 0.5,
            },
            batch_size: 8,
            data_seed: 3,
        },
        optimizers: vec![
            OptimizerBlock {
                name: "mona".into(),
                kind: OptimizerKind::Mona,
                settings: OptimizerOverrides {
                    weight_decay: Some(0.0),
                    ..OptimizerOverrides::default()
                },
            },
            OptimizerBlock {
                name: "adamw".into(),
                kind: OptimizerKind::AdamW,
                settings: OptimizerOverrides {
                    learning_rate: Some(0.01),
                    ..OptimizerOverrides::default()
                },
            },
        ],
        steps: 200,
        seeds: vec![0, 1],
        eval_every: 50,
        output_dir: std::path::PathBuf::from("runs"),
        include_timing: false,
    }
}
