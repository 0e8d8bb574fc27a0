//! The subcommands, as library functions returning their JSON summaries.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hac_core::dataset::{generate_random_dataset, Dataset};
use hac_core::dynamics::{fit_dynamics, DynamicsModel, ExactDynamics};
use hac_core::env::{EnvKind, Environment, LqrEnv};
use hac_core::hac::hac_train;
use hac_core::mlp::{MlpParams, DEFAULT_HIDDEN};
use hac_core::mve::{hac_critic_samples, mve_critic_samples, mve_train, CriticSamples, MlpCritic};
use hac_core::pmp::annotated_rollout;
use hac_core::policy::Policy;
use hac_core::riccati::solve_riccati;
use hac_core::tensor::norm2;
use hac_core::train::{
    evaluate_policy, mean_std, run_episode, write_curve_csv, CurvePoint, DataSource, Mode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// A directory filled under a temporary name and renamed into place at the end.
pub struct OutputDir {
    tmp: PathBuf,
    target: PathBuf,
}

impl OutputDir {
    pub fn create(target: &Path) -> CliResult<Self> {
        if target.exists() && fs::read_dir(target)?.next().is_some() {
            return Err(CliError::input(format!(
                "output directory {} exists and is not empty",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| CliError::input("output path has no final component"))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> CliResult<PathBuf> {
        let p = self.tmp.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    pub fn commit(self) -> CliResult<PathBuf> {
        if self.target.exists() {
            fs::remove_dir(&self.target)?;
        }
        fs::rename(&self.tmp, &self.target)?;
        Ok(self.target.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        // Only still present when the run failed before `commit`.
        let _ = fs::remove_dir_all(&self.tmp);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> CliResult<()> {
    write_curve_csv(BufWriter::new(fs::File::create(path)?), curve)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub env: EnvKind,
    pub size: usize,
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub path: PathBuf,
}

pub fn gen_dataset(
    env: &dyn Environment,
    kind: EnvKind,
    size: usize,
    seed: u64,
    unbounded_range: f64,
    out: &Path,
) -> CliResult<DatasetSummary> {
    let data = generate_random_dataset(env, size, seed, unbounded_range)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    data.save(out)?;
    Ok(DatasetSummary {
        env: kind,
        size,
        seed,
        state_dim: data.state_dim(),
        action_dim: data.action_dim(),
        path: out.to_path_buf(),
    })
}

/// Environment, dataset and pre-trained model shared by every seed of a run.
pub struct Prepared {
    pub env: Box<dyn Environment>,
    pub data: Option<Dataset>,
    pub model: Option<DynamicsModel>,
}

/// Builds the environment; offline runs also load or generate the dataset and
/// fit the dynamics model once.
pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let (data, model) = match cfg.train.mode {
        Mode::Offline => {
            let data = cfg.dataset(env.as_ref())?;
            let spec = env.spec();
            if data.state_dim() != spec.state_dim || data.action_dim() != spec.action_dim {
                return Err(CliError::input("dataset dimensions do not match the environment"));
            }
            let (model, _) =
                fit_dynamics(data.transitions(), spec.state_dim, spec.action_dim, &cfg.train.dynamics)?;
            (Some(data), Some(model))
        }
        Mode::Online => {
            let data = match &cfg.dataset {
                Some(_) => Some(cfg.dataset(env.as_ref())?),
                None => None,
            };
            (data, None)
        }
    };
    Ok(Prepared { env, data, model })
}

/// One trained seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub curve: Vec<CurvePoint>,
    /// Actor loss of every gradient update.
    pub update_losses: Vec<f64>,
    pub policy: Policy,
    pub model: Option<DynamicsModel>,
    pub critics: Vec<MlpCritic>,
}

pub fn run_seed(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    algorithm: Algorithm,
    seed: u64,
) -> CliResult<SeedRun> {
    let mut train = cfg.train.clone();
    train.seed = seed;
    let source = match &prep.data {
        Some(d) => DataSource::Offline(d),
        None => DataSource::Online,
    };
    let env = prep.env.as_ref();
    Ok(match algorithm {
        Algorithm::Hac => {
            let out = hac_train(env, &train, &cfg.hac, source, prep.model.clone())?;
            SeedRun {
                seed,
                algorithm,
                curve: out.curve,
                update_losses: out.update_losses,
                policy: out.policy,
                model: out.model,
                critics: Vec::new(),
            }
        }
        Algorithm::Mve => {
            let out = mve_train(env, &train, &cfg.mve, source, prep.model.clone())?;
            SeedRun {
                seed,
                algorithm,
                curve: out.outcome.curve,
                update_losses: out.outcome.update_losses,
                policy: out.outcome.policy,
                model: out.outcome.model,
                critics: out.critics,
            }
        }
    })
}

/// Per-round mean and spread of `mean_return` across seeds.
pub fn aggregate_curves(curves: &[Vec<CurvePoint>]) -> Vec<CurvePoint> {
    let rounds = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..rounds)
        .map(|r| {
            let returns: Vec<f64> = curves.iter().map(|c| c[r].mean_return).collect();
            let losses: Vec<f64> = curves.iter().map(|c| c[r].actor_loss).collect();
            let (mean, std) = mean_std(&returns);
            CurvePoint {
                round: curves[0][r].round,
                env_steps: curves[0][r].env_steps,
                mean_return: mean,
                std_return: std,
                actor_loss: mean_std(&losses).0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub per_seed_final: Vec<f64>,
    pub wall_seconds: f64,
}

/// Trains every configured seed; writes per-seed curves and policies, the
/// aggregate curve, the shared model and `summary.json`.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> CliResult<TrainSummary> {
    let start = Instant::now();
    let prep = prepare(cfg)?;
    let dir = OutputDir::create(out)?;
    if let Some(m) = &prep.model {
        m.save(dir.path("model.bin")?)?;
    }
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, &prep, cfg.algorithm, seed)?;
        write_curve(&dir.path(format!("seed_{seed}/curve.csv"))?, &run.curve)?;
        let mut wtr = csv::Writer::from_path(dir.path(format!("seed_{seed}/updates.csv"))?)?;
        wtr.write_record(["update", "actor_loss"])?;
        for (i, loss) in run.update_losses.iter().enumerate() {
            wtr.write_record([i.to_string(), loss.to_string()])?;
        }
        wtr.flush()?;
        run.policy.save(dir.path(format!("seed_{seed}/policy.bin"))?)?;
        if prep.model.is_none() {
            if let Some(m) = &run.model {
                m.save(dir.path(format!("seed_{seed}/model.bin"))?)?;
            }
        }
        runs.push(run);
    }
    let curves: Vec<Vec<CurvePoint>> = runs.iter().map(|r| r.curve.clone()).collect();
    write_curve(&dir.path("curve.csv")?, &aggregate_curves(&curves))?;
    fs::write(dir.path("config.toml")?, cfg.to_toml()?)?;
    let per_seed_final: Vec<f64> = runs
        .iter()
        .map(|r| r.curve.last().map_or(f64::NAN, |p| p.mean_return))
        .collect();
    let (final_mean, final_std) = mean_std(&per_seed_final);
    let summary = TrainSummary {
        env: cfg.env.name,
        algorithm: cfg.algorithm,
        seeds: cfg.seeds.clone(),
        final_mean,
        final_std,
        per_seed_final,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.path("summary.json")?, &summary)?;
    dir.commit()?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
}

/// Evaluates a saved policy; optionally dumps an annotated imagined rollout
/// through `model` (or the exact dynamics) from the first evaluation reset.
pub fn eval(
    env: &dyn Environment,
    policy: &Policy,
    episodes: usize,
    seed: u64,
    rollout_dump: Option<(&Path, Option<&DynamicsModel>, usize, f64)>,
) -> CliResult<EvalSummary> {
    let spec = env.spec();
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(CliError::input("policy dimensions do not match the environment"));
    }
    let stats = evaluate_policy(env, policy, episodes, seed)?;
    if let Some((path, model, k, gamma)) = rollout_dump {
        let s0 = env.reset(hac_core::train::episode_seeds(seed, 1)[0]);
        let opts = hac_core::pmp::PmpOptions::new(gamma);
        let rollout = match model {
            Some(m) => annotated_rollout(policy, m, env, &s0, k, &opts)?,
            None => annotated_rollout(policy, &ExactDynamics::new(env), env, &s0, k, &opts)?,
        };
        rollout.write_csv(BufWriter::new(fs::File::create(path)?))?;
    }
    Ok(EvalSummary {
        episodes,
        seed,
        mean_return: stats.mean,
        std_return: stats.std,
        returns: stats.returns,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticErrorSummary {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub mean_abs_err_hac: f64,
    pub mean_abs_err_mve: f64,
    pub per_seed_hac: Vec<f64>,
    pub per_seed_mve: Vec<f64>,
}

/// Normalized scatter rows `(truth, estimate, method)`.
pub fn scatter_rows(samples: &CriticSamples, method: &str) -> Vec<(f64, f64, String)> {
    let (zt, ze) = samples.normalized();
    zt.into_iter()
        .zip(ze)
        .map(|(t, e)| (t, e, method.to_string()))
        .collect()
}

/// Trains HAC and MVE on LQR for every seed and compares each against the
/// Riccati ground truth along `episodes` test episodes of its own policy.
pub fn critic_error(cfg: &ExperimentConfig, episodes: usize, out: &Path) -> CliResult<CriticErrorSummary> {
    if cfg.env.name != EnvKind::Lqr {
        return Err(CliError::input("critic error needs the LQR ground truth"));
    }
    if episodes == 0 {
        return Err(CliError::input("need at least one test episode"));
    }
    let prep = prepare(cfg)?;
    let dir = OutputDir::create(out)?;
    let lqr = lqr_of(cfg)?;
    let sol = solve_riccati(&lqr.params, lqr.spec().horizon)?;
    let test_seed = cfg.train.eval_seed;
    let mut wtr = csv::Writer::from_path(dir.path("scatter.csv")?)?;
    wtr.write_record(["truth_normalized", "estimate_normalized", "method"])?;
    let (mut per_hac, mut per_mve) = (Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let hac = run_seed(cfg, &prep, Algorithm::Hac, seed)?;
        let mve = run_seed(cfg, &prep, Algorithm::Mve, seed)?;
        let model = hac.model.as_ref().ok_or_else(|| CliError::input("no dynamics model"))?;
        let opts = cfg.hac.pmp_options(cfg.train.gamma_for(prep.env.as_ref()));
        let hs = hac_critic_samples(&lqr, &sol, &hac.policy, model, episodes, test_seed, &opts)?;
        let ms = mve_critic_samples(&lqr, &sol, &mve.policy, &mve.critics[0], episodes, test_seed)?;
        for (samples, name) in [(&hs, "hac"), (&ms, "mve")] {
            for (t, e, m) in scatter_rows(samples, name) {
                wtr.write_record([t.to_string(), e.to_string(), m])?;
            }
        }
        per_hac.push(hs.mean_abs_error()?);
        per_mve.push(ms.mean_abs_error()?);
    }
    wtr.flush()?;
    drop(wtr);
    let summary = CriticErrorSummary {
        episodes,
        seeds: cfg.seeds.clone(),
        mean_abs_err_hac: mean_std(&per_hac).0,
        mean_abs_err_mve: mean_std(&per_mve).0,
        per_seed_hac: per_hac,
        per_seed_mve: per_mve,
    };
    write_json(&dir.path("summary.json")?, &summary)?;
    dir.commit()?;
    Ok(summary)
}

/// The configured environment as a concrete LQR instance.
fn lqr_of(cfg: &ExperimentConfig) -> CliResult<LqrEnv> {
    let mut params = hac_core::env::LqrParams::benchmark();
    if let Some(m) = &cfg.env.initial_mean {
        params.s0_mean = m.clone();
    }
    if let Some(std) = cfg.env.initial_noise_std {
        params.s0_noise_std = std;
    }
    Ok(LqrEnv::new(params, cfg.env.horizon.unwrap_or(10))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionSummary {
    pub method: Algorithm,
    pub condition: String,
    pub mean_terminal_norm: f64,
    pub max_abs_dim0: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessSummary {
    pub train_init: Vec<f64>,
    pub test_init: Vec<f64>,
    pub seeds: Vec<u64>,
    pub conditions: Vec<ConditionSummary>,
}

impl RobustnessSummary {
    pub fn get(&self, method: Algorithm, condition: &str) -> Option<&ConditionSummary> {
        self.conditions
            .iter()
            .find(|c| c.method == method && c.condition == condition)
    }
}

/// `(seed, t, s_t[0])`.
pub type TrajectoryRow = (u64, usize, f64);

/// One deterministic test episode per run from `env.reset(reset_seed)`.
/// Also returns the dimension-0 trajectories as `(seed, t, s_t[0])` rows.
pub fn test_condition(
    method: Algorithm,
    condition: &str,
    env: &dyn Environment,
    runs: &[SeedRun],
    reset_seed: u64,
) -> CliResult<(ConditionSummary, Vec<TrajectoryRow>)> {
    let (mut norms, mut returns, mut max_dim0) = (Vec::new(), Vec::new(), 0.0f64);
    let mut rows = Vec::new();
    for run in runs {
        let ep = run_episode(env, &run.policy, env.reset(reset_seed))?;
        for (t, s) in ep.states.iter().enumerate() {
            rows.push((run.seed, t, s[0]));
            max_dim0 = max_dim0.max(s[0].abs());
        }
        norms.push(norm2(ep.states.last().expect("non-empty")));
        returns.push(ep.total_return());
    }
    let summary = ConditionSummary {
        method,
        condition: condition.to_string(),
        mean_terminal_norm: mean_std(&norms).0,
        max_abs_dim0: max_dim0,
        mean_return: mean_std(&returns).0,
    };
    Ok((summary, rows))
}

/// The reset seed of the first evaluation episode, used for robustness tests.
pub fn robustness_reset_seed(eval_seed: u64) -> u64 {
    hac_core::train::episode_seeds(eval_seed, 1)[0]
}

/// Trains both methods from the configured initial state, then rolls one
/// deterministic test episode per seed from the training and the shifted
/// initial state.
pub fn robustness(cfg: &ExperimentConfig, test_init: &[f64], out: &Path) -> CliResult<RobustnessSummary> {
    if cfg.seeds.is_empty() {
        return Err(CliError::input("at least one seed is required"));
    }
    let prep = prepare(cfg)?;
    let train_init = prep.env.initial_mean().to_vec();
    if test_init.len() != train_init.len() {
        return Err(CliError::input("test initial state has the wrong dimension"));
    }
    let mut shifted_cfg = cfg.env.clone();
    shifted_cfg.initial_mean = Some(test_init.to_vec());
    let shifted = shifted_cfg.build()?;
    let dir = OutputDir::create(out)?;
    let reset_seed = robustness_reset_seed(cfg.train.eval_seed);
    let mut conditions = Vec::new();
    for algorithm in [Algorithm::Hac, Algorithm::Mve] {
        let runs = cfg
            .seeds
            .iter()
            .map(|&seed| run_seed(cfg, &prep, algorithm, seed))
            .collect::<CliResult<Vec<_>>>()?;
        for (condition, env) in [("train", prep.env.as_ref()), ("shifted", shifted.as_ref())] {
            let (summary, rows) = test_condition(algorithm, condition, env, &runs, reset_seed)?;
            let path = dir.path(format!("{}_{condition}.csv", algorithm.name()))?;
            let mut wtr = csv::Writer::from_path(path)?;
            wtr.write_record(["seed", "t", "s0"])?;
            for (seed, t, x) in rows {
                wtr.write_record([seed.to_string(), t.to_string(), x.to_string()])?;
            }
            wtr.flush()?;
            conditions.push(summary);
        }
    }
    let summary = RobustnessSummary {
        train_init,
        test_init: test_init.to_vec(),
        seeds: cfg.seeds.clone(),
        conditions,
    };
    write_json(&dir.path("summary.json")?, &summary)?;
    dir.commit()?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianBench {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub batch: usize,
    pub repeats: usize,
    pub analytic_seconds: f64,
    pub finite_difference_seconds: f64,
    pub speedup: f64,
    pub max_abs_err: f64,
}

const BENCH_FD_STEP: f64 = 1e-5;

/// Times closed-form state Jacobians against central differences on the
/// same inputs and checks that they agree to 1e-4.
pub fn jacobian_bench(
    state_dim: usize,
    action_dim: usize,
    hidden: usize,
    batch: usize,
    repeats: usize,
    seed: u64,
) -> CliResult<JacobianBench> {
    if repeats == 0 || batch == 0 {
        return Err(CliError::input("batch and repeats must be positive"));
    }
    if state_dim == 0 || hidden == 0 {
        return Err(CliError::input("dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = MlpParams::random(state_dim + action_dim, hidden, state_dim, &mut rng);
    // Inputs away from ReLU kinks so the differences are meaningful.
    let mut inputs = Vec::with_capacity(batch);
    while inputs.len() < batch {
        let z: Vec<f64> = (0..state_dim + action_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        if net.forward(&z)?.kink_margin() > 1e-4 {
            inputs.push(z);
        }
    }

    let start = Instant::now();
    let mut analytic = Vec::new();
    for _ in 0..repeats {
        analytic.clear();
        for z in &inputs {
            let trace = net.forward(z)?;
            analytic.push(net.state_jacobian(&trace, state_dim)?);
        }
    }
    let analytic_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut fd = Vec::new();
    for _ in 0..repeats {
        fd.clear();
        for z in &inputs {
            let mut jac = vec![0.0; state_dim * state_dim];
            let mut zp = z.clone();
            for j in 0..state_dim {
                zp[j] = z[j] + BENCH_FD_STEP;
                let fp = net.predict(&zp)?;
                zp[j] = z[j] - BENCH_FD_STEP;
                let fm = net.predict(&zp)?;
                zp[j] = z[j];
                for i in 0..state_dim {
                    jac[i * state_dim + j] = (fp[i] - fm[i]) / (2.0 * BENCH_FD_STEP);
                }
            }
            fd.push(jac);
        }
    }
    let finite_difference_seconds = start.elapsed().as_secs_f64();

    let max_abs_err = analytic
        .iter()
        .zip(&fd)
        .flat_map(|(a, f)| a.data().iter().zip(f).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);
    if !(max_abs_err < 1e-4) {
        return Err(hac_core::Error::Numeric {
            step: 0,
            reason: format!("analytic and finite-difference Jacobians differ by {max_abs_err}"),
        }
        .into());
    }
    Ok(JacobianBench {
        state_dim,
        action_dim,
        hidden,
        batch,
        repeats,
        analytic_seconds,
        finite_difference_seconds,
        speedup: finite_difference_seconds / analytic_seconds.max(1e-12),
        max_abs_err,
    })
}

/// Default width of the benchmark network.
pub const BENCH_HIDDEN: usize = DEFAULT_HIDDEN;

#[cfg(test)]
mod tests {
    use super::*;
    use hac_core::train::TrainConfig;

    fn tiny(algorithm: Algorithm) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(EnvKind::Lqr, algorithm);
        cfg.dataset = Some(crate::config::DatasetConfig {
            path: None,
            size: Some(200),
            seed: 0,
        });
        cfg.train = TrainConfig {
            rounds: 2,
            updates_per_round: 2,
            hidden: 8,
            eval_episodes: 2,
            ..TrainConfig::default()
        };
        cfg.train.dynamics.epochs = 2;
        cfg.train.dynamics.hidden = 8;
        cfg.mve.batch_size = 8;
        cfg
    }

    #[test]
    fn empty_dataset_file_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.pmds");
        let env = LqrEnv::benchmark();
        gen_dataset(&env, EnvKind::Lqr, 0, 0, 1.0, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PMDS");
        assert!(Dataset::load(&path).unwrap().is_empty());
    }

    #[test]
    fn same_seed_gives_byte_identical_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let env = LqrEnv::benchmark();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        gen_dataset(&env, EnvKind::Lqr, 300, 9, 1.0, &a).unwrap();
        gen_dataset(&env, EnvKind::Lqr, 300, 9, 1.0, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn single_seed_aggregate_is_that_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Algorithm::Hac);
        let out = dir.path().join("run");
        let summary = train(&cfg, &out).unwrap();
        assert_eq!(summary.final_std, 0.0);
        let agg = fs::read_to_string(out.join("curve.csv")).unwrap();
        let one = fs::read_to_string(out.join("seed_0/curve.csv")).unwrap();
        let col = |text: &str| -> Vec<String> {
            text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect()
        };
        assert_eq!(col(&agg), col(&one));
        assert!(out.join("summary.json").is_file());
    }

    #[test]
    fn existing_output_is_not_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "x").unwrap();
        let err = train(&tiny(Algorithm::Mve), dir.path()).unwrap_err();
        assert!(matches!(err, CliError::Input(_)));
        assert!(dir.path().join("keep.txt").is_file());
    }

    #[test]
    fn critic_error_requires_episodes_and_lqr() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Algorithm::Hac);
        assert!(critic_error(&cfg, 0, &dir.path().join("a")).is_err());
        let mut pend = ExperimentConfig::new(EnvKind::Pendulum, Algorithm::Hac);
        pend.train = cfg.train.clone();
        assert!(critic_error(&pend, 2, &dir.path().join("b")).is_err());
    }

    #[test]
    fn critic_error_writes_scatter() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ce");
        let summary = critic_error(&tiny(Algorithm::Hac), 2, &out).unwrap();
        let text = fs::read_to_string(out.join("scatter.csv")).unwrap();
        assert!(text.starts_with("truth_normalized,estimate_normalized,method"));
        assert_eq!(text.lines().count(), 1 + 2 * 20);
        assert!(summary.mean_abs_err_hac.is_finite());
    }

    #[test]
    fn robustness_rejects_empty_seeds_and_reports_conditions() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Algorithm::Hac);
        let shifted = [0.0, 0.0, 1.0, 1.0, 0.0];
        cfg.seeds.clear();
        assert!(robustness(&cfg, &shifted, &dir.path().join("a")).is_err());
        cfg.seeds = vec![0, 1];
        let s = robustness(&cfg, &shifted, &dir.path().join("b")).unwrap();
        assert_eq!(s.conditions.len(), 4);
        assert!(dir.path().join("b/hac_shifted.csv").is_file());
    }

    #[test]
    fn jacobian_bench_checks_correctness() {
        let r = jacobian_bench(3, 2, 16, 1, 2, 0).unwrap();
        assert!(r.max_abs_err < 1e-4);
        assert!(matches!(jacobian_bench(3, 2, 16, 1, 0, 0), Err(CliError::Input(_))));
    }
}
