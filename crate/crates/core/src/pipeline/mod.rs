//! The three-phase calibration workflow and the experiments built on it:
//! training-data collection, cross-validated surrogate fitting, and
//! surrogate-based posterior estimation, plus the complexity sweep and the
//! learning curve.

mod artifacts;
mod config;

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    log_likelihood, rmse, GroundTruth, MetricPair, ObservedData, ParamVector, PriorSpec,
};
use crate::sampler::{
    lhc_sample, nested_sampling, posterior_resample, posterior_summary, NestedRunResult,
    PosteriorSummary,
};
use crate::seeding::derive_rng;
use crate::simulators::{make_observation, CachedSimulator};
use crate::surrogate::{
    surrogate_loglike, ModelKind, SampleSource, Surrogate, TrainConfig, TrainingSet,
};

pub use artifacts::{
    format_number, write_curve_csv, write_metrics_csv, write_report_json, write_samples_csv,
    write_sweep_csv, write_triangle_csv,
};
pub use config::{ExperimentConfig, SampleScheme, SimulatorConfig, SimulatorKind};

/// Runtime state shared by every phase of one experiment: the memoized
/// simulator, prior, ground truth and the single noisy observation.
#[derive(Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    simulator: CachedSimulator,
    prior: PriorSpec,
    truth: GroundTruth,
    observation: ObservedData,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let config = config.resolved()?;
        let prior = config.prior_spec();
        let truth = GroundTruth::new(ParamVector::new(config.truth_vector())?, &prior)?;
        let sim = config.simulator.build()?;
        let clean = sim.simulate(&truth.theta_star)?;
        let observation = make_observation(
            &clean,
            config.noise_frac,
            &mut derive_rng(config.seed, "observation"),
        )?;
        Ok(Self {
            config,
            simulator: CachedSimulator::new(sim),
            prior,
            truth,
            observation,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn simulator(&self) -> &CachedSimulator {
        &self.simulator
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn observation(&self) -> &ObservedData {
        &self.observation
    }

    /// Log-likelihood through the (memoized, possibly delayed) simulator.
    pub fn simulator_loglike(&self, theta: &ParamVector) -> Result<f64> {
        log_likelihood(&self.simulator.call(theta)?, &self.observation)
    }

    /// Nested sampling on the simulator likelihood.
    pub fn run_phase1(&self) -> Result<NestedRunResult> {
        nested_sampling(
            |theta| self.simulator_loglike(theta),
            &self.prior,
            &self.config.phase1,
        )
    }

    /// Nested sampling on a surrogate likelihood.
    pub fn run_phase3(&self, model: &dyn Surrogate) -> Result<NestedRunResult> {
        nested_sampling(
            |theta| surrogate_loglike(model, theta, &self.observation),
            &self.prior,
            &self.config.phase3,
        )
    }
}

/// Training data plus the simulator-based run that produced its posterior
/// part, if any.
#[derive(Debug, Clone)]
pub struct Collection {
    pub data: TrainingSet,
    pub phase1: Option<NestedRunResult>,
    /// Wall time of the whole collection step in seconds.
    pub prep_time: f64,
}

/// Draws `n` training inputs under `scheme` and attaches simulator outputs.
/// Mixed sets are shuffled so that every prefix mixes both sources.
pub fn collect_training_data(
    exp: &Experiment,
    scheme: SampleScheme,
    n: usize,
) -> Result<Collection> {
    let start = Instant::now();
    let seed = exp.config.seed;
    let (n_lhc, n_post) = match scheme {
        SampleScheme::Lhc => (n, 0),
        SampleScheme::Posterior => (0, n),
        SampleScheme::Mixed => {
            if !n.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "mixed scheme needs an even sample count, got {n}"
                )));
            }
            (n / 2, n / 2)
        }
    };
    let mut records: Vec<(ParamVector, SampleSource)> = Vec::with_capacity(n);
    if n_lhc > 0 {
        let points = lhc_sample(n_lhc, &exp.prior, &mut derive_rng(seed, "lhc"))?;
        records.extend(points.into_iter().map(|p| (p, SampleSource::Lhc)));
    }
    let mut phase1 = None;
    if n_post > 0 {
        info!("phase 1: nested sampling on the simulator");
        let run = exp.run_phase1()?;
        info!(
            "phase 1: ln Z = {:.4}, {} likelihood evaluations, {:.2}s",
            run.log_evidence, run.n_like_evals, run.wall_time
        );
        let points = posterior_resample(&run, n_post, &mut derive_rng(seed, "resample"))?;
        records.extend(points.into_iter().map(|p| (p, SampleSource::Posterior)));
        phase1 = Some(run);
    }
    if scheme == SampleScheme::Mixed {
        records.shuffle(&mut derive_rng(seed, "mix"));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (theta, source) in records {
        outputs.push(exp.simulator.call(&theta)?);
        inputs.push(theta);
        sources.push(source);
    }
    let data = TrainingSet::new(inputs, outputs, sources)?;
    Ok(Collection {
        data,
        phase1,
        prep_time: start.elapsed().as_secs_f64(),
    })
}

/// Seeded shuffle of `0..n` cut into `k` folds whose sizes differ by at most
/// one.
pub fn kfold_partition<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} records cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub train: MetricPair,
    pub test: MetricPair,
}

/// RMSE and Pearson of a model's flattened predictions on `data`.
pub fn metrics_on(model: &dyn Surrogate, data: &TrainingSet) -> Result<MetricPair> {
    let pred = model.predict_batch(data.input_matrix().view())?;
    let truth = data.output_matrix();
    MetricPair::between(
        pred.as_slice().expect("standard layout"),
        truth.as_slice().expect("standard layout"),
    )
}

/// One cross-validation split.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: TrainingSet,
    pub test: TrainingSet,
}

impl FoldSplit {
    pub fn evaluate(&self, model: &dyn Surrogate) -> Result<FoldMetrics> {
        Ok(FoldMetrics {
            fold: self.fold,
            train: metrics_on(model, &self.train)?,
            test: metrics_on(model, &self.test)?,
        })
    }
}

/// Train/test pairs for a seeded k-fold partition.
pub fn kfold_splits<R: Rng + ?Sized>(
    data: &TrainingSet,
    k: usize,
    rng: &mut R,
) -> Result<Vec<FoldSplit>> {
    let folds = kfold_partition(data.len(), k, rng)?;
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            FoldSplit {
                fold: f,
                train: data.subset(&train_idx),
                test: data.subset(test_idx),
            }
        })
        .collect())
}

/// k-fold cross-validation. `trainer` receives the training part and the fold
/// index; held-out metrics compare flattened predictions with the true
/// outputs.
pub fn kfold_cv<R, F>(
    data: &TrainingSet,
    k: usize,
    rng: &mut R,
    mut trainer: F,
) -> Result<Vec<FoldMetrics>>
where
    R: Rng + ?Sized,
    F: FnMut(&TrainingSet, usize) -> Result<Box<dyn Surrogate>>,
{
    let mut out = Vec::with_capacity(k);
    for split in kfold_splits(data, k, rng)? {
        let model = trainer(&split.train, split.fold)?;
        let metrics = split.evaluate(&*model)?;
        info!(
            "fold {}/{}: test rmse {:.5}, pearson {:.5}",
            split.fold + 1,
            k,
            metrics.test.rmse,
            metrics.test.pearson
        );
        out.push(metrics);
    }
    Ok(out)
}

/// Fold partition used by [`cross_validate`] for a given training config.
pub fn cv_splits(data: &TrainingSet, k: usize, cfg: &TrainConfig) -> Result<Vec<FoldSplit>> {
    kfold_splits(data, k, &mut derive_rng(cfg.seed, "folds"))
}

/// Training config of one cross-validation fold.
pub fn fold_train_config(cfg: &TrainConfig, fold: usize) -> TrainConfig {
    TrainConfig {
        seed: config::sub_seed(cfg.seed, &format!("fold-{fold}")),
        ..*cfg
    }
}

/// Cross-validation of one model family with per-fold training seeds derived
/// from `cfg.seed`.
pub fn cross_validate(
    data: &TrainingSet,
    k: usize,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<Vec<FoldMetrics>> {
    let mut rng = derive_rng(cfg.seed, "folds");
    kfold_cv(data, k, &mut rng, |train, fold| {
        kind.train(train, &fold_train_config(cfg, fold))
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub train_rmse: f64,
    pub train_pearson: f64,
    pub test_rmse: f64,
    pub test_pearson: f64,
}

impl CvSummary {
    pub fn of(folds: &[FoldMetrics]) -> Self {
        let col = |f: fn(&FoldMetrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>()).0;
        Self {
            train_rmse: col(|m| m.train.rmse),
            train_pearson: col(|m| m.train.pearson),
            test_rmse: col(|m| m.test.rmse),
            test_pearson: col(|m| m.test.pearson),
        }
    }
}

fn weighted_mean(result: &NestedRunResult) -> Result<Vec<f64>> {
    let first = result
        .samples
        .first()
        .ok_or_else(|| Error::EmptyResult("no posterior samples".into()))?;
    let weights = result.importance_weights();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; first.theta.len()];
    for (s, w) in result.samples.iter().zip(&weights) {
        for (m, x) in mean.iter_mut().zip(s.theta.as_slice()) {
            *m += w * x / total;
        }
    }
    Ok(mean)
}

/// RMSE between the importance-weighted posterior mean and the truth.
pub fn estimation_rmse(result: &NestedRunResult, truth: &GroundTruth) -> Result<f64> {
    rmse(&weighted_mean(result)?, truth.theta_star.as_slice())
}

/// RMSE between the highest-likelihood sample and the truth.
pub fn map_rmse(result: &NestedRunResult, truth: &GroundTruth) -> Result<f64> {
    let best = result
        .samples
        .iter()
        .max_by(|a, b| a.log_like.total_cmp(&b.log_like))
        .ok_or_else(|| Error::EmptyResult("no posterior samples".into()))?;
    rmse(best.theta.as_slice(), truth.theta_star.as_slice())
}

/// Wall times in seconds and evaluation counts of one pipeline run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLedger {
    /// Training-data collection, including the simulator-based run.
    pub prep_t: f64,
    pub cv_t: f64,
    /// Final fit on all training data.
    pub train_t: f64,
    /// Surrogate-based nested sampling.
    pub exec_t: f64,
    /// The simulator-based nested-sampling run alone (0 under the lhc scheme).
    pub phase1_ns_t: f64,
    pub phase1_like_evals: usize,
    pub phase3_like_evals: usize,
    /// Simulator requests, memoized or not.
    pub sim_calls: u64,
    /// Simulator requests that actually ran the model.
    pub sim_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub summary: PosteriorSummary,
    pub log_evidence: f64,
    pub log_evidence_error: f64,
    pub information: f64,
    pub n_like_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
    pub estimation_rmse: f64,
    pub map_rmse: f64,
}

impl PhaseReport {
    fn of(result: &NestedRunResult, prior: &PriorSpec, truth: &GroundTruth) -> Result<Self> {
        Ok(Self {
            summary: posterior_summary(result, prior)?,
            log_evidence: result.log_evidence,
            log_evidence_error: result.log_evidence_error(),
            information: result.information,
            n_like_evals: result.n_like_evals,
            iterations: result.iterations,
            converged: result.converged,
            wall_time: result.wall_time,
            estimation_rmse: estimation_rmse(result, truth)?,
            map_rmse: map_rmse(result, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scheme: SampleScheme,
    pub model: ModelKind,
    pub complexity_eta: usize,
    pub n_train: usize,
    pub k_folds: usize,
    pub n_lhc: usize,
    pub n_posterior: usize,
    pub folds: Vec<FoldMetrics>,
    pub cv: Option<CvSummary>,
    /// Phase-3 posterior mean vs truth.
    pub estimation_rmse: Option<f64>,
    pub map_rmse: Option<f64>,
    pub phase1: Option<PhaseReport>,
    pub phase3: Option<PhaseReport>,
    pub timing: TimingLedger,
    pub incomplete: bool,
    pub error: Option<String>,
}

/// Report plus the bulky by-products of a run.
pub struct PipelineRun {
    pub report: PipelineReport,
    pub data: Option<TrainingSet>,
    pub phase1: Option<NestedRunResult>,
    pub phase3: Option<NestedRunResult>,
    pub surrogate: Option<Box<dyn Surrogate>>,
}

impl std::fmt::Debug for PipelineRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PipelineRun")
            .field("report", &self.report)
            .finish_non_exhaustive()
    }
}

/// Which optional stages of [`run_pipeline_with`] to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub cross_validate: bool,
    pub estimate: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            cross_validate: true,
            estimate: true,
        }
    }
}

/// All three phases with the configured scheme and sample budget.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    run_pipeline_with(cfg, Stages::default())
}

pub fn run_pipeline_with(cfg: &ExperimentConfig, stages: Stages) -> Result<PipelineRun> {
    let exp = Experiment::new(cfg)?;
    let collection = collect_training_data(&exp, exp.config.scheme, exp.config.n_train);
    Ok(continue_pipeline(&exp, collection, stages))
}

/// Phases 2 and 3 on an already collected data set. Failures are captured
/// in the returned report, which is then flagged incomplete.
pub fn continue_pipeline(
    exp: &Experiment,
    collection: Result<Collection>,
    stages: Stages,
) -> PipelineRun {
    let cfg = &exp.config;
    let mut run = PipelineRun {
        report: PipelineReport {
            scheme: cfg.scheme,
            model: cfg.model,
            complexity_eta: cfg.train.complexity_eta,
            n_train: cfg.n_train,
            k_folds: cfg.k_folds,
            n_lhc: 0,
            n_posterior: 0,
            folds: Vec::new(),
            cv: None,
            estimation_rmse: None,
            map_rmse: None,
            phase1: None,
            phase3: None,
            timing: TimingLedger::default(),
            incomplete: false,
            error: None,
        },
        data: None,
        phase1: None,
        phase3: None,
        surrogate: None,
    };
    if let Err(e) = phases(exp, collection, stages, &mut run) {
        run.report.incomplete = true;
        run.report.error = Some(e.to_string());
    }
    run.report.timing.sim_calls = exp.simulator.calls();
    run.report.timing.sim_evaluations = exp.simulator.evaluations();
    run
}

fn phases(
    exp: &Experiment,
    collection: Result<Collection>,
    stages: Stages,
    run: &mut PipelineRun,
) -> Result<()> {
    let cfg = &exp.config;
    let collection = collection?;
    let report = &mut run.report;
    report.timing.prep_t = collection.prep_time;
    report.n_lhc = collection.data.count_source(SampleSource::Lhc);
    report.n_posterior = collection.data.count_source(SampleSource::Posterior);
    if let Some(p1) = &collection.phase1 {
        report.timing.phase1_ns_t = p1.wall_time;
        report.timing.phase1_like_evals = p1.n_like_evals;
        report.phase1 = Some(PhaseReport::of(p1, &exp.prior, &exp.truth)?);
    }
    run.phase1 = collection.phase1;
    let data = collection.data;

    if stages.cross_validate {
        info!(
            "phase 2: {}-fold cross-validation of {}",
            cfg.k_folds,
            cfg.model.name()
        );
        let start = Instant::now();
        let folds = cross_validate(&data, cfg.k_folds, cfg.model, &cfg.train);
        report.timing.cv_t = start.elapsed().as_secs_f64();
        report.folds = folds?;
        report.cv = Some(CvSummary::of(&report.folds));
    }

    if stages.estimate {
        info!("phase 2: final fit on {} records", data.len());
        let start = Instant::now();
        let model = cfg.model.train(&data, &cfg.train)?;
        report.timing.train_t = start.elapsed().as_secs_f64();
        info!("phase 3: nested sampling on the surrogate");
        let p3 = exp.run_phase3(&*model)?;
        report.timing.exec_t = p3.wall_time;
        report.timing.phase3_like_evals = p3.n_like_evals;
        let phase = PhaseReport::of(&p3, &exp.prior, &exp.truth)?;
        report.estimation_rmse = Some(phase.estimation_rmse);
        report.map_rmse = Some(phase.map_rmse);
        report.phase3 = Some(phase);
        run.phase3 = Some(p3);
        run.surrogate = Some(model);
    }
    run.data = Some(data);
    Ok(())
}

impl PipelineRun {
    /// Writes report.json, metrics.csv, per-phase sample files, triangle.csv
    /// (Phase-3 posterior, else Phase 1) and model.json into `dir`, skipping
    /// whatever the run did not produce.
    pub fn write_artifacts(&self, dir: &std::path::Path) -> Result<()> {
        write_report_json(&dir.join("report.json"), &self.report)?;
        write_metrics_csv(&dir.join("metrics.csv"), &self.report.folds)?;
        if let Some(p1) = &self.phase1 {
            write_samples_csv(&dir.join("samples_phase1.csv"), p1)?;
        }
        if let Some(p3) = &self.phase3 {
            write_samples_csv(&dir.join("samples_phase3.csv"), p3)?;
        }
        let summary = self
            .report
            .phase3
            .as_ref()
            .or(self.report.phase1.as_ref())
            .map(|p| &p.summary);
        if let Some(summary) = summary {
            write_triangle_csv(&dir.join("triangle.csv"), summary)?;
        }
        if let Some(model) = &self.surrogate {
            std::fs::write(dir.join("model.json"), model.model_json()?)?;
        }
        Ok(())
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: SampleScheme,
    pub eta: usize,
    pub mean_test_rmse: Option<f64>,
    pub mean_test_pearson: Option<f64>,
    pub estimation_rmse: Option<f64>,
    pub error: Option<String>,
}

/// Full factorial over schemes and complexity factors. Each scheme's
/// training set (and its simulator-based run) is collected once and shared by
/// its cells; cells run on `jobs` workers. Failed cells keep their error and
/// empty metrics.
pub fn eta_sweep(
    cfg: &ExperimentConfig,
    etas: &[usize],
    schemes: &[SampleScheme],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if etas.is_empty() || schemes.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    let pool = thread_pool(jobs)?;
    let mut rows = Vec::with_capacity(etas.len() * schemes.len());
    for &scheme in schemes {
        let base = ExperimentConfig {
            scheme,
            ..cfg.clone()
        };
        let exp = Experiment::new(&base)?;
        let collection = collect_training_data(&exp, scheme, base.n_train);
        let cells: Vec<SweepRow> = pool.install(|| {
            etas.par_iter()
                .map(|&eta| {
                    let mut cell_cfg = exp.config.clone();
                    cell_cfg.train.complexity_eta = eta;
                    let cell = match Experiment::new(&cell_cfg) {
                        Ok(cell) => cell,
                        Err(e) => return failed_row(scheme, eta, e.to_string()),
                    };
                    let run = continue_pipeline(&cell, cloned(&collection), Stages::default());
                    let r = run.report;
                    SweepRow {
                        scheme,
                        eta,
                        mean_test_rmse: r.cv.map(|c| c.test_rmse),
                        mean_test_pearson: r.cv.map(|c| c.test_pearson),
                        estimation_rmse: r.estimation_rmse,
                        error: r.error,
                    }
                })
                .collect()
        });
        rows.extend(cells);
    }
    Ok(rows)
}

fn failed_row(scheme: SampleScheme, eta: usize, error: String) -> SweepRow {
    SweepRow {
        scheme,
        eta,
        mean_test_rmse: None,
        mean_test_pearson: None,
        estimation_rmse: None,
        error: Some(error),
    }
}

fn cloned(collection: &Result<Collection>) -> Result<Collection> {
    match collection {
        Ok(c) => Ok(c.clone()),
        Err(e) => Err(Error::Inconsistent(format!(
            "training data collection failed: {e}"
        ))),
    }
}

/// One learning-curve point: fold means and two-standard-deviation bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub size: usize,
    pub train_rmse: f64,
    pub train_rmse_2sd: f64,
    pub test_rmse: f64,
    pub test_rmse_2sd: f64,
    pub train_pearson: f64,
    pub train_pearson_2sd: f64,
    pub test_pearson: f64,
    pub test_pearson_2sd: f64,
}

impl CurveRow {
    pub fn of(size: usize, folds: &[FoldMetrics]) -> Self {
        let stat = |f: fn(&FoldMetrics) -> f64| {
            let (m, s) = mean_std(&folds.iter().map(f).collect::<Vec<_>>());
            (m, 2.0 * s)
        };
        let (train_rmse, train_rmse_2sd) = stat(|m| m.train.rmse);
        let (test_rmse, test_rmse_2sd) = stat(|m| m.test.rmse);
        let (train_pearson, train_pearson_2sd) = stat(|m| m.train.pearson);
        let (test_pearson, test_pearson_2sd) = stat(|m| m.test.pearson);
        Self {
            size,
            train_rmse,
            train_rmse_2sd,
            test_rmse,
            test_rmse_2sd,
            train_pearson,
            train_pearson_2sd,
            test_pearson,
            test_pearson_2sd,
        }
    }
}

/// Cross-validated metrics on nested prefixes of one master data set of the
/// largest requested size.
pub fn learning_curve(
    cfg: &ExperimentConfig,
    sizes: &[usize],
    jobs: usize,
) -> Result<Vec<CurveRow>> {
    if sizes.is_empty() {
        return Err(Error::Config("size list must be nonempty".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be strictly ascending".into()));
    }
    let largest = *sizes.last().expect("nonempty");
    let master_cfg = ExperimentConfig {
        n_train: largest,
        ..cfg.clone()
    };
    let exp = Experiment::new(&master_cfg)?;
    if let Some(&small) = sizes.iter().find(|&&s| s < exp.config.k_folds) {
        return Err(Error::Config(format!(
            "size {small} is below k_folds ({})",
            exp.config.k_folds
        )));
    }
    let master = collect_training_data(&exp, exp.config.scheme, largest)?.data;
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        sizes
            .par_iter()
            .map(|&size| {
                let c = &exp.config;
                let folds = cross_validate(&master.prefix(size), c.k_folds, c.model, &c.train)?;
                Ok(CurveRow::of(size, &folds))
            })
            .collect()
    })
}
