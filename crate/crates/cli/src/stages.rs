//! The pipeline stages. Each is a pure function of the configuration and the
//! files written by earlier stages.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use nullcal::calibration::{
    ambiguity_map, ambiguity_map_averaged, export, noise_sweep, propagated_bound_check, sbc_run_multi,
    variance_ratios, AmbiguityMap, BoundReport, SbcOptions, SbcReport, SweepProblem, TestStatistic,
};
use nullcal::gaussian::GaussianSpecDocument;
use nullcal::nn::train::loss_csv;
use nullcal::nn::{cascade_sample, train_null_ddpm, train_null_vae, train_range, NullModel, RangeKind, RangeModel};
use nullcal::operator::OperatorDocument;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, NullKind};
use crate::data::{generate, split, stage, Dataset, Problem, ProblemKind, TEST_FILE, TRAIN_FILE};
use crate::error::{CliError, CliResult};
use crate::io::{csv_body, read_json, record_stage, RunDir};

/// Bound-check slack used for the pass column of the bound table.
pub const BOUND_SLACK: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Range,
    NullDdpm,
    NullVae,
}

impl TrainStage {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "range" => Ok(TrainStage::Range),
            "null-ddpm" => Ok(TrainStage::NullDdpm),
            "null-vae" => Ok(TrainStage::NullVae),
            other => Err(CliError::Config(format!(
                "unknown stage `{other}`; expected range, null-ddpm or null-vae"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainStage::Range => "range",
            TrainStage::NullDdpm => "null-ddpm",
            TrainStage::NullVae => "null-vae",
        }
    }
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub problem: Problem,
    pub run: RunDir,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> CliResult<Self> {
        let problem = Problem::build(&cfg)?;
        let run = RunDir::create(out, &cfg)?;
        Ok(Self { cfg, problem, run })
    }

    fn finish(&mut self, name: &str, start: Instant) -> CliResult<()> {
        record_stage(&mut self.run, name, start.elapsed().as_secs_f64())
    }

    fn test_split(&self) -> CliResult<Dataset> {
        Dataset::read(&self.run, TEST_FILE, &self.problem)
    }

    fn train_split(&self) -> CliResult<Dataset> {
        Dataset::read(&self.run, TRAIN_FILE, &self.problem)
    }
}

pub fn range_label(kind: RangeKind) -> &'static str {
    match kind {
        RangeKind::Mlp => "mlp",
        RangeKind::Ridge => "ridge",
    }
}

fn range_checkpoint(kind: RangeKind) -> String {
    format!("checkpoints/range-{}.json", range_label(kind))
}

fn null_checkpoint(kind: NullKind) -> String {
    format!("checkpoints/null-{}.json", kind.label())
}

fn limit(n: usize) -> usize {
    if n == 0 {
        usize::MAX
    } else {
        n
    }
}

pub fn gen(ctx: &mut Context) -> CliResult<()> {
    let start = Instant::now();
    let problem = &ctx.problem;
    ctx.run.write_json(
        "problem/operator.json",
        &OperatorDocument::new(&problem.operator, &problem.basis),
    )?;
    match &problem.kind {
        ProblemKind::Gaussian(spec) => {
            ctx.run.write_json("problem/gaussian.json", &GaussianSpecDocument::new(spec))?;
        }
        ProblemKind::Fourier(toy) => {
            let names = vec!["index".to_string(), "kept".to_string()];
            let rows = toy.mask.iter().enumerate().map(|(i, &m)| vec![i as f64, m as f64]);
            ctx.run.write_csv("problem/mask.csv", &csv_body(&names, rows))?;
        }
        ProblemKind::Patch(_) => {}
    }
    let generated = generate(&ctx.cfg, problem)?;
    let (train, test) = split(&ctx.cfg, &generated.data);
    if let Some(width) = problem.image_width() {
        for (i, x) in generated.previews.iter().enumerate() {
            let scaled = unit_scale(x);
            ctx.run.write_pgm(&format!("data/preview_{i}.pgm"), &scaled, width)?;
        }
    }
    ctx.run.write_csv(TRAIN_FILE, &train.to_csv())?;
    ctx.run.write_csv(TEST_FILE, &test.to_csv())?;
    ctx.finish("gen", start)
}

/// Rescales to `[0, 1]` by the range of the values.
fn unit_scale(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    v.iter()
        .map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 })
        .collect()
}

/// Trains `only`, or every model the configuration names.
pub fn train(ctx: &mut Context, only: Option<TrainStage>) -> CliResult<()> {
    let start = Instant::now();
    let data = ctx.train_split()?;
    if data.is_empty() {
        return Err(CliError::Config("training split is empty".into()));
    }
    let wanted = |s: TrainStage| only.is_none_or(|o| o == s);
    if wanted(TrainStage::Range) {
        for &kind in &ctx.cfg.ranges.clone() {
            let mut rc = ctx.cfg.range.clone();
            rc.kind = kind;
            rc.seed = ctx.cfg.stage_seed(stage::RANGE, rc.seed);
            let trained = train_range(&data.ys, &data.alphas, &rc).map_err(|e| CliError::in_stage("range", e))?;
            ctx.run.write_json(&range_checkpoint(kind), &trained.model)?;
            ctx.run.write_csv(
                &format!("losses/range-{}.csv", range_label(kind)),
                &loss_csv(&trained.loss_history),
            )?;
        }
    }
    for kind in ctx.cfg.nulls.clone() {
        let (model, history) = match kind {
            NullKind::Ddpm if wanted(TrainStage::NullDdpm) => {
                let mut dc = ctx.cfg.ddpm.clone();
                dc.seed = ctx.cfg.stage_seed(stage::NULL_DDPM, dc.seed);
                let t = train_null_ddpm(&data.alphas, &data.betas, &dc)
                    .map_err(|e| CliError::in_stage("null-ddpm", e))?;
                (NullModel::Ddpm(t.model), t.loss_history)
            }
            NullKind::Vae if wanted(TrainStage::NullVae) => {
                let mut vc = ctx.cfg.vae.clone();
                vc.seed = ctx.cfg.stage_seed(stage::NULL_VAE, vc.seed);
                let t = train_null_vae(&data.alphas, &data.betas, &vc)
                    .map_err(|e| CliError::in_stage("null-vae", e))?;
                (NullModel::Vae(t.model), t.loss_history)
            }
            _ => continue,
        };
        let value: serde_json::Value = serde_json::from_str(&model.to_checkpoint_json()?)
            .map_err(|e| CliError::Other(e.to_string()))?;
        ctx.run.write_json(&null_checkpoint(kind), &value)?;
        ctx.run
            .write_csv(&format!("losses/null-{}.csv", kind.label()), &loss_csv(&history))?;
    }
    let name = only.map_or("train".to_string(), |s| format!("train-{}", s.name()));
    ctx.finish(&name, start)
}

/// Loads or constructs a null model and checks it against the problem.
pub fn load_null(ctx: &Context, kind: NullKind) -> CliResult<NullModel> {
    let model = match kind {
        NullKind::Ddpm | NullKind::Vae => {
            let value: serde_json::Value = read_json(&ctx.run.path(&null_checkpoint(kind)))?;
            NullModel::from_checkpoint_json(&value.to_string())?
        }
        NullKind::Oracle | NullKind::ScaledOracle(_) => {
            let cond = ctx
                .problem
                .oracle_conditional()
                .ok_or_else(|| CliError::Config("oracle null models need the gaussian experiment".into()))?;
            match kind {
                NullKind::ScaledOracle(s) => NullModel::scaled_oracle(cond, s)?,
                _ => NullModel::Oracle(cond),
            }
        }
    };
    if model.r() != ctx.problem.r() || model.q() != ctx.problem.q() {
        return Err(CliError::Compatibility(format!(
            "null model {} has r={}, q={}; the problem has r={}, q={}",
            kind.label(),
            model.r(),
            model.q(),
            ctx.problem.r(),
            ctx.problem.q()
        )));
    }
    Ok(model)
}

pub fn load_range(ctx: &Context, kind: RangeKind) -> CliResult<RangeModel> {
    let model: RangeModel = read_json(&ctx.run.path(&range_checkpoint(kind)))?;
    if model.input_dim() != ctx.problem.n() || model.output_dim() != ctx.problem.r() {
        return Err(CliError::Compatibility(format!(
            "range model {} maps {} -> {}; the problem has n={}, r={}",
            range_label(kind),
            model.input_dim(),
            model.output_dim(),
            ctx.problem.n(),
            ctx.problem.r()
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VarianceSummary {
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub cases: usize,
    pub samples_per_case: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SbcSummaryRow {
    pub null: String,
    pub statistic: String,
    pub chi_square: f64,
    pub p_value: f64,
    pub mean_normalized_rank: f64,
    pub bins_outside_band: usize,
}

pub fn bins_outside_band(report: &SbcReport) -> usize {
    (0..report.bins)
        .filter(|&b| report.histogram[b] < report.band.lower[b] || report.histogram[b] > report.band.upper[b])
        .count()
}

pub fn sbc_dir(kind: NullKind) -> String {
    format!("sbc/{}", kind.label())
}

pub fn sbc(ctx: &mut Context, stats: &[TestStatistic]) -> CliResult<()> {
    let start = Instant::now();
    let test = ctx.test_split()?;
    if test.is_empty() {
        return Err(CliError::Config("test split is empty".into()));
    }
    let truth = test.pairs(limit(ctx.cfg.sbc.cases));
    let options = SbcOptions {
        samples_per_case: ctx.cfg.sbc.samples_per_case,
        bins: ctx.cfg.sbc.bins,
        seed: ctx.cfg.stage_seed(stage::SBC, 0),
    };
    let mut summary = Vec::new();
    for kind in ctx.cfg.nulls.clone() {
        let null = load_null(ctx, kind)?;
        let outcome = sbc_run_multi(&null, &truth, stats, &options)?;
        let dir = sbc_dir(kind);
        for report in &outcome.reports {
            let name = report.statistic.name();
            ctx.run.write_json(&format!("{dir}/{name}.json"), report)?;
            ctx.run.write_csv(&format!("{dir}/ranks_{name}.csv"), &export::ranks_csv(report))?;
            ctx.run
                .write_csv(&format!("{dir}/histogram_{name}.csv"), &export::histogram_csv(report))?;
            let title = format!("{} null, {} rank histogram", kind.label(), name);
            ctx.run.write_svg(&format!("{dir}/histogram_{name}.svg"), |c| {
                export::histogram_svg(report, &title, c)
            })?;
            summary.push(SbcSummaryRow {
                null: kind.label(),
                statistic: name,
                chi_square: report.chi_square.statistic,
                p_value: report.chi_square.p_value,
                mean_normalized_rank: report.mean_normalized_rank,
                bins_outside_band: bins_outside_band(report),
            });
        }
        if let Some(spec) = ctx.problem.gaussian() {
            let q = spec.q();
            let diag: Vec<f64> = (0..q).map(|i| spec.sigma_eta()[(i, i)]).collect();
            let cal = variance_ratios(&outcome.mean_sample_variance, &diag, options.samples_per_case)?;
            ctx.run.write_json(
                &format!("{dir}/variance.json"),
                &VarianceSummary {
                    ratios: cal.ratios,
                    mean_ratio: cal.mean_ratio,
                    cases: truth.len(),
                    samples_per_case: options.samples_per_case,
                },
            )?;
        }
    }
    ctx.run.write_json("sbc/summary.json", &summary)?;
    ctx.finish("sbc", start)
}

fn write_map(ctx: &mut Context, rel_stem: &str, map: &AmbiguityMap) -> CliResult<()> {
    ctx.run.write_csv(&format!("{rel_stem}.csv"), &export::ambiguity_csv(map))?;
    if let Some(width) = ctx.problem.image_width() {
        let peak = map.per_coordinate_variance.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = map
            .per_coordinate_variance
            .iter()
            .map(|v| if peak > 0.0 { v / peak } else { 0.0 })
            .collect();
        ctx.run.write_pgm(&format!("{rel_stem}.pgm"), &scaled, width)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapSummary {
    pub null: String,
    pub case: usize,
    pub case_mean_variance: f64,
    pub averaged_cases: usize,
    pub averaged_mean_variance: Option<f64>,
}

pub fn map(ctx: &mut Context, average: bool) -> CliResult<()> {
    let start = Instant::now();
    let test = ctx.test_split()?;
    let case = ctx.cfg.map.case;
    if case >= test.len() {
        return Err(CliError::Config(format!(
            "map.case {case} is outside the test split of {} cases",
            test.len()
        )));
    }
    let seed = ctx.cfg.stage_seed(stage::MAP, 0);
    let k = ctx.cfg.map.samples;
    let mut summary = Vec::new();
    for kind in ctx.cfg.nulls.clone() {
        let null = load_null(ctx, kind)?;
        let dir = format!("map/{}", kind.label());
        let single = ambiguity_map(&null, test.alphas.row(case), &ctx.problem.basis, k, seed)?;
        write_map(ctx, &format!("{dir}/case_{case}"), &single)?;
        let mut row = MapSummary {
            null: kind.label(),
            case,
            case_mean_variance: single.mean_variance(),
            averaged_cases: 0,
            averaged_mean_variance: None,
        };
        if average {
            let alphas = test.alpha_rows(limit(ctx.cfg.map.average_cases));
            let avg = ambiguity_map_averaged(&null, &alphas, &ctx.problem.basis, k, seed)?;
            write_map(ctx, &format!("{dir}/average"), &avg)?;
            row.averaged_cases = alphas.len();
            row.averaged_mean_variance = Some(avg.mean_variance());
        }
        summary.push(row);
    }
    ctx.run.write_json("map/summary.json", &summary)?;
    ctx.finish("map", start)
}

fn bound_csv(bounds: &[BoundReport]) -> String {
    let names: Vec<String> = ["sigma", "probes", "lipschitz_estimate", "lhs", "rhs", "holds"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    csv_body(
        &names,
        bounds.iter().map(|b| {
            vec![
                b.sigma,
                b.probes as f64,
                b.lipschitz_estimate,
                b.lhs,
                b.rhs,
                if b.holds(BOUND_SLACK) { 1.0 } else { 0.0 },
            ]
        }),
    )
}

pub fn sweep(ctx: &mut Context) -> CliResult<()> {
    let start = Instant::now();
    let ProblemKind::Fourier(toy) = &ctx.problem.kind else {
        return Err(CliError::Config("sweep needs the fourier-toy experiment".into()));
    };
    let problem = SweepProblem::from_fourier(toy);
    let test = ctx.test_split()?;
    let alphas = test.alpha_rows(limit(ctx.cfg.sweep.cases));
    let options = ctx.cfg.sweep.options(ctx.cfg.stage_seed(stage::SWEEP, 0));
    for kind in ctx.cfg.nulls.clone() {
        let null = load_null(ctx, kind)?;
        let dir = format!("sweep/{}", kind.label());
        let report = noise_sweep(&null, &problem, &alphas, &options)?;
        ctx.run.write_csv(&format!("{dir}/sweep.csv"), &export::sweep_csv(&report))?;
        ctx.run.write_json(&format!("{dir}/sweep.json"), &report)?;
        let title = format!("{} null, noise sweep", kind.label());
        ctx.run
            .write_svg(&format!("{dir}/sweep.svg"), |c| export::sweep_svg(&report, &title, c))?;
        let bounds = ctx
            .cfg
            .sweep
            .bound_sigmas
            .iter()
            .map(|&s| propagated_bound_check(&null, &problem, &alphas, s, ctx.cfg.sweep.probes, &options))
            .collect::<nullcal::Result<Vec<_>>>()?;
        ctx.run.write_csv(&format!("{dir}/bound.csv"), &bound_csv(&bounds))?;
        ctx.run.write_json(&format!("{dir}/bound.json"), &bounds)?;
    }
    ctx.finish("sweep", start)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportCell {
    pub range: String,
    pub null: String,
    pub cases: usize,
    pub pearson_mean: f64,
    pub pearson_se: f64,
    pub residual_mean: f64,
    pub residual_se: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn report(ctx: &mut Context) -> CliResult<()> {
    let start = Instant::now();
    let test = ctx.test_split()?;
    let cases = test.len().min(limit(ctx.cfg.report.cases));
    if cases == 0 {
        return Err(CliError::Config("test split is empty; nothing to report".into()));
    }
    let seed = ctx.cfg.stage_seed(stage::REPORT, 0);
    let samples = ctx.cfg.report.samples;
    let basis = &ctx.problem.basis;
    let a = ctx.problem.operator.matrix();
    let truths: Vec<Vec<f64>> = (0..cases)
        .map(|i| basis.reconstruct_parts(test.alphas.row(i), test.betas.row(i)))
        .collect::<nullcal::Result<_>>()?;
    let mut cells = Vec::new();
    for &rk in &ctx.cfg.ranges {
        let range = load_range(ctx, rk)?;
        for &nk in &ctx.cfg.nulls {
            let null = load_null(ctx, nk)?;
            let per_case = (0..cases)
                .into_par_iter()
                .map(|i| {
                    let y = test.ys.row(i);
                    let case_seed = nullcal::rng::derive_seed(seed, &[i as u64]);
                    let s = cascade_sample(&range, &null, basis, y, samples, case_seed)?;
                    let fit = a * DVector::from_column_slice(&s.mean);
                    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let res = y.iter().zip(fit.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                    Ok((pearson(&s.mean, &truths[i]), res / y_norm))
                })
                .collect::<nullcal::Result<Vec<_>>>()?;
            let (corr, resid): (Vec<f64>, Vec<f64>) = per_case.into_iter().unzip();
            let (pearson_mean, pearson_se) = mean_se(&corr);
            let (residual_mean, residual_se) = mean_se(&resid);
            cells.push(ReportCell {
                range: range_label(rk).into(),
                null: nk.label(),
                cases,
                pearson_mean,
                pearson_se,
                residual_mean,
                residual_se,
            });
        }
    }
    let mut body = String::from("range,null,cases,pearson_mean,pearson_se,residual_mean,residual_se\n");
    for c in &cells {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.range, c.null, c.cases, c.pearson_mean, c.pearson_se, c.residual_mean, c.residual_se
        ));
    }
    ctx.run.write_csv("report/grid.csv", &body)?;
    ctx.run.write_json("report/grid.json", &cells)?;
    ctx.finish("report", start)
}

pub fn run_all(ctx: &mut Context) -> CliResult<()> {
    gen(ctx)?;
    train(ctx, None)?;
    let stats = ctx.cfg.sbc.statistics.clone();
    sbc(ctx, &stats)?;
    map(ctx, ctx.cfg.map.average)?;
    if ctx.cfg.experiment == ExperimentKind::FourierToy {
        sweep(ctx)?;
    }
    report(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn stage_names_parse() {
        assert_eq!(TrainStage::parse("null-vae").unwrap(), TrainStage::NullVae);
        assert!(matches!(TrainStage::parse("nul"), Err(CliError::Config(_))));
    }
}
