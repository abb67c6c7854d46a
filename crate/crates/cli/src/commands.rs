use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use ldpca_core::compositional::clr_discrete_inverse;
use ldpca_core::io::{
    read_counts, read_observations, write_cell_table, write_eigenvalues, write_scores, write_study, write_trace,
    ModelFile,
};
use ldpca_core::simulation::summarize;
use ldpca_core::{
    fit, fit_compositional, init_from_kde, run_study, two_step_pca, Basis, Density, FitResult, Grid, KdeConfig,
    PcaRepresentation, SampleSet, StudyConfig,
};
use serde::Serialize;

use crate::config::{CommonArgs, FileConfig, GridArgs, McemArgs, McemDefaults};
use crate::Outcome;

const DEFAULT_CELLS: usize = 200;
const MAX_LISTED: usize = 20;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with columns group_id,value.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Gaussian KDE bandwidth for the initial estimate [default: 1.5].
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[command(flatten)]
    pub mcem: McemArgs,
}

#[derive(Debug, Args)]
pub struct TwoStepArgs {
    /// CSV with columns group_id,value.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Gaussian KDE bandwidth [default: 2].
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replicates per sample size [default: 100].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Observations per group, comma separated [default: 20,40,80,160].
    #[arg(long, value_delimiter = ',')]
    pub m_list: Option<Vec<usize>>,
    /// KDE bandwidth per entry of --m-list [default: tabulated by sample size].
    #[arg(long, value_delimiter = ',')]
    pub bandwidths: Option<Vec<f64>>,
    /// Groups per replicate [default: 30].
    #[arg(long)]
    pub groups: Option<usize>,
    /// Grid cells on [0, 1] [default: 200].
    #[arg(long)]
    pub cells: Option<usize>,
    #[command(flatten)]
    pub mcem: McemArgs,
}

#[derive(Debug, Args)]
pub struct CompositionalArgs {
    /// CSV with columns group_id,category,count.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub mcem: McemArgs,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn open_input(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Reads observations and builds the grid, listing every value outside it.
fn load_samples(input: &Path, grid_args: &GridArgs, file: &FileConfig) -> Result<(Vec<String>, SampleSet)> {
    let obs = read_observations(open_input(input)?)?;
    let (lo, hi) = obs.range().context("no observations")?;
    let lower = grid_args.lower.or(file.lower).unwrap_or(lo);
    let upper = grid_args.upper.or(file.upper).unwrap_or(hi);
    let cells = grid_args.cells.or(file.cells).unwrap_or(DEFAULT_CELLS);
    let grid = Grid::new(lower, upper, cells)?;
    let offenders: Vec<String> = obs
        .ids
        .iter()
        .zip(&obs.values)
        .flat_map(|(id, vals)| {
            vals.iter()
                .filter(|v| !grid.contains(**v))
                .map(move |v| format!("{id}: {v}"))
        })
        .collect();
    if !offenders.is_empty() {
        let shown = offenders
            .iter()
            .take(MAX_LISTED)
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        let more = offenders.len().saturating_sub(MAX_LISTED);
        let tail = if more > 0 {
            format!(" and {more} more")
        } else {
            String::new()
        };
        bail!(ldpca_core::Error::Input(format!(
            "{} values outside [{lower}, {upper}]: {shown}{tail}",
            offenders.len()
        )));
    }
    Ok((obs.ids, SampleSet::new(grid, obs.values)?))
}

fn write_pca(dir: &Path, pca: &PcaRepresentation, ids: &[String]) -> Result<()> {
    let grid = *pca.grid();
    write_cell_table(
        create(dir, "pca_mean.csv")?,
        &grid,
        &["mean".into()],
        &[pca.mean().values()],
    )?;
    let names: Vec<String> = (1..=pca.n_components()).map(|k| format!("phi_{k}")).collect();
    let cols: Vec<_> = pca.eigenfunctions().iter().map(|f| f.values()).collect();
    write_cell_table(create(dir, "pca_eigenfunctions.csv")?, &grid, &names, &cols)?;
    write_eigenvalues(create(dir, "eigenvalues.csv")?, pca)?;
    write_scores(create(dir, "scores.csv")?, ids, pca.scores())?;
    Ok(())
}

/// One row per group, one column per cell midpoint.
fn write_densities(dir: &Path, grid: &Grid, ids: &[String], densities: &[Density]) -> Result<()> {
    let mut w = create(dir, "densities.csv")?;
    writeln!(w, "# {}", serde_json::to_string(grid)?)?;
    write!(w, "group_id")?;
    for k in 0..grid.n_cells() {
        write!(w, ",{}", grid.midpoint(k))?;
    }
    writeln!(w)?;
    for (id, f) in ids.iter().zip(densities) {
        write!(w, "{id}")?;
        for v in f.values().iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_fit_common(dir: &Path, res: &FitResult) -> Result<()> {
    let mut w = create(dir, "model.json")?;
    ModelFile::new(&res.model, Some(res)).write(&mut w)?;
    writeln!(w)?;
    write_trace(create(dir, "trace.csv")?, &res.trace)?;
    Ok(())
}

fn fit_outcome(res: &FitResult) -> Outcome {
    if res.converged {
        Outcome::Success
    } else {
        log::warn!("stopped after {} iterations without converging", res.iterations);
        Outcome::NotConverged
    }
}

pub fn run_fit(args: &FitArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let cfg = args.mcem.resolve(
        &file,
        McemDefaults {
            r0: 50,
            var_explained: 0.9999,
        },
    );
    cfg.validate()?;
    let kde_cfg = KdeConfig::new(args.bandwidth.or(file.bandwidth).unwrap_or(1.5))?;
    let (ids, data) = load_samples(&args.input, &args.grid, &file)?;
    prepare_out(&args.common.out)?;
    let init = init_from_kde(&data, &kde_cfg, Arc::new(Basis::indicator(*data.grid())))?;
    let res = fit(&data, init, &cfg)?;
    let dir = &args.common.out;
    write_fit_common(dir, &res)?;
    write_pca(dir, &res.pca, &ids)?;
    let densities: Vec<Density> = res.predictions.iter().map(|p| p.density.clone()).collect();
    write_densities(dir, data.grid(), &ids, &densities)?;
    Ok(fit_outcome(&res))
}

pub fn run_twostep(args: &TwoStepArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let kde_cfg = KdeConfig::new(args.bandwidth.or(file.bandwidth).unwrap_or(2.0))?;
    let (ids, data) = load_samples(&args.input, &args.grid, &file)?;
    prepare_out(&args.common.out)?;
    let pca = two_step_pca(&data, &kde_cfg)?;
    let k = pca.n_components();
    let densities = (0..ids.len())
        .map(|i| {
            let z: Vec<f64> = pca.scores().row(i).iter().copied().collect();
            pca.reconstruct_density(&z, k)
        })
        .collect::<ldpca_core::Result<Vec<_>>>()?;
    let dir = &args.common.out;
    write_pca(dir, &pca, &ids)?;
    write_densities(dir, data.grid(), &ids, &densities)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    config: &'a StudyConfig,
    summary: Vec<ldpca_core::simulation::SummaryRow>,
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let mut cfg = StudyConfig::default();
    if let Some(m) = args.m_list.clone().or(file.m_list.clone()) {
        cfg = cfg.with_m_list(m);
    }
    if let Some(h) = args.bandwidths.clone().or(file.bandwidths.clone()) {
        cfg.bandwidths = h;
    }
    cfg.n_replicates = args.replicates.or(file.replicates).unwrap_or(cfg.n_replicates);
    cfg.n_groups = args.groups.or(file.groups).unwrap_or(cfg.n_groups);
    if let Some(cells) = args.cells.or(file.cells) {
        cfg.grid = Grid::new(cfg.grid.lower(), cfg.grid.upper(), cells)?;
    }
    cfg.mcem = args.mcem.resolve(
        &file,
        McemDefaults {
            r0: 10,
            var_explained: 0.99999,
        },
    );
    cfg.seed = cfg.mcem.seed;
    cfg.validate()?;
    prepare_out(&args.common.out)?;
    let rows = run_study(&cfg)?;
    let dir = &args.common.out;
    write_study(create(dir, "study.csv")?, &rows)?;
    let mut w = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(
        &mut w,
        &SimulationSummary {
            config: &cfg,
            summary: summarize(&rows),
        },
    )?;
    writeln!(w)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        log::warn!("{failed} of {} study rows failed", rows.len());
        return Ok(Outcome::NotConverged);
    }
    Ok(Outcome::Success)
}

pub fn run_compositional(args: &CompositionalArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let cfg = args.mcem.resolve(
        &file,
        McemDefaults {
            r0: 10,
            var_explained: 0.99999,
        },
    );
    cfg.validate()?;
    let counts = read_counts(open_input(&args.input)?)?;
    prepare_out(&args.common.out)?;
    let res = fit_compositional(&counts.data, &cfg)?;
    let dir = &args.common.out;
    write_fit_common(dir, &res)?;
    write_eigenvalues(create(dir, "eigenvalues.csv")?, &res.pca)?;
    write_scores(create(dir, "scores.csv")?, &counts.ids, res.pca.scores())?;

    let mean = clr_discrete_inverse(res.pca.mean().values())?;
    let mut w = create(dir, "mean_composition.csv")?;
    writeln!(w, "category,probability")?;
    for (c, p) in counts.categories.iter().zip(mean.probs().iter()) {
        writeln!(w, "{c},{p}")?;
    }

    let directions = res
        .pca
        .eigenfunctions()
        .iter()
        .map(|f| clr_discrete_inverse(f.values()))
        .collect::<ldpca_core::Result<Vec<_>>>()?;
    let mut w = create(dir, "eigen_compositions.csv")?;
    write!(w, "category")?;
    for k in 1..=directions.len() {
        write!(w, ",component_{k}")?;
    }
    writeln!(w)?;
    for (j, c) in counts.categories.iter().enumerate() {
        write!(w, "{c}")?;
        for d in &directions {
            write!(w, ",{}", d.probs()[j])?;
        }
        writeln!(w)?;
    }

    let mut w = create(dir, "compositions.csv")?;
    write!(w, "group_id")?;
    for c in &counts.categories {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for (id, p) in counts.ids.iter().zip(&res.predictions) {
        let pi = clr_discrete_inverse(p.clr.values())?;
        write!(w, "{id}")?;
        for v in pi.probs().iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(fit_outcome(&res))
}
