use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use psm::data::{Bounds, Dataset, Estimate, GlyphMask, MixtureComponent, Toy2D, Toy2DKind};
use psm::flow::{self, ComposedModel, GridOptions, IntegrationConfig};
use psm::train::{run_partition, Manifest, MANIFEST_FILE};
use psm::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{ModelSection, PartitionSection, RunConfig, ScheduleSection, TrainSection, RUN_CONFIG_FILE};
use crate::{invalid, CompareArgs, DataKind, GridArgs, MakeDataArgs, NllArgs, SampleArgs, TrainArgs, Via};

fn need<T>(v: Option<T>, field: &str) -> anyhow::Result<T> {
    v.ok_or_else(|| invalid(field, "required for this kind"))
}

fn point(v: &[f64], field: &str) -> anyhow::Result<Point> {
    match v {
        [x, y] => Ok([*x, *y]),
        _ => Err(invalid(field, format!("expected 2 values, got {}", v.len()))),
    }
}

fn data_kind(a: &MakeDataArgs) -> anyhow::Result<Toy2DKind> {
    Ok(match a.kind {
        DataKind::Gaussian => Toy2DKind::Gaussian {
            mean: point(a.mean.as_deref().unwrap_or(&[0.0, 0.0]), "mean")?,
            var: a.var.unwrap_or(1.0),
        },
        DataKind::Ring => {
            return Ok(Toy2D::ring_mixture(
                need(a.components, "components")?,
                a.radius.unwrap_or(2.0),
                a.var.unwrap_or(0.05),
                0,
            )?
            .kind)
        }
        DataKind::Mixture => {
            let weights = need(a.weights.clone(), "weights")?;
            let means: Vec<Point> = need(a.means.as_deref(), "means")?
                .split(';')
                .map(|m| {
                    let v: Vec<f64> = m
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| invalid("means", e.to_string()))?;
                    point(&v, "means")
                })
                .collect::<anyhow::Result<_>>()?;
            let vars = need(a.vars.clone(), "vars")?;
            if means.len() != weights.len() {
                return Err(invalid("means", format!("{} means for {} weights", means.len(), weights.len())));
            }
            let vars = match vars.len() {
                1 => vec![vars[0]; weights.len()],
                n if n == weights.len() => vars,
                n => return Err(invalid("vars", format!("{n} variances for {} weights", weights.len()))),
            };
            Toy2DKind::GaussianMixture(
                weights
                    .iter()
                    .zip(means)
                    .zip(vars)
                    .map(|((&weight, mean), var)| MixtureComponent { weight, mean, var })
                    .collect(),
            )
        }
        DataKind::Checkerboard => Toy2DKind::Checkerboard {
            cells: a.cells.unwrap_or(4),
            scale: a.scale.unwrap_or(2.0),
        },
        DataKind::Moons => Toy2DKind::TwoMoons {
            noise: a.noise.unwrap_or(0.1),
        },
        DataKind::Rings => Toy2DKind::Rings {
            radii: need(a.radii.clone(), "radii")?,
            noise: a.noise.unwrap_or(0.05),
        },
        DataKind::Glyph => {
            let mask = GlyphMask::read_pgm(&need(a.mask.clone(), "mask")?)?;
            let b = a.bounds.clone().unwrap_or_else(|| vec![-2.0, 2.0, -2.0, 2.0]);
            Toy2DKind::Glyph {
                mask,
                bounds: bounds(&b)?,
            }
        }
    })
}

fn bounds(v: &[f64]) -> anyhow::Result<Bounds> {
    match v {
        [x0, x1, y0, y1] => Ok(Bounds::new((*x0, *x1), (*y0, *y1))?),
        _ => Err(invalid("bounds", "expected xmin,xmax,ymin,ymax")),
    }
}

pub fn make_data(a: MakeDataArgs) -> anyhow::Result<()> {
    let dist = Toy2D::new(data_kind(&a)?, a.seed)?;
    let data = Dataset::new(dist.sample(a.n)?)?;
    data.write(&a.out)?;
    let (mean, std) = data.summary();
    println!("n\t{}", data.len());
    println!("mean\t{}\t{}", mean[0], mean[1]);
    println!("std\t{}\t{}", std[0], std[1]);
    Ok(())
}

fn default_workers() -> anyhow::Result<usize> {
    match std::env::var("PSM_WORKERS") {
        Ok(v) => v.trim().parse().map_err(|_| invalid("PSM_WORKERS", format!("not a count: {v:?}"))),
        Err(_) => Ok(1),
    }
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let base = match &a.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        mode: a.mode.map(Into::into),
        label: a.label,
        dataset: a.dataset,
        out_dir: a.out_dir,
        workers: a.workers,
        schedule: ScheduleSection { c: a.c },
        partition: PartitionSection {
            boundaries: a.boundaries,
            blocks: a.blocks,
        },
        model: ModelSection { hidden: a.hidden },
        train: TrainSection {
            batch_size: a.batch_size,
            lr: a.lr,
            updates_per_block: a.updates_per_block,
            seed: a.seed,
            t_floor: a.t_floor,
        },
    };
    let (run, resolved) = base.overlay(flags).resolve(default_workers()?)?;

    std::fs::create_dir_all(&run.out_dir).with_context(|| format!("creating {}", run.out_dir.display()))?;
    let config_path = run.out_dir.join(RUN_CONFIG_FILE);
    std::fs::write(&config_path, resolved.to_toml()).with_context(|| format!("writing {}", config_path.display()))?;

    let data = Dataset::read(&run.dataset)?;
    let outcome = run_partition(&run.partition, run.mode, &data, &run.train, &run.spec, run.workers, Some(&run.out_dir))?;
    let mut manifest = outcome.manifest.clone();
    manifest.label = run.label.clone();
    manifest.dataset = Some(run.dataset.display().to_string());
    manifest.write(&run.out_dir)?;

    for (entry, result) in manifest.blocks.iter().zip(&outcome.results) {
        let mut line = format!("block {:>4} [{:.4}, {:.4}] ", entry.index, entry.t_start, entry.t_end);
        match result {
            Ok(o) => {
                let r = &o.report;
                let _ = write!(
                    line,
                    "loss {:.4} -> {:.4} curve",
                    r.initial_loss.unwrap_or(f64::NAN),
                    r.final_loss.unwrap_or(f64::NAN)
                );
                for v in &r.loss_curve {
                    let _ = write!(line, " {v:.3}");
                }
                let _ = write!(line, " {:.2}s", r.wall_seconds);
            }
            Err(e) => {
                let _ = write!(line, "FAILED: {e}");
            }
        }
        println!("{line}");
    }
    println!(
        "wall {:.2}s  slowest block {:.2}s  total compute {:.2}s  workers {}",
        outcome.wall_seconds,
        manifest.max_block_seconds(),
        manifest.sum_block_seconds(),
        run.workers
    );
    println!("manifest {}", run.out_dir.join(MANIFEST_FILE).display());
    let failed = outcome.failed_blocks();
    if !failed.is_empty() {
        return Err(anyhow!("{} block(s) failed: {:?}", failed.len(), failed));
    }
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<(Manifest, ComposedModel)> {
    let manifest = Manifest::read(path)?;
    let dir: PathBuf = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let model = ComposedModel::from_manifest(&manifest, &dir)?;
    Ok((manifest, model))
}

/// Mean NLL and its standard error; fails if any point's integration failed.
fn mean_nll(model: &ComposedModel, data: &Dataset, cfg: &IntegrationConfig) -> anyhow::Result<Estimate> {
    let results = flow::log_likelihood_batch(model, &data.points, cfg)?;
    let mut nll = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(lp) => nll.push(-lp),
            Err(e) => failures.push((i, e)),
        }
    }
    if let Some((i, e)) = failures.into_iter().next() {
        return Err(anyhow::Error::new(e).context(format!("likelihood failed at data point {i}")));
    }
    Ok(Estimate::from_samples(&nll))
}

pub fn nll(a: NllArgs) -> anyhow::Result<()> {
    let (_, model) = load(&a.manifest)?;
    let data = Dataset::read(&a.data)?;
    let cfg = IntegrationConfig::forward(a.integration.method.into(), a.integration.steps, model.t_floor())?;
    let est = mean_nll(&model, &data, &cfg)?;
    println!("n\t{}", data.len());
    println!("nll_nats\t{}", est.mean);
    println!("nll_se\t{}", est.stderr);
    println!("bits_per_dim\t{}", flow::nats_to_bits_per_dim(est.mean, 2));
    Ok(())
}

pub fn sample(a: SampleArgs) -> anyhow::Result<()> {
    if a.n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let (_, model) = load(&a.manifest)?;
    // Latents use a stream of their own; SDE noise uses streams 0..n.
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    rng.set_stream(u64::MAX);
    let zs: Vec<Point> = (0..a.n).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    let results = match a.via {
        Via::Ode => {
            let cfg = IntegrationConfig::backward(a.integration.method.into(), a.integration.steps, model.t_floor())?;
            flow::generate_ode_batch(&model, &zs, &cfg)?
        }
        Via::Sde => flow::generate_sde_batch(&model, &zs, a.integration.steps, a.seed)?,
    };
    let mut points = Vec::with_capacity(a.n);
    for (i, r) in results.into_iter().enumerate() {
        points.push(r.with_context(|| format!("sample {i} (seed {}) failed", a.seed))?);
    }
    let data = Dataset::new(points)?;
    data.write(&a.out)?;
    let (mean, std) = data.summary();
    println!("n\t{}", data.len());
    println!("mean\t{}\t{}", mean[0], mean[1]);
    println!("std\t{}\t{}", std[0], std[1]);
    Ok(())
}

pub fn grid(a: GridArgs) -> anyhow::Result<()> {
    let (_, model) = load(&a.manifest)?;
    let b = bounds(&a.bounds)?;
    let cfg = IntegrationConfig::forward(a.integration.method.into(), a.integration.steps, model.t_floor())?;
    let grid = flow::density_grid(&model, &b, a.res, &cfg, GridOptions { threads: a.threads })?;
    grid.write(&a.out)?;
    let failed = grid.failed_cells();
    if failed > 0 {
        eprintln!("warning: {failed} cell(s) failed and are written as nan");
    }
    println!("cells\t{}", grid.log_density.len());
    println!("failed\t{failed}");
    println!("mass\t{}", grid.trapezoid_mass());
    Ok(())
}

pub const COMPARE_HEADER: &str =
    "label\tmode\tblocks\tnll\tnll_se\tbits_per_dim\tmax_block_seconds\tsum_block_seconds\tparallel_time";

pub fn compare(a: CompareArgs) -> anyhow::Result<()> {
    let data = Dataset::read(&a.data)?;
    let runs: Vec<(Manifest, ComposedModel)> = a.manifests.iter().map(|p| load(p)).collect::<anyhow::Result<_>>()?;
    let schedule = runs[0].0.schedule;
    if let Some(((m, _), path)) = runs.iter().zip(&a.manifests).find(|((m, _), _)| m.schedule != schedule) {
        return Err(invalid(
            "manifests",
            format!("{} uses schedule c = {} but the first run uses c = {}", path.display(), m.schedule.c, schedule.c),
        ));
    }
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (manifest, model) in &runs {
        let cfg = IntegrationConfig::forward(a.integration.method.into(), a.integration.steps, model.t_floor())?;
        let est = mean_nll(model, &data, &cfg)?;
        let blocks = manifest.blocks.len();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}\t{:.3}\t{}x{:.4}h",
            manifest.display_label(),
            manifest.mode.label(),
            blocks,
            est.mean,
            est.stderr,
            flow::nats_to_bits_per_dim(est.mean, 2),
            manifest.max_block_seconds(),
            manifest.sum_block_seconds(),
            blocks,
            manifest.max_block_seconds() / 3600.0
        );
    }
    match &a.out {
        Some(p) => std::fs::write(p, &out).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{out}"),
    }
    Ok(())
}
