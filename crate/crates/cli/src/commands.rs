//! Subcommand implementations.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use anicemc::diagnostics::{
    density_raster, error_curve, ess_report, rhat, reference_moments_2d, reference_moments_hmc,
    EssReport, RefMoments, RhatReport,
};
use anicemc::nice::NiceModel;
use anicemc::samplers::{fit_init_sigma, run_chain, ChainDump, RunConfig, TransitionKernel};
use anicemc::targets::EnergyTarget;
use anicemc::training::train as train_model;
use anicemc::util::atomic_write;
use anicemc::{Error, Result};

use crate::config::{ExperimentConfig, SigmaSpec};

fn resolved_sigma(cfg: &ExperimentConfig, target: &dyn EnergyTarget) -> Result<f64> {
    match cfg.init_sigma {
        SigmaSpec::Fixed(v) => Ok(v),
        SigmaSpec::Fit => {
            let sigma = fit_init_sigma(target, 10_000, cfg.reference_seed)?;
            eprintln!("fitted init_sigma = {sigma:.4} from a pilot rejection sample");
            Ok(sigma)
        }
    }
}

fn build_kernel(cfg: &ExperimentConfig, target: &dyn EnergyTarget) -> Result<TransitionKernel> {
    match cfg.kernel.as_str() {
        "hmc" => Ok(TransitionKernel::Hmc {
            step_size: cfg.hmc_step_size,
            leapfrog_steps: cfg.hmc_leapfrog,
        }),
        "anicemc" => {
            let path = cfg.checkpoint.as_ref().ok_or_else(|| {
                Error::Config("kernel anicemc needs checkpoint = <path>".into())
            })?;
            if !path.exists() {
                return Err(Error::Config(format!("checkpoint {} not found", path.display())));
            }
            let model = NiceModel::load(path)?;
            if model.x_dim != target.dim() {
                return Err(Error::Shape(format!(
                    "checkpoint has x_dim {} but target {} has dim {}",
                    model.x_dim,
                    target.name(),
                    target.dim()
                )));
            }
            Ok(TransitionKernel::NiceMh { model })
        }
        other => Err(Error::Config(format!("unknown kernel {other:?} (hmc or anicemc)"))),
    }
}

pub fn train(cfg: ExperimentConfig) -> Result<()> {
    let target = cfg.build_target()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    atomic_write(&cfg.out_dir.join("config.effective.conf"), |f| {
        f.write_all(cfg.emit().as_bytes())?;
        Ok(())
    })?;
    let sigma = resolved_sigma(&cfg, target.as_ref())?;
    let mut tc = cfg.train_config(Some(cfg.out_dir.clone()));
    tc.init_sigma = sigma;
    eprintln!(
        "training {} for {} iterations (B={}, M={}, batch={}, lr={})",
        target.name(),
        tc.total_iterations,
        tc.b_max,
        tc.m_max,
        tc.batch_size,
        tc.learning_rate
    );
    let outcome = train_model(target.as_ref(), &tc, cfg.seed)?;
    let ckpt = cfg.out_dir.join("checkpoint_final.ckpt");
    println!("checkpoint: {}", ckpt.display());
    println!("log: {}", cfg.out_dir.join("train_log.jsonl").display());
    if let Some(last) = outcome.log.last() {
        println!(
            "final losses: d={:.4} g={:.4}; buffer generation {}",
            last.d_loss, last.g_loss, last.buffer_generation
        );
        if let Some(snap) = &last.snapshot {
            println!(
                "final snapshot: acceptance {:.3}, ess {:?} ({})",
                snap.acceptance, snap.ess, snap.statistic
            );
        }
    }
    Ok(())
}

pub fn sample(cfg: ExperimentConfig) -> Result<()> {
    let target = cfg.build_target()?;
    let kernel = build_kernel(&cfg, target.as_ref())?;
    let sigma = resolved_sigma(&cfg, target.as_ref())?;
    let run = RunConfig::new(cfg.chains, cfg.burn_in, cfg.steps, cfg.seed).with_init_sigma(sigma);
    let dump = run_chain(&kernel, target.as_ref(), &run)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let stem = format!("samples_{}_{}", target.name(), cfg.kernel);
    let (csv, json) = dump.write_files(&cfg.out_dir, &stem)?;
    let mean_acc = anicemc::util::mean(&dump.meta.acceptance_rate);
    println!("samples: {}", csv.display());
    println!("sidecar: {}", json.display());
    println!(
        "{} chains x {} steps, acceptance {:.3}, transition loop {:.2}s",
        dump.meta.n_chains, dump.meta.n_steps, mean_acc, dump.meta.wall_time_seconds
    );
    Ok(())
}

/// Reference moments for ESS, per the target family: exact rejection draws
/// for the analytic 2D energies, a long well-tuned HMC run for posteriors.
fn reference_for(
    cfg: &ExperimentConfig,
    target: &dyn EnergyTarget,
) -> Result<(Vec<RefMoments>, Option<RefMoments>, String)> {
    if target.rejection_envelope().is_some() {
        let (per_dim, summary) =
            reference_moments_2d(target, cfg.reference_draws, cfg.reference_seed)?;
        let desc = format!("rejection({} draws)", cfg.reference_draws);
        Ok((per_dim, summary, desc))
    } else {
        let ref_steps = (cfg.reference_draws / cfg.chains).max(10);
        let per_dim = reference_moments_hmc(
            target,
            cfg.hmc_step_size,
            cfg.hmc_leapfrog,
            cfg.chains,
            cfg.burn_in,
            ref_steps,
            cfg.reference_seed,
        )?;
        let desc = format!("hmc({} chains x {} steps)", cfg.chains, ref_steps);
        Ok((per_dim, None, desc))
    }
}

fn rhat_for(dump: &ChainDump, target: &dyn EnergyTarget) -> Result<RhatReport> {
    match target.summary_statistic() {
        Some(stat) => {
            let series: Vec<Vec<f64>> = (0..dump.meta.n_chains)
                .map(|c| dump.stat_series(c, |x| stat.eval(x)))
                .collect();
            rhat(&series, stat.name())
        }
        None => {
            let mut worst: Option<RhatReport> = None;
            for d in 0..dump.meta.dim {
                let series: Vec<Vec<f64>> =
                    (0..dump.meta.n_chains).map(|c| dump.dim_series(c, d)).collect();
                let r = rhat(&series, &format!("x{d}"))?;
                if worst.as_ref().map_or(true, |w| r.rhat > w.rhat) {
                    worst = Some(r);
                }
            }
            Ok(worst.expect("at least one dimension"))
        }
    }
}

#[derive(Serialize)]
struct BenchmarkRow {
    kernel: String,
    min_ess: f64,
    ess_per_second: f64,
    acceptance: f64,
    rhat: f64,
    wall_time_seconds: f64,
    per_dim_ess: Vec<f64>,
}

#[derive(Serialize)]
struct BenchmarkReport {
    target: String,
    statistic: String,
    chains: usize,
    burn_in: usize,
    steps: usize,
    seed: u64,
    reference: String,
    rows: Vec<BenchmarkRow>,
}

pub fn benchmark(cfg: ExperimentConfig) -> Result<()> {
    let target = cfg.build_target()?;
    let sigma = resolved_sigma(&cfg, target.as_ref())?;
    let (per_dim_refs, summary_ref, ref_desc) = reference_for(&cfg, target.as_ref())?;

    let mut anicemc_cfg = cfg.clone();
    anicemc_cfg.kernel = "anicemc".into();
    let nice_kernel = build_kernel(&anicemc_cfg, target.as_ref())?;
    let hmc_kernel = TransitionKernel::Hmc {
        step_size: cfg.hmc_step_size,
        leapfrog_steps: cfg.hmc_leapfrog,
    };

    let run = RunConfig::new(cfg.chains, cfg.burn_in, cfg.steps, cfg.seed).with_init_sigma(sigma);
    let mut rows = Vec::new();
    let mut statistic = String::new();
    for (name, kernel) in [("anicemc", &nice_kernel), ("hmc", &hmc_kernel)] {
        eprintln!("running {name} ({} chains x {} steps)...", run.n_chains, run.burn_in + run.n_steps);
        let dump = run_chain(kernel, target.as_ref(), &run)?;
        let summary = match (target.summary_statistic(), &summary_ref) {
            (Some(stat), Some(r)) => Some((stat, *r)),
            _ => None,
        };
        let report = ess_report(&dump, &per_dim_refs, summary, &ref_desc)?;
        let r = rhat_for(&dump, target.as_ref())?;
        statistic = report.statistic.clone();
        rows.push(BenchmarkRow {
            kernel: name.to_string(),
            min_ess: report.min_ess,
            ess_per_second: report.ess_per_second,
            acceptance: anicemc::util::mean(&dump.meta.acceptance_rate),
            rhat: r.rhat,
            wall_time_seconds: dump.meta.wall_time_seconds,
            per_dim_ess: report.per_dim.clone(),
        });
    }

    let report = BenchmarkReport {
        target: target.name().to_string(),
        statistic,
        chains: cfg.chains,
        burn_in: cfg.burn_in,
        steps: cfg.steps,
        seed: cfg.seed,
        reference: ref_desc,
        rows,
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    atomic_write(&cfg.out_dir.join("benchmark.json"), |f| {
        serde_json::to_writer_pretty(&mut *f, &report)
            .map_err(|e| Error::Format(format!("benchmark encode: {e}")))?;
        writeln!(f)?;
        Ok(())
    })?;

    let table = render_table(&report);
    print!("{table}");
    atomic_write(&cfg.out_dir.join("benchmark.txt"), |f| {
        f.write_all(table.as_bytes())?;
        Ok(())
    })?;
    println!("written: {}", cfg.out_dir.join("benchmark.json").display());
    Ok(())
}

fn render_table(r: &BenchmarkReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "target {} | statistic {} | {} chains x {} steps (burn-in {}) | seed {}\nreference: {}\n",
        r.target, r.statistic, r.chains, r.steps, r.burn_in, r.seed, r.reference
    ));
    s.push_str(&format!(
        "{:<10} {:>12} {:>14} {:>11} {:>9} {:>9}\n",
        "kernel", "ESS", "ESS/s", "acceptance", "R-hat", "wall_s"
    ));
    for row in &r.rows {
        s.push_str(&format!(
            "{:<10} {:>12.2} {:>14.1} {:>11.3} {:>9.3} {:>9.2}\n",
            row.kernel, row.min_ess, row.ess_per_second, row.acceptance, row.rhat,
            row.wall_time_seconds
        ));
    }
    s
}

#[derive(Serialize)]
struct DiagnoseReport {
    target: String,
    dump_kernel: String,
    ess: EssReport,
    rhat: RhatReport,
}

pub fn diagnose(cfg: ExperimentConfig, dump_path: &Path, raster: Option<&Path>) -> Result<()> {
    let sidecar = dump_path.with_extension("json");
    if !dump_path.exists() || !sidecar.exists() {
        return Err(Error::Config(format!(
            "dump {} (and sidecar {}) must exist",
            dump_path.display(),
            sidecar.display()
        )));
    }
    let dump = ChainDump::read_files(dump_path, &sidecar)?;
    let target = cfg.build_target()?;
    if dump.meta.target_name != target.name() {
        return Err(Error::Config(format!(
            "dump was sampled from {:?} but the config names {:?}",
            dump.meta.target_name,
            target.name()
        )));
    }

    let (per_dim_refs, summary_ref, ref_desc) = reference_for(&cfg, target.as_ref())?;
    let summary = match (target.summary_statistic(), &summary_ref) {
        (Some(stat), Some(r)) => Some((stat, *r)),
        _ => None,
    };
    let ess = ess_report(&dump, &per_dim_refs, summary, &ref_desc)?;
    let r = rhat_for(&dump, target.as_ref())?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let report =
        DiagnoseReport { target: target.name().into(), dump_kernel: dump.meta.kernel.clone(), ess, rhat: r };
    atomic_write(&cfg.out_dir.join("diagnose.json"), |f| {
        serde_json::to_writer_pretty(&mut *f, &report)
            .map_err(|e| Error::Format(format!("report encode: {e}")))?;
        writeln!(f)?;
        Ok(())
    })?;
    println!(
        "ESS ({}) = {:.2}, ESS/s = {:.1}, R-hat ({}) = {:.4}",
        report.ess.statistic, report.ess.min_ess, report.ess.ess_per_second, report.rhat.statistic,
        report.rhat.rhat
    );

    // error-vs-length curve for targets with a conventional summary statistic
    if let (Some(stat), Some(sref)) = (target.summary_statistic(), &summary_ref) {
        let curve = error_curve(&dump, stat, sref.mean, sref.var.sqrt());
        atomic_write(&cfg.out_dir.join("error_curve.csv"), |f| {
            let mut w = std::io::BufWriter::new(f);
            writeln!(w, "length,mae_mean,mae_std")?;
            for p in &curve {
                writeln!(w, "{},{},{}", p.length, p.mae_mean, p.mae_std)?;
            }
            w.flush()?;
            Ok(())
        })?;
        println!("error curve: {}", cfg.out_dir.join("error_curve.csv").display());
    }

    if dump.meta.dim == 2 {
        let counts = density_raster(&dump, cfg.raster_grid, cfg.raster_halfwidth)?;
        let path = raster
            .map(Path::to_path_buf)
            .unwrap_or_else(|| cfg.out_dir.join("density.pgm"));
        write_pgm(&path, &counts, cfg.raster_grid)?;
        println!("density raster: {}", path.display());
    }
    println!("report: {}", cfg.out_dir.join("diagnose.json").display());
    Ok(())
}

/// Binary PGM with linear grayscale, brightest at the modal bin; rows are
/// flipped so larger `y` sits at the top of the image.
fn write_pgm(path: &Path, counts: &[u64], grid: usize) -> Result<()> {
    let max = counts.iter().max().copied().unwrap_or(0).max(1);
    atomic_write(path, |f| {
        let mut w = std::io::BufWriter::new(f);
        write!(w, "P5\n{grid} {grid}\n255\n")?;
        for row in (0..grid).rev() {
            let mut line = Vec::with_capacity(grid);
            for col in 0..grid {
                let c = counts[row * grid + col];
                line.push(((c * 255) / max) as u8);
            }
            w.write_all(&line)?;
        }
        w.flush()?;
        Ok(())
    })
}
