use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use qbnb_core::synth::{
    gen_synthetic, generations_csv, pairwise_matrix, PairwiseCell, RunRecord, SynthSpec,
};
use qbnb_core::{
    normalize_pair, register, Mode, RegistrationProblem, RigidMotion, SearchConfig, SearchResult,
    SearchStatus, Strategy,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{format_xyz, read_xyz, write_atomic};
use crate::Command;

const CERTIFICATE_MISSING: u8 = 2;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Register {
            mode,
            bound,
            epsilon,
            source,
            target,
            allow_reflections,
            dt_grid,
            strategy,
            max_evals,
            out,
        } => {
            let mode = Mode::from(mode);
            let mut config = SearchConfig::new(
                epsilon,
                bound.into(),
                strategy.map_or(Strategy::default_for(mode), Strategy::from),
            );
            config.allow_reflections = allow_reflections;
            if let Some(cap) = max_evals {
                config.max_evals = cap;
            }
            run_register(mode, &config, &source, &target, dt_grid, &out)
        }
        Command::Synth {
            n,
            sigma,
            seed,
            dim,
            out_prefix,
        } => run_synth(n, sigma, seed, dim, &out_prefix),
        Command::Bench {
            mode,
            bound,
            epsilon_list,
            sigma_list,
            n,
            instances,
            seed,
            dim,
            strategy,
            max_evals,
            per_generation,
            out,
        } => {
            let mode = Mode::from(mode);
            let mut base = SearchConfig::new(
                1.0,
                bound.into(),
                strategy.map_or(Strategy::default_for(mode), Strategy::from),
            );
            if let Some(cap) = max_evals {
                base.max_evals = cap;
            }
            let sweep = Sweep {
                mode,
                base,
                epsilons: epsilon_list,
                sigmas: sigma_list,
                n,
                instances,
                seed,
                dim,
            };
            run_bench(&sweep, per_generation, &out)
        }
        Command::Pairwise {
            dir,
            epsilon,
            allow_reflections,
            out_prefix,
        } => {
            let mut config = SearchConfig::new(epsilon, qbnb_core::BoundKind::Quasi, Strategy::Bfs);
            config.allow_reflections = allow_reflections;
            run_pairwise(&dir, &config, &out_prefix)
        }
    }
}

fn exit_for(status: SearchStatus) -> ExitCode {
    match status {
        SearchStatus::Converged => ExitCode::SUCCESS,
        SearchStatus::MaxEvalsExceeded => ExitCode::from(CERTIFICATE_MISSING),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_register(
    mode: Mode,
    config: &SearchConfig,
    source: &Path,
    target: &Path,
    dt_grid: Option<usize>,
    out: &Path,
) -> Result<ExitCode> {
    config.validate()?;
    if dt_grid.is_some() && mode != Mode::ClosestPoint {
        bail!("--dt-grid is only available with --mode cp");
    }
    let src = read_xyz(source)?;
    let tgt = read_xyz(target)?;
    let np = normalize_pair(&src, &tgt)?;
    let mut problem = RegistrationProblem::new(np.source.clone(), np.target.clone(), mode)?;
    if let Some(resolution) = dt_grid {
        problem = problem.with_grid(resolution)?;
    }
    let result = register(&problem, config)?;
    let mut record = RunRecord::new(None, config, &result);
    // Energies refer to the normalized clouds; the motion maps the input
    // source onto the input target.
    let motion = np.original_motion(&result.minimizer, result.reflected);
    record.result.rotation_vec = motion.rot.as_slice().to_vec();
    record.result.translation = motion.trans;
    write_atomic(out, &record.to_json()?)?;
    println!("ub={:?}", result.ub);
    println!("lb={:?}", result.lb);
    println!("total_evals={}", result.total_evals);
    Ok(exit_for(result.status))
}

#[derive(Serialize)]
struct TruthFile {
    spec: SynthSpec,
    /// Maps the raw source onto the raw target.
    truth: RigidMotion,
    /// Maps the written (normalized) source onto the written target.
    truth_normalized: RigidMotion,
    source_shift: Vec<f64>,
    target_shift: Vec<f64>,
    scale: f64,
}

fn run_synth(n: usize, sigma: f64, seed: u64, dim: usize, prefix: &Path) -> Result<ExitCode> {
    let spec = SynthSpec::new(n, sigma, seed, dim, Mode::ClosestPoint)?;
    let inst = gen_synthetic(&spec)?;
    let truth = TruthFile {
        truth_normalized: inst.truth_normalized(),
        truth: inst.truth.clone(),
        source_shift: inst.source_shift.clone(),
        target_shift: inst.target_shift.clone(),
        scale: inst.scale,
        spec,
    };
    write_atomic(&with_suffix(prefix, "_P.xyz"), &format_xyz(&inst.source))?;
    write_atomic(&with_suffix(prefix, "_Q.xyz"), &format_xyz(&inst.target))?;
    write_atomic(
        &with_suffix(prefix, "_truth.json"),
        &serde_json::to_string_pretty(&truth)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

struct Sweep {
    mode: Mode,
    base: SearchConfig,
    epsilons: Vec<f64>,
    sigmas: Vec<f64>,
    n: usize,
    instances: usize,
    seed: u64,
    dim: usize,
}

struct Job {
    eps_index: usize,
    sigma_index: usize,
    instance: usize,
    spec: SynthSpec,
    config: SearchConfig,
}

fn run_job(job: &Job) -> Result<SearchResult> {
    let inst = gen_synthetic(&job.spec)?;
    let problem = RegistrationProblem::new(inst.source, inst.target, job.spec.mode)?;
    Ok(register(&problem, &job.config)?)
}

fn run_bench(sweep: &Sweep, per_generation: bool, out: &Path) -> Result<ExitCode> {
    if sweep.epsilons.is_empty() || sweep.sigmas.is_empty() {
        bail!("--epsilon-list and --sigma-list must not be empty");
    }
    if sweep.instances == 0 {
        bail!("--instances must be at least 1");
    }
    let mut jobs = Vec::new();
    for (ei, &epsilon) in sweep.epsilons.iter().enumerate() {
        let config = SearchConfig {
            epsilon,
            ..sweep.base.clone()
        };
        config.validate()?;
        for (si, &sigma) in sweep.sigmas.iter().enumerate() {
            for instance in 0..sweep.instances {
                let seed = sweep.seed.wrapping_add(instance as u64);
                jobs.push(Job {
                    eps_index: ei,
                    sigma_index: si,
                    instance,
                    spec: SynthSpec::new(sweep.n, sigma, seed, sweep.dim, sweep.mode)?,
                    config: config.clone(),
                });
            }
        }
    }
    let results: Vec<SearchResult> = jobs.par_iter().map(run_job).collect::<Result<_>>()?;

    let mut csv = String::from(
        "kind,epsilon,sigma,instance,seed,ub,lb,total_evals,generations,status,certificate_valid\n",
    );
    let mut all_converged = true;
    for (jobs, results) in jobs.chunks(sweep.instances).zip(results.chunks(sweep.instances)) {
        let (eps, sigma) = (jobs[0].config.epsilon, jobs[0].spec.sigma);
        for (job, r) in jobs.iter().zip(results) {
            all_converged &= r.status == SearchStatus::Converged;
            let status = match r.status {
                SearchStatus::Converged => "converged",
                SearchStatus::MaxEvalsExceeded => "max_evals_exceeded",
            };
            let _ = writeln!(
                csv,
                "run,{eps:?},{sigma:?},{},{},{:?},{:?},{},{},{status},{}",
                job.instance,
                job.spec.seed,
                r.ub,
                r.lb,
                r.total_evals,
                r.generations.len(),
                r.certificate_valid
            );
            if per_generation {
                let path = with_suffix(
                    out,
                    &format!(
                        ".e{}_s{}_i{}.generations.csv",
                        job.eps_index, job.sigma_index, job.instance
                    ),
                );
                write_atomic(&path, &generations_csv(&r.generations))?;
            }
        }
        let mean = results.iter().map(|r| r.total_evals as f64).sum::<f64>() / results.len() as f64;
        let _ = writeln!(csv, "mean,{eps:?},{sigma:?},,,,,{mean:?},,,");
    }
    write_atomic(out, &csv)?;
    Ok(if all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CERTIFICATE_MISSING)
    })
}

#[derive(Serialize)]
struct PairRecord {
    source: String,
    target: String,
    distance: Option<f64>,
    lb: Option<f64>,
    motion: Option<RigidMotion>,
    reflected: Option<bool>,
    certificate_valid: bool,
    error: Option<String>,
}

fn run_pairwise(dir: &Path, config: &SearchConfig, prefix: &Path) -> Result<ExitCode> {
    config.validate()?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    files.sort();
    if files.len() < 2 {
        bail!("need at least two .xyz files in {}, found {}", dir.display(), files.len());
    }
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let clouds = files.iter().map(|p| read_xyz(p)).collect::<Result<Vec<_>>>()?;
    let matrix = pairwise_matrix(&clouds, Mode::Bijective, config)?;

    let mut csv = String::new();
    let _ = writeln!(csv, "name,{}", names.join(","));
    let mut records = Vec::new();
    let mut all_certified = true;
    for (i, row) in matrix.cells.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .map(|c| c.distance().map(|d| format!("{d:?}")).unwrap_or_default())
            .collect();
        let _ = writeln!(csv, "{},{}", names[i], cells.join(","));
        for (j, cell) in row.iter().enumerate() {
            let mut rec = PairRecord {
                source: names[i].clone(),
                target: names[j].clone(),
                distance: cell.distance(),
                lb: None,
                motion: None,
                reflected: None,
                certificate_valid: false,
                error: None,
            };
            match cell {
                PairwiseCell::Diagonal => rec.certificate_valid = true,
                PairwiseCell::Solved {
                    lb,
                    motion,
                    reflected,
                    certificate_valid,
                    ..
                } => {
                    rec.lb = Some(*lb);
                    rec.motion = Some(motion.clone());
                    rec.reflected = Some(*reflected);
                    rec.certificate_valid = *certificate_valid;
                }
                PairwiseCell::Failed(msg) => {
                    eprintln!("warning: {} -> {}: {msg}", names[i], names[j]);
                    rec.error = Some(msg.clone());
                }
            }
            all_certified &= rec.certificate_valid;
            records.push(rec);
        }
    }
    write_atomic(&with_suffix(prefix, "_matrix.csv"), &csv)?;
    write_atomic(
        &with_suffix(prefix, "_motions.json"),
        &serde_json::to_string_pretty(&records)?,
    )?;
    Ok(if all_certified {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CERTIFICATE_MISSING)
    })
}
