use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use vebubble::config::{parse_config, preset, RunConfig};
use vebubble::solver::Simulation;

/// Two-phase Navier–Stokes / Oldroyd-B bubble simulations.
#[derive(Parser, Debug)]
#[command(name = "vebubble", version)]
struct Args {
    /// TOML configuration, merged over the preset when one is named
    #[arg(long)]
    config: Option<PathBuf>,
    /// retraction, rising_bubble[:c0=..,lambda_plus=..] or
    /// rising_bubble_gvar[:c_plus=..,c_minus=..]
    #[arg(long)]
    preset: Option<String>,
    /// output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_fp_iters: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// final time
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    no_xfem: bool,
    #[arg(long)]
    variable_g: bool,
    #[arg(long)]
    snapshot_cadence: Option<usize>,
    /// coarse mesh size is 2 / n_c
    #[arg(long)]
    n_c: Option<usize>,
    #[arg(long)]
    refine_factor: Option<f64>,
    #[arg(long)]
    interface_n: Option<usize>,
    /// use the newest velocity in the tensor sweep
    #[arg(long)]
    gauss_seidel: bool,
    /// write the assembled systems of every step
    #[arg(long)]
    dump_matrices: bool,
}

fn build_config(a: &Args) -> Result<RunConfig> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), p) => parse_config(path, p.as_deref()).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(p)) => preset(p)?,
        (None, None) => bail!("either --config or --preset is required"),
    };
    if let Some(v) = a.tol {
        cfg.tol = v;
    }
    if let Some(v) = a.max_fp_iters {
        cfg.max_fp_iters = v;
    }
    if let Some(v) = a.dt {
        cfg.dt = v;
    }
    if let Some(v) = a.t_end {
        cfg.t_end = v;
    }
    if let Some(v) = a.snapshot_cadence {
        cfg.snapshot_cadence = v;
    }
    if let Some(v) = a.n_c {
        cfg.n_c = v;
    }
    if let Some(v) = a.refine_factor {
        cfg.refine_factor = v;
    }
    if let Some(v) = a.interface_n {
        cfg.interface_n = v;
    }
    cfg.xfem &= !a.no_xfem;
    cfg.variable_g |= a.variable_g;
    cfg.gauss_seidel |= a.gauss_seidel;
    cfg.dump_matrices |= a.dump_matrices;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let args = Args::parse();
    let cfg = build_config(&args)?;
    let out = &args.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let n = cfg.n_steps();
    let cadence = cfg.snapshot_cadence;
    let snap = |k: usize| cadence > 0 && (k.is_multiple_of(cadence) || k == n);
    let mut sim = Simulation::new(cfg.clone())?;
    let mut csv = vebubble::output::DiagnosticsWriter::create(&out.join("diagnostics.csv"))?;
    if snap(0) {
        sim.write_snapshot(out)?;
    }
    eprintln!("E_total(0) = {:.10e}, {n} steps", sim.energy()?.total());
    for k in 1..=n {
        let rep = match sim.advance(Some(out)) {
            Ok(r) => r,
            Err(e) => {
                sim.write_snapshot(out)?;
                return Err(e).with_context(|| format!("step {k} failed; last accepted state written"));
            }
        };
        csv.push(&rep.row)?;
        if snap(k) {
            sim.write_snapshot(out)?;
        }
        let r = &rep.row;
        eprintln!(
            "step {k:6} t={:.4e} E={:.8e} D={:+.3e} Vc={:+.4e} loss={:+.2e} r={:.3} it={} res={:.1e}",
            r.t,
            r.e_total,
            r.d,
            r.v_c,
            r.vol_loss,
            r.r,
            r.fp_iters,
            rep.residual.max()
        );
    }
    Ok(())
}
