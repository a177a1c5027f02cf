use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use bellqmc::bell::PauliString;
use bellqmc::config::RunConfig;
use bellqmc::driver::{self, merge_chains, run_chain, ChainParams};
use bellqmc::ed::{self, SymmetryGroup};
use bellqmc::estimators::{renyi2_from, Probe};
use bellqmc::ext_ensemble::{run_node, NodeParams, TiMethod};
use bellqmc::lattice::{vertex_block_region, wilson_loop, Boundary};
use bellqmc::models::ModelSpec;
use bellqmc::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bellqmc", version, about = "Bell-basis SSE for Ising chains and Z2 gauge theory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Master seed, overriding `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrate and measure the observables of a config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Thermodynamic integration over the lambda grid of a config.
    Ti {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Exact-diagonalization reference values as JSON.
    Oracle {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, value_enum, default_value = "open")]
        boundary: BoundaryArg,
        /// Region for the Renyi-2 entropy, as in config files.
        #[arg(long)]
        region: Option<String>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick self-test against exact diagonalization at tiny sizes.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Tfim,
    Lgt,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Open,
    Periodic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, common } => cmd_run(&config, &common),
        Command::Ti { config, common } => cmd_ti(&config, &common),
        Command::Oracle { model, l, h, beta, boundary, region, out } => {
            cmd_oracle(model, l, h, beta, boundary, region.as_deref(), out)
        }
        Command::Check { seed } => cmd_check(seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig { .. } | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn load(path: &PathBuf, common: &Common) -> bellqmc::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn threads(common: &Common) -> usize {
    common.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
}

fn cmd_run(path: &PathBuf, common: &Common) -> bellqmc::Result<ExitCode> {
    let cfg = load(path, common)?;
    let out = driver::run(&cfg, threads(common))?;
    driver::write_run(&cfg.output_dir, &out, cfg.run.write_checkpoints)?;
    let s = &out.summary;
    println!("energy per copy {:.6} +- {:.6}", s.energy.value, s.energy.error);
    for r in &s.results {
        println!("{} {} {:.6} +- {:.6}", r.observable, r.label, r.mean, r.stderr);
    }
    for f in &s.fits {
        println!("fit {}: slope {:.4} +- {:.4}, intercept {:.4} +- {:.4}", f.name, f.fit.slope, f.fit.slope_err, f.fit.intercept, f.fit.intercept_err);
    }
    println!("wrote {}", cfg.output_dir.display());
    if s.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (name, err) in &s.failures {
            eprintln!("failed {name}: {err}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_ti(path: &PathBuf, common: &Common) -> bellqmc::Result<ExitCode> {
    let cfg = load(path, common)?;
    let out = driver::run_ti(&cfg, threads(common))?;
    driver::write_ti(&cfg.output_dir, &out)?;
    let s = &out.summary;
    println!("S2({}) = {:.6} +- {:.6} from e2", s.region, s.s2_e2.value, s.s2_e2.error);
    if let Some(e1) = s.s2_e1 {
        println!("S2({}) = {:.6} +- {:.6} from e1", s.region, e1.value, e1.error);
    }
    println!("wrote {}", cfg.output_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(
    model: ModelArg,
    l: usize,
    h: f64,
    beta: f64,
    boundary: BoundaryArg,
    region: Option<&str>,
    out: Option<PathBuf>,
) -> bellqmc::Result<ExitCode> {
    let boundary = match boundary {
        BoundaryArg::Open => Boundary::Open,
        BoundaryArg::Periodic => Boundary::Periodic,
    };
    let spec = match model {
        ModelArg::Tfim => ModelSpec::tfim(l, h, boundary)?,
        ModelArg::Lgt => ModelSpec::lgt(l, h)?,
    };
    let gs = ed::ground_state(&spec)?;
    let group = SymmetryGroup::for_model(&spec)?;
    let mut doc = json!({
        "model": match model { ModelArg::Tfim => "tfim1d", ModelArg::Lgt => "z2_lgt2d" },
        "L": l,
        "h": h,
        "beta": beta,
        "n_sites": spec.n_sites(),
        "ground_energy": gs.energy,
        "first_excited": gs.first_excited,
        "degenerate": gs.degenerate,
    });
    if let Some(r) = region {
        let a = bellqmc::config::parse_region(&spec.lattice, r)?;
        let ground = ed::exact_swap(&gs.state, &a, &group)?;
        doc["region"] = json!(r);
        doc["s2_ground"] = json!(-ground.ln());
        if spec.n_sites() <= ed::DENSE_MAX_SITES {
            let thermal = ed::thermal_state(&spec, beta)?;
            doc["s2_thermal"] = json!(-ed::exact_swap(&thermal, &a, &group)?.ln());
        }
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(seed: u64) -> bellqmc::Result<ExitCode> {
    let mut ok = true;
    let mut report = |name: &str, value: f64, error: f64, exact: f64| {
        let pass = (value - exact).abs() <= 4.0 * error + 1e-9;
        ok &= pass;
        println!("check {name}: {} {value:.4} +- {error:.4} (exact {exact:.4})", if pass { "PASS" } else { "FAIL" });
    };

    let beta = 2.0;
    let tfim = Arc::new(ModelSpec::tfim(4, 1.0, Boundary::Open)?);
    let state = ed::thermal_state(&tfim, beta)?;
    let group = SymmetryGroup::for_model(&tfim)?;
    let half = bellqmc::lattice::half_chain(&tfim.lattice)?;
    let zz = PauliString::z_string(4, &[1, 2])?;
    let xx = PauliString::x_string(4, &[0, 1])?;
    let probes = vec![Probe::pauli_sq("zz", zz.clone()), Probe::pauli_sq("xx", xx.clone()), Probe::renyi2(&tfim.lattice, &half)?];
    let params = ChainParams { beta, n_equilibration: 1000, n_measurement: 20_000, block_size: 500, split_plaquettes: true };
    let m = merge_chains(&[run_chain(tfim.clone(), probes, &params, seed)?])?;
    for (k, (name, exact)) in [("tfim zz", ed::exact_pauli_sq(&state, &zz, &group)?), ("tfim xx", ed::exact_pauli_sq(&state, &xx, &group)?)]
        .into_iter()
        .enumerate()
    {
        let e = m.series[k].estimate();
        report(name, e.value, e.error, exact);
    }
    let s2 = renyi2_from(&m.series[2])?;
    report("tfim half S2", s2.value, s2.error, -ed::exact_swap(&state, &half, &group)?.ln());

    let lambda = 0.5;
    let weights = ed::pauli_weights(&state, &half, Some(&tfim.conserved_parities()?))?;
    let node = NodeParams {
        lambda,
        weight: 1.0,
        method: TiMethod::AnalyticB,
        beta,
        n_equilibration: 1000,
        n_measurement: 20_000,
        block_size: 500,
        seed: seed + 1,
    };
    let e2 = run_node(tfim, &half, &node)?.e2_estimate();
    report("tfim dlnQ/dlambda", e2.value, e2.error, weights.dlnq(lambda));

    let lgt = Arc::new(ModelSpec::lgt(2, 0.5)?);
    let state = ed::thermal_state(&lgt, beta)?;
    let group = SymmetryGroup::for_model(&lgt)?;
    let plaq = wilson_loop(&lgt.lattice, 0, 0, 1, 1)?;
    let (star, _) = vertex_block_region(&lgt.lattice, 1)?;
    let probes = vec![Probe::wilson(&lgt.lattice, &plaq, false)?, Probe::renyi2_gauge(&lgt.lattice, &star, false)?];
    let m = merge_chains(&[run_chain(lgt.clone(), probes, &params, seed + 2)?])?;
    let w = m.series[0].estimate();
    report("lgt plaquette", w.value, w.error, ed::exact_pauli_sq(&state, &PauliString::x_string(8, &plaq.sites)?, &group)?);
    let s2 = renyi2_from(&m.series[1])?;
    report("lgt star S2", s2.value, s2.error, -ed::exact_swap(&state, &star, &group)?.ln());

    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
