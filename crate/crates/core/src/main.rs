use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hessian_forge::cli_io::{exit_code_for, load_config, resolve_output, run, Module, RunConfig, OUT_ENV};
use hessian_forge::Error;

/// Hessian-type equations on Hermitian product manifolds.
#[derive(Debug, Parser)]
#[command(name = "hessian-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; its `module` must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `$HESSIAN_FORGE_OUT/<module>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Default output root.
    #[arg(long = "out-root", env = OUT_ENV, hide_env_values = true)]
    out_root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Randomized check of the eigenvalue concentration lemma.
    LemmaCheck {
        #[command(flatten)]
        common: Common,
        /// Dimensions (repeatable).
        #[arg(long)]
        n: Vec<usize>,
        /// Values of eps (repeatable).
        #[arg(long)]
        eps: Vec<f64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Use the refined threshold.
        #[arg(long)]
        refined: bool,
    },
    /// Structural invariants of one symmetric function family.
    Cone {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Builds and certifies the subsolution of the configured problem.
    Subsolution {
        #[command(flatten)]
        common: Common,
    },
    /// Solves the configured Dirichlet problem.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Runs the acceptance suite.
    VerifyAll {
        #[command(flatten)]
        common: Common,
        /// Criteria to run (comma separated, default all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
}

fn base_config(module: Module, common: &Common) -> Result<RunConfig, Error> {
    let mut config = match &common.config {
        Some(path) => {
            let c = load_config(path)?;
            if c.module != module {
                return Err(Error::Config(vec![format!(
                    "{}: module is {}, but the subcommand is {}",
                    path.display(),
                    c.module.name(),
                    module.name()
                )]));
            }
            c
        }
        None => RunConfig::for_module(module),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn configure(command: &Command) -> Result<(RunConfig, &Common), Error> {
    Ok(match command {
        Command::LemmaCheck {
            common,
            n,
            eps,
            trials,
            refined,
        } => {
            let mut c = base_config(Module::LemmaCheck, common)?;
            if !n.is_empty() {
                c.lemma.n = n.clone();
            }
            if !eps.is_empty() {
                c.lemma.eps = eps.clone();
            }
            if let Some(t) = trials {
                c.lemma.trials = *t;
            }
            c.lemma.refined |= refined;
            (c, common)
        }
        Command::Cone {
            common,
            family,
            k,
            l,
            n,
            samples,
        } => {
            let mut c = base_config(Module::Cone, common)?;
            if let Some(f) = family {
                c.cone.family = f.clone();
            }
            c.cone.k = k.or(c.cone.k);
            c.cone.l = l.or(c.cone.l);
            if let Some(n) = n {
                c.cone.n = *n;
            }
            if let Some(s) = samples {
                c.cone.samples = *s;
            }
            (c, common)
        }
        Command::Subsolution { common } => (base_config(Module::Subsolution, common)?, common),
        Command::Solve { common } => (base_config(Module::Solve, common)?, common),
        Command::VerifyAll { common, criteria } => {
            let mut c = base_config(Module::VerifyAll, common)?;
            if !criteria.is_empty() {
                c.verify.criteria = criteria.clone();
            }
            (c, common)
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure(&cli.command).and_then(|(config, common)| {
        let problems = hessian_forge::cli_io::validate(&config, "");
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let out = resolve_output(common.out.as_deref(), &config, common.out_root.as_deref());
        run(&config, &out).map(|record| (record, out))
    });
    match result {
        Ok((record, out)) => {
            for s in &record.stages {
                println!("{:<7} {}: {}", s.status, s.name, s.detail);
            }
            println!("verdict: {:?}", record.verdict);
            println!("output: {}", out.display());
            ExitCode::from(record.verdict.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
