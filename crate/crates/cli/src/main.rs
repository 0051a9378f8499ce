//! `carnot-gmt <noun> <verb>`: reproducible experiments over the library.
//!
//! Every command prints a JSON envelope with the resolved config, its
//! SHA-256, the seed and the crate version, and writes it to `--out` when
//! given. Exit codes: 0 when the command's checks pass, 1 on a numerical
//! failure or failed check, 2 on usage or config errors.

mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use config::{load_group, CliError, CommonArgs};
use report::{envelope, render, report_path, write_file, Outcome, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "carnot-gmt", version, about = "Tilings, measures, partitions and singular potentials on Carnot groups")]
struct Cli {
    #[command(subcommand)]
    noun: Noun,
}

#[derive(Subcommand, Debug)]
enum Noun {
    /// Group-law and homogeneity checks.
    Group {
        #[command(subcommand)]
        verb: GroupVerb,
    },
    /// Self-similar tiles.
    Tile {
        #[command(subcommand)]
        verb: TileVerb,
    },
    /// Dimension estimates and Cantor measures.
    Measure {
        #[command(subcommand)]
        verb: MeasureVerb,
    },
    /// Partitions of unity and cutoffs.
    Hp {
        #[command(subcommand)]
        verb: HpVerb,
    },
    /// Potentials of homogeneous kernels.
    Potential {
        #[command(subcommand)]
        verb: PotentialVerb,
    },
}

#[derive(Subcommand, Debug)]
enum GroupVerb {
    /// Associativity, identities, homogeneity and Haar scaling.
    Check(GroupCheckArgs),
}

#[derive(Subcommand, Debug)]
enum TileVerb {
    /// Point cloud of every tile at one level, as CSV.
    Render(TileRenderArgs),
    /// Monte Carlo overlap certificate of the children.
    Certify(TileCertifyArgs),
    /// Inner and outer radii and the bounded-overlap constant.
    Radii(TileRadiiArgs),
}

#[derive(Subcommand, Debug)]
enum MeasureVerb {
    /// Dyadic-cover dimension fit.
    Dim(MeasureDimArgs),
    /// Export a Cantor measure as weighted CSV.
    Cantor(MeasureCantorArgs),
    /// Ball-mass growth against `r^s`.
    Frostman(MeasureFrostmanArgs),
}

#[derive(Subcommand, Debug)]
enum HpVerb {
    /// Sum-to-one, telescoping and derivative scaling across levels.
    Verify(HpVerifyArgs),
    /// `L^p` norms of cutoff derivatives against their bounds.
    Cutoff(HpCutoffArgs),
}

#[derive(Subcommand, Debug)]
enum PotentialVerb {
    /// Mean oscillation over balls by radius decade.
    Bmo(PotentialBmoArgs),
    /// Hölder quotients by distance decade.
    Holder(PotentialHolderArgs),
    /// `L^p` norm with a divergence test.
    Lp(PotentialLpArgs),
    /// Kernel bound, smoothness ratio and far-field decay.
    KernelCheck(KernelCheckArgs),
    /// Evaluate the potential at CSV points.
    Eval(PotentialEvalArgs),
}

fn common(noun: &Noun) -> &CommonArgs {
    match noun {
        Noun::Group { verb: GroupVerb::Check(a) } => &a.common,
        Noun::Tile { verb } => match verb {
            TileVerb::Render(a) => &a.common,
            TileVerb::Certify(a) => &a.common,
            TileVerb::Radii(a) => &a.common,
        },
        Noun::Measure { verb } => match verb {
            MeasureVerb::Dim(a) => &a.common,
            MeasureVerb::Cantor(a) => &a.common,
            MeasureVerb::Frostman(a) => &a.common,
        },
        Noun::Hp { verb } => match verb {
            HpVerb::Verify(a) => &a.common,
            HpVerb::Cutoff(a) => &a.common,
        },
        Noun::Potential { verb } => match verb {
            PotentialVerb::Bmo(a) => &a.common,
            PotentialVerb::Holder(a) => &a.common,
            PotentialVerb::Lp(a) => &a.common,
            PotentialVerb::KernelCheck(a) => &a.common,
            PotentialVerb::Eval(a) => &a.common,
        },
    }
}

fn run(cli: &Cli) -> Result<(String, bool), CliError> {
    let common = common(&cli.noun);
    let (spec, group) = load_group(&common.group)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers as usize)
        .build_global()
        .map_err(config::config_err)?;

    macro_rules! dispatch {
        ($name:literal, $f:ident, $a:expr) => {
            ($name, RunConfig::new($name, group, common, $a)?, $f(&spec, $a))
        };
    }
    let (name, config, outcome): (&str, RunConfig, Result<Outcome, CliError>) = match &cli.noun {
        Noun::Group { verb: GroupVerb::Check(a) } => dispatch!("group check", group_check, a),
        Noun::Tile { verb } => match verb {
            TileVerb::Render(a) => dispatch!("tile render", tile_render, a),
            TileVerb::Certify(a) => dispatch!("tile certify", tile_certify, a),
            TileVerb::Radii(a) => dispatch!("tile radii", tile_radii, a),
        },
        Noun::Measure { verb } => match verb {
            MeasureVerb::Dim(a) => dispatch!("measure dim", measure_dim, a),
            MeasureVerb::Cantor(a) => dispatch!("measure cantor", measure_cantor, a),
            MeasureVerb::Frostman(a) => dispatch!("measure frostman", measure_frostman, a),
        },
        Noun::Hp { verb } => match verb {
            HpVerb::Verify(a) => dispatch!("hp verify", hp_verify, a),
            HpVerb::Cutoff(a) => dispatch!("hp cutoff", hp_cutoff, a),
        },
        Noun::Potential { verb } => match verb {
            PotentialVerb::Bmo(a) => dispatch!("potential bmo", potential_bmo, a),
            PotentialVerb::Holder(a) => dispatch!("potential holder", potential_holder, a),
            PotentialVerb::Lp(a) => dispatch!("potential lp", potential_lp, a),
            PotentialVerb::KernelCheck(a) => dispatch!("potential kernel-check", potential_kernel_check, a),
            PotentialVerb::Eval(a) => dispatch!("potential eval", potential_eval_points, a),
        },
    };
    let outcome = outcome?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let env = envelope(config, outcome);
    let text = render(&env);
    if let Some(out) = &common.out {
        write_file(&report_path(out, name), text.as_bytes())?;
    }
    Ok((text, env.passed))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok((text, passed)) => {
            print!("{text}");
            if passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: checks did not pass; see the report");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
