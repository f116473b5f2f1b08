//! Command-line front end: ingest -> filter -> fit -> diagnose -> loo ->
//! compare -> report, plus the synthetic-league simulator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use homeadv::analysis::{
    ha_summary_table, ha_trajectory, prob_decline, shrinkage_report, standardize_gamma,
    trajectory_table, trend_table,
};
use homeadv::artifact::{
    check_consistent_provenance, check_identical_provenance, league_fingerprint, read_fit,
    write_fit, write_truth, FitManifest,
};
use homeadv::error::{Error, Result};
use homeadv::filtering::{apply_final_threshold, iterative_filter, retention_grid, FilterConfig};
use homeadv::ingest::{build_dataset, empirical_ha, parse_games, write_games, GameRecord,
    ParseConfig};
use homeadv::loo::{compare, psis_loo};
use homeadv::model::{Family, ModelContext, ModelSpec};

/// Model family as a CLI flag value.
#[derive(Clone, Copy, clap::ValueEnum)]
enum FitFamily {
    Constant,
    Linear,
    Timevarying,
    Hier,
}

impl From<FitFamily> for Family {
    fn from(value: FitFamily) -> Self {
        match value {
            FitFamily::Constant => Family::Constant,
            FitFamily::Linear => Family::Linear,
            FitFamily::Timevarying => Family::TimeVarying,
            FitFamily::Hier => Family::HierarchicalLinear,
        }
    }
}
use homeadv::sampler::{sample, FitResult, SamplerConfig};
use homeadv::simulate::{generate_league, TruthConfig, TruthHa};

#[derive(Parser)]
#[command(name = "homeadv", version, about = "Home-advantage estimation pipeline")]
struct Cli {
    /// Worker threads (also via HOMEADV_THREADS; 0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a game table and summarize it per league.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Restrict the summary to one league.
        #[arg(long)]
        league: Option<String>,
        /// Print per-season summaries.
        #[arg(long)]
        summary: bool,
        #[command(flatten)]
        parse: ParseArgs,
    },
    /// Iteratively filter team-seasons, or compute the retention grid.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_games: usize,
        #[arg(long, default_value_t = 1)]
        min_seasons: usize,
        /// Apply the final minimum-games restriction after the iterative
        /// pass.
        #[arg(long)]
        final_min_games: Option<usize>,
        /// Compute a retention grid instead of filtering.
        #[arg(long)]
        grid: bool,
        /// Comma-separated games thresholds for the grid.
        #[arg(long, default_value = "1,2,3,4,5,6,7")]
        games_thresholds: String,
        /// Comma-separated seasons thresholds for the grid.
        #[arg(long, default_value = "1,2,3")]
        seasons_thresholds: String,
        #[command(flatten)]
        parse: ParseArgs,
    },
    /// Generate a synthetic league (or several) from known truth.
    Simulate(SimulateArgs),
    /// Fit a model and write the fit artifact directory.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Model family: constant | linear | timevarying | hier.
        #[arg(long)]
        model: FitFamily,
        /// League to fit; repeat for the hierarchical family.
        #[arg(long, required = true)]
        league: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 500)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        target_accept: f64,
        #[arg(long, default_value_t = 10)]
        max_depth: usize,
        /// Half-normal prior scale for all scale parameters.
        #[arg(long, default_value_t = 5.0)]
        hyper_scale: f64,
        #[command(flatten)]
        parse: ParseArgs,
    },
    /// Print convergence diagnostics for a fit artifact.
    Diagnose {
        #[arg(long)]
        fit: PathBuf,
    },
    /// PSIS-LOO for one fit artifact.
    Loo {
        #[arg(long)]
        fit: PathBuf,
        /// Write pointwise ELPD and Pareto k values to this file.
        #[arg(long)]
        pointwise: Option<PathBuf>,
    },
    /// Compare fits of the same games: delta ELPD, SE, #SE.
    Compare {
        /// Fit artifact directories (tags taken from directory names).
        #[arg(required = true, num_args = 2..)]
        fits: Vec<PathBuf>,
    },
    /// Report trajectories, trends, HA summaries, z-scores, shrinkage.
    Report {
        /// Fit artifact directories.
        #[arg(long, required = true)]
        fit: Vec<PathBuf>,
        /// Game table for the empirical per-season series.
        #[arg(long)]
        games: Option<PathBuf>,
        /// Hierarchical fit to contrast against per-league fits.
        #[arg(long)]
        joint: Option<PathBuf>,
        /// Write tables into this directory instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        parse: ParseArgs,
    },
}

#[derive(Args)]
struct ParseArgs {
    /// Inclusive season window `LO:HI` applied while parsing.
    #[arg(long)]
    window: Option<String>,
    /// Abort after this many invalid rows.
    #[arg(long, default_value_t = 100)]
    max_errors: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Truth family: constant | linear | timevarying | hier.
    #[arg(long)]
    family: FitFamily,
    #[arg(long)]
    output: PathBuf,
    /// Write the truth manifest here.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// League id (or id prefix for hier).
    #[arg(long, default_value = "SIM")]
    league_id: String,
    #[arg(long, default_value_t = 20)]
    teams: usize,
    /// Seasons as `LO:HI` or a comma list (gaps allowed).
    #[arg(long, default_value = "2004:2023")]
    seasons: String,
    #[arg(long, default_value_t = 8)]
    games_per_team: usize,
    #[arg(long, default_value_t = 13.0)]
    sigma: f64,
    #[arg(long, default_value_t = 6.0)]
    zeta: f64,
    #[arg(long, default_value_t = 2.5, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    beta0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta1: f64,
    /// Comma-separated per-season HA values (timevarying family).
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<String>,
    #[arg(long, default_value_t = 8)]
    leagues: usize,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    beta1_star: f64,
    #[arg(long, default_value_t = 0.02)]
    lambda1: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.0)]
    neutral_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    host_bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    // Die quietly when stdout is closed early (e.g. piped into `head`).
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let threads = if cli.threads > 0 {
        cli.threads
    } else {
        std::env::var("HOMEADV_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    };
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.class());
            ExitCode::FAILURE
        }
    }
}

fn parse_window(window: &Option<String>) -> Result<Option<(i32, i32)>> {
    match window {
        None => Ok(None),
        Some(text) => {
            let (lo, hi) = text
                .split_once(':')
                .ok_or_else(|| Error::InvalidSpec(format!("bad window '{text}', want LO:HI")))?;
            let lo = lo
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad window year '{lo}'")))?;
            let hi = hi
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad window year '{hi}'")))?;
            Ok(Some((lo, hi)))
        }
    }
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad threshold '{t}'")))
        })
        .collect()
}

fn parse_seasons(text: &str) -> Result<Vec<i32>> {
    if let Some((lo, hi)) = text.split_once(':') {
        let lo: i32 = lo
            .parse()
            .map_err(|_| Error::InvalidSpec(format!("bad season '{lo}'")))?;
        let hi: i32 = hi
            .parse()
            .map_err(|_| Error::InvalidSpec(format!("bad season '{hi}'")))?;
        if hi < lo {
            return Err(Error::InvalidSpec(format!("empty season range '{text}'")));
        }
        Ok((lo..=hi).collect())
    } else {
        text.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("bad season '{t}'")))
            })
            .collect()
    }
}

/// Parse a game table; rejected rows go to stderr.
fn load_games(path: &Path, parse: &ParseArgs) -> Result<Vec<GameRecord>> {
    let config = ParseConfig {
        season_window: parse_window(&parse.window)?,
        max_semantic_errors: parse.max_errors,
    };
    let file = fs::File::open(path)?;
    let outcome = parse_games(file, &config)?;
    for issue in &outcome.rejected {
        eprintln!("{}: rejected line {}: {}", path.display(), issue.line, issue.message);
    }
    Ok(outcome.records)
}

fn leagues_in(records: &[GameRecord]) -> Vec<String> {
    let mut ids: Vec<String> = records.iter().map(|r| r.league_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            input,
            league,
            summary,
            parse,
        } => {
            let records = load_games(&input, &parse)?;
            let leagues = match league {
                Some(l) => vec![l],
                None => leagues_in(&records),
            };
            println!("records,{}", records.len());
            for l in leagues {
                let ds = build_dataset(&records, &l, None)?;
                if summary {
                    print!("{}", ds.summary());
                } else {
                    println!(
                        "league {l}: {} games, {} team-seasons, seasons {}..{}",
                        ds.games.len(),
                        ds.num_team_seasons(),
                        ds.t0,
                        ds.seasons.last().unwrap()
                    );
                }
            }
            Ok(())
        }
        Command::Filter {
            input,
            output,
            min_games,
            min_seasons,
            final_min_games,
            grid,
            games_thresholds,
            seasons_thresholds,
            parse,
        } => {
            let records = load_games(&input, &parse)?;
            if grid {
                let gt = parse_usize_list(&games_thresholds)?;
                let st = parse_usize_list(&seasons_thresholds)?;
                let cells = retention_grid(&records, &gt, &st)?;
                println!(
                    "min_games,{}",
                    st.iter()
                        .map(|s| format!("min_seasons_{s}"))
                        .collect::<Vec<_>>()
                        .join(",")
                );
                for (g, row) in gt.iter().zip(cells) {
                    let values: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                    println!("{g},{}", values.join(","));
                }
                return Ok(());
            }
            let config = FilterConfig {
                min_games_per_season: min_games,
                min_seasons,
                final_min_games: final_min_games.unwrap_or(7),
            };
            let (kept, report) = iterative_filter(&records, &config)?;
            let (kept, final_report) = match final_min_games {
                Some(threshold) => apply_final_threshold(&kept, threshold)?,
                None => (kept, report),
            };
            println!("rounds,{}", final_report.rounds);
            println!("retained_fraction_teams,{:.4}", final_report.retained_fraction_teams);
            println!("retained_fraction_games,{:.4}", final_report.retained_fraction_games);
            println!("removed_team_seasons,{}", final_report.removed_team_seasons.len());
            println!("kept_games,{}", kept.len());
            if let Some(path) = output {
                let file = fs::File::create(path)?;
                write_games(&kept, file)?;
            }
            Ok(())
        }
        Command::Simulate(args) => {
            let seasons = parse_seasons(&args.seasons)?;
            let ha = match args.family {
                FitFamily::Constant => TruthHa::Constant { alpha: args.alpha },
                FitFamily::Linear => TruthHa::Linear {
                    beta0: args.beta0,
                    beta1: args.beta1,
                },
                FitFamily::Timevarying => {
                    let gamma = match &args.gamma {
                        Some(text) => text
                            .split(',')
                            .map(|t| {
                                t.trim().parse().map_err(|_| {
                                    Error::InvalidSpec(format!("bad gamma '{t}'"))
                                })
                            })
                            .collect::<Result<Vec<f64>>>()?,
                        None => vec![args.alpha; seasons.len()],
                    };
                    TruthHa::TimeVarying { gamma }
                }
                FitFamily::Hier => TruthHa::Hierarchical {
                    leagues: args.leagues,
                    beta1_star: args.beta1_star,
                    lambda1: args.lambda1,
                    lambda0: args.lambda0,
                },
            };
            let truth = TruthConfig {
                league_id: args.league_id,
                ha,
                zeta: args.zeta,
                sigma: args.sigma,
                n_teams: args.teams,
                seasons,
                games_per_team: args.games_per_team,
                neutral_fraction: args.neutral_fraction,
                host_bias: args.host_bias,
                seed: args.seed,
            };
            let (records, echo) = generate_league(&truth)?;
            let file = fs::File::create(&args.output)?;
            write_games(&records, file)?;
            println!("games,{}", records.len());
            if let Some(path) = args.truth_out {
                write_truth(&path, &echo)?;
            }
            Ok(())
        }
        Command::Fit {
            input,
            model,
            league,
            out,
            chains,
            iters,
            warmup,
            seed,
            target_accept,
            max_depth,
            hyper_scale,
            parse,
        } => {
            let records = load_games(&input, &parse)?;
            let mut spec = ModelSpec::new(model.into(), league.clone());
            spec.hyper_scale = hyper_scale;
            let mut datasets = Vec::with_capacity(league.len());
            let mut fingerprints = BTreeMap::new();
            for l in &league {
                let ds = build_dataset(&records, l, None)?;
                fingerprints.insert(l.clone(), league_fingerprint(&ds));
                datasets.push(ds);
            }
            let ctx = ModelContext::new(spec, datasets)?;
            let config = SamplerConfig {
                chains,
                iterations: iters,
                warmup,
                seed,
                target_accept,
                max_tree_depth: max_depth,
            };
            let fit = sample(&ctx, &config)?;
            for (c, chain) in fit.draws.chains.iter().enumerate() {
                let divergences = chain.stats.iter().filter(|s| s.divergent).count();
                eprintln!(
                    "chain {c}: {} draws, step size {:.4}, {divergences} divergences",
                    chain.len(),
                    chain.step_size
                );
            }
            write_fit(&out, &fit, fingerprints)?;
            println!("fit,{}", out.display());
            println!("max_rhat,{:.4}", fit.diagnostics.max_rhat());
            println!("divergences,{}", fit.draws.divergences());
            Ok(())
        }
        Command::Diagnose { fit } => {
            let (fit, _) = read_fit(&fit)?;
            print!("{}", fit.diagnostics.table());
            Ok(())
        }
        Command::Loo { fit, pointwise } => {
            let (fit, _) = read_fit(&fit)?;
            let loo = psis_loo(&fit.loglik)?;
            println!("elpd_loo,{:.2}", loo.elpd_loo);
            println!("se,{:.2}", loo.se);
            println!("n,{}", loo.pointwise.len());
            let high = loo.high_k(0.7);
            println!("pareto_k_gt_0.7,{}", high.len());
            for i in &high {
                eprintln!("warning: pareto k {:.2} for game {i}", loo.pareto_k[*i]);
            }
            if !loo.unsmoothed.is_empty() {
                eprintln!(
                    "warning: {} observation(s) fell back to unsmoothed importance sampling",
                    loo.unsmoothed.len()
                );
            }
            if let Some(path) = pointwise {
                let mut out = String::from("game,elpd,pareto_k\n");
                for (i, (e, k)) in loo.pointwise.iter().zip(&loo.pareto_k).enumerate() {
                    out.push_str(&format!("{i},{e},{k}\n"));
                }
                fs::write(path, out)?;
            }
            Ok(())
        }
        Command::Compare { fits } => {
            let mut loaded = Vec::with_capacity(fits.len());
            for dir in &fits {
                let tag = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| dir.display().to_string());
                let (fit, manifest) = read_fit(dir)?;
                loaded.push((tag, fit, manifest));
            }
            let manifests: Vec<&FitManifest> = loaded.iter().map(|(_, _, m)| m).collect();
            check_identical_provenance(&manifests)?;
            let mut loos = Vec::with_capacity(loaded.len());
            for (tag, fit, _) in &loaded {
                loos.push((tag.clone(), psis_loo(&fit.loglik)?));
            }
            let comparison = compare(&loos)?;
            print!("{}", comparison.table());
            Ok(())
        }
        Command::Report {
            fit,
            games,
            joint,
            out,
            parse,
        } => run_report(fit, games, joint, out, parse),
    }
}

fn run_report(
    fit_dirs: Vec<PathBuf>,
    games: Option<PathBuf>,
    joint: Option<PathBuf>,
    out: Option<PathBuf>,
    parse: ParseArgs,
) -> Result<()> {
    let mut fits: Vec<(String, FitResult, FitManifest)> = Vec::new();
    for dir in &fit_dirs {
        let tag = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let (fit, manifest) = read_fit(dir)?;
        fits.push((tag, fit, manifest));
    }
    let joint_fit = joint.map(|dir| read_fit(&dir)).transpose()?;
    {
        let mut manifests: Vec<&FitManifest> = fits.iter().map(|(_, _, m)| m).collect();
        if let Some((_, m)) = &joint_fit {
            manifests.push(m);
        }
        check_consistent_provenance(&manifests)?;
    }

    // Empirical per-season series from the raw games, when provided.
    let mut empirical: Vec<(String, i32, f64)> = Vec::new();
    if let Some(path) = games {
        let records = load_games(&path, &parse)?;
        let mut wanted: Vec<String> = fits
            .iter()
            .flat_map(|(_, f, _)| f.leagues.iter().map(|m| m.league_id.clone()))
            .collect();
        wanted.sort();
        wanted.dedup();
        for league in wanted {
            let ds = build_dataset(&records, &league, None)?;
            for &season in &ds.seasons {
                if let Ok(value) = empirical_ha(&ds, season) {
                    empirical.push((league.clone(), season, value));
                }
            }
        }
    }

    let mut trajectories = Vec::new();
    let mut trends = Vec::new();
    let mut gamma_means: BTreeMap<(String, i32), f64> = BTreeMap::new();
    for (_, fit, _) in &fits {
        for meta in &fit.leagues {
            let traj = ha_trajectory(fit, &meta.league_id)?;
            if fit.spec.family == Family::TimeVarying {
                for p in &traj.points {
                    gamma_means.insert((meta.league_id.clone(), p.season), p.mean);
                }
            }
            trajectories.push(traj);
            if matches!(fit.spec.family, Family::Linear | Family::HierarchicalLinear) {
                trends.push(prob_decline(fit, &meta.league_id)?);
            }
        }
    }

    let mut sections: Vec<(&str, String)> = Vec::new();
    let tagged: Vec<(String, &FitResult)> =
        fits.iter().map(|(t, f, _)| (t.clone(), f)).collect();
    sections.push(("ha_summary", ha_summary_table(&tagged)?));
    sections.push(("trajectories", trajectory_table(&trajectories, &empirical)));
    if !trends.is_empty() {
        sections.push(("trends", trend_table(&trends)));
    }
    if gamma_means.len() >= 2 {
        let z = standardize_gamma(&gamma_means)?;
        let mut table = String::from("league,season,z\n");
        for ((league, season), value) in z {
            table.push_str(&format!("{league},{season},{value:.4}\n"));
        }
        sections.push(("zscores", table));
    }
    if let Some((joint, _)) = &joint_fit {
        let separate: Vec<FitResult> = fits.iter().map(|(_, f, _)| f.clone()).collect();
        let report = shrinkage_report(&separate, joint)?;
        sections.push(("shrinkage", report.table()));
    }

    match out {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            for (name, table) in sections {
                fs::write(dir.join(format!("{name}.csv")), table)?;
            }
        }
        None => {
            for (name, table) in sections {
                println!("# {name}");
                print!("{table}");
            }
        }
    }
    Ok(())
}
