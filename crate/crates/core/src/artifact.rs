//! Fit artifacts on disk: a directory of delimited tables plus a JSON
//! manifest. Tables are diff-able and byte-stable under fixed seeds; floats
//! are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::summarize_draws;
use crate::error::{Error, Result};
use crate::ingest::{write_games, LeagueDataset};
use crate::model::{constrain, unconstrain, Block, LeagueMeta, LoglikMatrix, ModelSpec,
    ParameterLayout};
use crate::sampler::{ChainDraws, DrawStats, FitResult, PosteriorDraws, SamplerConfig};
use crate::simulate::TruthEcho;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LAYOUT_FILE: &str = "layout.csv";
pub const STATS_FILE: &str = "sampler_stats.csv";
pub const LOGLIK_FILE: &str = "pointwise_loglik.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitManifest {
    pub kind: String,
    pub spec: ModelSpec,
    pub config: SamplerConfig,
    pub leagues: Vec<LeagueMeta>,
    pub blocks: Vec<Block>,
    pub labels: Vec<String>,
    /// Per-league SHA-256 of the canonical game table that was fit.
    pub data_fingerprints: BTreeMap<String, String>,
    pub step_sizes: Vec<f64>,
    pub divergences: usize,
    pub wall_time_seconds: f64,
}

/// SHA-256 over the league's games in canonical table form.
pub fn league_fingerprint(dataset: &LeagueDataset) -> String {
    let mut bytes = Vec::new();
    write_games(&dataset.games, &mut bytes).expect("in-memory serialization");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

fn draws_file(chain: usize) -> String {
    format!("draws_chain_{chain}.csv")
}

/// Write a fit artifact directory: manifest, layout table, one constrained
/// draw table per chain, the sampler-stats table, and the pointwise
/// log-likelihood matrix.
pub fn write_fit(
    dir: &Path,
    fit: &FitResult,
    fingerprints: BTreeMap<String, String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = FitManifest {
        kind: "fit".to_string(),
        spec: fit.spec.clone(),
        config: fit.config.clone(),
        leagues: fit.leagues.clone(),
        blocks: fit.layout.blocks.clone(),
        labels: fit.layout.labels.clone(),
        data_fingerprints: fingerprints,
        step_sizes: fit.draws.chains.iter().map(|c| c.step_size).collect(),
        divergences: fit.draws.divergences(),
        wall_time_seconds: fit.wall_time.as_secs_f64(),
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    fs::write(dir.join(LAYOUT_FILE), fit.layout.manifest())?;

    for (c, chain) in fit.draws.chains.iter().enumerate() {
        let mut out = String::new();
        out.push_str(&fit.layout.labels.join(","));
        out.push('\n');
        for i in 0..chain.len() {
            let constrained = constrain(&fit.layout, chain.draw(i));
            push_float_row(&mut out, &constrained);
        }
        fs::write(dir.join(draws_file(c)), out)?;
    }

    let mut stats = String::from("chain,draw,accept_stat,divergent,tree_depth,energy,energy_error\n");
    for (c, chain) in fit.draws.chains.iter().enumerate() {
        for (i, s) in chain.stats.iter().enumerate() {
            let _ = writeln!(
                stats,
                "{c},{i},{},{},{},{},{}",
                s.accept_stat, s.divergent, s.tree_depth, s.energy, s.energy_error
            );
        }
    }
    fs::write(dir.join(STATS_FILE), stats)?;

    let mut ll = String::new();
    for i in 0..fit.loglik.n {
        push_float_row(&mut ll, fit.loglik.row(i));
    }
    fs::write(dir.join(LOGLIK_FILE), ll)?;
    Ok(())
}

fn push_float_row(out: &mut String, row: &[f64]) {
    let mut first = true;
    for v in row {
        if !first {
            out.push(',');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

fn parse_float_row(line: &str, path: &Path) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                Error::Artifact(format!("bad float '{tok}' in {}", path.display()))
            })
        })
        .collect()
}

/// Read a fit artifact back. The reconstructed layout carries block names,
/// offsets, and transforms (enough for diagnostics, LOO, and reporting);
/// density evaluation needs the original datasets and is not restored.
pub fn read_fit(dir: &Path) -> Result<(FitResult, FitManifest)> {
    let manifest: FitManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.kind != "fit" {
        return Err(Error::Artifact(format!(
            "{} is not a fit artifact",
            dir.display()
        )));
    }
    let dim = manifest.labels.len();
    let layout = ParameterLayout {
        blocks: manifest.blocks.clone(),
        dim,
        labels: manifest.labels.clone(),
        leagues: Vec::new(),
        shared: None,
    };

    let stats_text = fs::read_to_string(dir.join(STATS_FILE))?;
    let mut stats_per_chain: Vec<Vec<DrawStats>> = vec![Vec::new(); manifest.config.chains];
    for line in stats_text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Artifact(format!("bad stats row '{line}'")));
        }
        let chain: usize = fields[0]
            .parse()
            .map_err(|_| Error::Artifact("bad chain index".into()))?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Artifact(format!("bad stats value '{s}'")))
        };
        stats_per_chain
            .get_mut(chain)
            .ok_or_else(|| Error::Artifact("chain index out of range".into()))?
            .push(DrawStats {
                accept_stat: parse(fields[2])?,
                divergent: fields[3] == "true",
                tree_depth: fields[4]
                    .parse()
                    .map_err(|_| Error::Artifact("bad tree depth".into()))?,
                energy: parse(fields[5])?,
                energy_error: parse(fields[6])?,
            });
    }

    let mut chains = Vec::with_capacity(manifest.config.chains);
    for c in 0..manifest.config.chains {
        let path = dir.join(draws_file(c));
        let text = fs::read_to_string(&path)?;
        let mut positions = Vec::new();
        let mut rows = 0usize;
        for line in text.lines().skip(1) {
            let constrained = parse_float_row(line, &path)?;
            if constrained.len() != dim {
                return Err(Error::Artifact(format!(
                    "draw row with {} values, layout has {dim}",
                    constrained.len()
                )));
            }
            positions.extend(unconstrain(&layout, &constrained)?);
            rows += 1;
        }
        if rows != manifest.config.kept_per_chain() || rows != stats_per_chain[c].len() {
            return Err(Error::Artifact(format!(
                "chain {c} has {rows} draws; expected {}",
                manifest.config.kept_per_chain()
            )));
        }
        let mut chain = ChainDraws::new(positions, std::mem::take(&mut stats_per_chain[c]), dim);
        chain.step_size = manifest.step_sizes.get(c).copied().unwrap_or(f64::NAN);
        chains.push(chain);
    }
    let draws = PosteriorDraws {
        chains,
        dim,
        kept_per_chain: manifest.config.kept_per_chain(),
    };

    let ll_path = dir.join(LOGLIK_FILE);
    let ll_text = fs::read_to_string(&ll_path)?;
    let rows: Vec<Vec<f64>> = ll_text
        .lines()
        .map(|line| parse_float_row(line, &ll_path))
        .collect::<Result<_>>()?;
    let loglik = LoglikMatrix::from_rows(rows)?;
    if loglik.m != draws.total_draws() {
        return Err(Error::Artifact(format!(
            "log-likelihood has {} columns, draws total {}",
            loglik.m,
            draws.total_draws()
        )));
    }

    let diagnostics = summarize_draws(&layout, &draws);
    let fit = FitResult {
        spec: manifest.spec.clone(),
        config: manifest.config.clone(),
        layout,
        leagues: manifest.leagues.clone(),
        draws,
        diagnostics,
        loglik,
        wall_time: Duration::from_secs_f64(manifest.wall_time_seconds),
    };
    Ok((fit, manifest))
}

/// Write the truth manifest next to a simulated game table.
pub fn write_truth(path: &Path, echo: &TruthEcho) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(echo)?)?;
    Ok(())
}

/// Any league appearing in several fits must have been fit on the same
/// data. Disjoint league sets are fine (multi-league reports).
pub fn check_consistent_provenance(manifests: &[&FitManifest]) -> Result<()> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for m in manifests {
        for (league, print) in &m.data_fingerprints {
            match seen.get(league.as_str()) {
                Some(expected) if *expected != print.as_str() => {
                    return Err(Error::Artifact(format!(
                        "mixed provenance: league '{league}' was fit on different data"
                    )));
                }
                Some(_) => {}
                None => {
                    seen.insert(league, print);
                }
            }
        }
    }
    Ok(())
}

/// Fits being compared head-to-head must cover exactly the same games:
/// identical league sets and identical fingerprints.
pub fn check_identical_provenance(manifests: &[&FitManifest]) -> Result<()> {
    let Some((first, rest)) = manifests.split_first() else {
        return Ok(());
    };
    for m in rest {
        if m.data_fingerprints != first.data_fingerprints {
            return Err(Error::Artifact(
                "mixed provenance: fits do not cover the same games".to_string(),
            ));
        }
    }
    Ok(())
}
