//! Bijection between named parameters and positions in the unconstrained
//! real vector the sampler works in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LeagueDataset;

use super::{Family, ModelSpec};

/// How a block maps between unconstrained and constrained space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Scale parameters are sampled on the log scale; `exp` maps back.
    Exp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub transform: Transform,
}

/// A scale parameter is either a free coordinate (log scale) or a known
/// constant.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Scale {
    Free(usize),
    Fixed(f64),
}

impl Scale {
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Scale::Free(i) => x[*i].exp(),
            Scale::Fixed(v) => *v,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum HaParams {
    Constant {
        alpha: usize,
        eta: Scale,
    },
    Linear {
        beta0: usize,
        beta1: usize,
        lambda0: Scale,
        lambda1: Scale,
    },
    /// Linear trend whose league slope is pooled toward the shared trend.
    HierLinear {
        beta0: usize,
        beta1: usize,
        lambda0: Scale,
    },
    TimeVarying {
        gamma_offset: usize,
        gamma_len: usize,
        tau: Scale,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct LeagueParams {
    pub theta_offset: usize,
    pub theta_len: usize,
    pub zeta: Scale,
    pub sigma: Scale,
    pub ha: HaParams,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SharedParams {
    pub beta1_star: usize,
    pub lambda1: usize,
}

#[derive(Debug, Clone)]
pub struct ParameterLayout {
    pub blocks: Vec<Block>,
    pub dim: usize,
    /// One label per coordinate, in vector order. Used as draw-file column
    /// headers and in per-parameter diagnostics.
    pub labels: Vec<String>,
    pub(crate) leagues: Vec<LeagueParams>,
    pub(crate) shared: Option<SharedParams>,
}

impl ParameterLayout {
    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Transform applying to coordinate `idx`.
    pub fn transform_at(&self, idx: usize) -> Transform {
        for b in &self.blocks {
            if idx >= b.offset && idx < b.offset + b.len {
                return b.transform;
            }
        }
        Transform::Identity
    }

    /// Plain-text manifest: one line per block.
    pub fn manifest(&self) -> String {
        let mut out = String::from("block,offset,len,transform\n");
        for b in &self.blocks {
            let t = match b.transform {
                Transform::Identity => "identity",
                Transform::Exp => "exp",
            };
            out.push_str(&format!("{},{},{},{}\n", b.name, b.offset, b.len, t));
        }
        out
    }
}

struct LayoutBuilder {
    blocks: Vec<Block>,
    labels: Vec<String>,
    next: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        Self {
            blocks: Vec::new(),
            labels: Vec::new(),
            next: 0,
        }
    }

    fn push(&mut self, name: String, labels: Vec<String>, transform: Transform) -> usize {
        let offset = self.next;
        self.next += labels.len();
        self.blocks.push(Block {
            name,
            offset,
            len: labels.len(),
            transform,
        });
        self.labels.extend(labels);
        offset
    }

    fn scalar(&mut self, name: String, transform: Transform) -> usize {
        self.push(name.clone(), vec![name], transform)
    }

    fn scale(&mut self, name: String, fixed: Option<f64>) -> Scale {
        match fixed {
            Some(v) => Scale::Fixed(v),
            None => Scale::Free(self.scalar(name, Transform::Exp)),
        }
    }
}

/// Build the parameter layout for `spec` over `datasets` (one dataset per
/// league, in spec order).
pub fn build_layout(spec: &ModelSpec, datasets: &[LeagueDataset]) -> Result<ParameterLayout> {
    spec.validate()?;
    if datasets.len() != spec.leagues.len() {
        return Err(Error::InvalidSpec(format!(
            "spec names {} league(s) but {} dataset(s) were supplied",
            spec.leagues.len(),
            datasets.len()
        )));
    }
    for (league, ds) in spec.leagues.iter().zip(datasets) {
        if *league != ds.league_id {
            return Err(Error::InvalidSpec(format!(
                "league order mismatch: spec '{league}' vs dataset '{}'",
                ds.league_id
            )));
        }
    }

    let fixed = spec.fixed_scales.as_ref();
    let mut b = LayoutBuilder::new();
    let mut leagues = Vec::with_capacity(datasets.len());

    for ds in datasets {
        let k = &ds.league_id;
        let theta_labels: Vec<String> = ds
            .team_seasons()
            .iter()
            .map(|(team, season)| format!("theta[{k}][{team}:{season}]"))
            .collect();
        let theta_len = theta_labels.len();
        let theta_offset = b.push(format!("theta[{k}]"), theta_labels, Transform::Identity);

        let ha = match spec.family {
            Family::Constant => {
                let alpha = b.scalar(format!("alpha[{k}]"), Transform::Identity);
                let eta = b.scale(format!("eta[{k}]"), fixed.map(|f| f.ha_scales[0]));
                HaParams::Constant { alpha, eta }
            }
            Family::Linear => {
                let beta0 = b.scalar(format!("beta0[{k}]"), Transform::Identity);
                let beta1 = b.scalar(format!("beta1[{k}]"), Transform::Identity);
                let lambda0 = b.scale(format!("lambda0[{k}]"), fixed.map(|f| f.ha_scales[0]));
                let lambda1 = b.scale(format!("lambda1[{k}]"), fixed.map(|f| f.ha_scales[1]));
                HaParams::Linear {
                    beta0,
                    beta1,
                    lambda0,
                    lambda1,
                }
            }
            Family::HierarchicalLinear => {
                let beta0 = b.scalar(format!("beta0[{k}]"), Transform::Identity);
                let beta1 = b.scalar(format!("beta1[{k}]"), Transform::Identity);
                let lambda0 = b.scale(format!("lambda0[{k}]"), None);
                HaParams::HierLinear {
                    beta0,
                    beta1,
                    lambda0,
                }
            }
            Family::TimeVarying => {
                let gamma_labels: Vec<String> = ds
                    .seasons
                    .iter()
                    .map(|season| format!("gamma[{k}][{season}]"))
                    .collect();
                let gamma_len = gamma_labels.len();
                let gamma_offset = b.push(format!("gamma[{k}]"), gamma_labels, Transform::Identity);
                let tau = b.scale(format!("tau[{k}]"), fixed.map(|f| f.ha_scales[0]));
                HaParams::TimeVarying {
                    gamma_offset,
                    gamma_len,
                    tau,
                }
            }
        };

        let zeta = b.scale(format!("zeta[{k}]"), fixed.map(|f| f.zeta));
        let sigma = b.scale(format!("sigma[{k}]"), fixed.map(|f| f.sigma));
        leagues.push(LeagueParams {
            theta_offset,
            theta_len,
            zeta,
            sigma,
            ha,
        });
    }

    let shared = match spec.family {
        Family::HierarchicalLinear => Some(SharedParams {
            beta1_star: b.scalar("beta1_star".to_string(), Transform::Identity),
            lambda1: b.scalar("lambda1".to_string(), Transform::Exp),
        }),
        _ => None,
    };

    Ok(ParameterLayout {
        dim: b.next,
        blocks: b.blocks,
        labels: b.labels,
        leagues,
        shared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_dataset, GameRecord};
    use crate::model::FixedScales;

    fn game(league: &str, season: i32, home: &str, away: &str) -> GameRecord {
        GameRecord {
            league_id: league.into(),
            season,
            home_team: home.into(),
            away_team: away.into(),
            home_score: 7,
            away_score: 3,
            neutral: false,
        }
    }

    /// Ten team-seasons: 5 teams in each of 2 seasons.
    fn ten_ts_dataset() -> LeagueDataset {
        let mut records = Vec::new();
        for season in [2010, 2011] {
            for i in 0..4 {
                records.push(game("X", season, &format!("T{i}"), &format!("T{}", i + 1)));
            }
        }
        let ds = build_dataset(&records, "X", None).unwrap();
        assert_eq!(ds.num_team_seasons(), 10);
        ds
    }

    #[test]
    fn constant_dimension_counts_every_prior_block() {
        let ds = ten_ts_dataset();
        let spec = ModelSpec::new(Family::Constant, vec!["X".into()]);
        let layout = build_layout(&spec, &[ds]).unwrap();
        // theta (10) + alpha + eta + zeta + sigma
        assert_eq!(layout.dim, 14);
        assert_eq!(layout.blocks.len(), 5);
    }

    #[test]
    fn linear_dimension_is_t_plus_six() {
        let ds = ten_ts_dataset();
        let spec = ModelSpec::new(Family::Linear, vec!["X".into()]);
        let layout = build_layout(&spec, &[ds]).unwrap();
        assert_eq!(layout.dim, 16);
    }

    #[test]
    fn time_varying_dimension_counts_seasons() {
        let mut records = Vec::new();
        for season in [2010, 2011, 2012] {
            records.push(game("X", season, "A", "B"));
        }
        // extra teams in 2010 to reach 10 team-seasons
        records.push(game("X", 2010, "C", "D"));
        records.push(game("X", 2010, "E", "F"));
        let ds = build_dataset(&records, "X", None).unwrap();
        assert_eq!(ds.num_team_seasons(), 10);
        let spec = ModelSpec::new(Family::TimeVarying, vec!["X".into()]);
        let layout = build_layout(&spec, &[ds]).unwrap();
        // theta (10) + gamma (3) + tau + zeta + sigma
        assert_eq!(layout.dim, 16);
    }

    #[test]
    fn hierarchical_dimension_formula() {
        let ds_a = build_dataset(&[game("A", 2010, "T0", "T1")], "A", None).unwrap();
        let ds_b = build_dataset(&[game("B", 2010, "U0", "U1")], "B", None).unwrap();
        let spec = ModelSpec::new(Family::HierarchicalLinear, vec!["A".into(), "B".into()]);
        let layout = build_layout(&spec, &[ds_a, ds_b]).unwrap();
        // sum(T_k)=4, 5 per-league scalars x2 leagues, + beta1_star + lambda1
        assert_eq!(layout.dim, 4 + 5 * 2 + 2);
        assert!(layout.block("beta1_star").is_some());
        assert!(layout.block("lambda1").is_some());
        assert_eq!(layout.block("lambda1").unwrap().transform, Transform::Exp);
    }

    #[test]
    fn hierarchical_requires_two_leagues() {
        let ds = ten_ts_dataset();
        let spec = ModelSpec::new(Family::HierarchicalLinear, vec!["X".into()]);
        assert!(build_layout(&spec, &[ds]).is_err());
    }

    #[test]
    fn fixed_scales_remove_blocks() {
        let ds = ten_ts_dataset();
        let mut spec = ModelSpec::new(Family::Constant, vec!["X".into()]);
        spec.fixed_scales = Some(FixedScales {
            zeta: 6.0,
            sigma: 13.0,
            ha_scales: vec![5.0],
        });
        let layout = build_layout(&spec, &[ds]).unwrap();
        // theta (10) + alpha only
        assert_eq!(layout.dim, 11);
        assert!(layout.block("sigma[X]").is_none());
    }

    #[test]
    fn blocks_are_dense_and_non_overlapping() {
        let ds = ten_ts_dataset();
        for family in [Family::Constant, Family::Linear, Family::TimeVarying] {
            let spec = ModelSpec::new(family, vec!["X".into()]);
            let layout = build_layout(&spec, &[ds.clone()]).unwrap();
            let mut covered = vec![false; layout.dim];
            for b in &layout.blocks {
                for i in b.offset..b.offset + b.len {
                    assert!(!covered[i], "overlap at {i}");
                    covered[i] = true;
                }
            }
            assert!(covered.iter().all(|c| *c), "layout has holes");
            assert_eq!(layout.labels.len(), layout.dim);
        }
    }

    #[test]
    fn manifest_lists_blocks_in_order() {
        let ds = ten_ts_dataset();
        let spec = ModelSpec::new(Family::Linear, vec!["X".into()]);
        let layout = build_layout(&spec, &[ds]).unwrap();
        let text = layout.manifest();
        assert!(text.starts_with("block,offset,len,transform\n"));
        assert!(text.contains("theta[X],0,10,identity"));
        assert!(text.contains("beta1[X],11,1,identity"));
        assert!(text.contains("sigma[X],15,1,exp"));
    }
}
