//! Precision at recall 1, the condition matrix and the NT/RG/RS suite.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composer::Composer;
use crate::error::{Error, Result};
use crate::fsio;
use crate::linalg;
use crate::place::{PlaceConvention, QuerySequence};
use crate::retrieval::{build_index, PlaceIndex};
use crate::store::{FeatureStore, Traversal};
use crate::synth::{perturb_reverse, perturb_speed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub query_start: u32,
    pub matched_start: u32,
    pub sq_distance: f32,
    pub correct: bool,
}

/// Retrieves the nearest entry for every window of `query` (stride 1).
pub fn match_queries(
    index: &PlaceIndex,
    query: &Traversal,
    composer: &Composer,
    conv: PlaceConvention,
) -> Result<Vec<QueryMatch>> {
    let n = composer.n;
    if query.len() < n {
        return Err(Error::Empty("query windows"));
    }
    (0..=query.len() - n)
        .into_par_iter()
        .map(|start| {
            let window = QuerySequence::window(query, start, n)?;
            let d = composer.describe(&window.features())?;
            let hit = index.query(&d.values)?;
            let entry = &index.entries()[hit.entry];
            Ok(QueryMatch {
                query_start: query.frames[start].frame_id,
                matched_start: hit.start_frame_id,
                sq_distance: hit.sq_distance,
                correct: conv.windows_match(&window.place_ids(), &entry.place_ids),
            })
        })
        .collect()
}

pub fn precision(matches: &[QueryMatch]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::Empty("query windows"));
    }
    Ok(matches.iter().filter(|m| m.correct).count() as f64 / matches.len() as f64)
}

/// Fraction of query windows whose nearest neighbour shows the same place.
pub fn evaluate(index: &PlaceIndex, query: &Traversal, composer: &Composer, conv: PlaceConvention) -> Result<f64> {
    precision(&match_queries(index, query, composer, conv)?)
}

/// Builds a stride-1 index over `reference` and evaluates `query` against it.
pub fn evaluate_pair(
    query: &Traversal,
    reference: &Traversal,
    composer: &Composer,
    conv: PlaceConvention,
) -> Result<f64> {
    let index = build_index(reference, composer, 1)?;
    evaluate(&index, query, composer, conv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    /// Unperturbed traversals.
    NT,
    /// Query traversal played backwards.
    RG,
    /// Query and reference independently speed-perturbed.
    RS,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::NT, Experiment::RG, Experiment::RS];
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub query_condition: u32,
    pub reference_condition: u32,
    pub speed_multipliers: Vec<usize>,
    /// Seeds the speed perturbation.
    pub rng_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            query_condition: 0,
            reference_condition: 1,
            speed_multipliers: vec![1, 2, 3],
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub composer: String,
    pub experiment: String,
    pub query_cond: u32,
    pub ref_cond: u32,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposerSummary {
    pub composer: String,
    pub k: usize,
    pub n: usize,
    pub nt: f64,
    pub rg: f64,
    pub rs: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl ComposerSummary {
    pub fn get(&self, e: Experiment) -> f64 {
        match e {
            Experiment::NT => self.nt,
            Experiment::RG => self.rg,
            Experiment::RS => self.rs,
        }
    }
}

/// Precision for every ordered pair of distinct conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMatrix {
    pub composer: String,
    pub conditions: Vec<u32>,
    /// `precision[i][j]` queries condition `i` against reference `j`;
    /// the diagonal is `None`.
    pub precision: Vec<Vec<Option<f64>>>,
}

impl ConditionMatrix {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["query_cond".to_string()];
            header.extend(self.conditions.iter().map(u32::to_string));
            w.write_record(&header)?;
            for (c, row) in self.conditions.iter().zip(&self.precision) {
                let mut rec = vec![c.to_string()];
                rec.extend(row.iter().map(|p| p.map_or(String::new(), |v| v.to_string())));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
        }
        Ok(buf)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let buf = self.to_csv()?;
        fsio::write_atomic(path, |w| w.write_all(&buf))
    }
}

pub fn condition_matrix(world: &FeatureStore, label: &str, composer: &Composer) -> Result<ConditionMatrix> {
    let conditions = world.condition_ids();
    if conditions.len() < 2 {
        return Err(Error::Config("condition matrix needs at least 2 conditions".into()));
    }
    let precision = conditions
        .iter()
        .map(|&q| {
            conditions
                .iter()
                .map(|&r| {
                    if q == r {
                        return Ok(None);
                    }
                    evaluate_pair(world.traversal(q)?, world.traversal(r)?, composer, world.convention).map(Some)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionMatrix {
        composer: label.to_string(),
        conditions,
        precision,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<ComposerSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub condition_matrices: Vec<ConditionMatrix>,
}

impl EvalReport {
    pub fn summary_for(&self, composer: &str) -> Option<&ComposerSummary> {
        self.summary.iter().find(|s| s.composer == composer)
    }

    /// Flat `composer,experiment,query_cond,ref_cond,precision` table; condition
    /// matrix entries appear under the experiment name `matrix`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for row in &self.rows {
                w.serialize(row)?;
            }
            for m in &self.condition_matrices {
                for (q, line) in m.conditions.iter().zip(&m.precision) {
                    for (r, p) in m.conditions.iter().zip(line) {
                        if let Some(precision) = p {
                            w.serialize(ReportRow {
                                composer: m.composer.clone(),
                                experiment: "matrix".into(),
                                query_cond: *q,
                                ref_cond: *r,
                                precision: *precision,
                            })?;
                        }
                    }
                }
            }
            w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
        }
        Ok(buf)
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fsio::write_json_atomic(&dir.join("report.json"), self)?;
        let csv = self.to_csv()?;
        fsio::write_atomic(&dir.join("report.csv"), |w| w.write_all(&csv))
    }
}

/// The perturbed stores of each experiment, shared by all composers.
pub fn experiment_worlds(world: &FeatureStore, cfg: &SuiteConfig) -> Result<Vec<(Experiment, FeatureStore)>> {
    world.traversal(cfg.query_condition)?;
    world.traversal(cfg.reference_condition)?;
    if cfg.query_condition == cfg.reference_condition {
        return Err(Error::Config("query and reference conditions must differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let rs = perturb_speed(world, cfg.query_condition, &cfg.speed_multipliers, &mut rng)?;
    let rs = perturb_speed(&rs, cfg.reference_condition, &cfg.speed_multipliers, &mut rng)?;
    Ok(vec![
        (Experiment::NT, world.clone()),
        (Experiment::RG, perturb_reverse(world, cfg.query_condition)?),
        (Experiment::RS, rs),
    ])
}

/// Evaluates every labelled composer under NT, RG and RS.
pub fn run_experiment_suite(
    world: &FeatureStore,
    composers: &[(&str, &Composer)],
    cfg: &SuiteConfig,
) -> Result<EvalReport> {
    if composers.is_empty() {
        return Err(Error::MissingParams("no composers to evaluate".into()));
    }
    let worlds = experiment_worlds(world, cfg)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &(label, composer) in composers {
        let mut p = [0.0; 3];
        for (slot, (exp, w)) in p.iter_mut().zip(&worlds) {
            *slot = evaluate_pair(
                w.traversal(cfg.query_condition)?,
                w.traversal(cfg.reference_condition)?,
                composer,
                w.convention,
            )?;
            rows.push(ReportRow {
                composer: label.to_string(),
                experiment: exp.to_string(),
                query_cond: cfg.query_condition,
                ref_cond: cfg.reference_condition,
                precision: *slot,
            });
        }
        let (mean, stddev) = linalg::mean_std(&p);
        summary.push(ComposerSummary {
            composer: label.to_string(),
            k: composer.output_dim(world.dim),
            n: composer.n,
            nt: p[0],
            rg: p[1],
            rs: p[2],
            mean,
            stddev,
        });
    }
    Ok(EvalReport {
        rows,
        summary,
        condition_matrices: Vec::new(),
    })
}
