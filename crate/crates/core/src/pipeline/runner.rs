use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::persist::*;
use super::stages::{self, BaselineErrors, IterationRecord, Labels, Prepared, ReplicationSummary, Simulated};
use crate::error::{Error, Result};
use crate::eval::ErrorReport;
use crate::io::{read_container, read_json, write_container, write_csv, write_json, Container};
use crate::model::{write_checkpoint, Checkpoint, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Preprocess,
    Fit,
    Train,
    Refine,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Preprocess,
        Stage::Fit,
        Stage::Train,
        Stage::Refine,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Preprocess => "preprocess",
            Stage::Fit => "fit",
            Stage::Train => "train",
            Stage::Refine => "refine",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Direct inputs. Baseline training is skipped when disabled.
    pub fn deps(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        match self {
            Stage::Simulate => vec![],
            Stage::Preprocess | Stage::Fit => vec![Stage::Simulate],
            Stage::Train => vec![Stage::Preprocess, Stage::Fit],
            Stage::Refine => vec![Stage::Preprocess],
            Stage::Evaluate if cfg.baselines => vec![Stage::Fit, Stage::Train, Stage::Refine],
            Stage::Evaluate => vec![Stage::Fit, Stage::Refine],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    stage: Stage,
    seed: u64,
    key: String,
    files: Vec<String>,
}

const MANIFEST: &str = "stage.json";
/// Bumped whenever an artifact layout changes, invalidating old caches.
const CACHE_VERSION: &str = "imuloc-stage-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageRecord {
    pub seed: u64,
    pub stage: Stage,
    pub executed: bool,
}

/// Runs stages for one experiment under `root/seed-<seed>/<stage>/`, reusing
/// outputs whose content hash matches.
pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    root: PathBuf,
    use_cache: bool,
    done: Mutex<HashSet<(Stage, u64)>>,
    records: Mutex<Vec<StageRecord>>,
}

#[derive(Serialize)]
struct TruthRow {
    t: f64,
    x: f64,
    y: f64,
    z: Option<f64>,
}

#[derive(Serialize)]
struct CurveRow {
    iteration: usize,
    epoch: usize,
    learning_rate: f64,
    loss: f64,
}

#[derive(Serialize)]
struct IterationRow {
    iteration: usize,
    epochs: usize,
    pseudo_mean: f64,
    pseudo_median: f64,
    pseudo_p90: f64,
    test_mean: f64,
    test_median: f64,
    test_p90: f64,
    label_change: f64,
    first_epoch_loss: f64,
    last_epoch_loss: f64,
}

impl From<&IterationRecord> for IterationRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            epochs: r.epochs,
            pseudo_mean: r.pseudo_error.mean,
            pseudo_median: r.pseudo_error.median,
            pseudo_p90: r.pseudo_error.p90,
            test_mean: r.test_error.mean,
            test_median: r.test_error.median,
            test_p90: r.test_error.p90,
            label_change: r.label_change,
            first_epoch_loss: r.first_epoch_loss,
            last_epoch_loss: r.last_epoch_loss,
        }
    }
}

#[derive(Serialize)]
struct MethodRow<'s> {
    seed: u64,
    method: &'s str,
    count: usize,
    mean: f64,
    median: f64,
    p90: f64,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, root: impl Into<PathBuf>, use_cache: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            root: root.into(),
            use_cache,
            done: Mutex::new(HashSet::new()),
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.cfg
    }

    /// Stages touched so far, in completion order.
    pub fn records(&self) -> Vec<StageRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn executed(&self) -> usize {
        self.records().iter().filter(|r| r.executed).count()
    }

    pub fn stage_dir(&self, stage: Stage, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}")).join(stage.name())
    }

    fn section(&self, stage: Stage) -> serde_json::Value {
        let c = self.cfg;
        match stage {
            Stage::Simulate => json!({ "scenario": c.scenario }),
            Stage::Preprocess => json!({ "preprocess": c.preprocess, "test_fraction": c.scenario.test_fraction }),
            Stage::Fit => json!({ "fit": c.fit }),
            Stage::Train => json!({
                "train": c.train,
                "supervised_epochs": c.supervised_epochs,
                "knn_k": c.knn_k,
                "smoothing": c.smoothing(),
            }),
            Stage::Refine => json!({
                "train": c.train,
                "fit": c.fit,
                "refine_epochs": c.refine_epochs,
                "smoothing": c.smoothing(),
            }),
            Stage::Evaluate => json!({ "baselines": c.baselines }),
        }
    }

    /// Content hash of the stage's settings, seed and upstream keys.
    pub fn key(&self, stage: Stage, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(CACHE_VERSION.as_bytes());
        h.update(stage.name().as_bytes());
        h.update(seed.to_le_bytes());
        h.update(serde_json::to_vec(&self.section(stage)).expect("config sections serialize"));
        for d in stage.deps(self.cfg) {
            h.update(self.key(d, seed).as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn key_bytes(&self, stage: Stage, seed: u64) -> [u8; 32] {
        let mut out = [0u8; 32];
        hex::decode_to_slice(self.key(stage, seed), &mut out).expect("keys are 64 hex digits");
        out
    }

    fn is_fresh(&self, stage: Stage, seed: u64) -> bool {
        let dir = self.stage_dir(stage, seed);
        let Ok(m) = read_json::<Manifest>(dir.join(MANIFEST)) else {
            return false;
        };
        if m.key != self.key(stage, seed) {
            log::warn!("stale cache for `{stage}` (seed {seed}) in {}; recomputing", dir.display());
            return false;
        }
        m.files.iter().all(|f| dir.join(f).is_file())
    }

    /// Makes `stage` available for `seed`. With `chain`, missing inputs are
    /// computed too; otherwise they must already be on disk.
    pub fn ensure(&self, stage: Stage, seed: u64, chain: bool) -> Result<()> {
        if self.done.lock().unwrap().contains(&(stage, seed)) {
            return Ok(());
        }
        if self.use_cache && self.is_fresh(stage, seed) {
            self.finish(stage, seed, false);
            return Ok(());
        }
        for d in stage.deps(self.cfg) {
            if chain {
                self.ensure(d, seed, true)?;
            } else if !self.done.lock().unwrap().contains(&(d, seed)) && !self.is_fresh(d, seed) {
                return Err(Error::MissingStage {
                    stage: stage.name().into(),
                    missing: d.name().into(),
                });
            }
        }
        log::info!("running `{stage}` for seed {seed}");
        self.execute(stage, seed)?;
        self.finish(stage, seed, true);
        Ok(())
    }

    fn finish(&self, stage: Stage, seed: u64, executed: bool) {
        self.done.lock().unwrap().insert((stage, seed));
        self.records.lock().unwrap().push(StageRecord { seed, stage, executed });
    }

    /// Runs `stages` in dependency order for every seed, seeds in parallel.
    pub fn run(&self, stages: &[Stage], seeds: &[u64], chain: bool) -> Result<()> {
        let mut ordered = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        seeds.par_iter().try_for_each(|&seed| {
            ordered.iter().try_for_each(|&st| self.ensure(st, seed, chain))
        })
    }

    /// Full chain for every configured seed; returns summaries in seed order.
    pub fn run_all(&self) -> Result<Vec<ReplicationSummary>> {
        self.run(&[Stage::Evaluate], &self.cfg.seeds, true)?;
        self.cfg.seeds.iter().map(|&s| self.load_summary(s)).collect()
    }

    fn execute(&self, stage: Stage, seed: u64) -> Result<()> {
        let dir = self.stage_dir(stage, seed);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        let cfg = self.cfg;
        let files: Vec<String> = match stage {
            Stage::Simulate => {
                let sim = stages::simulate(cfg, seed)?;
                write_container(dir.join("dataset.imds"), &simulated_to_container(&sim, &cfg.scenario.name)?)?;
                write_json(
                    dir.join("dataset.json"),
                    &json!({
                        "scenario": cfg.scenario.name,
                        "seed": seed,
                        "samples": sim.truth.len(),
                        "dims": sim.truth.dims(),
                        "control_points": sim.control_points.iter().map(|c| c.sample_index).collect::<Vec<_>>(),
                        "carrier": sim.channel.carrier,
                        "trps": cfg.scenario.trps,
                        "antennas_per_trp": cfg.scenario.antennas_per_trp,
                    }),
                )?;
                let t = &sim.truth;
                let rows: Vec<TruthRow> = (0..t.len())
                    .map(|i| TruthRow {
                        t: t.timestamps[i],
                        x: t.positions[[i, 0]],
                        y: t.positions[[i, 1]],
                        z: (t.dims() > 2).then(|| t.positions[[i, 2]]),
                    })
                    .collect();
                write_csv(dir.join("truth.csv"), &rows)?;
                vec!["dataset.imds".into(), "dataset.json".into(), "truth.csv".into()]
            }
            Stage::Preprocess => {
                let sim = self.load_simulated(seed)?;
                let prep = stages::prepare(cfg, &sim, seed)?;
                write_container(dir.join("features.imds"), &prepared_to_container(&prep)?)?;
                write_json(dir.join("preprocess.json"), &prep.report)?;
                vec!["features.imds".into(), "preprocess.json".into()]
            }
            Stage::Fit => {
                let sim = self.load_simulated(seed)?;
                let labels = stages::fit_labels(cfg, &sim, seed)?;
                write_container(dir.join("labels.imds"), &labels_to_container(&labels)?)?;
                write_csv(dir.join("segments.csv"), &labels.fit.segments)?;
                vec!["labels.imds".into(), "segments.csv".into()]
            }
            Stage::Train => {
                let sim = self.load_simulated(seed)?;
                let prep = self.load_prepared(seed)?;
                let labels = self.load_labels(seed)?;
                let b = stages::train_baselines(cfg, &sim, &prep, &labels, seed)?;
                let hash = self.key_bytes(stage, seed);
                self.save_model(&dir.join("supervised.ckpt"), &b.supervised, hash)?;
                self.save_model(&dir.join("dead_reckoning.ckpt"), &b.dead_reckoning, hash)?;
                let mut c = Container::new(json!({ "kind": "baseline_errors" }));
                c.push_f64_1d("supervised", &b.errors.supervised.errors)?;
                c.push_f64_1d("dead_reckoning", &b.errors.dead_reckoning.errors)?;
                c.push_f64_1d("knn", &b.errors.knn.errors)?;
                write_container(dir.join("errors.imds"), &c)?;
                vec!["supervised.ckpt".into(), "dead_reckoning.ckpt".into(), "errors.imds".into()]
            }
            Stage::Refine => {
                let sim = self.load_simulated(seed)?;
                let prep = self.load_prepared(seed)?;
                let its = stages::refine(cfg, &sim, &prep, seed)?;
                let hash = self.key_bytes(stage, seed);
                let mut files = Vec::new();
                let mut c = Container::new(json!({ "kind": "refinement" }));
                let mut curves = Vec::new();
                for it in &its {
                    let name = format!("iteration-{}.ckpt", it.iteration);
                    self.save_model(&dir.join(&name), &it.model, hash)?;
                    files.push(name);
                    c.push_f64_2d(&format!("pseudo_labels_{}", it.iteration), &it.pseudo_labels)?;
                    c.push_f64_1d(&format!("test_errors_{}", it.iteration), &it.test_error.errors)?;
                    curves.extend(it.curve.iter().map(|e| CurveRow {
                        iteration: it.iteration,
                        epoch: e.epoch,
                        learning_rate: e.learning_rate,
                        loss: e.loss,
                    }));
                }
                write_container(dir.join("refine.imds"), &c)?;
                let records: Vec<IterationRecord> = its.iter().map(IterationRecord::from_iteration).collect();
                write_json(dir.join("iterations.json"), &records)?;
                write_csv(
                    dir.join("iterations.csv"),
                    &records.iter().map(IterationRow::from).collect::<Vec<_>>(),
                )?;
                write_csv(dir.join("curves.csv"), &curves)?;
                files.extend(["refine.imds", "iterations.json", "iterations.csv", "curves.csv"].map(String::from));
                files
            }
            Stage::Evaluate => {
                let sim = self.load_simulated(seed)?;
                let prep = self.load_prepared(seed)?;
                let labels = self.load_labels(seed)?;
                let baselines = if cfg.baselines {
                    Some(self.load_baseline_errors(seed)?)
                } else {
                    None
                };
                let records: Vec<IterationRecord> =
                    read_json(self.stage_dir(Stage::Refine, seed).join("iterations.json"))?;
                let summary = stages::summarize(seed, &sim, &prep, &labels, baselines.as_ref(), &records)?;
                write_json(dir.join("summary.json"), &summary)?;
                let rows: Vec<MethodRow> = summary
                    .methods
                    .iter()
                    .map(|m| MethodRow {
                        seed,
                        method: &m.method,
                        count: m.test.count,
                        mean: m.test.mean,
                        median: m.test.median,
                        p90: m.test.p90,
                    })
                    .collect();
                write_csv(dir.join("methods.csv"), &rows)?;
                vec!["summary.json".into(), "methods.csv".into()]
            }
        };
        write_json(
            dir.join(MANIFEST),
            &Manifest {
                stage,
                seed,
                key: self.key(stage, seed),
                files,
            },
        )
    }

    fn save_model(&self, path: &Path, model: &Mlp, config_hash: [u8; 32]) -> Result<()> {
        write_checkpoint(
            path,
            &Checkpoint {
                model: model.clone(),
                config_hash,
            },
        )
    }

    pub fn load_simulated(&self, seed: u64) -> Result<Simulated> {
        simulated_from_container(&read_container(self.stage_dir(Stage::Simulate, seed).join("dataset.imds"))?)
    }

    pub fn load_prepared(&self, seed: u64) -> Result<Prepared> {
        prepared_from_container(&read_container(self.stage_dir(Stage::Preprocess, seed).join("features.imds"))?)
    }

    pub fn load_labels(&self, seed: u64) -> Result<Labels> {
        labels_from_container(&read_container(self.stage_dir(Stage::Fit, seed).join("labels.imds"))?)
    }

    pub fn load_baseline_errors(&self, seed: u64) -> Result<BaselineErrors> {
        let c = read_container(self.stage_dir(Stage::Train, seed).join("errors.imds"))?;
        let report = |name: &str| -> Result<ErrorReport> { ErrorReport::new(c.f64_1d(name)?.to_vec()) };
        Ok(BaselineErrors {
            supervised: report("supervised")?,
            dead_reckoning: report("dead_reckoning")?,
            knn: report("knn")?,
        })
    }

    /// Pseudo-labels of every refinement iteration.
    pub fn load_refined_labels(&self, seed: u64) -> Result<Vec<Array2<f64>>> {
        let c = read_container(self.stage_dir(Stage::Refine, seed).join("refine.imds"))?;
        (0..self.cfg.refine_epochs.len())
            .map(|i| c.f64_2d(&format!("pseudo_labels_{i}")))
            .collect()
    }

    pub fn load_summary(&self, seed: u64) -> Result<ReplicationSummary> {
        read_json(self.stage_dir(Stage::Evaluate, seed).join("summary.json"))
    }
}
