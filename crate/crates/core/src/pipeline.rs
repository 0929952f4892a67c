//! End-to-end orchestration: ingest, preprocess, embed, fuse, project, evaluate.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{parse_manifest, Manifest};
use crate::embed::{
    apply_standardizer, embed_all, fit_standardizer, load_backend, BackendKind, BackendSpec, EmbeddingStore,
    Standardizer,
};
use crate::error::{Error, Result, StageExt};
use crate::eval::{
    build_trials, enumerate_experiments, pairwise_distances, protocol_records, run_protocol, Protocol, ScoreSet,
};
use crate::fuse::{encode_labels, fit_selection, fuse, KeptIndices, ReducedVector, SelectorConfig};
use crate::preprocess::{preprocess_record, ClaheParams, EarImage};
use crate::project::{tsne_embed, TsneParams};
use crate::report::{BackendSummary, ProjectionSummary, RunReport, SelectionSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolSelection {
    pub within: bool,
    pub cross: bool,
    /// Enrollment session for cross-session experiments and for fitting the
    /// standardizer and selector.
    pub anchor_session: u32,
}

impl Default for ProtocolSelection {
    fn default() -> Self {
        ProtocolSelection {
            within: true,
            cross: true,
            anchor_session: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub clahe: ClaheParams,
    /// Fused in this order.
    pub backends: Vec<BackendSpec>,
    pub selector: SelectorConfig,
    pub tsne: TsneParams,
    pub projection_enabled: bool,
    pub target_far: f64,
    pub protocol: ProtocolSelection,
    /// Master seed; copied into the selector and t-SNE seeds on resolve.
    pub seed: u64,
    pub save_preprocessed: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: PathBuf::from("manifest.csv"),
            out_dir: PathBuf::from("out"),
            clahe: ClaheParams::default(),
            backends: vec![BackendSpec::builtin()],
            selector: SelectorConfig::default(),
            tsne: TsneParams::default(),
            projection_enabled: true,
            target_far: 0.02,
            protocol: ProtocolSelection::default(),
            seed: 0,
            save_preprocessed: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backends.is_empty() {
            return Err(Error::param("at least one backend is required"));
        }
        let mut names = HashSet::new();
        for b in &self.backends {
            b.validate()?;
            if !names.insert(b.name.as_str()) {
                return Err(Error::param(format!("duplicate backend name {}", b.name)));
            }
        }
        if !(self.target_far > 0.0 && self.target_far <= 1.0) {
            return Err(Error::param(format!("target_far {} outside (0, 1]", self.target_far)));
        }
        if self.protocol.anchor_session == 0 {
            return Err(Error::param("anchor_session must be at least 1"));
        }
        if !self.protocol.within && !self.protocol.cross {
            return Err(Error::param("no protocol selected"));
        }
        self.clahe.validate()?;
        self.selector.validate()?;
        self.tsne.validate()?;
        Ok(())
    }

    /// Validated copy with the master seed propagated.
    pub fn resolved(&self) -> Result<PipelineConfig> {
        self.validate()?;
        let mut cfg = self.clone();
        cfg.selector.seed = cfg.seed;
        cfg.tsne.seed = cfg.seed;
        Ok(cfg)
    }
}

/// Parses and checks a manifest; warnings are logged.
pub fn ingest(path: &Path) -> Result<Manifest> {
    let manifest = parse_manifest(path).stage("ingest")?;
    for w in manifest.validate().stage("ingest")? {
        log::warn!("{w}");
    }
    if manifest.records.is_empty() {
        return Err(Error::input("manifest has no records")).stage("ingest");
    }
    Ok(manifest)
}

pub fn preprocess_all(manifest: &Manifest, params: &ClaheParams) -> Result<Vec<EarImage>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            preprocess_record(manifest, r, params)
                .map_err(|e| Error::input(format!("record {}: {e}", r.key())))
        })
        .collect::<Result<Vec<_>>>()
        .stage("preprocess")
}

pub fn embed_store(spec: &BackendSpec, images: &[EarImage]) -> Result<EmbeddingStore> {
    let backend = load_backend(spec).stage("embed")?;
    log::info!("backend {} produces {} values", backend.name(), backend.dim());
    let vectors = embed_all(&backend, images).stage("embed")?;
    EmbeddingStore::new(backend.name(), backend.dim(), vectors).stage("embed")
}

/// Fused, selected vectors for every manifest record, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSet {
    pub keys: Vec<String>,
    pub matrix: Array2<f64>,
    pub kept: Vec<KeptIndices>,
    pub standardizers: Vec<Standardizer>,
    /// Records the standardizer and selector saw.
    pub fit_records: Vec<String>,
    pub fit_session: u32,
}

impl FusedSet {
    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect()
    }
}

/// Standardizes and selects per backend using only `fit_session` records
/// (labels are subject ids), then concatenates in store order.
pub fn fuse_stores(
    manifest: &Manifest,
    stores: &[EmbeddingStore],
    selector: &SelectorConfig,
    fit_session: u32,
) -> Result<FusedSet> {
    if stores.is_empty() {
        return Err(Error::param("no embedding stores to fuse"));
    }
    let keys: Vec<String> = manifest.records.iter().map(|r| r.key()).collect();
    let fit: Vec<usize> = (0..keys.len())
        .filter(|&i| manifest.records[i].session == fit_session)
        .collect();
    let (labels, n_classes) = encode_labels(
        &fit.iter()
            .map(|&i| manifest.records[i].subject_id.as_str())
            .collect::<Vec<_>>(),
    );
    if n_classes < 2 {
        return Err(Error::input(format!(
            "session {fit_session} needs records from at least 2 subjects to fit feature selection"
        )));
    }

    let mut per_backend: Vec<Vec<ReducedVector>> = Vec::with_capacity(stores.len());
    let mut kept_all = Vec::new();
    let mut standardizers = Vec::new();
    for store in stores {
        let by_key: HashMap<&str, &crate::embed::EmbeddingVector> =
            store.vectors.iter().map(|v| (v.record.as_str(), v)).collect();
        let vectors: Vec<&crate::embed::EmbeddingVector> = keys
            .iter()
            .map(|k| {
                by_key.get(k.as_str()).copied().ok_or_else(|| {
                    Error::input(format!("store {} has no vector for record {k}", store.backend))
                })
            })
            .collect::<Result<_>>()?;
        let fit_vectors: Vec<&crate::embed::EmbeddingVector> = fit.iter().map(|&i| vectors[i]).collect();
        let stats = fit_standardizer(&fit_vectors)?;
        let standardized: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| apply_standardizer(&v.values, &stats))
            .collect::<Result<_>>()?;
        let fit_matrix = Array2::from_shape_fn((fit.len(), store.dim), |(r, c)| standardized[fit[r]][c]);
        let kept = fit_selection(&store.backend, fit_matrix.view(), &labels, selector)?;
        let reduced = standardized
            .iter()
            .zip(&keys)
            .map(|(values, key)| {
                Ok(ReducedVector {
                    backend: store.backend.clone(),
                    record: key.clone(),
                    values: kept.apply(values)?,
                    indices: kept.indices.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        per_backend.push(reduced);
        kept_all.push(kept);
        standardizers.push(stats);
    }

    let width: usize = kept_all.iter().map(|k| k.indices.len()).sum();
    let mut matrix = Array2::zeros((keys.len(), width));
    for (row, mut out) in matrix.outer_iter_mut().enumerate() {
        let parts: Vec<ReducedVector> = per_backend.iter().map(|b| b[row].clone()).collect();
        let fused = fuse(&parts)?;
        out.iter_mut().zip(fused.values).for_each(|(o, v)| *o = v);
    }
    Ok(FusedSet {
        fit_records: fit.iter().map(|&i| keys[i].clone()).collect(),
        keys,
        matrix,
        kept: kept_all,
        standardizers,
        fit_session,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentScores {
    pub protocol: Protocol,
    pub scores: ScoreSet,
    /// Keys and coordinates of the joint projection, when enabled.
    pub coordinates: Option<(Vec<String>, Array2<f64>)>,
    pub projection: Option<ProjectionSummary>,
}

/// Projects the experiment's records jointly (or not) and scores its trials.
pub fn score_experiment(
    manifest: &Manifest,
    fused: &FusedSet,
    protocol: Protocol,
    tsne: &TsneParams,
    projection_enabled: bool,
) -> Result<ExperimentScores> {
    let index = fused.row_index();
    let records = protocol_records(manifest, &protocol)?;
    let keys: Vec<String> = records.iter().map(|r| r.key()).collect();
    let rows: Vec<usize> = keys
        .iter()
        .map(|k| index.get(k.as_str()).copied().ok_or_else(|| Error::input(format!("no fused vector for {k}"))))
        .collect::<Result<_>>()?;
    let subset = Array2::from_shape_fn((rows.len(), fused.matrix.ncols()), |(r, c)| fused.matrix[[rows[r], c]]);

    let (points, projection) = if projection_enabled {
        let result = tsne_embed(subset.view(), tsne)?;
        let summary = ProjectionSummary {
            protocol,
            n_points: rows.len(),
            perplexity: result.params.perplexity,
            final_kl: result.kl_trace.last().map(|p| p.kl),
            unconverged_rows: result.unconverged_rows,
        };
        (result.coordinates, Some(summary))
    } else {
        (subset, None)
    };

    let distances = pairwise_distances(points.view())?;
    let local: HashMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let trials = build_trials(manifest, &protocol)?;
    let d = trials
        .iter()
        .map(|t| distances[[local[t.enroll_key.as_str()], local[t.probe_key.as_str()]]])
        .collect();
    let scores = ScoreSet::new(trials, d)?;
    Ok(ExperimentScores {
        protocol,
        scores,
        coordinates: projection.as_ref().map(|_| (keys, points)),
        projection,
    })
}

pub struct RunOutput {
    pub report: RunReport,
    pub experiments: Vec<ExperimentScores>,
    pub stores: Vec<EmbeddingStore>,
    pub fused: FusedSet,
}

/// Fuses precomputed stores, projects and evaluates every selected experiment.
pub fn evaluate_stores(cfg: &PipelineConfig, manifest: &Manifest, stores: Vec<EmbeddingStore>) -> Result<RunOutput> {
    let cfg = cfg.resolved()?;
    let anchor = cfg.protocol.anchor_session;
    let fused = fuse_stores(manifest, &stores, &cfg.selector, anchor).stage("fuse")?;
    let protocols = enumerate_experiments(manifest, anchor, cfg.protocol.within, cfg.protocol.cross);
    if protocols.is_empty() {
        return Err(Error::input("no experiments to run for this manifest")).stage("eval");
    }
    let experiments: Vec<ExperimentScores> = protocols
        .par_iter()
        .map(|&p| score_experiment(manifest, &fused, p, &cfg.tsne, cfg.projection_enabled))
        .collect::<Result<_>>()
        .stage("project")?;
    let eval = run_protocol(
        experiments.iter().map(|e| (e.protocol, e.scores.clone())).collect(),
        cfg.target_far,
    )
    .stage("eval")?;

    let backends = cfg
        .backends
        .iter()
        .zip(&stores)
        .map(|(spec, store)| BackendSummary {
            name: spec.name.clone(),
            kind: spec.kind,
            dim: store.dim,
            input_normalization: (spec.kind == BackendKind::ModelFile).then_some(spec.input_normalization),
        })
        .collect();
    let mut notes = vec![
        "trials are all image pairs of each experiment; no per-subject template averaging".to_string(),
        format!("thresholds calibrated per experiment as the largest impostor distance with FAR <= {}", cfg.target_far),
        format!(
            "standardizer and feature selector fit on the {} records of session {anchor} only",
            fused.fit_records.len()
        ),
    ];
    if cfg.projection_enabled {
        notes.push("distances are computed after one joint t-SNE projection per experiment and are comparable only within it".into());
    } else {
        notes.push("projection bypassed; distances computed in the fused feature space".into());
    }
    let report = RunReport::new(
        cfg.clone(),
        eval,
        backends,
        SelectionSummary {
            fit_session: anchor,
            fit_records: fused.fit_records.len(),
            kept: fused.kept.clone(),
        },
        experiments.iter().filter_map(|e| e.projection.clone()).collect(),
        notes,
    );
    Ok(RunOutput {
        report,
        experiments,
        stores,
        fused,
    })
}

/// Ingest through evaluation, in memory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput> {
    let cfg = cfg.resolved()?;
    let manifest = ingest(&cfg.manifest)?;
    let images = preprocess_all(&manifest, &cfg.clahe)?;
    if cfg.save_preprocessed {
        let dir = cfg.out_dir.join("preprocessed");
        for (img, rec) in images.iter().zip(&manifest.records) {
            img.save_png(&dir, rec).stage("preprocess")?;
        }
    }
    let stores = cfg
        .backends
        .iter()
        .map(|spec| embed_store(spec, &images))
        .collect::<Result<Vec<_>>>()?;
    evaluate_stores(&cfg, &manifest, stores)
}

pub fn store_path(out_dir: &Path, backend: &str) -> PathBuf {
    out_dir.join("embeddings").join(format!("{backend}.aure"))
}

pub fn kept_path(out_dir: &Path, backend: &str) -> PathBuf {
    out_dir.join("embeddings").join(format!("{backend}.kept.json"))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `record_key,y1,...,yk`.
pub fn coordinates_csv(keys: &[String], coords: &Array2<f64>) -> String {
    let mut out = String::from("record_key");
    for c in 1..=coords.ncols() {
        out.push_str(&format!(",y{c}"));
    }
    out.push('\n');
    for (k, row) in keys.iter().zip(coords.outer_iter()) {
        out.push_str(k);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Writes the report, per-experiment scores, ROC plots, coordinates,
/// embedding stores and kept-index lists under `out_dir`.
pub fn write_outputs(output: &RunOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for store in &output.stores {
        let path = store_path(out_dir, &store.backend);
        write_file(&path, &store.to_bytes()?)?;
        written.push(path);
    }
    for kept in &output.fused.kept {
        let path = kept_path(out_dir, &kept.backend);
        write_file(&path, serde_json::to_string(kept)?.as_bytes())?;
        written.push(path);
    }
    for e in &output.experiments {
        let label = e.protocol.label();
        let path = out_dir.join("scores").join(format!("{label}.csv"));
        let mut buf = Vec::new();
        e.scores.write_csv(&mut buf)?;
        write_file(&path, &buf)?;
        written.push(path);
        if let Some((keys, coords)) = &e.coordinates {
            let path = out_dir.join("coordinates").join(format!("{label}.csv"));
            write_file(&path, coordinates_csv(keys, coords).as_bytes())?;
            written.push(path);
        }
    }
    written.extend(crate::report::render_roc_plots(&output.report, out_dir)?);
    // The report goes last so its presence means the run completed.
    let path = out_dir.join("report.json");
    write_file(&path, output.report.to_json()?.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Loads `embeddings/<name>.aure` for every configured backend.
pub fn read_stores(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<EmbeddingStore>> {
    cfg.backends
        .iter()
        .map(|b| {
            let store = crate::embed::read_store(&store_path(dir, &b.name))?;
            if store.backend != b.name {
                return Err(Error::Store(format!("expected backend {}, found {}", b.name, store.backend)));
            }
            Ok(store)
        })
        .collect()
}
