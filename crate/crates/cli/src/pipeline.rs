//! One function per stage. Each reads its predecessors' files from the
//! pipeline root and writes only under its own directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use lrcp_core::attribution::{attribute_by_class, build_shap_volume, ForestConfig};
use lrcp_core::autoencoder::{decode_model, encode_model, extract_activations, total_reconstruction_error, train, TrainConfig};
use lrcp_core::io::{encode_volume, load_cohort, save_cohort};
use lrcp_core::lrcp::{accuracy_map, lrcp_grid, summary_counts, summary_csv, Comparison, ComparisonEmbeddings};
use lrcp_core::phantom::{generate_phantom_cohort, PhantomConfig};
use lrcp_core::projection::bootstrap::bootstrap_embeddings;
use lrcp_core::projection::io::{format_embedding, format_metadata, parse_embedding};
use lrcp_core::projection::{activation_matrix, embed, EmbeddingMatrix, Layer, Method};
use lrcp_core::region_stats::{correlate_embedding_regions, overlap_report, top_regions, CorrelationResult, Ranking};
use lrcp_core::seed;
use lrcp_core::validation::{correct_table, CorrectionMode};
use lrcp_core::volume::{balanced_indices, build_region_profiles};
use lrcp_core::{ClassLabel, Cohort, RegionProfileMatrix, Subject, Volume};
use rand::seq::SliceRandom;

use crate::config::{PipelineConfig, SECTIONS};
use crate::error::{in_stage, CliError};
use crate::stage::{check_current, stage_hash, write_log, Stage, StageLog};

/// Largest tolerated |base + Σφ − prediction| before the shap stage fails.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-6;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory");
    for r in rows {
        w.write_record(&r).expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
}

fn csv_rows(text: &str, path: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let bad = |e: csv::Error| CliError::Stage { stage: "read", msg: format!("{}: {e}", path.display()) };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(bad)?;
            Ok(header.iter().cloned().zip(rec.iter().map(str::to_string)).collect())
        })
        .collect()
}

fn field<'a>(row: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str, CliError> {
    row.get(key)
        .map(String::as_str)
        .ok_or_else(|| CliError::Stage { stage: "read", msg: format!("{}: missing column {key}", path.display()) })
}

fn parse_f64(s: &str, path: &Path) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Stage { stage: "read", msg: format!("{}: bad number {s:?}", path.display()) })
}

pub fn phantom_config(cfg: &PipelineConfig) -> PhantomConfig {
    PhantomConfig { seed: seed::derive_str(cfg.seed, "phantom"), ..cfg.phantom.clone() }
}

fn cohort(root: &Path, cfg: &PipelineConfig) -> Result<Cohort, CliError> {
    Ok(load_cohort(&root.join(Stage::Generate.dir()), phantom_config(cfg).seed)?)
}

fn cmp_dir(root: &Path, stage: Stage, cmp: &Comparison) -> std::path::PathBuf {
    root.join(stage.dir()).join(cmp.to_string())
}

/// The comparison's training subset, in the order the train stage chose.
fn subset(root: &Path, full: &Cohort, cmp: &Comparison) -> Result<Cohort, CliError> {
    let path = cmp_dir(root, Stage::Train, cmp).join("subjects.csv");
    let rows = csv_rows(&read(&path)?, &path)?;
    let index: BTreeMap<String, usize> = full.ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
    let idx = rows
        .iter()
        .map(|r| {
            let id = field(r, "subject_id", &path)?;
            index.get(id).copied().ok_or_else(|| CliError::Stage { stage: "read", msg: format!("{}: unknown subject {id}", path.display()) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(full.select(&idx))
}

fn profile_rows(profiles: &RegionProfileMatrix, ids: &[String]) -> Result<RegionProfileMatrix, CliError> {
    let index: BTreeMap<&str, usize> = profiles.subject_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let idx = ids
        .iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| CliError::Stage { stage: "read", msg: format!("no region profile for {id}") }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(profiles.select_rows(&idx))
}

fn embedding_name(method: Method, layer: Layer) -> String {
    format!("{}_{}", method.name(), layer.name())
}

fn load_embedding(root: &Path, cmp: &Comparison, method: Method, layer: Layer) -> Result<EmbeddingMatrix, CliError> {
    let path = cmp_dir(root, Stage::Embed, cmp).join(format!("{}.csv", embedding_name(method, layer)));
    parse_embedding(&read(&path)?).map_err(|e| CliError::Stage { stage: "read", msg: format!("{}: {e}", path.display()) })
}

/// Clears the stage's directory so its log lists exactly what this run wrote.
fn fresh_dir(root: &Path, stage: Stage) -> Result<std::path::PathBuf, CliError> {
    let dir = root.join(stage.dir());
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    Ok(dir)
}

pub fn generate(root: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let dir = fresh_dir(root, Stage::Generate)?;
    let mut cohort = generate_phantom_cohort(&phantom_config(cfg)).map_err(in_stage("generate"))?;
    if cfg.permute_labels {
        let mut labels = cohort.labels();
        labels.shuffle(&mut seed::rng(seed::derive_str(cfg.seed, "permute")));
        let subjects = cohort
            .subjects()
            .iter()
            .zip(labels)
            .map(|(s, class_label)| Subject { class_label, ..s.clone() })
            .collect();
        cohort = Cohort::new(subjects, cohort.atlas().clone(), cohort.seed()).map_err(in_stage("generate"))?;
    }
    save_cohort(&cohort, &dir)?;
    Ok(())
}

pub fn train_stage(root: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let full = cohort(root, cfg)?;
    fresh_dir(root, Stage::Train)?;
    let labels = full.labels();
    for cmp in &cfg.comparisons {
        let idx = balanced_indices(&labels, &cmp.classes(), seed::derive_str(cfg.seed, &format!("balance/{cmp}")))
            .map_err(in_stage("train"))?;
        let sub = full.select(&idx);
        let tc = TrainConfig { seed: seed::derive_str(cfg.seed, &format!("train/{cmp}")), ..cfg.train.clone() };
        let (params, report) = train(&sub, &tc).map_err(in_stage("train"))?;
        let recon = total_reconstruction_error(&sub, &params).map_err(in_stage("train"))?;
        if recon.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numeric { stage: "train", msg: format!("{cmp}: non-finite reconstruction error") });
        }
        let dir = cmp_dir(root, Stage::Train, cmp);
        write(&dir.join("model.lsae"), encode_model(&params))?;
        write(&dir.join("losses.csv"), report.to_csv())?;
        let ids = sub.ids();
        let subj = sub.labels();
        write(
            &dir.join("subjects.csv"),
            csv_text(&["subject_id", "class"], ids.iter().zip(&subj).map(|(i, l)| vec![i.clone(), l.name().to_string()])),
        )?;
        write(
            &dir.join("recon_error.csv"),
            csv_text(
                &["subject_id", "class", "recon_error"],
                ids.iter().zip(&subj).zip(&recon).map(|((i, l), e)| vec![i.clone(), l.name().to_string(), e.to_string()]),
            ),
        )?;
    }
    Ok(())
}

pub fn embed_stage(root: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let full = cohort(root, cfg)?;
    fresh_dir(root, Stage::Embed)?;
    let hash = stage_hash(cfg, Stage::Embed);
    for cmp in &cfg.comparisons {
        let sub = subset(root, &full, cmp)?;
        let model_path = cmp_dir(root, Stage::Train, cmp).join("model.lsae");
        let bytes = fs::read(&model_path).map_err(CliError::io(&model_path))?;
        let params = decode_model(&bytes).map_err(in_stage("embed"))?;
        let acts = extract_activations(&sub, &params).map_err(in_stage("embed"))?;
        let ids = sub.ids();
        let labels = sub.labels();
        let dir = cmp_dir(root, Stage::Embed, cmp);
        for &layer in &cfg.layers {
            let x = activation_matrix(&acts, layer).map_err(in_stage("embed"))?;
            for &method in &cfg.methods {
                let name = embedding_name(method, layer);
                let s = seed::derive_str(cfg.seed, &format!("embed/{cmp}/{name}"));
                let mut e = embed(method, layer, &x, &ids, &labels, &cfg.projection, s).map_err(in_stage("embed"))?;
                e.metadata.insert("comparison".into(), cmp.to_string());
                e.metadata.insert("config_hash".into(), hash.clone());
                write(&dir.join(format!("{name}.csv")), format_embedding(&e))?;
                write(&dir.join(format!("{name}.meta")), format_metadata(&e.metadata))?;
                if cfg.bootstrap_resamples > 0 {
                    let b = bootstrap_embeddings(&x, &labels, method, &cfg.projection, cfg.bootstrap_resamples, seed::derive(s, 1))
                        .map_err(in_stage("embed"))?;
                    let rows = ids.iter().enumerate().map(|(i, id)| {
                        let mut r = vec![id.clone(), b.appearances[i].to_string()];
                        r.extend(b.dispersion[i].iter().map(|v| v.to_string()));
                        r
                    });
                    write(&dir.join(format!("{name}_dispersion.csv")), csv_text(&["subject_id", "appearances", "d0", "d1", "d2"], rows))?;
                }
            }
        }
    }
    Ok(())
}

pub fn correlate_stage(root: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let full = cohort(root, cfg)?;
    let profiles = build_region_profiles(&full).map_err(in_stage("correlate"))?;
    let labels_by_id: BTreeMap<String, ClassLabel> = full.ids().into_iter().zip(full.labels()).collect();
    fresh_dir(root, Stage::Correlate)?;
    for cmp in &cfg.comparisons {
        let dir = cmp_dir(root, Stage::Correlate, cmp);
        for &layer in &cfg.layers {
            for &method in &cfg.methods {
                let e = load_embedding(root, cmp, method, layer)?;
                let prof = profile_rows(&profiles, &e.subject_ids)?;
                let labels: Vec<ClassLabel> = e.subject_ids.iter().map(|id| labels_by_id[id]).collect();
                let table = correlate_embedding_regions(&e, &prof, &labels, true).map_err(in_stage("correlate"))?;
                let data = |c: &CorrelationResult| {
                    let col = prof.region_ids.iter().position(|&r| r == c.region).expect("region from this table");
                    let rows: Vec<usize> = (0..labels.len()).filter(|&i| c.class.is_none_or(|k| labels[i] == k)).collect();
                    (rows.iter().map(|&i| e.values[i][c.component]).collect(), rows.iter().map(|&i| prof.get(i, col)).collect())
                };
                let pv = correct_table(&table, CorrectionMode::PValue, cfg.bound.delta, data).map_err(in_stage("correlate"))?;
                let sar = correct_table(&table, CorrectionMode::Sar, cfg.bound.delta, data).map_err(in_stage("correlate"))?;
                let name = embedding_name(method, layer);
                write(&dir.join(format!("{name}_all.csv")), table.to_csv())?;
                write(&dir.join(format!("{name}_pvalue.csv")), pv.to_csv())?;
                write(&dir.join(format!("{name}_sar.csv")), sar.to_csv())?;
            }
        }
    }
    Ok(())
}

fn mean_volume(cohort: &Cohort) -> Result<Volume, CliError> {
    let first = cohort.subjects().first().ok_or_else(|| CliError::Stage { stage: "shap", msg: "empty cohort".into() })?;
    let mut acc = vec![0.0f64; first.volume.len()];
    for s in cohort.subjects() {
        for (a, v) in acc.iter_mut().zip(s.volume.voxels()) {
            *a += f64::from(*v);
        }
    }
    let n = cohort.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Volume::from_f64_clamped(first.volume.dims(), &acc).map_err(in_stage("shap"))
}

pub fn shap_stage(root: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let full = cohort(root, cfg)?;
    let profiles = build_region_profiles(&full).map_err(in_stage("shap"))?;
    fresh_dir(root, Stage::Shap)?;
    for cmp in &cfg.comparisons {
        let sub = subset(root, &full, cmp)?;
        let path = cmp_dir(root, Stage::Train, cmp).join("recon_error.csv");
        let rows = csv_rows(&read(&path)?, &path)?;
        let targets = rows.iter().map(|r| parse_f64(field(r, "recon_error", &path)?, &path)).collect::<Result<Vec<_>, _>>()?;
        let ids = sub.ids();
        let prof = profile_rows(&profiles, &ids)?;
        let forest = ForestConfig { seed: seed::derive_str(cfg.seed, &format!("shap/{cmp}")), ..cfg.shap.forest };
        let report = attribute_by_class(&prof, &sub.labels(), &targets, &forest).map_err(in_stage("shap"))?;
        let gap = report.worst_local_accuracy_gap();
        if !(gap <= LOCAL_ACCURACY_TOL) {
            return Err(CliError::Numeric { stage: "shap", msg: format!("{cmp}: local accuracy gap {gap:e}") });
        }
        let dir = cmp_dir(root, Stage::Shap, cmp);
        write(&dir.join("shap.csv"), report.shap_csv())?;
        write(&dir.join("importance.csv"), report.importance_csv())?;
        let models = report.classes.iter().map(|c| {
            vec![c.class.name().to_string(), c.subject_ids.len().to_string(), c.model.hash(), c.importance.top_region().to_string()]
        });
        write(&dir.join("models.csv"), csv_text(&["class", "n_subjects", "forest_hash", "top_region"], models))?;
        let mask = if cfg.shap.mean_mask { Some(mean_volume(&sub)?) } else { None };
        for c in &report.classes {
            let v = build_shap_volume(&c.importance.s_tilde, full.atlas(), mask.as_ref()).map_err(in_stage("shap"))?;
            write(&dir.join("maps").join(format!("{}.lsvol", c.class.name())), encode_volume(&v))?;
        }
    }
    Ok(())
}

pub fn lrcp_stage(root: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let full = cohort(root, cfg)?;
    let profiles = build_region_profiles(&full).map_err(in_stage("lrcp"))?;
    let mut inputs = Vec::new();
    for cmp in &cfg.comparisons {
        let mut embeddings = BTreeMap::new();
        for &layer in &cfg.layers {
            for &method in &cfg.methods {
                embeddings.insert((method, layer), load_embedding(root, cmp, method, layer)?);
            }
        }
        inputs.push(ComparisonEmbeddings { comparison: cmp.clone(), embeddings });
    }
    let grid = lrcp_grid(&inputs, &cfg.methods, &cfg.layers, &profiles, &full.labels(), &cfg.lrcp_config()).map_err(in_stage("lrcp"))?;
    let dir = fresh_dir(root, Stage::Lrcp)?;
    write(&dir.join("grid.csv"), grid.to_csv())?;
    write(&dir.join("summary.csv"), summary_csv(&summary_counts(&grid)))?;
    for cmp in &cfg.comparisons {
        for &layer in &cfg.layers {
            for &method in &cfg.methods {
                let v = accuracy_map(&grid.slice(cmp, method, layer, 0), full.atlas()).map_err(in_stage("lrcp"))?;
                write(&dir.join("maps").join(format!("{cmp}_{}_D0.lsvol", embedding_name(method, layer))), encode_volume(&v))?;
            }
        }
    }
    Ok(())
}

/// Pooled rows of a correlation table CSV as (component, region, r).
fn pooled_rows(path: &Path) -> Result<Vec<CorrelationResult>, CliError> {
    let rows = csv_rows(&read(path)?, path)?;
    let mut out = Vec::new();
    for r in &rows {
        if field(r, "class", path)? != "pooled" {
            continue;
        }
        let bad = || CliError::Stage { stage: "report", msg: format!("{}: malformed row", path.display()) };
        let opt = |s: &str| if s == "undefined" { Ok(None) } else { parse_f64(s, path).map(Some) };
        out.push(CorrelationResult {
            method: Method::parse(field(r, "method", path)?).ok_or_else(bad)?,
            layer: Layer::parse(field(r, "layer", path)?).ok_or_else(bad)?,
            component: field(r, "component", path)?.trim_start_matches('D').parse().map_err(|_| bad())?,
            region: field(r, "region", path)?.parse().map_err(|_| bad())?,
            class: None,
            n: field(r, "n", path)?.parse().map_err(|_| bad())?,
            r: opt(field(r, "r", path)?)?,
            p: opt(field(r, "p", path)?)?,
        });
    }
    Ok(out)
}

fn count_rows(path: &Path) -> Result<usize, CliError> {
    Ok(csv_rows(&read(path)?, path)?.len())
}

pub fn report_stage(root: &Path, cfg: &PipelineConfig, logs: &BTreeMap<Stage, StageLog>) -> Result<(), CliError> {
    let dir = fresh_dir(root, Stage::Report)?;
    let summary = root.join(Stage::Lrcp.dir()).join("summary.csv");
    write(&dir.join("summary.csv"), read(&summary)?)?;

    let mut top_rows = Vec::new();
    let mut corrections = Vec::new();
    let mut overlap_input = Vec::new();
    for cmp in &cfg.comparisons {
        let cdir = cmp_dir(root, Stage::Correlate, cmp);
        for &layer in &cfg.layers {
            for &method in &cfg.methods {
                let name = embedding_name(method, layer);
                let all = cdir.join(format!("{name}_all.csv"));
                let top = top_regions(&pooled_rows(&all)?, cfg.report.top_n, Ranking::AbsR);
                for (rank, (region, r)) in top.iter().enumerate() {
                    top_rows.push(vec![
                        cmp.to_string(),
                        method.name().into(),
                        layer.name().into(),
                        (rank + 1).to_string(),
                        region.to_string(),
                        r.to_string(),
                    ]);
                }
                if method == cfg.report.overlap_method && layer == cfg.report.overlap_layer {
                    overlap_input.push((cmp.to_string(), top.iter().map(|t| t.0).collect::<Vec<u32>>()));
                }
                let pv = count_rows(&cdir.join(format!("{name}_pvalue.csv")))?;
                let sar = count_rows(&cdir.join(format!("{name}_sar.csv")))?;
                corrections.push(vec![
                    cmp.to_string(),
                    method.name().into(),
                    layer.name().into(),
                    count_rows(&all)?.to_string(),
                    pv.to_string(),
                    sar.to_string(),
                ]);
            }
        }
    }
    write(
        &dir.join("top_regions.csv"),
        csv_text(&["comparison", "method", "layer", "rank", "region", "r"], top_rows),
    )?;
    write(
        &dir.join("corrections.csv"),
        csv_text(&["comparison", "method", "layer", "tests", "pvalue_kept", "sar_kept"], corrections),
    )?;
    let overlap = if overlap_input.len() >= 2 {
        overlap_report(&overlap_input).map_err(in_stage("report"))?.to_csv()
    } else {
        csv_text(&["comparison_a", "comparison_b", "region"], Vec::new())
    };
    write(&dir.join("overlap.csv"), overlap)?;

    let mut shap_rows = Vec::new();
    for cmp in &cfg.comparisons {
        let path = cmp_dir(root, Stage::Shap, cmp).join("importance.csv");
        let mut by_class: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
        for r in csv_rows(&read(&path)?, &path)? {
            let region = field(&r, "region", &path)?.parse().map_err(|_| CliError::Stage { stage: "report", msg: format!("{}: bad region", path.display()) })?;
            let s = parse_f64(field(&r, "s_tilde", &path)?, &path)?;
            by_class.entry(field(&r, "class", &path)?.to_string()).or_default().push((region, s));
        }
        for (class, mut v) in by_class {
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (rank, (region, s)) in v.iter().take(cfg.report.top_n).enumerate() {
                shap_rows.push(vec![cmp.to_string(), class.clone(), (rank + 1).to_string(), region.to_string(), s.to_string()]);
            }
        }
    }
    write(&dir.join("shap_top.csv"), csv_text(&["comparison", "class", "rank", "region", "s_tilde"], shap_rows))?;

    let mut prov = String::new();
    for s in Stage::ALL.iter().filter(|s| **s != Stage::Report) {
        let log = &logs[s];
        let digest = crate::stage::sha256_hex(log.to_text().as_bytes());
        prov.push_str(&format!("{} config_hash={} files={} log_sha256={}\n", s.name(), log.config_hash, log.artifacts.len(), digest));
    }
    prov.push_str(&format!("report config_hash={}\n", stage_hash(cfg, Stage::Report)));
    write(&dir.join("provenance.txt"), prov)?;
    let config: String = SECTIONS.iter().map(|s| cfg.section(s)).collect::<Vec<_>>().concat();
    let mut seen = BTreeSet::new();
    let config: String = config.lines().filter(|l| seen.insert(*l)).map(|l| format!("{l}\n")).collect();
    write(&dir.join("config.txt"), config)?;
    Ok(())
}

/// Transitive predecessors of `stage`, in stage order.
pub fn upstream(stage: Stage) -> Vec<Stage> {
    let mut seen = BTreeSet::new();
    let mut todo = stage.deps().to_vec();
    while let Some(s) = todo.pop() {
        if seen.insert(s) {
            todo.extend_from_slice(s.deps());
        }
    }
    seen.into_iter().collect()
}

/// Runs `stage` after checking its predecessors; skips it when its own log
/// is current unless `force`. Returns whether it ran.
pub fn run_stage(root: &Path, cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<bool, CliError> {
    let mut logs = BTreeMap::new();
    for d in upstream(stage) {
        logs.insert(d, check_current(root, cfg, d)?);
    }
    if !force && check_current(root, cfg, stage).is_ok() {
        return Ok(false);
    }
    // a failed rerun must not leave a log that vouches for partial output
    let _ = fs::remove_file(crate::stage::log_path(root, stage));
    match stage {
        Stage::Generate => generate(root, cfg)?,
        Stage::Train => train_stage(root, cfg)?,
        Stage::Embed => embed_stage(root, cfg)?,
        Stage::Correlate => correlate_stage(root, cfg)?,
        Stage::Shap => shap_stage(root, cfg)?,
        Stage::Lrcp => lrcp_stage(root, cfg)?,
        Stage::Report => report_stage(root, cfg, &logs)?,
    }
    write_log(root, cfg, stage)?;
    Ok(true)
}

/// Every stage in order.
pub fn run_all(root: &Path, cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    for s in Stage::ALL {
        run_stage(root, cfg, s, force)?;
    }
    Ok(())
}
