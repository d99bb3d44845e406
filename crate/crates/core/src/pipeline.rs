//! File-level pipeline stages shared by the CLI and the end-to-end tests.
//!
//! Layouts:
//!
//! * raw case directory: `pwi.pwt`, the six map files, `gt.pwt`, `meta.json`
//! * preprocessed case directory: the same tensors after windowing and
//!   preprocessing, plus `brain.pwt`, `case.json`, `patches.pwt` and
//!   `patches.json`
//!
//! Every stage draws randomness from `SeededRng::new(seed).split(stage)
//! .split(case_id)`, so results do not depend on processing order.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::case::{read_case_dir, write_case_dir, CaseBundle, MapKind};
use crate::io::raw;
use crate::phantom::{synth_corpus_with, CorpusConfig, PhantomConfig};
use crate::preproc::{
    brain_mask, extract_patches, preprocess_case, stack_patches, unstack_patches, Patch,
    PatchLocation, PreprocConfig, PreprocessedCase,
};
use crate::rng::SeededRng;
use crate::temporal::{select_window, TemporalWindow, WindowInfo};

/// Writes one JSON object per line to standard error.
pub fn log_event(stage: &str, event: &str, fields: Value) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let mut obj = json!({ "ts": ts, "stage": stage, "event": event });
    if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
        o.extend(extra);
    }
    eprintln!("{obj}");
}

pub fn stage_rng(seed: u64, stage: &str, case_id: &str) -> SeededRng {
    SeededRng::new(seed).split(stage).split(case_id)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `meta.json` of a synthesized case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub case_id: String,
    pub true_peak_index: usize,
    pub seed: u64,
    pub config: PhantomConfig,
}

/// Synthesizes `n` cases into `out/<case_id>/`; returns the case ids.
pub fn synth_to_dir(cc: &CorpusConfig, n: usize, seed: u64, out: &Path) -> Result<Vec<String>> {
    let cases = synth_corpus_with(cc, n, seed)?;
    create_dir(out)?;
    let mut ids = Vec::with_capacity(n);
    for c in cases {
        let dir = out.join(&c.bundle.case_id);
        write_case_dir(&c.bundle, &dir)?;
        write_json(
            &dir.join("meta.json"),
            &SynthMeta {
                case_id: c.bundle.case_id.clone(),
                true_peak_index: c.true_peak_index,
                seed,
                config: c.config.clone(),
            },
        )?;
        log_event(
            "synth",
            "case",
            json!({ "case_id": c.bundle.case_id, "true_peak_index": c.true_peak_index }),
        );
        ids.push(c.bundle.case_id);
    }
    Ok(ids)
}

/// Peak detection on a case's PWI over its ADC-derived brain mask.
pub fn window_bundle(bundle: &CaseBundle, length: usize, seed: u64) -> Result<TemporalWindow> {
    let brain = brain_mask(&bundle.maps)?;
    let mut rng = stage_rng(seed, "window", &bundle.case_id);
    select_window(&bundle.pwi, &brain, length, &mut rng)
}

/// Writes `out` and the sidecar `out` with a `.json` extension.
pub fn write_window(w: &TemporalWindow, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    raw::save(out, &raw::write_volume4d(&w.data))?;
    write_json(&out.with_extension("json"), &w.info())
}

/// `case.json` of a preprocessed case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInfo {
    pub case_id: String,
    pub window: Option<WindowInfo>,
    pub degenerate: Vec<String>,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchIndex {
    pub patch_size: usize,
    pub channels: Vec<String>,
    pub patches: Vec<PatchLocation>,
}

/// Windows the PWI unless it already has `window_length` frames, then
/// preprocesses and samples patches.
pub fn preprocess_bundle(
    mut bundle: CaseBundle,
    cfg: &PreprocConfig,
    window_length: usize,
    seed: u64,
) -> Result<(PreprocessedCase, Vec<Patch>, Option<WindowInfo>)> {
    let window = if bundle.pwi.n_times() == window_length {
        None
    } else {
        let w = window_bundle(&bundle, window_length, seed)?;
        let info = w.info();
        bundle.pwi = w.data;
        Some(info)
    };
    let case = preprocess_case(&bundle, cfg)?;
    let patches = extract_patches(&case, cfg, &stage_rng(seed, "patches", &case.case_id))?;
    Ok((case, patches, window))
}

pub fn save_preprocessed(
    case: &PreprocessedCase,
    patches: &[Patch],
    window: Option<WindowInfo>,
    dir: &Path,
) -> Result<()> {
    let bundle = CaseBundle::new(
        case.case_id.clone(),
        case.pwi.clone(),
        case.maps.clone(),
        case.gt.clone(),
    )?;
    write_case_dir(&bundle, dir)?;
    raw::save(dir.join("brain.pwt"), &raw::write_volume3d(&case.brain))?;
    let channels = case.channel_names();
    write_json(
        &dir.join("case.json"),
        &CaseInfo {
            case_id: case.case_id.clone(),
            window,
            degenerate: case
                .degenerate
                .iter()
                .map(|k| k.label().to_string())
                .collect(),
            channels: channels.clone(),
        },
    )?;
    if !patches.is_empty() {
        raw::save(
            dir.join("patches.pwt"),
            &raw::write_tensor(&stack_patches(patches)?),
        )?;
        write_json(
            &dir.join("patches.json"),
            &PatchIndex {
                patch_size: patches[0].gt.dims()[0],
                channels,
                patches: patches.iter().map(Patch::location).collect(),
            },
        )?;
    }
    Ok(())
}

pub fn is_preprocessed_dir(dir: &Path) -> bool {
    dir.join("case.json").is_file()
}

pub fn load_preprocessed(dir: &Path) -> Result<PreprocessedCase> {
    let info: CaseInfo = read_json(&dir.join("case.json"))?;
    let mut bundle = read_case_dir(dir)?;
    bundle.case_id = info.case_id.clone();
    let brain = raw::load_volume3d(dir.join("brain.pwt"))?;
    let degenerate = info
        .degenerate
        .iter()
        .map(|l| {
            MapKind::ALL
                .into_iter()
                .find(|k| k.label() == l)
                .ok_or_else(|| Error::Format(format!("unknown map label {l:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(PreprocessedCase {
        case_id: info.case_id,
        pwi: bundle.pwi,
        maps: bundle.maps,
        gt: bundle.lesion_gt,
        brain,
        degenerate,
    })
}

/// Loads a preprocessed directory, or windows and preprocesses a raw one.
pub fn load_or_preprocess(
    dir: &Path,
    cfg: &PreprocConfig,
    window_length: usize,
    seed: u64,
) -> Result<PreprocessedCase> {
    if is_preprocessed_dir(dir) {
        load_preprocessed(dir)
    } else {
        let cfg = PreprocConfig {
            patches_per_case: 0,
            ..cfg.clone()
        };
        Ok(preprocess_bundle(read_case_dir(dir)?, &cfg, window_length, seed)?.0)
    }
}

pub fn load_patches(dir: &Path) -> Result<Vec<Patch>> {
    let index: PatchIndex = read_json(&dir.join("patches.json"))?;
    let stacked = raw::load(dir.join("patches.pwt"))?.data.into_f32();
    unstack_patches(&stacked, &index.patches)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

/// Patches of `dir` itself, or of every child directory that has them, in
/// name order.
pub fn load_training_patches(dir: &Path) -> Result<Vec<Patch>> {
    if dir.join("patches.json").is_file() {
        return load_patches(dir);
    }
    let mut out = Vec::new();
    for sub in sorted_subdirs(dir)? {
        if sub.join("patches.json").is_file() {
            out.extend(load_patches(&sub)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no patches under {}", dir.display())));
    }
    Ok(out)
}

/// Child directories that are cases, raw or preprocessed.
pub fn case_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_subdirs(dir)?
        .into_iter()
        .filter(|d| d.join("pwi.pwt").is_file() || d.join("case.json").is_file())
        .collect())
}
