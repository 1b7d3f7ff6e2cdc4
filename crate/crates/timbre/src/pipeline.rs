//! End-to-end steps shared by the command-line tool and the tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use timbre_core::latent::{fit_pca, PcaProjection};
use timbre_core::ratings::{aggregate, mds, normalize_study, select_common_instruments, study_instruments, RatingRecord, TimbreTarget};
use timbre_core::regularizer::{class_representatives, TargetNormalization};
use timbre_core::spectral::{SpectralFrame, TARGET_SAMPLE_RATE};
use timbre_core::vae::{evaluate, latent_distance_kl, posterior_means, Dataset, EpochMetrics, Trainer, VaeError};
use timbre_core::{AdamState, Rng, Tensor, TransformSpec, VaeModel};

use crate::config::{RunConfig, TargetConfig};
use crate::dsp::{analyze, corpus_normalize, extract_frame, resample};
use crate::error::{Error, Result};
use crate::io::{read_ratings, read_wav, Checkpoint, CorpusManifest, FrameStore, ManifestEntry, MetricsWriter, SkippedFile, Split};

pub const STORE_FILE: &str = "frames.tsf";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TARGET_FILE: &str = "target.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Stream of the root seed reserved for the train/test split.
const SPLIT_STREAM: u64 = 0x5311;
/// Salt for the evaluation noise used by reports.
const REPORT_SALT: u64 = 0x2E90_27;

/// Normalized dissimilarities → common instruments → MDS coordinates.
pub fn compute_target(records: &[RatingRecord], config: &TargetConfig) -> Result<TimbreTarget> {
    let normalized = normalize_study(records)?;
    let studies: Vec<Vec<String>> = study_instruments(&normalized).into_iter().map(|(_, v)| v).collect();
    let common = select_common_instruments(&studies)?;
    let matrix = aggregate(&normalized, &common, config.missing_pairs)?;
    let result = mds(&matrix, config.dims)?;
    if let Some(asked) = result.reduced_from {
        log::warn!("target space reduced from {asked} to {} axes", result.target.dims());
    }
    Ok(result.target)
}

pub fn target_from_ratings(path: &Path, config: &TargetConfig) -> Result<TimbreTarget> {
    compute_target(&read_ratings(path)?, config)
}

/// Resample to the analysis rate if needed, transform, and take the
/// magnitude frame nearest `frame_ms`.
pub fn analyze_wav(path: &Path, spec: &TransformSpec, frame_ms: f64, class_label: Option<String>, source_id: &str) -> Result<SpectralFrame> {
    let mut audio = read_wav(path)?;
    if audio.sample_rate != spec.sample_rate {
        let from = audio.sample_rate.round() as u32;
        audio = timbre_core::AudioBuffer::new(resample(&audio.samples, from, spec.sample_rate.round() as u32), spec.sample_rate)?;
    }
    let (plan, sg) = analyze(&audio, spec)?;
    Ok(extract_frame(&plan, &sg, frame_ms, class_label, source_id)?)
}

/// One frame for a model: analysed and scaled by the corpus constant.
pub fn model_frame_from_wav(path: &Path, spec: &TransformSpec, frame_ms: f64, norm_constant: f64) -> Result<Vec<f64>> {
    let f = analyze_wav(path, spec, frame_ms, None, "origin")?;
    Ok(f.magnitudes.iter().map(|m| m / norm_constant).collect())
}

struct CorpusFile {
    path: PathBuf,
    rel: String,
    class_label: Option<String>,
}

fn is_wav(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// WAV files directly under `root` (unlabeled) or one directory down
/// (labeled by that directory), sorted by relative path.
fn list_corpus(root: &Path) -> Result<Vec<CorpusFile>> {
    if !root.is_dir() {
        return Err(Error::Config(format!("corpus directory {} does not exist", root.display())));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(Error::io(root))? {
        let path = entry.map_err(Error::io(root))?.path();
        if path.is_dir() {
            let label = path.file_name().unwrap().to_string_lossy().into_owned();
            for inner in fs::read_dir(&path).map_err(Error::io(&path))? {
                let p = inner.map_err(Error::io(&path))?.path();
                if p.is_file() && is_wav(&p) {
                    let rel = format!("{label}/{}", p.file_name().unwrap().to_string_lossy());
                    out.push(CorpusFile { path: p, rel, class_label: Some(label.clone()) });
                }
            }
        } else if is_wav(&path) {
            let rel = path.file_name().unwrap().to_string_lossy().into_owned();
            out.push(CorpusFile { path, rel, class_label: None });
        }
    }
    out.sort_by(|a, b| a.rel.cmp(&b.rel));
    Ok(out)
}

const DYNAMIC_MARKS: [&str; 8] = ["ppp", "pp", "p", "mp", "mf", "f", "ff", "fff"];

/// `(pitch, dynamics)` from stems shaped like `<class>_<pitch>_<dyn>[_…]`.
pub fn parse_tags(stem: &str, class_label: Option<&str>) -> (Option<String>, Option<String>) {
    let rest = class_label
        .and_then(|c| stem.strip_prefix(c))
        .and_then(|r| r.strip_prefix('_'))
        .unwrap_or(stem);
    let mut parts = rest.split('_');
    let pitch = parts.next().filter(|p| {
        let b = p.as_bytes();
        b.len() >= 2 && (b'a'..=b'g').contains(&b[0].to_ascii_lowercase()) && b[b.len() - 1].is_ascii_digit()
    });
    let dynamics = parts.next().filter(|d| DYNAMIC_MARKS.contains(d));
    (pitch.map(str::to_string), dynamics.map(str::to_string))
}

/// Per-group test counts by largest remainder, so the total is
/// `round(n·ratio)`; every group with two or more members then gets at
/// least one test item when another group can spare one.
pub fn stratified_split(labels: &[Option<String>], ratio: f64, seed: u64) -> Vec<Split> {
    let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_deref()).or_default().push(i);
    }
    let total = (labels.len() as f64 * ratio).round() as usize;
    let quotas: Vec<f64> = groups.values().map(|g| g.len() as f64 * ratio).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = total.saturating_sub(counts.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if counts[g] < groups.values().nth(g).unwrap().len() {
            counts[g] += 1;
            left -= 1;
        }
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    for g in 0..counts.len() {
        if counts[g] == 0 && sizes[g] >= 2 {
            if let Some(donor) = (0..counts.len()).filter(|&d| counts[d] > 1).max_by_key(|&d| (counts[d], std::cmp::Reverse(d))) {
                counts[donor] -= 1;
                counts[g] = 1;
            }
        }
    }
    let mut split = vec![Split::Train; labels.len()];
    for (g, (_, members)) in groups.iter().enumerate() {
        let mut idx = members.clone();
        Rng::with_stream(seed ^ SPLIT_STREAM, g as u64).shuffle(&mut idx);
        for &i in &idx[..counts[g]] {
            split[i] = Split::Test;
        }
    }
    split
}

fn analyze_files(files: &[CorpusFile], spec: &TransformSpec, frame_ms: f64) -> Vec<Result<SpectralFrame>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(files.len().max(1));
    let chunk = files.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = files
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|f| {
                            let id = Path::new(&f.rel).file_stem().unwrap().to_string_lossy().into_owned();
                            analyze_wav(&f.path, spec, frame_ms, f.class_label.clone(), &id)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("analysis worker panicked")).collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub manifest: CorpusManifest,
    pub store: FrameStore,
    pub target: Option<TimbreTarget>,
}

/// Analyse a WAV corpus into `out_dir`: frame store, manifest, optional
/// target space, and the config echo.
pub fn prepare(corpus: &Path, out_dir: &Path, ratings: Option<&Path>, config: &RunConfig) -> Result<Prepared> {
    let mut spec = config.prepare.spec()?;
    spec.sample_rate = TARGET_SAMPLE_RATE;
    // read ratings first so a bad table fails before the slow part
    let target = ratings.map(|r| target_from_ratings(r, &config.target)).transpose()?;
    let files = list_corpus(corpus)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no WAV files under {}", corpus.display())));
    }
    let results = analyze_files(&files, &spec, config.prepare.frame_ms);
    let mut frames = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(frame) => {
                frames.push(frame);
                kept.push(f);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", f.rel);
                skipped.push(SkippedFile { path: f.rel.clone(), reason: e.to_string() });
            }
        }
    }
    if skipped.len() as f64 > config.prepare.max_failure_ratio * files.len() as f64 {
        return Err(Error::TooManyFailures { failed: skipped.len(), total: files.len() });
    }
    if let Some(t) = &target {
        let missing: Vec<&String> = t.instruments.iter().filter(|c| !kept.iter().any(|f| f.class_label.as_ref() == Some(*c))).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("rated classes without corpus files: {missing:?}")));
        }
    }
    let norm_constant = corpus_normalize(&mut frames)?;
    let labels: Vec<Option<String>> = kept.iter().map(|f| f.class_label.clone()).collect();
    let splits = stratified_split(&labels, config.prepare.test_ratio, config.seed);
    let entries = kept
        .iter()
        .zip(&frames)
        .zip(splits)
        .map(|((f, frame), split)| {
            let (pitch, dynamics) = parse_tags(&frame.source_id, f.class_label.as_deref());
            ManifestEntry {
                source_id: frame.source_id.clone(),
                path: f.rel.clone(),
                class_label: f.class_label.clone(),
                pitch,
                dynamics,
                split,
            }
        })
        .collect();
    let store = FrameStore {
        spec,
        norm_constant,
        frames: frames.iter().map(|f| f.magnitudes.iter().map(|&m| m as f32).collect()).collect(),
    };
    let manifest = CorpusManifest {
        store: STORE_FILE.into(),
        spec,
        norm_constant,
        seed: config.seed,
        frame_ms: config.prepare.frame_ms,
        test_ratio: config.prepare.test_ratio,
        entries,
        skipped,
    };
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    store.write(&out_dir.join(STORE_FILE))?;
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    if let Some(t) = &target {
        crate::io::write_json(&out_dir.join(TARGET_FILE), t)?;
    }
    let echo = out_dir.join(CONFIG_ECHO_FILE);
    fs::write(&echo, config.to_toml()).map_err(Error::io(&echo))?;
    Ok(Prepared { manifest, store, target })
}

/// A frame store with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub store: FrameStore,
}

impl Corpus {
    /// `path` is a manifest, or a directory holding `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        if !manifest_path.is_file() {
            return Err(Error::Config(format!("manifest {} does not exist", manifest_path.display())));
        }
        let manifest = CorpusManifest::read(&manifest_path)?;
        let store_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.store);
        let store = FrameStore::read(&store_path)?;
        manifest.check(&store, &manifest_path)?;
        Ok(Self { manifest, store })
    }

    pub fn frame(&self, i: usize) -> Vec<f64> {
        self.store.frames[i].iter().map(|&v| v as f64).collect()
    }

    /// Rows of `split` (all rows when `None`) with target-class labels.
    pub fn dataset(&self, split: Option<Split>, target: Option<&TimbreTarget>) -> Result<Dataset> {
        let idx: Vec<usize> = match split {
            Some(s) => self.manifest.indices(s),
            None => (0..self.manifest.entries.len()).collect(),
        };
        let f = self.store.frame_len();
        let mut data = Vec::with_capacity(idx.len() * f);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in &idx {
            data.extend_from_slice(&self.store.frames[i]);
            let label = match (target, &self.manifest.entries[i].class_label) {
                (Some(t), Some(c)) => Some(t.index_of(c).ok_or_else(|| VaeError::UnknownClass(c.clone()))?),
                _ => None,
            };
            labels.push(label);
        }
        let x = Tensor::matrix(idx.len(), f, data).map_err(VaeError::from)?;
        Ok(Dataset::new(x, labels)?)
    }
}

pub fn load_target(path: &Path) -> Result<TimbreTarget> {
    if !path.is_file() {
        return Err(Error::Config(format!("target file {} does not exist", path.display())));
    }
    crate::io::read_json(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::read(path)
}

pub struct TrainJob<'a> {
    pub corpus: &'a Corpus,
    pub target: Option<&'a TimbreTarget>,
    pub config: &'a RunConfig,
    pub out: &'a Path,
    pub metrics: Option<&'a Path>,
    /// Where to save the model at the end of the unregularized stage.
    pub stage1_out: Option<&'a Path>,
    pub resume: Option<Checkpoint>,
}

pub fn stage1_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".stage1");
    PathBuf::from(s)
}

/// Train (or resume) and write the final checkpoint to `job.out`.
/// Smallest initial decoder output; keeps softplus gradients alive in empty bins.
const OUTPUT_FLOOR: f64 = 1e-3;

fn column_means(x: &Tensor<f32>) -> Vec<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut m = vec![0.0; d];
    for row in x.data().chunks(d) {
        m.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
    }
    m.iter_mut().for_each(|a| *a /= n.max(1) as f64);
    m
}

pub fn train(job: TrainJob<'_>) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    let cfg = job.config;
    cfg.train.validate().map_err(|e| Error::Config(e.to_string()))?;
    let spec = job.corpus.store.spec;
    let train_set = job.corpus.dataset(Some(Split::Train), job.target)?;
    let test_set = job.corpus.dataset(Some(Split::Test), job.target)?;
    let (mut model, mut trainer) = match job.resume {
        Some(ck) => {
            if ck.spec != spec {
                return Err(Error::Config("checkpoint was trained on another transform".into()));
            }
            let opt = ck.optimizer.ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
            (ck.model, Trainer::resume(cfg.train.clone(), opt, ck.epoch)?)
        }
        None => {
            let arch = cfg.model.arch(spec.frame_len())?;
            let mut model = VaeModel::new(arch, &mut Rng::with_stream(cfg.seed, 0));
            if cfg.model.mean_output_init {
                model.init_output(&column_means(&train_set.x), OUTPUT_FLOOR, cfg.model.output_weight_scale)?;
            }
            let trainer = Trainer::new(cfg.train.clone(), &model)?;
            (model, trainer)
        }
    };
    let resuming = trainer.epoch() > 0;
    let mut writer = job.metrics.map(|p| MetricsWriter::create(p, resuming)).transpose()?;
    let snapshot = |model: &VaeModel<f32>, opt: &AdamState<f32>, epoch: usize| Checkpoint {
        spec,
        norm_constant: job.corpus.store.norm_constant,
        config: cfg.train.clone(),
        epoch,
        model: model.clone(),
        optimizer: Some(opt.clone()),
    };
    let mut failure: Option<Error> = None;
    let stage1_epochs = cfg.train.stage1_epochs;
    let mut observer = |m: &EpochMetrics, model: &VaeModel<f32>, opt: &AdamState<f32>| {
        let done = m.epoch + 1;
        if done % 50 == 0 || done == stage1_epochs {
            log::info!("epoch {done}: recon {:.5} kl {:.5} reg {:?} test {:?}", m.recon, m.kl, m.reg, m.test_recon);
        }
        let mut step = || -> Result<()> {
            if let Some(w) = writer.as_mut() {
                w.push(m)?;
            }
            if done == stage1_epochs {
                if let Some(p) = job.stage1_out {
                    snapshot(model, opt, done).write(p)?;
                }
            }
            Ok(())
        };
        match step() {
            Ok(()) => true,
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    };
    let log = trainer.run(&mut model, &train_set, Some(&test_set), job.target, &mut observer)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let ck = snapshot(&model, trainer.optimizer(), trainer.epoch());
    ck.write(job.out)?;
    Ok((ck, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPoint {
    pub class: String,
    pub count: usize,
    pub pca: [f64; 3],
}

/// Evaluation bundle of one checkpoint on one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub transform: String,
    pub epoch: usize,
    pub test_frames: usize,
    pub test_log_likelihood: f64,
    pub test_mse: f64,
    /// Between full-corpus class centroids and the target space.
    pub distance_kl: Option<f64>,
    /// Same divergence with the target rows normalized like the latent
    /// ones. Under global normalization the two differ by a constant that
    /// depends only on the target.
    pub distance_kl_rowwise: Option<f64>,
    pub pca_explained_ratio: f64,
    pub classes: Vec<ClassPoint>,
}

pub fn report(ck: &Checkpoint, corpus: &Corpus, target: Option<&TimbreTarget>) -> Result<Report> {
    if ck.spec != corpus.store.spec {
        return Err(Error::Config("checkpoint and corpus use different transforms".into()));
    }
    let test = corpus.dataset(Some(Split::Test), None)?;
    if test.is_empty() {
        return Err(VaeError::EmptySplit.into());
    }
    let mut rng = Rng::with_stream(ck.config.seed ^ REPORT_SALT, 0);
    let eval = evaluate(&ck.model, &test.x, ck.config.eval_samples.max(1), &mut rng)?;
    let (distance_kl, distance_kl_rowwise) = match target {
        Some(t) => {
            let data = corpus.dataset(None, Some(t))?;
            (
                latent_distance_kl(&ck.model, &data, &t.coords, ck.config.target_norm)?,
                latent_distance_kl(&ck.model, &data, &t.coords, TargetNormalization::RowWise)?,
            )
        }
        None => (None, None),
    };
    let (pca, classes) = class_pca(&ck.model, corpus)?;
    Ok(Report {
        transform: ck.spec.name().into(),
        epoch: ck.epoch,
        test_frames: test.len(),
        test_log_likelihood: eval.log_likelihood,
        test_mse: eval.mean_sq_err,
        distance_kl,
        distance_kl_rowwise,
        pca_explained_ratio: pca.explained_ratio(),
        classes,
    })
}

/// Posterior means of every corpus frame.
pub fn corpus_latents(model: &VaeModel<f32>, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    let all = corpus.dataset(None, None)?;
    Ok(posterior_means(model, &all.x)?)
}

/// PCA of all posterior means, and each class centroid in PCA coordinates.
pub fn class_pca(model: &VaeModel<f32>, corpus: &Corpus) -> Result<(PcaProjection, Vec<ClassPoint>)> {
    let latents = corpus_latents(model, corpus)?;
    let pca = fit_pca(&latents)?;
    let mut names: Vec<String> = corpus.manifest.entries.iter().filter_map(|e| e.class_label.clone()).collect();
    names.sort();
    names.dedup();
    let labels: Vec<Option<usize>> = corpus
        .manifest
        .entries
        .iter()
        .map(|e| e.class_label.as_ref().and_then(|c| names.iter().position(|n| n == c)))
        .collect();
    let (ids, reps) = class_representatives(&latents, &labels);
    let classes = ids
        .iter()
        .zip(&reps)
        .map(|(&c, rep)| ClassPoint {
            class: names[c].clone(),
            count: labels.iter().filter(|l| **l == Some(c)).count(),
            pca: pca.project(rep),
        })
        .collect();
    Ok((pca, classes))
}
