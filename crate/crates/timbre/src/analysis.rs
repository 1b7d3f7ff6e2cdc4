//! Post-training tools: out-of-domain projection, latent paths, descriptor
//! grids, descriptor-driven synthesis and regularizer inspection.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use timbre_core::descriptors::DescriptorKind;
use timbre_core::latent::{descriptor_grid, encode_out_of_domain, fit_pca, interpolate_path, local_smoothness, render_path, GridConfig, PcaProjection};
use timbre_core::ratings::TimbreTarget;
use timbre_core::regularizer::{class_representatives, latent_neighbor_dist, target_neighbor_dist, TargetNormalization};
use timbre_core::spectral::{bin_frequencies, SpectralFrame};
use timbre_core::synthpath::{descriptor_synth, render_synth, NeighborhoodSpec, SynthContext, SynthResult, TargetSeries};
use timbre_core::{AudioBuffer, Rng, VaeModel};

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::pipeline::{analyze_wav, corpus_latents, model_frame_from_wav, Corpus};
use crate::render::SpectralRenderer;

/// A point given on the command line: a WAV file, a JSON latent vector,
/// or a class name from the corpus.
#[derive(Debug, Clone, PartialEq)]
pub enum PointRef {
    Wav(std::path::PathBuf),
    Latent(Vec<f64>),
    Class(String),
}

impl PointRef {
    pub fn parse(arg: &str) -> Result<Self> {
        let p = Path::new(arg);
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("wav") => {
                if !p.is_file() {
                    return Err(Error::Config(format!("{arg} does not exist")));
                }
                Ok(Self::Wav(p.to_path_buf()))
            }
            Some("json") => {
                if !p.is_file() {
                    return Err(Error::Config(format!("{arg} does not exist")));
                }
                Ok(Self::Latent(crate::io::read_json(p)?))
            }
            _ => Ok(Self::Class(arg.to_string())),
        }
    }

    /// Normalized model-input frame.
    pub fn frame(&self, ck: &Checkpoint, corpus: &Corpus, frame_ms: f64) -> Result<Vec<f64>> {
        match self {
            Self::Wav(p) => model_frame_from_wav(p, &ck.spec, frame_ms, ck.norm_constant),
            Self::Latent(z) => {
                check_latent(ck, z)?;
                Ok(ck.model.decode_rows(std::slice::from_ref(z))?.remove(0))
            }
            Self::Class(c) => {
                let idx = class_rows(corpus, c)?;
                let f = ck.spec.frame_len();
                let mut mean = vec![0.0; f];
                for &i in &idx {
                    mean.iter_mut().zip(corpus.frame(i)).for_each(|(m, v)| *m += v / idx.len() as f64);
                }
                Ok(mean)
            }
        }
    }

    pub fn latent(&self, ck: &Checkpoint, corpus: &Corpus, frame_ms: f64) -> Result<Vec<f64>> {
        match self {
            Self::Latent(z) => {
                check_latent(ck, z)?;
                Ok(z.clone())
            }
            Self::Wav(_) => Ok(ck.model.encode_mean_rows(&[self.frame(ck, corpus, frame_ms)?])?.remove(0)),
            Self::Class(c) => {
                let idx = class_rows(corpus, c)?;
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| corpus.frame(i)).collect();
                let z = ck.model.encode_mean_rows(&rows)?;
                let d = z[0].len();
                Ok((0..d).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / z.len() as f64).collect())
            }
        }
    }
}

fn check_latent(ck: &Checkpoint, z: &[f64]) -> Result<()> {
    let d = ck.model.arch().latent_dim;
    if z.len() != d {
        return Err(Error::Config(format!("latent vector has {} entries, model has {d}", z.len())));
    }
    Ok(())
}

fn class_rows(corpus: &Corpus, class: &str) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..corpus.manifest.entries.len())
        .filter(|&i| corpus.manifest.entries[i].class_label.as_deref() == Some(class))
        .collect();
    if idx.is_empty() {
        return Err(Error::Config(format!("`{class}` is neither a WAV, a JSON latent nor a corpus class")));
    }
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedFile {
    pub source_id: String,
    pub latent: Vec<f64>,
    pub pca: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub files: Vec<ProjectedFile>,
    pub centroid: Vec<f64>,
    pub centroid_pca: [f64; 3],
}

/// Encode WAVs of unseen classes and place them in the corpus PCA view.
pub fn project(ck: &Checkpoint, corpus: &Corpus, wavs: &[std::path::PathBuf]) -> Result<Projection> {
    let frame_ms = corpus.manifest.frame_ms;
    let frames: Vec<SpectralFrame> = wavs
        .iter()
        .map(|p| {
            let id = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let mut f = analyze_wav(p, &ck.spec, frame_ms, None, &id)?;
            f.magnitudes.iter_mut().for_each(|m| *m /= ck.norm_constant);
            Ok(f)
        })
        .collect::<Result<_>>()?;
    let set = encode_out_of_domain(&ck.model, &ck.spec, &frames)?;
    let pca = fit_pca(&corpus_latents(&ck.model, corpus)?)?;
    Ok(Projection {
        files: frames
            .iter()
            .zip(&set.points)
            .map(|(f, z)| ProjectedFile { source_id: f.source_id.clone(), latent: z.clone(), pca: pca.project(z) })
            .collect(),
        centroid_pca: pca.project(&set.centroid),
        centroid: set.centroid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub points: Vec<Vec<f64>>,
    pub centroid_hz: Vec<f64>,
    /// Squared error between each endpoint decode along the path and a
    /// direct decode of the endpoint.
    pub endpoint_error: [f64; 2],
}

/// `steps` equal segments from `from` to `to`, decoded and rendered.
pub fn latent_path(
    ck: &Checkpoint,
    from: &[f64],
    to: &[f64],
    steps: usize,
    renderer: &SpectralRenderer,
) -> Result<(PathReport, AudioBuffer)> {
    let path = interpolate_path(from, to, steps + 1)?;
    let rendered = render_path(&ck.model, &path, renderer)?;
    let direct = ck.model.decode_rows(&[from.to_vec(), to.to_vec()])?;
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let last = rendered.frames.len() - 1;
    let freqs = bin_frequencies(&ck.spec);
    let report = PathReport {
        centroid_hz: rendered
            .frames
            .iter()
            .map(|f| DescriptorKind::Centroid.eval(f, &freqs).unwrap_or(f64::NAN))
            .collect(),
        endpoint_error: [sq(&rendered.frames[0], &direct[0]), sq(&rendered.frames[last], &direct[1])],
        points: rendered.points,
    };
    Ok((report, rendered.audio))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridIndexEntry {
    pub x: f64,
    pub centroid_csv: String,
    pub bandwidth_csv: String,
    pub centroid_smoothness: f64,
    pub bandwidth_smoothness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridIndex {
    pub config: GridConfig,
    pub axis: Vec<f64>,
    pub planes: Vec<GridIndexEntry>,
}

fn write_field(path: &Path, axis: &[f64], field: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    let mut header = vec!["y\\z".to_string()];
    header.extend(axis.iter().map(f64::to_string));
    let csv_err = |source| Error::Csv { path: path.into(), source };
    w.write_record(&header).map_err(csv_err)?;
    for (y, row) in axis.iter().zip(field) {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(path))
}

/// Descriptor fields over planes of the PCA view, one CSV per plane and
/// descriptor plus `index.json`.
pub fn grid(ck: &Checkpoint, corpus: &Corpus, config: &GridConfig, out_dir: &Path) -> Result<GridIndex> {
    let pca = fit_pca(&corpus_latents(&ck.model, corpus)?)?;
    let planes = descriptor_grid(&ck.model, &pca, config, &bin_frequencies(&ck.spec))?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let axis = config.axis_values();
    let mut entries = Vec::new();
    for (k, plane) in planes.iter().enumerate() {
        let c = format!("plane{k}_centroid.csv");
        let b = format!("plane{k}_bandwidth.csv");
        write_field(&out_dir.join(&c), &axis, &plane.centroid)?;
        write_field(&out_dir.join(&b), &axis, &plane.bandwidth)?;
        entries.push(GridIndexEntry {
            x: plane.x,
            centroid_csv: c,
            bandwidth_csv: b,
            centroid_smoothness: local_smoothness(&plane.centroid),
            bandwidth_smoothness: local_smoothness(&plane.bandwidth),
        });
    }
    let index = GridIndex { config: config.clone(), axis, planes: entries };
    crate::io::write_json(&out_dir.join("index.json"), &index)?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescription {
    pub source_id: String,
    pub class_label: Option<String>,
    pub centroid_hz: f64,
    pub bandwidth_hz: f64,
}

/// Centroid and bandwidth of every corpus frame; NaN where undefined.
pub fn describe_corpus(corpus: &Corpus) -> Vec<FrameDescription> {
    let freqs = bin_frequencies(&corpus.store.spec);
    corpus
        .manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let m = corpus.frame(i);
            FrameDescription {
                source_id: e.source_id.clone(),
                class_label: e.class_label.clone(),
                centroid_hz: DescriptorKind::Centroid.eval(&m, &freqs).unwrap_or(f64::NAN),
                bandwidth_hz: DescriptorKind::Bandwidth.eval(&m, &freqs).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

/// Run the descriptor search from `x0` (a normalized frame).
pub fn synthesize(
    ck: &Checkpoint,
    pca: &PcaProjection,
    x0: &[f64],
    target: &TargetSeries,
    nbh: &NeighborhoodSpec,
    seed: u64,
) -> Result<SynthResult> {
    let freqs = bin_frequencies(&ck.spec);
    let ctx = SynthContext { model: &ck.model, pca: Some(pca), freqs: &freqs };
    Ok(descriptor_synth(&ctx, x0, target, nbh, &mut Rng::new(seed))?)
}

pub fn render_synthesis(result: &SynthResult, renderer: &SpectralRenderer) -> Result<AudioBuffer> {
    Ok(render_synth(result, renderer)?)
}

/// Neighbour distributions between class centroids and target points.
#[derive(Debug, Clone, PartialEq)]
pub struct RegInspection {
    pub classes: Vec<String>,
    pub latent: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

pub fn inspect_reg(model: &VaeModel<f32>, corpus: &Corpus, target: &TimbreTarget, norm: TargetNormalization) -> Result<RegInspection> {
    let data = corpus.dataset(None, Some(target))?;
    let mu = corpus_latents(model, corpus)?;
    let (ids, reps) = class_representatives(&mu, &data.labels);
    let t: Vec<Vec<f64>> = ids.iter().map(|&c| target.coords[c].clone()).collect();
    Ok(RegInspection {
        classes: ids.iter().map(|&c| target.instruments[c].clone()).collect(),
        latent: latent_neighbor_dist(&reps)?.rows,
        target: target_neighbor_dist(&t, norm)?.rows,
    })
}

/// Square matrix CSV with class names on both axes.
pub fn write_matrix(path: &Path, names: &[String], m: &[Vec<f64>]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (n, row) in names.iter().zip(m) {
        let mut rec = vec![n.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(path))
}
