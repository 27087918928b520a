//! Stages of a run. Each stage reads its inputs from the run directory and
//! writes its outputs there, so stages can be run one at a time or chained.
//!
//! | stage | reads | writes |
//! |---|---|---|
//! | simulate | | `phantom.mrc`, `labels.mrc`, `movie.mrc`, `movie.tlt` |
//! | pair | movie | `half_a.mrc`, `half_a.tlt`, `half_b.mrc`, `half_b.tlt` |
//! | reconstruct | movie, halves | `tomogram.mrc`, `tomo_a.mrc`, `tomo_b.mrc` |
//! | train | halves or half tomograms | `model.bin`, `training.csv` |
//! | restore | model and its inputs | `restored.mrc`, `restored_a.mrc`, `restored_b.mrc` |
//! | filter | tomogram | `filtered.mrc` |
//! | fsc | half and restored half tomograms | `fsc_raw.csv`, `fsc_restored.csv`, `fsc.svg` |
//! | segment | tomogram, restored, labels | `segmentation_{raw,restored}.mrc`, `segmenter_{raw,restored}.bin` |
//! | evaluate | all of the above | `detections_{raw,restored}.csv`, `pr.svg`, `report.json` |
//!
//! `movie.mrc` stores the frames of every tilt consecutively, tilts in
//! acquisition order; `movie.tlt` lists one angle per tilt in the same order.
//! Every command also writes `manifest.json` with the config hash, seeds,
//! versions and the SHA-256 of each output. If a command fails, the files it
//! wrote are removed.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use cryocare_core::metrics::FscCurve;
use cryocare_core::nn::Model;
use cryocare_core::pairing::Scheme;
use cryocare_core::phantom::{LabelField, MovieTilt, MovieTiltSeries};
use cryocare_core::recon::{Tilt, TiltSeries};
use cryocare_core::ScalarField;

use crate::config::{hex, PipelineConfig, Seeds, SCHEMA_VERSION};
use crate::workflow::{self, Halves};
use crate::{artifact, export, mrc, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Pair,
    Reconstruct,
    Train,
    Restore,
    Filter,
    Fsc,
    Segment,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Simulate,
        Stage::Pair,
        Stage::Reconstruct,
        Stage::Train,
        Stage::Restore,
        Stage::Filter,
        Stage::Fsc,
        Stage::Segment,
        Stage::Evaluate,
    ];
}

pub struct Context {
    pub cfg: PipelineConfig,
    pub scheme: Scheme,
    pub dir: PathBuf,
    written: RefCell<Vec<PathBuf>>,
}

impl Context {
    pub fn new(cfg: PipelineConfig, dir: PathBuf) -> Result<Self> {
        let scheme = cfg.scheme()?;
        Ok(Self {
            cfg,
            scheme,
            dir,
            written: RefCell::new(Vec::new()),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingInput(p))
        }
    }

    /// Writes through a temporary file so a file is either complete or absent.
    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.partial"));
        let io = |e| Error::Io {
            path: path.clone(),
            source: e,
        };
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        let mut w = self.written.borrow_mut();
        if !w.contains(&path) {
            w.push(path);
        }
        Ok(())
    }

    fn write_mrc(&self, name: &str, f: &ScalarField) -> Result<()> {
        let bytes = mrc::to_bytes(f).map_err(|source| Error::Mrc {
            path: self.path(name),
            source,
        })?;
        self.write(name, &bytes)
    }

    fn read_mrc(&self, name: &str) -> Result<ScalarField> {
        let path = self.input(name)?;
        mrc::read_mrc_file(&path).map_err(|source| Error::Mrc { path, source })
    }

    fn read_volume(&self, name: &str) -> Result<ScalarField> {
        let v = self.read_mrc(name)?;
        if v.shape()[0] == 1 {
            Ok(v.squeeze()?)
        } else {
            Ok(v)
        }
    }

    fn write_model(&self, name: &str, m: &Model) -> Result<()> {
        self.write(name, &artifact::encode(m))
    }

    fn read_model(&self, name: &str) -> Result<Model> {
        let path = self.input(name)?;
        artifact::load(&path).map_err(|source| Error::Artifact { path, source })
    }

    fn read_tilts(&self, name: &str) -> Result<Vec<f64>> {
        let path = self.input(name)?;
        let text = fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim().parse::<f64>().map_err(|_| Error::Format {
                    path: path.clone(),
                    reason: format!("not an angle: {l:?}"),
                })
            })
            .collect()
    }

    fn remove_written(&self) {
        for p in self.written.borrow().iter() {
            let _ = fs::remove_file(p);
        }
    }
}

fn tlt(angles: impl IntoIterator<Item = f64>) -> String {
    angles.into_iter().map(|a| format!("{a}\n")).collect()
}

fn sections(stack: &ScalarField) -> Result<Vec<ScalarField>> {
    Ok((0..stack.shape()[0]).map(|z| stack.section(z)).collect::<cryocare_core::Result<_>>()?)
}

fn write_series(ctx: &Context, stem: &str, s: &TiltSeries) -> Result<()> {
    let projections: Vec<ScalarField> = s.tilts().iter().map(|t| t.projection.clone()).collect();
    ctx.write_mrc(&format!("{stem}.mrc"), &ScalarField::stack(&projections)?)?;
    ctx.write(&format!("{stem}.tlt"), tlt(s.angles()).as_bytes())
}

fn read_series(ctx: &Context, stem: &str) -> Result<TiltSeries> {
    let angles = ctx.read_tilts(&format!("{stem}.tlt"))?;
    let stack = ctx.read_mrc(&format!("{stem}.mrc"))?;
    if stack.shape()[0] != angles.len() {
        return Err(Error::Format {
            path: ctx.path(&format!("{stem}.tlt")),
            reason: format!("{} angles for {} projections", angles.len(), stack.shape()[0]),
        });
    }
    let tilts = sections(&stack)?
        .into_iter()
        .zip(angles)
        .enumerate()
        .map(|(i, (projection, angle))| Tilt {
            angle,
            projection,
            acquisition_index: i,
        })
        .collect();
    Ok(TiltSeries::new(tilts)?)
}

fn read_movie(ctx: &Context) -> Result<MovieTiltSeries> {
    let angles = ctx.read_tilts("movie.tlt")?;
    let stack = ctx.read_mrc("movie.mrc")?;
    let n = stack.shape()[0];
    if angles.is_empty() || n % angles.len() != 0 {
        return Err(Error::Format {
            path: ctx.path("movie.tlt"),
            reason: format!("{n} frames do not divide evenly over {} tilts", angles.len()),
        });
    }
    let per = n / angles.len();
    let mut frames = sections(&stack)?.into_iter();
    let tilts = angles
        .iter()
        .enumerate()
        .map(|(i, &angle)| MovieTilt {
            angle,
            acquisition_index: i,
            frames: frames.by_ref().take(per).collect(),
        })
        .collect();
    Ok(MovieTiltSeries::new(tilts)?)
}

fn read_labels(ctx: &Context) -> Result<LabelField> {
    Ok(LabelField::from_field(&ctx.read_volume("labels.mrc")?)?)
}

fn volume_shape(ctx: &Context) -> [usize; 3] {
    ctx.cfg.phantom.shape
}

fn simulate(ctx: &Context) -> Result<()> {
    let sim = workflow::simulate(&ctx.cfg)?;
    info!("simulated {} tilts", sim.movie.tilts.len());
    ctx.write_mrc("phantom.mrc", &sim.phantom.density)?;
    ctx.write_mrc("labels.mrc", &sim.phantom.labels.to_field())?;
    let mut tilts: Vec<&MovieTilt> = sim.movie.tilts.iter().collect();
    tilts.sort_by_key(|t| t.acquisition_index);
    let frames: Vec<ScalarField> = tilts.iter().flat_map(|t| t.frames.iter().cloned()).collect();
    ctx.write_mrc("movie.mrc", &ScalarField::stack(&frames)?)?;
    ctx.write("movie.tlt", tlt(tilts.iter().map(|t| t.angle)).as_bytes())
}

fn pair(ctx: &Context) -> Result<()> {
    let h = workflow::halves(&read_movie(ctx)?, ctx.scheme)?;
    info!("{}: {} + {} projections", ctx.scheme, h.a.len(), h.b.len());
    write_series(ctx, "half_a", &h.a)?;
    write_series(ctx, "half_b", &h.b)
}

fn read_halves(ctx: &Context) -> Result<Halves> {
    Ok(Halves {
        a: read_series(ctx, "half_a")?,
        b: read_series(ctx, "half_b")?,
    })
}

fn reconstruct(ctx: &Context) -> Result<()> {
    let shape = volume_shape(ctx);
    ctx.write_mrc("tomogram.mrc", &workflow::raw_tomogram(&read_movie(ctx)?, shape)?)?;
    let (a, b) = workflow::half_maps(&read_halves(ctx)?, shape)?;
    ctx.write_mrc("tomo_a.mrc", &a)?;
    ctx.write_mrc("tomo_b.mrc", &b)
}

fn half_tomograms(ctx: &Context) -> Result<(ScalarField, ScalarField)> {
    Ok((ctx.read_volume("tomo_a.mrc")?, ctx.read_volume("tomo_b.mrc")?))
}

fn train(ctx: &Context) -> Result<()> {
    let (model, history) = if ctx.scheme.is_tomographic() {
        let (a, b) = half_tomograms(ctx)?;
        workflow::train_tomogram_model(&a, &b, &ctx.cfg)?
    } else {
        workflow::train_projection_model(&read_halves(ctx)?, &ctx.cfg)?
    };
    if let (Some(t), Some(v)) = (history.train_loss.last(), history.val_loss.last()) {
        info!("trained {} epochs: train {t:.4}, val {v:.4}", history.train_loss.len());
    }
    ctx.write_model("model.bin", &model)?;
    ctx.write("training.csv", export::history_csv(&history).as_bytes())
}

fn restore(ctx: &Context) -> Result<()> {
    let model = ctx.read_model("model.bin")?;
    let expected = if ctx.scheme.is_tomographic() { 3 } else { 2 };
    if model.config.spatial_dims != expected {
        return Err(Error::Format {
            path: ctx.path("model.bin"),
            reason: format!("{}D model for scheme {}", model.config.spatial_dims, ctx.scheme),
        });
    }
    let r = if ctx.scheme.is_tomographic() {
        let (a, b) = half_tomograms(ctx)?;
        workflow::restore_tomograms(&a, &b, &model, &ctx.cfg)?
    } else {
        workflow::restore_projections(&read_halves(ctx)?, &model, volume_shape(ctx), &ctx.cfg)?
    };
    ctx.write_mrc("restored.mrc", &r.mean)?;
    ctx.write_mrc("restored_a.mrc", &r.a)?;
    ctx.write_mrc("restored_b.mrc", &r.b)
}

fn filter(ctx: &Context) -> Result<()> {
    let v = ctx.read_volume("tomogram.mrc")?;
    ctx.write_mrc("filtered.mrc", &workflow::baseline_filter(&v, &ctx.cfg)?)
}

fn fsc_curves(ctx: &Context) -> Result<(FscCurve, FscCurve)> {
    let (a, b) = half_tomograms(ctx)?;
    let raw = workflow::fsc_curve(&a, &b, &ctx.cfg)?;
    let restored = workflow::fsc_curve(&ctx.read_volume("restored_a.mrc")?, &ctx.read_volume("restored_b.mrc")?, &ctx.cfg)?;
    Ok((raw, restored))
}

fn fsc(ctx: &Context) -> Result<()> {
    let (raw, restored) = fsc_curves(ctx)?;
    ctx.write("fsc_raw.csv", export::fsc_csv(&raw).as_bytes())?;
    ctx.write("fsc_restored.csv", export::fsc_csv(&restored).as_bytes())?;
    ctx.write("fsc.svg", export::fsc_plot(&[("raw", &raw), ("restored", &restored)]).as_bytes())
}

const VERSIONS: [(&str, &str); 2] = [("raw", "tomogram.mrc"), ("restored", "restored.mrc")];

fn segment(ctx: &Context) -> Result<()> {
    let labels = read_labels(ctx)?;
    for (name, file) in VERSIONS {
        let (seg, model) = workflow::segment(&ctx.read_volume(file)?, &labels, &ctx.cfg)?;
        ctx.write_mrc(&format!("segmentation_{name}.mrc"), &seg)?;
        ctx.write_model(&format!("segmenter_{name}.bin"), &model)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Pair {
    raw: f64,
    restored: f64,
}

#[derive(Serialize)]
struct Report {
    scheme: String,
    fsc_band: [f64; 2],
    fsc_band_mean: Pair,
    wedge_inconsistency: Pair,
    wedge_inconsistency_filtered: Option<f64>,
    best_f1: Pair,
    matching: &'static str,
}

fn evaluate(ctx: &Context) -> Result<()> {
    let labels = read_labels(ctx)?;
    let mut reports = Vec::new();
    let mut wedge = Vec::new();
    for (name, file) in VERSIONS {
        let seg = ctx.read_volume(&format!("segmentation_{name}.mrc"))?;
        let r = workflow::detection_report(&seg, &labels, &ctx.cfg)?;
        ctx.write(&format!("detections_{name}.csv"), export::detections_csv(&r).as_bytes())?;
        reports.push(r);
        wedge.push(workflow::wedge_ratio(&ctx.read_volume(file)?, &ctx.cfg)?);
    }
    ctx.write("pr.svg", export::pr_plot(&[("raw", &reports[0]), ("restored", &reports[1])]).as_bytes())?;
    let filtered = match ctx.read_volume("filtered.mrc") {
        Ok(v) => Some(workflow::wedge_ratio(&v, &ctx.cfg)?),
        Err(Error::MissingInput(_)) => None,
        Err(e) => return Err(e),
    };
    let (raw, restored) = fsc_curves(ctx)?;
    let [lo, hi] = ctx.cfg.metrics.fsc_band;
    let band = |c: &FscCurve| c.band_mean(lo, hi).unwrap_or(f64::NAN);
    let report = Report {
        scheme: ctx.scheme.to_string(),
        fsc_band: [lo, hi],
        fsc_band_mean: Pair {
            raw: band(&raw),
            restored: band(&restored),
        },
        wedge_inconsistency: Pair {
            raw: wedge[0],
            restored: wedge[1],
        },
        wedge_inconsistency_filtered: filtered,
        best_f1: Pair {
            raw: reports[0].best_f1(),
            restored: reports[1].best_f1(),
        },
        matching: reports[0].criterion,
    };
    info!(
        "best F1 raw {:.3} restored {:.3}; FSC band raw {:.3} restored {:.3}",
        report.best_f1.raw, report.best_f1.restored, report.fsc_band_mean.raw, report.fsc_band_mean.restored
    );
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    ctx.write("report.json", json.as_bytes())
}

fn run_stage(ctx: &Context, stage: Stage) -> Result<()> {
    info!("stage {stage:?}");
    match stage {
        Stage::Simulate => simulate(ctx),
        Stage::Pair => pair(ctx),
        Stage::Reconstruct => reconstruct(ctx),
        Stage::Train => train(ctx),
        Stage::Restore => restore(ctx),
        Stage::Filter => filter(ctx),
        Stage::Fsc => fsc(ctx),
        Stage::Segment => segment(ctx),
        Stage::Evaluate => evaluate(ctx),
    }
}

#[derive(Serialize)]
struct Output {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    schema_version: u32,
    scheme: String,
    config_sha256: String,
    seed: u64,
    seeds: Seeds,
    outputs: Vec<Output>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn write_manifest(ctx: &Context, command: &str) -> Result<()> {
    let mut outputs = ctx
        .written
        .borrow()
        .iter()
        .map(|p| {
            Ok(Output {
                file: p.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: file_sha256(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    outputs.sort_by(|a, b| a.file.cmp(&b.file));
    let m = Manifest {
        tool: "cryocare",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        schema_version: SCHEMA_VERSION,
        scheme: ctx.scheme.to_string(),
        config_sha256: ctx.cfg.hash(),
        seed: ctx.cfg.seed,
        seeds: ctx.cfg.seeds(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    ctx.write("manifest.json", json.as_bytes())
}

/// Runs `stages` in order, then writes the manifest. On failure every file
/// written by this call is removed.
pub fn run(ctx: &Context, command: &str, stages: &[Stage]) -> Result<()> {
    fs::create_dir_all(&ctx.dir).map_err(|e| Error::Io {
        path: ctx.dir.clone(),
        source: e,
    })?;
    let result = stages
        .iter()
        .try_for_each(|&s| run_stage(ctx, s))
        .and_then(|()| write_manifest(ctx, command));
    if result.is_err() {
        ctx.remove_written();
    }
    result
}
