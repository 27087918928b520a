//! Pipeline stages composed from the core operations. The CLI and the
//! acceptance tests both go through these functions.

use cryocare_core::baselines::{default_lambda, median_filter, nad_filter};
use cryocare_core::downstream::{
    count_split, pr_sweep_prediction, train_segmenter, BinaryMask, Connectivity, DetectionReport, SegmenterSampling,
};
use cryocare_core::grid::extract_patch_pairs;
use cryocare_core::metrics::{fsc, wedge_inconsistency, FscCurve};
use cryocare_core::nn::{predict, train, Model, PairDataset, TrainHistory};
use cryocare_core::pairing::{half_series, projection_pairs, Scheme};
use cryocare_core::phantom::{make_phantom, simulate_acquisition, LabelField, MovieTiltSeries, Phantom};
use cryocare_core::recon::{backproject, Tilt, TiltSeries, WedgeMask};
use cryocare_core::{Rng, ScalarField};

use crate::config::{FilterKind, PipelineConfig};

type Result<T> = std::result::Result<T, cryocare_core::Error>;

pub struct Simulation {
    pub phantom: Phantom,
    pub movie: MovieTiltSeries,
}

pub fn simulate(cfg: &PipelineConfig) -> crate::Result<Simulation> {
    let phantom = make_phantom(&cfg.phantom_spec())?;
    let movie = simulate_acquisition(&phantom, &cfg.acquisition_spec()?)?;
    Ok(Simulation { phantom, movie })
}

/// Two noise-independent projection stacks. For the projection schemes these
/// are the members of each training pair; for the tomogram schemes, the half
/// tilt series.
#[derive(Debug, Clone, PartialEq)]
pub struct Halves {
    pub a: TiltSeries,
    pub b: TiltSeries,
}

pub fn halves(movie: &MovieTiltSeries, scheme: Scheme) -> Result<Halves> {
    if scheme.is_tomographic() {
        let h = half_series(movie, scheme)?;
        return Ok(Halves { a: h.a, b: h.b });
    }
    let mut pairs = projection_pairs(movie, scheme)?;
    if scheme == Scheme::P2pTap {
        // Overlapping windows would put most tilts in both halves; keep the
        // disjoint pairs (0,1), (2,3), ... so the half maps share no noise.
        pairs = pairs.into_iter().step_by(2).collect();
    }
    let series = |first: bool| {
        let tilts = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let angles = &p.provenance.angles;
                Tilt {
                    angle: if first { angles[0] } else { *angles.last().unwrap() },
                    projection: if first { p.a.clone() } else { p.b.clone() },
                    acquisition_index: i,
                }
            })
            .collect();
        TiltSeries::new(tilts)
    };
    Ok(Halves {
        a: series(true)?,
        b: series(false)?,
    })
}

pub fn reconstruct(series: &TiltSeries, shape: [usize; 3]) -> Result<ScalarField> {
    backproject(series, shape, true)
}

/// Weighted backprojection of the frame-summed movie.
pub fn raw_tomogram(movie: &MovieTiltSeries, shape: [usize; 3]) -> Result<ScalarField> {
    reconstruct(&movie.summed()?, shape)
}

pub fn half_maps(h: &Halves, shape: [usize; 3]) -> Result<(ScalarField, ScalarField)> {
    Ok((reconstruct(&h.a, shape)?, reconstruct(&h.b, shape)?))
}

fn prediction_overlap(model: &Model) -> usize {
    let g = model.config.granularity();
    model.config.receptive_margin().div_ceil(g) * g
}

/// Noise2Noise on projection pairs, both orderings, whole projections.
pub fn train_projection_model(h: &Halves, cfg: &PipelineConfig) -> Result<(Model, TrainHistory)> {
    let mut data = PairDataset::new();
    for (a, b) in h.a.tilts().iter().zip(h.b.tilts()) {
        data.push_both(a.projection.clone(), b.projection.clone())?;
    }
    train(&data, &cfg.unet(2), &cfg.train_config())
}

/// Noise2Noise on co-located patches of two half tomograms.
pub fn train_tomogram_model(ta: &ScalarField, tb: &ScalarField, cfg: &PipelineConfig) -> Result<(Model, TrainHistory)> {
    let t = &cfg.training;
    let mut data = PairDataset::new();
    let size = [t.patch; 3];
    for (a, b) in extract_patch_pairs(ta, tb, t.patches, &size, &Rng::new(cfg.seeds().patches))? {
        data.push_both(a, b)?;
    }
    train(&data, &cfg.unet(3), &cfg.train_config())
}

pub fn train_model(h: &Halves, maps: &(ScalarField, ScalarField), scheme: Scheme, cfg: &PipelineConfig) -> Result<(Model, TrainHistory)> {
    if scheme.is_tomographic() {
        train_tomogram_model(&maps.0, &maps.1, cfg)
    } else {
        train_projection_model(h, cfg)
    }
}

/// Restored half maps and their average.
#[derive(Debug, Clone, PartialEq)]
pub struct Restored {
    pub a: ScalarField,
    pub b: ScalarField,
    pub mean: ScalarField,
}

fn average(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    a.zip_map(b, |x, y| ((x as f64 + y as f64) * 0.5) as f32)
}

/// Applies a 3D model to both half tomograms.
pub fn restore_tomograms(ta: &ScalarField, tb: &ScalarField, model: &Model, cfg: &PipelineConfig) -> Result<Restored> {
    let tile = [cfg.training.tile; 3];
    let overlap = prediction_overlap(model);
    let a = predict(ta, model, &tile, overlap)?;
    let b = predict(tb, model, &tile, overlap)?;
    let mean = average(&a, &b)?;
    Ok(Restored { a, b, mean })
}

/// Restores every projection with a 2D model and reconstructs each half.
pub fn restore_projections(h: &Halves, model: &Model, shape: [usize; 3], cfg: &PipelineConfig) -> Result<Restored> {
    let tile = [cfg.training.tile; 2];
    let overlap = prediction_overlap(model);
    let restore = |s: &TiltSeries| -> Result<ScalarField> {
        let series = s.map_projections(|t| predict(&t.projection, model, &tile, overlap))?;
        reconstruct(&series, shape)
    };
    let a = restore(&h.a)?;
    let b = restore(&h.b)?;
    let mean = average(&a, &b)?;
    Ok(Restored { a, b, mean })
}

pub fn restore(
    h: &Halves,
    maps: &(ScalarField, ScalarField),
    model: &Model,
    scheme: Scheme,
    cfg: &PipelineConfig,
) -> Result<Restored> {
    if scheme.is_tomographic() {
        restore_tomograms(&maps.0, &maps.1, model, cfg)
    } else {
        restore_projections(h, model, cfg.phantom.shape, cfg)
    }
}

pub fn baseline_filter(v: &ScalarField, cfg: &PipelineConfig) -> Result<ScalarField> {
    let f = &cfg.filter;
    match f.kind {
        FilterKind::Median => median_filter(v, &vec![f.median_radius; v.ndim()]),
        FilterKind::Nad => {
            let lambda = f.nad_lambda.unwrap_or_else(|| default_lambda(v));
            nad_filter(v, f.nad_steps, f.nad_dt, lambda)
        }
    }
}

pub fn fsc_curve(a: &ScalarField, b: &ScalarField, cfg: &PipelineConfig) -> Result<FscCurve> {
    fsc(a, b, cfg.metrics.shell_width)
}

pub fn wedge_ratio(v: &ScalarField, cfg: &PipelineConfig) -> Result<f64> {
    wedge_inconsistency(v, &WedgeMask::new(cfg.wedge_half_angle())?)
}

/// Centroid of every nonzero label, in label order.
pub fn label_centroids(labels: &LabelField) -> Vec<[f64; 3]> {
    let [_, ny, nx] = labels.shape;
    let n = labels.max_label() as usize;
    let mut sum = vec![[0.0f64; 4]; n];
    for (i, &l) in labels.data.iter().enumerate() {
        if l > 0 {
            let s = &mut sum[l as usize - 1];
            s[0] += (i / (ny * nx)) as f64;
            s[1] += (i / nx % ny) as f64;
            s[2] += (i % nx) as f64;
            s[3] += 1.0;
        }
    }
    sum.iter()
        .filter(|s| s[3] > 0.0)
        .map(|s| [s[0] / s[3], s[1] / s[3], s[2] / s[3]])
        .collect()
}

/// First X index of the evaluation region. Half the targets lie below it and
/// are used to train the segmenter.
pub fn detection_split(labels: &LabelField) -> Result<usize> {
    let c = label_centroids(labels);
    let x = count_split(&c, 2, c.len() / 2)?;
    Ok((x.ceil() as usize).clamp(1, labels.shape[2] - 1))
}

fn crop_x(f: &ScalarField, from: usize, to: usize) -> Result<ScalarField> {
    let [nz, ny, _] = f.dims3();
    f.extract(&[0, 0, from], &[nz, ny, to - from])
}

fn crop_labels(l: &LabelField, from: usize, to: usize) -> Result<LabelField> {
    LabelField::from_field(&crop_x(&l.to_field(), from, to)?)
}

/// Trains a segmenter on the region below the split and applies it to the whole volume.
pub fn segment(v: &ScalarField, labels: &LabelField, cfg: &PipelineConfig) -> Result<(ScalarField, Model)> {
    let split = detection_split(labels)?;
    let region = crop_x(v, 0, split)?;
    let mask = BinaryMask::from_labels(&crop_labels(labels, 0, split)?);
    let s = &cfg.segmentation;
    // The training region can be narrower than the configured patch.
    let g = cfg.segmenter_unet().granularity();
    let patch = s.patch.min(region.shape().iter().min().unwrap() / g * g);
    let (model, _) = train_segmenter(
        &[(region, mask)],
        &cfg.segmenter_unet(),
        &cfg.segmenter_train_config(),
        SegmenterSampling {
            patch,
            patches_per_volume: s.patches,
        },
    )?;
    let seg = predict(v, &model, &[cfg.training.tile; 3], prediction_overlap(&model))?;
    Ok((seg, model))
}

/// Size-threshold sweep over the evaluation region of a segmentation.
pub fn detection_report(seg: &ScalarField, labels: &LabelField, cfg: &PipelineConfig) -> Result<DetectionReport> {
    let split = detection_split(labels)?;
    let nx = labels.shape[2];
    pr_sweep_prediction(
        &crop_x(seg, split, nx)?,
        &crop_labels(labels, split, nx)?,
        &cfg.segmentation.min_sizes,
        Connectivity::from_code(cfg.segmentation.connectivity)?,
    )
}
