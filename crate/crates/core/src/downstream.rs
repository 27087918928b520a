//! Blob detection on (restored) tomograms: a U-Net segmenter, min-max
//! normalization, Otsu thresholding, connected components, a size filter and
//! precision/recall scoring against ground-truth labels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{random_offsets, Rng, ScalarField};
use crate::nn::{predict, train, Model, PairDataset, TrainConfig, TrainHistory, UNetConfig};
use crate::phantom::LabelField;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub shape: [usize; 3],
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(shape.to_vec(), vec![data.len()]));
        }
        Ok(Self { shape, data })
    }

    /// Voxels with a nonzero label.
    pub fn from_labels(l: &LabelField) -> Self {
        Self {
            shape: l.shape,
            data: l.data.iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField::new(
            self.shape.to_vec(),
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask shape is consistent")
    }
}

/// Rescales to `[0, 1]`.
pub fn normalize_min_max(f: &ScalarField) -> Result<ScalarField> {
    let (lo, hi) = f.min_max();
    if !(hi > lo) {
        return Err(Error::Degenerate("min-max normalization of a constant field"));
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    f.map(|v| ((v as f64 - lo) / range) as f32)
}

pub const OTSU_BINS: usize = 256;

/// Histogram bin of a value already normalized to `[0, 1]`.
fn bin_of(v: f32) -> usize {
    ((v as f64 * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Between-class variance (up to the constant `1/N^2`) of splitting the
/// histogram after bin `t`, from integer class counts and bin-index sums.
pub(crate) fn between_class(n0: u64, s0: u64, n: u64, s: u64) -> f64 {
    let n1 = n - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let d = n as f64 * s0 as f64 - n0 as f64 * s as f64;
    d * d / (n0 as f64 * n1 as f64)
}

/// Otsu split of a 256-bin histogram of the min-max normalized field.
/// Returns the last bin of the lower class; ties go to the lower bin.
pub fn otsu_bin(f: &ScalarField) -> Result<usize> {
    let norm = normalize_min_max(f)?;
    let mut hist = [0u64; OTSU_BINS];
    for &v in norm.data() {
        hist[bin_of(v)] += 1;
    }
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(i, &h)| i as u64 * h).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (t, &h) in hist.iter().enumerate() {
        n0 += h;
        s0 += t as u64 * h;
        let v = between_class(n0, s0, n, s);
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(best.0)
}

/// Otsu threshold in the units of `f`: the upper edge of the lower class,
/// `min + (t + 1) / 256 * (max - min)`.
pub fn otsu_threshold(f: &ScalarField) -> Result<f64> {
    let t = otsu_bin(f)?;
    let (lo, hi) = f.min_max();
    Ok(lo as f64 + (t + 1) as f64 / OTSU_BINS as f64 * (hi as f64 - lo as f64))
}

/// Foreground = voxels above the Otsu split (by histogram bin).
pub fn otsu_mask(f: &ScalarField) -> Result<BinaryMask> {
    let t = otsu_bin(f)?;
    let norm = normalize_min_max(f)?;
    BinaryMask::new(f.dims3(), norm.data().iter().map(|&v| bin_of(v) > t).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Faces6,
    Edges18,
    #[default]
    Corners26,
}

impl Connectivity {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            6 => Ok(Self::Faces6),
            18 => Ok(Self::Edges18),
            26 => Ok(Self::Corners26),
            _ => Err(Error::InvalidArgument(alloc::format!("connectivity {code} is not 6, 18 or 26"))),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Self::Faces6 => 6,
            Self::Edges18 => 18,
            Self::Corners26 => 26,
        }
    }

    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_nonzero = match self {
            Self::Faces6 => 1,
            Self::Edges18 => 2,
            Self::Corners26 => 3,
        };
        let mut v = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nz = [dz, dy, dx].iter().filter(|&&d| d != 0).count();
                    if nz > 0 && nz <= max_nonzero {
                        v.push([dz, dy, dx]);
                    }
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    /// Labels `1..=K` in raster order of each component's first voxel.
    pub labels: LabelField,
    /// `counts[k - 1]` is the voxel count of label `k`.
    pub counts: Vec<usize>,
}

/// Flood-fill labeling.
pub fn connected_components(m: &BinaryMask, conn: Connectivity) -> Components {
    let [nz, ny, nx] = m.shape;
    let offsets = conn.offsets();
    let mut labels = LabelField::zeros(m.shape);
    let mut counts = Vec::new();
    let mut stack = Vec::new();
    for start in 0..m.data.len() {
        if !m.data[start] || labels.data[start] != 0 {
            continue;
        }
        let label = counts.len() as u32 + 1;
        labels.data[start] = label;
        stack.push(start);
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (z, y, x) = (i / (ny * nx), (i / nx) % ny, i % nx);
            for d in &offsets {
                let (zz, yy, xx) = (z as isize + d[0], y as isize + d[1], x as isize + d[2]);
                if zz < 0 || yy < 0 || xx < 0 || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize {
                    continue;
                }
                let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                if m.data[j] && labels.data[j] == 0 {
                    labels.data[j] = label;
                    stack.push(j);
                }
            }
        }
        counts.push(count);
    }
    Components { labels, counts }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: u32,
    pub size: usize,
    /// `(z, y, x)` mean voxel position.
    pub centroid: [f64; 3],
    /// Flat voxel indices, ascending.
    pub voxels: Vec<usize>,
}

/// Components with at least `min_size` voxels, each one detection.
pub fn filter_components(c: &Components, min_size: usize) -> Vec<Detection> {
    let keep: Vec<bool> = c.counts.iter().map(|&n| n >= min_size).collect();
    let mut dets: Vec<Detection> = c
        .counts
        .iter()
        .enumerate()
        .filter(|(k, _)| keep[*k])
        .map(|(k, &n)| Detection {
            label: k as u32 + 1,
            size: n,
            centroid: [0.0; 3],
            voxels: Vec::with_capacity(n),
        })
        .collect();
    let mut slot = vec![usize::MAX; c.counts.len()];
    for (i, d) in dets.iter().enumerate() {
        slot[d.label as usize - 1] = i;
    }
    let [_, ny, nx] = c.labels.shape;
    for (i, &l) in c.labels.data.iter().enumerate() {
        if l == 0 || slot[l as usize - 1] == usize::MAX {
            continue;
        }
        let d = &mut dets[slot[l as usize - 1]];
        d.voxels.push(i);
        d.centroid[0] += (i / (ny * nx)) as f64;
        d.centroid[1] += ((i / nx) % ny) as f64;
        d.centroid[2] += (i % nx) as f64;
    }
    for d in dets.iter_mut() {
        d.centroid.iter_mut().for_each(|v| *v /= d.size as f64);
    }
    dets
}

pub const MATCHING_CRITERION: &str = "greedy-largest-overlap-min1voxel";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScore {
    pub min_size: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl DetectionScore {
    pub fn f1(&self) -> f64 {
        if self.precision + self.recall == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        }
    }
}

/// Greedy one-to-one matching, largest voxel overlap first (ties by
/// prediction then ground-truth order); any overlap of one voxel or more
/// counts. Precision is 1 when there are no predictions.
pub fn score_detections(preds: &[Detection], gt: &LabelField, min_size: usize) -> DetectionScore {
    let n_gt = {
        let mut seen = vec![false; gt.max_label() as usize + 1];
        gt.data.iter().for_each(|&l| seen[l as usize] = true);
        seen[1..].iter().filter(|&&s| s).count()
    };
    let mut pairs: Vec<(usize, usize, u32)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        let mut hits: Vec<u32> = p.voxels.iter().map(|&v| gt.data[v]).filter(|&l| l != 0).collect();
        hits.sort_unstable();
        for run in hits.chunk_by(|a, b| a == b) {
            pairs.push((run.len(), pi, run[0]));
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gt.max_label() as usize + 1];
    let mut tp = 0;
    for (_, pi, g) in pairs {
        if !pred_used[pi] && !gt_used[g as usize] {
            pred_used[pi] = true;
            gt_used[g as usize] = true;
            tp += 1;
        }
    }
    let fp = preds.len() - tp;
    let fn_ = n_gt - tp;
    DetectionScore {
        min_size,
        tp,
        fp,
        fn_,
        precision: if preds.is_empty() { 1.0 } else { tp as f64 / preds.len() as f64 },
        recall: if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub criterion: &'static str,
    pub entries: Vec<DetectionScore>,
}

impl DetectionReport {
    pub fn best_f1(&self) -> f64 {
        self.entries.iter().map(|e| e.f1()).fold(0.0, f64::max)
    }
}

/// Otsu mask of `prediction`, components, then one score per size threshold.
pub fn pr_sweep_prediction(
    prediction: &ScalarField,
    gt: &LabelField,
    min_sizes: &[usize],
    conn: Connectivity,
) -> Result<DetectionReport> {
    if min_sizes.is_empty() {
        return Err(Error::invalid("at least one size threshold is required"));
    }
    if min_sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("size thresholds must be ascending"));
    }
    if prediction.dims3() != gt.shape {
        return Err(Error::ShapeMismatch(prediction.shape().to_vec(), gt.shape.to_vec()));
    }
    let comps = connected_components(&otsu_mask(prediction)?, conn);
    let entries = crate::par::map_range(min_sizes.len(), |i| {
        score_detections(&filter_components(&comps, min_sizes[i]), gt, min_sizes[i])
    });
    Ok(DetectionReport {
        criterion: MATCHING_CRITERION,
        entries,
    })
}

/// Segments `volume` with `segmenter` (whole-volume prediction tiled by
/// `tile`) and sweeps the size thresholds.
pub fn pr_sweep(
    volume: &ScalarField,
    segmenter: &Model,
    gt: &LabelField,
    min_sizes: &[usize],
    tile: &[usize],
) -> Result<DetectionReport> {
    let overlap = segmenter.config.receptive_margin();
    let seg = predict(volume, segmenter, tile, overlap)?;
    pr_sweep_prediction(&seg, gt, min_sizes, Connectivity::default())
}

/// Patch sampling for [`train_segmenter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterSampling {
    pub patch: usize,
    pub patches_per_volume: usize,
}

/// Trains a network to map volumes to their {0, 1} masks with MSE and a
/// linear head. Patches are cut at random positions (seeded by `tcfg.seed`).
pub fn train_segmenter(
    volumes: &[(ScalarField, BinaryMask)],
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    sampling: SegmenterSampling,
) -> Result<(Model, TrainHistory)> {
    if volumes.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let mut data = PairDataset::new();
    let rng = Rng::new(tcfg.seed).stream(u64::MAX);
    for (vi, (v, m)) in volumes.iter().enumerate() {
        if v.dims3() != m.shape || v.ndim() != 3 {
            return Err(Error::ShapeMismatch(v.shape().to_vec(), m.shape.to_vec()));
        }
        let target = m.to_field();
        let size = [sampling.patch; 3];
        for off in random_offsets(v.shape(), sampling.patches_per_volume, &size, &rng.stream(vi as u64))? {
            data.push(v.extract(&off, &size)?, target.extract(&off, &size)?)?;
        }
    }
    train(
        &data,
        ucfg,
        &TrainConfig {
            normalize_targets: false,
            ..*tcfg
        },
    )
}

/// Position along `axis` splitting the centroids into `n_first` below and the
/// rest above; midway between the neighboring centroids.
pub fn count_split(centroids: &[[f64; 3]], axis: usize, n_first: usize) -> Result<f64> {
    if axis > 2 || n_first == 0 || n_first >= centroids.len() {
        return Err(Error::invalid("split needs a valid axis and 0 < n_first < count"));
    }
    let mut c: Vec<f64> = centroids.iter().map(|p| p[axis]).collect();
    c.sort_by(f64::total_cmp);
    if c[n_first - 1] == c[n_first] {
        return Err(Error::invalid("centroids tie at the requested split"));
    }
    Ok(0.5 * (c[n_first - 1] + c[n_first]))
}
