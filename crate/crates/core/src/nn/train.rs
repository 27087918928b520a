//! Noise2Noise training: standardization, validation split, mini-batch Adam.

use alloc::vec::Vec;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::tensor::Tensor;
use super::unet::{backward, unet_forward, UNetConfig, UNetParams};
use crate::error::{Error, Result};
use crate::grid::{NormStats, Rng, ScalarField};
use crate::sq;

/// Input/target samples of one shape. Samples pushed together share a group
/// and always land on the same side of the validation split.
#[derive(Debug, Clone, Default)]
pub struct PairDataset {
    inputs: Vec<ScalarField>,
    targets: Vec<ScalarField>,
    groups: Vec<usize>,
    n_groups: usize,
}

impl PairDataset {
    pub fn new() -> Self {
        Self::default()
    }

    fn check(&self, a: &ScalarField, b: &ScalarField) -> Result<()> {
        a.require_same_shape(b)?;
        if let Some(first) = self.inputs.first() {
            first.require_same_shape(a)?;
        }
        Ok(())
    }

    /// Adds `a -> b`.
    pub fn push(&mut self, a: ScalarField, b: ScalarField) -> Result<()> {
        self.check(&a, &b)?;
        self.inputs.push(a);
        self.targets.push(b);
        self.groups.push(self.n_groups);
        self.n_groups += 1;
        Ok(())
    }

    /// Adds `a -> b` and `b -> a` as one group.
    pub fn push_both(&mut self, a: ScalarField, b: ScalarField) -> Result<()> {
        self.check(&a, &b)?;
        self.inputs.push(a.clone());
        self.targets.push(b.clone());
        self.inputs.push(b);
        self.targets.push(a);
        self.groups.extend([self.n_groups; 2]);
        self.n_groups += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(|f| f.shape())
    }

    pub fn input(&self, i: usize) -> &ScalarField {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> &ScalarField {
        &self.targets[i]
    }

    /// Sample indices of the training and validation sets. `ceil(fraction *
    /// groups)` groups (at least one) are held out.
    pub fn split(&self, fraction: f64, rng: &Rng) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        if self.n_groups < 2 {
            return Err(Error::TooFew {
                needed: 2,
                got: self.n_groups,
            });
        }
        let n_val = (libm::ceil(fraction * self.n_groups as f64) as usize).clamp(1, self.n_groups - 1);
        let mut order: Vec<usize> = (0..self.n_groups).collect();
        rng.clone().shuffle(&mut order);
        let mut is_val = alloc::vec![false; self.n_groups];
        for &g in &order[..n_val] {
            is_val[g] = true;
        }
        let (val, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| is_val[self.groups[i]]);
        Ok((train, val))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Standardize targets with the input statistics (Noise2Noise). Off for
    /// targets that already have a fixed scale, such as {0, 1} masks.
    pub normalize_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
            seed: 0,
            normalize_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Validation loss of the initialized network.
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Trained network with the statistics needed to apply it to raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: UNetConfig,
    pub norm: NormStats,
    pub normalize_targets: bool,
    pub params: UNetParams<f32>,
}

impl Model {
    pub fn new(config: UNetConfig, norm: NormStats, normalize_targets: bool, params: UNetParams<f32>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::ShapeMismatch(alloc::vec![config.param_count()], alloc::vec![params.len()]));
        }
        if norm.is_degenerate() || !norm.mean.is_finite() {
            return Err(Error::Degenerate("model normalization has zero spread"));
        }
        if params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            config,
            norm,
            normalize_targets,
            params,
        })
    }
}

struct Prepared {
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
    shape: Vec<usize>,
}

impl Prepared {
    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut shape = alloc::vec![idx.len(), 1];
        shape.extend_from_slice(&self.shape);
        let gather = |v: &Vec<Vec<f32>>| idx.iter().flat_map(|&i| v[i].iter().copied()).collect::<Vec<f32>>();
        Ok((Tensor::new(shape.clone(), gather(&self.inputs))?, Tensor::new(shape, gather(&self.targets))?))
    }
}

fn standardize(f: &ScalarField, s: &NormStats) -> Vec<f32> {
    f.data().iter().map(|&v| ((v as f64 - s.mean) / s.std) as f32).collect()
}

fn val_loss(data: &Prepared, val: &[usize], p: &UNetParams<f32>, cfg: &UNetConfig, batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in val.chunks(batch.max(1)) {
        let (x, t) = data.batch(chunk)?;
        let y = unet_forward(&x, p, cfg)?;
        sum += y
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| sq(a as f64 - b as f64))
            .sum::<f64>();
        count += y.data().len();
    }
    Ok(sum / count as f64)
}

/// Trains a fresh network on `data`. Deterministic for a given seed.
pub fn train(data: &PairDataset, ucfg: &UNetConfig, tcfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_observed(data, ucfg, tcfg, |_, _, _| {})
}

/// As [`train`], calling `observe(epoch, train_loss, val_loss)` after each epoch.
pub fn train_observed(
    data: &PairDataset,
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    mut observe: impl FnMut(usize, f64, f64),
) -> Result<(Model, TrainHistory)> {
    ucfg.validate()?;
    if data.is_empty() {
        return Err(Error::TooFew { needed: 2, got: 0 });
    }
    if tcfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let shape = data.sample_shape().expect("nonempty").to_vec();
    ucfg.spatial3(&shape)?;
    let root = Rng::new(tcfg.seed);
    let (train_idx, val_idx) = data.split(tcfg.validation_fraction, &root.stream(0))?;

    let norm = NormStats::from_values(train_idx.iter().flat_map(|&i| data.inputs[i].data().iter().copied()));
    if norm.is_degenerate() {
        return Err(Error::Degenerate("training inputs are constant"));
    }
    let prepared = Prepared {
        inputs: data.inputs.iter().map(|f| standardize(f, &norm)).collect(),
        targets: data
            .targets
            .iter()
            .map(|f| {
                if tcfg.normalize_targets {
                    standardize(f, &norm)
                } else {
                    f.data().to_vec()
                }
            })
            .collect(),
        shape,
    };

    let mut params = UNetParams::<f32>::init(ucfg, &root.stream(1));
    let mut adam = AdamState::new(params.len());
    let mut history = TrainHistory {
        initial_val_loss: val_loss(&prepared, &val_idx, &params, ucfg, tcfg.batch_size)?,
        train_loss: Vec::with_capacity(tcfg.epochs),
        val_loss: Vec::with_capacity(tcfg.epochs),
    };
    let mut order = train_idx.clone();
    for epoch in 0..tcfg.epochs {
        order.copy_from_slice(&train_idx);
        root.stream(2 + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let (x, t) = prepared.batch(chunk)?;
            let (loss, grad) = backward(&x, &t, &params, ucfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite);
            }
            adam_step(&mut params.data, &grad, &mut adam, &tcfg.adam)?;
            loss_sum += loss;
            batches += 1;
        }
        let tl = loss_sum / batches as f64;
        let vl = val_loss(&prepared, &val_idx, &params, ucfg, tcfg.batch_size)?;
        history.train_loss.push(tl);
        history.val_loss.push(vl);
        observe(epoch, tl, vl);
    }
    let model = Model::new(*ucfg, norm, tcfg.normalize_targets, params)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(seed: u64) -> ScalarField {
        let mut r = Rng::new(seed);
        ScalarField::from_fn(&[8, 8], |_| r.normal() as f32).unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let mut d = PairDataset::new();
        for i in 0..1000 {
            let f = ScalarField::filled(&[4, 4], i as f32).unwrap();
            d.push(f.clone(), f).unwrap();
        }
        let (t, v) = d.split(0.1, &Rng::new(3)).unwrap();
        assert_eq!((t.len(), v.len()), (900, 100));
        assert!(t.iter().all(|i| !v.contains(i)));
        let mut small = PairDataset::new();
        for i in 0..15 {
            small.push(field(i), field(i + 100)).unwrap();
        }
        let (t, v) = small.split(0.1, &Rng::new(4)).unwrap();
        assert_eq!((t.len(), v.len()), (13, 2));
    }

    #[test]
    fn both_orderings_stay_together() {
        let mut d = PairDataset::new();
        for i in 0..20 {
            d.push_both(field(i), field(i + 50)).unwrap();
        }
        assert_eq!((d.len(), d.n_groups()), (40, 20));
        let (_, v) = d.split(0.1, &Rng::new(5)).unwrap();
        assert_eq!(v.len(), 4);
        for &i in &v {
            assert!(v.contains(&(i ^ 1)));
        }
    }

    #[test]
    fn rejects_bad_datasets() {
        let cfg = UNetConfig::new_2d(2);
        assert!(train(&PairDataset::new(), &cfg, &TrainConfig::default()).is_err());
        let mut d = PairDataset::new();
        d.push(field(1), field(2)).unwrap();
        assert!(d.push(field(1), ScalarField::zeros(&[4, 4]).unwrap()).is_err());
        assert!(d.split(0.0, &Rng::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let mut d = PairDataset::new();
        for i in 0..12 {
            d.push(field(i), field(i + 20)).unwrap();
        }
        let cfg = UNetConfig::new_2d(2);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&d, &cfg, &tc).unwrap();
        let (b, hb) = train(&d, &cfg, &tc).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.train_loss.len(), 2);
        let (c, _) = train(&d, &cfg, &TrainConfig { seed: 12, ..tc }).unwrap();
        assert_ne!(a.params, c.params);
    }
}
