//! The training loop.

use std::path::{Path, PathBuf};

use image::RgbImage;
use nuclick_core::signals::{self, GuidingSignal};
use nuclick_core::synth::{self, AugmentConfig, ObjectKind};
use nuclick_core::{morph, LabelMap};
use nuclick_net::optim::{Adam, AdamConfig};
use nuclick_net::{batch_loss, checkpoint, weight_map, LossOptions, Mode, Network, NetworkConfig, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, Result};
use crate::input::{mask_tensor, network_input};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_data: PathBuf,
    /// Only used to assert that training and validation never share files.
    pub val_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    /// Also write `<checkpoint>.epochNNN` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    /// Training patches drawn from each image per epoch.
    pub patches_per_image: usize,
    pub dice_factor_two: bool,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_data: PathBuf::from("data/train"),
            val_data: None,
            checkpoint: None,
            loss_log: None,
            checkpoint_every: 0,
            epochs: 40,
            batch_size: 16,
            lr: 3e-3,
            weight_decay: 5e-5,
            seed: 0,
            augment: true,
            patches_per_image: 1,
            dice_factor_two: false,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patches_per_image == 0 {
            return Err(config_err("epochs, batch_size and patches_per_image must be positive"));
        }
        if !(self.lr > 0.0 && self.weight_decay > 0.0) {
            return Err(config_err("lr and weight_decay must be positive"));
        }
        self.network.validate()?;
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.lr));
    }
    out
}

/// One prepared training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub weights: Tensor<f32>,
    pub signal: GuidingSignal,
}

/// Picks a target instance uniformly, centres a window of `patch` pixels on
/// its centroid and synthesizes a fresh training guide for it. `None` for
/// images without objects.
pub fn training_sample<R: Rng + ?Sized>(
    image: &RgbImage,
    labels: &LabelMap,
    network: &NetworkConfig,
    rng: &mut R,
) -> Result<Option<Sample>> {
    let ids = labels.labels();
    if ids.is_empty() {
        return Ok(None);
    }
    let id = ids[rng.random_range(0..ids.len())];
    let size = (image.width() as usize, image.height() as usize);
    let window = signals::patch_for_click(size, morph::centroid(labels, id)?, network.patch_size);
    let crop = window.extract_labels(labels);
    let signal = match network.kind {
        ObjectKind::Gland => signals::train_signal_gland(&crop, id, rng)?,
        ObjectKind::Nucleus | ObjectKind::Cell => signals::train_signal_nucleus(&crop, id, rng)?,
    };
    let g = crop.instance(id);
    let others = crop.foreground().and_not(&g);
    let w = weight_map(&g, &others)?;
    let weights = Tensor::from_vec([1, 1, w.height(), w.width()], w.data().iter().map(|&v| v as f32).collect())?;
    Ok(Some(Sample {
        input: network_input(&window.extract_rgb(image), &signal, network.use_exclusion)?,
        target: mask_tensor(&g),
        weights,
        signal,
    }))
}

/// A training run in progress: network, optimizer and the rng stream.
pub struct Trainer {
    pub config: TrainConfig,
    pub net: Network<f32>,
    opt: Adam<f32>,
    rng: ChaCha8Rng,
    trainable: Vec<bool>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Network::build(config.network.clone(), &mut rng)?;
        let trainable = net.specs().iter().map(|s| s.trainable).collect();
        Ok(Self {
            opt: Adam::new(config.adam()),
            config,
            net,
            rng,
            trainable,
        })
    }

    /// One optimizer step on a prepared batch; returns the batch loss.
    pub fn step(&mut self, samples: &[Sample]) -> Result<f64> {
        let stack = |f: fn(&Sample) -> &Tensor<f32>| Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>());
        let (x, g, w) = (stack(|s| &s.input)?, stack(|s| &s.target)?, stack(|s| &s.weights)?);
        let fwd = self.net.forward(x, Mode::Train, false)?;
        let opts = LossOptions {
            dice_factor_two: self.config.dice_factor_two,
        };
        let (loss, dp) = batch_loss(fwd.tape.value(fwd.output), &g, &w, opts)?;
        let grads = fwd.tape.backward(fwd.output, dp)?;
        let param_grads = fwd.tape.param_grads(&grads);
        drop(grads);
        let mut params: Vec<&mut Tensor<f32>> = self
            .net
            .tensors_mut()
            .iter_mut()
            .zip(&self.trainable)
            .filter_map(|(t, &tr)| tr.then_some(t))
            .collect();
        let grad_refs: Vec<&Tensor<f32>> = param_grads.iter().map(|(_, g)| g).collect();
        self.opt.step(&mut params, &grad_refs)?;
        self.net.update_running_stats(&fwd.stats);
        Ok(loss)
    }

    /// One pass over `data`; every image contributes `patches_per_image`
    /// patches in shuffled order. Returns the mean batch loss.
    pub fn epoch(&mut self, data: &[(RgbImage, LabelMap)]) -> Result<f64> {
        let augment = if self.config.augment {
            AugmentConfig::default()
        } else {
            AugmentConfig::none()
        };
        let mut order: Vec<usize> = (0..data.len())
            .flat_map(|i| std::iter::repeat_n(i, self.config.patches_per_image))
            .collect();
        order.shuffle(&mut self.rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let mut samples = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, labels) = synth::augment(&data[i].0, &data[i].1, &mut self.rng, &augment);
                if let Some(s) = training_sample(&img, &labels, &self.config.network, &mut self.rng)? {
                    samples.push(s);
                }
            }
            if samples.is_empty() {
                continue;
            }
            total += self.step(&samples)?;
            batches += 1;
        }
        if batches == 0 {
            return Err(config_err("training data contains no objects"));
        }
        Ok(total / batches as f64)
    }
}

pub struct TrainOutcome {
    pub net: Network<f32>,
    pub log: Vec<EpochLog>,
}

/// Trains on in-memory data. `on_epoch` sees the network after each epoch.
pub fn train_on(
    data: &[(RgbImage, LabelMap)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Network<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mean_loss = trainer.epoch(data)?;
        let entry = EpochLog {
            epoch,
            mean_loss,
            lr: config.lr,
        };
        on_epoch(&entry, &trainer.net)?;
        log.push(entry);
    }
    Ok(TrainOutcome { net: trainer.net, log })
}

/// Fails when one dataset directory lies inside the other.
pub fn check_separation(train: &Path, val: &Path) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).map_err(io_err(p));
    let (t, v) = (canon(train)?, canon(val)?);
    if t.starts_with(&v) || v.starts_with(&t) {
        return Err(config_err(format!("training data {} overlaps validation data {}", t.display(), v.display())));
    }
    Ok(())
}

pub fn epoch_checkpoint_path(base: &Path, epoch: usize) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(format!(".epoch{epoch:03}"));
    PathBuf::from(s)
}

/// Trains from the dataset at `config.train_data`, writing the checkpoint
/// and CSV loss log named in the config.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(val) = &config.val_data {
        check_separation(&config.train_data, val)?;
    }
    let data = synth::read_dataset(&config.train_data)?;
    let outcome = train_on(&data, config, |entry, net| {
        if let (Some(path), k) = (&config.checkpoint, config.checkpoint_every) {
            if k > 0 && entry.epoch % k == 0 {
                checkpoint::save(net, epoch_checkpoint_path(path, entry.epoch))?;
            }
        }
        Ok(())
    })?;
    if let Some(path) = &config.checkpoint {
        checkpoint::save(&outcome.net, path)?;
    }
    if let Some(path) = &config.loss_log {
        std::fs::write(path, loss_csv(&outcome.log)).map_err(io_err(path))?;
    }
    Ok(outcome)
}
