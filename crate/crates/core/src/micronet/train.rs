use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::graph::{Gradients, ParamStore};
use super::loss::focal_loss;
use super::net::{MicroNet, MicroNetConfig};
use super::optim::{adam_step, AdamConfig, AdamState, CyclicLr};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume3D};

/// ChaCha stream used for shuffling and augmentation during training.
pub const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_length: u64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            focal_alpha: 0.75,
            focal_gamma: 2.0,
            lr_min: 1e-6,
            lr_max: 2.5e-4,
            cycle_length: 100,
            lr_decay: 0.9,
            batch_size: 2,
            epochs: 20,
            seed: 7,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Batch size used for full-resolution runs; everything else is shared.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 4,
            ..Default::default()
        }
    }

    pub fn schedule(&self) -> CyclicLr {
        CyclicLr {
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            cycle_length: self.cycle_length,
            decay: self.lr_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_alpha must lie in [0, 1] and focal_gamma be >= 0".into()));
        }
        Ok(())
    }
}

/// One network input (image channels, optionally fused with a prior) and
/// its voxel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Volume3D,
    pub target: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Position of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub net: MicroNet,
    pub history: Vec<LossRecord>,
    pub iterations: u64,
    pub rng: RngState,
}

/// Focal loss of one forward pass and the resulting parameter gradients.
pub fn loss_and_gradients(
    net: &mut MicroNet,
    input: &Tensor,
    target: &Tensor,
    alpha: f64,
    gamma: f64,
) -> Result<(f64, Gradients)> {
    let pred = net.forward_train(input)?;
    let fl = focal_loss(&pred, target, alpha, gamma)?;
    let grads = net.backward(&fl.grad)?;
    Ok((fl.loss, grads))
}

fn batch_tensors(items: &[(Volume3D, BinaryMask)]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<&Volume3D> = items.iter().map(|(v, _)| v).collect();
    let targets: Vec<&BinaryMask> = items.iter().map(|(_, m)| m).collect();
    Ok((Tensor::from_volumes(&inputs)?, Tensor::from_masks(&targets)?))
}

/// Minibatch Adam on focal loss with a cyclic learning rate and random
/// augmentation. Single-threaded and fully determined by `cfg.seed`.
pub fn train(mut net: MicroNet, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut adam = AdamState::new(net.params());
    let mut history = Vec::new();
    let mut iteration = 0u64;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                items.push(augment(&samples[i].input, &samples[i].target, &cfg.augment, &mut rng)?);
            }
            let (x, y) = batch_tensors(&items)?;
            let (loss, grads) = loss_and_gradients(&mut net, &x, &y, cfg.focal_alpha, cfg.focal_gamma)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Training { iteration, loss });
            }
            let lr = schedule.at(iteration);
            adam_step(net.params_mut(), &grads, &mut adam, &cfg.adam, lr)?;
            history.push(LossRecord { iteration, lr, loss });
            iteration += 1;
        }
    }
    Ok(TrainRun {
        net,
        history,
        iterations: iteration,
        rng: RngState::capture(cfg.seed, &rng),
    })
}

/// Mean of the plain prediction and the un-flipped prediction of the
/// left/right mirrored input.
pub fn predict_tta(net: &MicroNet, input: &Tensor) -> Result<Tensor> {
    let a = net.forward(input)?;
    let b = net.forward(&input.flip_x())?.flip_x();
    let data = a.data().iter().zip(b.data()).map(|(p, q)| 0.5 * (p + q)).collect();
    Tensor::new(a.shape(), data)
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const CHECKPOINT_FORMAT: &str = "micronet-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON half of a checkpoint; the parameters themselves are little-endian
/// f64 in a sibling `.bin` file, in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub network: MicroNetConfig,
    pub training: Option<TrainConfig>,
    pub iteration: u64,
    pub rng: Option<RngState>,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_net(net: &MicroNet, training: Option<TrainConfig>, iteration: u64, rng: Option<RngState>) -> Self {
        let params = net.params().clone();
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                network: *net.config(),
                training,
                iteration,
                rng,
                params: params
                    .iter()
                    .map(|p| ParamEntry {
                        name: p.name.clone(),
                        shape: p.shape.clone(),
                    })
                    .collect(),
            },
            params,
        }
    }

    pub fn from_run(run: &TrainRun, cfg: &TrainConfig) -> Self {
        Self::from_net(&run.net, Some(*cfg), run.iterations, Some(run.rng))
    }

    pub fn blob_path(header_path: &Path) -> PathBuf {
        header_path.with_extension("bin")
    }

    /// Writes `path` (JSON header) and its `.bin` sibling.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.header)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        let mut blob = Vec::with_capacity(self.params.scalar_count() * 8);
        for p in self.params.iter() {
            for v in &p.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = Self::blob_path(path);
        fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_str(&text)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::UnsupportedFormat(format!("checkpoint format {:?}", header.format)));
        }
        let bin = Self::blob_path(path);
        let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if blob.len() != total * 8 {
            return Err(Error::Parse {
                offset: blob.len().min(total * 8),
                message: format!("parameter blob holds {} bytes, header needs {}", blob.len(), total * 8),
            });
        }
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut params = ParamStore::new();
        for e in &header.params {
            let n = e.shape.iter().product();
            params.push(e.name.clone(), e.shape.clone(), values.by_ref().take(n).collect());
        }
        Ok(Checkpoint { header, params })
    }

    pub fn into_net(self) -> Result<MicroNet> {
        MicroNet::with_params(self.header.network, self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn sample(seed: u64) -> TrainSample {
        let g = Grid::with_spacing([8, 8, 4], [0.5, 0.5, 3.6]).unwrap();
        let target = BinaryMask::from_fn(g, |x, y, _| (3..5).contains(&x) && (3..6).contains(&y)).unwrap();
        let input = Volume3D::from_fn(g, |x, y, z| {
            let base = if target.at(x, y, z) { 1.0 } else { 0.0 };
            base + 0.01 * ((x * 7 + y * 3 + z + seed as usize) % 5) as f64
        })
        .unwrap();
        TrainSample { input, target }
    }

    fn small() -> MicroNetConfig {
        MicroNetConfig {
            in_channels: 1,
            depth: 1,
            base_width: 2,
            ..Default::default()
        }
    }

    #[test]
    fn seeded_training_repeats() {
        let samples = [sample(0), sample(1), sample(2)];
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let a = train(MicroNet::new(small(), 1).unwrap(), &samples, &cfg).unwrap();
        let b = train(MicroNet::new(small(), 1).unwrap(), &samples, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.iterations, 4);
        assert!(a.history.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let run = train(MicroNet::new(small(), 3).unwrap(), &[sample(0)], &cfg).unwrap();
        let ck = Checkpoint::from_run(&run, &cfg);
        let path = dir.path().join("model.json");
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.header.rng.unwrap().restore(), {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            r.set_stream(TRAIN_STREAM);
            r.set_word_pos(run.rng.word_pos);
            r
        });
        let net = back.into_net().unwrap();
        assert_eq!(net.params(), run.net.params());
        assert!(matches!(Checkpoint::read(&dir.path().join("nope.json")), Err(Error::MissingPath(_))));
    }

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = vec![
            LossRecord { iteration: 0, lr: 1e-6, loss: 0.25 },
            LossRecord { iteration: 1, lr: 3.5e-6, loss: 0.125 },
        ];
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &h).unwrap();
        assert_eq!(read_loss_csv(&p).unwrap(), h);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("iteration,lr,loss\n"));
    }

    #[test]
    fn tta_is_the_two_pass_average() {
        let mut net = MicroNet::new(small(), 4).unwrap();
        for p in net.params_mut().iter_mut() {
            for (i, v) in p.data.iter_mut().enumerate() {
                *v += 0.05 * ((i % 7) as f64 - 3.0);
            }
        }
        let x = Tensor::from_volumes(&[&sample(5).input]).unwrap();
        let tta = predict_tta(&net, &x).unwrap();
        let plain = net.forward(&x).unwrap();
        let mirrored = net.forward(&x.flip_x()).unwrap().flip_x();
        for i in 0..tta.len() {
            let expect = (plain.data()[i] + mirrored.data()[i]) / 2.0;
            assert!((tta.data()[i] - expect).abs() < 1e-12);
        }
    }
}
