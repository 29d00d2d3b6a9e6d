//! Residual Clifford convolutional networks shared by both model families.
//!
//! Layer chain: `in_steps -> C` with ReLU, then `blocks - 2` residual blocks
//! `x + relu(conv(x))` at `C` channels, then a linear `C -> out_steps` conv.
//! The only differences between the GA and STA variants are the algebra and
//! the channel count.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraKind, Blade};
use crate::error::{Error, Result};
use crate::mvtensor::{conv_forward, ga_relu, residual_add, MvTensor, Padding, ParamId, ParamStore, Real, Tape, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STAPDECK";

fn default_blocks() -> usize {
    20
}
fn default_kernel() -> usize {
    3
}
fn default_in_steps() -> usize {
    2
}
fn default_out_steps() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub algebra: AlgebraKind,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    pub channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_in_steps")]
    pub in_steps: usize,
    #[serde(default = "default_out_steps")]
    pub out_steps: usize,
}

impl ModelConfig {
    /// Default channel count per algebra: 32 and 24 in 2D, 11 and 8 in 3D.
    pub fn default_channels(algebra: AlgebraKind) -> usize {
        match algebra {
            AlgebraKind::Ga2 => 32,
            AlgebraKind::Sta2 => 24,
            AlgebraKind::Ga3 => 11,
            AlgebraKind::Sta3 => 8,
        }
    }

    pub fn new(algebra: AlgebraKind, channels: usize) -> Self {
        Self {
            algebra,
            blocks: default_blocks(),
            channels,
            kernel: default_kernel(),
            in_steps: default_in_steps(),
            out_steps: default_out_steps(),
        }
    }

    pub fn paper_default(algebra: AlgebraKind) -> Self {
        Self::new(algebra, Self::default_channels(algebra))
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 2 {
            return Err(Error::config("a model needs at least 2 blocks"));
        }
        if self.channels < 1 {
            return Err(Error::config("channel count must be at least 1"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel size must be odd"));
        }
        if self.in_steps != 2 || self.out_steps != 1 {
            return Err(Error::config("models take 2 input steps and predict 1"));
        }
        Ok(())
    }

    /// `(Cin, Cout)` of every conv layer.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        let c = self.channels;
        let mut v = vec![(self.in_steps, c)];
        v.extend(std::iter::repeat_n((c, c), self.blocks - 2));
        v.push((c, self.out_steps));
        v
    }

    /// `Σ (Cout Cin k^d 2^n + Cout 2^n)` over the conv layers.
    pub fn param_count(&self) -> usize {
        let nb = 1usize << self.algebra.signature().dim();
        let taps = self.kernel.pow(self.algebra.spatial_dim() as u32);
        self.layer_channels()
            .iter()
            .map(|&(cin, cout)| cout * cin * taps * nb + cout * nb)
            .sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layers: Vec<(ParamId, ParamId)>,
}

impl<T: Real> Model<T> {
    /// Weights uniform in `±sqrt(1 / (Cin k^d 2^n))` per blade, biases zero.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let alg = config.algebra.algebra();
        let kernel = vec![config.kernel; config.algebra.spatial_dim()];
        let taps: usize = kernel.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layers = config
            .layer_channels()
            .into_iter()
            .enumerate()
            .map(|(i, (cin, cout))| {
                let scale = (1.0 / (cin * taps * alg.num_blades()) as f64).sqrt();
                let w = MvTensor::random_uniform(&alg, cout, cin, &kernel, scale, &mut rng);
                let b = MvTensor::zeros(&alg, cout, 1, &[]);
                (params.register(format!("layer{i}.weight"), w), params.register(format!("layer{i}.bias"), b))
            })
            .collect();
        Ok(Self {
            config: *config,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Blades carrying field components, which the loss compares.
    pub fn loss_mask(&self) -> Vec<Blade> {
        crate::dataset::Embedding::new(self.config.algebra).mask()
    }

    fn check_input(&self, x: &MvTensor<T>) -> Result<()> {
        if x.algebra().signature() != &self.config.algebra.signature() {
            return Err(Error::usage(format!("input algebra is not {}", self.config.algebra)));
        }
        if x.channels() != self.config.in_steps || x.spatial().len() != self.config.algebra.spatial_dim() {
            return Err(Error::usage(format!(
                "model expects {} input channels on a {}D grid",
                self.config.in_steps,
                self.config.algebra.spatial_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &MvTensor<T>) -> Result<MvTensor<T>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = conv_forward(&h, self.params.get(w), self.params.get(b), Padding::Same)?;
            h = match i {
                0 => ga_relu(&z),
                i if i == last => z,
                _ => residual_add(&h, &ga_relu(&z))?,
            };
        }
        Ok(h)
    }

    /// Records the forward pass on `tape` and returns the output variable.
    pub fn forward_tape(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.check_input(tape.value(x)?)?;
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(&self.params, w);
            let bv = tape.param(&self.params, b);
            let z = tape.conv(h, wv, bv, Padding::Same)?;
            h = match i {
                0 => tape.relu(z)?,
                i if i == last => z,
                _ => {
                    let r = tape.relu(z)?;
                    tape.add(h, r)?
                }
            };
        }
        Ok(h)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Checkpoint: magic, `u32` config length, config TOML, `u64` scalar
    /// count, then every parameter as little-endian f32 in registration order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = self.config.to_toml()?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg.as_bytes())?;
        w.write_all(&(self.param_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.param_count() * 4);
        for p in self.params.iter() {
            for &v in p.value.data() {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let eof = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format("truncated checkpoint"),
            _ => Error::Io(e),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("bad magic, not a model checkpoint"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(eof)?;
        let mut cfg = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut cfg).map_err(eof)?;
        let cfg = String::from_utf8(cfg).map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
        let config = ModelConfig::from_toml(&cfg)?;
        let mut model = Self::build(&config, 0)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(eof)?;
        let count = u64::from_le_bytes(count) as usize;
        if count != model.param_count() {
            return Err(Error::format(format!(
                "checkpoint holds {count} parameters, config needs {}",
                model.param_count()
            )));
        }
        let mut raw = vec![0u8; count * 4];
        r.read_exact(&mut raw).map_err(eof)?;
        let mut values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            for v in model.params.get_mut(id).data_mut() {
                *v = T::from_f64(f64::from(values.next().expect("count checked")));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::usage(format!("checkpoint {} not found", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn single_layer_formula() {
        // one 3x3 conv Cin=Cout=1 in G(2,0,0)
        let nb = 4;
        assert_eq!(9 * nb + nb, 40);
        let cfg = ModelConfig::new(AlgebraKind::Ga2, 1).with_blocks(2);
        // first layer 2 -> 1 plus last layer 1 -> 1
        assert_eq!(cfg.param_count(), (2 * 9 * 4 + 4) + 40);
    }

    #[test]
    fn default_counts() {
        assert_eq!(ModelConfig::paper_default(AlgebraKind::Ga2).param_count(), 669_444);
        assert_eq!(ModelConfig::paper_default(AlgebraKind::Sta2).param_count(), 755_336);
        assert_eq!(ModelConfig::paper_default(AlgebraKind::Ga3).param_count(), 479_256);
        assert_eq!(ModelConfig::paper_default(AlgebraKind::Sta3).param_count(), 510_480);
        for kind in AlgebraKind::ALL {
            let cfg = ModelConfig::paper_default(kind).with_blocks(3);
            let m = Model::<f32>::build(&cfg, 1).unwrap();
            assert_eq!(m.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn paper_defaults_are_parameter_matched() {
        for (ga, sta) in [(AlgebraKind::Ga2, AlgebraKind::Sta2), (AlgebraKind::Ga3, AlgebraKind::Sta3)] {
            let a = ModelConfig::paper_default(ga).param_count() as f64;
            let b = ModelConfig::paper_default(sta).param_count() as f64;
            assert!((a - b).abs() / a.max(b) < 0.15, "{ga} {a} vs {sta} {b}");
        }
    }

    #[test]
    fn count_grows_with_channels() {
        let counts: Vec<usize> = (15..=40)
            .map(|c| ModelConfig::new(AlgebraKind::Sta2, c).param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]));
        let middle = |c| ModelConfig::new(AlgebraKind::Ga2, c).with_blocks(3).layer_channels()[1];
        assert_eq!(middle(16), (16, 16));
        let (c16, c32) = (
            ModelConfig::new(AlgebraKind::Ga2, 16).param_count() as f64,
            ModelConfig::new(AlgebraKind::Ga2, 32).param_count() as f64,
        );
        assert!((c32 / c16 - 4.0).abs() < 0.1);
    }

    #[test]
    fn same_topology_for_both_families() {
        let ga = ModelConfig::paper_default(AlgebraKind::Ga2);
        let sta = ModelConfig::paper_default(AlgebraKind::Sta2);
        assert_eq!(ga.layer_channels().len(), sta.layer_channels().len());
        let a = Model::<f32>::build(&ga, 0).unwrap();
        let b = Model::<f32>::build(&sta, 0).unwrap();
        assert_eq!(a.num_layers(), b.num_layers());
    }

    #[test]
    fn invalid_configs() {
        assert!(Model::<f32>::build(&ModelConfig::new(AlgebraKind::Ga2, 4).with_blocks(1), 0).is_err());
        assert!(Model::<f32>::build(&ModelConfig::new(AlgebraKind::Ga2, 0), 0).is_err());
        let mut even = ModelConfig::new(AlgebraKind::Ga2, 2);
        even.kernel = 4;
        assert!(even.validate().is_err());
    }

    #[test]
    fn forward_shapes_and_zero_model() {
        let cfg = ModelConfig::new(AlgebraKind::Sta2, 1).with_blocks(2);
        let mut m = Model::<f64>::build(&cfg, 3).unwrap();
        let alg = AlgebraKind::Sta2.algebra();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = MvTensor::random_uniform(&alg, 3, 2, &[5, 6], 1.0, &mut rng);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), vec![3, 1, 5, 6, 8]);
        assert_eq!(m.forward(&x).unwrap(), y);
        let ids: Vec<_> = m.params().ids().collect();
        for id in ids {
            m.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
        let wrong = MvTensor::<f64>::zeros(&AlgebraKind::Ga2.algebra(), 1, 2, &[5, 6]);
        assert!(matches!(m.forward(&wrong), Err(Error::Usage(_))));
        let wrong_ch = MvTensor::<f64>::zeros(&alg, 1, 3, &[5, 6]);
        assert!(m.forward(&wrong_ch).is_err());
    }

    #[test]
    fn seeded_builds_match() {
        let cfg = ModelConfig::new(AlgebraKind::Ga3, 2).with_blocks(3);
        let a = Model::<f32>::build(&cfg, 11).unwrap();
        let b = Model::<f32>::build(&cfg, 11).unwrap();
        let c = Model::<f32>::build(&cfg, 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        // init bound and zero biases
        let bound = (1.0f64 / (2 * 27 * 8) as f64).sqrt() as f32;
        let w0 = a.params().get(ParamId(0));
        assert!(w0.data().iter().all(|v| v.abs() <= bound));
        assert!(a.params().get(ParamId(1)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_forward_matches_direct() {
        let cfg = ModelConfig::new(AlgebraKind::Ga2, 3).with_blocks(4);
        let m = Model::<f32>::build(&cfg, 5).unwrap();
        let alg = AlgebraKind::Ga2.algebra();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = MvTensor::random_uniform(&alg, 2, 2, &[6, 6], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = m.forward_tape(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).unwrap(), &m.forward(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig::new(AlgebraKind::Sta3, 2).with_blocks(3);
        let m = Model::<f32>::build(&cfg, 9).unwrap();
        let mut bytes = Vec::new();
        m.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = Model::<f32>::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        assert!(Model::<f32>::read_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'x';
        assert!(matches!(Model::<f32>::read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
    }
}
