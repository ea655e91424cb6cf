//! Declarative network and experiment configuration.
//!
//! A [`NetworkConfig`] is read from JSON with snake_case keys. Everything
//! except `preset` has a default, so `{"preset": "simple_cnn"}` is a complete
//! config.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv2dLayer, DenseLayer, DropoutLayer, Layer, LrnLayer, MaxPoolLayer, ReluLayer, ReshapeLayer};
use crate::model::Model;
use crate::nsfold::{NsLayer, NsMode};
use crate::optim::OptimizerConfig;
use crate::rng::Rng;
use crate::tensor::ConvMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    SimpleMlp,
    SimpleCnn,
    #[serde(rename = "lenet5")]
    LeNet5,
    Vgg11,
    Vgg16,
    Vgg19,
    Custom(Vec<LayerSpec>),
}

/// One entry of a custom layer list. `ns` marks where the NS layer goes when
/// NS is enabled and is skipped otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_mode")]
        mode: ConvMode,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    MaxPool,
    Lrn,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Ns,
    Dropout {
        keep_rate: f64,
    },
    Dense {
        units: usize,
    },
}

fn default_mode() -> ConvMode {
    ConvMode::Same
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsConfig {
    pub enabled: bool,
    /// Fold count N.
    pub n: usize,
    pub mode: NsMode,
    /// Initial value of every coefficient; the preset default when absent.
    pub beta_init: Option<f64>,
}

impl Default for NsConfig {
    fn default() -> Self {
        NsConfig {
            enabled: false,
            n: 2,
            mode: NsMode::Fixed,
            beta_init: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    None,
    L2 {
        lambda: f64,
    },
    Lrn,
    Dropout {
        keep_rate: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 10k training images, 10 epochs unless overridden.
    #[default]
    Desk,
    /// Full training set, 100 epochs unless overridden.
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    /// Test accuracy after every epoch.
    #[default]
    EveryEpoch,
    /// Test accuracy after the last epoch only.
    FinalOnly,
    /// After the listed (1-based) epochs and always after the last.
    Epochs(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Unit,
    PerChannelStandard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Directory with the raw files. Defaults to `$NSFOLD_DATA_DIR/mnist` or
    /// `$NSFOLD_DATA_DIR/cifar-10-batches-bin`.
    pub dir: Option<PathBuf>,
    /// Images held out of training (deterministic by seed); 0 disables.
    pub validation: usize,
    /// Unit for MNIST, per-channel standardization for CIFAR-10 when absent.
    pub normalization: Option<Normalization>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DatasetKind::Mnist,
            dir: None,
            validation: 0,
            normalization: None,
        }
    }
}

impl DataConfig {
    pub fn input_shape(&self) -> Vec<usize> {
        match self.kind {
            DatasetKind::Mnist => vec![1, 28, 28],
            DatasetKind::Cifar10 => vec![3, 32, 32],
        }
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization.unwrap_or(match self.kind {
            DatasetKind::Mnist => Normalization::Unit,
            DatasetKind::Cifar10 => Normalization::PerChannelStandard,
        })
    }

    /// Directory to read from: the explicit one, else below the data root.
    pub fn resolved_dir(&self) -> PathBuf {
        if let Some(dir) = &self.dir {
            return dir.clone();
        }
        let sub = match self.kind {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        };
        data_root().join(sub)
    }
}

/// `$NSFOLD_DATA_DIR`, or `./data` when unset.
pub fn data_root() -> PathBuf {
    std::env::var_os("NSFOLD_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Run name; outputs go to `runs/<name>/`.
    pub name: String,
    pub preset: Preset,
    pub ns: NsConfig,
    pub regularizer: Regularizer,
    /// SGD (lr 0.01) for SimpleMLP, Adam (lr 1e-3) otherwise, when absent.
    pub optimizer: Option<OptimizerConfig>,
    pub batch_size: usize,
    /// Overrides the profile's epoch count.
    pub epochs: Option<usize>,
    /// Overrides the profile's training subset size.
    pub train_subset: Option<usize>,
    pub profile: Profile,
    pub seed: u64,
    pub repeats: usize,
    pub data: DataConfig,
    pub eval_policy: EvalPolicy,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            name: "run".into(),
            preset: Preset::SimpleCnn,
            ns: NsConfig::default(),
            regularizer: Regularizer::None,
            optimizer: None,
            batch_size: 100,
            epochs: None,
            train_subset: None,
            profile: Profile::Desk,
            seed: 0,
            repeats: 5,
            data: DataConfig::default(),
            eval_policy: EvalPolicy::EveryEpoch,
        }
    }
}

const VGG11: &[usize] = &[64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0];
const VGG16: &[usize] = &[64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
const VGG19: &[usize] = &[
    64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
];

impl NetworkConfig {
    pub fn preset(preset: Preset) -> Self {
        let data = DataConfig {
            kind: match preset {
                Preset::Vgg11 | Preset::Vgg16 | Preset::Vgg19 => DatasetKind::Cifar10,
                _ => DatasetKind::Mnist,
            },
            ..DataConfig::default()
        };
        NetworkConfig {
            preset,
            data,
            ..NetworkConfig::default()
        }
    }

    /// Same config with NS switched on.
    pub fn with_ns(mut self, n: usize, mode: NsMode, beta_init: Option<f64>) -> Self {
        self.ns = NsConfig {
            enabled: true,
            n,
            mode,
            beta_init,
        };
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: NetworkConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.profile {
            Profile::Desk => 10,
            Profile::Full => 100,
        })
    }

    pub fn train_subset(&self) -> Option<usize> {
        match self.profile {
            Profile::Desk => Some(self.train_subset.unwrap_or(10_000)),
            Profile::Full => self.train_subset,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or(match self.preset {
            Preset::SimpleMlp => OptimizerConfig::sgd(0.01),
            _ => OptimizerConfig::adam(1e-3),
        })
    }

    /// Initial NS coefficient: the configured one, else the preset default.
    pub fn beta_init(&self) -> f64 {
        self.ns.beta_init.unwrap_or(match self.preset {
            Preset::SimpleMlp => 1.0,
            Preset::SimpleCnn => 0.25,
            Preset::LeNet5 if self.ns.n >= 4 => 0.10,
            Preset::LeNet5 => 0.25,
            Preset::Vgg11 | Preset::Vgg16 | Preset::Vgg19 => 0.02,
            Preset::Custom(_) => 1.0 / self.ns.n.max(1) as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.ns.enabled && self.ns.n == 0 {
            return Err(Error::Config("ns.n must be >= 1".into()));
        }
        if !self.beta_init().is_finite() {
            return Err(Error::Config("ns.beta_init must be finite".into()));
        }
        match self.regularizer {
            Regularizer::L2 { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::Config(format!("l2 lambda must be >= 0, got {lambda}")));
            }
            Regularizer::Dropout { keep_rate } if !(keep_rate > 0.0 && keep_rate <= 1.0) => {
                return Err(Error::Config(format!("keep_rate must be in (0, 1], got {keep_rate}")));
            }
            _ => {}
        }
        self.optimizer().validate()
    }

    /// Layer list for this config, without instantiating parameters.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let lrn = self.regularizer == Regularizer::Lrn;
        let dropout = match self.regularizer {
            Regularizer::Dropout { keep_rate } => Some(keep_rate),
            _ => None,
        };
        let mut v = Vec::new();
        match &self.preset {
            Preset::SimpleMlp => {
                v.extend([Flatten, Dense { units: 784 }, Relu]);
                if lrn {
                    v.extend([Reshape { shape: vec![4, 14, 14] }, Lrn, Flatten]);
                }
                v.push(Ns);
                if let Some(keep_rate) = dropout {
                    v.push(Dropout { keep_rate });
                }
                v.push(Dense { units: 10 });
            }
            Preset::SimpleCnn => {
                v.extend([
                    Conv {
                        out_channels: 64,
                        kernel: 5,
                        mode: ConvMode::Same,
                        bias: true,
                    },
                    Relu,
                ]);
                if lrn {
                    v.push(Lrn);
                }
                v.extend([MaxPool, Ns]);
                if let Some(keep_rate) = dropout {
                    v.push(Dropout { keep_rate });
                }
                v.extend([Flatten, Dense { units: 1024 }, Relu, Dense { units: 10 }]);
            }
            Preset::LeNet5 => {
                v.push(Conv {
                    out_channels: 6,
                    kernel: 5,
                    mode: ConvMode::Same,
                    bias: true,
                });
                v.push(Relu);
                if lrn {
                    v.push(Lrn);
                }
                v.extend([
                    MaxPool,
                    Conv {
                        out_channels: 16,
                        kernel: 5,
                        mode: ConvMode::Valid,
                        bias: true,
                    },
                    Relu,
                    MaxPool,
                    Ns,
                    Dropout {
                        keep_rate: dropout.unwrap_or(0.5),
                    },
                    Flatten,
                    Dense { units: 120 },
                    Relu,
                    Dense { units: 84 },
                    Relu,
                    Dense { units: 10 },
                ]);
            }
            Preset::Vgg11 | Preset::Vgg16 | Preset::Vgg19 => {
                let plan = match self.preset {
                    Preset::Vgg11 => VGG11,
                    Preset::Vgg16 => VGG16,
                    _ => VGG19,
                };
                for (i, &c) in plan.iter().enumerate() {
                    if c == 0 {
                        v.push(MaxPool);
                    } else {
                        v.push(Conv {
                            out_channels: c,
                            kernel: 3,
                            mode: ConvMode::Same,
                            bias: true,
                        });
                        v.push(Relu);
                        if lrn && i == 0 {
                            v.push(Lrn);
                        }
                    }
                }
                let keep_rate = dropout.unwrap_or(0.5);
                v.extend([
                    Ns,
                    Flatten,
                    Dense { units: 4096 },
                    Relu,
                    Dropout { keep_rate },
                    Dense { units: 4096 },
                    Relu,
                    Dropout { keep_rate },
                    Dense { units: 10 },
                ]);
            }
            Preset::Custom(layers) => v.extend(layers.iter().cloned()),
        }
        v
    }
}

/// Instantiates the network described by `config`, drawing initial weights
/// from `rng`.
pub fn build_network(config: &NetworkConfig, rng: &mut Rng) -> Result<Model> {
    config.validate()?;
    let input = config.data.input_shape();
    build_layers(&config.layer_specs(), &config.ns, config.beta_init(), input, rng)
}

/// Builds a model from an explicit layer list.
pub fn build_layers(
    specs: &[LayerSpec],
    ns: &NsConfig,
    beta_init: f64,
    input_shape: Vec<usize>,
    rng: &mut Rng,
) -> Result<Model> {
    let mut shape = input_shape.clone();
    let mut layers = Vec::new();
    for spec in specs {
        let layer = match spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                mode,
                bias,
            } => {
                let [c, ..] = shape[..] else {
                    return Err(Error::Config(format!("conv needs c x h x w input, got {shape:?}")));
                };
                Layer::Conv(Conv2dLayer::new(c, *out_channels, (*kernel, *kernel), *mode, *bias, rng))
            }
            LayerSpec::Relu => Layer::Relu(ReluLayer::new()),
            LayerSpec::MaxPool => Layer::MaxPool(MaxPoolLayer::new()),
            LayerSpec::Lrn => Layer::Lrn(LrnLayer::default()),
            LayerSpec::Flatten => {
                if shape.len() == 1 {
                    continue;
                }
                Layer::Reshape(ReshapeLayer::flatten(shape.iter().product()))
            }
            LayerSpec::Reshape { shape: target } => Layer::Reshape(ReshapeLayer::new(target.clone())),
            LayerSpec::Ns => {
                if !ns.enabled {
                    continue;
                }
                let t = shape[0];
                if ns.n == 0 || t % ns.n != 0 {
                    return Err(Error::Config(format!(
                        "NS fold count N = {} must divide the channel count t = {t} at that point of the network",
                        ns.n
                    )));
                }
                Layer::Ns(NsLayer::uniform(t, ns.n, beta_init, ns.mode)?)
            }
            LayerSpec::Dropout { keep_rate } => Layer::Dropout(DropoutLayer::new(*keep_rate)?),
            LayerSpec::Dense { units } => Layer::Dense(DenseLayer::new(shape.iter().product(), *units, rng)),
        };
        shape = layer.output_shape(&shape)?;
        layers.push(layer);
    }
    Model::new(input_shape, layers)
}
