use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Channel counts of every network. Texture and pose inputs are fixed at
/// 3 (RGB) and 7 (position, normal, coverage).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub base_channels: usize,
    /// `C_f`, geometry encoder output.
    pub feature_channels: usize,
    /// Per-view channels of the refinement decoder output.
    pub decoder_channels: usize,
    pub texture_channels: usize,
    pub pose_channels: usize,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 16,
            feature_channels: 16,
            decoder_channels: 16,
            texture_channels: 8,
            pose_channels: 8,
            head_hidden: 32,
            seed: 0,
        }
    }
}

pub const TEXTURE_INPUT: usize = 3;
pub const POSE_INPUT: usize = 7;
pub const GEOMETRY_INPUT: usize = 4;
/// offset 3, raw scale 3, rotation 4, raw opacity 1, color 3
pub const TEMPLATE_OUTPUT: usize = 14;
/// Δμ 3, Δraw_scale 3, Δr 4, Δα 1, densify score 1
pub const HEAD_OUTPUT: usize = 12;
pub const VIEWS: usize = 4;

pub const NETWORKS: [&str; 6] = [
    "uv_encoder",
    "pose_encoder",
    "template_unet",
    "geo_encoder",
    "refine_unet",
    "refine_heads",
];

/// Networks on the forward (canonicalizing, template) side.
const FORWARD_NETS: [&str; 3] = ["uv_encoder", "pose_encoder", "template_unet"];

const CORE_LAYERS: [&str; 9] = ["enc0", "down1", "enc1", "down2", "mid", "up2", "dec1", "up1", "dec0"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShareMode {
    /// Backward-side core U-Net tensors alias the forward ones.
    Shared,
    /// Backward tensors are copies; only backward-side networks train.
    FinetuneBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Kaiming { fan_in: usize },
    Zero,
}

/// Named parameter store. Several names may resolve to one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetConfig,
    pub version: u32,
    pub mode: ShareMode,
    tensors: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    names: BTreeMap<String, usize>,
    /// `(forward name, backward name)` pairs.
    share_map: Vec<(String, String)>,
}

pub const PARAMS_VERSION: u32 = 1;

struct Builder<T> {
    specs: Vec<(String, Vec<usize>, Init)>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real> Builder<T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let init = if zero {
            Init::Zero
        } else {
            Init::Kaiming { fan_in: cin * k * k }
        };
        self.specs.push((format!("{name}.w"), vec![cout, cin, k, k], init));
        self.specs.push((format!("{name}.b"), vec![cout], Init::Zero));
    }

    fn convt(&mut self, name: &str, cin: usize, cout: usize) {
        self.specs.push((
            format!("{name}.w"),
            vec![cin, cout, 2, 2],
            Init::Kaiming { fan_in: cin },
        ));
        self.specs.push((format!("{name}.b"), vec![cout], Init::Zero));
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize, zero: bool) {
        let init = if zero {
            Init::Zero
        } else {
            Init::Kaiming { fan_in: cin }
        };
        self.specs.push((format!("{name}.w"), vec![cout, cin], init));
        self.specs.push((format!("{name}.b"), vec![cout], Init::Zero));
    }

    fn unet(&mut self, net: &str, cin: usize, cout: usize, b: usize, zero_out: bool) {
        self.conv(&format!("{net}.in"), cin, b, 3, false);
        let core = |l: &str| format!("{net}.core.{l}");
        self.conv(&core("enc0"), b, b, 3, false);
        self.conv(&core("down1"), b, 2 * b, 3, false);
        self.conv(&core("enc1"), 2 * b, 2 * b, 3, false);
        self.conv(&core("down2"), 2 * b, 4 * b, 3, false);
        self.conv(&core("mid"), 4 * b, 4 * b, 3, false);
        self.convt(&core("up2"), 4 * b, 2 * b);
        self.conv(&core("dec1"), 4 * b, 2 * b, 3, false);
        self.convt(&core("up1"), 2 * b, b);
        self.conv(&core("dec0"), 2 * b, b, 3, false);
        self.conv(&format!("{net}.out"), b, cout, 3, zero_out);
    }
}

impl<T: Real> NetworkParams<T> {
    /// Fresh parameters: Kaiming-uniform convolutions and linear layers, zero
    /// biases, zero final layers on the template generator and refinement heads.
    pub fn new(config: NetConfig, mode: ShareMode) -> Self {
        let c = config;
        let mut b = Builder::<T> {
            specs: Vec::new(),
            _t: std::marker::PhantomData,
        };
        b.conv("uv_encoder.conv0", TEXTURE_INPUT, c.texture_channels, 3, false);
        b.conv("uv_encoder.conv1", c.texture_channels, c.texture_channels, 3, false);
        b.conv("pose_encoder.conv0", POSE_INPUT, c.pose_channels, 3, false);
        b.conv("pose_encoder.conv1", c.pose_channels, c.pose_channels, 3, false);
        b.unet(
            "template_unet",
            c.texture_channels + c.pose_channels,
            TEMPLATE_OUTPUT,
            c.base_channels,
            true,
        );
        b.conv("geo_encoder.conv0", GEOMETRY_INPUT, c.feature_channels, 3, false);
        b.conv("geo_encoder.conv1", c.feature_channels, c.feature_channels, 3, false);
        b.unet(
            "refine_unet",
            VIEWS * 2 * c.feature_channels,
            VIEWS * c.decoder_channels,
            c.base_channels,
            false,
        );
        b.linear("refine_heads.fc0", c.decoder_channels, c.head_hidden, false);
        b.linear("refine_heads.fc1", c.head_hidden, HEAD_OUTPUT, true);

        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut tensors = Vec::new();
        let mut names = BTreeMap::new();
        for (name, shape, init) in b.specs {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zero => vec![T::zero(); n],
                Init::Kaiming { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
                }
            };
            names.insert(name, tensors.len());
            tensors.push(Tensor { shape, data });
        }
        let share_map = CORE_LAYERS
            .iter()
            .flat_map(|l| {
                ["w", "b"].map(|p| {
                    (
                        format!("template_unet.core.{l}.{p}"),
                        format!("refine_unet.core.{l}.{p}"),
                    )
                })
            })
            .collect();
        let trainable = vec![true; tensors.len()];
        let params = NetworkParams {
            config,
            version: PARAMS_VERSION,
            mode: ShareMode::FinetuneBackward,
            tensors,
            trainable,
            names,
            share_map,
        };
        params
            .transfer_weights(mode)
            .expect("share map names built-in parameters")
    }

    /// Re-links the backward-side parameters to the forward ones.
    ///
    /// `Shared` aliases each backward name to its forward slot. `FinetuneBackward`
    /// gives each backward name a copy of the forward values and freezes the
    /// forward-side networks.
    pub fn transfer_weights(&self, mode: ShareMode) -> Result<Self> {
        // rebuild from names so that unused slots are dropped
        let mut out = NetworkParams {
            config: self.config,
            version: self.version,
            mode,
            tensors: Vec::new(),
            trainable: Vec::new(),
            names: BTreeMap::new(),
            share_map: self.share_map.clone(),
        };
        let backward: BTreeMap<&str, &str> = self.share_map.iter().map(|(f, b)| (b.as_str(), f.as_str())).collect();
        for (fwd, _) in &self.share_map {
            if !self.names.contains_key(fwd) {
                return Err(Error::InvalidArgument(format!(
                    "share map names unknown forward parameter {fwd}"
                )));
            }
        }
        for (name, &slot) in &self.names {
            if let Some(fwd) = backward.get(name.as_str()) {
                if mode == ShareMode::Shared {
                    continue;
                }
                let src = self.tensor(self.names[*fwd]).clone();
                out.insert(name.clone(), src);
            } else {
                out.insert(name.clone(), self.tensors[slot].clone());
            }
        }
        for (fwd, bwd) in &self.share_map {
            if mode == ShareMode::Shared {
                let slot = out.names[fwd];
                out.names.insert(bwd.clone(), slot);
            }
        }
        for (name, &slot) in &out.names {
            let forward_side = FORWARD_NETS.iter().any(|n| name.starts_with(&format!("{n}.")));
            out.trainable[slot] = match mode {
                ShareMode::Shared => true,
                ShareMode::FinetuneBackward => !forward_side,
            };
        }
        Ok(out)
    }

    fn insert(&mut self, name: String, t: Tensor<T>) {
        self.names.insert(name, self.tensors.len());
        self.tensors.push(t);
        self.trainable.push(true);
    }

    pub fn slot(&self, name: &str) -> Result<usize> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn tensor(&self, slot: usize) -> &Tensor<T> {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.tensors[slot]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.tensors[self.slot(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let s = self.slot(name)?;
        Ok(&mut self.tensors[s])
    }

    pub fn is_trainable(&self, slot: usize) -> bool {
        self.trainable[slot]
    }

    pub fn set_trainable(&mut self, slot: usize, on: bool) {
        self.trainable[slot] = on;
    }

    /// Freezes every slot not reachable from a name under one of the given
    /// network prefixes (e.g. `"refine_heads"`). Slots already frozen stay
    /// frozen. Fails on a prefix that names nothing.
    pub fn train_only(&mut self, networks: &[String]) -> Result<()> {
        let under = |name: &str, net: &str| name.strip_prefix(net).is_some_and(|rest| rest.starts_with('.'));
        for net in networks {
            if !self.names.keys().any(|n| under(n, net)) {
                return Err(Error::InvalidArgument(format!("no parameters under network {net}")));
            }
        }
        let mut keep = vec![false; self.tensors.len()];
        for (name, &slot) in &self.names {
            if networks.iter().any(|net| under(name, net)) {
                keep[slot] = true;
            }
        }
        for (on, k) in self.trainable.iter_mut().zip(keep) {
            *on &= k;
        }
        Ok(())
    }

    pub fn slot_count(&self) -> usize {
        self.tensors.len()
    }

    /// All names with their slots, sorted by name.
    pub fn names(&self) -> impl Iterator<Item = (&str, usize)> {
        self.names.iter().map(|(n, &s)| (n.as_str(), s))
    }

    pub fn share_map(&self) -> &[(String, String)] {
        &self.share_map
    }

    /// Number of distinct stored scalars.
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .zip(&self.trainable)
            .filter(|(_, on)| **on)
            .map(|(t, _)| t.len())
            .sum()
    }

    /// Same store at another precision.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config,
            version: self.version,
            mode: self.mode,
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            trainable: self.trainable.clone(),
            names: self.names.clone(),
            share_map: self.share_map.clone(),
        }
    }

    /// Assembles a store from raw parts, as read from a checkpoint.
    pub fn from_parts(
        config: NetConfig,
        version: u32,
        mode: ShareMode,
        tensors: Vec<Tensor<T>>,
        trainable: Vec<bool>,
        names: BTreeMap<String, usize>,
    ) -> Result<Self> {
        if trainable.len() != tensors.len() {
            return Err(Error::DimensionMismatch {
                what: "trainable flags",
                expected: tensors.len(),
                got: trainable.len(),
            });
        }
        if let Some((n, s)) = names.iter().find(|(_, &s)| s >= tensors.len()) {
            return Err(Error::Invariant(format!("parameter {n} points at missing slot {s}")));
        }
        let reference = NetworkParams::<T>::new(config, mode);
        for (name, &slot) in &reference.names {
            let Some(&got) = names.get(name) else {
                return Err(Error::Invariant(format!("missing parameter {name}")));
            };
            if tensors[got].shape != reference.tensors[slot].shape {
                return Err(Error::Invariant(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    tensors[got].shape, reference.tensors[slot].shape
                )));
            }
        }
        for (a, b) in &reference.share_map {
            let aliased = names[a] == names[b];
            if aliased != (mode == ShareMode::Shared) {
                return Err(Error::Invariant(format!(
                    "aliasing of {a} and {b} does not match {mode:?}"
                )));
            }
        }
        if names.len() != reference.names.len() {
            return Err(Error::Invariant("checkpoint has unexpected parameters".into()));
        }
        if tensors.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invariant("non-finite parameter value".into()));
        }
        Ok(NetworkParams {
            config,
            version,
            mode,
            tensors,
            trainable,
            names,
            share_map: reference.share_map,
        })
    }
}
