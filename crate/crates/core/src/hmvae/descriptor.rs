use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{NeighborTable, PoolingPlan, Skeleton, Topology};

/// Model family: the hierarchical model and its two ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Skeleton-aware encoder/decoder with a local (shallow) and a global (deep) latent.
    #[serde(rename = "hm-vae")]
    HmVae,
    /// Same architecture with only the global latent.
    #[serde(rename = "m-vae")]
    MVae,
    /// Plain temporal convolutions over flattened joint channels, single latent.
    #[serde(rename = "tcn-vae")]
    TcnVae,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::HmVae, Variant::MVae, Variant::TcnVae];

    pub fn has_local_latent(self) -> bool {
        self == Variant::HmVae
    }

    pub fn is_skeletal(self) -> bool {
        self != Variant::TcnVae
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::HmVae => "hm-vae",
            Variant::MVae => "m-vae",
            Variant::TcnVae => "tcn-vae",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hm-vae" | "hmvae" | "hm" => Ok(Variant::HmVae),
            "m-vae" | "mvae" | "m" => Ok(Variant::MVae),
            "tcn-vae" | "tcnvae" | "tcn" => Ok(Variant::TcnVae),
            _ => Err(Error::UnknownVariant(s.to_string())),
        }
    }
}

pub const BLOCKS: usize = 4;

/// Architecture of an encoder/decoder pair. Everything shape-related is
/// derived from this record, and it is stored verbatim in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub variant: Variant,
    pub skeleton: Skeleton,
    /// Window length `T`.
    pub window: usize,
    /// Output channels of encoder blocks B1..B4.
    pub widths: [usize; BLOCKS],
    /// Temporal stride of each encoder block.
    pub strides: [usize; BLOCKS],
    pub kernel: usize,
    /// Neighborhood radius of the skeleton convolution.
    pub distance: usize,
    pub latent_local: usize,
    pub latent_global: usize,
    pub leaky_slope: f64,
}

impl ArchDescriptor {
    /// Full-size defaults: `T = 64`, widths 32/64/128/256, stride 2 per block, `d_h = 64`.
    pub fn standard(skeleton: Skeleton) -> Self {
        ArchDescriptor {
            variant: Variant::HmVae,
            skeleton,
            window: 64,
            widths: [32, 64, 128, 256],
            strides: [2, 2, 2, 2],
            kernel: 3,
            distance: 2,
            latent_local: 64,
            latent_global: 64,
            leaky_slope: 0.2,
        }
    }

    /// Short-window model used for sliding-window refinement: `T = 8`, strides 2,2,1,1.
    pub fn refinement(skeleton: Skeleton) -> Self {
        ArchDescriptor {
            window: 8,
            strides: [2, 2, 1, 1],
            ..ArchDescriptor::standard(skeleton)
        }
    }

    /// Desk-scale configuration on the seven-joint toy skeleton: `T = 16`, `d_h = 16`.
    pub fn toy() -> Self {
        ArchDescriptor {
            variant: Variant::HmVae,
            skeleton: Skeleton::toy7(),
            window: 16,
            widths: [16, 32, 32, 64],
            strides: [2, 2, 2, 2],
            kernel: 3,
            distance: 2,
            latent_local: 16,
            latent_global: 16,
            leaky_slope: 0.2,
        }
    }

    /// Toy configuration with the refinement window of 8 frames.
    pub fn toy_refinement() -> Self {
        ArchDescriptor {
            window: 8,
            strides: [2, 2, 1, 1],
            ..ArchDescriptor::toy()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.strides.iter().product();
        if self.strides.contains(&0) || self.window == 0 || !self.window.is_multiple_of(total) {
            return Err(Error::InvalidArgument(format!(
                "window {} must be a positive multiple of the stride product {total}",
                self.window
            )));
        }
        if self.kernel == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("kernel and widths must be >= 1".into()));
        }
        if self.latent_global == 0 || (self.variant.has_local_latent() && self.latent_local == 0) {
            return Err(Error::InvalidArgument("latent dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Frames after encoder block `b` (0 = input).
    pub fn frames_at(&self, b: usize) -> usize {
        self.window / self.strides[..b].iter().product::<usize>()
    }

    /// Channels after encoder block `b` (0 = the six rotation features).
    pub fn channels_at(&self, b: usize) -> usize {
        if b == 0 {
            6
        } else {
            self.widths[b - 1]
        }
    }

    pub fn local_dim(&self) -> usize {
        if self.variant.has_local_latent() {
            self.latent_local
        } else {
            0
        }
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }
}

/// Topologies, neighbor tables and pooling plans of the four levels.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    /// `topologies[l]` is the skeleton after `l` pooling steps (0..=4).
    pub topologies: Vec<Topology>,
    /// `neighbors[l]` is used by convolutions running at level `l` (0..4).
    pub neighbors: Vec<Arc<NeighborTable>>,
    /// `plans[b]` pools level `b` into level `b + 1`.
    pub plans: Vec<Arc<PoolingPlan>>,
}

impl Hierarchy {
    pub fn new(skeleton: &Skeleton, distance: usize) -> Self {
        let mut topologies = vec![skeleton.topology()];
        let mut neighbors = Vec::new();
        let mut plans = Vec::new();
        for b in 0..BLOCKS {
            let topo = &topologies[b];
            neighbors.push(Arc::new(topo.neighbors_within(distance)));
            let plan = topo.pooling_plan();
            let merged = plan.merged().clone();
            plans.push(Arc::new(plan));
            topologies.push(merged);
        }
        Hierarchy {
            topologies,
            neighbors,
            plans,
        }
    }

    /// Bone count at each level, input first.
    pub fn joint_counts(&self) -> Vec<usize> {
        self.topologies.iter().map(Topology::len).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        assert_eq!("hm-vae".parse::<Variant>().unwrap(), Variant::HmVae);
        assert_eq!("TCN".parse::<Variant>().unwrap(), Variant::TcnVae);
        assert!(matches!("gan".parse::<Variant>(), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn frame_bookkeeping() {
        let d = ArchDescriptor::standard(Skeleton::smpl24());
        assert_eq!(
            (0..=4).map(|b| d.frames_at(b)).collect::<Vec<_>>(),
            vec![64, 32, 16, 8, 4]
        );
        let r = ArchDescriptor::refinement(Skeleton::smpl24());
        assert_eq!((0..=4).map(|b| r.frames_at(b)).collect::<Vec<_>>(), vec![8, 4, 2, 2, 2]);
        assert!(d.validate().is_ok() && r.validate().is_ok());
        let bad = ArchDescriptor {
            window: 12,
            ..ArchDescriptor::toy()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn toy_hierarchy_counts() {
        let h = Hierarchy::new(&Skeleton::toy7(), 2);
        assert_eq!(h.joint_counts(), vec![7, 4, 4, 4, 4]);
    }
}
