//! Kinematic trees, their topology algebra and the skeleton-aware operators.
//!
//! Feature channels are identified with joints: channel `j` carries the local
//! rotation of joint `j` (the bone arriving at `j`), and the root channel carries
//! the global orientation. Two channels are adjacent when one joint is the
//! parent of the other, so the channel graph is the joint tree itself.

mod ops;
mod topology;

pub use ops::{skeleton_conv, skeleton_pool, skeleton_unpool};
pub use topology::{NeighborTable, PoolingPlan, Topology};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BVH channel token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn parse(token: &str) -> Option<Channel> {
        Some(match token {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    pub fn token(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Channel::Xrotation | Channel::Yrotation | Channel::Zrotation)
    }

    /// Axis index 0..3.
    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint in meters.
    pub offset: [f64; 3],
    pub channels: Vec<Channel>,
    /// `End Site` offset, kept for BVH round trips.
    pub end_site: Option<[f64; 3]>,
}

/// A joint tree whose parents always precede their children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

const ROOT_CHANNELS: [Channel; 6] = [
    Channel::Xposition,
    Channel::Yposition,
    Channel::Zposition,
    Channel::Zrotation,
    Channel::Xrotation,
    Channel::Yrotation,
];
const JOINT_CHANNELS: [Channel; 3] = [Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::Skeleton(format!(
                "expected exactly one root at index 0, found {roots}"
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::Skeleton(format!(
                        "joint {i} `{}` has parent {p}; parents must precede children",
                        j.name
                    )));
                }
            }
            if j.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::Skeleton(format!("joint {i} has a non-finite offset")));
            }
        }
        Ok(Skeleton { joints })
    }

    /// Builds a skeleton from parent indices and offsets with default BVH channels.
    pub fn from_parents(names: &[&str], parents: &[Option<usize>], offsets: &[[f64; 3]]) -> Result<Self> {
        if names.len() != parents.len() || names.len() != offsets.len() {
            return Err(Error::Skeleton("names, parents and offsets differ in length".into()));
        }
        let mut has_child = vec![false; names.len()];
        for p in parents.iter().flatten() {
            if *p < has_child.len() {
                has_child[*p] = true;
            }
        }
        let joints = names
            .iter()
            .zip(parents)
            .zip(offsets)
            .enumerate()
            .map(|(i, ((n, &p), &o))| Joint {
                name: n.to_string(),
                parent: p,
                offset: o,
                channels: if p.is_none() {
                    ROOT_CHANNELS.to_vec()
                } else {
                    JOINT_CHANNELS.to_vec()
                },
                end_site: (!has_child[i]).then_some([0.0, 0.0, 0.0]),
            })
            .collect();
        Skeleton::new(joints)
    }

    /// A straight chain along +y with unit-length bones.
    pub fn chain(n: usize, bone_length: f64) -> Result<Self> {
        let names: Vec<String> = (0..n).map(|i| format!("j{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let parents: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
        let offsets: Vec<[f64; 3]> = (0..n)
            .map(|i| if i == 0 { [0.0; 3] } else { [0.0, bone_length, 0.0] })
            .collect();
        Skeleton::from_parents(&names, &parents, &offsets)
    }

    /// Seven-joint toy body: root, spine, head and two 2-bone arms.
    pub fn toy7() -> Self {
        Skeleton::from_parents(
            &[
                "root",
                "spine",
                "head",
                "l_shoulder",
                "l_elbow",
                "r_shoulder",
                "r_elbow",
            ],
            &[None, Some(0), Some(1), Some(1), Some(3), Some(1), Some(5)],
            &[
                [0.0, 0.0, 0.0],
                [0.0, 0.3, 0.0],
                [0.0, 0.3, 0.0],
                [0.2, 0.25, 0.0],
                [0.3, 0.0, 0.0],
                [-0.2, 0.25, 0.0],
                [-0.3, 0.0, 0.0],
            ],
        )
        .expect("toy7 preset is valid")
    }

    /// SMPL-like 24-joint body with approximate rest offsets.
    pub fn smpl24() -> Self {
        const NAMES: [&str; 24] = [
            "pelvis",
            "l_hip",
            "r_hip",
            "spine1",
            "l_knee",
            "r_knee",
            "spine2",
            "l_ankle",
            "r_ankle",
            "spine3",
            "l_foot",
            "r_foot",
            "neck",
            "l_collar",
            "r_collar",
            "head",
            "l_shoulder",
            "r_shoulder",
            "l_elbow",
            "r_elbow",
            "l_wrist",
            "r_wrist",
            "l_hand",
            "r_hand",
        ];
        const PARENTS: [i32; 24] = [
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
        ];
        const OFFSETS: [[f64; 3]; 24] = [
            [0.0, 0.0, 0.0],
            [0.06, -0.09, 0.0],
            [-0.06, -0.09, 0.0],
            [0.0, 0.11, 0.0],
            [0.04, -0.38, 0.0],
            [-0.04, -0.38, 0.0],
            [0.0, 0.14, 0.0],
            [0.0, -0.40, -0.04],
            [0.0, -0.40, -0.04],
            [0.0, 0.06, 0.02],
            [0.02, -0.06, 0.12],
            [-0.02, -0.06, 0.12],
            [0.0, 0.21, -0.03],
            [0.08, 0.12, -0.02],
            [-0.08, 0.12, -0.02],
            [0.0, 0.09, 0.05],
            [0.09, 0.03, 0.0],
            [-0.09, 0.03, 0.0],
            [0.26, 0.0, 0.0],
            [-0.26, 0.0, 0.0],
            [0.25, 0.0, 0.0],
            [-0.25, 0.0, 0.0],
            [0.08, 0.0, 0.0],
            [-0.08, 0.0, 0.0],
        ];
        let parents: Vec<Option<usize>> = PARENTS.iter().map(|&p| (p >= 0).then_some(p as usize)).collect();
        Skeleton::from_parents(&NAMES, &parents, &OFFSETS).expect("smpl24 preset is valid")
    }

    /// Looks up a preset by name (`toy7`, `smpl24`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy7" | "toy-7" => Ok(Skeleton::toy7()),
            "smpl24" | "smpl-24" | "smpl-24-like" => Ok(Skeleton::smpl24()),
            other => Err(Error::InvalidArgument(format!("unknown skeleton preset `{other}`"))),
        }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn offsets(&self) -> Vec<[f64; 3]> {
        self.joints.iter().map(|j| j.offset).collect()
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&c| self.joints[c].parent == Some(j))
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Channel graph used by the skeleton operators.
    pub fn topology(&self) -> Topology {
        Topology::new(self.parents()).expect("validated skeleton is a tree")
    }

    /// Joints of the named body part: `all`, `upper` (everything outside the
    /// leg chains) or `lower` (root plus the leg chains). Leg chains are the
    /// root's child subtrees whose first offset points down (negative y).
    pub fn part(&self, name: &str) -> Result<Vec<usize>> {
        let n = self.num_joints();
        let mut in_leg = vec![false; n];
        for j in 1..n {
            let p = self.joints[j].parent.unwrap();
            in_leg[j] = if p == 0 {
                self.joints[j].offset[1] < 0.0
            } else {
                in_leg[p]
            };
        }
        let joints: Vec<usize> = match name {
            "all" => (0..n).collect(),
            "upper" => (0..n).filter(|&j| !in_leg[j]).collect(),
            "lower" => (0..n).filter(|&j| j == 0 || in_leg[j]).collect(),
            other => return Err(Error::UnknownPart(other.to_string())),
        };
        Ok(joints)
    }
}
