//! TOML scene files.
//!
//! Lengths are in meters and angles in radians. Rotations are axis-angle
//! vectors whose norm is the angle. A minimal file:
//!
//! ```toml
//! start = [0.0, 0.5, 0.5]
//!
//! [chain]
//! preset = "planar-3"
//!
//! [[obstacles]]
//! type = "sphere"
//! center = [0.5, 0.3, 0.0]
//! radius = 0.1
//!
//! [target]
//! shape = { type = "box", center = [0.6, -0.2, 0.0], half_extents = [0.03, 0.03, 0.03] }
//!
//! [goals]
//! sampler = { count = 30, seed = 1 }
//! ```
//!
//! Explicit chains list `joints` (`origin`, `axis`, `limits`), arm `parts`
//! (`link`, `shape`, capsules or boxes in the link frame), an optional `base`
//! and the `ee_offset` of the gripper frame. The gripper described by the
//! `[gripper]` table is always attached to the last link.

use anyhow::{bail, Context};
use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use graspopt::bench::{attach_gripper, sample_approach_goals, ChainPreset, Scenario};
use graspopt::chain::{Configuration, Joint, LinkPart, SerialChain};
use graspopt::geometry::Primitive;
use graspopt::goalsel::GoalSet;
use graspopt::graspref::{GripperDims, GripperModel};
use graspopt::planner::PlannerConfig;
use graspopt::scene::{Field, SceneSdf, Target, DEFAULT_SURFACE_POINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub start: Vec<f64>,
    pub chain: ChainSpec,
    #[serde(default)]
    pub gripper: GripperDims,
    #[serde(default)]
    pub obstacles: Vec<Primitive>,
    pub target: Option<TargetSpec>,
    pub goals: GoalsSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub preset: Option<ChainPreset>,
    pub base: Option<PoseSpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub parts: Vec<PartSpec>,
    pub ee_offset: Option<PoseSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSpec {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl PoseSpec {
    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        PoseSpec {
            translation: iso.translation.vector.into(),
            rotation: iso.rotation.scaled_axis().into(),
        }
    }

    fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_scaled_axis(Vector3::from(self.rotation)),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    #[serde(default)]
    pub origin: PoseSpec,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub link: usize,
    pub shape: Primitive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub shape: Primitive,
    #[serde(default = "default_surface_points")]
    pub surface_points: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_surface_points() -> usize {
    DEFAULT_SURFACE_POINTS
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalsSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub configurations: Vec<Vec<f64>>,
    /// Per-configuration feasibility; all feasible when absent.
    pub feasible: Option<Vec<bool>>,
    pub sampler: Option<SamplerSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SceneFile {
    /// Parses TOML; errors carry the line and column of the problem.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes out an in-memory scenario with an explicit chain and goal list.
    pub fn from_scenario(scenario: &Scenario, planner: &PlannerConfig) -> anyhow::Result<Self> {
        let chain = &scenario.chain;
        let mut obstacles = Vec::new();
        for field in &scenario.scene.obstacles {
            match field {
                Field::Primitive(p) => obstacles.push(p.clone()),
                Field::Grid(_) => bail!("grid obstacles cannot be written to a scene file"),
            }
        }
        let goals = &scenario.goals;
        Ok(SceneFile {
            start: scenario.start.iter().copied().collect(),
            chain: ChainSpec {
                preset: None,
                base: Some(PoseSpec::from_isometry(chain.base())),
                joints: chain
                    .joints()
                    .iter()
                    .map(|j| JointSpec {
                        origin: PoseSpec::from_isometry(&j.origin),
                        axis: j.axis.into_inner().into(),
                        limits: j.limits,
                    })
                    .collect(),
                parts: chain
                    .parts()
                    .iter()
                    .filter(|p| !p.hand)
                    .map(|p| PartSpec {
                        link: p.link,
                        shape: p.shape.clone(),
                    })
                    .collect(),
                ee_offset: Some(PoseSpec::from_isometry(chain.ee_offset())),
            },
            gripper: scenario.gripper.dims().clone(),
            obstacles,
            target: scenario.scene.target.as_ref().map(|t| TargetSpec {
                shape: t.shape.clone(),
                surface_points: t.surface.len(),
                seed: t.seed,
            }),
            goals: GoalsSpec {
                configurations: goals.goals().iter().map(|g| g.iter().copied().collect()).collect(),
                feasible: Some(goals.feasible_mask().to_vec()),
                sampler: None,
            },
            planner: planner.clone(),
        })
    }

    fn build_chain(&self, gripper: &GripperModel) -> anyhow::Result<SerialChain> {
        let spec = &self.chain;
        let arm = match spec.preset {
            Some(preset) => {
                if !spec.joints.is_empty() || !spec.parts.is_empty() || spec.base.is_some() || spec.ee_offset.is_some() {
                    bail!("chain: `preset` cannot be combined with an explicit chain");
                }
                preset.arm()
            }
            None => {
                if spec.joints.is_empty() {
                    bail!("chain: give either `preset` or a `joints` list");
                }
                let joints = spec
                    .joints
                    .iter()
                    .map(|j| Joint::revolute(j.origin.isometry(), Vector3::from(j.axis), j.limits))
                    .collect();
                let parts = spec
                    .parts
                    .iter()
                    .map(|p| LinkPart {
                        link: p.link,
                        shape: p.shape.clone(),
                        hand: false,
                    })
                    .collect();
                SerialChain::new(
                    spec.base.unwrap_or_default().isometry(),
                    joints,
                    parts,
                    spec.ee_offset.unwrap_or_default().isometry(),
                )
                .context("chain")?
            }
        };
        Ok(attach_gripper(arm, gripper)?)
    }

    /// Builds the scene, chain and goal set. Sampled goal sets are drawn
    /// with approach sampling around the target.
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        let gripper = GripperModel::new(self.gripper.clone()).context("gripper")?;
        let chain = self.build_chain(&gripper)?;
        if self.start.len() != chain.dof() {
            bail!("start: expected {} joint values, found {}", chain.dof(), self.start.len());
        }
        let mut obstacles = Vec::new();
        for (i, p) in self.obstacles.iter().enumerate() {
            p.validate().with_context(|| format!("obstacles[{i}]"))?;
            obstacles.push(Field::Primitive(p.clone()));
        }
        let target = match &self.target {
            Some(t) => Some(Target::new(t.shape.clone(), t.surface_points, t.seed).context("target")?),
            None => None,
        };
        let scene = SceneSdf::new(obstacles, target);
        let start = Configuration::from_vec(self.start.clone());

        let g = &self.goals;
        let (goals, missing_goals) = match (&g.sampler, g.configurations.is_empty()) {
            (Some(_), false) => bail!("goals: give either `configurations` or `sampler`, not both"),
            (None, true) => bail!("goals: the goal set is empty"),
            (Some(s), true) => {
                if g.feasible.is_some() {
                    bail!("goals: `feasible` only applies to explicit configurations");
                }
                let planar = chain.joints().iter().all(|j| j.axis.into_inner() == Vector3::z());
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                sample_approach_goals(&chain, &gripper, &scene, s.count, planar, &mut rng).context("goals")?
            }
            (None, false) => {
                for (i, c) in g.configurations.iter().enumerate() {
                    if c.len() != chain.dof() {
                        bail!("goals.configurations[{i}]: expected {} joint values, found {}", chain.dof(), c.len());
                    }
                }
                let configs: Vec<Configuration> =
                    g.configurations.iter().map(|c| Configuration::from_vec(c.clone())).collect();
                let feasible = g.feasible.clone().unwrap_or_else(|| vec![true; configs.len()]);
                (GoalSet::new(configs, feasible).context("goals")?, 0)
            }
        };
        self.planner.validate().context("planner")?;
        Ok(Scenario {
            scene,
            chain,
            gripper,
            goals,
            start,
            missing_goals,
        })
    }
}
