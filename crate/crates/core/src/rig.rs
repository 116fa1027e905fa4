//! A world plus one compliance controller per arm, advanced one control period at a time.

use crate::control::{ComplianceController, ControllerConfig, ControllerTarget, TargetSlot};
use crate::error::{Error, Result};
use crate::sim::{Observation, World};

pub struct Rig {
    pub world: World,
    pub controllers: Vec<ComplianceController>,
    pub slots: Vec<TargetSlot>,
    observation: Observation,
    steps_per_period: usize,
}

impl Rig {
    /// Controllers start holding the current poses with each arm's first stiffness mode.
    pub fn new(world: World, config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        let ratio = config.period / world.config.physics_dt;
        let steps_per_period = ratio.round() as usize;
        if steps_per_period == 0 || (ratio - steps_per_period as f64).abs() > 1e-9 {
            return Err(Error::config(format!(
                "control period {} must be a multiple of the physics step {}",
                config.period, world.config.physics_dt
            )));
        }
        let modes = world.task.as_ref().map(|t| t.mode_pairs.clone());
        let mut controllers = Vec::with_capacity(world.arms.len());
        for (i, arm) in world.arms.iter().enumerate() {
            let k = modes
                .as_ref()
                .and_then(|m| m.get(i))
                .map(|p| p.0.spec())
                .unwrap_or_else(|| crate::control::StiffnessMode::Mid.spec());
            let mut c = ComplianceController::new(arm.chain.clone(), config.clone(), &arm.joints, k)?;
            let mut t = *c.target();
            t.gripper = arm.gripper_command;
            c.update_target(t)?;
            controllers.push(c);
        }
        let slots = (0..world.arms.len()).map(|_| TargetSlot::new()).collect();
        let mut world = world;
        for (arm, c) in world.arms.iter_mut().zip(&controllers) {
            arm.active_stiffness = Some(*c.active_stiffness());
        }
        let observation = world.observe(false);
        Ok(Self {
            world,
            controllers,
            slots,
            observation,
            steps_per_period,
        })
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn period(&self) -> f64 {
        self.controllers
            .first()
            .map(|c| c.config.period)
            .unwrap_or(self.world.config.physics_dt * self.steps_per_period as f64)
    }

    pub fn set_target(&self, arm: usize, target: ControllerTarget) -> Result<()> {
        self.slots
            .get(arm)
            .ok_or_else(|| Error::domain(format!("no arm with index {arm}")))?
            .update(target)
    }

    /// Applies pending targets, runs one control step per arm and the physics steps of one period.
    pub fn tick(&mut self) -> Result<&Observation> {
        let period = self.period();
        let mut commands = Vec::with_capacity(self.controllers.len());
        for (i, c) in self.controllers.iter_mut().enumerate() {
            if let Some(t) = self.slots[i].take() {
                c.update_target(t)?;
            }
            let f = self.observation.arms[i].wrench_world;
            commands.push(c.control_step(&f, period)?);
            let arm = &mut self.world.arms[i];
            arm.gripper_command = c.target().gripper;
            arm.active_stiffness = Some(*c.active_stiffness());
        }
        let dt = self.world.config.physics_dt;
        for _ in 0..self.steps_per_period {
            self.observation = self.world.step(&commands, dt)?;
        }
        Ok(&self.observation)
    }

    /// Observation with rendered camera images.
    pub fn observe_with_images(&self) -> Observation {
        self.world.observe(true)
    }
}
