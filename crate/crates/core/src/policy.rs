//! The closed set of policies the harness can drive in-process.

use crate::error::{Error, Result};
use crate::mdp::{apply_mask, gaussian_mask, Env, PolicyDistribution, WaypointAction};
use crate::oracle::{Decision, OracleState, SnpOracle};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyAction {
    Act(WaypointAction),
    /// The policy considers the task finished.
    Stop,
    /// The policy cannot find a usable action.
    Stuck,
}

pub trait Policy: Send {
    fn name(&self) -> &str;
    /// Called once after `Env::reset`.
    fn begin(&mut self, env: &Env) -> Result<()>;
    fn act(&mut self, env: &Env) -> Result<PolicyAction>;
    /// Called once when the rollout ends, whatever the reason.
    fn finish(&mut self, _env: &Env) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SnpPolicy {
    oracle: Option<SnpOracle>,
    state: OracleState,
}

impl SnpPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &OracleState {
        &self.state
    }
}

impl Policy for SnpPolicy {
    fn name(&self) -> &str {
        "snp"
    }

    fn begin(&mut self, env: &Env) -> Result<()> {
        self.oracle = Some(SnpOracle::new(env.config()));
        self.state = OracleState::default();
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<PolicyAction> {
        let oracle = *self.oracle.get_or_insert_with(|| SnpOracle::new(env.config()));
        Ok(match oracle.act_env(env, &mut self.state)? {
            Decision::Act(a) => PolicyAction::Act(a),
            Decision::Done => PolicyAction::Stop,
            Decision::Stuck => PolicyAction::Stuck,
        })
    }
}

/// Draws both waypoints from the Gaussian-masked uniform distribution.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    salt: u64,
    rng: SplitMix64,
    dist: Option<PolicyDistribution>,
}

impl RandomPolicy {
    pub fn new(salt: u64) -> Self {
        Self { salt, rng: SplitMix64::new(salt), dist: None }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin(&mut self, env: &Env) -> Result<()> {
        let cfg = env.config();
        let fov = env.fov();
        let mask = gaussian_mask(fov, cfg.mask_sigma_factor, cfg.mask_base_scale)?;
        self.dist = Some(apply_mask(&PolicyDistribution::uniform(fov.obs_rows(), fov.obs_cols()), &mask)?);
        self.rng = SplitMix64::new(env.seed() ^ self.salt);
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<PolicyAction> {
        if self.dist.is_none() {
            self.begin(env)?;
        }
        let dist = self.dist.as_ref().expect("initialized above");
        let p = dist.sample(0, self.rng.next_f64());
        let s = dist.sample(1, self.rng.next_f64());
        Ok(PolicyAction::Act(WaypointAction::new((p.0 as i64, p.1 as i64), (s.0 as i64, s.1 as i64))))
    }
}

/// Plays back a fixed action list, then stops.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    name: String,
    actions: Vec<WaypointAction>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(name: impl Into<String>, actions: Vec<WaypointAction>) -> Self {
        Self { name: name.into(), actions, next: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin(&mut self, _env: &Env) -> Result<()> {
        self.next = 0;
        Ok(())
    }

    fn act(&mut self, _env: &Env) -> Result<PolicyAction> {
        let a = self.actions.get(self.next).copied();
        self.next += 1;
        Ok(a.map_or(PolicyAction::Stop, PolicyAction::Act))
    }
}

/// Never moves; runs into the timeout.
#[derive(Debug, Clone, Default)]
pub struct StandStill;

impl Policy for StandStill {
    fn name(&self) -> &str {
        "still"
    }

    fn begin(&mut self, _env: &Env) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<PolicyAction> {
        Ok(PolicyAction::Act(WaypointAction::stay(env.fov())))
    }
}

/// Builds an in-process policy by registry name. `external` and `replay`
/// need extra inputs and are constructed by the harness directly.
pub fn by_name(name: &str) -> Result<Box<dyn Policy>> {
    match name {
        "snp" => Ok(Box::new(SnpPolicy::new())),
        "random" => Ok(Box::new(RandomPolicy::new(0x5EED))),
        "still" => Ok(Box::new(StandStill)),
        other => Err(Error::UnknownPolicy(other.to_string())),
    }
}
