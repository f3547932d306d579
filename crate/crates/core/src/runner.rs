//! Episode loop: optional pre-exploration to build spatial memory, then
//! perceive, decide and act until STOP, deviation from the labels, or the step limit.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    build_request, parse_output, AgentError, Decomposer, ModelOutput, ParseMode, Policy, PolicyContext,
    PromptTemplate, RequestInputs, RuleDecomposer,
};
use crate::eval::{independent_success, navigation_error, success};
use crate::geometry::{Frame, Image, Intrinsics};
use crate::simulator::{render_frame, step, ActionType, DynamicsConfig, Episode, Pose2D, RobotState, SceneClass, SimError, World};
use crate::sum::{
    memory_key, reconstruct, render_memory, sample_frames, KeyMode, MemoryBank, MemoryMeta, MemoryRenderConfig,
    MemorySelection, MemoryViewpoint, ReconstructorConfig, SpatialMemory, SumError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid runner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sum(#[from] SumError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How a mismatch window against the label sequence is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    /// Every action in the window differs from its label.
    AllDiffer,
    /// At least `min_mismatches` actions in the window differ.
    Hamming { min_mismatches: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 320, height: 180, hfov_deg: 90.0 }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics, RunError> {
        Intrinsics::from_hfov(self.width, self.height, self.hfov_deg.to_radians())
            .map_err(|e| RunError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    pub tau: usize,
    pub max_steps: usize,
    pub success_radius: f64,
    pub memory_selection: MemorySelection,
    pub q: usize,
    pub dynamics: DynamicsConfig,
    /// Number of most recent frames attached to each request.
    pub history_window: usize,
    pub deviation_enabled: bool,
    pub deviation_mode: DeviationMode,
    pub camera: CameraConfig,
    pub reconstructor: ReconstructorConfig,
    pub memory_render: MemoryRenderConfig,
    pub key_mode: KeyMode,
    pub parse_mode: ParseMode,
    /// Extra attempts after a failed decide or parse.
    pub policy_retries: usize,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            tau: 3,
            max_steps: 50,
            success_radius: 3.0,
            memory_selection: MemorySelection::None,
            q: crate::sum::DEFAULT_Q,
            dynamics: DynamicsConfig::default(),
            history_window: 3,
            deviation_enabled: true,
            deviation_mode: DeviationMode::AllDiffer,
            camera: CameraConfig::default(),
            reconstructor: ReconstructorConfig::default(),
            memory_render: MemoryRenderConfig::default(),
            key_mode: KeyMode::SceneInstruction,
            parse_mode: ParseMode::Strict,
            policy_retries: 1,
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.tau < 1 {
            return Err(RunError::Config("tau must be at least 1".into()));
        }
        if self.max_steps < 1 {
            return Err(RunError::Config("max_steps must be at least 1".into()));
        }
        if !(self.success_radius > 0.0) {
            return Err(RunError::Config(format!("success_radius {} must be positive", self.success_radius)));
        }
        if self.q < 2 {
            return Err(RunError::Config(format!("q {} must be at least 2", self.q)));
        }
        if let DeviationMode::Hamming { min_mismatches } = self.deviation_mode {
            if min_mismatches == 0 || min_mismatches > self.tau + 1 {
                return Err(RunError::Config(format!("min_mismatches must lie in 1..={}", self.tau + 1)));
            }
        }
        self.memory_render.validate()?;
        self.camera.intrinsics()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    Deviated,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub action: ActionType,
    pub memory_thought: String,
    pub decision_thought: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub scene_class: SceneClass,
    pub memory_selection: MemorySelection,
    /// Initial pose followed by the pose after every step.
    pub trajectory: Vec<Pose2D>,
    pub steps: Vec<ModelOutput>,
    pub final_pose: Pose2D,
    pub termination: Termination,
    pub ne: f64,
    pub success: bool,
    pub subtasks_completed: usize,
    pub subtask_total: usize,
    pub memory_hit: bool,
    pub collisions: usize,
    pub target: [f64; 2],
    pub subtask_waypoints: Vec<[f64; 2]>,
    /// Set when the policy kept failing; the episode then ends as `step_limit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Wall-clock timings; not serialized so results stay byte-reproducible.
    #[serde(skip)]
    pub step_logs: Vec<StepLog>,
}

/// True iff the window of the last `tau + 1` predictions lies inside the label sequence and
/// every action in it differs from the label at the same index.
pub fn check_deviation(predicted: &[ActionType], labels: &[ActionType], tau: usize) -> bool {
    check_deviation_with(predicted, labels, tau, DeviationMode::AllDiffer)
}

pub fn check_deviation_with(predicted: &[ActionType], labels: &[ActionType], tau: usize, mode: DeviationMode) -> bool {
    let n = predicted.len();
    let w = tau + 1;
    if n < w || n > labels.len() {
        return false;
    }
    let mismatches = (n - w..n).filter(|&i| predicted[i] != labels[i]).count();
    match mode {
        DeviationMode::AllDiffer => mismatches == w,
        DeviationMode::Hamming { min_mismatches } => mismatches >= min_mismatches,
    }
}

/// Trace line for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub episode_id: String,
    pub t: usize,
    pub action: ActionType,
    pub recall: String,
    pub decide: String,
    /// Pose at which the action was chosen.
    pub pose: Pose2D,
}

pub fn trace_lines(r: &EpisodeResult) -> Vec<TraceLine> {
    r.steps
        .iter()
        .enumerate()
        .map(|(t, s)| TraceLine {
            episode_id: r.episode_id.clone(),
            t,
            action: s.action,
            recall: s.memory_thought.clone(),
            decide: s.decision_thought.clone(),
            pose: r.trajectory[t],
        })
        .collect()
}

pub fn write_trace(w: &mut impl Write, r: &EpisodeResult) -> Result<(), RunError> {
    for line in trace_lines(r) {
        serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace_file(path: &Path, r: &EpisodeResult) -> Result<(), RunError> {
    let mut buf = Vec::new();
    write_trace(&mut buf, r)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Poses visited when replaying `actions` from `start`, the start included; STOP ends the replay.
pub fn replay(world: &World, start: Pose2D, actions: &[ActionType], dynamics: &DynamicsConfig) -> Result<Vec<Pose2D>, SimError> {
    let mut state = RobotState::at(start);
    let mut poses = vec![start];
    for &a in actions {
        if a == ActionType::Stop {
            break;
        }
        state = step(world, &state, a, dynamics)?;
        poses.push(state.pose);
    }
    Ok(poses)
}

/// Shared, read-only pieces of the episode loop.
pub struct Runner {
    pub cfg: RunnerConfig,
    pub template: PromptTemplate,
    pub decomposer: Box<dyn Decomposer + Send + Sync>,
    pub bank: Option<MemoryBank>,
}

impl Runner {
    pub fn new(cfg: RunnerConfig, bank: Option<MemoryBank>) -> Result<Self, RunError> {
        cfg.validate()?;
        Ok(Self { cfg, template: PromptTemplate::default(), decomposer: Box::new(RuleDecomposer), bank })
    }

    pub fn with_template(mut self, t: PromptTemplate) -> Self {
        self.template = t;
        self
    }

    pub fn with_decomposer(mut self, d: Box<dyn Decomposer + Send + Sync>) -> Self {
        self.decomposer = d;
        self
    }

    pub fn memory_key(&self, world: &World, episode: &Episode) -> String {
        memory_key(&world.scene_id(), &episode.instruction, self.cfg.key_mode)
    }

    /// Replays the label trajectory and builds memory from it.
    pub fn pre_explore(&self, world: &World, episode: &Episode) -> Result<SpatialMemory, RunError> {
        let poses = replay(world, episode.start, &episode.label_actions, &self.cfg.dynamics)?;
        self.pre_explore_along(world, episode, &poses)
    }

    /// Renders the sampled poses, reconstructs, renders the memory views from the episode
    /// start and stores them in the bank (when there is one).
    pub fn pre_explore_along(&self, world: &World, episode: &Episode, poses: &[Pose2D]) -> Result<SpatialMemory, RunError> {
        let k = self.cfg.camera.intrinsics()?;
        let indexed: Vec<(usize, Pose2D)> = poses.iter().copied().enumerate().collect();
        let frames: Vec<Frame> = sample_frames(&indexed, self.cfg.q)?
            .into_iter()
            .map(|(i, p)| render_frame(world, &RobotState::at(p), &k, self.cfg.dynamics.camera_height, i as u64))
            .collect();
        let r = reconstruct(&frames, &self.cfg.reconstructor)?;
        let s = episode.start;
        let vp = MemoryViewpoint { x: s.x, y: s.y, heading: s.heading, ground_z: world.terrain.height_at(s.x, s.y) };
        let key = self.memory_key(world, episode);
        let memory = render_memory(&r, &vp, &key, &self.cfg.memory_render)?;
        if let Some(bank) = &self.bank {
            bank.store(&key, &memory)?;
        }
        Ok(memory)
    }

    fn load_memory(&self, world: &World, episode: &Episode) -> Result<(Vec<Arc<Image>>, Option<MemoryMeta>, bool), RunError> {
        let sel = self.cfg.memory_selection;
        if sel == MemorySelection::None {
            return Ok((Vec::new(), None, false));
        }
        let key = self.memory_key(world, episode);
        let Some(bank) = &self.bank else {
            log::warn!("{}: memory {sel} requested without a memory bank, running memoryless", episode.id);
            return Ok((Vec::new(), None, false));
        };
        let loaded = bank.load(&key, sel)?;
        if !loaded.hit {
            log::warn!("{}: no memory record `{key}`, running memoryless", episode.id);
        }
        Ok((loaded.images.into_iter().map(Arc::new).collect(), loaded.meta, loaded.hit))
    }

    pub fn run_episode(&self, world: &World, episode: &Episode, policy: &mut dyn Policy) -> Result<EpisodeResult, RunError> {
        let cfg = &self.cfg;
        episode.validate()?;
        if episode.scene_class != world.scene_class {
            return Err(SimError::InvalidEpisode {
                id: episode.id.clone(),
                reason: format!("scene class {} does not match world {}", episode.scene_class.as_str(), world.scene_id()),
            }
            .into());
        }
        let k = cfg.camera.intrinsics()?;
        let mut subtasks = self.decomposer.decompose(&episode.instruction)?;
        let (memory, meta, memory_hit) = self.load_memory(world, episode)?;

        let mut state = RobotState::at(episode.start);
        let mut trajectory = vec![episode.start];
        let mut recent: VecDeque<Arc<Frame>> = VecDeque::with_capacity(cfg.history_window.max(1) + 1);
        let mut predicted: Vec<ActionType> = Vec::new();
        let mut steps: Vec<ModelOutput> = Vec::new();
        let mut step_logs = Vec::new();
        let mut collisions = 0;
        let mut failure = None;
        let mut termination = Termination::StepLimit;

        for t in 0..cfg.max_steps {
            let frame = render_frame(world, &state, &k, cfg.dynamics.camera_height, t as u64);
            recent.push_back(Arc::new(frame));
            while recent.len() > cfg.history_window.max(1) {
                recent.pop_front();
            }
            let frames: Vec<Arc<Frame>> = recent.iter().cloned().collect();
            let request = build_request(
                &self.template,
                &RequestInputs {
                    instruction: &episode.instruction,
                    subtasks: &subtasks,
                    memory: &memory,
                    recent_frames: &frames,
                    history: &predicted,
                    step: t,
                    history_window: cfg.history_window,
                },
            )?;
            let ctx = PolicyContext { world, episode, state: &state, step: t, memory: meta.as_ref() };

            let started = Instant::now();
            let mut output = None;
            let mut last_err = String::new();
            for attempt in 0..=cfg.policy_retries {
                let parsed = policy
                    .decide(&request, &ctx)
                    .map_err(|e| e.to_string())
                    .and_then(|raw| parse_output(&raw, cfg.parse_mode).map_err(|e| e.to_string()));
                match parsed {
                    Ok(o) => {
                        output = Some(o);
                        break;
                    }
                    Err(e) => {
                        log::warn!("{} step {t} attempt {}: {e}", episode.id, attempt + 1);
                        last_err = e;
                    }
                }
            }
            let Some(output) = output else {
                log::error!("{} step {t}: policy failed, ending episode: {last_err}", episode.id);
                failure = Some(format!("step {t}: {last_err}"));
                break;
            };
            let latency_ms = started.elapsed().as_secs_f64() * 1000.0;

            let action = output.action;
            if output.decision_thought.to_ascii_lowercase().contains("subtask complete") {
                subtasks.advance();
            }
            step_logs.push(StepLog {
                step: t,
                action,
                memory_thought: output.memory_thought.clone(),
                decision_thought: output.decision_thought.clone(),
                latency_ms,
            });
            predicted.push(action);
            steps.push(output);

            state = step(world, &state, action, &cfg.dynamics)?;
            if state.collided {
                collisions += 1;
            }
            trajectory.push(state.pose);
            if action == ActionType::Stop {
                termination = Termination::Stopped;
                break;
            }
            if cfg.deviation_enabled
                && check_deviation_with(&predicted, &episode.label_actions, cfg.tau, cfg.deviation_mode)
            {
                termination = Termination::Deviated;
                break;
            }
        }

        let final_pose = state.pose;
        let ne = navigation_error(final_pose.xy(), episode.target);
        let (subtasks_completed, subtask_total) =
            independent_success(&trajectory, &episode.subtask_waypoints, cfg.success_radius);
        Ok(EpisodeResult {
            episode_id: episode.id.clone(),
            scene_class: episode.scene_class,
            memory_selection: cfg.memory_selection,
            trajectory,
            steps,
            final_pose,
            termination,
            ne,
            success: success(ne, cfg.success_radius),
            subtasks_completed,
            subtask_total,
            memory_hit,
            collisions,
            target: episode.target,
            subtask_waypoints: episode.subtask_waypoints.clone(),
            failure,
            step_logs,
        })
    }
}
