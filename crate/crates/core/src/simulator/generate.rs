//! Procedural worlds and episodes, fully determined by `(seed, scene_class)` and the
//! episode index.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    heading_from_steps, scene_id, step, ActionType, Bounds, DynamicsConfig, Episode, Obstacle, Pose2D,
    RobotState, SceneClass, SimError, Terrain, World,
};
use crate::agent::{oracle_action, OracleConfig};
use crate::geometry::Rgb;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub episodes: usize,
    pub dynamics: DynamicsConfig,
    pub oracle: OracleConfig,
    /// Minimum straight-line distance between start and target.
    pub min_start_target: f64,
    pub min_leg: f64,
    pub max_leg: f64,
    /// Upper bound on label sequence length, STOP included.
    pub max_label_steps: usize,
    pub max_attempts: usize,
}

impl GenConfig {
    /// Path length coverable by the label sequence after `turns` rotations and the final STOP.
    fn forward_budget(&self, turns: usize) -> f64 {
        self.max_label_steps.saturating_sub(turns + 1) as f64 * self.dynamics.forward_step
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            dynamics: DynamicsConfig::default(),
            oracle: OracleConfig::default(),
            min_start_target: 6.5,
            min_leg: 1.5,
            max_leg: 4.5,
            max_label_steps: 48,
            max_attempts: 2000,
        }
    }
}

const PALETTE: [(&str, Rgb); 7] = [
    ("red", [200, 40, 40]),
    ("green", [40, 160, 60]),
    ("blue", [40, 70, 200]),
    ("yellow", [230, 200, 40]),
    ("orange", [240, 140, 30]),
    ("purple", [140, 60, 170]),
    ("white", [235, 235, 235]),
];

struct ClassProfile {
    count: usize,
    radius: (f64, f64),
    height: (f64, f64),
    nouns: &'static [&'static str],
    ground: Rgb,
}

fn profile(class: SceneClass) -> ClassProfile {
    match class {
        SceneClass::Farm => ClassProfile {
            count: 13,
            radius: (0.3, 0.7),
            height: (0.8, 2.0),
            nouns: &["haystack", "barrel", "water tank", "scarecrow", "person"],
            ground: [120, 90, 60],
        },
        SceneClass::Greenhouse => ClassProfile {
            count: 14,
            radius: (0.25, 0.5),
            height: (0.6, 1.4),
            nouns: &["planter", "pillar", "seedling rack", "watering can"],
            ground: [150, 120, 90],
        },
        SceneClass::Forest => ClassProfile {
            count: 18,
            radius: (0.15, 0.4),
            height: (2.5, 5.0),
            nouns: &["tree", "stump", "log pile"],
            ground: [80, 70, 50],
        },
        SceneClass::Mountain => ClassProfile {
            count: 14,
            radius: (0.4, 0.9),
            height: (0.5, 1.5),
            nouns: &["rock", "boulder", "cairn"],
            ground: [110, 105, 95],
        },
        SceneClass::Garden => ClassProfile {
            count: 13,
            radius: (0.3, 0.6),
            height: (0.5, 1.2),
            nouns: &["shrub", "flower bed", "fountain", "bench"],
            ground: [90, 130, 70],
        },
        SceneClass::Village => ClassProfile {
            count: 13,
            radius: (0.7, 1.2),
            height: (2.0, 3.5),
            nouns: &["house", "well", "shed", "hut"],
            ground: [140, 130, 110],
        },
    }
}

/// SplitMix64 finalizer over the seed parts, used to derive independent RNG streams.
fn stream_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const WORLD_STREAM: u64 = 0;
const EPISODE_STREAM: u64 = 1;

pub(crate) fn build_world(seed: u64, class: SceneClass) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, class.index(), WORLD_STREAM]));
    let prof = profile(class);
    let bounds = Bounds { min_x: -10.0, min_y: -10.0, max_x: 10.0, max_y: 10.0 };
    let inner = bounds.shrink(1.0);

    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(prof.count);
    let mut used_names = std::collections::HashSet::new();
    let mut tries = 0;
    while obstacles.len() < prof.count && tries < 10_000 {
        tries += 1;
        let radius = rng.random_range(prof.radius.0..prof.radius.1);
        let center = [rng.random_range(inner.min_x..inner.max_x), rng.random_range(inner.min_y..inner.max_y)];
        let height = rng.random_range(prof.height.0..prof.height.1);
        let (color_name, color) = *PALETTE.choose(&mut rng).unwrap();
        let noun = *prof.nouns.choose(&mut rng).unwrap();
        let name = format!("{color_name} {noun}");
        let separated = obstacles.iter().all(|o| {
            (o.center[0] - center[0]).hypot(o.center[1] - center[1]) > o.radius + radius + 1.0
        });
        if separated && !used_names.contains(&name) {
            used_names.insert(name.clone());
            obstacles.push(Obstacle { name, center, radius, height, color });
        }
    }

    let terrain = if class == SceneClass::Mountain {
        let (nx, ny, cell) = (21usize, 21usize, 1.0);
        let origin = [bounds.min_x, bounds.min_y];
        let hills: Vec<([f64; 2], f64, f64)> = (0..4)
            .map(|_| {
                (
                    [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)],
                    rng.random_range(0.4..1.5),
                    rng.random_range(2.0..4.0),
                )
            })
            .collect();
        let mut heights = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = origin[0] + i as f64 * cell;
                let y = origin[1] + j as f64 * cell;
                let h: f64 = hills
                    .iter()
                    .map(|(c, a, s)| a * (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * s * s)).exp())
                    .sum();
                heights.push(h);
            }
        }
        Terrain::Grid { origin, cell, nx, ny, heights }
    } else {
        Terrain::Flat
    };

    World { seed, scene_class: class, obstacles, ground_color: prof.ground, bounds, terrain }
}

/// Builds the world for `(seed, scene_class)` and `cfg.episodes` episodes in it. Each
/// episode's label actions come from running the scripted oracle to success.
pub fn generate_world(seed: u64, class: SceneClass, cfg: &GenConfig) -> Result<(World, Vec<Episode>), SimError> {
    let world = build_world(seed, class);
    let episodes = (0..cfg.episodes).map(|i| generate_episode(&world, i, cfg)).collect::<Result<_, _>>()?;
    Ok((world, episodes))
}

/// Subtask counts cycle through 2, 3, 4, 5.
pub fn generate_episode(world: &World, index: usize, cfg: &GenConfig) -> Result<Episode, SimError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(stream_seed(&[world.seed, world.scene_class.index(), EPISODE_STREAM, index as u64]));
    let subtasks = 2 + index % 4;
    let id = format!("{}-{index:03}", scene_id(world.scene_class, world.seed));
    for _ in 0..cfg.max_attempts {
        if let Some(ep) = try_episode(world, &mut rng, subtasks, &id, cfg) {
            return Ok(ep);
        }
    }
    Err(SimError::UnreachableTarget { scene: world.scene_id(), episode: index, attempts: cfg.max_attempts })
}

fn clear_point(world: &World, p: [f64; 2], clearance: f64) -> bool {
    world.bounds.shrink(0.5).contains(p) && world.obstacles.iter().all(|o| o.clearance(p) >= clearance)
}


/// A free point just outside `o`, with the leg from `prev` (if any) inside `legs`. The point
/// lies on the side of `o` facing `prev`.
fn standoff_point(world: &World, rng: &mut ChaCha8Rng, o: &Obstacle, prev: Option<[f64; 2]>, legs: (f64, f64)) -> Option<[f64; 2]> {
    use std::f64::consts::{FRAC_PI_3, PI};
    for _ in 0..8 {
        let a: f64 = match prev {
            Some(p) => (p[1] - o.center[1]).atan2(p[0] - o.center[0]) + rng.random_range(-FRAC_PI_3..FRAC_PI_3),
            None => rng.random_range(-PI..PI),
        };
        let standoff = o.radius + rng.random_range(0.6..1.0);
        let w = [o.center[0] + standoff * a.cos(), o.center[1] + standoff * a.sin()];
        if clear_point(world, w, 0.3) && prev.is_none_or(|p| (legs.0..=legs.1).contains(&dist(p, w))) {
            return Some(w);
        }
    }
    None
}

/// Landmarks are chosen one after another among obstacles a legal leg away from the
/// previous waypoint; the start is drawn on an annulus around the first waypoint. The
/// planned path length is capped so the label sequence fits in `max_label_steps`,
/// reserving a few rotations per waypoint.
fn try_episode(world: &World, rng: &mut ChaCha8Rng, subtasks: usize, id: &str, cfg: &GenConfig) -> Option<Episode> {
    if world.obstacles.len() < subtasks {
        return None;
    }
    let reserved_turns = 3 * (subtasks + 1);
    let budget = cfg.forward_budget(reserved_turns);
    // the start leg is drawn last; keep room for its minimum length
    let mut remaining = budget - cfg.min_leg;
    let mut landmarks: Vec<&Obstacle> = Vec::with_capacity(subtasks);
    let mut waypoints: Vec<[f64; 2]> = Vec::with_capacity(subtasks);
    for i in 0..subtasks {
        let prev = waypoints.last().copied();
        let later_legs = (subtasks - 1 - i) as f64 * cfg.min_leg;
        let legs = (cfg.min_leg, cfg.max_leg.min(remaining - later_legs));
        if prev.is_some() && legs.1 < legs.0 {
            return None;
        }
        let candidates: Vec<&Obstacle> = world
            .obstacles
            .iter()
            .filter(|o| !landmarks.iter().any(|l| l.name == o.name))
            .filter(|o| {
                prev.is_none_or(|p| {
                    let d = dist(p, o.center);
                    d >= legs.0 - o.radius - 1.0 && d <= legs.1 + o.radius + 1.0
                })
            })
            .collect();
        let o = *candidates.choose(rng)?;
        let w = standoff_point(world, rng, o, prev, legs)?;
        if let Some(p) = prev {
            remaining -= dist(p, w);
        }
        landmarks.push(o);
        waypoints.push(w);
    }
    let max_first = cfg.max_leg.min(remaining + cfg.min_leg);
    let r = rng.random_range(cfg.min_leg..=max_first.max(cfg.min_leg));
    let a: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let start = [waypoints[0][0] + r * a.cos(), waypoints[0][1] + r * a.sin()];
    if !world.bounds.shrink(1.0).contains(start) || !clear_point(world, start, 0.5) {
        return None;
    }
    let target = *waypoints.last().unwrap();
    if dist(start, target) < cfg.min_start_target {
        return None;
    }
    let turns = (std::f64::consts::TAU / cfg.dynamics.rotate_step).round().max(1.0) as i64;
    let heading = heading_from_steps(rng.random_range(0..turns), cfg.dynamics.rotate_step);
    let start_pose = Pose2D::new(start[0], start[1], heading);

    let labels = oracle_labels(world, start_pose, &waypoints, cfg)?;
    Some(Episode {
        id: id.to_string(),
        scene_class: world.scene_class,
        instruction: instruction_text(rng, &landmarks),
        start: start_pose,
        target,
        label_actions: labels,
        subtask_waypoints: waypoints,
    })
}

/// Runs the scripted oracle; `None` on collision or if it needs too many steps.
fn oracle_labels(world: &World, start: Pose2D, waypoints: &[[f64; 2]], cfg: &GenConfig) -> Option<Vec<ActionType>> {
    let mut state = RobotState::at(start);
    let mut cursor = 0;
    let mut labels = Vec::new();
    while labels.len() < cfg.max_label_steps {
        let a = oracle_action(&state.pose, waypoints, &mut cursor, &cfg.oracle);
        labels.push(a);
        if a == ActionType::Stop {
            return Some(labels);
        }
        state = step(world, &state, a, &cfg.dynamics).ok()?;
        if state.collided {
            return None;
        }
    }
    None
}

fn instruction_text(rng: &mut ChaCha8Rng, landmarks: &[&Obstacle]) -> String {
    const FIRST: [&str; 4] = ["Go to the", "Walk to the", "Head toward the", "Move to the"];
    const MIDDLE: [&str; 4] = ["approach the", "walk over to the", "head to the", "go to the"];
    const LAST: [&str; 3] = ["stop next to the", "stop near the", "stop beside the"];
    let n = landmarks.len();
    let parts: Vec<String> = landmarks
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let verb = if i == 0 {
                FIRST.choose(rng).unwrap()
            } else if i + 1 == n {
                LAST.choose(rng).unwrap()
            } else {
                MIDDLE.choose(rng).unwrap()
            };
            format!("{verb} {}", o.name)
        })
        .collect();
    format!("{}.", parts.join(", then "))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
