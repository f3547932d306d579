use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::Rgb;

pub const SKY_COLOR: Rgb = [135, 206, 235];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneClass {
    Farm,
    Greenhouse,
    Forest,
    Mountain,
    Garden,
    Village,
}

impl SceneClass {
    pub const ALL: [SceneClass; 6] = [
        SceneClass::Farm,
        SceneClass::Greenhouse,
        SceneClass::Forest,
        SceneClass::Mountain,
        SceneClass::Garden,
        SceneClass::Village,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::Farm => "farm",
            SceneClass::Greenhouse => "greenhouse",
            SceneClass::Forest => "forest",
            SceneClass::Mountain => "mountain",
            SceneClass::Garden => "garden",
            SceneClass::Village => "village",
        }
    }

    pub fn index(self) -> u64 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u64
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneClass {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == t)
            .ok_or_else(|| SimError::UnknownSceneClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionType {
    #[serde(rename = "FORWARD")]
    Forward,
    #[serde(rename = "LEFT_ROTATE")]
    LeftRotate,
    #[serde(rename = "RIGHT_ROTATE")]
    RightRotate,
    #[serde(rename = "STOP")]
    Stop,
}

impl ActionType {
    pub const ALL: [ActionType; 4] =
        [ActionType::Forward, ActionType::LeftRotate, ActionType::RightRotate, ActionType::Stop];

    pub fn name(self) -> &'static str {
        match self {
            ActionType::Forward => "FORWARD",
            ActionType::LeftRotate => "LEFT_ROTATE",
            ActionType::RightRotate => "RIGHT_ROTATE",
            ActionType::Stop => "STOP",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == s)
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Planar pose; serialized as `[x, y, heading]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.x - p[0]).hypot(self.y - p[1])
    }
}

impl From<[f64; 3]> for Pose2D {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Pose2D> for [f64; 3] {
    fn from(p: Pose2D) -> Self {
        [p.x, p.y, p.heading]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn shrink(&self, margin: f64) -> Bounds {
        Bounds {
            min_x: self.min_x + margin,
            min_y: self.min_y + margin,
            max_x: self.max_x - margin,
            max_y: self.max_y - margin,
        }
    }
}

/// Vertical colored cylinder standing on the terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub name: String,
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
    pub color: Rgb,
}

impl Obstacle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }

    /// Distance from a point to the cylinder's footprint boundary (negative inside).
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius
    }
}

/// Ground height table. Flat worlds sit at z = 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Terrain {
    #[default]
    Flat,
    /// Bilinearly interpolated grid, clamped at its border.
    Grid { origin: [f64; 2], cell: f64, nx: usize, ny: usize, heights: Vec<f64> },
}

impl Terrain {
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        match self {
            Terrain::Flat => 0.0,
            Terrain::Grid { origin, cell, nx, ny, heights } => {
                let gx = ((x - origin[0]) / cell).clamp(0.0, (*nx - 1) as f64);
                let gy = ((y - origin[1]) / cell).clamp(0.0, (*ny - 1) as f64);
                let i0 = (gx.floor() as usize).min(nx - 2);
                let j0 = (gy.floor() as usize).min(ny - 2);
                let fx = gx - i0 as f64;
                let fy = gy - j0 as f64;
                let h = |i: usize, j: usize| heights[j * nx + i];
                let a = h(i0, j0) * (1.0 - fx) + h(i0 + 1, j0) * fx;
                let b = h(i0, j0 + 1) * (1.0 - fx) + h(i0 + 1, j0 + 1) * fx;
                a * (1.0 - fy) + b * fy
            }
        }
    }

    pub fn max_height(&self) -> f64 {
        match self {
            Terrain::Flat => 0.0,
            Terrain::Grid { heights, .. } => heights.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Terrain::Flat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub scene_class: SceneClass,
    pub obstacles: Vec<Obstacle>,
    pub ground_color: Rgb,
    pub bounds: Bounds,
    pub terrain: Terrain,
}

impl World {
    pub fn scene_id(&self) -> String {
        scene_id(self.scene_class, self.seed)
    }

    pub fn to_file(&self) -> WorldFile {
        WorldFile {
            seed: self.seed,
            scene_class: self.scene_class,
            bounds: self.bounds,
            ground_color: self.ground_color,
            obstacles: self.obstacles.clone(),
        }
    }

    pub fn is_free(&self, p: [f64; 2]) -> bool {
        self.bounds.contains(p) && !self.obstacles.iter().any(|o| o.contains(p))
    }
}

pub fn scene_id(class: SceneClass, seed: u64) -> String {
    format!("{class}-s{seed}")
}

/// On-disk world description. The terrain table is not stored; it is regenerated from
/// `(seed, scene_class)` together with everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub seed: u64,
    pub scene_class: SceneClass,
    pub bounds: Bounds,
    pub ground_color: Rgb,
    pub obstacles: Vec<Obstacle>,
}

impl WorldFile {
    /// Regenerates the full world and checks it against the stored description.
    pub fn into_world(self) -> Result<World, SimError> {
        let world = super::generate::build_world(self.seed, self.scene_class);
        if world.to_file() != self {
            return Err(SimError::WorldMismatch { seed: self.seed, scene: self.scene_class.to_string() });
        }
        Ok(world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub scene_class: SceneClass,
    pub instruction: String,
    pub start: Pose2D,
    pub target: [f64; 2],
    pub label_actions: Vec<ActionType>,
    pub subtask_waypoints: Vec<[f64; 2]>,
}

impl Episode {
    pub fn subtask_count(&self) -> usize {
        self.subtask_waypoints.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| Err(SimError::InvalidEpisode { id: self.id.clone(), reason: reason.into() });
        if self.label_actions.last() != Some(&ActionType::Stop) {
            return bad("label_actions must end with STOP");
        }
        match self.subtask_waypoints.last() {
            None => return bad("no subtask waypoints"),
            Some(w) if *w != self.target => return bad("final waypoint differs from target"),
            _ => {}
        }
        if self.instruction.trim().is_empty() {
            return bad("empty instruction");
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, SimError> {
        let ep: Episode = serde_json::from_str(line)
            .map_err(|e| SimError::InvalidEpisode { id: "?".into(), reason: e.to_string() })?;
        ep.validate()?;
        Ok(ep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_class_parse() {
        assert_eq!("Forest".parse::<SceneClass>().unwrap(), SceneClass::Forest);
        let err = "swamp".parse::<SceneClass>().unwrap_err();
        assert!(err.to_string().contains("swamp"));
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn episode_json_has_exact_fields() {
        let ep = Episode {
            id: "farm-s1-000".into(),
            scene_class: SceneClass::Farm,
            instruction: "Go to the red barrel.".into(),
            start: Pose2D::new(1.0, 2.0, 0.5),
            target: [3.0, 4.0],
            label_actions: vec![ActionType::Forward, ActionType::LeftRotate, ActionType::Stop],
            subtask_waypoints: vec![[3.0, 4.0]],
        };
        let v: serde_json::Value = serde_json::from_str(&ep.to_json_line()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["id", "instruction", "label_actions", "scene_class", "start", "subtask_waypoints", "target"]
        );
        assert_eq!(v["start"], serde_json::json!([1.0, 2.0, 0.5]));
        assert_eq!(v["label_actions"], serde_json::json!(["FORWARD", "LEFT_ROTATE", "STOP"]));
        assert_eq!(Episode::from_json_line(&ep.to_json_line()).unwrap(), ep);
    }

    #[test]
    fn episode_validation() {
        let mut ep = Episode {
            id: "x".into(),
            scene_class: SceneClass::Farm,
            instruction: "Go.".into(),
            start: Pose2D::new(0.0, 0.0, 0.0),
            target: [1.0, 1.0],
            label_actions: vec![ActionType::Forward],
            subtask_waypoints: vec![[1.0, 1.0]],
        };
        assert!(ep.validate().is_err());
        ep.label_actions.push(ActionType::Stop);
        assert!(ep.validate().is_ok());
        ep.subtask_waypoints = vec![[0.0, 1.0]];
        assert!(ep.validate().is_err());
    }

    #[test]
    fn grid_terrain_interpolates() {
        let t = Terrain::Grid { origin: [0.0, 0.0], cell: 1.0, nx: 2, ny: 2, heights: vec![0.0, 1.0, 2.0, 3.0] };
        assert_eq!(t.height_at(0.0, 0.0), 0.0);
        assert_eq!(t.height_at(1.0, 1.0), 3.0);
        assert_eq!(t.height_at(0.5, 0.5), 1.5);
        assert_eq!(t.height_at(-5.0, 9.0), 2.0);
    }
}
