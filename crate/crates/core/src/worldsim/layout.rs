//! Environment layouts and their plain-text configuration.
//!
//! All four arenas are built from textured wall segments. Dimensions are in
//! world units where one unit is roughly a room's "short side / 3".

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use super::geometry::{point_in_polygon, point_segment_distance, segments_intersect, Vec2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutKind {
    StarMazeArm,
    StarMazeRandom,
    WallGap,
    FourColoredRooms,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 4] = [
        LayoutKind::StarMazeArm,
        LayoutKind::StarMazeRandom,
        LayoutKind::WallGap,
        LayoutKind::FourColoredRooms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::StarMazeArm => "starmaze-arm",
            LayoutKind::StarMazeRandom => "starmaze-random",
            LayoutKind::WallGap => "wallgap",
            LayoutKind::FourColoredRooms => "fourrooms",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            LayoutKind::StarMazeArm => 0,
            LayoutKind::StarMazeRandom => 1,
            LayoutKind::WallGap => 2,
            LayoutKind::FourColoredRooms => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Episode step limit of the original environments.
    pub fn default_max_steps(self) -> usize {
        match self {
            LayoutKind::StarMazeArm | LayoutKind::StarMazeRandom => 1500,
            LayoutKind::WallGap => 300,
            LayoutKind::FourColoredRooms => 250,
        }
    }

    pub fn is_star_maze(self) -> bool {
        matches!(self, LayoutKind::StarMazeArm | LayoutKind::StarMazeRandom)
    }
}

impl std::fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "starmaze-arm" | "starmazearm" | "starmaze" => Ok(LayoutKind::StarMazeArm),
            "starmaze-random" | "starmazerandom" => Ok(LayoutKind::StarMazeRandom),
            "wallgap" | "wall-gap" => Ok(LayoutKind::WallGap),
            "fourrooms" | "fourcoloredrooms" | "four-colored-rooms" => {
                Ok(LayoutKind::FourColoredRooms)
            }
            other => Err(Error::Config(format!("unknown layout '{other}'"))),
        }
    }
}

/// Wall texture: a base color with vertical stripes along the wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub color: [f64; 3],
    /// Stripe period in world units along the wall.
    pub stripe: f64,
    /// Brightness reduction of the dark stripes, in `[0, 1)`.
    pub contrast: f64,
}

impl Texture {
    pub const fn plain(color: [f64; 3]) -> Self {
        Self {
            color,
            stripe: 0.0,
            contrast: 0.0,
        }
    }

    pub const fn striped(color: [f64; 3], stripe: f64, contrast: f64) -> Self {
        Self {
            color,
            stripe,
            contrast,
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self {
            color: self.color.map(|c| c * k),
            ..self
        }
    }

    /// Color at distance `u` along the wall.
    pub fn sample(&self, u: f64) -> [u8; 3] {
        let k = if self.stripe > 0.0 && (u / self.stripe).floor().rem_euclid(2.0) == 1.0 {
            1.0 - self.contrast
        } else {
            1.0
        };
        self.color.map(|c| (c * k).round().clamp(0.0, 255.0) as u8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wall {
    pub a: Vec2,
    pub b: Vec2,
    pub height: f64,
    /// Seen from the left of `a → b`.
    pub front: Texture,
    pub back: Texture,
}

impl Wall {
    fn new(a: Vec2, b: Vec2, height: f64, front: Texture, back: Texture) -> Self {
        Self {
            a,
            b,
            height,
            front,
            back,
        }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Floor {
    Plain([u8; 3]),
    Checker {
        size: f64,
        dark: [u8; 3],
        light: [u8; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetRule {
    Fixed(Vec2),
    Within(Vec<Vec2>),
}

/// Tunable layout parameters, loadable from `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutConfig {
    pub kind: LayoutKind,
    pub max_steps: usize,
    pub step_len: f64,
    pub target_radius: f64,
    pub agent_radius: f64,
    pub fov_deg: f64,
    pub wall_height: f64,
    pub camera_height: f64,
    pub cube_size: f64,
    pub star_radius: f64,
    pub arm_width: f64,
    pub arm_length: f64,
    pub target_arm: usize,
    pub checker_size: f64,
    pub room_width: f64,
    pub room_height: f64,
    pub gap_width: f64,
}

impl LayoutConfig {
    pub fn new(kind: LayoutKind) -> Self {
        let (room_width, room_height) = match kind {
            LayoutKind::WallGap => (4.0, 3.0),
            _ => (1.5, 1.5),
        };
        Self {
            kind,
            max_steps: kind.default_max_steps(),
            step_len: 0.15,
            target_radius: 0.3,
            agent_radius: 0.15,
            fov_deg: 60.0,
            wall_height: 1.0,
            camera_height: 0.5,
            cube_size: 0.4,
            star_radius: 1.6,
            arm_width: 1.4,
            arm_length: 1.6,
            target_arm: 0,
            checker_size: 0.5,
            room_width,
            room_height,
            gap_width: 1.0,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Parses `key = value` lines; `#` starts a comment. `layout` must be
    /// given, every other key is optional. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind = pairs
            .iter()
            .find(|(k, _)| k == "layout")
            .ok_or_else(|| Error::Config("missing 'layout' key".into()))?
            .1
            .parse::<LayoutKind>()?;
        let mut cfg = Self::new(kind);
        for (k, v) in &pairs {
            let num = || -> Result<f64> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Config(format!("{k}: '{v}' is not a number")))
            };
            let int = || -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{k}: '{v}' is not an integer")))
            };
            match k.as_str() {
                "layout" => {}
                "max_steps" => cfg.max_steps = int()?,
                "step_len" => cfg.step_len = num()?,
                "target_radius" => cfg.target_radius = num()?,
                "agent_radius" => cfg.agent_radius = num()?,
                "fov_deg" => cfg.fov_deg = num()?,
                "wall_height" => cfg.wall_height = num()?,
                "camera_height" => cfg.camera_height = num()?,
                "cube_size" => cfg.cube_size = num()?,
                "star_radius" => cfg.star_radius = num()?,
                "arm_width" => cfg.arm_width = num()?,
                "arm_length" => cfg.arm_length = num()?,
                "target_arm" => cfg.target_arm = int()?,
                "checker_size" => cfg.checker_size = num()?,
                "room_width" => cfg.room_width = num()?,
                "room_height" => cfg.room_height = num()?,
                "gap_width" => cfg.gap_width = num()?,
                other => return Err(Error::Config(format!("unknown layout key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "layout = {}", self.kind);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        for (k, v) in [
            ("step_len", self.step_len),
            ("target_radius", self.target_radius),
            ("agent_radius", self.agent_radius),
            ("fov_deg", self.fov_deg),
            ("wall_height", self.wall_height),
            ("camera_height", self.camera_height),
            ("cube_size", self.cube_size),
            ("star_radius", self.star_radius),
            ("arm_width", self.arm_width),
            ("arm_length", self.arm_length),
            ("checker_size", self.checker_size),
            ("room_width", self.room_width),
            ("room_height", self.room_height),
            ("gap_width", self.gap_width),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "target_arm = {}", self.target_arm);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_len", self.step_len),
            ("target_radius", self.target_radius),
            ("agent_radius", self.agent_radius),
            ("wall_height", self.wall_height),
            ("camera_height", self.camera_height),
            ("cube_size", self.cube_size),
            ("star_radius", self.star_radius),
            ("arm_width", self.arm_width),
            ("arm_length", self.arm_length),
            ("checker_size", self.checker_size),
            ("room_width", self.room_width),
            ("room_height", self.room_height),
            ("gap_width", self.gap_width),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config("fov_deg must lie in (0, 180)".into()));
        }
        if self.camera_height >= self.wall_height {
            return Err(Error::Config("camera must be below the wall tops".into()));
        }
        if self.target_arm >= 5 {
            return Err(Error::Config("target_arm must be in 0..5".into()));
        }
        let edge = 2.0 * self.star_radius * (PI / 5.0).sin();
        if self.arm_width >= edge {
            return Err(Error::Config(
                "arm_width must be below the star's edge length".into(),
            ));
        }
        if self.gap_width >= self.room_width {
            return Err(Error::Config("gap_width must be below room_width".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Layout> {
        self.validate()?;
        Ok(match self.kind {
            LayoutKind::StarMazeArm | LayoutKind::StarMazeRandom => build_star_maze(self),
            LayoutKind::WallGap => build_wall_gap(self),
            LayoutKind::FourColoredRooms => build_four_rooms(self),
        })
    }
}

/// A built arena.
#[derive(Debug, Clone)]
pub struct Layout {
    config: LayoutConfig,
    walls: Vec<Wall>,
    /// Rendered but not collidable (distant landmarks).
    decor: Vec<Wall>,
    boundary: Vec<Vec2>,
    spawn_region: Vec<Vec2>,
    target_rule: TargetRule,
    floor: Floor,
    sky: [u8; 3],
}

impl Layout {
    pub fn new(kind: LayoutKind) -> Self {
        LayoutConfig::new(kind)
            .build()
            .expect("default layout configuration is valid")
    }

    pub fn kind(&self) -> LayoutKind {
        self.config.kind
    }

    pub fn config(&self) -> &LayoutConfig {
        &self.config
    }

    pub fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn decor(&self) -> &[Wall] {
        &self.decor
    }

    pub fn boundary(&self) -> &[Vec2] {
        &self.boundary
    }

    pub fn spawn_region(&self) -> &[Vec2] {
        &self.spawn_region
    }

    pub fn target_rule(&self) -> &TargetRule {
        &self.target_rule
    }

    pub fn floor(&self) -> &Floor {
        &self.floor
    }

    pub fn sky(&self) -> [u8; 3] {
        self.sky
    }

    /// Axis-aligned bounding box of the free area.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.boundary {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }

    /// Largest distance between two boundary vertices.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, a) in self.boundary.iter().enumerate() {
            for b in &self.boundary[i + 1..] {
                d = d.max(a.distance(*b));
            }
        }
        d
    }

    fn clearance_ok(&self, p: Vec2, clearance: f64) -> bool {
        point_in_polygon(p, &self.boundary)
            && self
                .walls
                .iter()
                .all(|w| point_segment_distance(p, w.a, w.b) >= clearance)
    }

    /// Inside the arena and at least the agent radius from every wall.
    pub fn is_free(&self, p: Vec2) -> bool {
        self.clearance_ok(p, self.config.agent_radius)
    }

    /// Whether the agent can move straight from `p` to `q`.
    pub fn path_free(&self, p: Vec2, q: Vec2) -> bool {
        self.is_free(q)
            && !self
                .walls
                .iter()
                .any(|w| segments_intersect(p, q, w.a, w.b))
    }

    /// Wall closest to `p`.
    pub fn nearest_wall(&self, p: Vec2) -> Option<&Wall> {
        self.walls.iter().min_by(|a, b| {
            point_segment_distance(p, a.a, a.b).total_cmp(&point_segment_distance(p, b.a, b.b))
        })
    }

    pub(crate) fn sample_in<R: Rng>(&self, rng: &mut R, region: &[Vec2], clearance: f64) -> Vec2 {
        let (mut lo, mut hi) = (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in region {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        loop {
            let p = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if point_in_polygon(p, region) && self.clearance_ok(p, clearance) {
                return p;
            }
        }
    }

    /// Walls of the target cube centered at `c`.
    pub fn cube_walls(&self, c: Vec2) -> [Wall; 4] {
        let h = self.config.cube_size / 2.0;
        let red = Texture::plain([200.0, 30.0, 30.0]);
        let corners = [
            c + Vec2::new(-h, -h),
            c + Vec2::new(h, -h),
            c + Vec2::new(h, h),
            c + Vec2::new(-h, h),
        ];
        // Counter-clockwise corners put the inside on the left, so the
        // visible faces are the back sides.
        let shade = [1.0, 0.85, 0.7, 0.9];
        std::array::from_fn(|i| {
            Wall::new(
                corners[i],
                corners[(i + 1) % 4],
                self.config.cube_size,
                red,
                red.scaled(shade[i]),
            )
        })
    }
}

fn rect(lo: Vec2, hi: Vec2) -> Vec<Vec2> {
    vec![lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)]
}

fn build_star_maze(cfg: &LayoutConfig) -> Layout {
    let h = cfg.wall_height;
    let center_tex = Texture::striped([150.0, 150.0, 150.0], 0.4, 0.2);
    let arm_colors = [
        [80.0, 120.0, 190.0],
        [90.0, 170.0, 110.0],
        [200.0, 180.0, 90.0],
        [150.0, 110.0, 180.0],
        [110.0, 170.0, 175.0],
    ];
    let apothem = cfg.star_radius * (PI / 5.0).cos();
    let half_w = cfg.arm_width / 2.0;

    let mut boundary = Vec::new();
    let mut pentagon = Vec::new();
    let mut walls = Vec::new();
    let mut textures = Vec::new();
    for k in 0..5 {
        let alpha = 2.0 * PI * k as f64 / 5.0;
        let normal = Vec2::from_angle(alpha);
        let tangent = Vec2::new(-normal.y, normal.x);
        let mid = normal * apothem;
        let vertex = Vec2::from_angle(alpha - PI / 5.0) * cfg.star_radius;
        let arm_tex = Texture::striped(arm_colors[k], 0.4, 0.25);
        // The two sides of an arm and the wall segments of the center room
        // differ in brightness, so views along and across an arm differ.
        let side_tex = center_tex.scaled(1.0 - 0.07 * k as f64);
        let open1 = mid - tangent * half_w;
        let open2 = mid + tangent * half_w;
        let out1 = open1 + normal * cfg.arm_length;
        let out2 = open2 + normal * cfg.arm_length;
        pentagon.push(vertex);
        for (p, tex) in [
            (vertex, side_tex),
            (open1, arm_tex),
            (out1, arm_tex.scaled(0.8)),
            (out2, arm_tex.scaled(0.6)),
            (open2, side_tex.scaled(0.9)),
        ] {
            boundary.push(p);
            textures.push(tex);
        }
    }
    for i in 0..boundary.len() {
        let a = boundary[i];
        let b = boundary[(i + 1) % boundary.len()];
        // Boundary runs counter-clockwise: the free side is on the left.
        walls.push(Wall::new(a, b, h, textures[i], textures[i]));
    }
    let target_rule = match cfg.kind {
        LayoutKind::StarMazeArm => {
            let alpha = 2.0 * PI * cfg.target_arm as f64 / 5.0;
            TargetRule::Fixed(Vec2::from_angle(alpha) * (apothem + cfg.arm_length - 0.5))
        }
        _ => TargetRule::Within(boundary.clone()),
    };
    Layout {
        config: cfg.clone(),
        walls,
        decor: Vec::new(),
        boundary,
        spawn_region: pentagon,
        target_rule,
        floor: Floor::Checker {
            size: cfg.checker_size,
            dark: [70, 70, 80],
            light: [175, 175, 165],
        },
        sky: [205, 210, 220],
    }
}

/// Two equal rooms stacked along y, joined by a gap centered at the origin.
/// Geometry and textures are point symmetric about the origin; only the
/// landmark breaks the symmetry.
fn build_wall_gap(cfg: &LayoutConfig) -> Layout {
    let h = cfg.wall_height;
    let (w, rh, g) = (cfg.room_width / 2.0, cfg.room_height, cfg.gap_width / 2.0);
    let tex = Texture::striped([140.0, 150.0, 170.0], 0.5, 0.3);
    let boundary = rect(Vec2::new(-w, -rh), Vec2::new(w, rh));
    let mut walls = Vec::new();
    for i in 0..4 {
        let a = boundary[i];
        let b = boundary[(i + 1) % 4];
        walls.push(Wall::new(a, b, h, tex, tex));
    }
    // Each half of the middle wall starts at the outer side, so the pair is
    // mapped onto itself by the point reflection.
    walls.push(Wall::new(
        Vec2::new(-w, 0.0),
        Vec2::new(-g, 0.0),
        h,
        tex,
        tex,
    ));
    walls.push(Wall::new(Vec2::new(w, 0.0), Vec2::new(g, 0.0), h, tex, tex));

    let lm_tex = Texture::striped([235.0, 225.0, 150.0], 0.3, 0.35);
    let lm_c = Vec2::new(w + 3.0, rh + 4.0);
    let s = 0.6;
    let corners = rect(lm_c - Vec2::new(s, s), lm_c + Vec2::new(s, s));
    let decor = (0..4)
        .map(|i| {
            Wall::new(
                corners[i],
                corners[(i + 1) % 4],
                5.0,
                lm_tex,
                lm_tex.scaled(0.85),
            )
        })
        .collect();

    Layout {
        config: cfg.clone(),
        walls,
        decor,
        spawn_region: rect(Vec2::new(-w, 0.0), Vec2::new(w, rh)),
        target_rule: TargetRule::Within(rect(Vec2::new(-w, -rh), Vec2::new(w, 0.0))),
        boundary,
        floor: Floor::Plain([95, 90, 85]),
        sky: [200, 210, 225],
    }
}

/// 2×2 rooms with doors in the inner walls. Every room has its own hue and
/// every wall of a room its own brightness.
fn build_four_rooms(cfg: &LayoutConfig) -> Layout {
    let h = cfg.wall_height;
    let (rw, rh) = (cfg.room_width, cfg.room_height);
    let g = cfg.gap_width / 2.0;
    // NE, NW, SW, SE
    let hues = [
        [60.0, 90.0, 210.0],
        [60.0, 175.0, 70.0],
        [215.0, 195.0, 50.0],
        [155.0, 70.0, 185.0],
    ];
    let room_of = |p: Vec2| -> usize {
        match (p.x >= 0.0, p.y >= 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        }
    };
    // Brightness by the direction the wall faces into its room: a north wall
    // faces south, etc.
    let tex_for = |room: usize, inward: Vec2| -> Texture {
        let k = if inward.y < -0.5 {
            1.0 // north wall
        } else if inward.x < -0.5 {
            0.76 // east wall
        } else if inward.y > 0.5 {
            0.55 // south wall
        } else {
            0.36 // west wall
        };
        Texture::striped(hues[room], 0.5, 0.2).scaled(k)
    };
    let side_tex = |a: Vec2, b: Vec2| -> (Texture, Texture) {
        let d = b - a;
        let len = d.norm();
        let left = Vec2::new(-d.y / len, d.x / len);
        let mid = (a + b) * 0.5;
        let front_room = room_of(mid + left * 0.01);
        let back_room = room_of(mid - left * 0.01);
        (tex_for(front_room, left), tex_for(back_room, -left))
    };

    let mut segments: Vec<(Vec2, Vec2)> = Vec::new();
    // Outer walls, counter-clockwise, split at the room corners.
    let outer = [
        Vec2::new(-rw, -rh),
        Vec2::new(0.0, -rh),
        Vec2::new(rw, -rh),
        Vec2::new(rw, 0.0),
        Vec2::new(rw, rh),
        Vec2::new(0.0, rh),
        Vec2::new(-rw, rh),
        Vec2::new(-rw, 0.0),
    ];
    for i in 0..outer.len() {
        segments.push((outer[i], outer[(i + 1) % outer.len()]));
    }
    // Inner walls with one centered door per half.
    let (dx, dy) = (rw / 2.0, rh / 2.0);
    for (lo, hi) in [(-rh, -dy - g), (-dy + g, 0.0), (0.0, dy - g), (dy + g, rh)] {
        segments.push((Vec2::new(0.0, lo), Vec2::new(0.0, hi)));
    }
    for (lo, hi) in [(-rw, -dx - g), (-dx + g, 0.0), (0.0, dx - g), (dx + g, rw)] {
        segments.push((Vec2::new(lo, 0.0), Vec2::new(hi, 0.0)));
    }
    let walls = segments
        .into_iter()
        .map(|(a, b)| {
            let (front, back) = side_tex(a, b);
            Wall::new(a, b, h, front, back)
        })
        .collect();
    let boundary = rect(Vec2::new(-rw, -rh), Vec2::new(rw, rh));
    Layout {
        config: cfg.clone(),
        walls,
        decor: Vec::new(),
        spawn_region: boundary.clone(),
        target_rule: TargetRule::Within(boundary.clone()),
        boundary,
        floor: Floor::Plain([100, 100, 100]),
        sky: [190, 190, 190],
    }
}
