//! Discrete-step shape physics on a pixel grid. Entities move one pixel
//! per step along an axis; walls bounce, two moving entities stop each
//! other, and a moving entity pushes a static one by handing over its
//! velocity. Every interaction is logged, which is what makes captions,
//! explanations, and predictions regenerable and machine-checkable.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorKind {
    Red,
    Blue,
    Green,
    Yellow,
}

impl ColorKind {
    pub fn name(self) -> &'static str {
        match self {
            ColorKind::Red => "red",
            ColorKind::Blue => "blue",
            ColorKind::Green => "green",
            ColorKind::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            ColorKind::Red => [0.9, 0.1, 0.1],
            ColorKind::Blue => [0.1, 0.2, 0.9],
            ColorKind::Green => [0.1, 0.8, 0.2],
            ColorKind::Yellow => [0.95, 0.9, 0.1],
        }
    }

    pub const ALL: [ColorKind; 4] = [
        ColorKind::Red,
        ColorKind::Blue,
        ColorKind::Green,
        ColorKind::Yellow,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn from_velocity(vx: i64, vy: i64) -> Option<Direction> {
        match (vx.signum(), vy.signum()) {
            (-1, 0) => Some(Direction::Left),
            (1, 0) => Some(Direction::Right),
            (0, -1) => Some(Direction::Up),
            (0, 1) => Some(Direction::Down),
            _ => None,
        }
    }

    pub const ALL: [Direction; 4] = [
        Direction::Right,
        Direction::Left,
        Direction::Up,
        Direction::Down,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wall {
    Left,
    Right,
    Top,
    Bottom,
}

impl Wall {
    pub fn name(self) -> &'static str {
        match self {
            Wall::Left => "left",
            Wall::Right => "right",
            Wall::Top => "top",
            Wall::Bottom => "bottom",
        }
    }
}

/// One rigid shape. `x`/`y` are the top-left corner of its `size x size`
/// bounding box; the draw order in the world list is the z-order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub shape: ShapeKind,
    pub color: ColorKind,
    pub size: usize,
    pub x: i64,
    pub y: i64,
    pub vx: i64,
    pub vy: i64,
}

impl Entity {
    pub fn moving(&self) -> bool {
        self.vx != 0 || self.vy != 0
    }

    pub fn direction(&self) -> Option<Direction> {
        Direction::from_velocity(self.vx, self.vy)
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.color.name(), self.shape.name())
    }

    /// Pixel offsets of the shape within its bounding box.
    fn raster_offsets(&self) -> Vec<(usize, usize)> {
        let s = self.size;
        let mut out = Vec::new();
        match self.shape {
            ShapeKind::Square => {
                for dy in 0..s {
                    for dx in 0..s {
                        out.push((dy, dx));
                    }
                }
            }
            ShapeKind::Circle => {
                // Integer disc test scaled by 2: (2dy - (s-1))^2 + (2dx - (s-1))^2 <= s^2.
                let c = (s - 1) as i64;
                let r2 = (s * s) as i64;
                for dy in 0..s {
                    for dx in 0..s {
                        let ddy = 2 * dy as i64 - c;
                        let ddx = 2 * dx as i64 - c;
                        if ddy * ddy + ddx * ddx <= r2 {
                            out.push((dy, dx));
                        }
                    }
                }
            }
            ShapeKind::Triangle => {
                // Apex at the top middle, widening downward.
                let c = (s - 1) / 2;
                for dy in 0..s {
                    let half = dy / 2;
                    for dx in c.saturating_sub(half)..=(c + half).min(s - 1) {
                        out.push((dy, dx));
                    }
                }
            }
        }
        out
    }

    /// Absolute pixel coordinates `(y, x)` at a hypothetical position.
    pub fn pixels_at(&self, x: i64, y: i64) -> Vec<(i64, i64)> {
        self.raster_offsets()
            .iter()
            .map(|&(dy, dx)| (y + dy as i64, x + dx as i64))
            .collect()
    }

    pub fn pixels(&self) -> Vec<(i64, i64)> {
        self.pixels_at(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroWorld {
    pub grid: usize,
    pub entities: Vec<Entity>,
}

impl MicroWorld {
    pub fn in_bounds(&self, entity: &Entity, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x + entity.size as i64 <= self.grid as i64 && y + entity.size as i64 <= self.grid as i64
    }
}

/// Something an event happened to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Participant {
    Entity(usize),
    Wall(Wall),
}

/// Event vocabulary. `Stop` and `Exit` are representable for downstream
/// consumers but the bouncing-wall physics never emits them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    /// Entity is moving in `dir` (logged once, at its first moving step).
    Move { time: usize, entity: usize, dir: Direction },
    /// Two moving entities hit; both stop.
    Collide { time: usize, a: usize, b: usize },
    /// An entity reached a wall and reversed.
    Bounce { time: usize, entity: usize, wall: Wall },
    /// A moving entity hit a static one and transferred its motion.
    Push { time: usize, pusher: usize, pushee: usize, dir: Direction },
    Stop { time: usize, entity: usize },
    Exit { time: usize, entity: usize },
}

impl Event {
    pub fn time(&self) -> usize {
        match self {
            Event::Move { time, .. }
            | Event::Collide { time, .. }
            | Event::Bounce { time, .. }
            | Event::Push { time, .. }
            | Event::Stop { time, .. }
            | Event::Exit { time, .. } => *time,
        }
    }

    pub fn participants(&self) -> Vec<Participant> {
        match self {
            Event::Move { entity, .. } | Event::Stop { entity, .. } | Event::Exit { entity, .. } => {
                vec![Participant::Entity(*entity)]
            }
            Event::Collide { a, b, .. } => {
                vec![Participant::Entity(*a), Participant::Entity(*b)]
            }
            Event::Bounce { entity, wall, .. } => {
                vec![Participant::Entity(*entity), Participant::Wall(*wall)]
            }
            Event::Push { pusher, pushee, .. } => {
                vec![Participant::Entity(*pusher), Participant::Entity(*pushee)]
            }
        }
    }

    /// Collisions, bounces, and pushes drive the causal narration; moves do not.
    pub fn is_causal(&self) -> bool {
        matches!(self, Event::Collide { .. } | Event::Bounce { .. } | Event::Push { .. })
    }
}

/// The result of a run: one world state per frame plus the event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Simulation {
    pub trajectory: Vec<MicroWorld>,
    pub events: Vec<Event>,
}

impl Simulation {
    pub fn initial(&self) -> &MicroWorld {
        &self.trajectory[0]
    }

    pub fn last(&self) -> &MicroWorld {
        self.trajectory.last().expect("non-empty trajectory")
    }

    pub fn steps(&self) -> usize {
        self.trajectory.len()
    }
}

pub const DEFAULT_GRID: usize = 32;
pub const DEFAULT_ENTITY_SIZE: usize = 7;

/// Draw a random initial world: 1-4 entities with distinct colors,
/// non-overlapping bounding boxes, and about half of them moving.
pub fn random_world(rng: &mut Rng, grid: usize) -> MicroWorld {
    let count = 1 + rng.below(4);
    let mut colors = ColorKind::ALL.to_vec();
    rng.shuffle(&mut colors);
    let shapes = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];
    let size = DEFAULT_ENTITY_SIZE;
    let mut entities: Vec<Entity> = Vec::new();
    for i in 0..count {
        let shape = shapes[rng.below(3)];
        let mut placed = false;
        for _attempt in 0..200 {
            let x = rng.below(grid - size + 1) as i64;
            let y = rng.below(grid - size + 1) as i64;
            let clear = entities.iter().all(|e| {
                let gap = 2;
                x + size as i64 + gap <= e.x
                    || e.x + e.size as i64 + gap <= x
                    || y + size as i64 + gap <= e.y
                    || e.y + e.size as i64 + gap <= y
            });
            if clear {
                let (vx, vy) = if rng.uniform() < 0.6 {
                    Direction::ALL[rng.below(4)].delta()
                } else {
                    (0, 0)
                };
                entities.push(Entity {
                    shape,
                    color: colors[i],
                    size,
                    x,
                    y,
                    vx,
                    vy,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            break; // grid too crowded; settle for fewer entities
        }
    }
    MicroWorld { grid, entities }
}

fn overlap(a: &[(i64, i64)], b: &[(i64, i64)]) -> bool {
    // Footprints are tiny; the quadratic scan is fine.
    a.iter().any(|p| b.contains(p))
}

/// Advance the world by one step at time `t`, appending events.
fn step_world(world: &mut MicroWorld, t: usize, events: &mut Vec<Event>) {
    let n = world.entities.len();
    // Phase 1-2: wall handling and movement proposals.
    let mut proposals: Vec<(i64, i64)> = Vec::with_capacity(n);
    for i in 0..n {
        let e = &world.entities[i];
        if !e.moving() {
            proposals.push((e.x, e.y));
            continue;
        }
        let (mut nx, mut ny) = (e.x + e.vx, e.y + e.vy);
        if !world.in_bounds(e, nx, ny) {
            let wall = if e.vx < 0 {
                Wall::Left
            } else if e.vx > 0 {
                Wall::Right
            } else if e.vy < 0 {
                Wall::Top
            } else {
                Wall::Bottom
            };
            events.push(Event::Bounce { time: t, entity: i, wall });
            let e = &mut world.entities[i];
            e.vx = -e.vx;
            e.vy = -e.vy;
            nx = e.x + e.vx;
            ny = e.y + e.vy;
        }
        proposals.push((nx, ny));
    }

    // Phase 3: pairwise contact resolution in index order.
    for i in 0..n {
        for j in (i + 1)..n {
            let pi = world.entities[i].pixels_at(proposals[i].0, proposals[i].1);
            let pj = world.entities[j].pixels_at(proposals[j].0, proposals[j].1);
            if !overlap(&pi, &pj) {
                continue;
            }
            let (mi, mj) = (world.entities[i].moving(), world.entities[j].moving());
            match (mi, mj) {
                (true, true) => {
                    events.push(Event::Collide { time: t, a: i, b: j });
                    for &k in &[i, j] {
                        world.entities[k].vx = 0;
                        world.entities[k].vy = 0;
                        proposals[k] = (world.entities[k].x, world.entities[k].y);
                    }
                }
                (true, false) | (false, true) => {
                    let (pusher, pushee) = if mi { (i, j) } else { (j, i) };
                    let (vx, vy) = (world.entities[pusher].vx, world.entities[pusher].vy);
                    let dir = Direction::from_velocity(vx, vy).expect("pusher moves");
                    events.push(Event::Push { time: t, pusher, pushee, dir });
                    world.entities[pusher].vx = 0;
                    world.entities[pusher].vy = 0;
                    proposals[pusher] = (world.entities[pusher].x, world.entities[pusher].y);
                    world.entities[pushee].vx = vx;
                    world.entities[pushee].vy = vy;
                    // The pushee starts moving on the next step.
                }
                (false, false) => {}
            }
        }
    }

    // Phase 4: commit surviving proposals.
    for i in 0..n {
        world.entities[i].x = proposals[i].0;
        world.entities[i].y = proposals[i].1;
    }
}

/// Run `steps` frames of physics from a seeded random world.
pub fn simulate(seed: u64, steps: usize) -> Simulation {
    assert!(steps >= 1, "simulate needs at least one step");
    let mut rng = Rng::stream(seed, "world");
    let world = random_world(&mut rng, DEFAULT_GRID);
    simulate_world(world, steps)
}

/// Run the physics from an explicit initial world.
pub fn simulate_world(initial: MicroWorld, steps: usize) -> Simulation {
    let mut events = Vec::new();
    for (i, e) in initial.entities.iter().enumerate() {
        if let Some(dir) = e.direction() {
            events.push(Event::Move { time: 0, entity: i, dir });
        }
    }
    let mut trajectory = Vec::with_capacity(steps);
    trajectory.push(initial.clone());
    let mut world = initial;
    for t in 0..steps.saturating_sub(1) {
        step_world(&mut world, t, &mut events);
        trajectory.push(world.clone());
    }
    Simulation { trajectory, events }
}
