//! Rasterize simulations into videos. One frame per world state; shapes
//! drawn in list order, so later entities overwrite earlier ones where
//! they overlap.

use crate::error::Result;
use crate::perception::{synthetic_mask_oracle, ObjectMask, Video};

use super::sim::{MicroWorld, Simulation};

/// Per-pixel index of the topmost entity covering it, if any.
pub fn ownership(world: &MicroWorld) -> Vec<Option<usize>> {
    let g = world.grid;
    let mut owner = vec![None; g * g];
    for (i, e) in world.entities.iter().enumerate() {
        for (y, x) in e.pixels() {
            if y >= 0 && x >= 0 && (y as usize) < g && (x as usize) < g {
                owner[y as usize * g + x as usize] = Some(i);
            }
        }
    }
    owner
}

/// RGB raster of one world state, black background.
pub fn render_frame(world: &MicroWorld) -> Vec<f64> {
    let g = world.grid;
    let mut data = vec![0.0; g * g * 3];
    for (p, owner) in ownership(world).iter().enumerate() {
        if let Some(i) = owner {
            let rgb = world.entities[*i].color.rgb();
            data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
        }
    }
    data
}

/// Render every state of a simulation into a `[T, grid, grid, 3]` video.
pub fn render(sim: &Simulation) -> Result<Video> {
    let g = sim.initial().grid;
    let mut data = Vec::with_capacity(sim.steps() * g * g * 3);
    for world in &sim.trajectory {
        data.extend_from_slice(&render_frame(world));
    }
    Video::new(sim.steps(), g, g, 3, data)
}

/// Render plus exact per-keyframe object masks.
pub fn render_with_masks(
    sim: &Simulation,
    keyframes: &[usize],
) -> Result<(Video, Vec<ObjectMask>)> {
    let video = render(sim)?;
    let mut masks = Vec::new();
    for &k in keyframes {
        masks.extend(synthetic_mask_oracle(&sim.trajectory[k], k));
    }
    Ok((video, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasynth::sim::{
        simulate_world, ColorKind, Entity, MicroWorld, ShapeKind, DEFAULT_ENTITY_SIZE,
    };

    fn square(color: ColorKind, x: i64, y: i64, vx: i64, vy: i64) -> Entity {
        Entity { shape: ShapeKind::Square, color, size: DEFAULT_ENTITY_SIZE, x, y, vx, vy }
    }

    #[test]
    fn empty_world_renders_black_frames() {
        let sim = simulate_world(MicroWorld { grid: 32, entities: vec![] }, 4);
        let video = render(&sim).unwrap();
        assert_eq!(video.frame_count(), 4);
        assert!(video.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rigid_shape_keeps_its_pixel_count() {
        let world = MicroWorld { grid: 32, entities: vec![square(ColorKind::Red, 3, 3, 1, 0)] };
        let sim = simulate_world(world, 12);
        let counts: Vec<usize> = sim
            .trajectory
            .iter()
            .map(|w| ownership(w).iter().filter(|o| o.is_some()).count())
            .collect();
        assert!(counts.iter().all(|&c| c == counts[0]));
    }

    #[test]
    fn frames_differ_exactly_when_something_moved() {
        let world = MicroWorld {
            grid: 32,
            entities: vec![square(ColorKind::Red, 2, 10, 1, 0), square(ColorKind::Blue, 22, 2, 0, 0)],
        };
        let sim = simulate_world(world, 16);
        let video = render(&sim).unwrap();
        for t in 0..sim.steps() - 1 {
            let moved = sim.trajectory[t]
                .entities
                .iter()
                .zip(&sim.trajectory[t + 1].entities)
                .any(|(a, b)| (a.x, a.y) != (b.x, b.y));
            let changed = video.frame(t) != video.frame(t + 1);
            assert_eq!(moved, changed, "frame {t}");
        }
    }

    #[test]
    fn later_entities_draw_on_top() {
        let world = MicroWorld {
            grid: 32,
            entities: vec![square(ColorKind::Red, 5, 5, 0, 0), square(ColorKind::Blue, 8, 8, 0, 0)],
        };
        let frame = render_frame(&world);
        // Pixel (8, 8) is covered by both; the later-drawn blue wins.
        let idx = (8 * 32 + 8) * 3;
        assert_eq!(&frame[idx..idx + 3], &ColorKind::Blue.rgb());
    }
}
