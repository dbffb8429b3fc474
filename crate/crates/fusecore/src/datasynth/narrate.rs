//! Rule-based narration: captions over the first and last states, causal
//! explanations with one clause per logged interaction, and a rule-based
//! extrapolation of the final state as the prediction. All text is
//! deterministic and drawn from the closed corpus vocabulary, so ground
//! truth can be regenerated and checked exactly.

use crate::rng::Rng;

use super::sim::{Direction, Entity, Event, MicroWorld, Simulation, Wall};

/// Lookahead distance (pixels) for calling an upcoming interaction.
const HORIZON: i64 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Narration {
    pub caption: String,
    pub explanation: String,
    pub prediction: String,
    /// Lead clause of the prediction, used as the MCQ answer.
    pub prediction_lead: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mcq {
    pub question: String,
    pub options: [String; 4],
    pub answer: usize,
}

fn label(e: &Entity) -> String {
    format!("the {}", e.label())
}

fn caption(sim: &Simulation) -> String {
    let first = sim.initial();
    let movers: Vec<usize> = (0..first.entities.len())
        .filter(|&i| first.entities[i].moving())
        .collect();
    if movers.is_empty() {
        return "nothing moves.".to_string();
    }
    let start: Vec<String> = movers
        .iter()
        .map(|&i| {
            let e = &first.entities[i];
            format!("{} moves {}", label(e), e.direction().expect("mover").name())
        })
        .collect();
    let last = sim.last();
    let end: Vec<String> = movers
        .iter()
        .map(|&i| {
            let e = &last.entities[i];
            match e.direction() {
                Some(d) => format!("{} is moving {}", label(e), d.name()),
                None => format!("{} is still", label(e)),
            }
        })
        .collect();
    format!(
        "{}. at the end {}.",
        start.join(" and "),
        end.join(" and ")
    )
}

fn explanation(sim: &Simulation) -> String {
    if sim.events.is_empty() {
        return "no events occurred.".to_string();
    }
    let entities = &sim.initial().entities;
    let clauses: Vec<String> = sim
        .events
        .iter()
        .filter(|e| e.is_causal())
        .map(|event| match event {
            Event::Collide { a, b, .. } => format!(
                "{} hit {}, so both stopped.",
                label(&entities[*a]),
                label(&entities[*b])
            ),
            Event::Bounce { entity, wall, .. } => format!(
                "{} hit the {} wall, so it bounced back.",
                label(&entities[*entity]),
                wall.name()
            ),
            Event::Push { pusher, pushee, dir, .. } => format!(
                "{} pushed {}, so {} started moving {}.",
                label(&entities[*pusher]),
                label(&entities[*pushee]),
                label(&entities[*pushee]),
                dir.name()
            ),
            _ => unreachable!("is_causal filtered"),
        })
        .collect();
    if clauses.is_empty() {
        "no collisions occurred.".to_string()
    } else {
        clauses.join(" ")
    }
}

/// What lies ahead of a moving entity within the horizon.
enum Ahead {
    Entity(usize),
    Wall(Wall),
    Open,
}

fn look_ahead(world: &MicroWorld, idx: usize) -> Ahead {
    let e = &world.entities[idx];
    let dir = e.direction().expect("look_ahead needs a mover");
    let size = e.size as i64;
    let mut nearest: Option<(usize, i64)> = None;
    for (j, o) in world.entities.iter().enumerate() {
        if j == idx {
            continue;
        }
        let osize = o.size as i64;
        let (perp_overlap, gap) = match dir {
            Direction::Right => (
                e.y < o.y + osize && o.y < e.y + size,
                o.x - (e.x + size),
            ),
            Direction::Left => (
                e.y < o.y + osize && o.y < e.y + size,
                e.x - (o.x + osize),
            ),
            Direction::Down => (
                e.x < o.x + osize && o.x < e.x + size,
                o.y - (e.y + size),
            ),
            Direction::Up => (
                e.x < o.x + osize && o.x < e.x + size,
                e.y - (o.y + osize),
            ),
        };
        if perp_overlap && gap >= 0 && nearest.is_none_or(|(_, g)| gap < g) {
            nearest = Some((j, gap));
        }
    }
    let grid = world.grid as i64;
    let (wall, wall_gap) = match dir {
        Direction::Right => (Wall::Right, grid - (e.x + size)),
        Direction::Left => (Wall::Left, e.x),
        Direction::Down => (Wall::Bottom, grid - (e.y + size)),
        Direction::Up => (Wall::Top, e.y),
    };
    if let Some((j, gap)) = nearest {
        if gap <= HORIZON && gap <= wall_gap {
            return Ahead::Entity(j);
        }
    }
    if wall_gap <= HORIZON {
        return Ahead::Wall(wall);
    }
    Ahead::Open
}

fn prediction_clauses(world: &MicroWorld) -> Vec<(String, bool)> {
    // (clause, predicts an interaction)
    let movers: Vec<usize> = (0..world.entities.len())
        .filter(|&i| world.entities[i].moving())
        .take(3)
        .collect();
    movers
        .iter()
        .map(|&i| {
            let e = &world.entities[i];
            match look_ahead(world, i) {
                Ahead::Entity(j) => (
                    format!("{} will hit {}", label(e), label(&world.entities[j])),
                    true,
                ),
                Ahead::Wall(w) => (
                    format!("{} will bounce off the {} wall", label(e), w.name()),
                    true,
                ),
                Ahead::Open => (
                    format!(
                        "{} keeps moving {}",
                        label(e),
                        e.direction().expect("mover").name()
                    ),
                    false,
                ),
            }
        })
        .collect()
}

fn prediction(sim: &Simulation) -> (String, String) {
    let clauses = prediction_clauses(sim.last());
    if clauses.is_empty() {
        let lead = "the scene stays still".to_string();
        return (format!("{lead} with high confidence."), lead);
    }
    let interaction = clauses.iter().any(|(_, hit)| *hit);
    let conf = if interaction { "medium" } else { "high" };
    let joined: Vec<String> = clauses.iter().map(|(c, _)| c.clone()).collect();
    let lead = joined[0].clone();
    (format!("{} with {conf} confidence.", joined.join(" and ")), lead)
}

/// Derive (caption, explanation, prediction) from a simulation.
pub fn narrate(sim: &Simulation) -> Narration {
    let (prediction, prediction_lead) = prediction(sim);
    Narration {
        caption: caption(sim),
        explanation: explanation(sim),
        prediction,
        prediction_lead,
    }
}

/// Build a four-option multiple-choice question about the most likely
/// next event. Distractors perturb one fact of the true answer (the
/// direction, the wall, or the interaction partner) while keeping the
/// same subject, so exactly one option is consistent with the scene.
pub fn make_mcq(sim: &Simulation, rng: &mut Rng) -> Mcq {
    let world = sim.last();
    let truth = prediction(sim).1;
    let subject = world
        .entities
        .iter()
        .find(|e| e.moving())
        .or_else(|| world.entities.first())
        .map(label)
        .unwrap_or_else(|| "the red square".to_string());

    let mut pool: Vec<String> = Vec::new();
    for dir in Direction::ALL {
        pool.push(format!("{subject} keeps moving {}", dir.name()));
    }
    for wall in [Wall::Left, Wall::Right, Wall::Top, Wall::Bottom] {
        pool.push(format!("{subject} will bounce off the {} wall", wall.name()));
    }
    for (j, o) in world.entities.iter().enumerate() {
        if Some(j)
            != world
                .entities
                .iter()
                .position(|e| label(e) == subject)
        {
            pool.push(format!("{subject} will hit {}", label(o)));
        }
    }
    pool.push("the scene stays still".to_string());

    let mut options = vec![truth.clone()];
    for cand in pool {
        if options.len() == 4 {
            break;
        }
        if !options.contains(&cand) {
            options.push(cand);
        }
    }
    assert_eq!(options.len(), 4, "distractor pool exhausted");
    rng.shuffle(&mut options);
    let answer = options.iter().position(|o| *o == truth).expect("truth kept");
    Mcq {
        question: "what is most likely to happen next?".to_string(),
        options: [
            options[0].clone(),
            options[1].clone(),
            options[2].clone(),
            options[3].clone(),
        ],
        answer,
    }
}
