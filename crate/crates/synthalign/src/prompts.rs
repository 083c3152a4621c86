//! Prompt files and a deterministic demo prompt generator.

use std::fs;
use std::path::Path;

use synthalign_core::seeding::hash_parts;

use crate::orchestrator::Prompt;

/// Reads one `{prompt_id, text, topic}` record per line; blank lines are
/// skipped.
pub fn read_prompts(path: &Path) -> anyhow::Result<Vec<Prompt>> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prompt =
            serde_json::from_str(line).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_prompts(path: &Path, prompts: &[Prompt]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for p in prompts {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    fs::write(path, buf)
}

fn subjects(topic: &str) -> &'static [&'static str] {
    match topic {
        "art" => &["a watercolor of a lighthouse", "a sculptor shaping clay", "a mural on a brick wall"],
        "school" => &["students at a chalkboard", "a backpack on a desk", "a teacher reading aloud"],
        "transport" => &["a red tram crossing a bridge", "bicycles parked by a station", "a cargo ship at dawn"],
        "weather" => &["lightning over a wheat field", "a snowy street at night", "fog rolling over hills"],
        "daily_activities" => &["an elderly couple feeding ducks", "a man brewing coffee", "a child tying shoelaces"],
        "industrial" => &["a robotic arm welding a frame", "cooling towers at sunset", "stacked shipping containers"],
        "nature" => &["a waterfall in a pine forest", "a desert cactus in bloom", "a mossy rock in a stream"],
        "food" => &["a bowl of ramen with chopsticks", "fresh bread on a cutting board", "a plate of sushi"],
        "sports" => &["a goalkeeper diving for the ball", "a runner crossing the finish line", "a climber on a cliff"],
        "animals" => &["a fox curled up in the snow", "two parrots on a branch", "a dog catching a frisbee"],
        _ => &["a red cube on a table", "a blue sphere next to a box", "a green cone on the floor"],
    }
}

const STYLES: [&str; 5] = [
    "in soft morning light",
    "seen from above",
    "with a shallow depth of field",
    "in a busy scene",
    "in vivid colors",
];

/// `n` prompts with ids `p00000`, `p00001`, …, cycling through `topics`.
pub fn demo_prompts(n: usize, topics: &[String], seed: u64) -> Vec<Prompt> {
    (0..n)
        .map(|i| {
            let topic = &topics[i % topics.len()];
            let h = hash_parts(&[b"demo-prompt", &seed.to_le_bytes(), &(i as u64).to_le_bytes()]);
            let pool = subjects(topic);
            let subject = pool[(h % pool.len() as u64) as usize];
            let style = STYLES[((h >> 16) % STYLES.len() as u64) as usize];
            Prompt {
                prompt_id: format!("p{i:05}"),
                text: format!("{subject}, {style}"),
                topic: topic.clone(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_prompts_cycle_topics() {
        let topics = vec!["art".to_string(), "food".to_string()];
        let p = demo_prompts(4, &topics, 1);
        assert_eq!(p[0].prompt_id, "p00000");
        assert_eq!(p[3].topic, "food");
        assert_eq!(p, demo_prompts(4, &topics, 1));
    }
}
