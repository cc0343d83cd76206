//! Learns each routing policy on calibration observations from two groups
//! and scores it on held-out ones.

use deferral_lab::rng::{self, Pcg64};
use deferral_lab::route::{evaluate_observations, learn_policy, HumanView, Mode, Observation, PolicyKind};

/// The AI is strong on "easy" and weak on "hard"; humans are middling on both.
fn observation(r: &mut Pcg64, i: usize, group: &str) -> Observation {
    let ai_skill = if group == "easy" { 0.85 } else { 0.45 };
    let ai_correct = rng::unit(r) < ai_skill;
    let human_correct = rng::unit(r) < 0.65;
    let noisy = |r: &mut Pcg64, right: bool| (if right { 0.7 } else { 0.4 } + 0.4 * (rng::unit(r) - 0.5)).clamp(0.0, 1.0);
    Observation {
        item_id: format!("{group}-{i}"),
        dataset: group.to_string(),
        group: group.to_string(),
        participant_id: None,
        ai_conf: noisy(r, ai_correct),
        ai_correct,
        human: Some(HumanView {
            conf: noisy(r, human_correct),
            correct: human_correct,
        }),
        ai_locked: false,
    }
}

fn split(seed: u64) -> Vec<Observation> {
    let mut r = rng::stream(seed, b"learn_routing");
    ["easy", "hard"]
        .iter()
        .flat_map(|g| (0..200).map(|i| (i, *g)).collect::<Vec<_>>())
        .map(|(i, g)| observation(&mut r, i, g))
        .collect()
}

fn main() -> deferral_lab::Result<()> {
    let calibration = split(1);
    let test = split(2);
    for kind in PolicyKind::ALL {
        let policy = learn_policy(kind, &calibration, 0.01)?;
        let report = evaluate_observations(&policy, &test, Mode::Majority)?;
        println!(
            "{:<4} accuracy {:.1}% (AI alone {:.1}%, human alone {:.1}%), {:.1}% routed to human",
            kind.short(),
            100.0 * report.overall.accuracy(),
            100.0 * report.overall.ai_accuracy(),
            100.0 * report.overall.human_accuracy(),
            100.0 * report.overall.human_share()
        );
        for (group, t) in &policy.thresholds {
            println!("     {group}: {t:?}");
        }
    }
    Ok(())
}
