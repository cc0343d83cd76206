//! Clusters ten sampled answers to one question and prints every confidence
//! signal the ensemble yields.

use deferral_lab::aggregate::{
    cluster_responses, computed_confidence, direct_ask_confidence, ensemble_signals, judge, normalized_entropy,
    ConfidenceMethod, EquivalenceOracle, SignalOptions,
};
use deferral_lab::corpus::{canonicalize_or_flag, AnswerKind, CanonicalAnswer, Item, Response, Side};

fn main() -> deferral_lab::Result<()> {
    let item = Item {
        item_id: "capital-au".into(),
        dataset: "SimpleQA".into(),
        group: "SimpleQA".into(),
        kind: AnswerKind::FreeText,
        options: Vec::new(),
        gold: CanonicalAnswer::NormalizedText("canberra".into()),
        context_ref: None,
    };
    let samples = [
        ("Canberra", 0.9),
        ("canberra.", 0.85),
        ("Sydney", 0.6),
        ("CANBERRA", 0.95),
        ("Melbourne", 0.4),
        ("Canberra!", 0.8),
        ("Sydney", 0.55),
        ("Canberra", 0.9),
        ("canberra", 0.7),
        ("Sydney", 0.65),
    ];
    let responses: Vec<Response> = samples
        .iter()
        .enumerate()
        .map(|(i, (raw, conf))| Response {
            item_id: item.item_id.clone(),
            side: Side::Ai { sample_index: i as u32 },
            raw_answer: raw.to_string(),
            canonical: canonicalize_or_flag(raw, &item),
            confidence: *conf,
            reported_confidence: *conf,
        })
        .collect();
    let refs: Vec<&Response> = responses.iter().collect();
    let oracle = EquivalenceOracle::NormalizedExact;

    let clusters = cluster_responses(&refs, &oracle)?;
    println!("cluster sizes: {:?}", clusters.sizes());
    println!("direct-ask confidence: {:.3}", direct_ask_confidence(&clusters));
    println!("normalized entropy:    {:.3}", normalized_entropy(&clusters));
    println!("computed confidence:   {:.3}", computed_confidence(&clusters, item.kind));
    for (signal, value) in ensemble_signals(&clusters, SignalOptions::default()).iter() {
        println!("  {signal:<20} {value:.3}");
    }

    let verdict = judge(&item, &refs, &oracle, ConfidenceMethod::DirectAsk, SignalOptions::default())?;
    println!(
        "majority answer `{}` ({}/{} samples), correct: {}",
        verdict.answer, verdict.supporters, verdict.total, verdict.correct
    );
    Ok(())
}
