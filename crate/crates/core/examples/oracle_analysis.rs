//! Agreement quadrants, oracle upper bound and low-confidence subset
//! selection over a 952-item outcome table.

use deferral_lab::analyze::{
    agreement_quadrants, oracle_bound, select_low_confidence_subset, Outcome, SubsetCandidate, SubsetFractions,
};

fn main() -> deferral_lab::Result<()> {
    // both right, AI only, human only, neither
    let counts = [(true, true, 390), (true, false, 266), (false, true, 85), (false, false, 211)];
    let mut outcomes = Vec::new();
    for (ai, human, n) in counts {
        for _ in 0..n {
            let i = outcomes.len();
            outcomes.push(Outcome {
                item_id: format!("q{i:04}"),
                dataset: if i % 2 == 0 { "QuALITY" } else { "GPQA" }.into(),
                ai_correct: ai,
                human_correct: human,
                ai_conf: if ai { 0.9 } else { 0.3 } - (i % 7) as f64 * 0.01,
            });
        }
    }

    let q = agreement_quadrants(&outcomes);
    let [both, ai_only, human_only, neither] = q.percentages();
    println!("both {both:.1}%  AI only {ai_only:.1}%  human only {human_only:.1}%  neither {neither:.1}%");

    let report = oracle_bound(&outcomes, None)?;
    for row in std::iter::once(&report.overall).chain(&report.per_dataset) {
        println!(
            "{:<8} n={:<4} human {:.1}%  AI {:.1}%  oracle {:.1}%  headroom {:+.1}pp",
            row.dataset,
            row.n,
            100.0 * row.human_accuracy(),
            100.0 * row.ai_accuracy(),
            100.0 * row.oracle_accuracy(),
            100.0 * row.headroom()
        );
    }

    let candidates: Vec<SubsetCandidate> = outcomes
        .iter()
        .map(|o| SubsetCandidate {
            item_id: o.item_id.clone(),
            dataset: o.dataset.clone(),
            confidence: o.ai_conf,
        })
        .collect();
    let subset = select_low_confidence_subset(&candidates, &SubsetFractions::default());
    let wrong = outcomes.iter().filter(|o| subset.contains(&o.item_id) && !o.ai_correct).count();
    println!("low-confidence subset: {} items, AI wrong on {wrong}", subset.len());
    Ok(())
}
