use std::collections::BTreeMap;
use std::fmt::Write;

use ragtune::analysis::describe_config;
use ragtune::harness::{LedgerSnapshot, RunRecord};

fn ledger_line(label: &str, l: &LedgerSnapshot) -> String {
    format!(
        "{label:<22}indexes={} embedded_tokens={} generation_input_tokens={} generation_output_tokens={}\n",
        l.indexes_charged, l.embedded_tokens, l.generation_input_tokens, l.generation_output_tokens
    )
}

/// Plain-text report of a finished run. Contains no timestamps, so reruns compare byte for byte.
pub fn render(record: &RunRecord<f64>) -> String {
    let spec = &record.spec;
    let mut out = String::new();
    let _ = writeln!(out, "ragtune optimize summary");
    let _ = writeln!(out, "{:<22}{}", "algorithm", spec.algorithm);
    let _ = writeln!(out, "{:<22}{}", "objective", spec.objective.describe());
    let _ = writeln!(out, "{:<22}{}", "budget", spec.budget);
    let seeds: Vec<String> = spec.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "{:<22}{} ({})", "seeds", seeds.len(), seeds.join(","));

    let finals: Vec<_> = record.seeds.iter().filter_map(|s| s.final_iteration().map(|f| (s.seed, f))).collect();
    if let Some(last) = record.aggregates.last() {
        let dev = last.mean_best_dev.map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}"));
        let _ = writeln!(out, "{:<22}{dev}", "final mean dev");
        let _ = writeln!(out, "{:<22}{:.4} (se {:.4})", "final mean test", last.mean_test, last.se_test);
    }

    // most frequent final choice; lowest ordinal on ties
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, f) in &finals {
        *votes.entry(f.best_ordinal).or_default() += 1;
    }
    if let Some((&ordinal, &count)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
        let chosen = finals.iter().find(|(_, f)| f.best_ordinal == ordinal).map(|(_, f)| *f).expect("voted ordinal exists");
        let _ = writeln!(out, "{:<22}{}", "best config", describe_config(&record.space, ordinal));
        let _ = writeln!(out, "{:<22}{ordinal} (final choice of {count}/{} seeds)", "best ordinal", finals.len());
        let dev = chosen.best_dev.map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}"));
        let _ = writeln!(out, "{:<22}{dev}", "best dev score");
        let _ = writeln!(out, "{:<22}{:.4}", "best test score", chosen.test_of_best);
    }

    let mut total = LedgerSnapshot::default();
    let mut test_total = LedgerSnapshot::default();
    for (_, f) in &finals {
        total.indexes_charged += f.ledger.indexes_charged;
        total.embedded_tokens += f.ledger.embedded_tokens;
        total.generation_input_tokens += f.ledger.generation_input_tokens;
        total.generation_output_tokens += f.ledger.generation_output_tokens;
        test_total.indexes_charged += f.test_ledger.indexes_charged;
        test_total.embedded_tokens += f.test_ledger.embedded_tokens;
        test_total.generation_input_tokens += f.test_ledger.generation_input_tokens;
        test_total.generation_output_tokens += f.test_ledger.generation_output_tokens;
    }
    out.push_str(&ledger_line("optimization cost", &total));
    out.push_str(&ledger_line("test tracking cost", &test_total));

    let _ = writeln!(out, "per seed:");
    for (seed, f) in &finals {
        let dev = f.best_dev.map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}"));
        let _ = writeln!(out, "  seed {seed}: ordinal {} dev {dev} test {:.4}", f.best_ordinal, f.test_of_best);
    }
    out
}
