use std::fmt::Write;

use wcaps_core::ensemble::EvalReport;

/// Tab-separated rendering: aggregate metrics, then the per-domain table.
pub fn eval_tsv(r: &EvalReport) -> String {
    let mut s = String::from("metric\tvalue\n");
    let p = &r.polarity;
    let d = &r.domain;
    let rows = [
        ("samples", r.samples as f64),
        ("polarity_accuracy", p.accuracy),
        ("polarity_precision", p.precision),
        ("polarity_recall", p.recall),
        ("polarity_f1", p.f1),
        ("polarity_g_mean", p.g_mean),
        ("domain_accuracy", d.accuracy),
        ("domain_macro_precision", d.macro_precision),
        ("domain_macro_recall", d.macro_recall),
        ("domain_macro_f1", d.macro_f1),
        ("domain_micro_f1", d.micro_f1),
    ];
    for (name, v) in rows {
        let _ = writeln!(s, "{name}\t{v}");
    }
    s.push_str("\ndomain\tsamples\tpolarity_accuracy\tdomain_accuracy\n");
    for row in &r.per_domain {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            row.domain, row.samples, row.polarity_accuracy, row.domain_accuracy
        );
    }
    s
}
