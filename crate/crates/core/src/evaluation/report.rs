use std::fmt::Write;

use super::EvalReport;
use crate::feature_store::Label;

/// Placeholder for a metric that was not computed.
pub const CSS_ABSENT: &str = "-";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| CSS_ABSENT.to_string(), |x| format!("{x:.4}"))
}

/// Two aligned tables: the detection+explanation summary
/// (`Acc F1 ROUGE_L CSS`, fractions) and the per-class breakdown
/// (`Real / Fake / Overall`, percentages).
pub fn render_table(report: &EvalReport, method: &str) -> String {
    let d = &report.detection;
    let width = method.len().max(6);
    let mut out = String::new();

    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}",
        "Method", "Acc", "F1", "ROUGE_L", "CSS"
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>7.4}  {:>7.4}  {:>7}  {:>7}",
        method,
        d.overall_accuracy,
        d.fake_f1,
        opt(report.rouge_l_mean),
        opt(report.css_mean)
    );
    out.push('\n');

    let real = d.per_class[&Label::Real];
    let fake = d.per_class[&Label::Fake];
    let _ = writeln!(
        out,
        "{:<width$}  {:>13}  {:>13}  {:>22}",
        "", "Real", "Fake", "Overall"
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>6} {:>6}  {:>6} {:>6}  {:>6} {:>6} {:>6} {:>6}",
        "Method", "Acc", "F1", "Acc", "F1", "Acc", "F1(m)", "F1(w)", "F1(f)"
    );
    let pct = |x: f64| format!("{:.1}", 100.0 * x);
    let _ = writeln!(
        out,
        "{:<width$}  {:>6} {:>6}  {:>6} {:>6}  {:>6} {:>6} {:>6} {:>6}",
        method,
        pct(real.accuracy),
        pct(real.f1),
        pct(fake.accuracy),
        pct(fake.f1),
        pct(d.overall_accuracy),
        pct(d.macro_f1),
        pct(d.weighted_f1),
        pct(d.fake_f1)
    );
    let _ = writeln!(
        out,
        "F1 = fake-positive; F1(m) macro, F1(w) support-weighted. n = {}, unknown = {}, failed = {}",
        report.samples,
        report.counts.unknown_real + report.counts.unknown_fake,
        report.failed_responses
    );
    out
}
