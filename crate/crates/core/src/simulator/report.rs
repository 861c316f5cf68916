use serde::Serialize;

use super::metrics::SimulationMetrics;
use super::output::MetricsRow;

pub const INFEASIBLE: &str = "Infeasible";
pub const NOT_APPLICABLE: &str = "N/A";

/// One line of the comparison table, already formatted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub test: String,
    pub w1: String,
    pub w2: String,
    pub coupling_kw: String,
    pub forced_initial: String,
    pub initial_rate: String,
    pub energy_delivered: String,
    pub energy_cost: String,
    pub demand_charge: String,
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "-".into())
}

fn percent(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}%")).unwrap_or_else(|| NOT_APPLICABLE.into())
}

/// Rows of percentages `100 * test / baseline`, preceded by the baseline's
/// absolute values.
pub fn report(rows: &[MetricsRow], baseline: &SimulationMetrics) -> Vec<ReportRow> {
    let mut out = vec![ReportRow {
        test: "Status Quo".into(),
        w1: "-".into(),
        w2: "-".into(),
        coupling_kw: "-".into(),
        forced_initial: "-".into(),
        initial_rate: "-".into(),
        energy_delivered: format!("{:.2} kWh", baseline.total_energy_kwh),
        energy_cost: format!("${:.2}", baseline.energy_cost_usd),
        demand_charge: format!("${:.2}", baseline.demand_charge_usd),
    }];
    for row in rows.iter().filter(|r| !r.is_baseline()) {
        let m = row.metrics();
        let (energy, cost, demand) = if !m.feasible {
            (INFEASIBLE.to_string(), INFEASIBLE.to_string(), INFEASIBLE.to_string())
        } else {
            match m.ratios(baseline) {
                Some(r) => (percent(r.energy_pct), percent(r.energy_cost_pct), percent(r.demand_charge_pct)),
                None => (NOT_APPLICABLE.into(), NOT_APPLICABLE.into(), NOT_APPLICABLE.into()),
            }
        };
        let forced = row.forced_initial != "none" && !row.forced_initial.is_empty();
        out.push(ReportRow {
            test: row.label.clone(),
            w1: num(row.w1),
            w2: num(row.w2),
            coupling_kw: num(row.transformer_kw),
            forced_initial: if forced { "Yes" } else { "No" }.into(),
            initial_rate: if forced {
                match row.forced_initial.as_str() {
                    "1" => "p_max".to_string(),
                    f => format!("{f} p_max"),
                }
            } else {
                "-".into()
            },
            energy_delivered: energy,
            energy_cost: cost,
            demand_charge: demand,
        });
    }
    out
}

/// Plain-text table with aligned columns.
pub fn render(rows: &[ReportRow]) -> String {
    let header = [
        "Test",
        "w1",
        "w2",
        "Coupling (kW)",
        "Forced",
        "Rate",
        "Energy Delivered",
        "Purchase Cost",
        "Demand Charge",
    ];
    let cells: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.test.clone(),
                r.w1.clone(),
                r.w2.clone(),
                r.coupling_kw.clone(),
                r.forced_initial.clone(),
                r.initial_rate.clone(),
                r.energy_delivered.clone(),
                r.energy_cost.clone(),
                r.demand_charge.clone(),
            ]
        })
        .collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |items: Vec<&str>| {
        items
            .iter()
            .zip(&width)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut text = line(header.to_vec());
    text.push('\n');
    for c in &cells {
        text.push_str(&line(c.iter().map(String::as_str).collect()));
        text.push('\n');
    }
    text
}
