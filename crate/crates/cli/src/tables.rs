//! Plain-text tables: per-junction controls and the strategy comparison.

use stackelberg_traffic::functionals::FunctionalReport;
use stackelberg_traffic::network::{ControlSet, Network};

/// `[a b; c d]` with two decimals; a single row of ones prints as `(1,1,..)`.
fn matrix(m: &[Vec<f64>]) -> String {
    if m.len() == 1 && m[0].iter().all(|&v| v == 1.0) {
        return format!("({})", vec!["1"; m[0].len()].join(","));
    }
    if m.iter().all(|row| row.len() == 1 && row[0] == 1.0) {
        return format!("({})", vec!["1"; m.len()].join(","));
    }
    let rows: Vec<String> = m
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn ids(roads: &[usize]) -> String {
    let list: Vec<String> = roads.iter().map(|r| (r + 1).to_string()).collect();
    format!("{{{}}}", list.join(","))
}

/// One column per junction; rows are the incoming and outgoing road sets
/// (1-based road ids) followed by the labelled control rows.
pub fn junction_table(net: &Network, rows: &[(&str, &ControlSet)]) -> String {
    let mut cells: Vec<Vec<String>> = Vec::new();
    let header: Vec<String> = std::iter::once(String::new())
        .chain((1..=net.junctions.len()).map(|j| format!("j={j}")))
        .collect();
    cells.push(header);
    cells.push(
        std::iter::once("I_in".to_string())
            .chain(net.junctions.iter().map(|j| ids(&j.incoming)))
            .collect(),
    );
    cells.push(
        std::iter::once("I_out".to_string())
            .chain(net.junctions.iter().map(|j| ids(&j.outgoing)))
            .collect(),
    );
    for (label, controls) in rows {
        let mut line = vec![label.to_string()];
        for jc in &controls.junctions {
            line.push(if label.starts_with("alpha") {
                matrix(&jc.alpha)
            } else {
                matrix(&jc.beta)
            });
        }
        cells.push(line);
    }
    layout(&cells)
}

/// `Case | J_P | J_T` rows.
pub fn strategy_table(rows: &[(String, FunctionalReport)]) -> String {
    let mut cells = vec![vec!["Case".to_string(), "J_P".to_string(), "J_T".to_string()]];
    for (case, r) in rows {
        cells.push(vec![case.clone(), format!("{:.4e}", r.jp), format!("{:.4e}", r.jt)]);
    }
    layout(&cells)
}

fn layout(cells: &[Vec<String>]) -> String {
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| cells.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
    }
    out
}
