//! Per-window record stream and flat channel table.
//!
//! Every observation window emits one [`WindowRecord`]: the full channel
//! vector, the fired / not-evaluable gate sets, the classification with its
//! provenance, and optional ground truth for synthetic runs. Records
//! serialize as newline-delimited JSON (one record per line, fixed field
//! names) and as a tab-separated table with one column per channel.
//!
//! Numeric cells in the table are printed with 17 significant digits, the
//! number needed to round-trip any IEEE-754 double exactly; parsing an
//! emitted table reproduces the in-memory values bit for bit.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{ChannelVector, EventClass, EventLabel, Gate, GateReport, ALL_GATES};

/// One emitted window record. Field names are part of the output contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub date: NaiveDate,
    pub theta_deg: Option<f64>,
    pub delta_rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub sigma_z: Option<f64>,
    pub cv: Option<f64>,
    pub alpha_global: Option<f64>,
    pub z_global: Option<f64>,
    pub alpha_guard: Option<f64>,
    pub z_guard: Option<f64>,
    pub alpha_exit: Option<f64>,
    pub z_exit: Option<f64>,
    pub shift_guard: Option<f64>,
    pub shift_exit: Option<f64>,
    pub shift_global: Option<f64>,
    pub delta_mg: Option<f64>,
    pub rho1: Option<f64>,
    pub degenerate_cca: bool,
    /// Channels absent this window, by name.
    pub missing: Vec<String>,
    pub fired: Vec<String>,
    pub not_evaluable: Vec<String>,
    pub label: EventLabel,
    pub provenance: String,
    /// Ground-truth label for synthetic scenario runs.
    pub truth: Option<String>,
    pub notes: Vec<String>,
}

impl WindowRecord {
    pub fn from_parts(
        channels: &ChannelVector,
        report: &GateReport,
        event: &EventClass,
        truth: Option<String>,
    ) -> Self {
        let mut notes = report.notes.clone();
        notes.retain(|n| !n.is_empty());
        WindowRecord {
            date: channels.date,
            theta_deg: channels.theta_deg,
            delta_rho: channels.delta_rho,
            epsilon: channels.epsilon,
            sigma_z: channels.sigma_z,
            cv: channels.cv,
            alpha_global: channels.alpha_global,
            z_global: channels.z_global,
            alpha_guard: channels.alpha_guard,
            z_guard: channels.z_guard,
            alpha_exit: channels.alpha_exit,
            z_exit: channels.z_exit,
            shift_guard: channels.shift_guard,
            shift_exit: channels.shift_exit,
            shift_global: channels.shift_global,
            delta_mg: channels.delta_mg,
            rho1: channels.rho1,
            degenerate_cca: channels.degenerate_cca,
            missing: channels.missing().iter().map(|c| c.name().to_string()).collect(),
            fired: report.fired.iter().map(|g| g.name().to_string()).collect(),
            not_evaluable: report
                .not_evaluable
                .iter()
                .map(|g| g.name().to_string())
                .collect(),
            label: event.label,
            provenance: event.provenance.clone(),
            truth,
            notes,
        }
    }

    /// Rebuilds the channel vector carried by this record.
    pub fn channels(&self) -> ChannelVector {
        ChannelVector {
            date: self.date,
            theta_deg: self.theta_deg,
            delta_rho: self.delta_rho,
            epsilon: self.epsilon,
            sigma_z: self.sigma_z,
            cv: self.cv,
            alpha_global: self.alpha_global,
            z_global: self.z_global,
            alpha_guard: self.alpha_guard,
            z_guard: self.z_guard,
            alpha_exit: self.alpha_exit,
            z_exit: self.z_exit,
            shift_guard: self.shift_guard,
            shift_exit: self.shift_exit,
            shift_global: self.shift_global,
            delta_mg: self.delta_mg,
            rho1: self.rho1,
            degenerate_cca: self.degenerate_cca,
        }
    }
}

fn parse_label(name: &str) -> Result<EventLabel> {
    match name {
        "PRECURSOR" => Ok(EventLabel::Precursor),
        "REGIME_S" => Ok(EventLabel::RegimeS),
        "REGIME_D" => Ok(EventLabel::RegimeD),
        "REGIME_E" => Ok(EventLabel::RegimeE),
        "REGIME_K_CANDIDATE" => Ok(EventLabel::RegimeKCandidate),
        "MODE_F" => Ok(EventLabel::ModeF),
        "NORMAL" => Ok(EventLabel::Normal),
        other => Err(Error::data(format!("unknown event label: {other}"))),
    }
}

fn parse_gate(name: &str) -> Result<Gate> {
    ALL_GATES
        .into_iter()
        .find(|g| g.name() == name)
        .ok_or_else(|| Error::data(format!("unknown gate: {name}")))
}

/// Formats a double with 17 significant digits, enough to reproduce the
/// exact bit pattern on parse.
pub fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_sig17(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::data(format!("bad numeric cell {s:?}: {e}")))
}

/// Serializes records as newline-delimited JSON, one record per line.
pub fn to_ndjson(records: &[WindowRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_ndjson(text: &str) -> Result<Vec<WindowRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Column order of the flat channel table.
pub const TABLE_COLUMNS: [&str; 26] = [
    "date",
    "theta_deg",
    "delta_rho",
    "epsilon",
    "sigma_z",
    "cv",
    "alpha_global",
    "z_global",
    "alpha_guard",
    "z_guard",
    "alpha_exit",
    "z_exit",
    "shift_guard",
    "shift_exit",
    "shift_global",
    "delta_mg",
    "rho1",
    "degenerate_cca",
    "missing",
    "fired",
    "not_evaluable",
    "label",
    "provenance",
    "truth",
    "notes",
    "end",
];

fn cell(v: Option<f64>) -> String {
    v.map(format_sig17).unwrap_or_default()
}

fn list_cell(items: &[String]) -> String {
    items.join("|")
}

fn text_cell(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Renders records as a tab-separated table, one column per channel. Missing
/// values are empty cells; list cells join entries with `|`.
pub fn to_table(records: &[WindowRecord]) -> String {
    let mut out = TABLE_COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        let row = [
            r.date.to_string(),
            cell(r.theta_deg),
            cell(r.delta_rho),
            cell(r.epsilon),
            cell(r.sigma_z),
            cell(r.cv),
            cell(r.alpha_global),
            cell(r.z_global),
            cell(r.alpha_guard),
            cell(r.z_guard),
            cell(r.alpha_exit),
            cell(r.z_exit),
            cell(r.shift_guard),
            cell(r.shift_exit),
            cell(r.shift_global),
            cell(r.delta_mg),
            cell(r.rho1),
            r.degenerate_cca.to_string(),
            list_cell(&r.missing),
            list_cell(&r.fired),
            list_cell(&r.not_evaluable),
            r.label.name().to_string(),
            text_cell(&r.provenance),
            r.truth.clone().map(|t| text_cell(&t)).unwrap_or_default(),
            list_cell(&r.notes.iter().map(|n| text_cell(n)).collect::<Vec<_>>()),
            "end".to_string(),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn opt_num(cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_sig17(cell).map(Some)
    }
}

fn list_items(cell: &str) -> Vec<String> {
    if cell.is_empty() {
        Vec::new()
    } else {
        cell.split('|').map(str::to_string).collect()
    }
}

/// Parses a table emitted by [`to_table`] back into records. The numeric
/// columns reproduce the original doubles exactly.
pub fn parse_table(text: &str) -> Result<Vec<WindowRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty channel table"))?;
    let expected = TABLE_COLUMNS.join("\t");
    if header != expected {
        return Err(Error::data("channel table header does not match the schema"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != TABLE_COLUMNS.len() {
            return Err(Error::data(format!(
                "table row {} has {} cells, expected {}",
                i + 2,
                cells.len(),
                TABLE_COLUMNS.len()
            )));
        }
        let date = cells[0]
            .parse::<NaiveDate>()
            .map_err(|e| Error::data(format!("bad date {:?}: {e}", cells[0])))?;
        let label = parse_label(cells[21])?;
        for gate_cell in [cells[19], cells[20]] {
            for name in list_items(gate_cell) {
                parse_gate(&name)?;
            }
        }
        out.push(WindowRecord {
            date,
            theta_deg: opt_num(cells[1])?,
            delta_rho: opt_num(cells[2])?,
            epsilon: opt_num(cells[3])?,
            sigma_z: opt_num(cells[4])?,
            cv: opt_num(cells[5])?,
            alpha_global: opt_num(cells[6])?,
            z_global: opt_num(cells[7])?,
            alpha_guard: opt_num(cells[8])?,
            z_guard: opt_num(cells[9])?,
            alpha_exit: opt_num(cells[10])?,
            z_exit: opt_num(cells[11])?,
            shift_guard: opt_num(cells[12])?,
            shift_exit: opt_num(cells[13])?,
            shift_global: opt_num(cells[14])?,
            delta_mg: opt_num(cells[15])?,
            rho1: opt_num(cells[16])?,
            degenerate_cca: cells[17] == "true",
            missing: list_items(cells[18]),
            fired: list_items(cells[19]),
            not_evaluable: list_items(cells[20]),
            label,
            provenance: cells[22].to_string(),
            truth: if cells[23].is_empty() {
                None
            } else {
                Some(cells[23].to_string())
            },
            notes: list_items(cells[24]),
        });
    }
    Ok(out)
}
