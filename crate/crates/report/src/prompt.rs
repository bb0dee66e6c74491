//! Four-part user prompt built from one evidence record.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use searisk_core::evidence::{EvidenceRecord, TOP_NEIGHBORS};

use crate::error::{ReportError, Result};
use crate::schema::SECTION_KEYS;

pub const TOKEN_BUDGET: u32 = 2500;

pub const SYSTEM_TEXT: &str = "You act as a supply chain risk analyst for a maritime logistics region. \
You receive a structured evidence record describing one grid cell on one day: a predicted probability \
that congestion risk escalates tomorrow, the five features that deviate most from the daily average, \
and the two neighbouring cells the model weighted most. Use only the evidence provided. Do not \
introduce facts, causes, vessels, events or numbers that are not in the evidence. State each \
feature's risk direction exactly as given in the evidence table. Reply with a single JSON object \
and nothing else.";

/// Everything needed to request one report. The evidence travels with the
/// text so offline backends can work from it directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub header: String,
    pub feature_table: String,
    pub neighbor_block: String,
    pub schema_block: String,
    pub token_budget: u32,
    pub evidence: EvidenceRecord,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl PromptBundle {
    /// The user turn: header, feature table, neighbour block, schema, in that order.
    pub fn user_text(&self) -> String {
        [
            self.header.as_str(),
            self.feature_table.as_str(),
            self.neighbor_block.as_str(),
            self.schema_block.as_str(),
        ]
        .join("\n\n")
    }

    /// SHA-256 over the system text and user turn, lowercase hex.
    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update([0u8]);
        h.update(self.user_text().as_bytes());
        hex(&h.finalize())
    }
}

pub fn schema_block() -> String {
    let mut s = String::from("Respond with one JSON object containing exactly these six keys and no others:\n");
    let _ = writeln!(
        s,
        "- \"{}\": an array of exactly 5 objects, one per row of the feature table and in the same order, each \
         {{\"feature\": <feature name as written in the table>, \"direction\": \"increase risk\" or \"decrease risk\", \
         \"justification\": <one or two sentences citing the z-score and correlation>}}",
        SECTION_KEYS[0]
    );
    let _ = writeln!(s, "- \"{}\": a string on how the listed neighbours bear on this cell", SECTION_KEYS[1]);
    let _ = writeln!(s, "- \"{}\": a string summarizing the escalation risk", SECTION_KEYS[2]);
    let _ = writeln!(s, "- \"{}\": a string with what-if changes that would lower the risk", SECTION_KEYS[3]);
    let _ = writeln!(s, "- \"{}\": a string on how far the evidence supports the prediction", SECTION_KEYS[4]);
    let _ = write!(s, "- \"{}\": a string on what the evidence cannot show", SECTION_KEYS[5]);
    s
}

pub fn build_prompt(ev: &EvidenceRecord) -> Result<PromptBundle> {
    ev.validate()
        .map_err(|e| ReportError::IncompleteEvidence(e.to_string()))?;
    if ev.drivers.iter().any(|d| !d.z.is_finite() || !d.r.is_finite())
        || ev.neighbors.iter().any(|n| !n.weight.is_finite() || !n.z.is_finite())
    {
        return Err(ReportError::IncompleteEvidence(format!(
            "non-finite value in evidence for {} {}",
            ev.cell, ev.date
        )));
    }

    let header = format!(
        "Cell: {}\nDate: {}\nPredicted probability of next-day congestion-risk escalation: {:.3}",
        ev.cell, ev.date, ev.probability
    );

    let mut feature_table = String::from("Feature drivers (ranked by |z|):\n| rank | feature | z-score | direction | r |\n");
    for (k, d) in ev.drivers.iter().enumerate() {
        let _ = writeln!(
            feature_table,
            "| {} | {} | {:.3} | {} | {:.3} |",
            k + 1,
            d.feature,
            d.z,
            d.direction,
            d.r
        );
    }
    feature_table.truncate(feature_table.trim_end().len());

    let mut neighbor_block =
        String::from("Spatial neighbours (ranked by attention weight):\n| cell | weight | prominent feature | z-score |\n");
    for n in &ev.neighbors {
        let _ = writeln!(neighbor_block, "| {} | {:.3} | {} | {:.3} |", n.cell, n.weight, n.feature, n.z);
    }
    if ev.neighbor_shortfall {
        let _ = writeln!(
            neighbor_block,
            "Note: only {} spatial neighbour(s) are available for this cell, fewer than the usual {}; \
             do not invent the missing neighbour.",
            ev.neighbors.len(),
            TOP_NEIGHBORS
        );
    }
    neighbor_block.truncate(neighbor_block.trim_end().len());

    Ok(PromptBundle {
        system_text: SYSTEM_TEXT.to_string(),
        header,
        feature_table,
        neighbor_block,
        schema_block: schema_block(),
        token_budget: TOKEN_BUDGET,
        evidence: ev.clone(),
    })
}
