//! Trainable-parameter table across the preset geometries.

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::Result;
use crate::head::HeadConfig;
use crate::peft::PeftConfig;

/// Display name and preset of each table row.
pub const TABLE_ROWS: [(&str, &str); 5] = [
    ("Whisper Tiny", "whisper-tiny-geom"),
    ("Whisper Base", "whisper-base-geom"),
    ("Whisper Small", "whisper-small-geom"),
    ("W2V 2.0 Base", "w2v2-base-geom"),
    ("WavLM Base+", "wavlm-base-plus-geom"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub preset: String,
    pub downstream: usize,
    pub adapter: usize,
    pub prompt: usize,
    pub lora: usize,
}

impl TableRow {
    pub fn cells(&self) -> [usize; 4] {
        [self.downstream, self.adapter, self.prompt, self.lora]
    }
}

/// Millions with two decimals, e.g. `"2.37 M"`.
pub fn millions(n: usize) -> String {
    format!("{:.2} M", n as f64 / 1e6)
}

/// Rows use the default sizes: bottleneck 128, prompt length 5, rank 8.
pub fn param_table() -> Result<Vec<TableRow>> {
    TABLE_ROWS
        .iter()
        .map(|&(model, preset)| {
            let bb = BackboneConfig::preset(preset)?;
            Ok(TableRow {
                model: model.to_string(),
                preset: preset.to_string(),
                downstream: HeadConfig::for_backbone(&bb).param_count(),
                adapter: PeftConfig::adapter(128).trainable_count(&bb),
                prompt: PeftConfig::prompt(5).trainable_count(&bb),
                lora: PeftConfig::lora(8).trainable_count(&bb),
            })
        })
        .collect()
}

/// Plain-text rendering with exact integers and rounded millions.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut out = format!(
        "{:<14} {:>20} {:>20} {:>18} {:>18}\n",
        "Model", "Downstream", "Adapter", "Prompt", "LoRA"
    );
    for r in rows {
        let cell = |n: usize| format!("{n} ({})", millions(n));
        out.push_str(&format!(
            "{:<14} {:>20} {:>20} {:>18} {:>18}\n",
            r.model,
            cell(r.downstream),
            cell(r.adapter),
            cell(r.prompt),
            cell(r.lora)
        ));
    }
    out
}
