//! Reference selection-frequency tables and comparison against simulated ones.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{same_design, Case, CriterionPair, Design, FrequencyTable, TableBlock};

const CASE_I: &str = include_str!("../data/reference_case_i.csv");
const CASE_II: &str = include_str!("../data/reference_case_ii.csv");
const CASE_III: &str = include_str!("../data/reference_case_iii.csv");

/// Counts `[drift_idx][scale_idx]` for one criterion preset and design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBlock {
    pub criterion: String,
    pub design: Design,
    pub counts: Vec<Vec<u64>>,
}

impl ReferenceBlock {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Count over the block's own total (some reference blocks do not sum to the replication count).
    pub fn frequency(&self, drift_idx: usize, scale_idx: usize) -> f64 {
        self.counts[drift_idx][scale_idx] as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub blocks: Vec<ReferenceBlock>,
}

#[derive(Debug, Deserialize)]
struct Row {
    criterion: String,
    t_end: f64,
    h: f64,
    drift_idx: usize,
    scale_idx: usize,
    count: u64,
}

impl ReferenceTable {
    /// Parse rows `criterion,t_end,h,n,drift_idx,scale_idx,count,replications`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut blocks: Vec<ReferenceBlock> = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            let row = rec.map_err(|e| Error::Data {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let design = Design { h: row.h, t_end: row.t_end };
            let idx = match blocks.iter().position(|b| b.criterion == row.criterion && same_design(b.design, design)) {
                Some(i) => i,
                None => {
                    blocks.push(ReferenceBlock { criterion: row.criterion.clone(), design, counts: Vec::new() });
                    blocks.len() - 1
                }
            };
            let counts = &mut blocks[idx].counts;
            if counts.len() <= row.drift_idx {
                counts.resize(row.drift_idx + 1, Vec::new());
            }
            let r = &mut counts[row.drift_idx];
            if r.len() <= row.scale_idx {
                r.resize(row.scale_idx + 1, 0);
            }
            r[row.scale_idx] = row.count;
        }
        Ok(Self { blocks })
    }

    /// Reference table for a built-in case; `None` for the Gaussian case.
    pub fn builtin(case: Case) -> Option<Self> {
        let text = match case {
            Case::I => CASE_I,
            Case::Ii => CASE_II,
            Case::Iii => CASE_III,
            Case::Gaussian => return None,
        };
        Some(Self::from_csv(text.as_bytes()).expect("bundled reference data parses"))
    }

    pub fn block(&self, criterion: &str, design: Design) -> Option<&ReferenceBlock> {
        self.blocks.iter().find(|b| b.criterion == criterion && same_design(b.design, design))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub criterion: String,
    pub design: Design,
    pub drift_idx: usize,
    pub scale_idx: usize,
    pub simulated: f64,
    pub reference: f64,
    pub difference: f64,
    /// Two-sample binomial standard error of the difference.
    pub std_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tolerance_se: f64,
    pub cells: Vec<CellComparison>,
    pub all_pass: bool,
}

/// Binomial standard error of the difference of two frequencies, using the
/// pooled proportion kept away from 0 and 1 by half a count.
pub fn two_sample_se(p1: f64, n1: u64, p2: f64, n2: u64) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let pooled = ((p1 * a + p2 * b) / (a + b)).clamp(0.5 / (a + b), 1.0 - 0.5 / (a + b));
    (pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b)).sqrt()
}

fn compare_block(block: &TableBlock, reference: &ReferenceBlock, name: &str, tol: f64, out: &mut Vec<CellComparison>) -> Result<()> {
    let shape = |c: &Vec<Vec<u64>>| (c.len(), c.first().map_or(0, Vec::len));
    if shape(&block.counts) != shape(&reference.counts) {
        return Err(Error::ShapeMismatch(format!(
            "{name} at h = {}, T = {}: simulated {:?} vs reference {:?}",
            block.design.h,
            block.design.t_end,
            shape(&block.counts),
            shape(&reference.counts)
        )));
    }
    for d in 0..block.counts.len() {
        for s in 0..block.counts[d].len() {
            let sim = block.frequency(d, s);
            let rf = reference.frequency(d, s);
            let se = two_sample_se(sim, block.total(), rf, reference.total());
            out.push(CellComparison {
                criterion: name.to_string(),
                design: block.design,
                drift_idx: d,
                scale_idx: s,
                simulated: sim,
                reference: rf,
                difference: sim - rf,
                std_error: se,
                pass: (sim - rf).abs() <= tol * se,
            });
        }
    }
    Ok(())
}

/// Compare every simulated block that has a reference counterpart, cell by
/// cell, passing cells whose difference is within `tolerance_se` standard errors.
pub fn compare_to_reference(table: &FrequencyTable, reference: &ReferenceTable, tolerance_se: f64) -> Result<ComparisonReport> {
    if reference.blocks.is_empty() {
        return Err(Error::Precondition("reference table is empty".into()));
    }
    let mut cells = Vec::new();
    for block in &table.blocks {
        let Some(name) = block.criterion.preset_name() else { continue };
        if let Some(rb) = reference.block(name, block.design) {
            compare_block(block, rb, name, tolerance_se, &mut cells)?;
        }
    }
    if cells.is_empty() {
        return Err(Error::ShapeMismatch("no simulated block matches a reference block".into()));
    }
    let all_pass = cells.iter().all(|c| c.pass);
    Ok(ComparisonReport { tolerance_se, cells, all_pass })
}

/// Reference table built from simulated counts (useful for comparing two runs).
impl From<&FrequencyTable> for ReferenceTable {
    fn from(t: &FrequencyTable) -> Self {
        Self {
            blocks: t
                .blocks
                .iter()
                .filter_map(|b| {
                    Some(ReferenceBlock {
                        criterion: CriterionPair::preset_name(&b.criterion)?.to_string(),
                        design: b.design,
                        counts: b.counts.clone(),
                    })
                })
                .collect(),
        }
    }
}
