//! Attention heat maps under teacher forcing.
//!
//! Columns are decoding steps, labelled by the token being predicted. The
//! first row is the switch probability π; the rows after it are the
//! attention distributions, one block per distribution:
//!
//! - recipes: `p_copy` over ingredient tokens;
//! - dialogues: `p_attr`, `p_row`, `p_col` and `p_copy` over the table;
//! - coref: `p_coref` over the entity slots, blank where a slot does not
//!   exist yet.
//!
//! Every block sums to 1 down each column.

use std::ops::Range;

use super::session::{Encoded, TaskModel, TrainedModel};
use super::data::Corpus;
use crate::error::{invalid, Result};
use crate::numcore::Tape;
use crate::task::Split;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMapRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub columns: Vec<String>,
    pub rows: Vec<HeatMapRow>,
}

impl HeatMap {
    fn new(columns: Vec<String>) -> Self {
        HeatMap { columns, rows: Vec::new() }
    }

    fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        self.rows.push(HeatMapRow {
            label: label.into(),
            values,
        });
    }

    /// Rows whose label starts with `prefix`.
    pub fn block(&self, prefix: &str) -> Vec<&HeatMapRow> {
        self.rows.iter().filter(|r| r.label.starts_with(prefix)).collect()
    }

    /// Keeps the columns in `range`, clipped to the available steps.
    pub fn clip(mut self, range: Range<usize>) -> Self {
        let n = self.columns.len();
        let (start, end) = (range.start.min(n), range.end.min(n).max(range.start.min(n)));
        if range.start > n || range.end > n {
            log::warn!("step range {}..{} clipped to {start}..{end} of {n} steps", range.start, range.end);
        }
        self.columns = self.columns[start..end].to_vec();
        for r in &mut self.rows {
            r.values = r.values[start..end].to_vec();
        }
        self
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.values.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }
}

fn transpose(per_step: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    let width = per_step.iter().map(Vec::len).max().unwrap_or(0);
    (0..width)
        .map(|k| per_step.iter().map(|s| s.get(k).copied()).collect())
        .collect()
}

impl TrainedModel {
    /// Heat map of example `index` of `split`, restricted to `steps` if given.
    pub fn heatmap(&self, corpus: &Corpus, split: Split, index: usize, steps: Option<Range<usize>>) -> Result<HeatMap> {
        let examples = self.encode(corpus, split);
        if index >= examples.len() {
            return Err(invalid(format!("{split} split has {} examples, asked for {index}", examples.len())));
        }
        let eos = self.vocab.token(crate::corpus::VocabSpec::EOS_ID).to_string();
        let mut tape = Tape::new(&self.store);
        let map = match (&self.model, &examples) {
            (TaskModel::Recipe(m), Encoded::Recipe(e)) => {
                let ex = &e[index];
                let steps = m.teacher_forced_steps(&mut tape, ex)?;
                let mut columns = ex.recipe_surfaces.clone();
                columns.push(eos);
                let mut map = HeatMap::new(columns);
                map.push("pi", steps.iter().map(|s| Some(s.switch_prob(&tape))).collect());
                let copy: Vec<Vec<f64>> = steps.iter().map(|s| tape.value(s.copy_probs).data().to_vec()).collect();
                let labels = ex
                    .ingredient_surfaces
                    .iter()
                    .enumerate()
                    .flat_map(|(i, ing)| ing.iter().enumerate().map(move |(j, t)| format!("p_copy {i}.{j} {t}")));
                for (label, values) in labels.zip(transpose(&copy)) {
                    map.push(label, values);
                }
                map
            }
            (TaskModel::Dialogue { model, table }, Encoded::Dialogue(e)) => {
                let ex = &e[index];
                let encoded = model.encode_table(&mut tape, table)?;
                let steps = model.teacher_forced_steps(&mut tape, &encoded, ex)?;
                let columns = steps
                    .iter()
                    .map(|(turn, v, _, _)| {
                        let tok = ex.turns[*turn].get(*v).map_or(eos.as_str(), |&id| self.vocab.token(id));
                        format!("t{turn} {tok}")
                    })
                    .collect();
                let mut map = HeatMap::new(columns);
                map.push("pi", steps.iter().map(|(_, _, s, _)| Some(s.switch_prob(&tape))).collect());
                let attrs: Vec<&str> = table.attributes.iter().map(|&a| self.vocab.token(a)).collect();
                let grab = |f: &dyn Fn(&crate::table_model::TableModelState) -> crate::numcore::Var| {
                    let per: Vec<Vec<f64>> = steps.iter().map(|(_, _, _, p)| tape.value(f(p)).data().to_vec()).collect();
                    transpose(&per)
                };
                for (a, values) in attrs.iter().zip(grab(&|p| p.p_attr)) {
                    map.push(format!("p_attr {a}"), values);
                }
                for (r, values) in grab(&|p| p.p_row).into_iter().enumerate() {
                    map.push(format!("p_row {r} {}", self.vocab.token(table.cells[r][0])), values);
                }
                for (a, values) in attrs.iter().zip(grab(&|p| p.p_col)) {
                    map.push(format!("p_col {a}"), values);
                }
                let cols = table.cols();
                for (k, values) in grab(&|p| p.p_copy).into_iter().enumerate() {
                    let (r, c) = (k / cols, k % cols);
                    map.push(format!("p_copy {r}.{c} {}", self.vocab.token(table.cells[r][c])), values);
                }
                map
            }
            (TaskModel::Coref(m), Encoded::Coref(e)) => {
                let doc = &e[index];
                if m.entity.is_none() {
                    return Err(invalid("the plain language model has no entity attention to export"));
                }
                drop(tape);
                let trace = m.attention_trace(&self.store, doc)?;
                let columns = doc.tokens.iter().map(|&t| self.vocab.token(t).to_string()).collect();
                let mut map = HeatMap::new(columns);
                map.push("pi", trace.iter().map(|(pi, _)| Some(*pi)).collect());
                let per: Vec<Vec<f64>> = trace.into_iter().map(|(_, p)| p).collect();
                for (k, values) in transpose(&per).into_iter().enumerate() {
                    let label = if k == 0 { "p_coref 0 new".to_string() } else { format!("p_coref {k}") };
                    map.push(label, values);
                }
                map
            }
            _ => return Err(invalid("examples do not match the model task")),
        };
        Ok(match steps {
            Some(r) => map.clip(r),
            None => map,
        })
    }
}
