//! Label files.
//!
//! `node_labels.tsv`: header `gene bp cc rel`, tab-separated; `bp` and `cc`
//! are bit strings such as `101`, `rel` is `0` or `1`. An empty field means
//! the gene is unlabelled for that task.
//!
//! `graph_labels.tsv`: header `patient time event subtype`; `event` is `1`
//! for death and `0` for censoring, `subtype` a class index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::survival::SurvivalRecord;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLabels {
    pub genes: Vec<String>,
    pub bp: Vec<Option<Vec<bool>>>,
    pub cc: Vec<Option<Vec<bool>>>,
    pub rel: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLabels {
    pub patients: Vec<String>,
    pub survival: Vec<SurvivalRecord>,
    pub subtype: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub node: NodeLabels,
    pub graph: GraphLabels,
}

fn bits_to_string(bits: &Option<Vec<bool>>) -> String {
    bits.as_ref()
        .map(|b| b.iter().map(|&x| if x { '1' } else { '0' }).collect())
        .unwrap_or_default()
}

fn parse_bits(field: &str) -> Option<std::result::Result<Vec<bool>, String>> {
    if field.is_empty() {
        return None;
    }
    Some(
        field
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(format!("invalid bit string {field:?}")),
            })
            .collect(),
    )
}

fn tsv_rows<'a>(text: &'a str, origin: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::parse(origin, "line 1", "empty file"))?;
    let got: Vec<&str> = first.split('\t').collect();
    if got != header {
        return Err(Error::parse(
            origin,
            "line 1",
            format!("expected header {:?}, found {got:?}", header.join("\t")),
        ));
    }
    lines
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != header.len() {
                return Err(Error::parse(
                    origin,
                    format!("line {}", i + 1),
                    format!("{} fields, expected {}", fields.len(), header.len()),
                ));
            }
            Ok((i + 1, fields))
        })
        .collect()
}

impl NodeLabels {
    pub fn validate(&self) -> Result<()> {
        let n = self.genes.len();
        ensure!(
            self.bp.len() == n && self.cc.len() == n && self.rel.len() == n,
            Validation,
            "node label columns must all have {n} entries"
        );
        for (name, col) in [("bp", &self.bp), ("cc", &self.cc)] {
            let mut widths = col.iter().flatten().map(Vec::len);
            if let Some(w) = widths.next() {
                ensure!(widths.all(|x| x == w), Validation, "{name} bit strings differ in width");
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gene\tbp\tcc\trel\n");
        for i in 0..self.genes.len() {
            let rel = self.rel[i].map(|b| if b { "1" } else { "0" }).unwrap_or("");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.genes[i],
                bits_to_string(&self.bp[i]),
                bits_to_string(&self.cc[i]),
                rel
            );
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut out = Self {
            genes: Vec::new(),
            bp: Vec::new(),
            cc: Vec::new(),
            rel: Vec::new(),
        };
        for (line, f) in tsv_rows(text, origin, &["gene", "bp", "cc", "rel"])? {
            let ctx = |col: usize| format!("line {line} column {col}");
            out.genes.push(f[0].to_owned());
            out.bp.push(parse_bits(f[1]).transpose().map_err(|m| Error::parse(origin, ctx(2), m))?);
            out.cc.push(parse_bits(f[2]).transpose().map_err(|m| Error::parse(origin, ctx(3), m))?);
            out.rel.push(match f[3] {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(Error::parse(origin, ctx(4), format!("expected 0 or 1, found {other:?}"))),
            });
        }
        out.validate().map_err(|e| Error::parse(origin, "labels", e.to_string()))?;
        Ok(out)
    }
}

impl GraphLabels {
    pub fn validate(&self) -> Result<()> {
        let n = self.patients.len();
        ensure!(
            self.survival.len() == n && self.subtype.len() == n,
            Validation,
            "graph label columns must all have {n} entries"
        );
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("patient\ttime\tevent\tsubtype\n");
        for i in 0..self.patients.len() {
            let r = self.survival[i];
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.patients[i],
                r.time,
                u8::from(r.event),
                self.subtype[i]
            );
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut out = Self {
            patients: Vec::new(),
            survival: Vec::new(),
            subtype: Vec::new(),
        };
        for (line, f) in tsv_rows(text, origin, &["patient", "time", "event", "subtype"])? {
            let ctx = |col: usize| format!("line {line} column {col}");
            let time: f64 = f[1]
                .parse()
                .map_err(|_| Error::parse(origin, ctx(2), format!("not a number: {:?}", f[1])))?;
            let event = match f[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(origin, ctx(3), format!("expected 0 or 1, found {other:?}"))),
            };
            let record = SurvivalRecord::new(time, event).map_err(|e| Error::parse(origin, ctx(2), e.to_string()))?;
            let subtype = f[3]
                .parse()
                .map_err(|_| Error::parse(origin, ctx(4), format!("not a class index: {:?}", f[3])))?;
            out.patients.push(f[0].to_owned());
            out.survival.push(record);
            out.subtype.push(subtype);
        }
        Ok(out)
    }
}

impl LabelSet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let node = dir.join("node_labels.tsv");
        fs::write(&node, self.node.to_tsv()).map_err(|e| Error::io(&node, e))?;
        let graph = dir.join("graph_labels.tsv");
        fs::write(&graph, self.graph.to_tsv()).map_err(|e| Error::io(&graph, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let node = dir.join("node_labels.tsv");
        let graph = dir.join("graph_labels.tsv");
        let nt = fs::read_to_string(&node).map_err(|e| Error::io(&node, e))?;
        let gt = fs::read_to_string(&graph).map_err(|e| Error::io(&graph, e))?;
        Ok(Self {
            node: NodeLabels::from_tsv(&nt, &node)?,
            graph: GraphLabels::from_tsv(&gt, &graph)?,
        })
    }
}
