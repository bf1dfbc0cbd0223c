use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AnswerSets, OracleError, Result, SampledQuery, VertexSet};
use crate::graph::{Split, Vocab};
use crate::query::{parse, render, QueryType};

/// One line of a sampled-query file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLine {
    #[serde(rename = "type")]
    pub qtype: QueryType,
    pub split: Split,
    pub query: String,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub attempt: u64,
}

fn names(v: &Vocab, s: &VertexSet) -> Vec<String> {
    s.iter().map(|x| v.name(*x).to_string()).collect()
}

pub fn write_dataset(queries: &[SampledQuery], vocab: &Vocab, mut w: impl Write) -> Result<()> {
    let io = |e: std::io::Error| OracleError::Dataset {
        line: 0,
        message: e.to_string(),
    };
    for q in queries {
        let line = DatasetLine {
            qtype: q.qtype,
            split: q.split,
            query: render(&q.query, vocab),
            train: names(vocab, &q.answers.train),
            valid: names(vocab, &q.answers.valid),
            test: names(vocab, &q.answers.test),
            seed: q.seed,
            attempt: q.attempt,
        };
        let text = serde_json::to_string(&line).map_err(|e| OracleError::Dataset {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{text}").map_err(io)?;
    }
    Ok(())
}

pub fn read_dataset(r: impl BufRead, vocab: &Vocab) -> Result<Vec<SampledQuery>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let err = |message: String| OracleError::Dataset {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DatasetLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let query = parse(&d.query, vocab).map_err(|e| err(e.to_string()))?;
        let kind = query.answer_kind();
        let set = |xs: &[String]| -> Result<VertexSet> {
            xs.iter()
                .map(|n| {
                    vocab
                        .lookup(kind, n)
                        .ok_or_else(|| err(format!("unknown {kind} {n:?}")))
                })
                .collect()
        };
        out.push(SampledQuery {
            answers: AnswerSets {
                train: set(&d.train)?,
                valid: set(&d.valid)?,
                test: set(&d.test)?,
            },
            query,
            qtype: d.qtype,
            split: d.split,
            seed: d.seed,
            attempt: d.attempt,
        });
    }
    Ok(out)
}
