//! Plain-text checkpoints.
//!
//! ```text
//! spanqa-checkpoint 1
//! {"d_emb":32,"vocab_size":…,"objective":"I+J","seed":0,"epochs_done":20,"config":{…}}
//! vocab <n>
//! <one token per line>
//! param <name> <rows> <cols>
//! <rows lines of cols values>
//! …
//! optimizer <step>
//! moments <name> <len>
//! <m values>
//! <v values>
//! …
//! ```
//! Floats are written in shortest round-trip form, so reloading is exact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ObjectiveKind, TrainConfig, TrainState, Vocab, BLOCK_NAMES};
use crate::error::{Error, Result};
use crate::optim::AdamW;

const MAGIC: &str = "spanqa-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub d_emb: usize,
    pub vocab_size: usize,
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub epochs_done: usize,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub vocab: Vocab,
    pub state: TrainState,
}

fn write_values(out: &mut String, values: &[f64], per_line: usize) {
    for line in values.chunks(per_line.max(1)) {
        let row: Vec<String> = line.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Format("checkpoint ends early".into()))
    }

    /// Reads a `<keyword> <fields…>` line.
    fn expect(&mut self, keyword: &str, fields: usize) -> Result<Vec<&'a str>> {
        let (n, line) = self.next_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&keyword) || parts.len() != fields + 1 {
            return Err(Error::Format(format!(
                "line {n}: expected `{keyword}` with {fields} fields, got {line:?}"
            )));
        }
        Ok(parts[1..].to_vec())
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let (n, line) = self.next_line()?;
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Format(format!("line {n}: bad number {tok:?}")))?;
                out.push(v);
            }
        }
        if out.len() != count {
            return Err(Error::Format(format!(
                "expected {count} values, got {}",
                out.len()
            )));
        }
        Ok(out)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("expected a non-negative integer, got {s:?}")))
}

impl Checkpoint {
    pub fn new(vocab: Vocab, state: TrainState, config: &TrainConfig) -> Self {
        let header = CheckpointHeader {
            d_emb: state.params.dim(),
            vocab_size: vocab.len(),
            objective: config.objective,
            seed: config.seed,
            epochs_done: state.epochs_done,
            config: config.clone(),
        };
        Self {
            header,
            vocab,
            state,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").expect("write to string");
        out.push_str(&serde_json::to_string(&self.header)?);
        out.push('\n');
        writeln!(out, "vocab {}", self.vocab.len()).expect("write to string");
        for t in self.vocab.tokens() {
            out.push_str(t);
            out.push('\n');
        }
        let params = &self.state.params;
        for ((name, (rows, cols)), block) in BLOCK_NAMES
            .iter()
            .zip(params.block_shapes())
            .zip(params.blocks())
        {
            writeln!(out, "param {name} {rows} {cols}").expect("write to string");
            write_values(&mut out, block, cols);
        }
        let opt = &self.state.optimizer;
        writeln!(out, "optimizer {}", opt.step).expect("write to string");
        for ((name, m), v) in BLOCK_NAMES.iter().zip(&opt.m).zip(&opt.v) {
            writeln!(out, "moments {name} {}", m.len()).expect("write to string");
            if !m.is_empty() {
                write_values(&mut out, m, m.len());
                write_values(&mut out, v, v.len());
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        let (_, magic) = lines.next_line()?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "not a checkpoint (first line {magic:?})"
            )));
        }
        let (_, header_line) = lines.next_line()?;
        let header: CheckpointHeader = serde_json::from_str(header_line)?;
        header.config.validate()?;
        if header.d_emb != header.config.d_emb {
            return Err(Error::Format(
                "header dimension disagrees with its config".into(),
            ));
        }

        let n = parse_usize(lines.expect("vocab", 1)?[0])?;
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            tokens.push(lines.next_line()?.1.to_string());
        }
        let vocab = Vocab::from_tokens(tokens)?;
        if vocab.len() != header.vocab_size {
            return Err(Error::Format(
                "vocabulary size disagrees with header".into(),
            ));
        }

        let mut params = ModelParams::zeros(vocab.len(), header.d_emb, header.config.similarity);
        let shapes = params.block_shapes();
        for ((name, shape), block) in BLOCK_NAMES.iter().zip(shapes).zip(params.blocks_mut()) {
            let f = lines.expect("param", 3)?;
            let got = (parse_usize(f[1])?, parse_usize(f[2])?);
            if f[0] != *name || got != shape {
                return Err(Error::Format(format!(
                    "expected block {name} {shape:?}, found {} {got:?}",
                    f[0]
                )));
            }
            block.copy_from_slice(&lines.values(block.len())?);
        }
        if !params.is_finite() {
            return Err(Error::Format(
                "checkpoint holds non-finite parameters".into(),
            ));
        }

        let step: u64 = lines.expect("optimizer", 1)?[0]
            .parse()
            .map_err(|_| Error::Format("bad optimizer step".into()))?;
        let mut optimizer = AdamW::new(header.config.optimizer(), &params.block_sizes());
        optimizer.step = step;
        for ((name, m), v) in BLOCK_NAMES
            .iter()
            .zip(&mut optimizer.m)
            .zip(&mut optimizer.v)
        {
            let f = lines.expect("moments", 2)?;
            if f[0] != *name || parse_usize(f[1])? != m.len() {
                return Err(Error::Format(format!(
                    "expected moments for {name}, found {}",
                    f[0]
                )));
            }
            if !m.is_empty() {
                *m = lines.values(m.len())?;
                *v = lines.values(v.len())?;
            }
        }
        let state = TrainState {
            params,
            optimizer,
            epochs_done: header.epochs_done,
        };
        Ok(Self {
            header,
            vocab,
            state,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
