//! Plain-text checkpoints.
//!
//! ```text
//! KANMIXER-CKPT v1
//! <config echo line>
//! <name> dims <d1> <d2> ...
//! <v1> <v2> ...
//! ```
//!
//! Values are written with 17 significant digits so a save/load/save cycle
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::MixerModel;
use crate::tensor::{ParamStore, Tensor};

pub const HEADER: &str = "KANMIXER-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: Vec<SavedParam>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes the store of `model` together with `config`.
pub fn to_text(store: &ParamStore, config: &RunConfig) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&config.echo_line());
    out.push('\n');
    for p in store.iter() {
        out.push_str(&p.name);
        out.push_str(" dims");
        for d in p.tensor.shape() {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        let vals: Vec<String> = p.tensor.data().iter().map(|&v| format_value(v)).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn save(path: impl AsRef<Path>, model: &MixerModel, config: &RunConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_text(model.store(), config)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Lines<'a> {
    /// Next line with its 1-based number and starting byte offset.
    fn next_line(&mut self, what: &str) -> Result<(usize, usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(Error::Parse {
                line: self.line + 1,
                offset: self.pos,
                message: format!("unexpected end of file, expected {what}"),
            });
        }
        let rest = &self.text[self.pos..];
        let Some(end) = rest.find('\n') else {
            return Err(Error::Parse {
                line: self.line + 1,
                offset: self.text.len(),
                message: format!("truncated {what}: missing line terminator"),
            });
        };
        let start = self.pos;
        self.pos += end + 1;
        self.line += 1;
        Ok((self.line, start, &rest[..end]))
    }
}

fn parse_err(line: usize, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        offset,
        message: message.into(),
    }
}

pub fn parse(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines { text, pos: 0, line: 0 };
    let (ln, off, header) = lines.next_line("header")?;
    if header != HEADER {
        return Err(parse_err(ln, off, format!("expected `{HEADER}`")));
    }
    let (ln, off, echo) = lines.next_line("config line")?;
    let config = RunConfig::from_echo(echo).map_err(|e| parse_err(ln, off, e.to_string()))?;

    let mut params = Vec::new();
    while lines.pos < text.len() {
        let (ln, off, head) = lines.next_line("parameter header")?;
        let mut parts = head.split(' ');
        let name = parts.next().filter(|s| !s.is_empty());
        let (Some(name), Some("dims")) = (name, parts.next()) else {
            return Err(parse_err(ln, off, "expected `<name> dims <d1> ...`"));
        };
        let dims = parts
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(ln, off, format!("bad dimension in `{head}`")))?;
        if dims.is_empty() {
            return Err(parse_err(ln, off, format!("`{name}` has no dimensions")));
        }
        let expected: usize = dims.iter().product();
        let what = format!("values of `{name}`");
        let (ln, off, body) = lines.next_line(&what)?;
        let mut values = Vec::with_capacity(expected);
        let mut col = 0;
        for tok in body.split(' ') {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(ln, off + col, format!("bad number `{tok}` in {what}")))?;
            values.push(v);
            col += tok.len() + 1;
        }
        if values.len() != expected {
            return Err(parse_err(
                ln,
                off,
                format!("{what}: expected {expected} numbers, found {}", values.len()),
            ));
        }
        params.push(SavedParam {
            name: name.to_string(),
            dims,
            values,
        });
    }
    Ok(Checkpoint { config, params })
}

pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

impl Checkpoint {
    /// Rebuilds the model stored in the checkpoint.
    pub fn build_model(&self) -> Result<MixerModel> {
        let mut model = MixerModel::new(self.config.model.clone(), self.config.train.seed)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Copies the saved values into `model`, which must have the same
    /// parameter names and shapes in the same order.
    pub fn load_into(&self, model: &mut MixerModel) -> Result<()> {
        let store = model.store_mut();
        if store.len() != self.params.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (p, saved) in store.iter_mut().zip(&self.params) {
            if p.name != saved.name || p.tensor.shape() != saved.dims.as_slice() {
                return Err(Error::config(format!(
                    "checkpoint parameter `{}` {:?} does not match model parameter `{}` {:?}",
                    saved.name,
                    saved.dims,
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor = Tensor::new(saved.dims.clone(), saved.values.clone())?;
        }
        Ok(())
    }

    /// Fails unless every `model.*` key matches `config`.
    pub fn check_model_config(&self, config: &RunConfig) -> Result<()> {
        for ((key, saved), (_, wanted)) in self.config.model_pairs().iter().zip(config.model_pairs()) {
            if *saved != wanted {
                return Err(Error::config(format!(
                    "checkpoint was trained with {key}={saved}, config has {key}={wanted}"
                )));
            }
        }
        Ok(())
    }
}
