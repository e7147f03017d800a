//! Binary checkpoints: a text header followed by little-endian `f64` values.
//!
//! ```text
//! specshift-checkpoint 1
//! [config]
//! key = value            (run configuration echo)
//! [meta]
//! key = value
//! [tensors]
//! name dim0xdim1x...
//! [payload]
//! <f64 LE values of every tensor, in header order>
//! ```

use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};
use crate::stationarity::StabilityScores;
use crate::training::Pipeline;

const MAGIC: &str = "specshift-checkpoint 1";
const SCORES: &str = "scores";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(m: impl Into<String>) -> Error {
    Error::Checkpoint(m.into())
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key).ok_or_else(|| bad(format!("missing meta `{key}`")))?;
        v.parse().map_err(|_| bad(format!("meta `{key}`: cannot parse `{v}`")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\n[config]\n");
        for line in self.config.lines() {
            head.push_str(line);
            head.push('\n');
        }
        head.push_str("[meta]\n");
        for (k, v) in &self.meta {
            head.push_str(&format!("{k} = {v}\n"));
        }
        head.push_str("[tensors]\n");
        for (n, t) in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("{n} {}\n", dims.join("x")));
        }
        head.push_str("[payload]\n");
        let mut out = head.into_bytes();
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        const END: &[u8] = b"[payload]\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| bad("no payload marker"))?;
        let head = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let payload = &bytes[split + END.len()..];
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a specshift checkpoint (bad magic line)"));
        }
        let mut ck = Checkpoint::default();
        let mut section = "";
        let mut shapes = Vec::new();
        for line in lines {
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "[config]" => {
                    ck.config.push_str(line);
                    ck.config.push('\n');
                }
                "[meta]" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad meta line `{line}`")))?;
                    ck.meta.push((k.to_string(), v.to_string()));
                }
                "[tensors]" => {
                    let (n, dims) = line.rsplit_once(' ').ok_or_else(|| bad(format!("bad tensor line `{line}`")))?;
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("tensor `{n}`: bad shape `{dims}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    shapes.push((n.to_string(), shape));
                }
                other => return Err(bad(format!("unexpected section `{other}`"))),
            }
        }
        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(bad(format!("payload has {} bytes, header declares {}", payload.len(), total * 8)));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for (n, shape) in shapes {
            let len = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(len).collect();
            ck.tensors.push((n, Tensor::new(shape, data)?));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::File { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::File { path: path.to_path_buf(), message: e.to_string() })?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn push_scores(ck: &mut Checkpoint, s: &StabilityScores) {
    ck.meta.push(("scores.metric".into(), s.metric.to_string()));
    ck.meta.push(("scores.epsilon".into(), s.epsilon.to_string()));
    ck.meta.push(("scores.samples".into(), s.samples.to_string()));
    let (k, c) = (s.bins(), s.channels());
    let data = (0..k * c).map(|j| s.get(j / c, j % c)).collect();
    ck.tensors.push((SCORES.into(), Tensor { shape: vec![k, c], data }));
}

fn read_scores(ck: &Checkpoint) -> Result<Option<StabilityScores>> {
    let Some(t) = ck.tensor(SCORES) else { return Ok(None) };
    let [k, c] = t.shape[..] else {
        return Err(bad(format!("tensor `{SCORES}` must be 2-D, got {:?}", t.shape)));
    };
    let metric = ck.meta("scores.metric").ok_or_else(|| bad("missing meta `scores.metric`"))?.parse()?;
    let values = (0..k * c).map(|j| t.data[(j % k) * c + j / k]).collect();
    let s = StabilityScores::from_values(k, c, values, metric, ck.meta_parse("scores.epsilon")?, ck.meta_parse("scores.samples")?)
        .map_err(|e| bad(format!("tensor `{SCORES}`: {e}")))?;
    Ok(Some(s))
}

/// Stability scores alone, as written by `stats`. The `scores` tensor is
/// stored bins x channels.
pub fn scores_checkpoint(config: &RunConfig, scores: &StabilityScores) -> Checkpoint {
    let mut ck = Checkpoint { config: config.to_text(), ..Default::default() };
    ck.meta.push(("kind".into(), "scores".into()));
    ck.meta.push(("window".into(), config.train.window.to_string()));
    push_scores(&mut ck, scores);
    ck
}

pub fn scores_from_checkpoint(ck: &Checkpoint) -> Result<StabilityScores> {
    read_scores(ck)?.ok_or_else(|| bad(format!("no `{SCORES}` tensor")))
}

/// A trained pipeline with its configuration and scores.
pub fn pipeline_checkpoint(config: &RunConfig, p: &Pipeline) -> Checkpoint {
    let mut ck = Checkpoint { config: config.to_text(), ..Default::default() };
    ck.meta.push(("kind".into(), "pipeline".into()));
    ck.meta.push(("lookback".into(), p.lookback.to_string()));
    ck.meta.push(("horizon".into(), p.horizon.to_string()));
    ck.meta.push(("channels".into(), p.channels.to_string()));
    ck.meta.push(("method".into(), p.method().to_string()));
    ck.tensors = p.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    if let Some(s) = &p.scores {
        push_scores(&mut ck, s);
    }
    ck
}

/// Rebuild the configuration and pipeline. Incompatible tensors are
/// reported by name.
pub fn pipeline_from_checkpoint(ck: &Checkpoint) -> Result<(RunConfig, Pipeline)> {
    if ck.meta("kind") != Some("pipeline") {
        return Err(bad("not a pipeline checkpoint"));
    }
    let config = RunConfig::parse(&ck.config).map_err(|e| bad(format!("config echo: {e}")))?;
    let (l, h, c): (usize, usize, usize) = (ck.meta_parse("lookback")?, ck.meta_parse("horizon")?, ck.meta_parse("channels")?);
    let mut store = ParamStore::new();
    for (n, t) in ck.tensors.iter().filter(|(n, _)| n != SCORES) {
        store.add(n.clone(), t.clone());
    }
    let p = Pipeline::bind(config.train.clone(), l, h, c, store, read_scores(ck)?).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(m),
        other => Error::Checkpoint(other.to_string()),
    })?;
    Ok((config, p))
}
