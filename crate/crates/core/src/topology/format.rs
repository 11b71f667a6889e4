//! Line-oriented text form of a [`DagTopology`]:
//!
//! ```text
//! N 4
//! E 0 1
//! E 0 2
//! SEED 7
//! GEN ER p=0.6
//! ```

use std::fmt::Write as _;

use super::{DagTopology, Generator};
use crate::error::{Error, Result};

impl Generator {
    pub fn tag(&self) -> String {
        match self {
            Generator::ErdosRenyi { p } => format!("ER p={p:?}"),
            Generator::WattsStrogatz { k, p } => format!("WS k={k} p={p:?}"),
            Generator::Chain => "CHAIN".to_string(),
            Generator::Custom => "CUSTOM".to_string(),
        }
    }

    pub fn parse_tag(tag: &str) -> Result<Self> {
        let mut parts = tag.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let mut field = |name: &str| -> Result<String> {
            let item = parts
                .next()
                .ok_or_else(|| Error::invalid(format!("generator tag `{tag}` is missing {name}")))?;
            item.strip_prefix(name)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| Error::invalid(format!("expected {name}=... in `{tag}`")))
        };
        let num = |s: String| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid(format!("bad number `{s}` in `{tag}`")))
        };
        match kind {
            "ER" => Ok(Generator::ErdosRenyi { p: num(field("p")?)? }),
            "WS" => {
                let k = field("k")?;
                let k = k
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad k `{k}` in `{tag}`")))?;
                Ok(Generator::WattsStrogatz { k, p: num(field("p")?)? })
            }
            "CHAIN" => Ok(Generator::Chain),
            "CUSTOM" => Ok(Generator::Custom),
            _ => Err(Error::invalid(format!("unknown generator tag `{tag}`"))),
        }
    }
}

impl DagTopology {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "N {}", self.node_count);
        for (i, j) in &self.edges {
            let _ = writeln!(s, "E {i} {j}");
        }
        let _ = writeln!(s, "SEED {}", self.seed);
        let _ = writeln!(s, "GEN {}", self.generator.tag());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut node_count = None;
        let mut edges = Vec::new();
        let mut seed = None;
        let mut generator = None;
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let content = line.trim_end_matches(['\n', '\r']);
            let err = |m: String| Error::Format { offset, message: m };
            let (key, rest) = content.split_once(' ').unwrap_or((content, ""));
            match key {
                "" => {}
                "N" if node_count.is_none() => {
                    node_count = Some(rest.parse::<usize>().map_err(|_| err(format!("bad node count `{rest}`")))?);
                }
                "E" => {
                    let mut it = rest.split(' ');
                    let mut next = || -> Result<usize> {
                        it.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| err(format!("bad edge `{rest}`")))
                    };
                    edges.push((next()?, next()?));
                }
                "SEED" => seed = Some(rest.parse::<u64>().map_err(|_| err(format!("bad seed `{rest}`")))?),
                "GEN" => generator = Some(Generator::parse_tag(rest).map_err(|e| err(e.to_string()))?),
                _ => return Err(err(format!("unexpected line `{content}`"))),
            }
            offset += line.len();
        }
        let node_count = node_count.ok_or(Error::Format {
            offset: 0,
            message: "missing `N` header".into(),
        })?;
        DagTopology::from_edges(
            node_count,
            edges,
            generator.unwrap_or(Generator::Custom),
            seed.unwrap_or(0),
        )
    }
}
