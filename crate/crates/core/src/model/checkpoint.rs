//! Self-describing text checkpoints.
//!
//! ```text
//! nevncd-checkpoint v1
//! config_hash <sha256 hex of the architecture>
//! architecture <json>
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <rows * cols row-major values>
//! end
//! ```
//!
//! Values are written in shortest round-trip form, so save/load is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, Dense, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &str = "nevncd-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub architecture: Architecture,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let mut tensors = Vec::new();
        for (name, _, layer) in params.layers() {
            tensors.push(Tensor {
                name: format!("{name}.weight"),
                rows: layer.outputs,
                cols: layer.inputs,
                values: layer.weight.clone(),
            });
            tensors.push(Tensor {
                name: format!("{name}.bias"),
                rows: layer.outputs,
                cols: 1,
                values: layer.bias.clone(),
            });
        }
        Self {
            config_hash: params.arch.config_hash(),
            architecture: params.arch.clone(),
            meta: BTreeMap::new(),
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds model parameters, rejecting missing tensors and shape
    /// mismatches.
    pub fn to_params(&self) -> Result<ModelParams> {
        if self.architecture.config_hash() != self.config_hash {
            return Err(Error::HashMismatch {
                expected: self.architecture.config_hash(),
                found: self.config_hash.clone(),
            });
        }
        let mut params = ModelParams::zeros(&self.architecture)?;
        let names: Vec<String> = params.layers().into_iter().map(|(n, _, _)| n).collect();
        for (name, (_, layer)) in names.iter().zip(params.layers_mut()) {
            fill(layer, self, name)?;
        }
        Ok(params)
    }

    /// Like [`Checkpoint::to_params`], but also requires the architecture to
    /// hash to `expected_hash`.
    pub fn to_params_checked(&self, expected_hash: &str) -> Result<ModelParams> {
        if self.config_hash != expected_hash {
            return Err(Error::HashMismatch {
                expected: expected_hash.to_string(),
                found: self.config_hash.clone(),
            });
        }
        self.to_params()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        let _ = writeln!(
            s,
            "architecture {}",
            serde_json::to_string(&self.architecture).expect("architecture serializes")
        );
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for t in &self.tensors {
            let _ = writeln!(s, "tensor {} {} {}", t.name, t.rows, t.cols);
            let mut first = true;
            for v in &t.values {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:e}");
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            Some((n, _)) => return Err(err(n, format!("expected `{MAGIC}` header"))),
            None => return Err(err(1, "empty checkpoint".into())),
        }
        let mut config_hash = None;
        let mut architecture = None;
        let mut meta = BTreeMap::new();
        let mut tensors = Vec::new();
        let mut complete = false;
        while let Some((n, line)) = lines.next() {
            if complete {
                return Err(err(n, "data after `end` record".into()));
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "config_hash" => config_hash = Some(rest.to_string()),
                "architecture" => {
                    architecture = Some(
                        serde_json::from_str::<Architecture>(rest)
                            .map_err(|e| err(n, format!("bad architecture: {e}")))?,
                    )
                }
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    if parts.len() != 3 {
                        return Err(err(n, "tensor header needs `name rows cols`".into()));
                    }
                    let dim = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|e| err(n, format!("bad dimension `{s}`: {e}")))
                    };
                    let (rows, cols) = (dim(parts[1])?, dim(parts[2])?);
                    let (vn, vline) = lines.next().ok_or_else(|| {
                        err(n + 1, format!("missing values for tensor {}", parts[0]))
                    })?;
                    let values = if vline.is_empty() {
                        Vec::new()
                    } else {
                        vline
                            .split(' ')
                            .map(|v| {
                                v.parse::<f64>()
                                    .map_err(|e| err(vn, format!("bad value `{v}`: {e}")))
                            })
                            .collect::<Result<Vec<_>>>()?
                    };
                    if values.len() != rows * cols {
                        return Err(err(
                            vn,
                            format!(
                                "tensor {} declares {rows}x{cols} but has {} values",
                                parts[0],
                                values.len()
                            ),
                        ));
                    }
                    tensors.push(Tensor {
                        name: parts[0].to_string(),
                        rows,
                        cols,
                        values,
                    });
                }
                "end" => complete = true,
                "" => {}
                other => return Err(err(n, format!("unknown record `{other}`"))),
            }
        }
        if !complete {
            let last = text.lines().count();
            return Err(err(
                last,
                "truncated checkpoint: missing `end` record".into(),
            ));
        }
        Ok(Self {
            config_hash: config_hash.ok_or_else(|| err(0, "missing config_hash".into()))?,
            architecture: architecture.ok_or_else(|| err(0, "missing architecture".into()))?,
            meta,
            tensors,
        })
    }
}

fn fill(layer: &mut Dense, ckpt: &Checkpoint, name: &str) -> Result<()> {
    let get = |suffix: &str, rows: usize, cols: usize| -> Result<&Tensor> {
        let full = format!("{name}.{suffix}");
        let t = ckpt
            .tensor(&full)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor {full}")))?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(Error::shape(
                full,
                format!("{rows}x{cols}"),
                format!("{}x{}", t.rows, t.cols),
            ));
        }
        Ok(t)
    };
    layer
        .weight
        .copy_from_slice(&get("weight", layer.outputs, layer.inputs)?.values);
    layer
        .bias
        .copy_from_slice(&get("bias", layer.outputs, 1)?.values);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DatasetSpec;

    fn params() -> ModelParams {
        let arch = Architecture::new(DatasetSpec::new(2, 3, 2, 4), vec![6, 5], 4);
        ModelParams::init(&arch, 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = params();
        let mut ck = Checkpoint::from_params(&p);
        ck.meta.insert("epoch".into(), "3".into());
        let text = ck.to_text();
        let back = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params().unwrap(), p);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = params();
        let mut ck = Checkpoint::from_params(&p);
        let t = ck
            .tensors
            .iter_mut()
            .find(|t| t.name == "head.weight")
            .unwrap();
        t.rows -= 1;
        t.values.truncate(t.rows * t.cols);
        let err = ck.to_params().unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn hash_mismatch_rejected() {
        let p = params();
        let ck = Checkpoint::from_params(&p);
        let mut other = p.arch.clone();
        other.spec.unlabeled_classes += 1;
        assert!(matches!(
            ck.to_params_checked(&other.config_hash()),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_names_line() {
        let text = Checkpoint::from_params(&params()).to_text();
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        let err = Checkpoint::parse(&cut, Path::new("ck.txt")).unwrap_err();
        assert!(err.to_string().starts_with("ck.txt:"), "{err}");
    }
}
