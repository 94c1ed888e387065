//! Model container: a text header followed by a little-endian `f32` blob.
//!
//! ```text
//! onset-tcn-model
//! version 1
//! variant TCNv1
//! seed 7
//! dropout 0.1
//! layer Conv1 conv-stage trainable
//! param Conv1.weight 3 3 1 16
//! param Conv1.bias 16
//! ...
//! end
//! <blob: every parameter in declaration order>
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::{build_model, LayerName, Model, Variant};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "onset-tcn-model";

fn header(model: &Model) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}");
    let _ = writeln!(h, "version {FORMAT_VERSION}");
    let _ = writeln!(h, "variant {}", model.variant());
    let _ = writeln!(h, "seed {}", model.seed());
    let _ = writeln!(h, "dropout {}", model.dropout_rate());
    for layer in model.layers() {
        let _ = writeln!(
            h,
            "layer {} {} {}",
            layer.name,
            layer.kind.as_str(),
            if layer.trainable { "trainable" } else { "frozen" }
        );
        for p in &layer.params {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(h, "param {}.{} {}", layer.name, p.name, dims.join(" "));
        }
    }
    h.push_str("end\n");
    h
}

pub fn write_model<W: Write>(model: &Model, mut out: W) -> std::io::Result<()> {
    out.write_all(header(model).as_bytes())?;
    let mut blob = Vec::with_capacity(model.count_params().total * 4);
    for layer in model.layers() {
        for p in &layer.params {
            for &v in p.value.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&blob)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_model(model, &mut bytes).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

/// Parses a model container from bytes.
pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let end_marker = b"\nend\n";
    let split = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| bad("header terminator not found"))?;
    let header = std::str::from_utf8(&bytes[..split + 1]).map_err(|_| bad("header is not UTF-8"))?;
    let blob = &bytes[split + end_marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing magic line"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected {key}, found {line:?}")))
    };
    let version: u32 = field("version")?.parse().map_err(|_| bad("bad version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let variant: Variant = field("variant")?.parse()?;
    let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed"))?;
    let dropout: f64 = field("dropout")?.parse().map_err(|_| bad("bad dropout"))?;

    let mut model = build_model(variant, seed);
    model.set_dropout_rate(dropout)?;

    // declared layers and parameter shapes, in order
    let mut trainable = Vec::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("layer") => {
                let name: LayerName = parts.next().ok_or_else(|| bad("layer without name"))?.parse()?;
                let _kind = parts.next();
                let flag = parts.next().ok_or_else(|| bad("layer without flag"))?;
                trainable.push((name, flag == "trainable"));
            }
            Some("param") => {
                let name = parts.next().ok_or_else(|| bad("param without name"))?.to_string();
                let dims = parts
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad extent in {line:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                shapes.push((name, dims));
            }
            Some("end") | None => {}
            Some(other) => return Err(bad(format!("unexpected header entry {other:?}"))),
        }
    }

    let expected: Vec<(String, Vec<usize>)> = model
        .layers()
        .iter()
        .flat_map(|l| {
            l.params
                .iter()
                .map(move |p| (format!("{}.{}", l.name, p.name), p.value.shape().to_vec()))
        })
        .collect();
    if shapes != expected {
        return Err(bad(format!(
            "declared parameters do not match a {variant} model"
        )));
    }
    if trainable.len() != model.layers().len()
        || trainable.iter().zip(model.layers()).any(|((n, _), l)| *n != l.name)
    {
        return Err(bad("layer list does not match the fixed layer sequence"));
    }
    let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(bad(format!(
            "blob holds {} bytes, header declares {} parameters ({} bytes)",
            blob.len(),
            total,
            total * 4
        )));
    }

    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for (layer, (_, flag)) in model.layers_mut().iter_mut().zip(trainable) {
        layer.trainable = flag;
        for p in &mut layer.params {
            for v in p.value.data_mut() {
                *v = values.next().unwrap();
            }
        }
    }
    if !model.params_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_model(&bytes).map_err(|e| e.context(path.display().to_string()))
}
