//! Text checkpoint container.
//!
//! ```text
//! rumor-checkpoint 1
//! kind attention
//! config layers 64,32,16
//! ...
//! tensor layer0.Ui 64 64
//! <rows*cols values, shortest round-trip formatting>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a write/read
//! cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::baseline::BaselineRnn;
use super::{Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::series::SeriesConfig;

const MAGIC: &str = "rumor-checkpoint";
const VERSION: u32 = 1;

struct Container {
    kind: String,
    config: BTreeMap<String, String>,
    tensors: BTreeMap<String, Mat>,
}

fn series_entries(s: &SeriesConfig) -> Vec<(&'static str, String)> {
    vec![
        ("posts_per_interval", s.posts_per_interval.to_string()),
        ("min_series_len", s.min_series_len.to_string()),
        ("vocab_size", s.vocab_size.to_string()),
    ]
}

fn write_container<P: Params>(
    path: &Path,
    kind: &str,
    config: &[(&'static str, String)],
    params: &P,
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "kind {kind}").unwrap();
    for (k, v) in config {
        writeln!(out, "config {k} {v}").unwrap();
    }
    for (name, m) in params.tensors() {
        writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).unwrap();
        let mut first = true;
        for v in m.as_slice() {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v:e}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_container(path: &Path) -> Result<Container> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == format!("{MAGIC} {VERSION}") => {}
        Some((n, l)) => return Err(perr(n, format!("unsupported checkpoint header {l:?}"))),
        None => return Err(perr(1, "empty checkpoint".into())),
    }
    let mut c = Container {
        kind: String::new(),
        config: BTreeMap::new(),
        tensors: BTreeMap::new(),
    };
    while let Some((n, line)) = lines.next() {
        let mut parts = line.split(' ');
        match parts.next() {
            Some("kind") => c.kind = parts.next().unwrap_or_default().to_string(),
            Some("config") => {
                let (Some(k), Some(v)) = (parts.next(), parts.next()) else {
                    return Err(perr(n, "config line needs key and value".into()));
                };
                c.config.insert(k.to_string(), v.to_string());
            }
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| perr(n, "tensor name".into()))?;
                let dims: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|_| perr(n, format!("bad dimension {p:?}"))))
                    .collect::<Result<_>>()?;
                let [rows, cols] = dims[..] else {
                    return Err(perr(n, "tensor needs rows and cols".into()));
                };
                let (vn, values) = lines.next().ok_or_else(|| perr(n + 1, "missing tensor data".into()))?;
                let data: Vec<f64> = if values.is_empty() {
                    Vec::new()
                } else {
                    values
                        .split(' ')
                        .map(|v| v.parse().map_err(|_| perr(vn, format!("bad value {v:?}"))))
                        .collect::<Result<_>>()?
                };
                let m = Mat::from_vec(rows, cols, data).map_err(|e| perr(vn, e.to_string()))?;
                c.tensors.insert(name.to_string(), m);
            }
            Some("") | None => {}
            Some(other) => return Err(perr(n, format!("unknown record {other:?}"))),
        }
    }
    Ok(c)
}

fn get<T: std::str::FromStr>(c: &Container, key: &str) -> Result<T> {
    c.config
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Validation(format!("checkpoint config `{key}` missing or invalid")))
}

fn series_from(c: &Container) -> Result<SeriesConfig> {
    Ok(SeriesConfig {
        posts_per_interval: get(c, "posts_per_interval")?,
        min_series_len: get(c, "min_series_len")?,
        vocab_size: get(c, "vocab_size")?,
    })
}

fn fill<P: Params>(target: &mut P, mut c: Container) -> Result<()> {
    for (name, m) in target.tensors_mut() {
        let stored = c
            .tensors
            .remove(&name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {name}")))?;
        if stored.shape() != m.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("{name} stored {:?}", stored.shape()),
                format!("expected {:?}", m.shape()),
            ));
        }
        *m = stored;
    }
    if let Some(extra) = c.tensors.keys().next() {
        return Err(Error::Validation(format!("unexpected tensor {extra} in checkpoint")));
    }
    Ok(())
}

fn expect_kind(c: &Container, kind: &str) -> Result<()> {
    if c.kind != kind {
        return Err(Error::Validation(format!(
            "checkpoint holds a {:?} model, expected {kind:?}",
            c.kind
        )));
    }
    Ok(())
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let cfg = &model.config;
    let mut entries = series_entries(&cfg.series);
    let layers: Vec<String> = cfg.layers.iter().map(usize::to_string).collect();
    entries.push(("layers", layers.join(",")));
    entries.push(("init_hidden", cfg.init_hidden.to_string()));
    entries.push(("classifier_hidden", cfg.classifier_hidden.to_string()));
    write_container(path.as_ref(), "attention", &entries, model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let c = read_container(path.as_ref())?;
    expect_kind(&c, "attention")?;
    let layers_s: String = get(&c, "layers")?;
    let layers = layers_s
        .split(',')
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Validation(format!("checkpoint layers {layers_s:?}")))?;
    let config = ModelConfig {
        series: series_from(&c)?,
        layers,
        init_hidden: get(&c, "init_hidden")?,
        classifier_hidden: get(&c, "classifier_hidden")?,
    };
    let mut model = Model::zeros(config)?;
    fill(&mut model, c)?;
    Ok(model)
}

pub fn save_baseline(model: &BaselineRnn, path: impl AsRef<Path>) -> Result<()> {
    let mut entries = series_entries(&model.series);
    entries.push(("hidden", model.hidden_size().to_string()));
    write_container(path.as_ref(), "baseline", &entries, model)
}

pub fn load_baseline(path: impl AsRef<Path>) -> Result<BaselineRnn> {
    let c = read_container(path.as_ref())?;
    expect_kind(&c, "baseline")?;
    let mut model = BaselineRnn::zeros(series_from(&c)?, get(&c, "hidden")?);
    fill(&mut model, c)?;
    Ok(model)
}

/// Reads only the `kind` record of a checkpoint.
pub fn checkpoint_kind(path: impl AsRef<Path>) -> Result<String> {
    Ok(read_container(path.as_ref())?.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            series: SeriesConfig {
                posts_per_interval: 3,
                min_series_len: 2,
                vocab_size: 7,
            },
            layers: vec![4, 3],
            init_hidden: 2,
            classifier_hidden: 5,
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut rng = Rng::new(77);
        let mut m = Model::new(cfg(), &mut rng).unwrap();
        // awkward values
        m.attention.w.set(0, 0, 1e-300);
        m.attention.w.set(1, 0, -0.1 - 0.2);
        m.classifier.b2.set(0, 0, std::f64::consts::PI * 1e17);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.config, m.config);
        for ((n, a), (_, b)) in m.tensors().into_iter().zip(back.tensors()) {
            let bits_a: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{n}");
        }
        let p2 = dir.path().join("m2.ckpt");
        save_model(&back, &p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn baseline_round_trip() {
        let mut rng = Rng::new(5);
        let b = BaselineRnn::new(cfg().series, 4, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ckpt");
        save_baseline(&b, &p).unwrap();
        assert_eq!(load_baseline(&p).unwrap(), b);
        assert!(load_model(&p).is_err());
        assert_eq!(checkpoint_kind(&p).unwrap(), "baseline");
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        fs::write(&p, "not a checkpoint\n").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Parse { line: 1, .. })));
    }
}
