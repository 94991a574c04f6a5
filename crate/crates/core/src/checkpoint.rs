//! Plain-text parameter files.
//!
//! ```text
//! # moladapt parameters v1
//! meta <key> <value>
//! spec <line of the embedded TOML adaptation spec>
//! param <path> <rows> <cols> <frozen|trainable>
//! <cols values>          (one line per row, 17 significant digits)
//! ```
//!
//! Values are rendered with `{:.16e}` and parsed back bit-exactly.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::mol::TaskKind;
use crate::tensor::ParamStore;
use crate::trainer::{AdaptSpec, AdaptedModel};

const HEADER: &str = "# moladapt parameters v1";

/// Parsed contents of a parameter file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamFile {
    pub meta: BTreeMap<String, String>,
    pub spec: Option<String>,
    pub store: ParamStore,
}

impl ParamFile {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Semantic {
                record: "meta".into(),
                message: format!("missing key {key}"),
            })
    }
}

pub fn render(file: &ParamFile) -> Result<String> {
    let mut out = format!("{HEADER}\n");
    for (k, v) in &file.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Contract(format!("meta entry {k:?} cannot be rendered on one line")));
        }
        out.push_str(&format!("meta {k} {v}\n"));
    }
    if let Some(spec) = &file.spec {
        for line in spec.lines() {
            out.push_str(&format!("spec {line}\n"));
        }
    }
    for (name, m) in file.store.iter() {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {name} holds a non-finite value")));
        }
        let state = if file.store.is_frozen(name) { "frozen" } else { "trainable" };
        out.push_str(&format!("param {name} {} {} {state}\n", m.nrows(), m.ncols()));
        for row in m.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<ParamFile> {
    let perr = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == HEADER => {}
        _ => return Err(perr(1, format!("expected header {HEADER:?}"))),
    }
    let mut file = ParamFile::default();
    let mut spec = Vec::new();
    while let Some((n, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                file.meta.insert(k.to_string(), v.to_string());
            }
            "spec" => spec.push(rest),
            "param" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(perr(n, "param line needs <path> <rows> <cols> <state>".into()));
                }
                let rows: usize = f[1].parse().map_err(|_| perr(n, format!("bad row count {:?}", f[1])))?;
                let cols: usize = f[2].parse().map_err(|_| perr(n, format!("bad column count {:?}", f[2])))?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rn, row) = lines.next().ok_or_else(|| perr(n, format!("{} truncated", f[0])))?;
                    let before = values.len();
                    for cell in row.split(' ').filter(|c| !c.is_empty()) {
                        let v: f64 = cell.parse().map_err(|_| perr(rn, format!("bad value {cell:?}")))?;
                        if !v.is_finite() {
                            return Err(perr(rn, format!("non-finite value {cell:?}")));
                        }
                        values.push(v);
                    }
                    if values.len() - before != cols {
                        return Err(perr(rn, format!("expected {cols} values")));
                    }
                }
                let m = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
                match f[3] {
                    "frozen" => file.store.insert_frozen(f[0], m),
                    "trainable" => file.store.insert(f[0], m),
                    s => return Err(perr(n, format!("unknown state {s:?}"))),
                }
                .map_err(|e| perr(n, e.to_string()))?;
            }
            _ if tag.starts_with('#') => {}
            _ => return Err(perr(n, format!("unknown line tag {tag:?}"))),
        }
    }
    if !spec.is_empty() {
        file.spec = Some(spec.join("\n"));
    }
    Ok(file)
}

pub fn encoder_to_string(params: &EncoderParams) -> Result<String> {
    let mut store = ParamStore::new();
    params.register(&mut store, true)?;
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "encoder".into());
    meta.insert("hidden".into(), params.hidden().to_string());
    meta.insert("layers".into(), params.num_layers().to_string());
    render(&ParamFile { meta, spec: None, store })
}

/// Encoder from either an encoder checkpoint or an adapted-model file.
pub fn encoder_from_str(text: &str) -> Result<EncoderParams> {
    EncoderParams::from_store(&parse(text)?.store.subset("encoder."))
}

pub fn model_to_string(model: &AdaptedModel) -> Result<String> {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "adapted_model".into());
    meta.insert(
        "task".into(),
        match model.task_kind {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        }
        .into(),
    );
    if let Some([wt, wa]) = model.balance {
        meta.insert("w_task".into(), format!("{wt:.16e}"));
        meta.insert("w_align".into(), format!("{wa:.16e}"));
    }
    let spec = toml::to_string(&model.spec).map_err(|e| Error::Contract(e.to_string()))?;
    render(&ParamFile {
        meta,
        spec: Some(spec),
        store: model.store.clone(),
    })
}

pub fn model_from_str(text: &str) -> Result<AdaptedModel> {
    let file = parse(text)?;
    let bad = |message: String| Error::Semantic {
        record: "meta".into(),
        message,
    };
    if file.meta("kind")? != "adapted_model" {
        return Err(bad(format!("expected an adapted model, found {:?}", file.meta("kind")?)));
    }
    let task_kind = match file.meta("task")? {
        "classification" => TaskKind::Classification,
        "regression" => TaskKind::Regression,
        t => return Err(bad(format!("unknown task {t:?}"))),
    };
    let spec_text = file.spec.as_deref().ok_or_else(|| bad("model file has no spec".into()))?;
    let spec: AdaptSpec = toml::from_str(spec_text).map_err(|e| Error::Config(e.to_string()))?;
    let weight = |k: &str| -> Result<f64> { file.meta(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
    let balance = if file.meta.contains_key("w_task") {
        Some([weight("w_task")?, weight("w_align")?])
    } else {
        None
    };
    Ok(AdaptedModel {
        store: file.store,
        task_kind,
        spec,
        balance,
        log: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mol::ATOM_FEATURE_DIM;
    use crate::synth::six_atom_molecule;
    use crate::trainer::{channel_widths, perturb_trainable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoder_round_trip_is_bit_exact() {
        let enc = EncoderParams::init(ATOM_FEATURE_DIM, 16, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let text = encoder_to_string(&enc).unwrap();
        let back = encoder_from_str(&text).unwrap();
        assert_eq!(back, enc);
        assert_eq!(encoder_to_string(&back).unwrap(), text);
    }

    #[test]
    fn awkward_values_survive() {
        let mut store = ParamStore::new();
        let vals = [-0.0, 5e-324, f64::MAX, 0.1 + 0.2, -1.0 / 3.0, 1e300];
        store.insert("x", Array2::from_shape_vec((2, 3), vals.to_vec()).unwrap()).unwrap();
        let f = ParamFile {
            store,
            ..Default::default()
        };
        let back = parse(&render(&f).unwrap()).unwrap();
        let got = back.store.get("x").unwrap();
        for (a, b) in got.iter().zip(vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_round_trip_keeps_partition_and_spec() {
        let enc = EncoderParams::init(ATOM_FEATURE_DIM, 8, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let spec = AdaptSpec::default();
        let mut model =
            AdaptedModel::initialize(&enc, TaskKind::Classification, &spec, &channel_widths(&spec.knowledge)).unwrap();
        perturb_trainable(&mut model.store, 0.3, 2).unwrap();
        model.balance = Some([0.75, 1.25]);
        let back = model_from_str(&model_to_string(&model).unwrap()).unwrap();
        assert_eq!(back.store, model.store);
        assert_eq!(back.spec, model.spec);
        assert_eq!(back.balance, model.balance);
        let g = six_atom_molecule();
        assert_eq!(back.predict(&g).unwrap().to_bits(), model.predict(&g).unwrap().to_bits());
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(parse("").is_err());
        assert!(parse(&format!("{HEADER}\nparam a 1 2 frozen\n1 2 3\n")).is_err());
        assert!(parse(&format!("{HEADER}\nparam a 2 1 frozen\n1\n")).is_err());
        assert!(parse(&format!("{HEADER}\nparam a 1 1 frozen\nNaN\n")).is_err());
        assert!(parse(&format!("{HEADER}\nbogus\n")).is_err());
    }
}
