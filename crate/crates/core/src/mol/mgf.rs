//! MGF, a small line-oriented molecular graph format.
//!
//! ```text
//! # comment
//! id water
//! atom 0 O 0.0 0.0 0.0 -1.5
//! atom 1 H 0.9584 0.0 0.0
//! atom 2 H -0.24 0.928 0.0
//! bond 0 1 1
//! bond 0 2 1
//! class 1
//! ---
//! ```
//!
//! `atom index element [x y z [energy]]`, `bond i j order` with order
//! 1/2/3/4 (4 = aromatic), `label real` or `class integer`, `id token`.
//! Fields are separated by single spaces, records end with `---` (optional
//! after the last record) and atoms must be declared before bonds that use
//! them. Empty lines are ignored. A record without an `id` line is named
//! `mol<n>` after its zero-based position in the file.
//!
//! The task kind is inferred: regression if any record has a `label`,
//! classification otherwise. Reals are written with 17 significant digits so
//! a parse/serialize round trip is bit-exact.

use std::fmt::Write as _;

use super::{Atom, Bond, BondOrder, Dataset, Element, Label, MolecularGraph, TaskKind};
use crate::error::{Error, Result};

#[derive(Default)]
struct Pending {
    id: Option<String>,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    label: Option<Label>,
    touched: bool,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_index(tok: &str, line: usize) -> Result<usize> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_err(line, format!("expected a non-negative integer, found {tok:?}")));
    }
    tok.parse()
        .map_err(|_| parse_err(line, format!("integer out of range: {tok}")))
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    let well_formed = !tok.is_empty()
        && tok.bytes().any(|b| b.is_ascii_digit())
        && tok
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'));
    let value: Option<f64> = if well_formed { tok.parse().ok() } else { None };
    match value {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(line, format!("expected a real number, found {tok:?}"))),
    }
}

fn record_name(pending: &Pending, index: usize) -> String {
    pending.id.clone().unwrap_or_else(|| format!("mol{index}"))
}

fn finish(pending: Pending, index: usize) -> Result<MolecularGraph> {
    let id = record_name(&pending, index);
    let graph = MolecularGraph {
        id,
        atoms: pending.atoms,
        bonds: pending.bonds,
        label: pending.label,
    };
    graph.validate()?;
    Ok(graph)
}

pub fn parse_mgf(text: &str) -> Result<Dataset> {
    let mut graphs = Vec::new();
    let mut cur = Pending::default();
    for (n, raw) in text.split('\n').enumerate() {
        let line = n + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        if raw == "---" {
            let done = std::mem::take(&mut cur);
            graphs.push(finish(done, graphs.len())?);
            continue;
        }
        let fields: Vec<&str> = raw.split(' ').collect();
        cur.touched = true;
        match fields[0] {
            "id" => {
                if fields.len() != 2 || fields[1].is_empty() {
                    return Err(parse_err(line, "expected `id <token>`"));
                }
                if cur.id.is_some() {
                    return Err(parse_err(line, "second id line in one record"));
                }
                cur.id = Some(fields[1].to_string());
            }
            "atom" => {
                if !matches!(fields.len(), 3 | 6 | 7) {
                    return Err(parse_err(line, "expected `atom <index> <element> [x y z [energy]]`"));
                }
                let index = parse_index(fields[1], line)?;
                if index != cur.atoms.len() {
                    return Err(parse_err(
                        line,
                        format!("atom index {index} out of sequence, expected {}", cur.atoms.len()),
                    ));
                }
                if fields[2].is_empty() {
                    return Err(parse_err(line, "empty element symbol"));
                }
                let mut atom = Atom::new(Element::from_symbol(fields[2]));
                if fields.len() >= 6 {
                    atom.position = Some([
                        parse_real(fields[3], line)?,
                        parse_real(fields[4], line)?,
                        parse_real(fields[5], line)?,
                    ]);
                }
                if fields.len() == 7 {
                    atom.energy = Some(parse_real(fields[6], line)?);
                }
                cur.atoms.push(atom);
            }
            "bond" => {
                if fields.len() != 4 {
                    return Err(parse_err(line, "expected `bond <i> <j> <order>`"));
                }
                let a = parse_index(fields[1], line)?;
                let b = parse_index(fields[2], line)?;
                let order = fields[3]
                    .parse::<u8>()
                    .ok()
                    .filter(|_| fields[3].len() == 1)
                    .and_then(BondOrder::from_code)
                    .ok_or_else(|| parse_err(line, format!("bond order must be 1, 2, 3 or 4, found {:?}", fields[3])))?;
                let semantic = |message: String| Error::Semantic {
                    record: record_name(&cur, graphs.len()),
                    message,
                };
                if let Some(bad) = [a, b].into_iter().find(|&k| k >= cur.atoms.len()) {
                    return Err(semantic(format!("bond references missing atom {bad}")));
                }
                let bond = Bond::new(a, b, order).ok_or_else(|| semantic(format!("self-bond on atom {a}")))?;
                if cur.bonds.iter().any(|x| x.endpoints() == bond.endpoints()) {
                    let (i, j) = bond.endpoints();
                    return Err(semantic(format!("duplicate bond {i}-{j}")));
                }
                cur.bonds.push(bond);
            }
            "label" | "class" => {
                if fields.len() != 2 {
                    return Err(parse_err(line, format!("expected `{} <value>`", fields[0])));
                }
                if cur.label.is_some() {
                    return Err(parse_err(line, "second label in one record"));
                }
                cur.label = Some(if fields[0] == "label" {
                    Label::Real(parse_real(fields[1], line)?)
                } else {
                    let v = fields[1]
                        .parse::<i64>()
                        .map_err(|_| parse_err(line, format!("expected an integer class, found {:?}", fields[1])))?;
                    Label::Class(v)
                });
            }
            other => return Err(parse_err(line, format!("unknown line kind {other:?}"))),
        }
    }
    if cur.touched {
        graphs.push(finish(cur, graphs.len())?);
    }

    let any_real = graphs.iter().any(|g| matches!(g.label, Some(Label::Real(_))));
    let task_kind = if any_real {
        TaskKind::Regression
    } else {
        TaskKind::Classification
    };
    Dataset::new(graphs, task_kind)
}

fn real(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

pub fn serialize_mgf(dataset: &Dataset) -> String {
    let mut out = String::new();
    for (n, g) in dataset.graphs.iter().enumerate() {
        let id: String = if g.id.is_empty() {
            format!("mol{n}")
        } else {
            g.id.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
        };
        writeln!(out, "id {id}").expect("writing to a String");
        for (i, a) in g.atoms.iter().enumerate() {
            write!(out, "atom {i} {}", a.element.symbol()).expect("writing to a String");
            if let Some(p) = a.position {
                for c in p {
                    out.push(' ');
                    real(&mut out, c);
                }
                if let Some(e) = a.energy {
                    out.push(' ');
                    real(&mut out, e);
                }
            }
            out.push('\n');
        }
        for b in &g.bonds {
            let (i, j) = b.endpoints();
            writeln!(out, "bond {i} {j} {}", b.order.code()).expect("writing to a String");
        }
        match g.label {
            Some(Label::Real(y)) => {
                out.push_str("label ");
                real(&mut out, y);
                out.push('\n');
            }
            Some(Label::Class(c)) => writeln!(out, "class {c}").expect("writing to a String"),
            None => {}
        }
        out.push_str("---\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_atom_double_bond() {
        let d = parse_mgf("atom 0 C\natom 1 O\nbond 0 1 2\n---\n").unwrap();
        assert_eq!(d.len(), 1);
        let g = &d.graphs[0];
        assert_eq!(g.atoms[0].element, Element::C);
        assert_eq!(g.atoms[1].element, Element::O);
        assert_eq!(g.bonds.len(), 1);
        assert_eq!(g.bonds[0].endpoints(), (0, 1));
        assert_eq!(g.bonds[0].order, BondOrder::Double);
    }

    #[test]
    fn reversed_bond_is_canonicalized() {
        let d = parse_mgf("atom 0 C\natom 1 C\nbond 1 0 1\n").unwrap();
        assert_eq!(d.graphs[0].bonds[0].endpoints(), (0, 1));
        assert_eq!(d.graphs[0].bonds[0].order, BondOrder::Single);
    }

    #[test]
    fn missing_atom_is_a_semantic_error() {
        let err = parse_mgf("atom 0 C 0 0 0\nbond 0 2 1").unwrap_err();
        assert!(matches!(err, Error::Semantic { .. }));
        assert!(err.to_string().contains("bond references missing atom 2"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_mgf("id a\natom 0 C\natom 1 C 1.0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_mgf("atom 0 C\natom 1 C\n\nbond 0  1 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
        assert!(parse_mgf("atom 0 C 1 2 nan\n").is_err());
        assert!(parse_mgf("atom 0 C\natom 1 C\nbond 0 1 5\n").is_err());
        assert!(parse_mgf("atom 1 C\n").is_err());
    }

    #[test]
    fn unknown_elements_map_to_other() {
        let d = parse_mgf("atom 0 Xe\n---").unwrap();
        assert_eq!(d.graphs[0].atoms[0].element, Element::Other);
    }

    #[test]
    fn labels_set_task_kind() {
        let d = parse_mgf("atom 0 C\nlabel -1.25e-3\n---\natom 0 O\n---\n").unwrap();
        assert_eq!(d.task_kind, TaskKind::Regression);
        assert_eq!(d.graphs[0].label, Some(Label::Real(-1.25e-3)));
        assert_eq!(d.graphs[1].id, "mol1");
        let d = parse_mgf("atom 0 C\nclass 1\n---\n").unwrap();
        assert_eq!(d.task_kind, TaskKind::Classification);
        assert!(parse_mgf("atom 0 C\nclass 1\n---\natom 0 C\nlabel 2\n").is_err());
    }

    #[test]
    fn empty_dataset_serializes_to_empty_string() {
        let d = Dataset::new(vec![], TaskKind::Classification).unwrap();
        assert_eq!(serialize_mgf(&d), "");
        assert_eq!(parse_mgf("").unwrap(), d);
    }

    #[test]
    fn single_graph_round_trips() {
        let text = "# water\nid water\natom 0 O 0 0 0 -1.5\natom 1 H 0.9584 0 0 0.25\natom 2 H -0.24 0.928 0 0.25\nbond 0 1 1\nbond 2 0 1\nclass 1\n---\n";
        let d = parse_mgf(text).unwrap();
        let back = parse_mgf(&serialize_mgf(&d)).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.graphs[0].atoms[1].position.unwrap()[0], 0.9584);
    }
}
