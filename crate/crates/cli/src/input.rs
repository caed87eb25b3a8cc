//! Instance files.
//!
//! Perfect-tree form: `{"m", "L", "sigma_x", "distortions": {"k,i": matrix}}`.
//! General form: `{"M", "sigma_x", "constraints": [{"subset", "d"}]}`, padded
//! to a perfect binary tree on load. Either form may carry a `"solver"` block.

use std::collections::BTreeMap;

use mdtree_core::optimizer::SolverConfig;
use mdtree_core::tree::{pad_to_perfect_binary, Constraint, GeneralTreeSpec, PaddedInstance};
use mdtree_core::{Node, NodeMap, ProblemInstance, SymMatrix, Tolerance};
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    subset: Vec<usize>,
    d: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    m: Option<usize>,
    #[serde(rename = "L")]
    levels: Option<usize>,
    #[serde(rename = "M")]
    descriptions: Option<usize>,
    sigma_x: Vec<Vec<f64>>,
    distortions: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    constraints: Option<Vec<RawConstraint>>,
    solver: Option<SolverConfig>,
}

/// A loaded instance ready for the pipeline.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub instance: ProblemInstance,
    pub padding: Option<PaddedInstance>,
    pub solver: SolverConfig,
}

fn matrix(rows: &[Vec<f64>], what: &str, tol: &Tolerance) -> Result<SymMatrix, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::input("NotSquare", format!("{what} must be a non-empty square matrix")));
    }
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (i, row) in rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            worst = worst.max((x - rows[j][i]).abs());
            scale = scale.max(x.abs());
        }
    }
    if worst.is_nan() || worst > tol.eq_eps * (1.0 + scale) {
        return Err(CliError::input("NotSymmetric", format!("{what} is not symmetric")));
    }
    SymMatrix::from_rows(rows).map_err(CliError::Core)
}

fn parse_node(key: &str) -> Option<Node> {
    let (k, i) = key.split_once(',')?;
    let k: usize = k.trim().parse().ok()?;
    let i: usize = i.trim().parse().ok()?;
    (k >= 1 && k < usize::BITS as usize && i >= 1 && i <= 1usize << (k - 1)).then(|| Node::new(k, i))
}

pub fn parse(text: &str, tol: &Tolerance) -> Result<Loaded, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::input("MalformedJson", e.to_string()))?;
    let raw: RawInstance = serde_json::from_value(value).map_err(|e| CliError::input("SchemaError", e.to_string()))?;
    let sigma_x = matrix(&raw.sigma_x, "sigma_x", tol)?;
    if let Some(m) = raw.m {
        if m != sigma_x.dim() {
            return Err(CliError::Core(mdtree_core::Error::DimensionMismatch { expected: m, found: sigma_x.dim() }));
        }
    }
    let solver = raw.solver.unwrap_or_default();
    match (raw.distortions, raw.constraints) {
        (Some(dist), None) => {
            if raw.descriptions.is_some() {
                return Err(CliError::input("SchemaError", "\"M\" belongs to the constraint form".into()));
            }
            let levels = raw.levels.ok_or_else(|| CliError::input("SchemaError", "missing \"L\"".into()))?;
            if !(2..=20).contains(&levels) {
                return Err(CliError::Core(mdtree_core::Error::InvalidDepth(levels)));
            }
            let mut slots: NodeMap<Option<SymMatrix>> = NodeMap::from_fn(levels, |_| None);
            for (key, rows) in &dist {
                let node = parse_node(key)
                    .filter(|n| n.k <= levels)
                    .ok_or_else(|| CliError::input("UnknownNode", format!("distortion key \"{key}\" is not a node")))?;
                if slots.get(node).is_some() {
                    return Err(CliError::input("DuplicateNode", format!("node {node} given twice")));
                }
                slots.set(node, Some(matrix(rows, &format!("distortion {node}"), tol)?));
            }
            let mut values = Vec::with_capacity(slots.len());
            for (n, slot) in slots.iter() {
                values.push(slot.clone().ok_or_else(|| CliError::input("MissingNode", format!("no distortion for node {n}")))?);
            }
            let map = NodeMap::from_vec(levels, values).map_err(CliError::Core)?;
            let instance = ProblemInstance::new(sigma_x, levels, map).map_err(CliError::Core)?;
            instance.validate(tol).map_err(CliError::Core)?;
            Ok(Loaded { instance, padding: None, solver })
        }
        (None, Some(cons)) => {
            if raw.levels.is_some() {
                return Err(CliError::input("SchemaError", "\"L\" belongs to the perfect-tree form".into()));
            }
            let descriptions = raw.descriptions.ok_or_else(|| CliError::input("SchemaError", "missing \"M\"".into()))?;
            let mut constraints = Vec::with_capacity(cons.len());
            for (idx, c) in cons.iter().enumerate() {
                let d = matrix(&c.d, &format!("constraint {idx}"), tol)?;
                constraints.push(Constraint { subset: c.subset.clone(), d });
            }
            let spec = GeneralTreeSpec { descriptions, sigma_x, constraints };
            let padded = pad_to_perfect_binary(&spec).map_err(CliError::Core)?;
            padded.instance.validate(tol).map_err(CliError::Core)?;
            Ok(Loaded { instance: padded.instance.clone(), padding: Some(padded), solver })
        }
        _ => Err(CliError::input("SchemaError", "exactly one of \"distortions\" or \"constraints\" is required".into())),
    }
}

/// Perfect-tree JSON for `inst`, readable by [`parse`].
pub fn instance_json(inst: &ProblemInstance) -> Value {
    let dist: serde_json::Map<String, Value> = inst
        .distortions
        .iter()
        .map(|(n, d)| (format!("{},{}", n.k, n.i), serde_json::to_value(d).expect("matrix serializes")))
        .collect();
    serde_json::json!({
        "m": inst.m,
        "L": inst.levels,
        "sigma_x": inst.sigma_x,
        "distortions": dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERFECT: &str = r#"{"m":1,"L":2,"sigma_x":[[1.0]],"distortions":{"1,1":[[0.3]],"2,1":[[0.5]],"2,2":[[0.6]]}}"#;

    fn kind(text: &str) -> &'static str {
        parse(text, &Tolerance::default()).unwrap_err().kind()
    }

    #[test]
    fn perfect_form_round_trips() {
        let a = parse(PERFECT, &Tolerance::default()).unwrap();
        assert!(a.padding.is_none());
        let b = parse(&instance_json(&a.instance).to_string(), &Tolerance::default()).unwrap();
        assert_eq!(a.instance, b.instance);
    }

    #[test]
    fn solver_block_is_read() {
        let text = PERFECT.replace("}}", r#"},"solver":{"seeds":[3]}}"#);
        assert_eq!(parse(&text, &Tolerance::default()).unwrap().solver.seeds, vec![3]);
    }

    #[test]
    fn diagnostics() {
        assert_eq!(kind("[1,"), "MalformedJson");
        assert_eq!(kind(&PERFECT.replace("\"m\":1,", "\"m\":1,\"extra\":0,")), "SchemaError");
        assert_eq!(kind(&PERFECT.replace("\"2,2\"", "\"3,1\"")), "UnknownNode");
        assert_eq!(kind(&PERFECT.replace("\"2,2\"", "\" 2,1\"")), "DuplicateNode");
        assert_eq!(kind(&PERFECT.replace(",\"2,2\":[[0.6]]", "")), "MissingNode");
        assert_eq!(kind(&PERFECT.replace("[[0.6]]", "[[0.6, 0.1]]")), "NotSquare");
        assert_eq!(kind(&PERFECT.replace("[[0.6]]", "[[1.5]]")), "InvalidInstance");
        assert_eq!(kind(&PERFECT.replace("\"m\":1", "\"m\":2")), "DimensionMismatch");
    }

    #[test]
    fn constraint_form_is_padded() {
        let text = r#"{"M":2,"sigma_x":[[2.0]],"constraints":[{"subset":[1,2],"d":[[0.5]]}]}"#;
        let l = parse(text, &Tolerance::default()).unwrap();
        assert_eq!(l.instance.levels, 2);
        assert_eq!(l.instance.d(Node::new(2, 1)), &SymMatrix::scalar(2.0));
        assert!(l.padding.is_some());
    }
}
