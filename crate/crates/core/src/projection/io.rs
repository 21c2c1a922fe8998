//! Embedding CSV (`subject_id,method,layer,d0,d1,d2`) and its key=value
//! metadata sidecar.

use std::collections::BTreeMap;

use super::{EmbeddingMatrix, Layer, Method, ProjectionError, COMPONENTS};

pub const EMBEDDING_HEADER: [&str; 6] = ["subject_id", "method", "layer", "d0", "d1", "d2"];

pub fn format_embedding(e: &EmbeddingMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EMBEDDING_HEADER).expect("in-memory write");
    for (id, row) in e.subject_ids.iter().zip(&e.values) {
        let mut rec = vec![id.clone(), e.method.name().to_string(), e.layer.name().to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Parses an embedding CSV; every row must share one method and layer.
pub fn parse_embedding(text: &str) -> Result<EmbeddingMatrix, ProjectionError> {
    let err = |m: String| ProjectionError::Format(m);
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.iter().ne(EMBEDDING_HEADER.iter().copied()) {
        return Err(err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut kind: Option<(Method, Layer)> = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let method = Method::parse(&rec[1]).ok_or_else(|| err(format!("row {}: unknown method {:?}", line + 1, &rec[1])))?;
        let layer = Layer::parse(&rec[2]).ok_or_else(|| err(format!("row {}: unknown layer {:?}", line + 1, &rec[2])))?;
        match kind {
            None => kind = Some((method, layer)),
            Some(k) if k != (method, layer) => return Err(err(format!("row {}: mixed method/layer", line + 1))),
            _ => {}
        }
        let mut row = [0.0; COMPONENTS];
        for c in 0..COMPONENTS {
            row[c] = rec[3 + c].trim().parse::<f64>().map_err(|e| err(format!("row {}: {e}", line + 1)))?;
        }
        ids.push(rec[0].to_string());
        values.push(row);
    }
    let (method, layer) = kind.ok_or_else(|| err("no rows".into()))?;
    EmbeddingMatrix::new(method, layer, ids, values, BTreeMap::new())
}

pub fn format_metadata(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_metadata(text: &str) -> Result<BTreeMap<String, String>, ProjectionError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ProjectionError::Format(format!("line {}: missing '='", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
