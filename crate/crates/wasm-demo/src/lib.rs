//! Browser bindings for three explorers over a small 2-D point set:
//! per-pair gates at one temperature, PRR across temperatures, and
//! alignment/uniformity.
//!
//! Every operation takes JSON strings and returns a JSON string. The plain
//! Rust functions (`gates`, `prr_curve`, `geometry`) carry the logic so they
//! can be tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use mlcl::data::{ContrastiveBatch, LabelMatrix};
use mlcl::evaluation::{alignment, uniformity};
use mlcl::losses::{contrastive_loss, prr, LossConfig, LossId};
use mlcl::numerics::Matrix;
use mlcl::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Gate {
    pub anchor: usize,
    pub candidate: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub gate: f64,
    /// Coefficient of `s_ik` in the gradient with the regularizer on.
    pub regularized: f64,
    /// Same coefficient with the regularizer off.
    pub plain: f64,
}

#[derive(Debug, Serialize)]
pub struct GateTable {
    pub loss: f64,
    pub reg: f64,
    pub prr: Option<f64>,
    pub gates: Vec<Gate>,
}

#[derive(Debug, Serialize)]
pub struct PrrPoint {
    pub tau: f64,
    pub prr: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Geometry {
    pub align: Option<f64>,
    pub uniform: f64,
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, json: &str) -> Result<T> {
    serde_json::from_str(json).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn points_matrix(points: &[[f64; 2]]) -> Result<Matrix> {
    if points.is_empty() {
        return Err(Error::Domain("no points".into()));
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    Ok(Matrix::from_shape_vec((points.len(), 2), flat).expect("two columns per point"))
}

fn batch(points_json: &str, labels_json: &str) -> Result<ContrastiveBatch> {
    let points: Vec<[f64; 2]> = parse("points", points_json)?;
    let rows: Vec<Vec<usize>> = parse("labels", labels_json)?;
    let num_labels = rows.iter().flatten().max().map_or(1, |&m| m + 1);
    ContrastiveBatch::new(points_matrix(&points)?, LabelMatrix::new(num_labels, rows)?, None)
}

/// Instance-only losses: the demo has no prototypes, so `reg` runs its ablation without them.
fn demo_config(tau: f64) -> LossConfig {
    LossConfig {
        tau,
        use_prototypes: false,
        ..Default::default()
    }
}

fn host_and_regularized(id: LossId) -> Result<(LossId, LossId)> {
    match id {
        LossId::Reg | LossId::RegNoReg => Ok((LossId::RegNoReg, LossId::Reg)),
        LossId::SupCon | LossId::SupConReg => Ok((LossId::SupCon, LossId::SupConReg)),
        LossId::Base | LossId::MulSupCon => Ok((id, id)),
        other => Err(Error::Config(format!("`{other}` is not available without prototypes"))),
    }
}

/// Gate table of `loss` at temperature `tau`, with and without the regularizer.
pub fn gates(points_json: &str, labels_json: &str, loss: &str, tau: f64) -> Result<GateTable> {
    let b = batch(points_json, labels_json)?;
    let (host_id, reg_id) = host_and_regularized(loss.parse()?)?;
    let cfg = demo_config(tau);
    let plain = contrastive_loss(host_id, &b, &cfg)?;
    let reg = contrastive_loss(reg_id, &b, &LossConfig { use_regularizer: true, ..cfg })?;
    let gates = plain
        .gates
        .iter()
        .zip(&reg.gates)
        .map(|(p, r)| Gate {
            anchor: p.anchor,
            candidate: p.candidate,
            lambda: p.lambda,
            sigma: p.sigma,
            gate: p.gate,
            regularized: r.combined,
            plain: p.combined,
        })
        .collect();
    Ok(GateTable {
        loss: reg.loss_value,
        reg: reg.reg_value,
        prr: prr(&plain.gates),
        gates,
    })
}

/// PRR of `loss` for each temperature of `taus_json`.
pub fn prr_curve(points_json: &str, labels_json: &str, loss: &str, taus_json: &str) -> Result<Vec<PrrPoint>> {
    let b = batch(points_json, labels_json)?;
    let (host_id, _) = host_and_regularized(loss.parse()?)?;
    let taus: Vec<f64> = parse("taus", taus_json)?;
    taus.into_iter()
        .map(|tau| {
            let out = contrastive_loss(host_id, &b, &demo_config(tau))?;
            Ok(PrrPoint { tau, prr: prr(&out.gates) })
        })
        .collect()
}

/// Alignment over exact-label-set pairs and uniformity over all pairs.
pub fn geometry(points_json: &str, labels_json: &str) -> Result<Geometry> {
    let b = batch(points_json, labels_json)?;
    let z = b.embeddings().view();
    Ok(Geometry {
        align: alignment(z, b.labels())?,
        uniform: uniformity(z)?,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = gateTable)]
pub fn gate_table_js(points: &str, labels: &str, loss: &str, tau: f64) -> std::result::Result<String, JsError> {
    to_js(gates(points, labels, loss, tau))
}

#[wasm_bindgen(js_name = prrCurve)]
pub fn prr_curve_js(points: &str, labels: &str, loss: &str, taus: &str) -> std::result::Result<String, JsError> {
    to_js(prr_curve(points, labels, loss, taus))
}

#[wasm_bindgen(js_name = geometry)]
pub fn geometry_js(points: &str, labels: &str) -> std::result::Result<String, JsError> {
    to_js(geometry(points, labels))
}
