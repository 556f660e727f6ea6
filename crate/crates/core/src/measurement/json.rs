//! Measurement-set documents. Matrices are never stored; they are rebuilt
//! from the network on load and the stored scale is reapplied.

use super::{
    build_h_matrix, Measurement, MeasurementError, MeasurementKind, MeasurementPlan, PmuBlock,
};
use crate::grid::Network;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    VmagSq,
    Pinj,
    Qinj,
    Pflow,
    Qflow,
}

#[derive(Serialize, Deserialize)]
struct MeasurementDoc {
    kind: KindTag,
    /// External bus id, for bus-located meters.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    bus: Option<u32>,
    /// Zero-based position in the case's branch table, for flow meters.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    branch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    from_end: Option<bool>,
    sigma: f64,
    z: f64,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct PmuDoc {
    bus: u32,
    sigma: f64,
    zeta: Vec<[f64; 2]>,
    #[serde(default)]
    row_scale: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    schema: u32,
    normalized: bool,
    measurements: Vec<MeasurementDoc>,
    #[serde(default)]
    pmu: Vec<PmuDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    truth: Option<Vec<[f64; 2]>>,
}

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn complexes(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

pub fn plan_to_json(plan: &MeasurementPlan, truth: Option<&[Complex64]>) -> String {
    let net = plan.network();
    let measurements = plan
        .measurements
        .iter()
        .map(|m| {
            let (kind, bus, branch, from_end) = match m.kind {
                MeasurementKind::VmagSq { bus } => {
                    (KindTag::VmagSq, Some(net.bus_id(bus)), None, None)
                }
                MeasurementKind::Pinj { bus } => (KindTag::Pinj, Some(net.bus_id(bus)), None, None),
                MeasurementKind::Qinj { bus } => (KindTag::Qinj, Some(net.bus_id(bus)), None, None),
                MeasurementKind::Pflow { branch, from_end } => {
                    (KindTag::Pflow, None, Some(branch), Some(from_end))
                }
                MeasurementKind::Qflow { branch, from_end } => {
                    (KindTag::Qflow, None, Some(branch), Some(from_end))
                }
            };
            MeasurementDoc {
                kind,
                bus,
                branch,
                from_end,
                sigma: m.sigma,
                z: m.z,
                scale: m.scale,
            }
        })
        .collect();
    let pmu = plan
        .pmu
        .iter()
        .map(|b| PmuDoc {
            bus: net.bus_id(b.bus),
            sigma: b.sigma,
            zeta: pairs(&b.zeta),
            row_scale: b.row_scale.clone(),
        })
        .collect();
    let doc = PlanDoc {
        schema: 1,
        normalized: plan.is_normalized(),
        measurements,
        pmu,
        truth: truth.map(pairs),
    };
    serde_json::to_string_pretty(&doc).expect("plan document serializes")
}

/// Rebuilds a plan (and the optional stored truth) against `network`.
pub fn plan_from_json(
    network: Arc<Network>,
    text: &str,
) -> Result<(MeasurementPlan, Option<Vec<Complex64>>), MeasurementError> {
    let doc: PlanDoc = serde_json::from_str(text)?;
    if doc.schema != 1 {
        return Err(MeasurementError::Document(format!(
            "unsupported schema {}",
            doc.schema
        )));
    }
    let bus_index = |id: Option<u32>| -> Result<usize, MeasurementError> {
        let id = id.ok_or_else(|| MeasurementError::Document("meter is missing its bus".into()))?;
        network
            .index_of(id)
            .ok_or_else(|| MeasurementError::Document(format!("unknown bus id {id}")))
    };
    let branch = |m: &MeasurementDoc| -> Result<(usize, bool), MeasurementError> {
        let b = m
            .branch
            .ok_or_else(|| MeasurementError::Document("flow meter is missing its branch".into()))?;
        Ok((b, m.from_end.unwrap_or(true)))
    };
    let mut measurements = Vec::with_capacity(doc.measurements.len());
    for m in &doc.measurements {
        let kind = match m.kind {
            KindTag::VmagSq => MeasurementKind::VmagSq {
                bus: bus_index(m.bus)?,
            },
            KindTag::Pinj => MeasurementKind::Pinj {
                bus: bus_index(m.bus)?,
            },
            KindTag::Qinj => MeasurementKind::Qinj {
                bus: bus_index(m.bus)?,
            },
            KindTag::Pflow => {
                let (branch, from_end) = branch(m)?;
                MeasurementKind::Pflow { branch, from_end }
            }
            KindTag::Qflow => {
                let (branch, from_end) = branch(m)?;
                MeasurementKind::Qflow { branch, from_end }
            }
        };
        let h = build_h_matrix(&network, kind)?;
        measurements.push(Measurement {
            kind,
            h: if m.scale == 1.0 { h } else { h.scaled(m.scale) },
            z: m.z,
            sigma: m.sigma,
            scale: m.scale,
        });
    }
    let mut pmu = Vec::with_capacity(doc.pmu.len());
    for p in &doc.pmu {
        let mut block = PmuBlock::new(&network, bus_index(Some(p.bus))?, p.sigma)?;
        if p.zeta.len() != block.phi.n_rows() {
            return Err(MeasurementError::Document(format!(
                "PMU at bus {} has {} values, expected {}",
                p.bus,
                p.zeta.len(),
                block.phi.n_rows()
            )));
        }
        if !p.row_scale.is_empty() {
            if p.row_scale.len() != p.zeta.len() {
                return Err(MeasurementError::Document(format!(
                    "PMU at bus {} has a malformed row_scale",
                    p.bus
                )));
            }
            block.scale_rows(&p.row_scale);
        }
        block.zeta = complexes(&p.zeta);
        pmu.push(block);
    }
    if measurements.is_empty() && pmu.is_empty() {
        return Err(MeasurementError::EmptyPlan);
    }
    let truth = doc.truth.as_deref().map(complexes);
    if let Some(t) = &truth {
        if t.len() != network.n_buses() {
            return Err(MeasurementError::StateLength {
                expected: network.n_buses(),
                got: t.len(),
            });
        }
    }
    let mut plan = MeasurementPlan {
        network,
        measurements,
        pmu,
        normalized: false,
    };
    plan.set_normalized(doc.normalized);
    Ok((plan, truth))
}
