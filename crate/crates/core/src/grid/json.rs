//! Native JSON case schema. All quantities are per-unit, angles in radians.
//! Field-by-field reference: `docs/case-json.md`.

use super::{Branch, Bus, BusType, CaseError, Network};
use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct CaseDoc {
    base_mva: f64,
    buses: Vec<BusDoc>,
    branches: Vec<BranchDoc>,
}

#[derive(Serialize, Deserialize)]
struct BusDoc {
    id: u32,
    #[serde(rename = "type")]
    bus_type: BusType,
    #[serde(default)]
    gs: f64,
    #[serde(default)]
    bs: f64,
    #[serde(default = "one")]
    vm: f64,
    #[serde(default)]
    va: f64,
}

#[derive(Serialize, Deserialize)]
struct BranchDoc {
    from: u32,
    to: u32,
    #[serde(default)]
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "one")]
    tap: f64,
    #[serde(default)]
    shift: f64,
    #[serde(default = "yes")]
    status: bool,
}

pub fn network_from_json(text: &str) -> Result<Network, CaseError> {
    let doc: CaseDoc = serde_json::from_str(text)?;
    let buses: Vec<Bus> = doc
        .buses
        .iter()
        .enumerate()
        .map(|(index, b)| Bus {
            id: b.id,
            index,
            bus_type: b.bus_type,
            shunt_g: b.gs,
            shunt_b: b.bs,
            vm_init: b.vm,
            va_init: b.va,
        })
        .collect();
    let mut index_of = std::collections::HashMap::new();
    for b in &buses {
        if index_of.insert(b.id, b.index).is_some() {
            return Err(CaseError::DuplicateBus(b.id));
        }
    }
    let branches = doc
        .branches
        .iter()
        .enumerate()
        .map(|(k, br)| {
            let find = |id: u32| {
                index_of
                    .get(&id)
                    .copied()
                    .ok_or(CaseError::UnknownBus { branch: k, bus: id })
            };
            Ok(Branch::new(
                find(br.from)?,
                find(br.to)?,
                br.r,
                br.x,
                br.b,
                br.tap,
                br.shift,
                br.status,
            ))
        })
        .collect::<Result<Vec<_>, CaseError>>()?;
    Network::new(buses, branches, doc.base_mva)
}

pub fn network_to_json(net: &Network) -> String {
    let doc = CaseDoc {
        base_mva: net.base_mva(),
        buses: net
            .buses()
            .iter()
            .map(|b| BusDoc {
                id: b.id,
                bus_type: b.bus_type,
                gs: b.shunt_g,
                bs: b.shunt_b,
                vm: b.vm_init,
                va: b.va_init,
            })
            .collect(),
        branches: net
            .branches()
            .iter()
            .map(|br| BranchDoc {
                from: net.bus_id(br.from_idx),
                to: net.bus_id(br.to_idx),
                r: br.r,
                x: br.x,
                b: br.charging_b,
                tap: br.tap_ratio,
                shift: br.shift,
                status: br.in_service,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("case document serializes")
}
