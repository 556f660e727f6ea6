use super::Factor;
use crate::measurement::{MeasurementKind, MeasurementPlan};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

#[derive(Clone, Debug)]
pub struct Initialization {
    pub u: Factor,
    pub warning: Option<String>,
}

/// Measured magnitude per bus (from `|V|²` meters, clamped to `[0.5, 1.5]`),
/// 1 where a bus has no voltage meter.
fn magnitudes(plan: &MeasurementPlan) -> Vec<f64> {
    let mut mag = vec![1.0; plan.n_buses()];
    for m in &plan.measurements {
        if let MeasurementKind::VmagSq { bus } = m.kind {
            mag[bus] = (m.z / m.scale).max(0.0).sqrt().clamp(0.5, 1.5);
        }
    }
    mag
}

/// Measured magnitudes with every angle at zero.
pub fn flat_initialize(plan: &MeasurementPlan) -> Factor {
    let mag = magnitudes(plan);
    Factor::from_iterator(
        mag.len(),
        1,
        mag.into_iter().map(|m| Complex64::new(m, 0.0)),
    )
}

/// Linearized active-power row for the flow leaving `near` on `branch`:
/// `P ≈ b(θ_from − θ_to − shift)` seen from the from end, negated at the to end.
fn flow_row(
    plan: &MeasurementPlan,
    branch: usize,
    from_end: bool,
    column: &impl Fn(usize) -> Option<usize>,
    row: &mut [f64],
) -> f64 {
    let br = &plan.network().branches()[branch];
    if br.x == 0.0 {
        return 0.0;
    }
    let b = 1.0 / (br.x * br.tap_ratio);
    let sign = if from_end { 1.0 } else { -1.0 };
    if let Some(c) = column(br.from_idx) {
        row[c] += sign * b;
    }
    if let Some(c) = column(br.to_idx) {
        row[c] -= sign * b;
    }
    -sign * b * br.shift
}

/// Magnitudes as in [`flat_initialize`]; angles from the least-squares fit
/// of the DC model `p ≈ Bθ` to the active-power meters, slack pinned to 0.
/// Plans with no active-power meter get the flat start and a warning.
pub fn dc_initialize(plan: &MeasurementPlan) -> Initialization {
    let n = plan.n_buses();
    let slack = plan.network().slack();
    let column = |i: usize| match i.cmp(&slack) {
        std::cmp::Ordering::Less => Some(i),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(i - 1),
    };
    let active: Vec<_> = plan
        .measurements
        .iter()
        .filter(|m| m.kind.is_active_power())
        .collect();
    if active.is_empty() || n == 1 {
        let warning = (n > 1).then(|| "no active-power meters; using the flat start".to_string());
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        return Initialization {
            u: flat_initialize(plan),
            warning,
        };
    }
    let mut a = DMatrix::<f64>::zeros(active.len(), n - 1);
    let mut p = DVector::<f64>::zeros(active.len());
    for (k, m) in active.iter().enumerate() {
        let mut row = vec![0.0; n - 1];
        let offset = match m.kind {
            MeasurementKind::Pflow { branch, from_end } => {
                flow_row(plan, branch, from_end, &column, &mut row)
            }
            MeasurementKind::Pinj { bus } => plan
                .network()
                .incident_branches(bus)
                .map(|(b, br)| flow_row(plan, b, br.from_idx == bus, &column, &mut row))
                .sum(),
            _ => unreachable!("filtered to active-power meters"),
        };
        a.row_mut(k).copy_from_slice(&row);
        p[k] = m.z / m.scale - offset;
    }
    let theta = a
        .svd(true, true)
        .solve(&p, 1e-10)
        .expect("both singular factors were computed");
    let mag = magnitudes(plan);
    let u = Factor::from_fn(n, 1, |i, _| {
        let angle = column(i).map_or(0.0, |c| theta[c]);
        Complex64::from_polar(mag[i], angle)
    });
    Initialization { u, warning: None }
}
