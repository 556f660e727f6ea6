#![allow(dead_code)]

use gridse::grid::{Branch, Bus, BusType, Network};
use gridse::measurement::{MeasurementKind, MeasurementPlan};
use gridse::solvers::Factor;
use num_complex::Complex64;
use rand::Rng;
use std::path::PathBuf;
use std::sync::Arc;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

pub fn case(name: &str) -> Arc<Network> {
    Arc::new(Network::from_file(&data(name), None).expect("bundled case parses"))
}

pub fn bus(id: u32, bus_type: BusType) -> Bus {
    Bus {
        id,
        index: 0,
        bus_type,
        shunt_g: 0.0,
        shunt_b: 0.0,
        vm_init: 1.0,
        va_init: 0.0,
    }
}

/// The 2-bus line `r = 0.01`, `x = 0.1`, `b = 0.02`.
pub fn two_bus() -> Arc<Network> {
    Arc::new(
        Network::new(
            vec![bus(1, BusType::Slack), bus(2, BusType::Pq)],
            vec![Branch::new(0, 1, 0.01, 0.1, 0.02, 1.0, 0.0, true)],
            100.0,
        )
        .unwrap(),
    )
}

/// Connected network on `n` buses: a random spanning tree plus a few chords,
/// some of them off-nominal transformers, and random shunts.
pub fn random_network(rng: &mut impl Rng, n: usize) -> Arc<Network> {
    let mut buses: Vec<Bus> = (0..n)
        .map(|i| {
            bus(
                i as u32 + 1,
                if i == 0 { BusType::Slack } else { BusType::Pq },
            )
        })
        .collect();
    for b in buses.iter_mut() {
        if rng.random_bool(0.3) {
            b.shunt_b = rng.random_range(-0.2..0.2);
            b.shunt_g = rng.random_range(0.0..0.05);
        }
    }
    let line = |rng: &mut dyn rand::RngCore, f: usize, t: usize| {
        let tap = if rng.random_bool(0.25) {
            rng.random_range(0.9..1.1)
        } else {
            1.0
        };
        let shift = if tap != 1.0 && rng.random_bool(0.5) {
            rng.random_range(-0.1..0.1)
        } else {
            0.0
        };
        Branch::new(
            f,
            t,
            rng.random_range(0.005..0.05),
            rng.random_range(0.05..0.3),
            rng.random_range(0.0..0.05),
            tap,
            shift,
            true,
        )
    };
    let mut branches = Vec::new();
    for t in 1..n {
        let f = rng.random_range(0..t);
        branches.push(line(rng, f, t));
    }
    for _ in 0..n / 2 {
        let f = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        if f != t {
            branches.push(line(rng, f, t));
        }
    }
    Arc::new(Network::new(buses, branches, 100.0).unwrap())
}

/// Every meter kind the network supports.
pub fn all_kinds(net: &Network) -> Vec<MeasurementKind> {
    let mut kinds = Vec::new();
    for bus in 0..net.n_buses() {
        kinds.push(MeasurementKind::VmagSq { bus });
        kinds.push(MeasurementKind::Pinj { bus });
        kinds.push(MeasurementKind::Qinj { bus });
    }
    for branch in 0..net.branches().len() {
        for from_end in [true, false] {
            kinds.push(MeasurementKind::Pflow { branch, from_end });
            kinds.push(MeasurementKind::Qflow { branch, from_end });
        }
    }
    kinds
}

/// Random nonempty subset of all meter kinds with random readings.
pub fn random_plan(rng: &mut impl Rng, net: Arc<Network>) -> MeasurementPlan {
    let mut kinds: Vec<(MeasurementKind, f64)> = all_kinds(&net)
        .into_iter()
        .filter(|_| rng.random_bool(0.6))
        .map(|k| (k, 0.01))
        .collect();
    if kinds.is_empty() {
        kinds.push((MeasurementKind::VmagSq { bus: 0 }, 0.01));
    }
    let mut plan = MeasurementPlan::from_kinds(net, &kinds, &[], 0.0).unwrap();
    for m in &mut plan.measurements {
        m.z = rng.random_range(-2.0..2.0);
    }
    plan
}

pub fn random_factor(rng: &mut impl Rng, n: usize, r: usize) -> Factor {
    Factor::from_fn(n, r, |_, _| {
        Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
    })
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Central-difference gradient in the convention of the solvers: the real
/// part differentiates along `Re(u)`, the imaginary part along `Im(u)`.
pub fn finite_difference(u: &Factor, h: f64, mut f: impl FnMut(&Factor) -> f64) -> Factor {
    let mut g = Factor::zeros(u.nrows(), u.ncols());
    for j in 0..u.ncols() {
        for i in 0..u.nrows() {
            let mut partial = [0.0; 2];
            for (k, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)]
                .into_iter()
                .enumerate()
            {
                let mut up = u.clone();
                up[(i, j)] += dir;
                let mut dn = u.clone();
                dn[(i, j)] -= dir;
                partial[k] = (f(&up) - f(&dn)) / (2.0 * h);
            }
            g[(i, j)] = Complex64::new(partial[0], partial[1]);
        }
    }
    g
}

pub fn relative_error(a: &Factor, b: &Factor) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
