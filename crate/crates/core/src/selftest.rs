//! The canonical slippage battery: a plane, a sphere centred at the
//! origin, a cylinder and three mutually orthogonal planes.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{FrameTag, OrientedCloud, OrientedPoint, Vec3};
use crate::stability::{analyze, slippable_motions, StabilityReport, DEFAULT_SLIP_CUT};

pub struct BatteryShape {
    pub name: &'static str,
    pub cloud: OrientedCloud,
    pub expected_slippable: usize,
    pub expected_stable: bool,
}

fn grid(n: usize) -> impl Iterator<Item = (f64, f64)> {
    (0..n).flat_map(move |i| (0..n).map(move |j| (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64)))
}

pub fn plane_cloud() -> OrientedCloud {
    let pts = grid(30)
        .map(|(a, b)| OrientedPoint::new(Vec3::new(2.0 * a - 1.0, 2.0 * b - 1.0, 0.0), Vec3::z()))
        .collect();
    OrientedCloud::new(pts, FrameTag::Canonical)
}

/// Fibonacci lattice on the unit sphere.
pub fn sphere_cloud() -> OrientedCloud {
    let n = 1500;
    let golden = PI * (3.0 - 5f64.sqrt());
    let pts = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let p = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            OrientedPoint::new(p, p)
        })
        .collect();
    OrientedCloud::new(pts, FrameTag::Canonical)
}

/// Mantle of a radius-0.5 cylinder about z, height 2.
pub fn cylinder_cloud() -> OrientedCloud {
    let pts = (0..60)
        .flat_map(|i| (0..40).map(move |j| (i, j)))
        .map(|(i, j)| {
            let th = 2.0 * PI * i as f64 / 60.0;
            let n = Vec3::new(th.cos(), th.sin(), 0.0);
            OrientedPoint::new(n * 0.5 + Vec3::z() * (2.0 * j as f64 / 39.0 - 1.0), n)
        })
        .collect();
    OrientedCloud::new(pts, FrameTag::Canonical)
}

/// The three coordinate planes meeting at the origin, unit squares each.
pub fn corner_cloud() -> OrientedCloud {
    let mut pts = Vec::new();
    for (a, b) in grid(20) {
        pts.push(OrientedPoint::new(Vec3::new(a, b, 0.0), Vec3::z()));
        pts.push(OrientedPoint::new(Vec3::new(0.0, a, b), Vec3::x()));
        pts.push(OrientedPoint::new(Vec3::new(b, 0.0, a), Vec3::y()));
    }
    OrientedCloud::new(pts, FrameTag::Canonical)
}

pub fn battery() -> Vec<BatteryShape> {
    vec![
        BatteryShape {
            name: "plane",
            cloud: plane_cloud(),
            expected_slippable: 3,
            expected_stable: false,
        },
        BatteryShape {
            name: "sphere",
            cloud: sphere_cloud(),
            expected_slippable: 3,
            expected_stable: false,
        },
        BatteryShape {
            name: "cylinder",
            cloud: cylinder_cloud(),
            expected_slippable: 2,
            expected_stable: false,
        },
        BatteryShape {
            name: "3-planes",
            cloud: corner_cloud(),
            expected_slippable: 0,
            expected_stable: true,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub shape: String,
    pub slippable: usize,
    pub measure: f64,
    pub stable: bool,
    pub expected_slippable: usize,
    pub expected_stable: bool,
}

impl BatteryRow {
    pub fn matches(&self) -> bool {
        self.slippable == self.expected_slippable && self.stable == self.expected_stable
    }
}

/// Classifies every battery shape; `threshold` decides the stable flag.
pub fn run_battery(threshold: f64, normalize: bool) -> Result<Vec<BatteryRow>> {
    battery()
        .into_iter()
        .map(|s| {
            let report: StabilityReport = analyze(&s.cloud, normalize)?;
            Ok(BatteryRow {
                shape: s.name.to_string(),
                slippable: slippable_motions(&report, DEFAULT_SLIP_CUT).len(),
                measure: report.measure,
                stable: report.measure > threshold,
                expected_slippable: s.expected_slippable,
                expected_stable: s.expected_stable,
            })
        })
        .collect()
}

pub fn format_battery(rows: &[BatteryRow]) -> String {
    let mut s = String::from("shape      slippable  measure    stable  expected  ok\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>9}  {:<9.7}  {:<6}  {}/{:<6}  {}",
            r.shape,
            r.slippable,
            r.measure,
            r.stable,
            r.expected_slippable,
            r.expected_stable,
            if r.matches() { "yes" } else { "NO" }
        );
    }
    s
}
