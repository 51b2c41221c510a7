use std::io::{BufRead, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{KeyFrameId, PointId, WorldMap};
use crate::geometry::{Landmark3D, PoseSE3};

/// Plain-text view of a map: landmarks as `id x y z`, keyframes as
/// `id timestamp tx ty tz qx qy qz qw` with camera-to-world poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapSnapshot {
    pub landmarks: Vec<(PointId, Landmark3D)>,
    pub keyframes: Vec<(KeyFrameId, f64, PoseSE3)>,
}

impl MapSnapshot {
    pub fn from_map(map: &WorldMap) -> Self {
        Self {
            landmarks: map.points.values().map(|p| (p.id, p.position)).collect(),
            keyframes: map.keyframes.values().map(|k| (k.id, k.timestamp, k.pose.inverse())).collect(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# landmarks: id x y z")?;
        for (id, x) in &self.landmarks {
            writeln!(out, "{id} {:?} {:?} {:?}", x.x, x.y, x.z)?;
        }
        writeln!(out, "# keyframes: id timestamp tx ty tz qx qy qz qw")?;
        for (id, ts, pose) in &self.keyframes {
            let t = pose.translation;
            let q = pose.rotation.quaternion();
            writeln!(out, "{id} {ts:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)?;
        }
        Ok(())
    }

    /// Parses the output of [`MapSnapshot::write`]; rows are told apart by
    /// their field count.
    pub fn read<R: BufRead>(input: R) -> Result<Self, String> {
        let mut snap = Self::default();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let id: u64 = fields[0].parse().map_err(|_| format!("line {}: bad id", n + 1))?;
            let values: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| format!("line {}: bad number", n + 1))?;
            match values.len() {
                3 => snap.landmarks.push((id, Vector3::new(values[0], values[1], values[2]))),
                8 => {
                    let q = Quaternion::new(values[7], values[4], values[5], values[6]);
                    let t = Vector3::new(values[1], values[2], values[3]);
                    snap.keyframes.push((id, values[0], PoseSE3::new(UnitQuaternion::from_quaternion(q), t)));
                }
                k => return Err(format!("line {}: expected 4 or 9 fields, got {}", n + 1, k + 1)),
            }
        }
        Ok(snap)
    }
}
