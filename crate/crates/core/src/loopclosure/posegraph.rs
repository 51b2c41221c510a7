use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SMatrix, SVector, UnitQuaternion, Vector3};

use crate::geometry::PoseSim3;
use crate::mapping::KeyFrameId;

type Vector7 = SVector<f64, 7>;
type Matrix7 = SMatrix<f64, 7, 7>;

/// Relative constraint `S_i · S_j⁻¹ ≈ measurement` between two world-to-camera
/// similarities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseGraphEdge {
    pub i: KeyFrameId,
    pub j: KeyFrameId,
    pub measurement: PoseSim3,
}

impl PoseGraphEdge {
    /// Edge measured from the current values of its two vertices.
    pub fn from_poses(i: KeyFrameId, si: &PoseSim3, j: KeyFrameId, sj: &PoseSim3) -> Self {
        Self { i, j, measurement: si.compose(&sj.inverse()) }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    pub vertices: BTreeMap<KeyFrameId, PoseSim3>,
    pub fixed: BTreeSet<KeyFrameId>,
    pub edges: Vec<PoseGraphEdge>,
    /// Keep every scale at its initial value (rigid graph).
    pub fix_scale: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraphReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Left perturbation `exp(δ) · S` with `δ = (ω, υ, σ)`.
pub fn sim3_retract(s: &PoseSim3, delta: &Vector7) -> PoseSim3 {
    let step = PoseSim3 {
        rotation: UnitQuaternion::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2])),
        translation: Vector3::new(delta[3], delta[4], delta[5]),
        scale: delta[6].exp(),
    };
    step.compose(s)
}

/// `(log R, t, ln s)` of the discrepancy `measurement⁻¹ · S_i · S_j⁻¹`.
pub fn edge_residual(edge: &PoseGraphEdge, si: &PoseSim3, sj: &PoseSim3) -> Vector7 {
    let e = edge.measurement.inverse().compose(&si.compose(&sj.inverse()));
    let w = e.rotation.scaled_axis();
    Vector7::from_column_slice(&[w.x, w.y, w.z, e.translation.x, e.translation.y, e.translation.z, e.scale.ln()])
}

impl PoseGraph {
    pub fn cost(&self) -> f64 {
        self.cost_with(&self.vertices)
    }

    fn cost_with(&self, v: &BTreeMap<KeyFrameId, PoseSim3>) -> f64 {
        self.edges.iter().map(|e| edge_residual(e, &v[&e.i], &v[&e.j]).norm_squared()).sum()
    }

    /// Levenberg-Marquardt over the free vertices with numeric Jacobians.
    pub fn optimize(&mut self, max_iterations: usize) -> PoseGraphReport {
        let free: Vec<KeyFrameId> = self.vertices.keys().copied().filter(|k| !self.fixed.contains(k)).collect();
        let slot: BTreeMap<KeyFrameId, usize> = free.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let dofs = if self.fix_scale { 6 } else { 7 };
        let n = free.len() * dofs;
        let mut cost = self.cost();
        let mut report = PoseGraphReport { initial_cost: cost, final_cost: cost, iterations: 0 };
        if n == 0 || self.edges.is_empty() {
            return report;
        }
        let mut lambda = 1e-4;
        let h_step = 1e-7;
        while report.iterations < max_iterations && cost > 1e-30 {
            report.iterations += 1;
            let mut h = DMatrix::<f64>::zeros(n, n);
            let mut g = DVector::<f64>::zeros(n);
            for e in &self.edges {
                let (si, sj) = (self.vertices[&e.i], self.vertices[&e.j]);
                let r = edge_residual(e, &si, &sj);
                let mut blocks: Vec<(usize, SMatrix<f64, 7, 7>)> = Vec::new();
                for (k, is_i) in [(e.i, true), (e.j, false)] {
                    let Some(&s) = slot.get(&k) else { continue };
                    let mut jac = Matrix7::zeros();
                    for d in 0..dofs {
                        let mut delta = Vector7::zeros();
                        delta[d] = h_step;
                        let (plus, minus) = if is_i {
                            (
                                edge_residual(e, &sim3_retract(&si, &delta), &sj),
                                edge_residual(e, &sim3_retract(&si, &-delta), &sj),
                            )
                        } else {
                            (
                                edge_residual(e, &si, &sim3_retract(&sj, &delta)),
                                edge_residual(e, &si, &sim3_retract(&sj, &-delta)),
                            )
                        };
                        jac.set_column(d, &((plus - minus) / (2.0 * h_step)));
                    }
                    blocks.push((s, jac));
                }
                for (a, ja) in &blocks {
                    let ja = ja.columns(0, dofs);
                    let ga = ja.transpose() * r;
                    for d in 0..dofs {
                        g[a * dofs + d] += ga[d];
                    }
                    for (b, jb) in &blocks {
                        let jb = jb.columns(0, dofs);
                        let hab = ja.transpose() * jb;
                        for x in 0..dofs {
                            for y in 0..dofs {
                                h[(a * dofs + x, b * dofs + y)] += hab[(x, y)];
                            }
                        }
                    }
                }
            }
            let mut accepted = false;
            while lambda < 1e10 {
                let mut damped = h.clone();
                for d in 0..n {
                    damped[(d, d)] += lambda * h[(d, d)].max(1e-9);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&(-&g));
                let mut candidate = self.vertices.clone();
                for (&k, &s) in &slot {
                    let mut delta = Vector7::zeros();
                    for d in 0..dofs {
                        delta[d] = step[s * dofs + d];
                    }
                    candidate.insert(k, sim3_retract(&self.vertices[&k], &delta));
                }
                let c = self.cost_with(&candidate);
                if c < cost {
                    let decrease = (cost - c) / cost;
                    self.vertices = candidate;
                    cost = c;
                    lambda = (lambda * 0.5).max(1e-12);
                    accepted = decrease >= 1e-12;
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        report.final_cost = cost;
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> Vec<PoseSim3> {
        (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                let r = UnitQuaternion::from_euler_angles(0.0, -a, 0.0);
                let c = Vector3::new(3.0 * a.cos(), 0.1 * a.sin(), 3.0 * a.sin());
                PoseSim3::new(r, -(r * c), 1.0)
            })
            .collect()
    }

    #[test]
    fn residual_vanishes_on_measured_poses() {
        let p = ring(4);
        let e = PoseGraphEdge::from_poses(0, &p[0], 1, &p[1]);
        assert!(edge_residual(&e, &p[0], &p[1]).norm() < 1e-12);
    }

    #[test]
    fn noiseless_graph_is_recovered_exactly() {
        let truth = ring(12);
        let mut graph = PoseGraph::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (i, s) in truth.iter().enumerate() {
            let noisy = if i == 0 {
                *s
            } else {
                let d = Vector7::from_fn(|k, _| rng.random_range(-1.0..1.0) * if k < 3 { 0.05 } else { 0.1 });
                sim3_retract(s, &d)
            };
            graph.vertices.insert(i as u64, noisy);
        }
        graph.fixed.insert(0);
        for i in 0..12u64 {
            let j = (i + 1) % 12;
            graph.edges.push(PoseGraphEdge::from_poses(i, &truth[i as usize], j, &truth[j as usize]));
            let k = (i + 3) % 12;
            graph.edges.push(PoseGraphEdge::from_poses(i, &truth[i as usize], k, &truth[k as usize]));
        }
        let report = graph.optimize(50);
        assert!(report.final_cost < report.initial_cost);
        for (i, s) in truth.iter().enumerate() {
            let v = graph.vertices[&(i as u64)];
            assert!((v.translation - s.translation).norm() < 1e-6, "{i}");
            assert!(v.rotation.angle_to(&s.rotation) < 1e-6);
            assert!((v.scale - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_scale_keeps_scales() {
        let truth = ring(5);
        let mut graph = PoseGraph { fix_scale: true, ..Default::default() };
        for (i, s) in truth.iter().enumerate() {
            graph.vertices.insert(i as u64, *s);
        }
        graph.vertices.insert(2, PoseSim3::new(truth[2].rotation, truth[2].translation + Vector3::new(0.1, 0.0, 0.0), 1.0));
        graph.fixed.insert(0);
        for i in 0..4u64 {
            graph.edges.push(PoseGraphEdge::from_poses(i, &truth[i as usize], i + 1, &truth[i as usize + 1]));
        }
        graph.optimize(20);
        assert!(graph.vertices.values().all(|v| (v.scale - 1.0).abs() < 1e-15));
        assert!((graph.vertices[&2].translation - truth[2].translation).norm() < 1e-6);
    }
}
