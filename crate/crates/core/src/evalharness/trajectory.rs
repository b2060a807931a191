//! Camera-trajectory alignment and error metrics.
//!
//! Estimated monocular trajectories carry an arbitrary similarity; before
//! comparing against ground truth the scale is fixed from the distance
//! between the first two registered camera centers and the remaining rigid
//! part is solved in closed form (Kabsch). ATE averages center distance and
//! absolute rotation angle over common poses; RPE compares consecutive
//! relative motions.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use std::path::Path;

/// One camera pose: camera-to-world rotation and camera center.
#[derive(Clone, Debug)]
pub struct Pose {
    pub image_id: String,
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub registered: bool,
}

/// Ordered camera trajectory.
#[derive(Clone, Debug, Default)]
pub struct PoseTrajectory {
    pub poses: Vec<Pose>,
}

impl PoseTrajectory {
    /// Check rotation orthonormality (within 1e-6) for every pose.
    pub fn validate(&self) -> Result<()> {
        for p in &self.poses {
            let gram = p.rotation.transpose() * p.rotation;
            let dev = (gram - Matrix3::identity()).abs().max();
            if dev > 1e-6 {
                return Err(Error::Data(format!(
                    "pose {}: rotation deviates from orthonormal by {dev:.2e}",
                    p.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn registered_count(&self) -> usize {
        self.poses.iter().filter(|p| p.registered).count()
    }

    /// Plain text: one pose per line,
    /// `image_id r00 r01 r02 r10 r11 r12 r20 r21 r22 cx cy cz registered`.
    pub fn read_text(path: &Path) -> Result<PoseTrajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut poses = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 14 {
                return Err(Error::format(
                    path,
                    format!("line {}: expected 14 fields, got {}", ln + 1, fields.len()),
                ));
            }
            let nums: Vec<f64> = fields[1..13]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", ln + 1)))?;
            let registered = match fields[13] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::format(
                        path,
                        format!("line {}: registered flag must be 0 or 1, got {other}", ln + 1),
                    ))
                }
            };
            poses.push(Pose {
                image_id: fields[0].to_string(),
                rotation: Matrix3::new(
                    nums[0], nums[1], nums[2], nums[3], nums[4], nums[5], nums[6], nums[7],
                    nums[8],
                ),
                center: Vector3::new(nums[9], nums[10], nums[11]),
                registered,
            });
        }
        let traj = PoseTrajectory { poses };
        traj.validate()?;
        Ok(traj)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for p in &self.poses {
            let r = &p.rotation;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
                p.image_id,
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
                p.center.x, p.center.y, p.center.z,
                if p.registered { 1 } else { 0 },
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Similarity transform mapping estimated coordinates into the ground-truth
/// frame: c -> scale * rotation * c + translation.
#[derive(Clone, Debug)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn apply_center(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * c) + self.translation
    }

    pub fn apply(&self, traj: &PoseTrajectory) -> PoseTrajectory {
        PoseTrajectory {
            poses: traj
                .poses
                .iter()
                .map(|p| Pose {
                    image_id: p.image_id.clone(),
                    rotation: self.rotation * p.rotation,
                    center: self.apply_center(&p.center),
                    registered: p.registered,
                })
                .collect(),
        }
    }
}

/// Image ids registered in both trajectories, in ground-truth order.
fn common_registered(est: &PoseTrajectory, gt: &PoseTrajectory) -> Vec<(usize, usize)> {
    gt.poses
        .iter()
        .enumerate()
        .filter(|(_, g)| g.registered)
        .filter_map(|(gi, g)| {
            est.poses
                .iter()
                .position(|e| e.registered && e.image_id == g.image_id)
                .map(|ei| (ei, gi))
        })
        .collect()
}

/// Recover the similarity aligning `est` onto `gt`.
///
/// The scale is the ratio of the distances between the first two common
/// registered camera centers; rotation and translation minimize the squared
/// center distances over all common poses (closed-form via SVD).
pub fn align_trajectory(
    est: &PoseTrajectory,
    gt: &PoseTrajectory,
) -> Result<SimilarityTransform> {
    let common = common_registered(est, gt);
    if common.len() < 2 {
        return Err(Error::Data(format!(
            "{} common registered poses; need at least 2 for alignment",
            common.len()
        )));
    }
    let (e0, g0) = common[0];
    let (e1, g1) = common[1];
    let d_est = (est.poses[e1].center - est.poses[e0].center).norm();
    let d_gt = (gt.poses[g1].center - gt.poses[g0].center).norm();
    if d_est < 1e-12 {
        return Err(Error::Numeric(
            "first two registered estimated centers coincide; scale is undefined".into(),
        ));
    }
    let scale = d_gt / d_est;

    let n = common.len() as f64;
    let mut cent_e = Vector3::zeros();
    let mut cent_g = Vector3::zeros();
    for &(ei, gi) in &common {
        cent_e += scale * est.poses[ei].center;
        cent_g += gt.poses[gi].center;
    }
    cent_e /= n;
    cent_g /= n;
    let mut cov = Matrix3::zeros();
    for &(ei, gi) in &common {
        let x = scale * est.poses[ei].center - cent_e;
        let y = gt.poses[gi].center - cent_g;
        cov += y * x.transpose();
    }
    let svd = cov.svd(true, true);
    let rotation = if svd.singular_values[1] <= 1e-9 * svd.singular_values[0].max(1e-300) {
        // collinear centers: any rotation about the line minimizes the
        // residual equally, so take the minimal rotation mapping the est
        // direction onto the gt direction (identity when est == gt)
        let dir_e = (est.poses[e1].center - est.poses[e0].center) / d_est;
        let dir_g = (gt.poses[g1].center - gt.poses[g0].center) / d_gt.max(1e-300);
        match nalgebra::Rotation3::rotation_between(&dir_e, &dir_g) {
            Some(r) => r.into_inner(),
            None => {
                // opposite directions: pick a deterministic orthogonal axis
                let axis = if dir_e.x.abs() < 0.9 {
                    dir_e.cross(&Vector3::x())
                } else {
                    dir_e.cross(&Vector3::y())
                };
                nalgebra::Rotation3::from_axis_angle(
                    &nalgebra::Unit::new_normalize(axis),
                    std::f64::consts::PI,
                )
                .into_inner()
            }
        }
    } else {
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut s = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            s[(2, 2)] = -1.0;
        }
        u * s * vt
    };
    let translation = cent_g - rotation * cent_e;
    Ok(SimilarityTransform { scale, rotation, translation })
}

/// Trajectory errors after alignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseErrors {
    /// Mean camera-center distance.
    pub ate_trans: f64,
    /// Mean absolute rotation angle, degrees.
    pub ate_rot_deg: f64,
    /// Mean relative translation discrepancy over consecutive poses.
    pub rpe_trans: f64,
    /// Mean relative rotation discrepancy over consecutive poses, degrees.
    pub rpe_rot_deg: f64,
}

fn rotation_angle_deg(r: &Matrix3<f64>) -> f64 {
    // atan2 of the skew norm against the trace stays exact near zero,
    // where acos((trace-1)/2) loses half the significant digits
    let sin = 0.5
        * ((r[(2, 1)] - r[(1, 2)]).powi(2)
            + (r[(0, 2)] - r[(2, 0)]).powi(2)
            + (r[(1, 0)] - r[(0, 1)]).powi(2))
        .sqrt();
    let cos = (r.trace() - 1.0) / 2.0;
    sin.atan2(cos).to_degrees()
}

/// Absolute and relative pose errors between two trajectories over their
/// common registered poses. The caller chooses whether `est` has been
/// aligned (see [`align_trajectory`]); this function compares poses as
/// given.
pub fn ate_rpe(est: &PoseTrajectory, gt: &PoseTrajectory) -> Result<PoseErrors> {
    let common = common_registered(est, gt);
    if common.is_empty() {
        return Err(Error::Data("no common registered poses".into()));
    }
    let mut ate_t = 0.0f64;
    let mut ate_r = 0.0f64;
    for &(ei, gi) in &common {
        ate_t += (est.poses[ei].center - gt.poses[gi].center).norm();
        let dr = est.poses[ei].rotation * gt.poses[gi].rotation.transpose();
        ate_r += rotation_angle_deg(&dr);
    }
    let n = common.len() as f64;
    let (mut rpe_t, mut rpe_r) = (0.0f64, 0.0f64);
    let deltas = common.len().saturating_sub(1);
    for w in common.windows(2) {
        let (e0, g0) = w[0];
        let (e1, g1) = w[1];
        // relative motions expressed in the first pose's camera frame
        let rel = |r0: &Matrix3<f64>, c0: &Vector3<f64>, r1: &Matrix3<f64>, c1: &Vector3<f64>| {
            let r_rel = r0.transpose() * r1;
            let t_rel = r0.transpose() * (c1 - c0);
            (r_rel, t_rel)
        };
        let (re, te) = rel(
            &est.poses[e0].rotation,
            &est.poses[e0].center,
            &est.poses[e1].rotation,
            &est.poses[e1].center,
        );
        let (rg, tg) = rel(
            &gt.poses[g0].rotation,
            &gt.poses[g0].center,
            &gt.poses[g1].rotation,
            &gt.poses[g1].center,
        );
        rpe_t += (te - tg).norm();
        rpe_r += rotation_angle_deg(&(rg.transpose() * re));
    }
    Ok(PoseErrors {
        ate_trans: ate_t / n,
        ate_rot_deg: ate_r / n,
        rpe_trans: if deltas > 0 { rpe_t / deltas as f64 } else { 0.0 },
        rpe_rot_deg: if deltas > 0 { rpe_r / deltas as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn rotation_from_axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    fn synthetic_trajectory(n: usize, seed: u64) -> PoseTrajectory {
        let mut rng = DetRng::seed_from(seed);
        let poses = (0..n)
            .map(|i| Pose {
                image_id: format!("img_{i:03}"),
                rotation: rotation_from_axis_angle(
                    Vector3::new(rng.normal(), rng.normal(), rng.normal()),
                    rng.uniform_in(-0.8, 0.8),
                ),
                center: Vector3::new(
                    i as f64 + rng.uniform_in(-0.2, 0.2),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                ),
                registered: true,
            })
            .collect();
        PoseTrajectory { poses }
    }

    #[test]
    fn identical_trajectories_align_to_identity_and_zero_errors() {
        let t = synthetic_trajectory(8, 1);
        let sim = align_trajectory(&t, &t).unwrap();
        assert!((sim.scale - 1.0).abs() < 1e-12);
        assert!((sim.rotation - Matrix3::identity()).abs().max() < 1e-9);
        assert!(sim.translation.norm() < 1e-9);
        let errs = ate_rpe(&sim.apply(&t), &t).unwrap();
        assert!(errs.ate_trans < 1e-12 && errs.ate_rot_deg < 1e-9);
        assert!(errs.rpe_trans < 1e-12 && errs.rpe_rot_deg < 1e-9);
    }

    #[test]
    fn known_similarity_is_recovered_exactly() {
        let gt = synthetic_trajectory(10, 2);
        let r = rotation_from_axis_angle(Vector3::new(0.2, 1.0, -0.4), 0.7);
        // est is gt pushed through the similarity (scale 2, rotation r,
        // offset); alignment must recover scale 0.5 and rotation r^T
        let est = PoseTrajectory {
            poses: gt
                .poses
                .iter()
                .map(|p| Pose {
                    image_id: p.image_id.clone(),
                    rotation: r * p.rotation,
                    center: 2.0 * (r * p.center) + Vector3::new(3.0, -1.0, 2.0),
                    registered: true,
                })
                .collect(),
        };
        let sim = align_trajectory(&est, &gt).unwrap();
        assert!((sim.scale - 0.5).abs() < 1e-9, "scale {}", sim.scale);
        assert!((sim.rotation - r.transpose()).abs().max() < 1e-9);
        let aligned = sim.apply(&est);
        let errs = ate_rpe(&aligned, &gt).unwrap();
        assert!(
            errs.ate_trans < 1e-9 && errs.ate_rot_deg < 1e-7,
            "ate_trans {} ate_rot {}",
            errs.ate_trans,
            errs.ate_rot_deg
        );
    }

    #[test]
    fn alignment_invariant_to_similarity_perturbation() {
        let gt = synthetic_trajectory(10, 3);
        let r = rotation_from_axis_angle(Vector3::new(1.0, 0.3, 0.1), -0.4);
        let est = PoseTrajectory {
            poses: gt
                .poses
                .iter()
                .map(|p| Pose {
                    image_id: p.image_id.clone(),
                    rotation: r * p.rotation,
                    center: 3.7 * (r * p.center) + Vector3::new(-2.0, 5.0, 0.5),
                    registered: true,
                })
                .collect(),
        };
        let sim = align_trajectory(&est, &gt).unwrap();
        let aligned = sim.apply(&est);
        for (a, g) in aligned.poses.iter().zip(&gt.poses) {
            assert!((a.center - g.center).norm() <= 1e-6);
        }
    }

    #[test]
    fn constant_offset_without_alignment_gives_unit_ate() {
        let gt = synthetic_trajectory(6, 4);
        let est = PoseTrajectory {
            poses: gt
                .poses
                .iter()
                .map(|p| Pose {
                    image_id: p.image_id.clone(),
                    rotation: p.rotation,
                    center: p.center + Vector3::new(1.0, 0.0, 0.0),
                    registered: true,
                })
                .collect(),
        };
        let errs = ate_rpe(&est, &gt).unwrap();
        assert!((errs.ate_trans - 1.0).abs() < 1e-12);
        assert!(errs.ate_rot_deg < 1e-12);
        assert!(errs.rpe_trans < 1e-12); // constant offset cancels in relatives
    }

    #[test]
    fn too_few_common_poses_is_an_error() {
        let mut a = synthetic_trajectory(4, 5);
        let b = synthetic_trajectory(4, 5);
        for p in a.poses.iter_mut().skip(1) {
            p.registered = false;
        }
        assert!(align_trajectory(&a, &b).is_err());
    }

    #[test]
    fn text_round_trip_preserves_poses() {
        let dir = std::env::temp_dir().join("burstfeat_traj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut t = synthetic_trajectory(5, 6);
        t.poses[2].registered = false;
        let path = dir.join("traj.txt");
        t.write_text(&path).unwrap();
        let back = PoseTrajectory::read_text(&path).unwrap();
        assert_eq!(back.poses.len(), 5);
        for (a, b) in t.poses.iter().zip(&back.poses) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.registered, b.registered);
            assert!((a.rotation - b.rotation).abs().max() == 0.0);
            assert_eq!(a.center, b.center);
        }
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let mut t = synthetic_trajectory(3, 7);
        t.poses[1].rotation[(0, 0)] += 1e-3;
        assert!(t.validate().is_err());
    }
}
