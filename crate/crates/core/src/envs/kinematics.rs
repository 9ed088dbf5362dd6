use std::fmt::Write as _;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::EnvError;

/// Position plus unit quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: [f64; 4]) -> Self {
        Self { position, orientation }
    }

    pub fn identity_at(position: [f64; 3]) -> Self {
        Self { position, orientation: [1.0, 0.0, 0.0, 0.0] }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        let d: f64 = (0..3).map(|i| (self.position[i] - other.position[i]).powi(2)).sum();
        d.sqrt()
    }

    /// `|⟨q, q'⟩|`, 1 when the orientations coincide (including `q' = -q`).
    pub fn orientation_alignment(&self, other: &Pose) -> f64 {
        (0..4).map(|i| self.orientation[i] * other.orientation[i]).sum::<f64>().abs()
    }

    fn isometry(&self) -> Isometry3<f64> {
        let [w, x, y, z] = self.orientation;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        let [px, py, pz] = self.position;
        Isometry3::from_parts(Translation3::new(px, py, pz), q)
    }

    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.quaternion();
        Self { position: [t.x, t.y, t.z], orientation: [q.w, q.i, q.j, q.k] }
    }
}

/// Revolute joint: rotate about `axis` by the joint angle, then translate by
/// `translation` in the rotated frame to reach the next joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub axis: [f64; 3],
    pub translation: [f64; 3],
    pub limits: (f64, f64),
    /// Collision radius of the link that follows this joint.
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub joints: Vec<Joint>,
    pub base: Pose,
    /// Height of the table plane; `None` disables table collisions.
    pub table_height: Option<f64>,
}

impl ArmModel {
    pub fn new(joints: Vec<Joint>, base: Pose, table_height: Option<f64>) -> Result<Self, EnvError> {
        if joints.is_empty() {
            return Err(EnvError::Config("arm needs at least one joint".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            let n = j.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(EnvError::Config(format!("joint {i}: axis {:?} is not unit length", j.axis)));
            }
            if !(j.limits.0 < j.limits.1) {
                return Err(EnvError::Config(format!("joint {i}: limits {:?} are empty", j.limits)));
            }
            if !(j.radius >= 0.0) {
                return Err(EnvError::Config(format!("joint {i}: negative radius")));
            }
        }
        Ok(Self { joints, base, table_height })
    }

    /// Two unit links rotating about z in the xy-plane, reach 2.0.
    pub fn planar_two_link() -> Self {
        let joint = Joint {
            axis: [0.0, 0.0, 1.0],
            translation: [1.0, 0.0, 0.0],
            limits: (-std::f64::consts::PI, std::f64::consts::PI),
            radius: 0.05,
        };
        Self { joints: vec![joint.clone(), joint], base: Pose::identity_at([0.0; 3]), table_height: None }
    }

    /// Six-joint arm standing upright on a table at `z = 0`.
    ///
    /// Yaw-pitch-pitch-yaw-pitch-yaw; total height 1.05 m at zero pose.
    pub fn six_dof() -> Self {
        use std::f64::consts::PI;
        let z = [0.0, 0.0, 1.0];
        let y = [0.0, 1.0, 0.0];
        let j = |axis, h: f64, lim: f64, radius| Joint { axis, translation: [0.0, 0.0, h], limits: (-lim, lim), radius };
        Self {
            joints: vec![
                j(z, 0.2, PI, 0.05),
                j(y, 0.3, 2.0, 0.04),
                j(y, 0.3, 2.5, 0.04),
                j(z, 0.1, PI, 0.03),
                j(y, 0.1, 2.0, 0.03),
                j(z, 0.05, PI, 0.02),
            ],
            base: Pose::identity_at([0.0; 3]),
            table_height: Some(0.0),
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.translation.iter().map(|t| t * t).sum::<f64>().sqrt()).sum()
    }

    pub fn clamp_joints(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.joints).map(|(&v, j)| v.clamp(j.limits.0, j.limits.1)).collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter().zip(&self.joints).all(|(&v, j)| v >= j.limits.0 && v <= j.limits.1)
    }

    /// Joint origins `p_0 .. p_M` (base first, end effector last) and the
    /// end-effector pose.
    pub fn chain(&self, q: &[f64]) -> (Vec<[f64; 3]>, Pose) {
        assert_eq!(q.len(), self.dof(), "joint vector width");
        let q = self.clamp_joints(q);
        let mut frame = self.base.isometry();
        let mut points = Vec::with_capacity(self.dof() + 1);
        let t = frame.translation.vector;
        points.push([t.x, t.y, t.z]);
        for (j, &angle) in self.joints.iter().zip(&q) {
            let axis = Unit::new_normalize(Vector3::new(j.axis[0], j.axis[1], j.axis[2]));
            let rot = Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&axis, angle));
            let [tx, ty, tz] = j.translation;
            frame = frame * rot * Translation3::new(tx, ty, tz);
            let t = frame.translation.vector;
            points.push([t.x, t.y, t.z]);
        }
        let mut rotation = frame.rotation;
        rotation.renormalize();
        frame.rotation = rotation;
        (points, Pose::from_isometry(&frame))
    }

    /// Joints outside their limits are clamped first.
    pub fn forward_kinematics(&self, q: &[f64]) -> Pose {
        self.chain(q).1
    }

    /// Link `i` is the capsule from `p_i` to `p_{i+1}` with radius `joints[i].radius`.
    /// The table test skips link 0, which is mounted on the base; the self test
    /// skips links sharing a joint.
    pub fn collision_check(&self, q: &[f64]) -> bool {
        let (points, _) = self.chain(q);
        let links = self.dof();
        if let Some(h) = self.table_height {
            for i in 1..links {
                let low = points[i][2].min(points[i + 1][2]);
                if low - self.joints[i].radius < h {
                    return true;
                }
            }
        }
        for i in 0..links {
            for k in i + 2..links {
                let d = segment_distance(points[i], points[i + 1], points[k], points[k + 1]);
                if d < self.joints[i].radius + self.joints[k].radius {
                    return true;
                }
            }
        }
        false
    }

    /// Line-oriented text form, see [`ArmModel::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("# polgrad arm v1\n");
        let b = &self.base;
        let _ = writeln!(
            s,
            "base {} {} {} {} {} {} {}",
            b.position[0], b.position[1], b.position[2], b.orientation[0], b.orientation[1], b.orientation[2], b.orientation[3]
        );
        match self.table_height {
            Some(h) => {
                let _ = writeln!(s, "table {h}");
            }
            None => s.push_str("table none\n"),
        }
        for j in &self.joints {
            let _ = writeln!(
                s,
                "joint {} {} {} {} {} {} {} {} {}",
                j.axis[0], j.axis[1], j.axis[2], j.translation[0], j.translation[1], j.translation[2], j.limits.0, j.limits.1, j.radius
            );
        }
        s
    }

    /// Parses the arm text format:
    ///
    /// ```text
    /// # comment
    /// base  px py pz qw qx qy qz
    /// table height | none
    /// joint ax ay az tx ty tz lo hi radius   (one line per joint, base to tip)
    /// ```
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut base = Pose::identity_at([0.0; 3]);
        let mut table = None;
        let mut joints = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            let nums = |n: usize| -> Result<Vec<f64>, EnvError> {
                if rest.len() != n {
                    return Err(EnvError::Config(format!("line {}: `{key}` takes {n} numbers", lineno + 1)));
                }
                rest.iter()
                    .map(|t| t.parse::<f64>().map_err(|e| EnvError::Config(format!("line {}: {e}", lineno + 1))))
                    .collect()
            };
            match key {
                "base" => {
                    let v = nums(7)?;
                    base = Pose::new([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]]);
                }
                "table" if rest == ["none"] => table = None,
                "table" => table = Some(nums(1)?[0]),
                "joint" => {
                    let v = nums(9)?;
                    joints.push(Joint {
                        axis: [v[0], v[1], v[2]],
                        translation: [v[3], v[4], v[5]],
                        limits: (v[6], v[7]),
                        radius: v[8],
                    });
                }
                other => return Err(EnvError::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        Self::new(joints, base, table)
    }
}

/// Closest distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_distance(p1: [f64; 3], q1: [f64; 3], p2: [f64; 3], q2: [f64; 3]) -> f64 {
    let p1 = Point3::from(p1);
    let q1 = Point3::from(q1);
    let p2 = Point3::from(p2);
    let q2 = Point3::from(q2);
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-15;
    let (s, t);
    if a <= eps && e <= eps {
        return (p1 - p2).norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}
