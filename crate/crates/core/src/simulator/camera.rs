//! Pinhole camera on the robot, ray-cast depth against the room, and the
//! rigid-motion flow field at the grid points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensorimotor::{FlowGrid, FlowVector};

/// Planar robot pose in the room frame (metres, radians; heading 0 = +x).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Rectangular walled room `[0, width] x [0, depth]` on a ground plane z = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub depth: f64,
}

impl Room {
    /// Distance along `heading` from `(x, y)` to the first wall.
    pub fn distance_along(&self, x: f64, y: f64, heading: f64) -> f64 {
        let (s, c) = heading.sin_cos();
        let mut best = f64::INFINITY;
        if c > 1e-12 {
            best = best.min((self.width - x) / c);
        } else if c < -1e-12 {
            best = best.min(-x / c);
        }
        if s > 1e-12 {
            best = best.min((self.depth - y) / s);
        } else if s < -1e-12 {
            best = best.min(-y / s);
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal length in pixels.
    pub focal: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub cx: f64,
    pub cy: f64,
    /// Optical centre height above the ground (m).
    pub height: f64,
    /// Downward tilt of the optical axis (rad).
    pub tilt: f64,
    /// Forward offset of the optical centre from the rotation axis (m).
    pub offset: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            focal: 295.0,
            image_width: 320.0,
            image_height: 240.0,
            cx: 160.0,
            cy: 120.0,
            height: 0.8,
            tilt: 20f64.to_radians(),
            offset: 0.2,
            rows: 4,
            cols: 5,
        }
    }
}

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Camera axes (x right, y down, z optical) in the room frame.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: V3,
    pub x_axis: V3,
    pub y_axis: V3,
    pub z_axis: V3,
}

impl Camera {
    /// Normalized image coordinates of the grid sample points (cell centres),
    /// row-major.
    pub fn grid_points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let u = (c as f64 + 0.5) * self.image_width / self.cols as f64;
                let v = (r as f64 + 0.5) * self.image_height / self.rows as f64;
                pts.push(((u - self.cx) / self.focal, (v - self.cy) / self.focal));
            }
        }
        pts
    }

    pub fn frame(&self, pose: &Pose) -> CameraFrame {
        let (st, ct) = pose.heading.sin_cos();
        let (sp, cp) = self.tilt.sin_cos();
        CameraFrame {
            origin: [pose.x + self.offset * ct, pose.y + self.offset * st, self.height],
            x_axis: [st, -ct, 0.0],
            y_axis: [-sp * ct, -sp * st, -cp],
            z_axis: [cp * ct, cp * st, -sp],
        }
    }

    /// Room-frame ray direction through normalized point `(x, y)`, scaled so
    /// its optical-axis component is 1 (the ray parameter is then depth).
    fn ray(&self, f: &CameraFrame, x: f64, y: f64) -> V3 {
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = x * f.x_axis[i] + y * f.y_axis[i] + f.z_axis[i];
        }
        d
    }

    /// Depth of the first ground or wall hit through normalized point `(x, y)`.
    pub fn depth_at(&self, room: &Room, pose: &Pose, x: f64, y: f64) -> Option<f64> {
        let f = self.frame(pose);
        let d = self.ray(&f, x, y);
        let o = f.origin;
        let mut best = f64::INFINITY;
        let mut hit = |z: f64| {
            if z > 0.0 && z < best {
                best = z;
            }
        };
        if d[2] < 0.0 {
            hit(-o[2] / d[2]);
        }
        if d[0] > 0.0 {
            hit((room.width - o[0]) / d[0]);
        } else if d[0] < 0.0 {
            hit(-o[0] / d[0]);
        }
        if d[1] > 0.0 {
            hit((room.depth - o[1]) / d[1]);
        } else if d[1] < 0.0 {
            hit(-o[1] / d[1]);
        }
        best.is_finite().then_some(best)
    }

    pub fn depths(&self, room: &Room, pose: &Pose) -> Result<Vec<f64>> {
        self.grid_points()
            .into_iter()
            .map(|(x, y)| {
                self.depth_at(room, pose, x, y)
                    .ok_or_else(|| Error::Scenario("grid ray hits no surface".into()))
            })
            .collect()
    }

    /// Checks that every grid ray eventually meets the ground or a wall from
    /// any pose, i.e. no ray points straight up.
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.height > 0.0) {
            return Err(Error::Scenario("camera focal length and height must be positive".into()));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Scenario("grid must be at least 1x1".into()));
        }
        let f = self.frame(&Pose::default());
        for (x, y) in self.grid_points() {
            let d = self.ray(&f, x, y);
            if d[2] >= 0.0 && d[0].hypot(d[1]) < 1e-9 {
                return Err(Error::Scenario(format!(
                    "grid ray through ({x:.3}, {y:.3}) is parallel to every surface"
                )));
            }
        }
        Ok(())
    }

    /// Camera-frame linear and angular velocity for robot forward speed `v`
    /// and yaw rate `w`.
    pub fn camera_velocity(&self, v: f64, w: f64) -> (V3, V3) {
        let (sp, cp) = self.tilt.sin_cos();
        // The optical centre sits `offset` ahead of the rotation axis, so yaw
        // adds a lateral velocity `w * offset` in the robot frame.
        let lin_robot = [v, w * self.offset, 0.0];
        let ang_robot = [0.0, 0.0, w];
        let x_c = [0.0, -1.0, 0.0];
        let y_c = [-sp, 0.0, -cp];
        let z_c = [cp, 0.0, -sp];
        (
            [dot(lin_robot, x_c), dot(lin_robot, y_c), dot(lin_robot, z_c)],
            [dot(ang_robot, x_c), dot(ang_robot, y_c), dot(ang_robot, z_c)],
        )
    }

    /// Image motion (pixels/s) of a static point seen at normalized `(x, y)`
    /// with depth `z`, from the translational and rotational interaction
    /// matrices.
    pub fn point_flow(&self, x: f64, y: f64, z: f64, lin: V3, ang: V3) -> FlowVector {
        let [vx, vy, vz] = lin;
        let [wx, wy, wz] = ang;
        let xd = (-vx + x * vz) / z + x * y * wx - (1.0 + x * x) * wy + y * wz;
        let yd = (-vy + y * vz) / z + (1.0 + y * y) * wx - x * y * wy - x * wz;
        FlowVector::new(self.focal * xd, self.focal * yd)
    }

    /// Noise-free flow at every grid point for a robot at `pose` moving with
    /// forward speed `v` and yaw rate `w`.
    pub fn render_flow(&self, room: &Room, pose: &Pose, v: f64, w: f64) -> Result<FlowGrid> {
        let depths = self.depths(room, pose)?;
        let (lin, ang) = self.camera_velocity(v, w);
        let cells = self
            .grid_points()
            .into_iter()
            .zip(depths)
            .map(|((x, y), z)| self.point_flow(x, y, z, lin, ang))
            .collect();
        FlowGrid::new(self.rows, self.cols, cells)
    }

    /// Projects a room-frame point; `None` when behind the camera.
    pub fn project(&self, pose: &Pose, p: V3) -> Option<(f64, f64)> {
        let f = self.frame(pose);
        let rel = [p[0] - f.origin[0], p[1] - f.origin[1], p[2] - f.origin[2]];
        let z = dot(rel, f.z_axis);
        (z > 1e-9).then(|| (dot(rel, f.x_axis) / z, dot(rel, f.y_axis) / z))
    }

    /// Room-frame point seen at normalized `(x, y)` at depth `z`.
    pub fn back_project(&self, pose: &Pose, x: f64, y: f64, z: f64) -> V3 {
        let f = self.frame(pose);
        let d = self.ray(&f, x, y);
        [f.origin[0] + z * d[0], f.origin[1] + z * d[1], f.origin[2] + z * d[2]]
    }
}
