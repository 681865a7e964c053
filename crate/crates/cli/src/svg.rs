//! Top-down SVG rendering of planar scenes at a fixed 100 px/m.

use std::fmt::Write;

use nalgebra::{Point3, UnitQuaternion};

use graspopt::bench::Scenario;
use graspopt::chain::Configuration;
use graspopt::geometry::Primitive;
use graspopt::scene::Field;
use graspopt::trajopt::Trajectory;

pub const PIXELS_PER_METER: f64 = 100.0;

struct Canvas {
    half: f64,
    body: String,
}

impl Canvas {
    fn px(&self, p: &Point3<f64>) -> (f64, f64) {
        ((p.x + self.half) * PIXELS_PER_METER, (self.half - p.y) * PIXELS_PER_METER)
    }

    fn primitive(&mut self, shape: &Primitive, style: &str) {
        match shape {
            Primitive::Sphere { center, radius } => {
                let (x, y) = self.px(center);
                let _ = writeln!(
                    self.body,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" {style}/>"#,
                    radius * PIXELS_PER_METER
                );
            }
            Primitive::Box {
                center,
                half_extents,
                rotation,
            } => {
                let r = UnitQuaternion::from_scaled_axis(*rotation);
                let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
                let pts: Vec<String> = corners
                    .iter()
                    .map(|(sx, sy)| {
                        let local = nalgebra::Vector3::new(sx * half_extents.x, sy * half_extents.y, 0.0);
                        let (x, y) = self.px(&(center + r * local));
                        format!("{x:.2},{y:.2}")
                    })
                    .collect();
                let _ = writeln!(self.body, r#"<polygon points="{}" {style}/>"#, pts.join(" "));
            }
            Primitive::Capsule { a, b, radius } => {
                let (x1, y1) = self.px(a);
                let (x2, y2) = self.px(b);
                let _ = writeln!(
                    self.body,
                    r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke-width="{:.2}" stroke-linecap="round" {style}/>"#,
                    2.0 * radius * PIXELS_PER_METER
                );
            }
        }
    }

    fn polyline(&mut self, pts: &[Point3<f64>], style: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(self.body, r#"<polyline points="{}" fill="none" {style}/>"#, coords.join(" "));
    }
}

fn arm(canvas: &mut Canvas, scenario: &Scenario, q: &Configuration, style: &str) -> anyhow::Result<()> {
    let frames = scenario.chain.forward_kinematics(q)?;
    for part in scenario.chain.parts() {
        canvas.primitive(&part.shape.transformed(&frames[part.link + 1]), style);
    }
    Ok(())
}

fn ee_path(scenario: &Scenario, traj: &Trajectory) -> anyhow::Result<Vec<Point3<f64>>> {
    (0..=traj.n())
        .map(|t| Ok(Point3::from(scenario.chain.end_effector(&traj.point(t))?.translation.vector)))
        .collect()
}

/// Obstacles, target, goal set, the initial and final end-effector paths and
/// the arm at the start and at the final configuration.
pub fn render(scenario: &Scenario, initial: &Trajectory, fin: &Trajectory) -> anyhow::Result<String> {
    let reach: f64 = scenario
        .chain
        .joints()
        .iter()
        .map(|j| j.origin.translation.vector.norm())
        .sum::<f64>()
        + scenario.chain.ee_offset().translation.vector.norm()
        + scenario.gripper.finger_length();
    let half = (reach + 0.2).ceil();
    let size = 2.0 * half * PIXELS_PER_METER;
    let mut canvas = Canvas {
        half,
        body: String::new(),
    };
    for field in &scenario.scene.obstacles {
        if let Field::Primitive(p) = field {
            canvas.primitive(p, r##"fill="#9e9e9e" stroke="#9e9e9e""##);
        }
    }
    if let Some(t) = &scenario.scene.target {
        canvas.primitive(&t.shape, r##"fill="#e0a030""##);
    }
    for (i, g) in scenario.goals.goals().iter().enumerate() {
        let ee = scenario.chain.end_effector(g)?;
        let (x, y) = canvas.px(&Point3::from(ee.translation.vector));
        let fill = if scenario.goals.is_feasible(i) { "#3070c0" } else { "#c03030" };
        let _ = writeln!(canvas.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{fill}"/>"#);
    }
    arm(&mut canvas, scenario, initial.start(), r##"stroke="#606060" fill="none" opacity="0.5""##)?;
    arm(&mut canvas, scenario, &fin.endpoint(), r##"stroke="#208040" fill="none" opacity="0.7""##)?;
    let path = ee_path(scenario, initial)?;
    canvas.polyline(&path, r##"stroke="#808080" stroke-dasharray="4 3""##);
    let path = ee_path(scenario, fin)?;
    canvas.polyline(&path, r##"stroke="#208040" stroke-width="1.5""##);
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size:.0}\" height=\"{size:.0}\" viewBox=\"0 0 {size:.0} {size:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
        canvas.body
    ))
}
