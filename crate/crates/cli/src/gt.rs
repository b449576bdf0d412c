//! Analytic signed-distance sources for supervised training, named on
//! the command line as `kind:params` in original (file) coordinates:
//!
//! - `sphere:R` — centered sphere
//! - `torus:R:r` — z-axis torus
//! - `box:hx:hy:hz` — centered axis-aligned box (half extents)
//! - `twospheres:cx:r` — spheres of radius `r` at (+-cx, 0, 0)

use lpi_core::error::{Error, Result};
use lpi_core::Vec3;

pub type SdfFn = Box<dyn Fn(Vec3) -> f64 + Send + Sync>;

pub fn parse(spec: &str) -> Result<SdfFn> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Result<Vec<f64>> = parts[1..]
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number '{s}' in gt spec '{spec}'")))
        })
        .collect();
    let nums = nums?;
    let arity = |n: usize| -> Result<()> {
        if nums.len() != n {
            return Err(Error::InvalidArgument(format!(
                "gt spec '{spec}' expects {n} parameters, got {}",
                nums.len()
            )));
        }
        Ok(())
    };
    match parts[0] {
        "sphere" => {
            arity(1)?;
            let r = nums[0];
            Ok(Box::new(move |p: Vec3| p.norm() - r))
        }
        "torus" => {
            arity(2)?;
            let (major, minor) = (nums[0], nums[1]);
            Ok(Box::new(move |p: Vec3| {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
                (ring * ring + p.z * p.z).sqrt() - minor
            }))
        }
        "box" => {
            arity(3)?;
            let h = Vec3::new(nums[0], nums[1], nums[2]);
            Ok(Box::new(move |p: Vec3| {
                let q = Vec3::new(p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }))
        }
        "twospheres" => {
            arity(2)?;
            let (cx, r) = (nums[0], nums[1]);
            Ok(Box::new(move |p: Vec3| {
                let a = (p - Vec3::new(-cx, 0.0, 0.0)).norm() - r;
                let b = (p - Vec3::new(cx, 0.0, 0.0)).norm() - r;
                a.min(b)
            }))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown gt kind '{other}' (expected sphere, torus, box or twospheres)"
        ))),
    }
}
