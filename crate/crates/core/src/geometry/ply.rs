//! ASCII PLY export of pointmaps.

use std::io::{BufRead, Write};

use super::pointmap::Pointmap;
use super::pose::Vec3;
use crate::error::{Error, Result};

/// Writes every valid point of `pm` as an ASCII PLY vertex list.
pub fn write_ascii_ply<W: Write>(pm: &Pointmap, mut out: W) -> Result<()> {
    let points = pm.valid_points();
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "comment source_frame {} target_time {}", pm.source_frame, pm.target_time)?;
    writeln!(out, "element vertex {}", points.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "end_header")?;
    for p in &points {
        writeln!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

/// Parses an ASCII PLY file with an `x y z` vertex element.
pub fn read_ascii_ply<R: BufRead>(input: R) -> Result<Vec<Vec3>> {
    let bad = |msg: &str| Error::InvalidArgument(format!("malformed PLY: {msg}"));
    let mut lines = input.lines();
    if lines.next().transpose()?.as_deref() != Some("ply") {
        return Err(bad("missing magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = lines.next().transpose()?.ok_or_else(|| bad("unterminated header"))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad("only ascii format is supported"));
                }
            }
            Some("element") => {
                if tok.next() == Some("vertex") {
                    count = Some(
                        tok.next()
                            .and_then(|c| c.parse::<usize>().ok())
                            .ok_or_else(|| bad("bad vertex count"))?,
                    );
                }
            }
            Some("property") => props.push(tok.last().unwrap_or_default().to_string()),
            Some("end_header") => break,
            _ => {}
        }
    }
    if props != ["x", "y", "z"] {
        return Err(bad("expected properties x y z"));
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().transpose()?.ok_or_else(|| bad("truncated vertex list"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric vertex"))?;
        if v.len() != 3 {
            return Err(bad("vertex needs three coordinates"));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(points)
}
