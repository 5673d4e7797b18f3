//! Extended-XYZ reading and writing for orthorhombic cells.
//!
//! Supported per-frame layout:
//!
//! ```text
//! <natoms>
//! Lattice="Lx 0 0 0 Ly 0 0 0 Lz" Properties=species:S:1:pos:R:3[:forces:R:3][:vel:R:3] [energy=<E>] [key=value ...]
//! <symbol> <x> <y> <z> [fx fy fz] [vx vy vz]
//! ...
//! ```
//!
//! The lattice must be orthorhombic (off-diagonal entries exactly zero);
//! anything else is rejected. Unknown per-atom columns are skipped with a
//! warning; unknown comment-line keys are preserved in [`RawFrame::extra`].
//! Floats are written with shortest round-trip formatting, so write → parse
//! reproduces every value bit-for-bit.

use super::{Cell, Configuration};
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use std::fmt::Write as _;

/// A parsed extended-XYZ frame, including fields (velocities, extra comment
/// keys) that [`Configuration`] does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub species: Vec<String>,
    pub positions: Vec<Vec3>,
    pub cell: Cell,
    pub energy: Option<f64>,
    pub forces: Option<Vec<Vec3>>,
    pub velocities: Option<Vec<Vec3>>,
    /// Comment-line key=value pairs other than Lattice/Properties/energy,
    /// in file order. Not interpreted here.
    pub extra: Vec<(String, String)>,
}

impl RawFrame {
    pub fn from_configuration(c: &Configuration) -> RawFrame {
        RawFrame {
            species: c.species.clone(),
            positions: c.positions.clone(),
            cell: c.cell,
            energy: c.energy,
            forces: c.forces.clone(),
            velocities: None,
            extra: Vec::new(),
        }
    }

    pub fn into_configuration(self) -> Result<Configuration> {
        let mut c = Configuration::new(self.species, self.positions, self.cell)?;
        c.energy = self.energy;
        c.forces = self.forces;
        c.validate()?;
        Ok(c)
    }
}

/// Parse every frame in an extended-XYZ document into [`Configuration`]s
/// (velocities and unknown keys are dropped).
pub fn parse_extxyz(text: &str) -> Result<Vec<Configuration>> {
    parse_extxyz_frames(text)?.into_iter().map(RawFrame::into_configuration).collect()
}

/// Parse every frame, keeping velocities and extra comment keys.
pub fn parse_extxyz_frames(text: &str) -> Result<Vec<RawFrame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0usize;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let natoms: usize = lines[i].trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("expected atom count, got {:?}", lines[i].trim()),
        })?;
        if natoms == 0 {
            return Err(Error::Parse { line: i + 1, msg: "frame with zero atoms".into() });
        }
        if i + 1 >= lines.len() {
            return Err(Error::Parse { line: i + 1, msg: "missing comment line".into() });
        }
        let header = parse_header(lines[i + 1], i + 2)?;
        if i + 1 + natoms >= lines.len() + 1 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!(
                    "frame declares {natoms} atoms but only {} lines remain",
                    lines.len() - i - 2
                ),
            });
        }
        let mut frame = RawFrame {
            species: Vec::with_capacity(natoms),
            positions: Vec::with_capacity(natoms),
            cell: header.cell,
            energy: header.energy,
            forces: if header.layout.forces_col.is_some() {
                Some(Vec::with_capacity(natoms))
            } else {
                None
            },
            velocities: if header.layout.vel_col.is_some() {
                Some(Vec::with_capacity(natoms))
            } else {
                None
            },
            extra: header.extra,
        };
        for a in 0..natoms {
            let lineno = i + 3 + a;
            let line = lines.get(i + 2 + a).ok_or(Error::Parse {
                line: lineno,
                msg: "unexpected end of file inside frame".into(),
            })?;
            parse_atom_line(line, lineno, &header.layout, &mut frame)?;
        }
        frames.push(frame);
        i += 2 + natoms;
    }
    if frames.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no frames found".into() });
    }
    Ok(frames)
}

struct ColumnLayout {
    /// (name, width, starting column) for every declared field.
    fields: Vec<(String, usize, usize)>,
    total_cols: usize,
    species_col: usize,
    pos_col: usize,
    forces_col: Option<usize>,
    vel_col: Option<usize>,
}

struct Header {
    cell: Cell,
    energy: Option<f64>,
    layout: ColumnLayout,
    extra: Vec<(String, String)>,
}

fn parse_header(line: &str, lineno: usize) -> Result<Header> {
    let kvs = tokenize_key_values(line, lineno)?;
    let mut cell = None;
    let mut energy = None;
    let mut layout = None;
    let mut extra = Vec::new();
    for (key, value) in kvs {
        match key.as_str() {
            "Lattice" => cell = Some(parse_lattice(&value, lineno)?),
            "Properties" => layout = Some(parse_properties(&value, lineno)?),
            "energy" => {
                let e: f64 = value.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid energy value {value:?}"),
                })?;
                energy = Some(e);
            }
            _ => extra.push((key, value)),
        }
    }
    let cell = cell.ok_or(Error::Parse { line: lineno, msg: "missing Lattice key".into() })?;
    let layout =
        layout.ok_or(Error::Parse { line: lineno, msg: "missing Properties key".into() })?;
    Ok(Header { cell, energy, layout, extra })
}

/// Split a comment line into key=value pairs. Values may be double-quoted
/// (quotes stripped); a bare token without '=' becomes a key with an empty
/// value.
fn tokenize_key_values(line: &str, lineno: usize) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while matches!(chars.peek(), Some(c) if c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() == Some(&'=') {
            chars.next();
            let mut value = String::new();
            if chars.peek() == Some(&'"') {
                chars.next();
                let mut closed = false;
                for c in chars.by_ref() {
                    if c == '"' {
                        closed = true;
                        break;
                    }
                    value.push(c);
                }
                if !closed {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unterminated quote in value of {key:?}"),
                    });
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
            out.push((key, value));
        } else {
            out.push((key, String::new()));
        }
    }
    Ok(out)
}

fn parse_lattice(value: &str, lineno: usize) -> Result<Cell> {
    let nums: Vec<f64> = value
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid Lattice entry {t:?}"),
            })
        })
        .collect::<Result<_>>()?;
    if nums.len() != 9 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("Lattice must have 9 entries, got {}", nums.len()),
        });
    }
    for (idx, &v) in nums.iter().enumerate() {
        if idx % 4 != 0 && v != 0.0 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "non-orthorhombic cell: off-diagonal Lattice entry {v} at position {idx}; \
                     only diagonal (orthorhombic) lattices are supported"
                ),
            });
        }
    }
    Cell::new(nums[0], nums[4], nums[8]).map_err(|e| Error::Parse {
        line: lineno,
        msg: format!("invalid Lattice: {e}"),
    })
}

fn parse_properties(value: &str, lineno: usize) -> Result<ColumnLayout> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() % 3 != 0 || parts.is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("Properties must be name:type:width triples, got {value:?}"),
        });
    }
    let mut fields = Vec::new();
    let mut col = 0usize;
    for triple in parts.chunks(3) {
        let name = triple[0].to_string();
        let width: usize = triple[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid Properties width {:?}", triple[2]),
        })?;
        if width == 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("zero-width Properties field {name:?}"),
            });
        }
        fields.push((name, width, col));
        col += width;
    }
    let find = |name: &str| fields.iter().find(|(n, _, _)| n == name).cloned();
    let species = find("species").ok_or(Error::Parse {
        line: lineno,
        msg: "Properties must include species:S:1".into(),
    })?;
    if species.1 != 1 {
        return Err(Error::Parse { line: lineno, msg: "species field must have width 1".into() });
    }
    let pos = find("pos")
        .ok_or(Error::Parse { line: lineno, msg: "Properties must include pos:R:3".into() })?;
    if pos.1 != 3 {
        return Err(Error::Parse { line: lineno, msg: "pos field must have width 3".into() });
    }
    let forces = find("forces");
    if let Some((_, w, _)) = forces {
        if w != 3 {
            return Err(Error::Parse { line: lineno, msg: "forces field must have width 3".into() });
        }
    }
    let vel = find("vel").or_else(|| find("velocities"));
    if let Some((_, w, _)) = vel {
        if w != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: "velocity field must have width 3".into(),
            });
        }
    }
    for (name, _, _) in &fields {
        if !matches!(name.as_str(), "species" | "pos" | "forces" | "vel" | "velocities") {
            log::warn!("ignoring unsupported extxyz column {name:?}");
        }
    }
    Ok(ColumnLayout {
        species_col: species.2,
        pos_col: pos.2,
        forces_col: forces.map(|f| f.2),
        vel_col: vel.map(|f| f.2),
        total_cols: col,
        fields,
    })
}

fn parse_atom_line(
    line: &str,
    lineno: usize,
    layout: &ColumnLayout,
    frame: &mut RawFrame,
) -> Result<()> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != layout.total_cols {
        return Err(Error::Parse {
            line: lineno,
            msg: format!(
                "expected {} columns ({}), got {}",
                layout.total_cols,
                layout
                    .fields
                    .iter()
                    .map(|(n, w, _)| format!("{n}:{w}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                toks.len()
            ),
        });
    }
    let f = |tok: &str| -> Result<f64> {
        tok.parse::<f64>().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid number {tok:?}"),
        })
    };
    let vec_at = |c: usize| -> Result<Vec3> {
        Ok(Vec3::new(f(toks[c])?, f(toks[c + 1])?, f(toks[c + 2])?))
    };
    frame.species.push(toks[layout.species_col].to_string());
    frame.positions.push(vec_at(layout.pos_col)?);
    if let Some(c) = layout.forces_col {
        frame.forces.as_mut().unwrap().push(vec_at(c)?);
    }
    if let Some(c) = layout.vel_col {
        frame.velocities.as_mut().unwrap().push(vec_at(c)?);
    }
    Ok(())
}

/// Format a float so that parsing the text reproduces the value exactly.
/// Plain decimal for moderate magnitudes, exponent form otherwise.
pub(crate) fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Serialize configurations to extended-XYZ text.
pub fn write_extxyz(configs: &[Configuration]) -> String {
    let frames: Vec<RawFrame> = configs.iter().map(RawFrame::from_configuration).collect();
    write_extxyz_frames(&frames)
}

/// Serialize raw frames (with optional velocities and extra keys).
pub fn write_extxyz_frames(frames: &[RawFrame]) -> String {
    let mut out = String::new();
    for frame in frames {
        let n = frame.positions.len();
        writeln!(out, "{n}").unwrap();
        let l = frame.cell.lengths;
        write!(
            out,
            "Lattice=\"{} 0 0 0 {} 0 0 0 {}\"",
            fmt_f64(l.x),
            fmt_f64(l.y),
            fmt_f64(l.z)
        )
        .unwrap();
        let mut props = String::from("species:S:1:pos:R:3");
        if frame.forces.is_some() {
            props.push_str(":forces:R:3");
        }
        if frame.velocities.is_some() {
            props.push_str(":vel:R:3");
        }
        write!(out, " Properties={props}").unwrap();
        if let Some(e) = frame.energy {
            write!(out, " energy={}", fmt_f64(e)).unwrap();
        }
        for (k, v) in &frame.extra {
            if v.contains(char::is_whitespace) || v.is_empty() {
                write!(out, " {k}=\"{v}\"").unwrap();
            } else {
                write!(out, " {k}={v}").unwrap();
            }
        }
        out.push('\n');
        for i in 0..n {
            let p = frame.positions[i];
            write!(out, "{} {} {} {}", frame.species[i], fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z))
                .unwrap();
            if let Some(fs) = &frame.forces {
                let v = fs[i];
                write!(out, " {} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)).unwrap();
            }
            if let Some(vs) = &frame.velocities {
                let v = vs[i];
                write!(out, " {} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)).unwrap();
            }
            out.push('\n');
        }
    }
    out
}
