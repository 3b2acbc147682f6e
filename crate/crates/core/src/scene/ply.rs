//! Binary little-endian PLY persistence for splat clouds.
//!
//! One `vertex` element per splat with properties, in order:
//! `x y z scale_0..2 rot_0..3 opacity f_dc_0..2 f_rest_*`. Scales are
//! log-scales, `rot_0` is the quaternion's real part, opacity is the logit.
//! `f_rest_*` is channel-major (all red coefficients, then green, then blue),
//! which is the layout common splat viewers expect. Values are written as
//! `double` so the round trip is exact; `float` properties are accepted on
//! load.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::cloud::{sh_coeff_count, GaussianCloud, Splat, MAX_SH_DEGREE};
use crate::error::{Error, Result};

pub const CLOUD_FORMAT_VERSION: u32 = 1;
const VERSION_COMMENT: &str = "vista_cloud_version";

fn property_names(sh_degree: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3).map(|c| format!("f_dc_{c}")));
    let rest = sh_coeff_count(sh_degree) - 1;
    names.extend((0..3 * rest).map(|k| format!("f_rest_{k}")));
    names
}

/// Bytes per splat record for a given SH degree.
pub fn record_size(sh_degree: usize) -> usize {
    property_names(sh_degree).len() * 8
}

fn splat_values(s: &Splat) -> Vec<f64> {
    let mut v = Vec::with_capacity(14 + 3 * s.sh.len());
    v.extend_from_slice(&s.mean);
    v.extend_from_slice(&s.log_scale);
    v.extend_from_slice(&s.rotation);
    v.push(s.opacity_logit);
    v.extend_from_slice(&s.sh[0]);
    for c in 0..3 {
        v.extend(s.sh[1..].iter().map(|k| k[c]));
    }
    v
}

pub fn write_cloud<W: Write>(cloud: &GaussianCloud, mut out: W) -> std::io::Result<()> {
    let names = property_names(cloud.sh_degree);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment {VERSION_COMMENT} {CLOUD_FORMAT_VERSION}\n"));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for n in &names {
        header.push_str(&format!("property double {n}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * names.len() * 8);
    for s in &cloud.splats {
        for v in splat_values(s) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

pub fn save_cloud(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_cloud(cloud, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cloud(BufReader::new(file))
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
}

/// Parses a cloud; never panics on malformed input.
pub fn read_cloud<R: BufRead>(mut input: R) -> Result<GaussianCloud> {
    let corrupt = |m: &str| Error::CorruptHeader(m.to_string());
    let mut line = String::new();
    let next_line = |input: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        // Bound header lines so arbitrary binary input cannot balloon memory.
        let n = input
            .by_ref()
            .take(4096)
            .read_line(line)
            .map_err(|_| corrupt("unreadable header"))?;
        if n == 0 {
            return Err(corrupt("unexpected end of header"));
        }
        Ok(())
    };

    next_line(&mut input, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(corrupt("missing ply magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut version: Option<String> = None;
    let mut format_ok = false;
    loop {
        next_line(&mut input, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", ..] => return Err(corrupt("only binary_little_endian 1.0 is supported")),
            ["comment", key, v] if *key == VERSION_COMMENT => version = Some(v.to_string()),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| corrupt("bad vertex count"))?);
            }
            ["element", ..] => return Err(corrupt("unexpected element")),
            ["property", ty, name] => {
                let ty = match *ty {
                    "float" | "float32" => Scalar::F32,
                    "double" | "float64" => Scalar::F64,
                    other => return Err(corrupt(&format!("unsupported property type {other}"))),
                };
                props.push((name.to_string(), ty));
            }
            _ => return Err(corrupt(&format!("unrecognised header line {:?}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(corrupt("missing format line"));
    }
    if let Some(v) = &version {
        if v.parse::<u32>().ok() != Some(CLOUD_FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: CLOUD_FORMAT_VERSION,
                found: v.clone(),
            });
        }
    }
    let count = count.ok_or_else(|| corrupt("missing vertex element"))?;

    let n_rest = props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    if n_rest % 3 != 0 {
        return Err(corrupt("f_rest count not a multiple of 3"));
    }
    let sh_degree = (0..=MAX_SH_DEGREE)
        .find(|&d| sh_coeff_count(d) - 1 == n_rest / 3)
        .ok_or_else(|| corrupt("f_rest count matches no sh degree"))?;
    let expected = property_names(sh_degree);
    let index_of = |name: &str| props.iter().position(|(n, _)| n == name);
    let slots: Vec<usize> = expected
        .iter()
        .map(|n| index_of(n).ok_or_else(|| corrupt(&format!("missing property {n}"))))
        .collect::<Result<_>>()?;

    let row_bytes: usize = props
        .iter()
        .map(|(_, t)| match t {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        })
        .sum();
    let total = count.checked_mul(row_bytes).ok_or_else(|| corrupt("vertex count overflow"))?;
    let mut body = Vec::new();
    input
        .take(total as u64)
        .read_to_end(&mut body)
        .map_err(|_| corrupt("unreadable body"))?;
    if body.len() != total {
        return Err(corrupt("truncated body"));
    }

    let mut splats = Vec::with_capacity(count);
    let mut row = vec![0.0; props.len()];
    let n_coeffs = sh_coeff_count(sh_degree);
    for rec in body.chunks_exact(row_bytes) {
        let mut off = 0;
        for (slot, (_, ty)) in row.iter_mut().zip(&props) {
            *slot = match ty {
                Scalar::F32 => {
                    let v = f32::from_le_bytes(rec[off..off + 4].try_into().unwrap());
                    off += 4;
                    f64::from(v)
                }
                Scalar::F64 => {
                    let v = f64::from_le_bytes(rec[off..off + 8].try_into().unwrap());
                    off += 8;
                    v
                }
            };
        }
        let v: Vec<f64> = slots.iter().map(|&i| row[i]).collect();
        let mut sh = vec![[0.0; 3]; n_coeffs];
        sh[0] = [v[11], v[12], v[13]];
        let rest = n_coeffs - 1;
        for k in 0..rest {
            sh[k + 1] = [v[14 + k], v[14 + rest + k], v[14 + 2 * rest + k]];
        }
        splats.push(Splat {
            mean: [v[0], v[1], v[2]],
            log_scale: [v[3], v[4], v[5]],
            rotation: [v[6], v[7], v[8], v[9]],
            opacity_logit: v[10],
            sh,
        });
    }
    Ok(GaussianCloud { sh_degree, splats })
}
