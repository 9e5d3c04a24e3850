//! Dataset directory layout.
//!
//! `manifest.tsv` holds one line per pair:
//!
//! ```text
//! id  img_a  img_b  r00 r01 r02 r10 r11 r12 r20 r21 r22  tx ty tz  f cx cy
//! ```
//!
//! Images are binary 8-bit PGM (P5) files. Per-pair sidecars carry ground
//! truth: `pair_<id>_kp_a.tsv` / `_kp_b.tsv` with one `x<TAB>y` line per
//! keypoint, and `pair_<id>_corr.tsv` with one `i<TAB>j` index pair per
//! co-visible point. All floating-point text uses Rust's shortest
//! round-trip formatting, so a write → read → write cycle is byte-stable.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use super::{GrayImage, PairSample, SynthError};
use crate::geometry::{Intrinsics, Pose};

fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), SynthError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", img.w, img.h)?;
    out.write_all(&img.pixels)?;
    out.flush()?;
    Ok(())
}

fn read_pgm(path: &Path) -> Result<GrayImage, SynthError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                SynthError::Format(format!("missing image file {}", path.display()))
            } else {
                SynthError::Io(e)
            }
        })?
        .read_to_end(&mut bytes)?;
    // Header: "P5\n{w} {h}\n255\n".
    let header_err = |msg: &str| SynthError::Format(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String, SynthError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(SynthError::Format(format!(
                "{}: truncated header at offset {start}",
                path.display()
            )));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token(&bytes)? != "P5" {
        return Err(header_err("not a binary PGM (P5) file"));
    }
    let w: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| header_err("bad width"))?;
    let h: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| header_err("bad height"))?;
    let maxval: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| header_err("bad maxval"))?;
    if maxval != 255 {
        return Err(header_err("maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = w * h;
    if bytes.len() < pos + expected {
        return Err(SynthError::Format(format!(
            "{}: truncated raster at offset {} (have {} of {} bytes)",
            path.display(),
            bytes.len(),
            bytes.len().saturating_sub(pos),
            expected
        )));
    }
    Ok(GrayImage {
        h,
        w,
        pixels: bytes[pos..pos + expected].to_vec(),
    })
}

fn write_keypoints(path: &Path, kps: &[(f64, f64)]) -> Result<(), SynthError> {
    let mut out = BufWriter::new(File::create(path)?);
    for &(x, y) in kps {
        writeln!(out, "{x}\t{y}")?;
    }
    out.flush()?;
    Ok(())
}

fn read_keypoints(path: &Path) -> Result<Vec<(f64, f64)>, SynthError> {
    let text = fs::read_to_string(path)
        .map_err(|_| SynthError::Format(format!("missing sidecar file {}", path.display())))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut cols = line.split('\t');
        let parse = |s: Option<&str>| -> Result<f64, SynthError> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                SynthError::Format(format!("{} line {}: bad keypoint", path.display(), ln + 1))
            })
        };
        out.push((parse(cols.next())?, parse(cols.next())?));
    }
    Ok(out)
}

fn write_correspondences(path: &Path, corr: &[(usize, usize)]) -> Result<(), SynthError> {
    let mut out = BufWriter::new(File::create(path)?);
    for &(i, j) in corr {
        writeln!(out, "{i}\t{j}")?;
    }
    out.flush()?;
    Ok(())
}

fn read_correspondences(path: &Path) -> Result<Vec<(usize, usize)>, SynthError> {
    let text = fs::read_to_string(path)
        .map_err(|_| SynthError::Format(format!("missing sidecar file {}", path.display())))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut cols = line.split('\t');
        let parse = |s: Option<&str>| -> Result<usize, SynthError> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                SynthError::Format(format!(
                    "{} line {}: bad correspondence",
                    path.display(),
                    ln + 1
                ))
            })
        };
        out.push((parse(cols.next())?, parse(cols.next())?));
    }
    Ok(out)
}

fn pair_file_names(id: u64) -> (String, String, String, String, String) {
    (
        format!("pair_{id:06}_a.pgm"),
        format!("pair_{id:06}_b.pgm"),
        format!("pair_{id:06}_kp_a.tsv"),
        format!("pair_{id:06}_kp_b.tsv"),
        format!("pair_{id:06}_corr.tsv"),
    )
}

/// Writes a dataset directory; see the module docs for the layout.
pub fn write_dataset(dir: &Path, samples: &[PairSample]) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.tsv"))?);
    for s in samples {
        let (img_a, img_b, kp_a, kp_b, corr) = pair_file_names(s.id);
        write_pgm(&dir.join(&img_a), &s.image1)?;
        write_pgm(&dir.join(&img_b), &s.image2)?;
        write_keypoints(&dir.join(&kp_a), &s.gt_keypoints1)?;
        write_keypoints(&dir.join(&kp_b), &s.gt_keypoints2)?;
        write_correspondences(&dir.join(&corr), &s.gt_correspondences)?;
        let r = s.gt_pose.rotation();
        let t = s.gt_pose.translation();
        write!(manifest, "{}\t{}\t{}", s.id, img_a, img_b)?;
        for row in 0..3 {
            for col in 0..3 {
                write!(manifest, "\t{}", r[(row, col)])?;
            }
        }
        write!(manifest, "\t{}\t{}\t{}", t.x, t.y, t.z)?;
        writeln!(
            manifest,
            "\t{}\t{}\t{}",
            s.intrinsics.focal, s.intrinsics.cx, s.intrinsics.cy
        )?;
    }
    manifest.flush()?;
    Ok(())
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<PairSample>, SynthError> {
    let manifest_path: PathBuf = dir.join("manifest.tsv");
    let text = fs::read_to_string(&manifest_path).map_err(|_| {
        SynthError::Format(format!("missing manifest file {}", manifest_path.display()))
    })?;
    let mut samples = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 18 {
            return Err(SynthError::Format(format!(
                "manifest line {}: expected 18 columns, found {}",
                ln + 1,
                cols.len()
            )));
        }
        let bad = |what: &str| {
            SynthError::Format(format!("manifest line {}: bad {what}", ln + 1))
        };
        let id: u64 = cols[0].parse().map_err(|_| bad("id"))?;
        let mut floats = [0.0f64; 15];
        for (k, slot) in floats.iter_mut().enumerate() {
            *slot = cols[3 + k].parse().map_err(|_| bad("float field"))?;
        }
        let r = Matrix3::new(
            floats[0], floats[1], floats[2], floats[3], floats[4], floats[5], floats[6],
            floats[7], floats[8],
        );
        let t = Vector3::new(floats[9], floats[10], floats[11]);
        let gt_pose = Pose::new(r, t)
            .map_err(|e| SynthError::Format(format!("manifest line {}: {e}", ln + 1)))?;
        let intrinsics = Intrinsics {
            focal: floats[12],
            cx: floats[13],
            cy: floats[14],
        };
        let image1 = read_pgm(&dir.join(cols[1]))?;
        let image2 = read_pgm(&dir.join(cols[2]))?;
        let (_, _, kp_a, kp_b, corr) = pair_file_names(id);
        let gt_keypoints1 = read_keypoints(&dir.join(kp_a))?;
        let gt_keypoints2 = read_keypoints(&dir.join(kp_b))?;
        let gt_correspondences = read_correspondences(&dir.join(corr))?;
        for &(i, j) in &gt_correspondences {
            if i >= gt_keypoints1.len() || j >= gt_keypoints2.len() {
                return Err(SynthError::Format(format!(
                    "pair {id}: correspondence ({i}, {j}) out of range"
                )));
            }
        }
        samples.push(PairSample {
            id,
            image1,
            image2,
            gt_pose,
            intrinsics,
            gt_keypoints1,
            gt_keypoints2,
            gt_correspondences,
        });
    }
    Ok(samples)
}
