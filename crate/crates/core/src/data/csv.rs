use std::path::Path;

use crate::data::{parse_bvh, write_bvh, BvhOptions, MotionClip};
use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::rotation::Rot6D;
use crate::skeleton::Skeleton;

fn header(joints: usize) -> String {
    let mut cols = vec![
        "frame".to_string(),
        "root_tx".into(),
        "root_ty".into(),
        "root_tz".into(),
    ];
    for j in 0..joints {
        cols.extend((0..6).map(|r| format!("j{j}_r{r}")));
    }
    cols.join(",")
}

/// One row per frame: index, root translation, then six 6D values per joint.
pub fn write_csv(clip: &MotionClip) -> String {
    let mut out = header(clip.skeleton.num_joints());
    out.push('\n');
    for (i, f) in clip.frames.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(f.root.iter().map(|v| v.to_string()));
        row.extend(f.rotations.iter().flat_map(|r| r.0).map(|v| v.to_string()));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str, skeleton: &Skeleton, fps: f64) -> Result<MotionClip> {
    let j = skeleton.num_joints();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(Error::Csv {
        line: 1,
        msg: "missing header".into(),
    })?;
    if head.trim() != header(j) {
        return Err(Error::Csv {
            line: 1,
            msg: format!("header does not match a {j}-joint skeleton"),
        });
    }
    let cols = 4 + 6 * j;
    let mut frames = Vec::new();
    for (i, line) in lines {
        let values = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| Error::Csv {
                    line: i + 1,
                    msg: format!("cannot parse `{t}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != cols {
            return Err(Error::Csv {
                line: i + 1,
                msg: format!("expected {cols} columns, got {}", values.len()),
            });
        }
        let rotations = values[4..]
            .chunks_exact(6)
            .map(|c| Rot6D([c[0], c[1], c[2], c[3], c[4], c[5]]))
            .collect();
        frames.push(Pose {
            rotations,
            root: [values[1], values[2], values[3]],
        });
    }
    MotionClip::new(skeleton.clone(), frames, fps)
}

/// Loads a `.bvh` file, or a `.csv` file on `skeleton` at `fps`. BVH joints
/// are put in `skeleton`'s order when the two share names and hierarchy.
pub fn read_motion(path: impl AsRef<Path>, skeleton: &Skeleton, fps: f64, opts: BvhOptions) -> Result<MotionClip> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("bvh") => {
            let clip = parse_bvh(&text, opts)?;
            Ok(clip.reorder_like(skeleton).unwrap_or(clip))
        }
        Some(e) if e.eq_ignore_ascii_case("csv") => parse_csv(&text, skeleton, fps),
        _ => Err(Error::InvalidArgument(format!(
            "unsupported motion file `{}`",
            path.display()
        ))),
    }
}

/// Writes `.bvh` or `.csv` according to the extension of `path`.
pub fn write_motion(path: impl AsRef<Path>, clip: &MotionClip, opts: BvhOptions) -> Result<()> {
    let path = path.as_ref();
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("bvh") => write_bvh(clip, opts)?,
        Some(e) if e.eq_ignore_ascii_case("csv") => write_csv(clip),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported motion file `{}`",
                path.display()
            )))
        }
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};

    #[test]
    fn round_trip_is_exact() {
        let clip = synth_dataset(
            &SynthConfig {
                length: 5,
                ..SynthConfig::toy(3)
            },
            1,
        )
        .unwrap()
        .remove(0);
        let text = write_csv(&clip);
        assert!(text.starts_with("frame,root_tx,root_ty,root_tz,j0_r0,j0_r1"));
        let back = parse_csv(&text, &clip.skeleton, clip.fps).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let clip = synth_dataset(
            &SynthConfig {
                length: 3,
                ..SynthConfig::toy(3)
            },
            1,
        )
        .unwrap()
        .remove(0);
        let text = write_csv(&clip).replacen(",0.", ",x", 1);
        assert!(matches!(
            parse_csv(&text, &clip.skeleton, 30.0),
            Err(Error::Csv { line: 2, .. })
        ));
        assert!(parse_csv("frame\n", &clip.skeleton, 30.0).is_err());
    }
}
