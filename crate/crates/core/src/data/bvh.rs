use std::fmt::Write as _;
use std::path::Path;

use crate::data::MotionClip;
use crate::error::{BvhErrorKind, Error, Result};
use crate::kinematics::Pose;
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix, RotMatrix};
use crate::skeleton::{Channel, Joint, Skeleton};

/// Parsing and writing options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvhOptions {
    /// Multiplier from file units to meters (0.01 for centimeter files).
    pub unit_scale: f64,
}

impl Default for BvhOptions {
    fn default() -> Self {
        BvhOptions { unit_scale: 1.0 }
    }
}

impl BvhOptions {
    pub fn centimeters() -> Self {
        BvhOptions { unit_scale: 0.01 }
    }
}

fn err(line: usize, kind: BvhErrorKind) -> Error {
    Error::Bvh { line, kind }
}

struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| err(self.last_line, BvhErrorKind::UnexpectedEof))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &str) -> Result<usize> {
        let (line, t) = self.next()?;
        if t != want {
            return Err(err(line, BvhErrorKind::UnexpectedToken(t.to_string())));
        }
        Ok(line)
    }

    fn number(&mut self) -> Result<f64> {
        let (line, t) = self.next()?;
        t.parse().map_err(|_| err(line, BvhErrorKind::BadNumber(t.to_string())))
    }
}

struct Hierarchy {
    joints: Vec<Joint>,
}

fn parse_joint(tok: &mut Tokens, h: &mut Hierarchy, parent: Option<usize>, scale: f64) -> Result<()> {
    let (_, name) = tok.next()?;
    tok.expect("{")?;
    let index = h.joints.len();
    h.joints.push(Joint {
        name: name.to_string(),
        parent,
        offset: [0.0; 3],
        channels: Vec::new(),
        end_site: None,
    });
    loop {
        let (line, t) = tok.next()?;
        match t {
            "OFFSET" => {
                let o = [tok.number()? * scale, tok.number()? * scale, tok.number()? * scale];
                h.joints[index].offset = o;
            }
            "CHANNELS" => {
                let (nl, nt) = tok.next()?;
                let n: usize = nt
                    .parse()
                    .map_err(|_| err(nl, BvhErrorKind::BadNumber(nt.to_string())))?;
                let mut channels = Vec::with_capacity(n);
                for _ in 0..n {
                    let (cl, ct) = tok.next()?;
                    match Channel::parse(ct) {
                        Some(c) => channels.push(c),
                        None if ct == "}" || ct == "JOINT" || ct == "OFFSET" || ct == "End" => {
                            return Err(err(
                                cl,
                                BvhErrorKind::ChannelCountMismatch {
                                    expected: n,
                                    got: channels.len(),
                                },
                            ))
                        }
                        None => return Err(err(cl, BvhErrorKind::UnknownChannel(ct.to_string()))),
                    }
                }
                let rot = channels.iter().filter(|c| c.is_rotation()).count();
                if rot != 0 && rot != 3 {
                    return Err(err(line, BvhErrorKind::ChannelCountMismatch { expected: 3, got: rot }));
                }
                h.joints[index].channels = channels;
            }
            "JOINT" => parse_joint(tok, h, Some(index), scale)?,
            "End" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                let o = [tok.number()? * scale, tok.number()? * scale, tok.number()? * scale];
                tok.expect("}")?;
                h.joints[index].end_site = Some(o);
            }
            "}" => return Ok(()),
            other => return Err(err(line, BvhErrorKind::UnexpectedToken(other.to_string()))),
        }
    }
}

/// Parses BVH text. Euler channels are converted to 6D rotations; position
/// channels are read only on the root (as its translation).
pub fn parse_bvh(text: &str, opts: BvhOptions) -> Result<MotionClip> {
    let lines: Vec<&str> = text.lines().collect();
    let motion_line = lines.iter().position(|l| l.trim() == "MOTION");
    let hierarchy_end = motion_line.unwrap_or(lines.len());
    let toks: Vec<(usize, &str)> = lines[..hierarchy_end]
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    let mut tok = Tokens {
        toks,
        pos: 0,
        last_line: hierarchy_end,
    };
    match tok.next() {
        Ok((_, "HIERARCHY")) => {}
        Ok((line, t)) => return Err(err(line, BvhErrorKind::UnexpectedToken(t.to_string()))),
        Err(_) => return Err(err(1, BvhErrorKind::MissingSection("HIERARCHY"))),
    }
    tok.expect("ROOT")?;
    let mut h = Hierarchy { joints: Vec::new() };
    parse_joint(&mut tok, &mut h, None, opts.unit_scale)?;
    if let Ok((line, t)) = tok.next() {
        return Err(err(line, BvhErrorKind::UnexpectedToken(t.to_string())));
    }
    let Some(motion_line) = motion_line else {
        return Err(err(lines.len() + 1, BvhErrorKind::MissingSection("MOTION")));
    };
    let skeleton = Skeleton::new(h.joints)?;

    let mut rest = lines
        .iter()
        .enumerate()
        .skip(motion_line + 1)
        .filter(|(_, l)| !l.trim().is_empty());
    let eof = lines.len() + 1;
    let (fl, frames_line) = rest.next().ok_or_else(|| err(eof, BvhErrorKind::UnexpectedEof))?;
    let declared: usize = match frames_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["Frames:", n] => n
            .parse()
            .map_err(|_| err(fl + 1, BvhErrorKind::BadNumber(n.to_string())))?,
        _ => {
            return Err(err(
                fl + 1,
                BvhErrorKind::UnexpectedToken(frames_line.trim().to_string()),
            ))
        }
    };
    let (tl, time_line) = rest.next().ok_or_else(|| err(eof, BvhErrorKind::UnexpectedEof))?;
    let frame_time: f64 = match time_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["Frame", "Time:", v] => v
            .parse()
            .map_err(|_| err(tl + 1, BvhErrorKind::BadNumber(v.to_string())))?,
        _ => return Err(err(tl + 1, BvhErrorKind::UnexpectedToken(time_line.trim().to_string()))),
    };
    if !(frame_time.is_finite() && frame_time > 0.0) {
        return Err(err(tl + 1, BvhErrorKind::BadNumber(frame_time.to_string())));
    }

    let total: usize = skeleton.joints().iter().map(|j| j.channels.len()).sum();
    let mut frames = Vec::with_capacity(declared);
    let mut last = tl + 1;
    for (i, line) in rest {
        last = i + 1;
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(i + 1, BvhErrorKind::BadNumber(t.to_string())))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != total {
            return Err(err(
                i + 1,
                BvhErrorKind::ChannelCountMismatch {
                    expected: total,
                    got: values.len(),
                },
            ));
        }
        frames.push(decode_frame(&skeleton, &values, opts.unit_scale).map_err(|e| match e {
            Error::NotRotation(m) | Error::DegenerateRotation(m) => err(i + 1, BvhErrorKind::BadNumber(m)),
            e => e,
        })?);
    }
    if frames.len() != declared {
        return Err(err(
            last,
            BvhErrorKind::FrameCountMismatch {
                expected: declared,
                got: frames.len(),
            },
        ));
    }
    MotionClip::new(skeleton, frames, 1.0 / frame_time)
}

fn decode_frame(skeleton: &Skeleton, values: &[f64], scale: f64) -> Result<Pose> {
    let mut it = values.iter();
    let mut pose = Pose::identity(skeleton.num_joints());
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let mut order = Vec::with_capacity(3);
        let mut angles = Vec::with_capacity(3);
        for &c in &joint.channels {
            let v = *it.next().expect("row length checked");
            if c.is_rotation() {
                order.push(c);
                angles.push(v);
            } else if j == 0 {
                pose.root[c.axis()] = v * scale;
            }
        }
        if order.len() == 3 {
            let m = RotMatrix::from_euler([order[0], order[1], order[2]], [angles[0], angles[1], angles[2]]);
            pose.rotations[j] = matrix_to_rot6d(&m)?;
        }
    }
    Ok(pose)
}

pub fn read_bvh(path: impl AsRef<Path>, opts: BvhOptions) -> Result<MotionClip> {
    parse_bvh(&std::fs::read_to_string(path)?, opts)
}

fn fmt3(v: [f64; 3], scale: f64) -> String {
    format!("{} {} {}", v[0] / scale, v[1] / scale, v[2] / scale)
}

fn write_joint(out: &mut String, sk: &Skeleton, j: usize, depth: usize, scale: f64, order: &mut Vec<usize>) {
    order.push(j);
    let joint = &sk.joints()[j];
    let ind = "\t".repeat(depth);
    let kw = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{ind}{kw} {}", joint.name);
    let _ = writeln!(out, "{ind}{{");
    let _ = writeln!(out, "{ind}\tOFFSET {}", fmt3(joint.offset, scale));
    let chans: Vec<&str> = joint.channels.iter().map(|c| c.token()).collect();
    let _ = writeln!(out, "{ind}\tCHANNELS {} {}", chans.len(), chans.join(" "));
    for c in sk.children(j) {
        write_joint(out, sk, c, depth + 1, scale, order);
    }
    if let Some(e) = joint.end_site {
        let _ = writeln!(out, "{ind}\tEnd Site");
        let _ = writeln!(out, "{ind}\t{{");
        let _ = writeln!(out, "{ind}\t\tOFFSET {}", fmt3(e, scale));
        let _ = writeln!(out, "{ind}\t}}");
    }
    let _ = writeln!(out, "{ind}}}");
}

/// Serializes a clip; rotations become Euler angles in each joint's channel order.
pub fn write_bvh(clip: &MotionClip, opts: BvhOptions) -> Result<String> {
    let sk = &clip.skeleton;
    let scale = opts.unit_scale;
    let mut out = String::from("HIERARCHY\n");
    // motion rows follow the declaration order of the hierarchy
    let mut order = Vec::with_capacity(sk.num_joints());
    write_joint(&mut out, sk, 0, 0, scale, &mut order);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {}", clip.len(), 1.0 / clip.fps);
    for pose in &clip.frames {
        let mut row: Vec<String> = Vec::new();
        for &j in &order {
            let joint = &sk.joints()[j];
            let rot: Vec<Channel> = joint.channels.iter().copied().filter(|c| c.is_rotation()).collect();
            let euler = if rot.len() == 3 {
                rot6d_to_matrix(&pose.rotations[j])?.to_euler([rot[0], rot[1], rot[2]])?
            } else {
                [0.0; 3]
            };
            let mut r = 0;
            for &c in &joint.channels {
                let v = if c.is_rotation() {
                    r += 1;
                    euler[r - 1]
                } else if j == 0 {
                    pose.root[c.axis()] / scale
                } else {
                    joint.offset[c.axis()] / scale
                };
                // normalize -0 so identity rotations print as plain zeros
                row.push(format!("{}", v + 0.0));
            }
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "HIERARCHY
ROOT hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT chest
  {
    OFFSET 0 1 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 2 0
    }
  }
}
MOTION
Frames: 5
Frame Time: 0.04
0 90 0 0 0 0 0 0 0
1 90 0 10 0 0 0 0 30
2 90 0 20 5 0 0 45 0
3 90 0 30 0 -40 90 0 0
4 90 0 0 0 0 -10 20 30
";

    #[test]
    fn fixture_values() {
        let clip = parse_bvh(FIXTURE, BvhOptions::centimeters()).unwrap();
        let off = clip.skeleton.joints()[1].offset;
        assert!((off[1] - 0.01).abs() < 1e-15 && off[0] == 0.0 && off[2] == 0.0);
        assert_eq!(clip.len(), 5);
        assert!((clip.fps - 25.0).abs() < 1e-9);
        assert!((clip.frames[1].root[0] - 0.01).abs() < 1e-15);
        assert!((clip.frames[1].root[1] - 0.9).abs() < 1e-15);
        let m = rot6d_to_matrix(&clip.frames[1].rotations[0]).unwrap();
        let want = RotMatrix::rz(10f64.to_radians());
        for (a, b) in m.flat().iter().zip(want.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip() {
        let clip = parse_bvh(FIXTURE, BvhOptions::centimeters()).unwrap();
        let text = write_bvh(&clip, BvhOptions::centimeters()).unwrap();
        let back = parse_bvh(&text, BvhOptions::centimeters()).unwrap();
        for (a, b) in back.skeleton.joints().iter().zip(clip.skeleton.joints()) {
            assert_eq!((&a.name, a.parent, &a.channels), (&b.name, b.parent, &b.channels));
            for k in 0..3 {
                assert!((a.offset[k] - b.offset[k]).abs() < 1e-12);
            }
        }
        assert_eq!(back.len(), clip.len());
        assert!((back.fps - clip.fps).abs() < 1e-9);
        for (fa, fb) in back.frames.iter().zip(&clip.frames) {
            for (ra, rb) in fa.rotations.iter().zip(&fb.rotations) {
                for k in 0..6 {
                    assert!((ra.0[k] - rb.0[k]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn identity_writes_zero_euler() {
        let sk = Skeleton::chain(2, 1.0).unwrap();
        let clip = MotionClip::new(sk, vec![Pose::identity(2)], 30.0).unwrap();
        let text = write_bvh(&clip, BvhOptions::default()).unwrap();
        assert_eq!(text.lines().last().unwrap(), "0 0 0 0 0 0 0 0 0");
    }

    #[test]
    fn diagnostics() {
        let no_motion = FIXTURE.split("MOTION").next().unwrap();
        assert!(matches!(
            parse_bvh(no_motion, BvhOptions::default()),
            Err(Error::Bvh {
                kind: BvhErrorKind::MissingSection("MOTION"),
                ..
            })
        ));
        let bad_channel = FIXTURE.replace("CHANNELS 3 Zrotation", "CHANNELS 3 Wrotation");
        assert!(matches!(
            parse_bvh(&bad_channel, BvhOptions::default()),
            Err(Error::Bvh {
                line: 9,
                kind: BvhErrorKind::UnknownChannel(_)
            })
        ));
        let short_row = FIXTURE.replace("1 90 0 10 0 0 0 0 30", "1 90 0 10 0 0 0 0");
        assert!(matches!(
            parse_bvh(&short_row, BvhOptions::default()),
            Err(Error::Bvh {
                line: 20,
                kind: BvhErrorKind::ChannelCountMismatch { expected: 9, got: 8 }
            })
        ));
        let frames = FIXTURE.replace("Frames: 5", "Frames: 6");
        assert!(matches!(
            parse_bvh(&frames, BvhOptions::default()),
            Err(Error::Bvh {
                kind: BvhErrorKind::FrameCountMismatch { expected: 6, got: 5 },
                ..
            })
        ));
    }
}
