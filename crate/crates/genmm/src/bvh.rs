//! BVH reading and writing.
//!
//! Parsing is two-phase: `parse_bvh` turns text into a faithful
//! `BvhDocument` (hierarchy, channel declarations, raw float rows) and
//! reports lexical problems with line and column; `to_world_motion`
//! interprets the document against this crate's conventions and
//! reports semantic problems.
//!
//! Conventions: rotation channels are Euler angles in degrees and
//! compose in their declared order; the root's translation comes from
//! its position channels and its rest offset is ignored, both here and
//! in forward kinematics.  The writer always emits position + ZYX
//! rotation channels on the root, ZYX on every other joint, and six
//! decimal places, so identical inputs serialize to identical bytes.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::math::{self, Axis, Quat, Vec3};
use crate::motion::WorldMotion;
use crate::skeleton::{detect_foot_joints, Joint, Skeleton};

/// One of the six channel kinds a BVH joint may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    XPosition,
    YPosition,
    ZPosition,
    XRotation,
    YRotation,
    ZRotation,
}

impl Channel {
    fn from_keyword(word: &str) -> Option<Channel> {
        match word.to_ascii_lowercase().as_str() {
            "xposition" => Some(Channel::XPosition),
            "yposition" => Some(Channel::YPosition),
            "zposition" => Some(Channel::ZPosition),
            "xrotation" => Some(Channel::XRotation),
            "yrotation" => Some(Channel::YRotation),
            "zrotation" => Some(Channel::ZRotation),
            _ => None,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            Channel::XPosition => "Xposition",
            Channel::YPosition => "Yposition",
            Channel::ZPosition => "Zposition",
            Channel::XRotation => "Xrotation",
            Channel::YRotation => "Yrotation",
            Channel::ZRotation => "Zrotation",
        }
    }

    fn rotation_axis(self) -> Option<Axis> {
        match self {
            Channel::XRotation => Some(Axis::X),
            Channel::YRotation => Some(Axis::Y),
            Channel::ZRotation => Some(Axis::Z),
            _ => None,
        }
    }
}

/// Joint as declared in the file, in declaration (depth-first) order.
#[derive(Debug, Clone)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
    pub channels: Vec<Channel>,
    pub end_site: Option<Vec3>,
    /// Index of this joint's first value within a motion row.
    pub channel_offset: usize,
}

/// Parsed file: hierarchy plus the raw channel matrix
/// (`frame_count x total_channels`).
#[derive(Debug, Clone)]
pub struct BvhDocument {
    pub joints: Vec<BvhJoint>,
    pub frame_time: f64,
    pub motion: Array2<f64>,
    pub total_channels: usize,
}

impl BvhDocument {
    pub fn frame_count(&self) -> usize {
        self.motion.nrows()
    }
}

/// Result of interpreting a document: validated skeleton, pose track,
/// and any non-fatal oddities that were skipped over.
#[derive(Debug, Clone)]
pub struct MotionImport {
    pub skeleton: Skeleton,
    pub motion: WorldMotion,
    pub fps: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    s: &'a str,
    line: usize,
    col: usize,
}

struct Parser<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    last_line: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Parser<'a> {
        let mut toks = Vec::new();
        let mut last_line = 1;
        for (ln, line) in text.lines().enumerate() {
            last_line = ln + 1;
            let mut start = None;
            for (i, ch) in line.char_indices() {
                if ch.is_whitespace() {
                    if let Some(s) = start.take() {
                        toks.push(Tok {
                            s: &line[s..i],
                            line: ln + 1,
                            col: s + 1,
                        });
                    }
                } else if start.is_none() {
                    start = Some(i);
                }
            }
            if let Some(s) = start {
                toks.push(Tok {
                    s: &line[s..],
                    line: ln + 1,
                    col: s + 1,
                });
            }
        }
        Parser {
            toks,
            pos: 0,
            last_line,
        }
    }

    fn err_at(&self, tok: Tok<'_>, message: String) -> Error {
        Error::BvhParse {
            line: tok.line,
            column: tok.col,
            message,
        }
    }

    fn err_here(&self, message: String) -> Error {
        match self.toks.get(self.pos) {
            Some(t) => self.err_at(*t, message),
            None => Error::BvhParse {
                line: self.last_line,
                column: 1,
                message: format!("{message} (unexpected end of file)"),
            },
        }
    }

    fn peek(&self) -> Option<Tok<'a>> {
        self.toks.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<Tok<'a>> {
        let t = self
            .peek()
            .ok_or_else(|| self.err_here("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<Tok<'a>> {
        let t = self.next().map_err(|_| self.err_here(format!("expected '{word}'")))?;
        if t.s != word {
            return Err(self.err_at(t, format!("expected '{word}', found '{}'", t.s)));
        }
        Ok(t)
    }

    fn f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.s.parse()
            .map_err(|_| self.err_at(t, format!("expected a number, found '{}'", t.s)))
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.s.parse()
            .map_err(|_| self.err_at(t, format!("expected a count, found '{}'", t.s)))
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
}

/// Parses BVH text.  Accepts any channel arrangement the format
/// allows; interpretation limits live in `to_world_motion`.
pub fn parse_bvh(text: &str) -> Result<BvhDocument> {
    let mut p = Parser::new(text);
    p.expect("HIERARCHY")?;

    let mut joints: Vec<BvhJoint> = Vec::new();
    let mut total_channels = 0usize;

    let root_kw = p.next()?;
    if root_kw.s != "ROOT" {
        return Err(p.err_at(root_kw, format!("expected 'ROOT', found '{}'", root_kw.s)));
    }
    parse_joint_block(&mut p, &mut joints, &mut total_channels, None)?;

    let motion_kw = p.next()?;
    if motion_kw.s == "ROOT" {
        return Err(p.err_at(motion_kw, "multiple ROOT blocks are not supported".into()));
    }
    if motion_kw.s != "MOTION" {
        return Err(p.err_at(
            motion_kw,
            format!("expected 'MOTION', found '{}'", motion_kw.s),
        ));
    }

    p.expect("Frames:")?;
    let frame_count = p.usize()?;
    p.expect("Frame")?;
    p.expect("Time:")?;
    let frame_time = p.f64()?;

    let mut motion = Array2::zeros((frame_count, total_channels));
    for i in 0..frame_count {
        for c in 0..total_channels {
            motion[(i, c)] = p.f64().map_err(|e| match e {
                Error::BvhParse { line, column, message } => Error::BvhParse {
                    line,
                    column,
                    message: format!("frame {i}, channel {c}: {message}"),
                },
                other => other,
            })?;
        }
    }
    if let Some(t) = p.peek() {
        return Err(p.err_at(t, format!("unexpected trailing data '{}'", t.s)));
    }

    Ok(BvhDocument {
        joints,
        frame_time,
        motion,
        total_channels,
    })
}

/// Parses `<name> { OFFSET ... CHANNELS ... (JOINT | End Site)* }`.
/// The keyword (`ROOT`/`JOINT`) has already been consumed.
fn parse_joint_block(
    p: &mut Parser<'_>,
    joints: &mut Vec<BvhJoint>,
    total_channels: &mut usize,
    parent: Option<usize>,
) -> Result<()> {
    let name_tok = p.next()?;
    if name_tok.s == "{" {
        return Err(p.err_at(name_tok, "missing joint name".into()));
    }
    let index = joints.len();
    joints.push(BvhJoint {
        name: name_tok.s.to_string(),
        parent,
        offset: [0.0; 3],
        channels: Vec::new(),
        end_site: None,
        channel_offset: 0,
    });

    p.expect("{")?;
    let mut saw_offset = false;
    loop {
        let t = p.next()?;
        match t.s {
            "OFFSET" => {
                joints[index].offset = p.vec3()?;
                saw_offset = true;
            }
            "CHANNELS" => {
                let n = p.usize()?;
                joints[index].channel_offset = *total_channels;
                for _ in 0..n {
                    let ct = p.next()?;
                    let ch = Channel::from_keyword(ct.s).ok_or_else(|| {
                        p.err_at(ct, format!("unknown channel '{}'", ct.s))
                    })?;
                    joints[index].channels.push(ch);
                }
                *total_channels += n;
            }
            "JOINT" => {
                parse_joint_block(p, joints, total_channels, Some(index))?;
            }
            "End" => {
                p.expect("Site")?;
                p.expect("{")?;
                p.expect("OFFSET")?;
                joints[index].end_site = Some(p.vec3()?);
                p.expect("}")?;
            }
            "}" => break,
            other => {
                return Err(p.err_at(
                    t,
                    format!("expected OFFSET, CHANNELS, JOINT, End, or '}}', found '{other}'"),
                ));
            }
        }
    }
    if !saw_offset {
        return Err(p.err_here(format!("joint '{}' has no OFFSET", joints[index].name)));
    }
    Ok(())
}

/// Interprets a parsed document: builds the skeleton (feet detected by
/// name), composes per-frame rotations, and pulls the root translation
/// from its position channels.  Position channels on non-root joints
/// are skipped with a warning rather than an error.
pub fn to_world_motion(doc: &BvhDocument) -> Result<MotionImport> {
    if doc.frame_count() == 0 {
        return Err(Error::BvhSemantic("document has no motion frames".into()));
    }
    if doc.frame_time <= 0.0 {
        return Err(Error::BvhSemantic(format!(
            "frame time {} is not positive",
            doc.frame_time
        )));
    }

    let joints: Vec<Joint> = doc
        .joints
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            parent: j.parent,
            offset: j.offset,
            end_site: j.end_site,
        })
        .collect();
    let feet = detect_foot_joints(&joints);
    let skeleton = Skeleton::new(joints, feet)
        .map_err(|e| Error::BvhSemantic(format!("invalid hierarchy: {e}")))?;

    let mut warnings = Vec::new();
    for (k, j) in doc.joints.iter().enumerate() {
        let ignored = j
            .channels
            .iter()
            .filter(|c| c.rotation_axis().is_none())
            .count();
        if k != 0 && ignored > 0 {
            warnings.push(format!(
                "joint '{}': ignoring {ignored} position channel(s)",
                j.name
            ));
        }
    }

    let frames = doc.frame_count();
    let mut root_positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    for i in 0..frames {
        let row = doc.motion.row(i);
        let mut frame = Vec::with_capacity(doc.joints.len());
        for (k, j) in doc.joints.iter().enumerate() {
            let mut pos = [0.0; 3];
            let mut q = Quat::IDENTITY;
            for (slot, ch) in j.channels.iter().enumerate() {
                let value = row[j.channel_offset + slot];
                match ch {
                    Channel::XPosition => pos[0] = value,
                    Channel::YPosition => pos[1] = value,
                    Channel::ZPosition => pos[2] = value,
                    rot => {
                        let axis = rot.rotation_axis().expect("rotation channel");
                        q = q * Quat::from_axis_angle_deg(axis, value);
                    }
                }
            }
            if k == 0 {
                root_positions.push(pos);
            }
            frame.push(q.canonicalized());
        }
        rotations.push(frame);
    }

    Ok(MotionImport {
        skeleton,
        motion: WorldMotion {
            root_positions,
            rotations,
        },
        fps: 1.0 / doc.frame_time,
        warnings,
    })
}

/// Extracts ZYX Euler angles (degrees) such that
/// `Rz(z) * Ry(y) * Rx(x)` reproduces the rotation.  At the gimbal
/// singularity (`|sin y| ~ 1`) x is pinned to zero and the remaining
/// freedom folds into z.
fn quat_to_euler_zyx_deg(q: Quat) -> [f64; 3] {
    let m = q.to_matrix();
    let sy = (-m[2][0]).clamp(-1.0, 1.0);
    let (x, y, z);
    if sy.abs() < 1.0 - 1e-10 {
        y = sy.asin();
        z = m[1][0].atan2(m[0][0]);
        x = m[2][1].atan2(m[2][2]);
    } else {
        y = sy.asin();
        z = (-m[0][1]).atan2(m[1][1]);
        x = 0.0;
    }
    [
        math::wrap_deg(z.to_degrees()),
        math::wrap_deg(y.to_degrees()),
        math::wrap_deg(x.to_degrees()),
    ]
}

fn push_f64(out: &mut String, v: f64) {
    use std::fmt::Write;
    // Values that round to zero print without a sign, so text that
    // came from this writer re-serializes byte-identically even when
    // a tiny magnitude flips sign through an angle round trip.
    let v = if v.abs() < 5e-7 { 0.0 } else { v };
    write!(out, "{v:.6}").expect("write to String");
}

/// Writes a canonical BVH: tab indentation, position + ZYX channels on
/// the root, ZYX on other joints, End Site on every leaf, six decimal
/// places, `\n` line endings.  Output depends only on the arguments,
/// so equal inputs produce byte-identical text.
pub fn serialize_bvh(s: &Skeleton, w: &WorldMotion, fps: f64) -> Result<String> {
    w.validate(s)?;
    if fps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "fps {fps} is not positive"
        )));
    }

    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    let mut order = Vec::with_capacity(s.joint_count());
    write_joint(s, 0, 0, &mut out, &mut order);

    out.push_str("MOTION\n");
    out.push_str(&format!("Frames: {}\n", w.frames()));
    out.push_str(&format!("Frame Time: {:.8}\n", 1.0 / fps));

    for i in 0..w.frames() {
        let mut first = true;
        for &k in &order {
            if k == 0 {
                for d in 0..3 {
                    if !first {
                        out.push(' ');
                    }
                    push_f64(&mut out, w.root_positions[i][d]);
                    first = false;
                }
            }
            let e = quat_to_euler_zyx_deg(w.rotations[i][k]);
            for v in e {
                if !first {
                    out.push(' ');
                }
                push_f64(&mut out, v);
                first = false;
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn write_joint(s: &Skeleton, k: usize, depth: usize, out: &mut String, order: &mut Vec<usize>) {
    let indent = "\t".repeat(depth);
    let j = &s.joints()[k];
    if k == 0 {
        out.push_str(&format!("{indent}ROOT {}\n", j.name));
    } else {
        out.push_str(&format!("{indent}JOINT {}\n", j.name));
    }
    out.push_str(&format!("{indent}{{\n"));
    let inner = "\t".repeat(depth + 1);
    out.push_str(&format!(
        "{inner}OFFSET {:.6} {:.6} {:.6}\n",
        j.offset[0], j.offset[1], j.offset[2]
    ));
    if k == 0 {
        out.push_str(&format!(
            "{inner}CHANNELS 6 Xposition Yposition Zposition {} {} {}\n",
            Channel::ZRotation.keyword(),
            Channel::YRotation.keyword(),
            Channel::XRotation.keyword()
        ));
    } else {
        out.push_str(&format!(
            "{inner}CHANNELS 3 {} {} {}\n",
            Channel::ZRotation.keyword(),
            Channel::YRotation.keyword(),
            Channel::XRotation.keyword()
        ));
    }
    order.push(k);

    let children = s.children_of(k);
    if children.is_empty() {
        let site = j.end_site.unwrap_or([0.0; 3]);
        out.push_str(&format!("{inner}End Site\n"));
        out.push_str(&format!("{inner}{{\n"));
        out.push_str(&format!(
            "{inner}\tOFFSET {:.6} {:.6} {:.6}\n",
            site[0], site[1], site[2]
        ));
        out.push_str(&format!("{inner}}}\n"));
    } else {
        for c in children {
            write_joint(s, c, depth + 1, out, order);
        }
    }
    out.push_str(&format!("{indent}}}\n"));
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "HIERARCHY
ROOT Hips
{
\tOFFSET 0.0 0.9 0.0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
\tJOINT LeftFoot
\t{
\t\tOFFSET 0.1 -0.9 0.0
\t\tCHANNELS 3 Zrotation Yrotation Xrotation
\t\tEnd Site
\t\t{
\t\t\tOFFSET 0.0 -0.05 0.1
\t\t}
\t}
}
MOTION
Frames: 2
Frame Time: 0.03333333
0.0 0.9 0.0 0.0 0.0 0.0 10.0 0.0 0.0
0.1 0.9 0.0 0.0 45.0 0.0 10.0 0.0 0.0
";

    #[test]
    fn parses_hierarchy_and_motion() {
        let doc = parse_bvh(SMALL).unwrap();
        assert_eq!(doc.joints.len(), 2);
        assert_eq!(doc.joints[0].name, "Hips");
        assert_eq!(doc.joints[1].parent, Some(0));
        assert_eq!(doc.joints[1].channel_offset, 6);
        assert_eq!(doc.total_channels, 9);
        assert_eq!(doc.frame_count(), 2);
        assert_eq!(doc.joints[1].end_site, Some([0.0, -0.05, 0.1]));
        assert_eq!(doc.motion[(1, 4)], 45.0);
    }

    #[test]
    fn error_carries_line_and_column() {
        let bad = SMALL.replace("CHANNELS 3", "CHANNELS three");
        match parse_bvh(&bad) {
            Err(Error::BvhParse { line, column, .. }) => {
                assert_eq!(line, 9);
                assert!(column > 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_motion_reports_frame() {
        let truncated = SMALL.rsplit_once('\n').unwrap().0.rsplit_once('\n').unwrap().0;
        match parse_bvh(truncated) {
            Err(Error::BvhParse { message, .. }) => {
                assert!(message.contains("frame 1"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn import_builds_skeleton_and_track() {
        let doc = parse_bvh(SMALL).unwrap();
        let import = to_world_motion(&doc).unwrap();
        assert_eq!(import.skeleton.joint_count(), 2);
        assert_eq!(import.skeleton.foot_joints(), &[1]);
        assert!((import.fps - 30.0).abs() < 1e-4);
        assert!(import.warnings.is_empty());
        assert_eq!(import.motion.root_positions[1], [0.1, 0.9, 0.0]);
        // Frame 1 yaws the root 45 degrees about Y.
        let q = import.motion.rotations[1][0];
        let expect = Quat::from_axis_angle_deg(Axis::Y, 45.0);
        assert!(q.geodesic_angle(expect) < 1e-12);
    }

    #[test]
    fn non_root_position_channels_warn() {
        let odd = SMALL
            .replace(
                "CHANNELS 3 Zrotation Yrotation Xrotation",
                "CHANNELS 4 Xposition Zrotation Yrotation Xrotation",
            )
            .replace("10.0 0.0 0.0", "5.0 10.0 0.0 0.0");
        let import = to_world_motion(&parse_bvh(&odd).unwrap()).unwrap();
        assert_eq!(import.warnings.len(), 1);
        assert!(import.warnings[0].contains("LeftFoot"));
    }

    #[test]
    fn zero_frame_time_is_semantic_error() {
        let bad = SMALL.replace("Frame Time: 0.03333333", "Frame Time: 0");
        let doc = parse_bvh(&bad).unwrap();
        assert!(matches!(to_world_motion(&doc), Err(Error::BvhSemantic(_))));
    }

    #[test]
    fn euler_extraction_handles_gimbal() {
        let q = Quat::from_axis_angle_deg(Axis::Y, 90.0)
            * Quat::from_axis_angle_deg(Axis::Z, 25.0);
        let e = quat_to_euler_zyx_deg(q);
        let back = Quat::from_axis_angle_deg(Axis::Z, e[0])
            * Quat::from_axis_angle_deg(Axis::Y, e[1])
            * Quat::from_axis_angle_deg(Axis::X, e[2]);
        assert!(q.geodesic_angle(back) < 1e-9, "{e:?}");
    }

    #[test]
    fn serializer_round_trips_values() {
        let doc = parse_bvh(SMALL).unwrap();
        let import = to_world_motion(&doc).unwrap();
        let text = serialize_bvh(&import.skeleton, &import.motion, import.fps).unwrap();
        let again = to_world_motion(&parse_bvh(&text).unwrap()).unwrap();
        for i in 0..import.motion.frames() {
            for d in 0..3 {
                let a = import.motion.root_positions[i][d];
                let b = again.motion.root_positions[i][d];
                assert!((a - b).abs() < 1e-5);
            }
            for k in 0..import.skeleton.joint_count() {
                let angle = import.motion.rotations[i][k]
                    .geodesic_angle(again.motion.rotations[i][k]);
                assert!(angle < 1e-5);
            }
        }
        // A second write of the same data is byte-identical.
        let text2 = serialize_bvh(&import.skeleton, &import.motion, import.fps).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn multiple_roots_are_rejected() {
        let two = SMALL.replace(
            "MOTION",
            "ROOT Other\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Yrotation Xrotation\nEnd Site\n{\nOFFSET 0 0 0\n}\n}\nMOTION",
        );
        assert!(matches!(parse_bvh(&two), Err(Error::BvhParse { .. })));
    }
}
