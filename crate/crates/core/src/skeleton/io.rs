//! Sequence and feature CSV files.
//!
//! ```text
//! # fps=30 action=walk subject=synthetic dof=14
//! 0.12,-1.57,...
//! ```
//! Feature files use `dim=<F>` in place of `dof=<n>`.

use std::fmt::Write as _;
use std::path::Path;

use super::{FeatureSequence, FeatureVector, MotionSequence, Pose};
use crate::error::{Error, Result};

struct Header {
    fps: f64,
    action: String,
    subject: String,
    width: usize,
}

fn parse_header(line: &str, width_key: &str) -> Result<Header> {
    let err = |msg: String| Error::Parse { line: 1, msg };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| err("header must start with `#`".into()))?;
    let (mut fps, mut action, mut subject, mut width) = (None, None, None, None);
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field `{token}`")))?;
        match key {
            "fps" => fps = Some(value.parse::<f64>().map_err(|_| err(format!("bad fps `{value}`")))?),
            "action" => action = Some(value.to_string()),
            "subject" => subject = Some(value.to_string()),
            k if k == width_key => {
                width = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| err(format!("bad {width_key} `{value}`")))?,
                )
            }
            _ => return Err(err(format!("unknown header field `{key}`"))),
        }
    }
    let fps = fps.ok_or_else(|| err("missing fps".into()))?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(err("fps must be positive".into()));
    }
    Ok(Header {
        fps,
        action: action.ok_or_else(|| err("missing action".into()))?,
        subject: subject.ok_or_else(|| err("missing subject".into()))?,
        width: width.ok_or_else(|| err(format!("missing {width_key}")))?,
    })
}

fn parse_rows(text: &str, width_key: &str) -> Result<(Header, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
        Some((_, l)) => parse_header(l, width_key)?,
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line: lineno, msg: format!("non-numeric cell `{cell}`") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.width {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} columns, found {}", header.width, row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn check_label(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(Error::invalid(format!("{kind} `{s}` must be non-empty without spaces or `=`")));
    }
    Ok(())
}

fn render(header: String, rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header;
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // `{:?}` on f64 is the shortest representation that round-trips exactly.
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_sequence(seq: &MotionSequence) -> Result<String> {
    seq.validate()?;
    check_label("action", &seq.action_label)?;
    check_label("subject", &seq.subject_id)?;
    let header = format!(
        "# fps={:?} action={} subject={} dof={}",
        seq.fps,
        seq.action_label,
        seq.subject_id,
        seq.dim()
    );
    Ok(render(header, seq.frames.iter().map(|p| p.angles.clone())))
}

pub fn read_sequence(text: &str) -> Result<MotionSequence> {
    let (h, rows) = parse_rows(text, "dof")?;
    if rows.len() < 2 {
        return Err(Error::Parse { line: rows.len() + 1, msg: "a sequence needs at least 2 frames".into() });
    }
    MotionSequence::new(rows.into_iter().map(Pose::new).collect(), h.fps, &h.action, &h.subject)
}

pub fn save_sequence(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_sequence(seq)?)?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<MotionSequence> {
    read_sequence(&std::fs::read_to_string(path)?)
}

pub fn write_features(seq: &FeatureSequence) -> Result<String> {
    check_label("action", &seq.action_label)?;
    check_label("subject", &seq.subject_id)?;
    let dim = seq.dim();
    if seq.frames.iter().any(|f| f.dim() != dim) {
        return Err(Error::invalid("feature frames differ in dimension"));
    }
    let header = format!(
        "# fps={:?} action={} subject={} dim={}",
        seq.fps, seq.action_label, seq.subject_id, dim
    );
    Ok(render(header, seq.frames.iter().map(|f| f.values.clone())))
}

pub fn read_features(text: &str) -> Result<FeatureSequence> {
    let (h, rows) = parse_rows(text, "dim")?;
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no feature rows".into() });
    }
    Ok(FeatureSequence {
        frames: rows.into_iter().map(FeatureVector::new).collect(),
        fps: h.fps,
        action_label: h.action,
        subject_id: h.subject,
    })
}

pub fn save_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_features(seq)?)?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    read_features(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{catalog_action, generate_synthetic_action};

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(read_sequence(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let mut text = String::from("# fps=30 action=walk subject=s dof=2\n");
        for _ in 0..5 {
            text.push_str("0.1,0.2\n");
        }
        text.push_str("0.1,0.2,0.3\n");
        match read_sequence(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_bad_header() {
        let text = "# fps=30 action=walk subject=s dof=2\n0.1,0.2\n0.1,abc\n";
        assert!(matches!(read_sequence(text), Err(Error::Parse { line: 3, .. })));
        let text = "fps=30 action=walk subject=s dof=2\n0.1,0.2\n0.1,0.2\n";
        assert!(matches!(read_sequence(text), Err(Error::Parse { line: 1, .. })));
        let text = "# fps=30 action=walk dof=2\n0.1,0.2\n0.1,0.2\n";
        assert!(matches!(read_sequence(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walk.csv");
        let seq = generate_synthetic_action(&catalog_action("walk").unwrap(), 30, 0.05, 3).unwrap();
        save_sequence(&seq, &path).unwrap();
        let back = load_sequence(&path).unwrap();
        assert_eq!(back.fps, seq.fps);
        assert_eq!(back.action_label, "walk");
        for (a, b) in back.frames.iter().zip(&seq.frames) {
            for (x, y) in a.angles.iter().zip(&b.angles) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn feature_header_uses_dim() {
        let fs = FeatureSequence {
            frames: vec![FeatureVector::new(vec![1.0, 2.5, -3.0])],
            fps: 30.0,
            action_label: "walk".into(),
            subject_id: "s1".into(),
        };
        let text = write_features(&fs).unwrap();
        assert!(text.starts_with("# fps=30.0 action=walk subject=s1 dim=3\n"));
        assert_eq!(read_features(&text).unwrap(), fs);
    }
}
