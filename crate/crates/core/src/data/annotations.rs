//! Tab-separated annotation records:
//! `image_ref  x_min y_min x_max y_max  inout  k  x1 y1 ... xk yk`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One supervised person instance.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub image_ref: String,
    /// Normalized `(x_min, y_min, x_max, y_max)`.
    pub bbox: [f32; 4],
    pub inout: bool,
    /// Normalized annotator points; empty only when `inout` is false.
    pub points: Vec<[f64; 2]>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Error::Parse {
            line: 0,
            field: field.into(),
            msg,
        };
        if self.image_ref.is_empty() || self.image_ref.contains(['\t', '\n']) {
            return Err(err("image_ref", format!("unusable image reference {:?}", self.image_ref)));
        }
        check_bbox(&self.bbox).map_err(|(f, m)| err(f, m))?;
        if self.inout && self.points.is_empty() {
            return Err(err("k", "an in-frame record needs at least one gaze point".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(err(&format!("x{}", i + 1), format!("gaze point {p:?} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// The record as one line, without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = self.image_ref.clone();
        for v in self.bbox {
            write!(s, "\t{v}").unwrap();
        }
        write!(s, "\t{}\t{}", u8::from(self.inout), self.points.len()).unwrap();
        for p in &self.points {
            write!(s, "\t{}\t{}", p[0], p[1]).unwrap();
        }
        s
    }
}

const BBOX_FIELDS: [&str; 4] = ["x_min", "y_min", "x_max", "y_max"];

fn check_bbox(b: &[f32; 4]) -> std::result::Result<(), (&'static str, String)> {
    for (v, name) in b.iter().zip(BBOX_FIELDS) {
        if !(0.0..=1.0).contains(v) {
            return Err((name, format!("{v} outside [0, 1]")));
        }
    }
    if b[2] < b[0] {
        return Err(("x_max", format!("x_max {} < x_min {}", b[2], b[0])));
    }
    if b[3] < b[1] {
        return Err(("y_max", format!("y_max {} < y_min {}", b[3], b[1])));
    }
    Ok(())
}

/// Parses one non-comment line; `line` is 1-based and only used in errors.
pub fn parse_line(text: &str, line: usize) -> Result<AnnotationRecord> {
    let err = |field: &str, msg: String| Error::Parse {
        line,
        field: field.into(),
        msg,
    };
    let f: Vec<&str> = text.split('\t').collect();
    if f.len() < 7 {
        return Err(err("record", format!("expected at least 7 fields, found {}", f.len())));
    }
    let num = |i: usize, name: &str| -> Result<f64> {
        let v: f64 = f[i].trim().parse().map_err(|_| err(name, format!("`{}` is not a number", f[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(name, format!("`{}` is not finite", f[i])))
        }
    };
    let mut bbox = [0f32; 4];
    for (i, name) in BBOX_FIELDS.iter().enumerate() {
        bbox[i] = num(1 + i, name)? as f32;
    }
    check_bbox(&bbox).map_err(|(field, msg)| err(field, msg))?;
    let inout = match f[5].trim() {
        "0" => false,
        "1" => true,
        other => return Err(err("inout", format!("expected 0 or 1, found `{other}`"))),
    };
    let k: usize = f[6].trim().parse().map_err(|_| err("k", format!("`{}` is not a count", f[6])))?;
    if f.len() != 7 + 2 * k {
        return Err(err(
            "k",
            format!("k = {k} needs {} fields, found {}", 7 + 2 * k, f.len()),
        ));
    }
    let mut points = Vec::with_capacity(k);
    for j in 0..k {
        let (xn, yn) = (format!("x{}", j + 1), format!("y{}", j + 1));
        let x = num(7 + 2 * j, &xn)?;
        let y = num(8 + 2 * j, &yn)?;
        for (v, n) in [(x, &xn), (y, &yn)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(err(n, format!("{v} outside [0, 1]")));
            }
        }
        points.push([x, y]);
    }
    if inout && points.is_empty() {
        return Err(err("k", "an in-frame record needs at least one gaze point".into()));
    }
    let image_ref = f[0].to_string();
    if image_ref.is_empty() {
        return Err(err("image_ref", "empty image reference".into()));
    }
    Ok(AnnotationRecord {
        image_ref,
        bbox,
        inout,
        points,
    })
}

/// Parsed annotation file: records in file order plus any `#` comment lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationFile {
    pub comments: Vec<String>,
    pub records: Vec<AnnotationRecord>,
}

pub fn parse_annotations(text: &str) -> Result<AnnotationFile> {
    let mut out = AnnotationFile::default();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(c) = l.strip_prefix('#') {
            out.comments.push(c.trim().to_string());
        } else if !l.trim().is_empty() {
            out.records.push(parse_line(l, i + 1)?);
        }
    }
    Ok(out)
}

/// Reads and parses an annotation file.
pub fn load_annotations(path: impl AsRef<std::path::Path>) -> Result<AnnotationFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

/// Serializes comment lines and records; every record is validated first.
pub fn format_annotations(comments: &[String], records: &[AnnotationRecord]) -> Result<String> {
    let mut s = String::new();
    for c in comments {
        writeln!(s, "# {c}").unwrap();
    }
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| match e {
            Error::Parse { field, msg, .. } => Error::Parse {
                line: comments.len() + i + 1,
                field,
                msg,
            },
            e => e,
        })?;
        writeln!(s, "{}", r.to_line()).unwrap();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example_line_parses() {
        let r = parse_line("img/1.jpg\t0.1\t0.2\t0.3\t0.4\t1\t1\t0.50\t0.60", 1).unwrap();
        assert_eq!(r.image_ref, "img/1.jpg");
        assert_eq!(r.bbox, [0.1, 0.2, 0.3, 0.4]);
        assert!(r.inout);
        assert_eq!(r.points, vec![[0.5, 0.6]]);
    }

    #[test]
    fn out_of_frame_without_points() {
        let r = parse_line("a.png\t0.1\t0.2\t0.3\t0.4\t0\t0", 1).unwrap();
        assert!(!r.inout && r.points.is_empty());
    }

    fn field_of(text: &str) -> (usize, String) {
        match parse_annotations(text) {
            Err(Error::Parse { line, field, .. }) => (line, field),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_line_and_field() {
        assert_eq!(field_of("# c\na\t0.5\t0.2\t0.3\t0.4\t0\t0"), (2, "x_max".into()));
        assert_eq!(field_of("a\t0.1\t0.2\t0.3\t0.4\t2\t0"), (1, "inout".into()));
        assert_eq!(field_of("a\t0.1\tzz\t0.3\t0.4\t0\t0"), (1, "y_min".into()));
        assert_eq!(field_of("a\t0.1\t0.2\t0.3\t0.4\t1\t0"), (1, "k".into()));
        assert_eq!(field_of("a\t0.1\t0.2\t0.3\t0.4\t1\t2\t0.5\t0.5"), (1, "k".into()));
        assert_eq!(field_of("a\t0.1\t0.2\t0.3\t0.4\t1\t1\t0.5\t1.5"), (1, "y1".into()));
        assert_eq!(field_of("\n\na\t0.1\t0.2"), (3, "record".into()));
    }

    #[test]
    fn writer_rejects_invalid_records() {
        let bad = AnnotationRecord {
            image_ref: "x".into(),
            bbox: [0.1, 0.2, 0.3, 0.4],
            inout: true,
            points: vec![],
        };
        assert!(format_annotations(&[], &[bad]).is_err());
    }

    proptest! {
        #[test]
        fn records_round_trip(
            b in proptest::array::uniform4(0.0f32..=1.0),
            inout in any::<bool>(),
            pts in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..4),
        ) {
            let mut bbox = b;
            if bbox[2] < bbox[0] { bbox.swap(0, 2); }
            if bbox[3] < bbox[1] { bbox.swap(1, 3); }
            let points: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let inout = inout && !points.is_empty();
            let r = AnnotationRecord { image_ref: "images/s.png".into(), bbox, inout, points };
            let text = format_annotations(&["seed=1".into()], std::slice::from_ref(&r)).unwrap();
            let f = parse_annotations(&text).unwrap();
            prop_assert_eq!(f.comments, vec!["seed=1".to_string()]);
            prop_assert_eq!(f.records, vec![r]);
        }
    }
}
