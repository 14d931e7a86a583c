//! Box lists as `frame_index,x,y,w,h` text lines.

use std::fmt::Write as _;

use crate::detection::{BoundingBox, BoxesByFrame};
use crate::error::{Error, Result};

pub const BOX_HEADER: &str = "frame_index,x,y,w,h";

fn line_error(line: usize, message: impl Into<String>) -> Error {
    Error::Line { line, message: message.into() }
}

/// Parses a box file. An optional header line and blank lines are skipped;
/// lines must be sorted by frame index. Line numbers in errors are 1-based.
pub fn parse_boxes(text: &str) -> Result<BoxesByFrame> {
    let mut out = BoxesByFrame::new();
    let mut last_frame: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || (lineno == 1 && line.replace(' ', "") == BOX_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(line_error(lineno, format!("expected 5 comma-separated fields, found {}", fields.len())));
        }
        let mut values = [0usize; 5];
        for (v, f) in values.iter_mut().zip(&fields) {
            *v = f
                .parse()
                .map_err(|_| line_error(lineno, format!("`{f}` is not a nonnegative integer")))?;
        }
        let [frame, x, y, w, h] = values;
        if last_frame.is_some_and(|prev| frame < prev) {
            return Err(line_error(lineno, format!("frame index {frame} is out of order")));
        }
        last_frame = Some(frame);
        let b = BoundingBox::new(x, y, w, h).map_err(|e| line_error(lineno, e.to_string()))?;
        out.entry(frame).or_default().push(b);
    }
    Ok(out)
}

pub fn read_boxes(path: &std::path::Path) -> Result<BoxesByFrame> {
    parse_boxes(&std::fs::read_to_string(path)?)
}

/// Serializes boxes with a header line, in frame order.
pub fn format_boxes(boxes: &BoxesByFrame) -> String {
    let mut out = String::from(BOX_HEADER);
    out.push('\n');
    for (frame, list) in boxes {
        for b in list {
            let _ = writeln!(out, "{frame},{},{},{},{}", b.x, b.y, b.w, b.h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut boxes = BoxesByFrame::new();
        boxes.insert(0, vec![BoundingBox::new(1, 2, 3, 4).unwrap()]);
        boxes.insert(2, vec![BoundingBox::new(0, 0, 1, 1).unwrap(), BoundingBox::new(5, 5, 2, 2).unwrap()]);
        let text = format_boxes(&boxes);
        assert_eq!(text, "frame_index,x,y,w,h\n0,1,2,3,4\n2,0,0,1,1\n2,5,5,2,2\n");
        assert_eq!(parse_boxes(&text).unwrap(), boxes);
    }

    #[test]
    fn header_is_optional() {
        let a = parse_boxes("0,1,1,2,2\n\n1,0,0,3,3\n").unwrap();
        let b = parse_boxes("frame_index,x,y,w,h\n0,1,1,2,2\n1,0,0,3,3").unwrap();
        assert_eq!(a, b);
        assert!(parse_boxes("frame_index,x,y,w,h\n").unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("0,1,1,2,2\n0,1,1,2\n", 2),
            ("frame_index,x,y,w,h\n0,1,1,2,2\n0,a,1,2,2\n", 3),
            ("1,1,1,2,2\n0,1,1,2,2\n", 2),
            ("0,1,1,0,2\n", 1),
            ("0,-1,1,2,2\n", 1),
        ];
        for (text, expected) in cases {
            match parse_boxes(text) {
                Err(Error::Line { line, .. }) => assert_eq!(line, expected, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }
}
