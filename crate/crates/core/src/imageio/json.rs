//! Detection results as JSON:
//!
//! ```text
//! {"image":"a.ppm","detections":[{"box":[x1,y1,x2,y2],"score":s,"landmarks":[[x,y],...]}]}
//! ```
//!
//! Keys are written in that order, numbers with exactly four decimals and
//! `landmarks` only when present. Several results form a JSON array, one per line.

use serde_json::Value;
use thiserror::Error;

use crate::geometry::{BBox, Detection, Landmarks};

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("invalid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("unexpected detection JSON structure: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image: String,
    pub detections: Vec<Detection>,
}

/// Four-decimal fixed notation, rounding half away from zero on the shortest
/// decimal form of the value (so 0.98765 becomes "0.9877").
pub(crate) fn fixed4(v: f32) -> String {
    if !v.is_finite() {
        return "null".to_string();
    }
    let s = format!("{}", v.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(4)).collect();
    if frac.as_bytes().get(4).is_some_and(|&d| d >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 4;
    let body = format!(
        "{}.{}",
        std::str::from_utf8(&digits[..split]).expect("ascii digits"),
        std::str::from_utf8(&digits[split..]).expect("ascii digits")
    );
    if v < 0.0 && digits.iter().any(|&d| d != b'0') {
        format!("-{body}")
    } else {
        body
    }
}

pub fn detections_to_json(result: &ImageDetections) -> String {
    let mut out = String::from("{\"image\":");
    out.push_str(&serde_json::to_string(&result.image).expect("strings serialize"));
    out.push_str(",\"detections\":[");
    for (i, d) in result.detections.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let b = d.bbox;
        out.push_str(&format!(
            "{{\"box\":[{},{},{},{}],\"score\":{}",
            fixed4(b.x1),
            fixed4(b.y1),
            fixed4(b.x2),
            fixed4(b.y2),
            fixed4(d.score)
        ));
        if let Some(lms) = &d.landmarks {
            let pts: Vec<String> = lms.iter().map(|(x, y)| format!("[{},{}]", fixed4(*x), fixed4(*y))).collect();
            out.push_str(&format!(",\"landmarks\":[{}]", pts.join(",")));
        }
        out.push('}');
    }
    out.push_str("]}");
    out
}

pub fn results_to_json(results: &[ImageDetections]) -> String {
    let body: Vec<String> = results.iter().map(detections_to_json).collect();
    format!("[\n{}\n]\n", body.join(",\n"))
}

fn num(v: &Value, what: &str) -> Result<f32, JsonError> {
    v.as_f64()
        .map(|x| x as f32)
        .ok_or_else(|| JsonError::Schema(format!("{what} must be a number")))
}

fn parse_one(v: &Value) -> Result<ImageDetections, JsonError> {
    let obj = v.as_object().ok_or_else(|| JsonError::Schema("result must be an object".into()))?;
    let image = obj
        .get("image")
        .and_then(Value::as_str)
        .ok_or_else(|| JsonError::Schema("missing string \"image\"".into()))?
        .to_string();
    let dets = obj
        .get("detections")
        .and_then(Value::as_array)
        .ok_or_else(|| JsonError::Schema("missing array \"detections\"".into()))?;
    let mut detections = Vec::with_capacity(dets.len());
    for d in dets {
        let coords = d
            .get("box")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 4)
            .ok_or_else(|| JsonError::Schema("\"box\" must be a 4-element array".into()))?;
        let c: Vec<f32> = coords.iter().map(|v| num(v, "box coordinate")).collect::<Result<_, _>>()?;
        let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| JsonError::Schema(e.to_string()))?;
        let score = num(d.get("score").unwrap_or(&Value::Null), "score")?;
        let landmarks = match d.get("landmarks") {
            None | Some(Value::Null) => None,
            Some(Value::Array(pts)) if pts.len() == 5 => {
                let mut lm: Landmarks = [(0.0, 0.0); 5];
                for (slot, p) in lm.iter_mut().zip(pts) {
                    let xy = p
                        .as_array()
                        .filter(|a| a.len() == 2)
                        .ok_or_else(|| JsonError::Schema("landmark must be [x, y]".into()))?;
                    *slot = (num(&xy[0], "landmark x")?, num(&xy[1], "landmark y")?);
                }
                Some(lm)
            }
            Some(_) => return Err(JsonError::Schema("\"landmarks\" must hold 5 points".into())),
        };
        detections.push(Detection {
            bbox,
            score,
            landmarks,
        });
    }
    Ok(ImageDetections { image, detections })
}

pub fn parse_detections_json(text: &str) -> Result<ImageDetections, JsonError> {
    parse_one(&serde_json::from_str(text)?)
}

/// Accepts a single result object or an array of them.
pub fn parse_results_json(text: &str) -> Result<Vec<ImageDetections>, JsonError> {
    match serde_json::from_str::<Value>(text)? {
        Value::Array(items) => items.iter().map(parse_one).collect(),
        v => Ok(vec![parse_one(&v)?]),
    }
}
