//! AUC and cumulative lift.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucScore {
    pub value: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from mid-ranks in
/// `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<AucScore> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid_rank * pos_in_tie as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(AucScore {
        value: u / (p * negatives as f64),
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftPoint {
    pub targeted_fraction: f64,
    pub captured_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftCurve {
    pub points: Vec<LiftPoint>,
    pub base_rate: f64,
}

impl LiftCurve {
    /// The grid point closest to `fraction`.
    pub fn point_at(&self, fraction: f64) -> LiftPoint {
        *self
            .points
            .iter()
            .min_by(|a, b| {
                (a.targeted_fraction - fraction)
                    .abs()
                    .total_cmp(&(b.targeted_fraction - fraction).abs())
            })
            .expect("curve has points")
    }

    /// Captured fraction divided by targeted fraction at the closest grid point.
    pub fn lift_at(&self, fraction: f64) -> f64 {
        let p = self.point_at(fraction);
        p.captured_fraction / p.targeted_fraction
    }
}

/// Cumulative gains: instances sorted by descending score (ties by case id,
/// then input order); the point at `k / granularity` holds the share of all
/// positives found in the top `ceil(k n / granularity)` instances.
pub fn cumulative_lift(scores: &[f64], labels: &[bool], case_ids: &[String], granularity: usize) -> Result<LiftCurve> {
    if scores.len() != labels.len() || scores.len() != case_ids.len() {
        return Err(Error::LengthMismatch("scores, labels and case ids".into()));
    }
    if granularity == 0 {
        return Err(Error::Config("lift granularity must be >= 1".into()));
    }
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| case_ids[a].cmp(&case_ids[b])));
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0usize);
    for &i in &order {
        cumulative.push(cumulative.last().unwrap() + usize::from(labels[i]));
    }
    let points = (0..=granularity)
        .map(|k| {
            let top = (k * n).div_ceil(granularity);
            LiftPoint {
                targeted_fraction: k as f64 / granularity as f64,
                captured_fraction: cumulative[top] as f64 / total_pos as f64,
            }
        })
        .collect();
    Ok(LiftCurve {
        points,
        base_rate: total_pos as f64 / n as f64,
    })
}

pub fn write_lift_csv<W: Write>(curve: &LiftCurve, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["targeted_fraction", "captured_fraction"])?;
    for p in &curve.points {
        wtr.write_record([p.targeted_fraction.to_string(), p.captured_fraction.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Reads the points written by [`write_lift_csv`]; the base rate is not part
/// of the file and is supplied by the caller.
pub fn read_lift_csv<R: Read>(reader: R, base_rate: f64) -> Result<LiftCurve> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse().map_err(|_| Error::InvalidValue {
                row: i + 2,
                column: if c == 0 { "targeted_fraction" } else { "captured_fraction" }.into(),
                value: raw.into(),
            })
        };
        points.push(LiftPoint {
            targeted_fraction: num(0)?,
            captured_fraction: num(1)?,
        });
    }
    Ok(LiftCurve { points, base_rate })
}

/// A standalone SVG chart: the curve, the random-selection diagonal, and an
/// optional reference marker `(x, captured)`.
pub fn lift_svg(curve: &LiftCurve, reference: Option<(f64, f64, &str)>) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let px = |x: f64| PAD + x * SIZE;
    let py = |y: f64| PAD + (1.0 - y) * SIZE;
    let mut s = String::new();
    let total = SIZE + 2.0 * PAD;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            px(t),
            PAD + SIZE + 15.0,
            k * 10
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            PAD - 5.0,
            py(t) + 3.0,
            k * 10
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let pts: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.targeted_fraction), py(p.captured_fraction)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    if let Some((x, y, label)) = reference {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="firebrick"/>"#,
            px(x),
            py(y)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="firebrick">{}</text>"#,
            px(x) + 8.0,
            py(y) + 4.0,
            label
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">% of cases targeted (highest risk first)</text>"#,
        PAD + SIZE / 2.0,
        total - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {:.2})">% of positives captured</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    s.push_str("</svg>\n");
    s
}
