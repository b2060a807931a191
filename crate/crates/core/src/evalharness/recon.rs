//! Reconstruction statistics from a normalized SfM report.
//!
//! The external SfM tool's database is exported (out of scope here) into a
//! plain TSV, one row per image:
//!
//! ```text
//! scene<TAB>image_id<TAB>keypoints<TAB>putative<TAB>inliers<TAB>points3d<TAB>registered
//! ```
//!
//! with a header line naming exactly those columns. Derived ratios are
//! computed per image and then averaged; a scene counts as converged when
//! at least two of its images are registered.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct ImageRow {
    pub scene: String,
    pub image_id: String,
    pub keypoints: f64,
    pub putative: f64,
    pub inliers: f64,
    pub points3d: f64,
    pub registered: bool,
}

/// Aggregated reconstruction statistics for one report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionStats {
    /// Fraction of scenes with >= 2 registered images.
    pub convergence_rate: f64,
    /// Percentage of images registered.
    pub images_passed_pct: f64,
    pub keypoints_per_image: f64,
    pub putative_matches: f64,
    pub inliers: f64,
    /// Mean over images of putative / keypoints.
    pub match_ratio: f64,
    /// Mean over images of inliers / keypoints.
    pub match_score: f64,
    /// Mean over images of inliers / putative (0 where putative is 0).
    pub precision: f64,
    pub points3d_per_image: f64,
    pub images: usize,
    pub scenes: usize,
    /// Rows whose putative count was zero; their precision contributed 0.
    pub zero_putative_rows: usize,
}

const COLUMNS: [&str; 7] = [
    "scene",
    "image_id",
    "keypoints",
    "putative",
    "inliers",
    "points3d",
    "registered",
];

/// Parse the normalized report format.
pub fn read_report(path: &Path) -> Result<Vec<ImageRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(Error::format(path, "empty report")),
        }
    };
    let names: Vec<&str> = header.split('\t').map(|s| s.trim()).collect();
    for required in COLUMNS {
        if !names.contains(&required) {
            return Err(Error::format(path, format!("missing column '{required}'")));
        }
    }
    let col = |name: &str| names.iter().position(|n| *n == name).unwrap();
    let (c_scene, c_img, c_kp, c_put, c_inl, c_p3d, c_reg) = (
        col("scene"),
        col("image_id"),
        col("keypoints"),
        col("putative"),
        col("inliers"),
        col("points3d"),
        col("registered"),
    );
    let mut rows = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(|s| s.trim()).collect();
        if fields.len() < names.len() {
            return Err(Error::format(
                path,
                format!("line {}: {} fields, header has {}", ln + 1, fields.len(), names.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", ln + 1)))
        };
        rows.push(ImageRow {
            scene: fields[c_scene].to_string(),
            image_id: fields[c_img].to_string(),
            keypoints: num(c_kp)?,
            putative: num(c_put)?,
            inliers: num(c_inl)?,
            points3d: num(c_p3d)?,
            registered: fields[c_reg] == "1",
        });
    }
    if rows.is_empty() {
        return Err(Error::format(path, "report has no data rows"));
    }
    Ok(rows)
}

/// Aggregate a normalized report into [`ReconstructionStats`].
pub fn reconstruction_stats(path: &Path) -> Result<ReconstructionStats> {
    let rows = read_report(path)?;
    Ok(aggregate(&rows))
}

pub fn aggregate(rows: &[ImageRow]) -> ReconstructionStats {
    let n = rows.len() as f64;
    let mut scenes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        *scenes.entry(r.scene.as_str()).or_default() += usize::from(r.registered);
    }
    let converged = scenes.values().filter(|&&reg| reg >= 2).count();
    let registered = rows.iter().filter(|r| r.registered).count();
    let mut zero_putative = 0usize;
    let (mut ratio, mut score, mut precision) = (0.0f64, 0.0f64, 0.0f64);
    for r in rows {
        if r.keypoints > 0.0 {
            ratio += r.putative / r.keypoints;
            score += r.inliers / r.keypoints;
        }
        if r.putative > 0.0 {
            precision += r.inliers / r.putative;
        } else {
            zero_putative += 1;
        }
    }
    let mean = |f: fn(&ImageRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    ReconstructionStats {
        convergence_rate: converged as f64 / scenes.len() as f64,
        images_passed_pct: 100.0 * registered as f64 / n,
        keypoints_per_image: mean(|r| r.keypoints),
        putative_matches: mean(|r| r.putative),
        inliers: mean(|r| r.inliers),
        match_ratio: ratio / n,
        match_score: score / n,
        precision: precision / n,
        points3d_per_image: mean(|r| r.points3d),
        images: rows.len(),
        scenes: scenes.len(),
        zero_putative_rows: zero_putative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_report(name: &str, body: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("burstfeat_recon_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    const HEADER: &str = "scene\timage_id\tkeypoints\tputative\tinliers\tpoints3d\tregistered\n";

    #[test]
    fn table_row_ratios_recompute() {
        let path = write_report(
            "row.tsv",
            &format!("{HEADER}s1\timg1\t4000\t690.82\t351.16\t31.4\t1\n"),
        );
        let stats = reconstruction_stats(&path).unwrap();
        assert!((stats.match_ratio - 0.173).abs() <= 0.001, "{}", stats.match_ratio);
        assert!((stats.match_score - 0.088).abs() <= 0.001, "{}", stats.match_score);
        assert!((stats.precision - 351.16 / 690.82).abs() <= 1e-9);
    }

    #[test]
    fn zero_putative_is_flagged_not_a_division_error() {
        let path = write_report(
            "zero.tsv",
            &format!("{HEADER}s1\timg1\t1000\t0\t0\t0\t0\n"),
        );
        let stats = reconstruction_stats(&path).unwrap();
        assert_eq!(stats.precision, 0.0);
        assert_eq!(stats.zero_putative_rows, 1);
    }

    #[test]
    fn synthetic_report_matches_hand_computation() {
        let body = format!(
            "{HEADER}\
             a\ti1\t100\t50\t25\t10\t1\n\
             a\ti2\t200\t100\t80\t20\t1\n\
             b\ti3\t400\t100\t50\t0\t0\n"
        );
        let path = write_report("hand.tsv", &body);
        let s = reconstruction_stats(&path).unwrap();
        assert_eq!(s.images, 3);
        assert_eq!(s.scenes, 2);
        // scene a has two registered images -> converged; scene b none
        assert!((s.convergence_rate - 0.5).abs() < 1e-12);
        assert!((s.images_passed_pct - 200.0 / 3.0).abs() < 1e-9);
        assert!((s.keypoints_per_image - (700.0 / 3.0)).abs() < 1e-9);
        let want_ratio = (0.5 + 0.5 + 0.25) / 3.0;
        assert!((s.match_ratio - want_ratio).abs() < 1e-12);
        let want_score = (0.25 + 0.4 + 0.125) / 3.0;
        assert!((s.match_score - want_score).abs() < 1e-12);
        let want_precision = (0.5 + 0.8 + 0.5) / 3.0;
        assert!((s.precision - want_precision).abs() < 1e-12);
        assert!((s.points3d_per_image - 10.0).abs() < 1e-9);
    }

    #[test]
    fn missing_column_is_reported_by_name() {
        let path = write_report(
            "missing.tsv",
            "scene\timage_id\tkeypoints\tputative\tinliers\tregistered\nrow\ti\t1\t1\t1\t1\n",
        );
        let err = reconstruction_stats(&path).unwrap_err();
        assert!(err.to_string().contains("points3d"), "{err}");
    }
}
