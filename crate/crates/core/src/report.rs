//! Plain-text report emission. Every writer is a pure function from values
//! to a string so outputs are byte-reproducible; the leading `#` line in
//! each CSV records the ranking conventions the numbers depend on.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{EvalSummary, HubnessReport, RetrievalReport};
use crate::train::EpochRecord;

const RANKING_NOTE: &str =
    "# ranking: descending similarity, ties to the lowest index; medR: midpoint of the central pair for even counts";
const HUBNESS_NOTE: &str =
    "# top-k membership: descending similarity, ties to the lowest index; skewness: population third moment, 0 at zero variance";

/// Shortest round-trip decimal form, so emission is deterministic.
fn num(v: f64) -> String {
    format!("{v}")
}

fn metric_fields(r: &RetrievalReport) -> [String; 5] {
    [num(r.r_at_1), num(r.r_at_5), num(r.r_at_10), num(r.med_r), num(r.mean_r)]
}

/// Both directions of one evaluation, one row each; the shared rsum is
/// repeated so every row is self-contained.
pub fn metrics_csv(summary: &EvalSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{RANKING_NOTE}");
    let _ = writeln!(out, "direction,rAt1,rAt5,rAt10,medR,meanR,rsum");
    for r in [&summary.image_to_text, &summary.text_to_image] {
        let f = metric_fields(r);
        let _ = writeln!(out, "{},{},{}", r.direction, f.join(","), num(summary.rsum));
    }
    out
}

/// Per-epoch training curve. Wall-clock time is deliberately absent so two
/// identical runs emit identical bytes; timings live in the run manifest.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{RANKING_NOTE}");
    let _ = writeln!(
        out,
        "epoch,trainLoss,lr,rsum,\
         imageToTextRAt1,imageToTextRAt5,imageToTextRAt10,imageToTextMedR,imageToTextMeanR,\
         textToImageRAt1,textToImageRAt5,textToImageRAt10,textToImageMedR,textToImageMeanR"
    );
    for rec in history {
        let i2t = metric_fields(&rec.image_to_text);
        let t2i = metric_fields(&rec.text_to_image);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.epoch,
            num(rec.train_loss),
            num(rec.lr),
            num(rec.rsum),
            i2t.join(","),
            t2i.join(",")
        );
    }
    out
}

/// One row per gallery item per report; the distribution summary columns
/// are repeated on each row so the file needs no side table.
pub fn hubness_csv(reports: &[HubnessReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HUBNESS_NOTE}");
    let _ = writeln!(out, "direction,k,galleryIndex,occurrence,skewness,maxHubShare");
    for rep in reports {
        for (idx, occ) in rep.occurrence.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{idx},{occ},{},{}",
                rep.direction,
                rep.k,
                num(rep.skewness),
                num(rep.max_hub_share)
            );
        }
    }
    out
}

/// Writes a report to disk, wrapping failures with the offending path.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::Io { path: path.to_path_buf(), message: e.to_string() })
}
