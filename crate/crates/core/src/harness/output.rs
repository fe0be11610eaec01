use std::fs::File;
use std::path::Path;

use crate::adaptation::LossRecord;
use crate::domains::LabeledSet;
use crate::error::{Error, Result};
use crate::model::MlpModel;

use super::experiment::{RoundMetrics, SelectionRecord};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::State(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `round, mean_acc, acc_c0.., labeled_count`. Classes absent from the
/// evaluation set get an empty cell. Durations are left out so reruns match.
pub fn write_metrics_csv(path: impl AsRef<Path>, metrics: &[RoundMetrics], classes: usize) -> Result<()> {
    let mut header = vec!["round".to_string(), "mean_acc".to_string()];
    header.extend((0..classes).map(|c| format!("acc_c{c}")));
    header.push("labeled_count".into());
    let rows = metrics.iter().map(|m| {
        let mut row = vec![m.round.to_string(), m.mean_acc.to_string()];
        row.extend(
            m.per_class
                .iter()
                .map(|a| a.map_or_else(String::new, |v| v.to_string())),
        );
        row.push(m.labeled_count.to_string());
        row
    });
    write_rows(path.as_ref(), header, rows)
}

pub fn write_selections_csv(path: impl AsRef<Path>, selections: &[SelectionRecord]) -> Result<()> {
    let header = ["round", "id", "u_cm", "u_ct", "u", "y_a", "true_label"]
        .map(String::from)
        .to_vec();
    let rows = selections.iter().map(|s| {
        vec![
            s.round.to_string(),
            s.id.to_string(),
            s.u_cm.to_string(),
            s.u_ct.to_string(),
            s.u.to_string(),
            s.y_a.to_string(),
            s.true_label.to_string(),
        ]
    });
    write_rows(path.as_ref(), header, rows)
}

pub fn write_losses_csv(path: impl AsRef<Path>, losses: &[LossRecord]) -> Result<()> {
    let header = ["step", "lr", "L_ce", "L_vpa", "L_ent", "L_total"]
        .map(String::from)
        .to_vec();
    let rows = losses.iter().map(|r| {
        vec![
            r.step.to_string(),
            r.lr.to_string(),
            r.ce.to_string(),
            r.vpa.to_string(),
            r.ent.to_string(),
            r.total.to_string(),
        ]
    });
    write_rows(path.as_ref(), header, rows)
}

/// Writes `id, split, true_label, f0..` for every sample of every named set.
pub fn export_embeddings(model: &MlpModel, sets: &[(&str, &LabeledSet)], path: impl AsRef<Path>) -> Result<()> {
    let d = model.dims().bottleneck;
    let mut header = ["id", "split", "true_label"].map(String::from).to_vec();
    header.extend((0..d).map(|k| format!("f{k}")));
    let mut rows = Vec::new();
    for (name, set) in sets {
        let features = model.features(&set.features)?;
        for (i, row) in features.row_iter().enumerate() {
            let mut out = vec![set.ids[i].to_string(), (*name).to_string(), set.labels[i].to_string()];
            out.extend(row.iter().map(f64::to_string));
            rows.push(out);
        }
    }
    write_rows(path.as_ref(), header, rows.into_iter())
}
