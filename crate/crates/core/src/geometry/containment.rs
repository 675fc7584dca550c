use super::RegionSet;
use crate::dataset::{EmbeddingDataset, Label, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Percentage of each column's points inside one region set; `None` when the
/// column's partition is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentRow {
    pub name: String,
    pub train_positive: Option<f64>,
    pub test_positive: Option<f64>,
    pub test_negative: Option<f64>,
    pub test_ambiguous: Option<f64>,
}

impl ContainmentRow {
    pub fn cells(&self) -> [Option<f64>; 4] {
        [
            self.train_positive,
            self.test_positive,
            self.test_negative,
            self.test_ambiguous,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContainmentReport {
    pub rows: Vec<ContainmentRow>,
}

pub const CONTAINMENT_COLUMNS: [&str; 4] = [
    "Train positive",
    "Test positive",
    "Test negative",
    "Test ambiguous",
];

fn fmt_cell(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v:.2}"),
        None => "n/a".into(),
    }
}

impl ContainmentReport {
    /// Aligned plain-text table, percentages to two decimals.
    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once(6))
            .max()
            .unwrap_or(6);
        let mut out = format!("{:<name_w$}", "Region");
        for c in CONTAINMENT_COLUMNS {
            out.push_str(&format!(" | {c:>14}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(name_w + 4 * 17));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<name_w$}", r.name));
            for c in r.cells() {
                out.push_str(&format!(" | {:>14}", fmt_cell(c)));
            }
            out.push('\n');
        }
        out
    }

    /// Tab-separated records with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("region\ttrain_positive\ttest_positive\ttest_negative\ttest_ambiguous\n");
        for r in &self.rows {
            out.push_str(&r.name);
            for c in r.cells() {
                out.push('\t');
                out.push_str(&fmt_cell(c));
            }
            out.push('\n');
        }
        out
    }
}

/// Containment percentages per region set over the four reporting columns:
/// Train positive, Test positive, Test negative and Test ambiguous (three-way
/// labels).
pub fn containment_report(
    sets: &[(String, RegionSet)],
    dataset: &EmbeddingDataset,
    exec: Exec,
) -> Result<ContainmentReport> {
    let columns = [
        dataset.partition(Split::Train, Label::Positive),
        dataset.partition(Split::Test, Label::Positive),
        dataset.partition(Split::Test, Label::Negative),
        dataset.partition(Split::Test, Label::Ambiguous),
    ];
    let mut rows = Vec::with_capacity(sets.len());
    for (name, set) in sets {
        if set.dim() != dataset.dim() {
            return Err(Error::DimMismatch {
                expected: dataset.dim(),
                found: set.dim(),
            });
        }
        let pct: Vec<Option<f64>> = columns
            .iter()
            .map(|pts| {
                if pts.is_empty() {
                    None
                } else {
                    let inside = exec.count(pts, |p| set.box_containing(p).is_some());
                    Some(100.0 * inside as f64 / pts.len() as f64)
                }
            })
            .collect();
        rows.push(ContainmentRow {
            name: name.clone(),
            train_positive: pct[0],
            test_positive: pct[1],
            test_negative: pct[2],
            test_ambiguous: pct[3],
        });
    }
    Ok(ContainmentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmbeddingRecord;
    use crate::geometry::{bounding_box, Hyperrectangle, RegionKind};

    fn rec(id: &str, v: [f64; 2], label: Label, split: Split) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            vector: v.to_vec(),
            label,
            split,
        }
    }

    #[test]
    fn plain_box_holds_all_its_train_positives() {
        let ds = EmbeddingDataset::new(
            2,
            vec![
                rec("a", [0.0, 0.0], Label::Positive, Split::Train),
                rec("b", [1.0, 2.0], Label::Positive, Split::Train),
                rec("c", [0.5, 0.5], Label::Positive, Split::Test),
                rec("d", [3.0, 3.0], Label::Positive, Split::Test),
                rec("e", [9.0, 9.0], Label::Negative, Split::Train),
            ],
        )
        .unwrap();
        let b = bounding_box(&ds.partition(Split::Train, Label::Positive)).unwrap();
        let sets = vec![("plain".to_string(), RegionSet::single(b, RegionKind::Plain))];
        let rep = containment_report(&sets, &ds, Exec::Sequential).unwrap();
        let row = &rep.rows[0];
        assert_eq!(row.train_positive, Some(100.0));
        assert_eq!(row.test_positive, Some(50.0));
        assert_eq!(row.test_negative, None);
        assert_eq!(row.test_ambiguous, None);
        let table = rep.to_table();
        assert!(table.contains("100.00") && table.contains("50.00") && table.contains("n/a"));
    }

    #[test]
    fn dim_mismatch() {
        let ds = EmbeddingDataset::new(2, vec![]).unwrap();
        let set = RegionSet::single(Hyperrectangle::point(&[0.0]).unwrap(), RegionKind::Plain);
        assert!(containment_report(&[("x".into(), set)], &ds, Exec::Sequential).is_err());
    }
}
