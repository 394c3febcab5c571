use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};

use super::{Cell, ColumnKind, DataError, FeatureGroup, FeatureSchema, RawTable};

/// Dense numeric design matrix with encoded column names.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub feature_names: Vec<String>,
    pub values: Array2<f64>,
    /// 1 = mortality.
    pub labels: Option<Vec<u8>>,
    pub groups: Vec<FeatureGroup>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.values.row(i).to_vec()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn select_rows(&self, indices: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            feature_names: self.feature_names.clone(),
            values: self.values.select(ndarray::Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            groups: self.groups.clone(),
        }
    }

    /// Writes the matrix with encoded header names; the label column, if any, is last.
    pub fn write_csv<W: Write>(&self, writer: W, label_name: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        if self.labels.is_some() {
            header.push(label_name.to_string());
        }
        w.write_record(&header)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(labels) = &self.labels {
                record.push(labels[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }

    /// Reads a matrix written by [`EncodedMatrix::write_csv`]; the header must equal the
    /// schema's encoded names (plus the optional label column).
    pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let names = schema.encoded_names();
        let has_label = header.len() == names.len() + 1 && header.last() == Some(&schema.label);
        let feature_header = if has_label {
            &header[..names.len()]
        } else {
            &header[..]
        };
        if feature_header != names.as_slice() {
            let missing = names
                .iter()
                .filter(|n| !feature_header.contains(n))
                .cloned()
                .collect();
            let extra = feature_header
                .iter()
                .filter(|h| !names.contains(h))
                .cloned()
                .collect();
            return Err(DataError::HeaderMismatch { missing, extra });
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut n_rows = 0;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (j, cell) in record.iter().enumerate().take(names.len()) {
                let v: f64 = cell.parse().map_err(|_| DataError::ExpectedNumber {
                    row,
                    column: names[j].clone(),
                })?;
                data.push(v);
            }
            if has_label {
                labels.push(match &record[names.len()] {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(DataError::InvalidLabel {
                            row,
                            value: other.to_string(),
                        })
                    }
                });
            }
            n_rows += 1;
        }
        Ok(EncodedMatrix {
            feature_names: names.clone(),
            values: Array2::from_shape_vec((n_rows, names.len()), data)
                .expect("row lengths checked by csv reader"),
            labels: has_label.then_some(labels),
            groups: schema.groups(),
        })
    }
}

/// Encodes a complete raw table: one-hot groups are expanded, ordinal columns mapped
/// through their code table, numeric columns passed through. The label column, when
/// present in the table, becomes the label vector.
pub fn encode(table: &RawTable, schema: &FeatureSchema) -> Result<EncodedMatrix, DataError> {
    let names = schema.encoded_names();
    let d = names.len();
    let col_pos: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            table.column_index(&c.name).ok_or_else(|| DataError::HeaderMismatch {
                missing: vec![c.name.clone()],
                extra: vec![],
            })
        })
        .collect::<Result<_, _>>()?;
    let label_pos = table.column_index(&schema.label);

    let mut values = Array2::zeros((table.n_rows(), d));
    let mut labels = label_pos.map(|_| Vec::with_capacity(table.n_rows()));
    for (r, row) in table.rows.iter().enumerate() {
        let mut out = values.row_mut(r);
        let mut j = 0;
        for (spec, &pos) in schema.columns.iter().zip(&col_pos) {
            let cell = &row[pos];
            if cell.is_missing() {
                return Err(DataError::MissingValue {
                    row: r,
                    column: spec.name.clone(),
                });
            }
            match &spec.kind {
                ColumnKind::Onehot { categories, .. } => {
                    let value = categorical_text(cell, &spec.name)?;
                    let k = categories.iter().position(|c| c == value).ok_or_else(|| {
                        DataError::UnknownCategory {
                            column: spec.name.clone(),
                            value: value.to_string(),
                        }
                    })?;
                    out[j + k] = 1.0;
                    j += categories.len();
                }
                ColumnKind::Ordinal { ordinal_map, .. } => {
                    let value = categorical_text(cell, &spec.name)?;
                    let code = ordinal_map.get(value).ok_or_else(|| DataError::UnknownCategory {
                        column: spec.name.clone(),
                        value: value.to_string(),
                    })?;
                    out[j] = *code as f64;
                    j += 1;
                }
                ColumnKind::Numeric => {
                    out[j] = cell.as_number().ok_or_else(|| DataError::ExpectedNumber {
                        row: r,
                        column: spec.name.clone(),
                    })?;
                    j += 1;
                }
            }
        }
        if let (Some(pos), Some(labels)) = (label_pos, labels.as_mut()) {
            match row[pos] {
                Cell::Number(v) if v == 0.0 || v == 1.0 => labels.push(v as u8),
                Cell::Missing => {
                    return Err(DataError::MissingValue {
                        row: r,
                        column: schema.label.clone(),
                    })
                }
                ref other => {
                    return Err(DataError::InvalidLabel {
                        row: r,
                        value: format!("{other:?}"),
                    })
                }
            }
        }
    }
    Ok(EncodedMatrix {
        feature_names: names,
        values,
        labels,
        groups: schema.groups(),
    })
}

fn categorical_text<'a>(cell: &'a Cell, column: &str) -> Result<&'a str, DataError> {
    match cell {
        Cell::Text(s) => Ok(s),
        _ => Err(DataError::UnknownCategory {
            column: column.to_string(),
            value: cell.as_number().map(|v| v.to_string()).unwrap_or_default(),
        }),
    }
}

/// Inverse of [`encode`]: argmax within each one-hot group, inverse ordinal map for
/// ordinal columns, numeric columns copied. Labels are restored as the last column.
pub fn decode(matrix: &EncodedMatrix, schema: &FeatureSchema) -> Result<RawTable, DataError> {
    let mut header: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    if matrix.labels.is_some() {
        header.push(schema.label.clone());
    }
    let mut table = RawTable::new(header);
    for r in 0..matrix.n_rows() {
        let row = matrix.row(r);
        let mut cells = Vec::with_capacity(table.header.len());
        let mut j = 0;
        for spec in &schema.columns {
            match &spec.kind {
                ColumnKind::Onehot { categories, .. } => {
                    let block = row.slice(ndarray::s![j..j + categories.len()]);
                    let k = block
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &v)| if v > block[best] { i } else { best });
                    cells.push(Cell::Text(categories[k].clone()));
                    j += categories.len();
                }
                ColumnKind::Ordinal { ordinal_map, .. } => {
                    let code = row[j];
                    let cat = ordinal_map
                        .iter()
                        .find(|(_, &c)| c as f64 == code)
                        .map(|(k, _)| k.clone())
                        .ok_or_else(|| DataError::UnknownCategory {
                            column: spec.name.clone(),
                            value: code.to_string(),
                        })?;
                    cells.push(Cell::Text(cat));
                    j += 1;
                }
                ColumnKind::Numeric => {
                    cells.push(Cell::Number(row[j]));
                    j += 1;
                }
            }
        }
        if let Some(labels) = &matrix.labels {
            cells.push(Cell::Number(labels[r] as f64));
        }
        table.push_row(cells)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_csv;
    use proptest::prelude::*;

    const HEADER: &str = "encounter_type,admission_source,race,ethnicity,gender,financial_class,age,zip,admit_quarter,admit_year,mortality";

    fn table(rows: &[&str]) -> RawTable {
        let text = std::iter::once(HEADER)
            .chain(rows.iter().copied())
            .collect::<Vec<_>>()
            .join("\n");
        read_csv(text.as_bytes(), &FeatureSchema::cohort_default()).unwrap()
    }

    fn feature<'a>(m: &'a EncodedMatrix, name: &str) -> ArrayView1<'a, f64> {
        m.column(m.feature_names.iter().position(|n| n == name).unwrap())
    }

    #[test]
    fn emergency_room_maps_to_two() {
        let t = table(&["Emergency,emergency room,White,Not,F,Medicare,75,786,1,2021,0"]);
        let m = encode(&t, &FeatureSchema::cohort_default()).unwrap();
        assert_eq!(feature(&m, "admission_source")[0], 2.0);
        assert_eq!(feature(&m, "gender_F")[0], 1.0);
        assert_eq!(feature(&m, "gender_M")[0], 0.0);
        assert_eq!(feature(&m, "age")[0], 75.0);
        assert_eq!(m.labels, Some(vec![0]));
        assert_eq!(m.n_features(), 19);
    }

    #[test]
    fn unknown_category_names_column_and_value() {
        let t = table(&["Emergency,emergency room,Martian,Not,F,Medicare,75,786,1,2021,0"]);
        let err = encode(&t, &FeatureSchema::cohort_default()).unwrap_err();
        match err {
            DataError::UnknownCategory { column, value } => {
                assert_eq!(column, "race");
                assert_eq!(value, "Martian");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_rejected() {
        let t = table(&["Emergency,emergency room,White,Not,F,Medicare,,786,1,2021,0"]);
        assert!(matches!(
            encode(&t, &FeatureSchema::cohort_default()),
            Err(DataError::MissingValue { .. })
        ));
    }

    #[test]
    fn labels_absent_without_label_column() {
        let schema = FeatureSchema::cohort_default();
        let text = "encounter_type,admission_source,race,ethnicity,gender,financial_class,age,zip,admit_quarter,admit_year\nInpatient,physician referral,Other,HispanicLatino,M,Self,40,787,2,2020\n";
        let t = read_csv(text.as_bytes(), &schema).unwrap();
        let m = encode(&t, &schema).unwrap();
        assert!(m.labels.is_none());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let schema = FeatureSchema::cohort_default();
        let t = table(&[
            "Emergency,emergency room,White,Not,F,Medicare,75,786,1,2021,0",
            "Inpatient,transfer from a hospital,Other,HispanicLatino,M,Medicaid,64.5,789,4,2020,1",
        ]);
        let m = encode(&t, &schema).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &schema.label).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("encnt_Emergency,encnt_Outpatient,encnt_Inpatient,admission_source,"));
        assert_eq!(EncodedMatrix::read_csv(buf.as_slice(), &schema).unwrap(), m);
    }

    fn arb_row() -> impl Strategy<Value = Vec<Cell>> {
        let schema = FeatureSchema::cohort_default();
        let cats: Vec<Vec<String>> = schema
            .columns
            .iter()
            .filter_map(|c| c.categories().map(<[String]>::to_vec))
            .collect();
        let categorical: Vec<_> = cats
            .into_iter()
            .map(|c| proptest::sample::select(c).prop_map(Cell::Text))
            .collect();
        let numeric = proptest::collection::vec((0i32..120).prop_map(|v| Cell::Number(v as f64)), 4);
        (categorical, numeric, 0u8..2).prop_map(|(mut c, n, label)| {
            c.extend(n);
            c.push(Cell::Number(label as f64));
            c
        })
    }

    proptest! {
        #[test]
        fn onehot_groups_sum_to_one_and_decode_inverts(rows in proptest::collection::vec(arb_row(), 1..40)) {
            let schema = FeatureSchema::cohort_default();
            let mut header: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
            header.push(schema.label.clone());
            let table = RawTable { header, rows };
            let m = encode(&table, &schema).unwrap();
            for g in m.groups.iter().filter(|g| g.kind == crate::data::GroupKind::Onehot) {
                for r in 0..m.n_rows() {
                    let s: f64 = g.columns().map(|j| m.values[[r, j]]).sum();
                    prop_assert_eq!(s, 1.0);
                }
            }
            prop_assert!(m.values.iter().all(|v| v.is_finite()));
            prop_assert_eq!(decode(&m, &schema).unwrap(), table);
        }
    }
}
