//! Observation records, per-replicate grouping, and the CSV format
//! `replicate,field,x,y,t,value[,cov_*]`.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub replicate: i64,
    /// 1 or 2.
    pub field: u8,
    pub x: f64,
    pub y: f64,
    /// Day of year, when known.
    pub t: Option<i64>,
    pub value: f64,
    pub covariates: Vec<f64>,
}

/// Observations of one field in one replicate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldData {
    pub locs: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub t: Vec<Option<i64>>,
    /// One row per observation.
    pub covariates: Vec<Vec<f64>>,
    /// Position of each observation in the owning [`ObservationSet`].
    pub source: Vec<usize>,
}

impl FieldData {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, loc: [f64; 2], value: f64) {
        self.locs.push(loc);
        self.values.push(value);
        self.t.push(None);
        self.covariates.push(Vec::new());
        self.source.push(usize::MAX);
    }
}

/// Both fields of one independent replicate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Replicate {
    pub id: i64,
    pub fields: [FieldData; 2],
}

impl Replicate {
    /// Stacked values `(y₁, y₂)`.
    pub fn stacked_values(&self) -> Vec<f64> {
        self.fields[0].values.iter().chain(&self.fields[1].values).copied().collect()
    }

    pub fn n_obs(&self) -> usize {
        self.fields[0].len() + self.fields[1].len()
    }
}

/// A flat list of observation records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationSet {
    pub records: Vec<Observation>,
    pub covariate_names: Vec<String>,
}

impl ObservationSet {
    pub fn new(records: Vec<Observation>, covariate_names: Vec<String>) -> Self {
        Self {
            records,
            covariate_names,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Builds a set from grouped replicates (covariates and days are kept).
    pub fn from_replicates(reps: &[Replicate], covariate_names: Vec<String>) -> Self {
        let mut records = Vec::new();
        for r in reps {
            for (f, data) in r.fields.iter().enumerate() {
                for i in 0..data.len() {
                    records.push(Observation {
                        replicate: r.id,
                        field: f as u8 + 1,
                        x: data.locs[i][0],
                        y: data.locs[i][1],
                        t: data.t.get(i).copied().flatten(),
                        value: data.values[i],
                        covariates: data.covariates.get(i).cloned().unwrap_or_default(),
                    });
                }
            }
        }
        Self {
            records,
            covariate_names,
        }
    }

    /// Groups records by replicate id (ascending), keeping record order within fields.
    pub fn replicates(&self) -> Vec<Replicate> {
        let mut map: BTreeMap<i64, Replicate> = BTreeMap::new();
        for (pos, r) in self.records.iter().enumerate() {
            let rep = map.entry(r.replicate).or_insert_with(|| Replicate {
                id: r.replicate,
                ..Default::default()
            });
            let f = &mut rep.fields[usize::from(r.field - 1)];
            f.locs.push([r.x, r.y]);
            f.values.push(r.value);
            f.t.push(r.t);
            f.covariates.push(r.covariates.clone());
            f.source.push(pos);
        }
        map.into_values().collect()
    }

    /// Observation counts per field over all replicates.
    pub fn field_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for r in &self.records {
            c[usize::from(r.field - 1)] += 1;
        }
        c
    }

    /// Keeps the records for which `keep` is true.
    pub fn filter(&self, keep: impl Fn(&Observation) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Parses the CSV format; `name` labels diagnostics.
    pub fn from_reader<R: Read>(reader: R, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let perr = |line: usize, message: String| Error::Parse {
            file: name.to_string(),
            line,
            message,
        };
        let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
        let col = |h: &str| headers.iter().position(|c| c == h);
        let required = ["replicate", "field", "x", "y", "value"];
        let mut idx = [0usize; 5];
        for (k, h) in required.iter().enumerate() {
            idx[k] = col(h).ok_or_else(|| perr(1, format!("missing column `{h}`")))?;
        }
        let t_col = col("t");
        let cov_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("cov_"))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let mut records = Vec::new();
        for (k, row) in rdr.records().enumerate() {
            let line = k + 2;
            let row = row.map_err(|e| perr(line, e.to_string()))?;
            let get = |i: usize| row.get(i).unwrap_or("");
            let num = |i: usize, what: &str| -> Result<f64> {
                get(i)
                    .parse::<f64>()
                    .map_err(|_| perr(line, format!("invalid {what} `{}`", get(i))))
            };
            let replicate = get(idx[0])
                .parse::<i64>()
                .map_err(|_| perr(line, format!("invalid replicate `{}`", get(idx[0]))))?;
            let field = match get(idx[1]) {
                "1" => 1,
                "2" => 2,
                other => return Err(perr(line, format!("field must be 1 or 2, got `{other}`"))),
            };
            let t = match t_col.map(get) {
                None | Some("") => None,
                Some(s) => Some(s.parse::<i64>().map_err(|_| perr(line, format!("invalid day `{s}`")))?),
            };
            let value = num(idx[4], "value")?;
            let (x, y) = (num(idx[2], "x")?, num(idx[3], "y")?);
            if !value.is_finite() || !x.is_finite() || !y.is_finite() {
                return Err(perr(line, "non-finite number".into()));
            }
            let covariates = cov_cols
                .iter()
                .map(|(i, h)| num(*i, h))
                .collect::<Result<Vec<_>>>()?;
            records.push(Observation {
                replicate,
                field,
                x,
                y,
                t,
                value,
                covariates,
            });
        }
        Ok(Self {
            records,
            covariate_names: cov_cols.into_iter().map(|(_, h)| h).collect(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["replicate".to_string(), "field".into(), "x".into(), "y".into(), "t".into(), "value".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.replicate.to_string(),
                r.field.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.t.map(|t| t.to_string()).unwrap_or_default(),
                r.value.to_string(),
            ];
            row.extend(r.covariates.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
