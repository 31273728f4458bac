use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::energy::EnergyReport;
use crate::error::{Error, Result};
use crate::geom::Rotation;
use crate::model::{AminoAcid, CdrState, ComplexInstance, ContextResidue, Design, ResidueState, Role};

/// Largest orthonormality error accepted for a stored orientation.
pub const ORIENT_TOLERANCE: f64 = 1e-6;

/// Formats with 17 significant digits, enough to round-trip any f64.
fn raw_f64(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.16e}")).expect("formatted float is valid JSON")
}

fn ser_floats<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw: Vec<Box<RawValue>> = v.iter().map(|&f| raw_f64(f)).collect();
    raw.serialize(s)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResidueRecord {
    role: Role,
    aa: usize,
    #[serde(serialize_with = "ser_floats")]
    x: [f64; 3],
    #[serde(serialize_with = "ser_floats")]
    orient: [f64; 9],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    residues: Vec<ResidueRecord>,
    cdr_span: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    energies: Option<EnergyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// A complex with its reference CDR, if one is known.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub complex: ComplexInstance,
    pub reference: Option<Design>,
}

fn residue_record(role: Role, r: &ResidueState) -> ResidueRecord {
    ResidueRecord {
        role,
        aa: r.aa.index(),
        x: r.x,
        orient: r.orient.row_major(),
    }
}

fn residue_state(rec: &ResidueRecord, k: usize) -> std::result::Result<ResidueState, String> {
    let aa = AminoAcid::new(rec.aa).ok_or_else(|| format!("residues[{k}].aa: {} is not in 0..20", rec.aa))?;
    if rec.x.iter().any(|v| !v.is_finite()) {
        return Err(format!("residues[{k}].x: non-finite coordinate"));
    }
    let o = Rotation::from_row_major(rec.orient);
    if !(o.orthonormality_error() <= ORIENT_TOLERANCE) {
        return Err(format!("residues[{k}].orient: not a rotation matrix"));
    }
    Ok(ResidueState::new(aa, rec.x, o))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(format!("serialising {}: {e}", r.id)))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses every non-blank line; `convert` turns a record into a value or a
/// message naming the offending field.
fn read_records<T>(path: &Path, mut convert: impl FnMut(Record) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        out.push(convert(rec).map_err(malformed)?);
    }
    Ok(out)
}

/// One line per complex: framework and CDR residues in chain order, then
/// the antigen.
pub fn write_dataset(path: &Path, entries: &[DatasetEntry], config_hash: Option<&str>) -> Result<()> {
    let records: Vec<Record> = entries
        .iter()
        .map(|e| {
            let c = &e.complex;
            let (l, m) = c.cdr_span();
            let fw: Vec<&ResidueState> = c.framework().collect();
            let mut residues: Vec<ResidueRecord> = fw[..l].iter().map(|r| residue_record(Role::Framework, r)).collect();
            if let Some(d) = &e.reference {
                residues.extend(d.cdr.residues.iter().map(|r| residue_record(Role::Cdr, r)));
            }
            residues.extend(fw[l..].iter().map(|r| residue_record(Role::Framework, r)));
            residues.extend(c.antigen().map(|r| residue_record(Role::Antigen, r)));
            Record {
                id: c.id.clone(),
                residues,
                cdr_span: [l, m],
                seed: e.reference.as_ref().map(|d| d.seed),
                energies: None,
                config_hash: config_hash.map(str::to_string),
            }
        })
        .collect();
    write_records(path, &records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetEntry>> {
    read_records(path, |rec| {
        let [l, m] = rec.cdr_span;
        let mut framework = Vec::new();
        let mut antigen = Vec::new();
        let mut cdr = Vec::new();
        for (k, r) in rec.residues.iter().enumerate() {
            let state = residue_state(r, k)?;
            match r.role {
                Role::Framework => {
                    if !antigen.is_empty() {
                        return Err(format!("residues[{k}].role: framework residue after the antigen"));
                    }
                    framework.push(ContextResidue { role: Role::Framework, state });
                }
                Role::Antigen => antigen.push(ContextResidue { role: Role::Antigen, state }),
                Role::Cdr => cdr.push(state),
            }
        }
        if !cdr.is_empty() && cdr.len() != m {
            return Err(format!("cdr_span: length {m} but {} CDR residues", cdr.len()));
        }
        framework.extend(antigen);
        let complex = ComplexInstance::new(rec.id.clone(), framework, (l, m)).map_err(|e| format!("cdr_span: {e}"))?;
        let reference = (!cdr.is_empty()).then(|| {
            Design::new(rec.id.clone(), CdrState::new(cdr), rec.seed.unwrap_or(0)).with_energies(&complex)
        });
        Ok(DatasetEntry { complex, reference })
    })
}

/// One line per design, CDR residues only, with its seed and energies.
pub fn write_designs(path: &Path, designs: &[Design], spans: &HashMap<String, (usize, usize)>, config_hash: Option<&str>) -> Result<()> {
    let records = designs
        .iter()
        .map(|d| {
            let &(l, m) = spans
                .get(&d.complex_id)
                .ok_or_else(|| Error::Data(format!("design for unknown complex {}", d.complex_id)))?;
            Ok(Record {
                id: d.complex_id.clone(),
                residues: d.cdr.residues.iter().map(|r| residue_record(Role::Cdr, r)).collect(),
                cdr_span: [l, m],
                seed: Some(d.seed),
                energies: d.energies.clone(),
                config_hash: config_hash.map(str::to_string),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_records(path, &records)
}

pub fn read_designs(path: &Path) -> Result<Vec<Design>> {
    read_records(path, |rec| {
        let mut cdr = Vec::with_capacity(rec.residues.len());
        for (k, r) in rec.residues.iter().enumerate() {
            if r.role != Role::Cdr {
                return Err(format!("residues[{k}].role: design files hold CDR residues only"));
            }
            cdr.push(residue_state(r, k)?);
        }
        if cdr.len() != rec.cdr_span[1] {
            return Err(format!("cdr_span: length {} but {} residues", rec.cdr_span[1], cdr.len()));
        }
        let mut d = Design::new(rec.id, CdrState::new(cdr), rec.seed.unwrap_or(0));
        d.energies = rec.energies;
        Ok(d)
    })
}
