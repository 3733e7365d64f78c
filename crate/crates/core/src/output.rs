//! On-disk formats: diagnostics and rates CSV, binary field snapshots and the
//! run manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::diagnostics::{DiagnosticsRecord, CSV_COLUMNS};
use crate::error::{Error, Result};
use crate::evolution::State;
use crate::grid::{Grid, ScalarField, SymTensorField};
use crate::tensor::SYM_PAIRS;

/// 17 significant digits.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_line(values: &[f64]) -> String {
    let mut s = values.iter().map(|x| format_value(*x)).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

pub fn diagnostics_header() -> String {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    s
}

/// Streams diagnostics rows to `diagnostics.csv`.
pub struct DiagnosticsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = DiagnosticsWriter { out: BufWriter::new(f), path: path.to_path_buf() };
        w.write_raw(&diagnostics_header())?;
        Ok(w)
    }

    fn write_raw(&mut self, s: &str) -> Result<()> {
        self.out.write_all(s.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        self.write_raw(&csv_line(&rec.values()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// One row of `rates.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub quantity: String,
    pub errors: Vec<f64>,
    pub rates: Vec<f64>,
    pub monotone: bool,
}

/// Writes `quantity,error_0..,rate_0..,monotone`.
pub fn write_rates(path: &Path, resolutions: &[usize], rows: &[RateRow]) -> Result<()> {
    let mut s = String::from("quantity");
    for n in resolutions {
        s.push_str(&format!(",error_n{n}"));
    }
    for w in resolutions.windows(2) {
        s.push_str(&format!(",rate_n{}_n{}", w[0], w[1]));
    }
    s.push_str(",monotone\n");
    for r in rows {
        s.push_str(&r.quantity);
        for x in r.errors.iter().chain(&r.rates) {
            s.push(',');
            s.push_str(&format_value(*x));
        }
        s.push_str(if r.monotone { ",1\n" } else { ",0\n" });
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Field as stored in a snapshot: real nodes in row-major `(i1, i2, i3)`
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotField {
    pub name: String,
    pub shape: [usize; 3],
    pub t: f64,
    pub data: Vec<f64>,
}

impl SnapshotField {
    pub fn from_scalar(grid: &Grid, name: &str, t: f64, f: &ScalarField) -> Self {
        SnapshotField { name: name.to_string(), shape: [grid.n1, grid.n2, grid.n3], t, data: f.real_values(grid) }
    }

    /// Real-node values into a field of `grid`; ghosts stay unfilled.
    pub fn to_scalar(&self, grid: &Grid) -> Result<ScalarField> {
        if self.shape != [grid.n1, grid.n2, grid.n3] {
            return Err(Error::config(
                "initial_data.path",
                format!("field {} has shape {:?}, grid is {}x{}x{}", self.name, self.shape, grid.n1, grid.n2, grid.n3),
            ));
        }
        let mut f = grid.scalar();
        for (n, (i1, i2, i3)) in grid.real_nodes().enumerate() {
            f.set(grid, i1, i2, i3, self.data[n]);
        }
        Ok(f)
    }
}

pub fn component_name(prefix: &str, m: usize) -> String {
    let (i, j) = SYM_PAIRS[m];
    format!("{prefix}{}{}", i + 1, j + 1)
}

pub fn write_fields(w: &mut impl Write, fields: &[SnapshotField]) -> std::io::Result<()> {
    for f in fields {
        writeln!(w, "FIELD name={} shape={},{},{} t={}", f.name, f.shape[0], f.shape[1], f.shape[2], format_value(f.t))?;
        let mut bytes = Vec::with_capacity(8 * f.data.len());
        for x in &f.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn state_fields(grid: &Grid, s: &State) -> Vec<SnapshotField> {
    let mut out = Vec::new();
    let tensors: [(&str, &SymTensorField); 3] = [("g", &s.g), ("k", &s.k), ("v", &s.v)];
    for (p, t) in tensors {
        for m in 0..6 {
            out.push(SnapshotField::from_scalar(grid, &component_name(p, m), s.t, &t.c[m]));
        }
    }
    out.push(SnapshotField::from_scalar(grid, "phi", s.t, &s.phi));
    out.push(SnapshotField::from_scalar(grid, "phi_dot", s.t, &s.phi_dot));
    out
}

pub fn write_snapshot(path: &Path, grid: &Grid, s: &State) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_fields(&mut w, &state_fields(grid, s)).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn parse_header(line: &str) -> Option<(String, [usize; 3], f64)> {
    let rest = line.strip_prefix("FIELD ")?;
    let (mut name, mut shape, mut t) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "name" => name = Some(v.to_string()),
            "shape" => {
                let d: Vec<usize> = v.split(',').map(|x| x.parse().ok()).collect::<Option<_>>()?;
                shape = Some(<[usize; 3]>::try_from(d).ok()?);
            }
            "t" => t = Some(v.parse().ok()?),
            _ => return None,
        }
    }
    Some((name?, shape?, t?))
}

pub fn read_fields(r: &mut impl BufRead) -> std::result::Result<Vec<SnapshotField>, String> {
    let mut out = Vec::new();
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Ok(out);
        }
        let line = line.trim_end_matches('\n');
        let (name, shape, t) = parse_header(line).ok_or_else(|| format!("malformed field header {line:?}"))?;
        let len = shape.iter().product::<usize>();
        let mut bytes = vec![0u8; 8 * len];
        r.read_exact(&mut bytes).map_err(|e| format!("field {name}: {e}"))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(SnapshotField { name, shape, t, data });
    }
}

pub fn read_snapshot(path: &Path) -> Result<Vec<SnapshotField>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_fields(&mut BufReader::new(f)).map_err(|m| Error::config("initial_data.path", format!("{}: {m}", path.display())))
}

/// Assembles a symmetric tensor field from the components `<prefix>ij`.
pub fn tensor_from_snapshot(grid: &Grid, fields: &[SnapshotField], prefix: &str) -> Result<SymTensorField> {
    let mut t = grid.tensor();
    for m in 0..6 {
        let name = component_name(prefix, m);
        let f = fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::config("initial_data.path", format!("snapshot has no field {name}")))?;
        t.c[m] = f.to_scalar(grid)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridSpec};

    #[test]
    fn values_have_seventeen_significant_digits() {
        assert_eq!(format_value(0.1), "1.0000000000000001e-1");
        assert_eq!(format_value(0.0), "0.0000000000000000e0");
        assert_eq!(format_value(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(csv_line(&[1.0, -2.5]), "1.0000000000000000e0,-2.5000000000000000e0\n");
    }

    #[test]
    fn header_is_pinned() {
        assert_eq!(
            diagnostics_header(),
            "t,ham_norm,mom_norm_1,mom_norm_2,mom_norm_3,trk_l2,trk_max,ricci_ij_l2,ricci_00_l2,ricci_0i_l2,\
             einstein_norm,gtilde_norm,energy_k,energy_total,c_bd,bc_hat_max,bc_knn_max,bc_kna_max,bc_kcc_max\n"
        );
    }

    #[test]
    fn snapshot_layout() {
        let f = SnapshotField { name: "phi".into(), shape: [1, 1, 2], t: 0.5, data: vec![1.0, -2.0] };
        let mut buf = Vec::new();
        write_fields(&mut buf, &[f.clone()]).unwrap();
        let header = b"FIELD name=phi shape=1,1,2 t=5.0000000000000000e-1\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..header.len() + 8], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), header.len() + 16);
        let back = read_fields(&mut &buf[..]).unwrap();
        assert_eq!(back, vec![f]);
        assert!(read_fields(&mut &b"FIELD name=x shape=2,2 t=0\n"[..]).is_err());
    }

    #[test]
    fn state_round_trip() {
        let gr = make_grid(GridSpec { n1: 4, n2: 5, n3: 6, ..GridSpec::default() }).unwrap();
        let g = gr.tensor_from_fn(|x| [[1.0 + x[0], x[1], 0.0], [x[1], 2.0, x[2]], [0.0, x[2], 3.0]], false);
        let k = gr.tensor_from_fn(|x| [[x[2], 0.1, 0.2], [0.1, 0.3, 0.4], [0.2, 0.4, x[0]]], false);
        let s = State::new(&gr, 0.25, g.clone(), k.clone(), k.clone());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.bin");
        write_snapshot(&p, &gr, &s).unwrap();
        let fields = read_snapshot(&p).unwrap();
        assert_eq!(fields.len(), 20);
        assert!(fields.iter().all(|f| f.t == 0.25 && f.shape == [4, 5, 6]));
        let g2 = tensor_from_snapshot(&gr, &fields, "g").unwrap();
        for (i1, i2, i3) in gr.real_nodes() {
            assert_eq!(g2.get_mat(&gr, i1, i2, i3), g.get_mat(&gr, i1, i2, i3));
        }
        let other = make_grid(GridSpec { n1: 4, n2: 4, n3: 6, ..GridSpec::default() }).unwrap();
        assert!(tensor_from_snapshot(&other, &fields, "k").is_err());
    }
}
