//! Binary and text file formats.
//!
//! Recording file (`.semg`): magic `SEMG`, format version u32 LE (1),
//! channel count M u32, sample count T u32, sample rate f64 LE, grid rows
//! u32, grid cols u32, channel mask as M bytes (0/1), then M×T f32 LE in
//! channel-major order.
//!
//! Template file (`.semt`): magic `SEMT`, version u32 (1), M u32, n_mus u32,
//! L u32, sample rate f64, then M×n_mus×L f32 LE ordered channel-major
//! (channel, then unit, then lag).
//!
//! Bank file (`.mubk`): magic `MUBK`, version u32 (1), sample rate f64,
//! extension K u32, template length L u32, vector count N u32, then the
//! whitening-folded separation vectors as f64 LE (N × M_used·K; the per-
//! vector dimension is inferred from the file length), then per vector:
//! MU id u32, prework CoV_amp f64, CoV_isi f64.
//!
//! Spike-train text file: header line `# sample_rate=<Hz>`, then one line
//! per firing, `<mu_id>,<sample_index>`, ordered by MU then time.
//!
//! Metrics CSV column order (fixed):
//! `online_id,reference_id,lag,mr,fdr,fnr,mdr_online_hz,mdr_reference_hz,cov_isi_online,cov_isi_reference,cdi`
//! followed by one `summary` row carrying the means.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use semg_core::eval::MatchMetrics;
use semg_core::online::{BankVector, LatencyReport, VectorBank};
use semg_core::signal::{GridShape, MuapTemplateSet, Recording, SpikeTrain};

use crate::CliError;

const RECORDING_MAGIC: &[u8; 4] = b"SEMG";
const TEMPLATE_MAGIC: &[u8; 4] = b"SEMT";
const BANK_MAGIC: &[u8; 4] = b"MUBK";
const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], path: &'a Path) -> Self {
        Reader { data, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.pos + n > self.data.len() {
            return Err(CliError::data(format!(
                "{}: truncated (needed {} bytes at offset {})",
                self.path.display(),
                n,
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CliError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

fn check_magic(r: &mut Reader, magic: &[u8; 4], kind: &str) -> Result<(), CliError> {
    let got = r.take(4)?;
    if got != magic {
        return Err(CliError::data(format!(
            "{}: not a {kind} file (bad magic {:02x?})",
            r.path.display(),
            got
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CliError::data(format!(
            "{}: unsupported {kind} version {version}",
            r.path.display()
        )));
    }
    Ok(())
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(RECORDING_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, rec.num_channels() as u32);
    put_u32(&mut buf, rec.num_samples() as u32);
    put_f64(&mut buf, rec.sample_rate);
    put_u32(&mut buf, rec.grid.rows as u32);
    put_u32(&mut buf, rec.grid.cols as u32);
    for &m in &rec.channel_mask {
        buf.push(m as u8);
    }
    for &s in rec.raw_samples() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_recording(path: &Path) -> Result<Recording, CliError> {
    let data = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut r = Reader::new(&data, path);
    check_magic(&mut r, RECORDING_MAGIC, "recording")?;
    let channels = r.u32()? as usize;
    let samples = r.u32()? as usize;
    let sample_rate = r.f64()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let mask_bytes = r.take(channels)?;
    let mask: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();
    let mut values = Vec::with_capacity(channels * samples);
    for _ in 0..channels * samples {
        values.push(r.f32()?);
    }
    Recording::new(
        values,
        channels,
        sample_rate,
        GridShape { rows, cols },
        mask,
    )
    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_trains(path: &Path, trains: &[SpikeTrain], sample_rate: f64) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# sample_rate={sample_rate}\n"));
    for t in trains {
        for &s in t.firing_samples() {
            out.push_str(&format!("{},{}\n", t.mu_id, s));
        }
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_trains(path: &Path) -> Result<(Vec<SpikeTrain>, f64), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut sample_rate = None;
    let mut per_mu: Vec<(u32, Vec<usize>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("sample_rate=") {
                sample_rate = Some(v.trim().parse::<f64>().map_err(|_| {
                    CliError::data(format!(
                        "{}:{}: bad sample rate",
                        path.display(),
                        lineno + 1
                    ))
                })?);
            }
            continue;
        }
        let mut parts = line.split(',');
        let (Some(id), Some(samp), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CliError::data(format!(
                "{}:{}: expected `<mu_id>,<sample>`",
                path.display(),
                lineno + 1
            )));
        };
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| CliError::data(format!("{}:{}: bad mu id", path.display(), lineno + 1)))?;
        let samp: usize = samp.trim().parse().map_err(|_| {
            CliError::data(format!(
                "{}:{}: bad sample index",
                path.display(),
                lineno + 1
            ))
        })?;
        match per_mu.iter_mut().find(|(mid, _)| *mid == id) {
            Some((_, v)) => v.push(samp),
            None => per_mu.push((id, vec![samp])),
        }
    }
    let sample_rate = sample_rate.ok_or_else(|| {
        CliError::data(format!(
            "{}: missing `# sample_rate=` header",
            path.display()
        ))
    })?;
    let mut trains = Vec::with_capacity(per_mu.len());
    for (id, mut times) in per_mu {
        times.sort_unstable();
        times.dedup();
        trains.push(
            SpikeTrain::new(id, times)
                .map_err(|e| CliError::data(format!("{}: MU {id}: {e}", path.display())))?,
        );
    }
    Ok((trains, sample_rate))
}

pub fn write_templates(
    path: &Path,
    templates: &MuapTemplateSet,
    sample_rate: f64,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TEMPLATE_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, templates.num_channels() as u32);
    put_u32(&mut buf, templates.num_mus() as u32);
    put_u32(&mut buf, templates.template_len() as u32);
    put_f64(&mut buf, sample_rate);
    for &id in templates.mu_ids() {
        put_u32(&mut buf, id);
    }
    for ch in 0..templates.num_channels() {
        for mu in 0..templates.num_mus() {
            for &v in templates.template(mu, ch) {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_templates(path: &Path) -> Result<(MuapTemplateSet, f64), CliError> {
    let data = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut r = Reader::new(&data, path);
    check_magic(&mut r, TEMPLATE_MAGIC, "template")?;
    let channels = r.u32()? as usize;
    let n_mus = r.u32()? as usize;
    let len = r.u32()? as usize;
    let sample_rate = r.f64()?;
    let mut ids = Vec::with_capacity(n_mus);
    for _ in 0..n_mus {
        ids.push(r.u32()?);
    }
    let mut set = MuapTemplateSet::zeros(ids, channels, len);
    for ch in 0..channels {
        for mu in 0..n_mus {
            for tau in 0..len {
                set.template_mut(mu, ch)[tau] = r.f32()? as f64;
            }
        }
    }
    Ok((set, sample_rate))
}

pub fn write_bank(path: &Path, bank: &VectorBank) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BANK_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_f64(&mut buf, bank.sample_rate);
    put_u32(&mut buf, bank.extension as u32);
    put_u32(&mut buf, bank.template_len as u32);
    put_u32(&mut buf, bank.vectors.len() as u32);
    for v in &bank.vectors {
        for &x in &v.composite {
            put_f64(&mut buf, x);
        }
    }
    for v in &bank.vectors {
        put_u32(&mut buf, v.mu_id);
        put_f64(&mut buf, v.cov_amp);
        put_f64(&mut buf, v.cov_isi);
    }
    fs::write(path, buf).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_bank(path: &Path) -> Result<VectorBank, CliError> {
    let data = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut r = Reader::new(&data, path);
    check_magic(&mut r, BANK_MAGIC, "bank")?;
    let sample_rate = r.f64()?;
    let extension = r.u32()? as usize;
    let template_len = r.u32()? as usize;
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(CliError::data(format!("{}: empty bank", path.display())));
    }
    // Vector dimension from the remaining byte count.
    let meta_bytes = n * (4 + 8 + 8);
    let rem = r.remaining();
    if rem < meta_bytes || (rem - meta_bytes) % (8 * n) != 0 {
        return Err(CliError::data(format!(
            "{}: inconsistent bank payload ({} bytes for {} vectors)",
            path.display(),
            rem,
            n
        )));
    }
    let dim = (rem - meta_bytes) / (8 * n);
    let mut composites = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(r.f64()?);
        }
        composites.push(v);
    }
    let mut vectors = Vec::with_capacity(n);
    for composite in composites {
        let mu_id = r.u32()?;
        let cov_amp = r.f64()?;
        let cov_isi = r.f64()?;
        vectors.push(BankVector {
            mu_id,
            composite,
            cov_amp,
            cov_isi,
        });
    }
    Ok(VectorBank {
        vectors,
        extension,
        template_len,
        sample_rate,
    })
}

pub fn write_metrics_csv(
    path: &Path,
    metrics: &MatchMetrics,
    cdi: Option<&[f64]>,
) -> Result<(), CliError> {
    let mut out = String::from(
        "online_id,reference_id,lag,mr,fdr,fnr,mdr_online_hz,mdr_reference_hz,cov_isi_online,cov_isi_reference,cdi\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for (i, m) in metrics.per_mu.iter().enumerate() {
        let cdi_val = cdi
            .and_then(|c| c.get(i))
            .map_or(String::new(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{},{},{},{},{}\n",
            m.online_id,
            m.reference_id,
            m.lag,
            m.mr,
            m.fdr,
            m.fnr,
            opt(m.mdr_online_hz),
            opt(m.mdr_reference_hz),
            opt(m.cov_isi_online),
            opt(m.cov_isi_reference),
            cdi_val,
        ));
    }
    out.push_str(&format!(
        "summary,,,{:.6},{:.6},{:.6},,,,,\n",
        metrics.mean_mr, metrics.mean_fdr, metrics.mean_fnr
    ));
    fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Parse the summary row back out of a metrics CSV.
pub fn read_metrics_summary(path: &Path) -> Result<(f64, f64, f64, usize), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut rows = 0usize;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.first() == Some(&"summary") {
            let parse = |s: &str| -> Result<f64, CliError> {
                s.parse()
                    .map_err(|_| CliError::data(format!("{}: bad summary row", path.display())))
            };
            return Ok((
                parse(fields[3])?,
                parse(fields[4])?,
                parse(fields[5])?,
                rows,
            ));
        }
        if !line.trim().is_empty() {
            rows += 1;
        }
    }
    Err(CliError::data(format!(
        "{}: no summary row found",
        path.display()
    )))
}

pub fn write_latency_csv(path: &Path, report: &LatencyReport) -> Result<(), CliError> {
    let mut out = String::from("window,latency_ms\n");
    for (i, l) in report.per_window_s.iter().enumerate() {
        out.push_str(&format!("{},{:.3}\n", i, l * 1000.0));
    }
    fs::write(path, out).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Write a file atomically enough for tests: through a buffered writer.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f =
        fs::File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    let mut s = String::new();
    fs::File::open(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .read_to_string(&mut s)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use semg_core::rng::Rng;

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("semg-io-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn recording_round_trip() {
        let dir = tmpdir("rec");
        let mut rng = Rng::new(1);
        let channels: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..50).map(|_| rng.normal() as f32).collect())
            .collect();
        let mut rec =
            Recording::from_channels(channels, 2000.0, GridShape { rows: 2, cols: 3 }).unwrap();
        rec.channel_mask[2] = false;
        let path = dir.join("a.semg");
        write_recording(&path, &rec).unwrap();
        let back = read_recording(&path).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn recording_rejects_bad_magic() {
        let dir = tmpdir("magic");
        let path = dir.join("bad.semg");
        fs::write(&path, b"NOPE0000000").unwrap();
        let err = read_recording(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bad.semg"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn trains_round_trip() {
        let dir = tmpdir("trains");
        let trains = vec![
            SpikeTrain::new(0, vec![5, 100, 220]).unwrap(),
            SpikeTrain::new(3, vec![17, 80]).unwrap(),
        ];
        let path = dir.join("t.txt");
        write_trains(&path, &trains, 2000.0).unwrap();
        let (back, rate) = read_trains(&path).unwrap();
        assert_eq!(rate, 2000.0);
        assert_eq!(back, trains);
    }

    #[test]
    fn templates_round_trip() {
        let dir = tmpdir("tpl");
        let mut set = MuapTemplateSet::zeros(vec![2, 5], 3, 4);
        let mut rng = Rng::new(2);
        for mu in 0..2 {
            for ch in 0..3 {
                for v in set.template_mut(mu, ch) {
                    // f32-exact values survive the round trip bit-for-bit.
                    *v = (rng.normal() as f32) as f64;
                }
            }
        }
        let path = dir.join("t.semt");
        write_templates(&path, &set, 2000.0).unwrap();
        let (back, rate) = read_templates(&path).unwrap();
        assert_eq!(rate, 2000.0);
        assert_eq!(back, set);
    }

    #[test]
    fn bank_round_trip_infers_dimension() {
        let dir = tmpdir("bank");
        let mut rng = Rng::new(3);
        let bank = VectorBank {
            vectors: (0..4)
                .map(|i| BankVector {
                    mu_id: i,
                    composite: (0..24).map(|_| rng.normal()).collect(),
                    cov_amp: 0.1 * i as f64,
                    cov_isi: 0.2,
                })
                .collect(),
            extension: 6,
            template_len: 48,
            sample_rate: 2000.0,
        };
        let path = dir.join("b.mubk");
        write_bank(&path, &bank).unwrap();
        let back = read_bank(&path).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.dim(), 24);
    }

    #[test]
    fn metrics_csv_has_fixed_columns_and_summary() {
        use semg_core::eval::{MatchMetrics, MuMetrics};
        let dir = tmpdir("metrics");
        let metrics = MatchMetrics {
            per_mu: vec![MuMetrics {
                online_id: 1,
                reference_id: 2,
                lag: 3,
                n_common: 9,
                n_online: 10,
                n_reference: 10,
                mr: 0.9,
                fdr: 0.1,
                fnr: 0.1,
                mdr_online_hz: Some(8.5),
                mdr_reference_hz: Some(8.6),
                cov_isi_online: Some(0.2),
                cov_isi_reference: None,
            }],
            mean_mr: 0.9,
            mean_fdr: 0.1,
            mean_fnr: 0.1,
            n_matched: 1,
            n_unmatched_online: 0,
            n_unmatched_reference: 0,
        };
        let path = dir.join("m.csv");
        write_metrics_csv(&path, &metrics, Some(&[4.2])).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "online_id,reference_id,lag,mr,fdr,fnr,mdr_online_hz,mdr_reference_hz,cov_isi_online,cov_isi_reference,cdi"
        );
        assert!(text.contains("summary"));
        let (mr, fdr, fnr, rows) = read_metrics_summary(&path).unwrap();
        assert_eq!(rows, 1);
        assert!((mr - 0.9).abs() < 1e-9);
        assert!((fdr - 0.1).abs() < 1e-9);
        assert!((fnr - 0.1).abs() < 1e-9);
    }
}
