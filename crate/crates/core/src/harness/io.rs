//! Binary trial files and per-trial CSV output.
//!
//! Trial file layout, all integers little-endian:
//!
//! ```text
//! "TTRL" | u16 version=1 | u32 n_trials | u32 ch | u32 ts | u8 has_labels
//! f32 samples, trial-major / channel-major / time-minor
//! i32 labels (n_trials of them, only if has_labels = 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::alignment::{Trial, TrialBatch};
use crate::engine::TrialRecord;
use crate::error::{Error, Result};

pub const TRIAL_MAGIC: &[u8; 4] = b"TTRL";
pub const TRIAL_VERSION: u16 = 1;

pub fn write_trials<W: Write>(batch: &TrialBatch, mut w: W) -> Result<()> {
    let (ch, ts) = batch.dims().unwrap_or((0, 0));
    let count = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
    };
    w.write_all(TRIAL_MAGIC)?;
    w.write_all(&TRIAL_VERSION.to_le_bytes())?;
    w.write_all(&count(batch.len(), "trial count")?.to_le_bytes())?;
    w.write_all(&count(ch, "channel count")?.to_le_bytes())?;
    w.write_all(&count(ts, "sample count")?.to_le_bytes())?;
    w.write_all(&[u8::from(batch.labels.is_some())])?;
    for t in &batch.trials {
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    if let Some(labels) = &batch.labels {
        for &y in labels {
            let y = i32::try_from(y).map_err(|_| Error::Format(format!("label {y} exceeds i32")))?;
            w.write_all(&y.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated trial file: {e}")))?;
    Ok(buf)
}

pub fn read_trials<R: Read>(mut r: R, subject_id: &str) -> Result<TrialBatch> {
    if &read_array::<4, _>(&mut r)? != TRIAL_MAGIC {
        return Err(Error::Format("not a trial file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != TRIAL_VERSION {
        return Err(Error::Format(format!("unsupported trial file version {version}")));
    }
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let ch = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let ts = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let has_labels = match read_array::<1, _>(&mut r)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad label flag {other}"))),
    };
    let mut trials = Vec::with_capacity(n);
    let mut raw = vec![0u8; ch * ts * 4];
    for _ in 0..n {
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated trial data: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        trials.push(Trial::new(ch, ts, data)?);
    }
    let labels = if has_labels {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let y = i32::from_le_bytes(read_array(&mut r)?);
            out.push(usize::try_from(y).map_err(|_| Error::Label(format!("negative label {y}")))?);
        }
        Some(out)
    } else {
        None
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after trial data".into()));
    }
    TrialBatch::new(subject_id, trials, labels)
}

pub fn save_trials(batch: &TrialBatch, path: impl AsRef<Path>) -> Result<()> {
    write_trials(batch, BufWriter::new(File::create(path)?))
}

/// Loads a trial file; the subject id is the file stem.
pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialBatch> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_trials(BufReader::new(File::open(path)?), &id)
}

/// Per-trial CSV: `index,label,truth,score_0..score_{K-1}` plus timing
/// columns when `timing` is set.
pub fn write_trial_records<W: Write>(
    records: &[TrialRecord],
    truth: Option<&[usize]>,
    timing: bool,
    w: W,
) -> Result<()> {
    let k = records.first().map_or(0, |r| r.scores.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["index".to_string(), "label".into(), "truth".into()];
    header.extend((0..k).map(|j| format!("score_{j}")));
    if timing {
        header.extend(["pre_ms".to_string(), "post_ms".into()]);
    }
    out.write_record(&header)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![
            r.index.to_string(),
            r.label.to_string(),
            truth.and_then(|t| t.get(i)).map_or_else(String::new, |y| y.to_string()),
        ];
        row.extend(r.scores.iter().map(|s| format!("{s:.6}")));
        if timing {
            row.push(format!("{:.3}", r.timing.pre_ms()));
            row.push(format!("{:.3}", r.timing.post_ms()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(labels: bool) -> TrialBatch {
        let trials = (0..3)
            .map(|i| Trial::new(2, 3, (0..6).map(|j| (i * 6 + j) as f64 * 0.5).collect()).unwrap())
            .collect();
        TrialBatch::new("x", trials, labels.then(|| vec![0, 1, 1])).unwrap()
    }

    #[test]
    fn round_trip_with_and_without_labels() {
        for labels in [true, false] {
            let b = batch(labels);
            let mut buf = Vec::new();
            write_trials(&b, &mut buf).unwrap();
            assert_eq!(buf.len(), 4 + 2 + 12 + 1 + 3 * 6 * 4 + if labels { 12 } else { 0 });
            let back = read_trials(buf.as_slice(), "x").unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let mut buf = Vec::new();
        write_trials(&batch(true), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"TTRL");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[3, 0, 0, 0]);
        assert_eq!(&buf[10..14], &[2, 0, 0, 0]);
        assert_eq!(&buf[14..18], &[3, 0, 0, 0]);
        assert_eq!(buf[18], 1);
        assert_eq!(&buf[19..23], &0.0f32.to_le_bytes());
        assert_eq!(&buf[23..27], &0.5f32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_trials(&batch(true), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_trials(bad.as_slice(), "x"), Err(Error::Format(_))));
        assert!(matches!(read_trials(&buf[..buf.len() - 1], "x"), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_trials(long.as_slice(), "x"), Err(Error::Format(_))));
        let mut neg = buf;
        let n = neg.len();
        neg[n - 4..].copy_from_slice(&(-1i32).to_le_bytes());
        assert!(matches!(read_trials(neg.as_slice(), "x"), Err(Error::Label(_))));
    }
}
