use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};

use super::{LoggingTask, StorageError, TimestampPrecision};
use crate::drivers::Reading;

/// `<base>/data/<sensor_id>/<YYYY-MM-DD>.csv`. Pure: touches no files.
pub fn resolve_output_path(base: &Path, sensor_id: &str, date: NaiveDate) -> PathBuf {
    base.join("data")
        .join(sensor_id)
        .join(format!("{}.csv", date.format("%Y-%m-%d")))
}

/// Path used when the plain daily file already holds a different column set.
fn suffixed_path(base: &Path, sensor_id: &str, date: NaiveDate, n: u32) -> PathBuf {
    if n <= 1 {
        return resolve_output_path(base, sensor_id, date);
    }
    base.join("data")
        .join(sensor_id)
        .join(format!("{}_{n}.csv", date.format("%Y-%m-%d")))
}

pub fn csv_header(columns: &[String]) -> String {
    let mut h = String::from("timestamp");
    for c in columns {
        h.push(',');
        h.push_str(c);
    }
    h.push_str(",status,error");
    h
}

pub fn truncate_timestamp(ts: DateTime<Utc>, precision: TimestampPrecision) -> DateTime<Utc> {
    match precision {
        TimestampPrecision::Seconds => DateTime::from_timestamp(ts.timestamp(), 0),
        TimestampPrecision::Millis => DateTime::from_timestamp_millis(ts.timestamp_millis()),
    }
    .expect("timestamp in range")
}

pub fn format_timestamp(ts: DateTime<Utc>, precision: TimestampPrecision) -> String {
    let format = match precision {
        TimestampPrecision::Seconds => SecondsFormat::Secs,
        TimestampPrecision::Millis => SecondsFormat::Millis,
    };
    truncate_timestamp(ts, precision).to_rfc3339_opts(format, true)
}

/// Shortest round-trip decimal, always with a fractional part for integers.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            ',' => ';',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect()
}

fn format_row(reading: &Reading, columns: &[String], precision: TimestampPrecision) -> String {
    let mut row = format_timestamp(reading.timestamp, precision);
    for c in columns {
        row.push(',');
        if let Some(m) = reading.values.get(c) {
            row.push_str(&format_value(m.value));
        }
    }
    row.push(',');
    row.push_str(reading.status.as_str());
    row.push(',');
    if let Some(e) = &reading.error_detail {
        row.push_str(&sanitize(e));
    }
    row.push('\n');
    row
}

/// State of a CSV file after the startup recovery scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredFile {
    pub header: Option<String>,
    pub last_timestamp: Option<DateTime<Utc>>,
    pub len: u64,
    /// Bytes of a torn final line that were cut off.
    pub truncated: u64,
}

/// Cuts a trailing partial line (left by a crash mid-write) and reports the
/// header and last timestamp. A missing file reads as empty.
pub fn recover_file(path: &Path) -> io::Result<RecoveredFile> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Ok(RecoveredFile {
                header: None,
                last_timestamp: None,
                len: 0,
                truncated: 0,
            })
        }
        Err(e) => return Err(e),
    };
    let mut content = Vec::new();
    file.read_to_end(&mut content)?;
    let keep = content.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let truncated = (content.len() - keep) as u64;
    if truncated > 0 {
        file.set_len(keep as u64)?;
        file.sync_data()?;
        content.truncate(keep);
    }
    let text = String::from_utf8_lossy(&content);
    let mut lines = text.lines();
    let header = lines.next().map(str::to_string);
    let last_timestamp = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .filter_map(|t| DateTime::parse_from_rfc3339(t).ok())
        .map(|t| t.with_timezone(&Utc))
        .max();
    Ok(RecoveredFile {
        header,
        last_timestamp,
        len: keep as u64,
        truncated,
    })
}

struct OpenFile {
    date: NaiveDate,
    path: PathBuf,
    file: File,
    len: u64,
    last_timestamp: Option<DateTime<Utc>>,
}

/// Appends readings of one sensor to its daily CSV files.
pub struct CsvSink {
    base: PathBuf,
    sensor_id: String,
    columns: Vec<String>,
    header: String,
    precision: TimestampPrecision,
    sync: bool,
    current: Option<OpenFile>,
}

impl CsvSink {
    /// `columns` are the measurement names, already in column order.
    pub fn new(task: &LoggingTask, columns: Vec<String>) -> Self {
        Self {
            base: task.output_dir.clone(),
            sensor_id: task.sensor_id.clone(),
            header: csv_header(&columns),
            columns,
            precision: task.timestamp_precision,
            sync: false,
            current: None,
        }
    }

    /// Also fsync after each row, for power-loss durability on real hosts.
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    pub fn current_path(&self) -> Option<&Path> {
        self.current.as_ref().map(|c| c.path.as_path())
    }

    fn open_for(&mut self, date: NaiveDate) -> Result<(), StorageError> {
        let dir = self.base.join("data").join(&self.sensor_id);
        fs::create_dir_all(&dir).map_err(|e| StorageError::from_io(&dir, e))?;
        for n in 1.. {
            let path = suffixed_path(&self.base, &self.sensor_id, date, n);
            let recovered = recover_file(&path).map_err(|e| StorageError::from_io(&path, e))?;
            if recovered.truncated > 0 {
                tracing::warn!(path = %path.display(), bytes = recovered.truncated, "removed partial trailing line");
            }
            match recovered.header.as_deref() {
                Some(h) if h != self.header => continue,
                _ => {}
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| StorageError::from_io(&path, e))?;
            let mut len = recovered.len;
            if recovered.header.is_none() {
                let line = format!("{}\n", self.header);
                write_line(&mut file, &path, len, line.as_bytes(), self.sync)?;
                len += line.len() as u64;
            }
            self.current = Some(OpenFile {
                date,
                path,
                file,
                len,
                last_timestamp: recovered.last_timestamp,
            });
            return Ok(());
        }
        unreachable!()
    }

    /// Writes one row for `reading`, creating the day's file (with header) if
    /// needed. Returns 0 without writing when the timestamp is not after the
    /// file's last row, so timestamps stay strictly increasing across restarts.
    pub fn append(&mut self, reading: &Reading) -> Result<usize, StorageError> {
        let ts = truncate_timestamp(reading.timestamp, self.precision);
        let date = ts.date_naive();
        if self.current.as_ref().map(|c| c.date) != Some(date) {
            self.current = None;
            self.open_for(date)?;
        }
        let row = format_row(reading, &self.columns, self.precision);
        let cur = self.current.as_mut().expect("file opened above");
        if cur.last_timestamp.is_some_and(|last| ts <= last) {
            return Ok(0);
        }
        write_line(&mut cur.file, &cur.path, cur.len, row.as_bytes(), self.sync)?;
        cur.len += row.len() as u64;
        cur.last_timestamp = Some(ts);
        Ok(1)
    }
}

/// Writes a complete line; on failure the file is cut back to `len`.
fn write_line(file: &mut File, path: &Path, len: u64, line: &[u8], sync: bool) -> Result<(), StorageError> {
    let result = file.write_all(line).and_then(|_| file.flush()).and_then(|_| {
        if sync {
            file.sync_data()
        } else {
            Ok(())
        }
    });
    result.map_err(|e| {
        let _ = file.set_len(len);
        StorageError::from_io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{Measurement, ReadingStatus};
    use crate::modbus::SlaveAddress;
    use crate::transport::{LineSettings, RetryPolicy, SerialConfig};
    use chrono::TimeZone;
    use std::collections::BTreeMap;
    use std::time::Duration;

    fn task(base: &Path) -> LoggingTask {
        LoggingTask {
            sensor_id: "co2_cave_entrance".into(),
            sensor_type: "gmp252".into(),
            slave: SlaveAddress::new(1).unwrap(),
            serial: SerialConfig::new("/dev/ttyAMA0", LineSettings::default()),
            interval: Duration::from_secs(60),
            tags: BTreeMap::new(),
            output_dir: base.to_path_buf(),
            retry: RetryPolicy::default(),
            timestamp_precision: TimestampPrecision::Seconds,
            registers: BTreeMap::new(),
        }
    }

    fn reading(secs: i64, co2: Option<f64>) -> Reading {
        let timestamp = Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(secs);
        match co2 {
            Some(v) => Reading {
                sensor_id: "co2_cave_entrance".into(),
                timestamp,
                values: [("co2".to_string(), Measurement { value: v, unit: "ppm".into() })].into(),
                status: ReadingStatus::Ok,
                error_detail: None,
            },
            None => Reading::failed("co2_cave_entrance", timestamp, "co2: no response, timeout"),
        }
    }

    #[test]
    fn output_path_layout() {
        let d = NaiveDate::from_ymd_opt(2025, 3, 1).unwrap();
        let p = resolve_output_path(Path::new("sensor_logging"), "co2_cave_entrance", d);
        assert_eq!(p, PathBuf::from("sensor_logging/data/co2_cave_entrance/2025-03-01.csv"));
        assert_eq!(p, resolve_output_path(Path::new("sensor_logging"), "co2_cave_entrance", d));
        let next = resolve_output_path(Path::new("sensor_logging"), "co2_cave_entrance", d.succ_opt().unwrap());
        assert_eq!(next.parent(), p.parent());
        assert_eq!(next.file_name().unwrap(), "2025-03-02.csv");
    }

    #[test]
    fn header_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        assert_eq!(sink.append(&reading(0, Some(412.5))).unwrap(), 1);
        let path = sink.current_path().unwrap().to_path_buf();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "timestamp,co2,status,error\n2025-03-01T00:00:00Z,412.5,ok,\n"
        );
        assert_eq!(sink.append(&reading(60, Some(25.0))).unwrap(), 1);
        assert_eq!(sink.append(&reading(120, None)).unwrap(), 1);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("timestamp,").count(), 1);
        assert!(text.ends_with("2025-03-01T00:01:00Z,25.0,ok,\n2025-03-01T00:02:00Z,,failed,co2: no response; timeout\n"));
    }

    #[test]
    fn duplicate_timestamps_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        assert_eq!(sink.append(&reading(10, Some(1.0))).unwrap(), 1);
        assert_eq!(sink.append(&reading(10, Some(1.0))).unwrap(), 0);
        assert_eq!(sink.append(&reading(5, Some(1.0))).unwrap(), 0);
        // a fresh sink (restart) sees the same last timestamp
        let mut again = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        assert_eq!(again.append(&reading(10, Some(1.0))).unwrap(), 0);
        assert_eq!(again.append(&reading(11, Some(1.0))).unwrap(), 1);
    }

    #[test]
    fn rotates_daily() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        sink.append(&reading(86399, Some(1.0))).unwrap();
        sink.append(&reading(86400, Some(2.0))).unwrap();
        let base = dir.path().join("data/co2_cave_entrance");
        assert_eq!(fs::read_to_string(base.join("2025-03-01.csv")).unwrap().lines().count(), 2);
        assert_eq!(fs::read_to_string(base.join("2025-03-02.csv")).unwrap().lines().count(), 2);
    }

    #[test]
    fn partial_line_is_truncated_on_restart() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        sink.append(&reading(0, Some(1.0))).unwrap();
        let path = sink.current_path().unwrap().to_path_buf();
        drop(sink);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"2025-03-01T00:01:00Z,4").unwrap();
        drop(f);
        let rec = recover_file(&path).unwrap();
        assert_eq!(rec.truncated, 22);
        assert_eq!(rec.last_timestamp, Some(reading(0, None).timestamp));
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        sink.append(&reading(60, Some(2.0))).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "timestamp,co2,status,error\n2025-03-01T00:00:00Z,1.0,ok,\n2025-03-01T00:01:00Z,2.0,ok,\n"
        );
    }

    #[test]
    fn torn_header_is_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = resolve_output_path(dir.path(), "co2_cave_entrance", NaiveDate::from_ymd_opt(2025, 3, 1).unwrap());
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "timesta").unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        sink.append(&reading(0, Some(1.0))).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "timestamp,co2,status,error\n2025-03-01T00:00:00Z,1.0,ok,\n");
    }

    #[test]
    fn schema_change_uses_suffixed_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        sink.append(&reading(0, Some(1.0))).unwrap();
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into(), "temperature".into()]);
        sink.append(&reading(60, Some(1.0))).unwrap();
        assert!(sink.current_path().unwrap().ends_with("2025-03-01_2.csv"));
        let text = fs::read_to_string(sink.current_path().unwrap()).unwrap();
        assert!(text.starts_with("timestamp,co2,temperature,status,error\n"));
        assert!(text.ends_with(",1.0,,ok,\n"));
    }

    #[test]
    fn millisecond_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = task(dir.path());
        t.timestamp_precision = TimestampPrecision::Millis;
        let mut sink = CsvSink::new(&t, vec!["co2".into()]);
        let mut r = reading(0, Some(1.0));
        r.timestamp += chrono::Duration::microseconds(1500);
        sink.append(&r).unwrap();
        let text = fs::read_to_string(sink.current_path().unwrap()).unwrap();
        assert!(text.contains("2025-03-01T00:00:00.001Z,1.0"));
    }

    #[cfg(unix)]
    #[test]
    fn permission_denied_leaves_no_file() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data/co2_cave_entrance");
        fs::create_dir_all(&data).unwrap();
        fs::set_permissions(&data, fs::Permissions::from_mode(0o500)).unwrap();
        // root ignores directory permissions
        if fs::write(data.join("probe"), "x").is_ok() {
            return;
        }
        let mut sink = CsvSink::new(&task(dir.path()), vec!["co2".into()]);
        assert!(matches!(sink.append(&reading(0, Some(1.0))), Err(StorageError::PermissionDenied { .. })));
        assert_eq!(fs::read_dir(&data).unwrap().count(), 0);
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(25.0), "25.0");
        assert_eq!(format_value(-0.1), "-0.1");
        assert_eq!(format_value(412.53), "412.53");
        assert_eq!(format_value(0.0), "0.0");
    }
}
