//! Line-delimited JSON helpers with file+line diagnostics.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads every non-blank line of `path` as a `T`. The first bad line aborts with its line number.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_numbered(path)?.into_iter().map(|(_, v)| v).collect())
}

/// Like [`read`], with each value paired with its 1-based line number.
pub fn read_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        let value = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, value));
        Ok(())
    })?;
    Ok(out)
}

/// Records that parsed, plus `(line, message)` for each line that did not.
pub type Lenient<T> = (Vec<T>, Vec<(usize, String)>);

/// Like [`read`], but bad lines are skipped and reported as `(line, message)`.
pub fn read_lenient<T: DeserializeOwned>(path: &Path) -> Result<Lenient<T>> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for_each_line(path, |line_no, line| {
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => bad.push((line_no, e.to_string())),
        }
        Ok(())
    })?;
    Ok((out, bad))
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

/// Writes one compact JSON object per LF-terminated line. The file is replaced atomically.
pub fn write<'a, T, I>(path: &Path, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = tmp_path(path);
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut w, item).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut body = serde_json::to_vec_pretty(value).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    body.push(b'\n');
    let tmp = tmp_path(path);
    fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&body).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
