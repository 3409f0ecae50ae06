//! Fixed-precision CSV output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};

/// Decimal rendering with 9 significant digits, e.g. `0.366380000`,
/// `1.00000000`, `12345.6789`. Never uses exponent notation.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0.00000000".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let body = if exp >= 8 {
        digits + &"0".repeat((exp - 8) as usize)
    } else if exp >= 0 {
        let p = (exp + 1) as usize;
        format!("{}.{}", &digits[..p], &digits[p..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

/// Empty field for `None`.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
    width: usize,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = Self::sectioned(path)?;
        out.header(header)?;
        Ok(out)
    }

    /// A file holding several tables, each introduced by a `# name` line
    /// and its own header.
    pub fn sectioned(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let inner = csv::WriterBuilder::new()
            .flexible(true)
            .from_writer(BufWriter::new(file));
        Ok(CsvOut { inner, width: 0 })
    }

    pub fn section(&mut self, name: &str) -> Result<()> {
        self.inner.write_record([format!("# {name}")])?;
        Ok(())
    }

    pub fn header(&mut self, header: &[&str]) -> Result<()> {
        self.inner.write_record(header)?;
        self.width = header.len();
        Ok(())
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let rec: csv::ByteRecord = fields.into_iter().collect();
        debug_assert_eq!(rec.len(), self.width, "row width");
        self.inner.write_byte_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
