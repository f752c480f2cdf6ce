//! CSV emission. Reals use 17 significant digits so reruns are byte-stable.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

/// `x` in scientific notation with 17 significant digits; `inf`/`NaN` as is.
pub fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// A CSV writer over `path`, or standard output.
pub fn writer(path: Option<&Path>) -> io::Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    };
    Ok(csv::Writer::from_writer(sink))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_formatting() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(0.0), "0.0000000000000000e0");
        assert_eq!(real(f64::INFINITY), "inf");
        assert_eq!(opt_real(None), "");
        let x = 1.0 / 3.0;
        assert_eq!(real(x).parse::<f64>().unwrap(), x);
    }
}
