/// 17 significant digits in scientific notation: round-trips every double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV writer with LF line endings and a '.' decimal separator.
pub fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}
