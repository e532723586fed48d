/// Parses `start:step:stop` (inclusive), a comma list, or a single value.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad SNR value `{t}`"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if !(step > 0.0) || stop < start {
                return Err(format!("range `{s}` needs step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 10_000 {
                return Err(format!("range `{s}` has too many points"));
            }
            Ok((0..count).map(|k| start + step * k as f64).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(format!("cannot parse SNR list `{s}`")),
    }
}
