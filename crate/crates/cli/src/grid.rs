//! Numeric list arguments: `1,2,5` or inclusive ranges `start:stop:step`.

/// Parses `a,b,c` or `start:stop:step` (inclusive of `stop` when it lies on
/// the grid). Range values are rounded to 12 decimals so `0:1:0.1` yields
/// `0.3`, not `0.30000000000000004`.
pub fn parse_f64_grid(raw: &str) -> Result<Vec<f64>, String> {
    let raw = raw.trim();
    if raw.contains(':') {
        let parts: Vec<&str> = raw.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(format!("range `{raw}` must be start:stop:step"));
        };
        let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
        if step <= 0.0 {
            return Err(format!("range step must be positive, got {step}"));
        }
        if stop < start {
            return Err(format!("range stop {stop} is below start {start}"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| round12(start + i as f64 * step)).collect());
    }
    raw.split(',').map(number).collect()
}

pub fn parse_usize_list(raw: &str) -> Result<Vec<usize>, String> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("`{s}` is not a non-negative integer")))
        .collect()
}

pub fn parse_u64_list(raw: &str) -> Result<Vec<u64>, String> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("`{s}` is not a non-negative integer")))
        .collect()
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_include_the_stop() {
        assert_eq!(parse_f64_grid("0.1:1.0:0.1").unwrap().len(), 10);
        let taus = parse_f64_grid("0:1.0:0.05").unwrap();
        assert_eq!(taus.len(), 21);
        assert_eq!(taus[6], 0.3);
        assert_eq!(*taus.last().unwrap(), 1.0);
    }

    #[test]
    fn off_grid_stop_is_excluded() {
        assert_eq!(parse_f64_grid("0:1:0.3").unwrap(), vec![0.0, 0.3, 0.6, 0.9]);
    }

    #[test]
    fn lists_and_errors() {
        assert_eq!(parse_f64_grid("0.2, 0.5").unwrap(), vec![0.2, 0.5]);
        assert_eq!(parse_usize_list("1,2,5").unwrap(), vec![1, 2, 5]);
        assert!(parse_f64_grid("1:0:0.1").is_err());
        assert!(parse_f64_grid("0:1:0").is_err());
        assert!(parse_f64_grid("0:1").is_err());
        assert!(parse_f64_grid("a,b").is_err());
        assert!(parse_u64_list("1,-2").is_err());
    }
}
