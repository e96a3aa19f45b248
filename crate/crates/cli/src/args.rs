//! Value parsers for command-line flags.

use std::f64::consts::PI;
use std::path::Path;

use matfisher::io::parse_distribution;
use matfisher::FisherParams;

/// Comma- or whitespace-separated floats.
pub fn float_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

pub fn fixed_floats<const N: usize>(text: &str) -> Result<[f64; N], String> {
    let v = float_list(text)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} numbers, got {}", v.len()))
}

/// Nine row-major entries inline, or the path of a distribution file.
pub fn fisher_arg(text: &str) -> Result<FisherParams, String> {
    if let Ok(v) = fixed_floats::<9>(text) {
        return FisherParams::from_row_major(&v).map_err(|e| e.to_string());
    }
    let path = Path::new(text);
    if !path.is_file() {
        return Err(format!("{text:?} is neither 9 numbers nor a readable distribution file"));
    }
    let body = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_distribution(&body).map_err(|e| format!("{}: {e}", path.display()))
}

/// One angle: radians, `pi`, `pi/k`, `a*pi/k`, or degrees with a `deg` suffix.
pub fn angle(text: &str) -> Result<f64, String> {
    let t = text.trim().to_ascii_lowercase().replace('π', "pi");
    let value = if let Some(d) = t.strip_suffix("deg") {
        d.trim().parse::<f64>().map_err(|e| format!("{text:?}: {e}"))?.to_radians()
    } else if let Some(pos) = t.find("pi") {
        let head = t[..pos].trim().trim_end_matches('*').trim();
        let tail = t[pos + 2..].trim();
        let coef = if head.is_empty() { 1.0 } else { head.parse::<f64>().map_err(|e| format!("{text:?}: {e}"))? };
        let div = match tail.strip_prefix('/') {
            Some(d) => d.trim().parse::<f64>().map_err(|e| format!("{text:?}: {e}"))?,
            None if tail.is_empty() => 1.0,
            None => return Err(format!("{text:?}: expected pi/k")),
        };
        coef * PI / div
    } else {
        t.parse::<f64>().map_err(|e| format!("{text:?}: {e}"))?
    };
    if !(value.is_finite() && value >= 0.0) {
        return Err(format!("{text:?} is not a nonnegative angle"));
    }
    Ok(value)
}

/// `HxW`
pub fn dims(text: &str) -> Result<[usize; 2], String> {
    let (h, w) = text.split_once(['x', 'X']).ok_or_else(|| format!("{text:?}: expected HxW"))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("{text:?}: {e}"));
    let d = [parse(h)?, parse(w)?];
    if d[0] == 0 || d[1] == 0 {
        return Err(format!("{text:?}: dimensions must be positive"));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(angle("pi/6").unwrap(), PI / 6.0);
        assert_eq!(angle("PI").unwrap(), PI);
        assert_eq!(angle("2*pi/3").unwrap(), 2.0 * PI / 3.0);
        assert_eq!(angle("30deg").unwrap(), 30f64.to_radians());
        assert_eq!(angle("0.5").unwrap(), 0.5);
        assert!(angle("-1").is_err());
        assert!(angle("pi*2").is_err());
    }

    #[test]
    fn lists_and_dims() {
        assert_eq!(fixed_floats::<3>("1, 2 3").unwrap(), [1.0, 2.0, 3.0]);
        assert!(fixed_floats::<3>("1,2").is_err());
        assert_eq!(dims("32x64").unwrap(), [32, 64]);
        assert!(dims("0x4").is_err());
        assert!(dims("32").is_err());
    }

    #[test]
    fn fisher_inline() {
        let f = fisher_arg("5,0,0,0,5,0,0,0,5").unwrap();
        assert_eq!(f.to_row_major()[8], 5.0);
        assert!(fisher_arg("/no/such/file").is_err());
    }
}
