use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Nondecreasing,
    Nonincreasing,
}

/// Weighted pool-adjacent-violators: the minimizer of `sum w_t (g_t - v_t)^2`
/// over monotone sequences `g`.
pub fn pava_weighted(values: &[f64], weights: &[f64], direction: Direction) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    let sign = match direction {
        Direction::Nondecreasing => 1.0,
        Direction::Nonincreasing => -1.0,
    };

    // blocks as (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (sign * v, w, 1usize);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / tw, tw, len + cur.2);
        }
        blocks.push(cur);
    }

    let mut out = Vec::with_capacity(values.len());
    for (m, _, len) in blocks {
        out.extend(std::iter::repeat_n(sign * m, len));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_monotone() {
        assert_eq!(
            pava_weighted(&[1.0, 2.0, 3.0], &[1.0; 3], Direction::Nondecreasing).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn pools_all_three() {
        assert_eq!(
            pava_weighted(&[3.0, 1.0, 2.0], &[1.0; 3], Direction::Nondecreasing).unwrap(),
            vec![2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn weighted_nonincreasing_pair() {
        assert_eq!(
            pava_weighted(&[0.0, 4.0], &[3.0, 1.0], Direction::Nonincreasing).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pava_weighted(&[1.0], &[1.0, 2.0], Direction::Nondecreasing),
            Err(Error::DimensionMismatch(_))
        ));
        assert_eq!(
            pava_weighted(&[1.0, 2.0], &[1.0, 0.0], Direction::Nondecreasing),
            Err(Error::NonPositiveWeight { index: 1, value: 0.0 })
        );
        assert!(pava_weighted(&[], &[], Direction::Nondecreasing).unwrap().is_empty());
    }
}
