//! Root-mean-square distance between two day-indexed tables over the days
//! both have observed.

use crate::error::{Error, Result};
use crate::series::DayRows;

/// Visits the positions of the days common to `a` and `b`, in day order.
pub(crate) fn for_each_common_day<A, B>(a: &A, b: &B, mut f: impl FnMut(usize, usize))
where
    A: DayRows + ?Sized,
    B: DayRows + ?Sized,
{
    let (da, db) = (a.days(), b.days());
    let (mut i, mut j) = (0, 0);
    while i < da.len() && j < db.len() {
        match da[i].cmp(&db[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                f(i, j);
                i += 1;
                j += 1;
            }
        }
    }
}

/// `sqrt( (1/|S|) Σ_{t∈S} Σ_{c∈J} (a_t[c] − b_t[c])² )` where `S` is the set
/// of common days and `J` the selected columns (all columns when `None`).
///
/// Works for coefficient sets (columns are components), raw series (columns
/// are samples) and centroid or median tables alike.
pub fn masked_distance<A, B>(a: &A, b: &B, columns: Option<&[usize]>) -> Result<f64>
where
    A: DayRows + ?Sized,
    B: DayRows + ?Sized,
{
    if a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!(
            "row widths {} and {} differ",
            a.width(),
            b.width()
        )));
    }
    if let Some(cols) = columns {
        if let Some(&c) = cols.iter().find(|&&c| c >= a.width()) {
            return Err(Error::InvalidArgument(format!(
                "column {c} out of range for width {}",
                a.width()
            )));
        }
    }
    let mut sum = 0.0;
    let mut common = 0usize;
    for_each_common_day(a, b, |i, j| {
        let (ra, rb) = (a.row(i), b.row(j));
        sum += match columns {
            Some(cols) => cols.iter().map(|&c| (ra[c] - rb[c]).powi(2)).sum::<f64>(),
            None => ra.iter().zip(rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>(),
        };
        common += 1;
    });
    if common == 0 {
        return Err(Error::NoOverlap);
    }
    Ok((sum / common as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::DayTable;
    use proptest::prelude::*;

    fn table(days: Vec<usize>, width: usize, values: Vec<f64>) -> DayTable {
        DayTable::new(days, width, values).unwrap()
    }

    #[test]
    fn single_common_day() {
        let a = table(vec![1, 2], 1, vec![1.0, 9.0]);
        let b = table(vec![2, 3], 1, vec![6.0, 0.0]);
        assert_eq!(masked_distance(&a, &b, None).unwrap(), 3.0);
        let c = table(vec![1], 1, vec![1.0]);
        let d = table(vec![1], 1, vec![4.0]);
        assert_eq!(masked_distance(&c, &d, Some(&[0])).unwrap(), 3.0);
    }

    #[test]
    fn disjoint_days_have_no_overlap() {
        let a = table(vec![1], 2, vec![0.0, 0.0]);
        let b = table(vec![2], 2, vec![0.0, 0.0]);
        assert_eq!(masked_distance(&a, &b, None).unwrap_err().code(), "no-overlap");
        assert!(masked_distance(&a, &a, Some(&[2])).is_err());
    }

    fn naive(a: &DayTable, b: &DayTable, cols: &[usize]) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0;
        for (i, da) in a.days().iter().enumerate() {
            for (j, db) in b.days().iter().enumerate() {
                if da == db {
                    n += 1;
                    for &c in cols {
                        sum += (a.row(i)[c] - b.row(j)[c]).powi(2);
                    }
                }
            }
        }
        (n > 0).then(|| (sum / n as f64).sqrt())
    }

    fn arb_table(width: usize) -> impl Strategy<Value = DayTable> {
        proptest::collection::btree_set(1usize..40, 1..20).prop_flat_map(move |days| {
            let days: Vec<usize> = days.into_iter().collect();
            let n = days.len() * width;
            proptest::collection::vec(0.0f64..2.0, n).prop_map(move |v| table(days.clone(), width, v))
        })
    }

    proptest! {
        #[test]
        fn matches_double_loop(a in arb_table(3), b in arb_table(3)) {
            let cols = [0usize, 2];
            match (masked_distance(&a, &b, Some(&cols)), naive(&a, &b, &cols)) {
                (Ok(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y)),
                (Err(_), None) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }

        #[test]
        fn symmetric_and_zero_on_self(a in arb_table(2), b in arb_table(2)) {
            prop_assert_eq!(masked_distance(&a, &a, None).unwrap(), 0.0);
            if let Ok(x) = masked_distance(&a, &b, None) {
                prop_assert!(x >= 0.0);
                prop_assert_eq!(x, masked_distance(&b, &a, None).unwrap());
            }
        }
    }
}
