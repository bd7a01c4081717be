use crate::error::{Error, Result};

/// Size of the discrete composition space: `max_order * sum_{i=1..n} C(n, i) * i!`,
/// i.e. the number of ordered non-empty subsets of `n` operators times the
/// order-count factor.
pub fn count_space(num_ops: u32, max_order: u32) -> Result<u64> {
    if num_ops == 0 {
        return Err(Error::invalid("num_ops must be >= 1"));
    }
    if !(1..=2).contains(&max_order) {
        return Err(Error::invalid(format!("max_order {max_order} not in {{1, 2}}")));
    }
    let overflow = || Error::Overflow(format!("count_space({num_ops}, {max_order}) exceeds 64 bits"));
    // C(n, i) * i! = n! / (n - i)! = n (n - 1) ... (n - i + 1)
    let mut total: u64 = 0;
    let mut falling: u64 = 1;
    for i in 0..num_ops {
        falling = falling.checked_mul(u64::from(num_ops - i)).ok_or_else(overflow)?;
        total = total.checked_add(falling).ok_or_else(overflow)?;
    }
    total.checked_mul(u64::from(max_order)).ok_or_else(overflow)
}
