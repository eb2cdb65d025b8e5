//! Flat indexing of unordered gene pairs `(i, j)`, `i < j`, in row-major
//! upper-triangle order.

/// Number of unordered pairs over `m` items.
pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Flat index of the unordered pair `{i, j}`; `i != j`.
pub fn pair_index(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(j < m && i != j);
    i * m - i * (i + 1) / 2 + (j - i - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(m: usize, mut idx: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = m - i - 1;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
        i += 1;
    }
}

/// Iterator over all pairs in flat-index order.
pub fn all_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
}

/// Pairs whose flat index lies in `start..end`, in order.
pub fn pair_range(m: usize, start: usize, end: usize) -> impl Iterator<Item = (usize, usize)> {
    let end = end.min(pair_count(m));
    let first = if start < end { Some(pair_from_index(m, start)) } else { None };
    let mut cur = first;
    (start..end).map(move |_| {
        let (i, j) = cur.expect("range is non-empty");
        cur = if j + 1 < m {
            Some((i, j + 1))
        } else if i + 2 < m {
            Some((i + 1, i + 2))
        } else {
            None
        };
        (i, j)
    })
}
